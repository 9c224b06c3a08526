//! Orlicz-Besov pair energies and Luxemburg seminorms, fractional Sobolev
//! seminorms, mean oscillation and the Poincare and exponential
//! integrability checks.
//!
//! The double integral is a midpoint sum over ordered cell pairs with
//! weight `h^4 / |x_c - y_c|^kappa`. Self pairs are skipped and touching
//! pairs are refined by a 4x4 split of each cell. Large grids use a
//! quadtree that merges well separated node pairs whose values are nearly
//! constant; small ones sum every pair.
//!
//! The Luxemburg bisection does not revisit pairs. Each pair's increment
//! is binned (256 bins per octave, keeping the weight and the weighted
//! increment per bin), and `I(alpha)` is evaluated from the bins.

use std::collections::HashMap;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::DomainGrid;
use crate::numeric::KahanSum;
use crate::young::YoungFunction;

/// `omega_2`, the length of the unit circle.
pub const OMEGA_N: f64 = 2.0 * std::f64::consts::PI;

/// Kernel exponent `2n` of the Besov energy in the plane.
pub const BESOV_KAPPA: f64 = 4.0;

/// Sub-cells per side used for touching cell pairs.
const TOUCH_SPLIT: usize = 4;

/// Relative bracket width of the Luxemburg bisection.
pub const LUX_RTOL: f64 = 1e-4;

/// Which cells carry values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Support {
    /// Domain cells only.
    Omega,
    /// Every cell of the box.
    Box,
}

/// Cell values over a stated support. Off-support entries are zero and
/// never read.
#[derive(Debug, Clone)]
pub struct GridFunction {
    values: Vec<f64>,
    support: Support,
}

impl GridFunction {
    /// Samples `f` at the centres of the supported cells.
    pub fn from_fn<F: Fn(f64, f64) -> f64 + Sync>(grid: &DomainGrid, support: Support, f: F) -> Self {
        let values = (0..grid.cells())
            .into_par_iter()
            .map(|k| {
                if support == Support::Box || grid.indicator()[k] {
                    let (x, y) = grid.center_of(k);
                    f(x, y)
                } else {
                    0.0
                }
            })
            .collect();
        Self { values, support }
    }

    pub fn from_values(grid: &DomainGrid, support: Support, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.cells() {
            return Err(Error::InvalidInput(format!(
                "{} values for a grid of {} cells",
                values.len(),
                grid.cells()
            )));
        }
        let ind = grid.indicator();
        for (k, v) in values.iter().enumerate() {
            if (support == Support::Box || ind[k]) && !v.is_finite() {
                return Err(Error::InvalidInput(format!("non-finite value at cell {k}")));
            }
        }
        Ok(Self { values, support })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn support(&self) -> Support {
        self.support
    }

    pub fn value(&self, k: usize) -> f64 {
        self.values[k]
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            values: self.values.iter().map(|v| c * v).collect(),
            support: self.support,
        }
    }

    /// `a * self + b * other` on the common support.
    pub fn combine(&self, a: f64, other: &GridFunction, b: f64) -> Self {
        let support = if self.support == other.support {
            self.support
        } else {
            Support::Omega
        };
        Self {
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(x, y)| a * x + b * y)
                .collect(),
            support,
        }
    }

    /// Mean over the cells of `region`.
    pub fn mean(&self, region: &Region) -> Option<f64> {
        let mut s = KahanSum::new();
        let mut n = 0usize;
        for k in region.cells() {
            s.add(self.values[k]);
            n += 1;
        }
        (n > 0).then(|| s.value() / n as f64)
    }
}

/// Class of a cell inside a region.
const ABSENT: u8 = 0;
const OMEGA: u8 = 1;
const EXTERIOR: u8 = 2;

/// Cells taking part in an energy, each tagged as a domain cell or an
/// exterior cell.
#[derive(Debug, Clone)]
pub struct Region {
    class: Vec<u8>,
    count: usize,
}

impl Region {
    /// All domain cells.
    pub fn omega(grid: &DomainGrid) -> Self {
        Self::from_class(grid.indicator().iter().map(|&i| if i { OMEGA } else { ABSENT }).collect())
    }

    /// Every cell of the box.
    pub fn whole(grid: &DomainGrid) -> Self {
        Self::from_class(grid.indicator().iter().map(|&i| if i { OMEGA } else { EXTERIOR }).collect())
    }

    /// Domain cells whose centres lie in the open ball.
    pub fn omega_ball(grid: &DomainGrid, x: f64, y: f64, r: f64) -> Self {
        let mut class = vec![ABSENT; grid.cells()];
        for k in grid.ball_cells(x, y, r) {
            if grid.indicator()[k] {
                class[k] = OMEGA;
            }
        }
        Self::from_class(class)
    }

    fn from_class(class: Vec<u8>) -> Self {
        let count = class.iter().filter(|&&c| c != ABSENT).count();
        Self { class, count }
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn contains(&self, k: usize) -> bool {
        self.class[k] != ABSENT
    }

    pub fn is_exterior(&self, k: usize) -> bool {
        self.class[k] == EXTERIOR
    }

    pub fn cells(&self) -> impl Iterator<Item = usize> + '_ {
        self.class.iter().enumerate().filter(|(_, &c)| c != ABSENT).map(|(k, _)| k)
    }

    fn check(&self, grid: &DomainGrid, u: &GridFunction) -> Result<()> {
        if self.class.len() != grid.cells() || u.values.len() != grid.cells() {
            return Err(Error::InvalidInput("region, function and grid differ in size".into()));
        }
        if u.support == Support::Omega && self.class.contains(&EXTERIOR) {
            return Err(Error::InvalidInput(
                "region reaches outside the support of the function".into(),
            ));
        }
        Ok(())
    }
}

/// Cell-pair weights `h^4 / |v h|^kappa` by offset in cells, with touching
/// offsets replaced by their sub-split averages.
#[derive(Debug, Clone)]
struct CellWeights {
    kappa: f64,
    scale: f64,
    touch: [f64; 3],
}

impl CellWeights {
    fn new(h: f64, kappa: f64) -> Self {
        let scale = h.powf(4.0 - kappa);
        let m = TOUCH_SPLIT as i64;
        let sub = |di: i64, dj: i64| {
            let mut s = 0.0;
            for a in 0..m * m {
                for b in 0..m * m {
                    let dx = (di * m + b % m - a % m) as f64 / m as f64;
                    let dy = (dj * m + b / m - a / m) as f64 / m as f64;
                    s += raw(dx * dx + dy * dy, kappa);
                }
            }
            scale * s / (m * m * m * m) as f64
        };
        let edge = sub(1, 0);
        Self {
            kappa,
            scale,
            touch: [edge, edge, sub(1, 1)],
        }
    }

    #[inline]
    fn get(&self, di: usize, dj: usize) -> f64 {
        match (di, dj) {
            (0, 0) => 0.0,
            (1, 0) => self.touch[0],
            (0, 1) => self.touch[1],
            (1, 1) => self.touch[2],
            _ => self.scale * raw((di * di + dj * dj) as f64, self.kappa),
        }
    }
}

/// Weight of the ordered cell pair at offset `(di, dj)` cells under the
/// Besov kernel, touching pairs included. Zero on the diagonal.
pub fn cell_pair_weight(h: f64, di: usize, dj: usize) -> f64 {
    CellWeights::new(h, BESOV_KAPPA).get(di, dj)
}

#[inline]
fn raw(d2: f64, kappa: f64) -> f64 {
    if kappa == 4.0 {
        1.0 / (d2 * d2)
    } else {
        d2.powf(-0.5 * kappa)
    }
}

/// Exact pair energy by the direct double sum, with the reported
/// near-diagonal remainder.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct EnergyReport {
    pub value: f64,
    /// Bound on the skipped self-pair contribution, not included in `value`.
    pub remainder: f64,
    /// Some increment overflowed `phi`; `value` is only a lower bound > 1.
    pub saturated: bool,
    pub pairs: u64,
}

/// `sum_{x != y} phi(|u(x) - u(y)| / alpha) h^4 / |x - y|^4` over ordered
/// pairs of `region`, summed pair by pair.
pub fn pair_energy(
    grid: &DomainGrid,
    u: &GridFunction,
    phi: &YoungFunction,
    alpha: f64,
    region: &Region,
) -> Result<EnergyReport> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidInput(format!("alpha must be positive, got {alpha}")));
    }
    let (value, saturated, pairs) =
        direct_sum(grid, u, region, BESOV_KAPPA, |d| phi.eval_checked(d / alpha))?;
    let grads = gradient_estimate(grid, u, region);
    let h = grid.h();
    let remainder = OMEGA_N * grads.iter().map(|&g| phi.eval(h * g / alpha)).sum::<f64>();
    Ok(EnergyReport {
        value,
        remainder,
        saturated,
        pairs,
    })
}

/// Direct ordered-pair sum of `f(|du|) * weight`; `f` also flags overflow.
fn direct_sum<F>(grid: &DomainGrid, u: &GridFunction, region: &Region, kappa: f64, f: F) -> Result<(f64, bool, u64)>
where
    F: Fn(f64) -> (f64, bool) + Sync,
{
    region.check(grid, u)?;
    let w = CellWeights::new(grid.h(), kappa);
    let nx = grid.nx();
    let cells: Vec<(usize, usize, f64)> =
        region.cells().map(|k| (k % nx, k / nx, u.values[k])).collect();
    let chunks: Vec<(f64, f64, bool)> = cells
        .par_chunks(64)
        .enumerate()
        .map(|(c, chunk)| {
            let mut s = KahanSum::new();
            let mut sat = false;
            for (o, &(i, j, v)) in chunk.iter().enumerate() {
                let a = c * 64 + o;
                for &(i2, j2, v2) in &cells[a + 1..] {
                    let d = (v - v2).abs();
                    if d == 0.0 {
                        continue;
                    }
                    let (fv, over) = f(d);
                    sat |= over;
                    s.add(fv * w.get(i.abs_diff(i2), j.abs_diff(j2)));
                }
            }
            (s.value(), 0.0, sat)
        })
        .collect();
    let mut total = KahanSum::new();
    let mut sat = false;
    for (v, _, s) in chunks {
        total.add(v);
        sat |= s;
    }
    let n = cells.len() as u64;
    Ok((2.0 * total.value(), sat, n * n.saturating_sub(1)))
}

/// `(sum_{x != y} |u(x) - u(y)|^p / |x - y|^{2 + s p})^{1/p}` by the
/// direct sum.
pub fn frac_sobolev(grid: &DomainGrid, u: &GridFunction, s: f64, p: f64, region: &Region) -> Result<f64> {
    if !(s > 0.0 && s < 1.0) || !(p >= 1.0 && p.is_finite()) {
        return Err(Error::InvalidInput(format!("need 0 < s < 1 and p >= 1, got s = {s}, p = {p}")));
    }
    let kappa = 2.0 + s * p;
    let (v, _, _) = direct_sum(grid, u, region, kappa, |d| (d.powf(p), false))?;
    Ok(v.powf(1.0 / p))
}

/// Per-cell gradient magnitude by central differences within `region`,
/// one-sided where a neighbour is missing.
pub fn gradient_estimate(grid: &DomainGrid, u: &GridFunction, region: &Region) -> Vec<f64> {
    let (nx, ny, h) = (grid.nx(), grid.ny(), grid.h());
    region
        .cells()
        .map(|k| {
            let (i, j) = (k % nx, k / nx);
            let v = u.values[k];
            let diff = |lo: Option<usize>, hi: Option<usize>| {
                let get = |c: Option<usize>| c.filter(|&c| region.contains(c)).map(|c| u.values[c]);
                match (get(lo), get(hi)) {
                    (Some(a), Some(b)) => (b - a) / (2.0 * h),
                    (Some(a), None) => (v - a) / h,
                    (None, Some(b)) => (b - v) / h,
                    (None, None) => 0.0,
                }
            };
            let gx = diff((i > 0).then(|| k - 1), (i + 1 < nx).then(|| k + 1));
            let gy = diff((j > 0).then(|| k - nx), (j + 1 < ny).then(|| k + nx));
            gx.hypot(gy)
        })
        .collect()
}

/// Energy classes: domain-domain pairs, exterior-domain pairs (one
/// direction), exterior-exterior pairs, and pairs with a point outside the
/// box.
pub const CLASSES: usize = 4;
const OCTAVE_LO: i32 = -80;
const OCTAVES: usize = 160;
const BINS_PER_OCTAVE: usize = 256;
const BINS: usize = OCTAVES * BINS_PER_OCTAVE;

#[inline]
fn bin_of(d: f64) -> usize {
    let bits = d.to_bits();
    let e = ((bits >> 52) & 0x7ff) as i32 - 1023;
    if e < OCTAVE_LO {
        0
    } else if e >= OCTAVE_LO + OCTAVES as i32 {
        BINS - 1
    } else {
        (e - OCTAVE_LO) as usize * BINS_PER_OCTAVE + ((bits >> 44) & 0xff) as usize
    }
}

/// Ordered-pair multiplicity per class: pairs inside one class count in
/// both directions, cross pairs once per direction, tail weights as given.
const MULT: [f64; CLASSES] = [2.0, 1.0, 2.0, 1.0];

/// Receiver of quadrature terms `(class, |du|, weight)`, with the weight
/// of one unordered pair.
trait Sink: Send {
    fn add(&mut self, class: usize, d: f64, w: f64);
    fn count(&mut self);
}

/// Dense per-class accumulators `(weight, weight * increment)`.
struct Accum {
    w: Vec<f64>,
    wd: Vec<f64>,
    pairs: u64,
}

impl Accum {
    fn new() -> Self {
        Self {
            w: vec![0.0; CLASSES * BINS],
            wd: vec![0.0; CLASSES * BINS],
            pairs: 0,
        }
    }

    fn sparse(&self) -> Vec<(u32, f64, f64)> {
        (0..CLASSES * BINS)
            .filter(|&b| self.w[b] > 0.0)
            .map(|b| (b as u32, self.w[b], self.wd[b]))
            .collect()
    }
}

impl Sink for Accum {
    #[inline]
    fn add(&mut self, class: usize, d: f64, w: f64) {
        if d > 0.0 && w > 0.0 {
            let w = MULT[class] * w;
            let b = class * BINS + bin_of(d);
            self.w[b] += w;
            self.wd[b] += w * d;
        }
    }

    fn count(&mut self) {
        self.pairs += 1;
    }
}

impl<A: Sink, B: Sink> Sink for (A, B) {
    #[inline]
    fn add(&mut self, class: usize, d: f64, w: f64) {
        self.0.add(class, d, w);
        self.1.add(class, d, w);
    }

    fn count(&mut self) {
        self.0.count();
        self.1.count();
    }
}

impl<S: Sink> Sink for Vec<S> {
    #[inline]
    fn add(&mut self, class: usize, d: f64, w: f64) {
        for s in self.iter_mut() {
            s.add(class, d, w);
        }
    }

    fn count(&mut self) {
        for s in self.iter_mut() {
            s.count();
        }
    }
}

/// Evaluates `phi(|du| / alpha)` term by term, per class and, separately,
/// over all ordered pairs without regard to class.
struct EnergySink<'a> {
    phi: &'a YoungFunction,
    alpha: f64,
    class: [KahanSum; 3],
    all: KahanSum,
    saturated: bool,
    pairs: u64,
}

impl<'a> EnergySink<'a> {
    fn new(phi: &'a YoungFunction, alpha: f64) -> Self {
        Self {
            phi,
            alpha,
            class: Default::default(),
            all: KahanSum::new(),
            saturated: false,
            pairs: 0,
        }
    }

    fn finish(parts: &[Self]) -> SplitEnergy {
        let mut class: [KahanSum; 3] = Default::default();
        let mut all = KahanSum::new();
        let (mut saturated, mut pair_terms) = (false, 0);
        for p in parts {
            for (c, s) in class.iter_mut().zip(&p.class) {
                c.merge(s);
            }
            all.merge(&p.all);
            saturated |= p.saturated;
            pair_terms += p.pairs;
        }
        SplitEnergy {
            classes: ClassEnergy {
                omega: class[0].value(),
                cross: class[1].value(),
                exterior: class[2].value(),
                tail: 0.0,
            },
            all_pairs: all.value(),
            saturated,
            pair_terms,
        }
    }
}

impl Sink for EnergySink<'_> {
    #[inline]
    fn add(&mut self, class: usize, d: f64, w: f64) {
        if d > 0.0 && w > 0.0 {
            let (f, over) = self.phi.eval_checked(d / self.alpha);
            self.saturated |= over;
            let e = f * w;
            self.class[class].add(MULT[class] * e);
            self.all.add(2.0 * e);
        }
    }

    fn count(&mut self) {
        self.pairs += 1;
    }
}

/// Quadrature choice for [`EnergyProfile::build`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Engine {
    /// Every cell pair.
    Direct,
    /// Quadtree: node pairs more than `near` node widths apart whose
    /// combined value deviation is at most
    /// `tau * max(|mean difference|, floor * osc(u))` are merged into a
    /// two-point rule.
    Tree { near: usize, tau: f64, floor: f64 },
}

impl Engine {
    pub const DEFAULT_TREE: Engine = Engine::Tree {
        near: 3,
        tau: 1.0,
        floor: 0.2,
    };

    /// Direct below `limit` cells, the default tree above.
    pub fn auto(cells: usize, limit: usize) -> Self {
        if cells <= limit {
            Engine::Direct
        } else {
            Self::DEFAULT_TREE
        }
    }
}

/// Binned increments of a function over a region, from which `I(alpha)`
/// is evaluated for any `phi` and `alpha`.
#[derive(Debug, Clone, Serialize)]
pub struct EnergyProfile {
    /// Per class: `(weight, mean increment)` per nonempty bin.
    #[serde(skip)]
    bins: [Vec<(f64, f64)>; CLASSES],
    pub kappa: f64,
    pub engine: Engine,
    /// Merged or exact pairs evaluated while building.
    pub pair_terms: u64,
    /// Whether the class-3 tail has been added.
    pub has_tail: bool,
}

/// `I(alpha)` split by class. `cross` counts exterior-domain pairs once.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct ClassEnergy {
    pub omega: f64,
    pub cross: f64,
    pub exterior: f64,
    pub tail: f64,
}

impl ClassEnergy {
    /// `H1 + 2 H2 + H3`, the energy of pairs inside the box.
    pub fn inside(&self) -> f64 {
        self.omega + 2.0 * self.cross + self.exterior
    }

    pub fn total(&self) -> f64 {
        self.inside() + self.tail
    }
}

impl EnergyProfile {
    /// Bins every pair of `region` (Besov kernel).
    pub fn build(grid: &DomainGrid, u: &GridFunction, region: &Region, engine: Engine) -> Result<Self> {
        Self::build_kernel(grid, u, region, engine, BESOV_KAPPA)
    }

    pub fn build_kernel(
        grid: &DomainGrid,
        u: &GridFunction,
        region: &Region,
        engine: Engine,
        kappa: f64,
    ) -> Result<Self> {
        region.check(grid, u)?;
        let parts = run_engine(grid, u, region, engine, kappa, Accum::new)?;
        Ok(Self::from_parts(&parts, kappa, engine))
    }

    /// Builds the profile and, in the same pass, the unbinned class split
    /// at each `(phi, alpha)` target (Besov kernel).
    pub fn build_with_split(
        grid: &DomainGrid,
        u: &GridFunction,
        region: &Region,
        engine: Engine,
        targets: &[(&YoungFunction, f64)],
    ) -> Result<(Self, Vec<SplitEnergy>)> {
        for &(_, alpha) in targets {
            check_alpha(alpha)?;
        }
        region.check(grid, u)?;
        let parts = run_engine(grid, u, region, engine, BESOV_KAPPA, || {
            let sinks: Vec<EnergySink> = targets.iter().map(|&(phi, a)| EnergySink::new(phi, a)).collect();
            (Accum::new(), sinks)
        })?;
        let (acc, sinks): (Vec<Accum>, Vec<Vec<EnergySink>>) = parts.into_iter().unzip();
        let splits = per_target(sinks, targets.len());
        Ok((Self::from_parts(&acc, BESOV_KAPPA, engine), splits))
    }

    fn from_parts(parts: &[Accum], kappa: f64, engine: Engine) -> Self {
        let mut w = vec![0.0; CLASSES * BINS];
        let mut wd = vec![0.0; CLASSES * BINS];
        let mut pair_terms = 0;
        for part in parts {
            pair_terms += part.pairs;
            for (b, a, c) in part.sparse() {
                w[b as usize] += a;
                wd[b as usize] += c;
            }
        }
        let mut bins: [Vec<(f64, f64)>; CLASSES] = Default::default();
        for (class, out) in bins.iter_mut().enumerate() {
            for b in class * BINS..(class + 1) * BINS {
                if w[b] > 0.0 {
                    out.push((w[b], wd[b] / w[b]));
                }
            }
        }
        Self {
            bins,
            kappa,
            engine,
            pair_terms,
            has_tail: false,
        }
    }

    /// Adds pairs with one point outside the grid box, where the function
    /// is taken to equal `far_value`. Needs the Besov kernel.
    pub fn add_tail(&mut self, grid: &DomainGrid, u: &GridFunction, region: &Region, far_value: f64) -> Result<()> {
        if self.kappa != BESOV_KAPPA {
            return Err(Error::InvalidInput("the far tail is implemented for the Besov kernel".into()));
        }
        let ((x0, y0), (x1, y1)) = grid.bbox();
        let area = grid.h() * grid.h();
        let mut acc = Accum::new();
        for k in region.cells() {
            let (x, y) = grid.center_of(k);
            let d = (u.values[k] - far_value).abs();
            Sink::add(&mut acc, 3, d, 2.0 * area * outside_kernel(x - x0, x1 - x, y - y0, y1 - y));
        }
        self.bins[3] = acc.sparse().into_iter().map(|(_, w, wd)| (w, wd / w)).collect();
        self.has_tail = true;
        Ok(())
    }

    /// `I(alpha)` per class; saturation shows up as a huge value.
    pub fn energy(&self, phi: &YoungFunction, alpha: f64) -> ClassEnergy {
        let class = |c: usize| {
            let mut s = KahanSum::new();
            for &(w, d) in &self.bins[c] {
                s.add(w * phi.eval(d / alpha));
            }
            s.value()
        };
        ClassEnergy {
            omega: class(0),
            cross: class(1),
            exterior: class(2),
            tail: class(3),
        }
    }

    /// Energy restricted to domain-domain pairs.
    pub fn omega_only(&self) -> Self {
        let mut p = self.clone();
        for c in 1..CLASSES {
            p.bins[c].clear();
        }
        p.has_tail = false;
        p
    }

    pub fn is_zero(&self) -> bool {
        self.bins.iter().all(|b| b.is_empty())
    }

    /// Largest binned increment.
    pub fn max_increment(&self) -> f64 {
        self.bins.iter().flatten().map(|b| b.1).fold(0.0, f64::max)
    }

    /// Number of nonempty bins over all classes.
    pub fn bin_count(&self) -> usize {
        self.bins.iter().map(Vec::len).sum()
    }
}

fn run_engine<S: Sink, M: Fn() -> S + Sync>(
    grid: &DomainGrid,
    u: &GridFunction,
    region: &Region,
    engine: Engine,
    kappa: f64,
    make: M,
) -> Result<Vec<S>> {
    Ok(match engine {
        Engine::Direct => direct_terms(grid, u, region, kappa, make),
        Engine::Tree { near, tau, floor } => {
            if near < 1 || !(tau > 0.0) || floor < 0.0 {
                return Err(Error::InvalidInput("tree engine needs near >= 1, tau > 0".into()));
            }
            tree_terms(grid, u, region, kappa, near, tau, floor, make)
        }
    })
}

/// Unbinned `I(alpha)` per class, plus the same quadrature summed over
/// all ordered pairs without looking at classes.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SplitEnergy {
    pub classes: ClassEnergy,
    pub all_pairs: f64,
    pub saturated: bool,
    pub pair_terms: u64,
}

/// Evaluates the Besov modular at one `alpha` term by term.
pub fn split_energy(
    grid: &DomainGrid,
    u: &GridFunction,
    region: &Region,
    engine: Engine,
    phi: &YoungFunction,
    alpha: f64,
) -> Result<SplitEnergy> {
    Ok(split_energies(grid, u, region, engine, &[(phi, alpha)])?.remove(0))
}

/// [`split_energy`] for several `(phi, alpha)` targets in one pass.
pub fn split_energies(
    grid: &DomainGrid,
    u: &GridFunction,
    region: &Region,
    engine: Engine,
    targets: &[(&YoungFunction, f64)],
) -> Result<Vec<SplitEnergy>> {
    for &(_, alpha) in targets {
        check_alpha(alpha)?;
    }
    region.check(grid, u)?;
    let parts = run_engine(grid, u, region, engine, BESOV_KAPPA, || {
        targets.iter().map(|&(phi, a)| EnergySink::new(phi, a)).collect::<Vec<_>>()
    })?;
    Ok(per_target(parts, targets.len()))
}

fn per_target(parts: Vec<Vec<EnergySink<'_>>>, n: usize) -> Vec<SplitEnergy> {
    let mut split: Vec<Vec<EnergySink>> = (0..n).map(|_| Vec::new()).collect();
    for sinks in parts {
        for (t, s) in sinks.into_iter().enumerate() {
            split[t].push(s);
        }
    }
    split.iter().map(|p| EnergySink::finish(p)).collect()
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("alpha must be positive, got {alpha}")))
    }
}

/// `int_{R^2 \ box} |x - y|^{-4} dy` for `x` at distances `l, r, b, t`
/// from the left, right, bottom and top sides of the box.
pub fn outside_kernel(l: f64, r: f64, b: f64, t: f64) -> f64 {
    // Along a ray at angle psi from the normal of a side at distance a the
    // outside starts at a / cos(psi); the radial integral is cos^2 / (2 a^2).
    let side = |a: f64, lo: f64, hi: f64| {
        let p1 = lo.atan2(a);
        let p2 = hi.atan2(a);
        let f = |p: f64| 0.5 * p + 0.25 * (2.0 * p).sin();
        (f(p2) - f(p1)) / (2.0 * a * a)
    };
    side(r, -b, t) + side(l, -t, b) + side(t, -r, l) + side(b, -l, r)
}

fn direct_terms<S: Sink, M: Fn() -> S + Sync>(
    grid: &DomainGrid,
    u: &GridFunction,
    region: &Region,
    kappa: f64,
    make: M,
) -> Vec<S> {
    let w = CellWeights::new(grid.h(), kappa);
    let nx = grid.nx();
    let cells: Vec<(usize, usize, u8, f64)> = region
        .cells()
        .map(|k| (k % nx, k / nx, region.class[k], u.values[k]))
        .collect();
    let chunk = cells.len().div_ceil(16).max(1);
    (0..cells.len().div_ceil(chunk))
        .into_par_iter()
        .map(|c| {
            let mut acc = make();
            for a in c * chunk..((c + 1) * chunk).min(cells.len()) {
                let (i, j, ca, v) = cells[a];
                for &(i2, j2, cb, v2) in &cells[a + 1..] {
                    acc.add(pair_class(ca, cb), (v - v2).abs(), w.get(i.abs_diff(i2), j.abs_diff(j2)));
                    acc.count();
                }
            }
            acc
        })
        .collect()
}

/// Class of an unordered pair; see [`MULT`] for the multiplicities.
#[inline]
fn pair_class(a: u8, b: u8) -> usize {
    match (a, b) {
        (OMEGA, OMEGA) => 0,
        (EXTERIOR, EXTERIOR) => 2,
        _ => 1,
    }
}

/// Per-node statistics of one quadtree level, kept separately for the
/// domain part (index 0) and the exterior part (index 1) of each node.
struct Level {
    side: usize,
    /// Cell count of each part.
    n: [Vec<f64>; 2],
    mean: [Vec<f64>; 2],
    var: [Vec<f64>; 2],
    /// Centroid of each part, in cells from the node centre.
    cx: [Vec<f64>; 2],
    cy: [Vec<f64>; 2],
    /// Means of `u * (x - c)` and `u * (y - c)` over each part, in cells.
    mx: [Vec<f64>; 2],
    my: [Vec<f64>; 2],
}

impl Level {
    fn new(side: usize) -> Self {
        let z = || [vec![0.0; side * side], vec![0.0; side * side]];
        Self {
            side,
            n: z(),
            mean: z(),
            var: z(),
            cx: z(),
            cy: z(),
            mx: z(),
            my: z(),
        }
    }

    fn present(&self, node: usize) -> bool {
        self.n[0][node] + self.n[1][node] > 0.0
    }
}

struct Tree<'a> {
    levels: Vec<Level>,
    nx: usize,
    ny: usize,
    u: &'a GridFunction,
    region: &'a Region,
    cw: CellWeights,
    near: usize,
    tau: f64,
    floor: f64,
    table: HashMap<(usize, usize, usize), f64>,
}

/// Region class of a node part.
const PART_CLASS: [u8; 2] = [OMEGA, EXTERIOR];

/// Partial node parts use the centroid-corrected weight only beyond this
/// many multiples of `near`; closer pairs are refined.
const PARTIAL_FAR: usize = 4;

#[allow(clippy::too_many_arguments)]
fn tree_terms<S: Sink, M: Fn() -> S + Sync>(
    grid: &DomainGrid,
    u: &GridFunction,
    region: &Region,
    kappa: f64,
    near: usize,
    tau: f64,
    floor: f64,
    make: M,
) -> Vec<S> {
    let (nx, ny) = (grid.nx(), grid.ny());
    let mut p = 1;
    while p < nx.max(ny) {
        p *= 2;
    }
    let mut levels = Vec::new();
    let mut base = Level::new(p);
    let (mut vmin, mut vmax) = (f64::INFINITY, f64::NEG_INFINITY);
    for k in region.cells() {
        let (i, j) = (k % nx, k / nx);
        let n = j * p + i;
        let v = u.values[k];
        let c = usize::from(region.class[k] == EXTERIOR);
        base.n[c][n] = 1.0;
        base.mean[c][n] = v;
        vmin = vmin.min(v);
        vmax = vmax.max(v);
    }
    levels.push(base);
    while levels.last().expect("level").side > 1 {
        let prev = levels.last().expect("level");
        let s = prev.side / 2;
        let mut next = Level::new(s);
        // Child centres sit a quarter node width off the centre.
        let q = 0.25 * (p / s) as f64;
        let sx = [-q, q, -q, q];
        let sy = [-q, -q, q, q];
        for j in 0..s {
            for i in 0..s {
                let n = j * s + i;
                let kids = [
                    2 * j * prev.side + 2 * i,
                    2 * j * prev.side + 2 * i + 1,
                    (2 * j + 1) * prev.side + 2 * i,
                    (2 * j + 1) * prev.side + 2 * i + 1,
                ];
                for c in 0..2 {
                    let cnt: f64 = kids.iter().map(|&k| prev.n[c][k]).sum();
                    if cnt == 0.0 {
                        continue;
                    }
                    let (mut mean, mut cx, mut cy, mut mx, mut my) = (0.0, 0.0, 0.0, 0.0, 0.0);
                    for (t, &k) in kids.iter().enumerate() {
                        let f = prev.n[c][k] / cnt;
                        mean += f * prev.mean[c][k];
                        cx += f * (prev.cx[c][k] + sx[t]);
                        cy += f * (prev.cy[c][k] + sy[t]);
                        mx += f * (prev.mx[c][k] + sx[t] * prev.mean[c][k]);
                        my += f * (prev.my[c][k] + sy[t] * prev.mean[c][k]);
                    }
                    next.n[c][n] = cnt;
                    next.mean[c][n] = mean;
                    next.var[c][n] = kids
                        .iter()
                        .map(|&k| prev.n[c][k] / cnt * (prev.var[c][k] + (prev.mean[c][k] - mean).powi(2)))
                        .sum();
                    next.cx[c][n] = cx;
                    next.cy[c][n] = cy;
                    next.mx[c][n] = mx;
                    next.my[c][n] = my;
                }
            }
        }
        levels.push(next);
    }
    let mut tree = Tree {
        levels,
        nx,
        ny,
        u,
        region,
        cw: CellWeights::new(grid.h(), kappa),
        near,
        tau,
        floor: floor * (vmax - vmin).max(0.0),
        table: HashMap::new(),
    };
    tree.fill_table();

    // Walk the top of the tree sequentially, then hand out the pairs at the
    // split level in fixed chunks so the summation order never changes.
    let top = tree.levels.len() - 1;
    let split = top.saturating_sub(4);
    let mut tasks = Vec::new();
    let mut head = make();
    tree.visit(top, (0, 0), (0, 0), split, &mut head, &mut tasks);
    let chunk = tasks.len().div_ceil(32).max(1);
    let tree = &tree;
    let rest: Vec<S> = tasks
        .par_chunks(chunk)
        .map(|ts| {
            let mut acc = make();
            let mut none = Vec::new();
            for &(k, a, b) in ts {
                tree.visit(k, a, b, usize::MAX, &mut acc, &mut none);
            }
            acc
        })
        .collect();
    let mut parts = vec![head];
    parts.extend(rest);
    parts
}

type Task = (usize, (usize, usize), (usize, usize));

impl Tree<'_> {
    /// Node-pair weights for offsets up to `2 near + 2` at every level.
    fn fill_table(&mut self) {
        let r = 2 * self.near + 2;
        for k in 1..self.levels.len() {
            for ox in 0..=r {
                for oy in 0..=r {
                    if ox.max(oy) > self.near {
                        let w = self.node_weight(k, ox, oy);
                        self.table.insert((k, ox, oy), w);
                    }
                }
            }
        }
    }

    /// Sum of cell-pair weights between two level-`k` nodes at offset
    /// `(ox, oy)` node widths. Levels above 4 reuse the level-4 sum,
    /// rescaled by the kernel's homogeneity.
    fn node_weight(&self, k: usize, ox: usize, oy: usize) -> f64 {
        let kk = k.min(4);
        let s = 1i64 << kk;
        let (bx, by) = (ox as i64 * s, oy as i64 * s);
        let mut sum = 0.0;
        for dy in -(s - 1)..s {
            for dx in -(s - 1)..s {
                let m = ((s - dx.abs()) * (s - dy.abs())) as f64;
                sum += m * self.cw.get((bx + dx).unsigned_abs() as usize, (by + dy).unsigned_abs() as usize);
            }
        }
        sum * 2f64.powf((k - kk) as f64 * (4.0 - self.cw.kappa))
    }

    fn weight(&self, k: usize, ox: usize, oy: usize) -> f64 {
        match self.table.get(&(k, ox, oy)) {
            Some(&w) => w,
            None => self.node_weight(k, ox, oy),
        }
    }

    fn visit<S: Sink>(&self, k: usize, a: (usize, usize), b: (usize, usize), split: usize, acc: &mut S, tasks: &mut Vec<Task>) {
        let lv = &self.levels[k];
        let (na, nb) = (a.1 * lv.side + a.0, b.1 * lv.side + b.0);
        if !lv.present(na) || !lv.present(nb) {
            return;
        }
        if k == split {
            tasks.push((k, a, b));
            return;
        }
        if k == 0 {
            if a != b {
                self.cell_pair(a, b, acc);
            }
            return;
        }
        let (ox, oy) = (a.0.abs_diff(b.0), a.1.abs_diff(b.1));
        if a != b && ox.max(oy) > self.near && self.far_pair(k, a, b, acc) {
            return;
        }
        let kids = |n: (usize, usize)| {
            [
                (2 * n.0, 2 * n.1),
                (2 * n.0 + 1, 2 * n.1),
                (2 * n.0, 2 * n.1 + 1),
                (2 * n.0 + 1, 2 * n.1 + 1),
            ]
        };
        let (ka, kb) = (kids(a), kids(b));
        if a == b {
            for x in 0..4 {
                for y in x..4 {
                    self.visit(k - 1, ka[x], ka[y], split, acc, tasks);
                }
            }
        } else {
            for &x in &ka {
                for &y in &kb {
                    self.visit(k - 1, x, y, split, acc, tasks);
                }
            }
        }
    }

    /// Applies the two-point rule to every part pair of two well-separated
    /// nodes; false, with nothing emitted, when any part pair needs
    /// refinement.
    fn far_pair<S: Sink>(&self, k: usize, a: (usize, usize), b: (usize, usize), acc: &mut S) -> bool {
        let lv = &self.levels[k];
        let (na, nb) = (a.1 * lv.side + a.0, b.1 * lv.side + b.0);
        let (ox, oy) = (a.0.abs_diff(b.0), a.1.abs_diff(b.1));
        let cells = (1usize << k) as f64;
        let full = cells * cells;
        let mut parts = [(0usize, 0usize, 0.0f64, 0.0f64); 4];
        let mut used = 0;
        for ca in 0..2 {
            for cb in 0..2 {
                let (wa, wb) = (lv.n[ca][na], lv.n[cb][nb]);
                if wa == 0.0 || wb == 0.0 {
                    continue;
                }
                if (wa < full || wb < full) && ox.max(oy) <= PARTIAL_FAR * self.near {
                    return false;
                }
                let d = (lv.mean[ca][na] - lv.mean[cb][nb]).abs();
                let sigma = (lv.var[ca][na] + lv.var[cb][nb]).sqrt();
                if sigma > self.tau * d.max(self.floor) {
                    return false;
                }
                parts[used] = (ca, cb, d, sigma);
                used += 1;
            }
        }
        let w = self.weight(k, ox, oy);
        let rx = (b.0 as f64 - a.0 as f64) * cells;
        let ry = (b.1 as f64 - a.1 as f64) * cells;
        let r2 = rx * rx + ry * ry;
        for &(ca, cb, d, sigma) in &parts[..used] {
            let (wa, wb) = (lv.n[ca][na], lv.n[cb][nb]);
            let class = pair_class(PART_CLASS[ca], PART_CLASS[cb]);
            let (dm, wp) = if wa == full && wb == full {
                // Two increments d +- sigma match the mean and variance of
                // the increment over all cell pairs of the nodes. Leading
                // correction for the correlation between the kernel and the
                // increment across the pair: with gradients g and coordinate
                // variance c2 in each node, |du| shifts by
                // sgn * c2 * kappa * r0.(gA + gB) / |r0|^2.
                let c2 = (full - 1.0) / 12.0;
                let gx = (lv.mx[ca][na] + lv.mx[cb][nb]) / c2;
                let gy = (lv.my[ca][na] + lv.my[cb][nb]) / c2;
                let sgn = (lv.mean[ca][na] - lv.mean[cb][nb]).signum();
                let shift = sgn * c2 * self.cw.kappa * (rx * gx + ry * gy) / r2;
                ((d + shift).abs(), w)
            } else {
                // Partial parts: the full-node weight scaled to the part
                // sizes and moved to the part centroids.
                let ex = rx + lv.cx[cb][nb] - lv.cx[ca][na];
                let ey = ry + lv.cy[cb][nb] - lv.cy[ca][na];
                let moved = raw(ex * ex + ey * ey, self.cw.kappa) / raw(r2, self.cw.kappa);
                (d, w * wa * wb / (full * full) * moved)
            };
            acc.add(class, dm + sigma, 0.5 * wp);
            acc.add(class, (dm - sigma).abs(), 0.5 * wp);
            acc.count();
        }
        true
    }

    fn cell_pair<S: Sink>(&self, a: (usize, usize), b: (usize, usize), acc: &mut S) {
        if a.0 >= self.nx || a.1 >= self.ny || b.0 >= self.nx || b.1 >= self.ny {
            return;
        }
        let (ka, kb) = (a.1 * self.nx + a.0, b.1 * self.nx + b.0);
        let class = pair_class(self.region.class[ka], self.region.class[kb]);
        let d = (self.u.values[ka] - self.u.values[kb]).abs();
        acc.add(class, d, self.cw.get(a.0.abs_diff(b.0), a.1.abs_diff(b.1)));
        acc.count();
    }
}

/// Outcome of the Luxemburg bisection.
#[derive(Debug, Clone, Serialize)]
pub struct LuxemburgResult {
    /// The seminorm; `+inf` when no bracket was found.
    pub alpha: f64,
    /// `(alpha, I(alpha))` in evaluation order.
    pub trace: Vec<(f64, f64)>,
    pub bins: usize,
    pub pair_terms: u64,
}

impl LuxemburgResult {
    pub fn write_trace_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "alpha,I")?;
        for (a, i) in &self.trace {
            writeln!(w, "{a},{i}")?;
        }
        Ok(())
    }
}

/// `inf { alpha > 0 : I(alpha) <= 1 }` over the whole profile (tail
/// included when present).
pub fn luxemburg(profile: &EnergyProfile, phi: &YoungFunction) -> Result<LuxemburgResult> {
    luxemburg_by(profile, phi, |e| e.total())
}

/// Same, with the class combination chosen by `select`.
pub fn luxemburg_by<S: Fn(&ClassEnergy) -> f64>(
    profile: &EnergyProfile,
    phi: &YoungFunction,
    select: S,
) -> Result<LuxemburgResult> {
    let mut trace = Vec::new();
    let done = |alpha: f64, trace: Vec<(f64, f64)>| LuxemburgResult {
        alpha,
        trace,
        bins: profile.bin_count(),
        pair_terms: profile.pair_terms,
    };
    if profile.is_zero() {
        return Ok(done(0.0, trace));
    }
    let eval = |a: f64, trace: &mut Vec<(f64, f64)>| {
        let v = select(&profile.energy(phi, a));
        trace.push((a, v));
        v
    };
    let a0 = profile.max_increment().max(f64::MIN_POSITIVE);
    let (mut lo, mut hi);
    if eval(a0, &mut trace) <= 1.0 {
        hi = a0;
        lo = a0 / 2.0;
        let mut found = false;
        for _ in 0..200 {
            if eval(lo, &mut trace) > 1.0 {
                found = true;
                break;
            }
            hi = lo;
            lo /= 2.0;
        }
        if !found {
            return Ok(done(0.0, trace));
        }
    } else {
        lo = a0;
        hi = 2.0 * a0;
        let mut found = false;
        for _ in 0..200 {
            if eval(hi, &mut trace) <= 1.0 {
                found = true;
                break;
            }
            lo = hi;
            hi *= 2.0;
        }
        if !found {
            return Ok(done(f64::INFINITY, trace));
        }
    }
    while hi - lo > LUX_RTOL * hi {
        let mid = 0.5 * (lo + hi);
        if eval(mid, &mut trace) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(done(hi, trace))
}

/// Luxemburg seminorm of `u` over `region`.
pub fn luxemburg_of(
    grid: &DomainGrid,
    u: &GridFunction,
    phi: &YoungFunction,
    region: &Region,
    engine: Engine,
) -> Result<LuxemburgResult> {
    luxemburg(&EnergyProfile::build(grid, u, region, engine)?, phi)
}

/// Balls `(x, y, r)` centred at random domain cells.
pub fn ball_plan(grid: &DomainGrid, count: usize, r_lo: f64, r_hi: f64, seed: u64) -> Result<Vec<(f64, f64, f64)>> {
    let inside: Vec<usize> = (0..grid.cells()).filter(|&k| grid.indicator()[k]).collect();
    if inside.is_empty() {
        return Err(Error::EmptyDomain);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count)
        .map(|_| {
            let (x, y) = grid.center_of(inside[rng.gen_range(0..inside.len())]);
            let r = r_lo * (r_hi / r_lo).powf(rng.gen::<f64>());
            (x, y, r)
        })
        .collect())
}

/// Fewest cells a ball must hold to enter a mean oscillation.
pub const MIN_BALL_CELLS: usize = 16;

fn ball_region(grid: &DomainGrid, u: &GridFunction, ball: (f64, f64, f64)) -> Result<Region> {
    let (x, y, r) = ball;
    let region = match u.support {
        Support::Omega => Region::omega_ball(grid, x, y, r),
        Support::Box => {
            let mut class = vec![ABSENT; grid.cells()];
            for k in grid.ball_cells(x, y, r) {
                class[k] = if grid.indicator()[k] { OMEGA } else { EXTERIOR };
            }
            Region::from_class(class)
        }
    };
    if region.len() < MIN_BALL_CELLS {
        return Err(Error::InvalidInput(format!(
            "ball ({x}, {y}, {r}) holds {} cells, fewer than {MIN_BALL_CELLS}",
            region.len()
        )));
    }
    Ok(region)
}

/// `mean_B |u - u_B|` over the supported cells of the ball.
pub fn mean_oscillation(grid: &DomainGrid, u: &GridFunction, ball: (f64, f64, f64)) -> Result<f64> {
    let region = ball_region(grid, u, ball)?;
    let m = u.mean(&region).expect("nonempty");
    let mut s = KahanSum::new();
    for k in region.cells() {
        s.add((u.values[k] - m).abs());
    }
    Ok(s.value() / region.len() as f64)
}

/// `max` of the mean oscillation over the balls of the plan.
pub fn bmo_norm(grid: &DomainGrid, u: &GridFunction, balls: &[(f64, f64, f64)]) -> Result<f64> {
    let mut best = 0.0f64;
    for &b in balls {
        best = best.max(mean_oscillation(grid, u, b)?);
    }
    Ok(best)
}

#[derive(Debug, Clone, Serialize)]
pub struct PoincareResult {
    pub mean_oscillation: f64,
    pub seminorm: f64,
    /// `phi^{-1}(omega_n^2) * seminorm`.
    pub bound: f64,
    /// `None` for a constant function, which passes trivially.
    pub ratio: Option<f64>,
}

/// `mean_B |u - u_B| / (phi^{-1}(omega_n^2) ||u||_{B(B cap Omega)})`.
pub fn poincare_check(
    grid: &DomainGrid,
    u: &GridFunction,
    ball: (f64, f64, f64),
    phi: &YoungFunction,
    engine: Engine,
) -> Result<PoincareResult> {
    let region = ball_region(grid, u, ball)?;
    let osc = mean_oscillation(grid, u, ball)?;
    let lux = luxemburg_of(grid, u, phi, &region, engine)?;
    let bound = phi.inverse(OMEGA_N * OMEGA_N)? * lux.alpha;
    let ratio = if osc == 0.0 && bound == 0.0 {
        None
    } else {
        Some(osc / bound)
    };
    Ok(PoincareResult {
        mean_oscillation: osc,
        seminorm: lux.alpha,
        bound,
        ratio,
    })
}

/// `mean_B exp((|u - u_B| / alpha)^gamma)`; `+inf` on overflow.
pub fn exp_integral_check(grid: &DomainGrid, u: &GridFunction, ball: (f64, f64, f64), alpha: f64, gamma: f64) -> Result<f64> {
    if !(alpha > 0.0) || !(gamma >= 1.0) {
        return Err(Error::InvalidInput(format!("need alpha > 0 and gamma >= 1, got {alpha}, {gamma}")));
    }
    let region = ball_region(grid, u, ball)?;
    let m = u.mean(&region).expect("nonempty");
    let mut s = KahanSum::new();
    for k in region.cells() {
        s.add(((u.values[k] - m).abs() / alpha).powf(gamma).exp());
    }
    let v = s.value() / region.len() as f64;
    Ok(if v.is_finite() { v } else { f64::INFINITY })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{DomainSpec, DEFAULT_CELL_CAP};

    fn square(n: usize) -> DomainGrid {
        let h = 1.0 / n as f64;
        DomainGrid::window(
            DomainSpec::Square { a: 1.0 },
            h,
            (-0.5, -0.5),
            (0.5, 0.5),
            false,
            DEFAULT_CELL_CAP,
        )
        .unwrap()
    }

    #[test]
    fn constants_have_zero_energy() {
        let g = square(16);
        let u = GridFunction::from_fn(&g, Support::Omega, |_, _| 5.0);
        let phi: YoungFunction = "power:3".parse().unwrap();
        let r = Region::omega(&g);
        assert_eq!(pair_energy(&g, &u, &phi, 1.0, &r).unwrap().value, 0.0);
        assert_eq!(luxemburg_of(&g, &u, &phi, &r, Engine::Direct).unwrap().alpha, 0.0);
    }

    #[test]
    fn power_energy_is_homogeneous() {
        let g = square(12);
        let u = GridFunction::from_fn(&g, Support::Omega, |x, y| x * x - y);
        let phi: YoungFunction = "power:3".parse().unwrap();
        let r = Region::omega(&g);
        let e1 = pair_energy(&g, &u, &phi, 1.0, &r).unwrap().value;
        let e2 = pair_energy(&g, &u, &phi, 2.0, &r).unwrap().value;
        assert!((e2 - e1 / 8.0).abs() < 1e-12 * e1);
        let lux = luxemburg_of(&g, &u, &phi, &r, Engine::Direct).unwrap();
        assert!((lux.alpha / e1.powf(1.0 / 3.0) - 1.0).abs() < 1e-3);
    }

    #[test]
    fn touching_weights_are_finite_and_ordered() {
        let w = CellWeights::new(1.0, 4.0);
        assert!(w.get(1, 0) > w.get(1, 1) && w.get(1, 1) > w.get(2, 0));
        assert_eq!(w.get(1, 0), w.get(0, 1));
    }

    #[test]
    fn outside_kernel_matches_disk_bound() {
        // Centre of a huge box: the outside lies beyond radius R = side/2,
        // and the integral is squeezed between the inscribed and
        // circumscribed disks, pi / R^2 and pi / (2 R^2).
        let r = 10.0;
        let k = outside_kernel(r, r, r, r);
        assert!(k < std::f64::consts::PI / (r * r) && k > std::f64::consts::PI / (2.0 * r * r));
        let near_edge = outside_kernel(0.01, 2.0 * r, r, r);
        assert!(near_edge > k);
    }

    #[test]
    fn tree_matches_direct() {
        let g = DomainGrid::window(DomainSpec::Disk { r: 1.0 }, 1.0 / 24.0, (-2.0, -2.0), (2.0, 2.0), false, DEFAULT_CELL_CAP)
            .unwrap();
        let u = GridFunction::from_fn(&g, Support::Box, |x, y| (x + 0.3 * y).sin() / (1.0 + x * x + y * y));
        let r = Region::whole(&g);
        let phi: YoungFunction = "power:3".parse().unwrap();
        let d = EnergyProfile::build(&g, &u, &r, Engine::Direct).unwrap();
        let t = EnergyProfile::build(&g, &u, &r, Engine::DEFAULT_TREE).unwrap();
        assert!(t.pair_terms < d.pair_terms / 4);
        let (ed, et) = (d.energy(&phi, 1.0), t.energy(&phi, 1.0));
        for (a, b) in [(ed.omega, et.omega), (ed.cross, et.cross), (ed.exterior, et.exterior)] {
            assert!((a / b - 1.0).abs() < 2e-3, "{a} vs {b}");
        }
    }

    #[test]
    fn profile_bins_reproduce_exact_energy() {
        let g = square(20);
        let u = GridFunction::from_fn(&g, Support::Omega, |x, y| (3.0 * x).sin() + y * y);
        let r = Region::omega(&g);
        let phi: YoungFunction = "powerlog:2,2".parse().unwrap();
        let p = EnergyProfile::build(&g, &u, &r, Engine::Direct).unwrap();
        for alpha in [0.1, 1.0, 10.0] {
            let exact = pair_energy(&g, &u, &phi, alpha, &r).unwrap().value;
            let binned = p.energy(&phi, alpha).total();
            assert!((binned / exact - 1.0).abs() < 1e-5, "{alpha}: {binned} vs {exact}");
        }
    }

    #[test]
    fn oscillation_and_exp_integral() {
        let g = DomainGrid::rasterize(DomainSpec::Disk { r: 1.0 }, 1.0 / 32.0, 4.0, DEFAULT_CELL_CAP).unwrap();
        let c = GridFunction::from_fn(&g, Support::Omega, |_, _| 2.0);
        assert_eq!(mean_oscillation(&g, &c, (0.0, 0.0, 0.5)).unwrap(), 0.0);
        assert_eq!(exp_integral_check(&g, &c, (0.0, 0.0, 0.5), 1.0, 1.0).unwrap(), 1.0);
        let u = GridFunction::from_fn(&g, Support::Omega, |x, _| x);
        let a = exp_integral_check(&g, &u, (0.0, 0.0, 0.9), 0.5, 1.0).unwrap();
        let b = exp_integral_check(&g, &u, (0.0, 0.0, 0.9), 1.0, 1.0).unwrap();
        assert!(a > b && b > 1.0);
        assert!(mean_oscillation(&g, &u, (0.0, 0.0, 0.01)).is_err());
    }
}
