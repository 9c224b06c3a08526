//! The extension operator `E`, its measured operator norm, the split of
//! the box energy by pair class, cutoff functions and the Ahlfors
//! regularity probe built from them.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{ahlfors_constant, DomainGrid, SamplingPlan};
use crate::norms::{
    ball_plan, exp_integral_check, luxemburg, luxemburg_by, luxemburg_of, pair_energy, split_energies,
    ClassEnergy, Engine, EnergyProfile, GridFunction, Region, SplitEnergy, Support, MIN_BALL_CELLS, OMEGA_N,
};
use crate::numeric::{bisect_monotone, KahanSum};
use crate::reflection::{epsilon0, ReflectionMap, ShellIndex};
use crate::whitney::{PartitionOfUnity, WhitneyCover};
use crate::young::YoungFunction;

/// Planar dimension used throughout.
const N: u32 = 2;

/// Relative tolerance of the sum identity checked by [`h_split`].
pub const SPLIT_RTOL: f64 = 1e-10;

/// Options for [`ExtensionContext::new`].
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct ExtensionOptions {
    /// Reflection scale; `epsilon0(C_A, gamma0, 2)` when unset.
    pub epsilon: Option<f64>,
    /// Ahlfors constant; measured with the default sampling plan when unset.
    pub c_a: Option<f64>,
    /// Cubes at least this large average over all of `Omega`. When unset,
    /// the smallest side among cubes meeting the box boundary, so that
    /// `Eu = u_Omega` along the box edge and beyond.
    pub sentinel_side: Option<f64>,
}

/// Everything `E` needs, built once per grid.
#[derive(Debug, Clone)]
pub struct ExtensionContext {
    grid: DomainGrid,
    cover: WhitneyCover,
    rmap: ReflectionMap,
    shells: ShellIndex,
    c_a: f64,
    /// `(layer cell, nearest domain cell)` for the uncovered boundary layer.
    layer: Vec<(usize, usize)>,
}

/// Constants measured while building a context.
#[derive(Debug, Clone, Serialize)]
pub struct ContextStats {
    pub c_a: f64,
    pub gamma0: usize,
    pub epsilon: f64,
    pub sentinel_side: f64,
    pub gamma1: f64,
    pub gamma2: usize,
    pub cubes: usize,
    pub sentinels: usize,
    pub boundary_layer: usize,
    pub shell_overlap: Vec<(u32, usize, f64)>,
}

impl ExtensionContext {
    pub fn new(grid: DomainGrid, opts: ExtensionOptions) -> Result<Self> {
        if !grid.bounded() {
            return Err(Error::InvalidInput("the extension needs a bounded domain".into()));
        }
        let cover = WhitneyCover::decompose(&grid)?;
        let c_a = match opts.c_a {
            Some(c) => c,
            None => ahlfors_constant(&grid, &SamplingPlan::default())?.c_inf,
        };
        let epsilon = match opts.epsilon {
            Some(e) => e,
            None => epsilon0(c_a, cover.gamma0(), N)?,
        };
        let threshold = match opts.sentinel_side {
            Some(t) => t,
            None => edge_side(&cover, &grid),
        };
        let rmap = ReflectionMap::build_with_threshold(&cover, &grid, epsilon, threshold)?;
        let shells = ShellIndex::build(&cover, &rmap, 3)?;
        let layer = cover
            .boundary_layer()
            .par_iter()
            .map(|&k| nearest_omega_cell(&grid, k).map(|s| (k, s)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            grid,
            cover,
            rmap,
            shells,
            c_a,
            layer,
        })
    }

    pub fn grid(&self) -> &DomainGrid {
        &self.grid
    }

    pub fn cover(&self) -> &WhitneyCover {
        &self.cover
    }

    pub fn reflection(&self) -> &ReflectionMap {
        &self.rmap
    }

    pub fn shells(&self) -> &ShellIndex {
        &self.shells
    }

    pub fn partition(&self) -> PartitionOfUnity<'_> {
        PartitionOfUnity::new(&self.cover)
    }

    pub fn stats(&self) -> ContextStats {
        ContextStats {
            c_a: self.c_a,
            gamma0: self.cover.gamma0(),
            epsilon: self.rmap.epsilon(),
            sentinel_side: self.rmap.threshold(),
            gamma1: self.rmap.gamma1(),
            gamma2: self.rmap.gamma2(),
            cubes: self.cover.len(),
            sentinels: self.rmap.sentinels(),
            boundary_layer: self.layer.len(),
            shell_overlap: self.shells.overlap.clone(),
        }
    }

    /// Flat mean of `u` over the domain cells.
    pub fn domain_mean(&self, u: &GridFunction) -> f64 {
        let ind = self.grid.indicator();
        let mut s = KahanSum::new();
        for (k, &v) in u.values().iter().enumerate() {
            if ind[k] {
                s.add(v);
            }
        }
        s.value() / self.grid.omega_cells() as f64
    }

    /// `u_{Q*}` for every cube; the sentinel gets `u_Omega`.
    pub fn averages(&self, u: &GridFunction) -> Vec<f64> {
        let whole = self.domain_mean(u);
        (0..self.cover.len())
            .into_par_iter()
            .map(|q| self.rmap.quasi_cube(q).average(u.values(), whole))
            .collect()
    }

    /// `Eu` on the whole box: `u` on the domain, `sum_Q phi_Q u_{Q*}` on
    /// covered complement cells and the nearest domain value on the
    /// boundary layer.
    pub fn extend(&self, u: &GridFunction) -> Result<GridFunction> {
        if u.support() != Support::Omega {
            return Err(Error::InvalidInput("extend takes a function on the domain".into()));
        }
        let avg = self.averages(u);
        let pou = self.partition();
        let grid = &self.grid;
        let ind = grid.indicator();
        let nx = grid.nx();
        let mut values = (0..grid.cells())
            .into_par_iter()
            .map(|k| -> Result<f64> {
                if ind[k] {
                    return Ok(u.value(k));
                }
                if self.cover.cube_of_cell(k).is_none() {
                    // Boundary layer, filled below.
                    return Ok(f64::NAN);
                }
                let (x, y) = grid.center_of(k);
                Ok(pou.weights(x, y)?.into_iter().map(|(q, w)| w * avg[q]).sum())
            })
            .collect::<Result<Vec<f64>>>()?;
        for &(k, s) in &self.layer {
            values[k] = u.value(s);
        }
        if let Some(k) = values.iter().position(|v| v.is_nan()) {
            return Err(Error::CoverGap { i: k % nx, j: k / nx });
        }
        GridFunction::from_values(grid, Support::Box, values)
    }

    /// `max |Eu - u_Omega|` over the outermost ring of cells, where the far
    /// tail assumes equality.
    pub fn edge_gap(&self, eu: &GridFunction, far_value: f64) -> f64 {
        let (nx, ny) = (self.grid.nx(), self.grid.ny());
        (0..self.grid.cells())
            .filter(|&k| {
                let (i, j) = (k % nx, k / nx);
                i == 0 || j == 0 || i + 1 == nx || j + 1 == ny
            })
            .map(|k| (eu.value(k) - far_value).abs())
            .fold(0.0, f64::max)
    }

    /// Binned energy of `Eu` over the box plus the far tail where
    /// `Eu = u_Omega`.
    pub fn profile(&self, u: &GridFunction, engine: Engine) -> Result<(GridFunction, EnergyProfile)> {
        let eu = self.extend(u)?;
        let whole = Region::whole(&self.grid);
        let mut profile = EnergyProfile::build(&self.grid, &eu, &whole, engine)?;
        profile.add_tail(&self.grid, &eu, &whole, self.domain_mean(u))?;
        Ok((eu, profile))
    }

    /// [`profile`](Self::profile) and [`h_split`] at each `(phi, alpha)`
    /// target from one quadrature pass.
    pub fn profile_split(
        &self,
        u: &GridFunction,
        engine: Engine,
        targets: &[(&YoungFunction, f64)],
    ) -> Result<(GridFunction, EnergyProfile, Vec<HSplit>)> {
        let eu = self.extend(u)?;
        let whole = Region::whole(&self.grid);
        let (mut profile, splits) = EnergyProfile::build_with_split(&self.grid, &eu, &whole, engine, targets)?;
        profile.add_tail(&self.grid, &eu, &whole, self.domain_mean(u))?;
        let splits = targets
            .iter()
            .zip(&splits)
            .map(|(&(_, alpha), s)| HSplit::new(alpha, s, None))
            .collect();
        Ok((eu, profile, splits))
    }
}

/// Smallest side among cubes touching the boundary of the grid box.
fn edge_side(cover: &WhitneyCover, grid: &DomainGrid) -> f64 {
    let n = grid.nx() as u64;
    (0..cover.len())
        .filter(|&q| {
            let c = cover.cube(q);
            let s = 1u64 << c.level;
            let (i, j) = (c.i as u64 * s, c.j as u64 * s);
            i == 0 || j == 0 || i + s == n || j + s == n
        })
        .map(|q| cover.side(q))
        .fold(f64::INFINITY, f64::min)
}

/// Closest domain cell centre to cell `k`, ties to the lower index.
fn nearest_omega_cell(grid: &DomainGrid, k: usize) -> Result<usize> {
    let (nx, ny) = (grid.nx() as isize, grid.ny() as isize);
    let (i, j) = ((k % grid.nx()) as isize, (k / grid.nx()) as isize);
    let ind = grid.indicator();
    let mut best: Option<(isize, usize)> = None;
    for ring in 1..nx.max(ny) {
        if let Some((d2, _)) = best {
            // Any cell on this ring is at least `ring` cells away.
            if ring * ring > d2 {
                break;
            }
        }
        for dj in -ring..=ring {
            for di in -ring..=ring {
                if di.abs().max(dj.abs()) != ring {
                    continue;
                }
                let (a, b) = (i + di, j + dj);
                if a < 0 || b < 0 || a >= nx || b >= ny {
                    continue;
                }
                let c = (b * nx + a) as usize;
                if !ind[c] {
                    continue;
                }
                let d2 = di * di + dj * dj;
                if best.is_none_or(|(bd, bc)| d2 < bd || (d2 == bd && c < bc)) {
                    best = Some((d2, c));
                }
            }
        }
    }
    best.map(|b| b.1).ok_or(Error::EmptyDomain)
}

/// Measured `||Eu|| / ||u||` for one function.
#[derive(Debug, Clone, Serialize)]
pub struct RatioReport {
    pub extended: f64,
    pub domain: f64,
    pub ratio: f64,
    /// Far-tail share of the box energy at `alpha = extended`.
    pub tail_energy: f64,
    pub pair_terms: u64,
}

/// Operator ratio from a profile made by [`ExtensionContext::profile`].
/// The domain seminorm reads the domain-domain classes of the same profile.
pub fn ratio_from_profile(profile: &EnergyProfile, phi: &YoungFunction) -> Result<RatioReport> {
    if !profile.has_tail {
        return Err(Error::InvalidInput("profile lacks the far tail".into()));
    }
    let domain = luxemburg_by(profile, phi, |e| e.omega)?.alpha;
    if domain == 0.0 {
        return Err(Error::UndefinedRatio("u is constant on the domain (0/0)".into()));
    }
    if !domain.is_finite() {
        return Err(Error::UndefinedRatio("domain seminorm is infinite".into()));
    }
    let extended = luxemburg(profile, phi)?.alpha;
    Ok(RatioReport {
        extended,
        domain,
        ratio: extended / domain,
        tail_energy: profile.energy(phi, extended).tail,
        pair_terms: profile.pair_terms,
    })
}

pub fn operator_ratio(ctx: &ExtensionContext, phi: &YoungFunction, u: &GridFunction, engine: Engine) -> Result<RatioReport> {
    let (_, profile) = ctx.profile(u, engine)?;
    ratio_from_profile(&profile, phi)
}

/// `H1 + 2 H2 + H3` against the class-blind total of the same quadrature
/// and, for the direct engine, against [`pair_energy`].
#[derive(Debug, Clone, Serialize)]
pub struct HSplit {
    pub alpha: f64,
    pub h1: f64,
    pub h2: f64,
    pub h3: f64,
    pub sum: f64,
    pub all_pairs: f64,
    pub direct: Option<f64>,
    /// Worst relative mismatch of `sum` against the totals above.
    pub residual: f64,
    pub saturated: bool,
}

impl HSplit {
    pub fn identity_holds(&self) -> bool {
        self.residual <= SPLIT_RTOL
    }
}

pub fn h_split(ctx: &ExtensionContext, phi: &YoungFunction, u: &GridFunction, alpha: f64, engine: Engine) -> Result<HSplit> {
    let eu = ctx.extend(u)?;
    h_split_of(ctx.grid(), &eu, phi, alpha, engine)
}

/// [`h_split`] for an already extended function.
pub fn h_split_of(grid: &DomainGrid, eu: &GridFunction, phi: &YoungFunction, alpha: f64, engine: Engine) -> Result<HSplit> {
    Ok(h_splits_of(grid, eu, &[(phi, alpha)], engine)?.remove(0))
}

/// [`h_split_of`] for several `(phi, alpha)` targets in one quadrature pass.
pub fn h_splits_of(
    grid: &DomainGrid,
    eu: &GridFunction,
    targets: &[(&YoungFunction, f64)],
    engine: Engine,
) -> Result<Vec<HSplit>> {
    let whole = Region::whole(grid);
    let splits = split_energies(grid, eu, &whole, engine, targets)?;
    targets
        .iter()
        .zip(&splits)
        .map(|(&(phi, alpha), split)| {
            let direct = match engine {
                Engine::Direct => Some(pair_energy(grid, eu, phi, alpha, &whole)?.value),
                Engine::Tree { .. } => None,
            };
            Ok(HSplit::new(alpha, split, direct))
        })
        .collect()
}

impl HSplit {
    fn new(alpha: f64, s: &SplitEnergy, direct: Option<f64>) -> Self {
        let ClassEnergy {
            omega: h1,
            cross: h2,
            exterior: h3,
            ..
        } = s.classes;
        let sum = h1 + 2.0 * h2 + h3;
        let rel = |t: f64| {
            if sum == t {
                0.0
            } else {
                (sum - t).abs() / t.abs().max(sum.abs())
            }
        };
        Self {
            alpha,
            h1,
            h2,
            h3,
            sum,
            all_pairs: s.all_pairs,
            direct,
            residual: rel(s.all_pairs).max(direct.map_or(0.0, rel)),
            saturated: s.saturated,
        }
    }
}

/// `u_{x,r,t}`: one on `B(x, r)`, a linear ramp to zero at `|z - x| = t`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CutoffSpec {
    pub x: f64,
    pub y: f64,
    pub r: f64,
    pub t: f64,
}

impl CutoffSpec {
    pub fn validate(&self, grid: &DomainGrid) -> Result<()> {
        if !(self.r > 0.0 && self.r < self.t && self.t < grid.diam()) {
            return Err(Error::InvalidInput(format!(
                "cutoff radii need 0 < r < t < diam = {}, got r = {}, t = {}",
                grid.diam(),
                self.r,
                self.t
            )));
        }
        let inside = match grid.spec() {
            Some(s) => s.contains(self.x, self.y),
            None => grid
                .cell_of(self.x, self.y)
                .is_some_and(|(i, j)| grid.inside(i, j)),
        };
        if !inside {
            return Err(Error::InvalidInput(format!(
                "cutoff centre ({}, {}) is not in the domain",
                self.x, self.y
            )));
        }
        Ok(())
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let d = (x - self.x).hypot(y - self.y);
        if d <= self.r {
            1.0
        } else if d < self.t {
            (self.t - d) / (self.t - self.r)
        } else {
            0.0
        }
    }
}

pub fn cutoff(spec: &CutoffSpec, grid: &DomainGrid) -> Result<GridFunction> {
    spec.validate(grid)?;
    Ok(GridFunction::from_fn(grid, Support::Omega, |x, y| spec.eval(x, y)))
}

/// `8 omega_n [C_phi 4^n + 1] / phi^{-1}((t - r)^n / |B(x, t) cap Omega|)`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CutoffBound {
    pub bound: f64,
    pub constant: f64,
    pub c_phi: f64,
    pub measure: f64,
}

/// `8 omega_n [C_phi 4^n + 1]`.
pub fn cutoff_constant(phi: &YoungFunction) -> Result<(f64, f64)> {
    let c_phi = phi
        .compute_cphi(N)?
        .value
        .ok_or_else(|| Error::Refused(format!("C_phi diverges for {phi}; the cutoff bound is void")))?;
    Ok((8.0 * OMEGA_N * (c_phi * 4f64.powi(N as i32) + 1.0), c_phi))
}

pub fn cutoff_bound(spec: &CutoffSpec, grid: &DomainGrid, phi: &YoungFunction) -> Result<CutoffBound> {
    spec.validate(grid)?;
    let measure = grid.ball_measure(spec.x, spec.y, spec.t);
    if measure <= 0.0 {
        return Err(Error::InvalidInput("B(x, t) holds no domain cell".into()));
    }
    let (constant, c_phi) = cutoff_constant(phi)?;
    let arg = (spec.t - spec.r).powi(N as i32) / measure;
    Ok(CutoffBound {
        bound: constant / phi.inverse(arg)?,
        constant,
        c_phi,
        measure,
    })
}

/// A named function of the battery, in coordinates centred on the domain
/// and scaled by its half diameter.
#[derive(Debug, Clone, Copy)]
pub struct TestFunction {
    pub name: &'static str,
    f: fn(f64, f64) -> f64,
}

impl TestFunction {
    pub const fn new(name: &'static str, f: fn(f64, f64) -> f64) -> Self {
        Self { name, f }
    }

    pub fn sample(&self, grid: &DomainGrid) -> GridFunction {
        let spec = grid.spec();
        let (cx, cy, s) = match spec {
            Some(sp) => {
                let (xa, ya, xb, yb) = sp.extent();
                (0.5 * (xa + xb), 0.5 * (ya + yb), 0.5 * sp.diam())
            }
            None => {
                let ((x0, y0), (x1, y1)) = grid.bbox();
                (0.5 * (x0 + x1), 0.5 * (y0 + y1), 0.5 * grid.diam())
            }
        };
        let f = self.f;
        GridFunction::from_fn(grid, Support::Omega, move |x, y| f((x - cx) / s, (y - cy) / s))
    }
}

fn bump(x: f64, y: f64, s: f64) -> f64 {
    (-((x - 0.3).powi(2) + (y - 0.2).powi(2)) / (s * s)).exp()
}

fn ramp(x: f64, y: f64, s: f64) -> f64 {
    (0.5 + (x + 0.5 * y) / s).clamp(0.0, 1.0)
}

fn wave(x: f64, y: f64, s: f64) -> f64 {
    (std::f64::consts::PI * x / s).sin() * (std::f64::consts::PI * y / s).cos()
}

fn ripple(x: f64, y: f64, s: f64) -> f64 {
    (std::f64::consts::PI * x.hypot(y) / s).cos()
}

/// The fixed twelve-function battery: bumps, ramps, product waves and
/// radial ripples, each at three scales.
pub fn battery() -> [TestFunction; 12] {
    [
        TestFunction { name: "bump_0.6", f: |x, y| bump(x, y, 0.6) },
        TestFunction { name: "bump_0.3", f: |x, y| bump(x, y, 0.3) },
        TestFunction { name: "bump_0.15", f: |x, y| bump(x, y, 0.15) },
        TestFunction { name: "ramp_2", f: |x, y| ramp(x, y, 2.0) },
        TestFunction { name: "ramp_1", f: |x, y| ramp(x, y, 1.0) },
        TestFunction { name: "ramp_0.5", f: |x, y| ramp(x, y, 0.5) },
        TestFunction { name: "wave_1", f: |x, y| wave(x, y, 1.0) },
        TestFunction { name: "wave_0.5", f: |x, y| wave(x, y, 0.5) },
        TestFunction { name: "wave_0.25", f: |x, y| wave(x, y, 0.25) },
        TestFunction { name: "ripple_1", f: |x, y| ripple(x, y, 1.0) },
        TestFunction { name: "ripple_0.5", f: |x, y| ripple(x, y, 0.5) },
        TestFunction { name: "ripple_0.25", f: |x, y| ripple(x, y, 0.25) },
    ]
}

/// Twenty smooth functions for the Poincare check: the smooth members of
/// the battery and eleven polynomial or analytic ones.
pub fn smooth_family() -> Vec<TestFunction> {
    let mut out: Vec<TestFunction> = battery().into_iter().filter(|t| !t.name.starts_with("ramp")).collect();
    out.extend([
        TestFunction::new("x", |x, _| x),
        TestFunction::new("y", |_, y| y),
        TestFunction::new("saddle", |x, y| x * x - y * y),
        TestFunction::new("xy", |x, y| x * y),
        TestFunction::new("cubic", |x, y| x * x * x - 3.0 * x * y * y),
        TestFunction::new("expcos", |x, y| x.exp() * y.cos()),
        TestFunction::new("expsin", |x, y| y.exp() * x.sin()),
        TestFunction::new("oblique", |x, y| (2.0 * x + y).sin()),
        TestFunction::new("lorentz", |x, y| 1.0 / (1.0 + x * x + y * y)),
        TestFunction::new("square", |x, y| (x + y) * (x + y)),
        TestFunction::new("log", |x, y| (2.5 + x + 0.5 * y).ln()),
    ]);
    out
}

/// Empirical imbedding constant: the least `C` with
/// `mean_B exp(|u - u_B| / (C ||u||)) <= 2` on every sampled ball, maximized
/// over the functions.
#[derive(Debug, Clone, Serialize)]
pub struct ImbeddingCalibration {
    pub c_i: f64,
    pub per_function: Vec<(String, f64)>,
    pub balls: usize,
}

pub fn calibrate_imbedding(
    grid: &DomainGrid,
    phi: &YoungFunction,
    functions: &[(String, GridFunction)],
    balls: usize,
    seed: u64,
    engine: Engine,
) -> Result<ImbeddingCalibration> {
    let h = grid.h();
    let plan: Vec<(f64, f64, f64)> = ball_plan(grid, balls, 8.0 * h, grid.diam(), seed)?
        .into_iter()
        .filter(|&(x, y, r)| grid.ball_count(x, y, r) >= MIN_BALL_CELLS)
        .collect();
    if plan.is_empty() {
        return Err(Error::InvalidInput("no usable ball for the calibration".into()));
    }
    let omega = Region::omega(grid);
    let mut per_function = Vec::new();
    let mut c_i = 0.0f64;
    for (name, u) in functions {
        let norm = luxemburg_of(grid, u, phi, &omega, engine)?.alpha;
        if !(norm > 0.0 && norm.is_finite()) {
            continue;
        }
        let mut worst = 0.0f64;
        for &ball in &plan {
            let ok = |c: f64| exp_integral_check(grid, u, ball, c * norm, 1.0).map(|v| v <= 2.0);
            if ok(worst.max(1e-12))? {
                continue;
            }
            let mut hi = 2.0 * worst.max(1e-6);
            while !ok(hi)? {
                hi *= 2.0;
            }
            let (_, c) = bisect_monotone(|c| !ok(c).unwrap_or(false), worst.max(1e-12), hi, 1e-6, 200);
            worst = c;
        }
        c_i = c_i.max(worst);
        per_function.push((name.clone(), worst));
    }
    if per_function.is_empty() {
        return Err(Error::InvalidInput("every calibration function is constant".into()));
    }
    Ok(ImbeddingCalibration {
        c_i,
        per_function,
        balls: plan.len(),
    })
}

/// One link of the halving chain.
#[derive(Debug, Clone, Serialize)]
pub struct ChainRow {
    pub j: u32,
    pub b: f64,
    pub gap: f64,
    /// `ln (b_j - b_{j+1})^n`.
    pub ln_lhs: f64,
    /// `ln [2^{-j} m phi(C ln(2^j 2 C(n) / m))]` with `m = |B cap Omega| / r^n`.
    pub ln_rhs: f64,
    pub holds: bool,
    pub partial_sum: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ProbeReport {
    pub x: f64,
    pub y: f64,
    pub r: f64,
    pub measure: f64,
    /// `|B(x, r) cap Omega| / r^n`.
    pub density: f64,
    pub b: Vec<f64>,
    pub rows: Vec<ChainRow>,
    pub chain_holds: bool,
    /// `C = 2 C_I C_L` with `C_L` the cutoff constant.
    pub c_chain: f64,
    pub c_i: f64,
    pub c_n: f64,
    /// `ln` of the density lower bound the chain implies.
    pub ln_implied_density: f64,
    pub b1_large: bool,
    /// Recentred point `x'` with `|x - x'| = b_1 r + r / 5` when `b_1 < 1/10`.
    pub recentre: Option<(f64, f64)>,
}

/// Constant of the exponential imbedding on balls: `exp` averages at most
/// 2 over `B cap Omega`, so the integral is at most `2 omega_n r^n / n`.
pub const C_N: f64 = 2.0 * std::f64::consts::PI;

/// Halving radii `b_j` around `(x, y)` and the chain inequality, with every
/// constant taken from measured quantities.
pub fn necessity_probe(grid: &DomainGrid, phi: &YoungFunction, c_i: f64, x: f64, y: f64, r: f64, jmax: u32) -> Result<ProbeReport> {
    let sub = phi.check_subexponential();
    if !sub.holds {
        return Err(Error::Refused(format!(
            "{phi} grows at least exponentially; the chain needs phi(t) <= C(delta) e^(delta t) for every delta"
        )));
    }
    if !(c_i > 0.0 && c_i.is_finite()) || !(r > 0.0) {
        return Err(Error::InvalidInput("probe needs C_I > 0 and r > 0".into()));
    }
    let measure = grid.ball_measure(x, y, r);
    if measure <= 0.0 {
        return Err(Error::InvalidInput("B(x, r) holds no domain cell".into()));
    }
    let n = N as i32;
    let density = measure / r.powi(n);
    let h = grid.h();

    let mut b = vec![1.0];
    for j in 1..=jmax {
        let prev = *b.last().expect("b0");
        if prev * r < 4.0 * h {
            break;
        }
        let target = measure * 0.5f64.powi(j as i32);
        let (_, hi) = bisect_monotone(|s| grid.ball_measure(x, y, s * r) < target, 0.0, prev, 1e-9, 200);
        b.push(hi);
    }

    let (c_l, _) = cutoff_constant(phi)?;
    let c_chain = 2.0 * c_i * c_l;
    let mut rows = Vec::new();
    let mut partial = 0.0;
    for j in 1..b.len().saturating_sub(1) {
        let gap = b[j] - b[j + 1];
        partial += gap;
        let ln_lhs = n as f64 * gap.ln();
        let jf = j as f64;
        let arg = c_chain * (jf * std::f64::consts::LN_2 + (2.0 * C_N / density).ln());
        let ln_rhs = -jf * std::f64::consts::LN_2 + density.ln() + phi.ln_eval(arg);
        rows.push(ChainRow {
            j: j as u32,
            b: b[j],
            gap,
            ln_lhs,
            ln_rhs,
            holds: ln_lhs <= ln_rhs,
            partial_sum: partial,
        });
    }

    // phi(t) <= C(d) e^{d t} with d = 1 / (2 C) turns the chain into a
    // geometric series: b_1 <= K m^{1/(2n)}.
    let delta = 0.5 / c_chain;
    let ln_c_delta = (0..=4000)
        .map(|i| {
            let t = 10f64.powf(-6.0 + i as f64 * 0.005);
            phi.ln_eval(t) - delta * t
        })
        .fold(0.0f64, f64::max);
    let nf = n as f64;
    let ln_k = (ln_c_delta + 0.5 * (2.0 * C_N).ln()) / nf - (2f64.powf(0.5 / nf) - 1.0).ln();
    let b1 = b.get(1).copied().unwrap_or(f64::NAN);
    let ln_implied_density = 2.0 * nf * (b1.ln() - ln_k);
    let b1_large = b1 >= 0.1;
    let recentre = if b1_large {
        None
    } else {
        let rho = b1 * r + 0.2 * r;
        (0..720).find_map(|i| {
            let a = i as f64 * std::f64::consts::PI / 360.0;
            let (px, py) = (x + rho * a.cos(), y + rho * a.sin());
            grid.cell_of(px, py)
                .filter(|&(ci, cj)| grid.inside(ci, cj))
                .map(|_| (px, py))
        })
    };
    Ok(ProbeReport {
        x,
        y,
        r,
        measure,
        density,
        chain_holds: rows.iter().all(|r| r.holds),
        b,
        rows,
        c_chain,
        c_i,
        c_n: C_N,
        ln_implied_density,
        b1_large,
        recentre,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{DomainSpec, DEFAULT_CELL_CAP};

    fn disk(h: f64) -> DomainGrid {
        DomainGrid::rasterize(DomainSpec::Disk { r: 1.0 }, h, 4.0, DEFAULT_CELL_CAP).unwrap()
    }

    #[test]
    fn worked_cutoff_bound() {
        let g = disk(0.01);
        let phi = YoungFunction::parse("power:3", 2).unwrap();
        let spec = CutoffSpec { x: 0.0, y: 0.0, r: 0.25, t: 0.5 };
        let b = cutoff_bound(&spec, &g, &phi).unwrap();
        let expect = 16.0 * std::f64::consts::PI * 17.0 * (4.0 * std::f64::consts::PI).powf(1.0 / 3.0);
        assert!((expect - 1986.653).abs() < 1e-3, "{expect}");
        assert!((b.bound / expect - 1.0).abs() < 0.01, "{} vs {expect}", b.bound);
    }

    #[test]
    fn cutoff_shape() {
        let g = disk(0.05);
        let spec = CutoffSpec { x: 0.1, y: 0.0, r: 0.2, t: 0.5 };
        let u = cutoff(&spec, &g).unwrap();
        for k in 0..g.cells() {
            if !g.indicator()[k] {
                continue;
            }
            let (x, y) = g.center_of(k);
            let d = (x - 0.1).hypot(y);
            if d <= 0.2 {
                assert_eq!(u.value(k), 1.0);
            } else if d >= 0.5 {
                assert_eq!(u.value(k), 0.0);
            }
        }
        assert!(cutoff(&CutoffSpec { x: 0.0, y: 0.0, r: 0.5, t: 0.4 }, &g).is_err());
        assert!(cutoff(&CutoffSpec { x: 3.0, y: 0.0, r: 0.1, t: 0.4 }, &g).is_err());
    }

    #[test]
    fn probe_halves_the_disk() {
        let g = disk(0.01);
        let phi = YoungFunction::parse("power:3", 2).unwrap();
        let p = necessity_probe(&g, &phi, 1.0, 0.0, 0.0, 1.0, 8).unwrap();
        assert_eq!(p.b[0], 1.0);
        assert!((p.b[1] - 0.5f64.sqrt()).abs() < 0.01, "{}", p.b[1]);
        assert!(p.b.windows(2).all(|w| w[1] < w[0]));
        assert!(p.chain_holds);
        assert!(p.b1_large);
        let exp = YoungFunction::parse("exptaylor:1,1", 2).unwrap();
        assert!(matches!(necessity_probe(&g, &exp, 1.0, 0.0, 0.0, 1.0, 8), Err(Error::Refused(_))));
    }
}
