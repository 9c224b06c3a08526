//! Reflected quasi-cubes: for each small Whitney cube `Q`, a region `Q*`
//! inside the domain near the boundary point closest to `Q`, built so the
//! family has bounded overlap. Large cubes reflect onto the whole domain.
//!
//! `Q*` is kept as an exact union of axis-aligned rectangles clipped to
//! domain cells. The seed squares `eps Q~*` are often far smaller than a
//! cell, and a centre-sampled representation would lose them entirely.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{DomainGrid, DomainSpec};
use crate::whitney::WhitneyCover;

/// `[C_A / (2 gamma0)]^{1/n} / (30 sqrt n)`.
pub fn epsilon0(c_a: f64, gamma0: usize, n: u32) -> Result<f64> {
    if !(c_a > 0.0 && c_a.is_finite()) || gamma0 == 0 || n == 0 {
        return Err(Error::InvalidInput(format!(
            "epsilon0 needs C_A > 0 and gamma0 >= 1, got C_A = {c_a}, gamma0 = {gamma0}"
        )));
    }
    let nf = n as f64;
    Ok((c_a / (2.0 * gamma0 as f64)).powf(1.0 / nf) / (30.0 * nf.sqrt()))
}

/// Axis-aligned rectangle `[x0, x1) x [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    pub fn square(c: (f64, f64), side: f64) -> Self {
        let r = 0.5 * side;
        Self {
            x0: c.0 - r,
            y0: c.1 - r,
            x1: c.0 + r,
            y1: c.1 + r,
        }
    }

    pub fn area(&self) -> f64 {
        (self.x1 - self.x0).max(0.0) * (self.y1 - self.y0).max(0.0)
    }

    pub fn intersect(&self, o: &Rect) -> Option<Rect> {
        let r = Rect {
            x0: self.x0.max(o.x0),
            y0: self.y0.max(o.y0),
            x1: self.x1.min(o.x1),
            y1: self.y1.min(o.y1),
        };
        (r.x0 < r.x1 && r.y0 < r.y1).then_some(r)
    }

    /// Closed rectangles meet.
    pub fn meets(&self, o: &Rect) -> bool {
        self.x0 <= o.x1 && o.x0 <= self.x1 && self.y0 <= o.y1 && o.y0 <= self.y1
    }

    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        self.x0 < x && x < self.x1 && self.y0 < y && y < self.y1
    }

    /// `self` minus the union of `holes`, as disjoint rectangles.
    fn minus(&self, holes: &[Rect]) -> Vec<Rect> {
        let cut: Vec<Rect> = holes.iter().filter_map(|h| self.intersect(h)).collect();
        if cut.is_empty() {
            return vec![*self];
        }
        let mut xs = vec![self.x0, self.x1];
        let mut ys = vec![self.y0, self.y1];
        for c in &cut {
            xs.extend([c.x0, c.x1]);
            ys.extend([c.y0, c.y1]);
        }
        for v in [&mut xs, &mut ys] {
            v.sort_by(f64::total_cmp);
            v.dedup();
        }
        let mut out = Vec::new();
        for yw in ys.windows(2) {
            for xw in xs.windows(2) {
                let (mx, my) = (0.5 * (xw[0] + xw[1]), 0.5 * (yw[0] + yw[1]));
                let covered = cut
                    .iter()
                    .any(|c| c.x0 <= mx && mx <= c.x1 && c.y0 <= my && my <= c.y1);
                if !covered {
                    out.push(Rect {
                        x0: xw[0],
                        y0: yw[0],
                        x1: xw[1],
                        y1: yw[1],
                    });
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub enum QuasiCube {
    /// `Q* = Omega` for cubes too large to reflect.
    WholeDomain,
    Region {
        xstar: (f64, f64),
        /// Seed square `eps Q~*`.
        seed: Rect,
        /// Disjoint pieces, each inside one domain cell, with the cell index.
        pieces: Vec<(usize, Rect)>,
        area: f64,
    },
}

impl QuasiCube {
    pub fn is_whole_domain(&self) -> bool {
        matches!(self, QuasiCube::WholeDomain)
    }

    /// Number of distinct domain cells the region touches.
    pub fn cell_count(&self) -> usize {
        match self {
            QuasiCube::WholeDomain => 0,
            QuasiCube::Region { pieces, .. } => {
                let mut c: Vec<usize> = pieces.iter().map(|p| p.0).collect();
                c.dedup();
                c.len()
            }
        }
    }

    /// Area-weighted average of cell values over the region, or `whole`
    /// for the sentinel.
    pub fn average(&self, values: &[f64], whole: f64) -> f64 {
        match self {
            QuasiCube::WholeDomain => whole,
            QuasiCube::Region { pieces, area, .. } => {
                pieces.iter().map(|(c, r)| values[*c] * r.area()).sum::<f64>() / area
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct ReflectionMap {
    epsilon: f64,
    /// Cubes with side below this are reflected; `inf` when unbounded.
    threshold: f64,
    quasi: Vec<QuasiCube>,
    subtracted: Vec<usize>,
    gamma1: f64,
    gamma2: usize,
}

impl ReflectionMap {
    /// Builds `Q*` for every cube of the cover.
    ///
    /// `x*_Q` is the exact nearest boundary point where the domain has a
    /// closed form, else the centre of the nearest domain boundary cell
    /// (ties broken by `(x, y)`). `Q~*` is the square of side `l_Q` there and
    /// `Q* = (eps Q~* cap Omega) \ U { eps P~* : P in A_Q }` where `A_Q`
    /// collects the other small cubes with `l_P <= eps l_Q` whose seeds meet.
    pub fn build(cover: &WhitneyCover, grid: &DomainGrid, epsilon: f64) -> Result<Self> {
        let threshold = if grid.bounded() {
            grid.diam() / epsilon
        } else {
            f64::INFINITY
        };
        Self::build_with_threshold(cover, grid, epsilon, threshold)
    }

    /// As [`build`](Self::build), but cubes of side `>= threshold` get
    /// `Q* = Omega`.
    pub fn build_with_threshold(cover: &WhitneyCover, grid: &DomainGrid, epsilon: f64, threshold: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::InvalidInput(format!("epsilon must be positive, got {epsilon}")));
        }
        if !(threshold > 0.0) {
            return Err(Error::InvalidInput(format!("sentinel threshold must be positive, got {threshold}")));
        }
        let small: Vec<bool> = (0..cover.len()).map(|q| cover.side(q) < threshold).collect();

        // Reflected points first; the regions below only read them.
        let analytic = grid.spec().filter(|s| !matches!(s, DomainSpec::Cusp { .. }));
        let bindex = match analytic {
            Some(_) => None,
            None => Some(BoundaryIndex::new(grid)?),
        };
        let xstar: Vec<Option<(f64, f64)>> = (0..cover.len())
            .into_par_iter()
            .map(|q| {
                small[q].then(|| match (analytic, &bindex) {
                    (Some(spec), _) => {
                        let lo = cover.lower_corner(q);
                        let l = cover.side(q);
                        spec.nearest_boundary_point(lo, (lo.0 + l, lo.1 + l))
                            .expect("closed form")
                    }
                    (None, Some(b)) => b.nearest(cover, q),
                    (None, None) => unreachable!(),
                })
            })
            .collect();

        // Cubes indexed by the cell of their reflected point.
        let nx = grid.nx();
        let mut by_cell: Vec<(usize, usize)> = xstar
            .iter()
            .enumerate()
            .filter_map(|(q, p)| p.map(|p| (cell_index(grid, p), q)))
            .collect();
        by_cell.sort_unstable();
        let h = grid.h();

        let built: Vec<(QuasiCube, usize)> = (0..cover.len())
            .into_par_iter()
            .map(|q| -> Result<(QuasiCube, usize)> {
                let Some(xs) = xstar[q] else {
                    return Ok((QuasiCube::WholeDomain, 0));
                };
                let l = cover.side(q);
                let seed = Rect::square(xs, epsilon * l);
                // A_Q: seeds of small cubes within reach of this seed.
                let reach = epsilon * l;
                let (ci, cj) = (cell_index(grid, xs) % nx, cell_index(grid, xs) / nx);
                let k = (reach / h).ceil() as isize + 1;
                let mut holes = Vec::new();
                for j in (cj as isize - k).max(0)..=(cj as isize + k).min(grid.ny() as isize - 1) {
                    for i in (ci as isize - k).max(0)..=(ci as isize + k).min(nx as isize - 1) {
                        let cell = j as usize * nx + i as usize;
                        let lo = by_cell.partition_point(|e| e.0 < cell);
                        for &(c, p) in &by_cell[lo..] {
                            if c != cell {
                                break;
                            }
                            if p == q {
                                continue;
                            }
                            let lp = cover.side(p);
                            if lp > epsilon * l {
                                continue;
                            }
                            let ps = Rect::square(xstar[p].expect("small"), epsilon * lp);
                            if ps.meets(&seed) {
                                holes.push(ps);
                            }
                        }
                    }
                }
                let mut pieces = Vec::new();
                for part in clip_to_domain(grid, &seed) {
                    for (cell, r) in split_by_cells(grid, &part) {
                        for r in r.minus(&holes) {
                            pieces.push((cell, r));
                        }
                    }
                }
                let area: f64 = pieces.iter().map(|p| p.1.area()).sum();
                if !(area > 0.0) {
                    return Err(Error::EmptyQuasiCube {
                        cube: q,
                        level: cover.cube(q).level,
                        side: l,
                    });
                }
                Ok((
                    QuasiCube::Region {
                        xstar: xs,
                        seed,
                        pieces,
                        area,
                    },
                    holes.len(),
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        let (quasi, subtracted): (Vec<QuasiCube>, Vec<usize>) = built.into_iter().unzip();

        let mut gamma1 = 0.0f64;
        for (q, qc) in quasi.iter().enumerate() {
            if let QuasiCube::Region { area, .. } = qc {
                let l = cover.side(q);
                gamma1 = gamma1.max(l * l / area);
            }
        }
        let gamma2 = max_depth(quasi.iter().filter_map(|qc| match qc {
            QuasiCube::Region { pieces, .. } => Some(pieces.iter().map(|p| p.1)),
            QuasiCube::WholeDomain => None,
        }));
        Ok(Self {
            epsilon,
            threshold,
            quasi,
            subtracted,
            gamma1,
            gamma2,
        })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn quasi_cube(&self, q: usize) -> &QuasiCube {
        &self.quasi[q]
    }

    pub fn len(&self) -> usize {
        self.quasi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.quasi.is_empty()
    }

    /// `max |Q| / |Q*|` over reflected cubes.
    pub fn gamma1(&self) -> f64 {
        self.gamma1
    }

    /// Maximal pointwise overlap of the reflected regions.
    pub fn gamma2(&self) -> usize {
        self.gamma2
    }

    pub fn sentinels(&self) -> usize {
        self.quasi.iter().filter(|q| q.is_whole_domain()).count()
    }

    /// Cubes whose seed had other seeds subtracted from it.
    pub fn subtracting_cubes(&self) -> usize {
        self.subtracted.iter().filter(|&&s| s > 0).count()
    }

    /// Asserts containment `Q~* subset 10 sqrt2 Q` and disjointness from
    /// the subtracted seeds; returns the summary.
    pub fn check(&self, cover: &WhitneyCover) -> Result<ReflectionStats> {
        let lim = 5.0 * std::f64::consts::SQRT_2;
        for (q, qc) in self.quasi.iter().enumerate() {
            let QuasiCube::Region { xstar, pieces, seed, .. } = qc else {
                continue;
            };
            let l = cover.side(q);
            let (cx, cy) = cover.center(q);
            let off = (xstar.0 - cx).abs().max((xstar.1 - cy).abs());
            if off + 0.5 * l > lim * l * (1.0 + 1e-12) {
                return Err(Error::invariant(
                    "reflection",
                    format!("reflected cube of cube {q} leaves 10 sqrt2 Q"),
                ));
            }
            for (_, r) in pieces {
                if r.x0 < seed.x0 || r.x1 > seed.x1 || r.y0 < seed.y0 || r.y1 > seed.y1 {
                    return Err(Error::invariant("reflection", "piece outside its seed"));
                }
            }
        }
        Ok(ReflectionStats {
            epsilon: self.epsilon,
            threshold: self.threshold,
            gamma1: self.gamma1,
            gamma2: self.gamma2,
            reflected: self.quasi.len() - self.sentinels(),
            sentinels: self.sentinels(),
            subtracting_cubes: self.subtracting_cubes(),
            max_cells: self.quasi.iter().map(QuasiCube::cell_count).max().unwrap_or(0),
        })
    }

    /// CSV dump `cube_id,xstar_x,xstar_y,qstar_cells,sentinel`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "cube_id,xstar_x,xstar_y,qstar_cells,sentinel")?;
        for (q, qc) in self.quasi.iter().enumerate() {
            match qc {
                QuasiCube::WholeDomain => writeln!(w, "{q},,,0,1")?,
                QuasiCube::Region { xstar, .. } => {
                    writeln!(w, "{q},{},{},{},0", xstar.0, xstar.1, qc.cell_count())?
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ReflectionStats {
    pub epsilon: f64,
    pub threshold: f64,
    pub gamma1: f64,
    pub gamma2: usize,
    pub reflected: usize,
    pub sentinels: usize,
    pub subtracting_cubes: usize,
    pub max_cells: usize,
}

fn cell_index(grid: &DomainGrid, p: (f64, f64)) -> usize {
    let (i, j) = cell_coords(grid, p.0, p.1);
    grid.idx(i, j)
}

fn cell_coords(grid: &DomainGrid, x: f64, y: f64) -> (usize, usize) {
    let ((x0, y0), _) = grid.bbox();
    let h = grid.h();
    let i = (((x - x0) / h).floor().max(0.0) as usize).min(grid.nx() - 1);
    let j = (((y - y0) / h).floor().max(0.0) as usize).min(grid.ny() - 1);
    (i, j)
}

/// Sub-squares per side used to resolve a seed against a curved boundary.
const CURVED_SPLIT: usize = 8;

/// The part of `seed` inside the domain, as disjoint rectangles. Uses the
/// exact domain where it has one and the raster otherwise.
fn clip_to_domain(grid: &DomainGrid, seed: &Rect) -> Vec<Rect> {
    let ((bx0, by0), (bx1, by1)) = grid.bbox();
    let bbox = Rect {
        x0: bx0,
        y0: by0,
        x1: bx1,
        y1: by1,
    };
    let Some(seed) = seed.intersect(&bbox) else {
        return Vec::new();
    };
    match grid.spec() {
        Some(DomainSpec::Square { a }) => {
            let s = 0.5 * a;
            seed.intersect(&Rect { x0: -s, y0: -s, x1: s, y1: s }).into_iter().collect()
        }
        Some(DomainSpec::HalfPlane { .. }) => seed
            .intersect(&Rect { x0: bx0, y0: 0.0, x1: bx1, y1: by1 })
            .into_iter()
            .collect(),
        Some(spec @ (DomainSpec::Disk { .. } | DomainSpec::Annulus { .. })) => {
            let m = CURVED_SPLIT;
            let (dx, dy) = ((seed.x1 - seed.x0) / m as f64, (seed.y1 - seed.y0) / m as f64);
            let mut out = Vec::new();
            for b in 0..m {
                for a in 0..m {
                    let r = Rect {
                        x0: seed.x0 + a as f64 * dx,
                        y0: seed.y0 + b as f64 * dy,
                        x1: if a + 1 == m { seed.x1 } else { seed.x0 + (a + 1) as f64 * dx },
                        y1: if b + 1 == m { seed.y1 } else { seed.y0 + (b + 1) as f64 * dy },
                    };
                    if spec.contains(0.5 * (r.x0 + r.x1), 0.5 * (r.y0 + r.y1)) {
                        out.push(r);
                    }
                }
            }
            out
        }
        _ => {
            let h = grid.h();
            let (i0, j0) = cell_coords(grid, seed.x0, seed.y0);
            let (i1, j1) = cell_coords(grid, seed.x1, seed.y1);
            let mut out = Vec::new();
            for j in j0..=j1 {
                for i in i0..=i1 {
                    if grid.inside(i, j) {
                        if let Some(r) = Rect::square(grid.center(i, j), h).intersect(&seed) {
                            out.push(r);
                        }
                    }
                }
            }
            out
        }
    }
}

/// Splits `r` along cell edges. Each piece is paired with the domain cell
/// whose value stands for it: its own cell when that is a domain cell,
/// otherwise the nearest domain cell among the eight around it.
fn split_by_cells(grid: &DomainGrid, r: &Rect) -> Vec<(usize, Rect)> {
    let h = grid.h();
    let ((bx0, by0), _) = grid.bbox();
    let (i0, j0) = cell_coords(grid, r.x0, r.y0);
    let (i1, j1) = cell_coords(grid, r.x1, r.y1);
    let mut out = Vec::new();
    for j in j0..=j1 {
        for i in i0..=i1 {
            let cell = Rect {
                x0: bx0 + i as f64 * h,
                y0: by0 + j as f64 * h,
                x1: bx0 + (i + 1) as f64 * h,
                y1: by0 + (j + 1) as f64 * h,
            };
            let Some(piece) = cell.intersect(r) else {
                continue;
            };
            let owner = if grid.inside(i, j) {
                Some(grid.idx(i, j))
            } else {
                let (px, py) = (0.5 * (piece.x0 + piece.x1), 0.5 * (piece.y0 + piece.y1));
                let mut best: Option<(f64, usize)> = None;
                for nj in j.saturating_sub(1)..=(j + 1).min(grid.ny() - 1) {
                    for ni in i.saturating_sub(1)..=(i + 1).min(grid.nx() - 1) {
                        if grid.inside(ni, nj) {
                            let c = grid.center(ni, nj);
                            let d = (c.0 - px).hypot(c.1 - py);
                            if best.is_none_or(|b| d < b.0) {
                                best = Some((d, grid.idx(ni, nj)));
                            }
                        }
                    }
                }
                best.map(|b| b.1)
            };
            if let Some(c) = owner {
                out.push((c, piece));
            }
        }
    }
    out
}

/// Boundary cells of the domain bucketed for nearest-point queries.
struct BoundaryIndex {
    buckets: Vec<Bucket>,
}

struct Bucket {
    lo: (f64, f64),
    hi: (f64, f64),
    points: Vec<(f64, f64)>,
}

const BUCKET: usize = 16;

impl BoundaryIndex {
    fn new(grid: &DomainGrid) -> Result<Self> {
        let (nx, ny) = (grid.nx(), grid.ny());
        let bx = nx.div_ceil(BUCKET);
        let by = ny.div_ceil(BUCKET);
        let mut pts: Vec<Vec<(f64, f64)>> = vec![Vec::new(); bx * by];
        for j in 0..ny {
            for i in 0..nx {
                if !grid.inside(i, j) {
                    continue;
                }
                let edge = (i > 0 && !grid.inside(i - 1, j))
                    || (i + 1 < nx && !grid.inside(i + 1, j))
                    || (j > 0 && !grid.inside(i, j - 1))
                    || (j + 1 < ny && !grid.inside(i, j + 1));
                if edge {
                    pts[(j / BUCKET) * bx + i / BUCKET].push(grid.center(i, j));
                }
            }
        }
        let buckets: Vec<Bucket> = pts
            .into_iter()
            .filter(|p| !p.is_empty())
            .map(|points| {
                let mut lo = (f64::INFINITY, f64::INFINITY);
                let mut hi = (f64::NEG_INFINITY, f64::NEG_INFINITY);
                for p in &points {
                    lo = (lo.0.min(p.0), lo.1.min(p.1));
                    hi = (hi.0.max(p.0), hi.1.max(p.1));
                }
                Bucket { lo, hi, points }
            })
            .collect();
        if buckets.is_empty() {
            return Err(Error::EmptyDomain);
        }
        Ok(Self { buckets })
    }

    /// Boundary cell centre nearest to cube `q`, ties broken by `(x, y)`.
    fn nearest(&self, cover: &WhitneyCover, q: usize) -> (f64, f64) {
        let (ax, ay) = cover.lower_corner(q);
        let l = cover.side(q);
        let (bx, by) = (ax + l, ay + l);
        let gap = |lo: f64, hi: f64, a: f64, b: f64| (a - hi).max(lo - b).max(0.0);
        let mut order: Vec<(f64, usize)> = self
            .buckets
            .iter()
            .enumerate()
            .map(|(k, b)| (gap(b.lo.0, b.hi.0, ax, bx).hypot(gap(b.lo.1, b.hi.1, ay, by)), k))
            .collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut best = (f64::INFINITY, f64::INFINITY, f64::INFINITY);
        for (lb, k) in order {
            if lb > best.0 {
                break;
            }
            for &p in &self.buckets[k].points {
                let d = gap(p.0, p.0, ax, bx).hypot(gap(p.1, p.1, ay, by));
                let cand = (d, p.0, p.1);
                if cand.0 < best.0
                    || (cand.0 == best.0 && (cand.1, cand.2) < (best.1, best.2))
                {
                    best = cand;
                }
            }
        }
        (best.1, best.2)
    }
}

/// Maximum number of rectangle families covering a common point. Each
/// family is a set of disjoint rectangles; the sweep uses half-open
/// rectangles so shared edges are not double counted.
pub fn max_depth<I, F>(families: I) -> usize
where
    I: Iterator<Item = F>,
    F: Iterator<Item = Rect>,
{
    let rects: Vec<Rect> = families.flatten().collect();
    if rects.is_empty() {
        return 0;
    }
    let mut ys: Vec<f64> = rects.iter().flat_map(|r| [r.y0, r.y1]).collect();
    ys.sort_by(f64::total_cmp);
    ys.dedup();
    let yi = |y: f64| ys.binary_search_by(|v| v.total_cmp(&y)).expect("present");
    // (x, delta, lo, hi): removals sort before additions at equal x.
    let mut events: Vec<(f64, i32, usize, usize)> = Vec::with_capacity(2 * rects.len());
    for r in &rects {
        let (a, b) = (yi(r.y0), yi(r.y1));
        events.push((r.x0, 1, a, b));
        events.push((r.x1, -1, a, b));
    }
    events.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let m = ys.len() - 1;
    let mut tree = MaxTree::new(m.max(1));
    let mut best = 0;
    let mut k = 0;
    while k < events.len() {
        let x = events[k].0;
        while k < events.len() && events[k].0 == x {
            let (_, d, a, b) = events[k];
            tree.add(a, b, d);
            k += 1;
        }
        best = best.max(tree.max());
    }
    best.max(0) as usize
}

/// Range-add, global-max segment tree.
struct MaxTree {
    n: usize,
    mx: Vec<i32>,
    lazy: Vec<i32>,
}

impl MaxTree {
    fn new(n: usize) -> Self {
        Self {
            n,
            mx: vec![0; 4 * n],
            lazy: vec![0; 4 * n],
        }
    }

    fn add(&mut self, a: usize, b: usize, d: i32) {
        if a < b {
            self.update(1, 0, self.n, a, b, d);
        }
    }

    fn update(&mut self, node: usize, lo: usize, hi: usize, a: usize, b: usize, d: i32) {
        if b <= lo || hi <= a {
            return;
        }
        if a <= lo && hi <= b {
            self.mx[node] += d;
            self.lazy[node] += d;
            return;
        }
        let mid = (lo + hi) / 2;
        self.update(2 * node, lo, mid, a, b, d);
        self.update(2 * node + 1, mid, hi, a, b, d);
        self.mx[node] = self.lazy[node] + self.mx[2 * node].max(self.mx[2 * node + 1]);
    }

    fn max(&self) -> i32 {
        self.mx[1]
    }
}

/// Neighbour shells around the reflected cubes.
#[derive(Debug, Clone, Serialize)]
pub struct ShellIndex {
    /// Shell number per cube, `u32::MAX` beyond `kmax`.
    pub shell: Vec<u32>,
    pub kmax: u32,
    /// Per `k`: overlap of `Q*` over shell-`<= k` cubes and its bound.
    pub overlap: Vec<(u32, usize, f64)>,
}

impl ShellIndex {
    /// Breadth-first shells over the neighbour graph from the reflected
    /// cubes, checking `overlap_k <= gamma2 + (eps + 4^{k+2} sqrt n)^n`.
    pub fn build(cover: &WhitneyCover, rmap: &ReflectionMap, kmax: u32) -> Result<Self> {
        if kmax < 3 {
            return Err(Error::InvalidInput("shells need kmax >= 3".into()));
        }
        let mut shell = vec![u32::MAX; cover.len()];
        let mut frontier: Vec<usize> = (0..cover.len())
            .filter(|&q| !rmap.quasi_cube(q).is_whole_domain())
            .collect();
        for &q in &frontier {
            shell[q] = 0;
        }
        for k in 1..=kmax {
            let mut next = Vec::new();
            for &q in &frontier {
                for &p in cover.neighbors(q) {
                    let p = p as usize;
                    if shell[p] == u32::MAX {
                        shell[p] = k;
                        next.push(p);
                    }
                }
            }
            next.sort_unstable();
            frontier = next;
        }
        let mut overlap = Vec::new();
        for k in 0..=kmax {
            let sentinels = (0..cover.len())
                .filter(|&q| shell[q] <= k && rmap.quasi_cube(q).is_whole_domain())
                .count();
            let count = rmap.gamma2() + sentinels;
            let bound = rmap.gamma2() as f64
                + (rmap.epsilon() + 4f64.powi(k as i32 + 2) * std::f64::consts::SQRT_2).powi(2);
            if count as f64 > bound {
                return Err(Error::invariant(
                    "shells",
                    format!("overlap {count} on shell {k} exceeds {bound}"),
                ));
            }
            overlap.push((k, count, bound));
        }
        Ok(Self {
            shell,
            kmax,
            overlap,
        })
    }

    /// Cubes in `W^(k)`.
    pub fn members(&self, k: u32) -> impl Iterator<Item = usize> + '_ {
        self.shell
            .iter()
            .enumerate()
            .filter(move |&(_, &s)| s <= k)
            .map(|(q, _)| q)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{DomainSpec, DEFAULT_CELL_CAP};

    #[test]
    fn epsilon0_values() {
        let e = epsilon0(0.196, 12, 2).unwrap();
        assert!((e - 0.002130).abs() < 5e-7, "{e}");
        assert!(epsilon0(0.4, 12, 2).unwrap() > e);
        let unit = epsilon0(24.0, 12, 2).unwrap();
        assert!((unit - 1.0 / (30.0 * 2f64.sqrt())).abs() < 1e-15);
        assert!(epsilon0(0.0, 12, 2).is_err());
    }

    #[test]
    fn rect_difference_is_exact() {
        let a = Rect::square((0.0, 0.0), 2.0);
        let holes = [Rect::square((0.5, 0.5), 0.5), Rect::square((0.6, 0.6), 0.5)];
        let parts = a.minus(&holes);
        let area: f64 = parts.iter().map(Rect::area).sum();
        // Union of holes: two 0.25 squares overlapping in 0.4^2.
        assert!((area - (4.0 - 0.5 + 0.16)).abs() < 1e-12);
        for p in &parts {
            for h in &holes {
                assert!(p.intersect(h).is_none());
            }
        }
    }

    #[test]
    fn depth_of_overlapping_squares() {
        let fam = |c: (f64, f64)| std::iter::once(Rect::square(c, 1.0));
        let d = max_depth(
            vec![fam((0.0, 0.0)), fam((0.5, 0.5)), fam((0.9, 0.1)), fam((3.0, 3.0))].into_iter(),
        );
        assert_eq!(d, 3);
        // Touching edges do not overlap.
        let d = max_depth(vec![fam((0.0, 0.0)), fam((1.0, 0.0))].into_iter());
        assert_eq!(d, 1);
    }

    fn disk_map(h: f64, eps: f64) -> (DomainGrid, WhitneyCover, ReflectionMap) {
        let g = DomainGrid::rasterize(DomainSpec::Disk { r: 1.0 }, h, 4.0, DEFAULT_CELL_CAP)
            .unwrap();
        let c = WhitneyCover::decompose(&g).unwrap();
        let m = ReflectionMap::build(&c, &g, eps).unwrap();
        (g, c, m)
    }

    #[test]
    fn disk_reflections_valid() {
        let (_, c, m) = disk_map(0.02, 0.0022);
        let s = m.check(&c).unwrap();
        assert_eq!(s.sentinels, 0);
        assert!(s.gamma1.is_finite());
        assert!(s.gamma2 >= 1);
        let sh = ShellIndex::build(&c, &m, 3).unwrap();
        assert!(sh.shell.iter().all(|&k| k == 0));
    }

    #[test]
    fn large_epsilon_produces_sentinels_and_shells() {
        let (_, c, m) = disk_map(0.02, 0.9);
        m.check(&c).unwrap();
        assert!(m.sentinels() > 0);
        let sh = ShellIndex::build(&c, &m, 3).unwrap();
        let sizes: Vec<usize> = (0..=3).map(|k| sh.members(k).count()).collect();
        assert!(sizes.windows(2).all(|w| w[0] <= w[1]));
        // Every shell-k cube touches some shell-(k-1) cube.
        for q in 0..c.len() {
            let k = sh.shell[q];
            if k > 0 && k != u32::MAX {
                assert!(c.neighbors(q).iter().any(|&p| sh.shell[p as usize] == k - 1));
            }
        }
    }

    #[test]
    fn halfplane_has_no_sentinel() {
        let g = DomainGrid::rasterize(DomainSpec::HalfPlane { window: 4.0 }, 1.0 / 16.0, 0.0, DEFAULT_CELL_CAP)
            .unwrap();
        let c = WhitneyCover::decompose(&g).unwrap();
        let m = ReflectionMap::build(&c, &g, 0.5).unwrap();
        assert_eq!(m.sentinels(), 0);
        m.check(&c).unwrap();
    }

    #[test]
    fn subtracted_seeds_are_disjoint_from_regions() {
        let (_, c, m) = disk_map(0.02, 0.2);
        let eps = m.epsilon();
        for q in 0..c.len() {
            let QuasiCube::Region { pieces, seed, .. } = m.quasi_cube(q) else {
                continue;
            };
            for p in 0..c.len() {
                if p == q || c.side(p) > eps * c.side(q) {
                    continue;
                }
                let QuasiCube::Region { seed: ps, .. } = m.quasi_cube(p) else {
                    continue;
                };
                if !ps.meets(seed) {
                    continue;
                }
                for (_, r) in pieces {
                    assert!(r.intersect(ps).is_none());
                }
            }
        }
        assert!(m.subtracting_cubes() > 0);
    }
}
