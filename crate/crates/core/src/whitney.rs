//! Dyadic Whitney decomposition of the complement inside the grid box,
//! with neighbour structure and a smooth partition of unity.
//!
//! Cubes are aligned to the grid: a cube of level `k` is a block of
//! `2^k x 2^k` cells. Complement cells too close to the boundary to fit a
//! cell-sized cube form the boundary layer; they are left uncovered and
//! carry vanishing measure as `h -> 0`.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::DomainGrid;

const NONE: u32 = u32::MAX;

/// Support dilation of the bumps.
pub const BUMP_DILATION: f64 = 17.0 / 16.0;

/// Relative slack in `l <= dist` so cubes at exactly distance `l` survive
/// roundoff in non-representable box coordinates.
pub const SELECT_RTOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct DyadicCube {
    pub level: u32,
    /// Lattice coordinates at this level, in units of the cube side.
    pub i: u32,
    pub j: u32,
}

impl DyadicCube {
    /// Half-open cell index range `[i0, i1) x [j0, j1)`.
    pub fn cell_range(&self) -> (usize, usize, usize, usize) {
        let s = 1usize << self.level;
        let i0 = self.i as usize * s;
        let j0 = self.j as usize * s;
        (i0, j0, i0 + s, j0 + s)
    }

    pub fn parent(&self) -> DyadicCube {
        DyadicCube {
            level: self.level + 1,
            i: self.i / 2,
            j: self.j / 2,
        }
    }

    /// True when the closed cubes intersect.
    pub fn touches(&self, other: &DyadicCube) -> bool {
        let (a0, b0, a1, b1) = self.cell_range();
        let (c0, d0, c1, d1) = other.cell_range();
        a0 <= c1 && c0 <= a1 && b0 <= d1 && d0 <= b1
    }
}

#[derive(Debug, Clone)]
pub struct WhitneyCover {
    h: f64,
    origin: (f64, f64),
    n: usize,
    cubes: Vec<DyadicCube>,
    /// Distance to the boundary used by the selection rule.
    dist: Vec<f64>,
    cell_cube: Vec<u32>,
    nbr_off: Vec<usize>,
    nbr: Vec<u32>,
    gamma0: usize,
    boundary_layer: Vec<usize>,
    analytic: bool,
}

impl WhitneyCover {
    /// Stein's maximal dyadic selection: split from the whole box, keep a
    /// cube once `l(Q) <= dist(Q, boundary)`.
    ///
    /// The distance is the closed form when the domain has one, otherwise
    /// the grid estimate `min d - h sqrt(2)` over the cube's cells with
    /// domain cells counted as distance zero.
    pub fn decompose(grid: &DomainGrid) -> Result<Self> {
        let n = grid.nx();
        if n != grid.ny() || !n.is_power_of_two() {
            return Err(Error::InvalidInput(
                "Whitney cover needs a square grid with a power-of-two side".into(),
            ));
        }
        if grid.omega_cells() == grid.cells() {
            return Err(Error::InvalidInput("complement is empty inside the box".into()));
        }
        let h = grid.h();
        let (origin, _) = grid.bbox();
        let analytic = grid.box_distance(origin, origin).is_some();
        let pyramid = if analytic {
            Vec::new()
        } else {
            if !grid.has_distance() {
                return Err(Error::InvalidInput("grid has no distance field".into()));
            }
            min_pyramid(grid)
        };
        let top = n.trailing_zeros();
        let slack = h * std::f64::consts::SQRT_2;

        let mut cubes = Vec::new();
        let mut dist = Vec::new();
        let mut boundary_layer = Vec::new();
        let mut stack = vec![DyadicCube {
            level: top,
            i: 0,
            j: 0,
        }];
        while let Some(q) = stack.pop() {
            let (i0, j0, i1, j1) = q.cell_range();
            let omega = grid.count_rect(i0, j0, i1, j1);
            if omega == 0 {
                let side = h * (1u64 << q.level) as f64;
                let d = if analytic {
                    let lo = (origin.0 + i0 as f64 * h, origin.1 + j0 as f64 * h);
                    grid.box_distance(lo, (lo.0 + side, lo.1 + side))
                        .expect("analytic")
                } else {
                    let lv = &pyramid[q.level as usize];
                    lv[q.j as usize * (n >> q.level) + q.i as usize] - slack
                };
                if side <= d * (1.0 + SELECT_RTOL) {
                    cubes.push(q);
                    dist.push(d);
                    continue;
                }
                if q.level == 0 {
                    boundary_layer.push(grid.idx(i0, j0));
                    continue;
                }
            } else if q.level == 0 {
                continue;
            }
            let l = q.level - 1;
            let (ci, cj) = (2 * q.i, 2 * q.j);
            // Pushed in reverse so children pop in row-major order.
            for (di, dj) in [(1, 1), (0, 1), (1, 0), (0, 0)] {
                stack.push(DyadicCube {
                    level: l,
                    i: ci + di,
                    j: cj + dj,
                });
            }
        }
        boundary_layer.sort_unstable();

        let mut cell_cube = vec![NONE; n * n];
        for (id, q) in cubes.iter().enumerate() {
            let (i0, j0, i1, j1) = q.cell_range();
            for j in j0..j1 {
                cell_cube[j * n + i0..j * n + i1].fill(id as u32);
            }
        }

        let lists: Vec<Vec<u32>> = cubes
            .par_iter()
            .enumerate()
            .map(|(id, q)| ring_neighbors(id as u32, q, &cell_cube, n))
            .collect();
        let mut nbr_off = Vec::with_capacity(cubes.len() + 1);
        let mut nbr = Vec::new();
        nbr_off.push(0);
        for l in &lists {
            nbr.extend_from_slice(l);
            nbr_off.push(nbr.len());
        }
        let gamma0 = lists.iter().map(Vec::len).max().unwrap_or(0);

        Ok(Self {
            h,
            origin,
            n,
            cubes,
            dist,
            cell_cube,
            nbr_off,
            nbr,
            gamma0,
            boundary_layer,
            analytic,
        })
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// Cells per side of the box.
    pub fn cells_per_side(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.cubes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cubes.is_empty()
    }

    pub fn cubes(&self) -> &[DyadicCube] {
        &self.cubes
    }

    pub fn cube(&self, q: usize) -> DyadicCube {
        self.cubes[q]
    }

    /// Distance to the boundary recorded at selection.
    pub fn dist(&self, q: usize) -> f64 {
        self.dist[q]
    }

    pub fn uses_analytic_distance(&self) -> bool {
        self.analytic
    }

    pub fn side(&self, q: usize) -> f64 {
        self.h * (1u64 << self.cubes[q].level) as f64
    }

    pub fn lower_corner(&self, q: usize) -> (f64, f64) {
        let (i0, j0, _, _) = self.cubes[q].cell_range();
        (
            self.origin.0 + i0 as f64 * self.h,
            self.origin.1 + j0 as f64 * self.h,
        )
    }

    pub fn center(&self, q: usize) -> (f64, f64) {
        let (x, y) = self.lower_corner(q);
        let s = 0.5 * self.side(q);
        (x + s, y + s)
    }

    /// Cube covering cell `k` (row-major), if any.
    #[inline]
    pub fn cube_of_cell(&self, k: usize) -> Option<usize> {
        match self.cell_cube[k] {
            NONE => None,
            q => Some(q as usize),
        }
    }

    /// Cube containing the point, if it lies in a covered cell.
    pub fn cube_at(&self, x: f64, y: f64) -> Option<usize> {
        let fi = ((x - self.origin.0) / self.h).floor();
        let fj = ((y - self.origin.1) / self.h).floor();
        if fi < 0.0 || fj < 0.0 || fi >= self.n as f64 || fj >= self.n as f64 {
            return None;
        }
        self.cube_of_cell(fj as usize * self.n + fi as usize)
    }

    /// `N(Q)`: cubes whose closure meets the closure of `Q`, `Q` included.
    pub fn neighbors(&self, q: usize) -> &[u32] {
        &self.nbr[self.nbr_off[q]..self.nbr_off[q + 1]]
    }

    pub fn gamma0(&self) -> usize {
        self.gamma0
    }

    /// Uncovered complement cells next to the boundary, row-major indices.
    pub fn boundary_layer(&self) -> &[usize] {
        &self.boundary_layer
    }

    /// `max_Q |(9/8)Q cap U cap box| / |Q|` by counting complement cells
    /// whose centres lie in the closed dilated cube.
    pub fn overlap_98(&self, grid: &DomainGrid) -> f64 {
        let h = self.h;
        let n = self.n;
        (0..self.cubes.len())
            .into_par_iter()
            .map(|q| {
                let l = self.side(q);
                let (cx, cy) = self.center(q);
                let r = 9.0 / 16.0 * l;
                let range = |c: f64, o: f64| {
                    let a = ((c - r - o) / h - 0.5).ceil().max(0.0) as usize;
                    let b = (((c + r - o) / h - 0.5).floor() + 1.0).clamp(0.0, n as f64) as usize;
                    (a, b.max(a))
                };
                let (i0, i1) = range(cx, self.origin.0);
                let (j0, j1) = range(cy, self.origin.1);
                let total = (i1 - i0) * (j1 - j0);
                let u = total - grid.count_rect(i0, j0, i1, j1);
                u as f64 * h * h / (l * l)
            })
            .reduce(|| 0.0, f64::max)
    }

    /// Asserts the Whitney invariants and returns the measured statistics.
    pub fn check(&self, grid: &DomainGrid) -> Result<CoverStats> {
        let sqrt2 = std::f64::consts::SQRT_2;
        let mut max_dist_ratio = 0.0f64;
        for q in 0..self.cubes.len() {
            let l = self.side(q);
            let d = self.dist[q];
            if !(l <= d * (1.0 + SELECT_RTOL) && d <= 4.0 * sqrt2 * l) {
                return Err(Error::invariant(
                    "whitney",
                    format!("cube {:?}: side {l} and distance {d} violate l <= d <= 4 sqrt2 l", self.cubes[q]),
                ));
            }
            max_dist_ratio = max_dist_ratio.max(d / l);
            for &p in self.neighbors(q) {
                let p = p as usize;
                let lp = self.side(p);
                if !(0.25 * l <= lp && lp <= 4.0 * l) {
                    return Err(Error::invariant(
                        "whitney",
                        format!("neighbours {:?} and {:?} differ in size more than 4x", self.cubes[q], self.cubes[p]),
                    ));
                }
                if !self.neighbors(p).contains(&(q as u32)) {
                    return Err(Error::invariant("whitney", "neighbour relation not symmetric"));
                }
            }
        }
        // Disjointness is structural (one cube id per cell); check coverage.
        let mut covered = 0usize;
        let layer_bound = (1.0 + sqrt2) * self.h + 1e-12;
        for j in 0..self.n {
            for i in 0..self.n {
                let k = j * self.n + i;
                if grid.inside(i, j) {
                    if self.cell_cube[k] != NONE {
                        return Err(Error::invariant("whitney", format!("domain cell ({i}, {j}) covered")));
                    }
                } else if self.cell_cube[k] != NONE {
                    covered += 1;
                } else {
                    let near = if grid.has_distance() {
                        grid.dist(i, j) <= layer_bound
                    } else {
                        self.boundary_layer.binary_search(&k).is_ok()
                    };
                    if !near {
                        return Err(Error::CoverGap { i, j });
                    }
                }
            }
        }
        let cell_area: usize = self.cubes.iter().map(|c| 1usize << (2 * c.level)).sum();
        if cell_area != covered {
            return Err(Error::invariant("whitney", "cube interiors overlap"));
        }
        let overlap = self.overlap_98(grid);
        let bound = 16.0 * self.gamma0 as f64;
        if overlap > bound {
            return Err(Error::invariant(
                "whitney",
                format!("(9/8)-overlap {overlap} exceeds 4^n gamma0 = {bound}"),
            ));
        }
        Ok(CoverStats {
            cubes: self.cubes.len(),
            gamma0: self.gamma0,
            max_dist_ratio,
            overlap_98: overlap,
            overlap_bound: bound,
            boundary_layer_cells: self.boundary_layer.len(),
            uncovered_area: self.boundary_layer.len() as f64 * self.h * self.h,
            levels: self.cubes.iter().map(|c| c.level).max().unwrap_or(0) + 1,
        })
    }

    /// CSV dump `level,i,j,side,dist,neighbors`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "level,i,j,side,dist,neighbors")?;
        for (q, c) in self.cubes.iter().enumerate() {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                c.level,
                c.i,
                c.j,
                self.side(q),
                self.dist[q],
                self.neighbors(q).len()
            )?;
        }
        Ok(())
    }
}

/// Minimum of the distance-to-closure field over aligned dyadic blocks.
fn min_pyramid(grid: &DomainGrid) -> Vec<Vec<f64>> {
    let n = grid.nx();
    let base: Vec<f64> = (0..n * n)
        .map(|k| if grid.indicator()[k] { 0.0 } else { grid.distances()[k] })
        .collect();
    let mut levels = vec![base];
    let mut m = n;
    while m > 1 {
        let prev = levels.last().expect("nonempty");
        let half = m / 2;
        let mut next = vec![0.0; half * half];
        for j in 0..half {
            for i in 0..half {
                let a = prev[2 * j * m + 2 * i];
                let b = prev[2 * j * m + 2 * i + 1];
                let c = prev[(2 * j + 1) * m + 2 * i];
                let d = prev[(2 * j + 1) * m + 2 * i + 1];
                next[j * half + i] = a.min(b).min(c).min(d);
            }
        }
        levels.push(next);
        m = half;
    }
    levels
}

/// Cubes owning a cell of the one-cell ring around `q`, plus `q` itself.
fn ring_neighbors(id: u32, q: &DyadicCube, cell_cube: &[u32], n: usize) -> Vec<u32> {
    let (i0, j0, i1, j1) = q.cell_range();
    let mut out = vec![id];
    let mut push = |i: isize, j: isize| {
        if i < 0 || j < 0 || i >= n as isize || j >= n as isize {
            return;
        }
        let c = cell_cube[j as usize * n + i as usize];
        if c != NONE {
            out.push(c);
        }
    };
    let (i0, j0, i1, j1) = (i0 as isize, j0 as isize, i1 as isize, j1 as isize);
    for i in i0 - 1..=i1 {
        push(i, j0 - 1);
        push(i, j1);
    }
    for j in j0..j1 {
        push(i0 - 1, j);
        push(i1, j);
    }
    out.sort_unstable();
    out.dedup();
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct CoverStats {
    pub cubes: usize,
    pub gamma0: usize,
    /// `max dist(Q)/l(Q)`, at most `4 sqrt 2`.
    pub max_dist_ratio: f64,
    pub overlap_98: f64,
    pub overlap_bound: f64,
    pub boundary_layer_cells: usize,
    pub uncovered_area: f64,
    pub levels: u32,
}

#[inline]
fn bump(s: f64) -> f64 {
    if s.abs() >= 1.0 {
        0.0
    } else {
        let t = 1.0 - s * s;
        t * t * t
    }
}

/// Normalized tensor bumps `phi_Q = psi_Q / sum_P psi_P` subordinate to the
/// dilated cubes `(17/16) Q`.
#[derive(Debug, Clone, Copy)]
pub struct PartitionOfUnity<'a> {
    cover: &'a WhitneyCover,
}

impl<'a> PartitionOfUnity<'a> {
    pub fn new(cover: &'a WhitneyCover) -> Self {
        Self { cover }
    }

    pub fn cover(&self) -> &'a WhitneyCover {
        self.cover
    }

    /// Unnormalized `psi_Q(x) = b(s_1) b(s_2)`, `s_i = 2 (x_i - c_i) / ((17/16) l)`.
    #[inline]
    pub fn psi(&self, q: usize, x: f64, y: f64) -> f64 {
        let (cx, cy) = self.cover.center(q);
        let half = 0.5 * BUMP_DILATION * self.cover.side(q);
        bump((x - cx) / half) * bump((y - cy) / half)
    }

    /// All nonzero weights at `x` as `(cube, phi_Q(x))`.
    ///
    /// Only cubes touching the cube containing `x` can carry weight there,
    /// because neighbouring sides differ by at most a factor 4 while the
    /// bumps reach only `l/32` past their cube.
    pub fn weights(&self, x: f64, y: f64) -> Result<Vec<(usize, f64)>> {
        let q0 = self.cover.cube_at(x, y).ok_or(Error::PartitionGap { x, y })?;
        let mut out = Vec::with_capacity(8);
        let mut total = 0.0;
        for &p in self.cover.neighbors(q0) {
            let v = self.psi(p as usize, x, y);
            if v > 0.0 {
                out.push((p as usize, v));
                total += v;
            }
        }
        if total <= 0.0 {
            return Err(Error::PartitionGap { x, y });
        }
        for w in &mut out {
            w.1 /= total;
        }
        Ok(out)
    }

    pub fn weight(&self, q: usize, x: f64, y: f64) -> Result<f64> {
        Ok(self
            .weights(x, y)?
            .into_iter()
            .find(|&(p, _)| p == q)
            .map_or(0.0, |(_, w)| w))
    }

    /// Brute-force sum of `phi_P(x)` over every cube whose support could
    /// reach `x`, found by scanning cells rather than the neighbour lists.
    fn brute_sum(&self, x: f64, y: f64, reach: f64) -> Result<f64> {
        let q0 = self.cover.cube_at(x, y).ok_or(Error::PartitionGap { x, y })?;
        let mut denom = 0.0;
        for &p in self.cover.neighbors(q0) {
            denom += self.psi(p as usize, x, y);
        }
        let h = self.cover.h;
        let n = self.cover.n as isize;
        let ci = ((x - self.cover.origin.0) / h).floor() as isize;
        let cj = ((y - self.cover.origin.1) / h).floor() as isize;
        let k = (reach / h).ceil() as isize + 1;
        let mut seen = Vec::new();
        for j in (cj - k).max(0)..=(cj + k).min(n - 1) {
            for i in (ci - k).max(0)..=(ci + k).min(n - 1) {
                if let Some(p) = self.cover.cube_of_cell(j as usize * n as usize + i as usize) {
                    seen.push(p);
                }
            }
        }
        seen.sort_unstable();
        seen.dedup();
        Ok(seen.iter().map(|&p| self.psi(p, x, y)).sum::<f64>() / denom)
    }

    /// Samples `count` points uniformly in covered cells and checks the
    /// partition sum and support property; returns the worst deviation.
    pub fn check_sum(&self, count: usize, seed: u64) -> Result<PouCheck> {
        let cover = self.cover;
        let max_side = (0..cover.len()).map(|q| cover.side(q)).fold(0.0, f64::max);
        let reach = max_side * (BUMP_DILATION - 1.0) / 2.0 + cover.h;
        let covered: Vec<usize> = (0..cover.cell_cube.len())
            .filter(|&k| cover.cell_cube[k] != NONE)
            .collect();
        if covered.is_empty() {
            return Err(Error::InvalidInput("cover is empty".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let points: Vec<(f64, f64)> = (0..count)
            .map(|_| {
                let k = covered[rng.gen_range(0..covered.len())];
                let (i, j) = (k % cover.n, k / cover.n);
                (
                    cover.origin.0 + (i as f64 + rng.gen::<f64>()) * cover.h,
                    cover.origin.1 + (j as f64 + rng.gen::<f64>()) * cover.h,
                )
            })
            .collect();
        let devs = points
            .par_iter()
            .map(|&(x, y)| -> Result<f64> {
                let w = self.weights(x, y)?;
                for &(p, _) in &w {
                    let (cx, cy) = cover.center(p);
                    let half = 0.5 * BUMP_DILATION * cover.side(p);
                    if (x - cx).abs() >= half || (y - cy).abs() >= half {
                        return Err(Error::invariant("partition", "weight outside (17/16)Q"));
                    }
                }
                let s: f64 = w.iter().map(|p| p.1).sum();
                let b = self.brute_sum(x, y, reach)?;
                Ok((s - 1.0).abs().max((b - 1.0).abs()))
            })
            .collect::<Result<Vec<f64>>>()?;
        let max_dev = devs.into_iter().fold(0.0, f64::max);
        if max_dev > 1e-10 {
            return Err(Error::invariant(
                "partition",
                format!("partition sum deviates from 1 by {max_dev:e}"),
            ));
        }
        Ok(PouCheck {
            samples: count,
            max_deviation: max_dev,
        })
    }

    /// `L = max_Q sup |grad phi_Q| l_Q`, by central differences with step
    /// `h/2` on a 9x9 lattice over each dilated cube.
    pub fn grad_bound(&self) -> f64 {
        let cover = self.cover;
        let step = 0.5 * cover.h;
        (0..cover.len())
            .into_par_iter()
            .map(|q| {
                let l = cover.side(q);
                let (cx, cy) = cover.center(q);
                let span = BUMP_DILATION * l;
                let mut best = 0.0f64;
                for a in 0..9 {
                    for b in 0..9 {
                        let x = cx + (a as f64 / 8.0 - 0.5) * span;
                        let y = cy + (b as f64 / 8.0 - 0.5) * span;
                        let w = |x: f64, y: f64| self.weight(q, x, y).ok();
                        let (Some(xp), Some(xm), Some(yp), Some(ym)) =
                            (w(x + step, y), w(x - step, y), w(x, y + step), w(x, y - step))
                        else {
                            continue;
                        };
                        let gx = (xp - xm) / (2.0 * step);
                        let gy = (yp - ym) / (2.0 * step);
                        best = best.max(gx.hypot(gy) * l);
                    }
                }
                best
            })
            .reduce(|| 0.0, f64::max)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PouCheck {
    pub samples: usize,
    pub max_deviation: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{DomainSpec, DEFAULT_CELL_CAP};

    fn halfplane(h: f64) -> (DomainGrid, WhitneyCover) {
        let g = DomainGrid::rasterize(DomainSpec::HalfPlane { window: 4.0 }, h, 0.0, DEFAULT_CELL_CAP)
            .unwrap();
        let c = WhitneyCover::decompose(&g).unwrap();
        (g, c)
    }

    #[test]
    fn halfplane_example_cube_selected() {
        let (g, c) = halfplane(1.0 / 64.0);
        assert_eq!(g.bbox().0, (-4.0, -4.0));
        // [0,1] x [-2,-1]: level 6, lattice (4, 2).
        let want = DyadicCube { level: 6, i: 4, j: 2 };
        let q = c.cubes().iter().position(|&q| q == want).expect("selected");
        assert_eq!(c.side(q), 1.0);
        assert_eq!(c.dist(q), 1.0);
        assert_eq!(c.lower_corner(q), (0.0, -2.0));
        c.check(&g).unwrap();
        assert!(c.gamma0() <= 12, "{}", c.gamma0());
    }

    #[test]
    fn neighbors_of_interior_equal_tile() {
        let (_, c) = halfplane(1.0 / 64.0);
        // Row of side-1 cubes at y in [-2,-1]: interior cubes see both
        // row neighbours plus the cubes above and below.
        let q = c
            .cubes()
            .iter()
            .position(|&q| q == DyadicCube { level: 6, i: 4, j: 2 })
            .unwrap();
        for &p in c.neighbors(q) {
            assert!(c.cube(q).touches(&c.cube(p as usize)));
        }
        assert!(c.neighbors(q).contains(&(q as u32)));
    }

    #[test]
    fn partition_sums_to_one() {
        let (_, c) = halfplane(1.0 / 32.0);
        let pou = PartitionOfUnity::new(&c);
        let chk = pou.check_sum(2000, 7).unwrap();
        assert!(chk.max_deviation <= 1e-10);
        let l = pou.grad_bound();
        assert!(l.is_finite() && l > 0.0);
    }

    #[test]
    fn support_is_exact() {
        let (_, c) = halfplane(1.0 / 32.0);
        let pou = PartitionOfUnity::new(&c);
        let (cx, cy) = c.center(0);
        let half = 0.5 * BUMP_DILATION * c.side(0);
        assert_eq!(pou.psi(0, cx + half, cy), 0.0);
        assert!(pou.psi(0, cx + 0.99 * half, cy) > 0.0);
    }

    #[test]
    fn disk_and_cusp_covers_valid() {
        let g = DomainGrid::rasterize(DomainSpec::Disk { r: 1.0 }, 0.02, 4.0, DEFAULT_CELL_CAP)
            .unwrap();
        let c = WhitneyCover::decompose(&g).unwrap();
        let s = c.check(&g).unwrap();
        assert!(s.max_dist_ratio <= 4.0 * std::f64::consts::SQRT_2);
        let spec = DomainSpec::Cusp { gamma: 3.0, len: 1.0 };
        let g = DomainGrid::rasterize(spec, 0.02, 4.0, DEFAULT_CELL_CAP).unwrap();
        let c = WhitneyCover::decompose(&g).unwrap();
        assert!(!c.uses_analytic_distance());
        c.check(&g).unwrap();
    }

    #[test]
    fn overlap_of_equal_tiles() {
        let (g, c) = halfplane(1.0 / 64.0);
        let q = c
            .cubes()
            .iter()
            .position(|&q| q == DyadicCube { level: 6, i: 4, j: 2 })
            .unwrap();
        let l = c.side(q);
        let (cx, cy) = c.center(q);
        let r = 9.0 / 16.0 * l;
        let mut cnt = 0;
        for k in 0..g.cells() {
            let (x, y) = g.center_of(k);
            if !g.indicator()[k] && (x - cx).abs() <= r && (y - cy).abs() <= r {
                cnt += 1;
            }
        }
        let ratio = cnt as f64 * g.h() * g.h() / (l * l);
        assert!((ratio - (9.0f64 / 8.0).powi(2)).abs() < 1e-12);
        assert!(c.overlap_98(&g) <= 16.0 * c.gamma0() as f64);
    }
}
