//! Planar domains, their rasterization on a uniform grid, and the measure
//! queries built on it (ball intersections, diameter, Ahlfors constant).
//!
//! A cell belongs to the domain iff its centre does. Cell centres sit at
//! half-integer multiples of `h` from the box corner, and every box corner
//! is snapped to a multiple of `h`, so centres never land on a symmetry axis.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::numeric::logspace;

/// Default cap on the number of grid cells.
pub const DEFAULT_CELL_CAP: usize = 1 << 24;

/// Half-width of the observation window for the half-plane.
pub const DEFAULT_HALFPLANE_WINDOW: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DomainSpec {
    /// Open disk of radius `r` centred at the origin.
    Disk { r: f64 },
    /// Open square `(-a/2, a/2)^2`.
    Square { a: f64 },
    /// `r1 < |x| < r2`.
    Annulus { r1: f64, r2: f64 },
    /// `{0 < x1 < len, |x2| < x1^gamma}`.
    Cusp { gamma: f64, len: f64 },
    /// `{x2 > 0}` observed through the window `[-w, w]^2`.
    HalfPlane { window: f64 },
}

impl DomainSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        let valid = match *self {
            DomainSpec::Disk { r } => ok(r),
            DomainSpec::Square { a } => ok(a),
            DomainSpec::Annulus { r1, r2 } => ok(r1) && ok(r2) && r1 < r2,
            DomainSpec::Cusp { gamma, len } => ok(len) && gamma.is_finite() && gamma >= 1.0,
            DomainSpec::HalfPlane { window } => ok(window),
        };
        if valid {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("invalid domain parameters in {self}")))
        }
    }

    /// A cusp with `gamma = 1` is a Lipschitz wedge, not a cusp.
    pub fn is_flagged_regular(&self) -> bool {
        matches!(*self, DomainSpec::Cusp { gamma, .. } if gamma == 1.0)
    }

    pub fn bounded(&self) -> bool {
        !matches!(self, DomainSpec::HalfPlane { .. })
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        match *self {
            DomainSpec::Disk { r } => x * x + y * y < r * r,
            DomainSpec::Square { a } => x.abs() < 0.5 * a && y.abs() < 0.5 * a,
            DomainSpec::Annulus { r1, r2 } => {
                let q = x * x + y * y;
                r1 * r1 < q && q < r2 * r2
            }
            DomainSpec::Cusp { gamma, len } => x > 0.0 && x < len && y.abs() < x.powf(gamma),
            DomainSpec::HalfPlane { .. } => y > 0.0,
        }
    }

    /// Bounding rectangle `(xmin, ymin, xmax, ymax)` of the domain, or of
    /// the observation window for the half-plane.
    pub fn extent(&self) -> (f64, f64, f64, f64) {
        match *self {
            DomainSpec::Disk { r } => (-r, -r, r, r),
            DomainSpec::Square { a } => (-0.5 * a, -0.5 * a, 0.5 * a, 0.5 * a),
            DomainSpec::Annulus { r2, .. } => (-r2, -r2, r2, r2),
            DomainSpec::Cusp { gamma, len } => {
                let w = len.powf(gamma);
                (0.0, -w, len, w)
            }
            DomainSpec::HalfPlane { window } => (-window, -window, window, window),
        }
    }

    /// Diameter; infinite for the half-plane.
    pub fn diam(&self) -> f64 {
        match *self {
            DomainSpec::Disk { r } => 2.0 * r,
            DomainSpec::Square { a } => a * std::f64::consts::SQRT_2,
            DomainSpec::Annulus { r2, .. } => 2.0 * r2,
            DomainSpec::Cusp { gamma, len } => {
                let w = len.powf(gamma);
                len.hypot(w).max(2.0 * w)
            }
            DomainSpec::HalfPlane { .. } => f64::INFINITY,
        }
    }

    /// Lebesgue measure (of the windowed part for the half-plane).
    pub fn area(&self) -> f64 {
        use std::f64::consts::PI;
        match *self {
            DomainSpec::Disk { r } => PI * r * r,
            DomainSpec::Square { a } => a * a,
            DomainSpec::Annulus { r1, r2 } => PI * (r2 * r2 - r1 * r1),
            DomainSpec::Cusp { gamma, len } => 2.0 * len.powf(gamma + 1.0) / (gamma + 1.0),
            DomainSpec::HalfPlane { window } => 2.0 * window * window,
        }
    }

    /// Exact distance from `(x, y)` to the boundary, when a closed form exists.
    pub fn boundary_distance(&self, x: f64, y: f64) -> Option<f64> {
        match *self {
            DomainSpec::Disk { r } => Some((x.hypot(y) - r).abs()),
            DomainSpec::Square { a } => {
                let s = 0.5 * a;
                let (ax, ay) = (x.abs(), y.abs());
                if ax < s && ay < s {
                    Some((s - ax).min(s - ay))
                } else {
                    Some((ax - s).max(0.0).hypot((ay - s).max(0.0)))
                }
            }
            DomainSpec::Annulus { r1, r2 } => {
                let q = x.hypot(y);
                Some((q - r1).abs().min((q - r2).abs()))
            }
            DomainSpec::HalfPlane { .. } => Some(y.abs()),
            DomainSpec::Cusp { .. } => None,
        }
    }

    /// Exact distance from the closed rectangle `[lo, hi]` to the closure of
    /// the domain, when a closed form exists. For rectangles disjoint from
    /// the domain this is the distance to the boundary.
    pub fn box_distance(&self, lo: (f64, f64), hi: (f64, f64)) -> Option<f64> {
        let near = |c: f64, a: f64, b: f64| c.clamp(a, b);
        let d_origin_min = || near(0.0, lo.0, hi.0).hypot(near(0.0, lo.1, hi.1));
        let d_origin_max = || lo.0.abs().max(hi.0.abs()).hypot(lo.1.abs().max(hi.1.abs()));
        match *self {
            DomainSpec::Disk { r } => Some((d_origin_min() - r).max(0.0)),
            DomainSpec::Square { a } => {
                let s = 0.5 * a;
                let gx = (lo.0 - s).max(-s - hi.0).max(0.0);
                let gy = (lo.1 - s).max(-s - hi.1).max(0.0);
                Some(gx.hypot(gy))
            }
            DomainSpec::Annulus { r1, r2 } => {
                let (dmin, dmax) = (d_origin_min(), d_origin_max());
                Some(if dmax < r1 {
                    r1 - dmax
                } else if dmin > r2 {
                    dmin - r2
                } else {
                    0.0
                })
            }
            DomainSpec::HalfPlane { .. } => Some((-hi.1).max(0.0)),
            DomainSpec::Cusp { .. } => None,
        }
    }

    /// A boundary point realising [`box_distance`](Self::box_distance) for
    /// a closed rectangle disjoint from the domain. Where the nearest set is
    /// a segment, its midpoint is returned.
    pub fn nearest_boundary_point(&self, lo: (f64, f64), hi: (f64, f64)) -> Option<(f64, f64)> {
        let radial = |p: (f64, f64), r: f64| {
            let q = p.0.hypot(p.1);
            (q > 0.0).then(|| (r * p.0 / q, r * p.1 / q))
        };
        let origin_near = (0.0f64.clamp(lo.0, hi.0), 0.0f64.clamp(lo.1, hi.1));
        let far = |a: f64, b: f64| if a.abs() >= b.abs() { a } else { b };
        let origin_far = (far(lo.0, hi.0), far(lo.1, hi.1));
        match *self {
            DomainSpec::Disk { r } => radial(origin_near, r),
            DomainSpec::Square { a } => {
                let s = 0.5 * a;
                let coord = |l: f64, u: f64| {
                    if u < -s {
                        -s
                    } else if l > s {
                        s
                    } else {
                        0.5 * (l.max(-s) + u.min(s))
                    }
                };
                Some((coord(lo.0, hi.0), coord(lo.1, hi.1)))
            }
            DomainSpec::Annulus { r1, r2 } => {
                if origin_far.0.hypot(origin_far.1) < r1 {
                    radial(origin_far, r1)
                } else {
                    radial(origin_near, r2)
                }
            }
            DomainSpec::HalfPlane { .. } => Some((0.5 * (lo.0 + hi.0), 0.0)),
            DomainSpec::Cusp { .. } => None,
        }
    }
}

impl fmt::Display for DomainSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            DomainSpec::Disk { r } => write!(f, "disk:{r}"),
            DomainSpec::Square { a } => write!(f, "square:{a}"),
            DomainSpec::Annulus { r1, r2 } => write!(f, "annulus:{r1},{r2}"),
            DomainSpec::Cusp { gamma, len } => write!(f, "cusp:{gamma},{len}"),
            DomainSpec::HalfPlane { window } => write!(f, "halfplane:{window}"),
        }
    }
}

impl FromStr for DomainSpec {
    type Err = Error;

    /// `disk:r`, `square:a`, `annulus:r1,r2`, `cusp:gamma,len`, `halfplane[:w]`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (name, rest) = s.split_once(':').unwrap_or((s, ""));
        let params = if rest.trim().is_empty() {
            Vec::new()
        } else {
            rest.split(',')
                .map(|tok| {
                    let tok = tok.trim();
                    tok.parse::<f64>()
                        .map_err(|_| Error::parse(tok, "not a real number"))
                })
                .collect::<Result<Vec<f64>>>()?
        };
        let arity = |k: usize| {
            if params.len() == k {
                Ok(())
            } else {
                Err(Error::parse(
                    s,
                    format!("`{name}` takes {k} parameter(s), got {}", params.len()),
                ))
            }
        };
        let spec = match name.trim() {
            "disk" => {
                arity(1)?;
                DomainSpec::Disk { r: params[0] }
            }
            "square" => {
                arity(1)?;
                DomainSpec::Square { a: params[0] }
            }
            "annulus" => {
                arity(2)?;
                DomainSpec::Annulus {
                    r1: params[0],
                    r2: params[1],
                }
            }
            "cusp" => {
                arity(2)?;
                DomainSpec::Cusp {
                    gamma: params[0],
                    len: params[1],
                }
            }
            "halfplane" => {
                if params.is_empty() {
                    DomainSpec::HalfPlane {
                        window: DEFAULT_HALFPLANE_WINDOW,
                    }
                } else {
                    arity(1)?;
                    DomainSpec::HalfPlane { window: params[0] }
                }
            }
            other => return Err(Error::parse(other, "unknown domain kind")),
        };
        spec.validate().map_err(|_| Error::parse(s, "parameters out of range"))?;
        Ok(spec)
    }
}

/// A domain rasterized on a uniform grid of `nx * ny` square cells.
#[derive(Debug, Clone)]
pub struct DomainGrid {
    spec: Option<DomainSpec>,
    h: f64,
    x0: f64,
    y0: f64,
    nx: usize,
    ny: usize,
    inside: Vec<bool>,
    /// Distance from each cell centre to the boundary; empty for
    /// measure-only window grids.
    dist: Vec<f64>,
    /// Summed-area table of `inside`, `(nx + 1) * (ny + 1)` entries.
    sat: Vec<u32>,
    omega_cells: usize,
    diam: f64,
}

impl DomainGrid {
    /// Rasterizes `spec` in a square box of side `h * 2^K` centred on the
    /// domain, with at least `margin` clearance on every side.
    ///
    /// Bounded domains require `margin >= 2 diam`. The half-plane ignores
    /// the margin and uses its window.
    pub fn rasterize(spec: DomainSpec, h: f64, margin: f64, cap: usize) -> Result<Self> {
        spec.validate()?;
        if !(h.is_finite() && h > 0.0) {
            return Err(Error::InvalidInput(format!("cell size must be positive, got {h}")));
        }
        let (xa, ya, xb, yb) = spec.extent();
        let need = if spec.bounded() {
            if !(margin >= 2.0 * spec.diam()) {
                return Err(Error::InvalidInput(format!(
                    "margin {margin} below 2 diam = {}",
                    2.0 * spec.diam()
                )));
            }
            (xb - xa).max(yb - ya) + 2.0 * margin
        } else {
            (xb - xa).max(yb - ya)
        };
        let mut cells_per_side: usize = 1;
        while (cells_per_side as f64) * h < need * (1.0 - 1e-12) {
            cells_per_side *= 2;
            if cells_per_side > 1 << 20 {
                return Err(Error::GridTooLarge {
                    cells: usize::MAX,
                    cap,
                });
            }
        }
        let side = cells_per_side as f64 * h;
        let cx = 0.5 * (xa + xb);
        let cy = 0.5 * (ya + yb);
        let x0 = ((cx - 0.5 * side) / h).round() * h;
        let y0 = ((cy - 0.5 * side) / h).round() * h;
        Self::build(spec, h, x0, y0, cells_per_side, cells_per_side, cap, true)
    }

    /// Rasterizes only the rectangle `[lo, hi]`, snapped outward to multiples
    /// of `h`. Intended for fine local measurements, so no margin is required
    /// and the distance field is optional.
    pub fn window(
        spec: DomainSpec,
        h: f64,
        lo: (f64, f64),
        hi: (f64, f64),
        with_distance: bool,
        cap: usize,
    ) -> Result<Self> {
        spec.validate()?;
        if !(h.is_finite() && h > 0.0) || !(hi.0 > lo.0 && hi.1 > lo.1) {
            return Err(Error::InvalidInput("degenerate window".into()));
        }
        let i0 = (lo.0 / h).floor();
        let j0 = (lo.1 / h).floor();
        let nx = ((hi.0 / h).ceil() - i0) as usize;
        let ny = ((hi.1 / h).ceil() - j0) as usize;
        Self::build(spec, h, i0 * h, j0 * h, nx, ny, cap, with_distance)
    }

    #[allow(clippy::too_many_arguments)]
    fn build(
        spec: DomainSpec,
        h: f64,
        x0: f64,
        y0: f64,
        nx: usize,
        ny: usize,
        cap: usize,
        with_distance: bool,
    ) -> Result<Self> {
        let cells = nx.saturating_mul(ny);
        if cells > cap {
            return Err(Error::GridTooLarge { cells, cap });
        }
        let mut inside = vec![false; cells];
        inside.par_chunks_mut(nx).enumerate().for_each(|(j, row)| {
            let y = y0 + (j as f64 + 0.5) * h;
            for (i, c) in row.iter_mut().enumerate() {
                *c = spec.contains(x0 + (i as f64 + 0.5) * h, y);
            }
        });
        let mut grid = Self::assemble(Some(spec), h, x0, y0, nx, ny, inside, Vec::new())?;
        if with_distance {
            grid.dist = if spec.boundary_distance(0.0, 0.0).is_some() {
                let mut d = vec![0.0; cells];
                d.par_chunks_mut(nx).enumerate().for_each(|(j, row)| {
                    let y = y0 + (j as f64 + 0.5) * h;
                    for (i, c) in row.iter_mut().enumerate() {
                        *c = spec
                            .boundary_distance(x0 + (i as f64 + 0.5) * h, y)
                            .expect("closed form");
                    }
                });
                d
            } else {
                edt_boundary_distance(&grid.inside, nx, ny, h)
            };
        }
        Ok(grid)
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        spec: Option<DomainSpec>,
        h: f64,
        x0: f64,
        y0: f64,
        nx: usize,
        ny: usize,
        inside: Vec<bool>,
        dist: Vec<f64>,
    ) -> Result<Self> {
        let w = nx + 1;
        let mut sat = vec![0u32; w * (ny + 1)];
        for j in 0..ny {
            let mut run = 0u32;
            for i in 0..nx {
                run += inside[j * nx + i] as u32;
                sat[(j + 1) * w + i + 1] = sat[j * w + i + 1] + run;
            }
        }
        let omega_cells = sat[ny * w + nx] as usize;
        let mut grid = Self {
            spec,
            h,
            x0,
            y0,
            nx,
            ny,
            inside,
            dist,
            sat,
            omega_cells,
            diam: f64::NAN,
        };
        grid.diam = match spec {
            Some(s) => s.diam(),
            None => grid.hull_diameter(),
        };
        Ok(grid)
    }

    pub fn spec(&self) -> Option<DomainSpec> {
        self.spec
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn cells(&self) -> usize {
        self.nx * self.ny
    }

    /// Lower-left and upper-right corners of the box.
    pub fn bbox(&self) -> ((f64, f64), (f64, f64)) {
        (
            (self.x0, self.y0),
            (
                self.x0 + self.nx as f64 * self.h,
                self.y0 + self.ny as f64 * self.h,
            ),
        )
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    #[inline]
    pub fn center(&self, i: usize, j: usize) -> (f64, f64) {
        (
            self.x0 + (i as f64 + 0.5) * self.h,
            self.y0 + (j as f64 + 0.5) * self.h,
        )
    }

    #[inline]
    pub fn center_of(&self, k: usize) -> (f64, f64) {
        self.center(k % self.nx, k / self.nx)
    }

    /// Cell containing `(x, y)`, if inside the box.
    pub fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let fi = ((x - self.x0) / self.h).floor();
        let fj = ((y - self.y0) / self.h).floor();
        if fi < 0.0 || fj < 0.0 || fi >= self.nx as f64 || fj >= self.ny as f64 {
            None
        } else {
            Some((fi as usize, fj as usize))
        }
    }

    #[inline]
    pub fn inside(&self, i: usize, j: usize) -> bool {
        self.inside[j * self.nx + i]
    }

    pub fn indicator(&self) -> &[bool] {
        &self.inside
    }

    pub fn has_distance(&self) -> bool {
        !self.dist.is_empty()
    }

    /// Boundary distance of every cell centre, row-major.
    pub fn distances(&self) -> &[f64] {
        &self.dist
    }

    #[inline]
    pub fn dist(&self, i: usize, j: usize) -> f64 {
        self.dist[j * self.nx + i]
    }

    pub fn omega_cells(&self) -> usize {
        self.omega_cells
    }

    pub fn omega_area(&self) -> f64 {
        self.omega_cells as f64 * self.h * self.h
    }

    /// Domain cells in the half-open index rectangle `[i0, i1) x [j0, j1)`.
    #[inline]
    pub fn count_rect(&self, i0: usize, j0: usize, i1: usize, j1: usize) -> usize {
        let w = self.nx + 1;
        (self.sat[j1 * w + i1] + self.sat[j0 * w + i0]
            - self.sat[j0 * w + i1]
            - self.sat[j1 * w + i0]) as usize
    }

    pub fn bounded(&self) -> bool {
        self.spec.is_none_or(|s| s.bounded())
    }

    /// Analytic diameter when the spec is known, otherwise the convex-hull
    /// diameter of the domain cell centres.
    pub fn diam(&self) -> f64 {
        self.diam
    }

    /// Closed-form distance from a rectangle to the domain closure, if available.
    pub fn box_distance(&self, lo: (f64, f64), hi: (f64, f64)) -> Option<f64> {
        self.spec.and_then(|s| s.box_distance(lo, hi))
    }

    /// Index range of cell centres `c` with `lo <= c <= hi` along one axis.
    fn center_range(origin: f64, h: f64, n: usize, lo: f64, hi: f64) -> Option<(usize, usize)> {
        let a = ((lo - origin) / h - 0.5).ceil().max(0.0);
        let b = ((hi - origin) / h - 0.5).floor().min(n as f64 - 1.0);
        if a > b {
            None
        } else {
            Some((a as usize, b as usize + 1))
        }
    }

    /// `|B(x, r) cap Omega|` as `h^2` times the number of domain cells with
    /// centre in the closed ball.
    pub fn ball_measure(&self, x: f64, y: f64, r: f64) -> f64 {
        self.ball_count(x, y, r) as f64 * self.h * self.h
    }

    pub fn ball_count(&self, x: f64, y: f64, r: f64) -> usize {
        let Some((j0, j1)) = Self::center_range(self.y0, self.h, self.ny, y - r, y + r) else {
            return 0;
        };
        let mut total = 0;
        for j in j0..j1 {
            let dy = self.y0 + (j as f64 + 0.5) * self.h - y;
            let s2 = r * r - dy * dy;
            if s2 < 0.0 {
                continue;
            }
            let s = s2.sqrt();
            if let Some((i0, i1)) = Self::center_range(self.x0, self.h, self.nx, x - s, x + s) {
                total += self.count_rect(i0, j, i1, j + 1);
            }
        }
        total
    }

    /// Domain cell indices inside the closed ball, row-major.
    pub fn ball_cells(&self, x: f64, y: f64, r: f64) -> Vec<usize> {
        let mut out = Vec::new();
        let Some((j0, j1)) = Self::center_range(self.y0, self.h, self.ny, y - r, y + r) else {
            return out;
        };
        for j in j0..j1 {
            let dy = self.y0 + (j as f64 + 0.5) * self.h - y;
            let s2 = r * r - dy * dy;
            if s2 < 0.0 {
                continue;
            }
            let s = s2.sqrt();
            if let Some((i0, i1)) = Self::center_range(self.x0, self.h, self.nx, x - s, x + s) {
                out.extend((i0..i1).filter(|&i| self.inside(i, j)).map(|i| self.idx(i, j)));
            }
        }
        out
    }

    /// Convex-hull diameter of the domain cell centres (monotone chain).
    pub fn hull_diameter(&self) -> f64 {
        let mut pts = Vec::new();
        for j in 0..self.ny {
            let row = &self.inside[j * self.nx..(j + 1) * self.nx];
            if let Some(a) = row.iter().position(|&b| b) {
                let b = row.iter().rposition(|&b| b).expect("row has a cell");
                pts.push(self.center(a, j));
                if b != a {
                    pts.push(self.center(b, j));
                }
            }
        }
        let hull = convex_hull(pts);
        let mut best = 0.0f64;
        for (k, p) in hull.iter().enumerate() {
            for q in &hull[k + 1..] {
                best = best.max((p.0 - q.0).hypot(p.1 - q.1));
            }
        }
        best
    }

    /// Verifies `|d(a) - d(b)| <= h sqrt(2)` between edge-adjacent cells.
    pub fn check_distance_lipschitz(&self) -> Result<()> {
        if self.dist.is_empty() {
            return Ok(());
        }
        let bound = self.h * std::f64::consts::SQRT_2 + 1e-12;
        for j in 0..self.ny {
            for i in 0..self.nx {
                let d = self.dist(i, j);
                let right = i + 1 < self.nx && (d - self.dist(i + 1, j)).abs() > bound;
                let up = j + 1 < self.ny && (d - self.dist(i, j + 1)).abs() > bound;
                if right || up {
                    return Err(Error::invariant(
                        "geometry",
                        format!("distance field not 1-Lipschitz at cell ({i}, {j})"),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Writes the text grid format: a header line, then one
    /// `indicator distance` line per cell in row-major order.
    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let ((x0, y0), (x1, y1)) = self.bbox();
        writeln!(w, "n=2 h={} box={},{},{},{}", self.h, x0, y0, x1, y1)?;
        for k in 0..self.cells() {
            let d = self.dist.get(k).copied().unwrap_or(0.0);
            writeln!(w, "{} {}", self.inside[k] as u8, d)?;
        }
        Ok(())
    }

    /// Parses the text grid format written by [`DomainGrid::write_to`].
    pub fn read_from<R: BufRead>(r: R, cap: usize) -> Result<Self> {
        let mut lines = r.lines();
        let header = match lines.next() {
            Some(Ok(l)) => l,
            Some(Err(e)) => return Err(Error::parse("<header>", e.to_string())),
            None => return Err(Error::parse("<empty>", "missing header")),
        };
        let (h, bx) = parse_grid_header(&header)?;
        let nx = cells_along(bx[0], bx[2], h)?;
        let ny = cells_along(bx[1], bx[3], h)?;
        let cells = nx.checked_mul(ny).ok_or(Error::GridTooLarge {
            cells: usize::MAX,
            cap,
        })?;
        if cells > cap {
            return Err(Error::GridTooLarge { cells, cap });
        }
        let mut inside = Vec::with_capacity(cells);
        let mut dist = Vec::with_capacity(cells);
        for line in lines {
            let line = line.map_err(|e| Error::parse("<line>", e.to_string()))?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if inside.len() == cells {
                return Err(Error::parse(line, "more cell lines than the box holds"));
            }
            let mut it = line.split_whitespace();
            let ind = match it.next() {
                Some("0") => false,
                Some("1") => true,
                _ => return Err(Error::parse(line, "indicator must be 0 or 1")),
            };
            let d: f64 = it
                .next()
                .and_then(|t| t.parse().ok())
                .filter(|d: &f64| d.is_finite() && *d >= 0.0)
                .ok_or_else(|| Error::parse(line, "distance must be a finite nonnegative real"))?;
            if it.next().is_some() {
                return Err(Error::parse(line, "trailing tokens"));
            }
            inside.push(ind);
            dist.push(d);
        }
        if inside.len() != cells {
            return Err(Error::parse(
                header,
                format!("expected {cells} cell lines, got {}", inside.len()),
            ));
        }
        Self::assemble(None, h, bx[0], bx[1], nx, ny, inside, dist)
    }
}

fn parse_grid_header(header: &str) -> Result<(f64, [f64; 4])> {
    let mut n = None;
    let mut h = None;
    let mut bx = None;
    for tok in header.split_whitespace() {
        let (k, v) = tok
            .split_once('=')
            .ok_or_else(|| Error::parse(tok, "expected key=value"))?;
        match k {
            "n" => n = Some(v),
            "h" => {
                h = Some(
                    v.parse::<f64>()
                        .ok()
                        .filter(|h| h.is_finite() && *h > 0.0)
                        .ok_or_else(|| Error::parse(v, "h must be a positive real"))?,
                )
            }
            "box" => {
                let parts = v
                    .split(',')
                    .map(|t| t.parse::<f64>().ok().filter(|x| x.is_finite()))
                    .collect::<Option<Vec<f64>>>()
                    .filter(|p| p.len() == 4)
                    .ok_or_else(|| Error::parse(v, "box must be four finite reals"))?;
                bx = Some([parts[0], parts[1], parts[2], parts[3]]);
            }
            _ => return Err(Error::parse(k, "unknown header key")),
        }
    }
    if n != Some("2") {
        return Err(Error::parse(header, "only n=2 grids are supported"));
    }
    match (h, bx) {
        (Some(h), Some(bx)) => Ok((h, bx)),
        _ => Err(Error::parse(header, "header needs h= and box=")),
    }
}

fn cells_along(a: f64, b: f64, h: f64) -> Result<usize> {
    let n = (b - a) / h;
    let r = n.round();
    if !(1.0..1e9).contains(&r) || (n - r).abs() > 1e-6 * r.max(1.0) {
        return Err(Error::parse(
            format!("{a},{b}"),
            "box side is not a positive multiple of h",
        ));
    }
    Ok(r as usize)
}

fn convex_hull(mut pts: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: (f64, f64), a: (f64, f64), b: (f64, f64)| {
        (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
    };
    let mut lower: Vec<(f64, f64)> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<(f64, f64)> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

const EDT_FAR: f64 = 1e20;

/// Felzenszwalb-Huttenlocher squared distance transform of one line.
fn edt_1d(f: &[f64], out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        let fq = f[q] + (q * q) as f64;
        loop {
            let p = v[k];
            let s = (fq - (f[p] + (p * p) as f64)) / (2.0 * (q - p) as f64);
            if s <= z[k] && k > 0 {
                k -= 1;
                continue;
            }
            if s <= z[k] {
                // k == 0: the new parabola dominates everywhere.
                v[0] = q;
                z[0] = f64::NEG_INFINITY;
                z[1] = f64::INFINITY;
            } else {
                k += 1;
                v[k] = q;
                z[k] = s;
                z[k + 1] = f64::INFINITY;
            }
            break;
        }
    }
    k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let dq = q as f64 - p as f64;
        *o = dq * dq + f[p];
    }
}

/// Squared Euclidean distance (in cell units) from every cell to the
/// nearest cell with `site == true`.
fn edt_squared(site: &[bool], nx: usize, ny: usize) -> Vec<f64> {
    let mut g = vec![0.0; nx * ny];
    // Columns first.
    {
        let mut f = vec![0.0; ny];
        let mut out = vec![0.0; ny];
        let mut v = vec![0usize; ny];
        let mut z = vec![0.0; ny + 1];
        for i in 0..nx {
            for j in 0..ny {
                f[j] = if site[j * nx + i] { 0.0 } else { EDT_FAR };
            }
            edt_1d(&f, &mut out, &mut v, &mut z);
            for j in 0..ny {
                g[j * nx + i] = out[j];
            }
        }
    }
    g.par_chunks_mut(nx).for_each(|row| {
        let f = row.to_vec();
        let mut v = vec![0usize; nx];
        let mut z = vec![0.0; nx + 1];
        edt_1d(&f, row, &mut v, &mut z);
    });
    g
}

/// Boundary distance from the indicator alone: distance to the nearest
/// centre of the opposite type, minus half a cell.
fn edt_boundary_distance(inside: &[bool], nx: usize, ny: usize, h: f64) -> Vec<f64> {
    let outside: Vec<bool> = inside.iter().map(|&b| !b).collect();
    let to_omega = edt_squared(inside, nx, ny);
    let to_u = edt_squared(&outside, nx, ny);
    inside
        .iter()
        .enumerate()
        .map(|(k, &b)| {
            let sq = if b { to_u[k] } else { to_omega[k] };
            if sq >= EDT_FAR {
                f64::INFINITY
            } else {
                (sq.sqrt() * h - 0.5 * h).max(0.0)
            }
        })
        .collect()
}

/// Sampling plan for the Ahlfors scan.
#[derive(Debug, Clone, Serialize)]
pub struct SamplingPlan {
    /// Number of random centres; half are drawn within `5h` of the boundary.
    pub points: usize,
    /// Number of log-spaced radii in `(4h, 2 diam]`.
    pub radii: usize,
    pub seed: u64,
    /// Extra centres always included (e.g. a cusp tip).
    pub anchors: Vec<(f64, f64)>,
}

impl Default for SamplingPlan {
    fn default() -> Self {
        Self {
            points: 100,
            radii: 20,
            seed: 0,
            anchors: Vec::new(),
        }
    }
}

impl SamplingPlan {
    /// Centres drawn from domain cells, boundary-biased, then the anchors.
    pub fn centers(&self, grid: &DomainGrid) -> Result<Vec<(f64, f64)>> {
        if grid.omega_cells() == 0 {
            return Err(Error::EmptyDomain);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let all: Vec<usize> = (0..grid.cells()).filter(|&k| grid.inside[k]).collect();
        let near: Vec<usize> = if grid.has_distance() {
            all.iter()
                .copied()
                .filter(|&k| grid.dist[k] <= 5.0 * grid.h)
                .collect()
        } else {
            Vec::new()
        };
        let n_near = if near.is_empty() { 0 } else { self.points / 2 };
        let mut out = Vec::with_capacity(self.points + self.anchors.len());
        for _ in 0..n_near {
            out.push(grid.center_of(*near.choose(&mut rng).expect("nonempty")));
        }
        for _ in n_near..self.points {
            out.push(grid.center_of(*all.choose(&mut rng).expect("nonempty")));
        }
        out.extend(self.anchors.iter().copied());
        Ok(out)
    }

    pub fn radii_for(&self, grid: &DomainGrid) -> Result<Vec<f64>> {
        let top = 2.0 * grid.diam();
        let floor = 4.0 * grid.h;
        if !top.is_finite() || top <= floor {
            return Err(Error::InvalidInput(format!(
                "radius range (4h, 2 diam] = ({floor}, {top}] is empty or unbounded"
            )));
        }
        let mut r = logspace(floor, top, self.radii + 1);
        r.remove(0);
        Ok(r)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AhlforsRow {
    pub x: f64,
    pub y: f64,
    pub r: f64,
    pub measure: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct AhlforsReport {
    pub c_inf: f64,
    pub argmin: (f64, f64, f64),
    pub centers: usize,
    pub boundary_centers: usize,
    pub radii: Vec<f64>,
    #[serde(skip)]
    pub rows: Vec<AhlforsRow>,
}

impl AhlforsReport {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "x,y,r,measure,ratio")?;
        for r in &self.rows {
            writeln!(w, "{},{},{},{},{}", r.x, r.y, r.r, r.measure, r.ratio)?;
        }
        Ok(())
    }
}

/// Minimum of `|B(x, r) cap Omega| / r^2` over the plan.
pub fn ahlfors_constant(grid: &DomainGrid, plan: &SamplingPlan) -> Result<AhlforsReport> {
    let centers = plan.centers(grid)?;
    let radii = plan.radii_for(grid)?;
    let rows: Vec<AhlforsRow> = centers
        .par_iter()
        .flat_map_iter(|&(x, y)| {
            radii.iter().map(move |&r| {
                let measure = grid.ball_measure(x, y, r);
                AhlforsRow {
                    x,
                    y,
                    r,
                    measure,
                    ratio: measure / (r * r),
                }
            })
        })
        .collect();
    let best = rows
        .iter()
        .min_by(|a, b| a.ratio.total_cmp(&b.ratio))
        .expect("plan nonempty");
    let boundary_centers = if grid.has_distance() {
        centers
            .iter()
            .filter(|&&(x, y)| {
                grid.cell_of(x, y)
                    .is_some_and(|(i, j)| grid.dist(i, j) <= 5.0 * grid.h)
            })
            .count()
    } else {
        0
    };
    Ok(AhlforsReport {
        c_inf: best.ratio,
        argmin: (best.x, best.y, best.r),
        centers: centers.len(),
        boundary_centers,
        radii,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn disk(h: f64) -> DomainGrid {
        DomainGrid::rasterize(DomainSpec::Disk { r: 1.0 }, h, 4.0, DEFAULT_CELL_CAP).unwrap()
    }

    #[test]
    fn disk_area_and_box() {
        let g = disk(0.01);
        assert!((g.omega_area() - PI).abs() < 0.05);
        let ((x0, y0), (x1, _)) = g.bbox();
        assert!((x0 + 5.12).abs() < 1e-12 && (y0 + 5.12).abs() < 1e-12);
        assert!((x1 - 5.12).abs() < 1e-9);
        assert!((g.ball_measure(0.0, 0.0, 2.0) - PI).abs() < 0.05);
        assert!((g.ball_measure(0.0, 0.0, 0.5) - PI / 4.0).abs() < 0.02);
    }

    #[test]
    fn square_is_exact_when_aligned() {
        let g = DomainGrid::rasterize(DomainSpec::Square { a: 1.0 }, 0.01, 3.0, DEFAULT_CELL_CAP)
            .unwrap();
        assert_eq!(g.omega_cells(), 10_000);
    }

    #[test]
    fn cusp_area() {
        let spec = DomainSpec::Cusp { gamma: 3.0, len: 1.0 };
        let g = DomainGrid::rasterize(spec, 0.005, 4.0, DEFAULT_CELL_CAP).unwrap();
        assert!((g.omega_area() - 0.5).abs() < 0.02);
        assert_eq!(spec.diam(), 2.0);
    }

    #[test]
    fn margin_is_enforced() {
        assert!(DomainGrid::rasterize(DomainSpec::Disk { r: 1.0 }, 0.01, 3.0, DEFAULT_CELL_CAP)
            .is_err());
        assert!(matches!(
            DomainGrid::rasterize(DomainSpec::Disk { r: 1.0 }, 0.01, 4.0, 1000),
            Err(Error::GridTooLarge { .. })
        ));
    }

    #[test]
    fn edt_matches_analytic_within_two_cells() {
        let spec = DomainSpec::Disk { r: 1.0 };
        let h = 0.02;
        let g = DomainGrid::window(spec, h, (-1.5, -1.5), (1.5, 1.5), false, DEFAULT_CELL_CAP)
            .unwrap();
        let d = edt_boundary_distance(g.indicator(), g.nx(), g.ny(), h);
        for k in 0..g.cells() {
            let (x, y) = g.center_of(k);
            let exact = spec.boundary_distance(x, y).unwrap();
            assert!((d[k] - exact).abs() <= 2.0 * h, "{x} {y} {} {exact}", d[k]);
        }
    }

    #[test]
    fn diameters() {
        assert_eq!(disk(0.02).diam(), 2.0);
        let g = disk(0.02);
        assert!((g.hull_diameter() - 2.0).abs() < 0.05);
        let spec = DomainSpec::Cusp { gamma: 3.0, len: 1.0 };
        let g = DomainGrid::rasterize(spec, 0.01, 4.0, DEFAULT_CELL_CAP).unwrap();
        assert!((g.hull_diameter() - 2.0).abs() < 0.05);
    }

    #[test]
    fn box_distances() {
        let hp = DomainSpec::HalfPlane { window: 4.0 };
        assert_eq!(hp.box_distance((0.0, -2.0), (1.0, -1.0)), Some(1.0));
        let d = DomainSpec::Disk { r: 1.0 };
        assert!((d.box_distance((2.0, -0.5), (3.0, 0.5)).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(d.box_distance((0.5, 0.5), (3.0, 3.0)), Some(0.0));
        let a = DomainSpec::Annulus { r1: 1.0, r2: 2.0 };
        assert!((a.box_distance((-0.25, -0.25), (0.25, 0.25)).unwrap() - (1.0 - 0.5f64.sqrt() / 2.0)).abs() < 1e-15);
    }

    #[test]
    fn cusp_tip_measure_at_fine_h() {
        let spec = DomainSpec::Cusp { gamma: 3.0, len: 1.0 };
        let g = DomainGrid::window(spec, 1e-3, (-0.11, -0.11), (0.11, 0.11), false, DEFAULT_CELL_CAP)
            .unwrap();
        let m = g.ball_measure(0.0, 0.0, 0.1);
        assert!(m > 5e-5 / 1.5 && m < 5e-5 * 1.5, "{m}");
    }

    #[test]
    fn ahlfors_disk() {
        let g = disk(0.02);
        let rep = ahlfors_constant(&g, &SamplingPlan::default()).unwrap();
        assert!((rep.c_inf - PI / 16.0).abs() < 0.02, "{}", rep.c_inf);
        assert_eq!(rep.centers, 100);
        assert_eq!(rep.radii.len(), 20);
        assert!(rep.boundary_centers >= 50);
    }

    #[test]
    fn grid_file_round_trip() {
        let g = DomainGrid::window(
            DomainSpec::Disk { r: 1.0 },
            0.25,
            (-1.5, -1.5),
            (1.5, 1.5),
            true,
            DEFAULT_CELL_CAP,
        )
        .unwrap();
        let mut buf = Vec::new();
        g.write_to(&mut buf).unwrap();
        let back = DomainGrid::read_from(&buf[..], DEFAULT_CELL_CAP).unwrap();
        assert_eq!(back.indicator(), g.indicator());
        assert_eq!(back.distances(), g.distances());
        assert_eq!(back.bbox(), g.bbox());
    }

    #[test]
    fn grid_file_rejects_bad_input() {
        for bad in [
            "",
            "n=3 h=1 box=0,0,1,1\n1 0\n",
            "n=2 h=1 box=0,0,1,1\n",
            "n=2 h=1 box=0,0,1,1\n2 0\n",
            "n=2 h=1 box=0,0,1,1\n1 -1\n",
            "n=2 h=0.3 box=0,0,1,1\n",
            "n=2 h=1 box=0,0,1,1\n1 0\n1 0\n",
        ] {
            assert!(DomainGrid::read_from(bad.as_bytes(), 100).is_err(), "{bad:?}");
        }
        assert!(matches!(
            DomainGrid::read_from("n=2 h=1 box=0,0,100,100\n".as_bytes(), 100),
            Err(Error::GridTooLarge { .. })
        ));
    }

    #[test]
    fn domain_spec_parse() {
        assert_eq!("disk:1".parse::<DomainSpec>().unwrap(), DomainSpec::Disk { r: 1.0 });
        assert_eq!(
            "halfplane".parse::<DomainSpec>().unwrap(),
            DomainSpec::HalfPlane { window: 4.0 }
        );
        assert!("annulus:2,1".parse::<DomainSpec>().is_err());
        assert!("blob:1".parse::<DomainSpec>().is_err());
        assert!(DomainSpec::Cusp { gamma: 1.0, len: 1.0 }.is_flagged_regular());
    }
}
