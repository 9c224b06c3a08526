//! Young functions: the four closed-form families, their inverse, the
//! nontriviality constant `C_phi` and the sub-exponential growth test.
//!
//! All kinds are evaluated in log space first, which keeps the exponential
//! families usable far beyond the range where `phi(t)` itself overflows.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::numeric::{integrate, logspace};

/// Value returned by [`YoungFunction::eval`] when the true value overflows.
pub const SATURATED: f64 = 1e300;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Kind {
    /// `t^p`.
    Power { p: f64 },
    /// `t^p ln(1+t)^alpha`.
    PowerLog { p: f64, alpha: f64 },
    /// `t^p exp(c t^alpha)`.
    PowerExp { p: f64, c: f64, alpha: f64 },
    /// `exp(c t^alpha)` minus its Taylor polynomial of degree `[n/alpha]`.
    ExpTaylor { c: f64, alpha: f64 },
}

/// A convex `phi: [0, inf) -> [0, inf)` with `phi(0) = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct YoungFunction {
    kind: Kind,
    n: u32,
    /// Highest subtracted Taylor degree for `ExpTaylor`, zero otherwise.
    taylor_degree: u32,
    /// `ln((taylor_degree + 1)!)`.
    ln_fact: f64,
}

impl YoungFunction {
    pub fn new(kind: Kind, n: u32) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidInput("dimension must be positive".into()));
        }
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidInput(format!("{name} must be a positive real, got {v}")))
            }
        };
        let at_least_one = |v: f64| {
            if v.is_finite() && v >= 1.0 {
                Ok(())
            } else {
                Err(Error::InvalidInput(format!("exponent p must be >= 1 for convexity, got {v}")))
            }
        };
        let mut taylor_degree = 0;
        match kind {
            Kind::Power { p } => at_least_one(p)?,
            Kind::PowerLog { p, alpha } => {
                at_least_one(p)?;
                positive("alpha", alpha)?;
            }
            Kind::PowerExp { p, c, alpha } => {
                at_least_one(p)?;
                positive("c", c)?;
                positive("alpha", alpha)?;
            }
            Kind::ExpTaylor { c, alpha } => {
                positive("c", c)?;
                positive("alpha", alpha)?;
                let m = (n as f64 / alpha).floor();
                if m > 1e4 {
                    return Err(Error::InvalidInput(format!(
                        "alpha = {alpha} leaves {m} Taylor terms"
                    )));
                }
                taylor_degree = m as u32;
            }
        }
        let ln_fact = (1..=taylor_degree + 1).map(|k| (k as f64).ln()).sum();
        Ok(Self {
            kind,
            n,
            taylor_degree,
            ln_fact,
        })
    }

    /// Parses `kind:p1,p2,...` with the dimension supplied separately.
    pub fn parse(spec: &str, n: u32) -> Result<Self> {
        let spec = spec.trim();
        let (name, rest) = spec
            .split_once(':')
            .ok_or_else(|| Error::parse(spec, "expected `kind:params`"))?;
        let params = rest
            .split(',')
            .map(|tok| {
                let tok = tok.trim();
                tok.parse::<f64>()
                    .map_err(|_| Error::parse(tok, "not a real number"))
            })
            .collect::<Result<Vec<f64>>>()?;
        let arity = |k: usize| {
            if params.len() == k {
                Ok(())
            } else {
                Err(Error::parse(
                    rest,
                    format!("`{name}` takes {k} parameter(s), got {}", params.len()),
                ))
            }
        };
        let kind = match name.trim() {
            "power" => {
                arity(1)?;
                Kind::Power { p: params[0] }
            }
            "powerlog" => {
                arity(2)?;
                Kind::PowerLog {
                    p: params[0],
                    alpha: params[1],
                }
            }
            "powerexp" => {
                arity(3)?;
                Kind::PowerExp {
                    p: params[0],
                    c: params[1],
                    alpha: params[2],
                }
            }
            "exptaylor" => {
                arity(2)?;
                Kind::ExpTaylor {
                    c: params[0],
                    alpha: params[1],
                }
            }
            other => return Err(Error::parse(other, "unknown Young function kind")),
        };
        Self::new(kind, n).map_err(|e| match e {
            Error::InvalidInput(reason) => Error::parse(spec, reason),
            e => e,
        })
    }

    pub fn kind(&self) -> Kind {
        self.kind
    }

    pub fn dimension(&self) -> u32 {
        self.n
    }

    /// `ln phi(t)`, `-inf` at zero.
    pub fn ln_eval(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return f64::NEG_INFINITY;
        }
        let lt = t.ln();
        match self.kind {
            Kind::Power { p } => p * lt,
            Kind::PowerLog { p, alpha } => p * lt + alpha * t.ln_1p().ln(),
            Kind::PowerExp { p, c, alpha } => p * lt + c * t.powf(alpha),
            Kind::ExpTaylor { c, alpha } => self.ln_taylor_tail(c * t.powf(alpha)),
        }
    }

    /// `ln sum_{j > m} x^j / j!` for `m` the Taylor degree.
    fn ln_taylor_tail(&self, x: f64) -> f64 {
        let m = self.taylor_degree as f64;
        if x < 30.0 {
            // x^{m+1}/(m+1)! * (1 + x/(m+2) + x^2/((m+2)(m+3)) + ...)
            let mut term = 1.0;
            let mut sum = 1.0;
            let mut k = m + 2.0;
            loop {
                term *= x / k;
                sum += term;
                if term < 1e-17 * sum {
                    break;
                }
                k += 1.0;
            }
            (m + 1.0) * x.ln() - self.ln_fact + sum.ln()
        } else {
            let mut poly = 0.0;
            let mut term = 1.0;
            for j in 0..=self.taylor_degree {
                if j > 0 {
                    term *= x / j as f64;
                }
                poly += term;
            }
            x + (-poly * (-x).exp()).ln_1p()
        }
    }

    /// `phi(t)`, saturating to [`SATURATED`] on overflow.
    pub fn eval(&self, t: f64) -> f64 {
        self.eval_checked(t).0
    }

    /// `phi(t)` and whether the value saturated.
    #[inline]
    pub fn eval_checked(&self, t: f64) -> (f64, bool) {
        if t <= 0.0 {
            return (0.0, false);
        }
        let v = match self.kind {
            Kind::Power { p } => pow(t, p),
            Kind::PowerLog { p, alpha } => pow(t, p) * pow(t.ln_1p(), alpha),
            _ => {
                let l = self.ln_eval(t);
                if l > SATURATED.ln() {
                    f64::INFINITY
                } else {
                    l.exp()
                }
            }
        };
        if v.is_finite() && v <= SATURATED {
            (v, false)
        } else {
            (SATURATED, true)
        }
    }

    /// Logarithmic derivative `t phi'(t) / phi(t)`.
    pub fn local_exponent(&self, t: f64) -> f64 {
        match self.kind {
            Kind::Power { p } => p,
            Kind::PowerLog { p, alpha } => {
                let l = t.ln_1p();
                p + alpha * t / ((1.0 + t) * l)
            }
            Kind::PowerExp { p, c, alpha } => p + c * alpha * t.powf(alpha),
            Kind::ExpTaylor { c, alpha } => {
                let x = c * t.powf(alpha);
                let m = self.taylor_degree;
                let ln_m_fact: f64 = (1..=m).map(|k| (k as f64).ln()).sum();
                let lead = (m as f64 * x.ln() - ln_m_fact - self.ln_taylor_tail(x)).exp();
                alpha * x * (1.0 + lead)
            }
        }
    }

    /// `phi^{-1}(y)` by bracket doubling and bisection in log space.
    pub fn inverse(&self, y: f64) -> Result<f64> {
        if !y.is_finite() || y < 0.0 {
            return Err(Error::InvalidInput(format!(
                "inverse needs a finite nonnegative argument, got {y}"
            )));
        }
        if y == 0.0 {
            return Ok(0.0);
        }
        let ly = y.ln();
        let mut hi = 1.0f64;
        let mut guard = 0;
        while self.ln_eval(hi) < ly {
            hi *= 2.0;
            guard += 1;
            if guard > 2100 {
                return Err(Error::InvalidInput(format!("cannot bracket phi^-1({y})")));
            }
        }
        let mut lo = hi;
        while self.ln_eval(lo) >= ly {
            lo *= 0.5;
            guard += 1;
            if guard > 4200 || lo == 0.0 {
                return Ok(0.0);
            }
        }
        let (lo, hi) =
            crate::numeric::bisect_monotone(|t| self.ln_eval(t) < ly, lo, hi, 1e-16, 200);
        Ok(0.5 * (lo + hi))
    }

    /// `(t^n / phi(t)) int_0^t phi(s) s^{-n-1} ds`, computed in `sigma = ln(s/t)`.
    pub fn cphi_ratio(&self, t: f64, n: u32) -> Result<f64> {
        let nf = n as f64;
        let lt = self.ln_eval(t);
        let g = |sigma: f64| (self.ln_eval(t * sigma.exp()) - lt - nf * sigma).exp();
        // Pieces grow geometrically away from sigma = 0 at the scale where the
        // integrand decays, so sharply peaked exponential kinds are resolved.
        let width = (1.0 / (self.local_exponent(t) - nf).max(1e-300)).min(1.0);
        let sigma_lo = -40.0;
        let mut edges = vec![0.0];
        let mut w = width;
        while -w > sigma_lo {
            edges.push(-w);
            w *= 2.0;
        }
        edges.push(sigma_lo);
        let mut total = 0.0;
        for pair in edges.windows(2) {
            total += integrate(g, pair[1], pair[0], 1e-11, 1e-300, 400)?;
        }
        let q_lo = self.local_exponent(t * sigma_lo.exp());
        if q_lo > nf {
            total += g(sigma_lo) / (q_lo - nf);
        } else {
            return Err(Error::Quadrature(format!(
                "integrand of C_phi not decaying at s = {:e}",
                t * sigma_lo.exp()
            )));
        }
        Ok(total)
    }

    /// `C_phi` over the default ladder `1e-6..1e6`, 500 points.
    pub fn compute_cphi(&self, n: u32) -> Result<CphiReport> {
        self.compute_cphi_on(n, 1e-6, 1e6, 500)
    }

    pub fn compute_cphi_on(&self, n: u32, t_lo: f64, t_hi: f64, points: usize) -> Result<CphiReport> {
        if n < 2 {
            return Err(Error::InvalidInput(format!("C_phi needs n >= 2, got {n}")));
        }
        // phi(s)/s^{n+1} ~ s^{q0-n-1} near zero, integrable iff q0 > n.
        let q0 = self.local_exponent(1e-10);
        if q0 <= n as f64 + 1e-6 {
            return Ok(CphiReport {
                value: None,
                argmax: None,
                increasing_at_end: false,
                exponent_at_zero: q0,
                ladder: (t_lo, t_hi, points),
            });
        }
        let ts = logspace(t_lo, t_hi, points);
        let mut vals = Vec::with_capacity(points);
        for &t in &ts {
            vals.push(self.cphi_ratio(t, n)?);
        }
        let (imax, &vmax) = vals
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .expect("ladder nonempty");
        let increasing_at_end =
            points >= 2 && imax == points - 1 && vals[points - 1] > vals[points - 2] * (1.0 + 1e-9);
        Ok(CphiReport {
            value: Some(vmax),
            argmax: Some(ts[imax]),
            increasing_at_end,
            exponent_at_zero: q0,
            ladder: (t_lo, t_hi, points),
        })
    }

    /// Sub-exponential growth `phi(x) e^{-cx} -> 0` for every `c` in `1, 1/2, ..., 2^-10`.
    pub fn check_subexponential(&self) -> SubexpReport {
        // ln phi(x) = (power part) + c_phi x^a; the verdict for each c follows
        // from comparing the exponential part against c x.
        let (c_phi, a) = match self.kind {
            Kind::Power { .. } | Kind::PowerLog { .. } => (0.0, 0.0),
            Kind::PowerExp { c, alpha, .. } | Kind::ExpTaylor { c, alpha } => (c, alpha),
        };
        let rows = (0..=10)
            .map(|k| {
                let c = 2f64.powi(-k);
                let decays = if c_phi == 0.0 || a < 1.0 {
                    true
                } else if a == 1.0 {
                    c > c_phi
                } else {
                    false
                };
                let x = 2f64.powi(60);
                SubexpRow {
                    c,
                    decays,
                    log_value_at_2_pow_60: self.ln_eval(x) - c * x,
                }
            })
            .collect::<Vec<_>>();
        SubexpReport {
            holds: rows.iter().all(|r| r.decays),
            rows,
        }
    }

    /// Samples convexity and monotonicity on a log ladder; `Err` names the first failure.
    pub fn validate_shape(&self) -> Result<()> {
        let ts: Vec<f64> = std::iter::once(0.0).chain(logspace(1e-4, 1e2, 120)).collect();
        let vals: Vec<f64> = ts.iter().map(|&t| self.eval(t)).collect();
        if vals[0] != 0.0 {
            return Err(Error::invariant("young", "phi(0) != 0"));
        }
        for w in 1..ts.len() {
            if vals[w] <= 0.0 || vals[w] < vals[w - 1] {
                return Err(Error::invariant(
                    "young",
                    format!("not positive and nondecreasing at t = {}", ts[w]),
                ));
            }
        }
        for i in 0..ts.len() {
            for j in (i + 1..ts.len()).step_by(7) {
                let (a, b) = (ts[i], ts[j]);
                if vals[j] >= SATURATED {
                    continue;
                }
                for lam in [0.1, 0.25, 0.5, 0.75, 0.9] {
                    let mid = self.eval(lam * a + (1.0 - lam) * b);
                    let chord = lam * vals[i] + (1.0 - lam) * vals[j];
                    if mid > chord + 1e-12 * chord.max(1.0) {
                        return Err(Error::invariant(
                            "young",
                            format!("convexity fails on [{a}, {b}] at lambda {lam}"),
                        ));
                    }
                }
            }
        }
        if self.eval(1e6) <= 1e6 {
            return Err(Error::invariant("young", "phi does not grow without bound"));
        }
        Ok(())
    }
}

impl fmt::Display for YoungFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            Kind::Power { p } => write!(f, "power:{p}"),
            Kind::PowerLog { p, alpha } => write!(f, "powerlog:{p},{alpha}"),
            Kind::PowerExp { p, c, alpha } => write!(f, "powerexp:{p},{c},{alpha}"),
            Kind::ExpTaylor { c, alpha } => write!(f, "exptaylor:{c},{alpha}"),
        }
    }
}

impl FromStr for YoungFunction {
    type Err = Error;

    /// Parses with the planar default `n = 2`.
    fn from_str(s: &str) -> Result<Self> {
        Self::parse(s, 2)
    }
}

/// Outcome of the `C_phi` computation.
#[derive(Debug, Clone, Serialize)]
pub struct CphiReport {
    /// Supremum over the ladder; `None` when the inner integral diverges at 0.
    pub value: Option<f64>,
    pub argmax: Option<f64>,
    /// The maximum sits at the top of the ladder and the ratio is still
    /// rising, so the reported value is only a lower bound.
    pub increasing_at_end: bool,
    pub exponent_at_zero: f64,
    pub ladder: (f64, f64, usize),
}

impl CphiReport {
    pub fn diverges(&self) -> bool {
        self.value.is_none()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SubexpRow {
    pub c: f64,
    pub decays: bool,
    pub log_value_at_2_pow_60: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SubexpReport {
    pub holds: bool,
    pub rows: Vec<SubexpRow>,
}

/// `t^p`, through `powi` for small integer exponents; this sits in the
/// innermost quadrature loop.
#[inline]
fn pow(t: f64, p: f64) -> f64 {
    if p.fract() == 0.0 && p.abs() <= 16.0 {
        t.powi(p as i32)
    } else {
        t.powf(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn yf(s: &str) -> YoungFunction {
        s.parse().unwrap()
    }

    #[test]
    fn closed_form_values() {
        assert_eq!(yf("power:3").eval(2.0), 8.0);
        for s in ["power:3", "powerlog:2,2", "powerexp:4,1,0.5", "exptaylor:1,0.5"] {
            assert_eq!(yf(s).eval(0.0), 0.0);
        }
        let v = yf("exptaylor:1,1").eval(1.0);
        assert!((v - (std::f64::consts::E - 2.5)).abs() < 1e-15);
    }

    #[test]
    fn exptaylor_branches_agree() {
        let f = yf("exptaylor:1,1");
        let x: f64 = 30.0;
        let below = f.ln_taylor_tail(x - 1e-9);
        let above = f.ln_taylor_tail(x);
        assert!((below - above).abs() < 1e-8);
        let direct = (x.exp() - 1.0 - x - x * x / 2.0).ln();
        assert!((above - direct).abs() < 1e-12);
    }

    #[test]
    fn saturation_is_flagged() {
        let (v, sat) = yf("powerexp:3,1,1").eval_checked(1e4);
        assert!(sat);
        assert_eq!(v, SATURATED);
    }

    #[test]
    fn inverse_values() {
        let f = yf("power:3");
        assert!((f.inverse(8.0).unwrap() - 2.0).abs() < 1e-14);
        assert_eq!(f.inverse(0.0).unwrap(), 0.0);
        assert!(f.inverse(f64::NAN).is_err());
        let g = yf("exptaylor:1,1");
        let t = g.inverse(g.eval(1.0)).unwrap();
        assert!((t - 1.0).abs() < 1e-8);
    }

    #[test]
    fn cphi_power_closed_form() {
        for p in [3.0, 4.0] {
            let f = YoungFunction::new(Kind::Power { p }, 2).unwrap();
            let r = f.compute_cphi(2).unwrap();
            let want = 1.0 / (p - 2.0);
            assert!((r.value.unwrap() - want).abs() < 1e-3 * want);
        }
        assert!(yf("power:2").compute_cphi(2).unwrap().diverges());
    }

    #[test]
    fn cphi_exponential_kinds_finite() {
        for s in ["powerexp:3,1,0.5", "powerexp:3,1,1", "exptaylor:1,0.5", "exptaylor:1,1"] {
            let r = yf(s).compute_cphi(2).unwrap();
            assert!(r.value.unwrap().is_finite(), "{s}");
            assert!(!r.increasing_at_end, "{s}");
        }
    }

    #[test]
    fn cphi_borderline_log_kind_flagged() {
        let r = yf("powerlog:2,2").compute_cphi(2).unwrap();
        assert!(r.value.unwrap().is_finite());
        assert!(r.increasing_at_end);
    }

    #[test]
    fn subexponential_verdicts() {
        assert!(yf("powerlog:2,2").check_subexponential().holds);
        assert!(!yf("powerexp:4,1,1").check_subexponential().holds);
        assert!(yf("power:4").check_subexponential().holds);
        assert!(yf("exptaylor:1,0.5").check_subexponential().holds);
        assert!(!yf("exptaylor:1,1").check_subexponential().holds);
    }

    #[test]
    fn parse_errors_name_token() {
        match "powr:3".parse::<YoungFunction>() {
            Err(Error::Parse { token, .. }) => assert_eq!(token, "powr"),
            other => panic!("{other:?}"),
        }
        match "power:3x".parse::<YoungFunction>() {
            Err(Error::Parse { token, .. }) => assert_eq!(token, "3x"),
            other => panic!("{other:?}"),
        }
        assert!("power:0.5".parse::<YoungFunction>().is_err());
        assert!("powerlog:2".parse::<YoungFunction>().is_err());
    }

    #[test]
    fn display_round_trips() {
        for s in ["power:3", "powerlog:2,2", "powerexp:4,1,0.5", "exptaylor:1,0.5"] {
            assert_eq!(yf(s).to_string(), s);
        }
    }
}
