//! Experiment configuration, verb dispatch and report emission.
//!
//! A run reads a line-oriented `key = value` configuration, executes one
//! verb end to end and returns a [`Report`]. When `out` is set the report
//! is written as `<verb>.json` plus one CSV per table; wall-clock timings go
//! to a separate `<verb>.timings.json` so that reports stay byte-identical
//! across runs.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::extension::{
    battery, calibrate_imbedding, cutoff, cutoff_bound, h_split_of, h_splits_of, necessity_probe, ratio_from_profile,
    smooth_family, CutoffSpec, ExtensionContext, ExtensionOptions, HSplit,
};
use crate::geometry::{ahlfors_constant, DomainGrid, DomainSpec, SamplingPlan};
use crate::norms::{
    cell_pair_weight, frac_sobolev, luxemburg, pair_energy, poincare_check, Engine, EnergyProfile, GridFunction,
    Region, Support,
};
use crate::numeric::KahanSum;
use crate::whitney::{PartitionOfUnity, WhitneyCover};
use crate::young::{Kind, YoungFunction};

const N: u32 = 2;

/// Relative slack allowed on Luxemburg homogeneity and the triangle
/// inequality: the bisection width plus the binning error.
pub const NORM_RTOL: f64 = 1e-3;

/// Relative agreement required between the Luxemburg seminorm for
/// `t^p` and the fractional Sobolev seminorm with `s = n / p`.
pub const SOBOLEV_RTOL: f64 = 2e-3;

/// Relative agreement between [`pair_energy`] and the plain double loop.
pub const NAIVE_RTOL: f64 = 1e-10;

/// Closed-form tolerance on `C_phi` for power functions.
pub const CPHI_RTOL: f64 = 1e-3;

/// Allowed deviation of the partition of unity from one.
pub const POU_TOL: f64 = 1e-10;

/// Allowed relative change of the maximal operator ratio under `h -> h/2`.
pub const RATIO_DRIFT: f64 = 0.2;

/// Allowed deviation of the first halving radius from `1/sqrt 2` on a disk.
pub const B1_TOL: f64 = 0.01;

/// Allowed deviation between the worked cutoff bound and its closed form.
pub const WORKED_RTOL: f64 = 0.01;

/// The experiments a run can execute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verb {
    Cphi,
    Ahlfors,
    Whitney,
    Reflect,
    Norm,
    Extend,
    Ratio,
    Hsplit,
    Cutoff,
    Probe,
    Suite,
}

impl Verb {
    pub const ALL: [Verb; 11] = [
        Verb::Cphi,
        Verb::Ahlfors,
        Verb::Whitney,
        Verb::Reflect,
        Verb::Norm,
        Verb::Extend,
        Verb::Ratio,
        Verb::Hsplit,
        Verb::Cutoff,
        Verb::Probe,
        Verb::Suite,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Verb::Cphi => "cphi",
            Verb::Ahlfors => "ahlfors",
            Verb::Whitney => "whitney",
            Verb::Reflect => "reflect",
            Verb::Norm => "norm",
            Verb::Extend => "extend",
            Verb::Ratio => "ratio",
            Verb::Hsplit => "hsplit",
            Verb::Cutoff => "cutoff",
            Verb::Probe => "probe",
            Verb::Suite => "suite",
        }
    }
}

impl fmt::Display for Verb {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Verb {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Verb::ALL
            .into_iter()
            .find(|v| v.name() == s.trim())
            .ok_or_else(|| Error::parse(s, "unknown verb"))
    }
}

/// Groups of checks run by the `norm` verb.
const NORM_CHECKS: [&str; 4] = ["algebra", "cross", "naive", "poincare"];

/// Every key with its default value.
const DEFAULTS: &[(&str, &str)] = &[
    ("alpha", "auto"),
    ("alpha_scale", "1.01"),
    ("balls", "200"),
    ("c_a", "auto"),
    ("cap", "16777216"),
    ("chain_domain", "disk:1"),
    ("chain_h", "0.02"),
    ("checks", "all"),
    ("cutoff", "0,0,0.25,0.5"),
    ("cutoffs", "10"),
    ("direct_limit", "20000"),
    ("domain", "disk:1"),
    ("engine", "auto"),
    ("epsilon", "auto"),
    ("functions", "10"),
    ("h", "0.02"),
    ("jmax", "8"),
    ("margin", "auto"),
    ("naive_side", "40"),
    ("out", ""),
    ("pairs", "50"),
    ("phi", "power:3"),
    ("poincare_ball", "0,0,1"),
    ("points", "100"),
    ("probe", "0,0,1"),
    ("radii", "20"),
    ("refine", "false"),
    ("samples", "10000"),
    ("seed", "0"),
    ("sentinel_side", "auto"),
    ("suite_verbs", "cphi,ahlfors,whitney,reflect,norm,extend,ratio,hsplit,cutoff,probe"),
    ("tip_k", "3..7"),
    ("tip_scales", "0.8,0.4,0.2,0.1"),
    ("verb", "suite"),
    ("workers", "1"),
];

/// A parsed configuration: every key with its current value, defaults
/// filled in. The full map is echoed into each report.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    raw: BTreeMap<String, String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            raw: DEFAULTS.iter().map(|&(k, v)| (k.to_string(), v.to_string())).collect(),
        }
    }
}

impl ExperimentConfig {
    /// Parses `key = value` lines on top of the defaults. Blank lines and
    /// lines starting with `#` are skipped; a repeated key is an error.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(line, "expected `key = value`"))?;
            let k = k.trim();
            if seen.contains(&k) {
                return Err(Error::parse(k, "key given twice"));
            }
            seen.push(k);
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    /// Overrides one key, validating the whole configuration.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim();
        if !self.raw.contains_key(key) {
            return Err(Error::parse(key, "unknown configuration key"));
        }
        let old = self.raw.insert(key.to_string(), value.trim().to_string());
        if let Err(e) = self.settings() {
            self.raw.insert(key.to_string(), old.expect("known key"));
            return Err(e);
        }
        Ok(())
    }

    /// Applies a `key=value` override as given on the command line.
    pub fn set_pair(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::parse(pair, "expected `key=value`"))?;
        self.set(k, v)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.raw.get(key).map(String::as_str)
    }

    pub fn echo(&self) -> &BTreeMap<String, String> {
        &self.raw
    }

    pub fn verb(&self) -> Verb {
        self.settings().expect("validated on every set").verb
    }

    fn settings(&self) -> Result<Settings> {
        Settings::from_raw(&self.raw)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum EngineChoice {
    Auto,
    Direct,
    Tree,
}

/// Typed view of a configuration.
#[derive(Debug, Clone)]
struct Settings {
    verb: Verb,
    domain: DomainSpec,
    h: f64,
    margin: Option<f64>,
    phis: Vec<YoungFunction>,
    seed: u64,
    workers: usize,
    out: Option<PathBuf>,
    engine: EngineChoice,
    direct_limit: usize,
    epsilon: Option<f64>,
    c_a: Option<f64>,
    sentinel_side: Option<f64>,
    cap: usize,
    points: usize,
    radii: usize,
    samples: usize,
    refine: bool,
    pairs: usize,
    functions: usize,
    naive_side: usize,
    checks: Vec<String>,
    poincare_ball: (f64, f64, f64),
    cutoffs: usize,
    worked: CutoffSpec,
    alpha: Option<f64>,
    alpha_scale: f64,
    probe: (f64, f64, f64),
    jmax: u32,
    balls: usize,
    chain_domain: DomainSpec,
    chain_h: f64,
    tip_k: (u32, u32),
    tip_scales: Vec<f64>,
    suite_verbs: Vec<Verb>,
}

fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| Error::parse(v, format!("`{key}` expects a number")))
}

fn positive(key: &str, v: &str) -> Result<f64> {
    let x: f64 = num(key, v)?;
    if x > 0.0 && x.is_finite() {
        Ok(x)
    } else {
        Err(Error::parse(v, format!("`{key}` must be positive")))
    }
}

fn auto_positive(key: &str, v: &str) -> Result<Option<f64>> {
    if v == "auto" {
        Ok(None)
    } else {
        positive(key, v).map(Some)
    }
}

fn list<T, F: Fn(&str) -> Result<T>>(v: &str, sep: char, f: F) -> Result<Vec<T>> {
    v.split(sep).map(|t| f(t.trim())).collect()
}

fn reals<const K: usize>(key: &str, v: &str) -> Result<[f64; K]> {
    let xs = list(v, ',', |t| num::<f64>(key, t))?;
    xs.try_into()
        .map_err(|_| Error::parse(v, format!("`{key}` expects {K} comma-separated numbers")))
}

impl Settings {
    fn from_raw(raw: &BTreeMap<String, String>) -> Result<Self> {
        let g = |k: &str| raw[k].as_str();
        let count = |k: &str| -> Result<usize> {
            let n: usize = num(k, g(k))?;
            if n == 0 {
                return Err(Error::parse(g(k), format!("`{k}` must be at least 1")));
            }
            Ok(n)
        };
        let phis = list(g("phi"), ';', |t| YoungFunction::parse(t, N))?;
        if phis.is_empty() {
            return Err(Error::parse(g("phi"), "no Young function given"));
        }
        let engine = match g("engine") {
            "auto" => EngineChoice::Auto,
            "direct" => EngineChoice::Direct,
            "tree" => EngineChoice::Tree,
            other => return Err(Error::parse(other, "engine is auto, direct or tree")),
        };
        let refine = match g("refine") {
            "true" => true,
            "false" => false,
            other => return Err(Error::parse(other, "refine is true or false")),
        };
        let checks: Vec<String> = if g("checks") == "all" {
            NORM_CHECKS.iter().map(|s| s.to_string()).collect()
        } else {
            list(g("checks"), ',', |t| {
                if NORM_CHECKS.contains(&t) {
                    Ok(t.to_string())
                } else {
                    Err(Error::parse(t, "unknown check group"))
                }
            })?
        };
        let [cx, cy, cr, ct] = reals::<4>("cutoff", g("cutoff"))?;
        let [px, py, pr] = reals::<3>("probe", g("probe"))?;
        let [bx, by, br] = reals::<3>("poincare_ball", g("poincare_ball"))?;
        if !(pr > 0.0) || !(br > 0.0) {
            return Err(Error::parse(g("probe"), "ball radii must be positive"));
        }
        let tip_k = {
            let v = g("tip_k");
            let (a, b) = v
                .split_once("..")
                .ok_or_else(|| Error::parse(v, "`tip_k` expects `lo..hi`"))?;
            let (a, b): (u32, u32) = (num("tip_k", a)?, num("tip_k", b)?);
            if a > b || b > 20 {
                return Err(Error::parse(v, "`tip_k` needs lo <= hi <= 20"));
            }
            (a, b)
        };
        let out = match g("out") {
            "" => None,
            p => Some(PathBuf::from(p)),
        };
        let workers = count("workers")?;
        Ok(Self {
            verb: g("verb").parse()?,
            domain: g("domain").parse()?,
            h: positive("h", g("h"))?,
            margin: auto_positive("margin", g("margin"))?,
            phis,
            seed: num("seed", g("seed"))?,
            workers,
            out,
            engine,
            direct_limit: num("direct_limit", g("direct_limit"))?,
            epsilon: auto_positive("epsilon", g("epsilon"))?,
            c_a: auto_positive("c_a", g("c_a"))?,
            sentinel_side: auto_positive("sentinel_side", g("sentinel_side"))?,
            cap: count("cap")?,
            points: count("points")?,
            radii: count("radii")?,
            samples: count("samples")?,
            refine,
            pairs: count("pairs")?,
            functions: count("functions")?,
            naive_side: count("naive_side")?,
            checks,
            poincare_ball: (bx, by, br),
            cutoffs: count("cutoffs")?,
            worked: CutoffSpec {
                x: cx,
                y: cy,
                r: cr,
                t: ct,
            },
            alpha: auto_positive("alpha", g("alpha"))?,
            alpha_scale: positive("alpha_scale", g("alpha_scale"))?,
            probe: (px, py, pr),
            jmax: count("jmax")? as u32,
            balls: count("balls")?,
            chain_domain: g("chain_domain").parse()?,
            chain_h: positive("chain_h", g("chain_h"))?,
            tip_k,
            tip_scales: list(g("tip_scales"), ',', |t| positive("tip_scales", t))?,
            suite_verbs: list(g("suite_verbs"), ',', |t| {
                let v: Verb = t.parse()?;
                if v == Verb::Suite {
                    return Err(Error::parse(t, "suite cannot contain itself"));
                }
                Ok(v)
            })?,
        })
    }

    fn plan(&self, anchors: Vec<(f64, f64)>) -> SamplingPlan {
        SamplingPlan {
            points: self.points,
            radii: self.radii,
            seed: self.seed,
            anchors,
        }
    }

    fn engine_for(&self, cells: usize) -> Engine {
        match self.engine {
            EngineChoice::Auto => Engine::auto(cells, self.direct_limit),
            EngineChoice::Direct => Engine::Direct,
            EngineChoice::Tree => Engine::DEFAULT_TREE,
        }
    }

    fn grid(&self, spec: DomainSpec, h: f64) -> Result<DomainGrid> {
        let margin = self
            .margin
            .unwrap_or(if spec.bounded() { 2.0 * spec.diam() } else { 0.0 });
        DomainGrid::rasterize(spec, h, margin, self.cap).map_err(|e| e.at("rasterize"))
    }

    /// Builds the extension context, measuring `C_A` with the configured
    /// sampling plan unless it is given. The plan gets no tip anchor: on a
    /// cusp the tip drives `C_A`, and with it `epsilon0`, to zero.
    fn context(&self, grid: DomainGrid) -> Result<ExtensionContext> {
        let c_a = match self.c_a {
            Some(c) => c,
            None => {
                ahlfors_constant(&grid, &self.plan(Vec::new()))
                    .map_err(|e| e.at("ahlfors"))?
                    .c_inf
            }
        };
        let opts = ExtensionOptions {
            epsilon: self.epsilon,
            c_a: Some(c_a),
            sentinel_side: self.sentinel_side,
        };
        ExtensionContext::new(grid, opts).map_err(|e| e.at("reflect"))
    }
}

fn tip_anchor(grid: &DomainGrid) -> Vec<(f64, f64)> {
    match grid.spec() {
        Some(DomainSpec::Cusp { .. }) => vec![(0.0, 0.0)],
        _ => Vec::new(),
    }
}

/// Grid facts echoed into a report.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct GridStats {
    pub domain: String,
    pub h: f64,
    pub nx: usize,
    pub ny: usize,
    pub omega_cells: usize,
    pub omega_area: f64,
}

impl GridStats {
    fn of(grid: &DomainGrid) -> Self {
        Self {
            domain: grid.spec().map_or_else(|| "file".to_string(), |s| s.to_string()),
            h: grid.h(),
            nx: grid.nx(),
            ny: grid.ny(),
            omega_cells: grid.omega_cells(),
            omega_area: grid.omega_area(),
        }
    }
}

/// Measured constants; `None` when the verb does not touch them.
#[derive(Debug, Clone, Default, Serialize, PartialEq)]
pub struct Constants {
    pub c_a: Option<f64>,
    pub gamma0: Option<usize>,
    pub gamma1: Option<f64>,
    pub gamma2: Option<usize>,
    pub epsilon0: Option<f64>,
    /// Per Young function; `None` where the defining integral diverges.
    pub c_phi: BTreeMap<String, Option<f64>>,
    /// Partition-of-unity gradient bound `sup |grad phi_Q| l(Q)`.
    pub l: Option<f64>,
    pub c_i: Option<f64>,
}

/// A plot-ready table.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
}

impl Table {
    fn new(columns: &[&str]) -> Self {
        Self {
            columns: columns.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    fn push(&mut self, row: Vec<Value>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{}", self.columns.join(","))?;
        for row in &self.rows {
            let cells: Vec<String> = row
                .iter()
                .map(|v| match v {
                    Value::Null => String::new(),
                    Value::String(s) if s.contains(',') || s.contains('"') => {
                        format!("\"{}\"", s.replace('"', "\"\""))
                    }
                    Value::String(s) => s.clone(),
                    other => other.to_string(),
                })
                .collect();
            writeln!(w, "{}", cells.join(","))?;
        }
        Ok(())
    }

    /// Column by name.
    pub fn column(&self, name: &str) -> Option<Vec<&Value>> {
        let c = self.columns.iter().position(|s| s == name)?;
        Some(self.rows.iter().map(|r| &r[c]).collect())
    }
}

/// One pass/fail verdict with the numbers behind it.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Everything a run measured.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct Report {
    pub verb: Verb,
    pub config: BTreeMap<String, String>,
    pub grid: Option<GridStats>,
    pub constants: Constants,
    pub tables: BTreeMap<String, Table>,
    pub checks: Vec<Check>,
    /// Sub-reports of a suite run.
    pub parts: Vec<Report>,
    /// Wall-clock seconds per stage; kept out of the JSON.
    #[serde(skip)]
    pub timings: Vec<(String, f64)>,
}

impl Report {
    fn new(verb: Verb, config: &ExperimentConfig) -> Self {
        Self {
            verb,
            config: config.raw.clone(),
            grid: None,
            constants: Constants::default(),
            tables: BTreeMap::new(),
            checks: Vec::new(),
            parts: Vec::new(),
            timings: Vec::new(),
        }
    }

    /// True when every check here and in the parts passed.
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed) && self.parts.iter().all(Report::passed)
    }

    /// Failed checks, including those of the parts.
    pub fn failures(&self) -> Vec<&Check> {
        let mut out: Vec<&Check> = self.checks.iter().filter(|c| !c.passed).collect();
        for p in &self.parts {
            out.extend(p.failures());
        }
        out
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    fn add_check(&mut self, name: impl Into<String>, passed: bool, detail: impl Into<String>) {
        self.checks.push(Check {
            name: name.into(),
            passed,
            detail: detail.into(),
        });
    }

    fn table(&mut self, name: &str, table: Table) {
        self.tables.insert(name.to_string(), table);
    }

    /// Writes `<verb>.json`, the CSV tables and the timings sidecar.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let io = |path: &Path, e: std::io::Error| Error::Io {
            path: path.display().to_string(),
            source: e,
        };
        fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
        let json = dir.join(format!("{}.json", self.verb));
        fs::write(&json, self.to_json()).map_err(|e| io(&json, e))?;
        self.write_tables(dir, self.verb.name()).map_err(|(p, e)| io(&p, e))?;
        let mut timings = BTreeMap::new();
        self.collect_timings("", &mut timings);
        let side = dir.join(format!("{}.timings.json", self.verb));
        let text = serde_json::to_string_pretty(&timings).expect("timings serialize");
        fs::write(&side, text + "\n").map_err(|e| io(&side, e))
    }

    fn write_tables(&self, dir: &Path, prefix: &str) -> std::result::Result<(), (PathBuf, std::io::Error)> {
        for (name, t) in &self.tables {
            let path = dir.join(format!("{prefix}_{name}.csv"));
            let mut buf = Vec::new();
            t.write_csv(&mut buf).map_err(|e| (path.clone(), e))?;
            fs::write(&path, buf).map_err(|e| (path.clone(), e))?;
        }
        for p in &self.parts {
            p.write_tables(dir, &format!("{prefix}_{}", p.verb))?;
        }
        Ok(())
    }

    fn collect_timings(&self, prefix: &str, out: &mut BTreeMap<String, f64>) {
        for (k, v) in &self.timings {
            out.insert(format!("{prefix}{}.{k}", self.verb), *v);
        }
        for p in &self.parts {
            p.collect_timings(&format!("{prefix}{}.", self.verb), out);
        }
    }
}

struct Timer {
    begin: Instant,
    start: Instant,
}

impl Timer {
    fn new() -> Self {
        let now = Instant::now();
        Self { begin: now, start: now }
    }

    fn total(&self, rep: &mut Report) {
        rep.timings.push(("total".to_string(), self.begin.elapsed().as_secs_f64()));
    }

    fn lap(&mut self, rep: &mut Report, stage: &str) {
        let now = Instant::now();
        rep.timings
            .push((stage.to_string(), now.duration_since(self.start).as_secs_f64()));
        self.start = now;
    }
}

fn f(x: f64) -> Value {
    if x.is_finite() {
        Value::from(x)
    } else if x.is_nan() {
        Value::String("nan".into())
    } else if x > 0.0 {
        Value::String("inf".into())
    } else {
        Value::String("-inf".into())
    }
}

fn opt(x: Option<f64>) -> Value {
    x.map_or(Value::Null, f)
}

fn s(x: impl fmt::Display) -> Value {
    Value::String(x.to_string())
}

/// Runs the configured verb on a pool of `workers` threads and, when `out`
/// is set, writes the report files.
pub fn run(config: &ExperimentConfig) -> Result<Report> {
    let st = config.settings()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(st.workers)
        .build()
        .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?;
    let report = pool.install(|| run_verb(st.verb, &st, config))?;
    if let Some(dir) = &st.out {
        report.write(dir)?;
    }
    Ok(report)
}

fn run_verb(verb: Verb, st: &Settings, config: &ExperimentConfig) -> Result<Report> {
    let mut rep = Report::new(verb, config);
    let mut t = Timer::new();
    match verb {
        Verb::Cphi => cphi(st, &mut rep, &mut t)?,
        Verb::Ahlfors => ahlfors(st, &mut rep, &mut t)?,
        Verb::Whitney => whitney(st, &mut rep, &mut t)?,
        Verb::Reflect => reflect(st, &mut rep, &mut t)?,
        Verb::Norm => norm(st, &mut rep, &mut t)?,
        Verb::Extend => extend(st, &mut rep, &mut t)?,
        Verb::Ratio => ratio(st, &mut rep, &mut t)?,
        Verb::Hsplit => hsplit(st, &mut rep, &mut t)?,
        Verb::Cutoff => cutoff_verb(st, &mut rep, &mut t)?,
        Verb::Probe => probe(st, &mut rep, &mut t)?,
        Verb::Suite => {
            for &v in &st.suite_verbs {
                let mut part = run_verb(v, st, config)?;
                // The echo lives on the suite report only.
                part.config.clear();
                rep.parts.push(part);
            }
            let failed = rep.failures().len();
            rep.add_check("suite", failed == 0, format!("{failed} failed checks in {} parts", rep.parts.len()));
        }
    }
    t.total(&mut rep);
    Ok(rep)
}

fn record_cphi(rep: &mut Report, phis: &[YoungFunction]) -> Result<()> {
    for phi in phis {
        let r = phi.compute_cphi(N).map_err(|e| e.at("cphi"))?;
        rep.constants.c_phi.insert(phi.to_string(), r.value);
    }
    Ok(())
}

fn record_context(rep: &mut Report, ctx: &ExtensionContext) {
    let st = ctx.stats();
    rep.constants.c_a = Some(st.c_a);
    rep.constants.gamma0 = Some(st.gamma0);
    rep.constants.gamma1 = Some(st.gamma1);
    rep.constants.gamma2 = Some(st.gamma2);
    rep.constants.epsilon0 = Some(st.epsilon);
    rep.constants.l = Some(ctx.partition().grad_bound());
    rep.grid = Some(GridStats::of(ctx.grid()));
}

/// Membership in the two published families: `(satisfies the C_phi
/// condition, expected sub-exponential verdict)`; `None` where a family is
/// not listed.
fn listed(phi: &YoungFunction) -> (Option<bool>, Option<bool>) {
    let n = N as f64;
    match phi.kind() {
        Kind::Power { .. } => (None, None),
        Kind::PowerLog { p, alpha } => {
            let example = (p == n && alpha > 1.0) || (p > n && alpha >= 1.0);
            (example.then_some(true), Some(true))
        }
        Kind::PowerExp { p, alpha, .. } => ((p > n).then_some(true), Some(alpha < 1.0)),
        Kind::ExpTaylor { alpha, .. } => (Some(true), Some(alpha < 1.0)),
    }
}

fn cphi(st: &Settings, rep: &mut Report, t: &mut Timer) -> Result<()> {
    let mut table = Table::new(&[
        "phi",
        "c_phi",
        "argmax",
        "increasing_at_end",
        "exponent_at_zero",
        "subexponential",
    ]);
    for phi in &st.phis {
        let r = phi.compute_cphi(N).map_err(|e| e.at("cphi"))?;
        let sub = phi.check_subexponential();
        rep.constants.c_phi.insert(phi.to_string(), r.value);
        table.push(vec![
            s(phi),
            opt(r.value),
            opt(r.argmax),
            Value::Bool(r.increasing_at_end),
            f(r.exponent_at_zero),
            Value::Bool(sub.holds),
        ]);
        if let Kind::Power { p } = phi.kind() {
            if p > N as f64 {
                let exact = 1.0 / (p - N as f64);
                let got = r.value.unwrap_or(f64::INFINITY);
                let rel = (got - exact).abs() / exact;
                rep.add_check(
                    format!("closed form {phi}"),
                    rel <= CPHI_RTOL,
                    format!("C_phi = {got}, 1/(p-n) = {exact}, rel {rel:.3e}"),
                );
            } else {
                rep.add_check(
                    format!("divergence {phi}"),
                    r.diverges(),
                    format!("value {:?}", r.value),
                );
            }
        }
        let (example, verdict) = listed(phi);
        if example == Some(true) {
            let detail = match (r.value, r.increasing_at_end) {
                (None, _) => "diverges at the origin".to_string(),
                (Some(v), false) => format!("C_phi = {v}"),
                (Some(v), true) => format!("C_phi >= {v}, still rising at the top of the ladder"),
            };
            rep.add_check(format!("finite {phi}"), !r.diverges(), detail);
        }
        if let Some(expect) = verdict {
            rep.add_check(
                format!("subexponential {phi}"),
                sub.holds == expect,
                format!("verdict {}, listed {expect}", sub.holds),
            );
        }
    }
    rep.table("cphi", table);
    t.lap(rep, "cphi");
    Ok(())
}

/// `|B(tip, r) cap Omega| / r^2` for the cusp on window grids fine enough
/// to resolve the cusp width `r^gamma` with sixteen cells.
fn tip_profile(st: &Settings, rep: &mut Report, gamma: f64) -> Result<()> {
    let spec = st.domain;
    let mut table = Table::new(&["k", "r", "h", "measure", "ratio", "model"]);
    let mut ratios = Vec::new();
    for k in st.tip_k.0..=st.tip_k.1 {
        let r = 0.5f64.powi(k as i32);
        let w = r.powf(gamma);
        let h = w / 16.0;
        let grid = DomainGrid::window(spec, h, (0.0, -w), (r, w), false, st.cap).map_err(|e| e.at("tip window"))?;
        let measure = grid.ball_measure(0.0, 0.0, r);
        let ratio = measure / (r * r);
        // Width 2 x^gamma integrated up to r, ignoring the ball's curvature.
        let model = 2.0 * r.powf(gamma - 1.0) / (gamma + 1.0);
        table.push(vec![Value::from(k), f(r), f(h), f(measure), f(ratio), f(model)]);
        ratios.push(ratio);
    }
    let monotone = ratios.windows(2).all(|w| w[1] < w[0]);
    rep.add_check(
        "tip ahlfors decreasing",
        monotone,
        format!("ratios {ratios:?} over k = {}..{}", st.tip_k.0, st.tip_k.1),
    );
    rep.table("tip_ahlfors", table);
    Ok(())
}

fn ahlfors(st: &Settings, rep: &mut Report, t: &mut Timer) -> Result<()> {
    let grid = st.grid(st.domain, st.h)?;
    rep.grid = Some(GridStats::of(&grid));
    t.lap(rep, "rasterize");
    let r = ahlfors_constant(&grid, &st.plan(tip_anchor(&grid))).map_err(|e| e.at("ahlfors"))?;
    rep.constants.c_a = Some(r.c_inf);
    let mut table = Table::new(&["x", "y", "r", "measure", "ratio"]);
    for row in &r.rows {
        table.push(vec![f(row.x), f(row.y), f(row.r), f(row.measure), f(row.ratio)]);
    }
    rep.table("ahlfors", table);
    rep.add_check(
        "ahlfors positive",
        r.c_inf > 0.0,
        format!("c_inf = {} at {:?}", r.c_inf, r.argmin),
    );
    t.lap(rep, "ahlfors");
    if let DomainSpec::Cusp { gamma, .. } = st.domain {
        tip_profile(st, rep, gamma)?;
        t.lap(rep, "tip");
    }
    Ok(())
}

fn whitney(st: &Settings, rep: &mut Report, t: &mut Timer) -> Result<()> {
    let grid = st.grid(st.domain, st.h)?;
    rep.grid = Some(GridStats::of(&grid));
    t.lap(rep, "rasterize");
    let cover = WhitneyCover::decompose(&grid).map_err(|e| e.at("whitney"))?;
    let stats = cover.check(&grid).map_err(|e| e.at("whitney"))?;
    t.lap(rep, "whitney");
    rep.constants.gamma0 = Some(stats.gamma0);
    rep.add_check(
        "cover invariants",
        true,
        format!(
            "{} cubes, max dist/side {:.4}, uncovered area {}",
            stats.cubes, stats.max_dist_ratio, stats.uncovered_area
        ),
    );
    rep.add_check(
        "overlap bound",
        stats.overlap_98 <= stats.overlap_bound,
        format!("overlap {} <= 4^n gamma0 = {}", stats.overlap_98, stats.overlap_bound),
    );
    let pou = PartitionOfUnity::new(&cover);
    let sum = pou.check_sum(st.samples, st.seed).map_err(|e| e.at("pou"))?;
    rep.add_check(
        "partition sums to one",
        sum.max_deviation <= POU_TOL,
        format!("max |sum - 1| = {:e} over {} samples", sum.max_deviation, sum.samples),
    );
    rep.constants.l = Some(pou.grad_bound());
    t.lap(rep, "pou");
    let mut sides: BTreeMap<u32, usize> = BTreeMap::new();
    for c in cover.cubes() {
        *sides.entry(c.level).or_default() += 1;
    }
    let mut table = Table::new(&["level", "side", "cubes"]);
    for (level, count) in sides {
        table.push(vec![Value::from(level), f(grid.h() * (1u64 << level) as f64), Value::from(count)]);
    }
    rep.table("levels", table);
    Ok(())
}

fn reflect(st: &Settings, rep: &mut Report, t: &mut Timer) -> Result<()> {
    let mut hs = vec![st.h];
    if st.refine {
        hs.push(st.h / 2.0);
    }
    let mut levels = Table::new(&[
        "h",
        "epsilon",
        "gamma1",
        "gamma2",
        "cubes",
        "reflected",
        "sentinels",
        "max_cells",
    ]);
    let mut shells = Table::new(&["h", "k", "overlap", "bound"]);
    let mut gamma2 = Vec::new();
    for (i, &h) in hs.iter().enumerate() {
        let ctx = st.context(st.grid(st.domain, h)?)?;
        let rs = ctx
            .reflection()
            .check(ctx.cover())
            .map_err(|e| e.at("reflect"))?;
        let cs = ctx.stats();
        if i == 0 {
            record_context(rep, &ctx);
        }
        levels.push(vec![
            f(h),
            f(rs.epsilon),
            f(rs.gamma1),
            Value::from(rs.gamma2),
            Value::from(cs.cubes),
            Value::from(rs.reflected),
            Value::from(rs.sentinels),
            Value::from(rs.max_cells),
        ]);
        rep.add_check(
            format!("containment and finite constants at h={h}"),
            rs.gamma1.is_finite() && rs.gamma2 > 0,
            format!("gamma1 = {}, gamma2 = {}", rs.gamma1, rs.gamma2),
        );
        let mut ok = true;
        for &(k, count, bound) in &cs.shell_overlap {
            ok &= count as f64 <= bound;
            shells.push(vec![f(h), Value::from(k), Value::from(count), f(bound)]);
        }
        rep.add_check(format!("shell bound k<=3 at h={h}"), ok, format!("{:?}", cs.shell_overlap));
        gamma2.push(rs.gamma2);
        t.lap(rep, &format!("reflect h={h}"));
    }
    if let [a, b] = gamma2[..] {
        rep.add_check("gamma2 stable", a.abs_diff(b) <= 1, format!("gamma2 {a} -> {b} under h -> h/2"));
    }
    rep.table("levels", levels);
    rep.table("shells", shells);
    Ok(())
}

fn sampled(grid: &DomainGrid) -> Vec<(String, GridFunction)> {
    battery().iter().map(|t| (t.name.to_string(), t.sample(grid))).collect()
}

fn norm(st: &Settings, rep: &mut Report, t: &mut Timer) -> Result<()> {
    let grid = st.grid(st.domain, st.h)?;
    rep.grid = Some(GridStats::of(&grid));
    let omega = Region::omega(&grid);
    let engine = st.engine_for(omega.len());
    let fns = sampled(&grid);
    let lux = |u: &GridFunction, phis: &[YoungFunction]| -> Result<Vec<f64>> {
        let p = EnergyProfile::build(&grid, u, &omega, engine).map_err(|e| e.at("norm"))?;
        phis.iter()
            .map(|phi| Ok(luxemburg(&p, phi)?.alpha))
            .collect()
    };
    t.lap(rep, "setup");
    let wants = |g: &str| st.checks.iter().any(|c| c == g);

    if wants("algebra") {
        let mut rng = ChaCha8Rng::seed_from_u64(st.seed);
        let mut table = Table::new(&["pair", "phi", "u", "v", "c", "norm_u", "norm_v", "norm_sum", "norm_cu"]);
        let (mut worst_h, mut worst_t) = (0.0f64, f64::NEG_INFINITY);
        for k in 0..st.pairs {
            let (i, j) = (rng.gen_range(0..fns.len()), rng.gen_range(0..fns.len()));
            let (a, b) = (rng.gen_range(0.5..2.0), rng.gen_range(-2.0..2.0));
            let c = rng.gen_range(0.2..3.0) * if rng.gen::<bool>() { 1.0 } else { -1.0 };
            let u = fns[i].1.scaled(a);
            let v = fns[j].1.scaled(b);
            let nu = lux(&u, &st.phis)?;
            let nv = lux(&v, &st.phis)?;
            let nsum = lux(&u.combine(1.0, &v, 1.0), &st.phis)?;
            let ncu = lux(&u.scaled(c), &st.phis)?;
            for (q, phi) in st.phis.iter().enumerate() {
                worst_h = worst_h.max((ncu[q] - c.abs() * nu[q]).abs() / (c.abs() * nu[q]));
                worst_t = worst_t.max(nsum[q] / (nu[q] + nv[q]) - 1.0);
                table.push(vec![
                    Value::from(k),
                    s(phi),
                    s(format!("{a:.4}*{}", fns[i].0)),
                    s(format!("{b:.4}*{}", fns[j].0)),
                    f(c),
                    f(nu[q]),
                    f(nv[q]),
                    f(nsum[q]),
                    f(ncu[q]),
                ]);
            }
        }
        rep.add_check(
            "homogeneity",
            worst_h <= NORM_RTOL,
            format!("max relative defect {worst_h:.3e} over {} pairs", st.pairs),
        );
        rep.add_check(
            "triangle inequality",
            worst_t <= NORM_RTOL,
            format!("max ||u+v|| / (||u|| + ||v||) - 1 = {worst_t:.3e}"),
        );
        rep.table("algebra", table);
        t.lap(rep, "algebra");
    }

    if wants("cross") {
        let mut powers: Vec<YoungFunction> = st
            .phis
            .iter()
            .filter(|p| matches!(p.kind(), Kind::Power { .. }))
            .cloned()
            .collect();
        if powers.is_empty() {
            powers.push(YoungFunction::parse("power:3", N)?);
        }
        let mut table = Table::new(&["phi", "function", "luxemburg", "sobolev", "rel"]);
        let mut worst = 0.0f64;
        for (name, u) in fns.iter().take(st.functions) {
            let l = lux(u, &powers)?;
            for (phi, &lv) in powers.iter().zip(&l) {
                let Kind::Power { p } = phi.kind() else { unreachable!() };
                let sv = frac_sobolev(&grid, u, N as f64 / p, p, &omega).map_err(|e| e.at("norm"))?;
                let rel = (lv - sv).abs() / sv;
                worst = worst.max(rel);
                table.push(vec![s(phi), s(name), f(lv), f(sv), f(rel)]);
            }
        }
        rep.add_check(
            "luxemburg equals fractional sobolev for powers",
            worst <= SOBOLEV_RTOL,
            format!("max relative gap {worst:.3e}"),
        );
        rep.table("cross", table);
        t.lap(rep, "cross");
    }

    if wants("naive") {
        let m = st.naive_side;
        let h = 1.0 / m as f64;
        let sq = DomainGrid::window(DomainSpec::Square { a: 1.0 }, h, (-0.5, -0.5), (0.5, 0.5), false, st.cap)
            .map_err(|e| e.at("rasterize"))?;
        let mut rng = ChaCha8Rng::seed_from_u64(st.seed ^ 0x5eed);
        let u = GridFunction::from_values(&sq, Support::Box, (0..sq.cells()).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
        let whole = Region::whole(&sq);
        let (nx, ny) = (sq.nx(), sq.ny());
        let mut w = vec![0.0; nx * ny];
        for dj in 0..ny {
            for di in 0..nx {
                w[dj * nx + di] = cell_pair_weight(sq.h(), di, dj);
            }
        }
        let mut table = Table::new(&["phi", "alpha", "pair_energy", "naive", "rel"]);
        let mut worst = 0.0f64;
        for phi in &st.phis {
            for alpha in [0.5, 1.0, 2.0] {
                let fast = pair_energy(&sq, &u, phi, alpha, &whole)?.value;
                let mut naive = KahanSum::new();
                for a in 0..sq.cells() {
                    for b in 0..sq.cells() {
                        if a == b {
                            continue;
                        }
                        let (di, dj) = ((a % nx).abs_diff(b % nx), (a / nx).abs_diff(b / nx));
                        naive.add(phi.eval((u.value(a) - u.value(b)).abs() / alpha) * w[dj * nx + di]);
                    }
                }
                let naive = naive.value();
                let rel = (fast - naive).abs() / naive;
                worst = worst.max(rel);
                table.push(vec![s(phi), f(alpha), f(fast), f(naive), f(rel)]);
            }
        }
        rep.add_check(
            "pair energy matches the double loop",
            worst <= NAIVE_RTOL,
            format!("max relative gap {worst:.3e} on a {m}x{m} grid"),
        );
        rep.table("naive", table);
        t.lap(rep, "naive");
    }

    if wants("poincare") {
        let ball = st.poincare_ball;
        let cells = Region::omega_ball(&grid, ball.0, ball.1, ball.2).len();
        let engine = st.engine_for(cells);
        let mut table = Table::new(&["phi", "function", "mean_oscillation", "seminorm", "bound", "ratio"]);
        let mut worst = 0.0f64;
        for tf in smooth_family() {
            let u = tf.sample(&grid);
            for phi in &st.phis {
                let r = poincare_check(&grid, &u, ball, phi, engine).map_err(|e| e.at("poincare"))?;
                worst = worst.max(r.ratio.unwrap_or(0.0));
                table.push(vec![s(phi), s(tf.name), f(r.mean_oscillation), f(r.seminorm), f(r.bound), opt(r.ratio)]);
            }
        }
        rep.add_check(
            "poincare ratio at most one",
            worst <= 1.0,
            format!("max ratio {worst:.4} over {} functions", smooth_family().len()),
        );
        rep.table("poincare", table);
        t.lap(rep, "poincare");
    }
    Ok(())
}

fn extend(st: &Settings, rep: &mut Report, t: &mut Timer) -> Result<()> {
    let ctx = st.context(st.grid(st.domain, st.h)?)?;
    record_context(rep, &ctx);
    t.lap(rep, "context");
    let grid = ctx.grid();
    let ind = grid.indicator();
    let fns = sampled(grid);
    let mut table = Table::new(&["function", "domain_mean", "max_abs_u", "max_abs_eu", "edge_gap"]);
    let (mut identity, mut edge) = (0.0f64, 0.0f64);
    let mut extended = Vec::new();
    for (name, u) in &fns {
        let eu = ctx.extend(u).map_err(|e| e.at("extend"))?;
        let mean = ctx.domain_mean(u);
        let gap = ctx.edge_gap(&eu, mean);
        edge = edge.max(gap);
        let mut max_u = 0.0f64;
        for k in 0..grid.cells() {
            if ind[k] {
                identity = identity.max((eu.value(k) - u.value(k)).abs());
                max_u = max_u.max(u.value(k).abs());
            }
        }
        let max_eu = eu.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        table.push(vec![s(name), f(mean), f(max_u), f(max_eu), f(gap)]);
        extended.push(eu);
    }
    rep.add_check("identity on the domain", identity == 0.0, format!("max |Eu - u| = {identity:e}"));
    let one = GridFunction::from_fn(grid, Support::Omega, |_, _| 1.0);
    let e1 = ctx.extend(&one).map_err(|e| e.at("extend"))?;
    let dev = e1.values().iter().fold(0.0f64, |m, v| m.max((v - 1.0).abs()));
    rep.add_check("constants preserved", dev <= 1e-12, format!("max |E1 - 1| = {dev:e}"));
    let mut lin = 0.0f64;
    for k in 1..fns.len() {
        let combo = fns[0].1.combine(2.0, &fns[k].1, -3.0);
        let ec = ctx.extend(&combo).map_err(|e| e.at("extend"))?;
        let want = extended[0].combine(2.0, &extended[k], -3.0);
        for (a, b) in ec.values().iter().zip(want.values()) {
            lin = lin.max((a - b).abs());
        }
    }
    rep.add_check("linearity", lin <= 1e-12, format!("max |E(2u - 3v) - (2Eu - 3Ev)| = {lin:e}"));
    if st.sentinel_side.is_none() {
        rep.add_check(
            "far field equals the domain mean",
            edge <= 1e-9,
            format!("max edge gap {edge:e}"),
        );
    }
    rep.table("extend", table);
    t.lap(rep, "extend");
    Ok(())
}

/// Ratio rows and split identities at one resolution.
struct Level {
    h: f64,
    /// Per function, per phi: the ratio, or the reason it is undefined.
    ratios: Vec<Vec<std::result::Result<f64, String>>>,
    extended: Vec<Vec<f64>>,
}

fn split_row(table: &mut Table, h: f64, name: &str, phi: &YoungFunction, sp: &HSplit) {
    table.push(vec![
        f(h),
        s(name),
        s(phi),
        f(sp.alpha),
        f(sp.h1),
        f(sp.h2),
        f(sp.h3),
        f(sp.sum),
        f(sp.all_pairs),
        opt(sp.direct),
        f(sp.residual),
    ]);
}

const SPLIT_COLUMNS: [&str; 11] = [
    "h", "function", "phi", "alpha", "h1", "h2", "h3", "sum", "all_pairs", "direct", "residual",
];

fn ratio(st: &Settings, rep: &mut Report, t: &mut Timer) -> Result<()> {
    record_cphi(rep, &st.phis)?;
    let mut hs = vec![st.h];
    if st.refine {
        hs.push(st.h / 2.0);
    }
    let mut rows = Table::new(&["h", "function", "phi", "extended", "domain", "ratio", "tail_energy"]);
    let mut splits = Table::new(&SPLIT_COLUMNS);
    let mut levels: Vec<Level> = Vec::new();
    let mut worst_residual = 0.0f64;
    for (li, &h) in hs.iter().enumerate() {
        let ctx = st.context(st.grid(st.domain, h)?)?;
        if li == 0 {
            record_context(rep, &ctx);
        }
        t.lap(rep, &format!("context h={h}"));
        let grid = ctx.grid();
        let engine = st.engine_for(grid.cells());
        let mut level = Level {
            h,
            ratios: Vec::new(),
            extended: Vec::new(),
        };
        for (fi, (name, u)) in sampled(grid).iter().enumerate() {
            // The split needs an alpha; above the first level it reuses the
            // coarser norm, so one pass yields both.
            let (eu, profile, split) = match levels.first() {
                Some(prev) => {
                    let targets: Vec<(&YoungFunction, f64)> = st
                        .phis
                        .iter()
                        .zip(&prev.extended[fi])
                        .map(|(p, &e)| (p, split_alpha(st, e)))
                        .collect();
                    let (eu, pr, sp) = ctx.profile_split(u, engine, &targets).map_err(|e| e.at("ratio"))?;
                    (eu, pr, Some(sp))
                }
                None => {
                    let (eu, pr) = ctx.profile(u, engine).map_err(|e| e.at("ratio"))?;
                    (eu, pr, None)
                }
            };
            let mut rr = Vec::new();
            let mut ext = Vec::new();
            for phi in &st.phis {
                match ratio_from_profile(&profile, phi) {
                    Ok(r) => {
                        rows.push(vec![f(h), s(name), s(phi), f(r.extended), f(r.domain), f(r.ratio), f(r.tail_energy)]);
                        rr.push(Ok(r.ratio));
                        ext.push(r.extended);
                    }
                    Err(Error::UndefinedRatio(why)) => {
                        rows.push(vec![f(h), s(name), s(phi), Value::Null, Value::Null, Value::Null, Value::Null]);
                        rr.push(Err(why));
                        ext.push(1.0);
                    }
                    Err(e) => return Err(e.at("ratio")),
                }
            }
            let split = match split {
                Some(sp) => sp,
                None => {
                    let targets: Vec<(&YoungFunction, f64)> =
                        st.phis.iter().zip(&ext).map(|(p, &e)| (p, split_alpha(st, e))).collect();
                    h_splits_of(grid, &eu, &targets, engine).map_err(|e| e.at("hsplit"))?
                }
            };
            for (phi, sp) in st.phis.iter().zip(&split) {
                worst_residual = worst_residual.max(sp.residual);
                split_row(&mut splits, h, name, phi, sp);
            }
            level.ratios.push(rr);
            level.extended.push(ext);
        }
        t.lap(rep, &format!("ratio h={h}"));
        levels.push(level);
    }
    let names = sampled_names();
    let mut maxima = Table::new(&["phi", "h", "max_ratio", "argmax", "undefined"]);
    for (q, phi) in st.phis.iter().enumerate() {
        let mut per_level = Vec::new();
        for level in &levels {
            let mut best: Option<(f64, usize)> = None;
            let mut undefined = 0;
            for (fi, rr) in level.ratios.iter().enumerate() {
                match &rr[q] {
                    Ok(r) if best.is_none_or(|b| *r > b.0) => best = Some((*r, fi)),
                    Ok(_) => {}
                    Err(_) => undefined += 1,
                }
            }
            maxima.push(vec![
                s(phi),
                f(level.h),
                opt(best.map(|b| b.0)),
                best.map_or(Value::Null, |b| s(names[b.1])),
                Value::from(undefined),
            ]);
            let m = best.map_or(f64::INFINITY, |b| b.0);
            rep.add_check(
                format!("max ratio finite {phi} h={}", level.h),
                m.is_finite() && undefined == 0,
                format!("max ratio {m} ({undefined} undefined)"),
            );
            per_level.push(m);
        }
        if let [a, b] = per_level[..] {
            let drift = (b - a).abs() / a;
            rep.add_check(
                format!("max ratio stable {phi}"),
                drift <= RATIO_DRIFT,
                format!("{a} -> {b}, change {:.1}%", 100.0 * drift),
            );
        }
    }
    rep.add_check(
        "split identity",
        worst_residual <= crate::extension::SPLIT_RTOL,
        format!("max relative residual {worst_residual:e}"),
    );
    rep.table("ratio", rows);
    rep.table("max_ratio", maxima);
    rep.table("hsplit", splits);
    Ok(())
}

fn sampled_names() -> Vec<&'static str> {
    battery().iter().map(|t| t.name).collect()
}

fn split_alpha(st: &Settings, extended: f64) -> f64 {
    st.alpha.unwrap_or(st.alpha_scale * extended)
}

fn hsplit(st: &Settings, rep: &mut Report, t: &mut Timer) -> Result<()> {
    let ctx = st.context(st.grid(st.domain, st.h)?)?;
    record_context(rep, &ctx);
    t.lap(rep, "context");
    let grid = ctx.grid();
    let engine = st.engine_for(grid.cells());
    let mut table = Table::new(&SPLIT_COLUMNS);
    let mut worst = 0.0f64;
    let mut above = true;
    for (name, u) in sampled(grid).iter().take(st.functions) {
        let (eu, profile) = ctx.profile(u, engine).map_err(|e| e.at("hsplit"))?;
        for phi in &st.phis {
            let ext = match ratio_from_profile(&profile, phi) {
                Ok(r) => r.extended,
                Err(Error::UndefinedRatio(_)) => luxemburg(&profile, phi)?.alpha.max(f64::MIN_POSITIVE),
                Err(e) => return Err(e.at("hsplit")),
            };
            let alpha = split_alpha(st, ext);
            let sp = h_split_of(grid, &eu, phi, alpha, engine).map_err(|e| e.at("hsplit"))?;
            worst = worst.max(sp.residual);
            // Above the norm the box part of the modular cannot exceed one.
            if alpha >= ext {
                above &= sp.sum <= 1.0 + crate::extension::SPLIT_RTOL || sp.saturated;
            }
            split_row(&mut table, grid.h(), name, phi, &sp);
        }
    }
    rep.add_check(
        "split identity",
        worst <= crate::extension::SPLIT_RTOL,
        format!("max relative residual {worst:e}"),
    );
    rep.add_check("modular below one above the norm", above, "H1 + 2 H2 + H3 <= 1 whenever alpha >= ||Eu||");
    rep.table("hsplit", table);
    t.lap(rep, "hsplit");
    Ok(())
}

/// Closed form of the cutoff bound for `t^p` when `B(x, t)` lies inside a
/// disk: `C_phi = 1 / (p - n)` and `|B cap Omega| = pi t^2`.
fn worked_closed_form(phi: &YoungFunction, spec: &CutoffSpec, domain: DomainSpec) -> Option<f64> {
    let (Kind::Power { p }, DomainSpec::Disk { r }) = (phi.kind(), domain) else {
        return None;
    };
    if p <= N as f64 || spec.x.hypot(spec.y) + spec.t > r {
        return None;
    }
    let pi = std::f64::consts::PI;
    let constant = 8.0 * 2.0 * pi * (16.0 / (p - 2.0) + 1.0);
    Some(constant * (pi * spec.t * spec.t / (spec.t - spec.r).powi(2)).powf(1.0 / p))
}

fn cutoff_verb(st: &Settings, rep: &mut Report, t: &mut Timer) -> Result<()> {
    record_cphi(rep, &st.phis)?;
    let grid = st.grid(st.domain, st.h)?;
    rep.grid = Some(GridStats::of(&grid));
    let omega = Region::omega(&grid);
    let engine = st.engine_for(omega.len());
    let diam = grid.diam();
    let mut specs = vec![st.worked];
    let mut rng = ChaCha8Rng::seed_from_u64(st.seed);
    let inside: Vec<usize> = (0..grid.cells()).filter(|&k| grid.indicator()[k]).collect();
    if inside.is_empty() {
        return Err(Error::EmptyDomain.at("cutoff"));
    }
    for _ in 0..st.cutoffs {
        let (x, y) = grid.center_of(inside[rng.gen_range(0..inside.len())]);
        let r = diam * rng.gen_range(0.02..0.25);
        let tt = (r * rng.gen_range(1.2..3.0)).min(0.9 * diam);
        specs.push(CutoffSpec { x, y, r, t: tt });
    }
    t.lap(rep, "setup");
    let mut table = Table::new(&["sample", "x", "y", "r", "t", "phi", "seminorm", "bound", "c_phi", "measure"]);
    let mut ok = true;
    let mut worst = 0.0f64;
    for (k, spec) in specs.iter().enumerate() {
        let u = cutoff(spec, &grid).map_err(|e| e.at("cutoff"))?;
        let profile = EnergyProfile::build(&grid, &u, &omega, engine).map_err(|e| e.at("cutoff"))?;
        for phi in &st.phis {
            let b = match cutoff_bound(spec, &grid, phi) {
                Ok(b) => b,
                Err(Error::Refused(_)) => continue,
                Err(e) => return Err(e.at("cutoff")),
            };
            let m = luxemburg(&profile, phi)?.alpha;
            ok &= m <= b.bound;
            worst = worst.max(m / b.bound);
            table.push(vec![
                Value::from(k),
                f(spec.x),
                f(spec.y),
                f(spec.r),
                f(spec.t),
                s(phi),
                f(m),
                f(b.bound),
                f(b.c_phi),
                f(b.measure),
            ]);
            if k == 0 {
                if let Some(exact) = worked_closed_form(phi, spec, st.domain) {
                    let rel = (b.bound - exact).abs() / exact;
                    rep.add_check(
                        format!("worked bound {phi}"),
                        rel <= WORKED_RTOL,
                        format!("measured {} vs closed form {exact}, rel {rel:.3e}", b.bound),
                    );
                }
            }
        }
    }
    rep.add_check(
        "cutoff seminorm below bound",
        ok,
        format!("max seminorm / bound = {worst:.3e} over {} cutoffs", specs.len()),
    );
    rep.table("cutoff", table);
    t.lap(rep, "cutoff");
    Ok(())
}

fn probe(st: &Settings, rep: &mut Report, t: &mut Timer) -> Result<()> {
    let phi = &st.phis[0];
    if let DomainSpec::Cusp { gamma, .. } = st.domain {
        tip_profile(st, rep, gamma)?;
        t.lap(rep, "tip ahlfors");
        let ctx = st.context(st.grid(st.domain, st.h)?)?;
        record_context(rep, &ctx);
        let grid = ctx.grid();
        let engine = st.engine_for(grid.cells());
        let mut table = Table::new(&["scale", "x", "r", "t", "extended", "domain", "ratio"]);
        let mut ratios = Vec::new();
        for &sc in &st.tip_scales {
            let spec = CutoffSpec {
                x: sc / 2.0,
                y: 0.0,
                r: sc / 2.0,
                t: sc,
            };
            let u = cutoff(&spec, grid).map_err(|e| e.at("probe"))?;
            let (_, profile) = ctx.profile(&u, engine).map_err(|e| e.at("probe"))?;
            match ratio_from_profile(&profile, phi) {
                Ok(r) => {
                    table.push(vec![f(sc), f(spec.x), f(spec.r), f(spec.t), f(r.extended), f(r.domain), f(r.ratio)]);
                    ratios.push(Some(r.ratio));
                }
                Err(Error::UndefinedRatio(_)) => {
                    table.push(vec![f(sc), f(spec.x), f(spec.r), f(spec.t), Value::Null, Value::Null, Value::Null]);
                    ratios.push(None);
                }
                Err(e) => return Err(e.at("probe")),
            }
        }
        let increasing = ratios
            .windows(2)
            .all(|w| matches!((w[0], w[1]), (Some(a), Some(b)) if b > a));
        rep.add_check(
            "tip cutoff ratio increasing",
            increasing,
            format!("ratios {ratios:?} over scales {:?}", st.tip_scales),
        );
        rep.table("tip_ratio", table);
        t.lap(rep, "tip ratio");
    }

    let grid = st.grid(st.chain_domain, st.chain_h)?;
    let omega = Region::omega(&grid);
    let engine = st.engine_for(omega.len());
    let subexp = st
        .phis
        .iter()
        .find(|p| p.check_subexponential().holds)
        .ok_or_else(|| Error::Refused("no configured Young function is sub-exponential".into()).at("probe"))?;
    let cal = calibrate_imbedding(&grid, subexp, &sampled(&grid), st.balls, st.seed, engine)
        .map_err(|e| e.at("calibrate"))?;
    rep.constants.c_i = Some(cal.c_i);
    let mut ctable = Table::new(&["function", "c"]);
    for (name, c) in &cal.per_function {
        ctable.push(vec![s(name), f(*c)]);
    }
    rep.table("calibration", ctable);
    t.lap(rep, "calibrate");
    let (x, y, r) = st.probe;
    let pr = necessity_probe(&grid, subexp, cal.c_i, x, y, r, st.jmax).map_err(|e| e.at("probe"))?;
    let mut table = Table::new(&["j", "b", "gap", "ln_lhs", "ln_rhs", "holds", "partial_sum"]);
    for row in &pr.rows {
        table.push(vec![
            Value::from(row.j),
            f(row.b),
            f(row.gap),
            f(row.ln_lhs),
            f(row.ln_rhs),
            Value::Bool(row.holds),
            f(row.partial_sum),
        ]);
    }
    rep.table("chain", table);
    if let DomainSpec::Disk { r: big } = st.chain_domain {
        if x == 0.0 && y == 0.0 && r == big {
            let b1 = pr.b.get(1).copied().unwrap_or(f64::NAN);
            let want = std::f64::consts::FRAC_1_SQRT_2;
            rep.add_check(
                "first halving radius",
                (b1 - want).abs() <= B1_TOL,
                format!("b1 = {b1}, 1/sqrt 2 = {want}"),
            );
        }
    }
    rep.add_check(
        "chain inequality termwise",
        pr.chain_holds,
        format!(
            "{} links, C = {}, C_I = {}, ln implied density {}",
            pr.rows.len(),
            pr.c_chain,
            pr.c_i,
            pr.ln_implied_density
        ),
    );
    t.lap(rep, "chain");
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_echoes() {
        let cfg = ExperimentConfig::parse("# demo\nverb = cphi\nphi = power:3; power:4\n\nh=0.05\n").unwrap();
        assert_eq!(cfg.verb(), Verb::Cphi);
        assert_eq!(cfg.get("phi"), Some("power:3; power:4"));
        assert_eq!(cfg.get("seed"), Some("0"));
    }

    #[test]
    fn bad_phi_names_the_token() {
        let err = ExperimentConfig::parse("phi = power:3;wibble:2").unwrap_err();
        match err {
            Error::Parse { token, .. } => assert_eq!(token, "wibble"),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn rejects_unknown_and_repeated_keys() {
        assert!(matches!(ExperimentConfig::parse("colour = red"), Err(Error::Parse { .. })));
        assert!(matches!(ExperimentConfig::parse("h = 0.1\nh = 0.2"), Err(Error::Parse { .. })));
        assert!(matches!(ExperimentConfig::parse("just words"), Err(Error::Parse { .. })));
    }

    #[test]
    fn failed_override_keeps_old_value() {
        let mut cfg = ExperimentConfig::default();
        assert!(cfg.set_pair("h=-1").is_err());
        assert_eq!(cfg.get("h"), Some("0.02"));
        cfg.set_pair("h=0.1").unwrap();
        assert_eq!(cfg.get("h"), Some("0.1"));
    }

    #[test]
    fn closed_form_worked_bound() {
        let phi = YoungFunction::parse("power:3", 2).unwrap();
        let spec = CutoffSpec {
            x: 0.0,
            y: 0.0,
            r: 0.25,
            t: 0.5,
        };
        let v = worked_closed_form(&phi, &spec, DomainSpec::Disk { r: 1.0 }).unwrap();
        assert!((v - 1986.653).abs() < 1e-3, "{v}");
    }

    #[test]
    fn cphi_verb_passes_on_powers() {
        let mut cfg = ExperimentConfig::default();
        cfg.set("verb", "cphi").unwrap();
        cfg.set("phi", "power:2;power:3;exptaylor:1,1").unwrap();
        let rep = run(&cfg).unwrap();
        assert!(rep.passed(), "{:?}", rep.failures());
        assert_eq!(rep.constants.c_phi["power:2"], None);
    }
}
