//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Each criterion is a single verb run through [`orlext::probes::run`]; a
//! criterion passes when every check of its report passes within the
//! runtime budget. Select criteria with their numbers as arguments, e.g.
//! `cargo test --test acceptance -- 1 2 7`.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use orlext::probes::{run, ExperimentConfig, Report};

fn config(pairs: &[(&str, &str)]) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    for (k, v) in pairs {
        cfg.set(k, v).unwrap_or_else(|e| panic!("{k} = {v}: {e}"));
    }
    cfg
}

struct Outcome {
    passed: bool,
    detail: String,
}

fn verdict(reports: &[Report]) -> Outcome {
    let failures: Vec<String> = reports
        .iter()
        .flat_map(|r| r.failures())
        .map(|c| format!("{} ({})", c.name, c.detail))
        .collect();
    let checks: usize = reports.iter().map(|r| r.checks.len()).sum();
    if failures.is_empty() {
        Outcome {
            passed: true,
            detail: format!("{checks} checks"),
        }
    } else {
        Outcome {
            passed: false,
            detail: failures.join("; "),
        }
    }
}

fn run_all(cfgs: &[ExperimentConfig]) -> Outcome {
    let mut reports = Vec::new();
    for cfg in cfgs {
        match run(cfg) {
            Ok(r) => reports.push(r),
            Err(e) => {
                return Outcome {
                    passed: false,
                    detail: format!("{} run failed: {e}", cfg.verb()),
                }
            }
        }
    }
    verdict(&reports)
}

fn c1() -> Outcome {
    run_all(&[config(&[
        ("verb", "cphi"),
        ("phi", "power:2;power:2.5;power:3;power:4;power:6"),
    ])])
}

fn c2() -> Outcome {
    run_all(&[config(&[
        ("verb", "cphi"),
        (
            "phi",
            "powerlog:2,2;powerlog:3,1;powerexp:3,1,0.5;powerexp:3,1,1;exptaylor:1,0.5;exptaylor:1,1;powerlog:2,1.5",
        ),
    ])])
}

fn c3() -> Outcome {
    let cfgs: Vec<_> = ["disk:1", "square:2", "cusp:3,1", "halfplane"]
        .iter()
        .map(|d| config(&[("verb", "whitney"), ("domain", d), ("h", "0.01"), ("samples", "10000")]))
        .collect();
    run_all(&cfgs)
}

fn c4() -> Outcome {
    // The default epsilon0 is sub-cell at this h; see the reflect verb docs.
    run_all(&[config(&[
        ("verb", "reflect"),
        ("domain", "disk:1"),
        ("h", "0.005"),
        ("refine", "true"),
        ("epsilon", "0.1"),
    ])])
}

fn c5() -> Outcome {
    run_all(&[config(&[
        ("verb", "norm"),
        ("domain", "disk:1"),
        ("h", "0.02"),
        ("phi", "power:3;powerlog:2,2"),
        ("checks", "algebra,cross,naive"),
        ("pairs", "50"),
        ("functions", "10"),
        ("naive_side", "40"),
    ])])
}

fn c6() -> Outcome {
    run_all(&[config(&[
        ("verb", "norm"),
        ("domain", "disk:1"),
        ("h", "0.02"),
        ("phi", "power:3;powerlog:2,2"),
        ("checks", "poincare"),
        ("poincare_ball", "0,0,1"),
    ])])
}

fn c7() -> Outcome {
    run_all(&[config(&[
        ("verb", "cutoff"),
        ("domain", "disk:1"),
        ("h", "0.02"),
        ("phi", "power:3;powerlog:2,2"),
        ("cutoffs", "10"),
        ("cutoff", "0,0,0.25,0.5"),
    ])])
}

fn c8() -> Outcome {
    run_all(&[config(&[
        ("verb", "ratio"),
        ("domain", "disk:1"),
        ("h", "0.02"),
        ("refine", "true"),
        ("phi", "power:3;powerlog:2,2"),
    ])])
}

fn c9() -> Outcome {
    run_all(&[config(&[
        ("verb", "probe"),
        ("domain", "cusp:3,1"),
        ("h", "0.01"),
        ("phi", "power:3"),
        ("tip_k", "3..7"),
        ("tip_scales", "0.8,0.4,0.2,0.1"),
        ("chain_domain", "disk:1"),
        ("chain_h", "0.02"),
        ("probe", "0,0,1"),
    ])])
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .expect("report directory")
        .map(|e| e.expect("entry").path())
        .filter(|p| !p.to_string_lossy().ends_with(".timings.json"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

fn c10() -> Outcome {
    let dir: PathBuf = std::env::temp_dir().join(format!("orlext-acceptance-{}", std::process::id()));
    let cfg = config(&[
        ("verb", "suite"),
        ("domain", "disk:1"),
        ("h", "0.05"),
        ("phi", "power:3;powerlog:2,2"),
        ("workers", "2"),
        ("out", dir.to_str().expect("utf-8 temp dir")),
    ]);
    let mut runs = Vec::new();
    for _ in 0..2 {
        let _ = fs::remove_dir_all(&dir);
        if let Err(e) = run(&cfg) {
            return Outcome {
                passed: false,
                detail: format!("suite failed: {e}"),
            };
        }
        runs.push(snapshot(&dir));
    }
    let _ = fs::remove_dir_all(&dir);
    let bytes: usize = runs[0].iter().map(|f| f.1.len()).sum();
    let differing: Vec<&str> = runs[0]
        .iter()
        .zip(&runs[1])
        .filter(|(a, b)| a != b)
        .map(|(a, _)| a.0.as_str())
        .collect();
    Outcome {
        passed: runs[0].len() == runs[1].len() && differing.is_empty(),
        detail: format!(
            "{} files, {bytes} bytes compared; differing: {differing:?}",
            runs[0].len()
        ),
    }
}

type Criterion = (u32, &'static str, Option<Duration>, fn() -> Outcome);

const CRITERIA: [Criterion; 10] = [
    (1, "cphi closed form and divergence", Some(Duration::from_secs(5)), c1),
    (2, "cphi classification", None, c2),
    (3, "whitney invariants and partition of unity", Some(Duration::from_secs(4 * 60)), c3),
    (4, "reflect invariants and gamma2 stability", Some(Duration::from_secs(2 * 60)), c4),
    (5, "norm algebra, sobolev cross-check, naive oracle", Some(Duration::from_secs(3 * 60)), c5),
    (6, "poincare ratio", Some(Duration::from_secs(2 * 60)), c6),
    (7, "cutoff bound", Some(Duration::from_secs(3 * 60)), c7),
    (8, "operator ratio and split identity", Some(Duration::from_secs(15 * 60)), c8),
    (9, "cusp necessity probes", Some(Duration::from_secs(15 * 60)), c9),
    (10, "suite determinism", None, c10),
];

fn main() -> ExitCode {
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (id, name, budget, f) in CRITERIA {
        if !wanted.is_empty() && !wanted.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let mut out = f();
        let took = start.elapsed();
        if let Some(b) = budget {
            if took > b {
                out.passed = false;
                out.detail.push_str(&format!("; over budget {:.0} s", b.as_secs_f64()));
            }
        }
        println!(
            "{} criterion {id} ({name}) [{:.1} s]: {}",
            if out.passed { "PASS" } else { "FAIL" },
            took.as_secs_f64(),
            out.detail
        );
        failed += usize::from(!out.passed);
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
