//! Acceptance suite: runs the full default `verify` twice (parallel, then
//! sequential), checks the two report sets are byte-identical and reads
//! every criterion off the reports. Prints one line per criterion.

use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use coalflow::motion::{scale_function, DiffusionSpec};
use coalflow::runner::{cmd_verify, ExecutionConfig, RunConfig, VerifyOutcome};
use coalflow::verify::{Status, TestReport};

struct Line {
    id: u32,
    what: &'static str,
    pass: bool,
    detail: String,
}

fn reports<'a>(o: &'a VerifyOutcome, bundle: &str) -> Vec<&'a TestReport> {
    o.bundles
        .iter()
        .filter(|b| b.name == bundle)
        .flat_map(|b| b.reports.iter())
        .collect()
}

fn find<'a>(o: &'a VerifyOutcome, bundle: &str, prefix: &str) -> &'a TestReport {
    reports(o, bundle)
        .into_iter()
        .find(|r| r.name.starts_with(prefix))
        .unwrap_or_else(|| panic!("no report {prefix:?} in {bundle}"))
}

fn ok(r: &TestReport) -> bool {
    r.status == Status::Pass && !r.negative_control
}

fn files_under(dir: &Path, out: &mut Vec<std::path::PathBuf>) {
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            files_under(&p, out)
        } else {
            out.push(p)
        }
    }
}

fn criteria(o: &VerifyOutcome, dir_a: &Path, dir_b: &Path, timings: &[(String, f64)]) -> Vec<Line> {
    let mut lines = Vec::new();

    let cocycle: Vec<_> = reports(o, "axioms").into_iter().filter(|r| r.name.contains("perfect cocycle")).collect();
    let violations: f64 = cocycle.iter().map(|r| r.statistic).sum();
    lines.push(Line {
        id: 1,
        what: "perfect cocycle, analytic flow and 5 Arratia skeletons",
        pass: cocycle.len() == 12 && cocycle.iter().all(|r| ok(r)) && violations == 0.0,
        detail: format!("{} checks, {} samples each, {violations} violations", cocycle.len(), cocycle[0].replicas),
    });

    let axioms = reports(o, "axioms");
    let exact: Vec<_> = axioms
        .iter()
        .filter(|r| r.name.contains("F1 composition") || r.name.contains("F5 monotonicity"))
        .collect();
    let density: Vec<_> = axioms.iter().filter(|r| r.name.contains("F2 range density")).collect();
    let worst = density.iter().filter(|r| r.name.contains("skeleton")).map(|r| r.statistic).fold(0.0, f64::max);
    let f4 = axioms.iter().find(|r| r.name.starts_with("constant flow")).expect("constant-flow control");
    let others_pass = axioms.iter().filter(|r| !r.negative_control).all(|r| !r.failed());
    lines.push(Line {
        id: 2,
        what: "flow axioms F1-F5; constant flow fails F4",
        pass: exact.len() == 12 && exact.iter().all(|r| ok(r) && r.replicas >= 9000) && others_pass && f4.control_behaved(),
        detail: format!(
            "F1/F5 exact on {} flows x >= {} tuples; worst skeleton gap {worst:.4} <= {}; constant-flow F4 violations {}",
            exact.len() / 2,
            exact.iter().map(|r| r.replicas).min().unwrap_or(0),
            density[1].reference,
            f4.statistic
        ),
    });

    let r = find(o, "motion", "two-point law arratia (0, 1) t=1");
    lines.push(Line {
        id: 3,
        what: "Arratia no-meet frequency at (0, 1, 1) vs erf(0.5)",
        pass: ok(r) && (r.reference - 0.5204998778130465).abs() < 1e-12,
        detail: format!("{:.4} vs {:.4} (tol 0.01, n={})", r.statistic, r.reference, r.replicas),
    });

    let a = find(o, "motion", "meeting bound arratia (0, 0.1)");
    let u = find(o, "motion", "meeting bound ou(rate=1,volatility=1) (0, 0.1)");
    let ou = DiffusionSpec::ornstein_uhlenbeck(1.0, 1.0).unwrap();
    let unscaled = scale_function(&ou, 0.1).unwrap() - scale_function(&ou, 0.0).unwrap();
    lines.push(Line {
        id: 4,
        what: "meeting bound, Arratia and OU(1,1)",
        pass: ok(a)
            && (a.reference - 0.05641895835477564).abs() < 1e-12
            && ok(u)
            && u.statistic <= unscaled + 3.0 * u.mc_std_error,
        detail: format!(
            "arratia {:.5} <= {:.5} + 3se; ou {:.5} <= {:.5} (scaled) and <= {:.5} (|m(0.1)-m(0)|) + 3se",
            a.statistic, a.reference, u.statistic, u.reference, unscaled
        ),
    });

    let r = find(o, "motion", "cluster count arratia 512 starts in (0, 1)");
    lines.push(Line {
        id: 5,
        what: "cluster count, 512 starts in (0, 1), t - s = 1",
        pass: ok(r) && r.replicas >= 200 && (r.reference - 1.5641895835477562).abs() < 1e-12,
        detail: format!("mean {:.4} +- {:.4} <= {:.4} + 3se (n={})", r.statistic, r.mc_std_error, r.reference, r.replicas),
    });

    let shift = reports(o, "shift");
    let ks = shift.iter().filter(|r| r.name.contains("query")).count();
    let drift = reports(o, "controls")
        .into_iter()
        .find(|r| r.name.starts_with("shift invariance drift-control"))
        .expect("drift control");
    lines.push(Line {
        id: 6,
        what: "shift invariance, 10 queries x h in {0.25, 0.5}; drift control fails",
        pass: ks == 20 && shift.iter().all(|r| ok(r)) && drift.control_behaved(),
        detail: format!(
            "{ks} KS + 2 joint tests pass, smallest p {:.3} >= {:.2e}; drift control smallest p {:.1e}",
            shift.last().unwrap().statistic,
            shift.last().unwrap().reference,
            drift.statistic
        ),
    });

    let m = find(o, "motion", "marginal ou(rate=1,volatility=1.4142135623730951) x=1 t=1 mean");
    let v = find(o, "motion", "marginal ou(rate=1,volatility=1.4142135623730951) x=1 t=1 variance");
    lines.push(Line {
        id: 7,
        what: "OU(1, sqrt2) marginal at x=1, t=1",
        pass: ok(m)
            && ok(v)
            && (m.reference - 0.36787944117144233).abs() < 1e-12
            && (v.reference - 0.8646647167633873).abs() < 1e-12,
        detail: format!(
            "mean {:.4} vs {:.4} (tol 0.01), variance {:.4} vs {:.4} (tol 0.02), n={}",
            m.statistic, m.reference, v.statistic, v.reference, m.replicas
        ),
    });

    let r = find(o, "motion", "stopped equivalence arratia starts [0.0, 1.0] t=1");
    lines.push(Line {
        id: 8,
        what: "stopped equivalence, starts (0, 1), t=1, 5000 vs 5000",
        pass: ok(r) && r.replicas == 5000,
        detail: format!("energy-test p {:.3} >= {}", r.statistic, r.reference),
    });

    let ce = o.bundles.iter().find(|b| b.name == "counterexample").unwrap();
    let verdict = fs::read_to_string(dir_a.join("reports/counterexample_verdict.txt")).unwrap();
    let corr = find(o, "counterexample", "corr(ψ̃_{0,1}, ψ̃_{0,2})");
    lines.push(Line {
        id: 9,
        what: "appendix counterexample",
        pass: ce.checks_pass()
            && ce.controls_behave()
            && verdict.contains("verdict: same marginals, different joints")
            && corr.statistic < 0.01
            && corr.replicas == 100_000,
        detail: format!("{} reports; |corr(ψ̃01, ψ̃02)| = {:.5}", ce.reports.len(), corr.statistic),
    });

    let (mut fa, mut fb) = (Vec::new(), Vec::new());
    files_under(&dir_a.join("reports"), &mut fa);
    files_under(&dir_b.join("reports"), &mut fb);
    let rel = |d: &Path, v: &[std::path::PathBuf]| {
        let mut r: Vec<_> = v.iter().map(|p| p.strip_prefix(d).unwrap().to_path_buf()).collect();
        r.sort();
        r
    };
    let (ra, rb) = (rel(dir_a, &fa), rel(dir_b, &fb));
    let differing = ra.iter().filter(|p| fs::read(dir_a.join(p)).unwrap() != fs::read(dir_b.join(p)).unwrap()).count();
    lines.push(Line {
        id: 10,
        what: "determinism: two full verify runs byte-identical",
        pass: ra == rb && differing == 0 && !ra.is_empty(),
        detail: format!(
            "{} report files compared (parallel vs sequential), {differing} differ; timings {}",
            ra.len(),
            timings.iter().map(|(n, t)| format!("{n} {t:.0}s")).collect::<Vec<_>>().join(", ")
        ),
    });
    lines
}

fn main() -> ExitCode {
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let mut timings = Vec::new();

    let mut run = |dir: &Path, exec: ExecutionConfig, label: &str| {
        let config = RunConfig {
            out: dir.to_path_buf(),
            execution: exec,
            ..RunConfig::default()
        };
        let start = Instant::now();
        let outcome = cmd_verify(&config).expect("verify runs");
        timings.push((label.to_string(), start.elapsed().as_secs_f64()));
        outcome
    };
    let a = run(dir_a.path(), ExecutionConfig::Parallel, "parallel");
    let _b = run(dir_b.path(), ExecutionConfig::Sequential, "sequential");

    let lines = criteria(&a, dir_a.path(), dir_b.path(), &timings);
    println!();
    for l in &lines {
        println!(
            "acceptance criterion {:>2}: {} - {} ({})",
            l.id,
            if l.pass { "PASS" } else { "FAIL" },
            l.what,
            l.detail
        );
    }
    let failed = lines.iter().filter(|l| !l.pass).count();
    println!("acceptance: {} of {} criteria pass", lines.len() - failed, lines.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        for b in &a.bundles {
            for r in b.reports.iter().filter(|r| r.failed() != r.negative_control) {
                println!("  unexpected: {r}");
            }
        }
        ExitCode::FAILURE
    }
}
