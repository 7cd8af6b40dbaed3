//! Two discrete-time flows on `[0, 1]` over `Ω = [0, 1]²` with times
//! `{0, 1, 2}`. Every single map is uniform and the one-step maps are
//! independent for both, yet `ψ_{0,2} = ψ_{0,1}` while `ψ̃_{0,2}` is
//! independent of `ψ̃_{0,1}`: the one-step laws do not pin down the flow.

use std::fmt::Write as _;

use rand::Rng;
use thiserror::Error;

use crate::exec::Execution;
use crate::rng::RngStream;
use crate::stats;
use crate::verify::{bonferroni, Rule, TestReport};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CounterexampleError {
    #[error("invalid time pair ({0}, {1}): need s <= t in {{0, 1, 2}}")]
    InvalidTimePair(u8, u8),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OmegaSquare {
    pub w1: f64,
    pub w2: f64,
}

impl OmegaSquare {
    pub fn new(w1: f64, w2: f64) -> Self {
        debug_assert!((0.0..=1.0).contains(&w1) && (0.0..=1.0).contains(&w2));
        Self { w1, w2 }
    }

    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self::new(rng.random(), rng.random())
    }
}

fn check(s: u8, t: u8) -> Result<(), CounterexampleError> {
    if s > t || t > 2 {
        return Err(CounterexampleError::InvalidTimePair(s, t));
    }
    Ok(())
}

pub fn psi(s: u8, t: u8, w: OmegaSquare, x: f64) -> Result<f64, CounterexampleError> {
    check(s, t)?;
    Ok(match (s, t) {
        _ if s == t => x,
        (0, 1) | (0, 2) => w.w1,
        // The exceptional branch: the point where the first step landed.
        (1, 2) if x == w.w1 => w.w1,
        _ => w.w2,
    })
}

pub fn psi_tilde(s: u8, t: u8, w: OmegaSquare, x: f64) -> Result<f64, CounterexampleError> {
    check(s, t)?;
    Ok(match (s, t) {
        _ if s == t => x,
        (0, 1) => w.w1,
        _ => w.w2,
    })
}

type Map = fn(u8, u8, OmegaSquare, f64) -> Result<f64, CounterexampleError>;

const TRIPLES: [(u8, u8, u8); 10] = [
    (0, 0, 0),
    (0, 0, 1),
    (0, 0, 2),
    (0, 1, 1),
    (0, 1, 2),
    (0, 2, 2),
    (1, 1, 1),
    (1, 1, 2),
    (1, 2, 2),
    (2, 2, 2),
];

/// Composition violations `ψ_{s,t}∘ψ_{r,s} ≠ ψ_{r,t}` over all time triples,
/// the 101-point grid and `ω1` itself.
pub fn composition_violations(map: Map, w: OmegaSquare) -> usize {
    let grid = (0..=100).map(|k| k as f64 / 100.0).chain(std::iter::once(w.w1));
    let mut bad = 0;
    for x in grid {
        for &(r, s, t) in &TRIPLES {
            let lhs = map(s, t, w, map(r, s, w, x).unwrap()).unwrap();
            bad += usize::from(lhs != map(r, t, w, x).unwrap());
        }
    }
    bad
}

/// Settings for [`verify_appendix`].
#[derive(Clone, Debug)]
pub struct AppendixPlan {
    pub replicas: usize,
    /// Replicas fed to the composition check.
    pub composition_replicas: usize,
    /// Subsample for the distance-correlation independence tests.
    pub independence_samples: usize,
    pub permutations: usize,
    pub alpha: f64,
    pub x: f64,
    pub y: f64,
}

impl AppendixPlan {
    pub fn new(replicas: usize) -> Self {
        Self {
            replicas,
            composition_replicas: replicas.min(10_000),
            independence_samples: replicas.min(1000),
            permutations: 199,
            alpha: 0.01,
            x: 0.5,
            y: 0.3,
        }
    }
}

/// Run the appendix battery. The last report is a control that must fail:
/// the correlation test applied to `ψ`, whose two maps coincide.
pub fn verify_appendix(plan: &AppendixPlan, stream: &RngStream, exec: Execution) -> Vec<TestReport> {
    let omegas: Vec<OmegaSquare> = exec.map(plan.replicas, |i| {
        OmegaSquare::sample(&mut stream.named("omega").child(i as u64).generator())
    });
    let mut out = Vec::new();

    // Composition, exact.
    let comp = &omegas[..plan.composition_replicas.min(omegas.len())];
    for (label, map) in [("ψ", psi as Map), ("ψ̃", psi_tilde as Map)] {
        let bad: usize = exec.map(comp.len(), |i| composition_violations(map, comp[i])).iter().sum();
        out.push(
            TestReport::exact_count(format!("{label} composition"), bad, comp.len())
                .with_note("all time triples, 101-point grid plus ω1"),
        );
    }

    // Uniform marginals.
    let level = bonferroni(plan.alpha, 6);
    for (label, map) in [("ψ", psi as Map), ("ψ̃", psi_tilde as Map)] {
        for (s, t) in [(0, 1), (1, 2), (0, 2)] {
            let v: Vec<f64> = omegas.iter().map(|&w| map(s, t, w, plan.x).unwrap()).collect();
            let ks = stats::ks_one_sample(&v, |u| u.clamp(0.0, 1.0));
            out.push(
                TestReport::evaluate(
                    format!("{label}_{{{s},{t}}}({}) uniform", plan.x),
                    ks.p_value,
                    level,
                    0.0,
                    v.len(),
                    Rule::PValueAtLeast,
                )
                .with_note(format!("KS D = {:.5}", ks.statistic)),
            );
        }
    }

    // Independent increments.
    let n = plan.independence_samples.min(omegas.len());
    let level = bonferroni(plan.alpha, 2);
    for (label, map) in [("ψ", psi as Map), ("ψ̃", psi_tilde as Map)] {
        let a: Vec<f64> = omegas[..n].iter().map(|&w| map(0, 1, w, plan.x).unwrap()).collect();
        let b: Vec<f64> = omegas[..n].iter().map(|&w| map(1, 2, w, plan.y).unwrap()).collect();
        let test = stats::distance_correlation_test(&a, &b, plan.permutations, &stream.named(label), exec);
        out.push(
            TestReport::evaluate(
                format!("{label}_{{0,1}}({}) independent of {label}_{{1,2}}({})", plan.x, plan.y),
                test.p_value,
                level,
                0.0,
                n,
                Rule::PValueAtLeast,
            )
            .with_note(format!("distance correlation {:.4}", test.statistic)),
        );
    }

    // The distinguisher.
    let differ = omegas
        .iter()
        .filter(|&&w| psi(0, 2, w, plan.x).unwrap() != psi(0, 1, w, plan.x).unwrap())
        .count();
    out.push(TestReport::exact_count("ψ_{0,2} = ψ_{0,1}", differ, omegas.len()));
    let se = 1.0 / (omegas.len() as f64).sqrt();
    let corr = |map: Map| {
        let a: Vec<f64> = omegas.iter().map(|&w| map(0, 1, w, plan.x).unwrap()).collect();
        let b: Vec<f64> = omegas.iter().map(|&w| map(0, 2, w, plan.x).unwrap()).collect();
        stats::pearson(&a, &b)
    };
    out.push(
        TestReport::evaluate("corr(ψ̃_{0,1}, ψ̃_{0,2})", corr(psi_tilde).abs(), 0.0, se, omegas.len(), Rule::AbsWithin {
            tol: 0.01,
        })
        .with_note(format!("within 3 se: {}", corr(psi_tilde).abs() <= 3.0 * se)),
    );
    out.push(
        TestReport::evaluate("corr(ψ_{0,1}, ψ_{0,2})", corr(psi).abs(), 0.0, se, omegas.len(), Rule::AbsWithin {
            tol: 0.01,
        })
        .as_negative_control()
        .with_note("the correlation test applied to ψ must reject"),
    );
    out
}

/// Plain-text verdict: same one-map marginals and independent steps, but
/// different two-step joint laws.
pub fn verdict_table(reports: &[TestReport]) -> String {
    let find = |name: &str| reports.iter().find(|r| r.name.starts_with(name));
    let mark = |r: Option<&TestReport>| match r {
        Some(r) if !r.failed() => "yes",
        Some(_) => "NO",
        None => "-",
    };
    let mut s = String::new();
    let _ = writeln!(s, "{:<34} {:>6} {:>6}", "property", "ψ", "ψ̃");
    let _ = writeln!(s, "{:<34} {:>6} {:>6}", "composition law", mark(find("ψ composition")), mark(find("ψ̃ composition")));
    for (a, b) in [(0, 1), (1, 2), (0, 2)] {
        let _ = writeln!(
            s,
            "{:<34} {:>6} {:>6}",
            format!("map ({a},{b}) uniform"),
            mark(find(&format!("ψ_{{{a},{b}}}"))),
            mark(find(&format!("ψ̃_{{{a},{b}}}")))
        );
    }
    let _ = writeln!(
        s,
        "{:<34} {:>6} {:>6}",
        "steps (0,1), (1,2) independent",
        mark(find("ψ_{0,1}(")),
        mark(find("ψ̃_{0,1}("))
    );
    let equal = find("ψ_{0,2} = ψ_{0,1}").is_some_and(|r| !r.failed());
    let tilde_indep = find("corr(ψ̃_{0,1}").is_some_and(|r| !r.failed());
    let _ = writeln!(
        s,
        "{:<34} {:>6} {:>6}",
        "map (0,2) equals map (0,1)",
        if equal { "yes" } else { "NO" },
        if tilde_indep { "no" } else { "?" }
    );
    let same_marginals = reports
        .iter()
        .filter(|r| !r.negative_control && r.name != "ψ_{0,2} = ψ_{0,1}" && !r.name.starts_with("corr"))
        .all(|r| !r.failed());
    let verdict = if same_marginals && equal && tilde_indep {
        "same marginals, different joints"
    } else {
        "INCONCLUSIVE"
    };
    let _ = writeln!(s, "verdict: {verdict}");
    s
}
