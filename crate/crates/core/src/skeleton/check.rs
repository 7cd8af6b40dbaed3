//! Structural and statistical checks of a built skeleton.

use rand::Rng;

use super::SkeletonFlow;
use crate::motion::{DiffusionSpec, MeetingScale};
use crate::rng::RngStream;
use crate::stats;
use crate::verify::{Rule, TestReport};

/// What to sample when checking a skeleton.
#[derive(Clone, Debug)]
pub struct SpCheckPlan {
    /// Density tolerance for the range.
    pub density_tolerance: f64,
    /// Sub-window on which density is checked.
    pub interior: (f64, f64),
    /// Density is checked from `t0 + settle` on.
    pub settle: f64,
    /// Check density every `density_stride` steps.
    pub density_stride: u32,
    /// Gap above which a neighbouring pair counts as separated.
    pub modulus_threshold: f64,
    pub modulus_samples: usize,
    /// Ladder length `u + Δx, …, u + rungs·Δx`.
    pub modulus_rungs: usize,
    pub order_pairs: usize,
    pub permanence_samples: usize,
    pub cluster_samples: usize,
    /// Diffusion behind the skeleton, for the cluster-count bound.
    pub scale: Option<DiffusionSpec>,
}

impl SpCheckPlan {
    /// Defaults: `ε_d = 8Δx` on the middle half of the window, separation
    /// threshold `4Δx + 3√dt`.
    pub fn for_skeleton(sk: &SkeletonFlow, scale: Option<DiffusionSpec>) -> Self {
        let g = sk.geometry();
        let (c, c1) = g.window;
        let w = c1 - c;
        Self {
            density_tolerance: 8.0 * g.spacing,
            interior: (c + w / 4.0, c1 - w / 4.0),
            settle: 0.01,
            density_stride: 1,
            modulus_threshold: 4.0 * g.spacing + 3.0 * g.dt.sqrt(),
            modulus_samples: 400,
            modulus_rungs: 4,
            order_pairs: 400,
            permanence_samples: 400,
            cluster_samples: 400,
            scale,
        }
    }
}

/// Run all skeleton checks. Failures are reported, never raised.
pub fn check_sp_properties(sk: &SkeletonFlow, plan: &SpCheckPlan, stream: &RngStream) -> Vec<TestReport> {
    let (ladder, separation) = sp5_modulus(sk, plan, stream);
    vec![
        frozen_before_start(sk, plan, stream),
        sp1_fresh_starts(sk),
        sp2_permanence(sk, plan, stream),
        order_preservation(sk, plan, stream),
        sp3_density(sk, plan),
        sp4_cluster_count(sk, plan, stream),
        ladder,
        separation,
    ]
}

fn sample_ids<R: Rng>(sk: &SkeletonFlow, n: usize, rng: &mut R) -> Vec<u32> {
    let total = sk.n_trajectories();
    if total <= n {
        return (0..total as u32).collect();
    }
    (0..n).map(|_| rng.random_range(0..total as u32)).collect()
}

fn frozen_before_start(sk: &SkeletonFlow, plan: &SpCheckPlan, stream: &RngStream) -> TestReport {
    let mut rng = stream.named("frozen").generator();
    let g = sk.geometry();
    let (mut bad, mut checked) = (0, 0);
    for id in sample_ids(sk, plan.permanence_samples, &mut rng) {
        for k in 0..=g.start_step(id) {
            checked += 1;
            bad += (sk.position(id, k) != g.origin(id)) as usize;
        }
    }
    TestReport::exact_count("skeleton frozen before start", bad, checked)
}

/// Count exact coincidences between the range at each start time and the
/// starting values injected then.
fn sp1_fresh_starts(sk: &SkeletonFlow) -> TestReport {
    let g = sk.geometry();
    let mut steps = g.start_steps.clone();
    steps.dedup();
    let (mut bad, mut checked) = (0, 0);
    for k in steps {
        let range = sk.range_at_step(k);
        let (mut i, mut j) = (0, 0);
        while i < range.len() && j < g.lattice.len() {
            let (p, u) = (range[i].1, g.lattice[j]);
            if p < u {
                i += 1;
            } else if u < p {
                j += 1;
            } else {
                bad += 1;
                i += 1;
                j += 1;
            }
        }
        checked += g.lattice.len();
    }
    TestReport::exact_count("SP1 starters avoid the running range", bad, checked)
        .with_note("starters landing on the range are merged on arrival and counted here")
}

/// Absorbed trajectories equal their parent, and read a live position, at
/// every step from the merge on.
fn sp2_permanence(sk: &SkeletonFlow, plan: &SpCheckPlan, stream: &RngStream) -> TestReport {
    let mut rng = stream.named("permanence").generator();
    let uf = sk.merges();
    let total = sk.n_trajectories() as u32;
    let absorbed: Vec<u32> = (0..total).filter(|&i| !uf.is_root(i)).collect();
    let picks: Vec<u32> = if absorbed.len() <= plan.permanence_samples {
        absorbed
    } else {
        (0..plan.permanence_samples)
            .map(|_| absorbed[rng.random_range(0..absorbed.len())])
            .collect()
    };
    let (mut bad, mut checked) = (0, 0);
    for i in picks {
        let m = uf.merge_step(i).expect("absorbed");
        let parent = uf.parents()[i as usize];
        for k in m..=sk.n_steps() {
            checked += 1;
            let y = sk.position(i, k);
            let rep = sk.representative(i, k);
            let (ids, pos) = sk.live_at_step(k);
            let live = ids.iter().position(|&r| r == rep).map(|at| pos[at]);
            if y != sk.position(parent, k) || live != Some(y) {
                bad += 1;
            }
        }
    }
    TestReport::exact_count("SP2 permanence after merging", bad, checked)
}

/// Sign of the difference of two trajectories never flips; it may only drop
/// to zero and stay there.
fn order_preservation(sk: &SkeletonFlow, plan: &SpCheckPlan, stream: &RngStream) -> TestReport {
    let mut rng = stream.named("order").generator();
    let g = sk.geometry();
    let total = sk.n_trajectories() as u32;
    let (mut bad, mut checked) = (0, 0);
    if total >= 2 {
        for _ in 0..plan.order_pairs {
            let a = rng.random_range(0..total);
            let b = rng.random_range(0..total);
            let from = g.start_step(a).max(g.start_step(b));
            let mut sign = 2i8;
            for k in from..=g.n_steps {
                let d = sk.position(b, k) - sk.position(a, k);
                let s = if d > 0.0 { 1 } else if d < 0.0 { -1 } else { 0 };
                if sign != 2 && s != sign && (sign == 0 || s != 0) {
                    bad += 1;
                    break;
                }
                sign = s;
            }
            checked += 1;
        }
    }
    TestReport::exact_count("skeleton order preservation", bad, checked)
}

fn sp3_density(sk: &SkeletonFlow, plan: &SpCheckPlan) -> TestReport {
    let g = sk.geometry();
    let first = ((plan.settle / g.dt) - 1e-9).ceil().max(1.0) as u32;
    let (a, b) = plan.interior;
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let mut k = first;
    while k <= g.n_steps {
        let range = sk.range_at_step(k);
        worst = worst.max(stats::max_gap(range.iter().map(|r| r.1), a, b));
        checked += 1;
        k += plan.density_stride.max(1);
    }
    if checked == 0 {
        return TestReport::skipped("SP3 range density", "horizon shorter than the settling time");
    }
    TestReport::evaluate("SP3 range density", worst, plan.density_tolerance, 0.0, checked, Rule::AtMost)
        .with_note(format!(
            "max gap on [{a}, {b}] for t >= t0 + {}; tolerance {}",
            plan.settle, plan.density_tolerance
        ))
}

/// Distinct time-`t` values among classes inside `(a, b)` at `s`, against
/// `1 + m(b) - m(a)` with the scale normalised over `t - s`.
fn sp4_cluster_count(sk: &SkeletonFlow, plan: &SpCheckPlan, stream: &RngStream) -> TestReport {
    let name = "SP4 distinct values bounded by the scale";
    let Some(spec) = &plan.scale else {
        return TestReport::skipped(name, "no scale function for this model");
    };
    let g = sk.geometry();
    let min_gap = ((plan.settle / g.dt).ceil() as u32).max(1);
    if g.n_steps <= min_gap {
        return TestReport::skipped(name, "horizon too short");
    }
    if !(plan.interior.0 < plan.interior.1) {
        return TestReport::skipped(name, "empty interior window");
    }
    let mut rng = stream.named("clusters").generator();
    let (c, c1) = g.window;
    let w = c1 - c;
    let (lo, hi) = plan.interior;
    let mut excess = Vec::with_capacity(plan.cluster_samples);
    for _ in 0..plan.cluster_samples {
        let ks = rng.random_range(0..g.n_steps - min_gap);
        let kt = rng.random_range(ks + min_gap..=g.n_steps);
        let (x, y) = (rng.random_range(lo..hi), rng.random_range(lo..hi));
        let (a, b) = (x.min(y), x.max(y));
        let (ids, pos) = sk.live_at_step(ks);
        let mut reps: Vec<u32> = ids
            .iter()
            .zip(pos)
            .filter(|(_, &p)| p > a && p < b)
            .map(|(&i, _)| sk.representative(i, kt))
            .collect();
        reps.dedup();
        let scale = match MeetingScale::new(spec, c - w, c1 + w, g.dt * (kt - ks) as f64) {
            Ok(s) => s,
            Err(e) => return TestReport::skipped(name, e.to_string()),
        };
        let bound = match scale.pair_bound(a, b) {
            Ok(v) => 1.0 + v,
            Err(e) => return TestReport::skipped(name, e.to_string()),
        };
        excess.push(reps.len() as f64 - bound);
    }
    TestReport::evaluate(
        name,
        stats::mean(&excess),
        0.0,
        stats::std_error(&excess),
        excess.len(),
        Rule::AtMostPlus3Se,
    )
    .with_note("statistic is the mean of count - (1 + m(b) - m(a)) over sampled (s, t, a, b)")
}

/// Ladder checks for the right modulus. Returns the exact monotonicity
/// report and the separation-frequency report.
fn sp5_modulus(sk: &SkeletonFlow, plan: &SpCheckPlan, stream: &RngStream) -> (TestReport, TestReport) {
    let g = sk.geometry();
    let l = g.lattice.len();
    let rungs = plan.modulus_rungs.max(1);
    let names = ("SP5 modulus ladder monotone", "SP5 neighbour separation frequency");
    if l <= rungs {
        return (
            TestReport::skipped(names.0, "lattice shorter than the ladder"),
            TestReport::skipped(names.1, "lattice shorter than the ladder"),
        );
    }
    let mut rng = stream.named("modulus").generator();
    let (mut bad, mut separated) = (0, 0);
    for _ in 0..plan.modulus_samples {
        let si = rng.random_range(0..g.start_steps.len());
        let j = rng.random_range(0..l - rungs);
        let base = g.id(si, j);
        let from = g.start_steps[si];
        let mut prev = f64::NEG_INFINITY;
        for m in 1..=rungs {
            let up = g.id(si, j + m);
            let d = (from..=g.n_steps)
                .map(|k| sk.position(up, k) - sk.position(base, k))
                .fold(f64::NEG_INFINITY, f64::max);
            if d < prev {
                bad += 1;
            }
            if m == 1 && d > plan.modulus_threshold {
                separated += 1;
            }
            prev = d;
        }
    }
    let n = plan.modulus_samples;
    let monotone = TestReport::exact_count(names.0, bad, n);
    // The gap of two neighbours is a nonnegative (super)martingale, so the
    // chance that it ever exceeds the threshold is at most Δx / threshold.
    let reference = (g.spacing / plan.modulus_threshold).min(1.0);
    let freq = separated as f64 / n.max(1) as f64;
    let sep = TestReport::evaluate(
        names.1,
        freq,
        reference,
        stats::binomial_std_error(reference, n),
        n,
        Rule::AtMostPlus3Se,
    )
    .with_note(format!("threshold {}", plan.modulus_threshold));
    (monotone, sep)
}
