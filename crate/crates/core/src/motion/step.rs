//! One Euler step of the live clusters plus coalescence resolution.

use rand::Rng;
use rand_distr::StandardNormal;

use super::{bridge_cross_unchecked, CrossingRule, DiffusionSpec, MotionError, MotionModel};

/// Proposed end-of-step positions and the adjacent pairs flagged to merge.
/// `joined[i]` refers to clusters `i` and `i + 1`.
#[derive(Clone, Debug, Default)]
pub struct Proposal {
    pub positions: Vec<f64>,
    pub joined: Vec<bool>,
}

/// A run of consecutive clusters `start..end` that share `position` after
/// the step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Group {
    pub start: usize,
    pub end: usize,
    pub position: f64,
}

impl MotionModel {
    /// Propose one step of length `dt` from `time` for the sorted cluster
    /// positions `positions` and flag pairs that met during the step.
    pub fn advance<R: Rng + ?Sized>(
        &self,
        time: f64,
        positions: &[f64],
        dt: f64,
        rng: &mut R,
        out: &mut Proposal,
    ) -> Result<(), MotionError> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(MotionError::InvalidStep(dt));
        }
        out.positions.clear();
        out.joined.clear();
        match self {
            MotionModel::Diffusion { spec, crossing } => {
                diffusion_step(spec, *crossing, 0.0, positions, dt, rng, out)
            }
            MotionModel::DriftControl { slope } => diffusion_step(
                &DiffusionSpec::Arratia,
                CrossingRule::Bridge,
                slope * time,
                positions,
                dt,
                rng,
                out,
            ),
            MotionModel::Harris { spec, merge_gap } => {
                let mut incr = Vec::with_capacity(positions.len());
                spec.correlated_increments(positions, dt, rng, &mut incr)?;
                out.positions.extend(positions.iter().zip(&incr).map(|(x, d)| x + d));
                for w in out.positions.windows(2) {
                    out.joined.push(w[1] - w[0] <= *merge_gap);
                }
                Ok(())
            }
        }
    }
}

fn diffusion_step<R: Rng + ?Sized>(
    spec: &DiffusionSpec,
    crossing: CrossingRule,
    extra_drift: f64,
    positions: &[f64],
    dt: f64,
    rng: &mut R,
    out: &mut Proposal,
) -> Result<(), MotionError> {
    let sd = dt.sqrt();
    for &x in positions {
        let b = spec.diffusion(x);
        if !(b > 0.0) {
            return Err(MotionError::NonPositiveDiffusion { x, value: b });
        }
        let z: f64 = rng.sample(StandardNormal);
        out.positions.push(x + (spec.drift(x) + extra_drift) * dt + b * sd * z);
    }
    for i in 0..positions.len().saturating_sub(1) {
        let d1 = out.positions[i + 1] - out.positions[i];
        let joined = if d1 <= 0.0 {
            true
        } else {
            match crossing {
                CrossingRule::SignChangeOnly => false,
                CrossingRule::Bridge => {
                    let d0 = positions[i + 1] - positions[i];
                    let bl = spec.diffusion(positions[i]);
                    let br = spec.diffusion(positions[i + 1]);
                    let p = bridge_cross_unchecked(d0, d1, dt, bl * bl + br * br);
                    rng.random::<f64>() < p
                }
            }
        };
        out.joined.push(joined);
    }
    Ok(())
}

/// Resolve a proposal into strictly increasing groups. Flagged pairs are
/// merged and a merged cluster follows its leftmost member, as in the usual
/// construction where a path that meets another adopts the other's noise.
/// A group whose value would not sit strictly above its left neighbour's is
/// absorbed into it, so order is preserved and crossing always means merging.
pub fn collapse(proposal: &Proposal, groups: &mut Vec<Group>) {
    groups.clear();
    let n = proposal.positions.len();
    let mut start = 0;
    for i in 0..n {
        if i + 1 < n && proposal.joined[i] {
            continue;
        }
        let position = proposal.positions[start];
        match groups.last_mut() {
            Some(prev) if prev.position >= position => prev.end = i + 1,
            _ => groups.push(Group {
                start,
                end: i + 1,
                position,
            }),
        }
        start = i + 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn proposal(positions: &[f64], joined: &[bool]) -> Proposal {
        Proposal {
            positions: positions.to_vec(),
            joined: joined.to_vec(),
        }
    }

    #[test]
    fn collapse_merges_flagged_pairs() {
        let mut g = Vec::new();
        collapse(&proposal(&[0.0, 1.0, 2.0], &[false, true]), &mut g);
        assert_eq!(g.len(), 2);
        assert_eq!(g[0], Group { start: 0, end: 1, position: 0.0 });
        assert_eq!(g[1], Group { start: 1, end: 3, position: 1.0 });
    }

    #[test]
    fn collapse_absorbs_order_violations() {
        // The middle group follows 5.0, which overtakes the next cluster.
        let mut g = Vec::new();
        collapse(&proposal(&[0.0, 5.0, 3.0, 4.0], &[false, true, false]), &mut g);
        assert_eq!(g.len(), 2);
        assert_eq!(g[1], Group { start: 1, end: 4, position: 5.0 });
    }

    proptest! {
        #[test]
        fn collapse_yields_strictly_increasing_partition(
            pos in proptest::collection::vec(-10.0f64..10.0, 1..40),
            flags in proptest::collection::vec(any::<bool>(), 40),
        ) {
            let n = pos.len();
            // A pair not flagged must be ordered in a real proposal.
            let mut joined: Vec<bool> = flags[..n - 1].to_vec();
            for i in 0..n - 1 {
                if pos[i + 1] <= pos[i] {
                    joined[i] = true;
                }
            }
            let mut g = Vec::new();
            collapse(&proposal(&pos, &joined), &mut g);
            prop_assert_eq!(g[0].start, 0);
            prop_assert_eq!(g.last().unwrap().end, n);
            for w in g.windows(2) {
                prop_assert_eq!(w[0].end, w[1].start);
                prop_assert!(w[0].position < w[1].position);
            }
            // Flagged pairs never straddle a group boundary.
            for grp in &g {
                for i in 0..n - 1 {
                    if joined[i] && i >= grp.start && i < grp.end {
                        prop_assert!(i + 1 < grp.end);
                    }
                }
            }
        }
    }
}
