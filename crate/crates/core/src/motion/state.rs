use rand::Rng;
use serde::Serialize;

use super::{collapse, Group, MotionError, MotionModel, Proposal};

/// A coalescence: cluster `absorbed` joined cluster `survivor` at `time`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MergeEvent {
    pub survivor: usize,
    pub absorbed: usize,
    pub time: f64,
}

/// Reusable buffers for [`SystemState::step`].
#[derive(Debug, Default)]
pub struct StepScratch {
    proposal: Proposal,
    groups: Vec<Group>,
}

/// Time-stamped cluster positions of an n-point motion.
///
/// Clusters are identified by their smallest particle index. Because the
/// starting points are sorted and order is preserved, cluster ids increase
/// with position, and a merged cluster keeps the smallest id of its parts.
#[derive(Clone, Debug, PartialEq)]
pub struct SystemState {
    time: f64,
    positions: Vec<f64>,
    cluster_ids: Vec<usize>,
    members: Vec<Vec<usize>>,
    cluster_of: Vec<usize>,
    merge_log: Vec<MergeEvent>,
}

impl SystemState {
    pub fn new(starts: &[f64]) -> Result<Self, MotionError> {
        Self::at_time(0.0, starts)
    }

    /// Particles at `starts` (sorted, duplicates allowed) at time `time`.
    /// Coinciding particles form a single cluster from the start.
    pub fn at_time(time: f64, starts: &[f64]) -> Result<Self, MotionError> {
        if starts.is_empty() {
            return Err(MotionError::EmptyStarts);
        }
        if starts.iter().any(|x| !x.is_finite()) {
            return Err(MotionError::InvalidParameter("non-finite starting point".into()));
        }
        if starts.windows(2).any(|w| w[1] < w[0]) {
            return Err(MotionError::UnsortedStarts);
        }
        let mut state = SystemState {
            time,
            positions: Vec::new(),
            cluster_ids: Vec::new(),
            members: Vec::new(),
            cluster_of: Vec::with_capacity(starts.len()),
            merge_log: Vec::new(),
        };
        for (p, &x) in starts.iter().enumerate() {
            if state.positions.last() == Some(&x) {
                let survivor = *state.cluster_ids.last().expect("non-empty");
                state.members.last_mut().expect("non-empty").push(p);
                state.cluster_of.push(survivor);
                state.merge_log.push(MergeEvent {
                    survivor,
                    absorbed: p,
                    time,
                });
            } else {
                state.positions.push(x);
                state.cluster_ids.push(p);
                state.members.push(vec![p]);
                state.cluster_of.push(p);
            }
        }
        Ok(state)
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    /// Live cluster positions, strictly increasing.
    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn cluster_ids(&self) -> &[usize] {
        &self.cluster_ids
    }

    pub fn n_clusters(&self) -> usize {
        self.positions.len()
    }

    pub fn n_particles(&self) -> usize {
        self.cluster_of.len()
    }

    pub fn merge_log(&self) -> &[MergeEvent] {
        &self.merge_log
    }

    /// Current cluster of particle `p`.
    pub fn cluster_of(&self, p: usize) -> usize {
        self.cluster_of[p]
    }

    pub fn particle_position(&self, p: usize) -> f64 {
        let id = self.cluster_of[p];
        let idx = self
            .cluster_ids
            .binary_search(&id)
            .expect("cluster_of always points at a live cluster");
        self.positions[idx]
    }

    pub fn particle_positions(&self) -> Vec<f64> {
        (0..self.n_particles()).map(|p| self.particle_position(p)).collect()
    }

    /// Advance all clusters by `dt` under `model`.
    pub fn step<R: Rng + ?Sized>(
        &mut self,
        model: &MotionModel,
        dt: f64,
        rng: &mut R,
        scratch: &mut StepScratch,
    ) -> Result<(), MotionError> {
        model.advance(self.time, &self.positions, dt, rng, &mut scratch.proposal)?;
        collapse(&scratch.proposal, &mut scratch.groups);
        let new_time = self.time + dt;
        if scratch.groups.len() == self.positions.len() {
            self.positions.copy_from_slice(&scratch.proposal.positions);
            self.time = new_time;
            return Ok(());
        }
        let mut positions = Vec::with_capacity(scratch.groups.len());
        let mut ids = Vec::with_capacity(scratch.groups.len());
        let mut members = Vec::with_capacity(scratch.groups.len());
        let mut old_members = std::mem::take(&mut self.members);
        for g in &scratch.groups {
            let survivor = self.cluster_ids[g.start];
            let mut merged = std::mem::take(&mut old_members[g.start]);
            for k in (g.start + 1)..g.end {
                let absorbed = self.cluster_ids[k];
                for &p in &old_members[k] {
                    self.cluster_of[p] = survivor;
                }
                merged.append(&mut old_members[k]);
                self.merge_log.push(MergeEvent {
                    survivor,
                    absorbed,
                    time: new_time,
                });
            }
            positions.push(g.position);
            ids.push(survivor);
            members.push(merged);
        }
        self.positions = positions;
        self.cluster_ids = ids;
        self.members = members;
        self.time = new_time;
        Ok(())
    }
}

/// Number of uniform steps used to cover `horizon` with steps at most `dt`.
pub(crate) fn step_count(horizon: f64, dt: f64) -> usize {
    if horizon <= 0.0 {
        return 0;
    }
    ((horizon / dt) - 1e-9).ceil().max(1.0) as usize
}

/// Step `state` forward by `horizon` with steps of at most `dt`, calling
/// `observe` after every step.
pub fn simulate<R: Rng + ?Sized>(
    model: &MotionModel,
    state: &mut SystemState,
    horizon: f64,
    dt: f64,
    rng: &mut R,
    mut observe: impl FnMut(&SystemState),
) -> Result<(), MotionError> {
    if horizon < 0.0 || horizon.is_nan() {
        return Err(MotionError::NegativeDuration(horizon));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(MotionError::InvalidStep(dt));
    }
    let n = step_count(horizon, dt);
    if n == 0 {
        return Ok(());
    }
    let h = horizon / n as f64;
    let t0 = state.time;
    let mut scratch = StepScratch::default();
    for k in 1..=n {
        state.step(model, h, rng, &mut scratch)?;
        // Pin the clock to the grid so long runs don't drift.
        state.time = t0 + k as f64 * h;
        observe(state);
    }
    Ok(())
}

/// Full discrete-time trajectory of the n-point motion from `starts`.
pub fn sample_npoint_motion<R: Rng + ?Sized>(
    model: &MotionModel,
    starts: &[f64],
    horizon: f64,
    dt: f64,
    rng: &mut R,
) -> Result<Vec<SystemState>, MotionError> {
    let mut state = SystemState::new(starts)?;
    let mut path = vec![state.clone()];
    simulate(model, &mut state, horizon, dt, rng, |s| path.push(s.clone()))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::{DiffusionSpec, HarrisSpec};
    use crate::rng::RngStream;
    use crate::stats;

    #[test]
    fn rejects_bad_starts() {
        assert_eq!(SystemState::new(&[]), Err(MotionError::EmptyStarts));
        assert_eq!(SystemState::new(&[1.0, 0.0]), Err(MotionError::UnsortedStarts));
    }

    #[test]
    fn duplicate_starts_share_a_cluster_forever() {
        let model = MotionModel::arratia();
        let mut rng = RngStream::new(5).generator();
        let path = sample_npoint_motion(&model, &[0.0, 0.0], 1.0, 1e-3, &mut rng).unwrap();
        assert_eq!(path.len(), 1001);
        for s in &path {
            assert_eq!(s.n_clusters(), 1);
            assert_eq!(s.cluster_of(0), s.cluster_of(1));
            assert_eq!(s.particle_position(0), s.particle_position(1));
        }
        assert_eq!(path[0].merge_log().len(), 1);
        assert!((path.last().unwrap().time() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn invariants_hold_along_paths() {
        let models = [
            MotionModel::arratia(),
            MotionModel::diffusion(DiffusionSpec::ornstein_uhlenbeck(1.0, 1.0).unwrap()),
            MotionModel::harris(HarrisSpec::exponential(1.0).unwrap()),
        ];
        let starts: Vec<f64> = (0..40).map(|i| i as f64 * 0.05).collect();
        for (m, model) in models.iter().enumerate() {
            let mut rng = RngStream::new(9).child(m as u64).generator();
            let path = sample_npoint_motion(model, &starts, 0.5, 1e-3, &mut rng).unwrap();
            let mut prev_groups: Option<Vec<usize>> = None;
            let mut prev_log = 0;
            for s in &path {
                assert!(s.positions().windows(2).all(|w| w[0] < w[1]), "order lost");
                let groups: Vec<usize> = (0..starts.len()).map(|p| s.cluster_of(p)).collect();
                if let Some(prev) = &prev_groups {
                    // Once together, always together.
                    for i in 0..starts.len() {
                        for j in 0..starts.len() {
                            if prev[i] == prev[j] {
                                assert_eq!(groups[i], groups[j]);
                            }
                        }
                    }
                    assert!(s.merge_log().len() >= prev_log);
                }
                prev_log = s.merge_log().len();
                prev_groups = Some(groups);
            }
        }
    }

    #[test]
    fn single_arratia_step_is_standard_normal() {
        let model = MotionModel::arratia();
        let n = 100_000;
        let mut scratch = StepScratch::default();
        let root = RngStream::new(77);
        let mut rng = root.generator();
        let samples: Vec<f64> = (0..n)
            .map(|_| {
                let mut s = SystemState::new(&[0.0]).unwrap();
                s.step(&model, 1.0, &mut rng, &mut scratch).unwrap();
                s.positions()[0]
            })
            .collect();
        assert!(stats::mean(&samples).abs() < 0.01);
        assert!((stats::variance(&samples) - 1.0).abs() < 0.015);
    }

    #[test]
    fn deterministic_under_fixed_stream() {
        let model = MotionModel::arratia();
        let starts = [0.0, 0.3, 0.9];
        let a = sample_npoint_motion(&model, &starts, 0.2, 1e-3, &mut RngStream::new(3).generator()).unwrap();
        let b = sample_npoint_motion(&model, &starts, 0.2, 1e-3, &mut RngStream::new(3).generator()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn harris_single_cluster_step_variance() {
        let model = MotionModel::harris(HarrisSpec::exponential(1.0).unwrap());
        let mut rng = RngStream::new(8).generator();
        let mut scratch = StepScratch::default();
        let samples: Vec<f64> = (0..50_000)
            .map(|_| {
                let mut s = SystemState::new(&[0.0]).unwrap();
                s.step(&model, 0.01, &mut rng, &mut scratch).unwrap();
                s.positions()[0]
            })
            .collect();
        assert!((stats::variance(&samples) / 0.01 - 1.0).abs() < 0.03);
    }
}
