//! The skeleton: coalescing trajectories started from a finite space-time
//! grid.
//!
//! Every grid point `(p, u)` (a start time times a lattice point of the
//! window) owns a trajectory that sits at `u` until `p` and then moves with
//! the coalescing n-point motion of everything already running. Trajectory
//! positions are stored once per merge class: a trajectory keeps its own
//! segment until it is absorbed, after which it reads the survivor's.

mod check;
mod snapshot;

pub use check::{check_sp_properties, SpCheckPlan};
pub use snapshot::{read_header, read_snapshot, write_snapshot, SnapshotHeader, SNAPSHOT_VERSION};

use rand::Rng;
use serde::Serialize;
use thiserror::Error;

use crate::motion::{collapse, Group, MotionError, MotionModel, Proposal};
use crate::union_find::TimedUnionFind;

/// Tolerance, in steps, for recognising a time as a grid time.
pub const GRID_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum SkeletonError {
    #[error("invalid skeleton config: {0}")]
    InvalidConfig(String),
    #[error("time {0} is not on the skeleton grid")]
    OffGridTime(f64),
    #[error("time {0} is outside the skeleton horizon")]
    OutOfHorizon(f64),
    #[error(transparent)]
    Motion(#[from] MotionError),
    #[error("snapshot: {0}")]
    Snapshot(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug)]
pub struct SkeletonConfig {
    /// Space window `[c, c']` holding the starting lattice.
    pub window: (f64, f64),
    pub spacing: f64,
    /// Sorted start times, each on the time grid. Duplicates allowed.
    pub start_times: Vec<f64>,
    pub horizon: (f64, f64),
    pub dt: f64,
    pub model: MotionModel,
}

impl SkeletonConfig {
    /// Starters at every grid time of the horizon except the last.
    pub fn every_step(
        model: MotionModel,
        window: (f64, f64),
        spacing: f64,
        horizon: (f64, f64),
        dt: f64,
    ) -> Self {
        let n = ((horizon.1 - horizon.0) / dt).round().max(0.0) as usize;
        let start_times = (0..n.max(1)).map(|k| horizon.0 + k as f64 * dt).collect();
        Self {
            window,
            spacing,
            start_times,
            horizon,
            dt,
            model,
        }
    }

    /// Validate and lay out the grid.
    pub fn geometry(&self) -> Result<SkeletonGeometry, SkeletonError> {
        let bad = |m: String| Err(SkeletonError::InvalidConfig(m));
        let (c, c1) = self.window;
        let (t0, t1) = self.horizon;
        if !(c.is_finite() && c1.is_finite() && c <= c1) {
            return bad(format!("window [{c}, {c1}]"));
        }
        if !(self.spacing > 0.0 && self.spacing.is_finite()) {
            return bad(format!("spacing {}", self.spacing));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt {}", self.dt));
        }
        if !(t0.is_finite() && t1.is_finite() && t0 <= t1) {
            return bad(format!("horizon [{t0}, {t1}]"));
        }
        let steps = (t1 - t0) / self.dt;
        if (steps - steps.round()).abs() > GRID_TOLERANCE * steps.max(1.0) {
            return bad(format!("horizon length {} is not a multiple of dt {}", t1 - t0, self.dt));
        }
        let n_steps = steps.round() as u64;
        let n_lattice = ((c1 - c) / self.spacing + 1e-9).floor() as u64 + 1;
        let n_starts = self.start_times.len() as u64;
        if n_steps >= u32::MAX as u64 || n_lattice * n_starts >= u32::MAX as u64 {
            return bad("grid too large".into());
        }
        if self.start_times.is_empty() {
            return bad("no start times".into());
        }
        if self.start_times.windows(2).any(|w| w[1] < w[0]) {
            return bad("start times not sorted".into());
        }
        let mut geom = SkeletonGeometry {
            t0,
            dt: self.dt,
            n_steps: n_steps as u32,
            window: self.window,
            spacing: self.spacing,
            lattice: (0..n_lattice).map(|j| c + j as f64 * self.spacing).collect(),
            start_steps: Vec::with_capacity(self.start_times.len()),
        };
        for &p in &self.start_times {
            geom.start_steps.push(geom.step_of(p)?);
        }
        Ok(geom)
    }
}

/// Time grid, starting lattice and start steps of a skeleton.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SkeletonGeometry {
    pub t0: f64,
    pub dt: f64,
    pub n_steps: u32,
    pub window: (f64, f64),
    pub spacing: f64,
    pub lattice: Vec<f64>,
    pub start_steps: Vec<u32>,
}

impl SkeletonGeometry {
    pub fn time(&self, k: u32) -> f64 {
        self.t0 + k as f64 * self.dt
    }

    pub fn t1(&self) -> f64 {
        self.time(self.n_steps)
    }

    /// Grid step of time `t`.
    pub fn step_of(&self, t: f64) -> Result<u32, SkeletonError> {
        let k = (t - self.t0) / self.dt;
        if !(k > -GRID_TOLERANCE && k < self.n_steps as f64 + GRID_TOLERANCE) {
            return Err(SkeletonError::OutOfHorizon(t));
        }
        let r = k.round();
        if (k - r).abs() > GRID_TOLERANCE {
            return Err(SkeletonError::OffGridTime(t));
        }
        Ok(r as u32)
    }

    pub fn n_trajectories(&self) -> usize {
        self.lattice.len() * self.start_steps.len()
    }

    /// Trajectory ids run over start index (outer) and lattice index.
    pub fn id(&self, start_index: usize, lattice_index: usize) -> u32 {
        (start_index * self.lattice.len() + lattice_index) as u32
    }

    pub fn origin(&self, id: u32) -> f64 {
        self.lattice[id as usize % self.lattice.len()]
    }

    pub fn start_step(&self, id: u32) -> u32 {
        self.start_steps[id as usize / self.lattice.len()]
    }
}

/// A built skeleton. Immutable; safe to share across threads.
#[derive(Clone, Debug, PartialEq)]
pub struct SkeletonFlow {
    geom: SkeletonGeometry,
    seed: u64,
    model_name: String,
    merges: TimedUnionFind,
    seg_offset: Vec<u64>,
    seg_len: Vec<u32>,
    samples: Vec<f64>,
    // Per step (after activation): live representatives sorted by position.
    live_offset: Vec<u64>,
    live_id: Vec<u32>,
    live_pos: Vec<f64>,
}

struct Live {
    pos: Vec<f64>,
    id: Vec<u32>,
    buf: Vec<Vec<f64>>,
}

/// Build the skeleton described by `config`, drawing from `rng`. `seed` is
/// only recorded for provenance.
pub fn build_skeleton<R: Rng + ?Sized>(
    config: &SkeletonConfig,
    seed: u64,
    rng: &mut R,
) -> Result<SkeletonFlow, SkeletonError> {
    let geom = config.geometry()?;
    let n = geom.n_trajectories();
    let mut sk = SkeletonFlow {
        seed,
        model_name: config.model.name(),
        merges: TimedUnionFind::new(n),
        seg_offset: vec![0; n],
        seg_len: vec![0; n],
        samples: Vec::new(),
        live_offset: Vec::with_capacity(geom.n_steps as usize + 2),
        live_id: Vec::new(),
        live_pos: Vec::new(),
        geom,
    };
    let mut live = Live {
        pos: Vec::new(),
        id: Vec::new(),
        buf: Vec::new(),
    };
    let mut proposal = Proposal::default();
    let mut groups: Vec<Group> = Vec::new();
    let mut next_start = 0;
    sk.live_offset.push(0);
    for k in 0..=sk.geom.n_steps {
        if k > 0 && !live.pos.is_empty() {
            let t = sk.geom.time(k - 1);
            config.model.advance(t, &live.pos, sk.geom.dt, rng, &mut proposal)?;
            collapse(&proposal, &mut groups);
            sk.apply_groups(&mut live, &groups, k);
        }
        while next_start < sk.geom.start_steps.len() && sk.geom.start_steps[next_start] == k {
            sk.activate(&mut live, next_start, k);
            next_start += 1;
        }
        sk.live_id.extend_from_slice(&live.id);
        sk.live_pos.extend_from_slice(&live.pos);
        sk.live_offset.push(sk.live_id.len() as u64);
    }
    for (id, buf) in live.id.iter().zip(live.buf.iter_mut()) {
        sk.flush(*id, std::mem::take(buf));
    }
    Ok(sk)
}

impl SkeletonFlow {
    fn flush(&mut self, id: u32, buf: Vec<f64>) {
        self.seg_offset[id as usize] = self.samples.len() as u64;
        self.seg_len[id as usize] = buf.len() as u32;
        self.samples.extend_from_slice(&buf);
    }

    fn apply_groups(&mut self, live: &mut Live, groups: &[Group], k: u32) {
        if groups.len() == live.pos.len() {
            for (i, g) in groups.iter().enumerate() {
                live.pos[i] = g.position;
                live.buf[i].push(g.position);
            }
            return;
        }
        let mut pos = Vec::with_capacity(groups.len());
        let mut ids = Vec::with_capacity(groups.len());
        let mut bufs = Vec::with_capacity(groups.len());
        for g in groups {
            let mut keep = live.id[g.start];
            for i in g.start + 1..g.end {
                keep = self.merges.union(keep, live.id[i], k);
            }
            for i in g.start..g.end {
                let buf = std::mem::take(&mut live.buf[i]);
                if live.id[i] == keep {
                    bufs.push(buf);
                } else {
                    self.flush(live.id[i], buf);
                }
            }
            bufs.last_mut().expect("survivor buffer").push(g.position);
            pos.push(g.position);
            ids.push(keep);
        }
        live.pos = pos;
        live.id = ids;
        live.buf = bufs;
    }

    /// Insert the starters of start index `si` at step `k`. A starter on an
    /// occupied position joins the occupant immediately.
    fn activate(&mut self, live: &mut Live, si: usize, k: u32) {
        let lattice = &self.geom.lattice;
        let old = std::mem::replace(
            live,
            Live {
                pos: Vec::with_capacity(live.pos.len() + lattice.len()),
                id: Vec::with_capacity(live.pos.len() + lattice.len()),
                buf: Vec::with_capacity(live.pos.len() + lattice.len()),
            },
        );
        let mut old_iter = old.pos.into_iter().zip(old.id).zip(old.buf).peekable();
        for (j, &u) in lattice.iter().enumerate() {
            let id = self.geom.id(si, j);
            while let Some(((p, _), _)) = old_iter.peek() {
                if *p >= u {
                    break;
                }
                let ((p, i), b) = old_iter.next().expect("peeked");
                live.pos.push(p);
                live.id.push(i);
                live.buf.push(b);
            }
            if let Some(((p, i), _)) = old_iter.peek() {
                if *p == u {
                    self.merges.link(id, *i, k);
                    continue;
                }
            }
            live.pos.push(u);
            live.id.push(id);
            live.buf.push(vec![u]);
        }
        for ((p, i), b) in old_iter {
            live.pos.push(p);
            live.id.push(i);
            live.buf.push(b);
        }
    }

    pub fn geometry(&self) -> &SkeletonGeometry {
        &self.geom
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn model_name(&self) -> &str {
        &self.model_name
    }

    pub fn merges(&self) -> &TimedUnionFind {
        &self.merges
    }

    pub fn n_trajectories(&self) -> usize {
        self.geom.n_trajectories()
    }

    pub fn n_steps(&self) -> u32 {
        self.geom.n_steps
    }

    pub fn step_of(&self, t: f64) -> Result<u32, SkeletonError> {
        self.geom.step_of(t)
    }

    /// Representative of trajectory `id` at step `k`.
    #[inline]
    pub fn representative(&self, id: u32, k: u32) -> u32 {
        self.merges.find_at(id, k)
    }

    /// Position of trajectory `id` at grid step `k`.
    #[inline]
    pub fn position(&self, id: u32, k: u32) -> f64 {
        let start = self.geom.start_step(id);
        if k <= start {
            return self.geom.origin(id);
        }
        let rep = self.merges.find_at(id, k);
        let off = self.seg_offset[rep as usize] + (k - self.geom.start_step(rep)) as u64;
        debug_assert!(k - self.geom.start_step(rep) < self.seg_len[rep as usize]);
        self.samples[off as usize]
    }

    /// Full path of trajectory `id` over all grid steps.
    pub fn trajectory(&self, id: u32) -> Vec<f64> {
        (0..=self.geom.n_steps).map(|k| self.position(id, k)).collect()
    }

    /// Live representatives at step `k` (activation at `k` included),
    /// sorted by position.
    pub fn live_at_step(&self, k: u32) -> (&[u32], &[f64]) {
        let a = self.live_offset[k as usize] as usize;
        let b = self.live_offset[k as usize + 1] as usize;
        (&self.live_id[a..b], &self.live_pos[a..b])
    }

    /// Cluster representatives with activation `<= s`, sorted by position.
    pub fn positions_at(&self, s: f64) -> Result<Vec<(u32, f64)>, SkeletonError> {
        let k = self.step_of(s)?;
        let (ids, pos) = self.live_at_step(k);
        Ok(ids.iter().copied().zip(pos.iter().copied()).collect())
    }

    /// Positions at step `k` of classes whose representative started
    /// strictly before `k`.
    pub fn range_at_step(&self, k: u32) -> Vec<(u32, f64)> {
        let (ids, pos) = self.live_at_step(k);
        ids.iter()
            .zip(pos)
            .filter(|(&i, _)| self.geom.start_step(i) < k)
            .map(|(&i, &p)| (i, p))
            .collect()
    }

    /// Length of the stored segment owned by `id` (0 if it never moved on
    /// its own).
    pub fn own_segment_len(&self, id: u32) -> u32 {
        self.seg_len[id as usize]
    }

    /// Total stored samples; merged tails are stored once.
    pub fn stored_samples(&self) -> usize {
        self.samples.len()
    }
}
