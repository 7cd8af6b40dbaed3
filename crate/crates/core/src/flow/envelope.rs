//! The envelope rule on a skeleton: `ψ(s, x; t)` follows the lowest
//! skeleton trajectory that is at or above `x` at time `s`.

use super::{FlowBackend, FlowError, Witness};
use crate::skeleton::SkeletonFlow;

impl SkeletonFlow {
    /// Trajectory selected by the envelope rule at step `ks`.
    fn selector(&self, ks: u32, s: f64, x: f64) -> Result<u32, FlowError> {
        let (ids, pos) = self.live_at_step(ks);
        let at = pos.partition_point(|&p| p < x);
        ids.get(at).copied().ok_or(FlowError::AboveRange { s, x })
    }
}

impl FlowBackend for SkeletonFlow {
    type Value = f64;

    fn eval_traced(&self, s: &f64, x: &f64, t: &f64) -> Result<(f64, Option<u64>), FlowError> {
        let ks = self.step_of(*s)?;
        let kt = self.step_of(*t)?;
        if kt < ks {
            return Err(FlowError::InvalidQuery(format!("s = {s} after t = {t}")));
        }
        if !x.is_finite() {
            return Err(FlowError::InvalidQuery(format!("x = {x}")));
        }
        if kt == ks {
            return Ok((*x, None));
        }
        let id = self.selector(ks, *s, *x)?;
        Ok((self.position(id, kt), Some(id as u64)))
    }

    fn range_at(&self, s: &f64) -> Result<Vec<f64>, FlowError> {
        let k = self.step_of(*s)?;
        Ok(self.range_at_step(k).into_iter().map(|(_, p)| p).collect())
    }

    fn fresh_witness(&self, s: &f64, x: &f64, t: &f64) -> Result<Option<Witness<f64>>, FlowError> {
        let ks = self.step_of(*s)?;
        let kt = self.step_of(*t)?;
        if kt <= ks {
            return Ok(None);
        }
        // Follow the trajectory selected at (s, x) back through starters that
        // landed on an occupied point; the first one inserted as a new
        // cluster started fresh, no later than s, and is in the same class.
        let g = self.geometry();
        let mut id = self.selector(ks, *s, *x)?;
        while self.merges().merge_step(id) == Some(g.start_step(id)) {
            id = self.merges().parents()[id as usize];
        }
        Ok(Some(Witness {
            p: g.time(g.start_step(id)),
            u: g.origin(id),
        }))
    }

    fn lt_witness(&self, s: &f64, x: &f64, t: &f64, c: Option<&f64>) -> Result<Option<Witness<f64>>, FlowError> {
        let ks = self.step_of(*s)?;
        let kt = self.step_of(*t)?;
        if kt < ks {
            return Err(FlowError::InvalidQuery(format!("s = {s} after t = {t}")));
        }
        // Candidates are trajectories started before s; by monotonicity the
        // lowest one at or above x decides.
        let range = self.range_at_step(ks);
        let at = range.partition_point(|&(_, p)| p < *x);
        let Some(&(rep, _)) = range.get(at) else {
            if self.live_at_step(ks).1.last().is_some_and(|&p| p >= *x) {
                return Ok(None);
            }
            return Err(FlowError::AboveRange { s: *s, x: *x });
        };
        let value = self.position(rep, kt);
        if c.is_some_and(|c| value >= *c) {
            return Ok(None);
        }
        let g = self.geometry();
        Ok(Some(Witness {
            p: g.time(g.start_step(rep)),
            u: g.origin(rep),
        }))
    }

    fn characterization_exact(&self, s: &f64, x: &f64) -> Result<bool, FlowError> {
        let ks = self.step_of(*s)?;
        let id = self.selector(ks, *s, *x)?;
        Ok(self.geometry().start_step(id) < ks)
    }
}
