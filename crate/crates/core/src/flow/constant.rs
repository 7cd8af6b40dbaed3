//! The family `f(s, x; t) = x`. It composes, is monotone and continuous, but
//! every point is in the range at every time, so it has no fresh points and
//! is not a flow in the required sense. Used as a hostile fixture.

use super::{FlowBackend, FlowError, Witness};

#[derive(Clone, Debug, PartialEq)]
pub struct ConstantFlow {
    /// Window and spacing used to materialise the range.
    pub window: (f64, f64),
    pub spacing: f64,
}

impl Default for ConstantFlow {
    fn default() -> Self {
        Self {
            window: (0.0, 1.0),
            spacing: 1.0 / 64.0,
        }
    }
}

impl FlowBackend for ConstantFlow {
    type Value = f64;

    fn eval_traced(&self, s: &f64, x: &f64, t: &f64) -> Result<(f64, Option<u64>), FlowError> {
        if s > t {
            return Err(FlowError::InvalidQuery("s after t".into()));
        }
        Ok((*x, None))
    }

    fn range_at(&self, _s: &f64) -> Result<Vec<f64>, FlowError> {
        let n = ((self.window.1 - self.window.0) / self.spacing).floor() as usize;
        Ok((0..=n).map(|j| self.window.0 + j as f64 * self.spacing).collect())
    }

    fn is_fresh(&self, _s: &f64, _x: &f64) -> Result<bool, FlowError> {
        Ok(false)
    }

    fn fresh_witness(&self, s: &f64, x: &f64, _t: &f64) -> Result<Option<Witness<f64>>, FlowError> {
        // The only trajectory through (s, x) is the constant one; its start
        // is not fresh.
        Ok(Some(Witness { p: *s, u: *x }))
    }

    fn lt_witness(&self, s: &f64, x: &f64, _t: &f64, c: Option<&f64>) -> Result<Option<Witness<f64>>, FlowError> {
        Ok((c.is_none_or(|c| x < c)).then(|| Witness { p: s - 1.0, u: *x }))
    }
}
