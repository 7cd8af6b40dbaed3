//! Elements of the space of flows: evaluation, the shift group and the
//! cocycle.
//!
//! A [`FlowElement`] wraps a backend that knows how to evaluate `f(s, x; t)`
//! together with a shift offset `h`, so that `θ_h f` is a cheap value and
//! `θ_{h1} θ_{h2} = θ_{h1 + h2}` holds by construction.

mod analytic;
mod axioms;
mod constant;
mod envelope;
mod trace;

pub use analytic::AnalyticFlow;
pub use axioms::{check_cocycle, check_flow_axioms, SamplePlan};
pub use constant::ConstantFlow;
pub use trace::{write_trace_csv, TraceRow};

use std::fmt::Debug;
use std::sync::Arc;

use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use thiserror::Error;

use crate::skeleton::SkeletonError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FlowError {
    #[error("no trajectory at or above x = {x} at time {s}")]
    AboveRange { s: f64, x: f64 },
    #[error("time {0} is outside the horizon")]
    OutOfHorizon(f64),
    #[error("time {0} is not on the grid")]
    OffGridTime(f64),
    #[error("invalid query: {0}")]
    InvalidQuery(String),
}

impl From<SkeletonError> for FlowError {
    fn from(e: SkeletonError) -> Self {
        match e {
            SkeletonError::OffGridTime(t) => FlowError::OffGridTime(t),
            SkeletonError::OutOfHorizon(t) => FlowError::OutOfHorizon(t),
            other => FlowError::InvalidQuery(other.to_string()),
        }
    }
}

/// Number type of a backend. Addition must be deterministic so that shifted
/// queries are reproduced exactly.
pub trait Scalar: Clone + PartialOrd + Debug + Send + Sync + 'static {
    fn zero() -> Self;
    fn add(&self, other: &Self) -> Self;
    fn sub(&self, other: &Self) -> Self;
    fn to_f64(&self) -> f64;
    /// Exact conversion from a finite float.
    fn from_f64(x: f64) -> Self;
}

impl Scalar for f64 {
    fn zero() -> Self {
        0.0
    }
    fn add(&self, other: &Self) -> Self {
        self + other
    }
    fn sub(&self, other: &Self) -> Self {
        self - other
    }
    fn to_f64(&self) -> f64 {
        *self
    }
    fn from_f64(x: f64) -> Self {
        x
    }
}

impl Scalar for BigRational {
    fn zero() -> Self {
        Zero::zero()
    }
    fn add(&self, other: &Self) -> Self {
        self + other
    }
    fn sub(&self, other: &Self) -> Self {
        self - other
    }
    fn to_f64(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or(f64::NAN)
    }
    fn from_f64(x: f64) -> Self {
        BigRational::from_float(x).expect("finite float")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalQuery<V> {
    pub s: V,
    pub x: V,
    pub t: V,
}

impl<V: Scalar> EvalQuery<V> {
    pub fn new(s: V, x: V, t: V) -> Self {
        Self { s, x, t }
    }
}

/// A space-time point `(p, u)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Witness<V> {
    pub p: V,
    pub u: V,
}

/// Something that evaluates `f(s, x; t)` for `s <= t` in absolute time.
pub trait FlowBackend: Send + Sync {
    type Value: Scalar;

    /// `f(s, x; t)` plus the id of the trajectory followed, if the backend
    /// has trajectory ids.
    fn eval_traced(&self, s: &Self::Value, x: &Self::Value, t: &Self::Value)
        -> Result<(Self::Value, Option<u64>), FlowError>;

    fn eval(&self, s: &Self::Value, x: &Self::Value, t: &Self::Value) -> Result<Self::Value, FlowError> {
        self.eval_traced(s, x, t).map(|(v, _)| v)
    }

    /// The range `{f(r, x; s) : r < s}`, sorted, as far as the backend can
    /// represent it.
    fn range_at(&self, s: &Self::Value) -> Result<Vec<Self::Value>, FlowError>;

    /// Whether `x` is outside the range at `s`.
    fn is_fresh(&self, s: &Self::Value, x: &Self::Value) -> Result<bool, FlowError> {
        let range = self.range_at(s)?;
        Ok(range
            .binary_search_by(|p| p.partial_cmp(x).expect("ordered values"))
            .is_err())
    }

    /// A start point `(r, y)`, `r < t`, whose trajectory meets `f(s, x; ·)`
    /// by time `t`; it should be fresh at `r`.
    fn fresh_witness(
        &self,
        s: &Self::Value,
        x: &Self::Value,
        t: &Self::Value,
    ) -> Result<Option<Witness<Self::Value>>, FlowError>;

    /// A point `(p, u)` with `p < s`, `f(p, u; s) >= x` and `f(p, u; t) < c`
    /// (`c = None` is `+∞`), if one exists.
    fn lt_witness(
        &self,
        s: &Self::Value,
        x: &Self::Value,
        t: &Self::Value,
        c: Option<&Self::Value>,
    ) -> Result<Option<Witness<Self::Value>>, FlowError>;

    /// Whether the witness search is expected to agree exactly with
    /// evaluation at `(s, x)`. Finite skeletons fail this when the envelope
    /// picks a starter activated at `s` itself.
    fn characterization_exact(&self, _s: &Self::Value, _x: &Self::Value) -> Result<bool, FlowError> {
        Ok(true)
    }
}

/// A flow `f` together with a shift: evaluates `f(s + h, x; t + h)`.
pub struct FlowElement<B: FlowBackend> {
    backend: Arc<B>,
    offset: B::Value,
}

impl<B: FlowBackend> Clone for FlowElement<B> {
    fn clone(&self) -> Self {
        Self {
            backend: Arc::clone(&self.backend),
            offset: self.offset.clone(),
        }
    }
}

impl<B: FlowBackend> Debug for FlowElement<B> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FlowElement").field("offset", &self.offset).finish_non_exhaustive()
    }
}

impl<B: FlowBackend> FlowElement<B> {
    pub fn new(backend: B) -> Self {
        Self::from_arc(Arc::new(backend))
    }

    pub fn from_arc(backend: Arc<B>) -> Self {
        Self {
            backend,
            offset: B::Value::zero(),
        }
    }

    pub fn backend(&self) -> &B {
        &self.backend
    }

    pub fn offset(&self) -> &B::Value {
        &self.offset
    }

    /// `θ_h f`.
    pub fn shift(&self, h: &B::Value) -> Self {
        Self {
            backend: Arc::clone(&self.backend),
            offset: self.offset.add(h),
        }
    }

    fn absolute(&self, time: &B::Value) -> B::Value {
        time.add(&self.offset)
    }

    fn check_order(q: &EvalQuery<B::Value>) -> Result<(), FlowError> {
        if q.s > q.t {
            return Err(FlowError::InvalidQuery(format!("s = {:?} after t = {:?}", q.s, q.t)));
        }
        Ok(())
    }

    pub fn evaluate(&self, q: &EvalQuery<B::Value>) -> Result<B::Value, FlowError> {
        self.evaluate_traced(q).map(|(v, _)| v)
    }

    pub fn evaluate_traced(&self, q: &EvalQuery<B::Value>) -> Result<(B::Value, Option<u64>), FlowError> {
        Self::check_order(q)?;
        self.backend
            .eval_traced(&self.absolute(&q.s), &q.x, &self.absolute(&q.t))
    }

    pub fn range_at(&self, s: &B::Value) -> Result<Vec<B::Value>, FlowError> {
        self.backend.range_at(&self.absolute(s))
    }

    pub fn is_fresh(&self, s: &B::Value, x: &B::Value) -> Result<bool, FlowError> {
        self.backend.is_fresh(&self.absolute(s), x)
    }

    /// F4 witness in this element's (shifted) time.
    pub fn fresh_witness(&self, q: &EvalQuery<B::Value>) -> Result<Option<Witness<B::Value>>, FlowError> {
        Self::check_order(q)?;
        let w = self
            .backend
            .fresh_witness(&self.absolute(&q.s), &q.x, &self.absolute(&q.t))?;
        Ok(w.map(|w| Witness {
            p: w.p.sub(&self.offset),
            u: w.u,
        }))
    }

    pub fn characterization_exact(&self, s: &B::Value, x: &B::Value) -> Result<bool, FlowError> {
        self.backend.characterization_exact(&self.absolute(s), x)
    }

    /// `φ(t, f, x) = f(0, x; t)`.
    pub fn cocycle(&self, t: &B::Value, x: &B::Value) -> Result<B::Value, FlowError> {
        self.evaluate(&EvalQuery::new(B::Value::zero(), x.clone(), t.clone()))
    }

    /// Whether `f(s, x; t) < c` by the witness characterisation: some
    /// `(p, u)` with `p < s`, `f(p, u; s) >= x` and `f(p, u; t) < c`.
    /// `c = None` stands for `+∞`. The witness is returned in this element's
    /// time.
    pub fn characterize_lt(
        &self,
        q: &EvalQuery<B::Value>,
        c: Option<&B::Value>,
    ) -> Result<Option<Witness<B::Value>>, FlowError> {
        Self::check_order(q)?;
        let w = self
            .backend
            .lt_witness(&self.absolute(&q.s), &q.x, &self.absolute(&q.t), c)?;
        Ok(w.map(|w| Witness {
            p: w.p.sub(&self.offset),
            u: w.u,
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::MotionModel;
    use crate::rng::RngStream;
    use crate::skeleton::{build_skeleton, SkeletonConfig};

    fn q(s: i64, x: (i64, i64), t: i64) -> EvalQuery<BigRational> {
        EvalQuery::new(
            BigRational::from_integer(s.into()),
            BigRational::new(x.0.into(), x.1.into()),
            BigRational::from_integer(t.into()),
        )
    }

    #[test]
    fn analytic_examples() {
        let f = FlowElement::new(AnalyticFlow::default());
        assert_eq!(f.evaluate(&q(0, (0, 1), 1)).unwrap(), BigRational::new(1.into(), 2.into()));
        assert_eq!(
            f.cocycle(&BigRational::from_integer(1.into()), &<BigRational as Zero>::zero()).unwrap(),
            BigRational::new(1.into(), 2.into())
        );
        let x = BigRational::new(3.into(), 7.into());
        assert_eq!(f.evaluate(&EvalQuery::new(x.clone(), x.clone(), x.clone())).unwrap(), x);
    }

    #[test]
    fn shift_group_law() {
        let f = FlowElement::new(AnalyticFlow::default());
        let h1 = BigRational::new(1.into(), 3.into());
        let h2 = BigRational::new(5.into(), 4.into());
        let a = f.shift(&h1).shift(&h2);
        let b = f.shift(&(&h1 + &h2));
        let z = f.shift(&<BigRational as Zero>::zero());
        for (s, x, t) in [(0, (1, 5), 2), (-1, (-7, 3), 4), (2, (0, 1), 2)] {
            let query = q(s, x, t);
            assert_eq!(a.evaluate(&query).unwrap(), b.evaluate(&query).unwrap());
            assert_eq!(z.evaluate(&query).unwrap(), f.evaluate(&query).unwrap());
            let shifted = EvalQuery::new(&query.s + &h1, query.x.clone(), &query.t + &h1);
            assert_eq!(f.shift(&h1).evaluate(&query).unwrap(), f.evaluate(&shifted).unwrap());
        }
    }

    #[test]
    fn rejects_reversed_time() {
        let f = FlowElement::new(AnalyticFlow::default());
        assert!(matches!(f.evaluate(&q(2, (0, 1), 1)), Err(FlowError::InvalidQuery(_))));
    }

    #[test]
    fn envelope_examples() {
        let cfg = SkeletonConfig::every_step(MotionModel::arratia(), (0.0, 1.0), 0.125, (0.0, 1.0), 0.01);
        let sk = build_skeleton(&cfg, 4, &mut RngStream::new(4).generator()).unwrap();
        let f = FlowElement::new(sk);
        // Identity at s = t.
        assert_eq!(f.evaluate(&EvalQuery::new(0.5, 0.3, 0.5)).unwrap(), 0.3);
        // Below everything: same as the lowest point.
        let lowest = f.backend().positions_at(0.5).unwrap()[0].1;
        assert_eq!(
            f.evaluate(&EvalQuery::new(0.5, -100.0, 0.8)).unwrap(),
            f.evaluate(&EvalQuery::new(0.5, lowest, 0.8)).unwrap()
        );
        assert!(matches!(
            f.evaluate(&EvalQuery::new(0.5, 100.0, 0.8)),
            Err(FlowError::AboveRange { .. })
        ));
        assert!(matches!(
            f.evaluate(&EvalQuery::new(0.505, 0.3, 0.8)),
            Err(FlowError::OffGridTime(_))
        ));
        assert!(matches!(
            f.evaluate(&EvalQuery::new(0.5, 0.3, 1.5)),
            Err(FlowError::OutOfHorizon(_))
        ));
        // The range at the first grid time is empty.
        assert!(f.range_at(&0.0).unwrap().is_empty());
    }

    #[test]
    fn envelope_shift_matches_direct_lookup() {
        let cfg = SkeletonConfig::every_step(MotionModel::arratia(), (0.0, 1.0), 0.125, (0.0, 1.0), 0.01);
        let sk = build_skeleton(&cfg, 5, &mut RngStream::new(5).generator()).unwrap();
        let f = FlowElement::new(sk);
        let g = f.shift(&0.25);
        for (s, x, t) in [(0.0, 0.4, 0.5), (0.1, 0.9, 0.7), (0.3, 0.05, 0.3)] {
            assert_eq!(
                g.evaluate(&EvalQuery::new(s, x, t)),
                f.evaluate(&EvalQuery::new(s + 0.25, x, t + 0.25))
            );
        }
    }
}
