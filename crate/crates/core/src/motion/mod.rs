//! n-point coalescing motions.
//!
//! Three families are supported: coalescing one-dimensional diffusions
//! `dX = a(X) dt + b(X) dW` that move independently until they meet
//! (Arratia, Ornstein-Uhlenbeck, user-supplied coefficients), Harris flows
//! whose Brownian drivers are spatially correlated through `Γ`, and a
//! drift-injected Arratia variant used as a negative control for shift
//! invariance.

mod harris;
mod state;
mod step;

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::quadrature::adaptive_simpson;

pub use harris::{GammaFamily, HarrisSpec};
pub use state::{sample_npoint_motion, simulate, MergeEvent, StepScratch, SystemState};
pub use step::{collapse, Group, Proposal};

/// Relative tolerance of every scale-function quadrature.
pub const SCALE_REL_TOL: f64 = 1e-10;

/// Default Euler step.
pub const DEFAULT_DT: f64 = 1e-3;

/// Gap below which two Harris clusters are merged.
pub const DEFAULT_HARRIS_MERGE_GAP: f64 = 1e-9;

/// Diagonal jitter added once when a Harris covariance fails to factorize.
pub const HARRIS_JITTER: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MotionError {
    #[error("diffusion coefficient b({x}) = {value} is not positive")]
    NonPositiveDiffusion { x: f64, value: f64 },
    #[error("negative duration {0}")]
    NegativeDuration(f64),
    #[error("invalid gap: d0 = {d0}, d1 = {d1} (both must be positive)")]
    InvalidGap { d0: f64, d1: f64 },
    #[error("Harris covariance of {clusters} clusters is not factorizable even after jitter")]
    CovarianceNotFactorizable { clusters: usize },
    #[error("no starting points given")]
    EmptyStarts,
    #[error("starting points must be sorted nondecreasingly")]
    UnsortedStarts,
    #[error("time step must be positive and finite, got {0}")]
    InvalidStep(f64),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

pub type DriftFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// User-supplied coefficients `a`, `b` with a declared Lipschitz bound.
#[derive(Clone)]
pub struct GenericDiffusion {
    pub drift: DriftFn,
    pub diffusion: DriftFn,
    pub lipschitz_bound: f64,
}

impl fmt::Debug for GenericDiffusion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GenericDiffusion")
            .field("lipschitz_bound", &self.lipschitz_bound)
            .finish_non_exhaustive()
    }
}

#[derive(Clone, Debug)]
pub enum DiffusionSpec {
    /// `a ≡ 0`, `b ≡ 1`.
    Arratia,
    /// `a(x) = -rate * x`, `b ≡ volatility`.
    OrnsteinUhlenbeck { rate: f64, volatility: f64 },
    Generic(GenericDiffusion),
}

impl DiffusionSpec {
    pub fn ornstein_uhlenbeck(rate: f64, volatility: f64) -> Result<Self, MotionError> {
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(MotionError::InvalidParameter(format!("OU rate must be > 0, got {rate}")));
        }
        if !(volatility > 0.0 && volatility.is_finite()) {
            return Err(MotionError::InvalidParameter(format!(
                "OU volatility must be > 0, got {volatility}"
            )));
        }
        Ok(DiffusionSpec::OrnsteinUhlenbeck { rate, volatility })
    }

    pub fn generic(
        drift: impl Fn(f64) -> f64 + Send + Sync + 'static,
        diffusion: impl Fn(f64) -> f64 + Send + Sync + 'static,
        lipschitz_bound: f64,
    ) -> Self {
        DiffusionSpec::Generic(GenericDiffusion {
            drift: Arc::new(drift),
            diffusion: Arc::new(diffusion),
            lipschitz_bound,
        })
    }

    #[inline]
    pub fn drift(&self, x: f64) -> f64 {
        match self {
            DiffusionSpec::Arratia => 0.0,
            DiffusionSpec::OrnsteinUhlenbeck { rate, .. } => -rate * x,
            DiffusionSpec::Generic(g) => (g.drift)(x),
        }
    }

    #[inline]
    pub fn diffusion(&self, x: f64) -> f64 {
        match self {
            DiffusionSpec::Arratia => 1.0,
            DiffusionSpec::OrnsteinUhlenbeck { volatility, .. } => *volatility,
            DiffusionSpec::Generic(g) => (g.diffusion)(x),
        }
    }

    /// Check `b > 0` on `samples` evenly spaced points of `[lo, hi]`.
    pub fn check_window(&self, lo: f64, hi: f64, samples: usize) -> Result<(), MotionError> {
        let n = samples.max(2);
        for i in 0..n {
            let x = lo + (hi - lo) * i as f64 / (n - 1) as f64;
            self.checked_diffusion(x)?;
        }
        Ok(())
    }

    fn checked_diffusion(&self, x: f64) -> Result<f64, MotionError> {
        let b = self.diffusion(x);
        if b > 0.0 && b.is_finite() {
            Ok(b)
        } else {
            Err(MotionError::NonPositiveDiffusion { x, value: b })
        }
    }

    /// `∫₀^y a(z)/b(z)² dz`.
    fn drift_potential(&self, y: f64) -> Result<f64, MotionError> {
        match self {
            DiffusionSpec::Arratia => Ok(0.0),
            DiffusionSpec::OrnsteinUhlenbeck { rate, volatility } => {
                Ok(-rate * y * y / (2.0 * volatility * volatility))
            }
            DiffusionSpec::Generic(_) => adaptive_simpson(
                &|z| {
                    let b = self.checked_diffusion(z)?;
                    Ok(self.drift(z) / (b * b))
                },
                0.0,
                y,
                SCALE_REL_TOL,
            ),
        }
    }

    /// Derivative of the scale function, `exp(-2 ∫₀^x a/b²)`.
    pub fn scale_density(&self, x: f64) -> Result<f64, MotionError> {
        self.checked_diffusion(x)?;
        Ok((-2.0 * self.drift_potential(x)?).exp())
    }
}

/// Scale function `m(x) = ∫₀^x exp(-2 ∫₀^y a(z)/b(z)² dz) dy`.
pub fn scale_function(spec: &DiffusionSpec, x: f64) -> Result<f64, MotionError> {
    if !x.is_finite() {
        return Err(MotionError::InvalidParameter(format!("scale function at {x}")));
    }
    if let DiffusionSpec::Arratia = spec {
        return Ok(x);
    }
    adaptive_simpson(&|y| spec.scale_density(y), 0.0, x, SCALE_REL_TOL)
}

/// Probability that independent standard Brownian motions started at `x`
/// and `y` have not met by time `t`: `erf(|y - x| / (2√t))`.
pub fn pair_no_meet_probability_exact(x: f64, y: f64, t: f64) -> Result<f64, MotionError> {
    if t < 0.0 || t.is_nan() {
        return Err(MotionError::NegativeDuration(t));
    }
    let gap = (y - x).abs();
    if gap == 0.0 {
        return Ok(0.0);
    }
    if t == 0.0 {
        return Ok(1.0);
    }
    Ok(libm::erf(gap / (2.0 * t.sqrt())))
}

/// Probability that a Brownian bridge with variance rate `variance_rate`,
/// going from gap `d0` to gap `d1` over `dt`, touched zero in between.
pub fn bridge_cross_probability(
    d0: f64,
    d1: f64,
    dt: f64,
    variance_rate: f64,
) -> Result<f64, MotionError> {
    if !(d0 > 0.0 && d1 > 0.0) {
        return Err(MotionError::InvalidGap { d0, d1 });
    }
    if dt < 0.0 || dt.is_nan() {
        return Err(MotionError::NegativeDuration(dt));
    }
    if !(variance_rate > 0.0) {
        return Err(MotionError::InvalidParameter(format!(
            "variance rate must be > 0, got {variance_rate}"
        )));
    }
    Ok(bridge_cross_unchecked(d0, d1, dt, variance_rate))
}

#[inline]
pub(crate) fn bridge_cross_unchecked(d0: f64, d1: f64, dt: f64, variance_rate: f64) -> f64 {
    if dt == 0.0 {
        return 0.0;
    }
    (-2.0 * d0 * d1 / (variance_rate * dt)).exp()
}

/// The bound of the two-point meeting estimate on a box `[c, c']` over a
/// horizon `t`: the scale function rescaled by `δ√(πt)`, where `δ` is the
/// smallest diffusion coefficient of `m(X)` on the box.
#[derive(Clone, Debug)]
pub struct MeetingScale {
    spec: DiffusionSpec,
    pub lower: f64,
    pub upper: f64,
    pub horizon: f64,
    pub delta: f64,
}

impl MeetingScale {
    pub fn new(spec: &DiffusionSpec, lower: f64, upper: f64, horizon: f64) -> Result<Self, MotionError> {
        if !(lower <= upper) {
            return Err(MotionError::InvalidParameter(format!("box [{lower}, {upper}]")));
        }
        if !(horizon > 0.0) {
            return Err(MotionError::NegativeDuration(horizon));
        }
        let delta = match spec {
            DiffusionSpec::Arratia => 1.0,
            DiffusionSpec::OrnsteinUhlenbeck { rate, volatility } => {
                let z = 0.0f64.clamp(lower, upper);
                volatility * (rate * z * z / (volatility * volatility)).exp()
            }
            DiffusionSpec::Generic(_) => {
                // Grid minimum of m'(z) b(z); nudged down so the bound errs
                // on the loose side.
                let n = 4001;
                let mut best = f64::INFINITY;
                for i in 0..n {
                    let z = lower + (upper - lower) * i as f64 / (n - 1) as f64;
                    let v = spec.scale_density(z)? * spec.checked_diffusion(z)?;
                    best = best.min(v);
                }
                best * (1.0 - 1e-3)
            }
        };
        Ok(Self {
            spec: spec.clone(),
            lower,
            upper,
            horizon,
            delta,
        })
    }

    /// `m(x) / (δ √(π t))`.
    pub fn scaled(&self, x: f64) -> Result<f64, MotionError> {
        Ok(scale_function(&self.spec, x)? / (self.delta * (std::f64::consts::PI * self.horizon).sqrt()))
    }

    /// Upper bound on P(both paths stay in the box and never meet).
    pub fn pair_bound(&self, x: f64, y: f64) -> Result<f64, MotionError> {
        Ok((self.scaled(y)? - self.scaled(x)?).abs())
    }
}

/// How coalescence between Euler steps is detected.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum CrossingRule {
    /// Sign change of the gap, plus the Brownian-bridge touch test with
    /// frozen coefficients.
    #[default]
    Bridge,
    /// Sign change only. Under-detects meetings; kept as a broken fixture
    /// for negative controls.
    SignChangeOnly,
}

#[derive(Clone, Debug)]
pub enum MotionModel {
    Diffusion { spec: DiffusionSpec, crossing: CrossingRule },
    Harris { spec: HarrisSpec, merge_gap: f64 },
    /// Arratia motion plus the deterministic drift `slope * t`. Not
    /// time-homogeneous, so its flow is not shift invariant.
    DriftControl { slope: f64 },
}

impl MotionModel {
    pub fn arratia() -> Self {
        MotionModel::Diffusion {
            spec: DiffusionSpec::Arratia,
            crossing: CrossingRule::Bridge,
        }
    }

    pub fn diffusion(spec: DiffusionSpec) -> Self {
        MotionModel::Diffusion {
            spec,
            crossing: CrossingRule::Bridge,
        }
    }

    pub fn harris(spec: HarrisSpec) -> Self {
        MotionModel::Harris {
            spec,
            merge_gap: DEFAULT_HARRIS_MERGE_GAP,
        }
    }

    /// The diffusion spec behind the model, if it has one.
    pub fn diffusion_spec(&self) -> Option<&DiffusionSpec> {
        match self {
            MotionModel::Diffusion { spec, .. } => Some(spec),
            MotionModel::DriftControl { .. } => Some(&DiffusionSpec::Arratia),
            MotionModel::Harris { .. } => None,
        }
    }

    pub fn name(&self) -> String {
        match self {
            MotionModel::Diffusion { spec, crossing } => {
                let base = match spec {
                    DiffusionSpec::Arratia => "arratia".to_string(),
                    DiffusionSpec::OrnsteinUhlenbeck { rate, volatility } => {
                        format!("ou(rate={rate},volatility={volatility})")
                    }
                    DiffusionSpec::Generic(_) => "generic".to_string(),
                };
                match crossing {
                    CrossingRule::Bridge => base,
                    CrossingRule::SignChangeOnly => format!("{base}[sign-change-only]"),
                }
            }
            MotionModel::Harris { spec, .. } => format!("harris({:?})", spec.family),
            MotionModel::DriftControl { slope } => format!("drift-control(slope={slope})"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Composite trapezoid rule on a fine uniform grid; independent of the
    /// adaptive scheme under test.
    fn trapezoid(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let mut s = 0.5 * (f(a) + f(b));
        for i in 1..n {
            s += f(a + h * i as f64);
        }
        s * h
    }

    #[test]
    fn arratia_scale_is_identity() {
        assert_eq!(scale_function(&DiffusionSpec::Arratia, 1.7).unwrap(), 1.7);
        assert_eq!(scale_function(&DiffusionSpec::Arratia, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn ou_scale_matches_fine_grid_oracle() {
        let ou = DiffusionSpec::ornstein_uhlenbeck(1.0, 1.0).unwrap();
        let oracle = trapezoid(|y| (y * y).exp(), 0.0, 1.0, 2_000_000);
        // Frozen from an independent scipy quad run: 1.4626517459071815.
        assert!((oracle - 1.462_651_745_907_181_5).abs() < 1e-9);
        let m = scale_function(&ou, 1.0).unwrap();
        assert!((m - oracle).abs() < 1e-9, "m(1) = {m}");
        assert_eq!(scale_function(&ou, 0.0).unwrap(), 0.0);
        let m01 = scale_function(&ou, 0.1).unwrap();
        assert!((m01 - 0.100_334_335_718_922_95).abs() < 1e-12);
    }

    #[test]
    fn generic_route_agrees_with_closed_form_ou() {
        let ou = DiffusionSpec::ornstein_uhlenbeck(1.0, 1.0).unwrap();
        let generic = DiffusionSpec::generic(|x| -x, |_| 1.0, 1.0);
        for &x in &[-1.3, -0.2, 0.4, 1.0] {
            let a = scale_function(&ou, x).unwrap();
            let b = scale_function(&generic, x).unwrap();
            assert!((a - b).abs() < 1e-8 * a.abs().max(1.0), "x={x}: {a} vs {b}");
        }
    }

    #[test]
    fn non_positive_diffusion_is_reported() {
        let bad = DiffusionSpec::generic(|_| 0.0, |x| x - 0.5, 1.0);
        assert!(matches!(
            scale_function(&bad, 1.0),
            Err(MotionError::NonPositiveDiffusion { .. })
        ));
        assert!(bad.check_window(0.0, 1.0, 11).is_err());
        assert!(DiffusionSpec::Arratia.check_window(-5.0, 5.0, 101).is_ok());
    }

    #[test]
    fn spec_coefficients() {
        let ou = DiffusionSpec::ornstein_uhlenbeck(2.0, 0.5).unwrap();
        assert_eq!(ou.drift(1.5), -3.0);
        assert_eq!(ou.diffusion(-7.0), 0.5);
        assert_eq!(DiffusionSpec::Arratia.drift(3.0), 0.0);
        assert_eq!(DiffusionSpec::Arratia.diffusion(3.0), 1.0);
        assert!(DiffusionSpec::ornstein_uhlenbeck(0.0, 1.0).is_err());
        assert!(DiffusionSpec::ornstein_uhlenbeck(1.0, -1.0).is_err());
    }

    #[test]
    fn no_meet_probability() {
        assert_eq!(pair_no_meet_probability_exact(0.0, 0.0, 1.0).unwrap(), 0.0);
        let p = pair_no_meet_probability_exact(0.0, 1.0, 1.0).unwrap();
        assert!((p - 0.520_499_877_813_046_5).abs() < 1e-12, "{p}");
        let far = pair_no_meet_probability_exact(0.0, 1.0, 1e12).unwrap();
        assert!(far < 1e-6);
        assert!(matches!(
            pair_no_meet_probability_exact(0.0, 1.0, -1.0),
            Err(MotionError::NegativeDuration(_))
        ));
    }

    #[test]
    fn bridge_probability() {
        let p = bridge_cross_probability(1.0, 1.0, 1.0, 2.0).unwrap();
        assert!((p - (-1.0f64).exp()).abs() < 1e-15);
        assert_eq!(bridge_cross_probability(1.0, 1.0, 0.0, 2.0).unwrap(), 0.0);
        assert!(bridge_cross_probability(1e-12, 1.0, 1.0, 2.0).unwrap() > 1.0 - 1e-11);
        assert!(matches!(
            bridge_cross_probability(0.0, 1.0, 1.0, 2.0),
            Err(MotionError::InvalidGap { .. })
        ));
        assert!(matches!(
            bridge_cross_probability(1.0, -1.0, 1.0, 2.0),
            Err(MotionError::InvalidGap { .. })
        ));
    }

    #[test]
    fn meeting_scale_arratia_and_ou() {
        let ms = MeetingScale::new(&DiffusionSpec::Arratia, -10.0, 10.0, 1.0).unwrap();
        let b = ms.pair_bound(0.0, 0.1).unwrap();
        assert!((b - 0.056_418_958_354_775_64).abs() < 1e-15);
        let ou = DiffusionSpec::ornstein_uhlenbeck(1.0, 1.0).unwrap();
        let ms = MeetingScale::new(&ou, -10.0, 10.0, 1.0).unwrap();
        assert_eq!(ms.delta, 1.0);
        let b = ms.pair_bound(0.0, 0.1).unwrap();
        let raw = scale_function(&ou, 0.1).unwrap();
        assert!((b - raw / std::f64::consts::PI.sqrt()).abs() < 1e-14);
    }

    proptest! {
        #[test]
        fn scale_function_is_strictly_increasing(x in -2.0f64..2.0, d in 1e-3f64..1.0) {
            let ou = DiffusionSpec::ornstein_uhlenbeck(1.0, 1.3).unwrap();
            let generic = DiffusionSpec::generic(|x| x.sin(), |x| 1.0 + 0.5 * x.cos(), 1.5);
            for spec in [DiffusionSpec::Arratia, ou, generic] {
                prop_assert!(scale_function(&spec, x).unwrap() < scale_function(&spec, x + d).unwrap());
            }
        }
    }
}
