use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{MotionError, HARRIS_JITTER};
use crate::quadrature::adaptive_simpson;

/// Parametric correlation function `Γ` of a Harris flow.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum GammaFamily {
    /// `Γ(x) = exp(-rate |x|)`.
    Exponential { rate: f64 },
    /// `Γ(x) = 1 / (1 + rate |x|)`.
    Cauchy { rate: f64 },
}

impl Default for GammaFamily {
    fn default() -> Self {
        GammaFamily::Exponential { rate: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HarrisSpec {
    pub family: GammaFamily,
}

impl HarrisSpec {
    pub fn new(family: GammaFamily) -> Result<Self, MotionError> {
        let rate = match family {
            GammaFamily::Exponential { rate } | GammaFamily::Cauchy { rate } => rate,
        };
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(MotionError::InvalidParameter(format!("Γ rate must be > 0, got {rate}")));
        }
        Ok(Self { family })
    }

    pub fn exponential(rate: f64) -> Result<Self, MotionError> {
        Self::new(GammaFamily::Exponential { rate })
    }

    #[inline]
    pub fn gamma(&self, x: f64) -> f64 {
        match self.family {
            GammaFamily::Exponential { rate } => (-rate * x.abs()).exp(),
            GammaFamily::Cauchy { rate } => 1.0 / (1.0 + rate * x.abs()),
        }
    }

    /// Lower bound `β` with `1 - Γ(x) ≥ β(x)` on `(0, 1]`.
    pub fn beta(&self, x: f64) -> f64 {
        match self.family {
            GammaFamily::Exponential { rate } => (1.0 - (-rate).exp()) * x,
            GammaFamily::Cauchy { rate } => rate * x / (1.0 + rate),
        }
    }

    /// Pointwise check of `Γ(0) = 1`, `|Γ| ≤ 1`, evenness and the `β` bound,
    /// plus the quadrature value of `∫₀¹ x/β(x) dx` (must be finite).
    pub fn check_conditions(&self) -> Result<f64, MotionError> {
        if self.gamma(0.0) != 1.0 {
            return Err(MotionError::InvalidParameter("Γ(0) != 1".into()));
        }
        for i in 1..=2000 {
            let x = i as f64 * 5e-3;
            let g = self.gamma(x);
            if g.abs() > 1.0 || g != self.gamma(-x) {
                return Err(MotionError::InvalidParameter(format!("Γ not even/bounded at {x}")));
            }
            if x <= 1.0 && 1.0 - g < self.beta(x) * (1.0 - 1e-12) {
                return Err(MotionError::InvalidParameter(format!("1 - Γ < β at {x}")));
            }
        }
        let integral = adaptive_simpson(
            &|x: f64| {
                if x == 0.0 {
                    // x/β(x) extends continuously to 0 for the linear families.
                    let h = 1e-9;
                    return Ok::<f64, MotionError>(h / self.beta(h));
                }
                Ok(x / self.beta(x))
            },
            0.0,
            1.0,
            1e-10,
        )?;
        if integral.is_finite() {
            Ok(integral)
        } else {
            Err(MotionError::InvalidParameter("∫ x/β(x) dx diverges".into()))
        }
    }

    /// Fill `out` with one Euler increment of all clusters: a centred
    /// Gaussian vector with covariance `Γ(x_i - x_j) dt`.
    pub(crate) fn correlated_increments<R: Rng + ?Sized>(
        &self,
        positions: &[f64],
        dt: f64,
        rng: &mut R,
        out: &mut Vec<f64>,
    ) -> Result<(), MotionError> {
        let n = positions.len();
        out.clear();
        let sd = dt.sqrt();
        if n == 1 {
            let z: f64 = rng.sample(StandardNormal);
            out.push(sd * z);
            return Ok(());
        }
        let cov = DMatrix::from_fn(n, n, |i, j| self.gamma(positions[i] - positions[j]));
        let chol = match Cholesky::new(cov.clone()) {
            Some(c) => c,
            None => {
                let jittered = cov + DMatrix::identity(n, n) * HARRIS_JITTER;
                Cholesky::new(jittered).ok_or(MotionError::CovarianceNotFactorizable { clusters: n })?
            }
        };
        let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let incr = chol.l() * z;
        out.extend(incr.iter().map(|v| v * sd));
        Ok(())
    }
}
