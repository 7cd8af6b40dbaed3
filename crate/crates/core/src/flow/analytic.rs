//! The deterministic flow `f(s, x; t) = ⌊x⌋ + g(t - s + g⁻¹(x - ⌊x⌋))` with
//! `g(u) = u / (1 + u)`, evaluated in exact rational arithmetic.
//!
//! Every trajectory starts from an integer and creeps towards the next one
//! without reaching it, so the range at every time is `ℝ \ ℤ` and the fresh
//! points are the integers.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};

use super::{FlowBackend, FlowError, Witness};

#[derive(Clone, Debug, PartialEq)]
pub struct AnalyticFlow {
    /// Integer window `[lo, hi]` used to materialise the range.
    pub window: (i64, i64),
    /// The range is represented by the multiples of `1 / denominator`.
    pub denominator: u32,
}

impl Default for AnalyticFlow {
    fn default() -> Self {
        Self {
            window: (-2, 2),
            denominator: 64,
        }
    }
}

fn g(u: &BigRational) -> BigRational {
    u / (BigRational::one() + u)
}

fn g_inv(v: &BigRational) -> BigRational {
    v / (BigRational::one() - v)
}

fn rat(n: i64, d: i64) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

impl AnalyticFlow {
    pub fn lattice_step(&self) -> BigRational {
        rat(1, self.denominator as i64)
    }

    /// Trajectory point `p` time units before `(s, x)`, if the trajectory
    /// through `(s, x)` already existed then.
    fn back(&self, s: &BigRational, x: &BigRational, p: &BigRational) -> Option<BigRational> {
        let n = x.floor();
        let age = g_inv(&(x - &n));
        let before = &age - (s - p);
        (!before.is_negative()).then(|| n + g(&before))
    }
}

impl FlowBackend for AnalyticFlow {
    type Value = BigRational;

    fn eval_traced(
        &self,
        s: &BigRational,
        x: &BigRational,
        t: &BigRational,
    ) -> Result<(BigRational, Option<u64>), FlowError> {
        if s > t {
            return Err(FlowError::InvalidQuery("s after t".into()));
        }
        let n = x.floor();
        let v = g(&(t - s + g_inv(&(x - &n))));
        Ok((n + v, None))
    }

    fn range_at(&self, _s: &BigRational) -> Result<Vec<BigRational>, FlowError> {
        let d = self.denominator as i64;
        let (lo, hi) = self.window;
        Ok((lo * d..=hi * d).filter(|k| k % d != 0).map(|k| rat(k, d)).collect())
    }

    fn is_fresh(&self, _s: &BigRational, x: &BigRational) -> Result<bool, FlowError> {
        Ok(x.is_integer())
    }

    fn fresh_witness(
        &self,
        s: &BigRational,
        x: &BigRational,
        _t: &BigRational,
    ) -> Result<Option<Witness<BigRational>>, FlowError> {
        // Follow the trajectory through (s, x) back to its integer origin.
        let n = x.floor();
        let age = g_inv(&(x - &n));
        Ok(Some(Witness { p: s - age, u: n }))
    }

    fn lt_witness(
        &self,
        s: &BigRational,
        x: &BigRational,
        t: &BigRational,
        c: Option<&BigRational>,
    ) -> Result<Option<Witness<BigRational>>, FlowError> {
        let value = self.eval(s, x, t)?;
        if let Some(c) = c {
            if &value >= c {
                return Ok(None);
            }
        }
        // Range point z >= x at s whose value at t is below c: x itself when
        // x is in the range, otherwise a point slightly above the integer.
        let mut z = x.clone();
        if x.is_integer() {
            let mut e = rat(1, 2);
            loop {
                let cand = x + &e;
                let below = match c {
                    Some(c) => &self.eval(s, &cand, t)? < c,
                    None => true,
                };
                if below {
                    z = cand;
                    break;
                }
                e /= BigInt::from(2);
            }
        }
        // Step back along z's trajectory by half its age (capped at one).
        let age = g_inv(&(&z - z.floor()));
        let mut back = age / BigInt::from(2);
        if back > BigRational::one() {
            back = BigRational::one();
        }
        debug_assert!(!back.is_zero());
        let p = s - &back;
        let u = self.back(s, &z, &p).expect("inside the trajectory's lifetime");
        Ok(Some(Witness { p, u }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integer_translation_symmetry() {
        let f = AnalyticFlow::default();
        for (s, x, t) in [(rat(0, 1), rat(3, 10), rat(2, 1)), (rat(-1, 3), rat(-5, 4), rat(1, 7))] {
            let a = f.eval(&s, &(&x + BigRational::one()), &t).unwrap();
            let b = f.eval(&s, &x, &t).unwrap() + BigRational::one();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn range_excludes_integers() {
        let f = AnalyticFlow { window: (0, 2), denominator: 4 };
        let r = f.range_at(&rat(0, 1)).unwrap();
        assert_eq!(r.len(), 6);
        assert!(r.iter().all(|v| !v.is_integer()));
        assert!(f.is_fresh(&rat(0, 1), &rat(1, 1)).unwrap());
        assert!(!f.is_fresh(&rat(0, 1), &rat(1, 4)).unwrap());
    }

    #[test]
    fn witnesses_hold() {
        let f = AnalyticFlow::default();
        let (s, t) = (rat(1, 1), rat(3, 1));
        for x in [rat(2, 5), rat(1, 1), rat(-3, 2)] {
            let v = f.eval(&s, &x, &t).unwrap();
            let w = f.fresh_witness(&s, &x, &t).unwrap().unwrap();
            assert!(w.u.is_integer());
            assert!(w.p <= s);
            assert_eq!(f.eval(&w.p, &w.u, &t).unwrap(), v);

            let c = &v + BigRational::one();
            let w = f.lt_witness(&s, &x, &t, Some(&c)).unwrap().unwrap();
            assert!(w.p < s);
            assert!(f.eval(&w.p, &w.u, &s).unwrap() >= x);
            assert!(f.eval(&w.p, &w.u, &t).unwrap() < c);
            assert!(f.lt_witness(&s, &x, &t, Some(&v)).unwrap().is_none());
            assert!(f.lt_witness(&s, &x, &t, None).unwrap().is_some());
        }
    }
}
