//! Roof functions bounded away from zero.

use crate::base::{BaseSet, BaseSystem, Integration, Point};
use crate::error::{Error, Result};
use crate::func::PointFn;
use crate::mc::{Estimate, McConfig};
use crate::sum::CompensatedSum;

/// Where the normalizer `int tau dmu` comes from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RoofIntegral {
    /// Exact partition sum (constant and piecewise-constant roofs).
    Exact,
    /// A value declared alongside a closed-form roof.
    Analytic(f64),
    /// Explicit opt-in to a Monte Carlo estimate.
    MonteCarlo(McConfig),
}

#[derive(Debug, Clone)]
pub struct Roof {
    form: PointFn,
    lower_bound: f64,
    integral: RoofIntegral,
}

impl Roof {
    pub fn constant(c: f64) -> Result<Self> {
        if !(c > 0.0) || !c.is_finite() {
            return Err(Error::InvalidRoof(format!("constant roof {c} must be positive")));
        }
        Ok(Self {
            form: PointFn::Constant(c),
            lower_bound: c,
            integral: RoofIntegral::Exact,
        })
    }

    pub fn piecewise(parts: Vec<(BaseSet, f64)>, lower_bound: f64) -> Result<Self> {
        check_lower_bound(lower_bound)?;
        if parts.is_empty() {
            return Err(Error::InvalidRoof("empty partition".into()));
        }
        if let Some((set, v)) = parts.iter().find(|(_, v)| !(*v >= lower_bound)) {
            return Err(Error::InvalidRoof(format!(
                "value {v} on {set} is below the lower bound {lower_bound}"
            )));
        }
        Ok(Self {
            form: PointFn::Piecewise(parts),
            lower_bound,
            integral: RoofIntegral::Exact,
        })
    }

    /// One roof value per finite state; the lower bound is their minimum.
    pub fn per_state(values: &[f64]) -> Result<Self> {
        let lb = values.iter().copied().fold(f64::INFINITY, f64::min);
        let parts = values
            .iter()
            .enumerate()
            .map(|(i, &v)| (BaseSet::states([i]), v))
            .collect();
        Self::piecewise(parts, lb)
    }

    /// A closed-form roof. Its integral must be declared or estimated
    /// explicitly; `RoofIntegral::Exact` is rejected.
    pub fn closed_form<F>(f: F, lower_bound: f64, integral: RoofIntegral) -> Result<Self>
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        Self::from_fn(PointFn::expr(f), lower_bound, integral)
    }

    pub fn from_fn(form: PointFn, lower_bound: f64, integral: RoofIntegral) -> Result<Self> {
        check_lower_bound(lower_bound)?;
        match (&form, integral) {
            (PointFn::Expr(_) | PointFn::Pointwise(_), RoofIntegral::Exact) => Err(Error::InvalidRoof(
                "closed-form roofs must declare an analytic integral or opt into Monte Carlo".into(),
            )),
            (_, RoofIntegral::Analytic(v)) if !(v >= lower_bound) => Err(Error::InvalidRoof(
                format!("declared integral {v} is below the lower bound {lower_bound}"),
            )),
            (PointFn::Constant(c), _) if !(*c >= lower_bound) => Err(Error::InvalidRoof(format!(
                "constant {c} is below the lower bound {lower_bound}"
            ))),
            _ => Ok(Self {
                form,
                lower_bound,
                integral,
            }),
        }
    }

    pub fn form(&self) -> &PointFn {
        &self.form
    }

    pub fn lower_bound(&self) -> f64 {
        self.lower_bound
    }

    pub fn integral_spec(&self) -> RoofIntegral {
        self.integral
    }

    /// `tau(x)`, checked against the declared lower bound.
    #[inline]
    pub fn eval(&self, x: Point) -> Result<f64> {
        let v = self.form.eval(x);
        if v >= self.lower_bound {
            Ok(v)
        } else {
            Err(Error::RoofBoundViolation {
                value: v,
                lower_bound: self.lower_bound,
                at: x.coord(),
            })
        }
    }

    /// `int tau dmu`, by partition sum, declared value or Monte Carlo.
    pub fn integral(&self, sys: &BaseSystem) -> Result<Estimate> {
        match self.integral {
            RoofIntegral::Exact => sys.integrate(&self.form, &Integration::Exact),
            RoofIntegral::Analytic(v) => Ok(Estimate::exact(v)),
            RoofIntegral::MonteCarlo(cfg) => {
                let est = sys.integrate(&self.form, &Integration::MonteCarlo(cfg))?;
                if !(est.mean >= self.lower_bound) {
                    return Err(Error::InvalidRoof(format!(
                        "estimated integral {} is below the lower bound",
                        est.mean
                    )));
                }
                Ok(est)
            }
        }
    }

    /// `tau^n(x) = tau(x) + tau(f x) + ... + tau(f^{n-1} x)`, compensated.
    pub fn birkhoff_sum(&self, sys: &BaseSystem, x: Point, n: u64) -> Result<f64> {
        let mut acc = CompensatedSum::new();
        let mut y = x;
        for _ in 0..n {
            acc += self.eval(y)?;
            y = sys.apply(y);
        }
        Ok(acc.value())
    }

    /// Infimum of the roof over `set`, when it is known exactly.
    pub fn exact_inf_over(&self, set: &BaseSet) -> Result<Option<f64>> {
        Ok(match &self.form {
            PointFn::Constant(c) => Some(*c),
            PointFn::Piecewise(parts) => {
                let mut inf = f64::INFINITY;
                for (part, v) in parts {
                    if !part.intersect(set)?.is_empty() {
                        inf = inf.min(*v);
                    }
                }
                Some(inf)
            }
            PointFn::Expr(_) | PointFn::Pointwise(_) => None,
        })
    }

    /// Supremum of the roof, when it is known exactly.
    pub fn exact_sup(&self) -> Option<f64> {
        self.form
            .values()
            .map(|v| v.into_iter().fold(f64::NEG_INFINITY, f64::max))
    }

    /// The roof `c * tau`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        if !(c > 0.0) || !c.is_finite() {
            return Err(Error::InvalidRoof(format!("scale {c} must be positive")));
        }
        let integral = match self.integral {
            RoofIntegral::Analytic(v) => RoofIntegral::Analytic(c * v),
            other => other,
        };
        Ok(Self {
            form: self.form.scaled(c),
            lower_bound: c * self.lower_bound,
            integral,
        })
    }
}

fn check_lower_bound(lb: f64) -> Result<()> {
    if lb > 0.0 && lb.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidRoof(format!("lower bound {lb} must be positive")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::base::BaseSystem;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn eval_examples() {
        let one = Roof::constant(1.0).unwrap();
        assert_eq!(one.eval(Point::Real(0.77)).unwrap(), 1.0);
        let pw = Roof::per_state(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(pw.eval(Point::State(1)).unwrap(), 2.0);
        let cos = Roof::closed_form(
            |x| 2.0 + (2.0 * std::f64::consts::PI * x).cos(),
            1.0,
            RoofIntegral::Analytic(2.0),
        )
        .unwrap();
        assert_eq!(cos.eval(Point::Real(0.0)).unwrap(), 3.0);
    }

    #[test]
    fn bound_violations() {
        let bad = Roof::closed_form(|x| x, 0.5, RoofIntegral::Analytic(0.5)).unwrap();
        assert!(matches!(
            bad.eval(Point::Real(0.1)),
            Err(Error::RoofBoundViolation { .. })
        ));
        assert!(Roof::constant(-1.0).is_err());
        assert!(Roof::closed_form(|_| 1.0, -1.0, RoofIntegral::Analytic(1.0)).is_err());
        assert!(Roof::closed_form(|_| 1.0, 1.0, RoofIntegral::Exact).is_err());
    }

    #[test]
    fn integral_examples() {
        let dbl = BaseSystem::doubling();
        assert_eq!(Roof::constant(1.0).unwrap().integral(&dbl).unwrap().mean, 1.0);
        let c3 = BaseSystem::cycle(3);
        let pw = Roof::per_state(&[1.0, 2.0, 3.0]).unwrap();
        assert!((pw.integral(&c3).unwrap().mean - 2.0).abs() < 1e-15);

        let rot = BaseSystem::rotation(0.6180339887).unwrap();
        let f = |x: f64| 2.0 + (2.0 * std::f64::consts::PI * x).cos();
        let declared = Roof::closed_form(f, 1.0, RoofIntegral::Analytic(2.0)).unwrap();
        let cfg = McConfig::new(1_000_000, 5).with_workers(4);
        let mc = Roof::closed_form(f, 1.0, RoofIntegral::MonteCarlo(cfg)).unwrap();
        let est = mc.integral(&rot).unwrap();
        let exact = declared.integral(&rot).unwrap().mean;
        assert!((est.mean - exact).abs() < 4.0 * est.stderr);
    }

    #[test]
    fn birkhoff_examples() {
        let c3 = BaseSystem::cycle(3);
        let pw = Roof::per_state(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(pw.birkhoff_sum(&c3, Point::State(0), 0).unwrap(), 0.0);
        assert_eq!(pw.birkhoff_sum(&c3, Point::State(0), 3).unwrap(), 6.0);
        let one = Roof::constant(1.0).unwrap();
        let dbl = BaseSystem::doubling();
        assert_eq!(one.birkhoff_sum(&dbl, Point::Real(0.3), 7).unwrap(), 7.0);
    }

    #[test]
    fn compensated_and_naive_sums_agree_on_random_roofs() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for n in [1_000usize, 100_000, 1_000_000] {
            let vals: Vec<f64> = (0..n).map(|_| 1.0 + 2.0 * rng.random::<f64>()).collect();
            let naive: f64 = vals.iter().sum();
            let comp = crate::sum::compensated_sum(vals.iter().copied());
            let ulp = f64::EPSILON * comp;
            assert!((naive - comp).abs() <= 1e3 * ulp, "n={n}");
        }
    }

    #[test]
    fn inf_over_parts() {
        let pw = Roof::per_state(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(pw.exact_inf_over(&BaseSet::states([1, 2])).unwrap(), Some(2.0));
        assert_eq!(pw.exact_sup(), Some(3.0));
    }

    proptest! {
        #[test]
        fn constant_roof_sums_are_exact(c in 0.5f64..8.0, n in 0u64..2000) {
            let roof = Roof::constant(c).unwrap();
            let dbl = BaseSystem::doubling();
            let s = roof.birkhoff_sum(&dbl, Point::Real(0.123), n).unwrap();
            prop_assert_eq!(s, c * n as f64);
        }
    }
}
