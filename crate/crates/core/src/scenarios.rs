//! Random valid flows, cylinders and points for property suites.

use std::f64::consts::TAU;

use rand::seq::IndexedRandom;
use rand::Rng;

use crate::base::{BaseSet, BaseSystem, StateSpace};
use crate::catalog::GOLDEN_MEAN;
use crate::error::Result;
use crate::recurrence::CylinderSet;
use crate::roof::{Roof, RoofIntegral};
use crate::suspension::{FlowPoint, SuspensionFlow};

/// One of four flow families with randomized roofs: constant roof over the
/// doubling map, two-level roof over a biased Bernoulli map, a cosine roof
/// over the golden rotation, and a random roof over a cycle of up to six
/// states.
pub fn random_flow<R: Rng + ?Sized>(rng: &mut R) -> SuspensionFlow {
    let built = match rng.random_range(0..4) {
        0 => SuspensionFlow::with_exact_sup(
            BaseSystem::doubling(),
            Roof::constant(rng.random_range(0.5..2.0)).expect("positive"),
        ),
        1 => SuspensionFlow::with_exact_sup(
            BaseSystem::expanding(vec![0.3, 0.7]).expect("valid weights"),
            Roof::piecewise(
                vec![
                    (BaseSet::interval(0.0, 0.5).expect("ordered"), rng.random_range(0.5..2.0)),
                    (BaseSet::interval(0.5, 1.0).expect("ordered"), rng.random_range(0.5..2.0)),
                ],
                0.5,
            )
            .expect("values above bound"),
        ),
        2 => {
            let mean = rng.random_range(1.5..3.0);
            let amp = rng.random_range(0.0..mean - 1.0);
            SuspensionFlow::new(
                BaseSystem::rotation(GOLDEN_MEAN).expect("finite angle"),
                Roof::closed_form(
                    move |x| mean + amp * (TAU * x).cos(),
                    mean - amp,
                    RoofIntegral::Analytic(mean),
                )
                .expect("valid bound"),
                mean + amp,
            )
        }
        _ => {
            let n = rng.random_range(1..=6);
            let roof: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..3.0)).collect();
            SuspensionFlow::with_exact_sup(BaseSystem::cycle(n), Roof::per_state(&roof).expect("positive"))
        }
    };
    built.expect("random families are valid by construction")
}

/// A cylinder with `mu(I)` bounded below and `t2` at most 90% of the roof's
/// known lower bound over `I`.
pub fn random_cylinder<R: Rng + ?Sized>(rng: &mut R, flow: &SuspensionFlow) -> Result<CylinderSet> {
    let base = match flow.base().state_space() {
        StateSpace::Finite(n) => {
            let states: Vec<usize> = (0..n).collect();
            let k = rng.random_range(1..=n);
            let mut chosen: Vec<usize> = states.choose_multiple(rng, k).copied().collect();
            chosen.sort_unstable();
            BaseSet::states(chosen)
        }
        StateSpace::Continuous => {
            let len = rng.random_range(0.2..0.6);
            let start = rng.random_range(0.0..1.0 - len);
            BaseSet::interval(start, start + len)?
        }
    };
    let roof = flow.roof();
    let bound = roof.exact_inf_over(&base)?.unwrap_or(roof.lower_bound());
    let t2 = rng.random_range(0.3..0.9) * bound;
    let t1 = rng.random_range(0.0..0.5) * t2;
    CylinderSet::new(base, t1, t2)
}

/// A point drawn from the flow measure.
pub fn random_point<R: Rng + ?Sized>(rng: &mut R, flow: &SuspensionFlow) -> Result<FlowPoint> {
    flow.sampler().sample(rng)
}
