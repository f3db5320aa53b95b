//! Mean-return-time identities: closed-form right-hand sides, Monte Carlo
//! estimators of the left-hand sides and their comparison.
//!
//! Notation: `mu(I)` is the base measure of the projection, `W = int_I h dmu`
//! the weight of a graph set, `m = t2 - t1` the cylinder height and
//! `T = int tau dmu` the roof integral.

use crate::base::{BaseSet, Integration, Point, StateSpace, DEFAULT_MAX_STEPS};
use crate::error::{Error, Result};
use crate::func::PointFn;
use crate::mc::{self, CoMoments, Estimate, McConfig, Moments, Tally};
use crate::recurrence::{CylinderSet, FlowSet, GraphSet};
use crate::sum::CompensatedSum;
use crate::suspension::SuspensionFlow;

/// Relative tolerance for identities that hold algebraically.
pub const ALGEBRAIC_TOLERANCE: f64 = 1e-12;

/// Closed forms, generic over the number type so the rational oracle and the
/// floating-point evaluators share one definition.
pub mod closed_form {
    use num_traits::Num;

    fn two<T: Num>() -> T {
        T::one() + T::one()
    }

    /// Mean escape time of a cylinder: `m/2`.
    pub fn mean_escape<T: Num + Clone>(t1: T, t2: T) -> T {
        (t2 - t1) / two()
    }

    /// `mu_bar(I x [t1,t2)) = mu(I) m / T`.
    pub fn cylinder_measure<T: Num + Clone>(mass: T, integral: T, t1: T, t2: T) -> T {
        mass * (t2 - t1) / integral
    }

    /// Mean return as mean escape plus `(1 - mu_bar(A)) T / mu(I)`.
    pub fn cylinder_escape_form<T: Num + Clone>(mass: T, integral: T, t1: T, t2: T) -> T {
        let bar = cylinder_measure(mass.clone(), integral.clone(), t1.clone(), t2.clone());
        mean_escape(t1, t2) + (T::one() - bar) * integral / mass
    }

    /// Mean return as `m/2 + (1/mu(I)) int (tau - m chi_I) dmu`.
    pub fn cylinder_integral_form<T: Num + Clone>(mass: T, integral: T, t1: T, t2: T) -> T {
        let m = t2 - t1;
        m.clone() / two() + (integral - m * mass.clone()) / mass
    }

    /// Unnormalized identity: `mu_bar(A) m/2 + m (1 - mu_bar(A))`.
    pub fn unnormalized_rhs<T: Num + Clone>(bar: T, t1: T, t2: T) -> T {
        let m = t2 - t1;
        bar.clone() * m.clone() / two() + m * (T::one() - bar)
    }

    /// Mean roof sum to the first return on a cross-section: `T / mu(I)`.
    pub fn cross_section<T: Num>(integral: T, mass: T) -> T {
        integral / mass
    }

    /// Constant roof `c`, full-height cylinder: `(c/mu(I)) (1 - mu(I)/2)`.
    pub fn constant_roof<T: Num + Clone>(c: T, mass: T) -> T {
        c / mass.clone() * (T::one() - mass / two())
    }

    /// Graph set with `h2 = h1 + c`: `c/2 + (T - c mu(I))/mu(I)`.
    pub fn parallel_sides<T: Num + Clone>(c: T, mass: T, integral: T) -> T {
        c.clone() / two() + (integral - c * mass.clone()) / mass
    }

    /// Limit of the exit-region estimator as the exit width shrinks.
    pub fn exit_limit_target<T: Num>(bar: T) -> T {
        T::one() - bar
    }

    /// Exact offset of the exit-region estimator at width `s`:
    /// `s mu(I) / (2 T)`.
    pub fn exit_limit_offset<T: Num + Clone>(s: T, mass: T, integral: T) -> T {
        s * mass / (two::<T>() * integral)
    }
}

/// One compared quantity: a Monte Carlo left-hand side against a closed form.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateReport {
    pub quantity: String,
    pub mc_estimate: f64,
    pub mc_stderr: f64,
    pub analytic_value: f64,
    /// Nonzero when the closed form itself contains estimated integrals.
    pub analytic_stderr: f64,
    pub n_samples: u64,
    pub discarded: u64,
    pub z_score: f64,
}

impl EstimateReport {
    pub fn new(quantity: impl Into<String>, mc: Estimate, analytic: Estimate) -> Self {
        let se = mc.stderr.hypot(analytic.stderr);
        let diff = mc.mean - analytic.mean;
        let z_score = if se > 0.0 {
            diff / se
        } else if relative_gap(mc.mean, analytic.mean) <= ALGEBRAIC_TOLERANCE {
            0.0
        } else {
            diff.signum() * f64::INFINITY
        };
        Self {
            quantity: quantity.into(),
            mc_estimate: mc.mean,
            mc_stderr: mc.stderr,
            analytic_value: analytic.mean,
            analytic_stderr: analytic.stderr,
            n_samples: mc.n,
            discarded: mc.discarded,
            z_score,
        }
    }

    pub fn combined_stderr(&self) -> f64 {
        self.mc_stderr.hypot(self.analytic_stderr)
    }

    /// Fewer than one in a thousand draws discarded.
    pub fn is_valid(&self) -> bool {
        let drawn = self.n_samples + self.discarded;
        drawn == 0 || (self.discarded as f64) < 1e-3 * drawn as f64
    }

    /// Valid and within `threshold` combined standard errors.
    pub fn passes(&self, threshold: f64) -> bool {
        self.is_valid() && self.z_score.abs() <= threshold
    }
}

/// `|a - b| / max(|a|, |b|, 1)`.
pub fn relative_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

fn positive_mass(flow: &SuspensionFlow, set: &BaseSet) -> Result<f64> {
    let mass = flow.base().measure(set)?;
    if mass > 0.0 {
        Ok(mass)
    } else {
        Err(Error::EmptyProjection)
    }
}

/// Monte Carlo mean of the hitting time over `mu_bar` conditioned on `set`.
pub fn mc_mean_return(flow: &SuspensionFlow, set: &FlowSet, cfg: &McConfig) -> Result<Estimate> {
    set.validate(flow)?;
    positive_mass(flow, set.base())?;
    mc_mean_hitting(flow, set, set, cfg)
}

/// Mean hitting time of `target` for points drawn from `mu_bar` on `source`.
fn mc_mean_hitting(
    flow: &SuspensionFlow,
    source: &FlowSet,
    target: &FlowSet,
    cfg: &McConfig,
) -> Result<Estimate> {
    let proto = source.sampler(flow)?;
    let tally: Tally<Moments> = mc::run(
        cfg,
        || proto.clone(),
        |sampler, rng| {
            let p = sampler.sample(rng)?;
            target.hitting_time(flow, p, DEFAULT_MAX_STEPS)
        },
    )?;
    Ok(tally.acc.estimate(tally.discarded))
}

/// The two closed forms of the cylinder mean return: mean escape plus
/// `(1 - mu_bar(A)) T/mu(I)`, and `m/2 + (1/mu(I)) int (tau - m chi_I) dmu`.
pub fn cylinder_rhs_forms(flow: &SuspensionFlow, cyl: &CylinderSet) -> Result<(f64, f64)> {
    let mass = positive_mass(flow, cyl.base())?;
    let integral = flow.roof_integral();
    let (t1, t2) = (cyl.t1(), cyl.t2());
    Ok((
        closed_form::cylinder_escape_form(mass, integral, t1, t2),
        closed_form::cylinder_integral_form(mass, integral, t1, t2),
    ))
}

/// Mean return time to a cylinder.
///
/// Both closed forms must agree to [`ALGEBRAIC_TOLERANCE`]. If the roof
/// integral was estimated, its standard error is propagated (the value is
/// affine in `T` with slope `1/mu(I)`).
pub fn cylinder_rhs(flow: &SuspensionFlow, cyl: &CylinderSet) -> Result<Estimate> {
    let (first, second) = cylinder_rhs_forms(flow, cyl)?;
    if relative_gap(first, second) > ALGEBRAIC_TOLERANCE {
        return Err(Error::FormulaMismatch {
            quantity: "cylinder mean return",
            first,
            second,
        });
    }
    let mass = flow.base().measure(cyl.base())?;
    Ok(Estimate {
        mean: second,
        stderr: flow.normalizer().stderr / mass,
        ..Estimate::exact(0.0)
    })
}

pub fn mean_escape_cylinder(cyl: &CylinderSet) -> f64 {
    closed_form::mean_escape(cyl.t1(), cyl.t2())
}

/// Mean roof sum up to the first return to `base`, against `T/mu(I)`.
pub fn cross_section_mean_return(
    flow: &SuspensionFlow,
    base: &BaseSet,
    cfg: &McConfig,
) -> Result<EstimateReport> {
    let mass = positive_mass(flow, base)?;
    let sampler = flow.base().conditional_sampler(base)?;
    let est = mc::mean(cfg, |rng| {
        let x = sampler.sample(rng);
        flow.return_sum(x, DEFAULT_MAX_STEPS, |y| base.contains(y))
            .map(|(sum, _)| sum)
    })?;
    let norm = flow.normalizer();
    let analytic = Estimate {
        mean: closed_form::cross_section(norm.mean, mass),
        stderr: norm.stderr / mass,
        ..Estimate::exact(0.0)
    };
    Ok(EstimateReport::new("cross_section", est, analytic))
}

/// Ratio of the induced-map entropy `h/mu(I)` to the time-one flow entropy
/// `h/T`, from the analytic base entropy `h`.
pub fn entropy_quotient(flow: &SuspensionFlow, base: &BaseSet) -> Result<f64> {
    let h = flow.base().entropy();
    if !(h > 0.0) {
        return Err(Error::ZeroEntropyBase);
    }
    let mass = positive_mass(flow, base)?;
    let integral = flow.roof_integral();
    let induced = h / mass;
    let time_one = h / integral;
    let quotient = induced / time_one;
    let direct = closed_form::cross_section(integral, mass);
    if relative_gap(quotient, direct) > ALGEBRAIC_TOLERANCE {
        return Err(Error::FormulaMismatch {
            quantity: "entropy quotient",
            first: quotient,
            second: direct,
        });
    }
    Ok(quotient)
}

/// The graph-set mean return split into its three averaged terms, each
/// divided by `W = int_I h dmu`:
/// `int_I h^2/2`, `int_I h tau^n` and `int_I h (h1 o f^n - h2)`, where `n` is
/// the first return to the projection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraphRhs {
    pub escape: Estimate,
    pub roof_sum: Estimate,
    pub correction: Estimate,
    pub total: Estimate,
}

/// Closed form of the graph-set mean return.
///
/// Exact when the base is finite and both boundaries are piecewise constant.
/// Otherwise terms with a closed form (constant width or constant lower
/// boundary) are computed directly and the remainder by Monte Carlo over
/// `mu_I`, using `cfg`.
pub fn graph_rhs(flow: &SuspensionFlow, graph: &GraphSet, cfg: &McConfig) -> Result<GraphRhs> {
    let set = FlowSet::Graph(graph.clone());
    set.validate(flow)?;
    let mass = positive_mass(flow, graph.base())?;
    let finite = matches!(flow.base().state_space(), StateSpace::Finite(_));
    if finite && graph.lower().is_piecewise_constant() && graph.upper().is_piecewise_constant() {
        return graph_rhs_exact(flow, &set, graph);
    }

    let width = graph.width_fn();
    let weight = match &width {
        PointFn::Constant(c) => Some(c * mass),
        w if w.is_piecewise_constant() => Some(flow.base().exact_integral_over(graph.base(), w)?),
        _ => None,
    };
    if weight == Some(0.0) {
        return Err(Error::EmptyProjection);
    }
    let constant_width = match width {
        PointFn::Constant(c) => Some(c),
        _ => None,
    };
    let constant_lower = match graph.lower() {
        PointFn::Constant(c) => Some(*c),
        _ => None,
    };
    let norm = flow.normalizer();

    let sampler = flow.base().conditional_sampler(graph.base())?;
    let tally: Tally<[CoMoments; 4]> = mc::run(
        cfg,
        || (),
        |_, rng| {
            let x = sampler.sample(rng);
            let h = graph.width_at(x);
            if h <= 0.0 {
                return Ok([(0.0, 0.0); 4]);
            }
            let (sum, y) = flow.return_sum(x, DEFAULT_MAX_STEPS, |y| set.fiber_meets(y))?;
            let escape = h * h / 2.0;
            let roof = h * sum;
            let correction = h * (set.entry_height(y) - set.top(x));
            Ok([
                (escape, h),
                (roof, h),
                (correction, h),
                (escape + roof + correction, h),
            ])
        },
    )?;
    let ratio = |k: usize| match weight {
        Some(w) => tally.acc[k].ratio_exact_denominator(w / mass, tally.discarded),
        None => tally.acc[k].ratio(tally.discarded),
    };

    let escape = match (constant_width, weight) {
        (Some(c), _) => Estimate::exact(c / 2.0),
        (None, Some(w)) if width_is_finite_piecewise(graph) => {
            let sq = graph.width_fn().map_squared_half();
            Estimate::exact(flow.base().exact_integral_over(graph.base(), &sq)? / w)
        }
        _ => ratio(0),
    };
    // with constant width the weight cancels and the roof term is the
    // cross-section mean return
    let roof_sum = match constant_width {
        Some(_) => Estimate {
            mean: closed_form::cross_section(norm.mean, mass),
            stderr: norm.stderr / mass,
            ..Estimate::exact(0.0)
        },
        None => ratio(1),
    };
    let correction = match (constant_width, constant_lower) {
        (Some(c), Some(_)) => Estimate::exact(-c),
        _ => ratio(2),
    };
    let parts = [escape, roof_sum, correction];
    let sampled = parts.iter().filter(|e| e.n > 0).count();
    let total = if sampled == 3 {
        ratio(3)
    } else {
        // terms sharing draws are correlated; the joint ratio bounds their spread
        let stderr = if sampled <= 1 {
            parts.iter().map(|e| e.stderr * e.stderr).sum::<f64>().sqrt()
        } else {
            ratio(3).stderr
        };
        Estimate {
            mean: escape.mean + roof_sum.mean + correction.mean,
            stderr,
            n: if sampled > 0 { tally.acc[0].n } else { 0 },
            discarded: if sampled > 0 { tally.discarded } else { 0 },
        }
    };
    Ok(GraphRhs {
        escape,
        roof_sum,
        correction,
        total,
    })
}

fn width_is_finite_piecewise(graph: &GraphSet) -> bool {
    graph.width_fn().is_piecewise_constant()
}

trait SquaredHalf {
    fn map_squared_half(&self) -> PointFn;
}

impl SquaredHalf for PointFn {
    fn map_squared_half(&self) -> PointFn {
        match self {
            PointFn::Constant(c) => PointFn::Constant(c * c / 2.0),
            PointFn::Piecewise(parts) => {
                PointFn::Piecewise(parts.iter().map(|(s, v)| (s.clone(), v * v / 2.0)).collect())
            }
            other => {
                let f = other.clone();
                PointFn::Pointwise(std::sync::Arc::new(move |x| {
                    let v = f.eval(x);
                    v * v / 2.0
                }))
            }
        }
    }
}

fn graph_rhs_exact(flow: &SuspensionFlow, set: &FlowSet, graph: &GraphSet) -> Result<GraphRhs> {
    let BaseSet::States(states) = graph.base() else {
        return Err(Error::IncompatibleSet {
            kind: "permutation",
            set: "interval",
        });
    };
    let (_, weights) = flow
        .base()
        .permutation_table()
        .expect("finite state space comes from a permutation");
    let (mut escape, mut roof, mut correction, mut weight) = (
        CompensatedSum::new(),
        CompensatedSum::new(),
        CompensatedSum::new(),
        CompensatedSum::new(),
    );
    for &s in states {
        let x = Point::State(s);
        let h = graph.width_at(x);
        let w = weights[s];
        if h <= 0.0 || w == 0.0 {
            continue;
        }
        let (sum, y) = flow.return_sum(x, DEFAULT_MAX_STEPS, |y| set.fiber_meets(y))?;
        escape += w * h * h / 2.0;
        roof += w * h * sum;
        correction += w * h * (set.entry_height(y) - set.top(x));
        weight += w * h;
    }
    let weight = weight.value();
    if !(weight > 0.0) {
        return Err(Error::EmptyProjection);
    }
    let (e, r, c) = (
        escape.value() / weight,
        roof.value() / weight,
        correction.value() / weight,
    );
    Ok(GraphRhs {
        escape: Estimate::exact(e),
        roof_sum: Estimate::exact(r),
        correction: Estimate::exact(c),
        total: Estimate::exact(e + r + c),
    })
}

/// Closed form for parallel-sided graph sets with the telescoping term
/// `E_I[h1 o f^n - h1]` estimated separately (it should vanish).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParallelSides {
    pub value: Estimate,
    pub telescoping: Estimate,
}

impl ParallelSides {
    pub fn telescoping_vanishes(&self, threshold: f64) -> bool {
        if self.telescoping.stderr > 0.0 {
            self.telescoping.mean.abs() <= threshold * self.telescoping.stderr
        } else {
            self.telescoping.mean.abs() <= ALGEBRAIC_TOLERANCE
        }
    }
}

/// `c/2 + (T - c mu(I))/mu(I)` for a graph set with declared width `c`.
pub fn parallel_sides_value(flow: &SuspensionFlow, graph: &GraphSet) -> Result<Estimate> {
    let c = graph.constant_width().ok_or_else(|| {
        Error::InvalidFlowSet("parallel sides need a declared constant width".into())
    })?;
    let mass = positive_mass(flow, graph.base())?;
    let norm = flow.normalizer();
    Ok(Estimate {
        mean: closed_form::parallel_sides(c, mass, norm.mean),
        stderr: norm.stderr / mass,
        ..Estimate::exact(0.0)
    })
}

pub fn parallel_sides_rhs(
    flow: &SuspensionFlow,
    graph: &GraphSet,
    cfg: &McConfig,
) -> Result<ParallelSides> {
    let value = parallel_sides_value(flow, graph)?;
    let set = FlowSet::Graph(graph.clone());
    set.validate(flow)?;
    let telescoping = match graph.lower() {
        PointFn::Constant(_) => Estimate::exact(0.0),
        lower => {
            let sampler = flow.base().conditional_sampler(graph.base())?;
            mc::mean(cfg, |rng| {
                let x = sampler.sample(rng);
                let (_, y) = flow.return_sum(x, DEFAULT_MAX_STEPS, |y| set.fiber_meets(y))?;
                Ok(lower.eval(y) - lower.eval(x))
            })?
        }
    };
    Ok(ParallelSides { value, telescoping })
}

/// One point of the exit-region scan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExitLimitPoint {
    pub s: f64,
    /// `(1/s) mu_bar(A_s)` times the mean hitting time of `A` from `A_s`.
    pub estimate: Estimate,
    /// `1 - mu_bar(A)`.
    pub target: f64,
    /// Exact expected offset `s mu(I)/(2T)` of the estimator from the target.
    pub offset: f64,
}

impl ExitLimitPoint {
    /// Standard errors by which `|estimate - target|` exceeds the offset.
    pub fn excess_z(&self) -> f64 {
        let excess = ((self.estimate.mean - self.target).abs() - self.offset).max(0.0);
        if self.estimate.stderr > 0.0 {
            excess / self.estimate.stderr
        } else if excess <= ALGEBRAIC_TOLERANCE {
            0.0
        } else {
            f64::INFINITY
        }
    }

    pub fn passes(&self, threshold: f64) -> bool {
        let drawn = self.estimate.n + self.estimate.discarded;
        let valid = drawn == 0 || (self.estimate.discarded as f64) < 1e-3 * drawn as f64;
        valid && self.excess_z() <= threshold
    }
}

/// Exit-region estimates for each width in `widths`, each from an
/// independent stream derived from `cfg`.
pub fn exit_region_limit(
    flow: &SuspensionFlow,
    cyl: &CylinderSet,
    widths: &[f64],
    cfg: &McConfig,
) -> Result<Vec<ExitLimitPoint>> {
    let target_set = FlowSet::Cylinder(cyl.clone());
    target_set.validate(flow)?;
    let mass = positive_mass(flow, cyl.base())?;
    let integral = flow.roof_integral();
    let bar = closed_form::cylinder_measure(mass, integral, cyl.t1(), cyl.t2());
    widths
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            let region = FlowSet::Cylinder(cyl.exit_region(s)?);
            let mean = mc_mean_hitting(flow, &region, &target_set, &cfg.derive(i as u64))?;
            let region_mass = closed_form::cylinder_measure(mass, integral, cyl.t2() - s, cyl.t2());
            Ok(ExitLimitPoint {
                s,
                estimate: mean.scaled(region_mass / s),
                target: closed_form::exit_limit_target(bar),
                offset: closed_form::exit_limit_offset(s, mass, integral),
            })
        })
        .collect()
}

/// Unnormalized identity `int_A n_A dmu_bar = int_A e_A dmu_bar + m (1 - mu_bar(A))`
/// with the left side by Monte Carlo.
pub fn unnormalized_identity_check(
    flow: &SuspensionFlow,
    cyl: &CylinderSet,
    cfg: &McConfig,
) -> Result<EstimateReport> {
    let set = FlowSet::Cylinder(cyl.clone());
    let bar = flow.bar_mu(&set, &Integration::Exact)?.mean;
    let lhs = mc_mean_return(flow, &set, cfg)?.scaled(bar);
    let rhs = closed_form::unnormalized_rhs(bar, cyl.t1(), cyl.t2());
    Ok(EstimateReport::new("unnormalized_identity", lhs, Estimate::exact(rhs)))
}

/// Closed-form mean returns along a family of scaled roofs.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearityScan {
    /// `(scale, T_c, mean return)`.
    pub points: Vec<(f64, f64, f64)>,
    pub slope: f64,
    pub intercept: f64,
    pub max_residual: f64,
    /// `1/mu(I)`.
    pub expected_slope: f64,
    /// `-m/2`.
    pub expected_intercept: f64,
}

impl LinearityScan {
    pub fn passes(&self) -> bool {
        self.max_residual < 1e-12
            && relative_gap(self.slope, self.expected_slope) <= ALGEBRAIC_TOLERANCE
    }
}

pub fn linearity_scan(
    flow: &SuspensionFlow,
    cyl: &CylinderSet,
    scales: &[f64],
) -> Result<LinearityScan> {
    if scales.len() < 2 {
        return Err(Error::InvalidFlowSet("a linearity scan needs at least two scales".into()));
    }
    let mass = positive_mass(flow, cyl.base())?;
    let mut points = Vec::with_capacity(scales.len());
    for &c in scales {
        let scaled = flow.scaled(c)?;
        let set = FlowSet::Cylinder(cyl.clone());
        if set.validate(&scaled).is_err() {
            let roof = scaled.roof();
            let bound = roof.exact_inf_over(cyl.base())?.unwrap_or(roof.lower_bound());
            return Err(Error::ScaleRange {
                scale: c,
                t2: cyl.t2(),
                bound,
            });
        }
        points.push((c, scaled.roof_integral(), cylinder_rhs(&scaled, cyl)?.mean));
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.1).sum::<f64>() / n;
    let my = points.iter().map(|p| p.2).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.1 - mx) * (p.2 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.1 - mx).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(Error::InvalidFlowSet("scales must give distinct roof integrals".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let max_residual = points
        .iter()
        .map(|p| (p.2 - (intercept + slope * p.1)).abs())
        .fold(0.0, f64::max);
    Ok(LinearityScan {
        points,
        slope,
        intercept,
        max_residual,
        expected_slope: 1.0 / mass,
        expected_intercept: -(cyl.t2() - cyl.t1()) / 2.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::base::BaseSystem;
    use crate::roof::{Roof, RoofIntegral};

    fn doubling(c: f64) -> SuspensionFlow {
        SuspensionFlow::with_exact_sup(BaseSystem::doubling(), Roof::constant(c).unwrap()).unwrap()
    }

    fn three_cycle() -> SuspensionFlow {
        SuspensionFlow::with_exact_sup(BaseSystem::cycle(3), Roof::per_state(&[1.0, 2.0, 3.0]).unwrap())
            .unwrap()
    }

    fn half() -> BaseSet {
        BaseSet::interval(0.0, 0.5).unwrap()
    }

    fn cyl(base: BaseSet, t1: f64, t2: f64) -> CylinderSet {
        CylinderSet::new(base, t1, t2).unwrap()
    }

    fn sloped(width: f64) -> GraphSet {
        GraphSet::parallel(half(), PointFn::expr(|x| x / 2.0), width).unwrap()
    }

    #[test]
    fn generic_forms_agree_in_rationals() {
        use num_rational::Ratio;
        let r = |n: i64, d: i64| Ratio::new(n, d);
        let (mass, integral, t1, t2) = (r(1, 3), r(2, 1), r(0, 1), r(1, 2));
        assert_eq!(
            closed_form::cylinder_escape_form(mass, integral, t1, t2),
            r(23, 4)
        );
        assert_eq!(
            closed_form::cylinder_integral_form(mass, integral, t1, t2),
            r(23, 4)
        );
        assert_eq!(closed_form::unnormalized_rhs(r(1, 12), t1, t2), r(23, 48));
    }

    #[test]
    fn cylinder_rhs_examples() {
        let a = cyl(half(), 0.0, 1.0);
        assert_eq!(cylinder_rhs(&doubling(1.0), &a).unwrap().mean, 1.5);
        let b = cyl(BaseSet::prefix(2, vec![0, 0]).unwrap(), 0.5, 1.5);
        assert_eq!(cylinder_rhs(&doubling(2.0), &b).unwrap().mean, 7.5);
        let full = cyl(BaseSet::interval(0.0, 1.0).unwrap(), 0.0, 1.0);
        assert_eq!(cylinder_rhs(&doubling(1.0), &full).unwrap().mean, 0.5);
        let r = cylinder_rhs(&three_cycle(), &cyl(BaseSet::states([0]), 0.0, 0.5)).unwrap();
        assert!((r.mean - 5.75).abs() < 1e-14);
        assert_eq!(
            closed_form::constant_roof(1.0, 0.5),
            cylinder_rhs(&doubling(1.0), &a).unwrap().mean
        );
    }

    #[test]
    fn empty_projection() {
        let a = cyl(BaseSet::intervals(vec![]).unwrap(), 0.0, 0.5);
        assert_eq!(cylinder_rhs(&doubling(1.0), &a), Err(Error::EmptyProjection));
    }

    #[test]
    fn mean_escape_examples() {
        assert_eq!(mean_escape_cylinder(&cyl(half(), 0.0, 1.0)), 0.5);
        assert_eq!(mean_escape_cylinder(&cyl(half(), 0.25, 0.5)), 0.125);
        let narrow = mean_escape_cylinder(&cyl(half(), 0.3, 0.3 + 1e-6));
        assert!((narrow - 5e-7).abs() < 1e-15);
    }

    #[test]
    fn entropy_examples() {
        assert!((entropy_quotient(&doubling(1.0), &half()).unwrap() - 2.0).abs() < 1e-12);
        let pre = BaseSet::prefix(2, vec![0]).unwrap();
        assert!((entropy_quotient(&doubling(3.0), &pre).unwrap() - 6.0).abs() < 1e-12);
        let bern = SuspensionFlow::with_exact_sup(
            BaseSystem::expanding(vec![0.3, 0.7]).unwrap(),
            Roof::constant(1.5).unwrap(),
        )
        .unwrap();
        let i = BaseSet::interval(0.1, 0.6).unwrap();
        let mass = bern.base().measure(&i).unwrap();
        let q = entropy_quotient(&bern, &i).unwrap();
        assert!(relative_gap(q, 1.5 / mass) < 1e-12);
        assert_eq!(
            entropy_quotient(&three_cycle(), &BaseSet::states([0])),
            Err(Error::ZeroEntropyBase)
        );
    }

    #[test]
    fn mc_mean_return_examples() {
        let cfg = McConfig::new(200_000, 7).with_workers(4);
        let a: FlowSet = cyl(half(), 0.0, 1.0).into();
        let e = mc_mean_return(&doubling(1.0), &a, &cfg).unwrap();
        assert!((e.mean - 1.5).abs() < 4.0 * e.stderr, "{e:?}");
        let b: FlowSet = cyl(BaseSet::states([0]), 0.0, 0.5).into();
        let e = mc_mean_return(&three_cycle(), &b, &cfg).unwrap();
        assert!((e.mean - 5.75).abs() < 4.0 * e.stderr, "{e:?}");
        let full: FlowSet = cyl(BaseSet::interval(0.0, 1.0).unwrap(), 0.0, 1.0).into();
        let e = mc_mean_return(&doubling(1.0), &full, &cfg).unwrap();
        assert!((e.mean - 0.5).abs() < 4.0 * e.stderr, "{e:?}");
    }

    #[test]
    fn cross_section_examples() {
        let cfg = McConfig::new(100_000, 3).with_workers(2);
        let r = cross_section_mean_return(&doubling(1.0), &half(), &cfg).unwrap();
        assert_eq!(r.analytic_value, 2.0);
        assert!(r.passes(4.0), "{r:?}");
        let r = cross_section_mean_return(&three_cycle(), &BaseSet::states([0]), &cfg).unwrap();
        assert_eq!((r.mc_estimate, r.mc_stderr), (6.0, 0.0));
        assert_eq!(r.z_score, 0.0);
    }

    #[test]
    fn graph_rhs_reductions() {
        let cfg = McConfig::new(20_000, 1).with_workers(2);
        let flow = doubling(1.0);
        // constant boundaries reduce to the cylinder closed form
        let g = GraphSet::new(half(), PointFn::Constant(0.25), PointFn::Constant(0.75));
        let b = graph_rhs(&flow, &g, &cfg).unwrap();
        let a = cylinder_rhs(&flow, &cyl(half(), 0.25, 0.75)).unwrap();
        assert!(relative_gap(b.total.mean, a.mean) < 1e-12);
        assert!(b.total.stderr == 0.0);
        // exact finite evaluation
        let flow3 = three_cycle();
        let g = GraphSet::new(BaseSet::states([0]), PointFn::Constant(0.0), PointFn::Constant(0.5));
        let b = graph_rhs(&flow3, &g, &cfg).unwrap();
        assert!((b.total.mean - 5.75).abs() < 1e-14);
        // parallel sides, closed form against the sampled correction
        let p = parallel_sides_rhs(&flow, &sloped(0.25), &cfg).unwrap();
        assert_eq!(p.value.mean, 1.875);
        assert!(p.telescoping_vanishes(4.0), "{p:?}");
        let b = graph_rhs(&flow, &sloped(0.25), &cfg).unwrap();
        assert!((b.total.mean - 1.875).abs() < 4.0 * b.total.stderr, "{b:?}");
        assert!(b.correction.n > 0);
    }

    #[test]
    fn graph_rhs_general_boundaries() {
        let flow = doubling(1.0);
        let g = GraphSet::new(half(), PointFn::expr(|x| x / 2.0), PointFn::expr(|x| 0.5 + x));
        let cfg = McConfig::new(200_000, 9).with_workers(4);
        let b = graph_rhs(&flow, &g, &cfg).unwrap();
        let lhs = mc_mean_return(&flow, &g.clone().into(), &cfg.derive(1)).unwrap();
        let z = (b.total.mean - lhs.mean) / b.total.stderr.hypot(lhs.stderr);
        assert!(z.abs() < 4.0, "{b:?} vs {lhs:?}");
    }

    #[test]
    fn exit_limit_on_doubling() {
        let cfg = McConfig::new(100_000, 21).with_workers(4);
        let pts =
            exit_region_limit(&doubling(1.0), &cyl(half(), 0.0, 1.0), &[0.1, 0.01], &cfg).unwrap();
        for p in pts {
            assert_eq!(p.target, 0.5);
            assert!(p.passes(4.0), "{p:?}");
        }
    }

    #[test]
    fn exit_limit_full_width_unwinds_to_mean_return() {
        let flow = three_cycle();
        let a = cyl(BaseSet::states([0]), 0.0, 0.5);
        let cfg = McConfig::new(10_000, 2);
        let p = exit_region_limit(&flow, &a, &[0.5], &cfg).unwrap()[0];
        let direct = mc_mean_return(&flow, &a.clone().into(), &cfg.derive(0)).unwrap();
        assert!(relative_gap(p.estimate.mean, direct.mean / 12.0 / 0.5) < 1e-12);
        assert!((p.target - 11.0 / 12.0).abs() < 1e-15);
    }

    #[test]
    fn unnormalized_identity() {
        let cfg = McConfig::new(50_000, 4).with_workers(2);
        let r = unnormalized_identity_check(&doubling(1.0), &cyl(half(), 0.0, 1.0), &cfg).unwrap();
        assert_eq!(r.analytic_value, 0.75);
        assert!(r.passes(4.0), "{r:?}");
        let r = unnormalized_identity_check(&three_cycle(), &cyl(BaseSet::states([0]), 0.0, 0.5), &cfg)
            .unwrap();
        assert!((r.analytic_value - 23.0 / 48.0).abs() < 1e-15);
        assert!(r.passes(4.0), "{r:?}");
    }

    #[test]
    fn linearity_examples() {
        let scan =
            linearity_scan(&doubling(1.0), &cyl(half(), 0.0, 0.5), &[1.0, 2.0, 3.0]).unwrap();
        assert!(scan.passes(), "{scan:?}");
        assert!((scan.slope - 2.0).abs() < 1e-12);
        assert!((scan.intercept - scan.expected_intercept).abs() < 1e-12);
        let err = linearity_scan(&doubling(1.0), &cyl(half(), 0.0, 0.8), &[1.0, 0.5]);
        assert!(matches!(err, Err(Error::ScaleRange { scale, .. }) if scale == 0.5));
        let rot = SuspensionFlow::new(
            BaseSystem::rotation(0.6180339887).unwrap(),
            Roof::closed_form(
                |x| 2.0 + (2.0 * std::f64::consts::PI * x).cos(),
                1.0,
                RoofIntegral::Analytic(2.0),
            )
            .unwrap(),
            3.0,
        )
        .unwrap();
        let scan = linearity_scan(
            &rot,
            &cyl(BaseSet::interval(0.0, 0.3).unwrap(), 0.0, 0.5),
            &[1.0, 1.5, 2.0, 3.0],
        )
        .unwrap();
        assert!(scan.passes(), "{scan:?}");
        assert!(relative_gap(scan.slope, 1.0 / 0.3) < 1e-12);
    }
}
