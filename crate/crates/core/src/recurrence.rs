//! Flow sets, escape times and hitting times.
//!
//! Hitting times are computed by reducing to first entries of the base orbit:
//! a flow orbit can only meet a set over a base point of its projection `I`, so
//! the hitting time of `(x,t)` is `tau^j(x) - t + entry(f^j x)` where `j` is the
//! first admissible visit to `I` and `entry` is the set's lower boundary over
//! that fiber. No time stepping is involved.

use std::fmt;

use rand::{Rng, SeedableRng};

use crate::base::{BaseSet, Integration, Point};
use crate::error::{Error, Result};
use crate::func::PointFn;
use crate::mc::{McConfig, McRng};
use crate::suspension::{FlowPoint, SuspensionFlow, SAMPLER_WINDOW};
use crate::sum::CompensatedSum;

const SPOT_CHECK_POINTS: usize = 1000;
const SPOT_CHECK_SEED: u64 = 0x5EED_CAFE;

/// `I x [t1, t2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CylinderSet {
    base: BaseSet,
    t1: f64,
    t2: f64,
}

impl CylinderSet {
    pub fn new(base: BaseSet, t1: f64, t2: f64) -> Result<Self> {
        if !(0.0 <= t1 && t1 < t2 && t2.is_finite()) {
            return Err(Error::InvalidFlowSet(format!(
                "cylinder heights need 0 <= t1 < t2, got [{t1}, {t2})"
            )));
        }
        Ok(Self { base, t1, t2 })
    }

    pub fn base(&self) -> &BaseSet {
        &self.base
    }

    pub fn t1(&self) -> f64 {
        self.t1
    }

    pub fn t2(&self) -> f64 {
        self.t2
    }

    /// `m([t1, t2])`.
    pub fn height(&self) -> f64 {
        self.t2 - self.t1
    }

    /// Exit region `A_s = I x [t2 - s, t2)` of points leaving within time `s`.
    pub fn exit_region(&self, s: f64) -> Result<CylinderSet> {
        let max = self.height();
        if !(s > 0.0 && s <= max) {
            return Err(Error::InvalidExitWidth { s, max });
        }
        let t1 = if s == max { self.t1 } else { self.t2 - s };
        Ok(Self {
            base: self.base.clone(),
            t1,
            t2: self.t2,
        })
    }
}

/// `{(x,t) : x in I, h1(x) <= t < h2(x)}`.
#[derive(Debug, Clone)]
pub struct GraphSet {
    base: BaseSet,
    lower: PointFn,
    upper: PointFn,
    width: Option<f64>,
    width_bound: Option<f64>,
}

impl GraphSet {
    pub fn new(base: BaseSet, lower: PointFn, upper: PointFn) -> Self {
        Self {
            base,
            lower,
            upper,
            width: None,
            width_bound: None,
        }
    }

    /// Parallel sides: `h2 = h1 + c`.
    pub fn parallel(base: BaseSet, lower: PointFn, width: f64) -> Result<Self> {
        if !(width > 0.0) || !width.is_finite() {
            return Err(Error::InvalidFlowSet(format!("width {width} must be positive")));
        }
        Ok(Self {
            upper: lower.shifted(width),
            base,
            lower,
            width: Some(width),
            width_bound: Some(width),
        })
    }

    /// Declares an upper bound on `h2 - h1` for the weighted sampler.
    pub fn with_width_bound(mut self, bound: f64) -> Self {
        self.width_bound = Some(bound);
        self
    }

    pub fn base(&self) -> &BaseSet {
        &self.base
    }

    pub fn lower(&self) -> &PointFn {
        &self.lower
    }

    pub fn upper(&self) -> &PointFn {
        &self.upper
    }

    /// The declared constant width, for parallel-sided sets.
    pub fn constant_width(&self) -> Option<f64> {
        self.width
    }

    #[inline]
    pub fn width_at(&self, x: Point) -> f64 {
        match self.width {
            Some(c) => c,
            None => self.upper.eval(x) - self.lower.eval(x),
        }
    }

    /// `h = h2 - h1` as a function, when both boundaries are piecewise constant.
    pub fn width_fn(&self) -> PointFn {
        if let Some(c) = self.width {
            return PointFn::Constant(c);
        }
        match (&self.lower, &self.upper) {
            (PointFn::Constant(a), PointFn::Constant(b)) => PointFn::Constant(b - a),
            (PointFn::Constant(a), up @ PointFn::Piecewise(_)) => up.shifted(-a),
            (lo @ PointFn::Piecewise(_), PointFn::Constant(b)) => lo.scaled(-1.0).shifted(*b),
            (PointFn::Piecewise(lo), PointFn::Piecewise(up)) => {
                let mut parts = Vec::new();
                for (ls, lv) in lo {
                    for (us, uv) in up {
                        if let Ok(common) = ls.intersect(us) {
                            if !common.is_empty() {
                                parts.push((common, uv - lv));
                            }
                        }
                    }
                }
                PointFn::Piecewise(parts)
            }
            _ => {
                let (lo, up) = (self.lower.clone(), self.upper.clone());
                PointFn::Pointwise(std::sync::Arc::new(move |x| up.eval(x) - lo.eval(x)))
            }
        }
    }

    fn width_sup(&self, flow: &SuspensionFlow) -> f64 {
        if let Some(b) = self.width_bound {
            return b;
        }
        match (self.lower.values(), self.upper.values()) {
            (Some(lo), Some(up)) => {
                let max_up = up.into_iter().fold(f64::NEG_INFINITY, f64::max);
                let min_lo = lo.into_iter().fold(f64::INFINITY, f64::min);
                (max_up - min_lo.max(0.0)).min(flow.tau_sup())
            }
            _ => flow.tau_sup(),
        }
    }
}

#[derive(Debug, Clone)]
pub enum FlowSet {
    Cylinder(CylinderSet),
    Graph(GraphSet),
}

impl From<CylinderSet> for FlowSet {
    fn from(c: CylinderSet) -> Self {
        FlowSet::Cylinder(c)
    }
}

impl From<GraphSet> for FlowSet {
    fn from(g: GraphSet) -> Self {
        FlowSet::Graph(g)
    }
}

impl fmt::Display for FlowSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FlowSet::Cylinder(c) => write!(f, "{}x[{},{})", c.base, c.t1, c.t2),
            FlowSet::Graph(g) => match g.width {
                Some(w) => write!(f, "{}x[h1,h1+{w})", g.base),
                None => write!(f, "{}x[h1,h2)", g.base),
            },
        }
    }
}

impl FlowSet {
    pub fn base(&self) -> &BaseSet {
        match self {
            FlowSet::Cylinder(c) => &c.base,
            FlowSet::Graph(g) => &g.base,
        }
    }

    /// Lower boundary over the fiber of `x`.
    #[inline]
    pub fn entry_height(&self, x: Point) -> f64 {
        match self {
            FlowSet::Cylinder(c) => c.t1,
            FlowSet::Graph(g) => g.lower.eval(x),
        }
    }

    /// Upper boundary over the fiber of `x`.
    #[inline]
    pub fn top(&self, x: Point) -> f64 {
        match self {
            FlowSet::Cylinder(c) => c.t2,
            FlowSet::Graph(g) => match g.width {
                Some(w) => g.lower.eval(x) + w,
                None => g.upper.eval(x),
            },
        }
    }

    /// Whether the fiber over `x` meets the set.
    #[inline]
    pub fn fiber_meets(&self, x: Point) -> bool {
        match self {
            FlowSet::Cylinder(c) => c.base.contains(x),
            FlowSet::Graph(g) => g.base.contains(x) && g.lower.eval(x) < self.top(x),
        }
    }

    #[inline]
    pub fn contains(&self, p: FlowPoint) -> bool {
        self.base().contains(p.x) && self.entry_height(p.x) <= p.t && p.t < self.top(p.x)
    }

    /// `e_A(p)`: time to leave the set; zero outside it.
    pub fn escape_time(&self, p: FlowPoint) -> f64 {
        if self.contains(p) {
            self.top(p.x) - p.t
        } else {
            0.0
        }
    }

    /// `n_A(p)`: first time after the escape time at which the orbit is in
    /// the set. For `p` in the set this is `e_A(p) + n~_A(p)` as one addition.
    pub fn hitting_time(&self, flow: &SuspensionFlow, p: FlowPoint, max_steps: u64) -> Result<f64> {
        if self.contains(p) {
            let adjusted = self.adjusted_return_time(flow, p, max_steps)?;
            return Ok(self.escape_time(p) + adjusted);
        }
        let x = p.x;
        if self.fiber_meets(x) {
            let entry = self.entry_height(x);
            if p.t < entry {
                return Ok(entry - p.t);
            }
        }
        let (sum, y) = flow.return_sum(x, max_steps, |y| self.fiber_meets(y))?;
        let mut acc = CompensatedSum::from_value(sum);
        acc -= p.t;
        acc += self.entry_height(y);
        Ok(acc.value())
    }

    /// `n~_A(p)`, the time from leaving the set to re-entering it, for `p` in
    /// the set: `tau^j(x) - top(x) + entry(f^j x)`.
    pub fn adjusted_return_time(
        &self,
        flow: &SuspensionFlow,
        p: FlowPoint,
        max_steps: u64,
    ) -> Result<f64> {
        if !self.contains(p) {
            return Err(Error::NotInSet);
        }
        let (sum, y) = flow.return_sum(p.x, max_steps, |y| self.fiber_meets(y))?;
        let mut acc = CompensatedSum::from_value(sum);
        acc -= self.top(p.x);
        acc += self.entry_height(y);
        Ok(acc.value())
    }

    /// Checks that the set fits under the roof.
    pub fn validate(&self, flow: &SuspensionFlow) -> Result<()> {
        let sys = flow.base();
        sys.measure(self.base())?;
        let mut rng = McRng::seed_from_u64(SPOT_CHECK_SEED);
        match self {
            FlowSet::Cylinder(c) => {
                let roof = flow.roof();
                let exact = roof.exact_inf_over(&c.base)?;
                let bound = exact.unwrap_or(roof.lower_bound());
                if c.t2 <= bound {
                    return Ok(());
                }
                if exact.is_some() {
                    return Err(Error::InvalidFlowSet(format!(
                        "t2 = {} exceeds the roof minimum {bound} over {}",
                        c.t2, c.base
                    )));
                }
                let Ok(sampler) = sys.conditional_sampler(&c.base) else {
                    return Ok(());
                };
                for _ in 0..SPOT_CHECK_POINTS {
                    let x = sampler.sample(&mut rng);
                    let tau = flow.tau(x)?;
                    if tau < c.t2 {
                        return Err(Error::InvalidFlowSet(format!(
                            "t2 = {} exceeds the roof value {tau} at x={x}",
                            c.t2
                        )));
                    }
                }
                Ok(())
            }
            FlowSet::Graph(g) => {
                let check = |x: Point| -> Result<()> {
                    let h1 = g.lower.eval(x);
                    let h2 = self.top(x);
                    let tau = flow.tau(x)?;
                    if !(0.0 <= h1 && h1 <= h2 && h2 <= tau) {
                        return Err(Error::InvalidFlowSet(format!(
                            "need 0 <= h1 <= h2 <= tau, got h1={h1}, h2={h2}, tau={tau} at x={x}"
                        )));
                    }
                    let bound = g.width_sup(flow);
                    let width = g.width_at(x);
                    if width > bound {
                        return Err(Error::SupBoundViolation {
                            value: width,
                            bound,
                            at: x.coord(),
                        });
                    }
                    Ok(())
                };
                if let BaseSet::States(states) = &g.base {
                    return states.iter().try_for_each(|&s| check(Point::State(s)));
                }
                let Ok(sampler) = sys.conditional_sampler(&g.base) else {
                    return Ok(());
                };
                (0..SPOT_CHECK_POINTS).try_for_each(|_| check(sampler.sample(&mut rng)))
            }
        }
    }

    /// Direct sampler for `mu_bar` conditioned on the set.
    pub fn sampler<'a>(&'a self, flow: &'a SuspensionFlow) -> Result<SetSampler<'a>> {
        let base = flow.base().conditional_sampler(self.base())?;
        let width_sup = match self {
            FlowSet::Cylinder(_) => 0.0,
            FlowSet::Graph(g) => g.width_sup(flow),
        };
        Ok(SetSampler {
            set: self,
            base,
            width_sup,
            proposals: 0,
            accepted: 0,
        })
    }

    /// `mu_bar(A)`.
    pub fn bar_mu(&self, flow: &SuspensionFlow, cfg: &McConfig) -> Result<crate::mc::Estimate> {
        flow.bar_mu(self, &Integration::MonteCarlo(*cfg))
    }
}

/// Reference hitting time found by flowing forward in steps of `step` and
/// testing membership on the grid, for cross-checking the closed form.
///
/// Returns the grid time `i * step` at which the orbit is first seen back in
/// the set after escaping it; the true hitting time lies within one step
/// below. A step that crosses a roof counts as leaving the current fiber.
pub fn scan_hitting_time(
    flow: &SuspensionFlow,
    set: &FlowSet,
    p: FlowPoint,
    step: f64,
    max_time: f64,
) -> Result<f64> {
    if !(step > 0.0) {
        return Err(Error::InvalidFlowSet(format!("scan step {step} must be positive")));
    }
    let max_steps = (max_time / step).ceil() as u64;
    let mut q = p;
    let mut i = 0u64;
    if set.contains(p) {
        loop {
            i += 1;
            let (next, crossed) = flow.evolve_counted(q, step)?;
            q = next;
            if crossed > 0 || !set.contains(q) {
                break;
            }
            if i >= max_steps {
                return Err(Error::NonRecurrentWithinBudget { max_steps });
            }
        }
    } else {
        i = 1;
        q = flow.evolve(q, step)?;
    }
    while !set.contains(q) {
        if i >= max_steps {
            return Err(Error::NonRecurrentWithinBudget { max_steps });
        }
        i += 1;
        q = flow.evolve(q, step)?;
    }
    Ok(i as f64 * step)
}

/// Draws from `mu_bar_A`.
///
/// Cylinders: `x ~ mu_I`, `t ~ U[t1,t2)`. Graph sets: `x ~ mu_I` accepted with
/// probability `h(x)/sup h`, then `t ~ U[h1(x), h2(x))`.
#[derive(Debug, Clone)]
pub struct SetSampler<'a> {
    set: &'a FlowSet,
    base: crate::base::ConditionalSampler<'a>,
    width_sup: f64,
    proposals: u64,
    accepted: u64,
}

impl SetSampler<'_> {
    pub fn sample<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<FlowPoint> {
        match self.set {
            FlowSet::Cylinder(c) => {
                let x = self.base.sample(rng);
                let mut t = c.t1 + rng.random::<f64>() * c.height();
                if t >= c.t2 {
                    t = c.t1;
                }
                Ok(FlowPoint::new(x, t))
            }
            FlowSet::Graph(g) => loop {
                let x = self.base.sample(rng);
                let h = g.width_at(x);
                if h > self.width_sup {
                    return Err(Error::SupBoundViolation {
                        value: h,
                        bound: self.width_sup,
                        at: x.coord(),
                    });
                }
                self.proposals += 1;
                let accept = rng.random::<f64>() * self.width_sup < h;
                if accept {
                    self.accepted += 1;
                }
                if self.proposals >= SAMPLER_WINDOW {
                    let rate = self.accepted as f64 / self.proposals as f64;
                    if rate < 1e-3 {
                        return Err(Error::BadSupBound { rate });
                    }
                    self.proposals = 0;
                    self.accepted = 0;
                }
                if accept {
                    let h1 = g.lower.eval(x);
                    let mut t = h1 + rng.random::<f64>() * h;
                    if t >= h1 + h {
                        t = h1;
                    }
                    return Ok(FlowPoint::new(x, t));
                }
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::base::{BaseSystem, DEFAULT_MAX_STEPS};
    use crate::roof::Roof;

    fn three_cycle() -> SuspensionFlow {
        SuspensionFlow::with_exact_sup(BaseSystem::cycle(3), Roof::per_state(&[1.0, 2.0, 3.0]).unwrap())
            .unwrap()
    }

    fn doubling_unit() -> SuspensionFlow {
        SuspensionFlow::with_exact_sup(BaseSystem::doubling(), Roof::constant(1.0).unwrap()).unwrap()
    }

    fn cyl(base: BaseSet, t1: f64, t2: f64) -> FlowSet {
        CylinderSet::new(base, t1, t2).unwrap().into()
    }

    fn pt(x: f64, t: f64) -> FlowPoint {
        FlowPoint::new(Point::Real(x), t)
    }

    fn st(i: usize, t: f64) -> FlowPoint {
        FlowPoint::new(Point::State(i), t)
    }

    fn sloped() -> FlowSet {
        GraphSet::parallel(
            BaseSet::interval(0.0, 0.5).unwrap(),
            PointFn::expr(|x| x / 2.0),
            0.25,
        )
        .unwrap()
        .into()
    }

    #[test]
    fn membership() {
        let a = cyl(BaseSet::interval(0.0, 0.5).unwrap(), 0.0, 0.5);
        assert!(a.contains(pt(0.25, 0.1)));
        assert!(!a.contains(pt(0.75, 0.1)));
        assert!(!a.contains(pt(0.25, 0.5)));
        assert!(sloped().contains(pt(0.2, 0.3)));
        assert!(!sloped().contains(pt(0.2, 0.35)));
    }

    #[test]
    fn escape_times() {
        let a = cyl(BaseSet::states([0]), 0.0, 0.5);
        assert_eq!(a.escape_time(st(1, 0.2)), 0.0);
        assert_eq!(a.escape_time(st(0, 0.25)), 0.25);
        assert!((sloped().escape_time(pt(0.2, 0.3)) - 0.05).abs() < 1e-15);
    }

    /// Exact fiber-by-fiber walk on the 3-cycle, in rationals over 1/4.
    #[test]
    fn hitting_time_examples() {
        let flow = three_cycle();
        let a = cyl(BaseSet::states([0]), 0.0, 0.5);
        assert_eq!(a.hitting_time(&flow, st(0, 0.25), 100).unwrap(), 5.75);
        assert_eq!(a.hitting_time(&flow, st(1, 0.0), 100).unwrap(), 5.0);
        let b = cyl(BaseSet::states([0]), 0.25, 0.5);
        assert_eq!(b.hitting_time(&flow, st(0, 0.0), 100).unwrap(), 0.25);
        assert_eq!(a.adjusted_return_time(&flow, st(0, 0.25), 100).unwrap(), 5.5);
        assert_eq!(
            a.adjusted_return_time(&flow, st(1, 0.25), 100),
            Err(Error::NotInSet)
        );
    }

    #[test]
    fn above_the_set_waits_for_the_next_visit() {
        let flow = three_cycle();
        let a = cyl(BaseSet::states([0]), 0.0, 0.5);
        // (0, 0.75): finish fiber 0 (0.25), fibers 1 and 2 (5), enter at 0
        assert_eq!(a.hitting_time(&flow, st(0, 0.75), 100).unwrap(), 5.25);
    }

    #[test]
    fn full_space_reenters_immediately() {
        let flow = SuspensionFlow::with_exact_sup(BaseSystem::doubling(), Roof::constant(2.0).unwrap())
            .unwrap();
        let a = cyl(BaseSet::interval(0.0, 1.0).unwrap(), 0.0, 2.0);
        for x in [0.1, 0.37, 0.9] {
            let p = pt(x, 0.6);
            assert_eq!(a.adjusted_return_time(&flow, p, 10).unwrap(), 0.0);
            assert_eq!(a.hitting_time(&flow, p, 10).unwrap(), a.escape_time(p));
        }
        let half = cyl(BaseSet::interval(0.0, 1.0).unwrap(), 0.0, 1.0);
        let p = pt(0.3, 0.2);
        let n = half.hitting_time(&flow, p, 10).unwrap();
        assert_eq!(n, half.escape_time(p) + half.adjusted_return_time(&flow, p, 10).unwrap());
        assert_eq!(half.adjusted_return_time(&flow, p, 10).unwrap(), 1.0);
    }

    #[test]
    fn graph_hitting_uses_lower_boundary_of_landing_fiber() {
        let flow = doubling_unit();
        let a = sloped();
        // (0.2, 0.3): 0.2 -> 0.4 in I, enter at h1(0.4) = 0.2
        let n = a.hitting_time(&flow, pt(0.2, 0.3), 100).unwrap();
        assert!((n - (1.0 - 0.3 + 0.2)).abs() < 1e-15);
    }

    #[test]
    fn empty_fibers_are_skipped() {
        let flow = three_cycle();
        let a: FlowSet = GraphSet::new(
            BaseSet::states([0, 1]),
            PointFn::per_state(&[0.0, 0.5, 0.0]),
            PointFn::per_state(&[0.5, 0.5, 0.0]),
        )
        .into();
        // fiber over 1 is empty; from (0, 0.25) the next entry is over 0 again
        assert_eq!(a.hitting_time(&flow, st(0, 0.25), 100).unwrap(), 5.75);
    }

    #[test]
    fn exit_regions() {
        let a = CylinderSet::new(BaseSet::interval(0.0, 0.5).unwrap(), 0.0, 1.0).unwrap();
        let r = a.exit_region(0.1).unwrap();
        assert_eq!((r.t1(), r.t2()), (0.9, 1.0));
        assert_eq!(a.exit_region(1.0).unwrap(), a);
        assert!(matches!(a.exit_region(0.0), Err(Error::InvalidExitWidth { .. })));
        assert!(matches!(a.exit_region(1.5), Err(Error::InvalidExitWidth { .. })));
        let flow = doubling_unit();
        for s in [0.5, 0.1, 0.01] {
            let m = flow
                .bar_mu(&a.exit_region(s).unwrap().into(), &Integration::Exact)
                .unwrap()
                .mean;
            assert!((m - s * 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn validation() {
        let flow = three_cycle();
        assert!(cyl(BaseSet::states([1]), 0.0, 2.0).validate(&flow).is_ok());
        assert!(matches!(
            cyl(BaseSet::states([0, 1]), 0.0, 1.5).validate(&flow),
            Err(Error::InvalidFlowSet(_))
        ));
        let rot = SuspensionFlow::new(
            BaseSystem::rotation(0.6180339887).unwrap(),
            Roof::closed_form(
                |x| 2.0 + (2.0 * std::f64::consts::PI * x).cos(),
                1.0,
                crate::roof::RoofIntegral::Analytic(2.0),
            )
            .unwrap(),
            3.0,
        )
        .unwrap();
        // tau >= 2 + cos(0.6 pi) ~ 1.69 on [0, 0.3)
        assert!(cyl(BaseSet::interval(0.0, 0.3).unwrap(), 0.0, 1.6).validate(&rot).is_ok());
        assert!(cyl(BaseSet::interval(0.0, 0.3).unwrap(), 0.0, 1.8).validate(&rot).is_err());
        assert!(sloped().validate(&doubling_unit()).is_ok());
        let too_tall: FlowSet = GraphSet::parallel(
            BaseSet::interval(0.0, 0.5).unwrap(),
            PointFn::expr(|x| x),
            0.75,
        )
        .unwrap()
        .into();
        assert!(too_tall.validate(&doubling_unit()).is_err());
    }

    #[test]
    fn default_budget_constant() {
        assert_eq!(DEFAULT_MAX_STEPS, 10_000_000);
    }
}
