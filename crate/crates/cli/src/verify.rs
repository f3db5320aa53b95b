//! Deterministic invariant suites run by `kacflow verify`.
//!
//! Every suite draws from its own stream derived from the master seed, so
//! the report depends only on `(seed, samples, workers)`. Property suites
//! emit one row per invariant with the failing-case count in `mc_estimate`;
//! statistical suites emit one row per compared quantity.

use std::f64::consts::TAU;

use kacflow::base::StateSpace;
use kacflow::catalog::{self, GOLDEN_MEAN};
use kacflow::formulas::{
    cross_section_mean_return, cylinder_rhs, cylinder_rhs_forms, entropy_quotient, graph_rhs,
    linearity_scan, mc_mean_return, parallel_sides_value, relative_gap,
    unnormalized_identity_check, EstimateReport, ALGEBRAIC_TOLERANCE,
};
use kacflow::mc::{self, splitmix64};
use kacflow::oracle::{
    oracle_cylinder_rhs, oracle_discrete_kac, oracle_full_identity_suite, oracle_mean_return,
    random_model, ratio, to_f64, Rational, RationalCylinder, RationalFlowModel,
};
use kacflow::scenarios::{random_cylinder, random_flow, random_point};
use kacflow::{
    scan_hitting_time, BaseSet, BaseSystem, CylinderSet, Estimate, FlowSet, GraphSet,
    Integration, McConfig, PointFn, Roof, RoofIntegral, SuspensionFlow,
    DEFAULT_MAX_STEPS,
};
use num_traits::{One, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::report::{Row, RowContext, Verdict};

pub const DEFAULT_SAMPLES: u64 = 200_000;
pub const SEMIGROUP_CASES: u64 = 10_000;
pub const STEPPING_CASES: u64 = 1_000;
pub const LANDING_CASES: u64 = 2_000;
pub const ORACLE_MODELS: u64 = 100;

#[derive(Debug, Clone, Copy)]
pub struct VerifyOptions {
    pub seed: u64,
    pub samples: u64,
    pub workers: usize,
}

/// Outcome of a property suite over randomized cases.
#[derive(Debug, Clone)]
pub struct Check {
    pub module: &'static str,
    pub invariant: &'static str,
    pub cases: u64,
    /// Inputs of each failing case.
    pub failures: Vec<String>,
}

impl Check {
    fn new(module: &'static str, invariant: &'static str) -> Self {
        Self {
            module,
            invariant,
            cases: 0,
            failures: Vec::new(),
        }
    }

    fn case(&mut self, outcome: Result<(), String>) {
        self.cases += 1;
        if let Err(inputs) = outcome {
            self.failures.push(inputs);
        }
    }

    pub fn passed(&self) -> bool {
        self.cases > 0 && self.failures.is_empty()
    }

    fn row(&self, ctx: &RowContext) -> Row {
        let set = match self.failures.first() {
            None => format!("{} randomized cases", self.cases),
            Some(first) => format!("first failure: {first}"),
        };
        let report = EstimateReport::new(
            format!("{}/{}", self.module, self.invariant),
            Estimate::exact(self.failures.len() as f64),
            Estimate::exact(0.0),
        );
        let mut row = ctx.exact(&set, &report, self.passed());
        row.n_samples = self.cases;
        row
    }
}

fn case_rng(seed: u64, suite: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(suite)))
}

/// `evolve(p, s + u) = evolve(evolve(p, s), u)` on random flows and points.
pub fn semigroup_suite(seed: u64, cases: u64) -> Check {
    let mut rng = case_rng(seed, 1);
    let mut check = Check::new("suspension", "semigroup");
    for _ in 0..cases {
        let flow = random_flow(&mut rng);
        let s = rng.random_range(0.0..25.0);
        let u = rng.random_range(0.0..25.0);
        let outcome = random_point(&mut rng, &flow)
            .and_then(|p| {
                let once = flow.evolve(p, s + u)?;
                let twice = flow.evolve(flow.evolve(p, s)?, u)?;
                Ok((p, once, twice))
            })
            .map_err(|e| e.to_string())
            .and_then(|(p, once, twice)| {
                let tol = 1e-9 * (1.0 + s + u);
                let agree = if once.x == twice.x {
                    (once.t - twice.t).abs() <= tol
                } else {
                    // a rounding error on either path can straddle a roof crossing
                    once.t <= tol || twice.t <= tol
                };
                agree.then_some(()).ok_or_else(|| {
                    format!("{} p={p} s={s} u={u}: {once} vs {twice}", flow.base().describe())
                })
            });
        check.case(outcome);
    }
    check
}

/// Closed-form hitting time against a fine grid scan of the orbit.
pub fn stepping_suite(seed: u64, cases: u64) -> Check {
    let mut rng = case_rng(seed, 2);
    let mut check = Check::new("recurrence", "closed_form_vs_stepping");
    for _ in 0..cases {
        let flow = random_flow(&mut rng);
        let inside = rng.random_bool(0.5);
        let outcome = (|| -> kacflow::Result<Result<(), String>> {
            let set = FlowSet::Cylinder(random_cylinder(&mut rng, &flow)?);
            set.validate(&flow)?;
            let p = if inside {
                set.sampler(&flow)?.sample(&mut rng)?
            } else {
                random_point(&mut rng, &flow)?
            };
            let h = set.hitting_time(&flow, p, DEFAULT_MAX_STEPS)?;
            let step = 1e-4 * flow.roof().lower_bound();
            let scanned = scan_hitting_time(&flow, &set, p, step, h + 1.0)?;
            Ok(((h - scanned).abs() <= step + 1e-9).then_some(()).ok_or_else(|| {
                format!(
                    "{} set={set} p={p}: closed form {h}, scan {scanned}",
                    flow.base().describe()
                )
            }))
        })();
        check.case(outcome.unwrap_or_else(|e| Err(e.to_string())));
    }
    check
}

/// The orbit is in the set at the hitting time and not just before it, and
/// the return splits exactly into escape plus adjusted return.
pub fn landing_suite(seed: u64, cases: u64) -> Check {
    let mut rng = case_rng(seed, 3);
    let mut check = Check::new("recurrence", "landing");
    for _ in 0..cases {
        let flow = random_flow(&mut rng);
        let inside = rng.random_bool(0.5);
        let outcome = (|| -> kacflow::Result<Result<(), String>> {
            let set = FlowSet::Cylinder(random_cylinder(&mut rng, &flow)?);
            let p = if inside {
                set.sampler(&flow)?.sample(&mut rng)?
            } else {
                random_point(&mut rng, &flow)?
            };
            let h = set.hitting_time(&flow, p, DEFAULT_MAX_STEPS)?;
            let mut ok = h >= set.escape_time(p);
            if set.contains(p) {
                ok &= h == set.escape_time(p) + set.adjusted_return_time(&flow, p, DEFAULT_MAX_STEPS)?;
            }
            let eps = 1e-6 * flow.roof().lower_bound();
            let at = flow.evolve(p, h)?;
            let before = flow.evolve(p, h - eps)?;
            let entry = set.entry_height(at.x);
            ok &= set.contains(at) || (at.t - entry).abs() < 1e-9;
            ok &= !set.contains(before) || (before.t - entry).abs() < 1e-9;
            Ok(ok.then_some(()).ok_or_else(|| {
                format!("{} set={set} p={p}: hit at {at}", flow.base().describe())
            }))
        })();
        check.case(outcome.unwrap_or_else(|e| Err(e.to_string())));
    }
    check
}

/// Randomized exact models: every single-state cylinder with `t` in
/// `[0, roof/2)` satisfies the identities as exact rationals, and the float
/// closed forms agree with the exact value.
pub fn oracle_suite(seed: u64, models: u64) -> Check {
    let mut rng = case_rng(seed, 4);
    let mut check = Check::new("oracle", "random_models");
    for _ in 0..models {
        let model = random_model(&mut rng, 8, 16);
        for x in model.support() {
            let cyl = RationalCylinder::new(vec![x], Rational::zero(), &model.roof()[x] / ratio(2, 1));
            let outcome = oracle_model_case(&model, &cyl)
                .unwrap_or_else(|e| Err(e.to_string()))
                .map_err(|why| format!("table={:?} roof={:?} state {x}: {why}", model.table(), model.roof()));
            check.case(outcome);
        }
    }
    check
}

fn oracle_model_case(model: &RationalFlowModel, cyl: &RationalCylinder) -> kacflow::Result<Result<(), String>> {
    let mean = oracle_mean_return(model, cyl)?;
    let (escape_form, integral_form) = oracle_cylinder_rhs(model, cyl)?;
    if mean != escape_form || mean != integral_form {
        return Ok(Err(format!("mean return {mean} vs forms {escape_form}, {integral_form}")));
    }
    let kac = oracle_discrete_kac(model, &cyl.states)?;
    if !kac.is_one() {
        return Ok(Err(format!("discrete Kac gives {kac}")));
    }
    let suite = oracle_full_identity_suite(model, cyl)?;
    if let Some(f) = suite.failures.first() {
        return Ok(Err(format!("{}: {} vs {}", f.identity, f.left, f.right)));
    }
    let flow = SuspensionFlow::with_exact_sup(model.base_system()?, model.float_roof()?)?;
    let float_cyl = CylinderSet::new(
        RationalFlowModel::float_states(&cyl.states),
        to_f64(&cyl.t1),
        to_f64(&cyl.t2),
    )?;
    let float = cylinder_rhs(&flow, &float_cyl)?.mean;
    let exact = to_f64(&mean);
    if relative_gap(float, exact) > ALGEBRAIC_TOLERANCE {
        return Ok(Err(format!("float closed form {float} vs exact {exact}")));
    }
    Ok(Ok(()))
}

/// A named flow for the statistical suites together with a cylinder and
/// its labels.
struct Bench {
    system: String,
    roof: String,
    flow: SuspensionFlow,
    cylinder: CylinderSet,
}

fn benches() -> kacflow::Result<Vec<Bench>> {
    let cosine = Roof::closed_form(|x| 2.0 + (TAU * x).cos(), 1.0, RoofIntegral::Analytic(2.0))?;
    let two_level = Roof::piecewise(
        vec![(BaseSet::interval(0.0, 0.3)?, 0.8), (BaseSet::interval(0.3, 1.0)?, 1.6)],
        0.8,
    )?;
    Ok(vec![
        Bench {
            system: "doubling".into(),
            roof: "constant(1)".into(),
            flow: SuspensionFlow::with_exact_sup(BaseSystem::doubling(), Roof::constant(1.0)?)?,
            cylinder: CylinderSet::new(BaseSet::interval(0.0, 0.5)?, 0.0, 1.0)?,
        },
        Bench {
            system: "bernoulli".into(),
            roof: "0.8 on [0,0.3), 1.6 on [0.3,1)".into(),
            flow: SuspensionFlow::with_exact_sup(catalog::lookup("bernoulli").expect("in catalog"), two_level)?,
            cylinder: CylinderSet::new(BaseSet::interval(0.1, 0.6)?, 0.2, 0.7)?,
        },
        Bench {
            system: "tripling".into(),
            roof: "constant(0.75)".into(),
            flow: SuspensionFlow::with_exact_sup(catalog::lookup("tripling").expect("in catalog"), Roof::constant(0.75)?)?,
            cylinder: CylinderSet::new(BaseSet::prefix(3, vec![1])?, 0.25, 0.5)?,
        },
        Bench {
            system: "golden-rotation".into(),
            roof: "2+cos(2 pi x)".into(),
            flow: SuspensionFlow::new(BaseSystem::rotation(GOLDEN_MEAN)?, cosine, 3.0)?,
            cylinder: CylinderSet::new(BaseSet::interval(0.0, 0.3)?, 0.1, 0.9)?,
        },
        Bench {
            system: "three-cycle".into(),
            roof: "per-state (1, 2, 1.5)".into(),
            flow: SuspensionFlow::with_exact_sup(BaseSystem::cycle(3), Roof::per_state(&[1.0, 2.0, 1.5])?)?,
            cylinder: CylinderSet::new(BaseSet::states([0, 2]), 0.25, 0.75)?,
        },
    ])
}

struct Statistical<'a> {
    opts: &'a VerifyOptions,
    base_ctx: &'a RowContext,
    rows: Vec<Row>,
    tag: u64,
}

impl Statistical<'_> {
    fn mc(&mut self) -> McConfig {
        self.tag += 1;
        McConfig::new(self.opts.samples, self.opts.seed)
            .with_workers(self.opts.workers)
            .derive(self.tag)
    }

    fn push(&mut self, bench: &Bench, set: &str, outcome: kacflow::Result<(EstimateReport, Option<bool>)>) {
        let ctx = RowContext {
            system: bench.system.clone(),
            roof: bench.roof.clone(),
            ..self.base_ctx.clone()
        };
        let row = match outcome {
            Ok((report, None)) => ctx.statistical(set, &report),
            Ok((report, Some(holds))) => ctx.exact(set, &report, holds),
            Err(e) => {
                let report = EstimateReport::new("error", Estimate::exact(f64::NAN), Estimate::exact(0.0));
                ctx.row(&format!("{set}: {e}"), &report, Verdict::Fail)
            }
        };
        self.rows.push(row);
    }
}

fn named(report: EstimateReport, quantity: &str) -> EstimateReport {
    EstimateReport {
        quantity: quantity.to_string(),
        ..report
    }
}

fn exact_pair(quantity: &str, a: f64, b: f64) -> (EstimateReport, Option<bool>) {
    (
        EstimateReport::new(quantity, Estimate::exact(a), Estimate::exact(b)),
        Some(relative_gap(a, b) <= ALGEBRAIC_TOLERANCE),
    )
}

fn base_test_set(sys: &BaseSystem) -> kacflow::Result<BaseSet> {
    match sys.state_space() {
        StateSpace::Finite(_) => Ok(BaseSet::states([0])),
        StateSpace::Continuous => BaseSet::interval(0.2, 0.55),
    }
}

fn measure_preservation(st: &mut Statistical<'_>) {
    for entry in catalog::entries() {
        let sys = entry.system();
        let bench = Bench {
            system: entry.name.into(),
            roof: "-".into(),
            flow: SuspensionFlow::with_exact_sup(sys.clone(), Roof::constant(1.0).expect("positive"))
                .expect("unit roof"),
            cylinder: CylinderSet::new(BaseSet::states([0]), 0.0, 0.5).expect("ordered"),
        };
        let cfg = st.mc();
        let outcome = (|| {
            let set = base_test_set(&sys)?;
            let mass = sys.measure(&set)?;
            let preimage = mc::mean(&cfg, |rng| {
                let x = sys.sample(rng);
                Ok(if set.contains(sys.apply(x)) { 1.0 } else { 0.0 })
            })?;
            let report = EstimateReport::new("base_dynamics/measure_preservation", preimage, Estimate::exact(mass));
            Ok((report, None))
        })();
        let label = base_test_set(&sys).map(|s| s.to_string()).unwrap_or_default();
        st.push(&bench, &label, outcome);
    }
}

fn flow_invariance(st: &mut Statistical<'_>, bench: &Bench) {
    let cfg = st.mc();
    let flow = &bench.flow;
    let set = FlowSet::Cylinder(bench.cylinder.clone());
    let outcome = (|| {
        let target = flow.bar_mu(&set, &Integration::Exact)?;
        let tally: mc::Tally<mc::Moments> = mc::run(
            &cfg,
            || flow.sampler(),
            |sampler, rng| {
                let p = sampler.sample(rng)?;
                let q = flow.evolve(p, 1.7)?;
                Ok(if set.contains(q) { 1.0 } else { 0.0 })
            },
        )?;
        let moved = tally.acc.estimate(tally.discarded);
        Ok((EstimateReport::new("suspension/flow_invariance(s=1.7)", moved, target), None))
    })();
    st.push(bench, &set.to_string(), outcome);
}

fn kac_and_stats(st: &mut Statistical<'_>, bench: &Bench) {
    let flow = &bench.flow;
    let cyl = &bench.cylinder;
    let label = FlowSet::Cylinder(cyl.clone()).to_string();

    let cfg = st.mc();
    let outcome = (|| {
        let lhs = mc_mean_return(flow, &FlowSet::Cylinder(cyl.clone()), &cfg)?;
        Ok((EstimateReport::new("recurrence/kac", lhs, cylinder_rhs(flow, cyl)?), None))
    })();
    st.push(bench, &label, outcome);

    let cfg = st.mc();
    let outcome = cross_section_mean_return(flow, cyl.base(), &cfg)
        .map(|r| (named(r, "formulas/cross_section"), None));
    st.push(bench, &cyl.base().to_string(), outcome);

    let cfg = st.mc();
    let outcome = unnormalized_identity_check(flow, cyl, &cfg).map(|r| (named(r, "formulas/unnormalized_identity"), None));
    st.push(bench, &label, outcome);

    let outcome = cylinder_rhs_forms(flow, cyl).map(|(a, b)| exact_pair("formulas/cylinder_forms_agree", a, b));
    st.push(bench, &label, outcome);
}

fn reductions(st: &mut Statistical<'_>, bench: &Bench) {
    let flow = &bench.flow;
    let cyl = &bench.cylinder;

    // a graph set with constant boundaries is the cylinder itself
    let graph = GraphSet::new(
        cyl.base().clone(),
        PointFn::Constant(cyl.t1()),
        PointFn::Constant(cyl.t2()),
    );
    let cfg = st.mc();
    let outcome = (|| {
        let total = graph_rhs(flow, &graph, &cfg)?.total;
        let report = EstimateReport::new("formulas/graph_reduces_to_cylinder", total, cylinder_rhs(flow, cyl)?);
        let exact = total.is_exact().then_some(report.z_score == 0.0);
        Ok((report, exact))
    })();
    st.push(bench, &FlowSet::Graph(graph.clone()).to_string(), outcome);

    if flow.base().entropy() > 0.0 {
        let outcome = (|| {
            let quotient = entropy_quotient(flow, cyl.base())?;
            let mass = flow.base().measure(cyl.base())?;
            Ok(exact_pair("formulas/entropy_quotient", quotient, flow.roof_integral() / mass))
        })();
        st.push(bench, &cyl.base().to_string(), outcome);
    }

    let outcome = linearity_scan(flow, cyl, &[1.0, 1.5, 2.0, 3.0]).map(|scan| {
        let report = EstimateReport::new(
            "formulas/linearity",
            Estimate::exact(scan.slope),
            Estimate::exact(scan.expected_slope),
        );
        let holds = scan.passes();
        (report, Some(holds))
    });
    st.push(bench, &FlowSet::Cylinder(cyl.clone()).to_string(), outcome);
}

/// Parallel-sides graph sets: the closed value against the general
/// three-term right-hand side.
fn parallel_sides(st: &mut Statistical<'_>) -> kacflow::Result<()> {
    let doubling = Bench {
        system: "doubling".into(),
        roof: "constant(1)".into(),
        flow: SuspensionFlow::with_exact_sup(BaseSystem::doubling(), Roof::constant(1.0)?)?,
        cylinder: CylinderSet::new(BaseSet::interval(0.0, 0.5)?, 0.0, 1.0)?,
    };
    let cycle = Bench {
        system: "three-cycle".into(),
        roof: "per-state (1, 2, 1.5)".into(),
        flow: SuspensionFlow::with_exact_sup(BaseSystem::cycle(3), Roof::per_state(&[1.0, 2.0, 1.5])?)?,
        cylinder: CylinderSet::new(BaseSet::states([0, 1]), 0.0, 0.5)?,
    };
    let cases = [
        (
            &doubling,
            GraphSet::parallel(BaseSet::interval(0.0, 0.5)?, PointFn::expr(|x| x / 2.0), 0.25)?,
        ),
        (
            &cycle,
            GraphSet::parallel(BaseSet::states([0, 1]), PointFn::per_state(&[0.1, 0.6, 0.0]), 0.3)?,
        ),
    ];
    for (bench, graph) in cases {
        let cfg = st.mc();
        let outcome = (|| {
            let closed = parallel_sides_value(&bench.flow, &graph)?;
            let general = graph_rhs(&bench.flow, &graph, &cfg)?.total;
            let report = EstimateReport::new("formulas/parallel_sides", general, closed);
            let exact = general.is_exact().then_some(report.z_score == 0.0);
            Ok((report, exact))
        })();
        st.push(bench, &FlowSet::Graph(graph.clone()).to_string(), outcome);

        let cfg = st.mc();
        let outcome = (|| {
            let lhs = mc_mean_return(&bench.flow, &FlowSet::Graph(graph.clone()), &cfg)?;
            let closed = parallel_sides_value(&bench.flow, &graph)?;
            Ok((EstimateReport::new("recurrence/kac_graph", lhs, closed), None))
        })();
        st.push(bench, &FlowSet::Graph(graph.clone()).to_string(), outcome);
    }
    Ok(())
}

/// Runs every suite. Property checks come first, then the statistical rows.
pub fn verify(opts: &VerifyOptions) -> kacflow::Result<(Vec<Row>, Vec<Check>)> {
    let ctx = RowContext {
        experiment_id: "verify".into(),
        system: "randomized".into(),
        roof: "randomized".into(),
        seed: opts.seed,
        workers: opts.workers,
    };
    let checks = vec![
        semigroup_suite(opts.seed, SEMIGROUP_CASES),
        stepping_suite(opts.seed, STEPPING_CASES),
        landing_suite(opts.seed, LANDING_CASES),
        oracle_suite(opts.seed, ORACLE_MODELS),
    ];
    let mut rows: Vec<Row> = checks.iter().map(|c| c.row(&ctx)).collect();

    let mut st = Statistical {
        opts,
        base_ctx: &ctx,
        rows: Vec::new(),
        tag: 0,
    };
    measure_preservation(&mut st);
    for bench in benches()? {
        flow_invariance(&mut st, &bench);
        kac_and_stats(&mut st, &bench);
        reductions(&mut st, &bench);
    }
    parallel_sides(&mut st)?;
    rows.extend(st.rows);
    Ok((rows, checks))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn property_suites_pass_on_small_runs() {
        for check in [
            semigroup_suite(7, 200),
            stepping_suite(7, 20),
            landing_suite(7, 200),
            oracle_suite(7, 10),
        ] {
            assert!(check.passed(), "{}/{}: {:?}", check.module, check.invariant, check.failures);
        }
    }

    #[test]
    fn failing_check_reports_its_inputs() {
        let mut check = Check::new("m", "i");
        check.case(Ok(()));
        check.case(Err("x=1".into()));
        let row = check.row(&RowContext::default());
        assert_eq!(row.verdict, Verdict::Fail);
        assert_eq!(row.quantity, "m/i");
        assert!(row.set.contains("x=1"));
        assert_eq!(row.n_samples, 2);
    }
}
