//! Executes the quantities of an experiment config.

use std::time::Instant;

use kacflow::formulas::{
    self, cross_section_mean_return, cylinder_rhs, cylinder_rhs_forms, entropy_quotient,
    exit_region_limit, graph_rhs, linearity_scan, mc_mean_return, parallel_sides_value,
    relative_gap, unnormalized_identity_check, EstimateReport, ALGEBRAIC_TOLERANCE,
};
use kacflow::oracle::{
    oracle_full_identity_suite, oracle_graph_mean_return, rationalize, to_f64, Rational,
    RationalCylinder, RationalFlowModel, RationalGraph,
};
use kacflow::base::StateSpace;
use kacflow::{BaseSet, Estimate, FlowSet, McConfig, Point, SuspensionFlow};

use crate::config::{BoundarySpec, ConfigError, Experiment, ExperimentConfig, NamedSet, Quantity};
use crate::report::{Row, RowContext, Verdict, Z_THRESHOLD};

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{quantity}: {error}")]
    Compute {
        quantity: &'static str,
        error: kacflow::Error,
    },
    #[error("{quantity} applies to none of the configured sets: {reason}")]
    NotApplicable {
        quantity: &'static str,
        reason: &'static str,
    },
}

/// Largest denominator accepted when lifting config values to rationals.
const MAX_DENOMINATOR: i64 = 1 << 40;

pub struct Runner<'a> {
    cfg: &'a ExperimentConfig,
    exp: Experiment,
    ctx: RowContext,
    timing: bool,
}

impl<'a> Runner<'a> {
    pub fn new(cfg: &'a ExperimentConfig, timing: bool) -> Result<Self, RunError> {
        let exp = cfg.build()?;
        let ctx = RowContext {
            experiment_id: cfg.id.clone(),
            system: exp.system_label.clone(),
            roof: exp.roof_label.clone(),
            seed: cfg.seed,
            workers: cfg.workers,
        };
        Ok(Self {
            cfg,
            exp,
            ctx,
            timing,
        })
    }

    pub fn run(&self) -> Result<Vec<Row>, RunError> {
        let mut rows = Vec::new();
        for (qi, &q) in self.cfg.quantities.iter().enumerate() {
            let before = rows.len();
            for (si, named) in self.exp.sets.iter().enumerate() {
                let mc = self.cfg.mc().derive(((qi as u64) << 32) | si as u64);
                let start = Instant::now();
                let mut produced = self
                    .quantity(q, named, &mc)
                    .map_err(|error| RunError::Compute {
                        quantity: q.key(),
                        error,
                    })?;
                if self.timing {
                    let ms = start.elapsed().as_millis() as u64;
                    produced.iter_mut().for_each(|r| r.wall_time_ms = Some(ms));
                }
                rows.extend(produced);
            }
            if rows.len() == before {
                return Err(RunError::NotApplicable {
                    quantity: q.key(),
                    reason: not_applicable_reason(q),
                });
            }
        }
        Ok(rows)
    }

    fn flow(&self) -> &SuspensionFlow {
        &self.exp.flow
    }

    fn quantity(&self, q: Quantity, named: &NamedSet, mc: &McConfig) -> kacflow::Result<Vec<Row>> {
        let flow = self.flow();
        let label = named.label.as_str();
        let one = |report: EstimateReport| {
            let report = EstimateReport {
                quantity: q.key().to_string(),
                ..report
            };
            Ok(vec![self.ctx.statistical(label, &report)])
        };
        match (q, &named.set) {
            (Quantity::MeanReturn, set) => {
                let lhs = mc_mean_return(flow, set, mc)?;
                let rhs = match set {
                    FlowSet::Cylinder(c) => cylinder_rhs(flow, c)?,
                    FlowSet::Graph(g) if g.constant_width().is_some() => parallel_sides_value(flow, g)?,
                    FlowSet::Graph(g) => graph_rhs(flow, g, &mc.derive(1))?.total,
                };
                one(EstimateReport::new(q.key(), lhs, rhs))
            }
            (Quantity::RhsCylinder, FlowSet::Cylinder(c)) => {
                let (first, second) = cylinder_rhs_forms(flow, c)?;
                let report = EstimateReport::new(q.key(), Estimate::exact(first), Estimate::exact(second));
                let holds = relative_gap(first, second) <= ALGEBRAIC_TOLERANCE;
                Ok(vec![self.ctx.exact(label, &report, holds)])
            }
            (Quantity::RhsGraph, FlowSet::Graph(g)) => {
                let lhs = mc_mean_return(flow, &named.set, mc)?;
                let rhs = graph_rhs(flow, g, &mc.derive(1))?;
                one(EstimateReport::new(q.key(), lhs, rhs.total))
            }
            (Quantity::CrossSection, set) => one(cross_section_mean_return(flow, set.base(), mc)?),
            (Quantity::EntropyQuotient, set) if flow.base().entropy() > 0.0 => {
                let quotient = entropy_quotient(flow, set.base())?;
                let mass = flow.base().measure(set.base())?;
                let direct = formulas::closed_form::cross_section(flow.roof_integral(), mass);
                let report =
                    EstimateReport::new(q.key(), Estimate::exact(quotient), Estimate::exact(direct));
                let holds = relative_gap(quotient, direct) <= ALGEBRAIC_TOLERANCE;
                Ok(vec![self.ctx.exact(label, &report, holds)])
            }
            (Quantity::ExitLimit, FlowSet::Cylinder(c)) => {
                let points = exit_region_limit(flow, c, &self.cfg.s_list, mc)?;
                Ok(points
                    .iter()
                    .map(|p| {
                        let mut report = EstimateReport::new(
                            format!("{}(s={})", q.key(), p.s),
                            p.estimate,
                            Estimate::exact(p.target),
                        );
                        report.z_score = p.excess_z();
                        let verdict = if p.passes(Z_THRESHOLD) {
                            Verdict::Pass
                        } else {
                            Verdict::Fail
                        };
                        self.ctx.row(label, &report, verdict)
                    })
                    .collect())
            }
            (Quantity::Unnormalized, FlowSet::Cylinder(c)) => {
                one(unnormalized_identity_check(flow, c, mc)?)
            }
            (Quantity::Linearity, FlowSet::Cylinder(c)) => {
                let scan = linearity_scan(flow, c, &self.cfg.c_list)?;
                let report = EstimateReport::new(
                    q.key(),
                    Estimate::exact(scan.slope),
                    Estimate::exact(scan.expected_slope),
                );
                Ok(vec![self.ctx.exact(label, &report, scan.passes())])
            }
            (Quantity::OracleSuite, set) => self.oracle_rows(named, set, mc),
            _ => Ok(Vec::new()),
        }
    }

    fn oracle_rows(&self, named: &NamedSet, set: &FlowSet, mc: &McConfig) -> kacflow::Result<Vec<Row>> {
        let flow = self.flow();
        let (Some(model), BaseSet::States(states)) = (self.rational_model()?, set.base()) else {
            return Ok(Vec::new());
        };
        let label = named.label.as_str();
        match set {
            FlowSet::Cylinder(c) => {
                let cyl = RationalCylinder::new(states.clone(), lift(c.t1())?, lift(c.t2())?);
                let verdict = oracle_full_identity_suite(&model, &cyl)?;
                let float = cylinder_rhs(flow, c)?.mean;
                let exact = to_f64(&verdict.mean_return);
                let report = EstimateReport::new(
                    "oracle_suite",
                    Estimate::exact(float),
                    Estimate::exact(exact),
                );
                let holds =
                    verdict.all_exact() && relative_gap(float, exact) <= ALGEBRAIC_TOLERANCE;
                Ok(vec![self.ctx.exact(label, &report, holds)])
            }
            FlowSet::Graph(g) => {
                let n = model.len();
                let lower = per_state(named.spec.h1.as_ref(), n)?;
                let upper = match (&named.spec.h2, named.spec.width, &lower) {
                    (Some(h2), _, _) => per_state(Some(h2), n)?,
                    (None, Some(w), Some(lower)) => {
                        let w = lift(w)?;
                        Some(lower.iter().map(|h| h + &w).collect())
                    }
                    _ => None,
                };
                let (Some(lower), Some(upper)) = (lower, upper) else {
                    return Ok(Vec::new());
                };
                let graph = RationalGraph {
                    states: states.clone(),
                    lower,
                    upper,
                };
                let (direct, terms) = oracle_graph_mean_return(&model, &graph)?;
                let float = graph_rhs(flow, g, mc)?.total.mean;
                let exact = to_f64(&direct);
                let report = EstimateReport::new(
                    "oracle_suite",
                    Estimate::exact(float),
                    Estimate::exact(exact),
                );
                let holds = direct == terms && relative_gap(float, exact) <= ALGEBRAIC_TOLERANCE;
                Ok(vec![self.ctx.exact(label, &report, holds)])
            }
        }
    }

    /// The exact model behind a permutation flow, when every weight and roof
    /// value has a short rational form.
    fn rational_model(&self) -> kacflow::Result<Option<RationalFlowModel>> {
        let flow = self.flow();
        let (StateSpace::Finite(n), Some((table, weights))) =
            (flow.base().state_space(), flow.base().permutation_table())
        else {
            return Ok(None);
        };
        let weights = weights.iter().map(|&w| lift(w)).collect::<kacflow::Result<Vec<_>>>()?;
        let roof = (0..n)
            .map(|i| flow.tau(Point::State(i)).and_then(lift))
            .collect::<kacflow::Result<Vec<_>>>()?;
        RationalFlowModel::new(table.to_vec(), weights, roof).map(Some)
    }
}

fn not_applicable_reason(q: Quantity) -> &'static str {
    match q {
        Quantity::RhsCylinder | Quantity::ExitLimit | Quantity::Unnormalized | Quantity::Linearity => {
            "it needs a cylinder set"
        }
        Quantity::RhsGraph => "it needs a graph set",
        Quantity::EntropyQuotient => "the base system has zero entropy",
        Quantity::OracleSuite => {
            "it needs a permutation system and sets over states with per-state boundaries"
        }
        Quantity::MeanReturn | Quantity::CrossSection => "no sets are configured",
    }
}

fn lift(x: f64) -> kacflow::Result<Rational> {
    rationalize(x, 1e-12 * x.abs().max(1.0), MAX_DENOMINATOR).ok_or_else(|| {
        kacflow::Error::InvalidModel(format!("{x} has no short rational form"))
    })
}

/// Per-state boundary values as rationals; `None` for closed forms.
fn per_state(spec: Option<&BoundarySpec>, n: usize) -> kacflow::Result<Option<Vec<Rational>>> {
    match spec {
        Some(BoundarySpec::Value(v)) => Ok(Some(vec![lift(*v)?; n])),
        Some(BoundarySpec::PerState(v)) if v.len() == n => {
            v.iter().map(|&x| lift(x)).collect::<kacflow::Result<Vec<_>>>().map(Some)
        }
        _ => Ok(None),
    }
}

/// Runs a config; the rows carry their own pass/fail verdicts.
pub fn run_experiment(cfg: &ExperimentConfig, timing: bool) -> Result<Vec<Row>, RunError> {
    Runner::new(cfg, timing)?.run()
}
