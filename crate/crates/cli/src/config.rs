//! Experiment configuration.
//!
//! A TOML document:
//!
//! ```toml
//! id = "doubling-half"
//! samples = 1000000
//! seed = 42
//! workers = 4
//! quantities = ["mean_return", "rhs_A", "helmberg"]
//! s_list = [0.1, 0.05, 0.01]        # exit widths, for helmberg
//! c_list = [1.0, 1.5, 2.0, 3.0]     # roof scales, for linearity
//!
//! [output]
//! path = "report.csv"               # stdout when absent
//! format = "csv"                    # or "json"
//!
//! [system]
//! catalog = "doubling"              # or kind = "expanding" | "rotation" | "permutation"
//!
//! [roof]
//! constant = 1.0                    # or values, pieces, expr
//!
//! [[sets]]
//! name = "half"
//! base = { intervals = [[0.0, 0.5]] }
//! t1 = 0.0
//! t2 = 1.0
//! ```
//!
//! Systems: `kind = "expanding"` with `weights`; `kind = "rotation"` with
//! `alpha`; `kind = "permutation"` with `table` and optional `weights`
//! (uniform by default). Roofs: `constant`; per-state `values`; `pieces` as
//! `[{ base = ..., value = ... }]` with optional `lower_bound`; or `expr` in `x`
//! with `lower_bound`, `sup` and `integral` (a number, or `"montecarlo"`).
//! Base sets: `"full"`, `{ intervals = [[a, b], ...] }`, `{ prefix = [d, ...] }`
//! or `{ states = [i, ...] }`. A set with `t1`/`t2` is a cylinder; a set with
//! `h1` and either `h2` or `width` is a graph set, where boundaries are
//! numbers, expressions in `x`, or per-state value lists.

use std::fmt;
use std::path::PathBuf;

use kacflow::base::StateSpace;
use kacflow::{
    BaseSet, BaseSystem, CylinderSet, FlowSet, GraphSet, McConfig, Point, PointFn, Roof,
    RoofIntegral, SuspensionFlow,
};
use serde::Deserialize;

use crate::expr;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{0}")]
    Parse(#[from] toml::de::Error),
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("[system] {0}")]
    System(String),
    #[error("[roof] {0}")]
    Roof(String),
    #[error("sets[{index}] {message}")]
    Set { index: usize, message: String },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Expr(#[from] expr::ExprError),
    #[error(transparent)]
    Model(#[from] kacflow::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

impl std::str::FromStr for Format {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(format!("unknown format `{other}`; expected csv or json")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Deserialize)]
pub enum Quantity {
    #[serde(rename = "mean_return")]
    MeanReturn,
    #[serde(rename = "rhs_A")]
    RhsCylinder,
    #[serde(rename = "rhs_B")]
    RhsGraph,
    #[serde(rename = "cross_section")]
    CrossSection,
    #[serde(rename = "entropy_quotient")]
    EntropyQuotient,
    #[serde(rename = "helmberg")]
    ExitLimit,
    #[serde(rename = "stat1")]
    Unnormalized,
    #[serde(rename = "linearity")]
    Linearity,
    #[serde(rename = "oracle_suite")]
    OracleSuite,
}

impl Quantity {
    pub fn key(self) -> &'static str {
        match self {
            Quantity::MeanReturn => "mean_return",
            Quantity::RhsCylinder => "rhs_A",
            Quantity::RhsGraph => "rhs_B",
            Quantity::CrossSection => "cross_section",
            Quantity::EntropyQuotient => "entropy_quotient",
            Quantity::ExitLimit => "helmberg",
            Quantity::Unnormalized => "stat1",
            Quantity::Linearity => "linearity",
            Quantity::OracleSuite => "oracle_suite",
        }
    }
}

impl fmt::Display for Quantity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_id")]
    pub id: String,
    #[serde(default = "default_samples")]
    pub samples: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_workers")]
    pub workers: usize,
    pub quantities: Vec<Quantity>,
    #[serde(default)]
    pub s_list: Vec<f64>,
    #[serde(default)]
    pub c_list: Vec<f64>,
    #[serde(default)]
    pub output: OutputSpec,
    pub system: SystemSpec,
    pub roof: RoofSpec,
    #[serde(default)]
    pub sets: Vec<SetSpec>,
}

fn default_id() -> String {
    "experiment".into()
}

fn default_samples() -> u64 {
    1_000_000
}

fn default_workers() -> usize {
    1
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub format: Format,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    pub catalog: Option<String>,
    pub kind: Option<String>,
    pub weights: Option<Vec<f64>>,
    pub alpha: Option<f64>,
    pub table: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum IntegralSpec {
    Value(f64),
    Method(String),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoofSpec {
    pub constant: Option<f64>,
    pub values: Option<Vec<f64>>,
    pub pieces: Option<Vec<PieceSpec>>,
    pub expr: Option<String>,
    pub lower_bound: Option<f64>,
    pub sup: Option<f64>,
    pub integral: Option<IntegralSpec>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PieceSpec {
    pub base: BaseSpec,
    pub value: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum BaseSpec {
    Named(String),
    Table(BaseTable),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaseTable {
    pub intervals: Option<Vec<[f64; 2]>>,
    pub prefix: Option<Vec<u32>>,
    pub states: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum BoundarySpec {
    Value(f64),
    Expr(String),
    PerState(Vec<f64>),
}

impl fmt::Display for BoundarySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BoundarySpec::Value(v) => write!(f, "{v}"),
            BoundarySpec::Expr(e) => f.write_str(e),
            BoundarySpec::PerState(v) => write!(f, "{v:?}"),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SetSpec {
    pub name: Option<String>,
    pub base: BaseSpec,
    pub t1: Option<f64>,
    pub t2: Option<f64>,
    pub h1: Option<BoundarySpec>,
    pub h2: Option<BoundarySpec>,
    pub width: Option<f64>,
    pub width_bound: Option<f64>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn mc(&self) -> McConfig {
        McConfig::new(self.samples, self.seed).with_workers(self.workers)
    }
}

/// A set built from config, with the label used in reports.
#[derive(Debug, Clone)]
pub struct NamedSet {
    pub label: String,
    pub set: FlowSet,
    /// Per-state boundaries as given, for the exact oracle.
    pub spec: SetSpec,
}

/// The flow, its sets and their report labels.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub system_label: String,
    pub roof_label: String,
    pub flow: SuspensionFlow,
    pub sets: Vec<NamedSet>,
}

pub fn build_system(spec: &SystemSpec) -> Result<(BaseSystem, String), ConfigError> {
    if let Some(name) = &spec.catalog {
        if spec.kind.is_some() {
            return Err(ConfigError::System("give either `catalog` or `kind`, not both".into()));
        }
        let sys = kacflow::catalog::lookup(name).ok_or_else(|| {
            let known: Vec<&str> = kacflow::catalog::entries().iter().map(|e| e.name).collect();
            ConfigError::System(format!("unknown catalog system `{name}`; known: {}", known.join(", ")))
        })?;
        return Ok((sys, name.clone()));
    }
    let kind = spec
        .kind
        .as_deref()
        .ok_or_else(|| ConfigError::System("needs `catalog` or `kind`".into()))?;
    let sys = match kind {
        "expanding" => {
            let w = spec
                .weights
                .clone()
                .ok_or_else(|| ConfigError::System("expanding maps need `weights`".into()))?;
            BaseSystem::expanding(w)?
        }
        "rotation" => {
            let alpha = spec
                .alpha
                .ok_or_else(|| ConfigError::System("rotations need `alpha`".into()))?;
            BaseSystem::rotation(alpha)?
        }
        "permutation" => {
            let table = spec
                .table
                .clone()
                .ok_or_else(|| ConfigError::System("permutations need `table`".into()))?;
            let n = table.len();
            let weights = spec
                .weights
                .clone()
                .unwrap_or_else(|| vec![1.0 / n.max(1) as f64; n]);
            BaseSystem::permutation(table, weights)?
        }
        other => {
            return Err(ConfigError::System(format!(
                "unknown kind `{other}`; expected expanding, rotation or permutation"
            )))
        }
    };
    let label = sys.describe();
    Ok((sys, label))
}

pub fn build_base(spec: &BaseSpec, sys: &BaseSystem) -> Result<BaseSet, String> {
    match spec {
        BaseSpec::Named(name) if name == "full" => Ok(sys.full_set()),
        BaseSpec::Named(name) => Err(format!("unknown base set `{name}`; expected \"full\" or a table")),
        BaseSpec::Table(t) => {
            let given = [t.intervals.is_some(), t.prefix.is_some(), t.states.is_some()];
            if given.iter().filter(|&&g| g).count() != 1 {
                return Err("base needs exactly one of `intervals`, `prefix`, `states`".into());
            }
            if let Some(iv) = &t.intervals {
                BaseSet::intervals(iv.iter().map(|&[a, b]| (a, b)).collect()).map_err(|e| e.to_string())
            } else if let Some(prefix) = &t.prefix {
                let m = sys
                    .branch_weights()
                    .ok_or("digit prefixes need an expanding system")?
                    .len() as u32;
                BaseSet::prefix(m, prefix.clone()).map_err(|e| e.to_string())
            } else {
                Ok(BaseSet::states(t.states.clone().unwrap_or_default()))
            }
        }
    }
}

fn describe_base(spec: &BaseSpec) -> String {
    match spec {
        BaseSpec::Named(n) => n.clone(),
        BaseSpec::Table(t) => {
            if let Some(iv) = &t.intervals {
                iv.iter()
                    .map(|[a, b]| format!("[{a},{b})"))
                    .collect::<Vec<_>>()
                    .join("u")
            } else if let Some(p) = &t.prefix {
                format!("prefix{}", p.iter().map(u32::to_string).collect::<String>())
            } else {
                format!("states{:?}", t.states.clone().unwrap_or_default())
            }
        }
    }
}

pub fn build_roof(spec: &RoofSpec, sys: &BaseSystem, mc: &McConfig) -> Result<(Roof, f64, String), ConfigError> {
    let forms = [
        spec.constant.is_some(),
        spec.values.is_some(),
        spec.pieces.is_some(),
        spec.expr.is_some(),
    ];
    if forms.iter().filter(|&&f| f).count() != 1 {
        return Err(ConfigError::Roof(
            "needs exactly one of `constant`, `values`, `pieces`, `expr`".into(),
        ));
    }
    let roof = if let Some(c) = spec.constant {
        Roof::constant(c)?
    } else if let Some(values) = &spec.values {
        Roof::per_state(values)?
    } else if let Some(pieces) = &spec.pieces {
        let parts = pieces
            .iter()
            .map(|p| build_base(&p.base, sys).map(|b| (b, p.value)))
            .collect::<Result<Vec<_>, _>>()
            .map_err(ConfigError::Roof)?;
        let lb = spec
            .lower_bound
            .unwrap_or_else(|| parts.iter().map(|p| p.1).fold(f64::INFINITY, f64::min));
        Roof::piecewise(parts, lb)?
    } else {
        let text = spec.expr.as_deref().expect("one form is present");
        let lb = spec
            .lower_bound
            .ok_or_else(|| ConfigError::Roof("closed-form roofs need `lower_bound`".into()))?;
        let integral = match &spec.integral {
            Some(IntegralSpec::Value(v)) => RoofIntegral::Analytic(*v),
            Some(IntegralSpec::Method(m)) if m == "montecarlo" => {
                RoofIntegral::MonteCarlo(mc.derive(0x0001_0000))
            }
            Some(IntegralSpec::Method(m)) => {
                return Err(ConfigError::Roof(format!(
                    "integral `{m}`: give a number or \"montecarlo\""
                )))
            }
            None => {
                return Err(ConfigError::Roof(
                    "closed-form roofs need `integral` (a number or \"montecarlo\")".into(),
                ))
            }
        };
        Roof::from_fn(expr::compile(text)?, lb, integral)?
    };
    let sup = match (spec.sup, roof.exact_sup()) {
        (Some(s), _) => s,
        (None, Some(s)) => s,
        (None, None) => return Err(ConfigError::Roof("closed-form roofs need `sup`".into())),
    };
    let label = if let Some(c) = spec.constant {
        format!("constant({c})")
    } else if let Some(v) = &spec.values {
        format!("per-state{v:?}")
    } else if let Some(p) = &spec.pieces {
        let parts: Vec<String> = p
            .iter()
            .map(|p| format!("{}:{}", describe_base(&p.base), p.value))
            .collect();
        format!("piecewise({})", parts.join(";"))
    } else {
        spec.expr.clone().unwrap_or_default()
    };
    Ok((roof, sup, label))
}

fn boundary(spec: &BoundarySpec) -> Result<PointFn, ConfigError> {
    Ok(match spec {
        BoundarySpec::Value(v) => PointFn::Constant(*v),
        BoundarySpec::Expr(e) => expr::compile(e)?,
        BoundarySpec::PerState(v) => PointFn::per_state(v),
    })
}

fn build_set(index: usize, spec: &SetSpec, sys: &BaseSystem) -> Result<NamedSet, ConfigError> {
    let err = |message: String| ConfigError::Set { index, message };
    let base = build_base(&spec.base, sys).map_err(err)?;
    let base_label = describe_base(&spec.base);
    let cylinder = spec.t1.is_some() || spec.t2.is_some();
    let graph = spec.h1.is_some() || spec.h2.is_some() || spec.width.is_some();
    let (set, shape) = match (cylinder, graph) {
        (true, false) => {
            let (Some(t1), Some(t2)) = (spec.t1, spec.t2) else {
                return Err(err("cylinders need both `t1` and `t2`".into()));
            };
            let c = CylinderSet::new(base, t1, t2).map_err(|e| err(e.to_string()))?;
            (FlowSet::Cylinder(c), format!("[{t1},{t2})"))
        }
        (false, true) => {
            let h1_spec = spec
                .h1
                .as_ref()
                .ok_or_else(|| err("graph sets need `h1`".into()))?;
            let lower = boundary(h1_spec)?;
            let (g, upper_label) = match (&spec.h2, spec.width) {
                (Some(h2), None) => (GraphSet::new(base, lower, boundary(h2)?), h2.to_string()),
                (None, Some(c)) => (
                    GraphSet::parallel(base, lower, c).map_err(|e| err(e.to_string()))?,
                    format!("h1+{c}"),
                ),
                _ => return Err(err("graph sets need exactly one of `h2`, `width`".into())),
            };
            let g = match spec.width_bound {
                Some(b) => g.with_width_bound(b),
                None => g,
            };
            (FlowSet::Graph(g), format!("[{h1_spec},{upper_label})"))
        }
        _ => {
            return Err(err(
                "a set is either a cylinder (`t1`, `t2`) or a graph set (`h1` with `h2` or `width`)"
                    .into(),
            ))
        }
    };
    let label = spec
        .name
        .clone()
        .unwrap_or_else(|| format!("{base_label}x{shape}"));
    Ok(NamedSet {
        label,
        set,
        spec: spec.clone(),
    })
}

/// Grid points used to check a roof against its declared bounds up front.
const ROOF_PROBES: usize = 4096;

/// Evaluates the roof on every state or on a midpoint grid, so a roof that
/// dips below its declared lower bound fails before any sampling.
fn probe_roof(flow: &SuspensionFlow) -> Result<(), kacflow::Error> {
    match flow.base().state_space() {
        StateSpace::Finite(n) => (0..n).try_for_each(|i| flow.tau(Point::State(i)).map(drop)),
        StateSpace::Continuous => (0..ROOF_PROBES).try_for_each(|k| {
            let x = (k as f64 + 0.5) / ROOF_PROBES as f64;
            flow.tau(Point::Real(x)).map(drop)
        }),
    }
}

impl ExperimentConfig {
    /// Builds the flow and every set, checking each set against the roof
    /// before any sampling happens.
    pub fn build(&self) -> Result<Experiment, ConfigError> {
        if self.samples == 0 || self.workers == 0 {
            return Err(ConfigError::Invalid("`samples` and `workers` must be positive".into()));
        }
        if self.quantities.is_empty() {
            return Err(ConfigError::Invalid("`quantities` is empty".into()));
        }
        let (sys, system_label) = build_system(&self.system)?;
        let (roof, sup, roof_label) = build_roof(&self.roof, &sys, &self.mc())?;
        let flow = SuspensionFlow::new(sys, roof, sup)?;
        probe_roof(&flow)?;
        let sets = self
            .sets
            .iter()
            .enumerate()
            .map(|(i, s)| build_set(i, s, flow.base()))
            .collect::<Result<Vec<_>, _>>()?;
        for (index, s) in sets.iter().enumerate() {
            s.set.validate(&flow).map_err(|e| ConfigError::Set {
                index,
                message: format!("`{}`: {e}", s.label),
            })?;
        }
        Ok(Experiment {
            system_label,
            roof_label,
            flow,
            sets,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const DOUBLING: &str = r#"
        id = "t"
        samples = 1000
        quantities = ["mean_return"]
        [system]
        catalog = "doubling"
        [roof]
        constant = 1.0
        [[sets]]
        base = { intervals = [[0.0, 0.5]] }
        t1 = 0.0
        t2 = 1.0
        [[sets]]
        base = { intervals = [[0.0, 0.5]] }
        h1 = "x/2"
        width = 0.25
    "#;

    #[test]
    fn builds_sets() {
        let cfg = ExperimentConfig::from_toml(DOUBLING).unwrap();
        let exp = cfg.build().unwrap();
        assert_eq!(exp.sets.len(), 2);
        assert_eq!(exp.sets[0].label, "[0,0.5)x[0,1)");
        assert_eq!(exp.sets[1].label, "[0,0.5)x[x/2,h1+0.25)");
        assert!(matches!(exp.sets[1].set, FlowSet::Graph(_)));
    }

    #[test]
    fn parse_errors_carry_lines() {
        let err = ExperimentConfig::from_toml("quantities = [\"mean_return\"]\n[system\n").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        let err = ExperimentConfig::from_toml("quantities = [\"nope\"]").unwrap_err();
        assert!(err.to_string().contains("nope"), "{err}");
    }

    #[test]
    fn validation_names_the_constraint() {
        let text = DOUBLING.replace("t2 = 1.0", "t2 = 1.5");
        let err = ExperimentConfig::from_toml(&text).unwrap().build().unwrap_err();
        assert!(err.to_string().contains("exceeds the roof minimum"), "{err}");
    }

    #[test]
    fn closed_form_roofs() {
        let text = r#"
            quantities = ["cross_section"]
            [system]
            kind = "rotation"
            alpha = 0.6180339887
            [roof]
            expr = "2 + cos(2*PI*x)"
            lower_bound = 1.0
            sup = 3.0
            integral = 2.0
        "#;
        let exp = ExperimentConfig::from_toml(text).unwrap().build().unwrap();
        assert_eq!(exp.flow.roof_integral(), 2.0);
        let missing = text.replace("integral = 2.0", "");
        assert!(ExperimentConfig::from_toml(&missing).unwrap().build().is_err());
    }
}
