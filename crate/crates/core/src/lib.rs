//! Suspension flows over measure-preserving base systems, with mean return
//! times to flow sets computed by Monte Carlo, closed forms and an exact
//! rational oracle.

// `!(x > 0.0)` is used on purpose to reject NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod base;
pub mod catalog;
pub mod error;
pub mod formulas;
pub mod func;
pub mod mc;
pub mod oracle;
pub mod recurrence;
pub mod roof;
pub mod scenarios;
pub mod sum;
pub mod suspension;

pub use base::{BaseSet, BaseSystem, Integration, Point, DEFAULT_MAX_STEPS};
pub use error::{Error, Result};
pub use formulas::EstimateReport;
pub use func::PointFn;
pub use mc::{Estimate, McConfig};
pub use oracle::{RationalCylinder, RationalFlowModel};
pub use recurrence::{scan_hitting_time, CylinderSet, FlowSet, GraphSet};
pub use roof::{Roof, RoofIntegral};
pub use suspension::{FlowPoint, SuspensionFlow};
