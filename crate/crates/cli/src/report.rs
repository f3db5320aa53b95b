//! Report rows and their CSV/JSON encodings.

use std::io::Write;

use kacflow::formulas::EstimateReport;
use serde::Serialize;

use crate::config::Format;

/// Absolute z above which a statistical comparison fails.
pub const Z_THRESHOLD: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    /// Statistical comparison within the threshold.
    Pass,
    /// Exact or algebraic comparison that held.
    Exact,
    Fail,
}

impl Verdict {
    pub fn is_failure(self) -> bool {
        self == Verdict::Fail
    }
}

/// One `(set, quantity)` result.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Row {
    pub experiment_id: String,
    pub system: String,
    pub roof: String,
    pub set: String,
    pub quantity: String,
    pub mc_estimate: f64,
    pub mc_stderr: f64,
    pub analytic_value: f64,
    pub z_score: f64,
    pub n_samples: u64,
    pub discarded: u64,
    pub seed: u64,
    pub workers: usize,
    pub wall_time_ms: Option<u64>,
    pub analytic_stderr: f64,
    pub verdict: Verdict,
}

/// Fields shared by every row of one experiment.
#[derive(Debug, Clone, Default)]
pub struct RowContext {
    pub experiment_id: String,
    pub system: String,
    pub roof: String,
    pub seed: u64,
    pub workers: usize,
}

impl RowContext {
    /// A row from a statistical comparison; it passes within [`Z_THRESHOLD`].
    pub fn statistical(&self, set: &str, report: &EstimateReport) -> Row {
        let verdict = if report.passes(Z_THRESHOLD) {
            Verdict::Pass
        } else {
            Verdict::Fail
        };
        self.row(set, report, verdict)
    }

    /// A row from an exact comparison decided by `holds`.
    pub fn exact(&self, set: &str, report: &EstimateReport, holds: bool) -> Row {
        let verdict = if holds { Verdict::Exact } else { Verdict::Fail };
        self.row(set, report, verdict)
    }

    pub fn row(&self, set: &str, r: &EstimateReport, verdict: Verdict) -> Row {
        Row {
            experiment_id: self.experiment_id.clone(),
            system: self.system.clone(),
            roof: self.roof.clone(),
            set: set.to_string(),
            quantity: r.quantity.clone(),
            mc_estimate: r.mc_estimate,
            mc_stderr: r.mc_stderr,
            analytic_value: r.analytic_value,
            z_score: r.z_score,
            n_samples: r.n_samples,
            discarded: r.discarded,
            seed: self.seed,
            workers: self.workers,
            wall_time_ms: None,
            analytic_stderr: r.analytic_stderr,
            verdict,
        }
    }
}

pub fn any_failure(rows: &[Row]) -> bool {
    rows.iter().any(|r| r.verdict.is_failure())
}

pub fn write_rows<W: Write>(rows: &[Row], format: Format, out: W) -> anyhow::Result<()> {
    match format {
        Format::Csv => {
            let mut w = csv::Writer::from_writer(out);
            for row in rows {
                w.serialize(row)?;
            }
            w.flush()?;
        }
        Format::Json => {
            let mut out = out;
            serde_json::to_writer_pretty(&mut out, rows)?;
            writeln!(out)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use kacflow::Estimate;

    fn sample_row() -> Row {
        let ctx = RowContext {
            experiment_id: "e".into(),
            system: "doubling".into(),
            roof: "constant(1)".into(),
            seed: 42,
            workers: 4,
        };
        let mc = Estimate {
            mean: 1.501,
            stderr: 0.0015,
            n: 1_000_000,
            discarded: 0,
        };
        let report = EstimateReport::new("mean_return", mc, Estimate::exact(1.5));
        ctx.statistical("half", &report)
    }

    #[test]
    fn csv_header_and_blank_wall_time() {
        let mut buf = Vec::new();
        write_rows(&[sample_row()], Format::Csv, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "experiment_id,system,roof,set,quantity,mc_estimate,mc_stderr,analytic_value,z_score,\
             n_samples,discarded,seed,workers,wall_time_ms,analytic_stderr,verdict"
        );
        let row = lines.next().unwrap();
        assert!(row.contains(",42,4,,0.0,pass"), "{row}");
    }

    #[test]
    fn json_mirrors_rows() {
        let mut buf = Vec::new();
        write_rows(&[sample_row()], Format::Json, &mut buf).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&buf).unwrap();
        assert_eq!(v[0]["quantity"], "mean_return");
        assert_eq!(v[0]["verdict"], "pass");
        assert!(v[0]["wall_time_ms"].is_null());
    }
}
