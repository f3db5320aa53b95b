//! Closed-form functions of the point coordinate `x` read from config text.

use exmex::prelude::*;
use kacflow::PointFn;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ExprError {
    #[error("cannot parse `{text}`: {reason}")]
    Parse { text: String, reason: String },
    #[error("`{text}` uses variable `{name}`; only `x` is available")]
    UnknownVariable { text: String, name: String },
}

/// Compiles `text` into a function of `x`. Expressions without variables
/// become constants.
pub fn compile(text: &str) -> Result<PointFn, ExprError> {
    let parsed = exmex::parse::<f64>(text).map_err(|e| ExprError::Parse {
        text: text.to_string(),
        reason: e.to_string(),
    })?;
    match parsed.var_names() {
        [] => {
            let value = parsed.eval(&[]).map_err(|e| ExprError::Parse {
                text: text.to_string(),
                reason: e.to_string(),
            })?;
            Ok(PointFn::Constant(value))
        }
        [name] if name == "x" => Ok(PointFn::expr(move |x| parsed.eval(&[x]).unwrap_or(f64::NAN))),
        names => {
            let name = names.iter().find(|n| *n != "x").cloned().unwrap_or_default();
            Err(ExprError::UnknownVariable {
                text: text.to_string(),
                name,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use kacflow::Point;

    #[test]
    fn compiles_closed_forms() {
        let f = compile("2 + cos(2*PI*x)").unwrap();
        assert_eq!(f.eval(Point::Real(0.0)), 3.0);
        assert!((f.eval(Point::Real(0.5)) - 1.0).abs() < 1e-15);
        let g = compile("x/2 + 1/4").unwrap();
        assert_eq!(g.eval(Point::Real(0.2)), 0.35);
        assert!(matches!(compile("0.5 * 3"), Ok(PointFn::Constant(c)) if c == 1.5));
    }

    #[test]
    fn rejects_bad_text() {
        assert!(matches!(compile("2 + (x"), Err(ExprError::Parse { .. })));
        assert!(matches!(
            compile("x + y"),
            Err(ExprError::UnknownVariable { name, .. }) if name == "y"
        ));
    }
}
