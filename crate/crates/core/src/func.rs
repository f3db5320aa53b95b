//! Real-valued functions on the cross-section (roofs, graph boundaries,
//! integrands).

use std::fmt;
use std::sync::Arc;

use crate::base::{BaseSet, Point};

pub type RealFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
pub type PointwiseFn = Arc<dyn Fn(Point) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum PointFn {
    Constant(f64),
    /// Constant on each part of a finite partition. Points outside every part
    /// evaluate to NaN.
    Piecewise(Vec<(BaseSet, f64)>),
    /// A closed form in the point coordinate (state index for finite systems).
    Expr(RealFn),
    /// An arbitrary function of the point itself, used for combinations of
    /// the other forms.
    Pointwise(PointwiseFn),
}

impl PointFn {
    pub fn expr<F>(f: F) -> Self
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        PointFn::Expr(Arc::new(f))
    }

    /// One value per finite state.
    pub fn per_state(values: &[f64]) -> Self {
        PointFn::Piecewise(
            values
                .iter()
                .enumerate()
                .map(|(i, &v)| (BaseSet::states([i]), v))
                .collect(),
        )
    }

    #[inline]
    pub fn eval(&self, x: Point) -> f64 {
        match self {
            PointFn::Constant(c) => *c,
            PointFn::Piecewise(parts) => parts
                .iter()
                .find(|(set, _)| set.contains(x))
                .map_or(f64::NAN, |&(_, v)| v),
            PointFn::Expr(f) => f(x.coord()),
            PointFn::Pointwise(f) => f(x),
        }
    }

    pub fn is_piecewise_constant(&self) -> bool {
        matches!(self, PointFn::Constant(_) | PointFn::Piecewise(_))
    }

    /// Values taken on the parts, when the function is piecewise constant.
    pub fn values(&self) -> Option<Vec<f64>> {
        match self {
            PointFn::Constant(c) => Some(vec![*c]),
            PointFn::Piecewise(parts) => Some(parts.iter().map(|p| p.1).collect()),
            PointFn::Expr(_) | PointFn::Pointwise(_) => None,
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        self.map_values(move |v| c * v)
    }

    pub fn shifted(&self, c: f64) -> Self {
        self.map_values(move |v| v + c)
    }

    fn map_values<G>(&self, g: G) -> Self
    where
        G: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        match self {
            PointFn::Constant(v) => PointFn::Constant(g(*v)),
            PointFn::Piecewise(parts) => {
                PointFn::Piecewise(parts.iter().map(|(s, v)| (s.clone(), g(*v))).collect())
            }
            PointFn::Expr(f) => {
                let f = Arc::clone(f);
                PointFn::Expr(Arc::new(move |x| g(f(x))))
            }
            PointFn::Pointwise(f) => {
                let f = Arc::clone(f);
                PointFn::Pointwise(Arc::new(move |x| g(f(x))))
            }
        }
    }
}

impl fmt::Debug for PointFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PointFn::Constant(c) => write!(f, "Constant({c})"),
            PointFn::Piecewise(parts) => f.debug_tuple("Piecewise").field(parts).finish(),
            PointFn::Expr(_) => write!(f, "Expr(..)"),
            PointFn::Pointwise(_) => write!(f, "Pointwise(..)"),
        }
    }
}

impl From<f64> for PointFn {
    fn from(c: f64) -> Self {
        PointFn::Constant(c)
    }
}
