//! Exact ground truth on finite permutation systems.
//!
//! Every return time on a finite orbit is an exact integer and every roof sum
//! an exact rational, so mean returns, Kac sums and the exit-region limit can
//! be computed with no rounding at all. Hitting times are affine in the fiber
//! height, which turns each fiber integral into a closed form.

use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::base::{cycles, BaseSet, BaseSystem};
use crate::error::{Error, Result};
use crate::formulas::closed_form;
use crate::roof::Roof;

pub type Rational = BigRational;

pub fn ratio(num: i64, den: i64) -> Rational {
    Rational::new(BigInt::from(num), BigInt::from(den))
}

/// A permutation of `n` states with exact weights and roof values.
#[derive(Debug, Clone, PartialEq)]
pub struct RationalFlowModel {
    table: Vec<usize>,
    weights: Vec<Rational>,
    roof: Vec<Rational>,
}

impl RationalFlowModel {
    /// Checks bijectivity, normalization, invariance (weights constant along
    /// cycles), ergodicity (mass on one cycle) and positivity of the roof.
    pub fn new(table: Vec<usize>, weights: Vec<Rational>, roof: Vec<Rational>) -> Result<Self> {
        let n = table.len();
        if n == 0 || weights.len() != n || roof.len() != n {
            return Err(Error::InvalidModel(format!(
                "need equal, nonzero lengths; got {n} states, {} weights, {} roof values",
                weights.len(),
                roof.len()
            )));
        }
        let mut seen = vec![false; n];
        for &j in &table {
            if j >= n || std::mem::replace(&mut seen[j], true) {
                return Err(Error::InvalidModel(format!("table {table:?} is not a bijection")));
            }
        }
        if weights.iter().any(Signed::is_negative) {
            return Err(Error::InvalidModel("weights must be nonnegative".into()));
        }
        let total: Rational = weights.iter().sum();
        if !total.is_one() {
            return Err(Error::InvalidModel(format!("weights sum to {total}, not 1")));
        }
        if let Some((i, r)) = roof.iter().enumerate().find(|(_, r)| !r.is_positive()) {
            return Err(Error::InvalidModel(format!("roof value {r} at state {i} is not positive")));
        }
        let mut charged = 0;
        for cycle in cycles(&table) {
            let w = &weights[cycle[0]];
            if cycle.iter().any(|&s| &weights[s] != w) {
                return Err(Error::InvalidModel(format!(
                    "weights vary along cycle {cycle:?}; the measure is not invariant"
                )));
            }
            charged += usize::from(w.is_positive());
        }
        if charged != 1 {
            return Err(Error::InvalidModel(format!(
                "mass is spread over {charged} cycles; the measure is not ergodic"
            )));
        }
        Ok(Self {
            table,
            weights,
            roof,
        })
    }

    /// The `n`-cycle `i -> i+1 mod n` with uniform weights.
    pub fn cycle(roof: Vec<Rational>) -> Result<Self> {
        let n = roof.len();
        Self::new(
            (0..n).map(|i| (i + 1) % n).collect(),
            vec![ratio(1, n as i64); n],
            roof,
        )
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    pub fn table(&self) -> &[usize] {
        &self.table
    }

    pub fn weights(&self) -> &[Rational] {
        &self.weights
    }

    pub fn roof(&self) -> &[Rational] {
        &self.roof
    }

    /// States carrying positive weight.
    pub fn support(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.weights[i].is_positive()).collect()
    }

    /// `int tau dmu`.
    pub fn roof_integral(&self) -> Rational {
        self.weights.iter().zip(&self.roof).map(|(w, r)| w * r).sum()
    }

    pub fn measure(&self, states: &[usize]) -> Rational {
        states.iter().map(|&s| self.weights[s].clone()).sum()
    }

    pub fn min_roof(&self, states: &[usize]) -> Option<Rational> {
        states.iter().map(|&s| self.roof[s].clone()).min()
    }

    /// `(n_I(x), tau^{n_I}(x), f^{n_I}(x))`; `None` if the orbit of `x`
    /// never meets `pred`.
    fn first_return<P: Fn(usize) -> bool>(&self, x: usize, pred: P) -> Option<(u64, Rational, usize)> {
        let mut sum = Rational::zero();
        let mut y = x;
        for k in 1..=self.len() as u64 {
            sum += &self.roof[y];
            y = self.table[y];
            if pred(y) {
                return Some((k, sum, y));
            }
        }
        None
    }

    fn check_states(&self, states: &[usize]) -> Result<()> {
        if let Some(&s) = states.iter().find(|&&s| s >= self.len()) {
            return Err(Error::InvalidModel(format!("state {s} out of range")));
        }
        if self.measure(states).is_zero() {
            return Err(Error::EmptyProjection);
        }
        Ok(())
    }

    /// The floating-point system with the same table and weights.
    pub fn base_system(&self) -> Result<BaseSystem> {
        BaseSystem::permutation(self.table.clone(), self.weights.iter().map(to_f64).collect())
    }

    /// The floating-point roof with the same values.
    pub fn float_roof(&self) -> Result<Roof> {
        Roof::per_state(&self.roof.iter().map(to_f64).collect::<Vec<_>>())
    }

    pub fn float_states(states: &[usize]) -> BaseSet {
        BaseSet::states(states.iter().copied())
    }
}

pub fn to_f64(r: &Rational) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

/// The first continued-fraction convergent of `x` within `tol`, provided its
/// denominator stays at most `max_den`. Lifts decimal config values such as
/// `0.3333333333333333` back to `1/3`.
pub fn rationalize(x: f64, tol: f64, max_den: i64) -> Option<Rational> {
    if !x.is_finite() {
        return None;
    }
    let (mut h_prev, mut h) = (0i128, 1i128);
    let (mut k_prev, mut k) = (1i128, 0i128);
    let mut rest = x;
    for _ in 0..64 {
        let a = rest.floor();
        if a.abs() > 1e15 {
            return None;
        }
        let a = a as i128;
        (h_prev, h) = (h, a * h + h_prev);
        (k_prev, k) = (k, a * k + k_prev);
        if k > i128::from(max_den) {
            return None;
        }
        if (h as f64 / k as f64 - x).abs() <= tol {
            return Some(Rational::new(BigInt::from(h), BigInt::from(k)));
        }
        let frac = rest - a as f64;
        if frac == 0.0 {
            return None;
        }
        rest = 1.0 / frac;
    }
    None
}

/// A cylinder `I x [t1, t2)` over finite states with rational heights.
#[derive(Debug, Clone, PartialEq)]
pub struct RationalCylinder {
    pub states: Vec<usize>,
    pub t1: Rational,
    pub t2: Rational,
}

impl RationalCylinder {
    pub fn new(states: Vec<usize>, t1: Rational, t2: Rational) -> Self {
        Self { states, t1, t2 }
    }

    pub fn height(&self) -> Rational {
        &self.t2 - &self.t1
    }

    fn validate(&self, model: &RationalFlowModel) -> Result<()> {
        model.check_states(&self.states)?;
        if self.t1.is_negative() || self.t1 >= self.t2 {
            return Err(Error::InvalidFlowSet(format!(
                "need 0 <= t1 < t2, got [{}, {})",
                self.t1, self.t2
            )));
        }
        let min = model.min_roof(&self.states).expect("states are nonempty");
        if self.t2 > min {
            return Err(Error::InvalidFlowSet(format!(
                "t2 = {} exceeds the roof minimum {min}",
                self.t2
            )));
        }
        Ok(())
    }
}

/// A graph set with per-state rational boundaries.
#[derive(Debug, Clone, PartialEq)]
pub struct RationalGraph {
    pub states: Vec<usize>,
    pub lower: Vec<Rational>,
    pub upper: Vec<Rational>,
}

/// Exact mean return to a cylinder:
/// `sum_x mu_I(x) [tau^{n_I}(x) - (t1+t2)/2 + t1]`.
pub fn oracle_mean_return(model: &RationalFlowModel, cyl: &RationalCylinder) -> Result<Rational> {
    cyl.validate(model)?;
    let mass = model.measure(&cyl.states);
    let mid = (&cyl.t1 + &cyl.t2) / ratio(2, 1);
    let mut acc = Rational::zero();
    for &x in &cyl.states {
        let w = &model.weights[x];
        if w.is_zero() {
            continue;
        }
        let (_, sum, _) = model
            .first_return(x, |y| cyl.states.contains(&y))
            .expect("a charged state returns within one cycle");
        acc += w * (sum - &mid + &cyl.t1);
    }
    Ok(acc / mass)
}

/// The cylinder closed form evaluated in rationals.
pub fn oracle_cylinder_rhs(model: &RationalFlowModel, cyl: &RationalCylinder) -> Result<(Rational, Rational)> {
    cyl.validate(model)?;
    let (mass, integral) = (model.measure(&cyl.states), model.roof_integral());
    Ok((
        closed_form::cylinder_escape_form(mass.clone(), integral.clone(), cyl.t1.clone(), cyl.t2.clone()),
        closed_form::cylinder_integral_form(mass, integral, cyl.t1.clone(), cyl.t2.clone()),
    ))
}

/// `sum_{x in I} n_I(x) mu(x)`, which equals 1 for every ergodic model.
pub fn oracle_discrete_kac(model: &RationalFlowModel, states: &[usize]) -> Result<Rational> {
    model.check_states(states)?;
    let mut acc = Rational::zero();
    for &x in states {
        if model.weights[x].is_zero() {
            continue;
        }
        let (n, _, _) = model
            .first_return(x, |y| states.contains(&y))
            .expect("a charged state returns within one cycle");
        acc += &model.weights[x] * Rational::from_integer(BigInt::from(n));
    }
    Ok(acc)
}

/// Exact mean return to a graph set, by fiber integrals, together with the
/// three-term closed form evaluated in rationals.
pub fn oracle_graph_mean_return(
    model: &RationalFlowModel,
    graph: &RationalGraph,
) -> Result<(Rational, Rational)> {
    model.check_states(&graph.states)?;
    let width = |x: usize| &graph.upper[x] - &graph.lower[x];
    for &x in &graph.states {
        if graph.lower[x].is_negative() || width(x).is_negative() || graph.upper[x] > model.roof[x] {
            return Err(Error::InvalidFlowSet(format!(
                "need 0 <= h1 <= h2 <= tau at state {x}"
            )));
        }
    }
    let meets = |y: usize| graph.states.contains(&y) && width(y).is_positive();
    let two = ratio(2, 1);
    let (mut direct, mut escape, mut roof, mut correction, mut weight) = (
        Rational::zero(),
        Rational::zero(),
        Rational::zero(),
        Rational::zero(),
        Rational::zero(),
    );
    for &x in &graph.states {
        let (w, h) = (&model.weights[x], width(x));
        if w.is_zero() || !h.is_positive() {
            continue;
        }
        let (_, sum, y) = model
            .first_return(x, meets)
            .expect("a charged state returns within one cycle");
        let mid = (&graph.lower[x] + &graph.upper[x]) / &two;
        direct += w * &h * (&sum - &mid + &graph.lower[y]);
        escape += w * &h * &h / &two;
        roof += w * &h * &sum;
        correction += w * &h * (&graph.lower[y] - &graph.upper[x]);
        weight += w * &h;
    }
    if weight.is_zero() {
        return Err(Error::EmptyProjection);
    }
    Ok((&direct / &weight, (escape + roof + correction) / weight))
}

/// Exit-region estimator `(1/s) mu_bar(A_s) E[n_A | A_s]` at width `s`, exactly.
pub fn oracle_exit_estimate(
    model: &RationalFlowModel,
    cyl: &RationalCylinder,
    s: &Rational,
) -> Result<Rational> {
    cyl.validate(model)?;
    if !s.is_positive() || s > &cyl.height() {
        return Err(Error::InvalidExitWidth {
            s: to_f64(s),
            max: to_f64(&cyl.height()),
        });
    }
    let region = RationalCylinder::new(cyl.states.clone(), &cyl.t2 - s, cyl.t2.clone());
    let integral = model.roof_integral();
    let mass = model.measure(&cyl.states);
    // on A_s the hitting time of A is tau^{n_I}(x) - t + t1, t uniform on [t2 - s, t2)
    let mut mean = Rational::zero();
    let mid = (&region.t1 + &region.t2) / ratio(2, 1);
    for &x in &cyl.states {
        let w = &model.weights[x];
        if w.is_zero() {
            continue;
        }
        let (_, sum, _) = model
            .first_return(x, |y| cyl.states.contains(&y))
            .expect("a charged state returns within one cycle");
        mean += w * (sum - &mid + &cyl.t1);
    }
    mean /= &mass;
    let region_measure = closed_form::cylinder_measure(mass, integral, region.t1, region.t2);
    Ok(region_measure / s * mean)
}

/// One failed exact identity.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentityFailure {
    pub identity: &'static str,
    pub left: Rational,
    pub right: Rational,
}

impl fmt::Display for IdentityFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {} != {}", self.identity, self.left, self.right)
    }
}

/// Outcome of the exact identity suite on one model and cylinder.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteVerdict {
    pub checked: Vec<&'static str>,
    pub failures: Vec<IdentityFailure>,
    pub mean_return: Rational,
}

impl SuiteVerdict {
    pub fn all_exact(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Runs every identity that applies to the cylinder, in exact arithmetic.
///
/// The exit-region estimator is affine in the width `s`, so its limit is
/// recovered exactly from two widths and confirmed at a third.
pub fn oracle_full_identity_suite(
    model: &RationalFlowModel,
    cyl: &RationalCylinder,
) -> Result<SuiteVerdict> {
    cyl.validate(model)?;
    let mut verdict = SuiteVerdict {
        checked: Vec::new(),
        failures: Vec::new(),
        mean_return: Rational::zero(),
    };
    let mut check = |identity: &'static str, left: Rational, right: Rational| {
        verdict.checked.push(identity);
        if left != right {
            verdict.failures.push(IdentityFailure {
                identity,
                left,
                right,
            });
        }
    };

    let mass = model.measure(&cyl.states);
    let integral = model.roof_integral();
    let (t1, t2) = (cyl.t1.clone(), cyl.t2.clone());
    let bar = closed_form::cylinder_measure(mass.clone(), integral.clone(), t1.clone(), t2.clone());
    let mean = oracle_mean_return(model, cyl)?;
    let (escape_form, integral_form) = oracle_cylinder_rhs(model, cyl)?;

    check("mean return = escape form", mean.clone(), escape_form);
    check("mean return = integral form", mean.clone(), integral_form);
    check(
        "unnormalized identity",
        &bar * &mean,
        closed_form::unnormalized_rhs(bar.clone(), t1.clone(), t2.clone()),
    );
    check("discrete Kac", oracle_discrete_kac(model, &cyl.states)?, Rational::one());

    let mut section = Rational::zero();
    for &x in &cyl.states {
        if let Some((_, sum, _)) = model.first_return(x, |y| cyl.states.contains(&y)) {
            section += &model.weights[x] * sum;
        }
    }
    check(
        "cross-section mean return",
        section / &mass,
        closed_form::cross_section(integral.clone(), mass.clone()),
    );

    let support = model.support();
    let constant = support.iter().all(|&s| model.roof[s] == model.roof[support[0]]);
    if constant && t1.is_zero() && t2 == model.roof[support[0]] {
        check(
            "constant roof",
            mean.clone(),
            closed_form::constant_roof(t2.clone(), mass.clone()),
        );
    }

    let graph = RationalGraph {
        states: cyl.states.clone(),
        lower: vec![t1.clone(); model.len()],
        upper: vec![t2.clone(); model.len()],
    };
    let (graph_direct, graph_terms) = oracle_graph_mean_return(model, &graph)?;
    check("graph reduction (direct)", graph_direct, mean.clone());
    check("graph reduction (terms)", graph_terms, mean.clone());

    let height = cyl.height();
    let (s1, s2, s3) = (
        height.clone(),
        &height / ratio(2, 1),
        &height / ratio(5, 1),
    );
    let (e1, e2, e3) = (
        oracle_exit_estimate(model, cyl, &s1)?,
        oracle_exit_estimate(model, cyl, &s2)?,
        oracle_exit_estimate(model, cyl, &s3)?,
    );
    let slope = (&e1 - &e2) / (&s1 - &s2);
    let limit = &e2 - &slope * &s2;
    check("exit-region affinity", e3, &limit + &slope * &s3);
    check(
        "exit-region limit",
        limit,
        closed_form::exit_limit_target(bar),
    );
    check(
        "exit-region offset slope",
        slope,
        closed_form::exit_limit_offset(Rational::one(), mass, integral),
    );

    verdict.mean_return = mean;
    Ok(verdict)
}

/// A random ergodic model: a random permutation of at most `max_states`
/// states, uniform weights on the cycle through state 0 and zero elsewhere,
/// and roof values `k/d` with `1 <= d <= max_den`.
pub fn random_model<R: Rng + ?Sized>(rng: &mut R, max_states: usize, max_den: i64) -> RationalFlowModel {
    let n = rng.random_range(1..=max_states.max(1));
    let mut table: Vec<usize> = (0..n).collect();
    table.shuffle(rng);
    let cycle = cycles(&table)
        .into_iter()
        .find(|c| c.contains(&0))
        .expect("state 0 lies on a cycle");
    let mut weights = vec![Rational::zero(); n];
    for &s in &cycle {
        weights[s] = ratio(1, cycle.len() as i64);
    }
    let roof = (0..n)
        .map(|_| {
            let den = rng.random_range(1..=max_den);
            let num = rng.random_range(1..=4 * den);
            ratio(num, den)
        })
        .collect();
    RationalFlowModel::new(table, weights, roof).expect("constructed to be valid")
}
