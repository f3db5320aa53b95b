//! Base maps with their ergodic invariant measures.
//!
//! Three kinds are catalogued, each with a measure that is known in closed form:
//!
//! * m-ary expanding maps `x -> m x mod 1` with a Bernoulli measure on digits,
//! * rotations `x -> x + alpha mod 1` with Lebesgue measure,
//! * permutations of a finite state set with weights constant on the support
//!   cycle.

use std::fmt;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use crate::error::{Error, Result};
use crate::func::PointFn;
use crate::mc::{self, Estimate, McConfig};
use crate::sum::CompensatedSum;

/// Default budget for base return-time searches.
pub const DEFAULT_MAX_STEPS: u64 = 10_000_000;

/// A point of the cross-section: a real in `[0,1)` or a finite state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Point {
    Real(f64),
    State(usize),
}

impl Point {
    /// Coordinate seen by closed-form functions; states map to their index.
    #[inline]
    pub fn coord(self) -> f64 {
        match self {
            Point::Real(x) => x,
            Point::State(i) => i as f64,
        }
    }
}

impl fmt::Display for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Point::Real(x) => write!(f, "{x}"),
            Point::State(i) => write!(f, "#{i}"),
        }
    }
}

/// A measurable subset of the cross-section.
#[derive(Debug, Clone, PartialEq)]
pub enum BaseSet {
    /// Disjoint half-open intervals `[a,b)` inside `[0,1)`, sorted.
    Intervals(Vec<(f64, f64)>),
    /// Points whose first base-`m` digits equal `prefix`.
    Digits { base: u32, prefix: Vec<u32> },
    /// A sorted set of finite states.
    States(Vec<usize>),
}

impl BaseSet {
    pub fn interval(a: f64, b: f64) -> Result<Self> {
        Self::intervals(vec![(a, b)])
    }

    pub fn intervals(mut parts: Vec<(f64, f64)>) -> Result<Self> {
        for &(a, b) in &parts {
            if !(0.0..=1.0).contains(&a) || !(0.0..=1.0).contains(&b) || !(a < b) {
                return Err(Error::InvalidSet(format!(
                    "interval [{a}, {b}) is empty or outside [0,1)"
                )));
            }
        }
        parts.sort_by(|p, q| p.0.total_cmp(&q.0));
        if parts.windows(2).any(|w| w[0].1 > w[1].0) {
            return Err(Error::InvalidSet("intervals overlap".into()));
        }
        Ok(BaseSet::Intervals(parts))
    }

    pub fn prefix(base: u32, prefix: Vec<u32>) -> Result<Self> {
        if base < 2 {
            return Err(Error::InvalidSet("digit base must be at least 2".into()));
        }
        if let Some(d) = prefix.iter().find(|&&d| d >= base) {
            return Err(Error::InvalidSet(format!("digit {d} out of range for base {base}")));
        }
        Ok(BaseSet::Digits { base, prefix })
    }

    pub fn states<I: IntoIterator<Item = usize>>(states: I) -> Self {
        let mut v: Vec<usize> = states.into_iter().collect();
        v.sort_unstable();
        v.dedup();
        BaseSet::States(v)
    }

    pub fn is_empty(&self) -> bool {
        match self {
            BaseSet::Intervals(v) => v.is_empty(),
            BaseSet::Digits { .. } => false,
            BaseSet::States(v) => v.is_empty(),
        }
    }

    fn label(&self) -> &'static str {
        match self {
            BaseSet::Intervals(_) => "interval",
            BaseSet::Digits { .. } => "digit-cylinder",
            BaseSet::States(_) => "state",
        }
    }

    #[inline]
    pub fn contains(&self, x: Point) -> bool {
        match (self, x) {
            (BaseSet::Intervals(parts), Point::Real(x)) => {
                parts.iter().any(|&(a, b)| a <= x && x < b)
            }
            (BaseSet::Digits { base, prefix }, Point::Real(mut y)) => {
                let m = f64::from(*base);
                for &d in prefix {
                    let z = m * y;
                    let digit = (z.floor() as u32).min(base - 1);
                    if digit != d {
                        return false;
                    }
                    y = z - f64::from(digit);
                }
                true
            }
            (BaseSet::States(v), Point::State(i)) => v.binary_search(&i).is_ok(),
            _ => false,
        }
    }

    /// The digit cylinder as an interval `[lo, lo + m^-k)`.
    fn digits_as_interval(base: u32, prefix: &[u32]) -> (f64, f64) {
        let m = f64::from(base);
        let mut lo = 0.0;
        let mut w = 1.0;
        for &d in prefix {
            w /= m;
            lo += f64::from(d) * w;
        }
        (lo, (lo + w).min(1.0))
    }

    fn as_intervals(&self) -> Option<Vec<(f64, f64)>> {
        match self {
            BaseSet::Intervals(v) => Some(v.clone()),
            BaseSet::Digits { base, prefix } => Some(vec![Self::digits_as_interval(*base, prefix)]),
            BaseSet::States(_) => None,
        }
    }

    /// Set intersection. Digit cylinders meet other cylinders exactly and
    /// intervals through their interval form.
    pub fn intersect(&self, other: &BaseSet) -> Result<BaseSet> {
        match (self, other) {
            (BaseSet::States(a), BaseSet::States(b)) => Ok(BaseSet::States(
                a.iter().copied().filter(|s| b.binary_search(s).is_ok()).collect(),
            )),
            (
                BaseSet::Digits { base: m, prefix: p },
                BaseSet::Digits { base: n, prefix: q },
            ) if m == n => {
                let (short, long) = if p.len() <= q.len() { (p, q) } else { (q, p) };
                if long.starts_with(short) {
                    Ok(BaseSet::Digits {
                        base: *m,
                        prefix: long.clone(),
                    })
                } else {
                    Ok(BaseSet::Intervals(Vec::new()))
                }
            }
            (BaseSet::States(_), _) | (_, BaseSet::States(_)) => Err(Error::InvalidSet(
                "cannot intersect state sets with subsets of [0,1)".into(),
            )),
            _ => {
                let a = self.as_intervals().unwrap_or_default();
                let b = other.as_intervals().unwrap_or_default();
                let mut out = Vec::new();
                for &(a0, a1) in &a {
                    for &(b0, b1) in &b {
                        let lo = a0.max(b0);
                        let hi = a1.min(b1);
                        if lo < hi {
                            out.push((lo, hi));
                        }
                    }
                }
                out.sort_by(|p, q| p.0.total_cmp(&q.0));
                Ok(BaseSet::Intervals(out))
            }
        }
    }
}

impl fmt::Display for BaseSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BaseSet::Intervals(v) => {
                let parts: Vec<String> = v.iter().map(|(a, b)| format!("[{a},{b})")).collect();
                if parts.is_empty() {
                    write!(f, "{{}}")
                } else {
                    write!(f, "{}", parts.join("u"))
                }
            }
            BaseSet::Digits { base, prefix } => {
                let s: Vec<String> = prefix.iter().map(|d| d.to_string()).collect();
                write!(f, "cyl{base}[{}]", s.join("."))
            }
            BaseSet::States(v) => {
                let s: Vec<String> = v.iter().map(|d| d.to_string()).collect();
                write!(f, "{{{}}}", s.join(","))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StateSpace {
    Continuous,
    Finite(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Expanding,
    Rotation,
    Permutation,
}

impl Kind {
    pub fn name(self) -> &'static str {
        match self {
            Kind::Expanding => "expanding",
            Kind::Rotation => "rotation",
            Kind::Permutation => "permutation",
        }
    }
}

#[derive(Debug, Clone)]
struct Expanding {
    weights: Vec<f64>,
    /// `cumulative[d] = p_0 + ... + p_{d-1}`, length `m + 1`.
    cumulative: Vec<f64>,
    depth: usize,
    uniform_binary: bool,
}

impl Expanding {
    fn m(&self) -> u32 {
        self.weights.len() as u32
    }

    #[inline]
    fn digit(&self, u: f64) -> u32 {
        let m = self.weights.len();
        let d = self.cumulative[1..m].partition_point(|&c| c <= u);
        d as u32
    }

    /// `x = sum d_i m^-i` from the leading digits, filling the rest i.i.d.
    fn assemble<R: Rng + ?Sized>(&self, leading: &[u32], rng: &mut R) -> f64 {
        let m = f64::from(self.m());
        let mut x = 0.0;
        if self.uniform_binary {
            let free = self.depth.saturating_sub(leading.len());
            if free > 0 {
                let bits = rng.next_u64() >> (64 - free);
                x = bits as f64 * (0.5f64).powi(free as i32);
            }
        } else {
            for _ in leading.len()..self.depth {
                let d = self.digit(rng.random::<f64>());
                x = (f64::from(d) + x) / m;
            }
        }
        for &d in leading.iter().rev() {
            x = (f64::from(d) + x) / m;
        }
        if x >= 1.0 {
            x = 1.0 - f64::EPSILON / 2.0;
        }
        x
    }

    /// Bernoulli distribution function `F(x) = mu([0,x))`.
    fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        if x >= 1.0 {
            return 1.0;
        }
        let m = self.weights.len();
        let mf = m as f64;
        let mut acc = CompensatedSum::new();
        let mut scale = 1.0;
        let mut y = x;
        for _ in 0..self.depth {
            let z = mf * y;
            let d = (z.floor() as usize).min(m - 1);
            acc += scale * self.cumulative[d];
            scale *= self.weights[d];
            y = z - d as f64;
            if y <= 0.0 {
                break;
            }
        }
        acc.value()
    }

    /// Mass of digit `d`'s cylinder inside `[a,b)`, in local coordinates.
    fn child_mass(&self, d: usize, a: f64, b: f64) -> f64 {
        let m = self.weights.len() as f64;
        let f = |v: f64| {
            let lo = d as f64 / m;
            let hi = (d + 1) as f64 / m;
            if v <= lo {
                self.cumulative[d]
            } else if v >= hi {
                self.cumulative[d + 1]
            } else {
                self.cumulative[d] + self.weights[d] * self.cdf(m * v - d as f64)
            }
        };
        (f(b) - f(a)).max(0.0)
    }

    /// Exact conditional draw from the Bernoulli measure restricted to `[a,b)`:
    /// digits are chosen by their conditional masses until the current
    /// cylinder lies inside the interval, then filled i.i.d.
    fn sample_in_interval<R: Rng + ?Sized>(&self, a: f64, b: f64, rng: &mut R) -> f64 {
        let m = self.weights.len();
        let mf = m as f64;
        let (mut a, mut b) = (a, b);
        let mut digits = Vec::with_capacity(8);
        let mut masses = vec![0.0; m];
        while digits.len() < self.depth && !(a <= 0.0 && b >= 1.0) {
            for (d, w) in masses.iter_mut().enumerate() {
                *w = self.child_mass(d, a, b);
            }
            let total: f64 = masses.iter().sum();
            let mut u = rng.random::<f64>() * total;
            let mut d = m - 1;
            for (i, &w) in masses.iter().enumerate() {
                if w > 0.0 && u < w {
                    d = i;
                    break;
                }
                u -= w;
            }
            if masses[d] == 0.0 {
                d = masses.iter().rposition(|&w| w > 0.0).unwrap_or(0);
            }
            digits.push(d as u32);
            a = mf * a - d as f64;
            b = mf * b - d as f64;
        }
        self.assemble(&digits, rng)
    }
}

#[derive(Debug, Clone)]
struct Permutation {
    table: Vec<usize>,
    weights: Vec<f64>,
    sampler: WeightedIndex<f64>,
}

#[derive(Debug, Clone)]
enum Map {
    Expanding(Expanding),
    Rotation { alpha: f64 },
    Permutation(Permutation),
}

/// A base map bundled with its ergodic invariant measure and analytic entropy.
#[derive(Debug, Clone)]
pub struct BaseSystem {
    map: Map,
    entropy: f64,
}

impl BaseSystem {
    /// `x -> m x mod 1` with Bernoulli digit weights `p_0..p_{m-1}`.
    pub fn expanding(weights: Vec<f64>) -> Result<Self> {
        let m = weights.len();
        if m < 2 {
            return Err(Error::InvalidSystem("expanding map needs at least two branches".into()));
        }
        if weights.iter().any(|&p| !(p > 0.0) || !p.is_finite()) {
            return Err(Error::InvalidSystem("Bernoulli weights must be positive".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidSystem(format!("Bernoulli weights sum to {total}, not 1")));
        }
        let mut cumulative = Vec::with_capacity(m + 1);
        let mut acc = CompensatedSum::new();
        cumulative.push(0.0);
        for &p in &weights {
            acc += p;
            cumulative.push(acc.value());
        }
        cumulative[m] = 1.0;
        let depth = if m == 2 {
            52
        } else {
            (52.0 / (m as f64).log2()).ceil() as usize
        };
        let uniform_binary = m == 2 && weights[0] == 0.5;
        let entropy = -weights.iter().map(|&p| p * p.ln()).sum::<f64>();
        Ok(Self {
            map: Map::Expanding(Expanding {
                weights,
                cumulative,
                depth,
                uniform_binary,
            }),
            entropy,
        })
    }

    /// The doubling map with Lebesgue measure.
    pub fn doubling() -> Self {
        Self::expanding(vec![0.5, 0.5]).expect("valid weights")
    }

    /// `x -> x + alpha mod 1`. `alpha` is taken verbatim; irrationality is not
    /// certified.
    pub fn rotation(alpha: f64) -> Result<Self> {
        if !alpha.is_finite() {
            return Err(Error::InvalidSystem("rotation number must be finite".into()));
        }
        let alpha = alpha.rem_euclid(1.0);
        Ok(Self {
            map: Map::Rotation { alpha },
            entropy: 0.0,
        })
    }

    /// A permutation of `{0..n-1}`. The weights must be invariant (constant on
    /// cycles) and ergodic (supported on a single cycle).
    pub fn permutation(table: Vec<usize>, weights: Vec<f64>) -> Result<Self> {
        let n = table.len();
        if n == 0 || weights.len() != n {
            return Err(Error::InvalidSystem(
                "permutation table and weights must be non-empty and of equal length".into(),
            ));
        }
        check_bijection(&table).map_err(Error::InvalidSystem)?;
        if weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidSystem("state weights must be non-negative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidSystem(format!("state weights sum to {total}, not 1")));
        }
        let cycles = cycles(&table);
        let mut charged = 0;
        for cycle in &cycles {
            let w0 = weights[cycle[0]];
            if cycle.iter().any(|&i| (weights[i] - w0).abs() > 1e-12) {
                return Err(Error::InvalidSystem(format!(
                    "weights are not invariant: not constant on cycle {cycle:?}"
                )));
            }
            if w0 > 0.0 {
                charged += 1;
            }
        }
        if charged != 1 {
            return Err(Error::InvalidSystem(format!(
                "measure is not ergodic: {charged} cycles carry mass"
            )));
        }
        let sampler = WeightedIndex::new(&weights)
            .map_err(|e| Error::InvalidSystem(format!("state weights: {e}")))?;
        Ok(Self {
            map: Map::Permutation(Permutation {
                table,
                weights,
                sampler,
            }),
            entropy: 0.0,
        })
    }

    /// The cycle `0 -> 1 -> ... -> n-1 -> 0` with uniform weights.
    pub fn cycle(n: usize) -> Self {
        let table = (0..n).map(|i| (i + 1) % n).collect();
        Self::permutation(table, vec![1.0 / n as f64; n]).expect("valid cycle")
    }

    pub fn kind(&self) -> Kind {
        match self.map {
            Map::Expanding(_) => Kind::Expanding,
            Map::Rotation { .. } => Kind::Rotation,
            Map::Permutation(_) => Kind::Permutation,
        }
    }

    pub fn is_invertible(&self) -> bool {
        !matches!(self.map, Map::Expanding(_))
    }

    /// Metric entropy `h_mu(f)` (natural logarithm).
    pub fn entropy(&self) -> f64 {
        self.entropy
    }

    pub fn state_space(&self) -> StateSpace {
        match &self.map {
            Map::Permutation(p) => StateSpace::Finite(p.table.len()),
            _ => StateSpace::Continuous,
        }
    }

    /// Number of digits drawn per sample for expanding maps.
    pub fn precision_depth(&self) -> Option<usize> {
        match &self.map {
            Map::Expanding(e) => Some(e.depth),
            _ => None,
        }
    }

    pub fn branch_weights(&self) -> Option<&[f64]> {
        match &self.map {
            Map::Expanding(e) => Some(&e.weights),
            _ => None,
        }
    }

    pub fn rotation_number(&self) -> Option<f64> {
        match self.map {
            Map::Rotation { alpha } => Some(alpha),
            _ => None,
        }
    }

    pub fn permutation_table(&self) -> Option<(&[usize], &[f64])> {
        match &self.map {
            Map::Permutation(p) => Some((&p.table, &p.weights)),
            _ => None,
        }
    }

    pub fn describe(&self) -> String {
        match &self.map {
            Map::Expanding(e) => format!("expanding(m={}, p={:?})", e.weights.len(), e.weights),
            Map::Rotation { alpha } => format!("rotation(alpha={alpha})"),
            Map::Permutation(p) => format!("permutation({:?})", p.table),
        }
    }

    /// Whether `x` lies in the state space.
    pub fn admits(&self, x: Point) -> bool {
        match (&self.map, x) {
            (Map::Permutation(p), Point::State(i)) => i < p.table.len(),
            (Map::Permutation(_), Point::Real(_)) | (_, Point::State(_)) => false,
            (_, Point::Real(x)) => (0.0..1.0).contains(&x),
        }
    }

    /// `f(x)`.
    ///
    /// # Panics
    /// If `x` is a state of a continuous system or a real of a finite one.
    #[inline]
    pub fn apply(&self, x: Point) -> Point {
        match (&self.map, x) {
            (Map::Expanding(e), Point::Real(x)) => {
                let z = f64::from(e.m()) * x;
                let y = z - z.floor();
                Point::Real(if y >= 1.0 { 0.0 } else { y })
            }
            (Map::Rotation { alpha }, Point::Real(x)) => {
                let y = x + alpha;
                Point::Real(if y >= 1.0 { y - 1.0 } else { y })
            }
            (Map::Permutation(p), Point::State(i)) => Point::State(p.table[i]),
            (_, x) => panic!("point {x} is outside the state space of {}", self.describe()),
        }
    }

    /// `f^n(x)`.
    pub fn iterate(&self, mut x: Point, n: u64) -> Point {
        for _ in 0..n {
            x = self.apply(x);
        }
        x
    }

    /// A draw from the invariant measure.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Point {
        match &self.map {
            Map::Expanding(e) => Point::Real(e.assemble(&[], rng)),
            Map::Rotation { .. } => Point::Real(rng.random::<f64>()),
            Map::Permutation(p) => Point::State(p.sampler.sample(rng)),
        }
    }

    fn check_compatible(&self, set: &BaseSet) -> Result<()> {
        let ok = match (&self.map, set) {
            (Map::Permutation(p), BaseSet::States(v)) => {
                if let Some(&s) = v.iter().find(|&&s| s >= p.table.len()) {
                    return Err(Error::InvalidSet(format!(
                        "state {s} out of range for {} states",
                        p.table.len()
                    )));
                }
                true
            }
            (Map::Expanding(e), BaseSet::Digits { base, .. }) => {
                if *base != e.m() {
                    return Err(Error::InvalidSet(format!(
                        "digit cylinder in base {base} on an {}-ary map",
                        e.m()
                    )));
                }
                true
            }
            (Map::Expanding(_) | Map::Rotation { .. }, BaseSet::Intervals(_)) => true,
            _ => false,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::IncompatibleSet {
                kind: self.kind().name(),
                set: set.label(),
            })
        }
    }

    /// `mu(I)`, exactly.
    pub fn measure(&self, set: &BaseSet) -> Result<f64> {
        self.check_compatible(set)?;
        Ok(match (&self.map, set) {
            (Map::Permutation(p), BaseSet::States(v)) => {
                v.iter().map(|&s| p.weights[s]).sum::<CompensatedSum>().value()
            }
            (Map::Expanding(e), BaseSet::Digits { prefix, .. }) => {
                prefix.iter().map(|&d| e.weights[d as usize]).product()
            }
            (Map::Expanding(e), BaseSet::Intervals(v)) => v
                .iter()
                .map(|&(a, b)| e.cdf(b) - e.cdf(a))
                .sum::<CompensatedSum>()
                .value(),
            (Map::Rotation { .. }, BaseSet::Intervals(v)) => {
                v.iter().map(|&(a, b)| b - a).sum::<CompensatedSum>().value()
            }
            _ => unreachable!("checked by check_compatible"),
        })
    }

    /// The whole cross-section as a set.
    pub fn full_set(&self) -> BaseSet {
        match &self.map {
            Map::Permutation(p) => BaseSet::states(0..p.table.len()),
            _ => BaseSet::Intervals(vec![(0.0, 1.0)]),
        }
    }

    /// Least `k >= 1` with `f^k(x)` satisfying `pred`, together with that point.
    pub fn first_hit<P>(&self, x: Point, max_steps: u64, pred: P) -> Result<(u64, Point)>
    where
        P: Fn(Point) -> bool,
    {
        let mut y = x;
        for k in 1..=max_steps {
            y = self.apply(y);
            if pred(y) {
                return Ok((k, y));
            }
        }
        Err(Error::NonRecurrentWithinBudget { max_steps })
    }

    /// First return (or hitting) time `n_I(x) = min{k >= 1 : f^k(x) in I}`.
    pub fn first_return(&self, set: &BaseSet, x: Point, max_steps: u64) -> Result<u64> {
        self.check_compatible(set)?;
        self.first_hit(x, max_steps, |y| set.contains(y)).map(|(k, _)| k)
    }

    /// Direct sampler for `mu` conditioned on `set`.
    pub fn conditional_sampler(&self, set: &BaseSet) -> Result<ConditionalSampler<'_>> {
        self.check_compatible(set)?;
        let inner = match (&self.map, set) {
            (Map::Permutation(p), BaseSet::States(v)) => {
                let w: Vec<f64> = v.iter().map(|&s| p.weights[s]).collect();
                let index = WeightedIndex::new(&w).map_err(|_| Error::EmptyProjection)?;
                Conditional::States {
                    states: v.clone(),
                    index,
                }
            }
            (Map::Expanding(_), BaseSet::Digits { prefix, .. }) => Conditional::Digits(prefix.clone()),
            (_, BaseSet::Intervals(v)) => {
                let masses: Vec<f64> = v
                    .iter()
                    .map(|&(a, b)| self.measure(&BaseSet::Intervals(vec![(a, b)])))
                    .collect::<Result<_>>()?;
                let index = WeightedIndex::new(&masses).map_err(|_| Error::EmptyProjection)?;
                Conditional::Intervals {
                    parts: v.clone(),
                    index,
                }
            }
            _ => unreachable!("checked by check_compatible"),
        };
        Ok(ConditionalSampler { sys: self, inner })
    }

    /// `int g dmu` by exact partition sum or Monte Carlo.
    pub fn integrate(&self, g: &PointFn, mode: &Integration) -> Result<Estimate> {
        self.integrate_over(&self.full_set(), g, mode)
            .map(|(value, _)| value)
    }

    /// `int_I g dmu`, returned together with `mu(I)`.
    pub fn integrate_over(
        &self,
        set: &BaseSet,
        g: &PointFn,
        mode: &Integration,
    ) -> Result<(Estimate, f64)> {
        let mass = self.measure(set)?;
        match mode {
            Integration::Exact => {
                let value = self.exact_integral_over(set, g)?;
                Ok((Estimate::exact(value), mass))
            }
            Integration::MonteCarlo(cfg) => {
                if mass == 0.0 {
                    return Ok((Estimate::exact(0.0), mass));
                }
                let sampler = self.conditional_sampler(set)?;
                let est = mc::mean(cfg, |rng| Ok(g.eval(sampler.sample(rng))))?;
                Ok((est.scaled(mass), mass))
            }
        }
    }

    /// Exact `int_I g dmu` for constant or piecewise-constant `g`.
    pub fn exact_integral_over(&self, set: &BaseSet, g: &PointFn) -> Result<f64> {
        let mass = self.measure(set)?;
        match g {
            PointFn::Constant(c) => Ok(c * mass),
            PointFn::Piecewise(parts) => {
                let mut acc = CompensatedSum::new();
                let mut covered = CompensatedSum::new();
                for (part, v) in parts {
                    let piece = self.measure(&part.intersect(set)?)?;
                    acc += v * piece;
                    covered += piece;
                }
                if (covered.value() - mass).abs() > 1e-9 {
                    return Err(Error::InvalidSet(format!(
                        "partition covers mass {} of a set with mass {mass}",
                        covered.value()
                    )));
                }
                Ok(acc.value())
            }
            PointFn::Expr(_) | PointFn::Pointwise(_) => Err(Error::UnsupportedExactIntegration),
        }
    }

    /// Checks that the parts of a piecewise function are disjoint and cover
    /// the whole cross-section (up to measure zero).
    pub fn check_partition(&self, parts: &[(BaseSet, f64)]) -> Result<()> {
        let mut total = CompensatedSum::new();
        for (i, (p, _)) in parts.iter().enumerate() {
            total += self.measure(p)?;
            for (q, _) in &parts[i + 1..] {
                if self.measure(&p.intersect(q)?)? > 0.0 {
                    return Err(Error::InvalidSet(format!("partition parts {p} and {q} overlap")));
                }
            }
        }
        if (total.value() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidSet(format!(
                "partition covers mass {}, not 1",
                total.value()
            )));
        }
        Ok(())
    }
}

/// How to evaluate an integral against `mu`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Integration {
    Exact,
    MonteCarlo(McConfig),
}

#[derive(Debug, Clone)]
enum Conditional {
    Intervals {
        parts: Vec<(f64, f64)>,
        index: WeightedIndex<f64>,
    },
    Digits(Vec<u32>),
    States {
        states: Vec<usize>,
        index: WeightedIndex<f64>,
    },
}

/// Draws from `mu_I = mu(. ∩ I)/mu(I)` without rejection.
#[derive(Debug, Clone)]
pub struct ConditionalSampler<'a> {
    sys: &'a BaseSystem,
    inner: Conditional,
}

impl ConditionalSampler<'_> {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Point {
        match (&self.inner, &self.sys.map) {
            (Conditional::States { states, index }, _) => Point::State(states[index.sample(rng)]),
            (Conditional::Digits(prefix), Map::Expanding(e)) => Point::Real(e.assemble(prefix, rng)),
            (Conditional::Intervals { parts, index }, Map::Expanding(e)) => {
                let (a, b) = parts[index.sample(rng)];
                Point::Real(e.sample_in_interval(a, b, rng))
            }
            (Conditional::Intervals { parts, index }, Map::Rotation { .. }) => {
                let (a, b) = parts[index.sample(rng)];
                let x = a + rng.random::<f64>() * (b - a);
                Point::Real(if x >= b { a } else { x })
            }
            _ => unreachable!("sampler built for a compatible set"),
        }
    }
}

fn check_bijection(table: &[usize]) -> std::result::Result<(), String> {
    let n = table.len();
    let mut seen = vec![false; n];
    for &j in table {
        if j >= n {
            return Err(format!("image {j} out of range for {n} states"));
        }
        if std::mem::replace(&mut seen[j], true) {
            return Err(format!("state {j} has two preimages; not a bijection"));
        }
    }
    Ok(())
}

/// Cycle decomposition of a permutation, each cycle starting at its least state.
pub fn cycles(table: &[usize]) -> Vec<Vec<usize>> {
    let mut seen = vec![false; table.len()];
    let mut out = Vec::new();
    for start in 0..table.len() {
        if seen[start] {
            continue;
        }
        let mut cycle = Vec::new();
        let mut i = start;
        while !seen[i] {
            seen[i] = true;
            cycle.push(i);
            i = table[i];
        }
        out.push(cycle);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const GOLDEN: f64 = 0.6180339887;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    fn real(p: Point) -> f64 {
        match p {
            Point::Real(x) => x,
            Point::State(_) => panic!("expected a real point"),
        }
    }

    #[test]
    fn apply_examples() {
        assert_eq!(BaseSystem::doubling().apply(Point::Real(0.2)), Point::Real(0.4));
        let rot = BaseSystem::rotation(GOLDEN).unwrap();
        assert!((real(rot.apply(Point::Real(0.1))) - 0.7180339887).abs() < 1e-15);
        assert_eq!(BaseSystem::cycle(3).apply(Point::State(2)), Point::State(0));
    }

    #[test]
    fn measure_examples() {
        let rot = BaseSystem::rotation(GOLDEN).unwrap();
        assert_eq!(rot.measure(&BaseSet::interval(0.0, 0.5).unwrap()).unwrap(), 0.5);
        let bern = BaseSystem::expanding(vec![0.3, 0.7]).unwrap();
        let cyl = BaseSet::prefix(2, vec![0, 1]).unwrap();
        assert!((bern.measure(&cyl).unwrap() - 0.21).abs() < 1e-15);
        let c3 = BaseSystem::cycle(3);
        assert!((c3.measure(&BaseSet::states([0])).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn incompatible_sets_are_rejected() {
        let rot = BaseSystem::rotation(GOLDEN).unwrap();
        let cyl = BaseSet::prefix(2, vec![0]).unwrap();
        assert!(matches!(rot.measure(&cyl), Err(Error::IncompatibleSet { .. })));
        assert!(matches!(
            BaseSystem::cycle(3).measure(&BaseSet::interval(0.0, 0.5).unwrap()),
            Err(Error::IncompatibleSet { .. })
        ));
        let tri = BaseSystem::expanding(vec![1.0 / 3.0; 3]).unwrap();
        assert!(matches!(tri.measure(&cyl), Err(Error::InvalidSet(_))));
    }

    #[test]
    fn bernoulli_interval_measure_matches_cylinders() {
        let bern = BaseSystem::expanding(vec![0.3, 0.7]).unwrap();
        let i = BaseSet::interval(0.25, 0.5).unwrap();
        assert!((bern.measure(&i).unwrap() - 0.21).abs() < 1e-15);
        let half = BaseSet::interval(0.0, 0.5).unwrap();
        assert!((bern.measure(&half).unwrap() - 0.3).abs() < 1e-15);
    }

    #[test]
    fn first_return_examples() {
        let c3 = BaseSystem::cycle(3);
        assert_eq!(
            c3.first_return(&BaseSet::states([0]), Point::State(0), 100).unwrap(),
            3
        );
        let rot = BaseSystem::rotation(GOLDEN).unwrap();
        let half = BaseSet::interval(0.0, 0.5).unwrap();
        assert_eq!(rot.first_return(&half, Point::Real(0.1), 100).unwrap(), 2);

        // brute force: 0.3 -> 0.6 -> 0.2
        let dbl = BaseSystem::doubling();
        let cyl = BaseSet::prefix(2, vec![0]).unwrap();
        let mut y = 0.3f64;
        let mut k = 0;
        loop {
            k += 1;
            y = (2.0 * y) % 1.0;
            if y < 0.5 {
                break;
            }
        }
        assert_eq!(dbl.first_return(&cyl, Point::Real(0.3), 100).unwrap(), k);
        assert_eq!(k, 2);
    }

    #[test]
    fn budget_is_reported() {
        let c3 = BaseSystem::permutation(vec![1, 0, 2], vec![0.5, 0.5, 0.0]).unwrap();
        let r = c3.first_return(&BaseSet::states([2]), Point::State(0), 50);
        assert_eq!(r, Err(Error::NonRecurrentWithinBudget { max_steps: 50 }));
    }

    #[test]
    fn permutation_invariance_and_ergodicity_enforced() {
        assert!(BaseSystem::permutation(vec![1, 2, 0], vec![0.5, 0.25, 0.25]).is_err());
        assert!(BaseSystem::permutation(vec![1, 0, 2], vec![0.25, 0.25, 0.5]).is_err());
        assert!(BaseSystem::permutation(vec![0, 0, 2], vec![1.0, 0.0, 0.0]).is_err());
        assert!(BaseSystem::permutation(vec![1, 0, 2], vec![0.5, 0.5, 0.0]).is_ok());
    }

    #[test]
    fn entropy_and_invertibility() {
        let bern = BaseSystem::expanding(vec![0.3, 0.7]).unwrap();
        let h = -(0.3f64 * 0.3f64.ln() + 0.7 * 0.7f64.ln());
        assert!((bern.entropy() - h).abs() < 1e-15);
        assert!((BaseSystem::doubling().entropy() - 2f64.ln()).abs() < 1e-15);
        assert!(!bern.is_invertible());
        assert!(BaseSystem::rotation(0.3).unwrap().is_invertible());
        assert_eq!(BaseSystem::cycle(4).entropy(), 0.0);
        assert_eq!(BaseSystem::expanding(vec![1.0 / 3.0; 3]).unwrap().precision_depth(), Some(33));
    }

    #[test]
    fn integrate_examples() {
        let c3 = BaseSystem::cycle(3);
        let g = PointFn::per_state(&[1.0, 2.0, 3.0]);
        let v = c3.integrate(&g, &Integration::Exact).unwrap();
        assert!((v.mean - 2.0).abs() < 1e-15);
        let dbl = BaseSystem::doubling();
        assert_eq!(
            dbl.integrate(&PointFn::Constant(4.5), &Integration::Exact).unwrap().mean,
            4.5
        );
        let e = PointFn::expr(|x| x);
        assert_eq!(
            dbl.integrate(&e, &Integration::Exact),
            Err(Error::UnsupportedExactIntegration)
        );
    }

    #[test]
    fn integrate_montecarlo_cosine() {
        let rot = BaseSystem::rotation(GOLDEN).unwrap();
        let g = PointFn::expr(|x| 2.0 + (2.0 * std::f64::consts::PI * x).cos());
        let cfg = McConfig::new(1_000_000, 11).with_workers(4);
        let est = rot.integrate(&g, &Integration::MonteCarlo(cfg)).unwrap();
        assert!((est.mean - 2.0).abs() <= 3.0 * est.stderr, "{est:?}");
    }

    #[test]
    fn sampled_digits_follow_weights() {
        let bern = BaseSystem::expanding(vec![0.3, 0.7]).unwrap();
        let mut r = rng();
        let n = 100_000;
        let mut ones = 0usize;
        let mut total = 0usize;
        for _ in 0..n {
            let mut y = real(bern.sample(&mut r));
            for _ in 0..10 {
                let z = 2.0 * y;
                ones += (z >= 1.0) as usize;
                total += 1;
                y = z - z.floor();
            }
        }
        let freq = ones as f64 / total as f64;
        assert!((freq - 0.7).abs() < 0.005, "{freq}");
    }

    #[test]
    fn sampled_states_and_rotation_mass() {
        let mut r = rng();
        let c3 = BaseSystem::cycle(3);
        let mut counts = [0usize; 3];
        for _ in 0..90_000 {
            if let Point::State(i) = c3.sample(&mut r) {
                counts[i] += 1;
            }
        }
        for c in counts {
            assert!((c as f64 / 90_000.0 - 1.0 / 3.0).abs() < 0.01);
        }
        let rot = BaseSystem::rotation(GOLDEN).unwrap();
        let below = (0..100_000).filter(|_| real(rot.sample(&mut r)) < 0.5).count();
        assert!((below as f64 / 1e5 - 0.5).abs() < 0.01);
    }

    #[test]
    fn conditional_samplers_stay_inside() {
        let mut r = rng();
        let bern = BaseSystem::expanding(vec![0.3, 0.7]).unwrap();
        let iv = BaseSet::intervals(vec![(0.1, 0.2), (0.6, 0.95)]).unwrap();
        let s = bern.conditional_sampler(&iv).unwrap();
        for _ in 0..10_000 {
            assert!(iv.contains(s.sample(&mut r)));
        }
        let cyl = BaseSet::prefix(2, vec![1, 0, 1]).unwrap();
        let s = bern.conditional_sampler(&cyl).unwrap();
        for _ in 0..10_000 {
            assert!(cyl.contains(s.sample(&mut r)));
        }
    }

    #[test]
    fn conditional_interval_sampler_matches_measure() {
        // mass of [0.1,0.15) inside [0.1,0.2) under Bernoulli(0.3,0.7)
        let mut r = rng();
        let bern = BaseSystem::expanding(vec![0.3, 0.7]).unwrap();
        let iv = BaseSet::interval(0.1, 0.2).unwrap();
        let sub = BaseSet::interval(0.1, 0.15).unwrap();
        let p = bern.measure(&sub).unwrap() / bern.measure(&iv).unwrap();
        let s = bern.conditional_sampler(&iv).unwrap();
        let n = 200_000;
        let hits = (0..n).filter(|_| sub.contains(s.sample(&mut r))).count();
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!((hits as f64 / n as f64 - p).abs() < 4.0 * se);
    }

    #[test]
    fn intersections() {
        let a = BaseSet::prefix(2, vec![0]).unwrap();
        let b = BaseSet::prefix(2, vec![0, 1]).unwrap();
        let c = BaseSet::prefix(2, vec![1]).unwrap();
        assert_eq!(a.intersect(&b).unwrap(), b);
        assert!(a.intersect(&c).unwrap().is_empty());
        let iv = BaseSet::interval(0.2, 0.7).unwrap();
        assert_eq!(iv.intersect(&a).unwrap(), BaseSet::Intervals(vec![(0.2, 0.5)]));
        let s = BaseSet::states([0, 2, 3]);
        assert_eq!(s.intersect(&BaseSet::states([2, 4])).unwrap(), BaseSet::states([2]));
    }

    #[test]
    fn partition_checks() {
        let c3 = BaseSystem::cycle(3);
        let good = vec![(BaseSet::states([0, 1]), 1.0), (BaseSet::states([2]), 2.0)];
        assert!(c3.check_partition(&good).is_ok());
        let gap = vec![(BaseSet::states([0]), 1.0)];
        assert!(c3.check_partition(&gap).is_err());
        let dbl = BaseSystem::doubling();
        let overlap = vec![
            (BaseSet::interval(0.0, 0.6).unwrap(), 1.0),
            (BaseSet::interval(0.5, 1.0).unwrap(), 2.0),
        ];
        assert!(dbl.check_partition(&overlap).is_err());
    }
}
