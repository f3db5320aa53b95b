//! Compensated summation.
//!
//! Every accumulation of roof values (flow evaluation, Birkhoff sums, return
//! times) goes through [`CompensatedSum`], which implements Neumaier's variant
//! of Kahan summation: the running error term also captures the case where the
//! incoming term is larger than the partial sum.

use std::iter::Sum;
use std::ops::{AddAssign, SubAssign};

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CompensatedSum {
    sum: f64,
    err: f64,
}

impl CompensatedSum {
    pub const fn new() -> Self {
        Self { sum: 0.0, err: 0.0 }
    }

    pub fn from_value(v: f64) -> Self {
        Self { sum: v, err: 0.0 }
    }

    #[inline]
    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.err += (self.sum - t) + v;
        } else {
            self.err += (v - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.err
    }
}

impl AddAssign<f64> for CompensatedSum {
    fn add_assign(&mut self, rhs: f64) {
        self.add(rhs);
    }
}

impl SubAssign<f64> for CompensatedSum {
    fn sub_assign(&mut self, rhs: f64) {
        self.add(-rhs);
    }
}

impl Sum<f64> for CompensatedSum {
    fn sum<I: Iterator<Item = f64>>(iter: I) -> Self {
        let mut acc = CompensatedSum::new();
        for v in iter {
            acc.add(v);
        }
        acc
    }
}

impl From<CompensatedSum> for f64 {
    fn from(s: CompensatedSum) -> f64 {
        s.value()
    }
}

/// Compensated sum of a sequence of values.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    values.into_iter().sum::<CompensatedSum>().value()
}
