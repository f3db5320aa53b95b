//! Seeded, reproducible Monte Carlo execution.
//!
//! A run of `samples` draws is split across `workers` contiguous chunks. Worker
//! `i` owns a ChaCha8 stream seeded from the run seed with stream id `i`, so the
//! draws a worker sees do not depend on scheduling. Partial accumulators are
//! merged in worker-index order, which makes the result bit-identical for a fixed
//! `(seed, workers)` pair whether the chunks ran on the rayon pool or in a plain
//! loop.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub type McRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct McConfig {
    pub samples: u64,
    pub seed: u64,
    pub workers: usize,
    /// Run worker chunks on the rayon pool. Ignored without the `parallel`
    /// feature; results are identical either way.
    pub parallel: bool,
}

impl McConfig {
    pub fn new(samples: u64, seed: u64) -> Self {
        Self {
            samples,
            seed,
            workers: 1,
            parallel: true,
        }
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers;
        self
    }

    pub fn sequential(mut self) -> Self {
        self.parallel = false;
        self
    }

    pub fn with_samples(mut self, samples: u64) -> Self {
        self.samples = samples;
        self
    }

    /// A configuration with an independent seed for a sub-computation.
    pub fn derive(&self, tag: u64) -> Self {
        Self {
            seed: splitmix64(self.seed ^ splitmix64(tag.wrapping_add(0x5851_F42D_4C95_7F2D))),
            ..*self
        }
    }

    fn validate(&self) -> Result<()> {
        if self.samples == 0 {
            return Err(Error::InvalidMcConfig("samples must be positive".into()));
        }
        if self.workers == 0 {
            return Err(Error::InvalidMcConfig("workers must be positive".into()));
        }
        Ok(())
    }

    fn chunk(&self, worker: usize) -> u64 {
        let w = self.workers as u64;
        self.samples / w + u64::from((worker as u64) < self.samples % w)
    }

    pub fn worker_rng(&self, worker: usize) -> McRng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(worker as u64);
        rng
    }
}

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mean, standard error and bookkeeping of a Monte Carlo run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
    pub n: u64,
    pub discarded: u64,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Self {
            mean: value,
            stderr: 0.0,
            n: 0,
            discarded: 0,
        }
    }

    pub fn scaled(self, c: f64) -> Self {
        Self {
            mean: self.mean * c,
            stderr: self.stderr * c.abs(),
            ..self
        }
    }

    pub fn is_exact(&self) -> bool {
        self.stderr == 0.0 && self.n == 0
    }
}

/// A mergeable streaming statistic.
pub trait Accumulator: Default + Send {
    type Item;
    fn push(&mut self, item: Self::Item);
    fn merge(&mut self, other: Self);
}

/// Welford running mean and second central moment.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Moments {
    pub n: u64,
    pub mean: f64,
    m2: f64,
}

impl Moments {
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    pub fn stderr(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            (self.variance() / self.n as f64).sqrt()
        }
    }

    pub fn estimate(&self, discarded: u64) -> Estimate {
        Estimate {
            mean: self.mean,
            stderr: self.stderr(),
            n: self.n,
            discarded,
        }
    }
}

impl Accumulator for Moments {
    type Item = f64;

    fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    fn merge(&mut self, other: Self) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = other;
            return;
        }
        let n = self.n + other.n;
        let delta = other.mean - self.mean;
        let nf = n as f64;
        self.mean += delta * other.n as f64 / nf;
        self.m2 += other.m2 + delta * delta * self.n as f64 * other.n as f64 / nf;
        self.n = n;
    }
}

/// Joint moments of `(y, h)` pairs, enough for ratio estimators `E[y]/E[h]`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CoMoments {
    pub n: u64,
    pub mean_y: f64,
    pub mean_h: f64,
    m2_y: f64,
    m2_h: f64,
    c_yh: f64,
}

impl CoMoments {
    /// `E[y]/h_mean` with `h_mean` known exactly.
    pub fn ratio_exact_denominator(&self, h_mean: f64, discarded: u64) -> Estimate {
        let se = if self.n < 2 {
            0.0
        } else {
            (self.m2_y / (self.n - 1) as f64 / self.n as f64).sqrt()
        };
        Estimate {
            mean: self.mean_y / h_mean,
            stderr: se / h_mean.abs(),
            n: self.n,
            discarded,
        }
    }

    /// `E[y]/E[h]` with a delta-method standard error.
    pub fn ratio(&self, discarded: u64) -> Estimate {
        let r = self.mean_y / self.mean_h;
        let se = if self.n < 2 {
            0.0
        } else {
            let k = (self.n - 1) as f64;
            let var = (self.m2_y - 2.0 * r * self.c_yh + r * r * self.m2_h) / k;
            (var.max(0.0) / self.n as f64).sqrt() / self.mean_h.abs()
        };
        Estimate {
            mean: r,
            stderr: se,
            n: self.n,
            discarded,
        }
    }
}

impl Accumulator for CoMoments {
    type Item = (f64, f64);

    fn push(&mut self, (y, h): (f64, f64)) {
        self.n += 1;
        let nf = self.n as f64;
        let dy = y - self.mean_y;
        let dh = h - self.mean_h;
        self.mean_y += dy / nf;
        self.mean_h += dh / nf;
        self.m2_y += dy * (y - self.mean_y);
        self.m2_h += dh * (h - self.mean_h);
        self.c_yh += dy * (h - self.mean_h);
    }

    fn merge(&mut self, other: Self) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = other;
            return;
        }
        let n = self.n + other.n;
        let nf = n as f64;
        let w = self.n as f64 * other.n as f64 / nf;
        let dy = other.mean_y - self.mean_y;
        let dh = other.mean_h - self.mean_h;
        self.mean_y += dy * other.n as f64 / nf;
        self.mean_h += dh * other.n as f64 / nf;
        self.m2_y += other.m2_y + dy * dy * w;
        self.m2_h += other.m2_h + dh * dh * w;
        self.c_yh += other.c_yh + dy * dh * w;
        self.n = n;
    }
}

impl<A: Accumulator, const K: usize> Accumulator for [A; K]
where
    [A; K]: Default,
{
    type Item = [A::Item; K];

    fn push(&mut self, items: Self::Item) {
        for (acc, item) in self.iter_mut().zip(items) {
            acc.push(item);
        }
    }

    fn merge(&mut self, other: Self) {
        for (acc, o) in self.iter_mut().zip(other) {
            acc.merge(o);
        }
    }
}

/// Output of one worker or of a whole run.
#[derive(Debug, Clone, Default)]
pub struct Tally<A> {
    pub acc: A,
    pub discarded: u64,
}

fn run_worker<A, S, I, F>(cfg: &McConfig, worker: usize, init: &I, draw: &F) -> Result<Tally<A>>
where
    A: Accumulator,
    I: Fn() -> S,
    F: Fn(&mut S, &mut McRng) -> Result<A::Item>,
{
    let mut rng = cfg.worker_rng(worker);
    let mut state = init();
    let mut tally = Tally::<A>::default();
    for _ in 0..cfg.chunk(worker) {
        match draw(&mut state, &mut rng) {
            Ok(item) => tally.acc.push(item),
            Err(Error::NonRecurrentWithinBudget { .. }) => tally.discarded += 1,
            Err(e) => return Err(e),
        }
    }
    Ok(tally)
}

/// Runs `cfg.samples` draws and reduces them into `A`.
///
/// `init` builds per-worker state (e.g. a rejection sampler's window counters).
/// Draws failing with [`Error::NonRecurrentWithinBudget`] are discarded and
/// counted; any other error aborts the run.
pub fn run<A, S, I, F>(cfg: &McConfig, init: I, draw: F) -> Result<Tally<A>>
where
    A: Accumulator,
    I: Fn() -> S + Sync,
    F: Fn(&mut S, &mut McRng) -> Result<A::Item> + Sync,
{
    cfg.validate()?;
    let partials: Vec<Result<Tally<A>>> = {
        #[cfg(feature = "parallel")]
        {
            if cfg.parallel && cfg.workers > 1 {
                use rayon::prelude::*;
                (0..cfg.workers)
                    .into_par_iter()
                    .map(|w| run_worker(cfg, w, &init, &draw))
                    .collect()
            } else {
                (0..cfg.workers)
                    .map(|w| run_worker(cfg, w, &init, &draw))
                    .collect()
            }
        }
        #[cfg(not(feature = "parallel"))]
        {
            (0..cfg.workers)
                .map(|w| run_worker(cfg, w, &init, &draw))
                .collect()
        }
    };
    let mut total = Tally::<A>::default();
    for p in partials {
        let p = p?;
        total.acc.merge(p.acc);
        total.discarded += p.discarded;
    }
    Ok(total)
}

/// Mean of a scalar draw.
pub fn mean<F>(cfg: &McConfig, draw: F) -> Result<Estimate>
where
    F: Fn(&mut McRng) -> Result<f64> + Sync,
{
    let tally: Tally<Moments> = run(cfg, || (), |_, rng| draw(rng))?;
    Ok(tally.acc.estimate(tally.discarded))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn chunks_cover_all_samples() {
        let cfg = McConfig::new(10, 1).with_workers(3);
        let total: u64 = (0..3).map(|w| cfg.chunk(w)).sum();
        assert_eq!(total, 10);
        assert_eq!(cfg.chunk(0), 4);
        assert_eq!(cfg.chunk(2), 3);
    }

    #[test]
    fn welford_matches_two_pass() {
        let xs = [1.0, 4.0, 2.5, -3.0, 8.0, 0.5];
        let mut m = Moments::default();
        xs.iter().for_each(|&x| m.push(x));
        let mean = xs.iter().sum::<f64>() / 6.0;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 5.0;
        assert!((m.mean - mean).abs() < 1e-14);
        assert!((m.variance() - var).abs() < 1e-12);

        let (mut a, mut b) = (Moments::default(), Moments::default());
        xs[..2].iter().for_each(|&x| a.push(x));
        xs[2..].iter().for_each(|&x| b.push(x));
        a.merge(b);
        assert!((a.mean - mean).abs() < 1e-14);
        assert!((a.variance() - var).abs() < 1e-12);
    }

    #[test]
    fn comoments_merge_matches_single_pass() {
        let pts = [(1.0, 2.0), (3.0, 1.0), (0.5, 0.7), (2.0, 2.2), (4.0, 3.1)];
        let mut all = CoMoments::default();
        pts.iter().for_each(|&p| all.push(p));
        let (mut a, mut b) = (CoMoments::default(), CoMoments::default());
        pts[..3].iter().for_each(|&p| a.push(p));
        pts[3..].iter().for_each(|&p| b.push(p));
        a.merge(b);
        assert!((a.ratio(0).mean - all.ratio(0).mean).abs() < 1e-14);
        assert!((a.ratio(0).stderr - all.ratio(0).stderr).abs() < 1e-14);
    }

    #[test]
    fn parallel_and_sequential_are_bit_identical() {
        let cfg = McConfig::new(100_001, 42).with_workers(7);
        let par = mean(&cfg, |rng| Ok(rng.random::<f64>().powi(2))).unwrap();
        let seq = mean(&cfg.sequential(), |rng| Ok(rng.random::<f64>().powi(2))).unwrap();
        assert_eq!(par, seq);
        assert!((par.mean - 1.0 / 3.0).abs() < 4.0 * par.stderr);
    }

    #[test]
    fn budget_failures_are_counted_not_fatal() {
        let cfg = McConfig::new(1000, 3).with_workers(2);
        let est = mean(&cfg, |rng| {
            if rng.random::<f64>() < 0.1 {
                Err(Error::NonRecurrentWithinBudget { max_steps: 1 })
            } else {
                Ok(1.0)
            }
        })
        .unwrap();
        assert_eq!(est.n + est.discarded, 1000);
        assert!(est.discarded > 50);
    }

    #[test]
    fn other_errors_abort() {
        let cfg = McConfig::new(10, 3);
        let r = mean(&cfg, |_| Err(Error::EmptyProjection));
        assert_eq!(r.unwrap_err(), Error::EmptyProjection);
    }

    #[test]
    fn derived_seeds_differ() {
        let cfg = McConfig::new(1, 42);
        assert_ne!(cfg.derive(1).seed, cfg.derive(2).seed);
        assert_ne!(cfg.derive(1).seed, cfg.seed);
    }
}
