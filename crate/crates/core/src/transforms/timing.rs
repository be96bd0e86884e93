//! Wall-clock timing of the fast forward transforms.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{check_len, kernels, BasisKind};
use crate::error::Result;

/// Shortest interval a single repetition is allowed to measure.
const MIN_SAMPLE: Duration = Duration::from_millis(20);

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BenchRow {
    pub n: usize,
    pub basis: BasisKind,
    pub median_seconds: f64,
    /// `time(n) / time(n / 2)` when the half size was also measured.
    pub ratio: Option<f64>,
}

impl BenchRow {
    pub fn csv_row(&self) -> String {
        let ratio = self.ratio.map(|r| format!("{r:.4}")).unwrap_or_default();
        format!("{},{},{:e},{ratio}", self.n, self.basis.name(), self.median_seconds)
    }
}

pub const BENCH_HEADER: &str = "n,basis,median_seconds,ratio";

/// Forward transform of one random `n`-point field, repeated enough times
/// that a single timed sample lasts at least [`MIN_SAMPLE`].
struct Workload {
    basis: BasisKind,
    f: Vec<f64>,
    out: Vec<f64>,
    calls: usize,
}

impl Workload {
    fn new(basis: BasisKind, n: usize) -> Result<Self> {
        check_len(n)?;
        let mut rng = ChaCha8Rng::seed_from_u64(n as u64);
        let f = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut w = Self {
            basis,
            f,
            out: vec![0.0; basis.modes(n)],
            calls: 1,
        };
        w.time();
        while w.calls < 1 << 24 && w.elapsed() < MIN_SAMPLE {
            w.calls *= 2;
        }
        Ok(w)
    }

    fn elapsed(&mut self) -> Duration {
        let start = Instant::now();
        for _ in 0..self.calls {
            kernels::forward_into(self.basis, std::hint::black_box(&self.f), &mut self.out);
        }
        start.elapsed()
    }

    /// Seconds per call for one sample.
    fn time(&mut self) -> f64 {
        self.elapsed().as_secs_f64() / self.calls as f64
    }
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    xs[xs.len() / 2]
}

/// Median over `reps` samples of the time of one forward transform of an
/// `n`-point field.
pub fn median_forward_seconds(basis: BasisKind, n: usize, reps: usize) -> Result<f64> {
    let mut w = Workload::new(basis, n)?;
    Ok(median((0..reps.max(1)).map(|_| w.time()).collect()))
}

/// Times every size and fills in doubling ratios. Each repetition samples
/// all sizes in turn, so slow drift in machine speed affects them alike.
pub fn bench_transform(basis: BasisKind, sizes: &[usize], reps: usize) -> Result<Vec<BenchRow>> {
    let mut loads = sizes.iter().map(|&n| Workload::new(basis, n)).collect::<Result<Vec<_>>>()?;
    let mut samples = vec![Vec::with_capacity(reps); sizes.len()];
    for _ in 0..reps.max(1) {
        for (w, s) in loads.iter_mut().zip(&mut samples) {
            s.push(w.time());
        }
    }
    let mut rows: Vec<BenchRow> = Vec::with_capacity(sizes.len());
    for (&n, s) in sizes.iter().zip(samples) {
        let median_seconds = median(s);
        let ratio = rows
            .iter()
            .find(|r| 2 * r.n == n)
            .map(|r| median_seconds / r.median_seconds);
        rows.push(BenchRow {
            n,
            basis,
            median_seconds,
            ratio,
        });
    }
    Ok(rows)
}
