//! Real-input forward FFT with a per-thread plan cache.
//!
//! Every semi-periodic transform in this crate reduces to the forward DFT of
//! a real, even-length sequence, so only that one primitive is exposed. The
//! packing trick runs a complex FFT of half the length.
//!
//! Lengths whose half is large and not 7-smooth are computed with Bluestein's
//! algorithm over a power-of-two inner FFT. Grid sizes like N = 2^k give
//! extension lengths 2(2^k - 1), whose prime factors make mixed-radix timing
//! erratic; the chirp-z route keeps the cost a smooth O(N log N) function.

use std::cell::{OnceCell, RefCell};
use std::collections::HashMap;
use std::f64::consts::PI;
use std::rc::Rc;
use std::sync::Arc;

use rustfft::algorithm::BluesteinsAlgorithm;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

pub(crate) type C64 = Complex<f64>;

const DIRECT_HALF_LEN_LIMIT: usize = 512;

fn largest_prime_factor(mut n: usize) -> usize {
    let mut largest = 1;
    let mut p = 2;
    while p * p <= n {
        while n % p == 0 {
            largest = p;
            n /= p;
        }
        p += 1;
    }
    if n > 1 {
        largest = largest.max(n);
    }
    largest
}

struct Buffers {
    input: Vec<f64>,
    packed: Vec<C64>,
    scratch: Vec<C64>,
    output: Vec<C64>,
}

pub(crate) struct RealFft {
    len: usize,
    inner: Arc<dyn Fft<f64>>,
    // e^{-2 pi i k / len}, k = 0..=len/2
    twiddles: Vec<C64>,
    buffers: RefCell<Buffers>,
    half_angle: OnceCell<Vec<C64>>,
}

impl RealFft {
    fn new(len: usize, planner: &mut FftPlanner<f64>) -> Self {
        assert!(len >= 2 && len % 2 == 0, "real FFT length must be even");
        let half = len / 2;
        let inner: Arc<dyn Fft<f64>> =
            if half <= DIRECT_HALF_LEN_LIMIT || largest_prime_factor(half) <= 7 {
                planner.plan_fft_forward(half)
            } else {
                let inner_len = (2 * half - 1).next_power_of_two();
                let pow2 = planner.plan_fft_forward(inner_len);
                Arc::new(BluesteinsAlgorithm::new(half, pow2))
            };
        let twiddles = (0..=half)
            .map(|k| {
                let theta = -2.0 * PI * k as f64 / len as f64;
                C64::new(theta.cos(), theta.sin())
            })
            .collect();
        let buffers = RefCell::new(Buffers {
            input: vec![0.0; len],
            packed: vec![C64::default(); half],
            scratch: vec![C64::default(); inner.get_inplace_scratch_len()],
            output: vec![C64::default(); half + 1],
        });
        Self {
            len,
            inner,
            twiddles,
            buffers,
            half_angle: OnceCell::new(),
        }
    }

    /// `e^{-pi i k / len}`, `k = 0..=len/2`.
    pub(crate) fn half_angle_twiddles(&self) -> &[C64] {
        self.half_angle.get_or_init(|| {
            (0..=self.len / 2)
                .map(|k| {
                    let theta = -PI * k as f64 / self.len as f64;
                    C64::new(theta.cos(), theta.sin())
                })
                .collect()
        })
    }

    /// Writes bins `0..=len/2` of the DFT of `input` into `output`.
    #[cfg(test)]
    pub(crate) fn process(&self, input: &[f64], output: &mut [C64]) {
        debug_assert_eq!(input.len(), self.len);
        self.with_spectrum(|buf| buf.copy_from_slice(input), |spec| output.copy_from_slice(spec));
    }

    /// Zeroes the plan's input buffer, lets `fill` write the sequence, and
    /// passes bins `0..=len/2` of its DFT to `read`. Nothing is allocated.
    pub(crate) fn with_spectrum<R>(&self, fill: impl FnOnce(&mut [f64]), read: impl FnOnce(&[C64]) -> R) -> R {
        let half = self.len / 2;
        let mut guard = self.buffers.borrow_mut();
        let Buffers {
            input,
            packed,
            scratch,
            output,
        } = &mut *guard;
        input.fill(0.0);
        fill(input);
        for (z, pair) in packed.iter_mut().zip(input.chunks_exact(2)) {
            *z = C64::new(pair[0], pair[1]);
        }
        self.inner.process_with_scratch(packed, scratch);

        for k in 0..=half {
            let zk = packed[k % half];
            let zc = packed[(half - k) % half].conj();
            let even = (zk + zc) * 0.5;
            let odd = (zk - zc) * C64::new(0.0, -0.5);
            output[k] = even + self.twiddles[k] * odd;
        }
        read(output)
    }
}

thread_local! {
    static PLANS: RefCell<(FftPlanner<f64>, HashMap<usize, Rc<RealFft>>)> =
        RefCell::new((FftPlanner::new(), HashMap::new()));
}

/// Returns the cached plan for `len`, building it on first use in this thread.
pub(crate) fn real_fft(len: usize) -> Rc<RealFft> {
    PLANS.with(|cell| {
        let mut guard = cell.borrow_mut();
        let (planner, cache) = &mut *guard;
        if let Some(plan) = cache.get(&len) {
            return Rc::clone(plan);
        }
        let plan = Rc::new(RealFft::new(len, planner));
        cache.insert(len, Rc::clone(&plan));
        plan
    })
}
