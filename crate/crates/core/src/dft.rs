//! Unitary DFT wrapper around `rustfft`.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Forward/inverse DFT pair of fixed length with 1/sqrt(n) scaling on both
/// directions, so that Parseval holds without extra factors.
#[derive(Clone)]
pub struct UnitaryDft {
    n: usize,
    scale: f64,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for UnitaryDft {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("UnitaryDft").field("n", &self.n).finish()
    }
}

impl UnitaryDft {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            n,
            scale: 1.0 / (n as f64).sqrt(),
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn forward(&self, buf: &mut [Complex64]) {
        self.forward.process(buf);
        buf.iter_mut().for_each(|v| *v *= self.scale);
    }

    pub fn inverse(&self, buf: &mut [Complex64]) {
        self.inverse.process(buf);
        buf.iter_mut().for_each(|v| *v *= self.scale);
    }

    /// Forward transform with the 1/n convention used for phase-noise
    /// spectra (`Φ_k` and `J_{k,m}`).
    pub fn forward_mean(&self, buf: &mut [Complex64]) {
        self.forward.process(buf);
        let s = 1.0 / self.n as f64;
        buf.iter_mut().for_each(|v| *v *= s);
    }
}
