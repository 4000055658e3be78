//! Colored phase-noise synthesis from per-bin powers, plus the up/down
//! conversion mixers.
//!
//! Each block is drawn directly in the frequency domain: independent circular
//! Gaussians shaped by the bin powers, Hermitian-symmetric so the inverse DFT
//! is real. Block length equals the spectrum's DFT length.

use std::io::Write;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dft::UnitaryDft;
use crate::error::{check_len, Error, Result};
use crate::rng;
use crate::spectral_mask::BinPowerSpectrum;

/// Identifies the stream a block was drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedLabel {
    pub seed: u64,
    pub block: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseNoiseBlock {
    pub samples: Vec<f64>,
    pub sample_rate_hz: f64,
    pub seed_label: SeedLabel,
}

impl PhaseNoiseBlock {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Debug dump as `n,phi_rad` rows.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["n", "phi_rad"])?;
        for (i, phi) in self.samples.iter().enumerate() {
            w.write_record([i.to_string(), phi.to_string()])?;
        }
        w.flush().map_err(|e| Error::io("<phase noise csv>", e))?;
        Ok(())
    }
}

/// Draws phase-noise blocks for a fixed spectrum.
#[derive(Debug, Clone)]
pub struct PhaseNoiseGenerator {
    /// Standard deviation of each frequency-domain coefficient, sqrt(p_k n).
    amplitudes: Vec<f64>,
    sample_rate_hz: f64,
    dft: UnitaryDft,
}

impl PhaseNoiseGenerator {
    pub fn new(spec: &BinPowerSpectrum) -> Self {
        let n = spec.n();
        Self {
            amplitudes: spec
                .powers()
                .iter()
                .map(|p| (p * n as f64).sqrt())
                .collect(),
            sample_rate_hz: spec.sample_rate_hz(),
            dft: UnitaryDft::new(n),
        }
    }

    pub fn n(&self) -> usize {
        self.amplitudes.len()
    }

    /// Draws one block of samples from `rng`.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let n = self.n();
        let mut spec = vec![Complex64::new(0.0, 0.0); n];
        let half = std::f64::consts::FRAC_1_SQRT_2;
        for k in 1..n.div_ceil(2) {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            let z = Complex64::new(re, im) * (self.amplitudes[k] * half);
            spec[k] = z;
            spec[n - k] = z.conj();
        }
        if n % 2 == 0 {
            let re: f64 = rng.sample(StandardNormal);
            spec[n / 2] = Complex64::new(re * self.amplitudes[n / 2], 0.0);
        }
        self.dft.inverse(&mut spec);
        spec.into_iter().map(|z| z.re).collect()
    }

    /// Block `index` of the stream keyed by `seed`.
    pub fn block(&self, seed: u64, index: u64) -> PhaseNoiseBlock {
        let mut r = rng::stream(seed, &[rng::Purpose::PhaseNoise as u64, index]);
        PhaseNoiseBlock {
            samples: self.draw(&mut r),
            sample_rate_hz: self.sample_rate_hz,
            seed_label: SeedLabel { seed, block: index },
        }
    }
}

/// Generates `block_count` independent blocks; block i depends only on
/// (spec, seed, i).
pub fn generate(spec: &BinPowerSpectrum, block_count: usize, seed: u64) -> Result<Vec<PhaseNoiseBlock>> {
    if block_count == 0 {
        return Err(Error::Config("block_count must be >= 1".into()));
    }
    let gen = PhaseNoiseGenerator::new(spec);
    Ok((0..block_count as u64)
        .into_par_iter()
        .map(|i| gen.block(seed, i))
        .collect())
}

fn rotate(x: &[Complex64], phi: &[f64], sign: f64) -> Result<Vec<Complex64>> {
    check_len("phase samples", x.len(), phi.len())?;
    Ok(x.iter()
        .zip(phi)
        .map(|(&v, &p)| v * Complex64::from_polar(1.0, sign * p))
        .collect())
}

/// Upconversion with a noisy oscillator: x_n e^{jφ_n}.
pub fn mix_up(x: &[Complex64], phi: &[f64]) -> Result<Vec<Complex64>> {
    rotate(x, phi, 1.0)
}

/// Downconversion with the same oscillator: r_n e^{-jφ_n}.
pub fn mix_down(r: &[Complex64], phi: &[f64]) -> Result<Vec<Complex64>> {
    rotate(r, phi, -1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral_mask::{bin_powers, mask_from_table};
    use proptest::prelude::*;

    fn flat_spectrum() -> BinPowerSpectrum {
        let m = mask_from_table(&[(1e3, -120.0), (1e7, -120.0)]).unwrap();
        bin_powers(&m, 1024, 15.36e6).unwrap()
    }

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn zero_spectrum_gives_zero_block() {
        let s = BinPowerSpectrum::zero(64, 1e6);
        for b in generate(&s, 3, 9).unwrap() {
            assert_eq!(b.len(), 64);
            assert!(b.samples.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn zero_blocks_rejected() {
        assert!(generate(&flat_spectrum(), 0, 1).is_err());
    }

    #[test]
    fn flat_spectrum_sample_variance() {
        let s = flat_spectrum();
        let expected = 1023.0 * 1.5e-8;
        let blocks = generate(&s, 10_000, 42).unwrap();
        let (sum, sum2, count) = blocks.iter().flat_map(|b| &b.samples).fold(
            (0.0, 0.0, 0usize),
            |(a, b, n), &v| (a + v, b + v * v, n + 1),
        );
        let mean = sum / count as f64;
        let var = sum2 / count as f64 - mean * mean;
        assert!(((var - expected) / expected).abs() < 0.03, "{var} vs {expected}");
        // zero mean: |mean| < 4 sigma / sqrt(n * blocks)
        assert!(mean.abs() < 4.0 * expected.sqrt() / (count as f64).sqrt());
    }

    #[test]
    fn averaged_periodogram_matches_bins() {
        let m = mask_from_table(&[(1e3, -90.0), (1e5, -100.0), (1e6, -125.0), (1e7, -140.0)]).unwrap();
        let s = bin_powers(&m, 256, 15.36e6).unwrap();
        let n = s.n();
        let blocks = generate(&s, 2000, 5).unwrap();
        let dft = UnitaryDft::new(n);
        let mut acc = vec![0.0; n];
        for b in &blocks {
            let mut buf: Vec<_> = b.samples.iter().map(|&v| c(v, 0.0)).collect();
            dft.forward_mean(&mut buf);
            acc.iter_mut().zip(&buf).for_each(|(a, z)| *a += z.norm_sqr());
        }
        for k in 1..n {
            let est = acc[k] / blocks.len() as f64;
            let db = 10.0 * (est / s.powers()[k]).log10();
            assert!(db.abs() < 1.0, "bin {k}: {db} dB");
        }
    }

    #[test]
    fn deterministic_per_block_index() {
        let s = flat_spectrum();
        let all = generate(&s, 6, 11).unwrap();
        let gen = PhaseNoiseGenerator::new(&s);
        for i in [5u64, 2, 0] {
            assert_eq!(gen.block(11, i).samples, all[i as usize].samples);
        }
        assert_ne!(all[0].samples, all[1].samples);
    }

    #[test]
    fn csv_dump_has_one_row_per_sample() {
        let b = PhaseNoiseGenerator::new(&flat_spectrum()).block(1, 0);
        let mut out = Vec::new();
        b.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().count(), 1 + 1024);
        assert!(text.starts_with("n,phi_rad\n0,"));
    }

    #[test]
    fn mixer_identities() {
        let x = vec![c(1.0, 2.0), c(-0.5, 0.25), c(0.0, -3.0)];
        assert_eq!(mix_up(&x, &[0.0; 3]).unwrap(), x);
        assert_eq!(mix_down(&x, &[0.0; 3]).unwrap(), x);

        let q = mix_up(&x, &[std::f64::consts::FRAC_PI_2; 3]).unwrap();
        for (a, b) in q.iter().zip(&x) {
            assert!((a - b * c(0.0, 1.0)).norm() < 1e-15);
        }
        let d = mix_down(&x, &[0.3; 3]).unwrap();
        for (a, b) in d.iter().zip(&x) {
            assert!((a - b * Complex64::from_polar(1.0, -0.3)).norm() < 1e-15);
        }
        assert!(mix_up(&x, &[0.0; 2]).is_err());
        assert!(mix_down(&x, &[0.0; 4]).is_err());
    }

    #[test]
    fn delayed_round_trip_gives_phase_difference() {
        let gen = PhaseNoiseGenerator::new(&flat_spectrum().scaled(1e4));
        let phi = gen.block(3, 0).samples;
        let n = phi.len();
        let x: Vec<_> = (0..n).map(|i| c((i as f64).cos(), (0.3 * i as f64).sin())).collect();
        let m = 3;
        let up = mix_up(&x, &phi).unwrap();
        let delayed: Vec<_> = (0..n).map(|i| up[(i + n - m) % n]).collect();
        let down = mix_down(&delayed, &phi).unwrap();
        for i in 0..n {
            let j = (i + n - m) % n;
            let expected = x[j] * Complex64::from_polar(1.0, phi[j] - phi[i]);
            assert!((down[i] - expected).norm() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn mixers_preserve_modulus_and_invert(
            samples in proptest::collection::vec((-10.0f64..10.0, -10.0f64..10.0, -7.0f64..7.0), 1..64)
        ) {
            let x: Vec<_> = samples.iter().map(|&(a, b, _)| c(a, b)).collect();
            let phi: Vec<_> = samples.iter().map(|&(_, _, p)| p).collect();
            let up = mix_up(&x, &phi).unwrap();
            let back = mix_down(&up, &phi).unwrap();
            for i in 0..x.len() {
                prop_assert!((up[i].norm() - x[i].norm()).abs() <= 1e-12 * (1.0 + x[i].norm()));
                prop_assert!((back[i] - x[i]).norm() <= 1e-12 * (1.0 + x[i].norm()));
            }
        }
    }
}
