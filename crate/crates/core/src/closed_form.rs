//! Analytical self-interference power under small phase noise.
//!
//! With the common phase error folded into the channel estimate, the
//! per-subcarrier residual after ALC and DLC is
//!
//! ```text
//! E|I_k|² = Σ_m [ σ²_k e_m + 2 g_m Σ_{l≠k} σ²_l p_{k-l} (1 - cos(2π(k-l)m/N)) ]
//! ```
//!
//! where `g_m` is the post-ALC tap power, `e_m` the DLC estimation-error
//! power and `p_k` the phase-noise power in DFT bin k.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dft::UnitaryDft;
use crate::error::{check_len, Error, Result};
use crate::spectral_mask::{lin_to_db, BinPowerSpectrum};

/// Exact `J_{k,m} = (1/N) Σ_n e^{j(φ_{n-m} - φ_n)} e^{-j2πkn/N}` with
/// circular indexing of `φ_{n-m}`.
pub fn j_dft(phi: &[f64], m: usize, k: usize) -> Complex64 {
    let n = phi.len();
    let m = m % n;
    (0..n)
        .map(|i| {
            let d = phi[(i + n - m) % n] - phi[i];
            let w = -2.0 * PI * ((k * i) % n) as f64 / n as f64;
            Complex64::from_polar(1.0, d + w)
        })
        .sum::<Complex64>()
        / n as f64
}

/// All N bins of `J_{·,m}` via one FFT.
pub fn j_spectrum(phi: &[f64], m: usize, dft: &UnitaryDft) -> Vec<Complex64> {
    let n = phi.len();
    let m = m % n;
    let mut buf: Vec<_> = (0..n)
        .map(|i| Complex64::from_polar(1.0, phi[(i + n - m) % n] - phi[i]))
        .collect();
    dft.forward_mean(&mut buf);
    buf
}

/// First-order expansion `1·[k=0] + (j/N) Σ_n (φ_{n-m} - φ_n) e^{-j2πkn/N}`.
pub fn j_linearized(phi: &[f64], m: usize, k: usize) -> Complex64 {
    let n = phi.len();
    let m = m % n;
    let s: Complex64 = (0..n)
        .map(|i| {
            let d = phi[(i + n - m) % n] - phi[i];
            d * Complex64::from_polar(1.0, -2.0 * PI * ((k * i) % n) as f64 / n as f64)
        })
        .sum();
    let first = Complex64::i() * s / n as f64;
    if k % n == 0 {
        Complex64::new(1.0, 0.0) + first
    } else {
        first
    }
}

#[inline]
fn one_minus_cos(k: isize, m: usize, n: usize) -> f64 {
    let km = (k.rem_euclid(n as isize) as usize * m) % n;
    1.0 - (2.0 * PI * km as f64 / n as f64).cos()
}

/// `E|J_{k,m}|²` on the signal path: 1 at DC (CPE lives in the channel),
/// `2 p_k (1 - cos(2πkm/N))` elsewhere.
pub fn expected_j_power(spec: &BinPowerSpectrum, k: isize, m: usize) -> f64 {
    let n = spec.n();
    if k.rem_euclid(n as isize) == 0 {
        1.0
    } else {
        2.0 * spec.at(k) * one_minus_cos(k, m, n)
    }
}

/// Diagnostic variant keeping the `1 + 2 p_0 (...)` DC branch of the
/// small-phase expansion.
pub fn expected_j_power_full(spec: &BinPowerSpectrum, k: isize, m: usize) -> f64 {
    let n = spec.n();
    let ici = 2.0 * spec.at(k) * one_minus_cos(k, m, n);
    if k.rem_euclid(n as isize) == 0 {
        1.0 + ici
    } else {
        ici
    }
}

/// Table of `E|J_{k,m}|²` for a set of delays.
#[derive(Debug, Clone, PartialEq)]
pub struct JSpectrum {
    pub delays: Vec<usize>,
    /// `values[i][k]` for delay `delays[i]`.
    pub values: Vec<Vec<f64>>,
}

impl JSpectrum {
    pub fn new(spec: &BinPowerSpectrum, delays: &[usize]) -> Self {
        let n = spec.n() as isize;
        Self {
            delays: delays.to_vec(),
            values: delays
                .iter()
                .map(|&m| (0..n).map(|k| expected_j_power(spec, k, m)).collect())
                .collect(),
        }
    }

    pub fn at(&self, k: usize, m: usize) -> Option<f64> {
        let i = self.delays.iter().position(|&d| d == m)?;
        self.values[i].get(k).copied()
    }
}

/// Per-tap power inputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TapGains {
    pub delay: usize,
    /// `E|h_{m,ALC}|²`.
    pub residual: f64,
    /// `E|h_{m,ALC} - ĥ_{m,ALC}|²`.
    pub est_err: f64,
}

/// Which index drives the cosine of the ICI term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CosineIndex {
    /// `cos(2π(k-l)m/N)`, consistent with the leaking bin's `E|J_{k-l,m}|²`.
    #[default]
    Difference,
    /// `cos(2πkm/N)`, receiving-bin index. Diagnostic only.
    Receiving,
}

/// Expected residual power per subcarrier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualSpectrum {
    pub per_bin: Vec<f64>,
}

impl ResidualSpectrum {
    pub fn total(&self) -> f64 {
        self.per_bin.iter().sum()
    }

    /// Keeps only bins where `mask` is set.
    pub fn restricted_to(&self, mask: &[bool]) -> Self {
        Self {
            per_bin: self
                .per_bin
                .iter()
                .zip(mask)
                .map(|(&v, &keep)| if keep { v } else { 0.0 })
                .collect(),
        }
    }
}

pub fn expected_si_power(
    spec: &BinPowerSpectrum,
    taps: &[TapGains],
    subcarrier_powers: &[f64],
) -> Result<ResidualSpectrum> {
    expected_si_power_with(spec, taps, subcarrier_powers, CosineIndex::Difference)
}

pub fn expected_si_power_with(
    spec: &BinPowerSpectrum,
    taps: &[TapGains],
    subcarrier_powers: &[f64],
    index: CosineIndex,
) -> Result<ResidualSpectrum> {
    let n = spec.n();
    check_len("subcarrier powers", n, subcarrier_powers.len())?;
    if taps.iter().any(|t| !(t.residual >= 0.0 && t.est_err >= 0.0)) {
        return Err(Error::Config("tap gains must be >= 0".into()));
    }
    let est_err: f64 = taps.iter().map(|t| t.est_err).sum();
    let occupied: Vec<(usize, f64)> = subcarrier_powers
        .iter()
        .copied()
        .enumerate()
        .filter(|&(_, s)| s != 0.0)
        .collect();

    let mut per_bin: Vec<f64> = subcarrier_powers.iter().map(|s| s * est_err).collect();
    match index {
        CosineIndex::Difference => {
            // leakage kernel w[d] = Σ_m 2 g_m p_d (1 - cos(2π d m / N)); w[0] = 0
            let kernel: Vec<f64> = (0..n as isize)
                .map(|d| {
                    taps.iter()
                        .map(|t| 2.0 * t.residual * spec.at(d) * one_minus_cos(d, t.delay, n))
                        .sum()
                })
                .collect();
            for (k, out) in per_bin.iter_mut().enumerate() {
                *out += occupied
                    .iter()
                    .filter(|&&(l, _)| l != k)
                    .map(|&(l, s)| s * kernel[(k + n - l) % n])
                    .sum::<f64>();
            }
        }
        CosineIndex::Receiving => {
            for (k, out) in per_bin.iter_mut().enumerate() {
                let leak: f64 = occupied
                    .iter()
                    .filter(|&&(l, _)| l != k)
                    .map(|&(l, s)| s * spec.powers()[(k + n - l) % n])
                    .sum();
                let weight: f64 = taps
                    .iter()
                    .map(|t| 2.0 * t.residual * one_minus_cos(k as isize, t.delay, n))
                    .sum();
                *out += weight * leak;
            }
        }
    }
    Ok(ResidualSpectrum { per_bin })
}

/// `10 log10(p_in / Σ_k E|I_k|²)`; +∞ when the residual vanishes.
pub fn total_sic(res: &ResidualSpectrum, p_in: f64) -> Result<f64> {
    if !(p_in > 0.0 && p_in.is_finite()) {
        return Err(Error::Config(format!("input power {p_in} must be > 0")));
    }
    let r = res.total();
    Ok(if r > 0.0 {
        lin_to_db(p_in / r)
    } else {
        f64::INFINITY
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phase_noise::PhaseNoiseGenerator;
    use crate::spectral_mask::{bin_powers, build_chpll_mask, mask_from_table, PllParams};
    use proptest::prelude::*;

    fn flat(n: usize, level_db: f64) -> BinPowerSpectrum {
        let m = mask_from_table(&[(1.0, level_db), (1e9, level_db)]).unwrap();
        bin_powers(&m, n, 15.36e6).unwrap()
    }

    fn chpll(n: usize) -> BinPowerSpectrum {
        let mask = build_chpll_mask(&PllParams::new(-60.0, -120.0)).unwrap();
        bin_powers(&mask, n, 15.36e6).unwrap()
    }

    #[test]
    fn zero_delay_and_constant_phase() {
        let phi = PhaseNoiseGenerator::new(&flat(64, -90.0)).block(1, 0).samples;
        assert!((j_dft(&phi, 0, 0) - 1.0).norm() < 1e-15);
        for k in 1..64 {
            assert!(j_dft(&phi, 0, k).norm() < 1e-15);
        }
        let c = vec![0.7; 64];
        for m in [0, 1, 5] {
            assert!((j_dft(&c, m, 0) - 1.0).norm() < 1e-15);
            for k in 1..64 {
                assert!(j_dft(&c, m, k).norm() < 1e-15);
            }
        }
    }

    #[test]
    fn exact_close_to_linearized_for_small_phase() {
        // flat spectrum with total variance 1e-4 (σ = 0.01 rad)
        let n = 256;
        let spec = flat(n, -120.0);
        let spec = spec.scaled(1e-4 / spec.total_variance());
        let phi = PhaseNoiseGenerator::new(&spec).block(4, 0).samples;
        for m in [1, 2, 4, 9] {
            for k in 0..n {
                let d = (j_dft(&phi, m, k) - j_linearized(&phi, m, k)).norm();
                assert!(d < 1e-3, "m={m} k={k}: {d}");
            }
        }
    }

    #[test]
    fn fft_route_matches_direct_sum() {
        let n = 128;
        let phi = PhaseNoiseGenerator::new(&flat(n, -100.0)).block(2, 3).samples;
        let dft = UnitaryDft::new(n);
        for m in [0, 1, 4, 127] {
            let all = j_spectrum(&phi, m, &dft);
            for k in 0..n {
                assert!((all[k] - j_dft(&phi, m, k)).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn expected_j_power_examples() {
        let s = flat(1024, -120.0);
        let sigma2 = s.powers()[1];
        for k in 1..1024 {
            assert_eq!(expected_j_power(&s, k, 0), 0.0);
        }
        assert!((expected_j_power(&s, 512, 1) - 4.0 * sigma2).abs() < 1e-22);
        assert_eq!(expected_j_power(&s, 0, 3), 1.0);
        assert_eq!(expected_j_power(&s, 1024, 3), 1.0);
        // DC branch of the full expansion: p_0 = 0 so it reduces to 1
        assert_eq!(expected_j_power_full(&s, 0, 3), 1.0);
        assert_eq!(expected_j_power_full(&s, 7, 3), expected_j_power(&s, 7, 3));

        let table = JSpectrum::new(&s, &[1, 4]);
        assert_eq!(table.at(512, 1), Some(expected_j_power(&s, 512, 1)));
        assert_eq!(table.at(5, 2), None);
    }

    #[test]
    fn zero_spectrum_leaves_estimation_error_only() {
        let n = 64;
        let s = BinPowerSpectrum::zero(n, 1e6);
        let sigma: Vec<f64> = (0..n).map(|k| if k % 3 == 0 { 0.0 } else { 1.0 + k as f64 / 10.0 }).collect();
        let taps = [
            TapGains { delay: 0, residual: 1e-6, est_err: 2e-13 },
            TapGains { delay: 2, residual: 1e-7, est_err: 3e-13 },
        ];
        let r = expected_si_power(&s, &taps, &sigma).unwrap();
        for k in 0..n {
            assert_eq!(r.per_bin[k], sigma[k] * 5e-13);
        }
    }

    #[test]
    fn direct_tap_has_no_phase_noise_term() {
        let s = chpll(1024);
        let sigma = crate::ofdm::OfdmConfig::default().subcarrier_powers();
        let taps = [TapGains { delay: 0, residual: 1e-3, est_err: 1e-13 }];
        let r = expected_si_power(&s, &taps, &sigma).unwrap();
        for k in 0..1024 {
            assert_eq!(r.per_bin[k], sigma[k] * 1e-13);
        }
    }

    #[test]
    fn total_sic_examples() {
        let r = ResidualSpectrum { per_bin: vec![0.25; 4] };
        assert!((total_sic(&r, 1.0).unwrap()).abs() < 1e-12);
        let r = ResidualSpectrum { per_bin: vec![0.25e-10; 4] };
        assert!((total_sic(&r, 1.0).unwrap() - 100.0).abs() < 1e-9);
        let r = ResidualSpectrum { per_bin: vec![0.0; 4] };
        assert_eq!(total_sic(&r, 1.0).unwrap(), f64::INFINITY);
        assert!(total_sic(&r, 0.0).is_err());
    }

    #[test]
    fn null_subcarriers_do_not_leak() {
        let n = 128;
        let s = flat(n, -110.0);
        let taps = [TapGains { delay: 3, residual: 1e-6, est_err: 0.0 }];
        let mut sigma = vec![0.0; n];
        sigma[10] = 1.0;
        let r = expected_si_power(&s, &taps, &sigma).unwrap();
        for k in 0..n {
            let expected = if k == 10 { 0.0 } else { 1e-6 * expected_j_power(&s, k as isize - 10, 3) };
            assert!((r.per_bin[k] - expected).abs() <= 1e-12 * expected.max(1e-30));
        }
    }

    #[test]
    fn receiving_index_variant_differs() {
        let n = 1024;
        let s = chpll(n);
        let sigma: Vec<f64> = (0..n).map(|k| if (1..=300).contains(&k) || k >= n - 300 { 1.0 } else { 0.0 }).collect();
        let taps = [TapGains { delay: 1, residual: 1e-7, est_err: 0.0 }];
        let a = expected_si_power_with(&s, &taps, &sigma, CosineIndex::Difference).unwrap();
        let b = expected_si_power_with(&s, &taps, &sigma, CosineIndex::Receiving).unwrap();
        assert!((lin_to_db(a.total() / b.total())).abs() > 1.0);
    }

    proptest! {
        #[test]
        fn j_power_is_symmetric(k in 1isize..1023, m in 0usize..64) {
            let s = chpll(1024);
            let a = expected_j_power(&s, k, m);
            let b = expected_j_power(&s, 1024 - k, m);
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1e-300));
        }

        #[test]
        fn linear_in_each_input(scale in 0.1f64..50.0, which in 0usize..3) {
            let n = 128;
            let s = flat(n, -105.0);
            let sigma: Vec<f64> = (0..n).map(|k| if (1..=40).contains(&k) || k >= n - 40 { 1.0 } else { 0.0 }).collect();
            let taps = [
                TapGains { delay: 1, residual: 3e-7, est_err: 1e-13 },
                TapGains { delay: 4, residual: 3e-8, est_err: 2e-13 },
            ];
            // isolate one term, scale its input, expect proportional output
            let base_taps: Vec<_> = taps.iter().map(|t| match which {
                0 => TapGains { est_err: 0.0, ..*t },
                1 => TapGains { residual: 0.0, ..*t },
                _ => TapGains { est_err: 0.0, ..*t },
            }).collect();
            let scaled_taps: Vec<_> = base_taps.iter().map(|t| match which {
                0 => TapGains { residual: t.residual * scale, ..*t },
                1 => TapGains { est_err: t.est_err * scale, ..*t },
                _ => *t,
            }).collect();
            let s2 = if which == 2 { s.scaled(scale) } else { s.clone() };
            let a = expected_si_power(&s, &base_taps, &sigma).unwrap();
            let b = expected_si_power(&s2, &scaled_taps, &sigma).unwrap();
            for k in 0..n {
                prop_assert!((b.per_bin[k] - scale * a.per_bin[k]).abs() <= 1e-10 * b.per_bin[k].abs().max(1e-300));
            }
        }
    }
}
