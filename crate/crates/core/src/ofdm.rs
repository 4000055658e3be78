//! LTE-like OFDM baseband: QAM subcarrier grids, CP-OFDM modulation and
//! demodulation with unitary DFT scaling.

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dft::UnitaryDft;
use crate::error::{check_len, Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OfdmConfig {
    pub n_subcarriers: usize,
    pub cp_len: usize,
    /// Active subcarriers on each side of DC; DC itself is always null.
    pub active_per_side: usize,
    pub sample_rate_hz: f64,
    pub qam_order: u32,
    pub n_symbols: usize,
}

impl Default for OfdmConfig {
    fn default() -> Self {
        Self {
            n_subcarriers: 1024,
            cp_len: 63,
            active_per_side: 300,
            sample_rate_hz: 15.36e6,
            qam_order: 16,
            n_symbols: 200,
        }
    }
}

impl OfdmConfig {
    pub fn validate(&self) -> Result<()> {
        let n = self.n_subcarriers;
        if n < 8 {
            return Err(Error::Config(format!("n_subcarriers = {n} < 8")));
        }
        if 2 * self.active_per_side >= n {
            return Err(Error::Config(format!(
                "2 * active_per_side ({}) must be < n_subcarriers ({n})",
                2 * self.active_per_side
            )));
        }
        if self.cp_len >= n {
            return Err(Error::Config(format!("cp_len {} must be < {n}", self.cp_len)));
        }
        if !matches!(self.qam_order, 4 | 16 | 64) {
            return Err(Error::Config(format!(
                "qam_order {} not in {{4, 16, 64}}",
                self.qam_order
            )));
        }
        if !(self.sample_rate_hz > 0.0 && self.sample_rate_hz.is_finite()) {
            return Err(Error::Config("sample_rate_hz must be > 0".into()));
        }
        if self.n_symbols == 0 {
            return Err(Error::Config("n_symbols must be >= 1".into()));
        }
        Ok(())
    }

    pub fn symbol_len(&self) -> usize {
        self.n_subcarriers + self.cp_len
    }

    pub fn subcarrier_spacing_hz(&self) -> f64 {
        self.sample_rate_hz / self.n_subcarriers as f64
    }

    /// Bin indices 1..=a and n-a..n.
    pub fn active_bins(&self) -> Vec<usize> {
        let n = self.n_subcarriers;
        let a = self.active_per_side;
        (1..=a).chain(n - a..n).collect()
    }

    pub fn active_mask(&self) -> Vec<bool> {
        let mut m = vec![false; self.n_subcarriers];
        for k in self.active_bins() {
            m[k] = true;
        }
        m
    }

    /// Per-bin expected symbol power σ²_l: 1 on active bins, 0 elsewhere.
    pub fn subcarrier_powers(&self) -> Vec<f64> {
        self.active_mask()
            .into_iter()
            .map(|a| if a { 1.0 } else { 0.0 })
            .collect()
    }
}

/// Square QAM alphabet scaled to unit average power.
pub fn constellation(order: u32) -> Vec<Complex64> {
    let side = (order as f64).sqrt() as i32;
    let norm = (2.0 * (order as f64 - 1.0) / 3.0).sqrt();
    let levels: Vec<f64> = (0..side).map(|a| (2 * a - (side - 1)) as f64).collect();
    levels
        .iter()
        .flat_map(|&re| levels.iter().map(move |&im| Complex64::new(re, im) / norm))
        .collect()
}

/// Frequency-domain data X[symbol][k].
#[derive(Debug, Clone, PartialEq)]
pub struct SubcarrierGrid {
    pub symbols: Vec<Vec<Complex64>>,
    pub active: Vec<bool>,
}

impl SubcarrierGrid {
    pub fn n_subcarriers(&self) -> usize {
        self.active.len()
    }

    pub fn n_symbols(&self) -> usize {
        self.symbols.len()
    }

    pub fn sigma2(&self) -> Vec<f64> {
        self.active.iter().map(|&a| if a { 1.0 } else { 0.0 }).collect()
    }
}

/// One symbol of uniform QAM points on the active bins.
pub fn draw_symbol<R: Rng + ?Sized>(cfg: &OfdmConfig, alphabet: &[Complex64], rng: &mut R) -> Vec<Complex64> {
    let mut x = vec![Complex64::new(0.0, 0.0); cfg.n_subcarriers];
    for k in cfg.active_bins() {
        x[k] = alphabet[rng.random_range(0..alphabet.len())];
    }
    x
}

pub fn draw_grid(cfg: &OfdmConfig, seed: u64) -> Result<SubcarrierGrid> {
    cfg.validate()?;
    let alphabet = constellation(cfg.qam_order);
    let symbols = (0..cfg.n_symbols as u64)
        .map(|s| {
            let mut r = rng::stream(seed, &[rng::Purpose::Data as u64, s]);
            draw_symbol(cfg, &alphabet, &mut r)
        })
        .collect();
    Ok(SubcarrierGrid {
        symbols,
        active: cfg.active_mask(),
    })
}

/// CP-OFDM modulator/demodulator bound to one configuration.
#[derive(Debug, Clone)]
pub struct OfdmModem {
    cfg: OfdmConfig,
    dft: UnitaryDft,
}

impl OfdmModem {
    pub fn new(cfg: OfdmConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            dft: UnitaryDft::new(cfg.n_subcarriers),
            cfg,
        })
    }

    pub fn config(&self) -> &OfdmConfig {
        &self.cfg
    }

    /// Inverse DFT of one symbol with the last `cp_len` samples prepended.
    pub fn modulate_symbol(&self, x: &[Complex64]) -> Result<Vec<Complex64>> {
        let n = self.cfg.n_subcarriers;
        check_len("subcarriers per symbol", n, x.len())?;
        let mut body = x.to_vec();
        self.dft.inverse(&mut body);
        let mut out = Vec::with_capacity(n + self.cfg.cp_len);
        out.extend_from_slice(&body[n - self.cfg.cp_len..]);
        out.extend_from_slice(&body);
        Ok(out)
    }

    /// Strips the CP and applies the forward DFT.
    pub fn demodulate_symbol(&self, y: &[Complex64]) -> Result<Vec<Complex64>> {
        check_len("samples per symbol", self.cfg.symbol_len(), y.len())?;
        let mut body = y[self.cfg.cp_len..].to_vec();
        self.dft.forward(&mut body);
        Ok(body)
    }

    pub fn modulate(&self, grid: &SubcarrierGrid) -> Result<Vec<Complex64>> {
        check_len("grid subcarriers", self.cfg.n_subcarriers, grid.n_subcarriers())?;
        let mut out = Vec::with_capacity(grid.n_symbols() * self.cfg.symbol_len());
        for x in &grid.symbols {
            out.extend(self.modulate_symbol(x)?);
        }
        Ok(out)
    }

    pub fn demodulate(&self, y: &[Complex64]) -> Result<SubcarrierGrid> {
        let len = self.cfg.symbol_len();
        check_len("sample stream", self.cfg.n_symbols * len, y.len())?;
        let symbols = y
            .chunks_exact(len)
            .map(|s| self.demodulate_symbol(s))
            .collect::<Result<_>>()?;
        Ok(SubcarrierGrid {
            symbols,
            active: self.cfg.active_mask(),
        })
    }
}

pub fn modulate(grid: &SubcarrierGrid, cfg: &OfdmConfig) -> Result<Vec<Complex64>> {
    OfdmModem::new(*cfg)?.modulate(grid)
}

pub fn demodulate(y: &[Complex64], cfg: &OfdmConfig) -> Result<SubcarrierGrid> {
    OfdmModem::new(*cfg)?.demodulate(y)
}

/// Linear convolution of a sample buffer with a sparse tapped delay line,
/// zero initial state: out[i] = Σ_m taps[m].1 * x[i - taps[m].0].
pub fn tdl_filter(taps: &[(usize, Complex64)], x: &[Complex64]) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); x.len()];
    for &(d, h) in taps {
        for i in d..x.len() {
            out[i] += h * x[i - d];
        }
    }
    out
}
