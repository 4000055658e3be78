//! Single-sideband phase-noise masks, the charge-pump PLL mask model, and
//! discretization of a mask onto DFT bins.
//!
//! A [`SpectralMask`] is piecewise linear in (log10 offset, dBc/Hz). Outside
//! its breakpoints it continues the terminal slopes, so a grid that reaches
//! slightly past the tabulated range sees no artificial cliff.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Total phase variance above which the small-phase linearization used by the
/// closed form is no longer trustworthy, in rad².
pub const SMALL_PHASE_VARIANCE_LIMIT: f64 = 0.01;

#[inline]
pub fn db_to_lin(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

#[inline]
pub fn lin_to_db(lin: f64) -> f64 {
    10.0 * lin.log10()
}

/// SSB phase-noise mask L(f) in dBc/Hz.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralMask {
    /// (offset in Hz, level in dBc/Hz), strictly increasing in offset.
    points: Vec<(f64, f64)>,
}

impl SpectralMask {
    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    /// Level in dBc/Hz at `offset_hz` (> 0).
    pub fn level_db(&self, offset_hz: f64) -> f64 {
        debug_assert!(offset_hz > 0.0);
        let x = offset_hz.log10();
        let pts = &self.points;
        // index of the segment [i, i+1] used for interpolation / extrapolation
        let i = match pts.partition_point(|&(f, _)| f <= offset_hz) {
            0 => 0,
            p if p >= pts.len() => pts.len() - 2,
            p => p - 1,
        };
        let (f0, l0) = pts[i];
        let (f1, l1) = pts[i + 1];
        let (x0, x1) = (f0.log10(), f1.log10());
        l0 + (l1 - l0) * (x - x0) / (x1 - x0)
    }

    /// Linear density 10^(L/10) in rad²/Hz.
    pub fn density(&self, offset_hz: f64) -> f64 {
        db_to_lin(self.level_db(offset_hz))
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv_reader(file)
    }

    /// Parses `offset_hz,level_dbc_hz` rows; a header row is required.
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.len() != 2
            || &headers[0] != "offset_hz"
            || &headers[1] != "level_dbc_hz"
        {
            return Err(Error::InvalidMask(format!(
                "expected header `offset_hz,level_dbc_hz`, found `{}`",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut points = Vec::new();
        for rec in rdr.deserialize::<(f64, f64)>() {
            points.push(rec?);
        }
        mask_from_table(&points)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["offset_hz", "level_dbc_hz"])?;
        for &(f, l) in &self.points {
            w.write_record([f.to_string(), l.to_string()])?;
        }
        w.flush().map_err(|e| Error::io("<mask csv>", e))?;
        Ok(())
    }
}

/// Builds a mask from tabulated (offset_hz, level_dbc_hz) breakpoints.
pub fn mask_from_table(points: &[(f64, f64)]) -> Result<SpectralMask> {
    if points.len() < 2 {
        return Err(Error::InvalidMask(format!(
            "need at least 2 breakpoints, got {}",
            points.len()
        )));
    }
    for (i, &(f, l)) in points.iter().enumerate() {
        if !f.is_finite() || f <= 0.0 {
            return Err(Error::InvalidMask(format!(
                "breakpoint {i}: offset {f} must be finite and > 0"
            )));
        }
        if !l.is_finite() {
            return Err(Error::InvalidMask(format!(
                "breakpoint {i}: level {l} is not finite"
            )));
        }
    }
    if let Some(w) = points.windows(2).position(|w| w[1].0 <= w[0].0) {
        return Err(Error::InvalidMask(format!(
            "offsets must be strictly increasing (breakpoints {} and {})",
            w,
            w + 1
        )));
    }
    Ok(SpectralMask {
        points: points.to_vec(),
    })
}

/// PLL loop bandwidth selection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LoopBandwidth {
    /// Offset where reference and VCO noise cross, clamped to
    /// [`LOOP_BW_MIN_HZ`, `LOOP_BW_MAX_HZ`].
    #[default]
    Auto,
    /// Explicit natural frequency in Hz.
    Hz(f64),
    /// Open-loop limit: the mask is the bare VCO noise.
    Open,
}

pub const LOOP_BW_MIN_HZ: f64 = 1e3;
pub const LOOP_BW_MAX_HZ: f64 = 1e6;

/// Charge-pump PLL oscillator parameters.
///
/// The VCO is described by two SSB measurements: `l_f` in the flicker region
/// (at `f_lf`) and `l_w` in the thermal region (at `f_lw`). The crystal
/// reference is a -20 dB/dec thermal floor of `co_level` at 1 MHz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PllParams {
    pub l_f: f64,
    pub f_lf: f64,
    pub l_w: f64,
    pub f_lw: f64,
    pub co_level: f64,
    pub loop_bandwidth: LoopBandwidth,
    pub damping: f64,
}

impl Default for PllParams {
    fn default() -> Self {
        Self {
            l_f: -60.0,
            f_lf: 1e3,
            l_w: -120.0,
            f_lw: 1e6,
            co_level: -160.0,
            loop_bandwidth: LoopBandwidth::Auto,
            damping: 0.707,
        }
    }
}

/// Inclusive band of admissible `l_w` for a given `l_f`.
///
/// Between the two measurement offsets the VCO mask falls at least
/// 20 dB/dec (thermal only) and at most 30 dB/dec (flicker only). With the
/// default 3-decade spacing this is `l_f - 90 <= l_w <= l_f - 60`.
pub fn feasible_lw_band(l_f: f64, f_lf: f64, f_lw: f64) -> (f64, f64) {
    let decades = (f_lw / f_lf).log10();
    (l_f - 30.0 * decades, l_f - 20.0 * decades)
}

const BAND_EPS: f64 = 1e-9;

impl PllParams {
    pub fn new(l_f: f64, l_w: f64) -> Self {
        Self {
            l_f,
            l_w,
            ..Self::default()
        }
    }

    pub fn with_loop_bandwidth(mut self, bw: LoopBandwidth) -> Self {
        self.loop_bandwidth = bw;
        self
    }

    pub fn is_feasible(&self) -> bool {
        self.validate().is_ok()
    }

    pub fn validate(&self) -> Result<()> {
        let all_finite = [self.l_f, self.f_lf, self.l_w, self.f_lw, self.co_level, self.damping]
            .iter()
            .all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::Config("PLL parameters must be finite".into()));
        }
        if self.f_lf <= 0.0 || self.f_lw <= self.f_lf {
            return Err(Error::Config(format!(
                "measurement offsets must satisfy 0 < f_lf < f_lw (got {} Hz, {} Hz)",
                self.f_lf, self.f_lw
            )));
        }
        if self.damping <= 0.0 {
            return Err(Error::Config(format!(
                "damping must be positive, got {}",
                self.damping
            )));
        }
        if self.l_f >= 0.0 || self.l_w >= 0.0 {
            return Err(Error::InfeasibleOscillator(format!(
                "l_f and l_w must be negative dBc/Hz (got l_f = {}, l_w = {})",
                self.l_f, self.l_w
            )));
        }
        let (lo, hi) = feasible_lw_band(self.l_f, self.f_lf, self.f_lw);
        if self.l_w < lo - BAND_EPS {
            return Err(Error::InfeasibleOscillator(format!(
                "l_w = {} dBc/Hz is below the lower bound l_f - {} = {} dBc/Hz",
                self.l_w,
                self.l_f - lo,
                lo
            )));
        }
        if self.l_w > hi + BAND_EPS {
            return Err(Error::InfeasibleOscillator(format!(
                "l_w = {} dBc/Hz is above the upper bound l_f - {} = {} dBc/Hz",
                self.l_w,
                self.l_f - hi,
                hi
            )));
        }
        if let LoopBandwidth::Hz(bw) = self.loop_bandwidth {
            if !(LOOP_BW_MIN_HZ..=LOOP_BW_MAX_HZ).contains(&bw) {
                return Err(Error::Config(format!(
                    "loop bandwidth {bw} Hz outside [{LOOP_BW_MIN_HZ}, {LOOP_BW_MAX_HZ}] Hz"
                )));
            }
        }
        Ok(())
    }

    /// Flicker coefficient K3 with L_vco = K3/f³ + K2/f².
    fn k3(&self) -> f64 {
        db_to_lin(self.l_f) * self.f_lf.powi(3)
    }

    fn k2(&self) -> f64 {
        db_to_lin(self.l_w) * self.f_lw.powi(2)
    }

    pub fn vco_density(&self, f: f64) -> f64 {
        self.k3() / f.powi(3) + self.k2() / (f * f)
    }

    pub fn reference_density(&self, f: f64) -> f64 {
        db_to_lin(self.co_level) * (1e6 / f).powi(2)
    }

    /// Resolved natural frequency of the loop, `None` in the open-loop limit.
    pub fn natural_frequency(&self) -> Option<f64> {
        match self.loop_bandwidth {
            LoopBandwidth::Open => None,
            LoopBandwidth::Hz(bw) => Some(bw),
            LoopBandwidth::Auto => Some(self.crossover_frequency()),
        }
    }

    /// Offset where the reference and VCO densities are equal, clamped to the
    /// admissible loop-bandwidth range.
    ///
    /// `log(L_vco / L_ref)` is strictly decreasing in f, so the crossing is
    /// unique when it exists; if the VCO dominates over the whole range the
    /// loop is as wide as allowed, and vice versa.
    fn crossover_frequency(&self) -> f64 {
        let excess = |f: f64| self.vco_density(f).ln() - self.reference_density(f).ln();
        let (mut lo, mut hi) = (LOOP_BW_MIN_HZ.log10(), LOOP_BW_MAX_HZ.log10());
        if excess(LOOP_BW_MAX_HZ) >= 0.0 {
            return LOOP_BW_MAX_HZ;
        }
        if excess(LOOP_BW_MIN_HZ) <= 0.0 {
            return LOOP_BW_MIN_HZ;
        }
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if excess(10f64.powf(mid)) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        10f64.powf(0.5 * (lo + hi))
    }

    /// Composite SSB density (linear) of the locked oscillator at offset `f`.
    pub fn ssb_density(&self, f: f64) -> f64 {
        composite_density(self, f, self.natural_frequency())
    }
}

/// |H|² L_ref + |1 - H|² L_vco for a second-order loop with natural
/// frequency `fn_hz` and the parameter damping.
pub(crate) fn composite_density(p: &PllParams, f: f64, fn_hz: Option<f64>) -> f64 {
    let vco = p.vco_density(f);
    let Some(fn_hz) = fn_hz else {
        return vco;
    };
    let x = f / fn_hz;
    let x2 = x * x;
    let z2 = 4.0 * p.damping * p.damping;
    let den = (1.0 - x2).powi(2) + z2 * x2;
    let lowpass = (1.0 + z2 * x2) / den;
    let highpass = x2 * x2 / den;
    lowpass * p.reference_density(f) + highpass * vco
}

/// Logarithmic offset grid on which analytic masks are sampled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogGrid {
    pub f_min_hz: f64,
    pub f_max_hz: f64,
    pub points_per_decade: usize,
}

impl Default for LogGrid {
    /// 100 Hz (one bin of the finest anticipated grid) up to half the default
    /// 15.36 MHz sample rate.
    fn default() -> Self {
        Self {
            f_min_hz: 100.0,
            f_max_hz: 7.68e6,
            points_per_decade: 50,
        }
    }
}

impl LogGrid {
    pub fn offsets(&self) -> Vec<f64> {
        let (a, b) = (self.f_min_hz.log10(), self.f_max_hz.log10());
        let steps = (((b - a) * self.points_per_decade as f64).ceil() as usize).max(1);
        (0..=steps)
            .map(|i| 10f64.powf(a + (b - a) * i as f64 / steps as f64))
            .collect()
    }
}

pub fn build_chpll_mask(p: &PllParams) -> Result<SpectralMask> {
    build_chpll_mask_on(p, &LogGrid::default())
}

/// Samples the composite CHPLL mask on `grid`.
pub fn build_chpll_mask_on(p: &PllParams, grid: &LogGrid) -> Result<SpectralMask> {
    p.validate()?;
    if !(grid.f_min_hz > 0.0 && grid.f_max_hz > grid.f_min_hz) || grid.points_per_decade < 20 {
        return Err(Error::Config(format!(
            "invalid mask grid {grid:?} (need 0 < f_min < f_max, >= 20 points/decade)"
        )));
    }
    let fn_hz = p.natural_frequency();
    let points: Vec<_> = grid
        .offsets()
        .into_iter()
        .map(|f| (f, lin_to_db(composite_density(p, f, fn_hz))))
        .collect();
    mask_from_table(&points)
}

/// Per-bin two-sided phase-noise powers `σ²_{k,PN}` in rad².
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinPowerSpectrum {
    n: usize,
    bin_powers: Vec<f64>,
    sample_rate_hz: f64,
}

impl BinPowerSpectrum {
    /// Spectrum of an ideal oscillator.
    pub fn zero(n: usize, sample_rate_hz: f64) -> Self {
        Self {
            n,
            bin_powers: vec![0.0; n],
            sample_rate_hz,
        }
    }

    /// Wraps explicit bin powers after checking the DC, symmetry and sign
    /// invariants.
    pub fn from_bin_powers(bin_powers: Vec<f64>, sample_rate_hz: f64) -> Result<Self> {
        let n = bin_powers.len();
        if n < 8 {
            return Err(Error::Config(format!("DFT length {n} < 8")));
        }
        if bin_powers[0] != 0.0 {
            return Err(Error::Config("bin 0 must carry zero power".into()));
        }
        if bin_powers.iter().any(|&p| !p.is_finite() || p < 0.0) {
            return Err(Error::Config("bin powers must be finite and >= 0".into()));
        }
        if (1..n).any(|k| bin_powers[k] != bin_powers[n - k]) {
            return Err(Error::Config("bin powers must satisfy p[k] = p[n-k]".into()));
        }
        let spec = Self {
            n,
            bin_powers,
            sample_rate_hz,
        };
        spec.warn_if_large();
        Ok(spec)
    }

    fn warn_if_large(&self) {
        let v = self.total_variance();
        if v >= SMALL_PHASE_VARIANCE_LIMIT {
            log::warn!(
                "phase-noise variance {v:.3e} rad² is outside the small-phase regime (< {SMALL_PHASE_VARIANCE_LIMIT} rad²)"
            );
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn bin_spacing_hz(&self) -> f64 {
        self.sample_rate_hz / self.n as f64
    }

    pub fn powers(&self) -> &[f64] {
        &self.bin_powers
    }

    /// Power at bin `k`, taken modulo n.
    #[inline]
    pub fn at(&self, k: isize) -> f64 {
        self.bin_powers[k.rem_euclid(self.n as isize) as usize]
    }

    pub fn total_variance(&self) -> f64 {
        self.bin_powers.iter().sum()
    }

    pub fn is_small_phase(&self) -> bool {
        self.total_variance() < SMALL_PHASE_VARIANCE_LIMIT
    }

    pub fn is_zero(&self) -> bool {
        self.bin_powers.iter().all(|&p| p == 0.0)
    }

    /// Multiplies every bin by `factor` (>= 0).
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            n: self.n,
            bin_powers: self.bin_powers.iter().map(|p| p * factor).collect(),
            sample_rate_hz: self.sample_rate_hz,
        }
    }
}

/// Discretizes `mask` onto an n-point DFT grid at sample rate `fs`.
///
/// Each of the bins k and n-k receives the SSB density times the bin width,
/// so the pair carries the double-sideband power of that offset.
pub fn bin_powers(mask: &SpectralMask, n: usize, fs: f64) -> Result<BinPowerSpectrum> {
    if n < 8 {
        return Err(Error::Config(format!("DFT length {n} < 8")));
    }
    if !(fs > 0.0 && fs.is_finite()) {
        return Err(Error::Config(format!("sample rate {fs} must be > 0")));
    }
    let df = fs / n as f64;
    let mut p = vec![0.0; n];
    for k in 1..=n / 2 {
        let v = mask.density(k as f64 * df) * df;
        p[k] = v;
        p[n - k] = v;
    }
    let spec = BinPowerSpectrum {
        n,
        bin_powers: p,
        sample_rate_hz: fs,
    };
    spec.warn_if_large();
    Ok(spec)
}
