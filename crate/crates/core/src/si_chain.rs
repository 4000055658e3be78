//! Self-interference path of a shared-oscillator full-duplex transceiver.
//!
//! The transmit samples are upconverted with phase noise φ, pass the coupling
//! channel after analog cancellation (ALC), and are downconverted by the same
//! oscillator. Digital cancellation (DLC) then subtracts a tapped-delay-line
//! replica whose taps include the per-symbol common phase error, so only the
//! inter-carrier part of the phase noise survives.
//!
//! ALC and DLC are modeled statistically: ALC replaces the direct tap by a
//! Gaussian residual of the power that achieves the requested level on the
//! whole channel, DLC adds Gaussian estimation error to every tap.

use std::io::Read;
use std::path::Path;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::closed_form::TapGains;
use crate::error::{Error, Result};
use crate::ofdm::{constellation, draw_symbol, tdl_filter, OfdmConfig, OfdmModem};
use crate::phase_noise::{mix_down, mix_up, PhaseNoiseGenerator};
use crate::rng::{self, Purpose};
use crate::spectral_mask::{db_to_lin, lin_to_db, BinPowerSpectrum};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tap {
    pub delay_samples: usize,
    pub gain_db: f64,
}

/// Coupling-channel power delay profile. Antenna separation attenuates the
/// zero-delay tap only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChannelProfile {
    pub taps: Vec<Tap>,
    pub antenna_separation_db: f64,
}

impl Default for ChannelProfile {
    fn default() -> Self {
        Self::from_pdp(&[(0, 0.0), (1, -65.0), (2, -70.0), (4, -75.0)], 30.0)
    }
}

impl ChannelProfile {
    pub fn from_pdp(taps: &[(usize, f64)], antenna_separation_db: f64) -> Self {
        Self {
            taps: taps
                .iter()
                .map(|&(delay_samples, gain_db)| Tap {
                    delay_samples,
                    gain_db,
                })
                .collect(),
            antenna_separation_db,
        }
    }

    /// Direct path plus one reflection of `gain_db` at `delay`.
    pub fn two_tap(delay: usize, gain_db: f64, antenna_separation_db: f64) -> Self {
        Self::from_pdp(&[(0, 0.0), (delay, gain_db)], antenna_separation_db)
    }

    pub fn validate(&self) -> Result<()> {
        let first = self
            .taps
            .first()
            .ok_or_else(|| Error::InvalidChannel("profile has no taps".into()))?;
        if first.delay_samples != 0 {
            return Err(Error::InvalidChannel(format!(
                "first tap delay must be 0, got {}",
                first.delay_samples
            )));
        }
        if self
            .taps
            .windows(2)
            .any(|w| w[1].delay_samples <= w[0].delay_samples)
        {
            return Err(Error::InvalidChannel(
                "tap delays must be strictly increasing".into(),
            ));
        }
        if self.taps.iter().any(|t| !t.gain_db.is_finite()) || !self.antenna_separation_db.is_finite() {
            return Err(Error::InvalidChannel("gains must be finite".into()));
        }
        Ok(())
    }

    pub fn delays(&self) -> Vec<usize> {
        self.taps.iter().map(|t| t.delay_samples).collect()
    }

    pub fn max_delay(&self) -> usize {
        self.taps.last().map_or(0, |t| t.delay_samples)
    }

    /// Expected tap powers g_m including antenna separation.
    pub fn effective_gains(&self) -> Vec<f64> {
        self.taps
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let sep = if i == 0 { self.antenna_separation_db } else { 0.0 };
                db_to_lin(t.gain_db - sep)
            })
            .collect()
    }

    pub fn total_power(&self) -> f64 {
        self.effective_gains().iter().sum()
    }

    /// Power of every tap except the direct one.
    pub fn other_power(&self) -> f64 {
        self.effective_gains().iter().skip(1).sum()
    }

    /// Largest ALC level reachable by cancelling the direct tap only.
    pub fn max_alc_db(&self) -> f64 {
        let others = self.other_power();
        if others > 0.0 {
            lin_to_db(self.total_power() / others)
        } else {
            f64::INFINITY
        }
    }

    pub fn read_csv(path: impl AsRef<Path>, antenna_separation_db: f64) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv_reader(file, antenna_separation_db)
    }

    /// Parses `delay_samples,gain_db` rows (header required).
    pub fn from_csv_reader<R: Read>(reader: R, antenna_separation_db: f64) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["delay_samples", "gain_db"] {
            return Err(Error::InvalidChannel(
                "expected header `delay_samples,gain_db`".into(),
            ));
        }
        let taps = rdr
            .deserialize::<Tap>()
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let p = Self {
            taps,
            antenna_separation_db,
        };
        p.validate()?;
        Ok(p)
    }
}

/// Cancellation level: perfect, or a finite suppression in dB.
///
/// Serialized as the string `"ideal"` or a number.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LevelRepr", into = "LevelRepr")]
pub enum Level {
    Ideal,
    Db(f64),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum LevelRepr {
    Db(f64),
    Word(String),
}

impl TryFrom<LevelRepr> for Level {
    type Error = String;

    fn try_from(r: LevelRepr) -> std::result::Result<Self, String> {
        match r {
            LevelRepr::Db(v) => Ok(Level::Db(v)),
            LevelRepr::Word(w) if w.eq_ignore_ascii_case("ideal") => Ok(Level::Ideal),
            LevelRepr::Word(w) => Err(format!("expected a dB value or \"ideal\", got {w:?}")),
        }
    }
}

impl From<Level> for LevelRepr {
    fn from(l: Level) -> Self {
        match l {
            Level::Ideal => LevelRepr::Word("ideal".into()),
            Level::Db(v) => LevelRepr::Db(v),
        }
    }
}

impl std::fmt::Display for Level {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Level::Ideal => f.write_str("ideal"),
            Level::Db(v) => write!(f, "{v}"),
        }
    }
}

impl std::str::FromStr for Level {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("ideal") {
            return Ok(Level::Ideal);
        }
        s.parse::<f64>()
            .map(Level::Db)
            .map_err(|_| Error::Config(format!("expected a dB value or `ideal`, got `{s}`")))
    }
}

/// How the DLC estimation-error power is distributed over the taps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DlcSplit {
    #[default]
    Equal,
    /// In proportion to the expected post-ALC tap powers.
    ProportionalToGain,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CancellationConfig {
    pub alc: Level,
    pub dlc: Level,
    pub dlc_split: DlcSplit,
}

impl Default for CancellationConfig {
    fn default() -> Self {
        Self {
            alc: Level::Db(30.0),
            dlc: Level::Db(70.0),
            dlc_split: DlcSplit::Equal,
        }
    }
}

impl CancellationConfig {
    pub fn new(alc: Level, dlc: Level) -> Self {
        Self {
            alc,
            dlc,
            ..Self::default()
        }
    }

    pub fn validate(&self, profile: &ChannelProfile) -> Result<()> {
        for (name, l) in [("ALC", self.alc), ("DLC", self.dlc)] {
            if let Level::Db(v) = l {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(Error::Config(format!("{name} level must be > 0 dB, got {v}")));
                }
            }
        }
        if let Level::Db(a) = self.alc {
            let max = profile.max_alc_db();
            if a > max + 1e-9 {
                return Err(Error::InfeasibleAlc {
                    requested_db: a,
                    max_db: max,
                });
            }
        }
        Ok(())
    }

    /// Expected per-tap powers after ALC and of the DLC estimation error.
    pub fn expected_tap_gains(&self, profile: &ChannelProfile) -> Result<Vec<TapGains>> {
        profile.validate()?;
        self.validate(profile)?;
        let mut residual = profile.effective_gains();
        residual[0] = alc_residual_power(profile, self.alc)?;
        let post_alc: f64 = residual.iter().sum();
        let est_err = match self.dlc {
            Level::Ideal => vec![0.0; residual.len()],
            Level::Db(d) => {
                let total = post_alc * db_to_lin(-d);
                match self.dlc_split {
                    DlcSplit::Equal => vec![total / residual.len() as f64; residual.len()],
                    DlcSplit::ProportionalToGain => {
                        residual.iter().map(|g| total * g / post_alc).collect()
                    }
                }
            }
        };
        Ok(profile
            .taps
            .iter()
            .zip(residual.iter().zip(est_err))
            .map(|(t, (&residual, est_err))| TapGains {
                delay: t.delay_samples,
                residual,
                est_err,
            })
            .collect())
    }
}

/// Expected power of the direct tap after ALC.
///
/// The level is defined on the whole channel, so the direct tap must absorb
/// the power of the untouched taps: `P_tot 10^{-A/10} - P_others`.
pub fn alc_residual_power(profile: &ChannelProfile, alc: Level) -> Result<f64> {
    match alc {
        Level::Ideal => Ok(0.0),
        Level::Db(a) => {
            let max = profile.max_alc_db();
            if a > max + 1e-9 {
                return Err(Error::InfeasibleAlc {
                    requested_db: a,
                    max_db: max,
                });
            }
            Ok((profile.total_power() * db_to_lin(-a) - profile.other_power()).max(0.0))
        }
    }
}

fn circular_gaussian<R: Rng + ?Sized>(rng: &mut R, power: f64) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * (power / 2.0).sqrt()
}

/// Unit-modulus-phase taps with deterministic magnitudes (WSSUS).
pub fn draw_channel_with<R: Rng + ?Sized>(profile: &ChannelProfile, rng: &mut R) -> Vec<Complex64> {
    profile
        .effective_gains()
        .into_iter()
        .map(|g| Complex64::from_polar(g.sqrt(), rng.random_range(0.0..std::f64::consts::TAU)))
        .collect()
}

pub fn draw_channel(profile: &ChannelProfile, seed: u64) -> Vec<Complex64> {
    draw_channel_with(profile, &mut rng::stream(seed, &[Purpose::Channel as u64]))
}

/// Replaces the direct tap by its ALC residual; other taps pass unchanged.
pub fn apply_alc_with<R: Rng + ?Sized>(
    profile: &ChannelProfile,
    h: &[Complex64],
    alc: Level,
    rng: &mut R,
) -> Result<Vec<Complex64>> {
    crate::error::check_len("channel taps", profile.taps.len(), h.len())?;
    let p0 = alc_residual_power(profile, alc)?;
    let mut out = h.to_vec();
    out[0] = match alc {
        Level::Ideal => Complex64::new(0.0, 0.0),
        Level::Db(_) => circular_gaussian(rng, p0),
    };
    Ok(out)
}

pub fn apply_alc(profile: &ChannelProfile, h: &[Complex64], alc: Level, seed: u64) -> Result<Vec<Complex64>> {
    apply_alc_with(profile, h, alc, &mut rng::stream(seed, &[Purpose::Alc as u64]))
}

/// DLC tap estimates: `h_alc + e`, e circular Gaussian per tap.
pub fn apply_dlc_with<R: Rng + ?Sized>(
    profile: &ChannelProfile,
    h_alc: &[Complex64],
    canc: &CancellationConfig,
    rng: &mut R,
) -> Result<Vec<Complex64>> {
    crate::error::check_len("channel taps", profile.taps.len(), h_alc.len())?;
    if canc.dlc == Level::Ideal {
        return Ok(h_alc.to_vec());
    }
    let gains = canc.expected_tap_gains(profile)?;
    Ok(h_alc
        .iter()
        .zip(&gains)
        .map(|(&h, g)| h + circular_gaussian(rng, g.est_err))
        .collect())
}

pub fn apply_dlc(
    profile: &ChannelProfile,
    h_alc: &[Complex64],
    canc: &CancellationConfig,
    seed: u64,
) -> Result<Vec<Complex64>> {
    apply_dlc_with(profile, h_alc, canc, &mut rng::stream(seed, &[Purpose::Dlc as u64]))
}

/// One draw of the physical channel, its post-ALC version and the DLC
/// estimate, all aligned to the profile's tap delays.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    pub h: Vec<Complex64>,
    pub h_alc: Vec<Complex64>,
    pub h_hat: Vec<Complex64>,
}

impl ChannelRealization {
    pub fn draw(profile: &ChannelProfile, canc: &CancellationConfig, seed: u64, path: &[u64]) -> Result<Self> {
        let key = |p: Purpose| {
            let mut v = vec![p as u64];
            v.extend_from_slice(path);
            v
        };
        let h = draw_channel_with(profile, &mut rng::stream(seed, &key(Purpose::Channel)));
        let h_alc = apply_alc_with(profile, &h, canc.alc, &mut rng::stream(seed, &key(Purpose::Alc)))?;
        let h_hat = apply_dlc_with(profile, &h_alc, canc, &mut rng::stream(seed, &key(Purpose::Dlc)))?;
        Ok(Self { h, h_alc, h_hat })
    }
}

/// When channel, ALC residual and DLC error are redrawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Redraw {
    PerTrial,
    #[default]
    PerSymbol,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MonteCarloConfig {
    pub trials: usize,
    pub seed: u64,
    pub redraw: Redraw,
}

impl Default for MonteCarloConfig {
    fn default() -> Self {
        Self {
            trials: 50,
            seed: 1,
            redraw: Redraw::PerSymbol,
        }
    }
}

/// Measured cancellation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SicReport {
    /// Input SI power summed over active bins (physical channel, no ALC).
    pub p_in: f64,
    /// Residual power after ALC and DLC summed over active bins.
    pub p_res: f64,
    /// Mean residual per bin; zero on null subcarriers.
    pub per_bin_residual: Vec<f64>,
    pub sic_db: f64,
    pub trials: usize,
    pub symbols_per_trial: usize,
    pub seed: u64,
}

/// Per-symbol common phase error of tap delay m:
/// `(1/N) Σ_n e^{j(φ_{n-m} - φ_n)}` with circular indexing.
pub fn common_phase_error(phi: &[f64], m: usize) -> Complex64 {
    let n = phi.len();
    (0..n)
        .map(|i| Complex64::from_polar(1.0, phi[(i + n - m % n) % n] - phi[i]))
        .sum::<Complex64>()
        / n as f64
}

struct Simulator<'a> {
    cfg: &'a OfdmConfig,
    profile: &'a ChannelProfile,
    canc: &'a CancellationConfig,
    mc: &'a MonteCarloConfig,
    modem: OfdmModem,
    alphabet: Vec<Complex64>,
    pn: Option<PhaseNoiseGenerator>,
    delays: Vec<usize>,
}

struct Accumulator {
    residual: Vec<f64>,
    input: Vec<f64>,
}

impl Accumulator {
    fn new(n: usize) -> Self {
        Self {
            residual: vec![0.0; n],
            input: vec![0.0; n],
        }
    }

    fn merge(mut self, other: &Accumulator) -> Self {
        self.residual.iter_mut().zip(&other.residual).for_each(|(a, b)| *a += b);
        self.input.iter_mut().zip(&other.input).for_each(|(a, b)| *a += b);
        self
    }
}

impl Simulator<'_> {
    fn taps(&self, coeffs: &[Complex64]) -> Vec<(usize, Complex64)> {
        self.delays.iter().copied().zip(coeffs.iter().copied()).collect()
    }

    fn symbol(&self, trial: u64, sym: u64, chan: &ChannelRealization, acc: &mut Accumulator) -> Result<()> {
        let n = self.cfg.n_subcarriers;
        let cp = self.cfg.cp_len;
        let seed = self.mc.seed;

        let x = draw_symbol(
            self.cfg,
            &self.alphabet,
            &mut rng::stream(seed, &[Purpose::Data as u64, trial, sym]),
        );
        let x_ext = self.modem.modulate_symbol(&x)?;

        let phi = match &self.pn {
            Some(g) => g.draw(&mut rng::stream(seed, &[Purpose::PhaseNoise as u64, trial, sym])),
            None => vec![0.0; n],
        };
        // the block is cyclically extended over the CP like the data
        let phi_ext: Vec<f64> = (0..n + cp).map(|i| phi[(i + n - cp) % n]).collect();

        let tx = mix_up(&x_ext, &phi_ext)?;
        let rx = mix_down(&tdl_filter(&self.taps(&chan.h_alc), &tx), &phi_ext)?;

        let h_eff: Vec<Complex64> = chan
            .h_hat
            .iter()
            .zip(&self.delays)
            .map(|(&h, &m)| h * common_phase_error(&phi, m))
            .collect();
        let replica = tdl_filter(&self.taps(&h_eff), &x_ext);
        let v: Vec<Complex64> = rx.iter().zip(&replica).map(|(a, b)| a - b).collect();
        let residual = self.modem.demodulate_symbol(&v)?;
        let input = self
            .modem
            .demodulate_symbol(&tdl_filter(&self.taps(&chan.h), &x_ext))?;

        for k in 0..n {
            acc.residual[k] += residual[k].norm_sqr();
            acc.input[k] += input[k].norm_sqr();
        }
        Ok(())
    }

    fn chunk(&self, trial: u64, symbols: std::ops::Range<u64>) -> Result<Accumulator> {
        let mut acc = Accumulator::new(self.cfg.n_subcarriers);
        let per_trial = match self.mc.redraw {
            Redraw::PerTrial => Some(ChannelRealization::draw(self.profile, self.canc, self.mc.seed, &[trial])?),
            Redraw::PerSymbol => None,
        };
        for s in symbols {
            let chan = match &per_trial {
                Some(c) => c.clone(),
                None => ChannelRealization::draw(self.profile, self.canc, self.mc.seed, &[trial, s])?,
            };
            self.symbol(trial, s, &chan, &mut acc)?;
        }
        Ok(acc)
    }
}

const SYMBOLS_PER_CHUNK: u64 = 25;

/// Monte Carlo estimate of the cancellation achieved by ALC + DLC.
///
/// Work is split into (trial, symbol-range) chunks evaluated in parallel and
/// summed in chunk order, so the report is independent of scheduling.
pub fn run_monte_carlo(
    cfg: &OfdmConfig,
    profile: &ChannelProfile,
    canc: &CancellationConfig,
    spec: &BinPowerSpectrum,
    mc: &MonteCarloConfig,
) -> Result<SicReport> {
    cfg.validate()?;
    profile.validate()?;
    canc.validate(profile)?;
    if profile.max_delay() > cfg.cp_len {
        return Err(Error::Config(format!(
            "channel delay spread {} exceeds cyclic prefix {}",
            profile.max_delay(),
            cfg.cp_len
        )));
    }
    if spec.n() != cfg.n_subcarriers {
        return Err(Error::Dimension {
            what: "phase-noise spectrum length",
            expected: cfg.n_subcarriers,
            actual: spec.n(),
        });
    }
    if mc.trials == 0 {
        return Err(Error::Config("trials must be >= 1".into()));
    }

    let sim = Simulator {
        cfg,
        profile,
        canc,
        mc,
        modem: OfdmModem::new(*cfg)?,
        alphabet: constellation(cfg.qam_order),
        pn: (!spec.is_zero()).then(|| PhaseNoiseGenerator::new(spec)),
        delays: profile.delays(),
    };

    let n_sym = cfg.n_symbols as u64;
    let chunks: Vec<(u64, std::ops::Range<u64>)> = (0..mc.trials as u64)
        .flat_map(|t| {
            (0..n_sym)
                .step_by(SYMBOLS_PER_CHUNK as usize)
                .map(move |s| (t, s..(s + SYMBOLS_PER_CHUNK).min(n_sym)))
        })
        .collect();
    let partials = chunks
        .into_par_iter()
        .map(|(t, r)| sim.chunk(t, r))
        .collect::<Result<Vec<_>>>()?;
    let total = partials
        .iter()
        .fold(Accumulator::new(cfg.n_subcarriers), Accumulator::merge);

    let count = (mc.trials * cfg.n_symbols) as f64;
    let active = cfg.active_mask();
    let per_bin_residual: Vec<f64> = total
        .residual
        .iter()
        .zip(&active)
        .map(|(&r, &a)| if a { r / count } else { 0.0 })
        .collect();
    let p_res: f64 = per_bin_residual.iter().sum();
    let p_in: f64 = total
        .input
        .iter()
        .zip(&active)
        .filter(|(_, &a)| a)
        .map(|(&v, _)| v / count)
        .sum();
    let sic_db = if p_res > 0.0 {
        lin_to_db(p_in / p_res)
    } else {
        f64::INFINITY
    };
    Ok(SicReport {
        p_in,
        p_res,
        per_bin_residual,
        sic_db,
        trials: mc.trials,
        symbols_per_trial: cfg.n_symbols,
        seed: mc.seed,
    })
}
