//! Config-driven sweeps over oscillator and cancellation parameters, evaluated
//! with the closed form, the Monte Carlo simulator, or both.
//!
//! An experiment is described by a JSON document:
//!
//! ```json
//! {
//!   "experiment": { "kind": "grid_lf_lw",
//!                   "l_f": { "start": -80, "stop": -30, "step": 2.5 },
//!                   "l_w": { "start": -150, "stop": -100, "step": 2.5 } },
//!   "cancellation": { "alc": 30, "dlc": 70 },
//!   "engine": "both",
//!   "seed": 1,
//!   "trials": 50,
//!   "output": { "path": "grid.csv", "format": "csv" }
//! }
//! ```
//!
//! Every other section (`ofdm`, `channel`, `channel_file`, `oscillator`,
//! `redraw`) is optional and defaults to the reference setup.

use std::fmt;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::closed_form::{expected_si_power_with, total_sic, CosineIndex, ResidualSpectrum};
use crate::error::{Error, Result};
use crate::ofdm::OfdmConfig;
use crate::rng::{derive_seed, Purpose};
use crate::si_chain::{run_monte_carlo, CancellationConfig, ChannelProfile, Level, MonteCarloConfig, Redraw};
use crate::spectral_mask::{bin_powers, build_chpll_mask, BinPowerSpectrum, PllParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Engine {
    ClosedForm,
    MonteCarlo,
    #[default]
    Both,
}

impl Engine {
    pub fn closed_form(self) -> bool {
        matches!(self, Engine::ClosedForm | Engine::Both)
    }

    pub fn monte_carlo(self) -> bool {
        matches!(self, Engine::MonteCarlo | Engine::Both)
    }
}

/// Inclusive arithmetic range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl Sweep {
    pub const fn new(start: f64, stop: f64, step: f64) -> Self {
        Self { start, stop, step }
    }

    pub fn values(&self) -> Vec<f64> {
        let count = ((self.stop - self.start) / self.step + 1e-9).floor() as usize + 1;
        (0..count).map(|i| self.start + i as f64 * self.step).collect()
    }

    fn validate(&self, name: &str) -> Result<()> {
        let finite = self.start.is_finite() && self.stop.is_finite() && self.step.is_finite();
        if !finite || self.step <= 0.0 || self.stop < self.start {
            return Err(Error::Config(format!(
                "sweep `{name}` needs finite start <= stop and step > 0, got {self:?}"
            )));
        }
        if (self.stop - self.start) / self.step > 1e6 {
            return Err(Error::Config(format!("sweep `{name}` has too many points")));
        }
        Ok(())
    }
}

pub const DEFAULT_LF_SWEEP: Sweep = Sweep::new(-80.0, -30.0, 2.5);
pub const DEFAULT_LW_SWEEP: Sweep = Sweep::new(-150.0, -100.0, 2.5);

fn default_lf() -> Sweep {
    DEFAULT_LF_SWEEP
}

fn default_lw() -> Sweep {
    DEFAULT_LW_SWEEP
}

fn default_dlc() -> Sweep {
    Sweep::new(30.0, 90.0, 2.5)
}

fn default_alc_set() -> Vec<Level> {
    vec![Level::Db(30.0), Level::Ideal]
}

fn default_attenuations() -> Vec<f64> {
    vec![65.0, 75.0, 85.0]
}

fn default_delays() -> Vec<usize> {
    vec![1, 2, 4, 8]
}

fn default_second_tap_db() -> f64 {
    65.0
}

fn default_delay() -> usize {
    1
}

fn default_target() -> f64 {
    90.0
}

/// Output of the two-tap studies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TwoTapMode {
    /// One row per `l_f`: the `l_w` at which SIC equals the target.
    #[default]
    Contour,
    /// Every grid point.
    Grid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ExperimentKind {
    GridLfLw {
        #[serde(default = "default_lf")]
        l_f: Sweep,
        #[serde(default = "default_lw")]
        l_w: Sweep,
    },
    CurveLf {
        #[serde(default = "default_lf")]
        l_f: Sweep,
        l_w: f64,
    },
    CurveLw {
        l_f: f64,
        #[serde(default = "default_lw")]
        l_w: Sweep,
    },
    CurveDlc {
        l_f: f64,
        l_w: f64,
        #[serde(default = "default_dlc")]
        dlc_db: Sweep,
        #[serde(default = "default_alc_set")]
        alc: Vec<Level>,
    },
    /// Second tap attenuated by each entry of `attenuation_db` (dB below the
    /// direct path, before antenna separation) at a fixed delay.
    TwoTapAttenuation {
        #[serde(default = "default_attenuations")]
        attenuation_db: Vec<f64>,
        #[serde(default = "default_delay")]
        delay: usize,
        #[serde(default = "default_lf")]
        l_f: Sweep,
        #[serde(default = "default_lw")]
        l_w: Sweep,
        #[serde(default)]
        mode: TwoTapMode,
        #[serde(default = "default_target")]
        target_sic_db: f64,
    },
    TwoTapDelay {
        #[serde(default = "default_delays")]
        delays: Vec<usize>,
        #[serde(default = "default_second_tap_db")]
        attenuation_db: f64,
        #[serde(default = "default_lf")]
        l_f: Sweep,
        #[serde(default = "default_lw")]
        l_w: Sweep,
        #[serde(default)]
        mode: TwoTapMode,
        #[serde(default = "default_target")]
        target_sic_db: f64,
    },
    /// One evaluation; omit both oscillator levels for an ideal oscillator.
    SinglePoint {
        #[serde(default)]
        l_f: Option<f64>,
        #[serde(default)]
        l_w: Option<f64>,
    },
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::GridLfLw { .. } => "grid_lf_lw",
            ExperimentKind::CurveLf { .. } => "curve_lf",
            ExperimentKind::CurveLw { .. } => "curve_lw",
            ExperimentKind::CurveDlc { .. } => "curve_dlc",
            ExperimentKind::TwoTapAttenuation { .. } => "two_tap_attenuation",
            ExperimentKind::TwoTapDelay { .. } => "two_tap_delay",
            ExperimentKind::SinglePoint { .. } => "single_point",
        }
    }

    pub fn is_two_tap(&self) -> bool {
        matches!(
            self,
            ExperimentKind::TwoTapAttenuation { .. } | ExperimentKind::TwoTapDelay { .. }
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub path: PathBuf,
    #[serde(default)]
    pub format: OutputFormat,
}

fn default_seed() -> u64 {
    1
}

fn default_trials() -> usize {
    50
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default)]
    pub ofdm: OfdmConfig,
    #[serde(default)]
    pub channel: ChannelProfile,
    /// CSV `delay_samples,gain_db`, relative to the config file. Replaces
    /// `channel.taps` when set; `channel.antenna_separation_db` still applies.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channel_file: Option<PathBuf>,
    #[serde(default)]
    pub cancellation: CancellationConfig,
    /// Template for the swept oscillator; `l_f` and `l_w` are overridden by
    /// the experiment.
    #[serde(default)]
    pub oscillator: PllParams,
    #[serde(default)]
    pub engine: Engine,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub redraw: Redraw,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<OutputConfig>,
}

impl ExperimentConfig {
    pub fn new(experiment: ExperimentKind) -> Self {
        Self {
            experiment,
            ofdm: OfdmConfig::default(),
            channel: ChannelProfile::default(),
            channel_file: None,
            cancellation: CancellationConfig::default(),
            oscillator: PllParams::default(),
            engine: Engine::default(),
            seed: default_seed(),
            trials: default_trials(),
            redraw: Redraw::default(),
            output: None,
        }
    }

    /// Parses a config without touching the file system.
    pub fn from_json_str(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads, parses and resolves a config file (including `channel_file`).
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_json_str(&text)?;
        cfg.resolve_channel_file(path.parent().unwrap_or(Path::new(".")))?;
        Ok(cfg)
    }

    pub fn resolve_channel_file(&mut self, base_dir: &Path) -> Result<()> {
        if let Some(file) = &self.channel_file {
            let full = base_dir.join(file);
            self.channel = ChannelProfile::read_csv(&full, self.channel.antenna_separation_db)?;
        }
        Ok(())
    }

    pub fn monte_carlo(&self, seed: u64) -> MonteCarloConfig {
        MonteCarloConfig {
            trials: self.trials,
            seed,
            redraw: self.redraw,
        }
    }

    fn oscillator_at(&self, l_f: f64, l_w: f64) -> PllParams {
        PllParams {
            l_f,
            l_w,
            ..self.oscillator
        }
    }

    /// Checks everything that would abort a run; swept oscillator points
    /// outside the feasibility band are not errors.
    pub fn validate(&self) -> Result<()> {
        self.ofdm.validate()?;
        if self.trials == 0 {
            return Err(Error::Config("trials must be >= 1".into()));
        }
        if !self.experiment.is_two_tap() {
            self.channel.validate()?;
            self.cancellation.validate(&self.channel)?;
            self.check_delay(self.channel.max_delay())?;
        }
        match &self.experiment {
            ExperimentKind::GridLfLw { l_f, l_w } => {
                l_f.validate("l_f")?;
                l_w.validate("l_w")?;
            }
            ExperimentKind::CurveLf { l_f, .. } => l_f.validate("l_f")?,
            ExperimentKind::CurveLw { l_w, .. } => l_w.validate("l_w")?,
            ExperimentKind::CurveDlc { l_f, l_w, dlc_db, alc } => {
                dlc_db.validate("dlc_db")?;
                if dlc_db.start <= 0.0 {
                    return Err(Error::Config("DLC levels must be > 0 dB".into()));
                }
                if alc.is_empty() {
                    return Err(Error::Config("curve_dlc needs at least one ALC level".into()));
                }
                for &a in alc {
                    CancellationConfig { alc: a, ..self.cancellation }.validate(&self.channel)?;
                }
                self.oscillator_at(*l_f, *l_w).validate()?;
            }
            ExperimentKind::TwoTapAttenuation {
                attenuation_db,
                delay,
                l_f,
                l_w,
                target_sic_db,
                ..
            } => {
                l_f.validate("l_f")?;
                l_w.validate("l_w")?;
                if attenuation_db.is_empty() || attenuation_db.iter().any(|a| !a.is_finite()) {
                    return Err(Error::Config("attenuation_db must be a non-empty list of finite values".into()));
                }
                self.check_second_tap(*delay)?;
                check_target(*target_sic_db)?;
            }
            ExperimentKind::TwoTapDelay {
                delays,
                attenuation_db,
                l_f,
                l_w,
                target_sic_db,
                ..
            } => {
                l_f.validate("l_f")?;
                l_w.validate("l_w")?;
                if delays.is_empty() || !attenuation_db.is_finite() {
                    return Err(Error::Config("delays must be non-empty and attenuation finite".into()));
                }
                for &d in delays {
                    self.check_second_tap(d)?;
                }
                check_target(*target_sic_db)?;
            }
            ExperimentKind::SinglePoint { l_f, l_w } => match (l_f, l_w) {
                (Some(f), Some(w)) => self.oscillator_at(*f, *w).validate()?,
                (None, None) => {}
                _ => {
                    return Err(Error::Config(
                        "single_point needs both l_f and l_w, or neither for an ideal oscillator".into(),
                    ))
                }
            },
        }
        Ok(())
    }

    fn check_delay(&self, delay: usize) -> Result<()> {
        if delay > self.ofdm.cp_len {
            return Err(Error::Config(format!(
                "channel delay {delay} exceeds cyclic prefix {}",
                self.ofdm.cp_len
            )));
        }
        Ok(())
    }

    fn check_second_tap(&self, delay: usize) -> Result<()> {
        if delay == 0 {
            return Err(Error::Config("second-tap delay must be >= 1".into()));
        }
        self.check_delay(delay)
    }
}

fn check_target(t: f64) -> Result<()> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(Error::Config("target_sic_db must be finite".into()))
    }
}

/// A swept parameter value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Param {
    Num(f64),
    Text(String),
}

impl fmt::Display for Param {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Param::Num(v) => write!(f, "{v}"),
            Param::Text(s) => f.write_str(s),
        }
    }
}

impl From<f64> for Param {
    fn from(v: f64) -> Self {
        Param::Num(v)
    }
}

impl From<Level> for Param {
    fn from(l: Level) -> Self {
        match l {
            Level::Ideal => Param::Text("ideal".into()),
            Level::Db(v) => Param::Num(v),
        }
    }
}

impl Param {
    fn parse(s: &str) -> Self {
        s.parse().map(Param::Num).unwrap_or_else(|_| Param::Text(s.to_string()))
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Param::Num(v) => Some(*v),
            Param::Text(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub params: Vec<Param>,
    pub sic_cf_db: Option<f64>,
    pub sic_mc_db: Option<f64>,
    pub skipped: bool,
    pub seed: u64,
    pub trials: usize,
    /// `sic_cf_db - sic_mc_db` when both engines ran.
    pub engine_diff_db: Option<f64>,
    #[serde(skip)]
    pub runtime: Duration,
}

impl ResultRow {
    fn skipped(params: Vec<Param>, seed: u64, trials: usize) -> Self {
        Self {
            params,
            sic_cf_db: None,
            sic_mc_db: None,
            skipped: true,
            seed,
            trials,
            engine_diff_db: None,
            runtime: Duration::ZERO,
        }
    }

    pub fn param(&self, table: &ResultTable, name: &str) -> Option<&Param> {
        table.param_names.iter().position(|n| n == name).map(|i| &self.params[i])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub kind: String,
    pub param_names: Vec<String>,
    pub rows: Vec<ResultRow>,
    /// Echo of the generating config, emitted in JSON output.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
}

impl ResultTable {
    pub fn column(&self, name: &str) -> Option<Vec<&Param>> {
        let i = self.param_names.iter().position(|n| n == name)?;
        Some(self.rows.iter().map(|r| &r.params[i]).collect())
    }
}

/// Per-bin phase-noise powers of `osc` on the OFDM grid; zero for `None`.
pub fn phase_noise_spectrum(ofdm: &OfdmConfig, osc: Option<&PllParams>) -> Result<BinPowerSpectrum> {
    match osc {
        None => Ok(BinPowerSpectrum::zero(ofdm.n_subcarriers, ofdm.sample_rate_hz)),
        Some(p) => bin_powers(&build_chpll_mask(p)?, ofdm.n_subcarriers, ofdm.sample_rate_hz),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClosedFormReport {
    /// Input SI power over active bins, `Σ_l σ²_l Σ_m g_m`.
    pub p_in: f64,
    /// Residual restricted to active bins.
    pub residual: ResidualSpectrum,
    pub sic_db: f64,
}

pub fn closed_form_sic(
    ofdm: &OfdmConfig,
    profile: &ChannelProfile,
    canc: &CancellationConfig,
    spec: &BinPowerSpectrum,
) -> Result<ClosedFormReport> {
    closed_form_sic_with(ofdm, profile, canc, spec, CosineIndex::Difference)
}

pub fn closed_form_sic_with(
    ofdm: &OfdmConfig,
    profile: &ChannelProfile,
    canc: &CancellationConfig,
    spec: &BinPowerSpectrum,
    index: CosineIndex,
) -> Result<ClosedFormReport> {
    ofdm.validate()?;
    let taps = canc.expected_tap_gains(profile)?;
    let sigma2 = ofdm.subcarrier_powers();
    let residual = expected_si_power_with(spec, &taps, &sigma2, index)?.restricted_to(&ofdm.active_mask());
    let p_in = sigma2.iter().sum::<f64>() * profile.total_power();
    let sic_db = total_sic(&residual, p_in)?;
    Ok(ClosedFormReport {
        p_in,
        residual,
        sic_db,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PointResult {
    pub sic_cf_db: Option<f64>,
    pub sic_mc_db: Option<f64>,
}

/// Evaluates one operating point with the selected engines. `osc = None`
/// means an ideal oscillator.
pub fn evaluate_point(
    ofdm: &OfdmConfig,
    profile: &ChannelProfile,
    canc: &CancellationConfig,
    osc: Option<&PllParams>,
    engine: Engine,
    mc: &MonteCarloConfig,
) -> Result<PointResult> {
    let spec = phase_noise_spectrum(ofdm, osc)?;
    let sic_cf_db = if engine.closed_form() {
        Some(closed_form_sic(ofdm, profile, canc, &spec)?.sic_db)
    } else {
        None
    };
    let sic_mc_db = if engine.monte_carlo() {
        Some(run_monte_carlo(ofdm, profile, canc, &spec, mc)?.sic_db)
    } else {
        None
    };
    Ok(PointResult { sic_cf_db, sic_mc_db })
}

struct Job {
    params: Vec<Param>,
    profile: ChannelProfile,
    canc: CancellationConfig,
    osc: Option<PllParams>,
}

fn run_jobs(cfg: &ExperimentConfig, jobs: Vec<Job>, engine: Engine) -> Result<Vec<ResultRow>> {
    jobs.into_par_iter()
        .enumerate()
        .map(|(i, job)| {
            let seed = derive_seed(cfg.seed, &[Purpose::GridPoint as u64, i as u64]);
            if job.osc.as_ref().is_some_and(|p| !p.is_feasible()) {
                return Ok(ResultRow::skipped(job.params, seed, cfg.trials));
            }
            let t0 = Instant::now();
            let r = evaluate_point(
                &cfg.ofdm,
                &job.profile,
                &job.canc,
                job.osc.as_ref(),
                engine,
                &cfg.monte_carlo(seed),
            )?;
            Ok(ResultRow {
                params: job.params,
                sic_cf_db: r.sic_cf_db,
                sic_mc_db: r.sic_mc_db,
                skipped: false,
                seed,
                trials: cfg.trials,
                engine_diff_db: r.sic_cf_db.zip(r.sic_mc_db).map(|(a, b)| a - b),
                runtime: t0.elapsed(),
            })
        })
        .collect()
}

fn table(cfg: &ExperimentConfig, names: &[&str], rows: Vec<ResultRow>) -> Result<ResultTable> {
    Ok(ResultTable {
        kind: cfg.experiment.name().to_string(),
        param_names: names.iter().map(|s| s.to_string()).collect(),
        rows,
        config: Some(serde_json::to_value(cfg)?),
    })
}

/// Runs the configured experiment. Rows follow parameter order (outer loop
/// first), independent of evaluation order.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ResultTable> {
    cfg.validate()?;
    if cfg.experiment.is_two_tap() {
        return run_two_tap(cfg);
    }
    let job = |params: Vec<Param>, canc: CancellationConfig, osc: Option<PllParams>| Job {
        params,
        profile: cfg.channel.clone(),
        canc,
        osc,
    };
    let canc = cfg.cancellation;
    let (names, jobs): (&[&str], Vec<Job>) = match &cfg.experiment {
        ExperimentKind::GridLfLw { l_f, l_w } => (
            &["l_f", "l_w"],
            l_f.values()
                .into_iter()
                .flat_map(|f| l_w.values().into_iter().map(move |w| (f, w)))
                .map(|(f, w)| job(vec![f.into(), w.into()], canc, Some(cfg.oscillator_at(f, w))))
                .collect(),
        ),
        ExperimentKind::CurveLf { l_f, l_w } => (
            &["l_f", "l_w"],
            l_f.values()
                .into_iter()
                .map(|f| job(vec![f.into(), (*l_w).into()], canc, Some(cfg.oscillator_at(f, *l_w))))
                .collect(),
        ),
        ExperimentKind::CurveLw { l_f, l_w } => (
            &["l_f", "l_w"],
            l_w.values()
                .into_iter()
                .map(|w| job(vec![(*l_f).into(), w.into()], canc, Some(cfg.oscillator_at(*l_f, w))))
                .collect(),
        ),
        ExperimentKind::CurveDlc { l_f, l_w, dlc_db, alc } => (
            &["l_f", "l_w", "alc_db", "dlc_db"],
            alc.iter()
                .flat_map(|&a| dlc_db.values().into_iter().map(move |d| (a, d)))
                .map(|(a, d)| {
                    job(
                        vec![(*l_f).into(), (*l_w).into(), a.into(), d.into()],
                        CancellationConfig {
                            alc: a,
                            dlc: Level::Db(d),
                            ..canc
                        },
                        Some(cfg.oscillator_at(*l_f, *l_w)),
                    )
                })
                .collect(),
        ),
        ExperimentKind::SinglePoint { l_f, l_w } => {
            let osc = l_f.zip(*l_w).map(|(f, w)| cfg.oscillator_at(f, w));
            let p = |v: Option<f64>| v.map_or(Param::Text("ideal".into()), Param::Num);
            (
                &["l_f", "l_w", "alc_db", "dlc_db"],
                vec![job(vec![p(*l_f), p(*l_w), canc.alc.into(), canc.dlc.into()], canc, osc)],
            )
        }
        ExperimentKind::TwoTapAttenuation { .. } | ExperimentKind::TwoTapDelay { .. } => unreachable!(),
    };
    let rows = run_jobs(cfg, jobs, cfg.engine)?;
    table(cfg, names, rows)
}

/// Two-tap channel studies: ideal ALC and DLC, second tap varied in
/// attenuation or delay. Emits either the full (l_f, l_w) grid per variant or
/// the `target_sic_db` contour, one row per `l_f`.
pub fn run_two_tap(cfg: &ExperimentConfig) -> Result<ResultTable> {
    cfg.validate()?;
    let sep = cfg.channel.antenna_separation_db;
    let (variant, profiles, l_f, l_w, mode, target): (&str, Vec<(Param, ChannelProfile)>, _, _, _, _) =
        match &cfg.experiment {
            ExperimentKind::TwoTapAttenuation {
                attenuation_db,
                delay,
                l_f,
                l_w,
                mode,
                target_sic_db,
            } => (
                "attenuation_db",
                attenuation_db
                    .iter()
                    .map(|&a| (a.into(), ChannelProfile::two_tap(*delay, -a, sep)))
                    .collect(),
                l_f,
                l_w,
                *mode,
                *target_sic_db,
            ),
            ExperimentKind::TwoTapDelay {
                delays,
                attenuation_db,
                l_f,
                l_w,
                mode,
                target_sic_db,
            } => (
                "delay",
                delays
                    .iter()
                    .map(|&d| ((d as f64).into(), ChannelProfile::two_tap(d, -attenuation_db, sep)))
                    .collect(),
                l_f,
                l_w,
                *mode,
                *target_sic_db,
            ),
            _ => return Err(Error::Config(format!("{} is not a two-tap experiment", cfg.experiment.name()))),
        };
    let canc = CancellationConfig::new(Level::Ideal, Level::Ideal);
    if cfg.cancellation.alc != Level::Ideal || cfg.cancellation.dlc != Level::Ideal {
        log::warn!("two-tap studies use ideal ALC and DLC; configured cancellation ignored");
    }
    let names = [variant, "l_f", "l_w"];
    let (lf_vals, lw_vals) = (l_f.values(), l_w.values());
    let mut grid_jobs = Vec::new();
    for (v, prof) in &profiles {
        for &f in &lf_vals {
            for &w in &lw_vals {
                grid_jobs.push(Job {
                    params: vec![v.clone(), f.into(), w.into()],
                    profile: prof.clone(),
                    canc,
                    osc: Some(cfg.oscillator_at(f, w)),
                });
            }
        }
    }

    if mode == TwoTapMode::Grid {
        let rows = run_jobs(cfg, grid_jobs, cfg.engine)?;
        return table(cfg, &names, rows);
    }

    // The contour is located on the closed-form surface, then every selected
    // engine is evaluated at the interpolated point.
    let surface = run_jobs(cfg, grid_jobs, Engine::ClosedForm)?;
    let mut jobs = Vec::new();
    let mut missing = Vec::new();
    for (vi, (v, prof)) in profiles.iter().enumerate() {
        for (fi, &f) in lf_vals.iter().enumerate() {
            let base = (vi * lf_vals.len() + fi) * lw_vals.len();
            let column: Vec<(f64, Option<f64>)> = lw_vals
                .iter()
                .zip(&surface[base..base + lw_vals.len()])
                .map(|(&w, r)| (w, r.sic_cf_db))
                .collect();
            match contour_crossing(&column, target) {
                Some(w) => jobs.push(Job {
                    params: vec![v.clone(), f.into(), w.into()],
                    profile: prof.clone(),
                    canc,
                    osc: Some(cfg.oscillator_at(f, w)),
                }),
                None => missing.push((jobs.len() + missing.len(), vec![v.clone(), f.into(), Param::Text(String::new())])),
            }
        }
    }
    let mut evaluated = run_jobs(cfg, jobs, cfg.engine)?.into_iter();
    let total = evaluated.len() + missing.len();
    let mut missing = missing.into_iter().peekable();
    let rows = (0..total)
        .map(|i| match missing.next_if(|(at, _)| *at == i) {
            Some((_, params)) => ResultRow::skipped(params, cfg.seed, cfg.trials),
            None => evaluated.next().expect("row count"),
        })
        .collect();
    table(cfg, &names, rows)
}

/// `l_w` at which SIC falls through `target`, by linear interpolation
/// between the first pair of consecutive feasible points that brackets it.
pub fn contour_crossing(column: &[(f64, Option<f64>)], target: f64) -> Option<f64> {
    column.windows(2).find_map(|w| match (w[0], w[1]) {
        ((w0, Some(s0)), (w1, Some(s1))) if s0 >= target && s1 < target => {
            Some(w0 + (s0 - target) / (s0 - s1) * (w1 - w0))
        }
        _ => None,
    })
}

const FIXED_COLUMNS: [&str; 5] = ["sic_cf_db", "sic_mc_db", "skipped", "seed", "trials"];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_csv<W: Write>(table: &ResultTable, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(table.param_names.iter().map(String::as_str).chain(FIXED_COLUMNS))?;
    for row in &table.rows {
        let fields: Vec<String> = row
            .params
            .iter()
            .map(Param::to_string)
            .chain([
                opt(row.sic_cf_db),
                opt(row.sic_mc_db),
                row.skipped.to_string(),
                row.seed.to_string(),
                row.trials.to_string(),
            ])
            .collect();
        w.write_record(&fields)?;
    }
    w.flush().map_err(|e| Error::io("<result csv>", e))?;
    Ok(())
}

/// Parses a table written by [`write_csv`].
pub fn read_csv<R: Read>(reader: R, kind: &str) -> Result<ResultTable> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let n_params = headers
        .len()
        .checked_sub(FIXED_COLUMNS.len())
        .filter(|&n| headers[n..] == FIXED_COLUMNS)
        .ok_or_else(|| Error::Config(format!("unexpected result header {headers:?}")))?;
    let bad = |what: &str, v: &str| Error::Config(format!("bad {what} value `{v}`"));
    let num = |v: &str| -> Result<Option<f64>> {
        if v.is_empty() {
            Ok(None)
        } else {
            v.parse().map(Some).map_err(|_| bad("sic", v))
        }
    };
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let sic_cf_db = num(&rec[n_params])?;
        let sic_mc_db = num(&rec[n_params + 1])?;
        rows.push(ResultRow {
            params: (0..n_params).map(|i| Param::parse(&rec[i])).collect(),
            sic_cf_db,
            sic_mc_db,
            skipped: rec[n_params + 2].parse().map_err(|_| bad("skipped", &rec[n_params + 2]))?,
            seed: rec[n_params + 3].parse().map_err(|_| bad("seed", &rec[n_params + 3]))?,
            trials: rec[n_params + 4].parse().map_err(|_| bad("trials", &rec[n_params + 4]))?,
            engine_diff_db: sic_cf_db.zip(sic_mc_db).map(|(a, b)| a - b),
            runtime: Duration::ZERO,
        });
    }
    Ok(ResultTable {
        kind: kind.to_string(),
        param_names: headers[..n_params].to_vec(),
        rows,
        config: None,
    })
}

/// JSON document: config echo plus one object per row with the swept
/// parameters as named fields.
pub fn write_json<W: Write>(table: &ResultTable, mut writer: W) -> Result<()> {
    let rows: Vec<serde_json::Value> = table
        .rows
        .iter()
        .map(|row| {
            let mut obj = serde_json::Map::new();
            for (name, p) in table.param_names.iter().zip(&row.params) {
                obj.insert(name.clone(), serde_json::to_value(p).unwrap_or_default());
            }
            obj.insert("sic_cf_db".into(), row.sic_cf_db.into());
            obj.insert("sic_mc_db".into(), row.sic_mc_db.into());
            obj.insert("engine_diff_db".into(), row.engine_diff_db.into());
            obj.insert("skipped".into(), row.skipped.into());
            obj.insert("seed".into(), row.seed.into());
            obj.insert("trials".into(), row.trials.into());
            serde_json::Value::Object(obj)
        })
        .collect();
    let doc = serde_json::json!({
        "kind": table.kind,
        "config": table.config,
        "rows": rows,
    });
    serde_json::to_writer_pretty(&mut writer, &doc)?;
    writer
        .write_all(b"\n")
        .map_err(|e| Error::io("<result json>", e))?;
    Ok(())
}

pub fn emit_table(table: &ResultTable, format: OutputFormat, path: impl AsRef<Path>) -> Result<()> {
    if table.rows.is_empty() {
        return Err(Error::Config("refusing to write an empty result table".into()));
    }
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let w = std::io::BufWriter::new(file);
    match format {
        OutputFormat::Csv => write_csv(table, w),
        OutputFormat::Json => write_json(table, w),
    }
    .map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}
