//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any
//! failure.

use std::process::ExitCode;
use std::time::Instant;

use fdxsim_core::closed_form::{expected_j_power, expected_si_power, j_spectrum, CosineIndex, TapGains};
use fdxsim_core::dft::UnitaryDft;
use fdxsim_core::experiments::{
    closed_form_sic, closed_form_sic_with, phase_noise_spectrum, run_experiment, run_two_tap, Engine,
    ExperimentConfig, ExperimentKind, Param, ResultTable, Sweep, TwoTapMode, DEFAULT_LF_SWEEP,
    DEFAULT_LW_SWEEP,
};
use fdxsim_core::phase_noise::generate;
use fdxsim_core::spectral_mask::{lin_to_db, mask_from_table, SpectralMask};
use fdxsim_core::{
    bin_powers, build_chpll_mask, run_monte_carlo, BinPowerSpectrum, CancellationConfig, ChannelProfile, Level,
    MonteCarloConfig, OfdmConfig, PllParams, Result,
};
use rayon::prelude::*;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Result<Outcome> {
    Ok(Outcome {
        pass,
        detail: detail.into(),
    })
}

const SEED: u64 = 2024;

fn mc() -> MonteCarloConfig {
    MonteCarloConfig {
        trials: 50,
        seed: SEED,
        ..MonteCarloConfig::default()
    }
}

fn example_oscillator() -> PllParams {
    PllParams {
        l_f: -76.0,
        f_lf: 1e4,
        l_w: -120.0,
        ..PllParams::default()
    }
}

fn zero(ofdm: &OfdmConfig) -> BinPowerSpectrum {
    BinPowerSpectrum::zero(ofdm.n_subcarriers, ofdm.sample_rate_hz)
}

fn no_phase_noise_baseline() -> Result<Outcome> {
    let ofdm = OfdmConfig::default();
    let profile = ChannelProfile::default();
    let canc = CancellationConfig::default();
    let cf = closed_form_sic(&ofdm, &profile, &canc, &zero(&ofdm))?.sic_db;
    let mc = run_monte_carlo(&ofdm, &profile, &canc, &zero(&ofdm), &mc())?.sic_db;
    outcome(
        (mc - 100.0).abs() <= 0.3 && (cf - 100.0).abs() <= 1e-9,
        format!("MC {mc:.3} dB (100 ± 0.3), closed form {cf:.12} dB (exactly 100)"),
    )
}

fn max_alc_bound() -> Result<Outcome> {
    let ofdm = OfdmConfig::default();
    let profile = ChannelProfile::default();
    let max = profile.max_alc_db();
    let canc = CancellationConfig::new(Level::Ideal, Level::Db(70.0));
    let mc = run_monte_carlo(&ofdm, &profile, &canc, &zero(&ofdm), &mc())?.sic_db;
    let cf = closed_form_sic(&ofdm, &profile, &canc, &zero(&ofdm))?.sic_db;
    let rejects = CancellationConfig::new(Level::Db(max + 0.01), Level::Db(70.0))
        .validate(&profile)
        .is_err_and(|e| e.is_infeasible());
    outcome(
        (max - 33.49).abs() <= 0.05 && (mc - 103.5).abs() <= 0.3 && rejects,
        format!("max ALC {max:.3} dB (33.49 ± 0.05), ideal ALC + DLC 70: MC {mc:.3} dB, closed form {cf:.3} dB (103.5 ± 0.3)"),
    )
}

fn headline_point() -> Result<Outcome> {
    let ofdm = OfdmConfig::default();
    let profile = ChannelProfile::default();
    let canc = CancellationConfig::new(Level::Db(30.0), Level::Ideal);
    let spec = phase_noise_spectrum(&ofdm, Some(&PllParams::new(-60.0, -120.0)))?;
    let cf = closed_form_sic(&ofdm, &profile, &canc, &spec)?.sic_db;
    let mc = run_monte_carlo(&ofdm, &profile, &canc, &spec, &mc())?.sic_db;
    outcome(
        (cf - 93.0).abs() <= 2.0 && (mc - 93.0).abs() <= 2.0,
        format!("closed form {cf:.3} dB, MC {mc:.3} dB (93 ± 2)"),
    )
}

fn sic_at(t: &ResultTable, dlc: f64, mc: bool) -> f64 {
    let row = t
        .rows
        .iter()
        .find(|r| r.params[2] == Param::Num(30.0) && r.params[3] == Param::Num(dlc))
        .expect("swept DLC level");
    if mc {
        row.sic_mc_db.unwrap()
    } else {
        row.sic_cf_db.unwrap()
    }
}

fn dlc_knee() -> Result<Outcome> {
    let mut cfg = ExperimentConfig::new(ExperimentKind::CurveDlc {
        l_f: -50.0,
        l_w: -120.0,
        dlc_db: Sweep::new(40.0, 90.0, 2.5),
        alc: vec![Level::Db(30.0)],
    });
    cfg.seed = SEED;
    let t = run_experiment(&cfg)?;
    let mut pass = true;
    let mut detail = Vec::new();
    for (engine, is_mc) in [("closed form", false), ("MC", true)] {
        let departure = [50.0, 52.5, 55.0, 57.5, 60.0]
            .iter()
            .map(|&d| 30.0 + d - sic_at(&t, d, is_mc))
            .fold(f64::MIN, f64::max);
        let slope = (sic_at(&t, 82.5, is_mc) - sic_at(&t, 77.5, is_mc)) / 5.0;
        pass &= departure > 1.0 && slope < 0.1;
        detail.push(format!(
            "{engine}: max departure in [50, 60] {departure:.2} dB (> 1), slope at 80 {slope:.4} dB/dB (< 0.1)"
        ));
    }
    outcome(pass, detail.join("; "))
}

fn engine_agreement() -> Result<Outcome> {
    let mut cfg = ExperimentConfig::new(ExperimentKind::GridLfLw {
        l_f: Sweep::new(-60.0, -50.0, 2.5),
        l_w: Sweep::new(-140.0, -120.0, 5.0),
    });
    cfg.seed = SEED;
    let t = run_experiment(&cfg)?;
    let evaluated: Vec<_> = t.rows.iter().filter(|r| !r.skipped).collect();
    let worst = evaluated
        .iter()
        .map(|r| r.engine_diff_db.unwrap().abs())
        .fold(0.0, f64::max);
    outcome(
        evaluated.len() == 25 && worst <= 0.5,
        format!("{} feasible points, max |cf - mc| = {worst:.3} dB (<= 0.5)", evaluated.len()),
    )
}

fn j_power_oracle() -> Result<Outcome> {
    let ofdm = OfdmConfig::default();
    let n = ofdm.n_subcarriers;
    let spec = bin_powers(&build_chpll_mask(&example_oscillator())?, n, ofdm.sample_rate_hz)?;
    let blocks = 20_000;
    let delays = [1usize, 2, 4];
    let dft = UnitaryDft::new(n);
    let acc = generate(&spec, blocks, SEED)?
        .par_chunks(500)
        .map(|chunk| {
            let mut acc = vec![vec![0.0; n]; delays.len()];
            for b in chunk {
                for (a, &m) in acc.iter_mut().zip(&delays) {
                    for (x, j) in a.iter_mut().zip(j_spectrum(&b.samples, m, &dft)) {
                        *x += j.norm_sqr();
                    }
                }
            }
            acc
        })
        .reduce(
            || vec![vec![0.0; n]; delays.len()],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(&b) {
                    x.iter_mut().zip(y).for_each(|(p, q)| *p += q);
                }
                a
            },
        );
    let mut worst: f64 = 0.0;
    let mut bins = 0;
    for (a, &m) in acc.iter().zip(&delays) {
        for k in 1..n {
            let predicted = expected_j_power(&spec, k as isize, m);
            if predicted >= 1e-12 {
                bins += 1;
                worst = worst.max((a[k] / blocks as f64 / predicted - 1.0).abs());
            }
        }
    }

    // The full residual under each cosine index, against Monte Carlo.
    let profile = ChannelProfile::default();
    let canc = CancellationConfig::new(Level::Db(30.0), Level::Ideal);
    let head = phase_noise_spectrum(&ofdm, Some(&PllParams::new(-60.0, -120.0)))?;
    let sim = run_monte_carlo(&ofdm, &profile, &canc, &head, &mc())?.sic_db;
    let diff = closed_form_sic_with(&ofdm, &profile, &canc, &head, CosineIndex::Difference)?.sic_db;
    let recv = closed_form_sic_with(&ofdm, &profile, &canc, &head, CosineIndex::Receiving)?.sic_db;
    outcome(
        worst <= 0.05 && bins > 0 && (diff - sim).abs() <= 0.5 && (recv - sim).abs() > 0.5,
        format!(
            "{blocks} blocks, {bins} bins >= 1e-12, max rel. error {:.2}% (<= 5%); \
             MC {sim:.3} dB vs (k-l) index {diff:.3} dB, receiving index {recv:.3} dB",
            100.0 * worst
        ),
    )
}

/// Largest deviation in dB between the averaged periodogram, interpolated
/// log-log between bins, and the mask at each breakpoint in (Δf, fs/2).
fn periodogram_error(mask: &SpectralMask, n: usize, fs: f64, blocks: usize) -> Result<(f64, usize)> {
    let spec = bin_powers(mask, n, fs)?;
    let df = spec.bin_spacing_hz();
    let dft = UnitaryDft::new(n);
    let mut acc = vec![0.0; n];
    for b in generate(&spec, blocks, SEED)? {
        let mut buf: Vec<_> = b.samples.iter().map(|&v| fdxsim_core::Complex64::new(v, 0.0)).collect();
        dft.forward_mean(&mut buf);
        acc.iter_mut().zip(&buf).for_each(|(a, z)| *a += z.norm_sqr());
    }
    let density_db = |k: usize| lin_to_db(acc[k] / blocks as f64 / df);
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for &(f, level) in mask.points() {
        if !(f > df && f < fs / 2.0) {
            continue;
        }
        let k = (f / df).floor() as usize;
        let (f0, f1) = (k as f64 * df, (k + 1) as f64 * df);
        let t = (f / f0).log10() / (f1 / f0).log10();
        let est = density_db(k) + t * (density_db(k + 1) - density_db(k));
        worst = worst.max((est - level).abs());
        count += 1;
    }
    Ok((worst, count))
}

fn generator_fidelity() -> Result<Outcome> {
    let ofdm = OfdmConfig::default();
    let blocks = 2000;
    let example = build_chpll_mask(&example_oscillator())?;
    let table = mask_from_table(&[(1e3, -80.0), (1e5, -95.0), (1e6, -125.0), (5e6, -145.0)])?;
    let (w1, c1) = periodogram_error(&example, ofdm.n_subcarriers, ofdm.sample_rate_hz, blocks)?;
    let (w2, c2) = periodogram_error(&table, ofdm.n_subcarriers, ofdm.sample_rate_hz, blocks)?;
    outcome(
        w1 <= 1.0 && w2 <= 1.0 && c1 > 0 && c2 > 0,
        format!(
            "{blocks} blocks; oscillator mask: {c1} breakpoints, max {w1:.3} dB; \
             table mask: {c2} breakpoints, max {w2:.3} dB (<= 1)"
        ),
    )
}

fn direct_path_invariant() -> Result<Outcome> {
    let ofdm = OfdmConfig {
        n_symbols: 40,
        ..OfdmConfig::default()
    };
    let profile = ChannelProfile::from_pdp(&[(0, 0.0)], 30.0);
    let run = MonteCarloConfig { trials: 5, ..mc() };
    let masks = [
        build_chpll_mask(&PllParams::new(-60.0, -120.0))?,
        build_chpll_mask(&PllParams::new(-30.0, -100.0))?,
        mask_from_table(&[(1e3, -50.0), (1e6, -90.0), (1e7, -110.0)])?,
    ];
    let mut worst_rel: f64 = 0.0;
    let mut worst_ideal: f64 = 0.0;
    let mut worst_cf: f64 = 0.0;
    for mask in &masks {
        let spec = bin_powers(mask, ofdm.n_subcarriers, ofdm.sample_rate_hz)?;
        // per bin: phase noise on vs. off with identical data and cancellation draws
        let canc = CancellationConfig::new(Level::Db(30.0), Level::Db(70.0));
        let with = run_monte_carlo(&ofdm, &profile, &canc, &spec, &run)?;
        let without = run_monte_carlo(&ofdm, &profile, &canc, &zero(&ofdm), &run)?;
        for (a, b) in with.per_bin_residual.iter().zip(&without.per_bin_residual) {
            if *b > 0.0 {
                worst_rel = worst_rel.max((a / b - 1.0).abs());
            } else {
                worst_rel = worst_rel.max(a.abs());
            }
        }
        let ideal = CancellationConfig::new(Level::Db(30.0), Level::Ideal);
        let r = run_monte_carlo(&ofdm, &profile, &ideal, &spec, &run)?;
        worst_ideal = worst_ideal.max(r.p_res / r.p_in);
        let taps = [TapGains {
            delay: 0,
            residual: 1e-6,
            est_err: 0.0,
        }];
        let cf = expected_si_power(&spec, &taps, &ofdm.subcarrier_powers())?;
        worst_cf = worst_cf.max(cf.per_bin.iter().copied().fold(0.0, f64::max));
    }
    outcome(
        worst_rel <= 1e-9 && worst_ideal <= 1e-25 && worst_cf == 0.0,
        format!(
            "{} masks: per-bin relative change with phase noise {worst_rel:.2e}, \
             ideal-DLC residual/input {worst_ideal:.2e}, closed-form ICI {worst_cf:e}",
            masks.len()
        ),
    )
}

fn two_tap_properties() -> Result<Outcome> {
    let mut pass = true;
    let mut detail = Vec::new();

    let mut worst: f64 = 0.0;
    let mut points = 0;
    for delay in [1usize, 2, 4] {
        let mut cfg = ExperimentConfig::new(ExperimentKind::TwoTapAttenuation {
            attenuation_db: vec![65.0, 75.0, 85.0],
            delay,
            l_f: DEFAULT_LF_SWEEP,
            l_w: DEFAULT_LW_SWEEP,
            mode: TwoTapMode::Grid,
            target_sic_db: 90.0,
        });
        cfg.engine = Engine::ClosedForm;
        let t = run_two_tap(&cfg)?;
        let per = t.rows.len() / 3;
        for v in 0..2 {
            for (a, b) in t.rows[v * per..(v + 1) * per].iter().zip(&t.rows[(v + 1) * per..(v + 2) * per]) {
                if let (Some(x), Some(y)) = (a.sic_cf_db, b.sic_cf_db) {
                    worst = worst.max((y - x - 10.0).abs());
                    points += 1;
                }
            }
        }
    }
    pass &= points > 0 && worst <= 0.01;
    detail.push(format!("attenuation: {points} point pairs, max |shift - 10| = {worst:.4} dB (<= 0.01)"));

    let ofdm = OfdmConfig::default();
    let spec = phase_noise_spectrum(&ofdm, Some(&PllParams::new(-50.0, -120.0)))?;
    let delays = [1usize, 2, 4, 8];
    let low_k = 1..=8isize;
    let g = ChannelProfile::two_tap(1, -65.0, 30.0).effective_gains()[1];
    let kernel: Vec<Vec<f64>> = delays
        .iter()
        .map(|&m| low_k.clone().map(|k| g * expected_j_power(&spec, k, m)).collect())
        .collect();
    let monotone = kernel
        .windows(2)
        .all(|w| w[0].iter().zip(&w[1]).all(|(a, b)| b >= a));
    pass &= monotone;
    let canc = CancellationConfig::new(Level::Ideal, Level::Ideal);
    let aggregate: Vec<String> = delays
        .iter()
        .map(|&m| {
            let r = closed_form_sic(&ofdm, &ChannelProfile::two_tap(m, -65.0, 30.0), &canc, &spec)?;
            Ok(format!("{:.2}", lin_to_db(low_k.clone().map(|k| r.residual.per_bin[k as usize]).sum::<f64>())))
        })
        .collect::<Result<_>>()?;
    detail.push(format!(
        "delay: low-k leakage g·E|J_k,m|² (k = 1..8) non-decreasing over m = 1, 2, 4, 8: {monotone} \
         (k = 1: {}; summed residual on bins 1..8 in dB: {})",
        kernel.iter().map(|v| format!("{:.3e}", v[0])).collect::<Vec<_>>().join(" < "),
        aggregate.join(", ")
    ));
    outcome(pass, detail.join("; "))
}

type Criterion = (&'static str, fn() -> Result<Outcome>);

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("no-phase-noise baseline", no_phase_noise_baseline),
        ("max-ALC bound", max_alc_bound),
        ("headline phase-noise point", headline_point),
        ("DLC knee", dlc_knee),
        ("closed form vs Monte Carlo", engine_agreement),
        ("E|J|^2 oracle and cosine index", j_power_oracle),
        ("generator spectral fidelity", generator_fidelity),
        ("direct-path mitigation", direct_path_invariant),
        ("two-tap linearity and delay", two_tap_properties),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let t0 = Instant::now();
        let (pass, detail) = match run() {
            Ok(o) => (o.pass, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        if !pass {
            failed += 1;
        }
        println!(
            "{} [{}] {name}: {detail} ({:.1} s)",
            if pass { "PASS" } else { "FAIL" },
            i + 1,
            t0.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
