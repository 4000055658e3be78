use fdxsim_core::closed_form::{j_dft, j_spectrum};
use fdxsim_core::dft::UnitaryDft;
use fdxsim_core::experiments::{closed_form_sic, phase_noise_spectrum};
use fdxsim_core::phase_noise::PhaseNoiseGenerator;
use fdxsim_core::si_chain::{apply_alc, apply_dlc, draw_channel, Redraw};
use fdxsim_core::spectral_mask::lin_to_db;
use fdxsim_core::{
    run_monte_carlo, CancellationConfig, ChannelProfile, Level, MonteCarloConfig, OfdmConfig, PllParams,
};

#[test]
fn per_bin_residual_matches_closed_form() {
    let ofdm = OfdmConfig::default();
    let profile = ChannelProfile::default();
    let spec = phase_noise_spectrum(&ofdm, Some(&PllParams::new(-55.0, -125.0))).unwrap();
    for canc in [
        CancellationConfig::default(),
        CancellationConfig::new(Level::Db(30.0), Level::Ideal),
    ] {
        let cf = closed_form_sic(&ofdm, &profile, &canc, &spec).unwrap();
        let mc = run_monte_carlo(&ofdm, &profile, &canc, &spec, &MonteCarloConfig { trials: 50, seed: 11, ..Default::default() })
            .unwrap();
        assert!((cf.p_in / mc.p_in - 1.0).abs() < 0.01);
        for k in ofdm.active_bins() {
            let d = lin_to_db(mc.per_bin_residual[k] / cf.residual.per_bin[k]);
            assert!(d.abs() <= 0.5, "{canc:?} bin {k}: {d:.3} dB");
        }
        for (k, &active) in ofdm.active_mask().iter().enumerate() {
            if !active {
                assert_eq!(mc.per_bin_residual[k], 0.0);
            }
        }
    }
}

#[test]
fn per_trial_redraw_is_available_and_close() {
    let ofdm = OfdmConfig { n_symbols: 50, ..OfdmConfig::default() };
    let profile = ChannelProfile::default();
    let canc = CancellationConfig::new(Level::Db(30.0), Level::Ideal);
    let spec = phase_noise_spectrum(&ofdm, Some(&PllParams::new(-60.0, -120.0))).unwrap();
    let cf = closed_form_sic(&ofdm, &profile, &canc, &spec).unwrap().sic_db;
    let mc = MonteCarloConfig { trials: 200, seed: 3, redraw: Redraw::PerTrial };
    let sim = run_monte_carlo(&ofdm, &profile, &canc, &spec, &mc).unwrap().sic_db;
    assert!((sim - cf).abs() < 0.5, "{sim} vs {cf}");
}

#[test]
fn fft_j_matches_direct_sum_on_generated_noise() {
    let ofdm = OfdmConfig::default();
    let spec = phase_noise_spectrum(&ofdm, Some(&PllParams::new(-50.0, -110.0))).unwrap();
    let phi = PhaseNoiseGenerator::new(&spec).block(4, 0).samples;
    let dft = UnitaryDft::new(phi.len());
    for m in [1, 4, 63] {
        let fast = j_spectrum(&phi, m, &dft);
        for k in [0, 1, 2, 300, 512, 1023] {
            assert!((fast[k] - j_dft(&phi, m, k)).norm() < 1e-12);
        }
    }
}

#[test]
fn standalone_draw_helpers_are_seeded() {
    let p = ChannelProfile::default();
    let canc = CancellationConfig::default();
    let h = draw_channel(&p, 1);
    let a = apply_alc(&p, &h, canc.alc, 1).unwrap();
    let e = apply_dlc(&p, &a, &canc, 1).unwrap();
    assert_eq!(a, apply_alc(&p, &h, canc.alc, 1).unwrap());
    assert_eq!(e, apply_dlc(&p, &a, &canc, 1).unwrap());
    assert_ne!(e, apply_dlc(&p, &a, &canc, 2).unwrap());
    assert_eq!(&a[1..], &h[1..]);
}
