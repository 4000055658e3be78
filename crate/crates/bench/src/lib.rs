//! Shared fixtures for the benchmarks.

use fdxsim_core::experiments::phase_noise_spectrum;
use fdxsim_core::{BinPowerSpectrum, CancellationConfig, ChannelProfile, Level, OfdmConfig, PllParams};

pub struct Fixture {
    pub ofdm: OfdmConfig,
    pub profile: ChannelProfile,
    pub canc: CancellationConfig,
    pub spec: BinPowerSpectrum,
}

/// Default OFDM setup and channel at the (-60, -120) dBc/Hz oscillator.
pub fn headline(n_symbols: usize) -> Fixture {
    let ofdm = OfdmConfig {
        n_symbols,
        ..OfdmConfig::default()
    };
    let spec = phase_noise_spectrum(&ofdm, Some(&PllParams::new(-60.0, -120.0))).expect("feasible oscillator");
    Fixture {
        ofdm,
        profile: ChannelProfile::default(),
        canc: CancellationConfig::new(Level::Db(30.0), Level::Ideal),
        spec,
    }
}
