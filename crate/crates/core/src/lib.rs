//! Phase-noise limited self-interference cancellation in full-duplex OFDM
//! transceivers that share one oscillator between transmitter and receiver.
//!
//! The crate has two engines for the residual self-interference after analog
//! (ALC) and digital (DLC) cancellation:
//!
//! * a closed-form expectation driven by the phase-noise bin powers, see
//!   [`closed_form`];
//! * a sample-level Monte Carlo simulation, see [`si_chain`].
//!
//! [`experiments`] sweeps oscillator and cancellation parameters and compares
//! the two.

pub mod closed_form;
pub mod dft;
pub mod error;
pub mod experiments;
pub mod ofdm;
pub mod phase_noise;
pub mod rng;
pub mod si_chain;
pub mod spectral_mask;

pub use closed_form::{expected_si_power, total_sic, CosineIndex, ResidualSpectrum, TapGains};
pub use error::{Error, Result};
pub use ofdm::{OfdmConfig, OfdmModem, SubcarrierGrid};
pub use phase_noise::{PhaseNoiseBlock, PhaseNoiseGenerator};
pub use si_chain::{
    run_monte_carlo, CancellationConfig, ChannelProfile, Level, MonteCarloConfig, Redraw, SicReport,
};
pub use spectral_mask::{
    bin_powers, build_chpll_mask, BinPowerSpectrum, LoopBandwidth, PllParams, SpectralMask,
};
pub use num_complex::Complex64;
