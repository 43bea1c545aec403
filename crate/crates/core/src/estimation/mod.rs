//! Parameter estimation: a bounded Levenberg-Marquardt engine and the fit
//! tasks built on it.

pub mod lm;
pub mod power;
pub mod rabi;
pub mod spectroscopy;
pub mod superposition;
pub mod trace;

pub use lm::{curve_fit, least_squares_fit, CovarianceScaling, FitOptions, FitResult, FitStatus, Param};
pub use power::{fit_power_dependence, power_model, PowerDataset};
pub use rabi::{fit_rabi_calibration, rabi_signals, RabiChannels, RabiData};
pub use spectroscopy::{decayed_p_fraction, fit_spectroscopy, prep_fraction, spectroscopy_transfer, spectrum_model, Spectrum, SpectroscopyParams, SpectroscopySetup};
pub use superposition::{predict_superposition_phase, DepolarizationMap};
pub use trace::{fit_atom_number, fit_entry_time, MeasuredTrace, TraceModel};
