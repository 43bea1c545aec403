//! Simulation and estimation toolkit for dispersive microwave-cavity detection
//! of Rydberg-atom ensembles.
//!
//! The crate is organised bottom-up:
//!
//! - [`model`]: static physics (mode shape, coupling, dispersive shift,
//!   power dressing, critical photon number, backaction).
//! - [`transmission`]: steady-state and time-domain cavity transmission,
//!   fly-through shift traces and phase extraction.
//! - [`detection`]: heterodyne phase noise, analytic precision formulas and
//!   the micro-channel-plate (MCP) ionization channel.
//! - [`estimation`]: a bounded Levenberg-Marquardt engine and the fit tasks
//!   built on it.
//! - [`experiments`]: scenario runners, single-shot campaigns and the
//!   systematic-error ledger.
//! - [`io`]: JSON scenario configs (cyclic-frequency boundary), CSV/JSON
//!   emission and run manifests.
//!
//! All rates and frequencies are angular (rad/s) inside the crate. Conversion
//! from the cyclic Hz values found in configuration files happens once, in
//! [`io`].

pub mod detection;
pub mod error;
pub mod estimation;
pub mod experiments;
pub mod io;
pub mod model;
pub mod rng;
pub mod transmission;
pub mod units;

pub use error::{Error, Result};
