//! Energy-efficient power control and receiver design for an asynchronous,
//! bandlimited, multipath DS/CDMA uplink.
//!
//! The crate builds the sampled discrete-time model of the uplink
//! ([`waveforms`], [`scenario`]), evaluates receive filters and their SINRs
//! ([`receivers`]), computes Nash equilibria of five non-cooperative
//! power-control games ([`games`]) and averages them over random networks
//! ([`montecarlo`]).
//!
//! ```
//! use cdma_game::games::{run_game, GameKind};
//! use cdma_game::scenario::{draw_scenario, SystemConfig, SystemModel};
//!
//! let model = SystemModel::new(SystemConfig::default()).unwrap();
//! let scenario = draw_scenario(model.config(), 3, 0);
//! let sigs = model.build_signatures(&scenario).unwrap();
//! let eq = run_game(GameKind::SicMmse, &model, &sigs).unwrap();
//! assert!(eq.converged);
//! assert!(eq.powers.iter().all(|&p| p > 0.0 && p <= model.config().max_power));
//! ```

pub mod error;
pub mod games;
pub mod montecarlo;
pub mod numerics;
pub mod receivers;
pub mod scenario;
pub mod waveforms;

pub use error::{Error, Result};
