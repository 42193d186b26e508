//! Markov-chain analysis and simulation of capacitated ride-hailing
//! dispatch on a grid.

pub mod coupling;
pub mod error;
pub mod exact;
pub mod fit;
pub mod grid;
pub mod ingest;
pub mod io;
pub mod mdp;
pub mod policies;
pub mod rng;
pub mod series;
pub mod simulator;
pub mod state_space;

pub use error::{Error, Result};
pub use grid::{Direction, Grid, Location, RequestModel, RequestSampler, Weights};
pub use policies::{Boundary, DirectionOrder, DispatchOutcome, Policy};
pub use rng::StreamRng;
pub use state_space::{DriverState, StateSpace};
pub use exact::{LowerBoundChain, MixingReport, StationaryResult, TransitionMatrix};
pub use series::{ErrorSeries, Target};
pub use simulator::{Arrivals, Estimator, InitialState, SimConfig};
