//! Time-optimal solar-sail rendezvous trajectories by successive convex
//! programming.

pub mod ephemeris;
pub mod sail;
pub mod scp;
pub mod socp;
pub mod transcription;
pub mod units;
