//! Runs render-farm workers as pilot jobs on a batch compute cluster.
//!
//! A meta-scheduler ([`rcms`]) watches the queue depth of a render-farm
//! supervisor ([`supervisor`]) and the load of a PBS-like cluster
//! ([`cluster`]), and keeps a pool of cluster jobs whose payload is a farm
//! worker ([`rclient`]). Each such job registers with the supervisor as an
//! ordinary render slave, so the farm manager never needs to know it is
//! running on borrowed nodes. When the queue drains the jobs are deleted
//! and the cores go back to compute work.
//!
//! [`sim`] wires all of it to a deterministic discrete-event engine so the
//! whole loop can be run, swept over node counts, and replayed bit for bit.

pub mod cluster;
pub mod model;
pub mod rclient;
pub mod rcms;
pub mod sim;
pub mod supervisor;
pub mod time;

pub use time::{SimDuration, SimTime};
