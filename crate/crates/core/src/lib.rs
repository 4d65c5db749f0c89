//! Depth-image driven navigation inside vineyard rows.
//!
//! The crate is split along the pipeline:
//!
//! * [`world`] generates seeded vineyard layouts and answers geometric queries,
//! * [`sensor`] renders and perturbs 112×112 depth frames,
//! * [`robot`] integrates unicycle kinematics under terrain disturbance and checks collisions,
//! * [`env`] assembles observations, shaped rewards and termination into an episodic MDP,
//! * [`net`] holds the convolutional actor/critic networks with hand-written backprop,
//! * [`sac`] trains them with Soft Actor-Critic plus an ε-greedy overlay,
//! * [`eval`] scores trained policies against fitted ground-truth lines.

pub mod env;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod net;
pub mod rng;
pub mod robot;
pub mod sac;
pub mod sensor;
pub mod toy;
pub mod world;

pub use error::{Error, Result};
