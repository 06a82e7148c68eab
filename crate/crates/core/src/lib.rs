//! Solver and simulator for a point-to-point HARQ-IR link whose receiver is
//! powered entirely by RF energy harvested from the incoming signal.
//!
//! Each slot the receiver splits the received power between its energy
//! harvester and its decoder. The toolkit computes the minimum expected
//! number of re-transmissions until the message decodes, three ways:
//!
//! * [`solver`] — value iteration over the countable time-switching MDP,
//!   including per-state action values and tie sets;
//! * [`absorption`] — exact mean time to absorption of the Markov chain
//!   induced by any fixed time-switching policy (dense linear solve);
//! * [`montecarlo`] — seeded, reproducible episode simulation supporting
//!   arbitrary power-splitting policies.
//!
//! [`model`] holds the link configuration and one-step dynamics shared by all
//! three, and [`policies`] the decision rules (threshold heuristics, coin
//! toss, solver-extracted tables, one-shot split deviations).

pub mod absorption;
pub mod linalg;
pub mod model;
pub mod montecarlo;
pub mod policies;
pub mod solver;

pub use model::{Action, ChannelState, LatticeState, LinkConfig, RealState, SplitRatio};
pub use policies::Policy;
pub use solver::ValueTable;
