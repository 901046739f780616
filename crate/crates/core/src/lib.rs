//! Permissive strategy templates for parity objectives over MDPs, and runtime
//! shields that steer arbitrary stochastic policies toward them.

pub mod dist;
pub mod eval;
pub mod factorybot;
pub mod game;
pub mod mdp;
pub mod session;
pub mod shield;
pub mod sim;
pub mod synth;

pub use dist::{normalize, tv_distance, DistError, Distribution};
pub use game::{derive_game_graph, make_buchi_objective, GameGraph, Mode, ParityObjective};
pub use mdp::{Edge, Mdp};
pub use synth::{buchi_template, parity_template, reach_template, synthesize, Objective, ObjectiveSet, StrategyTemplate, SynthError};
