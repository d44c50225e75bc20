//! Embodied QA data engine and a desk-scale flow-matching action policy.
//!
//! The crate has three parts:
//!
//! * data generation: [`grounding`] (mask corpora to point/box QA),
//!   [`spatial`] (scene graphs to spatial QA), [`planning`] (agent rollouts
//!   filtered to successful trajectories) and the in-domain annotator in
//!   [`sim::annotate`];
//! * the action expert: [`flow`], a small attention network trained with
//!   flow matching and sampled by Euler integration;
//! * evaluation: [`sim`] (a planar manipulation simulator with a scripted
//!   expert and closed-loop evaluation) and [`experiment`] (context-encoder
//!   initialization comparisons).

pub mod flow;
pub mod experiment;
pub mod geometry;
pub mod grounding;
pub mod io;
pub mod par;
pub mod planning;
pub mod sim;
pub mod spatial;
