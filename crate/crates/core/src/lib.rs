//! Pointing-gesture workbench: motion analysis, synthetic pointing data, reward functions,
//! a simulated arm, a small policy-gradient learner and the evaluation metrics.

pub mod arm;
pub mod env;
pub mod eval;
pub mod geom;
pub mod learn;
pub mod mocap;
pub mod reward;
pub mod stats;
pub mod synth;
