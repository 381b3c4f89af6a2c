//! Dialog-based language learning: a simulated question-answering world,
//! ten teacher supervision modes, and a memory network trained by imitation,
//! reward-based imitation and forward prediction.

pub mod dialogfmt;
pub mod harness;
pub mod memnet;
pub mod taskgen;
pub mod tensor;
pub mod training;
pub mod world;
