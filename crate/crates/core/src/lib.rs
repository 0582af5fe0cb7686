//! Turn-taking control that upgrades half-duplex ASR/LLM/TTS pipelines to
//! full duplex: streaming personalized VAD, semantic end-of-turn detection,
//! a barge-in state machine, and the simulation and metrics harness used to
//! evaluate them.

pub mod audio;
pub mod eot;
pub mod metrics;
pub mod pipeline;
pub mod pvad;
pub mod session;
pub mod sim;
pub mod turn;
