//! Asynchronous advantage actor-critic.

pub mod env;
pub mod loss;
pub mod returns;
pub mod train;

pub use env::{stack_frames, Env, FrameStack, ObsMode, Renderer};
pub use returns::{n_step_returns, RolloutSegment, Transition};
pub use train::{act_greedy, train, A3CConfig, EpisodeRecord, GlobalParams, TrainOutcome};
