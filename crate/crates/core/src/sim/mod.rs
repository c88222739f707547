//! Toy driving simulator: tracks, point-mass car dynamics, and rendering.

pub mod car;
pub mod controller;
pub mod image;
pub mod render;
pub mod track;

pub use car::{reset, reset_at, step, Action, CarState, RewardConfig, SimConfig, NUM_ACTIONS};
pub use image::{Frame, SegMap};
pub use render::{render, render_segmentation, randomized_styles, Camera, Class, RenderStyle, NUM_CLASSES};
pub use track::{make_track, Track, TrackSpec};
