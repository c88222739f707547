//! Generator, discriminator, and policy-value networks.

pub mod checkpoint;
pub mod discriminator;
pub mod generator;
pub mod gradcheck;
pub mod layers;
pub mod policy;

pub use checkpoint::{Archive, Checkpointable};
pub use discriminator::{Discriminator, DiscriminatorConfig, DISCRIMINATOR_PARAMS};
pub use generator::{Generator, GeneratorConfig, GENERATOR_PARAMS};
pub use layers::{apply_bn_updates, BnMode, BnUpdate, ForwardMode};
pub use policy::{PolicyConfig, PolicyNet, OBS_CHANNELS, POLICY_PARAMS, STACK};
