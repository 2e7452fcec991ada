//! Generator and discriminator networks.

mod discriminator;
mod generator;

use alloc::string::String;
use alloc::vec::Vec;

pub use discriminator::{score_from_logit, Discriminator, DiscriminatorCache, DiscriminatorConfig};
pub use generator::{
    resize_tensor, timestep_embedding, Generator, GeneratorCache, GeneratorConfig, DEFAULT_RESIDUAL_GAMMA,
};

/// Per-layer output shapes `[N, C, H, W]`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ForwardTrace {
    pub layers: Vec<(String, [usize; 4])>,
}

impl ForwardTrace {
    fn push(&mut self, name: impl Into<String>, shape: [usize; 4]) {
        self.layers.push((name.into(), shape));
    }

    pub fn shape_of(&self, name: &str) -> Option<[usize; 4]> {
        self.layers.iter().find(|(n, _)| n == name).map(|(_, s)| *s)
    }
}
