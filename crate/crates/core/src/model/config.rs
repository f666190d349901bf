use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Prototype, MAX_LEVEL};

/// Network dimensions and prototype resolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub global_dim: usize,
    /// `[hidden, output]` widths of each extractor block; the last output
    /// is the global feature size.
    pub extractor: Vec<[usize; 2]>,
    /// Hidden widths of the coarse MLP.
    pub generator: Vec<usize>,
    /// Hidden widths of the dense per-vertex decoder.
    pub dense: Vec<usize>,
    pub coarse_level: u32,
    pub fine_level: u32,
    /// Prototype radius in meters.
    pub radius: f64,
    pub input_points: usize,
    /// Gate features against trainable prototypes; when off the decoder
    /// outputs coordinates directly.
    pub use_prototypes: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            global_dim: 2048,
            extractor: vec![[64, 128], [256, 512], [1024, 2048]],
            generator: vec![1024, 1024],
            dense: vec![512, 256],
            coarse_level: 2,
            fine_level: 4,
            radius: 0.05,
            input_points: 2048,
            use_prototypes: true,
        }
    }
}

impl ModelConfig {
    /// Full-width network on the 10,242 / 163,842 vertex prototypes.
    pub fn paper() -> Self {
        ModelConfig {
            coarse_level: 5,
            fine_level: 7,
            ..Self::default()
        }
    }

    /// Narrow network for single-core training runs.
    pub fn desk() -> Self {
        ModelConfig {
            global_dim: 256,
            extractor: vec![[32, 64], [128, 128], [256, 256]],
            generator: vec![256, 256],
            dense: vec![128, 64],
            ..Self::default()
        }
    }

    /// Smallest useful network, for gradient checks.
    pub fn tiny() -> Self {
        ModelConfig {
            global_dim: 32,
            extractor: vec![[8, 16], [16, 16], [32, 32]],
            generator: vec![32, 32],
            dense: vec![16, 8],
            coarse_level: 0,
            fine_level: 2,
            radius: 0.05,
            input_points: 64,
            use_prototypes: true,
        }
    }

    pub fn coarse_vertices(&self) -> usize {
        Prototype::vertex_count_for(self.coarse_level)
    }

    pub fn fine_vertices(&self) -> usize {
        Prototype::vertex_count_for(self.fine_level)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Parameter(msg));
        if self.global_dim == 0 {
            return bad("global_dim must be positive".into());
        }
        match self.extractor.last() {
            None => return bad("extractor needs at least one block".into()),
            Some(last) if last[1] != self.global_dim => {
                return bad(format!(
                    "last extractor block outputs {} channels, global_dim is {}",
                    last[1], self.global_dim
                ))
            }
            _ => {}
        }
        let widths = self
            .extractor
            .iter()
            .flatten()
            .chain(&self.generator)
            .chain(&self.dense);
        if widths.into_iter().any(|&w| w == 0) {
            return bad("all channel widths must be positive".into());
        }
        if self.dense.is_empty() {
            return bad("dense decoder needs at least one hidden layer".into());
        }
        if self.fine_level <= self.coarse_level || self.fine_level > MAX_LEVEL {
            return bad(format!(
                "need coarse_level < fine_level ≤ {MAX_LEVEL}, got {} / {}",
                self.coarse_level, self.fine_level
            ));
        }
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return bad(format!("radius must be positive, got {}", self.radius));
        }
        if self.input_points < 2 {
            return bad("input_points must be at least 2".into());
        }
        Ok(())
    }
}
