use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Layer widths and image geometry for the three networks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub image_size: usize,
    pub occupations: usize,
    /// Output widths of the 7x7 and the two stride-2 encoder convolutions.
    pub encoder_widths: [usize; 3],
    pub residual_width: usize,
    pub up_widths: [usize; 2],
    pub disc_widths: [usize; 4],
}

impl ModelConfig {
    /// 256x256 images, five occupations, 512-wide bottleneck.
    pub fn full_scale() -> Self {
        ModelConfig {
            image_size: 256,
            occupations: 5,
            encoder_widths: [64, 256, 512],
            residual_width: 128,
            up_widths: [128, 64],
            disc_widths: [64, 128, 256, 512],
        }
    }

    /// 64x64 images, three occupations, every width divided by four.
    pub fn desk_scale() -> Self {
        ModelConfig {
            image_size: 64,
            occupations: 3,
            encoder_widths: [16, 64, 128],
            residual_width: 32,
            up_widths: [32, 16],
            disc_widths: [16, 32, 64, 128],
        }
    }

    pub fn bottleneck_size(&self) -> usize {
        self.image_size / 4
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_size < 16 || !self.image_size.is_multiple_of(4) {
            return Err(Error::Config(format!(
                "image_size must be a multiple of 4 and at least 16, got {}",
                self.image_size
            )));
        }
        if self.occupations < 2 {
            return Err(Error::Config(format!(
                "need at least two occupations, got {}",
                self.occupations
            )));
        }
        let widths = self
            .encoder_widths
            .iter()
            .chain(&self.up_widths)
            .chain(&self.disc_widths)
            .chain(std::iter::once(&self.residual_width));
        if widths.into_iter().any(|&w| w == 0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        Ok(())
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::desk_scale()
    }
}
