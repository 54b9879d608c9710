use alloc::format;

use crate::{Error, Result};

/// Hyperparameters that fix the network topology.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NetworkConfig {
    /// Upscaling factor, 2 or 4.
    pub scale: usize,
    pub misr_channels: usize,
    pub misr_blocks: usize,
    pub residual_channels: usize,
    pub residual_blocks: usize,
    /// Width of the first SISR feature extraction layer.
    pub sisr_feat0: usize,
    /// Width of the SISR projection units.
    pub sisr_feat: usize,
    /// Number of up/down projection pairs; one more up-projection follows.
    pub sisr_stages: usize,
    /// Width at which the MISR/SISR features are subtracted and added.
    pub fusion_channels: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            scale: 4,
            misr_channels: 32,
            misr_blocks: 4,
            residual_channels: 32,
            residual_blocks: 4,
            sisr_feat0: 64,
            sisr_feat: 18,
            sisr_stages: 2,
            fusion_channels: 32,
        }
    }
}

impl NetworkConfig {
    pub const FIELD_NAMES: [&'static str; 9] = [
        "scale",
        "misr_channels",
        "misr_blocks",
        "residual_channels",
        "residual_blocks",
        "sisr_feat0",
        "sisr_feat",
        "sisr_stages",
        "fusion_channels",
    ];

    /// All widths 4 and all counts 1.
    pub fn tiny(scale: usize) -> Self {
        NetworkConfig {
            scale,
            misr_channels: 4,
            misr_blocks: 1,
            residual_channels: 4,
            residual_blocks: 1,
            sisr_feat0: 4,
            sisr_feat: 4,
            sisr_stages: 1,
            fusion_channels: 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.scale != 2 && self.scale != 4 {
            return Err(Error::InvalidConfig(format!("scale must be 2 or 4, got {}", self.scale)));
        }
        for (name, value) in Self::FIELD_NAMES.iter().zip(self.fields()) {
            if value == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be >= 1")));
            }
        }
        Ok(())
    }

    /// Field values in [`Self::FIELD_NAMES`] order.
    pub fn fields(&self) -> [usize; 9] {
        [
            self.scale,
            self.misr_channels,
            self.misr_blocks,
            self.residual_channels,
            self.residual_blocks,
            self.sisr_feat0,
            self.sisr_feat,
            self.sisr_stages,
            self.fusion_channels,
        ]
    }

    pub fn from_fields(f: [usize; 9]) -> Result<Self> {
        let config = NetworkConfig {
            scale: f[0],
            misr_channels: f[1],
            misr_blocks: f[2],
            residual_channels: f[3],
            residual_blocks: f[4],
            sisr_feat0: f[5],
            sisr_feat: f[6],
            sisr_stages: f[7],
            fusion_channels: f[8],
        };
        config.validate()?;
        Ok(config)
    }

    /// `(kernel, stride, padding)` of the projection and upsampling layers.
    pub fn projection_geometry(&self) -> (usize, usize, usize) {
        match self.scale {
            2 => (6, 2, 2),
            _ => (8, 4, 2),
        }
    }
}
