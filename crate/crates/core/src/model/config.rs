use crate::error::{Error, Result};

/// Width and depth hyperparameters of the network.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub base_channels: usize,
    pub growth_rate: usize,
    pub num_ddb: usize,
    pub dilated_layers_per_ddb: usize,
    /// Feedback iterations `n`; does not affect the parameter set.
    pub iterations: usize,
    pub dilation: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            base_channels: 64,
            growth_rate: 32,
            num_ddb: 3,
            dilated_layers_per_ddb: 4,
            iterations: 4,
            dilation: 2,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let checks = [
            (self.base_channels > 0, "base_channels must be positive"),
            (self.growth_rate > 0, "growth_rate must be positive"),
            (self.num_ddb > 0, "num_ddb must be positive"),
            (
                self.dilated_layers_per_ddb > 0,
                "dilated_layers_per_ddb must be positive",
            ),
            (self.iterations >= 1, "iterations must be at least 1"),
            (self.dilation >= 1, "dilation must be at least 1"),
        ];
        match checks.iter().find(|(ok, _)| !ok) {
            Some((_, msg)) => Err(Error::contract(*msg)),
            None => Ok(()),
        }
    }

    /// Same architecture, ignoring the iteration count.
    pub fn same_weights_as(&self, other: &ModelConfig) -> bool {
        ModelConfig {
            iterations: other.iterations,
            ..self.clone()
        } == *other
    }

    pub fn as_array(&self) -> [u32; 6] {
        [
            self.base_channels as u32,
            self.growth_rate as u32,
            self.num_ddb as u32,
            self.dilated_layers_per_ddb as u32,
            self.iterations as u32,
            self.dilation as u32,
        ]
    }

    pub fn from_array(a: [u32; 6]) -> Self {
        ModelConfig {
            base_channels: a[0] as usize,
            growth_rate: a[1] as usize,
            num_ddb: a[2] as usize,
            dilated_layers_per_ddb: a[3] as usize,
            iterations: a[4] as usize,
            dilation: a[5] as usize,
        }
    }
}

impl std::fmt::Display for ModelConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "base_channels={} growth_rate={} num_ddb={} dilated_layers_per_ddb={} iterations={} dilation={}",
            self.base_channels,
            self.growth_rate,
            self.num_ddb,
            self.dilated_layers_per_ddb,
            self.iterations,
            self.dilation
        )
    }
}
