use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::Padding;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvBlockSpec {
    pub filters: usize,
    pub kernel: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FcBlockSpec {
    pub neurons: usize,
    pub dropout: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub conv_blocks: Vec<ConvBlockSpec>,
    pub fc_blocks: Vec<FcBlockSpec>,
    pub n_classes: usize,
    #[serde(default = "default_slope")]
    pub leaky_slope: f64,
    #[serde(default)]
    pub padding: Padding,
    pub lr0: f64,
    pub decay_steps: u64,
    pub decay_rate: f64,
    #[serde(default)]
    pub staircase: bool,
    #[serde(default)]
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(default = "default_bn_momentum")]
    pub bn_momentum: f64,
    #[serde(default = "default_bn_eps")]
    pub bn_eps: f64,
    pub seed: u64,
}

fn default_slope() -> f64 {
    0.3
}

fn default_bn_momentum() -> f64 {
    0.99
}

fn default_bn_eps() -> f64 {
    1e-3
}

/// The desk preset; `n_classes` is normally replaced by the fleet size.
impl Default for NetworkConfig {
    fn default() -> Self {
        Self::desk(2)
    }
}

impl NetworkConfig {
    /// Two conv blocks and one hidden layer; sized for laptop experiments.
    pub fn desk(n_classes: usize) -> Self {
        Self {
            conv_blocks: vec![
                ConvBlockSpec { filters: 16, kernel: 9 },
                ConvBlockSpec { filters: 32, kernel: 5 },
            ],
            fc_blocks: vec![FcBlockSpec { neurons: 64, dropout: 0.3 }],
            n_classes,
            leaky_slope: default_slope(),
            padding: Padding::Valid,
            lr0: 0.05,
            decay_steps: 600,
            decay_rate: 0.75,
            staircase: false,
            momentum: 0.0,
            epochs: 15,
            batch_size: 32,
            bn_momentum: default_bn_momentum(),
            bn_eps: default_bn_eps(),
            seed: 1,
        }
    }

    /// Five conv blocks and two hidden layers. Same padding, because with
    /// valid convolutions a 53-sample input is exhausted by the second block.
    pub fn table1(n_classes: usize) -> Self {
        let conv = |filters, kernel| ConvBlockSpec { filters, kernel };
        Self {
            conv_blocks: vec![conv(64, 48), conv(64, 8), conv(96, 6), conv(128, 5), conv(96, 6)],
            fc_blocks: vec![
                FcBlockSpec { neurons: 1024, dropout: 0.5 },
                FcBlockSpec { neurons: 512, dropout: 0.6 },
            ],
            padding: Padding::Same,
            epochs: 25,
            batch_size: 64,
            ..Self::desk(n_classes)
        }
    }

    /// A few hundred parameters, for gradient checks.
    pub fn tiny(n_classes: usize) -> Self {
        Self {
            conv_blocks: vec![
                ConvBlockSpec { filters: 3, kernel: 3 },
                ConvBlockSpec { filters: 4, kernel: 3 },
            ],
            fc_blocks: vec![FcBlockSpec { neurons: 6, dropout: 0.0 }],
            epochs: 25,
            batch_size: 8,
            ..Self::desk(n_classes)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.conv_blocks.is_empty() {
            return bad("at least one conv block is required");
        }
        if self.conv_blocks.iter().any(|b| b.filters == 0 || b.kernel == 0) {
            return bad("conv filters and kernels must be positive");
        }
        if self.fc_blocks.iter().any(|b| b.neurons == 0 || !(0.0..1.0).contains(&b.dropout)) {
            return bad("fc blocks need neurons > 0 and 0 <= dropout < 1");
        }
        if self.n_classes < 2 {
            return bad("n_classes must be at least 2");
        }
        if !(self.leaky_slope.is_finite() && self.leaky_slope >= 0.0) {
            return bad("leaky_slope must be finite and non-negative");
        }
        if !(self.lr0 > 0.0 && self.decay_rate > 0.0 && self.decay_steps > 0) {
            return bad("learning-rate schedule needs lr0, decay_rate and decay_steps > 0");
        }
        if !(0.0..1.0).contains(&self.momentum) || !(0.0..1.0).contains(&self.bn_momentum) {
            return bad("momentum terms must lie in [0, 1)");
        }
        if self.bn_eps <= 0.0 || self.epochs == 0 || self.batch_size == 0 {
            return bad("bn_eps, epochs and batch_size must be positive");
        }
        Ok(())
    }

    /// Sequence lengths entering each conv block, then after the last pool.
    pub fn length_trace(&self, input_len: usize) -> Result<Vec<usize>> {
        let mut trace = vec![input_len];
        let mut len = input_len;
        for (i, b) in self.conv_blocks.iter().enumerate() {
            let conv = self
                .padding
                .output_length(len, b.kernel)
                .filter(|&l| l >= 2)
                .ok_or_else(|| Error::InsufficientLength {
                    len: input_len,
                    reason: format!(
                        "block {} gets {len} samples, kernel {} leaves fewer than 2 to pool",
                        i + 1,
                        b.kernel
                    ),
                })?;
            len = conv / 2;
            trace.push(len);
        }
        Ok(trace)
    }

    /// Features entering the first dense layer.
    pub fn flat_features(&self, input_len: usize) -> Result<usize> {
        let last = *self.length_trace(input_len)?.last().unwrap();
        Ok(last * self.conv_blocks.last().unwrap().filters)
    }
}

/// `lr0 * rate^(step / steps)`, with an integer exponent when `staircase`.
pub fn lr_schedule(step: u64, cfg: &NetworkConfig) -> f64 {
    let ratio = step as f64 / cfg.decay_steps as f64;
    let e = if cfg.staircase { ratio.floor() } else { ratio };
    cfg.lr0 * cfg.decay_rate.powf(e)
}
