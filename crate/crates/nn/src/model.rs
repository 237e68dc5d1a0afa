use blefp_core::seed::derive_seed;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::NetworkConfig;
use crate::error::{Error, Result};
use crate::layers::{self, BnBatchStats, BnCache, ConvShape};
use crate::tensor::Tensor;

const INIT_TAG: u64 = 0x1417;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in batch norm; dropout active when seeded.
    Train,
    /// Running statistics; no dropout.
    Eval,
}

/// conv -> batch norm -> leaky ReLU -> max pool.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvBlock {
    pub shape: ConvShape,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub n_in: usize,
    pub n_out: usize,
    /// `(n_out, n_in)`, row-major.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: NetworkConfig,
    pub input_channels: usize,
    pub input_length: usize,
    pub blocks: Vec<ConvBlock>,
    pub hidden: Vec<Dense>,
    pub output: Dense,
}

/// One gradient vector per parameter group, in `Model::param_groups` order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(pub Vec<Vec<f64>>);

fn uniform(rng: &mut ChaCha8Rng, n: usize, fan_in: usize) -> Vec<f64> {
    let limit = (6.0 / fan_in as f64).sqrt();
    (0..n).map(|_| rng.random_range(-limit..limit)).collect()
}

struct BlockTrace {
    input: Tensor,
    bn: BnCache,
    pre_act: Tensor,
    argmax: Vec<usize>,
    pooled_from: [usize; 3],
}

struct DenseTrace {
    input: Tensor,
    pre_act: Tensor,
    mask: Option<Vec<f64>>,
}

struct Trace {
    blocks: Vec<BlockTrace>,
    flat_from: [usize; 3],
    hidden: Vec<DenseTrace>,
    out_input: Tensor,
}

/// Loss, gradients and the batch-norm statistics of one training batch.
pub struct StepResult {
    pub loss: f64,
    pub grads: Gradients,
    pub batch_stats: Vec<BnBatchStats>,
}

impl Model {
    /// Fresh model with seeded fan-in uniform weights, unit BN scale and
    /// zero biases.
    pub fn new(config: &NetworkConfig, input_channels: usize, input_length: usize) -> Result<Self> {
        config.validate()?;
        if input_channels == 0 {
            return Err(Error::ShapeMismatch("input needs at least one channel".into()));
        }
        let flat = config.flat_features(input_length)?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[INIT_TAG]));
        let mut c_in = input_channels;
        let mut blocks = Vec::new();
        for b in &config.conv_blocks {
            let shape = ConvShape {
                filters: b.filters,
                in_channels: c_in,
                kernel: b.kernel,
                padding: config.padding,
            };
            blocks.push(ConvBlock {
                shape,
                weight: uniform(&mut rng, shape.weight_len(), c_in * b.kernel),
                bias: vec![0.0; b.filters],
                gamma: vec![1.0; b.filters],
                beta: vec![0.0; b.filters],
                running_mean: vec![0.0; b.filters],
                running_var: vec![1.0; b.filters],
            });
            c_in = b.filters;
        }
        let mut dense = |n_in: usize, n_out: usize| Dense {
            n_in,
            n_out,
            weight: uniform(&mut rng, n_in * n_out, n_in),
            bias: vec![0.0; n_out],
        };
        let mut n_in = flat;
        let mut hidden = Vec::new();
        for fc in &config.fc_blocks {
            hidden.push(dense(n_in, fc.neurons));
            n_in = fc.neurons;
        }
        let output = dense(n_in, config.n_classes);
        Ok(Self {
            config: config.clone(),
            input_channels,
            input_length,
            blocks,
            hidden,
            output,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.config.n_classes
    }

    /// Trainable parameters: per conv block weight, bias, gamma, beta; per
    /// dense layer weight, bias; output layer last.
    pub fn param_groups(&self) -> Vec<&[f64]> {
        let mut g: Vec<&[f64]> = Vec::new();
        for b in &self.blocks {
            g.extend([&b.weight[..], &b.bias, &b.gamma, &b.beta]);
        }
        for d in self.hidden.iter().chain(std::iter::once(&self.output)) {
            g.extend([&d.weight[..], &d.bias]);
        }
        g
    }

    pub fn param_groups_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut g = Vec::new();
        for b in &mut self.blocks {
            g.extend([&mut b.weight, &mut b.bias, &mut b.gamma, &mut b.beta]);
        }
        for d in self.hidden.iter_mut().chain(std::iter::once(&mut self.output)) {
            g.extend([&mut d.weight, &mut d.bias]);
        }
        g
    }

    /// Non-trainable state: running mean and variance per block.
    pub fn buffer_groups(&self) -> Vec<&[f64]> {
        self.blocks
            .iter()
            .flat_map(|b| [&b.running_mean[..], &b.running_var])
            .collect()
    }

    pub fn buffer_groups_mut(&mut self) -> Vec<&mut Vec<f64>> {
        self.blocks
            .iter_mut()
            .flat_map(|b| [&mut b.running_mean, &mut b.running_var])
            .collect()
    }

    pub fn n_params(&self) -> usize {
        self.param_groups().iter().map(|g| g.len()).sum()
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.length() < self.input_length {
            return Err(Error::InsufficientLength {
                len: x.length(),
                reason: format!("model expects {} samples", self.input_length),
            });
        }
        if x.channels() != self.input_channels || x.length() != self.input_length {
            return Err(Error::ShapeMismatch(format!(
                "model expects (_, {}, {}), got {:?}",
                self.input_channels,
                self.input_length,
                x.shape()
            )));
        }
        Ok(())
    }

    fn run(
        &self,
        x: &Tensor,
        mode: Mode,
        dropout_seed: Option<u64>,
        keep: bool,
    ) -> Result<(Tensor, Option<Trace>, Vec<BnBatchStats>)> {
        self.check_input(x)?;
        let slope = self.config.leaky_slope;
        let eps = self.config.bn_eps;
        let mut blocks = Vec::new();
        let mut stats = Vec::new();
        let mut h = x.clone();
        for blk in &self.blocks {
            let conv = layers::conv1d_forward(&h, &blk.weight, &blk.bias, blk.shape)?;
            let (normed, cache) = match mode {
                Mode::Train => {
                    let (y, s, c) = layers::batchnorm_train(&conv, &blk.gamma, &blk.beta, eps);
                    stats.push(s);
                    (y, Some(c))
                }
                Mode::Eval => (
                    layers::batchnorm_eval(
                        &conv,
                        &blk.gamma,
                        &blk.beta,
                        &blk.running_mean,
                        &blk.running_var,
                        eps,
                    ),
                    None,
                ),
            };
            let act = layers::leaky_relu(&normed, slope);
            let (pooled, argmax) = layers::maxpool2(&act);
            if keep {
                blocks.push(BlockTrace {
                    input: h,
                    bn: cache.expect("traces are only kept in train mode"),
                    pre_act: normed,
                    argmax,
                    pooled_from: act.shape(),
                });
            }
            h = pooled;
        }
        let flat_from = h.shape();
        h = h.flattened();
        let mut hidden = Vec::new();
        for (i, (d, spec)) in self.hidden.iter().zip(&self.config.fc_blocks).enumerate() {
            let pre = layers::dense_forward(&h, &d.weight, &d.bias)?;
            let mut act = layers::leaky_relu(&pre, slope);
            let mask = match (mode, dropout_seed) {
                (Mode::Train, Some(seed)) if spec.dropout > 0.0 => {
                    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[i as u64]));
                    let m = layers::dropout_mask(act.data().len(), spec.dropout, &mut rng);
                    for (a, k) in act.data_mut().iter_mut().zip(&m) {
                        *a *= k;
                    }
                    Some(m)
                }
                _ => None,
            };
            if keep {
                hidden.push(DenseTrace {
                    input: h,
                    pre_act: pre,
                    mask,
                });
            }
            h = act;
        }
        let logits = layers::dense_forward(&h, &self.output.weight, &self.output.bias)?;
        let trace = keep.then(|| Trace {
            blocks,
            flat_from,
            hidden,
            out_input: h,
        });
        Ok((logits, trace, stats))
    }

    /// Logits of shape `(batch, n_classes, 1)`. Train mode uses batch
    /// statistics and no dropout.
    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        Ok(self.run(x, mode, None, false)?.0)
    }

    fn backward(&self, trace: Trace, dlogits: Tensor) -> Result<Gradients> {
        let slope = self.config.leaky_slope;
        let (mut g, dw, db) = layers::dense_backward(&trace.out_input, &self.output.weight, &dlogits);
        let mut dense_grads = vec![(dw, db)];
        for (d, t) in self.hidden.iter().zip(&trace.hidden).rev() {
            if let Some(mask) = &t.mask {
                for (v, k) in g.data_mut().iter_mut().zip(mask) {
                    *v *= k;
                }
            }
            let dpre = layers::leaky_relu_backward(&t.pre_act, &g, slope);
            let (dx, dw, db) = layers::dense_backward(&t.input, &d.weight, &dpre);
            dense_grads.push((dw, db));
            g = dx;
        }
        dense_grads.reverse();
        g = g.reshaped(trace.flat_from)?;
        let mut block_grads = Vec::new();
        for (blk, t) in self.blocks.iter().zip(&trace.blocks).rev() {
            let dact = layers::maxpool2_backward(&g, &t.argmax, t.pooled_from);
            let dnorm = layers::leaky_relu_backward(&t.pre_act, &dact, slope);
            let (dconv, dgamma, dbeta) = layers::batchnorm_backward(&dnorm, &blk.gamma, &t.bn);
            let cg = layers::conv1d_backward(&t.input, &blk.weight, blk.shape, &dconv);
            block_grads.push([cg.dweight, cg.dbias, dgamma, dbeta]);
            g = cg.dx;
        }
        block_grads.reverse();
        let mut groups: Vec<Vec<f64>> = block_grads.into_iter().flatten().collect();
        for (dw, db) in dense_grads {
            groups.push(dw);
            groups.push(db);
        }
        Ok(Gradients(groups))
    }

    /// Train-mode loss and gradients. `dropout_seed: None` disables dropout.
    pub fn step(&self, x: &Tensor, labels: &[usize], dropout_seed: Option<u64>) -> Result<StepResult> {
        if labels.len() != x.batch() {
            return Err(Error::ShapeMismatch(format!(
                "{} labels for a batch of {}",
                labels.len(),
                x.batch()
            )));
        }
        let (logits, trace, batch_stats) = self.run(x, Mode::Train, dropout_seed, true)?;
        let (loss, dlogits) = layers::softmax_cross_entropy(&logits, labels)?;
        let grads = self.backward(trace.expect("trace requested"), dlogits)?;
        Ok(StepResult {
            loss,
            grads,
            batch_stats,
        })
    }

    /// Mean cross-entropy and its gradient, batch statistics, no dropout.
    pub fn loss_and_grad(&self, x: &Tensor, labels: &[usize]) -> Result<(f64, Gradients)> {
        let r = self.step(x, labels, None)?;
        Ok((r.loss, r.grads))
    }

    /// Argmax of eval-mode logits; ties resolve to the lower class.
    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        const CHUNK: usize = 256;
        let mut out = Vec::with_capacity(x.batch());
        let idx: Vec<usize> = (0..x.batch()).collect();
        for chunk in idx.chunks(CHUNK) {
            let logits = self.forward(&x.select(chunk), Mode::Eval)?;
            out.extend((0..chunk.len()).map(|b| layers::argmax(logits.item(b))));
        }
        Ok(out)
    }

    pub fn zero_output_layer(&mut self) {
        self.output.weight.fill(0.0);
        self.output.bias.fill(0.0);
    }
}
