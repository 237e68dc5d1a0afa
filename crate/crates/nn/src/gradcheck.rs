//! Backpropagation versus central finite differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::NetworkConfig;
use crate::error::Result;
use crate::model::{Gradients, Model};
use crate::tensor::Tensor;

pub const FD_EPS: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-4;
pub const ABS_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub n_params: usize,
    /// Parameters whose gradient error exceeds the tolerance.
    pub failures: usize,
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|)` among
    /// parameters whose error is above the absolute floor.
    pub max_rel_err: f64,
    /// `(group, index)` of the worst parameter.
    pub worst: (usize, usize),
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

/// Compares every gradient of `model` on `(x, labels)` in train mode
/// without dropout. `corrupt` may tamper with the analytic gradients.
pub fn check_model(
    model: &Model,
    x: &Tensor,
    labels: &[usize],
    corrupt: impl FnOnce(&mut Gradients),
) -> Result<GradcheckReport> {
    let (_, mut grads) = model.loss_and_grad(x, labels)?;
    corrupt(&mut grads);
    let mut probe = model.clone();
    let mut report = GradcheckReport {
        n_params: model.n_params(),
        failures: 0,
        max_rel_err: 0.0,
        worst: (0, 0),
    };
    for (g, analytic) in grads.0.iter().enumerate() {
        for (i, &a) in analytic.iter().enumerate() {
            let orig = probe.param_groups()[g][i];
            probe.param_groups_mut()[g][i] = orig + FD_EPS;
            let up = probe.loss_and_grad(x, labels)?.0;
            probe.param_groups_mut()[g][i] = orig - FD_EPS;
            let down = probe.loss_and_grad(x, labels)?.0;
            probe.param_groups_mut()[g][i] = orig;
            let numeric = (up - down) / (2.0 * FD_EPS);
            let err = (a - numeric).abs();
            let scale = a.abs().max(numeric.abs());
            if err > ABS_FLOOR.max(REL_TOL * scale) {
                report.failures += 1;
            }
            if err > ABS_FLOOR {
                let rel = err / scale;
                if rel > report.max_rel_err {
                    report.max_rel_err = rel;
                    report.worst = (g, i);
                }
            }
        }
    }
    Ok(report)
}

/// The tiny two-block network on a random 4 x 2 x 16 batch.
pub fn gradcheck(seed: u64) -> Result<GradcheckReport> {
    gradcheck_with(seed, |_| {})
}

pub fn gradcheck_with(seed: u64, corrupt: impl FnOnce(&mut Gradients)) -> Result<GradcheckReport> {
    let cfg = NetworkConfig {
        seed,
        ..NetworkConfig::tiny(3)
    };
    let model = Model::new(&cfg, 2, 16)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Tensor::new([4, 2, 16], (0..128).map(|_| rng.random_range(-1.0..1.0)).collect())?;
    check_model(&model, &x, &[0, 1, 2, 1], corrupt)
}
