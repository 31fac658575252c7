use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::mlp::{Gradients, MlpParams};

/// SGD with Nesterov momentum and decoupled weight decay on weight matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimState {
    pub velocity: MlpParams,
    pub momentum: f64,
    pub weight_decay: f64,
    pub base_lr: f64,
    /// Number of updates applied so far.
    pub steps: usize,
}

impl OptimState {
    pub fn new(params: &MlpParams, momentum: f64, weight_decay: f64, base_lr: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::InvalidArgument(format!(
                "momentum must be in [0,1), got {momentum}"
            )));
        }
        if !(weight_decay >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "weight decay must be >= 0, got {weight_decay}"
            )));
        }
        if !(base_lr > 0.0) {
            return Err(Error::InvalidArgument(format!("base lr must be > 0, got {base_lr}")));
        }
        Ok(Self {
            velocity: params.zeros_like(),
            momentum,
            weight_decay,
            base_lr,
            steps: 0,
        })
    }
}

/// One Nesterov update at learning rate `lr`:
///
/// ```text
/// v ← μ·v + g
/// θ ← θ − lr·(g + μ·v) − lr·wd·θ      (wd on weights only)
/// ```
pub fn sgd_nesterov_step(params: &mut MlpParams, grads: &Gradients, opt: &mut OptimState, lr: f64) -> Result<()> {
    if !(lr >= 0.0) {
        return Err(Error::InvalidArgument(format!("learning rate must be >= 0, got {lr}")));
    }
    if !params.same_layout(grads) || !params.same_layout(&opt.velocity) {
        return Err(Error::shape(
            "sgd_nesterov_step",
            format!("{:?}", params.dims()),
            format!("{:?}", grads.dims()),
        ));
    }
    if !grads.is_finite() {
        return Err(Error::Diverged { step: opt.steps });
    }
    let mu = opt.momentum;
    let wd = opt.weight_decay;
    for ((p, g), v) in params
        .layers
        .iter_mut()
        .zip(&grads.layers)
        .zip(opt.velocity.layers.iter_mut())
    {
        let weights = p
            .weight
            .as_mut_slice()
            .iter_mut()
            .zip(g.weight.as_slice())
            .zip(v.weight.as_mut_slice());
        for ((p, &g), v) in weights {
            *v = mu * *v + g;
            *p -= lr * (g + mu * *v) + lr * wd * *p;
        }
        for ((p, &g), v) in p.bias.iter_mut().zip(&g.bias).zip(v.bias.iter_mut()) {
            *v = mu * *v + g;
            *p -= lr * (g + mu * *v);
        }
    }
    opt.steps += 1;
    Ok(())
}

/// `base · cos(7πk / 16K)`.
pub fn cosine_lr(step: usize, total: usize, base: f64) -> Result<f64> {
    if total == 0 {
        return Err(Error::InvalidArgument("total steps must be > 0".into()));
    }
    if step > total {
        return Err(Error::InvalidArgument(format!("step {step} exceeds total {total}")));
    }
    let angle = 7.0 * std::f64::consts::PI * step as f64 / (16.0 * total as f64);
    Ok(base * angle.cos())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::mlp::Dense;
    use crate::numkit::Matrix;

    fn scalar(v: f64) -> MlpParams {
        MlpParams::from_layers(vec![Dense {
            weight: Matrix::from_vec(1, 1, vec![v]).unwrap(),
            bias: vec![0.0],
        }])
        .unwrap()
    }

    #[test]
    fn zero_lr_is_identity() {
        let mut p = scalar(0.7);
        let mut opt = OptimState::new(&p, 0.9, 0.0005, 0.03).unwrap();
        sgd_nesterov_step(&mut p, &scalar(3.0), &mut opt, 0.0).unwrap();
        assert_eq!(p, scalar(0.7));
    }

    #[test]
    fn zero_momentum_is_plain_sgd() {
        let mut p = scalar(1.0);
        let mut opt = OptimState::new(&p, 0.0, 0.0, 0.1).unwrap();
        sgd_nesterov_step(&mut p, &scalar(2.0), &mut opt, 0.1).unwrap();
        assert_eq!(p.layers[0].weight.get(0, 0), 1.0 - 0.1 * 2.0);
    }

    #[test]
    fn two_step_scalar_recursion() {
        // hand-rolled: v1 = 1, p1 = 1 - 0.1(1 + 0.9) = 0.81
        //              v2 = 1.9, p2 = 0.81 - 0.1(1 + 1.71) = 0.539
        let mut p = scalar(1.0);
        let mut opt = OptimState::new(&p, 0.9, 0.0, 0.1).unwrap();
        sgd_nesterov_step(&mut p, &scalar(1.0), &mut opt, 0.1).unwrap();
        assert!((p.layers[0].weight.get(0, 0) - 0.81).abs() < 1e-15);
        sgd_nesterov_step(&mut p, &scalar(1.0), &mut opt, 0.1).unwrap();
        assert!((p.layers[0].weight.get(0, 0) - 0.539).abs() < 1e-15);
        assert_eq!(opt.steps, 2);
    }

    #[test]
    fn weight_decay_is_decoupled() {
        let mut p = scalar(2.0);
        let mut opt = OptimState::new(&p, 0.9, 0.5, 0.1).unwrap();
        sgd_nesterov_step(&mut p, &scalar(0.0), &mut opt, 0.1).unwrap();
        assert!((p.layers[0].weight.get(0, 0) - (2.0 - 0.1 * 0.5 * 2.0)).abs() < 1e-15);
        assert!(opt.velocity.values().all(|v| v == 0.0));
    }

    #[test]
    fn non_finite_gradient_diverges() {
        let mut p = scalar(1.0);
        let mut opt = OptimState::new(&p, 0.9, 0.0, 0.1).unwrap();
        let err = sgd_nesterov_step(&mut p, &scalar(f64::NAN), &mut opt, 0.1).unwrap_err();
        assert!(err.to_string().contains("diverged"));
    }

    #[test]
    fn cosine_schedule_endpoints_and_monotonicity() {
        assert_eq!(cosine_lr(0, 100, 0.03).unwrap(), 0.03);
        let end = cosine_lr(100, 100, 1.0).unwrap();
        assert!((end - (7.0 * std::f64::consts::PI / 16.0).cos()).abs() < 1e-15);
        assert!((end - 0.19509).abs() < 1e-5);
        let lrs: Vec<f64> = (0..=100).map(|k| cosine_lr(k, 100, 1.0).unwrap()).collect();
        assert!(lrs.windows(2).all(|w| w[1] < w[0]));
        assert!(lrs.iter().all(|&v| v > 0.0));
        assert!(cosine_lr(101, 100, 1.0).is_err());
        assert!(cosine_lr(0, 0, 1.0).is_err());
    }
}
