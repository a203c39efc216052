//! Adam parameter updates with bias-corrected moment estimates.

use thiserror::Error;

use crate::nn::Network;
use crate::tensor::{Element, Tensor};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimError {
    #[error("gradient shape {grad:?} does not match parameter shape {param:?} for {name}")]
    ShapeMismatch {
        name: String,
        param: Vec<usize>,
        grad: Vec<usize>,
    },
    #[error("non-finite gradient in parameter {name}")]
    NonFiniteGradient { name: String },
}

/// Adam hyperparameters. The constants follow the common defaults; only the
/// learning rate is task-specific.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            alpha: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamHyper {
    pub fn with_lr(alpha: f64) -> Self {
        Self {
            alpha,
            ..Self::default()
        }
    }
}

/// One Adam update on a single tensor. `t` is the already-incremented step
/// counter (first update runs with `t = 1`):
///
/// `m <- b1*m + (1-b1)*g;  v <- b2*v + (1-b2)*g^2`
/// `m_hat = m/(1-b1^t);    v_hat = v/(1-b2^t)`
/// `theta <- theta - alpha * m_hat / (sqrt(v_hat) + eps)`
pub fn adam_step_tensor<T: Element>(
    value: &mut Tensor<T>,
    grad: &Tensor<T>,
    m: &mut Tensor<T>,
    v: &mut Tensor<T>,
    t: u64,
    hyper: &AdamHyper,
    name: &str,
) -> Result<(), OptimError> {
    if grad.shape() != value.shape() {
        return Err(OptimError::ShapeMismatch {
            name: name.to_string(),
            param: value.shape().to_vec(),
            grad: grad.shape().to_vec(),
        });
    }
    if !grad.is_all_finite() {
        return Err(OptimError::NonFiniteGradient {
            name: name.to_string(),
        });
    }
    let alpha = T::from_f64(hyper.alpha);
    let beta1 = T::from_f64(hyper.beta1);
    let beta2 = T::from_f64(hyper.beta2);
    let eps = T::from_f64(hyper.eps);
    let one = T::ONE;
    let bias1 = one - beta1.powi(t as i32);
    let bias2 = one - beta2.powi(t as i32);
    let vd = value.data_mut();
    let md = m.data_mut();
    let nd = v.data_mut();
    for i in 0..vd.len() {
        let g = grad.data()[i];
        md[i] = beta1 * md[i] + (one - beta1) * g;
        nd[i] = beta2 * nd[i] + (one - beta2) * g * g;
        let m_hat = md[i] / bias1;
        let v_hat = nd[i] / bias2;
        vd[i] = vd[i] - alpha * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

/// Network-level Adam: one moment pair per parameter tensor, updating only
/// the parameters of trainable layers. The step counter is shared across the
/// whole network, as usual.
pub struct Adam<T: Element> {
    hyper: AdamHyper,
    t: u64,
    moments: Vec<Vec<(Tensor<T>, Tensor<T>)>>,
}

impl<T: Element> Adam<T> {
    pub fn new(hyper: AdamHyper) -> Self {
        Self {
            hyper,
            t: 0,
            moments: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn hyper(&self) -> &AdamHyper {
        &self.hyper
    }

    pub fn step(&mut self, net: &mut Network<T>) -> Result<(), OptimError> {
        if self.moments.is_empty() {
            self.moments = net
                .layers()
                .iter()
                .map(|l| {
                    l.params()
                        .iter()
                        .map(|p| {
                            (
                                Tensor::zeros(p.value.shape()),
                                Tensor::zeros(p.value.shape()),
                            )
                        })
                        .collect()
                })
                .collect();
        }
        self.t += 1;
        let t = self.t;
        for (li, layer) in net.layers_mut().iter_mut().enumerate() {
            if !layer.trainable() {
                continue;
            }
            for (pi, p) in layer.params_mut().iter_mut().enumerate() {
                let (m, v) = &mut self.moments[li][pi];
                let name = format!("layer{li}.{}", p.name);
                adam_step_tensor(&mut p.value, &p.grad, m, v, t, &self.hyper, &name)?;
            }
        }
        Ok(())
    }
}
