//! Finite-difference verification of analytic gradients.

use crate::tensor::Tensor;

use super::{NetError, Network};

/// Compare analytic parameter gradients against central differences
/// `(f(t+h) - f(t-h)) / 2h` and return the worst relative error
/// `|a - n| / max(|a|, |n|, 1e-8)`.
///
/// `loss_fn` maps the network output to a scalar loss and the gradient of
/// that loss with respect to the output. The check runs in train mode with
/// the dropout stream rewound before every forward pass, so stochastic
/// layers see identical masks on each evaluation. Frozen layers are skipped
/// (their gradient slots stay zero by contract).
///
/// Everything is `f64`; `f32` lacks the precision central differences need.
pub fn grad_check<F>(
    net: &mut Network<f64>,
    input: &Tensor<f64>,
    loss_fn: F,
    step: f64,
) -> Result<f64, NetError>
where
    F: Fn(&Tensor<f64>) -> (f64, Tensor<f64>),
{
    let replay_seed = net.rng_seed();
    let prior_mode = net.mode();
    net.set_mode(super::Mode::Train);

    // Analytic pass.
    net.reseed(replay_seed);
    let output = net.forward(input)?;
    let (_, output_grad) = loss_fn(&output);
    net.zero_grad();
    net.backward(&output_grad)?;

    let analytic: Vec<Vec<Vec<f64>>> = net
        .layers()
        .iter()
        .map(|l| l.params().iter().map(|p| p.grad.data().to_vec()).collect())
        .collect();

    let mut eval = |net: &mut Network<f64>| -> Result<f64, NetError> {
        net.reseed(replay_seed);
        let out = net.forward(input)?;
        Ok(loss_fn(&out).0)
    };

    let mut max_rel = 0.0f64;
    let layer_count = net.layers().len();
    for li in 0..layer_count {
        if !net.layers()[li].trainable() {
            continue;
        }
        let param_count = net.layers()[li].params().len();
        for pi in 0..param_count {
            let len = net.layers()[li].params()[pi].value.len();
            for idx in 0..len {
                let orig = net.layers()[li].params()[pi].value.data()[idx];

                net.layers_mut()[li].params_mut()[pi].value.data_mut()[idx] = orig + step;
                let f_plus = eval(net)?;
                net.layers_mut()[li].params_mut()[pi].value.data_mut()[idx] = orig - step;
                let f_minus = eval(net)?;
                net.layers_mut()[li].params_mut()[pi].value.data_mut()[idx] = orig;

                let numeric = (f_plus - f_minus) / (2.0 * step);
                let a = analytic[li][pi][idx];
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
                if rel > max_rel {
                    max_rel = rel;
                }
            }
        }
    }

    net.reseed(replay_seed);
    net.set_mode(prior_mode);
    Ok(max_rel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{LayerSpec, Network};
    use crate::optim::{bce_loss, BceBatch};
    use crate::tensor::{rng_fill, Dist, SeededRng, Tensor};

    fn quadratic_loss(out: &Tensor<f64>) -> (f64, Tensor<f64>) {
        // L = 0.5 * sum(y^2); dL/dy = y
        let loss = out.data().iter().map(|v| 0.5 * v * v).sum();
        (loss, out.clone())
    }

    fn bce_sigmoid_loss(labels: Vec<f64>) -> impl Fn(&Tensor<f64>) -> (f64, Tensor<f64>) {
        move |out: &Tensor<f64>| {
            let probs: Vec<f64> = out.data().to_vec();
            let batch = BceBatch::new(&labels, &probs).unwrap();
            let (loss, dp) = bce_loss(&batch);
            let grad = Tensor::from_vec(out.shape().to_vec(), dp).unwrap();
            (loss, grad)
        }
    }

    #[test]
    fn linear_net_quadratic_loss_is_exact() {
        let mut net = Network::<f64>::new(
            vec![3],
            vec![LayerSpec::Dense { in_dim: 3, out_dim: 2 }],
            0,
        )
        .unwrap();
        net.init_glorot_uniform(&mut SeededRng::new(8));
        let x = rng_fill(&mut SeededRng::new(9), &[4, 3], Dist::uniform(-1.0, 1.0)).unwrap();
        let err = grad_check(&mut net, &x, quadratic_loss, 1e-4).unwrap();
        assert!(err < 1e-7, "relative error {err}");
    }

    #[test]
    fn conv_dense_bce_net_passes() {
        let mut net = Network::<f64>::new(
            vec![1, 8, 8],
            vec![
                LayerSpec::Conv2D {
                    in_ch: 1,
                    out_ch: 2,
                    kh: 3,
                    kw: 3,
                    stride: 1,
                    zero_pad: 1,
                },
                LayerSpec::ReLU,
                LayerSpec::Flatten,
                LayerSpec::Dense {
                    in_dim: 128,
                    out_dim: 1,
                },
                LayerSpec::Sigmoid,
            ],
            0,
        )
        .unwrap();
        net.init_glorot_uniform(&mut SeededRng::new(21));
        let x = rng_fill(&mut SeededRng::new(22), &[2, 1, 8, 8], Dist::normal(0.0, 1.0)).unwrap();
        let err = grad_check(&mut net, &x, bce_sigmoid_loss(vec![1.0, 0.0]), 1e-4).unwrap();
        assert!(err < 1e-3, "relative error {err}");
    }

    #[test]
    fn frozen_layers_keep_zero_grads_and_are_skipped() {
        let mut net = Network::<f64>::new(
            vec![4],
            vec![
                LayerSpec::Dense { in_dim: 4, out_dim: 4 },
                LayerSpec::ReLU,
                LayerSpec::Dense { in_dim: 4, out_dim: 2 },
            ],
            0,
        )
        .unwrap();
        net.init_glorot_uniform(&mut SeededRng::new(30));
        net.layers_mut()[0].set_trainable(false);
        let x = rng_fill(&mut SeededRng::new(31), &[3, 4], Dist::uniform(-1.0, 1.0)).unwrap();
        let err = grad_check(&mut net, &x, quadratic_loss, 1e-4).unwrap();
        assert!(err < 1e-6, "relative error {err}");
        for p in net.layers()[0].params() {
            assert!(p.grad.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn dropout_net_checks_cleanly_with_replayed_masks() {
        let mut net = Network::<f64>::new(
            vec![6],
            vec![
                LayerSpec::Dense { in_dim: 6, out_dim: 6 },
                LayerSpec::Dropout { rate: 0.4 },
                LayerSpec::Dense { in_dim: 6, out_dim: 1 },
                LayerSpec::Sigmoid,
            ],
            1234,
        )
        .unwrap();
        net.init_glorot_uniform(&mut SeededRng::new(40));
        let x = rng_fill(&mut SeededRng::new(41), &[2, 6], Dist::uniform(-1.0, 1.0)).unwrap();
        let err = grad_check(&mut net, &x, bce_sigmoid_loss(vec![0.0, 1.0]), 1e-4).unwrap();
        assert!(err < 1e-3, "relative error {err}");
    }
}
