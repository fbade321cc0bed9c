use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{Activation, MlpConfig, Network};
use crate::error::Result;

/// Step for relu, kept small so probes rarely cross a kink.
pub const FD_STEP: f64 = 1e-5;

/// Step for smooth activations.
pub const FD_STEP_SMOOTH: f64 = 1e-3;

/// Below this magnitude the relative error is measured against the floor
/// instead, so gradients that are zero up to rounding do not dominate.
pub const RELATIVE_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub params_checked: usize,
    pub max_relative_error: f64,
    pub max_absolute_error: f64,
    /// Parameter index where the worst relative error occurred.
    pub worst_param: usize,
}

/// Compares backprop gradients of the training objective (batch MSE plus
/// `weight_decay / 2 * |W|^2`) with central finite differences for every
/// parameter of a freshly initialized network: a fourth-order stencil for
/// smooth activations, two points for relu. The decay term is separable,
/// so it is differenced per parameter rather than through the whole sum.
///
/// The relative error of one parameter is
/// `|analytic - numeric| / max(|analytic| + |numeric|, RELATIVE_FLOOR)`.
pub fn grad_check(
    mlp: &MlpConfig,
    weight_decay: f64,
    batch: &[(Vec<f64>, f64)],
    seed: u64,
) -> Result<GradCheckReport> {
    Ok(grad_check_decays(mlp, &[weight_decay], batch, seed)?.remove(0))
}

/// [`grad_check`] for several weight decays on the same network, sharing
/// the finite differences of the data term.
pub fn grad_check_decays(
    mlp: &MlpConfig,
    weight_decays: &[f64],
    batch: &[(Vec<f64>, f64)],
    seed: u64,
) -> Result<Vec<GradCheckReport>> {
    mlp.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = Network::init(mlp, &mut rng);
    grad_check_network(&net, weight_decays, batch)
}

pub fn grad_check_network(
    net: &Network,
    weight_decays: &[f64],
    batch: &[(Vec<f64>, f64)],
) -> Result<Vec<GradCheckReport>> {
    let view: Vec<(&[f64], f64)> = batch.iter().map(|(x, y)| (x.as_slice(), *y)).collect();
    let smooth = net.activation() != Activation::Relu;
    let stencil = |f: &mut dyn FnMut(f64) -> Result<f64>| -> Result<f64> {
        if smooth {
            let h = FD_STEP_SMOOTH;
            let (p1, m1, p2, m2) = (f(h)?, f(-h)?, f(2.0 * h)?, f(-2.0 * h)?);
            Ok((8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h))
        } else {
            Ok((f(FD_STEP)? - f(-FD_STEP)?) / (2.0 * FD_STEP))
        }
    };

    let mut probe = net.clone();
    let mut data_numeric = vec![0.0; net.params().len()];
    for (i, d) in data_numeric.iter_mut().enumerate() {
        let original = probe.params()[i];
        *d = stencil(&mut |offset| {
            probe.params_mut()[i] = original + offset;
            probe.loss(&view, 0.0)
        })?;
        probe.params_mut()[i] = original;
    }

    let is_weight = net.weight_mask();
    let mut ws = net.workspace();
    let mut analytic = vec![0.0; net.params().len()];
    let mut reports = Vec::with_capacity(weight_decays.len());
    for &decay in weight_decays {
        net.loss_and_grad(&view, decay, &mut analytic, &mut ws)?;
        let mut report = GradCheckReport {
            params_checked: analytic.len(),
            max_relative_error: 0.0,
            max_absolute_error: 0.0,
            worst_param: 0,
        };
        for (i, (&a, &d)) in analytic.iter().zip(&data_numeric).enumerate() {
            let w = net.params()[i];
            let penalty = if is_weight[i] {
                stencil(&mut |offset| Ok(0.5 * decay * (w + offset) * (w + offset)))?
            } else {
                0.0
            };
            let numeric = d + penalty;
            let abs = (a - numeric).abs();
            let rel = abs / (a.abs() + numeric.abs()).max(RELATIVE_FLOOR);
            report.max_absolute_error = report.max_absolute_error.max(abs);
            if rel > report.max_relative_error {
                report.max_relative_error = rel;
                report.worst_param = i;
            }
        }
        reports.push(report);
    }
    Ok(reports)
}
