//! Central finite-difference check of [`Mlp::backward`] over random
//! architectures. Backs the `gradcheck` CLI command.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use super::mlp::{Activation, Mlp, MlpSpec, OutputActivation};
use crate::error::Result;
use crate::tensor::Tensor;

/// Denominator floor for the relative error of near-zero gradients.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub configs: usize,
    pub coordinates_checked: usize,
    /// Coordinates whose perturbation flipped a ReLU; the difference
    /// quotient is not a derivative estimate there.
    pub coordinates_skipped: usize,
    pub max_rel_error: f64,
    pub worst_config: String,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

fn weighted_sum(net: &Mlp, x: &Tensor, upstream: &Tensor) -> Result<(f64, Vec<bool>)> {
    let (out, cache) = net.forward_cached(x)?;
    let loss = out.data().iter().zip(upstream.data()).map(|(a, b)| a * b).sum();
    let signs = cache
        .pre_activations()
        .iter()
        .take(net.n_layers() - 1)
        .flat_map(|z| z.data().iter().map(|v| *v > 0.0))
        .collect();
    Ok((loss, signs))
}

/// Checks `configs` random networks (depth 1..=4, every activation and
/// output head) with step `h`.
pub fn check_random_networks(seed: u64, configs: usize, h: f64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let activations = [Activation::Relu, Activation::Tanh, Activation::Gelu];
    let outputs = [OutputActivation::Identity, OutputActivation::Sigmoid];
    let mut report = GradCheckReport {
        configs,
        coordinates_checked: 0,
        coordinates_skipped: 0,
        max_rel_error: 0.0,
        worst_config: String::new(),
    };
    for c in 0..configs {
        let depth = 1 + c % 4;
        let mut sizes = vec![rng.random_range(1..=5)];
        for _ in 0..depth {
            sizes.push(rng.random_range(1..=6));
        }
        let activation = activations[c % 3];
        let output = outputs[(c / 3) % 2];
        let spec = MlpSpec::new(sizes.clone(), activation, output);
        let mut net = Mlp::new(spec, &mut rng)?;
        let batch = rng.random_range(1..=3);
        let x = Tensor::from_vec(
            &[batch, sizes[0]],
            (0..batch * sizes[0]).map(|_| rng.sample(StandardNormal)).collect(),
        )?;
        let upstream = Tensor::from_vec(
            &[batch, *sizes.last().unwrap()],
            (0..batch * sizes.last().unwrap())
                .map(|_| rng.sample(StandardNormal))
                .collect(),
        )?;
        let grads = net.backward(&x, &upstream)?;
        let (_, base_signs) = weighted_sum(&net, &x, &upstream)?;
        let label = format!("sizes={sizes:?} act={activation:?} out={output:?} batch={batch}");

        let mut record = |analytic: f64, plus: (f64, Vec<bool>), minus: (f64, Vec<bool>)| {
            if plus.1 != base_signs || minus.1 != base_signs {
                report.coordinates_skipped += 1;
                return;
            }
            let numeric = (plus.0 - minus.0) / (2.0 * h);
            let err = relative_error(analytic, numeric);
            report.coordinates_checked += 1;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst_config = label.clone();
            }
        };

        for p in 0..net.params().len() {
            for i in 0..net.params()[p].len() {
                let orig = net.params()[p].data()[i];
                net.params_mut()[p].data_mut()[i] = orig + h;
                let plus = weighted_sum(&net, &x, &upstream)?;
                net.params_mut()[p].data_mut()[i] = orig - h;
                let minus = weighted_sum(&net, &x, &upstream)?;
                net.params_mut()[p].data_mut()[i] = orig;
                record(grads.params.0[p].data()[i], plus, minus);
            }
        }
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp.data_mut()[i] += h;
            let mut xm = x.clone();
            xm.data_mut()[i] -= h;
            let plus = weighted_sum(&net, &xp, &upstream)?;
            let minus = weighted_sum(&net, &xm, &upstream)?;
            record(grads.input.data()[i], plus, minus);
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_check_passes() {
        let r = check_random_networks(1, 12, 1e-5).unwrap();
        assert!(r.coordinates_checked > 100);
        assert!(r.max_rel_error <= 1e-4, "{r:?}");
    }
}
