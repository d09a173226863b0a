#![allow(dead_code)]

use cfql_core::cmdp::ContinuousCmdpEnv;
use cfql_core::flow::{euler_sample, flow_matching_loss, VelocityField};
use cfql_core::nn::{Adam, AdamConfig};
use cfql_core::rng;
use cfql_core::{envs::ConfoundedBandit, Tensor};
use std::sync::Arc;

/// Demonstrator actions of the equal-mass bandit: modes at +-0.8.
pub fn bimodal_actions(n: usize, seed: u64) -> Vec<f64> {
    let env = ContinuousCmdpEnv::new("bimodal", Arc::new(ConfoundedBandit::symmetric()));
    let data = env.sample_trajectories(n, seed).unwrap();
    (0..data.len()).map(|i| data.action(i)[0]).collect()
}

/// Fits a velocity field to 1-D actions at a constant observation.
pub fn fit_flow(actions: &[f64], steps: usize, seed: u64) -> VelocityField {
    let mut init = rng::stream(seed, 0);
    let mut v = VelocityField::new(1, 1, &[64, 64], &mut init).unwrap();
    let mut adam = Adam::new(AdamConfig::with_lr(1e-3), v.net().params());
    let mut rng = rng::stream(seed, 1);
    let b = 256;
    let obs = Tensor::zeros(&[b, 1]);
    for _ in 0..steps {
        let idx: Vec<f64> = (0..b).map(|_| actions[rand::Rng::random_range(&mut rng, 0..actions.len())]).collect();
        let x = Tensor::from_vec(&[b, 1], idx).unwrap();
        let lg = flow_matching_loss(&v, &obs, &x, &mut rng).unwrap();
        adam.apply(v.net_mut().params_mut(), &lg.grads.0).unwrap();
    }
    v
}

pub fn sample_flow(v: &VelocityField, n: usize, steps: usize, seed: u64) -> Vec<f64> {
    let z = rng::standard_normal(&[n, 1], &mut rng::stream(seed, 2));
    euler_sample(v, &Tensor::zeros(&[n, 1]), &z, steps).unwrap().into_data()
}

/// 1-Wasserstein distance of two equal-size empirical samples via the
/// sorted (quantile) coupling.
pub fn w1(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}
