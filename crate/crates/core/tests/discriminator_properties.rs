use cfql_core::discriminator::Discriminator;
use cfql_core::nn::{Adam, AdamConfig};
use cfql_core::rng::{self, LabRng};
use cfql_core::Tensor;
use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, Normal};

fn train(
    d: &mut Discriminator,
    steps: usize,
    seed: u64,
    mut class1: impl FnMut(&mut LabRng) -> f64,
    mut class0: impl FnMut(&mut LabRng) -> f64,
) {
    let mut adam = Adam::new(AdamConfig::with_lr(1e-3), d.net().params());
    let mut rng = rng::stream(seed, 9);
    let b = 256;
    let obs = Tensor::zeros(&[b, 1]);
    for _ in 0..steps {
        let a = Tensor::from_vec(&[b, 1], (0..b).map(|_| class1(&mut rng)).collect()).unwrap();
        let p = Tensor::from_vec(&[b, 1], (0..b).map(|_| class0(&mut rng)).collect()).unwrap();
        let r = d.loss(&obs, &a, &p, 1.0).unwrap();
        adam.apply(d.net_mut().params_mut(), &r.grads.0).unwrap();
    }
}

fn weights_at(d: &Discriminator, xs: &[f64]) -> Vec<f64> {
    let obs = Tensor::zeros(&[xs.len(), 1]);
    d.factual_weight(&obs, &Tensor::from_vec(&[xs.len(), 1], xs.to_vec()).unwrap()).unwrap()
}

#[test]
fn identical_classes_stay_near_one_half() {
    let mut d = Discriminator::new(1, 1, &[64, 64], &mut rng::stream(0, 0)).unwrap();
    let u = |r: &mut LabRng| r.random_range(-1.0..1.0);
    train(&mut d, 2000, 0, u, u);
    let mut rng = rng::stream(0, 1);
    let xs: Vec<f64> = (0..4096).map(|_| rng.random_range(-1.0..1.0)).collect();
    let w = weights_at(&d, &xs);
    let mean = w.iter().sum::<f64>() / w.len() as f64;
    assert!((0.4..=0.6).contains(&mean), "mean output {mean}");
}

#[test]
fn disjoint_classes_are_separated() {
    let mut d = Discriminator::new(1, 1, &[64, 64], &mut rng::stream(1, 0)).unwrap();
    train(&mut d, 500, 1, |_| 0.9, |_| -0.9);
    let obs = Tensor::zeros(&[1000, 1]);
    let r = d
        .loss(&obs, &Tensor::filled(&[1000, 1], 0.9), &Tensor::filled(&[1000, 1], -0.9), 1.0)
        .unwrap();
    assert!(r.accuracy > 0.95, "accuracy {}", r.accuracy);
}

#[test]
fn gaussian_classes_recover_bayes_boundary() {
    let mut d = Discriminator::new(1, 1, &[64, 64], &mut rng::stream(2, 0)).unwrap();
    let pos = Normal::new(0.4, 0.3).unwrap();
    let neg = Normal::new(-0.4, 0.3).unwrap();
    train(&mut d, 3000, 2, |r| pos.sample(r), |r| neg.sample(r));
    let xs: Vec<f64> = (0..=200).map(|i| -1.0 + 0.01 * i as f64).collect();
    let w = weights_at(&d, &xs);
    let crossing = xs
        .iter()
        .zip(&w)
        .find(|(_, &w)| w >= 0.5)
        .map(|(&x, _)| x)
        .expect("no crossing");
    assert!(crossing.abs() <= 0.1, "boundary at {crossing}");
    // Equal variances: the log-odds are linear with slope 2 * 0.4 / 0.3^2.
    let slope = 0.8 / 0.09;
    let i = 100 + 20;
    let logit = (w[i] / (1.0 - w[i])).ln();
    assert!((logit - slope * xs[i]).abs() < 0.5 * slope * xs[i], "logit {logit} at {}", xs[i]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn outputs_lie_strictly_inside_the_unit_interval(seed in 0u64..1000, x in -5.0f64..5.0, s in -5.0f64..5.0) {
        let d = Discriminator::new(1, 1, &[8, 8], &mut rng::stream(seed, 0)).unwrap();
        let obs = Tensor::from_vec(&[1, 1], vec![s]).unwrap();
        let w = d.factual_weight(&obs, &Tensor::from_vec(&[1, 1], vec![x]).unwrap()).unwrap()[0];
        prop_assert!(w > 0.0 && w < 1.0);
        let g = d.weight_with_action_grad(&obs, &Tensor::from_vec(&[1, 1], vec![x]).unwrap()).unwrap();
        prop_assert_eq!(g.weights[0], w);
        let h = 1e-6;
        let up = d.factual_weight(&obs, &Tensor::from_vec(&[1, 1], vec![x + h]).unwrap()).unwrap()[0];
        let dn = d.factual_weight(&obs, &Tensor::from_vec(&[1, 1], vec![x - h]).unwrap()).unwrap()[0];
        let fd = (up - dn) / (2.0 * h);
        prop_assert!((fd - g.action_grads.data()[0]).abs() < 1e-6);
    }
}
