//! Random tabular instances for property suites.

use rand::Rng;
use rand_distr::Exp1;

use crate::cmdp::{RewardBounds, TabularCmdp};
use crate::rng;

/// Uniform draws over deterministic mechanism tables, `P(U) ~ Dirichlet(1)`,
/// rewards uniform in `bounds`, uniform initial state.
pub fn random_cmdp(
    states: usize,
    actions: usize,
    noises: usize,
    gamma: f64,
    bounds: RewardBounds,
    seed: u64,
) -> TabularCmdp {
    assert!(states >= 1 && actions >= 1 && noises >= 1, "sizes must be positive");
    let mut rng = rng::stream(seed, 0);
    let w: Vec<f64> = (0..noises).map(|_| rng.sample(Exp1)).collect();
    let total: f64 = w.iter().sum();
    let mut noise_probs: Vec<f64> = w.iter().map(|v| v / total).collect();
    // put the rounding residue on the last entry so the sum is exact
    let head: f64 = noise_probs[..noises - 1].iter().sum();
    noise_probs[noises - 1] = (1.0 - head).max(0.0);
    let sxu = states * actions * noises;
    TabularCmdp {
        states,
        actions,
        noises,
        noise_probs,
        behavior: (0..states * noises).map(|_| rng.random_range(0..actions)).collect(),
        transition: (0..sxu).map(|_| rng.random_range(0..states)).collect(),
        reward: (0..sxu)
            .map(|_| bounds.low + (bounds.high - bounds.low) * rng.random::<f64>())
            .collect(),
        reward_bounds: bounds,
        initial: vec![1.0 / states as f64; states],
        gamma,
    }
}
