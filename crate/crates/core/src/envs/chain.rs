//! Four-state chain whose behavior action always matches the noise.

use crate::cmdp::{RewardBounds, TabularCmdp};

/// `f_X(s, u) = u`; the agent moves right when `x = u` and left otherwise,
/// earning 1 on arrival at (or staying in) the last state. Observationally
/// every action moves right, interventionally each does so half the time.
pub fn confounded_chain() -> TabularCmdp {
    let (ns, nx, nu) = (4, 2, 2);
    let mut behavior = Vec::with_capacity(ns * nu);
    let mut transition = Vec::with_capacity(ns * nx * nu);
    let mut reward = Vec::with_capacity(ns * nx * nu);
    for _ in 0..ns {
        behavior.extend([0, 1]);
    }
    for s in 0..ns {
        for x in 0..nx {
            for u in 0..nu {
                let next = if x == u { (s + 1).min(ns - 1) } else { s.saturating_sub(1) };
                transition.push(next);
                reward.push(if next == ns - 1 { 1.0 } else { 0.0 });
            }
        }
    }
    TabularCmdp {
        states: ns,
        actions: nx,
        noises: nu,
        noise_probs: vec![0.5, 0.5],
        behavior,
        transition,
        reward,
        reward_bounds: RewardBounds::new(0.0, 1.0),
        initial: vec![1.0, 0.0, 0.0, 0.0],
        gamma: 0.9,
    }
}
