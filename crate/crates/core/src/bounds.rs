//! Causal Bellman bounds on tabular nominal models.
//!
//! For the lower direction one sweep computes
//!
//! ```text
//! Q(s,x) = (1 - mu(x|s)) (a + gamma min_s* V(s*))
//!        + mu(x|s) (R~(s,x) + gamma sum_s' T~(s,x,s') V(s'))
//! V(s)   = sum_x pi(x|s) Q(s,x)
//! ```
//!
//! and the upper direction replaces `a` by `b` and the min by a max.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cmdp::{NominalModel, TabularPolicy};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundDirection {
    Lower,
    Upper,
}

#[derive(Debug, Clone)]
pub struct BoundProblem {
    pub nominal: NominalModel,
    pub policy: TabularPolicy,
    /// Reward used on the counterfactual branch: `a` for lower bounds,
    /// `b` for upper bounds.
    pub extreme_reward: f64,
    pub gamma: f64,
    pub tolerance: f64,
    pub max_sweeps: usize,
    pub direction: BoundDirection,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundTables {
    pub states: usize,
    pub actions: usize,
    /// `[S*X]`, row-major by state.
    pub q: Vec<f64>,
    pub v: Vec<f64>,
    pub sweeps: usize,
    /// Sup-norm change of `Q` in the last sweep.
    pub residual: f64,
    /// Residual of every sweep, in order.
    pub residual_history: Vec<f64>,
    /// `V` minus its value before the last sweep, when known.
    #[serde(skip)]
    pub v_step: Option<Vec<f64>>,
}

impl BoundTables {
    pub fn q(&self, s: usize, x: usize) -> f64 {
        self.q[s * self.actions + x]
    }
}

impl BoundProblem {
    pub fn lower(nominal: NominalModel, policy: TabularPolicy, a: f64, gamma: f64) -> Self {
        Self {
            nominal,
            policy,
            extreme_reward: a,
            gamma,
            tolerance: 1e-10,
            max_sweeps: 100_000,
            direction: BoundDirection::Lower,
        }
    }

    pub fn upper(nominal: NominalModel, policy: TabularPolicy, b: f64, gamma: f64) -> Self {
        Self {
            direction: BoundDirection::Upper,
            ..Self::lower(nominal, policy, b, gamma)
        }
    }

    pub fn with_policy(&self, policy: TabularPolicy) -> Self {
        Self {
            policy,
            ..self.clone()
        }
    }

    fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::InvalidArgument(format!("discount {} not in [0, 1)", self.gamma)));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidArgument("tolerance must be positive".into()));
        }
        if self.policy.states() != self.nominal.states()
            || self.policy.actions() != self.nominal.actions()
        {
            return Err(Error::Dimension {
                context: "bound policy".into(),
                expected: self.nominal.states() * self.nominal.actions(),
                found: self.policy.states() * self.policy.actions(),
            });
        }
        Ok(())
    }

    /// Tables with `V = Q = extreme / (1 - gamma)` everywhere.
    pub fn initial_tables(&self) -> BoundTables {
        let (ns, nx) = (self.nominal.states(), self.nominal.actions());
        let c = self.extreme_reward / (1.0 - self.gamma);
        BoundTables {
            states: ns,
            actions: nx,
            q: vec![c; ns * nx],
            v: vec![c; ns],
            sweeps: 0,
            residual: f64::INFINITY,
            residual_history: Vec::new(),
            v_step: None,
        }
    }

    fn worst_state(&self, v: &[f64]) -> usize {
        let mut best = 0;
        for (s, &val) in v.iter().enumerate() {
            let better = match self.direction {
                BoundDirection::Lower => val < v[best],
                BoundDirection::Upper => val > v[best],
            };
            if better {
                best = s;
            }
        }
        best
    }
}

fn nominal_pair(nom: &NominalModel, s: usize, x: usize) -> Result<(&[f64], f64)> {
    match (nom.transition(s, x), nom.reward(s, x)) {
        (Some(t), Some(r)) => Ok((t, r)),
        _ => Err(Error::InconsistentNominal {
            state: s,
            action: x,
            mass: nom.mu(s, x),
        }),
    }
}

/// One synchronous sweep.
///
/// When `current` came out of a previous sweep it carries the last change
/// of `V`, and the new tables are formed as `Q + dQ` with `dQ` computed from
/// that change alone. The operator is affine in `V` apart from the
/// extremum, so this is the same sweep, but the residual no longer suffers
/// cancellation once it falls toward rounding level.
pub fn apply_lower_bellman(problem: &BoundProblem, current: &BoundTables) -> Result<BoundTables> {
    problem.validate()?;
    let nom = &problem.nominal;
    let (ns, nx) = (nom.states(), nom.actions());
    if current.q.len() != ns * nx
        || current.v.len() != ns
        || current.v_step.as_ref().is_some_and(|d| d.len() != ns)
    {
        return Err(Error::Shape("bound tables do not match the problem".into()));
    }
    let g = problem.gamma;
    let worst = problem.worst_state(&current.v);
    let mut q = vec![0.0; ns * nx];
    let mut dq = vec![0.0; ns * nx];
    match &current.v_step {
        None => {
            let counterfactual = problem.extreme_reward + g * current.v[worst];
            for s in 0..ns {
                for x in 0..nx {
                    let m = nom.mu(s, x);
                    let mut val = (1.0 - m) * counterfactual;
                    if m > 0.0 {
                        let (t, r) = nominal_pair(nom, s, x)?;
                        let next: f64 = t.iter().zip(&current.v).map(|(p, w)| p * w).sum();
                        val += m * (r + g * next);
                    }
                    q[s * nx + x] = val;
                    dq[s * nx + x] = val - current.q[s * nx + x];
                }
            }
        }
        Some(dv) => {
            let prev: Vec<f64> = current.v.iter().zip(dv).map(|(v, d)| v - d).collect();
            let prev_worst = problem.worst_state(&prev);
            // extremum change, written so that an unchanged extremal state
            // reduces to that state's own step
            let d_extreme = current.v[worst] - current.v[prev_worst] + dv[prev_worst];
            for s in 0..ns {
                for x in 0..nx {
                    let m = nom.mu(s, x);
                    let mut step = (1.0 - m) * d_extreme;
                    if m > 0.0 {
                        let (t, _) = nominal_pair(nom, s, x)?;
                        let next: f64 = t.iter().zip(dv).map(|(p, w)| p * w).sum();
                        step += m * next;
                    }
                    dq[s * nx + x] = g * step;
                    q[s * nx + x] = current.q[s * nx + x] + g * step;
                }
            }
        }
    }
    let mut v = vec![0.0; ns];
    let mut dv = vec![0.0; ns];
    for s in 0..ns {
        for x in 0..nx {
            let p = problem.policy.prob(s, x);
            v[s] += p * q[s * nx + x];
            dv[s] += p * dq[s * nx + x];
        }
    }
    let residual = dq.iter().map(|d| d.abs()).fold(0.0, f64::max);
    let mut residual_history = current.residual_history.clone();
    residual_history.push(residual);
    Ok(BoundTables {
        states: ns,
        actions: nx,
        q,
        v,
        sweeps: current.sweeps + 1,
        residual,
        residual_history,
        v_step: Some(dv),
    })
}

/// Iterates [`apply_lower_bellman`] from the pessimistic start until the
/// residual drops below the tolerance.
pub fn solve_lower_bound(problem: &BoundProblem) -> Result<BoundTables> {
    problem.validate()?;
    let mut tables = problem.initial_tables();
    loop {
        tables = apply_lower_bellman(problem, &tables)?;
        if tables.residual < problem.tolerance {
            return Ok(tables);
        }
        if tables.sweeps >= problem.max_sweeps {
            return Err(Error::NonConvergence {
                sweeps: tables.sweeps,
                residual: tables.residual,
            });
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StateFormCheck {
    /// `V(s)` from the summation form.
    pub summation: f64,
    pub estimate: f64,
    pub std_error: f64,
    /// `sum_x mu(x|s) pi(x|s)`.
    pub agreement: f64,
    pub agreement_estimate: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FormCheckReport {
    pub samples: usize,
    pub states: Vec<StateFormCheck>,
    pub max_deviation: f64,
    /// Largest deviation measured in standard errors; deviations within
    /// rounding plus the solver residual count as zero.
    pub max_standard_errors: f64,
}

/// Monte-Carlo evaluation of the expectation form of the bound at every
/// state, using the solved tables.
///
/// Per sample: `x ~ mu(.|s)`, `x' ~ pi(.|s)`. On disagreement the value is
/// `extreme + gamma Q(s*, x*)` with `s*` the worst state and
/// `x* ~ pi(.|s*)`; on agreement it is
/// `R~(s,x) + gamma sum_s' T~(s,x,s') Q(s', x*_s')` with `x*_s' ~ pi(.|s')`.
pub fn expectation_form_check(
    problem: &BoundProblem,
    tables: &BoundTables,
    samples: usize,
    seed: u64,
) -> Result<FormCheckReport> {
    problem.validate()?;
    if samples < 2 {
        return Err(Error::InvalidArgument("need at least two samples".into()));
    }
    let nom = &problem.nominal;
    let (ns, nx) = (nom.states(), nom.actions());
    let g = problem.gamma;
    let worst = problem.worst_state(&tables.v);
    let pi_rows: Vec<&[f64]> = (0..ns).map(|s| problem.policy.row(s)).collect();
    let mut report = FormCheckReport {
        samples,
        states: Vec::with_capacity(ns),
        max_deviation: 0.0,
        max_standard_errors: 0.0,
    };
    for s in 0..ns {
        let mu_row: Vec<f64> = (0..nx).map(|x| nom.mu(s, x)).collect();
        let agreement: f64 = (0..nx).map(|x| mu_row[x] * problem.policy.prob(s, x)).sum();
        let mut rng = rng::stream(seed, s as u64);
        let unvisited = mu_row.iter().sum::<f64>() == 0.0;
        // Welford, so that a constant sample keeps its exact mean
        let (mut mean, mut m2, mut agree) = (0.0, 0.0, 0usize);
        for k in 0..samples {
            let x_prime = rng::categorical(pi_rows[s], &mut rng);
            // an unvisited state has no behavior action to agree with
            let x = if unvisited {
                None
            } else {
                Some(rng::categorical(&mu_row, &mut rng))
            };
            let val = match x {
                Some(x) if x == x_prime => {
                    agree += 1;
                    let t = nom.transition(s, x).ok_or(Error::InconsistentNominal {
                        state: s,
                        action: x,
                        mass: mu_row[x],
                    })?;
                    let mut next = 0.0;
                    for (s2, &p) in t.iter().enumerate() {
                        if p > 0.0 {
                            let x_star = rng::categorical(pi_rows[s2], &mut rng);
                            next += p * tables.q(s2, x_star);
                        }
                    }
                    nom.reward(s, x).unwrap_or(f64::NAN) + g * next
                }
                _ => {
                    let x_star = rng::categorical(pi_rows[worst], &mut rng);
                    problem.extreme_reward + g * tables.q(worst, x_star)
                }
            };
            let delta = val - mean;
            mean += delta / (k + 1) as f64;
            m2 += delta * (val - mean);
        }
        let n = samples as f64;
        let var = m2.max(0.0) / (n - 1.0);
        let se = (var / n).sqrt();
        let dev = (mean - tables.v[s]).abs();
        // the tables are a fixed point only up to the solver residual
        let scale = 1e-12 * (1.0 + tables.v[s].abs()) + tables.residual.min(1.0);
        let z = if dev <= scale { 0.0 } else if se > 0.0 { dev / se } else { f64::INFINITY };
        report.max_deviation = report.max_deviation.max(dev);
        report.max_standard_errors = report.max_standard_errors.max(z);
        report.states.push(StateFormCheck {
            summation: tables.v[s],
            estimate: mean,
            std_error: se,
            agreement,
            agreement_estimate: agree as f64 / n,
        });
    }
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct GreedyResult {
    pub policy: TabularPolicy,
    pub tables: BoundTables,
    pub iterations: usize,
    /// False when the outer loop hit its cap; `policy` is then the best
    /// policy seen, scored by the sum of its bound values.
    pub converged: bool,
}

const TIE_TOL: f64 = 1e-9;

/// Per-state argmax of `Q`, lowest index among entries within a relative
/// `1e-9` of the maximum.
pub fn greedy_actions(tables: &BoundTables) -> Vec<usize> {
    (0..tables.states)
        .map(|s| {
            let row = &tables.q[s * tables.actions..(s + 1) * tables.actions];
            let best = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let tol = TIE_TOL * (1.0 + best.abs());
            row.iter().position(|&q| q >= best - tol).unwrap_or(0)
        })
        .collect()
}

/// Alternates bound evaluation and greedy improvement starting from the
/// problem's policy, until the greedy policy stops changing.
pub fn robust_greedy_improve(problem: &BoundProblem, max_outer: usize) -> Result<GreedyResult> {
    let nx = problem.nominal.actions();
    let mut current = problem.clone();
    let mut best: Option<(f64, TabularPolicy, BoundTables)> = None;
    for it in 1..=max_outer.max(1) {
        let tables = solve_lower_bound(&current)?;
        let score: f64 = tables.v.iter().sum();
        let next = TabularPolicy::deterministic(nx, &greedy_actions(&tables));
        if next == current.policy {
            return Ok(GreedyResult {
                policy: next,
                tables,
                iterations: it,
                converged: true,
            });
        }
        let improves = match (&best, problem.direction) {
            (None, _) => true,
            (Some((b, _, _)), BoundDirection::Lower) => score > *b,
            (Some((b, _, _)), BoundDirection::Upper) => score < *b,
        };
        if improves {
            best = Some((score, current.policy.clone(), tables));
        }
        current = current.with_policy(next);
    }
    let (_, policy, tables) = best.expect("at least one outer iteration");
    Ok(GreedyResult {
        policy,
        tables,
        iterations: max_outer.max(1),
        converged: false,
    })
}

/// Draws a random row-stochastic policy with Dirichlet(1) rows.
pub fn random_policy(states: usize, actions: usize, rng: &mut impl Rng) -> TabularPolicy {
    let mut probs = Vec::with_capacity(states * actions);
    for _ in 0..states {
        let w: Vec<f64> = (0..actions)
            .map(|_| -(1.0 - rng.random::<f64>()).ln())
            .collect();
        let total: f64 = w.iter().sum();
        probs.extend(w.iter().map(|v| v / total));
    }
    TabularPolicy::new(states, actions, probs).expect("normalized rows")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nominal_2x2() -> NominalModel {
        NominalModel::from_tables(
            2,
            2,
            vec![0.25, 0.75, 1.0, 0.0],
            vec![0.5, 0.5, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0],
            vec![0.8, 0.3, 0.6, 0.0],
            vec![true, true, true, false],
            None,
        )
        .unwrap()
    }

    #[test]
    fn myopic_closed_form() {
        let nom = nominal_2x2();
        let p = BoundProblem::lower(nom.clone(), TabularPolicy::uniform(2, 2), 0.1, 0.0);
        let t = solve_lower_bound(&p).unwrap();
        assert_eq!(t.sweeps, 2);
        for s in 0..2 {
            for x in 0..2 {
                let m = nom.mu(s, x);
                let want = (1.0 - m) * 0.1 + m * nom.reward(s, x).unwrap_or(0.0);
                assert!((t.q(s, x) - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn undefined_nominal_with_mass_is_an_error() {
        let nom = NominalModel::from_tables(
            1,
            1,
            vec![1.0],
            vec![1.0],
            vec![0.5],
            vec![false],
            None,
        )
        .unwrap();
        let p = BoundProblem::lower(nom, TabularPolicy::uniform(1, 1), 0.0, 0.5);
        assert!(matches!(
            solve_lower_bound(&p),
            Err(Error::InconsistentNominal { state: 0, action: 0, .. })
        ));
    }

    #[test]
    fn sweep_cap_reports_residual() {
        let mut p = BoundProblem::lower(nominal_2x2(), TabularPolicy::uniform(2, 2), 0.0, 0.9);
        p.max_sweeps = 3;
        match solve_lower_bound(&p) {
            Err(Error::NonConvergence { sweeps: 3, residual }) => assert!(residual > 0.0),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn upper_bound_dominates_lower() {
        let nom = nominal_2x2();
        let pi = TabularPolicy::uniform(2, 2);
        let lo = solve_lower_bound(&BoundProblem::lower(nom.clone(), pi.clone(), 0.0, 0.8)).unwrap();
        let hi = solve_lower_bound(&BoundProblem::upper(nom, pi, 1.0, 0.8)).unwrap();
        for s in 0..2 {
            assert!(lo.v[s] <= hi.v[s]);
            assert!(hi.v[s] <= 1.0 / 0.2 + 1e-9);
        }
    }

    #[test]
    fn single_action_policy_is_returned_unchanged() {
        let nom = NominalModel::from_tables(
            2,
            1,
            vec![1.0, 1.0],
            vec![0.0, 1.0, 1.0, 0.0],
            vec![0.2, 0.4],
            vec![true, true],
            None,
        )
        .unwrap();
        let p = BoundProblem::lower(nom, TabularPolicy::uniform(2, 1), 0.0, 0.9);
        let r = robust_greedy_improve(&p, 10).unwrap();
        assert!(r.converged);
        assert_eq!(r.policy, TabularPolicy::uniform(2, 1));
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let t = BoundTables {
            states: 1,
            actions: 3,
            q: vec![1.0, 2.0, 2.0],
            v: vec![0.0],
            sweeps: 0,
            residual: 0.0,
            residual_history: vec![],
            v_step: None,
        };
        assert_eq!(greedy_actions(&t), vec![1]);
    }
}
