//! The `bounds` command: lower-bound tables of a tabular CMDP under a
//! policy, checked against the true policy value.

use std::path::Path;

use anyhow::{Context, Result};
use cfql_core::bounds::{solve_lower_bound, BoundProblem};
use cfql_core::cmdp::{TabularCmdp, TabularPolicy};
use cfql_core::envs::make_env;
use serde::{Deserialize, Serialize};

/// Slack of the validity check.
pub const VALIDITY_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Serialize)]
pub struct BoundsReport {
    pub states: usize,
    pub actions: usize,
    pub gamma: f64,
    pub reward_lower: f64,
    pub q_lower: Vec<Vec<f64>>,
    pub v_lower: Vec<f64>,
    pub v_true: Vec<f64>,
    pub sweeps: usize,
    pub residual_history: Vec<f64>,
    /// `V_lower <= V_pi + 1e-8` at every state.
    pub valid: bool,
    pub max_violation: f64,
}

/// A CMDP file path, or a registered tabular environment id.
pub fn load_cmdp(source: &str) -> Result<TabularCmdp> {
    let path = Path::new(source);
    if path.exists() {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {source}"))?;
        let m: TabularCmdp = serde_json::from_str(&text).with_context(|| format!("invalid CMDP file {source}"))?;
        m.validate()?;
        return Ok(m);
    }
    match make_env(source, 0) {
        Ok(env) => Ok(env.as_tabular()?.clone()),
        Err(_) => anyhow::bail!("CMDP file {source} not found"),
    }
}

/// On-disk policy: `probs` is the row-major `states x actions` table.
#[derive(Debug, Deserialize)]
struct PolicyFile {
    states: usize,
    actions: usize,
    probs: Vec<f64>,
}

/// `uniform`, or a policy JSON file.
pub fn load_policy(source: &str, m: &TabularCmdp) -> Result<TabularPolicy> {
    if source == "uniform" {
        return Ok(TabularPolicy::uniform(m.states, m.actions));
    }
    let text = std::fs::read_to_string(source).with_context(|| format!("cannot read policy file {source}"))?;
    let f: PolicyFile = serde_json::from_str(&text).with_context(|| format!("invalid policy file {source}"))?;
    let p = TabularPolicy::new(f.states, f.actions, f.probs)?;
    if p.states() != m.states || p.actions() != m.actions {
        anyhow::bail!(
            "policy is {}x{} but the CMDP has {} states and {} actions",
            p.states(),
            p.actions(),
            m.states,
            m.actions
        );
    }
    Ok(p)
}

pub fn compute(m: &TabularCmdp, policy: &TabularPolicy, gamma: Option<f64>, tol: f64) -> Result<BoundsReport> {
    let gamma = gamma.unwrap_or(m.gamma);
    let mut problem = BoundProblem::lower(m.analytic_nominal(), policy.clone(), m.reward_bounds.low, gamma);
    problem.tolerance = tol;
    let tables = solve_lower_bound(&problem)?;
    let truth = TabularCmdp { gamma, ..m.clone() };
    let v_true = truth.true_policy_value(policy)?;
    let max_violation = tables
        .v
        .iter()
        .zip(&v_true)
        .map(|(l, t)| l - t)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(BoundsReport {
        states: tables.states,
        actions: tables.actions,
        gamma,
        reward_lower: m.reward_bounds.low,
        q_lower: tables.q.chunks(tables.actions).map(<[f64]>::to_vec).collect(),
        v_lower: tables.v.clone(),
        v_true,
        sweeps: tables.sweeps,
        residual_history: tables.residual_history.clone(),
        valid: max_violation <= VALIDITY_TOL,
        max_violation,
    })
}
