//! Per-step losses and evaluation rows.

use std::io::Write;

use serde::Serialize;

use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepMetrics {
    pub step: usize,
    pub phase: &'static str,
    pub critic_losses: Vec<f64>,
    pub flow_loss: f64,
    pub discriminator_loss: Option<f64>,
    pub discriminator_accuracy: Option<f64>,
    /// Mean discriminator output on BC-flow actions (class 1).
    pub discriminator_mean_flow: Option<f64>,
    /// Mean discriminator output on policy actions (class 0).
    pub discriminator_mean_policy: Option<f64>,
    pub policy_loss: Option<f64>,
    pub distill_loss: Option<f64>,
    pub robust_q_mean: Option<f64>,
    pub factual_weight_mean: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EvalResult {
    pub episodes: usize,
    pub success_rate: f64,
    pub success_se: f64,
    pub mean_return: f64,
    pub return_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalRow {
    pub step: usize,
    pub phase: &'static str,
    pub result: EvalResult,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RunMetrics {
    pub steps: Vec<StepMetrics>,
    pub evals: Vec<EvalRow>,
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl RunMetrics {
    pub fn is_empty(&self) -> bool {
        self.steps.is_empty() && self.evals.is_empty()
    }

    pub fn extend(&mut self, other: RunMetrics) {
        self.steps.extend(other.steps);
        self.evals.extend(other.evals);
    }

    /// Every logged scalar is finite.
    pub fn all_finite(&self) -> bool {
        let step_ok = self.steps.iter().all(|s| {
            s.critic_losses.iter().all(|v| v.is_finite())
                && s.flow_loss.is_finite()
                && [
                    s.discriminator_loss,
                    s.discriminator_accuracy,
                    s.discriminator_mean_flow,
                    s.discriminator_mean_policy,
                    s.policy_loss,
                    s.distill_loss,
                    s.robust_q_mean,
                    s.factual_weight_mean,
                ]
                .iter()
                .flatten()
                .all(|v| v.is_finite())
        });
        let eval_ok = self.evals.iter().all(|e| {
            let r = &e.result;
            [r.success_rate, r.success_se, r.mean_return, r.return_se]
                .iter()
                .all(|v| v.is_finite())
        });
        step_ok && eval_ok
    }

    pub fn last_eval(&self) -> Option<&EvalRow> {
        self.evals.last()
    }

    /// One CSV with a `kind` column; training rows fill the loss columns,
    /// evaluation rows the success and return columns.
    pub fn write_csv<W: Write>(&self, w: W, ensemble_size: usize) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header: Vec<String> = ["kind", "phase", "step"].map(String::from).to_vec();
        header.extend((0..ensemble_size).map(|i| format!("critic_loss_{i}")));
        header.extend(
            [
                "flow_loss",
                "discriminator_loss",
                "discriminator_accuracy",
                "discriminator_mean_flow",
                "discriminator_mean_policy",
                "policy_loss",
                "distill_loss",
                "robust_q_mean",
                "factual_weight_mean",
                "episodes",
                "success_rate",
                "success_se",
                "mean_return",
                "return_se",
            ]
            .map(String::from),
        );
        out.write_record(&header)?;
        let width = header.len();
        for s in &self.steps {
            let mut row = vec!["train".to_string(), s.phase.to_string(), s.step.to_string()];
            row.extend((0..ensemble_size).map(|i| cell(s.critic_losses.get(i).copied())));
            row.push(s.flow_loss.to_string());
            row.extend(
                [
                    s.discriminator_loss,
                    s.discriminator_accuracy,
                    s.discriminator_mean_flow,
                    s.discriminator_mean_policy,
                    s.policy_loss,
                    s.distill_loss,
                    s.robust_q_mean,
                    s.factual_weight_mean,
                ]
                .map(cell),
            );
            row.resize(width, String::new());
            out.write_record(&row)?;
        }
        for e in &self.evals {
            let mut row = vec!["eval".to_string(), e.phase.to_string(), e.step.to_string()];
            row.resize(width - 5, String::new());
            let r = &e.result;
            row.push(r.episodes.to_string());
            row.extend(
                [r.success_rate, r.success_se, r.mean_return, r.return_se].map(|v| v.to_string()),
            );
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_rows_have_header_width() {
        let m = RunMetrics {
            steps: vec![StepMetrics {
                step: 0,
                phase: "offline",
                critic_losses: vec![1.0, 2.0],
                flow_loss: 0.5,
                discriminator_loss: None,
                discriminator_accuracy: None,
                discriminator_mean_flow: None,
                discriminator_mean_policy: None,
                policy_loss: Some(-1.0),
                distill_loss: Some(0.1),
                robust_q_mean: Some(1.0),
                factual_weight_mean: None,
            }],
            evals: vec![EvalRow {
                step: 0,
                phase: "offline",
                result: EvalResult {
                    episodes: 4,
                    success_rate: 0.5,
                    success_se: 0.25,
                    mean_return: 1.0,
                    return_se: 0.1,
                },
            }],
        };
        assert!(m.all_finite());
        let mut buf = Vec::new();
        m.write_csv(&mut buf, 2).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let widths: Vec<usize> = text.lines().map(|l| l.split(',').count()).collect();
        assert_eq!(widths.len(), 3);
        assert!(widths.iter().all(|&w| w == widths[0]));
    }
}
