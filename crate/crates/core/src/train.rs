//! Gradient-based training under the MMD loss.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::correlators::ParamVector;
use crate::datasets::TargetStats;
use crate::error::{check_dim, Error, Result};
use crate::init::PatchDraw;
use crate::mmd::{loss, loss_and_gradient, LossEngine, MmdConfig};
use crate::rng;
use crate::topology::{GeneratorIndex, InteractionGraph};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    Gd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    /// Engine for the update gradient; fresh seeds every step.
    pub engine: LossEngine,
    /// Engine for logged losses; `None` logs the update engine's own estimate.
    pub eval_engine: Option<LossEngine>,
    /// Seed of the logged-loss estimator, identical at every logged step.
    pub eval_seed: u64,
    pub eval_every: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(engine: LossEngine, seed: u64) -> Self {
        Self {
            steps: 300,
            learning_rate: 0.05,
            optimizer: Optimizer::Gd,
            engine,
            eval_engine: None,
            eval_seed: 0,
            eval_every: 1,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("steps must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be at least 1".into()));
        }
        if let Optimizer::Adam { beta1, beta2, eps } = self.optimizer {
            if !((0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && eps > 0.0) {
                return Err(Error::Config(
                    "adam needs beta1, beta2 in [0, 1) and eps > 0".into(),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TraceRecord {
    pub step: usize,
    pub loss: f64,
    pub se: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainTrace {
    pub records: Vec<TraceRecord>,
    pub final_params: ParamVector,
}

impl TrainTrace {
    /// `step,loss,se,seconds`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,loss,se,seconds\n");
        for r in &self.records {
            s.push_str(&format!(
                "{},{:e},{:e},{:.6}\n",
                r.step, r.loss, r.se, r.seconds
            ));
        }
        s
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.records.last().map(|r| r.loss)
    }
}

/// Partial trace of an aborted run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainFailure {
    pub step: usize,
    pub reason: String,
    pub trace: TrainTrace,
}

/// Runs `tcfg.steps` updates from `init.sample`, logging every `eval_every`
/// steps and after the last update.
pub fn train(
    g: &InteractionGraph,
    idx: &GeneratorIndex,
    init: &PatchDraw,
    target: &TargetStats,
    cfg: &MmdConfig,
    tcfg: &TrainConfig,
) -> Result<TrainTrace> {
    tcfg.validate()?;
    idx.check(g)?;
    check_dim(idx.m(), init.sample.len())?;
    let m = idx.m();
    let start = Instant::now();
    let mut theta = init.sample.clone();
    let mut records = Vec::new();
    let mut adam_m = vec![0.0; m];
    let mut adam_v = vec![0.0; m];
    let fail = |step: usize, reason: String, records: &[TraceRecord], th: &ParamVector| {
        Error::Diverged(Box::new(TrainFailure {
            step,
            reason,
            trace: TrainTrace {
                records: records.to_vec(),
                final_params: th.clone(),
            },
        }))
    };
    let log =
        |step: usize, th: &ParamVector, fallback: Option<(f64, f64)>| -> Result<TraceRecord> {
            let (value, se) = match (&tcfg.eval_engine, fallback) {
                (Some(e), _) => {
                    let est = loss(g, idx, th, target, cfg, e, tcfg.eval_seed)?;
                    (est.value, est.std_error)
                }
                (None, Some(v)) => v,
                (None, None) => {
                    let s = rng::derive_seed(tcfg.seed, &[rng::TAG_EVAL, step as u64]);
                    let est = loss(g, idx, th, target, cfg, &tcfg.engine, s)?;
                    (est.value, est.std_error)
                }
            };
            Ok(TraceRecord {
                step,
                loss: value,
                se,
                seconds: start.elapsed().as_secs_f64(),
            })
        };
    for step in 0..tcfg.steps {
        let s = rng::derive_seed(tcfg.seed, &[rng::TAG_STEP, step as u64]);
        let (l, grad) = loss_and_gradient(g, idx, &theta, target, cfg, &tcfg.engine, s)?;
        if !l.value.is_finite() {
            return Err(fail(
                step,
                format!("non-finite loss {}", l.value),
                &records,
                &theta,
            ));
        }
        if let Some(i) = grad.values.iter().position(|v| !v.is_finite()) {
            return Err(fail(
                step,
                format!("non-finite gradient component {i}"),
                &records,
                &theta,
            ));
        }
        if step % tcfg.eval_every == 0 {
            let rec = log(step, &theta, Some((l.value, l.std_error)))?;
            if !rec.loss.is_finite() {
                return Err(fail(
                    step,
                    "non-finite logged loss".into(),
                    &records,
                    &theta,
                ));
            }
            records.push(rec);
        }
        let th = theta.as_mut_slice();
        match tcfg.optimizer {
            Optimizer::Gd => {
                for (t, g) in th.iter_mut().zip(&grad.values) {
                    *t -= tcfg.learning_rate * g;
                }
            }
            Optimizer::Adam { beta1, beta2, eps } => {
                let k = step as i32 + 1;
                let c1 = 1.0 - beta1.powi(k);
                let c2 = 1.0 - beta2.powi(k);
                for i in 0..m {
                    let gi = grad.values[i];
                    adam_m[i] = beta1 * adam_m[i] + (1.0 - beta1) * gi;
                    adam_v[i] = beta2 * adam_v[i] + (1.0 - beta2) * gi * gi;
                    th[i] -=
                        tcfg.learning_rate * (adam_m[i] / c1) / ((adam_v[i] / c2).sqrt() + eps);
                }
            }
        }
    }
    let rec = log(tcfg.steps, &theta, None)?;
    if !rec.loss.is_finite() {
        return Err(fail(
            tcfg.steps,
            "non-finite logged loss".into(),
            &records,
            &theta,
        ));
    }
    records.push(rec);
    Ok(TrainTrace {
        records,
        final_params: theta,
    })
}
