//! Full-batch or minibatch heavy-ball gradient descent on the frozen-last-
//! layer network, with a plateau learning-rate scheduler and a stop rule
//! based on the direction of `W` rather than on the loss.

use std::time::Instant;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{ensure_dim, Error, Result};
use crate::net::{forward_batch, loss_and_grad, LossKind, NetworkConfig, NetworkParams};
use crate::rng::stream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Batch {
    Full,
    Minibatch { size: usize },
}

/// Reduce-on-plateau: multiply the rate by `factor` after `patience_epochs`
/// epochs without an improvement larger than `threshold`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Scheduler {
    pub factor: f64,
    pub patience_epochs: usize,
    pub threshold: f64,
    /// The rate never drops below `lr · min_lr_ratio`.
    pub min_lr_ratio: f64,
}

impl Default for Scheduler {
    fn default() -> Self {
        Scheduler {
            factor: 0.1,
            patience_epochs: 10,
            threshold: 1e-12,
            min_lr_ratio: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StopRule {
    /// Converged once successive normalized weights move less than this.
    pub direction_tol: f64,
    /// Number of consecutive checks that must stay under `direction_tol`.
    pub window: usize,
    pub require_positive_margins: bool,
    /// Epochs between direction checks.
    pub check_every: usize,
}

impl Default for StopRule {
    fn default() -> Self {
        StopRule {
            direction_tol: 1e-5,
            window: 5,
            require_positive_margins: true,
            check_every: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub loss_kind: LossKind,
    pub lr: f64,
    pub momentum: f64,
    pub max_epochs: usize,
    pub batch: Batch,
    pub scheduler: Scheduler,
    pub stop: StopRule,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss_kind: LossKind::Exponential,
            lr: 0.01,
            momentum: 0.9,
            max_epochs: 100_000,
            batch: Batch::Full,
            scheduler: Scheduler::default(),
            stop: StopRule::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0,1)");
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be positive");
        }
        if !(self.scheduler.factor > 0.0 && self.scheduler.factor < 1.0) {
            return bad("scheduler factor must lie in (0,1)");
        }
        if self.scheduler.patience_epochs == 0 {
            return bad("scheduler patience must be at least 1");
        }
        if self.stop.window == 0 || self.stop.check_every == 0 {
            return bad("stop window and check_every must be positive");
        }
        if let Batch::Minibatch { size: 0 } = self.batch {
            return bad("minibatch size must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StoppedBy {
    MaxEpochs,
    Converged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs_run: usize,
    pub final_loss: f64,
    /// `(epoch, loss)` pairs, thinned to at most [`MAX_TRACE`] points.
    pub loss_trace: Vec<(usize, f64)>,
    pub margin_min: f64,
    /// Largest distance between successive normalized weights over the last
    /// stop window.
    pub direction_drift: f64,
    pub stopped_by: StoppedBy,
    pub final_lr: f64,
    pub wall_seconds: f64,
}

pub const MAX_TRACE: usize = 10_000;

struct Trace {
    points: Vec<(usize, f64)>,
    stride: usize,
}

impl Trace {
    fn push(&mut self, epoch: usize, loss: f64) {
        if !epoch.is_multiple_of(self.stride) {
            return;
        }
        self.points.push((epoch, loss));
        if self.points.len() > MAX_TRACE {
            self.stride *= 2;
            let stride = self.stride;
            self.points.retain(|(e, _)| e % stride == 0);
        }
    }
}

/// `y_n · f(x_n)` for every sample.
pub fn margins(p: &NetworkParams, cfg: &NetworkConfig, ds: &Dataset) -> Result<Array1<f64>> {
    Ok(forward_batch(p, cfg, ds.x.view())? * &ds.y)
}

/// `‖W_a/‖W_a‖ − W_b/‖W_b‖‖_F`.
pub fn direction_distance(a: &NetworkParams, b: &NetworkParams) -> Result<f64> {
    if a.w.dim() != b.w.dim() {
        return Err(Error::DimensionMismatch {
            what: "weight matrices",
            expected: a.w.len(),
            got: b.w.len(),
        });
    }
    let (na, nb) = (a.frobenius(), b.frobenius());
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Degenerate("zero-norm weight matrix".into()));
    }
    Ok(a.w.iter().zip(b.w.iter()).map(|(x, y)| (x / na - y / nb).powi(2)).sum::<f64>().sqrt())
}

pub fn train(p0: &NetworkParams, cfg: &NetworkConfig, ds: &Dataset, tc: &TrainConfig) -> Result<(NetworkParams, TrainReport)> {
    train_on(p0, cfg, ds.x.view(), ds.y.view(), tc)
}

/// Trains on explicit sample rows and labels (used for adversarial sets,
/// whose labels are the attack targets).
pub fn train_on(
    p0: &NetworkParams,
    cfg: &NetworkConfig,
    xs: ArrayView2<f64>,
    ys: ArrayView1<f64>,
    tc: &TrainConfig,
) -> Result<(NetworkParams, TrainReport)> {
    tc.validate()?;
    cfg.validate()?;
    ensure_dim("labels", xs.nrows(), ys.len())?;
    if xs.nrows() == 0 {
        return Err(Error::InvalidArgument("cannot train on an empty dataset".into()));
    }
    let start = Instant::now();
    let n = xs.nrows();
    let mut p = p0.clone();
    let mut velocity = Array2::<f64>::zeros(p.w.dim());
    let mut lr = tc.lr;
    let min_lr = tc.lr * tc.scheduler.min_lr_ratio;
    let mut best = f64::INFINITY;
    let mut bad_epochs = 0usize;
    let mut trace = Trace { points: Vec::new(), stride: 1 };
    let mut order: Vec<usize> = (0..n).collect();
    let mut shuffle_rng = stream(tc.seed, "train/minibatch");

    let mut last_dir: Option<NetworkParams> = None;
    let mut recent_drifts: Vec<f64> = Vec::new();
    let mut calm_checks = 0usize;
    let mut stopped_by = StoppedBy::MaxEpochs;
    let mut epochs_run = 0;

    loop {
        let (epoch_loss, margins_now) = match tc.batch {
            Batch::Full => {
                let (l, g, m) = loss_and_grad(&p, cfg, xs, ys, tc.loss_kind)?;
                step(&mut p, &mut velocity, &g, lr, tc.momentum);
                (l, m)
            }
            Batch::Minibatch { size } => {
                order.shuffle(&mut shuffle_rng);
                let mut weighted = 0.0;
                for chunk in order.chunks(size) {
                    let bx = xs.select(Axis(0), chunk);
                    let by = ys.select(Axis(0), chunk);
                    let (l, g, _) = loss_and_grad(&p, cfg, bx.view(), by.view(), tc.loss_kind)?;
                    weighted += l * chunk.len() as f64;
                    step(&mut p, &mut velocity, &g, lr, tc.momentum);
                }
                let m = forward_batch(&p, cfg, xs)? * ys;
                (weighted / n as f64, m)
            }
        };
        if !epoch_loss.is_finite() || p.w.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteLoss { epoch: epochs_run });
        }
        trace.push(epochs_run, epoch_loss);
        epochs_run += 1;

        if epoch_loss < best - tc.scheduler.threshold {
            best = epoch_loss;
            bad_epochs = 0;
        } else {
            bad_epochs += 1;
            if bad_epochs >= tc.scheduler.patience_epochs {
                lr = (lr * tc.scheduler.factor).max(min_lr);
                bad_epochs = 0;
            }
        }

        if epochs_run % tc.stop.check_every == 0 && p.frobenius() > 0.0 {
            if let Some(prev) = &last_dir {
                let drift = direction_distance(prev, &p)?;
                recent_drifts.push(drift);
                if recent_drifts.len() > tc.stop.window {
                    recent_drifts.remove(0);
                }
                calm_checks = if drift < tc.stop.direction_tol { calm_checks + 1 } else { 0 };
            }
            last_dir = Some(p.clone());
            let margins_ok = !tc.stop.require_positive_margins || margins_now.iter().all(|&m| m > 0.0);
            if calm_checks >= tc.stop.window && margins_ok {
                stopped_by = StoppedBy::Converged;
                break;
            }
        }
        if epochs_run >= tc.max_epochs {
            break;
        }
    }

    let final_margins = forward_batch(&p, cfg, xs)? * ys;
    let final_loss = final_margins.iter().map(|&m| tc.loss_kind.value(m)).sum::<f64>() / n as f64;
    if trace.points.last().map(|(e, _)| *e) != Some(epochs_run) {
        trace.points.push((epochs_run, final_loss));
    }
    let report = TrainReport {
        epochs_run,
        final_loss,
        loss_trace: trace.points,
        margin_min: final_margins.iter().cloned().fold(f64::INFINITY, f64::min),
        direction_drift: recent_drifts.iter().cloned().fold(0.0, f64::max),
        stopped_by,
        final_lr: lr,
        wall_seconds: start.elapsed().as_secs_f64(),
    };
    Ok((p, report))
}

fn step(p: &mut NetworkParams, velocity: &mut Array2<f64>, grad: &Array2<f64>, lr: f64, momentum: f64) {
    velocity.zip_mut_with(grad, |v, &g| *v = momentum * *v + g);
    p.w.scaled_add(-lr, velocity);
}
