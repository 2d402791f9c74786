//! Adversarial dataset generation: one-step geometry attacks along the
//! normal of a linear boundary, and PGD against the network itself.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::boundary::{extract_vu, BoundaryModel};
use crate::data::{random_labels, read_afpd, write_afpd, AdvPayload, Dataset};
use crate::error::{ensure_dim, Error, Result};
use crate::linalg::norm;
use crate::net::{forward_batch, grad_input_batch, LossKind, NetworkConfig, NetworkParams};
use crate::rng::stream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Norm {
    L0,
    L2,
    Linf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Geometry,
    Pgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetRule {
    /// I.i.d. uniform ±1.
    RandomPm1,
    /// `−y`.
    Flip,
    /// Binary analogue of "next class": also `−y`.
    NextLabel,
    Explicit(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSpec {
    pub norm: Norm,
    pub mode: Mode,
    /// L2/L∞ budget; for geometry L0 it is the L2 length of the masked step.
    #[serde(default)]
    pub epsilon: Option<f64>,
    /// L0 pixel budget.
    #[serde(default)]
    pub d_delta: Option<usize>,
    /// PGD iterations. `None` means 100 for L2/L∞ and `d_delta` for L0.
    #[serde(default)]
    pub steps: Option<usize>,
    /// PGD step size. `None` means `ε/5` for L2/L∞ and 0.3 for L0.
    #[serde(default)]
    pub step_size: Option<f64>,
    pub target_rule: TargetRule,
    #[serde(default)]
    pub seed: u64,
    /// When set, PGD ascends `−ℓ(y^adv f)` instead of the raw score.
    #[serde(default)]
    pub loss_mode: Option<LossKind>,
}

impl AttackSpec {
    pub fn geometry_l2(epsilon: f64) -> AttackSpec {
        AttackSpec {
            norm: Norm::L2,
            mode: Mode::Geometry,
            epsilon: Some(epsilon),
            d_delta: None,
            steps: None,
            step_size: None,
            target_rule: TargetRule::RandomPm1,
            seed: 0,
            loss_mode: None,
        }
    }

    pub fn pgd(norm: Norm, epsilon: Option<f64>, d_delta: Option<usize>) -> AttackSpec {
        AttackSpec {
            norm,
            mode: Mode::Pgd,
            epsilon,
            d_delta,
            ..AttackSpec::geometry_l2(0.0)
        }
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if let Some(e) = self.epsilon {
            if !(e >= 0.0 && e.is_finite()) {
                return bad(format!("epsilon must be non-negative, got {e}"));
            }
        }
        match self.norm {
            Norm::L2 | Norm::Linf => {
                if self.epsilon.is_none() {
                    return bad("L2/L∞ attacks need epsilon".into());
                }
                if self.d_delta.is_some() {
                    return bad("d_delta only applies to L0 attacks".into());
                }
            }
            Norm::L0 => {
                let Some(k) = self.d_delta else {
                    return bad("L0 attacks need d_delta".into());
                };
                if k == 0 || k > d {
                    return bad(format!("d_delta must lie in 1..={d}, got {k}"));
                }
                if self.mode == Mode::Geometry && self.epsilon.is_none() {
                    return bad("geometry L0 needs epsilon for the step length".into());
                }
                if self.mode == Mode::Pgd && self.epsilon.is_some() {
                    return bad("PGD L0 is budgeted by d_delta only".into());
                }
            }
        }
        if let Some(s) = self.step_size {
            if !(s > 0.0) {
                return bad("step_size must be positive".into());
            }
        }
        Ok(())
    }

    fn eps(&self) -> f64 {
        self.epsilon.unwrap_or(0.0)
    }

    pub fn resolved_steps(&self) -> usize {
        self.steps.unwrap_or(match self.norm {
            Norm::L0 => self.d_delta.unwrap_or(0),
            _ => 100,
        })
    }

    pub fn resolved_step_size(&self) -> f64 {
        self.step_size.unwrap_or(match self.norm {
            Norm::L0 => 0.3,
            _ => self.eps() / 5.0,
        })
    }
}

/// Perturbed samples labeled with their attack targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvDataset {
    pub xadv: Array2<f64>,
    pub targets: Array1<f64>,
    pub eta: Array2<f64>,
    /// Labels of the base samples (random for noise bases).
    pub base_labels: Array1<f64>,
    /// Content id of the base dataset.
    pub provenance: u64,
    pub support: Option<Vec<Vec<usize>>>,
    pub spec: AttackSpec,
    /// PGD samples whose initial gradient vanished; they are left unperturbed.
    pub flagged: Vec<usize>,
}

impl AdvDataset {
    fn assemble(base: &Dataset, eta: Array2<f64>, targets: Array1<f64>, spec: &AttackSpec) -> AdvDataset {
        AdvDataset {
            xadv: &base.x + &eta,
            targets,
            eta,
            base_labels: base.y.clone(),
            provenance: base.content_id(),
            support: None,
            spec: spec.clone(),
            flagged: Vec::new(),
        }
    }

    pub fn n(&self) -> usize {
        self.xadv.nrows()
    }

    /// The training set a student sees: perturbed samples with target labels.
    pub fn as_training_set(&self, seed: u64) -> Dataset {
        Dataset {
            x: self.xadv.clone(),
            y: self.targets.clone(),
            source: crate::data::Source::File,
            seed,
            scale: 1.0,
        }
    }

    pub fn budget(&self) -> BudgetSummary {
        let mut s = BudgetSummary::default();
        for row in self.eta.axis_iter(Axis(0)) {
            s.max_l2 = s.max_l2.max(norm(row));
            s.max_linf = s.max_linf.max(row.iter().fold(0.0, |m: f64, v| m.max(v.abs())));
            s.max_l0 = s.max_l0.max(row.iter().filter(|v| **v != 0.0).count());
        }
        s.flagged = self.flagged.len();
        s
    }

    pub fn write(&self, base: &Dataset, path: &Path) -> Result<()> {
        let ds = Dataset {
            x: self.xadv.clone(),
            y: self.base_labels.clone(),
            source: base.source,
            seed: self.spec.seed,
            scale: base.scale,
        };
        let payload = AdvPayload {
            targets: self.targets.clone(),
            provenance: self.provenance,
            support: self.support.clone(),
        };
        write_afpd(&ds, Some(&payload), path)
    }
}

/// Reads an adversarial AFPD file: perturbed samples, base labels, payload.
pub fn read_adv_dataset(path: &Path) -> Result<(Dataset, AdvPayload)> {
    match read_afpd(path)? {
        (ds, Some(adv)) => Ok((ds, adv)),
        (_, None) => Err(Error::Format {
            path: path.to_path_buf(),
            msg: "expected an adversarial (kind 1) file".into(),
        }),
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BudgetSummary {
    pub max_l2: f64,
    pub max_linf: f64,
    pub max_l0: usize,
    pub flagged: usize,
}

pub fn target_labels(rule: &TargetRule, base_labels: ArrayView1<f64>, n: usize, seed: u64) -> Result<Array1<f64>> {
    match rule {
        TargetRule::RandomPm1 => Ok(random_labels(&mut stream(seed, "attack/targets"), n)),
        TargetRule::Flip | TargetRule::NextLabel => {
            ensure_dim("base labels", n, base_labels.len())?;
            Ok(base_labels.mapv(|v| -v))
        }
        TargetRule::Explicit(v) => {
            ensure_dim("explicit targets", n, v.len())?;
            if v.iter().any(|t| *t != 1.0 && *t != -1.0) {
                return Err(Error::InvalidArgument("explicit targets must be ±1".into()));
            }
            Ok(Array1::from_vec(v.clone()))
        }
    }
}

fn unit_direction(teacher: &BoundaryModel) -> Result<(Array1<f64>, f64)> {
    let q = teacher.direction();
    let qn = norm(q.view());
    if !(qn > 1e-12) {
        return Err(Error::Degenerate(format!("boundary normal has norm {qn:e}")));
    }
    Ok((q, qn))
}

fn outer(targets: &Array1<f64>, dir: &Array1<f64>) -> Array2<f64> {
    let n = targets.len();
    let d = dir.len();
    Array2::from_shape_fn((n, d), |(i, j)| targets[i] * dir[j])
}

/// `η_n = ε y^adv_n q/‖q‖`.
pub fn geometry_l2(base: &Dataset, teacher: &BoundaryModel, eps: f64, targets: &Array1<f64>) -> Result<AdvDataset> {
    ensure_dim("targets", base.n(), targets.len())?;
    ensure_dim("teacher dimension", base.d(), teacher.d())?;
    let (q, qn) = unit_direction(teacher)?;
    let dir = q.mapv(|v| eps * v / qn);
    let mut spec = AttackSpec::geometry_l2(eps);
    spec.target_rule = TargetRule::Explicit(targets.to_vec());
    Ok(AdvDataset::assemble(base, outer(targets, &dir), targets.clone(), &spec))
}

/// Indices of the `k` largest `|q_i|`, ties toward the smaller index,
/// returned in increasing index order.
pub fn top_k_support(q: ArrayView1<f64>, k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..q.len()).collect();
    idx.sort_by(|&a, &b| q[b].abs().total_cmp(&q[a].abs()).then(a.cmp(&b)));
    idx.truncate(k);
    idx.sort_unstable();
    idx
}

/// Geometry step restricted to the `d_delta` coordinates where `|q_i|` is
/// largest; the mask is shared by every sample.
pub fn geometry_l0(base: &Dataset, teacher: &BoundaryModel, d_delta: usize, eps: f64, targets: &Array1<f64>) -> Result<AdvDataset> {
    ensure_dim("targets", base.n(), targets.len())?;
    ensure_dim("teacher dimension", base.d(), teacher.d())?;
    if d_delta == 0 || d_delta > base.d() {
        return Err(Error::InvalidArgument(format!("d_delta must lie in 1..={}", base.d())));
    }
    let q = teacher.direction();
    let support = top_k_support(q.view(), d_delta);
    let mut masked = Array1::<f64>::zeros(q.len());
    for &i in &support {
        masked[i] = q[i];
    }
    let mn = norm(masked.view());
    if !(mn > 0.0) {
        return Err(Error::Degenerate("every boundary coefficient is zero".into()));
    }
    let dir = masked.mapv(|v| eps * v / mn);
    let spec = AttackSpec {
        norm: Norm::L0,
        d_delta: Some(d_delta),
        target_rule: TargetRule::Explicit(targets.to_vec()),
        ..AttackSpec::geometry_l2(eps)
    };
    let mut adv = AdvDataset::assemble(base, outer(targets, &dir), targets.clone(), &spec);
    adv.support = Some(vec![support; base.n()]);
    Ok(adv)
}

/// `η_n = ε y^adv_n sgn(q)`.
pub fn geometry_linf(base: &Dataset, teacher: &BoundaryModel, eps: f64, targets: &Array1<f64>) -> Result<AdvDataset> {
    ensure_dim("targets", base.n(), targets.len())?;
    ensure_dim("teacher dimension", base.d(), teacher.d())?;
    let (q, _) = unit_direction(teacher)?;
    let dir = q.mapv(|v| {
        if v > 0.0 {
            eps
        } else if v < 0.0 {
            -eps
        } else {
            0.0
        }
    });
    let spec = AttackSpec {
        norm: Norm::Linf,
        target_rule: TargetRule::Explicit(targets.to_vec()),
        ..AttackSpec::geometry_l2(eps)
    };
    Ok(AdvDataset::assemble(base, outer(targets, &dir), targets.clone(), &spec))
}

/// Dispatches a geometry attack by norm.
pub fn geometry(base: &Dataset, teacher: &BoundaryModel, spec: &AttackSpec, targets: &Array1<f64>) -> Result<AdvDataset> {
    spec.validate(base.d())?;
    let mut adv = match spec.norm {
        Norm::L2 => geometry_l2(base, teacher, spec.eps(), targets)?,
        Norm::Linf => geometry_linf(base, teacher, spec.eps(), targets)?,
        Norm::L0 => geometry_l0(base, teacher, spec.d_delta.unwrap_or(0), spec.eps(), targets)?,
    };
    adv.spec = spec.clone();
    Ok(adv)
}

/// Projected gradient ascent on `y^adv_n f(x)` (or on `−ℓ(y^adv_n f(x))`
/// with `loss_mode`), batched over samples. Each sample keeps its best
/// iterate over steps `1..=steps`.
pub fn pgd(net: &NetworkParams, cfg: &NetworkConfig, base: &Dataset, spec: &AttackSpec, targets: &Array1<f64>) -> Result<AdvDataset> {
    if spec.mode != Mode::Pgd {
        return Err(Error::InvalidArgument("pgd called with a geometry spec".into()));
    }
    spec.validate(base.d())?;
    ensure_dim("targets", base.n(), targets.len())?;
    ensure_dim("network input", cfg.d, base.d())?;
    let steps = spec.resolved_steps();
    let alpha = spec.resolved_step_size();
    let eps = spec.eps();
    let (n, d) = base.x.dim();

    let objective = |xs: &Array2<f64>| -> Result<Array1<f64>> {
        let margin = forward_batch(net, cfg, xs.view())? * targets;
        Ok(match spec.loss_mode {
            Some(kind) => margin.mapv(|m| -kind.value(m)),
            None => margin,
        })
    };
    let ascent = |xs: &Array2<f64>| -> Result<Array2<f64>> {
        let mut g = grad_input_batch(net, cfg, xs.view())?;
        let scale: Array1<f64> = match spec.loss_mode {
            Some(kind) => {
                let margin = forward_batch(net, cfg, xs.view())? * targets;
                Array1::from_iter(margin.iter().zip(targets.iter()).map(|(&m, &t)| -kind.derivative(m) * t))
            }
            None => targets.clone(),
        };
        for (mut row, s) in g.axis_iter_mut(Axis(0)).zip(scale.iter()) {
            row.mapv_inplace(|v| v * s);
        }
        Ok(g)
    };

    let mut x = base.x.clone();
    let mut best_x = base.x.clone();
    let mut best_obj = Array1::from_elem(n, f64::NEG_INFINITY);
    let mut flagged = Vec::new();
    let mut active = vec![true; n];
    let mut support: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut in_support = vec![vec![false; d]; if spec.norm == Norm::L0 { n } else { 0 }];

    for step in 0..steps {
        let g = ascent(&x)?;
        for i in 0..n {
            if !active[i] {
                continue;
            }
            let gi = g.row(i);
            let gnorm = norm(gi);
            if !(gnorm > 0.0) {
                if step == 0 {
                    flagged.push(i);
                    active[i] = false;
                }
                continue;
            }
            let mut xi = x.row_mut(i);
            let bi = base.x.row(i);
            match spec.norm {
                Norm::L2 => {
                    xi.scaled_add(alpha / gnorm, &gi);
                    let mut eta = &xi - &bi;
                    let en = norm(eta.view());
                    if en > eps {
                        eta.mapv_inplace(|v| v * eps / en);
                        xi.assign(&(&bi + &eta));
                    }
                }
                Norm::Linf => {
                    for j in 0..d {
                        let step = if gi[j] > 0.0 {
                            alpha
                        } else if gi[j] < 0.0 {
                            -alpha
                        } else {
                            0.0
                        };
                        xi[j] = bi[j] + (xi[j] + step - bi[j]).clamp(-eps, eps);
                    }
                }
                Norm::L0 => {
                    let budget = spec.d_delta.unwrap_or(d);
                    if support[i].len() < budget {
                        let mut pick: Option<usize> = None;
                        for j in 0..d {
                            if in_support[i][j] {
                                continue;
                            }
                            if pick.is_none_or(|p| gi[j].abs() > gi[p].abs()) {
                                pick = Some(j);
                            }
                        }
                        if let Some(j) = pick {
                            in_support[i][j] = true;
                            support[i].push(j);
                        }
                    }
                    for &j in &support[i] {
                        if gi[j] != 0.0 {
                            xi[j] += alpha * gi[j].signum();
                        }
                    }
                }
            }
        }
        let obj = objective(&x)?;
        for i in 0..n {
            if active[i] && obj[i] > best_obj[i] {
                best_obj[i] = obj[i];
                best_x.row_mut(i).assign(&x.row(i));
            }
        }
    }

    let eta = &best_x - &base.x;
    let mut adv = AdvDataset::assemble(base, eta, targets.clone(), spec);
    if spec.norm == Norm::L0 {
        for s in support.iter_mut() {
            s.sort_unstable();
        }
        adv.support = Some(support);
    }
    adv.flagged = flagged;
    Ok(adv)
}

/// Class-conditional input gradients of the two-row network: `s_+` is the
/// normalized `∇_x f` at a positive sample (`v` active, `u` inactive),
/// `s_−` the one at a negative sample. With rows averaged into `v` and `u`,
/// `s_+ ∝ m_+ v − γ m_− u` and `s_− ∝ γ m_+ v − m_− u`.
pub fn gradient_directions(net: &NetworkParams, cfg: &NetworkConfig, nat_ds: &Dataset) -> Result<(Array1<f64>, Array1<f64>)> {
    ensure_dim("dataset columns", cfg.d, nat_ds.d())?;
    let (v, u) = extract_vu(net, cfg);
    let (mp, mm, g) = (cfg.m_plus as f64, cfg.m_minus as f64, cfg.gamma);
    let s_plus = &v * mp - &u * (g * mm);
    let s_minus = &v * (g * mp) - &u * mm;
    let (np, nm) = (norm(s_plus.view()), norm(s_minus.view()));
    if !(np > 1e-12 && nm > 1e-12) {
        return Err(Error::Degenerate("class gradient direction vanished".into()));
    }
    Ok((s_plus / np, s_minus / nm))
}
