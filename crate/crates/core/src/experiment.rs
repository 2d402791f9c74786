//! End-to-end runs: train a teacher on natural data, perturb a base set
//! toward attack targets, train a fresh student on the perturbed set, and
//! compare the student with the teacher's boundary.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attack::{geometry, pgd, target_labels, AdvDataset, AttackSpec, BudgetSummary, Mode, Norm, TargetRule};
use crate::boundary::{
    decision_map, extract_vu, sign_agreement, solve_lambda, vu_from_lambda, Agreement, BoundaryModel, DecisionMap, Net, Scorer,
};
use crate::data::{gen_dataset, gen_orthogonal_dataset, ortho_stats, Dataset, Source};
use crate::error::{Error, Result};
use crate::linalg::norm;
use crate::net::{forward_batch, init_params, NetworkConfig, NetworkParams};
use crate::rng::{derive_seed, stream};
use crate::theory::{check_lambda_bounds, check_natural_condition, check_theorem1, check_uniform_condition, ConditionReport};
use crate::train::{train, train_on, TrainConfig, TrainReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// Perturb the natural training samples themselves.
    Natural,
    /// Perturb fresh noise samples labeled with random targets.
    Noise,
    /// Samples split into robust and non-robust parts; the attack follows
    /// the non-robust boundary and flips every label.
    Flipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetParams {
    pub source: Source,
    pub d: usize,
    pub n: usize,
    /// Number of perturbed samples; ignored (forced to `n`) for the natural
    /// and flipped scenarios.
    pub n_adv: usize,
    #[serde(default = "one")]
    pub scale: f64,
    #[serde(default = "uniform_source")]
    pub noise_source: Source,
}

fn one() -> f64 {
    1.0
}

fn uniform_source() -> Source {
    Source::Uniform
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccuracyTarget {
    NaturalTrain,
    /// Also score a fresh draw from the natural generator, labeled by the
    /// standard boundary.
    HeldOut,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeKind {
    /// Square grid in the plane of the teacher's `v` and `u`.
    VuGrid,
    /// Gaussian directions rescaled to norm `√d`.
    Gaussian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub probes: ProbeKind,
    pub n_probes: usize,
    pub band: f64,
    pub accuracy_targets: AccuracyTarget,
    pub maps: bool,
    pub map_resolution: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            probes: ProbeKind::Gaussian,
            n_probes: 10_000,
            band: 1e-3,
            accuracy_targets: AccuracyTarget::NaturalTrain,
            maps: false,
            map_resolution: 101,
        }
    }
}

/// `ε = value_at_reference · √(d / reference_d)`, re-resolved whenever `d`
/// changes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpsilonScaling {
    pub value_at_reference: f64,
    pub reference_d: usize,
}

impl EpsilonScaling {
    pub fn at(&self, d: usize) -> f64 {
        self.value_at_reference * (d as f64 / self.reference_d as f64).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlippedConfig {
    /// Norm of each robust part; `None` means `√(d/2)`.
    #[serde(default)]
    pub robust_norm: Option<f64>,
    /// Norm of each non-robust part; `None` means `√(d/2)`.
    #[serde(default)]
    pub non_robust_norm: Option<f64>,
}

/// Everything a run needs. Stage seeds (data, noise, initializations,
/// targets, probes, minibatch order) are all derived from `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub scenario: Scenario,
    pub dataset: DatasetParams,
    pub network: NetworkConfig,
    pub teacher: TrainConfig,
    pub student: TrainConfig,
    pub attack: AttackSpec,
    #[serde(default)]
    pub epsilon_scaling: Option<EpsilonScaling>,
    #[serde(default)]
    pub flipped: Option<FlippedConfig>,
    #[serde(default)]
    pub eval: EvalConfig,
    pub seed: u64,
}

impl ExperimentConfig {
    /// Desk-scale noise run: d = 4096, N = 500, N^adv = 4096, m = 64,
    /// PGD-L2 with ε = 0.78·√(d/10,000) and random targets.
    pub fn desk_noise() -> ExperimentConfig {
        let d = 4096;
        let scaling = EpsilonScaling { value_at_reference: 0.78, reference_d: 10_000 };
        let mut attack = AttackSpec::pgd(Norm::L2, Some(scaling.at(d)), None);
        attack.target_rule = TargetRule::RandomPm1;
        ExperimentConfig {
            name: "desk_noise".into(),
            scenario: Scenario::Noise,
            dataset: DatasetParams {
                source: Source::Uniform,
                d,
                n: 500,
                n_adv: 4096,
                scale: 1.0,
                noise_source: Source::Uniform,
            },
            network: NetworkConfig::balanced(d, 64, 0.5).expect("valid preset").with_init_scale(0.01),
            teacher: TrainConfig {
                max_epochs: 1000,
                ..TrainConfig::default()
            },
            student: TrainConfig {
                max_epochs: 300,
                ..TrainConfig::default()
            },
            attack,
            epsilon_scaling: Some(scaling),
            flipped: None,
            eval: EvalConfig::default(),
            seed: 0,
        }
    }

    /// Full-size noise run: d = N^adv = 10,000, N = 1000, ε = 0.78, m = 128,
    /// 100,000 epochs per network.
    pub fn paper_noise() -> ExperimentConfig {
        let d = 10_000;
        let mut cfg = ExperimentConfig::desk_noise();
        cfg.name = "paper_noise".into();
        cfg.dataset.d = d;
        cfg.dataset.n = 1000;
        cfg.dataset.n_adv = 10_000;
        cfg.network = NetworkConfig::balanced(d, 128, 0.5).expect("valid preset").with_init_scale(0.01);
        cfg.teacher.max_epochs = 100_000;
        cfg.student.max_epochs = 100_000;
        cfg.attack.epsilon = Some(0.78);
        cfg
    }

    /// Desk-scale natural run: perturb the natural samples toward flipped labels.
    pub fn desk_natural() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::desk_noise();
        cfg.name = "desk_natural".into();
        cfg.scenario = Scenario::Natural;
        cfg.dataset.n_adv = cfg.dataset.n;
        cfg.attack.target_rule = TargetRule::Flip;
        cfg
    }

    /// Robust/non-robust split at d = 4096, N = 128, geometry-L2 with ε = √(d/N).
    pub fn desk_flipped() -> ExperimentConfig {
        let (d, n) = (4096, 128);
        let mut cfg = ExperimentConfig::desk_noise();
        cfg.name = "desk_flipped".into();
        cfg.scenario = Scenario::Flipped;
        cfg.dataset.source = Source::Orthogonalized;
        cfg.dataset.n = n;
        cfg.dataset.n_adv = n;
        cfg.attack = AttackSpec::geometry_l2((d as f64 / n as f64).sqrt());
        cfg.attack.target_rule = TargetRule::Flip;
        cfg.epsilon_scaling = None;
        cfg.flipped = Some(FlippedConfig { robust_norm: None, non_robust_norm: None });
        cfg.eval.n_probes = 2000;
        cfg
    }

    pub fn preset(name: &str) -> Option<ExperimentConfig> {
        match name {
            "desk_noise" => Some(ExperimentConfig::desk_noise()),
            "paper_noise" => Some(ExperimentConfig::paper_noise()),
            "desk_natural" => Some(ExperimentConfig::desk_natural()),
            "desk_flipped" => Some(ExperimentConfig::desk_flipped()),
            _ => None,
        }
    }

    pub const PRESETS: [&'static str; 4] = ["desk_noise", "paper_noise", "desk_natural", "desk_flipped"];

    /// Copies `d` into the network and re-resolves ε when it scales with `d`.
    pub fn set_d(&mut self, d: usize) {
        self.dataset.d = d;
        self.network.d = d;
        if let Some(s) = self.epsilon_scaling {
            self.attack.epsilon = Some(s.at(d));
        }
    }

    /// N^adv actually used by the scenario.
    pub fn effective_n_adv(&self) -> usize {
        match self.scenario {
            Scenario::Noise => self.dataset.n_adv,
            Scenario::Natural | Scenario::Flipped => self.dataset.n,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        self.network.validate()?;
        self.teacher.validate()?;
        self.student.validate()?;
        self.attack.validate(self.dataset.d)?;
        let ds = &self.dataset;
        if ds.d == 0 || ds.n == 0 {
            return bad("dataset needs d ≥ 1 and n ≥ 1".into());
        }
        if self.network.d != ds.d {
            return bad(format!("network.d = {} but dataset.d = {}", self.network.d, ds.d));
        }
        if self.scenario == Scenario::Noise && ds.n_adv == 0 {
            return bad("noise scenario needs n_adv ≥ 1".into());
        }
        if self.scenario == Scenario::Natural && ds.n_adv != ds.n {
            return bad(format!("natural scenario perturbs every sample: n_adv must equal n ({} ≠ {})", ds.n_adv, ds.n));
        }
        if ds.source == Source::File || ds.noise_source == Source::File {
            return bad("experiments generate their own data; source `file` is not allowed".into());
        }
        if self.scenario == Scenario::Flipped {
            if self.attack.mode != Mode::Geometry || self.attack.norm != Norm::L2 {
                return bad("the flipped scenario attacks with geometry-L2".into());
            }
            if 2 * ds.n > ds.d {
                return bad(format!("flipped scenario needs 2N ≤ d orthogonal parts (N = {}, d = {})", ds.n, ds.d));
            }
        }
        if self.eval.n_probes == 0 || !(self.eval.band >= 0.0) {
            return bad("eval needs n_probes ≥ 1 and band ≥ 0".into());
        }
        Ok(())
    }

    fn stage_seed(&self, tag: &str) -> u64 {
        derive_seed(self.seed, tag)
    }
}

/// The trained teacher and the standard boundary derived from it.
#[derive(Debug, Clone)]
pub struct TeacherStage {
    pub natural: Dataset,
    pub params: NetworkParams,
    pub report: TrainReport,
    pub boundary: BoundaryModel,
    /// Why the exact boundary was not used, when it was not.
    pub boundary_note: Option<String>,
    pub v: Array1<f64>,
    pub u: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedMap {
    pub name: String,
    pub map: DecisionMap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub teacher_report: Option<TrainReport>,
    pub student_report: TrainReport,
    pub boundary_mode: String,
    pub boundary_note: Option<String>,
    pub condition_reports: Vec<ConditionReport>,
    pub agreement_vs_standard: Agreement,
    pub accuracy_on_natural: f64,
    pub accuracy_held_out: Option<f64>,
    pub budget: BudgetSummary,
    pub decision_maps: Option<Vec<NamedMap>>,
    pub wall_time: f64,
}

impl ExperimentResult {
    /// The result with every timing field zeroed, for reproducibility checks.
    pub fn without_timing(&self) -> ExperimentResult {
        let mut r = self.clone();
        r.wall_time = 0.0;
        r.student_report.wall_seconds = 0.0;
        if let Some(t) = r.teacher_report.as_mut() {
            t.wall_seconds = 0.0;
        }
        r
    }

    pub fn all_conditions_pass(&self) -> bool {
        self.condition_reports.iter().all(|c| c.pass)
    }
}

/// Fraction of samples with `sgn f(x_n) = y_n`; a zero score counts as wrong.
pub fn eval_accuracy(p: &NetworkParams, cfg: &NetworkConfig, ds: &Dataset) -> Result<f64> {
    let f = forward_batch(p, cfg, ds.x.view())?;
    Ok(sign_accuracy(&f, &ds.y))
}

fn sign_accuracy(f: &Array1<f64>, y: &Array1<f64>) -> f64 {
    let hits = f.iter().zip(y.iter()).filter(|(s, t)| **s * **t > 0.0).count();
    hits as f64 / y.len() as f64
}

pub fn train_teacher(cfg: &ExperimentConfig) -> Result<TeacherStage> {
    cfg.validate()?;
    let ds = &cfg.dataset;
    let natural = gen_dataset(ds.source, ds.d, ds.n, cfg.stage_seed("exp/natural"), ds.scale).map_err(|e| e.at_stage("data"))?;
    let p0 = init_params(&cfg.network, cfg.stage_seed("exp/teacher_init"));
    let tc = TrainConfig {
        seed: cfg.stage_seed("exp/teacher_train"),
        ..cfg.teacher.clone()
    };
    let (params, report) = train(&p0, &cfg.network, &natural, &tc).map_err(|e| e.at_stage("teacher"))?;
    let net = &cfg.network;
    let (boundary, boundary_note, v, u) = match solve_lambda(&natural, net.gamma, net.m_plus, net.m_minus) {
        Ok(lambda) => {
            let (v, u) = vu_from_lambda(&natural, lambda.view(), net).map_err(|e| e.at_stage("boundary"))?;
            let b = BoundaryModel::from_lambda(natural.clone(), lambda).map_err(|e| e.at_stage("boundary"))?;
            (b, None, v, u)
        }
        Err(e) => {
            let (v, u) = extract_vu(&params, net);
            let note = format!("exact λ unavailable ({e}); using the teacher's averaged v − u");
            (BoundaryModel::EmpiricalVu { v: v.clone(), u: u.clone() }, Some(note), v, u)
        }
    };
    Ok(TeacherStage {
        natural,
        params,
        report,
        boundary,
        boundary_note,
        v,
        u,
    })
}

pub fn run_pipeline(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    if cfg.scenario == Scenario::Flipped {
        return flipped_experiment(cfg);
    }
    let teacher = train_teacher(cfg)?;
    run_with_teacher(cfg, &teacher)
}

/// Runs the attack, student and evaluation stages against a teacher that
/// was trained for the same dataset parameters and seed.
pub fn run_with_teacher(cfg: &ExperimentConfig, teacher: &TeacherStage) -> Result<ExperimentResult> {
    let start = Instant::now();
    cfg.validate()?;
    if cfg.scenario == Scenario::Flipped {
        return Err(Error::InvalidArgument("the flipped scenario has no network teacher".into()));
    }
    let base = match cfg.scenario {
        Scenario::Noise => {
            let ds = &cfg.dataset;
            gen_dataset(ds.noise_source, ds.d, ds.n_adv, cfg.stage_seed("exp/noise"), ds.scale).map_err(|e| e.at_stage("data"))?
        }
        _ => teacher.natural.clone(),
    };
    let adv = attack_stage(cfg, teacher, &base).map_err(|e| e.at_stage("attack"))?;

    let (student, student_report) = train_student(cfg, &adv).map_err(|e| e.at_stage("student"))?;
    let student_net = Net {
        params: &student,
        cfg: &cfg.network,
    };
    let probes = make_probes(cfg, &teacher.v, &teacher.u).map_err(|e| e.at_stage("eval"))?;
    let agreement = sign_agreement(&student_net, &teacher.boundary, probes.view(), cfg.eval.band).map_err(|e| e.at_stage("eval"))?;
    let accuracy = eval_accuracy(&student, &cfg.network, &teacher.natural).map_err(|e| e.at_stage("eval"))?;
    let held_out = match cfg.eval.accuracy_targets {
        AccuracyTarget::NaturalTrain => None,
        AccuracyTarget::HeldOut => Some(held_out_accuracy(cfg, &teacher.boundary, &student_net).map_err(|e| e.at_stage("eval"))?),
    };
    let conditions = condition_reports(cfg, teacher, &base).map_err(|e| e.at_stage("conditions"))?;
    let maps = if cfg.eval.maps {
        let half = (cfg.dataset.d as f64).sqrt();
        let res = cfg.eval.map_resolution;
        let (v, u) = (teacher.v.view(), teacher.u.view());
        let build = |name: &str, f: &dyn Scorer, sets: &[&Dataset]| -> Result<NamedMap> {
            Ok(NamedMap {
                name: name.into(),
                map: decision_map(f, v, u, half, res, sets)?,
            })
        };
        let teacher_net = Net {
            params: &teacher.params,
            cfg: &cfg.network,
        };
        let adv_set = adv.as_training_set(0);
        Some(
            vec![
                build("standard_boundary", &teacher.boundary, &[&teacher.natural])?,
                build("teacher", &teacher_net, &[&teacher.natural])?,
                build("student", &student_net, &[&adv_set])?,
            ],
        )
    } else {
        None
    };
    Ok(ExperimentResult {
        config: cfg.clone(),
        teacher_report: Some(teacher.report.clone()),
        student_report,
        boundary_mode: teacher.boundary.mode_name().into(),
        boundary_note: teacher.boundary_note.clone(),
        condition_reports: conditions,
        agreement_vs_standard: agreement,
        accuracy_on_natural: accuracy,
        accuracy_held_out: held_out,
        budget: adv.budget(),
        decision_maps: maps,
        wall_time: start.elapsed().as_secs_f64() + teacher.report.wall_seconds,
    })
}

fn attack_stage(cfg: &ExperimentConfig, teacher: &TeacherStage, base: &Dataset) -> Result<AdvDataset> {
    let mut spec = cfg.attack.clone();
    spec.seed = cfg.stage_seed("exp/attack");
    let targets = target_labels(&spec.target_rule, base.y.view(), base.n(), spec.seed)?;
    match spec.mode {
        Mode::Geometry => geometry(base, &teacher.boundary, &spec, &targets),
        Mode::Pgd => pgd(&teacher.params, &cfg.network, base, &spec, &targets),
    }
}

fn train_student(cfg: &ExperimentConfig, adv: &AdvDataset) -> Result<(NetworkParams, TrainReport)> {
    let p0 = init_params(&cfg.network, cfg.stage_seed("exp/student_init"));
    let tc = TrainConfig {
        seed: cfg.stage_seed("exp/student_train"),
        ..cfg.student.clone()
    };
    train_on(&p0, &cfg.network, adv.xadv.view(), adv.targets.view(), &tc)
}

fn gaussian_probes(n: usize, d: usize, seed: u64) -> Array2<f64> {
    let mut rng = stream(seed, "exp/probes");
    let mut z = Array2::from_shape_simple_fn((n, d), || {
        let v: f64 = StandardNormal.sample(&mut rng);
        v
    });
    let target = (d as f64).sqrt();
    for mut row in z.axis_iter_mut(Axis(0)) {
        let r = norm(row.view());
        row.mapv_inplace(|v| v * target / r);
    }
    z
}

fn make_probes(cfg: &ExperimentConfig, v: &Array1<f64>, u: &Array1<f64>) -> Result<Array2<f64>> {
    let d = cfg.dataset.d;
    match cfg.eval.probes {
        ProbeKind::Gaussian => Ok(gaussian_probes(cfg.eval.n_probes, d, cfg.stage_seed("exp/probes"))),
        ProbeKind::VuGrid => {
            let res = ((cfg.eval.n_probes as f64).sqrt().round() as usize).max(2);
            let (nv, nu) = (norm(v.view()), norm(u.view()));
            if nv == 0.0 || nu == 0.0 {
                return Err(Error::Degenerate("teacher v or u is zero".into()));
            }
            let half = (d as f64).sqrt();
            let mut z = Array2::zeros((res * res, d));
            for i in 0..res {
                let beta = -half + 2.0 * half * i as f64 / (res - 1) as f64;
                for j in 0..res {
                    let alpha = -half + 2.0 * half * j as f64 / (res - 1) as f64;
                    let mut row = z.row_mut(i * res + j);
                    row.scaled_add(alpha / nv, v);
                    row.scaled_add(beta / nu, u);
                }
            }
            Ok(z)
        }
    }
}

fn held_out_accuracy(cfg: &ExperimentConfig, standard: &BoundaryModel, student: &Net<'_>) -> Result<f64> {
    let ds = &cfg.dataset;
    let fresh = gen_dataset(ds.source, ds.d, ds.n, cfg.stage_seed("exp/held_out"), ds.scale)?;
    let labels = standard.fbdy_batch(fresh.x.view())?;
    let keep: Vec<usize> = (0..fresh.n()).filter(|&i| labels[i] != 0.0).collect();
    if keep.is_empty() {
        return Err(Error::Degenerate("standard boundary scores every held-out sample as zero".into()));
    }
    let x = fresh.x.select(Axis(0), &keep);
    let y = Array1::from_iter(keep.iter().map(|&i| labels[i].signum()));
    let f = student.scores(x.view())?;
    Ok(sign_accuracy(&f, &y))
}

fn condition_reports(cfg: &ExperimentConfig, teacher: &TeacherStage, base: &Dataset) -> Result<Vec<ConditionReport>> {
    let stats = ortho_stats(&teacher.natural);
    let gamma = cfg.network.gamma;
    let mut out = vec![check_theorem1(&stats, teacher.natural.n(), gamma)];
    if let BoundaryModel::LambdaExact { lambda, .. } = &teacher.boundary {
        out.push(check_lambda_bounds(lambda.view(), &stats, gamma));
    }
    let l2_geometry = cfg.attack.norm == Norm::L2;
    let eps = cfg.attack.epsilon.unwrap_or(0.0);
    match cfg.scenario {
        Scenario::Natural if l2_geometry => out.push(check_natural_condition(&stats, teacher.natural.n(), gamma, eps)),
        Scenario::Noise if l2_geometry && base.source == Source::Uniform && base.scale == 1.0 => {
            let q = teacher.boundary.direction();
            let qn = norm(q.view());
            if qn > 0.0 {
                out.push(check_uniform_condition(base, (q / qn).view(), base.n(), eps, gamma)?);
            }
        }
        _ => {}
    }
    Ok(out)
}

/// Robust and non-robust parts drawn as `2N` mutually orthogonal vectors.
#[derive(Debug, Clone)]
pub struct FlippedData {
    pub full: Dataset,
    pub non_robust: Dataset,
    pub robust: Array2<f64>,
}

pub fn flipped_data(cfg: &ExperimentConfig) -> Result<FlippedData> {
    let (d, n) = (cfg.dataset.d, cfg.dataset.n);
    let fc = cfg.flipped.clone().unwrap_or(FlippedConfig {
        robust_norm: None,
        non_robust_norm: None,
    });
    let half = (d as f64 / 2.0).sqrt();
    let parts = gen_orthogonal_dataset(d, 2 * n, cfg.stage_seed("exp/flipped_parts"), 1.0)?;
    let robust = parts.x.slice(ndarray::s![..n, ..]).mapv(|v| v * fc.robust_norm.unwrap_or(half));
    let non = parts.x.slice(ndarray::s![n.., ..]).mapv(|v| v * fc.non_robust_norm.unwrap_or(half));
    let y = parts.y.slice(ndarray::s![..n]).to_owned();
    let seed = cfg.stage_seed("exp/flipped_parts");
    Ok(FlippedData {
        full: Dataset::from_parts(&robust + &non, y.clone(), Source::Orthogonalized, seed, 1.0)?,
        non_robust: Dataset::from_parts(non, y, Source::Orthogonalized, seed, 1.0)?,
        robust,
    })
}

/// Weak-correlation probes `z = Σ_n c_n x^non_n / √N` with i.i.d. signs `c_n`.
pub fn weak_probes(non_robust: &Dataset, count: usize, seed: u64) -> Array2<f64> {
    let n = non_robust.n();
    let mut rng = stream(seed, "exp/weak_probes");
    let c = Array2::from_shape_simple_fn((count, n), || if rng.random::<bool>() { 1.0 } else { -1.0 });
    c.dot(&non_robust.x) / (n as f64).sqrt()
}

/// Builds the boundary from the non-robust parts, perturbs the full samples
/// along it toward `−y`, retrains a student, and measures agreement with the
/// non-robust boundary on weak-correlation probes.
pub fn flipped_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    let start = Instant::now();
    cfg.validate()?;
    if cfg.scenario != Scenario::Flipped {
        return Err(Error::InvalidArgument("flipped_experiment needs the flipped scenario".into()));
    }
    let data = flipped_data(cfg).map_err(|e| e.at_stage("data"))?;
    let net = &cfg.network;
    let boundary =
        BoundaryModel::lambda_exact(&data.non_robust, net.gamma, net.m_plus, net.m_minus).map_err(|e| e.at_stage("boundary"))?;
    let mut spec = cfg.attack.clone();
    spec.target_rule = TargetRule::Flip;
    spec.seed = cfg.stage_seed("exp/attack");
    let targets = data.full.y.mapv(|v| -v);
    let adv = geometry(&data.full, &boundary, &spec, &targets).map_err(|e| e.at_stage("attack"))?;
    let (student, student_report) = train_student(cfg, &adv).map_err(|e| e.at_stage("student"))?;
    let student_net = Net { params: &student, cfg: net };
    let probes = weak_probes(&data.non_robust, cfg.eval.n_probes, cfg.stage_seed("exp/probes"));
    let agreement = sign_agreement(&student_net, &boundary, probes.view(), cfg.eval.band).map_err(|e| e.at_stage("eval"))?;
    let accuracy = eval_accuracy(&student, net, &data.full).map_err(|e| e.at_stage("eval"))?;
    let mut conditions = Vec::new();
    if let BoundaryModel::LambdaExact { lambda, .. } = &boundary {
        let stats = ortho_stats(&data.non_robust);
        conditions.push(check_theorem1(&stats, data.non_robust.n(), net.gamma));
        conditions.push(check_lambda_bounds(lambda.view(), &stats, net.gamma));
    }
    Ok(ExperimentResult {
        config: cfg.clone(),
        teacher_report: None,
        student_report,
        boundary_mode: boundary.mode_name().into(),
        boundary_note: Some("boundary built from the non-robust parts".into()),
        condition_reports: conditions,
        agreement_vs_standard: agreement,
        accuracy_on_natural: accuracy,
        accuracy_held_out: None,
        budget: adv.budget(),
        decision_maps: None,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    D,
    NAdv,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::D => "d",
            SweepAxis::NAdv => "n_adv",
        }
    }
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<SweepAxis> {
        match s {
            "d" => Ok(SweepAxis::D),
            "n_adv" | "nadv" => Ok(SweepAxis::NAdv),
            other => Err(Error::InvalidArgument(format!("unknown sweep axis `{other}` (expected d or n_adv)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub axis: SweepAxis,
    pub value: usize,
    pub seed: u64,
    pub outcome: std::result::Result<ExperimentResult, String>,
}

/// The configuration of one sweep cell.
pub fn cell_config(base: &ExperimentConfig, axis: SweepAxis, value: usize, seed: u64) -> ExperimentConfig {
    let mut cfg = base.clone();
    cfg.seed = seed;
    match axis {
        SweepAxis::D => cfg.set_d(value),
        SweepAxis::NAdv => cfg.dataset.n_adv = value,
    }
    cfg.name = format!("{}_{}{}_s{}", base.name, axis.name(), value, seed);
    cfg
}

/// One run per `(seed, value)`. Cells sharing a teacher (same seed and `d`)
/// train it once; a failing cell records its error and the sweep continues.
pub fn sweep(base: &ExperimentConfig, axis: SweepAxis, values: &[usize], seeds: &[u64]) -> Result<Vec<SweepCell>> {
    if values.is_empty() || seeds.is_empty() {
        return Err(Error::InvalidArgument("sweep needs at least one value and one seed".into()));
    }
    if values.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidArgument("sweep values must be sorted".into()));
    }
    let mut groups: BTreeMap<(u64, usize), Vec<usize>> = BTreeMap::new();
    for &seed in seeds {
        for &v in values {
            let d = if axis == SweepAxis::D { v } else { base.dataset.d };
            groups.entry((seed, d)).or_default().push(v);
        }
    }
    let groups: Vec<((u64, usize), Vec<usize>)> = groups.into_iter().collect();
    let cells: Vec<Vec<SweepCell>> = groups
        .par_iter()
        .map(|((seed, _), vals)| {
            let cfgs: Vec<ExperimentConfig> = vals.iter().map(|&v| cell_config(base, axis, v, *seed)).collect();
            let teacher = if base.scenario == Scenario::Flipped {
                None
            } else {
                Some(train_teacher(&cfgs[0]))
            };
            vals.iter()
                .zip(&cfgs)
                .map(|(&v, cfg)| {
                    let outcome = match &teacher {
                        None => flipped_experiment(cfg),
                        Some(Ok(t)) => run_with_teacher(cfg, t),
                        Some(Err(e)) => Err(Error::InvalidArgument(e.to_string())),
                    };
                    SweepCell {
                        axis,
                        value: v,
                        seed: *seed,
                        outcome: outcome.map_err(|e| e.to_string()),
                    }
                })
                .collect()
        })
        .collect();
    let mut flat: Vec<SweepCell> = cells.into_iter().flatten().collect();
    let seed_pos = |s: u64| seeds.iter().position(|&x| x == s).unwrap_or(usize::MAX);
    flat.sort_by_key(|c| (values.iter().position(|&v| v == c.value).unwrap_or(usize::MAX), seed_pos(c.seed)));
    Ok(flat)
}

pub const CONDITION_COLUMNS: [&str; 4] = ["theorem1_orthogonality", "lambda_interval", "natural_orthogonality", "uniform_orthogonality"];

pub fn sweep_csv(cells: &[SweepCell]) -> String {
    let mut s = String::from("axis,value,seed,accuracy,agreement");
    for c in CONDITION_COLUMNS {
        s.push_str(&format!(",{c}_pass"));
    }
    s.push_str(",error\n");
    for cell in cells {
        s.push_str(&format!("{},{},{}", cell.axis.name(), cell.value, cell.seed));
        match &cell.outcome {
            Ok(r) => {
                s.push_str(&format!(",{},{}", r.accuracy_on_natural, r.agreement_vs_standard.rate));
                for c in CONDITION_COLUMNS {
                    let flag = r.condition_reports.iter().find(|x| x.name == c).map(|x| if x.pass { "1" } else { "0" });
                    s.push_str(&format!(",{}", flag.unwrap_or("")));
                }
                s.push_str(",\n");
            }
            Err(e) => {
                s.push_str(",,");
                s.push_str(&",".repeat(CONDITION_COLUMNS.len()));
                s.push_str(&format!(",\"{}\"\n", e.replace('"', "'")));
            }
        }
    }
    s
}

/// Per-value medians of accuracy and agreement over the successful seeds.
pub fn sweep_medians(cells: &[SweepCell]) -> Vec<(usize, f64, f64)> {
    let mut values: Vec<usize> = cells.iter().map(|c| c.value).collect();
    values.dedup();
    values
        .into_iter()
        .map(|v| {
            let ok: Vec<&ExperimentResult> = cells.iter().filter(|c| c.value == v).filter_map(|c| c.outcome.as_ref().ok()).collect();
            let acc: Vec<f64> = ok.iter().map(|r| r.accuracy_on_natural).collect();
            let agr: Vec<f64> = ok.iter().map(|r| r.agreement_vs_standard.rate).collect();
            (v, crate::linalg::median(&acc), crate::linalg::median(&agr))
        })
        .collect()
}

fn result_summary_csv(r: &ExperimentResult) -> String {
    let mut s = String::from("name,scenario,d,n,n_adv,seed,accuracy,agreement,boundary_mode,conditions_pass,wall_time\n");
    s.push_str(&format!(
        "{},{:?},{},{},{},{},{},{},{},{},{:.3}\n",
        r.config.name,
        r.config.scenario,
        r.config.dataset.d,
        r.config.dataset.n,
        r.config.effective_n_adv(),
        r.config.seed,
        r.accuracy_on_natural,
        r.agreement_vs_standard.rate,
        r.boundary_mode,
        r.all_conditions_pass(),
        r.wall_time
    ));
    s
}

/// Writes `config.json`, `result.json`, `summary.csv` and, when maps were
/// computed, `maps/<name>.svg` and `maps/<name>.csv` under `dir`.
pub fn write_run(dir: &Path, r: &ExperimentResult) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.json"), serde_json::to_string_pretty(&r.config)?)?;
    fs::write(dir.join("result.json"), serde_json::to_string_pretty(r)?)?;
    fs::write(dir.join("summary.csv"), result_summary_csv(r))?;
    if let Some(maps) = &r.decision_maps {
        let mdir = dir.join("maps");
        fs::create_dir_all(&mdir)?;
        for m in maps {
            fs::write(mdir.join(format!("{}.svg", m.name)), crate::plot::decision_map_svg(&m.map, &m.name))?;
            fs::write(mdir.join(format!("{}.csv", m.name)), m.map.to_csv())?;
        }
    }
    Ok(())
}

/// Writes `config.json`, `results.json` and `summary.csv` for a sweep.
pub fn write_sweep(dir: &Path, base: &ExperimentConfig, cells: &[SweepCell]) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.json"), serde_json::to_string_pretty(base)?)?;
    fs::write(dir.join("results.json"), serde_json::to_string_pretty(cells)?)?;
    fs::write(dir.join("summary.csv"), sweep_csv(cells))?;
    Ok(())
}
