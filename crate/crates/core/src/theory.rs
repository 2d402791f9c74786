//! Orthogonality conditions, λ bounds, Monte-Carlo checks of the vector and
//! concentration lemmas, and finite-size growth probes.
//!
//! Every condition comes back as a [`ConditionReport`] whose `pass` flag is
//! derived from `lhs` and `rhs` alone. Composite conditions report their
//! worst slack as `lhs` against `rhs = 0` and keep the individual
//! inequalities in `parts`.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boundary::{boundary_terms, solve_lambda_gram, BoundaryModel};
use crate::data::{gen_dataset, random_labels, gen_orthogonal_dataset, stats_from_gram, Dataset, OrthoStats, Source};
use crate::error::{ensure_dim, Error, Result};
use crate::linalg::{median, norm};
use crate::rng::{derive_index, stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub constants: BTreeMap<String, f64>,
    /// Which regime of a piecewise condition applied (1-based).
    pub case: Option<u8>,
    /// Strict conditions need `lhs > rhs`; the rest `lhs ≥ rhs`.
    pub strict: bool,
    pub pass: bool,
    pub parts: Vec<ConditionReport>,
}

impl ConditionReport {
    pub fn new(name: &str, lhs: f64, rhs: f64, strict: bool) -> ConditionReport {
        let mut r = ConditionReport {
            name: name.to_string(),
            lhs,
            rhs,
            constants: BTreeMap::new(),
            case: None,
            strict,
            pass: false,
            parts: Vec::new(),
        };
        r.recompute();
        r
    }

    /// Re-derives `pass` from the two sides.
    pub fn recompute(&mut self) {
        self.pass = if self.strict { self.lhs > self.rhs } else { self.lhs >= self.rhs };
    }

    fn with(mut self, key: &str, value: f64) -> ConditionReport {
        self.constants.insert(key.to_string(), value);
        self
    }

    fn composite(name: &str, parts: Vec<ConditionReport>) -> ConditionReport {
        let worst = parts.iter().map(|p| p.lhs - p.rhs).fold(f64::INFINITY, f64::min);
        let mut r = ConditionReport::new(name, worst, 0.0, false);
        // A strict part that sits exactly on its bound has zero slack but fails.
        if parts.iter().any(|p| !p.pass) && r.pass {
            r.lhs = -f64::MIN_POSITIVE;
            r.recompute();
        }
        r.parts = parts;
        r
    }

    pub fn summary_line(&self) -> String {
        let case = self.case.map(|c| format!(" case {c}")).unwrap_or_default();
        format!(
            "{:<28} {}  lhs={:.6e} {} rhs={:.6e}{}",
            self.name,
            if self.pass { "PASS" } else { "FAIL" },
            self.lhs,
            if self.strict { ">" } else { ">=" },
            self.rhs,
            case
        )
    }
}

/// `γ³R_min⁴/(3N R_max²) ≥ p_max`.
pub fn check_theorem1(stats: &OrthoStats, n: usize, gamma: f64) -> ConditionReport {
    let rmin2 = stats.r_min * stats.r_min;
    let lhs = gamma.powi(3) * (rmin2 * rmin2) / (3.0 * n as f64 * (stats.r_max * stats.r_max));
    ConditionReport::new("theorem1_orthogonality", lhs, stats.p_max, false)
}

/// The ε-perturbed orthogonality condition for geometry-L2 attacks on
/// natural samples, with `C = (3R_max⁴ + γ³R_min⁴)/(γ²R_min³√(1−γ))` and
/// three regimes split at `N = C²/R_max²` and `N = C²/R_min²`.
pub fn check_natural_condition(stats: &OrthoStats, n: usize, gamma: f64, eps: f64) -> ConditionReport {
    let (rmax, rmin) = (stats.r_max, stats.r_min);
    let g3 = gamma.powi(3);
    let nf = n as f64;
    let c = (3.0 * rmax.powi(4) + g3 * rmin.powi(4)) / (gamma * gamma * rmin.powi(3) * (1.0 - gamma).sqrt());
    let c2 = c * c;
    let cross = 2.0 * c * eps / nf.sqrt();
    let (case, lhs) = if nf <= c2 / (rmax * rmax) {
        let a = (rmin - eps) * (rmin - eps);
        let b = rmax + eps;
        (1, g3 * (a * a) / (3.0 * nf * (b * b)) - 2.0 * eps * rmax - eps * eps)
    } else if nf <= c2 / (rmin * rmin) {
        let a = (rmin - eps) * (rmin - eps);
        (2, g3 * (a * a) / (3.0 * nf * (rmax * rmax + cross + eps * eps)) - cross - eps * eps)
    } else {
        let a = rmin * rmin - cross + eps * eps;
        (3, g3 * (a * a) / (3.0 * nf * (rmax * rmax + cross + eps * eps)) - cross - eps * eps)
    };
    let mut r = ConditionReport::new("natural_orthogonality", lhs, stats.p_max, false).with("C", c).with("eps", eps);
    r.case = Some(case);
    r
}

/// The four conditions on perturbed uniform noise, with `C = ln(1000·N^adv)`.
pub fn check_uniform_condition(noise: &Dataset, q_dir: ArrayView1<f64>, n_adv: usize, eps: f64, gamma: f64) -> Result<ConditionReport> {
    ensure_dim("q_dir", noise.d(), q_dir.len())?;
    let qn = norm(q_dir);
    if (qn - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("q_dir must be a unit vector (norm {qn})")));
    }
    let d = noise.d() as f64;
    let c = (1000.0 * n_adv as f64).ln();
    let gram = noise.x.dot(&noise.x.t());
    let norm_dev = gram.diag().iter().map(|s| (s - d / 3.0).abs()).fold(0.0, f64::max);
    let stats = stats_from_gram(&gram);
    let q_ip = noise.x.dot(&q_dir).iter().map(|v| v.abs()).fold(0.0, f64::max);

    let sq_cd = (c * d).sqrt();
    let sq_2c = (2.0 * c).sqrt();
    let num = 2.0 * d - 3.0 * sq_cd - 12.0 * sq_2c * eps + 6.0 * eps * eps;
    let den = 18.0 * n_adv as f64 * (2.0 * d + 3.0 * sq_cd + 12.0 * sq_2c * eps + 6.0 * eps * eps);
    let main_lhs = gamma.powi(3) * num * num / den;
    let main_rhs = (2.0 * c * d).sqrt() + 2.0 * sq_2c * eps + eps * eps;

    let parts = vec![
        ConditionReport::new("uniform_norms", sq_cd / 2.0, norm_dev, false),
        ConditionReport::new("uniform_cross_products", (2.0 * c * d).sqrt(), stats.p_max, false),
        ConditionReport::new("uniform_direction_products", sq_2c, q_ip, false),
        ConditionReport::new("uniform_main_inequality", main_lhs, main_rhs, false),
    ];
    Ok(ConditionReport::composite("uniform_orthogonality", parts).with("C", c).with("eps", eps))
}

/// Every `λ_n` strictly inside `(1/(2R_max²), 3/(2γ²R_min²))`; `lhs` is the
/// smallest distance to either end.
pub fn check_lambda_bounds(lambda: ArrayView1<f64>, stats: &OrthoStats, gamma: f64) -> ConditionReport {
    let lo = 1.0 / (2.0 * stats.r_max * stats.r_max);
    let hi = 3.0 / (2.0 * gamma * gamma * stats.r_min * stats.r_min);
    let slack = lambda.iter().map(|&l| (l - lo).min(hi - l)).fold(f64::INFINITY, f64::min);
    ConditionReport::new("lambda_interval", slack, 0.0, true).with("lower", lo).with("upper", hi)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRow {
    pub d: usize,
    pub n: usize,
    pub statistic: String,
    pub value: f64,
    /// `value` divided by the scale the statistic is expected to follow.
    pub normalized_ratio: f64,
    /// Theoretical lower (rates) or upper (tail probabilities) bound.
    pub bound: Option<f64>,
    /// Binomial standard error of an empirical rate.
    pub std_err: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProbeTable {
    pub rows: Vec<ProbeRow>,
}

impl ProbeTable {
    pub fn get(&self, d: usize, n: usize, statistic: &str) -> Option<&ProbeRow> {
        self.rows.iter().find(|r| r.d == d && r.n == n && r.statistic == statistic)
    }

    /// Rows with the given statistic, in insertion order.
    pub fn series(&self, statistic: &str) -> Vec<&ProbeRow> {
        self.rows.iter().filter(|r| r.statistic == statistic).collect()
    }

    /// max/min of `normalized_ratio` over a statistic.
    pub fn band(&self, statistic: &str) -> f64 {
        let v: Vec<f64> = self.series(statistic).iter().map(|r| r.normalized_ratio).collect();
        let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = v.iter().cloned().fold(f64::INFINITY, f64::min);
        max / min
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("d,n,statistic,value,normalized_ratio,bound,std_err\n");
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.d,
                r.n,
                r.statistic,
                r.value,
                r.normalized_ratio,
                opt(r.bound),
                opt(r.std_err)
            ));
        }
        s
    }
}

fn rate_row(d: usize, n: usize, statistic: &str, hits: usize, trials: usize, bound: f64) -> ProbeRow {
    let p = hits as f64 / trials as f64;
    ProbeRow {
        d,
        n,
        statistic: statistic.to_string(),
        value: p,
        normalized_ratio: p / bound,
        bound: Some(bound),
        std_err: Some((p * (1.0 - p) / trials as f64).sqrt()),
    }
}

struct ClaimCounts {
    a: usize,
    b: usize,
    c: usize,
}

/// Runs `trials` independent draws of `n` vectors and counts how often each
/// max-deviation event holds.
fn count_claims<F>(trials: usize, seed: u64, tag: &str, draw: F, center: f64, th: [f64; 3], z: &Array1<f64>) -> ClaimCounts
where
    F: Fn(&mut rand_chacha::ChaCha20Rng) -> Array2<f64> + Sync,
{
    let results: Vec<[bool; 3]> = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = stream(derive_index(seed, trial as u64), tag);
            let x = draw(&mut rng);
            let gram = x.dot(&x.t());
            let dev = gram.diag().iter().map(|s| (s - center).abs()).fold(0.0, f64::max);
            let cross = stats_from_gram(&gram).p_max;
            let zip = x.dot(z).iter().map(|v| v.abs()).fold(0.0, f64::max);
            [dev <= th[0], cross <= th[1], zip <= th[2]]
        })
        .collect();
    ClaimCounts {
        a: results.iter().filter(|r| r[0]).count(),
        b: results.iter().filter(|r| r[1]).count(),
        c: results.iter().filter(|r| r[2]).count(),
    }
}

fn random_unit(d: usize, seed: u64, tag: &str) -> Array1<f64> {
    let mut rng = stream(seed, tag);
    let g = Array1::from_shape_simple_fn(d, || {
        let v: f64 = StandardNormal.sample(&mut rng);
        v
    });
    let gn = norm(g.view());
    g / gn
}

/// Empirical rates of the three uniform-vector events against
/// `(1 − 2/(tN))^N`, with `z` a seeded random unit vector.
pub fn verify_uniform_vector_lemma(d: usize, n: usize, t: f64, trials: usize, seed: u64) -> Result<ProbeTable> {
    let z = random_unit(d, seed, "theory/uniform_z");
    verify_uniform_vector_lemma_with_z(d, n, t, trials, seed, &z)
}

pub fn verify_uniform_vector_lemma_with_z(d: usize, n: usize, t: f64, trials: usize, seed: u64, z: &Array1<f64>) -> Result<ProbeTable> {
    if !(t * n as f64 > 1.0) {
        return Err(Error::InvalidArgument("need t > 1/N".into()));
    }
    if trials < 100 || d == 0 || n == 0 {
        return Err(Error::InvalidArgument("need trials ≥ 100 and d, n ≥ 1".into()));
    }
    ensure_dim("z", d, z.len())?;
    let l = (t * n as f64).ln();
    let th = [(d as f64 * l).sqrt() / 2.0, (2.0 * d as f64 * l).sqrt(), (2.0 * l).sqrt() * norm(z.view())];
    let dist = Uniform::new_inclusive(-1.0, 1.0).expect("valid bounds");
    let counts = count_claims(
        trials,
        seed,
        "theory/uniform_lemma",
        |rng| Array2::from_shape_simple_fn((n, d), || dist.sample(rng)),
        d as f64 / 3.0,
        th,
        z,
    );
    let bound = (1.0 - 2.0 / (t * n as f64)).powi(n as i32);
    Ok(ProbeTable {
        rows: vec![
            rate_row(d, n, "claim_a_rate", counts.a, trials, bound),
            rate_row(d, n, "claim_b_rate", counts.b, trials, bound),
            rate_row(d, n, "claim_c_rate", counts.c, trials, bound),
        ],
    })
}

/// Empirical rates of the three sub-Gaussian-vector events against
/// `(1 − 1/(500N))^N` for Gaussian or Rademacher entries.
pub fn verify_subgaussian_vector_lemma(d: usize, n: usize, trials: usize, source: Source, seed: u64) -> Result<ProbeTable> {
    if !matches!(source, Source::Gaussian | Source::Rademacher) {
        return Err(Error::InvalidArgument(format!("{source} is not a supported sub-Gaussian source")));
    }
    if trials == 0 || n == 0 {
        return Err(Error::InvalidArgument("need trials ≥ 1 and n ≥ 1".into()));
    }
    let l = (1000.0 * n as f64).ln();
    let df = d as f64;
    if df < l / 4.0 {
        return Err(Error::Premise(format!("claim (b) needs d ≥ ln(1000N)/4 = {:.3}", l / 4.0)));
    }
    if df < 2.0 * l {
        return Err(Error::Premise(format!("claim (a) needs d ≥ 2 ln(1000N) = {:.3}", 2.0 * l)));
    }
    let z = random_unit(d, seed, "theory/subgaussian_z");
    let th = [16.0 * (2.0 * df * l).sqrt(), 2.0 * (2.0 * df * l).sqrt(), (2.0 * l).sqrt()];
    let draw = |rng: &mut rand_chacha::ChaCha20Rng| match source {
        Source::Gaussian => Array2::from_shape_simple_fn((n, d), || {
            let v: f64 = StandardNormal.sample(rng);
            v
        }),
        _ => Array2::from_shape_simple_fn((n, d), || if rng.random::<bool>() { 1.0 } else { -1.0 }),
    };
    let counts = count_claims(trials, seed, "theory/subgaussian_lemma", draw, df, th, &z);
    let bound = (1.0 - 1.0 / (500.0 * n as f64)).powi(n as i32);
    Ok(ProbeTable {
        rows: vec![
            rate_row(d, n, "claim_a_rate", counts.a, trials, bound),
            rate_row(d, n, "claim_b_rate", counts.b, trials, bound),
            rate_row(d, n, "claim_c_rate", counts.c, trials, bound),
        ],
    })
}

/// Tail rate `P[|Σ x_n| ≥ t]` for independent zero-mean `x_n ∈ [a_n, b_n]`
/// against `2 exp(Σ(b_n − a_n)²/8 − t)`.
///
/// Symmetric intervals are sampled uniformly; asymmetric ones use the
/// zero-mean two-point law on `{a_n, b_n}`.
pub fn verify_concentration(a_bounds: &[f64], b_bounds: &[f64], t: f64, trials: usize, seed: u64) -> Result<ProbeTable> {
    if a_bounds.len() != b_bounds.len() || a_bounds.is_empty() {
        return Err(Error::InvalidArgument("need equal, non-empty bound lists".into()));
    }
    if a_bounds.iter().zip(b_bounds).any(|(a, b)| !(*a <= 0.0 && 0.0 <= *b)) {
        return Err(Error::InvalidArgument("zero-mean sampling needs a_n ≤ 0 ≤ b_n".into()));
    }
    if trials == 0 {
        return Err(Error::InvalidArgument("need trials ≥ 1".into()));
    }
    let spread: f64 = a_bounds.iter().zip(b_bounds).map(|(a, b)| (b - a) * (b - a)).sum();
    let bound = 2.0 * (spread / 8.0 - t).exp();
    let hits: usize = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = stream(derive_index(seed, trial as u64), "theory/concentration");
            let s: f64 = a_bounds
                .iter()
                .zip(b_bounds)
                .map(|(&a, &b)| {
                    if a == b {
                        0.0
                    } else if a == -b {
                        rng.random_range(a..=b)
                    } else if rng.random::<f64>() < -a / (b - a) {
                        b
                    } else {
                        a
                    }
                })
                .sum();
            usize::from(s.abs() >= t)
        })
        .sum();
    let p = hits as f64 / trials as f64;
    Ok(ProbeTable {
        rows: vec![ProbeRow {
            d: 1,
            n: a_bounds.len(),
            statistic: "empirical_rate".into(),
            value: p,
            normalized_ratio: if bound > 0.0 { p / bound } else { 0.0 },
            bound: Some(bound),
            std_err: Some((p * (1.0 - p) / trials as f64).sqrt()),
        }],
    })
}

/// `‖Σ λ_n y_n x_n‖·√(d/N)` on orthogonal data with row norms `√d`.
pub fn growth_probe_qnorm(scales: &[(usize, usize)], gamma: f64, seed: u64) -> Result<ProbeTable> {
    let mut rows = Vec::new();
    for &(d, n) in scales {
        let ds = gen_orthogonal_dataset(d, n, derive_index(seed, d as u64), (d as f64).sqrt())?;
        let gram = ds.x.dot(&ds.x.t());
        let report = check_theorem1(&stats_from_gram(&gram), n, gamma);
        if !report.pass {
            return Err(Error::Premise(format!("orthogonality fails at d={d}, N={n}")));
        }
        let lambda = solve_lambda_gram(&gram, ds.y.view(), gamma, 1, 1)?;
        let model = BoundaryModel::from_lambda(ds, lambda)?;
        let q = norm(model.direction().view());
        rows.push(ProbeRow {
            d,
            n,
            statistic: "q_norm".into(),
            value: q,
            normalized_ratio: q * (d as f64 / n as f64).sqrt(),
            bound: None,
            std_err: None,
        });
    }
    Ok(ProbeTable { rows })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeFamily {
    /// `z = Σ_n y_n x_n/√N`: weak, label-aligned correlation with every sample.
    WeakAll,
    /// `z = x_1`: strong correlation with a single sample.
    StrongOne,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelRule {
    /// Targets i.i.d. ±1.
    Random,
    /// Targets `−y`.
    Deterministic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TermProbeConfig {
    pub family: ProbeFamily,
    pub labels: LabelRule,
    pub gamma: f64,
    /// ε = `eps_scale · √(d/N)`.
    pub eps_scale: f64,
    pub seeds: usize,
}

/// Medians over seeds of `|T1|`, `|T2|` and `|T2|/|T1|` for geometry-L2
/// perturbations of exactly orthogonal data with row norms `√d`, per grid
/// scale.
///
/// Every vector involved lies in the span of the samples and all quantities
/// are inner products, so the samples are represented as `√d·e_n` in that
/// N-dimensional span. Scales sharing a `d` reuse one label draw per seed
/// and take prefixes.
pub fn term_magnitude_probe(grid: &[(usize, usize)], cfg: &TermProbeConfig, seed: u64) -> Result<ProbeTable> {
    if cfg.seeds == 0 || grid.is_empty() {
        return Err(Error::InvalidArgument("need at least one seed and one scale".into()));
    }
    if let Some(&(d, n)) = grid.iter().find(|g| g.1 == 0 || g.1 > g.0) {
        return Err(Error::InvalidArgument(format!("need 1 ≤ N ≤ d for orthogonal data, got d={d}, N={n}")));
    }
    let mut dims: Vec<usize> = grid.iter().map(|g| g.0).collect();
    dims.sort_unstable();
    dims.dedup();
    let mut per_scale: BTreeMap<(usize, usize), Vec<(f64, f64)>> = BTreeMap::new();
    for &d in &dims {
        let n_max = grid.iter().filter(|g| g.0 == d).map(|g| g.1).max().unwrap_or(0);
        let samples: Vec<Vec<((usize, usize), (f64, f64))>> = (0..cfg.seeds)
            .into_par_iter()
            .map(|s| {
                let sd = derive_index(derive_index(seed, d as u64), s as u64);
                let labels = random_labels(&mut stream(sd, "theory/term_labels"), n_max);
                let random_targets = random_labels(&mut stream(sd, "theory/term_targets"), n_max);
                grid.iter()
                    .filter(|g| g.0 == d)
                    .map(|&(_, n)| {
                        let x = Array2::from_diag_elem(n, (d as f64).sqrt());
                        let ds = Dataset::from_parts(x, labels.slice(ndarray::s![..n]).to_owned(), Source::Orthogonalized, sd, 1.0)?;
                        let targets = match cfg.labels {
                            LabelRule::Random => random_targets.slice(ndarray::s![..n]).to_owned(),
                            LabelRule::Deterministic => ds.y.mapv(|v| -v),
                        };
                        term_sample(&ds, d, &targets, cfg).map(|t| ((d, n), t))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        for s in samples.into_iter().flatten() {
            per_scale.entry(s.0).or_default().push(s.1);
        }
    }
    let mut rows = Vec::new();
    for &(d, n) in grid {
        let v = &per_scale[&(d, n)];
        let t1 = median(&v.iter().map(|p| p.0).collect::<Vec<_>>());
        let t2 = median(&v.iter().map(|p| p.1).collect::<Vec<_>>());
        let ratio = median(&v.iter().map(|p| p.1 / p.0).collect::<Vec<_>>());
        let (df, nf) = (d as f64, n as f64);
        let row = |statistic: &str, value: f64, scale: f64| ProbeRow {
            d,
            n,
            statistic: statistic.into(),
            value,
            normalized_ratio: value / scale,
            bound: None,
            std_err: None,
        };
        rows.push(row("t1_abs", t1, df / nf));
        rows.push(row("t2_abs", t2, df / nf.sqrt()));
        rows.push(row("t2_over_t1", ratio, 1.0));
    }
    Ok(ProbeTable { rows })
}

fn term_sample(ds: &Dataset, d: usize, targets: &Array1<f64>, cfg: &TermProbeConfig) -> Result<(f64, f64)> {
    let n = ds.n();
    let eps = cfg.eps_scale * (d as f64 / n as f64).sqrt();
    let gram = ds.x.dot(&ds.x.t());
    let stats = stats_from_gram(&gram);
    let premise = check_natural_condition(&stats, n, cfg.gamma, eps);
    if !premise.pass {
        return Err(Error::Premise(format!(
            "perturbed orthogonality fails at d={d}, N={n}, ε={eps:.4e} (lhs {:.4e} < p_max {:.4e})",
            premise.lhs, premise.rhs
        )));
    }
    let lambda = solve_lambda_gram(&gram, ds.y.view(), cfg.gamma, 1, 1)?;
    let model = BoundaryModel::from_lambda(ds.clone(), lambda)?;
    let q = model.direction();
    let q_hat = &q / norm(q.view());
    let mut xadv = ds.x.clone();
    for (mut row, t) in xadv.axis_iter_mut(Axis(0)).zip(targets.iter()) {
        row.scaled_add(eps * t, &q_hat);
    }
    let adv_gram = xadv.dot(&xadv.t());
    let adv_lambda = solve_lambda_gram(&adv_gram, targets.view(), cfg.gamma, 1, 1)?;
    let z = match cfg.family {
        ProbeFamily::WeakAll => ds.x.t().dot(&ds.y) / (n as f64).sqrt(),
        ProbeFamily::StrongOne => ds.x.row(0).to_owned(),
    };
    let terms = boundary_terms(&model, adv_lambda.view(), targets.view(), eps, z.view())?;
    Ok((terms.t1.abs(), terms.t2.abs()))
}

/// Uniform-noise sample for condition checks; thin wrapper kept next to the
/// checks that consume it.
pub fn uniform_noise(d: usize, n: usize, seed: u64) -> Result<Dataset> {
    gen_dataset(Source::Uniform, d, n, seed, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn equal_stats(r: f64) -> OrthoStats {
        OrthoStats { r_max: r, r_min: r, p_max: 0.0 }
    }

    #[test]
    fn theorem1_orthonormal() {
        let r = check_theorem1(&equal_stats(1.0), 4, 0.5);
        assert!(r.pass);
        assert!((r.lhs - 0.125 / 12.0).abs() < 1e-16);
    }

    #[test]
    fn theorem1_rescaling_invariant() {
        let st = OrthoStats { r_max: 3.0, r_min: 2.0, p_max: 0.4 };
        let c = 7.0;
        let scaled = OrthoStats { r_max: 3.0 * c, r_min: 2.0 * c, p_max: 0.4 * c * c };
        let (a, b) = (check_theorem1(&st, 5, 0.5), check_theorem1(&scaled, 5, 0.5));
        assert_eq!(a.pass, b.pass);
        assert!((b.lhs / a.lhs - c * c).abs() < 1e-12);
    }

    #[test]
    fn natural_at_zero_eps_matches_theorem1() {
        for (st, n) in [(equal_stats(1.0), 4), (OrthoStats { r_max: 3.0, r_min: 2.0, p_max: 0.01 }, 1000), (equal_stats(64.0), 2000)] {
            let a = check_natural_condition(&st, n, 0.5, 0.0);
            let b = check_theorem1(&st, n, 0.5);
            assert_eq!(a.lhs, b.lhs);
            assert_eq!(a.pass, b.pass);
        }
    }

    #[test]
    fn natural_hand_value_small_orthonormal_set() {
        let r = check_natural_condition(&equal_stats(1.0), 4, 0.5, 0.05);
        assert_eq!(r.case, Some(1));
        let want = 0.125 * 0.95f64.powi(4) / (12.0 * 1.05 * 1.05) - 0.1 - 0.0025;
        assert!((r.lhs - want).abs() < 1e-15);
        assert!(!r.pass);
    }

    #[test]
    fn uniform_main_inequality_hand_values() {
        let d = 1_000_000;
        let noise = uniform_noise(d, 1, 2).unwrap();
        let mut q = Array1::zeros(d);
        q[0] = 1.0;
        let r = check_uniform_condition(&noise, q.view(), 1, 0.0, 0.5).unwrap();
        let main = &r.parts[3];
        assert!((main.lhs - 13_725.482_662_227_274).abs() < 1e-8, "{}", main.lhs);
        assert!((main.rhs - 3_716.922_188_849_838).abs() < 1e-8, "{}", main.rhs);
        assert!(main.pass);
        let r = check_uniform_condition(&noise, q.view(), 1, 1e6, 0.5).unwrap();
        assert!(!r.parts[3].pass);
        assert!(!r.pass);
    }

    #[test]
    fn uniform_norm_violation_fails_composite() {
        let mut noise = uniform_noise(400, 3, 1).unwrap();
        noise.x.row_mut(1).fill(1.0);
        let q = random_unit(400, 0, "t");
        let r = check_uniform_condition(&noise, q.view(), 3, 0.0, 0.5).unwrap();
        assert!(!r.parts[0].pass);
        assert!(!r.pass);
        assert!(r.lhs < 0.0);
    }

    #[test]
    fn natural_fails_beyond_rmin() {
        for st in [equal_stats(1.0), OrthoStats { r_max: 5.0, r_min: 1.0, p_max: 0.0 }, equal_stats(100.0)] {
            for n in [1, 10, 1000, 1_000_000] {
                for k in 1..50 {
                    let eps = st.r_min * (1.0 + k as f64 * 0.25);
                    assert!(!check_natural_condition(&st, n, 0.5, eps).pass);
                }
            }
        }
    }

    #[test]
    fn lambda_interval_edges() {
        let st = equal_stats(1.0);
        assert!(check_lambda_bounds(Array1::from_vec(vec![8.0 / 9.0]).view(), &st, 0.5).pass);
        assert!(!check_lambda_bounds(Array1::from_vec(vec![0.5]).view(), &st, 0.5).pass);
        for k in 1..100 {
            let g = k as f64 / 100.0;
            let lam = 2.0 / (1.0 + g * g);
            assert!(check_lambda_bounds(Array1::from_vec(vec![lam]).view(), &st, g).pass, "gamma {g}");
        }
    }

    #[test]
    fn metamorphic_rhs_flip() {
        let mut r = check_theorem1(&equal_stats(2.0), 3, 0.5);
        assert!(r.pass);
        r.rhs = r.lhs * (1.0 + 1e-9);
        r.recompute();
        assert!(!r.pass);
    }

    #[test]
    fn concentration_trivial_cases() {
        let t = verify_concentration(&[0.0; 3], &[0.0; 3], 0.1, 200, 1).unwrap();
        assert_eq!(t.rows[0].value, 0.0);
        let t = verify_concentration(&[-1.0; 10], &[1.0; 10], 10.0, 2000, 1).unwrap();
        assert!((t.rows[0].bound.unwrap() - 2.0 * (-5f64).exp()).abs() < 1e-15);
        assert!(t.rows[0].value <= t.rows[0].bound.unwrap());
        let t = verify_concentration(&[-1.0; 10], &[1.0; 10], 1.0, 500, 1).unwrap();
        assert!(t.rows[0].bound.unwrap() > 1.0);
        assert!(verify_concentration(&[0.5], &[1.0], 1.0, 10, 0).is_err());
    }

    #[test]
    fn asymmetric_two_point_sampler_is_zero_mean() {
        let t = verify_concentration(&[-1.0; 400], &[3.0; 400], 1e9, 10, 0).unwrap();
        assert_eq!(t.rows[0].value, 0.0);
    }

    #[test]
    fn subgaussian_preconditions() {
        assert!(matches!(verify_subgaussian_vector_lemma(1, 16, 10, Source::Gaussian, 0), Err(Error::Premise(_))));
        assert!(verify_subgaussian_vector_lemma(64, 4, 10, Source::Uniform, 0).is_err());
        let t = verify_subgaussian_vector_lemma(64, 4, 100, Source::Rademacher, 0).unwrap();
        assert_eq!(t.rows[0].value, 1.0);
    }

    #[test]
    fn uniform_lemma_degenerate_dimension() {
        let t = verify_uniform_vector_lemma(1, 4, 10.0, 100, 0).unwrap();
        assert_eq!(t.rows.len(), 3);
        assert!(t.rows.iter().all(|r| (0.0..=1.0).contains(&r.value)));
    }

    #[test]
    fn qnorm_closed_form_on_equal_norms() {
        let t = growth_probe_qnorm(&[(64, 4), (128, 8)], 0.5, 3).unwrap();
        for r in &t.rows {
            assert!((r.normalized_ratio - 2.0 / 1.25).abs() < 1e-10);
        }
        let single = growth_probe_qnorm(&[(16, 1)], 0.5, 1).unwrap();
        let lam = 2.0 / (1.25 * 16.0);
        assert!((single.rows[0].value - lam * 4.0).abs() < 1e-12);
    }

    #[test]
    fn term_probe_zero_eps() {
        let cfg = TermProbeConfig {
            family: ProbeFamily::WeakAll,
            labels: LabelRule::Random,
            gamma: 0.5,
            eps_scale: 0.0,
            seeds: 3,
        };
        let t = term_magnitude_probe(&[(64, 8)], &cfg, 1).unwrap();
        assert_eq!(t.get(64, 8, "t2_abs").unwrap().value, 0.0);
        assert_eq!(t.get(64, 8, "t2_over_t1").unwrap().value, 0.0);
    }

    #[test]
    fn term_probe_rejects_large_eps() {
        let cfg = TermProbeConfig {
            family: ProbeFamily::WeakAll,
            labels: LabelRule::Random,
            gamma: 0.5,
            eps_scale: 1.0,
            seeds: 2,
        };
        assert!(matches!(term_magnitude_probe(&[(256, 16)], &cfg, 1), Err(Error::Premise(_))));
    }
}
