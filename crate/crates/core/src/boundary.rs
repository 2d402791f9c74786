//! Implicit-bias decision boundaries.
//!
//! Under near-orthogonal data, gradient flow on the frozen-last-layer
//! network converges in direction to a rank-two `W^std` whose rows are
//! `v` (positive units) and `u` (negative units), both linear combinations
//! of the training samples with positive dual weights `λ`. The classifier's
//! sign then equals the sign of the linear score `Σ λ_n y_n ⟨x_n, z⟩`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{ensure_dim, Error, Result};
use crate::linalg::{compensated_sum, lu_solve, median, norm, weighted_row_sum};
use crate::net::{forward_batch, NetworkConfig, NetworkParams};

/// Largest tolerated `|y_n f(x_n; W^std) − 1|` for an accepted solve.
pub const RESIDUAL_TOL: f64 = 1e-8;

/// Per-sample coefficients of `v` and `u` in the sample basis.
fn vu_coefficients(y: ArrayView1<f64>, gamma: f64) -> (Array1<f64>, Array1<f64>) {
    let cv = y.mapv(|yk| if yk > 0.0 { 1.0 } else { -gamma });
    let cu = y.mapv(|yk| if yk > 0.0 { -gamma } else { 1.0 });
    (cv, cu)
}

/// Solves the unit-margin system `y_n f(x_n; W^std) = 1` for the dual
/// weights, assuming each positive sample activates `v` and deactivates `u`
/// (and the reverse for negative samples), then checks that assumption, the
/// positivity of `λ`, and the residuals against the real piecewise-linear `f`.
pub fn solve_lambda(ds: &Dataset, gamma: f64, m_plus: usize, m_minus: usize) -> Result<Array1<f64>> {
    let gram = ds.x.dot(&ds.x.t());
    solve_lambda_gram(&gram, ds.y.view(), gamma, m_plus, m_minus)
}

/// [`solve_lambda`] from a precomputed Gram matrix `X Xᵀ`.
pub fn solve_lambda_gram(gram: &Array2<f64>, y: ArrayView1<f64>, gamma: f64, m_plus: usize, m_minus: usize) -> Result<Array1<f64>> {
    let n = y.len();
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one sample".into()));
    }
    ensure_dim("gram rows", n, gram.nrows())?;
    ensure_dim("gram columns", n, gram.ncols())?;
    if !(gamma > 0.0 && gamma < 1.0) || m_plus + m_minus == 0 {
        return Err(Error::InvalidArgument("need gamma in (0,1) and a non-empty width".into()));
    }
    let m = (m_plus + m_minus) as f64;
    let (mp, mm) = (m_plus as f64, m_minus as f64);
    let (cv, cu) = vu_coefficients(y, gamma);
    let mut a = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        let (alpha, beta) = if y[i] > 0.0 { (mp, gamma * mm) } else { (gamma * mp, mm) };
        for k in 0..n {
            a[[i, k]] = (alpha * cv[k] - beta * cu[k]) * gram[[i, k]] / m;
        }
    }
    let lambda = lu_solve(&a, &y.to_owned())?;

    if let Some((i, &v)) = lambda.iter().enumerate().find(|(_, &v)| !(v > 0.0)) {
        return Err(Error::NonPositiveLambda { index: i, value: v });
    }
    let p = gram.dot(&(&lambda * &cv));
    let q = gram.dot(&(&lambda * &cu));
    for i in 0..n {
        let ok = if y[i] > 0.0 { p[i] > 0.0 && q[i] < 0.0 } else { p[i] < 0.0 && q[i] > 0.0 };
        if !ok {
            return Err(Error::SignPattern {
                index: i,
                detail: format!("y={}, √m⟨v,x⟩={:.3e}, √m⟨u,x⟩={:.3e}", y[i], p[i], q[i]),
            });
        }
    }
    let phi = |z: f64| if z > 0.0 { z } else { gamma * z };
    for i in 0..n {
        let f = (mp * phi(p[i]) - mm * phi(q[i])) / m;
        let residual = (y[i] * f - 1.0).abs();
        if !(residual <= RESIDUAL_TOL) {
            return Err(Error::Residual { index: i, residual });
        }
    }
    Ok(lambda)
}

/// The two distinct rows of `W^std`:
/// `v = (Σ_{y=+1} λx − γ Σ_{y=−1} λx)/√m`, `u = (Σ_{y=−1} λx − γ Σ_{y=+1} λx)/√m`.
pub fn vu_from_lambda(ds: &Dataset, lambda: ArrayView1<f64>, cfg: &NetworkConfig) -> Result<(Array1<f64>, Array1<f64>)> {
    ensure_dim("lambda", ds.n(), lambda.len())?;
    ensure_dim("input", cfg.d, ds.d())?;
    let (cv, cu) = vu_coefficients(ds.y.view(), cfg.gamma);
    let s = 1.0 / (cfg.m() as f64).sqrt();
    let v = weighted_row_sum(ds.x.view(), (&lambda * &cv).view()) * s;
    let u = weighted_row_sum(ds.x.view(), (&lambda * &cu).view()) * s;
    Ok((v, u))
}

/// `W^std`: the first `m_plus` rows equal `v`, the rest equal `u`.
pub fn build_wstd(ds: &Dataset, lambda: ArrayView1<f64>, cfg: &NetworkConfig) -> Result<NetworkParams> {
    let (v, u) = vu_from_lambda(ds, lambda, cfg)?;
    let mut w = Array2::<f64>::zeros((cfg.m(), cfg.d));
    for (j, mut row) in w.axis_iter_mut(Axis(0)).enumerate() {
        row.assign(if j < cfg.m_plus { &v } else { &u });
    }
    Ok(NetworkParams { w })
}

/// Mean of the positive-unit rows and mean of the negative-unit rows.
pub fn extract_vu(p: &NetworkParams, cfg: &NetworkConfig) -> (Array1<f64>, Array1<f64>) {
    // Running mean, so identical rows reproduce the row bit for bit.
    let mean_rows = |rows: ArrayView2<f64>| {
        let mut mean = Array1::<f64>::zeros(rows.ncols());
        for (k, row) in rows.axis_iter(Axis(0)).enumerate() {
            let w = 1.0 / (k + 1) as f64;
            mean.zip_mut_with(&row, |m, &x| *m += (x - *m) * w);
        }
        mean
    };
    let (top, bottom) = p.w.view().split_at(Axis(0), cfg.m_plus);
    (mean_rows(top), mean_rows(bottom))
}

/// A linear decision boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum BoundaryModel {
    /// `f^bdy(z) = Σ λ_n y_n ⟨x_n, z⟩` over a reference dataset.
    LambdaExact {
        reference: Dataset,
        lambda: Array1<f64>,
        /// `Σ λ_n y_n x_n`, accumulated with compensation.
        q: Array1<f64>,
    },
    /// `⟨v − u, z⟩` from the averaged hidden rows of a trained network.
    EmpiricalVu { v: Array1<f64>, u: Array1<f64> },
}

impl BoundaryModel {
    pub fn from_lambda(reference: Dataset, lambda: Array1<f64>) -> Result<BoundaryModel> {
        ensure_dim("lambda", reference.n(), lambda.len())?;
        if let Some((i, &v)) = lambda.iter().enumerate().find(|(_, &v)| !(v > 0.0)) {
            return Err(Error::NonPositiveLambda { index: i, value: v });
        }
        let q = weighted_row_sum(reference.x.view(), (&lambda * &reference.y).view());
        Ok(BoundaryModel::LambdaExact { reference, lambda, q })
    }

    /// Solves for `λ` and wraps the result.
    pub fn lambda_exact(ds: &Dataset, gamma: f64, m_plus: usize, m_minus: usize) -> Result<BoundaryModel> {
        let lambda = solve_lambda(ds, gamma, m_plus, m_minus)?;
        BoundaryModel::from_lambda(ds.clone(), lambda)
    }

    pub fn empirical(p: &NetworkParams, cfg: &NetworkConfig) -> BoundaryModel {
        let (v, u) = extract_vu(p, cfg);
        BoundaryModel::EmpiricalVu { v, u }
    }

    pub fn d(&self) -> usize {
        match self {
            BoundaryModel::LambdaExact { q, .. } => q.len(),
            BoundaryModel::EmpiricalVu { v, .. } => v.len(),
        }
    }

    pub fn mode_name(&self) -> &'static str {
        match self {
            BoundaryModel::LambdaExact { .. } => "lambda_exact",
            BoundaryModel::EmpiricalVu { .. } => "empirical_vu",
        }
    }

    /// Normal vector of the boundary: `q` for the exact mode, `v − u` for
    /// the empirical mode.
    pub fn direction(&self) -> Array1<f64> {
        match self {
            BoundaryModel::LambdaExact { q, .. } => q.clone(),
            BoundaryModel::EmpiricalVu { v, u } => v - u,
        }
    }

    pub fn fbdy_eval(&self, z: ArrayView1<f64>) -> Result<f64> {
        ensure_dim("probe", self.d(), z.len())?;
        Ok(match self {
            BoundaryModel::LambdaExact { reference, lambda, .. } => {
                let ip = reference.x.dot(&z);
                compensated_sum(ip.iter().zip(lambda.iter()).zip(reference.y.iter()).map(|((g, l), y)| l * y * g))
            }
            BoundaryModel::EmpiricalVu { v, u } => v.dot(&z) - u.dot(&z),
        })
    }

    /// `f^bdy` on every row of `zs`.
    pub fn fbdy_batch(&self, zs: ArrayView2<f64>) -> Result<Array1<f64>> {
        ensure_dim("probe columns", self.d(), zs.ncols())?;
        Ok(match self {
            BoundaryModel::LambdaExact { reference, lambda, .. } => {
                let ip = zs.dot(&reference.x.t());
                ip.dot(&(lambda * &reference.y))
            }
            BoundaryModel::EmpiricalVu { v, u } => zs.dot(&(v - u)),
        })
    }
}

/// `Σ_n A_n λ_n y_n ⟨x_n, z⟩` with `A_n = m_+ + γm_−` for positive samples
/// and `γm_+ + m_−` for negative ones.
pub fn fbdy_general(ds: &Dataset, lambda: ArrayView1<f64>, gamma: f64, m_plus: usize, m_minus: usize, z: ArrayView1<f64>) -> Result<f64> {
    ensure_dim("lambda", ds.n(), lambda.len())?;
    ensure_dim("probe", ds.d(), z.len())?;
    let (mp, mm) = (m_plus as f64, m_minus as f64);
    let ip = ds.x.dot(&z);
    Ok(compensated_sum((0..ds.n()).map(|n| {
        let a = if ds.y[n] > 0.0 { mp + gamma * mm } else { gamma * mp + mm };
        a * lambda[n] * ds.y[n] * ip[n]
    })))
}

/// Anything that assigns a real score to each probe row.
pub trait Scorer {
    fn scores(&self, zs: ArrayView2<f64>) -> Result<Array1<f64>>;
}

impl Scorer for BoundaryModel {
    fn scores(&self, zs: ArrayView2<f64>) -> Result<Array1<f64>> {
        self.fbdy_batch(zs)
    }
}

/// A network viewed as a scorer.
pub struct Net<'a> {
    pub params: &'a NetworkParams,
    pub cfg: &'a NetworkConfig,
}

impl Scorer for Net<'_> {
    fn scores(&self, zs: ArrayView2<f64>) -> Result<Array1<f64>> {
        forward_batch(self.params, self.cfg, zs)
    }
}

impl<F> Scorer for F
where
    F: Fn(ArrayView2<f64>) -> Result<Array1<f64>>,
{
    fn scores(&self, zs: ArrayView2<f64>) -> Result<Array1<f64>> {
        self(zs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Agreement {
    pub rate: f64,
    pub n_excluded: usize,
    pub n_used: usize,
}

/// Fraction of probes on which two scorers agree in sign.
///
/// A probe is excluded when either score is within `band` times that
/// scorer's own median absolute score, so scorers on different scales are
/// banded fairly.
pub fn sign_agreement(a: &dyn Scorer, b: &dyn Scorer, probes: ArrayView2<f64>, band: f64) -> Result<Agreement> {
    if probes.nrows() == 0 {
        return Err(Error::InvalidArgument("no probes".into()));
    }
    let fa = a.scores(probes)?;
    let fb = b.scores(probes)?;
    agreement_from_scores(fa.view(), fb.view(), band)
}

pub fn agreement_from_scores(fa: ArrayView1<f64>, fb: ArrayView1<f64>, band: f64) -> Result<Agreement> {
    ensure_dim("score vectors", fa.len(), fb.len())?;
    let med = |f: ArrayView1<f64>| median(&f.iter().map(|v| v.abs()).collect::<Vec<_>>());
    let (ta, tb) = (band * med(fa), band * med(fb));
    let mut used = 0usize;
    let mut agree = 0usize;
    for (&x, &y) in fa.iter().zip(fb.iter()) {
        if x.abs() < ta || y.abs() < tb || x == 0.0 || y == 0.0 {
            continue;
        }
        used += 1;
        if (x > 0.0) == (y > 0.0) {
            agree += 1;
        }
    }
    if used == 0 {
        return Err(Error::AllExcluded(fa.len()));
    }
    Ok(Agreement {
        rate: agree as f64 / used as f64,
        n_excluded: fa.len() - used,
        n_used: used,
    })
}

/// The two terms of the boundary learned from geometry-L2 perturbations of
/// the natural samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryTerms {
    /// Contribution of the (mislabeled) base samples.
    pub t1: f64,
    /// Contribution of the perturbations.
    pub t2: f64,
}

/// `T1 = Σ λ^adv y^adv ⟨x_n, z⟩ / Σ λ^adv` and `T2 = ε f^bdy(z)/‖q‖`.
pub fn boundary_terms(
    nat_model: &BoundaryModel,
    adv_lambdas: ArrayView1<f64>,
    adv_targets: ArrayView1<f64>,
    epsilon: f64,
    z: ArrayView1<f64>,
) -> Result<BoundaryTerms> {
    let BoundaryModel::LambdaExact { reference, q, .. } = nat_model else {
        return Err(Error::InvalidArgument("boundary_terms needs an exact-λ natural model".into()));
    };
    ensure_dim("adversarial lambdas", reference.n(), adv_lambdas.len())?;
    ensure_dim("adversarial targets", reference.n(), adv_targets.len())?;
    let qn = norm(q.view());
    if !(qn > 1e-12) {
        return Err(Error::Degenerate(format!("‖q‖ = {qn:e}")));
    }
    let ip = reference.x.dot(&z);
    let num = compensated_sum((0..reference.n()).map(|n| adv_lambdas[n] * adv_targets[n] * ip[n]));
    let den = compensated_sum(adv_lambdas.iter().copied());
    Ok(BoundaryTerms {
        t1: num / den,
        t2: epsilon * nat_model.fbdy_eval(z)? / qn,
    })
}

/// `Σ λ^adv y^adv ⟨x^adv, z⟩ / Σ λ^adv`, the normalized boundary of a
/// network trained on an adversarial set.
pub fn adversarial_boundary(xadv: ArrayView2<f64>, adv_lambdas: ArrayView1<f64>, adv_targets: ArrayView1<f64>, z: ArrayView1<f64>) -> Result<f64> {
    ensure_dim("adversarial lambdas", xadv.nrows(), adv_lambdas.len())?;
    ensure_dim("adversarial targets", xadv.nrows(), adv_targets.len())?;
    ensure_dim("probe", xadv.ncols(), z.len())?;
    let ip = xadv.dot(&z);
    let num = compensated_sum((0..xadv.nrows()).map(|n| adv_lambdas[n] * adv_targets[n] * ip[n]));
    Ok(num / compensated_sum(adv_lambdas.iter().copied()))
}

/// Signs of a scorer on a square grid in the plane spanned by `v̂` and `û`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionMap {
    pub half_width: f64,
    pub resolution: usize,
    /// Grid coordinates, shared by both axes.
    pub coords: Vec<f64>,
    /// `signs[[i, j]]` is the sign at `α = coords[j]`, `β = coords[i]`.
    pub signs: Array2<i8>,
    pub v_hat: Array1<f64>,
    pub u_hat: Array1<f64>,
    /// `(⟨x, v̂⟩, ⟨x, û⟩, y)` for every sample of each supplied dataset.
    pub projections: Vec<Vec<(f64, f64, f64)>>,
}

impl DecisionMap {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("alpha,beta,sign\n");
        for (i, beta) in self.coords.iter().enumerate() {
            for (j, alpha) in self.coords.iter().enumerate() {
                out.push_str(&format!("{alpha},{beta},{}\n", self.signs[[i, j]]));
            }
        }
        out
    }

    /// Fraction of grid cells where two maps agree.
    pub fn agreement(&self, other: &DecisionMap) -> f64 {
        let same = self.signs.iter().zip(other.signs.iter()).filter(|(a, b)| a == b).count();
        same as f64 / self.signs.len() as f64
    }
}

pub fn decision_map(
    f: &dyn Scorer,
    v: ArrayView1<f64>,
    u: ArrayView1<f64>,
    half_width: f64,
    resolution: usize,
    datasets: &[&Dataset],
) -> Result<DecisionMap> {
    ensure_dim("u", v.len(), u.len())?;
    if resolution == 0 || !(half_width > 0.0) {
        return Err(Error::InvalidArgument("need resolution ≥ 1 and half_width > 0".into()));
    }
    let (nv, nu) = (norm(v), norm(u));
    if nv == 0.0 || nu == 0.0 {
        return Err(Error::Degenerate("zero axis vector".into()));
    }
    let v_hat = v.mapv(|x| x / nv);
    let u_hat = u.mapv(|x| x / nu);
    if v_hat.dot(&u_hat).abs() > 1.0 - 1e-12 {
        return Err(Error::Degenerate("v and u are parallel".into()));
    }
    let coords: Vec<f64> = if resolution == 1 {
        vec![0.0]
    } else {
        (0..resolution)
            .map(|k| -half_width + 2.0 * half_width * k as f64 / (resolution - 1) as f64)
            .collect()
    };
    let mut zs = Array2::<f64>::zeros((resolution * resolution, v.len()));
    for (i, beta) in coords.iter().enumerate() {
        for (j, alpha) in coords.iter().enumerate() {
            let mut row = zs.row_mut(i * resolution + j);
            row.scaled_add(*alpha, &v_hat);
            row.scaled_add(*beta, &u_hat);
        }
    }
    let scores = f.scores(zs.view())?;
    let signs = Array2::from_shape_fn((resolution, resolution), |(i, j)| {
        let s = scores[i * resolution + j];
        if s > 0.0 {
            1
        } else if s < 0.0 {
            -1
        } else {
            0
        }
    });
    let projections = datasets
        .iter()
        .map(|ds| {
            ensure_dim("dataset columns", v.len(), ds.d())?;
            let pv = ds.x.dot(&v_hat);
            let pu = ds.x.dot(&u_hat);
            Ok((0..ds.n()).map(|n| (pv[n], pu[n], ds.y[n])).collect())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DecisionMap {
        half_width,
        resolution,
        coords,
        signs,
        v_hat,
        u_hat,
        projections,
    })
}
