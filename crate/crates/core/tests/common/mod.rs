#![allow(dead_code)]

use advfeat_core::data::{Dataset, Source};
use advfeat_core::net::{init_params, loss, LossKind, NetworkConfig, NetworkParams};
use advfeat_core::rng::stream;
use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::StandardNormal;

/// A random network and batch with every pre-activation at least `1e-3`
/// away from the kink.
pub struct KinkFree {
    pub cfg: NetworkConfig,
    pub params: NetworkParams,
    pub xs: Array2<f64>,
    pub ys: Array1<f64>,
}

pub fn kink_free(seed: u64) -> KinkFree {
    let mut rng = stream(seed, "tests/kink_free");
    loop {
        let d = rng.random_range(2..12);
        let m_plus = rng.random_range(1..5);
        let m_minus = rng.random_range(1..5);
        let gamma = rng.random_range(0.05..0.95);
        let n = rng.random_range(1..6);
        let cfg = NetworkConfig::split(d, m_plus, m_minus, gamma).unwrap().with_init_scale(1.0);
        let params = init_params(&cfg, rng.random());
        let xs = Array2::from_shape_simple_fn((n, d), || rng.sample::<f64, _>(StandardNormal));
        let ys = Array1::from_shape_simple_fn(n, || if rng.random::<bool>() { 1.0 } else { -1.0 });
        let pre = xs.dot(&params.w.t());
        if pre.iter().all(|z| z.abs() > 1e-3) {
            return KinkFree { cfg, params, xs, ys };
        }
    }
}

/// Central differences of the mean loss with respect to every weight.
pub fn fd_weight_grad(k: &KinkFree, kind: LossKind, h: f64) -> Array2<f64> {
    let mut g = Array2::zeros(k.params.w.dim());
    for idx in ndarray::indices(k.params.w.dim()) {
        let mut p = k.params.clone();
        p.w[idx] += h;
        let up = loss(&p, &k.cfg, k.xs.view(), k.ys.view(), kind).unwrap();
        p.w[idx] -= 2.0 * h;
        let down = loss(&p, &k.cfg, k.xs.view(), k.ys.view(), kind).unwrap();
        g[idx] = (up - down) / (2.0 * h);
    }
    g
}

pub fn fd_input_grad(k: &KinkFree, x: &Array1<f64>, h: f64) -> Array1<f64> {
    let f = |x: &Array1<f64>| advfeat_core::net::forward(&k.params, &k.cfg, x.view()).unwrap();
    Array1::from_iter((0..x.len()).map(|i| {
        let mut a = x.clone();
        a[i] += h;
        let mut b = x.clone();
        b[i] -= h;
        (f(&a) - f(&b)) / (2.0 * h)
    }))
}

pub fn relative_error(got: &[f64], want: &[f64]) -> f64 {
    let diff: f64 = got.iter().zip(want).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let scale: f64 = want.iter().map(|b| b * b).sum::<f64>().sqrt();
    diff / scale.max(1e-12)
}

pub fn labelled(x: Array2<f64>, y: Array1<f64>) -> Dataset {
    Dataset::from_parts(x, y, Source::File, 0, 1.0).unwrap()
}

/// Relative gap between the boundary of a geometry-L2 adversarial set and
/// `T1 + T2`, for one random natural set, target draw, and probe.
pub fn decomposition_gap(seed: u64) -> f64 {
    use advfeat_core::attack::{geometry_l2, target_labels, TargetRule};
    use advfeat_core::boundary::{adversarial_boundary, boundary_terms, solve_lambda, BoundaryModel};
    use advfeat_core::data::gen_orthogonal_dataset;

    let mut rng = stream(seed, "tests/decomposition");
    loop {
        let d = rng.random_range(16..80);
        let n = rng.random_range(2..8);
        let nat = gen_orthogonal_dataset(d, n, rng.random(), (d as f64).sqrt()).unwrap();
        let model = BoundaryModel::lambda_exact(&nat, 0.5, 2, 2).unwrap();
        let rule = if rng.random::<bool>() { TargetRule::Flip } else { TargetRule::RandomPm1 };
        let targets = target_labels(&rule, nat.y.view(), n, rng.random()).unwrap();
        let eps = rng.random_range(0.01..1.0);
        let adv = geometry_l2(&nat, &model, eps, &targets).unwrap();
        let Ok(adv_lambda) = solve_lambda(&adv.as_training_set(seed), 0.5, 2, 2) else {
            continue;
        };
        let z = Array1::from_shape_simple_fn(d, || rng.sample::<f64, _>(StandardNormal));
        let whole = adversarial_boundary(adv.xadv.view(), adv_lambda.view(), targets.view(), z.view()).unwrap();
        let t = boundary_terms(&model, adv_lambda.view(), targets.view(), eps, z.view()).unwrap();
        return ((t.t1 + t.t2) - whole).abs() / whole.abs().max(1e-300);
    }
}

/// Smallest cosine between PGD-L2 perturbations and the geometry-L2 ones on
/// a globally linear network (rows `w` and `−w`).
pub fn linear_pgd_cosine(seed: u64) -> f64 {
    use advfeat_core::attack::{geometry_l2, pgd, target_labels, AttackSpec, Norm, TargetRule};
    use advfeat_core::boundary::BoundaryModel;
    use advfeat_core::data::gen_dataset;
    use advfeat_core::linalg::cosine;

    let d = 32;
    let cfg = NetworkConfig::balanced(d, 2, 0.5).unwrap();
    let mut rng = stream(seed, "tests/linear_pgd");
    let w = Array1::from_shape_simple_fn(d, || rng.sample::<f64, _>(StandardNormal));
    let mut params = NetworkParams::zeros(&cfg);
    params.w.row_mut(0).assign(&w);
    params.w.row_mut(1).assign(&-&w);
    let base = gen_dataset(Source::Gaussian, d, 20, seed, 1.0).unwrap();
    let targets = target_labels(&TargetRule::RandomPm1, base.y.view(), 20, seed).unwrap();
    let spec = AttackSpec::pgd(Norm::L2, Some(0.7), None);
    let adv = pgd(&params, &cfg, &base, &spec, &targets).unwrap();
    let geo = geometry_l2(&base, &BoundaryModel::empirical(&params, &cfg), 0.7, &targets).unwrap();
    adv.eta
        .rows()
        .into_iter()
        .zip(geo.eta.rows())
        .map(|(a, b)| cosine(a, b))
        .fold(f64::INFINITY, f64::min)
}
