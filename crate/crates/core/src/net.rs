//! One-hidden-layer leaky-ReLU network `f(x) = aᵀφ(Wx)` with a frozen last
//! layer: the first `m_plus` entries of `a` are `+1/√m`, the rest `-1/√m`.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, Error, Result};
use crate::rng::stream;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub d: usize,
    /// Hidden units with last-layer weight `+1/√m`.
    pub m_plus: usize,
    /// Hidden units with last-layer weight `-1/√m`.
    pub m_minus: usize,
    /// Leaky-ReLU slope in `(0, 1)`.
    pub gamma: f64,
    /// Standard deviation of initial weights is `init_scale/√d`.
    pub init_scale: f64,
}

impl NetworkConfig {
    /// Even width split into equal halves.
    pub fn balanced(d: usize, m: usize, gamma: f64) -> Result<NetworkConfig> {
        if m == 0 || !m.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!("balanced width must be a positive even integer, got {m}")));
        }
        NetworkConfig::split(d, m / 2, m / 2, gamma)
    }

    pub fn split(d: usize, m_plus: usize, m_minus: usize, gamma: f64) -> Result<NetworkConfig> {
        let cfg = NetworkConfig {
            d,
            m_plus,
            m_minus,
            gamma,
            init_scale: 0.01,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_init_scale(mut self, init_scale: f64) -> NetworkConfig {
        self.init_scale = init_scale;
        self
    }

    pub fn m(&self) -> usize {
        self.m_plus + self.m_minus
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.m() == 0 {
            return Err(Error::InvalidArgument("network needs d ≥ 1 and m ≥ 1".into()));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::InvalidArgument(format!("gamma must lie in (0,1), got {}", self.gamma)));
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return Err(Error::InvalidArgument("init_scale must be non-negative".into()));
        }
        Ok(())
    }

    /// The frozen last layer.
    pub fn last_layer(&self) -> Array1<f64> {
        let s = 1.0 / (self.m() as f64).sqrt();
        Array1::from_iter((0..self.m()).map(|j| if j < self.m_plus { s } else { -s }))
    }

    #[inline]
    pub fn phi(&self, z: f64) -> f64 {
        if z > 0.0 {
            z
        } else {
            self.gamma * z
        }
    }

    /// Derivative of φ with `φ'(0) = γ`.
    #[inline]
    pub fn dphi(&self, z: f64) -> f64 {
        if z > 0.0 {
            1.0
        } else {
            self.gamma
        }
    }
}

/// Hidden-layer weights, one row per unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    pub w: Array2<f64>,
}

impl NetworkParams {
    pub fn zeros(cfg: &NetworkConfig) -> NetworkParams {
        NetworkParams {
            w: Array2::zeros((cfg.m(), cfg.d)),
        }
    }

    pub fn frobenius(&self) -> f64 {
        self.w.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    fn check(&self, cfg: &NetworkConfig) -> Result<()> {
        ensure_dim("weight rows", cfg.m(), self.w.nrows())?;
        ensure_dim("weight columns", cfg.d, self.w.ncols())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Exponential,
    Logistic,
}

impl LossKind {
    pub fn value(self, margin: f64) -> f64 {
        match self {
            LossKind::Exponential => (-margin).exp(),
            LossKind::Logistic => softplus(-margin),
        }
    }

    /// `dℓ/dmargin`, always ≤ 0.
    pub fn derivative(self, margin: f64) -> f64 {
        match self {
            LossKind::Exponential => -(-margin).exp(),
            LossKind::Logistic => -sigmoid(-margin),
        }
    }
}

/// `ln(1 + e^t)` without overflow.
pub fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

pub fn init_params(cfg: &NetworkConfig, seed: u64) -> NetworkParams {
    let sd = cfg.init_scale / (cfg.d as f64).sqrt();
    let mut rng = stream(seed, "net/init");
    let w = Array2::from_shape_simple_fn((cfg.m(), cfg.d), || {
        let z: f64 = StandardNormal.sample(&mut rng);
        sd * z
    });
    NetworkParams { w }
}

pub fn forward(p: &NetworkParams, cfg: &NetworkConfig, x: ArrayView1<f64>) -> Result<f64> {
    p.check(cfg)?;
    ensure_dim("input", cfg.d, x.len())?;
    let pre = p.w.dot(&x);
    let s = 1.0 / (cfg.m() as f64).sqrt();
    let (pos, neg) = pre.view().split_at(Axis(0), cfg.m_plus);
    let pos: f64 = pos.iter().map(|&z| cfg.phi(z)).sum();
    let neg: f64 = neg.iter().map(|&z| cfg.phi(z)).sum();
    Ok(s * (pos - neg))
}

/// `f` on every row of `xs`.
pub fn forward_batch(p: &NetworkParams, cfg: &NetworkConfig, xs: ArrayView2<f64>) -> Result<Array1<f64>> {
    p.check(cfg)?;
    ensure_dim("input columns", cfg.d, xs.ncols())?;
    let pre = xs.dot(&p.w.t());
    Ok(outputs_from_pre(&pre, cfg))
}

fn outputs_from_pre(pre: &Array2<f64>, cfg: &NetworkConfig) -> Array1<f64> {
    let s = 1.0 / (cfg.m() as f64).sqrt();
    pre.axis_iter(Axis(0))
        .map(|row| {
            let mut acc = 0.0;
            for (j, &z) in row.iter().enumerate() {
                let v = cfg.phi(z);
                acc += if j < cfg.m_plus { v } else { -v };
            }
            s * acc
        })
        .collect()
}

/// Mean loss over the dataset rows `xs` with labels `ys`.
pub fn loss(p: &NetworkParams, cfg: &NetworkConfig, xs: ArrayView2<f64>, ys: ArrayView1<f64>, kind: LossKind) -> Result<f64> {
    let f = forward_batch(p, cfg, xs)?;
    ensure_dim("labels", xs.nrows(), ys.len())?;
    let n = ys.len() as f64;
    Ok(Zip::from(&f).and(&ys).fold(0.0, |acc, &fi, &yi| acc + kind.value(yi * fi)) / n)
}

/// Loss, its gradient with respect to `W`, and the margins, from one
/// forward pass.
pub fn loss_and_grad(
    p: &NetworkParams,
    cfg: &NetworkConfig,
    xs: ArrayView2<f64>,
    ys: ArrayView1<f64>,
    kind: LossKind,
) -> Result<(f64, Array2<f64>, Array1<f64>)> {
    p.check(cfg)?;
    ensure_dim("input columns", cfg.d, xs.ncols())?;
    ensure_dim("labels", xs.nrows(), ys.len())?;
    let n = xs.nrows();
    let pre = xs.dot(&p.w.t());
    let f = outputs_from_pre(&pre, cfg);
    let margins = &f * &ys;
    let loss = margins.iter().map(|&s| kind.value(s)).sum::<f64>() / n as f64;
    let a = cfg.last_layer();
    let mut coef = pre;
    for (i, mut row) in coef.axis_iter_mut(Axis(0)).enumerate() {
        let outer = kind.derivative(margins[i]) * ys[i] / n as f64;
        for (j, z) in row.iter_mut().enumerate() {
            *z = outer * a[j] * cfg.dphi(*z);
        }
    }
    let grad = coef.t().dot(&xs);
    Ok((loss, grad, margins))
}

pub fn grad_loss(p: &NetworkParams, cfg: &NetworkConfig, xs: ArrayView2<f64>, ys: ArrayView1<f64>, kind: LossKind) -> Result<Array2<f64>> {
    loss_and_grad(p, cfg, xs, ys, kind).map(|(_, g, _)| g)
}

/// `∇_x f(x)`.
pub fn grad_input(p: &NetworkParams, cfg: &NetworkConfig, x: ArrayView1<f64>) -> Result<Array1<f64>> {
    p.check(cfg)?;
    ensure_dim("input", cfg.d, x.len())?;
    let pre = p.w.dot(&x);
    let a = cfg.last_layer();
    let coef = Array1::from_iter(pre.iter().enumerate().map(|(j, &z)| a[j] * cfg.dphi(z)));
    Ok(p.w.t().dot(&coef))
}

/// `∇_x f` for every row of `xs`, as an `N × d` matrix.
pub fn grad_input_batch(p: &NetworkParams, cfg: &NetworkConfig, xs: ArrayView2<f64>) -> Result<Array2<f64>> {
    p.check(cfg)?;
    ensure_dim("input columns", cfg.d, xs.ncols())?;
    let mut coef = xs.dot(&p.w.t());
    let a = cfg.last_layer();
    for mut row in coef.axis_iter_mut(Axis(0)) {
        for (j, z) in row.iter_mut().enumerate() {
            *z = a[j] * cfg.dphi(*z);
        }
    }
    Ok(coef.dot(&p.w))
}

const PARAMS_MAGIC: &[u8; 4] = b"AFPW";
const PARAMS_VERSION: u32 = 1;

pub fn write_params(p: &NetworkParams, cfg: &NetworkConfig, path: &Path) -> Result<()> {
    p.check(cfg)?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(PARAMS_MAGIC)?;
    w.write_all(&PARAMS_VERSION.to_le_bytes())?;
    w.write_all(&(cfg.m() as u32).to_le_bytes())?;
    w.write_all(&(cfg.d as u64).to_le_bytes())?;
    w.write_all(&(cfg.m_plus as u32).to_le_bytes())?;
    w.write_all(&cfg.gamma.to_le_bytes())?;
    for v in p.w.iter() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a params file. `init_scale` is not stored and comes back as 0.
pub fn read_params(path: &Path) -> Result<(NetworkParams, NetworkConfig)> {
    let mut buf = Vec::new();
    File::open(path)?.read_to_end(&mut buf)?;
    let bad = |msg: &str| Error::Format {
        path: path.to_path_buf(),
        msg: msg.to_string(),
    };
    if buf.len() < 32 {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            needed: 32,
            found: buf.len() as u64,
        });
    }
    if &buf[0..4] != PARAMS_MAGIC {
        return Err(bad("bad magic (expected AFPW)"));
    }
    if u32::from_le_bytes(buf[4..8].try_into().unwrap()) != PARAMS_VERSION {
        return Err(bad("unsupported version"));
    }
    let m = u32::from_le_bytes(buf[8..12].try_into().unwrap()) as usize;
    let d = u64::from_le_bytes(buf[12..20].try_into().unwrap()) as usize;
    let m_plus = u32::from_le_bytes(buf[20..24].try_into().unwrap()) as usize;
    let gamma = f64::from_le_bytes(buf[24..32].try_into().unwrap());
    if m_plus > m {
        return Err(bad("m_plus exceeds m"));
    }
    let needed = (m as u64).checked_mul(d as u64).and_then(|v| v.checked_mul(8)).unwrap_or(u64::MAX);
    let found = (buf.len() - 32) as u64;
    if found != needed {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            needed,
            found,
        });
    }
    let values: Vec<f64> = buf[32..].chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(bad("non-finite weight"));
    }
    let w = Array2::from_shape_vec((m, d), values).map_err(|e| bad(&e.to_string()))?;
    let cfg = NetworkConfig {
        d,
        m_plus,
        m_minus: m - m_plus,
        gamma,
        init_scale: 0.0,
    };
    cfg.validate().map_err(|e| bad(&e.to_string()))?;
    Ok((NetworkParams { w }, cfg))
}
