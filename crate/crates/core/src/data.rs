//! Datasets: generators for uniform, Gaussian, Rademacher and exactly
//! orthogonal samples, norm/correlation statistics, and the AFPD binary format.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::orthonormalize_rows;
use crate::rng::stream;

/// Where a dataset's samples came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Uniform,
    Gaussian,
    Rademacher,
    Orthogonalized,
    File,
}

impl Source {
    pub fn code(self) -> u8 {
        match self {
            Source::Uniform => 0,
            Source::Gaussian => 1,
            Source::Rademacher => 2,
            Source::Orthogonalized => 3,
            Source::File => 4,
        }
    }

    pub fn from_code(code: u8) -> Option<Source> {
        Some(match code {
            0 => Source::Uniform,
            1 => Source::Gaussian,
            2 => Source::Rademacher,
            3 => Source::Orthogonalized,
            4 => Source::File,
            _ => return None,
        })
    }
}

impl FromStr for Source {
    type Err = Error;

    fn from_str(s: &str) -> Result<Source> {
        match s.to_ascii_lowercase().as_str() {
            "uniform" => Ok(Source::Uniform),
            "gaussian" | "normal" => Ok(Source::Gaussian),
            "rademacher" => Ok(Source::Rademacher),
            "orthogonalized" | "orthogonal" => Ok(Source::Orthogonalized),
            "file" => Ok(Source::File),
            _ => Err(Error::UnknownSource(s.to_string())),
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Source::Uniform => "uniform",
            Source::Gaussian => "gaussian",
            Source::Rademacher => "rademacher",
            Source::Orthogonalized => "orthogonalized",
            Source::File => "file",
        };
        f.write_str(s)
    }
}

/// `N` samples in `R^d` with ±1 labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    /// Sample rows, `N × d`.
    pub x: Array2<f64>,
    /// Labels, each exactly `+1.0` or `-1.0`.
    pub y: Array1<f64>,
    pub source: Source,
    pub seed: u64,
    /// Per-entry amplitude of the generator (row norm for orthogonal sets is
    /// `scale · √d`).
    pub scale: f64,
}

impl Dataset {
    /// Wraps caller-supplied samples after validating the invariants.
    pub fn from_parts(x: Array2<f64>, y: Array1<f64>, source: Source, seed: u64, scale: f64) -> Result<Dataset> {
        let ds = Dataset { x, y, source, seed, scale };
        ds.validate()?;
        Ok(ds)
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    pub fn row(&self, n: usize) -> ArrayView1<'_, f64> {
        self.x.row(n)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n() == 0 || self.d() == 0 {
            return Err(Error::InvalidArgument("dataset needs N ≥ 1 and d ≥ 1".into()));
        }
        if self.y.len() != self.n() {
            return Err(Error::DimensionMismatch {
                what: "labels",
                expected: self.n(),
                got: self.y.len(),
            });
        }
        if let Some(i) = self.y.iter().position(|&v| v != 1.0 && v != -1.0) {
            return Err(Error::InvalidArgument(format!("label {i} is {} (must be ±1)", self.y[i])));
        }
        if self.x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite sample entry".into()));
        }
        if !(self.scale > 0.0) {
            return Err(Error::InvalidArgument("scale must be positive".into()));
        }
        Ok(())
    }

    /// 64-bit FNV-1a over the raw bytes of `x` and `y`.
    pub fn content_id(&self) -> u64 {
        let mut h: u64 = 0xCBF2_9CE4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x0000_0100_0000_01B3);
            }
        };
        eat(&(self.n() as u64).to_le_bytes());
        eat(&(self.d() as u64).to_le_bytes());
        for v in self.x.iter() {
            eat(&v.to_le_bytes());
        }
        for v in self.y.iter() {
            eat(&[*v as i8 as u8]);
        }
        h
    }

    /// Writes the samples as CSV with header `x0,...,x{d-1},y`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        let header: Vec<String> = (0..self.d()).map(|i| format!("x{i}")).chain(["y".to_string()]).collect();
        writeln!(w, "{}", header.join(","))?;
        for (row, y) in self.x.axis_iter(Axis(0)).zip(self.y.iter()) {
            for v in row.iter() {
                write!(w, "{v},")?;
            }
            writeln!(w, "{}", *y as i8)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Norm and correlation extremes of a sample set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrthoStats {
    pub r_max: f64,
    pub r_min: f64,
    /// Largest `|⟨x_n, x_k⟩|` over `n ≠ k`; zero for a single sample.
    pub p_max: f64,
}

pub(crate) fn random_labels<R: Rng>(rng: &mut R, n: usize) -> Array1<f64> {
    Array1::from_iter((0..n).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }))
}

/// Draws `n` samples with i.i.d. entries from `source`, scaled by `scale`,
/// and i.i.d. uniform ±1 labels.
///
/// `Orthogonalized` delegates to [`gen_orthogonal_dataset`] with row norm
/// `scale·√d`; `File` cannot be generated.
pub fn gen_dataset(source: Source, d: usize, n: usize, seed: u64, scale: f64) -> Result<Dataset> {
    if d == 0 || n == 0 {
        return Err(Error::InvalidArgument("d and n must be positive".into()));
    }
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::InvalidArgument("scale must be positive and finite".into()));
    }
    let mut rng = stream(seed, "data/x");
    let x = match source {
        Source::Uniform => {
            let dist = Uniform::new_inclusive(-1.0, 1.0).expect("valid bounds");
            Array2::from_shape_simple_fn((n, d), || scale * dist.sample(&mut rng))
        }
        Source::Gaussian => Array2::from_shape_simple_fn((n, d), || {
            let z: f64 = StandardNormal.sample(&mut rng);
            scale * z
        }),
        Source::Rademacher => {
            Array2::from_shape_simple_fn((n, d), || if rng.random::<bool>() { scale } else { -scale })
        }
        Source::Orthogonalized => {
            return gen_orthogonal_dataset(d, n, seed, scale * (d as f64).sqrt()).map(|mut ds| {
                ds.scale = scale;
                ds
            })
        }
        Source::File => {
            return Err(Error::InvalidArgument("`file` datasets are read from disk, not generated".into()))
        }
    };
    let y = random_labels(&mut stream(seed, "data/y"), n);
    Ok(Dataset { x, y, source, seed, scale })
}

/// `n` pairwise-orthogonal rows of length `norm`: a seeded Gaussian matrix
/// passed through modified Gram–Schmidt, then rescaled.
pub fn gen_orthogonal_dataset(d: usize, n: usize, seed: u64, norm: f64) -> Result<Dataset> {
    if n > d {
        return Err(Error::InvalidArgument(format!("cannot fit {n} orthogonal rows in dimension {d}")));
    }
    if n == 0 || !(norm > 0.0 && norm.is_finite()) {
        return Err(Error::InvalidArgument("need n ≥ 1 and a positive finite norm".into()));
    }
    let x = orthogonal_rows(d, n, seed, "data/ortho")?.mapv(|v| v * norm);
    let y = random_labels(&mut stream(seed, "data/y"), n);
    Ok(Dataset {
        x,
        y,
        source: Source::Orthogonalized,
        seed,
        scale: norm / (d as f64).sqrt(),
    })
}

/// Orthonormal `n × d` rows drawn from the stream `(seed, tag)`.
pub(crate) fn orthogonal_rows(d: usize, n: usize, seed: u64, tag: &str) -> Result<Array2<f64>> {
    let mut rng = stream(seed, tag);
    let mut g = Array2::from_shape_simple_fn((n, d), || {
        let z: f64 = StandardNormal.sample(&mut rng);
        z
    });
    orthonormalize_rows(&mut g)?;
    Ok(g)
}

/// Exact `O(N²d)` norms and off-diagonal inner-product extreme.
pub fn ortho_stats(ds: &Dataset) -> OrthoStats {
    let gram = ds.x.dot(&ds.x.t());
    stats_from_gram(&gram)
}

pub(crate) fn stats_from_gram(gram: &Array2<f64>) -> OrthoStats {
    let n = gram.nrows();
    let mut r_max = 0.0_f64;
    let mut r_min = f64::INFINITY;
    let mut p_max = 0.0_f64;
    for i in 0..n {
        let r = gram[[i, i]].max(0.0).sqrt();
        r_max = r_max.max(r);
        r_min = r_min.min(r);
        for j in 0..n {
            if i != j {
                p_max = p_max.max(gram[[i, j]].abs());
            }
        }
    }
    OrthoStats { r_max, r_min, p_max }
}

const DATASET_MAGIC: &[u8; 4] = b"AFPD";
const DATASET_VERSION: u32 = 1;

/// Extra payload carried by adversarial (kind = 1) AFPD files.
#[derive(Debug, Clone, PartialEq)]
pub struct AdvPayload {
    pub targets: Array1<f64>,
    /// Content id of the base dataset the perturbations were applied to.
    pub provenance: u64,
    /// Per-sample support indices, present for L0 attacks.
    pub support: Option<Vec<Vec<usize>>>,
}

/// Writes a plain dataset.
pub fn write_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    write_afpd(ds, None, path)
}

/// Reads a plain dataset; adversarial files are accepted and their extras
/// dropped.
pub fn read_dataset(path: &Path) -> Result<Dataset> {
    read_afpd(path).map(|(ds, _)| ds)
}

pub fn write_afpd(ds: &Dataset, adv: Option<&AdvPayload>, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(DATASET_MAGIC)?;
    w.write_all(&DATASET_VERSION.to_le_bytes())?;
    w.write_all(&[u8::from(adv.is_some()), ds.source.code()])?;
    w.write_all(&ds.seed.to_le_bytes())?;
    w.write_all(&(ds.n() as u64).to_le_bytes())?;
    w.write_all(&(ds.d() as u64).to_le_bytes())?;
    w.write_all(&ds.scale.to_le_bytes())?;
    for v in ds.x.iter() {
        w.write_all(&v.to_le_bytes())?;
    }
    let labels: Vec<u8> = ds.y.iter().map(|&v| v as i8 as u8).collect();
    w.write_all(&labels)?;
    if let Some(adv) = adv {
        let t: Vec<u8> = adv.targets.iter().map(|&v| v as i8 as u8).collect();
        w.write_all(&t)?;
        w.write_all(&adv.provenance.to_le_bytes())?;
        match &adv.support {
            None => w.write_all(&[0])?,
            Some(sets) => {
                w.write_all(&[1])?;
                for set in sets {
                    w.write_all(&(set.len() as u64).to_le_bytes())?;
                    for &i in set {
                        w.write_all(&(i as u64).to_le_bytes())?;
                    }
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, k: u64) -> Result<&'a [u8]> {
        let remaining = (self.buf.len() - self.pos) as u64;
        if k > remaining {
            return Err(Error::Truncated {
                path: self.path.to_path_buf(),
                needed: k,
                found: remaining,
            });
        }
        let k = k as usize;
        let s = &self.buf[self.pos..self.pos + k];
        self.pos += k;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn labels(&mut self, n: u64) -> Result<Array1<f64>> {
        let raw = self.take(n)?;
        raw.iter()
            .enumerate()
            .map(|(i, &b)| match b as i8 {
                1 => Ok(1.0),
                -1 => Ok(-1.0),
                other => Err(format_err(self.path, format!("label {i} is {other}"))),
            })
            .collect()
    }
}

fn format_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

/// Reads any AFPD file, returning the adversarial payload when `kind = 1`.
pub fn read_afpd(path: &Path) -> Result<(Dataset, Option<AdvPayload>)> {
    let mut buf = Vec::new();
    File::open(path)?.read_to_end(&mut buf)?;
    let mut c = Cursor { buf: &buf, pos: 0, path };
    if c.take(4).map_err(|_| format_err(path, "file shorter than magic"))? != DATASET_MAGIC {
        return Err(format_err(path, "bad magic (expected AFPD)"));
    }
    let version = c.u32()?;
    if version != DATASET_VERSION {
        return Err(format_err(path, format!("unsupported version {version}")));
    }
    let kind = c.u8()?;
    if kind > 1 {
        return Err(format_err(path, format!("unknown kind {kind}")));
    }
    let source = Source::from_code(c.u8()?).ok_or_else(|| format_err(path, "unknown source code"))?;
    let seed = c.u64()?;
    let n = c.u64()?;
    let d = c.u64()?;
    let scale = c.f64()?;
    let needed = n.checked_mul(d).and_then(|nd| nd.checked_mul(8)).unwrap_or(u64::MAX);
    let raw = c.take(needed)?;
    let values: Vec<f64> = raw.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(format_err(path, "non-finite sample value"));
    }
    let x = Array2::from_shape_vec((n as usize, d as usize), values)
        .map_err(|e| format_err(path, e.to_string()))?;
    let y = c.labels(n)?;
    let ds = Dataset { x, y, source, seed, scale };
    ds.validate().map_err(|e| format_err(path, e.to_string()))?;
    let adv = if kind == 1 {
        let targets = c.labels(n)?;
        let provenance = c.u64()?;
        let support = match c.u8()? {
            0 => None,
            1 => {
                let mut sets = Vec::with_capacity(n as usize);
                for _ in 0..n {
                    let len = c.u64()?;
                    if len > d {
                        return Err(format_err(path, "support list longer than d"));
                    }
                    let mut set = Vec::with_capacity(len as usize);
                    for _ in 0..len {
                        set.push(c.u64()? as usize);
                    }
                    sets.push(set);
                }
                Some(sets)
            }
            other => return Err(format_err(path, format!("bad support flag {other}"))),
        };
        Some(AdvPayload { targets, provenance, support })
    } else {
        None
    };
    if c.pos != buf.len() {
        return Err(format_err(path, format!("{} trailing bytes", buf.len() - c.pos)));
    }
    Ok((ds, adv))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn toy(x: Array2<f64>) -> Dataset {
        let n = x.nrows();
        Dataset::from_parts(x, Array1::from_elem(n, 1.0), Source::File, 0, 1.0).unwrap()
    }

    #[test]
    fn uniform_entries_in_range() {
        let ds = gen_dataset(Source::Uniform, 4, 2, 7, 1.0).unwrap();
        assert!(ds.x.iter().all(|v| (-1.0..=1.0).contains(v)));
        assert!(ds.y.iter().all(|v| *v == 1.0 || *v == -1.0));
        let scaled = gen_dataset(Source::Uniform, 50, 20, 7, 0.25).unwrap();
        assert!(scaled.x.iter().all(|v| v.abs() <= 0.25));
    }

    #[test]
    fn rademacher_entries_are_signs() {
        let ds = gen_dataset(Source::Rademacher, 16, 8, 3, 2.0).unwrap();
        assert!(ds.x.iter().all(|v| v.abs() == 2.0));
    }

    #[test]
    fn generation_is_deterministic() {
        for src in [Source::Uniform, Source::Gaussian, Source::Rademacher, Source::Orthogonalized] {
            let a = gen_dataset(src, 12, 5, 99, 1.0).unwrap();
            let b = gen_dataset(src, 12, 5, 99, 1.0).unwrap();
            assert_eq!(a, b);
        }
        assert_ne!(
            gen_dataset(Source::Gaussian, 12, 5, 1, 1.0).unwrap().x,
            gen_dataset(Source::Gaussian, 12, 5, 2, 1.0).unwrap().x
        );
    }

    #[test]
    fn unknown_source_tag_is_rejected() {
        assert!(matches!("laplace".parse::<Source>(), Err(Error::UnknownSource(_))));
        assert_eq!("Uniform".parse::<Source>().unwrap(), Source::Uniform);
        assert!(gen_dataset(Source::File, 2, 2, 0, 1.0).is_err());
    }

    #[test]
    fn gaussian_norm_concentrates() {
        let d = 3000;
        let half_width = 5.0 * (d as f64).sqrt();
        let hits = (0..1000u64)
            .filter(|&s| {
                let ds = gen_dataset(Source::Gaussian, d, 1, s, 1.0).unwrap();
                let r2 = ds.x.row(0).dot(&ds.x.row(0));
                (r2 - d as f64).abs() <= half_width
            })
            .count();
        assert!(hits >= 990, "only {hits}/1000 within band");
    }

    #[test]
    fn orthonormal_triple() {
        let ds = gen_orthogonal_dataset(3, 3, 0, 1.0).unwrap();
        let g = ds.x.dot(&ds.x.t());
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((g[[i, j]] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn orthogonal_dataset_stats() {
        let r = 512f64.sqrt();
        let ds = gen_orthogonal_dataset(512, 64, 4, r).unwrap();
        let st = ortho_stats(&ds);
        assert!(st.p_max <= 1e-6);
        assert!((st.r_max - r).abs() <= 1e-9 && (st.r_min - r).abs() <= 1e-9);
        for row in ds.x.axis_iter(Axis(0)) {
            assert!((row.dot(&row).sqrt() / r - 1.0).abs() <= 1e-12);
        }
        let g = ds.x.dot(&ds.x.t());
        for i in 0..64 {
            for j in 0..64 {
                if i != j {
                    assert!(g[[i, j]].abs() <= 1e-9 * 512.0);
                }
            }
        }
    }

    #[test]
    fn orthogonal_rejects_overfull() {
        assert!(gen_orthogonal_dataset(3, 4, 0, 1.0).is_err());
    }

    #[test]
    fn ortho_stats_hand_cases() {
        let st = ortho_stats(&toy(array![[1.0, 0.0], [0.0, 1.0]]));
        assert_eq!(st, OrthoStats { r_max: 1.0, r_min: 1.0, p_max: 0.0 });
        let st = ortho_stats(&toy(array![[2.0, 0.0], [1.0, 1.0]]));
        assert_eq!(st.r_max, 2.0);
        assert!((st.r_min - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(st.p_max, 2.0);
        let st = ortho_stats(&toy(array![[3.0, 4.0]]));
        assert_eq!(st.p_max, 0.0);
        assert_eq!(st.r_max, 5.0);
    }

    #[test]
    fn afpd_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.afpd");
        let ds = gen_dataset(Source::Gaussian, 7, 5, 11, 0.5).unwrap();
        write_dataset(&ds, &path).unwrap();
        assert_eq!(read_dataset(&path).unwrap(), ds);

        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_dataset(&path), Err(Error::Format { .. })));

        write_dataset(&ds, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 20]).unwrap();
        assert!(matches!(read_dataset(&path), Err(Error::Truncated { .. })));

        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(42);
        bytes[18..26].copy_from_slice(&u64::MAX.to_le_bytes());
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_dataset(&path), Err(Error::Truncated { .. })));
    }

    #[test]
    fn afpd_rejects_non_finite() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nan.afpd");
        let mut ds = gen_dataset(Source::Uniform, 3, 2, 1, 1.0).unwrap();
        ds.x[[1, 2]] = f64::NAN;
        write_dataset(&ds, &path).unwrap();
        assert!(matches!(read_dataset(&path), Err(Error::Format { .. })));
    }

    #[test]
    fn adversarial_payload_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("adv.afpd");
        let ds = gen_dataset(Source::Uniform, 4, 3, 2, 1.0).unwrap();
        let adv = AdvPayload {
            targets: array![1.0, -1.0, -1.0],
            provenance: 0xDEAD_BEEF,
            support: Some(vec![vec![0, 3], vec![1], vec![]]),
        };
        write_afpd(&ds, Some(&adv), &path).unwrap();
        let (back, extra) = read_afpd(&path).unwrap();
        assert_eq!(back, ds);
        assert_eq!(extra.unwrap(), adv);
    }

    #[test]
    fn csv_header_and_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let ds = toy(array![[1.5, -2.0]]);
        ds.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "x0,x1,y\n1.5,-2,1\n");
    }
}
