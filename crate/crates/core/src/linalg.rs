//! Small dense kernels that the rest of the crate leans on: compensated
//! sums, LU with partial pivoting, and row-wise modified Gram–Schmidt.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};

pub fn dot(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.dot(&b)
}

pub fn norm(a: ArrayView1<f64>) -> f64 {
    a.dot(&a).sqrt()
}

pub fn cosine(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot(a, b) / (na * nb)
}

/// Neumaier-compensated sum of a scalar sequence.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0_f64;
    let mut comp = 0.0_f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// `Σ_n coeffs[n] · rows[n]`, accumulated column by column with compensation.
pub fn weighted_row_sum(rows: ArrayView2<f64>, coeffs: ArrayView1<f64>) -> Array1<f64> {
    let d = rows.ncols();
    let mut sum = Array1::<f64>::zeros(d);
    let mut comp = Array1::<f64>::zeros(d);
    for (row, &c) in rows.axis_iter(Axis(0)).zip(coeffs.iter()) {
        for i in 0..d {
            let v = c * row[i];
            let s = sum[i];
            let t = s + v;
            if s.abs() >= v.abs() {
                comp[i] += (s - t) + v;
            } else {
                comp[i] += (v - t) + s;
            }
            sum[i] = t;
        }
    }
    sum + comp
}

/// Solves `A x = b` by LU factorization with partial pivoting.
///
/// A pivot smaller than `n · ε · max|A|` is reported as singular.
pub fn lu_solve(a: &Array2<f64>, b: &Array1<f64>) -> Result<Array1<f64>> {
    let n = a.nrows();
    if a.ncols() != n || b.len() != n {
        return Err(Error::DimensionMismatch {
            what: "lu_solve system",
            expected: n,
            got: if a.ncols() != n { a.ncols() } else { b.len() },
        });
    }
    let mut lu = a.clone();
    let mut rhs = b.clone();
    let scale = a.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let tiny = (n as f64) * f64::EPSILON * scale;
    for k in 0..n {
        let (p, pivot) = (k..n)
            .map(|r| (r, lu[[r, k]].abs()))
            .fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
        if pivot <= tiny || pivot == 0.0 {
            return Err(Error::Singular { col: k, pivot });
        }
        if p != k {
            for c in 0..n {
                lu.swap([k, c], [p, c]);
            }
            rhs.swap(k, p);
        }
        let pkk = lu[[k, k]];
        for r in (k + 1)..n {
            let factor = lu[[r, k]] / pkk;
            if factor == 0.0 {
                continue;
            }
            lu[[r, k]] = factor;
            for c in (k + 1)..n {
                lu[[r, c]] -= factor * lu[[k, c]];
            }
            rhs[r] -= factor * rhs[k];
        }
    }
    let mut x = Array1::<f64>::zeros(n);
    for k in (0..n).rev() {
        let mut acc = rhs[k];
        for c in (k + 1)..n {
            acc -= lu[[k, c]] * x[c];
        }
        x[k] = acc / lu[[k, k]];
    }
    Ok(x)
}

/// Orthonormalizes the rows of `m` in place with two passes of modified
/// Gram–Schmidt. Fails if a row becomes numerically dependent.
pub fn orthonormalize_rows(m: &mut Array2<f64>) -> Result<()> {
    let n = m.nrows();
    for i in 0..n {
        for _pass in 0..2 {
            for j in 0..i {
                let (done, mut rest) = m.view_mut().split_at(Axis(0), i);
                let basis = done.row(j);
                let mut row = rest.row_mut(0);
                let proj = row.dot(&basis);
                row.scaled_add(-proj, &basis);
            }
        }
        let mut row = m.row_mut(i);
        let len = row.dot(&row).sqrt();
        if !(len > 1e-10) {
            return Err(Error::Degenerate(format!("row {i} is linearly dependent")));
        }
        row.mapv_inplace(|v| v / len);
    }
    Ok(())
}

/// Median of a slice; NaNs are not expected.
pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of empty slice");
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn lu_solves_permuted_system() {
        let a = array![[0.0, 2.0, 1.0], [1.0, 1.0, 0.0], [3.0, 0.0, 1.0]];
        let x = array![1.0, -2.0, 0.5];
        let b = a.dot(&x);
        let got = lu_solve(&a, &b).unwrap();
        for (g, w) in got.iter().zip(x.iter()) {
            assert!((g - w).abs() < 1e-14);
        }
    }

    #[test]
    fn lu_reports_singular() {
        let a = array![[1.0, 2.0], [2.0, 4.0]];
        assert!(matches!(
            lu_solve(&a, &array![1.0, 1.0]),
            Err(Error::Singular { .. })
        ));
    }

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let vals = [1e16, 1.0, -1e16, 1.0];
        assert_eq!(compensated_sum(vals), 2.0);
    }

    #[test]
    fn gram_schmidt_rows_are_orthonormal() {
        let mut m = array![[1.0, 1.0, 0.0], [1.0, 0.0, 1.0], [0.0, 1.0, 1.0]];
        orthonormalize_rows(&mut m).unwrap();
        let g = m.dot(&m.t());
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((g[[i, j]] - want).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
