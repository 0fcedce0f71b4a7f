//! Small dense linear-algebra helpers shared by the synthesis and simulation code.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Pivot threshold used when certifying positive definiteness.
pub const PD_PIVOT: f64 = 1e-12;

/// Returns `(s + sᵀ)/2`.
pub fn symmetrize(s: &DMatrix<f64>) -> DMatrix<f64> {
    (s + s.transpose()) * 0.5
}

/// Largest absolute entry of `s - sᵀ`.
pub fn asymmetry(s: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0_f64;
    for r in 0..s.nrows() {
        for c in (r + 1)..s.ncols() {
            worst = worst.max((s[(r, c)] - s[(c, r)]).abs());
        }
    }
    worst
}

/// Eigen-decomposition of a symmetric matrix with eigenvalues sorted ascending.
pub fn sym_eigen(s: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = s.nrows();
    if n == 0 {
        return (DVector::zeros(0), DMatrix::zeros(0, 0));
    }
    let eig = SymmetricEigen::new(symmetrize(s));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = DVector::from_iterator(n, order.iter().map(|&k| eig.eigenvalues[k]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

/// Largest eigenvalue of a symmetric matrix (`-inf` for an empty matrix).
pub fn max_eigenvalue(s: &DMatrix<f64>) -> f64 {
    let (values, _) = sym_eigen(s);
    values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Smallest eigenvalue of a symmetric matrix (`+inf` for an empty matrix).
pub fn min_eigenvalue(s: &DMatrix<f64>) -> f64 {
    let (values, _) = sym_eigen(s);
    values.iter().copied().fold(f64::INFINITY, f64::min)
}

/// `V diag(λ) Vᵀ`.
pub fn recompose(values: &DVector<f64>, vectors: &DMatrix<f64>) -> DMatrix<f64> {
    let mut scaled = vectors.clone();
    for (k, mut col) in scaled.column_iter_mut().enumerate() {
        col *= values[k];
    }
    symmetrize(&(scaled * vectors.transpose()))
}

/// Certifies `s ≻ 0` by an LDLᵀ-style elimination whose pivots must all exceed
/// `PD_PIVOT · max(1, max|diag|)`.
pub fn is_positive_definite(s: &DMatrix<f64>) -> bool {
    let n = s.nrows();
    if n != s.ncols() {
        return false;
    }
    if asymmetry(s) > 1e-10 * (1.0 + s.amax()) {
        return false;
    }
    let scale = (0..n).map(|k| s[(k, k)].abs()).fold(1.0_f64, f64::max);
    let mut l = DMatrix::<f64>::zeros(n, n);
    let mut d = vec![0.0; n];
    for j in 0..n {
        let mut pivot = s[(j, j)];
        for k in 0..j {
            pivot -= l[(j, k)] * l[(j, k)] * d[k];
        }
        if !(pivot > PD_PIVOT * scale) {
            return false;
        }
        d[j] = pivot;
        l[(j, j)] = 1.0;
        for i in (j + 1)..n {
            let mut v = s[(i, j)];
            for k in 0..j {
                v -= l[(i, k)] * l[(j, k)] * d[k];
            }
            l[(i, j)] = v / pivot;
        }
    }
    true
}

/// Inverse by Gaussian elimination with partial pivoting. `None` when a pivot
/// falls below `pivot_tol · max(1, ‖s‖_max)`.
pub fn inverse_checked(s: &DMatrix<f64>, pivot_tol: f64) -> Option<DMatrix<f64>> {
    let n = s.nrows();
    if n != s.ncols() {
        return None;
    }
    let scale = s.amax().max(1.0);
    let mut a = s.clone();
    let mut inv = DMatrix::<f64>::identity(n, n);
    for col in 0..n {
        let (mut best, mut best_row) = (0.0, col);
        for r in col..n {
            if a[(r, col)].abs() > best {
                best = a[(r, col)].abs();
                best_row = r;
            }
        }
        if best < pivot_tol * scale {
            return None;
        }
        a.swap_rows(col, best_row);
        inv.swap_rows(col, best_row);
        let p = a[(col, col)];
        for c in 0..n {
            a[(col, c)] /= p;
            inv[(col, c)] /= p;
        }
        for r in 0..n {
            if r != col {
                let f = a[(r, col)];
                if f != 0.0 {
                    for c in 0..n {
                        a[(r, c)] -= f * a[(col, c)];
                        inv[(r, c)] -= f * inv[(col, c)];
                    }
                }
            }
        }
    }
    Some(inv)
}

/// Induced 2-norm (largest singular value).
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    m.clone().svd(false, false).singular_values.max()
}

/// Length of the half-vectorization of a `d × d` symmetric matrix.
pub fn svec_len(d: usize) -> usize {
    d * (d + 1) / 2
}

/// Half-vectorization (upper triangle, row-major) with off-diagonal entries
/// scaled by √2 so that the Euclidean inner product equals the Frobenius one.
pub fn svec_into(s: &DMatrix<f64>, out: &mut [f64]) {
    let d = s.nrows();
    let mut k = 0;
    for r in 0..d {
        out[k] = s[(r, r)];
        k += 1;
        for c in (r + 1)..d {
            out[k] = std::f64::consts::SQRT_2 * 0.5 * (s[(r, c)] + s[(c, r)]);
            k += 1;
        }
    }
}

pub fn svec(s: &DMatrix<f64>) -> Vec<f64> {
    let mut out = vec![0.0; svec_len(s.nrows())];
    svec_into(s, &mut out);
    out
}

/// Inverse of [`svec_into`].
pub fn smat(v: &[f64], d: usize) -> DMatrix<f64> {
    let mut s = DMatrix::zeros(d, d);
    let mut k = 0;
    for r in 0..d {
        s[(r, r)] = v[k];
        k += 1;
        for c in (r + 1)..d {
            let x = v[k] * std::f64::consts::FRAC_1_SQRT_2;
            s[(r, c)] = x;
            s[(c, r)] = x;
            k += 1;
        }
    }
    s
}

/// Builds a matrix from row-major nested rows; `cols_if_empty` fixes the column
/// count for a matrix with no rows.
pub fn from_rows(rows: &[Vec<f64>], cols_if_empty: usize) -> Result<DMatrix<f64>, String> {
    if rows.is_empty() {
        return Ok(DMatrix::zeros(0, cols_if_empty));
    }
    let cols = rows[0].len();
    if let Some((r, row)) = rows.iter().enumerate().find(|(_, row)| row.len() != cols) {
        return Err(format!(
            "ragged matrix: row {} has {} entries, expected {}",
            r + 1,
            row.len(),
            cols
        ));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |r, c| rows[r][c]))
}

pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|r| m.row(r).iter().copied().collect()).collect()
}
