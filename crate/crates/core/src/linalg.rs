//! Dense helpers on top of nalgebra: the standard symplectic structure,
//! symplectic sums, symmetric eigen-decompositions and invariant subspaces.

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;
pub type CMat = DMatrix<Complex<f64>>;

/// J = [[0, -I], [I, 0]] on R^{2k}, momentum coordinates first.
pub fn j_matrix(k: usize) -> Mat {
    let mut j = Mat::zeros(2 * k, 2 * k);
    for i in 0..k {
        j[(i, k + i)] = -1.0;
        j[(k + i, i)] = 1.0;
    }
    j
}

/// Interleaves 2k_i x 2k_i blocks so that momenta stay in the first half and
/// positions in the second half of the combined space.
pub fn symplectic_sum(blocks: &[&Mat]) -> Mat {
    let halves: Vec<usize> = blocks.iter().map(|b| b.nrows() / 2).collect();
    let k: usize = halves.iter().sum();
    let mut out = Mat::zeros(2 * k, 2 * k);
    let mut offset = 0;
    for (b, &kb) in blocks.iter().zip(&halves) {
        let map = |i: usize| if i < kb { offset + i } else { k + offset + (i - kb) };
        for i in 0..2 * kb {
            for j in 0..2 * kb {
                out[(map(i), map(j))] = b[(i, j)];
            }
        }
        offset += kb;
    }
    out
}

/// Inverse of [`symplectic_sum`]: extracts the block acting on the given
/// coordinate indices (indices into the k momentum slots).
pub fn symplectic_restrict(m: &Mat, slots: &[usize]) -> Mat {
    let k = m.nrows() / 2;
    let kb = slots.len();
    let map = |i: usize| if i < kb { slots[i] } else { k + slots[i - kb] };
    Mat::from_fn(2 * kb, 2 * kb, |i, j| m[(map(i), map(j))])
}

pub fn symmetrize(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

pub fn max_abs(m: &Mat) -> f64 {
    m.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

pub fn asymmetry(m: &Mat) -> f64 {
    max_abs(&(m - m.transpose()))
}

/// max |gᵀJg − J|, entrywise.
pub fn symplectic_defect(g: &Mat) -> f64 {
    let j = j_matrix(g.nrows() / 2);
    max_abs(&(g.transpose() * &j * g - j))
}

pub fn spectral_norm(m: &Mat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .fold(0.0_f64, |a, &s| a.max(s))
}

/// Eigenvalues (ascending) and matching eigenvectors of a symmetric matrix.
pub fn sym_eigen(m: &Mat) -> (Vec<f64>, Mat) {
    let n = m.nrows();
    if n == 0 {
        return (Vec::new(), Mat::zeros(0, 0));
    }
    let eig = symmetrize(m).symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = Mat::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// Counts of (negative, zero, positive) eigenvalues, zero meaning |λ| ≤ tol.
pub fn inertia(m: &Mat, tol: f64) -> (usize, usize, usize) {
    let (vals, _) = sym_eigen(m);
    let neg = vals.iter().filter(|&&v| v < -tol).count();
    let pos = vals.iter().filter(|&&v| v > tol).count();
    (neg, vals.len() - neg - pos, pos)
}

/// Orthonormal basis of the column space of a full-rank tall matrix.
pub fn orthonormal_columns(z: &Mat) -> Mat {
    if z.ncols() == 0 {
        return z.clone();
    }
    z.clone().qr().q()
}

/// A with AᵀM̂A = I, from the Cholesky factor M̂ = LLᵀ as A = L⁻ᵀ.
pub fn cholesky_a(m_hat: &Mat) -> Result<Mat> {
    if m_hat.nrows() == 0 {
        return Ok(Mat::zeros(0, 0));
    }
    let chol = symmetrize(m_hat)
        .cholesky()
        .ok_or_else(|| Error::Precondition("metric matrix is not positive definite".into()))?;
    let l_inv = chol
        .l()
        .try_inverse()
        .ok_or_else(|| Error::Precondition("singular Cholesky factor".into()))?;
    Ok(l_inv.transpose())
}

/// Pulls a nearly symplectic matrix back onto Sp(2k) with the Newton-type
/// correction G ← G(I + ½JE), E = GᵀJG − J. Returns the corrected matrix and
/// the size of the applied change.
pub fn resymplectify(g: &Mat) -> (Mat, f64) {
    let k = g.nrows() / 2;
    let j = j_matrix(k);
    let id = Mat::identity(2 * k, 2 * k);
    let mut cur = g.clone();
    for _ in 0..4 {
        let e = cur.transpose() * &j * &cur - &j;
        if max_abs(&e) < 1e-15 {
            break;
        }
        cur = &cur * (&id + &j * e * 0.5);
    }
    let change = max_abs(&(&cur - g));
    (cur, change)
}

pub fn complex_eigenvalues(m: &Mat) -> Vec<Complex<f64>> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    m.clone().complex_eigenvalues().iter().copied().collect()
}

/// Largest distance between matched elements of two complex multisets, using
/// greedy nearest matching (adequate for the well-separated spectra compared
/// in this crate). Returns infinity on a length mismatch.
pub fn multiset_distance(a: &[Complex<f64>], b: &[Complex<f64>]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    let mut used = vec![false; b.len()];
    let mut worst = 0.0_f64;
    for x in a {
        let mut best = (f64::INFINITY, usize::MAX);
        for (j, y) in b.iter().enumerate() {
            if !used[j] {
                let d = (x - y).norm();
                if d < best.0 {
                    best = (d, j);
                }
            }
        }
        used[best.1] = true;
        worst = worst.max(best.0);
    }
    worst
}

/// Matrix sign function by the scaled Newton iteration. Fails when the
/// spectrum touches the imaginary axis.
pub fn sign_function(a: &Mat) -> Result<Mat> {
    let n = a.nrows();
    let mut s = a.clone();
    for _ in 0..200 {
        let inv = s
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Precondition("matrix has an eigenvalue on the imaginary axis".into()))?;
        let det = s.determinant().abs();
        let mu = if det.is_finite() && det > 0.0 {
            det.powf(-1.0 / n as f64)
        } else {
            1.0
        };
        let next = (&s * mu + inv / mu) * 0.5;
        let delta = max_abs(&(&next - &s));
        let scale = max_abs(&next).max(1.0);
        s = next;
        if delta <= 1e-14 * scale {
            return Ok(s);
        }
    }
    Err(Error::NotConverged("matrix sign iteration".into()))
}

/// Orthonormal frames of the invariant subspaces for eigenvalues with positive
/// and negative real part.
pub fn invariant_subspaces(a: &Mat) -> Result<(Mat, Mat)> {
    let n = a.nrows();
    let s = sign_function(a)?;
    let id = Mat::identity(n, n);
    let range = |p: Mat| -> Mat {
        let svd = p.svd(true, false);
        let u = svd.u.expect("requested U");
        let mut cols: Vec<usize> = (0..n).filter(|&i| svd.singular_values[i] > 0.5).collect();
        cols.sort_by(|&x, &y| svd.singular_values[y].total_cmp(&svd.singular_values[x]));
        let basis = Mat::from_fn(n, cols.len(), |r, c| u[(r, cols[c])]);
        orthonormal_columns(&basis)
    };
    let plus = range((&id + &s) * 0.5);
    let minus = range((&id - &s) * 0.5);
    Ok((plus, minus))
}

/// Right singular vectors spanning the numerical null space (σ ≤ tol).
pub fn null_space(m: &Mat, tol: f64) -> Mat {
    let n = m.ncols();
    if n == 0 {
        return Mat::zeros(0, 0);
    }
    let svd = m.clone().svd(false, true);
    let vt = svd.v_t.expect("requested Vᵀ");
    let sv = &svd.singular_values;
    let mut cols = Vec::new();
    for i in 0..sv.len() {
        if sv[i] <= tol {
            cols.push(i);
        }
    }
    // Rows beyond the rank of a wide matrix are also null directions.
    for i in sv.len()..n {
        cols.push(i);
    }
    Mat::from_fn(n, cols.len(), |r, c| vt[(cols[c], r)])
}

pub fn to_rows(m: &Mat) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

pub fn from_rows(rows: &[Vec<f64>]) -> Result<Mat> {
    let n = rows.len();
    let m = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != m) {
        return Err(Error::InvalidInput("ragged matrix rows".into()));
    }
    Ok(Mat::from_fn(n, m, |i, j| rows[i][j]))
}
