//! Matrix products and the SVD-based rank machinery.
//!
//! The SVD is a one-sided (Hestenes) Jacobi iteration: columns of a working
//! copy of `W` are rotated pairwise until every pair is orthogonal to a
//! relative tolerance of `1e-12`. The accumulated rotations form `V`, the
//! final column norms are the singular values and the normalized columns
//! form `U`.

use super::{NumericsError, Result, Tensor};

/// Relative orthogonality threshold between column pairs.
pub const JACOBI_TOL: f64 = 1e-12;
/// Sweep budget before reporting non-convergence.
pub const JACOBI_MAX_SWEEPS: usize = 60;

/// Strided view of a row-major or transposed matrix operand.
#[derive(Clone, Copy)]
pub(crate) struct MatRef<'a> {
    pub data: &'a [f64],
    pub rs: isize,
    pub cs: isize,
}

impl<'a> MatRef<'a> {
    pub fn rows(data: &'a [f64], cols: usize) -> Self {
        Self {
            data,
            rs: cols as isize,
            cs: 1,
        }
    }

    /// The transpose of a row-major matrix with `cols` columns.
    pub fn transposed(data: &'a [f64], cols: usize) -> Self {
        Self {
            data,
            rs: 1,
            cs: cols as isize,
        }
    }
}

/// `c ← alpha·a·b + beta·c` where `a` is m×k, `b` is k×n and `c` is a
/// row-major m×n buffer.
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: MatRef<'_>,
    b: MatRef<'_>,
    beta: f64,
    c: &mut [f64],
) {
    gemm_ld(m, k, n, alpha, a, b, beta, c, n);
}

/// [`gemm`] into an output whose rows are `ldc` apart.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm_ld(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: MatRef<'_>,
    b: MatRef<'_>,
    beta: f64,
    c: &mut [f64],
    ldc: usize,
) {
    assert!(ldc >= n);
    assert!(m == 0 || c.len() >= (m - 1) * ldc + n);
    if m == 0 || n == 0 {
        return;
    }
    let span = |r: usize, cc: usize, mat: &MatRef<'_>| {
        if r == 0 || cc == 0 {
            0
        } else {
            ((r - 1) as isize * mat.rs + (cc - 1) as isize * mat.cs) as usize + 1
        }
    };
    assert!(a.data.len() >= span(m, k, &a), "gemm: lhs too short");
    assert!(b.data.len() >= span(k, n, &b), "gemm: rhs too short");
    // SAFETY: the extents above bound every strided access of both operands
    // and the output, and the slices do not alias (`c` is a unique borrow).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            a.rs,
            a.cs,
            b.data.as_ptr(),
            b.rs,
            b.cs,
            beta,
            c.as_mut_ptr(),
            ldc as isize,
            1,
        );
    }
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.dims2()?;
    let (k2, n) = b.dims2()?;
    if k != k2 {
        return Err(NumericsError::Dimension(format!(
            "matmul inner extents differ: {m}×{k} by {k2}×{n}"
        )));
    }
    let mut out = vec![0.0; m * n];
    gemm(
        m,
        k,
        n,
        1.0,
        MatRef::rows(a.data(), k),
        MatRef::rows(b.data(), n),
        0.0,
        &mut out,
    );
    Tensor::new(vec![m, n], out)
}

/// Thin SVD `W = U·diag(s)·Vᵀ` with `r = min(m, n)` retained components.
#[derive(Clone, Debug)]
pub struct SvdResult {
    /// m×r, orthonormal columns.
    pub u: Tensor,
    /// Non-increasing, non-negative.
    pub s: Vec<f64>,
    /// n×r, orthonormal columns.
    pub v: Tensor,
    pub sweeps: usize,
}

impl SvdResult {
    pub fn rank(&self) -> usize {
        self.s.len()
    }

    /// `U[:, :k]·diag(s[:k])·V[:, :k]ᵀ`.
    pub fn reconstruct(&self, k: usize) -> Tensor {
        let (m, r) = self.u.dims2().expect("u is a matrix");
        let (n, _) = self.v.dims2().expect("v is a matrix");
        let k = k.min(r);
        let mut us = vec![0.0; m * k];
        for i in 0..m {
            for j in 0..k {
                us[i * k + j] = self.u.data()[i * r + j] * self.s[j];
            }
        }
        let mut out = vec![0.0; m * n];
        if k > 0 {
            gemm(
                m,
                k,
                n,
                1.0,
                MatRef::rows(&us, k),
                // V is n×r row-major; its leading k columns transposed
                MatRef {
                    data: self.v.data(),
                    rs: 1,
                    cs: r as isize,
                },
                0.0,
                &mut out,
            );
        }
        Tensor::new(vec![m, n], out).expect("reconstruction shape")
    }

    /// `s[k] / s[0]`, zero when the index is out of range or `s[0] == 0`.
    pub fn tail_ratio(&self, k: usize) -> f64 {
        match (self.s.first(), self.s.get(k)) {
            (Some(&s0), Some(&sk)) if s0 > 0.0 => sk / s0,
            _ => 0.0,
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in chunks * 4..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn rotate(cols: &mut [f64], len: usize, p: usize, q: usize, c: f64, s: f64) {
    debug_assert!(p < q);
    let (head, tail) = cols.split_at_mut(q * len);
    let xp = &mut head[p * len..(p + 1) * len];
    let xq = &mut tail[..len];
    for (a, b) in xp.iter_mut().zip(xq.iter_mut()) {
        let (ap, aq) = (*a, *b);
        *a = c * ap - s * aq;
        *b = s * ap + c * aq;
    }
}

/// Squared column norm at or below which a column is rounding noise:
/// (ε·len)²·‖A‖²_F. Such columns are skipped by the rotations and replaced
/// during basis completion.
fn negligible_sq(a: &[f64], len: usize) -> f64 {
    let total: f64 = a.iter().map(|x| x * x).sum();
    (f64::EPSILON * len as f64).powi(2) * total
}

/// One-sided Jacobi on `cols` column vectors of length `len` stored
/// contiguously. `v` holds `cols` columns of length `vlen` and receives the
/// same rotations. Returns the sweep count.
fn jacobi_columns(
    a: &mut [f64],
    len: usize,
    cols: usize,
    v: &mut [f64],
    vlen: usize,
) -> Result<usize> {
    let negligible = negligible_sq(a, len);
    let mut norms: Vec<f64> = (0..cols)
        .map(|j| {
            let c = &a[j * len..(j + 1) * len];
            dot(c, c)
        })
        .collect();
    for sweep in 1..=JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..cols.saturating_sub(1) {
            for q in p + 1..cols {
                let alpha = norms[p];
                let beta = norms[q];
                if alpha <= negligible || beta <= negligible {
                    continue;
                }
                let gamma = dot(&a[p * len..(p + 1) * len], &a[q * len..(q + 1) * len]);
                if gamma.abs() <= JACOBI_TOL * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(a, len, p, q, c, s);
                rotate(v, vlen, p, q, c, s);
                norms[p] = alpha - t * gamma;
                norms[q] = beta + t * gamma;
            }
        }
        if !rotated {
            return Ok(sweep);
        }
        for (j, n) in norms.iter_mut().enumerate() {
            let c = &a[j * len..(j + 1) * len];
            *n = dot(c, c);
        }
    }
    Err(NumericsError::NoConvergence {
        sweeps: JACOBI_MAX_SWEEPS,
    })
}

/// Replace each flagged column by a unit vector orthogonal to all others.
/// Each replacement starts from the coordinate axis with the largest
/// component outside the span of the accepted columns.
fn complete_basis(cols: &mut [f64], len: usize, ncols: usize, good: &mut [bool]) {
    // row_sq[i]: squared length of axis i projected onto the accepted span
    let mut row_sq = vec![0.0; len];
    for o in (0..ncols).filter(|&o| good[o]) {
        for (r, c) in row_sq.iter_mut().zip(&cols[o * len..(o + 1) * len]) {
            *r += c * c;
        }
    }
    for j in 0..ncols {
        if good[j] {
            continue;
        }
        let axis = (0..len).fold(0, |best, i| if row_sq[i] < row_sq[best] { i } else { best });
        let mut x = vec![0.0; len];
        x[axis] = 1.0;
        for _ in 0..2 {
            for o in 0..ncols {
                if !good[o] {
                    continue;
                }
                let col = &cols[o * len..(o + 1) * len];
                let proj = dot(col, &x);
                for (xi, ci) in x.iter_mut().zip(col) {
                    *xi -= proj * ci;
                }
            }
        }
        let norm = dot(&x, &x).sqrt();
        assert!(norm > 0.0, "basis completion needs len ≥ ncols");
        for ((dst, xi), r) in cols[j * len..(j + 1) * len]
            .iter_mut()
            .zip(&x)
            .zip(row_sq.iter_mut())
        {
            *dst = xi / norm;
            *r += *dst * *dst;
        }
        good[j] = true;
    }
}

/// Thin SVD of an m×n matrix by one-sided Jacobi.
pub fn svd(w: &Tensor) -> Result<SvdResult> {
    let (m, n) = w.dims2()?;
    if !w.is_finite() {
        return Err(NumericsError::NonFinite("svd input"));
    }
    if m < n {
        let t = svd(&w.transpose2()?)?;
        return Ok(SvdResult {
            u: t.v,
            s: t.s,
            v: t.u,
            sweeps: t.sweeps,
        });
    }
    // m ≥ n: rotate the n columns (each of length m), stored contiguously.
    let mut a = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            a[j * m + i] = w.data()[i * n + j];
        }
    }
    let mut v = vec![0.0; n * n];
    for j in 0..n {
        v[j * n + j] = 1.0;
    }
    let sweeps = jacobi_columns(&mut a, m, n, &mut v, n)?;
    finish(m, n, a, v, sweeps)
}

/// SVD seeded with an approximate right basis `v0` (n×n orthogonal), as
/// when tracking a matrix that changes slightly between calls. Rotating
/// `W·v0` needs far fewer sweeps when `v0` is close to the true basis.
pub fn svd_warm(w: &Tensor, v0: &Tensor) -> Result<SvdResult> {
    let (m, n) = w.dims2()?;
    if m < n || v0.shape() != [n, n] {
        return svd(w);
    }
    if !w.is_finite() {
        return Err(NumericsError::NonFinite("svd input"));
    }
    let mut wv = vec![0.0; m * n];
    gemm(
        m,
        n,
        n,
        1.0,
        MatRef::rows(w.data(), n),
        MatRef::rows(v0.data(), n),
        0.0,
        &mut wv,
    );
    let mut a = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            a[j * m + i] = wv[i * n + j];
        }
    }
    // columns of v0 as contiguous vectors
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            v[j * n + i] = v0.data()[i * n + j];
        }
    }
    let sweeps = jacobi_columns(&mut a, m, n, &mut v, n)?;
    finish(m, n, a, v, sweeps)
}

fn finish(m: usize, n: usize, mut a: Vec<f64>, v: Vec<f64>, sweeps: usize) -> Result<SvdResult> {
    let norms: Vec<f64> = (0..n)
        .map(|j| dot(&a[j * m..(j + 1) * m], &a[j * m..(j + 1) * m]).sqrt())
        .collect();
    let smax = norms.iter().cloned().fold(0.0, f64::max);
    let floor = (smax * f64::EPSILON * (m.max(n) as f64)).max(negligible_sq(&a, m).sqrt());
    let mut good = vec![false; n];
    for j in 0..n {
        if norms[j] > floor && norms[j] > f64::MIN_POSITIVE {
            for x in &mut a[j * m..(j + 1) * m] {
                *x /= norms[j];
            }
            good[j] = true;
        }
    }
    complete_basis(&mut a, m, n, &mut good);

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| norms[y].total_cmp(&norms[x]).then(x.cmp(&y)));

    let mut u = vec![0.0; m * n];
    let mut vv = vec![0.0; n * n];
    let mut s = Vec::with_capacity(n);
    for (dst, &src) in order.iter().enumerate() {
        s.push(norms[src]);
        for i in 0..m {
            u[i * n + dst] = a[src * m + i];
        }
        for i in 0..n {
            vv[i * n + dst] = v[src * n + i];
        }
    }
    Ok(SvdResult {
        u: Tensor::new(vec![m, n], u)?,
        s,
        v: Tensor::new(vec![n, n], vv)?,
        sweeps,
    })
}

/// Best rank-`k` approximation: keep the `k` largest singular values and
/// zero the rest.
pub fn rank_project(w: &Tensor, k: usize) -> Result<Tensor> {
    if k == 0 {
        return Err(NumericsError::Dimension("rank_project needs k ≥ 1".into()));
    }
    Ok(svd(w)?.reconstruct(k))
}
