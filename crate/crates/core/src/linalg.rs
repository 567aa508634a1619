//! Weighted dense linear algebra for tall-skinny and tiny matrices.
//!
//! All matrices are row-major [`ndarray::Array2<f64>`]. Factorizations are
//! written out here (Householder QR with column pivoting, cyclic Jacobi for
//! symmetric eigenproblems, one-sided Jacobi for small SVDs, LU with partial
//! pivoting) so results are bit-reproducible and independent of any LAPACK.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};

pub type Matrix = Array2<f64>;
pub type Vector = Array1<f64>;

/// A singular value is treated as zero below this fraction of the largest one.
pub const RANK_TOL: f64 = 1e-12;

/// Eigenvalue floor (relative to the largest eigenvalue) used when a rank is
/// read off a correlation matrix. Eigenvalues of a Gram matrix carry an
/// absolute error of roughly `eps * lambda_max`, so `RANK_TOL` cannot be
/// resolved through that route.
pub const GRAM_RANK_TOL: f64 = 1e-13;

/// Matrices larger than this go through tridiagonal QL instead of Jacobi.
const JACOBI_MAX: usize = 48;

/// Diagonal spatial and probabilistic quadrature weights.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureWeights {
    wx: Vector,
    wxi: Vector,
}

impl QuadratureWeights {
    pub fn new(wx: Vector, wxi: Vector) -> Result<Self> {
        if wx.is_empty() || wxi.is_empty() {
            return Err(Error::InvalidArgument("quadrature weights must be non-empty".into()));
        }
        if let Some(i) = wx.iter().position(|&w| !(w > 0.0 && w.is_finite())) {
            return Err(Error::InvalidArgument(format!("spatial weight {i} is not positive")));
        }
        if let Some(i) = wxi.iter().position(|&w| !(w > 0.0 && w.is_finite())) {
            return Err(Error::InvalidArgument(format!(
                "probability weight {i} is not positive"
            )));
        }
        let total: f64 = wxi.sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "probability weights sum to {total}, expected 1"
            )));
        }
        Ok(Self { wx, wxi })
    }

    /// Monte Carlo weights: every sample carries mass `1/s`.
    pub fn monte_carlo(wx: Vector, s: usize) -> Result<Self> {
        let wxi = Vector::from_elem(s, 1.0 / s as f64);
        Self::new(wx, wxi)
    }

    pub fn wx(&self) -> &Vector {
        &self.wx
    }

    pub fn wxi(&self) -> &Vector {
        &self.wxi
    }

    pub fn n(&self) -> usize {
        self.wx.len()
    }

    pub fn s(&self) -> usize {
        self.wxi.len()
    }
}

/// Scales row `k` of `a` by `w[k]`.
pub fn scale_rows(a: ArrayView2<f64>, w: ArrayView1<f64>) -> Matrix {
    let mut out = a.to_owned();
    for (mut row, &wk) in out.axis_iter_mut(Axis(0)).zip(w.iter()) {
        row *= wk;
    }
    out
}

/// `Aᵀ · diag(w) · B`.
pub fn weighted_inner(a: ArrayView2<f64>, b: ArrayView2<f64>, w: ArrayView1<f64>) -> Result<Matrix> {
    if a.nrows() != b.nrows() || a.nrows() != w.len() {
        return Err(Error::dims(
            "weighted_inner",
            format!("A, B and w with equal leading dimension {}", w.len()),
            format!("A {}x{}, B {}x{}", a.nrows(), a.ncols(), b.nrows(), b.ncols()),
        ));
    }
    Ok(a.t().dot(&scale_rows(b, w)))
}

/// `sqrt(sum_ij wx[i] * wxi[j] * V[i][j]^2)`.
pub fn weighted_frobenius(v: ArrayView2<f64>, w: &QuadratureWeights) -> Result<f64> {
    if v.nrows() != w.n() || v.ncols() != w.s() {
        return Err(Error::dims(
            "weighted_frobenius",
            format!("{}x{}", w.n(), w.s()),
            format!("{}x{}", v.nrows(), v.ncols()),
        ));
    }
    Ok(weighted_sq_sum(v, w.wx().view(), w.wxi().view()).sqrt())
}

pub(crate) fn weighted_sq_sum(v: ArrayView2<f64>, wx: ArrayView1<f64>, wxi: ArrayView1<f64>) -> f64 {
    let mut total = 0.0;
    for (row, &wi) in v.axis_iter(Axis(0)).zip(wx.iter()) {
        let mut acc = 0.0;
        for (&x, &wj) in row.iter().zip(wxi.iter()) {
            acc += wj * x * x;
        }
        total += wi * acc;
    }
    total
}

/// Householder QR with column pivoting: `M[:, pivot] = Q R`.
#[derive(Debug, Clone)]
pub struct PivotedQr {
    /// `m x min(m, k)` with orthonormal columns.
    pub q: Matrix,
    /// `min(m, k) x k` upper triangular, `|R_jj|` non-increasing.
    pub r: Matrix,
    /// Original column indices in pivot order (length `k`).
    pub pivot: Vec<usize>,
}

pub fn pivoted_qr(m: ArrayView2<f64>) -> Result<PivotedQr> {
    let (rows, cols) = m.dim();
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidArgument("pivoted_qr: empty matrix".into()));
    }
    let kk = rows.min(cols);
    let mut a = m.to_owned();
    let mut pivot: Vec<usize> = (0..cols).collect();
    let mut reflectors: Vec<Vector> = Vec::with_capacity(kk);

    for j in 0..kk {
        // Exact trailing column norms; ties keep the lowest column.
        let mut best = j;
        let mut best_norm = -1.0;
        for c in j..cols {
            let nrm: f64 = a.slice(s![j.., c]).iter().map(|x| x * x).sum();
            if nrm > best_norm {
                best_norm = nrm;
                best = c;
            }
        }
        if best != j {
            for i in 0..rows {
                a.swap([i, j], [i, best]);
            }
            pivot.swap(j, best);
        }

        let x = a.slice(s![j.., j]).to_owned();
        let norm_x = x.dot(&x).sqrt();
        let mut v = x;
        if norm_x > 0.0 {
            let alpha = if v[0] >= 0.0 { -norm_x } else { norm_x };
            v[0] -= alpha;
            let vn = v.dot(&v).sqrt();
            if vn > 0.0 {
                v /= vn;
                apply_reflector(&mut a, j, j, &v);
            } else {
                v.fill(0.0);
            }
            a[[j, j]] = alpha;
            for i in j + 1..rows {
                a[[i, j]] = 0.0;
            }
        } else {
            v.fill(0.0);
        }
        reflectors.push(v);
    }

    let mut r = Matrix::zeros((kk, cols));
    for i in 0..kk {
        for c in i..cols {
            r[[i, c]] = a[[i, c]];
        }
    }

    let mut q = Matrix::zeros((rows, kk));
    for i in 0..kk {
        q[[i, i]] = 1.0;
    }
    for j in (0..kk).rev() {
        apply_reflector(&mut q, j, j.min(kk), &reflectors[j]);
    }
    Ok(PivotedQr { q, r, pivot })
}

/// Applies `I - 2 v vᵀ` (v acting on rows `row0..`) to columns `col0..` of `a`.
fn apply_reflector(a: &mut Matrix, row0: usize, col0: usize, v: &Vector) {
    if v.iter().all(|&x| x == 0.0) {
        return;
    }
    let cols = a.ncols();
    for c in col0..cols {
        let mut dot = 0.0;
        for (k, &vk) in v.iter().enumerate() {
            dot += vk * a[[row0 + k, c]];
        }
        let f = 2.0 * dot;
        for (k, &vk) in v.iter().enumerate() {
            a[[row0 + k, c]] -= f * vk;
        }
    }
}

/// Eigen-decomposition of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct SymEig {
    /// Eigenvalues, descending.
    pub values: Vector,
    /// Orthonormal eigenvectors as columns, matching `values`.
    pub vectors: Matrix,
}

/// Symmetric eigen-decomposition by cyclic Jacobi rotations.
///
/// Eigenvalues come back sorted descending; each eigenvector is signed so its
/// largest-magnitude entry is positive.
pub fn sym_eig(c: ArrayView2<f64>) -> Result<SymEig> {
    let k = c.nrows();
    if c.ncols() != k {
        return Err(Error::dims("sym_eig", "square matrix", format!("{}x{}", k, c.ncols())));
    }
    let scale = c.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let mut asym = 0.0f64;
    for i in 0..k {
        for j in i + 1..k {
            asym = asym.max((c[[i, j]] - c[[j, i]]).abs());
        }
    }
    if asym > 1e-12 * scale {
        return Err(Error::NotSymmetric { asymmetry: asym });
    }

    let mut a = Matrix::zeros((k, k));
    for i in 0..k {
        for j in 0..k {
            a[[i, j]] = 0.5 * (c[[i, j]] + c[[j, i]]);
        }
    }
    if k > JACOBI_MAX {
        let (values, vectors) = tridiagonal_ql(a);
        return Ok(sorted_eig(values, vectors));
    }
    let mut v = Matrix::eye(k);
    let frob = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let floor = f64::EPSILON * 1e-6 * frob;

    for _sweep in 0..100 {
        let mut rotated = false;
        for p in 0..k {
            for q in p + 1..k {
                let apq = a[[p, q]];
                let app = a[[p, p]];
                let aqq = a[[q, q]];
                if apq.abs() <= floor || apq.abs() <= 0.5 * f64::EPSILON * (app.abs() * aqq.abs()).sqrt() {
                    continue;
                }
                rotated = true;
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta.abs() > 1e150 {
                    0.5 / theta
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let cs = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * cs;
                a[[p, p]] = app - t * apq;
                a[[q, q]] = aqq + t * apq;
                a[[p, q]] = 0.0;
                a[[q, p]] = 0.0;
                for r in 0..k {
                    if r != p && r != q {
                        let arp = a[[r, p]];
                        let arq = a[[r, q]];
                        let np = cs * arp - sn * arq;
                        let nq = sn * arp + cs * arq;
                        a[[r, p]] = np;
                        a[[p, r]] = np;
                        a[[r, q]] = nq;
                        a[[q, r]] = nq;
                    }
                }
                for r in 0..k {
                    let vrp = v[[r, p]];
                    let vrq = v[[r, q]];
                    v[[r, p]] = cs * vrp - sn * vrq;
                    v[[r, q]] = sn * vrp + cs * vrq;
                }
            }
        }
        if !rotated {
            break;
        }
    }

    Ok(sorted_eig(a.diag().to_owned(), v))
}

fn sorted_eig(diag: Vector, v: Matrix) -> SymEig {
    let k = diag.len();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| diag[j].total_cmp(&diag[i]).then(i.cmp(&j)));
    let values = Vector::from_iter(order.iter().map(|&i| diag[i]));
    let mut vectors = v.select(Axis(1), &order);
    for mut col in vectors.columns_mut() {
        if leading_sign(col.view()) < 0.0 {
            col.mapv_inplace(|x| -x);
        }
    }
    SymEig { values, vectors }
}

/// Householder tridiagonalization followed by implicit QL with shifts
/// (the EISPACK tred2/tql2 pair). Returns unsorted eigenvalues and vectors.
fn tridiagonal_ql(a: Matrix) -> (Vector, Matrix) {
    let n = a.nrows();
    let mut v = a;
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];

    for j in 0..n {
        d[j] = v[[n - 1, j]];
    }
    for i in (1..n).rev() {
        let mut scale = 0.0;
        let mut h = 0.0;
        for dk in d.iter().take(i) {
            scale += dk.abs();
        }
        if scale == 0.0 {
            e[i] = d[i - 1];
            for j in 0..i {
                d[j] = v[[i - 1, j]];
                v[[i, j]] = 0.0;
                v[[j, i]] = 0.0;
            }
        } else {
            for dk in d.iter_mut().take(i) {
                *dk /= scale;
                h += *dk * *dk;
            }
            let f = d[i - 1];
            let mut g = h.sqrt();
            if f > 0.0 {
                g = -g;
            }
            e[i] = scale * g;
            h -= f * g;
            d[i - 1] = f - g;
            for ej in e.iter_mut().take(i) {
                *ej = 0.0;
            }
            for j in 0..i {
                let f = d[j];
                v[[j, i]] = f;
                let mut g = e[j] + v[[j, j]] * f;
                for k in j + 1..i {
                    g += v[[k, j]] * d[k];
                    e[k] += v[[k, j]] * f;
                }
                e[j] = g;
            }
            let mut f = 0.0;
            for j in 0..i {
                e[j] /= h;
                f += e[j] * d[j];
            }
            let hh = f / (h + h);
            for j in 0..i {
                e[j] -= hh * d[j];
            }
            for j in 0..i {
                let (f, g) = (d[j], e[j]);
                for k in j..i {
                    v[[k, j]] -= f * e[k] + g * d[k];
                }
                d[j] = v[[i - 1, j]];
                v[[i, j]] = 0.0;
            }
        }
        d[i] = h;
    }
    for i in 0..n - 1 {
        v[[n - 1, i]] = v[[i, i]];
        v[[i, i]] = 1.0;
        let h = d[i + 1];
        if h != 0.0 {
            for k in 0..=i {
                d[k] = v[[k, i + 1]] / h;
            }
            for j in 0..=i {
                let mut g = 0.0;
                for k in 0..=i {
                    g += v[[k, i + 1]] * v[[k, j]];
                }
                for k in 0..=i {
                    v[[k, j]] -= g * d[k];
                }
            }
        }
        for k in 0..=i {
            v[[k, i + 1]] = 0.0;
        }
    }
    for j in 0..n {
        d[j] = v[[n - 1, j]];
        v[[n - 1, j]] = 0.0;
    }
    v[[n - 1, n - 1]] = 1.0;
    e[0] = 0.0;

    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;
    let mut f = 0.0;
    let mut tst1 = 0.0f64;
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n - 1 && e[m].abs() > f64::EPSILON * tst1 {
            m += 1;
        }
        if m > l {
            loop {
                let g = d[l];
                let mut p = (d[l + 1] - g) / (2.0 * e[l]);
                let mut r = p.hypot(1.0);
                if p < 0.0 {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let h = g - d[l];
                for di in d.iter_mut().skip(l + 2) {
                    *di -= h;
                }
                f += h;

                p = d[m];
                let (mut c, mut c2, mut c3) = (1.0, 1.0, 1.0);
                let el1 = e[l + 1];
                let (mut s, mut s2) = (0.0, 0.0);
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    let g = c * e[i];
                    let h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    for k in 0..n {
                        let h = v[[k, i + 1]];
                        v[[k, i + 1]] = s * v[[k, i]] + c * h;
                        v[[k, i]] = c * v[[k, i]] - s * h;
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= f64::EPSILON * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = 0.0;
    }
    (Vector::from(d), v)
}

/// Sign of the largest-magnitude entry (first one on ties); `1.0` for zero vectors.
pub fn leading_sign(x: ArrayView1<f64>) -> f64 {
    let mut best = 0.0f64;
    let mut sign = 1.0;
    for &xi in x.iter() {
        if xi.abs() > best {
            best = xi.abs();
            sign = if xi < 0.0 { -1.0 } else { 1.0 };
        }
    }
    sign
}

/// Thin SVD of a small `m x k` matrix (`m >= k`) by one-sided Jacobi.
#[derive(Debug, Clone)]
pub struct SmallSvd {
    pub u: Matrix,
    pub sigma: Vector,
    pub v: Matrix,
}

pub fn svd_small(a: ArrayView2<f64>) -> Result<SmallSvd> {
    let (m, k) = a.dim();
    if m < k {
        return Err(Error::dims("svd_small", "rows >= cols", format!("{m}x{k}")));
    }
    let mut w = a.to_owned();
    let mut v = Matrix::eye(k);
    for _sweep in 0..100 {
        let mut rotated = false;
        for p in 0..k {
            for q in p + 1..k {
                let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, 0.0);
                for i in 0..m {
                    let (x, y) = (w[[i, p]], w[[i, q]]);
                    alpha += x * x;
                    beta += y * y;
                    gamma += x * y;
                }
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = if zeta.abs() > 1e150 {
                    0.5 / zeta
                } else {
                    let sg = if zeta >= 0.0 { 1.0 } else { -1.0 };
                    sg / (zeta.abs() + (1.0 + zeta * zeta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let sn = c * t;
                for i in 0..m {
                    let (x, y) = (w[[i, p]], w[[i, q]]);
                    w[[i, p]] = c * x - sn * y;
                    w[[i, q]] = sn * x + c * y;
                }
                for i in 0..k {
                    let (x, y) = (v[[i, p]], v[[i, q]]);
                    v[[i, p]] = c * x - sn * y;
                    v[[i, q]] = sn * x + c * y;
                }
            }
        }
        if !rotated {
            break;
        }
    }

    let norms: Vec<f64> = w.columns().into_iter().map(|c| c.dot(&c).sqrt()).collect();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]).then(i.cmp(&j)));
    let sigma = Vector::from_iter(order.iter().map(|&i| norms[i]));
    let mut u = w.select(Axis(1), &order);
    let mut v = v.select(Axis(1), &order);
    for j in 0..k {
        if sigma[j] > 0.0 {
            let inv = 1.0 / sigma[j];
            u.column_mut(j).mapv_inplace(|x| x * inv);
        }
        if leading_sign(u.column(j)) < 0.0 {
            u.column_mut(j).mapv_inplace(|x| -x);
            v.column_mut(j).mapv_inplace(|x| -x);
        }
    }
    Ok(SmallSvd { u, sigma, v })
}

/// Singular values of a small matrix, descending.
pub fn singular_values_small(a: ArrayView2<f64>) -> Result<Vector> {
    if a.nrows() >= a.ncols() {
        Ok(svd_small(a)?.sigma)
    } else {
        Ok(svd_small(a.t())?.sigma)
    }
}

/// Singular values of an arbitrary dense matrix through the eigenvalues of
/// its smaller Gram matrix. Intended for diagnostics, not for tiny values.
pub fn gram_singular_values(a: ArrayView2<f64>) -> Result<Vector> {
    let g = if a.nrows() >= a.ncols() {
        a.t().dot(&a)
    } else {
        a.dot(&a.t())
    };
    let eig = sym_eig(g.view())?;
    Ok(eig.values.mapv(|l| l.max(0.0).sqrt()))
}

/// Spectral norm of a dense matrix.
pub fn spectral_norm(a: ArrayView2<f64>) -> Result<f64> {
    if a.is_empty() {
        return Ok(0.0);
    }
    Ok(gram_singular_values(a)?[0])
}

/// Rank-`r` weighted truncated SVD `V ≈ U diag(sigma) Yᵀ`.
#[derive(Debug, Clone)]
pub struct WeightedSvd {
    /// `n x r`, orthonormal under `W_x`.
    pub u: Matrix,
    /// Descending, non-negative.
    pub sigma: Vector,
    /// `s x r`, orthonormal under `W_xi`.
    pub y: Matrix,
}

/// Best weighted rank-`r` approximation by the method of snapshots on the
/// smaller side, followed by a Rayleigh–Ritz refinement on the selected
/// subspace so orthonormality and the small singular values stay accurate.
pub fn truncated_svd_weighted(v: ArrayView2<f64>, w: &QuadratureWeights, r: usize) -> Result<WeightedSvd> {
    let (n, s) = v.dim();
    if n != w.n() || s != w.s() {
        return Err(Error::dims(
            "truncated_svd_weighted",
            format!("{}x{}", w.n(), w.s()),
            format!("{n}x{s}"),
        ));
    }
    if r == 0 || r > n.min(s) {
        return Err(Error::InvalidArgument(format!(
            "truncated_svd_weighted: rank {r} outside 1..={}",
            n.min(s)
        )));
    }
    let wx = w.wx();
    let wxi = w.wxi();

    if s <= n {
        let sq = wxi.mapv(f64::sqrt);
        let mut g = weighted_inner(v, v, wx.view())?;
        scale_symmetric(&mut g, &sq);
        let eig = sym_eig(g.view())?;
        check_gram_rank("truncated_svd_weighted", &eig.values, r)?;
        let mut y0 = eig.vectors.slice(s![.., ..r]).to_owned();
        for (mut row, &q) in y0.axis_iter_mut(Axis(0)).zip(sq.iter()) {
            row /= q;
        }
        let b = v.dot(&scale_rows(y0.view(), wxi.view()));
        let (q, t) = reorthonormalize(b.view(), wx.view()).map_err(|_| Error::RankDeficient {
            what: "truncated_svd_weighted",
            requested: r,
            achievable: gram_rank(&eig.values),
        })?;
        let svd = svd_small(t.view())?;
        check_sigma_rank("truncated_svd_weighted", &svd.sigma, r)?;
        let u = q.dot(&svd.u);
        let y = y0.dot(&svd.v);
        Ok(sign_fix(u, svd.sigma, y))
    } else {
        let sq = wx.mapv(f64::sqrt);
        let mut g = weighted_inner(v.t(), v.t(), wxi.view())?;
        scale_symmetric(&mut g, &sq);
        let eig = sym_eig(g.view())?;
        check_gram_rank("truncated_svd_weighted", &eig.values, r)?;
        let mut u0 = eig.vectors.slice(s![.., ..r]).to_owned();
        for (mut row, &q) in u0.axis_iter_mut(Axis(0)).zip(sq.iter()) {
            row /= q;
        }
        let b = v.t().dot(&scale_rows(u0.view(), wx.view()));
        let (q, t) = reorthonormalize(b.view(), wxi.view()).map_err(|_| Error::RankDeficient {
            what: "truncated_svd_weighted",
            requested: r,
            achievable: gram_rank(&eig.values),
        })?;
        let svd = svd_small(t.view())?;
        check_sigma_rank("truncated_svd_weighted", &svd.sigma, r)?;
        let u = u0.dot(&svd.v);
        let y = q.dot(&svd.u);
        Ok(sign_fix(u, svd.sigma, y))
    }
}

fn scale_symmetric(g: &mut Matrix, d: &Vector) {
    for ((i, j), x) in g.indexed_iter_mut() {
        *x *= d[i] * d[j];
    }
}

pub(crate) fn gram_rank(values: &Vector) -> usize {
    let top = values.iter().cloned().fold(0.0f64, f64::max);
    if top <= 0.0 {
        return 0;
    }
    values.iter().filter(|&&l| l > GRAM_RANK_TOL * top).count()
}

fn check_gram_rank(what: &'static str, values: &Vector, r: usize) -> Result<()> {
    let achievable = gram_rank(values);
    if achievable < r {
        return Err(Error::RankDeficient {
            what,
            requested: r,
            achievable,
        });
    }
    Ok(())
}

fn check_sigma_rank(what: &'static str, sigma: &Vector, r: usize) -> Result<()> {
    let top = sigma[0];
    let achievable = sigma.iter().filter(|&&x| x > RANK_TOL * top).count();
    if top <= 0.0 || achievable < r {
        return Err(Error::RankDeficient {
            what,
            requested: r,
            achievable,
        });
    }
    Ok(())
}

fn sign_fix(mut u: Matrix, sigma: Vector, mut y: Matrix) -> WeightedSvd {
    for j in 0..u.ncols() {
        if leading_sign(u.column(j)) < 0.0 {
            u.column_mut(j).mapv_inplace(|x| -x);
            y.column_mut(j).mapv_inplace(|x| -x);
        }
    }
    WeightedSvd { u, sigma, y }
}

/// Weighted Gram–Schmidt (two passes per column): `U = U' T`, `U'ᵀ W U' = I`,
/// `T` upper triangular with positive diagonal.
pub fn reorthonormalize(u: ArrayView2<f64>, w: ArrayView1<f64>) -> Result<(Matrix, Matrix)> {
    let (n, r) = u.dim();
    if w.len() != n {
        return Err(Error::dims(
            "reorthonormalize",
            format!("weights of length {n}"),
            w.len().to_string(),
        ));
    }
    let mut q = Matrix::zeros((n, r));
    let mut t = Matrix::zeros((r, r));
    for j in 0..r {
        let mut x = u.column(j).to_owned();
        let orig = wnorm(x.view(), w);
        if orig == 0.0 || !orig.is_finite() {
            return Err(Error::DefectiveColumn { index: j });
        }
        for _pass in 0..2 {
            for i in 0..j {
                let qi = q.column(i);
                let mut c = 0.0;
                for k in 0..n {
                    c += qi[k] * w[k] * x[k];
                }
                for k in 0..n {
                    x[k] -= c * qi[k];
                }
                t[[i, j]] += c;
            }
        }
        let nrm = wnorm(x.view(), w);
        if nrm <= RANK_TOL * orig {
            return Err(Error::DefectiveColumn { index: j });
        }
        x /= nrm;
        q.column_mut(j).assign(&x);
        t[[j, j]] = nrm;
    }
    Ok((q, t))
}

fn wnorm(x: ArrayView1<f64>, w: ArrayView1<f64>) -> f64 {
    x.iter().zip(w.iter()).map(|(a, b)| b * a * a).sum::<f64>().sqrt()
}

/// LU factorization with partial pivoting of a small square matrix.
#[derive(Debug, Clone)]
pub struct Lu {
    lu: Matrix,
    perm: Vec<usize>,
}

impl Lu {
    pub fn factor(a: ArrayView2<f64>, what: &'static str) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::dims(what, "square matrix", format!("{}x{}", n, a.ncols())));
        }
        let mut lu = a.to_owned();
        let mut perm: Vec<usize> = (0..n).collect();
        let scale = lu.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let tiny = f64::EPSILON * (n.max(1) as f64) * scale;
        for k in 0..n {
            let mut piv = k;
            let mut best = lu[[k, k]].abs();
            for i in k + 1..n {
                if lu[[i, k]].abs() > best {
                    best = lu[[i, k]].abs();
                    piv = i;
                }
            }
            if !(best > tiny) {
                return Err(Error::SingularSystem { what });
            }
            if piv != k {
                for j in 0..n {
                    lu.swap([k, j], [piv, j]);
                }
                perm.swap(k, piv);
            }
            let d = lu[[k, k]];
            for i in k + 1..n {
                let f = lu[[i, k]] / d;
                lu[[i, k]] = f;
                if f != 0.0 {
                    for j in k + 1..n {
                        lu[[i, j]] -= f * lu[[k, j]];
                    }
                }
            }
        }
        Ok(Self { lu, perm })
    }

    pub fn dim(&self) -> usize {
        self.perm.len()
    }

    /// Solves `A X = B` for every column of `B`.
    pub fn solve(&self, b: ArrayView2<f64>) -> Matrix {
        let n = self.dim();
        let mut x = b.select(Axis(0), &self.perm);
        for c in 0..x.ncols() {
            for i in 0..n {
                let mut acc = x[[i, c]];
                for k in 0..i {
                    acc -= self.lu[[i, k]] * x[[k, c]];
                }
                x[[i, c]] = acc;
            }
            for i in (0..n).rev() {
                let mut acc = x[[i, c]];
                for k in i + 1..n {
                    acc -= self.lu[[i, k]] * x[[k, c]];
                }
                x[[i, c]] = acc / self.lu[[i, i]];
            }
        }
        x
    }

    pub fn solve_vec(&self, b: ArrayView1<f64>) -> Vector {
        let col = b.to_owned().insert_axis(Axis(1));
        self.solve(col.view()).remove_axis(Axis(1))
    }

    /// Solves `Aᵀ X = B` for every column of `B`.
    pub fn solve_transposed(&self, b: ArrayView2<f64>) -> Matrix {
        let n = self.dim();
        let mut x = b.to_owned();
        for c in 0..x.ncols() {
            // Uᵀ z = b
            for i in 0..n {
                let mut acc = x[[i, c]];
                for k in 0..i {
                    acc -= self.lu[[k, i]] * x[[k, c]];
                }
                x[[i, c]] = acc / self.lu[[i, i]];
            }
            // Lᵀ y = z
            for i in (0..n).rev() {
                let mut acc = x[[i, c]];
                for k in i + 1..n {
                    acc -= self.lu[[k, i]] * x[[k, c]];
                }
                x[[i, c]] = acc;
            }
        }
        let mut out = Matrix::zeros(x.dim());
        for (i, &p) in self.perm.iter().enumerate() {
            out.row_mut(p).assign(&x.row(i));
        }
        out
    }
}

/// Max-norm distance of `a` from the identity.
pub fn identity_defect(a: ArrayView2<f64>) -> f64 {
    let mut worst = 0.0f64;
    for ((i, j), &x) in a.indexed_iter() {
        let target = if i == j { 1.0 } else { 0.0 };
        worst = worst.max((x - target).abs());
    }
    worst
}

pub fn max_abs(a: ArrayView2<f64>) -> f64 {
    a.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
    }

    fn uniform(n: usize, s: usize) -> QuadratureWeights {
        QuadratureWeights::monte_carlo(Vector::from_elem(n, 1.0 / n as f64), s).unwrap()
    }

    fn to_na(a: &Matrix) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
    }

    #[test]
    fn weighted_inner_identity_and_constant() {
        let i2 = Matrix::eye(2);
        let w = Vector::from_elem(2, 1.0);
        assert_eq!(weighted_inner(i2.view(), i2.view(), w.view()).unwrap(), i2);

        let ones = Matrix::from_elem((2, 1), 1.0);
        let w = Vector::from_elem(2, 0.5);
        let g = weighted_inner(ones.view(), ones.view(), w.view()).unwrap();
        assert_eq!(g, array![[1.0]]);
    }

    #[test]
    fn weighted_inner_matches_triple_loop() {
        let a = random(4, 2, 1);
        let b = random(4, 2, 2);
        let w = Vector::from_elem(4, 0.25);
        let g = weighted_inner(a.view(), b.view(), w.view()).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let mut acc = 0.0;
                for k in 0..4 {
                    acc += a[[k, i]] * w[k] * b[[k, j]];
                }
                assert!((g[[i, j]] - acc).abs() <= 1e-15);
            }
        }
    }

    #[test]
    fn weighted_inner_rejects_mismatch() {
        let a = random(4, 2, 1);
        let b = random(3, 2, 2);
        let w = Vector::from_elem(4, 0.25);
        assert!(matches!(
            weighted_inner(a.view(), b.view(), w.view()),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn weighted_frobenius_examples() {
        let w = QuadratureWeights::new(array![1.0, 1.0], array![0.5, 0.5]).unwrap();
        assert_eq!(weighted_frobenius(Matrix::zeros((2, 2)).view(), &w).unwrap(), 0.0);
        let ones = Matrix::from_elem((2, 2), 1.0);
        assert!((weighted_frobenius(ones.view(), &w).unwrap() - 2f64.sqrt()).abs() < 1e-15);

        let v = random(5, 7, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let wx = Vector::from_shape_fn(5, |_| rng.random_range(0.1..1.0));
        let w = QuadratureWeights::monte_carlo(wx.clone(), 7).unwrap();
        let mut oracle = 0.0;
        for i in 0..5 {
            for j in 0..7 {
                oracle += wx[i] * (1.0 / 7.0) * v[[i, j]] * v[[i, j]];
            }
        }
        let got = weighted_frobenius(v.view(), &w).unwrap();
        assert!((got - oracle.sqrt()).abs() <= 1e-14 * oracle.sqrt());
        assert!(weighted_frobenius(random(4, 7, 1).view(), &w).is_err());
    }

    #[test]
    fn quadrature_weights_validate() {
        assert!(QuadratureWeights::new(array![1.0, -1.0], array![1.0]).is_err());
        assert!(QuadratureWeights::new(array![1.0], array![0.4, 0.4]).is_err());
    }

    #[test]
    fn pivoted_qr_identity() {
        let qr = pivoted_qr(Matrix::eye(3).view()).unwrap();
        let mut sorted = qr.pivot.clone();
        sorted.sort();
        assert_eq!(sorted, vec![0, 1, 2]);
        for i in 0..3 {
            assert!((qr.r[[i, i]].abs() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn pivoted_qr_picks_largest_column_first() {
        let m = array![[2.0, 1.0], [0.0, 0.0]];
        assert_eq!(pivoted_qr(m.view()).unwrap().pivot[0], 0);
        let m = array![[1.0, 2.0], [0.0, 0.0]];
        assert_eq!(pivoted_qr(m.view()).unwrap().pivot[0], 1);
    }

    fn qr_residual(m: &Matrix) -> f64 {
        let qr = pivoted_qr(m.view()).unwrap();
        let mp = m.select(Axis(1), &qr.pivot);
        let diff = &mp - &qr.q.dot(&qr.r);
        let nm = m.iter().map(|x| x * x).sum::<f64>().sqrt();
        diff.iter().map(|x| x * x).sum::<f64>().sqrt() / nm.max(f64::MIN_POSITIVE)
    }

    #[test]
    fn pivoted_qr_reconstructs_random() {
        let m = random(6, 4, 11);
        assert!(qr_residual(&m) <= 1e-12);
        let qr = pivoted_qr(m.view()).unwrap();
        assert!(identity_defect(qr.q.t().dot(&qr.q).view()) < 1e-13);
        for j in 1..4 {
            assert!(qr.r[[j, j]].abs() <= qr.r[[j - 1, j - 1]].abs() * (1.0 + 1e-14));
        }
    }

    #[test]
    fn pivoted_qr_rank_deficient() {
        let mut m = random(5, 3, 4);
        let c0 = m.column(0).to_owned();
        m.column_mut(2).assign(&(&c0 * 2.0));
        let qr = pivoted_qr(m.view()).unwrap();
        assert!(qr.r[[2, 2]].abs() < 1e-12);
        assert!(qr_residual(&m) < 1e-12);
    }

    #[test]
    fn sym_eig_examples() {
        let e = sym_eig(array![[3.0, 0.0], [0.0, 1.0]].view()).unwrap();
        assert_eq!(e.values, array![3.0, 1.0]);
        assert_eq!(e.vectors, Matrix::eye(2));

        let e = sym_eig(array![[2.0, 1.0], [1.0, 2.0]].view()).unwrap();
        assert!((e.values[0] - 3.0).abs() < 1e-14 && (e.values[1] - 1.0).abs() < 1e-14);

        let a = random(6, 6, 5);
        let c = a.t().dot(&a);
        let e = sym_eig(c.view()).unwrap();
        let resid = &c.dot(&e.vectors) - &(&e.vectors * &e.values);
        let fro = |m: &Matrix| m.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(fro(&resid) <= 1e-10 * fro(&c));
        assert!(identity_defect(e.vectors.t().dot(&e.vectors).view()) < 1e-13);
    }

    #[test]
    fn sym_eig_rejects_nonsymmetric() {
        assert!(matches!(
            sym_eig(array![[1.0, 2.0], [0.0, 1.0]].view()),
            Err(Error::NotSymmetric { .. })
        ));
    }

    #[test]
    fn sym_eig_matches_nalgebra_spectrum() {
        let a = random(9, 9, 6);
        let c = &a + &a.t();
        let ours = sym_eig(c.view()).unwrap().values;
        let mut theirs: Vec<f64> = to_na(&c).symmetric_eigen().eigenvalues.iter().cloned().collect();
        theirs.sort_by(|a, b| b.total_cmp(a));
        for (x, y) in ours.iter().zip(theirs) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn sym_eig_large_path_matches_nalgebra() {
        let a = random(120, 120, 17);
        let c = &a + &a.t();
        let eig = sym_eig(c.view()).unwrap();
        let mut theirs: Vec<f64> = to_na(&c).symmetric_eigen().eigenvalues.iter().cloned().collect();
        theirs.sort_by(|a, b| b.total_cmp(a));
        for (x, y) in eig.values.iter().zip(theirs) {
            assert!((x - y).abs() < 1e-11);
        }
        let resid = c.dot(&eig.vectors) - eig.vectors.dot(&Matrix::from_diag(&eig.values));
        assert!(max_abs(resid.view()) <= 1e-12 * max_abs(c.view()) * 120.0);
        assert!(identity_defect(eig.vectors.t().dot(&eig.vectors).view()) < 1e-12);
    }

    #[test]
    fn truncated_svd_rank_one() {
        let n = 6;
        let s = 4;
        let w = uniform(n, s);
        // weighted-unit u and y
        let u = Vector::from_shape_fn(n, |i| i as f64 + 1.0);
        let un = (u.iter().map(|x| x * x / n as f64).sum::<f64>()).sqrt();
        let u = u / un;
        let y = Vector::from_shape_fn(s, |j| if j % 2 == 0 { 1.0 } else { -1.0 });
        let v = Matrix::from_shape_fn((n, s), |(i, j)| u[i] * 2.5 * y[j]);
        let svd = truncated_svd_weighted(v.view(), &w, 1).unwrap();
        assert!((svd.sigma[0] - 2.5).abs() < 1e-12);
        let sign = svd.u[[0, 0]].signum() * u[0].signum();
        for i in 0..n {
            assert!((svd.u[[i, 0]] - sign * u[i]).abs() < 1e-12);
        }
        for j in 0..s {
            assert!((svd.y[[j, 0]] - sign * y[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn truncated_svd_identity_equal_sigma() {
        let w = uniform(3, 3);
        let svd = truncated_svd_weighted(Matrix::eye(3).view(), &w, 3).unwrap();
        for k in 1..3 {
            assert!((svd.sigma[k] - svd.sigma[0]).abs() < 1e-14);
        }
    }

    #[test]
    fn truncated_svd_error_matches_tail() {
        for (n, s) in [(20, 10), (10, 20)] {
            let v = random(n, s, 7);
            let mut rng = ChaCha8Rng::seed_from_u64(8);
            let wx = Vector::from_shape_fn(n, |_| rng.random_range(0.5..1.5));
            let w = QuadratureWeights::monte_carlo(wx.clone(), s).unwrap();
            let svd = truncated_svd_weighted(v.view(), &w, 4).unwrap();
            let recon = svd.u.dot(&Matrix::from_diag(&svd.sigma)).dot(&svd.y.t());
            let err = weighted_frobenius((&v - &recon).view(), &w).unwrap();
            // full decomposition oracle on W_x^{1/2} V W_xi^{1/2}
            let scaled = Matrix::from_shape_fn((n, s), |(i, j)| wx[i].sqrt() * v[[i, j]] / (s as f64).sqrt());
            let sv = to_na(&scaled).singular_values();
            let mut sv: Vec<f64> = sv.iter().cloned().collect();
            sv.sort_by(|a, b| b.total_cmp(a));
            let tail: f64 = sv[4..].iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((err - tail).abs() < 1e-10, "{err} vs {tail}");
            for k in 0..4 {
                assert!((svd.sigma[k] - sv[k]).abs() < 1e-12 * sv[0]);
            }
            assert!(identity_defect(weighted_inner(svd.u.view(), svd.u.view(), wx.view()).unwrap().view()) < 1e-12);
            assert!(
                identity_defect(
                    weighted_inner(svd.y.view(), svd.y.view(), w.wxi().view())
                        .unwrap()
                        .view()
                ) < 1e-12
            );
        }
    }

    #[test]
    fn truncated_svd_rejects_rank_too_large() {
        let w = uniform(3, 2);
        assert!(truncated_svd_weighted(Matrix::eye(3).slice(s![.., ..2]).view(), &w, 3).is_err());
        let mut v = random(5, 4, 1);
        v.column_mut(3).fill(0.0);
        v.column_mut(2).fill(0.0);
        let w = uniform(5, 4);
        match truncated_svd_weighted(v.view(), &w, 3) {
            Err(Error::RankDeficient { achievable, .. }) => assert_eq!(achievable, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn reorthonormalize_examples() {
        let w = Vector::from_elem(4, 0.25);
        let u = Matrix::from_shape_fn((4, 2), |(i, j)| if i == j { 2.0 } else { 0.0 });
        let (q, t) = reorthonormalize(u.view(), w.view()).unwrap();
        assert!((&q - &u).iter().all(|x| x.abs() < 1e-12));
        assert!(identity_defect(t.view()) < 1e-12);

        let near = array![[1.0, 1.0], [0.0, 1e-8]];
        let w = Vector::from_elem(2, 0.5);
        assert!(reorthonormalize(near.view(), w.view()).is_ok());
        let dep = array![[1.0, 1.0], [0.0, 0.0]];
        assert!(matches!(
            reorthonormalize(dep.view(), w.view()),
            Err(Error::DefectiveColumn { index: 1 })
        ));

        let u = random(30, 5, 12);
        let w = Vector::from_shape_fn(30, |i| 0.5 + (i as f64) / 30.0);
        let (q, t) = reorthonormalize(u.view(), w.view()).unwrap();
        assert!(identity_defect(weighted_inner(q.view(), q.view(), w.view()).unwrap().view()) <= 1e-12);
        assert!((&q.dot(&t) - &u).iter().all(|x| x.abs() < 1e-12));
        for i in 0..5 {
            for j in 0..i {
                assert_eq!(t[[i, j]], 0.0);
            }
        }
    }

    #[test]
    fn lu_solves_both_orientations() {
        let a = random(5, 5, 21);
        let b = random(5, 3, 22);
        let lu = Lu::factor(a.view(), "test").unwrap();
        let x = lu.solve(b.view());
        assert!((&a.dot(&x) - &b).iter().all(|e| e.abs() < 1e-12));
        let xt = lu.solve_transposed(b.view());
        assert!((&a.t().dot(&xt) - &b).iter().all(|e| e.abs() < 1e-12));
        assert!(Lu::factor(array![[1.0, 2.0], [2.0, 4.0]].view(), "test").is_err());
    }

    #[test]
    fn svd_small_matches_nalgebra() {
        let a = random(5, 5, 30);
        let ours = svd_small(a.view()).unwrap();
        let mut theirs: Vec<f64> = to_na(&a).singular_values().iter().cloned().collect();
        theirs.sort_by(|a, b| b.total_cmp(a));
        for (x, y) in ours.sigma.iter().zip(theirs) {
            assert!((x - y).abs() < 1e-12);
        }
        let recon = ours.u.dot(&Matrix::from_diag(&ours.sigma)).dot(&ours.v.t());
        assert!((&recon - &a).iter().all(|e| e.abs() < 1e-13));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn prop_pivoted_qr_reconstruction(m in 1usize..=64, k in 1usize..=64, seed in any::<u64>()) {
            let a = random(m, k, seed);
            prop_assert!(qr_residual(&a) <= 1e-12);
        }

        #[test]
        fn prop_sym_eig_recomposition(k in 1usize..=24, seed in any::<u64>()) {
            let a = random(k, k, seed);
            let c = &a + &a.t();
            let e = sym_eig(c.view()).unwrap();
            let recon = e.vectors.dot(&Matrix::from_diag(&e.values)).dot(&e.vectors.t());
            let fro = |m: &Matrix| m.iter().map(|x| x * x).sum::<f64>().sqrt();
            prop_assert!(fro(&(&recon - &c)) <= 1e-10 * fro(&c));
            for w in e.values.windows(2) {
                prop_assert!(w[0] >= w[1]);
            }
        }

        #[test]
        fn prop_truncated_svd_orthonormal_and_norm(n in 4usize..30, s in 4usize..30, seed in any::<u64>()) {
            let v = random(n, s, seed);
            let w = uniform(n, s);
            let r = 3;
            let svd = truncated_svd_weighted(v.view(), &w, r).unwrap();
            let gu = weighted_inner(svd.u.view(), svd.u.view(), w.wx().view()).unwrap();
            let gy = weighted_inner(svd.y.view(), svd.y.view(), w.wxi().view()).unwrap();
            prop_assert!(identity_defect(gu.view()) <= 1e-12);
            prop_assert!(identity_defect(gy.view()) <= 1e-12);
            let recon = svd.u.dot(&Matrix::from_diag(&svd.sigma)).dot(&svd.y.t());
            let nrm2 = weighted_frobenius(recon.view(), &w).unwrap().powi(2);
            let ssum: f64 = svd.sigma.iter().map(|x| x * x).sum();
            prop_assert!((nrm2 - ssum).abs() <= 1e-10 * ssum);
        }
    }
}
