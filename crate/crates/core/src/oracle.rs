//! Slow, independent reference computations used to cross-check the main
//! paths in tests, benches and the acceptance suite.

use crate::matrix::SquareMatrix;

/// Covariance by explicit centring: means first, then `Σ(x-μ)(x-μ)ᵀ / (n-ddof)`.
pub fn two_pass_covariance(values: &[f64], p: usize, ddof: u8) -> SquareMatrix {
    let n = values.len() / p;
    let mut mean = vec![0.0; p];
    for row in values.chunks_exact(p) {
        for (m, x) in mean.iter_mut().zip(row) {
            *m += x;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut cov = SquareMatrix::zeros(p);
    for row in values.chunks_exact(p) {
        for j in 0..p {
            let dj = row[j] - mean[j];
            for k in 0..p {
                cov[(j, k)] += dj * (row[k] - mean[k]);
            }
        }
    }
    let denom = (n - ddof as usize) as f64;
    SquareMatrix::from_fn(p, |j, k| cov[(j, k)] / denom)
}

/// Correlation by explicit centring.
pub fn two_pass_correlation(values: &[f64], p: usize) -> SquareMatrix {
    let cov = two_pass_covariance(values, p, 1);
    SquareMatrix::from_fn(p, |j, k| cov[(j, k)] / (cov[(j, j)] * cov[(k, k)]).sqrt())
}

/// Full `p x p` matrix of `Σ x_j x_k` over rows, in row order.
pub fn naive_cross_products(values: &[f64], p: usize) -> SquareMatrix {
    let mut s = SquareMatrix::zeros(p);
    for row in values.chunks_exact(p) {
        for j in 0..p {
            for k in 0..p {
                s[(j, k)] += row[j] * row[k];
            }
        }
    }
    s
}

/// Householder reduction of a symmetric matrix to tridiagonal form.
/// Returns the diagonal and the sub-diagonal.
fn tridiagonalize(m: &SquareMatrix) -> (Vec<f64>, Vec<f64>) {
    let n = m.dim();
    let mut a = m.symmetrized();
    for k in 0..n.saturating_sub(2) {
        let x: Vec<f64> = (k + 1..n).map(|i| a[(i, k)]).collect();
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let alpha = if x[0] > 0.0 { -norm } else { norm };
        let mut v = x;
        v[0] -= alpha;
        let vn = v.iter().map(|t| t * t).sum::<f64>().sqrt();
        if vn == 0.0 {
            continue;
        }
        for t in &mut v {
            *t /= vn;
        }
        // A <- H A H with H = I - 2 v vᵀ acting on indices k+1..n.
        for c in 0..n {
            let dot: f64 = v.iter().enumerate().map(|(i, vi)| vi * a[(k + 1 + i, c)]).sum();
            for (i, vi) in v.iter().enumerate() {
                a[(k + 1 + i, c)] -= 2.0 * vi * dot;
            }
        }
        for r in 0..n {
            let dot: f64 = v.iter().enumerate().map(|(i, vi)| vi * a[(r, k + 1 + i)]).sum();
            for (i, vi) in v.iter().enumerate() {
                a[(r, k + 1 + i)] -= 2.0 * vi * dot;
            }
        }
    }
    let d = (0..n).map(|i| a[(i, i)]).collect();
    let e = (1..n).map(|i| a[(i, i - 1)]).collect();
    (d, e)
}

/// Number of eigenvalues of the tridiagonal `(d, e)` below `x` (Sturm count).
fn count_below(d: &[f64], e: &[f64], x: f64) -> usize {
    let tiny = f64::MIN_POSITIVE.sqrt();
    let mut count = 0;
    let mut q = 1.0;
    for i in 0..d.len() {
        let off = if i == 0 { 0.0 } else { e[i - 1] * e[i - 1] / q };
        q = d[i] - x - off;
        if q == 0.0 {
            q = -tiny;
        }
        if q < 0.0 {
            count += 1;
        }
    }
    count
}

/// Eigenvalues, descending, by Householder tridiagonalisation and Sturm
/// bisection.
pub fn eigenvalues_by_bisection(m: &SquareMatrix) -> Vec<f64> {
    let n = m.dim();
    let (d, e) = tridiagonalize(m);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..n {
        let r = if i > 0 { e[i - 1].abs() } else { 0.0 } + if i + 1 < n { e[i].abs() } else { 0.0 };
        lo = lo.min(d[i] - r);
        hi = hi.max(d[i] + r);
    }
    let scale = lo.abs().max(hi.abs()).max(f64::MIN_POSITIVE);
    let mut out: Vec<f64> = (0..n)
        .map(|k| {
            // k-th smallest: the smallest x with count_below(x) > k.
            let (mut a, mut b) = (lo - scale * 1e-12, hi + scale * 1e-12);
            for _ in 0..200 {
                let mid = 0.5 * (a + b);
                if mid <= a || mid >= b {
                    break;
                }
                if count_below(&d, &e, mid) > k {
                    b = mid;
                } else {
                    a = mid;
                }
            }
            0.5 * (a + b)
        })
        .collect();
    out.reverse();
    out
}
