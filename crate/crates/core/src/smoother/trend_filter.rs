//! Weighted third-order trend filtering:
//!
//! ```text
//! minimise ½ Σ h_t (x_t − u_t)² + λ · pen(D x − c)
//! ```
//!
//! where `D` is banded with four coefficients per row and `pen` is either
//! the L1 norm or the squared L2 norm. The L1 problem is solved through its
//! dual, a box-constrained QP in `v` with banded Hessian `Q = D H⁻¹ Dᵀ`,
//! by projected Newton; the primal is `x = u − H⁻¹ Dᵀ v`.

use crate::error::{Error, Result};

/// Half-bandwidth of `D Dᵀ` for third differences.
const BAND: usize = 3;

/// Rows of a banded operator; row `i` touches columns `i..i+4`.
#[derive(Clone, Debug, PartialEq)]
pub struct BandedDiff {
    coef: Vec<[f64; 4]>,
}

impl BandedDiff {
    /// Third differences for a series of length `t`.
    pub fn third(t: usize) -> Self {
        BandedDiff {
            coef: vec![[-1.0, 3.0, -3.0, 1.0]; t.saturating_sub(3)],
        }
    }

    /// Third differences with each column scaled by `w`, i.e. `D diag(w)`.
    pub fn third_scaled(w: &[f64]) -> Self {
        let base = [-1.0, 3.0, -3.0, 1.0];
        let coef = (0..w.len().saturating_sub(3))
            .map(|i| std::array::from_fn(|k| base[k] * w[i + k]))
            .collect();
        BandedDiff { coef }
    }

    pub fn rows(&self) -> usize {
        self.coef.len()
    }

    pub fn cols(&self) -> usize {
        if self.coef.is_empty() {
            0
        } else {
            self.coef.len() + 3
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.coef
            .iter()
            .enumerate()
            .map(|(i, c)| c[0] * x[i] + c[1] * x[i + 1] + c[2] * x[i + 2] + c[3] * x[i + 3])
            .collect()
    }

    pub fn apply_t(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols()];
        for (i, c) in self.coef.iter().enumerate() {
            for k in 0..4 {
                out[i + k] += c[k] * v[i];
            }
        }
        out
    }

    /// Upper band of `D diag(1/h) Dᵀ`: entry `[i][m]` is `Q[i][i+m]`.
    fn gram(&self, h: &[f64]) -> Vec<[f64; BAND + 1]> {
        let m = self.rows();
        let mut q = vec![[0.0; BAND + 1]; m];
        for i in 0..m {
            for off in 0..=BAND {
                let j = i + off;
                if j >= m {
                    break;
                }
                let mut s = 0.0;
                // Shared columns k ∈ [j, i+3].
                for k in j..=i + 3 {
                    s += self.coef[i][k - i] * self.coef[j][k - j] / h[k];
                }
                q[i][off] = s;
            }
        }
        q
    }
}

/// Symmetric positive definite banded matrix in lower-band storage with its
/// Cholesky factor computed in place.
#[derive(Clone, Debug)]
pub struct BandedCholesky {
    n: usize,
    p: usize,
    // l[i * (p+1) + k] = L[i][i-k]
    l: Vec<f64>,
}

impl BandedCholesky {
    /// Factors the matrix whose lower band is given by `entry(i, k) = A[i][i-k]`
    /// for `k ≤ p`. Returns `None` when the matrix is not numerically SPD.
    pub fn factor(n: usize, p: usize, entry: impl Fn(usize, usize) -> f64) -> Option<Self> {
        let w = p + 1;
        let mut l = vec![0.0; n * w];
        for i in 0..n {
            let jlo = i.saturating_sub(p);
            for j in jlo..=i {
                let mut s = entry(i, i - j);
                let klo = jlo.max(j.saturating_sub(p));
                for k in klo..j {
                    s -= l[i * w + (i - k)] * l[j * w + (j - k)];
                }
                if i == j {
                    if !(s > 0.0) || !s.is_finite() {
                        return None;
                    }
                    l[i * w] = s.sqrt();
                } else {
                    l[i * w + (i - j)] = s / l[j * w];
                }
            }
        }
        Some(BandedCholesky { n, p, l })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let (n, p, w) = (self.n, self.p, self.p + 1);
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in i.saturating_sub(p)..i {
                s -= self.l[i * w + (i - k)] * y[k];
            }
            y[i] = s / self.l[i * w];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..n.min(i + p + 1) {
                s -= self.l[k * w + (k - i)] * y[k];
            }
            y[i] = s / self.l[i * w];
        }
        y
    }
}

fn check_inputs(h: &[f64], u: &[f64], d: &BandedDiff, c: &[f64], lambda: f64) -> Result<()> {
    if h.len() != u.len() || d.cols() != u.len() || c.len() != d.rows() {
        return Err(Error::invalid("trend filter dimensions disagree"));
    }
    if h.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::Numeric("trend filter weights must be positive".into()));
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::invalid(format!("penalty {lambda} must be finite and >= 0")));
    }
    Ok(())
}

/// Solution of the L1 problem together with the dual vector, which can be
/// passed back as a warm start.
#[derive(Clone, Debug)]
pub struct L1Solution {
    pub x: Vec<f64>,
    pub dual: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Weighted L1 trend filtering, `min ½‖x − u‖²_H + λ‖Dx − c‖₁`.
pub fn prox_l1(
    h: &[f64],
    u: &[f64],
    d: &BandedDiff,
    c: &[f64],
    lambda: f64,
    warm: Option<&[f64]>,
) -> Result<L1Solution> {
    check_inputs(h, u, d, c, lambda)?;
    let m = d.rows();
    if m == 0 {
        return Ok(L1Solution {
            x: u.to_vec(),
            dual: Vec::new(),
            iterations: 0,
            converged: true,
        });
    }
    let q = d.gram(h);
    let mut b = d.apply(u);
    for (bi, ci) in b.iter_mut().zip(c) {
        *bi -= ci;
    }
    let v0 = match warm {
        Some(w) if w.len() == m => w.to_vec(),
        _ => vec![0.0; m],
    };
    let (v, iterations, converged) = box_qp(&q, &b, lambda, v0);
    let dtv = d.apply_t(&v);
    let x = u
        .iter()
        .zip(&dtv)
        .zip(h)
        .map(|((ui, gi), hi)| ui - gi / hi)
        .collect();
    Ok(L1Solution {
        x,
        dual: v,
        iterations,
        converged,
    })
}

/// Weighted L2 trend filtering, `min ½‖x − u‖²_H + λ‖Dx − c‖²₂`, solved as
/// `(H + 2λ DᵀD) x = H u + 2λ Dᵀc`.
pub fn prox_l2(h: &[f64], u: &[f64], d: &BandedDiff, c: &[f64], lambda: f64) -> Result<Vec<f64>> {
    check_inputs(h, u, d, c, lambda)?;
    let t = u.len();
    // Lower band of DᵀD: (DᵀD)[i][j] = Σ_r D[r][i] D[r][j], rows r ∈ [i−3, j].
    let mut band = vec![[0.0; BAND + 1]; t];
    for (r, cr) in d.coef.iter().enumerate() {
        for a in 0..4 {
            for bb in 0..=a {
                band[r + a][a - bb] += cr[a] * cr[bb];
            }
        }
    }
    let chol = BandedCholesky::factor(t, BAND, |i, k| {
        let v = 2.0 * lambda * band[i][k];
        if k == 0 {
            h[i] + v
        } else {
            v
        }
    })
    .ok_or_else(|| Error::Numeric("L2 trend system is not positive definite".into()))?;
    let dtc = d.apply_t(c);
    let rhs: Vec<f64> = (0..t)
        .map(|i| h[i] * u[i] + 2.0 * lambda * dtc.get(i).copied().unwrap_or(0.0))
        .collect();
    Ok(chol.solve(&rhs))
}

fn qp_matvec(q: &[[f64; BAND + 1]], v: &[f64]) -> Vec<f64> {
    let m = v.len();
    let mut out = vec![0.0; m];
    for i in 0..m {
        out[i] += q[i][0] * v[i];
        for off in 1..=BAND {
            let j = i + off;
            if j >= m {
                break;
            }
            out[i] += q[i][off] * v[j];
            out[j] += q[i][off] * v[i];
        }
    }
    out
}

fn qp_value(q: &[[f64; BAND + 1]], b: &[f64], v: &[f64]) -> f64 {
    let qv = qp_matvec(q, v);
    v.iter()
        .zip(&qv)
        .zip(b)
        .map(|((vi, qvi), bi)| 0.5 * vi * qvi - bi * vi)
        .sum()
}

/// Projected Newton for `min ½ vᵀQv − bᵀv` over `|v_i| ≤ λ`.
fn box_qp(q: &[[f64; BAND + 1]], b: &[f64], lambda: f64, mut v: Vec<f64>) -> (Vec<f64>, usize, bool) {
    const MAX_ITER: usize = 200;
    let m = b.len();
    for vi in v.iter_mut() {
        *vi = vi.clamp(-lambda, lambda);
    }
    let qnorm = q
        .iter()
        .map(|r| r[0].abs() + 2.0 * r[1..].iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let bnorm = b.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    let mut value = qp_value(q, b, &v);
    for iter in 0..MAX_ITER {
        let qv = qp_matvec(q, &v);
        let g: Vec<f64> = qv.iter().zip(b).map(|(a, bb)| a - bb).collect();
        let vnorm = v.iter().fold(0.0f64, |a, x| a.max(x.abs()));
        let tol = 1e-12 * (bnorm + qnorm * vnorm) + f64::MIN_POSITIVE;
        let mut pg_max = 0.0f64;
        let mut w2 = 0.0;
        for i in 0..m {
            let pg = if v[i] <= -lambda {
                g[i].min(0.0)
            } else if v[i] >= lambda {
                g[i].max(0.0)
            } else {
                g[i]
            };
            pg_max = pg_max.max(pg.abs());
            let step = v[i] - (v[i] - g[i]).clamp(-lambda, lambda);
            w2 += step * step;
        }
        if pg_max <= tol {
            return (v, iter, true);
        }
        let eps = w2.sqrt().min(1e-3 * lambda);
        let active: Vec<bool> = (0..m)
            .map(|i| (v[i] <= -lambda + eps && g[i] > 0.0) || (v[i] >= lambda - eps && g[i] < 0.0))
            .collect();
        let free: Vec<usize> = (0..m).filter(|&i| !active[i]).collect();
        let mut dir = vec![0.0; m];
        for i in 0..m {
            if active[i] {
                dir[i] = -g[i] / q[i][0];
            }
        }
        if !free.is_empty() {
            let nf = free.len();
            let entry = |a: usize, k: usize| {
                let (i, j) = (free[a - k], free[a]);
                let off = j - i;
                if off <= BAND {
                    q[i][off]
                } else {
                    0.0
                }
            };
            let mut chol = BandedCholesky::factor(nf, BAND, entry);
            let mut shift = 1e-14 * qnorm;
            while chol.is_none() && shift < qnorm {
                chol = BandedCholesky::factor(nf, BAND, |a, k| {
                    entry(a, k) + if k == 0 { shift } else { 0.0 }
                });
                shift *= 100.0;
            }
            let Some(chol) = chol else {
                return (v, iter, false);
            };
            let rhs: Vec<f64> = free.iter().map(|&i| -g[i]).collect();
            let sol = chol.solve(&rhs);
            for (a, &i) in free.iter().enumerate() {
                dir[i] = sol[a];
            }
        }
        // Armijo search along the projection arc.
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..50 {
            let cand: Vec<f64> = (0..m)
                .map(|i| (v[i] + alpha * dir[i]).clamp(-lambda, lambda))
                .collect();
            let mut pred = 0.0;
            for i in 0..m {
                if active[i] {
                    pred += g[i] * (v[i] - cand[i]);
                } else {
                    pred -= alpha * g[i] * dir[i];
                }
            }
            let cv = qp_value(q, b, &cand);
            if value - cv >= 1e-4 * pred {
                let stalled = cand == v;
                v = cand;
                value = cv;
                accepted = !stalled;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            // No representable progress left: the iterate is as good as
            // floating point allows.
            return (v, iter + 1, pg_max <= 1e3 * tol);
        }
    }
    (v, MAX_ITER, false)
}
