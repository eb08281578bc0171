use crate::error::{Error, Result};

/// `-γ log Σ exp(-x_i/γ)`, shifted by the minimum so nothing overflows.
pub fn softmin(xs: &[f64], gamma: f64) -> f64 {
    let m = xs.iter().copied().fold(f64::INFINITY, f64::min);
    if !m.is_finite() {
        return m;
    }
    let s: f64 = xs.iter().map(|&x| (-(x - m) / gamma).exp()).sum();
    m - gamma * s.ln()
}

/// `exp(-x)` for `x ≥ 0`, flushed to zero once it can no longer change a
/// sum that already contains 1.
#[inline]
fn tail(x: f64) -> f64 {
    if x > 38.0 {
        0.0
    } else {
        (-x).exp()
    }
}

#[inline]
fn softmin3(a: f64, b: f64, c: f64, gamma: f64) -> f64 {
    let (m, u, v) = if a <= b && a <= c {
        (a, b, c)
    } else if b <= c {
        (b, a, c)
    } else {
        (c, a, b)
    };
    if m == f64::INFINITY {
        return m;
    }
    let inv = 1.0 / gamma;
    m - gamma * (1.0 + tail((u - m) * inv) + tail((v - m) * inv)).ln()
}

/// Soft-DTW value with squared-difference cost. Runs in O(|a||b|) time and
/// O(|a|) memory, sweeping anti-diagonals so that the cells of one sweep are
/// independent of each other.
pub fn soft_dtw(a: &[f64], b: &[f64], gamma: f64) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("soft_dtw needs non-empty sequences"));
    }
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::invalid(format!("gamma must be positive, got {gamma}")));
    }
    if a.iter().chain(b).any(|x| !x.is_finite()) {
        return Err(Error::invalid("soft_dtw inputs must be finite"));
    }
    let (n, m) = (a.len(), b.len());
    let inf = f64::INFINITY;
    // Diagonal k holds r[i][k - i] at index i. Entries just outside each
    // diagonal's valid range are kept at ∞ so the recursion needs no
    // boundary checks.
    let mut d2 = vec![inf; n + 2];
    let mut d1 = vec![inf; n + 2];
    let mut d0 = vec![inf; n + 2];
    d2[0] = 0.0;
    for k in 2..=n + m {
        let lo = if k > m { k - m } else { 1 };
        let hi = n.min(k - 1);
        for i in lo..=hi {
            let d = a[i - 1] - b[k - i - 1];
            d0[i] = d * d + softmin3(d1[i - 1], d1[i], d2[i - 1], gamma);
        }
        d0[lo - 1] = inf;
        d0[hi + 1] = inf;
        std::mem::swap(&mut d2, &mut d1);
        std::mem::swap(&mut d1, &mut d0);
    }
    Ok(d1[n])
}
