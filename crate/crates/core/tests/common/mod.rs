//! Reference implementations used only by the tests. They are written
//! straight from the textbook definitions and share no code with the
//! library.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Gamma, Poisson};

/// OLS slope and intercept of `ys` on `1..=n` by solving the 2×2 normal
/// equations with Cramer's rule.
pub fn ols_oracle(ys: &[f64]) -> (f64, f64) {
    let n = ys.len() as f64;
    let (mut sx, mut sxx, mut sy, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for (i, &y) in ys.iter().enumerate() {
        let x = (i + 1) as f64;
        sx += x;
        sxx += x * x;
        sy += y;
        sxy += x * y;
    }
    let det = n * sxx - sx * sx;
    let beta = (n * sxy - sx * sy) / det;
    let alpha = (sxx * sy - sx * sxy) / det;
    (alpha, beta)
}

pub fn log_oracle(ys: &[f64]) -> Vec<f64> {
    let zero = ys.contains(&0.0);
    ys.iter().map(|&y| if zero { (y + 0.5).ln() } else { y.ln() }).collect()
}

/// Negative log-likelihood (up to constants) and its gradient for the
/// log-linear count model `log μ_i = a + b x_i`, with `x_i` centred on the
/// window midpoint. `c = 0` is Poisson, `c > 0` Negative Binomial with
/// variance `μ + cμ²`.
pub fn count_nll(y: &[f64], c: f64, p: [f64; 2]) -> (f64, [f64; 2]) {
    let n = y.len();
    let mid = (n as f64 + 1.0) / 2.0;
    let mut f = 0.0;
    let mut g = [0.0; 2];
    for (i, &yi) in y.iter().enumerate() {
        let x = (i + 1) as f64 - mid;
        let eta = p[0] + p[1] * x;
        let mu = eta.exp();
        let (li, w) = if c == 0.0 {
            (yi * eta - mu, yi - mu)
        } else {
            let r = 1.0 / c;
            (yi * eta - (yi + r) * (r + mu).ln(), r * (yi - mu) / (r + mu))
        };
        f -= li;
        g[0] -= w;
        g[1] -= w * x;
    }
    (f, g)
}

/// BFGS with a backtracking Armijo search. Generic: knows nothing about the
/// model beyond function values and gradients.
pub fn bfgs<F>(f: F, x0: [f64; 2], gtol: f64, max_iter: usize) -> [f64; 2]
where
    F: Fn([f64; 2]) -> (f64, [f64; 2]),
{
    let mut x = x0;
    let (mut fx, mut g) = f(x);
    let mut h = [[1.0, 0.0], [0.0, 1.0]];
    for _ in 0..max_iter {
        if g[0].hypot(g[1]) < gtol {
            break;
        }
        let d = [-(h[0][0] * g[0] + h[0][1] * g[1]), -(h[1][0] * g[0] + h[1][1] * g[1])];
        let slope = d[0] * g[0] + d[1] * g[1];
        let (d, slope) = if slope < 0.0 {
            (d, slope)
        } else {
            h = [[1.0, 0.0], [0.0, 1.0]];
            ([-g[0], -g[1]], -(g[0] * g[0] + g[1] * g[1]))
        };
        let mut t = 1.0;
        let (xn, fxn, gn) = loop {
            let xn = [x[0] + t * d[0], x[1] + t * d[1]];
            let (fxn, gn) = f(xn);
            if fxn.is_finite() && fxn <= fx + 1e-4 * t * slope {
                break (xn, fxn, gn);
            }
            t *= 0.5;
            if t < 1e-20 {
                return x;
            }
        };
        let s = [xn[0] - x[0], xn[1] - x[1]];
        let yv = [gn[0] - g[0], gn[1] - g[1]];
        let sy = s[0] * yv[0] + s[1] * yv[1];
        if sy > 1e-300 {
            let rho = 1.0 / sy;
            let hy = [h[0][0] * yv[0] + h[0][1] * yv[1], h[1][0] * yv[0] + h[1][1] * yv[1]];
            let yhy = yv[0] * hy[0] + yv[1] * hy[1];
            for i in 0..2 {
                for j in 0..2 {
                    h[i][j] += -rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
                }
            }
        }
        x = xn;
        fx = fxn;
        g = gn;
    }
    x
}

/// Slope of the count-model MLE in the library's (uncentred) parametrisation;
/// the slope is the same in both.
pub fn count_mle_oracle(y: &[f64], c: f64) -> f64 {
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let x = bfgs(|p| count_nll(y, c, p), [mean.max(0.5).ln(), 0.0], 1e-11, 10_000);
    x[1]
}

/// Moment estimate of the NB dispersion, written from its definition.
pub fn dispersion_oracle(y: &[f64], mu: &[f64]) -> f64 {
    let n = y.len() as f64;
    let ey: f64 = y.iter().sum::<f64>() / n;
    let vy: f64 = y.iter().map(|v| (v - ey).powi(2)).sum::<f64>() / n;
    let em: f64 = mu.iter().sum::<f64>() / n;
    let em2: f64 = mu.iter().map(|m| m * m).sum::<f64>() / n;
    ((vy - em + em * em) / em2 - 1.0).max(0.0)
}

/// Gamma–Poisson draw with mean `mu` and variance `mu + c mu²`.
pub fn nb_draw<R: Rng>(rng: &mut R, mu: f64, c: f64) -> f64 {
    let lam = if c > 0.0 {
        Gamma::new(1.0 / c, c * mu).unwrap().sample(rng)
    } else {
        mu
    };
    if lam <= 0.0 {
        0.0
    } else {
        Poisson::new(lam).unwrap().sample(rng)
    }
}

/// Hard dynamic time warping with squared-difference cost.
pub fn hard_dtw(a: &[f64], b: &[f64]) -> f64 {
    let (n, m) = (a.len(), b.len());
    let mut r = vec![vec![f64::INFINITY; m + 1]; n + 1];
    r[0][0] = 0.0;
    for i in 1..=n {
        for j in 1..=m {
            let c = (a[i - 1] - b[j - 1]).powi(2);
            r[i][j] = c + r[i - 1][j].min(r[i][j - 1]).min(r[i - 1][j - 1]);
        }
    }
    r[n][m]
}

/// Two-sided Kolmogorov–Smirnov distance between the sample and `cdf`.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Asymptotic KS critical value at significance 0.01.
pub fn ks_critical_01(n: usize) -> f64 {
    1.6276 / (n as f64).sqrt()
}

/// Adjusted Rand index from the contingency table.
pub fn ari_oracle(a: &[usize], b: &[usize]) -> f64 {
    use std::collections::HashMap;
    let n = a.len() as f64;
    let mut nij: HashMap<(usize, usize), f64> = HashMap::new();
    let mut ai: HashMap<usize, f64> = HashMap::new();
    let mut bj: HashMap<usize, f64> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *nij.entry((x, y)).or_default() += 1.0;
        *ai.entry(x).or_default() += 1.0;
        *bj.entry(y).or_default() += 1.0;
    }
    let c2 = |x: f64| x * (x - 1.0) / 2.0;
    let index: f64 = nij.values().map(|&v| c2(v)).sum();
    let sa: f64 = ai.values().map(|&v| c2(v)).sum();
    let sb: f64 = bj.values().map(|&v| c2(v)).sum();
    let expected = sa * sb / c2(n);
    let max = (sa + sb) / 2.0;
    if max == expected {
        1.0
    } else {
        (index - expected) / (max - expected)
    }
}

/// Dense Newton on the trend at fixed weekday effects, solving the full
/// `T × T` system with a general LU factorisation.
pub fn dense_l2_oracle(y: &[f64], offset: &[f64], lambda: f64, lognormal: Option<f64>) -> Vec<f64> {
    let t = y.len();
    let mut d = DMatrix::<f64>::zeros(t - 3, t);
    for i in 0..t - 3 {
        d[(i, i)] = -1.0;
        d[(i, i + 1)] = 3.0;
        d[(i, i + 2)] = -3.0;
        d[(i, i + 3)] = 1.0;
    }
    let p = d.transpose() * &d * (2.0 * lambda);
    match lognormal {
        Some(s2) => {
            let a = DMatrix::<f64>::identity(t, t) / s2 + &p;
            let rhs = DVector::from_iterator(t, (0..t).map(|i| (y[i].ln() - offset[i]) / s2));
            a.lu().solve(&rhs).unwrap().iter().copied().collect()
        }
        None => {
            let mut z = DVector::from_iterator(t, (0..t).map(|i| (y[i] + 0.5).ln() - offset[i]));
            for _ in 0..100 {
                let mu = DVector::from_iterator(t, (0..t).map(|i| (offset[i] + z[i]).exp()));
                let grad = &mu - DVector::from_column_slice(y) + &p * &z;
                let hess = DMatrix::from_diagonal(&mu) + &p;
                let step = hess.lu().solve(&grad).unwrap();
                z -= &step;
                if step.amax() < 1e-14 {
                    break;
                }
            }
            z.iter().copied().collect()
        }
    }
}
