#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_matrix(
    rows: usize,
    cols: usize,
    lo: f64,
    hi: f64,
    rng: &mut impl Rng,
) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(lo..hi))
}

/// Largest singular value by power iteration on `M^T M`.
pub fn power_iteration_norm(m: &DMatrix<f64>) -> f64 {
    let g = m.transpose() * m;
    let mut v = DVector::from_fn(g.ncols(), |i, _| 1.0 + 0.1 * i as f64);
    let mut lambda = 0.0;
    for _ in 0..20_000 {
        let w = &g * &v;
        let n = w.norm();
        if n == 0.0 {
            return 0.0;
        }
        let next = w / n;
        let l = next.dot(&(&g * &next));
        v = next;
        if (l - lambda).abs() <= 1e-15 * l.abs() {
            lambda = l;
            break;
        }
        lambda = l;
    }
    lambda.max(0.0).sqrt()
}

/// Naive triple-loop `A x`.
pub fn naive_matvec(a: &DMatrix<f64>, x: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(a.nrows());
    for i in 0..a.nrows() {
        let mut s = 0.0;
        for j in 0..a.ncols() {
            s += a[(i, j)] * x[j];
        }
        out[i] = s;
    }
    out
}

/// Jointly minimizes `sum_b ||X_b - M_b||_F^2 / 2` subject to `||X_b|| <= r_b`
/// without any singular value decomposition: a log-det barrier path brings
/// every block close to the optimum, then Newton on the KKT conditions
/// removes the remaining barrier bias.
pub fn barrier_projection(targets: &[(DMatrix<f64>, f64)]) -> Vec<DMatrix<f64>> {
    let mut out: Vec<Option<DMatrix<f64>>> = vec![None; targets.len()];
    let mut fallback = Vec::new();
    // Newton on the KKT system can land on a spurious root from a poor
    // start; other points of the barrier path serve as restarts.
    for mu_min in [1e-6, 1e-5, 1e-7, 1e-4] {
        let (xs, mu) = barrier_path(targets, mu_min);
        for (b, ((m, r), x)) in targets.iter().zip(&xs).enumerate() {
            if out[b].is_none() {
                let s = DMatrix::identity(x.ncols(), x.ncols()) * (r * r) - x.transpose() * x;
                let lambda = s.try_inverse().expect("interior iterate") * (2.0 * mu);
                out[b] = kkt_polish(m, *r, lambda);
            }
        }
        if fallback.is_empty() {
            fallback = xs;
        }
        if out.iter().all(Option::is_some) {
            break;
        }
    }
    out.into_iter()
        .zip(fallback)
        .map(|(p, x)| p.unwrap_or(x))
        .collect()
}

/// Stationarity gives `X = M (I + L)^{-1}` for the multiplier `L >= 0`;
/// complementarity `L S + S L = 0` with `S = r^2 I - X^T X` is then solved
/// for the upper triangle of `L` by Newton with a finite-difference Jacobian.
fn kkt_polish(m: &DMatrix<f64>, r: f64, lambda0: DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = m.ncols();
    let idx: Vec<(usize, usize)> = (0..n).flat_map(|i| (i..n).map(move |j| (i, j))).collect();
    let to_mat = |theta: &DVector<f64>| {
        let mut l = DMatrix::zeros(n, n);
        for (v, &(i, j)) in theta.iter().zip(&idx) {
            l[(i, j)] = *v;
            l[(j, i)] = *v;
        }
        l
    };
    let primal = |l: &DMatrix<f64>| -> Option<DMatrix<f64>> {
        let inv = (DMatrix::identity(n, n) + l).try_inverse()?;
        Some(m * inv)
    };
    let residual = |theta: &DVector<f64>| -> Option<DVector<f64>> {
        let l = to_mat(theta);
        let x = primal(&l)?;
        let s = DMatrix::identity(n, n) * (r * r) - x.transpose() * &x;
        let c = &l * &s + &s * &l;
        Some(DVector::from_iterator(
            idx.len(),
            idx.iter().map(|&(i, j)| c[(i, j)]),
        ))
    };
    let mut theta = DVector::from_iterator(idx.len(), idx.iter().map(|&(i, j)| lambda0[(i, j)]));
    let mut res = residual(&theta)?;
    for _ in 0..50 {
        if res.norm() <= 1e-15 {
            break;
        }
        let mut jac = DMatrix::zeros(idx.len(), idx.len());
        for k in 0..idx.len() {
            let h = 1e-7 * theta[k].abs().max(1e-3);
            let mut up = theta.clone();
            up[k] += h;
            let mut down = theta.clone();
            down[k] -= h;
            jac.set_column(k, &((residual(&up)? - residual(&down)?) / (2.0 * h)));
        }
        let next = &theta - jac.lu().solve(&res)?;
        let next_res = residual(&next)?;
        if next_res.norm() >= res.norm() {
            break;
        }
        theta = next;
        res = next_res;
    }
    let l = to_mat(&theta);
    // The multiplier must stay positive semidefinite and the point feasible.
    let x = primal(&l)?;
    let lmin = l.clone().symmetric_eigenvalues().min();
    let smin = (DMatrix::identity(n, n) * (r * r) - x.transpose() * &x)
        .symmetric_eigenvalues()
        .min();
    (lmin >= -1e-9 && smin >= -1e-9).then_some(x)
}

/// Barrier iterate at the last `mu` above `mu_min`, and that `mu`.
pub fn barrier_path(targets: &[(DMatrix<f64>, f64)], mu_min: f64) -> (Vec<DMatrix<f64>>, f64) {
    let shapes: Vec<(usize, usize)> = targets.iter().map(|(m, _)| m.shape()).collect();
    let offsets: Vec<usize> = shapes
        .iter()
        .scan(0, |acc, (r, c)| {
            let o = *acc;
            *acc += r * c;
            Some(o)
        })
        .collect();
    let n: usize = shapes.iter().map(|(r, c)| r * c).sum();
    let unpack = |x: &DVector<f64>, b: usize| {
        let (r, c) = shapes[b];
        DMatrix::from_column_slice(r, c, &x.as_slice()[offsets[b]..offsets[b] + r * c])
    };
    let slack = |x: &DMatrix<f64>, r: f64| {
        DMatrix::identity(x.ncols(), x.ncols()) * (r * r) - x.transpose() * x
    };
    let objective = |x: &DVector<f64>, mu: f64| -> Option<f64> {
        let mut f = 0.0;
        for (b, (m, r)) in targets.iter().enumerate() {
            let xb = unpack(x, b);
            let chol = slack(&xb, *r).cholesky()?;
            let logdet: f64 = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
            f += 0.5 * (&xb - m).norm_squared() - mu * logdet;
        }
        Some(f)
    };
    let mut x = DVector::zeros(n);
    let mut mu = 1.0;
    let mut last = mu;
    while mu > mu_min {
        last = mu;
        for _ in 0..100 {
            let mut grad = DVector::zeros(n);
            let mut hess = DMatrix::zeros(n, n);
            let mut singular = false;
            for (b, (m, r)) in targets.iter().enumerate() {
                let xb = unpack(&x, b);
                // At tiny mu the iterate can sit on the boundary to rounding.
                let Some(s_inv) = slack(&xb, *r).try_inverse() else {
                    singular = true;
                    break;
                };
                let g = &xb - m + &xb * &s_inv * (2.0 * mu);
                let (rows, cols) = shapes[b];
                grad.rows_mut(offsets[b], rows * cols)
                    .copy_from_slice(g.as_slice());
                for j in 0..rows * cols {
                    let mut e = DMatrix::zeros(rows, cols);
                    e.as_mut_slice()[j] = 1.0;
                    let inner = e.transpose() * &xb + xb.transpose() * &e;
                    let he = &e + (&e * &s_inv + &xb * &s_inv * inner * &s_inv) * (2.0 * mu);
                    hess.view_mut((offsets[b], offsets[b] + j), (rows * cols, 1))
                        .copy_from_slice(he.as_slice());
                }
            }
            if singular {
                break;
            }
            let hess = (&hess + hess.transpose()) * 0.5;
            let Some(chol) = hess.cholesky() else { break };
            let step = chol.solve(&(-&grad));
            // The scaled objective f / mu is self-concordant, so the damped
            // Newton step 1 / (1 + lambda) stays feasible without a line search
            // (which would stall on rounding once f stops changing).
            let lambda_sq = -grad.dot(&step) / mu;
            if lambda_sq.is_nan() || lambda_sq <= 1e-22 {
                break;
            }
            let lambda = lambda_sq.sqrt();
            let mut t = if lambda < 0.25 {
                1.0
            } else {
                1.0 / (1.0 + lambda)
            };
            while objective(&(&x + &step * t), mu).is_none() && t > 1e-20 {
                t *= 0.5;
            }
            x += &step * t;
        }
        mu *= 0.1;
    }
    ((0..targets.len()).map(|b| unpack(&x, b)).collect(), last)
}
