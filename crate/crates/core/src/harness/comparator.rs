//! Offline comparators: the best constant disturbance-action policy for the
//! realized disturbances, and the best static linear gain on a grid.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::costs::{CostFamily, CostOracle};
use crate::dap::{noise_window, DapModel};
use crate::error::{Error, Result};
use crate::numerics::{sample_unit_sphere, BlockMatrix, SpectralBalls};
use crate::plant::LinearPlant;
use crate::stability::certify;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComparatorOptions {
    pub restarts: usize,
    pub max_iters: usize,
    /// Tolerance on the norm of the projected-gradient mapping.
    pub tol: f64,
    pub seed: u64,
}

impl Default for ComparatorOptions {
    fn default() -> Self {
        Self {
            restarts: 10,
            max_iters: 4000,
            tol: 1e-8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ComparatorResult {
    pub m: BlockMatrix,
    pub j: f64,
    pub restart_values: Vec<f64>,
    pub converged: bool,
}

/// Sum over rounds of the surrogate cost of a constant policy. The ideal
/// states and actions of all rounds are stacked: `Y = y0 + phi_y m` and
/// `U = u0 + phi_u m`, with `m` the flat policy.
pub struct SurrogateObjective<'a> {
    cost: &'a CostOracle,
    rounds: usize,
    shape: (usize, usize, usize),
    y0: DVector<f64>,
    phi_y: DMatrix<f64>,
    u0: DVector<f64>,
    phi_u: DMatrix<f64>,
    quadratic: Option<(DMatrix<f64>, DVector<f64>, f64)>,
}

impl<'a> SurrogateObjective<'a> {
    /// Rounds `1..=noise.len()`; `noise[t-1] = w_t`.
    pub fn new(model: &DapModel, cost: &'a CostOracle, noise: &[DVector<f64>]) -> Result<Self> {
        let h = model.memory();
        let d = model.state_dim();
        let k = model.control_dim();
        let p = d * k * h;
        let rounds = noise.len();
        let mut y0 = DVector::zeros(rounds * d);
        let mut phi_y = DMatrix::zeros(rounds * d, p);
        let mut u0 = DVector::zeros(rounds * k);
        let mut phi_u = DMatrix::zeros(rounds * k, p);
        for t in 1..=rounds {
            let f = model.linear_features(&noise_window(noise, t, 2 * h + 1, d))?;
            let (ry, ru) = ((t - 1) * d, (t - 1) * k);
            let (ys, us) = match cost.targets() {
                Some(path) => {
                    let (x, u) = path.at(t);
                    (x.clone(), u.clone())
                }
                None => (DVector::zeros(d), DVector::zeros(k)),
            };
            y0.rows_mut(ry, d).copy_from(&(&f.y0 - ys));
            u0.rows_mut(ru, k).copy_from(&(&f.u0 - us));
            phi_y.rows_mut(ry, d).copy_from(&f.phi_y);
            phi_u.rows_mut(ru, k).copy_from(&f.phi_u);
        }
        let mut obj = Self {
            cost,
            rounds,
            shape: (k, d, h),
            y0,
            phi_y,
            u0,
            phi_u,
            quadratic: None,
        };
        obj.quadratic = obj.aggregate_quadratic();
        Ok(obj)
    }

    pub fn rounds(&self) -> usize {
        self.rounds
    }

    /// For quadratic costs the objective is `m^T A m + 2 b^T m + c`.
    fn aggregate_quadratic(&self) -> Option<(DMatrix<f64>, DVector<f64>, f64)> {
        let (qx, qu) = match self.cost.family() {
            CostFamily::Quadratic { qx, qu } | CostFamily::SmoothConvex { qx, qu } => (qx, qu),
            CostFamily::NonsmoothLipschitz { .. } => return None,
        };
        let (k, d, _) = self.shape;
        let wy = block_diag_apply(qx, &self.phi_y, d);
        let wu = block_diag_apply(qu, &self.phi_u, k);
        let a = self.phi_y.transpose() * &wy + self.phi_u.transpose() * &wu;
        let b = wy.transpose() * &self.y0 + wu.transpose() * &self.u0;
        let qy0 = block_diag_apply(
            qx,
            &DMatrix::from_column_slice(self.y0.len(), 1, self.y0.as_slice()),
            d,
        );
        let qu0 = block_diag_apply(
            qu,
            &DMatrix::from_column_slice(self.u0.len(), 1, self.u0.as_slice()),
            k,
        );
        let c = self.y0.dot(&qy0.column(0)) + self.u0.dot(&qu0.column(0));
        Some((a, b, c))
    }

    /// `sum_t f_t(M, ..., M)`.
    pub fn value(&self, m: &BlockMatrix) -> Result<f64> {
        Ok(self.per_round(m)?.iter().sum())
    }

    /// `f_t(M, ..., M)` for every round.
    pub fn per_round(&self, m: &BlockMatrix) -> Result<Vec<f64>> {
        let (k, d, h) = self.shape;
        if m.len() != h || m.block_shape() != (k, d) {
            return Err(Error::Dimension(
                "policy shape does not match the objective".into(),
            ));
        }
        let flat = DVector::from_vec(m.to_flat());
        let y = &self.y0 + &self.phi_y * &flat;
        let u = &self.u0 + &self.phi_u * &flat;
        // Targets are already folded into the offsets.
        Ok((0..self.rounds)
            .map(|t| {
                let yt = y.rows(t * d, d);
                let ut = u.rows(t * k, k);
                match self.cost.family() {
                    CostFamily::Quadratic { qx, qu } | CostFamily::SmoothConvex { qx, qu } => {
                        yt.dot(&(qx * yt)) + ut.dot(&(qu * ut))
                    }
                    CostFamily::NonsmoothLipschitz { a, b } => a * yt.norm() + b * ut.norm(),
                }
            })
            .collect())
    }

    /// Value and gradient in flat coordinates. `mu > 0` replaces each norm
    /// `||z||` of a nonsmooth cost by `sqrt(||z||^2 + mu^2)`.
    fn value_grad(&self, flat: &DVector<f64>, mu: f64) -> Result<(f64, DVector<f64>)> {
        if let Some((a, b, c)) = &self.quadratic {
            let am = a * flat;
            return Ok((flat.dot(&am) + 2.0 * b.dot(flat) + c, (am + b) * 2.0));
        }
        let CostFamily::NonsmoothLipschitz { a, b } = *self.cost.family() else {
            unreachable!("smooth families are quadratic");
        };
        let (k, d, _) = self.shape;
        let mut y = &self.y0 + &self.phi_y * flat;
        let mut u = &self.u0 + &self.phi_u * flat;
        let total = smoothed_norms(&mut y, d, a, mu) + smoothed_norms(&mut u, k, b, mu);
        let grad = self.phi_y.tr_mul(&y) + self.phi_u.tr_mul(&u);
        Ok((total, grad))
    }
}

/// `diag(q, ..., q) * m` for a stack of `len`-row chunks.
fn block_diag_apply(q: &DMatrix<f64>, m: &DMatrix<f64>, len: usize) -> DMatrix<f64> {
    let mut out = m.clone();
    for s in (0..m.nrows()).step_by(len) {
        let chunk = q * m.rows(s, len);
        out.rows_mut(s, len).copy_from(&chunk);
    }
    out
}

/// Sums `scale * sqrt(||z_t||^2 + mu^2)` over `len`-chunks of `z` and
/// overwrites `z` with the chunkwise gradient.
fn smoothed_norms(z: &mut DVector<f64>, len: usize, scale: f64, mu: f64) -> f64 {
    let mut total = 0.0;
    for s in (0..z.len()).step_by(len) {
        let mut chunk = z.rows_mut(s, len);
        let n = (chunk.norm_squared() + mu * mu).sqrt();
        total += scale * n;
        if n > 0.0 {
            chunk *= scale / n;
        } else {
            chunk.fill(0.0);
        }
    }
    total
}

fn project_flat(
    set: &SpectralBalls,
    shape: (usize, usize, usize),
    v: &DVector<f64>,
) -> Result<DVector<f64>> {
    let m = BlockMatrix::from_flat(shape.0, shape.1, shape.2, v.as_slice())?;
    Ok(DVector::from_vec(set.project(&m)?.to_flat()))
}

/// Accelerated projected gradient with backtracking and adaptive restart.
/// Stops when the gradient mapping is below tolerance or the objective has
/// stopped moving at machine precision.
fn minimize_from(
    obj: &SurrogateObjective<'_>,
    set: &SpectralBalls,
    start: DVector<f64>,
    mu: f64,
    opts: &ComparatorOptions,
) -> Result<(DVector<f64>, bool)> {
    let mut x = project_flat(set, obj.shape, &start)?;
    let (mut fx, g0) = obj.value_grad(&x, mu)?;
    let mut lip = g0.norm().max(1.0);
    let scale = fx.abs().max(1.0);
    let mut y = x.clone();
    let mut momentum = 1.0f64;
    let mut stalled = 0;
    for _ in 0..opts.max_iters {
        let (fy, gy) = obj.value_grad(&y, mu)?;
        let mut accepted = None;
        for _ in 0..80 {
            let cand = project_flat(set, obj.shape, &(&y - &gy * (1.0 / lip)))?;
            let diff = &cand - &y;
            let (fc, _) = obj.value_grad(&cand, mu)?;
            if fc <= fy + gy.dot(&diff) + 0.5 * lip * diff.norm_squared() + 1e-14 * scale {
                accepted = Some((cand, fc, diff));
                break;
            }
            lip *= 2.0;
        }
        let Some((cand, fc, diff)) = accepted else {
            return Ok((x, false));
        };
        let mapping = lip * diff.norm();
        if fc > fx {
            if momentum == 1.0 {
                // No descent even without momentum: optimal to working precision.
                return Ok((x, true));
            }
            // Momentum overshoot: restart from the last iterate.
            y = x.clone();
            momentum = 1.0;
            continue;
        }
        stalled = if fx - fc <= 1e-15 * scale {
            stalled + 1
        } else {
            0
        };
        let next_m = 0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt());
        y = &cand + (&cand - &x) * ((momentum - 1.0) / next_m);
        momentum = next_m;
        x = cand;
        fx = fc;
        if mapping <= opts.tol * scale || stalled >= 50 {
            return Ok((x, true));
        }
        lip *= 0.9;
    }
    Ok((x, false))
}

/// Best constant policy in `set` for the realized disturbances:
/// `argmin_M sum_t f_t(M, ..., M)`, over `opts.restarts` starts (the first
/// at zero, the rest random). Nonsmooth costs use a shrinking smoothing
/// parameter before the final evaluation.
pub fn best_fixed_m(
    model: &DapModel,
    cost: &CostOracle,
    noise: &[DVector<f64>],
    set: &SpectralBalls,
    opts: &ComparatorOptions,
) -> Result<ComparatorResult> {
    let obj = SurrogateObjective::new(model, cost, noise)?;
    best_fixed_m_for(&obj, set, opts)
}

pub fn best_fixed_m_for(
    obj: &SurrogateObjective<'_>,
    set: &SpectralBalls,
    opts: &ComparatorOptions,
) -> Result<ComparatorResult> {
    let (k, d, h) = obj.shape;
    if set.len() != h {
        return Err(Error::Parameter(
            "comparator set does not match the policy shape".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mus: Vec<f64> = if obj.cost.is_smooth() {
        vec![0.0]
    } else {
        let scale = set.radii()[0].max(1e-3);
        (0..7)
            .map(|i| scale * 10f64.powi(-i))
            .chain([0.0])
            .collect()
    };
    let mut best: Option<(f64, DVector<f64>)> = None;
    let mut values = Vec::with_capacity(opts.restarts.max(1));
    let mut converged = true;
    for r in 0..opts.restarts.max(1) {
        let mut x = if r == 0 {
            DVector::zeros(k * d * h)
        } else {
            let u = sample_unit_sphere(k, d, h, &mut rng)?;
            let big = u.scale_blocks(
                &set.radii()
                    .iter()
                    .map(|r| r * 2.0 * (h as f64).sqrt())
                    .collect::<Vec<_>>(),
            )?;
            DVector::from_vec(big.to_flat())
        };
        let mut ok = true;
        for &mu in &mus {
            let (nx, c) = minimize_from(obj, set, x, mu, opts)?;
            x = nx;
            ok = c;
        }
        converged &= ok;
        let m = BlockMatrix::from_flat(k, d, h, x.as_slice())?;
        let v = obj.value(&m)?;
        values.push(v);
        if best.as_ref().is_none_or(|(bv, _)| v < *bv) {
            best = Some((v, x));
        }
    }
    if !converged {
        log::warn!("best_fixed_m: projected gradient did not meet tolerance on every restart");
    }
    let (j, x) = best.expect("at least one restart");
    Ok(ComparatorResult {
        m: BlockMatrix::from_flat(k, d, h, x.as_slice())?,
        j,
        restart_values: values,
        converged,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GainResult {
    pub k: DMatrix<f64>,
    pub j: f64,
    pub evaluated: usize,
}

/// Best static gain among `candidates` that certify as stabilizing, scored
/// by exact rollout over the recorded disturbances.
pub fn best_fixed_k(
    plant: &LinearPlant,
    noise: &[DVector<f64>],
    cost: &CostOracle,
    candidates: &[DMatrix<f64>],
) -> Result<GainResult> {
    let mut best: Option<GainResult> = None;
    let mut evaluated = 0;
    for k in candidates {
        if certify(plant, k).is_err() {
            continue;
        }
        evaluated += 1;
        let (j, _) = plant.rollout_fixed_k(k, noise, cost)?;
        if best.as_ref().is_none_or(|b| j < b.j) {
            best = Some(GainResult {
                k: k.clone(),
                j,
                evaluated: 0,
            });
        }
    }
    let mut best =
        best.ok_or_else(|| Error::Parameter("no candidate gain is stabilizing".into()))?;
    best.evaluated = evaluated;
    Ok(best)
}

/// Scalar gain grid `lo, lo + step, ..., hi` (scalar plants only).
pub fn scalar_gain_grid(lo: f64, hi: f64, step: f64) -> Result<Vec<DMatrix<f64>>> {
    if !(step > 0.0) || !(hi >= lo) {
        return Err(Error::Parameter(
            "gain grid needs step > 0 and hi >= lo".into(),
        ));
    }
    let n = ((hi - lo) / step).round() as usize;
    Ok((0..=n)
        .map(|i| DMatrix::from_element(1, 1, lo + i as f64 * step))
        .collect())
}
