//! Disturbance-action policies: `u_t = -K0 x_t + sum_i M^[i] w_{t-i}`.
//!
//! Also holds the analysis constants that size everything else, the
//! comparator sets, and the ideal (surrogate) state/action machinery whose
//! cost depends on a bounded window of recent policies and disturbances.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::costs::CostOracle;
use crate::error::{dim_err, Error, Result};
use crate::numerics::{BlockMatrix, SpectralBalls};
use crate::plant::{LinearPlant, NoiseProcess};
use crate::stability::StabilityClass;

/// Policy tuple `(M^[1], ..., M^[H])`, each block `k x d`.
pub type DapParams = BlockMatrix;

/// Inputs to [`compute_constants`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    pub kappa: f64,
    pub gamma: f64,
    pub kappa_b: f64,
    /// Disturbance bound `W`.
    pub w: f64,
    /// Cost gradient constant `G` (at radius `D_xu`).
    pub g: f64,
    /// Cost magnitude constant `C` (at radius `D_xu`).
    pub c: f64,
    pub alpha: f64,
    pub beta: f64,
    /// Noise covariance floor `sigma` (`E[w w^T] >= sigma^2 I`); zero if none.
    pub sigma: f64,
    pub d: usize,
    pub k: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlConstants {
    pub params: SystemParams,
    pub horizon: usize,
    /// Memory length `H`.
    pub h: usize,
    pub d_xu: f64,
    pub l_f: f64,
    pub beta_f: f64,
    pub alpha_f: f64,
    /// Ambient dimension `d k H`.
    pub d_m: usize,
    /// `min(d, k)`.
    pub n: usize,
    /// Squared diameter bound of the comparator set, `4 n^2 kappa_B^2 kappa^6 / gamma`.
    pub diameter_sq: f64,
    /// Feedback magnitude bound `C D_xu^2`.
    pub c_hat: f64,
}

/// `H = ceil(ln(2 kappa^3 T) / gamma)`.
pub fn memory_length(kappa: f64, gamma: f64, horizon: usize) -> Result<usize> {
    if horizon < 3 {
        return Err(Error::DegenerateHorizon(horizon));
    }
    check_class(kappa, gamma)?;
    let h = ((2.0 * kappa.powi(3) * horizon as f64).ln() / gamma).ceil();
    Ok((h as usize).max(1))
}

/// `D_xu = 8 kappa_B kappa^3 W (H kappa_B + 1) / gamma`.
pub fn state_bound(kappa: f64, gamma: f64, kappa_b: f64, w: f64, h: usize) -> f64 {
    8.0 * kappa_b * kappa.powi(3) * w * (h as f64 * kappa_b + 1.0) / gamma
}

fn check_class(kappa: f64, gamma: f64) -> Result<()> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::Parameter(format!(
            "gamma must be in (0, 1], got {gamma}"
        )));
    }
    if !(kappa >= 1.0) || !kappa.is_finite() {
        return Err(Error::Parameter(format!("kappa must be >= 1, got {kappa}")));
    }
    Ok(())
}

pub fn compute_constants(p: &SystemParams, horizon: usize) -> Result<ControlConstants> {
    let h = memory_length(p.kappa, p.gamma, horizon)?;
    if !(p.kappa_b >= 1.0) || !(p.w > 0.0) || p.d == 0 || p.k == 0 {
        return Err(Error::Parameter(format!(
            "need kappa_B >= 1, W > 0 and positive dimensions (got {}, {}, {}, {})",
            p.kappa_b, p.w, p.d, p.k
        )));
    }
    if [p.g, p.c, p.alpha, p.sigma]
        .iter()
        .any(|v| !(*v >= 0.0) || !v.is_finite())
        || !(p.beta >= 0.0)
    {
        return Err(Error::Parameter(
            "cost and noise constants must be nonnegative".into(),
        ));
    }
    let (kappa, gamma, kb, w) = (p.kappa, p.gamma, p.kappa_b, p.w);
    let d_xu = state_bound(kappa, gamma, kb, w, h);
    let l_f = 2.0 * kb * kappa.powi(3) * p.g * d_xu * w / gamma;
    let beta_f = 25.0 * p.beta * kb * kb * kappa.powi(6) * w * w * h as f64 / (gamma * gamma);
    let alpha_f = p.alpha * p.sigma * p.sigma * gamma * gamma / (36.0 * kappa.powi(10));
    let n = p.d.min(p.k);
    Ok(ControlConstants {
        params: *p,
        horizon,
        h,
        d_xu,
        l_f,
        beta_f,
        alpha_f,
        d_m: p.d * p.k * h,
        n,
        diameter_sq: 4.0 * (n * n) as f64 * kb * kb * kappa.powi(6) / gamma,
        c_hat: p.c * d_xu * d_xu,
    })
}

/// Constants for a concrete setup. `G` and `C` are read off the cost at
/// radius `D_xu`, which only depends on the class, `kappa_B`, `W` and `H`.
pub fn derive_constants(
    class: StabilityClass,
    kappa_b: f64,
    noise: &NoiseProcess,
    cost: &CostOracle,
    horizon: usize,
) -> Result<ControlConstants> {
    let h = memory_length(class.kappa, class.gamma, horizon)?;
    let w = noise.bound();
    if !(w > 0.0) {
        return Err(Error::Config(
            "noise bound W is zero; use a noise process with a declared positive bound".into(),
        ));
    }
    let d_xu = state_bound(class.kappa, class.gamma, kappa_b, w, h);
    let cc = cost.constants_at(d_xu)?;
    let d = cost.state_dim();
    compute_constants(
        &SystemParams {
            kappa: class.kappa,
            gamma: class.gamma,
            kappa_b,
            w,
            g: cc.g,
            c: cc.c,
            alpha: cc.alpha,
            beta: cc.beta,
            sigma: noise.covariance_floor(d).unwrap_or(0.0),
            d,
            k: cost.control_dim(),
        },
        horizon,
    )
}

impl ControlConstants {
    /// Radii `2 kappa_B kappa^3 (1 - gamma)^i`, `i = 1..H`, of the comparator set.
    pub fn base_radii(&self) -> Vec<f64> {
        comparator_radii(
            self.params.kappa,
            self.params.gamma,
            self.params.kappa_b,
            self.h,
        )
    }

    /// The comparator set as a product of spectral balls.
    pub fn comparator_set(&self) -> Result<SpectralBalls> {
        SpectralBalls::new(self.base_radii()).map_err(|_| {
            Error::Config(format!(
                "gamma = {} collapses the policy set to zero; configure a smaller class gamma",
                self.params.gamma
            ))
        })
    }

    /// The enlarged set in which perturbed plays live (all radii doubled).
    pub fn enlarged_set(&self) -> Result<SpectralBalls> {
        self.comparator_set()?.scaled(2.0)
    }
}

pub fn comparator_radii(kappa: f64, gamma: f64, kappa_b: f64, h: usize) -> Vec<f64> {
    (1..=h)
        .map(|i| 2.0 * kappa_b * kappa.powi(3) * (1.0 - gamma).powi(i as i32))
        .collect()
}

/// Frobenius projection onto the comparator set (blockwise clipping).
pub fn project_m(m: &BlockMatrix, set: &SpectralBalls) -> Result<DapParams> {
    set.project(m)
}

/// `-K0 x + sum_i M^[i] w_hist[i-1]`, where `w_hist[i-1] = w_{t-i}`.
pub fn dap_action(
    m: &DapParams,
    k0: &DMatrix<f64>,
    x: &DVector<f64>,
    w_hist: &[DVector<f64>],
) -> Result<DVector<f64>> {
    let (k, d) = m.block_shape();
    if k0.shape() != (k, d) || x.len() != d || w_hist.len() < m.len() {
        return Err(dim_err(format!(
            "DAP action: K0 {:?}, x {}, {} noise terms for {} blocks of {k}x{d}",
            k0.shape(),
            x.len(),
            w_hist.len(),
            m.len()
        )));
    }
    let mut u = -(k0 * x);
    for (block, w) in m.blocks().iter().zip(w_hist) {
        if w.len() != d {
            return Err(dim_err("noise history entry has wrong dimension"));
        }
        u += block * w;
    }
    Ok(u)
}

/// `window[l] = w_{t-1-l}` for `l = 0..len`, zero before the first round.
/// `noise[s - 1]` holds `w_s`.
pub fn noise_window(noise: &[DVector<f64>], t: usize, len: usize, d: usize) -> Vec<DVector<f64>> {
    (0..len)
        .map(|l| {
            let s = t as isize - 1 - l as isize;
            if s >= 1 && (s as usize) <= noise.len() {
                noise[s as usize - 1].clone()
            } else {
                DVector::zeros(d)
            }
        })
        .collect()
}

/// Affine description of the ideal state/action under a constant policy:
/// `y = y0 + phi_y vec(M)` and `u = u0 + phi_u vec(M)`, with `vec` the
/// flat layout of [`BlockMatrix::to_flat`].
#[derive(Debug, Clone)]
pub struct LinearFeatures {
    pub y0: DVector<f64>,
    pub phi_y: DMatrix<f64>,
    pub u0: DVector<f64>,
    pub phi_u: DMatrix<f64>,
}

impl LinearFeatures {
    pub fn eval(&self, flat: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        (&self.y0 + &self.phi_y * flat, &self.u0 + &self.phi_u * flat)
    }
}

/// A plant/controller pair together with cached closed-loop powers.
#[derive(Debug, Clone)]
pub struct DapModel {
    b: DMatrix<f64>,
    k0: DMatrix<f64>,
    closed: DMatrix<f64>,
    /// `closed^j` for `j = 0..=H`.
    powers: Vec<DMatrix<f64>>,
    /// `closed^j B` for `j = 0..H`.
    powers_b: Vec<DMatrix<f64>>,
    h: usize,
}

impl DapModel {
    pub fn new(plant: &LinearPlant, k0: &DMatrix<f64>, h: usize) -> Result<Self> {
        if h == 0 {
            return Err(Error::Parameter("memory length must be positive".into()));
        }
        let closed = plant.closed_loop(k0)?;
        let d = closed.nrows();
        let mut powers = vec![DMatrix::identity(d, d)];
        for j in 1..=h {
            let next = &powers[j - 1] * &closed;
            powers.push(next);
        }
        let powers_b = powers[..h].iter().map(|p| p * plant.b()).collect();
        Ok(Self {
            b: plant.b().clone(),
            k0: k0.clone(),
            closed,
            powers,
            powers_b,
            h,
        })
    }

    pub fn memory(&self) -> usize {
        self.h
    }

    pub fn k0(&self) -> &DMatrix<f64> {
        &self.k0
    }

    pub fn closed_loop(&self) -> &DMatrix<f64> {
        &self.closed
    }

    pub fn state_dim(&self) -> usize {
        self.closed.nrows()
    }

    pub fn control_dim(&self) -> usize {
        self.b.ncols()
    }

    fn check_policy(&self, m: &DapParams) -> Result<()> {
        if m.len() != self.h || m.block_shape() != (self.control_dim(), self.state_dim()) {
            return Err(dim_err(format!(
                "policy has {} blocks of {:?}, expected {} of {:?}",
                m.len(),
                m.block_shape(),
                self.h,
                (self.control_dim(), self.state_dim())
            )));
        }
        Ok(())
    }

    fn check_window(&self, window: &[DVector<f64>]) -> Result<()> {
        if window.len() != 2 * self.h + 1 || window.iter().any(|w| w.len() != self.state_dim()) {
            return Err(dim_err(format!(
                "noise window must hold {} vectors of length {}",
                2 * self.h + 1,
                self.state_dim()
            )));
        }
        Ok(())
    }

    pub fn action(
        &self,
        m: &DapParams,
        x: &DVector<f64>,
        w_hist: &[DVector<f64>],
    ) -> Result<DVector<f64>> {
        self.check_policy(m)?;
        dap_action(m, &self.k0, x, w_hist)
    }

    /// Disturbance-to-state transfer matrix `Psi_i` for the `H` policies
    /// `m_seq` (oldest first, `m_seq[H-1]` acting one round before the
    /// ideal state):
    /// `Psi_i = A~^i 1{i <= H} + sum_{j<H} A~^j B m_seq[H-1-j]^[i-j] 1{1 <= i-j <= H}`.
    pub fn psi(&self, m_seq: &[DapParams], i: usize) -> Result<DMatrix<f64>> {
        let h = self.h;
        if m_seq.len() != h {
            return Err(dim_err(format!(
                "psi needs {h} policies, got {}",
                m_seq.len()
            )));
        }
        if i > 2 * h {
            return Err(Error::Parameter(format!(
                "psi index {i} outside 0..={}",
                2 * h
            )));
        }
        for m in m_seq {
            self.check_policy(m)?;
        }
        let d = self.state_dim();
        let mut out = if i <= h {
            self.powers[i].clone()
        } else {
            DMatrix::zeros(d, d)
        };
        for j in 0..h {
            if i > j && i - j <= h {
                out += &self.powers_b[j] * m_seq[h - 1 - j].block(i - j - 1);
            }
        }
        Ok(out)
    }

    /// Ideal state and action at round `t` from `H + 1` policies (rounds
    /// `t-H..t`, oldest first) and `window[l] = w_{t-1-l}`, `l = 0..=2H`.
    pub fn ideal_state_action(
        &self,
        m_seq: &[DapParams],
        window: &[DVector<f64>],
    ) -> Result<(DVector<f64>, DVector<f64>)> {
        let h = self.h;
        if m_seq.len() != h + 1 {
            return Err(dim_err(format!(
                "ideal state needs {} policies, got {}",
                h + 1,
                m_seq.len()
            )));
        }
        for m in m_seq {
            self.check_policy(m)?;
        }
        self.check_window(window)?;
        let mut y = DVector::zeros(self.state_dim());
        for (p, w) in self.powers.iter().zip(window).take(h + 1) {
            y += p * w;
        }
        for j in 0..h {
            let m = &m_seq[h - 1 - j];
            let mut v = DVector::zeros(self.control_dim());
            for l in 1..=h {
                v += m.block(l - 1) * &window[j + l];
            }
            y += &self.powers_b[j] * v;
        }
        let mut u = -(&self.k0 * &y);
        for l in 1..=h {
            u += m_seq[h].block(l - 1) * &window[l - 1];
        }
        Ok((y, u))
    }

    /// `f_t(M_{0:H}) = c_t(y_t, u_t)`.
    pub fn surrogate_cost(
        &self,
        oracle: &CostOracle,
        t: usize,
        m_seq: &[DapParams],
        window: &[DVector<f64>],
    ) -> Result<f64> {
        let (y, u) = self.ideal_state_action(m_seq, window)?;
        oracle.eval(t, &y, &u)
    }

    /// `f_t(M, ..., M)`.
    pub fn surrogate_constant(
        &self,
        oracle: &CostOracle,
        t: usize,
        m: &DapParams,
        window: &[DVector<f64>],
    ) -> Result<f64> {
        let seq = vec![m.clone(); self.h + 1];
        self.surrogate_cost(oracle, t, &seq, window)
    }

    /// Affine features of the ideal state/action for a constant policy.
    pub fn linear_features(&self, window: &[DVector<f64>]) -> Result<LinearFeatures> {
        self.check_window(window)?;
        let (d, k, h) = (self.state_dim(), self.control_dim(), self.h);
        let p = d * k * h;
        let mut y0 = DVector::zeros(d);
        for (p, w) in self.powers.iter().zip(window).take(h + 1) {
            y0 += p * w;
        }
        // vec(G M w) = (w^T kron G) vec(M) for column-major vec.
        let mut phi_y = DMatrix::zeros(d, p);
        let mut phi_v = DMatrix::zeros(k, p);
        for l in 1..=h {
            let off = (l - 1) * k * d;
            for j in 0..h {
                let w = &window[j + l];
                let g = &self.powers_b[j];
                for c in 0..d {
                    if w[c] != 0.0 {
                        let mut cols = phi_y.columns_mut(off + c * k, k);
                        cols += g * w[c];
                    }
                }
            }
            let w = &window[l - 1];
            for c in 0..d {
                for r in 0..k {
                    phi_v[(r, off + c * k + r)] += w[c];
                }
            }
        }
        let u0 = -(&self.k0 * &y0);
        let phi_u = phi_v - &self.k0 * &phi_y;
        Ok(LinearFeatures {
            y0,
            phi_y,
            u0,
            phi_u,
        })
    }

    /// Monte Carlo estimate of `E_w[f_t(M_seq)]` with its standard error.
    /// Window entries before round 1 stay zero.
    pub fn expected_surrogate<R: Rng + ?Sized>(
        &self,
        oracle: &CostOracle,
        t: usize,
        m_seq: &[DapParams],
        law: &WindowLaw<'_>,
        n_mc: usize,
        rng: &mut R,
    ) -> Result<(f64, f64)> {
        if n_mc < 2 {
            return Err(Error::Parameter(format!(
                "need at least 2 Monte Carlo samples, got {n_mc}"
            )));
        }
        let len = 2 * self.h + 1;
        let d = self.state_dim();
        match law {
            WindowLaw::Fixed(window) => Ok((self.surrogate_cost(oracle, t, m_seq, window)?, 0.0)),
            WindowLaw::Iid(noise) => {
                let mut sum = 0.0;
                let mut sum_sq = 0.0;
                for _ in 0..n_mc {
                    let window = (0..len)
                        .map(|l| {
                            if t as isize - 1 - l as isize >= 1 {
                                noise.sample(d, rng)
                            } else {
                                Ok(DVector::zeros(d))
                            }
                        })
                        .collect::<Result<Vec<_>>>()?;
                    let f = self.surrogate_cost(oracle, t, m_seq, &window)?;
                    sum += f;
                    sum_sq += f * f;
                }
                let n = n_mc as f64;
                let mean = sum / n;
                let var = ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0);
                Ok((mean, (var / n).sqrt()))
            }
        }
    }
}

/// Distribution of the noise window used by [`DapModel::expected_surrogate`].
#[derive(Debug, Clone)]
pub enum WindowLaw<'a> {
    /// A single fixed window (zero variance).
    Fixed(&'a [DVector<f64>]),
    /// Every entry drawn i.i.d. from the process law.
    Iid(&'a NoiseProcess),
}
