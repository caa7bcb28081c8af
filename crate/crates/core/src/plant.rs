//! Known linear dynamics `x_{t+1} = A x_t + B u_t + w_t` and the disturbance
//! processes that drive them.
//!
//! Rounds are 1-based: round `t` sees state `x_t`, plays `u_t`, and the
//! disturbance `w_t` moves the system to `x_{t+1}`. The first state is zero.
//! Disturbance sequences are always generated for the whole horizon before
//! any controller runs, which makes them oblivious by construction.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::costs::CostOracle;
use crate::error::{dim_err, Error, Result};
use crate::numerics::spectral_norm;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearPlant {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    kappa_b: f64,
}

impl LinearPlant {
    /// Builds a plant with `kappa_B = max(1, ||B||)`.
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        let kappa_b = spectral_norm(&b)?.max(1.0);
        Self::with_kappa_b(a, b, kappa_b)
    }

    pub fn with_kappa_b(a: DMatrix<f64>, b: DMatrix<f64>, kappa_b: f64) -> Result<Self> {
        if !a.is_square() || a.nrows() == 0 {
            return Err(dim_err(format!(
                "A must be square and non-empty, got {:?}",
                a.shape()
            )));
        }
        if b.nrows() != a.nrows() || b.ncols() == 0 {
            return Err(dim_err(format!(
                "B must be {}xk with k >= 1, got {:?}",
                a.nrows(),
                b.shape()
            )));
        }
        spectral_norm(&a)?;
        let nb = spectral_norm(&b)?;
        if kappa_b < 1.0 || nb > kappa_b * (1.0 + 1e-12) {
            return Err(Error::Parameter(format!(
                "kappa_B = {kappa_b} must be >= max(1, ||B|| = {nb})"
            )));
        }
        Ok(Self { a, b, kappa_b })
    }

    /// Scalar plant `x' = a x + b u + w`.
    pub fn scalar(a: f64, b: f64) -> Result<Self> {
        Self::new(
            DMatrix::from_element(1, 1, a),
            DMatrix::from_element(1, 1, b),
        )
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn kappa_b(&self) -> f64 {
        self.kappa_b
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn control_dim(&self) -> usize {
        self.b.ncols()
    }

    /// `A - B K`, the closed loop under `u = -K x`.
    pub fn closed_loop(&self, k: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_gain(k)?;
        Ok(&self.a - &self.b * k)
    }

    pub fn check_gain(&self, k: &DMatrix<f64>) -> Result<()> {
        if k.shape() != (self.control_dim(), self.state_dim()) {
            return Err(dim_err(format!(
                "controller must be {}x{}, got {:?}",
                self.control_dim(),
                self.state_dim(),
                k.shape()
            )));
        }
        Ok(())
    }

    /// One transition `A x + B u + w`.
    pub fn step(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        w: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        let d = self.state_dim();
        if x.len() != d || w.len() != d || u.len() != self.control_dim() {
            return Err(dim_err(format!(
                "step expects x,w in R^{d} and u in R^{}, got {}, {}, {}",
                self.control_dim(),
                x.len(),
                w.len(),
                u.len()
            )));
        }
        Ok(&self.a * x + &self.b * u + w)
    }

    /// Simulates `u_t = -K x_t` from the zero state and returns the total cost
    /// together with the trajectory.
    pub fn rollout_fixed_k(
        &self,
        k: &DMatrix<f64>,
        noise: &[DVector<f64>],
        costs: &CostOracle,
    ) -> Result<(f64, Trajectory)> {
        self.check_gain(k)?;
        let mut x = DVector::zeros(self.state_dim());
        let mut traj = Trajectory::with_capacity(noise.len());
        traj.states.push(x.clone());
        let mut total = 0.0;
        for (i, w) in noise.iter().enumerate() {
            let u = -(k * &x);
            let c = costs.eval(i + 1, &x, &u)?;
            total += c;
            x = self.step(&x, &u, w)?;
            traj.states.push(x.clone());
            traj.controls.push(u);
            traj.disturbances.push(w.clone());
            traj.costs.push(c);
        }
        Ok((total, traj))
    }
}

/// States `x_1..x_{T+1}`, controls and disturbances `1..T`, and per-round costs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub states: Vec<DVector<f64>>,
    pub controls: Vec<DVector<f64>>,
    pub disturbances: Vec<DVector<f64>>,
    pub costs: Vec<f64>,
}

impl Trajectory {
    pub fn with_capacity(t: usize) -> Self {
        Self {
            states: Vec::with_capacity(t + 1),
            controls: Vec::with_capacity(t),
            disturbances: Vec::with_capacity(t),
            costs: Vec::with_capacity(t),
        }
    }

    pub fn horizon(&self) -> usize {
        self.controls.len()
    }

    /// Largest violation of `x_{t+1} = A x_t + B u_t + w_t` along the trajectory.
    pub fn max_dynamics_residual(&self, plant: &LinearPlant) -> f64 {
        (0..self.horizon())
            .map(|t| {
                let pred = plant.a() * &self.states[t]
                    + plant.b() * &self.controls[t]
                    + &self.disturbances[t];
                (pred - &self.states[t + 1]).amax()
            })
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum NoiseKind {
    /// Isotropic Gaussian with per-coordinate std `sigma`, rejected outside `||w|| <= bound`.
    TruncatedGaussian { sigma: f64, bound: f64 },
    /// `w = (bound / sqrt(d)) s` with independent uniform signs `s`.
    ScaledRademacher { bound: f64 },
    /// Deterministic `amplitude * sin(2 pi f t + 2 pi j / d)` per coordinate,
    /// rescaled onto the ball of radius `bound` when it leaves it.
    Sinusoidal {
        amplitude: f64,
        frequency: f64,
        bound: f64,
    },
    /// Fixed sequence, typically loaded with [`load_noise_csv`].
    FileBacked {
        #[serde(skip)]
        vectors: Vec<DVector<f64>>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseProcess {
    pub kind: NoiseKind,
    pub seed: u64,
}

impl NoiseProcess {
    pub fn new(kind: NoiseKind, seed: u64) -> Result<Self> {
        match &kind {
            NoiseKind::TruncatedGaussian { sigma, bound } => {
                positive("sigma", *sigma)?;
                positive("bound", *bound)?;
            }
            NoiseKind::ScaledRademacher { bound } => positive("bound", *bound)?,
            NoiseKind::Sinusoidal {
                amplitude,
                frequency,
                bound,
            } => {
                positive("bound", *bound)?;
                if !amplitude.is_finite() || !frequency.is_finite() {
                    return Err(Error::Config("sinusoidal parameters must be finite".into()));
                }
            }
            NoiseKind::FileBacked { vectors } => {
                if vectors.is_empty() {
                    return Err(Error::Config("file-backed noise has no rows".into()));
                }
            }
        }
        Ok(Self { kind, seed })
    }

    /// Disturbance bound `W` with `||w_t|| <= W` for every emitted vector.
    pub fn bound(&self) -> f64 {
        match &self.kind {
            NoiseKind::TruncatedGaussian { bound, .. }
            | NoiseKind::ScaledRademacher { bound }
            | NoiseKind::Sinusoidal { bound, .. } => *bound,
            NoiseKind::FileBacked { vectors } => {
                vectors.iter().map(|v| v.norm()).fold(0.0, f64::max)
            }
        }
    }

    pub fn is_stochastic(&self) -> bool {
        matches!(
            self.kind,
            NoiseKind::TruncatedGaussian { .. } | NoiseKind::ScaledRademacher { .. }
        )
    }

    /// `sigma` such that `E[w w^T] >= sigma^2 I` in dimension `d`, for the
    /// i.i.d. kinds. `None` for deterministic sequences.
    pub fn covariance_floor(&self, d: usize) -> Option<f64> {
        match &self.kind {
            NoiseKind::TruncatedGaussian { sigma, bound } => {
                Some(sigma * truncated_gaussian_variance_factor(d, bound / sigma).sqrt())
            }
            NoiseKind::ScaledRademacher { bound } => Some(bound / (d as f64).sqrt()),
            _ => None,
        }
    }

    /// Draws the entire length-`t` sequence up front.
    pub fn generate(&self, horizon: usize, d: usize) -> Result<Vec<DVector<f64>>> {
        if horizon == 0 || d == 0 {
            return Err(Error::Parameter(
                "noise horizon and dimension must be positive".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        match &self.kind {
            NoiseKind::TruncatedGaussian { sigma, bound } => Ok((0..horizon)
                .map(|_| truncated_gaussian(d, *sigma, *bound, &mut rng))
                .collect()),
            NoiseKind::ScaledRademacher { bound } => {
                let s = bound / (d as f64).sqrt();
                Ok((0..horizon)
                    .map(|_| DVector::from_fn(d, |_, _| if rng.random::<bool>() { s } else { -s }))
                    .collect())
            }
            NoiseKind::Sinusoidal {
                amplitude,
                frequency,
                bound,
            } => Ok((1..=horizon)
                .map(|t| {
                    let w = DVector::from_fn(d, |j, _| {
                        let phase =
                            std::f64::consts::TAU * (frequency * t as f64 + j as f64 / d as f64);
                        amplitude * phase.sin()
                    });
                    clamp_norm(w, *bound)
                })
                .collect()),
            NoiseKind::FileBacked { vectors } => {
                if vectors.len() < horizon {
                    return Err(Error::Config(format!(
                        "file-backed noise has {} rows, horizon needs {horizon}",
                        vectors.len()
                    )));
                }
                if vectors.iter().any(|v| v.len() != d) {
                    return Err(dim_err(format!(
                        "file-backed noise rows must have {d} columns"
                    )));
                }
                Ok(vectors[..horizon].to_vec())
            }
        }
    }

    /// A fresh i.i.d. draw from the same law, for Monte Carlo over windows.
    pub fn sample<R: Rng + ?Sized>(&self, d: usize, rng: &mut R) -> Result<DVector<f64>> {
        match &self.kind {
            NoiseKind::TruncatedGaussian { sigma, bound } => {
                Ok(truncated_gaussian(d, *sigma, *bound, rng))
            }
            NoiseKind::ScaledRademacher { bound } => {
                let s = bound / (d as f64).sqrt();
                Ok(DVector::from_fn(d, |_, _| {
                    if rng.random::<bool>() {
                        s
                    } else {
                        -s
                    }
                }))
            }
            _ => Err(Error::Parameter("noise law is not stochastic".into())),
        }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "{name} must be positive and finite, got {v}"
        )))
    }
}

fn clamp_norm(w: DVector<f64>, bound: f64) -> DVector<f64> {
    let n = w.norm();
    if n > bound {
        w * (bound / n)
    } else {
        w
    }
}

fn truncated_gaussian<R: Rng + ?Sized>(
    d: usize,
    sigma: f64,
    bound: f64,
    rng: &mut R,
) -> DVector<f64> {
    loop {
        let w = DVector::from_fn(d, |_, _| {
            let z: f64 = StandardNormal.sample(rng);
            sigma * z
        });
        if w.norm() <= bound {
            return w;
        }
    }
}

/// Variance shrinkage of an isotropic Gaussian conditioned on `||z|| <= c`
/// (unit per-coordinate variance): `E[z z^T | ||z|| <= c] = factor * I` with
/// `factor = P(chi2_{d+2} <= c^2) / P(chi2_d <= c^2)`.
pub fn truncated_gaussian_variance_factor(d: usize, c: f64) -> f64 {
    let c2 = c * c;
    let num = ChiSquared::new((d + 2) as f64).map(|x| x.cdf(c2));
    let den = ChiSquared::new(d as f64).map(|x| x.cdf(c2));
    match (num, den) {
        (Ok(n), Ok(dd)) if dd > 0.0 => n / dd,
        _ => 0.0,
    }
}

/// Reads a disturbance sequence from CSV with header `t,w1,...,wd`.
pub fn load_noise_csv(path: impl AsRef<Path>) -> Result<Vec<DVector<f64>>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    if headers.get(0) != Some("t") || headers.len() < 2 {
        return Err(Error::Config(format!(
            "noise csv header must be t,w1..wd, got {:?}",
            headers.iter().collect::<Vec<_>>()
        )));
    }
    for (j, h) in headers.iter().skip(1).enumerate() {
        if h != format!("w{}", j + 1) {
            return Err(Error::Config(format!("unexpected noise column {h:?}")));
        }
    }
    let d = headers.len() - 1;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let vals = rec
            .iter()
            .skip(1)
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Config(format!("bad noise value {s:?}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        if vals.len() != d {
            return Err(dim_err(format!(
                "noise row has {} values, expected {d}",
                vals.len()
            )));
        }
        out.push(DVector::from_vec(vals));
    }
    Ok(out)
}

pub fn write_noise_csv(path: impl AsRef<Path>, noise: &[DVector<f64>]) -> Result<()> {
    let d = noise.first().map_or(0, |w| w.len());
    let mut wtr = csv::Writer::from_path(path)?;
    let mut header = vec!["t".to_string()];
    header.extend((1..=d).map(|j| format!("w{j}")));
    wtr.write_record(&header)?;
    for (t, w) in noise.iter().enumerate() {
        let mut row = vec![(t + 1).to_string()];
        row.extend(w.iter().map(|v| format!("{v:e}")));
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}
