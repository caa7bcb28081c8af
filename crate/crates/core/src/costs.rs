//! Per-round convex costs `c_t(x, u)` with registered curvature constants,
//! and the scalar bandit feedback channel.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum CostFamily {
    /// `(x-x*)^T Qx (x-x*) + (u-u*)^T Qu (u-u*)` with `Qx, Qu` positive definite.
    Quadratic { qx: DMatrix<f64>, qu: DMatrix<f64> },
    /// Same form with positive semidefinite weights; registered `alpha = 0`.
    SmoothConvex { qx: DMatrix<f64>, qu: DMatrix<f64> },
    /// `a ||x - x*|| + b ||u - u*||`.
    NonsmoothLipschitz { a: f64, b: f64 },
}

/// Oblivious per-round targets `x*_t, u*_t`, generated before the run as a
/// seeded random walk clamped to a ball.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetPath {
    xs: Vec<DVector<f64>>,
    us: Vec<DVector<f64>>,
    bound: f64,
}

impl TargetPath {
    /// Random walk with Gaussian increments of std `step` per coordinate,
    /// started at the origin and clamped to `||.|| <= bound`.
    pub fn random_walk(
        horizon: usize,
        d: usize,
        k: usize,
        step: f64,
        bound: f64,
        seed: u64,
    ) -> Result<Self> {
        if horizon == 0 || !(step >= 0.0) || !(bound >= 0.0) {
            return Err(Error::Config(format!(
                "target walk needs horizon > 0, step >= 0, bound >= 0 (got {horizon}, {step}, {bound})"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut walk = |n: usize| {
            let mut z = DVector::<f64>::zeros(n);
            (0..horizon)
                .map(|_| {
                    z += DVector::from_fn(n, |_, _| {
                        let s: f64 = StandardNormal.sample(&mut rng);
                        step * s
                    });
                    let norm = z.norm();
                    if norm > bound {
                        z *= bound / norm;
                    }
                    z.clone()
                })
                .collect::<Vec<_>>()
        };
        let xs = walk(d);
        let us = walk(k);
        Ok(Self { xs, us, bound })
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    /// Targets for round `t` (1-based); held at the last value past the end.
    pub fn at(&self, t: usize) -> (&DVector<f64>, &DVector<f64>) {
        let i = t.saturating_sub(1).min(self.xs.len() - 1);
        (&self.xs[i], &self.us[i])
    }
}

/// Constants `(C, G, alpha, beta)` valid on `||x||, ||u|| <= radius`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostConstants {
    pub radius: f64,
    pub c: f64,
    pub g: f64,
    pub alpha: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostOracle {
    family: CostFamily,
    targets: Option<TargetPath>,
    d: usize,
    k: usize,
}

fn sym(q: &DMatrix<f64>) -> DMatrix<f64> {
    (q + q.transpose()) * 0.5
}

fn eig_range(q: &DMatrix<f64>) -> (f64, f64) {
    let e = q.clone().symmetric_eigenvalues();
    (e.min(), e.max())
}

impl CostOracle {
    pub fn quadratic(qx: DMatrix<f64>, qu: DMatrix<f64>) -> Result<Self> {
        let (qx, qu) = Self::check_weights(qx, qu)?;
        if eig_range(&qx).0 <= 0.0 || eig_range(&qu).0 <= 0.0 {
            // Zero weights are allowed only through the smooth-convex family.
            if eig_range(&qx).0 < -1e-12 || eig_range(&qu).0 < -1e-12 {
                return Err(Error::Config("quadratic cost weights must be PSD".into()));
            }
            return Ok(Self::build(CostFamily::SmoothConvex { qx, qu }));
        }
        Ok(Self::build(CostFamily::Quadratic { qx, qu }))
    }

    pub fn smooth_convex(qx: DMatrix<f64>, qu: DMatrix<f64>) -> Result<Self> {
        let (qx, qu) = Self::check_weights(qx, qu)?;
        if eig_range(&qx).0 < -1e-12 || eig_range(&qu).0 < -1e-12 {
            return Err(Error::Config(
                "smooth-convex cost weights must be PSD".into(),
            ));
        }
        Ok(Self::build(CostFamily::SmoothConvex { qx, qu }))
    }

    pub fn nonsmooth(a: f64, b: f64, d: usize, k: usize) -> Result<Self> {
        if !(a >= 0.0 && b >= 0.0) || !a.is_finite() || !b.is_finite() || d == 0 || k == 0 {
            return Err(Error::Config(format!(
                "nonsmooth cost needs a, b >= 0 (got {a}, {b})"
            )));
        }
        Ok(Self {
            family: CostFamily::NonsmoothLipschitz { a, b },
            targets: None,
            d,
            k,
        })
    }

    fn check_weights(qx: DMatrix<f64>, qu: DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        if !qx.is_square() || !qu.is_square() || qx.is_empty() || qu.is_empty() {
            return Err(dim_err("cost weights must be square and non-empty"));
        }
        if qx.iter().chain(qu.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("cost weights".into()));
        }
        Ok((sym(&qx), sym(&qu)))
    }

    fn build(family: CostFamily) -> Self {
        let (d, k) = match &family {
            CostFamily::Quadratic { qx, qu } | CostFamily::SmoothConvex { qx, qu } => {
                (qx.nrows(), qu.nrows())
            }
            CostFamily::NonsmoothLipschitz { .. } => unreachable!(),
        };
        Self {
            family,
            targets: None,
            d,
            k,
        }
    }

    pub fn with_targets(mut self, targets: TargetPath) -> Result<Self> {
        let (x, u) = targets.at(1);
        if x.len() != self.d || u.len() != self.k {
            return Err(dim_err("target dimensions do not match the cost"));
        }
        self.targets = Some(targets);
        Ok(self)
    }

    pub fn family(&self) -> &CostFamily {
        &self.family
    }

    pub fn targets(&self) -> Option<&TargetPath> {
        self.targets.as_ref()
    }

    pub fn state_dim(&self) -> usize {
        self.d
    }

    pub fn control_dim(&self) -> usize {
        self.k
    }

    pub fn is_smooth(&self) -> bool {
        !matches!(self.family, CostFamily::NonsmoothLipschitz { .. })
    }

    /// The same oracle with every cost multiplied by `factor > 0`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        if !(factor > 0.0) || !factor.is_finite() {
            return Err(Error::Parameter(format!(
                "cost scale must be positive, got {factor}"
            )));
        }
        let family = match &self.family {
            CostFamily::Quadratic { qx, qu } => CostFamily::Quadratic {
                qx: qx * factor,
                qu: qu * factor,
            },
            CostFamily::SmoothConvex { qx, qu } => CostFamily::SmoothConvex {
                qx: qx * factor,
                qu: qu * factor,
            },
            CostFamily::NonsmoothLipschitz { a, b } => CostFamily::NonsmoothLipschitz {
                a: a * factor,
                b: b * factor,
            },
        };
        Ok(Self {
            family,
            targets: self.targets.clone(),
            d: self.d,
            k: self.k,
        })
    }

    fn check(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<()> {
        if x.len() != self.d || u.len() != self.k {
            return Err(dim_err(format!(
                "cost expects x in R^{} and u in R^{}, got {} and {}",
                self.d,
                self.k,
                x.len(),
                u.len()
            )));
        }
        Ok(())
    }

    fn offsets(
        &self,
        t: usize,
        x: &DVector<f64>,
        u: &DVector<f64>,
    ) -> (DVector<f64>, DVector<f64>) {
        match &self.targets {
            Some(path) => {
                let (xs, us) = path.at(t);
                (x - xs, u - us)
            }
            None => (x.clone(), u.clone()),
        }
    }

    /// `c_t(x, u)`.
    pub fn eval(&self, t: usize, x: &DVector<f64>, u: &DVector<f64>) -> Result<f64> {
        self.check(x, u)?;
        let (dx, du) = self.offsets(t, x, u);
        Ok(match &self.family {
            CostFamily::Quadratic { qx, qu } | CostFamily::SmoothConvex { qx, qu } => {
                dx.dot(&(qx * &dx)) + du.dot(&(qu * &du))
            }
            CostFamily::NonsmoothLipschitz { a, b } => a * dx.norm() + b * du.norm(),
        })
    }

    /// Exact gradient of [`eval`](Self::eval); at a kink of the nonsmooth
    /// family the zero subgradient is returned.
    pub fn grad(
        &self,
        t: usize,
        x: &DVector<f64>,
        u: &DVector<f64>,
    ) -> Result<(DVector<f64>, DVector<f64>)> {
        self.check(x, u)?;
        let (dx, du) = self.offsets(t, x, u);
        Ok(match &self.family {
            CostFamily::Quadratic { qx, qu } | CostFamily::SmoothConvex { qx, qu } => {
                (qx * &dx * 2.0, qu * &du * 2.0)
            }
            CostFamily::NonsmoothLipschitz { a, b } => {
                let unit = |v: &DVector<f64>, s: f64| {
                    let n = v.norm();
                    if n == 0.0 {
                        DVector::zeros(v.len())
                    } else {
                        v * (s / n)
                    }
                };
                (unit(&dx, *a), unit(&du, *b))
            }
        })
    }

    /// Registered `(C, G, alpha, beta)` on the ball `||x||, ||u|| <= radius`.
    ///
    /// With targets bounded by `s`, the offsets are bounded by `radius + s`,
    /// which is what `C` and `G` absorb. The nonsmooth family reports
    /// `beta = inf`.
    pub fn constants_at(&self, radius: f64) -> Result<CostConstants> {
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::Parameter(format!(
                "cost radius must be positive, got {radius}"
            )));
        }
        let s = self.targets.as_ref().map_or(0.0, |p| p.bound());
        let grow = 1.0 + s / radius;
        Ok(match &self.family {
            CostFamily::Quadratic { qx, qu } | CostFamily::SmoothConvex { qx, qu } => {
                let (lx_min, lx_max) = eig_range(qx);
                let (lu_min, lu_max) = eig_range(qu);
                let alpha = match self.family {
                    CostFamily::Quadratic { .. } => 2.0 * lx_min.min(lu_min),
                    _ => 0.0,
                };
                CostConstants {
                    radius,
                    c: (lx_max + lu_max) * grow * grow,
                    g: 2.0 * lx_max.max(lu_max) * grow,
                    alpha,
                    beta: 2.0 * lx_max.max(lu_max),
                }
            }
            CostFamily::NonsmoothLipschitz { a, b } => CostConstants {
                radius,
                c: (a + b) * (radius + s) / (radius * radius),
                g: a.max(*b) / radius,
                alpha: 0.0,
                beta: f64::INFINITY,
            },
        })
    }
}

/// Scalar feedback handed to the learner.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BanditFeedback {
    pub value: f64,
    pub epsilon_bound: f64,
}

/// Source of the bounded, possibly adaptive, additive feedback disturbance.
pub trait Perturber {
    fn epsilon(&self) -> f64;

    /// Disturbance for round `t` given the clean cost. Implementations may
    /// keep any history they like.
    fn perturb(&mut self, t: usize, clean: f64) -> f64;
}

/// No perturbation: the learner sees `c_t(x_t, u_t)` exactly.
#[derive(Debug, Clone, Copy, Default)]
pub struct Exact;

impl Perturber for Exact {
    fn epsilon(&self) -> f64 {
        0.0
    }

    fn perturb(&mut self, _t: usize, _clean: f64) -> f64 {
        0.0
    }
}

/// Constant bias `+epsilon` every round.
#[derive(Debug, Clone, Copy)]
pub struct ConstantBias(pub f64);

impl Perturber for ConstantBias {
    fn epsilon(&self) -> f64 {
        self.0.abs()
    }

    fn perturb(&mut self, _t: usize, _clean: f64) -> f64 {
        self.0
    }
}

/// Adaptive adversary: pushes the feedback against the direction the clean
/// cost last moved, with magnitude `epsilon`.
#[derive(Debug, Clone)]
pub struct SignFlipping {
    epsilon: f64,
    last: Option<f64>,
    pub injected: Vec<f64>,
}

impl SignFlipping {
    pub fn new(epsilon: f64) -> Self {
        Self {
            epsilon: epsilon.abs(),
            last: None,
            injected: Vec::new(),
        }
    }
}

impl Perturber for SignFlipping {
    fn epsilon(&self) -> f64 {
        self.epsilon
    }

    fn perturb(&mut self, _t: usize, clean: f64) -> f64 {
        let delta = match self.last {
            Some(prev) if clean > prev => -self.epsilon,
            _ => self.epsilon,
        };
        self.last = Some(clean);
        self.injected.push(delta);
        delta
    }
}

/// Bounded uniform noise in `[-epsilon, epsilon]` from its own stream.
#[derive(Debug, Clone)]
pub struct UniformJitter {
    epsilon: f64,
    rng: ChaCha8Rng,
}

impl UniformJitter {
    pub fn new(epsilon: f64, seed: u64) -> Self {
        Self {
            epsilon: epsilon.abs(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl Perturber for UniformJitter {
    fn epsilon(&self) -> f64 {
        self.epsilon
    }

    fn perturb(&mut self, _t: usize, _clean: f64) -> f64 {
        if self.epsilon == 0.0 {
            0.0
        } else {
            self.rng.random_range(-self.epsilon..=self.epsilon)
        }
    }
}

/// Observed cost `c_t(x, u) + delta_t` with `|delta_t| <= epsilon` enforced.
pub fn bandit_observe<P: Perturber + ?Sized>(
    oracle: &CostOracle,
    t: usize,
    x: &DVector<f64>,
    u: &DVector<f64>,
    perturber: &mut P,
) -> Result<BanditFeedback> {
    let clean = oracle.eval(t, x, u)?;
    let epsilon = perturber.epsilon();
    let delta = perturber.perturb(t, clean);
    if !delta.is_finite() || delta.abs() > epsilon * (1.0 + 1e-12) {
        return Err(Error::Contract { delta, epsilon });
    }
    Ok(BanditFeedback {
        value: clean + delta,
        epsilon_bound: epsilon,
    })
}
