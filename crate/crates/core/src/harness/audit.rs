//! Invariant checks on finished runs, and empirical probes of the surrogate
//! curvature constants.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::controller::{ControlRun, ControlTrace};
use crate::costs::CostOracle;
use crate::dap::{ControlConstants, DapModel};
use crate::error::{Error, Result};
use crate::numerics::{BlockMatrix, SpectralBalls};
use crate::plant::NoiseProcess;

const RATIO_TOL: f64 = 1e-9;
pub const NOISE_RECOVERY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub invariant: String,
    pub detail: String,
}

fn violation(invariant: &str, detail: String) -> Violation {
    Violation {
        invariant: invariant.to_string(),
        detail,
    }
}

/// Every invariant a finished run must satisfy. An empty list means the
/// run is clean.
pub fn audit_run(run: &ControlRun, trace: &ControlTrace) -> Vec<Violation> {
    let a = &trace.audit;
    let mut out = Vec::new();
    let mut ratio = |name: &str, v: f64, what: &str| {
        if !(v <= 1.0 + RATIO_TOL) {
            out.push(violation(
                name,
                format!("{what} reached {v:.6} of its bound"),
            ));
        }
    };
    ratio("state-bound", a.state_ratio, "max ||x_t|| / D_xu");
    ratio("control-bound", a.control_ratio, "max ||u_t|| / D_xu");
    ratio(
        "played-feasibility",
        a.played_ratio,
        "played policy block norm / enlarged radius",
    );
    ratio(
        "center-feasibility",
        a.center_ratio,
        "center block norm / comparator radius",
    );
    ratio("drift-contract", a.drift_ratio, "center drift / delta");
    ratio(
        "perturbation-contract",
        a.perturbation_ratio,
        "perturbation / rho",
    );
    if !(a.noise_recovery_error <= NOISE_RECOVERY_TOL) {
        out.push(violation(
            "noise-recovery",
            format!(
                "recovered disturbance off by {:.3e}",
                a.noise_recovery_error
            ),
        ));
    }
    let h_eff = trace.h_eff;
    if let Some(&first) = trace.updates.first() {
        if first < h_eff {
            out.push(violation(
                "update-gap",
                format!("first update at round {first} < {h_eff}"),
            ));
        }
    }
    if let Some(gap) = a.min_update_gap {
        if gap < h_eff {
            out.push(violation(
                "update-gap",
                format!("updates {gap} rounds apart, need {h_eff}"),
            ));
        }
    }
    let horizon = run.setup.horizon;
    if trace.updates.len() > horizon / h_eff {
        out.push(violation(
            "update-count",
            format!(
                "{} updates exceed floor(T / H_eff) = {}",
                trace.updates.len(),
                horizon / h_eff
            ),
        ));
    }
    let starts: Vec<usize> = trace.policies.iter().skip(1).map(|p| p.0).collect();
    let expected: Vec<usize> = trace.updates.iter().map(|t| t + 1).collect();
    if trace.policies.first().map(|p| p.0) != Some(1) || starts != expected {
        out.push(violation(
            "constant-between-updates",
            "the played policy changed at a round without an update".into(),
        ));
    }
    out
}

/// Worst observed ratio of a probed quantity to its bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeOutcome {
    pub bound: f64,
    /// Largest `observed / bound` over all samples (for strong convexity,
    /// `(required - 3 SE) / observed`); at most 1 on success.
    pub worst_ratio: f64,
    pub samples: usize,
    pub passed: bool,
}

fn gaussian_blocks<R: Rng + ?Sized>(k: usize, d: usize, h: usize, rng: &mut R) -> BlockMatrix {
    let blocks = (0..h)
        .map(|_| DMatrix::from_fn(k, d, |_, _| StandardNormal.sample(&mut *rng)))
        .collect();
    BlockMatrix::from_blocks(blocks).expect("non-empty blocks")
}

/// A random point of `set`: a Gaussian direction stretched past the set and
/// projected back, so both interior and boundary points occur.
pub fn random_point<R: Rng + ?Sized>(
    set: &SpectralBalls,
    k: usize,
    d: usize,
    rng: &mut R,
) -> Result<BlockMatrix> {
    let g = gaussian_blocks(k, d, set.len(), rng);
    let scales: Vec<f64> = set
        .radii()
        .iter()
        .zip(g.blocks())
        .map(|(r, b)| {
            let n = b.norm().max(1e-300);
            1.5 * rng.random::<f64>() * r / n
        })
        .collect();
    set.project(&g.scale_blocks(&scales)?)
}

fn random_window<R: Rng + ?Sized>(
    noise: &NoiseProcess,
    len: usize,
    d: usize,
    rng: &mut R,
) -> Result<Vec<DVector<f64>>> {
    (0..len).map(|_| noise.sample(d, rng)).collect()
}

/// Coordinate-wise Lipschitz property of `f_t(M_0, ..., M_H)` over the
/// enlarged set: replacing one policy changes the cost by at most
/// `L_f ||M_i - M_i'||_F (1 + 1e-6)`.
pub fn lipschitz_probe<R: Rng + ?Sized>(
    model: &DapModel,
    cost: &CostOracle,
    constants: &ControlConstants,
    noise: &NoiseProcess,
    trials: usize,
    rng: &mut R,
) -> Result<ProbeOutcome> {
    let set = constants.enlarged_set()?;
    let (d, k, h) = (model.state_dim(), model.control_dim(), model.memory());
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let window = random_window(noise, 2 * h + 1, d, rng)?;
        let t = rng.random_range(1..=constants.horizon);
        let seq = (0..=h)
            .map(|_| random_point(&set, k, d, rng))
            .collect::<Result<Vec<_>>>()?;
        let mut other = seq.clone();
        let i = rng.random_range(0..=h);
        other[i] = random_point(&set, k, d, rng)?;
        let dist = other[i].sub(&seq[i])?.frobenius_norm();
        if dist == 0.0 {
            continue;
        }
        let df = (model.surrogate_cost(cost, t, &seq, &window)?
            - model.surrogate_cost(cost, t, &other, &window)?)
        .abs();
        worst = worst.max(df / (constants.l_f * dist));
    }
    Ok(ProbeOutcome {
        bound: constants.l_f,
        worst_ratio: worst,
        samples: trials,
        passed: worst <= 1.0 + 1e-6,
    })
}

/// Second differences of `M -> f_t(M, ..., M)` along random unit
/// directions: Rayleigh quotients of the Hessian, which must stay below
/// `beta_f`. Smooth costs only.
pub fn smoothness_probe<R: Rng + ?Sized>(
    model: &DapModel,
    cost: &CostOracle,
    constants: &ControlConstants,
    noise: &NoiseProcess,
    directions: usize,
    rng: &mut R,
) -> Result<ProbeOutcome> {
    if !cost.is_smooth() {
        return Err(Error::Parameter(
            "smoothness probe needs a smooth cost".into(),
        ));
    }
    let set = constants.enlarged_set()?;
    let (d, k, h) = (model.state_dim(), model.control_dim(), model.memory());
    let step = 1e-3 * set.radii()[0];
    let mut worst: f64 = 0.0;
    for _ in 0..directions {
        let window = random_window(noise, 2 * h + 1, d, rng)?;
        let t = rng.random_range(1..=constants.horizon);
        let m = random_point(&set, k, d, rng)?;
        let v = gaussian_blocks(k, d, h, rng);
        let v = v.scale(1.0 / v.frobenius_norm());
        let f = |p: &BlockMatrix| model.surrogate_constant(cost, t, p, &window);
        let fp = f(&m.add(&v.scale(step))?)?;
        let fm = f(&m.add(&v.scale(-step))?)?;
        let f0 = f(&m)?;
        let q = (fp + fm - 2.0 * f0) / (step * step);
        // Rounding in the second difference.
        let slack = 64.0 * f64::EPSILON * (fp.abs() + fm.abs() + 2.0 * f0.abs()) / (step * step);
        worst = worst.max((q - slack) / constants.beta_f);
    }
    Ok(ProbeOutcome {
        bound: constants.beta_f,
        worst_ratio: worst,
        samples: directions,
        passed: worst <= 1.0 + 1e-6,
    })
}

/// One strong-convexity segment test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChordSample {
    /// Monte Carlo mean of `f(M2) - f(M1) - <grad f(M1), M2 - M1>`.
    pub gap: f64,
    pub se: f64,
    /// `(alpha_f / 2) ||M2 - M1||_F^2`.
    pub required: f64,
}

/// Strong convexity of the expected surrogate `E_w f_t(M, ..., M)` along
/// random segments of the comparator set. Each segment uses the same noise
/// windows at both ends; passes when every mean chord gap is at least
/// `(alpha_f / 2) ||dM||^2 - 3 SE`.
pub fn strong_convexity_probe<R: Rng + ?Sized>(
    model: &DapModel,
    cost: &CostOracle,
    constants: &ControlConstants,
    noise: &NoiseProcess,
    segments: usize,
    n_mc: usize,
    rng: &mut R,
) -> Result<(ProbeOutcome, Vec<ChordSample>)> {
    if !cost.is_smooth() || n_mc < 2 {
        return Err(Error::Parameter(
            "strong convexity probe needs a smooth cost and n_mc >= 2".into(),
        ));
    }
    let set = constants.comparator_set()?;
    let (d, k, h) = (model.state_dim(), model.control_dim(), model.memory());
    let t = constants.horizon;
    let mut worst: f64 = 0.0;
    let mut samples = Vec::with_capacity(segments);
    for _ in 0..segments {
        let m1 = random_point(&set, k, d, rng)?;
        let m2 = random_point(&set, k, d, rng)?;
        let (x1, x2) = (
            DVector::from_vec(m1.to_flat()),
            DVector::from_vec(m2.to_flat()),
        );
        let delta = &x2 - &x1;
        let required = 0.5 * constants.alpha_f * delta.norm_squared();
        let mut gaps = Vec::with_capacity(n_mc);
        for _ in 0..n_mc {
            let window = random_window(noise, 2 * h + 1, d, rng)?;
            let feat = model.linear_features(&window)?;
            let (y1, u1) = feat.eval(&x1);
            let (y2, u2) = feat.eval(&x2);
            let (gx, gu) = cost.grad(t, &y1, &u1)?;
            let grad = feat.phi_y.tr_mul(&gx) + feat.phi_u.tr_mul(&gu);
            gaps.push(cost.eval(t, &y2, &u2)? - cost.eval(t, &y1, &u1)? - grad.dot(&delta));
        }
        let (gap, se) = super::analysis::mean_se(&gaps).expect("n_mc >= 2");
        if required > 0.0 {
            worst = worst.max((required - 3.0 * se) / gap.max(1e-300));
        }
        samples.push(ChordSample { gap, se, required });
    }
    let passed = samples.iter().all(|s| s.gap >= s.required - 3.0 * s.se);
    Ok((
        ProbeOutcome {
            bound: constants.alpha_f,
            worst_ratio: worst,
            samples: segments,
            passed,
        },
        samples,
    ))
}
