//! Memoryless bandit convex optimization over a product of spectral balls:
//! one-point gradient estimates with per-block sampling radii and a
//! preconditioned projected step.

use serde::{Deserialize, Serialize};

use crate::dap::ControlConstants;
use crate::error::{Error, Result};
use crate::numerics::{BlockMatrix, SpectralBalls};

/// Smallest sampling radius accepted before aborting the run.
pub const MIN_RADIUS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    StronglyConvexSmooth,
    ConvexSmooth,
    ConvexNonsmooth,
}

impl Regime {
    pub fn name(&self) -> &'static str {
        match self {
            Regime::StronglyConvexSmooth => "strongly-convex-smooth",
            Regime::ConvexSmooth => "convex-smooth",
            Regime::ConvexNonsmooth => "convex-nonsmooth",
        }
    }
}

/// Everything a schedule formula reads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleInputs {
    pub alpha_f: f64,
    pub beta_f: f64,
    pub l_f: f64,
    /// Bound on the observed feedback magnitude.
    pub c_hat: f64,
    pub d: usize,
    pub k: usize,
    /// Memory length `H` (1 for a memoryless problem).
    pub h: usize,
    /// `min(d, k)`.
    pub n: usize,
    /// Squared diameter bound `D^2` of the feasible set.
    pub diameter_sq: f64,
    /// Unshrunk radii `r_0^[i]`, one per block.
    pub base_radii: Vec<f64>,
}

impl ScheduleInputs {
    pub fn from_constants(c: &ControlConstants) -> Self {
        Self {
            alpha_f: c.alpha_f,
            beta_f: c.beta_f,
            l_f: c.l_f,
            c_hat: c.c_hat,
            d: c.params.d,
            k: c.params.k,
            h: c.h,
            n: c.n,
            diameter_sq: c.diameter_sq,
            base_radii: c.base_radii(),
        }
    }

    pub fn d_m(&self) -> usize {
        self.d * self.k * self.h
    }
}

/// Optional replacements for the analysis constants plus a multiplier on
/// the resulting step size. All fields default to "use the formula".
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleOverrides {
    pub alpha_f: Option<f64>,
    pub beta_f: Option<f64>,
    pub l_f: Option<f64>,
    pub c_hat: Option<f64>,
    pub eta_scale: Option<f64>,
}

impl ScheduleOverrides {
    pub fn apply(&self, inputs: &mut ScheduleInputs) -> Result<f64> {
        let set = |slot: &mut f64, v: Option<f64>, name: &str| -> Result<()> {
            if let Some(v) = v {
                if !(v > 0.0) || !v.is_finite() {
                    return Err(Error::Config(format!(
                        "override {name} must be positive, got {v}"
                    )));
                }
                *slot = v;
            }
            Ok(())
        };
        set(&mut inputs.alpha_f, self.alpha_f, "alpha_f")?;
        set(&mut inputs.beta_f, self.beta_f, "beta_f")?;
        set(&mut inputs.l_f, self.l_f, "l_f")?;
        set(&mut inputs.c_hat, self.c_hat, "c_hat")?;
        let mut scale = 1.0;
        set(&mut scale, self.eta_scale, "eta_scale")?;
        Ok(scale)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum RadiusRule {
    /// `r_tau^-2 = r_0^-2 + slope * tau`.
    Growing { slope: f64 },
    /// `r^-2 = r_0^-2 + offset` for every `tau`.
    Fixed { offset: f64 },
}

/// Step size, radius schedule and the predicted per-update center drift
/// `delta_tau` and perturbation size `rho_tau`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub regime: Regime,
    pub eta: f64,
    pub horizon: usize,
    pub inputs: ScheduleInputs,
    rule: RadiusRule,
}

/// Builds the schedule for `regime` from the horizon-`horizon` formulas.
///
/// Strongly convex: `eta = sqrt((3 n^2 + 15 (beta_f/alpha_f) ln T) / (T (d k C_hat)^2))`,
/// `r_tau^[i] = [r_0^-2 + alpha_f eta tau / 2]^(-1/2)`.
/// Convex nonsmooth: `eta = 2 [(H+1)^3 L_f^2 D^2 / (d_M^6 C_hat^6 T)]^(1/4)`,
/// `r^[i] = [r_0^-2 + 4 L_f sqrt((H+1) T) / (d_M C_hat D)]^(-1/2)`.
/// Convex smooth: `eta = [2 (H+1) beta_f D^2 / (d_M^4 C_hat^4 T)]^(1/3)`,
/// `r^[i] = [r_0^-2 + (4 beta_f^2 T / ((H+1) d_M^2 C_hat^2 D^2))^(1/3)]^(-1/2)`.
pub fn make_schedule(regime: Regime, inputs: ScheduleInputs, horizon: usize) -> Result<Schedule> {
    make_scaled_schedule(regime, inputs, horizon, 1.0)
}

/// [`make_schedule`] with `eta` multiplied by `eta_scale`; the radius
/// formulas are evaluated with the scaled step.
pub fn make_scaled_schedule(
    regime: Regime,
    inputs: ScheduleInputs,
    horizon: usize,
    eta_scale: f64,
) -> Result<Schedule> {
    if horizon < 3 {
        return Err(Error::DegenerateHorizon(horizon));
    }
    if !(eta_scale > 0.0) || !eta_scale.is_finite() {
        return Err(Error::Config(format!(
            "eta scale must be positive, got {eta_scale}"
        )));
    }
    if inputs.base_radii.len() != inputs.h || inputs.base_radii.iter().any(|r| !(*r > 0.0)) {
        return Err(Error::Config(
            "base radii must be positive, one per block".into(),
        ));
    }
    if !(inputs.c_hat > 0.0) || !(inputs.diameter_sq > 0.0) || inputs.d_m() == 0 {
        return Err(Error::Config(
            "feedback bound and diameter must be positive".into(),
        ));
    }
    let t = horizon as f64;
    let hp1 = (inputs.h + 1) as f64;
    let dm = inputs.d_m() as f64;
    let ch = inputs.c_hat;
    let dd = inputs.diameter_sq.sqrt();
    let (eta, rule) = match regime {
        Regime::StronglyConvexSmooth => {
            if !(inputs.alpha_f > 0.0) || !inputs.alpha_f.is_finite() {
                return Err(Error::Config(format!(
                    "strongly convex schedule needs alpha_f > 0 (got {}); it requires strongly convex costs and stochastic noise",
                    inputs.alpha_f
                )));
            }
            if !inputs.beta_f.is_finite() {
                return Err(Error::Config(
                    "strongly convex schedule needs finite beta_f".into(),
                ));
            }
            let n = inputs.n as f64;
            let dk = (inputs.d * inputs.k) as f64;
            let num = 3.0 * n * n + 15.0 * (inputs.beta_f / inputs.alpha_f) * t.ln();
            let eta = eta_scale * (num / (t * (dk * ch).powi(2))).sqrt();
            (
                eta,
                RadiusRule::Growing {
                    slope: 0.5 * inputs.alpha_f * eta,
                },
            )
        }
        Regime::ConvexNonsmooth => {
            if !(inputs.l_f > 0.0) || !inputs.l_f.is_finite() {
                return Err(Error::Config(format!(
                    "nonsmooth schedule needs L_f > 0, got {}",
                    inputs.l_f
                )));
            }
            let eta = eta_scale
                * 2.0
                * (hp1.powi(3) * inputs.l_f.powi(2) * inputs.diameter_sq
                    / (dm.powi(6) * ch.powi(6) * t))
                    .powf(0.25);
            let offset = 4.0 * inputs.l_f * (hp1 * t).sqrt() / (dm * ch * dd);
            (eta, RadiusRule::Fixed { offset })
        }
        Regime::ConvexSmooth => {
            if !(inputs.beta_f > 0.0) || !inputs.beta_f.is_finite() {
                return Err(Error::Config(format!(
                    "smooth schedule needs finite beta_f > 0, got {}",
                    inputs.beta_f
                )));
            }
            let eta = eta_scale
                * (2.0 * hp1 * inputs.beta_f * inputs.diameter_sq / (dm.powi(4) * ch.powi(4) * t))
                    .cbrt();
            let offset = (4.0 * inputs.beta_f.powi(2) * t
                / (hp1 * dm * dm * ch * ch * inputs.diameter_sq))
                .cbrt();
            (eta, RadiusRule::Fixed { offset })
        }
    };
    if !(eta > 0.0) || !eta.is_finite() {
        return Err(Error::Numerical(format!("step size evaluated to {eta}")));
    }
    Ok(Schedule {
        regime,
        eta,
        horizon,
        inputs,
        rule,
    })
}

impl Schedule {
    pub fn d_m(&self) -> usize {
        self.inputs.d_m()
    }

    /// Radii `r_tau^[i]`; `tau = 0` gives the base radii.
    pub fn radii(&self, tau: usize) -> Vec<f64> {
        let add = match self.rule {
            RadiusRule::Growing { slope } => slope * tau as f64,
            RadiusRule::Fixed { offset } => offset,
        };
        self.inputs
            .base_radii
            .iter()
            .map(|r0| (r0.powi(-2) + add).powf(-0.5))
            .collect()
    }

    /// Like [`radii`](Self::radii) but aborts on degenerate radii.
    pub fn checked_radii(&self, tau: usize) -> Result<Vec<f64>> {
        let r = self.radii(tau);
        if r.iter().any(|v| !(*v >= MIN_RADIUS)) {
            return Err(Error::Numerical(format!(
                "sampling radius fell below {MIN_RADIUS:e} at update {tau}; the experiment is mis-scaled"
            )));
        }
        Ok(r)
    }

    /// Predicted bound on `||center_{tau+1} - center_tau||_F` when the
    /// feedback magnitude is at most `c_hat`.
    pub fn delta(&self, tau: usize) -> f64 {
        let dm = self.d_m() as f64;
        match self.rule {
            RadiusRule::Growing { .. } => {
                dm * self.inputs.c_hat
                    * (2.0 * self.eta / (self.inputs.alpha_f * tau.max(1) as f64)).sqrt()
            }
            RadiusRule::Fixed { .. } => self.eta * dm * self.inputs.c_hat * self.rho(tau),
        }
    }

    /// Predicted bound on `||played - center||_F`.
    pub fn rho(&self, tau: usize) -> f64 {
        let t = self.horizon as f64;
        let hp1 = (self.inputs.h + 1) as f64;
        let dm = self.d_m() as f64;
        let ch = self.inputs.c_hat;
        let dsq = self.inputs.diameter_sq;
        match self.regime {
            Regime::StronglyConvexSmooth => {
                (2.0 / (self.inputs.alpha_f * self.eta * tau.max(1) as f64)).sqrt()
            }
            Regime::ConvexNonsmooth => {
                (dm * dsq.sqrt() * ch / (4.0 * self.inputs.l_f * (hp1 * t).sqrt())).sqrt()
            }
            Regime::ConvexSmooth => (hp1 * dm * dm * ch * ch * dsq
                / (4.0 * self.inputs.beta_f.powi(2) * t))
                .cbrt()
                .sqrt(),
        }
    }
}

/// `g^[i] = (d_M / r^[i]) feedback U^[i]`.
pub fn one_point_gradient(
    feedback: f64,
    u: &BlockMatrix,
    radii: &[f64],
    d_m: usize,
) -> Result<BlockMatrix> {
    if radii.iter().any(|r| !(*r > 0.0)) {
        return Err(Error::Numerical(format!(
            "one-point estimate with nonpositive radius {radii:?}"
        )));
    }
    let factors: Vec<f64> = radii.iter().map(|r| d_m as f64 * feedback / r).collect();
    u.scale_blocks(&factors)
}

/// `Pi_i[center^[i] - eta (r^[i])^2 g^[i]]` for every block.
pub fn omd_step(
    center: &BlockMatrix,
    grad: &BlockMatrix,
    eta: f64,
    radii: &[f64],
    set: &SpectralBalls,
) -> Result<BlockMatrix> {
    let factors: Vec<f64> = radii.iter().map(|r| -eta * r * r).collect();
    let step = grad.scale_blocks(&factors)?;
    set.project(&center.add(&step)?)
}

/// Bookkeeping of a single base update.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateRecord {
    /// Update counter before the update.
    pub tau: usize,
    pub feedback: f64,
    pub drift: f64,
    pub delta: f64,
    /// `||played - center||_F` for the point that produced the feedback.
    pub perturbation: f64,
    pub rho: f64,
}

/// Optimizer state: center, schedule, and update counter (starting at 1).
#[derive(Debug, Clone)]
pub struct BcoState {
    center: BlockMatrix,
    set: SpectralBalls,
    schedule: Schedule,
    tau: usize,
    radii: Vec<f64>,
}

impl BcoState {
    /// Starts at the zero center with `tau = 1`.
    pub fn new(schedule: Schedule, set: SpectralBalls) -> Result<Self> {
        let i = &schedule.inputs;
        if set.len() != i.h {
            return Err(Error::Config(format!(
                "{} radii for {} blocks",
                set.len(),
                i.h
            )));
        }
        let center = BlockMatrix::zeros(i.k, i.d, i.h);
        let radii = schedule.checked_radii(1)?;
        Ok(Self {
            center,
            set,
            schedule,
            tau: 1,
            radii,
        })
    }

    pub fn center(&self) -> &BlockMatrix {
        &self.center
    }

    pub fn tau(&self) -> usize {
        self.tau
    }

    pub fn radii(&self) -> &[f64] {
        &self.radii
    }

    pub fn schedule(&self) -> &Schedule {
        &self.schedule
    }

    pub fn set(&self) -> &SpectralBalls {
        &self.set
    }

    /// `center + r_tau . U`.
    pub fn play(&self, u: &BlockMatrix) -> Result<BlockMatrix> {
        self.center.add(&u.scale_blocks(&self.radii)?)
    }

    /// One base round: the point played with `u`, its feedback, then the
    /// update with the current radii and `tau += 1`.
    pub fn base_round(
        &mut self,
        u: &BlockMatrix,
        feedback: f64,
    ) -> Result<(BlockMatrix, UpdateRecord)> {
        let played = self.play(u)?;
        let record = self.update(u, feedback)?;
        Ok((played, record))
    }

    /// Updates the center with the feedback observed at `center + r_tau . U`.
    pub fn update(&mut self, u: &BlockMatrix, feedback: f64) -> Result<UpdateRecord> {
        if !feedback.is_finite() {
            return Err(Error::NonFinite(format!("feedback {feedback}")));
        }
        let d_m = self.schedule.d_m();
        let perturbation = u.scale_blocks(&self.radii)?.frobenius_norm();
        let g = one_point_gradient(feedback, u, &self.radii, d_m)?;
        let next = omd_step(&self.center, &g, self.schedule.eta, &self.radii, &self.set)?;
        let drift = next.sub(&self.center)?.frobenius_norm();
        let record = UpdateRecord {
            tau: self.tau,
            feedback,
            drift,
            delta: self.schedule.delta(self.tau),
            perturbation,
            rho: self.schedule.rho(self.tau),
        };
        self.center = next;
        self.tau += 1;
        self.radii = self.schedule.checked_radii(self.tau)?;
        Ok(record)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_inputs() -> ScheduleInputs {
        ScheduleInputs {
            alpha_f: 0.5,
            beta_f: 2.0,
            l_f: 3.0,
            c_hat: 4.0,
            d: 1,
            k: 1,
            h: 2,
            n: 1,
            diameter_sq: 2.0,
            base_radii: vec![1.0, 0.5],
        }
    }

    #[test]
    fn strongly_convex_radii_start_at_base_and_decay() {
        let s = make_schedule(Regime::StronglyConvexSmooth, scalar_inputs(), 1000).unwrap();
        assert_eq!(s.radii(0), vec![1.0, 0.5]);
        let r1 = s.radii(1 << 30)[0];
        let r2 = s.radii(1 << 31)[0];
        assert!((r1 / r2 - 2f64.sqrt()).abs() < 1e-6);
    }

    #[test]
    fn alpha_required_for_strong_convexity() {
        let mut i = scalar_inputs();
        i.alpha_f = 0.0;
        assert!(matches!(
            make_schedule(Regime::StronglyConvexSmooth, i, 1000),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn gradient_examples() {
        let u = BlockMatrix::from_flat(1, 1, 1, &[1.0]).unwrap();
        assert_eq!(
            one_point_gradient(0.0, &u, &[0.5], 1).unwrap().to_flat(),
            vec![0.0]
        );
        assert_eq!(
            one_point_gradient(2.0, &u, &[0.5], 1).unwrap().to_flat(),
            vec![4.0]
        );
        assert!(one_point_gradient(2.0, &u, &[0.0], 1).is_err());
    }

    #[test]
    fn omd_examples() {
        let set = SpectralBalls::new(vec![1.0]).unwrap();
        let c = BlockMatrix::from_flat(1, 1, 1, &[0.5]).unwrap();
        let g = |v: f64| BlockMatrix::from_flat(1, 1, 1, &[v]).unwrap();
        assert_eq!(omd_step(&c, &g(0.0), 1.0, &[1.0], &set).unwrap(), c);
        assert_eq!(
            omd_step(&c, &g(1.0), 1.0, &[1.0], &set).unwrap().to_flat(),
            vec![-0.5]
        );
        assert_eq!(
            omd_step(&c, &g(-2.0), 1.0, &[1.0], &set).unwrap().to_flat(),
            vec![1.0]
        );
    }

    #[test]
    fn convex_drift_bound_matches_closed_form() {
        for regime in [Regime::ConvexNonsmooth, Regime::ConvexSmooth] {
            let i = scalar_inputs();
            let s = make_schedule(regime, i.clone(), 5000).unwrap();
            let closed = (i.diameter_sq * 3.0 / 5000.0).sqrt();
            assert!(
                (s.delta(1) - closed).abs() < 1e-12 * closed.max(1.0),
                "{regime:?}"
            );
            let rmax = s.radii(1).into_iter().fold(0.0, f64::max);
            assert!(rmax <= s.rho(1) * (1.0 + 1e-12));
        }
    }

    #[test]
    fn zero_feedback_keeps_center() {
        let s = make_schedule(Regime::ConvexSmooth, scalar_inputs(), 100).unwrap();
        let mut st = BcoState::new(s, SpectralBalls::new(vec![1.0, 0.5]).unwrap()).unwrap();
        let u = BlockMatrix::from_flat(1, 1, 2, &[0.6, 0.8]).unwrap();
        for _ in 0..10 {
            st.update(&u, 0.0).unwrap();
        }
        assert_eq!(st.center().frobenius_norm(), 0.0);
        assert_eq!(st.tau(), 11);
    }
}
