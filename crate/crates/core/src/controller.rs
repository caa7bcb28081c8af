//! End-to-end bandit linear control: disturbance-action policies learned by
//! the gated one-point optimizer from scalar cost feedback only.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bco_base::{
    make_scaled_schedule, BcoState, Regime, Schedule, ScheduleInputs, ScheduleOverrides,
    UpdateRecord,
};
use crate::bco_memory::UpdateSchedule;
use crate::costs::{
    bandit_observe, ConstantBias, CostOracle, Exact, Perturber, SignFlipping, UniformJitter,
};
use crate::dap::{dap_action, derive_constants, ControlConstants};
use crate::error::{Error, Result};
use crate::numerics::{sample_unit_sphere, BlockMatrix, SpectralBalls};
use crate::plant::{LinearPlant, NoiseProcess};
use crate::stability::{certify, StabilityCertificate, StabilityClass};

/// Effective adversary memory `2 (H + 1)` seen by the update gate.
pub fn effective_memory(h: usize) -> usize {
    2 * (h + 1)
}

/// Parameter mode: the analysis formulas verbatim, or the same functional
/// forms with replaced constants and a step multiplier.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum Mode {
    #[default]
    Theorem,
    Tuned(ScheduleOverrides),
}

/// Additive feedback disturbance.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FeedbackSpec {
    #[default]
    Exact,
    ConstantBias {
        epsilon: f64,
    },
    SignFlipping {
        epsilon: f64,
    },
    Uniform {
        epsilon: f64,
    },
}

impl FeedbackSpec {
    fn build(&self, seed: u64) -> Box<dyn Perturber> {
        match *self {
            FeedbackSpec::Exact => Box::new(Exact),
            FeedbackSpec::ConstantBias { epsilon } => Box::new(ConstantBias(epsilon)),
            FeedbackSpec::SignFlipping { epsilon } => Box::new(SignFlipping::new(epsilon)),
            FeedbackSpec::Uniform { epsilon } => Box::new(UniformJitter::new(epsilon, seed)),
        }
    }
}

/// Everything needed to assemble a [`ControlRun`].
#[derive(Debug, Clone)]
pub struct ControlSetup {
    pub plant: LinearPlant,
    pub noise: NoiseProcess,
    pub cost: CostOracle,
    pub k0: DMatrix<f64>,
    pub regime: Regime,
    pub mode: Mode,
    /// Optional weaker stability class than the certified one.
    pub class_kappa: Option<f64>,
    pub class_gamma: Option<f64>,
    pub horizon: usize,
    /// Seed of the algorithm's own randomness (coins, sphere draws, feedback).
    pub seed: u64,
    pub feedback: FeedbackSpec,
    /// Multiplies the projection radii; anything but 1 breaks feasibility
    /// and exists to exercise the invariant audit.
    pub projection_radius_scale: f64,
}

/// A validated run: certificate, constants and schedule are fixed here.
#[derive(Debug, Clone)]
pub struct ControlRun {
    pub setup: ControlSetup,
    pub certificate: StabilityCertificate,
    pub class: StabilityClass,
    pub constants: ControlConstants,
    pub schedule: Schedule,
}

impl ControlRun {
    pub fn new(setup: ControlSetup) -> Result<Self> {
        if setup.horizon < 3 {
            return Err(Error::DegenerateHorizon(setup.horizon));
        }
        let (d, k) = (setup.plant.state_dim(), setup.plant.control_dim());
        if setup.cost.state_dim() != d || setup.cost.control_dim() != k {
            return Err(Error::Config(
                "cost dimensions do not match the plant".into(),
            ));
        }
        if !(setup.projection_radius_scale > 0.0) {
            return Err(Error::Config(
                "projection radius scale must be positive".into(),
            ));
        }
        let certificate = certify(&setup.plant, &setup.k0)?;
        let class = certificate.relaxed_class(setup.class_kappa, setup.class_gamma)?;
        let constants = derive_constants(
            class,
            setup.plant.kappa_b(),
            &setup.noise,
            &setup.cost,
            setup.horizon,
        )?;
        match setup.regime {
            Regime::StronglyConvexSmooth
                if constants.alpha_f <= 0.0 && !has_alpha_override(&setup.mode) =>
            {
                return Err(Error::Config(
                    "strongly convex regime needs strongly convex costs and stochastic noise"
                        .into(),
                ))
            }
            Regime::StronglyConvexSmooth | Regime::ConvexSmooth if !setup.cost.is_smooth() => {
                return Err(Error::Config(format!(
                    "{} regime needs smooth costs",
                    setup.regime.name()
                )))
            }
            _ => {}
        }
        let mut inputs = ScheduleInputs::from_constants(&constants);
        let eta_scale = match &setup.mode {
            Mode::Theorem => 1.0,
            Mode::Tuned(o) => o.apply(&mut inputs)?,
        };
        let schedule = make_scaled_schedule(setup.regime, inputs, setup.horizon, eta_scale)?;
        Ok(Self {
            setup,
            certificate,
            class,
            constants,
            schedule,
        })
    }

    pub fn comparator_set(&self) -> Result<SpectralBalls> {
        self.constants.comparator_set()
    }
}

fn has_alpha_override(mode: &Mode) -> bool {
    matches!(mode, Mode::Tuned(o) if o.alpha_f.is_some())
}

/// One simulated round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: usize,
    pub cost: f64,
    pub cumulative_cost: f64,
    pub update: bool,
    /// Update counter after this round.
    pub tau: usize,
    pub x_norm: f64,
    pub u_norm: f64,
}

/// Worst-case ratios and residuals collected while running.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RunAudit {
    /// `max_t ||x_t|| / D_xu`.
    pub state_ratio: f64,
    /// `max_t ||u_t|| / D_xu`.
    pub control_ratio: f64,
    /// Largest block ratio of a played policy against the enlarged set.
    pub played_ratio: f64,
    /// Largest block ratio of a center against the comparator set.
    pub center_ratio: f64,
    /// `max_t ||w_recovered - w_t||`.
    pub noise_recovery_error: f64,
    /// Smallest distance between consecutive updates (absent if < 2 updates).
    pub min_update_gap: Option<usize>,
    /// `max drift / delta_tau`, with delta scaled up when the feedback
    /// exceeded its nominal bound.
    pub drift_ratio: f64,
    /// `max perturbation / rho_tau`.
    pub perturbation_ratio: f64,
}

#[derive(Debug, Clone)]
pub struct ControlTrace {
    pub rows: Vec<TraceRow>,
    /// Injected disturbances, `noise[t-1] = w_t`.
    pub noise: Vec<DVector<f64>>,
    /// Policies with the first round each was played, in order.
    pub policies: Vec<(usize, BlockMatrix)>,
    pub updates: Vec<usize>,
    pub records: Vec<UpdateRecord>,
    pub audit: RunAudit,
    pub h: usize,
    pub h_eff: usize,
}

impl ControlTrace {
    pub fn total_cost(&self) -> f64 {
        self.rows.last().map_or(0.0, |r| r.cumulative_cost)
    }

    /// Policy played at round `t` (1-based).
    pub fn policy_at(&self, t: usize) -> &BlockMatrix {
        let idx = self.policies.partition_point(|(start, _)| *start <= t);
        &self.policies[idx.saturating_sub(1)].1
    }
}

/// Derived RNG streams of one run.
fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Simulates `T` rounds of the bandit controller.
pub fn run_bandit_control(run: &ControlRun) -> Result<ControlTrace> {
    let s = &run.setup;
    let plant = &s.plant;
    let (d, k) = (plant.state_dim(), plant.control_dim());
    let h = run.constants.h;
    let h_eff = effective_memory(h);
    let horizon = s.horizon;
    let noise = s.noise.generate(horizon, d)?;

    let base_set = run.comparator_set()?;
    let enlarged = base_set.scaled(2.0)?;
    let proj_set = base_set.scaled(s.projection_radius_scale)?;
    let mut coin_rng = stream(s.seed, 1);
    let mut sphere_rng = stream(s.seed, 2);
    let mut perturber = s.feedback.build(s.seed ^ 0x5eed_feed);
    let mut gate = UpdateSchedule::new(h_eff)?;
    let mut state = BcoState::new(run.schedule.clone(), proj_set)?;

    let mut u_dir = sample_unit_sphere(k, d, h, &mut sphere_rng)?;
    let mut policy = state.play(&u_dir)?;
    let mut audit = RunAudit {
        played_ratio: enlarged.max_ratio(&policy)?,
        ..RunAudit::default()
    };
    let mut policies = vec![(1usize, policy.clone())];
    let mut w_hist: VecDeque<DVector<f64>> = (0..h).map(|_| DVector::zeros(d)).collect();
    let mut x = DVector::zeros(d);
    let mut rows = Vec::with_capacity(horizon);
    let mut updates = Vec::new();
    let mut records = Vec::new();
    let mut cumulative = 0.0;
    let d_xu = run.constants.d_xu;
    let c_hat = run.schedule.inputs.c_hat;

    for t in 1..=horizon {
        let hist = w_hist.make_contiguous();
        let u = dap_action(&policy, &s.k0, &x, hist)?;
        let feedback = bandit_observe(&s.cost, t, &x, &u, perturber.as_mut())?;
        let cost = s.cost.eval(t, &x, &u)?;
        let x_next = plant.step(&x, &u, &noise[t - 1])?;
        let recovered = &x_next - plant.a() * &x - plant.b() * &u;
        audit.noise_recovery_error = audit
            .noise_recovery_error
            .max((&recovered - &noise[t - 1]).norm());
        w_hist.pop_back();
        w_hist.push_front(recovered);

        let fire = gate.step(&mut coin_rng);
        if fire {
            let rec = state.update(&u_dir, feedback.value)?;
            let allowance = rec.delta * (rec.feedback.abs() / c_hat).max(1.0);
            audit.drift_ratio = audit.drift_ratio.max(rec.drift / allowance);
            audit.perturbation_ratio = audit.perturbation_ratio.max(rec.perturbation / rec.rho);
            records.push(rec);
            audit.center_ratio = audit.center_ratio.max(base_set.max_ratio(state.center())?);
            u_dir = sample_unit_sphere(k, d, h, &mut sphere_rng)?;
            policy = state.play(&u_dir)?;
            audit.played_ratio = audit.played_ratio.max(enlarged.max_ratio(&policy)?);
            if let Some(&prev) = updates.last() {
                let gap: usize = t - prev;
                audit.min_update_gap =
                    Some(audit.min_update_gap.map_or(gap, |m: usize| m.min(gap)));
            }
            updates.push(t);
            policies.push((t + 1, policy.clone()));
        }

        cumulative += cost;
        audit.state_ratio = audit.state_ratio.max(x.norm() / d_xu);
        audit.control_ratio = audit.control_ratio.max(u.norm() / d_xu);
        rows.push(TraceRow {
            t,
            cost,
            cumulative_cost: cumulative,
            update: fire,
            tau: state.tau(),
            x_norm: x.norm(),
            u_norm: u.norm(),
        });
        x = x_next;
    }
    Ok(ControlTrace {
        rows,
        noise,
        policies,
        updates,
        records,
        audit,
        h,
        h_eff,
    })
}

/// The update exactly as written for the controller:
/// `Pi_i[center^[i] - eta d k H c r^[i] U^[i]]`.
pub fn direct_update(
    center: &BlockMatrix,
    u: &BlockMatrix,
    radii: &[f64],
    eta: f64,
    cost: f64,
    set: &SpectralBalls,
) -> Result<BlockMatrix> {
    let (k, d) = u.block_shape();
    let dkh = (d * k * u.len()) as f64;
    let factors: Vec<f64> = radii.iter().map(|r| -eta * dkh * cost * r).collect();
    set.project(&center.add(&u.scale_blocks(&factors)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bco_base::{omd_step, one_point_gradient};
    use crate::plant::NoiseKind;

    pub(crate) fn scalar_setup(regime: Regime, horizon: usize) -> ControlSetup {
        ControlSetup {
            plant: LinearPlant::scalar(0.9, 1.0).unwrap(),
            noise: NoiseProcess::new(
                NoiseKind::TruncatedGaussian {
                    sigma: 0.5,
                    bound: 1.0,
                },
                7,
            )
            .unwrap(),
            cost: CostOracle::quadratic(DMatrix::identity(1, 1), DMatrix::identity(1, 1)).unwrap(),
            k0: DMatrix::from_element(1, 1, 0.9),
            regime,
            mode: Mode::Theorem,
            class_kappa: None,
            class_gamma: Some(0.5),
            horizon,
            seed: 3,
            feedback: FeedbackSpec::Exact,
            projection_radius_scale: 1.0,
        }
    }

    #[test]
    fn effective_memory_examples() {
        assert_eq!(effective_memory(1), 4);
        assert_eq!(effective_memory(16), 34);
    }

    #[test]
    fn recovered_noise_is_exact_and_states_bounded() {
        let run = ControlRun::new(scalar_setup(Regime::StronglyConvexSmooth, 400)).unwrap();
        let tr = run_bandit_control(&run).unwrap();
        assert_eq!(tr.rows.len(), 400);
        assert!(tr.audit.noise_recovery_error <= 1e-12);
        assert!(tr.audit.state_ratio <= 1.0 && tr.audit.control_ratio <= 1.0);
        assert!(tr.audit.played_ratio <= 1.0 + 1e-12 && tr.audit.center_ratio <= 1.0 + 1e-12);
        if let Some(g) = tr.audit.min_update_gap {
            assert!(g >= tr.h_eff);
        }
    }

    #[test]
    fn certified_gamma_one_needs_a_weaker_class() {
        let mut s = scalar_setup(Regime::StronglyConvexSmooth, 100);
        s.class_gamma = None;
        assert!(matches!(ControlRun::new(s), Err(Error::Config(_))));
    }

    #[test]
    fn deterministic_noise_rules_out_strong_convexity() {
        let mut s = scalar_setup(Regime::StronglyConvexSmooth, 100);
        s.noise = NoiseProcess::new(
            NoiseKind::Sinusoidal {
                amplitude: 0.5,
                frequency: 0.01,
                bound: 1.0,
            },
            0,
        )
        .unwrap();
        assert!(ControlRun::new(s.clone()).is_err());
        s.regime = Regime::ConvexSmooth;
        assert!(ControlRun::new(s).is_ok());
    }

    #[test]
    fn direct_update_equals_composed_update() {
        let set = SpectralBalls::new(vec![1.0, 0.5, 0.25]).unwrap();
        let center = BlockMatrix::from_flat(1, 2, 3, &[0.1, -0.2, 0.05, 0.0, 0.1, 0.1]).unwrap();
        let u = BlockMatrix::from_flat(1, 2, 3, &[0.3, 0.4, -0.5, 0.1, 0.2, -0.6]).unwrap();
        let radii = [0.7, 0.3, 0.2];
        let (eta, c) = (0.05, 3.0);
        let a = direct_update(&center, &u, &radii, eta, c, &set).unwrap();
        let g = one_point_gradient(c, &u, &radii, 6).unwrap();
        let b = omd_step(&center, &g, eta, &radii, &set).unwrap();
        assert!(a.sub(&b).unwrap().frobenius_norm() < 1e-14);
    }
}
