//! Reduction from bandit optimization with memory to memoryless bandit
//! optimization: a randomized gate that updates the base learner only after
//! a long enough run of silent rounds, so that every loss it sees was
//! produced by a constant sequence of plays.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bco_base::{BcoState, UpdateRecord};
use crate::error::{Error, Result};
use crate::numerics::{sample_unit_sphere, BlockMatrix, SpectralBalls};

/// Coin-driven update gate with effective memory `h_eff`.
///
/// A coin `b_t ~ Bernoulli(1/h_eff)` is drawn every round; round `t` fires
/// iff `t >= h_eff`, `b_t = 1` and the previous `h_eff - 1` coins are 0.
#[derive(Debug, Clone)]
pub struct UpdateSchedule {
    h_eff: usize,
    t: usize,
    zeros_before: usize,
    coins: Vec<bool>,
}

impl UpdateSchedule {
    pub fn new(h_eff: usize) -> Result<Self> {
        if h_eff == 0 {
            return Err(Error::Parameter("effective memory must be positive".into()));
        }
        Ok(Self {
            h_eff,
            t: 0,
            zeros_before: 0,
            coins: Vec::new(),
        })
    }

    pub fn h_eff(&self) -> usize {
        self.h_eff
    }

    pub fn bernoulli_p(&self) -> f64 {
        1.0 / self.h_eff as f64
    }

    /// Rounds processed so far.
    pub fn round(&self) -> usize {
        self.t
    }

    pub fn coins(&self) -> &[bool] {
        &self.coins
    }

    /// Draws the coin for the next round and evaluates the gate.
    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> bool {
        let coin = rng.random_bool(self.bernoulli_p());
        self.step_with_coin(coin)
    }

    /// Advances one round with a given coin.
    pub fn step_with_coin(&mut self, coin: bool) -> bool {
        self.t += 1;
        let fire = coin && self.t >= self.h_eff && self.zeros_before + 1 >= self.h_eff;
        self.zeros_before = if coin { 0 } else { self.zeros_before + 1 };
        self.coins.push(coin);
        fire
    }
}

/// `1 / [(1/h)(1 - 1/h)^(h-1)]`, the mean gap between fire rounds of the
/// stationary gate.
pub fn stationary_mean_gap(h_eff: usize) -> f64 {
    let p = 1.0 / h_eff as f64;
    1.0 / (p * (1.0 - p).powi(h_eff as i32 - 1))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleStats {
    pub count: usize,
    /// Mean of `t_i - t_{i-1}` with `t_0 = 0`; absent when nothing fired.
    pub mean_gap: Option<f64>,
    pub min_gap: Option<usize>,
}

/// Gap statistics of a sorted list of fire rounds.
pub fn schedule_stats(fires: &[usize]) -> ScheduleStats {
    let mut prev = 0;
    let mut min_gap: Option<usize> = None;
    for &t in fires {
        let gap = t - prev;
        min_gap = Some(min_gap.map_or(gap, |m| m.min(gap)));
        prev = t;
    }
    ScheduleStats {
        count: fires.len(),
        mean_gap: fires.last().map(|&last| last as f64 / fires.len() as f64),
        min_gap,
    }
}

/// A loss with memory: the round-`t` loss reads the last `memory()` plays.
pub trait MemoryLoss {
    fn memory(&self) -> usize;

    /// Bound on `|E[feedback] - f_t|` when the plays are constant.
    fn epsilon(&self) -> f64 {
        0.0
    }

    /// Noisy scalar feedback for round `t`; `plays` holds
    /// `x_{t+1-H}, ..., x_t`, oldest first.
    fn feedback(&mut self, t: usize, plays: &[&BlockMatrix]) -> Result<f64>;

    /// Exact `f_t(x_{t+1-H}, ..., x_t)`.
    fn loss(&self, t: usize, plays: &[&BlockMatrix]) -> Result<f64>;
}

/// Memoryless base learner as seen by the reduction.
pub trait BaseBco {
    fn prediction(&self) -> &BlockMatrix;

    fn update<R: Rng + ?Sized>(&mut self, feedback: f64, rng: &mut R) -> Result<()>;
}

/// The one-point preconditioned learner wrapped as a [`BaseBco`]: plays
/// `center + r . U` and redraws `U` after every update.
#[derive(Debug, Clone)]
pub struct OnePointBco {
    state: BcoState,
    u: BlockMatrix,
    played: BlockMatrix,
    pub records: Vec<UpdateRecord>,
}

impl OnePointBco {
    pub fn new<R: Rng + ?Sized>(state: BcoState, rng: &mut R) -> Result<Self> {
        let (k, d) = state.center().block_shape();
        let u = sample_unit_sphere(k, d, state.center().len(), rng)?;
        let played = state.play(&u)?;
        Ok(Self {
            state,
            u,
            played,
            records: Vec::new(),
        })
    }

    pub fn state(&self) -> &BcoState {
        &self.state
    }
}

impl BaseBco for OnePointBco {
    fn prediction(&self) -> &BlockMatrix {
        &self.played
    }

    fn update<R: Rng + ?Sized>(&mut self, feedback: f64, rng: &mut R) -> Result<()> {
        let rec = self.state.update(&self.u, feedback)?;
        self.records.push(rec);
        let (k, d) = self.u.block_shape();
        self.u = sample_unit_sphere(k, d, self.u.len(), rng)?;
        self.played = self.state.play(&self.u)?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ReductionTrace {
    /// `plays[t-1]` is the play of round `t`.
    pub plays: Vec<BlockMatrix>,
    /// Rounds at which the base learner was updated.
    pub fires: Vec<usize>,
    /// `fixed_at[t-1]`: round after which the play of round `t` was fixed
    /// (0 for the initial play).
    pub fixed_at: Vec<usize>,
    pub feedback: Vec<f64>,
}

/// Runs the gated reduction for `horizon` rounds with effective memory
/// `oracle.memory()`. Rounds before the first play are padded with it.
pub fn run_reduction<B: BaseBco, O: MemoryLoss, R: Rng + ?Sized>(
    base: &mut B,
    oracle: &mut O,
    horizon: usize,
    rng: &mut R,
) -> Result<ReductionTrace> {
    let h = oracle.memory();
    let mut gate = UpdateSchedule::new(h)?;
    let mut plays: Vec<BlockMatrix> = Vec::with_capacity(horizon);
    let mut fixed_at = Vec::with_capacity(horizon);
    let mut fires = Vec::new();
    let mut feedback = Vec::with_capacity(horizon);
    let mut current = base.prediction().clone();
    let mut fixed = 0;
    for t in 1..=horizon {
        plays.push(current.clone());
        fixed_at.push(fixed);
        let f = {
            let window = memory_window(&plays, t, h);
            oracle.feedback(t, &window)?
        };
        feedback.push(f);
        if gate.step(rng) {
            base.update(f, rng)?;
            current = base.prediction().clone();
            fixed = t;
            fires.push(t);
        }
    }
    Ok(ReductionTrace {
        plays,
        fires,
        fixed_at,
        feedback,
    })
}

/// `x_{t+1-h}, ..., x_t` from `plays` (1-based rounds), padded with the
/// first play before round 1.
pub fn memory_window(plays: &[BlockMatrix], t: usize, h: usize) -> Vec<&BlockMatrix> {
    (0..h)
        .map(|j| {
            let s = t as isize + 1 - h as isize + j as isize;
            &plays[(s.max(1) as usize) - 1]
        })
        .collect()
}

/// `sum_{t=h}^T f_t(x_{t+1-h..t}) - sum_{t=h}^T f_t(x*, ..., x*)`.
pub fn policy_regret<O: MemoryLoss>(
    plays: &[BlockMatrix],
    oracle: &O,
    comparator: &BlockMatrix,
    set: &SpectralBalls,
) -> Result<f64> {
    if !set.contains(comparator, 1e-10) {
        return Err(Error::Parameter(
            "comparator lies outside the feasible set".into(),
        ));
    }
    let h = oracle.memory();
    let fixed: Vec<&BlockMatrix> = vec![comparator; h];
    let mut total = 0.0;
    for t in h..=plays.len() {
        total += oracle.loss(t, &memory_window(plays, t, h))? - oracle.loss(t, &fixed)?;
    }
    Ok(total)
}

/// `sum_t sum_{i=2}^{h} ||x_{t+i-h} - x_{t+1-h}||_F` over full windows.
pub fn drift_sum(plays: &[BlockMatrix], h: usize) -> Result<f64> {
    let mut total = 0.0;
    for t in h..=plays.len() {
        let w = memory_window(plays, t, h);
        for x in &w[1..] {
            total += x.sub(w[0])?.frobenius_norm();
        }
    }
    Ok(total)
}
