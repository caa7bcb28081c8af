mod support;

use bandit_control::bco_base::{
    make_schedule, omd_step, one_point_gradient, BcoState, Regime, ScheduleInputs,
};
use bandit_control::numerics::{sample_unit_ball, sample_unit_sphere, BlockMatrix, SpectralBalls};
use nalgebra::{DMatrix, DVector};
use support::rng;

fn scalar(v: f64) -> BlockMatrix {
    BlockMatrix::from_blocks(vec![DMatrix::from_element(1, 1, v)]).unwrap()
}

fn inputs(h: usize, d: usize, k: usize, base: Vec<f64>, c_hat: f64) -> ScheduleInputs {
    ScheduleInputs {
        alpha_f: 2.0,
        beta_f: 2.0,
        l_f: 5.0,
        c_hat,
        d,
        k,
        h,
        n: d.min(k),
        diameter_sq: 4.0,
        base_radii: base,
    }
}

const ALL: [Regime; 3] = [
    Regime::StronglyConvexSmooth,
    Regime::ConvexSmooth,
    Regime::ConvexNonsmooth,
];

#[test]
fn strongly_convex_radii_start_at_base_and_halve_in_square() {
    let s = make_schedule(
        Regime::StronglyConvexSmooth,
        inputs(2, 1, 1, vec![1.0, 0.5], 6.0),
        10_000,
    )
    .unwrap();
    assert_eq!(s.radii(0), vec![1.0, 0.5]);
    let (a, b) = (s.radii(1_000_000_000), s.radii(2_000_000_000));
    for i in 0..2 {
        assert!((a[i] / b[i] - 2f64.sqrt()).abs() < 1e-3);
    }
    for tau in 1..200 {
        let (r0, r1) = (s.radii(tau), s.radii(tau + 1));
        assert!(r0.iter().zip(&r1).all(|(x, y)| y <= x));
    }
}

#[test]
fn nonsmooth_radius_limit_matches_independent_formula() {
    let (h, d, k, t) = (3, 2, 1, 5000usize);
    let mut inp = inputs(h, d, k, vec![1e12; 3], 7.0);
    inp.l_f = 2.5;
    inp.diameter_sq = 9.0;
    let s = make_schedule(Regime::ConvexNonsmooth, inp, t).unwrap();
    let d_m = (d * k * h) as f64;
    let want = (4.0 * 2.5 * (((h + 1) * t) as f64).sqrt() / (d_m * 7.0 * 3.0)).powf(-0.5);
    for r in s.radii(17) {
        assert!((r - want).abs() <= 1e-9 * want);
    }
    let eta = 2.0
        * ((4.0f64).powi(3) * 2.5 * 2.5 * 9.0 / (d_m.powi(6) * 7.0f64.powi(6) * t as f64))
            .powf(0.25);
    assert!((s.eta - eta).abs() <= 1e-12 * eta);
}

#[test]
fn schedule_rejects_missing_curvature() {
    let mut inp = inputs(1, 1, 1, vec![1.0], 1.0);
    inp.alpha_f = 0.0;
    assert!(make_schedule(Regime::StronglyConvexSmooth, inp.clone(), 100).is_err());
    assert!(make_schedule(Regime::ConvexSmooth, inp, 100).is_ok());
}

#[test]
fn gradient_and_step_examples() {
    let u = scalar(1.0);
    assert_eq!(one_point_gradient(0.0, &u, &[0.5], 1).unwrap(), scalar(0.0));
    assert_eq!(one_point_gradient(2.0, &u, &[0.5], 1).unwrap(), scalar(4.0));
    let set = SpectralBalls::new(vec![1.0]).unwrap();
    assert_eq!(
        omd_step(&scalar(0.5), &scalar(0.0), 1.0, &[1.0], &set).unwrap(),
        scalar(0.5)
    );
    assert_eq!(
        omd_step(&scalar(0.5), &scalar(1.0), 1.0, &[1.0], &set).unwrap(),
        scalar(-0.5)
    );
    assert_eq!(
        omd_step(&scalar(0.5), &scalar(-2.0), 1.0, &[1.0], &set).unwrap(),
        scalar(1.0)
    );
}

#[test]
fn one_point_estimate_is_unbiased_for_the_smoothed_gradient() {
    let x = DVector::from_vec(vec![1.0, 0.5, -0.3]);
    let mut r = rng(60);
    let n = 1_000_000;
    let mut mean = DVector::zeros(3);
    for _ in 0..n {
        let u = sample_unit_sphere(1, 3, 1, &mut r).unwrap();
        let uv = DVector::from_vec(u.to_flat());
        let f = (&x + &uv).norm_squared();
        let g = one_point_gradient(f, &u, &[1.0], 3).unwrap();
        mean += DVector::from_vec(g.to_flat());
    }
    mean /= n as f64;
    let want = &x * 2.0;
    assert!(
        (&mean - &want).norm() <= 0.02 * want.norm(),
        "{mean} vs {want}"
    );
}

#[test]
fn smoothing_sandwich_holds() {
    let q = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 0.5]);
    let beta = 2.0 * q.clone().symmetric_eigenvalues().max();
    let p = DMatrix::from_diagonal(&DVector::from_vec(vec![0.7, 0.2]));
    let f = |z: &DVector<f64>| z.dot(&(&q * z));
    let x = DVector::from_vec(vec![0.4, -1.1]);
    let mut r = rng(61);
    let n = 200_000;
    let (mut s, mut s2) = (0.0, 0.0);
    for _ in 0..n {
        let v = sample_unit_ball(2, &mut r).unwrap();
        let gap = f(&(&x + &p * v)) - f(&x);
        s += gap;
        s2 += gap * gap;
    }
    let mean = s / n as f64;
    let se = ((s2 / n as f64 - mean * mean) / n as f64).sqrt();
    let upper = beta / 2.0 * (&p * &p).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(
        mean >= -3.0 * se && mean <= upper + 3.0 * se,
        "{mean} not in [0, {upper}]"
    );
}

struct Quadratic {
    target: f64,
}

impl Quadratic {
    fn f(&self, m: f64) -> f64 {
        (m - self.target).powi(2)
    }

    /// Constrained minimizer on `[-radius, radius]` by projected gradient descent.
    fn minimizer(&self, radius: f64) -> f64 {
        let mut m = 0.0;
        for _ in 0..10_000 {
            m = (m - 0.1 * 2.0 * (m - self.target)).clamp(-radius, radius);
        }
        m
    }
}

fn run_scalar(q: &Quadratic, horizon: usize, seed: u64) -> (f64, f64) {
    let set = SpectralBalls::new(vec![1.0]).unwrap();
    let c_hat = (2.0 + q.target.abs()).powi(2);
    let s = make_schedule(
        Regime::StronglyConvexSmooth,
        inputs(1, 1, 1, vec![1.0], c_hat),
        horizon,
    )
    .unwrap();
    let mut state = BcoState::new(s, set).unwrap();
    let mut r = rng(seed);
    let best = q.f(q.minimizer(1.0));
    let mut regret = 0.0;
    for _ in 0..horizon {
        let u = sample_unit_sphere(1, 1, 1, &mut r).unwrap();
        let played = state.play(&u).unwrap().to_flat()[0];
        let fb = q.f(played);
        regret += fb - best;
        let (p2, rec) = state.base_round(&u, fb).unwrap();
        assert_eq!(p2.to_flat()[0], played);
        assert!(
            rec.drift <= rec.delta * (1.0 + 1e-12) && rec.perturbation <= rec.rho * (1.0 + 1e-12)
        );
        assert!(played.abs() <= 2.0);
    }
    (state.center().to_flat()[0], regret / horizon as f64)
}

#[test]
fn converges_to_the_constrained_minimizer() {
    for target in [0.4, 1.5] {
        let q = Quadratic { target };
        let star = q.minimizer(1.0);
        for seed in 0..10 {
            let (center, _) = run_scalar(&q, 50_000, seed);
            assert!(
                (center - star).abs() <= 0.1,
                "target {target}, seed {seed}: {center} vs {star}"
            );
        }
    }
}

#[test]
fn average_regret_decreases_with_horizon() {
    let q = Quadratic { target: 0.4 };
    let avg: Vec<f64> = [1_000, 10_000, 100_000]
        .iter()
        .map(|&t| (0..20).map(|s| run_scalar(&q, t, 100 + s).1).sum::<f64>() / 20.0)
        .collect();
    assert!(avg[0] > avg[1] && avg[1] > avg[2], "{avg:?}");
}

#[test]
fn contracts_hold_for_every_regime_and_feedback_sign() {
    let (h, d, k) = (3, 2, 1);
    let base = vec![1.0, 0.5, 0.25];
    let set = SpectralBalls::new(base.clone()).unwrap();
    let c_hat = 3.0;
    for regime in ALL {
        let s = make_schedule(regime, inputs(h, d, k, base.clone(), c_hat), 2000).unwrap();
        let mut state = BcoState::new(s, set.clone()).unwrap();
        let mut r = rng(62);
        let mut last = state.radii().to_vec();
        for i in 0..2000 {
            let u = sample_unit_sphere(k, d, h, &mut r).unwrap();
            let fb = if i % 3 == 0 {
                -c_hat
            } else {
                c_hat * ((i as f64).sin())
            };
            let (played, rec) = state.base_round(&u, fb).unwrap();
            assert!(
                rec.drift <= rec.delta * (1.0 + 1e-12),
                "{regime:?} drift {} > {}",
                rec.drift,
                rec.delta
            );
            assert!(
                rec.perturbation <= rec.rho * (1.0 + 1e-12),
                "{regime:?} rho"
            );
            assert!(set.scaled(2.0).unwrap().contains(&played, 1e-12));
            assert!(set.contains(state.center(), 1e-12));
            assert!(state.radii().iter().zip(&base).all(|(r, r0)| r <= r0));
            assert!(state.radii().iter().zip(&last).all(|(r, p)| r <= p));
            last = state.radii().to_vec();
        }
        let sched = state.schedule();
        for tau in 1..100 {
            assert!(
                sched.delta(tau + 1) <= sched.delta(tau) && sched.rho(tau + 1) <= sched.rho(tau)
            );
        }
    }
}

#[test]
fn zero_feedback_leaves_the_center_alone() {
    let set = SpectralBalls::new(vec![1.0, 0.5]).unwrap();
    let s = make_schedule(
        Regime::ConvexSmooth,
        inputs(2, 1, 2, vec![1.0, 0.5], 1.0),
        100,
    )
    .unwrap();
    let mut state = BcoState::new(s, set).unwrap();
    let mut r = rng(63);
    for _ in 0..100 {
        let u = sample_unit_sphere(2, 1, 2, &mut r).unwrap();
        state.base_round(&u, 0.0).unwrap();
    }
    assert_eq!(state.center(), &BlockMatrix::zeros(2, 1, 2));
    assert_eq!(state.tau(), 101);
}
