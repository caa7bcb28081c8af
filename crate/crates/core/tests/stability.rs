mod support;

use bandit_control::plant::{LinearPlant, NoiseKind, NoiseProcess};
use bandit_control::stability::{certify, synthesize_k0, C64};
use bandit_control::Error;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use support::{power_iteration_norm, rng, uniform_matrix};

fn complex_norm(m: &DMatrix<C64>) -> f64 {
    // ||M||^2 = largest eigenvalue of M^H M, via power iteration on the real
    // embedding [[Re, -Im], [Im, Re]].
    let (r, c) = m.shape();
    let emb = DMatrix::from_fn(2 * r, 2 * c, |i, j| {
        let z = m[(i % r, j % c)];
        match (i < r, j < c) {
            (true, true) | (false, false) => z.re,
            (true, false) => -z.im,
            (false, true) => z.im,
        }
    });
    power_iteration_norm(&emb)
}

fn identity_plant(a: DMatrix<f64>) -> LinearPlant {
    let d = a.nrows();
    LinearPlant::new(a, DMatrix::identity(d, d)).unwrap()
}

#[test]
fn trivial_certificates() {
    let c = certify(&identity_plant(DMatrix::zeros(2, 2)), &DMatrix::zeros(2, 2)).unwrap();
    assert_eq!((c.kappa, c.gamma), (1.0, 1.0));
    let s = LinearPlant::scalar(0.9, 1.0).unwrap();
    let c = certify(&s, &DMatrix::from_element(1, 1, 0.5)).unwrap();
    assert!((c.gamma - 0.6).abs() < 1e-12 && c.kappa == 1.0);
}

#[test]
fn random_stable_matrices_are_reconstructed() {
    let mut r = rng(40);
    for _ in 0..200 {
        let raw = uniform_matrix(3, 3, -1.0, 1.0, &mut r);
        let rho = raw
            .complex_eigenvalues()
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max);
        let a = raw * (r.random_range(0.2..0.95) / rho);
        let cert = certify(&identity_plant(a.clone()), &DMatrix::zeros(3, 3)).unwrap();
        assert!(cert.reconstruction_error(&a) <= 1e-8);
        let rebuilt = &cert.q * DMatrix::from_diagonal(&cert.l) * &cert.q_inv;
        let diff = rebuilt - a.map(|v| C64::new(v, 0.0));
        assert!(complex_norm(&diff) <= 1e-8);
        assert!(cert.l.iter().all(|z| z.norm() <= 1.0 - cert.gamma + 1e-12));
        assert!(complex_norm(&cert.q) <= cert.kappa * (1.0 + 1e-9));
        assert!(complex_norm(&cert.q_inv) <= cert.kappa * (1.0 + 1e-9));
    }
}

#[test]
fn repeated_eigenvalues_with_full_eigenspace_are_accepted() {
    let mut r = rng(41);
    for _ in 0..20 {
        let s = uniform_matrix(3, 3, -1.0, 1.0, &mut r) + DMatrix::identity(3, 3) * 2.0;
        let a = &s
            * DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 0.5, -0.3]))
            * s.clone().try_inverse().unwrap();
        let cert = certify(&identity_plant(a.clone()), &DMatrix::zeros(3, 3)).unwrap();
        assert!(cert.reconstruction_error(&a) <= 1e-8);
        assert!((cert.gamma - 0.5).abs() < 1e-9);
    }
}

#[test]
fn bad_closed_loops_are_rejected() {
    assert!(matches!(
        certify(
            &LinearPlant::scalar(1.0, 1.0).unwrap(),
            &DMatrix::zeros(1, 1)
        ),
        Err(Error::Rejected(_))
    ));
    let jordan = DMatrix::from_row_slice(2, 2, &[0.3, 1.0, 0.0, 0.3]);
    assert!(matches!(
        certify(&identity_plant(jordan), &DMatrix::zeros(2, 2)),
        Err(Error::Rejected(_))
    ));
}

#[test]
fn synthesis_examples() {
    let s = LinearPlant::scalar(0.9, 1.0).unwrap();
    assert!((synthesize_k0(&s, 1.0).unwrap()[(0, 0)] - 0.9).abs() < 1e-15);
    let p = identity_plant(DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 0.8])));
    let k = synthesize_k0(&p, 0.7).unwrap();
    assert!((k - DMatrix::from_diagonal(&DVector::from_vec(vec![0.2, 0.5]))).amax() < 1e-12);
    let coupled = LinearPlant::new(
        DMatrix::from_row_slice(2, 2, &[0.6, 0.1, 0.0, 0.5]),
        DMatrix::identity(2, 2),
    )
    .unwrap();
    assert!(matches!(
        synthesize_k0(&coupled, 0.5),
        Err(Error::Unsupported(_))
    ));
}

#[test]
fn synthesized_gains_pass_certification() {
    let mut r = rng(42);
    for _ in 0..50 {
        let a = DMatrix::from_diagonal(&DVector::from_fn(3, |_, _| r.random_range(-1.5..1.5)));
        let b = uniform_matrix(3, 3, -1.0, 1.0, &mut r) + DMatrix::identity(3, 3) * 3.0;
        let p = LinearPlant::new(a, b).unwrap();
        let target = r.random_range(0.05..1.0);
        let cert = certify(&p, &synthesize_k0(&p, target).unwrap()).unwrap();
        assert!(cert.gamma >= target - 1e-9);
        assert!(cert.spectral_radius <= 1.0 - target + 1e-9);
    }
}

#[test]
fn certificate_bounds_the_state() {
    let mut r = rng(43);
    for trial in 0..5 {
        let raw = uniform_matrix(3, 3, -1.0, 1.0, &mut r);
        let rho = raw
            .complex_eigenvalues()
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max);
        let a = raw * (0.8 / rho);
        let p = identity_plant(a);
        let k = DMatrix::zeros(3, 3);
        let cert = certify(&p, &k).unwrap();
        let bound = 0.5;
        let noise = NoiseProcess::new(NoiseKind::ScaledRademacher { bound }, trial)
            .unwrap()
            .generate(10_000, 3)
            .unwrap();
        let mut x = DVector::zeros(3);
        let mut worst: f64 = 0.0;
        for w in &noise {
            x = p.step(&x, &-(&k * &x), w).unwrap();
            worst = worst.max(x.norm());
        }
        assert!(worst <= cert.kappa.powi(2) * bound / cert.gamma * (1.0 + 1e-6));
    }
}

#[test]
fn certification_is_repeatable() {
    let p = LinearPlant::new(
        DMatrix::from_row_slice(2, 2, &[0.6, 0.1, 0.0, 0.5]),
        DMatrix::from_row_slice(2, 1, &[1.0, 0.5]),
    )
    .unwrap();
    let k = DMatrix::from_row_slice(1, 2, &[0.1, 0.05]);
    let a = certify(&p, &k).unwrap().summary();
    let b = certify(&p, &k).unwrap().summary();
    assert_eq!(a, b);
}
