//! Strong-stability certificates for linear controllers `u = -K x` and a
//! pole-placement synthesizer for simple system classes.

use std::fmt;

use nalgebra::{Complex, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plant::LinearPlant;

pub type C64 = Complex<f64>;

/// Why a controller could not be certified.
#[derive(Debug, Clone, PartialEq)]
pub enum Rejection {
    /// Closed loop is not diagonalizable (numerically).
    Defective { detail: String },
    /// Closed loop has spectral radius at least one.
    Unstable { spectral_radius: f64 },
}

impl fmt::Display for Rejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rejection::Defective { detail } => write!(f, "closed loop is defective ({detail})"),
            Rejection::Unstable { spectral_radius } => {
                write!(
                    f,
                    "closed loop is unstable (spectral radius {spectral_radius:.6} >= 1)"
                )
            }
        }
    }
}

/// The `(kappa, gamma)` pair that sizes every downstream constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityClass {
    pub kappa: f64,
    pub gamma: f64,
}

/// Witness `A - B K = Q diag(l) Q^{-1}` with `|l_i| <= 1 - gamma` and
/// `||K||, ||Q||, ||Q^{-1}|| <= kappa`.
#[derive(Debug, Clone)]
pub struct StabilityCertificate {
    pub kappa: f64,
    pub gamma: f64,
    pub spectral_radius: f64,
    pub q: DMatrix<C64>,
    pub q_inv: DMatrix<C64>,
    pub l: DVector<C64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertificateSummary {
    pub kappa: f64,
    pub gamma: f64,
    pub spectral_radius: f64,
}

impl StabilityCertificate {
    pub fn class(&self) -> StabilityClass {
        StabilityClass {
            kappa: self.kappa,
            gamma: self.gamma,
        }
    }

    pub fn summary(&self) -> CertificateSummary {
        CertificateSummary {
            kappa: self.kappa,
            gamma: self.gamma,
            spectral_radius: self.spectral_radius,
        }
    }

    /// A weaker class than the certified one: `gamma` may only shrink and
    /// `kappa` may only grow, so the certificate still witnesses it.
    pub fn relaxed_class(&self, kappa: Option<f64>, gamma: Option<f64>) -> Result<StabilityClass> {
        let kappa = kappa.unwrap_or(self.kappa);
        let gamma = gamma.unwrap_or(self.gamma);
        if !(gamma > 0.0) || gamma > self.gamma * (1.0 + 1e-12) {
            return Err(Error::Config(format!(
                "stability class gamma {gamma} must lie in (0, {}]",
                self.gamma
            )));
        }
        if !(kappa >= self.kappa * (1.0 - 1e-12)) || !kappa.is_finite() {
            return Err(Error::Config(format!(
                "stability class kappa {kappa} must be at least {}",
                self.kappa
            )));
        }
        Ok(StabilityClass {
            kappa: kappa.max(1.0),
            gamma: gamma.min(1.0),
        })
    }

    /// `||Q diag(l) Q^{-1} - target||_2`.
    pub fn reconstruction_error(&self, target: &DMatrix<f64>) -> f64 {
        let rebuilt = &self.q * DMatrix::from_diagonal(&self.l) * &self.q_inv;
        let diff = rebuilt - target.map(|v| C64::new(v, 0.0));
        complex_norm(&diff)
    }
}

fn complex_norm(m: &DMatrix<C64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().singular_values().max()
}

/// Certify `K` for `plant`: eigendecompose `A - B K`, normalize eigenvector
/// columns to unit norm, and report `gamma = 1 - rho`,
/// `kappa = max(1, ||K||, ||Q||, ||Q^{-1}||)`.
pub fn certify(plant: &LinearPlant, k: &DMatrix<f64>) -> Result<StabilityCertificate> {
    let closed = plant.closed_loop(k)?;
    if closed.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("closed-loop matrix".into()));
    }
    let d = closed.nrows();
    let scale = closed.norm().max(1.0);
    let eig = closed.complex_eigenvalues();
    let rho = eig.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if rho >= 1.0 {
        return Err(Error::Rejected(Rejection::Unstable {
            spectral_radius: rho,
        }));
    }

    // Group numerically coincident eigenvalues and take a null-space basis
    // of the right dimension for each group.
    let group_tol = 1e-6 * scale;
    let null_tol = 1e-5 * scale;
    let mut used = vec![false; d];
    let mut cols: Vec<DVector<C64>> = Vec::with_capacity(d);
    let mut l: Vec<C64> = Vec::with_capacity(d);
    let ac = closed.map(|v| C64::new(v, 0.0));
    for i in 0..d {
        if used[i] {
            continue;
        }
        let members: Vec<usize> = (i..d)
            .filter(|&j| !used[j] && (eig[j] - eig[i]).norm() <= group_tol)
            .collect();
        for &j in &members {
            used[j] = true;
        }
        let m = members.len();
        let lambda = members.iter().map(|&j| eig[j]).sum::<C64>() / (m as f64);
        let shifted = &ac - DMatrix::<C64>::identity(d, d) * lambda;
        let svd = shifted.svd(false, true);
        let v_t = svd
            .v_t
            .ok_or_else(|| Error::Numerical("eigenvector SVD failed".into()))?;
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&a, &b| svd.singular_values[a].total_cmp(&svd.singular_values[b]));
        let worst = svd.singular_values[order[m - 1]];
        if worst > null_tol {
            return Err(Error::Rejected(Rejection::Defective {
                detail: format!(
                    "eigenvalue {lambda:.6} has algebraic multiplicity {m} but geometric multiplicity {}",
                    order.iter().take_while(|&&o| svd.singular_values[o] <= null_tol).count()
                ),
            }));
        }
        for &o in order.iter().take(m) {
            let v = v_t.row(o).transpose().map(|z| z.conj());
            let n = v.norm();
            cols.push(v / C64::new(n, 0.0));
            l.push(lambda);
        }
    }
    let q = DMatrix::from_columns(&cols);
    let q_inv = q.clone().try_inverse().ok_or_else(|| {
        Error::Rejected(Rejection::Defective {
            detail: "eigenvector matrix is singular".into(),
        })
    })?;
    let l = DVector::from_vec(l);
    let k_norm = crate::numerics::spectral_norm(k)?;
    let cert = StabilityCertificate {
        kappa: 1.0f64
            .max(k_norm)
            .max(complex_norm(&q))
            .max(complex_norm(&q_inv)),
        gamma: 1.0 - rho,
        spectral_radius: rho,
        q,
        q_inv,
        l,
    };
    let resid = cert.reconstruction_error(&closed);
    if !(resid <= 1e-8 * scale) {
        return Err(Error::Rejected(Rejection::Defective {
            detail: format!("eigendecomposition residual {resid:.3e} too large"),
        }));
    }
    Ok(cert)
}

/// Pole placement for diagonal `A` with square invertible `B` (scalar
/// systems included): each closed-loop pole goes to `(1 - gamma) sign(a_ii)`.
pub fn synthesize_k0(plant: &LinearPlant, target_gamma: f64) -> Result<DMatrix<f64>> {
    if !(target_gamma > 0.0 && target_gamma <= 1.0) {
        return Err(Error::Parameter(format!(
            "target gamma must be in (0, 1], got {target_gamma}"
        )));
    }
    let a = plant.a();
    let b = plant.b();
    let d = a.nrows();
    let off_diagonal = (0..d).any(|i| (0..d).any(|j| i != j && a[(i, j)] != 0.0));
    if off_diagonal || b.nrows() != b.ncols() {
        return Err(Error::Unsupported(
            "automatic K0 needs diagonal A and square B; supply K0 explicitly".into(),
        ));
    }
    let b_inv = b
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Unsupported("B is not invertible; supply K0 explicitly".into()))?;
    let poles = DMatrix::from_diagonal(&DVector::from_fn(d, |i, _| {
        let s = if a[(i, i)] < 0.0 { -1.0 } else { 1.0 };
        (1.0 - target_gamma) * s
    }));
    Ok(b_inv * (a - poles))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_closed_loop_is_perfectly_stable() {
        let p = LinearPlant::new(DMatrix::zeros(2, 2), DMatrix::identity(2, 2)).unwrap();
        let c = certify(&p, &DMatrix::zeros(2, 2)).unwrap();
        assert_eq!(c.kappa, 1.0);
        assert_eq!(c.gamma, 1.0);
    }

    #[test]
    fn scalar_certificate() {
        let p = LinearPlant::scalar(0.9, 1.0).unwrap();
        let c = certify(&p, &DMatrix::from_element(1, 1, 0.5)).unwrap();
        assert!((c.gamma - 0.6).abs() < 1e-12);
        assert_eq!(c.kappa, 1.0);
    }

    #[test]
    fn unstable_and_defective_are_rejected() {
        let p = LinearPlant::scalar(1.2, 1.0).unwrap();
        assert!(matches!(
            certify(&p, &DMatrix::zeros(1, 1)),
            Err(Error::Rejected(Rejection::Unstable { .. }))
        ));
        let jordan = DMatrix::from_row_slice(2, 2, &[0.5, 1.0, 0.0, 0.5]);
        let p = LinearPlant::new(jordan, DMatrix::identity(2, 2)).unwrap();
        assert!(matches!(
            certify(&p, &DMatrix::zeros(2, 2)),
            Err(Error::Rejected(Rejection::Defective { .. }))
        ));
    }

    #[test]
    fn rotation_gives_complex_certificate() {
        let (c, s) = (0.6f64, 0.3f64);
        let a = DMatrix::from_row_slice(2, 2, &[c, -s, s, c]);
        let p = LinearPlant::new(a.clone(), DMatrix::identity(2, 2)).unwrap();
        let cert = certify(&p, &DMatrix::zeros(2, 2)).unwrap();
        assert!(cert.reconstruction_error(&a) < 1e-10);
        assert!((cert.spectral_radius - (c * c + s * s).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn synthesis_examples() {
        let p = LinearPlant::scalar(0.9, 1.0).unwrap();
        assert!((synthesize_k0(&p, 1.0).unwrap()[(0, 0)] - 0.9).abs() < 1e-15);
        let p = LinearPlant::new(
            DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 0.8])),
            DMatrix::identity(2, 2),
        )
        .unwrap();
        let k = synthesize_k0(&p, 0.7).unwrap();
        assert!((k[(0, 0)] - 0.2).abs() < 1e-12 && (k[(1, 1)] - 0.5).abs() < 1e-12);
        assert!(certify(&p, &k).unwrap().gamma >= 0.7 - 1e-12);
    }

    #[test]
    fn synthesis_rejects_coupled_dynamics() {
        let p = LinearPlant::new(
            DMatrix::from_row_slice(2, 2, &[0.6, 0.1, 0.0, 0.5]),
            DMatrix::from_column_slice(2, 1, &[1.0, 0.5]),
        )
        .unwrap();
        assert!(matches!(synthesize_k0(&p, 0.5), Err(Error::Unsupported(_))));
    }

    #[test]
    fn relaxed_class_only_weakens() {
        let p = LinearPlant::scalar(0.9, 1.0).unwrap();
        let c = certify(&p, &DMatrix::from_element(1, 1, 0.9)).unwrap();
        assert!(c.relaxed_class(None, Some(0.5)).is_ok());
        assert!(c.relaxed_class(Some(0.5), None).is_err());
        let c = certify(&p, &DMatrix::from_element(1, 1, 0.5)).unwrap();
        assert!(c.relaxed_class(None, Some(0.9)).is_err());
    }
}
