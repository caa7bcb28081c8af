//! Matrix utilities used by the control and optimization layers.
//!
//! Everything here works on small dense matrices (`k, d <= ~10`), so the
//! spectral routines go through a full SVD rather than iterative methods.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};

/// An ordered tuple of `H` equally shaped `k x d` matrices.
///
/// This is the decision variable of the disturbance-action controller and
/// also the shape of the sphere perturbations used by the gradient estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockMatrix {
    blocks: Vec<DMatrix<f64>>,
}

impl BlockMatrix {
    pub fn zeros(k: usize, d: usize, h: usize) -> Self {
        Self {
            blocks: vec![DMatrix::zeros(k, d); h],
        }
    }

    pub fn from_blocks(blocks: Vec<DMatrix<f64>>) -> Result<Self> {
        let Some(first) = blocks.first() else {
            return Err(Error::Parameter(
                "block matrix needs at least one block".into(),
            ));
        };
        let shape = first.shape();
        if blocks.iter().any(|b| b.shape() != shape) {
            return Err(dim_err("all blocks must share the same shape"));
        }
        Ok(Self { blocks })
    }

    /// Builds a block matrix from a flat vector in block order, each block
    /// column-major (the column stacking of the tuple).
    pub fn from_flat(k: usize, d: usize, h: usize, flat: &[f64]) -> Result<Self> {
        if flat.len() != k * d * h {
            return Err(dim_err(format!(
                "flat length {} != k*d*h = {}",
                flat.len(),
                k * d * h
            )));
        }
        let blocks = flat
            .chunks(k * d)
            .map(|c| DMatrix::from_column_slice(k, d, c))
            .collect();
        Ok(Self { blocks })
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.blocks
            .iter()
            .flat_map(|b| b.as_slice().iter().copied())
            .collect()
    }

    /// Number of blocks `H`.
    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// `(k, d)` shape of each block.
    pub fn block_shape(&self) -> (usize, usize) {
        self.blocks[0].shape()
    }

    /// Total number of scalar entries `k * d * H`.
    pub fn dim(&self) -> usize {
        let (k, d) = self.block_shape();
        k * d * self.len()
    }

    pub fn blocks(&self) -> &[DMatrix<f64>] {
        &self.blocks
    }

    pub fn blocks_mut(&mut self) -> &mut [DMatrix<f64>] {
        &mut self.blocks
    }

    pub fn block(&self, i: usize) -> &DMatrix<f64> {
        &self.blocks[i]
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.blocks
            .iter()
            .map(|b| b.norm_squared())
            .sum::<f64>()
            .sqrt()
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.len() == other.len() && self.block_shape() == other.block_shape()
    }

    fn check_shape(&self, other: &Self) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(dim_err(format!(
                "block matrices {}x{:?} and {}x{:?}",
                self.len(),
                self.block_shape(),
                other.len(),
                other.block_shape()
            )))
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_shape(other)?;
        Ok(Self {
            blocks: self
                .blocks
                .iter()
                .zip(&other.blocks)
                .map(|(a, b)| a + b)
                .collect(),
        })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_shape(other)?;
        Ok(Self {
            blocks: self
                .blocks
                .iter()
                .zip(&other.blocks)
                .map(|(a, b)| a - b)
                .collect(),
        })
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            blocks: self.blocks.iter().map(|b| b * s).collect(),
        }
    }

    /// Scales block `i` by `factors[i]`.
    pub fn scale_blocks(&self, factors: &[f64]) -> Result<Self> {
        if factors.len() != self.len() {
            return Err(dim_err(format!(
                "{} block factors for {} blocks",
                factors.len(),
                self.len()
            )));
        }
        Ok(Self {
            blocks: self
                .blocks
                .iter()
                .zip(factors)
                .map(|(b, f)| b * *f)
                .collect(),
        })
    }

    /// Spectral norm of each block.
    pub fn block_spectral_norms(&self) -> Vec<f64> {
        self.blocks.iter().map(largest_singular_value).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.blocks.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }
}

fn largest_singular_value(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}

fn check_finite(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.into()))
    }
}

/// Largest singular value of `m`.
pub fn spectral_norm(m: &DMatrix<f64>) -> Result<f64> {
    check_finite(m, "spectral_norm input")?;
    Ok(largest_singular_value(m))
}

/// Frobenius-nearest matrix to `m` whose spectral norm is at most `radius`.
///
/// Singular values above `radius` are clipped; this is the exact minimizer.
/// Inputs that are already feasible are returned unchanged.
pub fn project_spectral_ball(m: &DMatrix<f64>, radius: f64) -> Result<DMatrix<f64>> {
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(Error::Parameter(format!(
            "projection radius must be positive and finite, got {radius}"
        )));
    }
    check_finite(m, "project_spectral_ball input")?;
    if m.is_empty() {
        return Ok(m.clone());
    }
    // Eigendecomposition of the smaller Gram matrix: singular directions with
    // sigma > radius are shrunk by radius / sigma, the rest are left alone.
    if spectral_norm(m)? <= radius {
        return Ok(m.clone());
    }
    let tall = m.nrows() >= m.ncols();
    let gram = if tall {
        m.transpose() * m
    } else {
        m * m.transpose()
    };
    let eig = gram.symmetric_eigen();
    let r2 = radius * radius;
    let n = eig.eigenvalues.len();
    let mut shrink = DMatrix::zeros(n, n);
    for (i, &l) in eig.eigenvalues.iter().enumerate() {
        if l > r2 {
            let v = eig.eigenvectors.column(i);
            shrink += (v * v.transpose()) * (1.0 - radius / l.sqrt());
        }
    }
    let out = if tall { m - m * shrink } else { m - shrink * m };
    check_finite(&out, "project_spectral_ball output")?;
    Ok(out)
}

/// Product of spectral-norm balls, one per block: `{M : ||M^[i]|| <= radii[i]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralBalls {
    radii: Vec<f64>,
}

impl SpectralBalls {
    pub fn new(radii: Vec<f64>) -> Result<Self> {
        if radii.is_empty() || radii.iter().any(|r| !(*r > 0.0) || !r.is_finite()) {
            return Err(Error::Parameter(format!(
                "block radii must be positive and finite: {radii:?}"
            )));
        }
        Ok(Self { radii })
    }

    pub fn radii(&self) -> &[f64] {
        &self.radii
    }

    pub fn len(&self) -> usize {
        self.radii.len()
    }

    pub fn is_empty(&self) -> bool {
        self.radii.is_empty()
    }

    /// The same set with every radius multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(self.radii.iter().map(|r| r * factor).collect())
    }

    /// Largest ratio `||M^[i]|| / radius_i` over blocks; the set is `ratio <= 1`.
    pub fn max_ratio(&self, m: &BlockMatrix) -> Result<f64> {
        self.check(m)?;
        Ok(m.block_spectral_norms()
            .iter()
            .zip(&self.radii)
            .map(|(n, r)| n / r)
            .fold(0.0, f64::max))
    }

    pub fn contains(&self, m: &BlockMatrix, tol: f64) -> bool {
        m.len() == self.len()
            && m.block_spectral_norms()
                .iter()
                .zip(&self.radii)
                .all(|(n, r)| *n <= r + tol)
    }

    /// Euclidean (Frobenius) projection onto the product set. The objective
    /// separates across blocks, so each block is clipped independently.
    pub fn project(&self, m: &BlockMatrix) -> Result<BlockMatrix> {
        self.check(m)?;
        let blocks = m
            .blocks()
            .iter()
            .zip(&self.radii)
            .map(|(b, r)| project_spectral_ball(b, *r))
            .collect::<Result<Vec<_>>>()?;
        BlockMatrix::from_blocks(blocks)
    }

    fn check(&self, m: &BlockMatrix) -> Result<()> {
        if m.len() != self.len() {
            return Err(dim_err(format!(
                "{} blocks against {} radii",
                m.len(),
                self.len()
            )));
        }
        Ok(())
    }
}

fn gaussian_vector<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
        if v.iter().any(|x| *x != 0.0) {
            return v;
        }
    }
}

fn check_dims(dims: &[usize]) -> Result<()> {
    if dims.contains(&0) {
        return Err(Error::Parameter(format!(
            "dimensions must be positive: {dims:?}"
        )));
    }
    Ok(())
}

/// Uniform draw from the unit sphere of the `k*d*H`-dimensional space of
/// block matrices (normalized standard Gaussian).
pub fn sample_unit_sphere<R: Rng + ?Sized>(
    k: usize,
    d: usize,
    h: usize,
    rng: &mut R,
) -> Result<BlockMatrix> {
    check_dims(&[k, d, h])?;
    let mut v = gaussian_vector(k * d * h, rng);
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= norm);
    BlockMatrix::from_flat(k, d, h, &v)
}

/// Uniform draw from the closed unit ball in `R^n`.
pub fn sample_unit_ball<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<DVector<f64>> {
    check_dims(&[n])?;
    let dir = DVector::from_vec(gaussian_vector(n, rng)).normalize();
    let u: f64 = rng.random();
    Ok(dir * u.powf(1.0 / n as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn spectral_norm_of_identity_and_diagonal() {
        assert!((spectral_norm(&DMatrix::identity(3, 3)).unwrap() - 1.0).abs() < 1e-12);
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 1.0]));
        assert!((spectral_norm(&d).unwrap() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn spectral_norm_rejects_nan() {
        let mut m = DMatrix::<f64>::zeros(2, 2);
        m[(0, 1)] = f64::NAN;
        assert!(matches!(spectral_norm(&m), Err(Error::NonFinite(_))));
    }

    #[test]
    fn projection_clips_diagonal() {
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 1.0]));
        let p = project_spectral_ball(&d, 2.0).unwrap();
        let want = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 1.0]));
        assert!((p - want).norm() < 1e-12);
    }

    #[test]
    fn projection_leaves_feasible_input_alone() {
        let m = DMatrix::from_row_slice(2, 3, &[0.1, -0.2, 0.3, 0.0, 0.2, -0.1]);
        assert_eq!(project_spectral_ball(&m, 1.0).unwrap(), m);
    }

    #[test]
    fn projection_rejects_bad_radius() {
        let m = DMatrix::<f64>::identity(2, 2);
        assert!(matches!(
            project_spectral_ball(&m, 0.0),
            Err(Error::Parameter(_))
        ));
        assert!(matches!(
            project_spectral_ball(&m, -1.0),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn sphere_sample_has_unit_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let u = sample_unit_sphere(2, 3, 4, &mut rng).unwrap();
            assert!((u.frobenius_norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn one_dimensional_sphere_is_plus_minus_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let u = sample_unit_sphere(1, 1, 1, &mut rng).unwrap();
            let v = u.block(0)[(0, 0)];
            assert!(v == 1.0 || v == -1.0, "{v}");
        }
    }

    #[test]
    fn ball_samples_stay_in_ball() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in 1..6 {
            for _ in 0..200 {
                let b = sample_unit_ball(n, &mut rng).unwrap();
                assert!(b.norm() <= 1.0);
            }
        }
        let b = sample_unit_ball(1, &mut rng).unwrap();
        assert!((-1.0..=1.0).contains(&b[0]));
    }

    #[test]
    fn ball_second_moment_matches_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let m: f64 = (0..n)
            .map(|_| sample_unit_ball(3, &mut rng).unwrap().norm_squared())
            .sum::<f64>()
            / n as f64;
        assert!((m - 0.6).abs() < 0.01, "{m}");
    }

    #[test]
    fn block_frobenius_is_root_sum_square() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let u = sample_unit_sphere(2, 2, 3, &mut rng).unwrap().scale(2.5);
        let rss = u
            .blocks()
            .iter()
            .map(|b| b.norm_squared())
            .sum::<f64>()
            .sqrt();
        assert!((u.frobenius_norm() - rss).abs() < 1e-12);
    }

    #[test]
    fn flat_round_trip_preserves_layout() {
        let flat: Vec<f64> = (0..12).map(f64::from).collect();
        let m = BlockMatrix::from_flat(2, 3, 2, &flat).unwrap();
        assert_eq!(m.block(0)[(1, 0)], 1.0);
        assert_eq!(m.block(1)[(0, 0)], 6.0);
        assert_eq!(m.to_flat(), flat);
    }

    #[test]
    fn mismatched_blocks_are_rejected() {
        let r = BlockMatrix::from_blocks(vec![DMatrix::zeros(1, 2), DMatrix::zeros(2, 1)]);
        assert!(matches!(r, Err(Error::Dimension(_))));
    }
}
