//! TOML experiment configuration.
//!
//! ```toml
//! name = "scalar-smoke"
//! horizons = [500]
//! seeds = [0, 1]
//! regime = "strongly-convex-smooth"
//! output_dir = "out/scalar-smoke"
//!
//! [plant]
//! preset = "scalar"
//!
//! [noise]
//! kind = "truncated-gaussian"
//! sigma = 0.5
//! bound = 1.0
//! seed = 77
//!
//! [cost]
//! family = "quadratic"
//! qx = [[1.0]]
//! qu = [[0.01]]
//!
//! [mode]
//! mode = "tuned"
//! alpha_f = 1000.0
//! ```
//!
//! Per cell `(T, s)` the disturbance seed is `noise.seed + s`, the target
//! seed is `targets.seed + s` and the algorithm seed is `s`.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::bco_base::Regime;
use crate::controller::{ControlSetup, FeedbackSpec, Mode};
use crate::costs::{CostOracle, TargetPath};
use crate::error::{Error, Result};
use crate::plant::{load_noise_csv, LinearPlant, NoiseKind, NoiseProcess};
use crate::stability::synthesize_k0;

/// Row-major matrix literal.
pub type Rows = Vec<Vec<f64>>;

pub fn matrix_from_rows(rows: &Rows) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, |row| row.len());
    if r == 0 || c == 0 || rows.iter().any(|row| row.len() != c) {
        return Err(Error::Config(
            "matrix literal must be a non-empty rectangle".into(),
        ));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

fn default_scalar_a() -> f64 {
    0.9
}

fn default_one() -> f64 {
    1.0
}

fn default_pole_gamma() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PlantSpec {
    /// `x' = a x + b u + w` with gain `k0`.
    Scalar {
        #[serde(default = "default_scalar_a")]
        a: f64,
        #[serde(default = "default_one")]
        b: f64,
        #[serde(default = "default_scalar_a")]
        k0: f64,
    },
    /// `A = diag(0.5, 0.8)`, `B = I`, gain placed by pole assignment.
    Diagonal {
        #[serde(default = "default_pole_gamma")]
        pole_gamma: f64,
    },
    /// `A = [[0.6, 0.1], [0, 0.5]]`, `B = [[1], [0.5]]`, `K0 = 0`.
    TwoByOne {},
    Custom {
        a: Rows,
        b: Rows,
        /// Synthesized by pole placement when absent.
        k0: Option<Rows>,
        #[serde(default = "default_pole_gamma")]
        pole_gamma: f64,
    },
}

impl PlantSpec {
    pub fn build(&self) -> Result<(LinearPlant, DMatrix<f64>)> {
        match self {
            PlantSpec::Scalar { a, b, k0 } => Ok((
                LinearPlant::scalar(*a, *b)?,
                DMatrix::from_element(1, 1, *k0),
            )),
            PlantSpec::Diagonal { pole_gamma } => {
                let plant = LinearPlant::new(
                    DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![0.5, 0.8])),
                    DMatrix::identity(2, 2),
                )?;
                let k0 = synthesize_k0(&plant, *pole_gamma)?;
                Ok((plant, k0))
            }
            PlantSpec::TwoByOne {} => {
                let plant = LinearPlant::new(
                    DMatrix::from_row_slice(2, 2, &[0.6, 0.1, 0.0, 0.5]),
                    DMatrix::from_row_slice(2, 1, &[1.0, 0.5]),
                )?;
                Ok((plant, DMatrix::zeros(1, 2)))
            }
            PlantSpec::Custom {
                a,
                b,
                k0,
                pole_gamma,
            } => {
                let plant = LinearPlant::new(matrix_from_rows(a)?, matrix_from_rows(b)?)?;
                let k0 = match k0 {
                    Some(rows) => matrix_from_rows(rows)?,
                    None => synthesize_k0(&plant, *pole_gamma)?,
                };
                Ok((plant, k0))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum NoiseSpec {
    TruncatedGaussian {
        sigma: f64,
        bound: f64,
        seed: u64,
    },
    ScaledRademacher {
        bound: f64,
        seed: u64,
    },
    Sinusoidal {
        amplitude: f64,
        frequency: f64,
        bound: f64,
    },
    /// One disturbance per CSV row, relative to the config file.
    File {
        path: PathBuf,
    },
}

impl NoiseSpec {
    /// The process for algorithm seed `seed`.
    pub fn build(&self, seed: u64, base_dir: &Path) -> Result<NoiseProcess> {
        match self {
            NoiseSpec::TruncatedGaussian {
                sigma,
                bound,
                seed: s,
            } => NoiseProcess::new(
                NoiseKind::TruncatedGaussian {
                    sigma: *sigma,
                    bound: *bound,
                },
                s.wrapping_add(seed),
            ),
            NoiseSpec::ScaledRademacher { bound, seed: s } => NoiseProcess::new(
                NoiseKind::ScaledRademacher { bound: *bound },
                s.wrapping_add(seed),
            ),
            NoiseSpec::Sinusoidal {
                amplitude,
                frequency,
                bound,
            } => NoiseProcess::new(
                NoiseKind::Sinusoidal {
                    amplitude: *amplitude,
                    frequency: *frequency,
                    bound: *bound,
                },
                0,
            ),
            NoiseSpec::File { path } => {
                let vectors = load_noise_csv(base_dir.join(path))?;
                NoiseProcess::new(NoiseKind::FileBacked { vectors }, 0)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSpec {
    pub step: f64,
    pub bound: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CostSpec {
    Quadratic {
        qx: Rows,
        qu: Rows,
        targets: Option<TargetSpec>,
    },
    SmoothConvex {
        qx: Rows,
        qu: Rows,
        targets: Option<TargetSpec>,
    },
    Nonsmooth {
        a: f64,
        b: f64,
        targets: Option<TargetSpec>,
    },
}

impl CostSpec {
    pub fn build(&self, d: usize, k: usize, horizon: usize, seed: u64) -> Result<CostOracle> {
        let (oracle, targets) = match self {
            CostSpec::Quadratic { qx, qu, targets } => (
                CostOracle::quadratic(matrix_from_rows(qx)?, matrix_from_rows(qu)?)?,
                targets,
            ),
            CostSpec::SmoothConvex { qx, qu, targets } => (
                CostOracle::smooth_convex(matrix_from_rows(qx)?, matrix_from_rows(qu)?)?,
                targets,
            ),
            CostSpec::Nonsmooth { a, b, targets } => {
                (CostOracle::nonsmooth(*a, *b, d, k)?, targets)
            }
        };
        match targets {
            Some(t) => oracle.with_targets(TargetPath::random_walk(
                horizon,
                d,
                k,
                t.step,
                t.bound,
                t.seed.wrapping_add(seed),
            )?),
            None => Ok(oracle),
        }
    }
}

fn default_scale() -> f64 {
    1.0
}

fn default_restarts() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    /// Strictly increasing horizons.
    pub horizons: Vec<usize>,
    pub seeds: Vec<u64>,
    pub regime: Regime,
    pub output_dir: PathBuf,
    pub plant: PlantSpec,
    pub noise: NoiseSpec,
    pub cost: CostSpec,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub feedback: FeedbackSpec,
    pub class_kappa: Option<f64>,
    pub class_gamma: Option<f64>,
    #[serde(default = "default_scale")]
    pub projection_radius_scale: f64,
    #[serde(default = "default_restarts")]
    pub comparator_restarts: usize,
    /// Directory that relative paths are resolved against (not serialized).
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; relative paths inside resolve against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::from_toml(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizons.is_empty() || self.horizons.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(
                "horizons must be non-empty and strictly increasing".into(),
            ));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(Error::Config("seeds must be distinct".into()));
        }
        if !(self.projection_radius_scale > 0.0) {
            return Err(Error::Config(
                "projection_radius_scale must be positive".into(),
            ));
        }
        let (plant, _) = self.plant.build()?;
        let (d, k) = (plant.state_dim(), plant.control_dim());
        self.cost.build(d, k, self.horizons[0], 0)?;
        Ok(())
    }

    /// Output directory, resolved against the config location when relative.
    pub fn resolved_output_dir(&self) -> PathBuf {
        if self.output_dir.is_absolute() {
            self.output_dir.clone()
        } else {
            self.base_dir.join(&self.output_dir)
        }
    }

    /// The controller setup of cell `(horizon, seed)`.
    pub fn setup(&self, horizon: usize, seed: u64) -> Result<ControlSetup> {
        let (plant, k0) = self.plant.build()?;
        let (d, k) = (plant.state_dim(), plant.control_dim());
        Ok(ControlSetup {
            noise: self.noise.build(seed, &self.base_dir)?,
            cost: self.cost.build(d, k, horizon, seed)?,
            plant,
            k0,
            regime: self.regime,
            mode: self.mode,
            class_kappa: self.class_kappa,
            class_gamma: self.class_gamma,
            horizon,
            seed,
            feedback: self.feedback,
            projection_radius_scale: self.projection_radius_scale,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMOKE: &str = r#"
        name = "smoke"
        horizons = [100, 200]
        seeds = [0, 1]
        regime = "convex-nonsmooth"
        output_dir = "out"
        [plant]
        preset = "two-by-one"
        [noise]
        kind = "scaled-rademacher"
        bound = 1.0
        seed = 3
        [cost]
        family = "nonsmooth"
        a = 1.0
        b = 0.5
    "#;

    #[test]
    fn parses_and_builds() {
        let cfg = ExperimentConfig::from_toml(SMOKE).unwrap();
        assert_eq!(cfg.mode, Mode::Theorem);
        assert_eq!(cfg.comparator_restarts, 10);
        let s = cfg.setup(100, 1).unwrap();
        assert_eq!(s.noise.seed, 4);
        assert_eq!((s.plant.state_dim(), s.plant.control_dim()), (2, 1));
    }

    #[test]
    fn rejects_bad_grids() {
        let bad = SMOKE.replace("[100, 200]", "[200, 100]");
        assert!(matches!(
            ExperimentConfig::from_toml(&bad),
            Err(Error::Config(_))
        ));
        let bad = SMOKE.replace("[0, 1]", "[]");
        assert!(ExperimentConfig::from_toml(&bad).is_err());
        let bad = SMOKE.replace(
            "preset = \"two-by-one\"",
            "preset = \"two-by-one\"\nbogus = 1",
        );
        assert!(ExperimentConfig::from_toml(&bad).is_err());
    }

    #[test]
    fn tuned_mode_parses() {
        let text = format!("{SMOKE}\n[mode]\nmode = \"tuned\"\neta_scale = 2.0\n");
        let cfg = ExperimentConfig::from_toml(&text).unwrap();
        match cfg.mode {
            Mode::Tuned(o) => assert_eq!(o.eta_scale, Some(2.0)),
            Mode::Theorem => panic!("expected tuned mode"),
        }
    }
}
