//! Versioned TOML run configuration.
//!
//! Every section is optional except `version` and `seed`; omitted fields take
//! the defaults of the two-link tracking experiment. Unknown keys are
//! rejected.

use crate::blocks::{DampingD, NbsParams, PotentialPhi};
use crate::controller::{PidGains, ReferenceTrajectory};
use crate::error::{Error, Result};
use crate::harness::{default_alpha_grid, SimConfig, TrainConfig};
use crate::lnn::{LagrangianNet, LnnTrainConfig, DEFAULT_EPS_M};
use crate::numerics::SmallMatrix;
use crate::plants::PlanarArm;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    /// Root of every random stream in the run.
    pub seed: u64,
    /// Row label carried into metrics and reports.
    #[serde(default)]
    pub label: String,
    #[serde(default = "default_plant")]
    pub plant: PlanarArm,
    #[serde(default)]
    pub reference: ReferenceTrajectory,
    #[serde(default)]
    pub controller: ControllerSpec,
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub sweep: SweepSpec,
    #[serde(default)]
    pub data: DataSpec,
    #[serde(default)]
    pub lnn: LnnSpec,
    /// Directory relative paths are resolved against; set by [`RunConfig::load`].
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

fn default_plant() -> PlanarArm {
    PlanarArm::uniform(2)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControllerKind {
    #[default]
    Nbs,
    Pid,
}

/// Where the NBS controller takes M, C and G from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    #[default]
    Plant,
    Lnn,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerSpec {
    pub kind: ControllerKind,
    pub model: ModelKind,
    /// Rows of the quadratic weight S of Φ; empty means identity.
    pub s: Vec<Vec<f64>>,
    pub psi_widths: Vec<usize>,
    pub damping_widths: Vec<usize>,
    /// Lower bound on the diagonal of the damping factor.
    pub m: f64,
    /// ε in D = TᵀT + εI.
    pub ridge: f64,
    /// Trained controller parameters to load instead of a fresh draw.
    pub params: Option<String>,
    /// Learned model file, required when `model = "lnn"`.
    pub lnn_model: Option<String>,
    pub pid: PidGains,
}

impl Default for ControllerSpec {
    fn default() -> Self {
        ControllerSpec {
            kind: ControllerKind::Nbs,
            model: ModelKind::Plant,
            s: Vec::new(),
            psi_widths: vec![32, 32, 32],
            damping_widths: vec![32, 32],
            m: 1.0,
            ridge: 0.0,
            params: None,
            lnn_model: None,
            pid: PidGains::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSpec {
    pub alphas: Vec<f64>,
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec {
            alphas: default_alpha_grid(),
        }
    }
}

/// Free-motion data generation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSpec {
    pub samples: usize,
    pub dt: f64,
    pub q0: Vec<f64>,
    pub qd0: Vec<f64>,
}

impl Default for DataSpec {
    fn default() -> Self {
        DataSpec {
            samples: 10_000,
            dt: 1e-3,
            q0: Vec::new(),
            qd0: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LnnSpec {
    pub widths: Vec<usize>,
    pub eps_m: f64,
    /// Dataset CSV; defaults to `dataset.csv` in the output directory.
    pub dataset: Option<String>,
    pub train: LnnTrainConfig,
}

impl Default for LnnSpec {
    fn default() -> Self {
        LnnSpec {
            widths: vec![32, 32, 32],
            eps_m: DEFAULT_EPS_M,
            dataset: None,
            train: LnnTrainConfig::default(),
        }
    }
}

fn check_widths(field: &str, w: &[usize]) -> Result<()> {
    if w.is_empty() || w.contains(&0) {
        return Err(Error::invalid(
            field,
            "needs at least one layer, all widths positive",
        ));
    }
    Ok(())
}

fn check_state(field: &str, v: &[f64], n: usize) -> Result<()> {
    if !v.is_empty() && v.len() != n {
        return Err(Error::invalid(
            field,
            format!("expected {n} entries, got {}", v.len()),
        ));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid(field, "entries must be finite"));
    }
    Ok(())
}

impl RunConfig {
    pub fn from_toml(s: &str) -> Result<Self> {
        let c: RunConfig = toml::from_str(s).map_err(|e| Error::Parse(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Reads and validates a config file; relative paths inside it resolve
    /// against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingArtifact {
                path: path.display().to_string(),
            },
            _ => Error::Io(e),
        })?;
        let mut c = Self::from_toml(&text)?;
        c.base_dir = path.parent().map(Path::to_path_buf);
        Ok(c)
    }

    pub fn resolve(&self, p: &str) -> PathBuf {
        let p = Path::new(p);
        match &self.base_dir {
            Some(b) if p.is_relative() => b.join(p),
            _ => p.to_path_buf(),
        }
    }

    pub fn dim(&self) -> usize {
        self.plant.dim()
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::invalid(
                "version",
                format!(
                    "unsupported version {}, expected {CONFIG_VERSION}",
                    self.version
                ),
            ));
        }
        self.plant.validate().map_err(|e| prefix("plant", e))?;
        let n = self.dim();
        self.reference.validate(n)?;
        let c = &self.controller;
        check_widths("controller.psi_widths", &c.psi_widths)?;
        check_widths("controller.damping_widths", &c.damping_widths)?;
        if !(c.m > 0.0) || !c.m.is_finite() {
            return Err(Error::invalid(
                "controller.m",
                "must be positive and finite",
            ));
        }
        if !(c.ridge >= 0.0) || !c.ridge.is_finite() {
            return Err(Error::invalid(
                "controller.ridge",
                "must be non-negative and finite",
            ));
        }
        self.s_matrix()?;
        c.pid.validate()?;
        if c.model == ModelKind::Lnn && c.lnn_model.is_none() {
            return Err(Error::invalid(
                "controller.lnn_model",
                "required when model = \"lnn\"",
            ));
        }
        self.sim.validate(n)?;
        self.train.validate(n)?;
        if self.sweep.alphas.is_empty()
            || self
                .sweep
                .alphas
                .iter()
                .any(|a| !(*a >= 0.0) || !a.is_finite())
        {
            return Err(Error::invalid(
                "sweep.alphas",
                "must be a non-empty list of finite non-negative values",
            ));
        }
        if self.data.samples == 0 {
            return Err(Error::invalid("data.samples", "must be positive"));
        }
        if !(self.data.dt > 0.0) || !self.data.dt.is_finite() {
            return Err(Error::invalid(
                "data.dt",
                format!("must be positive, got {}", self.data.dt),
            ));
        }
        check_state("data.q0", &self.data.q0, n)?;
        check_state("data.qd0", &self.data.qd0, n)?;
        check_widths("lnn.widths", &self.lnn.widths)?;
        if !(self.lnn.eps_m > 0.0) || !self.lnn.eps_m.is_finite() {
            return Err(Error::invalid("lnn.eps_m", "must be positive and finite"));
        }
        if n > crate::lnn::MAX_DIM && c.model == ModelKind::Lnn {
            return Err(Error::invalid(
                "plant",
                "too many links for the learned model",
            ));
        }
        self.lnn.train.validate()
    }

    /// S as a matrix (identity when unset).
    pub fn s_matrix(&self) -> Result<SmallMatrix> {
        let n = self.dim();
        let rows = &self.controller.s;
        if rows.is_empty() {
            return Ok(SmallMatrix::identity(n));
        }
        if rows.len() != n || rows.iter().any(|r| r.len() != n) {
            return Err(Error::invalid("controller.s", format!("must be {n}x{n}")));
        }
        let s = SmallMatrix::from_fn(n, n, |i, j| rows[i][j]);
        if !s.is_finite() || s.max_asymmetry() > 1e-12 {
            return Err(Error::invalid(
                "controller.s",
                "must be finite and symmetric",
            ));
        }
        crate::numerics::cholesky(&s)
            .map_err(|_| Error::invalid("controller.s", "must be positive definite"))?;
        Ok(s)
    }

    /// Seed of the ψ network draw.
    pub fn psi_seed(&self) -> u64 {
        self.seed
    }

    /// Seed of the damping network draw.
    pub fn damping_seed(&self) -> u64 {
        self.seed.wrapping_add(1)
    }

    /// Seed of the learned-model initialization.
    pub fn lnn_seed(&self) -> u64 {
        self.seed.wrapping_add(2)
    }

    /// Freshly initialized controller parameters.
    pub fn fresh_controller(&self) -> Result<NbsParams> {
        let n = self.dim();
        let c = &self.controller;
        Ok(NbsParams {
            phi: PotentialPhi::new(n, &c.psi_widths, self.s_matrix()?, self.psi_seed()),
            damping: DampingD::new(n, &c.damping_widths, c.m, c.ridge, self.damping_seed()),
        })
    }

    /// Freshly initialized learned model.
    pub fn fresh_lnn(&self) -> LagrangianNet {
        LagrangianNet::new(
            self.dim(),
            &self.lnn.widths,
            self.lnn.eps_m,
            self.lnn_seed(),
        )
    }

    /// Learned-model training settings with the run seed applied.
    pub fn lnn_train(&self) -> LnnTrainConfig {
        LnnTrainConfig {
            seed: self.seed.wrapping_add(3),
            ..self.lnn.train.clone()
        }
    }
}

fn prefix(section: &str, e: Error) -> Error {
    match e {
        Error::Invalid { field, message } => Error::Invalid {
            field: format!("{section}.{field}"),
            message,
        },
        e => e,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_takes_defaults() {
        let c = RunConfig::from_toml("version = 1\nseed = 3\n").unwrap();
        assert_eq!(c.dim(), 2);
        assert_eq!(c.sim.dt, 0.01);
        assert_eq!(c.train.epochs, 200);
        assert_eq!(c.sweep.alphas.len(), 40);
        assert_eq!(c.data.samples, 10_000);
    }

    #[test]
    fn seed_is_mandatory_and_unknown_keys_rejected() {
        assert!(RunConfig::from_toml("version = 1\n").is_err());
        assert!(RunConfig::from_toml("version = 1\nseed = 1\nbogus = 2\n").is_err());
        assert!(RunConfig::from_toml("version = 1\nseed = 1\n[sim]\nstep = 2\n").is_err());
        assert!(RunConfig::from_toml("version = 2\nseed = 1\n").is_err());
    }

    #[test]
    fn bad_dt_names_the_field() {
        let e = RunConfig::from_toml("version = 1\nseed = 1\n[sim]\ndt = 0.0\n").unwrap_err();
        assert!(e.to_string().contains("sim.dt"), "{e}");
    }

    #[test]
    fn round_trip() {
        let c = RunConfig::from_toml("version = 1\nseed = 9\n[sim]\nhorizon = 5.0\n").unwrap();
        assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
    }
}
