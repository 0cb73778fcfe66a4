//! Single-document project configuration.

use std::path::{Path, PathBuf};

use gamesynth::abstraction::{Grid, InputFilter, KernelMode};
use gamesynth::linalg::{mat_serde, opt_mat_serde, Mat};
use gamesynth::model::ReductionHints;
use gamesynth::relation::RelationSettings;
use gamesynth::runtime::AdversarySpec;
use gamesynth::synthesis::Problem;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReductionBlock {
    #[serde(rename = "P", with = "mat_serde")]
    pub p: Mat,
    /// Identity when absent.
    #[serde(rename = "B_r", default, with = "opt_mat_serde", skip_serializing_if = "Option::is_none")]
    pub b_r: Option<Mat>,
    #[serde(default)]
    pub hints: ReductionHints,
}

fn dense() -> KernelMode {
    KernelMode::Dense
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbstractionBlock {
    pub grid: Grid,
    pub u_grid: Grid,
    pub w_grid: Grid,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u_prime: Option<InputFilter>,
    #[serde(default = "dense")]
    pub kernel: KernelMode,
}

fn eps_samples() -> usize {
    24
}

fn kappa_samples() -> usize {
    20
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationBlock {
    pub delta: f64,
    pub eps_range: (f64, f64),
    #[serde(default = "eps_samples")]
    pub eps_samples: usize,
    #[serde(default = "kappa_samples")]
    pub kappa_samples: usize,
    #[serde(rename = "M_w", with = "mat_serde")]
    pub m_w: Mat,
    pub eps_w: f64,
    #[serde(rename = "R_tilde", default, with = "opt_mat_serde", skip_serializing_if = "Option::is_none")]
    pub r_tilde: Option<Mat>,
    /// Hand-written certificate to verify and use instead of searching.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub certificate: Option<PathBuf>,
}

impl RelationBlock {
    pub fn settings(&self) -> RelationSettings {
        RelationSettings {
            delta: self.delta,
            eps_range: self.eps_range,
            eps_samples: self.eps_samples,
            kappa_samples: self.kappa_samples,
            m_w: self.m_w.clone(),
            eps_w: self.eps_w,
            r_tilde: self.r_tilde.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisBlock {
    pub horizon: usize,
    pub problem: Problem,
}

fn uniform() -> AdversarySpec {
    AdversarySpec::Uniform
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationBlock {
    pub x0: Vec<Vec<f64>>,
    pub runs: usize,
    pub seed: u64,
    #[serde(default = "uniform")]
    pub adversary: AdversarySpec,
    /// Defaults to the synthesis horizon.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
    #[serde(default = "yes")]
    pub record_trajectories: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectConfig {
    pub game: PathBuf,
    pub dfa: PathBuf,
    pub reduction: ReductionBlock,
    pub abstraction: AbstractionBlock,
    pub relation: RelationBlock,
    pub synthesis: SynthesisBlock,
    pub simulation: SimulationBlock,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl ProjectConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg: ProjectConfig = serde_json::from_str(&text).map_err(|e| CliError::Parse {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.validate(path)?;
        Ok(cfg)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn game_path(&self) -> PathBuf {
        self.resolve(&self.game)
    }

    pub fn dfa_path(&self) -> PathBuf {
        self.resolve(&self.dfa)
    }

    pub fn certificate_path(&self) -> Option<PathBuf> {
        self.relation.certificate.as_ref().map(|p| self.resolve(p))
    }

    fn validate(&self, path: &Path) -> CliResult<()> {
        let bad = |msg: String| CliError::Parse {
            path: path.to_path_buf(),
            msg,
        };
        let mut files = vec![self.game_path(), self.dfa_path()];
        files.extend(self.certificate_path());
        for f in files {
            if !f.is_file() {
                return Err(bad(format!("referenced file {} does not exist", f.display())));
            }
        }
        let r = &self.relation;
        if !(0.0..1.0).contains(&r.delta) {
            return Err(bad("relation.delta must lie in [0, 1)".into()));
        }
        if !(r.eps_range.0 > 0.0 && r.eps_range.0 <= r.eps_range.1) {
            return Err(bad("relation.eps_range must be positive and ordered".into()));
        }
        if r.eps_samples == 0 || r.kappa_samples == 0 || r.eps_w <= 0.0 {
            return Err(bad("relation sample counts and eps_w must be positive".into()));
        }
        if self.simulation.x0.is_empty() {
            return Err(bad("simulation.x0 is empty".into()));
        }
        if let Some(h) = self.simulation.horizon {
            if h > self.synthesis.horizon {
                return Err(bad("simulation horizon exceeds the synthesis horizon".into()));
            }
        }
        Ok(())
    }
}
