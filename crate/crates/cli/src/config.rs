//! Run configuration, read from a single TOML file.

use std::path::{Path, PathBuf};

use funmix_core::basis::{build_basis, BasisSystem};
use funmix_core::priors::PriorConfig;
use funmix_core::sampler::SamplerConfig;
use funmix_core::simulate::SimulationConfig;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BasisSection {
    pub degree: usize,
    pub n_interior: usize,
    pub domain: [f64; 2],
}

impl Default for BasisSection {
    fn default() -> Self {
        BasisSection {
            degree: 3,
            n_interior: 6,
            domain: [6.0, 14.0],
        }
    }
}

impl BasisSection {
    pub fn build(&self) -> Result<BasisSystem> {
        Ok(build_basis(self.degree, self.n_interior, self.domain)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DimsSection {
    /// Number of features `K`.
    pub k: usize,
    /// Pseudo-eigenfunctions per feature `M`.
    pub m: usize,
}

impl Default for DimsSection {
    fn default() -> Self {
        DimsSection { k: 2, m: 2 }
    }
}

/// Prior hyperparameters; `alpha_dir` defaults to ones of length `K`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorSection {
    pub nu_gamma: f64,
    pub alpha1: f64,
    pub beta1: f64,
    pub alpha2: f64,
    pub beta2: f64,
    pub alpha0: f64,
    pub beta0: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha_dir: Option<Vec<f64>>,
    pub tau_rep: f64,
    pub lambda_nu: f64,
    pub lambda_phi: f64,
    pub nu_ridge: f64,
    pub eta_shape: f64,
    pub eta_rate: f64,
}

impl Default for PriorSection {
    fn default() -> Self {
        let p = PriorConfig::default_for(1);
        PriorSection {
            nu_gamma: p.nu_gamma,
            alpha1: p.alpha1,
            beta1: p.beta1,
            alpha2: p.alpha2,
            beta2: p.beta2,
            alpha0: p.alpha0,
            beta0: p.beta0,
            alpha_dir: None,
            tau_rep: p.tau_rep,
            lambda_nu: p.lambda_nu,
            lambda_phi: p.lambda_phi,
            nu_ridge: p.nu_ridge,
            eta_shape: p.eta_shape,
            eta_rate: p.eta_rate,
        }
    }
}

impl PriorSection {
    /// Prior for `k` features, validated.
    pub fn for_k(&self, k: usize) -> Result<PriorConfig> {
        let prior = PriorConfig {
            nu_gamma: self.nu_gamma,
            alpha1: self.alpha1,
            beta1: self.beta1,
            alpha2: self.alpha2,
            beta2: self.beta2,
            alpha0: self.alpha0,
            beta0: self.beta0,
            alpha_dir: self.alpha_dir.clone().unwrap_or_else(|| vec![1.0; k]),
            tau_rep: self.tau_rep,
            lambda_nu: self.lambda_nu,
            lambda_phi: self.lambda_phi,
            nu_ridge: self.nu_ridge,
            eta_shape: self.eta_shape,
            eta_rate: self.eta_rate,
        };
        prior.validate(k)?;
        Ok(prior)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSection {
    /// Independent chains; chain `c` (from 0) uses seed `sampler.seed + c`.
    pub chains: usize,
}

impl Default for FitSection {
    fn default() -> Self {
        FitSection { chains: 1 }
    }
}

/// Paths, relative to the directory holding the configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IoSection {
    pub data: PathBuf,
    pub truth: PathBuf,
    pub output: PathBuf,
}

impl Default for IoSection {
    fn default() -> Self {
        IoSection {
            data: "data.csv".into(),
            truth: "truth.json".into(),
            output: "output".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectSection {
    pub k_list: Vec<usize>,
}

impl Default for SelectSection {
    fn default() -> Self {
        SelectSection { k_list: vec![1, 2, 3, 4] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SummarizeSection {
    /// Evaluation points spread evenly over the basis domain.
    pub grid_len: usize,
    /// Two group labels `[a, b]` for the channel contrast `a − b`; empty
    /// to skip it.
    pub contrast_groups: Vec<String>,
    /// Feature (from 1) whose loadings are contrasted.
    pub contrast_feature: usize,
}

impl Default for SummarizeSection {
    fn default() -> Self {
        SummarizeSection {
            grid_len: 101,
            contrast_groups: Vec::new(),
            contrast_feature: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidateSection {
    pub seed: u64,
    pub marginal_instances: usize,
    pub marginal_draws: usize,
    pub conjugate_sets: usize,
    pub conjugate_draws: usize,
    pub geweke_rounds: usize,
}

impl Default for ValidateSection {
    fn default() -> Self {
        ValidateSection {
            seed: 11,
            marginal_instances: 20,
            marginal_draws: 1_000_000,
            conjugate_sets: 5,
            conjugate_draws: 10_000,
            geweke_rounds: 5000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub basis: BasisSection,
    pub dims: DimsSection,
    pub prior: PriorSection,
    pub sampler: SamplerConfig,
    pub fit: FitSection,
    pub io: IoSection,
    pub simulate: SimulationConfig,
    pub select: SelectSection,
    pub summarize: SummarizeSection,
    pub validate: ValidateSection,
    /// Directory that relative paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl RunConfig {
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|source| CliError::Config {
            path: origin.to_path_buf(),
            source,
        })?;
        cfg.base_dir = origin.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_toml(&text, path)
    }

    /// The defaults as a TOML document.
    pub fn default_toml() -> String {
        toml::to_string(&RunConfig::default()).expect("default configuration serializes")
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn data_path(&self) -> PathBuf {
        self.resolve(&self.io.data)
    }

    pub fn truth_path(&self) -> PathBuf {
        self.resolve(&self.io.truth)
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.io.output)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let text = RunConfig::default_toml();
        let back = RunConfig::from_toml(&text, Path::new("cfg.toml")).unwrap();
        assert_eq!(back, RunConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::from_toml("[sampler]\nn_iters = 10\n", Path::new("x.toml")).unwrap_err();
        assert!(err.to_string().contains("n_iters"), "{err}");
        assert!(RunConfig::from_toml("[samplr]\n", Path::new("x.toml")).is_err());
    }

    #[test]
    fn partial_sections_keep_defaults() {
        let cfg = RunConfig::from_toml("[dims]\nk = 3\n[sampler]\nseed = 9\n", Path::new("/a/b/c.toml")).unwrap();
        assert_eq!(cfg.dims.k, 3);
        assert_eq!(cfg.dims.m, 2);
        assert_eq!(cfg.sampler.seed, 9);
        assert_eq!(cfg.sampler.n_iter, SamplerConfig::default().n_iter);
        assert_eq!(cfg.data_path(), PathBuf::from("/a/b/data.csv"));
    }

    #[test]
    fn prior_alpha_defaults_to_ones() {
        let p = PriorSection::default().for_k(3).unwrap();
        assert_eq!(p.alpha_dir, vec![1.0; 3]);
        let bad = PriorSection {
            alpha_dir: Some(vec![1.0]),
            ..PriorSection::default()
        };
        assert!(bad.for_k(2).is_err());
    }
}
