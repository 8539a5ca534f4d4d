//! Experiment configuration: a TOML file with `[experiment]`, `[tt]` and
//! `[target_params]` sections, schema-validated with field-level messages.

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub tt: TtSection,
    #[serde(default)]
    pub target_params: TargetParams,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    /// shock | rosenbrock | diffusion | custom.
    pub target: String,
    /// Base seed; per-repetition streams are derived from it.
    #[serde(default)]
    pub seed: u64,
    /// Number of independent repetitions (fresh cross RNG each).
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    pub output_dir: String,
    /// Estimators to run on the per-repetition surrogate.
    #[serde(default = "default_methods")]
    pub methods: Vec<String>,
    /// Chain length / sample count N.
    #[serde(default = "default_n_samples")]
    pub n_samples: usize,
    /// Coarse-level size for two-level methods; defaults to `n_samples`.
    #[serde(default)]
    pub n_coarse: usize,
    /// Fine-level size for two-level methods; defaults to `n_samples / 4`.
    #[serde(default)]
    pub n_fine: usize,
    /// Compute the empirical TT spread across repetitions (needs R >= 2).
    #[serde(default)]
    pub track_tt_error: bool,
}

fn default_repetitions() -> usize {
    1
}

fn default_methods() -> Vec<String> {
    vec!["tt-mh".into()]
}

fn default_n_samples() -> usize {
    1 << 14
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TtSection {
    /// Grid nodes per dimension; a single entry broadcasts, an empty list
    /// selects the target's reference grid sizes.
    #[serde(default)]
    pub grid_n: Vec<usize>,
    /// Cross stopping tolerance.
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// Rank enrichment per half-sweep.
    #[serde(default = "default_enrichment")]
    pub enrichment: usize,
    #[serde(default = "default_init_rank")]
    pub init_rank: usize,
    /// 0 disables the cap.
    #[serde(default)]
    pub max_rank: usize,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    /// 0 disables the cap.
    #[serde(default)]
    pub eval_budget: u64,
}

fn default_delta() -> f64 {
    1e-3
}

fn default_enrichment() -> usize {
    8
}

fn default_init_rank() -> usize {
    8
}

fn default_max_iters() -> usize {
    20
}

impl Default for TtSection {
    fn default() -> Self {
        Self {
            grid_n: Vec::new(),
            delta: default_delta(),
            enrichment: default_enrichment(),
            init_rank: default_init_rank(),
            max_rank: 0,
            max_iters: default_max_iters(),
            eval_budget: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetParams {
    /// Covariate count for the shock-absorber posterior.
    #[serde(default = "default_covariates")]
    pub covariates: usize,
    #[serde(default = "default_covariate_seed")]
    pub covariate_seed: u64,
    /// Dimension for rosenbrock / diffusion.
    #[serde(default = "default_dim")]
    pub dim: usize,
    /// Diffusion mesh exponent, `h = 2^-mesh_exp`.
    #[serde(default = "default_mesh_exp")]
    pub mesh_exp: u32,
    #[serde(default = "default_nu")]
    pub nu: f64,
    #[serde(default = "default_sigma_n2")]
    pub sigma_n2: f64,
    #[serde(default = "default_theta0")]
    pub theta0: f64,
    #[serde(default = "default_m_obs")]
    pub m_obs: usize,
    #[serde(default = "default_noise_seed")]
    pub noise_seed: u64,
}

fn default_covariates() -> usize {
    2
}

fn default_covariate_seed() -> u64 {
    2477
}

fn default_dim() -> usize {
    2
}

fn default_mesh_exp() -> u32 {
    5
}

fn default_nu() -> f64 {
    2.0
}

fn default_sigma_n2() -> f64 {
    0.01
}

fn default_theta0() -> f64 {
    1.5
}

fn default_m_obs() -> usize {
    9
}

fn default_noise_seed() -> u64 {
    0xD1FF
}

impl Default for TargetParams {
    fn default() -> Self {
        toml::from_str("").expect("defaults parse")
    }
}

pub const METHODS: [&str; 6] = ["tt-mh", "tt-riw", "tt-qiw", "tt-mh-2l", "tt-qiw-2l", "dram"];
pub const TARGETS: [&str; 4] = ["shock", "rosenbrock", "diffusion", "custom"];

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let cfg: ExperimentConfig = toml::from_str(&text).context("parsing config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let e = &self.experiment;
        if !TARGETS.contains(&e.target.as_str()) {
            bail!(
                "experiment.target: unknown target '{}' (expected one of {:?})",
                e.target,
                TARGETS
            );
        }
        if e.target == "custom" {
            bail!(
                "experiment.target: 'custom' targets are driven through the library API; \
                 the CLI ships shock | rosenbrock | diffusion"
            );
        }
        if e.repetitions == 0 {
            bail!("experiment.repetitions: must be at least 1");
        }
        if e.methods.is_empty() {
            bail!("experiment.methods: at least one estimator required");
        }
        for m in &e.methods {
            if !METHODS.contains(&m.as_str()) {
                bail!(
                    "experiment.methods: unknown method '{m}' (expected one of {:?})",
                    METHODS
                );
            }
        }
        if e.n_samples == 0 {
            bail!("experiment.n_samples: must be positive");
        }
        if self.tt.delta <= 0.0 {
            bail!("tt.delta: must be positive");
        }
        if self.tt.max_iters == 0 {
            bail!("tt.max_iters: must be at least 1");
        }
        if self.tt.init_rank == 0 {
            bail!("tt.init_rank: must be at least 1");
        }
        let needs_lattice = e.methods.iter().any(|m| m.starts_with("tt-qiw"));
        if needs_lattice && !e.n_samples.is_power_of_two() {
            bail!("experiment.n_samples: lattice methods need a power of 2");
        }
        match e.target.as_str() {
            "rosenbrock" => {
                if self.target_params.dim < 2 {
                    bail!("target_params.dim: rosenbrock needs dim >= 2");
                }
            }
            "diffusion" => {
                let side = (self.target_params.m_obs as f64).sqrt().round() as usize;
                if side * side != self.target_params.m_obs {
                    bail!("target_params.m_obs: must be a perfect square");
                }
                if !(3..=8).contains(&self.target_params.mesh_exp) {
                    bail!("target_params.mesh_exp: supported range is 3..=8");
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Dimension of the configured target.
    pub fn dim(&self) -> usize {
        match self.experiment.target.as_str() {
            "shock" => self.target_params.covariates + 2,
            "rosenbrock" | "diffusion" => self.target_params.dim,
            _ => 0,
        }
    }

    /// Two-level sizes with the documented defaults filled in.
    pub fn two_level_sizes(&self) -> (usize, usize) {
        let n0 = if self.experiment.n_coarse > 0 {
            self.experiment.n_coarse
        } else {
            self.experiment.n_samples
        };
        let n1 = if self.experiment.n_fine > 0 {
            self.experiment.n_fine
        } else {
            (self.experiment.n_samples / 4).max(64)
        };
        (n0, n1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_parses() {
        let cfg: ExperimentConfig = toml::from_str(
            r#"
            [experiment]
            target = "rosenbrock"
            output_dir = "out"
            "#,
        )
        .unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.experiment.methods, vec!["tt-mh"]);
        assert_eq!(cfg.dim(), 2);
    }

    #[test]
    fn validation_names_offending_fields() {
        let cfg: ExperimentConfig = toml::from_str(
            r#"
            [experiment]
            target = "rosenbrock"
            output_dir = "out"
            methods = ["tt-zzz"]
            "#,
        )
        .unwrap();
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("experiment.methods"), "{err}");

        let cfg: ExperimentConfig = toml::from_str(
            r#"
            [experiment]
            target = "marmot"
            output_dir = "out"
            "#,
        )
        .unwrap();
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("experiment.target"), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let res: Result<ExperimentConfig, _> = toml::from_str(
            r#"
            [experiment]
            target = "rosenbrock"
            output_dir = "out"
            bogus_key = 1
            "#,
        );
        assert!(res.is_err());
    }
}
