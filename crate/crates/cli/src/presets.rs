//! Named experiment studies mirroring the benchmark figures and tables, at
//! desk scale by default; `--scale paper` restores the original sample
//! counts and grids (long runtimes).

use crate::config::ExperimentConfig;
use anyhow::{bail, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scale {
    Desk,
    Paper,
}

pub const PRESETS: [&str; 5] = [
    "rosen-smoke",
    "shock-fig1",
    "shock-table2",
    "rosen-table3",
    "diffusion-fig6",
];

/// A study is a list of named experiment variants; each runs into its own
/// subdirectory of the study directory.
pub fn build(name: &str, scale: Scale, out_root: &str) -> Result<Vec<(String, ExperimentConfig)>> {
    let desk = scale == Scale::Desk;
    let mut variants = Vec::new();
    let base = |target: &str, dir: String| -> ExperimentConfig {
        toml::from_str(&format!(
            r#"
            [experiment]
            target = "{target}"
            output_dir = "{dir}"
            "#
        ))
        .expect("base config parses")
    };
    match name {
        // Small single-run check: Rosenbrock d=2 with TT-MH.
        "rosen-smoke" => {
            let mut cfg = base("rosenbrock", format!("{out_root}/rosen-smoke"));
            cfg.experiment.seed = 41;
            cfg.experiment.n_samples = 1 << 14;
            cfg.experiment.methods = vec!["tt-mh".into()];
            cfg.target_params.dim = 2;
            cfg.tt.delta = 3e-3;
            cfg.tt.init_rank = 16;
            cfg.tt.enrichment = 16;
            cfg.tt.max_iters = 40;
            variants.push(("rosen-smoke".to_string(), cfg));
        }
        // Rejection rate, IACT and error indicators against the grid size
        // and against the cross tolerance (shock absorber, D = 2).
        "shock-fig1" => {
            let (reps, n_samples) = if desk { (4, 1 << 14) } else { (32, 1 << 20) };
            let grids: &[usize] = if desk {
                &[16, 32, 64]
            } else {
                &[16, 32, 64, 128, 256, 512]
            };
            for &g in grids {
                let mut cfg = base("shock", format!("{out_root}/n{g}"));
                cfg.experiment.seed = 17;
                cfg.experiment.repetitions = reps;
                cfg.experiment.n_samples = n_samples;
                cfg.experiment.methods = vec!["tt-mh".into()];
                cfg.experiment.track_tt_error = true;
                cfg.target_params.covariates = 2;
                cfg.tt.grid_n = vec![g];
                cfg.tt.delta = 1e-5;
                cfg.tt.init_rank = 16;
                cfg.tt.enrichment = 8;
                variants.push((format!("n{g}"), cfg));
            }
            let deltas: &[f64] = if desk {
                &[0.5, 0.05, 0.005]
            } else {
                &[0.5, 0.1, 0.03, 0.01, 3e-3, 1e-3, 3e-4, 1e-4, 3e-5, 1e-5]
            };
            let fixed_grid = if desk { 64 } else { 512 };
            for &delta in deltas {
                let tag = format!("delta{delta:e}");
                let mut cfg = base("shock", format!("{out_root}/{tag}"));
                cfg.experiment.seed = 19;
                cfg.experiment.repetitions = reps;
                cfg.experiment.n_samples = n_samples;
                cfg.experiment.methods = vec!["tt-mh".into()];
                cfg.experiment.track_tt_error = true;
                cfg.target_params.covariates = 2;
                cfg.tt.grid_n = vec![fixed_grid];
                cfg.tt.delta = delta;
                cfg.tt.init_rank = 16;
                cfg.tt.enrichment = 8;
                variants.push((tag, cfg));
            }
        }
        // TT-MH vs the adaptive-Metropolis baseline at D = 6 for coarse
        // grids and tolerances.
        "shock-table2" => {
            let (reps, n_samples) = if desk { (2, 1 << 15) } else { (8, 1 << 20) };
            for (g, delta) in [(12usize, 0.5f64), (16, 0.5), (16, 0.05), (32, 0.05)] {
                let tag = format!("n{g}-delta{delta}");
                let mut cfg = base("shock", format!("{out_root}/{tag}"));
                cfg.experiment.seed = 23;
                cfg.experiment.repetitions = reps;
                cfg.experiment.n_samples = n_samples;
                cfg.experiment.methods = vec!["tt-mh".into(), "dram".into()];
                cfg.target_params.covariates = 6;
                cfg.tt.grid_n = vec![g];
                cfg.tt.delta = delta;
                cfg.tt.init_rank = 16;
                cfg.tt.enrichment = 12;
                cfg.tt.max_iters = 60;
                variants.push((tag, cfg));
            }
        }
        // IACT of TT-MH and the baseline across dimensions.
        "rosen-table3" => {
            let dims: &[usize] = if desk { &[2, 8] } else { &[2, 4, 8, 16, 32] };
            let n_samples = if desk { 1 << 15 } else { 1 << 20 };
            for &d in dims {
                let tag = format!("d{d}");
                let mut cfg = base("rosenbrock", format!("{out_root}/{tag}"));
                cfg.experiment.seed = 41;
                cfg.experiment.n_samples = n_samples;
                cfg.experiment.methods = vec!["tt-mh".into(), "dram".into()];
                cfg.target_params.dim = d;
                cfg.tt.delta = 3e-3;
                cfg.tt.init_rank = 16;
                cfg.tt.enrichment = 16;
                cfg.tt.max_iters = 40;
                variants.push((tag, cfg));
            }
        }
        // Flux estimates of the inverse diffusion problem against the
        // sample count, for the TT estimators.
        "diffusion-fig6" => {
            let (reps, mesh_exp, dim) = if desk { (4, 5u32, 5usize) } else { (16, 6, 11) };
            let powers: &[u32] = if desk { &[9, 10, 11, 12] } else { &[9, 11, 13, 15, 17] };
            for &p in powers {
                let tag = format!("N2e{p}");
                let mut cfg = base("diffusion", format!("{out_root}/{tag}"));
                cfg.experiment.seed = 53;
                cfg.experiment.repetitions = reps;
                cfg.experiment.n_samples = 1usize << p;
                cfg.experiment.methods =
                    vec!["tt-mh".into(), "tt-riw".into(), "tt-qiw".into()];
                cfg.target_params.dim = dim;
                cfg.target_params.mesh_exp = mesh_exp;
                cfg.tt.grid_n = vec![32];
                cfg.tt.delta = if desk { 0.03 } else { 0.1 };
                cfg.tt.init_rank = 8;
                cfg.tt.enrichment = 6;
                cfg.tt.max_iters = 10;
                variants.push((tag, cfg));
            }
        }
        other => bail!(
            "unknown preset '{other}' (available: {:?})",
            PRESETS
        ),
    }
    Ok(variants)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_presets_build_and_validate() {
        for name in PRESETS {
            for scale in [Scale::Desk, Scale::Paper] {
                let variants = build(name, scale, "out").unwrap();
                assert!(!variants.is_empty(), "{name}");
                for (_, cfg) in variants {
                    cfg.validate().unwrap();
                }
            }
        }
    }

    #[test]
    fn unknown_preset_is_rejected() {
        assert!(build("nope", Scale::Desk, "out").is_err());
    }
}
