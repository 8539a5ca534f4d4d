//! Turns a study directory (variant subdirectories with `runs.jsonl` and
//! `timings.jsonl`) into plain x/y series for error-vs-N and error-vs-time
//! plots. Plotting itself is external.

use crate::runner::{RepTimings, RunRecord};
use anyhow::{bail, Context, Result};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

struct Variant {
    name: String,
    records: Vec<RunRecord>,
    timings: Vec<RepTimings>,
}

fn load_variants(study_dir: &Path) -> Result<Vec<Variant>> {
    let mut variants = Vec::new();
    let mut entries: Vec<_> = std::fs::read_dir(study_dir)
        .with_context(|| format!("reading {}", study_dir.display()))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir() && p.join("runs.jsonl").exists())
        .collect();
    entries.sort();
    for dir in entries {
        let runs = std::fs::read_to_string(dir.join("runs.jsonl"))?;
        let records = runs
            .lines()
            .map(serde_json::from_str::<RunRecord>)
            .collect::<Result<Vec<_>, _>>()?;
        let timings = match std::fs::read_to_string(dir.join("timings.jsonl")) {
            Ok(text) => text
                .lines()
                .map(serde_json::from_str::<RepTimings>)
                .collect::<Result<Vec<_>, _>>()?,
            Err(_) => Vec::new(),
        };
        variants.push(Variant {
            name: dir
                .file_name()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default(),
            records,
            timings,
        });
    }
    if variants.is_empty() {
        bail!(
            "no variant subdirectories with runs.jsonl under {}",
            study_dir.display()
        );
    }
    Ok(variants)
}

/// Emits `plot_error_vs_n.csv` and `plot_error_vs_time.csv` in the study
/// directory. The error of a variant/method/QoI is the relative deviation
/// from the study-wide reference (the mean over the largest-N records of
/// that QoI); with repeated runs the spread `e_q` is used instead when
/// available.
pub fn emit(study_dir: &Path) -> Result<()> {
    let variants = load_variants(study_dir)?;

    // Reference per QoI: mean estimate over the records with the largest N.
    let max_n = variants
        .iter()
        .flat_map(|v| v.records.iter().map(|r| r.n_samples))
        .max()
        .unwrap_or(0);
    let mut reference: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for v in &variants {
        for r in v.records.iter().filter(|r| r.n_samples == max_n) {
            for (qoi, est) in &r.estimates {
                let e = reference.entry(qoi.clone()).or_insert((0.0, 0));
                e.0 += est;
                e.1 += 1;
            }
        }
    }

    let mut by_n = std::fs::File::create(study_dir.join("plot_error_vs_n.csv"))?;
    writeln!(by_n, "variant,method,qoi,n_samples,rel_error")?;
    let mut by_time = std::fs::File::create(study_dir.join("plot_error_vs_time.csv"))?;
    writeln!(by_time, "variant,method,qoi,total_seconds,rel_error")?;
    for v in &variants {
        let wall: f64 = v.timings.iter().map(|t| t.wall_s).sum();
        // method -> qoi -> per-rep estimates
        let mut series: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
        let mut n_for: BTreeMap<String, usize> = BTreeMap::new();
        for r in &v.records {
            n_for.insert(r.method.clone(), r.n_samples);
            for (qoi, est) in &r.estimates {
                series
                    .entry((r.method.clone(), qoi.clone()))
                    .or_default()
                    .push(*est);
            }
        }
        for ((method, qoi), ests) in series {
            let Some(&(sum, count)) = reference.get(&qoi).as_deref() else {
                continue;
            };
            let refv = sum / count as f64;
            if refv.abs() == 0.0 {
                continue;
            }
            let mean = ests.iter().sum::<f64>() / ests.len() as f64;
            let rel_error = if ests.len() >= 2 {
                ests.iter().map(|e| (e - mean).abs()).sum::<f64>()
                    / ests.len() as f64
                    / refv.abs()
            } else {
                (mean - refv).abs() / refv.abs()
            };
            let n = n_for.get(&method).copied().unwrap_or(0);
            writeln!(by_n, "{},{},{},{},{}", v.name, method, qoi, n, rel_error)?;
            writeln!(
                by_time,
                "{},{},{},{},{}",
                v.name, method, qoi, wall, rel_error
            )?;
        }
    }
    Ok(())
}
