//! Runs a variant suite and writes the per-run results, aggregate table,
//! metadata, training logs and checkpoints.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::experiment::{run_experiment, ExperimentResult, RunSeeds};
use crate::io::write_atomic;
use crate::metrics::{AggregateScores, MetricScores, Summary};
use crate::trainer::Variant;

pub const RESULTS_FILE: &str = "results.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const TABLE_FILE: &str = "table.md";
pub const METADATA_FILE: &str = "metadata.txt";

#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub experiments: Vec<ExperimentResult>,
    pub output_dir: PathBuf,
}

impl SuiteReport {
    /// Variants for which every run failed.
    pub fn failed_variants(&self) -> Vec<Variant> {
        self.experiments
            .iter()
            .filter(|e| e.runs.is_empty())
            .map(|e| e.variant)
            .collect()
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// `variant,run,domain,accuracy,kappa,auroc`; `auroc` is empty when undefined.
pub fn results_csv(experiments: &[ExperimentResult]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["variant", "run", "domain", "accuracy", "kappa", "auroc"])?;
    let mut row = |v: Variant, run: usize, domain: &str, s: &MetricScores| {
        w.write_record([
            v.name().to_string(),
            run.to_string(),
            domain.to_string(),
            s.accuracy.to_string(),
            s.kappa.to_string(),
            opt(s.auroc),
        ])
    };
    for e in experiments {
        for r in &e.runs {
            row(e.variant, r.run, "target", &r.target)?;
            if let Some(s) = &r.source {
                row(e.variant, r.run, "source", s)?;
            }
        }
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

/// `variant,domain,metric,mean,std,count,failed_runs`.
pub fn summary_csv(experiments: &[ExperimentResult]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["variant", "domain", "metric", "mean", "std", "count", "failed_runs"])?;
    for e in experiments {
        for (domain, agg) in [("target", &e.target), ("source", &e.source)] {
            let Some(agg) = agg else { continue };
            for (metric, s) in [
                ("accuracy", Some(agg.accuracy)),
                ("kappa", Some(agg.kappa)),
                ("auroc", agg.auroc),
            ] {
                let Some(s) = s else { continue };
                w.write_record([
                    e.variant.name().to_string(),
                    domain.to_string(),
                    metric.to_string(),
                    s.mean.to_string(),
                    s.std.to_string(),
                    s.count.to_string(),
                    e.failures.len().to_string(),
                ])?;
            }
        }
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

fn cells(agg: Option<&AggregateScores>) -> [String; 3] {
    let f = |s: Option<Summary>| s.map(|s| s.format()).unwrap_or_else(|| "n/a".into());
    match agg {
        Some(a) => [f(Some(a.accuracy)), f(Some(a.kappa)), f(a.auroc)],
        None => ["n/a".into(), "n/a".into(), "n/a".into()],
    }
}

/// Markdown table, one row per variant, scores as `mean [std]` in percent.
pub fn results_table(experiments: &[ExperimentResult]) -> String {
    let header = [
        "Method",
        "Target accuracy",
        "Target kappa",
        "Target AUROC",
        "Source accuracy",
        "Source kappa",
        "Source AUROC",
    ];
    let mut rows: Vec<Vec<String>> = vec![header.iter().map(|s| s.to_string()).collect()];
    for e in experiments {
        let mut row = vec![e.variant.name().to_string()];
        row.extend(cells(e.target.as_ref()));
        row.extend(cells(e.source.as_ref()));
        rows.push(row);
    }
    let widths: Vec<usize> = (0..header.len())
        .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0))
        .collect();
    let line = |r: &[String]| {
        let padded: Vec<String> = r
            .iter()
            .zip(&widths)
            .map(|(s, &w)| format!("{s:<w$}"))
            .collect();
        format!("| {} |\n", padded.join(" | "))
    };
    let mut out = line(&rows[0]);
    let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
    out.push_str(&format!("|-{}-|\n", rule.join("-|-")));
    for r in &rows[1..] {
        out.push_str(&line(r));
    }
    out
}

pub fn metadata(cfg: &ExperimentConfig, experiments: &[ExperimentResult]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# configuration");
    s.push_str(&cfg.emit());
    let _ = writeln!(s, "\n# fixed choices");
    let _ = writeln!(s, "weight_decay_groups = encoder, classifier");
    let _ = writeln!(s, "batch_size = {}", crate::data::BATCH_SIZE);
    let _ = writeln!(s, "cls_reduction = mean over random part");
    let _ = writeln!(s, "latent_reduction = mean over random part");
    let _ = writeln!(s, "cen_reduction = sum over per-class target samples");
    let _ = writeln!(
        s,
        "validation_quantity = total loss for L2I, Fixed, NoMargin; classification loss otherwise"
    );
    let _ = writeln!(s, "\n# run seeds");
    for run in 0..cfg.n_runs {
        let RunSeeds {
            data,
            model,
            sampler,
        } = RunSeeds::derive(cfg.master_seed, run);
        let _ = writeln!(s, "run.{run} = data {data}, model {model}, sampler {sampler}");
    }
    let _ = writeln!(s, "\n# runs");
    for e in experiments {
        for r in &e.runs {
            let _ = writeln!(
                s,
                "{}.{} = best_step {}, steps_run {}, stopped_early {}",
                e.variant, r.run, r.log.best_step, r.log.steps_run, r.log.stopped_early
            );
        }
        for f in &e.failures {
            let _ = writeln!(s, "{}.{} = failed: {}", e.variant, f.run, f.error);
        }
    }
    s
}

/// Runs every configured variant and writes all outputs under `output_dir`.
pub fn run_suite(cfg: &ExperimentConfig) -> Result<SuiteReport> {
    cfg.validate()?;
    let dir = cfg.output_dir.clone();
    let mut experiments = Vec::new();
    for &variant in &cfg.variants {
        log::info!("running {variant} ({} runs)", cfg.n_runs);
        experiments.push(run_experiment(cfg, variant, cfg.n_runs)?);
    }
    write_suite(&dir, cfg, &experiments)?;
    Ok(SuiteReport {
        experiments,
        output_dir: dir,
    })
}

pub fn write_suite(dir: &Path, cfg: &ExperimentConfig, experiments: &[ExperimentResult]) -> Result<()> {
    std::fs::create_dir_all(dir.join("logs"))?;
    std::fs::create_dir_all(dir.join("checkpoints"))?;
    write_atomic(&dir.join(RESULTS_FILE), &results_csv(experiments)?)?;
    write_atomic(&dir.join(SUMMARY_FILE), &summary_csv(experiments)?)?;
    write_atomic(&dir.join(TABLE_FILE), results_table(experiments).as_bytes())?;
    write_atomic(&dir.join(METADATA_FILE), metadata(cfg, experiments).as_bytes())?;
    for e in experiments {
        for r in &e.runs {
            let stem = format!("{}_run{}", e.variant.name().to_ascii_lowercase(), r.run);
            write_atomic(
                &dir.join("logs").join(format!("{stem}_train.csv")),
                &r.log.losses_csv()?,
            )?;
            write_atomic(
                &dir.join("logs").join(format!("{stem}_val.csv")),
                &r.log.validation_csv()?,
            )?;
            r.model.save(&dir.join("checkpoints").join(format!("{stem}.json")))?;
        }
    }
    Ok(())
}
