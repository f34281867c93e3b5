//! The operations behind each CLI subcommand. Output meant for the terminal
//! goes to the supplied writer; artifacts go to the output directory.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::adapter::{count_tunable_params, ParamReport};
use crate::error::{Error, Result};
use crate::experiment::checkpoint::{load_checkpoint, save_params, LoadScope};
use crate::experiment::config::ExperimentConfig;
use crate::experiment::gradcheck::{gradcheck, tiny_config, GradcheckReport};
use crate::experiment::records::{sweep_table, write_records, Record, SweepRow};
use crate::experiment::run::run_experiment;
use crate::experiment::sweep::{run_sweep, SweepKind};
use crate::tensor::{Fault, Scalar};
use crate::train::{evaluate, Metrics, MetricsReport};
use crate::vit::{ModelConfig, VideoModel};

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const LOG_FILE: &str = "metrics.jsonl";
pub const PARAMS_FILE: &str = "params.json";
pub const REPORT_FILE: &str = "report.json";

/// Command-line settings that take precedence over the config file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    /// Train and evaluate in `f64`.
    pub f64: bool,
    /// Worker threads for sweep cells; 0 or 1 runs them one after another.
    pub parallel: usize,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(s) = self.seed {
            cfg.train.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.output_dir = o.clone();
        }
    }
}

pub fn load_config(path: &Path, ov: &Overrides) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::from_file(path)?;
    ov.apply(&mut cfg);
    Ok(cfg)
}

fn emit(out: &mut dyn Write, line: &str) -> Result<()> {
    writeln!(out, "{line}").map_err(|e| Error::io("<stdout>", e))
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainArtifacts {
    pub checkpoint: PathBuf,
    pub log: PathBuf,
    pub params: PathBuf,
    pub report: MetricsReport,
}

fn train_with<T: Scalar>(cfg: &ExperimentConfig, out: &mut dyn Write) -> Result<TrainArtifacts> {
    let dir = &cfg.output_dir;
    ensure_dir(dir)?;
    let mut records = Vec::new();
    let mut write_err = None;
    let run = run_experiment::<T>(cfg, &mut |r| {
        let rec = Record::Epoch(r.clone());
        if let Err(e) = emit(out, &rec.to_line()) {
            write_err.get_or_insert(e);
        }
        records.push(rec);
    })?;
    if let Some(e) = write_err {
        return Err(e);
    }
    let report = run.outcome.report;
    let paths = TrainArtifacts {
        checkpoint: dir.join(CHECKPOINT_FILE),
        log: dir.join(LOG_FILE),
        params: dir.join(PARAMS_FILE),
        report: report.clone(),
    };
    save_params(&run.outcome.best, &cfg.to_text(), &paths.checkpoint)?;
    write_file(&paths.log, write_records(&records).as_bytes())?;
    let params_json = serde_json::to_string_pretty(&report.params).expect("serializable");
    write_file(&paths.params, params_json.as_bytes())?;
    let report_json = serde_json::to_string_pretty(&report).expect("serializable");
    write_file(&dir.join(REPORT_FILE), report_json.as_bytes())?;
    emit(
        out,
        &format!(
            "best epoch {}: UAR {:.4} WAR {:.4}, {} of {} parameters trained",
            report.best_epoch, report.metrics.uar, report.metrics.war, report.params.trainable, report.params.total
        ),
    )?;
    Ok(paths)
}

/// Trains one configuration and writes the best checkpoint, the epoch log
/// and the parameter report into the output directory.
pub fn cmd_train(config: &Path, ov: &Overrides, out: &mut dyn Write) -> Result<TrainArtifacts> {
    let cfg = load_config(config, ov)?;
    if ov.f64 {
        train_with::<f64>(&cfg, out)
    } else {
        train_with::<f32>(&cfg, out)
    }
}

pub fn cmd_sweep(kind: &str, config: &Path, ov: &Overrides, out: &mut dyn Write) -> Result<Vec<SweepRow>> {
    let kind: SweepKind = kind.parse()?;
    let cfg = load_config(config, ov)?;
    let rows = if ov.f64 {
        run_sweep::<f64>(kind, &cfg, ov.parallel)?
    } else {
        run_sweep::<f32>(kind, &cfg, ov.parallel)?
    };
    ensure_dir(&cfg.output_dir)?;
    let records: Vec<Record> = rows.iter().cloned().map(Record::Sweep).collect();
    let path = cfg.output_dir.join(format!("sweep_{kind}.jsonl"));
    write_file(&path, write_records(&records).as_bytes())?;
    emit(out, &format!("{kind} sweep ({} cells)", rows.len()))?;
    emit(out, sweep_table(&rows).trim_end())?;
    emit(out, &format!("rows written to {}", path.display()))?;
    Ok(rows)
}

fn group_commas(n: usize) -> String {
    let s = n.to_string();
    let mut out = String::new();
    for (i, c) in s.chars().enumerate() {
        if i > 0 && (s.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(c);
    }
    out
}

pub fn format_param_report(r: &ParamReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "mode: {}", r.mode);
    let _ = writeln!(s, "{:<26} {:>14} {:>14}", "group", "trainable", "total");
    for g in &r.groups {
        let _ = writeln!(
            s,
            "{:<26} {:>14} {:>14}",
            g.group,
            group_commas(g.trainable),
            group_commas(g.total)
        );
    }
    let _ = writeln!(
        s,
        "{:<26} {:>14} {:>14}",
        "total",
        group_commas(r.trainable),
        group_commas(r.total)
    );
    let _ = writeln!(s, "tunable ratio: {:.2}%", 100.0 * r.ratio);
    s
}

/// Parameter report for a configuration, pretty or as JSON.
pub fn cmd_count_params(cfg: &ExperimentConfig, json: bool) -> Result<(ParamReport, String)> {
    let report = count_tunable_params(&cfg.model, cfg.mode)?;
    let text = if json {
        serde_json::to_string_pretty(&report).expect("serializable")
    } else {
        format_param_report(&report)
    };
    Ok((report, text))
}

pub fn format_gradcheck(r: &GradcheckReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<26} {:>8} {:>12} {:>12}  result", "group", "params", "max rel", "max abs");
    for g in &r.groups {
        let _ = writeln!(
            s,
            "{:<26} {:>8} {:>12.3e} {:>12.3e}  {}",
            g.group,
            g.params,
            g.max_rel_err,
            g.max_abs_err,
            if g.passed { "pass" } else { "FAIL" }
        );
    }
    for (i, d) in r.dilation_rates.iter().enumerate() {
        let _ = writeln!(s, "dilation rates, adapter {}: {:.4} {:.4} {:.4}", i + 1, d[0], d[1], d[2]);
    }
    let _ = writeln!(
        s,
        "tolerance {:e}: {}",
        r.tolerance,
        if r.passed { "pass".to_string() } else { format!("FAIL ({})", r.failing().join(", ")) }
    );
    s
}

/// Gradient check in `f64` on `model` (the small default when `None`).
pub fn cmd_gradcheck(
    model: Option<&ModelConfig>,
    seed: u64,
    tolerance: f64,
    fault: Option<Fault>,
    out: &mut dyn Write,
) -> Result<GradcheckReport> {
    let cfg = model.cloned().unwrap_or_else(tiny_config);
    let report = gradcheck(&cfg, seed, tolerance, fault)?;
    emit(out, format_gradcheck(&report).trim_end())?;
    Ok(report)
}

fn eval_with<T: Scalar>(cfg: &ExperimentConfig, checkpoint: &Path) -> Result<Metrics> {
    let ckpt = load_checkpoint(checkpoint)?;
    let mut model = VideoModel::<T>::new(cfg.model.clone(), cfg.train.seed)?;
    ckpt.apply(&mut model, LoadScope::All)?;
    let spec = cfg.eval_data().unwrap_or_else(|| cfg.train_data());
    let data = spec.generate(cfg.train.seed)?;
    evaluate(&model, &data)
}

/// Evaluates a checkpoint. Without a config file, the configuration echoed
/// inside the checkpoint is used.
pub fn cmd_eval(config: Option<&Path>, checkpoint: &Path, ov: &Overrides, out: &mut dyn Write) -> Result<Metrics> {
    let mut cfg = match config {
        Some(p) => ExperimentConfig::from_file(p)?,
        None => ExperimentConfig::parse(&load_checkpoint(checkpoint)?.header.config)?,
    };
    ov.apply(&mut cfg);
    let m = if ov.f64 {
        eval_with::<f64>(&cfg, checkpoint)?
    } else {
        eval_with::<f32>(&cfg, checkpoint)?
    };
    emit(out, &serde_json::to_string(&m).expect("serializable"))?;
    emit(out, &format!("UAR {:.4} WAR {:.4} on {} clips", m.uar, m.war, m.samples))?;
    Ok(m)
}
