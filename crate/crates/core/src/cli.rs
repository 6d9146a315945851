//! Command-line front end.
//!
//! Settings resolve as: command-line flag, then config file, then built-in
//! default.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::coco;
use crate::error::{Error, Result};
use crate::metrics::{self, DEFAULT_CORLOC_IOU};
use crate::noise::{compose_corruptions, BoxNoiseSpec, CorruptionRecord, LabelNoiseSpec};
use crate::pipeline::{self, PipelineConfig, RunInputs, RunReport};
use crate::synth::{self, SynthConfig};

#[derive(Debug, Parser)]
#[command(
    name = "detnoise",
    version,
    about = "Inject and refine noise in detection annotations"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Corrupt labels and/or boxes of a clean dataset.
    Corrupt(CorruptArgs),
    /// Run the refinement pipeline on a noisy dataset.
    Refine(Box<RefineArgs>),
    /// Compare a dataset against clean annotations.
    Evaluate(EvaluateArgs),
    /// Tabulate one or more run reports.
    Report(ReportArgs),
    /// Write a seeded synthetic clean dataset.
    Synth(SynthArgs),
}

#[derive(Debug, clap::Args)]
pub struct CorruptArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Where to write the corruption record.
    #[arg(long)]
    pub record: PathBuf,
    /// `symmetric:<rate>` or `pair:<rate>`.
    #[arg(long)]
    pub label_noise: Option<LabelNoiseSpec>,
    /// `uniform:<n_bbox>` or `gaussian:<sigma>`.
    #[arg(long)]
    pub box_noise: Option<BoxNoiseSpec>,
    #[arg(long)]
    pub seed: u64,
}

#[derive(Debug, clap::Args)]
pub struct RefineArgs {
    #[arg(long)]
    pub noisy: PathBuf,
    /// Enables evaluation metrics in the report.
    #[arg(long)]
    pub clean: Option<PathBuf>,
    #[arg(long)]
    pub record: Option<PathBuf>,
    /// TOML file with pipeline settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub outcomes_csv: Option<PathBuf>,
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub warm_up_epochs: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub acceptance_rate: Option<f64>,
    #[arg(long)]
    pub queue_length: Option<usize>,
    #[arg(long)]
    pub t_cm: Option<f64>,
    #[arg(long)]
    pub t_refine: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    /// perfect, high_fidelity or uninformative; replaces any file schedule.
    #[arg(long)]
    pub oracle_preset: Option<String>,
    #[arg(long)]
    pub refine_boxes_during_warmup: Option<bool>,
}

#[derive(Debug, clap::Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub refined: PathBuf,
    #[arg(long)]
    pub clean: PathBuf,
    #[arg(long)]
    pub record: Option<PathBuf>,
    /// Defaults to standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_CORLOC_IOU)]
    pub iou_threshold: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    Text,
    Csv,
}

#[derive(Debug, clap::Args)]
pub struct ReportArgs {
    /// `report.json` files written by `refine`.
    #[arg(long, num_args = 0..)]
    pub runs: Vec<PathBuf>,
    #[arg(long, value_enum, default_value_t = ReportFormat::Text)]
    pub format: ReportFormat,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1000)]
    pub objects: usize,
    #[arg(long, default_value_t = 20)]
    pub classes: usize,
    #[arg(long)]
    pub seed: u64,
}

pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Corrupt(a) => corrupt(&a),
        Command::Refine(a) => refine(&a),
        Command::Evaluate(a) => evaluate(&a),
        Command::Report(a) => report(&a),
        Command::Synth(a) => {
            let ds = synth::generate(&SynthConfig {
                objects: a.objects,
                classes: a.classes,
                seed: a.seed,
                ..Default::default()
            })?;
            coco::save_dataset(&ds, &a.out)
        }
    }
}

fn write_or_print(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).map_err(|e| Error::io(p, e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn corrupt(a: &CorruptArgs) -> Result<()> {
    let clean = coco::load_dataset(&a.input)?;
    clean.validate()?;
    let (noisy, record) =
        compose_corruptions(&clean, a.label_noise.as_ref(), a.box_noise.as_ref(), a.seed)?;
    noisy.validate()?;
    coco::save_dataset(&noisy, &a.out)?;
    record.save(&a.record)
}

pub fn load_config_file(path: &Path) -> Result<PipelineConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message())))
}

/// Apply the command-line overrides of `a` on top of `base`.
pub fn resolve_config(base: PipelineConfig, a: &RefineArgs) -> PipelineConfig {
    let mut c = base;
    macro_rules! over {
        ($($field:ident),*) => { $( if let Some(v) = a.$field { c.$field = v; } )* };
    }
    over!(
        seed,
        epochs,
        warm_up_epochs,
        alpha,
        queue_length,
        t_cm,
        t_refine,
        gamma,
        refine_boxes_during_warmup
    );
    if let Some(r) = a.acceptance_rate {
        c.acceptance_rate = Some(r);
    }
    if let Some(p) = &a.oracle_preset {
        c.oracle_preset = p.clone();
        c.oracle.clear();
    }
    c
}

fn refine(a: &RefineArgs) -> Result<()> {
    let file = match &a.config {
        Some(p) => Some(load_config_file(p)?),
        None => None,
    };
    let seed_given = a.seed.is_some() || a.config.as_ref().is_some_and(|p| config_sets_seed(p));
    if !seed_given {
        return Err(Error::Config(
            "a seed is required: pass --seed or set `seed` in the config file".into(),
        ));
    }
    let cfg = resolve_config(file.unwrap_or_default(), a);
    if let Some(k) = a.threads {
        if k == 0 {
            return Err(Error::InvalidArgument("--threads must be positive".into()));
        }
        // A pool may already exist when called as a library; results do not
        // depend on its size either way.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global();
    }
    let inputs = RunInputs {
        noisy: a.noisy.clone(),
        clean: a.clean.clone(),
        record: a.record.clone(),
    };
    pipeline::run(&inputs, &a.out_dir, &cfg, a.outcomes_csv.as_deref())?;
    Ok(())
}

fn config_sets_seed(path: &Path) -> bool {
    fs::read_to_string(path)
        .ok()
        .and_then(|t| t.parse::<toml::Table>().ok())
        .is_some_and(|t| t.contains_key("seed"))
}

fn evaluate(a: &EvaluateArgs) -> Result<()> {
    let refined = coco::load_dataset(&a.refined)?;
    let clean = coco::load_dataset(&a.clean)?;
    let record = a.record.as_ref().map(CorruptionRecord::load).transpose()?;
    let eval = metrics::evaluate_dataset(&refined, &clean, record.as_ref(), a.iou_threshold)?;
    let mut text = serde_json::to_string_pretty(&eval)?;
    text.push('\n');
    write_or_print(a.out.as_deref(), &text)
}

fn report(a: &ReportArgs) -> Result<()> {
    if a.runs.is_empty() {
        return Err(Error::InvalidArgument(
            "report needs at least one --runs file".into(),
        ));
    }
    let runs = a
        .runs
        .iter()
        .map(|p| Ok((p.display().to_string(), RunReport::load(p)?)))
        .collect::<Result<Vec<_>>>()?;
    write_or_print(a.out.as_deref(), &render_report(&runs, a.format)?)
}

const ROWS: [&str; 8] = [
    "CorLoc_noisy",
    "CorLoc_cm",
    "CorLoc_final",
    "TP",
    "TN",
    "FP",
    "FN",
    "N*_Label",
];

fn column_values(r: &RunReport) -> [Option<f64>; 8] {
    match r.evaluation.metrics() {
        None => [None; 8],
        Some(m) => [
            Some(m.corloc.corloc_noisy),
            Some(m.corloc.corloc_cm),
            Some(m.corloc.corloc_final),
            m.confusion.tp,
            m.confusion.tn,
            m.confusion.fp,
            m.confusion.fn_,
            Some(m.residual_noise_rate),
        ],
    }
}

fn column_header(name: &str, r: &RunReport) -> String {
    match r.recorded_label_noise_rate {
        Some(rate) => format!("N_Label={:.0}%", rate * 100.0),
        None => name.to_string(),
    }
}

/// One column per run, one row per metric, values in percent.
pub fn render_report(runs: &[(String, RunReport)], format: ReportFormat) -> Result<String> {
    if runs.is_empty() {
        return Err(Error::InvalidArgument("no runs to report".into()));
    }
    let headers: Vec<String> = runs.iter().map(|(n, r)| column_header(n, r)).collect();
    let cols: Vec<[Option<f64>; 8]> = runs.iter().map(|(_, r)| column_values(r)).collect();
    let cell =
        |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |x| format!("{:.2}", x * 100.0));
    let mut out = String::new();
    match format {
        ReportFormat::Csv => {
            out.push_str("metric");
            for h in &headers {
                out.push(',');
                out.push_str(h);
            }
            out.push('\n');
            for (i, row) in ROWS.iter().enumerate() {
                out.push_str(row);
                for c in &cols {
                    out.push(',');
                    out.push_str(&cell(c[i]));
                }
                out.push('\n');
            }
        }
        ReportFormat::Text => {
            let width = headers.iter().map(String::len).max().unwrap_or(0).max(8);
            let _ = write!(out, "{:<14}", "");
            for h in &headers {
                let _ = write!(out, " {h:>width$}");
            }
            out.push('\n');
            for (i, row) in ROWS.iter().enumerate() {
                let _ = write!(out, "{row:<14}");
                for c in &cols {
                    let _ = write!(out, " {:>width$}", cell(c[i]));
                }
                out.push('\n');
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn flags_override_file() {
        let file = PipelineConfig {
            epochs: 5,
            alpha: 0.3,
            seed: 1,
            ..Default::default()
        };
        let cli = Cli::parse_from([
            "detnoise",
            "refine",
            "--noisy",
            "n.json",
            "--out-dir",
            "o",
            "--epochs",
            "3",
            "--alpha",
            "0.4",
            "--acceptance-rate",
            "0.6",
        ]);
        let Command::Refine(a) = cli.command else {
            panic!()
        };
        let c = resolve_config(file, &a);
        assert_eq!((c.epochs, c.alpha, c.acceptance_rate), (3, 0.4, Some(0.6)));
        assert_eq!(c.seed, 1);
    }

    #[test]
    fn bad_noise_spec_is_usage_error() {
        let r = Cli::try_parse_from([
            "detnoise",
            "corrupt",
            "--in",
            "a",
            "--out",
            "b",
            "--record",
            "c",
            "--label-noise",
            "symmetric:1.2",
            "--seed",
            "1",
        ]);
        assert!(r.is_err());
    }

    #[test]
    fn empty_report_is_error() {
        assert!(render_report(&[], ReportFormat::Text).is_err());
    }
}
