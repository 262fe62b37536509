//! `idmlab`: generate synthetic arm episodes, train truncation-robust
//! inverse dynamics models, and evaluate them across ablations and mask
//! degradation severities.
//!
//! Exit codes: 0 success, 2 config error, 3 data error, 4 numeric failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use idmlab::config::{load_config, LabConfig};
use idmlab::dataset::{generate_dataset, load_dataset_config, load_split, save_dataset};
use idmlab::error::{Error, Result};
use idmlab::evalbench::{
    emit_mask_study, emit_report, mask_quality_study, run_benchmark, BenchVariant, DataSplit,
    ReportFormat, SplitRule, ThresholdSpec,
};
use idmlab::pipeline::{load_model, save_model, train, AblationFlags};

#[derive(Parser)]
#[command(name = "idmlab", version, about = "Synthetic truncation benchmark for inverse dynamics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic episode dataset with a train/eval index.
    Generate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        episodes: usize,
        #[arg(long)]
        seed: u64,
    },
    /// Train a model on the train split of a dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a trained model on the eval split and emit a report.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[arg(long, default_value = "csv")]
        format: String,
    },
    /// Train and evaluate ablation variants from one shared config and seed.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "full,no_dfa,no_tdr,no_mask,no_refine")]
        variants: String,
        #[arg(long)]
        report: PathBuf,
    },
    /// Compare clean and degraded-mask evaluation at several severities.
    MaskStudy {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "0.0,0.25,0.5,1.0")]
        severities: String,
        #[arg(long)]
        report: PathBuf,
    },
}

fn merged_config(data_dir: &PathBuf, config_path: &PathBuf) -> Result<LabConfig> {
    // The dataset's world settings are authoritative; the train config file
    // supplies pipeline settings.
    let data_config = load_dataset_config(data_dir)?;
    let run_config = load_config(config_path)?;
    let merged = LabConfig {
        world: data_config.world,
        dataset: data_config.dataset,
        pipeline: run_config.pipeline,
    };
    merged.validate()?;
    Ok(merged)
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Generate { config, out, episodes, seed } => {
            let lab = load_config(&config)?;
            let records = generate_dataset(&lab, episodes, seed)?;
            save_dataset(&records, &lab, &out)?;
            let trains = records.iter().filter(|(_, s)| *s == DataSplit::Train).count();
            println!(
                "generated {} episodes ({} train, {} eval) in {}",
                records.len(),
                trains,
                records.len() - trains,
                out.display()
            );
        }
        Command::Train { data, config, out } => {
            let lab = merged_config(&data, &config)?;
            let episodes = load_split(&data, &lab, DataSplit::Train)?;
            let (params, report) = train(&episodes, &lab.pipeline)?;
            save_model(&params, &out)?;
            let curve_path = out.join("training.json");
            let json = serde_json::to_string_pretty(&report.loss_curve)
                .map_err(|e| Error::Data(format!("loss curve encode: {e}")))?;
            std::fs::write(&curve_path, json).map_err(|e| Error::io(&curve_path, e))?;
            println!(
                "trained on {} episodes; loss {:.4} -> {:.4}; model in {}",
                episodes.len(),
                report.loss_curve.first().copied().unwrap_or(f64::NAN),
                report.loss_curve.last().copied().unwrap_or(f64::NAN),
                out.display()
            );
        }
        Command::Eval { model, data, report, format } => {
            let params = load_model(&model)?;
            let lab = load_dataset_config(&data)?;
            let episodes = load_split(&data, &lab, DataSplit::Eval)?;
            let variant = BenchVariant { name: variant_name(&params.config.ablation), params };
            let reports =
                run_benchmark(&[variant], &episodes, &ThresholdSpec::default(), &SplitRule::default())?;
            emit_report(&reports, &report, ReportFormat::parse(&format)?)?;
            let r = &reports[0];
            println!(
                "eval {}: light acc {:.3} l1 {:.4} (n={}), heavy acc {:.3} l1 {:.4} (n={})",
                r.variant, r.light.acc, r.light.l1, r.light.n, r.heavy.acc, r.heavy.l1, r.heavy.n
            );
        }
        Command::Ablate { data, config, variants, report } => {
            let lab = merged_config(&data, &config)?;
            let train_eps = load_split(&data, &lab, DataSplit::Train)?;
            let eval_eps = load_split(&data, &lab, DataSplit::Eval)?;
            let mut bench = Vec::new();
            for name in variants.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                let mut cfg = lab.pipeline.clone();
                cfg.ablation = AblationFlags::variant(name)?;
                let (params, _) = train(&train_eps, &cfg)?;
                bench.push(BenchVariant { name: name.to_string(), params });
                eprintln!("trained variant {name}");
            }
            let reports =
                run_benchmark(&bench, &eval_eps, &ThresholdSpec::default(), &SplitRule::default())?;
            emit_report(&reports, &report, ReportFormat::from_path(&report))?;
            for r in &reports {
                println!(
                    "{}: light acc {:.3} l1 {:.4}, heavy acc {:.3} l1 {:.4}",
                    r.variant, r.light.acc, r.light.l1, r.heavy.acc, r.heavy.l1
                );
            }
        }
        Command::MaskStudy { model, data, severities, report } => {
            let params = load_model(&model)?;
            let lab = load_dataset_config(&data)?;
            let episodes = load_split(&data, &lab, DataSplit::Eval)?;
            let sevs: Vec<f64> = severities
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| {
                    s.parse::<f64>()
                        .map_err(|_| Error::Config(format!("bad severity {s:?}")))
                })
                .collect::<Result<_>>()?;
            let rows = mask_quality_study(
                &params,
                &episodes,
                &sevs,
                &ThresholdSpec::default(),
                &SplitRule::default(),
            )?;
            emit_mask_study(&rows, &report, ReportFormat::from_path(&report))?;
            for row in &rows {
                println!(
                    "severity {:.2}: light l1 {:.4} -> {:.4}, heavy l1 {:.4} -> {:.4}",
                    row.severity,
                    row.clean_light_l1,
                    row.degraded_light_l1,
                    row.clean_heavy_l1,
                    row.degraded_heavy_l1
                );
            }
        }
    }
    Ok(())
}

fn variant_name(flags: &AblationFlags) -> String {
    if *flags == AblationFlags::default() {
        "full".into()
    } else if flags.disable_refinement {
        "no_refine".into()
    } else {
        let mut parts = Vec::new();
        if flags.disable_dfa {
            parts.push("no_dfa");
        }
        if flags.disable_tdr {
            parts.push("no_tdr");
        }
        if flags.disable_mask {
            parts.push("no_mask");
        }
        parts.join("+")
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
