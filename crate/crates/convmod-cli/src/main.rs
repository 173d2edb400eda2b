//! Command-line front end: corpus validation, unsupervised and
//! semi-supervised training, baselines, parameter sweeps and decoding with a
//! saved model.
//!
//! Exit codes: 0 success, 1 usage error, 2 data/validation error,
//! 3 all runs rejected.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use convmod::config::{ExperimentConfig, ExperimentMode};
use convmod::corpus::Corpus;
use convmod::evaluation::{
    baseline_majority, baseline_ps_heuristic1, baseline_ps_heuristic2, baseline_random,
    coarse_grain, compute_metrics, EvalReport,
};
use convmod::experiment::{
    crossval_semisupervised, run_unsupervised_experiment, sweep, RunResult,
};
use convmod::hmm::{build_observations, train_semisupervised, SavedModel};
use convmod::mapping::{build_weight_matrix, optimal_mapping};

#[derive(Parser)]
#[command(name = "convmod", version, about = "Conversation models for forum post categorization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Corpus file (JSON Lines, one thread per line)
    #[arg(long)]
    corpus: PathBuf,
    /// Experiment config file (JSON); defaults apply when omitted
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed override
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Clone)]
struct RunArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Output directory for reports, the manifest and the model
    #[arg(long)]
    out: PathBuf,
    /// Cross-validation folds override
    #[arg(long)]
    folds: Option<usize>,
    /// Repetition count override
    #[arg(long)]
    reps: Option<usize>,
    /// Print only the coarse-grained (Problem/Solution/Other) tables
    #[arg(long)]
    coarse: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Load and validate a corpus, printing its summary
    Validate(CommonArgs),
    /// Print corpus summary statistics
    Stats(CommonArgs),
    /// Unsupervised training on the full corpus, mapped and evaluated
    TrainUnsup(RunArgs),
    /// Semi-supervised n-fold cross-validation
    TrainSemi(RunArgs),
    /// The four baselines, each evaluated against the gold labels
    Baselines(RunArgs),
    /// Grid sweep over config parameters
    Sweep(RunArgs),
    /// Decode a corpus with a saved model, writing an annotated copy
    Decode {
        /// Corpus file to decode
        #[arg(long)]
        corpus: PathBuf,
        /// Saved model file
        #[arg(long)]
        model: PathBuf,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap handles --help/--version as "errors" with successful exit
            if e.use_stderr() {
                eprint!("{e}");
                return ExitCode::from(1);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn load_experiment_config(common: &CommonArgs) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.master_seed = seed;
    }
    Ok(cfg)
}

fn apply_run_overrides(cfg: &mut ExperimentConfig, args: &RunArgs) {
    if let Some(folds) = args.folds {
        cfg.folds = folds;
    }
    if let Some(reps) = args.reps {
        cfg.repetitions = reps;
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'a str,
    version: &'a str,
    command: String,
    corpus: String,
    master_seed: u64,
    config: &'a ExperimentConfig,
}

fn write_manifest(
    out: &Path,
    command: &str,
    corpus: &Path,
    cfg: &ExperimentConfig,
) -> anyhow::Result<()> {
    let manifest = Manifest {
        tool: "convmod",
        version: env!("CARGO_PKG_VERSION"),
        command: command.to_string(),
        corpus: corpus.display().to_string(),
        master_seed: cfg.master_seed,
        config: cfg,
    };
    fs::create_dir_all(out)?;
    fs::write(out.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

fn print_report(title: &str, report: &EvalReport, labels: &convmod::corpus::LabelSet) {
    println!("== {title} ==");
    print!("{}", report.render_table(labels));
    println!();
}

fn print_run_result(corpus: &Corpus, result: &RunResult, coarse_only: bool) {
    for warning in &result.warnings {
        eprintln!("warning: {warning}");
    }
    for rejection in &result.rejected {
        eprintln!(
            "rejected: repetition {}{}: {}",
            rejection.repetition,
            rejection.fold.map(|f| format!(" fold {f}")).unwrap_or_default(),
            rejection.reason
        );
    }
    if let Some(agg) = &result.aggregate {
        if !coarse_only {
            println!(
                "aggregate over {} report(s): micro-A {:.4}  macro-A {:.4}  macro-F1 {:.4}",
                agg.num_reports, agg.micro_accuracy, agg.macro_accuracy, agg.macro_f1
            );
        }
    }
    if let Some(first) = result.reports.first() {
        if !coarse_only {
            print_report("fine-grained (first report)", &first.report, &corpus.label_set);
        }
        if let Some(coarse) = &first.coarse {
            let coarse_labels = convmod::evaluation::coarse_label_set();
            print_report("coarse-grained (first report)", coarse, &coarse_labels);
        }
    }
    if let Some(coarse_agg) = &result.coarse_aggregate {
        println!(
            "coarse aggregate: micro-A {:.4}  macro-A {:.4}",
            coarse_agg.micro_accuracy, coarse_agg.macro_accuracy
        );
    }
}

fn write_reports(out: &Path, result: &RunResult) -> anyhow::Result<()> {
    let dir = out.join("reports");
    fs::create_dir_all(&dir)?;
    for fold in &result.reports {
        let name = format!("rep{:03}_fold{:03}.json", fold.repetition, fold.fold);
        fs::write(dir.join(name), serde_json::to_string_pretty(fold)?)?;
    }
    fs::write(out.join("aggregate.json"), serde_json::to_string_pretty(result)?)?;
    Ok(())
}

fn exit_for_result(result: &RunResult) -> ExitCode {
    if result.aggregate.is_none() {
        // every run was rejected
        ExitCode::from(3)
    } else {
        ExitCode::SUCCESS
    }
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Validate(common) => {
            let cfg = load_experiment_config(&common)?;
            let corpus = Corpus::load(&common.corpus, &cfg.model)?;
            println!("corpus is valid");
            print!("{}", corpus.stats());
            Ok(ExitCode::SUCCESS)
        }
        Command::Stats(common) => {
            let cfg = load_experiment_config(&common)?;
            let corpus = Corpus::load(&common.corpus, &cfg.model)?;
            print!("{}", corpus.stats());
            Ok(ExitCode::SUCCESS)
        }
        Command::TrainUnsup(args) => {
            let mut cfg = load_experiment_config(&args.common)?;
            apply_run_overrides(&mut cfg, &args);
            cfg.mode = ExperimentMode::Unsupervised;
            let corpus = Corpus::load(&args.common.corpus, &cfg.model)?;
            write_manifest(&args.out, "train-unsup", &args.common.corpus, &cfg)?;
            let result = run_unsupervised_experiment(&corpus, &cfg)?;
            write_reports(&args.out, &result)?;
            if result.aggregate.is_some() {
                save_unsup_model(&args.out, &corpus, &cfg)?;
            }
            print_run_result(&corpus, &result, args.coarse);
            Ok(exit_for_result(&result))
        }
        Command::TrainSemi(args) => {
            let mut cfg = load_experiment_config(&args.common)?;
            apply_run_overrides(&mut cfg, &args);
            cfg.mode = ExperimentMode::SemiSupervised;
            let corpus = Corpus::load(&args.common.corpus, &cfg.model)?;
            write_manifest(&args.out, "train-semi", &args.common.corpus, &cfg)?;
            let result = crossval_semisupervised(&corpus, &cfg)?;
            write_reports(&args.out, &result)?;
            save_semi_model(&args.out, &corpus, &cfg)?;
            print_run_result(&corpus, &result, args.coarse);
            Ok(exit_for_result(&result))
        }
        Command::Baselines(args) => {
            let mut cfg = load_experiment_config(&args.common)?;
            apply_run_overrides(&mut cfg, &args);
            let corpus = Corpus::load(&args.common.corpus, &cfg.model)?;
            write_manifest(&args.out, "baselines", &args.common.corpus, &cfg)?;
            run_baselines(&args.out, &corpus, &cfg, args.coarse)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Sweep(args) => {
            let mut cfg = load_experiment_config(&args.common)?;
            apply_run_overrides(&mut cfg, &args);
            if cfg.grid.is_empty() {
                anyhow::bail!("sweep requires a non-empty `grid` in the config file");
            }
            let corpus = Corpus::load(&args.common.corpus, &cfg.model)?;
            write_manifest(&args.out, "sweep", &args.common.corpus, &cfg)?;
            let result = sweep(&corpus, &cfg)?;
            fs::create_dir_all(&args.out)?;
            fs::write(args.out.join("sweep.json"), serde_json::to_string_pretty(&result)?)?;
            for (i, run) in result.runs.iter().enumerate() {
                let marker = match (result.best_micro, result.best_macro) {
                    (Some(m), _) if m == i => " <- best micro-A",
                    (_, Some(m)) if m == i => " <- best macro-A",
                    _ => "",
                };
                let agg = run
                    .result
                    .aggregate
                    .as_ref()
                    .map(|a| format!("micro-A {:.4} macro-A {:.4}", a.micro_accuracy, a.macro_accuracy))
                    .unwrap_or_else(|| "all runs rejected".to_string());
                let overrides = run
                    .overrides
                    .iter()
                    .map(|(k, v)| format!("{k}={v}"))
                    .collect::<Vec<_>>()
                    .join(" ");
                println!("grid point {i} [{overrides}]: {agg}{marker}");
            }
            let any_survivor = result.runs.iter().any(|r| r.result.aggregate.is_some());
            Ok(if any_survivor { ExitCode::SUCCESS } else { ExitCode::from(3) })
        }
        Command::Decode { corpus, model, out } => {
            let model = SavedModel::load(&model)?;
            let loaded = Corpus::load(&corpus, &model.config)?;
            let labels = model.decode_labels(&loaded)?;
            fs::create_dir_all(&out)?;
            let mut annotated = loaded.clone();
            let mut i = 0usize;
            for thread in &mut annotated.threads {
                for post in &mut thread.posts {
                    post.gold_label = Some(convmod::corpus::CategoryLabel(labels[i].clone()));
                    i += 1;
                }
            }
            annotated.save(out.join("decoded.jsonl"))?;
            let manifest = serde_json::json!({
                "tool": "convmod",
                "version": env!("CARGO_PKG_VERSION"),
                "command": "decode",
                "corpus": corpus.display().to_string(),
                "model_config": model.config,
            });
            fs::write(out.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
            println!("decoded {} posts into {}", labels.len(), out.join("decoded.jsonl").display());
            Ok(ExitCode::SUCCESS)
        }
    }
}

/// Re-derives the first accepted unsupervised repetition (same derived seed,
/// so the same run) and saves it with the cluster-to-label mapping baked
/// into the state names. Only models whose state count equals the label
/// count are saved: a surplus state has no category to decode into.
fn save_unsup_model(out: &Path, corpus: &Corpus, cfg: &ExperimentConfig) -> anyhow::Result<()> {
    use convmod::config::derive_seed;
    let num_labels = corpus.label_set.len();
    for rep in 0..cfg.repetitions {
        let mut model_cfg = cfg.model.clone();
        model_cfg.seed = derive_seed(cfg.master_seed, &[rep as u64]);
        let outcome = match convmod::hmm::train_unsupervised(corpus, &model_cfg) {
            Ok(o) => o,
            Err(convmod::Error::Training(_)) => continue,
            Err(e) => return Err(e.into()),
        };
        let num_states = outcome.params.num_states;
        let mut used = vec![false; num_states];
        for &s in &outcome.assignment {
            used[s] = true;
        }
        if used.iter().filter(|&&u| u).count() != num_labels {
            continue; // the experiment rejected this repetition
        }
        if num_states != num_labels {
            eprintln!(
                "note: accepted run kept {num_states} model states for {num_labels} labels; \
                 no model file written"
            );
            continue;
        }
        let gold = corpus.gold_label_indices();
        let w = build_weight_matrix(&outcome.assignment, &gold, num_states, num_labels)?;
        let mapping = optimal_mapping(&w);
        let state_labels: Vec<String> = (0..num_states)
            .map(|s| corpus.label_set.name(mapping.label_for(s)).to_string())
            .collect();
        let spaces = build_observations(corpus, &model_cfg, None)?.spaces;
        let model = SavedModel::new(
            model_cfg,
            corpus.label_set.names().to_vec(),
            state_labels,
            outcome.params,
            spaces,
        );
        model.save(out.join("model.json"))?;
        return Ok(());
    }
    Ok(())
}

/// Deployment model for decode: supervised priors fitted on every labeled
/// thread, no EM.
fn save_semi_model(out: &Path, corpus: &Corpus, cfg: &ExperimentConfig) -> anyhow::Result<()> {
    let labeled: Vec<usize> = (0..corpus.num_threads())
        .filter(|&t| corpus.threads[t].posts.iter().all(|p| p.gold_label.is_some()))
        .collect();
    if labeled.is_empty() {
        return Ok(());
    }
    let mut model_cfg = cfg.model.clone();
    model_cfg.seed = cfg.master_seed;
    model_cfg.max_num_iterations = 0;
    let outcome = train_semisupervised(corpus, &labeled, &labeled, &model_cfg)?;
    let spaces = build_observations(corpus, &model_cfg, Some(&labeled))?.spaces;
    let model = SavedModel::new(
        model_cfg,
        corpus.label_set.names().to_vec(),
        corpus.label_set.names().to_vec(),
        outcome.params,
        spaces,
    );
    model.save(out.join("model.json"))?;
    Ok(())
}

fn run_baselines(out: &Path, corpus: &Corpus, cfg: &ExperimentConfig, coarse_only: bool) -> anyhow::Result<()> {
    let gold_opt = corpus.gold_label_indices();
    let gold: Vec<usize> = gold_opt.iter().copied().flatten().collect();
    if gold.is_empty() {
        anyhow::bail!("baselines require gold labels");
    }
    let keep = |pred: &[usize]| -> Vec<usize> {
        pred.iter()
            .zip(&gold_opt)
            .filter(|(_, g)| g.is_some())
            .map(|(&p, _)| p)
            .collect()
    };

    let mut predictions: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    predictions.insert("random", baseline_random(corpus, &corpus.label_set, cfg.master_seed));
    predictions.insert("majority", baseline_majority(corpus)?);
    let mut ps1 = Vec::new();
    let mut ps2 = Vec::new();
    for thread in &corpus.threads {
        ps1.extend(baseline_ps_heuristic1(thread, &corpus.label_set)?);
        ps2.extend(baseline_ps_heuristic2(thread, &corpus.label_set)?);
    }
    predictions.insert("ps_heuristic1", ps1);
    predictions.insert("ps_heuristic2", ps2);

    fs::create_dir_all(out)?;
    for (name, pred) in predictions {
        let pred = keep(&pred);
        let report = compute_metrics(&pred, &gold, &corpus.label_set)?;
        if !coarse_only {
            print_report(name, &report, &corpus.label_set);
        }
        let coarse = {
            let (cp, cl) = coarse_grain(&pred, &corpus.label_set);
            let (cg, _) = coarse_grain(&gold, &corpus.label_set);
            let coarse_report = compute_metrics(&cp, &cg, &cl)?;
            if coarse_only {
                print_report(&format!("{name} (coarse)"), &coarse_report, &cl);
            }
            coarse_report
        };
        let payload = serde_json::json!({ "fine": report, "coarse": coarse });
        fs::write(
            out.join(format!("baseline_{name}.json")),
            serde_json::to_string_pretty(&payload)?,
        )?;
    }
    Ok(())
}
