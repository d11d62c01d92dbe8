use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hagmeta::config::ExperimentConfig;
use hagmeta::dataset::{export_dataset, generate_synthetic, FeatureFormat, SbmSpec};
use hagmeta::diffnum::{grad_check, Checkpoint};
use hagmeta::episodes::MetaEpisodeSampler;
use hagmeta::fsutil::{read_to_string, write_atomic};
use hagmeta::harness::{
    evaluate, meta_train, pretrain, run_experiment, PretrainOutcome, RunConfig, SeedRun,
    SessionReport,
};
use hagmeta::model::{session_forward, ModelState};
use hagmeta::output::{episodes_csv, export_embeddings, sessions_csv, summary_json, write_results};
use hagmeta::splits::make_splits;
use hagmeta::{Error, Graph, Result};
use serde_json::json;

#[derive(Parser)]
#[command(
    name = "hagmeta",
    version,
    about = "Few-shot class-incremental node classification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a stochastic block model dataset.
    Generate(GenerateArgs),
    /// Pre-train the encoder on the base classes.
    Pretrain(PretrainArgs),
    /// Meta-train on pseudo-incremental episodes starting from a pre-trained encoder.
    Metatrain(MetatrainArgs),
    /// Run the evaluation session stream from a meta-trained checkpoint.
    Evaluate(EvaluateArgs),
    /// Full pipeline over every configured seed.
    Run(RunArgs),
    /// Compare analytic and finite-difference gradients on one sampled episode.
    Gradcheck(GradcheckArgs),
    /// Write encoder embeddings of a checkpoint as CSV.
    ExportEmbeddings(ExportArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// JSON file with the full generator spec; individual flags override it.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    nodes_per_class: Option<usize>,
    #[arg(long)]
    p_in: Option<f64>,
    #[arg(long)]
    p_out: Option<f64>,
    #[arg(long)]
    feature_dim: Option<usize>,
    #[arg(long)]
    separation: Option<f64>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "dataset")]
    stem: String,
    /// Write features in the binary tensor layout.
    #[arg(long)]
    binary_features: bool,
}

/// Overrides for fields of the run section of the config.
#[derive(Args, Default)]
struct Overrides {
    #[arg(long)]
    n_way: Option<usize>,
    #[arg(long)]
    k_shot: Option<usize>,
    #[arg(long)]
    query_k: Option<usize>,
    #[arg(long)]
    meta_episodes: Option<usize>,
    #[arg(long)]
    meta_steps_per_episode: Option<usize>,
    #[arg(long)]
    eval_sessions: Option<usize>,
    #[arg(long)]
    finetune_steps: Option<usize>,
    #[arg(long)]
    pretrain_epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    num_seeds: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    /// learned | uniform | off
    #[arg(long)]
    task_weighting: Option<String>,
    /// learned | uniform
    #[arg(long)]
    node_weighting: Option<String>,
    /// per_class | global
    #[arg(long)]
    prototype_mode: Option<String>,
    /// categorical | binary
    #[arg(long)]
    loss_mode: Option<String>,
    #[arg(long)]
    novel_tr_as_base: bool,
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Defaults to the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct PretrainArgs {
    #[command(flatten)]
    common: Common,
    /// Encoder checkpoint to write.
    #[arg(long)]
    out: PathBuf,
    /// Also write the split manifest here.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args)]
struct MetatrainArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    encoder: PathBuf,
    /// Model checkpoint to write.
    #[arg(long)]
    out: PathBuf,
    /// Per-episode task weight diagnostics.
    #[arg(long)]
    episodes_csv: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    model: PathBuf,
    /// Output directory for the session CSV and summary.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: u64,
    #[command(flatten)]
    overrides: Overrides,
    #[arg(long, default_value = "results")]
    out: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 1e-5)]
    fd_step: f64,
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    /// Coordinates checked per parameter tensor.
    #[arg(long, default_value_t = 64)]
    max_coords: usize,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated node ids; all nodes when omitted.
    #[arg(long, value_delimiter = ',')]
    nodes: Option<Vec<usize>>,
}

fn parse_enum<T: serde::de::DeserializeOwned>(flag: &str, value: &str) -> Result<T> {
    serde_json::from_value(json!(value))
        .map_err(|_| Error::Config(format!("invalid value {value:?} for --{flag}")))
}

impl Overrides {
    fn apply(&self, run: &mut RunConfig) -> Result<()> {
        macro_rules! set {
            ($($field:ident),*) => {$(if let Some(v) = self.$field { run.$field = v; })*};
        }
        set!(
            n_way,
            k_shot,
            query_k,
            meta_episodes,
            meta_steps_per_episode,
            eval_sessions,
            finetune_steps,
            pretrain_epochs,
            patience,
            num_seeds
        );
        if let Some(v) = self.lr {
            run.optimizer.lr = v;
        }
        if let Some(v) = self.weight_decay {
            run.optimizer.weight_decay = v;
        }
        if let Some(v) = &self.task_weighting {
            run.model.task_weighting = parse_enum("task-weighting", v)?;
        }
        if let Some(v) = &self.node_weighting {
            run.model.node_weighting = parse_enum("node-weighting", v)?;
        }
        if let Some(v) = &self.prototype_mode {
            run.model.prototype_mode = parse_enum("prototype-mode", v)?;
        }
        if let Some(v) = &self.loss_mode {
            run.model.loss_mode = parse_enum("loss-mode", v)?;
        }
        if self.novel_tr_as_base {
            run.novel_tr_as_base = true;
        }
        Ok(())
    }
}

struct Loaded {
    config: ExperimentConfig,
    graph: Graph,
    seed: u64,
}

fn load(config_path: &Path, seed: Option<u64>, overrides: &Overrides) -> Result<Loaded> {
    let mut config = ExperimentConfig::read(config_path)?;
    if let Some(s) = seed {
        config.run.seed = s;
    }
    overrides.apply(&mut config.run)?;
    config.validate()?;
    let base_dir = config_path.parent().unwrap_or(Path::new(""));
    let graph = config.load_graph(base_dir)?;
    let seed = config.run.seed;
    Ok(Loaded {
        config,
        graph,
        seed,
    })
}

fn cmd_generate(args: GenerateArgs) -> Result<()> {
    let mut spec = match &args.spec {
        Some(p) => {
            serde_json::from_str::<SbmSpec>(&read_to_string(p)?).map_err(|e| Error::Parse {
                file: p.clone(),
                line: e.line(),
                msg: e.to_string(),
            })?
        }
        None => SbmSpec {
            classes: 12,
            nodes_per_class: 50,
            p_in: 0.1,
            p_out: 0.01,
            feature_dim: 16,
            class_center_separation: 1.0,
            feature_noise: 1.0,
            seed: 0,
        },
    };
    macro_rules! set {
        ($($arg:ident => $field:ident),*) => {$(if let Some(v) = args.$arg { spec.$field = v; })*};
    }
    set!(classes => classes, nodes_per_class => nodes_per_class, p_in => p_in, p_out => p_out,
        feature_dim => feature_dim, separation => class_center_separation, noise => feature_noise, seed => seed);
    let graph = generate_synthetic(&spec)?;
    let format = if args.binary_features {
        FeatureFormat::Binary
    } else {
        FeatureFormat::Text
    };
    export_dataset(&graph, &args.out, &args.stem, format)?;
    println!(
        "wrote {} ({} nodes, {} edges)",
        args.out.join(format!("{}.json", args.stem)).display(),
        graph.num_nodes(),
        graph.num_edges()
    );
    Ok(())
}

fn cmd_pretrain(args: PretrainArgs) -> Result<()> {
    let l = load(
        &args.common.config,
        args.common.seed,
        &args.common.overrides,
    )?;
    let splits = make_splits(&l.graph, &l.config.run.split.to_spec(l.seed))?;
    if let Some(m) = &args.manifest {
        write_atomic(m, splits.manifest_json(l.graph.num_nodes())?.as_bytes())?;
    }
    let pre = pretrain(&l.graph, &splits, &l.config.run, l.seed)?;
    let ck = Checkpoint {
        params: pre.encoder.clone(),
        seed: l.seed,
        step: pre.epochs_run as u64,
        meta: json!({ "encoder": l.config.run.model.encoder, "pretrain": pre }),
    };
    ck.save(&args.out)?;
    println!(
        "best base/val accuracy {:.2}% at epoch {} of {}",
        pre.best_val_accuracy, pre.best_epoch, pre.epochs_run
    );
    Ok(())
}

fn cmd_metatrain(args: MetatrainArgs) -> Result<()> {
    let l = load(
        &args.common.config,
        args.common.seed,
        &args.common.overrides,
    )?;
    let splits = make_splits(&l.graph, &l.config.run.split.to_spec(l.seed))?;
    let encoder = Checkpoint::load(&args.encoder)?.params;
    let meta = meta_train(&l.graph, &splits, &encoder, &l.config.run, l.seed)?;
    let mut ck = meta.state.to_checkpoint(
        l.seed,
        meta.best_episode.unwrap_or(meta.episodes_run) as u64,
    )?;
    ck.meta["initial_accuracy"] = json!(meta.initial_accuracy);
    ck.meta["meta_train"] = serde_json::to_value(&meta)?;
    ck.save(&args.out)?;
    if let Some(p) = &args.episodes_csv {
        write_atomic(p, episodes_csv(l.seed, &meta.episodes).as_bytes())?;
    }
    println!(
        "{} episodes, {} registry resets, last meta-train accuracy {:.2}%",
        meta.episodes_run, meta.resets, meta.initial_accuracy
    );
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<()> {
    let l = load(
        &args.common.config,
        args.common.seed,
        &args.common.overrides,
    )?;
    let splits = make_splits(&l.graph, &l.config.run.split.to_spec(l.seed))?;
    let ck = Checkpoint::load(&args.model)?;
    let state = ModelState::from_checkpoint(&ck)?;
    let a0 = ck
        .meta
        .get("initial_accuracy")
        .and_then(|v| v.as_f64())
        .ok_or_else(|| {
            Error::Checkpoint("model checkpoint lacks the meta-train accuracy".into())
        })?;
    let mut run = l.config.run.clone();
    run.model = state.config.clone();
    let (final_state, sessions) = evaluate(&l.graph, &splits, &state, &run, l.seed)?;
    let mut accuracies = vec![a0];
    accuracies.extend(sessions.iter().map(|s| s.accuracy));
    let (pd, rpd) = hagmeta::harness::compute_pd_rpd(&accuracies)?;
    let seed_run = SeedRun {
        seed: l.seed,
        pretrain: PretrainOutcome {
            encoder: Default::default(),
            best_epoch: 0,
            best_val_accuracy: 0.0,
            epochs_run: 0,
            train_losses: vec![],
            val_accuracies: vec![],
        },
        meta: hagmeta::harness::MetaOutcome {
            state: state.clone(),
            initial_accuracy: a0,
            episodes_run: 0,
            resets: 0,
            best_episode: None,
            validation: vec![],
            episodes: vec![],
        },
        accuracies,
        pd,
        rpd,
        sessions,
        final_state,
    };
    let runs = [seed_run];
    let report = SessionReport::from_runs(&runs)?;
    write_atomic(
        &args.out.join("sessions.csv"),
        sessions_csv(&runs).as_bytes(),
    )?;
    write_atomic(
        &args.out.join("summary.json"),
        summary_json(&run, &report, &runs)?.as_bytes(),
    )?;
    print_report(&report);
    Ok(())
}

fn print_report(report: &SessionReport) {
    let series: Vec<String> = report.mean.iter().map(|a| format!("{a:.2}")).collect();
    println!("accuracy by session: {}", series.join(" "));
    println!(
        "PD {:.2}  RPD {:.2}%  (mean RPD over seeds {:.2}%)",
        report.pd, report.rpd, report.mean_rpd
    );
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let l = load(&args.config, Some(args.seed), &args.overrides)?;
    for seed in l.config.run.seeds() {
        let splits = make_splits(&l.graph, &l.config.run.split.to_spec(seed))?;
        write_atomic(
            &args.out.join(format!("splits-seed{seed}.json")),
            splits.manifest_json(l.graph.num_nodes())?.as_bytes(),
        )?;
    }
    let (report, runs) = run_experiment(&l.graph, &l.config.run)?;
    write_results(&args.out, &l.config.run, &report, &runs)?;
    write_atomic(
        &args.out.join("config.json"),
        l.config.to_json()?.as_bytes(),
    )?;
    print_report(&report);
    Ok(())
}

fn cmd_gradcheck(args: GradcheckArgs) -> Result<bool> {
    let l = load(
        &args.common.config,
        args.common.seed,
        &args.common.overrides,
    )?;
    let splits = make_splits(&l.graph, &l.config.run.split.to_spec(l.seed))?;
    let graph = l.graph.mask_nodes(&splits.masked);
    let mut sampler = MetaEpisodeSampler::new(&splits, l.config.run.shape(), l.seed)?;
    sampler.next_episode()?;
    let task = sampler.next_episode()?;
    let state = ModelState::init(&l.config.run.model, graph.feature_dim(), l.seed)?;
    let model = state.config.clone();
    let report = grad_check(
        &state.params,
        |tape, bound| Ok(session_forward(tape, &graph, bound, &model, &task)?.loss),
        args.fd_step,
        args.tol,
        args.max_coords,
    )?;
    for p in &report.params {
        println!(
            "{:<12} coords {:>3}  max rel err {:.3e}  {}",
            p.name,
            p.coords_checked,
            p.max_rel_error,
            if p.passed { "ok" } else { "FAIL" }
        );
    }
    println!(
        "max relative error {:.3e} (tolerance {:e})",
        report.max_rel_error(),
        report.tol
    );
    Ok(report.passed())
}

fn cmd_export(args: ExportArgs) -> Result<()> {
    let l = load(&args.config, None, &Overrides::default())?;
    let state = ModelState::from_checkpoint(&Checkpoint::load(&args.model)?)?;
    let nodes = args
        .nodes
        .unwrap_or_else(|| (0..l.graph.num_nodes()).collect());
    export_embeddings(&state, &l.graph, &nodes, &args.out)
}

fn exit_for(err: &Error) -> ExitCode {
    eprintln!("error: {err}");
    if err.is_validation() {
        ExitCode::from(1)
    } else {
        ExitCode::from(2)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Pretrain(a) => cmd_pretrain(a),
        Command::Metatrain(a) => cmd_metatrain(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Run(a) => cmd_run(a),
        Command::ExportEmbeddings(a) => cmd_export(a),
        Command::Gradcheck(a) => match cmd_gradcheck(a) {
            Ok(true) => Ok(()),
            Ok(false) => {
                eprintln!("error: gradient check failed");
                return ExitCode::from(2);
            }
            Err(e) => Err(e),
        },
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => exit_for(&e),
    }
}
