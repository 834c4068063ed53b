//! Command-line interface. Settings resolve as built-in defaults, then the
//! `--config` file, then explicit flags (or `SEPBIAS_SEED`).

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::parser::ValueSource;
use clap::{ArgMatches, Args, CommandFactory, FromArgMatches, Parser, Subcommand};

use crate::biasinject::{inject_underdiagnosis, NoiseSpec};
use crate::datagen::{load_dataset_csv, sample_population, save_dataset_csv, PopulationSpec};
use crate::error::{Error, Result};
use crate::experiments::{
    experiment_train_config, load_run, persist_run, render_report, run_experiment, ExperimentConfig,
    ExperimentKind,
};
use crate::learner::{evaluate, holdout_split, train_classifier, Arch, BatchSize, Model, Target, TrainConfig};
use crate::metrics::slice_metrics;
use crate::seeding::{derive_seed, tag};

#[derive(Parser, Debug)]
#[command(name = "sepbias", version, about = "Subgroup separability and underdiagnosis bias simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample a synthetic dataset; writes data.csv and population.json.
    Generate(GenerateArgs),
    /// Mislabel a fraction of one group's positives as negative.
    Inject(InjectArgs),
    /// Train a group classifier on a dataset and report its held-out AUC.
    Audit(AuditArgs),
    /// Train a classifier; writes model.json.
    Train(TrainArgs),
    /// Evaluate a model against the true labels of a dataset.
    Evaluate(EvaluateArgs),
    /// Run one of the experiments and persist its run directory.
    Experiment(ExperimentArgs),
    /// Render a run directory's summary as text tables.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct GenerateArgs {
    /// Population spec JSON; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Group separability as the Bayes group AUC (sets group_separation).
    #[arg(long, default_value_t = 0.5)]
    auc: f64,
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, env = "SEPBIAS_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = PopulationSpec::default().dim)]
    dim: usize,
    /// P(group = 1).
    #[arg(long, default_value_t = PopulationSpec::default().group_prior)]
    group_prior: f64,
    /// P(y = 1 | group) for groups 0 and 1.
    #[arg(long, num_args = 2, value_delimiter = ',', default_values_t = PopulationSpec::default().class_prior)]
    class_prior: Vec<f64>,
    #[arg(long, default_value_t = PopulationSpec::default().disease_separation)]
    disease_separation: f64,
    #[arg(long, default_value_t = PopulationSpec::default().noise_scale)]
    noise_scale: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct InjectArgs {
    /// Fraction of the target group's true positives to flip.
    #[arg(long, default_value_t = 0.25)]
    rate: f64,
    /// Target group.
    #[arg(long, default_value_t = 1)]
    group: u8,
    #[arg(long, env = "SEPBIAS_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long = "in")]
    input: PathBuf,
    /// Output CSV file.
    #[arg(long)]
    out: PathBuf,
}

/// Gradient-descent settings with the learner defaults.
#[derive(Args, Debug)]
struct TrainFlags {
    #[arg(long, default_value_t = TrainConfig::default().learning_rate)]
    learning_rate: f64,
    #[arg(long, default_value_t = TrainConfig::default().max_epochs)]
    max_epochs: usize,
    #[arg(long, default_value_t = TrainConfig::default().patience)]
    patience: usize,
    #[arg(long, default_value_t = TrainConfig::default().val_fraction)]
    val_fraction: f64,
    /// `full` or a positive integer.
    #[arg(long, default_value_t = TrainConfig::default().batch_size)]
    batch_size: BatchSize,
    #[arg(long, default_value_t = TrainConfig::default().hidden_width)]
    hidden_width: usize,
}

/// Gradient-descent settings with the experiment defaults.
#[derive(Args, Debug)]
struct ExperimentTrainFlags {
    #[arg(long, default_value_t = experiment_train_config().learning_rate)]
    learning_rate: f64,
    #[arg(long, default_value_t = experiment_train_config().max_epochs)]
    max_epochs: usize,
    #[arg(long, default_value_t = experiment_train_config().patience)]
    patience: usize,
    #[arg(long, default_value_t = experiment_train_config().val_fraction)]
    val_fraction: f64,
    /// `full` or a positive integer.
    #[arg(long, default_value_t = experiment_train_config().batch_size)]
    batch_size: BatchSize,
    #[arg(long, default_value_t = experiment_train_config().hidden_width)]
    hidden_width: usize,
}

impl TrainFlags {
    fn config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            max_epochs: self.max_epochs,
            patience: self.patience,
            val_fraction: self.val_fraction,
            batch_size: self.batch_size,
            hidden_width: self.hidden_width,
            seed,
        }
    }
}

#[derive(Args, Debug)]
struct AuditArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value_t = Arch::Linear)]
    arch: Arch,
    /// Share of rows held out for the AUC.
    #[arg(long, default_value_t = 0.3)]
    test_fraction: f64,
    #[arg(long, env = "SEPBIAS_SEED", default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    train: TrainFlags,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value_t = Target::ObservedLabel)]
    target: Target,
    #[arg(long, default_value_t = Arch::Linear)]
    arch: Arch,
    #[arg(long, env = "SEPBIAS_SEED", default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    train: TrainFlags,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ExperimentArgs {
    /// audit, degradation, ablation or split.
    kind: ExperimentKind,
    /// Experiment config JSON; may be partial.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run directory (overrides output_dir).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed.
    #[arg(long, env = "SEPBIAS_SEED", default_value_t = ExperimentConfig::default().master_seed)]
    seed: u64,
    /// Real dataset used instead of the synthetic population.
    #[arg(long)]
    data_csv: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_values_t = ExperimentConfig::default().separability_targets)]
    targets: Vec<f64>,
    /// Noise rates (ablation default: 0,0.1,0.2,0.25,0.3,0.4,0.5).
    #[arg(long, value_delimiter = ',', default_values_t = ExperimentConfig::default().noise_rates)]
    rates: Vec<f64>,
    #[arg(long, default_value_t = ExperimentConfig::default().n_train)]
    n_train: usize,
    #[arg(long, default_value_t = ExperimentConfig::default().n_test)]
    n_test: usize,
    /// Seeds per level (ablation default: 3).
    #[arg(long, default_value_t = ExperimentConfig::default().n_seeds)]
    n_seeds: usize,
    #[arg(long, default_value_t = ExperimentConfig::default().arch)]
    arch: Arch,
    #[arg(long, default_value_t = ExperimentConfig::default().target_group)]
    target_group: u8,
    #[arg(long, default_value_t = ExperimentConfig::default().alpha)]
    alpha: f64,
    #[arg(long, default_value_t = ExperimentConfig::default().threshold)]
    threshold: f64,
    #[command(flatten)]
    train: ExperimentTrainFlags,
    /// Worker threads (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
    /// Config override as a dotted key path, e.g. `train_config.patience=3`.
    /// Applied after the config file and before explicit flags.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Run directory written by `experiment`.
    run: PathBuf,
    /// Also write report.txt into this directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// True when `id` was given on the command line or through the environment.
fn explicit(m: &ArgMatches, id: &str) -> bool {
    matches!(
        m.value_source(id),
        Some(ValueSource::CommandLine) | Some(ValueSource::EnvVariable)
    )
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn generate(a: &GenerateArgs, m: &ArgMatches) -> Result<()> {
    let mut spec = match &a.config {
        Some(p) => PopulationSpec::from_json(&read_text(p)?)?,
        None => PopulationSpec::default(),
    };
    if explicit(m, "dim") && a.dim != spec.dim {
        let mut resized = PopulationSpec::with_dim(a.dim)?;
        resized.group_prior = spec.group_prior;
        resized.class_prior = spec.class_prior;
        resized.disease_separation = spec.disease_separation;
        resized.noise_scale = spec.noise_scale;
        resized.group_separation = spec.group_separation;
        spec = resized;
    }
    if explicit(m, "group_prior") {
        spec.group_prior = a.group_prior;
    }
    if explicit(m, "class_prior") {
        spec.class_prior = [a.class_prior[0], a.class_prior[1]];
    }
    if explicit(m, "disease_separation") {
        spec.disease_separation = a.disease_separation;
    }
    if explicit(m, "noise_scale") {
        spec.noise_scale = a.noise_scale;
    }
    if explicit(m, "auc") || a.config.is_none() {
        spec = spec.with_separability(a.auc)?;
    }
    spec.validate()?;
    let data = sample_population(&spec, a.n, a.seed)?;
    create_dir(&a.out)?;
    let data_path = a.out.join("data.csv");
    save_dataset_csv(&data, &data_path)?;
    write_text(&a.out.join("population.json"), &spec.to_json())?;
    println!("wrote {} rows to {}", data.len(), data_path.display());
    Ok(())
}

fn inject(a: &InjectArgs) -> Result<()> {
    let data = load_dataset_csv(&a.input)?;
    let spec = NoiseSpec::new(a.group, a.rate, a.seed);
    let biased = inject_underdiagnosis(&data, &spec)?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    save_dataset_csv(&biased, &a.out)?;
    let flipped = data
        .samples
        .iter()
        .zip(&biased.samples)
        .filter(|(x, y)| x.observed_label != y.observed_label)
        .count();
    println!("flipped {flipped} labels; wrote {}", a.out.display());
    Ok(())
}

fn audit(a: &AuditArgs) -> Result<()> {
    let data = load_dataset_csv(&a.input)?;
    let split_seed = derive_seed(a.seed, &[tag("audit-split")]);
    let (tr, te) = holdout_split(data.len(), a.test_fraction, split_seed)?;
    let (train, test) = (data.select(&tr), data.select(&te));
    let model = train_classifier(&train, Target::Group, a.arch, &a.train.config(a.seed))?;
    let scores = model.score_dataset(&test)?;
    let preds: Vec<u8> = scores.iter().map(|&s| u8::from(s > 0.5)).collect();
    let m = slice_metrics(&preds, &scores, &test.groups())?;
    create_dir(&a.out)?;
    model.save(a.out.join("model.json"))?;
    let report = serde_json::json!({
        "arch": a.arch,
        "n_train": train.len(),
        "n_test": test.len(),
        "group_auc": m.auc,
        "group_accuracy": m.accuracy,
    });
    write_text(&a.out.join("audit.json"), &serde_json::to_string_pretty(&report)?)?;
    match m.auc {
        Some(auc) => println!("group AUC {auc:.4} on {} held-out rows", test.len()),
        None => println!("held-out split contains a single group; AUC undefined"),
    }
    Ok(())
}

fn train(a: &TrainArgs) -> Result<()> {
    let data = load_dataset_csv(&a.input)?;
    let model = train_classifier(&data, a.target, a.arch, &a.train.config(a.seed))?;
    create_dir(&a.out)?;
    let path = a.out.join("model.json");
    model.save(&path)?;
    println!(
        "trained {} on {} for {} epochs (best {}); wrote {}",
        a.arch,
        a.target,
        model.history.epochs_run,
        model.history.best_epoch,
        path.display()
    );
    Ok(())
}

fn evaluate_cmd(a: &EvaluateArgs) -> Result<()> {
    let model = Model::load(&a.model)?;
    let data = load_dataset_csv(&a.input)?;
    let report = evaluate(&model, &data, a.threshold)?;
    create_dir(&a.out)?;
    let rows = report.to_rows("evaluate", model.train_config.seed);
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(a.out.join("metrics.csv"))
        .map_err(|e| Error::domain(format!("cannot write metrics.csv: {e}")))?;
    for r in &rows {
        w.serialize(r)
            .map_err(|e| Error::domain(format!("cannot write metrics.csv: {e}")))?;
    }
    w.flush().map_err(|e| Error::io(a.out.join("metrics.csv"), e))?;
    write_text(&a.out.join("metrics.json"), &serde_json::to_string_pretty(&report)?)?;
    for r in &rows {
        let f = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
        println!(
            "group {:<3}  tpr {}  accuracy {}  auc {}",
            r.group,
            f(r.tpr),
            f(r.accuracy),
            f(r.auc)
        );
    }
    Ok(())
}

/// Sets `key=value` pairs on the JSON form of `config`. Values parse as
/// JSON, falling back to a plain string.
fn apply_overrides(config: &ExperimentConfig, overrides: &[String]) -> Result<ExperimentConfig> {
    let mut value = serde_json::to_value(config)?;
    for item in overrides {
        let (key, raw) = item
            .split_once('=')
            .ok_or_else(|| Error::domain(format!("override `{item}` is not KEY=VALUE")))?;
        let mut slot = &mut value;
        for part in key.split('.') {
            slot = slot
                .as_object_mut()
                .and_then(|m| m.get_mut(part))
                .ok_or_else(|| Error::domain(format!("unknown config key `{key}`")))?;
        }
        *slot = serde_json::from_str(raw).unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
    }
    serde_json::from_value(value).map_err(|e| Error::domain(format!("invalid override: {e}")))
}

fn experiment_config(a: &ExperimentArgs, m: &ArgMatches) -> Result<ExperimentConfig> {
    let mut c = match &a.config {
        Some(p) => ExperimentConfig::from_json_with_defaults(&read_text(p)?, a.kind)?,
        None => ExperimentConfig::for_kind(a.kind),
    };
    if !a.overrides.is_empty() {
        c = apply_overrides(&c, &a.overrides)?;
    }
    if explicit(m, "seed") {
        c.master_seed = a.seed;
    }
    if explicit(m, "data_csv") {
        c.data_csv = a.data_csv.clone();
    }
    if explicit(m, "targets") {
        c.separability_targets = a.targets.clone();
    }
    if explicit(m, "rates") {
        c.noise_rates = a.rates.clone();
    }
    if explicit(m, "n_train") {
        c.n_train = a.n_train;
    }
    if explicit(m, "n_test") {
        c.n_test = a.n_test;
    }
    if explicit(m, "n_seeds") {
        c.n_seeds = a.n_seeds;
    }
    if explicit(m, "arch") {
        c.arch = a.arch;
    }
    if explicit(m, "target_group") {
        c.target_group = a.target_group;
    }
    if explicit(m, "alpha") {
        c.alpha = a.alpha;
    }
    if explicit(m, "threshold") {
        c.threshold = a.threshold;
    }
    let t = &a.train;
    let tc = &mut c.train_config;
    if explicit(m, "learning_rate") {
        tc.learning_rate = t.learning_rate;
    }
    if explicit(m, "max_epochs") {
        tc.max_epochs = t.max_epochs;
    }
    if explicit(m, "patience") {
        tc.patience = t.patience;
    }
    if explicit(m, "val_fraction") {
        tc.val_fraction = t.val_fraction;
    }
    if explicit(m, "batch_size") {
        tc.batch_size = t.batch_size;
    }
    if explicit(m, "hidden_width") {
        tc.hidden_width = t.hidden_width;
    }
    if let Some(out) = &a.out {
        c.output_dir = Some(out.clone());
    }
    Ok(c)
}

fn experiment(a: &ExperimentArgs, m: &ArgMatches) -> Result<()> {
    let config = experiment_config(a, m)?;
    let dir = config
        .output_dir
        .clone()
        .ok_or_else(|| Error::domain("no run directory: pass --out or set output_dir"))?;
    config.validate_for(a.kind)?;
    if a.jobs == Some(0) {
        return Err(Error::domain("--jobs must be positive"));
    }
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = a.jobs {
        pool = pool.num_threads(n);
    }
    let pool = pool
        .build()
        .map_err(|e| Error::domain(format!("cannot start worker threads: {e}")))?;
    let out = pool.install(|| run_experiment(a.kind, &config))?;
    persist_run(&out, &dir)?;
    print!("{}", render_report(&out.summary));
    println!("wrote {}", dir.display());
    Ok(())
}

fn report(a: &ReportArgs) -> Result<()> {
    let run = load_run(&a.run)?;
    let text = render_report(&run.summary);
    if let Some(out) = &a.out {
        create_dir(out)?;
        write_text(&out.join("report.txt"), &text)?;
    }
    print!("{text}");
    Ok(())
}

fn dispatch(cli: &Cli, matches: &ArgMatches) -> Result<()> {
    let sub = matches.subcommand().map(|(_, m)| m).expect("subcommand is required");
    match &cli.command {
        Command::Generate(a) => generate(a, sub),
        Command::Inject(a) => inject(a),
        Command::Audit(a) => audit(a),
        Command::Train(a) => train(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Experiment(a) => experiment(a, sub),
        Command::Report(a) => report(a),
    }
}

/// Exit code for an error: 2 for I/O failures, 1 otherwise.
pub fn exit_code(err: &Error) -> i32 {
    if err.is_io() {
        2
    } else {
        1
    }
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match Cli::command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            if e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand {
                eprint!("{e}");
                return 1;
            }
            let rendered = e.to_string();
            let line = rendered.lines().find(|l| !l.trim().is_empty()).unwrap_or("invalid arguments");
            eprintln!("{line}");
            return 1;
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {}", e.to_string().lines().next().unwrap_or("invalid arguments"));
            return 1;
        }
    };
    match dispatch(&cli, &matches) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.to_string().replace('\n', " "));
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn command_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn help_shows_module_defaults() {
        let mut cmd = Cli::command();
        let help = cmd
            .find_subcommand_mut("train")
            .unwrap()
            .render_long_help()
            .to_string();
        assert!(help.contains("[default: 0.1]"), "{help}");
        assert!(help.contains("[default: 500]"));
        assert!(help.contains("[default: full]"));
        let help = cmd
            .find_subcommand_mut("experiment")
            .unwrap()
            .render_long_help()
            .to_string();
        assert!(help.contains("[default: 20000]"));
        assert!(help.contains("[default: 0.55 0.65 0.75 0.85 0.92 0.98]"), "{help}");
    }

    #[test]
    fn flags_override_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.json");
        std::fs::write(&cfg, r#"{"n_seeds": 4, "alpha": 0.01, "train_config": {"patience": 3}}"#).unwrap();
        let argv = [
            "sepbias",
            "experiment",
            "ablation",
            "--config",
            cfg.to_str().unwrap(),
            "--n-seeds",
            "5",
            "--max-epochs",
            "7",
        ];
        let matches = Cli::command().try_get_matches_from(argv).unwrap();
        let cli = Cli::from_arg_matches(&matches).unwrap();
        let Command::Experiment(a) = &cli.command else { panic!() };
        let c = experiment_config(a, matches.subcommand().unwrap().1).unwrap();
        assert_eq!(c.n_seeds, 5);
        assert_eq!(c.alpha, 0.01);
        assert_eq!(c.train_config.patience, 3);
        assert_eq!(c.train_config.max_epochs, 7);
        assert_eq!(c.noise_rates.len(), 7);
    }

    #[test]
    fn overrides_sit_between_file_and_flags() {
        let argv = [
            "sepbias",
            "experiment",
            "degradation",
            "--set",
            "train_config.patience=3",
            "--set",
            "n_seeds=4",
            "--set",
            "arch=linear",
            "--n-seeds",
            "6",
        ];
        let matches = Cli::command().try_get_matches_from(argv).unwrap();
        let cli = Cli::from_arg_matches(&matches).unwrap();
        let Command::Experiment(a) = &cli.command else { panic!() };
        let c = experiment_config(a, matches.subcommand().unwrap().1).unwrap();
        assert_eq!(c.train_config.patience, 3);
        assert_eq!(c.arch, Arch::Linear);
        assert_eq!(c.n_seeds, 6);

        let base = ExperimentConfig::default();
        assert!(apply_overrides(&base, &["bogus=1".into()]).is_err());
        assert!(apply_overrides(&base, &["n_seeds".into()]).is_err());
        assert!(apply_overrides(&base, &["n_seeds=many".into()]).is_err());
    }
}
