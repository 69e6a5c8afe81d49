use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Map, Value};

use ooc_pll::config::{AblationSwitch, TrainConfig};
use ooc_pll::datagen::{LabeledExample, PartialDataset, TruthType};
use ooc_pll::io::{load_dataset_csv, load_partial_dataset, write_dataset_csv, write_sidecar};
use ooc_pll::report::{confidence_csv, loss_histogram_csv, selection_csv};
use ooc_pll::seeding::Stream;
use ooc_pll::selection::{estimate_proportions, RampSchedule};
use ooc_pll::synth::build_benchmark;
use ooc_pll::trainer::{metrics_csv, run_training_observed, threads_from_env, RampProbe, TrainOutcome};
use ooc_pll::Error;

const TRAIN_FILE: &str = "train.csv";
const SIDECAR_FILE: &str = "train_sidecar.csv";
const TEST_FILE: &str = "test.csv";
const VALIDATION_FILE: &str = "validation.csv";
const SWEEP_AXES: [&str; 9] = ["alpha", "beta", "phi", "eta", "gamma1", "gamma2", "q", "tau1", "tau2"];
const DATA_AXES: [&str; 3] = ["q", "tau1", "tau2"];
const HIST_BINS: usize = 50;

#[derive(Parser)]
#[command(name = "ooc-pll", version, about = "Partial-label learning with out-of-candidate examples")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic benchmark: train, sidecar, test and validation CSVs.
    Synth(SynthArgs),
    /// Train one model and write metrics, manifest, checkpoint and dumps.
    Train(TrainArgs),
    /// Train once per value of one config key and summarize.
    Sweep(SweepArgs),
    /// Estimate the selection proportions with a clean validation set.
    Estimate(EstimateArgs),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// Directory written by `synth`; synthesized from the config if absent.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, value_parser = ["ld", "rld", "rcg", "wce", "warmup"])]
    ablate: Option<String>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    axis: String,
    /// Comma-separated values.
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    values: Vec<String>,
    #[arg(long, value_parser = ["ld", "rld", "rcg", "wce", "warmup"])]
    ablate: Option<String>,
}

#[derive(Args)]
struct EstimateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Tolerated validation-accuracy drop, as a fraction.
    #[arg(long, default_value_t = 0.02)]
    epsilon: f64,
}

/// Failure mapped onto the process exit status.
enum Failure {
    Config(String),
    Io(String),
    NonFinite(String),
    Other(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Io(_) => 3,
            Failure::NonFinite(_) => 4,
            Failure::Other(_) => 1,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Io(m) | Failure::NonFinite(m) | Failure::Other(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::Config { .. } | Error::InvalidParameter { .. } => Failure::Config(msg),
            Error::NonFiniteLoss { .. } => Failure::NonFinite(msg),
            Error::Io(_)
            | Error::MissingFile(_)
            | Error::MalformedRow { .. }
            | Error::InconsistentDimension { .. }
            | Error::RowLabelOutOfRange { .. }
            | Error::Checkpoint(_) => Failure::Io(msg),
            _ => Failure::Other(msg),
        }
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn io_err(path: &Path, e: std::io::Error) -> Failure {
    Failure::Io(format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    fs::write(path, contents).map_err(|e| io_err(path, e))
}

fn create_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|e| io_err(path, e))
}

fn load_config(common: &Common) -> CliResult<TrainConfig> {
    let text = fs::read_to_string(&common.config)
        .map_err(|e| Failure::Config(format!("cannot read config {}: {e}", common.config.display())))?;
    let mut cfg = TrainConfig::parse(&text)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

struct Data {
    train: PartialDataset,
    test: Vec<LabeledExample>,
    validation: Option<Vec<LabeledExample>>,
    source: String,
}

fn load_data(cfg: &TrainConfig, dir: Option<&Path>) -> CliResult<Data> {
    match dir {
        Some(dir) => {
            let train = load_partial_dataset(&dir.join(TRAIN_FILE), &dir.join(SIDECAR_FILE))?;
            if train.classes() != cfg.classes {
                return Err(Failure::Config(format!(
                    "classes: config says {} but {} has {}",
                    cfg.classes,
                    dir.display(),
                    train.classes()
                )));
            }
            let test = load_dataset_csv(&dir.join(TEST_FILE), Some(cfg.classes))?;
            let vpath = dir.join(VALIDATION_FILE);
            let validation = if vpath.exists() {
                Some(load_dataset_csv(&vpath, Some(cfg.classes))?)
            } else {
                None
            };
            Ok(Data {
                train,
                test,
                validation,
                source: dir.display().to_string(),
            })
        }
        None => {
            let b = build_benchmark(cfg)?;
            Ok(Data {
                train: b.train,
                test: b.test,
                validation: Some(b.validation),
                source: "synthesized".into(),
            })
        }
    }
}

fn apply_ablation(cfg: &mut TrainConfig, ablate: Option<&str>) -> CliResult<()> {
    if let Some(name) = ablate {
        let switch = AblationSwitch::parse(name)
            .ok_or_else(|| Failure::Config(format!("ablate: unknown switch `{name}`")))?;
        cfg.ablations.set(switch, true);
        if cfg.ablations.active().len() > 1 {
            return Err(Failure::Config(format!(
                "ablate: config already disables another component; `{name}` would make two"
            )));
        }
        cfg.validate()?;
    }
    Ok(())
}

fn json_value(v: &str) -> Value {
    if let Ok(b) = v.parse::<bool>() {
        return Value::Bool(b);
    }
    if let Ok(i) = v.parse::<i64>() {
        return Value::from(i);
    }
    match v.parse::<f64>() {
        Ok(f) if f.is_finite() => Value::from(f),
        _ => Value::String(v.to_string()),
    }
}

fn manifest(cfg: &TrainConfig, command: &str, data: &str) -> String {
    let config: Map<String, Value> = cfg
        .entries()
        .into_iter()
        .map(|(k, v)| (k.to_string(), json_value(&v)))
        .collect();
    let streams: Map<String, Value> = [
        ("data", Stream::Data),
        ("corruption", Stream::Corruption),
        ("test", Stream::Test),
        ("init", Stream::Init),
        ("shuffle", Stream::Shuffle),
        ("candidates", Stream::Candidates),
        ("validation", Stream::Validation),
    ]
    .into_iter()
    .map(|(k, s)| (k.to_string(), Value::from(s as u64)))
    .collect();
    let v = json!({
        "tool": "ooc-pll",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "data": data,
        "threads": threads_from_env(),
        "seed": cfg.seed,
        "rng": "chacha8",
        "streams": streams,
        "config": config,
    });
    let mut s = serde_json::to_string_pretty(&v).expect("manifest serializes");
    s.push('\n');
    s
}

fn cmd_synth(args: &SynthArgs) -> CliResult<()> {
    let cfg = load_config(&args.common)?;
    let b = build_benchmark(&cfg)?;
    let out = &args.common.out;
    create_dir(out)?;
    write_dataset_csv(&out.join(TRAIN_FILE), b.train.examples())?;
    write_sidecar(&out.join(SIDECAR_FILE), &b.train)?;
    write_dataset_csv(&out.join(TEST_FILE), &b.test)?;
    write_dataset_csv(&out.join(VALIDATION_FILE), &b.validation)?;
    write_file(&out.join("manifest.json"), &manifest(&cfg, "synth", "synthesized"))?;
    println!(
        "train {} (normal {}, closed_set {}, open_set {}), test {}",
        b.train.len(),
        b.train.count(TruthType::Normal),
        b.train.count(TruthType::ClosedSet),
        b.train.count(TruthType::OpenSet),
        b.test.len()
    );
    Ok(())
}

/// Trains and writes every artifact of one run into `out`.
fn train_into(cfg: &TrainConfig, data: &Data, out: &Path) -> CliResult<TrainOutcome> {
    create_dir(out)?;
    let selection_dir = out.join("selection");
    if cfg.dump_selection {
        create_dir(&selection_dir)?;
    }
    let mut dump_failure: Option<Failure> = None;
    let mut last_hist: Option<String> = None;
    let outcome = run_training_observed(cfg, &data.train, &data.test, threads_from_env(), &mut |view| {
        if let (Some(scores), Some(partition)) = (view.scores, view.partition) {
            if cfg.dump_selection {
                let path = selection_dir.join(format!("epoch_{:04}.csv", view.metrics.epoch));
                let body = selection_csv(scores, partition, view.dataset.truth())?;
                if let Err(e) = fs::write(&path, body) {
                    dump_failure = Some(io_err(&path, e));
                    return Err(Error::Io(std::io::Error::other("selection dump failed")));
                }
            }
            if view.metrics.epoch + 1 == cfg.t_max {
                last_hist = Some(loss_histogram_csv(scores, view.dataset.truth(), HIST_BINS)?);
            }
        }
        Ok(())
    });
    let outcome = match (outcome, dump_failure) {
        (_, Some(f)) => return Err(f),
        (r, None) => r?,
    };
    write_file(&out.join("metrics.csv"), &metrics_csv(&outcome.metrics))?;
    write_file(&out.join("manifest.json"), &manifest(cfg, "train", &data.source))?;
    write_file(&out.join("model.ckpt"), &outcome.model.to_checkpoint())?;
    write_file(
        &out.join("confidence.csv"),
        &confidence_csv(&outcome.table, outcome.partition.as_ref(), &data.train)?,
    )?;
    if let Some(h) = last_hist {
        write_file(&out.join("loss_hist.csv"), &h)?;
    }
    Ok(outcome)
}

fn cmd_train(args: &TrainArgs) -> CliResult<()> {
    let mut cfg = load_config(&args.common)?;
    apply_ablation(&mut cfg, args.ablate.as_deref())?;
    let data = load_data(&cfg, args.data.as_deref())?;
    let outcome = train_into(&cfg, &data, &args.common.out)?;
    println!("final test accuracy {:.4}", outcome.final_metrics().test_accuracy);
    Ok(())
}

fn opt_cell(v: Option<f64>) -> String {
    v.map(ooc_pll::io::fmt_f64).unwrap_or_default()
}

fn cmd_sweep(args: &SweepArgs) -> CliResult<()> {
    if !SWEEP_AXES.contains(&args.axis.as_str()) {
        return Err(Failure::Config(format!(
            "axis: `{}` is not one of {}",
            args.axis,
            SWEEP_AXES.join(", ")
        )));
    }
    if args.values.is_empty() {
        return Err(Failure::Config("values: empty list".into()));
    }
    let regenerate = DATA_AXES.contains(&args.axis.as_str());
    if regenerate && args.data.is_some() {
        return Err(Failure::Config(format!(
            "axis: `{}` changes data synthesis and cannot be combined with --data",
            args.axis
        )));
    }
    let mut base = load_config(&args.common)?;
    apply_ablation(&mut base, args.ablate.as_deref())?;

    // Validate the whole grid before training anything.
    let mut configs = Vec::with_capacity(args.values.len());
    for value in &args.values {
        let mut cfg = base.clone();
        cfg.set(&args.axis, value)?;
        cfg.validate()?;
        configs.push((value, cfg));
    }

    let shared = if regenerate {
        None
    } else {
        Some(load_data(&base, args.data.as_deref())?)
    };
    create_dir(&args.common.out)?;
    let mut summary = String::from("axis,value,final_accuracy,precision_normal,precision_closed,precision_open\n");
    for (value, cfg) in &configs {
        let own;
        let data = match &shared {
            Some(d) => d,
            None => {
                own = load_data(cfg, None)?;
                &own
            }
        };
        let dir = args.common.out.join(format!("{}_{}", args.axis, value));
        let outcome = train_into(cfg, data, &dir)?;
        let m = outcome.final_metrics();
        summary.push_str(&format!(
            "{},{},{},{},{},{}\n",
            args.axis,
            value,
            ooc_pll::io::fmt_f64(m.test_accuracy),
            opt_cell(m.precision_normal),
            opt_cell(m.precision_closed),
            opt_cell(m.precision_open)
        ));
        println!("{}={value}: final test accuracy {:.4}", args.axis, m.test_accuracy);
    }
    write_file(&args.common.out.join("summary.csv"), &summary)
}

fn cmd_estimate(args: &EstimateArgs) -> CliResult<()> {
    let cfg = load_config(&args.common)?;
    let data = load_data(&cfg, args.data.as_deref())?;
    let validation = data.validation.as_deref().ok_or_else(|| {
        Failure::Io(format!(
            "{VALIDATION_FILE}: no clean validation set in {}",
            data.source
        ))
    })?;
    let mut probe = RampProbe::new(&cfg, &data.train, validation)?;
    let est = estimate_proportions(&mut probe, args.epsilon, &RampSchedule::default())?;
    create_dir(&args.common.out)?;
    let mut trace = String::from("step,validation_accuracy\n");
    for (i, a) in est.trace.iter().enumerate() {
        trace.push_str(&format!("{i},{}\n", ooc_pll::io::fmt_f64(*a)));
    }
    write_file(&args.common.out.join("ramp_trace.csv"), &trace)?;
    let body = format!("normal = {}\ngamma1 = {}\ngamma2 = {}\n", est.normal, est.gamma1, est.gamma2);
    write_file(&args.common.out.join("proportions.txt"), &body)?;
    print!("{body}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Estimate(a) => cmd_estimate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
