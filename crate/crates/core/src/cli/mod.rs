//! Command-line driver. [`run`] parses arguments, dispatches a subcommand
//! and maps the outcome to an exit code.

mod config;

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

pub use config::RunConfig;

use crate::attacks::{adversarial_accuracy, AttackSpec, Norm};
use crate::attribution::{feature_leakage, insertion_game, AttributionMethod};
use crate::data::{block_mnist, synth_spurious, BlockConfig, Dataset, SpuriousConfig};
use crate::density_reg::Variant;
use crate::error::{Error, Result};
use crate::evalrep::{
    accuracy, auroc, density_robustness, emit_report, format_float, ood_scores,
    relative_gradient_robustness, OodScore, ReportFormat,
};
use crate::model::Model;
use crate::training::{train, TRAIN_LOG_HEADER};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;
pub const EXIT_STABILITY: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "margreg", version, about = "Marginal-density gradient regularization lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model from a config file.
    Train(TrainArgs),
    /// Clean (and optionally adversarial) accuracy of a checkpoint.
    Eval(EvalArgs),
    /// Mean null-block attribution norm on a dataset with masks.
    Leakage {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 32)]
        steps: usize,
    },
    /// Attribution map of one sample, written as CSV.
    Attribute(AttributeArgs),
    /// Pixel-perturbation gap or σ-robustness curve, written as CSV.
    Robustness(RobustnessArgs),
    /// AUROC separating in- from out-of-distribution samples.
    Ood {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "in-data")]
        in_data: PathBuf,
        #[arg(long = "out-data")]
        out_data: PathBuf,
        #[arg(long, default_value = "max-logit")]
        score: String,
    },
    /// Trains the naive, stable and efficient variants side by side.
    StabilityBench {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Writes a synthetic dataset to DIR/train and DIR/test.
    GenData(GenDataArgs),
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    reg: Option<String>,
    #[arg(long)]
    lambda: Option<String>,
    #[arg(long)]
    p: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// Checkpoint path; defaults to OUT_DIR/model.ckpt.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long = "out-dir")]
    out_dir: Option<String>,
    /// Any other `key=value` override.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// fgsm, pgd-l2 or pgd-linf.
    #[arg(long)]
    attack: Option<String>,
    #[arg(long, default_value_t = 0.3)]
    eps: f64,
    #[arg(long, default_value_t = 0.01)]
    alpha: f64,
    #[arg(long, default_value_t = 20)]
    steps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct AttributeArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "ig")]
    method: String,
    /// Target class; defaults to the sample's label.
    #[arg(long)]
    class: Option<usize>,
    #[arg(long, default_value_t = 0)]
    index: usize,
    #[arg(long)]
    out: PathBuf,
    /// Also write the insertion-game curve for the map here.
    #[arg(long)]
    insertion: Option<PathBuf>,
    #[arg(long = "step-fraction", default_value_t = 0.05)]
    step_fraction: f64,
}

#[derive(Args, Debug)]
struct RobustnessArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// pixel, gradient or density.
    #[arg(long)]
    mode: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0,0.05,0.1,0.2,0.3")]
    sigmas: Vec<f64>,
    #[arg(long = "k", value_delimiter = ',', default_value = "10,20,30,40,50")]
    k_grid: Vec<f64>,
    #[arg(long, default_value = "smoothgrad")]
    method: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// csv or json-lines.
    #[arg(long, default_value = "csv")]
    format: String,
}

#[derive(Args, Debug)]
struct GenDataArgs {
    /// block or spurious.
    #[arg(long)]
    kind: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    classes: usize,
    #[arg(long, default_value_t = 14)]
    side: usize,
    #[arg(long = "train-per-class", default_value_t = 200)]
    train_per_class: usize,
    #[arg(long = "test-per-class", default_value_t = 50)]
    test_per_class: usize,
    #[arg(long, default_value_t = 0.3)]
    noise: f64,
    #[arg(long, default_value_t = 2000)]
    n: usize,
    #[arg(long = "test-n", default_value_t = 4000)]
    test_n: usize,
    #[arg(long = "majority-fraction", default_value_t = 0.95)]
    majority_fraction: f64,
}

/// Runs the CLI on `args` (program name first), writing results to `out`
/// and diagnostics to `err`. Returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{text}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{text}");
                    EXIT_USAGE
                }
            };
        }
    };
    match dispatch(cli.command, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Stability { .. } => EXIT_STABILITY,
        Error::Config(_) => EXIT_USAGE,
        _ => EXIT_RUNTIME,
    }
}

fn emit(out: &mut dyn Write, line: String) -> Result<()> {
    writeln!(out, "{line}").map_err(|e| Error::io("<stdout>", e))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn dispatch(command: Command, out: &mut dyn Write) -> Result<()> {
    match command {
        Command::Train(a) => cmd_train(a, out),
        Command::Eval(a) => cmd_eval(a, out),
        Command::Leakage { model, data, steps } => {
            let model = Model::load(&model)?;
            let data = Dataset::load_dir(&data)?;
            emit(out, format!("leakage={}", format_float(feature_leakage(&model, &data, steps)?)))
        }
        Command::Attribute(a) => cmd_attribute(a, out),
        Command::Robustness(a) => cmd_robustness(a, out),
        Command::Ood {
            model,
            in_data,
            out_data,
            score,
        } => {
            let mode: OodScore = score.parse().map_err(|e: Error| Error::Config(e.to_string()))?;
            let model = Model::load(&model)?;
            let a = ood_scores(&model, &Dataset::load_dir(&in_data)?, mode)?;
            let b = ood_scores(&model, &Dataset::load_dir(&out_data)?, mode)?;
            emit(out, format!("auroc={}", format_float(auroc(&a, &b)?)))
        }
        Command::StabilityBench { config, out: csv } => cmd_stability(&config, &csv, out),
        Command::GenData(a) => cmd_gen_data(a, out),
    }
}

/// Builds the initial model described by the config for `data`.
pub fn initial_model(cfg: &RunConfig, data: &Dataset) -> Result<Model> {
    let mut sizes = vec![data.features()];
    sizes.extend(cfg.hidden()?);
    sizes.push(data.classes);
    let mut model = Model::init(&sizes, cfg.activation()?, cfg.seed()?)?;
    let scale = cfg.logit_scale()?;
    if scale != 1.0 {
        model.scale_output(scale);
    }
    Ok(model)
}

fn cmd_train(a: TrainArgs, out: &mut dyn Write) -> Result<()> {
    let mut cfg = RunConfig::load(&a.config)?;
    for (key, value) in [
        ("reg", &a.reg),
        ("lambda", &a.lambda),
        ("p", &a.p),
        ("seed", &a.seed),
        ("out_dir", &a.out_dir),
    ] {
        if let Some(v) = value {
            cfg.set(key, v)?;
        }
    }
    for kv in &a.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    let tc = cfg.train_config()?;
    if tc.reg.p_outside_studied_range() {
        let _ = emit(out, format!("warning: p={} lies outside the studied range", tc.reg.p));
    }
    let data = cfg.training_data()?;
    let model = initial_model(&cfg, &data)?;
    let dir = cfg.out_dir();
    write_file(&dir.join("resolved.cfg"), &cfg.to_text())?;
    let (model, log) = train(model, &data, &tc)?;
    log.write_csv(dir.join("train_log.csv"))?;
    let ckpt = a.out.unwrap_or_else(|| dir.join("model.ckpt"));
    if let Some(parent) = ckpt.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    model.save(&ckpt)?;
    if let Some(last) = log.last() {
        emit(
            out,
            format!(
                "steps={} ce_loss={} penalty={} finite={}",
                log.records.len(),
                format_float(last.ce_loss),
                format_float(last.penalty),
                last.finite
            ),
        )?;
    }
    emit(out, format!("checkpoint={}", ckpt.display()))
}

fn parse_attack(a: &EvalArgs, name: &str) -> Result<AttackSpec> {
    let spec = match name {
        "fgsm" => AttackSpec::fgsm(a.eps),
        "pgd-l2" => AttackSpec::pgd(Norm::L2, a.eps, a.alpha, a.steps, true, a.seed),
        "pgd-linf" | "pgd" => AttackSpec::pgd(Norm::Linf, a.eps, a.alpha, a.steps, true, a.seed),
        other => return Err(Error::Config(format!("unknown attack `{other}`"))),
    };
    spec.validate().map_err(|e| Error::Config(e.to_string()))?;
    Ok(spec)
}

fn cmd_eval(a: EvalArgs, out: &mut dyn Write) -> Result<()> {
    let attack = a.attack.as_deref().map(|n| parse_attack(&a, n)).transpose()?;
    let model = Model::load(&a.model)?;
    let data = Dataset::load_dir(&a.data)?;
    let report = accuracy(&model, &data)?;
    emit(out, format!("accuracy={}", format_float(report.overall)))?;
    if let Some(w) = report.worst_group {
        for (g, acc) in &report.per_group {
            emit(out, format!("group_{g}_accuracy={}", format_float(*acc)))?;
        }
        emit(out, format!("worst_group_accuracy={}", format_float(w)))?;
    }
    if let Some(spec) = attack {
        let adv = adversarial_accuracy(&model, &data, &spec)?;
        emit(out, format!("adversarial_accuracy={}", format_float(adv)))?;
    }
    Ok(())
}

fn cmd_attribute(a: AttributeArgs, out: &mut dyn Write) -> Result<()> {
    let method: AttributionMethod = a.method.parse().map_err(|e: Error| Error::Config(e.to_string()))?;
    let model = Model::load(&a.model)?;
    let data = Dataset::load_dir(&a.data)?;
    if a.index >= data.len() {
        return Err(Error::InvalidArgument(format!(
            "sample index {} out of range for {} samples",
            a.index,
            data.len()
        )));
    }
    let x = data.image(a.index);
    let class = a.class.unwrap_or(data.labels[a.index]);
    let map = method.compute(&model, x, class)?;
    emit_report(&map.to_table(), &a.out, ReportFormat::Csv)?;
    emit(out, format!("attribution_total={}", format_float(map.total())))?;
    if let Some(path) = &a.insertion {
        let (curve, auc) = insertion_game(&model, x, &map.scores, class, a.step_fraction)?;
        emit_report(&curve.to_table(), path, ReportFormat::Csv)?;
        emit(out, format!("insertion_auc={}", format_float(auc)))?;
    }
    Ok(())
}

fn cmd_robustness(a: RobustnessArgs, out: &mut dyn Write) -> Result<()> {
    let format: ReportFormat = a.format.parse().map_err(|e: Error| Error::Config(e.to_string()))?;
    let model = Model::load(&a.model)?;
    let data = Dataset::load_dir(&a.data)?;
    let curve = match a.mode.as_str() {
        "pixel" => {
            let method = match a.method.parse().map_err(|e: Error| Error::Config(e.to_string()))? {
                AttributionMethod::SmoothGrad { samples, sigma, .. } => AttributionMethod::SmoothGrad {
                    samples,
                    sigma,
                    seed: a.seed,
                },
                m => m,
            };
            crate::attribution::pixel_perturbation_gap(&model, &data, method, &a.k_grid)?
        }
        "gradient" => {
            let r = relative_gradient_robustness(&model, &data, &a.sigmas, a.seed)?;
            if r.skipped > 0 {
                emit(out, format!("skipped_zero_gradient={}", r.skipped))?;
            }
            r.curve
        }
        "density" => {
            let r = density_robustness(&model, &data, &a.sigmas, a.seed)?;
            emit(out, format!("finite={}", r.finite))?;
            r.curve
        }
        other => return Err(Error::Config(format!("unknown robustness mode `{other}`"))),
    };
    emit_report(&curve.to_table(), &a.out, format)?;
    for (x, y) in &curve.points {
        emit(out, format!("{}={}", format_float(*x), format_float(*y)))?;
    }
    Ok(())
}

/// Bench rows: the training log columns plus the variant name and step
/// wall time.
fn cmd_stability(config: &Path, csv: &Path, out: &mut dyn Write) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    let base = cfg.train_config()?;
    let data = cfg.training_data()?;
    let model = initial_model(&cfg, &data)?;
    if let Some(parent) = csv.parent().filter(|p| !p.as_os_str().is_empty()) {
        write_file(&parent.join("resolved.cfg"), &cfg.to_text())?;
    }
    let mut text = format!("variant,{TRAIN_LOG_HEADER},seconds\n");
    for variant in [
        Variant::MarginalNaive,
        Variant::MarginalStable,
        Variant::MarginalEfficient,
    ] {
        let mut tc = base.clone();
        tc.reg.variant = variant;
        tc.abort_on_nonfinite = false;
        let (_, log) = train(model.clone(), &data, &tc)?;
        for r in &log.records {
            let _ = writeln!(
                text,
                "{},{},{},{},{},{},{},{},{}",
                variant,
                r.epoch,
                r.step,
                format_float(r.ce_loss),
                format_float(r.penalty),
                format_float(r.total),
                format_float(r.input_grad_fro),
                r.finite,
                format_float(r.seconds)
            );
        }
        let first_bad = log.records.iter().position(|r| !r.finite);
        let mean_s = log.records.iter().map(|r| r.seconds).sum::<f64>() / log.records.len().max(1) as f64;
        emit(
            out,
            format!(
                "{variant}: steps={} first_nonfinite_step={} mean_step_seconds={}",
                log.records.len(),
                first_bad.map_or_else(|| "none".to_string(), |s| s.to_string()),
                format_float(mean_s)
            ),
        )?;
    }
    write_file(csv, &text)
}

fn cmd_gen_data(a: GenDataArgs, out: &mut dyn Write) -> Result<()> {
    let (train, test) = match a.kind.as_str() {
        "block" => block_mnist(&BlockConfig {
            classes: a.classes,
            side: a.side,
            train_per_class: a.train_per_class,
            test_per_class: a.test_per_class,
            noise: a.noise,
            seed: a.seed,
        })?,
        "spurious" => {
            let cfg = SpuriousConfig {
                majority_fraction: a.majority_fraction,
                n: a.n,
                seed: a.seed,
                ..SpuriousConfig::default()
            };
            let test_cfg = SpuriousConfig {
                n: a.test_n,
                seed: a.seed.wrapping_add(1),
                ..cfg.clone()
            };
            (synth_spurious(&cfg)?, synth_spurious(&test_cfg)?)
        }
        other => return Err(Error::Config(format!("unknown dataset kind `{other}`"))),
    };
    train.save_dir(a.out.join("train"))?;
    test.save_dir(a.out.join("test"))?;
    emit(out, format!("train={} test={}", train.len(), test.len()))
}
