//! `advcf`: train models, run color-filter and pixel attacks, evaluate
//! defenses and write reports.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use advcf_core::adv_training::adversarial_train;
use advcf_core::attacks::{Attack, StopPolicy};
use advcf_core::harness::{
    emit_report, read_json_report, run_attack_eval, run_defense_eval, run_style_eval, training_report,
    AdversarialExample, Config, EvalSettings, ExperimentReport, ReportFormat,
};
use advcf_core::image::cifar::load_cifar10;
use advcf_core::image::ppm::write_ppm;
use advcf_core::image::Dataset;
use advcf_core::model::{load_checkpoint, model_id, save_checkpoint, train, Checkpoint, Model, TinyCnn, TinyCnnShape};
use advcf_core::synthetic::write_synthetic_cifar;
use advcf_core::{Error, Result};
use clap::{Args, Parser, Subcommand};

/// Default number of evaluation images.
const DEFAULT_EVAL_LIMIT: usize = 500;

#[derive(Parser, Debug)]
#[command(name = "advcf", version, about = "Adversarial color-filter lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Key-value configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Model checkpoint to evaluate
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// CIFAR-10 binary directory
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long, default_value = "advcf-out")]
    out: PathBuf,
    /// Run on one worker thread
    #[arg(long)]
    single_thread: bool,
    /// Number of images to use (training images for train/advtrain)
    #[arg(long)]
    limit: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train TinyCNN on clean images
    Train(Common),
    /// Train TinyCNN on adversarial images from the configured attack
    Advtrain(Common),
    /// Attack evaluation images, with optional epsilon/K/random-search grid
    Attack(Common),
    /// Attack, then measure survival under input transformations
    Defend(Common),
    /// Robust accuracy over an epsilon x K grid
    Sweep(Common),
    /// Style presets versus plain and style-guided attacks
    Style(Common),
    /// Check and convert JSON reports
    Report {
        /// JSON reports to read
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        /// Output format for the converted copies
        #[arg(long, default_value = "csv")]
        format: String,
        #[arg(long, default_value = "advcf-out")]
        out: PathBuf,
    },
    /// Write a synthetic dataset in CIFAR-10 binary layout
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 5000)]
        train: usize,
        #[arg(long, default_value_t = 1000)]
        test: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Configuration and data shared by the experiment subcommands.
struct Session {
    common: Common,
    config: Config,
}

impl Session {
    fn open(common: Common) -> Result<Session> {
        let mut config = match &common.config {
            Some(path) => Config::load(path)?,
            None => Config::default(),
        };
        if let Some(seed) = common.seed {
            config.set("seed", &seed.to_string())?;
        }
        if let Some(dir) = &common.data {
            config.set("data.dir", &dir.display().to_string())?;
        }
        if let Some(ckpt) = &common.checkpoint {
            config.set("model.checkpoint", &ckpt.display().to_string())?;
        }
        if common.single_thread {
            rayon::ThreadPoolBuilder::new()
                .num_threads(1)
                .build_global()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        }
        fs::create_dir_all(&common.out).map_err(|e| Error::io(&common.out, e))?;
        Ok(Session { common, config })
    }

    fn seed(&self) -> Result<u64> {
        self.config.seed()
    }

    fn load_data(&self) -> Result<(Dataset, Dataset, Dataset)> {
        let dir = self
            .config
            .get_str("data.dir")
            .ok_or_else(|| Error::Config("no dataset: pass --data or set data.dir".into()))?;
        load_cifar10(dir)
    }

    fn eval_split(&self) -> Result<Dataset> {
        let (train, val, test) = self.load_data()?;
        match self.config.get_str("data.split").unwrap_or("test") {
            "test" => Ok(test),
            "val" => Ok(val),
            "train" => Ok(train),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }

    fn checkpoint(&self) -> Result<Checkpoint> {
        let path = self
            .config
            .get_str("model.checkpoint")
            .ok_or_else(|| Error::Config("no model: pass --checkpoint or set model.checkpoint".into()))?;
        load_checkpoint(path, None)
    }

    fn settings(&self, ckpt: &Checkpoint, only_correct_default: bool) -> Result<EvalSettings> {
        let limit = match self.common.limit {
            Some(n) => n,
            None => self.config.get_or("data.limit", DEFAULT_EVAL_LIMIT)?,
        };
        let mut config = self.config.clone();
        config.set("data.limit", &limit.to_string())?;
        Ok(EvalSettings {
            seed: self.seed()?,
            limit: Some(limit),
            only_correct: self.config.get_or("data.only_correct", only_correct_default)?,
            model_id: model_id(ckpt),
            config: config.entries().clone(),
        })
    }

    fn write_report(&self, report: &ExperimentReport, name: &str) -> Result<()> {
        let out = &self.common.out;
        emit_report(report, ReportFormat::Json, out.join(format!("{name}.json")))?;
        emit_report(report, ReportFormat::Csv, out.join(format!("{name}.csv")))?;
        print_summary(report);
        Ok(())
    }

    fn export_images(&self, examples: &[AdversarialExample]) -> Result<()> {
        if !self.config.get_or("output.images", true)? {
            return Ok(());
        }
        for e in examples {
            let dir = self.common.out.join("images").join(slug(&e.group));
            fs::create_dir_all(&dir).map_err(|err| Error::io(&dir, err))?;
            let tag = if e.success { "_fooled" } else { "" };
            let name = format!("{:05}_label{}{tag}.ppm", e.index, e.label);
            write_ppm(&e.image, dir.join(name))?;
        }
        Ok(())
    }

    fn training_sets(&self) -> Result<(Dataset, Dataset)> {
        let (train_set, val, _) = self.load_data()?;
        let limit = match self.common.limit {
            Some(n) => Some(n),
            None => self.config.get("train.limit")?,
        };
        Ok((limit.map_or(train_set.clone(), |n| train_set.take(n)), val))
    }

    fn fresh_model(&self) -> Result<Model> {
        let seed = self.config.get_or("model.init_seed", self.seed()?)?;
        Ok(TinyCnn::new(TinyCnnShape::default(), seed)?.into())
    }

    fn save_model(&self, ckpt: &Checkpoint) -> Result<PathBuf> {
        let path = self.common.out.join("model.ckpt");
        save_checkpoint(ckpt, &path)?;
        println!("checkpoint {} ({})", path.display(), model_id(ckpt));
        Ok(path)
    }
}

fn slug(group: &str) -> String {
    group
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '=' { c } else { '_' })
        .collect()
}

fn print_summary(report: &ExperimentReport) {
    for e in &report.epochs {
        let robust = e.robust_val_accuracy.map_or(String::new(), |r| format!(" robust {r:.4}"));
        println!(
            "epoch {:>3} loss {:.4} clean {:.4}{robust}",
            e.epoch, e.train_loss, e.clean_val_accuracy
        );
    }
    for a in &report.aggregates {
        println!(
            "{:<48} n={:<5} success {:.4} (on correct {:.4}) robust acc {:.4} iters {:.1}",
            a.group, a.attempts, a.success_rate, a.success_rate_on_correct, a.robust_accuracy, a.mean_iterations
        );
    }
}

fn cmd_train(session: Session, adversarial: bool) -> Result<()> {
    let (train_set, val) = session.training_sets()?;
    let hyper = session.config.sgd()?;
    let model = session.fresh_model()?;
    let run = if adversarial {
        let attack = session.config.attack(true)?;
        let limit: Option<usize> = session.config.get("advtrain.robust_val_limit")?;
        let robust_val = limit.map(|n| val.take(n));
        adversarial_train(model, &train_set, &val, &attack, &hyper, robust_val.as_ref().map(|d| (d, &attack)))?
    } else {
        train(model, &train_set, &val, &hyper)?
    };
    session.save_model(&run.checkpoint)?;
    let mut config = session.config.clone();
    config.set("train.limit", &train_set.len().to_string())?;
    let settings = EvalSettings {
        seed: session.seed()?,
        model_id: model_id(&run.checkpoint),
        config: config.entries().clone(),
        ..Default::default()
    };
    let kind = if adversarial { "advtrain" } else { "train" };
    session.write_report(&training_report(kind, &run, &settings), &format!("{kind}_report"))
}

fn cmd_attack(session: Session, sweep: bool) -> Result<()> {
    let ckpt = session.checkpoint()?;
    let data = session.eval_split()?;
    if sweep && session.config.list::<f64>("sweep.epsilons")?.is_none() && session.config.list::<usize>("sweep.pieces")?.is_none() {
        return Err(Error::Config("sweep needs sweep.epsilons or sweep.pieces".into()));
    }
    let attacks = session.config.attack_grid()?;
    let settings = session.settings(&ckpt, !sweep)?;
    let mut run = run_attack_eval(&ckpt.model, &data, &attacks, &settings)?;
    if sweep {
        run.report.kind = "sweep".into();
        session.write_report(&run.report, "sweep_report")
    } else {
        session.export_images(&run.examples)?;
        session.write_report(&run.report, "attack_report")
    }
}

fn cmd_defend(session: Session) -> Result<()> {
    let ckpt = session.checkpoint()?;
    let data = session.eval_split()?;
    let attacks: Vec<Attack> = match session.config.get_str("attack.kind") {
        Some(_) => session.config.attack_grid()?,
        None => {
            let mut with_ifgsm = session.config.clone();
            with_ifgsm.set("attack.kind", "ifgsm")?;
            vec![session.config.attack(false)?, with_ifgsm.attack(false)?]
        }
    };
    let defenses = session.config.defenses()?;
    let settings = session.settings(&ckpt, true)?;
    let run = run_attack_eval(&ckpt.model, &data, &attacks, &settings)?;
    session.write_report(&run.report, "attack_report")?;
    let groups = run.groups();
    let common = if session.config.get_or("defense.intersect", true)? {
        let refs: Vec<&str> = groups.iter().map(String::as_str).collect();
        Some(run.common_successes(&refs))
    } else {
        None
    };
    let report = run_defense_eval(&ckpt.model, &run, &defenses, common.as_ref(), &settings)?;
    session.write_report(&report, "defense_report")
}

fn cmd_style(session: Session) -> Result<()> {
    let ckpt = session.checkpoint()?;
    let data = session.eval_split()?;
    let presets = session.config.presets()?;
    let Attack::Advcf(mut base) = session.config.attack(false)? else {
        return Err(Error::Config("style evaluation needs attack.kind = advcf".into()));
    };
    // stopping at the first hit would leave the style term no room to act
    if session.config.get_str("attack.stop").is_none() {
        base.stop = StopPolicy::LowestLoss;
    }
    let settings = session.settings(&ckpt, true)?;
    let run = run_style_eval(&ckpt.model, &data, &presets, &base, &settings)?;
    session.export_images(&run.examples)?;
    session.write_report(&run.report, "style_report")
}

fn cmd_report(reports: &[PathBuf], format: &str, out: &Path) -> Result<()> {
    let format: ReportFormat = format.parse()?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    for path in reports {
        let report = read_json_report(path)?;
        if !report.aggregates_are_consistent() {
            return Err(Error::format(
                "report",
                format!("{}: aggregates do not match the rows", path.display()),
            ));
        }
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("report");
        let ext = if format == ReportFormat::Json { "json" } else { "csv" };
        emit_report(&report, format, out.join(format!("{stem}.{ext}")))?;
        println!("{} ({} rows, kind {})", path.display(), report.rows.len(), report.kind);
        print_summary(&report);
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(c) => cmd_train(Session::open(c)?, false),
        Command::Advtrain(c) => cmd_train(Session::open(c)?, true),
        Command::Attack(c) => cmd_attack(Session::open(c)?, false),
        Command::Sweep(c) => cmd_attack(Session::open(c)?, true),
        Command::Defend(c) => cmd_defend(Session::open(c)?),
        Command::Style(c) => cmd_style(Session::open(c)?),
        Command::Report { reports, format, out } => cmd_report(&reports, &format, &out),
        Command::Synth { out, train, test, seed } => {
            write_synthetic_cifar(&out, train, test, seed)?;
            println!("wrote {} ({} train, {} test)", out.display(), train, test);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 1 } else { 2 })
        }
    }
}
