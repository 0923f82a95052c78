use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use uniloc::identify::IdentifyMode;
use uniloc::nn::TrainRegime;
use uniloc::ot::OtSolver;
use uniloc::pipeline::{self, PipelineConfig};

/// Map-aided unified localization pipeline.
#[derive(Parser, Debug)]
#[command(name = "uniloc", version)]
struct Cli {
    #[command(flatten)]
    config: ConfigArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct ConfigArgs {
    /// TOML run configuration; overrides the preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Built-in configuration used when no file is given.
    #[arg(long, global = true, default_value = "desk", value_parser = ["desk", "reference"])]
    preset: String,
    /// Identification accuracy p_I in [0.5, 1].
    #[arg(long = "p-i", global = true)]
    p_i: Option<f64>,
    /// Map rule applied after the base identifier: refined or conservative.
    #[arg(long, global = true, value_parser = parse::<IdentifyMode>)]
    id_mode: Option<IdentifyMode>,
    /// Transport solver: sinkhorn or exact_lp.
    #[arg(long, global = true, value_parser = parse::<OtSolver>)]
    ot_solver: Option<OtSolver>,
    /// Entropic weight as a multiple of the median transport cost.
    #[arg(long, global = true)]
    ot_eps: Option<f64>,
    /// Sinkhorn iteration budget.
    #[arg(long, global = true)]
    ot_iters: Option<usize>,
    /// Transport target grid spacing in meters.
    #[arg(long, global = true)]
    delta_d: Option<f64>,
    /// Angle grid size of the pursuit dictionary.
    #[arg(long, global = true)]
    angle_grid: Option<usize>,
    /// Delay grid size of the pursuit dictionary.
    #[arg(long, global = true)]
    delay_grid: Option<usize>,
    /// Upper bound on paths extracted per user.
    #[arg(long, global = true)]
    max_paths: Option<usize>,
    /// Relative residual norm at which pursuit stops.
    #[arg(long, global = true)]
    residual_threshold: Option<f64>,
    /// Disable off-grid refinement of dictionary atoms.
    #[arg(long, global = true)]
    no_refine: bool,
    /// Training epochs.
    #[arg(long, global = true)]
    epochs: Option<usize>,
}

fn parse<T: std::str::FromStr<Err = uniloc::Error>>(s: &str) -> std::result::Result<T, String> {
    s.parse().map_err(|e: uniloc::Error| e.to_string())
}

impl ConfigArgs {
    fn resolve(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::load(p).with_context(|| format!("reading config {}", p.display()))?,
            None => PipelineConfig::preset(&self.preset)?,
        };
        if let Some(v) = self.p_i {
            cfg.identify.accuracy = v;
        }
        if let Some(v) = self.id_mode {
            cfg.identify.mode = v;
        }
        if let Some(v) = self.ot_solver {
            cfg.ot.solver = v;
        }
        if let Some(v) = self.ot_eps {
            cfg.ot.eps = v;
        }
        if let Some(v) = self.ot_iters {
            cfg.ot.max_iterations = v;
        }
        if let Some(v) = self.delta_d {
            cfg.ot.delta_d = v;
        }
        if let Some(v) = self.angle_grid {
            cfg.dictionary.angle_grid = v;
        }
        if let Some(v) = self.delay_grid {
            cfg.dictionary.delay_grid = v;
        }
        if let Some(v) = self.max_paths {
            cfg.dictionary.max_paths = v;
        }
        if let Some(v) = self.residual_threshold {
            cfg.dictionary.residual_threshold = v;
        }
        if self.no_refine {
            cfg.dictionary.refinement = false;
        }
        if let Some(v) = self.epochs {
            cfg.train.epochs = v;
        }
        cfg.validate().context("invalid configuration")?;
        Ok(cfg)
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print the resolved configuration as TOML.
    Config,
    /// Write train and test ULOC datasets.
    Generate {
        #[arg(long)]
        out: PathBuf,
    },
    /// Attach transport labels to a training dataset.
    Label {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a network under one regime and write a UMLP model.
    Train {
        /// Labeled dataset; not used by the fingerprint regime.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, default_value = "self_label", value_parser = parse::<TrainRegime>)]
        regime: TrainRegime,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a method on a test dataset; writes report.toml and error_cdf.csv.
    Evaluate {
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        model: Option<PathBuf>,
        /// model_based, unified, conservative or neural.
        #[arg(long, default_value = "unified")]
        method: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Retrain and evaluate for every p_I of the configured grid; writes sweep.csv.
    Sweep {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let cfg = cli.config.resolve()?;
    match cli.command {
        Command::Config => print!("{}", cfg.to_toml_string()),
        Command::Generate { out } => {
            let s = pipeline::run_generate(&cfg, &out)?;
            println!(
                "train: {} users ({} LoS, {} NLoS); test: {} users ({} LoS, {} NLoS)",
                s.train.users, s.train.los, s.train.nlos, s.test.users, s.test.los, s.test.nlos
            );
        }
        Command::Label { input, out } => {
            let ds = pipeline::run_label(&cfg, &input, &out)?;
            let n_los = ds.labels.as_ref().map_or(0, |l| l.iter().filter(|r| r.identified_los).count());
            println!("labeled {} users, {} identified LoS", ds.len(), n_los);
        }
        Command::Train { input, regime, out } => {
            if regime != TrainRegime::Fingerprint && input.is_none() {
                bail!("--input is required for the {regime:?} regime");
            }
            let (_, report) = pipeline::run_train(&cfg, regime, input.as_deref(), &out)?;
            if let Some(l) = report.loss_history.last() {
                println!("trained {} epochs, final loss {l:.6}", report.loss_history.len());
            }
        }
        Command::Evaluate { test, model, method, out } => {
            let r = pipeline::run_evaluate(&cfg, &method, &test, model.as_deref(), &out)?;
            println!("{}: MAE LoS {:.3} m, NLoS {:.3} m, all {:.3} m", r.method, r.mae_los, r.mae_nlos, r.mae_all);
        }
        Command::Sweep { train, test, out } => {
            let o = pipeline::run_sweep(&cfg, &train, &test, &out)?;
            for r in &o.rows {
                println!("p_I {:.2} {:>12}: all {:.3} m", r.p_i, r.method, r.mae_all);
            }
        }
    }
    Ok(())
}
