//! File-based stages behind the command-line tool. Each stage writes its
//! outputs plus a `manifest.toml` (or `<output>.manifest.toml` for single
//! file outputs).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::channel::container::Dataset;
use crate::nn::{MlpModel, TrainRegime, TrainReport};
use crate::{Error, Result};

use super::config::PipelineConfig;
use super::dataset::{fingerprint_grid, generate_dataset, label_dataset, LabeledDataset};
use super::eval::{evaluate, sweep_p_i, test_identifier, write_sweep_csv, EvalReport, Method, RunMetadata, SweepOutcome, TestSet};
use super::manifest::Manifest;
use super::regimes::train_model;
use crate::identify::IdentifyMode;

/// LoS/NLoS counts written next to generated datasets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub users: usize,
    pub los: usize,
    pub nlos: usize,
}

impl SplitSummary {
    pub fn of(ds: &Dataset) -> Self {
        let los = ds.records.iter().filter(|r| r.true_los).count();
        SplitSummary { users: ds.len(), los, nlos: ds.len() - los }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerateSummary {
    pub train: SplitSummary,
    pub test: SplitSummary,
}

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest.toml");
    PathBuf::from(s)
}

/// Writes `train.uloc`, `test.uloc`, `summary.toml` and `manifest.toml`
/// into `out_dir`.
pub fn run_generate(cfg: &PipelineConfig, out_dir: &Path) -> Result<GenerateSummary> {
    cfg.validate()?;
    let scene = cfg.load_scene()?;
    std::fs::create_dir_all(out_dir)?;
    let train = generate_dataset(&scene, &cfg.system, &cfg.tracer, cfg.data.n_train, cfg.data.train_seed)?;
    let test = generate_dataset(&scene, &cfg.system, &cfg.tracer, cfg.data.n_test, cfg.data.test_seed)?;
    let summary = GenerateSummary { train: SplitSummary::of(&train), test: SplitSummary::of(&test) };
    let (tp, sp, mp) = (out_dir.join("train.uloc"), out_dir.join("test.uloc"), out_dir.join("summary.toml"));
    train.save(&tp)?;
    test.save(&sp)?;
    std::fs::write(&mp, toml::to_string(&summary).expect("summary serializes"))?;
    Manifest::new("generate", cfg, &[], &[&tp, &sp, &mp])?.save(out_dir.join("manifest.toml"))?;
    Ok(summary)
}

/// Adds model-based estimates, identification flags and transport labels.
pub fn run_label(cfg: &PipelineConfig, input: &Path, output: &Path) -> Result<Dataset> {
    cfg.validate()?;
    let scene = cfg.load_scene()?;
    let ds = Dataset::load(input)?;
    let ds = label_dataset(ds, &scene, cfg.dictionary.resolve(&scene), &cfg.identify, &cfg.ot)?;
    ds.save(output)?;
    Manifest::new("label", cfg, &[input], &[output])?.save(sidecar(output))?;
    Ok(ds)
}

/// Trains a model. `Fingerprint` ignores `input` and trains on the grid
/// described by `cfg.fingerprint`; the other regimes need a labeled input.
/// Also writes `<output>.loss.csv`.
pub fn run_train(cfg: &PipelineConfig, regime: TrainRegime, input: Option<&Path>, output: &Path) -> Result<(MlpModel, TrainReport)> {
    cfg.validate()?;
    let scene = cfg.load_scene()?;
    let ds = match (regime, input) {
        (TrainRegime::Fingerprint, _) => {
            let f = &cfg.fingerprint;
            fingerprint_grid(&scene, &cfg.system, &cfg.tracer, f.delta_s, f.cap, f.seed)?
        }
        (_, Some(p)) => Dataset::load(p)?,
        (_, None) => return Err(Error::Config(format!("the {regime:?} regime needs a labeled dataset"))),
    };
    let data = LabeledDataset::new(ds, &scene)?;
    let (model, report) = train_model(&data, regime, &cfg.network, &cfg.train)?;
    model.save(output)?;
    let mut loss = PathBuf::from(output.as_os_str().to_owned());
    loss.set_extension("loss.csv");
    let mut csv = String::from("epoch,loss\n");
    for (e, l) in report.loss_history.iter().enumerate() {
        csv.push_str(&format!("{e},{l}\n"));
    }
    std::fs::write(&loss, csv)?;
    let inputs: Vec<&Path> = input.filter(|_| regime != TrainRegime::Fingerprint).into_iter().collect();
    Manifest::new("train", cfg, &inputs, &[output, &loss])?.save(sidecar(output))?;
    Ok((model, report))
}

/// Writes `report.toml`, `error_cdf.csv` and `manifest.toml` into
/// `out_dir`. The identification accuracy and mode come from
/// `cfg.identify`.
pub fn run_evaluate(cfg: &PipelineConfig, method: &str, test: &Path, model: Option<&Path>, out_dir: &Path) -> Result<EvalReport> {
    cfg.validate()?;
    let scene = cfg.load_scene()?;
    let method = match method {
        "model_based" | "model-based" => Method::ModelBased,
        "unified" => Method::Unified(test_identifier(cfg, cfg.identify.accuracy, IdentifyMode::Refined)),
        "conservative" => Method::Unified(test_identifier(cfg, cfg.identify.accuracy, IdentifyMode::Conservative)),
        "neural" | "fingerprint" | "channel_charting" | "channel-charting" => Method::Neural,
        other => return Err(Error::Config(format!("unknown method `{other}`"))),
    };
    let ds = Dataset::load(test)?;
    let set = TestSet::prepare(&ds, &scene, cfg)?;
    let loaded = model.map(MlpModel::load).transpose()?;
    let report = evaluate(&set, &method, loaded.as_ref(), &scene, RunMetadata::for_config(cfg))?;
    std::fs::create_dir_all(out_dir)?;
    let (rp, cp) = (out_dir.join("report.toml"), out_dir.join("error_cdf.csv"));
    std::fs::write(&rp, report.to_toml_string())?;
    report.save_cdf_csv(&cp)?;
    let mut inputs = vec![test];
    inputs.extend(model);
    Manifest::new("evaluate", cfg, &inputs, &[&rp, &cp])?.save(out_dir.join("manifest.toml"))?;
    Ok(report)
}

/// Writes `sweep.csv` and `manifest.toml` into `out_dir`.
pub fn run_sweep(cfg: &PipelineConfig, train: &Path, test: &Path, out_dir: &Path) -> Result<SweepOutcome> {
    cfg.validate()?;
    let scene = cfg.load_scene()?;
    let train_ds = Dataset::load(train)?;
    let set = TestSet::prepare(&Dataset::load(test)?, &scene, cfg)?;
    let outcome = sweep_p_i(cfg, &scene, &train_ds, &set)?;
    std::fs::create_dir_all(out_dir)?;
    let sp = out_dir.join("sweep.csv");
    let mut f = std::io::BufWriter::new(std::fs::File::create(&sp)?);
    write_sweep_csv(&outcome.rows, &mut f)?;
    std::io::Write::flush(&mut f)?;
    drop(f);
    Manifest::new("sweep", cfg, &[train, test], &[&sp])?.save(out_dir.join("manifest.toml"))?;
    Ok(outcome)
}
