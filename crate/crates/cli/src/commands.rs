use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use dynbatch_core::data::generate_synthetic_corpus;
use dynbatch_core::data::{partition_corpus, preprocess_sample, VolumeSample, NUM_CLASSES};
use dynbatch_core::data::{read_corpus, write_corpus, CorpusManifest};
use dynbatch_core::metrics::{evaluate_regions, region_dice, RegionReport};
use dynbatch_core::model::{
    predict_labels, read_checkpoint, write_checkpoint, NetShape, SegmentationModel, TinySegNet,
};
use dynbatch_core::report;
use dynbatch_core::scheduler::{hard_sample_report, train, Ledger, PatientSummary, TrainRecord};
use dynbatch_core::Rng;

use crate::config::RunConfigFile;

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const LEDGER_FILE: &str = "ledger.csv";
pub const EPOCH_LOSS_FILE: &str = "epoch_loss.csv";
pub const PID_VS_COUNT_FILE: &str = "pid_vs_count.csv";
pub const PID_VS_DICE_FILE: &str = "pid_vs_dice.csv";
pub const HARD_SAMPLES_FILE: &str = "hard_samples.csv";

pub const DEFAULT_TOP_K: usize = 10;

pub fn cmd_gen_corpus(config: &Path, out: &Path) -> Result<CorpusManifest> {
    let cfg = RunConfigFile::load(config)?;
    let g = cfg.generator()?;
    let spec = g.spec();
    let corpus = generate_synthetic_corpus(&spec, &mut Rng::new(g.seed))?;
    let manifest = CorpusManifest::for_synthetic(&corpus, &spec.modalities);
    write_corpus(out, &manifest, &corpus.samples)
        .with_context(|| format!("cannot write corpus to {}", out.display()))?;
    Ok(manifest)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub record: TrainRecord,
    pub best_iteration: usize,
    pub best_mean_dice: f64,
    pub out_dir: PathBuf,
}

fn preprocess_all(samples: &[VolumeSample], threshold: f64) -> Result<Vec<VolumeSample>> {
    samples
        .iter()
        .map(|s| {
            preprocess_sample(s, threshold)
                .with_context(|| format!("cannot preprocess sample {}", s.patient_id()))
        })
        .collect()
}

/// Mean over patients of the (ET, WT, TC) dice average.
fn mean_training_dice<M: SegmentationModel>(
    model: &M,
    samples: &[VolumeSample],
) -> dynbatch_core::Result<f64> {
    let mut total = 0.0;
    for s in samples {
        let pred = predict_labels(model, s.input())?;
        total += region_dice(&pred, s.labels())?.iter().sum::<f64>() / 3.0;
    }
    Ok(total / samples.len() as f64)
}

pub fn cmd_train(config: &Path, out: &Path) -> Result<TrainOutcome> {
    let cfg = RunConfigFile::load(config)?;
    let train_cfg = cfg.train_config()?;
    let corpus_dir = cfg.corpus_dir()?;
    let (_, raw) = read_corpus(&corpus_dir)
        .with_context(|| format!("cannot load corpus {}", corpus_dir.display()))?;
    ensure!(
        !raw.is_empty(),
        "corpus {} has no samples",
        corpus_dir.display()
    );
    let channels = raw[0].channels();
    if let Some(s) = raw.iter().find(|s| s.channels() != channels) {
        bail!(
            "sample {} has {} modalities, expected {channels}",
            s.patient_id(),
            s.channels()
        );
    }
    let samples = preprocess_all(&raw, cfg.preprocess.foreground_threshold)?;
    let batches = partition_corpus(&samples, train_cfg.batch_size)?;
    let shape = NetShape {
        in_channels: channels,
        hidden: cfg.model.hidden,
        classes: NUM_CLASSES,
    };
    let mut model = TinySegNet::new(shape, &mut Rng::new(train_cfg.seed).fork())?;

    let mut best: Option<(usize, f64, Vec<f64>)> = None;
    let mut observer = |it: usize, m: &TinySegNet, _: &Ledger| {
        let d = mean_training_dice(m, &samples)?;
        if best.as_ref().is_none_or(|b| d > b.1) {
            best = Some((it, d, m.params().to_vec()));
        }
        Ok(())
    };
    let record = train(&mut model, &batches, &train_cfg, &mut observer)?;
    let (best_iteration, best_mean_dice, params) =
        best.context("training reported no iterations")?;
    let best_model = TinySegNet::from_params(shape, params)?;

    fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    write_checkpoint(
        &out.join(CHECKPOINT_FILE),
        &best_model,
        best_iteration,
        best_mean_dice,
    )?;
    report::write_ledger_csv(&out.join(LEDGER_FILE), &record.ledger)?;
    write(
        out,
        EPOCH_LOSS_FILE,
        &report::epoch_loss_csv(&record.epoch_losses),
    )?;
    write(
        out,
        PID_VS_COUNT_FILE,
        &report::pid_vs_count_csv(&report::count_by_patient(&record.ledger)),
    )?;
    let reports = evaluate_all(&best_model, &samples)?;
    write(
        out,
        PID_VS_DICE_FILE,
        &report::pid_vs_dice_csv(&avg_dice(&reports)?),
    )?;

    Ok(TrainOutcome {
        record,
        best_iteration,
        best_mean_dice,
        out_dir: out.to_path_buf(),
    })
}

fn write(dir: &Path, name: &str, text: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn avg_dice(reports: &[(String, RegionReport)]) -> Result<std::collections::BTreeMap<String, f64>> {
    let rows = report::parse_metrics_csv(&report::metrics_csv(reports))?;
    Ok(report::average_dice_by_patient(&rows)?)
}

/// Region scores per preprocessed sample, ordered by patient id.
fn evaluate_all(
    model: &TinySegNet,
    samples: &[VolumeSample],
) -> Result<Vec<(String, RegionReport)>> {
    let mut order: Vec<&VolumeSample> = samples.iter().collect();
    order.sort_by(|a, b| a.patient_id().cmp(b.patient_id()));
    order
        .into_iter()
        .map(|s| {
            let pred = predict_labels(model, s.input())
                .with_context(|| format!("cannot run model on sample {}", s.patient_id()))?;
            let r = evaluate_regions(&pred, s.labels())
                .with_context(|| format!("cannot score sample {}", s.patient_id()))?;
            Ok((s.patient_id().to_string(), r))
        })
        .collect()
}

/// `foreground_threshold` must match the one the checkpoint was trained with.
pub fn cmd_evaluate(
    checkpoint: &Path,
    corpus: &Path,
    out: &Path,
    foreground_threshold: f64,
) -> Result<Vec<(String, RegionReport)>> {
    let (_, model) = read_checkpoint(checkpoint)
        .with_context(|| format!("cannot load checkpoint {}", checkpoint.display()))?;
    let (_, raw) =
        read_corpus(corpus).with_context(|| format!("cannot load corpus {}", corpus.display()))?;
    let want = model.shape().in_channels;
    for s in &raw {
        if s.channels() != want {
            bail!(
                "sample {} has {} modalities but the checkpoint expects {want}",
                s.patient_id(),
                s.channels()
            );
        }
    }
    let samples = preprocess_all(&raw, foreground_threshold)?;
    let reports = evaluate_all(&model, &samples)?;
    fs::write(out, report::metrics_csv(&reports))
        .with_context(|| format!("cannot write {}", out.display()))?;
    Ok(reports)
}

/// Returns the top-k rows; the written table holds every patient.
pub fn cmd_report(
    ledger: &Path,
    metrics: &Path,
    out: &Path,
    top_k: Option<usize>,
) -> Result<Vec<PatientSummary>> {
    let ledger = report::read_ledger_csv(ledger)
        .with_context(|| format!("cannot read ledger {}", ledger.display()))?;
    let rows = report::read_metrics_csv(metrics)
        .with_context(|| format!("cannot read metrics {}", metrics.display()))?;
    let avg = report::average_dice_by_patient(&rows)?;
    let counts = report::count_by_patient(&ledger);

    let in_ledger: BTreeSet<&String> = counts.keys().collect();
    let in_metrics: BTreeSet<&String> = avg.keys().collect();
    let only_ledger: Vec<&str> = in_ledger
        .difference(&in_metrics)
        .map(|s| s.as_str())
        .collect();
    let only_metrics: Vec<&str> = in_metrics
        .difference(&in_ledger)
        .map(|s| s.as_str())
        .collect();
    if !only_ledger.is_empty() || !only_metrics.is_empty() {
        bail!(
            "patient ids differ between inputs; only in ledger: [{}]; only in metrics: [{}]",
            only_ledger.join(", "),
            only_metrics.join(", ")
        );
    }

    let hard = hard_sample_report(&ledger, top_k.unwrap_or(DEFAULT_TOP_K))?;
    fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    write(out, HARD_SAMPLES_FILE, &report::hard_samples_csv(&hard))?;
    write(out, PID_VS_DICE_FILE, &report::pid_vs_dice_csv(&avg))?;
    write(out, PID_VS_COUNT_FILE, &report::pid_vs_count_csv(&counts))?;
    Ok(hard.top().to_vec())
}
