//! Loss-sorted dynamic batch scheduling.
//!
//! Each batch carries a ledger entry holding the loss from its most recent
//! forward pass and the number of times it has been trained. Traditional
//! training visits every batch once per epoch in shuffled order. Dynamic
//! training runs `floor(E/2)` outer iterations; each is one shuffled pass over
//! all batches followed by `floor(1/δ)` rounds that re-sort the ledger by
//! descending loss and train the top `ceil(δ·N)` batches.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::BatchUnit;
use crate::error::{Error, Result};
use crate::losses::{batch_conditional_loss, loss_gradient, LossConfig, LossKind};
use crate::model::{AdamConfig, AdamState, SegmentationModel};
use crate::numerics::Rng;

// Absorbs representation error in 1/δ and δ·N (1/0.2, 0.2·10, ...).
const COUNT_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    Traditional,
    Dynamic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub delta: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub loss: LossConfig,
    pub optimizer: AdamConfig,
    pub seed: u64,
    pub mode: TrainMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            delta: 0.2,
            epochs: 50,
            batch_size: 64,
            loss: LossConfig::default(),
            optimizer: AdamConfig::default(),
            seed: 0,
            mode: TrainMode::Dynamic,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return Err(Error::Config(format!(
                "delta must lie in (0, 1], got {}",
                self.delta
            )));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        self.loss.validate()?;
        self.optimizer.validate()
    }
}

/// Rounds per dynamic phase: `floor(1/δ)`, at least 1.
pub fn rounds_per_phase(delta: f64) -> usize {
    ((1.0 / delta + COUNT_SLACK).floor() as usize).max(1)
}

fn ceil_slack(x: f64) -> usize {
    (x - COUNT_SLACK).ceil() as usize
}

/// Batches selected in each round of a dynamic phase.
///
/// Round `r` (1-based) takes `ceil(r·δ·N) - ceil((r-1)·δ·N)` batches, clamped
/// to `[1, N]`. Every round takes `δ·N` when that is an integer; otherwise the
/// rounding is spread so a phase trains `ceil(rounds·δ·N)` batches in total.
pub fn round_selections(delta: f64, batches: usize) -> Vec<usize> {
    let per_round = delta * batches as f64;
    (1..=rounds_per_phase(delta))
        .map(|r| {
            let k = ceil_slack(r as f64 * per_round) - ceil_slack((r - 1) as f64 * per_round);
            k.clamp(1, batches.max(1))
        })
        .collect()
}

/// Batch-trainings executed by a dynamic run over `batches` for `epochs`.
pub fn dynamic_budget(delta: f64, epochs: usize, batches: usize) -> usize {
    let outer = epochs / 2;
    let tail = if epochs % 2 == 1 { batches } else { 0 };
    outer * (batches + round_selections(delta, batches).iter().sum::<usize>()) + tail
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub batch_id: usize,
    pub patient_id: String,
    pub last_loss: f64,
    pub train_count: u64,
}

/// One entry per batch, in batch order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Ledger {
    entries: Vec<LedgerEntry>,
}

impl Ledger {
    pub fn for_batches(batches: &[BatchUnit]) -> Self {
        Self {
            entries: batches
                .iter()
                .map(|b| LedgerEntry {
                    batch_id: b.batch_id,
                    patient_id: b.patient_id.clone(),
                    last_loss: 0.0,
                    train_count: 0,
                })
                .collect(),
        }
    }

    pub fn from_entries(entries: Vec<LedgerEntry>) -> Self {
        Self { entries }
    }

    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn record(&mut self, pos: usize, loss: f64) {
        let e = &mut self.entries[pos];
        e.last_loss = loss;
        e.train_count += 1;
    }

    /// Positions ordered by descending last loss, ties by ascending batch id.
    pub fn ranked(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.entries.len()).collect();
        order.sort_by(|&a, &b| rank_cmp(&self.entries[a], &self.entries[b]));
        order
    }

    pub fn total_trainings(&self) -> u64 {
        self.entries.iter().map(|e| e.train_count).sum()
    }
}

fn rank_cmp(a: &LedgerEntry, b: &LedgerEntry) -> Ordering {
    b.last_loss
        .total_cmp(&a.last_loss)
        .then(a.batch_id.cmp(&b.batch_id))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// Every batch once, shuffled.
    Regular,
    /// Loss-sorted rounds over the hardest batches.
    Dynamic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    pub phase: Phase,
    pub mean_loss: f64,
    pub trainings: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainRecord {
    pub epoch_losses: Vec<EpochLoss>,
    pub ledger: Ledger,
    pub total_trainings: usize,
    /// Batch ids in the order they were trained.
    pub training_order: Vec<usize>,
    /// Number of epoch (traditional) or outer-iteration (dynamic) boundaries reported.
    pub iterations: usize,
}

/// Hook invoked at the end of each epoch (traditional) or outer iteration
/// (dynamic), e.g. to evaluate and checkpoint the model.
pub trait TrainObserver<M> {
    fn on_iteration_end(&mut self, iteration: usize, model: &M, ledger: &Ledger) -> Result<()>;
}

/// Observer that does nothing.
pub struct NoObserver;

impl<M> TrainObserver<M> for NoObserver {
    fn on_iteration_end(&mut self, _: usize, _: &M, _: &Ledger) -> Result<()> {
        Ok(())
    }
}

impl<M, F> TrainObserver<M> for F
where
    F: FnMut(usize, &M, &Ledger) -> Result<()>,
{
    fn on_iteration_end(&mut self, iteration: usize, model: &M, ledger: &Ledger) -> Result<()> {
        self(iteration, model, ledger)
    }
}

struct Session<'a, M> {
    model: &'a mut M,
    batches: &'a [BatchUnit],
    loss: LossConfig,
    optimizer: AdamState,
    ledger: Ledger,
    rng: Rng,
    order: Vec<usize>,
    epoch_losses: Vec<EpochLoss>,
}

impl<'a, M: SegmentationModel> Session<'a, M> {
    fn new(model: &'a mut M, batches: &'a [BatchUnit], cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        if batches.is_empty() {
            return Err(Error::Config("no batches to train on".into()));
        }
        let mut ids: Vec<usize> = batches.iter().map(|b| b.batch_id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("batch ids must be unique".into()));
        }
        let optimizer = AdamState::new(cfg.optimizer, model.params().len());
        Ok(Self {
            model,
            batches,
            loss: cfg.loss,
            optimizer,
            ledger: Ledger::for_batches(batches),
            rng: Rng::new(cfg.seed),
            order: Vec::new(),
            epoch_losses: Vec::new(),
        })
    }

    /// Forward, loss, ledger update, backward, optimizer step.
    fn train_batch(&mut self, pos: usize) -> Result<f64> {
        let batch = &self.batches[pos];
        let context = |e: Error| Error::Numeric(format!("batch {}: {e}", batch.batch_id));
        let pred = self.model.forward(&batch.input)?;
        let loss = batch_conditional_loss(&batch.target, &pred, &self.loss).map_err(context)?;
        if !loss.total.is_finite() {
            return Err(Error::Numeric(format!(
                "batch {} ({}): non-finite loss {}",
                batch.batch_id, batch.patient_id, loss.total
            )));
        }
        let d_prob = loss_gradient(&batch.target, &pred, &self.loss, LossKind::BatchConditional)
            .map_err(context)?;
        let grads = self.model.backward(&batch.input, &d_prob)?;
        self.optimizer
            .step(self.model.params_mut(), &grads)
            .map_err(context)?;
        self.ledger.record(pos, loss.total);
        self.order.push(batch.batch_id);
        Ok(loss.total)
    }

    fn regular_pass(&mut self, epoch: usize) -> Result<()> {
        let mut positions: Vec<usize> = (0..self.batches.len()).collect();
        self.rng.shuffle(&mut positions);
        let mut sum = 0.0;
        for &pos in &positions {
            sum += self.train_batch(pos)?;
        }
        self.epoch_losses.push(EpochLoss {
            epoch,
            phase: Phase::Regular,
            mean_loss: sum / positions.len() as f64,
            trainings: positions.len(),
        });
        Ok(())
    }

    fn dynamic_phase(&mut self, epoch: usize, selections: &[usize]) -> Result<()> {
        let mut sum = 0.0;
        for &select in selections {
            let ranked = self.ledger.ranked();
            for &pos in &ranked[..select] {
                sum += self.train_batch(pos)?;
            }
        }
        let trainings: usize = selections.iter().sum();
        self.epoch_losses.push(EpochLoss {
            epoch,
            phase: Phase::Dynamic,
            mean_loss: sum / trainings as f64,
            trainings,
        });
        Ok(())
    }

    fn finish(self, iterations: usize) -> TrainRecord {
        TrainRecord {
            epoch_losses: self.epoch_losses,
            total_trainings: self.order.len(),
            training_order: self.order,
            ledger: self.ledger,
            iterations,
        }
    }
}

/// Plain mini-batch training: every batch once per epoch, shuffled each epoch.
pub fn traditional_train<M, O>(
    model: &mut M,
    batches: &[BatchUnit],
    cfg: &TrainConfig,
    observer: &mut O,
) -> Result<TrainRecord>
where
    M: SegmentationModel,
    O: TrainObserver<M>,
{
    if cfg.mode != TrainMode::Traditional {
        return Err(Error::Config(
            "traditional_train needs mode = traditional".into(),
        ));
    }
    let mut s = Session::new(model, batches, cfg)?;
    for epoch in 0..cfg.epochs {
        s.regular_pass(epoch)?;
        observer.on_iteration_end(epoch, s.model, &s.ledger)?;
    }
    Ok(s.finish(cfg.epochs))
}

/// Dynamic batch training. Odd epoch budgets end with one extra regular pass.
pub fn dynamic_train<M, O>(
    model: &mut M,
    batches: &[BatchUnit],
    cfg: &TrainConfig,
    observer: &mut O,
) -> Result<TrainRecord>
where
    M: SegmentationModel,
    O: TrainObserver<M>,
{
    if cfg.mode != TrainMode::Dynamic {
        return Err(Error::Config("dynamic_train needs mode = dynamic".into()));
    }
    let mut s = Session::new(model, batches, cfg)?;
    let selections = round_selections(cfg.delta, batches.len());
    let outer = cfg.epochs / 2;
    for it in 0..outer {
        s.regular_pass(2 * it)?;
        s.dynamic_phase(2 * it + 1, &selections)?;
        observer.on_iteration_end(it, s.model, &s.ledger)?;
    }
    let mut iterations = outer;
    if cfg.epochs % 2 == 1 {
        s.regular_pass(cfg.epochs - 1)?;
        observer.on_iteration_end(outer, s.model, &s.ledger)?;
        iterations += 1;
    }
    Ok(s.finish(iterations))
}

/// Dispatch on `cfg.mode`.
pub fn train<M, O>(
    model: &mut M,
    batches: &[BatchUnit],
    cfg: &TrainConfig,
    observer: &mut O,
) -> Result<TrainRecord>
where
    M: SegmentationModel,
    O: TrainObserver<M>,
{
    match cfg.mode {
        TrainMode::Traditional => traditional_train(model, batches, cfg, observer),
        TrainMode::Dynamic => dynamic_train(model, batches, cfg, observer),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatientSummary {
    pub patient_id: String,
    pub train_count: u64,
    pub mean_last_loss: f64,
    pub batches: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HardSampleReport {
    /// Every patient, by train count descending then patient id ascending.
    pub rows: Vec<PatientSummary>,
    pub top_k: usize,
}

impl HardSampleReport {
    pub fn top(&self) -> &[PatientSummary] {
        &self.rows[..self.top_k.min(self.rows.len())]
    }
}

/// Aggregate the ledger per patient and rank by total train count.
pub fn hard_sample_report(ledger: &Ledger, top_k: usize) -> Result<HardSampleReport> {
    if ledger.is_empty() {
        return Err(Error::Precondition("ledger is empty".into()));
    }
    if top_k == 0 {
        return Err(Error::Precondition("top_k must be at least 1".into()));
    }
    let mut per_patient: BTreeMap<&str, (u64, f64, usize)> = BTreeMap::new();
    for e in ledger.entries() {
        let acc = per_patient.entry(&e.patient_id).or_default();
        acc.0 += e.train_count;
        acc.1 += e.last_loss;
        acc.2 += 1;
    }
    let mut rows: Vec<PatientSummary> = per_patient
        .into_iter()
        .map(|(id, (count, loss_sum, n))| PatientSummary {
            patient_id: id.to_string(),
            train_count: count,
            mean_last_loss: loss_sum / n as f64,
            batches: n,
        })
        .collect();
    rows.sort_by(|a, b| {
        b.train_count
            .cmp(&a.train_count)
            .then_with(|| a.patient_id.cmp(&b.patient_id))
    });
    Ok(HardSampleReport { rows, top_k })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    /// A model whose loss per batch is fixed by the batch's input, independent
    /// of parameters: the output is a constant distribution per batch.
    struct ConstantModel {
        params: Vec<f64>,
    }

    impl SegmentationModel for ConstantModel {
        fn forward(&self, input: &Tensor) -> Result<Tensor> {
            // First input value encodes the background probability.
            let p = input.values()[0];
            let mut dims = input.dims().to_vec();
            *dims.last_mut().unwrap() = 4;
            let n = dims.iter().product::<usize>() / 4;
            let rest = (1.0 - p) / 3.0;
            let values = (0..n).flat_map(|_| [p, rest, rest, rest]).collect();
            Tensor::new(dims, values)
        }

        fn backward(&self, _: &Tensor, _: &Tensor) -> Result<Vec<f64>> {
            Ok(vec![0.0; self.params.len()])
        }

        fn params(&self) -> &[f64] {
            &self.params
        }

        fn params_mut(&mut self) -> &mut [f64] {
            &mut self.params
        }
    }

    /// All-background batches; `quality[i]` is the predicted background
    /// probability, so lower quality means higher loss.
    fn batches(quality: &[f64]) -> Vec<BatchUnit> {
        quality
            .iter()
            .enumerate()
            .map(|(i, &q)| {
                let mut target = vec![0.0; 4 * 4];
                for v in 0..4 {
                    target[v * 4] = 1.0;
                }
                BatchUnit {
                    batch_id: i,
                    patient_id: format!("P{:03}", i / 2),
                    slice_range: 0..1,
                    input: Tensor::filled(vec![1, 2, 2, 1], q).unwrap(),
                    target: Tensor::new(vec![1, 2, 2, 4], target).unwrap(),
                }
            })
            .collect()
    }

    fn cfg(mode: TrainMode, delta: f64, epochs: usize) -> TrainConfig {
        TrainConfig {
            delta,
            epochs,
            mode,
            batch_size: 1,
            ..TrainConfig::default()
        }
    }

    fn model() -> ConstantModel {
        ConstantModel {
            params: vec![0.0; 2],
        }
    }

    #[test]
    fn round_and_selection_counts() {
        assert_eq!(rounds_per_phase(0.2), 5);
        assert_eq!(rounds_per_phase(0.5), 2);
        assert_eq!(rounds_per_phase(1.0), 1);
        assert_eq!(rounds_per_phase(0.3), 3);
        assert_eq!(round_selections(0.2, 10), vec![2; 5]);
        assert_eq!(round_selections(0.2, 12), vec![3, 2, 3, 2, 2]);
        assert_eq!(round_selections(0.5, 5), vec![3, 2]);
        assert_eq!(round_selections(0.3, 10), vec![3; 3]);
        assert_eq!(round_selections(0.01, 5).len(), 100);
        assert!(round_selections(0.01, 5).iter().all(|&k| k == 1));
        assert_eq!(round_selections(1.0, 7), vec![7]);
        assert_eq!(dynamic_budget(0.2, 50, 10), 500);
        assert_eq!(dynamic_budget(0.5, 10, 5), 50);
        assert_eq!(dynamic_budget(0.5, 10, 4), 40);
        assert_eq!(dynamic_budget(0.2, 3, 10), 30);
    }

    #[test]
    fn traditional_counts_equal_epochs() {
        let b = batches(&[0.9; 10]);
        let rec = traditional_train(
            &mut model(),
            &b,
            &cfg(TrainMode::Traditional, 1.0, 50),
            &mut NoObserver,
        )
        .unwrap();
        assert!(rec.ledger.entries().iter().all(|e| e.train_count == 50));
        assert_eq!(rec.total_trainings, 500);
        let rec = traditional_train(
            &mut model(),
            &b,
            &cfg(TrainMode::Traditional, 1.0, 1),
            &mut NoObserver,
        )
        .unwrap();
        assert!(rec.ledger.entries().iter().all(|e| e.train_count == 1));
    }

    #[test]
    fn traditional_shuffle_is_seeded() {
        let b = batches(&[0.9; 8]);
        let c = cfg(TrainMode::Traditional, 1.0, 4);
        let a = traditional_train(&mut model(), &b, &c, &mut NoObserver).unwrap();
        let again = traditional_train(&mut model(), &b, &c, &mut NoObserver).unwrap();
        assert_eq!(a.training_order, again.training_order);
        let other = TrainConfig { seed: 1, ..c };
        let shuffled = traditional_train(&mut model(), &b, &other, &mut NoObserver).unwrap();
        assert_ne!(a.training_order, shuffled.training_order);
    }

    #[test]
    fn dynamic_hand_trace_n5() {
        // Batch 3 is the hardest and is picked in every round.
        let b = batches(&[0.9, 0.8, 0.85, 0.3, 0.95]);
        let rec = dynamic_train(
            &mut model(),
            &b,
            &cfg(TrainMode::Dynamic, 0.2, 2),
            &mut NoObserver,
        )
        .unwrap();
        let counts: Vec<u64> = rec.ledger.entries().iter().map(|e| e.train_count).collect();
        assert_eq!(counts, vec![1, 1, 1, 6, 1]);
        assert_eq!(rec.total_trainings, 10);
        assert_eq!(&rec.training_order[5..], &[3, 3, 3, 3, 3]);
        assert_eq!(rec.iterations, 1);
    }

    #[test]
    fn dynamic_n10_count_bounds_and_budget() {
        let b = batches(&[0.9, 0.2, 0.8, 0.85, 0.3, 0.95, 0.9, 0.9, 0.7, 0.6]);
        let rec = dynamic_train(
            &mut model(),
            &b,
            &cfg(TrainMode::Dynamic, 0.2, 50),
            &mut NoObserver,
        )
        .unwrap();
        assert_eq!(rec.total_trainings, 500);
        let counts: Vec<u64> = rec.ledger.entries().iter().map(|e| e.train_count).collect();
        assert!(counts.iter().all(|&c| (25..=150).contains(&c)));
        assert_eq!(counts[1], 150);
        assert_eq!(counts[4], 150);
        assert_eq!(counts[0], 25);
    }

    #[test]
    fn delta_one_trains_each_batch_twice_per_iteration() {
        let b = batches(&[0.5, 0.6, 0.7, 0.8]);
        let rec = dynamic_train(
            &mut model(),
            &b,
            &cfg(TrainMode::Dynamic, 1.0, 6),
            &mut NoObserver,
        )
        .unwrap();
        assert!(rec.ledger.entries().iter().all(|e| e.train_count == 6));
        // Phase B visits in descending-loss order.
        assert_eq!(&rec.training_order[4..8], &[0, 1, 2, 3]);
    }

    #[test]
    fn odd_epochs_end_with_regular_pass() {
        let b = batches(&[0.5, 0.6, 0.7, 0.8, 0.9]);
        let rec = dynamic_train(
            &mut model(),
            &b,
            &cfg(TrainMode::Dynamic, 0.2, 3),
            &mut NoObserver,
        )
        .unwrap();
        assert_eq!(rec.total_trainings, dynamic_budget(0.2, 3, 5));
        assert_eq!(rec.total_trainings, 15);
        assert_eq!(rec.epoch_losses.len(), 3);
        assert_eq!(rec.epoch_losses[2].phase, Phase::Regular);
        assert_eq!(rec.iterations, 2);
    }

    #[test]
    fn observer_called_per_iteration() {
        let b = batches(&[0.5, 0.6]);
        let mut seen = Vec::new();
        let mut obs = |it: usize, _: &ConstantModel, l: &Ledger| {
            seen.push((it, l.total_trainings()));
            Ok(())
        };
        dynamic_train(&mut model(), &b, &cfg(TrainMode::Dynamic, 0.5, 4), &mut obs).unwrap();
        assert_eq!(seen, vec![(0, 4), (1, 8)]);
    }

    #[test]
    fn config_errors() {
        let b = batches(&[0.5]);
        for delta in [0.0, -0.1, 1.5, f64::NAN] {
            let err = dynamic_train(
                &mut model(),
                &b,
                &cfg(TrainMode::Dynamic, delta, 2),
                &mut NoObserver,
            );
            assert!(matches!(err, Err(Error::Config(_))), "{delta}");
        }
        let err = dynamic_train(
            &mut model(),
            &b,
            &cfg(TrainMode::Traditional, 0.2, 2),
            &mut NoObserver,
        );
        assert!(matches!(err, Err(Error::Config(_))));
        let err = dynamic_train(
            &mut model(),
            &[],
            &cfg(TrainMode::Dynamic, 0.2, 2),
            &mut NoObserver,
        );
        assert!(err.is_err());
    }

    #[test]
    fn non_finite_loss_names_batch() {
        struct NanModel(Vec<f64>);
        impl SegmentationModel for NanModel {
            fn forward(&self, input: &Tensor) -> Result<Tensor> {
                let mut dims = input.dims().to_vec();
                *dims.last_mut().unwrap() = 4;
                Tensor::filled(dims, f64::NAN)
            }
            fn backward(&self, _: &Tensor, _: &Tensor) -> Result<Vec<f64>> {
                Ok(vec![0.0; self.0.len()])
            }
            fn params(&self) -> &[f64] {
                &self.0
            }
            fn params_mut(&mut self) -> &mut [f64] {
                &mut self.0
            }
        }
        let b = batches(&[0.5]);
        let err = traditional_train(
            &mut NanModel(vec![]),
            &b,
            &cfg(TrainMode::Traditional, 1.0, 1),
            &mut NoObserver,
        )
        .unwrap_err();
        assert!(err.to_string().contains("batch 0"), "{err}");
    }

    #[test]
    fn ranking_ties_break_on_batch_id() {
        let ledger = Ledger::from_entries(vec![
            LedgerEntry {
                batch_id: 5,
                patient_id: "a".into(),
                last_loss: 1.0,
                train_count: 1,
            },
            LedgerEntry {
                batch_id: 2,
                patient_id: "b".into(),
                last_loss: 1.0,
                train_count: 1,
            },
            LedgerEntry {
                batch_id: 9,
                patient_id: "c".into(),
                last_loss: 3.0,
                train_count: 1,
            },
        ]);
        assert_eq!(ledger.ranked(), vec![2, 1, 0]);
    }

    #[test]
    fn report_aggregates_per_patient() {
        let ledger = Ledger::from_entries(vec![
            LedgerEntry {
                batch_id: 0,
                patient_id: "P001".into(),
                last_loss: 1.0,
                train_count: 3,
            },
            LedgerEntry {
                batch_id: 1,
                patient_id: "P001".into(),
                last_loss: 3.0,
                train_count: 4,
            },
            LedgerEntry {
                batch_id: 2,
                patient_id: "P000".into(),
                last_loss: 0.5,
                train_count: 7,
            },
            LedgerEntry {
                batch_id: 3,
                patient_id: "P002".into(),
                last_loss: 0.1,
                train_count: 9,
            },
        ]);
        let r = hard_sample_report(&ledger, 2).unwrap();
        let ids: Vec<&str> = r.rows.iter().map(|s| s.patient_id.as_str()).collect();
        assert_eq!(ids, vec!["P002", "P000", "P001"]);
        assert_eq!(r.rows[2].train_count, 7);
        assert_eq!(r.rows[2].mean_last_loss, 2.0);
        assert_eq!(r.top().len(), 2);
        let all = hard_sample_report(&ledger, 10).unwrap();
        assert_eq!(all.top().len(), 3);
        assert!(hard_sample_report(&Ledger::default(), 1).is_err());
    }

    #[test]
    fn traditional_report_is_id_order() {
        let b = batches(&[0.9; 6]);
        let rec = traditional_train(
            &mut model(),
            &b,
            &cfg(TrainMode::Traditional, 1.0, 3),
            &mut NoObserver,
        )
        .unwrap();
        let r = hard_sample_report(&rec.ledger, 10).unwrap();
        let ids: Vec<&str> = r.rows.iter().map(|s| s.patient_id.as_str()).collect();
        assert_eq!(ids, vec!["P000", "P001", "P002"]);
    }
}
