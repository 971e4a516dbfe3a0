//! Cross-validated training, best-recall epoch selection, weighted metrics and ablations.

mod metrics;
pub mod synthetic;

pub use metrics::{
    class_labels, confusion_csv, confusion_matrix, report_from_predictions, rollup_to_category, weighted_prf,
    ClassMetrics, MetricsReport,
};

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{make_folds, DatasetVariant, TrajectorySample};
use crate::error::{Error, Result};
use crate::fusion::{AdamW, AdamWConfig, Checkpoint, CheckpointManifest, FusionMode, FusionModel};
use crate::losses::{ce_loss_grad, combined_loss, scl_loss_grad, BatchLabels, LossConfig};
use crate::manifest::config_hash;
use crate::syntax_graph::{
    make_mask, preprocess, Marker, MaskVector, SubwordTokenizer, TrajectorySubgraph, VerbTags, WordPiece,
};
use crate::taxonomy::Granularity;
use crate::Scalar;

/// Model variants compared in the ablation study.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    #[default]
    None,
    /// Entity-only mask instead of the verb-path subgraph.
    NoMask,
    /// Cross-entropy only.
    NoScl,
    /// Masked mean forced to zero.
    NoTriple,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [Ablation::None, Ablation::NoMask, Ablation::NoScl, Ablation::NoTriple];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::None => "none",
            Ablation::NoMask => "no-mask",
            Ablation::NoScl => "no-scl",
            Ablation::NoTriple => "no-triple",
        }
    }

    pub fn mode(self) -> FusionMode {
        match self {
            Ablation::NoTriple => FusionMode::NoTriple,
            _ => FusionMode::Full,
        }
    }

    pub fn entity_only_mask(self) -> bool {
        self == Ablation::NoMask
    }

    pub fn effective_lambda(self, lambda: f64) -> f64 {
        if self == Ablation::NoScl {
            0.0
        } else {
            lambda
        }
    }
}

impl std::str::FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::validation(format!("unknown ablation {s:?}; expected none|no-mask|no-scl|no-triple")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub loss: LossConfig,
    pub optimizer: AdamWConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub variant: DatasetVariant,
    pub granularity: Granularity,
    pub ablation: Ablation,
    pub folds: usize,
    /// Encoder state dimension.
    pub dim: usize,
    /// Context radius of the encoder.
    pub window: usize,
    pub max_len: usize,
    pub lowercase: bool,
    /// Fixed vocabulary file; when absent the vocabulary is built from the corpus.
    pub vocab: Option<PathBuf>,
    pub parallel_folds: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss: LossConfig::default(),
            optimizer: AdamWConfig::default(),
            epochs: 10,
            batch_size: 32,
            seed: 42,
            variant: DatasetVariant::Regular,
            granularity: Granularity::Type,
            ablation: Ablation::None,
            folds: 10,
            dim: 64,
            window: 1,
            max_len: 256,
            lowercase: true,
            vocab: None,
            parallel_folds: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        let bad = |what: &str| Err(Error::Config(what.to_string()));
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.folds < 2 {
            return bad("folds must be at least 2");
        }
        if self.dim == 0 {
            return bad("dim must be positive");
        }
        if self.max_len < 7 {
            return bad("max_len must leave room for the six markers");
        }
        if !(self.optimizer.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        Ok(())
    }

    pub fn prepare_options(&self) -> PrepareOptions {
        PrepareOptions {
            variant: self.variant,
            granularity: self.granularity,
            max_len: self.max_len,
            entity_only_mask: self.ablation.entity_only_mask(),
        }
    }

    pub fn hash(&self) -> Result<String> {
        config_hash(self)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PrepareOptions {
    pub variant: DatasetVariant,
    pub granularity: Granularity,
    pub max_len: usize,
    pub entity_only_mask: bool,
}

impl PrepareOptions {
    pub fn from_manifest(m: &CheckpointManifest, variant: DatasetVariant) -> Self {
        PrepareOptions {
            variant,
            granularity: m.granularity,
            max_len: m.max_len,
            entity_only_mask: m.entity_only_mask,
        }
    }
}

/// Model-ready form of one sample.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PreparedSample {
    pub id: String,
    pub ids: Vec<u32>,
    pub mask: MaskVector,
    pub class: Option<usize>,
    /// No verb reachable; the mask covers the entities only.
    pub fallback: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Skipped {
    pub id: String,
    pub reason: String,
}

pub fn prepare_sample<K: SubwordTokenizer + ?Sized>(
    sample: &TrajectorySample,
    tokenizer: &K,
    opts: &PrepareOptions,
) -> Result<PreparedSample> {
    let view = sample.active(opts.variant);
    let pre = preprocess(view, tokenizer, opts.max_len, &VerbTags::default())?;
    let fallback = pre.subgraph.fallback;
    let subgraph = if opts.entity_only_mask {
        TrajectorySubgraph::entities_only(&pre.graph, fallback)
    } else {
        pre.subgraph
    };
    let mask = make_mask(&subgraph, &pre.alignment, pre.alignment.len())?;
    Ok(PreparedSample {
        id: sample.id.clone(),
        ids: pre.alignment.ids,
        mask,
        class: sample.label.map(|l| opts.granularity.class_of(l)),
        fallback,
    })
}

/// Prepare in parallel, keeping input order; failures are reported, not fatal.
pub fn prepare_all<K: SubwordTokenizer + Sync + ?Sized>(
    samples: &[TrajectorySample],
    tokenizer: &K,
    opts: &PrepareOptions,
) -> (Vec<PreparedSample>, Vec<Skipped>) {
    let results: Vec<_> = samples
        .par_iter()
        .map(|s| prepare_sample(s, tokenizer, opts).map_err(|e| (s.id.clone(), e)))
        .collect();
    let mut ok = Vec::new();
    let mut skipped = Vec::new();
    for r in results {
        match r {
            Ok(p) => ok.push(p),
            Err((id, e)) => {
                log::warn!("skipping sample {id}: {e}");
                skipped.push(Skipped {
                    id,
                    reason: e.to_string(),
                })
            }
        }
    }
    (ok, skipped)
}

/// Vocabulary from the configured file, or from every word of every view in the corpus.
pub fn build_tokenizer(samples: &[TrajectorySample], cfg: &TrainConfig) -> Result<WordPiece> {
    if let Some(path) = &cfg.vocab {
        return WordPiece::from_vocab_file(path, cfg.lowercase);
    }
    let words = samples.iter().flat_map(|s| {
        let refined = s.refined.iter().flat_map(|r| r.view.parse.iter());
        s.original.parse.iter().chain(refined).map(|t| t.form.as_str())
    });
    Ok(WordPiece::from_corpus(words, cfg.lowercase))
}

pub fn new_model<T: Scalar>(tokenizer: &WordPiece, cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> FusionModel<T> {
    let markers: Vec<u32> = Marker::ALL.iter().map(|&m| tokenizer.marker_id(m)).collect();
    FusionModel::new(
        tokenizer.vocab_size(),
        cfg.dim,
        cfg.window,
        cfg.granularity.class_count(),
        &markers,
        rng,
    )
}

fn all_valid(n: usize) -> Vec<bool> {
    vec![true; n]
}

/// One optimizer step on a batch; returns the blended loss.
pub fn train_step<T: Scalar>(
    model: &mut FusionModel<T>,
    opt: &mut AdamW<T>,
    batch: &[&PreparedSample],
    cfg: &TrainConfig,
) -> Result<f64> {
    let mode = cfg.ablation.mode();
    let traces = batch
        .par_iter()
        .map(|p| model.forward_traced(&p.ids, &all_valid(p.ids.len()), &p.mask, mode))
        .collect::<Result<Vec<_>>>()?;
    let gold: Vec<usize> = batch
        .iter()
        .map(|p| p.class.ok_or_else(|| Error::validation(format!("training sample {:?} has no label", p.id))))
        .collect::<Result<_>>()?;
    let width = 2 * model.dim();
    let mut h = Array2::zeros((batch.len(), width));
    let mut logits = Array2::zeros((batch.len(), model.classes()));
    for (i, t) in traces.iter().enumerate() {
        h.row_mut(i).assign(&t.output.h_scl);
        logits.row_mut(i).assign(&t.output.logits);
    }
    let lambda = cfg.ablation.effective_lambda(cfg.loss.lambda);
    let (ce, mut d_logits) = ce_loss_grad(logits.view(), &gold);
    let (scl, mut d_h) = if lambda > 0.0 {
        scl_loss_grad(h.view(), &BatchLabels::new(&gold), &cfg.loss)
    } else {
        (T::zero(), Array2::zeros(h.raw_dim()))
    };
    let lam = T::lit(lambda);
    let loss = combined_loss(ce, scl, lam);
    d_logits.mapv_inplace(|v| v * (T::one() - lam));
    d_h.mapv_inplace(|v| v * lam);

    let mut grads = model.zeros_like();
    for (i, t) in traces.iter().enumerate() {
        model.backward(t, d_logits.row(i), d_h.row(i), &mut grads);
    }
    opt.update(model.param_slices_mut(), grads.param_slices_mut());
    Ok(loss.as_f64())
}

/// Train for `cfg.epochs`, calling `on_epoch(epoch, model, mean_loss)` after each.
pub fn train_epochs<T: Scalar>(
    train: &[&PreparedSample],
    tokenizer: &WordPiece,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
    mut on_epoch: impl FnMut(usize, &FusionModel<T>, f64) -> Result<()>,
) -> Result<FusionModel<T>> {
    cfg.validate()?;
    let mut model = new_model::<T>(tokenizer, cfg, rng);
    let mut opt = AdamW::new(cfg.optimizer);
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&PreparedSample> = chunk.iter().map(|&i| train[i]).collect();
            total += train_step(&mut model, &mut opt, &batch, cfg)?;
            batches += 1;
        }
        let mean = if batches == 0 { 0.0 } else { total / batches as f64 };
        if !mean.is_finite() || !model.all_finite() {
            return Err(Error::Contract(format!("training diverged at epoch {}", epoch + 1)));
        }
        log::debug!("epoch {} loss {mean:.5}", epoch + 1);
        on_epoch(epoch, &model, mean)?;
    }
    Ok(model)
}

/// Class and probability vector per sample.
pub fn predict<T: Scalar>(
    model: &FusionModel<T>,
    samples: &[&PreparedSample],
    mode: FusionMode,
) -> Result<Vec<(usize, Array1<T>)>> {
    samples
        .par_iter()
        .map(|p| {
            let out = model.forward(&p.ids, &all_valid(p.ids.len()), &p.mask, mode)?;
            Ok(crate::fusion::predict_from_logits(&out.logits))
        })
        .collect()
}

pub fn evaluate<T: Scalar>(
    model: &FusionModel<T>,
    samples: &[&PreparedSample],
    mode: FusionMode,
    granularity: Granularity,
) -> Result<MetricsReport> {
    let preds = predict(model, samples, mode)?;
    let gold: Vec<usize> = samples
        .iter()
        .map(|p| p.class.ok_or_else(|| Error::validation(format!("evaluation sample {:?} has no label", p.id))))
        .collect::<Result<_>>()?;
    let predicted: Vec<usize> = preds.iter().map(|(c, _)| *c).collect();
    report_from_predictions(&gold, &predicted, granularity)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
}

impl Summary {
    fn mean<'a>(reports: impl Iterator<Item = &'a MetricsReport>) -> Summary {
        let (mut p, mut r, mut f, mut a, mut n) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for m in reports {
            p += m.precision;
            r += m.recall;
            f += m.f1;
            a += m.accuracy;
            n += 1.0;
        }
        let d = if n == 0.0 { 1.0 } else { n };
        Summary {
            precision: p / d,
            recall: r / d,
            f1: f / d,
            accuracy: a / d,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub train_size: usize,
    pub test_size: usize,
    /// 1-based epoch with the highest held-out weighted recall (earliest on ties).
    pub best_epoch: usize,
    pub best: MetricsReport,
    pub last: MetricsReport,
    pub epoch_loss: Vec<f64>,
    pub epoch_recall: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub config_hash: String,
    pub seed: u64,
    pub variant: DatasetVariant,
    pub granularity: Granularity,
    pub ablation: Ablation,
    pub folds: Vec<FoldReport>,
    /// Mean over folds of the best-epoch metrics.
    pub aggregate: Summary,
    /// Mean over folds of the last-epoch metrics.
    pub aggregate_last: Summary,
    pub skipped: Vec<Skipped>,
}

fn fold_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn run_fold<T: Scalar>(
    fold: usize,
    prepared: &[PreparedSample],
    samples: &[TrajectorySample],
    plan: &crate::dataset::FoldPlan,
    tokenizer: &WordPiece,
    cfg: &TrainConfig,
) -> Result<FoldReport> {
    let (train_idx, test_idx) = plan.split(samples, fold);
    let train: Vec<&PreparedSample> = train_idx.iter().map(|&i| &prepared[i]).collect();
    let test: Vec<&PreparedSample> = test_idx.iter().map(|&i| &prepared[i]).collect();
    let mode = cfg.ablation.mode();
    let mut rng = fold_rng(cfg.seed, fold as u64 + 1);
    let mut best: Option<(usize, MetricsReport)> = None;
    let mut last = None;
    let mut epoch_loss = Vec::new();
    let mut epoch_recall = Vec::new();
    train_epochs::<T>(&train, tokenizer, cfg, &mut rng, |epoch, model, loss| {
        let report = evaluate(model, &test, mode, cfg.granularity)?;
        epoch_loss.push(loss);
        epoch_recall.push(report.recall);
        if best.as_ref().is_none_or(|(_, b)| report.recall > b.recall) {
            best = Some((epoch + 1, report.clone()));
        }
        last = Some(report);
        Ok(())
    })?;
    let (best_epoch, best) = best.expect("at least one epoch");
    Ok(FoldReport {
        fold,
        train_size: train.len(),
        test_size: test.len(),
        best_epoch,
        best,
        last: last.expect("at least one epoch"),
        epoch_loss,
        epoch_recall,
    })
}

/// Stratified k-fold cross-validation. Folds train independently and may run in parallel.
pub fn run_cv<T: Scalar>(samples: &[TrajectorySample], cfg: &TrainConfig) -> Result<CvReport> {
    cfg.validate()?;
    let tokenizer = build_tokenizer(samples, cfg)?;
    let (prepared, skipped) = prepare_all(samples, &tokenizer, &cfg.prepare_options());
    let kept: Vec<TrajectorySample> = {
        let ok: std::collections::HashSet<&str> = prepared.iter().map(|p| p.id.as_str()).collect();
        samples.iter().filter(|s| ok.contains(s.id.as_str())).cloned().collect()
    };
    let plan = make_folds(&kept, cfg.folds, cfg.seed)?;
    let job = |fold: usize| run_fold::<T>(fold, &prepared, &kept, &plan, &tokenizer, cfg);
    let folds: Vec<FoldReport> = if cfg.parallel_folds {
        (0..cfg.folds).into_par_iter().map(job).collect::<Result<_>>()?
    } else {
        (0..cfg.folds).map(job).collect::<Result<_>>()?
    };
    Ok(CvReport {
        config_hash: cfg.hash()?,
        seed: cfg.seed,
        variant: cfg.variant,
        granularity: cfg.granularity,
        ablation: cfg.ablation,
        aggregate: Summary::mean(folds.iter().map(|f| &f.best)),
        aggregate_last: Summary::mean(folds.iter().map(|f| &f.last)),
        folds,
        skipped,
    })
}

/// Write `metrics.json` and one confusion CSV per fold; returns the written paths.
pub fn write_cv_report(dir: &Path, report: &CvReport) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    let path = dir.join("metrics.json");
    fs::write(&path, serde_json::to_string_pretty(report)?).map_err(|e| Error::io(&path, e))?;
    written.push(path);
    for f in &report.folds {
        let path = dir.join(format!("fold_{}_confusion.csv", f.fold));
        fs::write(&path, confusion_csv(&f.best)).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinalTraining {
    pub epoch_loss: Vec<f64>,
    pub train_metrics: MetricsReport,
    pub skipped: Vec<Skipped>,
}

/// Train one model on every usable sample and package it as a checkpoint.
pub fn train_final<T: Scalar>(samples: &[TrajectorySample], cfg: &TrainConfig) -> Result<(Checkpoint<T>, FinalTraining)> {
    cfg.validate()?;
    let tokenizer = build_tokenizer(samples, cfg)?;
    let (prepared, skipped) = prepare_all(samples, &tokenizer, &cfg.prepare_options());
    if prepared.is_empty() {
        return Err(Error::validation("no usable training samples"));
    }
    let refs: Vec<&PreparedSample> = prepared.iter().collect();
    let mut rng = fold_rng(cfg.seed, 0);
    let mut epoch_loss = Vec::new();
    let model = train_epochs::<T>(&refs, &tokenizer, cfg, &mut rng, |_, _, loss| {
        epoch_loss.push(loss);
        Ok(())
    })?;
    let train_metrics = evaluate(&model, &refs, cfg.ablation.mode(), cfg.granularity)?;
    let manifest = CheckpointManifest {
        dim: cfg.dim,
        label_count: cfg.granularity.class_count(),
        granularity: cfg.granularity,
        config_hash: cfg.hash()?,
        scalar: T::NAME.to_string(),
        window: cfg.window,
        lowercase: cfg.lowercase,
        max_len: cfg.max_len,
        mode: cfg.ablation.mode(),
        entity_only_mask: cfg.ablation.entity_only_mask(),
        version: env!("CARGO_PKG_VERSION").to_string(),
    };
    Ok((
        Checkpoint {
            model,
            tokenizer,
            manifest,
        },
        FinalTraining {
            epoch_loss,
            train_metrics,
            skipped,
        },
    ))
}
