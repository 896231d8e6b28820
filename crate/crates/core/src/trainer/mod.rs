//! Adam with warm-restart cosine schedule over manifest splits, the
//! distillation objective, evaluation and metrics logging.
//!
//! Gradients are computed one sample per tape, summed inside fixed-size
//! chunks in sample order and the chunk sums are added in chunk order, so
//! results do not depend on the number of worker threads.

mod data;
mod manifest;
mod metrics;
mod optim;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use data::{Dataset, Example};
pub use manifest::{DatasetManifest, ManifestRow, Split};
pub use metrics::{
    accuracy_report, argmax, format_metrics, parse_metrics, AccuracyReport, EpochRecord, RunSummary, Tally,
    METRICS_HEADER,
};
pub use optim::{adam_step, AdamConfig, Sgdr};

use crate::augment::{dir_augment, freq_mixstyle, soft_mixup, spec_augment, AugmentConfig, IrBank};
use crate::distill::{cross_entropy, kd_loss, KdConfig, TeacherLogitsTable};
use crate::error::{Error, Result};
use crate::features::{FeatureExtractor, NormStats};
use crate::model::StudentModel;
use crate::numcore::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearningRates {
    pub split5: f64,
    pub split50: f64,
    pub other: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self { split5: 0.06, split50: 0.05, other: 0.04 }
    }
}

impl LearningRates {
    pub fn for_split(&self, split: Split) -> f64 {
        match split {
            Split::P5 => self.split5,
            Split::P50 => self.split50,
            _ => self.other,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Selects the initial learning rate.
    pub split: Split,
    pub sgdr_t0: f64,
    pub sgdr_tmult: f64,
    pub min_lr: f64,
    /// Replace the model's input normalization with training-set statistics.
    pub normalize: bool,
    /// Samples per gradient reduction chunk.
    pub grad_chunk: usize,
    /// Seeds the epoch shuffles.
    pub seed: u64,
    pub lr: LearningRates,
    pub adam: AdamConfig,
    pub kd: KdConfig,
    pub augment: AugmentConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 150,
            batch_size: 512,
            split: Split::P100,
            sgdr_t0: 10.0,
            sgdr_tmult: 2.0,
            min_lr: 0.0,
            normalize: true,
            grad_chunk: 32,
            seed: 0,
            lr: LearningRates::default(),
            adam: AdamConfig::default(),
            kd: KdConfig::default(),
            augment: AugmentConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn initial_lr(&self) -> f64 {
        self.lr.for_split(self.split)
    }

    pub fn schedule(&self) -> Sgdr {
        Sgdr { initial_lr: self.initial_lr(), min_lr: self.min_lr, t0: self.sgdr_t0, tmult: self.sgdr_tmult }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.grad_chunk == 0 {
            return Err(Error::Config("epochs, batch_size and grad_chunk must be at least 1".into()));
        }
        let lr = self.lr;
        if [lr.split5, lr.split50, lr.other].iter().any(|&v| !(v > 0.0)) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        self.schedule().validate()?;
        self.kd.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.augment.validate()
    }
}

/// Optional inputs to [`train`].
#[derive(Clone, Copy, Default)]
pub struct TrainInputs<'a> {
    pub teacher: Option<&'a TeacherLogitsTable>,
    pub eval: Option<&'a Dataset>,
    pub ir_bank: Option<&'a IrBank>,
    /// Required to re-extract waveform-augmented clips.
    pub extractor: Option<&'a FeatureExtractor>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: StudentModel,
    /// Epoch and weights of the highest evaluation accuracy.
    pub best: Option<(usize, StudentModel)>,
    pub metrics: Vec<EpochRecord>,
}

const STREAM_SHUFFLE: u64 = 1;
const STREAM_BATCH: u64 = 2;
const STREAM_DIR: u64 = 3;

fn stream(seed: u64, tag: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((tag << 56) | (index & ((1 << 56) - 1)));
    rng
}

fn one_hot(k: usize, n: usize) -> Vec<f64> {
    (0..n).map(|c| if c == k { 1.0 } else { 0.0 }).collect()
}

struct ChunkResult {
    loss: f64,
    correct: usize,
    grads: Vec<Vec<f64>>,
}

fn add_into(acc: &mut [Vec<f64>], g: &[Vec<f64>]) {
    for (a, b) in acc.iter_mut().zip(g) {
        for (x, y) in a.iter_mut().zip(b) {
            *x += y;
        }
    }
}

pub fn train(data: &Dataset, mut model: StudentModel, cfg: &TrainConfig, inputs: &TrainInputs) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Data("training split is empty".into()));
    }
    let k = model.n_classes();
    if let Some(bad) = data.examples.iter().find(|e| e.scene >= k) {
        return Err(Error::Data(format!("{} has label {} but the model has {k} classes", bad.clip_id, bad.scene)));
    }
    if let Some(t) = inputs.teacher {
        if t.class_count != k {
            return Err(Error::Data(format!("teacher has {} classes, model {k}", t.class_count)));
        }
        let missing = t.missing(data.clip_ids());
        if !missing.is_empty() {
            return Err(Error::MissingClips(missing));
        }
    }
    let use_dir = cfg.augment.dir_p > 0.0 && data.examples.iter().any(|e| e.audio.is_some());
    let bank = match (use_dir, inputs.ir_bank, inputs.extractor) {
        (false, _, _) => None,
        (true, Some(b), Some(ex)) if !b.is_empty() => Some((b, ex)),
        (true, Some(_), None) => return Err(Error::Config("waveform augmentation needs a feature extractor".into())),
        (true, _, _) => {
            log::warn!("no impulse responses supplied; DIR augmentation disabled");
            None
        }
    };
    if cfg.normalize {
        model.norm = NormStats::from_features(data.feature_maps())?;
    }
    let base: Vec<Tensor> = data.examples.iter().map(|e| model.prepare(&e.features)).collect::<Result<_>>()?;
    let teacher: Option<Vec<Vec<f64>>> = inputs.teacher.map(|t| {
        data.examples
            .iter()
            .map(|e| t.get(&e.clip_id).expect("coverage checked").iter().map(|&v| f64::from(v)).collect())
            .collect()
    });

    let sched = cfg.schedule();
    let n = data.len();
    let batches = n.div_ceil(cfg.batch_size);
    let aug = &cfg.augment;
    let mut step = 0u64;
    let mut metrics = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, StudentModel)> = None;

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut stream(cfg.seed, STREAM_SHUFFLE, epoch as u64));
        let (mut loss_sum, mut correct) = (0.0, 0usize);

        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let lr = sched.lr(epoch as f64 + b as f64 / batches as f64);
            let mut xs: Vec<Tensor> = idx
                .par_iter()
                .map(|&i| {
                    let ex = &data.examples[i];
                    match (bank, &ex.audio) {
                        (Some((bank, extractor)), Some(clip)) => {
                            let mut rng = stream(aug.seed, STREAM_DIR, (epoch * n + i) as u64);
                            let out = dir_augment(clip, bank, aug.dir_p, &mut rng)?;
                            if &out == clip {
                                Ok(base[i].clone())
                            } else {
                                model.prepare(&extractor.extract(&out)?)
                            }
                        }
                        _ => Ok(base[i].clone()),
                    }
                })
                .collect::<Result<_>>()?;
            let mut ys: Vec<Vec<f64>> = idx.iter().map(|&i| one_hot(data.examples[i].scene, k)).collect();
            let mut ts: Option<Vec<Vec<f64>>> = teacher.as_ref().map(|t| idx.iter().map(|&i| t[i].clone()).collect());

            let mut rng = stream(aug.seed, STREAM_BATCH, (epoch * batches + b) as u64);
            freq_mixstyle(&mut xs, aug.fms_alpha, aug.fms_p, &mut rng)?;
            if aug.soft_mixup {
                match ts.as_mut() {
                    Some(ts) => soft_mixup(&mut xs, &mut [&mut ys[..], &mut ts[..]], aug.soft_mixup_alpha, &mut rng)?,
                    None => soft_mixup(&mut xs, &mut [&mut ys[..]], aug.soft_mixup_alpha, &mut rng)?,
                };
            }
            if aug.spec_augment {
                for x in xs.iter_mut() {
                    spec_augment(x, aug.specaug_mask_ratio, &mut rng)?;
                }
            }

            let positions: Vec<usize> = (0..idx.len()).collect();
            let chunks: Vec<ChunkResult> = positions
                .par_chunks(cfg.grad_chunk)
                .map(|chunk| {
                    let mut acc = ChunkResult { loss: 0.0, correct: 0, grads: Vec::new() };
                    for &j in chunk {
                        let y = &ys[j];
                        let t = ts.as_ref().map(|t| &t[j]);
                        let g = model.sample_gradient(&xs[j], |z| match t {
                            Some(t) => kd_loss(z, t, y, &cfg.kd).map(|l| (l.total, l.grad)),
                            None => cross_entropy(z, y),
                        })?;
                        acc.loss += g.loss;
                        acc.correct += usize::from(argmax(&g.logits) == data.examples[idx[j]].scene);
                        if acc.grads.is_empty() {
                            acc.grads = g.grads;
                        } else {
                            add_into(&mut acc.grads, &g.grads);
                        }
                    }
                    Ok(acc)
                })
                .collect::<Result<_>>()?;
            let mut iter = chunks.into_iter();
            let mut total = iter.next().expect("batches are non-empty");
            for c in iter {
                total.loss += c.loss;
                total.correct += c.correct;
                add_into(&mut total.grads, &c.grads);
            }
            let scale = 1.0 / idx.len() as f64;
            total.grads.iter_mut().flatten().for_each(|g| *g *= scale);
            step += 1;
            adam_step(&mut model.params, &total.grads, lr, step, &cfg.adam)?;
            loss_sum += total.loss;
            correct += total.correct;
        }

        let eval_acc = match inputs.eval {
            Some(ev) => Some(evaluate(&model, ev, false)?.accuracy()),
            None => None,
        };
        let record = EpochRecord {
            epoch,
            lr: sched.lr(epoch as f64),
            loss: loss_sum / n as f64,
            train_acc: correct as f64 / n as f64,
            eval_acc,
        };
        log::info!(
            "epoch {epoch}: lr {:.5} loss {:.5} train {:.4} eval {}",
            record.lr,
            record.loss,
            record.train_acc,
            eval_acc.map_or("-".into(), |a| format!("{a:.4}"))
        );
        if let Some(acc) = eval_acc {
            if best.as_ref().is_none_or(|(_, b, _)| acc > *b) {
                best = Some((epoch, acc, model.clone()));
            }
        }
        metrics.push(record);
    }
    Ok(TrainOutcome { model, best: best.map(|(e, _, m)| (e, m)), metrics })
}

/// Top-1 accuracy of `model` over `data`, per class and optionally per device.
pub fn evaluate(model: &StudentModel, data: &Dataset, per_device: bool) -> Result<AccuracyReport> {
    let maps: Vec<_> = data.feature_maps().cloned().collect();
    let logits = model.forward_batch(&maps)?;
    let labels: Vec<usize> = data.examples.iter().map(|e| e.scene).collect();
    let devices: Vec<String> = data.examples.iter().map(|e| e.device.clone()).collect();
    accuracy_report(&logits, &labels, per_device.then_some(&devices[..]), model.n_classes())
}
