use std::fmt::Write as _;

use indexmap::IndexMap;

use crate::error::{Error, Result};

/// One line of the metrics log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Learning rate at the start of the epoch.
    pub lr: f64,
    /// Mean training loss over the epoch's batches.
    pub loss: f64,
    /// Running top-1 accuracy of the augmented batches against the unmixed labels.
    pub train_acc: f64,
    pub eval_acc: Option<f64>,
}

pub const METRICS_HEADER: &str = "epoch\tlr\tloss\ttrain_acc\teval_acc";

/// Tab-separated log: a header line, then one record per epoch with
/// `lr` and `loss` in `{:.12e}`, accuracies in `{:.6}` and `-` for a
/// missing evaluation.
pub fn format_metrics(records: &[EpochRecord]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in records {
        let eval = r.eval_acc.map_or_else(|| "-".to_string(), |a| format!("{a:.6}"));
        let _ = writeln!(out, "{}\t{:.12e}\t{:.12e}\t{:.6}\t{eval}", r.epoch, r.lr, r.loss, r.train_acc);
    }
    out
}

pub fn parse_metrics(text: &str) -> Result<Vec<EpochRecord>> {
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_HEADER) {
        return Err(Error::Format("metrics log header missing".into()));
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|line| {
            let bad = || Error::Format(format!("bad metrics line {line:?}"));
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 5 {
                return Err(bad());
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
            Ok(EpochRecord {
                epoch: f[0].parse().map_err(|_| bad())?,
                lr: num(f[1])?,
                loss: num(f[2])?,
                train_acc: num(f[3])?,
                eval_acc: if f[4] == "-" { None } else { Some(num(f[4])?) },
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Tally {
    pub n: usize,
    pub correct: usize,
}

impl Tally {
    pub fn accuracy(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.correct as f64 / self.n as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyReport {
    pub overall: Tally,
    pub per_class: Vec<Tally>,
    pub per_device: Option<IndexMap<String, Tally>>,
}

impl AccuracyReport {
    pub fn accuracy(&self) -> f64 {
        self.overall.accuracy()
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("accuracy\t{:.6}\t{}/{}\n", self.accuracy(), self.overall.correct, self.overall.n);
        for (k, t) in self.per_class.iter().enumerate() {
            let _ = writeln!(out, "class{k}\t{:.6}\t{}/{}", t.accuracy(), t.correct, t.n);
        }
        if let Some(devices) = &self.per_device {
            for (d, t) in devices {
                let _ = writeln!(out, "device:{d}\t{:.6}\t{}/{}", t.accuracy(), t.correct, t.n);
            }
        }
        out
    }
}

/// Index of the largest logit; ties resolve to the lowest index.
pub fn argmax(z: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in z.iter().enumerate() {
        if v > z[best] {
            best = i;
        }
    }
    best
}

/// Top-1 accuracy of `logits` against `labels`, per class over
/// `n_classes` and optionally per device.
pub fn accuracy_report(
    logits: &[Vec<f64>],
    labels: &[usize],
    devices: Option<&[String]>,
    n_classes: usize,
) -> Result<AccuracyReport> {
    if logits.len() != labels.len() || devices.is_some_and(|d| d.len() != labels.len()) {
        return Err(Error::Shape("logits, labels and devices differ in length".into()));
    }
    let mut overall = Tally::default();
    let mut per_class = vec![Tally::default(); n_classes];
    let mut per_device: Option<IndexMap<String, Tally>> = devices.map(|_| IndexMap::new());
    for (i, (z, &y)) in logits.iter().zip(labels).enumerate() {
        if y >= n_classes {
            return Err(Error::Data(format!("label {y} outside {n_classes} classes")));
        }
        let hit = usize::from(argmax(z) == y);
        overall.n += 1;
        overall.correct += hit;
        per_class[y].n += 1;
        per_class[y].correct += hit;
        if let (Some(map), Some(devs)) = (per_device.as_mut(), devices) {
            let t = map.entry(devs[i].clone()).or_default();
            t.n += 1;
            t.correct += hit;
        }
    }
    Ok(AccuracyReport { overall, per_class, per_device })
}

/// Accuracies of repeated independent runs with both aggregates.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub runs: Vec<f64>,
    pub mean: f64,
    pub best: f64,
    pub std: f64,
}

impl RunSummary {
    pub fn new(runs: Vec<f64>) -> Result<Self> {
        if runs.is_empty() {
            return Err(Error::InvalidArgument("no runs to summarize".into()));
        }
        let n = runs.len() as f64;
        let mean = runs.iter().sum::<f64>() / n;
        let best = runs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let std = (runs.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n).sqrt();
        Ok(Self { runs, mean, best, std })
    }
}
