//! Loss, gradients, Adam and the training loop.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::RankedDiagnosis;
use crate::model::{Model, ParamStore, PreparedTrace, TrainConfig};
use crate::tape::{log_sum_exp, Mat, Tape};
use crate::trace::{LabeledTrace, TraceBundle};

/// Mean negative log-likelihood of the true root cause, softmax per trace.
pub fn rca_loss(logits: &[Vec<f64>], targets: &[Option<usize>]) -> Result<f64> {
    if logits.len() != targets.len() {
        return Err(Error::DimensionMismatch("one target per trace".into()));
    }
    if logits.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    let mut total = 0.0;
    for (i, (z, t)) in logits.iter().zip(targets).enumerate() {
        let t = t
            .filter(|&t| t < z.len())
            .ok_or_else(|| Error::MissingLabel(format!("trace #{i}")))?;
        total += log_sum_exp(z.iter().copied()) - z[t];
    }
    Ok(total / logits.len() as f64)
}

/// Loss of one anomalous trace and `scale ×` its gradient for every parameter
/// touched by the forward pass.
pub fn trace_gradients(model: &Model, prep: &PreparedTrace, scale: f64) -> Result<(f64, ParamStore)> {
    let target = prep
        .target
        .ok_or_else(|| Error::MissingLabel(prep.graph.trace_id.clone()))?;
    let mut tape = Tape::new();
    let fwd = model.forward(prep, &mut tape)?;
    let loss = tape.cross_entropy(fwd.logits, target);
    let value = tape.scalar(loss);
    let grads = tape.backward(loss, scale);
    let mut out = ParamStore::new();
    for (name, var) in tape.params() {
        if let Some(g) = grads[var.index()].as_ref() {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient(name.clone()));
            }
            out.insert(name.clone(), g.clone());
        }
    }
    Ok((value, out))
}

/// Mean loss over `batch` and its gradient with respect to every parameter.
/// Parameters off the active path get exact zeros.
pub fn backward(model: &Model, batch: &[&PreparedTrace]) -> Result<(f64, ParamStore)> {
    if batch.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    let scale = 1.0 / batch.len() as f64;
    let parts: Vec<(f64, ParamStore)> = batch
        .par_iter()
        .map(|p| trace_gradients(model, p, scale))
        .collect::<Result<_>>()?;
    let mut grads: ParamStore = model
        .params
        .iter()
        .map(|(k, v)| (k.clone(), Mat::zeros(v.dim())))
        .collect();
    let mut loss = 0.0;
    for (l, g) in parts {
        loss += l * scale;
        for (name, part) in g {
            if let Some(acc) = grads.get_mut(&name) {
                *acc += &part;
            }
        }
    }
    Ok((loss, grads))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: ParamStore,
    v: ParamStore,
}

impl Default for Adam {
    fn default() -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: ParamStore::new(),
            v: ParamStore::new(),
        }
    }
}

impl Adam {
    pub fn update(&mut self, params: &mut ParamStore, grads: &ParamStore, lr: f64) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (name, p) in params.iter_mut() {
            let Some(g) = grads.get(name) else { continue };
            let m = self.m.entry(name.clone()).or_insert_with(|| Mat::zeros(p.dim()));
            let v = self.v.entry(name.clone()).or_insert_with(|| Mat::zeros(p.dim()));
            let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
            ndarray::Zip::from(p)
                .and(m)
                .and(v)
                .and(g)
                .for_each(|p, m, v, &g| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    let m_hat = *m / bc1;
                    let v_hat = *v / bc2;
                    *p -= lr * m_hat / (v_hat.sqrt() + eps);
                });
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training loss over the epoch's batches, measured before each update.
    pub train_loss: f64,
    pub val_a_at_1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub model: Model,
    pub history: Vec<EpochRecord>,
}

impl TrainedModel {
    pub fn final_loss(&self) -> Option<f64> {
        self.history.last().map(|r| r.train_loss)
    }
}

/// Metric names present in a set of traces.
pub fn metric_names<'a>(traces: impl IntoIterator<Item = &'a LabeledTrace>) -> Vec<String> {
    traces
        .into_iter()
        .flat_map(|t| t.bundle.metrics.iter().map(|m| m.metric_name.clone()))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

fn prepare_all(model: &Model, traces: &[LabeledTrace]) -> Result<Vec<PreparedTrace>> {
    traces
        .par_iter()
        .map(|t| model.prepare(&t.bundle, t.label.usable_root_cause()))
        .collect()
}

/// Ranking of a prepared trace under the current parameters.
pub fn predict_prepared(model: &Model, prep: &PreparedTrace) -> Result<RankedDiagnosis> {
    let logits = model.logits(prep)?;
    Ok(diagnosis(model, prep, &logits))
}

fn diagnosis(model: &Model, prep: &PreparedTrace, logits: &[f64]) -> RankedDiagnosis {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let scored = prep
        .graph
        .instances
        .iter()
        .zip(logits)
        .map(|(n, &z)| (n.id.clone(), z))
        .collect();
    RankedDiagnosis::from_scores(prep.graph.trace_id.clone(), scored, max > model.anomaly_threshold)
}

pub fn predict(model: &Model, bundle: &TraceBundle) -> Result<RankedDiagnosis> {
    predict_prepared(model, &model.prepare(bundle, None)?)
}

/// Threshold on the max logit maximizing F1 for `(max_logit, is_anomalous)`
/// pairs; a trace is flagged when its max logit exceeds the threshold.
pub fn calibrate_threshold(samples: &[(f64, bool)]) -> f64 {
    let mut values: Vec<f64> = samples.iter().map(|s| s.0).filter(|v| v.is_finite()).collect();
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(f64::total_cmp);
    values.dedup();
    let lo = values[0];
    let hi = values[values.len() - 1];
    if !samples.iter().any(|s| s.1) {
        return hi + 1.0;
    }
    let mut candidates = vec![lo - 1.0];
    candidates.extend(values.windows(2).map(|w| 0.5 * (w[0] + w[1])));
    candidates.push(hi + 1.0);

    let f1 = |t: f64| {
        let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
        for &(z, y) in samples {
            match (z > t, y) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                _ => {}
            }
        }
        if tp == 0 {
            0.0
        } else {
            2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
        }
    };
    let mut best = (f64::NEG_INFINITY, candidates[0]);
    for t in candidates {
        let score = f1(t);
        if score > best.0 {
            best = (score, t);
        }
    }
    best.1
}

struct Validation {
    max_logits: Vec<(f64, bool)>,
    a_at_1: Option<f64>,
}

fn validate(model: &Model, preps: &[PreparedTrace], labels: &[&LabeledTrace]) -> Result<Validation> {
    let logits: Vec<Vec<f64>> = preps.par_iter().map(|p| model.logits(p)).collect::<Result<_>>()?;
    let mut hits = 0usize;
    let mut counted = 0usize;
    let mut max_logits = Vec::with_capacity(preps.len());
    for ((prep, z), t) in preps.iter().zip(&logits).zip(labels) {
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        max_logits.push((max, t.label.is_anomalous));
        if let Some(target) = prep.target {
            counted += 1;
            let d = diagnosis(model, prep, z);
            if d.ranking.first().map(String::as_str) == Some(prep.graph.instances[target].id.as_str()) {
                hits += 1;
            }
        }
    }
    Ok(Validation {
        max_logits,
        a_at_1: (counted > 0).then(|| hits as f64 / counted as f64),
    })
}

/// Train from scratch. Only anomalous training traces enter the loss;
/// validation traces set the anomaly threshold and are scored every epoch.
pub fn train(train: &[LabeledTrace], val: &[LabeledTrace], config: TrainConfig) -> Result<TrainedModel> {
    train_with(train, val, config, |_| {})
}

pub fn train_with(
    train: &[LabeledTrace],
    val: &[LabeledTrace],
    config: TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainedModel> {
    let model = Model::new(config, metric_names(train))?;
    let anomalous: Vec<LabeledTrace> = train
        .iter()
        .filter(|t| t.label.usable_root_cause().is_some())
        .cloned()
        .collect();
    if anomalous.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    let train_preps = prepare_all(&model, &anomalous)?;
    let val_preps = prepare_all(&model, val)?;
    let val_refs: Vec<&LabeledTrace> = val.iter().collect();
    continue_training(model, &train_preps, &val_preps, &val_refs, &mut on_epoch)
}

fn continue_training(
    mut model: Model,
    train_preps: &[PreparedTrace],
    val_preps: &[PreparedTrace],
    val_labels: &[&LabeledTrace],
    on_epoch: &mut impl FnMut(&EpochRecord),
) -> Result<TrainedModel> {
    let cfg = model.config.clone();
    let mut order: Vec<usize> = (0..train_preps.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut adam = Adam::default();
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&PreparedTrace> = chunk.iter().map(|&i| &train_preps[i]).collect();
            let (loss, grads) = match backward(&model, &batch) {
                Err(Error::NonFiniteGradient(_)) => return Err(Error::DivergedLoss { epoch }),
                other => other?,
            };
            if !loss.is_finite() {
                return Err(Error::DivergedLoss { epoch });
            }
            loss_sum += loss * chunk.len() as f64;
            adam.update(&mut model.params, &grads, cfg.lr);
        }
        let val_a_at_1 = if val_preps.is_empty() {
            None
        } else {
            validate(&model, val_preps, val_labels)?.a_at_1
        };
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / train_preps.len() as f64,
            val_a_at_1,
        };
        on_epoch(&record);
        history.push(record);
    }

    model.anomaly_threshold = if val_preps.is_empty() {
        0.0
    } else {
        calibrate_threshold(&validate(&model, val_preps, val_labels)?.max_logits)
    };
    Ok(TrainedModel { model, history })
}
