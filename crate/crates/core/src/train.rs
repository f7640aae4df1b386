//! Loss, gradients, AdamW and the training loop.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::events::EventCloud;
use crate::kv::KvMap;
use crate::metrics;
use crate::net::{self, Geometry, ModelConfig, ModelWeights};
use crate::tensor::{Mat, Params, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Clouds per optimizer step.
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Share of clouds held out for validation by [`train`].
    pub val_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 8e-5,
            weight_decay: 5e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 4,
            epochs: 20,
            seed: 0,
            val_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr.is_finite()
            && self.lr >= 0.0
            && self.weight_decay >= 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.batch_size > 0
            && (0.0..1.0).contains(&self.val_fraction);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid training config {self:?}")))
        }
    }

    pub fn apply_kv(&mut self, kv: &KvMap) -> Result<()> {
        kv.read_into("lr", &mut self.lr)?;
        kv.read_into("weight_decay", &mut self.weight_decay)?;
        kv.read_into("beta1", &mut self.beta1)?;
        kv.read_into("beta2", &mut self.beta2)?;
        kv.read_into("eps", &mut self.eps)?;
        kv.read_into("batch_size", &mut self.batch_size)?;
        kv.read_into("epochs", &mut self.epochs)?;
        kv.read_into("seed", &mut self.seed)?;
        kv.read_into("val_fraction", &mut self.val_fraction)?;
        self.validate()
    }

    pub const KEYS: &'static [&'static str] = &[
        "lr",
        "weight_decay",
        "beta1",
        "beta2",
        "eps",
        "batch_size",
        "epochs",
        "seed",
        "val_fraction",
    ];

    pub fn to_kv(&self) -> KvMap {
        let mut kv = KvMap::new();
        kv.set("lr", self.lr);
        kv.set("weight_decay", self.weight_decay);
        kv.set("beta1", self.beta1);
        kv.set("beta2", self.beta2);
        kv.set("eps", self.eps);
        kv.set("batch_size", self.batch_size);
        kv.set("epochs", self.epochs);
        kv.set("seed", self.seed);
        kv.set("val_fraction", self.val_fraction);
        kv
    }
}

fn log_softmax_pair(l: &[f64]) -> (f64, f64) {
    let m = l[0].max(l[1]);
    let lse = m + ((l[0] - m).exp() + (l[1] - m).exp()).ln();
    (l[0] - lse, l[1] - lse)
}

/// Mean negative log-likelihood and its gradient with respect to the logits.
pub fn cross_entropy_grad(logits: &Mat, labels: &[u8]) -> Result<(f64, Mat)> {
    if logits.cols != 2 || logits.rows != labels.len() {
        return Err(Error::Shape(format!(
            "{}x{} logits for {} labels",
            logits.rows,
            logits.cols,
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::Empty("cross entropy over zero events"));
    }
    let inv = 1.0 / labels.len() as f64;
    let mut loss = 0.0;
    let mut grad = Mat::zeros(logits.rows, 2);
    for (r, &y) in labels.iter().enumerate() {
        if y > 1 {
            return Err(Error::Label(y));
        }
        let (l0, l1) = log_softmax_pair(logits.row(r));
        loss -= if y == 1 { l1 } else { l0 };
        let g = grad.row_mut(r);
        g[0] = (l0.exp() - f64::from(u8::from(y == 0))) * inv;
        g[1] = (l1.exp() - f64::from(y)) * inv;
    }
    Ok((loss * inv, grad))
}

pub fn cross_entropy(logits: &Mat, labels: &[u8]) -> Result<f64> {
    Ok(cross_entropy_grad(logits, labels)?.0)
}

fn cloud_labels(cloud: &EventCloud, at: usize) -> Result<&[u8]> {
    cloud.labels.as_deref().ok_or(Error::Unlabeled(at))
}

/// Per-event loss of one cloud and its exact gradient over every weight.
///
/// Also returns the per-event signal probabilities seen in the forward pass.
pub fn backward(
    cloud: &EventCloud,
    w: &ModelWeights,
    cfg: &ModelConfig,
) -> Result<(f64, ModelWeights, Vec<f64>)> {
    let labels = cloud_labels(cloud, 0)?;
    let geo = Geometry::build(cloud, cfg)?;
    let (logits_u, cache) = net::forward_geometry(&geo, w, cfg, true)?;
    let logits = logits_u.gather_rows(&geo.inverse);
    let (loss, dl) = cross_entropy_grad(&logits, labels)?;
    let mut dl_u = Mat::zeros(logits_u.rows, 2);
    for (i, &u) in geo.inverse.iter().enumerate() {
        let row = dl_u.row_mut(u);
        row[0] += dl.get(i, 0);
        row[1] += dl.get(i, 1);
    }
    let mut g = w.zeros_like();
    net::backward(
        &geo,
        w,
        cfg,
        cache.as_ref().expect("cached forward"),
        &dl_u,
        &mut g,
    )?;
    let mut bad = None;
    g.visit("", &mut |name, t| {
        if bad.is_none() && !t.is_finite() {
            bad = Some(name);
        }
    });
    if let Some(name) = bad {
        return Err(Error::NonFinite(format!("gradient of {name}")));
    }
    let scores = (0..logits.rows)
        .map(|r| net::signal_prob(logits.row(r)))
        .collect();
    Ok((loss, g, scores))
}

/// First and second moments for every tensor, in visit order.
#[derive(Debug, Clone, PartialEq)]
pub struct OptState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
}

impl OptState {
    pub fn new(params: &impl Params) -> Self {
        let mut m = Vec::new();
        params.visit("", &mut |_, t| m.push(t.zeros_like()));
        OptState {
            v: m.clone(),
            m,
            step: 0,
        }
    }
}

/// One AdamW update with decoupled weight decay and bias correction.
pub fn adamw_step<P: Params>(
    weights: &mut P,
    grads: &P,
    state: &mut OptState,
    cfg: &TrainConfig,
) -> Result<()> {
    let mut gs: Vec<&Tensor> = Vec::new();
    grads.visit("", &mut |_, t| gs.push(t));
    if gs.len() != state.m.len() {
        return Err(Error::Shape(format!(
            "{} gradients for {} moments",
            gs.len(),
            state.m.len()
        )));
    }
    state.step += 1;
    let bc1 = 1.0 - cfg.beta1.powi(state.step as i32);
    let bc2 = 1.0 - cfg.beta2.powi(state.step as i32);
    let mut i = 0;
    let mut shape_err = None;
    weights.visit_mut("", &mut |name, w| {
        let (g, m, v) = (gs[i], &mut state.m[i], &mut state.v[i]);
        i += 1;
        if g.shape != w.shape || m.shape != w.shape {
            shape_err.get_or_insert(name);
            return;
        }
        for k in 0..w.data.len() {
            m.data[k] = cfg.beta1 * m.data[k] + (1.0 - cfg.beta1) * g.data[k];
            v.data[k] = cfg.beta2 * v.data[k] + (1.0 - cfg.beta2) * g.data[k] * g.data[k];
            let mh = m.data[k] / bc1;
            let vh = v.data[k] / bc2;
            w.data[k] -= cfg.lr * (mh / (vh.sqrt() + cfg.eps) + cfg.weight_decay * w.data[k]);
        }
    });
    match shape_err {
        Some(name) => Err(Error::Shape(format!("gradient shape mismatch at {name}"))),
        None => Ok(()),
    }
}

fn add_scaled(acc: &mut ModelWeights, g: &ModelWeights, k: f64) {
    let mut src: Vec<&Tensor> = Vec::new();
    g.visit("", &mut |_, t| src.push(t));
    let mut i = 0;
    acc.visit_mut("", &mut |_, t| {
        for (a, b) in t.data.iter_mut().zip(&src[i].data) {
            *a += k * b;
        }
        i += 1;
    });
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean per-cloud loss over the epoch's steps.
    pub loss: f64,
    /// AUC of the scores produced during the epoch's forward passes.
    pub train_auc: Option<f64>,
    pub val_auc: Option<f64>,
}

pub fn history_csv(history: &[EpochStats]) -> String {
    let opt = |v: Option<f64>| v.map_or_else(|| "nan".to_string(), |a| a.to_string());
    let mut out = String::from("epoch,loss,train_auc,val_auc\n");
    for h in history {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            h.epoch,
            h.loss,
            opt(h.train_auc),
            opt(h.val_auc)
        );
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub weights: ModelWeights,
    pub history: Vec<EpochStats>,
    /// Dataset indices used for validation.
    pub val_indices: Vec<usize>,
}

/// AUC of the model over a set of labeled clouds, pooled across clouds.
pub fn evaluate_auc(
    clouds: &[EventCloud],
    w: &ModelWeights,
    cfg: &ModelConfig,
) -> Result<Option<f64>> {
    let per: Vec<(Vec<f64>, Vec<u8>)> = clouds
        .par_iter()
        .enumerate()
        .map(|(i, c)| {
            Ok((
                net::predict_scores(c, w, cfg)?,
                cloud_labels(c, i)?.to_vec(),
            ))
        })
        .collect::<Result<_>>()?;
    let (scores, labels): (Vec<f64>, Vec<u8>) = per
        .into_iter()
        .flat_map(|(s, l)| s.into_iter().zip(l))
        .unzip();
    pooled_auc(&scores, &labels)
}

fn pooled_auc(scores: &[f64], labels: &[u8]) -> Result<Option<f64>> {
    match metrics::auc(scores, labels) {
        Ok(a) => Ok(Some(a)),
        Err(Error::SingleClass { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Deterministic split of `n` clouds into (train, validation) index sets.
pub fn split_indices(n: usize, val_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ SPLIT_SALT);
    idx.shuffle(&mut rng);
    let n_val = if n < 2 {
        0
    } else {
        ((n as f64 * val_fraction).ceil() as usize).min(n - 1)
    };
    let val = idx.split_off(n - n_val);
    (idx, val)
}

const SPLIT_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

/// Splits `dataset` by [`split_indices`] and trains on the larger part.
pub fn train(
    dataset: &[EventCloud],
    mcfg: &ModelConfig,
    tcfg: &TrainConfig,
    on_epoch: Option<&mut dyn FnMut(&EpochStats)>,
) -> Result<TrainOutput> {
    let (tr, va) = split_indices(dataset.len(), tcfg.val_fraction, tcfg.seed);
    let train_set: Vec<EventCloud> = tr.iter().map(|&i| dataset[i].clone()).collect();
    let val_set: Vec<EventCloud> = va.iter().map(|&i| dataset[i].clone()).collect();
    let init = ModelWeights::init(mcfg, tcfg.seed)?;
    let (weights, history) = train_on(&train_set, &val_set, init, mcfg, tcfg, on_epoch)?;
    Ok(TrainOutput {
        weights,
        history,
        val_indices: va,
    })
}

/// Trains `weights` on `train_set`, reporting validation AUC on `val_set`
/// after every epoch.
pub fn train_on(
    train_set: &[EventCloud],
    val_set: &[EventCloud],
    mut weights: ModelWeights,
    mcfg: &ModelConfig,
    tcfg: &TrainConfig,
    mut on_epoch: Option<&mut dyn FnMut(&EpochStats)>,
) -> Result<(ModelWeights, Vec<EpochStats>)> {
    tcfg.validate()?;
    mcfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Empty("training set"));
    }
    for (i, c) in train_set.iter().chain(val_set).enumerate() {
        cloud_labels(c, i)?;
        if c.is_empty() {
            return Err(Error::Empty("training cloud"));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(tcfg.seed);
    let mut state = OptState::new(&weights);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::with_capacity(tcfg.epochs);
    for epoch in 0..tcfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut scores = Vec::new();
        let mut labels = Vec::new();
        for batch in order.chunks(tcfg.batch_size) {
            let results: Vec<(f64, ModelWeights, Vec<f64>)> = batch
                .par_iter()
                .map(|&i| backward(&train_set[i], &weights, mcfg))
                .collect::<Result<_>>()?;
            let k = 1.0 / batch.len() as f64;
            let mut grads = weights.zeros_like();
            for (&i, (loss, g, s)) in batch.iter().zip(&results) {
                add_scaled(&mut grads, g, k);
                loss_sum += loss * k;
                scores.extend_from_slice(s);
                labels.extend_from_slice(cloud_labels(&train_set[i], i)?);
            }
            adamw_step(&mut weights, &grads, &mut state, tcfg)?;
            if !weights.is_finite() {
                return Err(Error::NonFinite(format!(
                    "weights after epoch {epoch} step {}",
                    state.step
                )));
            }
        }
        let steps = order.len().div_ceil(tcfg.batch_size);
        let stats = EpochStats {
            epoch,
            loss: loss_sum / steps as f64,
            train_auc: pooled_auc(&scores, &labels)?,
            val_auc: if val_set.is_empty() {
                None
            } else {
                evaluate_auc(val_set, &weights, mcfg)?
            },
        };
        if let Some(cb) = on_epoch.as_mut() {
            cb(&stats);
        }
        history.push(stats);
    }
    Ok((weights, history))
}

/// Result of comparing one tensor's analytic gradient with central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_err: f64,
    pub max_abs_grad: f64,
}

/// Central-difference check of every scalar of every weight tensor.
///
/// The relative error of each entry is `|a - n| / max(|a|, |n|, floor)`.
pub fn grad_check(
    cloud: &EventCloud,
    w: &ModelWeights,
    cfg: &ModelConfig,
    step: f64,
    floor: f64,
) -> Result<Vec<GradCheck>> {
    let labels = cloud_labels(cloud, 0)?;
    let (_, g, _) = backward(cloud, w, cfg)?;
    let geo = Geometry::build(cloud, cfg)?;
    let loss_at = |probe: &ModelWeights| -> Result<f64> {
        let (lu, _) = net::forward_geometry(&geo, probe, cfg, false)?;
        cross_entropy(&lu.gather_rows(&geo.inverse), labels)
    };
    let analytic: Vec<(String, Tensor)> = g
        .named_tensors()
        .into_iter()
        .map(|(n, t)| (n, t.clone()))
        .collect();
    let mut probe = w.clone();
    let mut out = Vec::with_capacity(analytic.len());
    for (ti, (name, ga)) in analytic.iter().enumerate() {
        let mut max_rel: f64 = 0.0;
        let mut max_abs: f64 = 0.0;
        for k in 0..ga.data.len() {
            nudge(&mut probe, ti, k, step);
            let lp = loss_at(&probe)?;
            nudge(&mut probe, ti, k, -2.0 * step);
            let lm = loss_at(&probe)?;
            nudge(&mut probe, ti, k, step);
            let num = (lp - lm) / (2.0 * step);
            let a = ga.data[k];
            let rel = (a - num).abs() / a.abs().max(num.abs()).max(floor);
            max_rel = max_rel.max(rel);
            max_abs = max_abs.max(a.abs());
        }
        out.push(GradCheck {
            name: name.clone(),
            checked: ga.data.len(),
            max_rel_err: max_rel,
            max_abs_grad: max_abs,
        });
    }
    Ok(out)
}

fn nudge(w: &mut ModelWeights, tensor: usize, k: usize, delta: f64) {
    let mut i = 0;
    w.visit_mut("", &mut |_, t| {
        if i == tensor {
            t.data[k] += delta;
        }
        i += 1;
    });
}
