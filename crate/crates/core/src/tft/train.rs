use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{clip_global_norm, Adam, AdamConfig, AutodiffError, Graph, ParamStore, Var};
use crate::domain::{extract_windows, DomainError, LabeledWindow, NormStats, TireSeries};

use super::layers::Batch;
use super::model::Model;
use super::{ModelKind, TftConfig, TftError};

/// Anything trainable with the quantile loss on windowed data.
pub trait Forecaster {
    fn config(&self) -> &TftConfig;
    fn kind(&self) -> ModelKind;
    fn norm(&self) -> &NormStats;
    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;
    /// Quantile predictions `[B, L_fut, nq]` before post-processing.
    fn forward(&self, g: &mut Graph, batch: &Batch) -> Result<Var, AutodiffError>;

    fn batch(&self, windows: &[&crate::domain::FeatureWindow]) -> Result<Batch, TftError> {
        let c = self.config();
        Batch::from_windows(windows, self.norm(), c.l_hist, c.l_fut)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    /// Mean training loss of each epoch (dropout active).
    pub train_loss: Vec<f64>,
    /// Validation loss after each epoch (eval mode); empty without a validation set.
    pub val_loss: Vec<f64>,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
}

/// Deterministic series-level split into (train, validation) indices.
pub fn split_series(n: usize, train_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((n as f64 * train_fraction).round() as usize).clamp(n.min(1), n);
    let mut train = idx[..n_train].to_vec();
    let mut val = idx[n_train..].to_vec();
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

/// Windows from every series long enough; short ones are skipped.
pub fn build_windows(series: &[TireSeries], l_hist: usize, l_fut: usize, stride: usize) -> Result<Vec<LabeledWindow>, TftError> {
    let mut out = Vec::new();
    for s in series {
        match extract_windows(s, l_hist, l_fut, stride) {
            Ok(w) => out.extend(w),
            Err(DomainError::SeriesTooShort { len, needed }) => {
                log::warn!("skipping {}: {len} records, {needed} needed", s.tire_id)
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok(out)
}

fn flat_targets(windows: &[&LabeledWindow]) -> Vec<f64> {
    windows.iter().flat_map(|(_, y)| y.iter().copied()).collect()
}

/// Mean eval-mode quantile loss over `windows`.
pub(crate) fn eval_loss<M: Forecaster + ?Sized>(model: &M, windows: &[LabeledWindow]) -> Result<f64, TftError> {
    let bs = model.config().batch_size.max(1);
    let mut total = 0.0;
    let mut n = 0usize;
    for chunk in windows.chunks(bs) {
        let refs: Vec<&LabeledWindow> = chunk.iter().collect();
        let batch = model.batch(&refs.iter().map(|w| &w.0).collect::<Vec<_>>())?;
        let mut g = Graph::new(model.params());
        let pred = model.forward(&mut g, &batch)?;
        let loss = g.pinball(pred, &flat_targets(&refs), &model.config().quantiles)?;
        total += g.value(loss).item() * chunk.len() as f64;
        n += chunk.len();
    }
    Ok(total / n as f64)
}

/// Cosine schedule from `learning_rate` to `learning_rate * lr_final_fraction`.
pub(crate) fn scheduled_lr(cfg: &TftConfig, epoch: usize) -> f64 {
    if cfg.epochs < 2 {
        return cfg.learning_rate;
    }
    let t = epoch as f64 / (cfg.epochs - 1) as f64;
    let f = cfg.lr_final_fraction + (1.0 - cfg.lr_final_fraction) * 0.5 * (1.0 + (std::f64::consts::PI * t).cos());
    cfg.learning_rate * f
}

/// Minimizes the mean quantile loss with Adam. When `val` is non-empty the
/// parameters of the best validation epoch are kept.
pub fn train<M: Forecaster + ?Sized>(model: &mut M, train: &[LabeledWindow], val: &[LabeledWindow]) -> Result<History, TftError> {
    if train.is_empty() {
        return Err(TftError::EmptyDataset);
    }
    let cfg = model.config().clone();
    let adam_cfg = AdamConfig { learning_rate: cfg.learning_rate, weight_decay: cfg.weight_decay, ..AdamConfig::default() };
    let mut opt = Adam::new(adam_cfg, model.params());
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0001);
    let mut history = History::default();
    let mut best: Option<(f64, ParamStore)> = None;
    for epoch in 0..cfg.epochs {
        opt.set_learning_rate(scheduled_lr(&cfg, epoch));
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let refs: Vec<&LabeledWindow> = chunk.iter().map(|&i| &train[i]).collect();
            let batch = model.batch(&refs.iter().map(|w| &w.0).collect::<Vec<_>>())?;
            let targets = flat_targets(&refs);
            let mut drop_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            drop_rng.set_stream(((epoch as u64) << 32) | bi as u64);
            let (loss, mut grads) = {
                let mut g = Graph::with_dropout(model.params(), drop_rng);
                let step = model
                    .forward(&mut g, &batch)
                    .and_then(|p| g.pinball(p, &targets, &cfg.quantiles))
                    .map_err(|e| match e {
                        AutodiffError::NonFiniteValue(_) => TftError::NonFiniteLoss { epoch, batch: bi },
                        other => other.into(),
                    })?;
                (g.value(step).item(), g.backward(step)?)
            };
            clip_global_norm(&mut grads, cfg.grad_clip);
            opt.step(model.params_mut(), &grads);
            epoch_loss += loss * chunk.len() as f64;
        }
        history.train_loss.push(epoch_loss / train.len() as f64);
        if !val.is_empty() {
            let v = eval_loss(model, val)?;
            history.val_loss.push(v);
            if best.as_ref().is_none_or(|(b, _)| v < *b) {
                best = Some((v, model.params().clone()));
                history.best_epoch = epoch;
            }
        } else {
            history.best_epoch = epoch;
        }
        log::debug!(
            "epoch {epoch}: train {:.5} val {:?}",
            history.train_loss[epoch],
            history.val_loss.last()
        );
    }
    if let Some((_, params)) = best {
        *model.params_mut() = params;
    }
    Ok(history)
}

/// Series split, training-split normalization, windowing, build and train.
/// Returns the model, its history and the (train, validation) series indices.
pub fn fit(series: &[TireSeries], config: &TftConfig) -> Result<(Model, History, (Vec<usize>, Vec<usize>)), TftError> {
    config.validate()?;
    if series.is_empty() {
        return Err(TftError::EmptyDataset);
    }
    let (tr, va) = split_series(series.len(), config.train_fraction, config.seed);
    let pick = |idx: &[usize]| idx.iter().map(|&i| series[i].clone()).collect::<Vec<_>>();
    let (train_s, val_s) = (pick(&tr), pick(&va));
    let norm = NormStats::fit_series(&train_s)?;
    let train_w = build_windows(&train_s, config.l_hist, config.l_fut, config.stride)?;
    let val_w = build_windows(&val_s, config.l_hist, config.l_fut, config.stride)?;
    let mut model = Model::build(config.clone(), ModelKind::Base, norm)?;
    let history = train(&mut model, &train_w, &val_w)?;
    Ok((model, history, (tr, va)))
}
