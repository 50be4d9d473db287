use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::{Dataset, Targets};
use super::sgd::{lr_at, Sgd, SgdConfig};
use crate::error::{Error, Result};
use crate::nn::{apply_stat_updates, Ctx, LossTarget, Mode, Module};
use crate::params::ParamStore;
use crate::tensor::Tensor;

/// Independent random streams derived from one seed, so changing how data
/// is drawn does not change initialization or batch order.
pub struct Streams {
    pub init: ChaCha8Rng,
    pub data: ChaCha8Rng,
    pub shuffle: ChaCha8Rng,
}

impl Streams {
    pub fn new(seed: u64) -> Self {
        let stream = |k: u64| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(k);
            r
        };
        Streams { init: stream(1), data: stream(2), shuffle: stream(3) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean batch loss over the epoch; for epoch 0 the eval-mode loss on the
    /// training set before any update.
    pub train_loss: f64,
    /// Eval-mode MSE for regression, top-1 accuracy for classification.
    pub eval_metric: f64,
}

fn loss_on<'s, M: Module<f32> + ?Sized>(
    model: &M,
    store: &'s ParamStore<f32>,
    batch: &Dataset,
    mode: Mode,
) -> Result<(f64, Option<usize>, Ctx<'s, f32>, crate::autograd::Var)> {
    let mut cx = Ctx::new(store, mode);
    let x = cx.input(batch.inputs.clone());
    let y = model.forward(&mut cx, x)?;
    let correct = match &batch.targets {
        Targets::Labels(l) => Some(count_correct(cx.value(y), l)),
        Targets::Values(_) => None,
    };
    let loss = match &batch.targets {
        Targets::Values(t) => cx.loss(y, LossTarget::Values(t))?,
        Targets::Labels(l) => cx.loss(y, LossTarget::Labels(l))?,
    };
    let v = cx.value(loss).item() as f64;
    Ok((v, correct, cx, loss))
}

fn count_correct(logits: &Tensor<f32>, labels: &[usize]) -> usize {
    let k = logits.numel() / labels.len();
    logits
        .data()
        .chunks(k)
        .zip(labels)
        .filter(|(row, &l)| {
            let arg = row.iter().enumerate().fold(0, |b, (i, &v)| if v > row[b] { i } else { b });
            arg == l
        })
        .count()
}

/// Eval-mode mean loss and, for labelled data, top-1 accuracy.
pub fn evaluate<M: Module<f32> + ?Sized>(
    model: &M,
    store: &ParamStore<f32>,
    data: &Dataset,
    batch_size: usize,
) -> Result<(f64, Option<f64>)> {
    let n = data.len();
    let (mut loss, mut correct) = (0.0, 0usize);
    let idx: Vec<usize> = (0..n).collect();
    for chunk in idx.chunks(batch_size.max(1)) {
        let batch = data.batch(chunk)?;
        let (l, c, _, _) = loss_on(model, store, &batch, Mode::Eval)?;
        loss += l * chunk.len() as f64;
        correct += c.unwrap_or(0);
    }
    let acc = matches!(data.targets, Targets::Labels(_)).then(|| correct as f64 / n as f64);
    Ok((loss / n as f64, acc))
}

fn metric<M: Module<f32> + ?Sized>(model: &M, store: &ParamStore<f32>, data: &Dataset, bs: usize) -> Result<f64> {
    let (loss, acc) = evaluate(model, store, data, bs)?;
    Ok(acc.unwrap_or(loss))
}

/// Runs `config.epochs` epochs of shuffled mini-batch SGD.
///
/// The returned history starts with an epoch-0 record taken before training.
/// `shuffle` is the only randomness consumed.
pub fn train_loop<M: Module<f32> + ?Sized>(
    model: &M,
    store: &mut ParamStore<f32>,
    train: &Dataset,
    eval: &Dataset,
    config: &SgdConfig,
    shuffle: &mut ChaCha8Rng,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<Vec<EpochRecord>> {
    config.validate()?;
    let bs = config.batch_size;
    let mut history = Vec::with_capacity(config.epochs + 1);
    let first = EpochRecord {
        epoch: 0,
        train_loss: evaluate(model, store, train, bs)?.0,
        eval_metric: metric(model, store, eval, bs)?,
    };
    on_epoch(&first);
    history.push(first);
    let mut sgd = Sgd::from_config(config);
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=config.epochs {
        let lr = lr_at(epoch - 1, config);
        order.shuffle(shuffle);
        let mut total = 0.0;
        for chunk in order.chunks(bs) {
            let batch = train.batch(chunk)?;
            let (l, _, cx, loss) = loss_on(model, store, &batch, Mode::Train)?;
            if !l.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite training loss in epoch {epoch}; last good epoch {}",
                    epoch - 1
                )));
            }
            total += l * chunk.len() as f64;
            let (tape, stats) = cx.finish();
            let grads = tape.backward(loss)?;
            store.zero_grad();
            for (id, g) in grads.params() {
                if let Some(g) = g {
                    store.accumulate_grad(id, g)?;
                }
            }
            apply_stat_updates(store, &stats)?;
            sgd.step(store, lr)?;
        }
        let rec =
            EpochRecord { epoch, train_loss: total / train.len() as f64, eval_metric: metric(model, store, eval, bs)? };
        on_epoch(&rec);
        history.push(rec);
    }
    Ok(history)
}
