use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::layers::sigmoid;
use super::model::SeResNet;
use super::optim::{Adam, AdamConfig, LrSchedule};
use crate::error::{Error, Result};
use crate::exec;
use crate::record_io::{LabelVector, N_SCORED};
use crate::sign_loss::{bce_loss, bce_loss_grad, sign_loss, sign_loss_grad, LossBatch};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Sign,
    Bce,
}

impl LossKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sign" => Ok(LossKind::Sign),
            "bce" => Ok(LossKind::Bce),
            other => Err(Error::Config(format!("unknown loss '{other}' (sign, bce)"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::Sign => "sign",
            LossKind::Bce => "bce",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub loss: LossKind,
    pub schedule: LrSchedule,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 19,
            batch_size: 16,
            seed: 0,
            loss: LossKind::Sign,
            schedule: LrSchedule::default(),
            adam: AdamConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub lr: f64,
    /// Mean per-record loss over the epoch.
    pub mean_loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
}

impl History {
    pub fn losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.mean_loss).collect()
    }
}

/// Stacks `[leads x T]` examples into a `[B x leads x T]` batch.
pub fn stack_inputs(examples: &[&Tensor]) -> Result<Tensor> {
    Tensor::stack(examples)
}

fn targets(labels: &[&LabelVector]) -> Vec<f64> {
    labels.iter().flat_map(|l| l.as_f64()).collect()
}

/// Loss value and d(loss)/d(logits) for one batch.
fn batch_loss(logits: &Tensor, labels: &[&LabelVector], kind: LossKind) -> Result<(f64, Tensor)> {
    let b = labels.len();
    let probs: Vec<f64> = logits.data().iter().map(|&z| sigmoid(z)).collect();
    let batch = LossBatch::new(probs.clone(), targets(labels), b, N_SCORED)?;
    let (value, dp) = match kind {
        LossKind::Sign => (sign_loss(&batch).total, sign_loss_grad(&batch)),
        LossKind::Bce => (bce_loss(&batch).total, bce_loss_grad(&batch)),
    };
    let grad = dp
        .iter()
        .zip(&probs)
        .map(|(g, p)| g * p * (1.0 - p))
        .collect();
    Ok((value, Tensor::new(logits.shape().to_vec(), grad)?))
}

/// Mini-batch Adam training. Batches are drawn from a seeded shuffle each
/// epoch, so the history is a pure function of model, data and config.
pub fn train(
    model: &mut SeResNet,
    data: &[(Tensor, LabelVector)],
    config: &TrainConfig,
) -> Result<History> {
    if data.is_empty() {
        return Err(Error::Validation("training set is empty".into()));
    }
    if config.batch_size == 0 || config.epochs == 0 {
        return Err(Error::Config(
            "epochs and batch_size must be positive".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(2);
    let mut adam = Adam::new(config.adam);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = History::default();

    for epoch in 1..=config.epochs {
        let lr = config.schedule.lr(epoch);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (bi, chunk) in order.chunks(config.batch_size).enumerate() {
            let inputs: Vec<&Tensor> = chunk.iter().map(|&i| &data[i].0).collect();
            let labels: Vec<&LabelVector> = chunk.iter().map(|&i| &data[i].1).collect();
            let x = stack_inputs(&inputs)?;
            let (logits, trace) = model.forward_train(&x)?;
            if !logits.all_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: bi,
                    detail: "non-finite logits".into(),
                });
            }
            let (loss, grad) = batch_loss(&logits, &labels, config.loss)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: bi,
                    detail: format!("loss {loss} at lr {lr}"),
                });
            }
            loss_sum += loss * chunk.len() as f64;
            model.zero_grad();
            model.backward(&trace, &grad)?;
            adam.begin_step();
            let mut index = 0;
            model.for_each_param(&mut |_, p| {
                adam.update(index, p, lr);
                index += 1;
            });
        }
        let mean_loss = loss_sum / data.len() as f64;
        log::info!("epoch {epoch}: lr {lr} loss {mean_loss:.6}");
        history.epochs.push(EpochRecord {
            epoch,
            lr,
            mean_loss,
        });
    }
    Ok(history)
}

/// Sigmoid probabilities in eval mode, one `[27]` row per example.
/// Examples are processed in chunks of `batch_size`, in parallel when enabled.
pub fn predict_probs(
    model: &SeResNet,
    inputs: &[&Tensor],
    batch_size: usize,
) -> Result<Vec<[f64; N_SCORED]>> {
    let batch_size = batch_size.max(1);
    let chunks: Vec<&[&Tensor]> = inputs.chunks(batch_size).collect();
    let results = exec::map(&chunks, |chunk| -> Result<Vec<[f64; N_SCORED]>> {
        let logits = model.forward_eval(&stack_inputs(chunk)?)?;
        Ok(logits
            .data()
            .chunks(N_SCORED)
            .map(|row| {
                let mut p = [0.0; N_SCORED];
                p.iter_mut().zip(row).for_each(|(o, &z)| *o = sigmoid(z));
                p
            })
            .collect())
    });
    let mut out = Vec::with_capacity(inputs.len());
    for r in results {
        out.extend(r?);
    }
    Ok(out)
}

/// Fraction of examples whose thresholded 27-vector matches the labels exactly.
pub fn exact_match_accuracy(
    model: &SeResNet,
    data: &[(Tensor, LabelVector)],
    threshold: f64,
) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let inputs: Vec<&Tensor> = data.iter().map(|(x, _)| x).collect();
    let probs = predict_probs(model, &inputs, 32)?;
    let hits = probs
        .iter()
        .zip(data)
        .filter(|(p, (_, y))| (0..N_SCORED).all(|i| (p[i] >= threshold) == y.get(i)))
        .count();
    Ok(hits as f64 / data.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::model::SeResNetConfig;
    use rand::Rng;

    fn toy_data(n: usize, seed: u64) -> Vec<(Tensor, LabelVector)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let class = i % 2;
                let freq = if class == 0 { 0.02 } else { 0.1 };
                let data: Vec<f64> = (0..8 * 64)
                    .map(|j| {
                        ((j % 64) as f64 * freq * std::f64::consts::TAU).sin()
                            + 0.1 * rng.random_range(-1.0..1.0)
                    })
                    .collect();
                let labels = LabelVector::from_indices(&[if class == 0 { 3 } else { 21 }]);
                (Tensor::new(vec![8, 64], data).unwrap(), labels)
            })
            .collect()
    }

    fn small() -> SeResNetConfig {
        SeResNetConfig {
            input_length: 64,
            stem_channels: 4,
            channels_per_stage: vec![4],
            blocks_per_stage: vec![1],
            ..SeResNetConfig::default()
        }
    }

    #[test]
    fn same_seed_same_history() {
        let data = toy_data(20, 1);
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 8,
            ..Default::default()
        };
        let run = || {
            let mut m = SeResNet::new(small()).unwrap();
            (train(&mut m, &data, &cfg).unwrap(), m)
        };
        let (h1, m1) = run();
        let (h2, m2) = run();
        assert_eq!(h1, h2);
        assert_eq!(m1, m2);
        assert_eq!(h1.epochs.len(), 3);
        assert!(h1.losses()[2] < h1.losses()[0]);
    }

    #[test]
    fn bce_option_trains_too() {
        let data = toy_data(10, 2);
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 4,
            loss: LossKind::Bce,
            ..Default::default()
        };
        let mut m = SeResNet::new(small()).unwrap();
        let h = train(&mut m, &data, &cfg).unwrap();
        assert!(h.losses().iter().all(|l| l.is_finite()));
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let mut m = SeResNet::new(small()).unwrap();
        assert!(train(&mut m, &[], &TrainConfig::default()).is_err());
    }

    #[test]
    fn exploding_weights_abort_with_diagnostics() {
        let data = toy_data(4, 3);
        let mut m = SeResNet::new(small()).unwrap();
        m.head.weight.value.fill(f64::NAN);
        let err = train(&mut m, &data, &TrainConfig::default()).unwrap_err();
        assert!(matches!(
            err,
            Error::NonFiniteLoss {
                epoch: 1,
                batch: 0,
                ..
            }
        ));
    }

    #[test]
    fn parallel_and_sequential_predictions_agree() {
        let data = toy_data(6, 4);
        let m = SeResNet::new(small()).unwrap();
        let inputs: Vec<&Tensor> = data.iter().map(|d| &d.0).collect();
        crate::exec::set_parallel(false);
        let a = predict_probs(&m, &inputs, 4).unwrap();
        crate::exec::set_parallel(true);
        let b = predict_probs(&m, &inputs, 4).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().flatten().all(|p| *p > 0.0 && *p < 1.0));
    }
}
