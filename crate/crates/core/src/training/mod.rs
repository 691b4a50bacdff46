//! Optimisation: weighted cross-entropy, poly learning rate, SGD with
//! momentum, and the training loop.

mod loss;
mod optim;
mod schedule;

pub use loss::{
    weighted_cross_entropy, weighted_cross_entropy_value, LossNormalization, LossWeights,
};
pub use optim::{sgd_momentum_step, OptimState};
pub use schedule::poly_lr;

use serde::{Deserialize, Serialize};

use crate::dataset::Sample;
use crate::error::{Error, Result};
use crate::metrics::{confusion_counts, ConfusionCounts, EvalReport};
use crate::network::{predict_mask, Architecture, Sanet};
use crate::par::Exec;
use crate::rng::Rng;
use crate::slice_conv::Direction;
use crate::tensor::Tape;

/// Order in which the enabled MSC directions are applied.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MscOrder {
    /// vd, vu, hl, hr, mdd, mdu, cdd, cdu, skipping disabled ones.
    #[default]
    Canonical,
    AsListed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub initial_lr: f64,
    pub power: f64,
    pub max_iter: usize,
    pub momentum: f64,
    pub lambda_b: f64,
    pub lambda_l: f64,
    pub loss_normalization: LossNormalization,
    pub seed: u64,
    pub kernel_size: usize,
    pub directions: Vec<Direction>,
    pub msc_order: MscOrder,
    pub channels: [usize; 3],
    pub n_classes: usize,
    /// Evaluate every this many iterations (and after the last); 0 means
    /// only after the last.
    pub eval_interval: usize,
    pub hflip: bool,
    /// Rescale the batch gradient to at most this L2 norm; `None` disables.
    pub grad_clip: Option<f64>,
    pub train_data: Option<String>,
    pub eval_data: Option<String>,
    pub out_dir: Option<String>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let arch = Architecture::default();
        TrainConfig {
            batch_size: 4,
            initial_lr: 0.01,
            power: 0.9,
            max_iter: 2000,
            momentum: 0.9,
            lambda_b: 0.4,
            lambda_l: 1.0,
            loss_normalization: LossNormalization::PerTerm,
            seed: 0,
            kernel_size: arch.kernel_size,
            directions: arch.directions,
            msc_order: MscOrder::Canonical,
            channels: arch.channels,
            n_classes: arch.n_classes,
            eval_interval: 100,
            hflip: false,
            grad_clip: Some(10.0),
            train_data: None,
            eval_data: None,
            out_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [("initial_lr", self.initial_lr), ("power", self.power)];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [
            ("momentum", self.momentum),
            ("lambda_b", self.lambda_b),
            ("lambda_l", self.lambda_l),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!(
                    "{name} must be nonnegative, got {v}"
                )));
            }
        }
        if let Some(c) = self.grad_clip {
            if !(c.is_finite() && c > 0.0) {
                return Err(Error::Config(format!(
                    "grad_clip must be positive, got {c}"
                )));
            }
        }
        if self.max_iter == 0 {
            return Err(Error::Config("max_iter must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        self.architecture()?.validate()
    }

    pub fn architecture(&self) -> Result<Architecture> {
        let mut directions = self.directions.clone();
        let mut seen = [false; 8];
        for d in &directions {
            if std::mem::replace(&mut seen[d.index()], true) {
                return Err(Error::Config(format!("direction {d} listed twice")));
            }
        }
        if self.msc_order == MscOrder::Canonical {
            directions.sort_by_key(|d| d.index());
        }
        Ok(Architecture {
            channels: self.channels,
            n_classes: self.n_classes,
            kernel_size: self.kernel_size,
            directions,
        })
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            background: self.lambda_b,
            lane: self.lambda_l,
            normalization: self.loss_normalization,
        }
    }
}

/// One metrics-log line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub iter: usize,
    pub lr: f64,
    pub loss: f64,
    /// L2 norm of the batch gradient over all parameters, before clipping.
    #[serde(skip)]
    pub grad_norm: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mean_f1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mean_iou: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub final_model: Sanet,
    pub best_model: Sanet,
    pub best_iter: usize,
    pub best_report: EvalReport,
    pub log: Vec<LogRecord>,
    pub steps: usize,
}

/// Corpus-level confusion counts of `model` on `samples`.
pub fn evaluate(model: &Sanet, samples: &[Sample], exec: Exec) -> Result<ConfusionCounts> {
    let n = model.architecture().n_classes;
    let per_image = exec.map_range(samples.len(), |i| {
        let s = &samples[i];
        let logits = model.infer(&s.image)?;
        confusion_counts(&predict_mask(&logits)?, &s.mask, n)
    });
    let mut total = ConfusionCounts::new(n);
    for c in per_image {
        total += &c?;
    }
    Ok(total)
}

/// Batch index stream: a fresh seeded permutation each epoch, batches may
/// straddle an epoch boundary.
struct BatchSampler {
    rng: Rng,
    order: Vec<usize>,
    pos: usize,
}

impl BatchSampler {
    fn new(n: usize, rng: Rng) -> Self {
        BatchSampler {
            rng,
            order: (0..n).collect(),
            pos: n,
        }
    }

    fn next_batch(&mut self, size: usize) -> Vec<usize> {
        (0..size)
            .map(|_| {
                if self.pos == self.order.len() {
                    self.rng.shuffle(&mut self.order);
                    self.pos = 0;
                }
                self.pos += 1;
                self.order[self.pos - 1]
            })
            .collect()
    }
}

fn check_samples(samples: &[Sample], what: &str) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::Data(format!("{what} set is empty")));
    }
    for (i, s) in samples.iter().enumerate() {
        let (c, h, w) = s.image.chw()?;
        if c != 1 || (h, w) != (s.mask.height(), s.mask.width()) {
            return Err(Error::Data(format!(
                "{what} sample {i}: image {c}×{h}×{w} does not match mask {}×{}",
                s.mask.height(),
                s.mask.width()
            )));
        }
    }
    Ok(())
}

/// Loss and per-parameter gradients (already divided by `scale`) of one sample.
/// Per-parameter gradients, by name.
type NamedGrads = Vec<(String, Vec<f64>)>;

fn sample_grads(
    model: &Sanet,
    sample: &Sample,
    flip: bool,
    weights: &LossWeights,
    scale: f64,
) -> Result<(f64, NamedGrads)> {
    let mut tape = Tape::new();
    let (image, mask) = if flip {
        (sample.image.flip_w(), sample.mask.flip_lr())
    } else {
        (sample.image.clone(), sample.mask.clone())
    };
    let x = tape.constant(image)?;
    let logits = model.forward(&mut tape, x)?;
    let loss = weighted_cross_entropy(&mut tape, logits, &mask, weights)?;
    let value = tape.value(loss).data()[0];
    let scaled = tape.scale(loss, scale)?;
    Ok((value, tape.backward(scaled)?.into_named()))
}

fn diverged(iter: usize, loss: f64) -> Error {
    Error::Diverged { iter, loss }
}

pub fn train(
    config: &TrainConfig,
    train_set: &[Sample],
    eval_set: &[Sample],
) -> Result<TrainOutcome> {
    train_with(config, train_set, eval_set, Exec::default(), |_| Ok(()))
}

/// Runs `config.max_iter` SGD steps, calling `observe` with every log record
/// as it is produced.
pub fn train_with(
    config: &TrainConfig,
    train_set: &[Sample],
    eval_set: &[Sample],
    exec: Exec,
    mut observe: impl FnMut(&LogRecord) -> Result<()>,
) -> Result<TrainOutcome> {
    config.validate()?;
    check_samples(train_set, "training")?;
    check_samples(eval_set, "evaluation")?;
    let mut model = Sanet::init(config.architecture()?, config.seed)?;
    let mut state = OptimState::new(model.params());
    let mut sampler = BatchSampler::new(train_set.len(), Rng::derive(config.seed, 1));
    let mut flip_rng = Rng::derive(config.seed, 2);
    let weights = config.loss_weights();
    let scale = 1.0 / config.batch_size as f64;
    let mut log = Vec::with_capacity(config.max_iter);
    let mut best: Option<(Sanet, usize, EvalReport)> = None;

    for iter in 0..config.max_iter {
        let lr = poly_lr(config.initial_lr, iter, config.max_iter, config.power)?;
        let batch: Vec<(usize, bool)> = sampler
            .next_batch(config.batch_size)
            .into_iter()
            .map(|i| (i, config.hflip && flip_rng.bernoulli(0.5)))
            .collect();
        let results = exec.map_range(batch.len(), |b| {
            let (i, flip) = batch[b];
            sample_grads(&model, &train_set[i], flip, &weights, scale)
        });
        model.params_mut().zero_grads();
        let mut loss = 0.0;
        for r in results {
            let (l, grads) = r.map_err(|e| match e {
                Error::NonFinite(_) => diverged(iter, f64::NAN),
                e => e,
            })?;
            loss += l * scale;
            for (name, g) in grads {
                let p = model.params_mut().get_mut(&name).ok_or_else(|| {
                    Error::Contract(format!("gradient for unknown parameter {name}"))
                })?;
                match &mut p.value.grad {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    slot => *slot = Some(g),
                }
            }
        }
        if !loss.is_finite() {
            return Err(diverged(iter, loss));
        }
        let grad_norm = model
            .params()
            .iter()
            .filter_map(|p| p.value.grad.as_ref())
            .flatten()
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt();
        if let Some(clip) = config.grad_clip.filter(|&c| grad_norm > c) {
            let f = clip / grad_norm;
            for p in model.params_mut().iter_mut() {
                p.value.grad.iter_mut().flatten().for_each(|g| *g *= f);
            }
        }
        sgd_momentum_step(model.params_mut(), &mut state, lr, config.momentum)?;
        if model
            .params()
            .iter()
            .any(|p| p.value.data().iter().any(|v| !v.is_finite()))
        {
            return Err(diverged(iter, loss));
        }

        let mut record = LogRecord {
            iter,
            lr,
            loss,
            grad_norm,
            mean_f1: None,
            mean_iou: None,
        };
        let done = iter + 1;
        if done == config.max_iter || (config.eval_interval > 0 && done % config.eval_interval == 0)
        {
            let report =
                EvalReport::from_counts(&evaluate(&model, eval_set, exec)?, eval_set.len())?;
            record.mean_f1 = Some(report.mean_f1);
            record.mean_iou = Some(report.mean_iou);
            log::info!(
                "iter {done}: loss {loss:.5} lr {lr:.6} mIoU {:.4}",
                report.mean_iou
            );
            if best
                .as_ref()
                .is_none_or(|(_, _, b)| report.mean_iou > b.mean_iou)
            {
                best = Some((model.clone(), done, report));
            }
        }
        observe(&record)?;
        log.push(record);
    }
    let (best_model, best_iter, best_report) = best.expect("last iteration always evaluates");
    Ok(TrainOutcome {
        final_model: model,
        best_model,
        best_iter,
        best_report,
        log,
        steps: config.max_iter,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::ClassMask;
    use crate::tensor::Tensor;

    fn tiny_set(n: usize, seed: u64) -> Vec<Sample> {
        let mut rng = Rng::new(seed);
        (0..n)
            .map(|_| {
                let col = 2 + rng.below(10);
                let mut img = Tensor::zeros(&[1, 16, 16]);
                let mut mask = ClassMask::zeros(16, 16);
                for y in 0..16 {
                    for x in col..col + 3 {
                        img.data_mut()[y * 16 + x] = 1.0;
                        mask.set(x, y, if col < 8 { 2 } else { 3 });
                    }
                }
                Sample { image: img, mask }
            })
            .collect()
    }

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            channels: [4, 4, 4],
            kernel_size: 3,
            max_iter: 3,
            batch_size: 2,
            eval_interval: 2,
            ..Default::default()
        }
    }

    #[test]
    fn config_json_defaults_and_rejects_unknown() {
        let c: TrainConfig =
            serde_json::from_str(r#"{"max_iter": 10, "directions": ["vd","hl"]}"#).unwrap();
        assert_eq!(c.max_iter, 10);
        assert_eq!(c.batch_size, 4);
        assert_eq!(c.momentum, 0.9);
        assert_eq!(c.directions, vec![Direction::TopDown, Direction::LeftRight]);
        assert!(serde_json::from_str::<TrainConfig>(r#"{"max_iters": 10}"#).is_err());
    }

    #[test]
    fn config_validation() {
        let bad = [
            TrainConfig {
                initial_lr: 0.0,
                ..Default::default()
            },
            TrainConfig {
                lambda_b: -1.0,
                ..Default::default()
            },
            TrainConfig {
                max_iter: 0,
                ..Default::default()
            },
            TrainConfig {
                kernel_size: 4,
                ..Default::default()
            },
            TrainConfig {
                directions: vec![Direction::TopDown, Direction::TopDown],
                ..Default::default()
            },
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
        TrainConfig::default().validate().unwrap();
    }

    #[test]
    fn canonical_order_sorts_directions() {
        let c = TrainConfig {
            directions: vec![Direction::CounterUp, Direction::TopDown],
            ..Default::default()
        };
        assert_eq!(
            c.architecture().unwrap().directions,
            vec![Direction::TopDown, Direction::CounterUp]
        );
        let c = TrainConfig {
            msc_order: MscOrder::AsListed,
            ..c
        };
        assert_eq!(
            c.architecture().unwrap().directions,
            vec![Direction::CounterUp, Direction::TopDown]
        );
    }

    #[test]
    fn sampler_covers_each_epoch() {
        let mut s = BatchSampler::new(5, Rng::new(1));
        let mut first: Vec<usize> = s.next_batch(5);
        first.sort();
        assert_eq!(first, vec![0, 1, 2, 3, 4]);
        assert_eq!(s.next_batch(12).len(), 12);
    }

    #[test]
    fn single_iteration_single_step() {
        let data = tiny_set(3, 1);
        let cfg = TrainConfig {
            max_iter: 1,
            ..tiny_config()
        };
        let out = train(&cfg, &data, &data).unwrap();
        assert_eq!(out.steps, 1);
        assert_eq!(out.log.len(), 1);
        assert!(out.log[0].mean_iou.is_some());
        let init = Sanet::init(cfg.architecture().unwrap(), cfg.seed).unwrap();
        assert_ne!(init.params(), out.final_model.params());
    }

    #[test]
    fn deterministic_and_exec_independent() {
        let data = tiny_set(4, 2);
        let cfg = tiny_config();
        let a = train_with(&cfg, &data, &data, Exec::Sequential, |_| Ok(())).unwrap();
        let b = train_with(&cfg, &data, &data, Exec::Parallel, |_| Ok(())).unwrap();
        let losses = |o: &TrainOutcome| o.log.iter().map(|r| r.loss.to_bits()).collect::<Vec<_>>();
        assert_eq!(losses(&a), losses(&b));
        assert_eq!(
            a.final_model.to_checkpoint().params,
            b.final_model.to_checkpoint().params
        );
        assert_eq!(a.log.iter().filter(|r| r.mean_iou.is_some()).count(), 2);
    }

    #[test]
    fn divergence_names_the_iteration() {
        let data = tiny_set(2, 3);
        let cfg = TrainConfig {
            initial_lr: 1e300,
            max_iter: 50,
            ..tiny_config()
        };
        match train(&cfg, &data, &data) {
            Err(Error::Diverged { iter, .. }) => assert!(iter < 50),
            other => panic!("expected divergence, got {:?}", other.map(|o| o.steps)),
        }
    }

    #[test]
    fn mismatched_sample_rejected() {
        let mut data = tiny_set(1, 4);
        data[0].mask = ClassMask::zeros(8, 16);
        assert!(matches!(
            train(&tiny_config(), &data, &data),
            Err(Error::Data(_))
        ));
    }
}
