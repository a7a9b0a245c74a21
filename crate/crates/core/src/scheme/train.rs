//! Training loop, accuracy evaluation and the centralized baselines.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{argmax, CheckpointMeta, CodedModel, SchemeConfig};
use crate::autodiff::{Graph, ParamStore, Var};
use crate::data::{sample_epoch, ImageSet};
use crate::error::{CheckpointError, Error, Result};
use crate::nets::checkpoint::{self, Checkpoint, NetworkEntry};
use crate::nets::{ArchSpec, Network};
use crate::optim::{adam_step, AdamState};
use crate::tensor::Tensor;

/// Groups per forward pass during evaluation.
const EVAL_BATCH_GROUPS: usize = 250;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl TrainOptions {
    pub fn from_config(c: &SchemeConfig) -> Self {
        Self { epochs: c.epochs, batch_size: c.batch_size, learning_rate: c.learning_rate, seed: c.seed }
    }
}

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean cross-entropy per image over the epoch's minibatches.
    pub train_loss: f64,
    pub test_accuracy: Option<f64>,
    /// Not serialized, so seeded runs write identical metrics logs.
    #[serde(skip)]
    pub wall_seconds: f64,
}

/// Something the training loop can fit and the evaluator can score.
pub trait Classifier {
    /// Images consumed per sample (`K` for coded schemes, 1 for baselines).
    fn group_size(&self) -> usize;
    fn params(&self) -> &ParamStore<f32>;
    fn params_mut(&mut self) -> &mut ParamStore<f32>;
    /// Scalar objective for `images` `[B, K, M, M]` and `labels[b][k]`.
    fn loss(&self, g: &mut Graph<'_, f32>, images: &Tensor<f32>, labels: &[Vec<usize>]) -> Result<Var>;
    /// Inference-path labels `[B][K]`.
    fn predict(&self, images: &Tensor<f32>) -> Result<Vec<Vec<usize>>>;
}

impl Classifier for CodedModel<f32> {
    fn group_size(&self) -> usize {
        self.config().group_size
    }

    fn params(&self) -> &ParamStore<f32> {
        self.store()
    }

    fn params_mut(&mut self) -> &mut ParamStore<f32> {
        self.store_mut()
    }

    fn loss(&self, g: &mut Graph<'_, f32>, images: &Tensor<f32>, labels: &[Vec<usize>]) -> Result<Var> {
        self.nets().loss(g, images, labels)
    }

    fn predict(&self, images: &Tensor<f32>) -> Result<Vec<Vec<usize>>> {
        Ok(self.infer(images)?.labels)
    }
}

fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Fit `model` with Adam on grouped minibatches of `train_set`, calling `log`
/// after every epoch. Test accuracy (inference path) is reported when
/// `test_set` is given.
///
/// A non-finite loss aborts with [`Error::Diverged`].
pub fn train<C: Classifier>(
    model: &mut C,
    train_set: &ImageSet,
    test_set: Option<&ImageSet>,
    opts: &TrainOptions,
    mut log: impl FnMut(&EpochMetrics) -> Result<()>,
) -> Result<Vec<EpochMetrics>> {
    let k = model.group_size();
    let mut adam = AdamState::new(model.params(), opts.learning_rate);
    let start = Instant::now();
    let mut history = Vec::with_capacity(opts.epochs);
    for epoch in 1..=opts.epochs {
        let batches = sample_epoch(train_set.len(), k, opts.batch_size, epoch_seed(opts.seed, epoch))?;
        let mut total = 0.0;
        for (step, groups) in batches.iter().enumerate() {
            let diverged = |reason: String| Error::Diverged { epoch, step, reason };
            let (images, labels) = train_set.grouped(groups)?;
            let (value, grads) = {
                let mut g = Graph::new(model.params());
                let loss = model.loss(&mut g, &images, &labels).map_err(|e| match e {
                    Error::NonFinite { op } => diverged(format!("non-finite value in {op}")),
                    other => other,
                })?;
                let value = g.value(loss).item() as f64;
                if !value.is_finite() {
                    return Err(diverged(format!("loss is {value}")));
                }
                let grads = g.backward(loss).map_err(|e| diverged(e.to_string()))?;
                (value, grads)
            };
            adam_step(model.params_mut(), &grads, &mut adam)?;
            total += value / k as f64;
        }
        let test_accuracy = test_set.map(|t| evaluate(model, t)).transpose()?;
        let m = EpochMetrics {
            epoch,
            train_loss: total / batches.len() as f64,
            test_accuracy,
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        log(&m)?;
        history.push(m);
    }
    Ok(history)
}

fn score(set: &ImageSet, k: usize, mut predict: impl FnMut(&Tensor<f32>) -> Result<Vec<Vec<usize>>>) -> Result<f64> {
    let groups = set.sequential_groups(k)?;
    if groups.is_empty() {
        return Err(Error::Input(format!("evaluation needs at least {k} images, have {}", set.len())));
    }
    let mut correct = 0usize;
    for chunk in groups.chunks(EVAL_BATCH_GROUPS) {
        let (images, labels) = set.grouped(chunk)?;
        let predicted = predict(&images)?;
        for (p, l) in predicted.iter().zip(&labels) {
            correct += p.iter().zip(l).filter(|(a, b)| a == b).count();
        }
    }
    Ok(correct as f64 / (groups.len() * k) as f64)
}

/// Fraction of correctly classified images through the inference path.
/// Images are grouped in order; a trailing partial group is left out.
pub fn evaluate<C: Classifier>(model: &C, set: &ImageSet) -> Result<f64> {
    score(set, model.group_size(), |x| model.predict(x))
}

/// Accuracy from the training-path logits `H(E(β_k))`, without
/// interpolation.
pub fn evaluate_direct(model: &CodedModel<f32>, set: &ImageSet) -> Result<f64> {
    score(set, model.config().group_size, |x| {
        let logits = model.direct_logits(x)?;
        let classes = model.config().classes;
        let batch = x.shape()[0];
        Ok((0..batch)
            .map(|b| {
                logits
                    .iter()
                    .map(|l| {
                        let row: Vec<f64> =
                            l.data()[b * classes..(b + 1) * classes].iter().map(|&v| v as f64).collect();
                        argmax(&row)
                    })
                    .collect()
            })
            .collect())
    })
}

// ---------------------------------------------------------------------------
// Baselines

/// A single classifier applied to one image at a time.
#[derive(Clone, Debug)]
pub struct BaselineModel {
    seed: u64,
    net: Network,
    store: ParamStore<f32>,
}

impl BaselineModel {
    pub fn new(spec: &ArchSpec, seed: u64) -> Result<Self> {
        if spec.outputs_matrix() {
            return Err(Error::Config(format!("{:?} does not produce class logits", spec.kind)));
        }
        let mut store = ParamStore::new();
        let net = Network::build(spec, "baseline", seed, &mut store)?;
        Ok(Self { seed, net, store })
    }

    pub fn spec(&self) -> &ArchSpec {
        self.net.spec()
    }

    pub fn param_count(&self) -> usize {
        self.net.param_count(&self.store)
    }

    /// Logits `[B, V]` for images `[B, 1, M, M]`.
    pub fn logits(&self, images: &Tensor<f32>) -> Result<Tensor<f32>> {
        let mut g = Graph::new(&self.store);
        let x = g.input(images.clone())?;
        let out = self.net.forward(&mut g, x)?;
        Ok(g.value(out).clone())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = serde_json::to_value(CheckpointMeta::Baseline { spec: self.spec().clone(), seed: self.seed })
            .map_err(|e| CheckpointError::Header(e.to_string()))?;
        checkpoint::save(path, meta, &[&self.net], &self.store)
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        let (spec, seed) = match serde_json::from_value::<CheckpointMeta>(ckpt.header.metadata.clone()) {
            Ok(CheckpointMeta::Baseline { spec, seed }) => (spec, seed),
            Ok(CheckpointMeta::Coded { .. }) => {
                return Err(CheckpointError::ShapeMismatch("checkpoint holds a coded scheme, not a baseline".into()).into())
            }
            Err(e) => return Err(CheckpointError::Header(format!("metadata: {e}")).into()),
        };
        let n = spec.layers().len();
        ckpt.expect_networks(&[NetworkEntry { name: "baseline".into(), spec: spec.clone(), span: [0, n] }])?;
        let net = Network::attach(&spec, "baseline", 0..n, &ckpt.store)?;
        Ok(Self { seed, net, store: ckpt.store })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(checkpoint::load(path)?)
    }
}

impl Classifier for BaselineModel {
    fn group_size(&self) -> usize {
        1
    }

    fn params(&self) -> &ParamStore<f32> {
        &self.store
    }

    fn params_mut(&mut self) -> &mut ParamStore<f32> {
        &mut self.store
    }

    fn loss(&self, g: &mut Graph<'_, f32>, images: &Tensor<f32>, labels: &[Vec<usize>]) -> Result<Var> {
        let x = g.input(images.clone())?;
        let logits = self.net.forward(g, x)?;
        let flat: Vec<usize> = labels.iter().map(|l| l[0]).collect();
        g.softmax_cross_entropy_labels(logits, &flat)
    }

    fn predict(&self, images: &Tensor<f32>) -> Result<Vec<Vec<usize>>> {
        let logits = self.logits(images)?;
        let classes = self.spec().classes;
        Ok(logits
            .data()
            .chunks(classes)
            .map(|row| vec![argmax(&row.iter().map(|&v| v as f64).collect::<Vec<_>>())])
            .collect())
    }
}

