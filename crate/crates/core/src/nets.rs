//! Network architectures used by the coded scheme and the centralized baselines.
//!
//! | kind           | layers                                                        |
//! |----------------|---------------------------------------------------------------|
//! | `enc-mlp`      | FC `KM²×KM²`, FC `KM²×M²`                                     |
//! | `enc-cl`       | 7 conv 3×3, dilations 1,1,2,4,8,1,1; `K` in, 1 out channel     |
//! | `base-mlp`     | FC `M²×L1`, `L1×L2`, `L2×V`, no activations                   |
//! | `hb-mlp`       | same as `base-mlp`                                            |
//! | `hb-cnn`       | the 7 conv layers (1 in, 1 out channel) then `base-mlp`        |
//! | `baseline-*`   | `hb-*` with ReLU between every pair of layers                 |
//!
//! Fully-connected layers carry a bias, convolutions do not.

pub mod checkpoint;

use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, ParamId, ParamStore, Var};
use crate::conv;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Dilation schedule of the convolutional stack.
pub const CL_DILATIONS: [usize; 7] = [1, 1, 2, 4, 8, 1, 1];
pub const DEFAULT_HIDDEN_CHANNELS: usize = 80;
pub const DEFAULT_L1: usize = 200;
pub const DEFAULT_L2: usize = 100;
/// Parameter total that the reference tables call 100 %.
pub const REFERENCE_PARAM_COUNT: usize = 2_218_197;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ArchKind {
    EncMlp,
    EncCl,
    BaseMlp,
    HbMlp,
    HbCnn,
    BaselineMlp,
    BaselineCnn,
}

impl ArchKind {
    fn requires_activations(self) -> bool {
        matches!(self, ArchKind::EncMlp | ArchKind::EncCl | ArchKind::BaselineMlp | ArchKind::BaselineCnn)
    }

    fn has_conv_stack(self) -> bool {
        matches!(self, ArchKind::EncCl | ArchKind::HbCnn | ArchKind::BaselineCnn)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerSpec {
    Dense { inputs: usize, outputs: usize },
    Conv { in_channels: usize, out_channels: usize, dilation: usize },
}

impl LayerSpec {
    pub fn param_count(&self) -> usize {
        match *self {
            LayerSpec::Dense { inputs, outputs } => inputs * outputs + outputs,
            LayerSpec::Conv { in_channels, out_channels, .. } => out_channels * in_channels * conv::TAPS,
        }
    }

    fn fan_in(&self) -> usize {
        match *self {
            LayerSpec::Dense { inputs, .. } => inputs,
            LayerSpec::Conv { in_channels, .. } => in_channels * conv::TAPS,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchSpec {
    pub kind: ArchKind,
    /// Images per group (input channels of the encoder nets).
    pub images: usize,
    /// Image side length.
    pub side: usize,
    pub classes: usize,
    pub hidden_channels: usize,
    pub l1: usize,
    pub l2: usize,
    pub activations_enabled: bool,
}

impl ArchSpec {
    fn with(kind: ArchKind, images: usize, side: usize) -> Self {
        Self {
            kind,
            images,
            side,
            classes: 10,
            hidden_channels: DEFAULT_HIDDEN_CHANNELS,
            l1: DEFAULT_L1,
            l2: DEFAULT_L2,
            activations_enabled: kind.requires_activations(),
        }
    }

    pub fn enc_mlp(images: usize, side: usize) -> Self {
        Self::with(ArchKind::EncMlp, images, side)
    }

    pub fn enc_cl(images: usize, side: usize, hidden_channels: usize) -> Self {
        Self { hidden_channels, ..Self::with(ArchKind::EncCl, images, side) }
    }

    pub fn base_mlp(side: usize, classes: usize) -> Self {
        Self { classes, ..Self::with(ArchKind::BaseMlp, 1, side) }
    }

    pub fn hb_mlp(side: usize, classes: usize) -> Self {
        Self { classes, ..Self::with(ArchKind::HbMlp, 1, side) }
    }

    pub fn hb_cnn(side: usize, classes: usize, hidden_channels: usize) -> Self {
        Self { classes, hidden_channels, ..Self::with(ArchKind::HbCnn, 1, side) }
    }

    pub fn baseline_mlp(side: usize, classes: usize) -> Self {
        Self { classes, ..Self::with(ArchKind::BaselineMlp, 1, side) }
    }

    pub fn baseline_cnn(side: usize, classes: usize, hidden_channels: usize) -> Self {
        Self { classes, hidden_channels, ..Self::with(ArchKind::BaselineCnn, 1, side) }
    }

    pub fn with_widths(mut self, l1: usize, l2: usize) -> Self {
        self.l1 = l1;
        self.l2 = l2;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(format!("{:?}: {msg}", self.kind)));
        if self.images == 0 || self.side == 0 || self.classes == 0 {
            return bad("images, side and classes must be positive".into());
        }
        if self.activations_enabled != self.kind.requires_activations() {
            return bad(format!(
                "activations_enabled must be {} for this architecture",
                self.kind.requires_activations()
            ));
        }
        if self.kind.has_conv_stack() {
            if self.hidden_channels == 0 {
                return bad("hidden_channels must be positive".into());
            }
            for &d in &CL_DILATIONS {
                conv::validate(d, self.side, self.side)?;
            }
        }
        if matches!(self.kind, ArchKind::BaseMlp | ArchKind::HbMlp | ArchKind::HbCnn | ArchKind::BaselineMlp | ArchKind::BaselineCnn)
            && (self.l1 == 0 || self.l2 == 0)
        {
            return bad("L1 and L2 must be positive".into());
        }
        Ok(())
    }

    fn conv_stack(&self, in_channels: usize) -> Vec<LayerSpec> {
        let last = CL_DILATIONS.len() - 1;
        CL_DILATIONS
            .iter()
            .enumerate()
            .map(|(i, &dilation)| LayerSpec::Conv {
                in_channels: if i == 0 { in_channels } else { self.hidden_channels },
                out_channels: if i == last { 1 } else { self.hidden_channels },
                dilation,
            })
            .collect()
    }

    fn base_stack(&self) -> Vec<LayerSpec> {
        let m2 = self.side * self.side;
        vec![
            LayerSpec::Dense { inputs: m2, outputs: self.l1 },
            LayerSpec::Dense { inputs: self.l1, outputs: self.l2 },
            LayerSpec::Dense { inputs: self.l2, outputs: self.classes },
        ]
    }

    /// Layer plan, in forward order.
    pub fn layers(&self) -> Vec<LayerSpec> {
        let m2 = self.side * self.side;
        match self.kind {
            ArchKind::EncMlp => {
                let km2 = self.images * m2;
                vec![LayerSpec::Dense { inputs: km2, outputs: km2 }, LayerSpec::Dense { inputs: km2, outputs: m2 }]
            }
            ArchKind::EncCl => self.conv_stack(self.images),
            ArchKind::BaseMlp | ArchKind::HbMlp | ArchKind::BaselineMlp => self.base_stack(),
            ArchKind::HbCnn | ArchKind::BaselineCnn => {
                let mut layers = self.conv_stack(1);
                layers.extend(self.base_stack());
                layers
            }
        }
    }

    /// Closed-form learnable scalar count.
    pub fn param_count(&self) -> usize {
        self.layers().iter().map(LayerSpec::param_count).sum()
    }

    /// Whether the output is an `M×M` matrix (encoder / coefficient nets) or
    /// a `V`-vector of logits.
    pub fn outputs_matrix(&self) -> bool {
        matches!(self.kind, ArchKind::EncMlp | ArchKind::EncCl)
    }
}

#[derive(Clone, Copy, Debug)]
enum Layer {
    Dense { weight: ParamId, bias: ParamId },
    Conv { kernel: ParamId, dilation: usize },
}

/// A network (or a contiguous span of one) whose parameters live in a
/// shared [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Network {
    spec: ArchSpec,
    name: String,
    span: Range<usize>,
    layers: Vec<Layer>,
}

fn param_names(name: &str, index: usize, layer: &LayerSpec) -> Vec<(String, Vec<usize>)> {
    match *layer {
        LayerSpec::Dense { inputs, outputs } => vec![
            (format!("{name}.{index}.weight"), vec![inputs, outputs]),
            (format!("{name}.{index}.bias"), vec![outputs]),
        ],
        LayerSpec::Conv { in_channels, out_channels, .. } => vec![(
            format!("{name}.{index}.kernel"),
            vec![out_channels, in_channels, conv::KERNEL, conv::KERNEL],
        )],
    }
}

impl Network {
    /// Fresh network with weights drawn from `N(0, gain / fan_in)` (gain 2
    /// with ReLU, 1 without) and zero biases.
    pub fn build<T: Scalar>(spec: &ArchSpec, name: &str, seed: u64, store: &mut ParamStore<T>) -> Result<Self> {
        let n = spec.layers().len();
        Self::build_span(spec, name, 0..n, seed, store)
    }

    /// Like [`Network::build`] but only for layers `span` of the plan.
    pub fn build_span<T: Scalar>(
        spec: &ArchSpec,
        name: &str,
        span: Range<usize>,
        seed: u64,
        store: &mut ParamStore<T>,
    ) -> Result<Self> {
        spec.validate()?;
        let plan = spec.layers();
        if span.start >= span.end || span.end > plan.len() {
            return Err(Error::Config(format!("layer span {span:?} outside 0..{}", plan.len())));
        }
        let gain = if spec.activations_enabled { 2.0 } else { 1.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(span.len());
        for i in span.clone() {
            let std = (gain / plan[i].fan_in() as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("positive std");
            let mut ids = Vec::new();
            for (pname, shape) in param_names(name, i, &plan[i]) {
                let value = if pname.ends_with(".bias") {
                    Tensor::zeros(&shape)
                } else {
                    Tensor::from_fn(&shape, |_| T::of(normal.sample(&mut rng)))
                };
                ids.push(store.add(pname, value)?);
            }
            layers.push(match plan[i] {
                LayerSpec::Dense { .. } => Layer::Dense { weight: ids[0], bias: ids[1] },
                LayerSpec::Conv { dilation, .. } => Layer::Conv { kernel: ids[0], dilation },
            });
        }
        Ok(Self { spec: spec.clone(), name: name.to_string(), span, layers })
    }

    /// Bind to parameters already present in `store` (e.g. from a
    /// checkpoint), checking every shape against the plan.
    pub fn attach<T: Scalar>(spec: &ArchSpec, name: &str, span: Range<usize>, store: &ParamStore<T>) -> Result<Self> {
        spec.validate()?;
        let plan = spec.layers();
        if span.start >= span.end || span.end > plan.len() {
            return Err(Error::Config(format!("layer span {span:?} outside 0..{}", plan.len())));
        }
        let mut layers = Vec::with_capacity(span.len());
        for i in span.clone() {
            let mut ids = Vec::new();
            for (pname, shape) in param_names(name, i, &plan[i]) {
                let id = store
                    .id(&pname)
                    .ok_or_else(|| crate::CheckpointError::ShapeMismatch(format!("missing parameter {pname:?}")))?;
                if store.value(id).shape() != shape.as_slice() {
                    return Err(crate::CheckpointError::ShapeMismatch(format!(
                        "{pname}: stored {:?}, architecture needs {shape:?}",
                        store.value(id).shape()
                    ))
                    .into());
                }
                ids.push(id);
            }
            layers.push(match plan[i] {
                LayerSpec::Dense { .. } => Layer::Dense { weight: ids[0], bias: ids[1] },
                LayerSpec::Conv { dilation, .. } => Layer::Conv { kernel: ids[0], dilation },
            });
        }
        Ok(Self { spec: spec.clone(), name: name.to_string(), span, layers })
    }

    pub fn spec(&self) -> &ArchSpec {
        &self.spec
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn span(&self) -> Range<usize> {
        self.span.clone()
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.layers
            .iter()
            .flat_map(|l| match *l {
                Layer::Dense { weight, bias } => vec![weight, bias],
                Layer::Conv { kernel, .. } => vec![kernel],
            })
            .collect()
    }

    pub fn param_count<T: Scalar>(&self, store: &ParamStore<T>) -> usize {
        self.param_ids().iter().map(|&id| store.value(id).len()).sum()
    }

    /// Run the span on `x`, whose leading dimension is the batch.
    ///
    /// Inputs are reshaped as each layer requires: images are flattened for
    /// dense layers and given a channel axis for convolutions. Networks that
    /// end in an `M×M` output return `[B, M, M]`, the rest `[B, V]`.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let plan = self.spec.layers();
        let batch = *g.value(x).shape().first().ok_or_else(|| Error::Shape("network input has no batch axis".into()))?;
        let side = self.spec.side;
        let mut h = x;
        for (layer, i) in self.layers.iter().zip(self.span.clone()) {
            h = match (*layer, plan[i]) {
                (Layer::Dense { weight, bias }, LayerSpec::Dense { inputs, .. }) => {
                    let flat = g.reshape(h, &[batch, inputs])?;
                    let (w, b) = (g.param(weight), g.param(bias));
                    g.matmul_bias(flat, w, b)?
                }
                (Layer::Conv { kernel, dilation }, LayerSpec::Conv { in_channels, .. }) => {
                    let img = g.reshape(h, &[batch, in_channels, side, side])?;
                    let k = g.param(kernel);
                    g.conv2d_dilated(img, k, dilation)?
                }
                _ => unreachable!("layer kinds follow the plan"),
            };
            if self.spec.activations_enabled && i + 1 < plan.len() {
                h = g.relu(h)?;
            }
        }
        if self.span.end == plan.len() && self.spec.outputs_matrix() {
            h = g.reshape(h, &[batch, side, side])?;
        }
        Ok(h)
    }
}

/// Total learnable scalars over `networks`, and that total as a percentage
/// of [`REFERENCE_PARAM_COUNT`].
pub fn count_params<T: Scalar>(networks: &[&Network], store: &ParamStore<T>) -> (usize, f64) {
    let total: usize = networks.iter().map(|n| n.param_count(store)).sum();
    (total, percent_of_reference(total))
}

pub fn percent_of_reference(total: usize) -> f64 {
    100.0 * total as f64 / REFERENCE_PARAM_COUNT as f64
}
