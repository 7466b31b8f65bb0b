//! Multilayer perceptrons with a flat parameter vector.
//!
//! Networks are described by [`MlpArchitecture`] and evaluated functionally:
//! every operation takes the architecture, a [`ParamVector`], and data, and
//! returns values or gradients without hidden state. The flat layout makes
//! posterior samplers, trajectory checkpoints, and communication accounting
//! trivial to express.

mod forward;
mod grad;
mod likelihood;

pub use forward::forward;
pub(crate) use forward::forward_cached;
pub use grad::{grad_data, grad_params};
pub(crate) use grad::grad_params_into;
pub use likelihood::{log_likelihood, softmax_rows, LikelihoodSpec};
pub(crate) use likelihood::LABEL_ROW_SUM_TOL;

use std::ops::Range;

use ndarray::Array1;
use rand::Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::rng::rng_from_seed;

/// Hidden-layer activation function.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    /// `x * sigmoid(x)`, smooth everywhere.
    Swish,
    Relu,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Swish => x * sigmoid(x),
            Activation::Relu => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
        }
    }

    /// Derivative with respect to the pre-activation.
    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Swish => {
                let s = sigmoid(x);
                s + x * s * (1.0 - s)
            }
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// What the network output represents; decides label handling downstream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Regression,
    Classification,
}

/// Group normalization configuration for the first two linear layers.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupNormSpec {
    pub num_groups: usize,
    pub epsilon: f64,
}

/// Fully connected network: `layer_widths[0]` inputs through hidden layers to
/// `layer_widths.last()` outputs, activation on every hidden layer, linear
/// output. When `group_norm` is set, normalization (with learnable per-channel
/// scale and shift) follows the first two linear layers; the output layer is
/// never normalized.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpArchitecture {
    pub layer_widths: Vec<usize>,
    pub activation: Activation,
    pub group_norm: Option<GroupNormSpec>,
    pub task: Task,
}

/// Parameter ranges of one linear layer inside the flat vector. Weights are
/// stored row-major as an `in_dim x out_dim` matrix so the forward pass is a
/// plain `x . W + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerLayout {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Range<usize>,
    pub bias: Range<usize>,
    /// Per-channel normalization scale, present only on normalized layers.
    pub gn_scale: Option<Range<usize>>,
    /// Per-channel normalization shift, present only on normalized layers.
    pub gn_shift: Option<Range<usize>>,
}

/// Complete parameter layout; ranges are disjoint and cover `0..total`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layout {
    pub layers: Vec<LayerLayout>,
    pub total: usize,
}

impl MlpArchitecture {
    pub fn new(
        layer_widths: Vec<usize>,
        activation: Activation,
        group_norm: Option<GroupNormSpec>,
        task: Task,
    ) -> Result<Self> {
        let arch = MlpArchitecture {
            layer_widths,
            activation,
            group_norm,
            task,
        };
        arch.validate()?;
        Ok(arch)
    }

    /// Interval-regression network: three 128-unit Swish hidden layers.
    pub fn regression_preset() -> Self {
        MlpArchitecture {
            layer_widths: vec![1, 128, 128, 128, 1],
            activation: Activation::Swish,
            group_norm: None,
            task: Task::Regression,
        }
    }

    /// Two-dimensional classification network: three 50-unit ReLU hidden
    /// layers with two-group normalization on the first two.
    pub fn classification_preset(num_classes: usize) -> Self {
        MlpArchitecture {
            layer_widths: vec![2, 50, 50, 50, num_classes],
            activation: Activation::Relu,
            group_norm: Some(GroupNormSpec {
                num_groups: 2,
                epsilon: 1e-5,
            }),
            task: Task::Classification,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_widths.len() < 2 {
            return Err(CoreError::InvalidArchitecture(format!(
                "need at least input and output widths, got {:?}",
                self.layer_widths
            )));
        }
        if self.layer_widths.contains(&0) {
            return Err(CoreError::InvalidArchitecture(format!(
                "zero layer width in {:?}",
                self.layer_widths
            )));
        }
        if let Some(gn) = &self.group_norm {
            if gn.num_groups == 0 {
                return Err(CoreError::InvalidArchitecture(
                    "group count must be positive".into(),
                ));
            }
            if !(gn.epsilon.is_finite() && gn.epsilon > 0.0) {
                return Err(CoreError::InvalidArchitecture(format!(
                    "normalization epsilon must be positive and finite, got {}",
                    gn.epsilon
                )));
            }
            for l in self.normalized_layers() {
                let width = self.layer_widths[l + 1];
                if !width.is_multiple_of(gn.num_groups) {
                    return Err(CoreError::InvalidArchitecture(format!(
                        "layer {} width {} not divisible by {} groups",
                        l, width, gn.num_groups
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_widths.last().expect("validated non-empty")
    }

    pub fn num_linear_layers(&self) -> usize {
        self.layer_widths.len() - 1
    }

    /// Indices of linear layers followed by group normalization: the first
    /// two, excluding the output layer.
    pub fn normalized_layers(&self) -> Vec<usize> {
        match self.group_norm {
            None => Vec::new(),
            Some(_) => (0..self.num_linear_layers().saturating_sub(1))
                .take(2)
                .collect(),
        }
    }

    fn is_normalized(&self, layer: usize) -> bool {
        self.group_norm.is_some() && layer < 2 && layer + 1 < self.num_linear_layers()
    }

    /// Parameter ranges for every layer in storage order.
    pub fn layout(&self) -> Layout {
        let mut layers = Vec::with_capacity(self.num_linear_layers());
        let mut offset = 0usize;
        for l in 0..self.num_linear_layers() {
            let in_dim = self.layer_widths[l];
            let out_dim = self.layer_widths[l + 1];
            let weight = offset..offset + in_dim * out_dim;
            offset = weight.end;
            let bias = offset..offset + out_dim;
            offset = bias.end;
            let (gn_scale, gn_shift) = if self.is_normalized(l) {
                let scale = offset..offset + out_dim;
                offset = scale.end;
                let shift = offset..offset + out_dim;
                offset = shift.end;
                (Some(scale), Some(shift))
            } else {
                (None, None)
            };
            layers.push(LayerLayout {
                in_dim,
                out_dim,
                weight,
                bias,
                gn_scale,
                gn_shift,
            });
        }
        Layout {
            layers,
            total: offset,
        }
    }

    /// Total number of parameters: weights and biases of every linear layer
    /// plus scale and shift for each normalized layer.
    pub fn param_count(&self) -> usize {
        let mut total = 0;
        for l in 0..self.num_linear_layers() {
            let in_dim = self.layer_widths[l];
            let out_dim = self.layer_widths[l + 1];
            total += in_dim * out_dim + out_dim;
            if self.is_normalized(l) {
                total += 2 * out_dim;
            }
        }
        total
    }
}

/// Flat view of all network parameters in [`MlpArchitecture::layout`] order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector {
    pub values: Array1<f64>,
}

impl ParamVector {
    pub fn new(values: Array1<f64>) -> Self {
        ParamVector { values }
    }

    pub fn zeros(len: usize) -> Self {
        ParamVector {
            values: Array1::zeros(len),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

pub(crate) fn check_params(arch: &MlpArchitecture, params: &ParamVector) -> Result<()> {
    let expected = arch.param_count();
    if params.len() != expected {
        return Err(CoreError::DimensionMismatch(format!(
            "parameter vector has {} entries, architecture needs {}",
            params.len(),
            expected
        )));
    }
    Ok(())
}

/// He-normal initialization: weights drawn per layer in layout order from
/// `N(0, 2 / in_dim)`, biases zero, normalization scale one and shift zero.
/// Deterministic in `seed`.
pub fn init_params(arch: &MlpArchitecture, seed: u64) -> Result<ParamVector> {
    arch.validate()?;
    let layout = arch.layout();
    let mut values = Array1::zeros(layout.total);
    let mut rng = rng_from_seed(seed);
    for layer in &layout.layers {
        let std = (2.0 / layer.in_dim as f64).sqrt();
        let dist = Normal::new(0.0, std).expect("finite std");
        for i in layer.weight.clone() {
            values[i] = rng.sample(dist);
        }
        if let Some(scale) = &layer.gn_scale {
            for i in scale.clone() {
                values[i] = 1.0;
            }
        }
    }
    Ok(ParamVector::new(values))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn param_count_tiny_net() {
        let arch = MlpArchitecture::new(vec![1, 2, 1], Activation::Swish, None, Task::Regression)
            .unwrap();
        assert_eq!(arch.param_count(), 7);
    }

    #[test]
    fn param_count_presets() {
        assert_eq!(MlpArchitecture::regression_preset().param_count(), 33_409);
        assert_eq!(
            MlpArchitecture::classification_preset(2).param_count(),
            5_552
        );
    }

    /// Layout oracle: enumerate every offset each range claims and require the
    /// claims to be disjoint and to cover `0..total` exactly.
    #[test]
    fn layout_ranges_partition_the_vector() {
        for arch in [
            MlpArchitecture::regression_preset(),
            MlpArchitecture::classification_preset(2),
            MlpArchitecture::new(
                vec![3, 4, 6, 2],
                Activation::Relu,
                Some(GroupNormSpec {
                    num_groups: 2,
                    epsilon: 1e-5,
                }),
                Task::Classification,
            )
            .unwrap(),
        ] {
            let layout = arch.layout();
            let mut claimed = vec![0usize; layout.total];
            for layer in &layout.layers {
                let mut ranges = vec![layer.weight.clone(), layer.bias.clone()];
                ranges.extend(layer.gn_scale.clone());
                ranges.extend(layer.gn_shift.clone());
                assert_eq!(layer.weight.len(), layer.in_dim * layer.out_dim);
                assert_eq!(layer.bias.len(), layer.out_dim);
                for r in ranges {
                    for i in r {
                        claimed[i] += 1;
                    }
                }
            }
            assert!(claimed.iter().all(|&c| c == 1), "ranges must partition");
            assert_eq!(layout.total, arch.param_count());
        }
    }

    #[test]
    fn normalization_covers_first_two_hidden_layers_only() {
        let arch = MlpArchitecture::classification_preset(2);
        assert_eq!(arch.normalized_layers(), vec![0, 1]);
        let layout = arch.layout();
        assert!(layout.layers[0].gn_scale.is_some());
        assert!(layout.layers[1].gn_scale.is_some());
        assert!(layout.layers[2].gn_scale.is_none());
        assert!(layout.layers[3].gn_scale.is_none());
    }

    #[test]
    fn group_width_must_divide() {
        let err = MlpArchitecture::new(
            vec![2, 5, 5, 2],
            Activation::Relu,
            Some(GroupNormSpec {
                num_groups: 2,
                epsilon: 1e-5,
            }),
            Task::Classification,
        );
        assert!(err.is_err());
    }

    #[test]
    fn init_is_deterministic_and_structured() {
        let arch = MlpArchitecture::classification_preset(2);
        let a = init_params(&arch, 11).unwrap();
        let b = init_params(&arch, 11).unwrap();
        assert_eq!(a, b);
        let c = init_params(&arch, 12).unwrap();
        assert_ne!(a, c);

        let layout = arch.layout();
        for layer in &layout.layers {
            for i in layer.bias.clone() {
                assert_eq!(a.values[i], 0.0);
            }
            if let Some(scale) = &layer.gn_scale {
                for i in scale.clone() {
                    assert_eq!(a.values[i], 1.0);
                }
            }
            if let Some(shift) = &layer.gn_shift {
                for i in shift.clone() {
                    assert_eq!(a.values[i], 0.0);
                }
            }
        }
    }

    #[test]
    fn init_weight_variance_matches_he_scaling() {
        let arch = MlpArchitecture::regression_preset();
        let params = init_params(&arch, 5).unwrap();
        let layout = arch.layout();
        // 128 x 128 block: sample variance should sit near 2 / 128.
        let layer = &layout.layers[1];
        let w: Vec<f64> = layer.weight.clone().map(|i| params.values[i]).collect();
        let var = w.iter().map(|x| x * x).sum::<f64>() / w.len() as f64;
        let expected = 2.0 / 128.0;
        assert!(
            (var - expected).abs() < 0.3 * expected,
            "variance {var} too far from {expected}"
        );
    }

    #[test]
    fn swish_and_relu_basics() {
        assert_eq!(Activation::Swish.apply(0.0), 0.0);
        assert_eq!(Activation::Relu.apply(-1.5), 0.0);
        assert_eq!(Activation::Relu.apply(2.0), 2.0);
        // Swish derivative at zero is sigmoid(0) = 1/2.
        assert!((Activation::Swish.derivative(0.0) - 0.5).abs() < 1e-15);
    }
}
