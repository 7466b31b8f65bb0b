//! Forward pass with the intermediate values the backward pass needs.

use ndarray::{s, Array2, ArrayView1, ArrayView2};

use super::{check_params, LayerLayout, MlpArchitecture, ParamVector};
use crate::error::{CoreError, Result};

/// Per-group statistics of one normalized layer.
pub(crate) struct GnCache {
    /// `1 / sqrt(var + eps)` per (sample, group).
    pub inv_std: Array2<f64>,
    /// Normalized values before the learnable affine map, per (sample, channel).
    pub xhat: Array2<f64>,
}

pub(crate) struct LayerCache {
    /// Input fed to this linear layer.
    pub input: Array2<f64>,
    pub gn: Option<GnCache>,
    /// Input to the activation (for the output layer: the network output).
    pub pre_act: Array2<f64>,
}

pub(crate) struct ForwardCache {
    pub layers: Vec<LayerCache>,
}

pub(crate) fn weight_view<'a>(
    params: &'a ParamVector,
    layer: &LayerLayout,
) -> ArrayView2<'a, f64> {
    let slice = &params.values.as_slice().expect("owned params are contiguous")[layer.weight.clone()];
    ArrayView2::from_shape((layer.in_dim, layer.out_dim), slice)
        .expect("weight range sized in_dim * out_dim")
}

pub(crate) fn param_slice_view<'a>(
    params: &'a ParamVector,
    range: std::ops::Range<usize>,
) -> ArrayView1<'a, f64> {
    let slice = &params.values.as_slice().expect("owned params are contiguous")[range];
    ArrayView1::from(slice)
}

fn check_inputs(arch: &MlpArchitecture, inputs: &Array2<f64>) -> Result<()> {
    if inputs.ncols() != arch.input_dim() {
        return Err(CoreError::DimensionMismatch(format!(
            "inputs have {} columns, architecture takes {}",
            inputs.ncols(),
            arch.input_dim()
        )));
    }
    Ok(())
}

/// Normalizes `pre` in place per (sample, group) and applies the learnable
/// affine map; returns the statistics needed by the backward pass. Variance is
/// the biased (population) estimate over the channels of a group.
fn apply_group_norm(
    num_groups: usize,
    epsilon: f64,
    scale: ArrayView1<f64>,
    shift: ArrayView1<f64>,
    pre: &mut Array2<f64>,
) -> GnCache {
    let (n, width) = pre.dim();
    let gsize = width / num_groups;
    let mut inv_std = Array2::zeros((n, num_groups));
    let mut xhat = Array2::zeros((n, width));
    for i in 0..n {
        for g in 0..num_groups {
            let cols = g * gsize..(g + 1) * gsize;
            let group = pre.slice(s![i, cols.clone()]);
            let mean = group.sum() / gsize as f64;
            let var = group.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / gsize as f64;
            let is = 1.0 / (var + epsilon).sqrt();
            inv_std[[i, g]] = is;
            for c in cols {
                let xh = (pre[[i, c]] - mean) * is;
                xhat[[i, c]] = xh;
                pre[[i, c]] = scale[c] * xh + shift[c];
            }
        }
    }
    GnCache { inv_std, xhat }
}

/// Forward pass that records everything the backward pass reads.
pub(crate) fn forward_cached(
    arch: &MlpArchitecture,
    params: &ParamVector,
    inputs: &Array2<f64>,
) -> Result<(Array2<f64>, ForwardCache)> {
    arch.validate()?;
    check_params(arch, params)?;
    check_inputs(arch, inputs)?;

    let layout = arch.layout();
    let num_layers = layout.layers.len();
    let mut layers = Vec::with_capacity(num_layers);
    let mut x = inputs.clone();
    for (l, layer) in layout.layers.iter().enumerate() {
        let w = weight_view(params, layer);
        let b = param_slice_view(params, layer.bias.clone());
        let mut pre = x.dot(&w);
        pre += &b;
        let gn = match (&layer.gn_scale, &layer.gn_shift, &arch.group_norm) {
            (Some(scale), Some(shift), Some(spec)) => Some(apply_group_norm(
                spec.num_groups,
                spec.epsilon,
                param_slice_view(params, scale.clone()),
                param_slice_view(params, shift.clone()),
                &mut pre,
            )),
            _ => None,
        };
        let is_output = l + 1 == num_layers;
        let next = if is_output {
            pre.clone()
        } else {
            pre.mapv(|v| arch.activation.apply(v))
        };
        layers.push(LayerCache {
            input: x,
            gn,
            pre_act: pre,
        });
        x = next;
    }
    Ok((x, ForwardCache { layers }))
}

/// Network outputs for a batch of inputs, one row per sample. A non-finite
/// output is reported as an error rather than silently propagated.
pub fn forward(
    arch: &MlpArchitecture,
    params: &ParamVector,
    inputs: &Array2<f64>,
) -> Result<Array2<f64>> {
    let (out, _) = forward_cached(arch, params, inputs)?;
    if out.iter().any(|v| !v.is_finite()) {
        return Err(CoreError::NonFinite("network output".into()));
    }
    Ok(out)
}
