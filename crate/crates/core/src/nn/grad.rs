//! Reverse-mode gradients of the log-likelihood in parameters, inputs, and
//! targets.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView1, ArrayViewMut2};

use super::forward::{forward_cached, param_slice_view, weight_view, ForwardCache, GnCache};
use super::{check_params, LikelihoodSpec, MlpArchitecture, ParamVector};
use crate::error::{CoreError, Result};

/// Backward pass through the normalization of one layer: converts a gradient
/// in the post-affine values into a gradient in the pre-normalization linear
/// output, optionally filling the scale/shift gradient slices.
fn backward_group_norm(
    num_groups: usize,
    scale: ArrayView1<f64>,
    gn: &GnCache,
    d_post: &Array2<f64>,
    mut affine_grads: Option<(&mut [f64], &mut [f64])>,
) -> Array2<f64> {
    let (n, width) = d_post.dim();
    let gsize = width / num_groups;

    if let Some((d_scale, d_shift)) = affine_grads.as_mut() {
        for c in 0..width {
            let mut ds = 0.0;
            let mut db = 0.0;
            for i in 0..n {
                ds += d_post[[i, c]] * gn.xhat[[i, c]];
                db += d_post[[i, c]];
            }
            d_scale[c] = ds;
            d_shift[c] = db;
        }
    }

    let mut d_lin = Array2::zeros((n, width));
    for i in 0..n {
        for g in 0..num_groups {
            let cols = g * gsize..(g + 1) * gsize;
            let inv_std = gn.inv_std[[i, g]];
            // d_xhat = d_post * scale; the group statistics couple channels.
            let mut mean_dxhat = 0.0;
            let mut mean_dxhat_xhat = 0.0;
            for c in cols.clone() {
                let dxh = d_post[[i, c]] * scale[c];
                mean_dxhat += dxh;
                mean_dxhat_xhat += dxh * gn.xhat[[i, c]];
            }
            mean_dxhat /= gsize as f64;
            mean_dxhat_xhat /= gsize as f64;
            for c in cols {
                let dxh = d_post[[i, c]] * scale[c];
                d_lin[[i, c]] =
                    inv_std * (dxh - mean_dxhat - gn.xhat[[i, c]] * mean_dxhat_xhat);
            }
        }
    }
    d_lin
}

/// Walks the cached forward pass backward from `d_out` (gradient in the
/// network outputs). When `params_out` is given, every parameter gradient
/// range is written (overwritten, not accumulated). Returns the gradient in
/// the network inputs when `want_inputs` is set.
pub(crate) fn backward(
    arch: &MlpArchitecture,
    params: &ParamVector,
    cache: &ForwardCache,
    d_out: Array2<f64>,
    mut params_out: Option<&mut ParamVector>,
    want_inputs: bool,
) -> Option<Array2<f64>> {
    let layout = arch.layout();
    let num_layers = layout.layers.len();
    let mut d = d_out;
    for l in (0..num_layers).rev() {
        let layer = &layout.layers[l];
        let lcache = &cache.layers[l];

        // Gradient in the activation input (output layer has no activation).
        let mut d_pre = if l + 1 == num_layers {
            d
        } else {
            let mut d_pre = d;
            d_pre.zip_mut_with(&lcache.pre_act, |dv, &z| {
                *dv *= arch.activation.derivative(z);
            });
            d_pre
        };

        if let (Some(gn), Some(spec)) = (&lcache.gn, &arch.group_norm) {
            let scale_range = layer.gn_scale.clone().expect("normalized layer has scale");
            let shift_range = layer.gn_shift.clone().expect("normalized layer has shift");
            let scale = param_slice_view(params, scale_range.clone());
            let affine = params_out.as_mut().map(|out| {
                let slice = out
                    .values
                    .as_slice_mut()
                    .expect("owned params are contiguous");
                // Scale and shift ranges are adjacent and disjoint.
                let (head, tail) = slice.split_at_mut(shift_range.start);
                (&mut head[scale_range], &mut tail[..shift_range.len()])
            });
            d_pre = backward_group_norm(spec.num_groups, scale, gn, &d_pre, affine);
        }

        if let Some(out) = params_out.as_mut() {
            let slice = out
                .values
                .as_slice_mut()
                .expect("owned params are contiguous");
            {
                let w_grad = &mut slice[layer.weight.clone()];
                let mut w_view =
                    ArrayViewMut2::from_shape((layer.in_dim, layer.out_dim), w_grad)
                        .expect("weight range sized in_dim * out_dim");
                general_mat_mul(1.0, &lcache.input.t(), &d_pre, 0.0, &mut w_view);
            }
            let b_grad = &mut slice[layer.bias.clone()];
            for (c, bg) in b_grad.iter_mut().enumerate() {
                *bg = d_pre.column(c).sum();
            }
        }

        if l == 0 {
            if want_inputs {
                let w = weight_view(params, layer);
                return Some(d_pre.dot(&w.t()));
            }
            return None;
        }
        let w = weight_view(params, layer);
        d = d_pre.dot(&w.t());
    }
    None
}

fn checked_forward(
    arch: &MlpArchitecture,
    params: &ParamVector,
    inputs: &Array2<f64>,
    targets: &Array2<f64>,
    lik: &LikelihoodSpec,
) -> Result<(Array2<f64>, ForwardCache)> {
    lik.validate()?;
    let (outputs, cache) = forward_cached(arch, params, inputs)?;
    lik.check_targets(targets, outputs.ncols())?;
    if outputs.nrows() != targets.nrows() {
        return Err(CoreError::DimensionMismatch(format!(
            "{} input rows vs {} target rows",
            outputs.nrows(),
            targets.nrows()
        )));
    }
    if outputs.iter().any(|v| !v.is_finite()) {
        return Err(CoreError::NonFinite("network output".into()));
    }
    Ok((outputs, cache))
}

/// Gradient of the log-likelihood in the flat parameter vector, written into
/// `out` (overwritten). Hot-path variant that avoids allocating the result.
pub(crate) fn grad_params_into(
    arch: &MlpArchitecture,
    params: &ParamVector,
    inputs: &Array2<f64>,
    targets: &Array2<f64>,
    lik: &LikelihoodSpec,
    out: &mut ParamVector,
) -> Result<()> {
    check_params(arch, params)?;
    check_params(arch, out)?;
    let (outputs, cache) = checked_forward(arch, params, inputs, targets, lik)?;
    let d_out = lik.d_outputs(&outputs, targets);
    backward(arch, params, &cache, d_out, Some(out), false);
    Ok(())
}

/// Gradient of the log-likelihood in the flat parameter vector.
pub fn grad_params(
    arch: &MlpArchitecture,
    params: &ParamVector,
    inputs: &Array2<f64>,
    targets: &Array2<f64>,
    lik: &LikelihoodSpec,
) -> Result<ParamVector> {
    let mut out = ParamVector::zeros(arch.param_count());
    grad_params_into(arch, params, inputs, targets, lik, &mut out)?;
    if !out.is_finite() {
        return Err(CoreError::NonFinite("parameter gradient".into()));
    }
    Ok(out)
}

/// Gradients of the log-likelihood in the data: one matrix for the inputs and
/// one for the targets, shaped like them.
pub fn grad_data(
    arch: &MlpArchitecture,
    params: &ParamVector,
    inputs: &Array2<f64>,
    targets: &Array2<f64>,
    lik: &LikelihoodSpec,
) -> Result<(Array2<f64>, Array2<f64>)> {
    check_params(arch, params)?;
    let (outputs, cache) = checked_forward(arch, params, inputs, targets, lik)?;
    let d_out = lik.d_outputs(&outputs, targets);
    let d_inputs = backward(arch, params, &cache, d_out, None, true)
        .expect("input gradient requested");
    let d_targets = lik.d_targets(&outputs, targets);
    if d_inputs.iter().any(|v| !v.is_finite()) || d_targets.iter().any(|v| !v.is_finite()) {
        return Err(CoreError::NonFinite("data gradient".into()));
    }
    Ok((d_inputs, d_targets))
}
