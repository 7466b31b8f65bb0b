//! Observation models tying network outputs to targets.
//!
//! Log-likelihoods are sums over data points, matching the unnormalized
//! posteriors elsewhere in the crate. The categorical likelihood is linear in
//! the label rows, so soft labels are well defined.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{forward_cached, MlpArchitecture, ParamVector};
use crate::error::{CoreError, Result};

/// Tolerance for the sum of one classification label row.
pub(crate) const LABEL_ROW_SUM_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LikelihoodSpec {
    /// Independent Gaussian noise with fixed standard deviation per output.
    Gaussian { sigma: f64 },
    /// Categorical over softmax(outputs); label rows are distributions.
    CategoricalSoftmax,
}

impl LikelihoodSpec {
    pub fn validate(&self) -> Result<()> {
        if let LikelihoodSpec::Gaussian { sigma } = self {
            if !(sigma.is_finite() && *sigma > 0.0) {
                return Err(CoreError::InvalidConfig(format!(
                    "gaussian likelihood needs sigma > 0, got {sigma}"
                )));
            }
        }
        Ok(())
    }

    /// Structural checks on a target matrix for this likelihood.
    pub(crate) fn check_targets(&self, targets: &Array2<f64>, output_dim: usize) -> Result<()> {
        if targets.ncols() != output_dim {
            return Err(CoreError::DimensionMismatch(format!(
                "targets have {} columns, outputs have {output_dim}",
                targets.ncols()
            )));
        }
        if targets.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::InvalidLabels("non-finite target entry".into()));
        }
        if matches!(self, LikelihoodSpec::CategoricalSoftmax) {
            for (i, row) in targets.rows().into_iter().enumerate() {
                let sum: f64 = row.sum();
                if (sum - 1.0).abs() > LABEL_ROW_SUM_TOL {
                    return Err(CoreError::InvalidLabels(format!(
                        "label row {i} sums to {sum}, expected 1"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Log-likelihood given already-computed network outputs.
    pub fn log_likelihood_from_outputs(
        &self,
        outputs: &Array2<f64>,
        targets: &Array2<f64>,
    ) -> Result<f64> {
        self.validate()?;
        self.check_targets(targets, outputs.ncols())?;
        if outputs.nrows() != targets.nrows() {
            return Err(CoreError::DimensionMismatch(format!(
                "{} output rows vs {} target rows",
                outputs.nrows(),
                targets.nrows()
            )));
        }
        let value = match self {
            LikelihoodSpec::Gaussian { sigma } => {
                let n = outputs.nrows() as f64;
                let c = outputs.ncols() as f64;
                let sse: f64 = outputs
                    .iter()
                    .zip(targets.iter())
                    .map(|(f, y)| (y - f) * (y - f))
                    .sum();
                -0.5 * n * c * (2.0 * std::f64::consts::PI * sigma * sigma).ln()
                    - sse / (2.0 * sigma * sigma)
            }
            LikelihoodSpec::CategoricalSoftmax => {
                let mut total = 0.0;
                for (frow, yrow) in outputs.rows().into_iter().zip(targets.rows()) {
                    let lse = log_sum_exp(frow.iter().copied());
                    total += frow
                        .iter()
                        .zip(yrow.iter())
                        .map(|(f, y)| y * (f - lse))
                        .sum::<f64>();
                }
                total
            }
        };
        if !value.is_finite() {
            return Err(CoreError::NonFinite("log-likelihood".into()));
        }
        Ok(value)
    }

    /// Gradient of the log-likelihood in the network outputs.
    pub(crate) fn d_outputs(&self, outputs: &Array2<f64>, targets: &Array2<f64>) -> Array2<f64> {
        match self {
            LikelihoodSpec::Gaussian { sigma } => {
                let inv_var = 1.0 / (sigma * sigma);
                let mut d = targets - outputs;
                d *= inv_var;
                d
            }
            LikelihoodSpec::CategoricalSoftmax => {
                let probs = softmax_rows(outputs);
                let mut d = targets.clone();
                for ((mut drow, prow), yrow) in d
                    .rows_mut()
                    .into_iter()
                    .zip(probs.rows())
                    .zip(targets.rows())
                {
                    let mass: f64 = yrow.sum();
                    for (dv, p) in drow.iter_mut().zip(prow.iter()) {
                        *dv -= mass * p;
                    }
                }
                d
            }
        }
    }

    /// Gradient of the log-likelihood in the targets.
    pub(crate) fn d_targets(&self, outputs: &Array2<f64>, targets: &Array2<f64>) -> Array2<f64> {
        match self {
            LikelihoodSpec::Gaussian { sigma } => {
                let inv_var = 1.0 / (sigma * sigma);
                let mut d = outputs - targets;
                d *= inv_var;
                d
            }
            LikelihoodSpec::CategoricalSoftmax => log_softmax_rows(outputs),
        }
    }
}

pub(crate) fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Numerically stable row-wise softmax.
pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    out
}

pub(crate) fn log_softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let lse = log_sum_exp(row.iter().copied());
        for v in row.iter_mut() {
            *v -= lse;
        }
    }
    out
}

/// Log-likelihood of `targets` under the network's outputs at `inputs`.
pub fn log_likelihood(
    arch: &MlpArchitecture,
    params: &ParamVector,
    inputs: &Array2<f64>,
    targets: &Array2<f64>,
    lik: &LikelihoodSpec,
) -> Result<f64> {
    let (outputs, _) = forward_cached(arch, params, inputs)?;
    lik.log_likelihood_from_outputs(&outputs, targets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{init_params, Activation, MlpArchitecture, Task};
    use ndarray::{arr2, s};

    fn tiny_regression() -> (MlpArchitecture, ParamVector) {
        let arch =
            MlpArchitecture::new(vec![2, 4, 1], Activation::Swish, None, Task::Regression)
                .unwrap();
        let params = init_params(&arch, 21).unwrap();
        (arch, params)
    }

    #[test]
    fn gaussian_zero_residual_is_pure_normalizer() {
        let lik = LikelihoodSpec::Gaussian { sigma: 1.0 };
        let f = arr2(&[[0.4]]);
        let y = arr2(&[[0.4]]);
        let ll = lik.log_likelihood_from_outputs(&f, &y).unwrap();
        let expected = -0.5 * (2.0 * std::f64::consts::PI).ln();
        assert!((ll - expected).abs() < 1e-15);
    }

    #[test]
    fn categorical_equal_logits_gives_log_half() {
        let lik = LikelihoodSpec::CategoricalSoftmax;
        let f = arr2(&[[0.7, 0.7]]);
        let y = arr2(&[[1.0, 0.0]]);
        let ll = lik.log_likelihood_from_outputs(&f, &y).unwrap();
        assert!((ll - 0.5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn log_likelihood_adds_over_points() {
        let (arch, params) = tiny_regression();
        let lik = LikelihoodSpec::Gaussian { sigma: 0.3 };
        let x = arr2(&[[0.1, -0.4], [1.2, 0.3], [-0.8, 0.9]]);
        let y = arr2(&[[0.5], [-0.2], [1.1]]);
        let total = log_likelihood(&arch, &params, &x, &y, &lik).unwrap();
        let mut per_point = 0.0;
        for i in 0..3 {
            per_point += log_likelihood(
                &arch,
                &params,
                &x.slice(s![i..i + 1, ..]).to_owned(),
                &y.slice(s![i..i + 1, ..]).to_owned(),
                &lik,
            )
            .unwrap();
        }
        assert!((total - per_point).abs() < 1e-12);
    }

    #[test]
    fn categorical_rejects_bad_row_sum() {
        let lik = LikelihoodSpec::CategoricalSoftmax;
        let f = arr2(&[[0.0, 0.0]]);
        let y = arr2(&[[0.6, 0.5]]);
        assert!(matches!(
            lik.log_likelihood_from_outputs(&f, &y),
            Err(CoreError::InvalidLabels(_))
        ));
    }

    #[test]
    fn categorical_is_linear_in_soft_labels() {
        let lik = LikelihoodSpec::CategoricalSoftmax;
        let f = arr2(&[[0.3, -1.2]]);
        let e0 = arr2(&[[1.0, 0.0]]);
        let e1 = arr2(&[[0.0, 1.0]]);
        let mix = arr2(&[[0.3, 0.7]]);
        let l0 = lik.log_likelihood_from_outputs(&f, &e0).unwrap();
        let l1 = lik.log_likelihood_from_outputs(&f, &e1).unwrap();
        let lm = lik.log_likelihood_from_outputs(&f, &mix).unwrap();
        assert!((lm - (0.3 * l0 + 0.7 * l1)).abs() < 1e-14);
    }

    #[test]
    fn log_softmax_is_shift_invariant() {
        let a = arr2(&[[0.2, -0.9, 1.4]]);
        let b = arr2(&[[0.2 + 37.0, -0.9 + 37.0, 1.4 + 37.0]]);
        let la = log_softmax_rows(&a);
        let lb = log_softmax_rows(&b);
        for (x, y) in la.iter().zip(lb.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn invalid_sigma_is_rejected() {
        let lik = LikelihoodSpec::Gaussian { sigma: 0.0 };
        assert!(lik.validate().is_err());
    }
}
