//! Monte Carlo posterior predictive summaries.

use ndarray::{Array2, ArrayView2};

use crate::error::{CoreError, Result};
use crate::nn::{forward, softmax_rows, LikelihoodSpec, MlpArchitecture, ParamVector};

/// Pointwise predictive summary averaged over parameter samples.
#[derive(Clone, Debug)]
pub enum PredictiveSummary {
    /// Class probabilities, one row per input, averaged over samples.
    Classification { probs: Array2<f64> },
    /// Per-output predictive mean and standard deviation. The variance adds
    /// the observation noise to the spread of the sampled means.
    Regression { mean: Array2<f64>, std: Array2<f64> },
}

impl PredictiveSummary {
    /// The probability (classification) or mean (regression) table.
    pub fn point(&self) -> ArrayView2<'_, f64> {
        match self {
            PredictiveSummary::Classification { probs } => probs.view(),
            PredictiveSummary::Regression { mean, .. } => mean.view(),
        }
    }
}

/// Averages the predictive distribution over `samples`. Classification
/// averages per-sample softmax probabilities; regression returns the sample
/// mean of the network outputs and `sqrt(population variance + sigma^2)`.
pub fn predictive_mc(
    arch: &MlpArchitecture,
    samples: &[ParamVector],
    inputs: &Array2<f64>,
    lik: &LikelihoodSpec,
) -> Result<PredictiveSummary> {
    if samples.is_empty() {
        return Err(CoreError::Empty(
            "predictive summary needs at least one parameter sample".into(),
        ));
    }
    lik.validate()?;
    let n = inputs.nrows();
    let c = arch.output_dim();
    let inv = 1.0 / samples.len() as f64;

    match lik {
        LikelihoodSpec::CategoricalSoftmax => {
            let mut probs = Array2::<f64>::zeros((n, c));
            for params in samples {
                let outputs = forward(arch, params, inputs)?;
                probs.scaled_add(inv, &softmax_rows(&outputs));
            }
            Ok(PredictiveSummary::Classification { probs })
        }
        LikelihoodSpec::Gaussian { sigma } => {
            let mut mean = Array2::<f64>::zeros((n, c));
            let mut second = Array2::<f64>::zeros((n, c));
            for params in samples {
                let outputs = forward(arch, params, inputs)?;
                mean.scaled_add(inv, &outputs);
                second.scaled_add(inv, &outputs.mapv(|v| v * v));
            }
            let noise = sigma * sigma;
            let std = ndarray::Zip::from(&second)
                .and(&mean)
                .map_collect(|&s, &m| (noise + (s - m * m).max(0.0)).sqrt());
            Ok(PredictiveSummary::Regression { mean, std })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{init_params, Activation, Task};
    use ndarray::arr2;

    fn tiny_classifier() -> MlpArchitecture {
        MlpArchitecture::new(vec![2, 4, 3], Activation::Relu, None, Task::Classification)
            .unwrap()
    }

    fn tiny_regressor() -> MlpArchitecture {
        MlpArchitecture::new(vec![1, 4, 2], Activation::Swish, None, Task::Regression).unwrap()
    }

    #[test]
    fn no_samples_is_an_error() {
        let arch = tiny_regressor();
        let inputs = arr2(&[[0.0]]);
        let err = predictive_mc(&arch, &[], &inputs, &LikelihoodSpec::Gaussian { sigma: 1.0 });
        assert!(matches!(err, Err(CoreError::Empty(_))));
    }

    #[test]
    fn single_sample_classification_is_plain_softmax() {
        let arch = tiny_classifier();
        let params = init_params(&arch, 3).unwrap();
        let inputs = arr2(&[[0.4, -1.2], [2.0, 0.3]]);
        let summary =
            predictive_mc(&arch, &[params.clone()], &inputs, &LikelihoodSpec::CategoricalSoftmax)
                .unwrap();
        let expected = softmax_rows(&forward(&arch, &params, &inputs).unwrap());
        match summary {
            PredictiveSummary::Classification { probs } => assert_eq!(probs, expected),
            other => panic!("expected classification summary, got {other:?}"),
        }
    }

    #[test]
    fn averaged_probabilities_stay_normalized() {
        let arch = tiny_classifier();
        let samples: Vec<_> = (0..5).map(|s| init_params(&arch, s).unwrap()).collect();
        let inputs = arr2(&[[0.4, -1.2], [2.0, 0.3], [-0.7, 0.9]]);
        let summary =
            predictive_mc(&arch, &samples, &inputs, &LikelihoodSpec::CategoricalSoftmax).unwrap();
        let PredictiveSummary::Classification { probs } = summary else {
            panic!("expected classification summary");
        };
        for row in probs.rows() {
            let total: f64 = row.sum();
            assert!((total - 1.0).abs() < 1e-12, "row sum {total}");
            assert!(row.iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn identical_samples_leave_only_observation_noise() {
        let arch = tiny_regressor();
        let params = init_params(&arch, 9).unwrap();
        let inputs = arr2(&[[0.25], [-0.5]]);
        let summary = predictive_mc(
            &arch,
            &[params.clone(), params.clone(), params],
            &inputs,
            &LikelihoodSpec::Gaussian { sigma: 0.3 },
        )
        .unwrap();
        let PredictiveSummary::Regression { std, .. } = summary else {
            panic!("expected regression summary");
        };
        for &s in std.iter() {
            assert!((s - 0.3).abs() < 1e-12, "std {s}");
        }
    }

    #[test]
    fn two_point_spread_matches_population_variance() {
        // Two parameter settings whose outputs at the probe are 0 and 2:
        // a [1, 1] linear net with weight 0 and bias set directly.
        let arch =
            MlpArchitecture::new(vec![1, 1], Activation::Relu, None, Task::Regression).unwrap();
        let low = ParamVector::new(ndarray::arr1(&[0.0, 0.0]));
        let high = ParamVector::new(ndarray::arr1(&[0.0, 2.0]));
        let inputs = arr2(&[[0.7]]);
        // sigma^2 underflows to zero, so the spread is the population
        // standard deviation of {0, 2}, exactly 1.
        let summary = predictive_mc(
            &arch,
            &[low, high],
            &inputs,
            &LikelihoodSpec::Gaussian { sigma: 1e-300 },
        )
        .unwrap();
        let PredictiveSummary::Regression { mean, std } = summary else {
            panic!("expected regression summary");
        };
        assert_eq!(mean[[0, 0]], 1.0);
        assert_eq!(std[[0, 0]], 1.0);
    }
}
