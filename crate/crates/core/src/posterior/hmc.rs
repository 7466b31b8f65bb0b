//! Hamiltonian Monte Carlo with a leapfrog integrator and a scalar mass
//! matrix.

use ndarray::Array1;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::TargetDensity;
use crate::error::{CoreError, Result};
use crate::nn::ParamVector;
use crate::rng::rng_from_seed;

/// Sampler settings. `inverse_mass` is the scalar `c` in `M^{-1} = c I`; the
/// kinetic energy is `c ||p||^2 / 2` and momenta are drawn from `N(0, M)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HmcConfig {
    pub step_size: f64,
    pub num_integration_steps: usize,
    pub inverse_mass: f64,
    pub num_steps: usize,
    pub num_samples_kept: usize,
    pub seed: u64,
}

impl HmcConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size.is_finite() && self.step_size > 0.0) {
            return Err(CoreError::InvalidConfig(format!(
                "hmc step size must be positive, got {}",
                self.step_size
            )));
        }
        if self.num_integration_steps == 0 {
            return Err(CoreError::InvalidConfig(
                "hmc needs at least one integration step".into(),
            ));
        }
        if !(self.inverse_mass.is_finite() && self.inverse_mass > 0.0) {
            return Err(CoreError::InvalidConfig(format!(
                "hmc inverse mass must be positive, got {}",
                self.inverse_mass
            )));
        }
        if self.num_samples_kept == 0 || self.num_samples_kept > self.num_steps {
            return Err(CoreError::InvalidConfig(format!(
                "kept samples must lie in 1..={} , got {}",
                self.num_steps, self.num_samples_kept
            )));
        }
        Ok(())
    }
}

/// Kept posterior samples and the fraction of accepted proposals.
#[derive(Clone, Debug)]
pub struct HmcRun {
    pub samples: Vec<ParamVector>,
    pub acceptance_rate: f64,
}

/// One leapfrog trajectory in place: half momentum kick, alternating full
/// position and momentum updates, closing half kick. Symplectic and exactly
/// reversible up to floating-point rounding (negate the momentum to retrace).
pub fn leapfrog(
    target: &TargetDensity,
    theta: &mut Array1<f64>,
    momentum: &mut Array1<f64>,
    step_size: f64,
    num_integration_steps: usize,
    inverse_mass: f64,
) -> Result<()> {
    let dim = theta.len();
    let mut grad = ParamVector::zeros(dim);
    let mut scratch = ParamVector::zeros(dim);
    let mut position = ParamVector::new(theta.clone());

    let half = 0.5 * step_size;
    target.grad_log_unnorm_into(&position, &mut grad, &mut scratch)?;
    for (p, g) in momentum.iter_mut().zip(grad.values.iter()) {
        *p += half * g;
    }
    for l in 0..num_integration_steps {
        for (q, p) in position.values.iter_mut().zip(momentum.iter()) {
            *q += step_size * inverse_mass * p;
        }
        target.grad_log_unnorm_into(&position, &mut grad, &mut scratch)?;
        let kick = if l + 1 == num_integration_steps {
            half
        } else {
            step_size
        };
        for (p, g) in momentum.iter_mut().zip(grad.values.iter()) {
            *p += kick * g;
        }
    }
    theta.assign(&position.values);
    Ok(())
}

/// Indices (1-based step numbers) of the states kept from a chain of
/// `num_steps`: discard a burn-in of `min(num_steps / 2, num_steps - kept)`
/// states, then thin the remainder evenly, always including the final state.
pub(crate) fn kept_indices(num_steps: usize, kept: usize) -> Vec<usize> {
    let burn = (num_steps / 2).min(num_steps - kept);
    let span = num_steps - burn;
    (1..=kept).map(|j| burn + j * span / kept).collect()
}

/// Samples the target with Metropolis-adjusted leapfrog trajectories.
/// Proposals with non-finite energy are rejected; a non-finite initial state
/// is an error. Deterministic in `cfg.seed`.
pub fn hmc_sample(
    target: &TargetDensity,
    init: &ParamVector,
    cfg: &HmcConfig,
) -> Result<HmcRun> {
    target.validate()?;
    cfg.validate()?;
    let dim = target.arch.param_count();
    if init.len() != dim {
        return Err(CoreError::DimensionMismatch(format!(
            "init has {} parameters, architecture needs {dim}",
            init.len()
        )));
    }

    let mut rng = rng_from_seed(cfg.seed);
    let momentum_std = (1.0 / cfg.inverse_mass).sqrt();
    let kinetic = |p: &Array1<f64>| {
        0.5 * cfg.inverse_mass * p.iter().map(|v| v * v).sum::<f64>()
    };

    let keep: Vec<usize> = kept_indices(cfg.num_steps, cfg.num_samples_kept);
    let mut keep_cursor = 0;
    let mut samples = Vec::with_capacity(cfg.num_samples_kept);

    let mut theta = init.clone();
    let mut log_density = target.log_unnorm(&theta)?;
    let mut accepted = 0usize;

    for step in 1..=cfg.num_steps {
        let mut momentum: Array1<f64> =
            Array1::from_shape_fn(dim, |_| momentum_std * rng.sample::<f64, _>(StandardNormal));
        let h_old = -log_density + kinetic(&momentum);

        let mut proposal = theta.values.clone();
        let proposal_ok = leapfrog(
            target,
            &mut proposal,
            &mut momentum,
            cfg.step_size,
            cfg.num_integration_steps,
            cfg.inverse_mass,
        )
        .is_ok();

        // The uniform draw happens unconditionally so rejected or failed
        // proposals consume the same amount of randomness.
        let u: f64 = rng.random();
        if proposal_ok {
            let proposal = ParamVector::new(proposal);
            if let Ok(new_log_density) = target.log_unnorm(&proposal) {
                let h_new = -new_log_density + kinetic(&momentum);
                let log_accept = h_old - h_new;
                if log_accept.is_finite() && u.ln() < log_accept {
                    theta = proposal;
                    log_density = new_log_density;
                    accepted += 1;
                }
            }
        }

        if keep_cursor < keep.len() && keep[keep_cursor] == step {
            samples.push(theta.clone());
            keep_cursor += 1;
        }
    }

    Ok(HmcRun {
        samples,
        acceptance_rate: accepted as f64 / cfg.num_steps as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{init_params, Activation, LikelihoodSpec, MlpArchitecture, Task};
    use crate::posterior::{LikelihoodTerm, PriorSpec};
    use ndarray::arr2;

    /// Standard normal in `dim` dimensions via a prior-only target over a
    /// bias-and-weight parameter vector of that length.
    fn standard_normal_target(dim_minus_one: usize) -> TargetDensity {
        TargetDensity {
            arch: MlpArchitecture::new(
                vec![dim_minus_one, 1],
                Activation::Relu,
                None,
                Task::Regression,
            )
            .unwrap(),
            prior: PriorSpec { precision: 1.0 },
            terms: Vec::new(),
        }
    }

    #[test]
    fn thinning_keeps_second_half_evenly() {
        assert_eq!(kept_indices(10, 3), vec![6, 8, 10]);
        assert_eq!(kept_indices(10, 5), vec![6, 7, 8, 9, 10]);
        assert_eq!(kept_indices(10, 10), (1..=10).collect::<Vec<_>>());
        // More than half requested: keep the trailing window.
        assert_eq!(kept_indices(10, 7), (4..=10).collect::<Vec<_>>());
        assert_eq!(kept_indices(1, 1), vec![1]);
    }

    #[test]
    fn standard_normal_moments_are_recovered() {
        let target = standard_normal_target(4); // five parameters
        let init = ParamVector::zeros(5);
        let cfg = HmcConfig {
            step_size: 0.25,
            num_integration_steps: 8,
            inverse_mass: 1.0,
            num_steps: 3000,
            num_samples_kept: 1000,
            seed: 42,
        };
        let run = hmc_sample(&target, &init, &cfg).unwrap();
        assert_eq!(run.samples.len(), 1000);
        assert!(run.acceptance_rate > 0.9, "rate {}", run.acceptance_rate);
        for d in 0..5 {
            let xs: Vec<f64> = run.samples.iter().map(|s| s.values[d]).collect();
            let mean = xs.iter().sum::<f64>() / xs.len() as f64;
            let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / xs.len() as f64;
            assert!(mean.abs() < 0.15, "dim {d} mean {mean}");
            assert!((0.75..1.3).contains(&var), "dim {d} var {var}");
        }
    }

    #[test]
    fn leapfrog_retraces_with_negated_momentum() {
        let arch =
            MlpArchitecture::new(vec![2, 4, 1], Activation::Swish, None, Task::Regression)
                .unwrap();
        let target = TargetDensity {
            arch: arch.clone(),
            prior: PriorSpec { precision: 0.5 },
            terms: vec![LikelihoodTerm {
                inputs: arr2(&[[0.3, -0.8], [1.1, 0.2]]),
                targets: arr2(&[[0.5], [-0.2]]),
                lik: LikelihoodSpec::Gaussian { sigma: 0.4 },
                weight: 1.0,
            }],
        };
        let start = init_params(&arch, 17).unwrap();
        let mut theta = start.values.clone();
        let mut momentum = init_params(&arch, 18).unwrap().values;
        leapfrog(&target, &mut theta, &mut momentum, 0.05, 25, 2.0).unwrap();
        momentum.mapv_inplace(|p| -p);
        leapfrog(&target, &mut theta, &mut momentum, 0.05, 25, 2.0).unwrap();
        for (a, b) in theta.iter().zip(start.values.iter()) {
            assert!((a - b).abs() <= 1e-8, "{a} vs {b}");
        }
    }

    #[test]
    fn vanishing_step_size_accepts_everything() {
        let target = standard_normal_target(2);
        let init = ParamVector::zeros(3);
        let cfg = HmcConfig {
            step_size: 1e-8,
            num_integration_steps: 1,
            inverse_mass: 1.0,
            num_steps: 100,
            num_samples_kept: 10,
            seed: 7,
        };
        let run = hmc_sample(&target, &init, &cfg).unwrap();
        assert_eq!(run.acceptance_rate, 1.0);
    }

    #[test]
    fn energy_error_scales_quadratically_with_step_size() {
        let target = standard_normal_target(4);
        // Fixed trajectory duration: halving the step size doubles the step
        // count, so the discretization error alone changes between runs.
        let median_abs_dh = |step_size: f64, num_steps: usize, seed: u64| {
            let mut rng = crate::rng::rng_from_seed(seed);
            let mut dhs = Vec::new();
            for _ in 0..200 {
                let theta0: Array1<f64> = Array1::from_shape_fn(5, |_| {
                    rng.sample::<f64, _>(rand_distr::StandardNormal)
                });
                let mut p: Array1<f64> = Array1::from_shape_fn(5, |_| {
                    rng.sample::<f64, _>(rand_distr::StandardNormal)
                });
                let mut theta = theta0.clone();
                let h_old = -target.log_unnorm(&ParamVector::new(theta0)).unwrap()
                    + 0.5 * p.iter().map(|v| v * v).sum::<f64>();
                leapfrog(&target, &mut theta, &mut p, step_size, num_steps, 1.0).unwrap();
                let h_new = -target.log_unnorm(&ParamVector::new(theta)).unwrap()
                    + 0.5 * p.iter().map(|v| v * v).sum::<f64>();
                dhs.push((h_new - h_old).abs());
            }
            dhs.sort_by(|a, b| a.partial_cmp(b).unwrap());
            dhs[dhs.len() / 2]
        };
        let coarse = median_abs_dh(0.2, 16, 5);
        let fine = median_abs_dh(0.1, 32, 5);
        let ratio = coarse / fine;
        assert!((3.0..5.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn kept_must_not_exceed_steps() {
        let cfg = HmcConfig {
            step_size: 0.1,
            num_integration_steps: 4,
            inverse_mass: 1.0,
            num_steps: 10,
            num_samples_kept: 11,
            seed: 0,
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn same_seed_same_samples() {
        let target = standard_normal_target(2);
        let init = ParamVector::zeros(3);
        let cfg = HmcConfig {
            step_size: 0.3,
            num_integration_steps: 5,
            inverse_mass: 1.0,
            num_steps: 50,
            num_samples_kept: 10,
            seed: 11,
        };
        let a = hmc_sample(&target, &init, &cfg).unwrap();
        let b = hmc_sample(&target, &init, &cfg).unwrap();
        for (x, y) in a.samples.iter().zip(b.samples.iter()) {
            assert_eq!(x, y);
        }
    }
}
