//! Unnormalized log-posteriors over network weights, and the machinery to
//! optimize and sample them.
//!
//! A [`TargetDensity`] is an isotropic Gaussian prior plus a weighted sum of
//! dataset log-likelihood terms; weighting makes the same type serve a single
//! client's posterior, a coreset posterior, and the server's aggregated
//! coreset posterior.

mod hmc;
mod opt;
mod predictive;

pub use hmc::{hmc_sample, leapfrog, HmcConfig, HmcRun};
pub use opt::{map_optimize, GradientAscent, OptConfig, Optimizer};
pub use predictive::{predictive_mc, PredictiveSummary};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::nn::{grad_params_into, log_likelihood, LikelihoodSpec, MlpArchitecture, ParamVector};

/// Isotropic Gaussian prior `N(0, (1/precision) I)` over the flat parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorSpec {
    pub precision: f64,
}

impl PriorSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.precision.is_finite() && self.precision >= 0.0) {
            return Err(CoreError::InvalidConfig(format!(
                "prior precision must be finite and non-negative, got {}",
                self.precision
            )));
        }
        Ok(())
    }
}

/// One weighted dataset term of an unnormalized log-posterior.
#[derive(Clone, Debug)]
pub struct LikelihoodTerm {
    pub inputs: Array2<f64>,
    pub targets: Array2<f64>,
    pub lik: LikelihoodSpec,
    pub weight: f64,
}

/// `log p0(theta) + sum_i weight_i * loglik_i(theta)` up to the prior's
/// normalizing constant.
#[derive(Clone, Debug)]
pub struct TargetDensity {
    pub arch: MlpArchitecture,
    pub prior: PriorSpec,
    pub terms: Vec<LikelihoodTerm>,
}

impl TargetDensity {
    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        self.prior.validate()?;
        for term in &self.terms {
            term.lik.validate()?;
            if !term.weight.is_finite() {
                return Err(CoreError::InvalidConfig(format!(
                    "term weight must be finite, got {}",
                    term.weight
                )));
            }
        }
        Ok(())
    }

    /// Unnormalized log-density at `params`.
    pub fn log_unnorm(&self, params: &ParamVector) -> Result<f64> {
        self.validate()?;
        let sq_norm: f64 = params.values.iter().map(|v| v * v).sum();
        let mut value = -0.5 * self.prior.precision * sq_norm;
        for term in &self.terms {
            value += term.weight
                * log_likelihood(&self.arch, params, &term.inputs, &term.targets, &term.lik)?;
        }
        if !value.is_finite() {
            return Err(CoreError::NonFinite("unnormalized log-density".into()));
        }
        Ok(value)
    }

    /// Gradient of [`Self::log_unnorm`] written into `out`; `scratch` holds
    /// one term's gradient between accumulations. No-allocation hot path.
    pub(crate) fn grad_log_unnorm_into(
        &self,
        params: &ParamVector,
        out: &mut ParamVector,
        scratch: &mut ParamVector,
    ) -> Result<()> {
        let lambda = self.prior.precision;
        for (o, p) in out.values.iter_mut().zip(params.values.iter()) {
            *o = -lambda * p;
        }
        for term in &self.terms {
            grad_params_into(
                &self.arch,
                params,
                &term.inputs,
                &term.targets,
                &term.lik,
                scratch,
            )?;
            let w = term.weight;
            for (o, g) in out.values.iter_mut().zip(scratch.values.iter()) {
                *o += w * g;
            }
        }
        Ok(())
    }

    /// Gradient of [`Self::log_unnorm`] at `params`.
    pub fn grad_log_unnorm(&self, params: &ParamVector) -> Result<ParamVector> {
        self.validate()?;
        let mut out = ParamVector::zeros(params.len());
        let mut scratch = ParamVector::zeros(params.len());
        self.grad_log_unnorm_into(params, &mut out, &mut scratch)?;
        if !out.is_finite() {
            return Err(CoreError::NonFinite("log-density gradient".into()));
        }
        Ok(out)
    }
}
