//! Temporal memory kernels `K(t, tau; lambda)` and their exact partial derivatives.
//!
//! Every family is evaluated on the lag `delta = t - tau >= 0`:
//!
//! | family               | `K`                                   |
//! |----------------------|---------------------------------------|
//! | `ExponentialDecay`   | `lambda * exp(-lambda * delta)`       |
//! | `Uniform`            | `1 / t`                               |
//! | `GaussianNormalized` | `exp(-delta² / (2 lambda²)) / (sqrt(2π) lambda)` |
//! | `GaussianDecay`      | `exp(-lambda * delta²)`               |
//! | `PolynomialDecay`    | `1 / (1 + delta)`                     |
//! | `Mixture`            | `Σ w_m K_m`                           |
//!
//! Mixture members either share the mixture's `lambda` (the default) or carry their own.
//! Only the shared `lambda` is visible to [`KernelSpec::d_dlambda`] and meta-adaptation.

use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const WEIGHT_SUM_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum KernelFamily {
    ExponentialDecay,
    Uniform,
    GaussianNormalized,
    GaussianDecay,
    PolynomialDecay,
    Mixture,
}

impl KernelFamily {
    /// Whether the formula depends on `lambda`.
    pub fn uses_lambda(self) -> bool {
        matches!(
            self,
            KernelFamily::ExponentialDecay
                | KernelFamily::GaussianNormalized
                | KernelFamily::GaussianDecay
                | KernelFamily::Mixture
        )
    }
}

/// One member of a kernel mixture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureComponent {
    pub family: KernelFamily,
    /// Member-specific rate. `None` shares the mixture's `lambda`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    pub family: KernelFamily,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub mixture: Vec<MixtureComponent>,
}

fn default_lambda() -> f64 {
    1.0
}

impl KernelSpec {
    pub fn new(family: KernelFamily, lambda: f64) -> Result<Self> {
        let spec = KernelSpec {
            family,
            lambda,
            mixture: Vec::new(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn exponential(lambda: f64) -> Self {
        Self::unchecked(KernelFamily::ExponentialDecay, lambda)
    }

    pub fn uniform() -> Self {
        Self::unchecked(KernelFamily::Uniform, 1.0)
    }

    /// Normalized Gaussian with bandwidth `sigma`.
    pub fn gaussian_normalized(sigma: f64) -> Self {
        Self::unchecked(KernelFamily::GaussianNormalized, sigma)
    }

    pub fn gaussian_decay(lambda: f64) -> Self {
        Self::unchecked(KernelFamily::GaussianDecay, lambda)
    }

    pub fn polynomial() -> Self {
        Self::unchecked(KernelFamily::PolynomialDecay, 1.0)
    }

    /// Mixture with shared rate `lambda`.
    pub fn mixture(lambda: f64, components: Vec<MixtureComponent>) -> Result<Self> {
        let spec = KernelSpec {
            family: KernelFamily::Mixture,
            lambda,
            mixture: components,
        };
        spec.validate()?;
        Ok(spec)
    }

    fn unchecked(family: KernelFamily, lambda: f64) -> Self {
        KernelSpec {
            family,
            lambda,
            mixture: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.family.uses_lambda() && !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "{:?} kernel needs lambda > 0, got {}",
                self.family, self.lambda
            )));
        }
        match self.family {
            KernelFamily::Mixture => {
                if self.mixture.is_empty() {
                    return Err(Error::InvalidArgument(
                        "mixture kernel needs at least one component".into(),
                    ));
                }
                let mut total = 0.0;
                for c in &self.mixture {
                    if c.family == KernelFamily::Mixture {
                        return Err(Error::InvalidArgument(
                            "nested mixtures are not supported".into(),
                        ));
                    }
                    if !(c.weight >= 0.0 && c.weight.is_finite()) {
                        return Err(Error::InvalidArgument(format!(
                            "mixture weight must be nonnegative, got {}",
                            c.weight
                        )));
                    }
                    if let Some(l) = c.lambda {
                        if !(l > 0.0 && l.is_finite()) {
                            return Err(Error::InvalidArgument(format!(
                                "mixture member lambda must be positive, got {l}"
                            )));
                        }
                    }
                    total += c.weight;
                }
                if (total - 1.0).abs() > WEIGHT_SUM_TOL {
                    return Err(Error::InvalidArgument(format!(
                        "mixture weights must sum to 1, got {total}"
                    )));
                }
            }
            _ if !self.mixture.is_empty() => {
                return Err(Error::InvalidArgument(format!(
                    "{:?} kernel does not take mixture components",
                    self.family
                )));
            }
            _ => {}
        }
        Ok(())
    }

    /// Same kernel with the (shared) rate replaced.
    pub fn with_lambda(&self, lambda: f64) -> Self {
        KernelSpec {
            lambda,
            ..self.clone()
        }
    }

    /// Whether [`KernelSpec::d_dlambda`] can be nonzero.
    pub fn is_adaptive(&self) -> bool {
        match self.family {
            KernelFamily::Mixture => self
                .mixture
                .iter()
                .any(|c| c.lambda.is_none() && c.family.uses_lambda()),
            f => f.uses_lambda(),
        }
    }

    pub fn eval(&self, t: f64, tau: f64) -> Result<f64> {
        self.check_domain(t, tau)?;
        Ok(self.fold(|family, lambda, _| {
            eval_family(family, lambda, t, t - tau)
        }))
    }

    /// Exact `∂K/∂lambda` at fixed `(t, tau)`; mixture weights are held fixed.
    pub fn d_dlambda(&self, t: f64, tau: f64) -> Result<f64> {
        self.check_domain(t, tau)?;
        Ok(self.fold(|family, lambda, shared| {
            if shared {
                dlambda_family(family, lambda, t - tau)
            } else {
                0.0
            }
        }))
    }

    /// Exact `∂K/∂t` at fixed `tau`.
    pub fn d_dt(&self, t: f64, tau: f64) -> Result<f64> {
        self.check_domain(t, tau)?;
        Ok(self.fold(|family, lambda, _| {
            dt_family(family, lambda, t, t - tau)
        }))
    }

    fn fold(&self, f: impl Fn(KernelFamily, f64, bool) -> f64) -> f64 {
        match self.family {
            KernelFamily::Mixture => self
                .mixture
                .iter()
                .map(|c| {
                    let shared = c.lambda.is_none();
                    c.weight * f(c.family, c.lambda.unwrap_or(self.lambda), shared)
                })
                .sum(),
            family => f(family, self.lambda, true),
        }
    }

    fn check_domain(&self, t: f64, tau: f64) -> Result<()> {
        if !(t.is_finite() && tau.is_finite()) {
            return Err(Error::Domain(format!("non-finite time (t={t}, tau={tau})")));
        }
        if tau < 0.0 || tau > t {
            return Err(Error::Domain(format!(
                "kernel needs 0 <= tau <= t, got t={t}, tau={tau}"
            )));
        }
        let has_uniform = self.family == KernelFamily::Uniform
            || self.mixture.iter().any(|c| c.family == KernelFamily::Uniform);
        if has_uniform && t <= 0.0 {
            return Err(Error::Domain("uniform kernel is undefined at t = 0".into()));
        }
        Ok(())
    }

    /// Short human-readable label, used as a row key in tables.
    pub fn label(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.family {
            KernelFamily::Uniform | KernelFamily::PolynomialDecay => write!(f, "{:?}", self.family),
            KernelFamily::Mixture => {
                write!(f, "Mixture(lambda={}", self.lambda)?;
                for c in &self.mixture {
                    match c.lambda {
                        Some(l) => write!(f, "; {}*{:?}(lambda={})", c.weight, c.family, l)?,
                        None => write!(f, "; {}*{:?}", c.weight, c.family)?,
                    }
                }
                write!(f, ")")
            }
            family => write!(f, "{:?}(lambda={})", family, self.lambda),
        }
    }
}

fn eval_family(family: KernelFamily, lambda: f64, t: f64, delta: f64) -> f64 {
    match family {
        KernelFamily::ExponentialDecay => lambda * (-lambda * delta).exp(),
        KernelFamily::Uniform => 1.0 / t,
        KernelFamily::GaussianNormalized => {
            (-(delta * delta) / (2.0 * lambda * lambda)).exp() / ((2.0 * PI).sqrt() * lambda)
        }
        KernelFamily::GaussianDecay => (-lambda * delta * delta).exp(),
        KernelFamily::PolynomialDecay => 1.0 / (1.0 + delta),
        KernelFamily::Mixture => unreachable!("mixtures are flattened before evaluation"),
    }
}

fn dlambda_family(family: KernelFamily, lambda: f64, delta: f64) -> f64 {
    match family {
        KernelFamily::ExponentialDecay => (-lambda * delta).exp() * (1.0 - lambda * delta),
        KernelFamily::GaussianNormalized => {
            let k = eval_family(family, lambda, 0.0, delta);
            k * (delta * delta / lambda.powi(3) - 1.0 / lambda)
        }
        KernelFamily::GaussianDecay => -(delta * delta) * (-lambda * delta * delta).exp(),
        KernelFamily::Uniform | KernelFamily::PolynomialDecay => 0.0,
        KernelFamily::Mixture => unreachable!("mixtures are flattened before evaluation"),
    }
}

fn dt_family(family: KernelFamily, lambda: f64, t: f64, delta: f64) -> f64 {
    match family {
        KernelFamily::ExponentialDecay => -lambda * lambda * (-lambda * delta).exp(),
        KernelFamily::Uniform => -1.0 / (t * t),
        KernelFamily::GaussianNormalized => {
            -eval_family(family, lambda, t, delta) * delta / (lambda * lambda)
        }
        KernelFamily::GaussianDecay => -2.0 * lambda * delta * (-lambda * delta * delta).exp(),
        KernelFamily::PolynomialDecay => -1.0 / ((1.0 + delta) * (1.0 + delta)),
        KernelFamily::Mixture => unreachable!("mixtures are flattened before evaluation"),
    }
}
