use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::projection::RhoProjector;
use crate::reward::Bounds;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelKind {
    Rbf,
    /// Matérn with ν = 5/2.
    Matern,
    /// RBF on ρ-vectors.
    RhoRbf,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub kind: KernelKind,
    pub lengthscale: f64,
    pub signal_variance: f64,
}

impl KernelSpec {
    pub fn new(kind: KernelKind, lengthscale: f64, signal_variance: f64) -> Result<Self> {
        if !(lengthscale > 0.0 && lengthscale.is_finite()) || !(signal_variance > 0.0 && signal_variance.is_finite()) {
            return Err(Error::Config(format!(
                "kernel hyperparameters must be positive (l = {lengthscale}, s = {signal_variance})"
            )));
        }
        Ok(Self {
            kind,
            lengthscale,
            signal_variance,
        })
    }

    pub fn with_lengthscale(self, lengthscale: f64) -> Result<Self> {
        Self::new(self.kind, lengthscale, self.signal_variance)
    }
}

/// Covariance of two already-mapped inputs.
pub fn kernel_eval(spec: &KernelSpec, a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    Ok(kernel_unchecked(spec, a, b))
}

pub(crate) fn kernel_unchecked(spec: &KernelSpec, a: &[f64], b: &[f64]) -> f64 {
    let sq: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    let l = spec.lengthscale;
    match spec.kind {
        KernelKind::Rbf | KernelKind::RhoRbf => spec.signal_variance * (-sq / (2.0 * l * l)).exp(),
        KernelKind::Matern => {
            let r = 5f64.sqrt() * sq.sqrt() / l;
            spec.signal_variance * (1.0 + r + r * r / 3.0) * (-r).exp()
        }
    }
}

/// How a parameter vector θ becomes a kernel input.
#[derive(Debug, Clone)]
pub enum InputMap {
    Identity,
    /// Per-coordinate affine map of the box onto the unit cube.
    Whiten(Bounds),
    /// The ρ-projection against a frozen basis.
    Rho(Arc<RhoProjector>),
}

impl InputMap {
    pub fn apply(&self, theta: &[f64]) -> Result<Vec<f64>> {
        match self {
            InputMap::Identity => Ok(theta.to_vec()),
            InputMap::Whiten(bounds) => {
                if theta.len() != bounds.dim() {
                    return Err(Error::DimensionMismatch {
                        expected: bounds.dim(),
                        got: theta.len(),
                    });
                }
                Ok(bounds.whiten(theta))
            }
            InputMap::Rho(projector) => Ok(projector.project(theta)?.values().to_vec()),
        }
    }
}

/// A kernel spec together with its input map.
#[derive(Debug, Clone)]
pub struct Kernel {
    spec: KernelSpec,
    map: InputMap,
}

impl Kernel {
    pub fn new(spec: KernelSpec, map: InputMap) -> Result<Self> {
        let rho_map = matches!(map, InputMap::Rho(_));
        if (spec.kind == KernelKind::RhoRbf) != rho_map {
            return Err(Error::Config(
                "the rho-rbf kernel needs a projection basis and the others must not have one".into(),
            ));
        }
        Ok(Self { spec, map })
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn map(&self) -> &InputMap {
        &self.map
    }

    pub fn with_spec(&self, spec: KernelSpec) -> Result<Self> {
        Self::new(spec, self.map.clone())
    }

    pub fn features(&self, theta: &[f64]) -> Result<Vec<f64>> {
        self.map.apply(theta)
    }

    /// `k(θ, θ')` through the input map.
    pub fn eval(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        kernel_eval(&self.spec, &self.features(a)?, &self.features(b)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn rbf_self_covariance_is_signal_variance() {
        let spec = KernelSpec::new(KernelKind::Rbf, 0.7, 2.5).unwrap();
        assert_eq!(kernel_eval(&spec, &[0.3, -1.0], &[0.3, -1.0]).unwrap(), 2.5);
    }

    #[test]
    fn rbf_at_distance_sqrt_two_is_exp_minus_one() {
        let spec = KernelSpec::new(KernelKind::Rbf, 1.0, 1.0).unwrap();
        assert_relative_eq!(kernel_eval(&spec, &[0.0, 0.0], &[1.0, 1.0]).unwrap(), 0.367879441171442, epsilon = 1e-12);
    }

    #[test]
    fn matern_reference_value() {
        // r = √5·1/2, (1 + r + r²/3) e^{−r}
        let spec = KernelSpec::new(KernelKind::Matern, 2.0, 1.0).unwrap();
        let r = 5f64.sqrt() / 2.0;
        assert_relative_eq!(
            kernel_eval(&spec, &[1.0], &[0.0]).unwrap(),
            (1.0 + r + r * r / 3.0) * (-r).exp(),
            epsilon = 1e-15
        );
        assert_eq!(kernel_eval(&spec, &[1.0], &[1.0]).unwrap(), 1.0);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let spec = KernelSpec::new(KernelKind::Rbf, 1.0, 1.0).unwrap();
        assert!(matches!(
            kernel_eval(&spec, &[0.0], &[0.0, 1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn non_positive_hyperparameters_are_rejected() {
        assert!(KernelSpec::new(KernelKind::Rbf, 0.0, 1.0).is_err());
        assert!(KernelSpec::new(KernelKind::Matern, 1.0, -1.0).is_err());
    }

    #[test]
    fn rho_kernel_requires_rho_map() {
        let spec = KernelSpec::new(KernelKind::RhoRbf, 1.0, 1.0).unwrap();
        assert!(Kernel::new(spec, InputMap::Identity).is_err());
        let rbf = KernelSpec::new(KernelKind::Rbf, 1.0, 1.0).unwrap();
        assert!(Kernel::new(rbf, InputMap::Identity).is_ok());
    }

    #[test]
    fn whitening_makes_lengthscale_scale_free() {
        let bounds = Bounds::from_pairs(&[(0.0, 100.0), (0.0, 1.0)]).unwrap();
        let spec = KernelSpec::new(KernelKind::Rbf, 0.5, 1.0).unwrap();
        let k = Kernel::new(spec, InputMap::Whiten(bounds)).unwrap();
        let a = k.eval(&[0.0, 0.5], &[50.0, 0.5]).unwrap();
        let b = k.eval(&[10.0, 0.0], &[10.0, 0.5]).unwrap();
        assert_relative_eq!(a, b, epsilon = 1e-15);
    }
}
