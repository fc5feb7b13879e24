//! Problem data and the coefficient blends built from it.
//!
//! Sharp coefficients switch between `(1, gamma, q)` on `Omega_1` and
//! `(alpha, beta, h)` on `Omega_2` using the exact signed distance. Diffuse
//! coefficients blend the same pairs with the phase field.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{Expression, Var};
use crate::geometry::{phase_field, phase_field_slope, region_classify, Cuboid, InterfaceShape};

/// Full data of a two-sided transmission problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub cuboid: Cuboid,
    pub shape: InterfaceShape,
    /// Outer diffusivity.
    pub alpha: f64,
    /// Outer reaction coefficient.
    pub beta: f64,
    /// Inner reaction coefficient.
    pub gamma: f64,
    /// Robin coefficient on the interface.
    pub kappa: f64,
    /// Inner source.
    pub q: Expression,
    /// Outer source.
    pub h: Expression,
    /// Interface flux datum.
    pub g: Expression,
}

/// Coefficients of the diffuse problem at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiffuseCoefficients {
    pub diffusivity: f64,
    pub reaction: f64,
    pub source: f64,
    /// `|grad phi_eps|`, the smeared interface measure.
    pub surface: f64,
}

/// Coefficients of the sharp problem at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SharpCoefficients {
    pub diffusivity: f64,
    pub reaction: f64,
    pub source: f64,
}

impl ProblemSpec {
    /// Checks every invariant that does not depend on the layer width.
    pub fn validate(&self) -> Result<()> {
        self.shape.validate_in(&self.cuboid)?;
        for (name, value) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(Error::Invalid(format!("{name} must be positive, got {value}")));
            }
        }
        if !(self.kappa >= 0.0 && self.kappa.is_finite()) {
            return Err(Error::Invalid(format!(
                "kappa must be nonnegative, got {}",
                self.kappa
            )));
        }
        if self.kappa > 0.0 && self.cuboid.dim() != 1 {
            return Err(Error::Invalid("Robin case supported in 1D only".into()));
        }
        if self.cuboid.dim() == 1 {
            for (name, e) in [("q", &self.q), ("h", &self.h), ("g", &self.g)] {
                if e.uses_var(Var::Y) {
                    return Err(Error::Invalid(format!("{name} uses y in a 1D problem")));
                }
            }
        }
        Ok(())
    }

    /// Checks the layer-width dependent rules for `eps`.
    pub fn validate_eps(&self, eps: f64) -> Result<()> {
        if !(eps > 0.0 && eps < 1.0) {
            return Err(Error::Invalid(format!("eps must lie in (0, 1), got {eps}")));
        }
        self.shape.check_layer_clearance(&self.cuboid, eps)
    }

    pub fn dim(&self) -> usize {
        self.cuboid.dim()
    }

    pub fn signed_distance(&self, x: &[f64]) -> f64 {
        self.shape.signed_distance(x)
    }

    /// True when `q`, `h` and `g` are all constants.
    pub fn has_constant_data(&self) -> bool {
        self.q.constant_value().is_some()
            && self.h.constant_value().is_some()
            && self.g.constant_value().is_some()
    }

    /// Diffusivity blend only; used at stencil faces where the sources are
    /// not needed.
    pub fn diffusivity_diffuse(&self, x: &[f64], eps: f64) -> f64 {
        let phi = phase_field(self.signed_distance(x), eps);
        self.alpha + (1.0 - self.alpha) * phi
    }

    pub fn diffusivity_sharp(&self, x: &[f64]) -> f64 {
        if region_classify(self.signed_distance(x)).is_inner() {
            1.0
        } else {
            self.alpha
        }
    }
}

pub fn coeff_diffuse(spec: &ProblemSpec, x: &[f64], eps: f64) -> Result<DiffuseCoefficients> {
    let r = spec.signed_distance(x);
    let phi = phase_field(r, eps);
    let q = spec.q.evaluate(x)?;
    let h = spec.h.evaluate(x)?;
    Ok(DiffuseCoefficients {
        diffusivity: spec.alpha + (1.0 - spec.alpha) * phi,
        reaction: spec.beta + (spec.gamma - spec.beta) * phi,
        source: h + (q - h) * phi,
        surface: phase_field_slope(r, eps),
    })
}

pub fn coeff_sharp(spec: &ProblemSpec, x: &[f64]) -> Result<SharpCoefficients> {
    if region_classify(spec.signed_distance(x)).is_inner() {
        Ok(SharpCoefficients {
            diffusivity: 1.0,
            reaction: spec.gamma,
            source: spec.q.evaluate(x)?,
        })
    } else {
        Ok(SharpCoefficients {
            diffusivity: spec.alpha,
            reaction: spec.beta,
            source: spec.h.evaluate(x)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spec_1d(alpha: f64) -> ProblemSpec {
        ProblemSpec {
            cuboid: Cuboid::interval(-1.0, 1.0).unwrap(),
            shape: InterfaceShape::Interval { lo: -0.5, hi: 0.5 },
            alpha,
            beta: 1.0,
            gamma: 3.0,
            kappa: 0.0,
            q: Expression::parse("1 + x").unwrap(),
            h: Expression::parse("x^2").unwrap(),
            g: Expression::constant(0.1),
        }
    }

    #[test]
    fn interface_values_are_averages() {
        let spec = spec_1d(2.0);
        let c = coeff_diffuse(&spec, &[0.5], 0.1).unwrap();
        assert_eq!(c.diffusivity, 1.5);
        assert_eq!(c.reaction, 2.0);
        assert_eq!(c.source, 0.5 * (1.5 + 0.25));
        assert_eq!(c.surface, 5.0);
    }

    #[test]
    fn tails_match_sharp_values() {
        let spec = spec_1d(2.0);
        let eps = 0.02;
        let tol = 2.0 * (1.0_f64 - 2.0).abs() * 1e-8;
        // r = +10 eps and r = -10 eps
        let inner = coeff_diffuse(&spec, &[0.5 - 10.0 * eps], eps).unwrap();
        let outer = coeff_diffuse(&spec, &[0.5 + 10.0 * eps], eps).unwrap();
        assert!((inner.diffusivity - 1.0).abs() <= tol);
        assert!((outer.diffusivity - 2.0).abs() <= tol);
    }

    #[test]
    fn sharp_values() {
        let spec = spec_1d(2.0);
        let inside = coeff_sharp(&spec, &[0.0]).unwrap();
        assert_eq!((inside.diffusivity, inside.reaction, inside.source), (1.0, 3.0, 1.0));
        let outside = coeff_sharp(&spec, &[0.9]).unwrap();
        assert_eq!(outside.diffusivity, 2.0);
        assert_eq!(outside.reaction, 1.0);
        assert!((outside.source - 0.81).abs() < 1e-15);
        let on = coeff_sharp(&spec, &[0.5]).unwrap();
        assert_eq!(on.diffusivity, 1.0);
    }

    #[test]
    fn diffuse_tends_to_sharp_off_interface() {
        let spec = spec_1d(2.0);
        for x in [-0.9, -0.3, 0.2, 0.7] {
            let sharp = coeff_sharp(&spec, &[x]).unwrap();
            let diffuse = coeff_diffuse(&spec, &[x], 1e-3).unwrap();
            assert!((sharp.diffusivity - diffuse.diffusivity).abs() < 1e-12);
            assert!((sharp.reaction - diffuse.reaction).abs() < 1e-12);
            assert!((sharp.source - diffuse.source).abs() < 1e-12);
        }
    }

    #[test]
    fn validation_messages() {
        let mut spec = spec_1d(2.0);
        assert!(spec.validate().is_ok());
        spec.alpha = -1.0;
        assert_eq!(spec.validate().unwrap_err().to_string(), "alpha must be positive, got -1");
        spec.alpha = 2.0;
        spec.kappa = 1.0;
        assert!(spec.validate().is_ok());
        let disk = ProblemSpec {
            cuboid: Cuboid::rectangle((-1.0, 1.0), (-1.0, 1.0)).unwrap(),
            shape: InterfaceShape::Disk { center: [0.0, 0.0], radius: 0.3 },
            ..spec.clone()
        };
        assert_eq!(disk.validate().unwrap_err().to_string(), "Robin case supported in 1D only");
        spec.kappa = 0.0;
        spec.q = Expression::parse("y").unwrap();
        assert!(spec.validate().is_err());
        assert!(spec_1d(2.0).validate_eps(0.2).is_err());
        assert!(spec_1d(2.0).validate_eps(0.1).is_ok());
    }

    proptest! {
        #[test]
        fn blends_stay_in_bounds(x in -1.0f64..1.0, eps in 1e-3f64..0.5, alpha in 0.1f64..10.0) {
            let spec = spec_1d(alpha);
            let c = coeff_diffuse(&spec, &[x], eps).unwrap();
            prop_assert!(c.diffusivity >= alpha.min(1.0) && c.diffusivity <= alpha.max(1.0));
            prop_assert!(c.reaction >= 1.0 && c.reaction <= 3.0);
            prop_assert!(c.surface >= 0.0);
            let q = 1.0 + x;
            let h = x * x;
            let phi = phase_field(spec.signed_distance(&[x]), eps);
            prop_assert!((c.source - (h + (q - h) * phi)).abs() < 1e-15);
        }
    }
}
