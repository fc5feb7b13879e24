//! Computational box, interface shapes with exact signed distance, and the
//! tanh phase field built on top of them.
//!
//! Points are passed as slices whose length equals the spatial dimension
//! (1 or 2). Only shapes with an exact signed distance are supported, so
//! `|grad r| = 1` away from the medial axis and the closed-form slope of the
//! phase field is exact.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minimum distance between the interface and the outer boundary, in units
/// of the layer width.
pub const CLEARANCE_FACTOR: f64 = 4.0;

/// Axis-aligned box `Omega` in one or two dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cuboid {
    lower: [f64; 2],
    upper: [f64; 2],
    dim: usize,
}

impl Cuboid {
    /// Builds a box from per-axis `(lower, upper)` bounds.
    pub fn new(bounds: &[(f64, f64)]) -> Result<Self> {
        if bounds.is_empty() || bounds.len() > 2 {
            return Err(Error::Invalid(format!(
                "cuboid must have 1 or 2 axes, got {}",
                bounds.len()
            )));
        }
        let mut lower = [0.0; 2];
        let mut upper = [0.0; 2];
        for (axis, &(lo, hi)) in bounds.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::Invalid(format!(
                    "cuboid axis {axis} needs lower < upper, got ({lo}, {hi})"
                )));
            }
            lower[axis] = lo;
            upper[axis] = hi;
        }
        Ok(Self {
            lower,
            upper,
            dim: bounds.len(),
        })
    }

    pub fn interval(lo: f64, hi: f64) -> Result<Self> {
        Self::new(&[(lo, hi)])
    }

    pub fn rectangle(x: (f64, f64), y: (f64, f64)) -> Result<Self> {
        Self::new(&[x, y])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lower(&self, axis: usize) -> f64 {
        self.lower[axis]
    }

    pub fn upper(&self, axis: usize) -> f64 {
        self.upper[axis]
    }

    pub fn length(&self, axis: usize) -> f64 {
        self.upper[axis] - self.lower[axis]
    }

    pub fn center(&self) -> [f64; 2] {
        let mut c = [0.0; 2];
        for axis in 0..self.dim {
            c[axis] = 0.5 * (self.lower[axis] + self.upper[axis]);
        }
        c
    }

    /// Lebesgue measure of the box.
    pub fn volume(&self) -> f64 {
        (0..self.dim).map(|a| self.length(a)).product()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        (0..self.dim).all(|a| x[a] >= self.lower[a] && x[a] <= self.upper[a])
    }
}

/// The inner region `Omega_1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InterfaceShape {
    Interval { lo: f64, hi: f64 },
    Disk { center: [f64; 2], radius: f64 },
}

impl InterfaceShape {
    pub fn dim(&self) -> usize {
        match self {
            InterfaceShape::Interval { .. } => 1,
            InterfaceShape::Disk { .. } => 2,
        }
    }

    /// Exact signed distance to the interface, positive inside.
    pub fn signed_distance(&self, x: &[f64]) -> f64 {
        match *self {
            InterfaceShape::Interval { lo, hi } => (x[0] - lo).min(hi - x[0]),
            InterfaceShape::Disk { center, radius } => {
                let dx = x[0] - center[0];
                let dy = x[1] - center[1];
                radius - dx.hypot(dy)
            }
        }
    }

    /// Size of the interface: point count in 1D, circumference in 2D.
    pub fn perimeter(&self) -> f64 {
        match *self {
            InterfaceShape::Interval { .. } => 2.0,
            InterfaceShape::Disk { radius, .. } => 2.0 * PI * radius,
        }
    }

    /// Measure of `Omega_1`.
    pub fn volume(&self) -> f64 {
        match *self {
            InterfaceShape::Interval { lo, hi } => hi - lo,
            InterfaceShape::Disk { radius, .. } => PI * radius * radius,
        }
    }

    /// Distance between the interface and the outer boundary of `cuboid`.
    /// Negative when the closure of the shape is not strictly inside.
    pub fn clearance(&self, cuboid: &Cuboid) -> f64 {
        match *self {
            InterfaceShape::Interval { lo, hi } => {
                (lo - cuboid.lower(0)).min(cuboid.upper(0) - hi)
            }
            InterfaceShape::Disk { center, radius } => {
                let mut gap = f64::INFINITY;
                for axis in 0..2 {
                    gap = gap
                        .min(center[axis] - radius - cuboid.lower(axis))
                        .min(cuboid.upper(axis) - center[axis] - radius);
                }
                gap
            }
        }
    }

    /// Checks that the shape is well formed and sits strictly inside `cuboid`.
    pub fn validate_in(&self, cuboid: &Cuboid) -> Result<()> {
        if self.dim() != cuboid.dim() {
            return Err(Error::Invalid(format!(
                "shape is {}D but the cuboid is {}D",
                self.dim(),
                cuboid.dim()
            )));
        }
        match *self {
            InterfaceShape::Interval { lo, hi } if !(lo < hi) => {
                return Err(Error::Invalid(format!(
                    "interval needs lo < hi, got ({lo}, {hi})"
                )))
            }
            InterfaceShape::Disk { radius, .. } if !(radius > 0.0) => {
                return Err(Error::Invalid(format!(
                    "disk radius must be positive, got {radius}"
                )))
            }
            _ => {}
        }
        if !(self.clearance(cuboid) > 0.0) {
            return Err(Error::Invalid(
                "interface must lie strictly inside the cuboid".into(),
            ));
        }
        Ok(())
    }

    /// Checks the layer-width clearance rule for `eps`.
    pub fn check_layer_clearance(&self, cuboid: &Cuboid, eps: f64) -> Result<()> {
        let clearance = self.clearance(cuboid);
        if clearance <= CLEARANCE_FACTOR * eps {
            return Err(Error::Invalid(format!(
                "clearance rule violated: interface is {clearance} from the boundary, \
                 needs more than {CLEARANCE_FACTOR} * eps = {}",
                CLEARANCE_FACTOR * eps
            )));
        }
        Ok(())
    }
}

/// Side of the interface a point falls on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    Inside,
    Outside,
    OnInterface,
}

impl Region {
    /// Interface points count as inside for volume quadrature.
    pub fn is_inner(self) -> bool {
        !matches!(self, Region::Outside)
    }
}

pub fn region_classify(r: f64) -> Region {
    if r > 0.0 {
        Region::Inside
    } else if r < 0.0 {
        Region::Outside
    } else {
        Region::OnInterface
    }
}

/// `phi_eps = (1 + tanh(r / eps)) / 2`.
pub fn phase_field(r: f64, eps: f64) -> f64 {
    0.5 * (1.0 + (r / eps).tanh())
}

/// `|grad phi_eps| = sech^2(r / eps) / (2 eps)` for an exact signed distance.
pub fn phase_field_slope(r: f64, eps: f64) -> f64 {
    let sech = 1.0 / (r / eps).cosh();
    0.5 * sech * sech / eps
}

/// Layer width of the phase field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseFieldParams {
    eps: f64,
}

impl PhaseFieldParams {
    pub fn new(eps: f64) -> Result<Self> {
        if !(eps > 0.0 && eps < 1.0) {
            return Err(Error::Invalid(format!("eps must lie in (0, 1), got {eps}")));
        }
        Ok(Self { eps })
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn value(&self, r: f64) -> f64 {
        phase_field(r, self.eps)
    }

    pub fn slope(&self, r: f64) -> f64 {
        phase_field_slope(r, self.eps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const UNIT_DISK: InterfaceShape = InterfaceShape::Disk {
        center: [0.0, 0.0],
        radius: 0.5,
    };

    #[test]
    fn interval_distances() {
        let s = InterfaceShape::Interval { lo: -0.5, hi: 0.5 };
        assert_eq!(s.signed_distance(&[0.0]), 0.5);
        assert_eq!(s.signed_distance(&[0.75]), -0.25);
        assert_eq!(s.signed_distance(&[-0.5]), 0.0);
    }

    #[test]
    fn disk_distance_on_circle() {
        assert!(UNIT_DISK.signed_distance(&[0.3, 0.4]).abs() < 1e-15);
        assert_eq!(UNIT_DISK.signed_distance(&[0.0, 0.0]), 0.5);
    }

    #[test]
    fn phase_field_reference_values() {
        assert_eq!(phase_field(0.0, 0.3), 0.5);
        // 0.5 * (1 + tanh 1)
        assert!((phase_field(0.1, 0.1) - 0.880_797_077_977_882_4).abs() < 1e-15);
    }

    #[test]
    fn slope_reference_values() {
        let eps = 0.05;
        assert!((phase_field_slope(0.0, eps) - 1.0 / (2.0 * eps)).abs() < 1e-12);
        // sech^2(10) / 2 = 4.1223072e-9
        for r in [10.0 * eps, -10.0 * eps] {
            let s = phase_field_slope(r, eps);
            assert!(s <= 1.7e-8 / eps, "{s}");
            assert!((s * eps - 4.122_307_227_883_699e-9).abs() < 1e-20);
        }
        let (r, eps) = (0.3, 0.1);
        let phi = phase_field(r, eps);
        assert!((phase_field_slope(r, eps) - 2.0 / eps * phi * (1.0 - phi)).abs() < 1e-13 / eps);
    }

    #[test]
    fn classification() {
        assert_eq!(region_classify(0.5), Region::Inside);
        assert_eq!(region_classify(-0.25), Region::Outside);
        assert_eq!(region_classify(0.0), Region::OnInterface);
        assert!(Region::OnInterface.is_inner());
    }

    #[test]
    fn clearance_rules() {
        let omega = Cuboid::interval(-1.0, 1.0).unwrap();
        let s = InterfaceShape::Interval { lo: -0.5, hi: 0.5 };
        assert_eq!(s.clearance(&omega), 0.5);
        assert!(s.validate_in(&omega).is_ok());
        assert!(s.check_layer_clearance(&omega, 0.1).is_ok());
        assert!(s.check_layer_clearance(&omega, 0.2).is_err());
        let wide = InterfaceShape::Interval { lo: -1.0, hi: 0.5 };
        assert!(wide.validate_in(&omega).is_err());
        let sq = Cuboid::rectangle((-1.0, 1.0), (-1.0, 1.0)).unwrap();
        assert!(s.validate_in(&sq).is_err());
        assert!((UNIT_DISK.clearance(&sq) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn bad_inputs() {
        assert!(Cuboid::interval(1.0, 1.0).is_err());
        assert!(Cuboid::new(&[]).is_err());
        assert!(PhaseFieldParams::new(0.0).is_err());
        assert!(PhaseFieldParams::new(1.0).is_err());
        assert!(PhaseFieldParams::new(0.5).is_ok());
    }

    proptest! {
        #[test]
        fn phase_field_bounds_and_symmetry(t in -15.0f64..15.0, eps in 1e-3f64..0.9) {
            let r = t * eps;
            let p = phase_field(r, eps);
            prop_assert!(p > 0.0 && p < 1.0);
            prop_assert!((p + phase_field(-r, eps) - 1.0).abs() <= 1e-14);
        }

        #[test]
        fn slope_matches_logistic_identity(r in -2.0f64..2.0, eps in 1e-3f64..0.9) {
            let p = phase_field(r, eps);
            let lhs = phase_field_slope(r, eps);
            prop_assert!(lhs >= 0.0);
            prop_assert!(lhs <= phase_field_slope(0.0, eps));
            prop_assert!((lhs - 2.0 / eps * p * (1.0 - p)).abs() <= 1e-13 / eps);
        }

        #[test]
        fn phase_field_monotone(a in -1.0f64..1.0, d in 1e-6f64..0.5, eps in 0.05f64..0.9) {
            let (lo, hi) = (phase_field(a, eps), phase_field(a + d, eps));
            // tanh saturates in double precision far from the interface
            if a.abs().max((a + d).abs()) < 8.0 * eps {
                prop_assert!(lo < hi);
            } else {
                prop_assert!(lo <= hi);
            }
        }

        #[test]
        fn disk_distance_gradient_is_unit(x in -1.0f64..1.0, y in -1.0f64..1.0) {
            let rho = x.hypot(y);
            prop_assume!((rho - 0.5).abs() > 1e-3 && rho > 1e-2);
            let h = 1e-6;
            let gx = (UNIT_DISK.signed_distance(&[x + h, y]) - UNIT_DISK.signed_distance(&[x - h, y])) / (2.0 * h);
            let gy = (UNIT_DISK.signed_distance(&[x, y + h]) - UNIT_DISK.signed_distance(&[x, y - h])) / (2.0 * h);
            prop_assert!((gx.hypot(gy) - 1.0).abs() <= 1e-6);
        }
    }
}
