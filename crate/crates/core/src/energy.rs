//! Diffuse and sharp energies and solution error norms.
//!
//! The gradient term is a sum over grid edges with the diffusivity sampled at
//! edge midpoints, and volume terms use the trapezoid rule. This is the same
//! quadrature the diffuse assembly uses, so `energy_diffuse(v)` equals
//! `v^T A v / 2 - b^T v` for the assembled system up to roundoff.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::fields::{coeff_diffuse, coeff_sharp, ProblemSpec};
use crate::geometry::InterfaceShape;
use crate::grid::{norm, sample, Grid, GridField, NormKind};
use crate::sharp::SharpSolution;

/// Segments used for line integrals along a circular interface.
pub const CIRCLE_SEGMENTS: usize = 4096;

/// Energy split by term; `total` is their sum.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    /// `int D |grad u|^2 / 2`.
    pub gradient: f64,
    /// `int c u^2 / 2`.
    pub zeroth_order: f64,
    /// `-int f u`.
    pub load: f64,
    /// Interface term `(kappa u^2 / 2 + g u)`, either smeared or on the sharp interface.
    pub surface: f64,
    pub total: f64,
}

impl EnergyBreakdown {
    pub fn from_parts(gradient: f64, zeroth_order: f64, load: f64, surface: f64) -> Self {
        Self {
            gradient,
            zeroth_order,
            load,
            surface,
            total: gradient + zeroth_order + load + surface,
        }
    }
}

fn gradient_term<F: Fn(&[f64]) -> f64>(grid: &Grid, u: &[f64], diffusivity: F) -> f64 {
    let dim = grid.dim();
    grid.edges()
        .iter()
        .map(|e| {
            let du = u[e.to] - u[e.from];
            0.5 * e.coupling * diffusivity(&e.midpoint[..dim]) * du * du
        })
        .sum()
}

pub fn energy_diffuse(
    spec: &ProblemSpec,
    grid: &Grid,
    eps: f64,
    u: &GridField,
) -> Result<EnergyBreakdown> {
    let dim = grid.dim();
    let v = u.values();
    let gradient = gradient_term(grid, v, |x| spec.diffusivity_diffuse(x, eps));
    let mut zeroth = 0.0;
    let mut load = 0.0;
    let mut surface = 0.0;
    for (k, &uk) in v.iter().enumerate() {
        let x = grid.coords(k);
        let x = &x[..dim];
        let c = coeff_diffuse(spec, x, eps)?;
        let g = spec.g.evaluate(x)?;
        let w = grid.weight(k);
        zeroth += w * 0.5 * c.reaction * uk * uk;
        load -= w * c.source * uk;
        surface += w * (0.5 * spec.kappa * uk * uk + g * uk) * c.surface;
    }
    Ok(EnergyBreakdown::from_parts(gradient, zeroth, load, surface))
}

/// Sharp energy of a grid function: region-classified coefficients in the
/// volume, and the interface term on the exact interface with `u`
/// interpolated from the grid.
pub fn energy_sharp(spec: &ProblemSpec, u: &GridField) -> Result<EnergyBreakdown> {
    let grid = u.grid();
    let dim = grid.dim();
    let v = u.values();
    let gradient = gradient_term(grid, v, |x| spec.diffusivity_sharp(x));
    let mut zeroth = 0.0;
    let mut load = 0.0;
    for (k, &uk) in v.iter().enumerate() {
        let x = grid.coords(k);
        let c = coeff_sharp(spec, &x[..dim])?;
        let w = grid.weight(k);
        zeroth += w * 0.5 * c.reaction * uk * uk;
        load -= w * c.source * uk;
    }
    let surface = interface_integral(spec, |x| u.at(x))?;
    Ok(EnergyBreakdown::from_parts(gradient, zeroth, load, surface))
}

/// `int_{interface} (kappa u^2 / 2 + g u) dS` for a pointwise-evaluable `u`.
pub fn interface_integral<U: Fn(&[f64]) -> f64>(spec: &ProblemSpec, u: U) -> Result<f64> {
    surface_integral(&spec.shape, |x| {
        let ux = u(x);
        Ok(0.5 * spec.kappa * ux * ux + spec.g.evaluate(x)? * ux)
    })
}

/// `int_{interface} f dS`: a point sum in 1D, a uniform polygon rule on a circle.
pub fn surface_integral<F: Fn(&[f64]) -> Result<f64>>(shape: &InterfaceShape, f: F) -> Result<f64> {
    match *shape {
        InterfaceShape::Interval { lo, hi } => Ok(f(&[lo])? + f(&[hi])?),
        InterfaceShape::Disk { center, radius } => {
            let ds = 2.0 * PI * radius / CIRCLE_SEGMENTS as f64;
            let mut sum = 0.0;
            for k in 0..CIRCLE_SEGMENTS {
                let theta = 2.0 * PI * k as f64 / CIRCLE_SEGMENTS as f64;
                let p = [center[0] + radius * theta.cos(), center[1] + radius * theta.sin()];
                sum += f(&p)?;
            }
            Ok(sum * ds)
        }
    }
}

/// Sharp energy of a reference solution, computed in the solution's own
/// representation.
pub fn energy_sharp_solution(solution: &SharpSolution) -> EnergyBreakdown {
    solution.energy()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorNorms {
    pub l2: f64,
    pub h1: f64,
}

/// Norms of `u - reference` with the reference sampled at the nodes of `u`.
pub fn error_norms(u: &GridField, reference: &SharpSolution) -> Result<ErrorNorms> {
    let sampled = sample(u.grid(), |x| Ok(reference.evaluate(x)))?;
    let diff = u.difference(&sampled)?;
    Ok(ErrorNorms {
        l2: norm(&diff, NormKind::L2),
        h1: norm(&diff, NormKind::H1),
    })
}
