//! Discrete diffuse-domain problem on a uniform grid.
//!
//! The operator is the weak form
//!
//! ```text
//! int D_eps grad u . grad v + (c_eps + kappa |grad phi_eps|) u v
//!     = int (f_eps - g |grad phi_eps|) v
//! ```
//!
//! with `D_eps` sampled at edge midpoints and a trapezoid-lumped mass. The
//! homogeneous Neumann condition on the outer box is natural: no flux term is
//! ever added on boundary edges.

use crate::energy::{energy_diffuse, EnergyBreakdown};
use crate::error::{Error, Result};
use crate::fields::{coeff_diffuse, ProblemSpec};
use crate::grid::{Grid, GridField};
use crate::linalg::{cg_solve, thomas_solve, thomas_solve_excess, CgOptions, SolveReport, SparseMatrix, TripletBuilder};

/// Smallest admissible ratio of layer width to grid spacing.
pub const MIN_LAYER_RESOLUTION: f64 = 2.0;

/// Assembled matrix and right-hand side.
#[derive(Debug, Clone)]
pub struct SparseSystem {
    pub matrix: SparseMatrix,
    pub rhs: Vec<f64>,
    /// Zeroth-order part of the diagonal, kept apart from the edge couplings
    /// so the 1D direct solve never has to recover it by cancellation.
    pub excess: Option<Vec<f64>>,
}

impl SparseSystem {
    /// `||A x - b|| / ||b||`.
    pub fn relative_residual(&self, x: &[f64]) -> f64 {
        let ax = self.matrix.mul_vec(x);
        let r: Vec<f64> = ax.iter().zip(&self.rhs).map(|(a, b)| a - b).collect();
        let b = crate::linalg::norm2(&self.rhs);
        let r = crate::linalg::norm2(&r);
        if b == 0.0 {
            r
        } else {
            r / b
        }
    }

    /// `x^T A x / 2 - b^T x`.
    pub fn quadratic_energy(&self, x: &[f64]) -> f64 {
        0.5 * self.matrix.quadratic_form(x) - crate::linalg::dot(&self.rhs, x)
    }
}

#[derive(Debug, Clone)]
pub struct DiffuseSolution {
    pub grid: Grid,
    pub eps: f64,
    pub u: GridField,
    pub report: SolveReport,
    pub energy: EnergyBreakdown,
}

pub(crate) fn check_setup(spec: &ProblemSpec, grid: &Grid, eps: f64) -> Result<()> {
    spec.validate()?;
    spec.validate_eps(eps)?;
    if grid.cuboid() != &spec.cuboid {
        return Err(Error::Invalid("grid does not cover the problem cuboid".into()));
    }
    let ratio = eps / grid.max_spacing();
    if ratio < MIN_LAYER_RESOLUTION * (1.0 - 1e-9) {
        return Err(Error::UnresolvedLayer { ratio });
    }
    Ok(())
}

pub fn assemble(spec: &ProblemSpec, grid: &Grid, eps: f64) -> Result<SparseSystem> {
    check_setup(spec, grid, eps)?;
    let dim = grid.dim();
    let n = grid.node_count();
    let mut builder = TripletBuilder::with_capacity(n, n * (1 + 4 * dim));
    let mut rhs = vec![0.0; n];
    let mut excess = vec![0.0; n];
    for (k, (rhs_k, excess_k)) in rhs.iter_mut().zip(excess.iter_mut()).enumerate() {
        let x = grid.coords(k);
        let x = &x[..dim];
        let c = coeff_diffuse(spec, x, eps)?;
        let g = spec.g.evaluate(x)?;
        let w = grid.weight(k);
        *excess_k = w * (c.reaction + spec.kappa * c.surface);
        builder.add(k, k, *excess_k);
        *rhs_k = w * (c.source - g * c.surface);
    }
    for edge in grid.edges() {
        let d = spec.diffusivity_diffuse(&edge.midpoint[..dim], eps);
        let a = edge.coupling * d;
        builder.add(edge.from, edge.from, a);
        builder.add(edge.to, edge.to, a);
        builder.add(edge.from, edge.to, -a);
        builder.add(edge.to, edge.from, -a);
    }
    Ok(SparseSystem {
        matrix: builder.build(),
        rhs,
        excess: Some(excess),
    })
}

/// Solves an assembled system: tridiagonal elimination in 1D, Jacobi-CG otherwise.
///
/// The direct path always counts as converged. Its residual is still
/// reported; on fine 1D grids it sits at the roundoff floor
/// `machine eps * ||A|| ||x|| / ||b||`, which grows like `h^-2`.
pub fn solve_system(system: &SparseSystem, opts: &CgOptions) -> Result<(Vec<f64>, SolveReport)> {
    if let Some(tri) = system.matrix.to_tridiagonal() {
        let x = match &system.excess {
            Some(excess) => thomas_solve_excess(&tri, excess, &system.rhs)?,
            None => thomas_solve(&tri, &system.rhs)?,
        };
        let report = SolveReport {
            iterations: 0,
            relative_residual: system.relative_residual(&x),
            converged: true,
        };
        return Ok((x, report));
    }
    cg_solve(&system.matrix, &system.rhs, opts)
}

pub fn solve_diffuse(
    spec: &ProblemSpec,
    grid: &Grid,
    eps: f64,
    opts: &CgOptions,
) -> Result<DiffuseSolution> {
    let system = assemble(spec, grid, eps)?;
    let (values, report, converged) = match solve_system(&system, opts) {
        Ok((x, report)) => (x, report, true),
        Err(Error::NotConverged { solution, report }) => (solution, report, false),
        Err(e) => return Err(e),
    };
    let u = GridField::new(*grid, values)?;
    let energy = energy_diffuse(spec, grid, eps, &u)?;
    let solution = DiffuseSolution {
        grid: *grid,
        eps,
        u,
        report,
        energy,
    };
    if converged {
        Ok(solution)
    } else {
        Err(Error::DiffuseNotConverged(Box::new(solution)))
    }
}
