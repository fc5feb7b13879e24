//! Uniform node-centred grids over the cuboid, trapezoidal quadrature and the
//! discrete norms used by every error and energy metric.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{phase_field, phase_field_slope, Cuboid, InterfaceShape};

/// Smallest admissible number of cells per axis.
pub const MIN_CELLS: usize = 8;

/// Uniform Cartesian grid; nodes are stored with the x index fastest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    cuboid: Cuboid,
    cells: [usize; 2],
    spacing: [f64; 2],
}

/// A grid edge between two neighbouring nodes.
#[derive(Debug, Clone, Copy)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub midpoint: [f64; 2],
    /// Transverse trapezoid weight divided by the edge length; a difference
    /// `du` across the edge contributes `coupling * du^2` to `int |grad u|^2`.
    pub coupling: f64,
}

impl Grid {
    pub fn new(cuboid: Cuboid, cells: &[usize]) -> Result<Self> {
        if cells.len() != cuboid.dim() {
            return Err(Error::DimensionMismatch {
                expected: cuboid.dim(),
                found: cells.len(),
            });
        }
        let mut n = [1usize; 2];
        let mut spacing = [1.0; 2];
        for (axis, &c) in cells.iter().enumerate() {
            if c < MIN_CELLS {
                return Err(Error::Invalid(format!(
                    "grid needs at least {MIN_CELLS} cells per axis, got {c}"
                )));
            }
            n[axis] = c;
            spacing[axis] = cuboid.length(axis) / c as f64;
        }
        Ok(Self {
            cuboid,
            cells: n,
            spacing,
        })
    }

    /// Same cell count on every axis.
    pub fn uniform(cuboid: Cuboid, cells: usize) -> Result<Self> {
        Self::new(cuboid, &vec![cells; cuboid.dim()])
    }

    /// Finest grid whose spacing does not exceed `h` on any axis.
    pub fn with_max_spacing(cuboid: Cuboid, h: f64) -> Result<Self> {
        let cells: Vec<usize> = (0..cuboid.dim())
            .map(|a| ((cuboid.length(a) / h) * (1.0 - 1e-12)).ceil().max(MIN_CELLS as f64) as usize)
            .collect();
        Self::new(cuboid, &cells)
    }

    pub fn cuboid(&self) -> &Cuboid {
        &self.cuboid
    }

    pub fn dim(&self) -> usize {
        self.cuboid.dim()
    }

    pub fn cells(&self, axis: usize) -> usize {
        self.cells[axis]
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.spacing[axis]
    }

    /// Largest spacing over all axes.
    pub fn max_spacing(&self) -> f64 {
        (0..self.dim()).map(|a| self.spacing[a]).fold(0.0, f64::max)
    }

    fn nodes_on(&self, axis: usize) -> usize {
        if axis < self.dim() {
            self.cells[axis] + 1
        } else {
            1
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes_on(0) * self.nodes_on(1)
    }

    /// Nodes needed for a grid with `cells` per axis in `dim` dimensions.
    pub fn node_count_for(dim: usize, cells: usize) -> usize {
        (cells + 1).pow(dim as u32)
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        i + self.nodes_on(0) * j
    }

    pub fn coords(&self, index: usize) -> [f64; 2] {
        let nx = self.nodes_on(0);
        let (i, j) = (index % nx, index / nx);
        let mut p = [0.0; 2];
        p[0] = self.coordinate(0, i);
        if self.dim() > 1 {
            p[1] = self.coordinate(1, j);
        }
        p
    }

    fn coordinate(&self, axis: usize, i: usize) -> f64 {
        if i == self.cells[axis] {
            self.cuboid.upper(axis)
        } else {
            self.cuboid.lower(axis) + i as f64 * self.spacing[axis]
        }
    }

    fn axis_weight(&self, axis: usize, i: usize) -> f64 {
        if axis >= self.dim() {
            1.0
        } else if i == 0 || i == self.cells[axis] {
            0.5 * self.spacing[axis]
        } else {
            self.spacing[axis]
        }
    }

    /// Tensor-product trapezoid weight of a node.
    pub fn weight(&self, index: usize) -> f64 {
        let nx = self.nodes_on(0);
        self.axis_weight(0, index % nx) * self.axis_weight(1, index / nx)
    }

    pub fn weights(&self) -> Vec<f64> {
        (0..self.node_count()).map(|k| self.weight(k)).collect()
    }

    /// All edges, x-directed first, in a fixed order.
    pub fn edges(&self) -> Vec<Edge> {
        let nx = self.nodes_on(0);
        let ny = self.nodes_on(1);
        let mut edges = Vec::with_capacity(self.dim() * self.node_count());
        for axis in 0..self.dim() {
            let (stride, h) = if axis == 0 { (1, self.spacing[0]) } else { (nx, self.spacing[1]) };
            for j in 0..ny {
                for i in 0..nx {
                    if (axis == 0 && i + 1 == nx) || (axis == 1 && j + 1 == ny) {
                        continue;
                    }
                    let from = self.index(i, j);
                    let a = self.coords(from);
                    let b = self.coords(from + stride);
                    let transverse = if axis == 0 {
                        self.axis_weight(1, j)
                    } else {
                        self.axis_weight(0, i)
                    };
                    edges.push(Edge {
                        from,
                        to: from + stride,
                        midpoint: [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])],
                        coupling: transverse / h,
                    });
                }
            }
        }
        edges
    }

    /// Multilinear interpolation of nodal values at `x` (clamped to the box).
    pub fn interpolate(&self, values: &[f64], x: &[f64]) -> f64 {
        let locate = |axis: usize| -> (usize, f64) {
            if axis >= self.dim() {
                return (0, 0.0);
            }
            let s = ((x[axis] - self.cuboid.lower(axis)) / self.spacing[axis])
                .clamp(0.0, self.cells[axis] as f64);
            let i = (s.floor() as usize).min(self.cells[axis] - 1);
            (i, s - i as f64)
        };
        let (i, tx) = locate(0);
        if self.dim() == 1 {
            return (1.0 - tx) * values[i] + tx * values[i + 1];
        }
        let (j, ty) = locate(1);
        let v00 = values[self.index(i, j)];
        let v10 = values[self.index(i + 1, j)];
        let v01 = values[self.index(i, j + 1)];
        let v11 = values[self.index(i + 1, j + 1)];
        (1.0 - ty) * ((1.0 - tx) * v00 + tx * v10) + ty * ((1.0 - tx) * v01 + tx * v11)
    }
}

/// One value per grid node.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    grid: Grid,
    values: Vec<f64>,
}

impl GridField {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.node_count() {
            return Err(Error::DimensionMismatch {
                expected: grid.node_count(),
                found: values.len(),
            });
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Eval(format!("non-finite value at node {k}")));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: Grid) -> Self {
        Self {
            values: vec![0.0; grid.node_count()],
            grid,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn at(&self, x: &[f64]) -> f64 {
        self.grid.interpolate(&self.values, x)
    }

    /// Pointwise difference `self - other` on the same grid.
    pub fn difference(&self, other: &GridField) -> Result<GridField> {
        if self.grid != other.grid {
            return Err(Error::Invalid("fields live on different grids".into()));
        }
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect();
        Ok(GridField {
            grid: self.grid,
            values,
        })
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Nodal gradient: central differences inside, second-order one-sided
    /// differences on the boundary.
    pub fn gradient(&self) -> Vec<[f64; 2]> {
        let g = &self.grid;
        let nx = g.cells(0) + 1;
        let ny = if g.dim() > 1 { g.cells(1) + 1 } else { 1 };
        let mut grad = vec![[0.0; 2]; g.node_count()];
        let d = |v: &[f64], n: usize, stride: usize, k: usize, pos: usize, h: f64| -> f64 {
            if pos == 0 {
                (-3.0 * v[k] + 4.0 * v[k + stride] - v[k + 2 * stride]) / (2.0 * h)
            } else if pos + 1 == n {
                (3.0 * v[k] - 4.0 * v[k - stride] + v[k - 2 * stride]) / (2.0 * h)
            } else {
                (v[k + stride] - v[k - stride]) / (2.0 * h)
            }
        };
        for j in 0..ny {
            for i in 0..nx {
                let k = g.index(i, j);
                grad[k][0] = d(&self.values, nx, 1, k, i, g.spacing(0));
                if g.dim() > 1 {
                    grad[k][1] = d(&self.values, ny, nx, k, j, g.spacing(1));
                }
            }
        }
        grad
    }
}

/// Nodal samples of `f`.
pub fn sample<F>(grid: &Grid, f: F) -> Result<GridField>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    let dim = grid.dim();
    let values = (0..grid.node_count())
        .map(|k| f(&grid.coords(k)[..dim]))
        .collect::<Result<Vec<_>>>()?;
    GridField::new(*grid, values)
}

/// Trapezoidal rule over the whole grid.
pub fn integrate(field: &GridField) -> f64 {
    weighted_sum(&field.grid, |k| field.values[k])
}

pub(crate) fn weighted_sum<F: Fn(usize) -> f64>(grid: &Grid, f: F) -> f64 {
    (0..grid.node_count()).map(|k| grid.weight(k) * f(k)).sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NormKind {
    L2,
    H1,
    /// `(int phi_eps (|grad w|^2 + w^2))^(1/2)`.
    PhiEps { shape: InterfaceShape, eps: f64 },
    /// `(int w^2 |grad phi_eps|)^(1/2)`.
    DeltaEps { shape: InterfaceShape, eps: f64 },
}

pub fn norm(field: &GridField, kind: NormKind) -> f64 {
    let grid = &field.grid;
    let dim = grid.dim();
    let v = &field.values;
    let squared = match kind {
        NormKind::L2 => weighted_sum(grid, |k| v[k] * v[k]),
        NormKind::H1 => {
            let grad = field.gradient();
            weighted_sum(grid, |k| grad[k][0].powi(2) + grad[k][1].powi(2) + v[k] * v[k])
        }
        NormKind::PhiEps { shape, eps } => {
            let grad = field.gradient();
            weighted_sum(grid, |k| {
                let phi = phase_field(shape.signed_distance(&grid.coords(k)[..dim]), eps);
                phi * (grad[k][0].powi(2) + grad[k][1].powi(2) + v[k] * v[k])
            })
        }
        NormKind::DeltaEps { shape, eps } => weighted_sum(grid, |k| {
            let s = phase_field_slope(shape.signed_distance(&grid.coords(k)[..dim]), eps);
            v[k] * v[k] * s
        }),
    };
    squared.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::Expression;
    use proptest::prelude::*;

    fn unit() -> Cuboid {
        Cuboid::interval(0.0, 1.0).unwrap()
    }

    fn expr_field(grid: &Grid, text: &str) -> GridField {
        let e = Expression::parse(text).unwrap();
        sample(grid, |p| e.evaluate(p)).unwrap()
    }

    #[test]
    fn grid_shape() {
        assert!(Grid::uniform(unit(), 4).is_err());
        let g = Grid::uniform(unit(), 8).unwrap();
        assert_eq!(g.node_count(), 9);
        assert_eq!(g.coords(8)[0], 1.0);
        assert_eq!(g.coords(2)[0], 0.25);
        let sq = Grid::uniform(Cuboid::rectangle((0.0, 1.0), (0.0, 2.0)).unwrap(), 8).unwrap();
        assert_eq!(sq.node_count(), 81);
        assert_eq!(sq.coords(sq.index(8, 8)), [1.0, 2.0]);
        let w = Grid::with_max_spacing(Cuboid::interval(-1.0, 1.0).unwrap(), 0.0125).unwrap();
        assert_eq!(w.cells(0), 160);
    }

    #[test]
    fn sampled_values() {
        let g = Grid::uniform(unit(), 8).unwrap();
        let ones = sample(&g, |_| Ok(1.0)).unwrap();
        assert!(ones.values().iter().all(|&v| v == 1.0));
        let x = expr_field(&g, "x");
        assert_eq!(x.values()[2], 0.25);
        assert_eq!(x.values()[4], 0.5);
    }

    #[test]
    fn trapezoid_exact_cases() {
        let g = Grid::uniform(Cuboid::interval(-1.0, 1.0).unwrap(), 10).unwrap();
        assert!((integrate(&sample(&g, |_| Ok(1.0)).unwrap()) - 2.0).abs() < 1e-14);
        let g = Grid::uniform(unit(), 8).unwrap();
        assert_eq!(integrate(&expr_field(&g, "x")), 0.5);
        let g2 = Grid::uniform(Cuboid::rectangle((0.0, 1.0), (0.0, 2.0)).unwrap(), 9).unwrap();
        let bilinear = expr_field(&g2, "1 + 2*x + 3*y + x*y");
        // 2 + 2 + 6 + 1
        assert!((integrate(&bilinear) - 11.0).abs() < 1e-13);
    }

    #[test]
    fn slope_integrates_to_two_points() {
        // antiderivative tanh(r/eps)/2 per interface, tanh(10) on each side
        let cuboid = Cuboid::interval(-1.0, 1.0).unwrap();
        let g = Grid::uniform(cuboid, 4000).unwrap();
        let shape = InterfaceShape::Interval { lo: -0.5, hi: 0.5 };
        let eps = 0.05;
        let s = sample(&g, |p| Ok(phase_field_slope(shape.signed_distance(p), eps))).unwrap();
        let exact = 2.0 * 10f64.tanh();
        assert!((integrate(&s) - exact).abs() < 1e-6);
        assert!((integrate(&s) - 2.0).abs() < 1e-6);
        let ones = sample(&g, |_| Ok(1.0)).unwrap();
        let delta = norm(&ones, NormKind::DeltaEps { shape, eps });
        assert!((delta * delta - 2.0).abs() < 1e-6);
    }

    #[test]
    fn norms_of_simple_fields() {
        let g = Grid::uniform(unit(), 64).unwrap();
        let ones = sample(&g, |_| Ok(1.0)).unwrap();
        assert!((norm(&ones, NormKind::L2) - 1.0).abs() < 1e-14);
        assert!((norm(&ones, NormKind::H1) - 1.0).abs() < 1e-14);
        let x = expr_field(&g, "x");
        let h = g.spacing(0);
        let exact = (1.0f64 + 1.0 / 3.0).sqrt();
        assert!((norm(&x, NormKind::H1) - exact).abs() < h * h);
        let shape = InterfaceShape::Interval { lo: 0.25, hi: 0.75 };
        let phi = norm(&x, NormKind::PhiEps { shape, eps: 0.05 });
        assert!(phi > 0.0 && phi < norm(&x, NormKind::H1));
    }

    #[test]
    fn gradient_is_second_order() {
        let g = Grid::uniform(unit(), 32).unwrap();
        let f = expr_field(&g, "x^2");
        let grad = f.gradient();
        for k in 0..g.node_count() {
            let x = g.coords(k)[0];
            assert!((grad[k][0] - 2.0 * x).abs() < 1e-12);
        }
    }

    #[test]
    fn interpolation_reproduces_bilinear() {
        let g = Grid::uniform(Cuboid::rectangle((0.0, 1.0), (-1.0, 1.0)).unwrap(), 8).unwrap();
        let f = expr_field(&g, "1 + 2*x - y + 3*x*y");
        let x = [0.33, -0.41];
        let exact = 1.0 + 2.0 * x[0] - x[1] + 3.0 * x[0] * x[1];
        assert!((f.at(&x) - exact).abs() < 1e-14);
    }

    #[test]
    fn edges_reproduce_dirichlet_integral() {
        let g = Grid::uniform(Cuboid::rectangle((0.0, 1.0), (0.0, 1.0)).unwrap(), 16).unwrap();
        let f = expr_field(&g, "2*x + 3*y");
        let sum: f64 = g
            .edges()
            .iter()
            .map(|e| e.coupling * (f.values()[e.to] - f.values()[e.from]).powi(2))
            .sum();
        assert!((sum - 13.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn trapezoid_exact_for_bilinear(a in -5.0f64..5.0, b in -5.0f64..5.0, c in -5.0f64..5.0, d in -5.0f64..5.0, n in 8usize..20) {
            let g = Grid::uniform(Cuboid::rectangle((-1.0, 2.0), (0.5, 1.5)).unwrap(), n).unwrap();
            let f = sample(&g, |p| Ok(a + b * p[0] + c * p[1] + d * p[0] * p[1])).unwrap();
            // area 3, mean x 0.5, mean y 1.0
            let exact = 3.0 * (a + 0.5 * b + c + 0.5 * d);
            prop_assert!((integrate(&f) - exact).abs() <= 1e-13 * (1.0 + exact.abs()));
        }
    }
}
