//! Reference solutions of the sharp two-sided problem.
//!
//! All three solvers work from the energy
//!
//! ```text
//! E0[u] = int (D0 |grad u|^2 + c0 u^2) / 2 - f0 u  +  int_{interface} (kappa u^2 / 2 + g u) dS
//! ```
//!
//! so continuity across the interface and the flux jump are natural
//! conditions and never imposed explicitly, except in the 1D closed form
//! where they are the matching equations.

use serde::{Deserialize, Serialize};

use crate::diffuse::{solve_system, SparseSystem};
use crate::energy::EnergyBreakdown;
use crate::error::{Error, Result};
use crate::fields::{coeff_sharp, ProblemSpec};
use crate::geometry::{region_classify, InterfaceShape};
use crate::grid::Grid;
use crate::linalg::{dense_solve, dot, thomas_solve, CgOptions, SolveReport, Tridiagonal, TripletBuilder};

/// `c + A cosh(mu (x - x0)) + B sinh(mu (x - x0))` on one subinterval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpPiece {
    pub lo: f64,
    pub hi: f64,
    pub origin: f64,
    pub mu: f64,
    pub offset: f64,
    pub cosh_amp: f64,
    pub sinh_amp: f64,
    pub diffusivity: f64,
    pub reaction: f64,
    pub source: f64,
}

impl ExpPiece {
    pub fn value(&self, x: f64) -> f64 {
        let t = self.mu * (x - self.origin);
        self.offset + self.cosh_amp * t.cosh() + self.sinh_amp * t.sinh()
    }

    pub fn slope(&self, x: f64) -> f64 {
        let t = self.mu * (x - self.origin);
        self.mu * (self.cosh_amp * t.sinh() + self.sinh_amp * t.cosh())
    }
}

/// Exact solution for constant data in 1D: outer-left, inner, outer-right.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosedForm1D {
    pub pieces: [ExpPiece; 3],
    energy: EnergyBreakdown,
}

/// Piecewise-linear finite element solution on a mesh with the interface
/// points as nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedFem1D {
    pub nodes: Vec<f64>,
    pub values: Vec<f64>,
    pub report: SolveReport,
    energy: EnergyBreakdown,
}

/// P1 solution on a structured right-triangle mesh with cut elements.
#[derive(Debug, Clone, PartialEq)]
pub struct CutFem2D {
    pub mesh: Grid,
    pub values: Vec<f64>,
    pub report: SolveReport,
    pub cut_elements: usize,
    /// Radius actually used, after any perturbation away from mesh nodes.
    pub radius: f64,
    energy: EnergyBreakdown,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SharpSolution {
    Closed1D(ClosedForm1D),
    FittedFem1D(FittedFem1D),
    CutFem2D(CutFem2D),
}

impl SharpSolution {
    pub fn evaluate(&self, x: &[f64]) -> f64 {
        match self {
            SharpSolution::Closed1D(c) => {
                let p = &c.pieces;
                let piece = if x[0] < p[1].lo {
                    &p[0]
                } else if x[0] <= p[1].hi {
                    &p[1]
                } else {
                    &p[2]
                };
                piece.value(x[0])
            }
            SharpSolution::FittedFem1D(f) => {
                let nodes = &f.nodes;
                let x = x[0].clamp(nodes[0], nodes[nodes.len() - 1]);
                let i = nodes.partition_point(|&n| n <= x).clamp(1, nodes.len() - 1) - 1;
                let t = (x - nodes[i]) / (nodes[i + 1] - nodes[i]);
                (1.0 - t) * f.values[i] + t * f.values[i + 1]
            }
            SharpSolution::CutFem2D(c) => eval_p1(&c.mesh, &c.values, x),
        }
    }

    /// Energy of this solution, integrated in its own representation.
    pub fn energy(&self) -> EnergyBreakdown {
        match self {
            SharpSolution::Closed1D(c) => c.energy,
            SharpSolution::FittedFem1D(f) => f.energy,
            SharpSolution::CutFem2D(c) => c.energy,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            SharpSolution::Closed1D(_) => "closed-form-1d",
            SharpSolution::FittedFem1D(_) => "fitted-fem-1d",
            SharpSolution::CutFem2D(_) => "cut-fem-2d",
        }
    }
}

fn interval_of(spec: &ProblemSpec) -> Result<(f64, f64, f64, f64)> {
    match spec.shape {
        InterfaceShape::Interval { lo, hi } if spec.dim() == 1 => {
            Ok((spec.cuboid.lower(0), lo, hi, spec.cuboid.upper(0)))
        }
        _ => Err(Error::Invalid("1D reference solver needs an interval shape".into())),
    }
}

// 5-point Gauss-Legendre on [-1, 1]
const GAUSS5: [(f64, f64); 5] = [
    (0.0, 0.568_888_888_888_888_9),
    (-0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (-0.906_179_845_938_664, 0.236_926_885_056_189_1),
    (0.906_179_845_938_664, 0.236_926_885_056_189_1),
];

fn gauss<F: Fn(f64) -> f64>(lo: f64, hi: f64, panels: usize, f: F) -> f64 {
    let width = (hi - lo) / panels as f64;
    let mut sum = 0.0;
    for p in 0..panels {
        let mid = lo + (p as f64 + 0.5) * width;
        for &(t, w) in &GAUSS5 {
            sum += w * f(mid + 0.5 * width * t);
        }
    }
    0.5 * width * sum
}

/// Exact solution for constant `q`, `h`, `g` in 1D.
pub fn solve_sharp_1d_closed(spec: &ProblemSpec) -> Result<SharpSolution> {
    spec.validate()?;
    let (a, a1, b1, b) = interval_of(spec)?;
    let (Some(q), Some(h), Some(g)) = (
        spec.q.constant_value(),
        spec.h.constant_value(),
        spec.g.constant_value(),
    ) else {
        return Err(Error::Invalid("closed-form reference needs constant q, h and g".into()));
    };
    let (alpha, beta, gamma, kappa) = (spec.alpha, spec.beta, spec.gamma, spec.kappa);
    let outer = |lo: f64, hi: f64, origin: f64| ExpPiece {
        lo,
        hi,
        origin,
        mu: (beta / alpha).sqrt(),
        offset: h / beta,
        cosh_amp: 0.0,
        sinh_amp: 0.0,
        diffusivity: alpha,
        reaction: beta,
        source: h,
    };
    let mut pieces = [
        outer(a, a1, a),
        ExpPiece {
            lo: a1,
            hi: b1,
            origin: 0.5 * (a1 + b1),
            mu: gamma.sqrt(),
            offset: q / gamma,
            cosh_amp: 0.0,
            sinh_amp: 0.0,
            diffusivity: 1.0,
            reaction: gamma,
            source: q,
        },
        outer(b1, b, b),
    ];
    // Unknowns (A_L, B_L, A_M, B_M, A_R, B_R); basis values and slopes.
    let basis = |p: &ExpPiece, x: f64| {
        let t = p.mu * (x - p.origin);
        ([t.cosh(), t.sinh()], [p.mu * t.sinh(), p.mu * t.cosh()])
    };
    let mut m = vec![vec![0.0; 6]; 6];
    let mut rhs = vec![0.0; 6];
    // outer Neumann
    let (_, ds) = basis(&pieces[0], a);
    m[0][0] = ds[0];
    m[0][1] = ds[1];
    let (_, ds) = basis(&pieces[2], b);
    m[1][4] = ds[0];
    m[1][5] = ds[1];
    // continuity and flux jump at a1: u_M' - alpha u_L' - kappa u = g
    let (vl, sl) = basis(&pieces[0], a1);
    let (vm, sm) = basis(&pieces[1], a1);
    m[2][0] = vl[0];
    m[2][1] = vl[1];
    m[2][2] = -vm[0];
    m[2][3] = -vm[1];
    rhs[2] = pieces[1].offset - pieces[0].offset;
    m[3][0] = -alpha * sl[0];
    m[3][1] = -alpha * sl[1];
    m[3][2] = sm[0] - kappa * vm[0];
    m[3][3] = sm[1] - kappa * vm[1];
    rhs[3] = g + kappa * pieces[1].offset;
    // at b1: -u_M' + alpha u_R' - kappa u = g
    let (vm, sm) = basis(&pieces[1], b1);
    let (vr, sr) = basis(&pieces[2], b1);
    m[4][2] = vm[0];
    m[4][3] = vm[1];
    m[4][4] = -vr[0];
    m[4][5] = -vr[1];
    rhs[4] = pieces[2].offset - pieces[1].offset;
    m[5][2] = -sm[0] - kappa * vm[0];
    m[5][3] = -sm[1] - kappa * vm[1];
    m[5][4] = alpha * sr[0];
    m[5][5] = alpha * sr[1];
    rhs[5] = g + kappa * pieces[1].offset;
    let coeffs = dense_solve(&m, &rhs).map_err(|_| Error::SingularMatching)?;
    if coeffs.iter().any(|c| !c.is_finite()) {
        return Err(Error::SingularMatching);
    }
    for (i, p) in pieces.iter_mut().enumerate() {
        p.cosh_amp = coeffs[2 * i];
        p.sinh_amp = coeffs[2 * i + 1];
    }

    let panels = 256;
    let mut gradient = 0.0;
    let mut zeroth = 0.0;
    let mut load = 0.0;
    for p in &pieces {
        gradient += gauss(p.lo, p.hi, panels, |x| 0.5 * p.diffusivity * p.slope(x).powi(2));
        zeroth += gauss(p.lo, p.hi, panels, |x| 0.5 * p.reaction * p.value(x).powi(2));
        load -= gauss(p.lo, p.hi, panels, |x| p.source * p.value(x));
    }
    let surface: f64 = [a1, b1]
        .iter()
        .map(|&x| {
            let u = pieces[1].value(x);
            0.5 * kappa * u * u + g * u
        })
        .sum();
    Ok(SharpSolution::Closed1D(ClosedForm1D {
        pieces,
        energy: EnergyBreakdown::from_parts(gradient, zeroth, load, surface),
    }))
}

/// P1 finite elements on a mesh of about `cells` elements that contains both
/// interface points as nodes.
pub fn solve_sharp_1d_fem(spec: &ProblemSpec, cells: usize) -> Result<SharpSolution> {
    spec.validate()?;
    let (a, a1, b1, b) = interval_of(spec)?;
    let total = b - a;
    let mut nodes = vec![a];
    for (lo, hi) in [(a, a1), (a1, b1), (b1, b)] {
        let n = ((cells as f64 * (hi - lo) / total).round() as usize).max(1);
        for i in 1..=n {
            nodes.push(if i == n { hi } else { lo + (hi - lo) * i as f64 / n as f64 });
        }
    }
    let n = nodes.len();
    let mut tri = Tridiagonal {
        lower: vec![0.0; n - 1],
        diag: vec![0.0; n],
        upper: vec![0.0; n - 1],
    };
    let mut stiff = tri.clone();
    let mut mass = tri.clone();
    let mut load = vec![0.0; n];
    let mut surface_load = vec![0.0; n];
    let gauss3 = [
        (-(0.6f64).sqrt(), 5.0 / 9.0),
        (0.0, 8.0 / 9.0),
        ((0.6f64).sqrt(), 5.0 / 9.0),
    ];
    for e in 0..n - 1 {
        let (xl, xr) = (nodes[e], nodes[e + 1]);
        let len = xr - xl;
        let mid = 0.5 * (xl + xr);
        // element coefficients from its midpoint; interface points are nodes
        let c = coeff_sharp(spec, &[mid])?;
        let k = c.diffusivity / len;
        stiff.diag[e] += k;
        stiff.diag[e + 1] += k;
        stiff.upper[e] -= k;
        stiff.lower[e] -= k;
        let m = c.reaction * len / 6.0;
        mass.diag[e] += 2.0 * m;
        mass.diag[e + 1] += 2.0 * m;
        mass.upper[e] += m;
        mass.lower[e] += m;
        let source = if region_classify(spec.signed_distance(&[mid])).is_inner() {
            &spec.q
        } else {
            &spec.h
        };
        for &(t, w) in &gauss3 {
            let x = mid + 0.5 * len * t;
            let f = source.evaluate(&[x])?;
            let phi_r = 0.5 * (1.0 + t);
            load[e] += 0.5 * len * w * f * (1.0 - phi_r);
            load[e + 1] += 0.5 * len * w * f * phi_r;
        }
    }
    let interface_nodes: Vec<usize> = nodes
        .iter()
        .enumerate()
        .filter(|(_, &x)| x == a1 || x == b1)
        .map(|(i, _)| i)
        .collect();
    for i in 0..n {
        tri.diag[i] = stiff.diag[i] + mass.diag[i];
        if i + 1 < n {
            tri.upper[i] = stiff.upper[i] + mass.upper[i];
            tri.lower[i] = stiff.lower[i] + mass.lower[i];
        }
    }
    for &i in &interface_nodes {
        tri.diag[i] += spec.kappa;
        surface_load[i] = spec.g.evaluate(&[nodes[i]])?;
    }
    let rhs: Vec<f64> = load.iter().zip(&surface_load).map(|(l, s)| l - s).collect();
    let values = thomas_solve(&tri, &rhs)?;
    let system = SparseSystem {
        matrix: tri.to_sparse(),
        rhs,
        excess: None,
    };
    let rel = system.relative_residual(&values);
    let report = SolveReport {
        iterations: 0,
        relative_residual: rel,
        converged: true,
    };
    let gradient = 0.5 * dot(&values, &stiff.mul_vec(&values));
    let zeroth = 0.5 * dot(&values, &mass.mul_vec(&values));
    let load_term = -dot(&load, &values);
    let surface: f64 = interface_nodes
        .iter()
        .map(|&i| 0.5 * spec.kappa * values[i] * values[i] + surface_load[i] * values[i])
        .sum();
    Ok(SharpSolution::FittedFem1D(FittedFem1D {
        nodes,
        values,
        report,
        energy: EnergyBreakdown::from_parts(gradient, zeroth, load_term, surface),
    }))
}

/// Vertices of the two triangles of cell `(i, j)`: lower-right then upper-left.
fn cell_triangles(mesh: &Grid, i: usize, j: usize) -> [[usize; 3]; 2] {
    let v00 = mesh.index(i, j);
    let v10 = mesh.index(i + 1, j);
    let v01 = mesh.index(i, j + 1);
    let v11 = mesh.index(i + 1, j + 1);
    [[v00, v10, v11], [v00, v11, v01]]
}

fn eval_p1(mesh: &Grid, values: &[f64], x: &[f64]) -> f64 {
    let local = |axis: usize| {
        let s = ((x[axis] - mesh.cuboid().lower(axis)) / mesh.spacing(axis))
            .clamp(0.0, mesh.cells(axis) as f64);
        let i = (s.floor() as usize).min(mesh.cells(axis) - 1);
        (i, s - i as f64)
    };
    let (i, tx) = local(0);
    let (j, ty) = local(1);
    let v00 = values[mesh.index(i, j)];
    let v10 = values[mesh.index(i + 1, j)];
    let v01 = values[mesh.index(i, j + 1)];
    let v11 = values[mesh.index(i + 1, j + 1)];
    if tx >= ty {
        v00 + tx * (v10 - v00) + ty * (v11 - v10)
    } else {
        v00 + ty * (v01 - v00) + tx * (v11 - v01)
    }
}

type P = [f64; 2];

fn area2(a: P, b: P, c: P) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1])
}

fn polygon_area(poly: &[P]) -> f64 {
    let n = poly.len();
    0.5 * (0..n)
        .map(|k| {
            let (p, q) = (poly[k], poly[(k + 1) % n]);
            p[0] * q[1] - q[0] * p[1]
        })
        .sum::<f64>()
        .abs()
}

/// Point where the segment from `inside` to `outside` crosses the circle.
fn circle_crossing(center: P, radius: f64, inside: P, outside: P) -> P {
    let d = [outside[0] - inside[0], outside[1] - inside[1]];
    let f = [inside[0] - center[0], inside[1] - center[1]];
    let a = d[0] * d[0] + d[1] * d[1];
    let b = 2.0 * (f[0] * d[0] + f[1] * d[1]);
    let c = f[0] * f[0] + f[1] * f[1] - radius * radius;
    let disc = (b * b - 4.0 * a * c).max(0.0);
    // c <= 0, so the larger root lies in [0, 1]; this form avoids cancellation
    let t = if b >= 0.0 {
        (-2.0 * c) / (b + disc.sqrt())
    } else {
        (-b + disc.sqrt()) / (2.0 * a)
    };
    let t = t.clamp(0.0, 1.0);
    [inside[0] + t * d[0], inside[1] + t * d[1]]
}

struct Triangle {
    verts: [P; 3],
    area2: f64,
}

impl Triangle {
    fn barycentric(&self, x: P) -> [f64; 3] {
        let [a, b, c] = self.verts;
        let l1 = area2(a, x, c) / self.area2;
        let l2 = area2(a, b, x) / self.area2;
        [1.0 - l1 - l2, l1, l2]
    }

    fn basis_gradients(&self) -> [P; 3] {
        let [a, b, c] = self.verts;
        let inv = 1.0 / self.area2;
        [
            [(b[1] - c[1]) * inv, (c[0] - b[0]) * inv],
            [(c[1] - a[1]) * inv, (a[0] - c[0]) * inv],
            [(a[1] - b[1]) * inv, (b[0] - a[0]) * inv],
        ]
    }
}

/// Local contributions of one polygonal piece of a parent triangle.
#[allow(clippy::too_many_arguments)]
fn integrate_piece(
    spec: &ProblemSpec,
    parent: &Triangle,
    grads: &[P; 3],
    poly: &[P],
    inner: bool,
    nodes: [usize; 3],
    matrix: &mut TripletBuilder,
    stiff: &mut TripletBuilder,
    mass: &mut TripletBuilder,
    load: &mut [f64],
) -> Result<()> {
    let area = polygon_area(poly);
    if area == 0.0 {
        return Ok(());
    }
    let (d, c, source) = if inner {
        (1.0, spec.gamma, &spec.q)
    } else {
        (spec.alpha, spec.beta, &spec.h)
    };
    let mut local_mass = [[0.0; 3]; 3];
    let mut local_load = [0.0; 3];
    let n = poly.len() as f64;
    let centroid = [
        poly.iter().map(|p| p[0]).sum::<f64>() / n,
        poly.iter().map(|p| p[1]).sum::<f64>() / n,
    ];
    for k in 0..poly.len() {
        let (p, q) = (poly[k], poly[(k + 1) % poly.len()]);
        let sub = 0.5 * area2(centroid, p, q).abs();
        if sub == 0.0 {
            continue;
        }
        // edge-midpoint rule, exact for quadratics
        for (u, v) in [(centroid, p), (p, q), (q, centroid)] {
            let x = [0.5 * (u[0] + v[0]), 0.5 * (u[1] + v[1])];
            let lam = parent.barycentric(x);
            let f = source.evaluate(&x)?;
            let w = sub / 3.0;
            for a in 0..3 {
                local_load[a] += w * f * lam[a];
                for b in 0..3 {
                    local_mass[a][b] += w * c * lam[a] * lam[b];
                }
            }
        }
    }
    for a in 0..3 {
        load[nodes[a]] += local_load[a];
        for b in 0..3 {
            let k = d * area * (grads[a][0] * grads[b][0] + grads[a][1] * grads[b][1]);
            stiff.add(nodes[a], nodes[b], k);
            mass.add(nodes[a], nodes[b], local_mass[a][b]);
            matrix.add(nodes[a], nodes[b], k + local_mass[a][b]);
        }
    }
    Ok(())
}

/// P1 cut-element solution on a structured mesh with `cells` squares per
/// axis, each split into two triangles along the main diagonal.
pub fn solve_sharp_2d_cutfem(spec: &ProblemSpec, cells: usize, opts: &CgOptions) -> Result<SharpSolution> {
    spec.validate()?;
    let InterfaceShape::Disk { center, radius } = spec.shape else {
        return Err(Error::Invalid("cut-element reference needs a disk shape".into()));
    };
    if spec.kappa != 0.0 {
        return Err(Error::Invalid("Robin case supported in 1D only".into()));
    }
    let mesh = Grid::uniform(spec.cuboid, cells)?;
    let mut radius = radius;
    for _attempt in 0..3 {
        match assemble_cutfem(spec, &mesh, center, radius) {
            Err(Error::DegenerateCut) => {
                log::warn!("interface passes through a mesh node; perturbing radius by 1e-10");
                radius += 1e-10;
            }
            Err(e) => return Err(e),
            Ok(parts) => return finish_cutfem(mesh, radius, parts, opts),
        }
    }
    Err(Error::DegenerateCut)
}

struct CutFemParts {
    system: SparseSystem,
    stiffness: crate::linalg::SparseMatrix,
    mass: crate::linalg::SparseMatrix,
    volume_load: Vec<f64>,
    surface_load: Vec<f64>,
    cut_elements: usize,
}

fn assemble_cutfem(spec: &ProblemSpec, mesh: &Grid, center: P, radius: f64) -> Result<CutFemParts> {
    let n = mesh.node_count();
    let shape = InterfaceShape::Disk { center, radius };
    let dist: Vec<f64> = (0..n).map(|k| shape.signed_distance(&mesh.coords(k))).collect();
    if dist.iter().any(|r| r.abs() < 1e-12) {
        return Err(Error::DegenerateCut);
    }
    let mut matrix = TripletBuilder::with_capacity(n, 16 * n);
    let mut stiff = TripletBuilder::with_capacity(n, 16 * n);
    let mut mass = TripletBuilder::with_capacity(n, 16 * n);
    let mut volume_load = vec![0.0; n];
    let mut surface_load = vec![0.0; n];
    let mut cut_elements = 0;
    for j in 0..mesh.cells(1) {
        for i in 0..mesh.cells(0) {
            for ids in cell_triangles(mesh, i, j) {
                let verts = ids.map(|k| mesh.coords(k));
                let parent = Triangle {
                    verts,
                    area2: area2(verts[0], verts[1], verts[2]),
                };
                let grads = parent.basis_gradients();
                let inner = ids.map(|k| dist[k] >= 0.0);
                let inside_count = inner.iter().filter(|&&b| b).count();
                if inside_count == 0 || inside_count == 3 {
                    integrate_piece(
                        spec, &parent, &grads, &verts, inside_count == 3, ids,
                        &mut matrix, &mut stiff, &mut mass, &mut volume_load,
                    )?;
                    continue;
                }
                cut_elements += 1;
                // the vertex alone on its side
                let lone = (0..3)
                    .find(|&a| inner.iter().filter(|&&b| b == inner[a]).count() == 1)
                    .expect("one vertex is alone on its side");
                let (o1, o2) = ((lone + 1) % 3, (lone + 2) % 3);
                let cross = |other: usize| {
                    if inner[lone] {
                        circle_crossing(center, radius, verts[lone], verts[other])
                    } else {
                        circle_crossing(center, radius, verts[other], verts[lone])
                    }
                };
                let (i1, i2) = (cross(o1), cross(o2));
                integrate_piece(
                    spec, &parent, &grads, &[verts[lone], i1, i2], inner[lone], ids,
                    &mut matrix, &mut stiff, &mut mass, &mut volume_load,
                )?;
                integrate_piece(
                    spec, &parent, &grads, &[verts[o1], verts[o2], i2, i1], !inner[lone], ids,
                    &mut matrix, &mut stiff, &mut mass, &mut volume_load,
                )?;
                // interface chord
                let len = (i2[0] - i1[0]).hypot(i2[1] - i1[1]);
                let mid = [0.5 * (i1[0] + i2[0]), 0.5 * (i1[1] + i2[1])];
                let g = spec.g.evaluate(&mid)?;
                let (l1, l2) = (parent.barycentric(i1), parent.barycentric(i2));
                for a in 0..3 {
                    surface_load[ids[a]] += g * len * 0.5 * (l1[a] + l2[a]);
                }
            }
        }
    }
    let rhs = volume_load.iter().zip(&surface_load).map(|(v, s)| v - s).collect();
    Ok(CutFemParts {
        system: SparseSystem {
            matrix: matrix.build(),
            rhs,
            excess: None,
        },
        stiffness: stiff.build(),
        mass: mass.build(),
        volume_load,
        surface_load,
        cut_elements,
    })
}

fn finish_cutfem(mesh: Grid, radius: f64, parts: CutFemParts, opts: &CgOptions) -> Result<SharpSolution> {
    let (values, report) = solve_system(&parts.system, opts)?;
    let gradient = 0.5 * parts.stiffness.quadratic_form(&values);
    let zeroth = 0.5 * parts.mass.quadratic_form(&values);
    let load = -dot(&parts.volume_load, &values);
    let surface = dot(&parts.surface_load, &values);
    Ok(SharpSolution::CutFem2D(CutFem2D {
        mesh,
        values,
        report,
        cut_elements: parts.cut_elements,
        radius,
        energy: EnergyBreakdown::from_parts(gradient, zeroth, load, surface),
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::Expression;
    use crate::geometry::Cuboid;

    fn spec_1d(q: f64, h: f64, g: f64, kappa: f64, alpha: f64, beta: f64, gamma: f64) -> ProblemSpec {
        ProblemSpec {
            cuboid: Cuboid::interval(-1.0, 1.0).unwrap(),
            shape: InterfaceShape::Interval { lo: -0.5, hi: 0.5 },
            alpha,
            beta,
            gamma,
            kappa,
            q: Expression::constant(q),
            h: Expression::constant(h),
            g: Expression::constant(g),
        }
    }

    fn disk_spec(q: &str, h: &str, g: &str, alpha: f64, beta: f64, gamma: f64) -> ProblemSpec {
        ProblemSpec {
            cuboid: Cuboid::rectangle((-1.0, 1.0), (-1.0, 1.0)).unwrap(),
            shape: InterfaceShape::Disk { center: [0.0, 0.0], radius: 0.3 },
            alpha,
            beta,
            gamma,
            kappa: 0.0,
            q: Expression::parse(q).unwrap(),
            h: Expression::parse(h).unwrap(),
            g: Expression::parse(g).unwrap(),
        }
    }

    fn max_diff(a: &SharpSolution, b: &SharpSolution, points: &[f64]) -> f64 {
        points
            .iter()
            .map(|&x| (a.evaluate(&[x]) - b.evaluate(&[x])).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn closed_form_constant_cases() {
        for (g, kappa) in [(0.0, 0.0), (-1.0, 1.0)] {
            let s = spec_1d(3.0, 1.5, g, kappa, 2.0, 1.5, 3.0);
            let sol = solve_sharp_1d_closed(&s).unwrap();
            for k in 0..=40 {
                let x = -1.0 + 0.05 * k as f64;
                assert!((sol.evaluate(&[x]) - 1.0).abs() < 1e-12, "x={x}");
            }
            // -(gamma |Omega_1| + beta |Omega_2|) / 2 plus the two interface points
            let expected = -0.5 * (3.0 + 1.5) + 2.0 * (0.5 * kappa + g);
            assert!((sol.energy().total - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn closed_form_satisfies_transmission_conditions() {
        let s = spec_1d(1.0, 0.0, 0.1, 1.0, 2.0, 1.0, 1.0);
        let SharpSolution::Closed1D(c) = solve_sharp_1d_closed(&s).unwrap() else {
            unreachable!()
        };
        let [l, m, r] = c.pieces;
        assert!(l.slope(-1.0).abs() < 1e-14 && r.slope(1.0).abs() < 1e-14);
        assert!((l.value(-0.5) - m.value(-0.5)).abs() < 1e-14);
        assert!((m.value(0.5) - r.value(0.5)).abs() < 1e-14);
        let u = m.value(-0.5);
        assert!((m.slope(-0.5) - 2.0 * l.slope(-0.5) - (u + 0.1)).abs() < 1e-13);
        let u = m.value(0.5);
        assert!((-(m.slope(0.5) - 2.0 * r.slope(0.5)) - (u + 0.1)).abs() < 1e-13);
        // interior ODEs
        let x = 0.2;
        let second = (m.slope(x + 1e-5) - m.slope(x - 1e-5)) / 2e-5;
        assert!((-second + m.value(x) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn closed_form_agrees_with_overkill_fem() {
        let s = spec_1d(1.0, 0.0, 0.1, 0.0, 2.0, 1.0, 1.0);
        let closed = solve_sharp_1d_closed(&s).unwrap();
        let fem = solve_sharp_1d_fem(&s, 16384).unwrap();
        let SharpSolution::FittedFem1D(f) = &fem else { unreachable!() };
        assert!(max_diff(&closed, &fem, &f.nodes) <= 1e-6);
        let fem = solve_sharp_1d_fem(&s, 4096).unwrap();
        let SharpSolution::FittedFem1D(f) = &fem else { unreachable!() };
        assert!(max_diff(&closed, &fem, &f.nodes) <= 1e-6);
        assert!((closed.energy().total - fem.energy().total).abs() < 1e-6);
    }

    #[test]
    fn fem_constant_and_symmetric_cases() {
        let s = spec_1d(3.0, 1.5, -1.0, 1.0, 2.0, 1.5, 3.0);
        let fem = solve_sharp_1d_fem(&s, 100).unwrap();
        let SharpSolution::FittedFem1D(f) = &fem else { unreachable!() };
        assert!(f.values.iter().all(|v| (v - 1.0).abs() < 1e-12));
        assert!(f.nodes.contains(&-0.5) && f.nodes.contains(&0.5));
        let sym = ProblemSpec {
            q: Expression::parse("1 + x^2").unwrap(),
            h: Expression::parse("cos(x)").unwrap(),
            ..spec_1d(0.0, 0.0, 0.2, 0.5, 2.0, 1.0, 1.0)
        };
        let fem = solve_sharp_1d_fem(&sym, 400).unwrap();
        for k in 0..=50 {
            let x = 0.02 * k as f64;
            assert!((fem.evaluate(&[x]) - fem.evaluate(&[-x])).abs() < 1e-10);
        }
    }

    #[test]
    fn fem_is_a_discrete_minimizer() {
        let s = ProblemSpec {
            q: Expression::parse("1 + x").unwrap(),
            ..spec_1d(0.0, 0.0, 0.1, 1.0, 2.0, 1.0, 1.0)
        };
        let fem = solve_sharp_1d_fem(&s, 200).unwrap();
        let SharpSolution::FittedFem1D(f) = &fem else { unreachable!() };
        assert!(f.report.relative_residual < 1e-12);
        // at a minimizer E = -l(u) / 2 with l(u) = int f u - sum g u
        let e = f.energy;
        let g_u: f64 = [-0.5, 0.5].iter().map(|&x| 0.1 * fem.evaluate(&[x])).sum();
        let expected = 0.5 * (e.load + g_u);
        assert!((e.total - expected).abs() < 1e-12 * expected.abs(), "{} vs {expected}", e.total);
        assert!(e.gradient > 0.0 && e.zeroth_order > 0.0);
    }

    #[test]
    fn cutfem_reproduces_constants() {
        let s = disk_spec("3", "1.5", "0", 2.0, 1.5, 3.0);
        let sol = solve_sharp_2d_cutfem(&s, 40, &CgOptions::with_tol(1e-11)).unwrap();
        let SharpSolution::CutFem2D(c) = &sol else { unreachable!() };
        assert!(c.cut_elements > 0);
        assert!(c.values.iter().all(|v| (v - 1.0).abs() < 1e-9));
        // -(gamma pi R^2 + beta (4 - pi R^2)) / 2, up to the chord error in the areas
        let area = std::f64::consts::PI * 0.09;
        let expected = -0.5 * (3.0 * area + 1.5 * (4.0 - area));
        assert!((sol.energy().total - expected).abs() < 1e-2);
    }

    #[test]
    fn cutfem_piece_areas_sum_to_box() {
        // with q = 1, h = 1 and u = 1 the load is the total area
        let s = disk_spec("1", "1", "0", 1.0, 1.0, 1.0);
        let parts = assemble_cutfem(&s, &Grid::uniform(s.cuboid, 24).unwrap(), [0.0, 0.0], 0.3).unwrap();
        let total: f64 = parts.volume_load.iter().sum();
        assert!((total - 4.0).abs() < 1e-12);
        // chord polyline length is close to the circumference
        let s = disk_spec("1", "1", "1", 1.0, 1.0, 1.0);
        let parts = assemble_cutfem(&s, &Grid::uniform(s.cuboid, 64).unwrap(), [0.0, 0.0], 0.3).unwrap();
        let perimeter: f64 = parts.surface_load.iter().sum();
        assert!((perimeter - 2.0 * std::f64::consts::PI * 0.3).abs() < 1e-3);
    }

    #[test]
    fn cutfem_self_convergence() {
        let s = disk_spec("1", "0", "0.1", 2.0, 1.0, 1.0);
        let opts = CgOptions::with_tol(1e-12);
        let sols: Vec<SharpSolution> = [32, 64, 128]
            .iter()
            .map(|&n| solve_sharp_2d_cutfem(&s, n, &opts).unwrap())
            .collect();
        let grid = Grid::uniform(s.cuboid, 128).unwrap();
        let diff = |a: &SharpSolution, b: &SharpSolution| {
            let f = crate::grid::sample(&grid, |x| Ok(a.evaluate(x) - b.evaluate(x))).unwrap();
            crate::grid::norm(&f, crate::grid::NormKind::L2)
        };
        let d1 = diff(&sols[0], &sols[1]);
        let d2 = diff(&sols[1], &sols[2]);
        assert!(d2 * 2.0 <= d1, "{d1} {d2}");
    }

    #[test]
    fn cutfem_refuses_robin_and_intervals() {
        let mut s = disk_spec("1", "0", "0.1", 2.0, 1.0, 1.0);
        s.kappa = 1.0;
        assert!(solve_sharp_2d_cutfem(&s, 16, &CgOptions::default()).is_err());
        let s1 = spec_1d(1.0, 0.0, 0.1, 0.0, 2.0, 1.0, 1.0);
        assert!(solve_sharp_2d_cutfem(&s1, 16, &CgOptions::default()).is_err());
        assert!(solve_sharp_1d_closed(&disk_spec("1", "0", "0", 1.0, 1.0, 1.0)).is_err());
    }

    #[test]
    fn degenerate_cut_is_perturbed() {
        // radius 0.5 passes exactly through mesh nodes of a 16-cell mesh on (-1, 1)^2
        let s = ProblemSpec {
            shape: InterfaceShape::Disk { center: [0.0, 0.0], radius: 0.5 },
            ..disk_spec("1", "0", "0.1", 2.0, 1.0, 1.0)
        };
        let sol = solve_sharp_2d_cutfem(&s, 16, &CgOptions::default()).unwrap();
        let SharpSolution::CutFem2D(c) = sol else { unreachable!() };
        assert!(c.radius > 0.5);
    }
}
