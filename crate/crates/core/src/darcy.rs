//! P1 finite elements for `-div(k grad p) = f` on the unit square.
//!
//! Boundary conditions: `p = 1` on `x1 = 0`, `p = 0` on `x1 = 1`, zero flux on
//! `x2 = 0` and `x2 = 1`. The permeability is constant per triangle.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{norm2, BandMatrix};

/// Default relative residual accepted from the linear solver.
pub const DEFAULT_TOLERANCE: f64 = 1e-10;

const INFLOW_PRESSURE: f64 = 1.0;
const OUTFLOW_PRESSURE: f64 = 0.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoundaryTag {
    Interior,
    /// Dirichlet `p = 1` at `x1 = 0`.
    Inflow,
    /// Dirichlet `p = 0` at `x1 = 1`.
    Outflow,
    /// Homogeneous Neumann at `x2 = 0` or `x2 = 1`.
    Wall,
}

/// Uniform right-triangle mesh with `m` nodes per side.
///
/// Node `(i, j)` sits at `(i h, j h)` with `h = 1 / (m - 1)` and has index
/// `j m + i`. Cell `(i, j)` is split along its rising diagonal into
/// `[(i,j), (i+1,j), (i+1,j+1)]` and `[(i,j), (i+1,j+1), (i,j+1)]`.
#[derive(Debug, Clone)]
pub struct Mesh {
    m: usize,
    h: f64,
    nodes: Vec<[f64; 2]>,
    triangles: Vec<[usize; 3]>,
    node_tags: Vec<BoundaryTag>,
    boundary_edges: Vec<([usize; 2], BoundaryTag)>,
}

impl Mesh {
    pub fn new(m: usize) -> Result<Self> {
        if m < 2 {
            return Err(Error::InvalidArgument(format!(
                "a mesh needs at least 2 points per side, got {m}"
            )));
        }
        let h = 1.0 / (m - 1) as f64;
        let id = |i: usize, j: usize| j * m + i;
        let coord = |i: usize| i as f64 / (m - 1) as f64;
        let mut nodes = Vec::with_capacity(m * m);
        let mut node_tags = Vec::with_capacity(m * m);
        for j in 0..m {
            for i in 0..m {
                nodes.push([coord(i), coord(j)]);
                node_tags.push(if i == 0 {
                    BoundaryTag::Inflow
                } else if i == m - 1 {
                    BoundaryTag::Outflow
                } else if j == 0 || j == m - 1 {
                    BoundaryTag::Wall
                } else {
                    BoundaryTag::Interior
                });
            }
        }
        let mut triangles = Vec::with_capacity(2 * (m - 1) * (m - 1));
        for j in 0..m - 1 {
            for i in 0..m - 1 {
                triangles.push([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
                triangles.push([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
            }
        }
        let mut boundary_edges = Vec::with_capacity(4 * (m - 1));
        for k in 0..m - 1 {
            boundary_edges.push(([id(0, k), id(0, k + 1)], BoundaryTag::Inflow));
            boundary_edges.push(([id(m - 1, k), id(m - 1, k + 1)], BoundaryTag::Outflow));
            boundary_edges.push(([id(k, 0), id(k + 1, 0)], BoundaryTag::Wall));
            boundary_edges.push(([id(k, m - 1), id(k + 1, m - 1)], BoundaryTag::Wall));
        }
        Ok(Self {
            m,
            h,
            nodes,
            triangles,
            node_tags,
            boundary_edges,
        })
    }

    pub fn points_per_side(&self) -> usize {
        self.m
    }

    pub fn spacing(&self) -> f64 {
        self.h
    }

    pub fn nodes(&self) -> &[[f64; 2]] {
        &self.nodes
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn node_tags(&self) -> &[BoundaryTag] {
        &self.node_tags
    }

    pub fn boundary_edges(&self) -> &[([usize; 2], BoundaryTag)] {
        &self.boundary_edges
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn element_count(&self) -> usize {
        self.triangles.len()
    }

    pub fn centroids(&self) -> Vec<[f64; 2]> {
        self.triangles
            .iter()
            .map(|t| {
                let [a, b, c] = t.map(|n| self.nodes[n]);
                [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0]
            })
            .collect()
    }

    /// Unknown index of a free node: free columns `1..m-1`, `x2` fastest.
    #[inline]
    fn unknown(&self, node: usize) -> Option<usize> {
        let (i, j) = (node % self.m, node / self.m);
        (i > 0 && i < self.m - 1).then(|| (i - 1) * self.m + j)
    }

    fn dirichlet_value(&self, node: usize) -> f64 {
        match self.node_tags[node] {
            BoundaryTag::Inflow => INFLOW_PRESSURE,
            BoundaryTag::Outflow => OUTFLOW_PRESSURE,
            _ => unreachable!("node {node} is not a Dirichlet node"),
        }
    }
}

/// Nodal P1 pressure on a mesh with `points_per_side` nodes per side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PressureField {
    pub points_per_side: usize,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    /// Direct factorisation plus refinement sweeps.
    pub iterations: usize,
    pub relative_residual: f64,
    /// Modelled cost of the solve, in nodes of the mesh.
    pub cost_units: f64,
}

/// Reference stiffness of the two triangle shapes for unit `k`; P1 stiffness
/// in 2D does not depend on `h`. Local order follows [`Mesh`] connectivity.
const LOWER_STIFFNESS: [[f64; 3]; 3] = [[0.5, -0.5, 0.0], [-0.5, 1.0, -0.5], [0.0, -0.5, 0.5]];
const UPPER_STIFFNESS: [[f64; 3]; 3] = [[0.5, 0.0, -0.5], [0.0, 0.5, -0.5], [-0.5, -0.5, 1.0]];

/// Assemble the Galerkin system and solve it by banded Cholesky.
///
/// `source` is the constant right-hand side `f`.
pub fn assemble_and_solve(
    mesh: &Mesh,
    k_elems: &[f64],
    source: f64,
    tol: f64,
) -> Result<(PressureField, SolveReport)> {
    if k_elems.len() != mesh.element_count() {
        return Err(Error::MeshMismatch {
            expected: mesh.element_count(),
            got: k_elems.len(),
        });
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {tol}")));
    }
    if let Some((element, &value)) = k_elems
        .iter()
        .enumerate()
        .find(|(_, k)| !(**k > 0.0 && k.is_finite()))
    {
        return Err(Error::InvalidCoefficient { element, value });
    }

    let m = mesh.m;
    let n = m * (m - 2);
    let mut values = vec![0.0; m * m];
    for (node, v) in values.iter_mut().enumerate() {
        if mesh.unknown(node).is_none() {
            *v = mesh.dirichlet_value(node);
        }
    }
    if n == 0 {
        return Ok((
            PressureField {
                points_per_side: m,
                values,
            },
            SolveReport {
                iterations: 0,
                relative_residual: 0.0,
                cost_units: (m * m) as f64,
            },
        ));
    }

    let load = source * mesh.h * mesh.h / 6.0;
    let mut a = BandMatrix::zeros(n, m + 1);
    let mut rhs = vec![0.0; n];
    for (e, tri) in mesh.triangles.iter().enumerate() {
        let local = if e % 2 == 0 {
            &LOWER_STIFFNESS
        } else {
            &UPPER_STIFFNESS
        };
        let k = k_elems[e];
        for (r, &gr) in tri.iter().enumerate() {
            let Some(ur) = mesh.unknown(gr) else { continue };
            rhs[ur] += load;
            for (c, &gc) in tri.iter().enumerate() {
                let kv = k * local[r][c];
                match mesh.unknown(gc) {
                    Some(uc) if uc <= ur => a.add(ur, uc, kv),
                    Some(_) => {}
                    None => rhs[ur] -= kv * values[gc],
                }
            }
        }
    }

    let factor = a.clone().cholesky()?;
    let mut x = factor.solve(&rhs);
    let rhs_norm = norm2(&rhs).max(f64::MIN_POSITIVE);
    let residual = |x: &[f64]| -> Vec<f64> {
        a.mul_vec(x)
            .iter()
            .zip(&rhs)
            .map(|(ax, b)| b - ax)
            .collect()
    };
    let mut r = residual(&x);
    let mut rel = norm2(&r) / rhs_norm;
    let mut iterations = 1;
    while rel > tol {
        if iterations > 4 {
            return Err(Error::Solver {
                reason: "iterative refinement stagnated".into(),
                residual: rel,
            });
        }
        let dx = factor.solve(&r);
        x.iter_mut().zip(&dx).for_each(|(xi, d)| *xi += d);
        r = residual(&x);
        rel = norm2(&r) / rhs_norm;
        iterations += 1;
    }

    for (node, v) in values.iter_mut().enumerate() {
        if let Some(u) = mesh.unknown(node) {
            *v = x[u];
        }
    }
    Ok((
        PressureField {
            points_per_side: m,
            values,
        },
        SolveReport {
            iterations,
            relative_residual: rel,
            cost_units: (m * m) as f64,
        },
    ))
}

fn check_field(mesh: &Mesh, p: &PressureField) -> Result<()> {
    if p.points_per_side != mesh.m || p.values.len() != mesh.node_count() {
        return Err(Error::MeshMismatch {
            expected: mesh.node_count(),
            got: p.values.len(),
        });
    }
    Ok(())
}

/// Outflow flux `-int_0^1 k dp/dx1 dx2` at `x1 = 1`, from the constant
/// gradient of each lower triangle owning an outflow edge.
pub fn outflow_flux(mesh: &Mesh, k_elems: &[f64], p: &PressureField) -> Result<f64> {
    check_field(mesh, p)?;
    if k_elems.len() != mesh.element_count() {
        return Err(Error::MeshMismatch {
            expected: mesh.element_count(),
            got: k_elems.len(),
        });
    }
    let m = mesh.m;
    let i = m - 2;
    let mut q = 0.0;
    for j in 0..m - 1 {
        // lower triangle of cell (m-2, j): its edge (m-1, j)-(m-1, j+1) lies on x1 = 1
        let e = 2 * (j * (m - 1) + i);
        let inner = p.values[j * m + i];
        let outer = p.values[j * m + i + 1];
        // -k (outer - inner) / h times edge length h
        q += k_elems[e] * (inner - outer);
    }
    Ok(q)
}

/// Points at which the pressure is observed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationOperator {
    pub points: Vec<[f64; 2]>,
}

impl ObservationOperator {
    pub const DEFAULT_COUNT: usize = 9;

    pub fn new(points: Vec<[f64; 2]>) -> Result<Self> {
        for p in &points {
            if !((0.0..=1.0).contains(&p[0]) && (0.0..=1.0).contains(&p[1])) {
                return Err(Error::OutsideDomain { x: p[0], y: p[1] });
            }
        }
        Ok(Self { points })
    }

    /// `count` independent uniform points in the open unit square.
    pub fn random<R: rand::Rng + ?Sized>(count: usize, rng: &mut R) -> Self {
        let points = (0..count)
            .map(|_| {
                let x: f64 = rng.gen();
                let y: f64 = rng.gen();
                [x, y]
            })
            .collect();
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

fn snap(u: f64) -> f64 {
    let r = u.round();
    if (u - r).abs() < 1e-9 {
        r
    } else {
        u
    }
}

/// Pressure at a single point by barycentric interpolation.
pub fn interpolate(p: &PressureField, x: [f64; 2]) -> Result<f64> {
    if !((0.0..=1.0).contains(&x[0]) && (0.0..=1.0).contains(&x[1])) {
        return Err(Error::OutsideDomain { x: x[0], y: x[1] });
    }
    let m = p.points_per_side;
    let cells = (m - 1) as f64;
    let u = snap(x[0] * cells);
    let v = snap(x[1] * cells);
    let i = (u.floor() as usize).min(m - 2);
    let j = (v.floor() as usize).min(m - 2);
    let s = u - i as f64;
    let t = v - j as f64;
    let at = |a: usize, b: usize| p.values[b * m + a];
    let p00 = at(i, j);
    let p11 = at(i + 1, j + 1);
    Ok(if s >= t {
        let p10 = at(i + 1, j);
        p00 + s * (p10 - p00) + t * (p11 - p10)
    } else {
        let p01 = at(i, j + 1);
        p00 + t * (p01 - p00) + s * (p11 - p01)
    })
}

/// Model response: the interpolated pressure at every observation point.
pub fn observe_pressure(p: &PressureField, obs: &ObservationOperator) -> Result<Vec<f64>> {
    obs.points.iter().map(|&x| interpolate(p, x)).collect()
}

/// Field dump: `x1,x2,p` per node.
pub fn write_field<W: Write>(mesh: &Mesh, p: &PressureField, mut out: W) -> Result<()> {
    check_field(mesh, p)?;
    writeln!(out, "x1,x2,p")?;
    for (node, v) in mesh.nodes.iter().zip(&p.values) {
        writeln!(out, "{},{},{}", node[0], node[1], v)?;
    }
    Ok(())
}
