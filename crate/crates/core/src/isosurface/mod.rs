//! Grid evaluation of a trained network and zero-level-set extraction by
//! marching cubes, plus mesh export and quality metrics.

mod export;
mod metrics;
mod tables;

pub use export::{export_mesh, format_sig9, write_field, MeshFormat};
pub use metrics::{mesh_metrics, topology, MeshMetrics, Reference, Topology};

use std::collections::HashMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::network::{predict, NetworkConfig, Params};
use crate::pointset::{Aabb, Point3};

/// Points per forward pass during grid evaluation.
const GRID_CHUNK: usize = 4096;

/// Relative nudge applied to node values that sit exactly on the threshold.
const ZERO_NUDGE: f64 = 1e-12;

/// Node values on a regular grid, x index fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    resolution: [usize; 3],
    bounds: Aabb,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(resolution: [usize; 3], bounds: Aabb, values: Vec<f64>) -> Result<Self> {
        check_grid(resolution, &bounds)?;
        let n: usize = resolution.iter().product();
        if values.len() != n {
            return Err(Error::LengthMismatch { left: values.len(), right: n });
        }
        Ok(Self { resolution, bounds, values })
    }

    /// Samples `f` at every node.
    pub fn from_fn(resolution: [usize; 3], bounds: Aabb, f: impl Fn(Point3) -> f64) -> Result<Self> {
        check_grid(resolution, &bounds)?;
        let values = (0..resolution.iter().product::<usize>())
            .map(|idx| f(node_position(resolution, &bounds, unravel(resolution, idx))))
            .collect();
        Ok(Self { resolution, bounds, values })
    }

    pub fn resolution(&self) -> [usize; 3] {
        self.resolution
    }

    pub fn bounds(&self) -> Aabb {
        self.bounds
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.index(i, j, k)]
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.resolution[0] * (j + self.resolution[1] * k)
    }

    pub fn node(&self, i: usize, j: usize, k: usize) -> Point3 {
        node_position(self.resolution, &self.bounds, [i, j, k])
    }

    pub fn cell_size(&self) -> Point3 {
        let e = self.bounds.extent();
        let [nx, ny, nz] = self.resolution;
        Point3::new(e.x / (nx - 1) as f64, e.y / (ny - 1) as f64, e.z / (nz - 1) as f64)
    }

    pub fn cell_diagonal(&self) -> f64 {
        self.cell_size().norm()
    }
}

fn check_grid(resolution: [usize; 3], bounds: &Aabb) -> Result<()> {
    if resolution.iter().any(|&r| r < 2) {
        return Err(Error::InvalidParameter(format!(
            "grid resolution {resolution:?} needs at least 2 nodes per axis"
        )));
    }
    let e = bounds.extent();
    if !(e.x > 0.0 && e.y > 0.0 && e.z > 0.0) || !bounds.min.is_finite() || !bounds.max.is_finite() {
        return Err(Error::InvalidParameter(format!("degenerate grid bounds {bounds:?}")));
    }
    Ok(())
}

fn unravel(res: [usize; 3], idx: usize) -> [usize; 3] {
    [idx % res[0], (idx / res[0]) % res[1], idx / (res[0] * res[1])]
}

fn node_position(res: [usize; 3], bounds: &Aabb, ijk: [usize; 3]) -> Point3 {
    let lo = bounds.min.to_array();
    let hi = bounds.max.to_array();
    let mut p = [0.0; 3];
    for a in 0..3 {
        p[a] = if ijk[a] == res[a] - 1 {
            hi[a]
        } else {
            lo[a] + (hi[a] - lo[a]) * (ijk[a] as f64 / (res[a] - 1) as f64)
        };
    }
    Point3::from_array(p)
}

/// Network prediction at every grid node. Chunks are evaluated in parallel
/// and reassembled in node order; each node's value does not depend on
/// the chunking.
pub fn evaluate_grid(
    config: &NetworkConfig,
    params: &Params,
    bounds: Aabb,
    resolution: [usize; 3],
) -> Result<ScalarField> {
    check_grid(resolution, &bounds)?;
    if config.input_dim != 3 || config.output_dim != 1 {
        return Err(Error::InvalidParameter("grid evaluation needs a 3 -> 1 network".into()));
    }
    let total: usize = resolution.iter().product();
    let chunks: Vec<(usize, usize)> =
        (0..total).step_by(GRID_CHUNK).map(|s| (s, (s + GRID_CHUNK).min(total))).collect();
    let parts: Vec<Vec<f64>> = chunks
        .par_iter()
        .map(|&(start, end)| {
            let batch = Matrix::from_fn(3, end - start, |r, c| {
                node_position(resolution, &bounds, unravel(resolution, start + c)).to_array()[r]
            });
            predict(config, params, &batch).map(Matrix::into_vec)
        })
        .collect::<Result<_>>()?;
    ScalarField::new(resolution, bounds, parts.concat())
}

/// The grid edge a mesh vertex was interpolated on: the lower node and the
/// axis (0 = x, 1 = y, 2 = z) the edge runs along.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct GridEdge {
    pub node: [usize; 3],
    pub axis: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Point3>,
    pub triangles: Vec<[u32; 3]>,
    /// Source grid edge of each vertex; empty for meshes not built here.
    pub provenance: Vec<GridEdge>,
}

impl TriangleMesh {
    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    /// Applies `f` to every vertex position.
    pub fn map_vertices(&mut self, f: impl Fn(Point3) -> Point3) {
        for v in &mut self.vertices {
            *v = f(*v);
        }
    }

    /// Sum of signed tetrahedron volumes; positive when triangles wind
    /// counter-clockwise seen from outside.
    pub fn signed_volume(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| {
                let [a, b, c] = t.map(|i| self.vertices[i as usize]);
                a.dot(b.cross(c)) / 6.0
            })
            .sum()
    }
}

/// Cube corner offsets in table order.
const CORNERS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];

/// Corner pairs for the 12 cube edges in table order.
const EDGES: [[usize; 2]; 12] = [
    [0, 1],
    [1, 2],
    [2, 3],
    [3, 0],
    [4, 5],
    [5, 6],
    [6, 7],
    [7, 4],
    [0, 4],
    [1, 5],
    [2, 6],
    [3, 7],
];

/// Extracts the `threshold` level set with the 256-case table.
///
/// Vertices are shared between neighbouring cells through their grid edge,
/// positioned by linear interpolation. Triangles wind so their normals
/// point toward lower field values. Node values exactly equal to the
/// threshold are raised by `1e-12` times the field's largest deviation
/// from it before classification.
pub fn marching_cubes(field: &ScalarField, threshold: f64) -> TriangleMesh {
    let table = tables::triangles();
    let scale = field
        .values
        .iter()
        .map(|v| (v - threshold).abs())
        .filter(|v| v.is_finite())
        .fold(0.0, f64::max);
    let nudge = ZERO_NUDGE * if scale > 0.0 { scale } else { 1.0 };
    let values: Vec<f64> =
        field.values.iter().map(|&v| if v == threshold { threshold + nudge } else { v }).collect();
    let value = |n: [usize; 3]| values[field.index(n[0], n[1], n[2])];

    let [nx, ny, nz] = field.resolution;
    let mut mesh = TriangleMesh::default();
    let mut vertex_of: HashMap<GridEdge, u32> = HashMap::new();

    for k in 0..nz - 1 {
        for j in 0..ny - 1 {
            for i in 0..nx - 1 {
                let corner = |c: usize| [i + CORNERS[c][0], j + CORNERS[c][1], k + CORNERS[c][2]];
                let mut case = 0usize;
                for c in 0..8 {
                    if value(corner(c)) < threshold {
                        case |= 1 << c;
                    }
                }
                let tris = &table[case];
                if tris.is_empty() {
                    continue;
                }
                let mut ids = [0u32; 3];
                for tri in tris.chunks_exact(3) {
                    for (slot, &e) in ids.iter_mut().zip(tri) {
                        let [a, b] = EDGES[e as usize];
                        let (na, nb) = (corner(a), corner(b));
                        let axis = (0..3).find(|&ax| na[ax] != nb[ax]).expect("edge spans one axis");
                        let (lo, hi) = if na[axis] < nb[axis] { (na, nb) } else { (nb, na) };
                        let key = GridEdge { node: lo, axis };
                        *slot = *vertex_of.entry(key).or_insert_with(|| {
                            let (vl, vh) = (value(lo), value(hi));
                            let t = (threshold - vl) / (vh - vl);
                            let pl = field.node(lo[0], lo[1], lo[2]);
                            let ph = field.node(hi[0], hi[1], hi[2]);
                            mesh.vertices.push(pl + (ph - pl) * t);
                            mesh.provenance.push(key);
                            (mesh.vertices.len() - 1) as u32
                        });
                    }
                    if is_degenerate(&mesh.vertices, ids) {
                        continue;
                    }
                    mesh.triangles.push(ids);
                }
            }
        }
    }
    mesh
}

fn is_degenerate(vertices: &[Point3], [a, b, c]: [u32; 3]) -> bool {
    if a == b || b == c || a == c {
        return true;
    }
    let (pa, pb, pc) = (vertices[a as usize], vertices[b as usize], vertices[c as usize]);
    (pb - pa).cross(pc - pa) == Point3::ORIGIN
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{ArchitectureKind, NetworkConfig};

    fn unit_cell() -> Aabb {
        Aabb::new(Point3::ORIGIN, Point3::new(1.0, 1.0, 1.0))
    }

    #[test]
    fn two_by_two_grid_is_corners() {
        let f = ScalarField::from_fn([2, 2, 2], unit_cell(), |p| p.x + 2.0 * p.y + 4.0 * p.z).unwrap();
        assert_eq!(f.values(), &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]);
    }

    #[test]
    fn grid_validation() {
        assert!(ScalarField::from_fn([1, 2, 2], unit_cell(), |_| 0.0).is_err());
        let flat = Aabb::new(Point3::ORIGIN, Point3::new(1.0, 0.0, 1.0));
        assert!(ScalarField::from_fn([2, 2, 2], flat, |_| 0.0).is_err());
        assert!(ScalarField::new([2, 2, 2], unit_cell(), vec![0.0; 7]).is_err());
    }

    #[test]
    fn zero_network_gives_zero_field() {
        let c = NetworkConfig::surface(ArchitectureKind::SqrHw, 2, 4, 0);
        let f = evaluate_grid(&c, &Params::zeros(&c), Aabb::cube(1.0), [5, 4, 3]).unwrap();
        assert_eq!(f.values().len(), 60);
        assert!(f.values().iter().all(|&v| v == 0.0));
        assert!(marching_cubes(&f, 0.0).is_empty());
    }

    #[test]
    fn constant_field_is_empty() {
        let f = ScalarField::from_fn([4, 4, 4], unit_cell(), |_| 2.0).unwrap();
        assert!(marching_cubes(&f, 0.0).is_empty());
    }

    #[test]
    fn single_corner_case() {
        let f = ScalarField::new(
            [2, 2, 2],
            unit_cell(),
            vec![-1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0],
        )
        .unwrap();
        let m = marching_cubes(&f, 0.0);
        assert_eq!(m.triangles.len(), 1);
        let mut vs = m.vertices.clone();
        vs.sort_by(|a, b| a.to_array().partial_cmp(&b.to_array()).unwrap());
        assert_eq!(
            vs,
            vec![Point3::new(0.0, 0.0, 0.5), Point3::new(0.0, 0.5, 0.0), Point3::new(0.5, 0.0, 0.0)]
        );
        // Normal points at the low corner.
        let [a, b, c] = m.triangles[0].map(|i| m.vertices[i as usize]);
        let n = (b - a).cross(c - a);
        assert!(n.x < 0.0 && n.y < 0.0 && n.z < 0.0);
        for (v, e) in m.vertices.iter().zip(&m.provenance) {
            assert_eq!(e.node, [0, 0, 0]);
            assert_eq!(v.to_array()[e.axis], 0.5);
        }
    }

    #[test]
    fn table_edges_match_sign_changes() {
        let table = tables::triangles();
        for (case, tris) in table.iter().enumerate() {
            let mut used = [false; 12];
            for &e in tris.iter() {
                used[e as usize] = true;
            }
            for (e, [a, b]) in EDGES.iter().enumerate() {
                let crosses = ((case >> a) & 1) != ((case >> b) & 1);
                assert_eq!(used[e], crosses, "case {case} edge {e}");
            }
        }
    }

    #[test]
    fn linear_edge_root_is_exact() {
        let f = ScalarField::from_fn([6, 5, 4], Aabb::cube(1.0), |p| 0.3 - p.x + 0.25 * p.y).unwrap();
        let m = marching_cubes(&f, 0.0);
        assert!(!m.is_empty());
        for v in &m.vertices {
            assert!((0.3 - v.x + 0.25 * v.y).abs() <= 1e-12);
        }
    }

    #[test]
    fn exact_zero_nodes_are_nudged() {
        // The plane x = 0 passes through a column of nodes.
        let f = ScalarField::from_fn([5, 3, 3], Aabb::cube(1.0), |p| -p.x).unwrap();
        let m = marching_cubes(&f, 0.0);
        assert!(!m.is_empty());
        for v in &m.vertices {
            assert!(v.x.abs() < 1e-9);
        }
        let t = topology(&m);
        assert_eq!(t.non_manifold_edges, 0);
    }

    #[test]
    fn sphere_outward_orientation() {
        let f = ScalarField::from_fn([20, 20, 20], Aabb::cube(1.5), |p| 1.0 - p.norm()).unwrap();
        let m = marching_cubes(&f, 0.0);
        let vol = m.signed_volume();
        let exact = 4.0 / 3.0 * std::f64::consts::PI;
        assert!(vol > 0.0 && (vol - exact).abs() < 0.05 * exact, "{vol}");
    }
}
