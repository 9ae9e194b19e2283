use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pointset::Point3;

use super::TriangleMesh;

/// Edge-incidence counts of a triangle mesh.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topology {
    pub vertices: usize,
    pub edges: usize,
    pub faces: usize,
    /// Edges used by exactly one triangle.
    pub boundary_edges: usize,
    /// Edges used by three or more triangles.
    pub non_manifold_edges: usize,
}

impl Topology {
    /// `V - E + F`.
    pub fn euler_characteristic(&self) -> i64 {
        self.vertices as i64 - self.edges as i64 + self.faces as i64
    }

    /// Every edge shared by exactly two triangles.
    pub fn is_watertight(&self) -> bool {
        self.faces > 0 && self.boundary_edges == 0 && self.non_manifold_edges == 0
    }
}

pub fn topology(mesh: &TriangleMesh) -> Topology {
    let mut edges: HashMap<(u32, u32), usize> = HashMap::with_capacity(mesh.triangles.len() * 3 / 2);
    for t in &mesh.triangles {
        for (a, b) in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
            *edges.entry((a.min(b), a.max(b))).or_insert(0) += 1;
        }
    }
    Topology {
        vertices: mesh.vertices.len(),
        edges: edges.len(),
        faces: mesh.triangles.len(),
        boundary_edges: edges.values().filter(|&&c| c == 1).count(),
        non_manifold_edges: edges.values().filter(|&&c| c > 2).count(),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Reference {
    /// Sphere of the given radius about the origin.
    SphereRadius(f64),
    /// Points the surface should pass through.
    PointCloud(Vec<Point3>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeshMetrics {
    /// Mean radial error or one-sided Chamfer distance.
    pub mean_error: f64,
    /// Largest radial error or nearest-vertex distance.
    pub max_error: f64,
    pub watertight: bool,
    pub euler_characteristic: i64,
    pub topology: Topology,
}

pub fn mesh_metrics(mesh: &TriangleMesh, reference: &Reference) -> Result<MeshMetrics> {
    if mesh.is_empty() {
        return Err(Error::EmptyMesh);
    }
    let errors: Vec<f64> = match reference {
        Reference::SphereRadius(r) => mesh.vertices.iter().map(|v| (v.norm() - r).abs()).collect(),
        Reference::PointCloud(cloud) => {
            if cloud.is_empty() {
                return Err(Error::InvalidParameter("reference cloud is empty".into()));
            }
            cloud
                .par_iter()
                .map(|&p| mesh.vertices.iter().map(|&v| p.distance(v)).fold(f64::INFINITY, f64::min))
                .collect()
        }
    };
    let mean_error = errors.iter().sum::<f64>() / errors.len() as f64;
    let max_error = errors.iter().copied().fold(0.0, f64::max);
    let topology = topology(mesh);
    Ok(MeshMetrics {
        mean_error,
        max_error,
        watertight: topology.is_watertight(),
        euler_characteristic: topology.euler_characteristic(),
        topology,
    })
}
