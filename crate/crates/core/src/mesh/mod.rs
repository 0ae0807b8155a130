//! Triangle meshes with fixed topology.
//!
//! Vertex order is the correspondence key between the inflated and deflated
//! states of a lobe, so a [`Mesh`] never reorders or drops vertices. Geometry
//! helpers (volume, centroid, point containment) live in [`geometry`], ASCII
//! PLY persistence in [`ply`] and occupancy rasterization in [`voxel`].

pub mod geometry;
pub mod ply;
pub mod voxel;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use geometry::{centroid, mesh_volume, signed_volume};
pub use ply::{load_ply, save_ply};
pub use voxel::{voxelize, GridSpec, VoxelGrid};

/// Anatomical lobe a mesh belongs to. Each lobe gets its own dataset and model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LobeLabel {
    Upper,
    Lower,
}

impl LobeLabel {
    pub fn as_str(&self) -> &'static str {
        match self {
            LobeLabel::Upper => "upper",
            LobeLabel::Lower => "lower",
        }
    }
}

impl fmt::Display for LobeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LobeLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "upper" => Ok(LobeLabel::Upper),
            "lower" => Ok(LobeLabel::Lower),
            other => Err(Error::arg(format!("unknown lobe label `{other}`"))),
        }
    }
}

/// A triangulated surface in millimeters.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    vertices: Vec<Point3<f64>>,
    triangles: Vec<[usize; 3]>,
    lobe: LobeLabel,
}

impl Mesh {
    /// Builds a mesh, checking that every triangle references a valid vertex.
    pub fn new(
        vertices: Vec<Point3<f64>>,
        triangles: Vec<[usize; 3]>,
        lobe: LobeLabel,
    ) -> Result<Self> {
        let n = vertices.len();
        if let Some((t, tri)) = triangles
            .iter()
            .enumerate()
            .find(|(_, tri)| tri.iter().any(|&i| i >= n))
        {
            return Err(Error::Geometry(format!(
                "triangle {t} references vertex {:?} but the mesh has {n} vertices",
                tri
            )));
        }
        if let Some((i, p)) = vertices
            .iter()
            .enumerate()
            .find(|(_, p)| !p.coords.iter().all(|c| c.is_finite()))
        {
            return Err(Error::Geometry(format!("vertex {i} is not finite: {p}")));
        }
        Ok(Self {
            vertices,
            triangles,
            lobe,
        })
    }

    pub fn vertices(&self) -> &[Point3<f64>] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn lobe(&self) -> LobeLabel {
        self.lobe
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn vertex(&self, i: usize) -> Point3<f64> {
        self.vertices[i]
    }

    pub fn with_lobe(mut self, lobe: LobeLabel) -> Self {
        self.lobe = lobe;
        self
    }

    /// Same topology, new vertex positions. The vertex count must not change.
    pub fn with_vertices(&self, vertices: Vec<Point3<f64>>) -> Result<Self> {
        if vertices.len() != self.vertices.len() {
            return Err(Error::arg(format!(
                "vertex count is fixed at {}, got {}",
                self.vertices.len(),
                vertices.len()
            )));
        }
        Mesh::new(vertices, self.triangles.clone(), self.lobe)
    }

    /// Applies `f` to every vertex, keeping topology.
    pub fn map_vertices(&self, f: impl Fn(&Point3<f64>) -> Point3<f64>) -> Self {
        Self {
            vertices: self.vertices.iter().map(f).collect(),
            triangles: self.triangles.clone(),
            lobe: self.lobe,
        }
    }

    pub fn translated(&self, t: &Vector3<f64>) -> Self {
        self.map_vertices(|p| p + t)
    }

    pub fn same_topology(&self, other: &Mesh) -> bool {
        self.vertices.len() == other.vertices.len() && self.triangles == other.triangles
    }

    /// Axis-aligned bounding box as `(min, max)`.
    pub fn bounding_box(&self) -> (Point3<f64>, Point3<f64>) {
        bounding_box(&self.vertices)
    }

    pub fn bounding_box_diagonal(&self) -> f64 {
        let (lo, hi) = self.bounding_box();
        (hi - lo).norm()
    }

    /// Checks that the triangles form a closed, consistently oriented
    /// 2-manifold: every directed edge appears once and its reverse appears
    /// exactly once.
    pub fn check_closed_manifold(&self) -> Result<()> {
        if self.triangles.is_empty() {
            return Err(Error::Geometry("mesh has no triangles".into()));
        }
        let mut directed: HashMap<(usize, usize), u32> =
            HashMap::with_capacity(self.triangles.len() * 3);
        for (t, tri) in self.triangles.iter().enumerate() {
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                return Err(Error::Geometry(format!(
                    "triangle {t} repeats a vertex: {tri:?}"
                )));
            }
            for k in 0..3 {
                *directed.entry((tri[k], tri[(k + 1) % 3])).or_default() += 1;
            }
        }
        for (&(a, b), &count) in &directed {
            if count != 1 {
                return Err(Error::Geometry(format!(
                    "directed edge ({a}, {b}) used {count} times; orientation is inconsistent"
                )));
            }
            if !directed.contains_key(&(b, a)) {
                return Err(Error::Geometry(format!(
                    "edge ({a}, {b}) is a boundary edge; mesh is not closed"
                )));
            }
        }
        Ok(())
    }

    /// Undirected edges, each listed once with the smaller index first.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut edges: Vec<(usize, usize)> = self
            .triangles
            .iter()
            .flat_map(|t| {
                (0..3).map(move |k| {
                    let (a, b) = (t[k], t[(k + 1) % 3]);
                    (a.min(b), a.max(b))
                })
            })
            .collect();
        edges.sort_unstable();
        edges.dedup();
        edges
    }

    pub fn mean_edge_length(&self) -> f64 {
        let edges = self.edges();
        if edges.is_empty() {
            return 0.0;
        }
        edges
            .iter()
            .map(|&(a, b)| (self.vertices[a] - self.vertices[b]).norm())
            .sum::<f64>()
            / edges.len() as f64
    }
}

pub(crate) fn bounding_box(points: &[Point3<f64>]) -> (Point3<f64>, Point3<f64>) {
    let mut lo = Point3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY);
    let mut hi = Point3::new(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in points {
        for k in 0..3 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    (lo, hi)
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub fn tetrahedron() -> Mesh {
        Mesh::new(
            vec![
                Point3::new(0.0, 0.0, 0.0),
                Point3::new(1.0, 0.0, 0.0),
                Point3::new(0.0, 1.0, 0.0),
                Point3::new(0.0, 0.0, 1.0),
            ],
            vec![[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]],
            LobeLabel::Upper,
        )
        .unwrap()
    }

    /// Axis-aligned cube `[0,1]^3` shifted by `offset`, outward-facing.
    pub fn unit_cube(offset: Vector3<f64>) -> Mesh {
        let mut vertices = Vec::with_capacity(8);
        for i in 0..8 {
            let p = Point3::new((i & 1) as f64, ((i >> 1) & 1) as f64, ((i >> 2) & 1) as f64);
            vertices.push(p + offset);
        }
        let triangles = vec![
            [0, 2, 3],
            [0, 3, 1], // z = 0
            [4, 5, 7],
            [4, 7, 6], // z = 1
            [0, 1, 5],
            [0, 5, 4], // y = 0
            [2, 6, 7],
            [2, 7, 3], // y = 1
            [0, 4, 6],
            [0, 6, 2], // x = 0
            [1, 3, 7],
            [1, 7, 5], // x = 1
        ];
        Mesh::new(vertices, triangles, LobeLabel::Upper).unwrap()
    }

    /// Icosphere by repeated midpoint subdivision, projected to `radius`.
    pub fn icosphere(radius: f64, subdivisions: usize) -> Mesh {
        let t = (1.0 + 5f64.sqrt()) / 2.0;
        let mut verts: Vec<Vector3<f64>> = [
            (-1.0, t, 0.0),
            (1.0, t, 0.0),
            (-1.0, -t, 0.0),
            (1.0, -t, 0.0),
            (0.0, -1.0, t),
            (0.0, 1.0, t),
            (0.0, -1.0, -t),
            (0.0, 1.0, -t),
            (t, 0.0, -1.0),
            (t, 0.0, 1.0),
            (-t, 0.0, -1.0),
            (-t, 0.0, 1.0),
        ]
        .iter()
        .map(|&(x, y, z)| Vector3::new(x, y, z).normalize())
        .collect();
        let mut faces: Vec<[usize; 3]> = vec![
            [0, 11, 5],
            [0, 5, 1],
            [0, 1, 7],
            [0, 7, 10],
            [0, 10, 11],
            [1, 5, 9],
            [5, 11, 4],
            [11, 10, 2],
            [10, 7, 6],
            [7, 1, 8],
            [3, 9, 4],
            [3, 4, 2],
            [3, 2, 6],
            [3, 6, 8],
            [3, 8, 9],
            [4, 9, 5],
            [2, 4, 11],
            [6, 2, 10],
            [8, 6, 7],
            [9, 8, 1],
        ];
        for _ in 0..subdivisions {
            let mut cache: HashMap<(usize, usize), usize> = HashMap::new();
            let mut mid = |a: usize, b: usize, verts: &mut Vec<Vector3<f64>>| {
                let key = (a.min(b), a.max(b));
                *cache.entry(key).or_insert_with(|| {
                    verts.push(((verts[a] + verts[b]) * 0.5).normalize());
                    verts.len() - 1
                })
            };
            let mut next = Vec::with_capacity(faces.len() * 4);
            for f in &faces {
                let ab = mid(f[0], f[1], &mut verts);
                let bc = mid(f[1], f[2], &mut verts);
                let ca = mid(f[2], f[0], &mut verts);
                next.push([f[0], ab, ca]);
                next.push([f[1], bc, ab]);
                next.push([f[2], ca, bc]);
                next.push([ab, bc, ca]);
            }
            faces = next;
        }
        Mesh::new(
            verts
                .into_iter()
                .map(|v| Point3::from(v * radius))
                .collect(),
            faces,
            LobeLabel::Upper,
        )
        .unwrap()
    }
}
