//! Occupancy rasterization of closed meshes on regular grids.
//!
//! A voxel is occupied when its center lies inside the mesh. Inside-ness is
//! decided per grid row: a line parallel to +x through the row's voxel
//! centers is intersected with every triangle, and the crossing parity at
//! each center gives occupancy. A row whose line grazes a triangle edge or
//! vertex is recast through up to three fixed, slightly offset lines.

use nalgebra::{Point3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::Mesh;
use crate::error::{Error, Result};

/// Largest grid [`voxelize`] will allocate.
pub const MAX_VOXELS: u128 = 100_000_000;

const GRAZE_EPS: f64 = 1e-9;

/// Row-line offsets (in units of spacing) tried after a grazing hit.
const ROW_OFFSETS: [(f64, f64); 3] = [(1.37e-4, 2.91e-4), (-2.13e-4, 0.77e-4), (0.59e-4, -3.31e-4)];

/// Placement of a regular grid: `origin` is the minimum corner of voxel
/// `(0,0,0)`; voxel `(i,j,k)` has center `origin + (i+½, j+½, k+½)·spacing`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub origin: Point3<f64>,
    pub spacing: f64,
    pub dims: [usize; 3],
}

impl GridSpec {
    /// Grid covering the box `[lo, hi]` padded by one voxel on every side.
    pub fn covering(lo: &Point3<f64>, hi: &Point3<f64>, spacing: f64) -> Result<Self> {
        if !(spacing > 0.0 && spacing.is_finite()) {
            return Err(Error::arg(format!(
                "voxel spacing must be positive, got {spacing}"
            )));
        }
        let mut dims = [0usize; 3];
        let mut total: u128 = 1;
        for k in 0..3 {
            let cells = ((hi[k] - lo[k]) / spacing).ceil().max(0.0);
            if !cells.is_finite() || cells > 1e12 {
                return Err(Error::Resolution {
                    voxels: u128::MAX,
                    limit: MAX_VOXELS,
                });
            }
            dims[k] = cells as usize + 2;
            total = total.saturating_mul(dims[k] as u128);
        }
        if total > MAX_VOXELS {
            return Err(Error::Resolution {
                voxels: total,
                limit: MAX_VOXELS,
            });
        }
        let pad = Vector3::repeat(spacing);
        Ok(Self {
            origin: lo - pad,
            spacing,
            dims,
        })
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn center(&self, i: usize, j: usize, k: usize) -> Point3<f64> {
        self.origin + Vector3::new(i as f64 + 0.5, j as f64 + 0.5, k as f64 + 0.5) * self.spacing
    }

    fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.dims[1] + j) * self.dims[0] + i
    }
}

/// Occupancy bits over a [`GridSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    spec: GridSpec,
    bits: Vec<u64>,
}

impl VoxelGrid {
    fn empty(spec: GridSpec) -> Self {
        let words = spec.len().div_ceil(64);
        Self {
            spec,
            bits: vec![0; words],
        }
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn origin(&self) -> Point3<f64> {
        self.spec.origin
    }

    pub fn spacing(&self) -> f64 {
        self.spec.spacing
    }

    pub fn dims(&self) -> [usize; 3] {
        self.spec.dims
    }

    pub fn is_occupied(&self, i: usize, j: usize, k: usize) -> bool {
        let idx = self.spec.index(i, j, k);
        self.bits[idx / 64] >> (idx % 64) & 1 == 1
    }

    pub fn occupied_count(&self) -> usize {
        self.bits.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Occupied volume in mm³.
    pub fn volume(&self) -> f64 {
        self.occupied_count() as f64 * self.spec.spacing.powi(3)
    }

    /// Number of voxels occupied in both grids. Grids must share a spec.
    pub fn intersection_count(&self, other: &VoxelGrid) -> Result<usize> {
        if self.spec != other.spec {
            return Err(Error::arg("occupancy grids are not on the same lattice"));
        }
        Ok(self
            .bits
            .iter()
            .zip(&other.bits)
            .map(|(a, b)| (a & b).count_ones() as usize)
            .sum())
    }
}

/// Voxelizes a closed mesh on a grid covering its bounding box plus one voxel.
pub fn voxelize(mesh: &Mesh, spacing: f64) -> Result<VoxelGrid> {
    let (lo, hi) = mesh.bounding_box();
    let spec = GridSpec::covering(&lo, &hi, spacing)?;
    voxelize_on(mesh, &spec)
}

/// Voxelizes a closed mesh on a caller-supplied grid, so that several meshes
/// can share one lattice.
pub fn voxelize_on(mesh: &Mesh, spec: &GridSpec) -> Result<VoxelGrid> {
    mesh.check_closed_manifold()?;
    let [nx, ny, nz] = spec.dims;
    let s = spec.spacing;
    let verts = mesh.vertices();

    let mut crossings: Vec<Vec<f64>> = vec![Vec::new(); ny * nz];
    let mut grazed = vec![false; ny * nz];

    let row_center = |j: usize, k: usize| {
        (
            spec.origin.y + (j as f64 + 0.5) * s,
            spec.origin.z + (k as f64 + 0.5) * s,
        )
    };

    for tri in mesh.triangles() {
        let p = [verts[tri[0]], verts[tri[1]], verts[tri[2]]];
        let (ymin, ymax) = min_max(p.iter().map(|q| q.y));
        let (zmin, zmax) = min_max(p.iter().map(|q| q.z));
        let Some((j0, j1)) = row_range(ymin, ymax, spec.origin.y, s, ny) else {
            continue;
        };
        let Some((k0, k1)) = row_range(zmin, zmax, spec.origin.z, s, nz) else {
            continue;
        };
        for k in k0..=k1 {
            for j in j0..=j1 {
                let (y, z) = row_center(j, k);
                let row = k * ny + j;
                match line_crossing(&p, y, z) {
                    LineHit::Miss => {}
                    LineHit::Cross(x) => crossings[row].push(x),
                    LineHit::Graze => grazed[row] = true,
                }
            }
        }
    }

    // Recast grazed rows through offset lines against every triangle.
    for row in (0..ny * nz).filter(|&r| grazed[r]) {
        let (j, k) = (row % ny, row / ny);
        let (y0, z0) = row_center(j, k);
        for (dy, dz) in ROW_OFFSETS {
            let (y, z) = (y0 + dy * s, z0 + dz * s);
            let mut xs = Vec::new();
            let mut clean = true;
            for tri in mesh.triangles() {
                let p = [verts[tri[0]], verts[tri[1]], verts[tri[2]]];
                match line_crossing(&p, y, z) {
                    LineHit::Miss => {}
                    LineHit::Cross(x) => xs.push(x),
                    LineHit::Graze => {
                        clean = false;
                        break;
                    }
                }
            }
            crossings[row] = xs;
            if clean {
                break;
            }
        }
    }

    let row_bits: Vec<Vec<bool>> = crossings
        .into_par_iter()
        .map(|mut xs| {
            xs.sort_by(f64::total_cmp);
            let mut inside = vec![false; nx];
            let mut c = 0;
            for (i, cell) in inside.iter_mut().enumerate() {
                let x = spec.origin.x + (i as f64 + 0.5) * s;
                while c < xs.len() && xs[c] < x {
                    c += 1;
                }
                *cell = c % 2 == 1;
            }
            inside
        })
        .collect();

    let mut grid = VoxelGrid::empty(*spec);
    for (row, inside) in row_bits.iter().enumerate() {
        let base = row * nx;
        for (i, &occ) in inside.iter().enumerate() {
            if occ {
                let idx = base + i;
                grid.bits[idx / 64] |= 1u64 << (idx % 64);
            }
        }
    }
    Ok(grid)
}

fn min_max(it: impl Iterator<Item = f64>) -> (f64, f64) {
    it.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    })
}

/// Inclusive range of row indices whose centers fall in `[lo, hi]`.
fn row_range(lo: f64, hi: f64, origin: f64, s: f64, n: usize) -> Option<(usize, usize)> {
    let a = ((lo - origin) / s - 0.5).ceil().max(0.0);
    let b = ((hi - origin) / s - 0.5).floor();
    if b < 0.0 || a > b || a >= n as f64 {
        return None;
    }
    Some((a as usize, (b as usize).min(n - 1)))
}

enum LineHit {
    Miss,
    Cross(f64),
    Graze,
}

/// Intersection of the line `{(t, y, z)}` with a triangle, via barycentric
/// coordinates of the triangle's projection onto the yz-plane.
fn line_crossing(p: &[Point3<f64>; 3], y: f64, z: f64) -> LineHit {
    let cross = |ay: f64, az: f64, by: f64, bz: f64| ay * bz - az * by;
    let area = cross(
        p[1].y - p[0].y,
        p[1].z - p[0].z,
        p[2].y - p[0].y,
        p[2].z - p[0].z,
    );
    let scale = (p[1] - p[0]).norm() * (p[2] - p[0]).norm();
    if area.abs() <= 1e-14 * scale {
        // Triangle seen edge-on; neighbours decide the crossing.
        return LineHit::Miss;
    }
    let w0 = cross(p[1].y - y, p[1].z - z, p[2].y - y, p[2].z - z) / area;
    let w1 = cross(p[2].y - y, p[2].z - z, p[0].y - y, p[0].z - z) / area;
    let w2 = 1.0 - w0 - w1;
    if w0 < -GRAZE_EPS || w1 < -GRAZE_EPS || w2 < -GRAZE_EPS {
        return LineHit::Miss;
    }
    if w0 <= GRAZE_EPS || w1 <= GRAZE_EPS || w2 <= GRAZE_EPS {
        return LineHit::Graze;
    }
    LineHit::Cross(w0 * p[0].x + w1 * p[1].x + w2 * p[2].x)
}
