//! Volume, centroid and point containment.

use nalgebra::{Point3, Vector3};

use super::Mesh;
use crate::error::{Error, Result};

/// Signed volume from the tetrahedra `(origin, a, b, c)` over all triangles.
/// Positive for outward-oriented closed meshes. Does not check topology.
pub fn signed_volume(mesh: &Mesh) -> f64 {
    let v = mesh.vertices();
    // Accumulate relative to the first vertex to limit cancellation far from the origin.
    let anchor = v.first().map(|p| p.coords).unwrap_or_else(Vector3::zeros);
    mesh.triangles()
        .iter()
        .map(|t| {
            let a = v[t[0]].coords - anchor;
            let b = v[t[1]].coords - anchor;
            let c = v[t[2]].coords - anchor;
            a.dot(&b.cross(&c))
        })
        .sum::<f64>()
        / 6.0
}

/// Enclosed volume in mm³ of a closed, consistently oriented mesh.
pub fn mesh_volume(mesh: &Mesh) -> Result<f64> {
    mesh.check_closed_manifold()?;
    Ok(signed_volume(mesh).abs())
}

/// Arithmetic mean of a nonempty point list.
pub fn centroid(points: &[Point3<f64>]) -> Result<Point3<f64>> {
    if points.is_empty() {
        return Err(Error::arg("centroid of an empty point list"));
    }
    let sum = points
        .iter()
        .fold(Vector3::zeros(), |acc, p| acc + p.coords);
    Ok(Point3::from(sum / points.len() as f64))
}

/// Primary ray direction followed by the fixed alternates used when a ray
/// grazes an edge or vertex.
#[allow(clippy::approx_constant)]
const RAY_DIRECTIONS: [[f64; 3]; 4] = [
    [1.0, 0.0, 0.0],
    [0.577_215_664_9, 0.707_106_781_2, 0.408_248_290_4],
    [-0.301_029_995_7, 0.618_033_988_7, -0.726_542_528_0],
    [0.141_421_356_2, -0.836_660_026_5, 0.529_150_262_2],
];

const GRAZE_EPS: f64 = 1e-9;

enum Hit {
    Miss,
    Cross,
    Degenerate,
}

fn ray_triangle(
    origin: &Point3<f64>,
    dir: &Vector3<f64>,
    a: &Point3<f64>,
    b: &Point3<f64>,
    c: &Point3<f64>,
) -> Hit {
    // Möller–Trumbore with explicit grazing detection.
    let e1 = b - a;
    let e2 = c - a;
    let p = dir.cross(&e2);
    let det = e1.dot(&p);
    let scale = e1.norm() * e2.norm();
    if det.abs() <= 1e-12 * scale {
        return Hit::Miss;
    }
    let inv = 1.0 / det;
    let s = origin - a;
    let u = s.dot(&p) * inv;
    let q = s.cross(&e1);
    let v = dir.dot(&q) * inv;
    let t = e2.dot(&q) * inv;
    let w = 1.0 - u - v;
    if u < -GRAZE_EPS || v < -GRAZE_EPS || w < -GRAZE_EPS || t < -GRAZE_EPS {
        return Hit::Miss;
    }
    if u <= GRAZE_EPS || v <= GRAZE_EPS || w <= GRAZE_EPS || t.abs() <= GRAZE_EPS {
        return Hit::Degenerate;
    }
    Hit::Cross
}

/// Point-in-mesh test by ray-crossing parity. When the primary ray grazes an
/// edge or vertex, up to three fixed alternate directions are tried. The mesh
/// is assumed to be closed; callers check that once up front.
pub fn contains_point(mesh: &Mesh, point: &Point3<f64>) -> bool {
    let v = mesh.vertices();
    let mut parity = false;
    for d in RAY_DIRECTIONS {
        let dir = Vector3::new(d[0], d[1], d[2]);
        let mut crossings = 0usize;
        let mut degenerate = false;
        for t in mesh.triangles() {
            match ray_triangle(point, &dir, &v[t[0]], &v[t[1]], &v[t[2]]) {
                Hit::Miss => {}
                Hit::Cross => crossings += 1,
                Hit::Degenerate => {
                    degenerate = true;
                    break;
                }
            }
        }
        parity = crossings % 2 == 1;
        if !degenerate {
            break;
        }
    }
    parity
}
