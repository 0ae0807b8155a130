//! Incremental convex hull for points in convex position.

use std::collections::HashSet;

use nalgebra::{Point3, Vector3};

use crate::error::{Error, Result};

struct Face {
    v: [usize; 3],
    normal: Vector3<f64>,
    offset: f64,
}

impl Face {
    fn new(pts: &[Point3<f64>], v: [usize; 3]) -> Face {
        let n = (pts[v[1]] - pts[v[0]]).cross(&(pts[v[2]] - pts[v[0]]));
        let normal = n / n.norm();
        Face {
            v,
            normal,
            offset: normal.dot(&pts[v[0]].coords),
        }
    }

    fn height(&self, p: &Point3<f64>) -> f64 {
        self.normal.dot(&p.coords) - self.offset
    }
}

/// Outward-oriented triangles of the convex hull of `pts`.
///
/// Every point must be a hull vertex; points that end up strictly inside or
/// on the hull of earlier points are reported as an error.
pub fn convex_hull(pts: &[Point3<f64>]) -> Result<Vec<[usize; 3]>> {
    let n = pts.len();
    if n < 4 {
        return Err(Error::Generation("hull needs at least four points".into()));
    }
    let scale = pts
        .iter()
        .map(|p| p.coords.norm())
        .fold(0.0, f64::max)
        .max(1.0);
    let eps = 1e-12 * scale;

    let seed = initial_simplex(pts, eps)?;
    let centroid = seed
        .iter()
        .fold(Vector3::zeros(), |a, &i| a + pts[i].coords)
        / 4.0;
    let mut faces: Vec<Face> = Vec::new();
    for skip in 0..4 {
        let mut tri: Vec<usize> = (0..4).filter(|&k| k != skip).map(|k| seed[k]).collect();
        let mut f = Face::new(pts, [tri[0], tri[1], tri[2]]);
        if f.height(&Point3::from(centroid)) > 0.0 {
            tri.swap(1, 2);
            f = Face::new(pts, [tri[0], tri[1], tri[2]]);
        }
        faces.push(f);
    }

    for p in (0..n).filter(|i| !seed.contains(i)) {
        let visible: Vec<bool> = faces.iter().map(|f| f.height(&pts[p]) > eps).collect();
        if !visible.iter().any(|&v| v) {
            return Err(Error::Generation(format!(
                "point {p} is not in convex position"
            )));
        }
        let mut directed = HashSet::new();
        for (f, _) in faces.iter().zip(&visible).filter(|(_, v)| **v) {
            for k in 0..3 {
                directed.insert((f.v[k], f.v[(k + 1) % 3]));
            }
        }
        let mut horizon: Vec<(usize, usize)> = directed
            .iter()
            .copied()
            .filter(|&(a, b)| !directed.contains(&(b, a)))
            .collect();
        horizon.sort_unstable();
        let mut kept: Vec<Face> = faces
            .into_iter()
            .zip(&visible)
            .filter(|(_, v)| !**v)
            .map(|(f, _)| f)
            .collect();
        kept.extend(horizon.into_iter().map(|(a, b)| Face::new(pts, [a, b, p])));
        faces = kept;
    }
    Ok(faces.into_iter().map(|f| f.v).collect())
}

fn initial_simplex(pts: &[Point3<f64>], eps: f64) -> Result<[usize; 4]> {
    let a = 0;
    let b = (1..pts.len())
        .max_by(|&i, &j| {
            (pts[i] - pts[a])
                .norm()
                .total_cmp(&(pts[j] - pts[a]).norm())
        })
        .unwrap();
    let ab = pts[b] - pts[a];
    let c = (0..pts.len())
        .max_by(|&i, &j| {
            ab.cross(&(pts[i] - pts[a]))
                .norm()
                .total_cmp(&ab.cross(&(pts[j] - pts[a])).norm())
        })
        .unwrap();
    let normal = ab.cross(&(pts[c] - pts[a]));
    let d = (0..pts.len())
        .max_by(|&i, &j| {
            normal
                .dot(&(pts[i] - pts[a]))
                .abs()
                .total_cmp(&normal.dot(&(pts[j] - pts[a])).abs())
        })
        .unwrap();
    if normal.norm() <= eps || normal.dot(&(pts[d] - pts[a])).abs() <= eps * normal.norm() {
        return Err(Error::Generation("points are coplanar".into()));
    }
    Ok([a, b, c, d])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{mesh_volume, LobeLabel, Mesh};

    #[test]
    fn octahedron_hull() {
        let pts: Vec<Point3<f64>> = [
            [1.0, 0.0, 0.0],
            [-1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, -1.0, 0.0],
            [0.0, 0.0, 1.0],
            [0.0, 0.0, -1.0],
        ]
        .iter()
        .map(|p| Point3::from(*p))
        .collect();
        let tris = convex_hull(&pts).unwrap();
        assert_eq!(tris.len(), 8);
        let m = Mesh::new(pts, tris, LobeLabel::Upper).unwrap();
        m.check_closed_manifold().unwrap();
        assert!((crate::mesh::signed_volume(&m) - 4.0 / 3.0).abs() < 1e-12);
        assert!((mesh_volume(&m).unwrap() - 4.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn interior_point_is_rejected() {
        let mut pts: Vec<Point3<f64>> = vec![
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(0.0, 1.0, 0.0),
            Point3::new(0.0, 0.0, 1.0),
        ];
        pts.push(Point3::new(0.1, 0.1, 0.1));
        assert!(convex_hull(&pts).is_err());
        assert!(convex_hull(&pts[..3]).is_err());
    }
}
