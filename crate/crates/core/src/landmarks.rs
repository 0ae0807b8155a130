//! Landmark placement along a lobe's outer contour and the two subset
//! orderings used by the landmark-count experiments.
//!
//! Landmarks are numbered 1..=12 around the contour, starting at the
//! major-fissure corner. Three corners are placed first, then arc-length
//! midpoints between consecutive corners, then midpoints again, so that
//! numbers 1–5 span the fissure side.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::{Point3, Unit, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::Mesh;

pub const LANDMARK_COUNT: usize = 12;

/// Experiment 2 adds landmarks sparsely first, then fills the gaps.
pub const EXPERIMENT2_ORDER: [usize; LANDMARK_COUNT] = [1, 5, 3, 9, 7, 11, 2, 4, 6, 8, 10, 12];

/// Order in which landmarks are added as the active count grows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LandmarkOrdering {
    /// Contiguously along the contour: 1, 2, ..., 12.
    Experiment1,
    /// Sparse first: 1, 5, 3, 9, 7, 11, 2, 4, 6, 8, 10, 12.
    Experiment2,
}

impl LandmarkOrdering {
    /// Landmark numbers (1-based) in the order they are activated.
    pub fn sequence(&self) -> [usize; LANDMARK_COUNT] {
        match self {
            LandmarkOrdering::Experiment1 => std::array::from_fn(|i| i + 1),
            LandmarkOrdering::Experiment2 => EXPERIMENT2_ORDER,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            LandmarkOrdering::Experiment1 => "experiment1",
            LandmarkOrdering::Experiment2 => "experiment2",
        }
    }
}

impl fmt::Display for LandmarkOrdering {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LandmarkOrdering {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "experiment1" | "1" => Ok(LandmarkOrdering::Experiment1),
            "experiment2" | "2" => Ok(LandmarkOrdering::Experiment2),
            other => Err(Error::arg(format!("unknown landmark ordering `{other}`"))),
        }
    }
}

/// Twelve landmark vertex indices in contour order plus the active subset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LandmarkConfig {
    pub full_indices: Vec<usize>,
    pub active_count: usize,
    pub ordering: LandmarkOrdering,
}

impl LandmarkConfig {
    pub fn new(
        full_indices: Vec<usize>,
        active_count: usize,
        ordering: LandmarkOrdering,
    ) -> Result<Self> {
        let cfg = Self {
            full_indices,
            active_count,
            ordering,
        };
        cfg.validate(None)?;
        Ok(cfg)
    }

    /// Checks count, distinctness and, when given, index range.
    pub fn validate(&self, vertex_count: Option<usize>) -> Result<()> {
        validate_indices(&self.full_indices, vertex_count)?;
        if self.active_count == 0 || self.active_count > LANDMARK_COUNT {
            return Err(Error::arg(format!(
                "active landmark count must be in 1..={LANDMARK_COUNT}, got {}",
                self.active_count
            )));
        }
        Ok(())
    }

    pub fn with_active(&self, active_count: usize, ordering: LandmarkOrdering) -> Self {
        Self {
            full_indices: self.full_indices.clone(),
            active_count,
            ordering,
        }
    }
}

pub(crate) fn validate_indices(indices: &[usize], vertex_count: Option<usize>) -> Result<()> {
    if indices.len() != LANDMARK_COUNT {
        return Err(Error::arg(format!(
            "expected {LANDMARK_COUNT} landmark indices, got {}",
            indices.len()
        )));
    }
    let mut sorted = indices.to_vec();
    sorted.sort_unstable();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::arg(format!(
            "landmark indices are not distinct: {indices:?}"
        )));
    }
    if let Some(n) = vertex_count {
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(Error::arg(format!(
                "landmark index {bad} out of range for {n} vertices"
            )));
        }
    }
    Ok(())
}

/// Active landmark vertex indices, in activation order.
pub fn select_landmarks(config: &LandmarkConfig) -> Result<Vec<usize>> {
    config.validate(None)?;
    Ok(config.ordering.sequence()[..config.active_count]
        .iter()
        .map(|&number| config.full_indices[number - 1])
        .collect())
}

/// Plane whose intersection with the lobe surface is the outer contour.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContourPlane {
    pub point: Point3<f64>,
    pub normal: Vector3<f64>,
}

/// Closed polyline of a plane section, with the mesh vertices adjacent to it.
#[derive(Debug, Clone)]
pub struct Contour {
    pub points: Vec<Point3<f64>>,
    /// Cumulative arc length at each point; `arc[0] == 0`.
    arc: Vec<f64>,
    length: f64,
    /// Endpoints of the mesh edges cut by the plane.
    pub vertices: Vec<usize>,
}

impl Contour {
    pub fn length(&self) -> f64 {
        self.length
    }

    /// Point at arc length `s` (taken modulo the loop length).
    pub fn point_at(&self, s: f64) -> Point3<f64> {
        let s = s.rem_euclid(self.length);
        let n = self.points.len();
        let seg = match self.arc.binary_search_by(|a| a.total_cmp(&s)) {
            Ok(i) => return self.points[i % n],
            Err(i) => i - 1,
        };
        let a = self.points[seg];
        let b = self.points[(seg + 1) % n];
        let seg_len = self.arc.get(seg + 1).copied().unwrap_or(self.length) - self.arc[seg];
        if seg_len <= 0.0 {
            return a;
        }
        a + (b - a) * ((s - self.arc[seg]) / seg_len)
    }

    /// Arc-length parameter of the polyline point closest to `q`.
    pub fn project(&self, q: &Point3<f64>) -> f64 {
        let n = self.points.len();
        let mut best = (f64::INFINITY, 0.0);
        for i in 0..n {
            let a = self.points[i];
            let b = self.points[(i + 1) % n];
            let ab = b - a;
            let len2 = ab.norm_squared();
            let t = if len2 > 0.0 {
                ((q - a).dot(&ab) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let d = (a + ab * t - q).norm_squared();
            if d < best.0 {
                best = (d, self.arc[i] + t * len2.sqrt());
            }
        }
        best.1
    }

    /// Minimum distance from `q` to the polyline.
    pub fn distance(&self, q: &Point3<f64>) -> f64 {
        (self.point_at(self.project(q)) - q).norm()
    }
}

/// Intersects the mesh with `plane` and returns the longest closed loop.
/// Vertices exactly on the plane count as lying on the positive side.
pub fn plane_section(mesh: &Mesh, plane: &ContourPlane) -> Result<Contour> {
    let normal = Unit::try_new(plane.normal, 1e-12)
        .ok_or_else(|| Error::arg("contour plane normal is zero"))?;
    let verts = mesh.vertices();
    let dist: Vec<f64> = verts
        .iter()
        .map(|p| (p - plane.point).dot(&normal))
        .collect();
    let cut = |a: usize, b: usize| (dist[a] < 0.0) != (dist[b] < 0.0);
    let key = |a: usize, b: usize| (a.min(b), a.max(b));

    // Each straddling triangle links its two cut edges.
    let mut links: HashMap<(usize, usize), Vec<(usize, usize)>> = HashMap::new();
    for t in mesh.triangles() {
        let cuts: Vec<(usize, usize)> = (0..3)
            .map(|k| (t[k], t[(k + 1) % 3]))
            .filter(|&(a, b)| cut(a, b))
            .map(|(a, b)| key(a, b))
            .collect();
        if cuts.len() == 2 {
            links.entry(cuts[0]).or_default().push(cuts[1]);
            links.entry(cuts[1]).or_default().push(cuts[0]);
        }
    }
    if links.is_empty() {
        return Err(Error::Geometry(
            "contour plane does not cut the mesh".into(),
        ));
    }
    if links.values().any(|v| v.len() != 2) {
        return Err(Error::Geometry(
            "plane section is not a set of closed loops".into(),
        ));
    }

    let mut starts: Vec<(usize, usize)> = links.keys().copied().collect();
    starts.sort_unstable();
    let mut visited: HashMap<(usize, usize), bool> = HashMap::new();
    let mut best: Option<(f64, Vec<(usize, usize)>)> = None;
    for start in starts {
        if visited.contains_key(&start) {
            continue;
        }
        let mut chain = vec![start];
        visited.insert(start, true);
        let mut prev = start;
        let mut cur = links[&start][0];
        while cur != start {
            visited.insert(cur, true);
            chain.push(cur);
            let next = links[&cur]
                .iter()
                .copied()
                .find(|&e| e != prev)
                .unwrap_or(prev);
            prev = cur;
            cur = next;
        }
        let pts: Vec<Point3<f64>> = chain
            .iter()
            .map(|&(a, b)| edge_point(verts, &dist, a, b))
            .collect();
        let len: f64 = (0..pts.len())
            .map(|i| (pts[(i + 1) % pts.len()] - pts[i]).norm())
            .sum();
        if best.as_ref().is_none_or(|(l, _)| len > *l) {
            best = Some((len, chain));
        }
    }
    let (length, chain) = best.expect("at least one loop");

    let points: Vec<Point3<f64>> = chain
        .iter()
        .map(|&(a, b)| edge_point(verts, &dist, a, b))
        .collect();
    let mut arc = Vec::with_capacity(points.len());
    let mut acc = 0.0;
    for i in 0..points.len() {
        arc.push(acc);
        acc += (points[(i + 1) % points.len()] - points[i]).norm();
    }
    let mut vertices: Vec<usize> = chain.iter().flat_map(|&(a, b)| [a, b]).collect();
    vertices.sort_unstable();
    vertices.dedup();
    Ok(Contour {
        points,
        arc,
        length,
        vertices,
    })
}

fn edge_point(verts: &[Point3<f64>], dist: &[f64], a: usize, b: usize) -> Point3<f64> {
    let t = dist[a] / (dist[a] - dist[b]);
    verts[a] + (verts[b] - verts[a]) * t
}

/// Arc-length parameters of the twelve landmarks, given the three corner
/// parameters in numbering order and the loop length. The traversal
/// direction is the one that meets corner 2 before corner 3.
pub fn landmark_arc_positions(corners: [f64; 3], length: f64) -> [f64; LANDMARK_COUNT] {
    let fwd = |from: f64, to: f64| (to - from).rem_euclid(length);
    let forward = fwd(corners[0], corners[1]) < fwd(corners[0], corners[2]);
    let dir = if forward { 1.0 } else { -1.0 };
    // Unwrapped positions along the traversal direction.
    let gap = |a: f64, b: f64| if forward { fwd(a, b) } else { fwd(b, a) };
    let s1 = corners[0];
    let s5 = s1 + dir * gap(corners[0], corners[1]);
    let s9 = s5 + dir * gap(corners[1], corners[2]);
    let s13 = s1 + dir * length;
    let mut out = [0.0; LANDMARK_COUNT];
    for (seg, (a, b)) in [(s1, s5), (s5, s9), (s9, s13)].into_iter().enumerate() {
        for q in 0..4 {
            out[seg * 4 + q] = (a + (b - a) * q as f64 / 4.0).rem_euclid(length);
        }
    }
    out
}

/// Places 12 contour landmarks from three corner hints.
///
/// Corners are snapped to the nearest contour vertex; each midpoint is taken
/// at the arc-length midpoint along the section polyline and snapped to the
/// nearest contour vertex not already used. The result is numbered from
/// corner 1 towards corner 2, so numbers 1–5 lie between corners 1 and 2.
pub fn place_contour_landmarks(
    mesh: &Mesh,
    corner_hints: &[Point3<f64>; 3],
    plane: &ContourPlane,
) -> Result<LandmarkConfig> {
    let contour = plane_section(mesh, plane)?;
    let verts = mesh.vertices();
    let nearest = |q: &Point3<f64>, used: &[usize]| {
        contour
            .vertices
            .iter()
            .copied()
            .filter(|v| !used.contains(v))
            .min_by(|&a, &b| {
                (verts[a] - q)
                    .norm_squared()
                    .total_cmp(&(verts[b] - q).norm_squared())
                    .then(a.cmp(&b))
            })
    };

    let mut corners = [0usize; 3];
    for (k, hint) in corner_hints.iter().enumerate() {
        corners[k] = nearest(hint, &[]).expect("contour has vertices");
    }
    if corners[0] == corners[1] || corners[1] == corners[2] || corners[0] == corners[2] {
        return Err(Error::DegenerateLandmark(format!(
            "corner hints snap to coincident vertices {corners:?}"
        )));
    }
    let params = corners.map(|c| contour.project(&verts[c]));
    let positions = landmark_arc_positions(params, contour.length());

    let mut full = vec![usize::MAX; LANDMARK_COUNT];
    for (slot, c) in [0usize, 4, 8].into_iter().zip(corners) {
        full[slot] = c;
    }
    // Midpoints first, then quarter points, mirroring the construction order.
    let passes: [&[usize]; 2] = [&[2, 6, 10], &[1, 3, 5, 7, 9, 11]];
    for slots in passes {
        for &slot in slots {
            let target = contour.point_at(positions[slot]);
            let used: Vec<usize> = full.iter().copied().filter(|&i| i != usize::MAX).collect();
            full[slot] = nearest(&target, &used).ok_or_else(|| {
                Error::DegenerateLandmark("contour has too few vertices for 12 landmarks".into())
            })?;
        }
    }
    LandmarkConfig::new(full, LANDMARK_COUNT, LandmarkOrdering::Experiment1)
}
