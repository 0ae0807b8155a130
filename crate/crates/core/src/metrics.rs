//! Error measures between an estimated deflated mesh and the ground truth.

use std::fmt;
use std::str::FromStr;

use nalgebra::Point3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::landmarks::LandmarkOrdering;
use crate::mesh::{bounding_box, voxel::voxelize_on, GridSpec, LobeLabel, Mesh};

/// Grid resolution used when no DSC spacing is given: the union bounding-box
/// diagonal is split into this many cells.
pub const DEFAULT_DSC_DIVISIONS: f64 = 200.0;

/// Root-mean-square vertex error and the per-vertex error vector.
///
/// Vertices listed in `exclude` still appear in the per-vertex vector but are
/// left out of the mean.
pub fn rmse(predicted: &Mesh, truth: &Mesh, exclude: Option<&[usize]>) -> Result<(f64, Vec<f64>)> {
    if !predicted.same_topology(truth) {
        return Err(Error::arg(
            "predicted and ground-truth meshes differ in topology",
        ));
    }
    let errors: Vec<f64> = predicted
        .vertices()
        .iter()
        .zip(truth.vertices())
        .map(|(p, t)| (p - t).norm())
        .collect();
    let mut skip = vec![false; errors.len()];
    for &i in exclude.unwrap_or(&[]) {
        if i >= skip.len() {
            return Err(Error::arg(format!("excluded vertex {i} is out of range")));
        }
        skip[i] = true;
    }
    let kept: Vec<f64> = predicted
        .vertices()
        .iter()
        .zip(truth.vertices())
        .zip(&skip)
        .filter(|(_, s)| !**s)
        .map(|((p, t), _)| (p - t).norm_squared())
        .collect();
    if kept.is_empty() {
        return Err(Error::arg("no vertices left for the RMSE"));
    }
    let value = (kept.iter().sum::<f64>() / kept.len() as f64).sqrt();
    Ok((value, errors))
}

fn directed_hausdorff(a: &[Point3<f64>], b: &[Point3<f64>]) -> f64 {
    a.par_iter()
        .map(|p| {
            b.iter()
                .map(|q| (p - q).norm_squared())
                .fold(f64::INFINITY, f64::min)
        })
        .reduce(|| 0.0, f64::max)
        .sqrt()
}

/// Symmetric Hausdorff distance between the vertex sets of two meshes.
pub fn hausdorff(a: &Mesh, b: &Mesh) -> Result<f64> {
    hausdorff_points(a.vertices(), b.vertices())
}

pub fn hausdorff_points(a: &[Point3<f64>], b: &[Point3<f64>]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::arg("Hausdorff distance needs nonempty point sets"));
    }
    Ok(directed_hausdorff(a, b).max(directed_hausdorff(b, a)))
}

/// Mean and sample standard deviation; the deviation is 0 for fewer than two values.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dice {
    pub dsc: f64,
    pub spacing: f64,
}

/// Dice overlap of the two enclosed volumes, voxelized on one grid covering
/// both meshes. `spacing` defaults to the union diagonal / 200.
pub fn dsc(a: &Mesh, b: &Mesh, spacing: Option<f64>) -> Result<Dice> {
    let all: Vec<Point3<f64>> = a.vertices().iter().chain(b.vertices()).copied().collect();
    if all.is_empty() {
        return Err(Error::Geometry("cannot voxelize empty meshes".into()));
    }
    let (lo, hi) = bounding_box(&all);
    let spacing = spacing.unwrap_or((hi - lo).norm() / DEFAULT_DSC_DIVISIONS);
    let spec = GridSpec::covering(&lo, &hi, spacing)?;
    let ga = voxelize_on(a, &spec)?;
    let gb = voxelize_on(b, &spec)?;
    let total = ga.occupied_count() + gb.occupied_count();
    if total == 0 {
        return Err(Error::Geometry(format!(
            "no voxels occupied at spacing {spacing}"
        )));
    }
    let both = ga.intersection_count(&gb)?;
    Ok(Dice {
        dsc: 2.0 * both as f64 / total as f64,
        spacing,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Kernel,
    Affine,
    Tps,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Kernel, Method::Affine, Method::Tps];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Kernel => "kernel",
            Method::Affine => "affine",
            Method::Tps => "tps",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kernel" => Ok(Method::Kernel),
            "affine" | "af" => Ok(Method::Affine),
            "tps" => Ok(Method::Tps),
            _ => Err(Error::arg(format!("unknown method '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub case_id: String,
    pub method: Method,
    pub lobe: LobeLabel,
    pub landmark_count: usize,
    pub ordering: LandmarkOrdering,
    pub rmse_mm: f64,
    pub dsc: f64,
    pub hausdorff_mm: f64,
    pub spacing_mm: f64,
    pub per_vertex_error_mm: Vec<f64>,
}

/// Identifies the case and setting a report belongs to.
#[derive(Debug, Clone)]
pub struct ReportContext<'a> {
    pub case_id: &'a str,
    pub method: Method,
    pub lobe: LobeLabel,
    pub landmark_count: usize,
    pub ordering: LandmarkOrdering,
}

/// All three measures for one estimate. Landmark vertices are excluded from
/// the RMSE mean.
pub fn evaluate(
    ctx: &ReportContext<'_>,
    predicted: &Mesh,
    truth: &Mesh,
    landmarks: &[usize],
    spacing: Option<f64>,
) -> Result<EvaluationReport> {
    let (rmse_mm, per_vertex_error_mm) = rmse(predicted, truth, Some(landmarks))?;
    let Dice { dsc, spacing } = dsc(predicted, truth, spacing)?;
    Ok(EvaluationReport {
        case_id: ctx.case_id.to_string(),
        method: ctx.method,
        lobe: ctx.lobe,
        landmark_count: ctx.landmark_count,
        ordering: ctx.ordering,
        rmse_mm,
        dsc,
        hausdorff_mm: hausdorff(predicted, truth)?,
        spacing_mm: spacing,
        per_vertex_error_mm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::fixtures::{icosphere, unit_cube};
    use nalgebra::{Rotation3, Vector3};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(seed: u64, n: usize) -> Mesh {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = (0..n)
            .map(|_| {
                Point3::new(
                    rng.gen_range(-5.0..5.0),
                    rng.gen_range(-5.0..5.0),
                    rng.gen_range(-5.0..5.0),
                )
            })
            .collect();
        Mesh::new(pts, vec![], LobeLabel::Upper).unwrap()
    }

    fn points(ps: &[[f64; 3]]) -> Mesh {
        Mesh::new(
            ps.iter().map(|p| Point3::from(*p)).collect(),
            vec![],
            LobeLabel::Upper,
        )
        .unwrap()
    }

    #[test]
    fn std_convention() {
        assert_eq!(mean_std(&[2.0]), (2.0, 0.0));
        assert_eq!(mean_std(&[1.0, 2.0, 3.0]), (2.0, 1.0));
        assert!(mean_std(&[]).0.is_nan());
    }

    #[test]
    fn rmse_cases() {
        let m = icosphere(4.0, 1);
        assert_eq!(rmse(&m, &m, None).unwrap().0, 0.0);
        let shifted = m.translated(&Vector3::new(3.0, 0.0, 0.0));
        let (r, e) = rmse(&shifted, &m, None).unwrap();
        assert!((r - 3.0).abs() < 1e-12);
        assert_eq!(e.len(), m.vertex_count());
        assert!(rmse(&m, &icosphere(4.0, 2), None).is_err());
    }

    #[test]
    fn rmse_matches_naive_loop_and_excludes_landmarks() {
        let (a, b) = (cloud(1, 10), cloud(2, 10));
        let mut sum = 0.0;
        for i in 0..10 {
            let mut s = 0.0;
            for c in 0..3 {
                s += (a.vertex(i)[c] - b.vertex(i)[c]).powi(2);
            }
            if i != 3 && i != 7 {
                sum += s;
            }
        }
        let (r, e) = rmse(&a, &b, Some(&[3, 7])).unwrap();
        assert_eq!(r, (sum / 8.0).sqrt());
        assert_eq!(e[3], (a.vertex(3) - b.vertex(3)).norm());
        assert!(rmse(&a, &b, Some(&[10])).is_err());
    }

    #[test]
    fn hausdorff_cases() {
        let m = cloud(3, 20);
        assert_eq!(hausdorff(&m, &m).unwrap(), 0.0);
        assert_eq!(
            hausdorff(&points(&[[0.0; 3]]), &points(&[[3.0, 4.0, 0.0]])).unwrap(),
            5.0
        );
        let a = points(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
        let b = points(&[[0.0, 0.0, 0.0], [10.0, 0.0, 0.0]]);
        assert_eq!(hausdorff(&a, &b).unwrap(), 9.0);
        assert!(hausdorff_points(&[], &[Point3::origin()]).is_err());
    }

    #[test]
    fn hausdorff_matches_exhaustive_loops() {
        let (a, b) = (cloud(4, 30), cloud(5, 17));
        let h = |x: &Mesh, y: &Mesh| {
            let mut worst: f64 = 0.0;
            for p in x.vertices() {
                let mut best = f64::INFINITY;
                for q in y.vertices() {
                    best = best.min(
                        ((p.x - q.x).powi(2) + (p.y - q.y).powi(2) + (p.z - q.z).powi(2)).sqrt(),
                    );
                }
                worst = worst.max(best);
            }
            worst
        };
        assert_eq!(hausdorff(&a, &b).unwrap(), h(&a, &b).max(h(&b, &a)));
    }

    #[test]
    fn dsc_cases() {
        let c = unit_cube(Vector3::zeros());
        let same = dsc(&c, &c, None).unwrap();
        assert_eq!(same.dsc, 1.0);
        assert!((same.spacing - 3f64.sqrt() / 200.0).abs() < 1e-15);
        let far = unit_cube(Vector3::new(3.0, 0.0, 0.0));
        assert_eq!(dsc(&c, &far, Some(0.1)).unwrap().dsc, 0.0);
        let half = unit_cube(Vector3::new(0.5, 0.0, 0.0));
        let d = dsc(&c, &half, Some(0.05)).unwrap();
        assert!((d.dsc - 0.5).abs() <= 0.02, "{}", d.dsc);
        assert_eq!(d.spacing, 0.05);
    }

    #[test]
    fn dsc_is_symmetric_and_rigid_invariant() {
        let a = icosphere(5.0, 2);
        let b = icosphere(4.0, 2).translated(&Vector3::new(1.5, 0.5, 0.0));
        let ab = dsc(&a, &b, Some(0.2)).unwrap().dsc;
        assert_eq!(ab, dsc(&b, &a, Some(0.2)).unwrap().dsc);
        let r = Rotation3::from_euler_angles(0.3, -0.7, 1.1);
        let t = Vector3::new(10.0, -3.0, 7.0);
        let (ra, rb) = (a.map_vertices(|p| r * p + t), b.map_vertices(|p| r * p + t));
        let moved = dsc(&ra, &rb, Some(0.2)).unwrap().dsc;
        assert!((ab - moved).abs() < 0.02, "{ab} vs {moved}");
    }

    #[test]
    fn report_carries_context() {
        let m = icosphere(5.0, 1);
        let moved = m.translated(&Vector3::new(0.5, 0.0, 0.0));
        let ctx = ReportContext {
            case_id: "c1",
            method: Method::Tps,
            lobe: LobeLabel::Lower,
            landmark_count: 6,
            ordering: LandmarkOrdering::Experiment1,
        };
        let r = evaluate(&ctx, &moved, &m, &[0, 1], None).unwrap();
        assert!((r.rmse_mm - 0.5).abs() < 1e-12);
        assert!(r.dsc > 0.8 && r.dsc < 1.0);
        assert!(r.hausdorff_mm > 0.0);
        let json = serde_json::to_value(&r).unwrap();
        assert_eq!(json["method"], "tps");
        assert_eq!(json["lobe"], "lower");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn hausdorff_is_a_metric_on_samples(s in 0u64..10_000) {
            let (a, b, c) = (cloud(s, 8), cloud(s + 1, 9), cloud(s + 2, 7));
            let ab = hausdorff(&a, &b).unwrap();
            prop_assert_eq!(ab, hausdorff(&b, &a).unwrap());
            prop_assert!(ab > 0.0);
            prop_assert!(ab <= hausdorff(&a, &c).unwrap() + hausdorff(&c, &b).unwrap() + 1e-12);
        }

        #[test]
        fn rmse_between_mean_and_max(s in 0u64..10_000) {
            let (a, b) = (cloud(s, 12), cloud(s + 5, 12));
            let (r, e) = rmse(&a, &b, None).unwrap();
            let mean = e.iter().sum::<f64>() / e.len() as f64;
            let max = e.iter().copied().fold(0.0, f64::max);
            prop_assert!(mean <= r + 1e-12 && r <= max + 1e-12);
        }
    }
}
