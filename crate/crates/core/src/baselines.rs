//! Landmark-driven comparison warps: a least-squares affine map and a 3-D
//! thin-plate spline with `U(r) = r`.

use nalgebra::{DMatrix, Matrix3, Matrix4x3, Point3, Vector3};

use crate::error::{Error, Result};
use crate::mesh::Mesh;

/// Relative singular-value threshold for the landmark configuration.
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineTransform {
    pub linear: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl AffineTransform {
    pub fn identity() -> Self {
        AffineTransform {
            linear: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn apply_point(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.linear * p.coords + self.translation)
    }
}

/// Rank of the `[src | 1]` design matrix.
fn design_rank(src: &[Point3<f64>]) -> usize {
    if src.is_empty() {
        return 0;
    }
    let c = src.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / src.len() as f64;
    let centered = DMatrix::from_fn(src.len(), 3, |i, j| src[i][j] - c[j]);
    let sv = centered.singular_values();
    let max = sv.max();
    let spatial = if max > 0.0 {
        sv.iter().filter(|s| **s > RANK_TOL * max).count()
    } else {
        0
    };
    spatial + 1
}

fn check_pairs(src: &[Point3<f64>], dst: &[Point3<f64>]) -> Result<()> {
    if src.len() != dst.len() {
        return Err(Error::arg(format!(
            "{} source but {} target landmarks",
            src.len(),
            dst.len()
        )));
    }
    if src
        .iter()
        .chain(dst)
        .any(|p| !p.iter().all(|v| v.is_finite()))
    {
        return Err(Error::arg("landmarks must be finite"));
    }
    Ok(())
}

/// Least-squares affine map taking `src` onto `dst`.
pub fn fit_affine(src: &[Point3<f64>], dst: &[Point3<f64>]) -> Result<AffineTransform> {
    check_pairs(src, dst)?;
    let rank = design_rank(src);
    if rank < 4 {
        return Err(Error::Degenerate {
            what: "affine landmark design",
            rank,
            required: 4,
        });
    }
    let l = src.len();
    let design = DMatrix::from_fn(l, 4, |i, j| if j < 3 { src[i][j] } else { 1.0 });
    let rhs = DMatrix::from_fn(l, 3, |i, j| dst[i][j]);
    let sol = design
        .svd(true, true)
        .solve(&rhs, 0.0)
        .map_err(|e| Error::Geometry(format!("affine solve failed: {e}")))?;
    let linear = Matrix3::from_fn(|r, c| sol[(c, r)]);
    let translation = Vector3::new(sol[(3, 0)], sol[(3, 1)], sol[(3, 2)]);
    Ok(AffineTransform {
        linear,
        translation,
    })
}

pub fn apply_affine(t: &AffineTransform, mesh: &Mesh) -> Mesh {
    mesh.map_vertices(|p| t.apply_point(p))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TpsWarp {
    pub control_points: Vec<Point3<f64>>,
    pub nonlinear_weights: Vec<Vector3<f64>>,
    /// Rows multiply `[1, x, y, z]`.
    pub affine_part: Matrix4x3<f64>,
    pub regularization: f64,
}

impl TpsWarp {
    pub fn apply_point(&self, v: &Point3<f64>) -> Point3<f64> {
        let a = &self.affine_part;
        let mut out = a.row(0).transpose() + a.fixed_rows::<3>(1).transpose() * v.coords;
        for (p, w) in self.control_points.iter().zip(&self.nonlinear_weights) {
            out += w * (v - p).norm();
        }
        Point3::from(out)
    }
}

/// Solves `[[Φ + ρE, P], [Pᵀ, 0]] [w; a] = [dst; 0]` with `Φ_jk = ‖p_j − p_k‖`
/// and `P = [1 | src]`.
pub fn fit_tps(src: &[Point3<f64>], dst: &[Point3<f64>], regularization: f64) -> Result<TpsWarp> {
    check_pairs(src, dst)?;
    if !(regularization >= 0.0 && regularization.is_finite()) {
        return Err(Error::arg("TPS regularization must be nonnegative"));
    }
    let rank = design_rank(src);
    if rank < 4 {
        return Err(Error::Degenerate {
            what: "thin-plate spline control points",
            rank,
            required: 4,
        });
    }
    let l = src.len();
    let scale = src
        .iter()
        .map(|p| p.coords.norm())
        .fold(0.0, f64::max)
        .max(1.0);
    for j in 0..l {
        for k in 0..j {
            if (src[j] - src[k]).norm() <= 1e-12 * scale {
                return Err(Error::Degenerate {
                    what: "thin-plate spline control points",
                    rank: l - 1,
                    required: l,
                });
            }
        }
    }
    let n = l + 4;
    let mut sys = DMatrix::<f64>::zeros(n, n);
    for j in 0..l {
        for k in 0..l {
            sys[(j, k)] = (src[j] - src[k]).norm();
        }
        sys[(j, j)] += regularization;
        sys[(j, l)] = 1.0;
        sys[(l, j)] = 1.0;
        for c in 0..3 {
            sys[(j, l + 1 + c)] = src[j][c];
            sys[(l + 1 + c, j)] = src[j][c];
        }
    }
    let mut rhs = DMatrix::<f64>::zeros(n, 3);
    for j in 0..l {
        for c in 0..3 {
            rhs[(j, c)] = dst[j][c];
        }
    }
    let sol = sys.full_piv_lu().solve(&rhs).ok_or(Error::Degenerate {
        what: "thin-plate spline system",
        rank: n - 1,
        required: n,
    })?;
    Ok(TpsWarp {
        control_points: src.to_vec(),
        nonlinear_weights: (0..l)
            .map(|j| Vector3::new(sol[(j, 0)], sol[(j, 1)], sol[(j, 2)]))
            .collect(),
        affine_part: Matrix4x3::from_fn(|r, c| sol[(l + r, c)]),
        regularization,
    })
}

pub fn apply_tps(warp: &TpsWarp, mesh: &Mesh) -> Mesh {
    mesh.map_vertices(|p| warp.apply_point(p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::fixtures::icosphere;
    use crate::mesh::mesh_volume;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_points(seed: u64, n: usize) -> Vec<Point3<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                Point3::new(
                    rng.gen_range(-50.0..50.0),
                    rng.gen_range(-50.0..50.0),
                    rng.gen_range(-50.0..50.0),
                )
            })
            .collect()
    }

    fn known_affine() -> AffineTransform {
        AffineTransform {
            linear: Matrix3::new(1.2, -0.3, 0.1, 0.05, 0.9, 0.2, -0.1, 0.15, 1.1),
            translation: Vector3::new(3.0, -7.5, 12.25),
        }
    }

    #[test]
    fn affine_identity_on_equal_sets() {
        let src = random_points(1, 4);
        let t = fit_affine(&src, &src).unwrap();
        assert!((t.linear - Matrix3::identity()).abs().max() < 1e-10);
        assert!(t.translation.abs().max() < 1e-10);
    }

    #[test]
    fn affine_recovers_known_map() {
        let src = random_points(2, 6);
        let a0 = known_affine();
        let dst: Vec<_> = src.iter().map(|p| a0.apply_point(p)).collect();
        let t = fit_affine(&src, &dst).unwrap();
        assert!((t.linear - a0.linear).abs().max() < 1e-8);
        assert!((t.translation - a0.translation).abs().max() < 1e-8);
    }

    #[test]
    fn three_or_coplanar_landmarks_are_degenerate() {
        let src = random_points(3, 3);
        for r in [
            fit_affine(&src, &src).map(|_| ()),
            fit_tps(&src, &src, 0.0).map(|_| ()),
        ] {
            assert!(
                matches!(
                    r,
                    Err(Error::Degenerate {
                        rank: 3,
                        required: 4,
                        ..
                    })
                ),
                "{r:?}"
            );
        }
        let flat: Vec<_> = random_points(4, 8)
            .into_iter()
            .map(|p| Point3::new(p.x, p.y, 2.0))
            .collect();
        assert!(matches!(
            fit_affine(&flat, &flat),
            Err(Error::Degenerate { .. })
        ));
        let line: Vec<_> = (0..5)
            .map(|i| Point3::new(i as f64, 2.0 * i as f64, 0.0))
            .collect();
        assert!(matches!(
            fit_tps(&line, &line, 0.0),
            Err(Error::Degenerate { rank: 2, .. })
        ));
    }

    #[test]
    fn apply_affine_cases() {
        let m = icosphere(3.0, 1);
        let moved = m.translated(&Vector3::new(1.0, 2.0, 3.0));
        let same = apply_affine(&AffineTransform::identity(), &moved);
        for (a, b) in same.vertices().iter().zip(moved.vertices()) {
            for c in 0..3 {
                assert_eq!(a[c].to_bits(), b[c].to_bits());
            }
        }
        let t = AffineTransform {
            linear: Matrix3::identity(),
            translation: Vector3::new(-1.0, 0.5, 4.0),
        };
        let shifted = apply_affine(&t, &m);
        for (a, b) in shifted.vertices().iter().zip(m.vertices()) {
            assert!((a - b - t.translation).norm() < 1e-12);
        }
        let s = AffineTransform {
            linear: Matrix3::identity() * 1.7,
            translation: Vector3::zeros(),
        };
        let v0 = mesh_volume(&m).unwrap();
        let v1 = mesh_volume(&apply_affine(&s, &m)).unwrap();
        assert!((v1 / v0 - 1.7f64.powi(3)).abs() < 1e-10);
        assert_eq!(shifted.triangles(), m.triangles());
    }

    #[test]
    fn tps_identity() {
        let src = random_points(5, 7);
        let w = fit_tps(&src, &src, 0.0).unwrap();
        assert!(w.nonlinear_weights.iter().all(|v| v.norm() < 1e-10));
        let mut expect = Matrix4x3::zeros();
        expect
            .fixed_rows_mut::<3>(1)
            .copy_from(&Matrix3::identity());
        assert!((w.affine_part - expect).abs().max() < 1e-9);
    }

    #[test]
    fn tps_reproduces_affine_data() {
        let src = random_points(6, 8);
        let a0 = known_affine();
        let dst: Vec<_> = src.iter().map(|p| a0.apply_point(p)).collect();
        let w = fit_tps(&src, &dst, 0.0).unwrap();
        let wn: f64 = w
            .nonlinear_weights
            .iter()
            .map(|v| v.norm_squared())
            .sum::<f64>()
            .sqrt();
        assert!(wn < 1e-8, "{wn}");
        let af = fit_affine(&src, &dst).unwrap();
        assert!(
            (w.affine_part.fixed_rows::<3>(1).transpose() - af.linear)
                .abs()
                .max()
                < 1e-8
        );
        assert!(
            (w.affine_part.row(0).transpose() - af.translation)
                .abs()
                .max()
                < 1e-7
        );
    }

    #[test]
    fn tps_interpolates_controls() {
        let src = random_points(7, 10);
        let dst: Vec<_> = src
            .iter()
            .map(|p| p + Vector3::new((p.y * 0.1).sin() * 5.0, p.x * p.z * 1e-3, 0.0))
            .collect();
        let w = fit_tps(&src, &dst, 0.0).unwrap();
        let max = src
            .iter()
            .zip(&dst)
            .map(|(s, d)| (w.apply_point(s) - d).norm())
            .fold(0.0, f64::max);
        assert!(max < 1e-6, "{max}");
        let m = Mesh::new(src.clone(), vec![], crate::mesh::LobeLabel::Upper).unwrap();
        let warped = apply_tps(&w, &m);
        assert!((warped.vertex(3) - dst[3]).norm() < 1e-6);
    }

    #[test]
    fn tps_far_field_is_affine() {
        let src = random_points(8, 10);
        let dst: Vec<_> = src
            .iter()
            .map(|p| p + Vector3::new((p.y * 0.1).sin() * 5.0, 0.0, p.x.cos()))
            .collect();
        let w = fit_tps(&src, &dst, 0.0).unwrap();
        let diag = 100.0 * 3f64.sqrt();
        let v = Point3::new(0.6, -0.3, 0.74) * (1e3 * diag);
        let full = w.apply_point(&v).coords;
        let affine = w.affine_part.row(0).transpose()
            + w.affine_part.fixed_rows::<3>(1).transpose() * v.coords;
        assert!((full - affine).norm() / affine.norm() < 1e-3);
        let zero = TpsWarp {
            nonlinear_weights: vec![Vector3::zeros(); 10],
            ..w.clone()
        };
        assert_eq!(zero.apply_point(&v).coords, affine);
    }

    #[test]
    fn coincident_controls_are_degenerate() {
        let mut src = random_points(9, 6);
        src.push(src[2]);
        assert!(matches!(
            fit_tps(&src, &src, 0.0),
            Err(Error::Degenerate { .. })
        ));
        assert!(fit_tps(&src[..6], &src[..6], 0.0).is_ok());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn tps_side_conditions_hold(seed in 0u64..10_000, l in 4usize..14, rho in 0.0f64..2.0) {
            let src = random_points(seed, l);
            let dst = random_points(seed + 1, l);
            let w = fit_tps(&src, &dst, rho).unwrap();
            let sum: Vector3<f64> = w.nonlinear_weights.iter().sum();
            prop_assert!(sum.norm() < 1e-8);
            let mut moment = Matrix3::zeros();
            for (wk, p) in w.nonlinear_weights.iter().zip(&src) {
                moment += wk * p.coords.transpose();
            }
            // Coordinates reach 50 mm, so the moment is compared relative to that scale.
            prop_assert!(moment.abs().max() < 1e-8 * 50.0, "{}", moment);
        }

        #[test]
        fn baselines_are_translation_equivariant(seed in 0u64..10_000, tx in -100.0f64..100.0, tz in -100.0f64..100.0) {
            let src = random_points(seed, 8);
            let dst = random_points(seed + 7, 8);
            let shift = Vector3::new(tx, 3.0, tz);
            let src2: Vec<_> = src.iter().map(|p| p + shift).collect();
            let dst2: Vec<_> = dst.iter().map(|p| p + shift).collect();
            let (a1, a2) = (fit_affine(&src, &dst).unwrap(), fit_affine(&src2, &dst2).unwrap());
            let (t1, t2) = (fit_tps(&src, &dst, 0.0).unwrap(), fit_tps(&src2, &dst2, 0.0).unwrap());
            for q in random_points(seed + 13, 4) {
                let q2 = q + shift;
                let tol = 1e-9 * q2.coords.norm().max(1.0);
                prop_assert!((a2.apply_point(&q2) - (a1.apply_point(&q) + shift)).norm() < tol);
                prop_assert!((t2.apply_point(&q2) - (t1.apply_point(&q) + shift)).norm() < tol);
            }
        }
    }
}
