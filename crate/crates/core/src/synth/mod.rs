//! Seeded synthetic lobe pairs: an inflated lobe-like surface and a smoothly
//! deflated copy with vertex-wise correspondence.

mod hull;

pub use hull::convex_hull;

use nalgebra::{Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{CaseRecord, DEFAULT_VOLUME_RATIO};
use crate::error::{Error, Result};
use crate::landmarks::{place_contour_landmarks, ContourPlane, LandmarkConfig};
use crate::mesh::{signed_volume, LobeLabel, Mesh};

pub const MIN_VERTEX_COUNT: usize = 50;
const BISECTION_STEPS: usize = 50;
const RATIO_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorParams {
    pub seed: u64,
    pub vertex_count: usize,
    /// Semi-axes along the fissure axis, the in-contour axis and the view axis.
    pub base_radii: [f64; 3],
    pub shape_perturbation: f64,
    pub target_volume_ratio: f64,
    pub bend_strength: f64,
    pub fissure_axis: Vector3<f64>,
    pub lobe: LobeLabel,
}

impl Default for GeneratorParams {
    fn default() -> Self {
        GeneratorParams {
            seed: 0,
            vertex_count: 400,
            base_radii: [45.0, 65.0, 35.0],
            shape_perturbation: 0.1,
            target_volume_ratio: DEFAULT_VOLUME_RATIO,
            bend_strength: 0.3,
            fissure_axis: Vector3::x(),
            lobe: LobeLabel::Upper,
        }
    }
}

impl GeneratorParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::arg(m));
        if self.vertex_count < MIN_VERTEX_COUNT {
            return bad(format!(
                "vertex_count must be at least {MIN_VERTEX_COUNT}, got {}",
                self.vertex_count
            ));
        }
        if !self.base_radii.iter().all(|r| *r > 0.0 && r.is_finite()) {
            return bad(format!("radii must be positive, got {:?}", self.base_radii));
        }
        if !(0.0..=0.3).contains(&self.shape_perturbation) {
            return bad(format!(
                "shape_perturbation must be in [0, 0.3], got {}",
                self.shape_perturbation
            ));
        }
        if !(self.target_volume_ratio > 0.0 && self.target_volume_ratio <= 1.0) {
            return bad(format!(
                "target_volume_ratio must be in (0, 1], got {}",
                self.target_volume_ratio
            ));
        }
        if !(0.0..=0.5).contains(&self.bend_strength) {
            return bad(format!(
                "bend_strength must be in [0, 0.5], got {}",
                self.bend_strength
            ));
        }
        let n = self.fissure_axis.norm();
        if !((n - 1.0).abs() < 1e-9) {
            return bad(format!("fissure_axis must be a unit vector, norm is {n}"));
        }
        Ok(())
    }

    /// Parameters for the other lobe of the same lung: the fissure faces the
    /// opposite way and the lobe is somewhat longer and thinner.
    pub fn for_lobe(&self, lobe: LobeLabel) -> Self {
        let mut p = self.clone();
        if lobe != self.lobe {
            p.fissure_axis = -self.fissure_axis;
            p.base_radii = [
                self.base_radii[0] * 0.9,
                self.base_radii[1] * 1.1,
                self.base_radii[2],
            ];
            p.lobe = lobe;
        }
        p
    }
}

/// Orthonormal frame: `e1` is the fissure axis, `e3` the contour-plane normal.
#[derive(Debug, Clone, Copy)]
struct Frame {
    e1: Vector3<f64>,
    e2: Vector3<f64>,
    e3: Vector3<f64>,
}

impl Frame {
    fn new(axis: &Vector3<f64>) -> Frame {
        let e1 = axis.normalize();
        let up = if e1.z.abs() < 0.9 {
            Vector3::z()
        } else {
            Vector3::y()
        };
        let e3 = (up - e1 * e1.dot(&up)).normalize();
        let e2 = e3.cross(&e1);
        Frame { e1, e2, e3 }
    }

    fn local(&self, v: &Vector3<f64>) -> Vector3<f64> {
        Vector3::new(v.dot(&self.e1), v.dot(&self.e2), v.dot(&self.e3))
    }

    fn world(&self, l: &Vector3<f64>) -> Vector3<f64> {
        self.e1 * l.x + self.e2 * l.y + self.e3 * l.z
    }
}

pub type SphereTemplate = (Vec<Vector3<f64>>, Vec<[usize; 3]>);

/// Unit directions of the template sphere and its triangulation.
pub fn sphere_template(vertex_count: usize) -> Result<SphereTemplate> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    let n = vertex_count as f64;
    let dirs: Vec<Vector3<f64>> = (0..vertex_count)
        .map(|i| {
            let z = 1.0 - (2.0 * i as f64 + 1.0) / n;
            let r = (1.0 - z * z).sqrt();
            let t = golden * i as f64;
            Vector3::new(r * t.cos(), r * t.sin(), z)
        })
        .collect();
    let pts: Vec<Point3<f64>> = dirs.iter().map(|d| Point3::from(*d)).collect();
    let tris = convex_hull(&pts)?;
    Ok((dirs, tris))
}

/// Per-case random draws.
#[derive(Debug, Clone, Copy)]
struct CaseDraw {
    radii: [f64; 3],
    /// Smooth radial bump terms: direction, frequency, phase, amplitude.
    bumps: [(Vector3<f64>, f64, f64, f64); 4],
    fissure_compression: f64,
    compression_gradient: f64,
    view_compression: f64,
    view_gradient: f64,
    bend: f64,
}

impl CaseDraw {
    fn draw(params: &GeneratorParams, case_index: u64) -> CaseDraw {
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        rng.set_stream(case_index * 2 + (params.lobe == LobeLabel::Lower) as u64);
        let mut radii = params.base_radii;
        for r in &mut radii {
            *r *= rng.gen_range(0.88..1.12);
        }
        let mut bumps = [(Vector3::zeros(), 0.0, 0.0, 0.0); 4];
        for b in &mut bumps {
            let dir = Vector3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            let dir = if dir.norm() > 1e-3 {
                dir.normalize()
            } else {
                Vector3::x()
            };
            *b = (
                dir,
                rng.gen_range(1.5..3.0),
                rng.gen_range(0.0..std::f64::consts::TAU),
                rng.gen_range(-1.0..1.0),
            );
        }
        let deflate = 1.0 - params.target_volume_ratio;
        CaseDraw {
            radii,
            bumps,
            fissure_compression: deflate * rng.gen_range(0.5..0.7),
            compression_gradient: rng.gen_range(-0.5..0.5),
            view_compression: deflate * rng.gen_range(0.3..0.5),
            view_gradient: rng.gen_range(-0.5..0.5),
            bend: params.bend_strength * rng.gen_range(0.75..1.25),
        }
    }

    fn radial(&self, u: &Vector3<f64>, amount: f64) -> f64 {
        if amount == 0.0 {
            return 1.0;
        }
        let total: f64 = self
            .bumps
            .iter()
            .map(|(d, f, p, a)| a * (f * d.dot(u) + p).sin())
            .sum();
        1.0 + amount * total / self.bumps.len() as f64
    }
}

/// Flat fissure face height as a fraction of the fissure-axis radius.
const FISSURE_LEVEL: f64 = 0.5;
/// Width of the smooth roll-off onto the flat face, same units.
const FISSURE_ROLLOFF: f64 = 0.15;

fn inflated_local(draw: &CaseDraw, u: &Vector3<f64>, perturbation: f64) -> Vector3<f64> {
    let [r1, r2, r3] = draw.radii;
    let s = draw.radial(u, perturbation);
    let a = s * r1 * u.x;
    let (level, width) = (FISSURE_LEVEL * r1, FISSURE_ROLLOFF * r1);
    let a = if a > level {
        level + width * ((a - level) / width).tanh()
    } else {
        a
    };
    Vector3::new(a, s * r2 * u.y, s * r3 * u.z)
}

fn fissure_plane(draw: &CaseDraw) -> f64 {
    (FISSURE_LEVEL + FISSURE_ROLLOFF) * draw.radii[0]
}

/// Compression toward the fissure plane, compression along the view axis and
/// a quadratic sag, each varying across the lobe.
fn deflate_local(draw: &CaseDraw, p: &Vector3<f64>) -> Vector3<f64> {
    let [r1, r2, r3] = draw.radii;
    let plane = fissure_plane(draw);
    let (a, b, c) = (p.x, p.y, p.z);
    let alpha = draw.fissure_compression * (1.0 + draw.compression_gradient * b / r2);
    let a2 = plane - (plane - a) * (1.0 - alpha);
    let gamma = draw.view_compression * (1.0 + draw.view_gradient * (plane - a) / (2.0 * r1));
    let c2 = c * (1.0 - gamma);
    let c3 = c2 - draw.bend * r3 * ((b / r2).powi(2) + 0.5 * ((plane - a2) / (2.0 * r1)).powi(2));
    Vector3::new(a2, b, c3)
}

/// One generated lobe pair with its landmark metadata.
#[derive(Debug, Clone)]
pub struct SyntheticCase {
    pub record: CaseRecord,
    pub corner_hints: [Point3<f64>; 3],
    pub contour_plane: ContourPlane,
    pub landmarks: LandmarkConfig,
}

fn case_id(case_index: usize) -> String {
    format!("case{:02}", case_index + 1)
}

/// Centre of the lobe; the lower lobe sits below and behind the upper one.
fn lobe_center(lobe: LobeLabel) -> Point3<f64> {
    match lobe {
        LobeLabel::Upper => Point3::new(0.0, 0.0, 0.0),
        LobeLabel::Lower => Point3::new(90.0, 0.0, 0.0),
    }
}

fn scale_to_ratio(center: &Point3<f64>, mesh: &Mesh, v_inf: f64, target: f64) -> Result<Mesh> {
    let ratio = signed_volume(mesh) / v_inf;
    if (ratio / target - 1.0).abs() <= RATIO_TOLERANCE {
        return Ok(mesh.clone());
    }
    let scaled = |s: f64| mesh.map_vertices(|p| center + (p - center) * s);
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while signed_volume(&scaled(hi)) / v_inf < target {
        hi *= 2.0;
        if hi > 1e6 {
            return Err(Error::Generation("volume rescale diverged".into()));
        }
    }
    for _ in 0..BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        let r = signed_volume(&scaled(mid)) / v_inf;
        if (r / target - 1.0).abs() <= RATIO_TOLERANCE {
            return Ok(scaled(mid));
        }
        if r < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::Generation(format!(
        "volume ratio did not converge to {target} within {BISECTION_STEPS} bisection steps"
    )))
}

/// Contour-plane corner hints: the two ends of the flat fissure face and the
/// apex opposite it. The lower lobe lists the fissure ends in reverse so its
/// numbering runs the mirrored way round.
fn corner_hints(
    center: &Point3<f64>,
    frame: &Frame,
    mesh: &Mesh,
    lobe: LobeLabel,
) -> [Point3<f64>; 3] {
    let on_plane: Vec<Point3<f64>> = mesh
        .triangles()
        .iter()
        .flat_map(|t| [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])])
        .filter_map(|(i, j)| {
            let (p, q) = (mesh.vertex(i), mesh.vertex(j));
            let (hp, hq) = (frame.e3.dot(&(p - center)), frame.e3.dot(&(q - center)));
            (hp * hq < 0.0).then(|| p + (q - p) * (hp / (hp - hq)))
        })
        .collect();
    let extreme = |f: &dyn Fn(&Vector3<f64>) -> f64| {
        *on_plane
            .iter()
            .max_by(|a, b| {
                f(&frame.local(&(*a - center))).total_cmp(&f(&frame.local(&(*b - center))))
            })
            .expect("contour is nonempty")
    };
    let plus = extreme(&|l| l.x + 0.6 * l.y);
    let minus = extreme(&|l| l.x - 0.6 * l.y);
    let apex = extreme(&|l| -l.x);
    match lobe {
        LobeLabel::Upper => [plus, minus, apex],
        LobeLabel::Lower => [minus, plus, apex],
    }
}

/// Template geometry shared by every case of one lobe: the unperturbed
/// nominal shape, used to place landmarks once per cohort.
pub fn nominal_landmarks(
    params: &GeneratorParams,
) -> Result<(LandmarkConfig, [Point3<f64>; 3], ContourPlane)> {
    params.validate()?;
    let (dirs, tris) = sphere_template(params.vertex_count)?;
    let frame = Frame::new(&params.fissure_axis);
    let center = lobe_center(params.lobe);
    let nominal = CaseDraw {
        radii: params.base_radii,
        bumps: [(Vector3::x(), 0.0, 0.0, 0.0); 4],
        fissure_compression: 0.0,
        compression_gradient: 0.0,
        view_compression: 0.0,
        view_gradient: 0.0,
        bend: 0.0,
    };
    let verts = dirs
        .iter()
        .map(|u| center + frame.world(&inflated_local(&nominal, u, 0.0)))
        .collect();
    let mesh = Mesh::new(verts, tris, params.lobe)?;
    let plane = ContourPlane {
        point: center,
        normal: frame.e3,
    };
    let hints = corner_hints(&center, &frame, &mesh, params.lobe);
    let config = place_contour_landmarks(&mesh, &hints, &plane)?;
    Ok((config, hints, plane))
}

/// Generates case `case_index` of the cohort described by `params`.
pub fn generate_case(params: &GeneratorParams, case_index: usize) -> Result<SyntheticCase> {
    let (landmarks, _, _) = nominal_landmarks(params)?;
    generate_with_landmarks(params, case_index, landmarks)
}

fn generate_with_landmarks(
    params: &GeneratorParams,
    case_index: usize,
    landmarks: LandmarkConfig,
) -> Result<SyntheticCase> {
    params.validate()?;
    let (dirs, tris) = sphere_template(params.vertex_count)?;
    let frame = Frame::new(&params.fissure_axis);
    let center = lobe_center(params.lobe);
    let draw = CaseDraw::draw(params, case_index as u64);

    let inflated_local: Vec<Vector3<f64>> = dirs
        .iter()
        .map(|u| inflated_local(&draw, u, params.shape_perturbation))
        .collect();
    let to_world = |l: &Vector3<f64>| center + frame.world(l);
    let inflated = Mesh::new(
        inflated_local.iter().map(to_world).collect(),
        tris.clone(),
        params.lobe,
    )?;
    let identity =
        draw.bend == 0.0 && draw.fissure_compression == 0.0 && draw.view_compression == 0.0;
    let deformed = if identity {
        inflated.clone()
    } else {
        Mesh::new(
            inflated_local
                .iter()
                .map(|l| to_world(&deflate_local(&draw, l)))
                .collect(),
            tris,
            params.lobe,
        )?
    };
    let v_inf = signed_volume(&inflated);
    if !(v_inf > 0.0) {
        return Err(Error::Generation(
            "inflated surface has nonpositive volume".into(),
        ));
    }
    let deflated = scale_to_ratio(&center, &deformed, v_inf, params.target_volume_ratio)?;

    let record = CaseRecord::new(case_id(case_index), inflated, deflated)?;
    let contour_plane = ContourPlane {
        point: center,
        normal: frame.e3,
    };
    let corner_hints = corner_hints(&center, &frame, &record.inflated, params.lobe);
    Ok(SyntheticCase {
        record,
        corner_hints,
        contour_plane,
        landmarks,
    })
}

/// `n_cases` cases for the lobe in `params`, in case order.
pub fn generate_cohort(params: &GeneratorParams, n_cases: usize) -> Result<Vec<SyntheticCase>> {
    if n_cases == 0 {
        return Err(Error::arg("a cohort needs at least one case"));
    }
    let (landmarks, _, _) = nominal_landmarks(params)?;
    (0..n_cases)
        .into_par_iter()
        .map(|i| generate_with_landmarks(params, i, landmarks.clone()))
        .collect()
}
