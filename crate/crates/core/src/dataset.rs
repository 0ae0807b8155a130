//! Per-vertex labeled samples built from corresponded inflated/deflated
//! mesh pairs, pairwise midpoint augmentation and leave-one-out splits.
//!
//! For a target vertex `T` and active landmarks `L(1..l)` the input vector is
//!
//! ```text
//! [ T_inf - L_inf(1), ..., T_inf - L_inf(l),      3l values
//!   L_def(1) - C_def, ..., L_def(l) - C_def,      3l values
//!   V_inf, VR ]                                   2 values
//! ```
//!
//! where `C_def` is the centroid of the deflated landmarks, and the target is
//! `T_def - C_def`.

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{centroid, mesh_volume, LobeLabel, Mesh};

/// Identifies the feature layout; stored with every trained model.
pub const FEATURE_ORDER_TAG: &str = "r_inf[1..l],r_def[1..l],v_inf,vr";

/// Volume ratio assumed for cases whose deflated volume is unknown.
pub const DEFAULT_VOLUME_RATIO: f64 = 0.60;

/// Separator joining the source ids of a midpoint-augmented case.
pub const AUGMENTED_ID_SEPARATOR: char = '+';

/// Input dimension for `l` active landmarks.
pub fn feature_dim(landmark_count: usize) -> usize {
    3 * landmark_count * 2 + 2
}

/// Number of samples produced by [`build_dataset`].
pub fn dataset_size(
    vertex_count: usize,
    landmark_count: usize,
    cases: usize,
    augment: bool,
) -> usize {
    let pairs = if augment {
        cases * cases.saturating_sub(1) / 2
    } else {
        0
    };
    (vertex_count - landmark_count) * (cases + pairs)
}

/// A corresponded inflated/deflated mesh pair.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseRecord {
    pub case_id: String,
    pub inflated: Mesh,
    pub deflated: Mesh,
    pub lobe: LobeLabel,
    pub v_inf: f64,
    pub volume_ratio: f64,
    pub is_augmented: bool,
}

impl CaseRecord {
    /// Builds an original case, computing `V_inf` and the volume ratio.
    pub fn new(case_id: impl Into<String>, inflated: Mesh, deflated: Mesh) -> Result<Self> {
        let case_id = case_id.into();
        if case_id.is_empty() || case_id.contains(AUGMENTED_ID_SEPARATOR) {
            return Err(Error::arg(format!(
                "case id `{case_id}` must be nonempty and free of `{AUGMENTED_ID_SEPARATOR}`"
            )));
        }
        Self::build(case_id, inflated, deflated, false)
    }

    fn build(case_id: String, inflated: Mesh, deflated: Mesh, is_augmented: bool) -> Result<Self> {
        if !inflated.same_topology(&deflated) {
            return Err(Error::arg(format!(
                "case {case_id}: inflated and deflated meshes differ in topology"
            )));
        }
        if inflated.lobe() != deflated.lobe() {
            return Err(Error::arg(format!("case {case_id}: lobe labels differ")));
        }
        let v_inf = mesh_volume(&inflated)?;
        let v_def = mesh_volume(&deflated)?;
        if v_inf <= 0.0 {
            return Err(Error::Geometry(format!(
                "case {case_id}: inflated volume is zero"
            )));
        }
        Ok(Self {
            case_id,
            lobe: inflated.lobe(),
            inflated,
            deflated,
            v_inf,
            volume_ratio: v_def / v_inf,
            is_augmented,
        })
    }

    pub fn vertex_count(&self) -> usize {
        self.inflated.vertex_count()
    }

    /// Ids of the original cases this record derives from.
    pub fn sources(&self) -> Vec<&str> {
        source_ids(&self.case_id)
    }

    pub fn deflated_landmarks(&self, landmarks: &[usize]) -> Vec<Point3<f64>> {
        landmarks.iter().map(|&i| self.deflated.vertex(i)).collect()
    }
}

/// Splits an augmented case id into its source ids.
pub fn source_ids(case_id: &str) -> Vec<&str> {
    case_id.split(AUGMENTED_ID_SEPARATOR).collect()
}

/// One per-vertex training or test sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSample {
    pub x: Vec<f64>,
    pub y: Vector3<f64>,
    pub case_id: String,
    pub vertex_index: usize,
}

fn check_landmarks(landmarks: &[usize], vertex_count: usize) -> Result<()> {
    if landmarks.is_empty() {
        return Err(Error::arg("at least one landmark is required"));
    }
    if let Some(&bad) = landmarks.iter().find(|&&i| i >= vertex_count) {
        return Err(Error::arg(format!(
            "landmark {bad} out of range for {vertex_count} vertices"
        )));
    }
    Ok(())
}

/// Input vector for `target` given the inflated mesh and measured deflated
/// landmark positions. Used both for training (positions read from the
/// deflated mesh) and for prediction (positions measured externally).
pub fn feature_vector(
    inflated: &Mesh,
    landmarks: &[usize],
    deflated_landmarks: &[Point3<f64>],
    v_inf: f64,
    volume_ratio: f64,
    target: usize,
) -> Result<Vec<f64>> {
    check_landmarks(landmarks, inflated.vertex_count())?;
    if deflated_landmarks.len() != landmarks.len() {
        return Err(Error::arg(format!(
            "{} deflated landmark positions for {} landmarks",
            deflated_landmarks.len(),
            landmarks.len()
        )));
    }
    if target >= inflated.vertex_count() {
        return Err(Error::arg(format!("target vertex {target} out of range")));
    }
    if landmarks.contains(&target) {
        return Err(Error::arg(format!("target vertex {target} is a landmark")));
    }
    let center = centroid(deflated_landmarks)?;
    let t_inf = inflated.vertex(target);
    let mut x = Vec::with_capacity(feature_dim(landmarks.len()));
    for &k in landmarks {
        x.extend((t_inf - inflated.vertex(k)).iter());
    }
    for p in deflated_landmarks {
        x.extend((p - center).iter());
    }
    x.push(v_inf);
    x.push(volume_ratio);
    Ok(x)
}

/// Labeled sample for one non-landmark vertex of a case.
pub fn build_features(
    case: &CaseRecord,
    landmarks: &[usize],
    target_vertex: usize,
) -> Result<FeatureSample> {
    check_landmarks(landmarks, case.vertex_count())?;
    let def_lm = case.deflated_landmarks(landmarks);
    let x = feature_vector(
        &case.inflated,
        landmarks,
        &def_lm,
        case.v_inf,
        case.volume_ratio,
        target_vertex,
    )?;
    let center = centroid(&def_lm)?;
    Ok(FeatureSample {
        x,
        y: case.deflated.vertex(target_vertex) - center,
        case_id: case.case_id.clone(),
        vertex_index: target_vertex,
    })
}

/// Case whose inflated and deflated vertices are the midpoints of `a` and `b`.
pub fn augment_midpoint(a: &CaseRecord, b: &CaseRecord) -> Result<CaseRecord> {
    if a.lobe != b.lobe {
        return Err(Error::arg(format!(
            "cannot interpolate {} ({}) with {} ({})",
            a.case_id, a.lobe, b.case_id, b.lobe
        )));
    }
    if !a.inflated.same_topology(&b.inflated) {
        return Err(Error::arg(format!(
            "cases {} and {} have different topology",
            a.case_id, b.case_id
        )));
    }
    let mid = |m: &Mesh, n: &Mesh| {
        m.with_vertices(
            m.vertices()
                .iter()
                .zip(n.vertices())
                .map(|(p, q)| Point3::from((p.coords + q.coords) * 0.5))
                .collect(),
        )
    };
    CaseRecord::build(
        format!("{}{AUGMENTED_ID_SEPARATOR}{}", a.case_id, b.case_id),
        mid(&a.inflated, &b.inflated)?,
        mid(&a.deflated, &b.deflated)?,
        true,
    )
}

/// Originals followed (when `augment`) by all pairwise midpoint cases in
/// lexicographic pair order.
pub fn augmented_cases(cases: &[CaseRecord], augment: bool) -> Result<Vec<CaseRecord>> {
    let mut out = cases.to_vec();
    if augment {
        for i in 0..cases.len() {
            for j in i + 1..cases.len() {
                out.push(augment_midpoint(&cases[i], &cases[j])?);
            }
        }
    }
    Ok(out)
}

/// One sample per non-landmark vertex of every case (and pairwise midpoint
/// case when `augment`), ordered by case then vertex index.
pub fn build_dataset(
    cases: &[CaseRecord],
    landmarks: &[usize],
    augment: bool,
) -> Result<Vec<FeatureSample>> {
    let first = cases
        .first()
        .ok_or_else(|| Error::arg("no cases to build a dataset from"))?;
    for c in cases {
        if c.lobe != first.lobe {
            return Err(Error::arg("cases mix upper and lower lobes"));
        }
        if !c.inflated.same_topology(&first.inflated) {
            return Err(Error::arg(format!(
                "case {} differs in topology",
                c.case_id
            )));
        }
    }
    check_landmarks(landmarks, first.vertex_count())?;
    let all = augmented_cases(cases, augment)?;
    let mut samples = Vec::with_capacity(dataset_size(
        first.vertex_count(),
        landmarks.len(),
        cases.len(),
        augment,
    ));
    for case in &all {
        for v in (0..case.vertex_count()).filter(|v| !landmarks.contains(v)) {
            samples.push(build_features(case, landmarks, v)?);
        }
    }
    Ok(samples)
}

/// Holds out one original case; the rest form the training list.
pub fn split_leave_one_out(
    cases: &[CaseRecord],
    test_id: &str,
) -> Result<(Vec<CaseRecord>, CaseRecord)> {
    if let Some(aug) = cases.iter().find(|c| c.is_augmented) {
        return Err(Error::arg(format!(
            "leave-one-out expects original cases only, got augmented {}",
            aug.case_id
        )));
    }
    let test = cases
        .iter()
        .find(|c| c.case_id == test_id)
        .cloned()
        .ok_or_else(|| Error::arg(format!("unknown test case `{test_id}`")))?;
    let train: Vec<CaseRecord> = cases
        .iter()
        .filter(|c| c.case_id != test_id)
        .cloned()
        .collect();
    if train.is_empty() {
        return Err(Error::arg("leave-one-out needs at least two cases"));
    }
    Ok((train, test))
}

/// Absolute positions from predicted landmark-centroid-relative vectors.
pub fn reconstruct_positions(
    y_predictions: &[Vector3<f64>],
    deflated_landmark_positions: &[Point3<f64>],
) -> Result<Vec<Point3<f64>>> {
    let center = centroid(deflated_landmark_positions)
        .map_err(|_| Error::arg("reconstruction needs at least one landmark"))?;
    Ok(y_predictions.iter().map(|y| center + y).collect())
}
