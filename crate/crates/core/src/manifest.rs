//! Cohort manifests: JSON lists of cases with mesh paths relative to the
//! manifest file.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Point3;
use serde::{Deserialize, Serialize};

use crate::dataset::CaseRecord;
use crate::error::{Error, Result};
use crate::landmarks::{validate_indices, ContourPlane, LANDMARK_COUNT};
use crate::mesh::{load_ply, save_ply, LobeLabel};
use crate::synth::{generate_cohort, GeneratorParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub case_id: String,
    pub lobe: LobeLabel,
    pub inflated_ply: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deflated_ply: Option<PathBuf>,
    pub landmark_indices: Vec<usize>,
    #[serde(default)]
    pub is_augmented: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corner_hints: Option<[Point3<f64>; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contour_plane: Option<ContourPlane>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<GeneratorParams>,
    pub cases: Vec<ManifestEntry>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ManifestFile {
    Full(Manifest),
    Bare(Vec<ManifestEntry>),
}

impl Manifest {
    /// Reads a manifest; a bare JSON array of entries is also accepted.
    pub fn load(path: impl AsRef<Path>) -> Result<Manifest> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m = match serde_json::from_str(&text)? {
            ManifestFile::Full(m) => m,
            ManifestFile::Bare(cases) => Manifest {
                generator: None,
                cases,
            },
        };
        for e in &m.cases {
            validate_indices(&e.landmark_indices, None)
                .map_err(|err| Error::arg(format!("case {}: {err}", e.case_id)))?;
        }
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn lobes(&self) -> Vec<LobeLabel> {
        let mut l: Vec<LobeLabel> = self.cases.iter().map(|c| c.lobe).collect();
        l.sort();
        l.dedup();
        l
    }
}

/// Original cases of one lobe, loaded from disk, sharing one landmark set.
#[derive(Debug, Clone)]
pub struct LobeCohort {
    pub lobe: LobeLabel,
    pub cases: Vec<CaseRecord>,
    pub landmark_indices: Vec<usize>,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Loads every non-augmented case of `lobe` with its ground-truth deflated mesh.
pub fn load_lobe(manifest_path: impl AsRef<Path>, lobe: LobeLabel) -> Result<LobeCohort> {
    let manifest_path = manifest_path.as_ref();
    let manifest = Manifest::load(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let entries: Vec<&ManifestEntry> = manifest
        .cases
        .iter()
        .filter(|e| e.lobe == lobe && !e.is_augmented)
        .collect();
    let first = entries
        .first()
        .ok_or_else(|| Error::arg(format!("manifest has no {lobe} lobe cases")))?;
    let landmark_indices = first.landmark_indices.clone();
    let mut cases = Vec::with_capacity(entries.len());
    for e in &entries {
        if e.landmark_indices != landmark_indices {
            return Err(Error::Geometry(format!(
                "case {} uses different landmark vertices than case {}",
                e.case_id, first.case_id
            )));
        }
        let deflated = e
            .deflated_ply
            .as_ref()
            .ok_or_else(|| Error::arg(format!("case {} has no deflated mesh", e.case_id)))?;
        let inflated = load_ply(resolve(base, &e.inflated_ply))?.with_lobe(lobe);
        let deflated = load_ply(resolve(base, deflated))?.with_lobe(lobe);
        validate_indices(&e.landmark_indices, Some(inflated.vertex_count()))?;
        cases.push(CaseRecord::new(e.case_id.clone(), inflated, deflated)?);
    }
    Ok(LobeCohort {
        lobe,
        cases,
        landmark_indices,
    })
}

/// Generates `n_cases` cases for each lobe and writes them below `dir`:
/// `caseNN/<lobe>_inflated.ply`, `caseNN/<lobe>_deflated.ply` and one
/// `manifest.json`. Returns the manifest path.
pub fn write_cohort(
    dir: impl AsRef<Path>,
    params: &GeneratorParams,
    n_cases: usize,
    lobes: &[LobeLabel],
) -> Result<PathBuf> {
    let dir = dir.as_ref();
    if lobes.is_empty() {
        return Err(Error::arg("no lobes requested"));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::new();
    for &lobe in lobes {
        let p = params.for_lobe(lobe);
        for case in generate_cohort(&p, n_cases)? {
            let id = &case.record.case_id;
            let case_dir = dir.join(id);
            fs::create_dir_all(&case_dir).map_err(|e| Error::io(&case_dir, e))?;
            let inf = PathBuf::from(id).join(format!("{lobe}_inflated.ply"));
            let def = PathBuf::from(id).join(format!("{lobe}_deflated.ply"));
            save_ply(&case.record.inflated, dir.join(&inf), None)?;
            save_ply(&case.record.deflated, dir.join(&def), None)?;
            debug_assert_eq!(case.landmarks.full_indices.len(), LANDMARK_COUNT);
            entries.push(ManifestEntry {
                case_id: id.clone(),
                lobe,
                inflated_ply: inf,
                deflated_ply: Some(def),
                landmark_indices: case.landmarks.full_indices.clone(),
                is_augmented: false,
                corner_hints: Some(case.corner_hints),
                contour_plane: Some(case.contour_plane),
            });
        }
    }
    let path = dir.join("manifest.json");
    Manifest {
        generator: Some(params.clone()),
        cases: entries,
    }
    .save(&path)?;
    Ok(path)
}
