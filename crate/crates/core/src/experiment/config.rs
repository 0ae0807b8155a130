use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::dataset::{build_dataset, CaseRecord, DEFAULT_VOLUME_RATIO};
use crate::error::{Error, Result};
use crate::krr::{grid_search, scaled_median, CvRow, HyperGrid, KernelHyperparams, ScalingMode};
use crate::krr::{DEFAULT_KB_RELATIVE, DEFAULT_LAMBDA};
use crate::landmarks::{LandmarkOrdering, LANDMARK_COUNT};
use crate::mesh::LobeLabel;
use crate::metrics::Method;
use crate::sensitivity::PerturbedColumns;

/// Candidate hyperparameters. `k_b` is either given absolutely or as
/// multiples of `1 / median‖x − x'‖²` of the scaled training inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperConfig {
    pub k_a: Vec<f64>,
    pub k_b: Option<Vec<f64>>,
    pub k_b_relative: Vec<f64>,
    pub lambda: Vec<f64>,
    pub folds: usize,
    pub scaling: ScalingMode,
}

impl Default for HyperConfig {
    fn default() -> Self {
        HyperConfig {
            k_a: vec![1.0],
            k_b: None,
            k_b_relative: DEFAULT_KB_RELATIVE.to_vec(),
            lambda: DEFAULT_LAMBDA.to_vec(),
            folds: 3,
            scaling: ScalingMode::default(),
        }
    }
}

/// Hyperparameters chosen for one lobe and landmark subset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperSelection {
    pub hyper: KernelHyperparams,
    pub median_squared_distance: f64,
    /// Empty when the grid had a single candidate.
    pub cv_table: Vec<CvRow>,
}

impl HyperConfig {
    fn validate(&self) -> Result<()> {
        let kb = self.k_b.as_ref().unwrap_or(&self.k_b_relative);
        if self.k_a.is_empty() || kb.is_empty() || self.lambda.is_empty() {
            return Err(Error::arg("hyperparameter grids must be nonempty"));
        }
        for &k_a in &self.k_a {
            for &k_b in kb {
                for &lambda in &self.lambda {
                    KernelHyperparams::new(k_a, k_b, lambda)?;
                }
            }
        }
        Ok(())
    }

    fn grid(&self, median: f64) -> HyperGrid {
        HyperGrid {
            k_a: self.k_a.clone(),
            k_b: match &self.k_b {
                Some(k) => k.clone(),
                None => self.k_b_relative.iter().map(|r| r / median).collect(),
            },
            lambda: self.lambda.clone(),
        }
    }

    /// Resolves the grid on `cases` and, when it has more than one candidate,
    /// picks one by case-grouped cross-validation.
    pub fn select(
        &self,
        cases: &[CaseRecord],
        landmarks: &[usize],
        augment: bool,
    ) -> Result<HyperSelection> {
        let samples = build_dataset(cases, landmarks, augment)?;
        let xs: Vec<Vec<f64>> = samples.iter().map(|s| s.x.clone()).collect();
        let median = scaled_median(&xs, self.scaling)?;
        let grid = self.grid(median);
        let candidates = grid.candidates();
        if candidates.len() == 1 {
            return Ok(HyperSelection {
                hyper: candidates[0],
                median_squared_distance: median,
                cv_table: vec![],
            });
        }
        let folds = self.folds.min(cases.len());
        if folds < 2 {
            return Err(Error::arg(
                "hyperparameter search needs at least two cases; give a single candidate instead",
            ));
        }
        let (hyper, cv_table) = grid_search(&samples, &grid, folds, self.scaling)?;
        Ok(HyperSelection {
            hyper,
            median_squared_distance: median,
            cv_table,
        })
    }
}

/// Settings shared by every experiment command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub manifest_path: Option<PathBuf>,
    /// Restrict to one lobe; both when `None`.
    pub lobe: Option<LobeLabel>,
    pub ordering: LandmarkOrdering,
    pub landmark_count: usize,
    pub methods: Vec<Method>,
    pub hyper: HyperConfig,
    pub augment: bool,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub dsc_spacing: Option<f64>,
    /// VR fed to the kernel model for the case being predicted.
    pub volume_ratio: f64,
    pub tps_regularization: f64,
    /// Cap on training-case combinations per test case in the case sweep.
    pub max_combinations: usize,
    /// Training-set sizes for the case sweep; `1..n` when `None`.
    pub case_counts: Option<Vec<usize>>,
    pub sensitivity_columns: PerturbedColumns,
    /// Kernel model file for the sensitivity command instead of refitting.
    pub model_path: Option<PathBuf>,
    pub write_meshes: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            manifest_path: None,
            lobe: None,
            ordering: LandmarkOrdering::Experiment2,
            landmark_count: 6,
            methods: Method::ALL.to_vec(),
            hyper: HyperConfig::default(),
            augment: true,
            output_dir: PathBuf::from("results"),
            seed: 0,
            dsc_spacing: None,
            volume_ratio: DEFAULT_VOLUME_RATIO,
            tps_regularization: 0.0,
            max_combinations: 200,
            case_counts: None,
            sensitivity_columns: PerturbedColumns::All,
            model_path: None,
            write_meshes: true,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::arg("no methods selected"));
        }
        if !(1..=LANDMARK_COUNT).contains(&self.landmark_count) {
            return Err(Error::arg(format!(
                "landmark count must be 1..={LANDMARK_COUNT}"
            )));
        }
        if !(self.volume_ratio > 0.0 && self.volume_ratio <= 1.0) {
            return Err(Error::arg("volume ratio must lie in (0, 1]"));
        }
        if let Some(s) = self.dsc_spacing {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::arg("DSC spacing must be positive"));
            }
        }
        if !(self.tps_regularization >= 0.0) {
            return Err(Error::arg("TPS regularization must be nonnegative"));
        }
        if self.max_combinations == 0 {
            return Err(Error::arg("combination cap must be positive"));
        }
        if self.hyper.folds < 2 {
            return Err(Error::arg("cross-validation needs at least two folds"));
        }
        self.hyper.validate()
    }

    pub fn manifest(&self) -> Result<&PathBuf> {
        self.manifest_path
            .as_ref()
            .ok_or_else(|| Error::arg("no manifest given"))
    }

    pub fn has(&self, m: Method) -> bool {
        self.methods.contains(&m)
    }
}
