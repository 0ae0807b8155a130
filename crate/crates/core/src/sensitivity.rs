//! First-order propagation of input measurement error through a kernel model.

use nalgebra::{DMatrix, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::FeatureSample;
use crate::error::{Error, Result};
use crate::krr::KernelModel;
use crate::mesh::LobeLabel;
use crate::metrics::mean_std;

/// Λ mean and standard deviation measured on canine upper lobes.
pub const REFERENCE_LAMBDA_UPPER: (f64, f64) = (0.232, 0.063);
/// Λ mean and standard deviation measured on canine lower lobes.
pub const REFERENCE_LAMBDA_LOWER: (f64, f64) = (0.245, 0.037);

/// `∂y/∂x` at `x_new`, a `3 × N` matrix in the caller's (unscaled) units.
pub fn prediction_jacobian(model: &KernelModel, x_new: &[f64]) -> Result<DMatrix<f64>> {
    let n = model.input_dim();
    if x_new.len() != n {
        return Err(Error::arg(format!(
            "input has dimension {}, model expects {n}",
            x_new.len()
        )));
    }
    let z = model.scaler.apply(x_new);
    let h = &model.hyper;
    let mut a = DMatrix::<f64>::zeros(3, n);
    for (xd, wd) in model.train_x().iter().zip(model.weights()) {
        let diff: Vec<f64> = z.iter().zip(xd).map(|(p, q)| p - q).collect();
        let k = h.k_a * (-h.k_b * diff.iter().map(|d| d * d).sum::<f64>()).exp();
        if k == 0.0 {
            continue;
        }
        for (col, d) in diff.iter().enumerate() {
            let g = -2.0 * h.k_b * d * k;
            for m in 0..3 {
                a[(m, col)] += wd[m] * g;
            }
        }
    }
    for (col, s) in model.scaler.scale.iter().enumerate() {
        for m in 0..3 {
            a[(m, col)] /= s;
        }
    }
    Ok(a)
}

/// Largest eigenvalue of `AᵀA`, taken as the squared top singular value of `A`.
pub fn max_singular_sq(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    let s = a.singular_values().max();
    s * s
}

/// Which input components are perturbed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbedColumns {
    #[default]
    All,
    /// Only the deflated-landmark offsets, the intraoperatively measured part.
    DeflatedLandmarks,
}

impl std::str::FromStr for PerturbedColumns {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(PerturbedColumns::All),
            "deflated_landmarks" | "deflated-landmarks" => Ok(PerturbedColumns::DeflatedLandmarks),
            _ => Err(Error::Argument(format!("unknown perturbed columns '{s}'"))),
        }
    }
}

impl PerturbedColumns {
    pub fn columns(&self, landmark_count: usize, dim: usize) -> Vec<usize> {
        match self {
            PerturbedColumns::All => (0..dim).collect(),
            PerturbedColumns::DeflatedLandmarks => {
                (3 * landmark_count..6 * landmark_count).collect()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub lobe_label: LobeLabel,
    pub columns: PerturbedColumns,
    pub sample_count: usize,
    pub per_vertex_max_singular_sq: Vec<f64>,
    pub lambda_mean: f64,
    pub lambda_std: f64,
}

/// Λ for every sample, restricted to `columns`, with its mean and spread.
pub fn lambda_statistics(
    model: &KernelModel,
    samples: &[FeatureSample],
    columns: PerturbedColumns,
) -> Result<SensitivityReport> {
    if samples.is_empty() {
        return Err(Error::arg("sensitivity needs at least one sample"));
    }
    let cols = columns.columns(model.landmark_count, model.input_dim());
    if cols.is_empty() || cols.iter().any(|&c| c >= model.input_dim()) {
        return Err(Error::arg("perturbed columns do not fit the model input"));
    }
    let values = samples
        .par_iter()
        .map(|s| {
            let a = prediction_jacobian(model, &s.x)?;
            Ok(max_singular_sq(&a.select_columns(&cols)))
        })
        .collect::<Result<Vec<f64>>>()?;
    let (lambda_mean, lambda_std) = mean_std(&values);
    Ok(SensitivityReport {
        lobe_label: model.lobe,
        columns,
        sample_count: values.len(),
        per_vertex_max_singular_sq: values,
        lambda_mean,
        lambda_std,
    })
}

/// `predict(x + dx) − predict(x) − A dx`.
pub fn linearization_residual(model: &KernelModel, x: &[f64], dx: &[f64]) -> Result<Vector3<f64>> {
    let a = prediction_jacobian(model, x)?;
    let moved: Vec<f64> = x.iter().zip(dx).map(|(p, d)| p + d).collect();
    let lin = &a * DMatrix::from_column_slice(dx.len(), 1, dx);
    Ok(model.predict(&moved)? - model.predict(x)? - Vector3::new(lin[0], lin[1], lin[2]))
}
