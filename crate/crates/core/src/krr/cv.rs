use std::collections::HashMap;

use faer::Mat;
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::{solve, squared_distance, FeatureScaler, KernelHyperparams, ScalingMode};
use crate::dataset::{source_ids, FeatureSample};
use crate::error::{Error, Result};
use crate::metrics::mean_std;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperGrid {
    pub k_a: Vec<f64>,
    pub k_b: Vec<f64>,
    pub lambda: Vec<f64>,
}

/// Largest number of inputs used for the median distance estimate.
const MEDIAN_SAMPLE: usize = 400;

/// Default `k_b` values as multiples of `1 / median‖x − x'‖²`.
pub const DEFAULT_KB_RELATIVE: [f64; 5] = [1e-4, 1e-3, 1e-2, 1e-1, 1.0];
pub const DEFAULT_LAMBDA: [f64; 4] = [1e-8, 1e-6, 1e-4, 1e-2];

impl HyperGrid {
    /// `k_a ∈ {1}`, `k_b` from [`DEFAULT_KB_RELATIVE`] over the median squared
    /// distance of the scaled inputs, `λ` from [`DEFAULT_LAMBDA`].
    pub fn default_for(xs: &[Vec<f64>], mode: ScalingMode) -> Result<Self> {
        let median = scaled_median(xs, mode)?;
        Ok(HyperGrid {
            k_a: vec![1.0],
            k_b: DEFAULT_KB_RELATIVE.iter().map(|r| r / median).collect(),
            lambda: DEFAULT_LAMBDA.to_vec(),
        })
    }

    pub fn candidates(&self) -> Vec<KernelHyperparams> {
        let mut out = Vec::with_capacity(self.k_a.len() * self.k_b.len() * self.lambda.len());
        for &k_a in &self.k_a {
            for &k_b in &self.k_b {
                for &lambda in &self.lambda {
                    out.push(KernelHyperparams { k_a, k_b, lambda });
                }
            }
        }
        out
    }
}

/// Median pairwise squared distance over an evenly strided subsample.
pub fn median_squared_distance(xs: &[Vec<f64>]) -> Result<f64> {
    if xs.len() < 2 {
        return Err(Error::arg("median distance needs at least two inputs"));
    }
    let stride = xs.len().div_ceil(MEDIAN_SAMPLE);
    let pts: Vec<&Vec<f64>> = xs.iter().step_by(stride).collect();
    let mut d: Vec<f64> = Vec::with_capacity(pts.len() * pts.len() / 2);
    for j in 0..pts.len() {
        for i in 0..j {
            d.push(squared_distance(pts[i], pts[j]));
        }
    }
    d.sort_by(f64::total_cmp);
    let m = d[d.len() / 2];
    if m > 0.0 {
        Ok(m)
    } else {
        Err(Error::arg(
            "inputs are not distinct enough for a bandwidth estimate",
        ))
    }
}

/// [`median_squared_distance`] after fitting and applying a `mode` scaler.
pub fn scaled_median(xs: &[Vec<f64>], mode: ScalingMode) -> Result<f64> {
    let scaler = FeatureScaler::fit(xs, mode)?;
    let zs: Vec<Vec<f64>> = xs.iter().map(|x| scaler.apply(x)).collect();
    median_squared_distance(&zs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvRow {
    pub hyper: KernelHyperparams,
    /// `None` when some fold could not be solved.
    pub mean_rmse: Option<f64>,
    pub std_rmse: Option<f64>,
}

struct Fold {
    train_x: Vec<Vec<f64>>,
    train_y: Vec<Vector3<f64>>,
    train_d2: Vec<f64>,
    val_y: Vec<Vector3<f64>>,
    val_d2: Vec<f64>,
}

impl Fold {
    fn build(samples: &[FeatureSample], held_out: &[&str], mode: ScalingMode) -> Result<Fold> {
        let is_held = |id: &str| held_out.contains(&id);
        let (mut tx, mut ty, mut vx, mut vy) = (vec![], vec![], vec![], vec![]);
        for s in samples {
            let sources = source_ids(&s.case_id);
            if sources.iter().any(|c| is_held(c)) {
                if sources.len() == 1 {
                    vx.push(s.x.clone());
                    vy.push(s.y);
                }
            } else {
                tx.push(s.x.clone());
                ty.push(s.y);
            }
        }
        if tx.is_empty() || vx.is_empty() {
            return Err(Error::arg(
                "cross-validation fold has no training or validation samples",
            ));
        }
        let scaler = FeatureScaler::fit(&tx, mode)?;
        let tx: Vec<Vec<f64>> = tx.iter().map(|x| scaler.apply(x)).collect();
        let vx: Vec<Vec<f64>> = vx.iter().map(|x| scaler.apply(x)).collect();
        let mut train_d2 = Vec::with_capacity(tx.len() * (tx.len() + 1) / 2);
        for j in 0..tx.len() {
            train_d2.extend((0..=j).map(|i| squared_distance(&tx[i], &tx[j])));
        }
        let val_d2 = vx
            .iter()
            .flat_map(|v| tx.iter().map(move |t| squared_distance(v, t)))
            .collect();
        Ok(Fold {
            train_x: tx,
            train_y: ty,
            train_d2,
            val_y: vy,
            val_d2,
        })
    }

    fn rmse(&self, h: &KernelHyperparams) -> Result<f64> {
        let d = self.train_x.len();
        let rhs = Mat::from_fn(d, 3, |i, j| self.train_y[i][j]);
        let w = solve::solve_spd(
            d,
            |a| {
                for j in 0..d {
                    let start = j * (j + 1) / 2;
                    for i in 0..j {
                        a.write(i, j, h.k_a * (-h.k_b * self.train_d2[start + i]).exp());
                    }
                    a.write(j, j, h.k_a + h.lambda);
                }
            },
            &rhs,
        )?;
        let mut sse = 0.0;
        for (v, y) in self.val_y.iter().enumerate() {
            let row = &self.val_d2[v * d..(v + 1) * d];
            let mut p = Vector3::zeros();
            for (i, d2) in row.iter().enumerate() {
                let k = h.k_a * (-h.k_b * d2).exp();
                p += Vector3::new(w.read(i, 0), w.read(i, 1), w.read(i, 2)) * k;
            }
            sse += (p - y).norm_squared();
        }
        Ok((sse / self.val_y.len() as f64).sqrt())
    }
}

/// Case-grouped `folds`-fold cross-validation over `grid`.
///
/// Original cases are dealt to folds round-robin in first-appearance order.
/// Augmented samples only ever train, and are dropped from any fold whose
/// held-out cases they were derived from. Returns the first candidate (in
/// grid order) with the smallest mean fold RMSE, plus the full table.
pub fn grid_search(
    samples: &[FeatureSample],
    grid: &HyperGrid,
    folds: usize,
    mode: ScalingMode,
) -> Result<(KernelHyperparams, Vec<CvRow>)> {
    let candidates = grid.candidates();
    if candidates.is_empty() {
        return Err(Error::arg("hyperparameter grid is empty"));
    }
    for c in &candidates {
        c.validate()?;
    }
    if folds < 2 {
        return Err(Error::arg("cross-validation needs at least two folds"));
    }
    let mut cases: Vec<&str> = Vec::new();
    let mut seen = HashMap::new();
    for s in samples {
        if source_ids(&s.case_id).len() == 1 && seen.insert(s.case_id.as_str(), ()).is_none() {
            cases.push(s.case_id.as_str());
        }
    }
    if cases.len() < folds {
        return Err(Error::arg(format!(
            "{} cases cannot fill {} cross-validation folds",
            cases.len(),
            folds
        )));
    }

    let mut scores = vec![Vec::with_capacity(folds); candidates.len()];
    let mut failed = vec![false; candidates.len()];
    for f in 0..folds {
        let held: Vec<&str> = cases.iter().copied().skip(f).step_by(folds).collect();
        let fold = Fold::build(samples, &held, mode)?;
        for (c, h) in candidates.iter().enumerate() {
            if failed[c] {
                continue;
            }
            match fold.rmse(h) {
                Ok(r) => scores[c].push(r),
                Err(Error::Conditioning { .. }) => failed[c] = true,
                Err(e) => return Err(e),
            }
        }
    }

    let table: Vec<CvRow> = candidates
        .iter()
        .zip(&scores)
        .zip(&failed)
        .map(|((h, s), &bad)| {
            if bad {
                return CvRow {
                    hyper: *h,
                    mean_rmse: None,
                    std_rmse: None,
                };
            }
            let (mean, std) = mean_std(s);
            CvRow {
                hyper: *h,
                mean_rmse: Some(mean),
                std_rmse: Some(std),
            }
        })
        .collect();

    let mut best: Option<(usize, f64)> = None;
    for (i, row) in table.iter().enumerate() {
        if let Some(m) = row.mean_rmse {
            if best.is_none_or(|(_, b)| m < b) {
                best = Some((i, m));
            }
        }
    }
    let (i, _) = best.ok_or(Error::Conditioning {
        pivot: 0.0,
        index: 0,
    })?;
    Ok((table[i].hyper, table))
}
