//! Gaussian-kernel ridge regression from per-vertex features to deflated
//! vertex offsets.

mod cv;
mod io;
pub mod solve;

pub use cv::{
    grid_search, median_squared_distance, scaled_median, CvRow, HyperGrid, DEFAULT_KB_RELATIVE,
    DEFAULT_LAMBDA,
};
pub use io::{load_model, save_model};

use faer::Mat;
use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::FEATURE_ORDER_TAG;
use crate::error::{Error, Result};
use crate::mesh::LobeLabel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelHyperparams {
    pub k_a: f64,
    pub k_b: f64,
    pub lambda: f64,
}

impl KernelHyperparams {
    pub fn new(k_a: f64, k_b: f64, lambda: f64) -> Result<Self> {
        let h = KernelHyperparams { k_a, k_b, lambda };
        h.validate()?;
        Ok(h)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.k_a > 0.0 && self.k_a.is_finite()) {
            return Err(Error::arg(format!(
                "k_a must be positive, got {}",
                self.k_a
            )));
        }
        if !(self.k_b > 0.0 && self.k_b.is_finite()) {
            return Err(Error::arg(format!(
                "k_b must be positive, got {}",
                self.k_b
            )));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::arg(format!(
                "lambda must be nonnegative, got {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `k_a · exp(−k_b ‖x − x'‖²)`.
pub fn gaussian_kernel(x: &[f64], x_prime: &[f64], hyper: &KernelHyperparams) -> Result<f64> {
    if x.len() != x_prime.len() {
        return Err(Error::arg(format!(
            "kernel arguments differ in dimension: {} vs {}",
            x.len(),
            x_prime.len()
        )));
    }
    Ok(hyper.k_a * (-hyper.k_b * squared_distance(x, x_prime)).exp())
}

/// Writes the upper triangle of the Gram matrix of `xs` into `a`.
fn fill_kernel_upper(a: &mut Mat<f64>, xs: &[Vec<f64>], hyper: &KernelHyperparams, ridge: f64) {
    a.par_col_chunks_mut(1)
        .enumerate()
        .for_each(|(j, mut col)| {
            for i in 0..j {
                let k = hyper.k_a * (-hyper.k_b * squared_distance(&xs[i], &xs[j])).exp();
                col.write(i, 0, k);
            }
            col.write(j, 0, hyper.k_a + ridge);
        });
}

/// Full symmetric kernel matrix; the upper triangle is computed and mirrored.
pub fn build_kernel_matrix(xs: &[Vec<f64>], hyper: &KernelHyperparams) -> Mat<f64> {
    let d = xs.len();
    let mut a = Mat::<f64>::zeros(d, d);
    fill_kernel_upper(&mut a, xs, hyper, 0.0);
    for j in 0..d {
        for i in 0..j {
            let v = a.read(i, j);
            a.write(j, i, v);
        }
    }
    a
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScalingMode {
    Raw,
    /// z-score every component with training statistics.
    Standardize,
    /// Keep everything in millimetres: offsets unchanged, `V_inf` centred and
    /// divided by `3 V̄^(2/3)` (the first-order change of its cube root), VR
    /// unchanged. Expects the `[.., V_inf, VR]` feature layout.
    #[default]
    Length,
}

impl std::str::FromStr for ScalingMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(ScalingMode::Raw),
            "standardize" => Ok(ScalingMode::Standardize),
            "length" => Ok(ScalingMode::Length),
            _ => Err(Error::arg(format!("unknown feature scaling '{s}'"))),
        }
    }
}

/// Affine per-component map applied to features before the kernel sees them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaler {
    pub mode: ScalingMode,
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl FeatureScaler {
    pub fn identity(dim: usize) -> Self {
        FeatureScaler {
            mode: ScalingMode::Raw,
            mean: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    /// Training statistics for `mode`. Components whose spread is negligible
    /// relative to their magnitude keep unit scale.
    pub fn fit(xs: &[Vec<f64>], mode: ScalingMode) -> Result<Self> {
        let dim = xs
            .first()
            .map(Vec::len)
            .ok_or_else(|| Error::arg("no training samples"))?;
        let n = xs.len() as f64;
        match mode {
            ScalingMode::Raw => return Ok(Self::identity(dim)),
            ScalingMode::Length => {
                if dim < 2 {
                    return Err(Error::arg(
                        "length scaling needs the volume and ratio components",
                    ));
                }
                let mut s = Self::identity(dim);
                s.mode = mode;
                let v = xs.iter().map(|x| x[dim - 2]).sum::<f64>() / n;
                if v > 0.0 {
                    s.mean[dim - 2] = v;
                    s.scale[dim - 2] = 3.0 * v.powf(2.0 / 3.0);
                }
                return Ok(s);
            }
            ScalingMode::Standardize => {}
        }
        let mut mean = vec![0.0; dim];
        for x in xs {
            for (m, v) in mean.iter_mut().zip(x) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; dim];
        for x in xs {
            for ((s, v), m) in var.iter_mut().zip(x).zip(&mean) {
                *s += (v - m) * (v - m) / n;
            }
        }
        let scale = var
            .iter()
            .zip(&mean)
            .map(|(v, m): (&f64, &f64)| {
                let sd = v.sqrt();
                if sd > 1e-12 * m.abs().max(1.0) {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(FeatureScaler { mode, mean, scale })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }
}

/// A fitted kernel regressor. Training inputs are stored already scaled.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelModel {
    pub hyper: KernelHyperparams,
    pub(crate) train_x: Vec<Vec<f64>>,
    pub(crate) weights: Vec<Vector3<f64>>,
    pub landmark_count: usize,
    pub feature_order_tag: String,
    pub lobe: LobeLabel,
    pub scaler: FeatureScaler,
}

fn check_training(xs: &[Vec<f64>], ys: &[Vector3<f64>]) -> Result<usize> {
    if xs.is_empty() {
        return Err(Error::arg("no training samples"));
    }
    if xs.len() != ys.len() {
        return Err(Error::arg(format!(
            "{} inputs but {} targets",
            xs.len(),
            ys.len()
        )));
    }
    let n = xs[0].len();
    if xs.iter().any(|x| x.len() != n) {
        return Err(Error::arg("training inputs differ in dimension"));
    }
    if xs.iter().flatten().any(|v| !v.is_finite())
        || ys.iter().any(|y| !y.iter().all(|v| v.is_finite()))
    {
        return Err(Error::arg("training data contains non-finite values"));
    }
    Ok(n)
}

/// Solves `(K + λE) W = Y` for already scaled inputs.
pub(crate) fn solve_weights(
    xs: &[Vec<f64>],
    ys: &[Vector3<f64>],
    hyper: &KernelHyperparams,
) -> Result<Vec<Vector3<f64>>> {
    let d = xs.len();
    let rhs = Mat::from_fn(d, 3, |i, j| ys[i][j]);
    let w = solve::solve_spd(d, |a| fill_kernel_upper(a, xs, hyper, hyper.lambda), &rhs)?;
    Ok((0..d)
        .map(|i| Vector3::new(w.read(i, 0), w.read(i, 1), w.read(i, 2)))
        .collect())
}

/// Fits on raw features.
pub fn fit(xs: &[Vec<f64>], ys: &[Vector3<f64>], hyper: KernelHyperparams) -> Result<KernelModel> {
    fit_scaled(xs, ys, hyper, ScalingMode::Raw)
}

pub fn fit_scaled(
    xs: &[Vec<f64>],
    ys: &[Vector3<f64>],
    hyper: KernelHyperparams,
    mode: ScalingMode,
) -> Result<KernelModel> {
    hyper.validate()?;
    let n = check_training(xs, ys)?;
    let scaler = FeatureScaler::fit(xs, mode)?;
    let train_x: Vec<Vec<f64>> = xs.iter().map(|x| scaler.apply(x)).collect();
    let weights = solve_weights(&train_x, ys, &hyper)?;
    let landmark_count = if n >= 8 && (n - 2) % 6 == 0 {
        (n - 2) / 6
    } else {
        0
    };
    Ok(KernelModel {
        hyper,
        train_x,
        weights,
        landmark_count,
        feature_order_tag: FEATURE_ORDER_TAG.to_string(),
        lobe: LobeLabel::Upper,
        scaler,
    })
}

impl KernelModel {
    pub fn with_lobe(mut self, lobe: LobeLabel) -> Self {
        self.lobe = lobe;
        self
    }

    pub fn input_dim(&self) -> usize {
        self.scaler.dim()
    }

    pub fn sample_count(&self) -> usize {
        self.train_x.len()
    }

    /// Scaled training inputs.
    pub fn train_x(&self) -> &[Vec<f64>] {
        &self.train_x
    }

    pub fn weights(&self) -> &[Vector3<f64>] {
        &self.weights
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::arg(format!(
                "input has dimension {}, model expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// `Σ_d K(x, x_d) W_d` for an input in the scaled space.
    pub(crate) fn predict_scaled(&self, z: &[f64]) -> Vector3<f64> {
        let h = &self.hyper;
        self.train_x
            .iter()
            .zip(&self.weights)
            .map(|(xd, wd)| wd * (h.k_a * (-h.k_b * squared_distance(z, xd)).exp()))
            .sum()
    }

    pub fn predict(&self, x: &[f64]) -> Result<Vector3<f64>> {
        self.check_input(x)?;
        Ok(self.predict_scaled(&self.scaler.apply(x)))
    }

    pub fn predict_batch(&self, xs: &[Vec<f64>]) -> Result<Vec<Vector3<f64>>> {
        xs.iter().try_for_each(|x| self.check_input(x))?;
        Ok(xs
            .par_iter()
            .map(|x| self.predict_scaled(&self.scaler.apply(x)))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn h(k_a: f64, k_b: f64, lambda: f64) -> KernelHyperparams {
        KernelHyperparams::new(k_a, k_b, lambda).unwrap()
    }

    fn random_problem(seed: u64, d: usize, n: usize) -> (Vec<Vec<f64>>, Vec<Vector3<f64>>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs = (0..d)
            .map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let ys = (0..d)
            .map(|_| {
                Vector3::new(
                    rng.gen_range(-5.0..5.0),
                    rng.gen_range(-5.0..5.0),
                    rng.gen_range(-5.0..5.0),
                )
            })
            .collect();
        (xs, ys)
    }

    fn residual_norm(xs: &[Vec<f64>], ys: &[Vector3<f64>], m: &KernelModel) -> (f64, f64) {
        let d = xs.len();
        let mut r2 = 0.0;
        let mut y2 = 0.0;
        for i in 0..d {
            let mut acc = m.weights[i] * m.hyper.lambda;
            for j in 0..d {
                acc += m.weights[j] * gaussian_kernel(&xs[i], &xs[j], &m.hyper).unwrap();
            }
            r2 += (acc - ys[i]).norm_squared();
            y2 += ys[i].norm_squared();
        }
        (r2.sqrt(), y2.sqrt())
    }

    #[test]
    fn hyperparams_are_validated() {
        assert!(KernelHyperparams::new(0.0, 1.0, 0.0).is_err());
        assert!(KernelHyperparams::new(1.0, -1.0, 0.0).is_err());
        assert!(KernelHyperparams::new(1.0, 1.0, -1e-9).is_err());
        assert!(KernelHyperparams::new(1.0, 1.0, 0.0).is_ok());
    }

    #[test]
    fn kernel_values() {
        let hp = h(1.0, 0.5, 0.0);
        assert_eq!(
            gaussian_kernel(&[3.0, 4.0], &[3.0, 4.0], &h(2.5, 1.0, 0.0)).unwrap(),
            2.5
        );
        let v = gaussian_kernel(&[0.0, 0.0], &[1.0, 1.0], &hp).unwrap();
        assert!((v - 0.367_879_441_171_442_3).abs() < 1e-15);
        let tiny = gaussian_kernel(&[0.0], &[1.0], &h(1.0, 1e6, 0.0)).unwrap();
        assert_eq!(tiny, 0.0);
        assert!(gaussian_kernel(&[0.0], &[1.0, 2.0], &hp).is_err());
    }

    #[test]
    fn kernel_matrix_is_symmetric_and_entrywise_correct() {
        let (xs, _) = random_problem(3, 3, 4);
        let hp = h(1.7, 0.8, 0.0);
        let k = build_kernel_matrix(&xs, &hp);
        for i in 0..3 {
            assert_eq!(k.read(i, i), 1.7);
            for j in 0..3 {
                assert_eq!(k.read(i, j).to_bits(), k.read(j, i).to_bits());
                let dist2: f64 = (0..4).map(|n| (xs[i][n] - xs[j][n]).powi(2)).sum();
                assert!((k.read(i, j) - 1.7 * (-0.8 * dist2).exp()).abs() < 1e-15);
            }
        }
        let one = build_kernel_matrix(&xs[..1], &hp);
        assert_eq!((one.nrows(), one.read(0, 0)), (1, 1.7));
    }

    #[test]
    fn two_point_fit_matches_closed_form() {
        // Distance chosen so that K_01 = 0.5.
        let kb = 2f64.ln();
        let xs = vec![vec![0.0], vec![1.0]];
        let ys = vec![Vector3::new(1.0, 0.0, 0.0), Vector3::zeros()];
        let m = fit(&xs, &ys, h(1.0, kb, 0.1)).unwrap();
        let det = 1.1 * 1.1 - 0.25;
        assert!((m.weights[0].x - 1.1 / det).abs() < 1e-12);
        assert!((m.weights[1].x + 0.5 / det).abs() < 1e-12);
    }

    #[test]
    fn far_apart_inputs_give_identity_weights() {
        let xs: Vec<Vec<f64>> = (0..5).map(|i| vec![100.0 * i as f64, 0.0]).collect();
        let ys: Vec<Vector3<f64>> = (0..5).map(|i| Vector3::new(i as f64, 1.0, -2.0)).collect();
        let m = fit(&xs, &ys, h(1.0, 1.0, 0.0)).unwrap();
        for (w, y) in m.weights.iter().zip(&ys) {
            assert!((w - y).norm() < 1e-12);
        }
        assert_eq!(m.predict(&[1e9, 1e9]).unwrap(), Vector3::zeros());
    }

    #[test]
    fn heavy_regularization_shrinks_weights() {
        let (xs, ys) = random_problem(5, 10, 3);
        let m = fit(&xs, &ys, h(1.0, 1.0, 1e9)).unwrap();
        assert!(m.weights.iter().all(|w| w.norm() < 1e-7));
    }

    #[test]
    fn interpolates_training_targets() {
        let (xs, ys) = random_problem(7, 40, 5);
        let m = fit(&xs, &ys, h(1.0, 1.0, 0.0)).unwrap();
        for (x, y) in xs.iter().zip(&ys) {
            let p = m.predict(x).unwrap();
            assert!((p - y).norm() <= 1e-6 * y.norm(), "{p} vs {y}");
        }
    }

    #[test]
    fn duplicate_inputs_without_ridge_are_conditioning_errors() {
        let xs = vec![vec![0.0, 1.0], vec![0.0, 1.0], vec![2.0, 0.0]];
        let ys = vec![Vector3::x(), Vector3::y(), Vector3::z()];
        assert!(matches!(
            fit(&xs, &ys, h(1.0, 1.0, 0.0)),
            Err(Error::Conditioning { .. })
        ));
        assert!(fit(&xs, &ys, h(1.0, 1.0, 1e-2)).is_ok());
    }

    #[test]
    fn predict_matches_naive_summation() {
        let (xs, ys) = random_problem(11, 20, 6);
        let hp = h(0.7, 0.4, 1e-3);
        let m = fit(&xs, &ys, hp).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..5 {
            let q: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut naive = [0.0; 3];
            for d in 0..20 {
                let mut s = 0.0;
                for n in 0..6 {
                    s += (q[n] - xs[d][n]) * (q[n] - xs[d][n]);
                }
                let k = 0.7 * (-0.4 * s).exp();
                for c in 0..3 {
                    naive[c] += k * m.weights[d][c];
                }
            }
            let p = m.predict(&q).unwrap();
            for c in 0..3 {
                assert!((p[c] - naive[c]).abs() < 1e-12);
            }
        }
        assert!(m.predict(&[0.0; 5]).is_err());
    }

    #[test]
    fn standardized_model_interpolates_and_stores_scaler() {
        let (mut xs, ys) = random_problem(13, 25, 4);
        for x in &mut xs {
            x[3] = 1e4 + 50.0 * x[3];
        }
        let m = fit_scaled(&xs, &ys, h(1.0, 0.5, 0.0), ScalingMode::Standardize).unwrap();
        assert_eq!(m.scaler.mode, ScalingMode::Standardize);
        assert!((m.scaler.mean[3] - 1e4).abs() < 50.0);
        for (x, y) in xs.iter().zip(&ys) {
            assert!((m.predict(x).unwrap() - y).norm() <= 1e-6 * y.norm());
        }
        let batch = m.predict_batch(&xs).unwrap();
        assert_eq!(batch[4], m.predict(&xs[4]).unwrap());
    }

    #[test]
    fn constant_feature_keeps_unit_scale() {
        let xs = vec![vec![1.0, 5.0], vec![2.0, 5.0], vec![3.0, 5.0]];
        let s = FeatureScaler::fit(&xs, ScalingMode::Standardize).unwrap();
        assert_eq!(s.scale[1], 1.0);
        assert_eq!(s.apply(&xs[0])[1], 0.0);
    }

    #[test]
    fn length_scaling_turns_volume_into_cube_root_change() {
        let xs: Vec<Vec<f64>> = [8.0e5, 1.0e6, 1.2e6]
            .iter()
            .map(|&v| vec![3.0, -2.0, v, 0.6])
            .collect();
        let s = FeatureScaler::fit(&xs, ScalingMode::Length).unwrap();
        assert_eq!(s.mean, vec![0.0, 0.0, 1.0e6, 0.0]);
        assert_eq!((s.scale[0], s.scale[1], s.scale[3]), (1.0, 1.0, 1.0));
        assert!((s.scale[2] - 3.0e4).abs() < 1e-9);
        let z = s.apply(&[3.0, -2.0, 1.0e6 + 3.0e3, 0.6]);
        assert_eq!((z[0], z[1], z[3]), (3.0, -2.0, 0.6));
        assert!((z[2] - 0.1).abs() < 1e-12);
        // Matches the cube-root difference to first order.
        let exact = (1.0e6f64 + 3.0e3).cbrt() - 100.0;
        assert!((z[2] - exact).abs() < 1e-3 * exact);
        assert!(FeatureScaler::fit(&[vec![1.0]], ScalingMode::Length).is_err());
        assert_eq!(
            "length".parse::<ScalingMode>().unwrap(),
            ScalingMode::Length
        );
        assert_eq!(ScalingMode::default(), ScalingMode::Length);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn kernel_matrix_is_psd(seed in 0u64..10_000, d in 2usize..25, kb in 0.05f64..5.0) {
            let (xs, _) = random_problem(seed, d, 3);
            let k = build_kernel_matrix(&xs, &h(1.0, kb, 0.0));
            let sym = nalgebra::DMatrix::from_fn(d, d, |i, j| k.read(i, j));
            let min = sym.symmetric_eigenvalues().min();
            prop_assert!(min >= -1e-10 * d as f64, "{}", min);
        }

        #[test]
        fn normal_equation_residual_is_small(seed in 0u64..10_000, d in 2usize..40, li in 0usize..3) {
            let lambda = [0.0, 1e-3, 1e-1][li];
            let (xs, ys) = random_problem(seed, d, 4);
            let m = fit(&xs, &ys, h(1.0, 1.0, lambda)).unwrap();
            let (r, y) = residual_norm(&xs, &ys, &m);
            prop_assert!(r <= 1e-8 * y, "{} vs {}", r, y);
        }

        #[test]
        fn predictions_scale_with_targets(seed in 0u64..10_000, s in -8.0f64..8.0) {
            let (xs, ys) = random_problem(seed, 12, 3);
            let hp = h(1.0, 0.9, 1e-3);
            let m1 = fit(&xs, &ys, hp).unwrap();
            let scaled: Vec<_> = ys.iter().map(|y| y * s).collect();
            let m2 = fit(&xs, &scaled, hp).unwrap();
            let q = vec![0.1, -0.2, 0.3];
            let (p1, p2) = (m1.predict(&q).unwrap(), m2.predict(&q).unwrap());
            prop_assert!((p1 * s - p2).norm() <= 1e-10 * (1.0 + p2.norm()));
        }
    }
}
