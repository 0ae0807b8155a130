//! Leave-one-out experiments over a cohort: method comparison, landmark and
//! training-size sweeps, and measurement-error sensitivity. Every command
//! writes a CSV or JSON body that depends only on the inputs and seed, plus a
//! separate metadata file carrying the timestamp.

mod config;
mod output;

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use nalgebra::Point3;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::{HyperConfig, HyperSelection, RunConfig};

use crate::baselines::{apply_affine, apply_tps, fit_affine, fit_tps};
use crate::dataset::{
    build_dataset, feature_vector, reconstruct_positions, split_leave_one_out, CaseRecord,
    FeatureSample,
};
use crate::error::{Error, Result};
use crate::krr::{fit_scaled, load_model, KernelHyperparams, KernelModel};
use crate::landmarks::{select_landmarks, LandmarkConfig, LandmarkOrdering, LANDMARK_COUNT};
use crate::manifest::{load_lobe, LobeCohort, Manifest};
use crate::mesh::{save_ply, LobeLabel, Mesh};
use crate::metrics::{evaluate, mean_std, EvaluationReport, Method, ReportContext};
use crate::sensitivity::{
    lambda_statistics, PerturbedColumns, REFERENCE_LAMBDA_LOWER, REFERENCE_LAMBDA_UPPER,
};
use output::{create_dir, fmt_mean_std, fmt_value, write_csv, write_json, write_metadata};

/// Error (mm) at which kernel error maps reach full color.
pub const ERROR_COLOR_SATURATION_MM: f64 = 8.5;

pub const EVALUATE_COLUMNS: [&str; 10] = [
    "case_id",
    "method",
    "lobe",
    "landmark_count",
    "ordering",
    "rmse_mm",
    "dsc",
    "hd_mm",
    "spacing_mm",
    "status",
];

/// Label used in the `case_id` column of summary rows.
pub const SUMMARY_ID: &str = "summary";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ok,
    Degenerate,
}

impl Status {
    pub fn as_str(&self) -> &'static str {
        match self {
            Status::Ok => "ok",
            Status::Degenerate => "degenerate",
        }
    }
}

/// One method's estimate for one held-out case.
#[derive(Debug, Clone, Serialize)]
pub struct CaseOutcome {
    pub case_id: String,
    pub method: Method,
    pub status: Status,
    /// `None` for degenerate baselines.
    pub report: Option<EvaluationReport>,
    #[serde(skip)]
    pub predicted: Option<Mesh>,
}

/// Landmark vertex indices active for `count` landmarks under `ordering`.
pub fn active_landmarks(
    full: &[usize],
    count: usize,
    ordering: LandmarkOrdering,
) -> Result<Vec<usize>> {
    select_landmarks(&LandmarkConfig::new(full.to_vec(), count, ordering)?)
}

/// Name of the landmark subsets singled out in the second ordering.
pub fn named_model(ordering: LandmarkOrdering, count: usize) -> Option<&'static str> {
    match (ordering, count) {
        (LandmarkOrdering::Experiment2, 3) => Some("3lm"),
        (LandmarkOrdering::Experiment2, 6) => Some("6lm"),
        _ => None,
    }
}

pub fn train_kernel(
    train: &[CaseRecord],
    landmarks: &[usize],
    hyper: KernelHyperparams,
    config: &RunConfig,
) -> Result<KernelModel> {
    let samples = build_dataset(train, landmarks, config.augment)?;
    let (xs, ys): (Vec<Vec<f64>>, Vec<_>) = samples.into_iter().map(|s| (s.x, s.y)).unzip();
    Ok(fit_scaled(&xs, &ys, hyper, config.hyper.scaling)?.with_lobe(train[0].lobe))
}

/// Samples of `case` as seen at prediction time: measured deflated landmarks
/// and the assumed volume ratio instead of the true one.
pub fn prediction_samples(
    case: &CaseRecord,
    landmarks: &[usize],
    volume_ratio: f64,
) -> Result<Vec<FeatureSample>> {
    let measured = case.deflated_landmarks(landmarks);
    let center = crate::mesh::centroid(&measured)?;
    (0..case.vertex_count())
        .filter(|v| !landmarks.contains(v))
        .map(|v| {
            Ok(FeatureSample {
                x: feature_vector(
                    &case.inflated,
                    landmarks,
                    &measured,
                    case.v_inf,
                    volume_ratio,
                    v,
                )?,
                y: case.deflated.vertex(v) - center,
                case_id: case.case_id.clone(),
                vertex_index: v,
            })
        })
        .collect()
}

/// Kernel estimate of the deflated mesh. Landmark vertices take their
/// measured positions.
pub fn predict_kernel(
    model: &KernelModel,
    test: &CaseRecord,
    landmarks: &[usize],
    volume_ratio: f64,
) -> Result<Mesh> {
    let samples = prediction_samples(test, landmarks, volume_ratio)?;
    let xs: Vec<Vec<f64>> = samples.iter().map(|s| s.x.clone()).collect();
    let measured = test.deflated_landmarks(landmarks);
    let positions = reconstruct_positions(&model.predict_batch(&xs)?, &measured)?;
    let mut verts = test.inflated.vertices().to_vec();
    for (s, p) in samples.iter().zip(positions) {
        verts[s.vertex_index] = p;
    }
    for (&v, p) in landmarks.iter().zip(&measured) {
        verts[v] = *p;
    }
    test.inflated.with_vertices(verts)
}

/// Baseline estimate, or `None` when the landmarks cannot determine it.
pub fn predict_baseline(
    method: Method,
    test: &CaseRecord,
    landmarks: &[usize],
    tps_regularization: f64,
) -> Result<Option<Mesh>> {
    let src: Vec<Point3<f64>> = landmarks.iter().map(|&i| test.inflated.vertex(i)).collect();
    let dst = test.deflated_landmarks(landmarks);
    let fitted = match method {
        Method::Affine => fit_affine(&src, &dst).map(|t| apply_affine(&t, &test.inflated)),
        Method::Tps => {
            fit_tps(&src, &dst, tps_regularization).map(|w| apply_tps(&w, &test.inflated))
        }
        Method::Kernel => return Err(Error::arg("kernel estimates need a trained model")),
    };
    match fitted {
        Ok(m) => Ok(Some(m)),
        Err(Error::Degenerate { .. } | Error::DegenerateLandmark(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

struct FoldSpec<'a> {
    lobe: LobeLabel,
    landmarks: &'a [usize],
    ordering: LandmarkOrdering,
    hyper: Option<KernelHyperparams>,
    methods: &'a [Method],
}

/// Trains on `train`, predicts `test` with every method in `spec`.
fn run_fold(
    train: &[CaseRecord],
    test: &CaseRecord,
    spec: &FoldSpec<'_>,
    config: &RunConfig,
) -> Result<Vec<CaseOutcome>> {
    let mut out = Vec::with_capacity(spec.methods.len());
    for &method in spec.methods {
        let predicted = match method {
            Method::Kernel => {
                let hyper = spec
                    .hyper
                    .ok_or_else(|| Error::arg("kernel hyperparameters were not selected"))?;
                let model = train_kernel(train, spec.landmarks, hyper, config)?;
                Some(predict_kernel(
                    &model,
                    test,
                    spec.landmarks,
                    config.volume_ratio,
                )?)
            }
            _ => predict_baseline(method, test, spec.landmarks, config.tps_regularization)?,
        };
        let report = match &predicted {
            Some(p) => {
                let ctx = ReportContext {
                    case_id: &test.case_id,
                    method,
                    lobe: spec.lobe,
                    landmark_count: spec.landmarks.len(),
                    ordering: spec.ordering,
                };
                Some(evaluate(
                    &ctx,
                    p,
                    &test.deflated,
                    spec.landmarks,
                    config.dsc_spacing,
                )?)
            }
            None => None,
        };
        out.push(CaseOutcome {
            case_id: test.case_id.clone(),
            method,
            status: if predicted.is_some() {
                Status::Ok
            } else {
                Status::Degenerate
            },
            report,
            predicted,
        });
    }
    Ok(out)
}

/// Leave-one-out over every case, in case order then method order.
fn leave_one_out(
    cases: &[CaseRecord],
    spec: &FoldSpec<'_>,
    config: &RunConfig,
) -> Result<Vec<CaseOutcome>> {
    let folds = cases
        .par_iter()
        .map(|test| {
            let (train, test) = split_leave_one_out(cases, &test.case_id)?;
            run_fold(&train, &test, spec, config)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(folds.into_iter().flatten().collect())
}

/// Mean and spread of a group of outcomes, over the non-degenerate ones.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub cases: usize,
    pub cases_ok: usize,
    pub rmse_mm: (f64, f64),
    pub dsc: (f64, f64),
    pub hd_mm: (f64, f64),
    pub spacing_mm: (f64, f64),
}

impl Summary {
    pub fn of<'a>(outcomes: impl IntoIterator<Item = &'a CaseOutcome>) -> Summary {
        let mut cases = 0;
        let reports: Vec<&EvaluationReport> = outcomes
            .into_iter()
            .inspect(|_| cases += 1)
            .filter_map(|o| o.report.as_ref())
            .collect();
        let stat = |f: fn(&EvaluationReport) -> f64| {
            mean_std(&reports.iter().map(|r| f(r)).collect::<Vec<_>>())
        };
        Summary {
            cases,
            cases_ok: reports.len(),
            rmse_mm: stat(|r| r.rmse_mm),
            dsc: stat(|r| r.dsc),
            hd_mm: stat(|r| r.hausdorff_mm),
            spacing_mm: stat(|r| r.spacing_mm),
        }
    }

    pub fn status(&self) -> &'static str {
        if self.cases_ok == self.cases {
            "ok"
        } else if self.cases_ok == 0 {
            "degenerate"
        } else {
            "partial"
        }
    }
}

fn lobes_to_run(config: &RunConfig) -> Result<Vec<LobeLabel>> {
    match config.lobe {
        Some(l) => Ok(vec![l]),
        None => {
            let lobes = Manifest::load(config.manifest()?)?.lobes();
            if lobes.is_empty() {
                return Err(Error::arg("manifest lists no cases"));
            }
            Ok(lobes)
        }
    }
}

fn load_cohort(config: &RunConfig, lobe: LobeLabel) -> Result<LobeCohort> {
    let cohort = load_lobe(config.manifest()?, lobe)?;
    if cohort.cases.len() < 2 {
        return Err(Error::arg(format!(
            "the {lobe} lobe needs at least two cases for leave-one-out"
        )));
    }
    Ok(cohort)
}

#[derive(Debug, Clone, Serialize)]
pub struct SelectionRecord {
    pub lobe: LobeLabel,
    pub ordering: LandmarkOrdering,
    pub landmark_count: usize,
    pub selection: HyperSelection,
}

fn select_if_needed(
    cohort: &LobeCohort,
    landmarks: &[usize],
    ordering: LandmarkOrdering,
    needed: bool,
    config: &RunConfig,
    log: &mut Vec<SelectionRecord>,
) -> Result<Option<KernelHyperparams>> {
    if !needed {
        return Ok(None);
    }
    let selection = config
        .hyper
        .select(&cohort.cases, landmarks, config.augment)?;
    let hyper = selection.hyper;
    log.push(SelectionRecord {
        lobe: cohort.lobe,
        ordering,
        landmark_count: landmarks.len(),
        selection,
    });
    Ok(Some(hyper))
}

fn prepare_output(config: &RunConfig) -> Result<PathBuf> {
    config.validate()?;
    create_dir(&config.output_dir)?;
    Ok(config.output_dir.clone())
}

#[derive(Debug, Clone)]
pub struct LobeEvaluation {
    pub lobe: LobeLabel,
    pub landmarks: Vec<usize>,
    pub hyper: Option<KernelHyperparams>,
    pub outcomes: Vec<CaseOutcome>,
}

impl LobeEvaluation {
    pub fn summary(&self, method: Method) -> Summary {
        Summary::of(self.outcomes.iter().filter(|o| o.method == method))
    }
}

#[derive(Debug, Clone)]
pub struct EvaluateResult {
    pub lobes: Vec<LobeEvaluation>,
    pub csv_path: PathBuf,
    pub csv: String,
}

fn outcome_row(
    o: &CaseOutcome,
    lobe: LobeLabel,
    count: usize,
    ordering: LandmarkOrdering,
) -> Vec<String> {
    let r = o.report.as_ref();
    let v = |f: fn(&EvaluationReport) -> f64| r.map(|r| fmt_value(f(r))).unwrap_or_default();
    vec![
        o.case_id.clone(),
        o.method.to_string(),
        lobe.to_string(),
        count.to_string(),
        ordering.to_string(),
        v(|r| r.rmse_mm),
        v(|r| r.dsc),
        v(|r| r.hausdorff_mm),
        v(|r| r.spacing_mm),
        o.status.as_str().to_string(),
    ]
}

fn summary_row(
    s: &Summary,
    method: Method,
    lobe: LobeLabel,
    count: usize,
    ordering: LandmarkOrdering,
) -> Vec<String> {
    vec![
        SUMMARY_ID.to_string(),
        method.to_string(),
        lobe.to_string(),
        count.to_string(),
        ordering.to_string(),
        fmt_mean_std(s.rmse_mm),
        fmt_mean_std(s.dsc),
        fmt_mean_std(s.hd_mm),
        fmt_mean_std(s.spacing_mm),
        s.status().to_string(),
    ]
}

/// Leave-one-out comparison of the selected methods. Writes `evaluate.csv`,
/// one JSON report per case under `cases/`, and kernel error maps under
/// `meshes/`.
pub fn run_evaluate(config: &RunConfig) -> Result<EvaluateResult> {
    let dir = prepare_output(config)?;
    let methods: Vec<Method> = Method::ALL.into_iter().filter(|m| config.has(*m)).collect();
    let mut selections = Vec::new();
    let mut lobes = Vec::new();
    for lobe in lobes_to_run(config)? {
        let cohort = load_cohort(config, lobe)?;
        let landmarks = active_landmarks(
            &cohort.landmark_indices,
            config.landmark_count,
            config.ordering,
        )?;
        let hyper = select_if_needed(
            &cohort,
            &landmarks,
            config.ordering,
            config.has(Method::Kernel),
            config,
            &mut selections,
        )?;
        let spec = FoldSpec {
            lobe,
            landmarks: &landmarks,
            ordering: config.ordering,
            hyper,
            methods: &methods,
        };
        let outcomes = leave_one_out(&cohort.cases, &spec, config)?;
        lobes.push(LobeEvaluation {
            lobe,
            landmarks,
            hyper,
            outcomes,
        });
    }

    let mut rows = Vec::new();
    for e in &lobes {
        let count = e.landmarks.len();
        rows.extend(
            e.outcomes
                .iter()
                .map(|o| outcome_row(o, e.lobe, count, config.ordering)),
        );
        for &m in &methods {
            rows.push(summary_row(
                &e.summary(m),
                m,
                e.lobe,
                count,
                config.ordering,
            ));
        }
        let case_dir = dir.join("cases").join(e.lobe.as_str());
        create_dir(&case_dir)?;
        for chunk in e.outcomes.chunks(methods.len()) {
            write_json(&case_dir.join(format!("{}.json", chunk[0].case_id)), &chunk)?;
        }
        if config.write_meshes {
            let mesh_dir = dir.join("meshes").join(e.lobe.as_str());
            create_dir(&mesh_dir)?;
            for o in e.outcomes.iter().filter(|o| o.method == Method::Kernel) {
                if let (Some(p), Some(r)) = (&o.predicted, &o.report) {
                    let colors: Vec<f64> = r
                        .per_vertex_error_mm
                        .iter()
                        .map(|e| e / ERROR_COLOR_SATURATION_MM)
                        .collect();
                    save_ply(
                        p,
                        mesh_dir.join(format!("{}_kernel_error.ply", o.case_id)),
                        Some(&colors),
                    )?;
                }
            }
        }
    }
    let csv_path = dir.join("evaluate.csv");
    let csv = write_csv(&csv_path, &EVALUATE_COLUMNS, &rows)?;
    write_metadata(
        &dir,
        "evaluate",
        config,
        serde_json::json!({ "hyperparameters": selections }),
    )?;
    Ok(EvaluateResult {
        lobes,
        csv_path,
        csv,
    })
}

pub const SWEEP_LANDMARK_COLUMNS: [&str; 15] = [
    "lobe",
    "ordering",
    "landmark_count",
    "named_model",
    "method",
    "cases",
    "cases_ok",
    "rmse_mean_mm",
    "rmse_std_mm",
    "dsc_mean",
    "dsc_std",
    "hd_mean_mm",
    "hd_std_mm",
    "spacing_mean_mm",
    "status",
];

#[derive(Debug, Clone, Serialize)]
pub struct LandmarkSweepRow {
    pub lobe: LobeLabel,
    pub ordering: LandmarkOrdering,
    pub landmark_count: usize,
    pub named_model: Option<&'static str>,
    pub method: Method,
    pub summary: Summary,
}

#[derive(Debug, Clone)]
pub struct SweepResult<R> {
    pub rows: Vec<R>,
    pub csv_path: PathBuf,
    pub csv: String,
}

/// Leave-one-out summaries for every landmark count 1..=12 under both orderings.
pub fn run_sweep_landmarks(config: &RunConfig) -> Result<SweepResult<LandmarkSweepRow>> {
    run_sweep_landmarks_over(config, &(1..=LANDMARK_COUNT).collect::<Vec<_>>())
}

/// As [`run_sweep_landmarks`], restricted to `counts`.
pub fn run_sweep_landmarks_over(
    config: &RunConfig,
    counts: &[usize],
) -> Result<SweepResult<LandmarkSweepRow>> {
    let dir = prepare_output(config)?;
    let methods: Vec<Method> = Method::ALL.into_iter().filter(|m| config.has(*m)).collect();
    let mut selections = Vec::new();
    let mut rows = Vec::new();
    for lobe in lobes_to_run(config)? {
        let cohort = load_cohort(config, lobe)?;
        for ordering in [LandmarkOrdering::Experiment1, LandmarkOrdering::Experiment2] {
            for &count in counts {
                let landmarks = active_landmarks(&cohort.landmark_indices, count, ordering)?;
                let hyper = select_if_needed(
                    &cohort,
                    &landmarks,
                    ordering,
                    config.has(Method::Kernel),
                    config,
                    &mut selections,
                )?;
                let spec = FoldSpec {
                    lobe,
                    landmarks: &landmarks,
                    ordering,
                    hyper,
                    methods: &methods,
                };
                let outcomes = leave_one_out(&cohort.cases, &spec, config)?;
                for &method in &methods {
                    rows.push(LandmarkSweepRow {
                        lobe,
                        ordering,
                        landmark_count: count,
                        named_model: named_model(ordering, count),
                        method,
                        summary: Summary::of(outcomes.iter().filter(|o| o.method == method)),
                    });
                }
            }
        }
    }
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let s = &r.summary;
            vec![
                r.lobe.to_string(),
                r.ordering.to_string(),
                r.landmark_count.to_string(),
                r.named_model.unwrap_or("").to_string(),
                r.method.to_string(),
                s.cases.to_string(),
                s.cases_ok.to_string(),
                fmt_value(s.rmse_mm.0),
                fmt_value(s.rmse_mm.1),
                fmt_value(s.dsc.0),
                fmt_value(s.dsc.1),
                fmt_value(s.hd_mm.0),
                fmt_value(s.hd_mm.1),
                fmt_value(s.spacing_mm.0),
                s.status().to_string(),
            ]
        })
        .collect();
    let csv_path = dir.join("sweep_landmarks.csv");
    let csv = write_csv(&csv_path, &SWEEP_LANDMARK_COLUMNS, &body)?;
    write_metadata(
        &dir,
        "sweep_landmarks",
        config,
        serde_json::json!({ "hyperparameters": selections }),
    )?;
    Ok(SweepResult {
        rows,
        csv_path,
        csv,
    })
}

pub const SWEEP_CASE_COLUMNS: [&str; 15] = [
    "lobe",
    "model",
    "landmark_count",
    "train_cases",
    "test_cases",
    "combinations_per_test",
    "subsampled",
    "evaluations",
    "rmse_mean_mm",
    "rmse_std_mm",
    "rmse_combination_std_mm",
    "dsc_mean",
    "dsc_std",
    "hd_mean_mm",
    "hd_std_mm",
];

#[derive(Debug, Clone, Serialize)]
pub struct CaseSweepRow {
    pub lobe: LobeLabel,
    pub model: &'static str,
    pub landmark_count: usize,
    pub train_cases: usize,
    pub test_cases: usize,
    /// Training sets evaluated per held-out case.
    pub combinations_per_test: usize,
    /// Number of training sets available per held-out case.
    pub combinations_available: u128,
    pub subsampled: bool,
    pub evaluations: usize,
    /// Spread over every (held-out case, training set) evaluation.
    pub rmse_mm: (f64, f64),
    /// Mean over held-out cases of the spread across training sets.
    pub rmse_combination_std_mm: f64,
    pub dsc: (f64, f64),
    pub hd_mm: (f64, f64),
}

/// Number of `k`-subsets of `n` items.
pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i as u128 + 1))
}

/// All `k`-subsets of `0..n` in lexicographic order when there are at most
/// `cap` of them, otherwise `cap` distinct subsets drawn with `rng`, sorted.
pub fn combinations(n: usize, k: usize, cap: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    if k == 0 || k > n {
        return vec![];
    }
    if binomial(n, k) <= cap as u128 {
        let mut out = Vec::new();
        let mut cur: Vec<usize> = (0..k).collect();
        loop {
            out.push(cur.clone());
            let Some(i) = (0..k).rev().find(|&i| cur[i] < n - k + i) else {
                return out;
            };
            cur[i] += 1;
            for j in i + 1..k {
                cur[j] = cur[j - 1] + 1;
            }
        }
    }
    let mut picked = BTreeSet::new();
    while picked.len() < cap {
        let mut s = sample(rng, n, k).into_vec();
        s.sort_unstable();
        picked.insert(s);
    }
    picked.into_iter().collect()
}

fn sweep_stream(lobe: LobeLabel, count: usize, c: usize, test: usize) -> u64 {
    let lobe = match lobe {
        LobeLabel::Upper => 0u64,
        LobeLabel::Lower => 1,
    };
    (lobe << 48) | ((count as u64) << 32) | ((c as u64) << 16) | test as u64
}

/// Kernel accuracy against the number of training cases, for the 3- and
/// 6-landmark models. For each held-out case and size `c`, training sets are
/// drawn from the remaining cases: all of them up to the combination cap,
/// else a seeded sample of `max_combinations`.
pub fn run_sweep_cases(config: &RunConfig) -> Result<SweepResult<CaseSweepRow>> {
    let dir = prepare_output(config)?;
    let mut selections = Vec::new();
    let mut rows = Vec::new();
    for lobe in lobes_to_run(config)? {
        let cohort = load_cohort(config, lobe)?;
        let n = cohort.cases.len();
        let counts: Vec<usize> = match &config.case_counts {
            Some(c) => c.clone(),
            None => (1..n).collect(),
        };
        if let Some(bad) = counts.iter().find(|&&c| c == 0 || c >= n) {
            return Err(Error::arg(format!("training size {bad} is outside 1..{n}")));
        }
        for (model, count) in [("3lm", 3), ("6lm", 6)] {
            let landmarks = active_landmarks(
                &cohort.landmark_indices,
                count,
                LandmarkOrdering::Experiment2,
            )?;
            let hyper = select_if_needed(
                &cohort,
                &landmarks,
                LandmarkOrdering::Experiment2,
                true,
                config,
                &mut selections,
            )?
            .expect("selection requested");
            let methods = [Method::Kernel];
            let spec = FoldSpec {
                lobe,
                landmarks: &landmarks,
                ordering: LandmarkOrdering::Experiment2,
                hyper: Some(hyper),
                methods: &methods,
            };
            for &c in &counts {
                let mut jobs = Vec::new();
                for t in 0..n {
                    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
                    rng.set_stream(sweep_stream(lobe, count, c, t));
                    for combo in combinations(n - 1, c, config.max_combinations, &mut rng) {
                        jobs.push((t, combo));
                    }
                }
                let per_test = jobs.len() / n;
                let outcomes = jobs
                    .par_iter()
                    .map(|(t, combo)| {
                        let others: Vec<&CaseRecord> = cohort
                            .cases
                            .iter()
                            .enumerate()
                            .filter(|(i, _)| i != t)
                            .map(|(_, c)| c)
                            .collect();
                        let train: Vec<CaseRecord> =
                            combo.iter().map(|&i| others[i].clone()).collect();
                        Ok(run_fold(&train, &cohort.cases[*t], &spec, config)?.remove(0))
                    })
                    .collect::<Result<Vec<CaseOutcome>>>()?;
                let summary = Summary::of(&outcomes);
                let combination_std = mean_std(
                    &outcomes
                        .chunks(per_test)
                        .map(|ch| {
                            mean_std(
                                &ch.iter()
                                    .filter_map(|o| o.report.as_ref().map(|r| r.rmse_mm))
                                    .collect::<Vec<_>>(),
                            )
                            .1
                        })
                        .collect::<Vec<_>>(),
                )
                .0;
                let available = binomial(n - 1, c);
                rows.push(CaseSweepRow {
                    lobe,
                    model,
                    landmark_count: count,
                    train_cases: c,
                    test_cases: n,
                    combinations_per_test: per_test,
                    combinations_available: available,
                    subsampled: available > config.max_combinations as u128,
                    evaluations: outcomes.len(),
                    rmse_mm: summary.rmse_mm,
                    rmse_combination_std_mm: combination_std,
                    dsc: summary.dsc,
                    hd_mm: summary.hd_mm,
                });
            }
        }
    }
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.lobe.to_string(),
                r.model.to_string(),
                r.landmark_count.to_string(),
                r.train_cases.to_string(),
                r.test_cases.to_string(),
                r.combinations_per_test.to_string(),
                r.subsampled.to_string(),
                r.evaluations.to_string(),
                fmt_value(r.rmse_mm.0),
                fmt_value(r.rmse_mm.1),
                fmt_value(r.rmse_combination_std_mm),
                fmt_value(r.dsc.0),
                fmt_value(r.dsc.1),
                fmt_value(r.hd_mm.0),
                fmt_value(r.hd_mm.1),
            ]
        })
        .collect();
    let csv_path = dir.join("sweep_cases.csv");
    let csv = write_csv(&csv_path, &SWEEP_CASE_COLUMNS, &body)?;
    let subsampling: Vec<_> = rows
        .iter()
        .map(|r| {
            serde_json::json!({
                "lobe": r.lobe,
                "model": r.model,
                "train_cases": r.train_cases,
                "combinations_available": r.combinations_available.to_string(),
                "combinations_per_test": r.combinations_per_test,
                "subsampled": r.subsampled,
            })
        })
        .collect();
    write_metadata(
        &dir,
        "sweep_cases",
        config,
        serde_json::json!({
            "hyperparameters": selections,
            "combination_cap": config.max_combinations,
            "subsample_seed": config.seed,
            "combinations": subsampling,
        }),
    )?;
    Ok(SweepResult {
        rows,
        csv_path,
        csv,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseLambda {
    pub case_id: String,
    pub lambda_mean: f64,
    pub lambda_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LobeSensitivity {
    pub lobe: LobeLabel,
    pub landmark_count: usize,
    pub ordering: LandmarkOrdering,
    pub columns: PerturbedColumns,
    pub hyper: KernelHyperparams,
    /// `true` when Λ comes from one stored model instead of leave-one-out fits.
    pub from_model_file: bool,
    pub sample_count: usize,
    pub lambda_mean: f64,
    pub lambda_std: f64,
    /// Λ measured on the canine data, for comparison.
    pub reference_mean: f64,
    pub reference_std: f64,
    pub per_case: Vec<CaseLambda>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityOutput {
    pub lobes: Vec<LobeSensitivity>,
}

#[derive(Debug, Clone)]
pub struct SensitivityResult {
    pub report: SensitivityOutput,
    pub json_path: PathBuf,
}

fn lambda_map(dir: &Path, case: &CaseRecord, values: &[(usize, f64)], max: f64) -> Result<()> {
    let mut s = vec![0.0; case.vertex_count()];
    for &(v, l) in values {
        s[v] = if max > 0.0 { l / max } else { 0.0 };
    }
    save_ply(
        &case.inflated,
        dir.join(format!("{}_lambda.ply", case.case_id)),
        Some(&s),
    )
}

/// Λ (largest squared singular value of the prediction Jacobian) over every
/// non-landmark vertex of every case, each predicted by a model that never saw
/// it. With `model_path`, the stored model is used for all cases instead.
pub fn run_sensitivity(config: &RunConfig) -> Result<SensitivityResult> {
    let dir = prepare_output(config)?;
    let stored = config.model_path.as_ref().map(load_model).transpose()?;
    let lobes = match (&stored, config.lobe) {
        (Some(m), None) => vec![m.lobe],
        (Some(m), Some(l)) if m.lobe != l => {
            return Err(Error::arg(format!("model file is for the {} lobe", m.lobe)));
        }
        _ => lobes_to_run(config)?,
    };
    let mut selections = Vec::new();
    let mut out = Vec::new();
    for lobe in lobes {
        let cohort = load_cohort(config, lobe)?;
        let count = stored
            .as_ref()
            .map_or(config.landmark_count, |m| m.landmark_count);
        let landmarks = active_landmarks(&cohort.landmark_indices, count, config.ordering)?;
        let hyper = match &stored {
            Some(m) => m.hyper,
            None => select_if_needed(
                &cohort,
                &landmarks,
                config.ordering,
                true,
                config,
                &mut selections,
            )?
            .expect("selection requested"),
        };
        let per_case = cohort
            .cases
            .par_iter()
            .map(|case| {
                let fitted;
                let model = match &stored {
                    Some(m) => m,
                    None => {
                        let (train, _) = split_leave_one_out(&cohort.cases, &case.case_id)?;
                        fitted = train_kernel(&train, &landmarks, hyper, config)?;
                        &fitted
                    }
                };
                let samples = prediction_samples(case, &landmarks, config.volume_ratio)?;
                let r = lambda_statistics(model, &samples, config.sensitivity_columns)?;
                Ok(samples
                    .iter()
                    .map(|s| s.vertex_index)
                    .zip(r.per_vertex_max_singular_sq)
                    .collect::<Vec<_>>())
            })
            .collect::<Result<Vec<Vec<(usize, f64)>>>>()?;
        let all: Vec<f64> = per_case.iter().flatten().map(|&(_, l)| l).collect();
        let (lambda_mean, lambda_std) = mean_std(&all);
        if config.write_meshes {
            let mesh_dir = dir.join("sensitivity").join(lobe.as_str());
            create_dir(&mesh_dir)?;
            let max = all.iter().copied().fold(0.0, f64::max);
            for (case, values) in cohort.cases.iter().zip(&per_case) {
                lambda_map(&mesh_dir, case, values, max)?;
            }
        }
        let reference = match lobe {
            LobeLabel::Upper => REFERENCE_LAMBDA_UPPER,
            LobeLabel::Lower => REFERENCE_LAMBDA_LOWER,
        };
        out.push(LobeSensitivity {
            lobe,
            landmark_count: count,
            ordering: config.ordering,
            columns: config.sensitivity_columns,
            hyper,
            from_model_file: stored.is_some(),
            sample_count: all.len(),
            lambda_mean,
            lambda_std,
            reference_mean: reference.0,
            reference_std: reference.1,
            per_case: cohort
                .cases
                .iter()
                .zip(&per_case)
                .map(|(c, v)| {
                    let (m, s) = mean_std(&v.iter().map(|p| p.1).collect::<Vec<_>>());
                    CaseLambda {
                        case_id: c.case_id.clone(),
                        lambda_mean: m,
                        lambda_std: s,
                    }
                })
                .collect(),
        });
    }
    let report = SensitivityOutput { lobes: out };
    let json_path = dir.join("sensitivity.json");
    write_json(&json_path, &report)?;
    write_metadata(
        &dir,
        "sensitivity",
        config,
        serde_json::json!({ "hyperparameters": selections }),
    )?;
    Ok(SensitivityResult { report, json_path })
}
