//! Reconstruction metrics: RMSE and R² curves over normalized time, per-joint
//! errors, the training-mean baseline and cross-fold summaries.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::data::{standardize_trial, unstandardize_trial, MotionDataset, StandardizationStats};
use crate::dynamics::LatentPath;
use crate::error::{Error, Result};
use crate::model::LatentOdeModel;
use crate::scalar::Scalar;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Reconstruction of one trial in original units.
#[derive(Clone, Debug)]
pub struct Prediction {
    pub trial_id: String,
    pub truth: Array2<f64>,
    pub predicted: Array2<f64>,
    pub latent: LatentPath<f64>,
}

fn path_to_f64<S: Scalar>(path: &LatentPath<S>) -> LatentPath<f64> {
    LatentPath {
        states: path.states.mapv(|v| v.to_f64_lossy()),
        initial: path.initial.mapv(|v| v.to_f64_lossy()),
    }
}

/// Reconstructs a standardized sequence; `truth` is its unstandardized input.
pub fn predict<S: Scalar>(model: &LatentOdeModel<S>, x: ArrayView2<'_, S>, stats: &StandardizationStats) -> Result<Prediction> {
    let (decoded, path) = model.predict_standardized(x)?;
    Ok(Prediction {
        trial_id: String::new(),
        truth: unstandardize_trial(x, stats)?,
        predicted: unstandardize_trial(decoded.view(), stats)?,
        latent: path_to_f64(&path),
    })
}

/// Reconstructs a trial given in original units; `truth` is the input itself.
pub fn predict_trial<S: Scalar>(
    model: &LatentOdeModel<S>,
    trial_id: &str,
    raw: ArrayView2<'_, f64>,
    stats: &StandardizationStats,
) -> Result<Prediction> {
    let x: Array2<S> = standardize_trial(raw, stats)?;
    let (decoded, path) = model.predict_standardized(x.view())?;
    Ok(Prediction {
        trial_id: trial_id.to_owned(),
        truth: raw.to_owned(),
        predicted: unstandardize_trial(decoded.view(), stats)?,
        latent: path_to_f64(&path),
    })
}

fn check_pairs(truths: &[ArrayView2<'_, f64>], preds: &[ArrayView2<'_, f64>]) -> Result<(usize, usize)> {
    if truths.is_empty() || truths.len() != preds.len() {
        return Err(Error::Contract(format!(
            "need matching non-empty trial lists, got {} truths and {} predictions",
            truths.len(),
            preds.len()
        )));
    }
    let dim = truths[0].dim();
    if truths.iter().any(|a| a.dim() != dim) || preds.iter().any(|a| a.dim() != dim) {
        return Err(Error::Contract("all trials must share one shape".into()));
    }
    Ok(dim)
}

/// RMSE at each frame, pooled over trials and features.
pub fn rmse_curve(truths: &[ArrayView2<'_, f64>], preds: &[ArrayView2<'_, f64>]) -> Result<Vec<f64>> {
    let (t_len, f) = check_pairs(truths, preds)?;
    let n = (truths.len() * f) as f64;
    Ok((0..t_len)
        .map(|t| {
            let sse: f64 = truths
                .iter()
                .zip(preds)
                .map(|(a, b)| a.row(t).iter().zip(b.row(t)).map(|(x, y)| (x - y) * (x - y)).sum::<f64>())
                .sum();
            (sse / n).sqrt()
        })
        .collect())
}

/// RMSE of each group of `group` consecutive features (a joint's x, y, z),
/// pooled over trials and frames.
pub fn grouped_rmse(truths: &[ArrayView2<'_, f64>], preds: &[ArrayView2<'_, f64>], group: usize) -> Result<Vec<f64>> {
    let (t_len, f) = check_pairs(truths, preds)?;
    if group == 0 || f % group != 0 {
        return Err(Error::Contract(format!("{f} features do not split into groups of {group}")));
    }
    let n = (truths.len() * t_len * group) as f64;
    Ok((0..f / group)
        .map(|j| {
            let cols = j * group..(j + 1) * group;
            let sse: f64 = truths
                .iter()
                .zip(preds)
                .map(|(a, b)| {
                    let d = &a.slice(ndarray::s![.., cols.clone()]) - &b.slice(ndarray::s![.., cols.clone()]);
                    d.iter().map(|v| v * v).sum::<f64>()
                })
                .sum();
            (sse / n).sqrt()
        })
        .collect())
}

/// RMSE over every frame, trial and feature.
pub fn overall_rmse(truths: &[ArrayView2<'_, f64>], preds: &[ArrayView2<'_, f64>]) -> Result<f64> {
    let curve = rmse_curve(truths, preds)?;
    Ok((curve.iter().map(|r| r * r).sum::<f64>() / curve.len() as f64).sqrt())
}

/// Reference the total sum of squares is taken about.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum R2Centering {
    /// Per-frame mean of the test trials themselves.
    #[default]
    TestMean,
    /// Per-frame mean of the training trials.
    TrainMean,
}

/// Per-frame coefficient of determination, pooled over test trials and
/// features. Frames where every test trial coincides with the reference have
/// no defined value.
pub fn r2_curve(
    truths: &[ArrayView2<'_, f64>],
    preds: &[ArrayView2<'_, f64>],
    reference: Option<ArrayView2<'_, f64>>,
) -> Result<Vec<Option<f64>>> {
    let (t_len, f) = check_pairs(truths, preds)?;
    let reference = match reference {
        Some(r) => {
            if r.dim() != (t_len, f) {
                return Err(Error::Contract("R² reference has the wrong shape".into()));
            }
            r.to_owned()
        }
        None => {
            if truths.len() < 2 {
                return Err(Error::Contract("R² about the test mean needs at least two test trials".into()));
            }
            mean_trial(truths)
        }
    };
    Ok((0..t_len)
        .map(|t| {
            let mut ss_res = 0.0;
            let mut ss_tot = 0.0;
            for (a, b) in truths.iter().zip(preds) {
                for c in 0..f {
                    let y = a[[t, c]];
                    ss_res += (y - b[[t, c]]).powi(2);
                    ss_tot += (y - reference[[t, c]]).powi(2);
                }
            }
            (ss_tot > 0.0).then(|| 1.0 - ss_res / ss_tot)
        })
        .collect())
}

fn mean_trial(trials: &[ArrayView2<'_, f64>]) -> Array2<f64> {
    let mut acc = Array2::zeros(trials[0].dim());
    for t in trials {
        acc += t;
    }
    acc / trials.len() as f64
}

/// First frame of the latter half of a `T`-frame window: `⌈T/2⌉`.
pub fn latter_half_start(t_len: usize) -> usize {
    t_len.div_ceil(2)
}

/// Mean of the defined values in `range`, or `None` if there are none.
pub fn mean_defined(values: &[Option<f64>], range: std::ops::Range<usize>) -> Option<f64> {
    let defined: Vec<f64> = values[range].iter().flatten().copied().collect();
    (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
}

/// Predicts the frame-wise mean of the training trials for every test trial.
#[derive(Clone, Debug, PartialEq)]
pub struct MeanBaseline {
    pub mean: Array2<f64>,
}

impl MeanBaseline {
    pub fn fit(train: &[ArrayView2<'_, f64>]) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Contract("baseline needs at least one training trial".into()));
        }
        if train.iter().any(|x| x.dim() != train[0].dim()) {
            return Err(Error::Contract("all trials must share one shape".into()));
        }
        Ok(MeanBaseline { mean: mean_trial(train) })
    }

    pub fn predict(&self) -> Array2<f64> {
        self.mean.clone()
    }
}

/// Metrics of one set of predictions over a test set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveMetrics {
    pub rmse_curve: Vec<f64>,
    pub per_joint_rmse: Vec<f64>,
    pub r2_curve: Vec<Option<f64>>,
    pub overall_rmse: f64,
    pub late_rmse: f64,
    pub mean_r2_full: Option<f64>,
    pub mean_r2_latter_half: Option<f64>,
    pub undefined_r2_frames: usize,
}

impl CurveMetrics {
    pub fn compute(
        truths: &[ArrayView2<'_, f64>],
        preds: &[ArrayView2<'_, f64>],
        reference: Option<ArrayView2<'_, f64>>,
    ) -> Result<Self> {
        let rmse = rmse_curve(truths, preds)?;
        let r2 = r2_curve(truths, preds, reference)?;
        let t_len = rmse.len();
        let half = latter_half_start(t_len);
        let late = &rmse[half..];
        Ok(CurveMetrics {
            per_joint_rmse: grouped_rmse(truths, preds, 3)?,
            overall_rmse: (rmse.iter().map(|r| r * r).sum::<f64>() / t_len as f64).sqrt(),
            late_rmse: (late.iter().map(|r| r * r).sum::<f64>() / late.len().max(1) as f64).sqrt(),
            mean_r2_full: mean_defined(&r2, 0..t_len),
            mean_r2_latter_half: mean_defined(&r2, half..t_len),
            undefined_r2_frames: r2.iter().filter(|v| v.is_none()).count(),
            rmse_curve: rmse,
            r2_curve: r2,
        })
    }
}

/// Held-out evaluation of one fold, model and baseline side by side.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub participant_id: String,
    pub fold_id: usize,
    pub n_test_trials: usize,
    pub n_frames: usize,
    pub latter_half_start: usize,
    pub r2_centering: R2Centering,
    pub test_trial_ids: Vec<String>,
    pub model: CurveMetrics,
    pub baseline: CurveMetrics,
}

impl EvalReport {
    pub fn rmse_csv(&self) -> String {
        let mut out = String::from("frame,normalized_time,rmse,baseline_rmse\n");
        let denom = (self.n_frames.max(2) - 1) as f64;
        for (t, (m, b)) in self.model.rmse_curve.iter().zip(&self.baseline.rmse_curve).enumerate() {
            out.push_str(&format!("{t},{},{m:e},{b:e}\n", t as f64 / denom));
        }
        out
    }

    pub fn r2_csv(&self) -> String {
        let cell = |v: &Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
        let mut out = String::from("frame,normalized_time,r2,baseline_r2\n");
        let denom = (self.n_frames.max(2) - 1) as f64;
        for (t, (m, b)) in self.model.r2_curve.iter().zip(&self.baseline.r2_curve).enumerate() {
            out.push_str(&format!("{t},{},{},{}\n", t as f64 / denom, cell(m), cell(b)));
        }
        out
    }
}

/// Predicts every test trial of a fold and scores model and baseline.
pub fn evaluate_fold<S: Scalar>(
    model: &LatentOdeModel<S>,
    stats: &StandardizationStats,
    dataset: &MotionDataset,
    fold_id: usize,
    test_idx: &[usize],
    train_idx: &[usize],
    centering: R2Centering,
) -> Result<(EvalReport, Vec<Prediction>)> {
    if test_idx.is_empty() || train_idx.is_empty() {
        return Err(Error::Contract("fold needs both training and test trials".into()));
    }
    let predictions = test_idx
        .iter()
        .map(|&i| predict_trial(model, &dataset.trial_ids[i], dataset.trials[i].view(), stats))
        .collect::<Result<Vec<_>>>()?;
    let truths: Vec<_> = predictions.iter().map(|p| p.truth.view()).collect();
    let preds: Vec<_> = predictions.iter().map(|p| p.predicted.view()).collect();
    let train: Vec<_> = train_idx.iter().map(|&i| dataset.trials[i].view()).collect();
    let baseline = MeanBaseline::fit(&train)?;
    let reference = match centering {
        R2Centering::TestMean => None,
        R2Centering::TrainMean => Some(baseline.mean.view()),
    };
    let model_metrics = CurveMetrics::compute(&truths, &preds, reference)?;
    let baseline_preds: Vec<_> = truths.iter().map(|_| baseline.mean.view()).collect();
    let baseline_metrics = CurveMetrics::compute(&truths, &baseline_preds, reference)?;
    let n_frames = dataset.n_frames();
    let report = EvalReport {
        schema_version: REPORT_SCHEMA_VERSION,
        participant_id: dataset.participant_id.clone(),
        fold_id,
        n_test_trials: test_idx.len(),
        n_frames,
        latter_half_start: latter_half_start(n_frames),
        r2_centering: centering,
        test_trial_ids: test_idx.iter().map(|&i| dataset.trial_ids[i].clone()).collect(),
        model: model_metrics,
        baseline: baseline_metrics,
    };
    Ok((report, predictions))
}

/// Mean and population standard deviation across folds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
    pub n: usize,
}

impl MeanSd {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Some(MeanSd {
            mean,
            sd: var.sqrt(),
            n: values.len(),
        })
    }
}

/// Frame-wise mean ± SD of a curve across folds; undefined entries are skipped.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveBand {
    pub mean: Vec<Option<f64>>,
    pub sd: Vec<Option<f64>>,
}

impl CurveBand {
    fn of(curves: &[Vec<Option<f64>>]) -> Self {
        let t_len = curves.iter().map(Vec::len).min().unwrap_or(0);
        let stats: Vec<Option<MeanSd>> = (0..t_len)
            .map(|t| MeanSd::of(&curves.iter().filter_map(|c| c[t]).collect::<Vec<_>>()))
            .collect();
        CurveBand {
            mean: stats.iter().map(|s| s.map(|s| s.mean)).collect(),
            sd: stats.iter().map(|s| s.map(|s| s.sd)).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub overall_rmse: Option<MeanSd>,
    pub late_rmse: Option<MeanSd>,
    pub mean_r2_full: Option<MeanSd>,
    pub mean_r2_latter_half: Option<MeanSd>,
    /// Per-joint RMSE over all test trials of all folds.
    pub pooled_per_joint_rmse: Vec<f64>,
    pub rmse_band: CurveBand,
    pub r2_band: CurveBand,
}

impl MetricSummary {
    fn of(metrics: &[(&CurveMetrics, usize)]) -> Self {
        let pick = |f: &dyn Fn(&CurveMetrics) -> Option<f64>| MeanSd::of(&metrics.iter().filter_map(|(m, _)| f(m)).collect::<Vec<_>>());
        let n_joints = metrics.first().map_or(0, |(m, _)| m.per_joint_rmse.len());
        let total: usize = metrics.iter().map(|(_, n)| n).sum();
        let pooled = (0..n_joints)
            .map(|j| {
                let s: f64 = metrics.iter().map(|(m, n)| m.per_joint_rmse[j].powi(2) * *n as f64).sum();
                (s / total as f64).sqrt()
            })
            .collect();
        MetricSummary {
            overall_rmse: pick(&|m| Some(m.overall_rmse)),
            late_rmse: pick(&|m| Some(m.late_rmse)),
            mean_r2_full: pick(&|m| m.mean_r2_full),
            mean_r2_latter_half: pick(&|m| m.mean_r2_latter_half),
            pooled_per_joint_rmse: pooled,
            rmse_band: CurveBand::of(&metrics.iter().map(|(m, _)| m.rmse_curve.iter().map(|&v| Some(v)).collect()).collect::<Vec<_>>()),
            r2_band: CurveBand::of(&metrics.iter().map(|(m, _)| m.r2_curve.clone()).collect::<Vec<_>>()),
        }
    }
}

/// Cross-fold aggregate for one participant. Spreads are population SDs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParticipantSummary {
    pub schema_version: u32,
    pub participant_id: String,
    pub folds: Vec<usize>,
    pub sd_convention: String,
    pub model: MetricSummary,
    pub baseline: MetricSummary,
}

pub fn summarize(reports: &[EvalReport]) -> Result<ParticipantSummary> {
    let Some(first) = reports.first() else {
        return Err(Error::Contract("nothing to summarize".into()));
    };
    if reports.iter().any(|r| r.participant_id != first.participant_id || r.n_frames != first.n_frames) {
        return Err(Error::Contract("reports mix participants or window lengths".into()));
    }
    let model: Vec<_> = reports.iter().map(|r| (&r.model, r.n_test_trials)).collect();
    let baseline: Vec<_> = reports.iter().map(|r| (&r.baseline, r.n_test_trials)).collect();
    Ok(ParticipantSummary {
        schema_version: REPORT_SCHEMA_VERSION,
        participant_id: first.participant_id.clone(),
        folds: reports.iter().map(|r| r.fold_id).collect(),
        sd_convention: "population".into(),
        model: MetricSummary::of(&model),
        baseline: MetricSummary::of(&baseline),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn views(v: &[Array2<f64>]) -> Vec<ArrayView2<'_, f64>> {
        v.iter().map(|a| a.view()).collect()
    }

    #[test]
    fn rmse_examples() {
        let truth = vec![array![[0.0, 0.0], [0.0, 0.0]]];
        let pred = vec![array![[3.0, 4.0], [0.0, 0.0]]];
        let curve = rmse_curve(&views(&truth), &views(&pred)).unwrap();
        assert!((curve[0] - 12.5f64.sqrt()).abs() < 1e-12);
        assert_eq!(curve[1], 0.0);
        assert_eq!(rmse_curve(&views(&truth), &views(&truth)).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn r2_examples() {
        let truths = vec![array![[1.0]], array![[3.0]]];
        let perfect = r2_curve(&views(&truths), &views(&truths), None).unwrap();
        assert_eq!(perfect, vec![Some(1.0)]);
        let means = vec![array![[2.0]], array![[2.0]]];
        assert_eq!(r2_curve(&views(&truths), &views(&means), None).unwrap(), vec![Some(0.0)]);
        let swapped = vec![array![[3.0]], array![[1.0]]];
        assert_eq!(r2_curve(&views(&truths), &views(&swapped), None).unwrap(), vec![Some(-3.0)]);
    }

    #[test]
    fn r2_undefined_when_trials_coincide() {
        let truths = vec![array![[1.0], [1.0]], array![[1.0], [2.0]]];
        let preds = truths.clone();
        let r2 = r2_curve(&views(&truths), &views(&preds), None).unwrap();
        assert_eq!(r2, vec![None, Some(1.0)]);
        assert_eq!(mean_defined(&r2, 0..2), Some(1.0));
    }

    #[test]
    fn r2_needs_two_trials() {
        let t = vec![array![[1.0]]];
        assert!(r2_curve(&views(&t), &views(&t), None).is_err());
    }

    #[test]
    fn baseline_mean() {
        let train = vec![array![[0.0, 2.0]], array![[2.0, 4.0]]];
        let b = MeanBaseline::fit(&views(&train)).unwrap();
        assert_eq!(b.predict(), array![[1.0, 3.0]]);
    }

    #[test]
    fn latter_half_bounds() {
        assert_eq!(latter_half_start(100), 50);
        assert_eq!(latter_half_start(121), 61);
    }

    #[test]
    fn grouped_rmse_by_joint() {
        let t = vec![Array2::zeros((2, 6))];
        let mut p = Array2::zeros((2, 6));
        p[[0, 3]] = 2.0;
        p[[1, 4]] = 2.0;
        let g = grouped_rmse(&views(&t), &[p.view()], 3).unwrap();
        assert_eq!(g[0], 0.0);
        assert!((g[1] - (8.0f64 / 6.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn population_sd() {
        let s = MeanSd::of(&[1.0, 3.0]).unwrap();
        assert_eq!((s.mean, s.sd), (2.0, 1.0));
    }
}
