//! Agreement metrics for saliency maps: the linear correlation
//! coefficient, computed against the blurred fixation density, and
//! normalized scanpath saliency, computed against the binary fixation
//! mask. Both use population (1/N) standard deviations.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{crop_to, DataError, WebpageSample};
use crate::networks::{predict, NetworkConfig, NetworkError};
use crate::tensor::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("maps disagree: {a} vs {b}")]
    ShapeMismatch { a: String, b: String },
    #[error("{which} map is constant; the metric is undefined")]
    ConstantMap { which: &'static str },
    #[error("fixation mask contains no fixations")]
    NoFixations,
    #[error("fixation mask is not binary")]
    NotBinary,
    #[error("cannot evaluate an empty dataset")]
    EmptyDataset,
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn mean_and_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var)
}

/// Pearson correlation over all pixels of two equal-shape maps. Both must
/// be non-constant. Bit-identical inputs short-circuit to exactly 1.
pub fn cc(pred: &Tensor, truth: &Tensor) -> Result<f64, MetricsError> {
    if pred.shape() != truth.shape() {
        return Err(MetricsError::ShapeMismatch {
            a: pred.shape().to_string(),
            b: truth.shape().to_string(),
        });
    }
    let p = pred.to_vec();
    let t = truth.to_vec();
    let (mp, vp) = mean_and_var(&p);
    let (mt, vt) = mean_and_var(&t);
    if vp == 0.0 {
        return Err(MetricsError::ConstantMap {
            which: "prediction",
        });
    }
    if vt == 0.0 {
        return Err(MetricsError::ConstantMap {
            which: "ground-truth",
        });
    }
    if p == t {
        return Ok(1.0);
    }
    let cov = p
        .iter()
        .zip(&t)
        .map(|(&a, &b)| (a - mp) * (b - mt))
        .sum::<f64>()
        / p.len() as f64;
    Ok((cov / (vp.sqrt() * vt.sqrt())).clamp(-1.0, 1.0))
}

/// Normalized scanpath saliency: z-score the prediction over all pixels
/// and average the z-values at mask==1 positions.
pub fn nss(pred: &Tensor, fixations: &Tensor) -> Result<f64, MetricsError> {
    if pred.shape() != fixations.shape() {
        return Err(MetricsError::ShapeMismatch {
            a: pred.shape().to_string(),
            b: fixations.shape().to_string(),
        });
    }
    let p = pred.to_vec();
    let m = fixations.to_vec();
    if m.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(MetricsError::NotBinary);
    }
    let hits = m.iter().filter(|&&v| v == 1.0).count();
    if hits == 0 {
        return Err(MetricsError::NoFixations);
    }
    let (mean, var) = mean_and_var(&p);
    if var == 0.0 {
        return Err(MetricsError::ConstantMap {
            which: "prediction",
        });
    }
    let sd = var.sqrt();
    let total: f64 = p
        .iter()
        .zip(&m)
        .filter(|&(_, &mask)| mask == 1.0)
        .map(|(&v, _)| (v - mean) / sd)
        .sum();
    Ok(total / hits as f64)
}

/// One evaluated image; `None` marks a metric that was undefined there
/// (constant map, or no fixation data).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricRow {
    pub id: String,
    pub cc: Option<f64>,
    pub nss: Option<f64>,
}

/// Per-image values plus dataset aggregates. Means and standard
/// deviations cover the defined values only; `count` is the image total.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
    pub count: usize,
    pub cc_count: usize,
    pub mean_cc: f64,
    pub std_cc: f64,
    pub nss_count: usize,
    pub mean_nss: f64,
    pub std_nss: f64,
}

impl MetricReport {
    /// Aggregate per-image rows; undefined entries are excluded from the
    /// means but still counted in `count`.
    pub fn from_rows(rows: Vec<MetricRow>) -> MetricReport {
        let stats = |values: Vec<f64>| -> (usize, f64, f64) {
            if values.is_empty() {
                (0, f64::NAN, f64::NAN)
            } else {
                let (m, v) = mean_and_var(&values);
                (values.len(), m, v.sqrt())
            }
        };
        let (cc_count, mean_cc, std_cc) = stats(rows.iter().filter_map(|r| r.cc).collect());
        let (nss_count, mean_nss, std_nss) = stats(rows.iter().filter_map(|r| r.nss).collect());
        MetricReport {
            count: rows.len(),
            rows,
            cc_count,
            mean_cc,
            std_cc,
            nss_count,
            mean_nss,
            std_nss,
        }
    }

    ///`image_id,cc,nss` rows; undefined cells stay empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("image_id,cc,nss\n");
        for row in &self.rows {
            let fmt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
            out.push_str(&format!("{},{},{}\n", row.id, fmt(row.cc), fmt(row.nss)));
        }
        out
    }

    /// Aggregates as a JSON object (means, stds, counts, exclusions).
    pub fn summary_json(&self) -> serde_json::Value {
        let side = |count: usize, mean: f64, std: f64| {
            serde_json::json!({
                "count": count,
                "excluded": self.count - count,
                "mean": if count > 0 { Some(mean) } else { None },
                "std": if count > 0 { Some(std) } else { None },
            })
        };
        serde_json::json!({
            "images": self.count,
            "cc": side(self.cc_count, self.mean_cc, self.std_cc),
            "nss": side(self.nss_count, self.mean_nss, self.std_nss),
        })
    }

    /// Write `metrics.csv` and `summary.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), MetricsError> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("metrics.csv"), self.to_csv())?;
        std::fs::write(
            dir.join("summary.json"),
            serde_json::to_string_pretty(&self.summary_json()).expect("summary serializes"),
        )?;
        Ok(())
    }
}

/// Predict every sample with the stage-2 head and score it against its
/// ground truth at the original (pre-padding) dims. Undefined metrics are
/// excluded from the aggregates rather than failing the run.
pub fn evaluate_dataset(
    store: &ParamStore,
    config: &NetworkConfig,
    samples: &[WebpageSample],
) -> Result<MetricReport, MetricsError> {
    if samples.is_empty() {
        return Err(MetricsError::EmptyDataset);
    }
    let mut rows = Vec::with_capacity(samples.len());
    for sample in samples {
        let (_, fine) = predict(store, config, &sample.image)?;
        let pred = crop_to(&fine, sample.orig_h, sample.orig_w)?;
        let truth = crop_to(&sample.saliency, sample.orig_h, sample.orig_w)?;
        let cc_value = match cc(&pred, &truth) {
            Ok(v) => Some(v),
            Err(MetricsError::ConstantMap { .. }) => None,
            Err(e) => return Err(e),
        };
        let nss_value = match &sample.fixation_mask {
            None => None,
            Some(mask) => {
                let mask = crop_to(mask, sample.orig_h, sample.orig_w)?;
                match nss(&pred, &mask) {
                    Ok(v) => Some(v),
                    Err(MetricsError::ConstantMap { .. }) | Err(MetricsError::NoFixations) => None,
                    Err(e) => return Err(e),
                }
            }
        };
        rows.push(MetricRow {
            id: sample.id.clone(),
            cc: cc_value,
            nss: nss_value,
        });
    }
    Ok(MetricReport::from_rows(rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_webpage;
    use crate::networks::build_params;
    use crate::rng::SplitMix64;

    fn map(values: Vec<f64>, h: usize, w: usize) -> Tensor {
        Tensor::from_vec((1, 1, h, w), values).unwrap()
    }

    #[test]
    fn cc_matches_hand_computed_fixture() {
        let p = map(vec![0.0, 1.0, 2.0, 3.0], 2, 2);
        let t = map(vec![1.0, 0.0, 3.0, 2.0], 2, 2);
        assert!((cc(&p, &t).unwrap() - 0.6).abs() < 1e-12);

        let scaled = map(vec![0.0, 2.0, 4.0, 6.0], 2, 2);
        assert!((cc(&p, &scaled).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cc_self_comparison_is_exactly_one() {
        let mut rng = SplitMix64::new(8);
        let vals: Vec<f64> = (0..64).map(|_| rng.next_f64()).collect();
        let t = map(vals, 8, 8);
        assert_eq!(cc(&t, &t).unwrap(), 1.0);
    }

    #[test]
    fn cc_is_symmetric_and_affine_invariant() {
        let mut rng = SplitMix64::new(4);
        let a = map((0..64).map(|_| rng.next_f64()).collect(), 8, 8);
        let b = map((0..64).map(|_| rng.next_f64()).collect(), 8, 8);
        let ab = cc(&a, &b).unwrap();
        assert!((ab - cc(&b, &a).unwrap()).abs() < 1e-12);

        let shifted = a.scale(3.5).add_scalar(-0.7);
        assert!((cc(&shifted, &b).unwrap() - ab).abs() < 1e-10);

        let inverted = a.scale(-1.0).add_scalar(1.0);
        assert!((cc(&inverted, &a).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn cc_rejects_constant_maps() {
        let flat = Tensor::full((1, 1, 2, 2), 0.5);
        let live = map(vec![0.0, 1.0, 0.5, 0.25], 2, 2);
        assert!(matches!(
            cc(&flat, &live),
            Err(MetricsError::ConstantMap { which: "prediction" })
        ));
        assert!(matches!(
            cc(&live, &flat),
            Err(MetricsError::ConstantMap { which: "ground-truth" })
        ));
    }

    #[test]
    fn nss_peak_fixture() {
        let mut vals = vec![0.0; 9];
        vals[4] = 1.0;
        let pred = map(vals, 3, 3);
        let mut fix = vec![0.0; 9];
        fix[4] = 1.0;
        let at_peak = nss(&pred, &map(fix.clone(), 3, 3)).unwrap();
        assert!((at_peak - 8.0f64.sqrt()).abs() < 1e-12);

        // moving the fixation off the peak strictly decreases the score
        fix[4] = 0.0;
        fix[0] = 1.0;
        let off_peak = nss(&pred, &map(fix, 3, 3)).unwrap();
        assert!(off_peak < at_peak);
        assert!((off_peak + 1.0 / 8.0f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn nss_over_all_pixels_is_zero() {
        let mut rng = SplitMix64::new(6);
        let pred = map((0..64).map(|_| rng.next_f64()).collect(), 8, 8);
        let ones = Tensor::full((1, 1, 8, 8), 1.0);
        assert!(nss(&pred, &ones).unwrap().abs() < 1e-12);
    }

    #[test]
    fn nss_validates_the_mask() {
        let pred = map(vec![0.0, 1.0, 0.2, 0.4], 2, 2);
        let empty = Tensor::zeros((1, 1, 2, 2));
        assert!(matches!(nss(&pred, &empty), Err(MetricsError::NoFixations)));
        let fuzzy = Tensor::full((1, 1, 2, 2), 0.5);
        assert!(matches!(nss(&pred, &fuzzy), Err(MetricsError::NotBinary)));
    }

    #[test]
    fn report_aggregates_defined_values_only() {
        let rows = vec![
            MetricRow {
                id: "a".into(),
                cc: Some(1.0),
                nss: Some(2.0),
            },
            MetricRow {
                id: "b".into(),
                cc: Some(0.5),
                nss: None,
            },
            MetricRow {
                id: "c".into(),
                cc: None,
                nss: Some(4.0),
            },
        ];
        let report = MetricReport::from_rows(rows);
        assert_eq!(report.count, 3);
        assert_eq!(report.cc_count, 2);
        assert!((report.mean_cc - 0.75).abs() < 1e-12);
        assert!((report.std_cc - 0.25).abs() < 1e-12);
        assert_eq!(report.nss_count, 2);
        assert!((report.mean_nss - 3.0).abs() < 1e-12);

        let csv = report.to_csv();
        assert!(csv.starts_with("image_id,cc,nss\n"));
        assert!(csv.contains("b,0.500000,\n"));
        let summary = report.summary_json();
        assert_eq!(summary["cc"]["excluded"], 1);
        assert_eq!(summary["nss"]["excluded"], 1);
    }

    #[test]
    fn ground_truth_scores_itself_perfectly() {
        // feed the ground truth through the aggregation path as if it were
        // the prediction: mean CC must be exactly 1
        let samples: Vec<_> = (0..3).map(|k| synth_webpage(k, 64, 64).unwrap()).collect();
        let rows: Vec<MetricRow> = samples
            .iter()
            .map(|s| MetricRow {
                id: s.id.clone(),
                cc: Some(cc(&s.saliency, &s.saliency).unwrap()),
                nss: None,
            })
            .collect();
        let report = MetricReport::from_rows(rows);
        assert_eq!(report.mean_cc, 1.0);
    }

    #[test]
    fn evaluate_runs_an_untrained_model_end_to_end() {
        let config = NetworkConfig::tiny();
        let store = build_params(3, &config).unwrap();
        let samples: Vec<_> = (0..2).map(|k| synth_webpage(k, 64, 64).unwrap()).collect();
        let report = evaluate_dataset(&store, &config, &samples).unwrap();
        assert_eq!(report.count, 2);
        assert_eq!(report.rows.len(), 2);
        // untrained predictions are still non-constant, so nothing excluded
        assert_eq!(report.cc_count, 2);
        assert_eq!(report.nss_count, 2);
        for row in &report.rows {
            assert!(row.cc.unwrap().abs() <= 1.0);
        }
        assert!(matches!(
            evaluate_dataset(&store, &config, &[]),
            Err(MetricsError::EmptyDataset)
        ));
    }
}
