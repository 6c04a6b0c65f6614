//! Per-pair metric reports and their CSV forms.
//!
//! Metrics CSV: `pair_id,organ,metric,statistic,value` with statistics
//! `median`, `mean` and `IQR`. Curve CSV: `metric,threshold,fraction`.

use std::io::{BufRead, BufReader, Read, Write};

use super::MetricsError;

/// Raw per-sample values for one evaluated pair.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricReport {
    pub pair_id: String,
    pub organ: String,
    pub geodesic_errors: Vec<f64>,
    pub chamfer: f64,
    pub distortions: Vec<f64>,
    /// Landmark name and error in mm.
    pub landmark_errors: Vec<(String, f64)>,
    /// Geodesic distance between predicted and true images, when the
    /// ground truth is known.
    pub ground_truth_errors: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub median: f64,
    pub mean: f64,
    pub iqr: f64,
}

/// Linearly interpolated quantile of sorted values.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut s = values.to_vec();
        s.sort_by(f64::total_cmp);
        Some(Self {
            median: quantile(&s, 0.5),
            mean: s.iter().sum::<f64>() / s.len() as f64,
            iqr: quantile(&s, 0.75) - quantile(&s, 0.25),
        })
    }
}

impl MetricReport {
    /// Metric name and raw values, in output order.
    pub fn metric_values(&self) -> Vec<(String, Vec<f64>)> {
        let mut out = vec![
            ("geodesic_error".to_owned(), self.geodesic_errors.clone()),
            ("chamfer".to_owned(), vec![self.chamfer]),
            ("conformal_distortion".to_owned(), self.distortions.clone()),
        ];
        for (name, e) in &self.landmark_errors {
            out.push((format!("landmark_{name}"), vec![*e]));
        }
        if !self.ground_truth_errors.is_empty() {
            out.push((
                "ground_truth_error".to_owned(),
                self.ground_truth_errors.clone(),
            ));
        }
        out
    }

    /// Values are finite and non-negative.
    pub fn is_valid(&self) -> bool {
        self.metric_values()
            .iter()
            .all(|(_, v)| v.iter().all(|x| x.is_finite() && *x >= 0.0))
    }
}

/// One row of a metrics CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub pair_id: String,
    pub organ: String,
    pub metric: String,
    pub statistic: String,
    pub value: f64,
}

pub fn write_metrics_csv(reports: &[MetricReport], w: &mut impl Write) -> Result<(), MetricsError> {
    writeln!(w, "pair_id,organ,metric,statistic,value")?;
    for r in reports {
        for (metric, values) in r.metric_values() {
            if let Some(s) = Summary::of(&values) {
                for (stat, v) in [("median", s.median), ("mean", s.mean), ("IQR", s.iqr)] {
                    writeln!(w, "{},{},{metric},{stat},{v:e}", r.pair_id, r.organ)?;
                }
            }
        }
    }
    Ok(())
}

pub fn read_metrics_csv(r: impl Read) -> Result<Vec<MetricRow>, MetricsError> {
    let mut lines = BufReader::new(r).lines();
    match lines.next() {
        Some(Ok(h)) if h.trim() == "pair_id,organ,metric,statistic,value" => {}
        _ => return Err(MetricsError::Format("missing metrics header".into())),
    }
    let mut rows = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(MetricsError::Format(format!("bad row {line:?}")));
        }
        rows.push(MetricRow {
            pair_id: f[0].to_owned(),
            organ: f[1].to_owned(),
            metric: f[2].to_owned(),
            statistic: f[3].to_owned(),
            value: f[4]
                .trim()
                .parse()
                .map_err(|e| MetricsError::Format(format!("{e} in {line:?}")))?,
        });
    }
    Ok(rows)
}

/// Writes named curves as `metric,threshold,fraction` rows.
pub fn write_curve_csv(
    curves: &[(String, Vec<(f64, f64)>)],
    w: &mut impl Write,
) -> Result<(), MetricsError> {
    writeln!(w, "metric,threshold,fraction")?;
    for (name, curve) in curves {
        for (t, f) in curve {
            writeln!(w, "{name},{t:e},{f}")?;
        }
    }
    Ok(())
}
