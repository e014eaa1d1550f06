//! Pixel accuracy, balanced error rate and F1 with contour as the positive class.

use super::InferenceError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Confusion {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.tn + self.fp + self.fn_
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MetricsReport {
    /// Percent in `[0, 100]`.
    pub accuracy: f64,
    /// In `[0, 1]`.
    pub ber: f64,
    /// Percent in `[0, 100]`.
    pub f1: f64,
    pub confusion: Confusion,
}

/// Compares binary predictions with ground truth.
///
/// BER averages the error rates of the classes present in the ground truth;
/// F1 is 100 when neither side contains a contour pixel.
pub fn compute_metrics(pred: &[u8], truth: &[u8]) -> Result<MetricsReport, InferenceError> {
    if pred.len() != truth.len() {
        return Err(InferenceError::Dimensions(format!("{} predictions for {} labels", pred.len(), truth.len())));
    }
    let mut cm = Confusion::default();
    for (&p, &t) in pred.iter().zip(truth) {
        match (p > 0, t > 0) {
            (true, true) => cm.tp += 1,
            (false, false) => cm.tn += 1,
            (true, false) => cm.fp += 1,
            (false, true) => cm.fn_ += 1,
        }
    }
    let total = cm.total().max(1) as f64;
    let accuracy = 100.0 * (cm.tp + cm.tn) as f64 / total;
    let mut rates = Vec::with_capacity(2);
    if cm.tp + cm.fn_ > 0 {
        rates.push(cm.fn_ as f64 / (cm.tp + cm.fn_) as f64);
    }
    if cm.tn + cm.fp > 0 {
        rates.push(cm.fp as f64 / (cm.tn + cm.fp) as f64);
    }
    let ber = if rates.is_empty() { 0.0 } else { rates.iter().sum::<f64>() / rates.len() as f64 };
    let f1 = if cm.tp + cm.fp + cm.fn_ == 0 {
        100.0
    } else {
        100.0 * 2.0 * cm.tp as f64 / (2 * cm.tp + cm.fp + cm.fn_) as f64
    };
    Ok(MetricsReport { accuracy, ber, f1, confusion: cm })
}

/// Mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self::default();
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self { mean, std: var.sqrt() }
    }

    /// `"mean (std)"` with `digits` decimals.
    pub fn cell(&self, digits: usize) -> String {
        format!("{:.*} ({:.*})", digits, self.mean, digits, self.std)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MetricsSummary {
    pub accuracy: Stat,
    pub ber: Stat,
    pub f1: Stat,
    pub runs: usize,
}

pub fn summarize(reports: &[MetricsReport]) -> MetricsSummary {
    let pick = |f: fn(&MetricsReport) -> f64| Stat::of(&reports.iter().map(f).collect::<Vec<_>>());
    MetricsSummary { accuracy: pick(|r| r.accuracy), ber: pick(|r| r.ber), f1: pick(|r| r.f1), runs: reports.len() }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_prediction() {
        let t = [0u8, 1, 1, 0];
        let m = compute_metrics(&t, &t).unwrap();
        assert_eq!((m.accuracy, m.ber, m.f1), (100.0, 0.0, 100.0));
    }

    #[test]
    fn all_background_on_half_contour() {
        let m = compute_metrics(&[0, 0, 0, 0], &[1, 1, 0, 0]).unwrap();
        assert_eq!((m.accuracy, m.ber, m.f1), (50.0, 0.5, 0.0));
    }

    #[test]
    fn absent_contour_class() {
        let m = compute_metrics(&[0, 0], &[0, 0]).unwrap();
        assert_eq!(m.f1, 100.0);
        let m = compute_metrics(&[1, 0], &[0, 0]).unwrap();
        assert_eq!((m.ber, m.f1), (0.5, 0.0));
    }

    #[test]
    fn summary_of_one_run_has_zero_std() {
        let m = compute_metrics(&[1, 0, 1], &[1, 1, 0]).unwrap();
        let s = summarize(&[m]);
        assert_eq!(s.accuracy.std, 0.0);
        assert_eq!(s.accuracy.cell(2), format!("{:.2} (0.00)", m.accuracy));
    }
}
