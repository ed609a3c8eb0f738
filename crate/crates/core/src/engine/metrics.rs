//! Per-group error curves and the summary statistics used to read them.

use crate::data::NUM_GROUPS;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    pub iteration: u64,
    /// Fraction of each group's 25 classes misclassified.
    pub errors: [f64; NUM_GROUPS],
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsLog {
    rows: Vec<MetricsRow>,
}

impl MetricsLog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a row; iterations must be strictly increasing.
    pub fn push(&mut self, row: MetricsRow) {
        if let Some(last) = self.rows.last() {
            assert!(
                row.iteration > last.iteration,
                "metrics iterations must increase ({} after {})",
                row.iteration,
                last.iteration
            );
        }
        self.rows.push(row);
    }

    pub fn rows(&self) -> &[MetricsRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn first(&self) -> Option<&MetricsRow> {
        self.rows.first()
    }

    pub fn last(&self) -> Option<&MetricsRow> {
        self.rows.last()
    }

    /// Error series of one group (1..=3).
    pub fn series(&self, group: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r.errors[group - 1]).collect()
    }

    pub fn iterations(&self) -> Vec<u64> {
        self.rows.iter().map(|r| r.iteration).collect()
    }

    /// First logged iteration at which a group's error is exactly zero.
    pub fn first_zero_iteration(&self, group: usize) -> Option<u64> {
        self.rows
            .iter()
            .find(|r| r.errors[group - 1] == 0.0)
            .map(|r| r.iteration)
    }
}

/// Trailing moving average over logged rows; entries before a full window
/// average what is available.
pub fn moving_average(series: &[f64], window: usize) -> Vec<f64> {
    assert!(window > 0);
    let mut out = Vec::with_capacity(series.len());
    let mut sum = 0.0;
    for (i, &x) in series.iter().enumerate() {
        sum += x;
        if i >= window {
            sum -= series[i - window];
        }
        out.push(sum / (i + 1).min(window) as f64);
    }
    out
}

/// Least-squares slope of `ys` against `xs`.
pub fn linear_fit_slope(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    if xs.len() < 2 {
        return 0.0;
    }
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
    }
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}

pub fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moving_average_of_ramp() {
        let ma = moving_average(&[0.0, 1.0, 2.0, 3.0, 4.0], 2);
        assert_eq!(ma, vec![0.0, 0.5, 1.5, 2.5, 3.5]);
    }

    #[test]
    fn slope_of_line() {
        let xs = [0.0, 1.0, 2.0, 3.0];
        let ys = [1.0, 3.0, 5.0, 7.0];
        assert!((linear_fit_slope(&xs, &ys) - 2.0).abs() < 1e-12);
        assert_eq!(linear_fit_slope(&xs, &[2.0; 4]), 0.0);
    }

    #[test]
    #[should_panic]
    fn non_increasing_iterations_panic() {
        let mut log = MetricsLog::new();
        log.push(MetricsRow { iteration: 3, errors: [0.0; 3] });
        log.push(MetricsRow { iteration: 3, errors: [0.0; 3] });
    }
}
