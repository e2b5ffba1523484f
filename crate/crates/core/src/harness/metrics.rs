use super::HarnessError;

/// Trailing mean over at most `window` values; the first entries average
/// whatever prefix is available.
pub fn moving_average(series: &[f64], window: usize) -> Result<Vec<f64>, HarnessError> {
    if series.is_empty() {
        return Err(HarnessError::EmptySeries);
    }
    if window == 0 {
        return Err(HarnessError::InvalidArgument("window must be at least 1".into()));
    }
    let out = (0..series.len())
        .map(|i| {
            let w = &series[(i + 1).saturating_sub(window)..=i];
            w.iter().sum::<f64>() / w.len() as f64
        })
        .collect();
    Ok(out)
}

/// Rescales to `[0, 1]`; a constant series maps to 0.5 everywhere.
pub fn min_max_normalize(series: &[f64]) -> Vec<f64> {
    let lo = series.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = series.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo <= 0.0 {
        return vec![0.5; series.len()];
    }
    series.iter().map(|x| (x - lo) / (hi - lo)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    /// `counts.len() + 1` bin edges.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

/// Equal-width bins spanning the data. All-equal data gives one bin.
pub fn histogram(values: &[f64], bins: usize) -> Result<Histogram, HarnessError> {
    if values.is_empty() {
        return Err(HarnessError::EmptySeries);
    }
    if bins == 0 {
        return Err(HarnessError::InvalidArgument("bins must be at least 1".into()));
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo <= 0.0 {
        return Ok(Histogram { edges: vec![lo, hi], counts: vec![values.len()] });
    }
    let width = (hi - lo) / bins as f64;
    let edges = (0..=bins).map(|b| if b == bins { hi } else { lo + width * b as f64 }).collect();
    let mut counts = vec![0; bins];
    for v in values {
        let b = (((v - lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    Ok(Histogram { edges, counts })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    /// Population standard deviation.
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

pub fn summarize(values: &[f64]) -> Result<Summary, HarnessError> {
    if values.is_empty() {
        return Err(HarnessError::EmptySeries);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    let median = if sorted.len() % 2 == 0 { (sorted[mid - 1] + sorted[mid]) / 2.0 } else { sorted[mid] };
    Ok(Summary { count: values.len(), mean, median, std, min: sorted[0], max: sorted[sorted.len() - 1] })
}

/// Median of a non-empty slice.
pub fn median(values: &[f64]) -> Result<f64, HarnessError> {
    Ok(summarize(values)?.median)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn moving_average_examples() {
        assert_eq!(moving_average(&[0.0, 10.0], 2).unwrap(), vec![0.0, 5.0]);
        assert_eq!(moving_average(&[3.0; 5], 100).unwrap(), vec![3.0; 5]);
        assert_eq!(moving_average(&[1.0, 2.0, 3.0, 4.0], 2).unwrap(), vec![1.0, 1.5, 2.5, 3.5]);
        assert!(matches!(moving_average(&[], 3), Err(HarnessError::EmptySeries)));
        assert!(moving_average(&[1.0], 0).is_err());
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(min_max_normalize(&[2.0, 4.0, 6.0]), vec![0.0, 0.5, 1.0]);
        assert_eq!(min_max_normalize(&[7.0; 3]), vec![0.5; 3]);
    }

    #[test]
    fn smoothing_and_normalizing_do_not_commute() {
        let s = [0.0, 10.0, 0.0, 0.0];
        let a = min_max_normalize(&moving_average(&s, 2).unwrap());
        let b = moving_average(&min_max_normalize(&s), 2).unwrap();
        assert_eq!(a, vec![0.0, 1.0, 1.0, 0.0]);
        assert_eq!(b, vec![0.0, 0.5, 0.5, 0.0]);
    }

    #[test]
    fn histogram_and_summary() {
        let h = histogram(&[0.0, 1.0, 2.0, 3.0, 4.0], 2).unwrap();
        assert_eq!(h.edges, vec![0.0, 2.0, 4.0]);
        assert_eq!(h.counts, vec![2, 3]);
        let h = histogram(&[0.0; 10], 30).unwrap();
        assert_eq!(h, Histogram { edges: vec![0.0, 0.0], counts: vec![10] });
        let s = summarize(&[1.0, 3.0, 2.0, 10.0]).unwrap();
        assert_eq!((s.mean, s.median, s.min, s.max), (4.0, 2.5, 1.0, 10.0));
        assert!((s.std - 3.5355339059327378).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn window_one_is_identity(xs in proptest::collection::vec(-1e3f64..1e3, 1..50)) {
            let out = moving_average(&xs, 1).unwrap();
            prop_assert_eq!(out, xs);
        }

        #[test]
        fn normalized_range_is_unit(xs in proptest::collection::vec(-1e3f64..1e3, 2..50)) {
            let out = min_max_normalize(&xs);
            let lo = out.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if xs.iter().any(|x| *x != xs[0]) {
                prop_assert_eq!((lo, hi), (0.0, 1.0));
            }
        }

        #[test]
        fn histogram_counts_everything(xs in proptest::collection::vec(-1e3f64..1e3, 1..200), bins in 1usize..40) {
            let h = histogram(&xs, bins).unwrap();
            prop_assert_eq!(h.counts.iter().sum::<usize>(), xs.len());
            prop_assert_eq!(h.edges.len(), h.counts.len() + 1);
        }
    }
}
