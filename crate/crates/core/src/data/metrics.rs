//! Mean intersection-over-union and run aggregation.

use crate::error::{Error, Result};

/// Counts of (true class, predicted class) pairs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix { classes, counts: vec![0; classes * classes] }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn count(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    pub fn add(&mut self, pred: &[u8], truth: &[u8]) -> Result<()> {
        if pred.len() != truth.len() {
            return Err(Error::shape(
                "miou",
                format!("prediction has {} pixels, truth has {}", pred.len(), truth.len()),
            ));
        }
        let k = self.classes;
        if let Some(&bad) = pred.iter().chain(truth).find(|&&c| c as usize >= k) {
            return Err(Error::invalid(format!("class index {bad} out of range for {k} classes")));
        }
        for (&p, &t) in pred.iter().zip(truth) {
            self.counts[t as usize * k + p as usize] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        assert_eq!(self.classes, other.classes);
        self.counts.iter_mut().zip(&other.counts).for_each(|(a, b)| *a += b);
    }

    pub fn report(&self) -> Result<MiouReport> {
        let k = self.classes;
        let per_class: Vec<Option<f64>> = (0..k)
            .map(|c| {
                let inter = self.count(c, c);
                let truth: u64 = (0..k).map(|p| self.count(c, p)).sum();
                let pred: u64 = (0..k).map(|t| self.count(t, c)).sum();
                let union = truth + pred - inter;
                (union > 0).then(|| inter as f64 / union as f64)
            })
            .collect();
        let defined: Vec<f64> = per_class.iter().flatten().copied().collect();
        if defined.is_empty() {
            return Err(Error::invalid("mean IoU of empty masks is undefined"));
        }
        let mean = defined.iter().sum::<f64>() / defined.len() as f64;
        Ok(MiouReport { per_class, mean })
    }
}

/// Per-class IoU (`None` for classes absent from both masks) and their mean.
#[derive(Clone, Debug, PartialEq)]
pub struct MiouReport {
    pub per_class: Vec<Option<f64>>,
    pub mean: f64,
}

/// Mean IoU of one predicted mask against the truth. Classes absent from
/// both masks are excluded from the mean.
pub fn miou(pred: &[u8], truth: &[u8], num_classes: usize) -> Result<MiouReport> {
    let mut cm = ConfusionMatrix::new(num_classes);
    cm.add(pred, truth)?;
    cm.report()
}

/// Mean and standard error (sample standard deviation over `sqrt(n)`) of
/// per-run results.
pub fn aggregate_runs(values: &[f64]) -> Result<(f64, f64)> {
    if values.len() < 2 {
        return Err(Error::invalid(format!(
            "aggregating needs at least 2 runs, got {}",
            values.len()
        )));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, (var / n).sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn perfect_prediction() {
        let m = [0, 1, 2, 2, 1, 0];
        assert_eq!(miou(&m, &m, 3).unwrap().mean, 1.0);
    }

    #[test]
    fn disjoint_binary() {
        let r = miou(&[1, 1, 0, 0], &[0, 0, 1, 1], 2).unwrap();
        assert_eq!(r.mean, 0.0);
    }

    #[test]
    fn two_by_two_case() {
        // pred [[0,0],[1,1]], truth [[0,1],[1,1]]
        let r = miou(&[0, 0, 1, 1], &[0, 1, 1, 1], 2).unwrap();
        assert_eq!(r.per_class, vec![Some(0.5), Some(2.0 / 3.0)]);
        assert!((r.mean - 7.0 / 12.0).abs() < 1e-15);
    }

    #[test]
    fn absent_class_is_excluded() {
        let r = miou(&[0, 1], &[0, 1], 3).unwrap();
        assert_eq!(r.per_class[2], None);
        assert_eq!(r.mean, 1.0);
    }

    #[test]
    fn errors() {
        assert!(miou(&[0, 1], &[0], 2).is_err());
        assert!(miou(&[0, 3], &[0, 1], 3).is_err());
        assert!(miou(&[], &[], 3).is_err());
    }

    #[test]
    fn aggregation() {
        assert_eq!(aggregate_runs(&[0.5, 0.5, 0.5]).unwrap(), (0.5, 0.0));
        let (m, se) = aggregate_runs(&[0.4, 0.6]).unwrap();
        assert!((m - 0.5).abs() < 1e-15 && (se - 0.1).abs() < 1e-15);
        assert!(aggregate_runs(&[0.3]).is_err());
    }

    #[test]
    fn aggregation_five_runs() {
        // Spreadsheet: AVERAGE = 0.6176, STDEV.S/SQRT(5) = 0.015740393895960814
        let v = [0.61, 0.58, 0.66, 0.59, 0.648];
        let (m, se) = aggregate_runs(&v).unwrap();
        let mean = v.iter().sum::<f64>() / 5.0;
        let ss: f64 = v.iter().map(|x| (x - mean) * (x - mean)).sum();
        assert!((m - 0.6176).abs() < 1e-12);
        assert!((se - (ss / 4.0 / 5.0).sqrt()).abs() < 1e-12);
        assert!((se - 0.015_740_393_895_960_814).abs() < 1e-12, "{se}");
    }

    proptest! {
        #[test]
        fn bounded_and_relabel_invariant(
            pairs in proptest::collection::vec((0u8..4, 0u8..4), 1..64),
            perm in Just([0u8, 1, 2, 3]).prop_shuffle(),
        ) {
            let pred: Vec<u8> = pairs.iter().map(|p| p.0).collect();
            let truth: Vec<u8> = pairs.iter().map(|p| p.1).collect();
            let r = miou(&pred, &truth, 4).unwrap();
            prop_assert!((0.0..=1.0).contains(&r.mean));
            for iou in r.per_class.iter().flatten() {
                prop_assert!((0.0..=1.0).contains(iou));
            }
            let rp: Vec<u8> = pred.iter().map(|&c| perm[c as usize]).collect();
            let rt: Vec<u8> = truth.iter().map(|&c| perm[c as usize]).collect();
            let r2 = miou(&rp, &rt, 4).unwrap();
            prop_assert!((r.mean - r2.mean).abs() < 1e-12);
        }
    }
}
