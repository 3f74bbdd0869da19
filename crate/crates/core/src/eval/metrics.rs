use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::tensor::LabelMap;

/// Pixel counts with ground truth on rows and predictions on columns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

/// Per-class IoU (`None` for classes absent from both sides) and their mean.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MiouResult {
    pub per_class: Vec<Option<f64>>,
    pub mean: f64,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    /// Builds from row-major counts.
    pub fn from_counts(classes: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != classes * classes {
            return Err(Error::Shape(format!("{} counts for {classes} classes", counts.len())));
        }
        Ok(Self { classes, counts })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Adds one image. Ground-truth pixels equal to its ignore index are
    /// skipped; every other value on either side must be a valid class.
    pub fn accumulate(&mut self, gt: &LabelMap, pred: &LabelMap) -> Result<()> {
        if (gt.height(), gt.width()) != (pred.height(), pred.width()) {
            return Err(Error::Shape(format!(
                "ground truth {}x{} vs prediction {}x{}",
                gt.height(),
                gt.width(),
                pred.height(),
                pred.width()
            )));
        }
        let n = self.classes;
        let mut delta = vec![0u64; n * n];
        for (&g, &p) in gt.data().iter().zip(pred.data()) {
            if g == gt.ignore_index() {
                continue;
            }
            let (g, p) = (usize::from(g), usize::from(p));
            if g >= n {
                return Err(Error::Validation(format!("ground-truth label {g} outside {n} classes")));
            }
            if p >= n || p == usize::from(pred.ignore_index()) {
                return Err(Error::Validation(format!("predicted label {p} outside {n} classes")));
            }
            delta[g * n + p] += 1;
        }
        for (c, d) in self.counts.iter_mut().zip(delta) {
            *c += d;
        }
        Ok(())
    }

    /// Element-wise sum.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes != self.classes {
            return Err(Error::Shape(format!(
                "merging {} classes into {}",
                other.classes, self.classes
            )));
        }
        for (c, o) in self.counts.iter_mut().zip(&other.counts) {
            *c += o;
        }
        Ok(())
    }

    /// Relabels classes: new class `i` is old class `order[i]`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        let n = self.classes;
        let mut counts = vec![0; n * n];
        for (i, &oi) in order.iter().enumerate() {
            for (j, &oj) in order.iter().enumerate() {
                counts[i * n + j] = self.get(oi, oj);
            }
        }
        Self { classes: n, counts }
    }

    /// `IoU_c = TP / (TP + FP + FN)`; zero-union classes are left out of the mean.
    ///
    /// The mean is computed exactly over rationals and rounded once.
    pub fn miou(&self) -> Result<MiouResult> {
        let n = self.classes;
        let ratios: Vec<Option<(u64, u64)>> = (0..n)
            .map(|c| {
                let tp = self.get(c, c);
                let row: u64 = (0..n).map(|p| self.get(c, p)).sum();
                let col: u64 = (0..n).map(|g| self.get(g, c)).sum();
                let union = row + col - tp;
                (union > 0).then_some((tp, union))
            })
            .collect();
        let defined: Vec<(u64, u64)> = ratios.iter().flatten().copied().collect();
        if defined.is_empty() {
            return Err(Error::UndefinedMetric("every class has an empty union".into()));
        }
        let sum = defined.iter().fold(BigRational::zero(), |acc, &(tp, union)| {
            acc + BigRational::new(BigInt::from(tp), BigInt::from(union))
        });
        let mean = (sum / BigInt::from(defined.len()))
            .to_f64()
            .expect("ratio in [0, 1] converts");
        let per_class = ratios
            .into_iter()
            .map(|r| r.map(|(tp, union)| ratio_f64(tp, union)))
            .collect();
        Ok(MiouResult { per_class, mean })
    }
}

fn ratio_f64(num: u64, den: u64) -> f64 {
    BigRational::new(BigInt::from(num), BigInt::from(den))
        .to_f64()
        .expect("ratio in [0, 1] converts")
}
