use crate::error::{Error, Result};
use crate::tensor::Element;

/// Pixel tallies of a binary segmentation against its ground truth.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    pub fn merge(&mut self, other: &ConfusionCounts) {
        self.tp += other.tp;
        self.tn += other.tn;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }
}

impl std::iter::Sum for ConfusionCounts {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::default(), |mut acc, c| {
            acc.merge(&c);
            acc
        })
    }
}

fn as_bit<T: Element>(v: T, what: &str, index: usize) -> Result<bool> {
    if v == T::one() {
        Ok(true)
    } else if v == T::zero() {
        Ok(false)
    } else {
        Err(Error::Contract(format!(
            "{what} mask is not binary at element {index}: {v}"
        )))
    }
}

/// Tally a binary prediction against a binary ground truth.
pub fn confusion<T: Element>(pred: &[T], gt: &[T]) -> Result<ConfusionCounts> {
    if pred.len() != gt.len() {
        return Err(Error::mismatch("confusion", &[pred.len()], &[gt.len()]));
    }
    let mut c = ConfusionCounts::default();
    for (i, (&p, &g)) in pred.iter().zip(gt).enumerate() {
        match (as_bit(p, "predicted", i)?, as_bit(g, "ground-truth", i)?) {
            (true, true) => c.tp += 1,
            (false, false) => c.tn += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

/// Sensitivity, specificity, accuracy and F1. A metric whose denominator
/// is zero is `None`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ScalarMetrics {
    pub sn: Option<f64>,
    pub sp: Option<f64>,
    pub acc: Option<f64>,
    pub f1: Option<f64>,
}

impl ScalarMetrics {
    pub fn is_defined(&self) -> bool {
        self.sn.is_some() || self.sp.is_some() || self.acc.is_some() || self.f1.is_some()
    }
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den != 0).then(|| num as f64 / den as f64)
}

pub fn scalar_metrics(c: &ConfusionCounts) -> ScalarMetrics {
    ScalarMetrics {
        sn: ratio(c.tp, c.tp + c.fn_),
        sp: ratio(c.tn, c.tn + c.fp),
        acc: ratio(c.tp + c.tn, c.total()),
        f1: ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_),
    }
}
