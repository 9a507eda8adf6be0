//! ROC analysis via the Mann–Whitney pair statistic.

use std::cmp::Ordering;

use crate::error::{Error, Result};

/// ROC points from a descending threshold sweep, plus the area under them.
#[derive(Clone, Debug, PartialEq)]
pub struct RocCurve {
    /// `(false-positive rate, true-positive rate)`, from (0,0) to (1,1).
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

fn validate(scores: &[f64], labels: &[bool]) -> Result<(u64, u64)> {
    if scores.len() != labels.len() {
        return Err(Error::mismatch("auc", &[scores.len()], &[labels.len()]));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::NonFinite { input: 0, index: i });
    }
    let pos = labels.iter().filter(|&&l| l).count() as u64;
    let neg = labels.len() as u64 - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Contract(
            "AUC is undefined without both positive and negative labels".into(),
        ));
    }
    Ok((pos, neg))
}

/// Groups of tied scores in ascending order, as (positives, negatives).
fn tie_groups(scores: &[f64], labels: &[bool]) -> Vec<(u64, u64)> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(Ordering::Equal));
    let mut groups: Vec<(u64, u64)> = Vec::new();
    let mut last = None;
    for i in order {
        if last != Some(scores[i]) {
            groups.push((0, 0));
            last = Some(scores[i]);
        }
        let g = groups.last_mut().expect("pushed above");
        if labels[i] {
            g.0 += 1;
        } else {
            g.1 += 1;
        }
    }
    groups
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half. O(n log n).
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, neg) = validate(scores, labels)?;
    // twice the U statistic, kept in integers
    let mut twice_u: u128 = 0;
    let mut neg_below: u128 = 0;
    for (p, n) in tie_groups(scores, labels) {
        twice_u += 2 * p as u128 * neg_below + p as u128 * n as u128;
        neg_below += n as u128;
    }
    Ok(twice_u as f64 / (2 * pos as u128 * neg as u128) as f64)
}

pub fn roc_curve(scores: &[f64], labels: &[bool]) -> Result<RocCurve> {
    let (pos, neg) = validate(scores, labels)?;
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0u64, 0u64);
    for (p, n) in tie_groups(scores, labels).into_iter().rev() {
        tp += p;
        fp += n;
        points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
    }
    Ok(RocCurve {
        points,
        auc: auc(scores, labels)?,
    })
}
