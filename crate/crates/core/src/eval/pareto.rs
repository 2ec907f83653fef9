use serde::{Deserialize, Serialize};

use crate::error::{BenchError, Result};
use crate::scalar::Scalar;

/// A `(training return, testing AUC)` pair, both maximised.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParetoPoint<T> {
    pub train_return: T,
    pub test_auc: T,
}

impl<T: Scalar> ParetoPoint<T> {
    pub fn new(train_return: T, test_auc: T) -> Self {
        ParetoPoint {
            train_return,
            test_auc,
        }
    }

    /// `self` is at least as good on both axes and strictly better on one.
    pub fn dominates(&self, other: &Self) -> bool {
        self.train_return >= other.train_return
            && self.test_auc >= other.test_auc
            && (self.train_return > other.train_return || self.test_auc > other.test_auc)
    }
}

/// Indices of the non-dominated points, ordered by training return
/// ascending (ties by AUC ascending, then input order). Duplicates are kept.
pub fn pareto_indices<T: Scalar>(points: &[ParetoPoint<T>]) -> Result<Vec<usize>> {
    if points.is_empty() {
        return Err(BenchError::InvalidArgument("pareto frontier of no points".into()));
    }
    if points.iter().any(|p| p.train_return.is_nan() || p.test_auc.is_nan()) {
        return Err(BenchError::NonFinite("pareto point"));
    }
    let mut order: Vec<usize> = (0..points.len()).collect();
    // descending x, then descending y
    order.sort_by(|&a, &b| {
        let (pa, pb) = (&points[a], &points[b]);
        pb.train_return
            .partial_cmp(&pa.train_return)
            .unwrap()
            .then(pb.test_auc.partial_cmp(&pa.test_auc).unwrap())
            .then(a.cmp(&b))
    });
    let mut keep = Vec::new();
    // best AUC among points with strictly larger training return
    let mut best_prev: Option<T> = None;
    let mut i = 0;
    while i < order.len() {
        let x = points[order[i]].train_return;
        let mut j = i;
        while j < order.len() && points[order[j]].train_return == x {
            j += 1;
        }
        let group_max = points[order[i]].test_auc;
        let survives = best_prev.map_or(true, |b| group_max > b);
        if survives {
            keep.extend(order[i..j].iter().copied().filter(|&k| points[k].test_auc == group_max));
        }
        best_prev = Some(best_prev.map_or(group_max, |b| b.max(group_max)));
        i = j;
    }
    keep.sort_by(|&a, &b| {
        let (pa, pb) = (&points[a], &points[b]);
        pa.train_return
            .partial_cmp(&pb.train_return)
            .unwrap()
            .then(pa.test_auc.partial_cmp(&pb.test_auc).unwrap())
            .then(a.cmp(&b))
    });
    Ok(keep)
}

/// Maximal set under componentwise domination, sorted by training return.
pub fn pareto_frontier<T: Scalar>(points: &[ParetoPoint<T>]) -> Result<Vec<ParetoPoint<T>>> {
    Ok(pareto_indices(points)?.into_iter().map(|i| points[i]).collect())
}
