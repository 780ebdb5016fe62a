use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;

use crate::rng::Rng;

/// Shuffled minibatch index lists for one epoch.
pub(crate) fn epoch_batches(n: usize, batch: usize, rng: &mut Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch.max(1)).map(<[usize]>::to_vec).collect()
}

pub(crate) fn gather(x: ArrayView2<f64>, rows: &[usize]) -> Array2<f64> {
    x.select(Axis(0), rows)
}

/// Mean of per-class recalls. A class absent from `labels` is ignored.
pub fn balanced_accuracy(predicted: &[u8], labels: &[u8]) -> f64 {
    let mut hits = [0usize; 2];
    let mut totals = [0usize; 2];
    for (&p, &y) in predicted.iter().zip(labels) {
        let c = usize::from(y == 1);
        totals[c] += 1;
        if p == y {
            hits[c] += 1;
        }
    }
    let recalls: Vec<f64> =
        (0..2).filter(|&c| totals[c] > 0).map(|c| hits[c] as f64 / totals[c] as f64).collect();
    if recalls.is_empty() {
        return 0.0;
    }
    recalls.iter().sum::<f64>() / recalls.len() as f64
}
