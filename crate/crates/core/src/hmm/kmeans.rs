//! Small k-means used only to seed emission means.

use ndarray::{Array2, ArrayView1};
use rand::Rng;

use crate::scalar::Scalar;

fn sq_dist<T: Scalar>(a: ArrayView1<T>, b: ArrayView1<T>) -> T {
    a.iter().zip(b.iter()).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

fn nearest<T: Scalar>(p: ArrayView1<T>, centers: &Array2<T>) -> (usize, T) {
    let mut best = (0, T::infinity());
    for (c, row) in centers.rows().into_iter().enumerate() {
        let d = sq_dist(p, row);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// k-means++ seeding followed by Lloyd iterations. Rows of `points` are the data.
/// A cluster that loses all members keeps its previous center.
pub(crate) fn kmeans<T: Scalar, R: Rng + ?Sized>(
    points: &Array2<T>,
    k: usize,
    max_iters: usize,
    rng: &mut R,
) -> (Array2<T>, Vec<usize>) {
    let (n, d) = points.dim();
    assert!(k >= 1 && n >= 1, "kmeans needs points and k >= 1");
    let mut centers = Array2::zeros((k, d));
    centers.row_mut(0).assign(&points.row(rng.random_range(0..n)));
    let mut dist: Vec<T> = (0..n).map(|i| sq_dist(points.row(i), centers.row(0))).collect();
    for c in 1..k {
        let total: T = dist.iter().copied().sum();
        let pick = if total > T::zero() {
            let u = T::of(rng.random::<f64>()) * total;
            let mut acc = T::zero();
            let mut pick = n - 1;
            for (i, &w) in dist.iter().enumerate() {
                acc += w;
                if u < acc {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        centers.row_mut(c).assign(&points.row(pick));
        for i in 0..n {
            dist[i] = dist[i].min(sq_dist(points.row(i), centers.row(c)));
        }
    }

    let mut labels = vec![0usize; n];
    for iter in 0..max_iters {
        let mut changed = false;
        for i in 0..n {
            let (c, _) = nearest(points.row(i), &centers);
            if c != labels[i] || iter == 0 {
                changed |= c != labels[i];
                labels[i] = c;
            }
        }
        if iter > 0 && !changed {
            break;
        }
        let mut sums = Array2::<T>::zeros((k, d));
        let mut counts = vec![0usize; k];
        for i in 0..n {
            let mut row = sums.row_mut(labels[i]);
            row += &points.row(i);
            counts[labels[i]] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                let mean = &sums.row(c) / T::of_usize(counts[c]);
                centers.row_mut(c).assign(&mean);
            }
        }
    }
    (centers, labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn separates_two_blobs() {
        let pts = array![[0.0], [0.1], [-0.1], [10.0], [10.2], [9.9]];
        let (centers, labels) = kmeans(&pts, 2, 50, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(labels[0], labels[1]);
        assert_eq!(labels[0], labels[2]);
        assert_eq!(labels[3], labels[4]);
        assert_ne!(labels[0], labels[3]);
        let lo: f64 = centers[[labels[0], 0]];
        assert!(lo.abs() < 0.1);
    }
}
