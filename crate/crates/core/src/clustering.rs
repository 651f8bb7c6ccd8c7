//! First-stage split of the observations into a small candidate set and a
//! clean set, by spectral clustering.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array2, Axis};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::datamodel::Task;
use crate::{rng, Dataset, Error, IndexSet, Result};

const KMEANS_RESTARTS: u64 = 10;
const KMEANS_MAX_ITER: usize = 100;
const FALLBACK_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PartitionMethod {
    Spectral,
    /// Spectral clustering produced an empty cluster; the candidate set is
    /// the rows with the largest robust distance instead.
    RobustDistance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub s_infl: IndexSet,
    pub s_clean: IndexSet,
    pub method: PartitionMethod,
}

impl Partition {
    pub fn new(s_infl: IndexSet, s_clean: IndexSet, n: usize, method: PartitionMethod) -> Result<Self> {
        if !s_infl.is_disjoint(&s_clean) || s_infl.len() + s_clean.len() != n {
            return Err(Error::InvalidInput("partition sets must be disjoint and cover every row".into()));
        }
        if s_clean.is_empty() {
            return Err(Error::InvalidInput("the clean set of a partition cannot be empty".into()));
        }
        Ok(Partition { s_infl, s_clean, method })
    }
}

/// Rows used for clustering: `[y | X]` for the linear model, `X` alone for
/// the logistic model, with every column standardized (constant columns
/// become zero).
pub fn clustering_features(data: &Dataset) -> Array2<f64> {
    let x = data.standardized_x();
    match data.task() {
        Task::Logistic => x,
        Task::Linear => {
            let y = data.y();
            let n = y.len() as f64;
            let m = y.sum() / n;
            let sd = (y.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n).sqrt();
            let yz = y.mapv(|v| if sd > 0.0 { (v - m) / sd } else { 0.0 });
            ndarray::concatenate(Axis(1), &[yz.insert_axis(Axis(1)).view(), x.view()]).expect("row counts agree")
        }
    }
}

fn pairwise_sq_distances(f: &Array2<f64>) -> Vec<f64> {
    let n = f.nrows();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let v: f64 = f.row(i).iter().zip(f.row(j).iter()).map(|(a, b)| (a - b) * (a - b)).sum();
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
    d
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Two-dimensional spectral embedding (Ng, Jordan and Weiss): Gaussian
/// affinities with the median pairwise distance as bandwidth, the top two
/// eigenvectors of `D^-1/2 A D^-1/2`, rows scaled to unit length.
fn spectral_embedding(f: &Array2<f64>) -> Option<Vec<[f64; 2]>> {
    let n = f.nrows();
    let d2 = pairwise_sq_distances(f);
    let dists: Vec<f64> = (0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j))).map(|(i, j)| d2[i * n + j].sqrt()).collect();
    let bw = median(dists);
    if !(bw > 0.0) {
        return None;
    }
    let mut a = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                a[(i, j)] = (-d2[i * n + j] / (2.0 * bw * bw)).exp();
            }
        }
    }
    let deg: Vec<f64> = (0..n).map(|i| a.row(i).sum()).collect();
    if deg.iter().any(|&d| !(d > 0.0)) {
        return None;
    }
    for i in 0..n {
        for j in 0..n {
            a[(i, j)] /= (deg[i] * deg[j]).sqrt();
        }
    }
    let eig = SymmetricEigen::new(a);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| eig.eigenvalues[y].total_cmp(&eig.eigenvalues[x]).then(x.cmp(&y)));
    let (c0, c1) = (order[0], order[1]);
    let rows = (0..n)
        .map(|i| {
            let u = [eig.eigenvectors[(i, c0)], eig.eigenvectors[(i, c1)]];
            let norm = (u[0] * u[0] + u[1] * u[1]).sqrt();
            if norm > 0.0 {
                [u[0] / norm, u[1] / norm]
            } else {
                u
            }
        })
        .collect();
    Some(rows)
}

fn sq_dist(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

/// Two-cluster k-means with k-means++ seeding; best of several seeded
/// restarts by within-cluster sum of squares (earliest restart on ties).
fn kmeans2(points: &[[f64; 2]], seed: u64) -> Vec<usize> {
    let n = points.len();
    let mut best: Option<(f64, Vec<usize>)> = None;
    for restart in 0..KMEANS_RESTARTS {
        let mut r = rng::child(seed, restart);
        let first = r.random_range(0..n);
        let weights: Vec<f64> = points.iter().map(|p| sq_dist(p, &points[first])).collect();
        let total: f64 = weights.iter().sum();
        let second = if total > 0.0 {
            let mut u = r.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, w) in weights.iter().enumerate() {
                if u < *w {
                    pick = i;
                    break;
                }
                u -= w;
            }
            pick
        } else {
            (first + 1) % n
        };
        let mut centres = [points[first], points[second]];
        let mut labels = vec![0usize; n];
        for _ in 0..KMEANS_MAX_ITER {
            let mut changed = false;
            for (i, p) in points.iter().enumerate() {
                let l = if sq_dist(p, &centres[1]) < sq_dist(p, &centres[0]) { 1 } else { 0 };
                if l != labels[i] {
                    labels[i] = l;
                    changed = true;
                }
            }
            for (c, centre) in centres.iter_mut().enumerate() {
                let members: Vec<&[f64; 2]> = points.iter().zip(&labels).filter(|(_, &l)| l == c).map(|(p, _)| p).collect();
                if !members.is_empty() {
                    let k = members.len() as f64;
                    *centre = [members.iter().map(|p| p[0]).sum::<f64>() / k, members.iter().map(|p| p[1]).sum::<f64>() / k];
                }
            }
            if !changed {
                break;
            }
        }
        let wss: f64 = points.iter().zip(&labels).map(|(p, &l)| sq_dist(p, &centres[l])).sum();
        if best.as_ref().is_none_or(|b| wss < b.0) {
            best = Some((wss, labels));
        }
    }
    best.expect("at least one restart").1
}

/// Distance of each row from the column medians, each column scaled by its
/// median absolute deviation (columns with zero MAD are skipped).
pub fn robust_distances(f: &Array2<f64>) -> Vec<f64> {
    let (n, p) = f.dim();
    let mut acc = vec![0.0; n];
    for j in 0..p {
        let col: Vec<f64> = f.column(j).to_vec();
        let med = median(col.clone());
        let mad = 1.4826 * median(col.iter().map(|v| (v - med).abs()).collect());
        if mad > 0.0 {
            for i in 0..n {
                acc[i] += ((f[[i, j]] - med) / mad).powi(2);
            }
        }
    }
    acc.into_iter().map(f64::sqrt).collect()
}

fn fallback_partition(f: &Array2<f64>) -> Result<Partition> {
    let n = f.nrows();
    let d = robust_distances(f);
    let k = ((FALLBACK_FRACTION * n as f64).ceil() as usize).min(n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| d[b].total_cmp(&d[a]).then(a.cmp(&b)));
    let s_infl = IndexSet::new(order[..k].to_vec(), n)?;
    let s_clean = s_infl.complement(n);
    Partition::new(s_infl, s_clean, n, PartitionMethod::RobustDistance)
}

/// Spectral two-way split; the smaller cluster is the candidate set. With
/// equal sizes the cluster whose rows lie further (on average) from the
/// grand centroid is chosen.
pub fn spectral_partition(data: &Dataset, seed: u64) -> Result<Partition> {
    let n = data.n();
    if n < 4 {
        return Err(Error::InvalidInput(format!("clustering needs at least 4 rows, got {n}")));
    }
    let f = clustering_features(data);
    let Some(embedding) = spectral_embedding(&f) else {
        log::warn!("spectral embedding degenerate; using robust-distance split");
        return fallback_partition(&f);
    };
    let labels = kmeans2(&embedding, seed);
    let sizes = [labels.iter().filter(|&&l| l == 0).count(), labels.iter().filter(|&&l| l == 1).count()];
    if sizes[0] == 0 || sizes[1] == 0 {
        log::warn!("spectral clustering returned one cluster; using robust-distance split");
        return fallback_partition(&f);
    }
    let infl_label = if sizes[0] != sizes[1] {
        if sizes[0] < sizes[1] {
            0
        } else {
            1
        }
    } else {
        let centroid = f.mean_axis(Axis(0)).expect("n >= 4");
        let spread = |c: usize| -> f64 {
            let rows: Vec<usize> = (0..n).filter(|&i| labels[i] == c).collect();
            rows.iter()
                .map(|&i| f.row(i).iter().zip(centroid.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
                .sum::<f64>()
                / rows.len() as f64
        };
        if spread(1) > spread(0) {
            1
        } else {
            0
        }
    };
    let s_infl = IndexSet::new((0..n).filter(|&i| labels[i] == infl_label).collect(), n)?;
    let s_clean = s_infl.complement(n);
    Partition::new(s_infl, s_clean, n, PartitionMethod::Spectral)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array1;
    use rand_distr::{Distribution, StandardNormal};

    fn blobs(sizes: (usize, usize), p: usize, shift: f64, seed: u64) -> Dataset {
        let mut r = rng::rng(seed);
        let n = sizes.0 + sizes.1;
        let x = Array2::from_shape_fn((n, p), |(i, _)| {
            let z: f64 = StandardNormal.sample(&mut r);
            if i < sizes.0 {
                z + shift
            } else {
                z
            }
        });
        let y = Array1::from_shape_fn(n, |i| {
            let z: f64 = StandardNormal.sample(&mut r);
            if i < sizes.0 {
                z + shift
            } else {
                z
            }
        });
        Dataset::new(y, x, Task::Linear).unwrap()
    }

    #[test]
    fn recovers_small_blob() {
        let mut exact = 0;
        for seed in 0..50 {
            let data = blobs((10, 40), 20, 4.0, seed);
            let part = spectral_partition(&data, seed).unwrap();
            if part.s_infl.as_slice() == (0..10).collect::<Vec<_>>().as_slice() {
                exact += 1;
            }
        }
        assert!(exact >= 48, "exact recovery on {exact}/50");
    }

    #[test]
    fn homogeneous_candidate_set_is_minority() {
        for seed in 0..10 {
            let data = blobs((0, 40), 30, 0.0, 100 + seed);
            let part = spectral_partition(&data, seed).unwrap();
            assert!(part.s_infl.len() <= 20);
            assert!(part.s_infl.is_disjoint(&part.s_clean));
            assert_eq!(part.s_infl.len() + part.s_clean.len(), 40);
        }
    }

    #[test]
    fn duplicated_outlier_rows_are_both_candidates() {
        let data = blobs((0, 40), 10, 0.0, 7);
        let (mut y, mut x, task) = data.into_parts();
        for i in [3, 17] {
            y[i] = 12.0;
            x.row_mut(i).fill(9.0);
        }
        let data = Dataset::new(y, x, task).unwrap();
        let part = spectral_partition(&data, 1).unwrap();
        assert!(part.s_infl.contains(3) && part.s_infl.contains(17), "{:?}", part.s_infl);
    }

    #[test]
    fn logistic_uses_predictors_only() {
        let data = blobs((10, 40), 5, 0.0, 3);
        let (_, x, _) = data.into_parts();
        let y = Array1::from_shape_fn(50, |i| (i % 2) as f64);
        let d = Dataset::new(y, x, Task::Logistic).unwrap();
        assert_eq!(clustering_features(&d).ncols(), 5);
    }

    #[test]
    fn robust_fallback_picks_far_rows() {
        let mut f = Array2::<f64>::zeros((10, 2));
        for i in 0..10 {
            f[[i, 0]] = i as f64;
            f[[i, 1]] = (i % 3) as f64;
        }
        f[[4, 0]] = 100.0;
        let part = fallback_partition(&f).unwrap();
        assert_eq!(part.s_infl.len(), 2);
        assert!(part.s_infl.contains(4));
        assert_eq!(part.method, PartitionMethod::RobustDistance);
    }

    #[test]
    fn permutation_equivariance() {
        let data = blobs((8, 30), 12, 3.0, 21);
        let part = spectral_partition(&data, 5).unwrap();
        let perm: Vec<usize> = (0..38).rev().collect();
        let permuted = data.subset(&perm);
        let part_p = spectral_partition(&permuted, 5).unwrap();
        let mapped: Vec<usize> = part_p.s_infl.iter().map(|k| perm[k]).collect();
        let mapped = IndexSet::new(mapped, 38).unwrap();
        assert_eq!(mapped, part.s_infl);
    }
}
