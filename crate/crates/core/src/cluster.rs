//! Clustering on dense feature rows: k-means, diagonal Gaussian mixtures,
//! DBSCAN and mean-shift.

use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ClusterError {
    #[error("{samples} samples are too few for {clusters} clusters")]
    TooFewSamples { samples: usize, clusters: usize },
    #[error("fewer than two nonempty clusters")]
    DegenerateClusters,
    #[error("no core points: every sample is noise")]
    AllNoise,
    #[error("non-finite feature value in row {0}")]
    NonFinite(usize),
}

/// Row-major `n × dim` sample matrix.
#[derive(Debug, Clone, Copy)]
pub struct Samples<'a> {
    pub data: &'a [f64],
    pub dim: usize,
}

impl<'a> Samples<'a> {
    pub fn new(data: &'a [f64], dim: usize) -> Result<Self, ClusterError> {
        assert!(dim > 0 && data.len() % dim == 0, "sample matrix shape");
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(ClusterError::NonFinite(i / dim));
        }
        Ok(Self { data, dim })
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &'a [f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub assignment: Vec<usize>,
    /// `k × dim` row-major.
    pub centroids: Vec<f64>,
    pub k: usize,
}

impl Clustering {
    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for &a in &self.assignment {
            s[a] += 1;
        }
        s
    }

    pub fn centroid(&self, c: usize) -> &[f64] {
        let dim = self.centroids.len() / self.k;
        &self.centroids[c * dim..(c + 1) * dim]
    }

    /// Cluster ids ordered by decreasing size, ties by id.
    pub fn by_size(&self) -> Vec<usize> {
        let sizes = self.sizes();
        let mut ids: Vec<usize> = (0..self.k).collect();
        ids.sort_by(|&a, &b| sizes[b].cmp(&sizes[a]).then(a.cmp(&b)));
        ids
    }
}

fn nearest(x: &[f64], centroids: &[f64], k: usize) -> (usize, f64) {
    let dim = x.len();
    let mut best = (0, f64::INFINITY);
    for c in 0..k {
        let d = sq_dist(x, &centroids[c * dim..(c + 1) * dim]);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// Lloyd's algorithm from a k-means++ seeding.
pub fn kmeans(x: Samples, k: usize, max_iter: usize, rng: &mut impl Rng) -> Result<Clustering, ClusterError> {
    let n = x.len();
    if n < k || k == 0 {
        return Err(ClusterError::TooFewSamples { samples: n, clusters: k });
    }
    let dim = x.dim;
    let mut centroids = Vec::with_capacity(k * dim);
    centroids.extend_from_slice(x.row(rng.random_range(0..n)));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(x.row(i), &centroids[..dim])).collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut t = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if t < d {
                    pick = i;
                    break;
                }
                t -= d;
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        centroids.extend_from_slice(x.row(pick));
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(x.row(i), &centroids[c * dim..(c + 1) * dim]));
        }
    }

    let mut assignment = vec![usize::MAX; n];
    for _ in 0..max_iter {
        let mut changed = false;
        for i in 0..n {
            let (c, _) = nearest(x.row(i), &centroids, k);
            if assignment[i] != c {
                assignment[i] = c;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            let a = assignment[i];
            counts[a] += 1;
            for (s, v) in sums[a * dim..(a + 1) * dim].iter_mut().zip(x.row(i)) {
                *s += v;
            }
        }
        for c in 0..k {
            // empty clusters keep their previous centroid
            if counts[c] > 0 {
                for j in 0..dim {
                    centroids[c * dim + j] = sums[c * dim + j] / counts[c] as f64;
                }
            }
        }
    }
    Ok(Clustering { assignment, centroids, k })
}

/// Two-component (or `k`) Gaussian mixture with diagonal covariances,
/// fitted by EM from a k-means start.
pub fn gmm(x: Samples, k: usize, max_iter: usize, rng: &mut impl Rng) -> Result<Clustering, ClusterError> {
    let init = kmeans(x, k, 100, rng)?;
    let (n, dim) = (x.len(), x.dim);
    let floor = {
        let mut mean = vec![0.0; dim];
        for i in 0..n {
            for (m, v) in mean.iter_mut().zip(x.row(i)) {
                *m += v / n as f64;
            }
        }
        let var: f64 = (0..n).map(|i| sq_dist(x.row(i), &mean)).sum::<f64>() / (n * dim) as f64;
        (var * 1e-6).max(1e-12)
    };
    let mut means = init.centroids.clone();
    let mut vars = vec![floor; k * dim];
    let mut weights = vec![1.0 / k as f64; k];
    let mut resp = vec![0.0; n * k];
    for i in 0..n {
        resp[i * k + init.assignment[i]] = 1.0;
    }
    let mut prev_ll = f64::NEG_INFINITY;
    for iter in 0..=max_iter {
        // M step
        for c in 0..k {
            let nk: f64 = (0..n).map(|i| resp[i * k + c]).sum();
            weights[c] = (nk / n as f64).max(1e-12);
            if nk <= 1e-12 {
                continue;
            }
            for j in 0..dim {
                let m = (0..n).map(|i| resp[i * k + c] * x.row(i)[j]).sum::<f64>() / nk;
                let v = (0..n).map(|i| resp[i * k + c] * (x.row(i)[j] - m).powi(2)).sum::<f64>() / nk;
                means[c * dim + j] = m;
                vars[c * dim + j] = v.max(floor);
            }
        }
        if iter == max_iter {
            break;
        }
        // E step
        let mut ll = 0.0;
        for i in 0..n {
            let logp: Vec<f64> = (0..k)
                .map(|c| {
                    let mut s = weights[c].ln();
                    for j in 0..dim {
                        let v = vars[c * dim + j];
                        let d = x.row(i)[j] - means[c * dim + j];
                        s -= 0.5 * (d * d / v + v.ln() + std::f64::consts::TAU.ln());
                    }
                    s
                })
                .collect();
            let mx = logp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = logp.iter().map(|l| (l - mx).exp()).sum();
            ll += mx + z.ln();
            for c in 0..k {
                resp[i * k + c] = (logp[c] - mx).exp() / z;
            }
        }
        if (ll - prev_ll).abs() <= 1e-8 * ll.abs().max(1.0) {
            break;
        }
        prev_ll = ll;
    }
    let assignment = (0..n)
        .map(|i| {
            let r = &resp[i * k..(i + 1) * k];
            (0..k).fold(0, |b, c| if r[c] > r[b] { c } else { b })
        })
        .collect();
    Ok(Clustering { assignment, centroids: means, k })
}

pub const NOISE: usize = usize::MAX;

/// DBSCAN with Euclidean radius `eps`; noise points get [`NOISE`].
pub fn dbscan(x: Samples, eps: f64, min_pts: usize) -> Result<Vec<usize>, ClusterError> {
    let n = x.len();
    let eps2 = eps * eps;
    let neighbours: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).filter(|&j| sq_dist(x.row(i), x.row(j)) <= eps2).collect())
        .collect();
    let core: Vec<bool> = neighbours.iter().map(|nb| nb.len() >= min_pts.max(1)).collect();
    if !core.iter().any(|&c| c) {
        return Err(ClusterError::AllNoise);
    }
    let mut label = vec![NOISE; n];
    let mut next = 0;
    for start in 0..n {
        if !core[start] || label[start] != NOISE {
            continue;
        }
        let mut stack = vec![start];
        label[start] = next;
        while let Some(p) = stack.pop() {
            if !core[p] {
                continue;
            }
            for &q in &neighbours[p] {
                if label[q] == NOISE {
                    label[q] = next;
                    stack.push(q);
                }
            }
        }
        next += 1;
    }
    Ok(label)
}

/// Bandwidth estimate: mean distance from each sample to its
/// `max(1, floor(quantile * n))`-th nearest other sample.
pub fn estimate_bandwidth(x: Samples, quantile: f64) -> f64 {
    let n = x.len();
    if n < 2 {
        return 0.0;
    }
    let k = ((quantile * n as f64) as usize).clamp(1, n - 1);
    let mut total = 0.0;
    let mut d = Vec::with_capacity(n - 1);
    for i in 0..n {
        d.clear();
        d.extend((0..n).filter(|&j| j != i).map(|j| sq_dist(x.row(i), x.row(j))));
        total += d.select_nth_unstable_by(k - 1, f64::total_cmp).1.sqrt();
    }
    total / n as f64
}

/// Gaussian-kernel mean-shift started from every sample; modes closer than
/// half a bandwidth are merged.
pub fn mean_shift(x: Samples, bandwidth: Option<f64>, max_iter: usize) -> Result<Clustering, ClusterError> {
    let (n, dim) = (x.len(), x.dim);
    let h = bandwidth.unwrap_or_else(|| estimate_bandwidth(x, 0.3));
    if n < 2 || !(h > 0.0) {
        return Err(ClusterError::DegenerateClusters);
    }
    let inv = 1.0 / (2.0 * h * h);
    let mut modes: Vec<f64> = Vec::new();
    let mut assignment = vec![0; n];
    for i in 0..n {
        let mut m = x.row(i).to_vec();
        for _ in 0..max_iter {
            let mut num = vec![0.0; dim];
            let mut den = 0.0;
            for j in 0..n {
                let w = (-sq_dist(&m, x.row(j)) * inv).exp();
                den += w;
                for (a, v) in num.iter_mut().zip(x.row(j)) {
                    *a += w * v;
                }
            }
            num.iter_mut().for_each(|v| *v /= den);
            let shift = sq_dist(&num, &m);
            m = num;
            if shift < 1e-12 * h * h {
                break;
            }
        }
        let k = modes.len() / dim;
        let found = (0..k).find(|&c| sq_dist(&modes[c * dim..(c + 1) * dim], &m) < 0.25 * h * h);
        assignment[i] = match found {
            Some(c) => c,
            None => {
                modes.extend_from_slice(&m);
                k
            }
        };
    }
    let k = modes.len() / dim;
    Ok(Clustering {
        assignment,
        centroids: modes,
        k,
    })
}
