//! Initial patch clustering: over-cluster the features and keep the two
//! most populated clusters as the first-epoch training set.

use crate::cluster::{self, ClusterError, Clustering, Samples};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IpcMethod {
    KMeans,
    MeanShift,
}

impl std::str::FromStr for IpcMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "kmeans" => Ok(Self::KMeans),
            "meanshift" => Ok(Self::MeanShift),
            other => Err(format!("unknown clustering method {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IpcResult {
    /// Sample indices in the two largest clusters, ascending.
    pub kept: Vec<usize>,
    pub clustering: Clustering,
    /// Cluster ids of the largest and second-largest clusters.
    pub major: [usize; 2],
}

impl IpcResult {
    /// For every sample, whether it is nearer the largest kept cluster's
    /// centroid than the second one's. Kept samples use their own cluster.
    pub fn nearest_major(&self, x: Samples) -> Vec<bool> {
        let [a, b] = self.major;
        (0..x.len())
            .map(|i| {
                let c = self.clustering.assignment[i];
                if c == a {
                    true
                } else if c == b {
                    false
                } else {
                    cluster::sq_dist(x.row(i), self.clustering.centroid(a))
                        <= cluster::sq_dist(x.row(i), self.clustering.centroid(b))
                }
            })
            .collect()
    }
}

pub fn ipc_filter(x: Samples, k: usize, method: IpcMethod, seed: u64) -> Result<IpcResult, ClusterError> {
    let n = x.len();
    if n <= k {
        return Err(ClusterError::TooFewSamples { samples: n, clusters: k });
    }
    let clustering = match method {
        IpcMethod::KMeans => cluster::kmeans(x, k, 100, &mut rng::stream(seed, "ipc"))?,
        IpcMethod::MeanShift => cluster::mean_shift(x, None, 300)?,
    };
    let sizes = clustering.sizes();
    let order = clustering.by_size();
    if order.len() < 2 || sizes[order[1]] == 0 {
        return Err(ClusterError::DegenerateClusters);
    }
    let major = [order[0], order[1]];
    let kept = (0..n)
        .filter(|&i| major.contains(&clustering.assignment[i]))
        .collect();
    Ok(IpcResult { kept, clustering, major })
}
