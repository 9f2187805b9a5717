use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Labelled feature rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            features: indices.iter().map(|&i| self.features[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
        }
    }

    /// Per-class fraction of the labels.
    pub fn label_distribution(&self) -> Vec<f64> {
        let mut h = vec![0.0; self.num_classes];
        for &l in &self.labels {
            h[l] += 1.0;
        }
        let n = self.len().max(1) as f64;
        h.iter_mut().for_each(|x| *x /= n);
        h
    }
}

/// One client's shard.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientDataset {
    pub client_id: usize,
    pub data: Dataset,
    /// Row indices into the dataset the shard was cut from.
    pub source_indices: Vec<usize>,
}

impl ClientDataset {
    pub fn num_samples(&self) -> usize {
        self.data.len()
    }
}

/// Parameters of the Gaussian-blob classification task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlobSpec {
    pub classes: usize,
    pub dim: usize,
    pub samples: usize,
    /// Standard deviation of each blob around its centre.
    pub spread: f64,
    /// Standard deviation of the class centres around the origin.
    pub center_scale: f64,
}

impl Default for BlobSpec {
    fn default() -> Self {
        BlobSpec {
            classes: 4,
            dim: 8,
            samples: 4000,
            spread: 1.0,
            center_scale: 1.0,
        }
    }
}

/// Class centres for a blob task.
pub fn blob_centers<R: Rng + ?Sized>(spec: &BlobSpec, rng: &mut R) -> Vec<Vec<f64>> {
    (0..spec.classes)
        .map(|_| {
            (0..spec.dim)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(rng);
                    spec.center_scale * z
                })
                .collect::<Vec<f64>>()
        })
        .collect()
}

/// Balanced samples (`label = i mod classes`) around the given centres.
pub fn sample_blobs<R: Rng + ?Sized>(centers: &[Vec<f64>], samples: usize, spread: f64, rng: &mut R) -> Dataset {
    let classes = centers.len();
    let mut features = Vec::with_capacity(samples);
    let mut labels = Vec::with_capacity(samples);
    for i in 0..samples {
        let c = i % classes;
        features.push(
            centers[c]
                .iter()
                .map(|m| {
                    let z: f64 = StandardNormal.sample(rng);
                    m + spread * z
                })
                .collect(),
        );
        labels.push(c);
    }
    Dataset {
        features,
        labels,
        num_classes: classes,
    }
}

/// How samples are spread across clients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "scheme")]
pub enum PartitionScheme {
    Iid,
    Dirichlet { eta: f64 },
}

fn dirichlet<R: Rng + ?Sized>(eta: f64, n: usize, rng: &mut R) -> Vec<f64> {
    let gamma = Gamma::new(eta, 1.0).expect("eta checked positive");
    let mut w: Vec<f64> = (0..n).map(|_| gamma.sample(rng)).collect();
    let s: f64 = w.iter().sum();
    if s > 0.0 {
        w.iter_mut().for_each(|x| *x /= s);
    } else {
        // every draw underflowed; put the mass on one client
        let k = rng.random_range(0..n);
        w.iter_mut()
            .enumerate()
            .for_each(|(i, x)| *x = f64::from(u8::from(i == k)));
    }
    w
}

/// Splits `dataset` into `num_clients` disjoint shards covering every sample.
/// Under the Dirichlet scheme each class is divided by a fresh
/// `Dirichlet(eta, ..., eta)` draw. Clients left empty each take one sample
/// from the largest shard.
pub fn partition_data<R: Rng + ?Sized>(
    dataset: &Dataset,
    num_clients: usize,
    scheme: PartitionScheme,
    rng: &mut R,
) -> Result<Vec<ClientDataset>> {
    if num_clients == 0 {
        return Err(Error::Config("at least one client is required".into()));
    }
    if dataset.len() < num_clients {
        return Err(Error::DatasetTooSmall {
            samples: dataset.len(),
            clients: num_clients,
        });
    }
    let shards: Vec<Vec<usize>> = match scheme {
        PartitionScheme::Iid => {
            let mut idx: Vec<usize> = (0..dataset.len()).collect();
            idx.shuffle(rng);
            let base = idx.len() / num_clients;
            let extra = idx.len() % num_clients;
            let mut start = 0;
            (0..num_clients)
                .map(|k| {
                    let len = base + usize::from(k < extra);
                    let shard = idx[start..start + len].to_vec();
                    start += len;
                    shard
                })
                .collect()
        }
        PartitionScheme::Dirichlet { eta } => {
            if !(eta > 0.0) {
                return Err(Error::Config(format!("dirichlet eta {eta} must be positive")));
            }
            let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); dataset.num_classes];
            for (i, &l) in dataset.labels.iter().enumerate() {
                by_class[l].push(i);
            }
            let mut shards = vec![Vec::new(); num_clients];
            for members in &by_class {
                let mut members = members.clone();
                members.shuffle(rng);
                let p = dirichlet(eta, num_clients, rng);
                let mut cum = 0.0;
                let mut start = 0;
                for (k, pk) in p.iter().enumerate() {
                    cum += pk;
                    let end = if k + 1 == num_clients {
                        members.len()
                    } else {
                        ((cum * members.len() as f64).round() as usize).clamp(start, members.len())
                    };
                    shards[k].extend_from_slice(&members[start..end]);
                    start = end;
                }
            }
            // an empty shard takes the last sample of the largest one
            for k in 0..num_clients {
                if shards[k].is_empty() {
                    let donor = (0..num_clients)
                        .max_by_key(|&j| (shards[j].len(), std::cmp::Reverse(j)))
                        .expect("at least one client");
                    let moved = shards[donor].pop().expect("samples outnumber clients");
                    shards[k].push(moved);
                }
            }
            for s in &mut shards {
                s.sort_unstable();
            }
            shards
        }
    };
    Ok(shards
        .into_iter()
        .enumerate()
        .map(|(client_id, idx)| ClientDataset {
            client_id,
            data: dataset.subset(&idx),
            source_indices: idx,
        })
        .collect())
}

/// Writes `client_id,label,x0,...` rows for every shard.
pub fn export_partition_csv(path: &Path, clients: &[ClientDataset]) -> Result<()> {
    let io = |e| Error::io(path, e);
    let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    let dim = clients.iter().map(|c| c.data.dim()).max().unwrap_or(0);
    let header: Vec<String> = ["client_id".to_string(), "sample".into(), "label".into()]
        .into_iter()
        .chain((0..dim).map(|i| format!("x{i}")))
        .collect();
    writeln!(out, "{}", header.join(",")).map_err(io)?;
    for c in clients {
        for ((row, label), src) in c.data.features.iter().zip(&c.data.labels).zip(&c.source_indices) {
            let values: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(out, "{},{},{},{}", c.client_id, src, label, values.join(",")).map_err(io)?;
        }
    }
    out.flush().map_err(io)
}

/// Mean total-variation distance between each shard's label distribution
/// and the global one.
pub fn mean_label_divergence(global: &Dataset, clients: &[ClientDataset]) -> f64 {
    let g = global.label_distribution();
    let total: f64 = clients
        .iter()
        .map(|c| {
            0.5 * c
                .data
                .label_distribution()
                .iter()
                .zip(&g)
                .map(|(a, b)| (a - b).abs())
                .sum::<f64>()
        })
        .sum();
    total / clients.len().max(1) as f64
}
