//! Federated training on a synthetic classification task: partitioning,
//! local SGD, FedAvg aggregation and evaluation.

mod data;
mod train;

pub use data::{
    blob_centers, export_partition_csv, mean_label_divergence, partition_data, sample_blobs, BlobSpec, ClientDataset,
    Dataset, PartitionScheme,
};
pub use train::{
    aggregate, client_loss, cross_entropy, evaluate, global_objective, local_train, predict, server_objective,
    Evaluation, ModelParams, TrainConfig, TrainReport,
};
