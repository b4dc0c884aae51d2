//! Evaluation diagnostics: Hopkins cluster tendency, posterior entropy,
//! Fréchet distance, transfer accuracy and embedding export.

mod embeddings;
mod entropy;
mod eval_classifiers;
mod features;
mod frechet;
mod hopkins;
mod transfer;

pub use embeddings::{
    embed, export_embeddings, pca, posterior_embedding, read_embeddings, write_embeddings, EmbeddingSet,
};
pub use entropy::{code_posterior_entropy, entropy, posterior_entropy, EntropySummary};
pub use eval_classifiers::EvalClassifiers;
pub use features::{ClassifierFeatures, ExtractorId, FeatureExtractor};
pub use frechet::{frechet_distance, gaussian_stats, sqrtm_psd};
pub use hopkins::{
    centroid_projection, cluster_tendency_report, hopkins, hopkins_once, ClusterRow, ClusterTendencyReport, HopkinsSummary,
    Projection, TendencyConfig,
};
pub use transfer::{transfer_accuracy, transfer_accuracy_with, AccuracyStat, TransferProtocol, TransferReport};

/// Mean and sample standard deviation (`n - 1` denominator; 0 for `n < 2`).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}
