use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::data::{ClientDataset, Dataset};
use crate::error::{Error, Result};
use crate::nn::{GradientSet, Mlp};

/// Parameters of the task model, an [`Mlp`] producing class logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams(pub Mlp);

impl ModelParams {
    pub fn net(&self) -> &Mlp {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub local_epochs: usize,
    pub learning_rate: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 16,
            local_epochs: 5,
            learning_rate: 0.005,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.local_epochs == 0 || !(self.learning_rate >= 0.0) {
            return Err(Error::Config(
                "train: batch size and epochs must be positive, learning rate non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Result of one client's local training.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub model: ModelParams,
    /// Mean minibatch loss of each epoch, measured during the epoch.
    pub epoch_losses: Vec<f64>,
}

/// Cross-entropy of softmax(logits) against `label`, and its gradient with
/// respect to the logits.
pub fn cross_entropy(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let loss = sum.ln() + max - logits[label];
    let mut grad: Vec<f64> = exps.iter().map(|e| e / sum).collect();
    grad[label] -= 1.0;
    (loss, grad)
}

fn batch_gradient(net: &Mlp, data: &Dataset, idx: &[usize]) -> Result<(f64, GradientSet)> {
    let mut grads = GradientSet::zeros_like(net);
    let n = idx.len() as f64;
    let mut loss = 0.0;
    for &i in idx {
        let acts = net.forward_cached(&data.features[i])?;
        let (l, mut g) = cross_entropy(acts.output(), data.labels[i]);
        loss += l / n;
        g.iter_mut().for_each(|x| *x /= n);
        net.accumulate_backward(&acts, &g, &mut grads)?;
    }
    Ok((loss, grads))
}

/// Shuffled minibatch SGD on cross-entropy for `cfg.local_epochs` passes.
pub fn local_train<R: Rng + ?Sized>(
    model: &ModelParams,
    data: &ClientDataset,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<TrainReport> {
    cfg.validate()?;
    let mut net = model.0.clone();
    let mut order: Vec<usize> = (0..data.num_samples()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.local_epochs);
    for _ in 0..cfg.local_epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let (loss, grads) = batch_gradient(&net, &data.data, chunk)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss("local training"));
            }
            if cfg.learning_rate > 0.0 {
                for (p, g) in net.params_mut().zip(grads.values()) {
                    *p -= cfg.learning_rate * g;
                }
            }
            total += loss;
            batches += 1;
        }
        epoch_losses.push(total / batches.max(1) as f64);
    }
    if !net.is_finite() {
        return Err(Error::NonFiniteLoss("local training"));
    }
    Ok(TrainReport {
        model: ModelParams(net),
        epoch_losses,
    })
}

/// Sample-count weighted average of congruent models.
pub fn aggregate(models: &[&ModelParams], sample_counts: &[usize]) -> Result<ModelParams> {
    if models.is_empty() {
        return Err(Error::Empty("models to aggregate"));
    }
    if models.len() != sample_counts.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} models, {} sample counts",
            models.len(),
            sample_counts.len()
        )));
    }
    if models.iter().any(|m| !m.0.same_architecture(&models[0].0)) {
        return Err(Error::ShapeMismatch("models differ in architecture".into()));
    }
    let total: usize = sample_counts.iter().sum();
    if total == 0 {
        return Err(Error::InvalidParams("sample counts sum to zero".into()));
    }
    let mut out = models[0].0.clone();
    let weights: Vec<f64> = sample_counts.iter().map(|&n| n as f64 / total as f64).collect();
    let sources: Vec<Vec<f64>> = models.iter().map(|m| m.0.params().copied().collect()).collect();
    // offsets from the first model, so identical inputs come back bit for bit
    for (i, p) in out.params_mut().enumerate() {
        let base = sources[0][i];
        *p = base
            + sources[1..]
                .iter()
                .zip(&weights[1..])
                .map(|(s, w)| w * (s[i] - base))
                .sum::<f64>();
    }
    Ok(ModelParams(out))
}

/// Top-1 accuracy and mean cross-entropy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub loss: f64,
}

/// Index of the largest logit; ties go to the lowest class index.
pub fn predict(logits: &[f64]) -> usize {
    let mut best = 0;
    for (i, &z) in logits.iter().enumerate() {
        if z > logits[best] {
            best = i;
        }
    }
    best
}

pub fn evaluate(model: &ModelParams, test: &Dataset) -> Result<Evaluation> {
    if test.is_empty() {
        return Err(Error::Empty("test set"));
    }
    let mut correct = 0usize;
    let mut loss = 0.0;
    for (x, &y) in test.features.iter().zip(&test.labels) {
        let logits = model.0.forward(x)?;
        correct += usize::from(predict(&logits) == y);
        loss += cross_entropy(&logits, y).0;
    }
    let n = test.len() as f64;
    Ok(Evaluation {
        accuracy: correct as f64 / n,
        loss: loss / n,
    })
}

/// Mean training loss of a model on one client's shard, `f_k(w)`.
pub fn client_loss(model: &ModelParams, data: &ClientDataset) -> Result<f64> {
    Ok(evaluate(model, &data.data)?.loss)
}

/// Weighted local objective `F_m(w) = sum_k n_k / N_m * f_k(w)`.
pub fn server_objective(model: &ModelParams, clients: &[&ClientDataset]) -> Result<(f64, usize)> {
    let total: usize = clients.iter().map(|c| c.num_samples()).sum();
    if total == 0 {
        return Ok((0.0, 0));
    }
    let mut f = 0.0;
    for c in clients {
        f += c.num_samples() as f64 / total as f64 * client_loss(model, c)?;
    }
    Ok((f, total))
}

/// `sum_m N_m / N * F_m(w_m)` with `N = sum_m N_m`.
pub fn global_objective(models: &[ModelParams], server_clients: &[Vec<&ClientDataset>]) -> Result<f64> {
    if models.len() != server_clients.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} models for {} servers",
            models.len(),
            server_clients.len()
        )));
    }
    let parts: Vec<(f64, usize)> = models
        .iter()
        .zip(server_clients)
        .map(|(m, cs)| server_objective(m, cs))
        .collect::<Result<_>>()?;
    let total: usize = parts.iter().map(|p| p.1).sum();
    if total == 0 {
        return Ok(0.0);
    }
    Ok(parts.iter().map(|(f, n)| *n as f64 / total as f64 * f).sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scalar_model(w: f64) -> ModelParams {
        ModelParams(Mlp::from_parts(&[1, 1], vec![vec![w]], vec![vec![0.0]]).unwrap())
    }

    #[test]
    fn aggregate_weights_by_samples() {
        let a = scalar_model(1.0);
        let b = scalar_model(3.0);
        let m = aggregate(&[&a, &b], &[1, 3]).unwrap();
        assert_eq!(m.0.weights(0), &[2.5]);
        let m = aggregate(&[&a, &b], &[5, 5]).unwrap();
        assert_eq!(m.0.weights(0), &[2.0]);
        assert_eq!(aggregate(&[&a], &[7]).unwrap(), a);
    }

    #[test]
    fn aggregate_errors() {
        assert!(aggregate(&[], &[]).is_err());
        let a = scalar_model(1.0);
        let b = ModelParams(Mlp::zeros(&[2, 1]).unwrap());
        assert!(aggregate(&[&a, &b], &[1, 1]).is_err());
    }

    #[test]
    fn zero_learning_rate_keeps_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = ModelParams(Mlp::new(&[2, 3], &mut rng).unwrap());
        let data = ClientDataset {
            client_id: 0,
            data: Dataset {
                features: vec![vec![1.0, 2.0], vec![-1.0, 0.5]],
                labels: vec![0, 2],
                num_classes: 3,
            },
            source_indices: vec![0, 1],
        };
        let cfg = TrainConfig {
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        let out = local_train(&model, &data, &cfg, &mut rng).unwrap();
        assert_eq!(out.model, model);
        assert_eq!(out.epoch_losses.len(), 5);
    }

    #[test]
    fn uniform_logits_predict_class_zero() {
        let model = ModelParams(Mlp::zeros(&[2, 4]).unwrap());
        let test = Dataset {
            features: vec![vec![0.0, 1.0]; 8],
            labels: vec![0, 1, 2, 3, 0, 1, 2, 3],
            num_classes: 4,
        };
        let e = evaluate(&model, &test).unwrap();
        assert_eq!(e.accuracy, 0.25);
        assert!((e.loss - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_gradient_sums_to_zero() {
        let (l, g) = cross_entropy(&[1.0, 2.0, -1.0], 1);
        assert!(l > 0.0);
        assert!(g.iter().sum::<f64>().abs() < 1e-12);
    }
}
