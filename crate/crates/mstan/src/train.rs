//! Training: binary cross-entropy objective, SGD/Adam over the flattened
//! parameter vector, stratified splitting, the epoch loop with early
//! stopping on validation F1, and the finite-difference gradient check.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{
    fit_standardizer, impute_missing, make_batch, normalize_time, standardize, DataError, Dataset,
    FeatureStats,
};
use crate::metrics::{evaluate, MetricsError, MetricsReport};
use crate::model::{backward, forward, init_params, ModelConfig, ModelError, ModelParams};
use crate::tensor::{finite_diff_grad, grad_rel_error};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid train config: {0}")]
    InvalidConfig(String),
    #[error("training split contains a single class; both labels are required")]
    SingleClassTrainingSplit,
    #[error("prediction and label lengths differ: {y_hat} vs {y}")]
    LengthMismatch { y_hat: usize, y: usize },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    Adam,
}

/// Training hyperparameters. The test split fraction is implied:
/// 1 - train_frac - val_frac. A zero validation fraction disables early
/// stopping and returns the final epoch's parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub early_stop_patience: usize,
    pub train_frac: f64,
    pub val_frac: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 25,
            batch_size: 16,
            learning_rate: 1e-3,
            optimizer: Optimizer::Adam,
            early_stop_patience: 10,
            train_frac: 0.70,
            val_frac: 0.15,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 {
            return Err(TrainError::InvalidConfig("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::InvalidConfig(
                "batch_size must be at least 1".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::InvalidConfig(
                "learning_rate must be positive".into(),
            ));
        }
        if !(self.train_frac > 0.0) || self.val_frac < 0.0 {
            return Err(TrainError::InvalidConfig(
                "train_frac must be positive and val_frac non-negative".into(),
            ));
        }
        if self.train_frac + self.val_frac > 1.0 + 1e-12 {
            return Err(TrainError::InvalidConfig(
                "train_frac + val_frac must not exceed 1".into(),
            ));
        }
        Ok(())
    }
}

/// Per-epoch record of losses and validation metrics at threshold 0.5.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_metrics: MetricsReport,
}

/// Full training trace. `best_epoch` indexes the epoch whose validation
/// F1 was highest (ties keep the earlier epoch); without a validation
/// split it points at the final epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
    pub best_epoch: usize,
}

/// Item indices of the three splits, disjoint and exhaustive.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Everything a training run produces: best parameters, the trace, the
/// standardization statistics fitted on the training split, and the split
/// itself (so callers can evaluate on the held-out test items).
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub history: TrainHistory,
    pub stats: FeatureStats,
    pub split: SplitIndices,
}

/// Mean binary cross-entropy and its gradient with respect to the
/// predictions. Probabilities are clamped to [1e-12, 1 - 1e-12] before
/// the logs.
pub fn bce_loss(y_hat: &[f64], y: &[u8]) -> Result<(f64, Vec<f64>), TrainError> {
    if y_hat.len() != y.len() {
        return Err(TrainError::LengthMismatch {
            y_hat: y_hat.len(),
            y: y.len(),
        });
    }
    let n = y_hat.len() as f64;
    let mut loss = 0.0;
    let mut dy = vec![0.0; y_hat.len()];
    for (i, (&p, &label)) in y_hat.iter().zip(y).enumerate() {
        let p = p.clamp(1e-12, 1.0 - 1e-12);
        if label == 1 {
            loss -= p.ln();
            dy[i] = -1.0 / (p * n);
        } else {
            loss -= (1.0 - p).ln();
            dy[i] = 1.0 / ((1.0 - p) * n);
        }
    }
    Ok((loss / n, dy))
}

/// First and second moment vectors for Adam; unused by SGD.
#[derive(Debug, Clone)]
pub struct OptState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl OptState {
    pub fn new(n_coords: usize) -> Self {
        OptState {
            m: vec![0.0; n_coords],
            v: vec![0.0; n_coords],
            step: 0,
        }
    }
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// One optimizer update over the flat parameter vector, in place.
pub fn optimizer_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut OptState,
    config: &TrainConfig,
) {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), state.m.len());
    let lr = config.learning_rate;
    match config.optimizer {
        Optimizer::Sgd => {
            for (p, &g) in params.iter_mut().zip(grads) {
                *p -= lr * g;
            }
        }
        Optimizer::Adam => {
            state.step += 1;
            let bc1 = 1.0 - ADAM_BETA1.powi(state.step as i32);
            let bc2 = 1.0 - ADAM_BETA2.powi(state.step as i32);
            for i in 0..params.len() {
                let g = grads[i];
                state.m[i] = ADAM_BETA1 * state.m[i] + (1.0 - ADAM_BETA1) * g;
                state.v[i] = ADAM_BETA2 * state.v[i] + (1.0 - ADAM_BETA2) * g * g;
                let m_hat = state.m[i] / bc1;
                let v_hat = state.v[i] / bc2;
                params[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
        }
    }
}

/// Split items into train/val/test, stratified by label so every split
/// keeps the class mix. Deterministic under the seed.
pub fn stratified_split(labels: &[u8], train_frac: f64, val_frac: f64, seed: u64) -> SplitIndices {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = SplitIndices {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for class in [1u8, 0u8] {
        let mut idx: Vec<usize> = labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == class)
            .map(|(i, _)| i)
            .collect();
        idx.shuffle(&mut rng);
        let n = idx.len();
        let n_train = ((n as f64) * train_frac).round() as usize;
        let n_val = (((n as f64) * val_frac).round() as usize).min(n - n_train.min(n));
        let n_train = n_train.min(n);
        split.train.extend(&idx[..n_train]);
        split.val.extend(&idx[n_train..n_train + n_val]);
        split.test.extend(&idx[n_train + n_val..]);
    }
    split
}

/// Apply the fixed preprocessing pipeline with known statistics: shift
/// time to start at zero, standardize with `stats`, then impute (forward
/// fill; head gaps take the standardized mean, which is zero).
pub fn preprocess_with_stats(dataset: &Dataset, stats: &FeatureStats) -> Result<Dataset, TrainError> {
    let mut ds = dataset.clone();
    for (series, _) in &mut ds.items {
        *series = normalize_time(series);
    }
    let mut ds = standardize(&ds, stats)?;
    let zeros = vec![0.0; ds.d()];
    for (series, _) in &mut ds.items {
        *series = impute_missing(series, &zeros);
    }
    Ok(ds)
}

/// Forward the model over the given items (preprocessed dataset) in
/// batches; returns predictions and labels in index order.
pub fn predict(
    model_config: &ModelConfig,
    params: &ModelParams,
    dataset: &Dataset,
    indices: &[usize],
    batch_size: usize,
) -> Result<(Vec<f64>, Vec<u8>), TrainError> {
    let mut y_hat = Vec::with_capacity(indices.len());
    let mut labels = Vec::with_capacity(indices.len());
    for chunk in indices.chunks(batch_size.max(1)) {
        let items: Vec<&(crate::data::IrregularSeries, u8)> =
            chunk.iter().map(|&i| &dataset.items[i]).collect();
        let batch = make_batch(&items, model_config.l_max);
        let (y, _) = forward(model_config, params, &batch)?;
        y_hat.extend(y);
        labels.extend(batch.labels);
    }
    Ok((y_hat, labels))
}

fn zero_metrics() -> MetricsReport {
    MetricsReport {
        tp: 0,
        fp: 0,
        tn: 0,
        fn_: 0,
        accuracy: 0.0,
        precision: 0.0,
        recall: 0.0,
        f1: 0.0,
        threshold: 0.5,
    }
}

/// Train a model on a raw (unpreprocessed) dataset. The pipeline fits
/// standardization statistics on the training split only, trains with the
/// configured optimizer, evaluates the validation split each epoch at
/// threshold 0.5, and returns the parameters of the best-validation-F1
/// epoch (the final epoch when there is no validation split).
pub fn train(
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    dataset: &Dataset,
) -> Result<TrainOutcome, TrainError> {
    model_config.validate()?;
    train_config.validate()?;
    if dataset.is_empty() {
        return Err(DataError::EmptyDataset.into());
    }

    let labels: Vec<u8> = dataset.items.iter().map(|(_, l)| *l).collect();
    let split = stratified_split(
        &labels,
        train_config.train_frac,
        train_config.val_frac,
        train_config.seed,
    );
    let train_labels: Vec<u8> = split.train.iter().map(|&i| labels[i]).collect();
    if !(train_labels.contains(&0) && train_labels.contains(&1)) {
        return Err(TrainError::SingleClassTrainingSplit);
    }

    // Statistics come from the training split only.
    let mut train_view = Dataset::new(
        split.train.iter().map(|&i| dataset.items[i].clone()).collect(),
        dataset.schema.clone(),
    );
    for (series, _) in &mut train_view.items {
        *series = normalize_time(series);
    }
    let stats = fit_standardizer(&train_view)?;
    let ds = preprocess_with_stats(dataset, &stats)?;

    let mut params = init_params(model_config)?;
    let mut opt_state = OptState::new(params.n_coords());
    let mut rng = ChaCha8Rng::seed_from_u64(train_config.seed);
    let mut order = split.train.clone();

    let mut history = TrainHistory {
        epochs: Vec::new(),
        best_epoch: 0,
    };
    let mut best_f1 = f64::NEG_INFINITY;
    let mut best_params = params.clone();
    let mut epochs_since_best = 0usize;

    for epoch in 0..train_config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(train_config.batch_size) {
            let items: Vec<&(crate::data::IrregularSeries, u8)> =
                chunk.iter().map(|&i| &ds.items[i]).collect();
            let batch = make_batch(&items, model_config.l_max);
            let (y_hat, cache) = forward(model_config, &params, &batch)?;
            let (loss, dy) = bce_loss(&y_hat, &batch.labels)?;
            loss_sum += loss * chunk.len() as f64;
            let grads = backward(model_config, &params, &batch, &cache, &dy);
            let mut flat = params.to_flat();
            optimizer_step(&mut flat, &grads.to_flat(), &mut opt_state, train_config);
            params = params.from_flat(&flat);
        }
        let train_loss = loss_sum / split.train.len() as f64;

        let (val_loss, val_metrics) = if split.val.is_empty() {
            (0.0, zero_metrics())
        } else {
            let (vy, vl) = predict(
                model_config,
                &params,
                &ds,
                &split.val,
                train_config.batch_size,
            )?;
            let (loss, _) = bce_loss(&vy, &vl)?;
            (loss, evaluate(&vy, &vl, 0.5)?)
        };

        history.epochs.push(EpochStats {
            epoch,
            train_loss,
            val_loss,
            val_metrics: val_metrics.clone(),
        });

        if split.val.is_empty() {
            history.best_epoch = epoch;
            best_params = params.clone();
        } else if val_metrics.f1 > best_f1 {
            best_f1 = val_metrics.f1;
            history.best_epoch = epoch;
            best_params = params.clone();
            epochs_since_best = 0;
        } else {
            epochs_since_best += 1;
            if epochs_since_best > train_config.early_stop_patience {
                break;
            }
        }
    }

    Ok(TrainOutcome {
        params: best_params,
        history,
        stats,
        split,
    })
}

/// Write the per-epoch trace as CSV. The first line records the config
/// hash as a comment so results stay attributable to their settings.
pub fn write_history_csv(
    path: &Path,
    history: &TrainHistory,
    config_hash: &str,
) -> Result<(), TrainError> {
    let io_err = |source: std::io::Error| TrainError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(io_err)?);
    writeln!(out, "# config_hash={config_hash}").map_err(io_err)?;
    writeln!(
        out,
        "epoch,train_loss,val_loss,val_acc,val_precision,val_recall,val_f1"
    )
    .map_err(io_err)?;
    for e in &history.epochs {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            e.epoch,
            e.train_loss,
            e.val_loss,
            e.val_metrics.accuracy,
            e.val_metrics.precision,
            e.val_metrics.recall,
            e.val_metrics.f1
        )
        .map_err(io_err)?;
    }
    Ok(())
}

/// Build a small fixed batch and compare analytic gradients against
/// central finite differences of the full BCE objective, over every
/// parameter coordinate. Returns the worst relative error.
pub fn grad_check(model_config: &ModelConfig, seed: u64) -> Result<f64, TrainError> {
    model_config.validate()?;
    let (b, l) = (2, 5);
    let d = model_config.d;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // One full-length item and one shorter item so masking is exercised.
    let lens = [l, l - 2];
    let mut values = vec![0.0; b * l * d];
    let mut timestamps = vec![0.0; b * l];
    let mut seq_mask = vec![false; b * l];
    for bi in 0..b {
        let mut t = 0.0;
        for i in 0..lens[bi] {
            t += rng.gen_range(0.5..2.0);
            timestamps[bi * l + i] = t;
            seq_mask[bi * l + i] = true;
            for j in 0..d {
                values[(bi * l + i) * d + j] = rng.gen_range(-1.0..1.0);
            }
        }
        for i in lens[bi]..l {
            timestamps[bi * l + i] = t;
        }
    }
    let batch = crate::data::PaddedBatch {
        values,
        timestamps,
        seq_mask,
        labels: vec![1, 0],
        b,
        l,
        d,
    };

    let params = init_params(model_config)?;
    let (y_hat, cache) = forward(model_config, &params, &batch)?;
    let (_, dy) = bce_loss(&y_hat, &batch.labels)?;
    let analytic = backward(model_config, &params, &batch, &cache, &dy).to_flat();

    let template = params.clone();
    let objective = |flat: &[f64]| {
        let p = template.from_flat(flat);
        let (y, _) = forward(model_config, &p, &batch).expect("forward on fixed batch");
        bce_loss(&y, &batch.labels).expect("matching lengths").0
    };
    let numeric = finite_diff_grad(objective, &params.to_flat(), 1e-5)
        .expect("objective is finite");
    Ok(analytic
        .iter()
        .zip(&numeric)
        .map(|(&a, &n)| grad_rel_error(a, n))
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::IrregularSeries;

    #[test]
    fn bce_half_probability_is_ln_two() {
        let (loss, _) = bce_loss(&[0.5], &[1]).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn bce_perfect_prediction_is_tiny() {
        let (loss, _) = bce_loss(&[1.0, 0.0], &[1, 0]).unwrap();
        assert!(loss < 1e-10);
    }

    #[test]
    fn bce_gradient_matches_finite_differences() {
        let y_hat = [0.3, 0.9, 0.5, 0.12];
        let y = [1u8, 0, 1, 0];
        let (_, dy) = bce_loss(&y_hat, &y).unwrap();
        let numeric = finite_diff_grad(
            |p| bce_loss(p, &y).unwrap().0,
            &y_hat,
            1e-6,
        )
        .unwrap();
        for (a, n) in dy.iter().zip(&numeric) {
            assert!((a - n).abs() < 1e-6, "{a} vs {n}");
        }
    }

    #[test]
    fn bce_rejects_length_mismatch() {
        assert!(bce_loss(&[0.5], &[1, 0]).is_err());
    }

    fn sgd_config() -> TrainConfig {
        TrainConfig {
            optimizer: Optimizer::Sgd,
            learning_rate: 0.1,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn sgd_step_applies_formula() {
        let mut p = vec![1.0];
        let mut state = OptState::new(1);
        optimizer_step(&mut p, &[2.0], &mut state, &sgd_config());
        assert!((p[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut p = vec![1.5, -2.0];
        let mut state = OptState::new(2);
        optimizer_step(&mut p, &[0.0, 0.0], &mut state, &sgd_config());
        assert_eq!(p, vec![1.5, -2.0]);

        let adam = TrainConfig::default();
        let mut state = OptState::new(2);
        optimizer_step(&mut p, &[0.0, 0.0], &mut state, &adam);
        assert!((p[0] - 1.5).abs() < 1e-12);
        assert!((p[1] + 2.0).abs() < 1e-12);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let config = TrainConfig::default(); // adam, lr = 1e-3
        let mut p = vec![0.7, -0.3, 2.0];
        let mut state = OptState::new(3);
        optimizer_step(&mut p, &[1.0, 1.0, 1.0], &mut state, &config);
        // bias-corrected first step: m_hat = 1, v_hat = 1, so the update
        // is lr / (1 + eps) for every coordinate
        for (after, before) in p.iter().zip([0.7, -0.3, 2.0]) {
            assert!(((before - after) - 1e-3).abs() < 1e-9);
        }
    }

    #[test]
    fn stratified_split_partitions_and_keeps_classes() {
        let labels: Vec<u8> = (0..100).map(|i| (i % 10 == 0) as u8).collect();
        let split = stratified_split(&labels, 0.7, 0.15, 9);
        let mut all: Vec<usize> = [&split.train[..], &split.val[..], &split.test[..]].concat();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        // 10 positives: 7 train, 1-2 val, rest test
        let pos_train = split.train.iter().filter(|&&i| labels[i] == 1).count();
        assert_eq!(pos_train, 7);
        assert!(split.val.iter().any(|&i| labels[i] == 1));
        assert!(split.test.iter().any(|&i| labels[i] == 1));
    }

    #[test]
    fn stratified_split_is_deterministic() {
        let labels: Vec<u8> = (0..60).map(|i| (i % 3 == 0) as u8).collect();
        assert_eq!(
            stratified_split(&labels, 0.7, 0.15, 4),
            stratified_split(&labels, 0.7, 0.15, 4)
        );
        assert_ne!(
            stratified_split(&labels, 0.7, 0.15, 4),
            stratified_split(&labels, 0.7, 0.15, 5)
        );
    }

    /// Tiny separable dataset: positives carry +1 features, negatives -1.
    fn toy_dataset(n: usize) -> Dataset {
        let d = 2;
        let items = (0..n)
            .map(|i| {
                let label = (i % 2) as u8;
                let sign = if label == 1 { 1.0 } else { -1.0 };
                let t_len = 4 + i % 3;
                let timestamps: Vec<f64> = (0..t_len).map(|s| s as f64 * 1.5).collect();
                let values: Vec<f64> = (0..t_len * d)
                    .map(|k| sign * (1.0 + 0.1 * (k as f64 * 0.7).sin()))
                    .collect();
                let observed = vec![true; t_len * d];
                (
                    IrregularSeries {
                        id: format!("toy{i}"),
                        timestamps,
                        values,
                        observed,
                        d,
                    },
                    label,
                )
            })
            .collect();
        Dataset::new(items, vec!["f0".to_string(), "f1".to_string()])
    }

    fn toy_model_config() -> ModelConfig {
        ModelConfig {
            d: 2,
            d_h: 8,
            scales: vec![1, 2],
            l_max: 8,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn training_reduces_loss_on_separable_data() {
        let dataset = toy_dataset(20);
        let train_config = TrainConfig {
            epochs: 50,
            batch_size: 4,
            learning_rate: 1e-2,
            train_frac: 1.0,
            val_frac: 0.0,
            ..TrainConfig::default()
        };
        let outcome = train(&toy_model_config(), &train_config, &dataset).unwrap();
        let first = outcome.history.epochs.first().unwrap().train_loss;
        let last = outcome.history.epochs.last().unwrap().train_loss;
        assert!(last < first, "loss should fall: {first} -> {last}");
    }

    #[test]
    fn training_is_deterministic_under_seed() {
        let dataset = toy_dataset(24);
        let config = toy_model_config();
        let train_config = TrainConfig {
            epochs: 5,
            batch_size: 4,
            ..TrainConfig::default()
        };
        let a = train(&config, &train_config, &dataset).unwrap();
        let b = train(&config, &train_config, &dataset).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn training_rejects_single_class_split() {
        let mut dataset = toy_dataset(10);
        for (_, label) in &mut dataset.items {
            *label = 1;
        }
        let err = train(&toy_model_config(), &TrainConfig::default(), &dataset).unwrap_err();
        assert!(matches!(err, TrainError::SingleClassTrainingSplit));
    }

    #[test]
    fn best_epoch_points_at_max_validation_f1() {
        let dataset = toy_dataset(40);
        let train_config = TrainConfig {
            epochs: 8,
            batch_size: 4,
            ..TrainConfig::default()
        };
        let outcome = train(&toy_model_config(), &train_config, &dataset).unwrap();
        let best = outcome.history.best_epoch;
        let best_f1 = outcome.history.epochs[best].val_metrics.f1;
        for e in &outcome.history.epochs {
            assert!(e.val_metrics.f1 <= best_f1);
        }
    }

    #[test]
    fn grad_check_passes_for_both_temperature_modes() {
        for learnable in [false, true] {
            let config = ModelConfig {
                d: 3,
                d_h: 4,
                scales: vec![1, 2],
                tau_learnable: learnable,
                ..ModelConfig::default()
            };
            let err = grad_check(&config, 7).unwrap();
            assert!(err < 1e-4, "tau_learnable={learnable}: {err:.3e}");
        }
    }

    #[test]
    fn grad_check_detects_a_corrupted_alignment_width_gradient() {
        // Recompute what grad_check compares, but corrupt the analytic
        // gradient of the alignment width before measuring.
        let config = ModelConfig {
            d: 3,
            d_h: 4,
            scales: vec![1, 2],
            ..ModelConfig::default()
        };
        let params = init_params(&config).unwrap();
        let sigma_index = params.w_e.len() + params.b_e.len();

        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut values = vec![0.0; 2 * 5 * 3];
        let mut timestamps = vec![0.0; 2 * 5];
        let mut seq_mask = vec![false; 2 * 5];
        let lens = [5, 3];
        for bi in 0..2 {
            let mut t = 0.0;
            for i in 0..lens[bi] {
                t += rng.gen_range(0.5..2.0);
                timestamps[bi * 5 + i] = t;
                seq_mask[bi * 5 + i] = true;
                for j in 0..3 {
                    values[(bi * 5 + i) * 3 + j] = rng.gen_range(-1.0..1.0);
                }
            }
            for i in lens[bi]..5 {
                timestamps[bi * 5 + i] = t;
            }
        }
        let batch = crate::data::PaddedBatch {
            values,
            timestamps,
            seq_mask,
            labels: vec![1, 0],
            b: 2,
            l: 5,
            d: 3,
        };
        let (y_hat, cache) = forward(&config, &params, &batch).unwrap();
        let (_, dy) = bce_loss(&y_hat, &batch.labels).unwrap();
        let mut analytic = backward(&config, &params, &batch, &cache, &dy).to_flat();
        let g = analytic[sigma_index];
        analytic[sigma_index] = g + g.abs().max(1.0);

        let template = params.clone();
        let objective = |flat: &[f64]| {
            let p = template.from_flat(flat);
            let (y, _) = forward(&config, &p, &batch).unwrap();
            bce_loss(&y, &batch.labels).unwrap().0
        };
        let numeric = finite_diff_grad(objective, &params.to_flat(), 1e-5).unwrap();
        let worst = analytic
            .iter()
            .zip(&numeric)
            .map(|(&a, &n)| grad_rel_error(a, n))
            .fold(0.0, f64::max);
        assert!(worst > 1e-2, "corruption must be detected, got {worst:.3e}");
    }

    #[test]
    fn history_csv_round_trips_through_parsing() {
        let history = TrainHistory {
            epochs: vec![EpochStats {
                epoch: 0,
                train_loss: 0.6931471805599453,
                val_loss: 0.5,
                val_metrics: evaluate(&[0.9, 0.2], &[1, 0], 0.5).unwrap(),
            }],
            best_epoch: 0,
        };
        let tmp = tempfile::Builder::new().suffix(".csv").tempfile().unwrap();
        write_history_csv(tmp.path(), &history, "deadbeef00112233").unwrap();
        let text = std::fs::read_to_string(tmp.path()).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "# config_hash=deadbeef00112233");
        assert_eq!(
            lines.next().unwrap(),
            "epoch,train_loss,val_loss,val_acc,val_precision,val_recall,val_f1"
        );
        let row = lines.next().unwrap();
        let fields: Vec<&str> = row.split(',').collect();
        assert_eq!(fields.len(), 7);
        assert_eq!(fields[1].parse::<f64>().unwrap(), 0.6931471805599453);
    }
}
