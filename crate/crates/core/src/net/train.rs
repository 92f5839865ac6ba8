//! Training loop: Adam with linear warmup, epoch-wise decay, global
//! gradient clipping, a length-ramp curriculum, and finite-difference
//! gradient verification.

use std::collections::HashMap;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::StructuralGrid;
use crate::net::binarize::BinarizeStrategy;
use crate::net::model::Model;
use crate::net::task::Sample;

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Base learning rate; 0 is accepted as a degenerate no-update run.
    pub learning_rate: f64,
    pub warmup_steps: usize,
    /// Multiplicative per-epoch decay in (0, 1].
    pub epoch_decay: f64,
    /// Linear length ramp from T/4 to T over the first half of the epochs.
    pub curriculum: bool,
    /// Global gradient-norm threshold.
    pub grad_clip: f64,
    pub binarize_strategy: BinarizeStrategy,
    pub binarize_threshold: f64,
    pub binarize_merge_gap: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 2,
            learning_rate: 1e-3,
            warmup_steps: 20,
            epoch_decay: 0.95,
            curriculum: true,
            grad_clip: 1.0,
            binarize_strategy: BinarizeStrategy::Threshold,
            binarize_threshold: 0.5,
            binarize_merge_gap: 1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid_argument("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid_argument("batch size must be at least 1"));
        }
        if !(self.learning_rate >= 0.0) {
            return Err(Error::invalid_argument("learning rate must be non-negative"));
        }
        if !(self.epoch_decay > 0.0 && self.epoch_decay <= 1.0) {
            return Err(Error::invalid_argument("epoch decay must lie in (0, 1]"));
        }
        if !(self.grad_clip > 0.0) {
            return Err(Error::invalid_argument("gradient clip threshold must be positive"));
        }
        if !(self.binarize_threshold > 0.0 && self.binarize_threshold < 1.0) {
            return Err(Error::invalid_argument("binarization threshold must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    /// Pre-clip global gradient norm of the epoch's last step.
    pub grad_norm: f64,
}

/// Scheduled sequence length for an epoch: ramps linearly from `full / 4`
/// to `full` over the first half of the epochs, then stays at `full`.
/// Non-decreasing in the epoch by construction.
pub fn curriculum_length(full: usize, epoch: usize, epochs: usize) -> usize {
    let start = (full / 4).max(1);
    let ramp_epochs = epochs.div_ceil(2);
    if ramp_epochs <= 1 || epoch + 1 >= ramp_epochs {
        return full;
    }
    let progress = epoch as f64 / (ramp_epochs - 1) as f64;
    let len = start as f64 + (full - start) as f64 * progress;
    (len.round() as usize).clamp(start, full)
}

/// Scales gradients in place so their global norm is at most `threshold`;
/// returns the pre-clip norm. Summation runs in sorted-name order so the
/// result is bit-identical across processes.
pub fn clip_global_norm(grads: &mut HashMap<String, Array2<f64>>, threshold: f64) -> f64 {
    let mut names: Vec<&String> = grads.keys().collect();
    names.sort();
    let total: f64 = names
        .iter()
        .map(|name| grads[*name].iter().map(|v| v * v).sum::<f64>())
        .sum();
    let norm = total.sqrt();
    if norm > threshold {
        let scale = threshold / norm;
        for g in grads.values_mut() {
            g.mapv_inplace(|v| v * scale);
        }
    }
    norm
}

struct Adam {
    first: HashMap<String, Array2<f64>>,
    second: HashMap<String, Array2<f64>>,
    step: usize,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new() -> Self {
        Adam { first: HashMap::new(), second: HashMap::new(), step: 0 }
    }

    fn update(&mut self, model: &mut Model, grads: &HashMap<String, Array2<f64>>, lr: f64) {
        self.step += 1;
        let bias1 = 1.0 - Self::BETA1.powi(self.step as i32);
        let bias2 = 1.0 - Self::BETA2.powi(self.step as i32);
        for param in model.params_mut() {
            let Some(grad) = grads.get(&param.name) else { continue };
            let m = self
                .first
                .entry(param.name.clone())
                .or_insert_with(|| Array2::zeros(grad.raw_dim()));
            let v = self
                .second
                .entry(param.name.clone())
                .or_insert_with(|| Array2::zeros(grad.raw_dim()));
            for ((pv, (mv, vv)), &gv) in param
                .value
                .iter_mut()
                .zip(m.iter_mut().zip(v.iter_mut()))
                .zip(grad.iter())
            {
                *mv = Self::BETA1 * *mv + (1.0 - Self::BETA1) * gv;
                *vv = Self::BETA2 * *vv + (1.0 - Self::BETA2) * gv * gv;
                let m_hat = *mv / bias1;
                let v_hat = *vv / bias2;
                *pv -= lr * m_hat / (v_hat.sqrt() + Self::EPS);
            }
        }
    }
}

fn batch_gradients(
    model: &Model,
    batch: &[&Sample],
    length: usize,
) -> Result<(f64, HashMap<String, Array2<f64>>)> {
    let mut total_loss = 0.0;
    let mut accumulated: HashMap<String, Array2<f64>> = HashMap::new();
    for sample in batch {
        let steps = sample.len().min(length);
        let x = sample.input.slice(ndarray::s![..steps, ..]).to_owned();
        let y = sample.target.slice(ndarray::s![..steps, ..]).to_owned();
        let grid = sample.grid.prefix(steps)?;
        let (mut tape, probs, param_nodes) = model.forward_with_tape(&x, &grid)?;
        let loss_node = tape.bce_loss(probs, &y);
        let loss_value = tape.value(loss_node)[[0, 0]];
        total_loss += loss_value;
        if !loss_value.is_finite() {
            return Ok((loss_value, accumulated));
        }
        let grads = tape.backward(loss_node)?;
        for (name, node) in &param_nodes {
            let Some(grad) = grads.get(*node) else { continue };
            match accumulated.get_mut(name) {
                Some(acc) => *acc += grad,
                None => {
                    accumulated.insert(name.clone(), grad.clone());
                }
            }
        }
    }
    let scale = 1.0 / batch.len() as f64;
    for g in accumulated.values_mut() {
        g.mapv_inplace(|v| v * scale);
    }
    Ok((total_loss * scale, accumulated))
}

/// Trains the model in place and returns the per-epoch log.
///
/// On a non-finite loss the parameters are restored to the last completed
/// epoch and `Error::Diverged` is returned.
pub fn train(model: &mut Model, dataset: &[Sample], config: &TrainConfig) -> Result<Vec<EpochLog>> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::invalid_argument("dataset must be non-empty"));
    }
    let full_length = dataset.iter().map(|s| s.len()).max().unwrap();
    let mut adam = Adam::new();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut logs = Vec::with_capacity(config.epochs);
    let mut snapshot: Vec<Array2<f64>> =
        model.params().iter().map(|p| p.value.clone()).collect();
    let mut step = 0usize;

    for epoch in 0..config.epochs {
        let length = if config.curriculum {
            curriculum_length(full_length, epoch, config.epochs)
        } else {
            full_length
        };
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        order.shuffle(&mut rng);

        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        let mut last_norm = 0.0;
        let mut last_lr = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &dataset[i]).collect();
            let (loss_value, mut grads) = batch_gradients(model, &batch, length)?;
            if !loss_value.is_finite() {
                for (param, saved) in model.params_mut().iter_mut().zip(&snapshot) {
                    param.value = saved.clone();
                }
                return Err(Error::Diverged { epoch });
            }
            last_norm = clip_global_norm(&mut grads, config.grad_clip);
            let warmup = if config.warmup_steps == 0 {
                1.0
            } else {
                ((step + 1) as f64 / config.warmup_steps as f64).min(1.0)
            };
            last_lr = config.learning_rate * warmup * config.epoch_decay.powi(epoch as i32);
            adam.update(model, &grads, last_lr);
            epoch_loss += loss_value;
            batches += 1;
            step += 1;
        }
        snapshot = model.params().iter().map(|p| p.value.clone()).collect();
        logs.push(EpochLog {
            epoch,
            lr: last_lr,
            loss: epoch_loss / batches as f64,
            grad_norm: last_norm,
        });
    }
    Ok(logs)
}

/// Result of a finite-difference gradient check.
#[derive(Debug, Clone)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub worst: String,
    pub checked: usize,
}

/// Central-difference verification of tape gradients on a sampled
/// parameter subset covering, per layer, at least one frequency, one
/// phase, one gain (when positional parameters exist) and the projection
/// weights, plus the embedding and output weights.
pub fn grad_check(
    model: &Model,
    x: &Array2<f64>,
    grid: &StructuralGrid,
    epsilon: f64,
) -> Result<GradCheck> {
    if !(1e-6..=1e-4).contains(&epsilon) {
        return Err(Error::invalid_argument(format!(
            "epsilon {epsilon} outside [1e-6, 1e-4]"
        )));
    }
    // Fixed pseudo-random binary target so every output unit gets signal.
    let mut rng = ChaCha8Rng::seed_from_u64(crate::features::sub_seed(model.config().seed, 0x6c));
    let targets = Array2::from_shape_fn((x.nrows(), super::model::OUTPUT_WIDTH), |_| {
        (rand::Rng::random_range(&mut rng, 0.0..1.0) < 0.1) as u8 as f64
    });

    let (mut tape, probs, param_nodes) = model.forward_with_tape(x, grid)?;
    let loss_node = tape.bce_loss(probs, &targets);
    let grads = tape.backward(loss_node)?;

    let mut picks: Vec<String> = Vec::new();
    for layer in 0..model.config().layers {
        for suffix in ["freq", "phase_q", "phase_k", "gain"] {
            let name = format!("layer{layer}.attn.head0.pe.{suffix}");
            if model.param(&name).is_some() {
                picks.push(name);
            }
        }
        picks.push(format!("layer{layer}.attn.wq"));
        picks.push(format!("layer{layer}.attn.wo"));
        picks.push(format!("layer{layer}.ff.w1"));
    }
    picks.push("embed.w".into());
    picks.push("out.w".into());
    picks.push("out.b".into());

    let mut max_rel = 0.0f64;
    let mut worst = String::new();
    let mut checked = 0usize;
    for name in picks {
        let node = param_nodes[&name];
        let analytic = grads
            .get(node)
            .ok_or_else(|| Error::Numeric(format!("no gradient reached {name}")))?;
        if analytic.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numeric(format!("non-finite gradient in {name}")));
        }
        // Probe the dominant entry: it carries the tensor's gradient signal
        // and sits well above the finite-difference noise floor.
        let (index, _) = analytic
            .iter()
            .enumerate()
            .max_by(|(_, a), (_, b)| a.abs().total_cmp(&b.abs()))
            .expect("parameters are non-empty");
        let (r, c) = (index / analytic.ncols(), index % analytic.ncols());
        let tape_grad = analytic[[r, c]];
        if tape_grad == 0.0 {
            return Err(Error::Numeric(format!("no gradient signal reaches {name}")));
        }

        let probe = |delta: f64| -> Result<f64> {
            let mut probe_model = model.clone();
            probe_model
                .param_mut(&name)
                .expect("picked parameter exists")[[r, c]] += delta;
            let probs = probe_model.forward(x, grid)?;
            super::model::loss(&probs, &targets)
        };
        let numeric = (probe(epsilon)? - probe(-epsilon)?) / (2.0 * epsilon);
        // The magnitude floor keeps the ratio meaningful once the true
        // gradient sits near the central-difference noise floor
        // (~eps_mach * |loss| / epsilon, i.e. ~1e-10 here).
        let rel = (numeric - tape_grad).abs() / numeric.abs().max(tape_grad.abs()).max(1e-5);
        if rel > max_rel {
            max_rel = rel;
            worst = format!("{name}[{r},{c}]");
        }
        checked += 1;
    }
    Ok(GradCheck { max_rel_error: max_rel, worst, checked })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::{FeatureMapKind, PeKind};
    use crate::net::model::{Model, ModelConfig, INPUT_WIDTH};
    use crate::net::task;

    fn tiny_model(pe: PeKind, map: FeatureMapKind, seed: u64) -> Model {
        Model::new(ModelConfig {
            layers: 2,
            heads: 2,
            model_dim: 8,
            ff_dim: 12,
            pe_kind: pe,
            feature_map: map,
            n_f: 2,
            realizations: 4,
            levels: 1,
            level_mask: None,
            dropout: 0.0,
            seed,
        })
        .unwrap()
    }

    fn desk_input(steps: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((steps, INPUT_WIDTH), |_| {
            (rand::Rng::random_range(&mut rng, 0.0..1.0) < 0.25) as u8 as f64
        })
    }

    #[test]
    fn grad_check_on_desk_model() {
        let grid = crate::grid::linear_grid(8).unwrap();
        let x = desk_input(8, 9);
        for pe in [PeKind::Rff, PeKind::Sff, PeKind::None] {
            let model = tiny_model(pe, FeatureMapKind::EluPlusOne, 31);
            let report = grad_check(&model, &x, &grid, 1e-5).unwrap();
            assert!(
                report.max_rel_error < 1e-4,
                "pe {pe:?}: {} at {}",
                report.max_rel_error,
                report.worst
            );
        }
    }

    #[test]
    fn grad_check_rejects_bad_epsilon() {
        let model = tiny_model(PeKind::Rff, FeatureMapKind::EluPlusOne, 1);
        let grid = crate::grid::linear_grid(4).unwrap();
        let x = desk_input(4, 2);
        assert!(grad_check(&model, &x, &grid, 0.0).is_err());
        assert!(grad_check(&model, &x, &grid, 1e-3).is_err());
    }

    #[test]
    fn zero_learning_rate_leaves_weights_unchanged() {
        let mut model = tiny_model(PeKind::Rff, FeatureMapKind::EluPlusOne, 5);
        let before: Vec<_> = model.params().iter().map(|p| p.value.clone()).collect();
        let dataset = task::copy_task(4, 16, 11).unwrap();
        let config = TrainConfig {
            epochs: 2,
            batch_size: 2,
            learning_rate: 0.0,
            warmup_steps: 0,
            ..TrainConfig::default()
        };
        train(&mut model, &dataset, &config).unwrap();
        for (p, b) in model.params().iter().zip(&before) {
            assert_eq!(&p.value, b);
        }
    }

    #[test]
    fn training_is_deterministic_given_seed() {
        let dataset = task::copy_task(4, 16, 3).unwrap();
        let config = TrainConfig { epochs: 2, warmup_steps: 2, ..TrainConfig::default() };
        let mut model_a = tiny_model(PeKind::Rff, FeatureMapKind::EluPlusOne, 7);
        let mut model_b = tiny_model(PeKind::Rff, FeatureMapKind::EluPlusOne, 7);
        let log_a = train(&mut model_a, &dataset, &config).unwrap();
        let log_b = train(&mut model_b, &dataset, &config).unwrap();
        assert_eq!(log_a, log_b);
        for (a, b) in model_a.params().iter().zip(model_b.params()) {
            assert_eq!(a.value, b.value);
        }
    }

    #[test]
    fn copy_task_loss_drops() {
        let dataset = task::copy_task(8, 24, 21).unwrap();
        let mut model = tiny_model(PeKind::Rff, FeatureMapKind::EluPlusOne, 13);
        // 8 samples / batch 2 = 4 steps per epoch; 50 epochs = 200 steps.
        let config = TrainConfig {
            epochs: 50,
            batch_size: 2,
            learning_rate: 2e-3,
            warmup_steps: 10,
            epoch_decay: 1.0,
            ..TrainConfig::default()
        };
        let logs = train(&mut model, &dataset, &config).unwrap();
        let initial = logs.first().unwrap().loss;
        let final_loss = logs.last().unwrap().loss;
        assert!(
            final_loss < 0.1 * initial,
            "loss went {initial} -> {final_loss} over {} epochs",
            logs.len()
        );
    }

    #[test]
    fn divergence_rolls_back_parameters() {
        let mut dataset = task::copy_task(2, 8, 4).unwrap();
        dataset[0].input[[0, 0]] = f64::NAN;
        let mut model = tiny_model(PeKind::Rff, FeatureMapKind::EluPlusOne, 17);
        let before: Vec<_> = model.params().iter().map(|p| p.value.clone()).collect();
        let config = TrainConfig { epochs: 1, ..TrainConfig::default() };
        match train(&mut model, &dataset, &config) {
            Err(Error::Diverged { epoch: 0 }) => {}
            other => panic!("expected divergence, got {other:?}"),
        }
        for (p, b) in model.params().iter().zip(&before) {
            assert_eq!(&p.value, b);
        }
    }

    #[test]
    fn curriculum_is_non_decreasing_and_reaches_full() {
        for epochs in [1usize, 2, 5, 10, 15] {
            for full in [8usize, 64, 128] {
                let lengths: Vec<usize> =
                    (0..epochs).map(|e| curriculum_length(full, e, epochs)).collect();
                assert!(lengths.windows(2).all(|w| w[0] <= w[1]), "{lengths:?}");
                assert_eq!(*lengths.last().unwrap(), full);
                assert!(lengths[0] >= full / 4);
            }
        }
    }

    #[test]
    fn clip_bounds_global_norm() {
        let mut grads = HashMap::new();
        grads.insert("a".to_string(), Array2::from_elem((2, 2), 3.0));
        grads.insert("b".to_string(), Array2::from_elem((1, 4), -4.0));
        let pre = clip_global_norm(&mut grads, 1.0);
        assert!(pre > 1.0);
        let post: f64 = grads
            .values()
            .map(|g| g.iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt();
        assert!(post <= 1.0 + 1e-12);

        let mut small = HashMap::new();
        small.insert("a".to_string(), Array2::from_elem((1, 1), 0.25));
        let pre = clip_global_norm(&mut small, 1.0);
        assert_eq!(pre, 0.25);
        assert_eq!(small["a"][[0, 0]], 0.25);
    }

    #[test]
    fn length_generalization_runs_at_four_times_training_length() {
        let dataset = task::chord_cue_task(2, 32, 4, 3).unwrap();
        let mut model = Model::new(ModelConfig {
            layers: 1,
            heads: 2,
            model_dim: 8,
            ff_dim: 8,
            pe_kind: PeKind::Rff,
            feature_map: FeatureMapKind::EluPlusOne,
            n_f: 2,
            realizations: 4,
            levels: 1,
            level_mask: Some(vec![0]),
            dropout: 0.0,
            seed: 20,
        })
        .unwrap();
        let config = TrainConfig { epochs: 1, ..TrainConfig::default() };
        train(&mut model, &dataset, &config).unwrap();
        let long = task::chord_cue_task(1, 128, 4, 5).unwrap();
        let probs = model.forward(&long[0].input, &long[0].grid).unwrap();
        assert_eq!(probs.nrows(), 128);
        assert!(probs.iter().all(|p| p.is_finite()));
    }

    #[test]
    fn train_config_validation() {
        let mut config = TrainConfig::default();
        config.epochs = 0;
        assert!(config.validate().is_err());
        let mut config = TrainConfig::default();
        config.binarize_threshold = 1.0;
        assert!(config.validate().is_err());
        let mut config = TrainConfig::default();
        config.epoch_decay = 0.0;
        assert!(config.validate().is_err());
    }
}
