//! Noise-prediction training for the toy denoiser.

use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::mlp::{MlpArchitecture, MlpDenoiser};
use super::{ControlMap, Denoiser};
use crate::config::OptimizerKind;
use crate::error::{contract, Error, Result};
use crate::optim::Optimizer;
use crate::schedule::NoiseSchedule;
use crate::tensor::Latent;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingExample {
    pub latent: Latent,
    pub embedding: Vec<f64>,
    pub control: Option<ControlMap>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub hidden: usize,
    pub time_features: usize,
    pub seed: u64,
    /// Probability of replacing the text embedding by the empty embedding.
    pub embedding_drop: f64,
    /// Probability of zeroing the control map.
    pub control_drop: f64,
    /// Steps averaged into one entry of the loss log.
    pub log_window: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 16,
            learning_rate: 1e-3,
            hidden: 64,
            time_features: 16,
            seed: 0,
            embedding_drop: 0.1,
            control_drop: 0.1,
            log_window: 50,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingReport {
    /// Mean loss of each window of `log_window` steps.
    pub losses: Vec<f64>,
}

impl TrainingReport {
    pub fn initial_loss(&self) -> f64 {
        self.losses.first().copied().unwrap_or(f64::NAN)
    }

    pub fn final_loss(&self) -> f64 {
        self.losses.last().copied().unwrap_or(f64::NAN)
    }
}

fn check_dataset(dataset: &[TrainingExample]) -> Result<()> {
    let first = dataset
        .first()
        .ok_or_else(|| Error::Config("training dataset is empty".to_string()))?;
    for (i, ex) in dataset.iter().enumerate() {
        if ex.latent.shape() != first.latent.shape()
            || ex.embedding.len() != first.embedding.len()
            || ex.control.as_ref().map(|c| c.shape()) != first.control.as_ref().map(|c| c.shape())
        {
            return Err(contract!("training example {} differs in shape from the first", i));
        }
    }
    Ok(())
}

/// Trains a [`MlpDenoiser`] on `E |eps - eps_hat(z_t, t, c, p)|^2` with
/// `t` uniform over the schedule and Gaussian `eps`.
pub fn train_toy_denoiser(
    dataset: &[TrainingExample],
    schedule: &NoiseSchedule,
    config: &TrainingConfig,
) -> Result<(MlpDenoiser, TrainingReport)> {
    check_dataset(dataset)?;
    if config.batch_size == 0 || config.log_window == 0 {
        return Err(Error::Config("batch size and log window must be positive".to_string()));
    }
    let first = &dataset[0];
    let arch = MlpArchitecture {
        latent_shape: first.latent.shape(),
        control_shape: first.control.as_ref().map(|c| c.shape()),
        embedding_dim: first.embedding.len(),
        hidden: config.hidden,
        time_features: config.time_features,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut net = MlpDenoiser::init(arch, &mut rng)?;
    let empty = net.empty_embedding();
    let zero_control = vec![0.0; arch.control_len()];
    let n = arch.latent_len();
    let mut opt = Optimizer::new(OptimizerKind::Adam, config.learning_rate, net.params().len());
    let mut grads = vec![0.0; net.params().len()];
    let mut losses = Vec::new();
    let mut window = 0.0;
    let mut noisy = vec![0.0; n];
    let mut eps = vec![0.0; n];

    for step in 0..config.steps {
        grads.iter_mut().for_each(|g| *g = 0.0);
        let mut batch_loss = 0.0;
        for _ in 0..config.batch_size {
            let ex = &dataset[rng.random_range(0..dataset.len())];
            let t = rng.random_range(1..=schedule.num_steps());
            let level = schedule.level(t)?;
            let (s, d) = (libm::sqrt(level.alpha_bar), libm::sqrt(1.0 - level.alpha_bar));
            for ((zi, ei), xi) in noisy.iter_mut().zip(eps.iter_mut()).zip(ex.latent.as_slice()) {
                *ei = rng.sample(StandardNormal);
                *zi = s * xi + d * *ei;
            }
            let embedding = if rng.random::<f64>() < config.embedding_drop {
                &empty
            } else {
                &ex.embedding
            };
            let control = match &ex.control {
                Some(c) if rng.random::<f64>() >= config.control_drop => Some(c.tensor().as_slice()),
                Some(_) => Some(zero_control.as_slice()),
                None => None,
            };
            let act = net.forward(&noisy, level, embedding, control);
            let scale = 2.0 / (n * config.batch_size) as f64;
            let g_out: Vec<f64> = act
                .out
                .iter()
                .zip(&eps)
                .map(|(o, e)| {
                    batch_loss += (o - e) * (o - e);
                    scale * (o - e)
                })
                .collect();
            net.backward(&act, embedding, &g_out, Some(&mut grads));
        }
        opt.step(net.params_mut(), &grads);
        window += batch_loss / (n * config.batch_size) as f64;
        if (step + 1) % config.log_window == 0 {
            losses.push(window / config.log_window as f64);
            window = 0.0;
        }
    }
    let rem = config.steps % config.log_window;
    if rem != 0 {
        losses.push(window / rem as f64);
    }
    net.round_params();
    if net.params().iter().any(|p| !p.is_finite()) {
        return Err(Error::Numerical("training diverged".to_string()));
    }
    Ok((net, TrainingReport { losses }))
}

/// Mean squared noise-prediction error on a fixed held-out batch, with the
/// examples' control maps or with control withheld (zero maps).
pub fn heldout_epsilon_error<D: Denoiser + ?Sized>(
    model: &D,
    examples: &[TrainingExample],
    schedule: &NoiseSchedule,
    draws_per_example: usize,
    seed: u64,
    with_control: bool,
) -> Result<f64> {
    check_dataset(examples)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    let mut count = 0usize;
    for ex in examples {
        let withheld = ex.control.as_ref().map(|c| ControlMap::zeros(c.shape()));
        let control = if with_control {
            ex.control.as_ref()
        } else {
            withheld.as_ref()
        };
        for _ in 0..draws_per_example {
            let t = rng.random_range(1..=schedule.num_steps());
            let level = schedule.level(t)?;
            let mut eps = ex.latent.clone();
            eps.as_mut_slice()
                .iter_mut()
                .for_each(|e| *e = rng.sample(StandardNormal));
            let z = ex
                .latent
                .lincomb(libm::sqrt(level.alpha_bar), &eps, libm::sqrt(1.0 - level.alpha_bar))?;
            let pred = model.predict(&z, level, &ex.embedding, control)?;
            total += pred.sub(&eps)?.norm_sq();
            count += eps.len();
        }
    }
    Ok(total / count as f64)
}
