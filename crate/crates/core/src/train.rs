//! Training loop, learning-rate schedule and resumable checkpoints.
//!
//! Every random draw in a run comes from streams derived from
//! [`TrainConfig::master_seed`]: the initial weights from one stream and each
//! epoch from its own, so a checkpoint taken at an epoch boundary only needs
//! the epoch counter to continue exactly where the run left off.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::data::{
    encode_inputs, input_dim, sample_batch, sample_locations_in, sample_uniform_locations,
    subsample_cap, EnvRasterStack, ObservationSet, SamplerConfig,
};
use crate::losses::{self, LossConfig, LossVariant};
use crate::net::{
    adam_step, backward, forward, init_params, read_config_block, read_exact, read_tensors,
    read_u32, read_u64, write_config_block, write_tensors, AdamConfig, AdamState, Mode, NetConfig,
    NetParams, SinrModel,
};
use crate::rng::{derive_seed, rng_from_seed};
use crate::{Error, Result};

const TAG_INIT: u64 = 1;
const TAG_EPOCH: u64 = 2;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SCKP";
pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// Per-epoch decay factor of the learning rate.
pub const LR_DECAY: f64 = 0.98;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub initial_lr: f64,
    pub loss: LossConfig,
    /// Network shape. `seed` is ignored: initial weights are drawn from a
    /// stream of `master_seed`.
    pub net: NetConfig,
    /// Batch size, per-species cap and input encoding.
    pub sampler: SamplerConfig,
    pub adam: AdamConfig,
    pub master_seed: u64,
}

impl TrainConfig {
    /// Defaults: 10 epochs, learning rate 5e-4, batch size 2048, full
    /// assume-negative loss with lambda 2048.
    pub fn new(net: NetConfig) -> Self {
        Self {
            epochs: 10,
            initial_lr: 5e-4,
            loss: LossConfig::default(),
            net,
            sampler: SamplerConfig::default(),
            adam: AdamConfig::default(),
            master_seed: 0,
        }
    }

    pub fn batch_size(&self) -> usize {
        self.sampler.batch_size
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be at least 1".into()));
        }
        if !(self.initial_lr > 0.0 && self.initial_lr.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "initial learning rate must be positive, got {}",
                self.initial_lr
            )));
        }
        LossConfig::new(self.loss.variant, self.loss.lambda)?;
        self.sampler.validate()?;
        self.net.validate()
    }

    /// The network configuration actually trained, with the derived seed.
    pub fn effective_net(&self) -> NetConfig {
        NetConfig {
            seed: derive_seed(self.master_seed, TAG_INIT, 0),
            ..self.net.clone()
        }
    }
}

/// `initial_lr * 0.98^epoch`.
pub fn lr_at_epoch(initial_lr: f64, epoch: usize) -> f64 {
    initial_lr * LR_DECAY.powi(epoch as i32)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingLog {
    /// Loss of every optimizer step, in order.
    pub step_losses: Vec<f64>,
    /// Mean step loss of each finished epoch.
    pub epoch_mean_losses: Vec<f64>,
    /// Pseudo-negative locations drawn per step.
    pub random_locations_per_step: usize,
}

/// A training run that can be advanced an epoch at a time and checkpointed
/// between epochs.
#[derive(Debug, Clone)]
pub struct Trainer<'a> {
    cfg: TrainConfig,
    net: NetConfig,
    data: ObservationSet,
    env: Option<&'a EnvRasterStack>,
    params: NetParams<f32>,
    adam: AdamState<f32>,
    next_epoch: usize,
    log: TrainingLog,
}

impl<'a> Trainer<'a> {
    /// Checks the configuration against the data, applies the per-species
    /// cap and draws the initial weights.
    pub fn new(
        cfg: &TrainConfig,
        data: &ObservationSet,
        env: Option<&'a EnvRasterStack>,
    ) -> Result<Self> {
        let (net, data) = prepare(cfg, data, env)?;
        let params = init_params(&net)?;
        let adam = AdamState::new(&net, cfg.adam);
        let log = TrainingLog {
            random_locations_per_step: random_locations_per_step(cfg),
            ..TrainingLog::default()
        };
        Ok(Self {
            cfg: cfg.clone(),
            net,
            data,
            env,
            params,
            adam,
            next_epoch: 0,
            log,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn net_config(&self) -> &NetConfig {
        &self.net
    }

    pub fn params(&self) -> &NetParams<f32> {
        &self.params
    }

    pub fn adam_state(&self) -> &AdamState<f32> {
        &self.adam
    }

    pub fn log(&self) -> &TrainingLog {
        &self.log
    }

    /// Records used for training, after the per-species cap.
    pub fn data(&self) -> &ObservationSet {
        &self.data
    }

    pub fn next_epoch(&self) -> usize {
        self.next_epoch
    }

    pub fn is_done(&self) -> bool {
        self.next_epoch >= self.cfg.epochs
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.data.len().div_ceil(self.cfg.sampler.batch_size)
    }

    /// Runs one epoch and returns its mean step loss.
    pub fn run_epoch(&mut self) -> Result<f64> {
        if self.is_done() {
            return Err(Error::InvalidArgument("all epochs already ran".into()));
        }
        let epoch = self.next_epoch;
        let lr = lr_at_epoch(self.cfg.initial_lr, epoch);
        let mut rng = rng_from_seed(derive_seed(self.cfg.master_seed, TAG_EPOCH, epoch as u64));
        let steps = self.steps_per_epoch();
        let mut sum = 0.0;
        for _ in 0..steps {
            let step = self.log.step_losses.len();
            let loss = self.step(&mut rng, lr, step)?;
            self.log.step_losses.push(loss);
            sum += loss;
        }
        let mean = sum / steps as f64;
        self.log.epoch_mean_losses.push(mean);
        self.next_epoch += 1;
        Ok(mean)
    }

    fn step<R: rand::Rng>(&mut self, rng: &mut R, lr: f64, step: usize) -> Result<f64> {
        let sampler = &self.cfg.sampler;
        let batch = sample_batch(&self.data, sampler, self.env, rng)?;
        let pass = forward(
            &self.params,
            &self.net,
            batch.inputs.view(),
            Mode::Train,
            rng,
        )?;

        let rand_pass = if self.cfg.loss.variant.uses_random_locations() {
            let n = batch.targets.len();
            let locs = match (sampler.input_mode.needs_env(), self.env) {
                (true, Some(env)) => sample_locations_in(n, env.bounds(), rng),
                _ => sample_uniform_locations(n, rng),
            };
            let x: Array2<f32> = encode_inputs(&locs, sampler.input_mode, self.env)?;
            Some(forward(
                &self.params,
                &self.net,
                x.view(),
                Mode::Train,
                rng,
            )?)
        } else {
            None
        };

        let out = losses::compute(
            &self.cfg.loss,
            pass.y_hat.view(),
            rand_pass.as_ref().map(|p| p.y_hat.view()),
            &batch.targets,
            rng,
        )?;
        if !out.value.is_finite() {
            return Err(Error::NonFiniteLoss { step });
        }
        let mut grads = backward(&self.params, &self.net, &pass, out.d_y_hat.view(), None)?;
        if let (Some(rp), Some(d)) = (&rand_pass, &out.d_y_rand) {
            grads.add_assign(&backward(&self.params, &self.net, rp, d.view(), None)?)?;
        }
        adam_step(&mut self.params, &grads, &mut self.adam, lr)?;
        Ok(out.value)
    }

    /// Runs the remaining epochs.
    pub fn run(&mut self) -> Result<()> {
        while !self.is_done() {
            self.run_epoch()?;
        }
        Ok(())
    }

    pub fn finish(self) -> (NetParams<f32>, TrainingLog) {
        (self.params, self.log)
    }

    /// Packages the current weights with the species catalog.
    pub fn model(&self) -> Result<SinrModel> {
        SinrModel::new(
            self.net.clone(),
            self.params.clone(),
            self.cfg.sampler.input_mode,
            self.data.species_ids().to_vec(),
        )
    }

    /// Writes everything needed to continue the run.
    pub fn checkpoint(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_checkpoint(&mut w)?;
        w.flush()?;
        Ok(())
    }

    fn write_checkpoint<W: Write>(&self, w: &mut W) -> Result<()> {
        let cfg = &self.cfg;
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_FORMAT_VERSION.to_le_bytes())?;
        write_config_block(w, &self.net, cfg.sampler.input_mode)?;
        // The seed as given, before `effective_net` replaced it.
        w.write_all(&cfg.net.seed.to_le_bytes())?;
        w.write_all(&u64_of(cfg.epochs).to_le_bytes())?;
        w.write_all(&cfg.initial_lr.to_le_bytes())?;
        w.write_all(&u64_of(cfg.sampler.batch_size).to_le_bytes())?;
        let cap = cfg.sampler.cap_per_species.map_or(u64::MAX, u64_of);
        w.write_all(&cap.to_le_bytes())?;
        w.write_all(&cfg.sampler.subsample_seed.to_le_bytes())?;
        w.write_all(&[cfg.loss.variant.code(), 0, 0, 0])?;
        w.write_all(&cfg.loss.lambda.to_le_bytes())?;
        w.write_all(&cfg.master_seed.to_le_bytes())?;
        for v in [cfg.adam.beta1, cfg.adam.beta2, cfg.adam.eps] {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&u64_of(self.data.len()).to_le_bytes())?;
        w.write_all(&u64_of(self.next_epoch).to_le_bytes())?;
        w.write_all(&self.adam.t.to_le_bytes())?;
        write_tensors(w, &self.params)?;
        write_tensors(w, &self.adam.m)?;
        write_tensors(w, &self.adam.v)?;
        write_f64s(w, &self.log.step_losses)?;
        write_f64s(w, &self.log.epoch_mean_losses)?;
        Ok(())
    }

    /// Continues a run from a checkpoint. `cfg`, `data` and `env` must be
    /// the ones the checkpointed run was started with.
    pub fn resume(
        path: impl AsRef<Path>,
        cfg: &TrainConfig,
        data: &ObservationSet,
        env: Option<&'a EnvRasterStack>,
    ) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let saved = read_checkpoint(&mut r)?;
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(Error::Corrupt("trailing bytes after checkpoint".into()));
        }
        let mut trainer = Trainer::new(cfg, data, env)?;
        if saved.cfg != *cfg {
            return Err(Error::CheckpointMismatch(
                "training configuration differs from the checkpointed run".into(),
            ));
        }
        if saved.n_records != trainer.data.len() {
            return Err(Error::CheckpointMismatch(format!(
                "checkpoint was trained on {} records, got {}",
                saved.n_records,
                trainer.data.len()
            )));
        }
        if saved.next_epoch > cfg.epochs {
            return Err(Error::Corrupt(format!(
                "checkpoint epoch {} beyond {} epochs",
                saved.next_epoch, cfg.epochs
            )));
        }
        trainer.params = saved.params;
        trainer.adam = saved.adam;
        trainer.next_epoch = saved.next_epoch;
        trainer.log.step_losses = saved.step_losses;
        trainer.log.epoch_mean_losses = saved.epoch_mean_losses;
        Ok(trainer)
    }
}

struct SavedRun {
    cfg: TrainConfig,
    n_records: usize,
    next_epoch: usize,
    params: NetParams<f32>,
    adam: AdamState<f32>,
    step_losses: Vec<f64>,
    epoch_mean_losses: Vec<f64>,
}

fn u64_of(v: usize) -> u64 {
    v as u64
}

fn read_f64<R: Read>(r: &mut R, what: &str) -> Result<f64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b, what)?;
    Ok(f64::from_le_bytes(b))
}

fn read_usize<R: Read>(r: &mut R, what: &str) -> Result<usize> {
    let v = read_u64(r, what)?;
    usize::try_from(v).map_err(|_| Error::Corrupt(format!("{what} value {v} too large")))
}

fn write_f64s<W: Write>(w: &mut W, values: &[f64]) -> Result<()> {
    w.write_all(&u64_of(values.len()).to_le_bytes())?;
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_f64s<R: Read>(r: &mut R, what: &str) -> Result<Vec<f64>> {
    let n = read_usize(r, what)?;
    if n > 1 << 32 {
        return Err(Error::Corrupt(format!("{n} entries in {what}")));
    }
    (0..n).map(|_| read_f64(r, what)).collect()
}

fn read_checkpoint<R: Read>(r: &mut R) -> Result<SavedRun> {
    let mut magic = [0u8; 4];
    read_exact(r, &mut magic, "magic")?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic);
    }
    let version = read_u32(r, "version")?;
    if version != CHECKPOINT_FORMAT_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let (effective_net, input_mode) = read_config_block(r)?;
    let given_seed = read_u64(r, "training config")?;
    let epochs = read_usize(r, "training config")?;
    let initial_lr = read_f64(r, "training config")?;
    let batch_size = read_usize(r, "training config")?;
    let cap = match read_u64(r, "training config")? {
        u64::MAX => None,
        v => Some(usize::try_from(v).map_err(|_| Error::Corrupt("cap too large".into()))?),
    };
    let subsample_seed = read_u64(r, "training config")?;
    let mut tags = [0u8; 4];
    read_exact(r, &mut tags, "training config")?;
    let variant = LossVariant::from_code(tags[0])
        .ok_or_else(|| Error::Corrupt(format!("unknown loss code {}", tags[0])))?;
    let lambda = read_f64(r, "training config")?;
    let master_seed = read_u64(r, "training config")?;
    let adam_cfg = AdamConfig {
        beta1: read_f64(r, "optimizer")?,
        beta2: read_f64(r, "optimizer")?,
        eps: read_f64(r, "optimizer")?,
    };
    let n_records = read_usize(r, "progress")?;
    let next_epoch = read_usize(r, "progress")?;
    let t = read_u64(r, "optimizer")?;
    let params = read_tensors(r, &effective_net)?;
    let m = read_tensors(r, &effective_net)?;
    let v = read_tensors(r, &effective_net)?;
    let step_losses = read_f64s(r, "loss log")?;
    let epoch_mean_losses = read_f64s(r, "loss log")?;

    let cfg = TrainConfig {
        epochs,
        initial_lr,
        loss: LossConfig::new(variant, lambda).map_err(|e| Error::Corrupt(e.to_string()))?,
        net: NetConfig {
            seed: given_seed,
            ..effective_net.clone()
        },
        sampler: SamplerConfig {
            batch_size,
            cap_per_species: cap,
            subsample_seed,
            input_mode,
        },
        adam: adam_cfg,
        master_seed,
    };
    if cfg.effective_net() != effective_net {
        return Err(Error::Corrupt(
            "network seed does not follow the master seed".into(),
        ));
    }
    Ok(SavedRun {
        cfg,
        n_records,
        next_epoch,
        params,
        adam: AdamState {
            m,
            v,
            t,
            config: adam_cfg,
        },
        step_losses,
        epoch_mean_losses,
    })
}

fn random_locations_per_step(cfg: &TrainConfig) -> usize {
    if cfg.loss.variant.uses_random_locations() {
        cfg.sampler.batch_size
    } else {
        0
    }
}

fn prepare(
    cfg: &TrainConfig,
    data: &ObservationSet,
    env: Option<&EnvRasterStack>,
) -> Result<(NetConfig, ObservationSet)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Empty("no training records".into()));
    }
    let mode = cfg.sampler.input_mode;
    if mode.needs_env() && env.is_none() {
        return Err(Error::MissingRasters);
    }
    let dim = input_dim(mode, env)?;
    if cfg.net.input_dim != dim {
        return Err(Error::InvalidConfig(format!(
            "network input width {} but {} input needs {dim}",
            cfg.net.input_dim,
            mode.as_str()
        )));
    }
    if cfg.net.n_species != data.n_species() {
        return Err(Error::InvalidConfig(format!(
            "network has {} outputs but the data has {} species",
            cfg.net.n_species,
            data.n_species()
        )));
    }
    let data = match cfg.sampler.cap_per_species {
        Some(k) => subsample_cap(data, k, cfg.sampler.subsample_seed),
        None => data.clone(),
    };
    Ok((cfg.effective_net(), data))
}

/// Trains from scratch and returns the final weights and the loss log.
pub fn train(
    cfg: &TrainConfig,
    data: &ObservationSet,
    env: Option<&EnvRasterStack>,
) -> Result<(NetParams<f32>, TrainingLog)> {
    let mut t = Trainer::new(cfg, data, env)?;
    t.run()?;
    Ok(t.finish())
}

pub fn checkpoint(path: impl AsRef<Path>, trainer: &Trainer<'_>) -> Result<()> {
    trainer.checkpoint(path)
}

pub fn resume<'a>(
    path: impl AsRef<Path>,
    cfg: &TrainConfig,
    data: &ObservationSet,
    env: Option<&'a EnvRasterStack>,
) -> Result<Trainer<'a>> {
    Trainer::resume(path, cfg, data, env)
}
