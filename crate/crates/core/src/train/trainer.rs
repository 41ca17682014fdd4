//! MSE objective, seeded epoch sampling and the training loop.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::adam::{adam_step, load_optimizer, save_optimizer, AdamConfig, AdamState, OptimizerCheckpoint};
use super::patches::PatchSource;
use crate::binio;
use crate::error::{Error, Result};
use crate::model::{self, encode_model, Gradients, ModelParams};
use crate::tensor::{Scalar, Tensor};

/// Samples handled sequentially by one worker before the fixed-order reduction.
const GROUP: usize = 8;

/// Mean squared error and its gradient with respect to `x_star`.
pub fn mse_loss<T: Scalar>(x_star: &Tensor<T>, x: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    if x_star.shape() != x.shape() {
        return Err(Error::shape(format!(
            "prediction {} vs target {}",
            x_star.shape(),
            x.shape()
        )));
    }
    let n = x.data().len() as f64;
    let k = T::lit(2.0 / n);
    let mut sum = 0.0;
    let grad: Vec<T> = x_star
        .data()
        .iter()
        .zip(x.data())
        .map(|(&a, &b)| {
            let d = a - b;
            sum += d.as_f64() * d.as_f64();
            k * d
        })
        .collect();
    Ok((sum / n, Tensor::from_vec(x.shape(), grad)?))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Zero disables periodic checkpoints.
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 1000,
            batch: 128,
            adam: AdamConfig::default(),
            seed: 0,
            checkpoint_every: 1000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(Error::Argument("batch must be >= 1".into()));
        }
        self.adam.validate()
    }
}

/// Dataset position → pair index: one seeded shuffle per epoch.
#[derive(Debug, Clone)]
pub struct EpochSampler {
    seed: u64,
    len: usize,
    current: Option<(u64, Vec<usize>)>,
}

impl EpochSampler {
    pub fn new(seed: u64, len: usize) -> Self {
        EpochSampler { seed, len, current: None }
    }

    pub fn permutation(seed: u64, epoch: u64, len: usize) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(epoch);
        let mut p: Vec<usize> = (0..len).collect();
        p.shuffle(&mut rng);
        p
    }

    pub fn index_at(&mut self, position: u64) -> usize {
        let len = self.len as u64;
        let epoch = position / len;
        if self.current.as_ref().map(|c| c.0) != Some(epoch) {
            self.current = Some((epoch, Self::permutation(self.seed, epoch, self.len)));
        }
        self.current.as_ref().unwrap().1[(position % len) as usize]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub step: u64,
    pub loss: f64,
    pub wall_seconds: f64,
}

/// `stem.lpcn` and `stem.lpco`.
pub fn checkpoint_paths(stem: &Path) -> (PathBuf, PathBuf) {
    let with = |ext: &str| {
        let mut s = stem.as_os_str().to_owned();
        s.push(ext);
        PathBuf::from(s)
    };
    (with(".lpcn"), with(".lpco"))
}

/// CRC of a model file without its trailing checksum. Hashing the whole file
/// would give the same residue for every valid file.
fn body_crc(bytes: &[u8]) -> u32 {
    crc32fast::hash(&bytes[..bytes.len().saturating_sub(4)])
}

pub struct Trainer<'a> {
    params: ModelParams<f32>,
    state: AdamState<f32>,
    cfg: TrainConfig,
    source: &'a dyn PatchSource,
    sampler: EpochSampler,
    cursor: u64,
    checkpoint_stem: Option<PathBuf>,
    last_checkpoint: Option<PathBuf>,
    started: Instant,
    wall_offset: f64,
}

impl<'a> Trainer<'a> {
    pub fn new(params: ModelParams<f32>, source: &'a dyn PatchSource, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        if source.is_empty() {
            return Err(Error::Argument("training set is empty".into()));
        }
        let m = params.arch().required_multiple();
        if source.patch() % m != 0 {
            return Err(Error::Argument(format!(
                "patch size {} is not a multiple of {m} required by the architecture",
                source.patch()
            )));
        }
        let state = AdamState::for_params(&params);
        Ok(Trainer {
            params,
            state,
            cfg,
            sampler: EpochSampler::new(cfg.seed, source.len()),
            source,
            cursor: 0,
            checkpoint_stem: None,
            last_checkpoint: None,
            started: Instant::now(),
            wall_offset: 0.0,
        })
    }

    /// Continues from `stem.lpcn` + `stem.lpco`. The stored seed wins over `cfg.seed`.
    pub fn resume(source: &'a dyn PatchSource, mut cfg: TrainConfig, stem: &Path) -> Result<Self> {
        let (model_path, opt_path) = checkpoint_paths(stem);
        let model_bytes = binio::read_file(&model_path)?;
        let params = model::decode_model::<f32>(&model_bytes)?;
        let ck = load_optimizer(&opt_path)?;
        if ck.fingerprint != params.arch().fingerprint() {
            return Err(Error::State("optimizer state belongs to a different architecture".into()));
        }
        if ck.model_crc != body_crc(&model_bytes) {
            return Err(Error::State("optimizer state was saved with a different model file".into()));
        }
        if ck.seed != cfg.seed {
            log::warn!("resuming with the checkpoint's seed {} instead of {}", ck.seed, cfg.seed);
            cfg.seed = ck.seed;
        }
        let mut t = Trainer::new(params, source, cfg)?;
        let fresh = AdamState::<f32>::for_params(&t.params);
        let sizes_match = fresh.m.len() == ck.state.m.len()
            && fresh.m.iter().zip(&ck.state.m).all(|(a, b)| a.len() == b.len());
        if !sizes_match {
            return Err(Error::State("optimizer state does not match model layers".into()));
        }
        t.state = ck.state;
        t.cursor = ck.cursor;
        t.last_checkpoint = Some(model_path);
        Ok(t)
    }

    /// Periodic checkpoints go to `stem.lpcn` / `stem.lpco`.
    pub fn set_checkpoint_stem(&mut self, stem: Option<PathBuf>) {
        self.checkpoint_stem = stem;
    }

    /// Offsets reported wall time, so a resumed run continues the clock.
    pub fn set_wall_offset(&mut self, seconds: f64) {
        self.wall_offset = seconds;
    }

    pub fn params(&self) -> &ModelParams<f32> {
        &self.params
    }

    pub fn into_params(self) -> ModelParams<f32> {
        self.params
    }

    pub fn state(&self) -> &AdamState<f32> {
        &self.state
    }

    pub fn step(&self) -> u64 {
        self.state.t
    }

    pub fn cursor(&self) -> u64 {
        self.cursor
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn last_checkpoint(&self) -> Option<&Path> {
        self.last_checkpoint.as_deref()
    }

    /// Mean loss and summed gradient of the given pairs under the current parameters.
    pub fn batch_gradient(&self, indices: &[usize]) -> Result<(f64, Gradients<f32>)> {
        let weight = 1.0 / indices.len() as f32;
        let params = &self.params;
        let source = self.source;
        let parts: Vec<Result<(f64, Gradients<f32>)>> = indices
            .par_chunks(GROUP)
            .map(|group| {
                let mut acc = Gradients::zeros_like(params);
                let mut loss = 0.0;
                for &i in group {
                    let pair = source.pair(i)?;
                    let fwd = model::forward(params, &pair.input, true)?;
                    let (l, d) = mse_loss(&fwd.output, &pair.label)?;
                    let ctx = fwd.context.as_ref().expect("context kept");
                    acc.add_assign(&model::backward(params, ctx, &d.scale(weight))?)?;
                    loss += l;
                }
                Ok((loss, acc))
            })
            .collect();
        let mut total = Gradients::zeros_like(params);
        let mut loss = 0.0;
        for part in parts {
            let (l, g) = part?;
            loss += l;
            total.add_assign(&g)?;
        }
        Ok((loss / indices.len() as f64, total))
    }

    /// Mean loss of the given pairs, without gradients.
    pub fn batch_loss(&self, indices: &[usize]) -> Result<f64> {
        let params = &self.params;
        let losses: Vec<Result<f64>> = indices
            .par_iter()
            .map(|&i| {
                let pair = self.source.pair(i)?;
                Ok(mse_loss(&model::infer(params, &pair.input)?, &pair.label)?.0)
            })
            .collect();
        let mut sum = 0.0;
        for l in losses {
            sum += l?;
        }
        Ok(sum / indices.len() as f64)
    }

    /// Pair indices of the next batch, without consuming them.
    pub fn next_batch(&mut self) -> Vec<usize> {
        (0..self.cfg.batch as u64)
            .map(|k| self.sampler.index_at(self.cursor + k))
            .collect()
    }

    /// One optimizer step. Parameters are left untouched when the loss or
    /// gradient is not finite.
    pub fn train_step(&mut self) -> Result<StepReport> {
        let batch = self.next_batch();
        let (loss, grads) = self.batch_gradient(&batch)?;
        let finite = loss.is_finite()
            && grads
                .layers
                .iter()
                .all(|g| g.d_weights.all_finite() && g.d_bias.iter().all(|v| v.is_finite()));
        if !finite {
            return Err(Error::Divergence {
                step: self.state.t + 1,
                loss,
                last_checkpoint: self.last_checkpoint.clone(),
            });
        }
        adam_step(&mut self.params, &grads, &mut self.state, &self.cfg.adam)?;
        self.cursor += batch.len() as u64;
        let report = StepReport {
            step: self.state.t,
            loss,
            wall_seconds: self.wall_offset + self.started.elapsed().as_secs_f64(),
        };
        if let Some(stem) = self.checkpoint_stem.clone() {
            if self.cfg.checkpoint_every > 0 && self.state.t % self.cfg.checkpoint_every == 0 {
                self.save_checkpoint(&stem)?;
            }
        }
        Ok(report)
    }

    /// Runs until `cfg.steps` steps have been taken in total.
    pub fn run(&mut self, mut on_step: impl FnMut(&StepReport) -> Result<()>) -> Result<()> {
        while self.state.t < self.cfg.steps {
            let r = self.train_step()?;
            on_step(&r)?;
        }
        Ok(())
    }

    /// Writes model then optimizer state, each atomically. Returns the model path.
    pub fn save_checkpoint(&mut self, stem: &Path) -> Result<PathBuf> {
        let (model_path, opt_path) = checkpoint_paths(stem);
        let bytes = encode_model(&self.params);
        binio::write_atomic(&model_path, &bytes)?;
        let ck = OptimizerCheckpoint {
            fingerprint: self.params.arch().fingerprint(),
            model_crc: body_crc(&bytes),
            seed: self.cfg.seed,
            cursor: self.cursor,
            state: self.state.clone(),
        };
        save_optimizer(&ck, &opt_path)?;
        self.last_checkpoint = Some(model_path.clone());
        Ok(model_path)
    }
}

/// Per-step loss rows, written as `step,loss,wall_seconds`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossHistory {
    pub rows: Vec<StepReport>,
}

impl LossHistory {
    pub fn push(&mut self, r: StepReport) {
        self.rows.push(r);
    }

    /// Drops rows after `step`, e.g. those logged past the checkpoint a run resumes from.
    pub fn truncate_after(&mut self, step: u64) {
        self.rows.retain(|r| r.step <= step);
    }

    pub fn last_wall_seconds(&self) -> f64 {
        self.rows.last().map_or(0.0, |r| r.wall_seconds)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,loss,wall_seconds\n");
        for r in &self.rows {
            s.push_str(&format!("{},{:e},{:.3}\n", r.step, r.loss, r.wall_seconds));
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        binio::write_atomic(path, self.to_csv().as_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = String::from_utf8(binio::read_file(path)?)
            .map_err(|_| Error::format("loss log", "not UTF-8"))?;
        let mut rows = Vec::new();
        for (n, line) in text.lines().enumerate().skip(1) {
            let bad = || Error::format("loss log", format!("line {}: {line:?}", n + 1));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 3 {
                return Err(bad());
            }
            rows.push(StepReport {
                step: f[0].parse().map_err(|_| bad())?,
                loss: f[1].parse().map_err(|_| bad())?,
                wall_seconds: f[2].parse().map_err(|_| bad())?,
            });
        }
        Ok(LossHistory { rows })
    }
}
