//! Conditional noise-prediction training with Adam, per-epoch JSON-lines
//! logging and periodic checkpoints.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{Array3, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::denoiser::{save_checkpoint, CheckpointConfig, Denoiser, DenoiserConfig, Params};
use crate::diffusion::{forward_sample, NoiseSchedule, ScheduleConfig};
use crate::error::{Error, Result};
use crate::simulate::PairedSample;

pub const TRAINING_LOG: &str = "training_log.jsonl";
pub const CHECKPOINT_DIR: &str = "checkpoint";

/// Mean squared noise-prediction error.
pub fn loss(eps: ArrayView2<'_, f32>, eps_hat: ArrayView2<'_, f32>) -> Result<f64> {
    if eps.dim() != eps_hat.dim() {
        return Err(Error::validation(format!(
            "loss shapes differ: {:?} vs {:?}",
            eps.dim(),
            eps_hat.dim()
        )));
    }
    let n = eps.len() as f64;
    Ok(eps
        .iter()
        .zip(eps_hat.iter())
        .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
        .sum::<f64>()
        / n)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Stop after this many optimizer steps even mid-epoch.
    #[serde(default)]
    pub max_steps: Option<usize>,
    pub seed: u64,
    /// Write a checkpoint every this many epochs (and always after the last one).
    #[serde(default)]
    pub checkpoint_every: Option<usize>,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub adam: AdamConfig,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            learning_rate: 2.5e-5,
            batch_size: 12,
            epochs: 1,
            max_steps: None,
            seed: 0,
            checkpoint_every: None,
            schedule: ScheduleConfig::default(),
            adam: AdamConfig::default(),
        }
    }
}

impl TrainingConfig {
    /// A learning rate of zero is accepted and freezes the parameters.
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be >= 0", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.max_steps == Some(0) || self.checkpoint_every == Some(0) {
            return Err(Error::Config("max_steps and checkpoint_every must be >= 1 when set".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam with bias correction over a flat parameter set.
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    lr: f64,
    step: i32,
    m: Params<f32>,
    v: Params<f32>,
}

impl Adam {
    pub fn new(model: &Denoiser<f32>, lr: f64, cfg: AdamConfig) -> Self {
        Adam { cfg, lr, step: 0, m: model.zero_grads(), v: model.zero_grads() }
    }

    pub fn steps_taken(&self) -> i32 {
        self.step
    }

    pub fn update(&mut self, params: &mut Params<f32>, grads: &Params<f32>) {
        self.step += 1;
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let c1 = 1.0 - b1.powi(self.step);
        let c2 = 1.0 - b2.powi(self.step);
        let lr = self.lr as f32;
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grads.iter())
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            *m = (b1 * *m as f64 + (1.0 - b1) * g as f64) as f32;
            *v = (b2 * *v as f64 + (1.0 - b2) * (g as f64).powi(2)) as f32;
            let m_hat = *m as f64 / c1;
            let v_hat = *v as f64 / c2;
            let delta = lr * (m_hat / (v_hat.sqrt() + self.cfg.eps)) as f32;
            // Skipping exact zeros keeps parameters bit-identical, signed zeros included.
            if delta != 0.0 {
                *p -= delta;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub steps: usize,
    pub wall_time_s: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub model: Denoiser<f32>,
    pub records: Vec<TrainingRecord>,
    pub first_batch_loss: f64,
    pub steps: usize,
}

fn check_dataset(dataset: &[PairedSample], side: usize) -> Result<()> {
    if dataset.is_empty() {
        return Err(Error::validation("training dataset is empty"));
    }
    for s in dataset {
        let bad = s.condition.dim() != (side, side) || s.target.dim() != (side, side);
        if bad {
            return Err(Error::validation(format!(
                "{}: slices {:?}/{:?} do not match model side {side}",
                s.case_id,
                s.condition.dim(),
                s.target.dim()
            )));
        }
        let in_unit = s.condition.iter().chain(s.target.iter()).all(|v| (0.0..=1.0).contains(v));
        if !in_unit {
            return Err(Error::validation(format!("{}: values outside [0, 1]", s.case_id)));
        }
    }
    Ok(())
}

/// Train a fresh denoiser in memory.
pub fn train(dataset: &[PairedSample], dcfg: &DenoiserConfig, tcfg: &TrainingConfig) -> Result<TrainOutcome> {
    Trainer::new(dcfg, tcfg)?.run(dataset)
}

/// Train and write the JSON-lines log and checkpoints under `out_dir`.
pub fn train_to_dir(
    dataset: &[PairedSample],
    dcfg: &DenoiserConfig,
    tcfg: &TrainingConfig,
    out_dir: &Path,
) -> Result<TrainOutcome> {
    Trainer::new(dcfg, tcfg)?.with_output(out_dir).run(dataset)
}

pub struct Trainer {
    dcfg: DenoiserConfig,
    tcfg: TrainingConfig,
    sched: NoiseSchedule,
    out_dir: Option<PathBuf>,
    progress: Option<Box<dyn FnMut(usize, f64)>>,
}

impl Trainer {
    pub fn new(dcfg: &DenoiserConfig, tcfg: &TrainingConfig) -> Result<Self> {
        tcfg.validate()?;
        dcfg.validate()?;
        Ok(Trainer {
            dcfg: dcfg.clone(),
            tcfg: tcfg.clone(),
            sched: tcfg.schedule.build()?,
            out_dir: None,
            progress: None,
        })
    }

    pub fn with_output(mut self, dir: &Path) -> Self {
        self.out_dir = Some(dir.to_path_buf());
        self
    }

    /// Called after every optimizer step with the step count and batch loss.
    pub fn with_progress(mut self, f: impl FnMut(usize, f64) + 'static) -> Self {
        self.progress = Some(Box::new(f));
        self
    }

    pub fn checkpoint_config(&self) -> CheckpointConfig {
        CheckpointConfig {
            denoiser: self.dcfg.clone(),
            schedule: self.tcfg.schedule,
            training: serde_json::to_value(&self.tcfg).ok(),
        }
    }

    pub fn run(mut self, dataset: &[PairedSample]) -> Result<TrainOutcome> {
        check_dataset(dataset, self.dcfg.image_side)?;
        let mut model = Denoiser::<f32>::build(&self.dcfg, self.tcfg.seed)?;
        let mut adam = Adam::new(&model, self.tcfg.learning_rate, self.tcfg.adam);
        let mut rng = ChaCha8Rng::seed_from_u64(self.tcfg.seed);
        let side = self.dcfg.image_side;
        let steps_cap = self.tcfg.max_steps.unwrap_or(usize::MAX);
        let start = Instant::now();
        let log_path = match &self.out_dir {
            Some(dir) => {
                fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                let p = dir.join(TRAINING_LOG);
                fs::write(&p, "").map_err(|e| Error::io(&p, e))?;
                Some(p)
            }
            None => None,
        };

        let mut order: Vec<usize> = (0..dataset.len()).collect();
        let mut records = Vec::new();
        let mut step = 0usize;
        let mut first_batch_loss = None;
        'epochs: for epoch in 1..=self.tcfg.epochs {
            order.shuffle(&mut rng);
            let (mut loss_sum, mut batches) = (0.0, 0usize);
            for chunk in order.chunks(self.tcfg.batch_size) {
                if step >= steps_cap {
                    break;
                }
                let n = chunk.len();
                let ts: Vec<usize> = (0..n).map(|_| rng.random_range(1..=self.sched.steps())).collect();
                let eps = Array3::<f32>::from_shape_simple_fn((n, side, side), || rng.sample(StandardNormal));
                let mut x_t = Array3::<f32>::zeros((n, side, side));
                let mut cond = Array3::<f32>::zeros((n, side, side));
                for (i, &idx) in chunk.iter().enumerate() {
                    let s = &dataset[idx];
                    let noised = forward_sample(s.target.view(), ts[i], eps.index_axis(Axis(0), i), &self.sched)?;
                    x_t.index_axis_mut(Axis(0), i).assign(&noised);
                    cond.index_axis_mut(Axis(0), i).assign(&s.condition);
                }
                let (batch_loss, grads) = model.loss_and_gradients(x_t.view(), &ts, cond.view(), eps.view())?;
                if !batch_loss.is_finite() {
                    return Err(Error::TrainingDiverged { epoch, step: step + 1, loss: batch_loss });
                }
                adam.update(model.params_mut(), &grads);
                step += 1;
                first_batch_loss.get_or_insert(batch_loss);
                loss_sum += batch_loss;
                batches += 1;
                if let Some(f) = self.progress.as_mut() {
                    f(step, batch_loss);
                }
            }
            if batches == 0 {
                break 'epochs;
            }
            let record = TrainingRecord {
                epoch,
                mean_loss: loss_sum / batches as f64,
                steps: step,
                wall_time_s: start.elapsed().as_secs_f64(),
            };
            if let Some(p) = &log_path {
                append_record(p, &record)?;
            }
            records.push(record);
            let last = epoch == self.tcfg.epochs || step >= steps_cap;
            let periodic = self.tcfg.checkpoint_every.is_some_and(|k| epoch % k == 0);
            if let Some(dir) = &self.out_dir {
                if last || periodic {
                    save_checkpoint(&dir.join(CHECKPOINT_DIR), &model, &self.checkpoint_config())?;
                }
            }
            if last {
                break;
            }
        }
        Ok(TrainOutcome {
            model,
            records,
            first_batch_loss: first_batch_loss.unwrap_or(f64::NAN),
            steps: step,
        })
    }
}

fn append_record(path: &Path, record: &TrainingRecord) -> Result<()> {
    let line = serde_json::to_string(record).map_err(|e| Error::json(path, e))?;
    let mut f = OpenOptions::new().append(true).create(true).open(path).map_err(|e| Error::io(path, e))?;
    writeln!(f, "{line}").map_err(|e| Error::io(path, e))
}

pub fn read_training_log(path: &Path) -> Result<Vec<TrainingRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::json(path, e)))
        .collect()
}
