//! Training loop: subgroup forward passes, loss accumulation, and plain
//! gradient descent (optional momentum) under the cosine-restart schedule.

use std::io::Write;
use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{Graph, Tensor};
use crate::model::{LossBreakdown, Model, ModelConfig};
use crate::scenegen::{generate_scene_with, GenConfig, Scene};

use super::metrics::{accumulate_breakdown, scale_breakdown};
use super::partition::partition_subgroups;
use super::schedule::CosineRestartSchedule;
use super::TrainError;

/// Full training configuration; the documented key set of the config file.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_scenes: usize,
    pub lr: f64,
    pub min_lr: f64,
    pub restart_period: usize,
    pub epochs: usize,
    pub seed: u64,
    /// 0 selects plain gradient descent.
    pub momentum: f64,
    pub max_subgroup: usize,
    pub train_scenes: usize,
    pub eval_scenes: usize,
    pub scene_persons: usize,
    pub model: ModelConfig,
    pub gen: GenConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_scenes: 32,
            lr: 1e-4,
            min_lr: 1e-6,
            restart_period: 50,
            epochs: 60,
            seed: 0,
            momentum: 0.0,
            max_subgroup: 8,
            train_scenes: 32,
            eval_scenes: 8,
            scene_persons: 6,
            model: ModelConfig::default(),
            gen: GenConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.lr <= 0.0 && self.epochs > 0 {
            // A zero lr is allowed (useful for no-op smoke tests) but
            // negative rates are not.
            if self.lr < 0.0 {
                return Err(TrainError::Config("negative learning rate".into()));
            }
        }
        if self.epochs == 0 || self.restart_period == 0 || self.batch_scenes == 0 {
            return Err(TrainError::Config(
                "epochs, restart_period, and batch_scenes must be positive".into(),
            ));
        }
        if self.max_subgroup == 0 {
            return Err(TrainError::Config("max_subgroup must be positive".into()));
        }
        Ok(())
    }

    /// Deterministic per-index scene seed.
    pub fn scene_seed(&self, index: u64) -> u64 {
        // splitmix64 over (seed, index).
        let mut z = self
            .seed
            .wrapping_mul(0x9e37_79b9_7f4a_7c15)
            .wrapping_add(index.wrapping_add(1).wrapping_mul(0xbf58_476d_1ce4_e5b9));
        z ^= z >> 30;
        z = z.wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z ^= z >> 27;
        z = z.wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    pub fn training_pool(&self) -> Result<Vec<Scene>, TrainError> {
        (0..self.train_scenes)
            .map(|i| {
                generate_scene_with(self.scene_persons, self.scene_seed(i as u64), &self.gen)
                    .map_err(TrainError::from)
            })
            .collect()
    }

    pub fn eval_pool(&self) -> Result<Vec<Scene>, TrainError> {
        (0..self.eval_scenes)
            .map(|i| {
                generate_scene_with(
                    self.scene_persons,
                    self.scene_seed(0x4556_4131 + i as u64),
                    &self.gen,
                )
                .map_err(TrainError::from)
            })
            .collect()
    }
}

/// One optimizer step's log record.
#[derive(Clone, Debug, Serialize)]
pub struct StepLog {
    pub step: usize,
    pub lr: f64,
    pub groups: usize,
    pub wall_ms: f64,
    pub loss: LossBreakdown,
}

/// Model plus optimizer state.
pub struct Trainer {
    pub model: Model,
    pub schedule: CosineRestartSchedule,
    pub step: usize,
    momentum: f64,
    max_subgroup: usize,
    velocity: Vec<Tensor>,
}

impl Trainer {
    pub fn new(model: Model, cfg: &TrainConfig) -> Trainer {
        let velocity = model
            .params
            .iter()
            .map(|p| Tensor::zeros(p.value.dims()))
            .collect();
        Trainer {
            schedule: CosineRestartSchedule::new(cfg.lr, cfg.min_lr, cfg.restart_period),
            step: 0,
            momentum: cfg.momentum,
            max_subgroup: cfg.max_subgroup,
            velocity,
            model,
        }
    }

    fn check_finite(breakdown: &LossBreakdown, step: usize) -> Result<(), TrainError> {
        let components = [
            ("reproj", breakdown.reproj),
            ("smpl", breakdown.smpl),
            ("joint", breakdown.joint),
            ("intra_rgb", breakdown.intra_rgb),
            ("intra_depth", breakdown.intra_depth),
            ("intra_pose", breakdown.intra_pose),
            ("cross", breakdown.cross),
            ("total", breakdown.total),
        ];
        for (name, value) in components {
            if !value.is_finite() {
                return Err(TrainError::NonFiniteLoss {
                    component: name.to_string(),
                    step,
                    value,
                });
            }
        }
        Ok(())
    }

    /// Forward over every subgroup of every scene, one gradient update.
    pub fn train_step(&mut self, scenes: &[&Scene]) -> Result<StepLog, TrainError> {
        let started = Instant::now();
        let lr = self.schedule.lr_at(self.step);

        let mut grad_sum: Vec<Tensor> = self
            .model
            .params
            .iter()
            .map(|p| Tensor::zeros(p.value.dims()))
            .collect();
        let mut loss = LossBreakdown::default();
        let mut groups = 0usize;

        for scene in scenes {
            for group in
                partition_subgroups(scene, &self.model.cfg.encoder, self.max_subgroup)
            {
                let mut g = Graph::new();
                let out = self.model.forward_group(&mut g, scene, &group.persons, None)?;
                Self::check_finite(&out.breakdown, self.step)?;
                accumulate_breakdown(&mut loss, &out.breakdown);
                let grads = g.backward(out.total, &self.model.params)?;
                for (acc, grad) in grad_sum.iter_mut().zip(grads.iter()) {
                    acc.add_assign(grad);
                }
                groups += 1;
            }
        }
        if groups == 0 {
            return Err(TrainError::Config("no scenes in batch".into()));
        }
        scale_breakdown(&mut loss, 1.0 / groups as f64);

        if lr != 0.0 {
            let inv = 1.0 / groups as f64;
            for slot in 0..grad_sum.len() {
                let grad = &grad_sum[slot];
                let v = &mut self.velocity[slot];
                for (vi, gi) in v.data_mut().iter_mut().zip(grad.data()) {
                    *vi = self.momentum * *vi + gi * inv;
                }
                let p = self.model.params.at_mut(slot);
                for (pi, vi) in p.value.data_mut().iter_mut().zip(v.data()) {
                    *pi -= lr * vi;
                }
            }
        }

        let log = StepLog {
            step: self.step,
            lr,
            groups,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
            loss,
        };
        self.step += 1;
        Ok(log)
    }
}

/// Runs the full schedule over a generated scene pool, appending one JSON
/// line per step to `log` when given.
pub fn train(
    cfg: &TrainConfig,
    mut log: Option<&mut dyn Write>,
) -> Result<(Trainer, Vec<StepLog>), TrainError> {
    cfg.validate()?;
    let pool = cfg.training_pool()?;
    let model = Model::new(cfg.model.clone())?;
    let mut trainer = Trainer::new(model, cfg);
    let mut logs = Vec::new();

    for epoch in 0..cfg.epochs {
        // Deterministic epoch shuffle.
        let mut order: Vec<usize> = (0..pool.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ ((epoch as u64) << 20));
        for i in (1..order.len()).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        for batch in order.chunks(cfg.batch_scenes) {
            let scenes: Vec<&Scene> = batch.iter().map(|&i| &pool[i]).collect();
            let record = trainer.train_step(&scenes)?;
            if let Some(w) = log.as_deref_mut() {
                serde_json::to_writer(&mut *w, &record).map_err(|e| TrainError::Json {
                    path: "<log>".into(),
                    source: e,
                })?;
                writeln!(w).map_err(|e| TrainError::io(std::path::Path::new("<log>"), e))?;
            }
            logs.push(record);
        }
    }
    Ok((trainer, logs))
}
