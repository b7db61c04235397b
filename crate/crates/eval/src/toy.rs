//! Small end-to-end setup: synthetic videos, staged training, and the
//! protocol the trained model is evaluated under.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use scenemem_core::synth::{assemble_sample, generate_scene, out_and_back, SampleConfig};
use scenemem_core::{RetrievalConfig, Trajectory, Vec3};
use scenemem_generator::train::{train_stage, StageConfig};
use scenemem_generator::{Model, ModelConfig, PreparedSample, Stage, StageLog, TokenizerConfig, TokenizerKind};
use scenemem_session::SessionConfig;

use crate::error::Result;
use crate::harness::Protocol;
use crate::metrics::MatchConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyConfig {
    pub model: ModelConfig,
    pub protocol: Protocol,
    /// Training scenes use seeds `scene_offset .. scene_offset + scenes`.
    pub scene_offset: u64,
    pub scenes: usize,
    pub videos_per_scene: usize,
    pub splits_per_video: usize,
    /// Outbound travel is drawn from `lateral * [0.5, 1.5]`, turn likewise.
    pub lateral: f64,
    pub yaw: f64,
    pub stages: Vec<StageConfig>,
    /// Euler steps at evaluation time.
    pub sample_steps: usize,
    pub seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        let retrieval = RetrievalConfig {
            max_refs: 2,
            stride: 2,
            epsilon: 0.05,
            iou_cube_side: 0.1,
        };
        let session = SessionConfig {
            clip_len: 4,
            preceding_len: 2,
            cube_side: 0.02,
            splat_radius: 0,
            retrieval,
            ..SessionConfig::default()
        };
        let protocol = Protocol {
            session,
            width: 32,
            height: 32,
            fov: 1.2,
            lateral: 0.6,
            yaw: 0.5,
            matching: MatchConfig {
                patch: 8,
                radius: 6,
                threshold: 0.8,
            },
            ..Protocol::default()
        };
        let model = ModelConfig {
            dim: 48,
            heads: 4,
            blocks: 4,
            controlnet_group: 1,
            ffn_mult: 2,
            tokenizer: TokenizerConfig {
                kind: TokenizerKind::Dct,
                patch: 8,
                channels: 48,
                scale: 2.0,
                center: 0.5,
            },
            width: 32,
            height: 32,
            text_vocab: 16,
            text_len: 2,
            lora_rank: 4,
            lora_alpha: 4.0,
            init_seed: 7,
        };
        let stage = |stage, steps, lr| {
            let mut s = StageConfig::new(stage, steps);
            s.optimizer.lr = lr;
            s.batch = 8;
            s.drop_refs = 0.3;
            s.drop_scene = 0.3;
            s.single_preceding = 0.2;
            s
        };
        Self {
            model,
            protocol,
            scene_offset: 10_000,
            scenes: 200,
            videos_per_scene: 2,
            splits_per_video: 2,
            lateral: 0.6,
            yaw: 0.5,
            stages: vec![
                stage(Stage::Backbone, 3000, 2e-3),
                StageConfig {
                    drop_scene: 0.1,
                    ..stage(Stage::ControlNet, 5000, 3e-3)
                },
                stage(Stage::Lora, 500, 1e-3),
            ],
            sample_steps: 8,
            seed: 0,
        }
    }
}

impl ToyConfig {
    pub fn sample_config(&self) -> SampleConfig {
        let s = &self.protocol.session;
        SampleConfig {
            target_len: s.clip_len,
            preceding_len: s.preceding_len,
            retrieval: s.retrieval,
            cube_side: s.cube_side,
            splat_radius: s.splat_radius,
            fuse_all_candidates: true,
            frame_interval: s.frame_interval,
        }
    }

    /// Out-and-back training videos over the training scenes, tokenized.
    pub fn dataset(&self, model: &Model) -> Result<Vec<PreparedSample>> {
        let intr = self.protocol.intrinsics()?;
        let sample_cfg = self.sample_config();
        let jobs: Vec<(u64, u64)> = (0..self.scenes as u64)
            .flat_map(|s| (0..self.videos_per_scene as u64).map(move |v| (s, v)))
            .collect();
        let parts: Vec<Result<Vec<PreparedSample>>> = jobs
            .par_iter()
            .map(|&(s, v)| {
                let seed = self.scene_offset + s;
                let spec = generate_scene(seed, &self.protocol.scene)?;
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ (seed << 8) ^ v);
                let heading = rng.random_range(-self.protocol.start_yaw..=self.protocol.start_yaw);
                let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                let lateral = sign * self.lateral * rng.random_range(0.5..1.5);
                let yaw = sign * self.yaw * rng.random_range(0.5..1.5);
                let start = spec.camera_pose(heading, Vec3::zeros());
                let poses = out_and_back(&start, lateral, yaw, self.protocol.session.clip_len);
                let traj = Trajectory::from_poses(poses, intr)?;
                let mut out = Vec::new();
                for _ in 0..self.splits_per_video {
                    let sample = assemble_sample(&spec, &traj, &sample_cfg, &mut rng)?;
                    out.push(PreparedSample::from_sample(model.tokenizer(), &sample)?);
                }
                Ok(out)
            })
            .collect();
        Ok(parts
            .into_iter()
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .flatten()
            .collect())
    }

    /// Builds the dataset and runs every stage in order.
    pub fn train(&self, mut on_step: impl FnMut(Stage, usize, f64)) -> Result<(Model, Vec<StageLog>)> {
        let mut model = Model::new(self.model.clone())?;
        let data = self.dataset(&model)?;
        let mut logs = Vec::new();
        for (k, stage) in self.stages.iter().enumerate() {
            let cfg = StageConfig {
                seed: self.seed.wrapping_add(k as u64),
                ..stage.clone()
            };
            logs.push(train_stage(&mut model, &data, &cfg, |i, l| on_step(cfg.stage, i, l))?);
        }
        Ok((model, logs))
    }
}
