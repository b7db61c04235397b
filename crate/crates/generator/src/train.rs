//! Staged training: backbone pretraining, ControlNet-only, then LoRA-only.

use std::io::Write;

use ndarray::{s, Array2};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use scenemem_core::synth::TrainingSample;
use scenemem_core::RgbImage;

use crate::autodiff::{ParamGrads, Tape};
use crate::error::{Error, Result};
use crate::flow::{augment_preceding, sample_logit_normal, standard_normal, AugmentConfig, FlowState, TimeSampling};
use crate::model::{Conditioning, Model, SceneTokens};
use crate::params::{accumulate, AdamW, AdamWConfig, ParamGroup};
use crate::tokenizer::Tokenizer;

/// Tokenized training example with every condition present.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedSample {
    pub target: Array2<f64>,
    pub cond: Conditioning,
}

impl PreparedSample {
    pub fn from_frames(
        tok: &Tokenizer,
        target: &[RgbImage],
        preceding: &[RgbImage],
        refs: &[RgbImage],
        scene_preceding: &[RgbImage],
        scene_target: &[RgbImage],
        instruction: u32,
    ) -> Result<Self> {
        Ok(Self {
            target: tok.tokenize(target)?,
            cond: Conditioning {
                refs: tok.tokenize(refs)?,
                preceding: tok.tokenize(preceding)?,
                scene: Some(SceneTokens {
                    preceding: tok.tokenize(scene_preceding)?,
                    target: tok.tokenize(scene_target)?,
                }),
                instruction,
            },
        })
    }

    pub fn from_sample(tok: &Tokenizer, s: &TrainingSample) -> Result<Self> {
        let rgb = |idx: &[usize]| -> Vec<RgbImage> { idx.iter().map(|&i| s.frames[i].rgb.clone()).collect() };
        let proj = |idx: &[usize]| -> Vec<RgbImage> { idx.iter().map(|&i| s.projections[i].rgb.clone()).collect() };
        Self::from_frames(
            tok,
            &rgb(&s.split.target),
            &rgb(&s.split.preceding),
            &rgb(&s.references),
            &proj(&s.split.preceding),
            &proj(&s.split.target),
            s.instruction_id,
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// Main network from scratch; stands in for pretrained weights.
    Backbone,
    ControlNet,
    Lora,
}

impl Stage {
    pub fn group(self) -> ParamGroup {
        match self {
            Stage::Backbone => ParamGroup::Backbone,
            Stage::ControlNet => ParamGroup::ControlNet,
            Stage::Lora => ParamGroup::Lora,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    pub stage: Stage,
    pub steps: usize,
    pub batch: usize,
    pub optimizer: AdamWConfig,
    /// Probability of dropping the scene condition per example.
    pub drop_scene: f64,
    /// Probability of dropping all reference frames per example.
    pub drop_refs: f64,
    /// Probability of keeping only the last preceding frame.
    pub single_preceding: f64,
    pub augment: AugmentConfig,
    pub times: TimeSampling,
    /// Re-copy main blocks into ControlNet blocks before a ControlNet stage.
    pub init_controlnet: bool,
    pub seed: u64,
}

impl StageConfig {
    pub fn new(stage: Stage, steps: usize) -> Self {
        Self {
            stage,
            steps,
            batch: 8,
            optimizer: AdamWConfig::default(),
            drop_scene: 0.0,
            drop_refs: 0.0,
            single_preceding: 0.0,
            augment: AugmentConfig::default(),
            times: TimeSampling::default(),
            init_controlnet: stage == Stage::ControlNet,
            seed: 0,
        }
    }
}

/// Divergence threshold on the batch loss.
pub const MAX_LOSS: f64 = 1e3;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageLog {
    pub stage: Option<Stage>,
    pub losses: Vec<f64>,
    pub grad_norms: Vec<f64>,
}

impl StageLog {
    /// Mean loss over the last `n` steps.
    pub fn tail_mean(&self, n: usize) -> f64 {
        let k = n.min(self.losses.len()).max(1);
        self.losses[self.losses.len().saturating_sub(k)..].iter().sum::<f64>() / k as f64
    }

    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "stage,step,loss,grad_norm")?;
        let name = match self.stage {
            Some(Stage::Backbone) => "backbone",
            Some(Stage::ControlNet) => "controlnet",
            Some(Stage::Lora) => "lora",
            None => "",
        };
        for (i, (l, g)) in self.losses.iter().zip(&self.grad_norms).enumerate() {
            writeln!(w, "{name},{i},{l},{g}")?;
        }
        Ok(())
    }
}

/// The conditioning actually seen by the network for one training example.
fn training_view(
    sample: &PreparedSample,
    stage: Stage,
    cfg: &StageConfig,
    tpf: usize,
    rng: &mut impl Rng,
) -> Conditioning {
    let mut cond = sample.cond.clone();
    if stage == Stage::Backbone || rng.random_bool(cfg.drop_scene.clamp(0.0, 1.0)) {
        cond.scene = None;
    }
    if rng.random_bool(cfg.drop_refs.clamp(0.0, 1.0)) {
        cond.refs = Array2::zeros((0, cond.refs.ncols()));
    }
    if cond.preceding.nrows() > tpf && rng.random_bool(cfg.single_preceding.clamp(0.0, 1.0)) {
        let n = cond.preceding.nrows();
        cond.preceding = cond.preceding.slice(s![n - tpf.., ..]).to_owned();
        if let Some(sc) = cond.scene.as_mut() {
            sc.preceding = sc.preceding.slice(s![n - tpf.., ..]).to_owned();
        }
    }
    let (aug, _) = augment_preceding(&cond.preceding, &cfg.augment, rng);
    cond.preceding = aug;
    cond
}

/// Loss and parameter gradients of one example at a given flow state.
pub fn loss_and_grads(model: &Model, cond: &Conditioning, state: &FlowState) -> Result<(f64, ParamGrads)> {
    let mut tape = Tape::new();
    let v = model.forward_tape(&mut tape, cond, state.x_t.view(), state.t)?;
    let loss = tape.mse(v, state.u_t.clone());
    let value = tape.value(loss)[[0, 0]];
    Ok((value, tape.backward(loss, model.store.len())))
}

/// Draws `t`, `x_0` and the condition view for one example.
pub fn draw_example(
    model: &Model,
    sample: &PreparedSample,
    cfg: &StageConfig,
    rng: &mut impl Rng,
) -> (Conditioning, FlowState) {
    let tpf = model.config().tokens_per_frame();
    let cond = training_view(sample, cfg.stage, cfg, tpf, rng);
    let t = sample_logit_normal(cfg.times.mu, cfg.times.sigma, rng);
    let x0 = standard_normal(sample.target.nrows(), sample.target.ncols(), rng);
    (cond, FlowState::new(&sample.target, x0, t))
}

/// Runs one stage in place; only the stage's parameter group moves.
pub fn train_stage(
    model: &mut Model,
    data: &[PreparedSample],
    cfg: &StageConfig,
    mut on_step: impl FnMut(usize, f64),
) -> Result<StageLog> {
    if data.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    if cfg.batch == 0 {
        return Err(Error::Config("batch must be positive".into()));
    }
    if cfg.stage == Stage::ControlNet && cfg.init_controlnet {
        model.copy_backbone_into_controlnet();
        model.zero_projectors();
    }
    let trainable = model.param_ids(cfg.stage.group());
    if trainable.is_empty() {
        return Err(Error::Config(format!("stage {:?} has no parameters", cfg.stage)));
    }
    let mut opt = AdamW::new(cfg.optimizer.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut log = StageLog {
        stage: Some(cfg.stage),
        ..StageLog::default()
    };
    for step in 0..cfg.steps {
        let jobs: Vec<(usize, u64)> = (0..cfg.batch)
            .map(|_| (rng.random_range(0..data.len()), rng.next_u64()))
            .collect();
        let results: Vec<Result<(f64, ParamGrads)>> = jobs
            .par_iter()
            .map(|&(i, seed)| {
                let mut r = ChaCha8Rng::seed_from_u64(seed);
                let (cond, state) = draw_example(model, &data[i], cfg, &mut r);
                loss_and_grads(model, &cond, &state)
            })
            .collect();
        let mut total = 0.0;
        let mut grads: ParamGrads = vec![None; model.store.len()];
        for r in results {
            let (l, g) = r?;
            total += l;
            accumulate(&mut grads, g);
        }
        let inv = 1.0 / cfg.batch as f64;
        for g in grads.iter_mut().flatten() {
            *g *= inv;
        }
        let loss = total * inv;
        if !loss.is_finite() || loss > MAX_LOSS {
            return Err(Error::Diverged { step, loss });
        }
        let norm = opt.step(&mut model.store, &grads, &trainable);
        log.losses.push(loss);
        log.grad_norms.push(norm);
        on_step(step, loss);
    }
    Ok(log)
}

/// Mean loss over fixed draws, for before/after comparisons.
pub fn evaluate_loss(
    model: &Model,
    data: &[PreparedSample],
    cfg: &StageConfig,
    draws: usize,
    seed: u64,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jobs: Vec<(usize, u64)> = (0..draws).map(|k| (k % data.len(), rng.next_u64())).collect();
    let losses: Vec<Result<f64>> = jobs
        .par_iter()
        .map(|&(i, seed)| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let (cond, state) = draw_example(model, &data[i], cfg, &mut r);
            let v = model.velocity(&cond, state.x_t.view(), state.t)?;
            Ok(crate::flow::mean_squared(&v, &state.u_t))
        })
        .collect();
    let mut s = 0.0;
    for l in losses {
        s += l?;
    }
    Ok(s / draws.max(1) as f64)
}
