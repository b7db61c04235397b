//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Set `SCENEMEM_ACCEPTANCE_CHECKPOINT` to reuse (or create) a trained toy
//! checkpoint instead of training from scratch, and
//! `SCENEMEM_ACCEPTANCE_ONLY=1,2,9` to run a subset.

use std::collections::HashSet;
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use scenemem_core::geometry::back_project;
use scenemem_core::memory::Aabb;
use scenemem_core::render::render_projection;
use scenemem_core::retrieval::{registration, retrieve_references, voxel_iou, Candidate, RetrievalConfig, ViewCloud};
use scenemem_core::synth::{generate_scene, sweep, SceneParams, BACKGROUND_DEPTH};
use scenemem_core::{EditOp, Intrinsics, PointCloud, Pose, Region, RgbImage, Trajectory, Vec2, Vec3};
use scenemem_eval::harness::{closed_loop_suite, long_horizon_suite, scene_density_sweep};
use scenemem_eval::metrics::match_accuracy_with;
use scenemem_eval::{MatchConfig, MetricsRecord, Protocol, ToyConfig, PSNR_CAP};
use scenemem_generator::flow::{mean_squared, standard_normal, FlowState};
use scenemem_generator::train::{loss_and_grads, train_stage, StageConfig};
use scenemem_generator::{
    checkpoint, ClipGenerator, ConditionSet, Conditioning, FlowGenerator, GenerationRequest, Model, ModelConfig,
    ParamGroup, SceneTokens, Stage, TokenizerConfig, TokenizerKind,
};
use scenemem_session::{bundle, step, GeneratorFactory, GeneratorSpec, SessionState, StepRequest};

/// Criteria whose outcome is printed but does not fail the run: the trained
/// toy model trends and the density trend at the default splat radius.
const REPORTED_ONLY: [usize; 3] = [6, 7, 8];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn random_pose(rng: &mut impl Rng) -> Pose {
    let axis = Vec3::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    );
    let axis = if axis.norm() < 1e-3 { Vec3::y() } else { axis };
    let t = Vec3::new(
        rng.random_range(-3.0..3.0),
        rng.random_range(-3.0..3.0),
        rng.random_range(-3.0..3.0),
    );
    Pose::from_axis_angle(axis, rng.random_range(-3.0..3.0), t)
}

fn cloud_of(points: Vec<Vec3>) -> PointCloud {
    let n = points.len();
    PointCloud::new(points, vec![[0.5; 3]; n]).unwrap()
}

fn key_set(points: &[Vec3], d: f64) -> HashSet<[i64; 3]> {
    points
        .iter()
        .map(|p| {
            [
                (p.x / d).floor() as i64,
                (p.y / d).floor() as i64,
                (p.z / d).floor() as i64,
            ]
        })
        .collect()
}

fn set_iou(a: &[Vec3], b: &[Vec3], d: f64) -> f64 {
    let (ka, kb) = (key_set(a, d), key_set(b, d));
    let union = ka.union(&kb).count();
    if union == 0 {
        return 0.0;
    }
    ka.intersection(&kb).count() as f64 / union as f64
}

/// Every target against every candidate, then the selection rule over the
/// probed targets.
fn brute_force_retrieval(targets: &[ViewCloud], candidates: &[Candidate], cfg: &RetrievalConfig) -> Vec<u64> {
    let scores: Vec<Vec<f64>> = targets
        .iter()
        .map(|t| {
            candidates
                .iter()
                .map(|c| {
                    let rel = registration(t, &c.view);
                    let moved: Vec<Vec3> = c.view.cloud.positions.iter().map(|p| rel.apply(p)).collect();
                    set_iou(&t.cloud.positions, &moved, cfg.iou_cube_side)
                })
                .collect()
        })
        .collect();
    let mut out = Vec::new();
    for i in 0..targets.len() {
        if i % cfg.stride != 0 || out.len() == cfg.max_refs {
            continue;
        }
        let mut order: Vec<usize> = (0..candidates.len()).collect();
        order.sort_by(|&a, &b| {
            scores[i][b]
                .partial_cmp(&scores[i][a])
                .unwrap()
                .then(candidates[a].frame_id.cmp(&candidates[b].frame_id))
        });
        let best = order[0];
        if scores[i][best] > cfg.epsilon && !out.contains(&candidates[best].frame_id) {
            out.push(candidates[best].frame_id);
        }
    }
    out
}

fn random_view(world: &[Vec3], rng: &mut impl Rng) -> ViewCloud {
    let center = Vec3::new(
        rng.random_range(-2.0..2.0),
        rng.random_range(-2.0..2.0),
        rng.random_range(-2.0..2.0),
    );
    let radius = rng.random_range(0.8..2.5);
    let pose = random_pose(rng);
    let local: Vec<Vec3> = world
        .iter()
        .filter(|p| (*p - center).norm() < radius)
        .map(|p| pose.apply_inverse(p))
        .collect();
    ViewCloud {
        pose,
        cloud: cloud_of(local),
    }
}

fn criterion_retrieval() -> Outcome {
    let t0 = Instant::now();
    let mut selected = 0;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let world: Vec<Vec3> = (0..1500)
            .map(|_| {
                Vec3::new(
                    rng.random_range(-3.0..3.0),
                    rng.random_range(-3.0..3.0),
                    rng.random_range(-3.0..3.0),
                )
            })
            .collect();
        let n_targets = rng.random_range(1..=9);
        let n_candidates = rng.random_range(1..=20);
        let targets: Vec<ViewCloud> = (0..n_targets).map(|_| random_view(&world, &mut rng)).collect();
        let mut ids: Vec<u64> = (0..n_candidates as u64 * 3).collect();
        ids.shuffle(&mut rng);
        let mut candidates: Vec<Candidate> = ids[..n_candidates]
            .iter()
            .map(|&frame_id| Candidate {
                frame_id,
                view: random_view(&world, &mut rng),
            })
            .collect();
        // Exact copies of a target exercise self-retrieval and ties.
        if rng.random_bool(0.5) {
            let k = rng.random_range(0..n_targets);
            candidates.push(Candidate {
                frame_id: 1000 + seed,
                view: targets[k].clone(),
            });
            candidates.push(Candidate {
                frame_id: 999,
                view: targets[k].clone(),
            });
        }
        let cfg = RetrievalConfig {
            max_refs: rng.random_range(1..=4),
            stride: rng.random_range(1..=4),
            epsilon: rng.random_range(0.0..0.3),
            iou_cube_side: rng.random_range(0.2..0.6),
        };
        let fast = retrieve_references(&targets, &candidates, &cfg).unwrap();
        let slow = brute_force_retrieval(&targets, &candidates, &cfg);
        if fast != slow {
            return outcome(false, format!("instance {seed}: {fast:?} vs brute force {slow:?}"));
        }
        selected += fast.len();
    }
    let secs = t0.elapsed().as_secs_f64();
    outcome(
        secs < 60.0,
        format!("100 instances identical to brute force ({selected} references) in {secs:.1}s"),
    )
}

fn criterion_iou() -> Outcome {
    let mut worst_sym = 0.0f64;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let d = rng.random_range(0.05..0.5);
        let mut pts = |n: usize, lo: f64, hi: f64| -> Vec<Vec3> {
            (0..n)
                .map(|_| {
                    Vec3::new(
                        rng.random_range(lo..hi),
                        rng.random_range(lo..hi),
                        rng.random_range(lo..hi),
                    )
                })
                .collect()
        };
        let shared = pts(200, -1.0, 1.0);
        let mut a = shared.clone();
        a.extend(pts(150, -1.5, 0.5));
        let mut b = shared[..120].to_vec();
        b.extend(pts(150, -0.5, 1.5));
        let (ca, cb) = (cloud_of(a.clone()), cloud_of(b.clone()));
        let fast = voxel_iou(&ca, &cb, d).value();
        let slow = set_iou(&a, &b, d);
        if fast != slow {
            return outcome(false, format!("pair {seed}: {fast} vs set-based {slow}"));
        }
        worst_sym = worst_sym.max((fast - voxel_iou(&cb, &ca, d).value()).abs());
        if voxel_iou(&ca, &ca, d).value() != 1.0 {
            return outcome(false, format!("pair {seed}: IoU(x, x) != 1"));
        }
        let far = cloud_of(a.iter().map(|p| p + Vec3::new(10.0, 0.0, 0.0)).collect());
        if voxel_iou(&ca, &far, d).value() != 0.0 {
            return outcome(false, format!("pair {seed}: disjoint IoU != 0"));
        }
    }
    outcome(
        worst_sym <= 1e-9,
        format!("100 pairs equal set-based IoU; self 1, disjoint 0, asymmetry {worst_sym:e}"),
    )
}

fn criterion_renderer() -> Outcome {
    let intr = Intrinsics::from_fov(96, 72, 1.3).unwrap();
    let (mut checked, mut good, mut bad_invalid) = (0usize, 0usize, 0usize);
    for seed in 0..10u64 {
        let spec = generate_scene(seed, &SceneParams::default()).unwrap();
        let pose = spec.camera_pose(seed as f64 * 0.6, Vec3::new(0.1, 0.05, -0.2));
        let (rgb, depth, _) = spec.render_gt(&pose, &intr, 0.0);
        let mut positions = Vec::new();
        let mut colors = Vec::new();
        for y in 0..intr.height {
            for x in 0..intr.width {
                let z = *depth.get(x, y);
                if z < BACKGROUND_DEPTH {
                    positions.push(back_project(&Vec2::new(x as f64, y as f64), z as f64, &pose, &intr).unwrap());
                    colors.push(*rgb.get(x, y));
                }
            }
        }
        let cloud = PointCloud::new(positions, colors).unwrap();
        let img = render_projection(&cloud, &pose, &intr, 0);
        for y in 0..intr.height {
            for x in 0..intr.width {
                let valid = *img.validity.get(x, y);
                if !valid {
                    if *img.depth.get(x, y) != 0.0 || *img.rgb.get(x, y) != [0.0; 3] {
                        bad_invalid += 1;
                    }
                    continue;
                }
                let z = *depth.get(x, y) as f64;
                if x == 0 || y == 0 || x + 1 == intr.width || y + 1 == intr.height {
                    continue;
                }
                let smooth = [(0i64, 1i64), (1, 0), (0, -1), (-1, 0)].iter().all(|(dx, dy)| {
                    let n = *depth.get((x as i64 + dx) as usize, (y as i64 + dy) as usize) as f64;
                    n < BACKGROUND_DEPTH as f64 && (n - z).abs() <= 0.05 * z
                });
                if !smooth {
                    continue;
                }
                checked += 1;
                let r = *img.depth.get(x, y) as f64;
                if (r - z).abs() <= 1e-4 * z {
                    good += 1;
                }
            }
        }
    }
    let frac = good as f64 / checked.max(1) as f64;
    outcome(
        frac >= 0.99 && bad_invalid == 0 && checked > 0,
        format!(
            "{good}/{checked} interior pixels within 1e-4 relative depth ({:.3}%), {bad_invalid} nonzero invalid pixels",
            100.0 * frac
        ),
    )
}

fn tiny_config() -> ModelConfig {
    ModelConfig {
        dim: 8,
        heads: 2,
        blocks: 2,
        controlnet_group: 1,
        ffn_mult: 2,
        tokenizer: TokenizerConfig {
            kind: TokenizerKind::Dct,
            patch: 4,
            channels: 6,
            scale: 1.0,
            center: 0.0,
        },
        width: 8,
        height: 4,
        text_vocab: 4,
        text_len: 2,
        lora_rank: 2,
        lora_alpha: 2.0,
        init_seed: 3,
    }
}

fn criterion_gradients() -> Outcome {
    let mut model = Model::new(tiny_config()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let ids: Vec<_> = model.store.iter().map(|(id, _)| id).collect();
    for id in ids {
        let v = model.store.value_mut(id);
        if v.iter().all(|x| *x == 0.0) {
            let noise = standard_normal(v.nrows(), v.ncols(), &mut rng);
            v.zip_mut_with(&noise, |a, n| *a = 0.3 * n);
        }
    }
    let (tpf, c) = (2, 6);
    let cond = Conditioning {
        refs: standard_normal(tpf, c, &mut rng),
        preceding: standard_normal(tpf, c, &mut rng),
        scene: Some(SceneTokens {
            preceding: standard_normal(tpf, c, &mut rng),
            target: standard_normal(2 * tpf, c, &mut rng),
        }),
        instruction: 1,
    };
    let target = standard_normal(2 * tpf, c, &mut rng);
    let x0 = standard_normal(2 * tpf, c, &mut rng);

    let s0 = FlowState::new(&target, x0.clone(), 0.0);
    let s1 = FlowState::new(&target, x0.clone(), 1.0);
    let sm = FlowState::new(&target, x0.clone(), 0.61);
    let u = &target - &x0;
    let identities = s0.x_t == x0 && s1.x_t == target && s0.u_t == u && s1.u_t == u && sm.u_t == u;

    let state = FlowState::new(&target, x0, 0.43);
    let loss = |m: &Model| mean_squared(&m.velocity(&cond, state.x_t.view(), state.t).unwrap(), &state.u_t);
    let (_, grads) = loss_and_grads(&model, &cond, &state).unwrap();
    let h = 1e-5;
    let (mut worst, mut checked) = (0.0f64, 0usize);
    let params: Vec<_> = model.store.iter().map(|(id, p)| (id, p.name.clone())).collect();
    for (id, name) in params {
        let g = grads[id.index()]
            .clone()
            .unwrap_or_else(|| panic!("no gradient for {name}"));
        let g = g.as_standard_layout().to_owned();
        let n = g.len();
        for k in (0..n).step_by((n / 10).max(1)) {
            let orig = model.store.value(id).as_slice().unwrap()[k];
            model.store.value_mut(id).as_slice_mut().unwrap()[k] = orig + h;
            let lp = loss(&model);
            model.store.value_mut(id).as_slice_mut().unwrap()[k] = orig - h;
            let lm = loss(&model);
            model.store.value_mut(id).as_slice_mut().unwrap()[k] = orig;
            let fd = (lp - lm) / (2.0 * h);
            let an = g.as_slice().unwrap()[k];
            let scale = fd.abs().max(an.abs());
            if scale < 1e-7 {
                continue;
            }
            worst = worst.max((fd - an).abs() / scale);
            checked += 1;
        }
    }
    outcome(
        worst <= 1e-4 && identities && checked > 200,
        format!("{checked} entries, worst relative error {worst:.2e}; interpolation identities exact: {identities}"),
    )
}

fn criterion_zero_init(toy: &ToyConfig) -> Outcome {
    let model = Model::new(toy.model.clone()).unwrap();
    let tpf = model.config().tokens_per_frame();
    let c = model.config().tokenizer.channels;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let base = Conditioning {
        refs: standard_normal(2 * tpf, c, &mut rng),
        preceding: standard_normal(2 * tpf, c, &mut rng),
        scene: None,
        instruction: 0,
    };
    let x_t = standard_normal(4 * tpf, c, &mut rng);
    let plain = model.velocity(&base, x_t.view(), 0.3).unwrap();
    let with = |preceding, target| Conditioning {
        scene: Some(SceneTokens { preceding, target }),
        ..base.clone()
    };
    let random = model
        .velocity(
            &with(
                standard_normal(2 * tpf, c, &mut rng),
                standard_normal(4 * tpf, c, &mut rng),
            ),
            x_t.view(),
            0.3,
        )
        .unwrap();
    let zeros = model
        .velocity(
            &with(
                ndarray::Array2::zeros((2 * tpf, c)),
                ndarray::Array2::zeros((4 * tpf, c)),
            ),
            x_t.view(),
            0.3,
        )
        .unwrap();
    let no_op = plain == random && plain == zeros;

    let mut small = toy.clone();
    small.scenes = 3;
    small.videos_per_scene = 1;
    small.splits_per_video = 1;
    let mut model = Model::new(small.model.clone()).unwrap();
    let data = small.dataset(&model).unwrap();
    let sums =
        |m: &Model| [ParamGroup::Backbone, ParamGroup::ControlNet, ParamGroup::Lora].map(|g| m.store.checksum(g));
    let run = |m: &mut Model, stage| {
        let mut cfg = StageConfig::new(stage, 3);
        cfg.batch = 2;
        train_stage(m, &data, &cfg, |_, _| {}).unwrap();
    };
    let s0 = sums(&model);
    run(&mut model, Stage::ControlNet);
    let s1 = sums(&model);
    run(&mut model, Stage::Lora);
    let s2 = sums(&model);
    let stage1 = s1[0] == s0[0] && s1[2] == s0[2] && s1[1] != s0[1];
    let stage2 = s2[0] == s1[0] && s2[1] == s1[1] && s2[2] != s1[2];
    let cn: HashSet<_> = model.param_ids(ParamGroup::ControlNet).into_iter().collect();
    let lora: HashSet<_> = model.param_ids(ParamGroup::Lora).into_iter().collect();
    let backbone: HashSet<_> = model.param_ids(ParamGroup::Backbone).into_iter().collect();
    let disjoint = cn.is_disjoint(&lora) && backbone.is_disjoint(&cn) && backbone.is_disjoint(&lora);
    outcome(
        no_op && stage1 && stage2 && disjoint,
        format!("bit-exact no-op {no_op}; stage 1 moves only ControlNet {stage1}; stage 2 moves only LoRA {stage2}; disjoint {disjoint}"),
    )
}

fn per_seed(records: &[MetricsRecord], variant: &str, clips: usize) -> Vec<f64> {
    let mut rows: Vec<&MetricsRecord> = records
        .iter()
        .filter(|r| r.variant == variant && r.clip_count == clips)
        .collect();
    rows.sort_by_key(|r| r.seed);
    rows.iter().map(|r| r.psnr_c).collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

fn trained_model(toy: &ToyConfig) -> Model {
    let path = std::env::var_os("SCENEMEM_ACCEPTANCE_CHECKPOINT").map(std::path::PathBuf::from);
    if let Some(p) = path.as_ref().filter(|p| p.exists()) {
        let (model, meta) = checkpoint::load(p).unwrap();
        if meta == serde_json::to_value(toy).unwrap() {
            println!("   loaded toy checkpoint {}", p.display());
            return model;
        }
        println!(
            "   checkpoint {} was trained with another config; retraining",
            p.display()
        );
    }
    let t0 = Instant::now();
    let (model, logs) = toy.train(|_, _, _| {}).unwrap();
    for l in &logs {
        println!(
            "   {:?}: loss {:.4} -> {:.4}",
            l.stage.unwrap(),
            mean(&l.losses[..10.min(l.losses.len())]),
            l.tail_mean(50)
        );
    }
    println!("   toy training took {:.0}s", t0.elapsed().as_secs_f64());
    if let Some(p) = path {
        checkpoint::save(&model, serde_json::to_value(toy).unwrap(), p).unwrap();
    }
    model
}

fn criteria_generation(toy: &ToyConfig, model: Model) -> (Outcome, Outcome) {
    let model = Arc::new(model);
    let make = |c: ConditionSet, name: &str| FlowGenerator::new(model.clone(), toy.sample_steps, c).with_name(name);
    let (both, scene, refs, none) = (
        make(ConditionSet::ALL, "both"),
        make(ConditionSet::SCENE_ONLY, "scene"),
        make(ConditionSet::REFS_ONLY, "refs"),
        make(ConditionSet::NONE, "none"),
    );
    let seeds: Vec<u64> = (0..20).collect();
    let gens: Vec<&dyn ClipGenerator> = vec![&both, &scene, &refs, &none];
    let recs = closed_loop_suite(&toy.protocol, &gens, &seeds).unwrap();
    let (b, s, r, n) = (
        per_seed(&recs, "both", 2),
        per_seed(&recs, "scene", 2),
        per_seed(&recs, "refs", 2),
        per_seed(&recs, "none", 2),
    );
    let ordered = (0..b.len()).filter(|&i| b[i] > s[i] && s[i] > n[i]).count();
    let gap = mean(&b) - mean(&n);
    let c6 = outcome(
        ordered * 5 >= b.len() * 4 && gap >= 2.0,
        format!(
            "both > scene > none on {ordered}/20 seeds, gap {gap:.2} dB (PSNR_C both {:.2}, scene {:.2}, refs {:.2}, none {:.2})",
            mean(&b),
            mean(&s),
            mean(&r),
            mean(&n)
        ),
    );

    let gens: Vec<&dyn ClipGenerator> = vec![&both, &none];
    let recs = long_horizon_suite(&toy.protocol, &gens, &seeds, 6).unwrap();
    let drop = |v: &str| -> Vec<f64> {
        per_seed(&recs, v, 2)
            .iter()
            .zip(per_seed(&recs, v, 6))
            .map(|(a, z)| a - z)
            .collect()
    };
    let (dm, dn) = (drop("both"), drop("none"));
    let wins = dm.iter().zip(&dn).filter(|(m, n)| m < n).count();
    let c7 = outcome(
        wins * 5 >= dm.len() * 4,
        format!(
            "memory degrades less on {wins}/20 seeds (mean drop 2->6 clips: memory {:.2} dB, none {:.2} dB)",
            mean(&dm),
            mean(&dn)
        ),
    );
    (c6, c7)
}

fn density_curve(protocol: &Protocol, sides: &[f64]) -> (Vec<f64>, usize) {
    let mut means = vec![0.0; sides.len()];
    let mut monotone_scenes = 0;
    for seed in 0..20u64 {
        let rows = scene_density_sweep(protocol, seed, sides).unwrap();
        if rows.windows(2).all(|w| w[1].psnr <= w[0].psnr) {
            monotone_scenes += 1;
        }
        for (m, r) in means.iter_mut().zip(&rows) {
            *m += r.psnr / 20.0;
        }
    }
    (means, monotone_scenes)
}

fn criterion_density() -> Outcome {
    let base = 0.01;
    let sides: Vec<f64> = [1.0, 3.0, 5.0, 7.0].iter().map(|k| k * base).collect();
    let show = |means: &[f64]| -> String {
        sides
            .iter()
            .zip(means)
            .map(|(d, p)| format!("{d}: {p:.2}"))
            .collect::<Vec<_>>()
            .join(", ")
    };
    let protocol = Protocol::default();
    let (means, scenes) = density_curve(&protocol, &sides);
    let monotone = means.windows(2).all(|w| w[1] <= w[0]);
    let mut points_only = protocol.clone();
    points_only.session.splat_radius = 0;
    let (bare, bare_scenes) = density_curve(&points_only, &sides);
    outcome(
        monotone,
        format!(
            "mean PSNR over 20 scenes at splat radius {} [{}], per-scene monotone {scenes}/20; without splatting [{}], per-scene monotone {bare_scenes}/20",
            protocol.session.splat_radius,
            show(&means),
            show(&bare)
        ),
    )
}

fn criterion_matching() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let img = RgbImage::from_fn(96, 96, |_, _| [rng.random(), rng.random(), rng.random()]);
    let fill = RgbImage::from_fn(96, 96, |x, y| {
        let v = ((x * 31 + y * 17) % 97) as f32 / 96.0;
        [v, 1.0 - v, (v * 7.0) % 1.0]
    });
    let cfg = MatchConfig::default();
    let own = match_accuracy_with(&img, &img, &cfg).unwrap();
    let shifts: Vec<isize> = (0..=40).step_by(4).collect();
    let scores: Vec<f64> = shifts
        .iter()
        .map(|&s| match_accuracy_with(&img, &img.shifted(s, 0, |x, y| *fill.get(x, y)), &cfg).unwrap())
        .collect();
    let non_increasing = scores.windows(2).all(|w| w[1] <= w[0]);
    let beyond_zero = shifts
        .iter()
        .zip(&scores)
        .filter(|(s, _)| **s as usize > cfg.radius)
        .all(|(_, v)| *v == 0.0);
    let listed: Vec<String> = shifts.iter().zip(&scores).map(|(s, v)| format!("{s}:{v:.2}")).collect();
    outcome(
        own == 1.0 && non_increasing && beyond_zero,
        format!(
            "self {own}; shift->accuracy [{}]; radius {} px",
            listed.join(" "),
            cfg.radius
        ),
    )
}

struct Failing(bool);

impl ClipGenerator for Failing {
    fn generate(&self, req: &GenerationRequest, _seed: u64) -> scenemem_generator::Result<Vec<RgbImage>> {
        if self.0 {
            return Err(scenemem_generator::Error::NonFinite("velocity".into()));
        }
        let (w, h) = (req.views[0].intrinsics.width, req.views[0].intrinsics.height);
        Ok(vec![RgbImage::filled(w, h, [f32::NAN; 3]); req.views.len()])
    }

    fn name(&self) -> &str {
        "failing"
    }
}

fn criterion_session(toy: &ToyConfig) -> Outcome {
    let protocol = &toy.protocol;
    let (state, traj) = protocol.setup(1).unwrap();
    let n = state.config.clip_len;
    let clip = Trajectory::new(traj.views()[1..=n].to_vec()).unwrap();
    let before = state.checksum();
    let delete = EditOp::DeleteRegion {
        region: Region::Box(Aabb {
            min: [-10.0; 3],
            max: [10.0; 3],
        }),
    };
    let attempts: Vec<(StepRequest, &dyn ClipGenerator)> = vec![
        (
            StepRequest {
                trajectory: clip.clone(),
                instruction: 0,
                edits: vec![delete.clone()],
            },
            &Failing(true),
        ),
        (
            StepRequest {
                trajectory: clip.clone(),
                instruction: 0,
                edits: vec![delete],
            },
            &Failing(false),
        ),
        (
            StepRequest {
                trajectory: Trajectory::new(traj.views()[1..n].to_vec()).unwrap(),
                instruction: 0,
                edits: vec![],
            },
            &Failing(false),
        ),
        (
            StepRequest {
                trajectory: Trajectory::from_poses(
                    sweep(state.last_pose(), 9.0, 0.0, n + 1)[1..].to_vec(),
                    protocol.intrinsics().unwrap(),
                )
                .unwrap(),
                instruction: 0,
                edits: vec![],
            },
            &Failing(false),
        ),
    ];
    let mut rejected = 0;
    for (req, g) in &attempts {
        if step(&state, req, *g).is_err() && state.checksum() == before {
            rejected += 1;
        }
    }
    let safe = rejected == attempts.len();

    let factory = GeneratorFactory::new();
    let oracle = factory.build(&GeneratorSpec::Oracle, &state).unwrap();
    let (stepped, _) = step(
        &state,
        &StepRequest {
            trajectory: clip,
            instruction: 0,
            edits: vec![],
        },
        oracle.as_ref(),
    )
    .unwrap();
    let first = bundle::export(&stepped);
    let second = bundle::export(&bundle::import(&first).unwrap());
    let round_trip = first == second;

    let mut capped = 0;
    for seed in 0..20u64 {
        let (s, t) = protocol.setup(seed).unwrap();
        let g = factory.build(&GeneratorSpec::Oracle, &s).unwrap();
        let (rec, _) = scenemem_eval::closed_loop_eval(&s, g.as_ref(), &t, &protocol.matching).unwrap();
        if rec.psnr_c == PSNR_CAP {
            capped += 1;
        }
    }
    let _: &SessionState = &stepped;
    outcome(
        safe && round_trip && capped == 20,
        format!(
            "{rejected}/{} failed steps left the checksum unchanged; bundle round trip byte-identical {round_trip} ({} bytes); oracle closed loop capped on {capped}/20 seeds",
            attempts.len(),
            first.len()
        ),
    )
}

fn main() {
    let t0 = Instant::now();
    let toy = ToyConfig::default();
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut report = |k: usize, name: &'static str, o: Outcome| {
        println!(
            "[{}] criterion {k:2} {name}: {} ({:.0}s)",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            t0.elapsed().as_secs_f64()
        );
        results.push((k, name, o));
    };
    let only: Option<Vec<usize>> = std::env::var("SCENEMEM_ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|k| k.trim().parse().ok()).collect());
    let wanted = |k: usize| only.as_ref().is_none_or(|o| o.contains(&k));
    if wanted(1) {
        report(1, "retrieval matches brute force", criterion_retrieval());
    }
    if wanted(2) {
        report(2, "voxel IoU matches set-based IoU", criterion_iou());
    }
    if wanted(3) {
        report(3, "renderer round trip", criterion_renderer());
    }
    if wanted(4) {
        report(4, "flow-matching gradient check", criterion_gradients());
    }
    if wanted(5) {
        report(5, "zero-init no-op and stage partition", criterion_zero_init(&toy));
    }
    if wanted(6) || wanted(7) {
        let (c6, c7) = criteria_generation(&toy, trained_model(&toy));
        report(6, "condition ablation ordering", c6);
        report(7, "long-horizon degradation", c7);
    }
    if wanted(8) {
        report(8, "voxel density trend", criterion_density());
    }
    if wanted(9) {
        report(9, "match accuracy properties", criterion_matching());
    }
    if wanted(10) {
        report(10, "session safety", criterion_session(&toy));
    }

    let passed = results.iter().filter(|r| r.2.pass).count();
    println!("{passed}/{} criteria pass", results.len());
    let hard_failures: Vec<usize> = results
        .iter()
        .filter(|(k, _, o)| !o.pass && !REPORTED_ONLY.contains(k))
        .map(|r| r.0)
        .collect();
    if !hard_failures.is_empty() {
        eprintln!("hard criteria failed: {hard_failures:?}");
        std::process::exit(1);
    }
}
