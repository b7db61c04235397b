use scenemem_core::{CameraView, Trajectory};
use scenemem_eval::harness::{
    by_variant, closed_loop_suite, density_sweep, long_horizon_eval, long_horizon_suite, scene_density_sweep,
};
use scenemem_eval::report::summarize;
use scenemem_eval::{closed_loop_eval, Protocol, ToyConfig, PSNR_CAP};
use scenemem_generator::{ClipGenerator, ConditionSet, FlowGenerator, Model, OracleGenerator};

fn protocol() -> Protocol {
    ToyConfig::default().protocol
}

fn oracle(p: &Protocol, seed: u64) -> OracleGenerator {
    let (state, _) = p.setup(seed).unwrap();
    OracleGenerator {
        scene: state.scene.as_ref().unwrap().build().unwrap(),
    }
}

#[test]
fn oracle_closes_the_loop_exactly() {
    let p = protocol();
    for seed in 0..3 {
        let (state, traj) = p.setup(seed).unwrap();
        let (rec, next) = closed_loop_eval(&state, &oracle(&p, seed), &traj, &p.matching).unwrap();
        assert_eq!(rec.psnr_c, PSNR_CAP);
        assert!((rec.ssim_c - 1.0).abs() < 1e-9);
        assert_eq!(rec.clip_count, 2);
        assert_eq!(rec.seed, seed);
        assert_eq!(next.clip_index, state.clip_index + 2);
    }
}

#[test]
fn two_clip_long_horizon_equals_closed_loop() {
    let p = protocol();
    let (state, traj) = p.setup(4).unwrap();
    let model = Model::new(ToyConfig::default().model).unwrap();
    let g = FlowGenerator::new(model, 2, ConditionSet::ALL).with_name("random");
    let (rec, _) = closed_loop_eval(&state, &g, &traj, &p.matching).unwrap();
    let long = long_horizon_eval(&state, &g, &traj, 2, &p.matching).unwrap();
    assert_eq!(long, vec![rec.clone()]);
    assert!(rec.psnr_c.is_finite() && rec.psnr_c < PSNR_CAP);
    assert!((0.0..=1.0).contains(&rec.match_acc));
    assert_eq!(rec.variant, "random");
}

#[test]
fn suites_cover_every_seed_and_generator() {
    let p = protocol();
    let model = Model::new(ToyConfig::default().model).unwrap();
    let a = FlowGenerator::new(model, 1, ConditionSet::ALL).with_name("a");
    let b = FlowGenerator::new(a.model.clone(), 1, ConditionSet::NONE).with_name("b");
    let gens: Vec<&dyn ClipGenerator> = vec![&a, &b];
    let recs = closed_loop_suite(&p, &gens, &[0, 1, 2]).unwrap();
    assert_eq!(recs.len(), 6);
    assert_eq!(by_variant(&recs, "b", Some(2)).len(), 3);
    let long = long_horizon_suite(&p, &gens, &[5], 4).unwrap();
    let counts: Vec<usize> = by_variant(&long, "a", None).iter().map(|r| r.clip_count).collect();
    assert_eq!(counts, vec![2, 4]);
    let summary = summarize(&long);
    assert_eq!(summary.len(), 4);
    assert!(summary.iter().all(|s| s.n == 1));
}

#[test]
fn malformed_protocols_are_rejected() {
    let p = protocol();
    let (state, traj) = p.setup(0).unwrap();
    let g = oracle(&p, 0);
    let one_way = Trajectory::new(traj.views()[..traj.len() - 1].to_vec()).unwrap();
    assert!(closed_loop_eval(&state, &g, &one_way, &p.matching).is_err());
    assert!(long_horizon_eval(&state, &g, &traj, 3, &p.matching).is_err());
    assert!(long_horizon_eval(&state, &g, &traj, 0, &p.matching).is_err());
    let (other, _) = p.setup(1).unwrap();
    let (_, elsewhere) = p.setup(2).unwrap();
    if !elsewhere.first().pose.approx_eq(other.last_pose(), 1e-9) {
        assert!(closed_loop_eval(&other, &g, &elsewhere, &p.matching).is_err());
    }
}

#[test]
fn density_sweep_validates_and_scores() {
    let p = protocol();
    let rows = scene_density_sweep(&p, 3, &[0.01, 0.05, 0.2]).unwrap();
    assert_eq!(rows.len(), 3);
    assert!(rows[0].points > rows[2].points);
    assert!(rows[0].psnr > rows[2].psnr, "{rows:?}");
    let (state, _) = p.setup(3).unwrap();
    let cloud = state.memory.snapshot();
    let views: Vec<CameraView> = vec![state.archive[0].view];
    let gt = vec![state.archive[0].rgb.clone()];
    assert!(density_sweep(&cloud, &[0.05, 0.01], &views, &gt, 0).is_err());
    assert!(density_sweep(&cloud, &[0.0], &views, &gt, 0).is_err());
    assert!(density_sweep(&cloud, &[0.01], &views, &[], 0).is_err());
}

#[test]
fn toy_config_round_trips_and_builds_a_dataset() {
    let mut cfg = ToyConfig::default();
    let json = serde_json::to_string(&cfg).unwrap();
    assert_eq!(serde_json::from_str::<ToyConfig>(&json).unwrap(), cfg);
    cfg.scenes = 2;
    cfg.videos_per_scene = 1;
    cfg.splits_per_video = 2;
    let model = Model::new(cfg.model.clone()).unwrap();
    let data = cfg.dataset(&model).unwrap();
    assert_eq!(data.len(), 4);
    let c = cfg.model.tokenizer.channels;
    assert!(data.iter().all(|s| s.target.ncols() == c && s.cond.scene.is_some()));
}
