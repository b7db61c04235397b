use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use scenemem_generator::flow::{standard_normal, FlowState};
use scenemem_generator::train::loss_and_grads;
use scenemem_generator::{Conditioning, Model, ModelConfig, ParamGroup, SceneTokens, TokenizerConfig, TokenizerKind};

fn config() -> ModelConfig {
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
        init_seed: 11,
    }
}

fn setup() -> (Model, Conditioning, FlowState) {
    let mut model = Model::new(config()).unwrap();
    // Give zero-initialized tensors values so every gradient path is live.
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let ids: Vec<_> = model.store.iter().map(|(id, _)| id).collect();
    for id in ids {
        let v = model.store.value_mut(id);
        if v.iter().all(|x| *x == 0.0) {
            v.mapv_inplace(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                0.3 * z
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let tpf = 2;
    let c = 6;
    // L = refs 2 + preceding 2 + target 4 = 8 main tokens, 6 scene tokens.
    let cond = Conditioning {
        refs: standard_normal(tpf, c, &mut rng),
        preceding: standard_normal(tpf, c, &mut rng),
        scene: Some(SceneTokens {
            preceding: standard_normal(tpf, c, &mut rng),
            target: standard_normal(2 * tpf, c, &mut rng),
        }),
        instruction: 2,
    };
    let target = standard_normal(2 * tpf, c, &mut rng);
    let x0 = standard_normal(2 * tpf, c, &mut rng);
    let state = FlowState::new(&target, x0, 0.37);
    (model, cond, state)
}

fn loss(model: &Model, cond: &Conditioning, state: &FlowState) -> f64 {
    let v = model.velocity(cond, state.x_t.view(), state.t).unwrap();
    scenemem_generator::flow::mean_squared(&v, &state.u_t)
}

#[test]
fn analytic_gradients_match_central_differences() {
    let (mut model, cond, state) = setup();
    let (l0, grads) = loss_and_grads(&model, &cond, &state).unwrap();
    assert!((l0 - loss(&model, &cond, &state)).abs() < 1e-12);
    let h = 1e-5;
    let mut worst = 0.0f64;
    let mut checked = 0;
    let mut groups = std::collections::BTreeSet::new();
    let ids: Vec<_> = model
        .store
        .iter()
        .map(|(id, p)| (id, p.name.clone(), p.group))
        .collect();
    for (id, name, group) in ids {
        let g = grads[id.index()]
            .clone()
            .unwrap_or_else(|| panic!("no gradient for {name}"));
        let n = g.len();
        // Every entry of small tensors, a strided subset of large ones.
        let stride = (n / 12).max(1);
        for k in (0..n).step_by(stride) {
            let orig = model.store.value(id).as_slice().unwrap()[k];
            model.store.value_mut(id).as_slice_mut().unwrap()[k] = orig + h;
            let lp = loss(&model, &cond, &state);
            model.store.value_mut(id).as_slice_mut().unwrap()[k] = orig - h;
            let lm = loss(&model, &cond, &state);
            model.store.value_mut(id).as_slice_mut().unwrap()[k] = orig;
            let fd = (lp - lm) / (2.0 * h);
            let an = g.as_standard_layout()[[k / g.ncols(), k % g.ncols()]];
            let scale = fd.abs().max(an.abs());
            if scale < 1e-7 {
                continue;
            }
            let rel = (fd - an).abs() / scale;
            assert!(rel <= 1e-4, "{name}[{k}]: analytic {an} vs numeric {fd} (rel {rel})");
            worst = worst.max(rel);
            checked += 1;
            groups.insert(format!("{group:?}"));
        }
    }
    assert!(checked > 300, "only {checked} entries checked");
    assert_eq!(groups.len(), 3, "all parameter groups covered");
    println!("checked {checked} entries, worst relative error {worst:e}");
}

#[test]
fn gradients_follow_the_zero_init_gates() {
    // With the stock initialization, ControlNet blocks only see gradient
    // through the projector, and LoRA A matrices get none while B is zero.
    let model = Model::new(config()).unwrap();
    let (_, cond, state) = setup();
    let (_, grads) = loss_and_grads(&model, &cond, &state).unwrap();
    for (id, p) in model.store.iter() {
        let g = grads[id.index()].as_ref();
        let norm = g.map_or(0.0, |g: &Array2<f64>| g.iter().map(|x| x * x).sum::<f64>());
        if p.name.ends_with(".proj.w") || p.name.ends_with("lora_b") {
            assert!(norm > 0.0, "{}", p.name);
        }
        if p.group == ParamGroup::ControlNet && !p.name.contains(".proj.") {
            assert_eq!(norm, 0.0, "{}", p.name);
        }
        if p.name.ends_with("lora_a") {
            assert_eq!(norm, 0.0, "{}", p.name);
        }
    }
}
