//! Trains the toy model and prints the condition ablation and the
//! long-horizon comparison.
//!
//! `cargo run --release -p scenemem-eval --example toy_ablation [config.json] [checkpoint]`

use std::sync::Arc;
use std::time::Instant;

use scenemem_eval::harness::{closed_loop_suite, long_horizon_suite, MetricsRecord};
use scenemem_eval::report::summarize;
use scenemem_eval::ToyConfig;
use scenemem_generator::{checkpoint, ClipGenerator, ConditionSet, FlowGenerator, Model};

fn per_seed(records: &[MetricsRecord], variant: &str, clips: usize) -> Vec<f64> {
    records
        .iter()
        .filter(|r| r.variant == variant && r.clip_count == clips)
        .map(|r| r.psnr_c)
        .collect()
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().collect();
    let cfg: ToyConfig = match args.get(1) {
        Some(p) if p != "-" => serde_json::from_slice(&std::fs::read(p)?)?,
        _ => ToyConfig::default(),
    };
    let t0 = Instant::now();
    let model: Model = match args.get(2).filter(|p| std::path::Path::new(p).exists()) {
        Some(p) => checkpoint::load(p)?.0,
        None => {
            let (model, logs) = cfg.train(|stage, i, l| {
                if i % 50 == 0 {
                    eprintln!("{stage:?} {i} {l:.4} ({:.0}s)", t0.elapsed().as_secs_f64());
                }
            })?;
            for l in &logs {
                eprintln!(
                    "{:?}: first {:.4} last {:.4}",
                    l.stage,
                    l.losses[..10.min(l.losses.len())].iter().sum::<f64>() / 10.0,
                    l.tail_mean(50)
                );
            }
            if let Some(p) = args.get(2) {
                checkpoint::save(&model, serde_json::to_value(&cfg)?, p)?;
            }
            model
        }
    };
    eprintln!("model ready after {:.0}s", t0.elapsed().as_secs_f64());
    let model = Arc::new(model);
    let make = |c: ConditionSet, name: &str| FlowGenerator::new(model.clone(), cfg.sample_steps, c).with_name(name);
    let both = make(ConditionSet::ALL, "both");
    let scene = make(ConditionSet::SCENE_ONLY, "scene");
    let refs = make(ConditionSet::REFS_ONLY, "refs");
    let none = make(ConditionSet::NONE, "none");
    let seeds: Vec<u64> = (0..20).collect();
    let gens: Vec<&dyn ClipGenerator> = vec![&both, &scene, &refs, &none];
    let recs = closed_loop_suite(&cfg.protocol, &gens, &seeds)?;
    for s in summarize(&recs) {
        println!(
            "{:6} clips {} psnr {:.2} ssim {:.3} match {:.3}",
            s.variant, s.clip_count, s.psnr_c, s.ssim_c, s.match_acc
        );
    }
    let (b, sc, n) = (
        per_seed(&recs, "both", 2),
        per_seed(&recs, "scene", 2),
        per_seed(&recs, "none", 2),
    );
    let ordered = (0..b.len()).filter(|&i| b[i] > sc[i] && sc[i] > n[i]).count();
    let gap = (0..b.len()).map(|i| b[i] - n[i]).sum::<f64>() / b.len() as f64;
    println!("ordering holds on {ordered}/{} seeds, mean gap {gap:.2} dB", b.len());
    println!(
        "both>scene {} scene>none {}",
        (0..b.len()).filter(|&i| b[i] > sc[i]).count(),
        (0..b.len()).filter(|&i| sc[i] > n[i]).count()
    );
    eprintln!("ablation done after {:.0}s", t0.elapsed().as_secs_f64());

    let gens: Vec<&dyn ClipGenerator> = vec![&both, &none];
    let recs = long_horizon_suite(&cfg.protocol, &gens, &seeds, 6)?;
    for s in summarize(&recs) {
        println!("{:6} clips {} psnr {:.2}", s.variant, s.clip_count, s.psnr_c);
    }
    let drop = |v: &str| -> Vec<f64> {
        let a = per_seed(&recs, v, 2);
        let z = per_seed(&recs, v, 6);
        a.iter().zip(&z).map(|(x, y)| x - y).collect()
    };
    let (dm, dn) = (drop("both"), drop("none"));
    let wins = dm.iter().zip(&dn).filter(|(m, n)| m < n).count();
    println!(
        "memory drop smaller on {wins}/{} seeds (mean {:.2} vs {:.2})",
        dm.len(),
        dm.iter().sum::<f64>() / 20.0,
        dn.iter().sum::<f64>() / 20.0
    );
    eprintln!("total {:.0}s", t0.elapsed().as_secs_f64());
    Ok(())
}
