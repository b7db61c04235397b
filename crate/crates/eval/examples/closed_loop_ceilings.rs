//! Per-seed ceilings of the closed-loop protocol for a saved checkpoint:
//! tokenizer round trip, final projection, final generated frame, first
//! generated frame and a flat mean image, all in PSNR.
//!
//! `cargo run --release -p scenemem-eval --example closed_loop_ceilings toy.smck [steps]`

use std::sync::Arc;

use scenemem_core::Trajectory;
use scenemem_eval::metrics::psnr;
use scenemem_eval::ToyConfig;
use scenemem_generator::{checkpoint, ConditionSet, FlowGenerator};
use scenemem_session::{step, StepRequest};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().collect();
    let cfg = ToyConfig::default();
    let model = Arc::new(checkpoint::load(&args[1])?.0);
    let steps: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(cfg.sample_steps);
    let g = FlowGenerator::new(model.clone(), steps, ConditionSet::ALL);
    let tok = model.tokenizer();
    let mut acc = [0.0; 5];
    for seed in 0..10u64 {
        let (state, traj) = cfg.protocol.setup(seed)?;
        let first = state.archive[0].rgb.clone();
        let rt = &tok.detokenize_frame(tok.tokenize_frame(&first)?.view(), first.width(), first.height())?;
        let n = state.config.clip_len;
        let views = &traj.views()[1..];
        let mut s = state.clone();
        let mut last_proj = None;
        let mut gen_first_clip = 0.0;
        for (k, chunk) in views.chunks(n).enumerate() {
            let req = StepRequest {
                trajectory: Trajectory::new(chunk.to_vec())?,
                instruction: 0,
                edits: vec![],
            };
            let (next, out) = step(&s, &req, &g)?;
            if k == 0 {
                let spec = state.scene.as_ref().unwrap().build()?;
                let v = &chunk[0];
                gen_first_clip = psnr(&out.frames[0], &spec.render_gt(&v.pose, &v.intrinsics, 0.0).0)?;
            }
            last_proj = Some(out.projections.last().unwrap().rgb.clone());
            s = next;
        }
        let gen = &s.archive.last().unwrap().rgb;
        let mean = first
            .data()
            .iter()
            .flat_map(|c| c.iter())
            .map(|x| *x as f64)
            .sum::<f64>()
            / (3 * first.data().len()) as f64;
        let flat = scenemem_core::RgbImage::filled(first.width(), first.height(), [mean as f32; 3]);
        let r = [
            psnr(rt, &first)?,
            psnr(last_proj.as_ref().unwrap(), &first)?,
            psnr(gen, &first)?,
            gen_first_clip,
            psnr(&flat, &first)?,
        ];
        println!(
            "seed {seed}: tokenizer {:.2} projection {:.2} generated {:.2} first-gen {:.2} flat {:.2}",
            r[0], r[1], r[2], r[3], r[4]
        );
        for i in 0..5 {
            acc[i] += r[i] / 10.0;
        }
    }
    println!("mean: {acc:.2?}");
    Ok(())
}
