//! Conditional velocity network.
//!
//! Main stream: `[R | P | x_t]` tokens through pre-norm blocks
//! (self-attention, cross-attention to instruction tokens, FFN). Scene
//! stream: `[S_P | S_T]` tokens through one ControlNet block per group of
//! main blocks; after the first main block of each group the group's
//! ControlNet output passes a zero-initialized projector and is added to the
//! `P` and `x_t` rows. Attention is bidirectional over the whole sequence.

use ndarray::{Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::{ParamGroup, ParamId, ParamStore};
use crate::tokenizer::{Tokenizer, TokenizerConfig, TokenizerKind};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub dim: usize,
    pub heads: usize,
    /// Number of main blocks.
    pub blocks: usize,
    /// Main blocks served by one ControlNet block.
    pub controlnet_group: usize,
    pub ffn_mult: usize,
    pub tokenizer: TokenizerConfig,
    pub width: usize,
    pub height: usize,
    pub text_vocab: usize,
    /// Tokens per instruction embedding.
    pub text_len: usize,
    /// LoRA rank on main-block linear maps; 0 disables adapters.
    pub lora_rank: usize,
    pub lora_alpha: f64,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            heads: 4,
            blocks: 8,
            controlnet_group: 4,
            ffn_mult: 4,
            tokenizer: TokenizerConfig {
                kind: TokenizerKind::Dct,
                patch: 16,
                channels: 64,
                scale: 2.0,
                center: 0.5,
            },
            width: 128,
            height: 128,
            text_vocab: 16,
            text_len: 4,
            lora_rank: 8,
            lora_alpha: 8.0,
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.dim == 0 || self.heads == 0 || self.dim % self.heads != 0 {
            return bad(format!(
                "dim {} must be a positive multiple of heads {}",
                self.dim, self.heads
            ));
        }
        if self.blocks == 0 || self.controlnet_group == 0 || self.blocks % self.controlnet_group != 0 {
            return bad(format!(
                "blocks {} must be a positive multiple of controlnet_group {}",
                self.blocks, self.controlnet_group
            ));
        }
        if self.ffn_mult == 0 || self.text_vocab == 0 || self.text_len == 0 {
            return bad("ffn_mult, text_vocab and text_len must be positive".into());
        }
        let p = self.tokenizer.patch;
        if p == 0 || self.width % p != 0 || self.height % p != 0 || self.width == 0 || self.height == 0 {
            return bad(format!(
                "frame {}x{} not divisible by patch {p}",
                self.width, self.height
            ));
        }
        if self.lora_rank > 0 && !(self.lora_alpha > 0.0) {
            return bad("lora_alpha must be positive when adapters are enabled".into());
        }
        Tokenizer::new(self.tokenizer.clone())?;
        Ok(())
    }

    pub fn controlnet_blocks(&self) -> usize {
        self.blocks / self.controlnet_group
    }

    pub fn tokens_per_frame(&self) -> usize {
        (self.width / self.tokenizer.patch) * (self.height / self.tokenizer.patch)
    }
}

/// Scene-projection tokens aligned 1:1 with the `P` and `x_t` rows.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneTokens {
    pub preceding: Array2<f64>,
    pub target: Array2<f64>,
}

/// Everything except the noisy target.
#[derive(Clone, Debug, PartialEq)]
pub struct Conditioning {
    /// Reference-frame tokens, frames stacked; may have zero rows.
    pub refs: Array2<f64>,
    /// Preceding-frame tokens, frames stacked; may have zero rows.
    pub preceding: Array2<f64>,
    pub scene: Option<SceneTokens>,
    pub instruction: u32,
}

#[derive(Clone, Debug)]
struct Linear {
    w: ParamId,
    b: ParamId,
    lora: Option<(ParamId, ParamId)>,
}

#[derive(Clone, Debug)]
struct Block {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    cq: Linear,
    ck: Linear,
    cv: Linear,
    co: Linear,
    f1: Linear,
    f2: Linear,
}

const BLOCK_LINEARS: [&str; 10] = [
    "attn.q", "attn.k", "attn.v", "attn.o", "cross.q", "cross.k", "cross.v", "cross.o", "ffn.1", "ffn.2",
];

#[derive(Clone, Debug)]
struct Ids {
    input: Linear,
    seg: ParamId,
    time1: Linear,
    time2: Linear,
    text: ParamId,
    blocks: Vec<Block>,
    scene_in: Linear,
    scene_seg: ParamId,
    cn: Vec<Block>,
    proj: Vec<Linear>,
    out: Linear,
}

/// Offset so that the last preceding frame always sits at index `FRAME_OFFSET - 1`.
const FRAME_OFFSET: usize = 8;

#[derive(Clone, Debug)]
pub struct Model {
    cfg: ModelConfig,
    pub store: ParamStore,
    tokenizer: Tokenizer,
    ids: Ids,
}

fn sinusoid(pos: f64, dim: usize, max_period: f64) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let freq = (-(max_period.ln()) * i as f64 / half.max(1) as f64).exp();
        out[i] = (pos * freq).sin();
        out[half + i] = (pos * freq).cos();
    }
    out
}

struct Builder<'a> {
    store: ParamStore,
    rng: ChaCha8Rng,
    cfg: &'a ModelConfig,
}

impl Builder<'_> {
    fn normal(&mut self, rows: usize, cols: usize, std: f64) -> Array2<f64> {
        Array2::from_shape_simple_fn((rows, cols), || {
            let z: f64 = StandardNormal.sample(&mut self.rng);
            z * std
        })
    }

    fn linear(&mut self, name: &str, inp: usize, out: usize, group: ParamGroup, lora: bool) -> Linear {
        let w = self.normal(inp, out, 1.0 / (inp as f64).sqrt());
        let w = self.store.add(format!("{name}.w"), w, group);
        let b = self.store.add(format!("{name}.b"), Array2::zeros((1, out)), group);
        let lora = (lora && self.cfg.lora_rank > 0).then(|| {
            let r = self.cfg.lora_rank;
            let a = self.normal(inp, r, 1.0 / (inp as f64).sqrt());
            let a = self.store.add(format!("{name}.lora_a"), a, ParamGroup::Lora);
            let b = self
                .store
                .add(format!("{name}.lora_b"), Array2::zeros((r, out)), ParamGroup::Lora);
            (a, b)
        });
        Linear { w, b, lora }
    }

    fn zero_linear(&mut self, name: &str, inp: usize, out: usize, group: ParamGroup) -> Linear {
        let w = self.store.add(format!("{name}.w"), Array2::zeros((inp, out)), group);
        let b = self.store.add(format!("{name}.b"), Array2::zeros((1, out)), group);
        Linear { w, b, lora: None }
    }

    fn block(&mut self, prefix: &str, group: ParamGroup, lora: bool) -> Block {
        let d = self.cfg.dim;
        let f = d * self.cfg.ffn_mult;
        let mut l = |name: &str, i: usize, o: usize| self.linear(&format!("{prefix}.{name}"), i, o, group, lora);
        Block {
            q: l("attn.q", d, d),
            k: l("attn.k", d, d),
            v: l("attn.v", d, d),
            o: l("attn.o", d, d),
            cq: l("cross.q", d, d),
            ck: l("cross.k", d, d),
            cv: l("cross.v", d, d),
            co: l("cross.o", d, d),
            f1: l("ffn.1", d, f),
            f2: l("ffn.2", f, d),
        }
    }
}

impl Model {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let tokenizer = Tokenizer::new(cfg.tokenizer.clone())?;
        let mut b = Builder {
            store: ParamStore::default(),
            rng: ChaCha8Rng::seed_from_u64(cfg.init_seed),
            cfg: &cfg,
        };
        let (d, c) = (cfg.dim, cfg.tokenizer.channels);
        let bb = ParamGroup::Backbone;
        let input = b.linear("in", c, d, bb, false);
        let seg = b.normal(3, d, 0.5);
        let seg = b.store.add("seg", seg, bb);
        let time1 = b.linear("time.1", d, d, bb, false);
        let time2 = b.linear("time.2", d, d, bb, false);
        let text = b.normal(cfg.text_vocab * cfg.text_len, d, 1.0);
        let text = b.store.add("text", text, bb);
        let blocks = (0..cfg.blocks).map(|i| b.block(&format!("blk{i}"), bb, true)).collect();
        let cg = ParamGroup::ControlNet;
        let scene_in = b.linear("scene_in", c, d, cg, false);
        let scene_seg = b.normal(2, d, 0.5);
        let scene_seg = b.store.add("scene_seg", scene_seg, cg);
        let n_cn = cfg.controlnet_blocks();
        let cn = (0..n_cn).map(|g| b.block(&format!("cn{g}"), cg, false)).collect();
        let proj = (0..n_cn)
            .map(|g| b.zero_linear(&format!("cn{g}.proj"), d, d, cg))
            .collect();
        let out = b.linear("out", d, c, bb, false);
        let store = b.store;
        let mut m = Self {
            ids: Ids {
                input,
                seg,
                time1,
                time2,
                text,
                blocks,
                scene_in,
                scene_seg,
                cn,
                proj,
                out,
            },
            cfg,
            store,
            tokenizer,
        };
        m.copy_backbone_into_controlnet();
        Ok(m)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn tokenizer(&self) -> &Tokenizer {
        &self.tokenizer
    }

    /// Initializes each ControlNet block from the first main block of its
    /// group and the scene input map from the main input map.
    pub fn copy_backbone_into_controlnet(&mut self) {
        let copy = |store: &mut ParamStore, from: &str, to: &str| {
            let src = store.find(from).expect("source parameter");
            let dst = store.find(to).expect("target parameter");
            let v = store.value(src).clone();
            *store.value_mut(dst) = v;
        };
        for g in 0..self.cfg.controlnet_blocks() {
            let src = g * self.cfg.controlnet_group;
            for name in BLOCK_LINEARS {
                for p in ["w", "b"] {
                    copy(
                        &mut self.store,
                        &format!("blk{src}.{name}.{p}"),
                        &format!("cn{g}.{name}.{p}"),
                    );
                }
            }
        }
        copy(&mut self.store, "in.w", "scene_in.w");
        copy(&mut self.store, "in.b", "scene_in.b");
    }

    /// Zeroes every ControlNet projector.
    pub fn zero_projectors(&mut self) {
        for l in &self.ids.proj {
            self.store.value_mut(l.w).fill(0.0);
            self.store.value_mut(l.b).fill(0.0);
        }
    }

    fn linear(&self, tape: &mut Tape, x: Var, l: &Linear) -> Var {
        let mut w = tape.param(&self.store, l.w);
        if let Some((a, b)) = l.lora {
            let va = tape.param(&self.store, a);
            let vb = tape.param(&self.store, b);
            let ab = tape.matmul(va, vb);
            let ab = tape.scale(ab, self.cfg.lora_alpha / self.cfg.lora_rank as f64);
            w = tape.add(w, ab);
        }
        let b = tape.param(&self.store, l.b);
        let y = tape.matmul(x, w);
        tape.add_row(y, b)
    }

    fn attention(&self, tape: &mut Tape, q: Var, k: Var, v: Var) -> Var {
        let d = self.cfg.dim;
        let hd = d / self.cfg.heads;
        let scale = 1.0 / (hd as f64).sqrt();
        let heads: Vec<Var> = (0..self.cfg.heads)
            .map(|h| {
                let (s0, s1) = (h * hd, (h + 1) * hd);
                let qh = tape.slice_cols(q, s0, s1);
                let kh = tape.slice_cols(k, s0, s1);
                let vh = tape.slice_cols(v, s0, s1);
                let sc = tape.matmul_t(qh, kh);
                let sc = tape.scale(sc, scale);
                let p = tape.softmax_rows(sc);
                tape.matmul(p, vh)
            })
            .collect();
        if heads.len() == 1 {
            heads[0]
        } else {
            tape.concat_cols(&heads)
        }
    }

    fn block(&self, tape: &mut Tape, h: Var, text: Var, b: &Block) -> Var {
        let x = tape.layer_norm(h);
        let q = self.linear(tape, x, &b.q);
        let k = self.linear(tape, x, &b.k);
        let v = self.linear(tape, x, &b.v);
        let a = self.attention(tape, q, k, v);
        let a = self.linear(tape, a, &b.o);
        let h = tape.add(h, a);

        let x = tape.layer_norm(h);
        let q = self.linear(tape, x, &b.cq);
        let k = self.linear(tape, text, &b.ck);
        let v = self.linear(tape, text, &b.cv);
        let a = self.attention(tape, q, k, v);
        let a = self.linear(tape, a, &b.co);
        let h = tape.add(h, a);

        let x = tape.layer_norm(h);
        let f = self.linear(tape, x, &b.f1);
        let f = tape.gelu(f);
        let f = self.linear(tape, f, &b.f2);
        tape.add(h, f)
    }

    /// Fixed spatial plus optional frame-index embedding for `frames` frames.
    fn positions(&self, frames: usize, first_index: Option<usize>) -> Array2<f64> {
        let d = self.cfg.dim;
        let gw = self.cfg.width / self.cfg.tokenizer.patch;
        let tpf = self.cfg.tokens_per_frame();
        let mut out = Array2::zeros((frames * tpf, d));
        for f in 0..frames {
            let fe = first_index.map(|i| sinusoid((i + f) as f64, d, 64.0));
            for j in 0..tpf {
                let (gx, gy) = ((j % gw) as f64, (j / gw) as f64);
                let sx = sinusoid(gx, d / 2, 32.0);
                let sy = sinusoid(gy, d - d / 2, 32.0);
                let mut row = out.row_mut(f * tpf + j);
                for k in 0..d {
                    let s = if k < d / 2 { sx[k] } else { sy[k - d / 2] };
                    row[k] = s + fe.as_ref().map_or(0.0, |e| e[k]);
                }
            }
        }
        out
    }

    fn frames_of(&self, rows: usize, what: &str) -> Result<usize> {
        let tpf = self.cfg.tokens_per_frame();
        if rows % tpf != 0 {
            return Err(Error::Shape(format!("{what}: {rows} rows is not a multiple of {tpf}")));
        }
        Ok(rows / tpf)
    }

    fn check_inputs(&self, cond: &Conditioning, x_t: ArrayView2<'_, f64>) -> Result<(usize, usize, usize)> {
        let c = self.cfg.tokenizer.channels;
        for (name, a) in [
            ("refs", cond.refs.view()),
            ("preceding", cond.preceding.view()),
            ("x_t", x_t),
        ] {
            if a.ncols() != c {
                return Err(Error::Shape(format!("{name} has {} channels, expected {c}", a.ncols())));
            }
        }
        let n_r = self.frames_of(cond.refs.nrows(), "refs")?;
        let n_p = self.frames_of(cond.preceding.nrows(), "preceding")?;
        let n_t = self.frames_of(x_t.nrows(), "x_t")?;
        if n_t == 0 {
            return Err(Error::Shape("x_t has no frames".into()));
        }
        if n_p > FRAME_OFFSET {
            return Err(Error::Shape(format!("at most {FRAME_OFFSET} preceding frames")));
        }
        if let Some(s) = &cond.scene {
            if s.preceding.dim() != cond.preceding.dim() || s.target.dim() != x_t.dim() {
                return Err(Error::Shape(format!(
                    "scene tokens {:?}/{:?} must match preceding {:?} and x_t {:?}",
                    s.preceding.dim(),
                    s.target.dim(),
                    cond.preceding.dim(),
                    x_t.dim()
                )));
            }
        }
        if cond.instruction as usize >= self.cfg.text_vocab {
            return Err(Error::OutOfVocab {
                id: cond.instruction,
                vocab: self.cfg.text_vocab,
            });
        }
        Ok((n_r, n_p, n_t))
    }

    /// Instruction tokens `text_len x dim`.
    pub fn embed_instruction(&self, id: u32) -> Result<Array2<f64>> {
        if id as usize >= self.cfg.text_vocab {
            return Err(Error::OutOfVocab {
                id,
                vocab: self.cfg.text_vocab,
            });
        }
        let l = self.cfg.text_len;
        let s = id as usize * l;
        Ok(self
            .store
            .value(self.ids.text)
            .slice(ndarray::s![s..s + l, ..])
            .to_owned())
    }

    fn segment_rows(&self, tape: &mut Tape, seg: ParamId, row: usize, n: usize) -> Var {
        let all = tape.param(&self.store, seg);
        let r = tape.slice_rows(all, row, row + 1);
        let base = tape.constant(Array2::zeros((n, self.cfg.dim)));
        tape.add_row(base, r)
    }

    /// Records the forward pass on `tape`; returns the `x_t`-row velocity.
    pub fn forward_tape(&self, tape: &mut Tape, cond: &Conditioning, x_t: ArrayView2<'_, f64>, t: f64) -> Result<Var> {
        let (n_r, n_p, n_t) = self.check_inputs(cond, x_t)?;
        let tpf = self.cfg.tokens_per_frame();
        let (rows_r, rows_p, rows_t) = (n_r * tpf, n_p * tpf, n_t * tpf);
        let first_p = FRAME_OFFSET - n_p;

        // Time embedding, shared by both streams.
        let te = tape
            .constant(Array2::from_shape_vec((1, self.cfg.dim), sinusoid(1000.0 * t, self.cfg.dim, 10_000.0)).unwrap());
        let te = self.linear(tape, te, &self.ids.time1);
        let te = tape.gelu(te);
        let te = self.linear(tape, te, &self.ids.time2);

        let text_all = tape.param(&self.store, self.ids.text);
        let l = self.cfg.text_len;
        let ti = cond.instruction as usize * l;
        let text = tape.slice_rows(text_all, ti, ti + l);

        let mut pieces = Vec::new();
        let mut pos_parts = Vec::new();
        if rows_r > 0 {
            pieces.push((cond.refs.clone(), 0usize, rows_r));
            pos_parts.push(self.positions(n_r, None));
        }
        if rows_p > 0 {
            pieces.push((cond.preceding.clone(), 1, rows_p));
            pos_parts.push(self.positions(n_p, Some(first_p)));
        }
        pieces.push((x_t.to_owned(), 2, rows_t));
        pos_parts.push(self.positions(n_t, Some(FRAME_OFFSET)));

        let mut embedded = Vec::new();
        for ((tokens, seg, rows), pos) in pieces.into_iter().zip(pos_parts) {
            let x = tape.constant(tokens);
            let x = self.linear(tape, x, &self.ids.input);
            let sg = self.segment_rows(tape, self.ids.seg, seg, rows);
            let x = tape.add(x, sg);
            let p = tape.constant(pos);
            embedded.push(tape.add(x, p));
        }
        let h = if embedded.len() == 1 {
            embedded[0]
        } else {
            tape.concat_rows(&embedded)
        };
        let mut h = tape.add_row(h, te);

        let mut control = match &cond.scene {
            Some(sc) => {
                let mut parts = Vec::new();
                for (tokens, seg, rows, pos) in [
                    (&sc.preceding, 0usize, rows_p, self.positions(n_p, Some(first_p))),
                    (&sc.target, 1, rows_t, self.positions(n_t, Some(FRAME_OFFSET))),
                ] {
                    if rows == 0 {
                        continue;
                    }
                    let x = tape.constant(tokens.clone());
                    let x = self.linear(tape, x, &self.ids.scene_in);
                    let sg = self.segment_rows(tape, self.ids.scene_seg, seg, rows);
                    let x = tape.add(x, sg);
                    let p = tape.constant(pos);
                    parts.push(tape.add(x, p));
                }
                let c = if parts.len() == 1 {
                    parts[0]
                } else {
                    tape.concat_rows(&parts)
                };
                Some(tape.add_row(c, te))
            }
            None => None,
        };

        let group = self.cfg.controlnet_group;
        for (i, blk) in self.ids.blocks.iter().enumerate() {
            h = self.block(tape, h, text, blk);
            if i % group == 0 {
                if let Some(c) = control {
                    let g = i / group;
                    let c = self.block(tape, c, text, &self.ids.cn[g]);
                    control = Some(c);
                    let add = self.linear(tape, c, &self.ids.proj[g]);
                    h = if rows_r > 0 {
                        let head = tape.slice_rows(h, 0, rows_r);
                        let tail = tape.slice_rows(h, rows_r, rows_r + rows_p + rows_t);
                        let tail = tape.add(tail, add);
                        tape.concat_rows(&[head, tail])
                    } else {
                        tape.add(h, add)
                    };
                }
            }
        }
        let start = rows_r + rows_p;
        let ht = tape.slice_rows(h, start, start + rows_t);
        let ht = tape.layer_norm(ht);
        Ok(self.linear(tape, ht, &self.ids.out))
    }

    /// Predicted velocity for the `x_t` rows.
    pub fn velocity(&self, cond: &Conditioning, x_t: ArrayView2<'_, f64>, t: f64) -> Result<Array2<f64>> {
        let mut tape = Tape::new();
        let v = self.forward_tape(&mut tape, cond, x_t, t)?;
        let out = tape.value(v).clone();
        if out.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("velocity at t = {t}")));
        }
        Ok(out)
    }

    pub fn param_ids(&self, group: ParamGroup) -> Vec<ParamId> {
        self.store.ids_in(group)
    }
}
