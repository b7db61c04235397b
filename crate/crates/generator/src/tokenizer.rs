//! Fixed patch embedding between RGB frames and token matrices.
//!
//! A frame is cut into `p x p` patches; each patch (flattened as
//! row, column, channel) is mapped by a matrix with orthonormal rows and a
//! constant scale. `Identity` keeps every value; `Dct` keeps the
//! lowest-frequency coefficients of a per-channel 2D DCT-II, which include
//! the patch mean. Pixels are shifted by `-center` before the mapping.

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use scenemem_core::RgbImage;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenizerKind {
    Identity,
    Dct,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenizerConfig {
    pub kind: TokenizerKind,
    pub patch: usize,
    /// Coefficients kept per patch; must equal `3 * patch^2` for `Identity`.
    pub channels: usize,
    pub scale: f64,
    #[serde(default)]
    pub center: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tokenizer {
    cfg: TokenizerConfig,
    /// `channels x 3p^2`, orthonormal rows.
    basis: Array2<f64>,
}

fn dct_basis(p: usize) -> Vec<(usize, Vec<f64>)> {
    // One 1D orthonormal DCT-II vector per frequency.
    let cos = |k: usize, n: usize| -> f64 {
        let a = if k == 0 {
            (1.0 / p as f64).sqrt()
        } else {
            (2.0 / p as f64).sqrt()
        };
        a * (std::f64::consts::PI * (n as f64 + 0.5) * k as f64 / p as f64).cos()
    };
    let mut freqs: Vec<(usize, usize)> = (0..p).flat_map(|u| (0..p).map(move |v| (u, v))).collect();
    freqs.sort_by_key(|&(u, v)| (u + v, u.max(v), u));
    let mut out = Vec::new();
    for (u, v) in freqs {
        for ch in 0..3 {
            let mut row = vec![0.0; 3 * p * p];
            for y in 0..p {
                for x in 0..p {
                    row[(y * p + x) * 3 + ch] = cos(u, y) * cos(v, x);
                }
            }
            out.push((u + v, row));
        }
    }
    out
}

impl Tokenizer {
    pub fn new(cfg: TokenizerConfig) -> Result<Self> {
        let full = 3 * cfg.patch * cfg.patch;
        if cfg.patch == 0 || cfg.channels == 0 || cfg.channels > full {
            return Err(Error::Config(format!(
                "tokenizer needs 1 <= channels <= 3 * patch^2, got channels {} patch {}",
                cfg.channels, cfg.patch
            )));
        }
        if !(cfg.scale > 0.0 && cfg.scale.is_finite()) || !cfg.center.is_finite() {
            return Err(Error::Config(
                "tokenizer scale must be positive and center finite".into(),
            ));
        }
        let basis = match cfg.kind {
            TokenizerKind::Identity => {
                if cfg.channels != full {
                    return Err(Error::Config(format!(
                        "identity tokenizer needs channels = {full}, got {}",
                        cfg.channels
                    )));
                }
                Array2::eye(full)
            }
            TokenizerKind::Dct => {
                let rows = dct_basis(cfg.patch);
                let mut b = Array2::zeros((cfg.channels, full));
                for (i, (_, row)) in rows.into_iter().take(cfg.channels).enumerate() {
                    b.row_mut(i).assign(&ndarray::Array1::from(row));
                }
                b
            }
        };
        Ok(Self { cfg, basis })
    }

    pub fn config(&self) -> &TokenizerConfig {
        &self.cfg
    }

    pub fn channels(&self) -> usize {
        self.cfg.channels
    }

    pub fn basis(&self) -> ArrayView2<'_, f64> {
        self.basis.view()
    }

    pub fn tokens_per_frame(&self, width: usize, height: usize) -> usize {
        (width / self.cfg.patch) * (height / self.cfg.patch)
    }

    fn check_dims(&self, width: usize, height: usize) -> Result<()> {
        let p = self.cfg.patch;
        if width == 0 || height == 0 || width % p != 0 || height % p != 0 {
            return Err(Error::Shape(format!(
                "frame {width}x{height} not divisible by patch {p}"
            )));
        }
        Ok(())
    }

    /// Patch matrix of one frame, `tokens x 3p^2`, row-major over patches.
    fn patches(&self, img: &RgbImage) -> Array2<f64> {
        let p = self.cfg.patch;
        let (gw, gh) = (img.width() / p, img.height() / p);
        let mut out = Array2::zeros((gw * gh, 3 * p * p));
        for py in 0..gh {
            for px in 0..gw {
                let mut row = out.row_mut(py * gw + px);
                for y in 0..p {
                    for x in 0..p {
                        let c = img.get(px * p + x, py * p + y);
                        for ch in 0..3 {
                            row[(y * p + x) * 3 + ch] = c[ch] as f64 - self.cfg.center;
                        }
                    }
                }
            }
        }
        out
    }

    pub fn tokenize_frame(&self, img: &RgbImage) -> Result<Array2<f64>> {
        self.check_dims(img.width(), img.height())?;
        Ok(self.patches(img).dot(&self.basis.t()) * self.cfg.scale)
    }

    /// Tokens of several frames stacked in frame order.
    pub fn tokenize(&self, frames: &[RgbImage]) -> Result<Array2<f64>> {
        let mut parts = Vec::with_capacity(frames.len());
        for f in frames {
            if f.dims() != frames[0].dims() {
                return Err(Error::Shape("frames of one clip must share dimensions".into()));
            }
            parts.push(self.tokenize_frame(f)?);
        }
        if parts.is_empty() {
            return Ok(Array2::zeros((0, self.cfg.channels)));
        }
        let views: Vec<_> = parts.iter().map(|a| a.view()).collect();
        Ok(ndarray::concatenate(Axis(0), &views).expect("equal channel counts"))
    }

    pub fn detokenize_frame(&self, tokens: ArrayView2<'_, f64>, width: usize, height: usize) -> Result<RgbImage> {
        self.check_dims(width, height)?;
        let p = self.cfg.patch;
        let (gw, gh) = (width / p, height / p);
        if tokens.dim() != (gw * gh, self.cfg.channels) {
            return Err(Error::Shape(format!(
                "expected {}x{} tokens, got {:?}",
                gw * gh,
                self.cfg.channels,
                tokens.dim()
            )));
        }
        let patches = (tokens.dot(&self.basis)) / self.cfg.scale;
        let c = self.cfg.center;
        let mut img = RgbImage::black(width, height);
        for py in 0..gh {
            for px in 0..gw {
                let row = patches.row(py * gw + px);
                for y in 0..p {
                    for x in 0..p {
                        let i = (y * p + x) * 3;
                        img.set(
                            px * p + x,
                            py * p + y,
                            [(row[i] + c) as f32, (row[i + 1] + c) as f32, (row[i + 2] + c) as f32],
                        );
                    }
                }
            }
        }
        Ok(img)
    }

    pub fn detokenize(&self, tokens: ArrayView2<'_, f64>, width: usize, height: usize) -> Result<Vec<RgbImage>> {
        self.check_dims(width, height)?;
        let per = self.tokens_per_frame(width, height);
        if tokens.nrows() % per != 0 {
            return Err(Error::Shape(format!(
                "{} tokens is not a whole number of {per}-token frames",
                tokens.nrows()
            )));
        }
        (0..tokens.nrows() / per)
            .map(|k| self.detokenize_frame(tokens.slice(ndarray::s![k * per..(k + 1) * per, ..]), width, height))
            .collect()
    }
}
