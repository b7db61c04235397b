//! Image metrics: PSNR, SSIM and a patch-matching accuracy score.

use serde::{Deserialize, Serialize};

use scenemem_core::{Raster, RgbImage};

use crate::error::{Error, Result};

/// Reported for identical images.
pub const PSNR_CAP: f64 = 99.0;

fn check_dims(a: &RgbImage, b: &RgbImage) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::Dims(a.dims(), b.dims()));
    }
    if a.width() == 0 || a.height() == 0 {
        return Err(Error::Dims(a.dims(), b.dims()));
    }
    Ok(())
}

pub fn mse(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    check_dims(a, b)?;
    let mut s = 0.0;
    for (x, y) in a.data().iter().zip(b.data()) {
        for k in 0..3 {
            let d = x[k] as f64 - y[k] as f64;
            s += d * d;
        }
    }
    Ok(s / (3 * a.data().len()) as f64)
}

/// `10 log10(1 / MSE)` for images in `[0, 1]`, capped at [`PSNR_CAP`].
pub fn psnr(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / m).log10()).min(PSNR_CAP))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SsimConfig {
    /// Side of the square averaging window, stride 1.
    pub window: usize,
    pub c1: f64,
    pub c2: f64,
}

impl Default for SsimConfig {
    fn default() -> Self {
        Self {
            window: 8,
            c1: 0.01f64.powi(2),
            c2: 0.03f64.powi(2),
        }
    }
}

fn channel(img: &RgbImage, k: usize) -> Vec<f64> {
    img.data().iter().map(|p| p[k] as f64).collect()
}

/// Summed-area table with a zero first row and column.
fn integral(v: &[f64], w: usize, h: usize) -> Vec<f64> {
    let mut t = vec![0.0; (w + 1) * (h + 1)];
    for y in 0..h {
        let mut row = 0.0;
        for x in 0..w {
            row += v[y * w + x];
            t[(y + 1) * (w + 1) + x + 1] = t[y * (w + 1) + x + 1] + row;
        }
    }
    t
}

fn window_sum(t: &[f64], w: usize, x: usize, y: usize, n: usize) -> f64 {
    let s = w + 1;
    t[(y + n) * s + x + n] - t[y * s + x + n] - t[(y + n) * s + x] + t[y * s + x]
}

fn ssim_term(mx: f64, my: f64, vx: f64, vy: f64, cov: f64, cfg: &SsimConfig) -> f64 {
    ((2.0 * mx * my + cfg.c1) * (2.0 * cov + cfg.c2)) / ((mx * mx + my * my + cfg.c1) * (vx + vy + cfg.c2))
}

/// Mean SSIM over every `window x window` placement and the three color
/// channels, with population moments.
pub fn ssim_with(a: &RgbImage, b: &RgbImage, cfg: &SsimConfig) -> Result<f64> {
    check_dims(a, b)?;
    let (w, h) = a.dims();
    let n = cfg.window.min(w).min(h).max(1);
    let area = (n * n) as f64;
    let mut total = 0.0;
    let mut count = 0usize;
    for k in 0..3 {
        let x = channel(a, k);
        let y = channel(b, k);
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
        let [tx, ty, txx, tyy, txy] = [&x, &y, &xx, &yy, &xy].map(|v| integral(v, w, h));
        for py in 0..=h - n {
            for px in 0..=w - n {
                let mx = window_sum(&tx, w, px, py, n) / area;
                let my = window_sum(&ty, w, px, py, n) / area;
                let vx = (window_sum(&txx, w, px, py, n) / area - mx * mx).max(0.0);
                let vy = (window_sum(&tyy, w, px, py, n) / area - my * my).max(0.0);
                let cov = window_sum(&txy, w, px, py, n) / area - mx * my;
                total += ssim_term(mx, my, vx, vy, cov, cfg);
                count += 1;
            }
        }
    }
    Ok(total / count as f64)
}

pub fn ssim(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    ssim_with(a, b, &SsimConfig::default())
}

/// Direct evaluation of every window; slow, used to check [`ssim_with`].
pub fn ssim_naive(a: &RgbImage, b: &RgbImage, cfg: &SsimConfig) -> Result<f64> {
    check_dims(a, b)?;
    let (w, h) = a.dims();
    let n = cfg.window.min(w).min(h).max(1);
    let mut total = 0.0;
    let mut count = 0usize;
    for k in 0..3 {
        for py in 0..=h - n {
            for px in 0..=w - n {
                let mut xs = Vec::with_capacity(n * n);
                let mut ys = Vec::with_capacity(n * n);
                for y in py..py + n {
                    for x in px..px + n {
                        xs.push(a.get(x, y)[k] as f64);
                        ys.push(b.get(x, y)[k] as f64);
                    }
                }
                let m = (n * n) as f64;
                let mx = xs.iter().sum::<f64>() / m;
                let my = ys.iter().sum::<f64>() / m;
                let vx = xs.iter().map(|v| (v - mx).powi(2)).sum::<f64>() / m;
                let vy = ys.iter().map(|v| (v - my).powi(2)).sum::<f64>() / m;
                let cov = xs.iter().zip(&ys).map(|(p, q)| (p - mx) * (q - my)).sum::<f64>() / m;
                total += ssim_term(mx, my, vx, vy, cov, cfg);
                count += 1;
            }
        }
    }
    Ok(total / count as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchConfig {
    pub patch: usize,
    /// Largest offset searched along each axis, in pixels.
    pub radius: usize,
    /// Normalized cross-correlation needed to count a match.
    pub threshold: f64,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            patch: 16,
            radius: 24,
            threshold: 0.8,
        }
    }
}

fn luma(img: &RgbImage) -> Raster<f64> {
    img.map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
}

/// Patch values minus their mean, and the centered norm.
fn centered(img: &Raster<f64>, x0: usize, y0: usize, p: usize) -> (Vec<f64>, f64) {
    let mut v = Vec::with_capacity(p * p);
    for y in y0..y0 + p {
        for x in x0..x0 + p {
            v.push(*img.get(x, y));
        }
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= mean);
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    (v, norm)
}

/// Below this centered norm a patch is flat and takes no part in matching.
const FLAT: f64 = 1e-6;

fn count_matches(first: &Raster<f64>, last: &Raster<f64>, cfg: &MatchConfig) -> usize {
    let (w, h) = first.dims();
    let p = cfg.patch;
    let r = cfg.radius as isize;
    let mut matched = 0;
    for gy in (0..h / p).map(|k| k * p) {
        for gx in (0..w / p).map(|k| k * p) {
            let (a, na) = centered(first, gx, gy, p);
            if na < FLAT {
                continue;
            }
            let mut best = f64::NEG_INFINITY;
            'search: for dy in -r..=r {
                for dx in -r..=r {
                    let (x, y) = (gx as isize + dx, gy as isize + dy);
                    if x < 0 || y < 0 || x as usize + p > w || y as usize + p > h {
                        continue;
                    }
                    let (b, nb) = centered(last, x as usize, y as usize, p);
                    if nb < FLAT {
                        continue;
                    }
                    let ncc = a.iter().zip(&b).map(|(u, v)| u * v).sum::<f64>() / (na * nb);
                    if ncc > best {
                        best = ncc;
                        if best >= cfg.threshold {
                            break 'search;
                        }
                    }
                }
            }
            if best >= cfg.threshold {
                matched += 1;
            }
        }
    }
    matched
}

/// Patches of `first` (a grid of `patch x patch` tiles) that find a match in
/// `last` within `radius`, divided by the count found matching `first`
/// against itself. An image with no textured patch scores 0.
pub fn match_accuracy_with(first: &RgbImage, last: &RgbImage, cfg: &MatchConfig) -> Result<f64> {
    check_dims(first, last)?;
    if cfg.patch == 0 {
        return Err(Error::Config("patch must be positive".into()));
    }
    let a = luma(first);
    let b = luma(last);
    let own = count_matches(&a, &a, cfg);
    if own == 0 {
        return Ok(0.0);
    }
    Ok(count_matches(&a, &b, cfg) as f64 / own as f64)
}

pub fn match_accuracy(first: &RgbImage, last: &RgbImage) -> Result<f64> {
    match_accuracy_with(first, last, &MatchConfig::default())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(w: usize, h: usize, seed: u64) -> RgbImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        RgbImage::from_fn(w, h, |_, _| [rng.random(), rng.random(), rng.random()])
    }

    #[test]
    fn psnr_closed_forms() {
        let a = noise(16, 8, 1);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP);
        let gray = RgbImage::filled(16, 8, [0.5; 3]);
        let shifted = RgbImage::filled(16, 8, [0.6; 3]);
        assert!((psnr(&gray, &shifted).unwrap() - 20.0).abs() < 1e-5);
        let zero = RgbImage::filled(4, 4, [0.0; 3]);
        let one = RgbImage::filled(4, 4, [1.0; 3]);
        assert_eq!(psnr(&zero, &one).unwrap(), 0.0);
        assert_eq!(psnr(&a, &noise(16, 8, 2)).unwrap(), psnr(&noise(16, 8, 2), &a).unwrap());
        assert!(psnr(&a, &noise(8, 8, 2)).is_err());
    }

    #[test]
    fn ssim_matches_direct_windows() {
        let a = noise(20, 13, 3);
        let b = noise(20, 13, 4);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        for (x, y) in [(&a, &b), (&a, &a.shifted(1, 2, |_, _| [0.2; 3]))] {
            let fast = ssim(x, y).unwrap();
            let slow = ssim_naive(x, y, &SsimConfig::default()).unwrap();
            assert!((fast - slow).abs() < 1e-6, "{fast} vs {slow}");
            assert!((-1.0..=1.0).contains(&fast));
        }
    }

    #[test]
    fn ssim_of_flat_images_reduces_to_luminance() {
        let cfg = SsimConfig::default();
        let a = RgbImage::filled(8, 8, [0.2; 3]);
        let b = RgbImage::filled(8, 8, [0.6; 3]);
        let expect = (2.0 * 0.2 * 0.6 + cfg.c1) / (0.04 + 0.36 + cfg.c1);
        assert!((ssim(&a, &b).unwrap() - expect).abs() < 1e-6);
    }

    #[test]
    fn match_accuracy_self_and_shift() {
        let a = noise(64, 64, 5);
        assert_eq!(match_accuracy(&a, &a).unwrap(), 1.0);
        let cfg = MatchConfig {
            patch: 16,
            radius: 8,
            threshold: 0.8,
        };
        let fill = noise(64, 64, 9);
        let far = a.shifted(12, 0, |x, y| *fill.get(x, y));
        assert_eq!(match_accuracy_with(&a, &far, &cfg).unwrap(), 0.0);
        let flat = RgbImage::filled(32, 32, [0.3; 3]);
        assert_eq!(match_accuracy(&flat, &flat).unwrap(), 0.0);
    }
}
