//! File formats: SPCL point clouds, ASCII PLY, NPY tensors, PNG frames and
//! on-disk training samples.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use npyz::WriterBuilder;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{PointCloud, Pose, Vec3};
use crate::raster::{DepthMap, Mask, Raster, RgbImage};
use crate::synth::{TrainingSample, VideoSplit};

pub const SPCL_MAGIC: &[u8; 4] = b"SPCL";
pub const SPCL_VERSION: u32 = 1;

/// `SPCL` + u32 version + u64 count + `count` records of six little-endian
/// f32 (`x y z r g b`).
pub fn write_spcl(cloud: &PointCloud, mut w: impl Write) -> Result<()> {
    w.write_all(SPCL_MAGIC)?;
    w.write_all(&SPCL_VERSION.to_le_bytes())?;
    w.write_all(&(cloud.len() as u64).to_le_bytes())?;
    let mut buf = Vec::with_capacity(cloud.len() * 24);
    for (p, c) in cloud.positions.iter().zip(&cloud.colors) {
        for v in [p.x as f32, p.y as f32, p.z as f32, c[0], c[1], c[2]] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn spcl_bytes(cloud: &PointCloud) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + cloud.len() * 24);
    write_spcl(cloud, &mut out).expect("writing to a Vec cannot fail");
    out
}

pub fn read_spcl(mut r: impl Read) -> Result<PointCloud> {
    let mut head = [0u8; 16];
    r.read_exact(&mut head)
        .map_err(|_| Error::format("SPCL", "truncated header"))?;
    if &head[..4] != SPCL_MAGIC {
        return Err(Error::format("SPCL", "bad magic"));
    }
    let version = u32::from_le_bytes(head[4..8].try_into().unwrap());
    if version != SPCL_VERSION {
        return Err(Error::format("SPCL", format!("unsupported version {version}")));
    }
    let count = u64::from_le_bytes(head[8..16].try_into().unwrap()) as usize;
    let mut body = Vec::new();
    r.read_to_end(&mut body)?;
    if body.len()
        != count
            .checked_mul(24)
            .ok_or_else(|| Error::format("SPCL", "count overflow"))?
    {
        return Err(Error::format(
            "SPCL",
            format!("expected {} payload bytes, found {}", count * 24, body.len()),
        ));
    }
    let f = |b: &[u8]| f32::from_le_bytes(b.try_into().unwrap());
    let mut cloud = PointCloud::default();
    for rec in body.chunks_exact(24) {
        let v: Vec<f32> = rec.chunks_exact(4).map(f).collect();
        cloud.push(Vec3::new(v[0] as f64, v[1] as f64, v[2] as f64), [v[3], v[4], v[5]]);
    }
    cloud.validate()?;
    Ok(cloud)
}

/// ASCII PLY with float positions and 8-bit colors.
pub fn write_ply(cloud: &PointCloud, mut w: impl Write) -> Result<()> {
    writeln!(w, "ply\nformat ascii 1.0\nelement vertex {}", cloud.len())?;
    writeln!(w, "property float x\nproperty float y\nproperty float z")?;
    writeln!(
        w,
        "property uchar red\nproperty uchar green\nproperty uchar blue\nend_header"
    )?;
    for (p, c) in cloud.positions.iter().zip(&cloud.colors) {
        let [r, g, b] = c.map(to_u8);
        writeln!(w, "{} {} {} {r} {g} {b}", p.x as f32, p.y as f32, p.z as f32)?;
    }
    Ok(())
}

/// Sidecar describing a memory snapshot file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CloudMeta {
    pub cube_side: f64,
    pub points: usize,
    pub format: String,
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn rgb_to_png(img: &RgbImage) -> Result<Vec<u8>> {
    let bytes: Vec<u8> = img.data().iter().flat_map(|c| c.map(to_u8)).collect();
    let buf =
        image::RgbImage::from_raw(img.width() as u32, img.height() as u32, bytes).expect("buffer sized from image");
    let mut out = std::io::Cursor::new(Vec::new());
    buf.write_to(&mut out, image::ImageFormat::Png)?;
    Ok(out.into_inner())
}

pub fn png_to_rgb(bytes: &[u8]) -> Result<RgbImage> {
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img.pixels().map(|p| p.0.map(|v| v as f32 / 255.0)).collect();
    RgbImage::from_vec(w, h, data)
}

pub fn save_png(img: &RgbImage, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, rgb_to_png(img)?)?;
    Ok(())
}

/// One-bit grayscale PNG; set pixels are white.
pub fn mask_to_png(mask: &Mask) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, mask.width() as u32, mask.height() as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::One);
        let mut w = enc.write_header().map_err(|e| Error::format("PNG", e.to_string()))?;
        let row_bytes = mask.width().div_ceil(8);
        let mut data = vec![0u8; row_bytes * mask.height()];
        for y in 0..mask.height() {
            for x in 0..mask.width() {
                if *mask.get(x, y) {
                    data[y * row_bytes + x / 8] |= 0x80 >> (x % 8);
                }
            }
        }
        w.write_image_data(&data)
            .map_err(|e| Error::format("PNG", e.to_string()))?;
    }
    Ok(out)
}

pub fn png_to_mask(bytes: &[u8]) -> Result<Mask> {
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)?.to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Mask::from_vec(w, h, img.pixels().map(|p| p.0[0] > 127).collect())
}

fn npy_bytes<T: npyz::AutoSerialize + Copy>(shape: &[u64], data: &[T]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    let mut w = npyz::WriteOptions::new()
        .default_dtype()
        .shape(shape)
        .writer(&mut out)
        .begin_nd()?;
    w.extend(data.iter().copied())?;
    w.finish()?;
    Ok(out)
}

/// `(H, W)` little-endian f32.
pub fn depth_to_npy(depth: &DepthMap) -> Result<Vec<u8>> {
    npy_bytes(&[depth.height() as u64, depth.width() as u64], depth.data())
}

/// `(H, W, 3)` little-endian f32.
pub fn rgb_to_npy(img: &RgbImage) -> Result<Vec<u8>> {
    npy_bytes(&[img.height() as u64, img.width() as u64, 3], &img.to_interleaved())
}

/// `(H, W)` bool.
pub fn mask_to_npy(mask: &Mask) -> Result<Vec<u8>> {
    npy_bytes(&[mask.height() as u64, mask.width() as u64], mask.data())
}

fn read_npy<T: npyz::Deserialize>(bytes: &[u8], rank: usize) -> Result<(Vec<usize>, Vec<T>)> {
    let npy = npyz::NpyFile::new(bytes)?;
    let shape: Vec<usize> = npy.shape().iter().map(|s| *s as usize).collect();
    if shape.len() != rank {
        return Err(Error::format(
            "NPY",
            format!("expected rank {rank}, got shape {shape:?}"),
        ));
    }
    if npy.order() != npyz::Order::C {
        return Err(Error::format("NPY", "only C order is supported"));
    }
    Ok((shape, npy.into_vec()?))
}

pub fn npy_to_depth(bytes: &[u8]) -> Result<DepthMap> {
    let (shape, data) = read_npy::<f32>(bytes, 2)?;
    Raster::from_vec(shape[1], shape[0], data)
}

pub fn npy_to_mask(bytes: &[u8]) -> Result<Mask> {
    let (shape, data) = read_npy::<bool>(bytes, 2)?;
    Raster::from_vec(shape[1], shape[0], data)
}

pub fn npy_to_rgb(bytes: &[u8]) -> Result<RgbImage> {
    let (shape, data) = read_npy::<f32>(bytes, 3)?;
    if shape[2] != 3 {
        return Err(Error::format("NPY", format!("expected 3 channels, got {}", shape[2])));
    }
    RgbImage::from_interleaved(shape[1], shape[0], &data)
}

/// `manifest.json` of a sample written by [`write_sample`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleManifest {
    pub version: u32,
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    pub split: VideoSplit,
    pub references: Vec<usize>,
    pub cloud_sources: Vec<usize>,
    pub instruction_id: u32,
    pub instruction: String,
}

#[derive(Serialize, Deserialize)]
struct PoseRecord {
    index: usize,
    time: f64,
    pose: Pose,
}

/// Writes a sample as
/// `frames/NNNN.png`, `depth/NNNN.npy`, `masks/NNNN.png`,
/// `projections/NNNN.png`, `validity/NNNN.png`, `scene.spcl`, `poses.json`,
/// `intrinsics.json` and `manifest.json`.
pub fn write_sample(dir: impl AsRef<Path>, sample: &TrainingSample) -> Result<()> {
    let dir = dir.as_ref();
    for sub in ["frames", "depth", "masks", "projections", "validity"] {
        fs::create_dir_all(dir.join(sub))?;
    }
    let mut poses = Vec::with_capacity(sample.frames.len());
    for (i, f) in sample.frames.iter().enumerate() {
        let name = format!("{i:04}");
        fs::write(dir.join("frames").join(format!("{name}.png")), rgb_to_png(&f.rgb)?)?;
        if let Some(d) = &f.depth {
            fs::write(dir.join("depth").join(format!("{name}.npy")), depth_to_npy(d)?)?;
        }
        if let Some(m) = &f.dynamic_mask {
            fs::write(dir.join("masks").join(format!("{name}.png")), mask_to_png(m)?)?;
        }
        let p = &sample.projections[i];
        fs::write(dir.join("projections").join(format!("{name}.png")), rgb_to_png(&p.rgb)?)?;
        fs::write(
            dir.join("validity").join(format!("{name}.png")),
            mask_to_png(&p.validity)?,
        )?;
        poses.push(PoseRecord {
            index: i,
            time: f.time,
            pose: f.pose,
        });
    }
    let mut spcl = fs::File::create(dir.join("scene.spcl"))?;
    write_spcl(&sample.scene_cloud, &mut spcl)?;
    fs::write(dir.join("poses.json"), serde_json::to_vec_pretty(&poses)?)?;
    let first = &sample.frames[0];
    fs::write(
        dir.join("intrinsics.json"),
        serde_json::to_vec_pretty(&first.intrinsics)?,
    )?;
    let manifest = SampleManifest {
        version: 1,
        frames: sample.frames.len(),
        width: first.intrinsics.width,
        height: first.intrinsics.height,
        split: sample.split.clone(),
        references: sample.references.clone(),
        cloud_sources: sample.cloud_sources.clone(),
        instruction_id: sample.instruction_id,
        instruction: crate::synth::INSTRUCTIONS[sample.instruction_id as usize].to_string(),
    };
    fs::write(dir.join("manifest.json"), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(())
}

pub fn read_manifest(dir: impl AsRef<Path>) -> Result<SampleManifest> {
    Ok(serde_json::from_slice(&fs::read(dir.as_ref().join("manifest.json"))?)?)
}
