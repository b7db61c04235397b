//! CSV and JSON output.

use std::path::Path;

use serde::Serialize;

use crate::error::Result;
use crate::harness::MetricsRecord;

/// One CSV row per record; nested values are flattened to JSON strings.
pub fn write_records_csv(records: &[MetricsRecord], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["variant", "seed", "clip_count", "psnr_c", "ssim_c", "match_acc"])?;
    for r in records {
        w.write_record([
            r.variant.clone(),
            r.seed.to_string(),
            r.clip_count.to_string(),
            r.psnr_c.to_string(),
            r.ssim_c.to_string(),
            r.match_acc.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Any flat serializable rows as CSV.
pub fn write_csv<T: Serialize>(rows: &[T], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize + ?Sized>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, serde_json::to_vec_pretty(value)?)?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Summary {
    pub variant: String,
    pub clip_count: usize,
    pub n: usize,
    pub psnr_c: f64,
    pub ssim_c: f64,
    pub match_acc: f64,
}

/// Means per (variant, clip count), in first-seen order.
pub fn summarize(records: &[MetricsRecord]) -> Vec<Summary> {
    let mut keys: Vec<(String, usize)> = Vec::new();
    for r in records {
        let k = (r.variant.clone(), r.clip_count);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(variant, clip_count)| {
            let rs: Vec<&MetricsRecord> = records
                .iter()
                .filter(|r| r.variant == variant && r.clip_count == clip_count)
                .collect();
            let n = rs.len() as f64;
            Summary {
                psnr_c: rs.iter().map(|r| r.psnr_c).sum::<f64>() / n,
                ssim_c: rs.iter().map(|r| r.ssim_c).sum::<f64>() / n,
                match_acc: rs.iter().map(|r| r.match_acc).sum::<f64>() / n,
                n: rs.len(),
                variant,
                clip_count,
            }
        })
        .collect()
}
