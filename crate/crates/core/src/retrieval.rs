//! Reference-frame retrieval by voxel IoU between view-specific clouds.
//!
//! Every probed target view picks the candidate whose registered cloud has
//! the largest occupied-voxel IoU with it; the winner is kept when its score
//! exceeds `epsilon`. Targets are probed at indices `0, stride, 2*stride, ...`
//! and at most `max_refs` distinct frames are returned, in order of first
//! selection.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{transform_cloud, PointCloud, Pose};
use crate::memory::{voxel_key, VoxelKey, DEFAULT_CUBE_SIDE};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalConfig {
    /// Maximum number of reference frames (K).
    pub max_refs: usize,
    /// Target probing stride; the usual setting ties it to `max_refs`.
    pub stride: usize,
    /// A winner is kept only when its overlap is strictly greater.
    pub epsilon: f64,
    pub iou_cube_side: f64,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            max_refs: 7,
            stride: 7,
            epsilon: 0.05,
            iou_cube_side: DEFAULT_CUBE_SIDE,
        }
    }
}

impl RetrievalConfig {
    pub fn with_k(k: usize) -> Self {
        Self {
            max_refs: k,
            stride: k,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_refs == 0 || self.stride == 0 {
            return Err(Error::InvalidConfig("max_refs and stride must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::InvalidConfig(format!("epsilon {} outside [0, 1]", self.epsilon)));
        }
        if !(self.iou_cube_side > 0.0) {
            return Err(Error::InvalidConfig("iou_cube_side must be positive".into()));
        }
        Ok(())
    }
}

/// Overlap score in `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct OverlapScore(pub f64);

impl OverlapScore {
    pub fn value(self) -> f64 {
        self.0
    }
}

/// A view-specific cloud in its camera's coordinates together with the
/// camera-to-world pose used for registration.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewCloud {
    pub pose: Pose,
    pub cloud: PointCloud,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub frame_id: u64,
    pub view: ViewCloud,
}

fn sorted_keys(cloud: &PointCloud, d: f64) -> Vec<VoxelKey> {
    let mut keys: Vec<VoxelKey> = cloud.positions.iter().map(|p| voxel_key(p, d)).collect();
    keys.sort_unstable();
    keys.dedup();
    keys
}

/// IoU of two sorted, deduplicated key lists by a linear merge.
fn merge_iou(a: &[VoxelKey], b: &[VoxelKey]) -> f64 {
    let (mut i, mut j, mut inter) = (0, 0, 0usize);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// `|keys(a) & keys(b)| / |keys(a) | keys(b)|`; two empty clouds score 0.
pub fn voxel_iou(a: &PointCloud, b: &PointCloud, d: f64) -> OverlapScore {
    OverlapScore(merge_iou(&sorted_keys(a, d), &sorted_keys(b, d)))
}

/// Registers `y` into `x`'s frame with `y_to_x`, then scores voxel IoU.
pub fn spatial_overlap(x: &PointCloud, y: &PointCloud, y_to_x: &Pose, d: f64) -> OverlapScore {
    voxel_iou(x, &transform_cloud(y, y_to_x), d)
}

/// Relative pose taking `y`'s camera coordinates to `x`'s.
pub fn registration(x: &ViewCloud, y: &ViewCloud) -> Pose {
    x.pose.inverse().compose(&y.pose)
}

pub fn view_overlap(x: &ViewCloud, y: &ViewCloud, d: f64) -> OverlapScore {
    spatial_overlap(&x.cloud, &y.cloud, &registration(x, y), d)
}

/// Target indices probed by [`retrieve_references`].
pub fn probed_indices(n_targets: usize, stride: usize) -> impl Iterator<Item = usize> {
    (0..n_targets).step_by(stride.max(1))
}

/// Selected frame ids, deduplicated, in order of first selection.
pub fn retrieve_references(targets: &[ViewCloud], candidates: &[Candidate], cfg: &RetrievalConfig) -> Result<Vec<u64>> {
    cfg.validate()?;
    if candidates.is_empty() {
        return Ok(Vec::new());
    }
    let d = cfg.iou_cube_side;
    let probed: Vec<usize> = probed_indices(targets.len(), cfg.stride).collect();
    let mut out: Vec<u64> = Vec::new();
    for i in probed {
        let target = &targets[i];
        let scores: Vec<f64> = candidates
            .par_iter()
            .map(|c| view_overlap(target, &c.view, d).value())
            .collect();
        // Strictly larger wins; equal scores go to the lower frame id.
        let mut best: Option<(f64, u64)> = None;
        for (c, s) in candidates.iter().zip(&scores) {
            let better = match best {
                None => *s > 0.0,
                Some((bs, bid)) => *s > bs || (*s == bs && c.frame_id < bid),
            };
            if better {
                best = Some((*s, c.frame_id));
            }
        }
        if let Some((s, id)) = best {
            if s > cfg.epsilon && !out.contains(&id) {
                out.push(id);
                if out.len() == cfg.max_refs {
                    break;
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec3;

    fn cloud(points: &[[f64; 3]]) -> PointCloud {
        PointCloud::new(
            points.iter().map(|p| Vec3::from(*p)).collect(),
            vec![[0.5; 3]; points.len()],
        )
        .unwrap()
    }

    #[test]
    fn iou_examples() {
        let a = cloud(&[[0.005, 0.005, 0.005], [0.015, 0.005, 0.005]]);
        assert_eq!(voxel_iou(&a, &a, 0.01).value(), 1.0);
        let far = cloud(&[[1.0, 1.0, 1.0]]);
        assert_eq!(voxel_iou(&a, &far, 0.01).value(), 0.0);
        let b = cloud(&[[0.015, 0.005, 0.005], [0.025, 0.005, 0.005]]);
        assert!((voxel_iou(&a, &b, 0.01).value() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(
            voxel_iou(&PointCloud::default(), &PointCloud::default(), 0.01).value(),
            0.0
        );
    }

    #[test]
    fn registered_displacement_scores_one() {
        let x = cloud(&[[0.105, 0.205, 1.005], [0.3, -0.2, 2.0], [-0.5, 0.5, 1.5]]);
        let p = Pose::from_axis_angle(Vec3::new(0.0, 1.0, 0.0), 0.4, Vec3::new(0.3, 0.0, -0.1));
        let y = transform_cloud(&x, &p);
        let s = spatial_overlap(&x, &y, &p.inverse(), 0.01).value();
        assert_eq!(s, 1.0);
        assert_eq!(spatial_overlap(&x, &y, &Pose::identity(), 0.01).value(), 0.0);
    }

    fn view(points: &[[f64; 3]]) -> ViewCloud {
        ViewCloud {
            pose: Pose::identity(),
            cloud: cloud(points),
        }
    }

    #[test]
    fn argmax_with_threshold() {
        // Target occupies 10 voxels; candidates share 1, 6 and 3 of them.
        let t: Vec<[f64; 3]> = (0..10).map(|i| [0.005 + 0.01 * i as f64, 0.005, 0.005]).collect();
        let mk = |n: usize| {
            let mut pts: Vec<[f64; 3]> = t[..n].to_vec();
            pts.extend((0..(10 - n)).map(|i| [0.005 + 0.01 * i as f64, 0.5, 0.005]));
            view(&pts)
        };
        let targets = vec![view(&t)];
        let candidates: Vec<Candidate> = [1, 6, 3]
            .iter()
            .enumerate()
            .map(|(id, n)| Candidate {
                frame_id: id as u64,
                view: mk(*n),
            })
            .collect();
        let scores: Vec<f64> = candidates
            .iter()
            .map(|c| view_overlap(&targets[0], &c.view, 0.01).value())
            .collect();
        assert!(scores[1] > scores[2] && scores[2] > scores[0]);
        let cfg = RetrievalConfig {
            epsilon: 0.2,
            iou_cube_side: 0.01,
            ..RetrievalConfig::default()
        };
        assert_eq!(retrieve_references(&targets, &candidates, &cfg).unwrap(), vec![1]);
        let strict = RetrievalConfig { epsilon: 0.99, ..cfg };
        assert!(retrieve_references(&targets, &candidates, &strict).unwrap().is_empty());
        assert!(retrieve_references(&targets, &[], &cfg).unwrap().is_empty());
    }

    #[test]
    fn ties_go_to_lowest_id() {
        let t = view(&[[0.005, 0.005, 0.005]]);
        let candidates = vec![
            Candidate {
                frame_id: 9,
                view: t.clone(),
            },
            Candidate {
                frame_id: 4,
                view: t.clone(),
            },
        ];
        let cfg = RetrievalConfig {
            iou_cube_side: 0.01,
            ..RetrievalConfig::default()
        };
        assert_eq!(retrieve_references(&[t], &candidates, &cfg).unwrap(), vec![4]);
    }

    #[test]
    fn config_validation() {
        assert!(RetrievalConfig {
            max_refs: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(RetrievalConfig {
            epsilon: 1.5,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(RetrievalConfig {
            iou_cube_side: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }
}
