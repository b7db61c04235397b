//! Colored boxes and spheres shared by the synthetic scenes and the
//! add-primitive memory edit.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Pose, Vec3};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum Shape {
    /// Full edge lengths along the local axes, meters.
    Box {
        size: [f64; 3],
    },
    Sphere {
        radius: f64,
    },
}

/// Two-tone 3D checkerboard evaluated in the primitive's local frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checker {
    pub color: [f32; 3],
    pub cell: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Material {
    pub color: [f32; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checker: Option<Checker>,
}

impl Material {
    pub fn solid(color: [f32; 3]) -> Self {
        Self { color, checker: None }
    }

    pub fn color_at(&self, local: &Vec3) -> [f32; 3] {
        match &self.checker {
            Some(c) => {
                let parity = (local.x / c.cell).floor() as i64
                    + (local.y / c.cell).floor() as i64
                    + (local.z / c.cell).floor() as i64;
                if parity.rem_euclid(2) == 0 {
                    self.color
                } else {
                    c.color
                }
            }
            None => self.color,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    #[serde(flatten)]
    pub shape: Shape,
    /// Local-to-world transform; the primitive is centered on its local origin.
    #[serde(default)]
    pub pose: Pose,
    pub material: Material,
}

/// Closest ray hit: distance along the (unit) ray and the hit point.
#[derive(Clone, Copy, Debug)]
pub struct Hit {
    pub distance: f64,
    pub point: Vec3,
}

impl Primitive {
    pub fn new(shape: Shape, pose: Pose, material: Material) -> Result<Self> {
        let p = Self { shape, pose, material };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        match &self.shape {
            Shape::Box { size } => {
                if !size.iter().all(|s| *s > 0.0 && s.is_finite()) {
                    return Err(Error::InvalidEdit(format!("box size {size:?} must be positive")));
                }
            }
            Shape::Sphere { radius } => {
                if !(*radius > 0.0 && radius.is_finite()) {
                    return Err(Error::InvalidEdit(format!("sphere radius {radius} must be positive")));
                }
            }
        }
        let colors = std::iter::once(&self.material.color).chain(self.material.checker.as_ref().map(|c| &c.color));
        for c in colors {
            if c.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::InvalidEdit(format!("color {c:?} outside [0, 1]")));
            }
        }
        if let Some(c) = &self.material.checker {
            if !(c.cell > 0.0) {
                return Err(Error::InvalidEdit("checker cell must be positive".into()));
            }
        }
        Ok(())
    }

    /// Axis-aligned world bounds.
    pub fn world_bounds(&self) -> (Vec3, Vec3) {
        match &self.shape {
            Shape::Sphere { radius } => {
                let c = self.pose.center();
                (c.add_scalar(-radius), c.add_scalar(*radius))
            }
            Shape::Box { size } => {
                let half = Vec3::new(size[0], size[1], size[2]) / 2.0;
                let r = self.pose.rotation();
                let extent = r.abs() * half;
                let c = self.pose.center();
                (c - extent, c + extent)
            }
        }
    }

    pub fn color_at(&self, world: &Vec3) -> [f32; 3] {
        self.material.color_at(&self.pose.apply_inverse(world))
    }

    /// Closest intersection with `distance > min_distance` of the ray
    /// `origin + s * dir` (`dir` unit length) with the primitive's surface.
    pub fn intersect(&self, origin: &Vec3, dir: &Vec3, min_distance: f64) -> Option<Hit> {
        let lo = self.pose.apply_inverse(origin);
        let ld = self.pose.rotation().transpose() * dir;
        let distance = match &self.shape {
            Shape::Sphere { radius } => {
                let b = lo.dot(&ld);
                let c = lo.norm_squared() - radius * radius;
                let disc = b * b - c;
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                [-b - sq, -b + sq].into_iter().find(|s| *s > min_distance)?
            }
            Shape::Box { size } => {
                let (near, far) = slab_interval(&lo, &ld, size)?;
                [near, far].into_iter().find(|s| *s > min_distance)?
            }
        };
        Some(Hit {
            distance,
            point: origin + dir * distance,
        })
    }

    /// Points on the surface with spacing at most `spacing` meters.
    pub fn sample_surface(&self, spacing: f64) -> Vec<Vec3> {
        assert!(spacing > 0.0);
        let mut out = Vec::new();
        match &self.shape {
            Shape::Box { size } => {
                let half = [size[0] / 2.0, size[1] / 2.0, size[2] / 2.0];
                for axis in 0..3 {
                    let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
                    let nu = (size[u] / spacing).ceil().max(1.0) as usize;
                    let nv = (size[v] / spacing).ceil().max(1.0) as usize;
                    for sign in [-1.0, 1.0] {
                        for a in 0..nu {
                            for b in 0..nv {
                                let mut p = [0.0; 3];
                                p[axis] = sign * half[axis];
                                p[u] = (a as f64 + 0.5) * size[u] / nu as f64 - half[u];
                                p[v] = (b as f64 + 0.5) * size[v] / nv as f64 - half[v];
                                out.push(self.pose.apply(&Vec3::from(p)));
                            }
                        }
                    }
                }
            }
            Shape::Sphere { radius } => {
                // Fibonacci lattice with roughly one point per spacing^2 of area.
                let area = 4.0 * std::f64::consts::PI * radius * radius;
                let n = (area / (spacing * spacing)).ceil().max(1.0) as usize;
                let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
                for k in 0..n {
                    let z = 1.0 - 2.0 * (k as f64 + 0.5) / n as f64;
                    let r = (1.0 - z * z).sqrt();
                    let phi = golden * k as f64;
                    let local = Vec3::new(r * phi.cos(), r * phi.sin(), z) * *radius;
                    out.push(self.pose.apply(&local));
                }
            }
        }
        out
    }

    /// Signed distance-like containment test in the local frame: true when
    /// the world point is inside the primitive grown by `margin`.
    pub fn contains(&self, world: &Vec3, margin: f64) -> bool {
        let l = self.pose.apply_inverse(world);
        match &self.shape {
            Shape::Sphere { radius } => l.norm() <= radius + margin,
            Shape::Box { size } => (0..3).all(|k| l[k].abs() <= size[k] / 2.0 + margin),
        }
    }
}

/// Entry/exit distances of a ray against a centered box, if it hits.
fn slab_interval(origin: &Vec3, dir: &Vec3, size: &[f64; 3]) -> Option<(f64, f64)> {
    let mut near = f64::NEG_INFINITY;
    let mut far = f64::INFINITY;
    for k in 0..3 {
        let half = size[k] / 2.0;
        if dir[k].abs() < 1e-15 {
            if origin[k].abs() > half {
                return None;
            }
            continue;
        }
        let a = (-half - origin[k]) / dir[k];
        let b = (half - origin[k]) / dir[k];
        let (a, b) = if a < b { (a, b) } else { (b, a) };
        near = near.max(a);
        far = far.min(b);
    }
    (near <= far).then_some((near, far))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_box() -> Primitive {
        Primitive::new(
            Shape::Box { size: [1.0, 1.0, 1.0] },
            Pose::from_translation(Vec3::new(0.0, 0.0, 3.0)),
            Material::solid([1.0, 0.0, 0.0]),
        )
        .unwrap()
    }

    #[test]
    fn ray_box_front_face() {
        let hit = unit_box().intersect(&Vec3::zeros(), &Vec3::z(), 0.0).unwrap();
        assert!((hit.distance - 2.5).abs() < 1e-12);
        // From inside, the exit face is hit.
        let hit = unit_box()
            .intersect(&Vec3::new(0.0, 0.0, 3.0), &Vec3::z(), 0.0)
            .unwrap();
        assert!((hit.distance - 0.5).abs() < 1e-12);
        assert!(unit_box().intersect(&Vec3::zeros(), &-Vec3::z(), 0.0).is_none());
    }

    #[test]
    fn ray_sphere() {
        let s = Primitive::new(
            Shape::Sphere { radius: 0.5 },
            Pose::from_translation(Vec3::new(0.0, 0.0, 2.0)),
            Material::solid([0.0, 1.0, 0.0]),
        )
        .unwrap();
        let hit = s.intersect(&Vec3::zeros(), &Vec3::z(), 0.0).unwrap();
        assert!((hit.distance - 1.5).abs() < 1e-12);
    }

    #[test]
    fn surface_samples_lie_on_surface() {
        let b = unit_box();
        for p in b.sample_surface(0.1) {
            let l = b.pose.apply_inverse(&p);
            let on_face = (0..3).any(|k| (l[k].abs() - 0.5).abs() < 1e-12);
            assert!(on_face && b.contains(&p, 1e-12));
        }
        assert_eq!(b.sample_surface(0.1).len(), 6 * 100);
    }

    #[test]
    fn malformed_rejected() {
        assert!(Primitive::new(
            Shape::Box { size: [0.0, 1.0, 1.0] },
            Pose::identity(),
            Material::solid([0.0; 3])
        )
        .is_err());
        assert!(Primitive::new(
            Shape::Sphere { radius: -1.0 },
            Pose::identity(),
            Material::solid([0.0; 3])
        )
        .is_err());
    }

    #[test]
    fn checker_alternates() {
        let m = Material {
            color: [1.0; 3],
            checker: Some(Checker {
                color: [0.0; 3],
                cell: 0.5,
            }),
        };
        assert_eq!(m.color_at(&Vec3::new(0.1, 0.1, 0.1)), [1.0; 3]);
        assert_eq!(m.color_at(&Vec3::new(0.6, 0.1, 0.1)), [0.0; 3]);
        assert_eq!(m.color_at(&Vec3::new(-0.1, 0.1, 0.1)), [0.0; 3]);
    }
}
