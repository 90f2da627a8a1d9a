//! Sphere-based self-collision checks across all limbs of a model.
//!
//! Spheres come from the follower config, attached to chain frames. Pairs on
//! the same link or on adjacent links of one limb are never checked: those
//! spheres overlap by construction around the joint between them.

use nalgebra::Vector3;

use crate::robot_model::{JointVector, ModelError, RobotModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SphereRef {
    pub limb: usize,
    pub sphere: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollisionPair {
    pub a: SphereRef,
    pub b: SphereRef,
    pub distance: f64,
    /// Sum of radii plus margin.
    pub threshold: f64,
}

/// True if the spheres are closer than their radii plus `margin`.
pub fn spheres_collide(
    ca: &Vector3<f64>,
    ra: f64,
    cb: &Vector3<f64>,
    rb: f64,
    margin: f64,
) -> bool {
    (ca - cb).norm() < ra + rb + margin
}

/// Precomputed list of sphere pairs worth checking.
#[derive(Debug, Clone, PartialEq)]
pub struct SphereCollider {
    pairs: Vec<(SphereRef, SphereRef)>,
}

impl SphereCollider {
    pub fn new(model: &RobotModel) -> Self {
        let all: Vec<(SphereRef, usize)> = model
            .limbs
            .iter()
            .enumerate()
            .flat_map(|(l, chain)| {
                chain
                    .collision_spheres
                    .iter()
                    .enumerate()
                    .map(move |(s, sp)| (SphereRef { limb: l, sphere: s }, sp.frame))
            })
            .collect();
        let mut pairs = Vec::new();
        for (i, &(a, fa)) in all.iter().enumerate() {
            for &(b, fb) in &all[i + 1..] {
                if a.limb == b.limb && fa.abs_diff(fb) <= 1 {
                    continue;
                }
                pairs.push((a, b));
            }
        }
        Self { pairs }
    }

    pub fn candidate_pairs(&self) -> &[(SphereRef, SphereRef)] {
        &self.pairs
    }

    /// Root-frame sphere centers per limb.
    pub fn centers(
        model: &RobotModel,
        q: &[JointVector],
    ) -> Result<Vec<Vec<Vector3<f64>>>, ModelError> {
        if q.len() != model.limbs.len() {
            return Err(ModelError::Dimension {
                expected: model.limbs.len(),
                got: q.len(),
            });
        }
        model
            .limbs
            .iter()
            .zip(q)
            .map(|(c, q)| c.sphere_centers(q))
            .collect()
    }

    /// All colliding pairs at `q`, each reported once with `a < b`.
    pub fn check(
        &self,
        model: &RobotModel,
        q: &[JointVector],
        margin: f64,
    ) -> Result<Vec<CollisionPair>, ModelError> {
        if self.pairs.is_empty() {
            return Ok(Vec::new());
        }
        let centers = Self::centers(model, q)?;
        let radius = |r: SphereRef| model.limbs[r.limb].collision_spheres[r.sphere].radius;
        Ok(self
            .pairs
            .iter()
            .filter_map(|&(a, b)| {
                let ca = &centers[a.limb][a.sphere];
                let cb = &centers[b.limb][b.sphere];
                let (ra, rb) = (radius(a), radius(b));
                spheres_collide(ca, ra, cb, rb, margin).then(|| CollisionPair {
                    a,
                    b,
                    distance: (ca - cb).norm(),
                    threshold: ra + rb + margin,
                })
            })
            .collect())
    }

    /// Per limb: is it part of any colliding pair?
    pub fn colliding_limbs(
        &self,
        model: &RobotModel,
        q: &[JointVector],
        margin: f64,
    ) -> Result<Vec<bool>, ModelError> {
        let mut out = vec![false; model.limbs.len()];
        for p in self.check(model, q, margin)? {
            out[p.a.limb] = true;
            out[p.b.limb] = true;
        }
        Ok(out)
    }
}

/// One-shot check; prefer a reused [`SphereCollider`] inside loops.
pub fn check_self_collision(
    model: &RobotModel,
    q: &[JointVector],
    margin: f64,
) -> Result<Vec<CollisionPair>, ModelError> {
    SphereCollider::new(model).check(model, q, margin)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::robot_model::{parse_robot_description, LimbSpec, SphereSpec};

    #[test]
    fn table_base_pose_is_free() {
        let m = fixtures::table_model();
        assert!(check_self_collision(&m, &m.base_pose, 0.01)
            .unwrap()
            .is_empty());
        let m = fixtures::quad_model();
        assert!(check_self_collision(&m, &m.base_pose, 0.01)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn adjacent_spheres_are_skipped() {
        let mut spec = LimbSpec::new("arm", "base", "tool");
        spec.spheres = vec![
            SphereSpec {
                link: "link1".into(),
                center: [0.5, 0.0, 0.0],
                radius: 0.6,
            },
            SphereSpec {
                link: "link2".into(),
                center: [0.5, 0.0, 0.0],
                radius: 0.6,
            },
        ];
        let (m, _) = parse_robot_description(fixtures::PLANAR_2R_URDF, &[spec]).unwrap();
        let c = SphereCollider::new(&m);
        assert!(c.candidate_pairs().is_empty());
        for k in 0..20 {
            let q = JointVector::from_column_slice(&[0.1 * k as f64, -0.12 * k as f64]);
            assert!(c.check(&m, &[q], 0.0).unwrap().is_empty());
        }
    }

    #[test]
    fn symmetric_predicate() {
        let a = Vector3::new(0.1, 0.2, 0.3);
        let b = Vector3::new(0.15, 0.2, 0.3);
        assert_eq!(
            spheres_collide(&a, 0.01, &b, 0.03, 0.005),
            spheres_collide(&b, 0.03, &a, 0.01, 0.005)
        );
        assert!(spheres_collide(&a, 0.03, &b, 0.03, 0.0));
        assert!(!spheres_collide(&a, 0.01, &b, 0.01, 0.0));
    }
}
