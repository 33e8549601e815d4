//! Rigid residue frames.
//!
//! Rotation columns are the frame axes expressed in the parent frame, so
//! `apply(T, x) = R·x + t` maps local coordinates to parent coordinates.

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// A point or displacement in Å.
pub type Point3 = Vector3<f64>;

/// Rejected-component length (Å) below which three points count as collinear.
pub const COLLINEAR_TOLERANCE: f64 = 1e-6;

/// Orthonormality drift tolerated before `compose` re-orthonormalizes.
pub const ORTHONORMAL_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GeometryError {
    #[error("degenerate frame{}: {reason}", residue.map(|r| format!(" at residue {r}")).unwrap_or_default())]
    DegenerateFrame {
        residue: Option<usize>,
        reason: &'static str,
    },
}

impl GeometryError {
    /// Attaches a residue index to a degenerate-frame error.
    pub fn at_residue(self, index: usize) -> Self {
        match self {
            GeometryError::DegenerateFrame { reason, .. } => GeometryError::DegenerateFrame {
                residue: Some(index),
                reason,
            },
        }
    }
}

/// Proper rigid motion: a rotation followed by a translation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Point3,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Point3::zeros(),
        }
    }

    pub fn from_translation(translation: Point3) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    pub fn apply(&self, x: &Point3) -> Point3 {
        self.rotation * x + self.translation
    }

    /// Applies only the rotation, for displacements.
    pub fn rotate(&self, v: &Point3) -> Point3 {
        self.rotation * v
    }

    /// `‖RᵀR − I‖_max`.
    pub fn orthonormality_error(&self) -> f64 {
        (self.rotation.transpose() * self.rotation - Matrix3::identity()).amax()
    }

    pub fn is_proper(&self, tol: f64) -> bool {
        self.orthonormality_error() < tol && (self.rotation.determinant() - 1.0).abs() < tol
    }

    /// Projects the rotation back onto SO(3) by Gram–Schmidt on its columns.
    pub fn orthonormalized(&self) -> Self {
        let c0 = self.rotation.column(0).normalize();
        let c1 = self.rotation.column(1) - c0 * c0.dot(&self.rotation.column(1));
        let c1 = c1.normalize();
        let c2 = c0.cross(&c1);
        Self {
            rotation: Matrix3::from_columns(&[c0, c1, c2]),
            translation: self.translation,
        }
    }
}

/// Builds the residue frame anchored at `ca` with its x axis towards `c`
/// and `n` in the xy half-plane with positive y.
pub fn frame_from_three_points(
    n: &Point3,
    ca: &Point3,
    c: &Point3,
) -> Result<RigidTransform, GeometryError> {
    let v1 = c - ca;
    let v2 = n - ca;
    let len1 = v1.norm();
    if len1 <= COLLINEAR_TOLERANCE || v2.norm() <= COLLINEAR_TOLERANCE {
        return Err(GeometryError::DegenerateFrame {
            residue: None,
            reason: "coincident points",
        });
    }
    let e1 = v1 / len1;
    let u2 = v2 - e1 * e1.dot(&v2);
    let len2 = u2.norm();
    if len2 <= COLLINEAR_TOLERANCE {
        return Err(GeometryError::DegenerateFrame {
            residue: None,
            reason: "collinear points",
        });
    }
    let e2 = u2 / len2;
    let e3 = e1.cross(&e2);
    Ok(RigidTransform {
        rotation: Matrix3::from_columns(&[e1, e2, e3]),
        translation: *ca,
    })
}

/// `(a∘b)(x) = a(b(x))`.
pub fn compose(a: &RigidTransform, b: &RigidTransform) -> RigidTransform {
    let out = RigidTransform {
        rotation: a.rotation * b.rotation,
        translation: a.rotation * b.translation + a.translation,
    };
    if out.orthonormality_error() > ORTHONORMAL_TOLERANCE {
        out.orthonormalized()
    } else {
        out
    }
}

pub fn invert(t: &RigidTransform) -> RigidTransform {
    let rt = t.rotation.transpose();
    RigidTransform {
        rotation: rt,
        translation: -(rt * t.translation),
    }
}

/// The transform taking coordinates in frame `tj` to coordinates in frame
/// `ti`: `ti⁻¹ ∘ tj`.
pub fn relative_transform(ti: &RigidTransform, tj: &RigidTransform) -> RigidTransform {
    compose(&invert(ti), tj)
}

/// Rigid motion with a uniformly distributed rotation and translation
/// components uniform in [−100, 100] Å.
pub fn random_rigid(seed: u64) -> RigidTransform {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_rigid_with(&mut rng)
}

pub fn random_rigid_with<R: Rng + ?Sized>(rng: &mut R) -> RigidTransform {
    RigidTransform {
        rotation: random_rotation(rng),
        translation: Point3::new(
            rng.gen_range(-100.0..100.0),
            rng.gen_range(-100.0..100.0),
            rng.gen_range(-100.0..100.0),
        ),
    }
}

/// Uniform rotation from a normalized 4D Gaussian quaternion.
pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> Matrix3<f64> {
    loop {
        let q = Quaternion::new(
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        );
        if q.norm() > 1e-6 {
            return UnitQuaternion::from_quaternion(q).to_rotation_matrix().into_inner();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_point(rng: &mut ChaCha8Rng) -> Point3 {
        Point3::new(
            rng.gen_range(-20.0..20.0),
            rng.gen_range(-20.0..20.0),
            rng.gen_range(-20.0..20.0),
        )
    }

    fn assert_close(a: &RigidTransform, b: &RigidTransform, tol: f64) {
        assert!((a.rotation - b.rotation).amax() <= tol, "{a:?} vs {b:?}");
        assert!((a.translation - b.translation).amax() <= tol, "{a:?} vs {b:?}");
    }

    #[test]
    fn axis_aligned_points_give_identity() {
        let t = frame_from_three_points(
            &Point3::new(0.0, 1.0, 0.0),
            &Point3::zeros(),
            &Point3::new(1.0, 0.0, 0.0),
        )
        .unwrap();
        assert_close(&t, &RigidTransform::identity(), 0.0);
    }

    #[test]
    fn shifted_points_shift_the_translation_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (n, ca, c) = (random_point(&mut rng), random_point(&mut rng), random_point(&mut rng));
        let d = Point3::new(3.0, -7.5, 11.0);
        let a = frame_from_three_points(&n, &ca, &c).unwrap();
        let b = frame_from_three_points(&(n + d), &(ca + d), &(c + d)).unwrap();
        assert!((a.rotation - b.rotation).amax() < 1e-12);
        assert!((b.translation - (a.translation + d)).amax() < 1e-12);
    }

    #[test]
    fn random_frames_are_proper_and_centre_ca() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let (n, ca, c) = (random_point(&mut rng), random_point(&mut rng), random_point(&mut rng));
            let t = frame_from_three_points(&n, &ca, &c).unwrap();
            assert!(t.is_proper(1e-9));
            assert!(invert(&t).apply(&ca).norm() < 1e-12);
            // C on the local +x axis
            let local_c = invert(&t).apply(&c);
            assert!(local_c.y.abs() < 1e-9 && local_c.z.abs() < 1e-9 && local_c.x > 0.0);
        }
    }

    #[test]
    fn degenerate_triples_are_rejected() {
        let p = Point3::new(1.0, 2.0, 3.0);
        let err = frame_from_three_points(&p, &p, &Point3::zeros()).unwrap_err();
        assert!(matches!(err, GeometryError::DegenerateFrame { .. }));
        let err = frame_from_three_points(
            &Point3::new(2.0, 0.0, 0.0),
            &Point3::zeros(),
            &Point3::new(1.0, 0.0, 0.0),
        )
        .unwrap_err()
        .at_residue(7);
        assert!(err.to_string().contains("residue 7"));
    }

    #[test]
    fn compose_and_invert_identities() {
        let t = random_rigid(11);
        assert_close(&compose(&RigidTransform::identity(), &t), &t, 1e-12);
        assert_close(&compose(&t, &invert(&t)), &RigidTransform::identity(), 1e-9);
        assert_close(&invert(&RigidTransform::identity()), &RigidTransform::identity(), 0.0);
        assert_close(&invert(&invert(&t)), &t, 1e-9);
        let d = Point3::new(1.0, -2.0, 0.5);
        assert_close(
            &invert(&RigidTransform::from_translation(d)),
            &RigidTransform::from_translation(-d),
            0.0,
        );
    }

    #[test]
    fn composition_matches_sequential_application() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let (a, b) = (random_rigid(1), random_rigid(2));
        let ab = compose(&a, &b);
        for _ in 0..100 {
            let x = random_point(&mut rng);
            assert!((ab.apply(&x) - a.apply(&b.apply(&x))).norm() < 1e-9);
            assert!((invert(&a).apply(&a.apply(&x)) - x).norm() < 1e-9);
        }
    }

    #[test]
    fn relative_transform_cancels_global_frame() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for seed in 0..50 {
            let (ti, tj, global) = (random_rigid(seed), random_rigid(seed + 1000), random_rigid(seed + 2000));
            let rel = relative_transform(&ti, &tj);
            let moved = relative_transform(&compose(&global, &ti), &compose(&global, &tj));
            assert_close(&rel, &moved, 1e-9);
            let x = random_point(&mut rng);
            assert!((ti.apply(&rel.apply(&x)) - tj.apply(&x)).norm() < 1e-9);
        }
        let t = random_rigid(9);
        assert_close(&relative_transform(&t, &t), &RigidTransform::identity(), 1e-9);
    }

    #[test]
    fn random_rigid_is_deterministic_and_proper() {
        assert_eq!(random_rigid(42), random_rigid(42));
        assert_ne!(random_rigid(42), random_rigid(43));
        for seed in 0..1000 {
            let t = random_rigid(seed);
            assert!(t.is_proper(1e-9), "seed {seed}");
            for col in t.rotation.column_iter() {
                assert!((col.norm() - 1.0).abs() < 1e-9);
            }
            assert!(t.translation.iter().all(|v| (-100.0..=100.0).contains(v)));
        }
    }

    #[test]
    fn long_chains_stay_orthonormal() {
        let mut acc = RigidTransform::identity();
        for seed in 0..10_000 {
            acc = compose(&acc, &random_rigid(seed));
            acc = compose(&acc, &invert(&random_rigid(seed + 1)));
        }
        assert!(acc.is_proper(1e-9));
    }
}
