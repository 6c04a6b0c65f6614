use nalgebra::{Matrix3, Rotation3, Unit, Vector3};

use super::{MeshError, TriMesh};

const ORTHONORMAL_TOL: f64 = 1e-9;

/// Proper rigid motion `v ↦ R v + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, MeshError> {
        let t = Self {
            rotation,
            translation,
        };
        t.check()?;
        Ok(t)
    }

    pub fn translation(t: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: t,
        }
    }

    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64, translation: Vector3<f64>) -> Self {
        let rotation = Rotation3::from_axis_angle(&Unit::new_normalize(axis), angle).into_inner();
        Self {
            rotation,
            translation,
        }
    }

    /// Fails unless `RᵀR = I` and `det R = 1` within 1e-9.
    pub fn check(&self) -> Result<(), MeshError> {
        let r = &self.rotation;
        let gram = r.transpose() * r;
        let off = (gram - Matrix3::identity()).abs().max();
        if !(off <= ORTHONORMAL_TOL) || !((r.determinant() - 1.0).abs() <= ORTHONORMAL_TOL) {
            return Err(MeshError::InvalidTransform);
        }
        if !self.translation.iter().all(|x| x.is_finite()) {
            return Err(MeshError::InvalidTransform);
        }
        Ok(())
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    /// Row-major rotation followed by the translation, twelve numbers.
    pub fn to_array(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
            t.x,
            t.y,
            t.z,
        ]
    }

    pub fn from_array(a: &[f64; 12]) -> Result<Self, MeshError> {
        Self::new(
            Matrix3::new(a[0], a[1], a[2], a[3], a[4], a[5], a[6], a[7], a[8]),
            Vector3::new(a[9], a[10], a[11]),
        )
    }
}

/// Applies a rigid transform to every vertex; faces are copied unchanged.
pub fn apply_rigid(mesh: &TriMesh, t: &RigidTransform) -> Result<TriMesh, MeshError> {
    t.check()?;
    let vertices = mesh
        .vertices
        .iter()
        .map(|v| (t.rotation * v.coords + t.translation).into())
        .collect();
    Ok(mesh.with_vertices(vertices))
}
