//! Continuous 6D rotation representation: the first two columns of the
//! rotation matrix, orthonormalized by Gram-Schmidt on reconstruction.

use nalgebra::{Matrix3, Vector3};

use super::KinematicsError;
use crate::diff::rot6d_forward_raw;

/// Six reals: the first two columns of a 3x3 rotation matrix, column-major.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation6d(pub [f64; 6]);

impl Rotation6d {
    pub fn identity() -> Self {
        Rotation6d([1.0, 0.0, 0.0, 0.0, 1.0, 0.0])
    }

    /// Gram-Schmidt reconstruction; the third column is the cross product.
    pub fn to_matrix(&self) -> Result<Matrix3<f64>, KinematicsError> {
        let m = rot6d_forward_raw(&self.0).map_err(KinematicsError::DegenerateRotation)?;
        // Row-major [b1 b2 b3] columns.
        Ok(Matrix3::new(
            m[0], m[1], m[2], //
            m[3], m[4], m[5], //
            m[6], m[7], m[8],
        ))
    }

    /// First two columns of `m`, column-major.
    pub fn from_matrix(m: &Matrix3<f64>) -> Self {
        Rotation6d([
            m[(0, 0)],
            m[(1, 0)],
            m[(2, 0)],
            m[(0, 1)],
            m[(1, 1)],
            m[(2, 1)],
        ])
    }

    /// Round trip through the matrix form, yielding exactly orthonormal
    /// columns.
    pub fn canonicalize(&self) -> Result<Self, KinematicsError> {
        Ok(Self::from_matrix(&self.to_matrix()?))
    }

    pub fn rotate(&self, v: &Vector3<f64>) -> Result<Vector3<f64>, KinematicsError> {
        Ok(self.to_matrix()? * v)
    }
}
