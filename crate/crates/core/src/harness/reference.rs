use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::controller::{FlatOutput, ReferencePoint};
use crate::error::{Error, Result};

/// `p_d(t) = [A_x sin(ω₀t), A_y sin(2ω₀t), z₀ + A_z sin(ω_a t)]` at constant
/// yaw. With `e3` pointing down, `z₀ = −1` is one metre above ground.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FigureEight {
    pub amp_x: f64,
    pub amp_y: f64,
    pub omega0: f64,
    pub amp_z: f64,
    pub omega_alt: f64,
    pub z0: f64,
    pub yaw: f64,
}

impl Default for FigureEight {
    fn default() -> Self {
        Self {
            amp_x: 1.5,
            amp_y: 1.0,
            omega0: 0.5,
            amp_z: 0.2,
            omega_alt: 0.8,
            z0: -1.0,
            yaw: 0.0,
        }
    }
}

impl FigureEight {
    pub fn validate(&self) -> Result<()> {
        let all = [self.amp_x, self.amp_y, self.omega0, self.amp_z, self.omega_alt, self.z0, self.yaw];
        if all.iter().all(|v| v.is_finite()) && self.omega0 >= 0.0 && self.omega_alt >= 0.0 {
            Ok(())
        } else {
            Err(Error::Config("reference parameters must be finite with non-negative frequencies".into()))
        }
    }

    pub fn flat(&self, t: f64) -> FlatOutput {
        let (w, wa) = (self.omega0, self.omega_alt);
        let (sx, cx) = (w * t).sin_cos();
        let (sy, cy) = (2.0 * w * t).sin_cos();
        let (sz, cz) = (wa * t).sin_cos();
        FlatOutput {
            pos: Vector3::new(self.amp_x * sx, self.amp_y * sy, self.z0 + self.amp_z * sz),
            vel: Vector3::new(self.amp_x * w * cx, self.amp_y * 2.0 * w * cy, self.amp_z * wa * cz),
            acc: Vector3::new(
                -self.amp_x * w * w * sx,
                -self.amp_y * 4.0 * w * w * sy,
                -self.amp_z * wa * wa * sz,
            ),
            yaw: self.yaw,
            yaw_rate: 0.0,
        }
    }

    pub fn at(&self, t: f64, gravity: f64) -> ReferencePoint {
        ReferencePoint::from_flat(|s| self.flat(s), t, gravity)
    }
}
