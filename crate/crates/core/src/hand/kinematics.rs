use nalgebra::{Isometry3, Translation3, UnitQuaternion, Vector3};

use super::{FingerId, FingerState, HandError, FULL_CLOSE_STEPS};

/// Rigid pose in the palm frame, translation in millimeters.
pub type Pose = Isometry3<f64>;

/// Tendon-displacement to joint-angle map of one soft finger.
///
/// Two-phase piecewise-linear curve: the MCP joint takes the first
/// `mcp_share` of the travel, the PIP joint the rest.
#[derive(Debug, Clone, PartialEq)]
pub struct FingerKinematics {
    pub mcp_max: f64,
    pub pip_max: f64,
    pub mcp_share: f64,
}

impl Default for FingerKinematics {
    fn default() -> Self {
        Self {
            mcp_max: std::f64::consts::FRAC_PI_2,
            pip_max: std::f64::consts::FRAC_PI_2,
            mcp_share: 0.6,
        }
    }
}

impl FingerKinematics {
    /// Joint angles `(mcp, pip)` in radians for a tendon displacement in
    /// step-equivalents.
    pub fn angles(&self, displacement: f64) -> Result<(f64, f64), HandError> {
        let full = FULL_CLOSE_STEPS as f64;
        if !(0.0..=full).contains(&displacement) {
            return Err(HandError::DisplacementOutOfRange {
                value: displacement,
                max: full,
            });
        }
        let knee = self.mcp_share * full;
        if displacement <= knee {
            Ok((self.mcp_max * displacement / knee, 0.0))
        } else {
            Ok((self.mcp_max, self.pip_max * (displacement - knee) / (full - knee)))
        }
    }
}

/// Finger link lengths and the placement of each MCP joint on the palm.
///
/// In each finger's base frame the straight finger points along +x and
/// flexion rotates about +y, curling the tip towards -z (the palmar side).
#[derive(Debug, Clone, PartialEq)]
pub struct HandGeometry {
    pub proximal_mm: f64,
    pub distal_mm: f64,
    pub finger_bases: [Pose; 5],
}

impl Default for HandGeometry {
    fn default() -> Self {
        let long = |y: f64| Isometry3::from_parts(Translation3::new(95.0, y, 0.0), UnitQuaternion::identity());
        // Thumb sits low on the radial side and is turned to oppose the fingers.
        let thumb = Isometry3::from_parts(
            Translation3::new(35.0, 38.0, -12.0),
            UnitQuaternion::from_euler_angles(-1.1, 0.0, 0.9),
        );
        Self {
            proximal_mm: 55.0,
            distal_mm: 45.0,
            finger_bases: [thumb, long(26.0), long(8.0), long(-10.0), long(-27.0)],
        }
    }
}

impl HandGeometry {
    pub fn finger_length_mm(&self) -> f64 {
        self.proximal_mm + self.distal_mm
    }

    /// Pose of the fingertip camera in the palm frame. The camera sits at
    /// the distal tip and looks along the distal segment (+x of the pose).
    pub fn fingertip_camera_pose(&self, finger: &FingerState, id: FingerId) -> Result<Pose, HandError> {
        finger.validate()?;
        let base = self.finger_bases[id.index()];
        Ok(base * self.chain(finger.mcp_angle, finger.pip_angle))
    }

    /// Fingertip pose relative to the finger's own MCP frame.
    pub fn chain(&self, mcp: f64, pip: f64) -> Pose {
        let flex = |a: f64| UnitQuaternion::from_axis_angle(&Vector3::y_axis(), a);
        let link = |l: f64| Isometry3::from_parts(Translation3::new(l, 0.0, 0.0), UnitQuaternion::identity());
        let joint = |a: f64| Isometry3::from_parts(Translation3::identity(), flex(a));
        joint(mcp) * link(self.proximal_mm) * joint(pip) * link(self.distal_mm)
    }
}
