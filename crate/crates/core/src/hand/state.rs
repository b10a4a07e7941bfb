use serde::{Deserialize, Serialize};

use super::{
    split_coupled_displacement, FingerId, FingerKinematics, HandError, HandGeometry, MotorId, Pose,
    TendonNetwork, FULL_CLOSE_STEPS,
};
use crate::motion::MotorState;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FingerState {
    pub mcp_angle: f64,
    pub pip_angle: f64,
    /// Tendon travel in step-equivalents of the driving motor.
    pub tendon_displacement: f64,
    /// Aggregate flexion (MCP + PIP), radians.
    pub closing_angle: f64,
    pub tendon_tension: f64,
}

impl FingerState {
    pub(crate) fn validate(&self) -> Result<(), HandError> {
        let angles_ok = [self.mcp_angle, self.pip_angle]
            .iter()
            .all(|a| a.is_finite() && (0.0..=std::f64::consts::PI).contains(a));
        if !angles_ok {
            return Err(HandError::InvalidState(format!(
                "joint angles ({}, {}) outside [0, pi]",
                self.mcp_angle, self.pip_angle
            )));
        }
        if !(self.tendon_tension >= 0.0) {
            return Err(HandError::NegativeTension(self.tendon_tension));
        }
        Ok(())
    }
}

/// Full mechanism state at one simulation tick.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct HandState {
    pub fingers: [FingerState; 5],
    pub motors: [MotorState; 3],
    /// Travel of the floating pulley block, step-equivalents.
    pub pulley_block_offset: f64,
}

impl HandState {
    pub fn finger(&self, id: FingerId) -> &FingerState {
        &self.fingers[id.index()]
    }

    pub fn motor(&self, id: MotorId) -> &MotorState {
        &self.motors[id.index()]
    }
}

/// Tendon routing, finger kinematics and geometry bundled with the
/// per-finger stops (object contact) that limit closure.
#[derive(Debug, Clone, PartialEq)]
pub struct HandModel {
    pub tendons: TendonNetwork,
    pub kinematics: FingerKinematics,
    pub geometry: HandGeometry,
    /// Maximum displacement of each finger, step-equivalents.
    pub finger_stops: [i64; 5],
}

impl Default for HandModel {
    fn default() -> Self {
        Self {
            tendons: TendonNetwork::default(),
            kinematics: FingerKinematics::default(),
            geometry: HandGeometry::default(),
            finger_stops: [FULL_CLOSE_STEPS; 5],
        }
    }
}

impl HandModel {
    /// Motor travel that brings every finger on `motor` to its stop.
    pub fn motor_travel_limit(&self, motor: MotorId) -> i64 {
        motor.fingers().iter().map(|f| self.finger_stops[f.index()]).sum()
    }

    /// Per-finger tendon displacement for the given motor encoder counts.
    /// Counts outside the mechanical range are held at the end stops.
    pub fn finger_displacements(&self, counts: [i64; 3]) -> Result<[i64; 5], HandError> {
        let mut out = [0i64; 5];
        for motor in MotorId::ALL {
            let travel = counts[motor.index()].clamp(0, self.motor_travel_limit(motor));
            match motor {
                MotorId::Coupled => {
                    let stops = [
                        self.finger_stops[FingerId::Middle.index()],
                        self.finger_stops[FingerId::Ring.index()],
                        self.finger_stops[FingerId::Little.index()],
                    ];
                    let split = split_coupled_displacement(travel, stops)?;
                    out[2..5].copy_from_slice(&split);
                }
                _ => out[motor.fingers()[0].index()] = travel,
            }
        }
        Ok(out)
    }

    /// Assemble the hand state from motor states and motor tendon tensions.
    /// Negative motor tension leaves the tendon slack.
    pub fn state(&self, motors: [MotorState; 3], motor_tensions: [f64; 3]) -> Result<HandState, HandError> {
        let counts = motors.map(|m| m.encoder_count);
        let disp = self.finger_displacements(counts)?;
        let mut fingers = [FingerState::default(); 5];
        for motor in MotorId::ALL {
            let tension = motor_tensions[motor.index()].max(0.0);
            for (finger, t) in self.tendons.distribute_tension(tension, motor)? {
                let d = disp[finger.index()] as f64;
                let (mcp, pip) = self.kinematics.angles(d)?;
                fingers[finger.index()] = FingerState {
                    mcp_angle: mcp,
                    pip_angle: pip,
                    tendon_displacement: d,
                    closing_angle: mcp + pip,
                    tendon_tension: t,
                };
            }
        }
        let pulley_block_offset = (disp[FingerId::Middle.index()] + disp[FingerId::Ring.index()]) as f64 / 2.0;
        Ok(HandState {
            fingers,
            motors,
            pulley_block_offset,
        })
    }

    pub fn fingertip_camera_pose(&self, state: &HandState, id: FingerId) -> Result<Pose, HandError> {
        self.geometry.fingertip_camera_pose(state.finger(id), id)
    }

    /// Camera pose of one finger at a given tendon displacement.
    pub fn camera_pose_at(&self, id: FingerId, displacement: f64) -> Result<Pose, HandError> {
        let (mcp, pip) = self.kinematics.angles(displacement)?;
        let finger = FingerState {
            mcp_angle: mcp,
            pip_angle: pip,
            tendon_displacement: displacement,
            closing_angle: mcp + pip,
            tendon_tension: 0.0,
        };
        self.geometry.fingertip_camera_pose(&finger, id)
    }
}
