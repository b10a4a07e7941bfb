//! Mechanism model of the five-finger tendon hand.
//!
//! Thumb and index are each driven directly by one motor. Middle, ring and
//! little share the third motor through a floating two-roller pulley block,
//! which (frictionless) gives all three fingers the motor tendon tension.
//! Displacements are measured in encoder step-equivalents of the driving
//! motor; one finger closes fully at [`FULL_CLOSE_STEPS`].

mod kinematics;
mod state;
mod tendon;

pub use kinematics::{FingerKinematics, HandGeometry, Pose};
pub use state::{FingerState, HandModel, HandState};
pub use tendon::{coupled_displacement, split_coupled_displacement, TendonNetwork};

use serde::{Deserialize, Serialize};

/// Encoder steps for closing one finger completely.
pub const FULL_CLOSE_STEPS: i64 = 60_000;
/// Encoder steps of the coupled motor for closing middle, ring and little.
pub const COUPLED_FULL_CLOSE_STEPS: i64 = 3 * FULL_CLOSE_STEPS;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum HandError {
    #[error("tendon tension must be non-negative and finite, got {0} N")]
    NegativeTension(f64),
    #[error("displacement {value} outside [0, {max}] step-equivalents")]
    DisplacementOutOfRange { value: f64, max: f64 },
    #[error("roller efficiency must lie in (0, 1], got {0}")]
    InvalidEfficiency(f64),
    #[error("invalid finger state: {0}")]
    InvalidState(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FingerId {
    Thumb,
    Index,
    Middle,
    Ring,
    Little,
}

impl FingerId {
    pub const ALL: [FingerId; 5] = [
        FingerId::Thumb,
        FingerId::Index,
        FingerId::Middle,
        FingerId::Ring,
        FingerId::Little,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            FingerId::Thumb => "thumb",
            FingerId::Index => "index",
            FingerId::Middle => "middle",
            FingerId::Ring => "ring",
            FingerId::Little => "little",
        }
    }

    /// The motor whose tendon drives this finger.
    pub fn motor(self) -> MotorId {
        match self {
            FingerId::Thumb => MotorId::Thumb,
            FingerId::Index => MotorId::Index,
            _ => MotorId::Coupled,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MotorId {
    Thumb,
    Index,
    Coupled,
}

impl MotorId {
    pub const ALL: [MotorId; 3] = [MotorId::Thumb, MotorId::Index, MotorId::Coupled];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<MotorId> {
        MotorId::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            MotorId::Thumb => "thumb",
            MotorId::Index => "index",
            MotorId::Coupled => "coupled",
        }
    }

    pub fn fingers(self) -> &'static [FingerId] {
        match self {
            MotorId::Thumb => &[FingerId::Thumb],
            MotorId::Index => &[FingerId::Index],
            MotorId::Coupled => &[FingerId::Middle, FingerId::Ring, FingerId::Little],
        }
    }

    /// Motor travel that closes every finger on this motor.
    pub fn full_close_steps(self) -> i64 {
        FULL_CLOSE_STEPS * self.fingers().len() as i64
    }
}

impl std::str::FromStr for MotorId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "thumb" => Ok(MotorId::Thumb),
            "index" => Ok(MotorId::Index),
            "coupled" | "middle" | "ring" | "little" => Ok(MotorId::Coupled),
            other => Err(format!("unknown finger group '{other}'")),
        }
    }
}
