//! Simulated low-level motor controller: quadrature encoder counting, a
//! brushed-DC plant, the cascaded position/velocity PID at 1 kHz, PWM
//! quantization and the three-button operator interface.

mod buttons;
mod calibrate;
mod encoder;
mod pid;
mod plant;
mod sim;

pub use buttons::{ButtonAction, ButtonPanel, DriveState};
pub use calibrate::{calibrate, CalibrationReport, CLOSING_TIME_TARGETS};
pub use encoder::Encoder;
pub use pid::{CascadeController, ControllerConfig, Pid, PidGains};
pub use plant::MotorPlantParams;
pub use sim::{ClosingReport, MotorCommand, SimConfig, Simulator};

use serde::{Deserialize, Serialize};

use crate::hand::{HandError, MotorId};

/// Lines of the motor-shaft encoder.
pub const ENCODER_LINES: i64 = 512;
/// Countable edges per line of a quadrature signal.
pub const QUADRATURE_EDGES: i64 = 4;
/// Planetary gear reduction between motor and tendon pulley.
pub const GEAR_RATIO: i64 = 23;
/// Encoder counts per revolution of the output (tendon pulley) shaft.
pub const STEPS_PER_REV: i64 = ENCODER_LINES * QUADRATURE_EDGES * GEAR_RATIO;
/// PWM duty resolution: duty is an integer numerator over this denominator.
pub const PWM_RESOLUTION: i32 = 3000;
pub const LOOP_RATE_HZ: u32 = 1000;
pub const TICK_SECONDS: f64 = 1.0 / LOOP_RATE_HZ as f64;
/// A finger counts as closed once the position error falls below this.
pub const SETTLE_TOLERANCE_STEPS: i64 = 500;
pub const CLOSING_TIMEOUT_SECONDS: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MotorState {
    pub encoder_count: i64,
    /// Output shaft velocity, rad/s.
    pub angular_velocity: f64,
    /// Signed duty numerator over [`PWM_RESOLUTION`].
    pub pwm_duty: i32,
    pub current: f64,
    pub supply_voltage: f64,
}

impl MotorState {
    /// Output shaft velocity in encoder steps per second.
    pub fn velocity_steps(&self) -> f64 {
        self.angular_velocity / std::f64::consts::TAU * STEPS_PER_REV as f64
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MotionError {
    #[error("plant step requires 0 < dt <= 1 ms, got {0} s")]
    InvalidTimestep(f64),
    #[error("controller fault: non-finite input or output")]
    ControllerFault,
    #[error("{motor:?} did not settle within {seconds} s")]
    Timeout { motor: MotorId, seconds: f64 },
    #[error("unknown button {0}; valid buttons are 1, 2, 3")]
    UnknownButton(u8),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Hand(#[from] HandError),
}
