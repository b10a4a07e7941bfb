use serde::{Deserialize, Serialize};

use super::{MotionError, GEAR_RATIO, PWM_RESOLUTION};

/// First-order brushed DC motor with quasi-static armature current.
///
/// Defaults approximate a 12 V coreless motor of the 2224 class; they are
/// plausible values, not measurements.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotorPlantParams {
    pub terminal_resistance: f64,
    /// N*m/A
    pub torque_constant: f64,
    /// V*s/rad
    pub back_emf_constant: f64,
    /// kg*m^2, motor side
    pub rotor_inertia: f64,
    /// N*m*s/rad, motor side
    pub viscous_friction: f64,
    pub gear_ratio: f64,
}

impl Default for MotorPlantParams {
    fn default() -> Self {
        Self {
            terminal_resistance: 4.7,
            torque_constant: 0.0137,
            back_emf_constant: 0.0137,
            rotor_inertia: 2.6e-7,
            viscous_friction: 2.0e-7,
            gear_ratio: GEAR_RATIO as f64,
        }
    }
}

impl MotorPlantParams {
    pub fn validate(&self) -> Result<(), MotionError> {
        let all_positive = [
            self.terminal_resistance,
            self.torque_constant,
            self.back_emf_constant,
            self.rotor_inertia,
        ]
        .iter()
        .all(|v| v.is_finite() && *v > 0.0);
        if !all_positive || !(self.viscous_friction >= 0.0) {
            return Err(MotionError::InvalidParameter(
                "motor plant parameters must be positive".into(),
            ));
        }
        if self.gear_ratio != GEAR_RATIO as f64 {
            return Err(MotionError::InvalidParameter(format!(
                "gear ratio must be {GEAR_RATIO}, got {}",
                self.gear_ratio
            )));
        }
        Ok(())
    }

    /// One explicit Euler step. Takes and returns output-shaft velocity
    /// (rad/s); `load_torque` acts on the output shaft and opposes positive
    /// rotation. Returns `(angular_velocity, current)`.
    pub fn step(
        &self,
        duty: i32,
        supply_voltage: f64,
        angular_velocity: f64,
        load_torque: f64,
        dt: f64,
    ) -> Result<(f64, f64), MotionError> {
        if !(dt > 0.0 && dt <= 1e-3) {
            return Err(MotionError::InvalidTimestep(dt));
        }
        let voltage = supply_voltage * f64::from(duty) / f64::from(PWM_RESOLUTION);
        let omega_motor = angular_velocity * self.gear_ratio;
        let current = (voltage - self.back_emf_constant * omega_motor) / self.terminal_resistance;
        let torque =
            self.torque_constant * current - self.viscous_friction * omega_motor - load_torque / self.gear_ratio;
        let omega_motor = omega_motor + dt * torque / self.rotor_inertia;
        Ok((omega_motor / self.gear_ratio, current))
    }

    /// Tendon tension produced by `current` through a pulley of radius
    /// `pulley_radius_mm` (ideal gearing).
    pub fn tendon_tension(&self, current: f64, pulley_radius_mm: f64) -> f64 {
        self.torque_constant * current * self.gear_ratio / (pulley_radius_mm * 1e-3)
    }
}
