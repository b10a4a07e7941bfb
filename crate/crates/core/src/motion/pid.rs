use serde::{Deserialize, Serialize};

use super::{MotionError, MotorState, PWM_RESOLUTION, TICK_SECONDS};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PidGains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
}

impl PidGains {
    pub const ZERO: PidGains = PidGains { kp: 0.0, ki: 0.0, kd: 0.0 };

    pub fn new(kp: f64, ki: f64, kd: f64) -> Self {
        Self { kp, ki, kd }
    }
}

/// Positional-form discrete PID with zero initial conditions and a clamped
/// integral term (the clamp is in output units).
#[derive(Debug, Clone, PartialEq)]
pub struct Pid {
    pub gains: PidGains,
    pub integral_limit: f64,
    integral: f64,
    prev_error: f64,
}

impl Pid {
    pub fn new(gains: PidGains, integral_limit: f64) -> Self {
        Self {
            gains,
            integral_limit,
            integral: 0.0,
            prev_error: 0.0,
        }
    }

    pub fn reset(&mut self) {
        self.integral = 0.0;
        self.prev_error = 0.0;
    }

    pub fn step(&mut self, error: f64, dt: f64) -> f64 {
        let PidGains { kp, ki, kd } = self.gains;
        let i_term = (self.integral + ki * error * dt).clamp(-self.integral_limit, self.integral_limit);
        self.integral = i_term;
        let d_term = kd * (error - self.prev_error) / dt;
        self.prev_error = error;
        kp * error + i_term + d_term
    }
}

/// Gains and limits of one motor's cascade.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerConfig {
    /// Position error (steps) to velocity setpoint (steps/s).
    pub position: PidGains,
    /// Velocity error (steps/s) to duty (1/3000 units).
    pub velocity: PidGains,
    pub position_integral_limit: f64,
    pub velocity_integral_limit: f64,
    /// Velocity setpoint clamp, steps/s.
    pub max_velocity: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            position: PidGains::new(40.0, 0.0, 0.0),
            velocity: PidGains::new(0.05, 2.0, 0.0),
            position_integral_limit: 5_000.0,
            velocity_integral_limit: PWM_RESOLUTION as f64,
            max_velocity: 150_000.0,
        }
    }
}

/// Cascaded position -> velocity controller run once per 1 ms tick.
#[derive(Debug, Clone, PartialEq)]
pub struct CascadeController {
    pub config: ControllerConfig,
    position: Pid,
    velocity: Pid,
}

impl CascadeController {
    pub fn new(config: ControllerConfig) -> Self {
        Self {
            position: Pid::new(config.position, config.position_integral_limit),
            velocity: Pid::new(config.velocity, config.velocity_integral_limit),
            config,
        }
    }

    pub fn reset(&mut self) {
        self.position.reset();
        self.velocity.reset();
    }

    /// One tick of the full cascade towards `target` encoder steps.
    ///
    /// Non-finite inputs fault the controller: the integrators are cleared
    /// and the caller must drive duty 0.
    pub fn step(&mut self, target: i64, state: &MotorState) -> Result<i32, MotionError> {
        let error = (target - state.encoder_count) as f64;
        let setpoint = self.position.step(error, TICK_SECONDS);
        if !setpoint.is_finite() {
            self.reset();
            return Err(MotionError::ControllerFault);
        }
        let setpoint = setpoint.clamp(-self.config.max_velocity, self.config.max_velocity);
        self.step_velocity(setpoint, state)
    }

    /// Inner loop only: track a velocity setpoint in steps/s.
    pub fn step_velocity(&mut self, setpoint: f64, state: &MotorState) -> Result<i32, MotionError> {
        let measured = state.velocity_steps();
        if !setpoint.is_finite() || !measured.is_finite() {
            self.reset();
            return Err(MotionError::ControllerFault);
        }
        let u = self.velocity.step(setpoint - measured, TICK_SECONDS);
        if !u.is_finite() {
            self.reset();
            return Err(MotionError::ControllerFault);
        }
        Ok(quantize_duty(u))
    }
}

/// Round to the nearest 1/3000 duty step and saturate.
pub(crate) fn quantize_duty(u: f64) -> i32 {
    let limit = PWM_RESOLUTION as f64;
    u.round().clamp(-limit, limit) as i32
}
