use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use super::{
    CascadeController, ControllerConfig, Encoder, MotionError, MotorPlantParams, MotorState,
    CLOSING_TIMEOUT_SECONDS, SETTLE_TOLERANCE_STEPS, STEPS_PER_REV, TICK_SECONDS,
};
use crate::hand::{HandModel, HandState, MotorId};

/// What the cascade of one motor is asked to do.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum MotorCommand {
    /// Driver off, duty 0.
    Idle,
    /// Full cascade towards an encoder position.
    Position(i64),
    /// Inner loop only, steps/s.
    Velocity(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub plant: MotorPlantParams,
    /// Thumb, index, coupled.
    pub controllers: [ControllerConfig; 3],
    pub supply_voltage: f64,
    /// Plant integration sub-steps per 1 ms control tick.
    pub substeps: u32,
    /// Elastic return force of one soft finger, newtons per step-equivalent.
    pub finger_stiffness: f64,
    /// Button drive speed, steps/s.
    pub drive_velocity: f64,
}

impl Default for SimConfig {
    /// Calibrated defaults: closing times land on the measured 0.49 s
    /// (thumb), 0.44 s (index) and 1.22 s (coupled). Re-derive with
    /// [`super::calibrate`].
    fn default() -> Self {
        let with_speed = |max_velocity: f64| ControllerConfig {
            max_velocity,
            ..ControllerConfig::default()
        };
        Self {
            plant: MotorPlantParams::default(),
            controllers: [
                with_speed(CALIBRATED_MAX_VELOCITY[0]),
                with_speed(CALIBRATED_MAX_VELOCITY[1]),
                with_speed(CALIBRATED_MAX_VELOCITY[2]),
            ],
            supply_voltage: 12.0,
            substeps: 10,
            finger_stiffness: 1.0e-4,
            drive_velocity: 60_000.0,
        }
    }
}

/// Output of [`super::calibrate`] on the default plant, frozen.
pub(crate) const CALIBRATED_MAX_VELOCITY: [f64; 3] = [127_473.144_531_25, 143_288.574_218_75, 150_231.933_593_75];

#[derive(Debug, Clone, PartialEq)]
pub struct ClosingReport {
    pub motor: MotorId,
    /// Seconds until the position error first drops below 500 steps.
    pub closing_time: f64,
    pub trajectory: Vec<HandState>,
}

/// Three motors, their cascades and the hand mechanism, advanced in 1 ms
/// ticks of simulated time.
#[derive(Debug, Clone)]
pub struct Simulator {
    config: SimConfig,
    hand: HandModel,
    controllers: [CascadeController; 3],
    motors: [MotorState; 3],
    encoders: [Encoder; 3],
    /// Output shaft angle since the open position, rad.
    angles: [f64; 3],
    commands: [MotorCommand; 3],
    tick: u64,
    faults: u64,
}

impl Simulator {
    pub fn new(config: SimConfig, hand: HandModel) -> Result<Self, MotionError> {
        config.plant.validate()?;
        if config.substeps == 0 || TICK_SECONDS / f64::from(config.substeps) > 1e-3 {
            return Err(MotionError::InvalidParameter("substeps must be >= 1".into()));
        }
        if !(config.supply_voltage > 0.0) || !(config.finger_stiffness >= 0.0) {
            return Err(MotionError::InvalidParameter(
                "supply voltage must be positive and stiffness non-negative".into(),
            ));
        }
        let motor = MotorState {
            supply_voltage: config.supply_voltage,
            ..MotorState::default()
        };
        Ok(Self {
            controllers: config.controllers.map(CascadeController::new),
            motors: [motor; 3],
            encoders: [Encoder::default(); 3],
            angles: [0.0; 3],
            commands: [MotorCommand::Idle; 3],
            tick: 0,
            faults: 0,
            config,
            hand,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn hand(&self) -> &HandModel {
        &self.hand
    }

    pub fn motors(&self) -> &[MotorState; 3] {
        &self.motors
    }

    pub fn command(&self, motor: MotorId) -> MotorCommand {
        self.commands[motor.index()]
    }

    pub fn tick_count(&self) -> u64 {
        self.tick
    }

    pub fn time(&self) -> f64 {
        self.tick as f64 * TICK_SECONDS
    }

    pub fn fault_count(&self) -> u64 {
        self.faults
    }

    /// Takes effect at the next tick.
    pub fn set_command(&mut self, motor: MotorId, command: MotorCommand) {
        let i = motor.index();
        if command == MotorCommand::Idle || std::mem::discriminant(&command) != std::mem::discriminant(&self.commands[i]) {
            self.controllers[i].reset();
        }
        self.commands[i] = command;
    }

    fn travel_limit(&self, motor: MotorId) -> i64 {
        self.hand.motor_travel_limit(motor)
    }

    fn duty_for(&mut self, motor: MotorId) -> i32 {
        let i = motor.index();
        let state = self.motors[i];
        let result = match self.commands[i] {
            MotorCommand::Idle => Ok(0),
            MotorCommand::Position(target) => self.controllers[i].step(target, &state),
            MotorCommand::Velocity(v) => {
                let at_close = v > 0.0 && state.encoder_count >= self.travel_limit(motor);
                let at_open = v < 0.0 && state.encoder_count <= 0;
                let v = if at_close || at_open { 0.0 } else { v };
                self.controllers[i].step_velocity(v, &state)
            }
        };
        result.unwrap_or_else(|_| {
            self.faults += 1;
            0
        })
    }

    /// Advance one control tick: controller update, then the plant in
    /// sub-steps with hard mechanical stops at the open and closed ends.
    pub fn tick(&mut self) -> Result<(), MotionError> {
        let h = TICK_SECONDS / f64::from(self.config.substeps);
        let steps_per_rad = STEPS_PER_REV as f64 / TAU;
        for motor in MotorId::ALL {
            let i = motor.index();
            let duty = self.duty_for(motor);
            let limit = self.travel_limit(motor) as f64 / steps_per_rad;
            let fingers = motor.fingers().len() as f64;
            let radius_m = self.hand.tendons.pulley_radius_mm[i] * 1e-3;
            let mut omega = self.motors[i].angular_velocity;
            let mut current = 0.0;
            for _ in 0..self.config.substeps {
                let per_finger = (self.angles[i] * steps_per_rad / fingers).max(0.0);
                let load = self.config.finger_stiffness * per_finger * radius_m;
                let (w, c) = self
                    .config
                    .plant
                    .step(duty, self.config.supply_voltage, omega, load, h)?;
                current = c;
                let before = self.angles[i];
                let mut after = before + w * h;
                omega = w;
                if after >= limit {
                    after = limit;
                    omega = omega.min(0.0);
                } else if after <= 0.0 {
                    after = 0.0;
                    omega = omega.max(0.0);
                }
                self.angles[i] = after;
                self.encoders[i].update((after - before) / h, h);
            }
            self.motors[i] = MotorState {
                encoder_count: self.encoders[i].count(),
                angular_velocity: omega,
                pwm_duty: duty,
                current,
                supply_voltage: self.config.supply_voltage,
            };
        }
        self.tick += 1;
        Ok(())
    }

    pub fn hand_state(&self) -> Result<HandState, MotionError> {
        let tensions: [f64; 3] = std::array::from_fn(|i| {
            self.config
                .plant
                .tendon_tension(self.motors[i].current, self.hand.tendons.pulley_radius_mm[i])
        });
        Ok(self.hand.state(self.motors, tensions)?)
    }

    /// Drive one motor to full close (60000 steps per finger) and report
    /// the closing time; the other motors keep their commands.
    pub fn close_finger(&mut self, motor: MotorId) -> Result<ClosingReport, MotionError> {
        self.close_to(motor, motor.full_close_steps())
    }

    /// Position-drive one motor until its error first drops below 500 steps.
    pub fn close_to(&mut self, motor: MotorId, target: i64) -> Result<ClosingReport, MotionError> {
        self.set_command(motor, MotorCommand::Position(target));
        let start = self.tick;
        let max_ticks = (CLOSING_TIMEOUT_SECONDS / TICK_SECONDS).round() as u64;
        let mut trajectory = vec![self.hand_state()?];
        loop {
            let error = (target - self.motors[motor.index()].encoder_count).abs();
            if error < SETTLE_TOLERANCE_STEPS {
                return Ok(ClosingReport {
                    motor,
                    closing_time: (self.tick - start) as f64 * TICK_SECONDS,
                    trajectory,
                });
            }
            if self.tick - start >= max_ticks {
                return Err(MotionError::Timeout {
                    motor,
                    seconds: CLOSING_TIMEOUT_SECONDS,
                });
            }
            self.tick()?;
            trajectory.push(self.hand_state()?);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sim() -> Simulator {
        Simulator::new(SimConfig::default(), HandModel::default()).unwrap()
    }

    #[test]
    fn idle_hand_stays_put() {
        let mut s = sim();
        for _ in 0..500 {
            s.tick().unwrap();
        }
        assert!(s.motors().iter().all(|m| m.encoder_count == 0 && m.pwm_duty == 0));
    }

    #[test]
    fn close_index_reaches_target() {
        let mut s = sim();
        let report = s.close_finger(MotorId::Index).unwrap();
        assert!(report.closing_time > 0.1 && report.closing_time < 2.0);
        let last = report.trajectory.last().unwrap();
        assert!((last.motor(MotorId::Index).encoder_count - 60_000).abs() < 500);
        // Other motors never moved.
        assert_eq!(last.motor(MotorId::Thumb).encoder_count, 0);
    }

    #[test]
    fn zero_distance_closes_immediately() {
        let mut s = sim();
        let r = s.close_to(MotorId::Index, 0).unwrap();
        assert_eq!(r.closing_time, 0.0);
        assert_eq!(r.trajectory.len(), 1);
    }

    #[test]
    fn blocked_finger_times_out() {
        let mut hand = HandModel::default();
        hand.finger_stops[1] = 10_000;
        let mut s = Simulator::new(SimConfig::default(), hand).unwrap();
        assert_eq!(
            s.close_finger(MotorId::Index).unwrap_err(),
            MotionError::Timeout { motor: MotorId::Index, seconds: 5.0 }
        );
    }

    #[test]
    fn coupled_never_exceeds_mechanical_range() {
        let mut s = sim();
        s.set_command(MotorId::Coupled, MotorCommand::Velocity(200_000.0));
        for _ in 0..3000 {
            s.tick().unwrap();
            let c = s.motors()[2].encoder_count;
            assert!((0..=180_000).contains(&c), "{c}");
        }
        assert!(s.motors()[2].encoder_count > 179_000);
    }

    #[test]
    fn deterministic() {
        let run = || {
            let mut s = sim();
            s.close_finger(MotorId::Coupled).unwrap().trajectory
        };
        assert_eq!(run(), run());
    }
}
