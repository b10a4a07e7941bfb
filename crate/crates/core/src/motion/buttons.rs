use serde::{Deserialize, Serialize};

use super::{MotionError, MotorCommand};
use crate::hand::MotorId;

/// Per-motor drive state cycled by its button.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum DriveState {
    #[default]
    Idle,
    Closing,
    Stopped,
    Opening,
}

impl DriveState {
    pub fn next(self) -> DriveState {
        match self {
            DriveState::Idle => DriveState::Closing,
            DriveState::Closing => DriveState::Stopped,
            DriveState::Stopped => DriveState::Opening,
            DriveState::Opening => DriveState::Idle,
        }
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<DriveState> {
        [DriveState::Idle, DriveState::Closing, DriveState::Stopped, DriveState::Opening]
            .get(code as usize)
            .copied()
    }

    pub fn label(self) -> &'static str {
        match self {
            DriveState::Idle => "idle",
            DriveState::Closing => "closing",
            DriveState::Stopped => "stopped",
            DriveState::Opening => "opening",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ButtonAction {
    Press,
    Release,
}

/// Three-button panel; button `i` (1-based) drives motor `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct ButtonPanel {
    states: [DriveState; 3],
    /// Velocity setpoint magnitude for open/close drive, steps/s.
    pub drive_velocity: f64,
}

impl ButtonPanel {
    pub fn new(drive_velocity: f64) -> Self {
        Self {
            states: [DriveState::Idle; 3],
            drive_velocity,
        }
    }

    pub fn state(&self, motor: MotorId) -> DriveState {
        self.states[motor.index()]
    }

    pub fn command_for(&self, state: DriveState) -> MotorCommand {
        match state {
            DriveState::Idle => MotorCommand::Idle,
            DriveState::Closing => MotorCommand::Velocity(self.drive_velocity),
            DriveState::Stopped => MotorCommand::Velocity(0.0),
            DriveState::Opening => MotorCommand::Velocity(-self.drive_velocity),
        }
    }

    /// Apply a button event. Press advances the motor's cycle; release
    /// changes nothing. Returns the motor, its new state and the command
    /// for the cascade.
    pub fn button_command(
        &mut self,
        button_id: u8,
        action: ButtonAction,
    ) -> Result<(MotorId, DriveState, MotorCommand), MotionError> {
        let motor = match button_id {
            1..=3 => MotorId::from_index(button_id as usize - 1).expect("1..=3"),
            other => return Err(MotionError::UnknownButton(other)),
        };
        let slot = &mut self.states[motor.index()];
        if action == ButtonAction::Press {
            *slot = slot.next();
        }
        let state = *slot;
        Ok((motor, state, self.command_for(state)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn press_cycle() {
        let mut p = ButtonPanel::new(50_000.0);
        let (m, s, c) = p.button_command(1, ButtonAction::Press).unwrap();
        assert_eq!((m, s, c), (MotorId::Thumb, DriveState::Closing, MotorCommand::Velocity(50_000.0)));
        assert_eq!(p.button_command(1, ButtonAction::Press).unwrap().1, DriveState::Stopped);
        assert_eq!(p.button_command(1, ButtonAction::Press).unwrap().1, DriveState::Opening);
        assert_eq!(p.button_command(1, ButtonAction::Press).unwrap().1, DriveState::Idle);
        assert_eq!(p.state(MotorId::Index), DriveState::Idle);
    }

    #[test]
    fn cycle_enumeration_wraps_after_four() {
        let mut s = DriveState::Idle;
        let seen: Vec<DriveState> = (0..8).map(|_| {
            s = s.next();
            s
        }).collect();
        assert_eq!(&seen[..4], &seen[4..]);
        assert_eq!(seen[3], DriveState::Idle);
        for code in 0..4 {
            assert_eq!(DriveState::from_code(code).unwrap().code(), code);
        }
    }

    #[test]
    fn release_is_noop_and_unknown_rejected() {
        let mut p = ButtonPanel::new(1.0);
        let (_, s, c) = p.button_command(3, ButtonAction::Release).unwrap();
        assert_eq!((s, c), (DriveState::Idle, MotorCommand::Idle));
        assert_eq!(p.button_command(0, ButtonAction::Press), Err(MotionError::UnknownButton(0)));
        assert_eq!(p.button_command(4, ButtonAction::Press), Err(MotionError::UnknownButton(4)));
    }
}
