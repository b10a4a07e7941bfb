use serde::{Deserialize, Serialize};

use super::{MotionError, SimConfig, Simulator, TICK_SECONDS};
use crate::hand::{HandModel, MotorId};

/// Measured closing times of the physical hand (thumb, index, coupled),
/// seconds. These are calibration targets, not model predictions.
pub const CLOSING_TIME_TARGETS: [f64; 3] = [0.49, 0.44, 1.22];

const SPEED_RANGE: (f64, f64) = (5_000.0, 400_000.0);
const MAX_ITERATIONS: usize = 60;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub config: SimConfig,
    pub closing_times: [f64; 3],
}

fn closing_time(config: &SimConfig, hand: &HandModel, motor: MotorId) -> Result<f64, MotionError> {
    let mut sim = Simulator::new(config.clone(), hand.clone())?;
    Ok(sim.close_finger(motor)?.closing_time)
}

/// Search each motor's velocity-setpoint clamp by bisection so that the
/// simulated closing time hits `targets` (thumb, index, coupled).
///
/// Closing time falls monotonically with the clamp; the search stops once
/// the time is within half a control tick of the target.
pub fn calibrate(base: &SimConfig, hand: &HandModel, targets: [f64; 3]) -> Result<CalibrationReport, MotionError> {
    let mut config = base.clone();
    let mut times = [0.0; 3];
    for motor in MotorId::ALL {
        let i = motor.index();
        let (mut lo, mut hi) = SPEED_RANGE;
        let mut best = (f64::INFINITY, config.controllers[i].max_velocity, f64::NAN);
        for _ in 0..MAX_ITERATIONS {
            let mid = 0.5 * (lo + hi);
            config.controllers[i].max_velocity = mid;
            let t = match closing_time(&config, hand, motor) {
                Ok(t) => t,
                Err(MotionError::Timeout { .. }) => f64::INFINITY,
                Err(e) => return Err(e),
            };
            let miss = (t - targets[i]).abs();
            if miss < best.0 {
                best = (miss, mid, t);
            }
            if miss <= 0.5 * TICK_SECONDS {
                break;
            }
            if t > targets[i] {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        config.controllers[i].max_velocity = best.1;
        times[i] = best.2;
        log::debug!("calibrated {:?}: max_velocity {} closing {} s", motor, best.1, best.2);
    }
    Ok(CalibrationReport {
        config,
        closing_times: times,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_defaults_match_targets() {
        for motor in MotorId::ALL {
            let t = closing_time(&SimConfig::default(), &HandModel::default(), motor).unwrap();
            assert!((t - CLOSING_TIME_TARGETS[motor.index()]).abs() <= 0.03, "{motor:?}: {t}");
        }
    }

    #[test]
    fn calibration_recovers_targets_from_a_detuned_start() {
        let mut base = SimConfig::default();
        for c in &mut base.controllers {
            c.max_velocity = 40_000.0;
        }
        let report = calibrate(&base, &HandModel::default(), CLOSING_TIME_TARGETS).unwrap();
        for (t, target) in report.closing_times.iter().zip(CLOSING_TIME_TARGETS) {
            assert!((t - target).abs() <= 0.03);
        }
    }
}
