use super::{FingerId, HandError, MotorId, FULL_CLOSE_STEPS};
use crate::motion::STEPS_PER_REV;

/// Routing of the three motor tendons and the pulley block.
///
/// The coupled motor tendon runs over the first block roller and terminates
/// at the little finger; middle and ring share a tendon over the second
/// roller.
#[derive(Debug, Clone, PartialEq)]
pub struct TendonNetwork {
    /// Tendon pulley radius per motor, millimeters.
    pub pulley_radius_mm: [f64; 3],
    /// Per-roller efficiency when friction is modeled; `None` is the ideal
    /// frictionless mechanism.
    pub roller_efficiency: Option<f64>,
}

impl Default for TendonNetwork {
    fn default() -> Self {
        Self {
            pulley_radius_mm: [5.0; 3],
            roller_efficiency: None,
        }
    }
}

impl TendonNetwork {
    pub fn with_friction(mut self, efficiency: f64) -> Result<Self, HandError> {
        if !(efficiency > 0.0 && efficiency <= 1.0) {
            return Err(HandError::InvalidEfficiency(efficiency));
        }
        self.roller_efficiency = Some(efficiency);
        Ok(self)
    }

    pub fn friction_enabled(&self) -> bool {
        self.roller_efficiency.is_some()
    }

    /// Tension delivered to each finger driven by `motor` when its tendon
    /// carries `motor_tension`.
    ///
    /// For the coupled motor the floating block balances the motor tendon
    /// (both strands over roller one) against the middle/ring tendon (both
    /// strands over roller two), so every finger sees the motor tension.
    /// With roller efficiency `e` the strand leaving each roller loses the
    /// factor `e`, giving (T, eT, eT) for (middle, ring, little).
    pub fn distribute_tension(
        &self,
        motor_tension: f64,
        motor: MotorId,
    ) -> Result<Vec<(FingerId, f64)>, HandError> {
        if !motor_tension.is_finite() || motor_tension < 0.0 {
            return Err(HandError::NegativeTension(motor_tension));
        }
        Ok(match motor {
            MotorId::Thumb => vec![(FingerId::Thumb, motor_tension)],
            MotorId::Index => vec![(FingerId::Index, motor_tension)],
            MotorId::Coupled => {
                let e = self.roller_efficiency.unwrap_or(1.0);
                let little = e * motor_tension;
                // Block force T + eT shared by the second roller strands t and e*t.
                let middle = (motor_tension + little) / (1.0 + e);
                let ring = e * middle;
                vec![
                    (FingerId::Middle, middle),
                    (FingerId::Ring, ring),
                    (FingerId::Little, little),
                ]
            }
        })
    }

    /// Tendon length reeled in by `steps` of the given motor.
    pub fn steps_to_mm(&self, motor: MotorId, steps: f64) -> f64 {
        steps / STEPS_PER_REV as f64 * std::f64::consts::TAU * self.pulley_radius_mm[motor.index()]
    }
}

fn check_finger_steps(value: i64) -> Result<(), HandError> {
    if (0..=FULL_CLOSE_STEPS).contains(&value) {
        Ok(())
    } else {
        Err(HandError::DisplacementOutOfRange {
            value: value as f64,
            max: FULL_CLOSE_STEPS as f64,
        })
    }
}

/// Motor travel implied by the three coupled finger displacements.
///
/// With equal tension on all strands, virtual work `T * x_motor = sum T * x_i`
/// gives the motor travel as the plain sum.
pub fn coupled_displacement(fingers: &[i64; 3]) -> Result<i64, HandError> {
    for &f in fingers {
        check_finger_steps(f)?;
    }
    Ok(fingers.iter().sum())
}

/// Inverse of [`coupled_displacement`] for a given motor travel: fingers close
/// together until each reaches its own stop (object contact or full close).
///
/// `stops` are per-finger maximum displacements (middle, ring, little). The
/// split is exact in integer steps: the result always sums to `motor_steps`.
/// Leftover single steps go to the lowest-indexed free fingers.
pub fn split_coupled_displacement(motor_steps: i64, stops: [i64; 3]) -> Result<[i64; 3], HandError> {
    for &s in &stops {
        check_finger_steps(s)?;
    }
    let capacity: i64 = stops.iter().sum();
    if motor_steps < 0 || motor_steps > capacity {
        return Err(HandError::DisplacementOutOfRange {
            value: motor_steps as f64,
            max: capacity as f64,
        });
    }

    let mut out = [0i64; 3];
    let mut free: Vec<usize> = (0..3).collect();
    let mut remaining = motor_steps;
    // Water-filling: saturate the fingers whose stop lies below the even share.
    loop {
        let n = free.len() as i64;
        let share = remaining / n;
        let blocked: Vec<usize> = free.iter().copied().filter(|&i| stops[i] <= share).collect();
        if blocked.is_empty() {
            let extra = remaining % n;
            for (k, &i) in free.iter().enumerate() {
                out[i] = share + i64::from((k as i64) < extra);
            }
            return Ok(out);
        }
        for &i in &blocked {
            out[i] = stops[i];
            remaining -= stops[i];
        }
        free.retain(|i| !blocked.contains(i));
        if free.is_empty() {
            return Ok(out);
        }
    }
}
