use std::f64::consts::TAU;

use super::STEPS_PER_REV;

// Accumulated fractions this close to a whole count are rounded onto it, so
// splitting an interval into pieces cannot lose a count to float rounding.
const SNAP: f64 = 1e-9;

/// Quadrature encoder on the output shaft, counting in [`STEPS_PER_REV`]
/// steps per revolution.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Encoder {
    count: i64,
    residual: f64,
}

impl Encoder {
    pub fn count(&self) -> i64 {
        self.count
    }

    /// Advance by `angular_velocity` (rad/s, output shaft) over `dt` seconds
    /// and return the whole counts gained. Sub-step remainders carry over.
    pub fn update(&mut self, angular_velocity: f64, dt: f64) -> i64 {
        debug_assert!(dt > 0.0);
        let acc = self.residual + angular_velocity * dt / TAU * STEPS_PER_REV as f64;
        let mut whole = acc.trunc();
        let frac = acc - whole;
        if frac.abs() > 1.0 - SNAP {
            whole += frac.signum();
        }
        self.residual = acc - whole;
        let delta = whole as i64;
        self.count += delta;
        delta
    }
}
