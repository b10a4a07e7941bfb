//! Software twin of a tendon-driven five-finger soft hand with cameras in
//! the fingertips.

pub mod datapath;
pub mod eval;
pub mod exec;
pub mod hand;
pub mod motion;
pub mod segnet;
pub mod wire;
