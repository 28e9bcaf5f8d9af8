//! Numerics for boundary-time-crystal metrology: collective-spin algebra,
//! the dissipative Liouvillian, Fisher information and finite-size scaling.

pub mod dicke;
pub mod linalg;
pub mod liouvillian;
pub mod metrology;
pub mod scaling;
