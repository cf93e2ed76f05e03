//! Laboratory for homoenergetic solutions of the Boltzmann equation:
//! deformation-matrix flows, particle Monte Carlo, the linearized collision
//! operator, and the long-time temperature laws they produce.

pub mod analysis;
pub mod asymptotics;
pub mod dsmc;
pub mod flow;
pub mod kernel;
pub mod linop;
pub mod scenario;

pub type Mat3 = nalgebra::Matrix3<f64>;
pub type Vec3 = nalgebra::Vector3<f64>;
