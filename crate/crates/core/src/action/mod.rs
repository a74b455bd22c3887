//! Action of controls and minimum-action estimates of the quasipotentials
//! `V`, `V~` (avoiding given balls) and `V_A` (from the attractor).

mod lbfgs;
mod mam;
mod objective;

pub use crate::control::{action_j, ControlPath};
pub use lbfgs::LbfgsReport;
pub use mam::{
    quasipotential, quasipotential_avoiding, quasipotential_from_attractor, quasipotential_matrix, AttractorValue,
    EtaPoint, MamOptions, MamResult, StageLog,
};
pub use objective::{action_gradient, Barrier, Evaluation, Objective};
