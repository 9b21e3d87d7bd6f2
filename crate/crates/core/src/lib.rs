//! Deterministic BLE security lab.
//!
//! [`protocol`] models devices, [`world`] puts them on a shared radio
//! medium under a discrete-event clock, [`attacks`] runs attacker programs
//! against that world, [`stride`] turns their outcomes into verdicts and
//! [`lab`] drives all of it from scenario files.

pub mod attacks;
pub mod crypto;
pub mod lab;
pub mod protocol;
pub mod stride;
pub mod world;
