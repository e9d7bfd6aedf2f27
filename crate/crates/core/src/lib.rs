//! Simulator for offloading platoon control messages from ITS-G5 to
//! bumper-to-bumper radar communication.

pub mod cli;
pub mod engine;
pub mod facilities;
pub mod fuel;
pub mod mac;
pub mod metrics;
pub mod network;
pub mod phy;
pub mod radcom;
pub mod safety;
pub mod scenario;
