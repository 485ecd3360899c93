//! Federated gaze-estimation training whose per-round aggregation runs as a
//! maliciously secure multi-server computation over additively shared model
//! updates, together with a leakage probe that compares what different
//! training schemes reveal about each client's data.

pub mod aggregation;
pub mod fedcore;
pub mod leakprobe;
pub mod field;
pub mod protocol;
pub mod seed;
pub mod sharing;
pub mod simnet;
mod u128_str;
