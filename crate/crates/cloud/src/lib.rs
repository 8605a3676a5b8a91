//! Simulated untrusted cloud side.
//!
//! Instances here forward and process packets purely by matching labels in
//! constant-time tables. The crate deliberately depends on nothing that can
//! decrypt: headers arrive as opaque ciphertext blocks and leave unchanged.

mod cuckoo;
mod network;

pub use cuckoo::LabelTable;
pub use network::{
    Alarms, BoxInstance, CloudError, CloudNetwork, ConnState, Delivery, DropReason,
    HopObservation,
};
