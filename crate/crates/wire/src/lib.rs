//! Wire formats shared by the trusted gateway and the untrusted cloud side.
//!
//! Everything in this crate is expressible in terms of opaque identifiers:
//! labels, port numbers, pool indexes and action ids. There is deliberately
//! no header parsing, no key material and no decryption here — the cloud
//! side links against this crate alone and therefore cannot reconstruct
//! packet headers from what it is given.

mod frame;
mod records;

pub use frame::{SicsPacket, FRAME_MIN_LEN, HEADER_CT_LEN, MAGIC, MAX_PAYLOAD_LEN};
pub use records::{decode_message, encode_message, BoxKind, CloudBehavior, Record};

use thiserror::Error;

/// A fixed-width equivalence-class label. Label 0 is reserved and never
/// assigned to a class, so an all-zero wire field is detectably invalid.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct Label(pub u16);

impl Label {
    pub const INVALID: Label = Label(0);

    pub fn is_valid(self) -> bool {
        self.0 != 0
    }
}

impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "a{}", self.0)
    }
}

/// Input port of the virtual switch. Each cloud instance owns exactly one
/// port; the port doubles as the instance identifier in messages.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct PortId(pub u16);

impl PortId {
    pub const INGRESS: PortId = PortId(0);
    pub const EGRESS: PortId = PortId(1);

    /// First port id available for middlebox instances.
    pub const FIRST_BOX: u16 = 2;
}

impl std::fmt::Display for PortId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match *self {
            PortId::INGRESS => write!(f, "ingress"),
            PortId::EGRESS => write!(f, "egress"),
            PortId(p) => write!(f, "port{p}"),
        }
    }
}

/// Index into the gateway's header-field pool. Index 0 means "no field was
/// rewritten"; every other value names a restoration rule known only to the
/// gateway.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Default)]
pub struct PoolIndex(pub u16);

impl PoolIndex {
    pub const NONE: PoolIndex = PoolIndex(0);
}

/// Identifier of one header-rewrite action. The cloud sees only the id; the
/// (field, value) pair behind it never leaves the gateway.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct ActionId(pub u16);

#[derive(Debug, Error)]
pub enum WireError {
    #[error("bad magic: expected 53 49 43 53, got {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("frame truncated: need {need} bytes, have {have}")]
    Truncated { need: usize, have: usize },
    #[error("payload length {0} exceeds the 16-bit frame field")]
    PayloadTooLong(usize),
    #[error("unknown record type {0:#04x}")]
    UnknownRecord(u8),
    #[error("record body malformed at offset {0}")]
    MalformedRecord(usize),
    #[error("message does not end with an End record")]
    MissingEnd,
}
