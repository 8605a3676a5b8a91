//! The tunnel packet frame.
//!
//! Layout, all multi-byte fields big-endian:
//!
//! ```text
//! offset  size  field
//! 0       4     magic "SICS" (0x53 0x49 0x43 0x53)
//! 4       2     label
//! 6       2     field-pool index (0 = no rewritten fields)
//! 8       16    header ciphertext (one 128-bit block)
//! 24      2     payload length n
//! 26      n     payload (opaque)
//! ```
//!
//! Relative to a bare encrypted tunnel (magic + ciphertext + length +
//! payload), the labeling machinery costs exactly the 4 bytes of label and
//! pool index — 32 bits per packet, never more.

use crate::{Label, PoolIndex, WireError};

pub const MAGIC: [u8; 4] = *b"SICS";
pub const HEADER_CT_LEN: usize = 16;
/// Frame length with an empty payload.
pub const FRAME_MIN_LEN: usize = 4 + 2 + 2 + HEADER_CT_LEN + 2;
pub const MAX_PAYLOAD_LEN: usize = u16::MAX as usize;

/// One packet as it travels between the gateway and the cloud.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct SicsPacket {
    pub label: Label,
    pub field_pool_index: PoolIndex,
    pub header_ct: [u8; HEADER_CT_LEN],
    pub payload: Vec<u8>,
}

impl SicsPacket {
    pub fn wire_len(&self) -> usize {
        FRAME_MIN_LEN + self.payload.len()
    }

    pub fn encode(&self) -> Result<Vec<u8>, WireError> {
        if self.payload.len() > MAX_PAYLOAD_LEN {
            return Err(WireError::PayloadTooLong(self.payload.len()));
        }
        let mut out = Vec::with_capacity(self.wire_len());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&self.label.0.to_be_bytes());
        out.extend_from_slice(&self.field_pool_index.0.to_be_bytes());
        out.extend_from_slice(&self.header_ct);
        out.extend_from_slice(&(self.payload.len() as u16).to_be_bytes());
        out.extend_from_slice(&self.payload);
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<SicsPacket, WireError> {
        if bytes.len() < FRAME_MIN_LEN {
            return Err(WireError::Truncated {
                need: FRAME_MIN_LEN,
                have: bytes.len(),
            });
        }
        let mut magic = [0u8; 4];
        magic.copy_from_slice(&bytes[0..4]);
        if magic != MAGIC {
            return Err(WireError::BadMagic(magic));
        }
        let label = Label(u16::from_be_bytes([bytes[4], bytes[5]]));
        let field_pool_index = PoolIndex(u16::from_be_bytes([bytes[6], bytes[7]]));
        let mut header_ct = [0u8; HEADER_CT_LEN];
        header_ct.copy_from_slice(&bytes[8..8 + HEADER_CT_LEN]);
        let payload_len = u16::from_be_bytes([bytes[24], bytes[25]]) as usize;
        if bytes.len() < FRAME_MIN_LEN + payload_len {
            return Err(WireError::Truncated {
                need: FRAME_MIN_LEN + payload_len,
                have: bytes.len(),
            });
        }
        let payload = bytes[26..26 + payload_len].to_vec();
        Ok(SicsPacket {
            label,
            field_pool_index,
            header_ct,
            payload,
        })
    }
}
