//! Provisioning and update messages.
//!
//! A message is a flat sequence of records terminated by an `End` record.
//! Each record is framed as
//!
//! ```text
//! [type: u8] [body_len: u32 LE] [body: body_len bytes]
//! ```
//!
//! with all body integers little-endian. Record bodies carry only labels,
//! port numbers, pool indexes, action ids and behavior codes; no header
//! bits, prefixes or ranges ever appear in a message.

use crate::{ActionId, Label, PoolIndex, PortId, WireError};

/// What a cloud instance is.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum BoxKind {
    Ingress,
    Egress,
    /// Processes packets without touching headers.
    Static,
    /// At least one of its behaviors replaces labels (a header rewriter).
    Transformer,
}

impl BoxKind {
    fn code(self) -> u8 {
        match self {
            BoxKind::Ingress => 0,
            BoxKind::Egress => 1,
            BoxKind::Static => 2,
            BoxKind::Transformer => 3,
        }
    }

    fn from_code(c: u8) -> Option<BoxKind> {
        Some(match c {
            0 => BoxKind::Ingress,
            1 => BoxKind::Egress,
            2 => BoxKind::Static,
            3 => BoxKind::Transformer,
            _ => return None,
        })
    }
}

/// Behavior of a packet as the cloud sees it. Rewrites are referenced by
/// action id only; the plaintext (field, value) pair stays at the gateway.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub enum CloudBehavior {
    Allow,
    Deny,
    Count,
    Rewrite { action: ActionId },
}

impl CloudBehavior {
    fn put(self, out: &mut Vec<u8>) {
        match self {
            CloudBehavior::Allow => {
                out.push(0);
                out.extend_from_slice(&0u16.to_le_bytes());
            }
            CloudBehavior::Deny => {
                out.push(1);
                out.extend_from_slice(&0u16.to_le_bytes());
            }
            CloudBehavior::Count => {
                out.push(2);
                out.extend_from_slice(&0u16.to_le_bytes());
            }
            CloudBehavior::Rewrite { action } => {
                out.push(3);
                out.extend_from_slice(&action.0.to_le_bytes());
            }
        }
    }

    fn take(r: &mut Reader<'_>) -> Result<CloudBehavior, WireError> {
        let tag = r.u8()?;
        let arg = r.u16()?;
        Ok(match tag {
            0 => CloudBehavior::Allow,
            1 => CloudBehavior::Deny,
            2 => CloudBehavior::Count,
            3 => CloudBehavior::Rewrite {
                action: ActionId(arg),
            },
            _ => return Err(WireError::MalformedRecord(r.pos)),
        })
    }
}

impl std::fmt::Display for CloudBehavior {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CloudBehavior::Allow => write!(f, "allow"),
            CloudBehavior::Deny => write!(f, "deny"),
            CloudBehavior::Count => write!(f, "count"),
            CloudBehavior::Rewrite { action } => write!(f, "rewrite#{}", action.0),
        }
    }
}

/// One provisioning or update instruction.
#[derive(Clone, PartialEq, Eq, Debug)]
pub enum Record {
    /// Opens a full provisioning message; wipes any prior state.
    BeginProvision { label_width: u8 },
    /// Creates an instance. The instance is addressed by its input port.
    DeclareBox {
        port: PortId,
        kind: BoxKind,
        stateful: bool,
        default_behavior: CloudBehavior,
        name: String,
    },
    /// Removes an instance (middlebox failure).
    RemoveBox { port: PortId },
    /// Inserts a (label, behavior) pair into an instance's rule table.
    RuleInsert {
        port: PortId,
        label: Label,
        behavior: CloudBehavior,
    },
    /// Deletes a label from an instance's rule table.
    RuleDelete { port: PortId, label: Label },
    /// Sets the next hop for a label in a port's adapter table.
    AdapterInsert {
        port: PortId,
        label: Label,
        next: PortId,
    },
    /// Removes a label from a port's adapter table.
    AdapterDelete { port: PortId, label: Label },
    /// Adapter insert carrying the "new" marker: the detoured instance at
    /// `next` inherits the port's previous mapping for `label`, so packets
    /// continue their chain as if their input port had not changed.
    AdapterInsertNew {
        port: PortId,
        label: Label,
        next: PortId,
    },
    /// Adapter delete carrying the "deleted" marker: the label's mapping is
    /// replaced by whatever the skipped instance at `via` would have chosen,
    /// advancing the input port without visiting the instance.
    AdapterSkipDelete {
        port: PortId,
        label: Label,
        via: PortId,
    },
    /// One entry of a label replacement table.
    ReplacementInsert {
        action: ActionId,
        label: Label,
        new_label: Label,
    },
    /// Pool-index transition applied alongside a replacement.
    PoolTransition {
        action: ActionId,
        incoming: PoolIndex,
        outgoing: PoolIndex,
    },
    /// Moves all connection state from one instance to another.
    MigrateState { from: PortId, to: PortId },
    /// Terminates a message; the cloud acknowledges with this version.
    End { version: u64 },
}

const T_BEGIN: u8 = 0x01;
const T_DECLARE: u8 = 0x02;
const T_REMOVE: u8 = 0x03;
const T_RULE_INS: u8 = 0x04;
const T_RULE_DEL: u8 = 0x05;
const T_ADAPT_INS: u8 = 0x06;
const T_ADAPT_DEL: u8 = 0x07;
const T_ADAPT_NEW: u8 = 0x08;
const T_ADAPT_SKIP: u8 = 0x09;
const T_REPL_INS: u8 = 0x0A;
const T_POOL_TRANS: u8 = 0x0B;
const T_MIGRATE: u8 = 0x0C;
const T_END: u8 = 0xFF;

impl Record {
    fn body(&self) -> (u8, Vec<u8>) {
        let mut b = Vec::new();
        let ty = match self {
            Record::BeginProvision { label_width } => {
                b.push(*label_width);
                T_BEGIN
            }
            Record::DeclareBox {
                port,
                kind,
                stateful,
                default_behavior,
                name,
            } => {
                b.extend_from_slice(&port.0.to_le_bytes());
                b.push(kind.code());
                b.push(*stateful as u8);
                default_behavior.put(&mut b);
                let name = name.as_bytes();
                b.push(name.len().min(255) as u8);
                b.extend_from_slice(&name[..name.len().min(255)]);
                T_DECLARE
            }
            Record::RemoveBox { port } => {
                b.extend_from_slice(&port.0.to_le_bytes());
                T_REMOVE
            }
            Record::RuleInsert {
                port,
                label,
                behavior,
            } => {
                b.extend_from_slice(&port.0.to_le_bytes());
                b.extend_from_slice(&label.0.to_le_bytes());
                behavior.put(&mut b);
                T_RULE_INS
            }
            Record::RuleDelete { port, label } => {
                b.extend_from_slice(&port.0.to_le_bytes());
                b.extend_from_slice(&label.0.to_le_bytes());
                T_RULE_DEL
            }
            Record::AdapterInsert { port, label, next } => {
                b.extend_from_slice(&port.0.to_le_bytes());
                b.extend_from_slice(&label.0.to_le_bytes());
                b.extend_from_slice(&next.0.to_le_bytes());
                T_ADAPT_INS
            }
            Record::AdapterDelete { port, label } => {
                b.extend_from_slice(&port.0.to_le_bytes());
                b.extend_from_slice(&label.0.to_le_bytes());
                T_ADAPT_DEL
            }
            Record::AdapterInsertNew { port, label, next } => {
                b.extend_from_slice(&port.0.to_le_bytes());
                b.extend_from_slice(&label.0.to_le_bytes());
                b.extend_from_slice(&next.0.to_le_bytes());
                T_ADAPT_NEW
            }
            Record::AdapterSkipDelete { port, label, via } => {
                b.extend_from_slice(&port.0.to_le_bytes());
                b.extend_from_slice(&label.0.to_le_bytes());
                b.extend_from_slice(&via.0.to_le_bytes());
                T_ADAPT_SKIP
            }
            Record::ReplacementInsert {
                action,
                label,
                new_label,
            } => {
                b.extend_from_slice(&action.0.to_le_bytes());
                b.extend_from_slice(&label.0.to_le_bytes());
                b.extend_from_slice(&new_label.0.to_le_bytes());
                T_REPL_INS
            }
            Record::PoolTransition {
                action,
                incoming,
                outgoing,
            } => {
                b.extend_from_slice(&action.0.to_le_bytes());
                b.extend_from_slice(&incoming.0.to_le_bytes());
                b.extend_from_slice(&outgoing.0.to_le_bytes());
                T_POOL_TRANS
            }
            Record::MigrateState { from, to } => {
                b.extend_from_slice(&from.0.to_le_bytes());
                b.extend_from_slice(&to.0.to_le_bytes());
                T_MIGRATE
            }
            Record::End { version } => {
                b.extend_from_slice(&version.to_le_bytes());
                T_END
            }
        };
        (ty, b)
    }
}

/// Serializes records into one message. An `End` record is appended when the
/// caller did not provide one.
pub fn encode_message(records: &[Record], version: u64) -> Vec<u8> {
    let mut out = Vec::new();
    let mut ended = false;
    for r in records {
        let (ty, body) = r.body();
        out.push(ty);
        out.extend_from_slice(&(body.len() as u32).to_le_bytes());
        out.extend_from_slice(&body);
        ended = matches!(r, Record::End { .. });
    }
    if !ended {
        let (ty, body) = Record::End { version }.body();
        out.push(ty);
        out.extend_from_slice(&(body.len() as u32).to_le_bytes());
        out.extend_from_slice(&body);
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn u8(&mut self) -> Result<u8, WireError> {
        let v = *self
            .bytes
            .get(self.pos)
            .ok_or(WireError::MalformedRecord(self.pos))?;
        self.pos += 1;
        Ok(v)
    }

    fn u16(&mut self) -> Result<u16, WireError> {
        let lo = self.u8()?;
        let hi = self.u8()?;
        Ok(u16::from_le_bytes([lo, hi]))
    }

    fn u64(&mut self) -> Result<u64, WireError> {
        let mut buf = [0u8; 8];
        for b in &mut buf {
            *b = self.u8()?;
        }
        Ok(u64::from_le_bytes(buf))
    }

    fn bytes(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        if self.pos + n > self.bytes.len() {
            return Err(WireError::MalformedRecord(self.pos));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
}

/// Parses a message back into records. Fails unless the message is properly
/// terminated by an `End` record.
pub fn decode_message(bytes: &[u8]) -> Result<Vec<Record>, WireError> {
    let mut out = Vec::new();
    let mut pos = 0usize;
    loop {
        if pos == bytes.len() {
            return Err(WireError::MissingEnd);
        }
        if pos + 5 > bytes.len() {
            return Err(WireError::MalformedRecord(pos));
        }
        let ty = bytes[pos];
        let len =
            u32::from_le_bytes([bytes[pos + 1], bytes[pos + 2], bytes[pos + 3], bytes[pos + 4]])
                as usize;
        pos += 5;
        if pos + len > bytes.len() {
            return Err(WireError::MalformedRecord(pos));
        }
        let mut r = Reader {
            bytes: &bytes[pos..pos + len],
            pos: 0,
        };
        pos += len;
        let rec = match ty {
            T_BEGIN => Record::BeginProvision {
                label_width: r.u8()?,
            },
            T_DECLARE => {
                let port = PortId(r.u16()?);
                let kind =
                    BoxKind::from_code(r.u8()?).ok_or(WireError::MalformedRecord(r.pos))?;
                let stateful = r.u8()? != 0;
                let default_behavior = CloudBehavior::take(&mut r)?;
                let name_len = r.u8()? as usize;
                let name = String::from_utf8_lossy(r.bytes(name_len)?).into_owned();
                Record::DeclareBox {
                    port,
                    kind,
                    stateful,
                    default_behavior,
                    name,
                }
            }
            T_REMOVE => Record::RemoveBox {
                port: PortId(r.u16()?),
            },
            T_RULE_INS => Record::RuleInsert {
                port: PortId(r.u16()?),
                label: Label(r.u16()?),
                behavior: CloudBehavior::take(&mut r)?,
            },
            T_RULE_DEL => Record::RuleDelete {
                port: PortId(r.u16()?),
                label: Label(r.u16()?),
            },
            T_ADAPT_INS => Record::AdapterInsert {
                port: PortId(r.u16()?),
                label: Label(r.u16()?),
                next: PortId(r.u16()?),
            },
            T_ADAPT_DEL => Record::AdapterDelete {
                port: PortId(r.u16()?),
                label: Label(r.u16()?),
            },
            T_ADAPT_NEW => Record::AdapterInsertNew {
                port: PortId(r.u16()?),
                label: Label(r.u16()?),
                next: PortId(r.u16()?),
            },
            T_ADAPT_SKIP => Record::AdapterSkipDelete {
                port: PortId(r.u16()?),
                label: Label(r.u16()?),
                via: PortId(r.u16()?),
            },
            T_REPL_INS => Record::ReplacementInsert {
                action: ActionId(r.u16()?),
                label: Label(r.u16()?),
                new_label: Label(r.u16()?),
            },
            T_POOL_TRANS => Record::PoolTransition {
                action: ActionId(r.u16()?),
                incoming: PoolIndex(r.u16()?),
                outgoing: PoolIndex(r.u16()?),
            },
            T_MIGRATE => Record::MigrateState {
                from: PortId(r.u16()?),
                to: PortId(r.u16()?),
            },
            T_END => {
                out.push(Record::End { version: r.u64()? });
                return Ok(out);
            }
            other => return Err(WireError::UnknownRecord(other)),
        };
        out.push(rec);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn message_round_trip() {
        let records = vec![
            Record::BeginProvision { label_width: 16 },
            Record::DeclareBox {
                port: PortId(2),
                kind: BoxKind::Static,
                stateful: true,
                default_behavior: CloudBehavior::Allow,
                name: "fw1".to_string(),
            },
            Record::RuleInsert {
                port: PortId(2),
                label: Label(3),
                behavior: CloudBehavior::Deny,
            },
            Record::AdapterInsert {
                port: PortId::INGRESS,
                label: Label(3),
                next: PortId(2),
            },
            Record::ReplacementInsert {
                action: ActionId(1),
                label: Label(4),
                new_label: Label(5),
            },
            Record::PoolTransition {
                action: ActionId(1),
                incoming: PoolIndex::NONE,
                outgoing: PoolIndex(1),
            },
            Record::AdapterSkipDelete {
                port: PortId(2),
                label: Label(4),
                via: PortId(3),
            },
            Record::End { version: 42 },
        ];
        let bytes = encode_message(&records, 42);
        let decoded = decode_message(&bytes).unwrap();
        assert_eq!(decoded, records);
    }

    #[test]
    fn end_is_appended_when_missing() {
        let bytes = encode_message(&[Record::BeginProvision { label_width: 8 }], 7);
        let decoded = decode_message(&bytes).unwrap();
        assert_eq!(decoded.last(), Some(&Record::End { version: 7 }));
    }

    #[test]
    fn unterminated_message_rejected() {
        let bytes = encode_message(&[Record::RemoveBox { port: PortId(9) }], 1);
        // Chop off the End record.
        let truncated = &bytes[..bytes.len() - 13];
        assert!(matches!(
            decode_message(truncated),
            Err(WireError::MissingEnd)
        ));
    }

    #[test]
    fn unknown_record_type_rejected() {
        let mut bytes = encode_message(&[], 1);
        bytes[0] = 0x7E;
        assert!(matches!(
            decode_message(&bytes),
            Err(WireError::UnknownRecord(0x7E))
        ));
    }
}
