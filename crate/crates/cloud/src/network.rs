//! The simulated cloud: a set of box instances wired through adapter
//! tables, driven entirely by provisioning and update messages.
//!
//! Instances never see anything but labels, pool indexes and opaque
//! ciphertext. Packet processing is a chain of constant-time table lookups:
//! the adapter table of the current input port picks the next instance, the
//! instance's rule table picks the behavior.

use std::collections::{BTreeMap, HashMap, VecDeque};

use sics_wire::{
    decode_message, ActionId, BoxKind, CloudBehavior, Label, PoolIndex, PortId, Record,
    SicsPacket, WireError,
};
use thiserror::Error;

use crate::cuckoo::LabelTable;

#[derive(Debug, Error)]
pub enum CloudError {
    #[error("no instance owns port {0}")]
    UnknownPort(PortId),
    #[error("port {0} already declared")]
    DuplicatePort(PortId),
    #[error("rule delete for label {label} at {port}: no such entry")]
    MissingRule { port: PortId, label: Label },
    #[error("adapter delete for label {label} at {port}: no such entry")]
    MissingAdapterEntry { port: PortId, label: Label },
    #[error("message malformed: {0}")]
    Wire(#[from] WireError),
    #[error("network has no ingress instance")]
    NoIngress,
}

/// Connection state kept by stateful instances. Flows sharing a label are
/// told apart by their header ciphertexts and nothing else.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConnState {
    pub packets: u64,
    pub first_seen_version: u64,
}

type StateKey = (u16, [u8; 16]);

/// One middlebox (or ingress/egress endpoint) instance.
pub struct BoxInstance {
    pub port: PortId,
    pub name: String,
    pub kind: BoxKind,
    pub stateful: bool,
    pub default_behavior: CloudBehavior,
    rule_table: LabelTable<CloudBehavior>,
    adapter: LabelTable<PortId>,
    state: HashMap<StateKey, ConnState>,
    pub count_hits: u64,
}

impl BoxInstance {
    fn new(
        port: PortId,
        kind: BoxKind,
        stateful: bool,
        default_behavior: CloudBehavior,
        name: String,
    ) -> Self {
        BoxInstance {
            port,
            name,
            kind,
            stateful,
            default_behavior,
            rule_table: LabelTable::with_capacity(64),
            adapter: LabelTable::with_capacity(64),
            state: HashMap::new(),
            count_hits: 0,
        }
    }

    pub fn behavior_of(&self, label: Label) -> CloudBehavior {
        self.rule_table.get(label).unwrap_or(self.default_behavior)
    }

    pub fn next_hop(&self, label: Label) -> PortId {
        self.adapter.get(label).unwrap_or(PortId::EGRESS)
    }

    pub fn rule_table(&self) -> &LabelTable<CloudBehavior> {
        &self.rule_table
    }

    pub fn adapter_table(&self) -> &LabelTable<PortId> {
        &self.adapter
    }

    pub fn state_entries(&self) -> usize {
        self.state.len()
    }

    pub fn state_of(&self, label: Label, header_ct: &[u8; 16]) -> Option<ConnState> {
        self.state.get(&(label.0, *header_ct)).copied()
    }
}

/// Why a packet never made it to the egress.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum DropReason {
    /// A rule said deny.
    Denied,
    /// A transformer had no replacement or pool transition for the packet.
    ProvisionHole,
    /// The adapter graph cycled longer than the instance count allows.
    RoutingLoop,
    /// A frame failed to parse.
    BadFrame,
}

/// Observation of one processing hop, for reports and oracles.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct HopObservation {
    pub port: PortId,
    pub name: String,
    pub behavior: CloudBehavior,
}

/// Outcome of pushing one frame through the network.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Delivery {
    /// The frame handed back to the tunnel, unless the packet was dropped.
    pub egress: Option<SicsPacket>,
    pub hops: Vec<HopObservation>,
    pub dropped: Option<DropReason>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Alarms {
    pub replacement_miss: u64,
    pub pool_miss: u64,
    pub routing_loops: u64,
    pub bad_frames: u64,
}

struct ActionTables {
    replacement: LabelTable<Label>,
    pool: BTreeMap<u16, u16>,
}

/// The whole simulated deployment.
pub struct CloudNetwork {
    instances: BTreeMap<u16, BoxInstance>,
    actions: BTreeMap<u16, ActionTables>,
    label_width: u8,
    version: u64,
    inbox: VecDeque<Vec<u8>>,
    drained_during_update: Vec<Delivery>,
    pub alarms: Alarms,
}

impl CloudNetwork {
    pub fn new() -> Self {
        CloudNetwork {
            instances: BTreeMap::new(),
            actions: BTreeMap::new(),
            label_width: 16,
            version: 0,
            inbox: VecDeque::new(),
            drained_during_update: Vec::new(),
            alarms: Alarms::default(),
        }
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn label_width(&self) -> u8 {
        self.label_width
    }

    pub fn instance(&self, port: PortId) -> Option<&BoxInstance> {
        self.instances.get(&port.0)
    }

    pub fn instances(&self) -> impl Iterator<Item = &BoxInstance> {
        self.instances.values()
    }

    /// Queues a data frame behind everything already in flight.
    pub fn submit(&mut self, frame: Vec<u8>) {
        self.inbox.push_back(frame);
    }

    /// Processes every queued frame in FIFO order.
    pub fn pump(&mut self) -> Vec<Delivery> {
        let mut out = std::mem::take(&mut self.drained_during_update);
        while let Some(frame) = self.inbox.pop_front() {
            out.push(self.process_frame(&frame));
        }
        out
    }

    /// Applies a provisioning or update message. All in-pipeline packets are
    /// finished first; their deliveries are returned by the next `pump`.
    pub fn apply_message(&mut self, bytes: &[u8]) -> Result<u64, CloudError> {
        let records = decode_message(bytes)?;
        let drained = self.pump();
        self.drained_during_update = drained;
        for record in records {
            self.apply_record(record)?;
        }
        Ok(self.version)
    }

    fn apply_record(&mut self, record: Record) -> Result<(), CloudError> {
        match record {
            Record::BeginProvision { label_width } => {
                self.instances.clear();
                self.actions.clear();
                self.label_width = label_width;
            }
            Record::DeclareBox {
                port,
                kind,
                stateful,
                default_behavior,
                name,
            } => {
                if self.instances.contains_key(&port.0) {
                    return Err(CloudError::DuplicatePort(port));
                }
                self.instances.insert(
                    port.0,
                    BoxInstance::new(port, kind, stateful, default_behavior, name),
                );
            }
            Record::RemoveBox { port } => {
                self.instances
                    .remove(&port.0)
                    .ok_or(CloudError::UnknownPort(port))?;
            }
            Record::RuleInsert {
                port,
                label,
                behavior,
            } => {
                self.expect(port)?.rule_table.insert(label, behavior);
            }
            Record::RuleDelete { port, label } => {
                self.expect(port)?
                    .rule_table
                    .remove(label)
                    .ok_or(CloudError::MissingRule { port, label })?;
            }
            Record::AdapterInsert { port, label, next } => {
                self.expect(port)?.adapter.insert(label, next);
            }
            Record::AdapterDelete { port, label } => {
                self.expect(port)?
                    .adapter
                    .remove(label)
                    .ok_or(CloudError::MissingAdapterEntry { port, label })?;
            }
            Record::AdapterInsertNew { port, label, next } => {
                // "New" marker: the detoured instance continues the chain
                // exactly where this port would have sent the packet.
                let continuation = self.expect(port)?.next_hop(label);
                self.expect(next)?.adapter.insert(label, continuation);
                self.expect(port)?.adapter.insert(label, next);
            }
            Record::AdapterSkipDelete { port, label, via } => {
                // "Deleted" marker: advance the input port past `via`
                // without the packet ever visiting it.
                let past = self.expect(via)?.next_hop(label);
                self.expect(port)?.adapter.insert(label, past);
            }
            Record::ReplacementInsert {
                action,
                label,
                new_label,
            } => {
                self.action_tables(action).replacement.insert(label, new_label);
            }
            Record::PoolTransition {
                action,
                incoming,
                outgoing,
            } => {
                self.action_tables(action).pool.insert(incoming.0, outgoing.0);
            }
            Record::MigrateState { from, to } => {
                let state = std::mem::take(&mut self.expect(from)?.state);
                let count_hits = self.instance(from).map(|i| i.count_hits).unwrap_or(0);
                let target = self.expect(to)?;
                target.state.extend(state);
                target.count_hits += count_hits;
            }
            Record::End { version } => {
                self.version = version;
            }
        }
        Ok(())
    }

    fn expect(&mut self, port: PortId) -> Result<&mut BoxInstance, CloudError> {
        self.instances
            .get_mut(&port.0)
            .ok_or(CloudError::UnknownPort(port))
    }

    fn action_tables(&mut self, action: ActionId) -> &mut ActionTables {
        self.actions.entry(action.0).or_insert_with(|| ActionTables {
            replacement: LabelTable::with_capacity(64),
            pool: BTreeMap::new(),
        })
    }

    fn process_frame(&mut self, frame: &[u8]) -> Delivery {
        let mut pkt = match SicsPacket::decode(frame) {
            Ok(p) => p,
            Err(_) => {
                self.alarms.bad_frames += 1;
                return Delivery {
                    egress: None,
                    hops: Vec::new(),
                    dropped: Some(DropReason::BadFrame),
                };
            }
        };
        let mut hops = Vec::new();
        let version = self.version;
        let mut cur = PortId::INGRESS;
        let mut budget = self.instances.len() + 2;
        loop {
            let next = match self.instances.get(&cur.0) {
                Some(inst) => inst.next_hop(pkt.label),
                None => PortId::EGRESS,
            };
            if next == PortId::EGRESS {
                return Delivery {
                    egress: Some(pkt),
                    hops,
                    dropped: None,
                };
            }
            if budget == 0 {
                self.alarms.routing_loops += 1;
                return Delivery {
                    egress: None,
                    hops,
                    dropped: Some(DropReason::RoutingLoop),
                };
            }
            budget -= 1;
            let Some(inst) = self.instances.get_mut(&next.0) else {
                return Delivery {
                    egress: None,
                    hops,
                    dropped: Some(DropReason::ProvisionHole),
                };
            };
            let behavior = inst.behavior_of(pkt.label);
            hops.push(HopObservation {
                port: next,
                name: inst.name.clone(),
                behavior,
            });
            if inst.stateful {
                let entry = inst
                    .state
                    .entry((pkt.label.0, pkt.header_ct))
                    .or_insert(ConnState {
                        packets: 0,
                        first_seen_version: version,
                    });
                entry.packets += 1;
            }
            match behavior {
                CloudBehavior::Allow => {}
                CloudBehavior::Count => inst.count_hits += 1,
                CloudBehavior::Deny => {
                    return Delivery {
                        egress: None,
                        hops,
                        dropped: Some(DropReason::Denied),
                    };
                }
                CloudBehavior::Rewrite { action } => {
                    let Some(tables) = self.actions.get(&action.0) else {
                        self.alarms.replacement_miss += 1;
                        return Delivery {
                            egress: None,
                            hops,
                            dropped: Some(DropReason::ProvisionHole),
                        };
                    };
                    let Some(new_label) = tables.replacement.get(pkt.label) else {
                        self.alarms.replacement_miss += 1;
                        return Delivery {
                            egress: None,
                            hops,
                            dropped: Some(DropReason::ProvisionHole),
                        };
                    };
                    let Some(&out_index) = tables.pool.get(&pkt.field_pool_index.0) else {
                        self.alarms.pool_miss += 1;
                        return Delivery {
                            egress: None,
                            hops,
                            dropped: Some(DropReason::ProvisionHole),
                        };
                    };
                    pkt.label = new_label;
                    pkt.field_pool_index = PoolIndex(out_index);
                }
            }
            cur = next;
        }
    }

    pub fn memory_bytes(&self) -> usize {
        let tables: usize = self
            .instances
            .values()
            .map(|i| i.rule_table.memory_bytes() + i.adapter.memory_bytes())
            .sum();
        let actions: usize = self
            .actions
            .values()
            .map(|a| a.replacement.memory_bytes() + a.pool.len() * 8)
            .sum();
        tables + actions
    }
}

impl Default for CloudNetwork {
    fn default() -> Self {
        Self::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use sics_wire::encode_message;

    fn frame(label: u16, pool: u16, ct: u8) -> Vec<u8> {
        SicsPacket {
            label: Label(label),
            field_pool_index: PoolIndex(pool),
            header_ct: [ct; 16],
            payload: vec![0xEE],
        }
        .encode()
        .unwrap()
    }

    /// ingress -> firewall(port 2) -> proxy(port 3) -> egress, where the
    /// firewall forwards labels 1 and 2 to the proxy and everything else
    /// straight to the egress.
    fn small_network() -> CloudNetwork {
        let mut net = CloudNetwork::new();
        let records = vec![
            Record::BeginProvision { label_width: 16 },
            Record::DeclareBox {
                port: PortId::INGRESS,
                kind: BoxKind::Ingress,
                stateful: false,
                default_behavior: CloudBehavior::Allow,
                name: "ingress".into(),
            },
            Record::DeclareBox {
                port: PortId::EGRESS,
                kind: BoxKind::Egress,
                stateful: false,
                default_behavior: CloudBehavior::Allow,
                name: "egress".into(),
            },
            Record::DeclareBox {
                port: PortId(2),
                kind: BoxKind::Static,
                stateful: true,
                default_behavior: CloudBehavior::Allow,
                name: "fw".into(),
            },
            Record::DeclareBox {
                port: PortId(3),
                kind: BoxKind::Static,
                stateful: false,
                default_behavior: CloudBehavior::Allow,
                name: "proxy".into(),
            },
            Record::AdapterInsert {
                port: PortId::INGRESS,
                label: Label(1),
                next: PortId(2),
            },
            Record::AdapterInsert {
                port: PortId::INGRESS,
                label: Label(2),
                next: PortId(2),
            },
            Record::AdapterInsert {
                port: PortId::INGRESS,
                label: Label(3),
                next: PortId(2),
            },
            Record::AdapterInsert {
                port: PortId(2),
                label: Label(1),
                next: PortId(3),
            },
            Record::AdapterInsert {
                port: PortId(2),
                label: Label(2),
                next: PortId(3),
            },
            Record::RuleInsert {
                port: PortId(2),
                label: Label(3),
                behavior: CloudBehavior::Deny,
            },
        ];
        net.apply_message(&encode_message(&records, 1)).unwrap();
        net
    }

    #[test]
    fn labels_route_through_the_adapter_graph() {
        let mut net = small_network();
        net.submit(frame(1, 0, 1));
        net.submit(frame(2, 0, 2));
        let out = net.pump();
        assert_eq!(out.len(), 2);
        for d in &out {
            assert!(d.egress.is_some());
            let names: Vec<&str> = d.hops.iter().map(|h| h.name.as_str()).collect();
            assert_eq!(names, ["fw", "proxy"]);
        }
    }

    #[test]
    fn unmatched_labels_take_the_default_egress_route() {
        let mut net = small_network();
        net.submit(frame(9, 0, 1));
        let out = net.pump();
        assert!(out[0].egress.is_some());
        assert!(out[0].hops.is_empty());
    }

    #[test]
    fn deny_drops_and_reports() {
        let mut net = small_network();
        net.submit(frame(3, 0, 1));
        let out = net.pump();
        assert_eq!(out[0].dropped, Some(DropReason::Denied));
        assert!(out[0].egress.is_none());
    }

    #[test]
    fn same_label_different_ciphertexts_get_distinct_state() {
        let mut net = small_network();
        net.submit(frame(1, 0, 0x11));
        net.submit(frame(1, 0, 0x22));
        net.submit(frame(1, 0, 0x11));
        net.pump();
        let fw = net.instance(PortId(2)).unwrap();
        assert_eq!(fw.state_entries(), 2);
        assert_eq!(fw.state_of(Label(1), &[0x11; 16]).unwrap().packets, 2);
        assert_eq!(fw.state_of(Label(1), &[0x22; 16]).unwrap().packets, 1);
    }

    #[test]
    fn updates_never_disturb_state() {
        let mut net = small_network();
        net.submit(frame(1, 0, 0x11));
        net.pump();
        let update = vec![Record::RuleInsert {
            port: PortId(2),
            label: Label(1),
            behavior: CloudBehavior::Count,
        }];
        net.apply_message(&encode_message(&update, 2)).unwrap();
        let fw = net.instance(PortId(2)).unwrap();
        assert_eq!(fw.state_entries(), 1);
        assert_eq!(fw.state_of(Label(1), &[0x11; 16]).unwrap().packets, 1);
    }

    #[test]
    fn update_drains_in_pipeline_packets_first() {
        let mut net = small_network();
        net.submit(frame(3, 0, 1));
        // The deny for label 3 is lifted by the update, but the queued
        // packet must still see the old table.
        let update = vec![Record::RuleDelete {
            port: PortId(2),
            label: Label(3),
        }];
        net.apply_message(&encode_message(&update, 2)).unwrap();
        net.submit(frame(3, 0, 1));
        let out = net.pump();
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].dropped, Some(DropReason::Denied));
        assert_eq!(out[1].dropped, None);
    }

    #[test]
    fn new_marker_detours_and_returns() {
        let mut net = small_network();
        let update = vec![
            Record::DeclareBox {
                port: PortId(4),
                kind: BoxKind::Static,
                stateful: false,
                default_behavior: CloudBehavior::Count,
                name: "ids".into(),
            },
            // Labels 1 detour through the IDS before the firewall's old
            // next hop (the proxy).
            Record::AdapterInsertNew {
                port: PortId(2),
                label: Label(1),
                next: PortId(4),
            },
        ];
        net.apply_message(&encode_message(&update, 2)).unwrap();
        net.submit(frame(1, 0, 1));
        let out = net.pump();
        let names: Vec<&str> = out[0].hops.iter().map(|h| h.name.as_str()).collect();
        assert_eq!(names, ["fw", "ids", "proxy"]);
    }

    #[test]
    fn deleted_marker_skips_the_instance() {
        let mut net = small_network();
        // Stop sending label 1 to the proxy: the ingress-side mapping at
        // the firewall port advances past it.
        let update = vec![Record::AdapterSkipDelete {
            port: PortId(2),
            label: Label(1),
            via: PortId(3),
        }];
        net.apply_message(&encode_message(&update, 2)).unwrap();
        net.submit(frame(1, 0, 1));
        let out = net.pump();
        let names: Vec<&str> = out[0].hops.iter().map(|h| h.name.as_str()).collect();
        assert_eq!(names, ["fw"]);
        assert!(out[0].egress.is_some());
    }

    #[test]
    fn replacement_rewrites_label_and_pool_index() {
        let mut net = small_network();
        let update = vec![
            Record::DeclareBox {
                port: PortId(4),
                kind: BoxKind::Transformer,
                stateful: false,
                default_behavior: CloudBehavior::Rewrite {
                    action: ActionId(1),
                },
                name: "nat".into(),
            },
            Record::AdapterInsert {
                port: PortId::INGRESS,
                label: Label(5),
                next: PortId(4),
            },
            Record::ReplacementInsert {
                action: ActionId(1),
                label: Label(5),
                new_label: Label(6),
            },
            Record::PoolTransition {
                action: ActionId(1),
                incoming: PoolIndex::NONE,
                outgoing: PoolIndex(1),
            },
        ];
        net.apply_message(&encode_message(&update, 2)).unwrap();
        net.submit(frame(5, 0, 1));
        let out = net.pump();
        let pkt = out[0].egress.as_ref().unwrap();
        assert_eq!(pkt.label, Label(6));
        assert_eq!(pkt.field_pool_index, PoolIndex(1));
        // Ciphertext untouched: the cloud cannot rewrite what it cannot read.
        assert_eq!(pkt.header_ct, [1; 16]);
    }

    #[test]
    fn replacement_hole_drops_with_alarm() {
        let mut net = small_network();
        let update = vec![
            Record::DeclareBox {
                port: PortId(4),
                kind: BoxKind::Transformer,
                stateful: false,
                default_behavior: CloudBehavior::Rewrite {
                    action: ActionId(1),
                },
                name: "nat".into(),
            },
            Record::AdapterInsert {
                port: PortId::INGRESS,
                label: Label(5),
                next: PortId(4),
            },
        ];
        net.apply_message(&encode_message(&update, 2)).unwrap();
        net.submit(frame(5, 0, 1));
        let out = net.pump();
        assert_eq!(out[0].dropped, Some(DropReason::ProvisionHole));
        assert_eq!(net.alarms.replacement_miss, 1);
    }

    #[test]
    fn failure_migration_moves_state() {
        let mut net = small_network();
        net.submit(frame(1, 0, 0x11));
        net.pump();
        let update = vec![
            Record::DeclareBox {
                port: PortId(5),
                kind: BoxKind::Static,
                stateful: true,
                default_behavior: CloudBehavior::Allow,
                name: "fw-standby".into(),
            },
            Record::MigrateState {
                from: PortId(2),
                to: PortId(5),
            },
            Record::RemoveBox { port: PortId(2) },
        ];
        net.apply_message(&encode_message(&update, 2)).unwrap();
        assert!(net.instance(PortId(2)).is_none());
        let standby = net.instance(PortId(5)).unwrap();
        assert_eq!(standby.state_entries(), 1);
        assert_eq!(
            standby.state_of(Label(1), &[0x11; 16]).unwrap().packets,
            1
        );
    }

    #[test]
    fn corrupt_frame_counts_an_alarm() {
        let mut net = small_network();
        net.submit(vec![0xDE, 0xAD]);
        let out = net.pump();
        assert_eq!(out[0].dropped, Some(DropReason::BadFrame));
        assert_eq!(net.alarms.bad_frames, 1);
    }
}
