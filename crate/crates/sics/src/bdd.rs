//! Canonical reduced ordered BDDs over the fixed 104-variable header space.
//!
//! Every predicate in the system — middlebox behaviors, forwarding entries,
//! equivalence classes — is a node in one [`Engine`]. Nodes are hash-consed,
//! so two predicates are logically equal exactly when their [`Predicate`]
//! handles are equal, and all Boolean operations are memoized.
//!
//! The variable order is fixed and field-major, most significant bit first
//! within each field: srcIP occupies variables 0..32, srcPort 32..48,
//! dstIP 48..80, dstPort 80..96 and protocol 96..104. Prefix rules are
//! linear-size under this order.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU32, Ordering};

/// Total number of decision variables.
pub const HEADER_BITS: u16 = 104;

const TERMINAL_VAR: u8 = HEADER_BITS as u8;
const FALSE_IDX: u32 = 0;
const TRUE_IDX: u32 = 1;

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
struct Node {
    var: u8,
    low: u32,
    high: u32,
}

/// A canonical predicate handle. Handles are only meaningful together with
/// the engine that created them; equality of handles from the same engine
/// is logical equivalence.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub struct Predicate {
    engine: u32,
    idx: u32,
}

impl Predicate {
    /// Stable integer id, unique per engine. Useful as a map key.
    pub fn id(self) -> u32 {
        self.idx
    }
}

static NEXT_ENGINE_ID: AtomicU32 = AtomicU32::new(1);

/// Hash-consing BDD engine. Construction requires `&mut self`; evaluation
/// and counting are read-only and safe to call from multiple threads.
pub struct Engine {
    id: u32,
    nodes: Vec<Node>,
    unique: HashMap<Node, u32>,
    and_cache: HashMap<(u32, u32), u32>,
    or_cache: HashMap<(u32, u32), u32>,
    not_cache: HashMap<u32, u32>,
    restrict_cache: HashMap<(u32, u8, bool), u32>,
    exists_cache: HashMap<(u32, u8, u8), u32>,
}

impl Engine {
    pub fn new() -> Self {
        let mut nodes = Vec::with_capacity(1 << 12);
        nodes.push(Node {
            var: TERMINAL_VAR,
            low: FALSE_IDX,
            high: FALSE_IDX,
        });
        nodes.push(Node {
            var: TERMINAL_VAR,
            low: TRUE_IDX,
            high: TRUE_IDX,
        });
        Engine {
            id: NEXT_ENGINE_ID.fetch_add(1, Ordering::Relaxed),
            nodes,
            unique: HashMap::new(),
            and_cache: HashMap::new(),
            or_cache: HashMap::new(),
            not_cache: HashMap::new(),
            restrict_cache: HashMap::new(),
            exists_cache: HashMap::new(),
        }
    }

    pub const fn always_false(&self) -> Predicate {
        Predicate {
            engine: self.id,
            idx: FALSE_IDX,
        }
    }

    pub const fn always_true(&self) -> Predicate {
        Predicate {
            engine: self.id,
            idx: TRUE_IDX,
        }
    }

    pub fn is_false(&self, p: Predicate) -> bool {
        self.check(p) == FALSE_IDX
    }

    pub fn is_true(&self, p: Predicate) -> bool {
        self.check(p) == TRUE_IDX
    }

    /// Number of live nodes, terminals included.
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Rough accounting of engine memory: node store, unique table and
    /// operation caches.
    pub fn memory_bytes(&self) -> usize {
        use std::mem::size_of;
        self.nodes.len() * size_of::<Node>()
            + self.unique.len() * (size_of::<Node>() + size_of::<u32>() + 8)
            + (self.and_cache.len() + self.or_cache.len()) * (size_of::<(u32, u32, u32)>() + 8)
            + self.not_cache.len() * (size_of::<(u32, u32)>() + 8)
            + self.restrict_cache.len() * 24
            + self.exists_cache.len() * 24
    }

    #[inline]
    fn check(&self, p: Predicate) -> u32 {
        assert_eq!(
            p.engine, self.id,
            "predicate belongs to engine {}, not engine {}",
            p.engine, self.id
        );
        p.idx
    }

    fn wrap(&self, idx: u32) -> Predicate {
        Predicate {
            engine: self.id,
            idx,
        }
    }

    fn mk_node(&mut self, var: u8, low: u32, high: u32) -> u32 {
        if low == high {
            return low;
        }
        let node = Node { var, low, high };
        if let Some(&idx) = self.unique.get(&node) {
            return idx;
        }
        let idx = self.nodes.len() as u32;
        self.nodes.push(node);
        self.unique.insert(node, idx);
        idx
    }

    /// The predicate "header bit `bit` is 1".
    pub fn atom(&mut self, bit: u16) -> Predicate {
        assert!(
            bit < HEADER_BITS,
            "bit index {bit} out of range 0..{HEADER_BITS}"
        );
        let idx = self.mk_node(bit as u8, FALSE_IDX, TRUE_IDX);
        self.wrap(idx)
    }

    pub fn and(&mut self, a: Predicate, b: Predicate) -> Predicate {
        let (a, b) = (self.check(a), self.check(b));
        let idx = self.and_rec(a, b);
        self.wrap(idx)
    }

    pub fn or(&mut self, a: Predicate, b: Predicate) -> Predicate {
        let (a, b) = (self.check(a), self.check(b));
        let idx = self.or_rec(a, b);
        self.wrap(idx)
    }

    pub fn not(&mut self, a: Predicate) -> Predicate {
        let a = self.check(a);
        let idx = self.not_rec(a);
        self.wrap(idx)
    }

    /// `a ∧ ¬b`, the residual-set workhorse.
    pub fn diff(&mut self, a: Predicate, b: Predicate) -> Predicate {
        let nb = self.not(b);
        self.and(a, nb)
    }

    /// True when `a` and `b` share at least one header.
    pub fn intersects(&mut self, a: Predicate, b: Predicate) -> bool {
        !self.is_false(self.and(a, b))
    }

    /// True when every header in `a` is in `b`.
    pub fn implies(&mut self, a: Predicate, b: Predicate) -> bool {
        self.is_false(self.diff(a, b))
    }

    fn and_rec(&mut self, a: u32, b: u32) -> u32 {
        if a == b {
            return a;
        }
        if a == FALSE_IDX || b == FALSE_IDX {
            return FALSE_IDX;
        }
        if a == TRUE_IDX {
            return b;
        }
        if b == TRUE_IDX {
            return a;
        }
        let key = (a.min(b), a.max(b));
        if let Some(&r) = self.and_cache.get(&key) {
            return r;
        }
        let (na, nb) = (self.nodes[a as usize], self.nodes[b as usize]);
        let var = na.var.min(nb.var);
        let (a0, a1) = if na.var == var { (na.low, na.high) } else { (a, a) };
        let (b0, b1) = if nb.var == var { (nb.low, nb.high) } else { (b, b) };
        let low = self.and_rec(a0, b0);
        let high = self.and_rec(a1, b1);
        let r = self.mk_node(var, low, high);
        self.and_cache.insert(key, r);
        r
    }

    fn or_rec(&mut self, a: u32, b: u32) -> u32 {
        if a == b {
            return a;
        }
        if a == TRUE_IDX || b == TRUE_IDX {
            return TRUE_IDX;
        }
        if a == FALSE_IDX {
            return b;
        }
        if b == FALSE_IDX {
            return a;
        }
        let key = (a.min(b), a.max(b));
        if let Some(&r) = self.or_cache.get(&key) {
            return r;
        }
        let (na, nb) = (self.nodes[a as usize], self.nodes[b as usize]);
        let var = na.var.min(nb.var);
        let (a0, a1) = if na.var == var { (na.low, na.high) } else { (a, a) };
        let (b0, b1) = if nb.var == var { (nb.low, nb.high) } else { (b, b) };
        let low = self.or_rec(a0, b0);
        let high = self.or_rec(a1, b1);
        let r = self.mk_node(var, low, high);
        self.or_cache.insert(key, r);
        r
    }

    fn not_rec(&mut self, a: u32) -> u32 {
        if a == FALSE_IDX {
            return TRUE_IDX;
        }
        if a == TRUE_IDX {
            return FALSE_IDX;
        }
        if let Some(&r) = self.not_cache.get(&a) {
            return r;
        }
        let n = self.nodes[a as usize];
        let low = self.not_rec(n.low);
        let high = self.not_rec(n.high);
        let r = self.mk_node(n.var, low, high);
        self.not_cache.insert(a, r);
        self.not_cache.insert(r, a);
        r
    }

    /// Shannon cofactor: `p` with variable `var` pinned to `val`.
    pub fn restrict(&mut self, p: Predicate, var: u16, val: bool) -> Predicate {
        let p = self.check(p);
        assert!(var < HEADER_BITS);
        let idx = self.restrict_rec(p, var as u8, val);
        self.wrap(idx)
    }

    fn restrict_rec(&mut self, a: u32, var: u8, val: bool) -> u32 {
        if a <= TRUE_IDX {
            return a;
        }
        let n = self.nodes[a as usize];
        if n.var > var {
            return a;
        }
        if n.var == var {
            return if val { n.high } else { n.low };
        }
        let key = (a, var, val);
        if let Some(&r) = self.restrict_cache.get(&key) {
            return r;
        }
        let low = self.restrict_rec(n.low, var, val);
        let high = self.restrict_rec(n.high, var, val);
        let r = self.mk_node(n.var, low, high);
        self.restrict_cache.insert(key, r);
        r
    }

    /// Existential quantification over the half-open variable range
    /// `[start, end)`: the set of headers that match `p` for *some* setting
    /// of those variables.
    pub fn exists_range(&mut self, p: Predicate, start: u16, end: u16) -> Predicate {
        let p = self.check(p);
        assert!(start <= end && end <= HEADER_BITS);
        let idx = self.exists_rec(p, start as u8, end as u8);
        self.wrap(idx)
    }

    fn exists_rec(&mut self, a: u32, start: u8, end: u8) -> u32 {
        if a <= TRUE_IDX {
            return a;
        }
        let n = self.nodes[a as usize];
        if n.var >= end {
            return a;
        }
        let key = (a, start, end);
        if let Some(&r) = self.exists_cache.get(&key) {
            return r;
        }
        let low = self.exists_rec(n.low, start, end);
        let high = self.exists_rec(n.high, start, end);
        let r = if n.var >= start {
            self.or_rec(low, high)
        } else {
            self.mk_node(n.var, low, high)
        };
        self.exists_cache.insert(key, r);
        r
    }

    /// Follows the decision path selected by the packed header bits.
    pub fn evaluate_bits(&self, p: Predicate, bits: &[u8; 13]) -> bool {
        let mut cur = self.check(p);
        while cur > TRUE_IDX {
            let n = self.nodes[cur as usize];
            let bit = (bits[(n.var >> 3) as usize] >> (7 - (n.var & 7))) & 1;
            cur = if bit == 1 { n.high } else { n.low };
        }
        cur == TRUE_IDX
    }

    /// Exact number of satisfying 104-bit headers. The maximum, 2^104, fits
    /// comfortably in the 128-bit result.
    pub fn sat_count(&self, p: Predicate) -> u128 {
        let root = self.check(p);
        let mut memo: HashMap<u32, u128> = HashMap::new();
        let below = self.sat_rec(root, &mut memo);
        let root_var = if root <= TRUE_IDX {
            TERMINAL_VAR
        } else {
            self.nodes[root as usize].var
        };
        below << root_var
    }

    fn sat_rec(&self, a: u32, memo: &mut HashMap<u32, u128>) -> u128 {
        if a == FALSE_IDX {
            return 0;
        }
        if a == TRUE_IDX {
            return 1;
        }
        if let Some(&c) = memo.get(&a) {
            return c;
        }
        let n = self.nodes[a as usize];
        let var_of = |idx: u32| {
            if idx <= TRUE_IDX {
                TERMINAL_VAR
            } else {
                self.nodes[idx as usize].var
            }
        };
        let low = self.sat_rec(n.low, memo) << (var_of(n.low) - n.var - 1);
        let high = self.sat_rec(n.high, memo) << (var_of(n.high) - n.var - 1);
        let c = low + high;
        memo.insert(a, c);
        c
    }

    /// Draws one satisfying header uniformly at random, or `None` for the
    /// empty predicate.
    pub fn sample_bits<R: rand::Rng>(&self, p: Predicate, rng: &mut R) -> Option<[u8; 13]> {
        let root = self.check(p);
        if root == FALSE_IDX {
            return None;
        }
        let mut memo: HashMap<u32, u128> = HashMap::new();
        let mut bits = [0u8; 13];
        let mut set = |bits: &mut [u8; 13], var: u8, val: bool| {
            if val {
                bits[(var >> 3) as usize] |= 1 << (7 - (var & 7));
            }
        };
        // Free variables above the root.
        let mut cur = root;
        let top_var = if root <= TRUE_IDX {
            TERMINAL_VAR
        } else {
            self.nodes[root as usize].var
        };
        for var in 0..top_var {
            set(&mut bits, var, rng.random::<bool>());
        }
        while cur > TRUE_IDX {
            let n = self.nodes[cur as usize];
            let var_of = |idx: u32| {
                if idx <= TRUE_IDX {
                    TERMINAL_VAR
                } else {
                    self.nodes[idx as usize].var
                }
            };
            let w_low = self.sat_rec(n.low, &mut memo) << (var_of(n.low) - n.var - 1);
            let w_high = self.sat_rec(n.high, &mut memo) << (var_of(n.high) - n.var - 1);
            let total = w_low + w_high;
            let pick_high = if w_low == 0 {
                true
            } else if w_high == 0 {
                false
            } else {
                // Sample proportionally; 64 bits of precision is plenty for
                // a uniform choice between branch weights.
                let r = rng.random::<u64>() as u128 * (total >> 64).max(1);
                let r = if total > u64::MAX as u128 {
                    r
                } else {
                    (rng.random::<u64>() as u128) % total
                };
                r >= w_low
            };
            set(&mut bits, n.var, pick_high);
            let next = if pick_high { n.high } else { n.low };
            let next_var = if next <= TRUE_IDX {
                TERMINAL_VAR
            } else {
                self.nodes[next as usize].var
            };
            for var in n.var + 1..next_var {
                set(&mut bits, var, rng.random::<bool>());
            }
            cur = next;
        }
        debug_assert!(self.evaluate_bits(self.wrap(root), &bits));
        Some(bits)
    }
}

impl Default for Engine {
    fn default() -> Self {
        Self::new()
    }
}
