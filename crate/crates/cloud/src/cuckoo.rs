//! A (2,4)-cuckoo hash table keyed by 16-bit labels.
//!
//! Every lookup probes exactly two buckets of four slots each, so the cost
//! is constant no matter how many labels are installed. A table sized for a
//! full 16-bit label space stays in the tens-of-kilobytes range, small
//! enough to live in cache next to the packet path.

use sics_wire::Label;

const SLOTS_PER_BUCKET: usize = 4;
const MAX_KICKS: usize = 256;

type Slot<V> = Option<(u16, V)>;

/// Fixed-function label → value map with O(1) expected lookup.
#[derive(Clone, Debug)]
pub struct LabelTable<V> {
    buckets: Vec<[Slot<V>; SLOTS_PER_BUCKET]>,
    mask: u64,
    seeds: (u64, u64),
    generation: u64,
    len: usize,
}

fn mix(key: u16, seed: u64) -> u64 {
    let mut x = (key as u64) ^ seed;
    x = x.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    x ^= x >> 29;
    x = x.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x ^= x >> 32;
    x
}

impl<V: Copy> LabelTable<V> {
    /// Creates a table able to hold at least `capacity` labels before its
    /// first grow.
    pub fn with_capacity(capacity: usize) -> Self {
        // Aim for <= 50% occupancy so random-walk insertion terminates fast.
        let want = (capacity.max(8) * 2 / SLOTS_PER_BUCKET).next_power_of_two();
        Self::with_buckets(want, 0)
    }

    pub fn new() -> Self {
        Self::with_capacity(64)
    }

    fn with_buckets(buckets: usize, generation: u64) -> Self {
        LabelTable {
            buckets: vec![[None; SLOTS_PER_BUCKET]; buckets],
            mask: buckets as u64 - 1,
            seeds: (
                mix(0x5105, 0xA076_1D64_78BD_642F ^ generation),
                mix(0x1CE5, 0xE703_7ED1_A0B4_28DB ^ generation.rotate_left(17)),
            ),
            generation,
            len: 0,
        }
    }

    fn bucket_pair(&self, key: u16) -> (usize, usize) {
        let b1 = (mix(key, self.seeds.0) & self.mask) as usize;
        let b2 = (mix(key, self.seeds.1) & self.mask) as usize;
        (b1, b2)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn get(&self, key: Label) -> Option<V> {
        let (b1, b2) = self.bucket_pair(key.0);
        for slot in &self.buckets[b1] {
            if let Some((k, v)) = slot {
                if *k == key.0 {
                    return Some(*v);
                }
            }
        }
        for slot in &self.buckets[b2] {
            if let Some((k, v)) = slot {
                if *k == key.0 {
                    return Some(*v);
                }
            }
        }
        None
    }

    pub fn contains(&self, key: Label) -> bool {
        self.get(key).is_some()
    }

    /// Inserts or overwrites. Returns the previous value if the key was
    /// already present.
    pub fn insert(&mut self, key: Label, value: V) -> Option<V> {
        let (b1, b2) = self.bucket_pair(key.0);
        for b in [b1, b2] {
            for slot in &mut self.buckets[b] {
                if let Some((k, v)) = slot {
                    if *k == key.0 {
                        let old = *v;
                        *v = value;
                        return Some(old);
                    }
                }
            }
        }
        self.place(key.0, value);
        self.len += 1;
        None
    }

    fn place(&mut self, key: u16, value: V) {
        let (mut key, mut value) = (key, value);
        let mut bucket = (mix(key, self.seeds.0) & self.mask) as usize;
        for kick in 0..MAX_KICKS {
            for slot in &mut self.buckets[bucket] {
                if slot.is_none() {
                    *slot = Some((key, value));
                    return;
                }
            }
            // Evict a resident deterministically and retry it in its
            // alternate bucket.
            let victim = kick % SLOTS_PER_BUCKET;
            let (vk, vv) = self.buckets[bucket][victim].take().unwrap();
            self.buckets[bucket][victim] = Some((key, value));
            key = vk;
            value = vv;
            let (b1, b2) = self.bucket_pair(key);
            bucket = if bucket == b1 { b2 } else { b1 };
        }
        self.grow();
        self.place(key, value);
    }

    fn grow(&mut self) {
        let next = Self::with_buckets(self.buckets.len() * 2, self.generation + 1);
        let old = std::mem::replace(self, next);
        self.len = old.len;
        for bucket in old.buckets {
            for slot in bucket.into_iter().flatten() {
                self.place(slot.0, slot.1);
            }
        }
    }

    pub fn remove(&mut self, key: Label) -> Option<V> {
        let (b1, b2) = self.bucket_pair(key.0);
        for b in [b1, b2] {
            for slot in &mut self.buckets[b] {
                if let Some((k, _)) = slot {
                    if *k == key.0 {
                        let (_, v) = slot.take().unwrap();
                        self.len -= 1;
                        return Some(v);
                    }
                }
            }
        }
        None
    }

    /// Iterates occupied entries in unspecified order.
    pub fn iter(&self) -> impl Iterator<Item = (Label, V)> + '_ {
        self.buckets
            .iter()
            .flatten()
            .filter_map(|slot| slot.map(|(k, v)| (Label(k), v)))
    }

    pub fn memory_bytes(&self) -> usize {
        self.buckets.len() * SLOTS_PER_BUCKET * std::mem::size_of::<Slot<V>>()
            + std::mem::size_of::<Self>()
    }
}

impl<V: Copy> Default for LabelTable<V> {
    fn default() -> Self {
        Self::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn insert_get_remove() {
        let mut t: LabelTable<u32> = LabelTable::new();
        assert_eq!(t.get(Label(7)), None);
        assert_eq!(t.insert(Label(7), 70), None);
        assert_eq!(t.insert(Label(9), 90), None);
        assert_eq!(t.get(Label(7)), Some(70));
        assert_eq!(t.insert(Label(7), 71), Some(70));
        assert_eq!(t.get(Label(7)), Some(71));
        assert_eq!(t.remove(Label(7)), Some(71));
        assert_eq!(t.get(Label(7)), None);
        assert_eq!(t.len(), 1);
    }

    #[test]
    fn holds_the_full_label_space() {
        let mut t: LabelTable<u16> = LabelTable::with_capacity(1 << 16);
        for k in 1..=u16::MAX {
            t.insert(Label(k), k.wrapping_mul(3));
        }
        assert_eq!(t.len(), u16::MAX as usize);
        for k in 1..=u16::MAX {
            assert_eq!(t.get(Label(k)), Some(k.wrapping_mul(3)));
        }
    }

    #[test]
    fn grows_from_a_tiny_footprint() {
        let mut t: LabelTable<u16> = LabelTable::with_capacity(8);
        for k in 1..5000u16 {
            t.insert(Label(k), k);
        }
        for k in 1..5000u16 {
            assert_eq!(t.get(Label(k)), Some(k));
        }
    }

    #[test]
    fn footprint_stays_cache_sized() {
        // A table holding a few thousand labels is 64 KB-class; even sized
        // for the whole 16-bit label space it stays under a megabyte.
        let t: LabelTable<u16> = LabelTable::with_capacity(4096);
        assert!(t.memory_bytes() <= 96 * 1024, "{}", t.memory_bytes());
        let full: LabelTable<u16> = LabelTable::with_capacity(1 << 16);
        assert!(full.memory_bytes() <= 1024 * 1024, "{}", full.memory_bytes());
    }
}
