//! Hamming-distance binary search tree over 256-bit descriptors.
//!
//! Internal nodes route on a single descriptor bit (0 left, 1 right). A leaf
//! splits once it holds more than `leaf_capacity` descriptors, on the unused
//! bit that divides it most evenly. Queries descend to one leaf and scan it.
//!
//! Binary layout (little-endian):
//!
//! ```text
//! "HBST" | version u16 | reserved u16 | total_len u64 | descriptors u64
//! | leaf_capacity u32 | map_count u32 | map_index u32 * map_count
//! | nodes in pre-order | crc32 u32
//! node: 0u8 split_bit u8 <left> <right>
//!     | 1u8 overflow u8 count u32 entry * count
//! entry: bits [u64; 4] | map_index u32 | u f64 | v f64 | orientation f64 | response f32
//! ```
//!
//! The checksum covers every byte before it.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::features::orb::{bit, hamming, BinaryDescriptor, Keypoint};

pub const MAGIC: &[u8; 4] = b"HBST";
pub const FORMAT_VERSION: u16 = 1;
pub const DEFAULT_LEAF_CAPACITY: usize = 100;
pub const DESCRIPTOR_BITS: usize = 256;

const HEADER_LEN: usize = 4 + 2 + 2 + 8 + 8 + 4 + 4;
const ENTRY_LEN: usize = 32 + 4 + 8 * 3 + 4;

#[derive(Debug, Clone)]
enum Node {
    Internal { split_bit: u8, left: u32, right: u32 },
    Leaf { entries: Vec<BinaryDescriptor>, overflow: bool },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchPair {
    pub query: Keypoint,
    pub reference: Keypoint,
    pub hamming: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchVote {
    pub query_map: u32,
    pub reference_map: u32,
    pub pairs: Vec<MatchPair>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TreeStats {
    pub depth: usize,
    pub leaves: usize,
    pub overflow_leaves: usize,
    pub largest_leaf: usize,
}

#[derive(Debug, Clone)]
pub struct Hbst {
    nodes: Vec<Node>,
    leaf_capacity: usize,
    maps: BTreeSet<u32>,
    len: usize,
}

impl Default for Hbst {
    fn default() -> Self {
        Self::new(DEFAULT_LEAF_CAPACITY)
    }
}

impl Hbst {
    pub fn new(leaf_capacity: usize) -> Self {
        assert!(leaf_capacity >= 1, "leaf capacity must be at least one");
        Self {
            nodes: vec![Node::Leaf {
                entries: Vec::new(),
                overflow: false,
            }],
            leaf_capacity,
            maps: BTreeSet::new(),
            len: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn leaf_capacity(&self) -> usize {
        self.leaf_capacity
    }

    pub fn maps(&self) -> &BTreeSet<u32> {
        &self.maps
    }

    pub fn contains_map(&self, map_index: u32) -> bool {
        self.maps.contains(&map_index)
    }

    /// Inserts all descriptors of one map.
    pub fn insert(&mut self, descs: &[BinaryDescriptor]) -> Result<()> {
        let Some(first) = descs.first() else {
            return Ok(());
        };
        let map = first.map_index;
        if descs.iter().any(|d| d.map_index != map) {
            return Err(Error::InvalidParameter(
                "descriptors of one insert must share a map index".into(),
            ));
        }
        if !self.maps.insert(map) {
            return Err(Error::DuplicateMap(map));
        }
        for d in descs {
            self.insert_one(*d);
        }
        Ok(())
    }

    fn insert_one(&mut self, d: BinaryDescriptor) {
        let mut used = [false; DESCRIPTOR_BITS];
        let mut node = 0usize;
        loop {
            match &self.nodes[node] {
                Node::Internal {
                    split_bit,
                    left,
                    right,
                } => {
                    used[*split_bit as usize] = true;
                    node = if d.bit(*split_bit as usize) {
                        *right as usize
                    } else {
                        *left as usize
                    };
                }
                Node::Leaf { .. } => break,
            }
        }
        if let Node::Leaf { entries, .. } = &mut self.nodes[node] {
            entries.push(d);
        }
        self.len += 1;
        self.maybe_split(node, &mut used);
    }

    fn maybe_split(&mut self, node: usize, used: &mut [bool; DESCRIPTOR_BITS]) {
        let Node::Leaf { entries, overflow } = &mut self.nodes[node] else {
            return;
        };
        if *overflow || entries.len() <= self.leaf_capacity {
            return;
        }
        let Some(split_bit) = best_split_bit(entries, used) else {
            *overflow = true;
            return;
        };
        let (ones, zeros): (Vec<_>, Vec<_>) = std::mem::take(entries)
            .into_iter()
            .partition(|d| d.bit(split_bit));
        let left = self.nodes.len();
        self.nodes.push(Node::Leaf {
            entries: zeros,
            overflow: false,
        });
        self.nodes.push(Node::Leaf {
            entries: ones,
            overflow: false,
        });
        self.nodes[node] = Node::Internal {
            split_bit: split_bit as u8,
            left: left as u32,
            right: left as u32 + 1,
        };
        used[split_bit] = true;
        self.maybe_split(left, used);
        self.maybe_split(left + 1, used);
        used[split_bit] = false;
    }

    /// Leaf reached by `bits`, with the number of bit tests on the way.
    fn descend(&self, bits: &[u64; 4]) -> (&[BinaryDescriptor], usize) {
        let mut node = 0usize;
        let mut tests = 0;
        loop {
            match &self.nodes[node] {
                Node::Internal {
                    split_bit,
                    left,
                    right,
                } => {
                    tests += 1;
                    node = if bit(bits, *split_bit as usize) {
                        *right as usize
                    } else {
                        *left as usize
                    };
                }
                Node::Leaf { entries, .. } => return (entries, tests),
            }
        }
    }

    /// Descriptors stored in the leaf `bits` routes to.
    pub fn leaf_for(&self, bits: &[u64; 4]) -> &[BinaryDescriptor] {
        self.descend(bits).0
    }

    /// Per query descriptor, the closest descriptor of every reference map in
    /// its leaf; matches within `tau_match` are grouped into one vote per
    /// reference map, in ascending map order.
    ///
    /// With `exclude_recent = Some(k)`, reference maps whose index is within
    /// `k` of the query map (including the query map itself) are skipped.
    pub fn query(
        &self,
        descs: &[BinaryDescriptor],
        tau_match: u32,
        exclude_recent: Option<u32>,
    ) -> Vec<MatchVote> {
        let mut votes: BTreeMap<(u32, u32), Vec<MatchPair>> = BTreeMap::new();
        let mut best: BTreeMap<u32, (u32, usize)> = BTreeMap::new();
        for q in descs {
            let (leaf, _) = self.descend(&q.bits);
            best.clear();
            for (i, r) in leaf.iter().enumerate() {
                if let Some(k) = exclude_recent {
                    if q.map_index.abs_diff(r.map_index) <= k {
                        continue;
                    }
                }
                let d = hamming(&q.bits, &r.bits);
                if d > tau_match {
                    continue;
                }
                best.entry(r.map_index)
                    .and_modify(|b| {
                        if d < b.0 {
                            *b = (d, i);
                        }
                    })
                    .or_insert((d, i));
            }
            for (&map, &(d, i)) in &best {
                votes.entry((q.map_index, map)).or_default().push(MatchPair {
                    query: q.keypoint,
                    reference: leaf[i].keypoint,
                    hamming: d,
                });
            }
        }
        votes
            .into_iter()
            .map(|((query_map, reference_map), pairs)| MatchVote {
                query_map,
                reference_map,
                pairs,
            })
            .collect()
    }

    /// Closest stored descriptor in the query's leaf, regardless of map.
    pub fn nearest(&self, bits: &[u64; 4]) -> Option<(&BinaryDescriptor, u32)> {
        let (leaf, _) = self.descend(bits);
        let mut out: Option<(&BinaryDescriptor, u32)> = None;
        for r in leaf {
            let d = hamming(bits, &r.bits);
            if out.is_none_or(|(_, b)| d < b) {
                out = Some((r, d));
            }
        }
        out
    }

    pub fn bit_tests(&self, bits: &[u64; 4]) -> usize {
        self.descend(bits).1
    }

    pub fn stats(&self) -> TreeStats {
        let mut stats = TreeStats::default();
        let mut stack = vec![(0usize, 0usize)];
        while let Some((node, depth)) = stack.pop() {
            match &self.nodes[node] {
                Node::Internal { left, right, .. } => {
                    stack.push((*left as usize, depth + 1));
                    stack.push((*right as usize, depth + 1));
                }
                Node::Leaf { entries, overflow } => {
                    stats.depth = stats.depth.max(depth);
                    stats.leaves += 1;
                    stats.overflow_leaves += *overflow as usize;
                    stats.largest_leaf = stats.largest_leaf.max(entries.len());
                }
            }
        }
        stats
    }

    /// Checks the structural invariants: split bits unique along every path,
    /// depth within the descriptor length, leaf sizes within capacity unless
    /// flagged, and every stored descriptor routing back to its own leaf.
    pub fn validate(&self) -> Result<()> {
        let mut count = 0usize;
        let mut used = [false; DESCRIPTOR_BITS];
        self.validate_node(0, 0, &mut used, &mut count)?;
        if count != self.len {
            return Err(Error::Malformed(format!(
                "tree holds {count} descriptors, header says {}",
                self.len
            )));
        }
        Ok(())
    }

    fn validate_node(
        &self,
        node: usize,
        depth: usize,
        used: &mut [bool; DESCRIPTOR_BITS],
        count: &mut usize,
    ) -> Result<()> {
        if depth > DESCRIPTOR_BITS {
            return Err(Error::Malformed("tree deeper than 256".into()));
        }
        match &self.nodes[node] {
            Node::Internal {
                split_bit,
                left,
                right,
            } => {
                let b = *split_bit as usize;
                if used[b] {
                    return Err(Error::Malformed(format!("bit {b} repeats on a path")));
                }
                used[b] = true;
                self.validate_node(*left as usize, depth + 1, used, count)?;
                self.validate_node(*right as usize, depth + 1, used, count)?;
                used[b] = false;
            }
            Node::Leaf { entries, overflow } => {
                if !overflow && entries.len() > self.leaf_capacity {
                    return Err(Error::Malformed("leaf over capacity".into()));
                }
                for e in entries {
                    if !std::ptr::eq(self.leaf_for(&e.bits).as_ptr(), entries.as_ptr()) {
                        return Err(Error::Malformed("descriptor in the wrong leaf".into()));
                    }
                }
                *count += entries.len();
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.len * ENTRY_LEN + 4 * self.maps.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&0u16.to_le_bytes());
        out.extend_from_slice(&0u64.to_le_bytes()); // total length, patched below
        out.extend_from_slice(&(self.len as u64).to_le_bytes());
        out.extend_from_slice(&(self.leaf_capacity as u32).to_le_bytes());
        out.extend_from_slice(&(self.maps.len() as u32).to_le_bytes());
        for m in &self.maps {
            out.extend_from_slice(&m.to_le_bytes());
        }
        self.write_node(0, &mut out);
        let total = (out.len() + 4) as u64;
        out[8..16].copy_from_slice(&total.to_le_bytes());
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    fn write_node(&self, node: usize, out: &mut Vec<u8>) {
        match &self.nodes[node] {
            Node::Internal {
                split_bit,
                left,
                right,
            } => {
                out.push(0);
                out.push(*split_bit);
                self.write_node(*left as usize, out);
                self.write_node(*right as usize, out);
            }
            Node::Leaf { entries, overflow } => {
                out.push(1);
                out.push(*overflow as u8);
                out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
                for e in entries {
                    for w in e.bits {
                        out.extend_from_slice(&w.to_le_bytes());
                    }
                    out.extend_from_slice(&e.map_index.to_le_bytes());
                    out.extend_from_slice(&e.keypoint.u.to_le_bytes());
                    out.extend_from_slice(&e.keypoint.v.to_le_bytes());
                    out.extend_from_slice(&e.keypoint.orientation.to_le_bytes());
                    out.extend_from_slice(&e.keypoint.response.to_le_bytes());
                }
            }
        }
    }

    pub fn save<W: Write>(&self, mut sink: W) -> Result<()> {
        sink.write_all(&self.to_bytes())?;
        sink.flush()?;
        Ok(())
    }

    pub fn load<R: Read>(mut source: R) -> Result<Self> {
        let mut bytes = Vec::new();
        source.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 {
            return Err(if MAGIC.starts_with(bytes) {
                Error::Truncated
            } else {
                Error::BadMagic
            });
        }
        if &bytes[..4] != MAGIC {
            return Err(Error::BadMagic);
        }
        let mut r = Reader { bytes, pos: 4 };
        let version = r.u16()?;
        if version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let _reserved = r.u16()?;
        let total = r.u64()?;
        if (bytes.len() as u64) < total {
            return Err(Error::Truncated);
        }
        if bytes.len() as u64 != total {
            return Err(Error::Malformed(format!(
                "{} trailing bytes",
                bytes.len() as u64 - total
            )));
        }
        let body = &bytes[..bytes.len() - 4];
        let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().expect("4 bytes"));
        let computed = crc32fast::hash(body);
        if stored != computed {
            return Err(Error::Checksum { stored, computed });
        }

        let mut r = Reader { bytes: body, pos: r.pos };
        let len = r.u64()? as usize;
        let leaf_capacity = r.u32()? as usize;
        if leaf_capacity == 0 {
            return Err(Error::Malformed("zero leaf capacity".into()));
        }
        let map_count = r.u32()? as usize;
        let mut maps = BTreeSet::new();
        for _ in 0..map_count {
            maps.insert(r.u32()?);
        }
        let mut db = Hbst {
            nodes: Vec::new(),
            leaf_capacity,
            maps,
            len,
        };
        db.read_node(&mut r, 0)?;
        if r.pos != body.len() {
            return Err(Error::Malformed("bytes after the last node".into()));
        }
        db.validate()?;
        if db.nodes_maps().any(|m| !db.maps.contains(&m)) {
            return Err(Error::Malformed("descriptor of an unlisted map".into()));
        }
        Ok(db)
    }

    fn nodes_maps(&self) -> impl Iterator<Item = u32> + '_ {
        self.nodes.iter().flat_map(|n| match n {
            Node::Leaf { entries, .. } => entries.iter().map(|e| e.map_index).collect::<Vec<_>>(),
            Node::Internal { .. } => Vec::new(),
        })
    }

    fn read_node(&mut self, r: &mut Reader<'_>, depth: usize) -> Result<u32> {
        if depth > DESCRIPTOR_BITS {
            return Err(Error::Malformed("tree deeper than 256".into()));
        }
        let id = self.nodes.len() as u32;
        match r.u8()? {
            0 => {
                let split_bit = r.u8()?;
                self.nodes.push(Node::Internal {
                    split_bit,
                    left: 0,
                    right: 0,
                });
                let left = self.read_node(r, depth + 1)?;
                let right = self.read_node(r, depth + 1)?;
                self.nodes[id as usize] = Node::Internal {
                    split_bit,
                    left,
                    right,
                };
            }
            1 => {
                let overflow = match r.u8()? {
                    0 => false,
                    1 => true,
                    f => return Err(Error::Malformed(format!("overflow flag {f}"))),
                };
                let count = r.u32()? as usize;
                if count > r.remaining() / ENTRY_LEN {
                    return Err(Error::Malformed("leaf count exceeds file".into()));
                }
                let mut entries = Vec::with_capacity(count);
                for _ in 0..count {
                    let bits = [r.u64()?, r.u64()?, r.u64()?, r.u64()?];
                    let map_index = r.u32()?;
                    let u = r.f64()?;
                    let v = r.f64()?;
                    let orientation = r.f64()?;
                    let response = f32::from_bits(r.u32()?);
                    entries.push(BinaryDescriptor {
                        bits,
                        keypoint: Keypoint {
                            u,
                            v,
                            orientation,
                            response,
                        },
                        map_index,
                    });
                }
                self.nodes.push(Node::Leaf { entries, overflow });
            }
            t => return Err(Error::Malformed(format!("node tag {t}"))),
        }
        Ok(id)
    }
}

/// Unused bit whose split is closest to half/half; lowest index on ties.
/// `None` when no unused bit separates the entries.
fn best_split_bit(entries: &[BinaryDescriptor], used: &[bool; DESCRIPTOR_BITS]) -> Option<usize> {
    let n = entries.len();
    let mut ones = [0usize; DESCRIPTOR_BITS];
    for e in entries {
        for (i, c) in ones.iter_mut().enumerate() {
            *c += e.bit(i) as usize;
        }
    }
    // Balance |2·ones − n| orders bits exactly as the binary entropy does.
    (0..DESCRIPTOR_BITS)
        .filter(|&b| !used[b] && ones[b] > 0 && ones[b] < n)
        .min_by_key(|&b| (2 * ones[b]).abs_diff(n))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let end = self.pos.checked_add(N).ok_or(Error::Truncated)?;
        let chunk = self.bytes.get(self.pos..end).ok_or(Error::Truncated)?;
        self.pos = end;
        Ok(chunk.try_into().expect("length checked"))
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take::<1>()?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        self.take().map(u16::from_le_bytes)
    }

    fn u32(&mut self) -> Result<u32> {
        self.take().map(u32::from_le_bytes)
    }

    fn u64(&mut self) -> Result<u64> {
        self.take().map(u64::from_le_bytes)
    }

    fn f64(&mut self) -> Result<f64> {
        self.take().map(f64::from_le_bytes)
    }
}
