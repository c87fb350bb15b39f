//! Downlink metadata codecs: acknowledgments, joint feedback and slot schedules.
//!
//! Wire format, all integers big-endian, payload bits MSB-first and zero-padded
//! to a byte boundary:
//!
//! | id     | scheme        | header                                              |
//! |--------|---------------|-----------------------------------------------------|
//! | `0x00` | bitmap ack    | `N: u32`                                            |
//! | `0x01` | enum ack      | `K: u16`                                            |
//! | `0x02` | hashed ack    | `K: u16, width: u8, salt: u32`                      |
//! | `0x10` | feedback      | inner ack id `u8`, inner ack header, `exponent: u8` |
//! | `0x20` | schedule      | `K: u16, B: u16, salt: u32, bucket: u8`             |
//!
//! Fingerprints and bucket hashes use [`crate::hash::mix64`], so packets are
//! reproducible from their inputs on any platform.

use num_bigint::BigUint;
use num_traits::{One, ToPrimitive, Zero};
use thiserror::Error;

use crate::bits::{BitError, BitReader, BitWriter};
use crate::hash::mix64;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DownlinkError {
    #[error("invalid input: {0}")]
    Config(String),
    #[error("malformed packet: {0}")]
    Decode(String),
    #[error("unknown scheme id 0x{0:02x}")]
    UnknownScheme(u8),
    #[error("packet carries scheme {found:?}, expected {expected:?}")]
    WrongScheme { expected: Scheme, found: Scheme },
    #[error("no usable salt after {0} attempts")]
    SaltsExhausted(u32),
    #[error(transparent)]
    Bits(#[from] BitError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scheme {
    BitmapAck,
    EnumAck,
    HashedAck,
    Feedback,
    Schedule,
}

impl Scheme {
    pub fn id(self) -> u8 {
        match self {
            Scheme::BitmapAck => 0x00,
            Scheme::EnumAck => 0x01,
            Scheme::HashedAck => 0x02,
            Scheme::Feedback => 0x10,
            Scheme::Schedule => 0x20,
        }
    }

    pub fn from_id(id: u8) -> Result<Self, DownlinkError> {
        Ok(match id {
            0x00 => Scheme::BitmapAck,
            0x01 => Scheme::EnumAck,
            0x02 => Scheme::HashedAck,
            0x10 => Scheme::Feedback,
            0x20 => Scheme::Schedule,
            other => return Err(DownlinkError::UnknownScheme(other)),
        })
    }

    fn fixed_header_len(self) -> Option<usize> {
        match self {
            Scheme::BitmapAck => Some(4),
            Scheme::EnumAck => Some(2),
            Scheme::HashedAck => Some(7),
            Scheme::Feedback => None,
            Scheme::Schedule => Some(9),
        }
    }
}

/// Scheme-tagged bit string.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MetadataPacket {
    pub scheme: Scheme,
    pub header: Vec<u8>,
    pub payload: Vec<u8>,
    /// Payload length before padding. Packets parsed from bytes report the
    /// padded length; decoders only read what the header implies.
    pub payload_bits: usize,
}

impl MetadataPacket {
    fn new(scheme: Scheme, header: Vec<u8>, payload: BitWriter) -> Self {
        let payload_bits = payload.len();
        Self {
            scheme,
            header,
            payload: payload.into_bytes(),
            payload_bits,
        }
    }

    /// Scheme byte + header + payload, in bits, before padding.
    pub fn total_bits(&self) -> usize {
        8 * (1 + self.header.len()) + self.payload_bits
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(1 + self.header.len() + self.payload.len());
        out.push(self.scheme.id());
        out.extend_from_slice(&self.header);
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DownlinkError> {
        let (&id, rest) = bytes
            .split_first()
            .ok_or_else(|| DownlinkError::Decode("empty packet".into()))?;
        let scheme = Scheme::from_id(id)?;
        let header_len = match scheme.fixed_header_len() {
            Some(n) => n,
            None => {
                let inner = Scheme::from_id(*rest.first().ok_or_else(|| short("feedback header"))?)?;
                match inner {
                    Scheme::EnumAck | Scheme::HashedAck => 1 + inner.fixed_header_len().unwrap_or(0) + 1,
                    other => {
                        return Err(DownlinkError::Decode(format!(
                            "feedback cannot wrap scheme {other:?}"
                        )))
                    }
                }
            }
        };
        if rest.len() < header_len {
            return Err(short("header"));
        }
        let (header, payload) = rest.split_at(header_len);
        Ok(Self {
            scheme,
            header: header.to_vec(),
            payload: payload.to_vec(),
            payload_bits: payload.len() * 8,
        })
    }

    fn expect(&self, scheme: Scheme) -> Result<(), DownlinkError> {
        if self.scheme == scheme {
            Ok(())
        } else {
            Err(DownlinkError::WrongScheme {
                expected: scheme,
                found: self.scheme,
            })
        }
    }

    fn reader(&self) -> BitReader<'_> {
        BitReader::new(&self.payload, self.payload_bits)
    }
}

fn short(what: &str) -> DownlinkError {
    DownlinkError::Decode(format!("truncated {what}"))
}

fn be_u16(b: &[u8]) -> u16 {
    u16::from_be_bytes([b[0], b[1]])
}

fn be_u32(b: &[u8]) -> u32 {
    u32::from_be_bytes([b[0], b[1], b[2], b[3]])
}

fn check_sorted(ids: &[u64]) -> Result<(), DownlinkError> {
    if ids.windows(2).any(|w| w[0] >= w[1]) {
        return Err(DownlinkError::Config("ids must be strictly increasing".into()));
    }
    Ok(())
}

fn k_u16(k: usize) -> Result<u16, DownlinkError> {
    u16::try_from(k).map_err(|_| DownlinkError::Config(format!("K = {k} exceeds the 16-bit header field")))
}

// ---------------------------------------------------------------------------
// Bitmap acknowledgment

pub fn encode_ack_bitmap(universe: u32, ids: &[u64]) -> Result<MetadataPacket, DownlinkError> {
    check_sorted(ids)?;
    if ids.last().is_some_and(|&id| id >= universe as u64) {
        return Err(DownlinkError::Config("id outside the universe".into()));
    }
    let mut w = BitWriter::new();
    let mut next = ids.iter().peekable();
    for i in 0..universe as u64 {
        let hit = next.peek().is_some_and(|&&id| id == i);
        if hit {
            next.next();
        }
        w.push_bit(hit);
    }
    Ok(MetadataPacket::new(Scheme::BitmapAck, universe.to_be_bytes().to_vec(), w))
}

pub fn decode_ack_bitmap(packet: &MetadataPacket) -> Result<Vec<u64>, DownlinkError> {
    packet.expect(Scheme::BitmapAck)?;
    let n = be_u32(&packet.header);
    let mut r = packet.reader();
    let mut ids = Vec::new();
    for i in 0..n as u64 {
        if r.read_bit()? {
            ids.push(i);
        }
    }
    Ok(ids)
}

// ---------------------------------------------------------------------------
// Enumerative acknowledgment

/// `C(n, k)` for `n` up to `2^64` and moderate `k`.
pub fn binomial(n: u128, k: u64) -> BigUint {
    if (k as u128) > n {
        return BigUint::zero();
    }
    let k = k.min((n - k as u128) as u64);
    let mut c = BigUint::one();
    for i in 0..k {
        c *= BigUint::from(n - i as u128);
        c /= BigUint::from(i + 1);
    }
    c
}

/// Payload bits of an enumerative ack: `⌈log2 C(N, K)⌉`.
pub fn enumerative_bits(universe: u128, k: u64) -> u64 {
    let c = binomial(universe, k);
    if c.is_zero() {
        return 0;
    }
    (c - 1u32).bits()
}

/// Lexicographic rank of a sorted `K`-subset of `[0, N)`.
pub fn subset_rank(universe: u128, ids: &[u64]) -> BigUint {
    let k = ids.len() as u64;
    let mut rank = BigUint::zero();
    let mut prev: i128 = -1;
    for (i, &c) in ids.iter().enumerate() {
        // Subsets agreeing on the first i elements whose next element is in (prev, c).
        let r = k - i as u64;
        let below = binomial((universe as i128 - prev - 1) as u128, r);
        let from_c = binomial(universe - c as u128, r);
        rank += below - from_c;
        prev = c as i128;
    }
    rank
}

/// Inverse of [`subset_rank`].
pub fn subset_unrank(universe: u128, k: u64, rank: &BigUint) -> Result<Vec<u64>, DownlinkError> {
    if *rank >= binomial(universe, k) {
        return Err(DownlinkError::Decode("rank exceeds C(N, K)".into()));
    }
    let mut rest = rank.clone();
    let mut ids = Vec::with_capacity(k as usize);
    let mut prev: i128 = -1;
    for i in 0..k {
        let r = k - i;
        let total = binomial((universe as i128 - prev - 1) as u128, r);
        // Number of completions whose next element is < c.
        let count_below = |c: u128| &total - binomial(universe - c, r);
        let mut lo = (prev + 1) as u128;
        let mut hi = universe - r as u128;
        while lo < hi {
            let mid = lo + (hi - lo).div_ceil(2);
            if count_below(mid) <= rest {
                lo = mid;
            } else {
                hi = mid - 1;
            }
        }
        rest -= count_below(lo);
        let id = u64::try_from(lo).map_err(|_| DownlinkError::Decode("id exceeds 64 bits".into()))?;
        ids.push(id);
        prev = lo as i128;
    }
    Ok(ids)
}

fn write_biguint(w: &mut BitWriter, value: &BigUint, width: u64) {
    for i in (0..width).rev() {
        w.push_bit(value.bit(i));
    }
}

fn read_biguint(r: &mut BitReader<'_>, width: u64) -> Result<BigUint, DownlinkError> {
    let mut v = BigUint::zero();
    for _ in 0..width {
        v <<= 1u32;
        if r.read_bit()? {
            v += 1u32;
        }
    }
    Ok(v)
}

fn check_universe(universe: u128, ids: &[u64]) -> Result<(), DownlinkError> {
    check_sorted(ids)?;
    if universe > 1u128 << 64 {
        return Err(DownlinkError::Config("universe larger than 2^64".into()));
    }
    if ids.last().is_some_and(|&id| id as u128 >= universe) {
        return Err(DownlinkError::Config("id outside the universe".into()));
    }
    Ok(())
}

fn enum_section(universe: u128, ids: &[u64], w: &mut BitWriter) {
    let width = enumerative_bits(universe, ids.len() as u64);
    write_biguint(w, &subset_rank(universe, ids), width);
}

pub fn encode_ack_enumerative(universe: u128, ids: &[u64]) -> Result<MetadataPacket, DownlinkError> {
    check_universe(universe, ids)?;
    let k = k_u16(ids.len())?;
    let mut w = BitWriter::new();
    enum_section(universe, ids, &mut w);
    Ok(MetadataPacket::new(Scheme::EnumAck, k.to_be_bytes().to_vec(), w))
}

fn read_enum_section(universe: u128, k: u64, r: &mut BitReader<'_>) -> Result<Vec<u64>, DownlinkError> {
    if k as u128 > universe {
        return Err(DownlinkError::Decode(format!("K = {k} exceeds N = {universe}")));
    }
    let rank = read_biguint(r, enumerative_bits(universe, k))?;
    subset_unrank(universe, k, &rank)
}

pub fn decode_ack_enumerative(packet: &MetadataPacket, universe: u128) -> Result<Vec<u64>, DownlinkError> {
    packet.expect(Scheme::EnumAck)?;
    read_enum_section(universe, be_u16(&packet.header) as u64, &mut packet.reader())
}

// ---------------------------------------------------------------------------
// Hashed acknowledgment

/// Fingerprint width `⌈log2(K/ε)⌉` (at least 1).
pub fn fingerprint_width(k: usize, epsilon: f64) -> Result<u32, DownlinkError> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(DownlinkError::Config(format!("epsilon must lie in (0, 1), got {epsilon}")));
    }
    let w = ((k.max(1) as f64) / epsilon).log2().ceil().max(1.0);
    if w > 64.0 {
        return Err(DownlinkError::Config(format!(
            "fingerprint width {w} exceeds 64 bits; raise epsilon"
        )));
    }
    Ok(w as u32)
}

/// Top `width` bits of `mix64(id, salt)`.
pub fn fingerprint(id: u64, salt: u32, width: u32) -> u64 {
    mix64(id, salt as u64) >> (64 - width)
}

/// Rice parameter for `k` sorted uniform `width`-bit values: `width − ⌈log2 k⌉`.
pub fn rice_parameter(k: usize, width: u32) -> u32 {
    let ceil_log2 = if k <= 1 { 0 } else { usize::BITS - (k - 1).leading_zeros() };
    width.saturating_sub(ceil_log2)
}

/// Reference size `⌈K log2(1/ε)⌉` of a false-positive-budgeted ack.
pub fn hashed_reference_bits(k: usize, epsilon: f64) -> u64 {
    (k as f64 * (1.0 / epsilon).log2()).ceil() as u64
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct HashedHeader {
    k: u16,
    width: u32,
    salt: u32,
}

impl HashedHeader {
    fn bytes(&self) -> Vec<u8> {
        let mut h = self.k.to_be_bytes().to_vec();
        h.push(self.width as u8);
        h.extend_from_slice(&self.salt.to_be_bytes());
        h
    }

    fn parse(b: &[u8]) -> Result<Self, DownlinkError> {
        if b.len() < 7 {
            return Err(short("hashed-ack header"));
        }
        let width = b[2] as u32;
        if !(1..=64).contains(&width) {
            return Err(DownlinkError::Decode(format!("fingerprint width {width}")));
        }
        Ok(Self {
            k: be_u16(b),
            width,
            salt: be_u32(&b[3..]),
        })
    }
}

fn sorted_fingerprints(ids: &[u64], salt: u32, width: u32) -> Vec<u64> {
    let mut fps: Vec<u64> = ids.iter().map(|&id| fingerprint(id, salt, width)).collect();
    fps.sort_unstable();
    fps
}

fn write_fingerprints(fps: &[u64], width: u32, w: &mut BitWriter) {
    let k = rice_parameter(fps.len(), width);
    let mut prev = 0;
    for &fp in fps {
        w.push_rice(fp - prev, k);
        prev = fp;
    }
}

fn read_fingerprints(h: &HashedHeader, r: &mut BitReader<'_>) -> Result<Vec<u64>, DownlinkError> {
    let k = rice_parameter(h.k as usize, h.width);
    let max = if h.width == 64 { u64::MAX } else { (1u64 << h.width) - 1 };
    let mut fps = Vec::with_capacity(h.k as usize);
    let mut acc: u64 = 0;
    for _ in 0..h.k {
        let delta = r.read_rice(k)?;
        acc = acc
            .checked_add(delta)
            .filter(|&v| v <= max)
            .ok_or_else(|| DownlinkError::Decode("fingerprint out of range".into()))?;
        fps.push(acc);
    }
    Ok(fps)
}

/// Acknowledges `ids` with false-positive rate about `epsilon` and no false negatives.
pub fn encode_ack_hashed(ids: &[u64], epsilon: f64, salt: u32) -> Result<MetadataPacket, DownlinkError> {
    let width = fingerprint_width(ids.len(), epsilon)?;
    let header = HashedHeader {
        k: k_u16(ids.len())?,
        width,
        salt,
    };
    let mut w = BitWriter::new();
    write_fingerprints(&sorted_fingerprints(ids, salt, width), width, &mut w);
    Ok(MetadataPacket::new(Scheme::HashedAck, header.bytes(), w))
}

/// Decoded hashed ack, for repeated queries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HashedAckSet {
    fingerprints: Vec<u64>,
    width: u32,
    salt: u32,
}

impl HashedAckSet {
    pub fn from_packet(packet: &MetadataPacket) -> Result<Self, DownlinkError> {
        packet.expect(Scheme::HashedAck)?;
        let h = HashedHeader::parse(&packet.header)?;
        let fingerprints = read_fingerprints(&h, &mut packet.reader())?;
        Ok(Self {
            fingerprints,
            width: h.width,
            salt: h.salt,
        })
    }

    pub fn contains(&self, id: u64) -> bool {
        self.fingerprints
            .binary_search(&fingerprint(id, self.salt, self.width))
            .is_ok()
    }
}

pub fn query_ack_hashed(packet: &MetadataPacket, id: u64) -> Result<bool, DownlinkError> {
    Ok(HashedAckSet::from_packet(packet)?.contains(id))
}

// ---------------------------------------------------------------------------
// Joint feedback

/// Salt increments tried before giving up on a fingerprint tie or a schedule search.
pub const MAX_SALT_RETRIES: u32 = 64;

fn alphabet_exponent(alphabet: u64) -> Result<u32, DownlinkError> {
    if alphabet == 0 {
        return Err(DownlinkError::Config("message alphabet must be non-empty".into()));
    }
    Ok(64 - (alphabet - 1).leading_zeros())
}

/// Packs one message per recipient. With `epsilon = Some(ε)` the recipient
/// section is a hashed ack; with `None` it is an exact enumerative ack over
/// `universe`. `messages` must be sorted by strictly increasing id.
pub fn encode_feedback(
    messages: &[(u64, u64)],
    alphabet: u64,
    universe: u128,
    epsilon: Option<f64>,
    salt: u32,
) -> Result<MetadataPacket, DownlinkError> {
    let ids: Vec<u64> = messages.iter().map(|&(id, _)| id).collect();
    check_universe(universe, &ids)?;
    let exponent = alphabet_exponent(alphabet)?;
    if let Some(&(id, m)) = messages.iter().find(|&&(_, m)| m >= alphabet) {
        return Err(DownlinkError::Config(format!("message {m} for id {id} outside the alphabet")));
    }
    let k = k_u16(ids.len())?;
    let mut header = Vec::new();
    let mut w = BitWriter::new();
    match epsilon {
        None => {
            header.push(Scheme::EnumAck.id());
            header.extend_from_slice(&k.to_be_bytes());
            enum_section(universe, &ids, &mut w);
            for &(_, m) in messages {
                w.push_bits(m, exponent);
            }
        }
        Some(eps) => {
            let width = fingerprint_width(ids.len(), eps)?;
            let mut chosen = None;
            for attempt in 0..MAX_SALT_RETRIES {
                let s = salt.wrapping_add(attempt);
                let mut tagged: Vec<(u64, u64)> = messages.iter().map(|&(id, m)| (fingerprint(id, s, width), m)).collect();
                tagged.sort_unstable_by_key(|&(fp, _)| fp);
                if tagged.windows(2).all(|p| p[0].0 != p[1].0) {
                    chosen = Some((s, tagged));
                    break;
                }
            }
            let (s, tagged) = chosen.ok_or(DownlinkError::SaltsExhausted(MAX_SALT_RETRIES))?;
            header.push(Scheme::HashedAck.id());
            header.extend(HashedHeader { k, width, salt: s }.bytes());
            let fps: Vec<u64> = tagged.iter().map(|&(fp, _)| fp).collect();
            write_fingerprints(&fps, width, &mut w);
            for &(_, m) in &tagged {
                w.push_bits(m, exponent);
            }
        }
    }
    header.push(exponent as u8);
    Ok(MetadataPacket::new(Scheme::Feedback, header, w))
}

/// Message addressed to `my_id`, or `None` (the empty marker). A user that did
/// not transmit (`transmitted = false`) expects nothing and returns `None`
/// without reading the payload. In hashed mode a non-recipient that collides
/// with a recipient fingerprint receives that recipient's message; this happens
/// with probability at most ε.
pub fn decode_feedback(
    packet: &MetadataPacket,
    universe: u128,
    my_id: u64,
    transmitted: bool,
) -> Result<Option<u64>, DownlinkError> {
    packet.expect(Scheme::Feedback)?;
    if !transmitted {
        return Ok(None);
    }
    let h = &packet.header;
    let inner = Scheme::from_id(*h.first().ok_or_else(|| short("feedback header"))?)?;
    let mut r = packet.reader();
    let (index, k, exponent) = match inner {
        Scheme::EnumAck => {
            if h.len() < 4 {
                return Err(short("feedback header"));
            }
            let k = be_u16(&h[1..]) as u64;
            let ids = read_enum_section(universe, k, &mut r)?;
            (ids.binary_search(&my_id).ok(), k, h[3] as u32)
        }
        Scheme::HashedAck => {
            if h.len() < 9 {
                return Err(short("feedback header"));
            }
            let hh = HashedHeader::parse(&h[1..8])?;
            let fps = read_fingerprints(&hh, &mut r)?;
            let mine = fingerprint(my_id, hh.salt, hh.width);
            (fps.binary_search(&mine).ok(), hh.k as u64, h[8] as u32)
        }
        other => return Err(DownlinkError::Decode(format!("feedback cannot wrap scheme {other:?}"))),
    };
    if exponent > 64 {
        return Err(DownlinkError::Decode(format!("message width {exponent}")));
    }
    let Some(index) = index else {
        return Ok(None);
    };
    debug_assert!((index as u64) < k);
    r.seek(r.position() + index * exponent as usize);
    Ok(Some(r.read_bits(exponent)?))
}

// ---------------------------------------------------------------------------
// Collision-free schedule

/// Default expected bucket size.
pub const DEFAULT_BUCKET_SIZE: u8 = 4;
/// Seeds tried per bucket before the whole packet is re-salted.
pub const SEED_SEARCH_CAP: u64 = 1 << 22;

fn n_buckets(k: usize, bucket: u8) -> usize {
    k.div_ceil(bucket as usize)
}

fn bucket_of(id: u64, salt: u32, buckets: usize) -> usize {
    (mix64(id, salt as u64) % buckets as u64) as usize
}

fn position_in_bucket(id: u64, salt: u32, seed: u64, size: usize) -> usize {
    (mix64(mix64(id, salt as u64), seed) % size as u64) as usize
}

fn find_seed(members: &[u64], salt: u32) -> Option<u64> {
    let size = members.len();
    let mut seen = vec![0u64; size];
    (0..SEED_SEARCH_CAP).find(|&seed| {
        // `seen[p] == seed + 1` marks position p as taken for this seed.
        members.iter().all(|&id| {
            let p = position_in_bucket(id, salt, seed, size);
            if seen[p] == seed + 1 {
                false
            } else {
                seen[p] = seed + 1;
                true
            }
        })
    })
}

/// Assigns each of the `K ≤ B` ids a distinct slot in `[0, K)`.
///
/// Ids are split into `⌈K/b⌉` buckets by a salted hash; bucket `j` owns the
/// slot range following buckets `0..j`. For every bucket the payload carries
/// the Elias-gamma code of `size + 1` and, when `size ≥ 2`, of `seed + 1`,
/// where `seed` is the first value making `mix64(mix64(id, salt), seed) mod size`
/// injective on the bucket.
pub fn encode_schedule(ids: &[u64], slots: u16, bucket: u8, salt: u32) -> Result<MetadataPacket, DownlinkError> {
    let k = k_u16(ids.len())?;
    if k > slots {
        return Err(DownlinkError::Config(format!("K = {k} exceeds B = {slots}")));
    }
    if bucket == 0 {
        return Err(DownlinkError::Config("bucket size must be at least 1".into()));
    }
    let mut sorted = ids.to_vec();
    sorted.sort_unstable();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(DownlinkError::Config("ids must be distinct".into()));
    }
    let nb = n_buckets(ids.len(), bucket);
    'salts: for attempt in 0..MAX_SALT_RETRIES {
        let s = salt.wrapping_add(attempt);
        let mut members = vec![Vec::new(); nb];
        for &id in &sorted {
            members[bucket_of(id, s, nb)].push(id);
        }
        let mut w = BitWriter::new();
        for group in &members {
            w.push_gamma(group.len() as u64 + 1);
            if group.len() >= 2 {
                match find_seed(group, s) {
                    Some(seed) => w.push_gamma(seed + 1),
                    None => continue 'salts,
                }
            }
        }
        let mut header = k.to_be_bytes().to_vec();
        header.extend_from_slice(&slots.to_be_bytes());
        header.extend_from_slice(&s.to_be_bytes());
        header.push(bucket);
        return Ok(MetadataPacket::new(Scheme::Schedule, header, w));
    }
    Err(DownlinkError::SaltsExhausted(MAX_SALT_RETRIES))
}

/// Slot of `my_id`. Ids that were not scheduled receive an arbitrary slot.
pub fn decode_schedule(packet: &MetadataPacket, my_id: u64) -> Result<u16, DownlinkError> {
    packet.expect(Scheme::Schedule)?;
    let h = &packet.header;
    let (k, slots, salt, bucket) = (be_u16(h) as usize, be_u16(&h[2..]), be_u32(&h[4..]), h[8]);
    if bucket == 0 || k > slots as usize {
        return Err(DownlinkError::Decode("inconsistent schedule header".into()));
    }
    if k == 0 {
        return Err(DownlinkError::Decode("empty schedule".into()));
    }
    let nb = n_buckets(k, bucket);
    let mine = bucket_of(my_id, salt, nb);
    let mut r = packet.reader();
    let mut offset = 0usize;
    for j in 0..nb {
        let size = (r.read_gamma()? - 1) as usize;
        let seed = if size >= 2 { r.read_gamma()? - 1 } else { 0 };
        if j == mine {
            if size == 0 {
                return Err(DownlinkError::Decode("id hashes to an empty bucket".into()));
            }
            let slot = offset + position_in_bucket(my_id, salt, seed, size);
            return u16::try_from(slot).map_err(|_| DownlinkError::Decode("slot overflow".into()));
        }
        offset += size;
        if offset > k {
            return Err(DownlinkError::Decode("bucket sizes exceed K".into()));
        }
    }
    Err(DownlinkError::Decode("bucket index past the end".into()))
}

/// Reference size `K log2 e` of a collision-free schedule.
pub fn schedule_reference_bits(k: usize) -> f64 {
    k as f64 * std::f64::consts::LOG2_E
}

/// Enumerative reference `K log2(N/K) + K log2 e` as an `f64`.
pub fn enumerative_reference_bits(universe: u128, k: u64) -> f64 {
    if k == 0 {
        return 0.0;
    }
    let k = k as f64;
    k * ((universe as f64) / k).log2() + k * std::f64::consts::LOG2_E
}

/// Lossy conversion used for reporting big ranks.
pub fn biguint_to_f64(v: &BigUint) -> f64 {
    v.to_f64().unwrap_or(f64::INFINITY)
}
