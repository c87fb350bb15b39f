use mara_core::downlink::*;
use mara_core::hash::{mix64, splitmix64};

fn random_ids(k: usize, seed: u64) -> Vec<u64> {
    let mut ids: Vec<u64> = (0..k as u64).map(|i| mix64(seed, i)).collect();
    ids.sort_unstable();
    ids.dedup();
    ids
}

#[test]
fn hashed_ack_size_and_false_positive_rate() {
    let eps = 1e-4;
    let ids = random_ids(50, 1);
    let p = encode_ack_hashed(&ids, eps, 99).unwrap();
    assert_eq!(hashed_reference_bits(50, eps), 665);
    assert!(p.total_bits() <= 850, "{}", p.total_bits());
    // Construction slack: at most 3 bits per element over log2(1/eps).
    assert!((p.payload_bits as f64) <= 50.0 * ((1.0 / eps).log2() + 3.0));
    let set = HashedAckSet::from_packet(&p).unwrap();
    let queries = 1_000_000u64;
    let hits = (0..queries)
        .map(|i| splitmix64(i ^ 0xDEAD_BEEF))
        .filter(|q| ids.binary_search(q).is_err() && set.contains(*q))
        .count();
    assert!(hits as f64 / queries as f64 <= 1.2 * eps, "{hits}");
}

#[test]
fn feedback_random_instances() {
    let (n, k, eps, trials) = (10_000u64, 20usize, 1e-5, 1000u64);
    let budget = (k as f64 * eps * trials as f64).floor() as usize;
    let mut failures = 0;
    for t in 0..trials {
        let ids: Vec<u64> = {
            let mut v: Vec<u64> = (0..).map(|i| mix64(t, i) % n).take(4 * k).collect();
            v.sort_unstable();
            v.dedup();
            let picked: Vec<u64> = (0..k).map(|i| v[i * v.len() / k]).collect();
            picked
        };
        let msgs: Vec<(u64, u64)> = ids.iter().map(|&id| (id, mix64(id, t) % 256)).collect();
        let p = encode_feedback(&msgs, 256, n as u128, Some(eps), t as u32).unwrap();
        for &(id, m) in &msgs {
            if decode_feedback(&p, n as u128, id, true).unwrap() != Some(m) {
                failures += 1;
            }
        }
    }
    assert!(failures <= budget, "{failures} > {budget}");
}

#[test]
fn schedule_payload_within_constant_factor() {
    for k in [8usize, 16, 32, 64] {
        let trials = 1000;
        let mut total = 0usize;
        for t in 0..trials {
            let ids = random_ids(k, 7000 + t);
            let p = encode_schedule(&ids, k as u16, DEFAULT_BUCKET_SIZE, t as u32).unwrap();
            total += p.payload_bits;
        }
        let avg = total as f64 / trials as f64;
        assert!(avg <= 4.0 * schedule_reference_bits(k), "K={k}: {avg}");
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[test]
fn packets_match_golden_file() {
    let ids = [3u64, 17, 1 << 40, u64::MAX - 5];
    let msgs: Vec<(u64, u64)> = ids.iter().map(|&id| (id, id % 13)).collect();
    let packets = [
        ("bitmap", encode_ack_bitmap(24, &[1, 5, 23]).unwrap()),
        ("enum", encode_ack_enumerative(1 << 64, &ids).unwrap()),
        ("hashed", encode_ack_hashed(&ids, 1e-3, 42).unwrap()),
        ("feedback-hashed", encode_feedback(&msgs, 13, 1 << 64, Some(1e-3), 5).unwrap()),
        ("feedback-exact", encode_feedback(&msgs, 13, 1 << 64, None, 5).unwrap()),
        ("schedule", encode_schedule(&ids, 6, DEFAULT_BUCKET_SIZE, 11).unwrap()),
    ];
    let rendered: String = packets
        .iter()
        .map(|(name, p)| format!("{name} {} {}\n", p.total_bits(), hex(&p.to_bytes())))
        .collect();
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/golden/packets.txt");
    if std::env::var_os("MARA_BLESS").is_some() {
        std::fs::write(path, &rendered).unwrap();
    }
    let golden = std::fs::read_to_string(path).expect("golden file missing; run with MARA_BLESS=1");
    assert_eq!(rendered, golden);
}
