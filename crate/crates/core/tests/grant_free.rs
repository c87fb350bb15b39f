use mara_core::model::LargeScale;
use mara_core::protocols::{run_grant_free, AccessConfig, GrantFreeConfig, ProtocolReport};

fn access(preamble_len: usize, active: usize, snr_db: f64) -> AccessConfig {
    AccessConfig {
        n_users: 200,
        preamble_len,
        n_antennas: 8,
        active,
        snr_db,
        large_scale: LargeScale::Unit,
    }
}

fn delivered(cfg: &GrantFreeConfig, trials: u64) -> f64 {
    let mut report = ProtocolReport::default();
    for t in 0..trials {
        report.merge(run_grant_free(cfg, t).unwrap());
    }
    report.delivered_fraction()
}

#[test]
fn preamble_length_has_an_interior_optimum() {
    // 160-symbol blocks carrying 100 bits: short preambles cannot separate
    // 10 users, long ones leave too few data symbols.
    let grid = [10usize, 24, 40, 60, 100];
    let curve: Vec<f64> = grid
        .iter()
        .map(|&l| delivered(&GrantFreeConfig::new(access(l, 10, 0.0), 160, 100.0), 20))
        .collect();
    let (best, &peak) = curve
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .unwrap();
    assert!(best != 0 && best != grid.len() - 1, "{curve:?}");
    assert!(peak > curve[0] + 0.5 && peak > curve[grid.len() - 1] + 0.5, "{curve:?}");
}

#[test]
fn repetitions_with_sic_beat_single_shot() {
    // 30 users over 4 slots with 20-symbol preambles is collision limited.
    let mut single = GrantFreeConfig::new(access(20, 30, 10.0), 120, 60.0);
    single.frame_slots = 4;
    let mut double = single.clone();
    double.repetitions = 2;
    assert!(double.split_power);
    let a = delivered(&single, 20);
    let b = delivered(&double, 20);
    assert!(b > a + 0.05, "{b} vs {a}");
}
