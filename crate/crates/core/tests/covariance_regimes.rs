use mara_core::covariance::{coordinate_descent, detect_support, CovOptions, SupportRule, SweepOrder};
use mara_core::model::{Instance, SystemConfig};

fn support_errors(cfg: &SystemConfig, seed: u64) -> usize {
    let inst = Instance::generate(cfg, seed).unwrap();
    let opts = CovOptions {
        order: SweepOrder::Random { seed },
        ..CovOptions::default()
    };
    let run = coordinate_descent(&inst.received.y, &inst.book.matrix, cfg.noise_var, &opts).unwrap();
    let rule = SupportRule::RelativeToNoise { rho: 1.0, sigma2: cfg.noise_var };
    let est = detect_support(&run.estimate.gamma, rule).active;
    est.iter().zip(&inst.activity.active).filter(|(a, b)| a != b).count()
}

#[test]
fn single_active_user_is_found() {
    let cfg = SystemConfig::new(50, 10, 64, 1, 0.01);
    let mut hits = 0;
    for seed in 0..100 {
        let inst = Instance::generate(&cfg, seed).unwrap();
        let run = coordinate_descent(&inst.received.y, &inst.book.matrix, 0.01, &CovOptions::default()).unwrap();
        let g = &run.estimate.gamma;
        let best = (0..g.len()).max_by(|&a, &b| g[a].total_cmp(&g[b])).unwrap();
        if inst.activity.active[best] {
            hits += 1;
        }
    }
    assert!(hits >= 99, "{hits}/100");
}

#[test]
fn support_error_falls_with_antennas() {
    let trials = 20;
    let mut totals = Vec::new();
    for m in [8, 16, 32, 64, 128] {
        let cfg = SystemConfig::new(200, 20, m, 40, 0.1);
        let total: usize = (0..trials).map(|s| support_errors(&cfg, 1000 + s)).sum();
        totals.push(total);
    }
    eprintln!("{totals:?}");
    for w in totals.windows(2) {
        assert!(w[1] <= w[0], "{totals:?}");
    }
    assert!(totals[4] < totals[0]);
}
