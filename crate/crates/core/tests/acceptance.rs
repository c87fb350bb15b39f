//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run alone with `cargo test -p mara-core --test acceptance`; pass criterion
//! numbers as arguments (`-- 3 7`) to run a subset.

use std::panic;
use std::path::Path;
use std::time::{Duration, Instant};

use mara_core::amp::{
    amp_iterate, run_amp, state_evolution, AmpOptions, AmpState, DenoiserSpec, DetectionRule, MmsePrior,
};
use mara_core::covariance::{
    coordinate_descent, coordinate_step, coordinate_update, covariance_matrix, detect_support,
    rank_one_inverse_update, CovOptions, CovProblem, GammaEstimate, SupportRule, SweepOrder,
};
use mara_core::downlink::{
    decode_schedule, encode_ack_hashed, encode_schedule, enumerative_bits, hashed_reference_bits, HashedAckSet,
    DEFAULT_BUCKET_SIZE,
};
use mara_core::harness::{execute, ExperimentConfig, SweepSpec};
use mara_core::model::{Complex64, ComplexMatrix, Instance, SystemConfig};
use mara_core::protocols::{sic_peel, simulate_slotted_aloha, FrameSchedule};
use mara_core::slicing::{
    mmtc_embb_sic, simulate_hnoma, simulate_homa, simulate_truncated_inversion, truncated_inversion_for_outage,
    truncated_inversion_policy, SharingMode, SlicingScenario,
};
use mara_core::tailstats::{fit_gpd_excesses, fit_gpd_tail, fit_power_law_tail, select_rate, TailKind};
use nalgebra::DVector;
use num_bigint::BigUint;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;

/// Per-user support-error ceiling at K = 8 (L = 20, M = 64, N = 200, 10 dB),
/// calibrated on a 200-trial pilot (AMP 0.00925, covariance 0).
const K8_SUPPORT_ERROR_CEILING: f64 = 0.02;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn within_budget(v: Verdict, elapsed: Duration, budget: Duration) -> Verdict {
    let ok = elapsed <= budget;
    verdict(
        v.pass && ok,
        format!("{}; runtime {:.1}s (limit {:.0}s)", v.detail, elapsed.as_secs_f64(), budget.as_secs_f64()),
    )
}

fn test_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------------------
// 1. Slotted ALOHA

fn aloha() -> Verdict {
    let start = Instant::now();
    let target = (-1f64).exp();
    let thr = simulate_slotted_aloha(1.0, 1_000_000, 1).unwrap();
    let grid = vec![0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0];
    let cfg = ExperimentConfig::new("aloha", 2, 4).with_param("slots", 250_000);
    let table = execute(
        &ExperimentConfig {
            sweep: Some(SweepSpec {
                param: "load".into(),
                grid: grid.clone(),
            }),
            ..cfg
        },
        None,
    )
    .unwrap();
    let loads = table.numeric_column("sweep_load").unwrap();
    let thrs = table.numeric_column("throughput").unwrap();
    let mean_at = |g: f64| {
        let v: Vec<f64> = loads
            .iter()
            .zip(&thrs)
            .filter(|(l, _)| l.unwrap() == g)
            .map(|(_, t)| t.unwrap())
            .collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let means: Vec<f64> = grid.iter().map(|&g| mean_at(g)).collect();
    let argmax = |v: &[f64]| (0..v.len()).max_by(|&a, &b| v[a].total_cmp(&v[b])).unwrap();
    let oracle: Vec<f64> = grid.iter().map(|&g| g * (-g).exp()).collect();
    let peak = grid[argmax(&means)];
    let ok = (thr - target).abs() <= 0.005 && argmax(&means) == argmax(&oracle) && peak == 1.0;
    within_budget(
        verdict(ok, format!("throughput at G=1 {thr:.5} (e^-1 = {target:.5}), sweep peak at G={peak}")),
        start.elapsed(),
        Duration::from_secs(5),
    )
}

// ---------------------------------------------------------------------------
// 2. Acknowledgment sizes

fn binomial_oracle(n: &BigUint, k: u64) -> BigUint {
    let mut acc = BigUint::from(1u32);
    for i in 0..k {
        acc = acc * (n - BigUint::from(i)) / BigUint::from(i + 1);
    }
    acc
}

fn ack_sizes() -> Verdict {
    let start = Instant::now();
    let n = BigUint::from(1u128 << 64);
    let c = binomial_oracle(&n, 50);
    let oracle_bits = (c - BigUint::from(1u32)).bits();
    let bits = enumerative_bits(1u128 << 64, 50);
    let reference = hashed_reference_bits(50, 1e-4);
    let direct = (50.0 * 1e4f64.log2()).ceil() as u64;
    let mut r = test_rng(2);
    let (mut max_bits, mut queries, mut false_pos) = (0usize, 0u64, 0u64);
    for p in 0..100 {
        let mut ids: Vec<u64> = (0..50).map(|_| r.random()).collect();
        ids.sort_unstable();
        ids.dedup();
        let packet = encode_ack_hashed(&ids, 1e-4, p).unwrap();
        max_bits = max_bits.max(packet.total_bits());
        let set = HashedAckSet::from_packet(&packet).unwrap();
        assert!(ids.iter().all(|&id| set.contains(id)), "member rejected");
        for _ in 0..10_000 {
            let q: u64 = r.random();
            if ids.binary_search(&q).is_ok() {
                continue;
            }
            queries += 1;
            false_pos += set.contains(q) as u64;
        }
    }
    let fpr = false_pos as f64 / queries as f64;
    let ok = bits == oracle_bits && bits > 2900 && reference == 665 && direct == 665 && max_bits <= 850 && fpr <= 1.2e-4;
    within_budget(
        verdict(
            ok,
            format!(
                "enumerative {bits} bits (oracle {oracle_bits}), hashed reference {reference}, largest packet {max_bits} bits, FPR {fpr:.3e} over {queries} queries"
            ),
        ),
        start.elapsed(),
        Duration::from_secs(30),
    )
}

// ---------------------------------------------------------------------------
// 3. AMP exactness

fn amp_exactness() -> Verdict {
    let n = 32;
    let s = ComplexMatrix::identity(n, n);
    let mut worst_x = 0f64;
    let mut support_ok = true;
    for seed in 0..20 {
        let cfg = SystemConfig::new(n, n, 4, 8, 0.0);
        let x = Instance::generate(&cfg, seed).unwrap().x_true();
        let y = &s * &x;
        let spec = DenoiserSpec::SoftThreshold { theta: 0.0 };
        let opts = AmpOptions {
            max_iter: 1,
            detection: DetectionRule::RowEnergy { rho: 1e-12 },
            ..AmpOptions::default()
        };
        let res = run_amp(&y, &s, &spec, &opts).unwrap();
        worst_x = worst_x.max((&res.x_hat - &x).norm() / x.norm());
        let truth: Vec<bool> = (0..n).map(|i| x.row(i).norm() > 0.0).collect();
        support_ok &= res.support == truth && res.iterations == 1;
    }
    let mut r = test_rng(3);
    let mut worst_identity = 0f64;
    for run in 0..100 {
        let n = r.random_range(40..=240);
        let l = r.random_range(n / 5..=n);
        let m = r.random_range(1..=8);
        let k = r.random_range(1..=l / 2);
        let noise = 10f64.powf(-r.random_range(0.0..3.0));
        let cfg = SystemConfig::new(n, l, m, k, noise);
        let inst = Instance::generate(&cfg, 10_000 + run).unwrap();
        let (y, s) = (&inst.received.y, &inst.book.matrix);
        let spec = if run % 2 == 0 {
            DenoiserSpec::soft_for_antennas(r.random_range(0.5..2.0), m)
        } else {
            DenoiserSpec::Mmse(MmsePrior::from_config(&cfg))
        };
        let ratio = Complex64::new(n as f64 / l as f64, 0.0);
        let mut state = AmpState::initial(y, n);
        for _ in 0..10 {
            let next = amp_iterate(&state, y, s, &spec).unwrap();
            let lhs = &next.z + s * &next.x - (&state.z * &next.onsager) * ratio;
            worst_identity = worst_identity.max((lhs - y).norm() / y.norm());
            state = next;
        }
    }
    verdict(
        support_ok && worst_x <= 1e-10 && worst_identity <= 1e-10,
        format!(
            "one-step recovery error {worst_x:.2e}, support exact: {support_ok}; residual identity worst {worst_identity:.2e} over 100 runs x 10 iterations"
        ),
    )
}

// ---------------------------------------------------------------------------
// 4. AMP vs covariance regimes

fn regime_error_rates(k: usize) -> (f64, f64) {
    let cfg = SystemConfig::new(200, 20, 64, k, 0.1);
    let spec = DenoiserSpec::soft_for_antennas(1.0, 64);
    let errors: Vec<(usize, usize)> = (0..200u64)
        .into_par_iter()
        .map(|t| {
            let inst = Instance::generate(&cfg, 5000 + t).unwrap();
            let truth = &inst.activity.active;
            let count = |d: &[bool]| d.iter().zip(truth).filter(|(a, b)| a != b).count();
            let amp = run_amp(&inst.received.y, &inst.book.matrix, &spec, &AmpOptions::default()).unwrap();
            let opts = CovOptions {
                order: SweepOrder::Random { seed: t },
                ..CovOptions::default()
            };
            let cov = coordinate_descent(&inst.received.y, &inst.book.matrix, cfg.noise_var, &opts).unwrap();
            let est = detect_support(&cov.estimate.gamma, SupportRule::Absolute(0.5));
            (count(&amp.support), count(&est.active))
        })
        .collect();
    let denom = (200 * cfg.n_users) as f64;
    (
        errors.iter().map(|e| e.0).sum::<usize>() as f64 / denom,
        errors.iter().map(|e| e.1).sum::<usize>() as f64 / denom,
    )
}

fn regimes() -> Verdict {
    let start = Instant::now();
    let (amp40, cov40) = regime_error_rates(40);
    let (amp8, cov8) = regime_error_rates(8);
    let ok = cov40 <= 0.5 * amp40 && amp8 <= K8_SUPPORT_ERROR_CEILING && cov8 <= K8_SUPPORT_ERROR_CEILING;
    within_budget(
        verdict(
            ok,
            format!(
                "K=40: covariance {cov40:.4} vs AMP {amp40:.4}; K=8: AMP {amp8:.4}, covariance {cov8:.4} (ceiling {K8_SUPPORT_ERROR_CEILING})"
            ),
        ),
        start.elapsed(),
        Duration::from_secs(300),
    )
}

// ---------------------------------------------------------------------------
// 5. Covariance correctness

fn random_problem(r: &mut ChaCha8Rng, seed: u64) -> (SystemConfig, Instance) {
    let n = r.random_range(10..=50);
    let l = r.random_range(4..=12);
    let m = r.random_range(2..=32);
    let k = r.random_range(1..=n / 2);
    let cfg = SystemConfig::new(n, l, m, k, 0.1);
    let inst = Instance::generate(&cfg, seed).unwrap();
    (cfg, inst)
}

fn golden_max(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (hi - phi * (hi - lo), lo + phi * (hi - lo));
    let (mut fa, mut fb) = (f(a), f(b));
    for _ in 0..300 {
        if fa < fb {
            lo = a;
            a = b;
            fa = fb;
            b = lo + phi * (hi - lo);
            fb = f(b);
        } else {
            hi = b;
            b = a;
            fb = fa;
            a = hi - phi * (hi - lo);
            fa = f(a);
        }
    }
    let mid = 0.5 * (lo + hi);
    if f(mid) >= f(lo) {
        mid
    } else {
        lo
    }
}

fn covariance_correctness() -> Verdict {
    let mut r = test_rng(5);
    let mut worst_drop = 0f64;
    for t in 0..100 {
        let (cfg, inst) = random_problem(&mut r, 20_000 + t);
        let opts = CovOptions {
            order: SweepOrder::Random { seed: t },
            record_trace: true,
            max_passes: 10,
            ..CovOptions::default()
        };
        let run = coordinate_descent(&inst.received.y, &inst.book.matrix, cfg.noise_var, &opts).unwrap();
        for w in run.trace.windows(2) {
            worst_drop = worst_drop.max((w[0] - w[1]) / w[0].abs().max(1.0));
        }
    }
    let mut worst_step = 0f64;
    let mut worst_inverse = 0f64;
    for t in 0..100 {
        let (cfg, inst) = random_problem(&mut r, 30_000 + t);
        let s = &inst.book.matrix;
        let problem = CovProblem::new(&inst.received.y, s, cfg.noise_var).unwrap();
        let mut state = GammaEstimate::zero(&problem);
        let mut order: Vec<usize> = (0..cfg.n_users).collect();
        order.shuffle(&mut r);
        for &k in order.iter().take(cfg.n_users / 2) {
            coordinate_update(k, &mut state, &problem).unwrap();
        }
        let k = r.random_range(0..cfg.n_users);
        let (d, _) = coordinate_step(k, &state, &problem);
        let along = |d: f64| {
            let mut g = state.gamma.clone();
            g[k] += d;
            problem.log_likelihood(&g).unwrap()
        };
        let oracle = golden_max(along, -state.gamma[k], 50.0);
        worst_step = worst_step.max((d - oracle).abs());

        let gamma: Vec<f64> = (0..cfg.n_users).map(|_| r.random_range(0.0..2.0)).collect();
        let sigma = covariance_matrix(&gamma, s, cfg.noise_var);
        let inv = sigma.clone().try_inverse().unwrap();
        let col: DVector<Complex64> = s.column(k).into_owned();
        let delta = r.random_range(-gamma[k]..2.0);
        let updated = rank_one_inverse_update(&inv, &col, delta).unwrap();
        let direct = (sigma + &col * col.adjoint() * Complex64::new(delta, 0.0)).try_inverse().unwrap();
        worst_inverse = worst_inverse.max((updated - direct).iter().map(|v| v.norm()).fold(0.0, f64::max));
    }
    verdict(
        worst_drop <= 1e-9 && worst_step <= 1e-6 && worst_inverse <= 1e-8,
        format!(
            "largest relative likelihood drop {worst_drop:.2e}; closed-form step vs golden section {worst_step:.2e}; rank-one vs direct inverse {worst_inverse:.2e}"
        ),
    )
}

// ---------------------------------------------------------------------------
// 6. State evolution

fn state_evolution_match() -> Verdict {
    let start = Instant::now();
    let cfg = SystemConfig::new(2000, 400, 16, 100, 10f64.powf(-1.5));
    let spec = DenoiserSpec::Mmse(MmsePrior::from_config(&cfg));
    let se = state_evolution(&cfg, &spec, 8).unwrap();
    let trials = 10u64;
    let per_trial: Vec<Vec<f64>> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let inst = Instance::generate(&cfg, 40_000 + t).unwrap();
            let x = inst.x_true();
            let mut state = AmpState::initial(&inst.received.y, cfg.n_users);
            (0..8)
                .map(|_| {
                    state = amp_iterate(&state, &inst.received.y, &inst.book.matrix, &spec).unwrap();
                    (&state.x - &x).norm_squared() / (x.nrows() * x.ncols()) as f64
                })
                .collect()
        })
        .collect();
    let rel: Vec<f64> = (0..8)
        .map(|i| {
            let emp = per_trial.iter().map(|v| v[i]).sum::<f64>() / trials as f64;
            (emp / se.mse[i] - 1.0).abs()
        })
        .collect();
    let worst = rel.iter().cloned().fold(0.0, f64::max);
    within_budget(
        verdict(worst <= 0.10, format!("worst relative MSE gap over iterations 1-8: {worst:.4}")),
        start.elapsed(),
        Duration::from_secs(120),
    )
}

// ---------------------------------------------------------------------------
// 7. Coded slotted ALOHA peeling vs stopping sets

/// Users left undecoded: the union of all stopping sets, i.e. subsets in
/// which every touched slot holds at least two of their replicas.
fn stopping_set_oracle(masks: &[u8]) -> u32 {
    let u = masks.len();
    let mut union = 0u32;
    for subset in 1u32..(1 << u) {
        let (mut seen, mut multi) = (0u8, 0u8);
        for (i, &m) in masks.iter().enumerate() {
            if subset >> i & 1 == 1 {
                multi |= seen & m;
                seen |= m;
            }
        }
        if seen & !multi == 0 {
            union |= subset;
        }
    }
    union
}

fn multisets(choices: usize, len: usize, first_min: usize, prefix: &mut Vec<usize>, out: &mut dyn FnMut(&[usize])) {
    if prefix.len() == len {
        out(prefix);
        return;
    }
    let lo = prefix.last().copied().unwrap_or(first_min);
    for c in lo..choices {
        prefix.push(c);
        multisets(choices, len, first_min, prefix, out);
        prefix.pop();
    }
}

fn coded_sa_exhaustive() -> Verdict {
    let start = Instant::now();
    let mut frames = 0u64;
    let mut mismatches = 0u64;
    for slots in 1..=6usize {
        let sets: Vec<u8> = (1u8..(1 << slots)).filter(|m| m.count_ones() <= 3).collect();
        for users in 1..=6usize {
            let (f, bad) = (0..sets.len())
                .into_par_iter()
                .map(|first| {
                    let (mut f, mut bad) = (0u64, 0u64);
                    let mut prefix = vec![first];
                    multisets(sets.len(), users, first, &mut prefix, &mut |idx| {
                        let masks: Vec<u8> = idx.iter().map(|&i| sets[i]).collect();
                        let replicas: Vec<Vec<usize>> = masks
                            .iter()
                            .map(|&m| (0..slots).filter(|b| m >> b & 1 == 1).collect())
                            .collect();
                        let frame = FrameSchedule::new(slots, replicas).unwrap();
                        let all: Vec<usize> = (0..users).collect();
                        let decoded = sic_peel(&frame, &all);
                        let stuck = stopping_set_oracle(&masks);
                        let expected: Vec<usize> = (0..users).filter(|&i| stuck >> i & 1 == 0).collect();
                        f += 1;
                        bad += (decoded != expected) as u64;
                    });
                    (f, bad)
                })
                .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
            frames += f;
            mismatches += bad;
        }
    }
    verdict(
        mismatches == 0,
        format!(
            "{frames} frames (slots <= 6, users <= 6, degree <= 3, all replica multisets), {mismatches} mismatches; {:.1}s",
            start.elapsed().as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------------------
// 8. Schedule codec

fn schedule_codec() -> Verdict {
    let results: Vec<(usize, usize, bool)> = (0..10_000u64)
        .into_par_iter()
        .map(|i| {
            let mut r = test_rng(80_000 + i);
            let k = r.random_range(1..=64usize);
            let mut ids: Vec<u64> = Vec::with_capacity(k);
            while ids.len() < k {
                let id: u64 = r.random();
                if !ids.contains(&id) {
                    ids.push(id);
                }
            }
            let packet = encode_schedule(&ids, k as u16, DEFAULT_BUCKET_SIZE, i as u32).unwrap();
            let mut slots: Vec<u16> = ids.iter().map(|&id| decode_schedule(&packet, id).unwrap()).collect();
            slots.sort_unstable();
            let collision_free = slots.iter().enumerate().all(|(j, &s)| s as usize == j);
            (k, packet.payload_bits, collision_free)
        })
        .collect();
    let violations = results.iter().filter(|r| !r.2).count();
    let log2e = std::f64::consts::LOG2_E;
    let payload: f64 = results.iter().map(|r| r.1 as f64).sum();
    let bound: f64 = results.iter().map(|r| 4.0 * r.0 as f64 * log2e).sum();
    let ratio = payload / bound * 4.0;
    verdict(
        violations == 0 && payload <= bound,
        format!(
            "10000 instances, {violations} collisions; mean payload {:.2} K·log2(e) (limit 4)",
            ratio
        ),
    )
}

// ---------------------------------------------------------------------------
// 9. Truncated inversion

fn e1_quadrature(x: f64) -> f64 {
    // ∫_x^∞ e^{-g}/g dg with g = x e^u, Simpson over u ∈ [0, 40].
    let n = 200_000;
    let h = 40.0 / n as f64;
    let f = |u: f64| (-x * u.exp()).exp();
    let mut acc = f(0.0) + f(40.0);
    for i in 1..n {
        acc += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    acc * h / 3.0
}

fn truncated_inversion() -> Verdict {
    // Outages of at least a few percent, so 10^6 trials resolve 1% relative error.
    let mut details = Vec::new();
    let mut ok = true;
    let policies = [
        truncated_inversion_policy(1.0, 0.0, 0.63).unwrap(),
        truncated_inversion_policy(1.0, 0.0, 1.07).unwrap(),
        truncated_inversion_for_outage(1.0, 10.0, 0.1).unwrap(),
        truncated_inversion_for_outage(2.0, 0.0, 0.25).unwrap(),
    ];
    for (i, p) in policies.iter().enumerate() {
        let (outage, power) = simulate_truncated_inversion(p, 1_000_000, 900 + i as u64);
        let closed = 1.0 - (-p.threshold).exp();
        let budget = p.level * e1_quadrature(p.threshold);
        let budget_target = [1.0, 1.0, 1.0, 2.0][i];
        let out_err = (outage / closed - 1.0).abs();
        let pow_err = (power / budget_target - 1.0).abs();
        ok &= out_err <= 0.01 && pow_err <= 0.02 && (budget / budget_target - 1.0).abs() <= 1e-6;
        details.push(format!("θ={:.4}: outage {outage:.5} vs {closed:.5}, power {power:.4}", p.threshold));
    }
    verdict(ok, details.join("; "))
}

// ---------------------------------------------------------------------------
// 10. Slicing crossover

fn slicing_crossover() -> Verdict {
    let start = Instant::now();
    let targets = [1e-2, 3e-3, 1e-3];
    let dominance = |snr_critical_db: f64, seed: u64| {
        let s = SlicingScenario {
            snr_broadband_db: 10.0,
            snr_critical_db,
            critical_rate: 0.2,
            trials: 200_000,
            seed,
            ..SlicingScenario::default()
        };
        let (homa, hnoma) = (simulate_homa(&s).unwrap(), simulate_hnoma(&s).unwrap());
        let rate = |r: Option<f64>| r.unwrap_or(f64::NEG_INFINITY);
        targets
            .iter()
            .map(|&e| (rate(homa.rate_at_reliability(e)), rate(hnoma.rate_at_reliability(e))))
            .collect::<Vec<_>>()
    };
    let strong = dominance(20.0, 1001);
    let weak = dominance(0.0, 1002);
    let noma_wins = strong.iter().any(|(o, n)| n > o);
    let oma_wins = weak.iter().any(|(o, n)| o > n);
    let mmtc = |mode| {
        let s = SlicingScenario {
            snr_broadband_db: 20.0,
            snr_massive_db: 10.0,
            massive_load: 3.0,
            massive_rate: 0.5,
            massive_share: 0.5,
            broadband_rates: vec![4.0],
            mode,
            trials: 200_000,
            seed: 1003,
            ..SlicingScenario::default()
        };
        mmtc_embb_sic(&s).unwrap().rows[0].metric
    };
    let (iot_oma, iot_noma) = (mmtc(SharingMode::Homa), mmtc(SharingMode::Hnoma));
    let fmt = |v: &[(f64, f64)]| {
        v.iter()
            .map(|(o, n)| format!("{o:.3}/{n:.3}"))
            .collect::<Vec<_>>()
            .join(" ")
    };
    verdict(
        noma_wins && oma_wins && iot_oma > iot_noma,
        format!(
            "broadband rate H-OMA/H-NOMA at critical outage 1e-2,3e-3,1e-3: critical SNR 20 dB [{}], 0 dB [{}]; decoded IoT at r_B=4: H-OMA {iot_oma:.3} vs H-NOMA {iot_noma:.3}; {:.1}s",
            fmt(&strong),
            fmt(&weak),
            start.elapsed().as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------------------
// 11. Tail statistics

fn exp_samples(n: usize, seed: u64) -> Vec<f64> {
    let mut r = test_rng(seed);
    (0..n).map(|_| Exp1.sample(&mut r)).collect()
}

fn tail_statistics() -> Verdict {
    let gains = exp_samples(10_000_000, 11);
    let pl = fit_power_law_tail(&gains, 0.01).unwrap();
    let TailKind::PowerLaw { exponent, .. } = pl.kind else { unreachable!() };
    drop(gains);

    let mut r = test_rng(12);
    let excesses: Vec<f64> = (0..100_000)
        .map(|_| {
            let u: f64 = r.random();
            ((1.0 - u).powf(-0.1) - 1.0) / 0.1
        })
        .collect();
    let (shape, scale) = fit_gpd_excesses(&excesses).unwrap();

    let (eps, snr_db, n_hold) = (1e-4, 10.0, 1_000_000usize);
    let snr = 10f64.powf(snr_db / 10.0);
    let bound = eps + 3.09 * (eps * (1.0 - eps) / n_hold as f64).sqrt();
    let train = exp_samples(1_000_000, 13);
    let held = exp_samples(n_hold, 14);
    let mut sorted = train.clone();
    sorted.sort_unstable_by(f64::total_cmp);
    let models = [
        fit_power_law_tail(&train, 0.01).unwrap(),
        fit_gpd_tail(&train, sorted[train.len() / 100]).unwrap(),
    ];
    let outages: Vec<f64> = models
        .iter()
        .map(|m| {
            let rate = select_rate(m, eps, snr_db).unwrap().rate;
            held.iter().filter(|&&g| (1.0 + snr * g).log2() < rate).count() as f64 / n_hold as f64
        })
        .collect();
    let ok = (exponent - 1.0).abs() <= 0.05
        && (shape - 0.1).abs() <= 0.05
        && (scale - 1.0).abs() <= 0.1
        && outages.iter().all(|&o| o <= bound);
    verdict(
        ok,
        format!(
            "Rayleigh exponent {exponent:.4}; GPD fit ξ={shape:.4}, σ={scale:.4}; held-out outage power-law {:.2e}, GPD {:.2e} (target 1e-4, bound {bound:.2e})",
            outages[0], outages[1]
        ),
    )
}

// ---------------------------------------------------------------------------
// 12. Reproducibility

fn reproducibility() -> Verdict {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("examples");
    let mut names: Vec<_> = std::fs::read_dir(&dir)
        .unwrap()
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "cfg"))
        .collect();
    names.sort();
    let mut differing = Vec::new();
    for path in &names {
        let cfg = ExperimentConfig::parse(&std::fs::read_to_string(path).unwrap()).unwrap();
        let a = execute(&cfg, Some(1)).unwrap().to_csv();
        let b = execute(&cfg, Some(8)).unwrap().to_csv();
        let c = execute(&cfg, Some(1)).unwrap().to_csv();
        if a != b || a != c {
            differing.push(path.file_name().unwrap().to_string_lossy().into_owned());
        }
    }
    let golden_path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/aloha.csv");
    let golden = std::fs::read_to_string(&golden_path).unwrap_or_default();
    let cfg = ExperimentConfig::parse(&std::fs::read_to_string(dir.join("aloha.cfg")).unwrap()).unwrap();
    let golden_ok = execute(&cfg, Some(3)).unwrap().to_csv() == golden;
    verdict(
        differing.is_empty() && golden_ok && !names.is_empty(),
        format!(
            "{} bundled configs byte-identical across runs and 1 vs 8 workers (differing: {:?}); aloha.cfg matches golden CSV: {golden_ok}",
            names.len(),
            differing
        ),
    )
}

fn main() {
    let criteria: [(u32, &str, fn() -> Verdict); 12] = [
        (1, "slotted ALOHA throughput", aloha),
        (2, "acknowledgment sizes", ack_sizes),
        (3, "AMP exactness", amp_exactness),
        (4, "AMP vs covariance regimes", regimes),
        (5, "covariance correctness", covariance_correctness),
        (6, "state evolution", state_evolution_match),
        (7, "coded slotted ALOHA peeling", coded_sa_exhaustive),
        (8, "schedule codec", schedule_codec),
        (9, "truncated inversion", truncated_inversion),
        (10, "slicing crossover", slicing_crossover),
        (11, "tail statistics", tail_statistics),
        (12, "reproducibility", reproducibility),
    ];
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (id, name, run) in criteria {
        if !wanted.is_empty() && !wanted.contains(&id) {
            continue;
        }
        let v = panic::catch_unwind(run).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            verdict(false, format!("panicked: {msg}"))
        });
        println!("criterion {id:>2} {} {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        failed += (!v.pass) as u32;
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
