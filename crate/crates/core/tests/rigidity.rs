use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use rsp_core::bits::BitString;
use rsp_core::rigidity::{self, Device};

fn honest(n: usize, seed: u64) -> Device {
    rigidity::device_from_honest(n, 2, &mut ChaCha20Rng::seed_from_u64(seed)).unwrap()
}

#[test]
fn perturbed_device_matches_closed_forms() {
    let n = 2;
    let dev = honest(n, 1);
    for k in 0..=10 {
        let eps = k as f64 / 10.0;
        let p = rigidity::perturb_device(&dev, eps).unwrap();
        let g = rigidity::gammas(&p).unwrap();
        assert!((g.gamma_h - eps * (1.0 - 0.25)).abs() < 1e-12, "eps {eps}: {}", g.gamma_h);
        assert!(g.gamma_p.abs() < 1e-12);
        for a in BitString::all(n) {
            for b in BitString::all(n) {
                let sign = if a.dot(&b).unwrap() == 1 { -1.0 } else { 1.0 };
                let v = rigidity::pauli_relation_value(&p, &a, &b).unwrap();
                assert!((v.re - ((1.0 - eps) * sign + eps)).abs() < 1e-12);
                assert!(v.im.abs() < 1e-12);
            }
        }
    }
}

#[test]
fn gaps_grow_monotonically_with_epsilon() {
    let dev = honest(2, 2);
    let mut last: Option<(f64, f64, f64)> = None;
    for k in 0..=10 {
        let p = rigidity::perturb_device(&dev, k as f64 / 10.0).unwrap();
        let grid = rigidity::pauli_grid(&p).unwrap().max_gap;
        let anti = (rigidity::anticommutation_value(&p, 1).unwrap() + 1.0).abs();
        let xt = rigidity::success_relations_report(&p).unwrap().max_xtilde_gap;
        if k == 0 {
            assert!(grid < 1e-12 && anti < 1e-12 && xt < 1e-12);
        }
        if let Some((g0, a0, x0)) = last {
            assert!(grid > g0 && anti > a0 && xt > x0, "step {k}");
        }
        last = Some((grid, anti, xt));
    }
}

#[test]
fn argmax_paths_agree() {
    for n in 1..=3 {
        let dev = honest(n, 10 + n as u64);
        for eps in [0.0, 0.3, 0.8] {
            let p = rigidity::perturb_device(&dev, eps).unwrap();
            let r = rigidity::argmax_report(&p).unwrap();
            assert!(r.gap < 1e-12, "n={n} eps={eps}: {r:?}");
        }
    }
}

#[test]
fn sigma_blocks_partition_unit_trace() {
    for n in 1..=3 {
        let dev = rigidity::perturb_device(&honest(n, 20), 0.25).unwrap();
        for theta in BitString::all(n) {
            let s = dev.sigma_state(&theta).unwrap();
            assert!((s.total_trace() - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn diagnose_reports_honest_device_cleanly() {
    let (report, grid) = rigidity::diagnose(&honest(2, 30)).unwrap();
    assert!(report.pauli_max_gap < 1e-12 && grid.max_gap < 1e-12);
    assert!(report.anticommutation.iter().all(|v| (v + 1.0).abs() < 1e-12));
    assert!(report.isometry.is_some() && !report.bb84.is_empty());
    assert_eq!(grid.to_csv().lines().count(), 1 + 16);
}

#[test]
fn size_guard_rejects_large_devices() {
    assert!(rigidity::device_from_honest(4, 2, &mut ChaCha20Rng::seed_from_u64(0)).is_err());
    assert!(rigidity::device_from_honest(1, 3, &mut ChaCha20Rng::seed_from_u64(0)).is_err());
}
