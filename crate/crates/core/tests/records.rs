use kicksim_core::dynamics::FlowParams;
use kicksim_core::records::*;
use kicksim_core::rng::{stream, Domain};
use kicksim_core::{stats, Error, ModelSpec};

fn laplace() -> AveragedWalk {
    AveragedWalk::new(StepLaw::Laplace { scale: 1.0 })
}

fn coarse_marginal(masses: &[f64], bins: usize, factor: usize) -> Vec<f64> {
    v_marginal(masses, bins).chunks(factor).map(|c| c.iter().sum()).collect()
}

#[test]
fn two_point_walk_records_are_unit_steps() {
    let walk = AveragedWalk::new(StepLaw::TwoPoint { step: 1.0 });
    let t = ladder_estimate(&walk, 10_000, 3, Grid::for_scale(1.0, GRID_BINS)).unwrap();
    assert!(t.pool.iter().all(|&(v, w)| v == 1.0 && w == 1.0));
    assert_eq!(t.mean_height, 1.0);
}

#[test]
fn two_point_limit_is_uniform_below_one_step() {
    let walk = AveragedWalk::new(StepLaw::TwoPoint { step: 1.0 });
    let grid = Grid::for_scale(1.0, GRID_BINS);
    let t = ladder_estimate(&walk, 10_000, 3, grid).unwrap();
    let marg = v_marginal(&pi_infinity(&t).unwrap(), grid.bins);
    // the atom at v = 1 sits at the left edge of bin 32
    let cell = grid.width();
    let z = 32.0 * cell + 0.5 * cell;
    for (i, m) in marg.iter().enumerate() {
        let expect = match i {
            0..32 => cell / z,
            32 => 0.5 * cell / z,
            _ => 0.0,
        };
        assert!((m - expect).abs() < 1e-12, "bin {i}: {m} vs {expect}");
    }
}

#[test]
fn ladder_height_positive_and_normalized() {
    let grid = Grid::for_scale(1.0, GRID_BINS);
    let t = ladder_estimate(&laplace(), 20_000, 5, grid).unwrap();
    assert!(t.mean_height > 0.0 && t.mean_height.is_finite());
    assert!((t.masses.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    assert!((pi_infinity(&t).unwrap().iter().sum::<f64>() - 1.0).abs() < 1e-6);
    // records move the maximum by at most the achieving step
    assert!(t.pool.iter().all(|&(v, w)| v > 0.0 && v <= w));
}

#[test]
fn too_few_records_is_rejected() {
    let r = ladder_estimate(&laplace(), 10, 1, Grid::for_scale(1.0, 16));
    assert!(matches!(r, Err(Error::Precondition(_))));
}

#[test]
fn independent_ladder_estimates_agree() {
    let grid = Grid::for_scale(1.0, GRID_BINS);
    let a = ladder_estimate(&laplace(), 200_000, 11, grid).unwrap();
    let b = ladder_estimate(&laplace(), 200_000, 12, grid).unwrap();
    let d = l1(&coarse_marginal(&a.masses, 256, 16), &coarse_marginal(&b.masses, 256, 16));
    assert!(d < 0.01, "{d}");
}

#[test]
fn ladder_estimate_is_deterministic_and_caches() {
    let grid = Grid::for_scale(1.0, 64);
    let dir = std::env::temp_dir().join(format!("kicksim-ladder-test-{}", std::process::id()));
    let a = ladder_cached(&laplace(), 10_000, 9, grid, Some(&dir)).unwrap();
    let b = ladder_cached(&laplace(), 10_000, 9, grid, Some(&dir)).unwrap();
    let c = ladder_estimate(&laplace(), 10_000, 9, grid).unwrap();
    assert_eq!(a.pool, b.pool);
    assert_eq!(a.pool, c.pool);
    assert_eq!(a.masses, c.masses);
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn laplace_limit_is_memoryless() {
    let grid = Grid::for_scale(1.0, GRID_BINS);
    let t = ladder_estimate(&laplace(), 100_000, 2, grid).unwrap();
    let pi = pi_infinity(&t).unwrap();
    let d = memoryless_l1(&pi, &grid, 1.0);
    assert!(d < 0.02, "{d}");
}

#[test]
fn direct_first_passage_overshoot_is_exponential() {
    // brute-force walk to L = 50 without the ladder pool
    let mut rng = stream(4, Domain::Synthetic, 0);
    let law = StepLaw::Laplace { scale: 1.0 };
    let mut over = Vec::new();
    while over.len() < 4000 {
        let mut y = 0.0;
        for _ in 0..LADDER_STEP_CAP * 8 {
            y += law.sample(&mut rng);
            if y > 50.0 {
                over.push(y - 50.0);
                break;
            }
        }
    }
    let ks = stats::ks_test(&over, |v| 1.0 - (-v).exp());
    assert!(ks.p_value > 0.001, "{ks:?}");
}

#[test]
fn level_zero_reproduces_ladder_table() {
    let grid = Grid::for_scale(1.0, 64);
    let t = ladder_estimate(&laplace(), 10_000, 21, grid).unwrap();
    for seed in [1, 2] {
        let cfg = OvershootConfig { levels: vec![0.0, 3.0], samples: 10_000, seed, resamples: 5 };
        let tabs = overshoot_scan(&t, &cfg).unwrap();
        assert_eq!(tabs[0].masses, t.masses);
        assert!((tabs[1].masses.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }
}

#[test]
fn overshoot_levels_must_increase() {
    let t = ladder_estimate(&laplace(), 10_000, 21, Grid::for_scale(1.0, 64)).unwrap();
    let cfg = OvershootConfig { levels: vec![2.0, 1.0], samples: 10, seed: 1, resamples: 0 };
    assert!(matches!(overshoot_scan(&t, &cfg), Err(Error::Precondition(_))));
}

#[test]
fn overshoot_distance_shrinks_with_level() {
    let t = ladder_estimate(&laplace(), 50_000, 8, Grid::for_scale(1.0, GRID_BINS)).unwrap();
    let cfg = OvershootConfig { levels: vec![1.0, 2.0, 20.0], samples: 100_000, seed: 3, resamples: 20 };
    let tabs = overshoot_scan(&t, &cfg).unwrap();
    assert!(monotone_within(&tabs, 2.0));
    assert!(tabs[2].l1 < 0.08, "{}", tabs[2].l1);
    assert!(tabs[0].l1 > tabs[2].l1 + 5.0 * tabs[0].l1_se);
}

#[test]
fn homogeneous_crossings_are_uniform_on_torus() {
    let m = ModelSpec::free_homogeneous();
    let walk = AveragedWalk::from_model(&m).unwrap();
    let t = ladder_estimate(&walk, 10_000, 1, Grid::for_scale(walk.scale(), GRID_BINS)).unwrap();
    let cfg = TorusCrossingConfig::new(vec![12.0], 4000, 5);
    let r = &torus_crossing_scan(&m, &t, &cfg).unwrap()[0];
    assert!(r.a_reference.iter().all(|p| (p - 1.0 / 16.0).abs() < 1e-12));
    assert!(r.a_p_value > 0.001, "{}", r.a_p_value);
}

#[test]
fn inhomogeneous_crossings_follow_kappa() {
    let m = ModelSpec::standard_cosine();
    let walk = AveragedWalk::from_model(&m).unwrap();
    let t = ladder_estimate(&walk, 10_000, 1, Grid::for_scale(walk.scale(), GRID_BINS)).unwrap();
    let cfg = TorusCrossingConfig::new(vec![12.0], 20_000, 6);
    let r = &torus_crossing_scan(&m, &t, &cfg).unwrap()[0];
    // the reference a marginal is kappa / kappa-bar averaged over each bin
    for (i, p) in r.a_reference.iter().enumerate() {
        let (a0, a1) = (i as f64 / 16.0, (i + 1) as f64 / 16.0);
        let tau = std::f64::consts::TAU;
        let exact = (0.5 * (a1 - a0) + 0.1 * ((tau * a1).sin() - (tau * a0).sin()) / tau) / 0.5;
        assert!((p - exact).abs() < 1e-4, "{p} {exact}");
    }
    assert!(r.a_l1 < 0.05, "{}", r.a_l1);
}

#[test]
fn low_crossing_level_is_rejected() {
    let m = ModelSpec::standard_cosine();
    let t = ladder_estimate(&laplace(), 10_000, 1, Grid::for_scale(1.0, 64)).unwrap();
    let cfg = TorusCrossingConfig::new(vec![5.0], 10, 1);
    assert!(matches!(torus_crossing_scan(&m, &t, &cfg), Err(Error::Precondition(_))));
}

fn flatten(k: f64, n: usize) -> FlatteningConfig {
    FlatteningConfig { momenta: vec![(k, n)], bins: 10, x0: 0.0, slack: 0.5, seed: 2, flow: FlowParams::default() }
}

#[test]
fn free_flow_first_alarm_is_nearly_uniform() {
    let r = first_jump_flattening(&ModelSpec::free_homogeneous(), &flatten(1000.0, 1_000_000)).unwrap();
    assert!(r.rows[0].chi2_p > 0.01, "{:?}", r.rows[0]);
}

#[test]
fn free_flow_deviation_matches_exponential_wrap() {
    // density (R/k) e^{-R a/k} / (1 - e^{-R/k}) for a free start at 0
    let k = 10.0;
    let r = first_jump_flattening(&ModelSpec::free_homogeneous(), &flatten(k, 2_000_000)).unwrap();
    let c = 1.0 / (1.0 - (-0.1f64).exp());
    let first_bin = c * (1.0 - (-0.01f64).exp()) * 10.0 - 1.0;
    assert!((r.rows[0].sup_deviation - first_bin).abs() < 0.01, "{:?} vs {first_bin}", r.rows[0]);
}

#[test]
fn flattening_needs_high_momentum() {
    let r = first_jump_flattening(&ModelSpec::standard_cosine(), &flatten(1.5, 10));
    assert!(matches!(r, Err(Error::Precondition(_))));
}
