//! Statistical behaviour of the estimators under replica and truncation
//! changes.

use lerwlab::config::{bias_bound, SimConfig};
use lerwlab::estimators::estimate_green;
use lerwlab::experiment::window_hit_estimates;
use lerwlab::lattice::LatticePoint;

#[test]
fn quadrupling_replicas_halves_the_interval() {
    let x = [2, 0, 0, 0, 0];
    let small = window_hit_estimates(&SimConfig::new(5, 20_000, 16.0).with_seed(4), &x, &[4], 1).unwrap();
    let large = window_hit_estimates(&SimConfig::new(5, 80_000, 16.0).with_seed(4), &x, &[4], 1).unwrap();
    let width = |e: &lerwlab::estimators::HitWindowEstimate| e.ci95.1 - e.ci95.0;
    let ratio = width(&large[0]) / width(&small[0]);
    assert!((0.4..0.6).contains(&ratio), "width ratio {ratio}");
}

#[test]
fn farther_points_are_hit_less_often() {
    let config = SimConfig::new(5, 200_000, 16.0).with_seed(9);
    let xs = [LatticePoint::on_axis(5, 0, 4), LatticePoint::on_axis(5, 0, 8)];
    let rep = estimate_green(&xs, &config, 1).unwrap();
    assert!(rep[1].p_lerw_ci.1 < rep[0].p_lerw_ci.0, "{:?} vs {:?}", rep[0].p_lerw_ci, rep[1].p_lerw_ci);
    assert!(rep.iter().all(|g| g.violations == 0 && g.p_lerw <= g.p_srw));
}

#[test]
fn doubling_rho_tightens_the_bias_bound() {
    let b8 = bias_bound(5, 8.0);
    let b16 = bias_bound(5, 16.0);
    assert!((b8 / b16 - 8.0).abs() < 1e-12);
    let x = [3, 0, 0, 0, 0];
    let n = [3, 9, 27];
    let lo = window_hit_estimates(&SimConfig::new(5, 50_000, 24.0).with_seed(1).with_rho(8.0), &x, &n, 1).unwrap();
    let hi = window_hit_estimates(&SimConfig::new(5, 50_000, 24.0).with_seed(2).with_rho(16.0), &x, &n, 1).unwrap();
    for (a, b) in lo.iter().zip(&hi) {
        let joint = (a.sigma * a.sigma + b.sigma * b.sigma).sqrt();
        assert!((a.estimate - b.estimate).abs() < b8 + 3.0 * joint, "n={}", a.n);
        assert_eq!(b.bias_bound, b16);
    }
}
