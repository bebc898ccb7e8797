//! Half-line kernel against closed forms and the semigroup property.

use lerwlab::kernel::{q_t, HalfLineKernelTable};

/// `e^{-t} I_m(t)` by its power series, summed in log space.
fn scaled_bessel(t: f64, m: usize) -> f64 {
    let half = (t / 2.0).ln();
    let mut acc = 0.0;
    let mut ln_fact_j = 0.0;
    let mut ln_fact_jm: f64 = (1..=m).map(|k| (k as f64).ln()).sum();
    for j in 0..2000usize {
        if j > 0 {
            ln_fact_j += (j as f64).ln();
            ln_fact_jm += ((j + m) as f64).ln();
        }
        let term = ((2 * j + m) as f64 * half - ln_fact_j - ln_fact_jm - t).exp();
        acc += term;
        if j as f64 > t && term < 1e-300 {
            break;
        }
    }
    acc
}

#[test]
fn origin_row_is_the_folded_line_walk() {
    // |Y_t| for the rate-1 walk on Z: q_t(0, 0) = e^{-t} I_0(t), q_t(0, m) = 2 e^{-t} I_m(t).
    for t in [0.5, 3.0, 20.0, 75.0] {
        let tab = HalfLineKernelTable::build(t, 40, 1e-12).unwrap();
        for m in 0..=40 {
            let exact = if m == 0 { 1.0 } else { 2.0 } * scaled_bessel(t, m);
            assert!((tab.get(0, m) - exact).abs() < 1e-11, "t={t} m={m}: {} vs {exact}", tab.get(0, m));
        }
    }
}

#[test]
fn chapman_kolmogorov_on_tables() {
    let m_max = 200;
    for (s, t) in [(0.5, 2.0), (3.0, 7.0), (10.0, 10.0)] {
        let a = HalfLineKernelTable::build(s, m_max, 1e-13).unwrap();
        let b = HalfLineKernelTable::build(t, m_max, 1e-13).unwrap();
        let c = HalfLineKernelTable::build(s + t, m_max, 1e-13).unwrap();
        for x in 0..=20 {
            for y in 0..=20 {
                let composed: f64 = (0..=m_max).map(|k| a.get(x, k) * b.get(k, y)).sum();
                assert!((composed - c.get(x, y)).abs() < 1e-10, "s={s} t={t} ({x},{y})");
            }
        }
    }
}

#[test]
fn pointwise_matches_table() {
    let tab = HalfLineKernelTable::build(5.0, 30, 1e-12).unwrap();
    for (a, m) in [(0, 0), (3, 7), (30, 1), (12, 12)] {
        assert!((q_t(5.0, a, m, 1e-12).unwrap() - tab.get(a, m)).abs() < 1e-11);
    }
}
