//! Transition probabilities of the continuous-time walk on the half-line.
//!
//! The walk on `Z_+ = {0, 1, 2, ...}` waits an exponential unit-mean time at
//! each vertex and then jumps to a uniformly chosen neighbour: `0 -> 1`
//! surely, `m -> m +- 1` with probability 1/2 each for `m >= 1`. With `p_k`
//! the `k`-step law of the jump chain,
//!
//! ```text
//! q_t(a, m) = sum_k e^{-t} t^k / k! * p_k(a, m)
//! ```
//!
//! The series is cut to a window `[k_lo, k_hi]` whose Poisson mass is
//! certified by geometric tail bounds, and `p_k` is propagated exactly by
//! dynamic programming on the states that can still matter.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{precondition, LabError, Result};
use crate::numeric::{ln_factorial, CompensatedSum};

/// Largest tolerated uniformization order.
pub const MAX_ORDER: u64 = 20_000_000;
/// Largest tolerated number of cells in a discrete kernel table.
pub const MAX_CELLS: u64 = 50_000_000;

/// Poisson(t) weights on `[k_lo, k_hi]`, with a bound on the omitted mass.
#[derive(Clone, Debug, PartialEq)]
pub struct PoissonWindow {
    pub k_lo: u64,
    pub k_hi: u64,
    pub weights: Vec<f64>,
    /// Upper bound on the Poisson mass outside the window.
    pub tail_bound: f64,
}

impl PoissonWindow {
    /// Window with outside mass at most `budget`.
    pub fn new(t: f64, budget: f64) -> Result<Self> {
        if !(t.is_finite() && t >= 0.0) {
            return precondition(format!("time must be finite and nonnegative, got {t}"));
        }
        if !(budget > 0.0 && budget < 1.0) {
            return precondition("tail budget must lie in (0, 1)");
        }
        if t == 0.0 {
            return Ok(Self { k_lo: 0, k_hi: 0, weights: vec![1.0], tail_bound: 0.0 });
        }
        let chernoff = chernoff_order(t, budget / 2.0);
        if chernoff > MAX_ORDER as f64 {
            return Err(LabError::ResourceGate(format!(
                "Poisson({t}) tail below {budget:e} needs order ~{chernoff:.0} > {MAX_ORDER}"
            )));
        }
        let half = budget / 2.0;
        let mode = t.floor() as u64;
        let w_mode = (-t + mode as f64 * t.ln() - ln_factorial(mode)).exp();

        // Upward: for k > t the ratios t/(k+1) decrease, so the tail after k
        // is at most w_{k+1} / (1 - t/(k+2)).
        let mut up = vec![w_mode];
        let mut k = mode;
        let upper = loop {
            let next = up[up.len() - 1] * t / (k + 1) as f64;
            let ratio = t / (k + 2) as f64;
            if (k as f64) > t && ratio < 1.0 {
                let bound = next / (1.0 - ratio);
                if bound <= half {
                    break bound;
                }
            }
            up.push(next);
            k += 1;
        };
        let k_hi = k;

        // Downward: for k < t the ratios k/t decrease, so the mass below k
        // is at most w_{k-1} / (1 - (k-1)/t).
        let mut down = Vec::new();
        let mut k = mode;
        let mut w = w_mode;
        let lower = loop {
            if k == 0 {
                break 0.0;
            }
            let prev = w * k as f64 / t;
            let bound = prev / (1.0 - (k - 1) as f64 / t);
            if bound <= half {
                break bound;
            }
            down.push(prev);
            w = prev;
            k -= 1;
        };
        let k_lo = k;
        down.reverse();
        down.extend(up);
        // The mode weight carries the rounding of the log-space evaluation;
        // rescaling to total mass one removes it at a cost below the tail.
        let total: f64 = down.iter().copied().collect::<CompensatedSum>().value();
        for x in down.iter_mut() {
            *x /= total;
        }
        Ok(Self { k_lo, k_hi, weights: down, tail_bound: upper + lower })
    }

    #[inline]
    pub fn weight(&self, k: u64) -> f64 {
        if k < self.k_lo || k > self.k_hi {
            0.0
        } else {
            self.weights[(k - self.k_lo) as usize]
        }
    }
}

/// Smallest `k > t` whose Chernoff bound `P(N >= k) <= e^{-t} (e t / k)^k`
/// drops below `eps`.
pub fn chernoff_order(t: f64, eps: f64) -> f64 {
    let target = eps.ln();
    let log_bound = |k: f64| -t + k - k * (k / t).ln();
    let mut hi = t.max(1.0) * 2.0 + 10.0;
    while log_bound(hi) > target {
        hi *= 2.0;
    }
    let mut lo = t;
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if log_bound(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi.ceil()
}

/// One step of the jump chain applied to `v` (states `0..v.len()`); mass
/// pushed past the last state is dropped.
fn jump_step(v: &[f64], out: &mut Vec<f64>, len: usize) {
    out.clear();
    out.resize(len, 0.0);
    for (m, &p) in v.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        if m == 0 {
            if len > 1 {
                out[1] += p;
            }
        } else {
            let h = 0.5 * p;
            out[m - 1] += h;
            if m + 1 < len {
                out[m + 1] += h;
            }
        }
    }
}

/// Propagates the chain from `a` for `k_hi` steps, accumulating the Poisson
/// mixture on states `0..=m_max` and the mixture mass beyond `m_max`.
///
/// States above `m_max` whose combined mass is below `drop / (k_hi + 1)` are
/// discarded after each step. The chain is an l1 contraction, so every
/// output moves by at most the total discarded mass, which is returned third
/// and never exceeds `drop`.
fn mixture_row(a: usize, m_max: usize, win: &PoissonWindow, drop: f64) -> (Vec<f64>, f64, f64) {
    let k_hi = win.k_hi as usize;
    let per_step = drop / (k_hi as f64 + 1.0);
    let mut dropped = 0.0;
    let mut acc = vec![CompensatedSum::new(); m_max + 1];
    let mut beyond = CompensatedSum::new();
    let mut v = vec![0.0; a + 1];
    v[a] = 1.0;
    let mut next = Vec::new();
    for k in 0..=k_hi {
        let w = win.weight(k as u64);
        if w > 0.0 {
            let mut inside = CompensatedSum::new();
            for (m, &p) in v.iter().enumerate().take(m_max + 1) {
                if p != 0.0 {
                    acc[m].add(w * p);
                    inside.add(p);
                }
            }
            beyond.add(w * (1.0 - inside.value()).max(0.0));
        }
        if k == k_hi {
            break;
        }
        // States above m_max + (remaining steps) cannot come back in time;
        // keep one extra so the bookkeeping of `beyond` stays exact.
        let remaining = k_hi - k - 1;
        let len = (v.len() + 1).min(m_max + remaining + 2);
        jump_step(&v, &mut next, len);
        std::mem::swap(&mut v, &mut next);
        let mut suffix = 0.0;
        while v.len() > m_max + 1 {
            let last = v[v.len() - 1];
            if suffix + last >= per_step {
                break;
            }
            suffix += last;
            v.pop();
        }
        dropped += suffix;
        // Mass of dropped states is recovered as 1 - inside above.
    }
    (acc.iter().map(|s| s.value()).collect(), beyond.value(), dropped)
}

/// Rounding allowance for `k_hi` halving-and-adding steps.
fn rounding_allowance(k_hi: u64) -> f64 {
    (k_hi as f64 + 1.0) * f64::EPSILON
}

fn check_tol(tol: f64) -> Result<()> {
    if !(tol > 0.0 && tol <= 1e-6) {
        return precondition(format!("tol must lie in (0, 1e-6], got {tol}"));
    }
    Ok(())
}

/// Mass the state trimming of `mixture_row` may discard.
fn drop_budget(tol: f64) -> f64 {
    tol / 8.0
}

/// Window whose tail, rounding and trimming fit in `tol`, or a resource error.
fn window_for(t: f64, tol: f64) -> Result<PoissonWindow> {
    let win = PoissonWindow::new(t, tol / 4.0)?;
    let err = 2.0 * win.tail_bound + rounding_allowance(win.k_hi) + drop_budget(tol);
    if err > tol {
        return Err(LabError::ResourceGate(format!(
            "tol {tol:e} at t = {t} is below the rounding floor {:.1e}",
            rounding_allowance(win.k_hi)
        )));
    }
    Ok(win)
}

/// `p_k(a, m)` for `k <= k_max`, `a, m <= m_max`.
#[derive(Clone, Debug)]
pub struct DiscreteKernel {
    k_max: usize,
    m_max: usize,
    values: Vec<f64>,
}

impl DiscreteKernel {
    pub fn k_max(&self) -> usize {
        self.k_max
    }

    pub fn m_max(&self) -> usize {
        self.m_max
    }

    pub fn get(&self, k: usize, a: usize, m: usize) -> f64 {
        assert!(k <= self.k_max && a <= self.m_max && m <= self.m_max);
        let w = self.m_max + 1;
        self.values[(k * w + a) * w + m]
    }
}

/// Exact `k`-step laws of the jump chain, for every start `a <= m_max`.
pub fn discrete_halfline_kernel(k_max: usize, m_max: usize) -> Result<DiscreteKernel> {
    let w = m_max + 1;
    let cells = (k_max as u64 + 1) * (w as u64) * (w as u64);
    if cells > MAX_CELLS {
        return Err(LabError::ResourceGate(format!("{cells} cells exceed the cap of {MAX_CELLS}")));
    }
    let mut values = vec![0.0; cells as usize];
    let mut next = Vec::new();
    for a in 0..=m_max {
        let mut v = vec![0.0; a + 1];
        v[a] = 1.0;
        for k in 0..=k_max {
            for (m, &p) in v.iter().enumerate().take(w) {
                values[(k * w + a) * w + m] = p;
            }
            let len = v.len() + 1;
            jump_step(&v, &mut next, len);
            std::mem::swap(&mut v, &mut next);
        }
    }
    Ok(DiscreteKernel { k_max, m_max, values })
}

/// `q_t(a, m)` to absolute accuracy `tol`.
pub fn q_t(t: f64, a: usize, m: usize, tol: f64) -> Result<f64> {
    check_tol(tol)?;
    let win = window_for(t, tol)?;
    let (row, _, _) = mixture_row(a, a.max(m), &win, drop_budget(tol));
    Ok(row[m])
}

/// `q_t(a, m)` for all `a, m <= m_max`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HalfLineKernelTable {
    pub t: f64,
    pub m_max: usize,
    pub tol: f64,
    pub k_lo: u64,
    pub k_max: u64,
    /// Bound on the absolute error of every entry and of every row's mass
    /// balance.
    pub truncation_error: f64,
    values: Vec<f64>,
    /// Mass of each row beyond `m_max`.
    row_tail: Vec<f64>,
}

impl HalfLineKernelTable {
    pub fn build(t: f64, m_max: usize, tol: f64) -> Result<Self> {
        check_tol(tol)?;
        let win = window_for(t, tol)?;
        let w = m_max + 1;
        let mut values = Vec::with_capacity(w * w);
        let mut row_tail = Vec::with_capacity(w);
        let mut max_dropped: f64 = 0.0;
        for a in 0..=m_max {
            let (row, tail, dropped) = mixture_row(a, m_max, &win, drop_budget(tol));
            max_dropped = max_dropped.max(dropped);
            values.extend(row);
            row_tail.push(tail);
        }
        Ok(Self {
            t,
            m_max,
            tol,
            k_lo: win.k_lo,
            k_max: win.k_hi,
            truncation_error: 2.0 * win.tail_bound + rounding_allowance(win.k_hi) + max_dropped,
            values,
            row_tail,
        })
    }

    pub fn get(&self, a: usize, m: usize) -> f64 {
        self.values[a * (self.m_max + 1) + m]
    }

    pub fn row(&self, a: usize) -> &[f64] {
        let w = self.m_max + 1;
        &self.values[a * w..(a + 1) * w]
    }

    pub fn row_tail(&self, a: usize) -> f64 {
        self.row_tail[a]
    }

    /// CSV with header `t,a,m,q,tol`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(["t", "a", "m", "q", "tol"])?;
        for a in 0..=self.m_max {
            for m in 0..=self.m_max {
                wtr.write_record([
                    format!("{}", self.t),
                    a.to_string(),
                    m.to_string(),
                    format!("{:e}", self.get(a, m)),
                    format!("{:e}", self.tol),
                ])?;
            }
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        crate::records::write_atomic(path, |f| self.write_csv(f))
    }
}

/// `q_t(0, m)` for `m <= m_max`, the row the estimators need.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KernelRow {
    pub t: f64,
    pub m_max: usize,
    pub tol: f64,
    pub k_max: u64,
    pub truncation_error: f64,
    pub values: Vec<f64>,
    /// Mass beyond `m_max`.
    pub tail_mass: f64,
}

impl KernelRow {
    pub fn origin(t: f64, m_max: usize, tol: f64) -> Result<Self> {
        check_tol(tol)?;
        let win = window_for(t, tol)?;
        let (values, tail_mass, dropped) = mixture_row(0, m_max, &win, drop_budget(tol));
        Ok(Self {
            t,
            m_max,
            tol,
            k_max: win.k_hi,
            truncation_error: 2.0 * win.tail_bound + rounding_allowance(win.k_hi) + dropped,
            values,
            tail_mass,
        })
    }

    #[inline]
    pub fn get(&self, m: usize) -> f64 {
        self.values.get(m).copied().unwrap_or(0.0)
    }

    /// Mass strictly beyond `m` (for `m <= m_max`).
    pub fn tail_beyond(&self, m: usize) -> f64 {
        let inner: CompensatedSum = self.values[m + 1..].iter().copied().collect();
        self.tail_mass + inner.value()
    }
}

/// `ln q_t(0, m)` with relative rather than absolute accuracy, for entries
/// far below any table tolerance. Uses `p_k(0, m) = P(|S_k| = m)` for the
/// simple walk `S` on `Z` and sums the Poisson mixture in log space until the
/// terms fall below `1e-18` of the running maximum on both sides.
pub fn ln_q_origin(t: f64, m: usize) -> f64 {
    if t == 0.0 {
        return if m == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    let ln_t = t.ln();
    let fold = if m == 0 { 0.0 } else { std::f64::consts::LN_2 };
    let term = |k: usize| {
        let up = (k + m) / 2;
        // Poisson weight times C(k, up) 2^{-k}; the k! cancels.
        -t + k as f64 * ln_t - ln_factorial(up as u64) - ln_factorial((k - up) as u64) - k as f64 * std::f64::consts::LN_2
            + fold
    };
    // Terms rise then fall in k; start at the first admissible k and stop
    // once past the peak and negligible.
    let cutoff = (1e-18f64).ln();
    let mut peak = f64::NEG_INFINITY;
    let mut acc = 0.0;
    let mut k = m;
    loop {
        let lt = term(k);
        if lt > peak {
            // Rescale the running sum to the new peak.
            acc *= (peak - lt).exp();
            peak = lt;
        }
        acc += (lt - peak).exp();
        if k as f64 > t && lt - peak < cutoff {
            break;
        }
        k += 2;
    }
    peak + acc.ln()
}

/// Smallest `h` with `P(X_t > h) < tol` for the walk started at 0, certified
/// up to the kernel's own truncation error.
pub fn kernel_horizon(t: f64, tol: f64) -> Result<usize> {
    check_tol(tol)?;
    // Chernoff for the walk on Z dominates the reflected walk:
    // P(|Z_t| >= h) <= 2 exp(t (cosh s - 1) - s h), s = asinh(h / t).
    let bound = |h: f64| {
        if t == 0.0 {
            return if h > 0.0 { 0.0 } else { 1.0 };
        }
        let s = (h / t).asinh();
        2.0 * (t * (s.cosh() - 1.0) - s * h).exp()
    };
    let mut guess = 1.0;
    while bound(guess) >= tol / 2.0 {
        guess *= 1.5;
    }
    let row = KernelRow::origin(t, guess.ceil() as usize + 1, tol / 4.0)?;
    let mut h = row.m_max;
    while h > 0 && row.tail_beyond(h - 1) + row.truncation_error < tol {
        h -= 1;
    }
    Ok(h)
}
