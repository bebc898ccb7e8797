//! Simple random walk on Z^d.

use rand::RngCore;

use crate::config::DEFAULT_MAX_STEPS;
use crate::error::{precondition, LabError, Result};
use crate::lattice::{norm2, LatticePath, LatticePoint, COORD_LIMIT};
use crate::rng::DirectionSource;

/// Position of a walk with its squared norm kept up to date.
#[derive(Clone, Debug)]
pub struct Walker {
    pub pos: Vec<i32>,
    pub r2: i64,
    pub steps: u64,
    dirs: DirectionSource,
}

impl Walker {
    pub fn new(d: usize) -> Self {
        Self { pos: vec![0; d], r2: 0, steps: 0, dirs: DirectionSource::new(2 * d as u32) }
    }

    pub fn dim(&self) -> usize {
        self.pos.len()
    }

    pub fn reset_to(&mut self, start: &[i32]) {
        self.pos.copy_from_slice(start);
        self.r2 = norm2(start);
        self.steps = 0;
        self.dirs.reset();
    }

    /// One uniform nearest-neighbour step; returns the direction taken.
    #[inline]
    pub fn step<R: RngCore>(&mut self, rng: &mut R) -> Result<usize> {
        let dir = self.dirs.draw(rng);
        let delta = 1 - 2 * (dir & 1) as i64;
        let slot = &mut self.pos[dir >> 1];
        let old = *slot as i64;
        if old * delta >= COORD_LIMIT - 1 {
            return Err(LabError::CoordinateOverflow(self.steps));
        }
        *slot = (old + delta) as i32;
        self.r2 += 2 * old * delta + 1;
        self.steps += 1;
        Ok(dir)
    }
}

/// Runs a simple random walk from `start` until it first leaves the closed
/// Euclidean ball of radius `radius`. The last point is the first one outside.
pub fn simulate_srw_until_exit<R: RngCore>(
    start: &LatticePoint,
    radius: f64,
    rng: &mut R,
    max_steps: u64,
) -> Result<LatticePath> {
    if radius.is_nan() || radius < 0.0 {
        return precondition("radius must be non-negative");
    }
    if start.norm() > radius {
        return precondition(format!("start {start} lies outside the ball of radius {radius}"));
    }
    let r2_max = radius * radius;
    let mut w = Walker::new(start.dim());
    w.reset_to(start.coords());
    let mut coords = start.coords().to_vec();
    while (w.r2 as f64) <= r2_max {
        if w.steps >= max_steps {
            return Err(LabError::Truncated { steps: w.steps, cap: max_steps });
        }
        w.step(rng)?;
        coords.extend_from_slice(&w.pos);
    }
    Ok(LatticePath::from_flat_unchecked(start.dim(), coords))
}

/// [`simulate_srw_until_exit`] with the default step cap.
pub fn simulate_srw_until_exit_default<R: RngCore>(start: &LatticePoint, radius: f64, rng: &mut R) -> Result<LatticePath> {
    simulate_srw_until_exit(start, radius, rng, DEFAULT_MAX_STEPS)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::l1_dist;
    use crate::rng::rng_stream;

    #[test]
    fn tiny_radius_exits_in_one_step() {
        let mut rng = rng_stream(1, 0);
        let p = simulate_srw_until_exit(&LatticePoint::origin(5), 0.5, &mut rng, 10).unwrap();
        assert_eq!(p.len(), 1);
    }

    #[test]
    fn paths_are_nearest_neighbour_and_exit_once() {
        for r in 0..200 {
            let mut rng = rng_stream(9, r);
            let p = simulate_srw_until_exit(&LatticePoint::origin(5), 6.0, &mut rng, 1_000_000).unwrap();
            for i in 1..p.num_points() {
                assert_eq!(l1_dist(p.point(i - 1), p.point(i)), 1);
            }
            let last = p.num_points() - 1;
            for i in 0..last {
                assert!(norm2(p.point(i)) <= 36);
            }
            assert!(norm2(p.point(last)) > 36);
        }
    }

    #[test]
    fn step_cap_is_reported() {
        let mut rng = rng_stream(3, 0);
        let err = simulate_srw_until_exit(&LatticePoint::origin(5), 1000.0, &mut rng, 50).unwrap_err();
        assert!(matches!(err, LabError::Truncated { steps: 50, cap: 50 }));
    }

    #[test]
    fn start_outside_ball_rejected() {
        let mut rng = rng_stream(3, 0);
        let start = LatticePoint::on_axis(5, 0, 9);
        assert!(simulate_srw_until_exit(&start, 4.0, &mut rng, 50).is_err());
    }
}
