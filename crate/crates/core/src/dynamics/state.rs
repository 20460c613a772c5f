use crate::model::Potential;
use serde::{Deserialize, Serialize};

/// Phase-space point. The line position is stored as an integer cell plus the
/// torus coordinate `a ∈ [0, 1)`, so `a` stays exact however far the particle
/// travels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseState {
    cell: i64,
    a: f64,
    pub k: f64,
    pub t: f64,
}

impl PhaseState {
    pub fn new(x: f64, k: f64, t: f64) -> Self {
        Self::from_parts(0, x, k, t)
    }

    /// State at line position `cell + offset`; `offset` may be any real.
    pub fn from_parts(cell: i64, offset: f64, k: f64, t: f64) -> Self {
        let shift = offset.floor();
        let mut a = offset - shift;
        let mut cell = cell + shift as i64;
        if a >= 1.0 {
            // rounding of values just below an integer
            a = 0.0;
            cell += 1;
        }
        PhaseState { cell, a, k, t }
    }

    #[inline]
    pub fn cell(&self) -> i64 {
        self.cell
    }

    /// Torus coordinate in `[0, 1)`.
    #[inline]
    pub fn a(&self) -> f64 {
        self.a
    }

    #[inline]
    pub fn x_line(&self) -> f64 {
        self.cell as f64 + self.a
    }

    #[inline]
    pub fn energy(&self, v: &Potential) -> f64 {
        0.5 * self.k * self.k + v.value(self.a)
    }

    pub fn is_finite(&self) -> bool {
        self.a.is_finite() && self.k.is_finite() && self.t.is_finite()
    }

    /// Same position shifted by `dx` along the line.
    pub fn displaced(&self, dx: f64, k: f64, t: f64) -> Self {
        let whole = dx.trunc();
        Self::from_parts(self.cell + whole as i64, self.a + (dx - whole), k, t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn torus_coordinate_tracks_line_position() {
        for &x in &[0.0, 0.3, -0.3, 5.75, -1e6 - 0.25, 1e9 + 0.5] {
            let s = PhaseState::new(x, 0.0, 0.0);
            assert!((0.0..1.0).contains(&s.a()));
            assert!((s.x_line() - x).abs() <= 1e-12 * x.abs().max(1.0));
            assert!((s.a() - x.rem_euclid(1.0)).abs() < 1e-9);
        }
        let s = PhaseState::new(0.3, 1.0, 0.0).displaced(1e6 + 0.5, 1.0, 1.0);
        assert_eq!(s.cell(), 1_000_000);
        assert!((s.a() - 0.8).abs() < 1e-12);
    }
}
