//! Period-1 scalar functions on the torus.

use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

/// A real function with period 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PeriodicFn {
    Constant {
        value: f64,
    },
    /// `mean + sum_m cos[m-1] cos(2 pi m a) + sin[m-1] sin(2 pi m a)`
    Fourier {
        mean: f64,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        cos: Vec<f64>,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        sin: Vec<f64>,
    },
    /// Values at `a = j / n`, linearly interpolated.
    Tabulated { values: Vec<f64> },
}

impl PeriodicFn {
    pub fn constant(value: f64) -> Self {
        PeriodicFn::Constant { value }
    }

    /// `mean + amp * cos(2 pi a)`
    pub fn cosine(mean: f64, amp: f64) -> Self {
        PeriodicFn::Fourier {
            mean,
            cos: vec![amp],
            sin: vec![],
        }
    }

    pub fn eval(&self, a: f64) -> f64 {
        match self {
            PeriodicFn::Constant { value } => *value,
            PeriodicFn::Fourier { mean, cos, sin } => {
                let mut acc = *mean;
                let (s1, c1) = (TAU * a).sin_cos();
                let (mut s, mut c) = (s1, c1);
                let n = cos.len().max(sin.len());
                for m in 0..n {
                    if let Some(am) = cos.get(m) {
                        acc += am * c;
                    }
                    if let Some(bm) = sin.get(m) {
                        acc += bm * s;
                    }
                    let (sn, cn) = (s * c1 + c * s1, c * c1 - s * s1);
                    s = sn;
                    c = cn;
                }
                acc
            }
            PeriodicFn::Tabulated { values } => {
                let n = values.len();
                if n == 0 {
                    return 0.0;
                }
                let u = a.rem_euclid(1.0) * n as f64;
                let j = (u.floor() as usize).min(n - 1);
                let frac = u - j as f64;
                values[j] * (1.0 - frac) + values[(j + 1) % n] * frac
            }
        }
    }

    pub fn is_constant(&self) -> bool {
        match self {
            PeriodicFn::Constant { .. } => true,
            PeriodicFn::Fourier { cos, sin, .. } => {
                cos.iter().chain(sin.iter()).all(|c| *c == 0.0)
            }
            PeriodicFn::Tabulated { values } => values.windows(2).all(|w| w[0] == w[1]),
        }
    }

    pub fn is_finite(&self) -> bool {
        match self {
            PeriodicFn::Constant { value } => value.is_finite(),
            PeriodicFn::Fourier { mean, cos, sin } => {
                mean.is_finite() && cos.iter().chain(sin.iter()).all(|c| c.is_finite())
            }
            PeriodicFn::Tabulated { values } => {
                !values.is_empty() && values.iter().all(|c| c.is_finite())
            }
        }
    }

    /// Lower and upper bounds sampled on a `grid`-point mesh (exact for tabulated
    /// functions when `grid` is a multiple of the table length).
    pub fn range(&self, grid: usize) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for j in 0..grid {
            let v = self.eval(j as f64 / grid as f64);
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if let PeriodicFn::Tabulated { values } = self {
            for v in values {
                lo = lo.min(*v);
                hi = hi.max(*v);
            }
        }
        (lo, hi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fourier_eval_matches_closed_form() {
        let f = PeriodicFn::Fourier {
            mean: 0.5,
            cos: vec![0.1, 0.0, 0.05],
            sin: vec![0.0, 0.2],
        };
        for j in 0..50 {
            let a = j as f64 / 37.0;
            let direct = 0.5 + 0.1 * (TAU * a).cos() + 0.05 * (3.0 * TAU * a).cos()
                + 0.2 * (2.0 * TAU * a).sin();
            assert!((f.eval(a) - direct).abs() < 1e-14);
        }
    }

    #[test]
    fn tabulated_interpolates_and_wraps() {
        let f = PeriodicFn::Tabulated {
            values: vec![0.0, 1.0, 0.0, -1.0],
        };
        assert!((f.eval(0.125) - 0.5).abs() < 1e-15);
        assert!((f.eval(0.875) + 0.5).abs() < 1e-15);
        assert!((f.eval(1.125) - 0.5).abs() < 1e-15);
        assert!((f.eval(-0.125) + 0.5).abs() < 1e-15);
    }
}
