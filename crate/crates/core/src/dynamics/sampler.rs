use crate::model::{JumpFamily, KickField, SymTable};
use crate::periodic::PeriodicFn;
use crate::rng::unit_and_sign;
use rand::RngCore;
use statrs::distribution::{ContinuousCDF, Normal};
use std::sync::Arc;

/// Default number of quantile cells.
pub const QUANTILE_CELLS: usize = 4096;

/// Inverse CDF of a non-negative variable on `n` equal-probability cells with
/// linear interpolation. The last cell is either an exponential tail or runs
/// to a finite support bound.
#[derive(Clone, Debug)]
pub struct HalfTable {
    knots: Vec<f64>,
    tail_rate: Option<f64>,
}

impl HalfTable {
    /// `quantile(p)` for `p = j / n`, `j < n`; the final knot is `end` or an
    /// exponential tail with `tail_rate`.
    pub fn from_quantile(n: usize, quantile: impl Fn(f64) -> f64, end: Option<f64>, tail_rate: Option<f64>) -> Self {
        let mut knots: Vec<f64> = (0..n).map(|j| quantile(j as f64 / n as f64)).collect();
        match end {
            Some(e) => knots.push(e),
            None => {
                let last = knots[n - 1];
                knots.push(last + 1.0 / tail_rate.expect("tail rate for unbounded table"));
            }
        }
        HalfTable {
            knots,
            tail_rate: if end.is_some() { None } else { tail_rate },
        }
    }

    /// `|v|` with `v ~ Laplace(1)`: exact quantiles and exact tail.
    pub fn unit_exponential(n: usize) -> Self {
        Self::from_quantile(n, |p| -(-p).ln_1p(), None, Some(1.0))
    }

    /// `|v|` with `v ~ N(0, 1)`; the tail uses the local log-density slope.
    pub fn unit_half_normal(n: usize) -> Self {
        let z = Normal::standard();
        let q = |p: f64| z.inverse_cdf(0.5 * (1.0 + p));
        let last = q((n - 1) as f64 / n as f64);
        Self::from_quantile(n, q, None, Some(last))
    }

    /// `|v|` under a piecewise linear symmetric density.
    pub(crate) fn from_sym_table(t: &SymTable, n: usize) -> Self {
        Self::from_half_density(t.v_max, &t.half, n)
    }

    /// `|v|` under the symmetric density that is linear between the nodes
    /// `half[j]` at `v = j * v_max / (len - 1)` and vanishes beyond `v_max`.
    pub fn from_half_density(v_max: f64, half: &[f64], n: usize) -> Self {
        let step = v_max / (half.len() - 1) as f64;
        // cumulative mass of |v| at the grid nodes
        let mut cum = vec![0.0; half.len()];
        for i in 1..half.len() {
            cum[i] = cum[i - 1] + step * (half[i - 1] + half[i]);
        }
        let total = *cum.last().unwrap();
        let quantile = |p: f64| -> f64 {
            let target = p * total;
            let i = cum.partition_point(|c| *c <= target).clamp(1, cum.len() - 1) - 1;
            // solve the quadratic CDF inside cell i
            let (g0, g1) = (half[i], half[i + 1]);
            let rem = (target - cum[i]) / 2.0;
            let slope = (g1 - g0) / step;
            let dx = if slope.abs() < 1e-14 * g0.abs().max(1e-300) {
                if g0 > 0.0 {
                    rem / g0
                } else {
                    0.0
                }
            } else {
                let disc = (g0 * g0 + 2.0 * slope * rem).max(0.0);
                2.0 * rem / (g0 + disc.sqrt())
            };
            i as f64 * step + dx.clamp(0.0, step)
        };
        Self::from_quantile(n, quantile, Some(v_max), None)
    }

    pub fn cells(&self) -> usize {
        self.knots.len() - 1
    }

    /// Maps `u ∈ [0, 1)` to a sample.
    #[inline]
    pub fn sample(&self, u: f64) -> f64 {
        let n = self.cells();
        let x = u * n as f64;
        let j = (x as usize).min(n - 1);
        if j == n - 1 {
            if let Some(rate) = self.tail_rate {
                // conditional tail beyond the last knot
                let tail = (1.0 - u) * n as f64;
                return self.knots[n - 1] - tail.ln() / rate;
            }
        }
        let f = x - j as f64;
        self.knots[j] + f * (self.knots[j + 1] - self.knots[j])
    }
}

#[derive(Clone, Debug)]
enum Scale {
    Fixed(f64),
    Field(PeriodicFn),
}

impl Scale {
    fn new(f: &PeriodicFn) -> Self {
        if f.is_constant() {
            Scale::Fixed(f.eval(0.0))
        } else {
            Scale::Field(f.clone())
        }
    }

    #[inline]
    fn at(&self, a: f64) -> f64 {
        match self {
            Scale::Fixed(v) => *v,
            Scale::Field(f) => f.eval(a),
        }
    }
}

#[derive(Clone, Debug)]
enum Law {
    Laplace(Scale),
    Mixture { cumulative: Vec<f64>, sd: Vec<Scale> },
    Table,
    Skewed { p: f64, bp: f64, bn: f64 },
}

/// Draws kicks from `P_a`. Location-scale families share one unit table and
/// apply the exact local scale; tabulated laws carry their own table.
#[derive(Clone, Debug)]
pub struct KickSampler {
    law: Law,
    table: Arc<HalfTable>,
}

impl KickSampler {
    pub fn new(field: &KickField) -> Self {
        Self::with_cells(field, QUANTILE_CELLS)
    }

    pub fn with_cells(field: &KickField, cells: usize) -> Self {
        match field.jumps() {
            JumpFamily::Laplace { scale } => KickSampler {
                law: Law::Laplace(Scale::new(scale)),
                table: Arc::new(HalfTable::unit_exponential(cells)),
            },
            JumpFamily::GaussianMixture { components } => {
                let mut acc = 0.0;
                let cumulative = components
                    .iter()
                    .map(|c| {
                        acc += c.weight;
                        acc
                    })
                    .collect();
                KickSampler {
                    law: Law::Mixture {
                        cumulative,
                        sd: components.iter().map(|c| Scale::new(&c.sd)).collect(),
                    },
                    table: Arc::new(HalfTable::unit_half_normal(cells)),
                }
            }
            JumpFamily::Tabulated { .. } => KickSampler {
                law: Law::Table,
                table: Arc::new(HalfTable::from_sym_table(
                    field.table().expect("tabulated family has a table"),
                    cells,
                )),
            },
            JumpFamily::Skewed {
                weight_positive,
                scale_positive,
                scale_negative,
            } => KickSampler {
                law: Law::Skewed {
                    p: *weight_positive,
                    bp: *scale_positive,
                    bn: *scale_negative,
                },
                table: Arc::new(HalfTable::unit_exponential(cells)),
            },
        }
    }

    /// One kick at torus position `a`.
    #[inline]
    pub fn sample<R: RngCore + ?Sized>(&self, a: f64, rng: &mut R) -> f64 {
        let (u, neg) = unit_and_sign(rng.next_u64());
        let signed = |v: f64| if neg { -v } else { v };
        match &self.law {
            Law::Laplace(b) => signed(b.at(a) * self.table.sample(u)),
            Law::Table => signed(self.table.sample(u)),
            Law::Mixture { cumulative, sd } => {
                let (c, _) = unit_and_sign(rng.next_u64());
                let i = cumulative
                    .iter()
                    .position(|w| c < *w)
                    .unwrap_or(cumulative.len() - 1);
                signed(sd[i].at(a) * self.table.sample(u))
            }
            Law::Skewed { p, bp, bn } => {
                let (c, _) = unit_and_sign(rng.next_u64());
                let mag = self.table.sample(u);
                if c < *p {
                    bp * mag
                } else {
                    -bn * mag
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_table_hits_exact_quantiles() {
        let t = HalfTable::unit_exponential(64);
        for j in 0..63 {
            let p = j as f64 / 64.0;
            assert!((t.sample(p) + (1.0 - p).ln()).abs() < 1e-14);
        }
        // tail is exact too
        for &p in &[0.99, 0.999, 0.999_999] {
            assert!((t.sample(p) + (1.0 - p).ln()).abs() < 1e-9);
        }
    }

    #[test]
    fn tabulated_quantiles_invert_cdf() {
        let half = vec![1.0, 0.8, 0.5, 0.2, 0.0];
        let v_max = 2.0;
        let step = 0.5;
        let mass: f64 = 2.0 * half.windows(2).map(|w| 0.5 * step * (w[0] + w[1])).sum::<f64>();
        let t = SymTable {
            v_max,
            half: half.iter().map(|h| h / mass).collect(),
            m2: 0.0,
            m4: 0.0,
        };
        let table = HalfTable::from_sym_table(&t, 256);
        // exact CDF of |v| for the piecewise linear density
        let cdf = |x: f64| {
            let mut acc = 0.0;
            for i in 0..4 {
                let x0 = i as f64 * step;
                let x1 = (x0 + step).min(x);
                if x1 <= x0 {
                    break;
                }
                let slope = (t.half[i + 1] - t.half[i]) / step;
                acc += t.half[i] * (x1 - x0) + 0.5 * slope * (x1 - x0).powi(2);
            }
            2.0 * acc
        };
        for j in 1..256 {
            let p = j as f64 / 256.0;
            assert!((cdf(table.sample(p)) - p).abs() < 1e-12, "p={p}");
        }
        assert!(table.sample(0.999_999) <= v_max);
    }
}
