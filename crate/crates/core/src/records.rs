//! Record (ladder-height) statistics of the averaged random walk, level
//! overshoots and their stationary limit, torus-decorated crossings of the full
//! dynamics, and the flattening of the torus position at the first alarm.

use crate::dynamics::{attempt_kick, flow, next_alarm, FlowParams, HalfTable, KickSampler, PhaseState, QUANTILE_CELLS};
use crate::error::{Error, Result};
use crate::model::{averaged_density_exact, averaged_kick, JumpFamily, ModelSpec};
use crate::rng::{stream, unit_and_sign, Domain, StreamRng};
use crate::stats;
use rand::seq::SliceRandom;
use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

/// Step law of the averaged walk.
#[derive(Clone, Debug)]
pub enum StepLaw {
    Laplace { scale: f64 },
    /// `±step` with equal probability.
    TwoPoint { step: f64 },
    /// Symmetric density tabulated on `[0, v_max]`.
    Tabulated { v_max: f64, half: Vec<f64>, table: HalfTable },
}

impl StepLaw {
    pub fn tabulated(v_max: f64, half: Vec<f64>) -> Result<Self> {
        if half.len() < 3 || !(v_max > 0.0) || half.iter().any(|h| !(*h >= 0.0 && h.is_finite())) {
            return Err(Error::InvalidModel("tabulated step law needs >= 3 finite non-negative values".into()));
        }
        let table = HalfTable::from_half_density(v_max, &half, QUANTILE_CELLS);
        Ok(StepLaw::Tabulated { v_max, half, table })
    }

    #[inline]
    pub fn sample<R: RngCore + ?Sized>(&self, rng: &mut R) -> f64 {
        let (u, neg) = unit_and_sign(rng.next_u64());
        let mag = match self {
            StepLaw::Laplace { scale } => -scale * (-u).ln_1p(),
            StepLaw::TwoPoint { step } => *step,
            StepLaw::Tabulated { table, .. } => table.sample(u),
        };
        if neg {
            -mag
        } else {
            mag
        }
    }

    pub fn variance(&self) -> f64 {
        match self {
            StepLaw::Laplace { scale } => 2.0 * scale * scale,
            StepLaw::TwoPoint { step } => step * step,
            StepLaw::Tabulated { v_max, half, .. } => {
                let h = v_max / (half.len() - 1) as f64;
                let (mut m0, mut m2) = (0.0, 0.0);
                // exact moments of the piecewise linear density
                for i in 0..half.len() - 1 {
                    let (a, b) = (i as f64 * h, (i + 1) as f64 * h);
                    let (fa, fb) = (half[i], half[i + 1]);
                    m0 += 0.5 * h * (fa + fb);
                    let slope = (fb - fa) / h;
                    let c = fa - slope * a;
                    m2 += c * (b.powi(3) - a.powi(3)) / 3.0 + slope * (b.powi(4) - a.powi(4)) / 4.0;
                }
                m2 / m0
            }
        }
    }

    /// Natural length unit: the Laplace scale with the same variance.
    pub fn scale(&self) -> f64 {
        match self {
            StepLaw::Laplace { scale } => *scale,
            StepLaw::TwoPoint { step } => *step,
            StepLaw::Tabulated { .. } => (0.5 * self.variance()).sqrt(),
        }
    }

    /// Stable description used in cache keys.
    pub fn label(&self) -> String {
        match self {
            StepLaw::Laplace { scale } => format!("laplace-{scale:e}"),
            StepLaw::TwoPoint { step } => format!("twopoint-{step:e}"),
            StepLaw::Tabulated { v_max, half, .. } => {
                // FNV-1a over the bit patterns
                let mut h: u64 = 0xcbf2_9ce4_8422_2325;
                for x in std::iter::once(v_max).chain(half.iter()) {
                    for b in x.to_bits().to_le_bytes() {
                        h = (h ^ b as u64).wrapping_mul(0x0100_0000_01b3);
                    }
                }
                format!("tabulated-{h:016x}")
            }
        }
    }
}

/// The walk with i.i.d. steps from the spatially averaged kick law.
#[derive(Clone, Debug)]
pub struct AveragedWalk {
    pub law: StepLaw,
}

impl AveragedWalk {
    pub fn new(law: StepLaw) -> Self {
        AveragedWalk { law }
    }

    /// Averaged walk of `model`: exact Laplace when the kick law is a
    /// homogeneous Laplace law, otherwise the tabulated averaged density.
    pub fn from_model(model: &ModelSpec) -> Result<Self> {
        if let JumpFamily::Laplace { scale } = model.kicks().jumps() {
            if scale.is_constant() {
                return Ok(Self::new(StepLaw::Laplace { scale: scale.eval(0.0) }));
            }
        }
        let ak = averaged_kick(model, None, 4097)?;
        Ok(Self::new(StepLaw::tabulated(ak.v_max, ak.half)?))
    }

    pub fn scale(&self) -> f64 {
        self.law.scale()
    }
}

/// Square grid on `[0, v_max]^2` in the (increment, step) plane.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub v_max: f64,
    pub bins: usize,
}

pub const GRID_BINS: usize = 256;
/// Bins per side used for distances between tables.
pub const COARSE_BINS: usize = 32;

impl Grid {
    /// `bins` bins over `[0, 8 scale]`.
    pub fn for_scale(scale: f64, bins: usize) -> Self {
        Grid { v_max: 8.0 * scale, bins }
    }

    pub fn width(&self) -> f64 {
        self.v_max / self.bins as f64
    }

    /// Bin of `v`; mass beyond the grid folds into the last bin.
    #[inline]
    pub fn index(&self, v: f64) -> (usize, bool) {
        let x = (v / self.width()).max(0.0);
        if x >= self.bins as f64 {
            (self.bins - 1, true)
        } else {
            (x as usize, false)
        }
    }

    pub fn cell(&self, v: f64, w: f64) -> (usize, bool) {
        let (i, fi) = self.index(v);
        let (j, fj) = self.index(w);
        (i * self.bins + j, fi || fj)
    }

    pub fn centre(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.width()
    }
}

/// Normalized masses on a `bins x bins` grid, row `v`, column `w`.
fn histogram(grid: &Grid, pairs: impl Iterator<Item = (f64, f64)>) -> (Vec<f64>, f64) {
    let mut counts = vec![0u64; grid.bins * grid.bins];
    let (mut n, mut folded) = (0u64, 0u64);
    for (v, w) in pairs {
        let (c, f) = grid.cell(v, w);
        counts[c] += 1;
        n += 1;
        folded += f as u64;
    }
    let inv = if n > 0 { 1.0 / n as f64 } else { 0.0 };
    (counts.iter().map(|&c| c as f64 * inv).collect(), folded as f64 * inv)
}

/// Sums `factor x factor` blocks of a square mass table.
pub fn coarsen(masses: &[f64], bins: usize, factor: usize) -> Vec<f64> {
    let nb = bins / factor;
    let mut out = vec![0.0; nb * nb];
    for i in 0..bins {
        for j in 0..bins {
            out[(i / factor) * nb + j / factor] += masses[i * bins + j];
        }
    }
    out
}

pub fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// `v` marginal of a square mass table.
pub fn v_marginal(masses: &[f64], bins: usize) -> Vec<f64> {
    masses.chunks(bins).map(|row| row.iter().sum()).collect()
}

/// Empirical joint law `D(v, w)` of record increments and the steps that
/// achieve them.
#[derive(Clone, Debug)]
pub struct LadderTable {
    pub grid: Grid,
    pub label: String,
    pub seed: u64,
    /// `(v, w)` samples in generation order.
    pub pool: Vec<(f64, f64)>,
    /// Cell masses of `D`, normalized to 1.
    pub masses: Vec<f64>,
    /// Mass folded into the last row or column.
    pub folded: f64,
    /// Excursions abandoned at the step cap.
    pub truncated: u64,
    pub mean_height: f64,
    pub mean_height_se: f64,
}

/// Steps after which a search for the next record is abandoned. The symmetric
/// walk's ladder epoch has infinite mean; this cap biases `D` by at most
/// `P(tau > cap) ≈ (pi cap)^{-1/2}` in total variation.
pub const LADDER_STEP_CAP: u64 = 1 << 20;
/// Records per independent stream.
pub const LADDER_CHUNK: usize = 10_000;
pub const MIN_RECORDS: usize = 10_000;

/// One record increment of a fresh walk from 0: returns `(v, w)` or `None`
/// when the cap was hit.
#[inline]
fn one_record<R: RngCore + ?Sized>(law: &StepLaw, rng: &mut R) -> Option<(f64, f64)> {
    let mut y = 0.0;
    for _ in 0..LADDER_STEP_CAP {
        let w = law.sample(rng);
        y += w;
        if y > 0.0 {
            return Some((y, w));
        }
    }
    None
}

impl LadderTable {
    fn from_pool(grid: Grid, label: String, seed: u64, pool: Vec<(f64, f64)>, truncated: u64) -> Self {
        let (masses, folded) = histogram(&grid, pool.iter().copied());
        let vs: Vec<f64> = pool.iter().map(|p| p.0).collect();
        let mean_height = if vs.is_empty() { 0.0 } else { stats::mean(&vs) };
        let mean_height_se = if vs.len() > 1 {
            (stats::variance(&vs) / vs.len() as f64).sqrt()
        } else {
            0.0
        };
        LadderTable {
            grid,
            label,
            seed,
            pool,
            masses,
            folded,
            truncated,
            mean_height,
            mean_height_se,
        }
    }

    pub fn records(&self) -> usize {
        self.pool.len()
    }

    pub fn v_marginal(&self) -> Vec<f64> {
        v_marginal(&self.masses, self.grid.bins)
    }

    fn cache_name(label: &str, grid: &Grid, n: usize, seed: u64) -> String {
        format!("ladder-{label}-{}x{:e}-n{n}-s{seed}.bin", grid.bins, grid.v_max)
    }

    fn header(&self) -> String {
        format!(
            "kicksim-ladder 1 {} {} {:e} {} {} {}",
            self.label,
            self.grid.bins,
            self.grid.v_max,
            self.pool.len(),
            self.seed,
            self.truncated
        )
    }

    /// Writes the sample pool as a text header followed by little-endian pairs.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        {
            let mut f = BufWriter::new(std::fs::File::create(&tmp)?);
            writeln!(f, "{}", self.header())?;
            for (v, w) in &self.pool {
                f.write_all(&v.to_le_bytes())?;
                f.write_all(&w.to_le_bytes())?;
            }
            f.flush()?;
        }
        std::fs::rename(&tmp, path).map_err(Error::from)
    }

    /// Reads a pool written by [`LadderTable::save`]; `None` when the file is
    /// missing or was built for different parameters.
    pub fn load(path: &Path, label: &str, grid: Grid, n: usize, seed: u64) -> Result<Option<Self>> {
        let Ok(file) = std::fs::File::open(path) else {
            return Ok(None);
        };
        let mut r = BufReader::new(file);
        let mut line = String::new();
        r.read_line(&mut line)?;
        let f: Vec<&str> = line.split_whitespace().collect();
        let ok = f.len() == 8
            && f[0] == "kicksim-ladder"
            && f[1] == "1"
            && f[2] == label
            && f[3] == grid.bins.to_string()
            && f[4] == format!("{:e}", grid.v_max)
            && f[5] == n.to_string()
            && f[6] == seed.to_string();
        if !ok {
            return Ok(None);
        }
        let Ok(truncated) = f[7].parse::<u64>() else {
            return Ok(None);
        };
        let mut bytes = Vec::with_capacity(16 * n);
        r.read_to_end(&mut bytes)?;
        if bytes.len() != 16 * n {
            return Ok(None);
        }
        let num = |c: &[u8]| f64::from_le_bytes(c.try_into().unwrap());
        let pool = bytes.chunks_exact(16).map(|c| (num(&c[..8]), num(&c[8..]))).collect();
        Ok(Some(Self::from_pool(grid, label.to_string(), seed, pool, truncated)))
    }
}

/// Simulates `n_records` independent record increments of `walk`.
/// Chunks of [`LADDER_CHUNK`] records use separate streams, so the result is
/// independent of the thread count.
pub fn ladder_estimate(walk: &AveragedWalk, n_records: usize, seed: u64, grid: Grid) -> Result<LadderTable> {
    if n_records < MIN_RECORDS {
        return Err(Error::Precondition(format!("ladder estimate needs at least {MIN_RECORDS} records")));
    }
    let chunks = n_records.div_ceil(LADDER_CHUNK);
    let parts: Vec<(Vec<(f64, f64)>, u64)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let want = LADDER_CHUNK.min(n_records - c * LADDER_CHUNK);
            let mut rng = stream(seed, Domain::Ladder, c as u64);
            let mut out = Vec::with_capacity(want);
            let mut truncated = 0;
            while out.len() < want {
                match one_record(&walk.law, &mut rng) {
                    Some(p) => out.push(p),
                    None => truncated += 1,
                }
            }
            (out, truncated)
        })
        .collect();
    let truncated = parts.iter().map(|p| p.1).sum();
    let pool = parts.into_iter().flat_map(|p| p.0).collect();
    Ok(LadderTable::from_pool(grid, walk.law.label(), seed, pool, truncated))
}

/// Loads the table from `cache_dir` when present, otherwise estimates and
/// stores it there.
pub fn ladder_cached(
    walk: &AveragedWalk,
    n_records: usize,
    seed: u64,
    grid: Grid,
    cache_dir: Option<&Path>,
) -> Result<LadderTable> {
    let label = walk.law.label();
    let path: Option<PathBuf> = cache_dir.map(|d| d.join(LadderTable::cache_name(&label, &grid, n_records, seed)));
    if let Some(p) = &path {
        if let Some(t) = LadderTable::load(p, &label, grid, n_records, seed)? {
            return Ok(t);
        }
    }
    let table = ladder_estimate(walk, n_records, seed, grid)?;
    if let (Some(p), Some(d)) = (&path, cache_dir) {
        std::fs::create_dir_all(d)?;
        table.save(p)?;
    }
    Ok(table)
}

/// Stationary overshoot law: cell masses of `∫_v^∞ D(x, w) dx / E[D]`, with
/// the tail integral taken as full cells beyond `v` plus half of `v`'s own
/// cell, renormalized on the grid.
pub fn pi_infinity(table: &LadderTable) -> Result<Vec<f64>> {
    if table.pool.is_empty() {
        return Err(Error::Degenerate("empty ladder table".into()));
    }
    if !(table.mean_height > 0.0) {
        return Err(Error::Degenerate("mean ladder height is zero".into()));
    }
    let b = table.grid.bins;
    let mut out = vec![0.0; b * b];
    for j in 0..b {
        let mut tail = 0.0;
        for i in (0..b).rev() {
            let m = table.masses[i * b + j];
            out[i * b + j] = tail + 0.5 * m;
            tail += m;
        }
    }
    let z: f64 = out.iter().sum();
    if !(z > 0.0) {
        return Err(Error::Degenerate("mean ladder height is zero on the grid".into()));
    }
    for x in &mut out {
        *x /= z;
    }
    Ok(out)
}

/// `L1` distance between the exponential law of `scale` and the `v` marginal
/// of `masses`, with the exponential tail folded into the last bin.
pub fn memoryless_l1(masses: &[f64], grid: &Grid, scale: f64) -> f64 {
    let marg = v_marginal(masses, grid.bins);
    let h = grid.width();
    marg.iter()
        .enumerate()
        .map(|(i, m)| {
            let lo = (-(i as f64) * h / scale).exp();
            let hi = if i + 1 == grid.bins { 0.0 } else { (-((i + 1) as f64) * h / scale).exp() };
            (m - (lo - hi)).abs()
        })
        .sum()
}

/// Empirical overshoot law at one level against the stationary limit.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OvershootTable {
    pub level: f64,
    pub samples: usize,
    pub grid: Grid,
    /// Cell masses of `pi_L`.
    pub masses: Vec<f64>,
    pub folded: f64,
    /// Cell masses of `pi_inf`.
    pub reference: Vec<f64>,
    /// `L1(pi_L, pi_inf)` on the coarse grid.
    pub l1: f64,
    /// Bootstrap standard error of `l1`.
    pub l1_se: f64,
}

/// Configuration of [`overshoot_scan`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OvershootConfig {
    pub levels: Vec<f64>,
    pub samples: usize,
    pub seed: u64,
    pub resamples: usize,
}

/// Overshoot tables by renewal over the ladder pool: starting from 0, record
/// increments are drawn in sequence from a per-level random permutation of
/// the pool, reshuffled whenever it is exhausted, until their sum exceeds the
/// level. The overshoot is `sum - L` and `w` is the step of the last record.
/// At `L = 0` with as many samples as records every pool entry is used once,
/// so `pi_0` equals `D` bin for bin.
pub fn overshoot_scan(table: &LadderTable, cfg: &OvershootConfig) -> Result<Vec<OvershootTable>> {
    if cfg.levels.windows(2).any(|w| !(w[0] < w[1])) || cfg.levels.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
        return Err(Error::Precondition("levels must be finite, non-negative and increasing".into()));
    }
    if cfg.samples == 0 {
        return Err(Error::Precondition("overshoot scan needs samples".into()));
    }
    let reference = pi_infinity(table)?;
    let grid = table.grid;
    let factor = grid.bins / COARSE_BINS.min(grid.bins);
    let ref_coarse = coarsen(&reference, grid.bins, factor);
    cfg.levels
        .par_iter()
        .enumerate()
        .map(|(li, &level)| {
            let mut rng = stream(cfg.seed, Domain::Overshoot, li as u64);
            let mut order: Vec<u32> = (0..table.pool.len() as u32).collect();
            order.shuffle(&mut rng);
            let mut cursor = 0;
            let mut pairs = Vec::with_capacity(cfg.samples);
            for _ in 0..cfg.samples {
                let mut sum = 0.0;
                loop {
                    if cursor == order.len() {
                        order.shuffle(&mut rng);
                        cursor = 0;
                    }
                    let (v, w) = table.pool[order[cursor] as usize];
                    cursor += 1;
                    sum += v;
                    if sum > level {
                        pairs.push((sum - level, w));
                        break;
                    }
                }
            }
            let (masses, folded) = histogram(&grid, pairs.iter().copied());
            let coarse = coarsen(&masses, grid.bins, factor);
            let dist = l1(&coarse, &ref_coarse);
            // bootstrap over samples via their coarse cells
            let nb = grid.bins / factor;
            let cells: Vec<u32> = pairs
                .iter()
                .map(|&(v, w)| {
                    let (i, _) = grid.index(v);
                    let (j, _) = grid.index(w);
                    ((i / factor) * nb + j / factor) as u32
                })
                .collect();
            let mut brng = stream(cfg.seed, Domain::Bootstrap, (1 << 32) | li as u64);
            let n = cells.len();
            let boot: Vec<f64> = (0..cfg.resamples)
                .map(|_| {
                    let mut c = vec![0u64; nb * nb];
                    for _ in 0..n {
                        c[cells[(brng.next_u64() % n as u64) as usize] as usize] += 1;
                    }
                    let m: Vec<f64> = c.iter().map(|&x| x as f64 / n as f64).collect();
                    l1(&m, &ref_coarse)
                })
                .collect();
            let l1_se = if boot.len() > 1 { stats::variance(&boot).sqrt() } else { 0.0 };
            Ok(OvershootTable {
                level,
                samples: cfg.samples,
                grid,
                masses,
                folded,
                reference: reference.clone(),
                l1: dist,
                l1_se,
            })
        })
        .collect()
}

/// Whether `l1` is non-increasing in the level up to `z` combined standard
/// errors between neighbours.
pub fn monotone_within(tables: &[OvershootTable], z: f64) -> bool {
    tables
        .windows(2)
        .all(|w| w[1].l1 <= w[0].l1 + z * (w[0].l1_se.powi(2) + w[1].l1_se.powi(2)).sqrt())
}

/// Direction of a momentum-level crossing.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Up,
    Down,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TorusCrossingConfig {
    pub levels: Vec<f64>,
    pub samples: usize,
    /// Start at momentum `level + offset` (down) or `level - offset` (up).
    pub start_offset: f64,
    pub direction: Direction,
    pub a_bins: usize,
    pub v_bins: usize,
    /// Alarms after which a run is abandoned.
    pub max_alarms: u64,
    pub seed: u64,
    pub flow: FlowParams,
}

impl TorusCrossingConfig {
    pub fn new(levels: Vec<f64>, samples: usize, seed: u64) -> Self {
        TorusCrossingConfig {
            levels,
            samples,
            start_offset: 2.0,
            direction: Direction::Down,
            a_bins: 16,
            v_bins: 16,
            max_alarms: 10_000,
            seed,
            flow: FlowParams::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TorusCrossingTable {
    pub level: f64,
    pub samples: usize,
    pub truncated: u64,
    pub a_bins: usize,
    pub v_bins: usize,
    pub v_max: f64,
    /// Empirical cell masses, row `a`, column `v`.
    pub empirical: Vec<f64>,
    pub reference: Vec<f64>,
    pub l1: f64,
    pub a_marginal: Vec<f64>,
    pub a_reference: Vec<f64>,
    pub a_l1: f64,
    /// Chi-square p-value of the empirical `a` counts against `a_reference`.
    pub a_p_value: f64,
}

/// Reference `phi_inf(a, v)` cell masses: the `w` integral of `pi_inf(v, w)`
/// against the conditional torus law `kappa(a) P_a(w) / ∫ kappa P_x(w) dx`.
pub fn phi_infinity(model: &ModelSpec, table: &LadderTable, a_bins: usize, v_bins: usize) -> Result<Vec<f64>> {
    let pi = pi_infinity(table)?;
    let grid = table.grid;
    let b = grid.bins;
    if b % v_bins != 0 {
        return Err(Error::Precondition("v bins must divide the ladder grid".into()));
    }
    let kicks = model.kicks();
    let kbar = model.derived().kappa_mean;
    const SUB: usize = 8;
    // weight[j][ai]: mass of the conditional torus law in a-bin ai given w_j
    let weights: Vec<Vec<f64>> = (0..b)
        .map(|j| {
            let w = grid.centre(j);
            let denom = kbar * averaged_density_exact(model, w);
            (0..a_bins)
                .map(|ai| {
                    let s: f64 = (0..SUB)
                        .map(|q| {
                            let a = (ai as f64 + (q as f64 + 0.5) / SUB as f64) / a_bins as f64;
                            kicks.coin(a) * kicks.density(a, w)
                        })
                        .sum();
                    if denom > 0.0 {
                        s / (SUB * a_bins) as f64 / denom
                    } else {
                        1.0 / a_bins as f64
                    }
                })
                .collect()
        })
        .collect();
    let f = b / v_bins;
    let mut out = vec![0.0; a_bins * v_bins];
    for i in 0..b {
        for (j, wj) in weights.iter().enumerate() {
            let m = pi[i * b + j];
            if m == 0.0 {
                continue;
            }
            for (ai, wa) in wj.iter().enumerate() {
                out[ai * v_bins + i / f] += m * wa;
            }
        }
    }
    let z: f64 = out.iter().sum();
    for x in &mut out {
        *x /= z;
    }
    Ok(out)
}

/// Runs the full dynamics from `(0, level ± offset)` until the first kick
/// that carries the momentum across `level`, recording the torus position of
/// the kick and the overshoot beyond the level.
pub fn torus_crossing_scan(
    model: &ModelSpec,
    table: &LadderTable,
    cfg: &TorusCrossingConfig,
) -> Result<Vec<TorusCrossingTable>> {
    let vbar = model.derived().vbar;
    if let Some(l) = cfg.levels.iter().find(|l| !(l.powi(2) > 100.0 * vbar)) {
        return Err(Error::Precondition(format!("level {l} must satisfy level^2 > 100 Vbar = {}", 100.0 * vbar)));
    }
    if cfg.samples == 0 || cfg.a_bins == 0 || cfg.v_bins == 0 {
        return Err(Error::Precondition("torus crossing scan needs samples and bins".into()));
    }
    if !(cfg.start_offset > 0.0) {
        return Err(Error::Precondition("start offset must be positive".into()));
    }
    let reference = phi_infinity(model, table, cfg.a_bins, cfg.v_bins)?;
    let a_reference: Vec<f64> = reference.chunks(cfg.v_bins).map(|r| r.iter().sum()).collect();
    let sampler = KickSampler::new(model.kicks());
    let rate = model.kicks().rate();
    let v_max = table.grid.v_max;
    cfg.levels
        .iter()
        .enumerate()
        .map(|(li, &level)| {
            let runs: Vec<Result<Option<(f64, f64)>>> = (0..cfg.samples)
                .into_par_iter()
                .map(|i| {
                    let mut rng = stream(cfg.seed, Domain::TorusCrossing, ((li as u64) << 40) | i as u64);
                    let k0 = match cfg.direction {
                        Direction::Down => level + cfg.start_offset,
                        Direction::Up => level - cfg.start_offset,
                    };
                    crossing_run(model, &sampler, rate, level, k0, cfg, &mut rng)
                })
                .collect();
            let mut counts = vec![0u64; cfg.a_bins * cfg.v_bins];
            let mut a_counts = vec![0u64; cfg.a_bins];
            let (mut n, mut truncated) = (0u64, 0u64);
            for r in runs {
                match r? {
                    Some((a, v)) => {
                        let ai = ((a * cfg.a_bins as f64) as usize).min(cfg.a_bins - 1);
                        let vi = ((v / v_max * cfg.v_bins as f64) as usize).min(cfg.v_bins - 1);
                        counts[ai * cfg.v_bins + vi] += 1;
                        a_counts[ai] += 1;
                        n += 1;
                    }
                    None => truncated += 1,
                }
            }
            if n == 0 {
                return Err(Error::Degenerate(format!("no crossings of level {level}")));
            }
            let empirical: Vec<f64> = counts.iter().map(|&c| c as f64 / n as f64).collect();
            let a_marginal: Vec<f64> = a_counts.iter().map(|&c| c as f64 / n as f64).collect();
            let (_, a_p_value) = stats::chi2_test(&a_counts, &a_reference);
            Ok(TorusCrossingTable {
                level,
                samples: n as usize,
                truncated,
                a_bins: cfg.a_bins,
                v_bins: cfg.v_bins,
                v_max,
                l1: l1(&empirical, &reference),
                a_l1: l1(&a_marginal, &a_reference),
                empirical,
                reference: reference.clone(),
                a_marginal,
                a_reference: a_reference.clone(),
                a_p_value,
            })
        })
        .collect()
}

fn crossing_run(
    model: &ModelSpec,
    sampler: &KickSampler,
    rate: f64,
    level: f64,
    k0: f64,
    cfg: &TorusCrossingConfig,
    rng: &mut StreamRng,
) -> Result<Option<(f64, f64)>> {
    let mut state = PhaseState::new(0.0, k0, 0.0);
    for _ in 0..cfg.max_alarms {
        let dt = next_alarm(rng, rate);
        state = flow(&state, dt, model.potential(), &cfg.flow)?;
        let ev = attempt_kick(&state, model.kicks(), sampler, rng);
        if ev.fired {
            let crossed = match cfg.direction {
                Direction::Down => ev.k_post < level,
                Direction::Up => ev.k_post > level,
            };
            if crossed {
                return Ok(Some((ev.a, (ev.k_post - level).abs())));
            }
        }
        state = ev.state_after();
    }
    Ok(None)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlatteningRow {
    pub k: f64,
    pub samples: usize,
    /// `sup_a |r(a) - 1|` over the bins.
    pub sup_deviation: f64,
    /// `2 R / |k|`
    pub envelope: f64,
    pub bound: f64,
    pub chi2_p: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlatteningReport {
    pub rows: Vec<FlatteningRow>,
    /// Log-log slope of the sup deviation against `|k|`.
    pub slope: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlatteningConfig {
    /// `(k, samples)` pairs.
    pub momenta: Vec<(f64, usize)>,
    pub bins: usize,
    /// Starting position on the line.
    pub x0: f64,
    /// Relative slack on the `2R/|k|` envelope for the second-order term.
    pub slack: f64,
    pub seed: u64,
    pub flow: FlowParams,
}

/// Samples per parallel work unit.
const FLATTEN_CHUNK: usize = 1 << 16;

/// Histogram of the torus position at the first alarm from `(x0, k)`.
pub fn first_alarm_histogram(model: &ModelSpec, k: f64, samples: usize, cfg: &FlatteningConfig, index: u64) -> Result<Vec<u64>> {
    let rate = model.kicks().rate();
    let start = PhaseState::new(cfg.x0, k, 0.0);
    let chunks = samples.div_ceil(FLATTEN_CHUNK);
    let parts: Vec<Result<Vec<u64>>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = stream(cfg.seed, Domain::Flatten, (index << 32) | c as u64);
            let mut h = vec![0u64; cfg.bins];
            let m = FLATTEN_CHUNK.min(samples - c * FLATTEN_CHUNK);
            for _ in 0..m {
                let dt = next_alarm(&mut rng, rate);
                let s = flow(&start, dt, model.potential(), &cfg.flow)?;
                h[((s.a() * cfg.bins as f64) as usize).min(cfg.bins - 1)] += 1;
            }
            Ok(h)
        })
        .collect();
    let mut total = vec![0u64; cfg.bins];
    for p in parts {
        for (t, x) in total.iter_mut().zip(p?) {
            *t += x;
        }
    }
    Ok(total)
}

/// Sup deviation of the first-alarm torus density from uniform against the
/// `2R/|k|` envelope, and its decay rate in `|k|`.
pub fn first_jump_flattening(model: &ModelSpec, cfg: &FlatteningConfig) -> Result<FlatteningReport> {
    let vbar = model.derived().vbar;
    if cfg.bins < 2 || cfg.momenta.is_empty() {
        return Err(Error::Precondition("flattening needs >= 2 bins and a momentum".into()));
    }
    if let Some((k, _)) = cfg.momenta.iter().find(|(k, _)| !(k.abs() > 2.0 * vbar.sqrt())) {
        return Err(Error::Precondition(format!("|k| = {} must exceed 2 sqrt(Vbar)", k.abs())));
    }
    let rate = model.kicks().rate();
    let mut rows = Vec::new();
    for (idx, &(k, samples)) in cfg.momenta.iter().enumerate() {
        if samples == 0 {
            return Err(Error::Precondition("flattening needs samples".into()));
        }
        let h = first_alarm_histogram(model, k, samples, cfg, idx as u64)?;
        let n = samples as f64;
        let sup = h
            .iter()
            .map(|&c| (c as f64 * cfg.bins as f64 / n - 1.0).abs())
            .fold(0.0, f64::max);
        let envelope = 2.0 * rate / k.abs();
        let bound = envelope * (1.0 + cfg.slack);
        let (_, p) = stats::chi2_test(&h, &vec![1.0 / cfg.bins as f64; cfg.bins]);
        rows.push(FlatteningRow {
            k,
            samples,
            sup_deviation: sup,
            envelope,
            bound,
            chi2_p: p,
            passed: sup <= bound,
        });
    }
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.sup_deviation > 0.0)
        .map(|r| (r.k.abs().ln(), r.sup_deviation.ln()))
        .collect();
    let slope = if pts.len() >= 2 { stats::ols_slope(&pts) } else { f64::NAN };
    Ok(FlatteningReport {
        passed: rows.iter().all(|r| r.passed),
        rows,
        slope,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_folds_overflow() {
        let g = Grid::for_scale(1.0, 256);
        assert_eq!(g.index(0.0), (0, false));
        assert_eq!(g.index(7.99), (255, false));
        assert_eq!(g.index(100.0), (255, true));
    }

    #[test]
    fn tabulated_variance_matches_laplace() {
        let vmax = 40.0;
        let n = 40001;
        let half: Vec<f64> = (0..n).map(|j| 0.5 * (-(j as f64) * vmax / (n - 1) as f64).exp()).collect();
        let law = StepLaw::tabulated(vmax, half).unwrap();
        assert!((law.variance() - 2.0).abs() < 1e-5);
        assert!((law.scale() - 1.0).abs() < 1e-5);
    }

    #[test]
    fn empty_table_is_degenerate() {
        let t = LadderTable::from_pool(Grid::for_scale(1.0, 16), "x".into(), 0, vec![], 0);
        assert!(matches!(pi_infinity(&t), Err(Error::Degenerate(_))));
    }
}
