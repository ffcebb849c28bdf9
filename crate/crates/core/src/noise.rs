//! Banks of independent Wiener driver paths on nested dyadic time grids.
//!
//! All randomness is counter-based: every Gaussian draw is addressed by
//! (seed, stream, driver, level, index), so replicate generation is
//! reproducible bit-for-bit regardless of scheduling or evaluation order.
//! Refinement inserts conditionally correct Brownian-bridge midpoints and
//! preserves the coarse path values bitwise, which is what makes pathwise
//! convergence studies across levels valid (same driving noise at every
//! level).

use crate::error::{Error, Result};

/// Hard cap on the dyadic refinement level (2^24 steps).
pub const MAX_LEVEL: u32 = 24;

// Philox 2x64-10 (counter-based generator): multiplier and Weyl key increment.
const PHILOX_MULT: u64 = 0xD2B7_4407_B1CE_6E93;
const PHILOX_WEYL: u64 = 0x9E37_79B9_7F4A_7C15;

/// One application of the Philox 2x64 bijection with 10 rounds.
#[inline]
fn philox2x64(key: u64, mut ctr: [u64; 2]) -> [u64; 2] {
    let mut k = key;
    for _ in 0..10 {
        let prod = (ctr[0] as u128) * (PHILOX_MULT as u128);
        let hi = (prod >> 64) as u64;
        let lo = prod as u64;
        ctr = [hi ^ k ^ ctr[1], lo];
        k = k.wrapping_add(PHILOX_WEYL);
    }
    ctr
}

/// Stream tags keep draws for unrelated purposes on disjoint counters.
#[derive(Debug, Clone, Copy)]
enum Stream {
    Increment = 0,
    Bridge = 1,
    Aux = 2,
}

#[inline]
fn ctr_word(stream: Stream, driver: u32, level: u32) -> u64 {
    ((stream as u64) << 56) | ((driver as u64) << 24) | (level as u64 & 0x00FF_FFFF)
}

/// Standard normal draw addressed by (key, counter word, index) via Box-Muller.
#[inline]
fn normal_draw(key: u64, word: u64, index: u64) -> f64 {
    let out = philox2x64(key, [word, index]);
    // u1 in (0, 1] so the logarithm is finite; u2 in [0, 1).
    let u1 = ((out[0] >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
    let u2 = (out[1] >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Standard normal draw from an auxiliary stream (Monte Carlo helpers,
/// test oracles). Distinct from every bank stream.
pub fn standard_normal(seed: u64, stream: u32, index: u64) -> f64 {
    normal_draw(seed, ctr_word(Stream::Aux, stream, 0), index)
}

/// Deterministically derive a per-replicate seed from a master seed.
///
/// Replicates keyed this way are independent of the order in which they
/// are generated.
pub fn derive_seed(master: u64, replicate: u64) -> u64 {
    philox2x64(master, [0xA5A5_A5A5_5A5A_5A5A, replicate])[0]
}

/// Uniform dyadic grid on [0, T]: N = 2^level steps of width T / 2^level.
///
/// Node times are computed as T * (i / N); the division is exact for
/// dyadic N, so node N lands on T exactly and grids at consecutive levels
/// are nested node-for-node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    level: u32,
}

impl TimeGrid {
    pub fn dyadic(horizon: f64, level: u32) -> Result<Self> {
        if !horizon.is_finite() || horizon <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "grid horizon must be positive and finite, got {horizon}"
            )));
        }
        if level > MAX_LEVEL {
            return Err(Error::LimitExceeded(format!(
                "grid level {level} exceeds maximum {MAX_LEVEL}"
            )));
        }
        Ok(TimeGrid { horizon, level })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    /// Number of steps N = 2^level.
    pub fn steps(&self) -> usize {
        1usize << self.level
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps() as f64
    }

    pub fn node_time(&self, i: usize) -> f64 {
        debug_assert!(i <= self.steps());
        self.horizon * (i as f64 / self.steps() as f64)
    }

    pub fn refined(&self) -> Result<Self> {
        if self.level >= MAX_LEVEL {
            return Err(Error::LimitExceeded(format!(
                "cannot refine past level {MAX_LEVEL}"
            )));
        }
        Ok(TimeGrid {
            horizon: self.horizon,
            level: self.level + 1,
        })
    }
}

/// K independent Wiener paths sampled on a dyadic grid.
///
/// Invariants: W^k(0) = 0; increments are independent N(0, dt) draws under
/// the seeded counter-based generator; refinement preserves coarse-node
/// path values bitwise and splits each coarse increment into a pair that
/// sums back to it exactly.
#[derive(Debug, Clone)]
pub struct WienerBank {
    seed: u64,
    grid: TimeGrid,
    drivers: usize,
    /// increments[k][i] = W^k(t_{i+1}) - W^k(t_i), length N per driver.
    increments: Vec<Vec<f64>>,
    /// paths[k][i] = W^k(t_i), length N + 1 per driver.
    paths: Vec<Vec<f64>>,
}

impl WienerBank {
    /// Draw a fresh bank. Identical arguments give bit-identical output.
    pub fn generate(seed: u64, drivers: usize, grid: TimeGrid) -> Result<Self> {
        if drivers == 0 {
            return Err(Error::InvalidArgument(
                "driver count must be at least 1".into(),
            ));
        }
        let n = grid.steps();
        let sqrt_dt = grid.dt().sqrt();
        let mut increments = Vec::with_capacity(drivers);
        let mut paths = Vec::with_capacity(drivers);
        for k in 0..drivers {
            let word = ctr_word(Stream::Increment, k as u32, grid.level());
            let mut inc = Vec::with_capacity(n);
            let mut path = Vec::with_capacity(n + 1);
            path.push(0.0);
            let mut w = 0.0;
            for i in 0..n {
                let dw = sqrt_dt * normal_draw(seed, word, i as u64);
                inc.push(dw);
                w += dw;
                path.push(w);
            }
            increments.push(inc);
            paths.push(path);
        }
        Ok(WienerBank {
            seed,
            grid,
            drivers,
            increments,
            paths,
        })
    }

    /// One Brownian-bridge refinement: same paths on a grid one level
    /// finer. Midpoint draws come from the (seed, driver, level) stream,
    /// so iterated refinement is independent of how the bank was reached.
    pub fn refine(&self) -> Result<Self> {
        let fine = self.grid.refined()?;
        let n = self.grid.steps();
        // Conditional midpoint variance is dt_fine / 2.
        let sd = (fine.dt() / 2.0).sqrt();
        let mut increments = Vec::with_capacity(self.drivers);
        let mut paths = Vec::with_capacity(self.drivers);
        for k in 0..self.drivers {
            let word = ctr_word(Stream::Bridge, k as u32, fine.level());
            let coarse_inc = &self.increments[k];
            let coarse_path = &self.paths[k];
            let mut inc = Vec::with_capacity(2 * n);
            let mut path = Vec::with_capacity(2 * n + 1);
            for i in 0..n {
                let xi = sd * normal_draw(self.seed, word, i as u64);
                let first = 0.5 * coarse_inc[i] + xi;
                // Complement so the pair sums back to the coarse increment.
                let second = coarse_inc[i] - first;
                inc.push(first);
                inc.push(second);
                path.push(coarse_path[i]);
                path.push(coarse_path[i] + first);
            }
            path.push(coarse_path[n]);
            increments.push(inc);
            paths.push(path);
        }
        Ok(WienerBank {
            seed: self.seed,
            grid: fine,
            drivers: self.drivers,
            increments,
            paths,
        })
    }

    /// Refine repeatedly until the grid reaches `level`.
    pub fn refine_to(&self, level: u32) -> Result<Self> {
        if level < self.grid.level() {
            return Err(Error::InvalidArgument(format!(
                "target level {level} is coarser than current level {}",
                self.grid.level()
            )));
        }
        let mut bank = self.clone();
        while bank.grid.level() < level {
            bank = bank.refine()?;
        }
        Ok(bank)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn drivers(&self) -> usize {
        self.drivers
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    /// Increment of driver k over step i.
    pub fn increment(&self, k: usize, i: usize) -> f64 {
        self.increments[k][i]
    }

    /// Path value W^k(t_i).
    pub fn path_value(&self, k: usize, i: usize) -> f64 {
        self.paths[k][i]
    }

    pub fn increments_of(&self, k: usize) -> &[f64] {
        &self.increments[k]
    }

    pub fn path_of(&self, k: usize) -> &[f64] {
        &self.paths[k]
    }

    /// Dump the bank as CSV with columns t, W1..WK.
    pub fn write_csv<W: std::io::Write>(&self, out: &mut W) -> std::io::Result<()> {
        write!(out, "t")?;
        for k in 1..=self.drivers {
            write!(out, ",W{k}")?;
        }
        writeln!(out)?;
        for i in 0..=self.grid.steps() {
            write!(out, "{}", self.grid.node_time(i))?;
            for k in 0..self.drivers {
                write!(out, ",{}", self.paths[k][i])?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}
