//! Reproducible Brownian increments on uniform partitions.
//!
//! Increments are keyed on `(seed, path, step, component)`: the ChaCha key is
//! derived from the seed, the stream id is the path index and the block
//! position is the step/component counter. Paths can therefore be generated
//! in any order, on any thread, with identical results.
//!
//! Coarsening sums fine increments with a fixed pairwise tree for the
//! power-of-two part of the factor, so nested dyadic coarsening is bit-stable.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Uniform partition of `[0, t_end]` into `steps` intervals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimePartition {
    t_end: f64,
    steps: usize,
    dt: f64,
}

impl TimePartition {
    pub fn new(t_end: f64, steps: usize) -> Result<Self> {
        if !(t_end > 0.0) || !t_end.is_finite() {
            return Err(Error::Config(format!(
                "horizon must be positive and finite (got {t_end})"
            )));
        }
        Ok(TimePartition {
            t_end,
            steps,
            dt: if steps == 0 { 0.0 } else { t_end / steps as f64 },
        })
    }

    /// Partition with `2^level` steps.
    pub fn dyadic(t_end: f64, level: u32) -> Result<Self> {
        TimePartition::new(t_end, 1usize << level)
    }

    /// Partition with step `dt`; `t_end/dt` must be an integer to 1e-9 relative.
    pub fn with_step(t_end: f64, dt: f64) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::Config(format!("step size must be positive (got {dt})")));
        }
        let ratio = t_end / dt;
        let steps = ratio.round();
        if (ratio - steps).abs() > 1e-9 * ratio.max(1.0) || steps < 1.0 {
            return Err(Error::Config(format!(
                "T={t_end} is not an integer multiple of dt={dt}"
            )));
        }
        TimePartition::new(t_end, steps as usize)
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }
}

/// Brownian increments `Δw_k`, `k = 0..N`, stored row-major as `N×d`.
#[derive(Debug, Clone, PartialEq)]
pub struct BrownianGrid {
    partition: TimePartition,
    noise_dim: usize,
    increments: Vec<f64>,
    seed: u64,
    path: u64,
    level: Option<u32>,
}

fn dyadic_level(steps: usize) -> Option<u32> {
    steps.is_power_of_two().then(|| steps.trailing_zeros())
}

/// Counter-based normal stream for one `(seed, path)` pair.
pub struct NormalStream {
    rng: ChaCha8Rng,
}

impl NormalStream {
    pub fn new(seed: u64, path: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(path);
        NormalStream { rng }
    }

    /// Positions the stream at draw `index` (each draw consumes two 32-bit words).
    pub fn seek(&mut self, index: u64) {
        self.rng.set_word_pos(2 * index as u128);
    }

    /// Uniform on the open interval (0, 1) with 53 random bits.
    pub fn next_uniform(&mut self) -> f64 {
        ((self.rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    pub fn next_standard_normal(&mut self) -> f64 {
        inverse_normal_cdf(self.next_uniform())
    }
}

impl BrownianGrid {
    /// Increments for path 0 under `seed`.
    pub fn generate(partition: TimePartition, noise_dim: usize, seed: u64) -> Result<Self> {
        Self::generate_path(partition, noise_dim, seed, 0)
    }

    /// Increments for `path` under `seed`; independent of every other path index.
    pub fn generate_path(partition: TimePartition, noise_dim: usize, seed: u64, path: u64) -> Result<Self> {
        if partition.steps() == 0 {
            return Err(Error::Config(
                "cannot generate increments on a zero-step partition".into(),
            ));
        }
        if noise_dim == 0 {
            return Err(Error::Config("noise dimension must be positive".into()));
        }
        let scale = partition.dt().sqrt();
        let mut stream = NormalStream::new(seed, path);
        let increments = (0..partition.steps() * noise_dim)
            .map(|_| scale * stream.next_standard_normal())
            .collect();
        Ok(BrownianGrid {
            partition,
            noise_dim,
            increments,
            seed,
            path,
            level: dyadic_level(partition.steps()),
        })
    }

    /// Grid from explicit increments (row-major `N×d`), for tests and replay.
    pub fn from_increments(partition: TimePartition, noise_dim: usize, increments: Vec<f64>) -> Result<Self> {
        if noise_dim == 0 || increments.len() != partition.steps() * noise_dim {
            return Err(Error::Config(format!(
                "expected {}×{} increments, got {}",
                partition.steps(),
                noise_dim,
                increments.len()
            )));
        }
        Ok(BrownianGrid {
            partition,
            noise_dim,
            increments,
            seed: 0,
            path: 0,
            level: dyadic_level(partition.steps()),
        })
    }

    /// All-zero increments: the deterministic skeleton of a path.
    pub fn zeros(partition: TimePartition, noise_dim: usize) -> Result<Self> {
        Self::from_increments(partition, noise_dim, vec![0.0; partition.steps() * noise_dim])
    }

    pub fn partition(&self) -> &TimePartition {
        &self.partition
    }

    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn path(&self) -> u64 {
        self.path
    }

    /// `log2(steps)` when the step count is a power of two.
    pub fn level(&self) -> Option<u32> {
        self.level
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    /// Increment vector over `[t_k, t_{k+1}]`.
    #[inline]
    pub fn increment(&self, k: usize) -> &[f64] {
        &self.increments[k * self.noise_dim..(k + 1) * self.noise_dim]
    }

    /// Sums groups of `factor` consecutive increments.
    ///
    /// The power-of-two part of `factor` is applied as repeated pairwise
    /// halving, `((w₁+w₂)+(w₃+w₄))`, and any odd remainder as a left-to-right
    /// sum, so `coarsen(coarsen(g, 2), 2) == coarsen(g, 4)` bit for bit.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        let steps = self.partition.steps();
        if factor == 0 || !steps.is_multiple_of(factor) {
            return Err(Error::Config(format!(
                "coarsening factor {factor} does not divide {steps} steps"
            )));
        }
        let mut grid = self.clone();
        let mut remaining = factor;
        while remaining.is_multiple_of(2) {
            grid = grid.merge_groups(2);
            remaining /= 2;
        }
        if remaining > 1 {
            grid = grid.merge_groups(remaining);
        }
        grid.partition.dt = self.partition.dt() * factor as f64;
        Ok(grid)
    }

    fn merge_groups(&self, group: usize) -> Self {
        let d = self.noise_dim;
        let coarse_steps = self.partition.steps() / group;
        let mut out = vec![0.0; coarse_steps * d];
        for k in 0..coarse_steps {
            for c in 0..d {
                let mut acc = self.increments[(k * group) * d + c];
                for j in 1..group {
                    acc += self.increments[(k * group + j) * d + c];
                }
                out[k * d + c] = acc;
            }
        }
        let mut partition = self.partition;
        partition.steps = coarse_steps;
        partition.dt = self.partition.dt * group as f64;
        BrownianGrid {
            partition,
            noise_dim: d,
            increments: out,
            seed: self.seed,
            path: self.path,
            level: dyadic_level(coarse_steps),
        }
    }
}

/// Inverse of the standard normal CDF, Wichura's AS241 (PPND16), accurate to
/// about 1e-16 relative over (0, 1).
#[allow(clippy::excessive_precision)]
pub fn inverse_normal_cdf(p: f64) -> f64 {
    const A: [f64; 8] = [
        3.387_132_872_796_366_608,
        1.331_416_678_917_843_774_5e2,
        1.971_590_950_306_551_442_7e3,
        1.373_169_376_550_946_112_5e4,
        4.592_195_393_154_987_145_7e4,
        6.726_577_092_700_870_085_3e4,
        3.343_057_558_358_812_810_5e4,
        2.509_080_928_730_122_672_7e3,
    ];
    const B: [f64; 8] = [
        1.0,
        4.231_333_070_160_091_125_2e1,
        6.871_870_074_920_579_083e2,
        5.394_196_021_424_751_107_7e3,
        2.121_379_430_158_659_586_7e4,
        3.930_789_580_009_271_061e4,
        2.872_908_573_572_194_267_4e4,
        5.226_495_278_852_854_561e3,
    ];
    const C: [f64; 8] = [
        1.423_437_110_749_683_577_34,
        4.630_337_846_156_545_295_9,
        5.769_497_221_460_691_405_5,
        3.647_848_324_763_204_605_04,
        1.270_458_252_452_368_382_58,
        2.417_807_251_774_506_117_7e-1,
        2.272_384_498_926_918_458_33e-2,
        7.745_450_142_783_414_076_4e-4,
    ];
    const D: [f64; 8] = [
        1.0,
        2.053_191_626_637_758_821_87,
        1.676_384_830_183_803_849_4,
        6.897_673_349_851_000_045_5e-1,
        1.481_039_764_274_800_745_9e-1,
        1.519_866_656_361_645_719_66e-2,
        5.475_938_084_995_344_946e-4,
        1.050_750_071_644_416_843_24e-9,
    ];
    const E: [f64; 8] = [
        6.657_904_643_501_103_777_2,
        5.463_784_911_164_114_369_9,
        1.784_826_539_917_291_335_8,
        2.965_605_718_285_048_912_3e-1,
        2.653_218_952_657_612_309_3e-2,
        1.242_660_947_388_078_438_6e-3,
        2.711_555_568_743_487_578_15e-5,
        2.010_334_399_292_288_132_65e-7,
    ];
    const F: [f64; 8] = [
        1.0,
        5.998_322_065_558_879_376_9e-1,
        1.369_298_809_227_358_053_1e-1,
        1.487_536_129_085_061_485_25e-2,
        7.868_691_311_456_132_591e-4,
        1.846_318_317_510_054_681_8e-5,
        1.421_511_758_316_445_888_7e-7,
        2.044_263_103_389_939_785_64e-15,
    ];
    fn poly(c: &[f64; 8], x: f64) -> f64 {
        c.iter().rev().fold(0.0, |acc, &k| acc * x + k)
    }

    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return q * poly(&A, r) / poly(&B, r);
    }
    let r = if q < 0.0 { p } else { 1.0 - p };
    let r = (-r.ln()).sqrt();
    let z = if r <= 5.0 {
        let r = r - 1.6;
        poly(&C, r) / poly(&D, r)
    } else {
        let r = r - 5.0;
        poly(&E, r) / poly(&F, r)
    };
    if q < 0.0 {
        -z
    } else {
        z
    }
}
