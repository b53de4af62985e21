//! Deterministic synthetic access logs.
//!
//! Output is format A (`<timestamp>,<user>,<item>`), one line per request,
//! in time order. The same profile always produces the same bytes.
//!
//! # Random stream
//!
//! All draws come from PCG32 (PCG-XSH-RR, 64-bit state, 32-bit output)
//! seeded like the reference `pcg32_srandom_r(seed, 0xa02bdbf7bb3c0a7)`,
//! i.e. increment `(stream << 1) | 1`.
//! Draws are derived as follows and must not change:
//!
//! * `u64`: first 32-bit output in the low half, second in the high half;
//! * `unit()`: `(u64 >> 11) * 2^-53`, in `[0, 1)`;
//! * `below(n)`: `floor(unit() * n)`.
//!
//! # Session layout
//!
//! Sessions never overlap in time, so global start order equals generation
//! order and block `b` holds sessions `b * sessions_per_block ..`. For each
//! session, in draw order:
//!
//! 1. user: `below(n_users)`, retried up to 8 times while that user's last
//!    session ended less than the default sessionizer gap ago; if all tries
//!    fail the start is pushed past the gap of the last candidate;
//! 2. K: sampled from the shape, then drifted (see [`Drift`]);
//! 3. K distinct items, each `below(n_items)` with rejection of repeats
//!    (partial Fisher–Yates when K exceeds half the catalogue);
//! 4. K − 1 intra-session steps of `1 + below(300)` seconds;
//! 5. a pause of `1 + below(60)` seconds before the next session, divided
//!    by `volume^b` and floored at one second.

use std::io::Write;

use chrono::{TimeZone, Utc};
use rand_core::RngCore;
use rand_pcg::Pcg32;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fmt::write_timestamp;
use crate::log_ingest::DEFAULT_GAP;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("infeasible profile: {0}")]
    Infeasible(String),
    #[error("invalid profile file: {0}")]
    Profile(#[from] toml::de::Error),
    #[error("cannot write synthetic log: {0}")]
    Io(#[from] std::io::Error),
}

const PCG_STREAM: u64 = 0xa02b_dbf7_bb3c_0a7;
/// 2021-01-01T00:00:00Z.
const EPOCH_MS: i64 = 1_609_459_200_000;
const MOSTLY_ONE_CAP: u32 = 20;
const HEAVY_TAIL_CAP: u32 = 50;
const HEAVY_TAIL_EXPONENT: f64 = 1.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "kebab-case")]
pub enum KDistribution {
    /// K = 1 with probability 0.9; otherwise 2 plus a geometric(½) count,
    /// capped at 20.
    MostlyOne,
    /// P(K = k) ∝ k^-1.2 for k in 1..=50.
    HeavyTail,
    /// K uniform on `lo..=hi`.
    UniformRange { lo: u32, hi: u32 },
}

impl KDistribution {
    fn max_k(&self) -> u32 {
        match *self {
            KDistribution::MostlyOne => MOSTLY_ONE_CAP,
            KDistribution::HeavyTail => HEAVY_TAIL_CAP,
            KDistribution::UniformRange { hi, .. } => hi,
        }
    }
}

/// Per-block multiplicative trends.
///
/// In block `b` the sampled K is scaled by `k^b` with stochastic rounding
/// (`floor(x)` plus one with probability `frac(x)`, floored at 1), which
/// scales the expected K exactly while `x ≥ 1`. Session arrivals speed up by
/// `volume^b`; block sizes stay fixed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Drift {
    #[serde(default = "one")]
    pub k: f64,
    #[serde(default = "one")]
    pub volume: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for Drift {
    fn default() -> Self {
        Drift { k: 1.0, volume: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthProfile {
    pub n_users: u64,
    pub n_items: u64,
    pub sessions_per_block: u64,
    pub n_blocks: u64,
    pub k_distribution: KDistribution,
    #[serde(default)]
    pub drift: Drift,
    #[serde(default)]
    pub seed: u64,
}

/// 100 blocks of 10,000 mostly-one sessions over 100,000 users.
impl Default for SynthProfile {
    fn default() -> Self {
        SynthProfile {
            n_users: 100_000,
            n_items: 5_000,
            sessions_per_block: 10_000,
            n_blocks: 100,
            k_distribution: KDistribution::MostlyOne,
            drift: Drift::default(),
            seed: 0,
        }
    }
}

impl SynthProfile {
    pub fn from_toml_str(s: &str) -> Result<Self, SynthError> {
        Ok(toml::from_str(s)?)
    }

    pub fn total_sessions(&self) -> u64 {
        self.sessions_per_block * self.n_blocks
    }

    fn largest_k(&self) -> u64 {
        let scale = self.drift.k.max(1.0).powf(self.n_blocks.saturating_sub(1) as f64);
        (f64::from(self.k_distribution.max_k()) * scale).ceil() as u64
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let infeasible = |m: String| Err(SynthError::Infeasible(m));
        for (name, v) in [
            ("n_users", self.n_users),
            ("n_items", self.n_items),
            ("sessions_per_block", self.sessions_per_block),
            ("n_blocks", self.n_blocks),
        ] {
            if v == 0 {
                return infeasible(format!("{name} must be at least 1"));
            }
        }
        for (name, v) in [("drift.k", self.drift.k), ("drift.volume", self.drift.volume)] {
            if !(v > 0.0 && v.is_finite()) {
                return infeasible(format!("{name} must be positive, got {v}"));
            }
        }
        if let KDistribution::UniformRange { lo, hi } = self.k_distribution {
            if lo == 0 || lo > hi {
                return infeasible(format!("uniform range needs 1 <= lo <= hi, got {lo}..{hi}"));
            }
        }
        let largest = self.largest_k();
        if largest > self.n_items {
            return infeasible(format!(
                "sessions may need {largest} distinct items but only {} exist",
                self.n_items
            ));
        }
        Ok(())
    }
}

/// Reproducible draw helpers over PCG32.
struct Draws {
    rng: Pcg32,
}

impl Draws {
    fn new(seed: u64) -> Self {
        Draws { rng: Pcg32::new(seed, PCG_STREAM) }
    }

    fn unit(&mut self) -> f64 {
        let lo = u64::from(self.rng.next_u32());
        let hi = u64::from(self.rng.next_u32());
        (((hi << 32) | lo) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    fn below(&mut self, n: u64) -> u64 {
        ((self.unit() * n as f64) as u64).min(n - 1)
    }
}

struct KSampler {
    shape: KDistribution,
    heavy_cdf: Vec<f64>,
}

impl KSampler {
    fn new(shape: KDistribution) -> Self {
        let heavy_cdf = if let KDistribution::HeavyTail = shape {
            let weights: Vec<f64> = (1..=HEAVY_TAIL_CAP).map(|k| f64::from(k).powf(-HEAVY_TAIL_EXPONENT)).collect();
            let total: f64 = weights.iter().sum();
            let mut acc = 0.0;
            weights.iter().map(|w| { acc += w / total; acc }).collect()
        } else {
            Vec::new()
        };
        KSampler { shape, heavy_cdf }
    }

    fn sample(&self, d: &mut Draws) -> u32 {
        match self.shape {
            KDistribution::MostlyOne => {
                if d.unit() < 0.9 {
                    1
                } else {
                    let mut k = 2;
                    while k < MOSTLY_ONE_CAP && d.unit() < 0.5 {
                        k += 1;
                    }
                    k
                }
            }
            KDistribution::HeavyTail => {
                let u = d.unit();
                let idx = self.heavy_cdf.partition_point(|&c| c <= u);
                (idx as u32 + 1).min(HEAVY_TAIL_CAP)
            }
            KDistribution::UniformRange { lo, hi } => lo + d.below(u64::from(hi - lo) + 1) as u32,
        }
    }
}

/// What a generation run produced.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SynthSummary {
    pub sessions: u64,
    pub events: u64,
    /// K of every session in generation order.
    pub k_values: Vec<u32>,
}

/// Writes the synthetic log for `profile` to `out`.
pub fn generate_logs<W: Write>(profile: &SynthProfile, out: &mut W) -> Result<SynthSummary, SynthError> {
    profile.validate()?;
    let gap_ms = DEFAULT_GAP.as_millis() as i64;
    let mut d = Draws::new(profile.seed);
    let sampler = KSampler::new(profile.k_distribution);
    let mut last_end: Vec<Option<i64>> = vec![None; profile.n_users as usize];
    let mut summary = SynthSummary { k_values: Vec::with_capacity(profile.total_sessions() as usize), ..Default::default() };
    let mut items: Vec<u64> = Vec::new();
    let mut clock = EPOCH_MS;
    let mut line = Vec::with_capacity(64);

    for block in 0..profile.n_blocks {
        let k_scale = profile.drift.k.powf(block as f64);
        let pause_scale = profile.drift.volume.powf(block as f64);
        for _ in 0..profile.sessions_per_block {
            let mut user = d.below(profile.n_users);
            let ready = |u: u64| last_end[u as usize].map_or(true, |end| clock - end > gap_ms);
            let mut tries = 0;
            while !ready(user) && tries < 8 {
                user = d.below(profile.n_users);
                tries += 1;
            }
            if let Some(end) = last_end[user as usize] {
                clock = clock.max(end + gap_ms + 1000);
            }

            let mut k = sampler.sample(&mut d);
            if profile.drift.k != 1.0 {
                let x = f64::from(k) * k_scale;
                let whole = x.floor();
                let bump = u32::from(d.unit() < x - whole);
                k = (whole as u32 + bump).max(1);
            }
            pick_items(&mut d, profile.n_items, k as usize, &mut items);

            let mut t = clock;
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    t += (1 + d.below(300) as i64) * 1000;
                }
                line.clear();
                let ts = Utc.timestamp_millis_opt(t).single().expect("timestamp in range");
                write_timestamp(&mut line, &ts)?;
                write!(line, ",u{user},art{item}\n")?;
                out.write_all(&line)?;
            }
            last_end[user as usize] = Some(t);
            summary.sessions += 1;
            summary.events += u64::from(k);
            summary.k_values.push(k);

            let pause_ms = ((1 + d.below(60)) as f64 * 1000.0 / pause_scale).round() as i64;
            clock = t + pause_ms.max(1000);
        }
    }
    out.flush()?;
    Ok(summary)
}

fn pick_items(d: &mut Draws, n_items: u64, k: usize, out: &mut Vec<u64>) {
    out.clear();
    if (k as u64) * 2 <= n_items {
        while out.len() < k {
            let item = d.below(n_items);
            if !out.contains(&item) {
                out.push(item);
            }
        }
    } else {
        let mut pool: Vec<u64> = (0..n_items).collect();
        for i in 0..k {
            let j = i + d.below((pool.len() - i) as u64) as usize;
            pool.swap(i, j);
        }
        out.extend_from_slice(&pool[..k]);
    }
}
