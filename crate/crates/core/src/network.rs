//! Token-bucket traffic specification and the schedule constraint set.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Largest horizon for exhaustive schedule enumeration.
pub const MAX_ENUMERATION_LEN: usize = 16;

/// Token bucket `(g, c, b)`: `g` tokens accrue per step up to `b`; a transmission costs `c`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BucketParams {
    pub g: u32,
    pub c: u32,
    pub b: u32,
}

/// A transmission was triggered without enough tokens in the bucket.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenViolation {
    pub raw: i64,
}

impl BucketParams {
    pub fn new(g: u32, c: u32, b: u32) -> Result<Self> {
        let p = BucketParams { g, c, b };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.g < 1 {
            return Err(Error::InvalidBucket(format!("g = {} must be ≥ 1", self.g)));
        }
        if self.c < self.g {
            return Err(Error::InvalidBucket(format!("c = {} must be ≥ g = {}", self.c, self.g)));
        }
        if self.b + self.g < self.c {
            return Err(Error::InvalidBucket(format!(
                "b = {} must be ≥ c − g = {}",
                self.b,
                self.c - self.g
            )));
        }
        Ok(())
    }

    /// Base period `⌈c/g⌉` of the cheapest periodic admissible schedule.
    pub fn cycle_length(&self) -> usize {
        self.c.div_ceil(self.g) as usize
    }

    /// Unclamped successor `min(β + g − γc, b)`, which may be negative.
    pub fn next_raw(&self, level: i64, transmit: bool) -> i64 {
        let spent = if transmit { i64::from(self.c) } else { 0 };
        (level + i64::from(self.g) - spent).min(i64::from(self.b))
    }

    /// One bucket update; fails when the result would drop below zero.
    pub fn step(&self, level: u32, transmit: bool) -> std::result::Result<u32, TokenViolation> {
        let raw = self.next_raw(i64::from(level), transmit);
        if raw < 0 {
            Err(TokenViolation { raw })
        } else {
            Ok(raw as u32)
        }
    }

    /// Forward simulation of the bucket along a schedule.
    pub fn trajectory(&self, level0: u32, schedule: &Schedule) -> BucketTrajectory {
        let mut levels = Vec::with_capacity(schedule.len() + 1);
        let mut level = i64::from(level0);
        levels.push(level);
        for &bit in schedule.bits() {
            level = self.next_raw(level, bit);
            levels.push(level);
        }
        let feasible = levels.iter().all(|&l| l >= 0);
        BucketTrajectory { levels, feasible }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BucketTrajectory {
    /// Levels `β(0..=N)`; entries after a violation continue from the raw value.
    pub levels: Vec<i64>,
    pub feasible: bool,
}

/// Binary transmission schedule `γ(0..N−1)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Schedule {
    bits: Vec<bool>,
}

impl Schedule {
    pub fn new(bits: Vec<bool>) -> Self {
        Schedule { bits }
    }

    pub fn zeros(n: usize) -> Self {
        Schedule { bits: vec![false; n] }
    }

    /// Schedule of length `n` from an integer whose most significant of `n` bits is step 0.
    pub fn from_index(index: u64, n: usize) -> Self {
        Schedule {
            bits: (0..n).map(|i| index >> (n - 1 - i) & 1 == 1).collect(),
        }
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn get(&self, i: usize) -> bool {
        self.bits[i]
    }

    /// Ordered transmission indices τ.
    pub fn tx_indices(&self) -> Vec<usize> {
        self.bits
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
            .collect()
    }

    /// Number of transmissions n_γ.
    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Drops step 0.
    pub fn shifted(&self) -> Schedule {
        Schedule {
            bits: self.bits.iter().skip(1).copied().collect(),
        }
    }
}

impl fmt::Display for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.bits {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl FromStr for Schedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        s.chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(Error::config("schedule", format!("unexpected character {other:?}"))),
            })
            .collect::<Result<Vec<bool>>>()
            .map(Schedule::new)
    }
}

impl Serialize for Schedule {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Schedule {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Membership in the schedule constraint set for hold length `hold` and counter `s`.
///
/// The counter places a virtual transmission at index `−s−1`. Every transmission must
/// follow its predecessor within `hold` steps, and a transmission right after the
/// horizon (index `N`) must also be within `hold` steps of the last one. Horizons with
/// `N ≤ hold − s − 1` need no transmission at all.
pub fn in_gamma(schedule: &Schedule, hold: usize, s: usize) -> bool {
    let n = schedule.len() as i64;
    let hold = hold as i64;
    let s = s as i64;
    if n < hold - s {
        return true;
    }
    let mut previous = -s - 1;
    let mut any = false;
    for (i, &bit) in schedule.bits().iter().enumerate() {
        if bit {
            let i = i as i64;
            if i - previous > hold {
                return false;
            }
            previous = i;
            any = true;
        }
    }
    any && n - previous <= hold
}

/// All length-`n` schedules in the schedule constraint set that the bucket can afford
/// from level `level0`, in lexicographic order (step 0 most significant).
pub fn enumerate_feasible_schedules(
    n: usize,
    hold: usize,
    s: usize,
    level0: u32,
    params: &BucketParams,
) -> Result<Vec<Schedule>> {
    if n > MAX_ENUMERATION_LEN {
        return Err(Error::EnumerationGuard {
            n,
            max: MAX_ENUMERATION_LEN,
        });
    }
    Ok((0..1u64 << n)
        .map(|idx| Schedule::from_index(idx, n))
        .filter(|sched| in_gamma(sched, hold, s) && params.trajectory(level0, sched).feasible)
        .collect())
}

/// Steps elapsed since the step after the last transmission.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TxCounter(pub usize);

impl TxCounter {
    pub fn advance(self, transmitted: bool) -> TxCounter {
        TxCounter(counter_update(self.0, transmitted))
    }
}

pub fn counter_update(s: usize, transmitted: bool) -> usize {
    if transmitted {
        0
    } else {
        s + 1
    }
}
