//! Structural probes for the encoding: which table slots a query stream
//! actually touches, a deliberately plain vector-quantization baseline to
//! contrast codebook usage against, and small metric helpers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::{cell_coords, hash_index, GridConfig, HashTableGroup};
use crate::scalar::Scalar;

/// Corner-touch counts per level, one counter per table slot. A query
/// "hits" a slot whenever the slot backs one of the 2^dims corners of the
/// query's cell, regardless of the interpolation weight (a zero-weight
/// corner is still fetched).
#[derive(Debug, Clone, PartialEq)]
pub struct HitStats {
    pub queries: u64,
    pub corner_count: usize,
    pub resolutions: Vec<u32>,
    /// `levels[l][slot]` = number of touches.
    pub levels: Vec<Vec<u64>>,
}

impl HitStats {
    pub fn zeroed<S: Scalar>(group: &HashTableGroup<S>) -> Self {
        HitStats {
            queries: 0,
            corner_count: group.cfg.corner_count(),
            resolutions: group.levels.iter().map(|l| l.resolution).collect(),
            levels: group
                .levels
                .iter()
                .map(|l| vec![0; l.entries.len() / group.cfg.entry_dim])
                .collect(),
        }
    }

    /// Fold another shard into this one. Addition is associative and
    /// commutative, so sharded collection is schedule-independent.
    pub fn merge(&mut self, other: &HitStats) -> Result<()> {
        if self.resolutions != other.resolutions
            || self.corner_count != other.corner_count
            || self.levels.len() != other.levels.len()
        {
            return Err(Error::Shape("HitStats::merge: mismatched collectors".into()));
        }
        self.queries += other.queries;
        for (mine, theirs) in self.levels.iter_mut().zip(&other.levels) {
            if mine.len() != theirs.len() {
                return Err(Error::Shape("HitStats::merge: mismatched slot counts".into()));
            }
            for (a, b) in mine.iter_mut().zip(theirs) {
                *a += b;
            }
        }
        Ok(())
    }
}

/// Count every corner touch of every query at every level of `group`.
pub fn collect_hits<S: Scalar, Q: AsRef<[S]>>(
    group: &HashTableGroup<S>,
    queries: impl IntoIterator<Item = Q>,
) -> Result<HitStats> {
    let cfg = &group.cfg;
    let dims = cfg.query_dim();
    let m = cfg.corner_count();
    let mut stats = HitStats::zeroed(group);
    for q in queries {
        let q = q.as_ref();
        for (l, level) in group.levels.iter().enumerate() {
            let cc = cell_coords(level.resolution, dims, q)?;
            for k in 0..m {
                let coords = cc.corner_coords(k);
                let idx = hash_index(level.resolution, dims, cfg.max_entries, &coords[..dims])?;
                stats.levels[l][idx] += 1;
            }
        }
        stats.queries += 1;
    }
    Ok(stats)
}

/// Per-level usage summary derived from [`HitStats`].
#[derive(Debug, Clone, PartialEq)]
pub struct LevelUsage {
    pub level: usize,
    pub resolution: u32,
    pub entries: usize,
    /// Fraction of slots touched at least once.
    pub hit_fraction: f64,
    pub mean_hits: f64,
    /// Population standard deviation of per-slot counts.
    pub std_hits: f64,
}

pub fn usage_report(stats: &HitStats) -> Vec<LevelUsage> {
    stats
        .levels
        .iter()
        .enumerate()
        .map(|(l, counts)| {
            let n = counts.len() as f64;
            let nonzero = counts.iter().filter(|&&c| c > 0).count();
            let mean = counts.iter().sum::<u64>() as f64 / n;
            let var = counts
                .iter()
                .map(|&c| {
                    let d = c as f64 - mean;
                    d * d
                })
                .sum::<f64>()
                / n;
            LevelUsage {
                level: l,
                resolution: stats.resolutions[l],
                entries: counts.len(),
                hit_fraction: nonzero as f64 / n,
                mean_hits: mean,
                std_hits: var.sqrt(),
            }
        })
        .collect()
}

pub fn usage_csv(report: &[LevelUsage]) -> String {
    let mut out = String::from("level,resolution,entries,hit_fraction,mean_hits,std_hits\n");
    for r in report {
        out.push_str(&format!(
            "{},{},{},{:.6},{:.6},{:.6}\n",
            r.level, r.resolution, r.entries, r.hit_fraction, r.mean_hits, r.std_hits
        ));
    }
    out
}

/// Raw per-slot histogram for one level, as CSV.
pub fn histogram_csv(stats: &HitStats, level: usize) -> Result<String> {
    let counts = stats
        .levels
        .get(level)
        .ok_or_else(|| Error::IndexOutOfRange(format!("level {level} of {}", stats.levels.len())))?;
    let mut out = String::from("entry_index,count\n");
    for (i, c) in counts.iter().enumerate() {
        out.push_str(&format!("{i},{c}\n"));
    }
    Ok(out)
}

pub fn usage_summary(stats: &HitStats) -> String {
    let mut out = format!(
        "{} queries, {} corners per query per level\n",
        stats.queries, stats.corner_count
    );
    for r in usage_report(stats) {
        out.push_str(&format!(
            "level {} (r={}): {}/{} slots hit ({:.1}%), mean {:.2} hits, std {:.2}\n",
            r.level,
            r.resolution,
            (r.hit_fraction * r.entries as f64).round() as u64,
            r.entries,
            r.hit_fraction * 100.0,
            r.mean_hits,
            r.std_hits
        ));
    }
    out
}

/// Nearest-mean codebook trained with exponential moving averages. Entries
/// never move unless features are assigned to them; there is no dead-entry
/// revival, because demonstrating that failure mode is the point.
#[derive(Debug, Clone, PartialEq)]
pub struct VqCodebook {
    pub dim: usize,
    /// `entries[k]` = codebook vector k.
    pub entries: Vec<Vec<f64>>,
    /// Assignment counts from the final pass.
    pub counts: Vec<u64>,
}

impl VqCodebook {
    /// Fraction of entries that won at least one assignment in the final pass.
    pub fn usage_fraction(&self) -> f64 {
        self.counts.iter().filter(|&&c| c > 0).count() as f64 / self.counts.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VqInit {
    /// Seed entries with a random subset of the features.
    RandomSubset,
    /// Seed entries well outside the data's bounding box, so most of them
    /// never win an assignment and therefore never receive an update.
    FarOffset,
}

const VQ_EMA_DECAY: f64 = 0.99;

fn nearest_entry(entries: &[Vec<f64>], x: &[f64]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (k, e) in entries.iter().enumerate() {
        let d: f64 = e.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
        if d < best_d {
            best_d = d;
            best = k;
        }
    }
    best
}

pub fn vq_train_with_init(
    features: &[Vec<f64>],
    k: usize,
    steps: usize,
    seed: u64,
    init: VqInit,
) -> Result<VqCodebook> {
    if features.is_empty() {
        return Err(Error::Data("vq_train: empty feature set".into()));
    }
    if k == 0 {
        return Err(Error::Config("vq_train: K must be at least 1".into()));
    }
    let dim = features[0].len();
    if dim == 0 || features.iter().any(|f| f.len() != dim) {
        return Err(Error::Shape("vq_train: inconsistent feature dimensions".into()));
    }
    if features.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("vq_train: non-finite feature".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries: Vec<Vec<f64>> = match init {
        VqInit::RandomSubset => (0..k)
            .map(|_| features[rng.random_range(0..features.len())].clone())
            .collect(),
        VqInit::FarOffset => (0..k)
            .map(|_| (0..dim).map(|_| 10.0 + rng.random::<f64>()).collect())
            .collect(),
    };

    let mut counts = vec![0u64; k];
    for _ in 0..steps {
        // Full-batch assignment, then per-entry mean, then EMA toward it.
        let mut sums = vec![vec![0.0; dim]; k];
        counts.iter_mut().for_each(|c| *c = 0);
        for f in features {
            let a = nearest_entry(&entries, f);
            counts[a] += 1;
            for (s, &v) in sums[a].iter_mut().zip(f) {
                *s += v;
            }
        }
        for ((e, s), &c) in entries.iter_mut().zip(&sums).zip(&counts) {
            if c == 0 {
                continue; // an entry only moves when features are assigned to it
            }
            for (ev, &sv) in e.iter_mut().zip(s) {
                let mean = sv / c as f64;
                *ev = VQ_EMA_DECAY * *ev + (1.0 - VQ_EMA_DECAY) * mean;
            }
        }
    }
    Ok(VqCodebook { dim, entries, counts })
}

/// EMA vector quantization with random-subset initialization.
pub fn vq_train(features: &[Vec<f64>], k: usize, steps: usize, seed: u64) -> Result<VqCodebook> {
    vq_train_with_init(features, k, steps, seed, VqInit::RandomSubset)
}

/// Outcome of the clustered usage comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastOutcome {
    pub vq_usage: f64,
    pub hash_usage: f64,
}

/// Usage comparison on clustered synthetic data.
///
/// The same 3-d points serve both sides. A 64-entry codebook initialized far
/// from four tight clusters can only ever move the handful of entries that
/// win the first assignment, so most of it stays dead. The smallest hash
/// grid level (resolution 1, direct mode) interpolates every query over all
/// eight of its slots, so its usage is 1 by construction.
pub fn clustered_contrast(seed: u64) -> Result<ContrastOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<[f64; 3]> = (0..4)
        .map(|_| std::array::from_fn(|_| 0.1 + 0.8 * rng.random::<f64>()))
        .collect();
    let mut features = Vec::with_capacity(4 * 256);
    for c in &centers {
        for _ in 0..256 {
            features.push(
                c.iter()
                    .map(|&v| (v + 0.01 * (rng.random::<f64>() - 0.5)).clamp(0.0, 1.0))
                    .collect::<Vec<f64>>(),
            );
        }
    }

    let vq = vq_train_with_init(&features, 64, 100, seed ^ 1, VqInit::FarOffset)?;

    let cfg = GridConfig {
        n_groups: 1,
        key_len: 1,
        n_resolutions: 1,
        r_min: 1,
        r_max: 1,
        max_entries: 8,
        entry_dim: 2,
        out_dim: 2,
        hidden_dim: 4,
    };
    let group = crate::grid::build_group::<f64>(&cfg, seed ^ 2)?;
    let stats = collect_hits(&group, features.iter().map(|f| f.as_slice()))?;
    let hash_usage = usage_report(&stats)[0].hit_fraction;

    Ok(ContrastOutcome { vq_usage: vq.usage_fraction(), hash_usage })
}

/// Harmonic mean of precision and recall.
pub fn f1(precision: f64, recall: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&precision) || !(0.0..=1.0).contains(&recall) {
        return Err(Error::Config(format!(
            "f1: precision {precision} and recall {recall} must lie in [0, 1]"
        )));
    }
    if precision == 0.0 && recall == 0.0 {
        return Err(Error::Config("f1: precision and recall are both zero".into()));
    }
    Ok(2.0 * precision * recall / (precision + recall))
}
