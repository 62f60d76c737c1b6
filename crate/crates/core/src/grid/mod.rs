//! Multi-resolution hash-table feature grids.
//!
//! A grid is a set of `n_groups` independent groups. Each group owns one
//! table per resolution level plus a small MLP that maps the concatenated
//! per-level features to the group's output slice. Queries are points in
//! [0,1]^(key_len + 2): the leading components come from a learned key code,
//! the trailing two are normalized spatial coordinates.
//!
//! A level with at most `max_entries` lattice vertices stores every vertex
//! directly (a bijective row-major layout); finer levels fall back to a
//! spatial hash into a fixed-size table, accepting collisions.

mod encode;
mod index;

pub use encode::{backward, encode_feature, retrieve, GradientBundle, Retrieval};
pub use index::{
    cell_coords, corner_weights, hash_index, is_direct, lattice_entry_count, CellCoords,
    HASH_PRIMES, MAX_QUERY_DIM,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::DenseLayer;
use crate::scalar::Scalar;

/// Table entries are initialized uniformly in [-ENTRY_INIT_RANGE, +ENTRY_INIT_RANGE].
pub const ENTRY_INIT_RANGE: f64 = 1e-4;

/// Static shape of a grid: group count, key length, resolution ladder and
/// table limits, plus the per-group MLP dimensions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridConfig {
    /// Number of independent groups (each with its own tables and MLP).
    pub n_groups: usize,
    /// Key components consumed per group; queries have key_len + 2 dims.
    pub key_len: usize,
    /// Number of resolution levels per group.
    pub n_resolutions: usize,
    /// Coarsest lattice resolution in cells per axis.
    pub r_min: u32,
    /// Finest lattice resolution in cells per axis.
    pub r_max: u32,
    /// Hash table capacity per level (power of two).
    pub max_entries: usize,
    /// Feature floats stored per table entry.
    pub entry_dim: usize,
    /// Output features per group.
    pub out_dim: usize,
    /// Hidden width of the per-group MLP.
    pub hidden_dim: usize,
}

impl GridConfig {
    /// Query dimensionality: key components plus two spatial coordinates.
    pub fn query_dim(&self) -> usize {
        self.key_len + 2
    }

    /// Corners touched per level by one query.
    pub fn corner_count(&self) -> usize {
        1 << self.query_dim()
    }

    /// Input width of the per-group MLP.
    pub fn feature_in_dim(&self) -> usize {
        self.n_resolutions * self.entry_dim
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.n_groups == 0 {
            return fail("n_groups must be at least 1".into());
        }
        if self.key_len == 0 {
            return fail("key_len must be at least 1".into());
        }
        if self.query_dim() > MAX_QUERY_DIM {
            return fail(format!(
                "key_len {} gives query dim {} but only {} hash dimensions are supported",
                self.key_len,
                self.query_dim(),
                MAX_QUERY_DIM
            ));
        }
        if self.n_resolutions == 0 {
            return fail("n_resolutions must be at least 1".into());
        }
        if self.r_min == 0 {
            return fail("r_min must be at least 1".into());
        }
        if self.r_min > self.r_max {
            return fail(format!("r_min {} exceeds r_max {}", self.r_min, self.r_max));
        }
        if self.n_resolutions == 1 && self.r_min != self.r_max {
            return fail(format!(
                "a single resolution requires r_min == r_max, got {} and {}",
                self.r_min, self.r_max
            ));
        }
        if self.max_entries == 0 || !self.max_entries.is_power_of_two() {
            return fail(format!("max_entries {} must be a power of two", self.max_entries));
        }
        if self.max_entries > (1 << 31) {
            return fail(format!("max_entries {} exceeds the 2^31 cap", self.max_entries));
        }
        if self.entry_dim == 0 || self.out_dim == 0 || self.hidden_dim == 0 {
            return fail("entry_dim, out_dim and hidden_dim must be at least 1".into());
        }
        Ok(())
    }

    /// Geometric ladder of lattice resolutions from r_min to r_max:
    /// r_l = round(r_min * b^l) with b = (r_max/r_min)^(1/(n_resolutions-1)).
    pub fn resolution_schedule(&self) -> Result<Vec<u32>> {
        self.validate()?;
        if self.n_resolutions == 1 {
            return Ok(vec![self.r_min]);
        }
        let b = (self.r_max as f64 / self.r_min as f64).powf(1.0 / (self.n_resolutions - 1) as f64);
        let levels: Vec<u32> = (0..self.n_resolutions)
            .map(|l| (self.r_min as f64 * b.powi(l as i32)).round() as u32)
            .collect();
        debug_assert!(levels.windows(2).all(|w| w[0] <= w[1]));
        debug_assert_eq!(*levels.first().unwrap(), self.r_min);
        debug_assert_eq!(*levels.last().unwrap(), self.r_max);
        Ok(levels)
    }
}

/// One resolution level of one group.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelTable<S> {
    pub resolution: u32,
    /// True when every lattice vertex has its own entry.
    pub direct: bool,
    /// entry_count x entry_dim, row-major.
    pub entries: Vec<S>,
}

impl<S: Scalar> LevelTable<S> {
    pub fn entry_count(&self, entry_dim: usize) -> usize {
        self.entries.len() / entry_dim
    }

    pub fn entry(&self, idx: usize, entry_dim: usize) -> &[S] {
        &self.entries[idx * entry_dim..(idx + 1) * entry_dim]
    }
}

/// Tables for every level plus the MLP head of one group.
#[derive(Debug, Clone, PartialEq)]
pub struct HashTableGroup<S> {
    pub cfg: GridConfig,
    pub levels: Vec<LevelTable<S>>,
    pub mlp_hidden: DenseLayer<S>,
    pub mlp_out: DenseLayer<S>,
}

impl<S: Scalar> HashTableGroup<S> {
    /// Total parameters held in this group's tables.
    pub fn table_param_count(&self) -> usize {
        self.levels.iter().map(|l| l.entries.len()).sum()
    }

    /// Total parameters held in this group's MLP.
    pub fn mlp_param_count(&self) -> usize {
        self.mlp_hidden.param_count() + self.mlp_out.param_count()
    }

    /// Lossless precision change (f32 values embed exactly into f64).
    pub fn convert<T: Scalar>(&self) -> HashTableGroup<T> {
        HashTableGroup {
            cfg: self.cfg.clone(),
            levels: self
                .levels
                .iter()
                .map(|l| LevelTable {
                    resolution: l.resolution,
                    direct: l.direct,
                    entries: l.entries.iter().map(|&v| T::from_f64(v.to_f64())).collect(),
                })
                .collect(),
            mlp_hidden: convert_dense(&self.mlp_hidden),
            mlp_out: convert_dense(&self.mlp_out),
        }
    }
}

fn convert_dense<S: Scalar, T: Scalar>(d: &DenseLayer<S>) -> DenseLayer<T> {
    DenseLayer {
        in_dim: d.in_dim,
        out_dim: d.out_dim,
        w: d.w.iter().map(|&v| T::from_f64(v.to_f64())).collect(),
        b: d.b.iter().map(|&v| T::from_f64(v.to_f64())).collect(),
    }
}

/// Build one group with seeded initialization: table entries uniform in
/// [-1e-4, 1e-4], MLP weights uniform with fan-in scaling. The same seed
/// always yields the same group.
pub fn build_group<S: Scalar>(cfg: &GridConfig, seed: u64) -> Result<HashTableGroup<S>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = cfg.query_dim();
    let mut levels = Vec::with_capacity(cfg.n_resolutions);
    for r in cfg.resolution_schedule()? {
        let count = lattice_entry_count(r, dims, cfg.max_entries);
        let entries = (0..count * cfg.entry_dim)
            .map(|_| S::from_f64(rng.random::<f64>() * 2.0 * ENTRY_INIT_RANGE - ENTRY_INIT_RANGE))
            .collect();
        levels.push(LevelTable { resolution: r, direct: is_direct(r, dims, cfg.max_entries), entries });
    }
    let mlp_hidden = DenseLayer::new_seeded(cfg.feature_in_dim(), cfg.hidden_dim, &mut rng);
    let mlp_out = DenseLayer::new_seeded(cfg.hidden_dim, cfg.out_dim, &mut rng);
    Ok(HashTableGroup { cfg: cfg.clone(), levels, mlp_hidden, mlp_out })
}

/// Per-level entry counts for one group.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LevelParams {
    pub resolution: u32,
    pub entry_count: usize,
    pub direct: bool,
}

/// Parameter budget of a full grid (all groups).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamCount {
    pub per_level: Vec<LevelParams>,
    pub table_params: usize,
    pub mlp_params: usize,
    pub total: usize,
}

/// Count parameters without building tables. Table entries dominate; the
/// MLP term counts the actual two-layer head (hidden plus output weights
/// and biases) per group.
pub fn param_count(cfg: &GridConfig) -> Result<ParamCount> {
    cfg.validate()?;
    let dims = cfg.query_dim();
    let per_level: Vec<LevelParams> = cfg
        .resolution_schedule()?
        .into_iter()
        .map(|r| LevelParams {
            resolution: r,
            entry_count: lattice_entry_count(r, dims, cfg.max_entries),
            direct: is_direct(r, dims, cfg.max_entries),
        })
        .collect();
    let entries_per_group: usize = per_level.iter().map(|l| l.entry_count).sum();
    let table_params = cfg.n_groups * entries_per_group * cfg.entry_dim;
    let mlp_per_group = (cfg.feature_in_dim() + 1) * cfg.hidden_dim + (cfg.hidden_dim + 1) * cfg.out_dim;
    let mlp_params = cfg.n_groups * mlp_per_group;
    Ok(ParamCount { per_level, table_params, mlp_params, total: table_params + mlp_params })
}
