//! Continuous key codes and their journey to grid queries.
//!
//! A key-code grid is the encoder's output: an (h, w, c) block of values in
//! [0,1] with c = n_groups * key_len channels. It is tiled up to the feature
//! block's spatial size, and every tiled cell yields one query per group:
//! the group's key slice (optionally jittered), then the cell's normalized
//! spatial coordinates.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::grid::{encode_feature, HashTableGroup};
use crate::nn::sigmoid_one;
use crate::scalar::Scalar;

/// Row-major (h, w, c) block of key codes in [0,1].
#[derive(Debug, Clone, PartialEq)]
pub struct KeyCodeGrid<S> {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub data: Vec<S>,
}

/// Key codes replicated to the feature block's spatial size.
#[derive(Debug, Clone, PartialEq)]
pub struct TiledKeyGrid<S> {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub data: Vec<S>,
}

/// Row-major (h, w, c) block of grid features, c = n_groups * out_dim.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBlock<S> {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub data: Vec<S>,
}

impl<S: Scalar> TiledKeyGrid<S> {
    #[inline]
    pub fn at(&self, i: usize, j: usize) -> &[S] {
        let base = (i * self.w + j) * self.c;
        &self.data[base..base + self.c]
    }
}

/// Training-time key noise is zero-mean Gaussian with this standard
/// deviation: a quarter of the finest cell, so jittered keys stay inside the
/// neighborhood interpolation already smooths over.
pub fn key_noise_std(r_max: u32) -> f64 {
    1.0 / (4.0 * r_max as f64)
}

/// Distribution of the additive key perturbation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum JitterDist {
    /// Gaussian, used during training.
    Normal { std: f64 },
    /// Uniform in [-amplitude, +amplitude], used by precision sweeps.
    Uniform { amplitude: f64 },
}

impl JitterDist {
    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match *self {
            JitterDist::Normal { std } => {
                let z: f64 = rng.sample(StandardNormal);
                z * std
            }
            JitterDist::Uniform { amplitude } => (rng.random::<f64>() * 2.0 - 1.0) * amplitude,
        }
    }
}

/// Seeded key perturbation plan. Every (cell, group) derives its own rng
/// stream from the master seed, so results do not depend on the order cells
/// are processed in.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeyJitter {
    pub seed: u64,
    pub dist: JitterDist,
}

impl KeyJitter {
    pub fn normal_for(seed: u64, r_max: u32) -> Self {
        KeyJitter { seed, dist: JitterDist::Normal { std: key_noise_std(r_max) } }
    }

    /// Independent rng stream for one (cell, group).
    pub fn cell_rng(&self, i: usize, j: usize, grid_w: usize, group: usize, n_groups: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream((((i * grid_w + j) * n_groups + group) as u64).wrapping_add(1));
        rng
    }
}

/// Squash raw encoder outputs into [0,1] with the logistic function.
pub fn normalize_keys<S: Scalar>(raw: &[S], h: usize, w: usize, c: usize) -> Result<KeyCodeGrid<S>> {
    if raw.len() != h * w * c || h == 0 || w == 0 || c == 0 {
        return Err(Error::Shape(format!(
            "normalize_keys: raw len {} does not match {}x{}x{}",
            raw.len(),
            h,
            w,
            c
        )));
    }
    Ok(KeyCodeGrid { h, w, c, data: raw.iter().map(|&v| sigmoid_one(v)).collect() })
}

/// Replicate a key grid to (h, w): each source cell covers an
/// (h / keys.h) x (w / keys.w) block. Both ratios must be integral.
pub fn tile_interleave<S: Scalar>(keys: &KeyCodeGrid<S>, h: usize, w: usize) -> Result<TiledKeyGrid<S>> {
    if keys.h == 0 || keys.w == 0 || h % keys.h != 0 || w % keys.w != 0 {
        return Err(Error::Shape(format!(
            "tile_interleave: cannot tile {}x{} onto {}x{}",
            keys.h, keys.w, h, w
        )));
    }
    let (fh, fw) = (h / keys.h, w / keys.w);
    let mut data = Vec::with_capacity(h * w * keys.c);
    for i in 0..h {
        for j in 0..w {
            let src = ((i / fh) * keys.w + j / fw) * keys.c;
            data.extend_from_slice(&keys.data[src..src + keys.c]);
        }
    }
    Ok(TiledKeyGrid { h, w, c: keys.c, data })
}

/// One query and the post-perturbation clamp state of its key components.
/// A clamped component sits exactly on the domain boundary and passes no
/// gradient back to the key code.
#[derive(Debug, Clone)]
pub struct QuerySample<S> {
    pub q: Vec<S>,
    pub clamped: Vec<bool>,
}

/// Build the query for cell (i, j) and one group: the group's key slice with
/// optional additive jitter (clamped back to [0,1]), then the cell-center
/// coordinates x = (i + 0.5)/h, y = (j + 0.5)/w.
pub fn make_query<S: Scalar, R: Rng>(
    tiled: &TiledKeyGrid<S>,
    i: usize,
    j: usize,
    group: usize,
    key_len: usize,
    mut noise: Option<(&mut R, JitterDist)>,
) -> Result<QuerySample<S>> {
    if i >= tiled.h || j >= tiled.w {
        return Err(Error::IndexOutOfRange(format!(
            "make_query: cell ({i}, {j}) outside {}x{}",
            tiled.h, tiled.w
        )));
    }
    if (group + 1) * key_len > tiled.c {
        return Err(Error::IndexOutOfRange(format!(
            "make_query: group {group} slice exceeds {} channels",
            tiled.c
        )));
    }
    let slice = &tiled.at(i, j)[group * key_len..(group + 1) * key_len];
    let mut q = Vec::with_capacity(key_len + 2);
    let mut clamped = vec![false; key_len];
    for (d, &k) in slice.iter().enumerate() {
        let v = match noise.as_mut() {
            Some((rng, dist)) => {
                let perturbed = k + S::from_f64(dist.sample(rng));
                let v = perturbed.max(S::zero()).min(S::one());
                clamped[d] = v != perturbed;
                v
            }
            None => k,
        };
        q.push(v);
    }
    q.push(S::from_f64((i as f64 + 0.5) / tiled.h as f64));
    q.push(S::from_f64((j as f64 + 0.5) / tiled.w as f64));
    Ok(QuerySample { q, clamped })
}

/// Encode every cell of the tiled grid through every group and lay the
/// results out as an (h, w, n_groups * out_dim) block. Deterministic for a
/// fixed jitter plan regardless of evaluation order.
pub fn assemble_feature_block<S: Scalar>(
    tiled: &TiledKeyGrid<S>,
    groups: &[HashTableGroup<S>],
    jitter: Option<&KeyJitter>,
) -> Result<FeatureBlock<S>> {
    let first = groups
        .first()
        .ok_or_else(|| Error::Config("assemble_feature_block: no groups".into()))?;
    let cfg = &first.cfg;
    if groups.len() != cfg.n_groups || groups.iter().any(|g| g.cfg != *cfg) {
        return Err(Error::Config(
            "assemble_feature_block: groups disagree with their shared config".into(),
        ));
    }
    if tiled.c != cfg.n_groups * cfg.key_len {
        return Err(Error::Shape(format!(
            "assemble_feature_block: tiled grid has {} channels, config needs {}",
            tiled.c,
            cfg.n_groups * cfg.key_len
        )));
    }
    let out_c = cfg.n_groups * cfg.out_dim;
    let mut data = vec![S::zero(); tiled.h * tiled.w * out_c];
    for i in 0..tiled.h {
        for j in 0..tiled.w {
            for (g, group) in groups.iter().enumerate() {
                let sample = match jitter {
                    Some(plan) => {
                        let mut rng = plan.cell_rng(i, j, tiled.w, g, cfg.n_groups);
                        make_query(tiled, i, j, g, cfg.key_len, Some((&mut rng, plan.dist)))?
                    }
                    None => {
                        make_query::<S, ChaCha8Rng>(tiled, i, j, g, cfg.key_len, None)?
                    }
                };
                let feat = encode_feature(group, &sample.q)?;
                let base = (i * tiled.w + j) * out_c + g * cfg.out_dim;
                data[base..base + cfg.out_dim].copy_from_slice(&feat);
            }
        }
    }
    Ok(FeatureBlock { h: tiled.h, w: tiled.w, c: out_c, data })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_group, GridConfig};
    use crate::testutil::seeded;
    use rand::Rng;

    fn grid_cfg() -> GridConfig {
        GridConfig {
            n_groups: 2,
            key_len: 1,
            n_resolutions: 2,
            r_min: 2,
            r_max: 4,
            max_entries: 1 << 10,
            entry_dim: 2,
            out_dim: 3,
            hidden_dim: 8,
        }
    }

    #[test]
    fn normalize_keys_is_the_elementwise_logistic() {
        let grid = normalize_keys(&[-2.0f64, 0.0, 3.5, -0.1], 2, 2, 1).unwrap();
        assert!(grid.data.iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!((grid.data[1] - 0.5).abs() < 1e-15);
        assert!((grid.data[0] - 1.0 / (1.0 + 2.0f64.exp())).abs() < 1e-15);
        assert!(normalize_keys(&[0.0f64; 3], 2, 2, 1).is_err());
    }

    #[test]
    fn tiling_replicates_blocks_and_preserves_the_multiset() {
        let mut rng = seeded(2);
        let keys = KeyCodeGrid {
            h: 4,
            w: 4,
            c: 2,
            data: (0..32).map(|_| rng.random::<f32>()).collect(),
        };
        let tiled = tile_interleave(&keys, 8, 8).unwrap();
        assert_eq!((tiled.h, tiled.w, tiled.c), (8, 8, 2));
        for i in 0..8 {
            for j in 0..8 {
                let src = ((i / 2) * 4 + j / 2) * 2;
                assert_eq!(tiled.at(i, j), &keys.data[src..src + 2]);
            }
        }
        // Every source value appears exactly (8*8)/(4*4) = 4 times.
        let mut src_bits: Vec<u32> = keys.data.iter().map(|v| v.to_bits()).collect();
        let mut dst_bits: Vec<u32> = tiled.data.iter().map(|v| v.to_bits()).collect();
        src_bits.sort_unstable();
        dst_bits.sort_unstable();
        let expanded: Vec<u32> = src_bits.iter().flat_map(|&b| [b; 4]).collect();
        let mut expanded = expanded;
        expanded.sort_unstable();
        assert_eq!(dst_bits, expanded);
    }

    #[test]
    fn tiling_rejects_non_integral_ratios() {
        let keys = KeyCodeGrid { h: 3, w: 3, c: 1, data: vec![0.0f32; 9] };
        assert!(tile_interleave(&keys, 8, 8).is_err());
        assert!(tile_interleave(&keys, 6, 7).is_err());
        assert!(tile_interleave(&keys, 6, 6).is_ok());
    }

    #[test]
    fn queries_combine_key_slice_and_cell_centers() {
        let tiled = TiledKeyGrid {
            h: 4,
            w: 8,
            c: 2,
            data: (0..64).map(|v| v as f64 / 64.0).collect(),
        };
        let s = make_query::<f64, ChaCha8Rng>(&tiled, 0, 0, 0, 1, None).unwrap();
        assert_eq!(s.q, vec![0.0, 0.5 / 4.0, 0.5 / 8.0]);
        assert_eq!(s.clamped, vec![false]);
        let s = make_query::<f64, ChaCha8Rng>(&tiled, 3, 7, 1, 1, None).unwrap();
        // Channel 1 of cell (3,7): ((3*8+7)*2+1)/64.
        assert_eq!(s.q, vec![63.0 / 64.0, 3.5 / 4.0, 7.5 / 8.0]);
        assert!(make_query::<f64, ChaCha8Rng>(&tiled, 4, 0, 0, 1, None).is_err());
        assert!(make_query::<f64, ChaCha8Rng>(&tiled, 0, 0, 2, 1, None).is_err());
    }

    #[test]
    fn zero_std_noise_equals_no_noise() {
        let tiled = TiledKeyGrid { h: 2, w: 2, c: 1, data: vec![0.3f64, 0.6, 0.1, 0.9] };
        for i in 0..2 {
            for j in 0..2 {
                let mut rng = seeded(7);
                let with = make_query(&tiled, i, j, 0, 1, Some((&mut rng, JitterDist::Normal { std: 0.0 })))
                    .unwrap();
                let without = make_query::<f64, ChaCha8Rng>(&tiled, i, j, 0, 1, None).unwrap();
                assert_eq!(with.q, without.q);
            }
        }
    }

    #[test]
    fn noise_hits_only_keys_and_clamps_into_the_domain() {
        let tiled = TiledKeyGrid { h: 2, w: 2, c: 1, data: vec![0.02f64, 0.98, 0.5, 0.5] };
        let dist = JitterDist::Normal { std: 0.25 };
        let mut clamp_seen = false;
        for trial in 0..200 {
            let mut rng = seeded(trial);
            let s = make_query(&tiled, 0, 0, 0, 1, Some((&mut rng, dist))).unwrap();
            assert!((0.0..=1.0).contains(&s.q[0]));
            assert_eq!(s.q[1], 0.25);
            assert_eq!(s.q[2], 0.25);
            clamp_seen |= s.clamped[0];
        }
        assert!(clamp_seen, "a 0.25-sigma jitter on a key at 0.02 must clamp sometimes");
    }

    #[test]
    fn training_noise_std_matches_its_definition_empirically() {
        // std = 1 / (4 * 16) = 1/64 for the desk-scale finest resolution.
        let dist = JitterDist::Normal { std: key_noise_std(16) };
        let mut rng = seeded(123);
        let n = 20_000;
        let samples: Vec<f64> = (0..n).map(|_| dist.sample(&mut rng)).collect();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (n - 1) as f64;
        let std = var.sqrt();
        assert!((std - 1.0 / 64.0).abs() / (1.0 / 64.0) < 0.05, "empirical std {std}");
        assert!(mean.abs() < 3.0 * std / (n as f64).sqrt() * 4.0);
    }

    #[test]
    fn uniform_jitter_stays_inside_its_amplitude() {
        let dist = JitterDist::Uniform { amplitude: 0.03 };
        let mut rng = seeded(5);
        for _ in 0..1000 {
            let v = dist.sample(&mut rng);
            assert!(v.abs() <= 0.03);
        }
    }

    #[test]
    fn assembled_block_matches_per_cell_encoding() {
        let cfg = grid_cfg();
        let groups: Vec<_> = (0..2).map(|g| build_group::<f64>(&cfg, 50 + g).unwrap()).collect();
        let mut rng = seeded(9);
        let keys = KeyCodeGrid { h: 2, w: 2, c: 2, data: (0..8).map(|_| rng.random()).collect() };
        let tiled = tile_interleave(&keys, 4, 4).unwrap();
        let jitter = KeyJitter::normal_for(77, cfg.r_max);
        let block = assemble_feature_block(&tiled, &groups, Some(&jitter)).unwrap();
        assert_eq!((block.h, block.w, block.c), (4, 4, 6));

        // Any single cell recomputed with its own derived stream must agree,
        // which is what makes the assembly order-independent.
        for (i, j, g) in [(0usize, 0usize, 0usize), (3, 2, 1), (1, 3, 0)] {
            let mut rng = jitter.cell_rng(i, j, tiled.w, g, cfg.n_groups);
            let s = make_query(&tiled, i, j, g, cfg.key_len, Some((&mut rng, jitter.dist))).unwrap();
            let feat = crate::grid::encode_feature(&groups[g], &s.q).unwrap();
            let base = (i * 4 + j) * 6 + g * 3;
            assert_eq!(&block.data[base..base + 3], feat.as_slice());
        }

        // And the whole block is reproducible.
        let again = assemble_feature_block(&tiled, &groups, Some(&jitter)).unwrap();
        assert_eq!(block, again);
    }

    #[test]
    fn assembly_rejects_mismatched_shapes() {
        let cfg = grid_cfg();
        let groups: Vec<_> = (0..2).map(|g| build_group::<f32>(&cfg, g as u64).unwrap()).collect();
        let tiled = TiledKeyGrid { h: 2, w: 2, c: 3, data: vec![0.5f32; 12] };
        assert!(assemble_feature_block(&tiled, &groups, None).is_err());
        assert!(assemble_feature_block::<f32>(&TiledKeyGrid { h: 2, w: 2, c: 2, data: vec![0.5; 8] }, &[], None).is_err());
    }
}
