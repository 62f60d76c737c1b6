use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Per-dimension multipliers for the spatial hash. The first dimension uses
/// 1 so coordinates along it enumerate consecutive table slots, the rest are
/// large primes chosen for good avalanche under XOR folding.
pub const HASH_PRIMES: [u32; 7] =
    [1, 2_654_435_761, 805_459_861, 3_674_653_429, 2_097_192_037, 1_434_869_437, 2_165_219_737];

/// Highest query dimensionality the hash supports (key_len + 2 must fit).
pub const MAX_QUERY_DIM: usize = HASH_PRIMES.len();

/// Queries are scaled by the level resolution and clamped to
/// [0, resolution - BOUNDARY_EPS] so the base cell index stays in range.
pub const BOUNDARY_EPS: f64 = 1e-6;

/// Vertices per axis of a lattice with `resolution` cells per axis is
/// resolution + 1; the level stores min((resolution+1)^dims, cap) entries.
pub fn lattice_entry_count(resolution: u32, dims: usize, cap: usize) -> usize {
    let mut n: u128 = 1;
    for _ in 0..dims {
        n = n.saturating_mul(resolution as u128 + 1);
        if n >= cap as u128 {
            return cap;
        }
    }
    n as usize
}

/// True when every lattice vertex of the level has a dedicated entry.
pub fn is_direct(resolution: u32, dims: usize, cap: usize) -> bool {
    let mut n: u128 = 1;
    for _ in 0..dims {
        n = n.saturating_mul(resolution as u128 + 1);
    }
    n <= cap as u128
}

/// Map an integer lattice vertex to its table slot.
///
/// Direct mode is a bijective row-major layout over (resolution+1)^dims
/// vertices. Hashed mode XORs coordinate-times-prime products in wrapping
/// u32 arithmetic and masks to the (power of two) table size, so distinct
/// vertices may share a slot.
pub fn hash_index(resolution: u32, dims: usize, cap: usize, coords: &[u32]) -> Result<usize> {
    if coords.len() != dims || dims == 0 || dims > MAX_QUERY_DIM {
        return Err(Error::Shape(format!(
            "hash_index: got {} coords for {} dims",
            coords.len(),
            dims
        )));
    }
    if let Some(&bad) = coords.iter().find(|&&c| c > resolution) {
        return Err(Error::IndexOutOfRange(format!(
            "lattice coordinate {bad} exceeds resolution {resolution}"
        )));
    }
    if is_direct(resolution, dims, cap) {
        let side = resolution as usize + 1;
        let mut idx = 0usize;
        for &c in coords {
            idx = idx * side + c as usize;
        }
        Ok(idx)
    } else {
        let mut h: u32 = 0;
        for (d, &c) in coords.iter().enumerate() {
            h ^= c.wrapping_mul(HASH_PRIMES[d]);
        }
        Ok(h as usize & (cap - 1))
    }
}

/// A query's position inside one level's lattice: per-dimension base vertex
/// and fractional offset, with the clamp state needed for one-sided
/// derivatives at the domain boundary.
#[derive(Debug, Clone)]
pub struct CellCoords<S> {
    pub dims: usize,
    pub base: [u32; MAX_QUERY_DIM],
    pub t: [S; MAX_QUERY_DIM],
    /// True where the scaled coordinate was clamped; the derivative of t with
    /// respect to the query is zero there.
    pub clamped: [bool; MAX_QUERY_DIM],
}

impl<S: Scalar> CellCoords<S> {
    /// Multilinear weight of corner `k`, whose bit `d` selects the far vertex
    /// along dimension `d`.
    pub fn corner_weight(&self, k: usize) -> S {
        let mut w = S::one();
        for d in 0..self.dims {
            let td = self.t[d];
            w = w * if (k >> d) & 1 == 1 { td } else { S::one() - td };
        }
        w
    }

    /// Lattice coordinates of corner `k`.
    pub fn corner_coords(&self, k: usize) -> [u32; MAX_QUERY_DIM] {
        let mut c = self.base;
        for d in 0..self.dims {
            c[d] += ((k >> d) & 1) as u32;
        }
        c
    }

    /// Derivative of corner k's weight with respect to t[d] (the product over
    /// the other dimensions, signed by whether the corner is near or far).
    pub fn corner_weight_dt(&self, k: usize, d: usize) -> S {
        let mut w = S::one();
        for e in 0..self.dims {
            if e == d {
                continue;
            }
            let te = self.t[e];
            w = w * if (k >> e) & 1 == 1 { te } else { S::one() - te };
        }
        if (k >> d) & 1 == 1 {
            w
        } else {
            -w
        }
    }
}

/// Scale a query into a level's lattice: p = q * resolution clamped to
/// [0, resolution - 1e-6], base = floor(p), t = p - base.
pub fn cell_coords<S: Scalar>(resolution: u32, dims: usize, query: &[S]) -> Result<CellCoords<S>> {
    if query.len() != dims || dims == 0 || dims > MAX_QUERY_DIM {
        return Err(Error::Shape(format!(
            "cell_coords: got {} query components for {} dims",
            query.len(),
            dims
        )));
    }
    let r = S::from_f64(resolution as f64);
    let hi = S::from_f64(resolution as f64 - BOUNDARY_EPS);
    let mut out = CellCoords {
        dims,
        base: [0; MAX_QUERY_DIM],
        t: [S::zero(); MAX_QUERY_DIM],
        clamped: [false; MAX_QUERY_DIM],
    };
    for (d, &q) in query.iter().enumerate() {
        if !q.is_finite() {
            return Err(Error::NonFinite(format!("query component {d} is {q}")));
        }
        let raw = q * r;
        let p = raw.max(S::zero()).min(hi);
        out.clamped[d] = p != raw;
        // In low precision resolution - 1e-6 can round back up to resolution;
        // the guard keeps the base vertex strictly inside the lattice.
        let mut base = p.floor().to_f64() as i64;
        if base >= resolution as i64 {
            base = resolution as i64 - 1;
        }
        out.base[d] = base as u32;
        out.t[d] = p - S::from_f64(base as f64);
    }
    Ok(out)
}

/// Table slots and multilinear weights of all 2^dims corners around a query.
/// The weights are non-negative and sum to one.
pub fn corner_weights<S: Scalar>(
    resolution: u32,
    dims: usize,
    cap: usize,
    query: &[S],
) -> Result<(Vec<usize>, Vec<S>)> {
    let cc = cell_coords(resolution, dims, query)?;
    let m = 1usize << dims;
    let mut idx = Vec::with_capacity(m);
    let mut wts = Vec::with_capacity(m);
    for k in 0..m {
        let coords = cc.corner_coords(k);
        idx.push(hash_index(resolution, dims, cap, &coords[..dims])?);
        wts.push(cc.corner_weight(k));
    }
    Ok((idx, wts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::seeded;
    use rand::Rng;
    use std::collections::HashSet;

    #[test]
    fn direct_mode_is_a_row_major_bijection() {
        let (r, dims, cap) = (3u32, 3usize, 1 << 12);
        let side = r as usize + 1;
        let mut seen = HashSet::new();
        for a in 0..=r {
            for b in 0..=r {
                for c in 0..=r {
                    let idx = hash_index(r, dims, cap, &[a, b, c]).unwrap();
                    let expect = (a as usize * side + b as usize) * side + c as usize;
                    assert_eq!(idx, expect);
                    assert!(seen.insert(idx));
                }
            }
        }
        assert_eq!(seen.len(), side * side * side);
    }

    #[test]
    fn all_zero_coordinates_hash_to_slot_zero() {
        for (r, cap) in [(4u32, 1usize << 10), (64, 1 << 8)] {
            assert_eq!(hash_index(r, 3, cap, &[0, 0, 0]).unwrap(), 0);
        }
    }

    #[test]
    fn hashed_mode_stays_in_bounds_and_collides_near_the_birthday_estimate() {
        let (r, dims, cap) = (64u32, 3usize, 1usize << 18);
        assert!(!is_direct(r, dims, cap));
        let mut seen = HashSet::new();
        let mut n = 0u64;
        for a in 0..=r {
            for b in 0..=r {
                for c in 0..=r {
                    let idx = hash_index(r, dims, cap, &[a, b, c]).unwrap();
                    assert!(idx < cap);
                    seen.insert(idx);
                    n += 1;
                }
            }
        }
        // Uniform-balls-in-bins estimate of distinct occupied slots:
        // cap * (1 - (1 - 1/cap)^n); collisions = n - occupied.
        let occupied_est = cap as f64 * (1.0 - (1.0 - 1.0 / cap as f64).powf(n as f64));
        let collisions_est = n as f64 - occupied_est;
        let collisions = n as f64 - seen.len() as f64;
        assert!(collisions > collisions_est / 2.0 && collisions < collisions_est * 2.0,
            "collisions {collisions} vs estimate {collisions_est}");
    }

    #[test]
    fn out_of_range_coordinates_and_bad_arity_are_rejected() {
        assert!(hash_index(4, 3, 1 << 10, &[5, 0, 0]).is_err());
        assert!(hash_index(4, 3, 1 << 10, &[0, 0]).is_err());
        assert!(hash_index(4, 0, 1 << 10, &[]).is_err());
    }

    #[test]
    fn entry_count_caps_at_the_table_size() {
        assert_eq!(lattice_entry_count(4, 3, 1 << 12), 125);
        assert_eq!(lattice_entry_count(16, 3, 1 << 12), 4096);
        assert_eq!(lattice_entry_count(64, 3, 1 << 18), 262_144); // 65^3 > 2^18
        assert_eq!(lattice_entry_count(1, 3, 1 << 12), 8);
        assert!(is_direct(15, 3, 1 << 12));
        assert!(!is_direct(16, 3, 1 << 12));
    }

    #[test]
    fn weights_sum_to_one_and_stay_non_negative() {
        let mut rng = seeded(41);
        for _ in 0..200 {
            let q: Vec<f64> = (0..3).map(|_| rng.random::<f64>() * 1.4 - 0.2).collect();
            let (_, w) = corner_weights(5, 3, 1 << 10, &q).unwrap();
            assert_eq!(w.len(), 8);
            assert!(w.iter().all(|&x| (-1e-12..=1.0 + 1e-12).contains(&x)));
            let sum: f64 = w.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn vertex_queries_put_all_weight_on_one_corner() {
        // r = 4 and k/4 are exactly representable, so interior vertices land
        // exactly on the lattice and the weight must be exactly one.
        let r = 4u32;
        for k in 0..r {
            let q = vec![k as f64 / 4.0; 3];
            let (idx, w) = corner_weights(r, 3, 1 << 10, &q).unwrap();
            let heavy: Vec<_> = w.iter().filter(|&&x| x != 0.0).collect();
            assert_eq!(heavy.len(), 1);
            assert_eq!(*heavy[0], 1.0);
            // The weighted corner is the vertex itself.
            let hot = w.iter().position(|&x| x == 1.0).unwrap();
            let expect = hash_index(r, 3, 1 << 10, &[k, k, k]).unwrap();
            assert_eq!(idx[hot], expect);
        }
        // The far domain corner q = 1 clamps to r - 1e-6 by design, so its
        // weight concentrates on the last vertex without reaching 1 exactly.
        let (idx, w) = corner_weights(r, 3, 1 << 10, &vec![1.0f64; 3]).unwrap();
        let hot = w
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert!(w[hot] > 1.0 - 1e-5);
        assert_eq!(idx[hot], hash_index(r, 3, 1 << 10, &[r, r, r]).unwrap());
    }

    #[test]
    fn out_of_domain_queries_clamp_to_the_boundary() {
        let over = cell_coords::<f64>(4, 3, &[1.5, -0.3, 0.5]).unwrap();
        assert_eq!(over.base[0], 3);
        assert!(over.t[0] > 1.0 - 1e-5);
        assert!(over.clamped[0]);
        assert_eq!(over.base[1], 0);
        assert_eq!(over.t[1], 0.0);
        assert!(over.clamped[1]);
        assert!(!over.clamped[2]);
    }

    #[test]
    fn f32_queries_near_one_keep_the_base_vertex_in_range() {
        // At high resolutions (r - 1e-6) rounds to r in f32; the guard must
        // still produce base = r - 1.
        let cc = cell_coords::<f32>(4096, 3, &[1.0, 0.999_999_9, 0.0]).unwrap();
        assert_eq!(cc.base[0], 4095);
        assert!(cc.t[0] <= 1.0);
        let (idx, _) = corner_weights::<f32>(4096, 3, 1 << 12, &[1.0, 1.0, 1.0]).unwrap();
        assert!(idx.iter().all(|&i| i < 1 << 12));
    }

    #[test]
    fn non_finite_queries_are_rejected() {
        assert!(cell_coords::<f32>(4, 3, &[f32::NAN, 0.0, 0.0]).is_err());
        assert!(cell_coords::<f64>(4, 3, &[0.0, f64::INFINITY, 0.0]).is_err());
    }
}
