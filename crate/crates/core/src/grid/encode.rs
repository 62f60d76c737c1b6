use super::{cell_coords, hash_index, HashTableGroup};
use crate::error::{Error, Result};
use crate::nn::{relu, relu_backward};
use crate::scalar::Scalar;

/// Concatenated per-level interpolation results for one query.
#[derive(Debug, Clone)]
pub struct Retrieval<S> {
    /// n_resolutions * entry_dim values, level-major.
    pub concat: Vec<S>,
    entry_dim: usize,
}

impl<S: Scalar> Retrieval<S> {
    pub fn level(&self, l: usize) -> &[S] {
        &self.concat[l * self.entry_dim..(l + 1) * self.entry_dim]
    }
}

/// Multilinearly interpolate every level of a group at `query` and
/// concatenate the per-level feature vectors.
pub fn retrieve<S: Scalar>(group: &HashTableGroup<S>, query: &[S]) -> Result<Retrieval<S>> {
    let cfg = &group.cfg;
    let dims = cfg.query_dim();
    let m = cfg.corner_count();
    let mut concat = vec![S::zero(); cfg.n_resolutions * cfg.entry_dim];
    for (l, level) in group.levels.iter().enumerate() {
        let cc = cell_coords(level.resolution, dims, query)?;
        let out = &mut concat[l * cfg.entry_dim..(l + 1) * cfg.entry_dim];
        for k in 0..m {
            let w = cc.corner_weight(k);
            if w == S::zero() {
                continue;
            }
            let coords = cc.corner_coords(k);
            let idx = hash_index(level.resolution, dims, cfg.max_entries, &coords[..dims])?;
            let entry = level.entry(idx, cfg.entry_dim);
            for (o, &e) in out.iter_mut().zip(entry) {
                *o += w * e;
            }
        }
    }
    Ok(Retrieval { concat, entry_dim: cfg.entry_dim })
}

/// Group output for one query: the retrieval pushed through the group MLP
/// (hidden ReLU layer, then a linear map to out_dim values).
pub fn encode_feature<S: Scalar>(group: &HashTableGroup<S>, query: &[S]) -> Result<Vec<S>> {
    let ret = retrieve(group, query)?;
    let hidden = relu(&group.mlp_hidden.forward(&ret.concat)?);
    group.mlp_out.forward(&hidden)
}

/// Gradients of a scalar objective with respect to everything one query
/// touched: table entries (sparse), the group MLP, and the key components of
/// the query itself. Spatial components and noise get no gradient.
#[derive(Debug, Clone)]
pub struct GradientBundle<S> {
    /// Per level: (table slot, d entry) pairs, each slot listed once.
    pub table: Vec<Vec<(usize, Vec<S>)>>,
    pub mlp_hidden_w: Vec<S>,
    pub mlp_hidden_b: Vec<S>,
    pub mlp_out_w: Vec<S>,
    pub mlp_out_b: Vec<S>,
    /// d objective / d query[0..key_len].
    pub key_grad: Vec<S>,
}

/// Hand-derived backward pass for [`encode_feature`].
///
/// Recomputes the forward intermediates for `query`, then walks the chain in
/// reverse: output layer, ReLU, hidden layer, and finally the multilinear
/// interpolation. Key gradients use the analytic derivative of the
/// interpolation weights times the level resolution; a component clamped at
/// the domain boundary contributes zero (the clamp is flat there).
pub fn backward<S: Scalar>(
    group: &HashTableGroup<S>,
    query: &[S],
    upstream: &[S],
) -> Result<GradientBundle<S>> {
    let cfg = &group.cfg;
    if upstream.len() != cfg.out_dim {
        return Err(Error::Shape(format!(
            "backward: upstream len {} expected {}",
            upstream.len(),
            cfg.out_dim
        )));
    }
    let dims = cfg.query_dim();
    let m = cfg.corner_count();

    let ret = retrieve(group, query)?;
    let hidden_pre = group.mlp_hidden.forward(&ret.concat)?;
    let hidden_post = relu(&hidden_pre);

    let out_grads = group.mlp_out.backward(&hidden_post, upstream)?;
    let d_hidden_pre = relu_backward(&hidden_pre, &out_grads.dx);
    let hidden_grads = group.mlp_hidden.backward(&ret.concat, &d_hidden_pre)?;
    let d_concat = hidden_grads.dx;

    let mut table: Vec<Vec<(usize, Vec<S>)>> = Vec::with_capacity(cfg.n_resolutions);
    let mut key_grad = vec![S::zero(); cfg.key_len];
    for (l, level) in group.levels.iter().enumerate() {
        let cc = cell_coords(level.resolution, dims, query)?;
        let d_level = &d_concat[l * cfg.entry_dim..(l + 1) * cfg.entry_dim];
        let r = S::from_f64(level.resolution as f64);
        // Hashed levels can map several corners of one cell to the same slot;
        // gradients for a slot accumulate. M is at most 16, linear scan is fine.
        let mut sparse: Vec<(usize, Vec<S>)> = Vec::with_capacity(m);
        for k in 0..m {
            let coords = cc.corner_coords(k);
            let idx = hash_index(level.resolution, dims, cfg.max_entries, &coords[..dims])?;
            let w = cc.corner_weight(k);
            match sparse.iter_mut().find(|(slot, _)| *slot == idx) {
                Some((_, acc)) => {
                    for (a, &g) in acc.iter_mut().zip(d_level) {
                        *a += w * g;
                    }
                }
                None => {
                    sparse.push((idx, d_level.iter().map(|&g| w * g).collect()));
                }
            }
            // dL/dt_d sums sign * (product of other weight factors) * <d_level, entry>.
            let entry = level.entry(idx, cfg.entry_dim);
            let mut dot = S::zero();
            for (&g, &e) in d_level.iter().zip(entry) {
                dot += g * e;
            }
            if dot != S::zero() {
                for d in 0..cfg.key_len {
                    if cc.clamped[d] {
                        continue;
                    }
                    key_grad[d] += cc.corner_weight_dt(k, d) * dot * r;
                }
            }
        }
        table.push(sparse);
    }

    Ok(GradientBundle {
        table,
        mlp_hidden_w: hidden_grads.dw,
        mlp_hidden_b: hidden_grads.db,
        mlp_out_w: out_grads.dw,
        mlp_out_b: out_grads.db,
        key_grad,
    })
}
