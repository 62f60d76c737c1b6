//! End-to-end gradient verification: the analytic backward pass of the full
//! autoencoder chain against central finite differences. Probes are taken
//! in 64-bit precision regardless of the model's working precision, because
//! f32 values embed exactly into f64 while a pure-f32 difference quotient
//! drowns in rounding noise.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::GridConfig;
use crate::img::ImageBuf;
use crate::keys::make_query;
use crate::keys::tile_interleave;
use crate::scalar::{mix_seed, Scalar};

use super::model::{Model, ParamGroup, PARAM_GROUPS};
use super::synthetic::synthetic_dataset;
use super::TrainConfig;

/// A config small enough that a few hundred double-sided loss evaluations
/// finish instantly, but still covering every code path: two groups, a
/// direct and a hashed level, strided encoder, upsampling decoder.
pub fn tiny_config() -> TrainConfig {
    TrainConfig {
        img_h: 8,
        img_w: 8,
        img_c: 3,
        grid: GridConfig {
            n_groups: 2,
            key_len: 1,
            n_resolutions: 2,
            r_min: 2,
            r_max: 4,
            // 5^3 = 125 vertices at the top level overflow 64 slots, so the
            // fine level exercises hashed addressing.
            max_entries: 1 << 6,
            entry_dim: 2,
            out_dim: 4,
            hidden_dim: 8,
        },
        key_h: 2,
        key_w: 2,
        block_h: 4,
        block_w: 4,
        enc_hidden: 4,
        dec_hidden: 8,
        steps: 1,
        batch: 1,
        seed: 11,
        noise: false,
        lr_encoder: 2e-3,
        lr_decoder: 2e-3,
        lr_tables: 2e-3,
        lr_mlps: 2e-3,
        loss_weight: 20.0,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeResult {
    pub group: ParamGroup,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub probes: Vec<ProbeResult>,
    pub max_rel_err: f64,
    pub tol: f64,
    pub passed: bool,
    /// Probes redrawn because their difference interval bracketed an
    /// activation kink (see `central_diff`).
    pub resampled: usize,
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{} probes, max rel err {:.3e} (tol {:.1e}): {}",
            self.probes.len(),
            self.max_rel_err,
            self.tol,
            if self.passed { "pass" } else { "FAIL" }
        )?;
        if self.resampled > 0 {
            writeln!(f, "  ({} probes redrawn off kinks)", self.resampled)?;
        }
        for p in self.probes.iter().filter(|p| p.rel_err > self.tol) {
            writeln!(
                f,
                "  {:?}[{}]: analytic {:.6e} vs numeric {:.6e} (rel err {:.3e})",
                p.group, p.index, p.analytic, p.numeric, p.rel_err
            )?;
        }
        Ok(())
    }
}

fn loss_only(model: &Model<f64>, img: &ImageBuf) -> Result<f64> {
    Ok(model.sample_pass(img, None)?.loss)
}

/// Move every parameter to a generic point in parameter space. At the real
/// initialization the tables are within 1e-4 of zero, which makes the
/// encoder's influence on the loss of order 1e-8 — correct, but beneath
/// what a double-precision difference quotient can resolve. A uniform
/// offset gives every chain a measurable gradient (and keeps conv biases
/// away from the ReLU kink at exactly zero).
fn warm<S: Scalar>(model: &mut Model<S>, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x3A12));
    for g in PARAM_GROUPS {
        let mut flat = model.collect_group(g);
        for v in &mut flat {
            *v += S::from_f64(0.6 * rng.random::<f64>() - 0.3);
        }
        model.set_group(g, &flat).expect("layout round-trips");
    }
}

/// Relative error with a floor on the denominator: |a−n| / max(|a|+|n|, floor).
/// Below the floor the bound acts as an absolute tolerance, which is where a
/// difference quotient belongs anyway: its rounding noise is ~ε/h no matter
/// how small the true gradient is.
fn rel_err(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / (a.abs() + n.abs()).max(floor)
}

/// Central difference of the loss along one parameter coordinate, at step
/// `h` and at `h/2`. The half-step quotient exists only to flag kinks: away
/// from every ReLU sign change and interpolation cell boundary the two
/// agree to O(h²), while a bracketed kink holds them a finite slope-gap
/// apart. Restores the parameter afterwards.
fn central_diff(
    m: &mut Model<f64>,
    img: &ImageBuf,
    g: ParamGroup,
    index: usize,
    h: f64,
) -> Result<(f64, f64)> {
    let mut flat = m.collect_group(g);
    let theta = flat[index];
    let at = |m: &mut Model<f64>, flat: &mut Vec<f64>, x: f64| -> Result<f64> {
        flat[index] = x;
        m.set_group(g, flat)?;
        loss_only(m, img)
    };
    let up = at(m, &mut flat, theta + h)?;
    let down = at(m, &mut flat, theta - h)?;
    let up_half = at(m, &mut flat, theta + 0.5 * h)?;
    let down_half = at(m, &mut flat, theta - 0.5 * h)?;
    flat[index] = theta;
    m.set_group(g, &flat)?;
    Ok(((up - down) / (2.0 * h), (up_half - down_half) / h))
}

/// A kink between the evaluation points makes both quotients measure slope
/// averages rather than the derivative, and they disagree by a slope-gap
/// term that dwarfs the O(h²) agreement of the smooth case. (A gap small
/// enough to slip under this threshold also biases the quotient by less
/// than the threshold itself, so it cannot produce a spurious failure.)
fn brackets_kink(fd: f64, fd_half: f64) -> bool {
    (fd - fd_half).abs() > 1e-8 + 1e-4 * (fd.abs() + fd_half.abs())
}

/// Probe fixed (group, index) pairs of `model` against central differences
/// of step `h` on `img`, in f64. No kink handling: callers own their fixtures.
#[cfg(test)]
fn run_probes(
    model: &Model<f64>,
    img: &ImageBuf,
    probes: &[(ParamGroup, usize)],
    h: f64,
    floor: f64,
    analytic: &super::GradAccum<f64>,
) -> Result<Vec<ProbeResult>> {
    let mut m = model.clone();
    let mut out = Vec::with_capacity(probes.len());
    for &(g, index) in probes {
        let (numeric, _) = central_diff(&mut m, img, g, index, h)?;
        let a = analytic.by_group(g)[index];
        out.push(ProbeResult { group: g, index, analytic: a, numeric, rel_err: rel_err(a, numeric, floor) });
    }
    Ok(out)
}

/// Compare the analytic gradient of every parameter group against 64-bit
/// central differences on one synthetic image.
///
/// The analytic side runs in the model's working precision `S`; the
/// difference quotient always runs on the exact f64 embedding of the same
/// model. Probes cycle through the four parameter groups with uniformly
/// random indices; a probe whose difference interval brackets a ReLU or
/// cell-boundary kink is redrawn within its group (deterministically),
/// because a quotient across a kink measures the average of two slopes, not
/// the derivative the analytic side computes. Noise is disabled so both
/// sides see the same deterministic chain. The relative-error denominator
/// is floored at 1, making `tol` an absolute bound wherever the gradient
/// itself is below unit scale.
pub fn end_to_end_gradient_check<S: Scalar>(
    cfg: &TrainConfig,
    n_probes: usize,
    h: f64,
    tol: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    if n_probes == 0 || h <= 0.0 || tol <= 0.0 {
        return Err(Error::Config("gradient check needs positive probes, h, tol".into()));
    }
    let mut model: Model<S> = Model::new_seeded(cfg)?;
    warm(&mut model, seed);
    let img = synthetic_dataset(1, cfg.img_h, cfg.img_w, cfg.img_c, mix_seed(seed, 0x16E))
        .pop()
        .unwrap();
    let analytic_s = model.sample_pass(&img, None)?.grads;
    // Lossless promotion of both the model and its analytic gradients.
    let mut model64 = model.convert::<f64>();
    let analytic = super::GradAccum {
        encoder: analytic_s.encoder.iter().map(|&v| v.to_f64()).collect(),
        decoder: analytic_s.decoder.iter().map(|&v| v.to_f64()).collect(),
        tables: analytic_s.tables.iter().map(|&v| v.to_f64()).collect(),
        mlps: analytic_s.mlps.iter().map(|&v| v.to_f64()).collect(),
    };

    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x9806E5));
    let mut results = Vec::with_capacity(n_probes);
    let mut resampled = 0;
    for p in 0..n_probes {
        let g = PARAM_GROUPS[p % PARAM_GROUPS.len()];
        let mut attempts = 0;
        loop {
            let index = rng.random_range(0..model64.group_len(g));
            let (numeric, numeric_half) = central_diff(&mut model64, &img, g, index, h)?;
            if !brackets_kink(numeric, numeric_half) {
                let a = analytic.by_group(g)[index];
                results.push(ProbeResult {
                    group: g,
                    index,
                    analytic: a,
                    numeric,
                    rel_err: rel_err(a, numeric, 1.0),
                });
                break;
            }
            resampled += 1;
            attempts += 1;
            if attempts >= 64 {
                return Err(Error::Data(format!(
                    "gradient check: 64 consecutive {g:?} probes all bracket kinks"
                )));
            }
        }
    }
    let max_rel_err = results.iter().map(|p| p.rel_err).fold(0.0, f64::max);
    Ok(GradCheckReport { probes: results, max_rel_err, tol, passed: max_rel_err <= tol, resampled })
}

/// Find a table slot the fixture image never touches and probe it: both the
/// analytic and the numeric gradient must vanish, because a slot outside
/// every queried cell has no path to the loss.
pub fn zero_influence_probe(cfg: &TrainConfig, seed: u64) -> Result<(f64, f64)> {
    let mut model: Model<f64> = Model::new_seeded(cfg)?;
    warm(&mut model, seed);
    let img = synthetic_dataset(1, cfg.img_h, cfg.img_w, cfg.img_c, mix_seed(seed, 0x16E))
        .pop()
        .unwrap();

    // Noise-free query stream of this image, counted per group.
    let keys = model.keys(&img)?;
    let tiled = tile_interleave(&keys, cfg.block_h, cfg.block_w)?;
    let mut target = None;
    'search: for (g, group) in model.groups.iter().enumerate() {
        let mut queries = Vec::new();
        for i in 0..cfg.block_h {
            for j in 0..cfg.block_w {
                queries.push(make_query::<f64, ChaCha8Rng>(&tiled, i, j, g, cfg.grid.key_len, None)?.q);
            }
        }
        let stats = crate::analysis::collect_hits(group, queries.iter().map(|q| q.as_slice()))?;
        for (l, counts) in stats.levels.iter().enumerate() {
            if let Some(slot) = counts.iter().position(|&c| c == 0) {
                target = Some((g, l, slot));
                break 'search;
            }
        }
    }
    let (g, l, slot) = target
        .ok_or_else(|| Error::Data("zero_influence_probe: every slot was hit".into()))?;

    // Flat index of that slot's first component in the Tables layout.
    let mut index = 0;
    for (gi, group) in model.groups.iter().enumerate() {
        for (li, level) in group.levels.iter().enumerate() {
            if (gi, li) == (g, l) {
                index += slot * cfg.grid.entry_dim;
                let analytic = model.sample_pass(&img, None)?.grads.tables[index];
                let mut m = model.clone();
                let h = 1e-4;
                let mut flat = m.collect_group(ParamGroup::Tables);
                let theta = flat[index];
                flat[index] = theta + h;
                m.set_group(ParamGroup::Tables, &flat)?;
                let up = loss_only(&m, &img)?;
                flat[index] = theta - h;
                m.set_group(ParamGroup::Tables, &flat)?;
                let down = loss_only(&m, &img)?;
                return Ok((analytic, (up - down) / (2.0 * h)));
            }
            index += level.entries.len();
        }
    }
    unreachable!("target was found above");
}
