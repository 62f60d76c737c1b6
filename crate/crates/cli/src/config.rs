//! Flat key=value config files. Every key is optional except `seed` — runs
//! must be reproducible, so there is no entropy-based default — and unknown
//! keys are rejected outright rather than silently ignored.

use std::collections::BTreeMap;

use keygrid::trainer::TrainConfig;
use keygrid::{Error, Result};

/// Parse `text` into a full training config, starting from the reference
/// defaults. `label` names the source (usually the file path) in errors.
pub fn parse_train_config(text: &str, label: &str) -> Result<TrainConfig> {
    let mut map: BTreeMap<String, (usize, String)> = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("{label}:{}: expected key=value, got {line:?}", idx + 1))
        })?;
        let key = k.trim().to_string();
        let val = v.trim().to_string();
        if let Some((first, _)) = map.insert(key.clone(), (idx + 1, val)) {
            return Err(Error::Config(format!(
                "{label}:{}: duplicate key {key:?} (first set on line {first})"
            , idx + 1)));
        }
    }
    if !map.contains_key("seed") {
        return Err(Error::Config(format!("{label}: config must set seed explicitly")));
    }

    let mut cfg = TrainConfig::desk_default();
    for (key, (line, val)) in &map {
        let bad = |what: &str| {
            Error::Config(format!("{label}:{line}: {key} expects {what}, got {val:?}"))
        };
        let as_usize = || val.parse::<usize>().map_err(|_| bad("an unsigned integer"));
        let as_u32 = || val.parse::<u32>().map_err(|_| bad("an unsigned integer"));
        let as_u64 = || val.parse::<u64>().map_err(|_| bad("an unsigned integer"));
        let as_f64 = || val.parse::<f64>().map_err(|_| bad("a number"));
        let as_bool = || match val.as_str() {
            "true" | "1" => Ok(true),
            "false" | "0" => Ok(false),
            _ => Err(bad("true/false")),
        };
        match key.as_str() {
            "img_h" => cfg.img_h = as_usize()?,
            "img_w" => cfg.img_w = as_usize()?,
            "img_c" => cfg.img_c = as_usize()?,
            "n_groups" => cfg.grid.n_groups = as_usize()?,
            "key_len" => cfg.grid.key_len = as_usize()?,
            "n_resolutions" => cfg.grid.n_resolutions = as_usize()?,
            "r_min" => cfg.grid.r_min = as_u32()?,
            "r_max" => cfg.grid.r_max = as_u32()?,
            "max_entries" => cfg.grid.max_entries = as_usize()?,
            "entry_dim" => cfg.grid.entry_dim = as_usize()?,
            "out_dim" => cfg.grid.out_dim = as_usize()?,
            "hidden_dim" => cfg.grid.hidden_dim = as_usize()?,
            "key_h" => cfg.key_h = as_usize()?,
            "key_w" => cfg.key_w = as_usize()?,
            "block_h" => cfg.block_h = as_usize()?,
            "block_w" => cfg.block_w = as_usize()?,
            "enc_hidden" => cfg.enc_hidden = as_usize()?,
            "dec_hidden" => cfg.dec_hidden = as_usize()?,
            "steps" => cfg.steps = as_usize()?,
            "batch" => cfg.batch = as_usize()?,
            "seed" => cfg.seed = as_u64()?,
            "noise" => cfg.noise = as_bool()?,
            "lr_encoder" => cfg.lr_encoder = as_f64()?,
            "lr_decoder" => cfg.lr_decoder = as_f64()?,
            "lr_tables" => cfg.lr_tables = as_f64()?,
            "lr_mlps" => cfg.lr_mlps = as_f64()?,
            "loss_weight" => cfg.loss_weight = as_f64()?,
            _ => return Err(Error::Config(format!("{label}:{line}: unknown key {key:?}"))),
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

/// The resolved config as ordered key=value pairs — the exact inverse of
/// [`parse_train_config`], used for manifests.
pub fn config_pairs(cfg: &TrainConfig) -> Vec<(&'static str, String)> {
    vec![
        ("img_h", cfg.img_h.to_string()),
        ("img_w", cfg.img_w.to_string()),
        ("img_c", cfg.img_c.to_string()),
        ("n_groups", cfg.grid.n_groups.to_string()),
        ("key_len", cfg.grid.key_len.to_string()),
        ("n_resolutions", cfg.grid.n_resolutions.to_string()),
        ("r_min", cfg.grid.r_min.to_string()),
        ("r_max", cfg.grid.r_max.to_string()),
        ("max_entries", cfg.grid.max_entries.to_string()),
        ("entry_dim", cfg.grid.entry_dim.to_string()),
        ("out_dim", cfg.grid.out_dim.to_string()),
        ("hidden_dim", cfg.grid.hidden_dim.to_string()),
        ("key_h", cfg.key_h.to_string()),
        ("key_w", cfg.key_w.to_string()),
        ("block_h", cfg.block_h.to_string()),
        ("block_w", cfg.block_w.to_string()),
        ("enc_hidden", cfg.enc_hidden.to_string()),
        ("dec_hidden", cfg.dec_hidden.to_string()),
        ("steps", cfg.steps.to_string()),
        ("batch", cfg.batch.to_string()),
        ("seed", cfg.seed.to_string()),
        ("noise", cfg.noise.to_string()),
        ("lr_encoder", format!("{:e}", cfg.lr_encoder)),
        ("lr_decoder", format!("{:e}", cfg.lr_decoder)),
        ("lr_tables", format!("{:e}", cfg.lr_tables)),
        ("lr_mlps", format!("{:e}", cfg.lr_mlps)),
        ("loss_weight", format!("{:e}", cfg.loss_weight)),
    ]
}
