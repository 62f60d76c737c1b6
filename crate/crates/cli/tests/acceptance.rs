//! Workspace acceptance checks, one test per criterion. Each test asserts
//! its stated tolerances and runtime budget, then prints a single
//! `[acceptance]` line with the measured numbers (visible with --nocapture).
//!
//! The slow criteria share three in-process desk-scale trainings — with
//! noise, without noise, and a determinism rerun — through a `OnceLock`, so
//! the whole suite performs exactly three 2000-step runs.

use std::process::{Command, Output};
use std::sync::OnceLock;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

use keygrid::analysis::{clustered_contrast, f1, usage_report};
use keygrid::grid::{build_group, is_direct, retrieve, GridConfig, HashTableGroup};
use keygrid::img::{mse, psnr, ImageBuf};
use keygrid::snapshot::{read_keycode_file, write_keycode_file};
use keygrid::trainer::{
    collect_training_hits, precision_sweep, reconstruct, synthetic_dataset, train, Checkpoint,
    TrainConfig, TrainOutcome,
};
use keygrid::Real;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_keygrid"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

struct Runs {
    cfg: TrainConfig,
    data: Vec<ImageBuf>,
    noise: TrainOutcome<Real>,
    noise_secs: f64,
    noiseless: TrainOutcome<Real>,
    noiseless_secs: f64,
    rerun: TrainOutcome<Real>,
    rerun_secs: f64,
}

/// The desk-scale protocol every training-dependent criterion shares:
/// 64 synthetic 32x32 images from the config seed, 2000 steps.
fn runs() -> &'static Runs {
    static CELL: OnceLock<Runs> = OnceLock::new();
    CELL.get_or_init(|| {
        let cfg = TrainConfig::desk_default();
        let data = synthetic_dataset(64, cfg.img_h, cfg.img_w, cfg.img_c, cfg.seed);
        let t = Instant::now();
        let noise = train::<Real>(&cfg, &data).expect("noise training");
        let noise_secs = t.elapsed().as_secs_f64();
        let quiet = TrainConfig { noise: false, ..cfg.clone() };
        let t = Instant::now();
        let noiseless = train::<Real>(&quiet, &data).expect("noiseless training");
        let noiseless_secs = t.elapsed().as_secs_f64();
        let t = Instant::now();
        let rerun = train::<Real>(&cfg, &data).expect("rerun training");
        let rerun_secs = t.elapsed().as_secs_f64();
        Runs { cfg, data, noise, noise_secs, noiseless, noiseless_secs, rerun, rerun_secs }
    })
}

#[test]
fn criterion_1_hash_table_parameter_budget() {
    let dir = TempDir::new().unwrap();
    let mut checks = Vec::new();
    for (key_len, reference) in [(1usize, 11.4e6), (2, 30.5e6)] {
        let cfg_path = dir.path().join(format!("params{key_len}.cfg"));
        std::fs::write(
            &cfg_path,
            format!(
                "n_groups = 4\nkey_len = {key_len}\nn_resolutions = 16\nr_min = 4\n\
                 r_max = 64\nmax_entries = 262144\nentry_dim = 4\nseed = 1\n"
            ),
        )
        .unwrap();
        let t = Instant::now();
        let out = run(&["params", "--config", cfg_path.to_str().unwrap()]);
        let secs = t.elapsed().as_secs_f64();
        assert!(out.status.success(), "params exit {:?}", out.status.code());
        let text = stdout(&out);
        let table: f64 = text
            .lines()
            .find_map(|l| l.strip_prefix("table_params="))
            .expect("table_params line")
            .parse()
            .unwrap();
        let dev = (table - reference).abs() / reference;
        assert!(dev <= 0.20, "key_len {key_len}: table params {table} vs {reference} ({dev:.3})");
        assert!(secs < 1.0, "params took {secs:.2}s");
        checks.push(format!("key_len {key_len}: {table:.0} ({:+.1}%)", 100.0 * (table / reference - 1.0)));
    }
    println!("[acceptance] 1/9 hash-table parameter budget: PASS ({})", checks.join(", "));
}

#[test]
fn criterion_2_end_to_end_gradient_check() {
    let mut lines = Vec::new();
    for bits in ["64", "32"] {
        let t = Instant::now();
        let out = run(&["gradcheck", "--probes", "200", "--bits", bits, "--h", "1e-5"]);
        let secs = t.elapsed().as_secs_f64();
        assert!(out.status.success(), "gradcheck --bits {bits} exit {:?}", out.status.code());
        let text = stdout(&out);
        assert!(text.starts_with("PASS"), "gradcheck --bits {bits}: {text}");
        assert!(secs < 60.0, "gradcheck --bits {bits} took {secs:.1}s");
        let err = text.split_whitespace().nth(2).unwrap_or("?").to_string();
        lines.push(format!("{bits}-bit max_rel_err {err}"));
    }
    println!("[acceptance] 2/9 end-to-end gradient check: PASS ({})", lines.join(", "));
}

/// A single-level direct-mode group with O(1) table values, so a 1e-6
/// comparison against the oracle is meaningful.
fn single_level_group(r: u32, entry_dim: usize, seed: u64) -> HashTableGroup<f64> {
    let cfg = GridConfig {
        n_groups: 1,
        key_len: 1,
        n_resolutions: 1,
        r_min: r,
        r_max: r,
        max_entries: 1 << 20,
        entry_dim,
        out_dim: 4,
        hidden_dim: 8,
    };
    let mut group = build_group::<f64>(&cfg, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for lvl in &mut group.levels {
        assert!(lvl.direct, "fixture level must be direct at r={r}");
        for e in &mut lvl.entries {
            *e = rng.random_range(-1.0..1.0);
        }
    }
    group
}

/// Nested-lerp trilinear interpolation straight off the table, written
/// independently of the library's product-of-weights formulation. Axis 0 is
/// the most significant in the row-major vertex layout.
fn oracle_trilinear(group: &HashTableGroup<f64>, q: &[f64; 3]) -> Vec<f64> {
    let lvl = &group.levels[0];
    let dim = group.cfg.entry_dim;
    let r = lvl.resolution as usize;
    let side = r + 1;
    let mut c = [0usize; 3];
    let mut t = [0f64; 3];
    for d in 0..3 {
        let x = q[d] * r as f64;
        let cell = x.floor().clamp(0.0, (r - 1) as f64);
        c[d] = cell as usize;
        t[d] = x - cell;
    }
    let at = |i: usize, j: usize, k: usize| -> &[f64] {
        let idx = (i * side + j) * side + k;
        &lvl.entries[idx * dim..(idx + 1) * dim]
    };
    let lerp = |a: f64, b: f64, t: f64| a + (b - a) * t;
    (0..dim)
        .map(|d| {
            let f = |i: usize, j: usize| {
                lerp(at(c[0] + i, c[1] + j, c[2])[d], at(c[0] + i, c[1] + j, c[2] + 1)[d], t[2])
            };
            let lo = lerp(f(0, 0), f(0, 1), t[1]);
            let hi = lerp(f(1, 0), f(1, 1), t[1]);
            lerp(lo, hi, t[0])
        })
        .collect()
}

#[test]
fn criterion_3_interpolation_matches_naive_oracle() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let draw = |rng: &mut ChaCha8Rng| -> f64 {
        // Snap a tenth of the coordinates onto the domain edges so the
        // boundary clamp is part of what the oracle must agree on.
        match rng.random_range(0..10) {
            0 => {
                if rng.random::<bool>() {
                    1.0
                } else {
                    0.0
                }
            }
            _ => rng.random::<f64>(),
        }
    };

    // 4 fixtures x 250 queries = 1000 oracle comparisons.
    let mut max_diff = 0f64;
    for (i, r) in [3u32, 4, 7, 16].into_iter().enumerate() {
        let group = single_level_group(r, 3, 100 + i as u64);
        for _ in 0..250 {
            let q = [draw(&mut rng), draw(&mut rng), draw(&mut rng)];
            let got = retrieve(&group, &q).unwrap();
            let want = oracle_trilinear(&group, &q);
            for (a, b) in got.level(0).iter().zip(&want) {
                max_diff = max_diff.max((a - b).abs());
            }
        }
    }
    assert!(max_diff <= 1e-6, "oracle disagreement {max_diff:.3e}");

    // Queries on exactly representable lattice vertices return the stored
    // entry bit-for-bit (power-of-two resolutions make i/r exact).
    for r in [4u32, 16] {
        let group = single_level_group(r, 3, 200 + r as u64);
        let side = (r + 1) as usize;
        for i in 0..side {
            for j in 0..side {
                for k in 0..side {
                    let q = [
                        i as f64 / r as f64,
                        j as f64 / r as f64,
                        k as f64 / r as f64,
                    ];
                    let got = retrieve(&group, &q).unwrap();
                    let idx = (i * side + j) * side + k;
                    let want = &group.levels[0].entries[idx * 3..idx * 3 + 3];
                    assert_eq!(got.level(0), want, "vertex ({i},{j},{k}) at r={r}");
                }
            }
        }
    }

    // An all-ones table makes the interpolant report its weight sum.
    let mut ones = single_level_group(7, 1, 300);
    for e in &mut ones.levels[0].entries {
        *e = 1.0;
    }
    let mut max_unity_dev = 0f64;
    for _ in 0..250 {
        let q = [draw(&mut rng), draw(&mut rng), draw(&mut rng)];
        let got = retrieve(&ones, &q).unwrap();
        max_unity_dev = max_unity_dev.max((got.level(0)[0] - 1.0).abs());
    }
    assert!(max_unity_dev <= 1e-6, "weight sum off by {max_unity_dev:.3e}");

    let secs = t0.elapsed().as_secs_f64();
    assert!(secs < 10.0, "oracle comparison took {secs:.1}s");
    println!(
        "[acceptance] 3/9 interpolation oracle: PASS (max |diff| {max_diff:.2e} on 1000 queries, \
         vertices exact, weight-sum dev {max_unity_dev:.2e}, {secs:.2}s)"
    );
}

#[test]
fn criterion_4_training_stream_hits_every_direct_slot() {
    let r = runs();
    let t0 = Instant::now();
    let stats = collect_training_hits(&r.noise.checkpoint.model, &r.data, r.cfg.seed).unwrap();
    let dims = r.cfg.grid.query_dim();
    let mut direct_levels = 0usize;
    let mut summary = Vec::new();
    for (g, s) in stats.iter().enumerate() {
        for lvl in usage_report(s) {
            if is_direct(lvl.resolution, dims, r.cfg.grid.max_entries) {
                direct_levels += 1;
                assert!(
                    lvl.hit_fraction == 1.0,
                    "group {g} r={} hit fraction {:.4} ({} of {} slots)",
                    lvl.resolution,
                    lvl.hit_fraction,
                    (lvl.hit_fraction * lvl.entries as f64).round(),
                    lvl.entries
                );
                summary.push(format!("g{g} r{}", lvl.resolution));
            }
        }
    }
    assert!(direct_levels > 0, "no direct-mode levels in the desk schedule");
    let secs = t0.elapsed().as_secs_f64();
    assert!(secs < 60.0, "hit collection took {secs:.1}s");
    println!(
        "[acceptance] 4/9 full table usage: PASS ({direct_levels} direct levels at 1.0: {}, {secs:.1}s)",
        summary.join(" ")
    );
}

#[test]
fn criterion_5_vq_usage_contrast() {
    let t0 = Instant::now();
    let out = clustered_contrast(123).unwrap();
    assert!(out.vq_usage <= 0.25, "vq usage {:.3}", out.vq_usage);
    assert!(out.hash_usage == 1.0, "hash usage {:.3}", out.hash_usage);
    let secs = t0.elapsed().as_secs_f64();
    assert!(secs < 60.0, "contrast protocol took {secs:.1}s");
    println!(
        "[acceptance] 5/9 vq usage contrast: PASS (vq {:.3} <= 0.25, direct grid 1.0, {secs:.1}s)",
        out.vq_usage
    );
}

#[test]
fn criterion_6_noise_training_flattens_perturbation_response() {
    let r = runs();
    let amp = 1.0 / (2.0 * r.cfg.grid.r_max as f64);
    let ratio = |outcome: &TrainOutcome<Real>| -> f64 {
        let sweep =
            precision_sweep(&outcome.checkpoint.model, &r.data, &[0.0, amp], r.cfg.seed).unwrap();
        sweep[1].1 / sweep[0].1
    };
    let with_noise = ratio(&r.noise);
    let without_noise = ratio(&r.noiseless);
    assert!(with_noise <= 1.5, "noise-trained ratio {with_noise:.3}");
    assert!(
        with_noise < without_noise,
        "noise-trained {with_noise:.3} not below noiseless {without_noise:.3}"
    );
    let pair_secs = r.noise_secs + r.noiseless_secs;
    assert!(pair_secs < 600.0, "two trainings took {pair_secs:.0}s");
    println!(
        "[acceptance] 6/9 relaxed-precision trend: PASS (amp {amp:.4}: noise-trained {with_noise:.3} \
         <= 1.5 and < noiseless {without_noise:.3}, trainings {pair_secs:.0}s)"
    );
}

#[test]
fn criterion_7_training_viability_and_determinism() {
    let r = runs();
    let first = r.noise.curve.first().unwrap().loss;
    let last = r.noise.curve.last().unwrap().loss;
    let ratio = last / first;
    assert!(ratio <= 0.10, "final/initial loss {ratio:.3}");

    // Predicting the per-pixel dataset mean is the no-model baseline.
    let n = r.data.len() as f32;
    let mut acc = vec![0f32; r.data[0].data.len()];
    for img in &r.data {
        for (a, &v) in acc.iter_mut().zip(&img.data) {
            *a += v;
        }
    }
    for a in &mut acc {
        *a /= n;
    }
    let mean_img = ImageBuf::new(r.cfg.img_h, r.cfg.img_w, r.cfg.img_c, acc).unwrap();
    let baseline = r.data.iter().map(|img| psnr(mse(&mean_img, img).unwrap())).sum::<f64>()
        / r.data.len() as f64;
    let model = &r.noise.checkpoint.model;
    let achieved = r.data.iter().map(|img| reconstruct(model, img).unwrap().1).sum::<f64>()
        / r.data.len() as f64;
    let margin = achieved - baseline;
    assert!(margin >= 6.0, "psnr {achieved:.2} vs mean baseline {baseline:.2}");

    let bytes = r.noise.checkpoint.save().unwrap();
    let rerun_bytes = r.rerun.checkpoint.save().unwrap();
    assert!(bytes == rerun_bytes, "rerun checkpoint differs");
    assert!(r.noise.curve == r.rerun.curve, "rerun loss curve differs");
    assert!(r.noise_secs < 300.0, "training took {:.0}s", r.noise_secs);
    assert!(r.rerun_secs < 300.0, "rerun took {:.0}s", r.rerun_secs);
    println!(
        "[acceptance] 7/9 training viability: PASS (loss ratio {ratio:.3}, psnr {achieved:.2} = \
         baseline {baseline:.2} + {margin:.2} dB, rerun byte-identical, {:.0}s/{:.0}s)",
        r.noise_secs, r.rerun_secs
    );
}

#[test]
fn criterion_8_f1_arithmetic() {
    for (p, rec, want) in [(0.73, 0.50, 0.593), (0.78, 0.41, 0.537)] {
        let got = f1(p, rec).unwrap();
        assert!((got - want).abs() < 5e-4, "f1({p}, {rec}) = {got:.5}, want {want}");
    }
    println!("[acceptance] 8/9 f1 arithmetic: PASS (0.593 and 0.537 within 5e-4)");
}

#[test]
fn criterion_9_artifact_round_trips_and_corruption_exits() {
    let r = runs();
    let dir = TempDir::new().unwrap();

    // Checkpoint file: load(save(x)) saves back to identical bytes.
    let p1 = dir.path().join("a.ckpt");
    let p2 = dir.path().join("b.ckpt");
    r.noise.checkpoint.save_file(&p1).unwrap();
    let loaded = Checkpoint::<Real>::load_file(&p1).unwrap();
    loaded.save_file(&p2).unwrap();
    let ckpt_bytes = std::fs::read(&p1).unwrap();
    assert!(ckpt_bytes == std::fs::read(&p2).unwrap(), "checkpoint round trip not byte-exact");

    // Key-code file: same property.
    let keys = r.noise.checkpoint.model.keys(&r.data[0]).unwrap();
    let kc_bytes = write_keycode_file(&keys);
    let kc_path = dir.path().join("a.bkey");
    std::fs::write(&kc_path, &kc_bytes).unwrap();
    let reread = read_keycode_file::<Real>(&std::fs::read(&kc_path).unwrap()).unwrap();
    assert!(write_keycode_file(&reread) == kc_bytes, "key-code round trip not byte-exact");

    // Corrupting either magic makes the binary exit with the format error
    // code and leave stderr pointing at the file.
    let flip_magic = |bytes: &[u8]| {
        let mut bad = bytes.to_vec();
        bad[0] ^= 0xff;
        bad
    };
    let bad_ckpt = dir.path().join("bad.ckpt");
    std::fs::write(&bad_ckpt, flip_magic(&ckpt_bytes)).unwrap();
    let out = run(&[
        "stats",
        "--checkpoint",
        bad_ckpt.to_str().unwrap(),
        "--synthetic",
        "2",
        "--out",
        dir.path().join("stats").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(5), "corrupt checkpoint magic");

    let bad_keys = dir.path().join("bad.bkey");
    std::fs::write(&bad_keys, flip_magic(&kc_bytes)).unwrap();
    let out = run(&[
        "decode",
        "--checkpoint",
        p1.to_str().unwrap(),
        "--keys",
        bad_keys.to_str().unwrap(),
        "--out",
        dir.path().join("out.ppm").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(5), "corrupt key-code magic");

    println!(
        "[acceptance] 9/9 format round trips: PASS (checkpoint {} B and key-code {} B byte-exact, \
         corrupt magic exits 5)",
        ckpt_bytes.len(),
        kc_bytes.len()
    );
}
