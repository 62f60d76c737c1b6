//! Desk-scale training: a conv encoder produces key codes, the hash grid
//! turns them into features, a conv decoder reconstructs the image, and all
//! four parameter groups are optimized jointly with Adam.

mod gradcheck;
mod model;
mod synthetic;

pub use gradcheck::{end_to_end_gradient_check, tiny_config, zero_influence_probe, GradCheckReport, ProbeResult};
pub use model::{ConvAct, DecoderStage, GradAccum, Model, ParamGroup, SamplePass, PARAM_GROUPS};
pub use synthetic::synthetic_dataset;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::analysis::HitStats;
use crate::error::{Error, Result};
use crate::grid::GridConfig;
use crate::img::{psnr, ImageBuf};
use crate::keys::{key_noise_std, make_query, tile_interleave, JitterDist, KeyJitter};
use crate::nn::AdamState;
use crate::scalar::{mix_seed, Scalar};
use crate::snapshot::{
    get_conv, put_conv, read_grid_snapshot, read_sections, write_grid_snapshot, write_section,
    ByteReader, ByteWriter,
};

const ADAM_BETA1: f64 = 0.0;
const ADAM_BETA2: f64 = 0.99;
/// Tables get an almost-zero epsilon so tiny sparse gradients still move
/// them; dense groups use a conventional one.
const ADAM_EPS_TABLES: f64 = 1e-15;
const ADAM_EPS_DENSE: f64 = 1e-8;

const SALT_ORDER: u64 = 0x0BA7C4;
const SALT_JITTER: u64 = 0x4A177E2;

/// Everything a training run needs. The derived channel counts keep the
/// shape chain consistent by construction: the encoder emits
/// `n_groups * key_len` key channels and the grid emits
/// `n_groups * out_dim` feature channels.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub img_h: usize,
    pub img_w: usize,
    pub img_c: usize,
    pub grid: GridConfig,
    /// Key-code grid size (encoder output).
    pub key_h: usize,
    pub key_w: usize,
    /// Feature block size (decoder input).
    pub block_h: usize,
    pub block_w: usize,
    pub enc_hidden: usize,
    pub dec_hidden: usize,
    pub steps: usize,
    pub batch: usize,
    pub seed: u64,
    /// Train-time key perturbation on/off.
    pub noise: bool,
    pub lr_encoder: f64,
    pub lr_decoder: f64,
    pub lr_tables: f64,
    pub lr_mlps: f64,
    pub loss_weight: f64,
}

impl TrainConfig {
    /// Key channels: every group contributes `key_len` components.
    pub fn key_c(&self) -> usize {
        self.grid.n_groups * self.grid.key_len
    }

    /// Feature-block channels: every group contributes `out_dim` values.
    pub fn block_c(&self) -> usize {
        self.grid.n_groups * self.grid.out_dim
    }

    pub fn lr_for(&self, g: ParamGroup) -> f64 {
        match g {
            ParamGroup::Encoder => self.lr_encoder,
            ParamGroup::Decoder => self.lr_decoder,
            ParamGroup::Tables => self.lr_tables,
            ParamGroup::Mlps => self.lr_mlps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if !(self.img_c == 1 || self.img_c == 3) {
            return Err(Error::Config(format!("img_c must be 1 or 3, got {}", self.img_c)));
        }
        for (name, v) in [
            ("img_h", self.img_h),
            ("img_w", self.img_w),
            ("key_h", self.key_h),
            ("key_w", self.key_w),
            ("block_h", self.block_h),
            ("block_w", self.block_w),
            ("enc_hidden", self.enc_hidden),
            ("dec_hidden", self.dec_hidden),
            ("steps", self.steps),
            ("batch", self.batch),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        // The encoder halves both dimensions per stride-2 conv and the
        // decoder doubles both per upsample, so the ratios must be shared
        // powers of two.
        let ratio_chain = [
            ("image/key", self.img_h, self.key_h, self.img_w, self.key_w),
            ("image/block", self.img_h, self.block_h, self.img_w, self.block_w),
        ];
        for (what, h_big, h_small, w_big, w_small) in ratio_chain {
            if h_big % h_small != 0 || w_big % w_small != 0 {
                return Err(Error::Config(format!("{what} sizes must divide evenly")));
            }
            let (rh, rw) = (h_big / h_small, w_big / w_small);
            if rh != rw || !rh.is_power_of_two() {
                return Err(Error::Config(format!(
                    "{what} ratio must be a shared power of two, got {rh}x{rw}"
                )));
            }
        }
        if self.block_h % self.key_h != 0 || self.block_w % self.key_w != 0 {
            return Err(Error::Config("block size must be a multiple of the key grid".into()));
        }
        for (name, lr) in [
            ("lr_encoder", self.lr_encoder),
            ("lr_decoder", self.lr_decoder),
            ("lr_tables", self.lr_tables),
            ("lr_mlps", self.lr_mlps),
        ] {
            if !lr.is_finite() || lr < 0.0 {
                return Err(Error::Config(format!("{name} must be finite and non-negative")));
            }
        }
        if !self.loss_weight.is_finite() || self.loss_weight <= 0.0 {
            return Err(Error::Config("loss_weight must be finite and positive".into()));
        }
        Ok(())
    }

    /// The reference desk-scale run: 32x32 RGB images, an 8x8 two-channel
    /// key grid feeding two groups, a 16x16x32 feature block, and four grid
    /// levels of which the finest is hashed. Minutes on a CPU.
    pub fn desk_default() -> Self {
        TrainConfig {
            img_h: 32,
            img_w: 32,
            img_c: 3,
            grid: GridConfig {
                n_groups: 2,
                key_len: 1,
                n_resolutions: 4,
                r_min: 4,
                r_max: 16,
                max_entries: 1 << 12,
                entry_dim: 2,
                out_dim: 16,
                hidden_dim: 64,
            },
            key_h: 8,
            key_w: 8,
            block_h: 16,
            block_w: 16,
            enc_hidden: 16,
            dec_hidden: 24,
            steps: 2000,
            batch: 8,
            seed: 7,
            noise: true,
            lr_encoder: 2e-3,
            lr_decoder: 2e-3,
            lr_tables: 2e-3,
            lr_mlps: 2e-3,
            loss_weight: 20.0,
        }
    }

    fn jitter_dist(&self) -> JitterDist {
        JitterDist::Normal { std: key_noise_std(self.grid.r_max) }
    }
}

/// Adam state per parameter group.
#[derive(Debug, Clone, PartialEq)]
pub struct OptBundle<S> {
    pub encoder: AdamState<S>,
    pub decoder: AdamState<S>,
    pub tables: AdamState<S>,
    pub mlps: AdamState<S>,
}

impl<S: Scalar> OptBundle<S> {
    pub fn new(cfg: &TrainConfig, model: &Model<S>) -> Self {
        let state = |g: ParamGroup| {
            let eps = match g {
                ParamGroup::Tables => ADAM_EPS_TABLES,
                _ => ADAM_EPS_DENSE,
            };
            AdamState::new(
                model.group_len(g),
                S::from_f64(cfg.lr_for(g)),
                S::from_f64(ADAM_BETA1),
                S::from_f64(ADAM_BETA2),
                S::from_f64(eps),
            )
        };
        OptBundle {
            encoder: state(ParamGroup::Encoder),
            decoder: state(ParamGroup::Decoder),
            tables: state(ParamGroup::Tables),
            mlps: state(ParamGroup::Mlps),
        }
    }

    pub fn by_group_mut(&mut self, g: ParamGroup) -> &mut AdamState<S> {
        match g {
            ParamGroup::Encoder => &mut self.encoder,
            ParamGroup::Decoder => &mut self.decoder,
            ParamGroup::Tables => &mut self.tables,
            ParamGroup::Mlps => &mut self.mlps,
        }
    }
}

/// A trained (or in-progress) model plus optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<S> {
    pub model: Model<S>,
    pub opt: OptBundle<S>,
    pub step: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub loss: f64,
    /// Training-signal PSNR derived from the step loss.
    pub psnr: f64,
}

pub struct TrainOutcome<S> {
    pub checkpoint: Checkpoint<S>,
    pub curve: Vec<StepRecord>,
}

fn validate_dataset(cfg: &TrainConfig, dataset: &[ImageBuf]) -> Result<()> {
    if dataset.is_empty() {
        return Err(Error::Data("training needs at least one image".into()));
    }
    for (i, img) in dataset.iter().enumerate() {
        if (img.h, img.w, img.c) != (cfg.img_h, cfg.img_w, cfg.img_c) {
            return Err(Error::Shape(format!(
                "dataset image {i} is {}x{}x{}, config wants {}x{}x{}",
                img.h, img.w, img.c, cfg.img_h, cfg.img_w, cfg.img_c
            )));
        }
        if img.data.iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
            return Err(Error::Data(format!("dataset image {i} has values outside [0, 1]")));
        }
    }
    Ok(())
}

/// Deterministic epoch shuffler: every index appears once per epoch, and
/// the order depends only on the seed.
// Seeded shuffle of the image order, fixed for the whole run, consumed
// round-robin. Fixing the partition (instead of reshuffling per epoch) keeps
// any two steps one epoch apart looking at the same images, so the loss
// curve's slow trend is not buried under batch-composition noise.
/// Samples are consumed in epochs: a seeded shuffle of the dataset order,
/// reshuffled when exhausted, so every image appears exactly once per epoch.
struct BatchSchedule {
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
}

impl BatchSchedule {
    fn new(n: usize, seed: u64) -> Self {
        let mut s = BatchSchedule {
            rng: ChaCha8Rng::seed_from_u64(seed),
            order: (0..n).collect(),
            cursor: 0,
        };
        s.reshuffle();
        s
    }

    fn reshuffle(&mut self) {
        use rand::Rng;
        // Fisher-Yates
        for i in (1..self.order.len()).rev() {
            let j = self.rng.random_range(0..=i);
            self.order.swap(i, j);
        }
        self.cursor = 0;
    }

    fn next_batch(&mut self, k: usize) -> Vec<usize> {
        (0..k)
            .map(|_| {
                if self.cursor == self.order.len() {
                    self.reshuffle();
                }
                let v = self.order[self.cursor];
                self.cursor += 1;
                v
            })
            .collect()
    }
}

fn jitter_rng(seed: u64, step: usize, batch: usize, slot: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, SALT_JITTER));
    rng.set_stream((step * batch + slot) as u64 + 1);
    rng
}

/// Run the optimization loop. Batches are processed in parallel but reduced
/// in sample order and the per-sample jitter streams are indexed by (step,
/// slot), so the result is bit-identical for a fixed config and seed
/// regardless of thread count.
pub fn train<S: Scalar>(cfg: &TrainConfig, dataset: &[ImageBuf]) -> Result<TrainOutcome<S>> {
    cfg.validate()?;
    validate_dataset(cfg, dataset)?;
    let mut model: Model<S> = Model::new_seeded(cfg)?;
    let mut opt = OptBundle::new(cfg, &model);
    let mut schedule = BatchSchedule::new(dataset.len(), mix_seed(cfg.seed, SALT_ORDER));
    let dist = cfg.jitter_dist();
    let mut curve = Vec::with_capacity(cfg.steps);

    for step in 0..cfg.steps {
        let batch = schedule.next_batch(cfg.batch);
        let passes: Vec<Result<SamplePass<S>>> = batch
            .par_iter()
            .enumerate()
            .map(|(slot, &idx)| {
                let img = &dataset[idx];
                if cfg.noise {
                    let mut rng = jitter_rng(cfg.seed, step, cfg.batch, slot);
                    model.sample_pass(img, Some((&mut rng, dist)))
                } else {
                    model.sample_pass(img, None)
                }
            })
            .collect();

        let mut total = GradAccum::zeros(&model);
        let mut loss_sum = S::zero();
        for pass in passes {
            let pass = pass?;
            loss_sum += pass.loss;
            total.add(&pass.grads)?;
        }
        let inv = S::one() / S::from_usize(cfg.batch);
        total.scale(inv);
        let loss = (loss_sum * inv).to_f64();
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("loss diverged at step {step}: {loss}")));
        }
        curve.push(StepRecord {
            step: step as u64,
            loss,
            psnr: psnr(loss / cfg.loss_weight),
        });

        for g in PARAM_GROUPS {
            let mut params = model.collect_group(g);
            opt.by_group_mut(g).step(&mut params, total.by_group(g))?;
            model.set_group(g, &params)?;
        }
    }

    Ok(TrainOutcome {
        checkpoint: Checkpoint { model, opt, step: cfg.steps as u64 },
        curve,
    })
}

/// Noise-free reconstruction and its PSNR against the input. The decoder
/// output is clamped to [0, 1] before comparison.
pub fn reconstruct<S: Scalar>(model: &Model<S>, img: &ImageBuf) -> Result<(ImageBuf, f64)> {
    let raw = model.infer(img)?;
    let recon = ImageBuf::new(
        img.h,
        img.w,
        img.c,
        raw.iter().map(|&v| v.to_f32().clamp(0.0, 1.0)).collect(),
    )?;
    let mse = crate::img::mse(&recon, img)?;
    Ok((recon, psnr(mse)))
}

/// Mean training-style loss over a dataset, noise-free except for an
/// optional uniform key perturbation of the given amplitude. The
/// perturbation streams are indexed by image and cell, not by model state,
/// so two checkpoints with the same shapes see identical perturbations.
pub fn eval_loss<S: Scalar>(
    model: &Model<S>,
    dataset: &[ImageBuf],
    amplitude: f64,
    seed: u64,
) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::Data("eval_loss: empty dataset".into()));
    }
    let cfg = &model.cfg;
    let mut sum = 0.0;
    for (idx, img) in dataset.iter().enumerate() {
        let jitter = (amplitude != 0.0).then(|| KeyJitter {
            seed: mix_seed(seed, idx as u64),
            dist: JitterDist::Uniform { amplitude },
        });
        let raw = model.infer_with_jitter(img, jitter.as_ref())?;
        let target: Vec<S> = img.data.iter().map(|&v| S::from_f32(v)).collect();
        let (loss, _) = crate::nn::l2_loss(&raw, &target, S::from_f64(cfg.loss_weight))?;
        sum += loss.to_f64();
    }
    Ok(sum / dataset.len() as f64)
}

/// Evaluation loss under increasing key perturbation amplitudes.
pub fn precision_sweep<S: Scalar>(
    model: &Model<S>,
    dataset: &[ImageBuf],
    amplitudes: &[f64],
    seed: u64,
) -> Result<Vec<(f64, f64)>> {
    if amplitudes.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Config("precision_sweep: amplitudes must be ascending".into()));
    }
    if amplitudes.iter().any(|a| !a.is_finite() || *a < 0.0) {
        return Err(Error::Config("precision_sweep: amplitudes must be non-negative".into()));
    }
    amplitudes
        .iter()
        .map(|&a| Ok((a, eval_loss(model, dataset, a, seed)?)))
        .collect()
}

/// One pass over the whole dataset with training-style queries (noise
/// included when the config trains with noise), counting table touches per
/// group. This is the query stream the training loop would see in one epoch.
pub fn collect_training_hits<S: Scalar>(
    model: &Model<S>,
    dataset: &[ImageBuf],
    seed: u64,
) -> Result<Vec<HitStats>> {
    let cfg = &model.cfg;
    let dist = cfg.jitter_dist();
    let mut stats: Vec<HitStats> = model.groups.iter().map(HitStats::zeroed).collect();
    for (idx, img) in dataset.iter().enumerate() {
        let keys = model.keys(img)?;
        let tiled = tile_interleave(&keys, cfg.block_h, cfg.block_w)?;
        let mut rng = jitter_rng(mix_seed(seed, idx as u64), 0, 1, 0);
        for i in 0..cfg.block_h {
            for j in 0..cfg.block_w {
                for (g, group) in model.groups.iter().enumerate() {
                    let qs = if cfg.noise {
                        make_query(&tiled, i, j, g, cfg.grid.key_len, Some((&mut rng, dist)))?
                    } else {
                        make_query::<S, ChaCha8Rng>(&tiled, i, j, g, cfg.grid.key_len, None)?
                    };
                    let one = crate::analysis::collect_hits(group, [qs.q.as_slice()])?;
                    stats[g].merge(&one)?;
                }
            }
        }
    }
    Ok(stats)
}

/// CSV dump of a loss curve.
pub fn curve_csv(curve: &[StepRecord]) -> String {
    let mut out = String::from("step,loss,psnr\n");
    for r in curve {
        out.push_str(&format!("{},{:.9},{:.4}\n", r.step, r.loss, r.psnr));
    }
    out
}

/// Fraction of adjacent moving-average pairs that increase. A curve that
/// trends downward has a small fraction; 0 means monotone non-increasing.
pub fn moving_average_violations(curve: &[StepRecord], window: usize) -> f64 {
    if curve.len() < window + 1 || window == 0 {
        return 0.0;
    }
    let mut sums = Vec::with_capacity(curve.len() - window + 1);
    let mut acc = 0.0;
    for (i, r) in curve.iter().enumerate() {
        acc += r.loss;
        if i + 1 >= window {
            sums.push(acc);
            acc -= curve[i + 1 - window].loss;
        }
    }
    let pairs = sums.len() - 1;
    if pairs == 0 {
        return 0.0;
    }
    let violations = sums.windows(2).filter(|w| w[1] > w[0]).count();
    violations as f64 / pairs as f64
}

// ---- checkpoint serialization ----

const TAG_TRAIN_CONFIG: [u8; 4] = *b"TRNC";
const TAG_ENCODER: [u8; 4] = *b"ENCW";
const TAG_DECODER: [u8; 4] = *b"DECW";
const TAG_OPT: [u8; 4] = *b"OPTS";
const TAG_STEP: [u8; 4] = *b"STEP";

fn put_train_config(w: &mut ByteWriter, cfg: &TrainConfig) {
    for v in [
        cfg.img_h, cfg.img_w, cfg.img_c, cfg.key_h, cfg.key_w, cfg.block_h, cfg.block_w,
        cfg.enc_hidden, cfg.dec_hidden, cfg.steps, cfg.batch,
    ] {
        w.put_u64(v as u64);
    }
    w.put_u64(cfg.seed);
    w.put_u32(cfg.noise as u32);
    for v in [cfg.lr_encoder, cfg.lr_decoder, cfg.lr_tables, cfg.lr_mlps, cfg.loss_weight] {
        w.put_f64(v);
    }
}

fn get_train_config(r: &mut ByteReader, grid: GridConfig) -> Result<TrainConfig> {
    let mut next = || -> Result<usize> { Ok(r.get_u64()? as usize) };
    let [img_h, img_w, img_c, key_h, key_w, block_h, block_w, enc_hidden, dec_hidden, steps, batch] =
        [next()?, next()?, next()?, next()?, next()?, next()?, next()?, next()?, next()?, next()?, next()?];
    let seed = r.get_u64()?;
    let noise = match r.get_u32()? {
        0 => false,
        1 => true,
        v => return Err(Error::Format(format!("bad noise flag {v}"))),
    };
    let cfg = TrainConfig {
        img_h, img_w, img_c, grid, key_h, key_w, block_h, block_w, enc_hidden, dec_hidden,
        steps, batch, seed, noise,
        lr_encoder: r.get_f64()?,
        lr_decoder: r.get_f64()?,
        lr_tables: r.get_f64()?,
        lr_mlps: r.get_f64()?,
        loss_weight: r.get_f64()?,
    };
    cfg.validate().map_err(|e| Error::Format(format!("stored train config invalid: {e}")))?;
    Ok(cfg)
}

fn put_adam<S: Scalar>(w: &mut ByteWriter, a: &AdamState<S>) {
    w.put_u64(a.t);
    w.put_f64(a.lr.to_f64());
    w.put_f64(a.beta1.to_f64());
    w.put_f64(a.beta2.to_f64());
    w.put_f64(a.eps.to_f64());
    w.put_u64(a.m.len() as u64);
    w.put_f32_slice(&a.m);
    w.put_f32_slice(&a.v);
}

fn get_adam<S: Scalar>(r: &mut ByteReader, expect_len: usize) -> Result<AdamState<S>> {
    let t = r.get_u64()?;
    let lr = S::from_f64(r.get_f64()?);
    let beta1 = S::from_f64(r.get_f64()?);
    let beta2 = S::from_f64(r.get_f64()?);
    let eps = S::from_f64(r.get_f64()?);
    let len = r.get_u64()? as usize;
    if len != expect_len {
        return Err(Error::Format(format!(
            "optimizer state has {len} slots, model group has {expect_len}"
        )));
    }
    let m = r.get_f32_vec(len)?;
    let v = r.get_f32_vec(len)?;
    Ok(AdamState { m, v, t, lr, beta1, beta2, eps })
}

impl<S: Scalar> Checkpoint<S> {
    /// Serialize; values are stored as f32, so this round-trips bit-exactly
    /// for the f32 training path.
    pub fn save(&self) -> Result<Vec<u8>> {
        let mut w = write_grid_snapshot(&self.model.groups)?;

        let mut sec = ByteWriter::new();
        put_train_config(&mut sec, &self.model.cfg);
        write_section(&mut w, TAG_TRAIN_CONFIG, &sec.buf);

        let mut sec = ByteWriter::new();
        sec.put_u32(self.model.encoder.len() as u32);
        for c in &self.model.encoder {
            put_conv(&mut sec, c);
        }
        write_section(&mut w, TAG_ENCODER, &sec.buf);

        let mut sec = ByteWriter::new();
        sec.put_u32(self.model.decoder.len() as u32);
        for s in &self.model.decoder {
            sec.put_u32(s.upsample_before as u32);
            put_conv(&mut sec, &s.conv);
        }
        write_section(&mut w, TAG_DECODER, &sec.buf);

        let mut sec = ByteWriter::new();
        for a in [&self.opt.encoder, &self.opt.decoder, &self.opt.tables, &self.opt.mlps] {
            put_adam(&mut sec, a);
        }
        write_section(&mut w, TAG_OPT, &sec.buf);

        let mut sec = ByteWriter::new();
        sec.put_u64(self.step);
        write_section(&mut w, TAG_STEP, &sec.buf);

        Ok(w.buf)
    }

    pub fn load(bytes: &[u8]) -> Result<Checkpoint<S>> {
        let (groups, mut rest) = read_grid_snapshot::<S>(bytes)?;
        let grid_cfg = groups[0].cfg.clone();
        let sections = read_sections(&mut rest)?;
        let expect = [TAG_TRAIN_CONFIG, TAG_ENCODER, TAG_DECODER, TAG_OPT, TAG_STEP];
        if sections.len() != expect.len()
            || sections.iter().map(|s| s.0).ne(expect.iter().copied())
        {
            return Err(Error::Format("checkpoint sections missing or out of order".into()));
        }

        let mut r = ByteReader::new(&sections[0].1);
        let cfg = get_train_config(&mut r, grid_cfg)?;

        let mut r = ByteReader::new(&sections[1].1);
        let n = r.get_u32()? as usize;
        let encoder = (0..n).map(|_| get_conv(&mut r)).collect::<Result<Vec<_>>>()?;

        let mut r = ByteReader::new(&sections[2].1);
        let n = r.get_u32()? as usize;
        let decoder = (0..n)
            .map(|_| {
                let upsample_before = r.get_u32()? != 0;
                Ok(DecoderStage { upsample_before, conv: get_conv(&mut r)? })
            })
            .collect::<Result<Vec<_>>>()?;

        let model = Model { cfg, act: ConvAct::Relu, encoder, groups, decoder };

        let mut r = ByteReader::new(&sections[3].1);
        let opt = OptBundle {
            encoder: get_adam(&mut r, model.group_len(ParamGroup::Encoder))?,
            decoder: get_adam(&mut r, model.group_len(ParamGroup::Decoder))?,
            tables: get_adam(&mut r, model.group_len(ParamGroup::Tables))?,
            mlps: get_adam(&mut r, model.group_len(ParamGroup::Mlps))?,
        };

        let mut r = ByteReader::new(&sections[4].1);
        let step = r.get_u64()?;

        Ok(Checkpoint { model, opt, step })
    }

    pub fn save_file(&self, path: &std::path::Path) -> Result<()> {
        Ok(std::fs::write(path, self.save()?)?)
    }

    pub fn load_file(path: &std::path::Path) -> Result<Checkpoint<S>> {
        Checkpoint::load(&std::fs::read(path)?)
    }
}
