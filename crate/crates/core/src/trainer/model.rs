//! The bi-level autoencoder: conv encoder → key codes → hash-grid features
//! → conv decoder, with a hand-derived backward pass over the whole chain.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::{self, build_group, GradientBundle, HashTableGroup};
use crate::img::ImageBuf;
use crate::keys::{assemble_feature_block, make_query, tile_interleave, JitterDist, KeyCodeGrid, KeyJitter};
use crate::nn::{relu, relu_backward, sigmoid, sigmoid_backward, upsample2x, upsample2x_backward, Conv2d};
use crate::scalar::{mix_seed, Scalar};

use super::TrainConfig;

/// Activation between conv layers. `Identity` exists for gradient-check
/// fixtures that need an exactly polynomial loss; real models use `Relu`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvAct {
    Relu,
    Identity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderStage<S> {
    /// Nearest-neighbor 2x upsample applied to the stage input.
    pub upsample_before: bool,
    pub conv: Conv2d<S>,
}

/// The four trainable parameter groups, each with its own optimizer state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    Encoder,
    Decoder,
    Tables,
    Mlps,
}

pub const PARAM_GROUPS: [ParamGroup; 4] =
    [ParamGroup::Encoder, ParamGroup::Decoder, ParamGroup::Tables, ParamGroup::Mlps];

#[derive(Debug, Clone, PartialEq)]
pub struct Model<S> {
    pub cfg: TrainConfig,
    pub act: ConvAct,
    pub encoder: Vec<Conv2d<S>>,
    pub groups: Vec<HashTableGroup<S>>,
    pub decoder: Vec<DecoderStage<S>>,
}

/// Dense per-group gradients in exactly the layout of
/// [`Model::collect_group`], so optimizer steps can zip them.
#[derive(Debug, Clone)]
pub struct GradAccum<S> {
    pub encoder: Vec<S>,
    pub decoder: Vec<S>,
    pub tables: Vec<S>,
    pub mlps: Vec<S>,
}

impl<S: Scalar> GradAccum<S> {
    pub fn zeros(model: &Model<S>) -> Self {
        GradAccum {
            encoder: vec![S::zero(); model.group_len(ParamGroup::Encoder)],
            decoder: vec![S::zero(); model.group_len(ParamGroup::Decoder)],
            tables: vec![S::zero(); model.group_len(ParamGroup::Tables)],
            mlps: vec![S::zero(); model.group_len(ParamGroup::Mlps)],
        }
    }

    pub fn by_group(&self, g: ParamGroup) -> &[S] {
        match g {
            ParamGroup::Encoder => &self.encoder,
            ParamGroup::Decoder => &self.decoder,
            ParamGroup::Tables => &self.tables,
            ParamGroup::Mlps => &self.mlps,
        }
    }

    fn by_group_mut(&mut self, g: ParamGroup) -> &mut Vec<S> {
        match g {
            ParamGroup::Encoder => &mut self.encoder,
            ParamGroup::Decoder => &mut self.decoder,
            ParamGroup::Tables => &mut self.tables,
            ParamGroup::Mlps => &mut self.mlps,
        }
    }

    /// Elementwise add, used for the in-order batch reduction.
    pub fn add(&mut self, other: &GradAccum<S>) -> Result<()> {
        for g in PARAM_GROUPS {
            let mine = self.by_group_mut(g);
            let theirs = other.by_group(g);
            if mine.len() != theirs.len() {
                return Err(Error::Shape("GradAccum::add: mismatched layouts".into()));
            }
            for (a, &b) in mine.iter_mut().zip(theirs) {
                *a += b;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, s: S) {
        for g in PARAM_GROUPS {
            for v in self.by_group_mut(g) {
                *v *= s;
            }
        }
    }
}

/// One training sample's loss and gradients.
pub struct SamplePass<S> {
    pub loss: S,
    pub grads: GradAccum<S>,
}

struct ConvStackTrace<S> {
    /// Input to each conv (after any upsample), with its spatial size.
    inputs: Vec<(Vec<S>, usize, usize)>,
    /// Pre-activation output of each conv.
    pres: Vec<Vec<S>>,
    output: Vec<S>,
}

impl<S: Scalar> Model<S> {
    /// Build a seeded model. Sub-seeds are derived per component, so the
    /// encoder, each group, and the decoder get independent streams.
    pub fn new_seeded(cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let mut enc_rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 0x00E0C0DE));
        let mut dec_rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 0x00DEC0DE));

        let n_down = (cfg.img_h / cfg.key_h).trailing_zeros();
        let mut encoder = vec![Conv2d::new_seeded(cfg.img_c, cfg.enc_hidden, 1, &mut enc_rng)];
        for _ in 0..n_down {
            encoder.push(Conv2d::new_seeded(cfg.enc_hidden, cfg.enc_hidden, 2, &mut enc_rng));
        }
        encoder.push(Conv2d::new_seeded(cfg.enc_hidden, cfg.key_c(), 1, &mut enc_rng));

        let groups = (0..cfg.grid.n_groups)
            .map(|g| build_group(&cfg.grid, mix_seed(cfg.seed, 0x6121D000 + g as u64)))
            .collect::<Result<Vec<_>>>()?;

        let n_up = (cfg.img_h / cfg.block_h).trailing_zeros();
        let mut decoder = vec![DecoderStage {
            upsample_before: false,
            conv: Conv2d::new_seeded(cfg.block_c(), cfg.dec_hidden, 1, &mut dec_rng),
        }];
        for _ in 0..n_up {
            decoder.push(DecoderStage {
                upsample_before: true,
                conv: Conv2d::new_seeded(cfg.dec_hidden, cfg.dec_hidden, 1, &mut dec_rng),
            });
        }
        decoder.push(DecoderStage {
            upsample_before: false,
            conv: Conv2d::new_seeded(cfg.dec_hidden, cfg.img_c, 1, &mut dec_rng),
        });

        Ok(Model { cfg: cfg.clone(), act: ConvAct::Relu, encoder, groups, decoder })
    }

    /// Lossless precision change of every parameter.
    pub fn convert<T: Scalar>(&self) -> Model<T> {
        let conv = |c: &Conv2d<S>| Conv2d {
            in_c: c.in_c,
            out_c: c.out_c,
            stride: c.stride,
            w: c.w.iter().map(|&v| T::from_f64(v.to_f64())).collect(),
            b: c.b.iter().map(|&v| T::from_f64(v.to_f64())).collect(),
        };
        Model {
            cfg: self.cfg.clone(),
            act: self.act,
            encoder: self.encoder.iter().map(conv).collect(),
            groups: self.groups.iter().map(|g| g.convert()).collect(),
            decoder: self
                .decoder
                .iter()
                .map(|s| DecoderStage { upsample_before: s.upsample_before, conv: conv(&s.conv) })
                .collect(),
        }
    }

    fn activate(&self, pre: &[S]) -> Vec<S> {
        match self.act {
            ConvAct::Relu => relu(pre),
            ConvAct::Identity => pre.to_vec(),
        }
    }

    fn activate_backward(&self, pre: &[S], dy: &[S]) -> Vec<S> {
        match self.act {
            ConvAct::Relu => relu_backward(pre, dy),
            ConvAct::Identity => dy.to_vec(),
        }
    }

    // ---- encoder ----

    fn encoder_forward(&self, img: &ImageBuf) -> Result<ConvStackTrace<S>> {
        if (img.h, img.w, img.c) != (self.cfg.img_h, self.cfg.img_w, self.cfg.img_c) {
            return Err(Error::Shape(format!(
                "encoder: image {}x{}x{} does not match config {}x{}x{}",
                img.h, img.w, img.c, self.cfg.img_h, self.cfg.img_w, self.cfg.img_c
            )));
        }
        let mut x: Vec<S> = img.data.iter().map(|&v| S::from_f32(v)).collect();
        let (mut h, mut w) = (img.h, img.w);
        let mut inputs = Vec::with_capacity(self.encoder.len());
        let mut pres = Vec::with_capacity(self.encoder.len());
        for (li, conv) in self.encoder.iter().enumerate() {
            inputs.push((x.clone(), h, w));
            let pre = conv.forward(&x, h, w)?;
            (h, w) = conv.out_size(h, w);
            x = if li + 1 == self.encoder.len() { pre.clone() } else { self.activate(&pre) };
            pres.push(pre);
        }
        Ok(ConvStackTrace { inputs, pres, output: x })
    }

    /// Accumulate encoder parameter gradients into `out` (conv-major,
    /// weights then bias). The image itself receives no gradient.
    fn encoder_backward(&self, trace: &ConvStackTrace<S>, d_out: &[S], out: &mut [S]) -> Result<()> {
        let mut dy = d_out.to_vec();
        let mut offset = out.len();
        for (li, conv) in self.encoder.iter().enumerate().rev() {
            if li + 1 != self.encoder.len() {
                dy = self.activate_backward(&trace.pres[li], &dy);
            }
            let (x, h, w) = &trace.inputs[li];
            let g = conv.backward(x, *h, *w, &dy)?;
            offset -= conv.param_count();
            accumulate(&mut out[offset..], &g.dw, &g.db);
            dy = g.dx;
        }
        debug_assert_eq!(offset, 0);
        Ok(())
    }

    /// Data-dependent initialization of the key head: recenter each key
    /// channel's logits over `images` and rescale them to `target_std`.
    ///
    /// The conv stack's small-variance start leaves the key logits hugging
    /// whatever offset the hidden features' mean induces, so the squash
    /// parks each channel on one side of 0.5 and the key axis's outer cells
    /// start starved. Matching the logits' first two moments to the actual
    /// data spreads every channel over the whole axis from step one.
    pub fn calibrate_keys(&mut self, images: &[ImageBuf], target_std: f64) -> Result<()> {
        if images.is_empty() {
            return Err(Error::Data("calibrate_keys: empty calibration set".into()));
        }
        if !target_std.is_finite() || target_std <= 0.0 {
            return Err(Error::Config(format!("calibrate_keys: bad target std {target_std}")));
        }
        let c = self.cfg.key_c();
        let (mut sum, mut sq) = (vec![0f64; c], vec![0f64; c]);
        let mut n = 0usize;
        for img in images {
            let logits = self.encoder_forward(img)?.output;
            n += logits.len() / c;
            for (p, &z) in logits.iter().enumerate() {
                let z = z.to_f64();
                sum[p % c] += z;
                sq[p % c] += z * z;
            }
        }
        let conv = self.encoder.last_mut().expect("encoder is never empty");
        let dim = conv.w.len() / conv.out_c;
        for ch in 0..c {
            let mean = sum[ch] / n as f64;
            let sigma = (sq[ch] / n as f64 - mean * mean).max(0.0).sqrt();
            // A flat channel cannot be rescaled into shape; recenter it as is.
            let scale = if sigma > 1e-8 { target_std / sigma } else { 1.0 };
            for v in &mut conv.w[ch * dim..(ch + 1) * dim] {
                *v = S::from_f64(v.to_f64() * scale);
            }
            conv.b[ch] = S::from_f64((conv.b[ch].to_f64() - mean) * scale);
        }
        Ok(())
    }

    /// Noise-free key codes for an image.
    pub fn keys(&self, img: &ImageBuf) -> Result<KeyCodeGrid<S>> {
        let trace = self.encoder_forward(img)?;
        Ok(KeyCodeGrid {
            h: self.cfg.key_h,
            w: self.cfg.key_w,
            c: self.cfg.key_c(),
            data: sigmoid(&trace.output),
        })
    }

    // ---- decoder ----

    fn decoder_forward(&self, block: &[S]) -> Result<ConvStackTrace<S>> {
        let mut x = block.to_vec();
        let (mut h, mut w) = (self.cfg.block_h, self.cfg.block_w);
        let mut inputs = Vec::with_capacity(self.decoder.len());
        let mut pres = Vec::with_capacity(self.decoder.len());
        for (li, stage) in self.decoder.iter().enumerate() {
            if stage.upsample_before {
                x = upsample2x(&x, h, w, stage.conv.in_c);
                h *= 2;
                w *= 2;
            }
            inputs.push((x.clone(), h, w));
            let pre = stage.conv.forward(&x, h, w)?;
            x = if li + 1 == self.decoder.len() { pre.clone() } else { self.activate(&pre) };
            pres.push(pre);
        }
        Ok(ConvStackTrace { inputs, pres, output: x })
    }

    /// Accumulate decoder parameter gradients into `out` and return the
    /// gradient with respect to the feature block.
    fn decoder_backward(
        &self,
        trace: &ConvStackTrace<S>,
        d_out: &[S],
        out: &mut [S],
    ) -> Result<Vec<S>> {
        let mut dy = d_out.to_vec();
        let mut offset = out.len();
        for (li, stage) in self.decoder.iter().enumerate().rev() {
            if li + 1 != self.decoder.len() {
                dy = self.activate_backward(&trace.pres[li], &dy);
            }
            let (x, h, w) = &trace.inputs[li];
            let g = stage.conv.backward(x, *h, *w, &dy)?;
            offset -= stage.conv.param_count();
            accumulate(&mut out[offset..], &g.dw, &g.db);
            dy = g.dx;
            if stage.upsample_before {
                dy = upsample2x_backward(&dy, h / 2, w / 2, stage.conv.in_c);
            }
        }
        debug_assert_eq!(offset, 0);
        Ok(dy)
    }

    // ---- full passes ----

    /// Noise-free reconstruction of an image (unclamped decoder output).
    pub fn infer(&self, img: &ImageBuf) -> Result<Vec<S>> {
        self.infer_with_jitter(img, None)
    }

    /// Forward pass with an optional deterministic key-jitter plan; used by
    /// evaluation-time perturbation sweeps.
    pub fn infer_with_jitter(&self, img: &ImageBuf, jitter: Option<&KeyJitter>) -> Result<Vec<S>> {
        self.decode_keys(&self.keys(img)?, jitter)
    }

    /// Decoder half on its own: key-code grid in, raw image tensor out.
    /// [`infer`](Model::infer) is exactly `decode_keys(keys(img), None)`, so
    /// codes written to disk and decoded later reproduce the in-memory
    /// reconstruction bit for bit.
    pub fn decode_keys(&self, keys: &KeyCodeGrid<S>, jitter: Option<&KeyJitter>) -> Result<Vec<S>> {
        if (keys.h, keys.w, keys.c) != (self.cfg.key_h, self.cfg.key_w, self.cfg.key_c()) {
            return Err(Error::Shape(format!(
                "key grid {}x{}x{} does not match the checkpoint's {}x{}x{}",
                keys.h,
                keys.w,
                keys.c,
                self.cfg.key_h,
                self.cfg.key_w,
                self.cfg.key_c()
            )));
        }
        let tiled = tile_interleave(keys, self.cfg.block_h, self.cfg.block_w)?;
        let block = assemble_feature_block(&tiled, &self.groups, jitter)?;
        Ok(self.decoder_forward(&block.data)?.output)
    }

    /// One training sample: forward through the whole chain, weighted L2
    /// loss against the input, backward into every parameter group. `noise`
    /// carries the per-sample RNG and the jitter distribution; queries are
    /// generated in row-major cell order with groups innermost, so a given
    /// RNG state always produces the same jitter plan.
    pub fn sample_pass(
        &self,
        img: &ImageBuf,
        mut noise: Option<(&mut ChaCha8Rng, JitterDist)>,
    ) -> Result<SamplePass<S>> {
        let cfg = &self.cfg;
        let (bh, bw) = (cfg.block_h, cfg.block_w);
        let (n_groups, key_len, out_dim) = (cfg.grid.n_groups, cfg.grid.key_len, cfg.grid.out_dim);
        let block_c = cfg.block_c();

        // Forward: encoder → keys → tiled queries → grid features → decoder.
        let enc_trace = self.encoder_forward(img)?;
        let key_data = sigmoid(&enc_trace.output);
        let keys = KeyCodeGrid { h: cfg.key_h, w: cfg.key_w, c: cfg.key_c(), data: key_data };
        let tiled = tile_interleave(&keys, bh, bw)?;

        let mut samples = Vec::with_capacity(bh * bw * n_groups);
        let mut block = vec![S::zero(); bh * bw * block_c];
        for i in 0..bh {
            for j in 0..bw {
                for (g, group) in self.groups.iter().enumerate() {
                    let qs = match noise.as_mut() {
                        Some((rng, dist)) => {
                            make_query(&tiled, i, j, g, key_len, Some((&mut **rng, *dist)))?
                        }
                        None => make_query::<S, ChaCha8Rng>(&tiled, i, j, g, key_len, None)?,
                    };
                    let feat = grid::encode_feature(group, &qs.q)?;
                    let base = (i * bw + j) * block_c + g * out_dim;
                    block[base..base + out_dim].copy_from_slice(&feat);
                    samples.push(qs);
                }
            }
        }

        let dec_trace = self.decoder_forward(&block)?;
        let target: Vec<S> = img.data.iter().map(|&v| S::from_f32(v)).collect();
        let (loss, d_recon) =
            crate::nn::l2_loss(&dec_trace.output, &target, S::from_f64(cfg.loss_weight))?;

        // Backward.
        let mut grads = GradAccum::zeros(self);
        let d_block = self.decoder_backward(&dec_trace, &d_recon, &mut grads.decoder)?;

        let table_offsets = self.table_offsets();
        let mlp_offsets = self.mlp_offsets();
        let mut d_tiled = vec![S::zero(); bh * bw * cfg.key_c()];
        for i in 0..bh {
            for j in 0..bw {
                for (g, group) in self.groups.iter().enumerate() {
                    let qs = &samples[(i * bw + j) * n_groups + g];
                    let base = (i * bw + j) * block_c + g * out_dim;
                    let bundle = grid::backward(group, &qs.q, &d_block[base..base + out_dim])?;
                    scatter_bundle(
                        &bundle,
                        group,
                        &table_offsets[g],
                        mlp_offsets[g],
                        &mut grads.tables,
                        &mut grads.mlps,
                    );
                    // Jitter-clamped components sit on the domain boundary
                    // and pass nothing back to the keys.
                    for (t, &dk) in bundle.key_grad.iter().enumerate() {
                        if !qs.clamped[t] {
                            d_tiled[(i * bw + j) * cfg.key_c() + g * key_len + t] += dk;
                        }
                    }
                }
            }
        }

        // De-tile: each source key cell is replicated over an fh x fw block,
        // so its gradient is the sum over those positions.
        let (fh, fw) = (bh / cfg.key_h, bw / cfg.key_w);
        let mut d_keys = vec![S::zero(); keys.data.len()];
        for i in 0..bh {
            for j in 0..bw {
                let src = ((i / fh) * cfg.key_w + j / fw) * cfg.key_c();
                for t in 0..cfg.key_c() {
                    d_keys[src + t] += d_tiled[(i * bw + j) * cfg.key_c() + t];
                }
            }
        }

        let d_raw = sigmoid_backward(&keys.data, &d_keys);
        self.encoder_backward(&enc_trace, &d_raw, &mut grads.encoder)?;

        Ok(SamplePass { loss, grads })
    }

    // ---- parameter flattening ----

    pub fn group_len(&self, g: ParamGroup) -> usize {
        match g {
            ParamGroup::Encoder => self.encoder.iter().map(|c| c.param_count()).sum(),
            ParamGroup::Decoder => self.decoder.iter().map(|s| s.conv.param_count()).sum(),
            ParamGroup::Tables => self.groups.iter().map(|g| g.table_param_count()).sum(),
            ParamGroup::Mlps => self.groups.iter().map(|g| g.mlp_param_count()).sum(),
        }
    }

    /// Flat copy of one parameter group. The layout is the contract shared
    /// with [`GradAccum`]: convs as weights-then-bias in stack order, tables
    /// as levels in group order, MLPs as hidden-w/hidden-b/out-w/out-b per
    /// group.
    pub fn collect_group(&self, g: ParamGroup) -> Vec<S> {
        let mut out = Vec::with_capacity(self.group_len(g));
        match g {
            ParamGroup::Encoder => {
                for c in &self.encoder {
                    out.extend_from_slice(&c.w);
                    out.extend_from_slice(&c.b);
                }
            }
            ParamGroup::Decoder => {
                for s in &self.decoder {
                    out.extend_from_slice(&s.conv.w);
                    out.extend_from_slice(&s.conv.b);
                }
            }
            ParamGroup::Tables => {
                for gr in &self.groups {
                    for level in &gr.levels {
                        out.extend_from_slice(&level.entries);
                    }
                }
            }
            ParamGroup::Mlps => {
                for gr in &self.groups {
                    out.extend_from_slice(&gr.mlp_hidden.w);
                    out.extend_from_slice(&gr.mlp_hidden.b);
                    out.extend_from_slice(&gr.mlp_out.w);
                    out.extend_from_slice(&gr.mlp_out.b);
                }
            }
        }
        out
    }

    /// Write one flat parameter group back; inverse of [`Self::collect_group`].
    pub fn set_group(&mut self, g: ParamGroup, flat: &[S]) -> Result<()> {
        if flat.len() != self.group_len(g) {
            return Err(Error::Shape(format!(
                "set_group: {} values for a group of {}",
                flat.len(),
                self.group_len(g)
            )));
        }
        let mut pos = 0;
        let mut take = |n: usize, dst: &mut [S]| {
            dst.copy_from_slice(&flat[pos..pos + n]);
            pos += n;
        };
        match g {
            ParamGroup::Encoder => {
                for c in &mut self.encoder {
                    take(c.w.len(), &mut c.w);
                    take(c.b.len(), &mut c.b);
                }
            }
            ParamGroup::Decoder => {
                for s in &mut self.decoder {
                    take(s.conv.w.len(), &mut s.conv.w);
                    take(s.conv.b.len(), &mut s.conv.b);
                }
            }
            ParamGroup::Tables => {
                for gr in &mut self.groups {
                    for level in &mut gr.levels {
                        take(level.entries.len(), &mut level.entries);
                    }
                }
            }
            ParamGroup::Mlps => {
                for gr in &mut self.groups {
                    take(gr.mlp_hidden.w.len(), &mut gr.mlp_hidden.w);
                    take(gr.mlp_hidden.b.len(), &mut gr.mlp_hidden.b);
                    take(gr.mlp_out.w.len(), &mut gr.mlp_out.w);
                    take(gr.mlp_out.b.len(), &mut gr.mlp_out.b);
                }
            }
        }
        Ok(())
    }

    /// Flat offset of each (group, level) table in the Tables layout.
    fn table_offsets(&self) -> Vec<Vec<usize>> {
        let mut offset = 0;
        self.groups
            .iter()
            .map(|gr| {
                gr.levels
                    .iter()
                    .map(|l| {
                        let o = offset;
                        offset += l.entries.len();
                        o
                    })
                    .collect()
            })
            .collect()
    }

    /// Flat offset of each group's MLP slab in the Mlps layout.
    fn mlp_offsets(&self) -> Vec<usize> {
        let mut offset = 0;
        self.groups
            .iter()
            .map(|gr| {
                let o = offset;
                offset += gr.mlp_param_count();
                o
            })
            .collect()
    }
}

fn accumulate<S: Scalar>(out: &mut [S], dw: &[S], db: &[S]) {
    for (o, &v) in out.iter_mut().zip(dw.iter().chain(db)) {
        *o += v;
    }
}

fn scatter_bundle<S: Scalar>(
    bundle: &GradientBundle<S>,
    group: &HashTableGroup<S>,
    level_offsets: &[usize],
    mlp_offset: usize,
    tables: &mut [S],
    mlps: &mut [S],
) {
    let entry_dim = group.cfg.entry_dim;
    for (l, pairs) in bundle.table.iter().enumerate() {
        let base = level_offsets[l];
        for (slot, d) in pairs {
            let at = base + slot * entry_dim;
            for (o, &v) in tables[at..at + entry_dim].iter_mut().zip(d) {
                *o += v;
            }
        }
    }
    let mut pos = mlp_offset;
    for part in [&bundle.mlp_hidden_w, &bundle.mlp_hidden_b, &bundle.mlp_out_w, &bundle.mlp_out_b] {
        for (o, &v) in mlps[pos..pos + part.len()].iter_mut().zip(part.iter()) {
            *o += v;
        }
        pos += part.len();
    }
}
