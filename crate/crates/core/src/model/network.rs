use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::volume::{FeatureVolume, VolumeSpace};
use super::{BoundParams, ModelConfig, ModelError, ParamStore, Result, TemporalMode};
use crate::attention::{mhsa_tokens, msta_map, AttentionConfig, MhsaVars, MstaVars};
use crate::data::{EchoSequence, ValueSpace, PIXEL_MAX};
use crate::sampling::{apply_prompts, FrameSource, PromptMask};
use crate::tensor::{ConvSpec, Element, Tape, Tensor, Var};

/// Decoder prompts: future frames with the hidden ones zeroed, and which
/// frames are visible.
#[derive(Debug, Clone, PartialEq)]
pub struct Prompts {
    frames: EchoSequence,
    mask: PromptMask,
}

impl Prompts {
    /// Copies the kept frames out of `targets`; hidden frames are never read.
    pub fn from_source<S: FrameSource + ?Sized>(targets: &S, mask: PromptMask) -> Result<Self> {
        let frames =
            apply_prompts(targets, &mask).map_err(|e| ModelError::Contract(e.to_string()))?;
        Ok(Self { frames, mask })
    }

    /// The inference condition: every frame hidden.
    pub fn hidden(k: usize, h: usize, w: usize) -> Result<Self> {
        let frames = EchoSequence::zeros(k, h, w, ValueSpace::Pixel)
            .map_err(|e| ModelError::Contract(e.to_string()))?;
        Ok(Self {
            frames,
            mask: PromptMask::all_hidden(k),
        })
    }

    pub fn frames(&self) -> &EchoSequence {
        &self.frames
    }

    pub fn mask(&self) -> &PromptMask {
        &self.mask
    }
}

/// Network weights plus the configuration that shapes them.
#[derive(Debug, Clone, PartialEq)]
pub struct TempEE<T: Element = f32> {
    config: ModelConfig,
    params: ParamStore<T>,
}

const HEAD_GAIN: f64 = 0.02;

/// How a parameter is initialised.
#[derive(Clone, Copy)]
enum Init {
    Zeros,
    Ones,
    /// Normal with std `gain / √fan_in`.
    Normal {
        fan_in: usize,
        gain: f64,
    },
}

fn layout(cfg: &ModelConfig) -> Vec<(String, Vec<usize>, Init)> {
    let (d, p2, k) = (cfg.d_model, cfg.patch * cfg.patch, cfg.k_out);
    let dn = cfg.folded_channels();
    let mut out = Vec::new();
    let mut push = |name: String, shape: Vec<usize>, init: Init| out.push((name, shape, init));
    let lin = |fan_in: usize| Init::Normal { fan_in, gain: 1.0 };
    // residual branch outputs start small so deep stacks begin near identity
    let branch = |fan_in: usize, blocks: usize| Init::Normal {
        fan_in,
        gain: 1.0 / (2.0 * blocks.max(1) as f64).sqrt(),
    };
    let norm = |push: &mut dyn FnMut(String, Vec<usize>, Init), pre: &str, c: usize| {
        push(format!("{pre}.g"), vec![c], Init::Ones);
        push(format!("{pre}.b"), vec![c], Init::Zeros);
    };

    push("embed.w".into(), vec![p2, d], lin(p2));
    for (stage, blocks, c, conv_dims) in [("te", cfg.te_blocks, d, 3), ("se", cfg.se_blocks, dn, 2)]
    {
        for i in 0..blocks {
            let pre = format!("{stage}.{i}");
            norm(&mut push, &format!("{pre}.ln1"), c);
            for m in ["wq", "wk", "wv"] {
                push(format!("{pre}.attn.{m}"), vec![c, c], lin(c));
            }
            push(format!("{pre}.attn.wp"), vec![c, c], branch(c, blocks));
            norm(&mut push, &format!("{pre}.ln2"), c);
            let mut kshape = vec![c, c];
            kshape.extend(std::iter::repeat_n(3, conv_dims));
            let fan = c * 3usize.pow(conv_dims as u32);
            push(format!("{pre}.ffn.w"), kshape, branch(fan, blocks));
            push(format!("{pre}.ffn.b"), vec![c], Init::Zeros);
        }
    }
    let dec_in = 2 * dn + cfg.prompt_channels() * k;
    push("dec_in.w".into(), vec![dec_in, d], lin(dec_in));
    push("dec_in.b".into(), vec![d], Init::Zeros);
    for i in 0..cfg.tsd_blocks {
        let pre = format!("tsd.{i}");
        norm(&mut push, &format!("{pre}.ln1"), d);
        for m in ["q1", "k1", "v1", "q2", "k2", "v2", "wm"] {
            push(format!("{pre}.msta.{m}"), vec![d, d], lin(d));
        }
        push(
            format!("{pre}.msta.wn"),
            vec![d, d],
            branch(d, cfg.tsd_blocks),
        );
        norm(&mut push, &format!("{pre}.ln2"), d);
        push(
            format!("{pre}.ffn.w"),
            vec![d, d, 3, 3],
            branch(9 * d, cfg.tsd_blocks),
        );
        push(format!("{pre}.ffn.b"), vec![d], Init::Zeros);
    }
    norm(&mut push, "head.ln", d);
    // predictions start near zero instead of at unit-scale noise
    push(
        "head.w".into(),
        vec![d, p2 * k],
        Init::Normal {
            fan_in: d,
            gain: HEAD_GAIN,
        },
    );
    push("head.b".into(), vec![p2 * k], Init::Zeros);
    out
}

impl<T: Element> TempEE<T> {
    /// Random initialisation, reproducible from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        for (name, shape, init) in layout(&config) {
            let t = match init {
                Init::Zeros => Tensor::zeros(&shape),
                Init::Ones => Tensor::full(&shape, T::ONE),
                Init::Normal { fan_in, gain } => {
                    Tensor::randn(&shape, gain / (fan_in as f64).sqrt(), &mut rng)
                }
            };
            params.insert(name, t);
        }
        Ok(Self { config, params })
    }

    /// Wraps existing weights after checking names and shapes.
    pub fn from_parts(config: ModelConfig, params: ParamStore<T>) -> Result<Self> {
        config.validate()?;
        let expected = layout(&config);
        if expected.len() != params.len() {
            return Err(ModelError::Config(format!(
                "expected {} parameters, got {}",
                expected.len(),
                params.len()
            )));
        }
        for (name, shape, _) in &expected {
            match params.get(name) {
                Some(t) if t.shape() == shape.as_slice() => {}
                Some(t) => {
                    return Err(ModelError::Config(format!(
                        "parameter {name} has shape {:?}, expected {shape:?}",
                        t.shape()
                    )))
                }
                None => return Err(ModelError::Config(format!("missing parameter {name}"))),
            }
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn into_params(self) -> ParamStore<T> {
        self.params
    }

    pub fn cast<U: Element>(&self) -> TempEE<U> {
        TempEE {
            config: self.config.clone(),
            params: self.params.cast(),
        }
    }

    /// Zeroes the last projection of every residual branch, turning each
    /// encoder and decoder block into the identity.
    pub fn zero_residual_branches(&mut self) {
        for (name, t) in self.params.iter_mut() {
            let last = name.ends_with(".attn.wp")
                || name.ends_with(".msta.wn")
                || name.ends_with(".ffn.w")
                || name.ends_with(".ffn.b");
            if last {
                t.data_mut().fill(T::ZERO);
            }
        }
    }

    /// Predicts `k_out` pixel frames from `n_in` observed pixel frames in
    /// one forward pass. Values are clamped to `[0, 255]`.
    pub fn extrapolate(&self, obs: &EchoSequence, prompts: &Prompts) -> Result<EchoSequence> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape, false);
        let out = self.forward_tape(&mut tape, &bound, obs, prompts)?;
        let cfg = &self.config;
        let values = tape
            .value(out)
            .data()
            .iter()
            .map(|v| (v.to_f64() * PIXEL_MAX).clamp(0.0, PIXEL_MAX) as f32)
            .collect();
        EchoSequence::new(
            values,
            cfg.k_out,
            cfg.image_edge,
            cfg.image_edge,
            ValueSpace::Pixel,
        )
        .map_err(|e| ModelError::Contract(e.to_string()))
    }

    /// Records the network on `tape`. Returns the unclamped prediction
    /// `(k, H, W)` in units of 255 pixel levels.
    pub fn forward_tape(
        &self,
        tape: &mut Tape<T>,
        params: &BoundParams,
        obs: &EchoSequence,
        prompts: &Prompts,
    ) -> Result<Var> {
        let cfg = &self.config;
        self.check_frames("observation", obs, cfg.n_in)?;
        self.check_frames("prompt", prompts.frames(), cfg.k_out)?;
        let x = tape.constant(normalized(obs)?);
        let pr = tape.constant(normalized(prompts.frames())?);
        self.forward_vars(tape, params, x, pr, prompts.mask().keep())
    }

    fn check_frames(&self, what: &str, seq: &EchoSequence, frames: usize) -> Result<()> {
        let edge = self.config.image_edge;
        if seq.len() != frames || seq.height() != edge || seq.width() != edge {
            return Err(ModelError::Contract(format!(
                "{what} must be {frames}×{edge}×{edge}, got {}×{}×{}",
                seq.len(),
                seq.height(),
                seq.width()
            )));
        }
        if seq.value_space != ValueSpace::Pixel {
            return Err(ModelError::Contract(format!(
                "{what} frames must be in pixel space"
            )));
        }
        Ok(())
    }

    /// Network body on tape inputs scaled to `[0, 1]`: observations
    /// `(n, H, W)` and prompt frames `(k, H, W)` with hidden frames zeroed.
    pub fn forward_vars(
        &self,
        tape: &mut Tape<T>,
        p: &BoundParams,
        obs: Var,
        prompt_frames: Var,
        keep: &[bool],
    ) -> Result<Var> {
        let emb = self.embed(tape, p, obs)?;
        let enc = self.encode(tape, p, emb)?;
        let prompts = self.prompt_features(tape, prompt_frames, keep)?;
        let z = self.decode(tape, p, enc, prompts)?;
        unpatchify(tape, z, self.config.patch, self.config.k_out)
    }

    /// `(n, H, W)` → `(n, gh, gw, d)`
    fn embed(&self, tape: &mut Tape<T>, p: &BoundParams, frames: Var) -> Result<Var> {
        let patches = patchify(tape, frames, self.config.patch)?;
        Ok(tape.matmul(patches, p.get("embed.w"))?)
    }

    /// Runs both encoders on `(n, gh, gw, d)` and returns the concatenated
    /// folded features `(gh, gw, 2·d·n)`.
    fn encode(&self, tape: &mut Tape<T>, p: &BoundParams, emb: Var) -> Result<Var> {
        let te = self.temporal_encoder(tape, p, emb)?;
        let te = fold(tape, te)?;
        let folded = fold(tape, emb)?;
        let se = self.spatial_encoder(tape, p, folded)?;
        Ok(tape.concat(&[te, se], 2)?)
    }

    fn temporal_encoder(&self, tape: &mut Tape<T>, p: &BoundParams, mut x: Var) -> Result<Var> {
        let cfg = &self.config;
        let att = branch_attention(&cfg.attention);
        for i in 0..cfg.te_blocks {
            let pre = format!("te.{i}");
            let &[n, gh, gw, d] = tape.shape(x) else {
                return Err(ModelError::Contract(
                    "temporal input must be (t, h, w, c)".into(),
                ));
            };
            let h = layer_norm(tape, p, &format!("{pre}.ln1"), x, cfg.ln_eps)?;
            let a = match cfg.temporal_mode {
                TemporalMode::PerPosition => {
                    let tokens = tape.reshape(h, &[n, gh * gw, d])?;
                    let tokens = tape.permute(tokens, &[1, 0, 2])?;
                    let (a, _) = mhsa_tokens(tape, tokens, &mhsa_vars(p, &pre), &att)?;
                    let a = tape.permute(a, &[1, 0, 2])?;
                    tape.reshape(a, &[n, gh, gw, d])?
                }
                TemporalMode::Joint => {
                    let tokens = tape.reshape(h, &[1, n * gh * gw, d])?;
                    let (a, _) = mhsa_tokens(tape, tokens, &mhsa_vars(p, &pre), &att)?;
                    tape.reshape(a, &[n, gh, gw, d])?
                }
            };
            x = tape.add(x, a)?;
            let f = conv_ffn(tape, p, &pre, x, 3, cfg.ln_eps)?;
            x = tape.add(x, f)?;
        }
        Ok(x)
    }

    /// Blocks over a folded map `(gh, gw, c)`.
    fn spatial_encoder(&self, tape: &mut Tape<T>, p: &BoundParams, mut x: Var) -> Result<Var> {
        let cfg = &self.config;
        let att = branch_attention(&cfg.attention);
        for i in 0..cfg.se_blocks {
            let pre = format!("se.{i}");
            let &[gh, gw, c] = tape.shape(x) else {
                return Err(ModelError::Contract(
                    "spatial input must be (h, w, c)".into(),
                ));
            };
            let h = layer_norm(tape, p, &format!("{pre}.ln1"), x, cfg.ln_eps)?;
            let tokens = tape.reshape(h, &[1, gh * gw, c])?;
            let (a, _) = mhsa_tokens(tape, tokens, &mhsa_vars(p, &pre), &att)?;
            let a = tape.reshape(a, &[gh, gw, c])?;
            x = tape.add(x, a)?;
            let f = conv_ffn(tape, p, &pre, x, 2, cfg.ln_eps)?;
            x = tape.add(x, f)?;
        }
        Ok(x)
    }

    /// `(k, H, W)` frames → folded `(gh, gw, (p²+1)·k)`: patch pixels plus a
    /// visibility flag per frame. Hidden frames contribute zeros.
    fn prompt_features(&self, tape: &mut Tape<T>, frames: Var, keep: &[bool]) -> Result<Var> {
        let k = self.config.k_out;
        if keep.len() != k {
            return Err(ModelError::Contract(format!(
                "prompt mask has {} entries for {k} frames",
                keep.len()
            )));
        }
        let patches = patchify(tape, frames, self.config.patch)?;
        let &[_, gh, gw, _] = tape.shape(patches) else {
            unreachable!("patchify returns rank 4")
        };
        let mut gate = Vec::with_capacity(k * gh * gw);
        for &kept in keep {
            gate.extend(std::iter::repeat_n(
                if kept { T::ONE } else { T::ZERO },
                gh * gw,
            ));
        }
        let gate = tape.constant(Tensor::from_vec(&[k, gh, gw, 1], gate)?);
        let p2 = self.config.patch * self.config.patch;
        let gate_wide = {
            let g = tape.value(gate).data().to_vec();
            let wide = g.iter().flat_map(|&v| std::iter::repeat_n(v, p2)).collect();
            tape.constant(Tensor::from_vec(&[k, gh, gw, p2], wide)?)
        };
        let visible = tape.mul(patches, gate_wide)?;
        let feats = tape.concat(&[visible, gate], 3)?;
        fold(tape, feats)
    }

    /// Decoder input projection, MSTA blocks and the head. Returns
    /// `(gh, gw, p²·k)` in folded order (channel `pixel·k + frame`).
    fn decode(&self, tape: &mut Tape<T>, p: &BoundParams, enc: Var, prompts: Var) -> Result<Var> {
        let cfg = &self.config;
        let want = 2 * cfg.folded_channels();
        let got = *tape.shape(enc).last().unwrap_or(&0);
        if got != want {
            return Err(ModelError::Config(format!(
                "decoder expects {want} encoder channels, got {got}"
            )));
        }
        let joined = tape.concat(&[enc, prompts], 2)?;
        let z = tape.matmul(joined, p.get("dec_in.w"))?;
        let mut x = tape.add_bias(z, p.get("dec_in.b"))?;
        let att = branch_attention(&cfg.attention);
        for i in 0..cfg.tsd_blocks {
            let pre = format!("tsd.{i}");
            let h = layer_norm(tape, p, &format!("{pre}.ln1"), x, cfg.ln_eps)?;
            let m = msta_map(tape, h, &msta_vars(p, &pre), &att)?;
            x = tape.add(x, m.out)?;
            let f = conv_ffn(tape, p, &pre, x, 2, cfg.ln_eps)?;
            x = tape.add(x, f)?;
        }
        let h = layer_norm(tape, p, "head.ln", x, cfg.ln_eps)?;
        let y = tape.matmul(h, p.get("head.w"))?;
        Ok(tape.add_bias(y, p.get("head.b"))?)
    }

    fn run<F>(&self, f: F) -> Result<Tensor<T>>
    where
        F: FnOnce(&mut Tape<T>, &BoundParams) -> Result<Var>,
    {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape, false);
        let out = f(&mut tape, &bound)?;
        Ok(tape.value(out).clone())
    }

    /// Embeds pixel frames into a temporal volume `(d, n, H/p, W/p)`. Any
    /// frame count and any extents divisible by the patch are accepted.
    pub fn patch_embed(&self, frames: &EchoSequence) -> Result<FeatureVolume<T>> {
        if frames.value_space != ValueSpace::Pixel {
            return Err(ModelError::Contract("frames must be in pixel space".into()));
        }
        let x = normalized(frames)?;
        let out = self.run(|tape, p| {
            let x = tape.constant(x);
            self.embed(tape, p, x)
        })?;
        FeatureVolume::from_channel_last(&out, VolumeSpace::Temporal)
    }

    pub fn te_forward(&self, x: &FeatureVolume<T>) -> Result<FeatureVolume<T>> {
        if x.space != VolumeSpace::Temporal || x.channels() != self.config.d_model {
            return Err(ModelError::Contract(format!(
                "temporal encoder needs a temporal volume with {} channels, got {:?} with {}",
                self.config.d_model,
                x.space,
                x.channels()
            )));
        }
        let input = x.to_channel_last()?;
        let out = self.run(|tape, p| {
            let v = tape.constant(input);
            self.temporal_encoder(tape, p, v)
        })?;
        FeatureVolume::from_channel_last(&out, VolumeSpace::Temporal)
    }

    /// Accepts a folded (rectified or spatial) volume of `d·n` channels.
    pub fn se_forward(&self, x: &FeatureVolume<T>) -> Result<FeatureVolume<T>> {
        let want = self.config.folded_channels();
        if x.space == VolumeSpace::Temporal || x.channels() != want {
            return Err(ModelError::Contract(format!(
                "spatial encoder needs a folded volume with {want} channels, got {:?} with {}",
                x.space,
                x.channels()
            )));
        }
        let input = x.to_channel_last()?;
        let out = self.run(|tape, p| {
            let v = tape.constant(input);
            self.spatial_encoder(tape, p, v)
        })?;
        FeatureVolume::from_channel_last(&out, x.space)
    }

    /// Both encoders on an embedded volume; the result concatenates the
    /// rectified temporal branch and the spatial branch on channels.
    pub fn encode_volume(&self, emb: &FeatureVolume<T>) -> Result<FeatureVolume<T>> {
        if emb.space != VolumeSpace::Temporal {
            return Err(ModelError::Contract(
                "encoders need a temporal volume".into(),
            ));
        }
        let input = emb.to_channel_last()?;
        let out = self.run(|tape, p| {
            let v = tape.constant(input);
            self.encode(tape, p, v)
        })?;
        FeatureVolume::from_channel_last(
            &out,
            VolumeSpace::Rectified {
                time: self.config.n_in,
            },
        )
    }

    /// Folded prompt features `((p²+1)·k, gh, gw)`.
    pub fn prompt_volume(&self, prompts: &Prompts) -> Result<FeatureVolume<T>> {
        let x = normalized(prompts.frames())?;
        let out = self.run(|tape, _| {
            let v = tape.constant(x);
            self.prompt_features(tape, v, prompts.mask().keep())
        })?;
        FeatureVolume::from_channel_last(
            &out,
            VolumeSpace::Rectified {
                time: self.config.k_out,
            },
        )
    }

    /// Decoder and head. Returns a rectified volume holding `p²` values per
    /// frame and cell, in units of 255 pixel levels.
    pub fn tsd_forward(
        &self,
        enc: &FeatureVolume<T>,
        prompts: &FeatureVolume<T>,
    ) -> Result<FeatureVolume<T>> {
        if enc.space == VolumeSpace::Temporal || prompts.space == VolumeSpace::Temporal {
            return Err(ModelError::Contract(
                "decoder inputs must be folded volumes".into(),
            ));
        }
        let (e, q) = (enc.to_channel_last()?, prompts.to_channel_last()?);
        let out = self.run(|tape, p| {
            let e = tape.constant(e);
            let q = tape.constant(q);
            self.decode(tape, p, e, q)
        })?;
        FeatureVolume::from_channel_last(
            &out,
            VolumeSpace::Rectified {
                time: self.config.k_out,
            },
        )
    }
}

/// Attention settings inside a block: the block adds its own skip.
fn branch_attention(cfg: &AttentionConfig) -> AttentionConfig {
    AttentionConfig {
        residual: false,
        ..cfg.clone()
    }
}

fn mhsa_vars(p: &BoundParams, pre: &str) -> MhsaVars {
    MhsaVars {
        wq: p.get(&format!("{pre}.attn.wq")),
        wk: p.get(&format!("{pre}.attn.wk")),
        wv: p.get(&format!("{pre}.attn.wv")),
        wp: p.get(&format!("{pre}.attn.wp")),
    }
}

fn msta_vars(p: &BoundParams, pre: &str) -> MstaVars {
    let v = |m: &str| p.get(&format!("{pre}.msta.{m}"));
    MstaVars {
        q1: v("q1"),
        k1: v("k1"),
        v1: v("v1"),
        q2: v("q2"),
        k2: v("k2"),
        v2: v("v2"),
        wm: v("wm"),
        wn: v("wn"),
    }
}

fn layer_norm<T: Element>(
    tape: &mut Tape<T>,
    p: &BoundParams,
    pre: &str,
    x: Var,
    eps: f64,
) -> Result<Var> {
    let g = p.get(&format!("{pre}.g"));
    let b = p.get(&format!("{pre}.b"));
    Ok(tape.layer_norm(x, g, b, eps)?)
}

/// `Conv(ReLU(LN(x)))` on a channel-last map with `dims` spatial axes.
fn conv_ffn<T: Element>(
    tape: &mut Tape<T>,
    p: &BoundParams,
    pre: &str,
    x: Var,
    dims: usize,
    eps: f64,
) -> Result<Var> {
    let h = layer_norm(tape, p, &format!("{pre}.ln2"), x, eps)?;
    let h = tape.relu(h);
    let (to_first, to_last): (&[usize], &[usize]) = if dims == 3 {
        (&[3, 0, 1, 2], &[1, 2, 3, 0])
    } else {
        (&[2, 0, 1], &[1, 2, 0])
    };
    let h = tape.permute(h, to_first)?;
    let w = p.get(&format!("{pre}.ffn.w"));
    let b = p.get(&format!("{pre}.ffn.b"));
    let h = tape.conv(h, w, Some(b), ConvSpec::same(dims, 3))?;
    Ok(tape.permute(h, to_last)?)
}

/// `(m, H, W)` → `(m, H/p, W/p, p²)`; pixel `(a, b)` of a patch sits at
/// feature `a·p + b`.
fn patchify<T: Element>(tape: &mut Tape<T>, frames: Var, p: usize) -> Result<Var> {
    let &[m, h, w] = tape.shape(frames) else {
        return Err(ModelError::Contract(format!(
            "expected frames (m, H, W), got {:?}",
            tape.shape(frames)
        )));
    };
    if p == 0 || h % p != 0 || w % p != 0 {
        return Err(ModelError::Tensor(crate::tensor::shape_err(
            "patch_embed",
            format!("{h}×{w} frames are not divisible by patch {p}"),
        )));
    }
    let t = tape.reshape(frames, &[m, h / p, p, w / p, p])?;
    let t = tape.permute(t, &[0, 1, 3, 2, 4])?;
    Ok(tape.reshape(t, &[m, h / p, w / p, p * p])?)
}

/// Folded head output `(gh, gw, p²·k)` → frames `(k, gh·p, gw·p)`.
fn unpatchify<T: Element>(tape: &mut Tape<T>, z: Var, p: usize, k: usize) -> Result<Var> {
    let &[gh, gw, _] = tape.shape(z) else {
        return Err(ModelError::Contract("head output must be (h, w, c)".into()));
    };
    let t = tape.reshape(z, &[gh, gw, p, p, k])?;
    let t = tape.permute(t, &[4, 0, 2, 1, 3])?;
    Ok(tape.reshape(t, &[k, gh * p, gw * p])?)
}

/// `(t, h, w, c)` → `(h, w, c·t)` with channel `c·t_total + t`.
fn fold<T: Element>(tape: &mut Tape<T>, x: Var) -> Result<Var> {
    let &[t, h, w, c] = tape.shape(x) else {
        return Err(ModelError::Contract("fold needs (t, h, w, c)".into()));
    };
    let y = tape.permute(x, &[1, 2, 3, 0])?;
    Ok(tape.reshape(y, &[h, w, c * t])?)
}

fn normalized<T: Element>(seq: &EchoSequence) -> Result<Tensor<T>> {
    let data = seq
        .values()
        .iter()
        .map(|&v| T::from_f64(v as f64 / PIXEL_MAX))
        .collect();
    Ok(Tensor::from_vec(
        &[seq.len(), seq.height(), seq.width()],
        data,
    )?)
}
