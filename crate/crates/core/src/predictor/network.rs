use rand::Rng;

use super::{Ablation, Batch, Forward, ModelConfig, PredictError, SvEncoder, SvLayout, RHO_SCALE, SIGMA_MAX, SIGMA_MIN};
use crate::scene::{Slot, SV_SLOTS};
use crate::tensor::{linear, lstm_cell, ParamSet, ParamVars, Tape, Tensor, TensorError, Var};

const SLOTS: usize = SV_SLOTS.len();

/// Final encoder `h` and `c`, each `[rows, encoder_hidden]`.
#[derive(Debug, Clone, Copy)]
pub struct EncoderState {
    pub h: Var,
    pub c: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct Attention {
    /// `[batch, gat_dim]`.
    pub context: Var,
    /// `[batch, 11]`, zero on empty slots.
    pub alpha: Var,
}

/// Decoder outputs; see [`Forward`].
pub type DecodedVars = Forward;

pub(crate) fn sv_prefix(config: &ModelConfig, slot: usize) -> String {
    match config.sv_encoder {
        SvEncoder::Shared => "sv_enc".into(),
        SvEncoder::PerSlot => format!("sv_enc{slot}"),
    }
}

fn glorot<R: Rng>(p: &mut ParamSet, name: String, shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut R) {
    p.insert_glorot(name, shape, fan_in, fan_out, rng);
}

fn encoder_params<R: Rng>(p: &mut ParamSet, prefix: &str, input: usize, cfg: &ModelConfig, rng: &mut R) {
    let (e, h) = (cfg.embed_dim, cfg.encoder_hidden);
    glorot(p, format!("{prefix}.embed.w"), &[input, e], input, e, rng);
    p.insert_zeros(format!("{prefix}.embed.b"), &[e]);
    glorot(p, format!("{prefix}.lstm.w"), &[e + h, 4 * h], e + h, 4 * h, rng);
    p.insert_zeros(format!("{prefix}.lstm.b"), &[4 * h]);
}

pub(crate) fn init_params<R: Rng>(cfg: &ModelConfig, ablation: &Ablation, rng: &mut R) -> ParamSet {
    let mut p = ParamSet::new();
    let (h, ch) = (cfg.encoder_hidden, ablation.channels);
    encoder_params(&mut p, "ov_enc", ablation.features.ov_width(), cfg, rng);
    if ch.social || ch.attention {
        match cfg.sv_encoder {
            SvEncoder::Shared => encoder_params(&mut p, "sv_enc", ablation.features.sv_width(), cfg, rng),
            SvEncoder::PerSlot => {
                for slot in 0..SLOTS {
                    encoder_params(&mut p, &sv_prefix(cfg, slot), ablation.features.sv_width(), cfg, rng);
                }
            }
        }
    }
    glorot(&mut p, "ch1.w".into(), &[h, cfg.ch1_dim], h, cfg.ch1_dim, rng);
    p.insert_zeros("ch1.b", &[cfg.ch1_dim]);
    if ch.social {
        let (c1, c2) = (cfg.conv1_filters, cfg.conv2_filters);
        glorot(&mut p, "conv1.k".into(), &[c1, h, 2, 2], h * 4, c1 * 4, rng);
        p.insert_zeros("conv1.b", &[c1]);
        glorot(&mut p, "conv2.k".into(), &[c2, c1, 1, 2], c1 * 2, c2 * 2, rng);
        p.insert_zeros("conv2.b", &[c2]);
    }
    if ch.attention {
        let g = cfg.gat_dim;
        glorot(&mut p, "gat.w".into(), &[h, g], h, g, rng);
        glorot(&mut p, "gat.a_sv".into(), &[g, 1], g, 1, rng);
        glorot(&mut p, "gat.a_ov".into(), &[g, 1], g, 1, rng);
    }
    let (ctx, d) = (cfg.context_len(ch), cfg.decoder_hidden);
    glorot(&mut p, "dec.lstm.w".into(), &[ctx + d, 4 * d], ctx + d, 4 * d, rng);
    p.insert_zeros("dec.lstm.b", &[4 * d]);
    // σ and ρ columns start at zero so every step begins as a unit,
    // uncorrelated Gaussian; the mean columns are random.
    glorot(&mut p, "dec.out.w".into(), &[d, 5], d, 5, rng);
    let w = p.get("dec.out.w").expect("just inserted").clone();
    let data = w.data().iter().enumerate().map(|(i, &v)| if i % 5 < 2 { v } else { 0.0 }).collect();
    p.insert("dec.out.w", Tensor::new(vec![d, 5], data).expect("shape"));
    p.insert_zeros("dec.out.b", &[5]);
    p
}

/// Embeds each history step with an FC layer and runs the encoder LSTM over
/// the sequence. `steps` are `[rows, width]` feature matrices in time order.
pub fn encode_vehicle(
    tape: &mut Tape,
    vars: &ParamVars,
    prefix: &str,
    steps: &[Var],
    cfg: &ModelConfig,
) -> Result<EncoderState, TensorError> {
    let (we, be) = (vars.get(&format!("{prefix}.embed.w"))?, vars.get(&format!("{prefix}.embed.b"))?);
    let (wl, bl) = (vars.get(&format!("{prefix}.lstm.w"))?, vars.get(&format!("{prefix}.lstm.b"))?);
    let first = *steps.first().ok_or(TensorError::Invalid {
        op: "encode_vehicle",
        msg: "empty history".into(),
    })?;
    let rows = tape.shape(first)[0];
    let width = tape.shape(we)[0];
    let mut h = tape.leaf(Tensor::zeros(vec![rows, cfg.encoder_hidden]));
    let mut c = tape.leaf(Tensor::zeros(vec![rows, cfg.encoder_hidden]));
    for &x in steps {
        if tape.shape(x) != [rows, width] {
            return Err(crate::tensor::shape_err("encode_vehicle", &[rows, width], tape.shape(x)));
        }
        let e = linear(tape, x, we, be)?;
        let e = tape.leaky_relu(e, cfg.leaky_slope);
        (h, c) = lstm_cell(tape, e, h, c, wl, bl)?;
    }
    Ok(EncoderState { h, c })
}

/// Affine map of the OV's final hidden state.
pub fn channel1(tape: &mut Tape, vars: &ParamVars, h_ov: Var) -> Result<Var, TensorError> {
    let (w, b) = (vars.get("ch1.w")?, vars.get("ch1.b")?);
    linear(tape, h_ov, w, b)
}

/// Places hidden states on the 4×3 grid: `[batch, hidden, 4, 3]`, zeros in
/// empty cells, each OV at its fixed centre cell.
pub fn assemble_social_tensor(
    tape: &mut Tape,
    h_ov: Var,
    h_sv: Option<Var>,
    layout: &SvLayout,
) -> Result<Var, TensorError> {
    let (batch, hidden) = (tape.shape(h_ov)[0], tape.shape(h_ov)[1]);
    let combined = match h_sv {
        Some(h) => tape.concat(&[h_ov, h], 0)?,
        None => h_ov,
    };
    let mut row_of = vec![None; batch * SLOTS];
    for (i, &(b, s)) in layout.rows.iter().enumerate() {
        row_of[b * SLOTS + s] = Some(batch + i);
    }
    let mut index = Vec::with_capacity(batch * hidden * 12);
    for b in 0..batch {
        for ch in 0..hidden {
            for r in 0..4 {
                for c in 0..3 {
                    let slot = Slot::new(crate::scene::Rank::ALL[r], crate::scene::Column::ALL[c]);
                    let row = match slot.sv_index() {
                        None => Some(b),
                        Some(s) => row_of[b * SLOTS + s],
                    };
                    index.push(row.map(|row| row * hidden + ch));
                }
            }
        }
    }
    tape.gather(combined, index, &[batch, hidden, 4, 3])
}

/// conv 2×2 → LeakyReLU → conv 1×2 → LeakyReLU → max-pool 2×1, flattened.
pub fn conv_social_pool(tape: &mut Tape, vars: &ParamVars, social: Var, cfg: &ModelConfig) -> Result<Var, TensorError> {
    let batch = tape.shape(social)[0];
    let x = tape.conv2d(social, vars.get("conv1.k")?, vars.get("conv1.b")?, (1, 1))?;
    let x = tape.leaky_relu(x, cfg.leaky_slope);
    let x = tape.conv2d(x, vars.get("conv2.k")?, vars.get("conv2.b")?, (1, 1))?;
    let x = tape.leaky_relu(x, cfg.leaky_slope);
    let x = tape.max_pool2d(x, (2, 1), (cfg.pool_stride, 1))?;
    let n = tape.value(x).numel() / batch.max(1);
    tape.reshape(x, &[batch, n])
}

/// Additive attention of the OV over its occupied SV slots:
/// `e = LeakyReLU(a_svᵀ W h_sv + a_ovᵀ W h_ov)`, `α = softmax(e)` over
/// occupied slots, context `tanh(Σ α W h_sv)`; zero without SVs.
pub fn graph_attention(
    tape: &mut Tape,
    vars: &ParamVars,
    h_ov: Var,
    h_sv: Option<Var>,
    layout: &SvLayout,
    cfg: &ModelConfig,
) -> Result<Attention, TensorError> {
    let batch = tape.shape(h_ov)[0];
    let w = vars.get("gat.w")?;
    let g = tape.shape(w)[1];
    let Some(h_sv) = h_sv.filter(|_| !layout.rows.is_empty()) else {
        let context = tape.leaf(Tensor::zeros(vec![batch, g]));
        let alpha = tape.leaf(Tensor::zeros(vec![batch, SLOTS]));
        return Ok(Attention { context, alpha });
    };
    let wh_ov = tape.matmul(h_ov, w)?;
    let wh_sv = tape.matmul(h_sv, w)?;
    let s_ov = tape.matmul(wh_ov, vars.get("gat.a_ov")?)?;
    let s_sv = tape.matmul(wh_sv, vars.get("gat.a_sv")?)?;

    let mut row_of = vec![None; batch * SLOTS];
    for (i, &(b, s)) in layout.rows.iter().enumerate() {
        row_of[b * SLOTS + s] = Some(i);
    }
    let e_sv = tape.gather(s_sv, row_of.clone(), &[batch, SLOTS])?;
    let e_ov = tape.gather(s_ov, (0..batch * SLOTS).map(|i| Some(i / SLOTS)).collect(), &[batch, SLOTS])?;
    let e = tape.add(e_sv, e_ov)?;
    let e = tape.leaky_relu(e, cfg.leaky_slope);
    let alpha = tape.softmax(e, Some(&layout.mask()))?;

    let spread: Vec<Option<usize>> = (0..batch * SLOTS * g).map(|i| Some(i / g)).collect();
    let alpha_g = tape.gather(alpha, spread, &[batch, SLOTS, g])?;
    let feats: Vec<Option<usize>> = (0..batch * SLOTS * g).map(|i| row_of[i / g].map(|r| r * g + i % g)).collect();
    let wh = tape.gather(wh_sv, feats, &[batch, SLOTS, g])?;
    let weighted = tape.mul(alpha_g, wh)?;
    let pooled = tape.sum_axis(weighted, 1)?;
    let context = tape.tanh(pooled);
    Ok(Attention { context, alpha })
}

/// Concatenation in channel order 1 ‖ 2 ‖ 3 of the present channels.
pub fn fuse_context(tape: &mut Tape, ch1: Var, ch2: Option<Var>, ch3: Option<Var>) -> Result<Var, TensorError> {
    let parts: Vec<Var> = [Some(ch1), ch2, ch3].into_iter().flatten().collect();
    if parts.len() == 1 {
        return Ok(ch1);
    }
    tape.concat(&parts, 1)
}

/// Runs the decoder LSTM for `future_len` steps with the context as input at
/// every step, mapping each step's readout to `(μ, σ, ρ)`.
pub fn decode_future(tape: &mut Tape, vars: &ParamVars, context: Var, cfg: &ModelConfig) -> Result<DecodedVars, TensorError> {
    let batch = tape.shape(context)[0];
    let (wl, bl) = (vars.get("dec.lstm.w")?, vars.get("dec.lstm.b")?);
    let (wo, bo) = (vars.get("dec.out.w")?, vars.get("dec.out.b")?);
    let d = cfg.decoder_hidden;
    let mut h = tape.leaf(Tensor::zeros(vec![batch, d]));
    let mut c = tape.leaf(Tensor::zeros(vec![batch, d]));
    let mut outs = Vec::with_capacity(cfg.future_len);
    for _ in 0..cfg.future_len {
        (h, c) = lstm_cell(tape, context, h, c, wl, bl)?;
        outs.push(linear(tape, h, wo, bo)?);
    }
    let raw = tape.concat(&outs, 1)?;
    let raw = tape.reshape(raw, &[batch, cfg.future_len, 5])?;
    let mu = tape.slice(raw, 2, 0, 2)?;
    let mu = tape.scale(mu, cfg.position_scale);
    let s = tape.slice(raw, 2, 2, 2)?;
    let s = tape.exp(s);
    let sigma = tape.clamp(s, SIGMA_MIN, SIGMA_MAX);
    let r = tape.slice(raw, 2, 4, 1)?;
    let r = tape.tanh(r);
    let rho = tape.scale(r, RHO_SCALE);
    Ok(Forward { mu, sigma, rho })
}

/// Encodes all SV rows of the batch, per slot group when weights are per slot.
fn encode_svs(tape: &mut Tape, vars: &ParamVars, steps: &[Var], layout: &SvLayout, cfg: &ModelConfig) -> Result<Option<Var>, TensorError> {
    if layout.rows.is_empty() {
        return Ok(None);
    }
    match cfg.sv_encoder {
        SvEncoder::Shared => Ok(Some(encode_vehicle(tape, vars, "sv_enc", steps, cfg)?.h)),
        SvEncoder::PerSlot => {
            let mut parts = Vec::new();
            for (slot, range) in layout.slot_ranges().into_iter().enumerate() {
                if range.is_empty() {
                    continue;
                }
                let sub: Vec<Var> = steps
                    .iter()
                    .map(|&x| tape.slice(x, 0, range.start, range.len()))
                    .collect::<Result<_, _>>()?;
                parts.push(encode_vehicle(tape, vars, &sv_prefix(cfg, slot), &sub, cfg)?.h);
            }
            Ok(Some(if parts.len() == 1 { parts[0] } else { tape.concat(&parts, 0)? }))
        }
    }
}

pub(crate) fn forward(
    tape: &mut Tape,
    vars: &ParamVars,
    cfg: &ModelConfig,
    ablation: &Ablation,
    batch: &Batch,
) -> Result<Forward, PredictError> {
    let ov_steps: Vec<Var> = batch.ov_steps.iter().map(|t| tape.leaf(t.clone())).collect();
    let ov = encode_vehicle(tape, vars, "ov_enc", &ov_steps, cfg)?;
    let ch = ablation.channels;
    let h_sv = if ch.social || ch.attention {
        let sv_steps: Vec<Var> = batch.sv_steps.iter().map(|t| tape.leaf(t.clone())).collect();
        encode_svs(tape, vars, &sv_steps, &batch.layout, cfg)?
    } else {
        None
    };
    let c1 = channel1(tape, vars, ov.h)?;
    let c2 = if ch.social {
        let social = assemble_social_tensor(tape, ov.h, h_sv, &batch.layout)?;
        Some(conv_social_pool(tape, vars, social, cfg)?)
    } else {
        None
    };
    let c3 = if ch.attention {
        Some(graph_attention(tape, vars, ov.h, h_sv, &batch.layout, cfg)?.context)
    } else {
        None
    };
    let context = fuse_context(tape, c1, c2, c3)?;
    let mut out = decode_future(tape, vars, context, cfg)?;
    if cfg.mean_anchor != super::MeanAnchor::Origin {
        let anchors = tape.leaf(batch.anchors.clone());
        out.mu = tape.add(out.mu, anchors)?;
    }
    for v in [out.mu, out.sigma, out.rho] {
        if !tape.value(v).is_finite() {
            return Err(PredictError::Numerical("non-finite decoder output".into()));
        }
    }
    Ok(out)
}
