//! Forward and backward passes of the encoder classifier.
//!
//! Layout per sample (post-norm, `L` blocks):
//!
//! ```text
//! x ─ input_proj ─ (+PE) ─ dropout ─┬─ MHA ─ dropout ─ (+) ─ LN1 ─┬─ FFN(ReLU) ─ dropout ─ (+) ─ LN2 ─ … ─ masked mean ─ head ─ softmax
//!                                   └──────────────────────┘      └───────────────────────────┘
//! ```
//!
//! Only valid (mask = true) rows are computed. Padding rows can influence
//! nothing but their own query rows, which the pooling discards, so this is
//! exactly equivalent to running over the padded sequence with masked keys.

use rand::{Rng, RngCore};

use super::ops::{
    add_assign, affine, affine_backward, all_finite, dot, layer_norm, layer_norm_backward,
    softmax_in_place,
};
use super::pe::{pe_fourier, pe_fourier_backward, pe_sinusoidal, rope_rotate, rope_thetas};
use super::{cst, ModelConfig, ModelError, ModelWeights, PeFamily, PeKind, Real, RopeDenominator};
use crate::flowcap::FlowRecord;

pub enum Mode<'a> {
    /// Deterministic inference; dropout disabled.
    Eval,
    /// Dropout masks drawn from the given stream.
    Train(&'a mut dyn RngCore),
}

impl Mode<'_> {
    fn dropout_mask<T: Real>(&mut self, p: f64, len: usize) -> Option<Vec<T>> {
        match self {
            Mode::Train(rng) if p > 0.0 => {
                let keep = cst::<T>(1.0 / (1.0 - p));
                Some(
                    (0..len)
                        .map(|_| {
                            if rng.random::<f64>() < p {
                                T::zero()
                            } else {
                                keep
                            }
                        })
                        .collect(),
                )
            }
            _ => None,
        }
    }
}

fn apply_mask<T: Real>(v: &mut [T], mask: &Option<Vec<T>>) {
    if let Some(m) = mask {
        for (x, &s) in v.iter_mut().zip(m) {
            *x *= s;
        }
    }
}

/// Activations of one encoder block.
#[derive(Debug, Clone)]
pub struct BlockTrace<T> {
    pub input: Vec<T>,
    /// Queries and keys after rotary encoding (if any).
    pub q: Vec<T>,
    pub k: Vec<T>,
    pub v: Vec<T>,
    /// `heads × n × n` attention weights over valid keys, before dropout.
    pub attn: Vec<T>,
    attn_drop: Option<Vec<T>>,
    pub ctx: Vec<T>,
    o_drop: Option<Vec<T>>,
    ln1_xhat: Vec<T>,
    ln1_inv_std: Vec<T>,
    pub h1: Vec<T>,
    f1_pre: Vec<T>,
    f1: Vec<T>,
    f2_drop: Option<Vec<T>>,
    ln2_xhat: Vec<T>,
    ln2_inv_std: Vec<T>,
    pub out: Vec<T>,
}

/// Everything the backward pass needs, plus outputs for inspection.
#[derive(Debug, Clone)]
pub struct ForwardTrace<T> {
    /// Indices of the valid rows in the input record.
    pub valid: Vec<usize>,
    /// Rows of the input record (valid + padding).
    pub rows: usize,
    x: Vec<T>,
    pub positions: Vec<T>,
    emb_drop: Option<Vec<T>>,
    pub blocks: Vec<BlockTrace<T>>,
    pub pooled: Vec<T>,
    pub logits: Vec<T>,
    /// Softmax confidences, length `classes`.
    pub probs: Vec<T>,
}

impl<T: Real> ForwardTrace<T> {
    pub fn n(&self) -> usize {
        self.valid.len()
    }

    /// Attention weights of `(block, head)` scattered onto the full
    /// `rows × rows` grid; padded query rows and padded key columns are 0.
    pub fn attention_full(&self, block: usize, head: usize) -> Vec<T> {
        let n = self.n();
        let a = &self.blocks[block].attn[head * n * n..(head + 1) * n * n];
        let mut out = vec![T::zero(); self.rows * self.rows];
        for (i, &ri) in self.valid.iter().enumerate() {
            for (j, &rj) in self.valid.iter().enumerate() {
                out[ri * self.rows + rj] = a[i * n + j];
            }
        }
        out
    }
}

fn check<T: Real>(v: &[T], layer: &str) -> Result<(), ModelError> {
    if all_finite(v) {
        Ok(())
    } else {
        Err(ModelError::NonFiniteActivation(layer.to_string()))
    }
}

fn rope_angles<T: Real>(cfg: &ModelConfig) -> Vec<T> {
    let width = match cfg.rope_denominator {
        RopeDenominator::ModelDim => cfg.d_model,
        RopeDenominator::HeadDim => cfg.head_dim,
    };
    let per_head: Vec<T> = rope_thetas(cfg.head_dim / 2, cfg.rope_base, width);
    (0..cfg.heads)
        .flat_map(|_| per_head.iter().copied())
        .collect()
}

/// Positions fed to the encoding: row indices for static kinds, scaled
/// timestamps for dynamic ones.
fn positions<T: Real>(cfg: &ModelConfig, flow: &FlowRecord, valid: &[usize]) -> Vec<T> {
    if cfg.pe_kind.is_dynamic() {
        valid
            .iter()
            .map(|&p| cst(flow.timestamps[p] * cfg.time_scale))
            .collect()
    } else {
        valid.iter().map(|&p| cst(p as f64)).collect()
    }
}

/// Runs the classifier on one (optionally padded) flow.
pub fn forward<T: Real>(
    w: &ModelWeights<T>,
    cfg: &ModelConfig,
    flow: &FlowRecord,
    mut mode: Mode<'_>,
) -> Result<ForwardTrace<T>, ModelError> {
    let rows = flow.rows();
    if flow.d != cfg.d || flow.packets.len() != rows * flow.d || flow.mask.len() != rows {
        return Err(ModelError::ShapeMismatch(format!(
            "flow is {rows}×{} (mask {}), model expects d = {}",
            flow.d,
            flow.mask.len(),
            cfg.d
        )));
    }
    if rows > cfg.max_len {
        return Err(ModelError::ShapeMismatch(format!(
            "flow has {rows} rows, model max_len is {}",
            cfg.max_len
        )));
    }
    let valid: Vec<usize> = (0..rows).filter(|&i| flow.mask[i]).collect();
    let n = valid.len();
    if n == 0 {
        return Err(ModelError::ShapeMismatch(
            "flow has no valid packets".into(),
        ));
    }
    let (d, dm, aw, dh, heads) = (
        cfg.d,
        cfg.d_model,
        cfg.attn_width(),
        cfg.head_dim,
        cfg.heads,
    );

    let mut x = Vec::with_capacity(n * d);
    for &r in &valid {
        x.extend(flow.row(r).iter().map(|&v| cst::<T>(f64::from(v))));
    }
    let pos = positions::<T>(cfg, flow, &valid);

    let mut h = affine(&x, &w.input_proj.w, &w.input_proj.b, n, d, dm);
    match cfg.pe_kind {
        PeKind::Sin => {
            for (i, &r) in valid.iter().enumerate() {
                add_assign(
                    &mut h[i * dm..(i + 1) * dm],
                    &w.sin_table[r * dm..(r + 1) * dm],
                );
            }
        }
        PeKind::DynSin => add_assign(&mut h, &pe_sinusoidal(&pos, dm)),
        PeKind::Fourier | PeKind::DynFourier => {
            add_assign(&mut h, &pe_fourier(&pos, &w.fourier_freqs))
        }
        PeKind::None | PeKind::Rope | PeKind::DynRope => {}
    }
    let emb_drop = mode.dropout_mask(cfg.dropout, n * dm);
    apply_mask(&mut h, &emb_drop);
    check(&h, "embedding")?;

    let rope = (cfg.pe_kind.family() == PeFamily::Rotary).then(|| rope_angles::<T>(cfg));
    let scale = T::one() / cst::<T>(dh as f64).sqrt();
    let eps = cst::<T>(cfg.layer_norm_eps);
    let mut blocks = Vec::with_capacity(w.blocks.len());

    for (bi, bw) in w.blocks.iter().enumerate() {
        let input = h;
        let mut q = affine(&input, &bw.q.w, &bw.q.b, n, dm, aw);
        let mut k = affine(&input, &bw.k.w, &bw.k.b, n, dm, aw);
        let v = affine(&input, &bw.v.w, &bw.v.b, n, dm, aw);
        if let Some(th) = &rope {
            q = rope_rotate(&q, &pos, th, false);
            k = rope_rotate(&k, &pos, th, false);
        }

        let mut attn = vec![T::zero(); heads * n * n];
        for hd in 0..heads {
            for i in 0..n {
                let qi = &q[i * aw + hd * dh..i * aw + (hd + 1) * dh];
                let row = &mut attn[(hd * n + i) * n..(hd * n + i + 1) * n];
                for (j, s) in row.iter_mut().enumerate() {
                    *s = dot(qi, &k[j * aw + hd * dh..j * aw + (hd + 1) * dh]) * scale;
                }
                softmax_in_place(row);
            }
        }
        let attn_drop = mode.dropout_mask(cfg.dropout, heads * n * n);
        let mut ctx = vec![T::zero(); n * aw];
        for hd in 0..heads {
            for i in 0..n {
                let out = &mut ctx[i * aw + hd * dh..i * aw + (hd + 1) * dh];
                for j in 0..n {
                    let idx = (hd * n + i) * n + j;
                    let a = match &attn_drop {
                        Some(m) => attn[idx] * m[idx],
                        None => attn[idx],
                    };
                    for (o, &vv) in out
                        .iter_mut()
                        .zip(&v[j * aw + hd * dh..j * aw + (hd + 1) * dh])
                    {
                        *o += a * vv;
                    }
                }
            }
        }
        check(&ctx, &format!("block{bi}.attention"))?;

        let mut o = affine(&ctx, &bw.o.w, &bw.o.b, n, aw, dm);
        let o_drop = mode.dropout_mask(cfg.dropout, n * dm);
        apply_mask(&mut o, &o_drop);
        add_assign(&mut o, &input);
        let (h1, ln1_xhat, ln1_inv_std) = layer_norm(&o, &bw.ln1.gamma, &bw.ln1.beta, n, eps);
        check(&h1, &format!("block{bi}.ln1"))?;

        let f1_pre = affine(&h1, &bw.ff1.w, &bw.ff1.b, n, dm, cfg.d_ff);
        let f1: Vec<T> = f1_pre.iter().map(|&z| z.max(T::zero())).collect();
        let mut f2 = affine(&f1, &bw.ff2.w, &bw.ff2.b, n, cfg.d_ff, dm);
        let f2_drop = mode.dropout_mask(cfg.dropout, n * dm);
        apply_mask(&mut f2, &f2_drop);
        add_assign(&mut f2, &h1);
        let (out, ln2_xhat, ln2_inv_std) = layer_norm(&f2, &bw.ln2.gamma, &bw.ln2.beta, n, eps);
        check(&out, &format!("block{bi}.ln2"))?;

        h = out.clone();
        blocks.push(BlockTrace {
            input,
            q,
            k,
            v,
            attn,
            attn_drop,
            ctx,
            o_drop,
            ln1_xhat,
            ln1_inv_std,
            h1,
            f1_pre,
            f1,
            f2_drop,
            ln2_xhat,
            ln2_inv_std,
            out,
        });
    }

    let inv_n = T::one() / cst::<T>(n as f64);
    let mut pooled = vec![T::zero(); dm];
    for i in 0..n {
        add_assign(&mut pooled, &h[i * dm..(i + 1) * dm]);
    }
    pooled.iter_mut().for_each(|p| *p *= inv_n);
    let logits = affine(&pooled, &w.head.w, &w.head.b, 1, dm, cfg.classes);
    check(&logits, "head")?;
    let mut probs = logits.clone();
    softmax_in_place(&mut probs);

    Ok(ForwardTrace {
        valid,
        rows,
        x,
        positions: pos,
        emb_drop,
        blocks,
        pooled,
        logits,
        probs,
    })
}

/// Accumulates parameter gradients for one sample into `grads`, given
/// `∂L/∂logits`. Returns `∂L/∂x` for the valid rows (`n × d`) when
/// `want_input_grad` is set.
pub fn backward<T: Real>(
    w: &ModelWeights<T>,
    cfg: &ModelConfig,
    trace: &ForwardTrace<T>,
    dlogits: &[T],
    grads: &mut ModelWeights<T>,
    want_input_grad: bool,
) -> Result<Option<Vec<T>>, ModelError> {
    let n = trace.n();
    let (d, dm, aw, dh, heads, dff) = (
        cfg.d,
        cfg.d_model,
        cfg.attn_width(),
        cfg.head_dim,
        cfg.heads,
        cfg.d_ff,
    );
    let scale = T::one() / cst::<T>(dh as f64).sqrt();

    let dpooled = affine_backward(
        &trace.pooled,
        &w.head.w,
        dlogits,
        1,
        dm,
        cfg.classes,
        &mut grads.head.w,
        &mut grads.head.b,
        true,
    )
    .expect("requested");
    let inv_n = T::one() / cst::<T>(n as f64);
    let mut dh_: Vec<T> = (0..n)
        .flat_map(|_| dpooled.iter().map(|&g| g * inv_n))
        .collect();

    let rope = (cfg.pe_kind.family() == PeFamily::Rotary).then(|| rope_angles::<T>(cfg));

    for (bi, bt) in trace.blocks.iter().enumerate().rev() {
        let bw = &w.blocks[bi];
        let bg = &mut grads.blocks[bi];

        // LN2 and FFN residual
        let dr2 = layer_norm_backward(
            &dh_,
            &bt.ln2_xhat,
            &bt.ln2_inv_std,
            &bw.ln2.gamma,
            &mut bg.ln2.gamma,
            &mut bg.ln2.beta,
        );
        let mut dh1 = dr2.clone();
        let mut df2 = dr2;
        apply_mask(&mut df2, &bt.f2_drop);
        let mut df1 = affine_backward(
            &bt.f1,
            &bw.ff2.w,
            &df2,
            n,
            dff,
            dm,
            &mut bg.ff2.w,
            &mut bg.ff2.b,
            true,
        )
        .expect("requested");
        for (g, &z) in df1.iter_mut().zip(&bt.f1_pre) {
            if z <= T::zero() {
                *g = T::zero();
            }
        }
        let dh1_ffn = affine_backward(
            &bt.h1,
            &bw.ff1.w,
            &df1,
            n,
            dm,
            dff,
            &mut bg.ff1.w,
            &mut bg.ff1.b,
            true,
        )
        .expect("requested");
        add_assign(&mut dh1, &dh1_ffn);

        // LN1 and attention residual
        let dr1 = layer_norm_backward(
            &dh1,
            &bt.ln1_xhat,
            &bt.ln1_inv_std,
            &bw.ln1.gamma,
            &mut bg.ln1.gamma,
            &mut bg.ln1.beta,
        );
        let mut dinput = dr1.clone();
        let mut do_ = dr1;
        apply_mask(&mut do_, &bt.o_drop);
        let dctx = affine_backward(
            &bt.ctx,
            &bw.o.w,
            &do_,
            n,
            aw,
            dm,
            &mut bg.o.w,
            &mut bg.o.b,
            true,
        )
        .expect("requested");

        let mut dq = vec![T::zero(); n * aw];
        let mut dk = vec![T::zero(); n * aw];
        let mut dv = vec![T::zero(); n * aw];
        let mut da = vec![T::zero(); n];
        for hd in 0..heads {
            let hs = hd * dh..(hd + 1) * dh;
            for i in 0..n {
                let g = &dctx[i * aw + hs.start..i * aw + hs.end];
                let base = (hd * n + i) * n;
                // dA' = dctx · Vᵀ, dV += A'ᵀ · dctx
                for j in 0..n {
                    let vj = &bt.v[j * aw + hs.start..j * aw + hs.end];
                    let (a_eff, m) = match &bt.attn_drop {
                        Some(mask) => (bt.attn[base + j] * mask[base + j], mask[base + j]),
                        None => (bt.attn[base + j], T::one()),
                    };
                    da[j] = dot(g, vj) * m;
                    for (dvv, &gv) in dv[j * aw + hs.start..j * aw + hs.end].iter_mut().zip(g) {
                        *dvv += a_eff * gv;
                    }
                }
                // softmax backward
                let a = &bt.attn[base..base + n];
                let s = dot(&da, a);
                let qi = &bt.q[i * aw + hs.start..i * aw + hs.end];
                for j in 0..n {
                    let ds = a[j] * (da[j] - s) * scale;
                    if ds == T::zero() {
                        continue;
                    }
                    let kj = &bt.k[j * aw + hs.start..j * aw + hs.end];
                    for t in 0..dh {
                        dq[i * aw + hs.start + t] += ds * kj[t];
                        dk[j * aw + hs.start + t] += ds * qi[t];
                    }
                }
            }
        }
        if let Some(th) = &rope {
            dq = rope_rotate(&dq, &trace.positions, th, true);
            dk = rope_rotate(&dk, &trace.positions, th, true);
        }
        for (aff, gaff, g) in [
            (&bw.q, &mut bg.q, &dq),
            (&bw.k, &mut bg.k, &dk),
            (&bw.v, &mut bg.v, &dv),
        ] {
            let dx = affine_backward(
                &bt.input,
                &aff.w,
                g,
                n,
                dm,
                aw,
                &mut gaff.w,
                &mut gaff.b,
                true,
            )
            .expect("requested");
            add_assign(&mut dinput, &dx);
        }
        check(&dinput, &format!("block{bi}.backward"))?;
        dh_ = dinput;
    }

    apply_mask(&mut dh_, &trace.emb_drop);
    if cfg.pe_kind.family() == PeFamily::Fourier {
        pe_fourier_backward(
            &trace.positions,
            &w.fourier_freqs,
            &dh_,
            &mut grads.fourier_freqs,
        );
    }
    let dx = affine_backward(
        &trace.x,
        &w.input_proj.w,
        &dh_,
        n,
        d,
        dm,
        &mut grads.input_proj.w,
        &mut grads.input_proj.b,
        want_input_grad,
    );
    check(&grads.input_proj.w, "input_proj.backward")?;
    Ok(dx)
}

/// Inference confidences for one flow.
pub fn predict<T: Real>(
    w: &ModelWeights<T>,
    cfg: &ModelConfig,
    flow: &FlowRecord,
) -> Result<Vec<T>, ModelError> {
    forward(w, cfg, flow, Mode::Eval).map(|t| t.probs)
}
