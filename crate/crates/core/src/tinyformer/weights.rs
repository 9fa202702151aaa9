use rand::Rng;

use super::pe::{fourier_init, pe_sinusoidal};
use super::{cst, ModelConfig, PeFamily, PeKind, Real};
use crate::rng::substream;

/// `y = x·W + b` with `W` stored row-major as `fan_in × fan_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine<T> {
    pub fan_in: usize,
    pub fan_out: usize,
    pub w: Vec<T>,
    pub b: Vec<T>,
}

impl<T: Real> Affine<T> {
    fn glorot<R: Rng>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        Self {
            fan_in,
            fan_out,
            w: (0..fan_in * fan_out)
                .map(|_| cst(rng.random_range(-limit..=limit)))
                .collect(),
            b: vec![T::zero(); fan_out],
        }
    }

    fn zeros_like(&self) -> Self {
        Self {
            fan_in: self.fan_in,
            fan_out: self.fan_out,
            w: vec![T::zero(); self.w.len()],
            b: vec![T::zero(); self.b.len()],
        }
    }

    fn cast<U: Real>(&self) -> Affine<U> {
        Affine {
            fan_in: self.fan_in,
            fan_out: self.fan_out,
            w: cast_vec(&self.w),
            b: cast_vec(&self.b),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
}

impl<T: Real> LayerNorm<T> {
    fn new(dim: usize) -> Self {
        Self {
            gamma: vec![T::one(); dim],
            beta: vec![T::zero(); dim],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockWeights<T> {
    pub q: Affine<T>,
    pub k: Affine<T>,
    pub v: Affine<T>,
    pub o: Affine<T>,
    pub ln1: LayerNorm<T>,
    pub ff1: Affine<T>,
    pub ff2: Affine<T>,
    pub ln2: LayerNorm<T>,
}

/// Model parameters. The same layout doubles as a gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights<T> {
    pub input_proj: Affine<T>,
    pub blocks: Vec<BlockWeights<T>>,
    pub head: Affine<T>,
    /// Learnable frequencies, `d_model / 2` values for Fourier encodings.
    pub fourier_freqs: Vec<T>,
    /// Fixed `max_len × d_model` table for the static sinusoidal encoding.
    pub sin_table: Vec<T>,
}

/// Which part of the network a tensor belongs to, for parameter accounting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    InputProj,
    Qkv,
    OutputProj,
    Ffn1,
    Ffn2,
    LayerNorm,
    Head,
    PeTrainable,
    PeFixed,
}

impl ParamGroup {
    pub fn trainable(self) -> bool {
        self != ParamGroup::PeFixed
    }

    pub fn is_pe(self) -> bool {
        matches!(self, ParamGroup::PeTrainable | ParamGroup::PeFixed)
    }

    pub fn name(self) -> &'static str {
        match self {
            ParamGroup::InputProj => "input projection",
            ParamGroup::Qkv => "Q/K/V projections",
            ParamGroup::OutputProj => "attention output projection",
            ParamGroup::Ffn1 => "FFN inner",
            ParamGroup::Ffn2 => "FFN outer",
            ParamGroup::LayerNorm => "layer norms",
            ParamGroup::Head => "classifier head",
            ParamGroup::PeTrainable => "positional encoding (trainable)",
            ParamGroup::PeFixed => "positional encoding (fixed)",
        }
    }
}

/// A named view of one tensor.
pub struct TensorView<'a, T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub group: ParamGroup,
    pub data: &'a [T],
}

fn push_affine<'a, T>(
    out: &mut Vec<TensorView<'a, T>>,
    prefix: &str,
    a: &'a Affine<T>,
    group: ParamGroup,
) {
    out.push(TensorView {
        name: format!("{prefix}.weight"),
        shape: vec![a.fan_in, a.fan_out],
        group,
        data: &a.w,
    });
    out.push(TensorView {
        name: format!("{prefix}.bias"),
        shape: vec![a.fan_out],
        group,
        data: &a.b,
    });
}

fn push_norm<'a, T>(out: &mut Vec<TensorView<'a, T>>, prefix: &str, ln: &'a LayerNorm<T>) {
    for (suffix, data) in [("gamma", &ln.gamma), ("beta", &ln.beta)] {
        out.push(TensorView {
            name: format!("{prefix}.{suffix}"),
            shape: vec![data.len()],
            group: ParamGroup::LayerNorm,
            data,
        });
    }
}

fn cast_vec<T: Real, U: Real>(v: &[T]) -> Vec<U> {
    v.iter()
        .map(|&x| U::from(x).expect("finite cast"))
        .collect()
}

impl<T: Real> ModelWeights<T> {
    /// Glorot-uniform weights, zero biases, unit layer-norm scales.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Self {
        let mut rng = substream(seed, &[0x1417]);
        let aw = cfg.attn_width();
        let blocks = (0..cfg.layers)
            .map(|_| BlockWeights {
                q: Affine::glorot(cfg.d_model, aw, &mut rng),
                k: Affine::glorot(cfg.d_model, aw, &mut rng),
                v: Affine::glorot(cfg.d_model, aw, &mut rng),
                o: Affine::glorot(aw, cfg.d_model, &mut rng),
                ln1: LayerNorm::new(cfg.d_model),
                ff1: Affine::glorot(cfg.d_model, cfg.d_ff, &mut rng),
                ff2: Affine::glorot(cfg.d_ff, cfg.d_model, &mut rng),
                ln2: LayerNorm::new(cfg.d_model),
            })
            .collect();
        let input_proj = Affine::glorot(cfg.d, cfg.d_model, &mut rng);
        let head = Affine::glorot(cfg.d_model, cfg.classes, &mut rng);
        let fourier_freqs = match cfg.pe_kind.family() {
            PeFamily::Fourier => fourier_init(cfg.d_model),
            _ => Vec::new(),
        };
        let sin_table = if cfg.pe_kind == PeKind::Sin {
            let pos: Vec<T> = (0..cfg.max_len).map(|p| cst(p as f64)).collect();
            pe_sinusoidal(&pos, cfg.d_model)
        } else {
            Vec::new()
        };
        Self {
            input_proj,
            blocks,
            head,
            fourier_freqs,
            sin_table,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            input_proj: self.input_proj.zeros_like(),
            blocks: self
                .blocks
                .iter()
                .map(|b| BlockWeights {
                    q: b.q.zeros_like(),
                    k: b.k.zeros_like(),
                    v: b.v.zeros_like(),
                    o: b.o.zeros_like(),
                    ln1: LayerNorm {
                        gamma: vec![T::zero(); b.ln1.gamma.len()],
                        beta: vec![T::zero(); b.ln1.beta.len()],
                    },
                    ff1: b.ff1.zeros_like(),
                    ff2: b.ff2.zeros_like(),
                    ln2: LayerNorm {
                        gamma: vec![T::zero(); b.ln2.gamma.len()],
                        beta: vec![T::zero(); b.ln2.beta.len()],
                    },
                })
                .collect(),
            head: self.head.zeros_like(),
            fourier_freqs: vec![T::zero(); self.fourier_freqs.len()],
            sin_table: vec![T::zero(); self.sin_table.len()],
        }
    }

    pub fn cast<U: Real>(&self) -> ModelWeights<U> {
        ModelWeights {
            input_proj: self.input_proj.cast(),
            blocks: self
                .blocks
                .iter()
                .map(|b| BlockWeights {
                    q: b.q.cast(),
                    k: b.k.cast(),
                    v: b.v.cast(),
                    o: b.o.cast(),
                    ln1: LayerNorm {
                        gamma: cast_vec(&b.ln1.gamma),
                        beta: cast_vec(&b.ln1.beta),
                    },
                    ff1: b.ff1.cast(),
                    ff2: b.ff2.cast(),
                    ln2: LayerNorm {
                        gamma: cast_vec(&b.ln2.gamma),
                        beta: cast_vec(&b.ln2.beta),
                    },
                })
                .collect(),
            head: self.head.cast(),
            fourier_freqs: cast_vec(&self.fourier_freqs),
            sin_table: cast_vec(&self.sin_table),
        }
    }

    /// Every tensor with its name, shape and group, in archive order.
    pub fn tensors(&self) -> Vec<TensorView<'_, T>> {
        let mut out = Vec::new();
        push_affine(
            &mut out,
            "input_proj",
            &self.input_proj,
            ParamGroup::InputProj,
        );
        for (i, b) in self.blocks.iter().enumerate() {
            push_affine(
                &mut out,
                &format!("blocks.{i}.attn.q"),
                &b.q,
                ParamGroup::Qkv,
            );
            push_affine(
                &mut out,
                &format!("blocks.{i}.attn.k"),
                &b.k,
                ParamGroup::Qkv,
            );
            push_affine(
                &mut out,
                &format!("blocks.{i}.attn.v"),
                &b.v,
                ParamGroup::Qkv,
            );
            push_affine(
                &mut out,
                &format!("blocks.{i}.attn.o"),
                &b.o,
                ParamGroup::OutputProj,
            );
            push_norm(&mut out, &format!("blocks.{i}.ln1"), &b.ln1);
            push_affine(
                &mut out,
                &format!("blocks.{i}.ffn.inner"),
                &b.ff1,
                ParamGroup::Ffn1,
            );
            push_affine(
                &mut out,
                &format!("blocks.{i}.ffn.outer"),
                &b.ff2,
                ParamGroup::Ffn2,
            );
            push_norm(&mut out, &format!("blocks.{i}.ln2"), &b.ln2);
        }
        push_affine(&mut out, "head", &self.head, ParamGroup::Head);
        if !self.fourier_freqs.is_empty() {
            out.push(TensorView {
                name: "pe.fourier_freqs".into(),
                shape: vec![self.fourier_freqs.len()],
                group: ParamGroup::PeTrainable,
                data: &self.fourier_freqs,
            });
        }
        if !self.sin_table.is_empty() {
            let d_model = self.input_proj.fan_out;
            out.push(TensorView {
                name: "pe.sin_table".into(),
                shape: vec![self.sin_table.len() / d_model, d_model],
                group: ParamGroup::PeFixed,
                data: &self.sin_table,
            });
        }
        out
    }

    /// Mutable trainable tensors in the same order as [`Self::tensors`]
    /// (fixed tables skipped).
    pub fn trainable_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = vec![&mut self.input_proj.w, &mut self.input_proj.b];
        for b in &mut self.blocks {
            out.extend([
                &mut b.q.w[..],
                &mut b.q.b,
                &mut b.k.w,
                &mut b.k.b,
                &mut b.v.w,
                &mut b.v.b,
                &mut b.o.w,
                &mut b.o.b,
                &mut b.ln1.gamma,
                &mut b.ln1.beta,
                &mut b.ff1.w,
                &mut b.ff1.b,
                &mut b.ff2.w,
                &mut b.ff2.b,
                &mut b.ln2.gamma,
                &mut b.ln2.beta,
            ]);
        }
        out.push(&mut self.head.w);
        out.push(&mut self.head.b);
        if !self.fourier_freqs.is_empty() {
            out.push(&mut self.fourier_freqs);
        }
        out
    }

    /// Trainable tensors, read-only, matching [`Self::trainable_mut`].
    pub fn trainable(&self) -> Vec<&[T]> {
        self.tensors()
            .into_iter()
            .filter(|t| t.group.trainable())
            .map(|t| t.data)
            .collect()
    }

    /// Trainable parameter count; Fourier frequencies only with `include_pe`.
    pub fn count_params(&self, include_pe: bool) -> usize {
        self.tensors()
            .iter()
            .filter(|t| t.group.trainable() && (include_pe || !t.group.is_pe()))
            .map(|t| t.data.len())
            .sum()
    }

    /// Parameter totals per group, in network order; groups with no
    /// parameters are omitted.
    pub fn breakdown(&self) -> Vec<(ParamGroup, usize)> {
        let mut out: Vec<(ParamGroup, usize)> = Vec::new();
        for t in self.tensors() {
            match out.iter_mut().find(|(g, _)| *g == t.group) {
                Some((_, n)) => *n += t.data.len(),
                None => out.push((t.group, t.data.len())),
            }
        }
        out
    }

    pub fn all_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.data.iter().all(|x| x.is_finite()))
    }

    /// Bytes occupied by all tensors at `f32`.
    pub fn byte_size_f32(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len() * 4).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_one_parameter_count() {
        let cfg = ModelConfig {
            pe_kind: PeKind::None,
            ..ModelConfig::default()
        };
        let w = ModelWeights::<f32>::init(&cfg, 0);
        assert_eq!(w.count_params(false), 5_086);
        let groups: Vec<usize> = w.breakdown().iter().map(|(_, n)| *n).collect();
        assert_eq!(groups, vec![3_592, 864, 264, 32, 144, 136, 54]);
    }

    #[test]
    fn pe_parameters() {
        let fourier = ModelWeights::<f32>::init(
            &ModelConfig {
                pe_kind: PeKind::Fourier,
                ..ModelConfig::default()
            },
            0,
        );
        assert_eq!(fourier.count_params(false), 5_086);
        assert_eq!(fourier.count_params(true), 5_090);
        let sin = ModelWeights::<f32>::init(
            &ModelConfig {
                pe_kind: PeKind::Sin,
                ..ModelConfig::default()
            },
            0,
        );
        assert_eq!(sin.count_params(true), 5_086);
        assert_eq!(sin.sin_table.len(), 240);
        for kind in [PeKind::Rope, PeKind::DynRope, PeKind::DynSin] {
            let w = ModelWeights::<f32>::init(
                &ModelConfig {
                    pe_kind: kind,
                    ..ModelConfig::default()
                },
                0,
            );
            assert_eq!(w.count_params(true), 5_086);
        }
    }

    #[test]
    fn trainable_views_align() {
        let cfg = ModelConfig {
            pe_kind: PeKind::DynFourier,
            ..ModelConfig::default()
        };
        let mut w = ModelWeights::<f64>::init(&cfg, 3);
        let lens: Vec<usize> = w.trainable().iter().map(|t| t.len()).collect();
        let lens_mut: Vec<usize> = w.trainable_mut().iter().map(|t| t.len()).collect();
        assert_eq!(lens, lens_mut);
        assert_eq!(lens.iter().sum::<usize>(), 5_090);
    }

    #[test]
    fn init_is_seeded_and_precision_independent() {
        let cfg = ModelConfig::default();
        let a = ModelWeights::<f32>::init(&cfg, 5);
        assert_eq!(a, ModelWeights::<f32>::init(&cfg, 5));
        assert_ne!(a, ModelWeights::<f32>::init(&cfg, 6));
        assert_eq!(ModelWeights::<f64>::init(&cfg, 5).cast::<f32>(), a);
    }
}
