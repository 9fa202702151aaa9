use serde::{Deserialize, Serialize};

use super::ModelError;

/// Positional-encoding variant. `Dyn*` variants index by packet timestamp
/// instead of packet position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PeKind {
    None,
    Sin,
    Fourier,
    Rope,
    #[default]
    DynSin,
    DynFourier,
    DynRope,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PeFamily {
    None,
    Sinusoidal,
    Fourier,
    Rotary,
}

impl PeKind {
    pub const ALL: [PeKind; 7] = [
        PeKind::None,
        PeKind::Sin,
        PeKind::Fourier,
        PeKind::Rope,
        PeKind::DynSin,
        PeKind::DynFourier,
        PeKind::DynRope,
    ];

    pub fn family(self) -> PeFamily {
        match self {
            PeKind::None => PeFamily::None,
            PeKind::Sin | PeKind::DynSin => PeFamily::Sinusoidal,
            PeKind::Fourier | PeKind::DynFourier => PeFamily::Fourier,
            PeKind::Rope | PeKind::DynRope => PeFamily::Rotary,
        }
    }

    pub fn is_dynamic(self) -> bool {
        matches!(self, PeKind::DynSin | PeKind::DynFourier | PeKind::DynRope)
    }

    /// The static counterpart of a dynamic kind (identity otherwise).
    pub fn to_static(self) -> PeKind {
        match self {
            PeKind::DynSin => PeKind::Sin,
            PeKind::DynFourier => PeKind::Fourier,
            PeKind::DynRope => PeKind::Rope,
            k => k,
        }
    }

    pub fn to_dynamic(self) -> PeKind {
        match self {
            PeKind::Sin => PeKind::DynSin,
            PeKind::Fourier => PeKind::DynFourier,
            PeKind::Rope => PeKind::DynRope,
            k => k,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PeKind::None => "none",
            PeKind::Sin => "sin",
            PeKind::Fourier => "fourier",
            PeKind::Rope => "rope",
            PeKind::DynSin => "dyn_sin",
            PeKind::DynFourier => "dyn_fourier",
            PeKind::DynRope => "dyn_rope",
        }
    }
}

impl std::str::FromStr for PeKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PeKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| ModelError::InvalidConfig(format!("unknown pe_kind `{s}`")))
    }
}

impl std::fmt::Display for PeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Which width divides the pair index in the RoPE angle `base^(−i/width)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RopeDenominator {
    #[default]
    ModelDim,
    HeadDim,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormStyle {
    #[default]
    PostNorm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Input packet length.
    pub d: usize,
    /// Maximum flow length.
    pub max_len: usize,
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub d_ff: usize,
    pub dropout: f64,
    pub classes: usize,
    pub pe_kind: PeKind,
    pub norm_style: NormStyle,
    pub rope_base: f64,
    pub rope_denominator: RopeDenominator,
    /// Multiplier applied to timestamps (seconds) before dynamic encodings.
    pub time_scale: f64,
    pub layer_norm_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d: 448,
            max_len: 30,
            d_model: 8,
            layers: 1,
            heads: 4,
            head_dim: 8,
            d_ff: 16,
            dropout: 0.1,
            classes: 6,
            pe_kind: PeKind::DynSin,
            norm_style: NormStyle::PostNorm,
            rope_base: 10_000.0,
            rope_denominator: RopeDenominator::ModelDim,
            time_scale: 1.0,
            layer_norm_eps: 1e-5,
        }
    }
}

impl ModelConfig {
    /// Width of the concatenated attention heads.
    pub fn attn_width(&self) -> usize {
        self.heads * self.head_dim
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidConfig(m));
        for (name, v) in [
            ("d", self.d),
            ("max_len", self.max_len),
            ("d_model", self.d_model),
            ("heads", self.heads),
            ("head_dim", self.head_dim),
            ("d_ff", self.d_ff),
        ] {
            if v == 0 {
                return bad(format!("{name} must be >= 1"));
            }
        }
        if self.classes < 2 {
            return bad("classes must be >= 2".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)".into());
        }
        match self.pe_kind.family() {
            PeFamily::Sinusoidal | PeFamily::Fourier if self.d_model % 2 != 0 => {
                return bad("d_model must be even for sinusoidal/Fourier encodings".into())
            }
            PeFamily::Rotary if self.head_dim % 2 != 0 => {
                return bad("head_dim must be even for rotary encodings".into())
            }
            _ => {}
        }
        if !(self.rope_base > 0.0) || !(self.time_scale > 0.0) || !(self.layer_norm_eps > 0.0) {
            return bad("rope_base, time_scale and layer_norm_eps must be positive".into());
        }
        Ok(())
    }
}
