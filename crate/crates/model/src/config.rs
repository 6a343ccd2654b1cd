use crate::ModelError;

/// Which of the two representation paths are built.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Variant {
    #[default]
    Full,
    /// Local path removed; GLAM sees a zero tensor in its place.
    NoLocal,
    /// Global path removed; GLAM sees a zero tensor in its place.
    NoGlobal,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoLocal => "no_local",
            Variant::NoGlobal => "no_global",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "full" => Some(Variant::Full),
            "no_local" => Some(Variant::NoLocal),
            "no_global" => Some(Variant::NoGlobal),
            _ => None,
        }
    }
}

/// Whether self-attention spans each patch's 16 tokens or one sequence
/// covering the whole feature map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AttentionScope {
    #[default]
    PerPatch,
    FullImage,
}

impl AttentionScope {
    pub fn as_str(self) -> &'static str {
        match self {
            AttentionScope::PerPatch => "per_patch",
            AttentionScope::FullImage => "full_image",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "per_patch" => Some(AttentionScope::PerPatch),
            "full_image" => Some(AttentionScope::FullImage),
            _ => None,
        }
    }
}

/// All architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    /// Feature channels C; the token embedding dimension equals it.
    pub channels: usize,
    /// Number of SMFMs in the local path (G).
    pub smfm_count: usize,
    /// Residual blocks per SMFM (I).
    pub rb_per_smfm: usize,
    /// Transformer blocks in the global path (N).
    pub transformer_blocks: usize,
    /// Attention heads; head dim d = channels / heads.
    pub heads: usize,
    pub patch_h: usize,
    pub patch_w: usize,
    /// Upscale factor, 4 or 8.
    pub scale: usize,
    pub attention_scope: AttentionScope,
    pub use_layer_norm: bool,
    pub variant: Variant,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            channels: 64,
            smfm_count: 10,
            rb_per_smfm: 10,
            transformer_blocks: 4,
            heads: 4,
            patch_h: 4,
            patch_w: 4,
            scale: 4,
            attention_scope: AttentionScope::PerPatch,
            use_layer_norm: true,
            variant: Variant::Full,
        }
    }
}

impl ModelConfig {
    /// A small configuration used by fast tests: C=8, G=1, I=1, N=1, 2 heads.
    pub fn toy() -> Self {
        ModelConfig {
            channels: 8,
            smfm_count: 1,
            rb_per_smfm: 1,
            transformer_blocks: 1,
            heads: 2,
            ..ModelConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.channels == 0 || self.heads == 0 {
            return Err(ModelError::InvalidConfig(
                "channels and heads must be positive".into(),
            ));
        }
        if self.channels % self.heads != 0 {
            return Err(ModelError::InvalidConfig(format!(
                "channels {} not divisible by heads {}",
                self.channels, self.heads
            )));
        }
        if self.patch_h == 0 || self.patch_w == 0 {
            return Err(ModelError::InvalidConfig("patch dims must be positive".into()));
        }
        if self.smfm_count == 0 || self.rb_per_smfm == 0 {
            return Err(ModelError::InvalidConfig(
                "smfm_count and rb_per_smfm must be positive".into(),
            ));
        }
        if !matches!(self.scale, 4 | 8) {
            return Err(ModelError::InvalidConfig(format!(
                "scale must be 4 or 8, got {}",
                self.scale
            )));
        }
        Ok(())
    }

    /// Head dimension d = C / N_head.
    pub fn head_dim(&self) -> usize {
        self.channels / self.heads
    }

    /// Tokens per patch (the sequence length in per-patch scope).
    pub fn tokens_per_patch(&self) -> usize {
        self.patch_h * self.patch_w
    }

    /// Number of 2x sub-pixel stages in the upscale module.
    pub fn upscale_stages(&self) -> usize {
        self.scale.trailing_zeros() as usize
    }

    pub fn has_global(&self) -> bool {
        self.variant != Variant::NoGlobal
    }

    pub fn has_local(&self) -> bool {
        self.variant != Variant::NoLocal
    }
}
