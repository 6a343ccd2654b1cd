use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use tanet_tensor::{Tape, Tensor, Var};

use crate::{ModelConfig, ModelError, Result};

/// How a parameter tensor is filled at initialization.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Init {
    /// Uniform in ±1/sqrt(fan_in); used for all convolution weights.
    FanInUniform(usize),
    /// Normal with std 0.02; attention projections, MLP first layer,
    /// positional encoding.
    Normal002,
    /// Norm gamma.
    Ones,
    /// Biases, MLP second layer, norm beta.
    Zeros,
}

/// Enumerates every parameter of a config in a fixed order:
/// `(name, shape, init)`. Initialization, counting, and checkpoint
/// validation all derive from this single walk.
fn for_each_param(cfg: &ModelConfig, mut f: impl FnMut(String, Vec<usize>, Init)) {
    let c = cfg.channels;
    let conv = |name: String, cout: usize, cin: usize, k: usize, f: &mut dyn FnMut(String, Vec<usize>, Init)| {
        f(format!("{name}.weight"), vec![cout, cin, k, k], Init::FanInUniform(cin * k * k));
        f(format!("{name}.bias"), vec![cout], Init::Zeros);
    };

    conv("shallow".into(), c, 3, 3, &mut f);

    if cfg.has_global() {
        f(
            "global.pos_enc".into(),
            vec![cfg.tokens_per_patch(), c],
            Init::Normal002,
        );
        for n in 0..cfg.transformer_blocks {
            let p = format!("global.block{n}");
            if cfg.use_layer_norm {
                f(format!("{p}.norm1.gamma"), vec![c], Init::Ones);
                f(format!("{p}.norm1.beta"), vec![c], Init::Zeros);
                f(format!("{p}.norm2.gamma"), vec![c], Init::Ones);
                f(format!("{p}.norm2.beta"), vec![c], Init::Zeros);
            }
            f(format!("{p}.attn.wq"), vec![c, c], Init::Normal002);
            f(format!("{p}.attn.wk"), vec![c, c], Init::Normal002);
            f(format!("{p}.attn.wv"), vec![c, c], Init::Normal002);
            f(format!("{p}.mlp.fc1.weight"), vec![c, 4 * c], Init::Normal002);
            f(format!("{p}.mlp.fc1.bias"), vec![4 * c], Init::Zeros);
            // zero so each block starts as attention + residual only
            f(format!("{p}.mlp.fc2.weight"), vec![4 * c, c], Init::Zeros);
            f(format!("{p}.mlp.fc2.bias"), vec![c], Init::Zeros);
        }
    }

    if cfg.has_local() {
        for g in 0..cfg.smfm_count {
            let p = format!("local.smfm{g}");
            for i in 0..cfg.rb_per_smfm {
                conv(format!("{p}.rb{i}.conv1"), c, c, 3, &mut f);
                conv(format!("{p}.rb{i}.conv2"), c, c, 3, &mut f);
            }
            conv(format!("{p}.cal1"), c, c, 1, &mut f);
            conv(format!("{p}.cal2"), c, c, 1, &mut f);
            conv(format!("{p}.fuse"), c, 2 * c, 1, &mut f);
        }
    }

    conv("glam.global_ft".into(), c, c, 1, &mut f);
    conv("glam.local_ft".into(), c, c, 3, &mut f);
    conv("glam.fuse".into(), c, 2 * c, 1, &mut f);

    for s in 0..cfg.upscale_stages() {
        conv(format!("up.stage{s}"), 4 * c, c, 3, &mut f);
    }
    conv("recon".into(), 3, c, 3, &mut f);
}

/// The complete learnable parameter set, addressable by hierarchical name.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TANetParams {
    tensors: BTreeMap<String, Tensor>,
}

impl TANetParams {
    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| ModelError::UnknownParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| ModelError::UnknownParam(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn insert(&mut self, name: String, tensor: Tensor) {
        self.tensors.insert(name, tensor);
    }

    /// Name-sorted iteration; the order checkpoints are written in.
    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar values across all tensors.
    pub fn value_count(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }
}

/// Fresh parameters for `cfg`, deterministic in `seed`.
pub fn init_params(cfg: &ModelConfig, seed: u64) -> Result<TANetParams> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 0.02).expect("valid std");
    let mut params = TANetParams::default();
    for_each_param(cfg, |name, shape, init| {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = match init {
            Init::FanInUniform(fan_in) => {
                let bound = 1.0 / (fan_in as f64).sqrt();
                let dist = Uniform::new_inclusive(-bound, bound).expect("valid bounds");
                (0..n).map(|_| dist.sample(&mut rng)).collect()
            }
            Init::Normal002 => (0..n).map(|_| normal.sample(&mut rng)).collect(),
            Init::Ones => vec![1.0; n],
            Init::Zeros => vec![0.0; n],
        };
        let tensor = Tensor::new(shape, data).expect("enumerated shape matches data");
        params.insert(name, tensor);
    });
    Ok(params)
}

/// Closed-form parameter count for a config; the initialized set always
/// matches it exactly.
pub fn param_count(cfg: &ModelConfig) -> usize {
    let c = cfg.channels;
    let conv = |cout: usize, cin: usize, k: usize| cout * cin * k * k + cout;

    let shallow = conv(c, 3, 3);
    let block = 3 * c * c
        + if cfg.use_layer_norm { 4 * c } else { 0 }
        + (c * 4 * c + 4 * c)
        + (4 * c * c + c);
    let global = cfg.tokens_per_patch() * c + cfg.transformer_blocks * block;
    let smfm = cfg.rb_per_smfm * 2 * conv(c, c, 3) + 2 * conv(c, c, 1) + conv(c, 2 * c, 1);
    let local = cfg.smfm_count * smfm;
    let glam = conv(c, c, 1) + conv(c, c, 3) + conv(c, 2 * c, 1);
    let up = cfg.upscale_stages() * conv(4 * c, c, 3);
    let recon = conv(3, c, 3);

    shallow
        + if cfg.has_global() { global } else { 0 }
        + if cfg.has_local() { local } else { 0 }
        + glam
        + up
        + recon
}

/// Tape handles for every parameter, keyed by name.
pub type ParamVars = BTreeMap<String, Var>;

/// Registers all parameters as tape leaves. `trainable` controls whether
/// they accumulate gradients.
pub fn register_params(tape: &mut Tape, params: &TANetParams, trainable: bool) -> ParamVars {
    params
        .iter()
        .map(|(name, tensor)| {
            let mut t = tensor.clone();
            t.requires_grad = trainable;
            (name.clone(), tape.leaf(t))
        })
        .collect()
}

pub(crate) fn var(vars: &ParamVars, name: &str) -> Result<Var> {
    vars.get(name)
        .copied()
        .ok_or_else(|| ModelError::UnknownParam(name.to_string()))
}

/// Expected `(name, shape)` pairs for a config, in enumeration order.
pub(crate) fn expected_params(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let mut out = Vec::new();
    for_each_param(cfg, |name, shape, _| out.push((name, shape)));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Variant;

    #[test]
    fn same_seed_gives_bit_identical_params() {
        let cfg = ModelConfig::toy();
        let a = init_params(&cfg, 42).unwrap();
        let b = init_params(&cfg, 42).unwrap();
        assert_eq!(a, b);
        let c = init_params(&cfg, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn toy_config_count_matches_hand_tally() {
        // C=8, G=1, I=1, N=1, heads=2, scale=4, layer norm on:
        //   shallow        8*3*9+8                      =  224
        //   global         16*8 + (3*64 + 4*8 + (8*32+32) + (32*8+8)) =  904
        //   local          2*(64*9+8) + 2*(64+8) + (128+8)            = 1448
        //   glam           (64+8) + (576+8) + (128+8)                 =  792
        //   up             2*(9*8*32+32)                              = 4672
        //   recon          9*8*3+3                                    =  219
        let cfg = ModelConfig::toy();
        assert_eq!(param_count(&cfg), 8259);
        let params = init_params(&cfg, 0).unwrap();
        assert_eq!(params.value_count(), 8259);
    }

    #[test]
    fn count_formula_matches_enumeration_for_varied_configs() {
        let cases = [
            ModelConfig::default(),
            ModelConfig {
                channels: 16,
                smfm_count: 3,
                rb_per_smfm: 2,
                transformer_blocks: 2,
                heads: 4,
                scale: 8,
                ..ModelConfig::default()
            },
            ModelConfig {
                channels: 12,
                heads: 2,
                use_layer_norm: false,
                ..ModelConfig::toy()
            },
            ModelConfig {
                variant: Variant::NoLocal,
                ..ModelConfig::toy()
            },
            ModelConfig {
                variant: Variant::NoGlobal,
                channels: 24,
                heads: 3,
                ..ModelConfig::toy()
            },
        ];
        for cfg in cases {
            let params = init_params(&cfg, 7).unwrap();
            assert_eq!(params.value_count(), param_count(&cfg), "config {cfg:?}");
        }
    }

    #[test]
    fn variant_no_global_has_no_attention_params() {
        let cfg = ModelConfig {
            variant: Variant::NoGlobal,
            ..ModelConfig::toy()
        };
        let params = init_params(&cfg, 5).unwrap();
        assert!(params.names().all(|n| !n.contains("attn") && !n.starts_with("global.")));
        assert!(param_count(&cfg) < param_count(&ModelConfig::toy()));
    }

    #[test]
    fn init_follows_documented_rules() {
        let cfg = ModelConfig::toy();
        let params = init_params(&cfg, 3).unwrap();

        // norm affine starts as the identity
        let gamma = params.get("global.block0.norm1.gamma").unwrap();
        assert!(gamma.data().iter().all(|&v| v == 1.0));
        let beta = params.get("global.block0.norm1.beta").unwrap();
        assert!(beta.data().iter().all(|&v| v == 0.0));

        // MLP second layer starts at zero
        let fc2 = params.get("global.block0.mlp.fc2.weight").unwrap();
        assert!(fc2.data().iter().all(|&v| v == 0.0));

        // conv weights respect the fan-in bound
        let w = params.get("shallow.weight").unwrap();
        let bound = 1.0 / (27f64).sqrt();
        assert!(w.data().iter().all(|&v| v.abs() <= bound));
        assert!(w.data().iter().any(|&v| v != 0.0));

        // biases are zero
        let b = params.get("recon.bias").unwrap();
        assert!(b.data().iter().all(|&v| v == 0.0));
    }
}
