use std::sync::Arc;

use tanet_tensor::{Tape, Var};

use crate::params::var;
use crate::{AttentionScope, ModelConfig, ModelError, ParamVars, Result};

fn check_patch_divisibility(cfg: &ModelConfig, h: usize, w: usize) -> Result<()> {
    if h % cfg.patch_h != 0 || w % cfg.patch_w != 0 {
        return Err(ModelError::PatchDivisibility {
            h,
            w,
            ph: cfg.patch_h,
            pw: cfg.patch_w,
        });
    }
    Ok(())
}

/// Flat bijection from `[B,C,h,w]` to `[B·P, S, C]` token order, where a
/// patch's S = patch_h·patch_w positions become a sequence of C-dim tokens
/// and patches stack along the leading dim. Returns (map, inverse).
fn tokenize_maps(
    b: usize,
    c: usize,
    h: usize,
    w: usize,
    ph: usize,
    pw: usize,
) -> (Vec<usize>, Vec<usize>) {
    let (py_n, px_n) = (h / ph, w / pw);
    let numel = b * c * h * w;
    let mut fwd = vec![0usize; numel];
    let mut inv = vec![0usize; numel];
    let mut out = 0usize;
    for bi in 0..b {
        for py in 0..py_n {
            for px in 0..px_n {
                for ty in 0..ph {
                    for tx in 0..pw {
                        for ci in 0..c {
                            let src = ((bi * c + ci) * h + py * ph + ty) * w + px * pw + tx;
                            fwd[out] = src;
                            inv[src] = out;
                            out += 1;
                        }
                    }
                }
            }
        }
    }
    (fwd, inv)
}

/// Rearranges a feature map into token sequences and adds the learnable
/// positional encoding (shared across patches). Per-patch scope yields
/// `[B·P, S, C]`; full-image scope one `[B, P·S, C]` sequence in the same
/// element order.
pub fn tokenize(tape: &mut Tape, f: Var, pos_enc: Option<Var>, cfg: &ModelConfig) -> Result<Var> {
    let shape = tape.shape(f).to_vec();
    let [b, c, h, w] = shape[..] else {
        return Err(ModelError::InputShape(shape));
    };
    check_patch_divisibility(cfg, h, w)?;
    let patches = (h / cfg.patch_h) * (w / cfg.patch_w);
    let s = cfg.tokens_per_patch();
    let (fwd, _) = tokenize_maps(b, c, h, w, cfg.patch_h, cfg.patch_w);
    let mut tokens = tape.permute(f, Arc::new(fwd), vec![b * patches, s, c])?;
    if let Some(pos) = pos_enc {
        tokens = tape.add_bcast(tokens, pos)?;
    }
    if cfg.attention_scope == AttentionScope::FullImage {
        tokens = tape.reshape(tokens, vec![b, patches * s, c])?;
    }
    Ok(tokens)
}

/// Inverse of [`tokenize`] (without the positional term): tokens back to
/// the `[B,C,h,w]` feature layout.
pub fn detokenize(
    tape: &mut Tape,
    tokens: Var,
    cfg: &ModelConfig,
    b: usize,
    h: usize,
    w: usize,
) -> Result<Var> {
    let c = cfg.channels;
    check_patch_divisibility(cfg, h, w)?;
    let (_, inv) = tokenize_maps(b, c, h, w, cfg.patch_h, cfg.patch_w);
    // inv[src] is where src went, so reading out[i] = in[map[i]] with the
    // roles swapped undoes the tokenization.
    let mut map = vec![0usize; inv.len()];
    for (src, &dst) in inv.iter().enumerate() {
        map[src] = dst;
    }
    Ok(tape.permute(tokens, Arc::new(map), vec![b, c, h, w])?)
}

/// Multi-head scaled dot-product self-attention over `[N,S,C]` tokens:
/// per head, softmax(QK^T/sqrt(d))V with Q,K,V from the three projection
/// matrices; head outputs are concatenated. No output projection.
pub fn multi_head_attention(
    tape: &mut Tape,
    x: Var,
    wq: Var,
    wk: Var,
    wv: Var,
    cfg: &ModelConfig,
) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    let [n, s, c] = shape[..] else {
        return Err(ModelError::InputShape(shape));
    };
    let heads = cfg.heads;
    let d = cfg.head_dim();

    let flat = tape.reshape(x, vec![n * s, c])?;
    let q = tape.matmul(flat, wq)?;
    let k = tape.matmul(flat, wk)?;
    let v = tape.matmul(flat, wv)?;

    let split = split_heads_map(n, s, heads, d);
    let merge = merge_heads_map(n, s, heads, d);
    let qh = tape.permute(q, Arc::clone(&split), vec![n * heads, s, d])?;
    let kh = tape.permute(k, Arc::clone(&split), vec![n * heads, s, d])?;
    let vh = tape.permute(v, split, vec![n * heads, s, d])?;

    let kt = tape.transpose_last2(kh)?;
    let scores = tape.matmul(qh, kt)?;
    let scores = tape.scale(scores, 1.0 / (d as f64).sqrt());
    let attn = tape.softmax_lastdim(scores);
    let weighted = tape.matmul(attn, vh)?;
    Ok(tape.permute(weighted, merge, vec![n, s, c])?)
}

/// Map from `[N·S, C]` projections into `[N·H, S, d]` head-major layout.
fn split_heads_map(n: usize, s: usize, heads: usize, d: usize) -> Arc<Vec<usize>> {
    let c = heads * d;
    let mut map = Vec::with_capacity(n * s * c);
    for ni in 0..n {
        for hi in 0..heads {
            for si in 0..s {
                for di in 0..d {
                    map.push((ni * s + si) * c + hi * d + di);
                }
            }
        }
    }
    Arc::new(map)
}

/// Map from `[N·H, S, d]` back to `[N, S, C]`, concatenating heads.
fn merge_heads_map(n: usize, s: usize, heads: usize, d: usize) -> Arc<Vec<usize>> {
    let mut map = Vec::with_capacity(n * s * heads * d);
    for ni in 0..n {
        for si in 0..s {
            for hi in 0..heads {
                for di in 0..d {
                    map.push(((ni * heads + hi) * s + si) * d + di);
                }
            }
        }
    }
    Arc::new(map)
}

/// One transformer block:
/// `out = MLP(F_weighted + x) + F_weighted + x`,
/// with the two-layer MLP (hidden 4C, GELU) and, when layer norm is
/// enabled, normalization ahead of the attention and the MLP.
pub fn transformer_block(
    tape: &mut Tape,
    x: Var,
    vars: &ParamVars,
    prefix: &str,
    cfg: &ModelConfig,
) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    let [n, s, c] = shape[..] else {
        return Err(ModelError::InputShape(shape));
    };

    let attn_in = if cfg.use_layer_norm {
        let gamma = var(vars, &format!("{prefix}.norm1.gamma"))?;
        let beta = var(vars, &format!("{prefix}.norm1.beta"))?;
        tape.layer_norm(x, gamma, beta, 1e-5)?
    } else {
        x
    };
    let wq = var(vars, &format!("{prefix}.attn.wq"))?;
    let wk = var(vars, &format!("{prefix}.attn.wk"))?;
    let wv = var(vars, &format!("{prefix}.attn.wv"))?;
    let weighted = multi_head_attention(tape, attn_in, wq, wk, wv, cfg)?;

    let sum = tape.add(weighted, x)?;

    let mlp_in = if cfg.use_layer_norm {
        let gamma = var(vars, &format!("{prefix}.norm2.gamma"))?;
        let beta = var(vars, &format!("{prefix}.norm2.beta"))?;
        tape.layer_norm(sum, gamma, beta, 1e-5)?
    } else {
        sum
    };
    let flat = tape.reshape(mlp_in, vec![n * s, c])?;
    let fc1_w = var(vars, &format!("{prefix}.mlp.fc1.weight"))?;
    let fc1_b = var(vars, &format!("{prefix}.mlp.fc1.bias"))?;
    let fc2_w = var(vars, &format!("{prefix}.mlp.fc2.weight"))?;
    let fc2_b = var(vars, &format!("{prefix}.mlp.fc2.bias"))?;
    let hidden = tape.matmul(flat, fc1_w)?;
    let hidden = tape.add_bcast(hidden, fc1_b)?;
    let hidden = tape.gelu(hidden);
    let out = tape.matmul(hidden, fc2_w)?;
    let out = tape.add_bcast(out, fc2_b)?;
    let mlp = tape.reshape(out, vec![n, s, c])?;

    Ok(tape.add(mlp, sum)?)
}

/// The whole global representation path: tokenize, N transformer blocks,
/// detokenize back to the feature-map layout.
pub fn global_path(tape: &mut Tape, f_shallow: Var, vars: &ParamVars, cfg: &ModelConfig) -> Result<Var> {
    let shape = tape.shape(f_shallow).to_vec();
    let [b, _c, h, w] = shape[..] else {
        return Err(ModelError::InputShape(shape));
    };
    let pos = var(vars, "global.pos_enc")?;
    let mut tokens = tokenize(tape, f_shallow, Some(pos), cfg)?;
    for n in 0..cfg.transformer_blocks {
        tokens = transformer_block(tape, tokens, vars, &format!("global.block{n}"), cfg)?;
    }
    detokenize(tape, tokens, cfg, b, h, w)
}
