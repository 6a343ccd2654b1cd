use tanet_tensor::{Tape, Tensor, Var};

use crate::params::var;
use crate::smfn::local_path;
use crate::transformer::global_path;
use crate::{ModelConfig, ModelError, ParamVars, Result, TANetParams};

fn conv(tape: &mut Tape, x: Var, vars: &ParamVars, name: &str, padding: usize) -> Result<Var> {
    let w = var(vars, &format!("{name}.weight"))?;
    let b = var(vars, &format!("{name}.bias"))?;
    Ok(tape.conv2d(x, w, b, 1, padding)?)
}

/// One 3x3 convolution lifting the RGB input into the C-channel feature
/// space.
pub fn shallow_extract(tape: &mut Tape, img: Var, vars: &ParamVars) -> Result<Var> {
    let shape = tape.shape(img).to_vec();
    if shape.len() != 4 || shape[1] != 3 {
        return Err(ModelError::InputShape(shape));
    }
    conv(tape, img, vars, "shallow", 1)
}

/// Global-local aggregation: fine-tune each path (1x1 for global, 3x3 for
/// local), concatenate along channels, fuse with a 1x1 convolution.
pub fn glam(tape: &mut Tape, f_global: Var, f_local: Var, vars: &ParamVars) -> Result<Var> {
    let g_ft = conv(tape, f_global, vars, "glam.global_ft", 0)?;
    let l_ft = conv(tape, f_local, vars, "glam.local_ft", 1)?;
    let cat = tape.concat_channels(g_ft, l_ft)?;
    conv(tape, cat, vars, "glam.fuse", 0)
}

/// Adds the shallow skip, runs log2(scale) sub-pixel stages
/// (conv C→4C, shuffle r=2), and reconstructs RGB with a 3x3 convolution.
/// Returns `(i_sr, f_up)` where `f_up` is the upscaled feature ahead of
/// the reconstruction conv. The output is not clamped; clamping happens
/// at image export only.
pub fn upscale_reconstruct(
    tape: &mut Tape,
    f_gl: Var,
    f_shallow: Var,
    vars: &ParamVars,
    cfg: &ModelConfig,
) -> Result<(Var, Var)> {
    let mut f = tape.add(f_gl, f_shallow)?;
    for s in 0..cfg.upscale_stages() {
        let expanded = conv(tape, f, vars, &format!("up.stage{s}"), 1)?;
        f = tape.pixel_shuffle(expanded, 2)?;
    }
    let i_sr = conv(tape, f, vars, "recon", 1)?;
    Ok((i_sr, f))
}

/// Intermediate activations of one forward pass, for inspection.
#[derive(Debug, Clone)]
pub struct FeatureBundle {
    pub f_shallow: Tensor,
    pub f_global: Tensor,
    pub f_local: Tensor,
    pub f_gl: Tensor,
    pub f_up: Tensor,
}

/// A completed forward pass: the output var, the registered parameter
/// vars (for reading gradients after backward), and the input leaf.
pub struct ForwardPass {
    pub output: Var,
    pub input: Var,
    pub params: ParamVars,
    pub features: Option<FeatureBundle>,
}

/// Runs the full network on `img_lr` (`[B,3,h,w]`), recording onto `tape`.
///
/// `trainable` registers parameters with gradient tracking; the input
/// tensor's own `requires_grad` flag is preserved. With `retain_features`
/// the per-stage activations are copied into the result.
pub fn forward(
    tape: &mut Tape,
    params: &TANetParams,
    cfg: &ModelConfig,
    img_lr: &Tensor,
    trainable: bool,
    retain_features: bool,
) -> Result<ForwardPass> {
    cfg.validate()?;
    let shape = img_lr.shape().to_vec();
    let [b, ch, h, w] = shape[..] else {
        return Err(ModelError::InputShape(shape));
    };
    if ch != 3 {
        return Err(ModelError::InputShape(shape));
    }
    if cfg.has_global() && (h % cfg.patch_h != 0 || w % cfg.patch_w != 0) {
        return Err(ModelError::PatchDivisibility {
            h,
            w,
            ph: cfg.patch_h,
            pw: cfg.patch_w,
        });
    }

    let vars = crate::register_params(tape, params, trainable);
    let input = tape.leaf(img_lr.clone());

    let f_shallow = shallow_extract(tape, input, &vars)?;
    let feat_shape = vec![b, cfg.channels, h, w];

    let f_global = if cfg.has_global() {
        global_path(tape, f_shallow, &vars, cfg)?
    } else {
        tape.leaf(Tensor::zeros(feat_shape.clone()))
    };
    let f_local = if cfg.has_local() {
        local_path(tape, f_shallow, &vars, cfg)?
    } else {
        tape.leaf(Tensor::zeros(feat_shape))
    };

    let f_gl = glam(tape, f_global, f_local, &vars)?;
    let (output, f_up) = upscale_reconstruct(tape, f_gl, f_shallow, &vars, cfg)?;

    let features = retain_features.then(|| FeatureBundle {
        f_shallow: tape.value(f_shallow).clone(),
        f_global: tape.value(f_global).clone(),
        f_local: tape.value(f_local).clone(),
        f_gl: tape.value(f_gl).clone(),
        f_up: tape.value(f_up).clone(),
    });

    Ok(ForwardPass {
        output,
        input,
        params: vars,
        features,
    })
}
