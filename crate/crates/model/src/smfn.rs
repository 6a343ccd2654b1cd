use tanet_tensor::{Tape, Var};

use crate::params::var;
use crate::{ModelConfig, ParamVars, Result};

fn conv(tape: &mut Tape, x: Var, vars: &ParamVars, name: &str, padding: usize) -> Result<Var> {
    let w = var(vars, &format!("{name}.weight"))?;
    let b = var(vars, &format!("{name}.bias"))?;
    Ok(tape.conv2d(x, w, b, 1, padding)?)
}

/// Conv3x3 -> ReLU -> Conv3x3. The residual term enters at the module
/// level: the RB chain output F_res is summed with the fused feature and
/// the module input, so a zero-weight module collapses to the identity.
pub fn residual_block(tape: &mut Tape, x: Var, vars: &ParamVars, prefix: &str) -> Result<Var> {
    let y = conv(tape, x, vars, &format!("{prefix}.conv1"), 1)?;
    let y = tape.relu(y);
    conv(tape, y, vars, &format!("{prefix}.conv2"), 1)
}

/// One self-calibrated multi-path fusion module:
///
/// ```text
/// F_res   = RB_I(...RB_1(x))
/// w_cal   = sigmoid(conv1x1(conv1x1(x)))
/// F_cal   = w_cal ⊙ x
/// F_fused = conv1x1(concat(F_res, F_cal))
/// out     = F_res + F_fused + x
/// ```
pub fn smfm(tape: &mut Tape, x: Var, vars: &ParamVars, prefix: &str, cfg: &ModelConfig) -> Result<Var> {
    let mut f_res = x;
    for i in 0..cfg.rb_per_smfm {
        f_res = residual_block(tape, f_res, vars, &format!("{prefix}.rb{i}"))?;
    }

    let cal = conv(tape, x, vars, &format!("{prefix}.cal1"), 0)?;
    let cal = conv(tape, cal, vars, &format!("{prefix}.cal2"), 0)?;
    let weight_cal = tape.sigmoid(cal);
    let f_cal = tape.mul(weight_cal, x)?;

    let both = tape.concat_channels(f_res, f_cal)?;
    let f_fused = conv(tape, both, vars, &format!("{prefix}.fuse"), 0)?;

    let sum = tape.add(f_res, f_fused)?;
    Ok(tape.add(sum, x)?)
}

/// The local representation path: G SMFMs composed sequentially.
pub fn local_path(tape: &mut Tape, f_shallow: Var, vars: &ParamVars, cfg: &ModelConfig) -> Result<Var> {
    let mut f = f_shallow;
    for g in 0..cfg.smfm_count {
        f = smfm(tape, f, vars, &format!("local.smfm{g}"), cfg)?;
    }
    Ok(f)
}
