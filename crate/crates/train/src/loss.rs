use tanet_tensor::{Tape, Var};

/// Mean absolute error over all elements, with subgradient 0 at ties.
pub fn l1_loss(tape: &mut Tape, pred: Var, target: Var) -> tanet_tensor::Result<Var> {
    let diff = tape.sub(pred, target)?;
    let abs = tape.abs(diff);
    Ok(tape.mean_all(abs))
}
