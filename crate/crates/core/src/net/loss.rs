use crate::autodiff::{Tape, Var};
use crate::error::Result;

/// Target value excluded from the segmentation loss (letterbox padding).
pub const IGNORE_INDEX: usize = 255;

#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub total: Var,
    pub seg: Var,
    pub context: Option<Var>,
}

/// `L_seg + mu * L_context`, both softmax cross-entropies. When the model
/// has no shape head (or `mu == 0`) the total is the segmentation loss
/// node itself.
pub fn total_loss(
    tape: &mut Tape,
    seg_logits: Var,
    seg_targets: &[usize],
    shape_logits: Option<Var>,
    flow_targets: &[usize],
    mu: f64,
) -> Result<LossVars> {
    let seg = tape.cross_entropy(seg_logits, seg_targets, Some(IGNORE_INDEX))?;
    let context = match shape_logits {
        Some(logits) => Some(tape.cross_entropy(logits, flow_targets, None)?),
        None => None,
    };
    let total = match context {
        Some(ctx) if mu != 0.0 => {
            let weighted = tape.scale(ctx, mu);
            tape.add(seg, weighted)?
        }
        _ => seg,
    };
    Ok(LossVars { total, seg, context })
}
