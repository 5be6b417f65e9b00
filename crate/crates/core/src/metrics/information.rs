use crate::datagen::TruthMask;
use crate::error::{shape_err, Result};
use crate::gradcore::Tensor;
use crate::scalar::Scalar;

/// Mask values are pulled into `[CLIP, 1 − CLIP]` before any logarithm.
pub const CLIP: f64 = 1e-6;

fn salient_values<'a, S: Scalar>(mask: &'a Tensor<S>, truth: &'a TruthMask) -> Result<impl Iterator<Item = f64> + 'a> {
    if mask.shape() != truth.shape() {
        return Err(shape_err!("mask {:?} vs truth {:?}", mask.shape(), truth.shape()));
    }
    Ok(mask
        .data()
        .iter()
        .zip(truth.cells())
        .filter(|(_, &t)| t)
        .map(|(&m, _)| m.as_f64().clamp(CLIP, 1.0 - CLIP)))
}

/// `I_m = −Σ_a ln(1 − m)` over truly salient cells.
pub fn mask_information<S: Scalar>(mask: &Tensor<S>, truth: &TruthMask) -> Result<f64> {
    Ok(salient_values(mask, truth)?.map(|m| -(-m).ln_1p()).sum())
}

/// `S_m = −Σ_a [m ln m + (1 − m) ln(1 − m)]` over truly salient cells.
pub fn mask_entropy<S: Scalar>(mask: &Tensor<S>, truth: &TruthMask) -> Result<f64> {
    Ok(salient_values(mask, truth)?.map(|m| -(m * m.ln() + (1.0 - m) * (-m).ln_1p())).sum())
}
