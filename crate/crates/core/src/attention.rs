//! Hard monotonic attention and MoChA numerics.
//!
//! [`expected_alignment`] is the training-time marginal over all monotone
//! stopping paths; at inference the search uses [`detect_boundary`] and
//! [`chunk_window`]/[`chunk_attention`] directly.

use std::ops::RangeInclusive;

use ndarray::{Array1, Array2};

use crate::block::EncoderBlock;
use crate::error::{Error, Result};

pub const DEFAULT_BOUNDARY_THRESHOLD: f64 = 0.5;

/// `p[[i, j]]`: probability that output token `i` stops at encoder frame `j`.
#[derive(Clone, Debug, PartialEq)]
pub struct SelectionProbs(Array2<f64>);

impl SelectionProbs {
    pub fn new(p: Array2<f64>) -> Result<Self> {
        if let Some(bad) = p.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidInput(format!(
                "selection probability {bad} outside [0, 1]"
            )));
        }
        Ok(Self(p))
    }

    pub fn view(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn tokens(&self) -> usize {
        self.0.nrows()
    }

    pub fn frames(&self) -> usize {
        self.0.ncols()
    }
}

/// `alpha[[i, j]]`: marginal probability that token `i` attends frame `j`.
#[derive(Clone, Debug, PartialEq)]
pub struct AlignmentDist(pub Array2<f64>);

impl AlignmentDist {
    pub fn row_mass(&self, i: usize) -> f64 {
        self.0.row(i).sum()
    }
}

/// Expected alignment with selection probabilities scaled by `1 - lambda_se`.
///
/// Evaluated in the division-free form
/// `q[i][j] = (1 - p[i][j-1]) q[i][j-1] + alpha[i-1][j]`, `alpha[i][j] = p[i][j] q[i][j]`,
/// with the virtual row `alpha[-1]` one-hot at the first frame.
pub fn expected_alignment(p: &SelectionProbs, lambda_se: f64) -> Result<AlignmentDist> {
    if !(0.0..1.0).contains(&lambda_se) {
        return Err(Error::InvalidInput(format!(
            "lambda_se must lie in [0, 1), got {lambda_se}"
        )));
    }
    let scale = 1.0 - lambda_se;
    let (rows, cols) = p.0.dim();
    let mut alpha = Array2::<f64>::zeros((rows, cols));
    if cols == 0 {
        return Ok(AlignmentDist(alpha));
    }
    let mut prev = Array1::<f64>::zeros(cols);
    prev[0] = 1.0;
    for i in 0..rows {
        let mut q = 0.0;
        let mut p_prev = 0.0;
        for j in 0..cols {
            let pj = scale * p.0[[i, j]];
            q = (1.0 - p_prev) * q + prev[j];
            alpha[[i, j]] = pj * q;
            p_prev = pj;
        }
        prev.assign(&alpha.row(i));
    }
    Ok(AlignmentDist(alpha))
}

/// Test-time stop decision; ties stop.
#[inline]
pub fn detect_boundary(p: f64, threshold: f64) -> bool {
    p >= threshold
}

/// Global frame range of the `w`-frame chunk ending at `head`, clipped to the
/// history the block exposes.
pub fn chunk_window(head: usize, w: usize, block: &EncoderBlock) -> Result<RangeInclusive<usize>> {
    if w == 0 {
        return Err(Error::InvalidInput("chunk width must be positive".into()));
    }
    let start = block.history_start();
    if head < start || head >= block.end() {
        return Err(Error::InvalidInput(format!(
            "head {head} outside available frames {start}..{}",
            block.end()
        )));
    }
    Ok((head + 1).saturating_sub(w).max(start)..=head)
}

/// Softmax over chunk energies.
pub fn chunk_attention(energies: &[f64]) -> Result<Vec<f64>> {
    if energies.is_empty() {
        return Err(Error::InvalidInput("empty chunk".into()));
    }
    let max = energies.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = energies.iter().map(|e| (e - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// Weighted sum of the window frames.
pub fn chunk_context(block: &EncoderBlock, window: RangeInclusive<usize>, weights: &[f64]) -> Array1<f64> {
    let mut ctx = Array1::zeros(block.dim());
    for (g, &w) in window.zip(weights) {
        if let Some(frame) = block.frame(g) {
            ctx.scaled_add(w, &frame);
        }
    }
    ctx
}
