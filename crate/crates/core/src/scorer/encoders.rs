use ndarray::{Array1, Array2, ArrayView2};

use super::Encoder;
use crate::error::{Error, Result};

/// Stateless encoder: each output frame is the mean of `factor` input frames
/// (fewer for a trailing partial group).
#[derive(Clone, Debug)]
pub struct MeanPoolEncoder {
    factor: usize,
}

impl MeanPoolEncoder {
    pub fn new(factor: usize) -> Self {
        assert!(factor > 0, "subsample factor must be positive");
        Self { factor }
    }
}

impl Encoder for MeanPoolEncoder {
    fn subsample_factor(&self) -> usize {
        self.factor
    }

    fn is_stateful(&self) -> bool {
        false
    }

    fn encode(&mut self, x: ArrayView2<'_, f64>, _is_reset: bool) -> Result<Array2<f64>> {
        let (n, dim) = x.dim();
        let out_len = n.div_ceil(self.factor);
        let mut out = Array2::zeros((out_len, dim));
        for (k, mut row) in out.rows_mut().into_iter().enumerate() {
            let group = x.slice(ndarray::s![k * self.factor..((k + 1) * self.factor).min(n), ..]);
            row.assign(&group.mean_axis(ndarray::Axis(0)).expect("non-empty group"));
        }
        Ok(out)
    }
}

/// Per-channel exponential moving average `s <- decay * s + (1 - decay) * x_t`,
/// emitting the state after every `factor`-th input frame and after the last
/// frame of a trailing partial group. `is_reset` zeroes the state first.
pub fn toy_recurrent_encode(
    state: &mut Array1<f64>,
    x: ArrayView2<'_, f64>,
    is_reset: bool,
    decay: f64,
    factor: usize,
) -> Result<Array2<f64>> {
    if !(decay > 0.0 && decay < 1.0) {
        return Err(Error::InvalidInput(format!("decay must lie in (0, 1), got {decay}")));
    }
    let (n, dim) = x.dim();
    if state.len() != dim || is_reset {
        *state = Array1::zeros(dim);
    }
    let mut out = Array2::zeros((n.div_ceil(factor), dim));
    for (t, frame) in x.rows().into_iter().enumerate() {
        state.zip_mut_with(&frame, |s, &v| *s = decay * *s + (1.0 - decay) * v);
        if (t + 1) % factor == 0 || t + 1 == n {
            out.row_mut(t / factor).assign(state);
        }
    }
    Ok(out)
}

/// Stateful stand-in for a recurrent encoder; makes encoder resets and
/// back-off re-encoding observable.
#[derive(Clone, Debug)]
pub struct ToyRecurrentEncoder {
    decay: f64,
    factor: usize,
    state: Array1<f64>,
}

impl ToyRecurrentEncoder {
    pub fn new(decay: f64, factor: usize) -> Result<Self> {
        if !(decay > 0.0 && decay < 1.0) {
            return Err(Error::InvalidInput(format!("decay must lie in (0, 1), got {decay}")));
        }
        if factor == 0 {
            return Err(Error::InvalidInput("subsample factor must be positive".into()));
        }
        Ok(Self {
            decay,
            factor,
            state: Array1::zeros(0),
        })
    }

    pub fn state(&self) -> &Array1<f64> {
        &self.state
    }
}

impl Encoder for ToyRecurrentEncoder {
    fn subsample_factor(&self) -> usize {
        self.factor
    }

    fn is_stateful(&self) -> bool {
        true
    }

    fn encode(&mut self, x: ArrayView2<'_, f64>, is_reset: bool) -> Result<Array2<f64>> {
        toy_recurrent_encode(&mut self.state, x, is_reset, self.decay, self.factor)
    }
}
