//! Data representation systems `x = f(h_1, …, h_k)`.
//!
//! Every system exposes its synthesis map, an analysis map where one
//! exists, and the vector-Jacobian product of synthesis that the mask
//! solvers need to push output gradients back onto coefficient blocks.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::types::{BlockLayout, CoefficientVector, Shape, Signal};

mod dictionary;
mod fourier;
mod grouped;
mod pixel;
mod wavelet;

pub use dictionary::DictionaryRepresentation;
pub use fourier::{
    dft_forward, dft_inverse, FourierPerFrequency, FourierSplit, InverseDft,
};
pub use grouped::{GroupedStructural, CITY_PART, MEASUREMENT_PART, TX_PART};
pub use pixel::PixelGroups;
pub use wavelet::{dwt_forward, dwt_inverse, Subband, WaveletFamily, WaveletRepresentation, WaveletSpec};

/// Scale metadata attached to a block (wavelet systems only).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BlockLabel {
    /// 1 is the finest scale, `J` the coarsest.
    pub scale: usize,
    pub subband: Subband,
}

pub trait Representation: Send + Sync {
    fn layout(&self) -> &Arc<BlockLayout>;

    fn signal_shape(&self) -> &Shape;

    fn synthesize(&self, h: &CoefficientVector) -> Result<Signal>;

    fn analyze(&self, x: &Signal) -> Result<CoefficientVector>;

    /// `J_f(h)ᵀ · cotangent`, laid out like `h`.
    fn synthesize_vjp(&self, h: &CoefficientVector, cotangent: &[f64]) -> Result<Vec<f64>>;

    fn scale_labels(&self) -> Option<&[BlockLabel]> {
        None
    }

    fn num_blocks(&self) -> usize {
        self.layout().num_blocks()
    }
}

pub(crate) fn check_signal(shape: &Shape, x: &Signal) -> Result<()> {
    if x.shape() != shape {
        return Err(crate::error::RdeError::Shape(format!(
            "representation expects {:?}, got {:?}",
            shape,
            x.shape()
        )));
    }
    Ok(())
}

pub(crate) fn check_coefficients(layout: &Arc<BlockLayout>, h: &CoefficientVector) -> Result<()> {
    if Arc::ptr_eq(layout, h.layout()) {
        return Ok(());
    }
    layout.check_matches(h.layout())
}

pub(crate) fn check_cotangent(shape: &Shape, g: &[f64]) -> Result<()> {
    if g.len() != shape.len() {
        return Err(crate::error::RdeError::Shape(format!(
            "cotangent has {} entries, signal has {}",
            g.len(),
            shape.len()
        )));
    }
    Ok(())
}
