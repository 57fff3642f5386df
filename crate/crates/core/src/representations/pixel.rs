use std::sync::Arc;

use super::{check_coefficients, check_cotangent, check_signal, Representation};
use crate::error::{invalid, Result};
use crate::types::{BlockLayout, CoefficientVector, Shape, Signal};

/// Identity-type systems: the signal entries are partitioned into blocks and
/// `f` just scatters block entries back to their positions.
///
/// Covers per-pixel (optionally per channel tuple) and per-patch systems.
#[derive(Clone, Debug)]
pub struct PixelGroups {
    shape: Shape,
    layout: Arc<BlockLayout>,
    /// Flat signal index of every coefficient, in coefficient order.
    index: Vec<usize>,
}

impl PixelGroups {
    /// One block per position, holding `channels_per_block` values.
    ///
    /// For an image whose channel count equals `channels_per_block`, block
    /// `i` is the channel tuple of pixel `i`; otherwise consecutive runs of
    /// values are grouped.
    pub fn identity(shape: Shape, channels_per_block: usize) -> Result<Self> {
        let n = shape.len();
        if channels_per_block == 0 || !n.is_multiple_of(channels_per_block) {
            return Err(invalid(format!(
                "{n} values are not divisible into blocks of {channels_per_block}"
            )));
        }
        let k = n / channels_per_block;
        let index = match shape {
            Shape::Image {
                height,
                width,
                channels,
            } if channels == channels_per_block && channels > 1 => {
                let plane = height * width;
                (0..plane)
                    .flat_map(|p| (0..channels).map(move |c| c * plane + p))
                    .collect()
            }
            _ => (0..n).collect(),
        };
        Ok(Self {
            layout: Arc::new(BlockLayout::uniform(k, channels_per_block)?),
            shape,
            index,
        })
    }

    /// Non-overlapping `patch_side × patch_side` pixel groups (all channels)
    /// in row-major patch order.
    pub fn patches(shape: Shape, patch_side: usize) -> Result<Self> {
        let Shape::Image {
            height,
            width,
            channels,
        } = shape
        else {
            return Err(invalid("patch representation needs an image shape"));
        };
        if patch_side == 0 || height % patch_side != 0 || width % patch_side != 0 {
            return Err(invalid(format!(
                "image {height}x{width} not divisible into {patch_side}-pixel patches"
            )));
        }
        let plane = height * width;
        let mut index = Vec::with_capacity(shape.len());
        for pr in 0..height / patch_side {
            for pc in 0..width / patch_side {
                for r in 0..patch_side {
                    for c in 0..patch_side {
                        let p = (pr * patch_side + r) * width + pc * patch_side + c;
                        index.extend((0..channels).map(|ch| ch * plane + p));
                    }
                }
            }
        }
        let k = plane / (patch_side * patch_side);
        Ok(Self {
            layout: Arc::new(BlockLayout::uniform(k, patch_side * patch_side * channels)?),
            shape,
            index,
        })
    }

    /// Signal indices covered by block `b`.
    pub fn block_indices(&self, b: usize) -> &[usize] {
        &self.index[self.layout.range(b)]
    }
}

impl Representation for PixelGroups {
    fn layout(&self) -> &Arc<BlockLayout> {
        &self.layout
    }

    fn signal_shape(&self) -> &Shape {
        &self.shape
    }

    fn synthesize(&self, h: &CoefficientVector) -> Result<Signal> {
        check_coefficients(&self.layout, h)?;
        let mut out = vec![0.0; self.shape.len()];
        for (&idx, &v) in self.index.iter().zip(h.values()) {
            out[idx] = v;
        }
        Signal::new(out, self.shape.clone())
    }

    fn analyze(&self, x: &Signal) -> Result<CoefficientVector> {
        check_signal(&self.shape, x)?;
        let values = self.index.iter().map(|&i| x.values()[i]).collect();
        CoefficientVector::from_flat(self.layout.clone(), values)
    }

    fn synthesize_vjp(&self, h: &CoefficientVector, cotangent: &[f64]) -> Result<Vec<f64>> {
        check_coefficients(&self.layout, h)?;
        check_cotangent(&self.shape, cotangent)?;
        Ok(self.index.iter().map(|&i| cotangent[i]).collect())
    }
}
