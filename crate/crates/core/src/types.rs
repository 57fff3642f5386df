//! Domain objects shared by every stage of an explanation run: signals,
//! block-structured coefficient vectors and relevance masks.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, RdeError, Result};

/// Dimension descriptor of a [`Signal`].
///
/// Images are stored channels-first (`c * height * width + row * width + col`).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Vector(usize),
    Image {
        height: usize,
        width: usize,
        channels: usize,
    },
    /// Named parts concatenated in order.
    Composite(Vec<(String, Shape)>),
}

impl Shape {
    pub fn image(height: usize, width: usize, channels: usize) -> Self {
        Shape::Image {
            height,
            width,
            channels,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Shape::Vector(n) => *n,
            Shape::Image {
                height,
                width,
                channels,
            } => height * width * channels,
            Shape::Composite(parts) => parts.iter().map(|(_, s)| s.len()).sum(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Offset range of a named composite part.
    pub fn part_range(&self, name: &str) -> Option<std::ops::Range<usize>> {
        let Shape::Composite(parts) = self else {
            return None;
        };
        let mut start = 0;
        for (part, shape) in parts {
            let end = start + shape.len();
            if part == name {
                return Some(start..end);
            }
            start = end;
        }
        None
    }
}

/// A model-input domain object: finite real values plus shape metadata.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Signal {
    values: Vec<f64>,
    shape: Shape,
}

impl Signal {
    pub fn new(values: Vec<f64>, shape: Shape) -> Result<Self> {
        if values.len() != shape.len() {
            return Err(RdeError::Shape(format!(
                "signal has {} values but shape {:?} needs {}",
                values.len(),
                shape,
                shape.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(RdeError::NonFinite(format!("signal entry {i}")));
        }
        Ok(Self { values, shape })
    }

    pub fn vector(values: Vec<f64>) -> Result<Self> {
        let n = values.len();
        Self::new(values, Shape::Vector(n))
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Clamp every entry into `[lo, hi]`.
    pub fn clipped(mut self, lo: f64, hi: f64) -> Self {
        for v in &mut self.values {
            *v = v.clamp(lo, hi);
        }
        self
    }
}

/// Offsets of the blocks `h_1, …, h_k` inside a flat coefficient buffer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockLayout {
    offsets: Vec<usize>,
}

impl BlockLayout {
    pub fn new(dims: &[usize]) -> Result<Self> {
        if dims.is_empty() {
            return Err(invalid("a coefficient vector needs at least one block"));
        }
        if let Some(i) = dims.iter().position(|&d| d == 0) {
            return Err(invalid(format!("block {i} has zero dimension")));
        }
        let mut offsets = Vec::with_capacity(dims.len() + 1);
        offsets.push(0);
        let mut acc = 0;
        for &d in dims {
            acc += d;
            offsets.push(acc);
        }
        Ok(Self { offsets })
    }

    /// `k` blocks of equal dimension `d`.
    pub fn uniform(k: usize, d: usize) -> Result<Self> {
        Self::new(&vec![d; k])
    }

    pub fn num_blocks(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn total_len(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn dim(&self, block: usize) -> usize {
        self.offsets[block + 1] - self.offsets[block]
    }

    pub fn range(&self, block: usize) -> std::ops::Range<usize> {
        self.offsets[block]..self.offsets[block + 1]
    }

    pub fn dims(&self) -> Vec<usize> {
        self.offsets.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Checks that `other` has identical block structure, naming the first
    /// offending block otherwise.
    pub fn check_matches(&self, other: &BlockLayout) -> Result<()> {
        if self.num_blocks() != other.num_blocks() {
            return Err(RdeError::BlockCount {
                expected: self.num_blocks(),
                found: other.num_blocks(),
            });
        }
        for b in 0..self.num_blocks() {
            if self.dim(b) != other.dim(b) {
                return Err(RdeError::BlockMismatch {
                    block: b,
                    expected: self.dim(b),
                    found: other.dim(b),
                });
            }
        }
        Ok(())
    }
}

/// Block-structured representation `h = (h_1, …, h_k)`, stored flat.
#[derive(Clone, Debug, PartialEq)]
pub struct CoefficientVector {
    layout: Arc<BlockLayout>,
    values: Vec<f64>,
}

impl CoefficientVector {
    pub fn from_blocks(blocks: Vec<Vec<f64>>) -> Result<Self> {
        let dims: Vec<usize> = blocks.iter().map(Vec::len).collect();
        let layout = Arc::new(BlockLayout::new(&dims)?);
        Self::from_flat(layout, blocks.into_iter().flatten().collect())
    }

    pub fn from_flat(layout: Arc<BlockLayout>, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.total_len() {
            return Err(RdeError::Shape(format!(
                "coefficient buffer has {} entries, layout needs {}",
                values.len(),
                layout.total_len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(RdeError::NonFinite(format!("coefficient entry {i}")));
        }
        Ok(Self { layout, values })
    }

    pub fn filled(layout: Arc<BlockLayout>, value: f64) -> Self {
        let n = layout.total_len();
        Self {
            layout,
            values: vec![value; n],
        }
    }

    pub fn layout(&self) -> &Arc<BlockLayout> {
        &self.layout
    }

    pub fn num_blocks(&self) -> usize {
        self.layout.num_blocks()
    }

    pub fn block(&self, i: usize) -> &[f64] {
        &self.values[self.layout.range(i)]
    }

    pub fn block_mut(&mut self, i: usize) -> &mut [f64] {
        let r = self.layout.range(i);
        &mut self.values[r]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn check_matches(&self, other: &CoefficientVector) -> Result<()> {
        if Arc::ptr_eq(&self.layout, &other.layout) {
            return Ok(());
        }
        self.layout.check_matches(&other.layout)
    }
}

/// Per-block relevance values `s ∈ [0,1]^k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Mask {
    values: Vec<f64>,
}

impl Mask {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values
            .iter()
            .position(|v| !v.is_finite() || *v < 0.0 || *v > 1.0)
        {
            return Err(invalid(format!(
                "mask entry {i} = {} outside [0,1]",
                values[i]
            )));
        }
        Ok(Self { values })
    }

    pub fn ones(k: usize) -> Self {
        Self {
            values: vec![1.0; k],
        }
    }

    pub fn zeros(k: usize) -> Self {
        Self {
            values: vec![0.0; k],
        }
    }

    /// Binary mask with ones at `indices`.
    pub fn from_support(k: usize, indices: &[usize]) -> Result<Self> {
        let mut values = vec![0.0; k];
        for &i in indices {
            if i >= k {
                return Err(invalid(format!("support index {i} out of range for k = {k}")));
            }
            values[i] = 1.0;
        }
        Ok(Self { values })
    }

    /// Clamps arbitrary values into `[0,1]`.
    pub fn clamped(values: Vec<f64>) -> Self {
        Self {
            values: values.into_iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_binary(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    pub fn sparsity_l0(&self) -> usize {
        self.values.iter().filter(|&&v| v != 0.0).count()
    }

    pub fn sparsity_l1(&self) -> f64 {
        self.values.iter().sum()
    }

    /// `‖s‖₁ / k`.
    pub fn normalized_l1(&self) -> f64 {
        self.sparsity_l1() / self.values.len() as f64
    }

    /// Indices with value strictly above `threshold`.
    pub fn support(&self, threshold: f64) -> Vec<usize> {
        self.values
            .iter()
            .enumerate()
            .filter(|(_, &v)| v > threshold)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn thresholded(&self, threshold: f64) -> Mask {
        Mask {
            values: self
                .values
                .iter()
                .map(|&v| if v > threshold { 1.0 } else { 0.0 })
                .collect(),
        }
    }
}

impl TryFrom<Vec<f64>> for Mask {
    type Error = RdeError;
    fn try_from(values: Vec<f64>) -> Result<Self> {
        Mask::new(values)
    }
}

impl From<Mask> for Vec<f64> {
    fn from(m: Mask) -> Self {
        m.values
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn signal_rejects_bad_length_and_nan() {
        assert!(Signal::new(vec![1.0, 2.0], Shape::Vector(3)).is_err());
        assert!(Signal::vector(vec![1.0, f64::NAN]).is_err());
        let img = Signal::new(vec![0.0; 12], Shape::image(2, 2, 3)).unwrap();
        assert_eq!(img.len(), 12);
    }

    #[test]
    fn composite_part_ranges() {
        let shape = Shape::Composite(vec![
            ("tx".into(), Shape::image(2, 2, 1)),
            ("city".into(), Shape::image(2, 2, 1)),
        ]);
        assert_eq!(shape.len(), 8);
        assert_eq!(shape.part_range("city"), Some(4..8));
        assert_eq!(shape.part_range("nope"), None);
    }

    #[test]
    fn layout_mismatch_names_block() {
        let a = BlockLayout::new(&[1, 2, 3]).unwrap();
        let b = BlockLayout::new(&[1, 2, 4]).unwrap();
        match a.check_matches(&b) {
            Err(RdeError::BlockMismatch { block, .. }) => assert_eq!(block, 2),
            other => panic!("unexpected {other:?}"),
        }
        assert!(BlockLayout::new(&[]).is_err());
        assert!(BlockLayout::new(&[1, 0]).is_err());
    }

    #[test]
    fn mask_sparsity() {
        let m = Mask::new(vec![0.5, 0.0, 1.0]).unwrap();
        assert_eq!(m.sparsity_l0(), 2);
        assert!((m.sparsity_l1() - 1.5).abs() < 1e-15);
        assert!(!m.is_binary());
        assert!(m.thresholded(0.5).is_binary());
        assert_eq!(m.support(0.5), vec![2]);
        assert!(Mask::new(vec![1.2]).is_err());
        assert!(Mask::new(vec![-0.1]).is_err());
    }
}
