use std::sync::Arc;

use nalgebra::{DMatrix, DVector, LU, Dyn};

use super::{check_coefficients, check_cotangent, check_signal, Representation};
use crate::error::{invalid, RdeError, Result};
use crate::types::{BlockLayout, CoefficientVector, Shape, Signal};

const MAX_CONDITION: f64 = 1e12;

/// Linear synthesis `x = Σ_j h_j ψ_j` over a list of atoms.
pub struct DictionaryRepresentation {
    shape: Shape,
    layout: Arc<BlockLayout>,
    /// Columns are atoms (n × k).
    atoms: DMatrix<f64>,
    solver: std::result::Result<LU<f64, Dyn, Dyn>, String>,
}

impl DictionaryRepresentation {
    pub fn new(atoms: &[Vec<f64>]) -> Result<Self> {
        let n = atoms.first().map(Vec::len).unwrap_or(0);
        Self::with_shape(atoms, Shape::Vector(n))
    }

    pub fn with_shape(atoms: &[Vec<f64>], shape: Shape) -> Result<Self> {
        if atoms.is_empty() {
            return Err(invalid("dictionary needs at least one atom"));
        }
        let n = shape.len();
        if let Some(j) = atoms.iter().position(|a| a.len() != n) {
            return Err(invalid(format!(
                "atom {j} has length {} but signals have {n} entries",
                atoms[j].len()
            )));
        }
        let k = atoms.len();
        let matrix = DMatrix::from_fn(n, k, |r, c| atoms[c][r]);
        let solver = if n == k {
            let sv = matrix.clone().svd(false, false).singular_values;
            let max = sv.max();
            let min = sv.min();
            let cond = if min > 0.0 { max / min } else { f64::INFINITY };
            if cond > MAX_CONDITION {
                Err(format!("condition number {cond:e} exceeds {MAX_CONDITION:e}"))
            } else {
                Ok(matrix.clone().lu())
            }
        } else {
            Err(format!("{k} atoms in dimension {n} do not form a basis"))
        };
        Ok(Self {
            shape,
            layout: Arc::new(BlockLayout::uniform(k, 1)?),
            atoms: matrix,
            solver,
        })
    }

    pub fn has_analysis(&self) -> bool {
        self.solver.is_ok()
    }
}

impl Representation for DictionaryRepresentation {
    fn layout(&self) -> &Arc<BlockLayout> {
        &self.layout
    }

    fn signal_shape(&self) -> &Shape {
        &self.shape
    }

    fn synthesize(&self, h: &CoefficientVector) -> Result<Signal> {
        check_coefficients(&self.layout, h)?;
        let x = &self.atoms * DVector::from_column_slice(h.values());
        Signal::new(x.as_slice().to_vec(), self.shape.clone())
    }

    fn analyze(&self, x: &Signal) -> Result<CoefficientVector> {
        check_signal(&self.shape, x)?;
        let lu = match &self.solver {
            Ok(lu) => lu,
            Err(reason) => {
                return Err(if reason.starts_with("condition") {
                    let sv = self.atoms.clone().svd(false, false).singular_values;
                    RdeError::IllConditioned(sv.max() / sv.min())
                } else {
                    RdeError::AnalysisUnavailable(reason.clone())
                })
            }
        };
        let h = lu
            .solve(&DVector::from_column_slice(x.values()))
            .ok_or_else(|| RdeError::AnalysisUnavailable("singular dictionary".into()))?;
        CoefficientVector::from_flat(self.layout.clone(), h.as_slice().to_vec())
    }

    fn synthesize_vjp(&self, h: &CoefficientVector, cotangent: &[f64]) -> Result<Vec<f64>> {
        check_coefficients(&self.layout, h)?;
        check_cotangent(&self.shape, cotangent)?;
        let u = self.atoms.tr_mul(&DVector::from_column_slice(cotangent));
        Ok(u.as_slice().to_vec())
    }
}
