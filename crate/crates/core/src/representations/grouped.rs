use std::collections::HashSet;
use std::sync::Arc;

use super::{check_coefficients, check_cotangent, check_signal, Representation};
use crate::error::{invalid, RdeError, Result};
use crate::types::{BlockLayout, CoefficientVector, Shape, Signal};

pub const TX_PART: &str = "tx";
pub const CITY_PART: &str = "city";
pub const MEASUREMENT_PART: &str = "measurements";

/// Composite radio-map input `[x⁽⁰⁾, f₁(h⁽¹⁾), f₂(h⁽²⁾)]`.
///
/// Blocks `0..k1` are building indicators that paint their pixel group in
/// the city map; blocks `k1..k1+k2` are measurement values painted at their
/// location on an otherwise zero measurement map. The transmitter map is
/// carried along unchanged.
#[derive(Clone, Debug)]
pub struct GroupedStructural {
    shape: Shape,
    plane: usize,
    tx_map: Vec<f64>,
    buildings: Vec<Vec<usize>>,
    measurements: Vec<usize>,
    layout: Arc<BlockLayout>,
}

impl GroupedStructural {
    pub fn new(
        buildings: Vec<Vec<usize>>,
        measurements: Vec<usize>,
        height: usize,
        width: usize,
        tx_map: Vec<f64>,
    ) -> Result<Self> {
        let plane = height * width;
        if tx_map.len() != plane {
            return Err(invalid(format!(
                "transmitter map has {} pixels, canvas has {plane}",
                tx_map.len()
            )));
        }
        let mut seen = HashSet::new();
        for (g, group) in buildings.iter().enumerate() {
            if group.is_empty() {
                return Err(invalid(format!("building group {g} is empty")));
            }
            for &p in group {
                if p >= plane {
                    return Err(invalid(format!("building group {g} pixel {p} off canvas")));
                }
                if !seen.insert(p) {
                    return Err(invalid(format!("building group {g} overlaps another group at pixel {p}")));
                }
            }
        }
        let mut locs = HashSet::new();
        for &m in &measurements {
            if m >= plane {
                return Err(invalid(format!("measurement location {m} off canvas")));
            }
            if !locs.insert(m) {
                return Err(invalid(format!("duplicate measurement location {m}")));
            }
        }
        let k = buildings.len() + measurements.len();
        let shape = Shape::Composite(vec![
            (TX_PART.into(), Shape::image(height, width, 1)),
            (CITY_PART.into(), Shape::image(height, width, 1)),
            (MEASUREMENT_PART.into(), Shape::image(height, width, 1)),
        ]);
        Ok(Self {
            shape,
            plane,
            tx_map,
            buildings,
            measurements,
            layout: Arc::new(BlockLayout::uniform(k, 1)?),
        })
    }

    pub fn num_buildings(&self) -> usize {
        self.buildings.len()
    }

    pub fn num_measurements(&self) -> usize {
        self.measurements.len()
    }

    pub fn building_pixels(&self, b: usize) -> &[usize] {
        &self.buildings[b]
    }

    pub fn measurement_location(&self, m: usize) -> usize {
        self.measurements[m]
    }

    /// Block index of measurement `m`.
    pub fn measurement_block(&self, m: usize) -> usize {
        self.buildings.len() + m
    }
}

impl Representation for GroupedStructural {
    fn layout(&self) -> &Arc<BlockLayout> {
        &self.layout
    }

    fn signal_shape(&self) -> &Shape {
        &self.shape
    }

    fn synthesize(&self, h: &CoefficientVector) -> Result<Signal> {
        check_coefficients(&self.layout, h)?;
        let mut out = vec![0.0; 3 * self.plane];
        out[..self.plane].copy_from_slice(&self.tx_map);
        let v = h.values();
        for (b, group) in self.buildings.iter().enumerate() {
            for &p in group {
                out[self.plane + p] = v[b];
            }
        }
        let k1 = self.buildings.len();
        for (m, &loc) in self.measurements.iter().enumerate() {
            out[2 * self.plane + loc] = v[k1 + m];
        }
        Signal::new(out, self.shape.clone())
    }

    fn analyze(&self, x: &Signal) -> Result<CoefficientVector> {
        check_signal(&self.shape, x)?;
        let v = x.values();
        if v[..self.plane] != self.tx_map[..] {
            return Err(RdeError::Shape(
                "transmitter map differs from the one this system was built for".into(),
            ));
        }
        let mut h: Vec<f64> = self
            .buildings
            .iter()
            .map(|g| g.iter().map(|&p| v[self.plane + p]).sum::<f64>() / g.len() as f64)
            .collect();
        h.extend(self.measurements.iter().map(|&loc| v[2 * self.plane + loc]));
        CoefficientVector::from_flat(self.layout.clone(), h)
    }

    fn synthesize_vjp(&self, h: &CoefficientVector, cotangent: &[f64]) -> Result<Vec<f64>> {
        check_coefficients(&self.layout, h)?;
        check_cotangent(&self.shape, cotangent)?;
        let mut u: Vec<f64> = self
            .buildings
            .iter()
            .map(|g| g.iter().map(|&p| cotangent[self.plane + p]).sum())
            .collect();
        u.extend(self.measurements.iter().map(|&loc| cotangent[2 * self.plane + loc]));
        Ok(u)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn system() -> GroupedStructural {
        // 4x4 canvas, two buildings, two measurements
        GroupedStructural::new(vec![vec![0, 1], vec![10, 11, 14]], vec![5, 8], 4, 4, {
            let mut tx = vec![0.0; 16];
            tx[15] = 1.0;
            tx
        })
        .unwrap()
    }

    #[test]
    fn all_buildings_painted() {
        let s = system();
        let h = CoefficientVector::from_blocks(vec![vec![1.0], vec![1.0], vec![0.0], vec![0.0]]).unwrap();
        let y = s.synthesize(&h).unwrap();
        let city = &y.values()[16..32];
        let painted: Vec<usize> = (0..16).filter(|&p| city[p] == 1.0).collect();
        assert_eq!(painted, vec![0, 1, 10, 11, 14]);
        assert_eq!(y.values()[15], 1.0);
    }

    #[test]
    fn no_buildings_gives_empty_city() {
        let s = system();
        let h = CoefficientVector::from_blocks(vec![vec![0.0]; 4]).unwrap();
        let y = s.synthesize(&h).unwrap();
        assert!(y.values()[16..32].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn measurement_painted_at_location() {
        let s = system();
        let h = CoefficientVector::from_blocks(vec![vec![0.0], vec![0.0], vec![0.7], vec![0.0]]).unwrap();
        let y = s.synthesize(&h).unwrap();
        let meas = &y.values()[32..48];
        for (p, &v) in meas.iter().enumerate() {
            assert_eq!(v, if p == 5 { 0.7 } else { 0.0 });
        }
        let back = s.analyze(&y).unwrap();
        assert_eq!(back, h);
    }

    #[test]
    fn overlapping_groups_rejected() {
        let err = GroupedStructural::new(vec![vec![0, 1], vec![1, 2]], vec![], 2, 2, vec![0.0; 4]);
        assert!(err.is_err());
        let dup = GroupedStructural::new(vec![vec![0]], vec![3, 3], 2, 2, vec![0.0; 4]);
        assert!(dup.is_err());
    }
}
