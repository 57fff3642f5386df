//! A line-of-sight shadowing simulator on a square grid.
//!
//! Strength at pixel `p` is `max(0, 1 − α·dist(p, Tx))`, multiplied by the
//! shadow factor when the segment from the transmitter to `p` crosses a
//! building cell.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::representations::{CITY_PART, MEASUREMENT_PART, TX_PART};
use crate::types::{Shape, Signal};

/// Axis-aligned rectangle of cells.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Building {
    pub row: usize,
    pub col: usize,
    pub height: usize,
    pub width: usize,
}

impl Building {
    pub fn contains(&self, r: usize, c: usize) -> bool {
        r >= self.row && r < self.row + self.height && c >= self.col && c < self.col + self.width
    }

    /// Row-major pixel indices on a grid of the given side.
    pub fn pixels(&self, side: usize) -> Vec<usize> {
        (self.row..self.row + self.height)
            .flat_map(|r| (self.col..self.col + self.width).map(move |c| r * side + c))
            .collect()
    }

    /// Chebyshev gap between two rectangles (0 when touching or overlapping).
    fn gap(&self, other: &Building) -> usize {
        let gap_axis = |a0: usize, a1: usize, b0: usize, b1: usize| {
            if a1 <= b0 {
                b0 - a1
            } else { a0.saturating_sub(b1) }
        };
        gap_axis(self.row, self.row + self.height, other.row, other.row + other.height).max(gap_axis(
            self.col,
            self.col + self.width,
            other.col,
            other.col + other.width,
        ))
    }

    fn overlaps(&self, other: &Building) -> bool {
        self.row < other.row + other.height
            && other.row < self.row + self.height
            && self.col < other.col + other.width
            && other.col < self.col + self.width
    }
}

/// Propagation parameters shared by the simulator and the analytic predictor.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Propagation {
    pub side: usize,
    pub attenuation: f64,
    pub shadow_factor: f64,
}

impl Default for Propagation {
    fn default() -> Self {
        Self {
            side: 32,
            attenuation: 1.0 / 40.0,
            shadow_factor: 0.3,
        }
    }
}

impl Propagation {
    /// Whether the segment between cell centres crosses an occupied cell
    /// (the transmitter cell itself never blocks).
    pub fn blocked(&self, tx: (usize, usize), p: (usize, usize), occupied: &dyn Fn(usize, usize) -> bool) -> bool {
        let (r0, c0) = (tx.0 as f64 + 0.5, tx.1 as f64 + 0.5);
        let (r1, c1) = (p.0 as f64 + 0.5, p.1 as f64 + 0.5);
        let len = ((r1 - r0).powi(2) + (c1 - c0).powi(2)).sqrt();
        let steps = (len * 4.0).ceil() as usize;
        for i in 1..=steps {
            let t = i as f64 / steps as f64;
            let r = (r0 + t * (r1 - r0)).floor() as usize;
            let c = (c0 + t * (c1 - c0)).floor() as usize;
            if (r, c) != tx && occupied(r, c) {
                return true;
            }
        }
        false
    }

    /// Strength map for a transmitter and a cell occupancy grid.
    pub fn strength_map(&self, tx: (usize, usize), occupancy: &[bool]) -> Vec<f64> {
        let n = self.side;
        let occ = |r: usize, c: usize| occupancy[r * n + c];
        let mut out = vec![0.0; n * n];
        for r in 0..n {
            for c in 0..n {
                let dist = ((r as f64 - tx.0 as f64).powi(2) + (c as f64 - tx.1 as f64).powi(2)).sqrt();
                let mut v = (1.0 - self.attenuation * dist).max(0.0);
                if self.blocked(tx, (r, c), &occ) {
                    v *= self.shadow_factor;
                }
                out[r * n + c] = v;
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadioToyWorld {
    pub propagation: Propagation,
    pub buildings: Vec<Building>,
    pub tx: (usize, usize),
    /// Building left out of the noisy city map.
    pub missing: Option<usize>,
    /// Row-major measurement locations.
    pub measurements: Vec<usize>,
}

/// Knobs for [`RadioToyWorld::random`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub propagation: Propagation,
    pub extra_buildings: usize,
    pub random_measurements: usize,
    /// Measurements placed in the missing building's shadow, next to it.
    pub shadow_measurements: usize,
    /// Minimum gap between the missing building and every other building.
    pub clearance: usize,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            propagation: Propagation::default(),
            extra_buildings: 4,
            random_measurements: 36,
            shadow_measurements: 3,
            clearance: 6,
        }
    }
}

impl RadioToyWorld {
    pub fn new(
        propagation: Propagation,
        buildings: Vec<Building>,
        tx: (usize, usize),
        missing: Option<usize>,
        measurements: Vec<usize>,
    ) -> Result<Self> {
        let n = propagation.side;
        if tx.0 >= n || tx.1 >= n {
            return Err(invalid("transmitter off the grid"));
        }
        for (i, b) in buildings.iter().enumerate() {
            if b.height == 0 || b.width == 0 || b.row + b.height > n || b.col + b.width > n {
                return Err(invalid(format!("building {i} is empty or leaves the grid")));
            }
            if b.contains(tx.0, tx.1) {
                return Err(invalid(format!("transmitter lies inside building {i}")));
            }
            if buildings[..i].iter().any(|o| o.overlaps(b)) {
                return Err(invalid(format!("building {i} overlaps another building")));
            }
        }
        if let Some(m) = missing {
            if m >= buildings.len() {
                return Err(invalid("missing building index out of range"));
            }
        }
        if measurements.iter().any(|&p| p >= n * n) {
            return Err(invalid("measurement location off the grid"));
        }
        Ok(Self {
            propagation,
            buildings,
            tx,
            missing,
            measurements,
        })
    }

    /// A world with one missing building casting a shadow near the
    /// transmitter, a few visible buildings kept clear of it, and
    /// measurements both scattered and just behind the missing building.
    pub fn random(seed: u64, cfg: &WorldConfig) -> Result<Self> {
        let n = cfg.propagation.side;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        loop {
            let tx = (rng.random_range(6..n - 6), rng.random_range(6..n - 6));
            let h = rng.random_range(3..=5);
            let w = rng.random_range(3..=5);
            let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let dist: f64 = rng.random_range(4.0..7.0);
            let cr = tx.0 as f64 + dist * angle.sin();
            let cc = tx.1 as f64 + dist * angle.cos();
            let row = (cr - h as f64 / 2.0).round();
            let col = (cc - w as f64 / 2.0).round();
            if row < 1.0 || col < 1.0 || row as usize + h + 1 > n || col as usize + w + 1 > n {
                continue;
            }
            let missing = Building {
                row: row as usize,
                col: col as usize,
                height: h,
                width: w,
            };
            if missing.contains(tx.0, tx.1) || missing.gap(&Building { row: tx.0, col: tx.1, height: 1, width: 1 }) == 0 {
                continue;
            }
            let mut buildings = vec![missing];
            let mut attempts = 0;
            while buildings.len() < 1 + cfg.extra_buildings && attempts < 500 {
                attempts += 1;
                let b = Building {
                    row: rng.random_range(0..n - 4),
                    col: rng.random_range(0..n - 4),
                    height: rng.random_range(2..=4),
                    width: rng.random_range(2..=4),
                };
                if b.contains(tx.0, tx.1)
                    || b.gap(&missing) < cfg.clearance
                    || buildings[1..].iter().any(|o| o.gap(&b) < 1)
                {
                    continue;
                }
                buildings.push(b);
            }
            let occupied = |r: usize, c: usize| buildings.iter().any(|b| b.contains(r, c));
            let mut measurements = Vec::new();
            // shadow samples within 3 cells of the missing building
            let only_missing = |r: usize, c: usize| missing.contains(r, c);
            let mut candidates: Vec<usize> = (0..n * n)
                .filter(|&p| {
                    let (r, c) = (p / n, p % n);
                    !occupied(r, c)
                        && missing.gap(&Building { row: r, col: c, height: 1, width: 1 }) <= 3
                        && cfg.propagation.blocked(tx, (r, c), &only_missing)
                })
                .collect();
            if candidates.len() < cfg.shadow_measurements {
                continue;
            }
            for _ in 0..cfg.shadow_measurements {
                let i = rng.random_range(0..candidates.len());
                measurements.push(candidates.swap_remove(i));
            }
            let mut tries = 0;
            while measurements.len() < cfg.shadow_measurements + cfg.random_measurements && tries < 10_000 {
                tries += 1;
                let p = rng.random_range(0..n * n);
                if !occupied(p / n, p % n) && p != tx.0 * n + tx.1 && !measurements.contains(&p) {
                    measurements.push(p);
                }
            }
            measurements.sort_unstable();
            return Self::new(cfg.propagation, buildings, tx, Some(0), measurements);
        }
    }

    pub fn side(&self) -> usize {
        self.propagation.side
    }

    fn occupancy(&self, include_missing: bool) -> Vec<bool> {
        let n = self.side();
        let mut occ = vec![false; n * n];
        for (i, b) in self.buildings.iter().enumerate() {
            if include_missing || Some(i) != self.missing {
                for p in b.pixels(n) {
                    occ[p] = true;
                }
            }
        }
        occ
    }

    pub fn ground_truth(&self) -> Vec<f64> {
        self.propagation.strength_map(self.tx, &self.occupancy(true))
    }

    /// Buildings present in the noisy city map.
    pub fn visible_buildings(&self) -> Vec<Building> {
        self.buildings
            .iter()
            .enumerate()
            .filter(|(i, _)| Some(*i) != self.missing)
            .map(|(_, b)| *b)
            .collect()
    }

    pub fn missing_building(&self) -> Option<Building> {
        self.missing.map(|m| self.buildings[m])
    }

    /// Pixels outside `b` whose line of sight to the transmitter crosses `b`.
    pub fn shadow_region(&self, b: &Building) -> Vec<usize> {
        let n = self.side();
        let occ = |r: usize, c: usize| b.contains(r, c);
        (0..n * n)
            .filter(|&p| {
                let (r, c) = (p / n, p % n);
                !b.contains(r, c) && self.propagation.blocked(self.tx, (r, c), &occ)
            })
            .collect()
    }

    pub fn tx_map(&self) -> Vec<f64> {
        let n = self.side();
        let mut m = vec![0.0; n * n];
        m[self.tx.0 * n + self.tx.1] = 1.0;
        m
    }
}

/// Composite radio input shape `[tx, city, measurements]`.
pub fn radio_shape(side: usize) -> Shape {
    Shape::Composite(vec![
        (TX_PART.into(), Shape::image(side, side, 1)),
        (CITY_PART.into(), Shape::image(side, side, 1)),
        (MEASUREMENT_PART.into(), Shape::image(side, side, 1)),
    ])
}

#[derive(Clone, Debug, PartialEq)]
pub struct RadioSample {
    pub input: Signal,
    pub truth: Vec<f64>,
}

/// Input `[tx map, noisy city map, sparse measurements]` and the true map.
pub fn simulate_radio(world: &RadioToyWorld) -> Result<RadioSample> {
    let truth = world.ground_truth();
    let city: Vec<f64> = world.occupancy(false).iter().map(|&o| if o { 1.0 } else { 0.0 }).collect();
    let n2 = world.side() * world.side();
    let mut meas = vec![0.0; n2];
    for &p in &world.measurements {
        meas[p] = truth[p];
    }
    let mut values = world.tx_map();
    values.extend(city);
    values.extend(meas);
    Ok(RadioSample {
        input: Signal::new(values, radio_shape(world.side()))?,
        truth,
    })
}

/// `x̃`: the input with its city channel zeroed.
pub fn erase_buildings(x: &Signal) -> Result<Signal> {
    let range = x
        .shape()
        .part_range(CITY_PART)
        .ok_or_else(|| invalid("signal has no city part"))?;
    let mut v = x.values().to_vec();
    v[range].iter_mut().for_each(|p| *p = 0.0);
    Signal::new(v, x.shape().clone())
}

/// Predicts a full strength map from the transmitter and city maps.
pub trait MapPredictor: Send + Sync {
    fn predict(&self, tx_map: &[f64], city_map: &[f64]) -> Result<Vec<f64>>;
}

/// Runs the propagation model on the given city map (cells > 0.5 occupied).
#[derive(Clone, Copy, Debug)]
pub struct LineOfSightPredictor {
    pub propagation: Propagation,
}

impl MapPredictor for LineOfSightPredictor {
    fn predict(&self, tx_map: &[f64], city_map: &[f64]) -> Result<Vec<f64>> {
        let n = self.propagation.side;
        if tx_map.len() != n * n || city_map.len() != n * n {
            return Err(invalid("map size does not match the grid"));
        }
        let t = crate::distortions::argmax(tx_map);
        let occ: Vec<bool> = city_map.iter().map(|&v| v > 0.5).collect();
        Ok(self.propagation.strength_map((t / n, t % n), &occ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn open_world() -> RadioToyWorld {
        RadioToyWorld::new(Propagation::default(), vec![], (10, 12), None, vec![]).unwrap()
    }

    #[test]
    fn transmitter_pixel_is_one() {
        let w = open_world();
        assert_eq!(w.ground_truth()[10 * 32 + 12], 1.0);
    }

    #[test]
    fn open_map_decreases_along_rays() {
        let w = open_world();
        let m = w.ground_truth();
        for (dr, dc) in [(0i32, 1i32), (1, 0), (1, 1), (-1, 0), (0, -1), (-1, 1)] {
            let mut prev = f64::INFINITY;
            let (mut r, mut c) = (10i32, 12i32);
            while (0..32).contains(&r) && (0..32).contains(&c) {
                let v = m[(r * 32 + c) as usize];
                assert!(v <= prev);
                prev = v;
                r += dr;
                c += dc;
            }
        }
    }

    #[test]
    fn building_casts_shadow() {
        let b = Building {
            row: 9,
            col: 16,
            height: 3,
            width: 2,
        };
        let w = RadioToyWorld::new(Propagation::default(), vec![b], (10, 12), None, vec![]).unwrap();
        let shadowed = w.ground_truth()[10 * 32 + 22];
        let open = open_world().ground_truth()[10 * 32 + 22];
        assert!((shadowed - open * 0.3).abs() < 1e-15);
        assert!(w.shadow_region(&b).contains(&(10 * 32 + 22)));
    }

    #[test]
    fn invalid_worlds_rejected() {
        let b = Building {
            row: 9,
            col: 11,
            height: 3,
            width: 3,
        };
        assert!(RadioToyWorld::new(Propagation::default(), vec![b], (10, 12), None, vec![]).is_err());
        let edge = Building {
            row: 30,
            col: 0,
            height: 3,
            width: 1,
        };
        assert!(RadioToyWorld::new(Propagation::default(), vec![edge], (10, 12), None, vec![]).is_err());
    }

    #[test]
    fn random_world_layout() {
        let w = RadioToyWorld::random(3, &WorldConfig::default()).unwrap();
        let missing = w.missing_building().unwrap();
        let shadow = w.shadow_region(&missing);
        let in_shadow = w.measurements.iter().filter(|p| shadow.contains(p)).count();
        assert!(in_shadow >= 3);
        let s = simulate_radio(&w).unwrap();
        let city = &s.input.values()[1024..2048];
        assert!(missing.pixels(32).iter().all(|&p| city[p] == 0.0));
        for &p in &w.measurements {
            assert_eq!(s.input.values()[2048 + p], s.truth[p]);
        }
    }

    #[test]
    fn analytic_predictor_matches_simulator() {
        let w = RadioToyWorld::random(5, &WorldConfig::default()).unwrap();
        let s = simulate_radio(&w).unwrap();
        let pred = LineOfSightPredictor {
            propagation: w.propagation,
        };
        let v = s.input.values();
        let map = pred.predict(&v[..1024], &v[1024..2048]).unwrap();
        let visible = RadioToyWorld {
            missing: None,
            buildings: w.visible_buildings(),
            ..w.clone()
        };
        assert_eq!(map, visible.ground_truth());
    }

    #[test]
    fn erasing_zeroes_city_only() {
        let w = RadioToyWorld::random(1, &WorldConfig::default()).unwrap();
        let s = simulate_radio(&w).unwrap();
        let e = erase_buildings(&s.input).unwrap();
        assert!(e.values()[1024..2048].iter().all(|&v| v == 0.0));
        assert_eq!(e.values()[..1024], s.input.values()[..1024]);
        assert_eq!(e.values()[2048..], s.input.values()[2048..]);
    }
}
