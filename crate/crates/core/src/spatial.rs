//! Axis-aligned boxes and a uniform-grid index for fixed-radius neighbor queries.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoundingBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Self {
        assert_eq!(lo.len(), hi.len());
        BoundingBox { lo, hi }
    }

    /// Tightest box around a nonempty point cloud.
    pub fn of_points(points: &[Vec<f64>]) -> Option<Self> {
        let first = points.first()?;
        let mut lo = first.clone();
        let mut hi = first.clone();
        for p in points {
            for i in 0..lo.len() {
                lo[i] = lo[i].min(p[i]);
                hi[i] = hi[i].max(p[i]);
            }
        }
        Some(BoundingBox { lo, hi })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn diagonal(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(a, b)| (b - a).powi(2)).sum::<f64>().sqrt()
    }

    pub fn contains(&self, z: &[f64]) -> bool {
        z.iter().zip(self.lo.iter().zip(&self.hi)).all(|(v, (a, b))| *v >= *a && *v <= *b)
    }

    pub fn inflate(&self, by: f64) -> Self {
        BoundingBox { lo: self.lo.iter().map(|v| v - by).collect(), hi: self.hi.iter().map(|v| v + by).collect() }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(a, b)| if b > a { a + (b - a) * rng.random::<f64>() } else { *a }).collect()
    }
}

/// Buckets points into cubic cells of side `radius`; a point within
/// `radius` of a query lies in one of the 3^d cells around it.
#[derive(Debug, Clone)]
pub struct GridIndex {
    radius: f64,
    origin: Vec<f64>,
    cells: HashMap<Vec<i64>, Vec<usize>>,
    points: Vec<Vec<f64>>,
}

impl GridIndex {
    pub fn new(points: Vec<Vec<f64>>, radius: f64) -> Self {
        assert!(radius > 0.0);
        let origin = BoundingBox::of_points(&points).map(|b| b.lo).unwrap_or_default();
        let mut index = GridIndex { radius, origin, cells: HashMap::new(), points: Vec::new() };
        for (i, p) in points.iter().enumerate() {
            let key = index.cell_of(p);
            index.cells.entry(key).or_default().push(i);
        }
        index.points = points;
        index
    }

    fn cell_of(&self, z: &[f64]) -> Vec<i64> {
        z.iter().zip(&self.origin).map(|(v, o)| ((v - o) / self.radius).floor() as i64).collect()
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    /// True when some indexed point lies within `radius` of `z`.
    pub fn has_neighbor(&self, z: &[f64]) -> bool {
        let center = self.cell_of(z);
        let d = center.len();
        let r2 = self.radius * self.radius;
        let mut offset = vec![-1i64; d];
        loop {
            let key: Vec<i64> = center.iter().zip(&offset).map(|(c, o)| c + o).collect();
            if let Some(ids) = self.cells.get(&key) {
                for &i in ids {
                    let dist2: f64 = self.points[i].iter().zip(z).map(|(a, b)| (a - b).powi(2)).sum();
                    if dist2 <= r2 {
                        return true;
                    }
                }
            }
            // odometer over {-1, 0, 1}^d
            let mut k = 0;
            loop {
                if k == d {
                    return false;
                }
                offset[k] += 1;
                if offset[k] <= 1 {
                    break;
                }
                offset[k] = -1;
                k += 1;
            }
        }
    }
}
