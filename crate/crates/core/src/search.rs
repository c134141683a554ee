//! Isometric-grid spiral search pattern.
//!
//! Insertion attempts are placed on a triangular lattice with spacing
//! `s = ε√3`, whose covering radius `s/√3` equals the insertion tolerance.
//! Offsets are visited outward by distance from the start, ties broken
//! counterclockwise from +x, which gives a spiral-like expansion.

use std::f64::consts::{PI, SQRT_2};
use std::io::Write;

use thiserror::Error;

const SQRT_3: f64 = 1.732_050_807_568_877_2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SearchError {
    #[error("tolerance must be positive, got {0}")]
    InvalidTolerance(f64),
    #[error("max radius must be non-negative, got {0}")]
    InvalidRadius(f64),
}

impl SearchError {
    pub fn kind(&self) -> &'static str {
        match self {
            SearchError::InvalidTolerance(_) => "InvalidTolerance",
            SearchError::InvalidRadius(_) => "InvalidRadius",
        }
    }
}

/// Ordered in-plane offsets (mm) on a triangular lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchPattern {
    pub offsets: Vec<[f64; 2]>,
    /// Lattice coordinates `(a, b)` of each offset in basis `(s, 0)`, `(s/2, s√3/2)`.
    pub lattice: Vec<(i64, i64)>,
    pub spacing: f64,
    pub tolerance: f64,
    pub max_radius: f64,
}

impl SearchPattern {
    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    /// Writes `index,dx_mm,dy_mm` rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "index,dx_mm,dy_mm")?;
        for (i, o) in self.offsets.iter().enumerate() {
            writeln!(w, "{},{},{}", i, o[0], o[1])?;
        }
        Ok(())
    }
}

/// Hexagonal (lattice-step) distance of lattice point `(a, b)` from the origin.
pub fn hex_distance(a: i64, b: i64) -> i64 {
    // Axial coordinates: third cube coordinate is -(a + b).
    (a.abs() + b.abs() + (a + b).abs()) / 2
}

pub fn generate_pattern(tolerance: f64, max_radius: f64) -> Result<SearchPattern, SearchError> {
    if !(tolerance > 0.0 && tolerance.is_finite()) {
        return Err(SearchError::InvalidTolerance(tolerance));
    }
    if !(max_radius >= 0.0 && max_radius.is_finite()) {
        return Err(SearchError::InvalidRadius(max_radius));
    }
    let s = tolerance * SQRT_3;
    let bound = max_radius + tolerance;
    // |a (1,0) + b (1/2, √3/2)|² = a² + ab + b², in units of s².
    let bound_sq = (bound / s) * (bound / s) * (1.0 + 1e-12);
    let reach = (2.0 * bound / s).ceil() as i64 + 1;

    let mut points: Vec<(i64, f64, i64, i64)> = Vec::new();
    for a in -reach..=reach {
        for b in -reach..=reach {
            let norm_sq = a * a + a * b + b * b;
            if (norm_sq as f64) > bound_sq {
                continue;
            }
            let x = s * (a as f64 + 0.5 * b as f64);
            let y = s * (SQRT_3 / 2.0) * b as f64;
            let mut angle = y.atan2(x);
            if angle < 0.0 {
                angle += 2.0 * PI;
            }
            if norm_sq == 0 {
                angle = 0.0;
            }
            points.push((norm_sq, angle, a, b));
        }
    }
    points.sort_by(|p, q| p.0.cmp(&q.0).then(p.1.total_cmp(&q.1)));

    let offsets = points
        .iter()
        .map(|&(_, _, a, b)| [s * (a as f64 + 0.5 * b as f64), s * (SQRT_3 / 2.0) * b as f64])
        .collect();
    let lattice = points.iter().map(|&(_, _, a, b)| (a, b)).collect();
    Ok(SearchPattern { offsets, lattice, spacing: s, tolerance, max_radius })
}

/// Bucketed point set for nearest-neighbor queries.
struct PointGrid<'a> {
    points: &'a [[f64; 2]],
    cell: f64,
    min: [f64; 2],
    dims: [usize; 2],
    buckets: Vec<Vec<usize>>,
}

impl<'a> PointGrid<'a> {
    fn new(points: &'a [[f64; 2]], cell: f64) -> Self {
        let mut min = [f64::INFINITY; 2];
        let mut max = [f64::NEG_INFINITY; 2];
        for p in points {
            for k in 0..2 {
                min[k] = min[k].min(p[k]);
                max[k] = max[k].max(p[k]);
            }
        }
        let dims = [
            ((max[0] - min[0]) / cell).floor() as usize + 1,
            ((max[1] - min[1]) / cell).floor() as usize + 1,
        ];
        let mut buckets = vec![Vec::new(); dims[0] * dims[1]];
        for (i, p) in points.iter().enumerate() {
            let (cx, cy) = Self::cell_of(p, min, cell, dims);
            buckets[cy * dims[0] + cx].push(i);
        }
        PointGrid { points, cell, min, dims, buckets }
    }

    fn cell_of(p: &[f64; 2], min: [f64; 2], cell: f64, dims: [usize; 2]) -> (usize, usize) {
        let cx = (((p[0] - min[0]) / cell).floor().max(0.0) as usize).min(dims[0] - 1);
        let cy = (((p[1] - min[1]) / cell).floor().max(0.0) as usize).min(dims[1] - 1);
        (cx, cy)
    }

    fn nearest_distance(&self, q: [f64; 2]) -> f64 {
        let (cx, cy) = Self::cell_of(&q, self.min, self.cell, self.dims);
        let mut best = f64::INFINITY;
        let max_ring = self.dims[0].max(self.dims[1]);
        for ring in 0..=max_ring {
            let lo_x = cx as i64 - ring as i64;
            let hi_x = cx as i64 + ring as i64;
            let lo_y = cy as i64 - ring as i64;
            let hi_y = cy as i64 + ring as i64;
            for y in lo_y..=hi_y {
                for x in lo_x..=hi_x {
                    let on_ring = x == lo_x || x == hi_x || y == lo_y || y == hi_y;
                    if !on_ring || x < 0 || y < 0 || x >= self.dims[0] as i64 || y >= self.dims[1] as i64 {
                        continue;
                    }
                    for &i in &self.buckets[y as usize * self.dims[0] + x as usize] {
                        let p = self.points[i];
                        let d = ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt();
                        best = best.min(d);
                    }
                }
            }
            // Cells beyond this ring are at least ring * cell away from q.
            if best <= ring as f64 * self.cell {
                break;
            }
        }
        best
    }
}

/// Largest distance from any dense-grid sample point inside the disc of
/// radius `region_radius` to its nearest pattern offset.
pub fn covering_radius(pattern: &SearchPattern, region_radius: f64, grid_step: f64) -> f64 {
    assert!(grid_step > 0.0, "grid_step must be positive");
    if pattern.offsets.is_empty() {
        return f64::INFINITY;
    }
    let cell = (pattern.spacing.max(grid_step) * SQRT_2).max(1e-9);
    let index = PointGrid::new(&pattern.offsets, cell);
    let n = (region_radius / grid_step).floor() as i64;
    let r2 = region_radius * region_radius * (1.0 + 1e-12);
    let mut worst: f64 = 0.0;
    for iy in -n..=n {
        for ix in -n..=n {
            let q = [ix as f64 * grid_step, iy as f64 * grid_step];
            if q[0] * q[0] + q[1] * q[1] > r2 {
                continue;
            }
            worst = worst.max(index.nearest_distance(q));
        }
    }
    // Include the rim, which the square grid may step over.
    let rim = ((2.0 * PI * region_radius / grid_step).ceil() as usize).max(if region_radius > 0.0 { 8 } else { 0 });
    for k in 0..rim {
        let t = 2.0 * PI * k as f64 / rim as f64;
        worst = worst.max(index.nearest_distance([region_radius * t.cos(), region_radius * t.sin()]));
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn zero_radius_gives_single_point() {
        let p = generate_pattern(0.1, 0.0).unwrap();
        assert_eq!(p.offsets, vec![[0.0, 0.0]]);
    }

    #[test]
    fn one_ring() {
        let s = 0.1 * SQRT_3;
        let p = generate_pattern(0.1, s).unwrap();
        assert_eq!(p.len(), 7);
        assert_eq!(p.offsets[0], [0.0, 0.0]);
        for o in &p.offsets[1..] {
            assert_abs_diff_eq!((o[0] * o[0] + o[1] * o[1]).sqrt(), s, epsilon = 1e-12);
        }
        // counterclockwise from +x
        assert_abs_diff_eq!(p.offsets[1][0], s, epsilon = 1e-12);
        assert_abs_diff_eq!(p.offsets[1][1], 0.0, epsilon = 1e-12);
        assert!(p.offsets[2][1] > 0.0 && p.offsets[2][0] > 0.0);
    }

    #[test]
    fn invalid_inputs() {
        assert_eq!(generate_pattern(0.0, 1.0), Err(SearchError::InvalidTolerance(0.0)));
        assert_eq!(generate_pattern(-0.1, 1.0), Err(SearchError::InvalidTolerance(-0.1)));
        assert_eq!(generate_pattern(0.1, -1.0), Err(SearchError::InvalidRadius(-1.0)));
    }

    #[test]
    fn covering_radius_examples() {
        let single = generate_pattern(0.1, 0.0).unwrap();
        assert_eq!(covering_radius(&single, 0.0, 0.01), 0.0);
        assert_abs_diff_eq!(covering_radius(&single, 1.0, 0.01), 1.0, epsilon = 1e-9);
        let p = generate_pattern(0.1, 1.0).unwrap();
        assert!(covering_radius(&p, 1.0, 0.005) <= 0.1 + 1e-12);
    }

    #[test]
    fn hex_distance_rings() {
        assert_eq!(hex_distance(0, 0), 0);
        assert_eq!(hex_distance(1, 0), 1);
        assert_eq!(hex_distance(-1, 1), 1);
        assert_eq!(hex_distance(1, 1), 2);
        assert_eq!(hex_distance(2, -1), 2);
    }

    #[test]
    fn csv_export() {
        let p = generate_pattern(0.1, 0.2).unwrap();
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("index,dx_mm,dy_mm"));
        assert_eq!(lines.next(), Some("0,0,0"));
        assert_eq!(text.lines().count(), p.len() + 1);
    }
}
