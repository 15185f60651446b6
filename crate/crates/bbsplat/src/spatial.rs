//! Uniform-grid spatial index for nearest-neighbor queries over point sets.
//!
//! Used by scene initialization (3-nearest-neighbor spacing estimate) and by
//! the Chamfer distance. Queries are exact: the shell search only stops once
//! every unvisited cell is provably farther than the current best.

use crate::math::Vec3;

pub struct PointGrid {
    points: Vec<Vec3>,
    cell_size: f64,
    origin: Vec3,
    dims: [usize; 3],
    cells: Vec<Vec<u32>>,
}

impl PointGrid {
    pub fn build(points: &[Vec3]) -> PointGrid {
        assert!(!points.is_empty(), "PointGrid requires at least one point");
        let mut lo = points[0];
        let mut hi = points[0];
        for p in points {
            lo.x = lo.x.min(p.x);
            lo.y = lo.y.min(p.y);
            lo.z = lo.z.min(p.z);
            hi.x = hi.x.max(p.x);
            hi.y = hi.y.max(p.y);
            hi.z = hi.z.max(p.z);
        }
        let extent = (hi - lo).to_array();
        let max_extent = extent.iter().cloned().fold(0.0_f64, f64::max).max(1e-12);
        // Aim for a handful of points per cell.
        let target = (points.len() as f64 / 4.0).cbrt().ceil().max(1.0);
        let cell_size = (max_extent / target).max(1e-12);
        let dim = |e: f64| ((e / cell_size).floor() as usize + 1).min(256);
        let dims = [dim(extent[0]), dim(extent[1]), dim(extent[2])];
        let mut cells = vec![Vec::new(); dims[0] * dims[1] * dims[2]];
        let mut grid = PointGrid {
            points: points.to_vec(),
            cell_size,
            origin: lo,
            dims,
            cells: Vec::new(),
        };
        for (i, p) in points.iter().enumerate() {
            let c = grid.cell_of(*p);
            cells[grid.cell_index(c)].push(i as u32);
        }
        grid.cells = cells;
        grid
    }

    fn cell_of(&self, p: Vec3) -> [usize; 3] {
        let f = |v: f64, o: f64, d: usize| {
            (((v - o) / self.cell_size).floor().max(0.0) as usize).min(d - 1)
        };
        [
            f(p.x, self.origin.x, self.dims[0]),
            f(p.y, self.origin.y, self.dims[1]),
            f(p.z, self.origin.z, self.dims[2]),
        ]
    }

    fn cell_index(&self, c: [usize; 3]) -> usize {
        (c[2] * self.dims[1] + c[1]) * self.dims[0] + c[0]
    }

    /// Distance to the nearest stored point, excluding `exclude` (pass
    /// `u32::MAX` to keep every candidate).
    pub fn nearest_excluding(&self, query: Vec3, exclude: u32) -> f64 {
        let mut best = f64::INFINITY;
        self.shell_scan(query, |idx, d2| {
            if idx != exclude && d2 < best {
                best = d2;
            }
            best
        });
        best.sqrt()
    }

    /// Distances to the `k` nearest stored points, excluding `exclude`.
    /// Returned sorted ascending; may be shorter than `k` if the set is
    /// small.
    pub fn k_nearest_excluding(&self, query: Vec3, k: usize, exclude: u32) -> Vec<f64> {
        let mut best: Vec<f64> = Vec::with_capacity(k + 1);
        self.shell_scan(query, |idx, d2| {
            if idx != exclude {
                let pos = best.partition_point(|&b| b < d2);
                if pos < k {
                    best.insert(pos, d2);
                    best.truncate(k);
                }
            }
            if best.len() == k {
                best[k - 1]
            } else {
                f64::INFINITY
            }
        });
        best.into_iter().map(f64::sqrt).collect()
    }

    /// Scan cells in expanding shells around the query. `visit` receives a
    /// candidate index and squared distance and returns the current squared
    /// search bound; scanning stops once the next shell cannot contain a
    /// closer point.
    fn shell_scan<F: FnMut(u32, f64) -> f64>(&self, query: Vec3, mut visit: F) {
        let qc = self.cell_of(query);
        let max_dim = *self.dims.iter().max().unwrap();
        let mut bound = f64::INFINITY;
        for radius in 0..=max_dim {
            // Once every cell of this shell is farther than the bound, the
            // result can no longer improve.
            if radius > 0 {
                let min_shell_dist = (radius as f64 - 1.0) * self.cell_size;
                if min_shell_dist * min_shell_dist > bound {
                    break;
                }
            }
            let r = radius as isize;
            for dz in -r..=r {
                for dy in -r..=r {
                    for dx in -r..=r {
                        if dx.abs().max(dy.abs()).max(dz.abs()) != r {
                            continue;
                        }
                        let cx = qc[0] as isize + dx;
                        let cy = qc[1] as isize + dy;
                        let cz = qc[2] as isize + dz;
                        if cx < 0
                            || cy < 0
                            || cz < 0
                            || cx >= self.dims[0] as isize
                            || cy >= self.dims[1] as isize
                            || cz >= self.dims[2] as isize
                        {
                            continue;
                        }
                        let cell =
                            &self.cells[self.cell_index([cx as usize, cy as usize, cz as usize])];
                        for &idx in cell {
                            let d = self.points[idx as usize] - query;
                            bound = visit(idx, d.dot(d));
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::vec3;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn random_points(n: usize, seed: u64) -> Vec<Vec3> {
        let mut rng = StdRng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                vec3(
                    rng.random_range(-3.0..3.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(0.0..5.0),
                )
            })
            .collect()
    }

    #[test]
    fn nearest_matches_brute_force() {
        let pts = random_points(500, 42);
        let grid = PointGrid::build(&pts);
        let queries = random_points(200, 43);
        for q in queries {
            let want = pts
                .iter()
                .map(|p| (*p - q).norm())
                .fold(f64::INFINITY, f64::min);
            let got = grid.nearest_excluding(q, u32::MAX);
            assert!((want - got).abs() < 1e-12, "want {want}, got {got}");
        }
    }

    #[test]
    fn k_nearest_matches_brute_force() {
        let pts = random_points(300, 7);
        let grid = PointGrid::build(&pts);
        for (i, q) in pts.iter().enumerate().step_by(17) {
            let mut ds: Vec<f64> = pts
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, p)| (*p - *q).norm())
                .collect();
            ds.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let got = grid.k_nearest_excluding(*q, 3, i as u32);
            assert_eq!(got.len(), 3);
            for (a, b) in got.iter().zip(ds.iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn degenerate_single_point() {
        let grid = PointGrid::build(&[vec3(1.0, 2.0, 3.0)]);
        assert_eq!(grid.k_nearest_excluding(vec3(1.0, 2.0, 3.0), 3, 0).len(), 0);
        assert!((grid.nearest_excluding(vec3(0.0, 2.0, 3.0), u32::MAX) - 1.0).abs() < 1e-12);
    }
}
