//! Box grids and piecewise-constant densities.
//!
//! The domain is an axis-aligned box in dimension d ∈ {1,2,3}. Points are
//! stored as `[f64; 3]` with trailing coordinates zero; internally the grid
//! pads unused axes with a single `[0,1)` cell so that indexing and volumes
//! are uniform across dimensions.

use crate::{Error, Result};

/// Axis-aligned box grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    dim: usize,
    lo: [f64; 3],
    hi: [f64; 3],
    res: [usize; 3],
}

impl Grid {
    pub fn new(dim: usize, lo: &[f64], hi: &[f64], res: &[usize]) -> Result<Grid> {
        if !(1..=3).contains(&dim) {
            return Err(Error::InvalidGrid(format!("dim {dim} not in 1..=3")));
        }
        if lo.len() != dim || hi.len() != dim || res.len() != dim {
            return Err(Error::InvalidGrid("length mismatch".into()));
        }
        let mut g = Grid {
            dim,
            lo: [0.0; 3],
            hi: [1.0; 3],
            res: [1; 3],
        };
        for k in 0..dim {
            if !(hi[k] > lo[k]) || !lo[k].is_finite() || !hi[k].is_finite() {
                return Err(Error::InvalidGrid(format!(
                    "axis {k}: need finite lo < hi, got [{}, {}]",
                    lo[k], hi[k]
                )));
            }
            if res[k] < 1 {
                return Err(Error::InvalidGrid(format!("axis {k}: res must be >= 1")));
            }
            g.lo[k] = lo[k];
            g.hi[k] = hi[k];
            g.res[k] = res[k];
        }
        Ok(g)
    }

    /// Unit box `[0,1]^d` at resolution `n` per axis.
    pub fn unit(dim: usize, n: usize) -> Result<Grid> {
        Grid::new(dim, &vec![0.0; dim], &vec![1.0; dim], &vec![n; dim])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lo(&self) -> [f64; 3] {
        self.lo
    }

    pub fn hi(&self) -> [f64; 3] {
        self.hi
    }

    pub fn res(&self) -> [usize; 3] {
        self.res
    }

    pub fn cell_count(&self) -> usize {
        self.res[0] * self.res[1] * self.res[2]
    }

    /// Cell width along `axis`.
    pub fn step(&self, axis: usize) -> f64 {
        (self.hi[axis] - self.lo[axis]) / self.res[axis] as f64
    }

    pub fn cell_volume(&self) -> f64 {
        (0..self.dim).map(|k| self.step(k)).product()
    }

    /// Euclidean diameter of the box.
    pub fn diameter(&self) -> f64 {
        (0..self.dim)
            .map(|k| (self.hi[k] - self.lo[k]).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// Row-major linear index (last real axis fastest).
    pub fn index(&self, c: [usize; 3]) -> usize {
        (c[0] * self.res[1] + c[1]) * self.res[2] + c[2]
    }

    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let c2 = idx % self.res[2];
        let r = idx / self.res[2];
        [r / self.res[1], r % self.res[1], c2]
    }

    pub fn cell_center(&self, idx: usize) -> [f64; 3] {
        let c = self.coords(idx);
        let mut p = [0.0; 3];
        for k in 0..self.dim {
            p[k] = self.lo[k] + (c[k] as f64 + 0.5) * self.step(k);
        }
        p
    }

    /// Lower and upper corner of a cell (trailing axes zeroed).
    pub fn cell_bounds(&self, idx: usize) -> ([f64; 3], [f64; 3]) {
        let c = self.coords(idx);
        let mut lo = [0.0; 3];
        let mut hi = [0.0; 3];
        for k in 0..self.dim {
            lo[k] = self.lo[k] + c[k] as f64 * self.step(k);
            hi[k] = self.lo[k] + (c[k] + 1) as f64 * self.step(k);
        }
        (lo, hi)
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        const TOL: f64 = 1e-12;
        (0..self.dim).all(|k| p[k] >= self.lo[k] - TOL && p[k] <= self.hi[k] + TOL)
    }

    /// Cell containing `p`, clamped to the box. Points on an interior
    /// boundary go to the upper cell (floor rule); the segment traversal
    /// applies its own lower-cell rule for boundary-lying segments.
    pub fn cell_of(&self, p: [f64; 3]) -> Result<usize> {
        if !self.contains(p) {
            return Err(Error::PointOutsideDomain(p[0], p[1], p[2]));
        }
        let mut c = [0usize; 3];
        for k in 0..self.dim {
            let t = (p[k] - self.lo[k]) / self.step(k);
            c[k] = (t.floor() as isize).clamp(0, self.res[k] as isize - 1) as usize;
        }
        Ok(self.index(c))
    }
}

/// Nonnegative piecewise-constant density on a grid (units: mass/volume).
#[derive(Debug, Clone, PartialEq)]
pub struct GriddedDensity {
    pub grid: Grid,
    values: Vec<f64>,
}

impl GriddedDensity {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<GriddedDensity> {
        if values.len() != grid.cell_count() {
            return Err(Error::InvalidDensity(format!(
                "{} values for {} cells",
                values.len(),
                grid.cell_count()
            )));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidDensity("values must be finite and >= 0".into()));
        }
        Ok(GriddedDensity { grid, values })
    }

    pub fn uniform(grid: Grid, value: f64) -> Result<GriddedDensity> {
        let n = grid.cell_count();
        GriddedDensity::new(grid, vec![value; n])
    }

    /// Evaluate `f` at each cell center.
    pub fn from_fn(grid: Grid, mut f: impl FnMut([f64; 3]) -> f64) -> Result<GriddedDensity> {
        let values = (0..grid.cell_count()).map(|i| f(grid.cell_center(i))).collect();
        GriddedDensity::new(grid, values)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn total_mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.cell_volume()
    }

    /// Exact L^1 distance of the two step functions (same grid required).
    pub fn l1_distance(&self, other: &GriddedDensity) -> Result<f64> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch);
        }
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            * self.grid.cell_volume())
    }

    /// CSV export: one header comment line, then one value per line
    /// in row-major order.
    pub fn to_csv(&self) -> String {
        let g = &self.grid;
        let res: Vec<String> = (0..g.dim).map(|k| g.res[k].to_string()).collect();
        let boxspec: Vec<String> = (0..g.dim).map(|k| format!("{},{}", g.lo[k], g.hi[k])).collect();
        let mut out = format!(
            "# grid d={} res={} box={}\n",
            g.dim,
            res.join(","),
            boxspec.join(";")
        );
        for v in &self.values {
            out.push_str(&format!("{v}\n"));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<GriddedDensity> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Parse("empty file".into()))?;
        let header = header
            .strip_prefix("# grid ")
            .ok_or_else(|| Error::Parse("missing grid header".into()))?;
        let mut dim = 0usize;
        let mut res = Vec::new();
        let mut lo = Vec::new();
        let mut hi = Vec::new();
        for field in header.split_whitespace() {
            let (key, val) = field
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("bad header field {field}")))?;
            match key {
                "d" => dim = val.parse().map_err(|_| Error::Parse("bad d".into()))?,
                "res" => {
                    for r in val.split(',') {
                        res.push(r.parse().map_err(|_| Error::Parse("bad res".into()))?);
                    }
                }
                "box" => {
                    for pair in val.split(';') {
                        let (a, b) = pair
                            .split_once(',')
                            .ok_or_else(|| Error::Parse("bad box".into()))?;
                        lo.push(a.parse().map_err(|_| Error::Parse("bad box".into()))?);
                        hi.push(b.parse().map_err(|_| Error::Parse("bad box".into()))?);
                    }
                }
                _ => return Err(Error::Parse(format!("unknown header key {key}"))),
            }
        }
        let grid = Grid::new(dim, &lo, &hi, &res)?;
        let mut values = Vec::with_capacity(grid.cell_count());
        for line in lines {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            values.push(line.parse().map_err(|_| Error::Parse(format!("bad value {line}")))?);
        }
        GriddedDensity::new(grid, values)
    }
}

/// Euclidean distance (trailing coordinates are zero by convention).
pub fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}
