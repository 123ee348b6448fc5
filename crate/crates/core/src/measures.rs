//! Atomic measures, density discretization, and the lattice projection.

use crate::grid::{dist, GriddedDensity};
use crate::{Error, Result};

/// Tolerance below which two atom locations are considered the same point.
const MERGE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Atom {
    pub pos: [f64; 3],
    pub mass: f64,
}

/// Finite list of weighted points in a box domain.
///
/// Atoms are sorted lexicographically by position; duplicates (within
/// `1e-12` per coordinate) are merged by summing masses.
#[derive(Debug, Clone, PartialEq)]
pub struct AtomicMeasure {
    dim: usize,
    lo: [f64; 3],
    hi: [f64; 3],
    atoms: Vec<Atom>,
}

impl AtomicMeasure {
    pub fn new(dim: usize, lo: &[f64], hi: &[f64], atoms: Vec<([f64; 3], f64)>) -> Result<AtomicMeasure> {
        if !(1..=3).contains(&dim) || lo.len() != dim || hi.len() != dim {
            return Err(Error::InvalidMeasure("bad domain spec".into()));
        }
        let mut plo = [0.0; 3];
        let mut phi = [0.0; 3];
        plo[..dim].copy_from_slice(lo);
        phi[..dim].copy_from_slice(hi);
        let mut list = Vec::with_capacity(atoms.len());
        for (pos, mass) in atoms {
            if !(mass > 0.0) || !mass.is_finite() {
                return Err(Error::InvalidMeasure(format!("mass {mass} must be > 0")));
            }
            for k in 0..dim {
                if pos[k] < plo[k] - MERGE_TOL || pos[k] > phi[k] + MERGE_TOL {
                    return Err(Error::PointOutsideDomain(pos[0], pos[1], pos[2]));
                }
            }
            list.push(Atom { pos, mass });
        }
        list.sort_by(|a, b| a.pos.partial_cmp(&b.pos).unwrap());
        let mut merged: Vec<Atom> = Vec::with_capacity(list.len());
        for atom in list {
            match merged.last_mut() {
                Some(prev)
                    if (0..3).all(|k| (prev.pos[k] - atom.pos[k]).abs() <= MERGE_TOL) =>
                {
                    prev.mass += atom.mass;
                }
                _ => merged.push(atom),
            }
        }
        Ok(AtomicMeasure {
            dim,
            lo: plo,
            hi: phi,
            atoms: merged,
        })
    }

    /// Empty measure on the given box.
    pub fn empty(dim: usize, lo: &[f64], hi: &[f64]) -> Result<AtomicMeasure> {
        AtomicMeasure::new(dim, lo, hi, Vec::new())
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

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.mass).sum()
    }

    /// CSV export: `x1,...,xd,mass` with a header row.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for k in 0..self.dim {
            out.push_str(&format!("x{},", k + 1));
        }
        out.push_str("mass\n");
        for a in &self.atoms {
            for k in 0..self.dim {
                out.push_str(&format!("{},", a.pos[k]));
            }
            out.push_str(&format!("{}\n", a.mass));
        }
        out
    }

    pub fn from_csv(text: &str, lo: &[f64], hi: &[f64]) -> Result<AtomicMeasure> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Parse("empty file".into()))?;
        let dim = header.split(',').count() - 1;
        let mut atoms = Vec::new();
        for line in lines {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != dim + 1 {
                return Err(Error::Parse(format!("expected {} fields: {line}", dim + 1)));
            }
            let mut pos = [0.0; 3];
            for k in 0..dim {
                pos[k] = fields[k].parse().map_err(|_| Error::Parse(line.into()))?;
            }
            let mass = fields[dim].parse().map_err(|_| Error::Parse(line.into()))?;
            atoms.push((pos, mass));
        }
        AtomicMeasure::new(dim, lo, hi, atoms)
    }
}

/// One atom per cell with positive mass, located at the cell center.
/// Total mass is preserved exactly (same sum of the same terms).
pub fn discretize_density(f: &GriddedDensity) -> Result<AtomicMeasure> {
    let g = &f.grid;
    let vol = g.cell_volume();
    let mut atoms = Vec::new();
    for (idx, &v) in f.values().iter().enumerate() {
        if v > 0.0 {
            atoms.push((g.cell_center(idx), v * vol));
        }
    }
    if atoms.is_empty() {
        return Err(Error::EmptyMeasure);
    }
    let dim = g.dim();
    AtomicMeasure::new(dim, &g.lo()[..dim], &g.hi()[..dim], atoms)
}

fn project_point(pos: [f64; 3], dim: usize, lo: [f64; 3], hi: [f64; 3], n: usize) -> [f64; 3] {
    let nf = n as f64;
    let mut p = [0.0; 3];
    for k in 0..dim {
        // admissible lattice indices along this axis
        let kmin = (lo[k] * nf - 1e-9).ceil() as i64;
        let kmax = (hi[k] * nf + 1e-9).floor() as i64;
        let x = pos[k] * nf;
        // nearest node; exact half-way ties round down (lexicographically smallest)
        let mut node = x.round() as i64;
        if x - x.floor() == 0.5 {
            node = x.floor() as i64;
        }
        node = node.clamp(kmin, kmax);
        p[k] = node as f64 / nf;
    }
    p
}

/// Pushforward of `nu` under the projection onto the lattice
/// `(1/n)Z^d ∩ Ω`, nearest node, ties toward the lexicographically
/// smallest node. Atoms landing on the same node merge.
pub fn project_to_grid(nu: &AtomicMeasure, n: usize) -> Result<AtomicMeasure> {
    if n < 1 {
        return Err(Error::InvalidParameter("projection resolution n must be >= 1".into()));
    }
    let dim = nu.dim();
    let atoms = nu
        .atoms()
        .iter()
        .map(|a| (project_point(a.pos, dim, nu.lo, nu.hi, n), a.mass))
        .collect();
    AtomicMeasure::new(dim, &nu.lo[..dim], &nu.hi[..dim], atoms)
}

/// Max displacement |x - P_n(x)| over atoms (drives the
/// sqrt(d)/(2n) projection bound of the weak-convergence argument).
pub fn projection_displacement(nu: &AtomicMeasure, n: usize) -> f64 {
    nu.atoms()
        .iter()
        .map(|a| dist(a.pos, project_point(a.pos, nu.dim, nu.lo, nu.hi, n)))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;

    #[test]
    fn empty_measure_mass_zero() {
        let m = AtomicMeasure::empty(1, &[0.0], &[1.0]).unwrap();
        assert_eq!(m.total_mass(), 0.0);
    }

    #[test]
    fn duplicate_atoms_merge() {
        let m = AtomicMeasure::new(
            1,
            &[0.0],
            &[1.0],
            vec![([0.5, 0.0, 0.0], 1.0), ([0.5, 0.0, 0.0], 2.0)],
        )
        .unwrap();
        assert_eq!(m.len(), 1);
        assert!((m.total_mass() - 3.0).abs() < 1e-15);
    }

    #[test]
    fn discretize_uniform_res2() {
        let g = Grid::unit(1, 2).unwrap();
        let f = GriddedDensity::uniform(g, 1.0).unwrap();
        let m = discretize_density(&f).unwrap();
        assert_eq!(m.len(), 2);
        assert!((m.atoms()[0].pos[0] - 0.25).abs() < 1e-15);
        assert!((m.atoms()[0].mass - 0.5).abs() < 1e-15);
        assert!((m.atoms()[1].pos[0] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn discretize_half_indicator() {
        let g = Grid::unit(1, 2).unwrap();
        let f = GriddedDensity::from_fn(g, |p| if p[0] < 0.5 { 1.0 } else { 0.0 }).unwrap();
        let m = discretize_density(&f).unwrap();
        assert_eq!(m.len(), 1);
        assert!((m.atoms()[0].pos[0] - 0.25).abs() < 1e-15);
        assert!((m.atoms()[0].mass - 0.5).abs() < 1e-15);
    }

    #[test]
    fn discretize_preserves_mass() {
        let g = Grid::unit(2, 7).unwrap();
        let f = GriddedDensity::from_fn(g, |p| p[0] * p[1] + 0.1).unwrap();
        let m = discretize_density(&f).unwrap();
        assert!((m.total_mass() - f.total_mass()).abs() <= 1e-12 * f.total_mass());
    }

    #[test]
    fn discretize_zero_mass_errors() {
        let g = Grid::unit(1, 4).unwrap();
        let f = GriddedDensity::uniform(g, 0.0).unwrap();
        assert!(matches!(discretize_density(&f), Err(Error::EmptyMeasure)));
    }

    #[test]
    fn project_single_atom() {
        // nearest node of {0, 0.5, 1} to 0.30 is 0.5
        let m = AtomicMeasure::new(1, &[0.0], &[1.0], vec![([0.30, 0.0, 0.0], 1.0)]).unwrap();
        let p = project_to_grid(&m, 2).unwrap();
        assert_eq!(p.len(), 1);
        assert!((p.atoms()[0].pos[0] - 0.5).abs() < 1e-15);
        assert!((p.total_mass() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn project_fixed_point_on_node() {
        let m = AtomicMeasure::new(1, &[0.0], &[1.0], vec![([0.25, 0.0, 0.0], 1.0)]).unwrap();
        let p = project_to_grid(&m, 4).unwrap();
        assert_eq!(p.atoms()[0].pos[0], 0.25);
    }

    #[test]
    fn project_merges_fibers() {
        let m = AtomicMeasure::new(
            1,
            &[0.0],
            &[1.0],
            vec![([0.45, 0.0, 0.0], 1.0), ([0.55, 0.0, 0.0], 2.0)],
        )
        .unwrap();
        let p = project_to_grid(&m, 2).unwrap();
        assert_eq!(p.len(), 1);
        assert!((p.atoms()[0].mass - 3.0).abs() < 1e-15);
    }

    #[test]
    fn projection_displacement_bound() {
        let dim = 2;
        let mut atoms = Vec::new();
        // irrational-ish lattice of atoms
        for i in 0..13 {
            for j in 0..11 {
                let x = (i as f64 * 0.07710678 + 0.013) % 1.0;
                let y = (j as f64 * 0.08914213 + 0.021) % 1.0;
                atoms.push(([x, y, 0.0], 1.0));
            }
        }
        let m = AtomicMeasure::new(dim, &[0.0, 0.0], &[1.0, 1.0], atoms).unwrap();
        for n in [2usize, 5, 8] {
            let p = project_to_grid(&m, n).unwrap();
            let bound = (dim as f64).sqrt() / (2.0 * n as f64);
            let disp = projection_displacement(&m, n);
            assert!(disp <= bound + 1e-12, "n={n}: {disp} > {bound}");
            assert!((p.total_mass() - m.total_mass()).abs() <= 1e-12 * m.total_mass());
        }
    }

    #[test]
    fn atom_csv_roundtrip() {
        let m = AtomicMeasure::new(
            2,
            &[0.0, 0.0],
            &[1.0, 1.0],
            vec![([0.25, 0.75, 0.0], 1.5), ([0.5, 0.5, 0.0], 0.25)],
        )
        .unwrap();
        let back = AtomicMeasure::from_csv(&m.to_csv(), &[0.0, 0.0], &[1.0, 1.0]).unwrap();
        assert_eq!(m, back);
    }
}
