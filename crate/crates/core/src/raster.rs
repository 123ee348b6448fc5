//! Transport density and Beckmann flow rasterization.
//!
//! Segments are traversed cell by cell with exact intersection lengths,
//! so the per-plan identity  sum(sigma) * cell_volume = linear cost  holds
//! to rounding error. Rasterization over plan entries is chunked (see
//! `par`) and merged in a fixed order for bitwise-deterministic output.

use crate::grid::{dist, Grid, GriddedDensity};
use crate::par::{chunked_map, CHUNK};
use crate::solver::{PlanEntry, TransportPlan};
use crate::{Error, Result};

/// One d-vector per grid cell (units: mass * length / volume).
#[derive(Debug, Clone, PartialEq)]
pub struct CellVectorField {
    pub grid: Grid,
    vectors: Vec<[f64; 3]>,
}

impl CellVectorField {
    pub fn vectors(&self) -> &[[f64; 3]] {
        &self.vectors
    }

    /// CSV export in the gridded format, d columns per cell.
    pub fn to_csv(&self) -> String {
        let g = &self.grid;
        let res: Vec<String> = (0..g.dim()).map(|k| g.res()[k].to_string()).collect();
        let boxspec: Vec<String> = (0..g.dim())
            .map(|k| format!("{},{}", g.lo()[k], g.hi()[k]))
            .collect();
        let mut out = format!(
            "# grid d={} res={} box={}\n",
            g.dim(),
            res.join(","),
            boxspec.join(";")
        );
        for v in &self.vectors {
            let row: Vec<String> = (0..g.dim()).map(|k| format!("{}", v[k])).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

/// Cells visited by the segment [x, y], in order, with the exact length
/// of the intersection. Segment pieces lying on a cell boundary are
/// assigned to the lower-index adjacent cell.
pub fn traverse_segment(grid: &Grid, x: [f64; 3], y: [f64; 3]) -> Result<Vec<(usize, f64)>> {
    if !grid.contains(x) {
        return Err(Error::PointOutsideDomain(x[0], x[1], x[2]));
    }
    if !grid.contains(y) {
        return Err(Error::PointOutsideDomain(y[0], y[1], y[2]));
    }
    let length = dist(x, y);
    if length == 0.0 {
        return Ok(Vec::new());
    }
    let dim = grid.dim();
    // collect crossing parameters with every interior grid plane
    let mut cuts = vec![0.0_f64, 1.0];
    for k in 0..dim {
        let dk = y[k] - x[k];
        if dk == 0.0 {
            continue;
        }
        let h = grid.step(k);
        let lo = grid.lo()[k];
        // planes strictly between the endpoint coordinates
        let (a, b) = if x[k] < y[k] { (x[k], y[k]) } else { (y[k], x[k]) };
        let first = ((a - lo) / h).ceil() as i64;
        let last = ((b - lo) / h).floor() as i64;
        for plane in first..=last {
            let t = (lo + plane as f64 * h - x[k]) / dk;
            if t > 0.0 && t < 1.0 {
                cuts.push(t);
            }
        }
    }
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    cuts.dedup();
    let mut out: Vec<(usize, f64)> = Vec::with_capacity(cuts.len());
    for w in cuts.windows(2) {
        let (t0, t1) = (w[0], w[1]);
        if t1 <= t0 {
            continue;
        }
        let tm = 0.5 * (t0 + t1);
        let mut c = [0usize; 3];
        for k in 0..dim {
            let coord = x[k] + tm * (y[k] - x[k]);
            let s = (coord - grid.lo()[k]) / grid.step(k);
            let mut idx = (s.floor() as isize).clamp(0, grid.res()[k] as isize - 1) as usize;
            // boundary-lying segment (no motion along this axis, midpoint
            // exactly on a plane): deposit into the lower-index cell
            if y[k] - x[k] == 0.0 && s == s.floor() && idx > 0 {
                idx -= 1;
            }
            c[k] = idx;
        }
        let idx = grid.index(c);
        let len = (t1 - t0) * length;
        match out.last_mut() {
            Some(prev) if prev.0 == idx => prev.1 += len,
            _ => out.push((idx, len)),
        }
    }
    Ok(out)
}

fn accumulate_sigma(grid: &Grid, entries: &[PlanEntry], src: &[[f64; 3]], tgt: &[[f64; 3]]) -> Vec<f64> {
    let mut buf = vec![0.0; grid.cell_count()];
    for e in entries {
        let segs = traverse_segment(grid, src[e.i], tgt[e.j])
            .expect("plan atoms lie in the grid domain");
        for (idx, len) in segs {
            buf[idx] += e.mass * len;
        }
    }
    buf
}

/// Rasterize the transport density sigma of a plan as a density on `grid`.
pub fn rasterize_sigma(plan: &TransportPlan, grid: &Grid) -> Result<GriddedDensity> {
    let src: Vec<[f64; 3]> = plan.source.atoms().iter().map(|a| a.pos).collect();
    let tgt: Vec<[f64; 3]> = plan.target.atoms().iter().map(|a| a.pos).collect();
    for p in src.iter().chain(&tgt) {
        if !grid.contains(*p) {
            return Err(Error::PointOutsideDomain(p[0], p[1], p[2]));
        }
    }
    let partials = chunked_map(&plan.entries, CHUNK, |chunk| {
        accumulate_sigma(grid, chunk, &src, &tgt)
    });
    let mut values = vec![0.0; grid.cell_count()];
    for part in partials {
        for (v, p) in values.iter_mut().zip(part) {
            *v += p;
        }
    }
    let inv_vol = 1.0 / grid.cell_volume();
    for v in &mut values {
        *v *= inv_vol;
    }
    GriddedDensity::new(grid.clone(), values)
}

/// Sequential reference kernel (same chunking and merge order, no thread
/// pool). Used by the benchmarks; bitwise identical to `rasterize_sigma`.
pub fn rasterize_sigma_seq(plan: &TransportPlan, grid: &Grid) -> Result<GriddedDensity> {
    let src: Vec<[f64; 3]> = plan.source.atoms().iter().map(|a| a.pos).collect();
    let tgt: Vec<[f64; 3]> = plan.target.atoms().iter().map(|a| a.pos).collect();
    let mut values = vec![0.0; grid.cell_count()];
    for chunk in plan.entries.chunks(CHUNK) {
        let part = accumulate_sigma(grid, chunk, &src, &tgt);
        for (v, p) in values.iter_mut().zip(part) {
            *v += p;
        }
    }
    let inv_vol = 1.0 / grid.cell_volume();
    for v in &mut values {
        *v *= inv_vol;
    }
    GriddedDensity::new(grid.clone(), values)
}

/// Rasterize the Beckmann vector field v of a plan on `grid`.
pub fn rasterize_flow(plan: &TransportPlan, grid: &Grid) -> Result<CellVectorField> {
    let src: Vec<[f64; 3]> = plan.source.atoms().iter().map(|a| a.pos).collect();
    let tgt: Vec<[f64; 3]> = plan.target.atoms().iter().map(|a| a.pos).collect();
    for p in src.iter().chain(&tgt) {
        if !grid.contains(*p) {
            return Err(Error::PointOutsideDomain(p[0], p[1], p[2]));
        }
    }
    let partials = chunked_map(&plan.entries, CHUNK, |chunk| {
        let mut buf = vec![[0.0; 3]; grid.cell_count()];
        for e in chunk {
            let (x, y) = (src[e.i], tgt[e.j]);
            let len = dist(x, y);
            if len == 0.0 {
                continue;
            }
            let dir = [(y[0] - x[0]) / len, (y[1] - x[1]) / len, (y[2] - x[2]) / len];
            for (idx, l) in traverse_segment(grid, x, y).expect("atoms inside domain") {
                let w = e.mass * l;
                buf[idx][0] += w * dir[0];
                buf[idx][1] += w * dir[1];
                buf[idx][2] += w * dir[2];
            }
        }
        buf
    });
    let mut vectors = vec![[0.0; 3]; grid.cell_count()];
    for part in partials {
        for (v, p) in vectors.iter_mut().zip(part) {
            v[0] += p[0];
            v[1] += p[1];
            v[2] += p[2];
        }
    }
    let inv_vol = 1.0 / grid.cell_volume();
    for v in &mut vectors {
        v[0] *= inv_vol;
        v[1] *= inv_vol;
        v[2] *= inv_vol;
    }
    Ok(CellVectorField {
        grid: grid.clone(),
        vectors,
    })
}

/// Polynomial in up to 3 variables given as (coefficient, multi-index)
/// terms; total degree at most 2 is accepted by the weak-divergence check.
#[derive(Debug, Clone)]
pub struct Polynomial {
    terms: Vec<(f64, [u8; 3])>,
}

impl Polynomial {
    pub fn new(terms: Vec<(f64, [u8; 3])>) -> Polynomial {
        Polynomial { terms }
    }

    pub fn constant(c: f64) -> Polynomial {
        Polynomial::new(vec![(c, [0, 0, 0])])
    }

    /// c * x_axis
    pub fn linear(axis: usize, c: f64) -> Polynomial {
        let mut m = [0u8; 3];
        m[axis] = 1;
        Polynomial::new(vec![(c, m)])
    }

    /// c * x_axis^2
    pub fn square(axis: usize, c: f64) -> Polynomial {
        let mut m = [0u8; 3];
        m[axis] = 2;
        Polynomial::new(vec![(c, m)])
    }

    pub fn degree(&self) -> usize {
        self.terms
            .iter()
            .map(|(_, m)| (m[0] + m[1] + m[2]) as usize)
            .max()
            .unwrap_or(0)
    }

    pub fn eval(&self, p: [f64; 3]) -> f64 {
        self.terms
            .iter()
            .map(|(c, m)| {
                c * p[0].powi(m[0] as i32) * p[1].powi(m[1] as i32) * p[2].powi(m[2] as i32)
            })
            .sum()
    }

    pub fn grad(&self, p: [f64; 3]) -> [f64; 3] {
        let mut g = [0.0; 3];
        for (c, m) in &self.terms {
            for k in 0..3 {
                if m[k] > 0 {
                    let mut t = c * m[k] as f64 * p[k].powi(m[k] as i32 - 1);
                    for l in 0..3 {
                        if l != k {
                            t *= p[l].powi(m[l] as i32);
                        }
                    }
                    g[k] += t;
                }
            }
        }
        g
    }
}

/// Weak-divergence defect of a rasterized flow against the plan:
/// | integral(grad(phi) . v) - sum_ij gamma_ij (phi(y_j) - phi(x_i)) |.
/// Exact (to rounding) for affine phi, O(cell size) for quadratic phi.
pub fn divergence_residual(
    plan: &TransportPlan,
    field: &CellVectorField,
    phi: &Polynomial,
) -> Result<f64> {
    if phi.degree() > 2 {
        return Err(Error::DegreeTooHigh(phi.degree()));
    }
    let g = &field.grid;
    let vol = g.cell_volume();
    let mut lhs = 0.0;
    for (idx, v) in field.vectors.iter().enumerate() {
        let gr = phi.grad(g.cell_center(idx));
        lhs += (gr[0] * v[0] + gr[1] * v[1] + gr[2] * v[2]) * vol;
    }
    let src = plan.source.atoms();
    let tgt = plan.target.atoms();
    let rhs: f64 = plan
        .entries
        .iter()
        .map(|e| e.mass * (phi.eval(tgt[e.j].pos) - phi.eval(src[e.i].pos)))
        .sum();
    Ok((lhs - rhs).abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::AtomicMeasure;
    use crate::solver::solve_kp;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn line_measure(atoms: Vec<(f64, f64)>) -> AtomicMeasure {
        AtomicMeasure::new(
            1,
            &[0.0],
            &[1.0],
            atoms.into_iter().map(|(x, m)| ([x, 0.0, 0.0], m)).collect(),
        )
        .unwrap()
    }

    fn line_plan() -> TransportPlan {
        let mu = line_measure(vec![(0.0, 1.0)]);
        let nu = line_measure(vec![(1.0, 1.0)]);
        solve_kp(&mu, &nu, 0.0).unwrap().plan
    }

    #[test]
    fn sigma_symmetric_under_direction_swap() {
        // sigma only sees unoriented segments: solving nu -> mu yields
        // the same density as mu -> nu
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let atoms =
            |rng: &mut ChaCha8Rng| (0..7).map(|_| (rng.random::<f64>(), 1.0 / 7.0)).collect();
        let mu = line_measure(atoms(&mut rng));
        let nu = line_measure(atoms(&mut rng));
        let g = Grid::unit(1, 16).unwrap();
        let fwd = rasterize_sigma(&solve_kp(&mu, &nu, 0.0).unwrap().plan, &g).unwrap();
        let rev = rasterize_sigma(&solve_kp(&nu, &mu, 0.0).unwrap().plan, &g).unwrap();
        assert!(fwd.l1_distance(&rev).unwrap() <= 1e-12);
    }

    #[test]
    fn degenerate_segment_empty() {
        let g = Grid::unit(2, 4).unwrap();
        let p = [0.3, 0.3, 0.0];
        assert!(traverse_segment(&g, p, p).unwrap().is_empty());
    }

    #[test]
    fn unit_segment_uniform_split() {
        let g = Grid::unit(1, 4).unwrap();
        let segs = traverse_segment(&g, [0.0, 0.0, 0.0], [1.0, 0.0, 0.0]).unwrap();
        assert_eq!(segs.len(), 4);
        for (k, (idx, len)) in segs.iter().enumerate() {
            assert_eq!(*idx, k);
            assert!((len - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn diagonal_on_2x2() {
        let g = Grid::unit(2, 2).unwrap();
        let segs = traverse_segment(&g, [0.0, 0.0, 0.0], [1.0, 1.0, 0.0]).unwrap();
        assert_eq!(segs.len(), 2);
        let h = (2.0_f64).sqrt() / 2.0;
        assert_eq!(segs[0].0, g.index([0, 0, 0]));
        assert_eq!(segs[1].0, g.index([1, 1, 0]));
        assert!((segs[0].1 - h).abs() < 1e-12);
        assert!((segs[1].1 - h).abs() < 1e-12);
    }

    #[test]
    fn boundary_segment_lower_cell() {
        // segment along the interior plane y = 0.5: lengths go to row 0
        let g = Grid::unit(2, 2).unwrap();
        let segs = traverse_segment(&g, [0.0, 0.5, 0.0], [1.0, 0.5, 0.0]).unwrap();
        let total: f64 = segs.iter().map(|(_, l)| l).sum();
        assert!((total - 1.0).abs() < 1e-12);
        for (idx, _) in segs {
            assert_eq!(g.coords(idx)[1], 0);
        }
    }

    #[test]
    fn traversal_partition_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let g = Grid::new(2, &[0.0, 0.0], &[1.0, 1.5], &[7, 5]).unwrap();
        for _ in 0..2000 {
            let x = [rng.random::<f64>(), 1.5 * rng.random::<f64>(), 0.0];
            let y = [rng.random::<f64>(), 1.5 * rng.random::<f64>(), 0.0];
            let segs = traverse_segment(&g, x, y).unwrap();
            let total: f64 = segs.iter().map(|(_, l)| l).sum();
            let len = dist(x, y);
            assert!((total - len).abs() <= 1e-12 * (1.0 + len));
        }
    }

    #[test]
    fn sigma_line_is_one() {
        let plan = line_plan();
        for n in [1usize, 4, 16] {
            let g = Grid::unit(1, n).unwrap();
            let sigma = rasterize_sigma(&plan, &g).unwrap();
            for v in sigma.values() {
                assert!((v - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sigma_self_transport_zero() {
        let mu = line_measure(vec![(0.3, 1.0)]);
        let plan = solve_kp(&mu, &mu, 0.0).unwrap().plan;
        let g = Grid::unit(1, 8).unwrap();
        let sigma = rasterize_sigma(&plan, &g).unwrap();
        assert!(sigma.values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn sigma_mass_cost_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut atoms_mu = Vec::new();
        let mut atoms_nu = Vec::new();
        for _ in 0..20 {
            atoms_mu.push((
                [rng.random::<f64>(), rng.random::<f64>(), 0.0],
                rng.random::<f64>() + 0.1,
            ));
            atoms_nu.push((
                [rng.random::<f64>(), rng.random::<f64>(), 0.0],
                rng.random::<f64>() + 0.1,
            ));
        }
        let total_mu: f64 = atoms_mu.iter().map(|a| a.1).sum();
        let total_nu: f64 = atoms_nu.iter().map(|a| a.1).sum();
        for a in &mut atoms_nu {
            a.1 *= total_mu / total_nu;
        }
        let mu = AtomicMeasure::new(2, &[0.0, 0.0], &[1.0, 1.0], atoms_mu).unwrap();
        let nu = AtomicMeasure::new(2, &[0.0, 0.0], &[1.0, 1.0], atoms_nu).unwrap();
        let plan = solve_kp(&mu, &nu, 0.0).unwrap().plan;
        let g = Grid::unit(2, 16).unwrap();
        let sigma = rasterize_sigma(&plan, &g).unwrap();
        let cost1 = plan.cost_at_exponent(1.0);
        assert!((sigma.total_mass() - cost1).abs() <= 1e-9 * (1.0 + cost1));
    }

    #[test]
    fn one_d_closed_form_sigma_z() {
        // f+ = 1 on [0,1], nu = delta_1: sigma(z) = z
        let g = Grid::unit(1, 64).unwrap();
        let f = GriddedDensity::uniform(g.clone(), 1.0).unwrap();
        let mu = crate::measures::discretize_density(&f).unwrap();
        let nu = line_measure(vec![(1.0, 1.0)]);
        let plan = solve_kp(&mu, &nu, 0.0).unwrap().plan;
        let sigma = rasterize_sigma(&plan, &g).unwrap();
        for (k, v) in sigma.values().iter().enumerate() {
            let z = (k as f64 + 0.5) / 64.0;
            assert!((v - z).abs() <= 1e-3, "cell {k}: {v} vs {z}");
        }
    }

    #[test]
    fn flow_line_is_plus_one() {
        let plan = line_plan();
        let g = Grid::unit(1, 8).unwrap();
        let v = rasterize_flow(&plan, &g).unwrap();
        for vec in v.vectors() {
            assert!((vec[0] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn opposite_segments_cancel() {
        // two unit-mass entries with opposite directions over the same cells
        let src = line_measure(vec![(0.0, 1.0), (1.0, 1.0)]);
        let tgt = line_measure(vec![(0.0, 1.0), (1.0, 1.0)]);
        let plan = TransportPlan {
            source: src,
            target: tgt,
            entries: vec![
                PlanEntry { i: 0, j: 1, mass: 1.0 },
                PlanEntry { i: 1, j: 0, mass: 1.0 },
            ],
            cost_exponent: 1.0,
        };
        let g = Grid::unit(1, 4).unwrap();
        let v = rasterize_flow(&plan, &g).unwrap();
        let sigma = rasterize_sigma(&plan, &g).unwrap();
        for (vec, s) in v.vectors().iter().zip(sigma.values()) {
            assert!(vec[0].abs() < 1e-12);
            assert!((s - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn flow_bounded_by_sigma() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut atoms_mu = Vec::new();
        let mut atoms_nu = Vec::new();
        for _ in 0..12 {
            atoms_mu.push((
                [rng.random::<f64>(), rng.random::<f64>(), 0.0],
                1.0,
            ));
            atoms_nu.push((
                [rng.random::<f64>(), rng.random::<f64>(), 0.0],
                1.0,
            ));
        }
        let mu = AtomicMeasure::new(2, &[0.0, 0.0], &[1.0, 1.0], atoms_mu).unwrap();
        let nu = AtomicMeasure::new(2, &[0.0, 0.0], &[1.0, 1.0], atoms_nu).unwrap();
        let plan = solve_kp(&mu, &nu, 0.0).unwrap().plan;
        let g = Grid::unit(2, 8).unwrap();
        let sigma = rasterize_sigma(&plan, &g).unwrap();
        let v = rasterize_flow(&plan, &g).unwrap();
        for (vec, s) in v.vectors().iter().zip(sigma.values()) {
            let norm = (vec[0] * vec[0] + vec[1] * vec[1]).sqrt();
            assert!(norm <= s + 1e-9);
        }
    }

    #[test]
    fn divergence_constant_and_linear() {
        let plan = line_plan();
        let g = Grid::unit(1, 16).unwrap();
        let v = rasterize_flow(&plan, &g).unwrap();
        let c = Polynomial::constant(3.0);
        assert!(divergence_residual(&plan, &v, &c).unwrap() < 1e-15);
        let lin = Polynomial::linear(0, 1.0);
        assert!(divergence_residual(&plan, &v, &lin).unwrap() <= 1e-9);
    }

    #[test]
    fn divergence_quadratic_shrinks_with_resolution() {
        // off-grid endpoints so the boundary cells are partially covered
        let mu = line_measure(vec![(1.0 / 3.0, 1.0)]);
        let nu = line_measure(vec![(0.9, 1.0)]);
        let plan = solve_kp(&mu, &nu, 0.0).unwrap().plan;
        let phi = Polynomial::square(0, 1.0);
        let mut defects = Vec::new();
        for n in [8usize, 16, 32, 64] {
            let g = Grid::unit(1, n).unwrap();
            let v = rasterize_flow(&plan, &g).unwrap();
            let d = divergence_residual(&plan, &v, &phi).unwrap();
            assert!(d <= 1.0 / n as f64, "res {n}: defect {d}");
            defects.push(d);
        }
        assert!(defects[3] <= 0.6 * defects[0]);
    }

    #[test]
    fn divergence_rejects_cubic() {
        let plan = line_plan();
        let g = Grid::unit(1, 4).unwrap();
        let v = rasterize_flow(&plan, &g).unwrap();
        let cubic = Polynomial::new(vec![(1.0, [3, 0, 0])]);
        assert!(matches!(
            divergence_residual(&plan, &v, &cubic),
            Err(Error::DegreeTooHigh(3))
        ));
    }
}
