//! Displacement interpolation and the homothety representation of the
//! interpolant density for atomic targets.

use crate::grid::{Grid, GriddedDensity};
use crate::lorentz::{lorentz_quasinorm, LorentzParams};
use crate::measures::AtomicMeasure;
use crate::par::{chunked_map, ordered_map, CHUNK};
use crate::solver::{solve_kp, TransportPlan};
use crate::{Error, Result};

/// For each target atom, the sources feeding it: the discrete analogue of
/// the regions T^{-1}({x_i}) that tile the domain.
#[derive(Debug, Clone)]
pub struct AssignmentRegions {
    regions: Vec<Vec<(usize, f64)>>,
}

impl AssignmentRegions {
    pub fn from_plan(plan: &TransportPlan) -> AssignmentRegions {
        let mut regions = vec![Vec::new(); plan.target.len()];
        for e in &plan.entries {
            regions[e.j].push((e.i, e.mass));
        }
        AssignmentRegions { regions }
    }

    /// `regions()[j]` lists (source index, mass sent to target j).
    pub fn regions(&self) -> &[Vec<(usize, f64)>] {
        &self.regions
    }
}

/// Displacement interpolation: one atom per plan entry at
/// (1-t) x_i + t y_j, coinciding atoms merged.
pub fn interpolate_plan(plan: &TransportPlan, t: f64) -> Result<AtomicMeasure> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidParameter(format!("t {t} outside [0, 1]")));
    }
    let src = plan.source.atoms();
    let tgt = plan.target.atoms();
    let atoms = plan
        .entries
        .iter()
        .map(|e| {
            let x = src[e.i].pos;
            let y = tgt[e.j].pos;
            (
                [
                    (1.0 - t) * x[0] + t * y[0],
                    (1.0 - t) * x[1] + t * y[1],
                    (1.0 - t) * x[2] + t * y[2],
                ],
                e.mass,
            )
        })
        .collect();
    let dim = plan.source.dim();
    let lo = plan.source.lo();
    let hi = plan.source.hi();
    AtomicMeasure::new(dim, &lo[..dim], &hi[..dim], atoms)
}

/// Bin an atomic measure onto a grid as a density (mass / cell volume).
pub fn bin_atoms_to_grid(m: &AtomicMeasure, grid: &Grid) -> Result<GriddedDensity> {
    let mut values = vec![0.0; grid.cell_count()];
    let inv_vol = 1.0 / grid.cell_volume();
    for a in m.atoms() {
        values[grid.cell_of(a.pos)?] += a.mass * inv_vol;
    }
    GriddedDensity::new(grid.clone(), values)
}

/// Deposit `mass` uniformly spread over the box [lo, hi] onto the grid
/// buffer, proportionally to the exact cell overlap volumes.
fn deposit_box(grid: &Grid, lo: [f64; 3], hi: [f64; 3], mass: f64, buf: &mut [f64]) {
    let dim = grid.dim();
    let mut vol_box = 1.0;
    for k in 0..dim {
        vol_box *= hi[k] - lo[k];
    }
    if vol_box <= 0.0 {
        return;
    }
    // per-axis cell ranges touched by the box
    let mut first = [0usize; 3];
    let mut last = [0usize; 3];
    for k in 0..dim {
        let h = grid.step(k);
        let glo = grid.lo()[k];
        let res = grid.res()[k] as isize;
        first[k] = (((lo[k] - glo) / h).floor() as isize).clamp(0, res - 1) as usize;
        last[k] = (((hi[k] - glo) / h).ceil() as isize - 1).clamp(0, res - 1) as usize;
    }
    let mut c = first;
    loop {
        let mut overlap = 1.0;
        for k in 0..dim {
            let h = grid.step(k);
            let glo = grid.lo()[k];
            let a = (glo + c[k] as f64 * h).max(lo[k]);
            let b = (glo + (c[k] + 1) as f64 * h).min(hi[k]);
            overlap *= (b - a).max(0.0);
        }
        if overlap > 0.0 {
            buf[grid.index(c)] += mass * overlap / vol_box;
        }
        // advance the multi-index
        let mut k = dim;
        loop {
            if k == 0 {
                return;
            }
            k -= 1;
            if c[k] < last[k] {
                c[k] += 1;
                break;
            }
            c[k] = first[k];
        }
    }
}

/// The interpolant density f_t for an atomic target: each source cell's
/// sub-mass sent to atom x is relocated to the shrunken cell
/// (1-t) * cell + t * x and re-binned conservatively onto `out_grid`.
pub fn interpolant_density(
    f_plus: &GriddedDensity,
    plan: &TransportPlan,
    t: f64,
    out_grid: &Grid,
) -> Result<GriddedDensity> {
    if t == 1.0 {
        return Err(Error::InvalidParameter(
            "t = 1 is a degenerate homothety; use interpolate_plan".into(),
        ));
    }
    if !(0.0..1.0).contains(&t) {
        return Err(Error::InvalidParameter(format!("t {t} outside [0, 1)")));
    }
    let dim = f_plus.grid.dim();
    let src = plan.source.atoms();
    let tgt = plan.target.atoms();
    let shrink = 1.0 - t;
    let partials = chunked_map(&plan.entries, CHUNK, |chunk| {
        let mut buf = vec![0.0; out_grid.cell_count()];
        for e in chunk {
            let cell = f_plus
                .grid
                .cell_of(src[e.i].pos)
                .expect("plan source atoms sit at cells of f+");
            let (clo, chi) = f_plus.grid.cell_bounds(cell);
            let x = tgt[e.j].pos;
            let mut lo = [0.0; 3];
            let mut hi = [0.0; 3];
            for k in 0..dim {
                lo[k] = shrink * clo[k] + t * x[k];
                hi[k] = shrink * chi[k] + t * x[k];
            }
            deposit_box(out_grid, lo, hi, e.mass, &mut buf);
        }
        buf
    });
    let mut values = vec![0.0; out_grid.cell_count()];
    for part in partials {
        for (v, p) in values.iter_mut().zip(part) {
            *v += p;
        }
    }
    let inv_vol = 1.0 / out_grid.cell_volume();
    for v in &mut values {
        *v *= inv_vol;
    }
    GriddedDensity::new(out_grid.clone(), values)
}

/// Midpoint-rule check of sigma <= diam(Omega) * integral of mu_t dt.
/// Returns (lhs, rhs, max over cells of lhs - rhs).
pub fn sigma_interpolation_bound(
    plan: &TransportPlan,
    grid: &Grid,
    quad_nodes: usize,
) -> Result<(GriddedDensity, GriddedDensity, f64)> {
    if quad_nodes < 8 {
        return Err(Error::InvalidParameter("need at least 8 quadrature nodes".into()));
    }
    let lhs = crate::raster::rasterize_sigma(plan, grid)?;
    let diam = grid.diameter();
    let nodes: Vec<f64> = (0..quad_nodes)
        .map(|k| (k as f64 + 0.5) / quad_nodes as f64)
        .collect();
    let binned = ordered_map(nodes, |t| {
        let mu_t = interpolate_plan(plan, t).expect("midpoint nodes lie in (0,1)");
        bin_atoms_to_grid(&mu_t, grid).expect("interpolated atoms stay in the convex domain")
    });
    let mut rhs_values = vec![0.0; grid.cell_count()];
    for b in binned {
        for (r, v) in rhs_values.iter_mut().zip(b.values()) {
            *r += v;
        }
    }
    let scale = diam / quad_nodes as f64;
    for r in &mut rhs_values {
        *r *= scale;
    }
    let rhs = GriddedDensity::new(grid.clone(), rhs_values)?;
    let defect = lhs
        .values()
        .iter()
        .zip(rhs.values())
        .map(|(l, r)| l - r)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok((lhs, rhs, defect))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormCurvePoint {
    pub t: f64,
    pub norm: f64,
    pub envelope: f64,
}

/// Lorentz norm of the binned interpolant mu_{eps,t} along a t-grid,
/// together with the two-sided envelope
/// min{ (1-t)^{-d/p'} ||f+||, t^{-d/p'} ||f-|| }.
pub fn interpolant_norm_curve(
    f_plus: &GriddedDensity,
    f_minus: &GriddedDensity,
    eps: f64,
    params: &LorentzParams,
    t_samples: &[f64],
) -> Result<Vec<NormCurvePoint>> {
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter(
            "two-sided bound requires strictly convex cost (eps > 0)".into(),
        ));
    }
    let mu = crate::measures::discretize_density(f_plus)?;
    let nu = crate::measures::discretize_density(f_minus)?;
    let sol = solve_kp(&mu, &nu, eps)?;
    interpolant_norm_curve_from_plan(f_plus, f_minus, &sol.plan, params, t_samples)
}

/// As `interpolant_norm_curve`, but reusing an already-solved plan (the
/// curve itself does not depend on the Lorentz exponents).
pub fn interpolant_norm_curve_from_plan(
    f_plus: &GriddedDensity,
    f_minus: &GriddedDensity,
    plan: &TransportPlan,
    params: &LorentzParams,
    t_samples: &[f64],
) -> Result<Vec<NormCurvePoint>> {
    let d = f_plus.grid.dim() as f64;
    let exponent = d / params.p_conj();
    let norm_plus = lorentz_quasinorm(f_plus, params);
    let norm_minus = lorentz_quasinorm(f_minus, params);
    let grid = f_plus.grid.clone();
    let points = ordered_map(t_samples.to_vec(), |t| {
        let mu_t = interpolate_plan(plan, t)?;
        let f_t = bin_atoms_to_grid(&mu_t, &grid)?;
        let norm = lorentz_quasinorm(&f_t, params);
        let from_plus = if t < 1.0 {
            (1.0 - t).powf(-exponent) * norm_plus
        } else {
            f64::INFINITY
        };
        let from_minus = if t > 0.0 {
            t.powf(-exponent) * norm_minus
        } else {
            f64::INFINITY
        };
        Ok(NormCurvePoint {
            t,
            norm,
            envelope: from_plus.min(from_minus),
        })
    });
    points.into_iter().collect()
}

/// CSV export of a norm curve: `t,norm,envelope`.
pub fn norm_curve_csv(points: &[NormCurvePoint]) -> String {
    let mut out = String::from("t,norm,envelope\n");
    for p in points {
        out.push_str(&format!("{},{},{}\n", p.t, p.norm, p.envelope));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::discretize_density;
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

    #[test]
    fn interpolation_endpoints() {
        let mu = line_measure(vec![(0.1, 0.5), (0.8, 0.5)]);
        let nu = line_measure(vec![(0.4, 1.0)]);
        let plan = solve_kp(&mu, &nu, 0.0).unwrap().plan;
        assert_eq!(interpolate_plan(&plan, 0.0).unwrap(), mu);
        assert_eq!(interpolate_plan(&plan, 1.0).unwrap(), nu);
    }

    #[test]
    fn interpolation_midpoint_atom() {
        let mu = line_measure(vec![(0.0, 1.0)]);
        let nu = line_measure(vec![(1.0, 1.0)]);
        let plan = solve_kp(&mu, &nu, 0.0).unwrap().plan;
        let m = interpolate_plan(&plan, 0.3).unwrap();
        assert_eq!(m.len(), 1);
        assert!((m.atoms()[0].pos[0] - 0.3).abs() < 1e-15);
        assert!((m.atoms()[0].mass - 1.0).abs() < 1e-15);
    }

    #[test]
    fn interpolation_rejects_bad_t() {
        let mu = line_measure(vec![(0.0, 1.0)]);
        let plan = solve_kp(&mu, &mu, 0.0).unwrap().plan;
        assert!(interpolate_plan(&plan, -0.1).is_err());
        assert!(interpolate_plan(&plan, 1.1).is_err());
    }

    #[test]
    fn regions_partition_masses() {
        let mu = line_measure(vec![(0.1, 0.4), (0.5, 0.6)]);
        let nu = line_measure(vec![(0.3, 0.5), (0.9, 0.5)]);
        let plan = solve_kp(&mu, &nu, 0.1).unwrap().plan;
        let regions = AssignmentRegions::from_plan(&plan);
        for (j, region) in regions.regions().iter().enumerate() {
            let total: f64 = region.iter().map(|(_, m)| m).sum();
            assert!((total - nu.atoms()[j].mass).abs() <= 1e-9);
        }
    }

    #[test]
    fn homothety_uniform_single_target() {
        // uniform f+ on [0,1]^2, one target atom: f_t uniform (1-t)^{-2}
        // on the shrunken box
        let g = Grid::unit(2, 8).unwrap();
        let f = GriddedDensity::uniform(g.clone(), 1.0).unwrap();
        let mu = discretize_density(&f).unwrap();
        let nu = AtomicMeasure::new(2, &[0.0, 0.0], &[1.0, 1.0], vec![([0.0, 0.0, 0.0], 1.0)])
            .unwrap();
        let plan = solve_kp(&mu, &nu, 0.0).unwrap().plan;
        let t = 0.5;
        let out = Grid::unit(2, 16).unwrap();
        let ft = interpolant_density(&f, &plan, t, &out).unwrap();
        assert!((ft.total_mass() - 1.0).abs() <= 1e-9);
        for (idx, v) in ft.values().iter().enumerate() {
            let c = out.cell_center(idx);
            let expect = if c[0] < 0.5 && c[1] < 0.5 { 4.0 } else { 0.0 };
            assert!((v - expect).abs() < 1e-9, "cell {idx}: {v} vs {expect}");
        }
    }

    #[test]
    fn homothety_identity_at_t_zero() {
        let g = Grid::unit(1, 16).unwrap();
        let f = GriddedDensity::from_fn(g.clone(), |p| p[0] + 0.5).unwrap();
        let mu = discretize_density(&f).unwrap();
        let nu = line_measure(vec![(0.5, f.total_mass())]);
        let plan = solve_kp(&mu, &nu, 0.0).unwrap().plan;
        let ft = interpolant_density(&f, &plan, 0.0, &g).unwrap();
        for (a, b) in ft.values().iter().zip(f.values()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn homothety_rejects_t_one() {
        let g = Grid::unit(1, 4).unwrap();
        let f = GriddedDensity::uniform(g.clone(), 1.0).unwrap();
        let mu = discretize_density(&f).unwrap();
        let nu = line_measure(vec![(0.5, 1.0)]);
        let plan = solve_kp(&mu, &nu, 0.0).unwrap().plan;
        assert!(interpolant_density(&f, &plan, 1.0, &g).is_err());
    }

    #[test]
    fn homothety_conserves_mass_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = Grid::unit(2, 8).unwrap();
        let f = GriddedDensity::from_fn(g.clone(), |_| rng.random::<f64>() + 0.1).unwrap();
        let mu = discretize_density(&f).unwrap();
        let atoms = vec![
            ([0.21, 0.77, 0.0], 0.4 * f.total_mass()),
            ([0.83, 0.13, 0.0], 0.6 * f.total_mass()),
        ];
        let nu = AtomicMeasure::new(2, &[0.0, 0.0], &[1.0, 1.0], atoms).unwrap();
        let plan = solve_kp(&mu, &nu, 0.2).unwrap().plan;
        for t in [0.0, 0.3, 0.77, 0.99] {
            let ft = interpolant_density(&f, &plan, t, &g).unwrap();
            assert!(
                (ft.total_mass() - f.total_mass()).abs() <= 1e-9 * f.total_mass(),
                "t={t}"
            );
        }
    }

    #[test]
    fn norm_scaling_law_dyadic() {
        // single target atom at the origin corner, dyadic 1-t: homothety
        // maps cells to exact subcells, the norm identity is exact
        for d in [1usize, 2] {
            let n = 8usize;
            let g = Grid::unit(d, n).unwrap();
            let f = GriddedDensity::from_fn(g.clone(), |p| {
                (p[0] * 3.0).floor() + if d > 1 { (p[1] * 2.0).floor() } else { 0.0 } + 1.0
            })
            .unwrap();
            let mu = discretize_density(&f).unwrap();
            let origin = [0.0; 3];
            let nu = AtomicMeasure::new(
                d,
                &vec![0.0; d],
                &vec![1.0; d],
                vec![(origin, f.total_mass())],
            )
            .unwrap();
            let plan = solve_kp(&mu, &nu, 0.0).unwrap().plan;
            let params = LorentzParams::finite(1.5, 2.0).unwrap();
            let base = lorentz_quasinorm(&f, &params);
            for k in [1u32, 2, 3] {
                let shrink = 0.5_f64.powi(k as i32);
                let t = 1.0 - shrink;
                let out = Grid::unit(d, n * 2usize.pow(k)).unwrap();
                let ft = interpolant_density(&f, &plan, t, &out).unwrap();
                let norm = lorentz_quasinorm(&ft, &params);
                let expect = shrink.powf(-(d as f64) / params.p_conj()) * base;
                assert!(
                    (norm - expect).abs() <= 1e-6 * expect,
                    "d={d} k={k}: {norm} vs {expect}"
                );
            }
        }
    }

    #[test]
    fn sigma_bound_self_transport() {
        let mu = line_measure(vec![(0.5, 1.0)]);
        let plan = solve_kp(&mu, &mu, 0.0).unwrap().plan;
        let g = Grid::unit(1, 8).unwrap();
        let (lhs, rhs, _) = sigma_interpolation_bound(&plan, &g, 16).unwrap();
        assert!(lhs.values().iter().all(|v| *v == 0.0));
        // rhs is the binned self-atom, nonnegative
        assert!(rhs.values().iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn sigma_bound_line() {
        let mu = line_measure(vec![(0.0, 1.0)]);
        let nu = line_measure(vec![(1.0, 1.0)]);
        let plan = solve_kp(&mu, &nu, 0.0).unwrap().plan;
        let g = Grid::unit(1, 16).unwrap();
        let (_, _, defect) = sigma_interpolation_bound(&plan, &g, 64).unwrap();
        assert!(defect <= 0.1, "defect {defect}");
    }

    #[test]
    fn sigma_bound_needs_nodes() {
        let mu = line_measure(vec![(0.5, 1.0)]);
        let plan = solve_kp(&mu, &mu, 0.0).unwrap().plan;
        let g = Grid::unit(1, 4).unwrap();
        assert!(sigma_interpolation_bound(&plan, &g, 4).is_err());
    }

    #[test]
    fn norm_curve_rejects_eps_zero() {
        let g = Grid::unit(1, 4).unwrap();
        let f = GriddedDensity::uniform(g, 1.0).unwrap();
        let params = LorentzParams::finite(1.5, 2.0).unwrap();
        assert!(interpolant_norm_curve(&f, &f, 0.0, &params, &[0.5]).is_err());
    }

    #[test]
    fn norm_curve_endpoints_match_marginals() {
        let g = Grid::unit(1, 16).unwrap();
        let fp = GriddedDensity::from_fn(g.clone(), |p| if p[0] < 0.5 { 2.0 } else { 0.0 }).unwrap();
        let fm = GriddedDensity::from_fn(g, |p| if p[0] >= 0.5 { 2.0 } else { 0.0 }).unwrap();
        let params = LorentzParams::finite(1.5, 2.0).unwrap();
        let curve = interpolant_norm_curve(&fp, &fm, 0.1, &params, &[0.0, 1.0]).unwrap();
        let np = lorentz_quasinorm(&fp, &params);
        let nm = lorentz_quasinorm(&fm, &params);
        assert!((curve[0].norm - np).abs() <= 1e-9 * np);
        assert!((curve[1].norm - nm).abs() <= 1e-9 * nm);
        assert!((curve[0].envelope - np).abs() <= 1e-12 * np);
        assert!((curve[1].envelope - nm).abs() <= 1e-12 * nm);
    }
}
