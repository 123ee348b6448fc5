//! Brute-force references: Monte Carlo path sampling, permutation
//! enumeration, and empirical rearrangement. Each one is independent of
//! the exact kernel it validates and single-threaded for determinism.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::grid::{dist, Grid, GriddedDensity};
use crate::lorentz::StepProfile;
use crate::measures::AtomicMeasure;
use crate::solver::{PlanEntry, TransportPlan};
use crate::{Error, Result};

/// Monte Carlo estimate of the path-occupation density: sample a plan
/// entry proportionally to its mass and a uniform point on its segment,
/// then deposit weight mass(plan) * |x-y| / (samples * cell_volume).
pub fn mc_sigma(plan: &TransportPlan, grid: &Grid, samples: usize, seed: u64) -> Result<GriddedDensity> {
    mc_sigma_with_se(plan, grid, samples, seed).map(|(sigma, _)| sigma)
}

/// As `mc_sigma`, but also returns the per-cell standard error of the
/// estimate (same grid).
pub fn mc_sigma_with_se(
    plan: &TransportPlan,
    grid: &Grid,
    samples: usize,
    seed: u64,
) -> Result<(GriddedDensity, GriddedDensity)> {
    if samples < 10_000 {
        return Err(Error::InvalidParameter("need at least 1e4 samples".into()));
    }
    let src = plan.source.atoms();
    let tgt = plan.target.atoms();
    // cumulative masses for inverse-cdf sampling of entries
    let mut cum = Vec::with_capacity(plan.entries.len());
    let mut total = 0.0;
    for e in &plan.entries {
        total += e.mass;
        cum.push(total);
    }
    let mut sum = vec![0.0; grid.cell_count()];
    let mut sum_sq = vec![0.0; grid.cell_count()];
    if total > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..samples {
            let u = rng.random::<f64>() * total;
            let k = cum.partition_point(|c| *c <= u).min(plan.entries.len() - 1);
            let e = &plan.entries[k];
            let x = src[e.i].pos;
            let y = tgt[e.j].pos;
            let t = rng.random::<f64>();
            let p = [
                (1.0 - t) * x[0] + t * y[0],
                (1.0 - t) * x[1] + t * y[1],
                (1.0 - t) * x[2] + t * y[2],
            ];
            let z = total * dist(x, y);
            if z > 0.0 {
                let cell = grid.cell_of(p)?;
                sum[cell] += z;
                sum_sq[cell] += z * z;
            }
        }
    }
    let n = samples as f64;
    let inv_vol = 1.0 / grid.cell_volume();
    let mut values = vec![0.0; grid.cell_count()];
    let mut se = vec![0.0; grid.cell_count()];
    for c in 0..values.len() {
        let mean = sum[c] / n;
        values[c] = mean * inv_vol;
        let var = (sum_sq[c] / n - mean * mean).max(0.0);
        se[c] = (var / n).sqrt() * inv_vol;
    }
    Ok((
        GriddedDensity::new(grid.clone(), values)?,
        GriddedDensity::new(grid.clone(), se)?,
    ))
}

/// Exact transport between equal-count, equal-mass atomic measures by
/// enumerating all n! assignments (n <= 8).
pub fn brute_transport(mu: &AtomicMeasure, nu: &AtomicMeasure, eps: f64) -> Result<(f64, TransportPlan)> {
    let n = mu.len();
    if n == 0 || nu.len() != n {
        return Err(Error::InvalidMeasure("need equal, nonzero atom counts".into()));
    }
    if n > 8 {
        return Err(Error::OracleSizeCap(n));
    }
    let m0 = mu.atoms()[0].mass;
    let equal = |m: &AtomicMeasure| m.atoms().iter().all(|a| (a.mass - m0).abs() <= 1e-12 * m0);
    if !equal(mu) || !equal(nu) {
        return Err(Error::InvalidMeasure("atoms must all carry equal mass".into()));
    }
    let exponent = 1.0 + eps;
    let cost_of = |perm: &[usize]| -> f64 {
        perm.iter()
            .enumerate()
            .map(|(i, &j)| m0 * dist(mu.atoms()[i].pos, nu.atoms()[j].pos).powf(exponent))
            .sum()
    };
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = perm.clone();
    let mut best_cost = cost_of(&perm);
    // Heap's algorithm, iterative
    let mut c = vec![0usize; n];
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            let cost = cost_of(&perm);
            if cost < best_cost - 1e-15 * (1.0 + best_cost.abs()) {
                best_cost = cost;
                best = perm.clone();
            }
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    let mut entries: Vec<PlanEntry> = best
        .iter()
        .enumerate()
        .map(|(i, &j)| PlanEntry { i, j, mass: m0 })
        .collect();
    entries.sort_by_key(|e| (e.i, e.j));
    let plan = TransportPlan {
        source: mu.clone(),
        target: nu.clone(),
        entries,
        cost_exponent: exponent,
    };
    Ok((best_cost, plan))
}

/// Empirical decreasing rearrangement: sample uniform points of the box,
/// sort the observed values, and compress the descending quantile function
/// into a step profile on the measure parameterization [0, |box|].
pub fn sampled_rearrangement(f: &GriddedDensity, samples: usize, seed: u64) -> Result<StepProfile> {
    if samples < 100_000 {
        return Err(Error::InvalidParameter("need at least 1e5 samples".into()));
    }
    let g = &f.grid;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut observed = Vec::with_capacity(samples);
    for _ in 0..samples {
        let mut p = [0.0; 3];
        for k in 0..g.dim() {
            p[k] = g.lo()[k] + rng.random::<f64>() * (g.hi()[k] - g.lo()[k]);
        }
        observed.push(f.values()[g.cell_of(p)?]);
    }
    observed.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let box_volume: f64 = (0..g.dim()).map(|k| g.hi()[k] - g.lo()[k]).product();
    let mut breakpoints = Vec::new();
    let mut levels = Vec::new();
    let mut k = 0;
    while k < observed.len() {
        let v = observed[k];
        let mut end = k + 1;
        while end < observed.len() && observed[end] == v {
            end += 1;
        }
        if v > 0.0 {
            levels.push(v);
            breakpoints.push(end as f64 / samples as f64 * box_volume);
        }
        k = end;
    }
    levels.push(0.0);
    StepProfile::new(breakpoints, levels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use crate::lorentz::decreasing_rearrangement;
    use crate::solver::solve_kp;

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
    fn mc_sigma_unit_segment() {
        let mu = line_measure(vec![(0.0, 1.0)]);
        let nu = line_measure(vec![(1.0, 1.0)]);
        let plan = solve_kp(&mu, &nu, 0.0).unwrap().plan;
        let g = Grid::unit(1, 4).unwrap();
        let sigma = mc_sigma(&plan, &g, 1_000_000, 7).unwrap();
        for v in sigma.values() {
            assert!((v - 1.0).abs() <= 0.01, "cell value {v}");
        }
    }

    #[test]
    fn mc_sigma_self_transport_is_zero() {
        let mu = line_measure(vec![(0.3, 1.0), (0.6, 2.0)]);
        let plan = solve_kp(&mu, &mu, 0.0).unwrap().plan;
        let g = Grid::unit(1, 8).unwrap();
        let sigma = mc_sigma(&plan, &g, 10_000, 1).unwrap();
        assert!(sigma.values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn mc_sigma_is_seed_deterministic() {
        let mu = line_measure(vec![(0.1, 1.0)]);
        let nu = line_measure(vec![(0.9, 1.0)]);
        let plan = solve_kp(&mu, &nu, 0.0).unwrap().plan;
        let g = Grid::unit(1, 8).unwrap();
        let a = mc_sigma(&plan, &g, 10_000, 42).unwrap();
        let b = mc_sigma(&plan, &g, 10_000, 42).unwrap();
        assert_eq!(a.values(), b.values());
        let c = mc_sigma(&plan, &g, 10_000, 43).unwrap();
        assert_ne!(a.values(), c.values());
    }

    #[test]
    fn mc_sigma_rejects_tiny_sample_counts() {
        let mu = line_measure(vec![(0.5, 1.0)]);
        let plan = solve_kp(&mu, &mu, 0.0).unwrap().plan;
        let g = Grid::unit(1, 4).unwrap();
        assert!(mc_sigma(&plan, &g, 100, 0).is_err());
    }

    #[test]
    fn brute_single_pair() {
        let mu = line_measure(vec![(0.2, 1.0)]);
        let nu = line_measure(vec![(0.7, 1.0)]);
        let (cost, plan) = brute_transport(&mu, &nu, 0.0).unwrap();
        assert!((cost - 0.5).abs() < 1e-15);
        assert_eq!(plan.entries.len(), 1);
    }

    #[test]
    fn brute_crossing_pair() {
        // sources at 0 and 0.25, targets at 0.25 and 0.5: cost 0.5 either way
        let mu = line_measure(vec![(0.0, 1.0), (0.25, 1.0)]);
        let nu = line_measure(vec![(0.25, 1.0), (0.5, 1.0)]);
        let (cost, _) = brute_transport(&mu, &nu, 0.0).unwrap();
        assert!((cost - 0.5).abs() < 1e-12);
    }

    #[test]
    fn brute_matches_solver_random() {
        use rand::{Rng, SeedableRng};
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let atoms = |rng: &mut ChaCha8Rng| {
                (0..6)
                    .map(|_| ([rng.random::<f64>(), rng.random::<f64>(), 0.0], 1.0))
                    .collect()
            };
            let mu = AtomicMeasure::new(2, &[0.0, 0.0], &[1.0, 1.0], atoms(&mut rng)).unwrap();
            let nu = AtomicMeasure::new(2, &[0.0, 0.0], &[1.0, 1.0], atoms(&mut rng)).unwrap();
            let (cost, _) = brute_transport(&mu, &nu, 0.2).unwrap();
            let sol = solve_kp(&mu, &nu, 0.2).unwrap();
            assert!((cost - sol.cost).abs() <= 1e-9 * (1.0 + cost));
        }
    }

    #[test]
    fn brute_enforces_size_cap() {
        let atoms: Vec<_> = (0..9).map(|k| ([k as f64 / 10.0, 0.0, 0.0], 1.0)).collect();
        let mu = AtomicMeasure::new(1, &[0.0], &[1.0], atoms.clone()).unwrap();
        let nu = AtomicMeasure::new(1, &[0.0], &[1.0], atoms).unwrap();
        assert!(matches!(brute_transport(&mu, &nu, 0.0), Err(Error::OracleSizeCap(9))));
    }

    #[test]
    fn sampled_constant_profile() {
        let g = Grid::unit(2, 4).unwrap();
        let f = GriddedDensity::uniform(g, 2.5).unwrap();
        let prof = sampled_rearrangement(&f, 100_000, 3).unwrap();
        assert_eq!(prof.levels(), &[2.5, 0.0]);
        assert!((prof.breakpoints()[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sampled_indicator_jump() {
        let g = Grid::unit(1, 16).unwrap();
        let f = GriddedDensity::from_fn(g, |p| if p[0] < 0.5 { 1.0 } else { 0.0 }).unwrap();
        let prof = sampled_rearrangement(&f, 100_000, 9).unwrap();
        assert_eq!(prof.levels(), &[1.0, 0.0]);
        assert!((prof.breakpoints()[0] - 0.5).abs() <= 0.01);
    }

    #[test]
    fn sampled_two_levels() {
        let g = Grid::unit(1, 8).unwrap();
        let f = GriddedDensity::from_fn(g, |p| if p[0] < 0.25 { 3.0 } else { 1.0 }).unwrap();
        let prof = sampled_rearrangement(&f, 200_000, 17).unwrap();
        assert_eq!(prof.levels(), &[3.0, 1.0, 0.0]);
        assert!((prof.breakpoints()[0] - 0.25).abs() <= 0.01);
        let exact = decreasing_rearrangement(&f);
        assert_eq!(exact.levels(), &[3.0, 1.0, 0.0]);
    }
}
