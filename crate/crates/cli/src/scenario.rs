//! JSON scenario configs: instance geometry, parameter sweeps, tolerances.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Deserialize;
use tdlab_core::grid::{dist, Grid, GriddedDensity};
use tdlab_core::lorentz::{LorentzParams, LorentzQ};
use tdlab_core::measures::{discretize_density, AtomicMeasure};

/// Analytic or file-backed density on the scenario domain.
#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DensitySpec {
    /// Constant `value` on the sub-box [lo, hi] (whole domain if omitted).
    Uniform {
        #[serde(default)]
        lo: Option<Vec<f64>>,
        #[serde(default)]
        hi: Option<Vec<f64>>,
        #[serde(default = "one")]
        value: f64,
    },
    /// Truncated power spike |x - center|^{-beta}, clipped at the
    /// half-cell scale so the discretization stays finite.
    Spike { center: Vec<f64>, beta: f64 },
    File { path: String },
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetSpec {
    Atoms { atoms: Vec<AtomSpec> },
    Density { density: DensitySpec },
    File { path: String },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtomSpec {
    pub pos: Vec<f64>,
    pub mass: f64,
}

/// Secondary Lorentz exponent in configs: a number, "p", or "inf".
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum QSpec {
    Num(f64),
    Sym(String),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PqSpec {
    pub p: f64,
    pub q: QSpec,
}

impl PqSpec {
    pub fn params(&self) -> Result<LorentzParams> {
        let q = match &self.q {
            QSpec::Num(v) => LorentzQ::Finite(*v),
            QSpec::Sym(s) if s == "p" => LorentzQ::Finite(self.p),
            QSpec::Sym(s) if s == "inf" => LorentzQ::Infinity,
            QSpec::Sym(s) => bail!("unknown q spec {s:?} (use a number, \"p\", or \"inf\")"),
        };
        Ok(LorentzParams::new(self.p, q)?)
    }

    /// Stable text form for CSV parameter columns.
    pub fn label(&self) -> String {
        match &self.q {
            QSpec::Num(v) => format!("p={} q={}", self.p, v),
            QSpec::Sym(s) if s == "p" => format!("p={} q={}", self.p, self.p),
            QSpec::Sym(s) => format!("p={} q={}", self.p, s),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// Relative slack for binned-vs-exact comparisons.
    pub binning: f64,
    /// Monte Carlo acceptance in standard errors.
    pub mc_sigma: f64,
    /// Relative tolerance for exact identities.
    pub exact: f64,
    /// Relative stability band across resolution / epsilon sweeps.
    pub stability: f64,
    /// Allowed constant multiple in norm-bound checks.
    pub c_fit: f64,
}

impl Default for Tolerances {
    fn default() -> Tolerances {
        Tolerances {
            binning: 0.15,
            mc_sigma: 3.0,
            exact: 1e-9,
            stability: 0.05,
            c_fit: 2.0,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub dim: usize,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub source: DensitySpec,
    pub target: TargetSpec,
    /// Grid resolutions (per axis) for densities and rasterization.
    pub resolutions: Vec<usize>,
    /// Node counts for the grid-projection sweep of the target measure.
    pub projection_levels: Vec<usize>,
    pub epsilons: Vec<f64>,
    pub pq: Vec<PqSpec>,
    pub t_samples: Vec<f64>,
    pub quad_nodes: usize,
    pub mc_samples: usize,
    pub seed: u64,
    pub tolerances: Tolerances,
}

impl Default for Scenario {
    fn default() -> Scenario {
        // uniform translates: f+ on the left half, f- on the right half
        Scenario {
            name: "translates".into(),
            dim: 2,
            lo: vec![0.0, 0.0],
            hi: vec![1.0, 1.0],
            source: DensitySpec::Uniform {
                lo: Some(vec![0.0, 0.0]),
                hi: Some(vec![0.5, 1.0]),
                value: 2.0,
            },
            target: TargetSpec::Density {
                density: DensitySpec::Uniform {
                    lo: Some(vec![0.5, 0.0]),
                    hi: Some(vec![1.0, 1.0]),
                    value: 2.0,
                },
            },
            resolutions: vec![32],
            projection_levels: vec![4, 8, 16, 32],
            epsilons: vec![0.1],
            pq: vec![PqSpec { p: 2.0, q: QSpec::Num(2.0) }],
            t_samples: (1..10).map(|k| k as f64 / 10.0).collect(),
            quad_nodes: 16,
            mc_samples: 1_000_000,
            seed: 0,
            tolerances: Tolerances::default(),
        }
    }
}

impl Scenario {
    pub fn from_file(path: &Path) -> Result<Scenario> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let s: Scenario = serde_json::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.lo.len() != self.dim || self.hi.len() != self.dim {
            bail!("domain box must have {} coordinates per corner", self.dim);
        }
        if self.resolutions.is_empty() {
            bail!("need at least one resolution");
        }
        for eps in &self.epsilons {
            if *eps < 0.0 {
                bail!("epsilon must be >= 0, got {eps}");
            }
        }
        for t in &self.t_samples {
            if !(0.0..=1.0).contains(t) {
                bail!("t sample {t} outside [0, 1]");
            }
        }
        for pq in &self.pq {
            pq.params()?;
        }
        Ok(())
    }

    pub fn grid(&self, res: usize) -> Result<Grid> {
        Ok(Grid::new(self.dim, &self.lo, &self.hi, &vec![res; self.dim])?)
    }

    fn build_density(&self, spec: &DensitySpec, res: usize) -> Result<GriddedDensity> {
        let grid = self.grid(res)?;
        match spec {
            DensitySpec::Uniform { lo, hi, value } => {
                let lo = lo.clone().unwrap_or_else(|| self.lo.clone());
                let hi = hi.clone().unwrap_or_else(|| self.hi.clone());
                if lo.len() != self.dim || hi.len() != self.dim {
                    bail!("uniform sub-box must have {} coordinates per corner", self.dim);
                }
                Ok(GriddedDensity::from_fn(grid, |p| {
                    let inside = (0..self.dim).all(|k| p[k] >= lo[k] && p[k] <= hi[k]);
                    if inside { *value } else { 0.0 }
                })?)
            }
            DensitySpec::Spike { center, beta } => {
                if center.len() != self.dim {
                    bail!("spike center must have {} coordinates", self.dim);
                }
                if *beta <= 0.0 {
                    bail!("spike exponent must be > 0");
                }
                let mut c = [0.0; 3];
                c[..self.dim].copy_from_slice(center);
                let clip = (0..self.dim)
                    .map(|k| grid.step(k))
                    .fold(f64::INFINITY, f64::min)
                    / 2.0;
                let cap = clip.powf(-beta);
                Ok(GriddedDensity::from_fn(grid, |p| dist(p, c).powf(-beta).min(cap))?)
            }
            DensitySpec::File { path } => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading density {path}"))?;
                Ok(GriddedDensity::from_csv(&text)?)
            }
        }
    }

    pub fn source_density(&self, res: usize) -> Result<GriddedDensity> {
        self.build_density(&self.source, res)
    }

    /// Target as a density; only available when the config gives one.
    pub fn target_density(&self, res: usize) -> Result<GriddedDensity> {
        match &self.target {
            TargetSpec::Density { density } => self.build_density(density, res),
            _ => bail!("this experiment needs the target given as a density"),
        }
    }

    /// Target as an atomic measure (densities are discretized at `res`),
    /// rescaled to carry exactly `mass`.
    pub fn target_atoms(&self, res: usize, mass: f64) -> Result<AtomicMeasure> {
        let raw = match &self.target {
            TargetSpec::Atoms { atoms } => {
                let mut list = Vec::with_capacity(atoms.len());
                for a in atoms {
                    if a.pos.len() != self.dim {
                        bail!("atom position must have {} coordinates", self.dim);
                    }
                    let mut p = [0.0; 3];
                    p[..self.dim].copy_from_slice(&a.pos);
                    list.push((p, a.mass));
                }
                AtomicMeasure::new(self.dim, &self.lo, &self.hi, list)?
            }
            TargetSpec::Density { density } => {
                discretize_density(&self.build_density(density, res)?)?
            }
            TargetSpec::File { path } => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading atoms {path}"))?;
                AtomicMeasure::from_csv(&text, &self.lo, &self.hi)?
            }
        };
        Ok(rescale(&raw, mass)?)
    }
}

/// Copy of the measure with total mass rescaled to `mass`.
pub fn rescale(m: &AtomicMeasure, mass: f64) -> Result<AtomicMeasure> {
    let factor = mass / m.total_mass();
    let atoms = m.atoms().iter().map(|a| (a.pos, a.mass * factor)).collect();
    let lo = m.lo();
    let hi = m.hi();
    Ok(AtomicMeasure::new(m.dim(), &lo[..m.dim()], &hi[..m.dim()], atoms)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_scenario_is_valid_and_balanced() {
        let s = Scenario::default();
        s.validate().unwrap();
        let f = s.source_density(16).unwrap();
        assert!((f.total_mass() - 1.0).abs() < 1e-12);
        let nu = s.target_atoms(16, f.total_mass()).unwrap();
        assert!((nu.total_mass() - f.total_mass()).abs() <= 1e-12);
    }

    #[test]
    fn parses_pq_symbols() {
        let s: Scenario = serde_json::from_str(
            r#"{"pq": [{"p": 1.5, "q": "p"}, {"p": 2.0, "q": "inf"}, {"p": 3.0, "q": 1.0}]}"#,
        )
        .unwrap();
        assert_eq!(s.pq[0].label(), "p=1.5 q=1.5");
        assert_eq!(s.pq[1].label(), "p=2 q=inf");
        s.pq[1].params().unwrap();
        assert!(PqSpec { p: 2.0, q: QSpec::Sym("oops".into()) }.params().is_err());
    }

    #[test]
    fn rejects_bad_parameters() {
        let s: Scenario = serde_json::from_str(r#"{"epsilons": [-0.1]}"#).unwrap();
        assert!(s.validate().is_err());
        let s: Scenario = serde_json::from_str(r#"{"t_samples": [1.5]}"#).unwrap();
        assert!(s.validate().is_err());
        let s: Scenario = serde_json::from_str(r#"{"pq": [{"p": 0.9, "q": 1.0}]}"#).unwrap();
        assert!(s.validate().is_err());
    }

    #[test]
    fn spike_density_is_clipped_and_finite() {
        let s: Scenario = serde_json::from_str(
            r#"{"source": {"kind": "spike", "center": [0.5, 0.5], "beta": 1.5}}"#,
        )
        .unwrap();
        let f = s.source_density(16).unwrap();
        assert!(f.values().iter().all(|v| v.is_finite()));
        let peak = f.values().iter().cloned().fold(0.0, f64::max);
        // center sits on a grid node: nearest cell centers are half a cell
        // away along each axis, clipping caps everything below cap
        let cap = (0.5 / 16.0f64).powf(-1.5);
        let nearest = (2.0f64).sqrt() * 0.5 / 16.0;
        assert!(peak <= cap);
        assert!((peak - nearest.powf(-1.5)).abs() < 1e-9);
    }
}
