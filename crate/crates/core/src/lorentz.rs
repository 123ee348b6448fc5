//! Exact Lorentz L^{p,q} calculus for piecewise-constant densities.
//!
//! A step density has a step distribution function and a step decreasing
//! rearrangement, so all q < infinity quasinorms evaluate in closed form;
//! no quadrature is involved. Only the maximal-function norm (f** is
//! piecewise a + b/t) integrates adaptively, with closed forms for the
//! pure-power pieces and the tail.

use crate::grid::GriddedDensity;
use crate::{Error, Result};

/// Secondary exponent: finite q >= 1 or the sup-type q = infinity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LorentzQ {
    Finite(f64),
    Infinity,
}

/// Lorentz exponents p in (1, inf), q in [1, inf].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LorentzParams {
    p: f64,
    q: LorentzQ,
}

impl LorentzParams {
    pub fn new(p: f64, q: LorentzQ) -> Result<LorentzParams> {
        if !(p > 1.0) || !p.is_finite() {
            return Err(Error::InvalidParameter(format!("p {p} must be in (1, inf)")));
        }
        if let LorentzQ::Finite(qv) = q {
            if !(qv >= 1.0) || !qv.is_finite() {
                return Err(Error::InvalidParameter(format!("q {qv} must be in [1, inf]")));
            }
        }
        Ok(LorentzParams { p, q })
    }

    pub fn finite(p: f64, q: f64) -> Result<LorentzParams> {
        LorentzParams::new(p, LorentzQ::Finite(q))
    }

    pub fn weak(p: f64) -> Result<LorentzParams> {
        LorentzParams::new(p, LorentzQ::Infinity)
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn q(&self) -> LorentzQ {
        self.q
    }

    /// Conjugate exponent p' = p/(p-1).
    pub fn p_conj(&self) -> f64 {
        self.p / (self.p - 1.0)
    }
}

/// Right-continuous nonincreasing step function on [0, inf) vanishing at
/// infinity: value is `levels[k]` on `[breakpoints[k-1], breakpoints[k])`
/// (with breakpoints[-1] = 0) and `levels[m] = 0` past the last breakpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct StepProfile {
    breakpoints: Vec<f64>,
    levels: Vec<f64>,
}

impl StepProfile {
    pub fn new(breakpoints: Vec<f64>, levels: Vec<f64>) -> Result<StepProfile> {
        if levels.len() != breakpoints.len() + 1 {
            return Err(Error::InvalidParameter(
                "step profile needs one more level than breakpoints".into(),
            ));
        }
        if breakpoints.windows(2).any(|w| w[1] <= w[0]) || breakpoints.first().is_some_and(|b| *b <= 0.0) {
            return Err(Error::InvalidParameter(
                "breakpoints must be strictly increasing and positive".into(),
            ));
        }
        if levels.windows(2).any(|w| w[1] > w[0]) || levels.iter().any(|l| !l.is_finite() || *l < 0.0) {
            return Err(Error::InvalidParameter("levels must be nonincreasing and >= 0".into()));
        }
        if *levels.last().unwrap() != 0.0 {
            return Err(Error::InvalidParameter("profile must vanish past the last breakpoint".into()));
        }
        Ok(StepProfile { breakpoints, levels })
    }

    pub fn zero() -> StepProfile {
        StepProfile { breakpoints: Vec::new(), levels: vec![0.0] }
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn is_zero(&self) -> bool {
        self.breakpoints.is_empty()
    }

    /// Right-continuous evaluation.
    pub fn eval(&self, t: f64) -> f64 {
        let k = self.breakpoints.partition_point(|b| *b <= t);
        self.levels[k]
    }

    /// Integral over [0, inf) (finite: the profile has compact support).
    pub fn integral(&self) -> f64 {
        let mut total = 0.0;
        let mut prev = 0.0;
        for (k, b) in self.breakpoints.iter().enumerate() {
            total += self.levels[k] * (b - prev);
            prev = *b;
        }
        total
    }

    /// CSV export: `t,level` rows, t being the left endpoint of each piece.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,level\n");
        out.push_str(&format!("0,{}\n", self.levels[0]));
        for (k, b) in self.breakpoints.iter().enumerate() {
            out.push_str(&format!("{},{}\n", b, self.levels[k + 1]));
        }
        out
    }
}

/// Distinct positive cell values (ascending) with their total volumes.
fn value_histogram(f: &GriddedDensity) -> Vec<(f64, f64)> {
    let vol = f.grid.cell_volume();
    let mut vals: Vec<f64> = f.values().iter().copied().filter(|v| *v > 0.0).collect();
    vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut hist: Vec<(f64, f64)> = Vec::new();
    for v in vals {
        match hist.last_mut() {
            Some(last) if last.0 == v => last.1 += vol,
            _ => hist.push((v, vol)),
        }
    }
    hist
}

/// Distribution function lambda(t) = vol({|f| >= t}), returned as the
/// right-continuous step profile that agrees with it off the jump set
/// (on [v_k, v_{k+1}) the profile carries vol({f >= v_{k+1}}), which is
/// lambda's right limit).
pub fn distribution_function(f: &GriddedDensity) -> StepProfile {
    let hist = value_histogram(f);
    if hist.is_empty() {
        return StepProfile::zero();
    }
    let m = hist.len();
    // suffix volumes: S_k = vol({f >= v_k})
    let mut suffix = vec![0.0; m + 1];
    for k in (0..m).rev() {
        suffix[k] = suffix[k + 1] + hist[k].1;
    }
    let breakpoints: Vec<f64> = hist.iter().map(|(v, _)| *v).collect();
    let mut levels: Vec<f64> = (1..=m).map(|k| suffix[k]).collect();
    let mut all = vec![suffix[0]];
    all.append(&mut levels);
    StepProfile::new(breakpoints, all).expect("histogram profile is valid")
}

/// Decreasing rearrangement f*(t) = inf { a : vol({|f| > a}) <= t },
/// an exact step function in the measure parameterization.
pub fn decreasing_rearrangement(f: &GriddedDensity) -> StepProfile {
    let hist = value_histogram(f);
    if hist.is_empty() {
        return StepProfile::zero();
    }
    let mut breakpoints = Vec::with_capacity(hist.len());
    let mut levels = Vec::with_capacity(hist.len() + 1);
    let mut cum = 0.0;
    for (v, w) in hist.iter().rev() {
        cum += w;
        breakpoints.push(cum);
        levels.push(*v);
    }
    levels.push(0.0);
    StepProfile::new(breakpoints, levels).expect("rearrangement profile is valid")
}

/// The Lorentz quasinorm, evaluated in closed form from the distribution
/// function: p^{1/q} ( sum_k (v_k^q - v_{k-1}^q)/q * vol({f >= v_k})^{q/p} )^{1/q};
/// for q = infinity, sup_t t * lambda(t)^{1/p}.
pub fn lorentz_quasinorm(f: &GriddedDensity, params: &LorentzParams) -> f64 {
    let hist = value_histogram(f);
    if hist.is_empty() {
        return 0.0;
    }
    let m = hist.len();
    let mut suffix = vec![0.0; m + 1];
    for k in (0..m).rev() {
        suffix[k] = suffix[k + 1] + hist[k].1;
    }
    let p = params.p;
    match params.q {
        LorentzQ::Finite(q) => {
            let mut sum = 0.0;
            let mut prev = 0.0_f64;
            for (k, (v, _)) in hist.iter().enumerate() {
                sum += (v.powf(q) - prev.powf(q)) / q * suffix[k].powf(q / p);
                prev = *v;
            }
            p.powf(1.0 / q) * sum.powf(1.0 / q)
        }
        LorentzQ::Infinity => hist
            .iter()
            .enumerate()
            .map(|(k, (v, _))| v * suffix[k].powf(1.0 / p))
            .fold(0.0, f64::max),
    }
}

/// The same quasinorm via the rearrangement formula
/// ( integral (t^{1/p} f*(t))^q dt/t )^{1/q}; closed form per piece.
pub fn lorentz_quasinorm_from_profile(fstar: &StepProfile, params: &LorentzParams) -> f64 {
    if fstar.is_zero() {
        return 0.0;
    }
    let p = params.p;
    match params.q {
        LorentzQ::Finite(q) => {
            let mut sum = 0.0;
            let mut prev = 0.0_f64;
            for (k, b) in fstar.breakpoints.iter().enumerate() {
                let l = fstar.levels[k];
                sum += l.powf(q) * (b.powf(q / p) - prev.powf(q / p)) * (p / q);
                prev = *b;
            }
            sum.powf(1.0 / q)
        }
        LorentzQ::Infinity => {
            // t^{1/p} f*(t) increases in t on each constancy piece
            fstar
                .breakpoints
                .iter()
                .enumerate()
                .map(|(k, b)| b.powf(1.0 / p) * fstar.levels[k])
                .fold(0.0, f64::max)
        }
    }
}

/// Adaptive Simpson to relative tolerance `rel` (absolute floor included).
fn adaptive_simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, rel: f64) -> f64 {
    fn simpson(f: &impl Fn(f64) -> f64, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        ((b - a) / 6.0 * (fa + 4.0 * fm + fb), m, fm)
    }
    fn rec(
        f: &impl Fn(f64) -> f64,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        whole: f64,
        m: f64,
        fm: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let (left, lm, flm) = simpson(f, a, fa, m, fm);
        let (right, rm, frm) = simpson(f, m, fm, b, fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            rec(f, a, fa, m, fm, left, lm, flm, 0.5 * tol, depth - 1)
                + rec(f, m, fm, b, fb, right, rm, frm, 0.5 * tol, depth - 1)
        }
    }
    let fa = f(a);
    let fb = f(b);
    let (whole, m, fm) = simpson(f, a, fa, b, fb);
    let tol = rel * whole.abs().max(1e-300);
    rec(f, a, fa, b, fb, whole, m, fm, tol, 48)
}

/// The maximal-function norm ||f||_{p,q} built from
/// f**(t) = (1/t) integral_0^t f*(s) ds.
pub fn maximal_quasinorm(f: &GriddedDensity, params: &LorentzParams) -> f64 {
    let fstar = decreasing_rearrangement(f);
    maximal_quasinorm_from_profile(&fstar, params)
}

/// As `maximal_quasinorm` but starting from an explicit rearrangement.
pub fn maximal_quasinorm_from_profile(fstar: &StepProfile, params: &LorentzParams) -> f64 {
    if fstar.is_zero() {
        return 0.0;
    }
    let p = params.p;
    let pc = params.p_conj();
    // pieces [t_k, t_{k+1}) carrying f** = a + b/t, with the running
    // integral S_k of f* up to t_k
    let mut pieces: Vec<(f64, f64, f64, f64)> = Vec::new(); // (t0, t1, a, b)
    let mut running = 0.0;
    let mut prev = 0.0_f64;
    for (k, bkpt) in fstar.breakpoints.iter().enumerate() {
        let l = fstar.levels[k];
        pieces.push((prev, *bkpt, l, running - l * prev));
        running += l * (bkpt - prev);
        prev = *bkpt;
    }
    let total = running; // integral of f*
    let last = prev;
    match params.q {
        LorentzQ::Finite(q) => {
            let mut sum = 0.0;
            for &(t0, t1, a, b) in &pieces {
                if b.abs() <= 1e-300 {
                    // pure power piece: a^q * integral t^{q/p - 1}
                    sum += a.powf(q) * (t1.powf(q / p) - t0.powf(q / p)) * (p / q);
                } else {
                    let integrand = |t: f64| t.powf(q / p - 1.0) * (a + b / t).powf(q);
                    sum += adaptive_simpson(&integrand, t0, t1, 1e-10);
                }
            }
            // tail: f** = total / t beyond the support of f*
            sum += total.powf(q) * last.powf(q / p - q) * pc / q;
            sum.powf(1.0 / q)
        }
        LorentzQ::Infinity => {
            let g = |t: f64, a: f64, b: f64| t.powf(1.0 / p) * (a + b / t);
            let mut best = last.powf(1.0 / p) * total / last; // tail sup at t = last
            for &(t0, t1, a, b) in &pieces {
                if t0 > 0.0 {
                    best = best.max(g(t0, a, b));
                }
                best = best.max(g(t1, a, b));
                if a > 0.0 {
                    let tc = b * (p - 1.0) / a;
                    if tc > t0 && tc < t1 {
                        best = best.max(g(tc, a, b));
                    }
                }
            }
            best
        }
    }
}

/// Ratio of the two equivalent norms and whether it sits inside the
/// theoretical band [1, p/(p-1)].
pub fn norm_equivalence_check(f: &GriddedDensity, params: &LorentzParams) -> Result<(f64, bool)> {
    let quasi = lorentz_quasinorm(f, params);
    if quasi == 0.0 {
        return Err(Error::ZeroDensity);
    }
    let maximal = maximal_quasinorm(f, params);
    let ratio = maximal / quasi;
    let within = ratio >= 1.0 - 1e-8 && ratio <= params.p_conj() + 1e-8;
    Ok((ratio, within))
}

/// Plain L^p norm of the step density (for the L^{p,p} = L^p check).
pub fn plain_lp_norm(f: &GriddedDensity, p: f64) -> f64 {
    let vol = f.grid.cell_volume();
    f.values()
        .iter()
        .map(|v| v.powf(p) * vol)
        .sum::<f64>()
        .powf(1.0 / p)
}
