//! Maximum likelihood for the two-parameter families by derivative-free
//! coordinate search: golden-section line maximization along each
//! (transformed) coordinate, followed by a line search along the net
//! displacement of the sweep.

use serde::{Deserialize, Serialize};

use super::{histogram, CountFamily, CountModelFit};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FamilyKind {
    #[serde(rename = "CMB")]
    Cmb,
    #[serde(rename = "CMP")]
    Cmp,
    #[serde(rename = "BB")]
    BetaBinomial,
    #[serde(rename = "GP")]
    GenPoisson,
}

impl std::str::FromStr for FamilyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cmb" => Ok(FamilyKind::Cmb),
            "cmp" => Ok(FamilyKind::Cmp),
            "bb" | "beta-binomial" => Ok(FamilyKind::BetaBinomial),
            "gp" | "generalized-poisson" => Ok(FamilyKind::GenPoisson),
            other => Err(Error::InvalidInput(format!("unknown count family `{other}`"))),
        }
    }
}

const GAIN_TOL: f64 = 1e-9;
const MAX_SWEEPS: usize = 500;
const GOLDEN_ITERS: usize = 64;

/// Parameter box in the search coordinates.
struct Space {
    lo: [f64; 2],
    hi: [f64; 2],
}

fn logit(q: f64) -> f64 {
    (q / (1.0 - q)).ln()
}

fn expit(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

fn family_at(kind: FamilyKind, trials: u32, x: [f64; 2]) -> CountFamily {
    match kind {
        FamilyKind::Cmb => CountFamily::Cmb { trials, q: expit(x[0]), nu: x[1].exp() },
        FamilyKind::Cmp => CountFamily::Cmp { lambda: x[0].exp(), nu: x[1].exp() },
        FamilyKind::BetaBinomial => CountFamily::BetaBinomial { trials, alpha: x[0].exp(), beta: x[1].exp() },
        FamilyKind::GenPoisson => CountFamily::GenPoisson { theta: x[0].exp(), lambda: x[1] },
    }
}

fn space(kind: FamilyKind) -> Space {
    match kind {
        FamilyKind::Cmb => Space { lo: [-30.0, (1e-3f64).ln()], hi: [30.0, (100.0f64).ln()] },
        FamilyKind::Cmp => Space { lo: [-20.0, (1e-2f64).ln()], hi: [12.0, (100.0f64).ln()] },
        FamilyKind::BetaBinomial => Space { lo: [(1e-3f64).ln(); 2], hi: [(1e5f64).ln(); 2] },
        FamilyKind::GenPoisson => Space { lo: [(1e-8f64).ln(), 0.0], hi: [(1e4f64).ln(), 0.98] },
    }
}

fn start(kind: FamilyKind, trials: u32, mean: f64, var: f64) -> [f64; 2] {
    let m = trials.max(1) as f64;
    match kind {
        FamilyKind::Cmb => [logit((mean / m).clamp(1e-6, 1.0 - 1e-6)), 0.0],
        FamilyKind::Cmp => [mean.max(1e-3).ln(), 0.0],
        FamilyKind::BetaBinomial => {
            let q = (mean / m).clamp(1e-4, 1.0 - 1e-4);
            // Method of moments for the intra-class correlation.
            let binom_var = m * q * (1.0 - q);
            let rho = if m > 1.0 { ((var / binom_var - 1.0) / (m - 1.0)).clamp(1e-3, 0.9) } else { 0.1 };
            let s = 1.0 / rho - 1.0;
            [(q * s).ln(), ((1.0 - q) * s).ln()]
        }
        FamilyKind::GenPoisson => {
            let lam = if var > mean && mean > 0.0 { (1.0 - (mean / var).sqrt()).clamp(0.0, 0.95) } else { 0.0 };
            [(mean.max(1e-3) * (1.0 - lam)).ln(), lam]
        }
    }
}

/// Maximum likelihood fit of a two-parameter count family, treating the
/// values as independent.
///
/// Needs at least 10 values; bounded families need every value
/// `<= trials`. All-zero data degenerates every family and is reported as
/// [`Error::AllZeroData`].
pub fn fit_mle(data: &[u32], kind: FamilyKind, trials: u32) -> Result<CountModelFit> {
    if data.len() < 10 {
        return Err(Error::InvalidInput(format!("need at least 10 values, got {}", data.len())));
    }
    if data.iter().all(|&v| v == 0) {
        return Err(Error::AllZeroData);
    }
    let bounded = matches!(kind, FamilyKind::Cmb | FamilyKind::BetaBinomial);
    if bounded {
        if trials == 0 {
            return Err(Error::InvalidParameter("bounded family needs trials >= 1".into()));
        }
        if let Some(&v) = data.iter().find(|&&v| v > trials) {
            return Err(Error::InvalidInput(format!("value {v} exceeds {trials} trials")));
        }
    }
    let counts = histogram(data);
    let n = data.len() as f64;
    let mean = data.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = data.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / (n - 1.0);

    let sp = space(kind);
    let objective = |x: [f64; 2]| -> f64 {
        let fam = family_at(kind, trials, x);
        let ll = fam.loglik_counts(&counts);
        if ll.is_nan() {
            f64::NEG_INFINITY
        } else {
            ll
        }
    };

    let mut x = start(kind, trials, mean, var);
    for c in 0..2 {
        x[c] = x[c].clamp(sp.lo[c], sp.hi[c]);
    }
    let mut f = objective(x);
    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        let before = f;
        let x_prev = x;
        for c in 0..2 {
            let (t, ft) = golden_max(|t| {
                let mut y = x;
                y[c] = t;
                objective(y)
            }, sp.lo[c], sp.hi[c]);
            if ft > f {
                x[c] = t;
                f = ft;
            }
        }
        // Pattern move along the sweep displacement.
        let dir = [x[0] - x_prev[0], x[1] - x_prev[1]];
        if dir[0] != 0.0 || dir[1] != 0.0 {
            let t_max = (0..2)
                .filter(|&c| dir[c] != 0.0)
                .map(|c| if dir[c] > 0.0 { (sp.hi[c] - x[c]) / dir[c] } else { (sp.lo[c] - x[c]) / dir[c] })
                .fold(f64::INFINITY, f64::min)
                .min(50.0);
            if t_max > 0.0 {
                let (t, ft) = golden_max(|t| objective([x[0] + t * dir[0], x[1] + t * dir[1]]), 0.0, t_max);
                if ft > f {
                    x = [x[0] + t * dir[0], x[1] + t * dir[1]];
                    f = ft;
                }
            }
        }
        if f.is_finite() && f - before < GAIN_TOL {
            converged = true;
            break;
        }
    }
    if !f.is_finite() {
        return Err(Error::FitNonConvergence(format!("{kind:?} log-likelihood is not finite")));
    }
    Ok(CountModelFit { family: family_at(kind, trials, x), loglik: f, n_used: data.len(), converged })
}

/// Golden-section maximization on `[a, b]`; also checks both endpoints so
/// boundary optima are reached exactly.
fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> (f64, f64) {
    let (lo, hi) = (a, b);
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..GOLDEN_ITERS {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    let mut best = if fc >= fd { (c, fc) } else { (d, fd) };
    for t in [lo, hi] {
        let ft = f(t);
        if ft > best.1 {
            best = (t, ft);
        }
    }
    best
}
