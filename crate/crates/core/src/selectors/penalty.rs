//! Penalty functions and their exact univariate minimizers.

/// Penalty family with its shape parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Penalty {
    Lasso,
    /// SCAD with concavity `a > 2`.
    Scad(f64),
    /// MCP with concavity `gamma > 1`.
    Mcp(f64),
}

impl Penalty {
    /// Penalty value at `t = |b|`.
    pub fn value(self, t: f64, lambda: f64) -> f64 {
        let t = t.abs();
        match self {
            Penalty::Lasso => lambda * t,
            Penalty::Scad(a) => {
                if t <= lambda {
                    lambda * t
                } else if t <= a * lambda {
                    (2.0 * a * lambda * t - t * t - lambda * lambda) / (2.0 * (a - 1.0))
                } else {
                    lambda * lambda * (a + 1.0) / 2.0
                }
            }
            Penalty::Mcp(g) => {
                if t <= g * lambda {
                    lambda * t - t * t / (2.0 * g)
                } else {
                    g * lambda * lambda / 2.0
                }
            }
        }
    }

    /// Magnitude of the subgradient on the positive half-line.
    pub fn derivative(self, t: f64, lambda: f64) -> f64 {
        let t = t.abs();
        match self {
            Penalty::Lasso => lambda,
            Penalty::Scad(a) => {
                if t <= lambda {
                    lambda
                } else if t <= a * lambda {
                    (a * lambda - t) / (a - 1.0)
                } else {
                    0.0
                }
            }
            Penalty::Mcp(g) => (lambda - t / g).max(0.0),
        }
    }

    /// Global minimizer over `b` of `v/2 * b^2 - u * b + P(|b|)`, `v > 0`.
    ///
    /// With `v = 1` this is soft thresholding (LASSO) or firm thresholding
    /// (SCAD, MCP). Returns exactly `0.0` when zero is optimal.
    pub fn threshold(self, u: f64, v: f64, lambda: f64) -> f64 {
        let au = u.abs();
        let mag = match self {
            Penalty::Lasso => (au - lambda).max(0.0) / v,
            Penalty::Scad(a) => {
                let mut cands = [0.0f64; 6];
                cands[0] = ((au - lambda) / v).clamp(0.0, lambda);
                let denom = v - 1.0 / (a - 1.0);
                cands[1] = if denom != 0.0 {
                    ((au - a * lambda / (a - 1.0)) / denom).clamp(lambda, a * lambda)
                } else {
                    lambda
                };
                cands[2] = lambda;
                cands[3] = a * lambda;
                cands[4] = (au / v).max(a * lambda);
                cands[5] = 0.0;
                best_candidate(&cands, au, v, |t| self.value(t, lambda))
            }
            Penalty::Mcp(g) => {
                let mut cands = [0.0f64; 4];
                let denom = v - 1.0 / g;
                cands[0] = if denom != 0.0 {
                    ((au - lambda) / denom).clamp(0.0, g * lambda)
                } else {
                    0.0
                };
                cands[1] = g * lambda;
                cands[2] = (au / v).max(g * lambda);
                cands[3] = 0.0;
                best_candidate(&cands, au, v, |t| self.value(t, lambda))
            }
        };
        if mag == 0.0 {
            0.0
        } else {
            mag.copysign(u)
        }
    }
}

// The objective is piecewise quadratic in t = |b|, so its minimum over each
// piece sits at a clamped stationary point or an endpoint.
fn best_candidate(cands: &[f64], au: f64, v: f64, pen: impl Fn(f64) -> f64) -> f64 {
    let obj = |t: f64| 0.5 * v * t * t - au * t + pen(t);
    let mut best = 0.0;
    let mut best_val = 0.0;
    for &t in cands {
        if t > 0.0 {
            let val = obj(t);
            if val < best_val {
                best_val = val;
                best = t;
            }
        }
    }
    best
}
