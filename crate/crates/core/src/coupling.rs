//! Local couplings `F(m)` and their truncations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum CouplingFamily {
    /// `kappa m^theta`
    Power { kappa: f64, theta: f64 },
    /// `kappa log(m + eps)`
    Log { kappa: f64, eps: f64 },
    /// `kappa m / (1 + m)`
    Bounded { kappa: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CouplingSpec {
    #[serde(flatten)]
    pub family: CouplingFamily,
    /// Constant added to the family, so `F(m) = m - 1` is `Power(1, 1)` with
    /// offset `-1`.
    #[serde(default)]
    pub offset: f64,
    /// `F(r)` is replaced by `F(min(r, n))` when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truncation: Option<f64>,
}

impl CouplingSpec {
    pub fn new(family: CouplingFamily) -> CouplingSpec {
        CouplingSpec {
            family,
            offset: 0.0,
            truncation: None,
        }
    }

    /// `F(m) = m`.
    pub fn identity() -> CouplingSpec {
        CouplingSpec::new(CouplingFamily::Power { kappa: 1.0, theta: 1.0 })
    }

    pub fn with_offset(mut self, offset: f64) -> CouplingSpec {
        self.offset = offset;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(format!("coupling: {msg}")));
        match self.family {
            CouplingFamily::Power { kappa, theta } => {
                if !(theta > 0.0 && theta.is_finite()) {
                    return bad(format!("power exponent must be positive, got {theta}"));
                }
                if !(kappa >= 0.0 && kappa.is_finite()) {
                    return bad(format!("kappa must be nonnegative, got {kappa}"));
                }
            }
            CouplingFamily::Log { kappa, eps } => {
                if !(eps > 0.0 && eps.is_finite()) {
                    return bad(format!("log regularization must be positive, got {eps}"));
                }
                if !(kappa >= 0.0 && kappa.is_finite()) {
                    return bad(format!("kappa must be nonnegative, got {kappa}"));
                }
            }
            CouplingFamily::Bounded { kappa } => {
                if !kappa.is_finite() {
                    return bad(format!("kappa must be finite, got {kappa}"));
                }
            }
        }
        if !self.offset.is_finite() {
            return bad("offset must be finite".into());
        }
        if let Some(n) = self.truncation {
            if !(n > 0.0) {
                return bad(format!("truncation level must be positive, got {n}"));
            }
        }
        Ok(())
    }

    fn raw(&self, r: f64) -> f64 {
        let r = r.max(0.0);
        let f = match self.family {
            CouplingFamily::Power { kappa, theta } => kappa * r.powf(theta),
            CouplingFamily::Log { kappa, eps } => kappa * (r + eps).ln(),
            CouplingFamily::Bounded { kappa } => kappa * r / (1.0 + r),
        };
        f + self.offset
    }

    pub fn eval(&self, r: f64) -> f64 {
        match self.truncation {
            Some(n) => self.raw(r.min(n)),
            None => self.raw(r),
        }
    }

    /// A constant `M` with `F >= -M` on `[0, inf)`.
    pub fn lower_bound(&self) -> f64 {
        let inf = match self.family {
            CouplingFamily::Power { .. } => 0.0,
            CouplingFamily::Log { kappa, eps } => kappa * eps.ln(),
            CouplingFamily::Bounded { kappa } => kappa.min(0.0),
        };
        -(inf + self.offset)
    }

    /// Nondecreasing on `[0, inf)`.
    pub fn is_monotone(&self) -> bool {
        match self.family {
            CouplingFamily::Power { kappa, .. } | CouplingFamily::Log { kappa, .. } => kappa >= 0.0,
            CouplingFamily::Bounded { kappa } => kappa >= 0.0,
        }
    }

    /// Strictly increasing on `[0, inf)` (before truncation).
    pub fn is_strictly_monotone(&self) -> bool {
        match self.family {
            CouplingFamily::Power { kappa, .. } | CouplingFamily::Log { kappa, .. } => kappa > 0.0,
            CouplingFamily::Bounded { kappa } => kappa > 0.0,
        }
    }
}

/// `F_n(r) = F(min(r, n))`; nested truncations keep the smaller level.
pub fn truncate_coupling(f: &CouplingSpec, n: f64) -> Result<CouplingSpec> {
    if !(n > 0.0) {
        return Err(Error::Config(format!("truncation level must be positive, got {n}")));
    }
    let mut out = *f;
    out.truncation = Some(f.truncation.map_or(n, |t| t.min(n)));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn truncation_examples() {
        let f = CouplingSpec::identity();
        let f10 = truncate_coupling(&f, 10.0).unwrap();
        assert_eq!(f10.eval(3.0), 3.0);
        assert_eq!(f10.eval(50.0), 10.0);
        let l = CouplingSpec::new(CouplingFamily::Log { kappa: 1.0, eps: 1e-6 });
        let l2 = truncate_coupling(&l, 2.0).unwrap();
        assert_eq!(l2.eval(5.0), (2.0f64 + 1e-6).ln());
        assert!(truncate_coupling(&f, 0.0).is_err());
        assert_eq!(truncate_coupling(&f10, 20.0).unwrap().truncation, Some(10.0));
    }

    #[test]
    fn lower_bounds_hold() {
        let specs = [
            CouplingSpec::identity().with_offset(-1.0),
            CouplingSpec::new(CouplingFamily::Log { kappa: 2.0, eps: 0.1 }),
            CouplingSpec::new(CouplingFamily::Bounded { kappa: -3.0 }),
            CouplingSpec::new(CouplingFamily::Power { kappa: 0.5, theta: 0.3 }),
        ];
        for s in specs {
            let m = s.lower_bound();
            for k in 0..200 {
                let r = k as f64 * 0.37;
                assert!(s.eval(r) >= -m - 1e-12);
                assert!(truncate_coupling(&s, 5.0).unwrap().eval(r) >= -m - 1e-12);
            }
        }
    }

    #[test]
    fn serde_shape() {
        let s = CouplingSpec::identity().with_offset(-1.0);
        let j = serde_json::to_string(&s).unwrap();
        assert!(j.contains("\"family\":\"power\""), "{j}");
        let back: CouplingSpec = serde_json::from_str(&j).unwrap();
        assert_eq!(back, s);
    }
}
