//! Closed-form single-layer cost formulas for a standard `k x k` convolution
//! and its `1 x k` + `k x 1` cross factorisation, evaluated exactly as
//! written. They ignore the output-channel count, so they are kept apart
//! from [`super::analyze`].

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct FormulaCost {
    pub flops: u64,
    pub params: u64,
}

fn out_size(numerator: i64, s: u64, what: &str) -> Result<u64> {
    if s == 0 {
        return Err(Error::Domain("stride must be positive".into()));
    }
    if numerator < 0 {
        return Err(Error::Domain(format!("{what}: negative extent {numerator}")));
    }
    Ok(numerator as u64 / s + 1)
}

fn check(w: u64, k: u64, c: u64) -> Result<()> {
    if w == 0 || k == 0 || c == 0 {
        return Err(Error::Domain("W, k and C must be positive".into()));
    }
    Ok(())
}

/// `flops = k^2 C ((W - k + 2p)/s + 1)^2`, `params = k^2 C`.
pub fn formula_standard(w: u64, k: u64, c: u64, s: u64, p: u64) -> Result<FormulaCost> {
    check(w, k, c)?;
    let o = out_size(w as i64 - k as i64 + 2 * p as i64, s, "standard")?;
    Ok(FormulaCost {
        flops: k * k * c * o * o,
        params: k * k * c,
    })
}

/// `flops = k^2 C ((W - 1 + 2p)/s + 1)((W - k + 2p)/s + 1)`, `params = 2 k C`.
pub fn formula_cross(w: u64, k: u64, c: u64, s: u64, p: u64) -> Result<FormulaCost> {
    check(w, k, c)?;
    let a = out_size(w as i64 - 1 + 2 * p as i64, s, "cross")?;
    let b = out_size(w as i64 - k as i64 + 2 * p as i64, s, "cross")?;
    Ok(FormulaCost {
        flops: k * k * c * a * b,
        params: 2 * k * c,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FormulaComparison {
    pub w: u64,
    pub k: u64,
    pub c: u64,
    pub s: u64,
    pub p: u64,
    pub standard: FormulaCost,
    pub cross: FormulaCost,
    /// `standard.params / cross.params`, equal to `k / 2`.
    pub params_ratio: f64,
    pub flops_ratio: f64,
    /// The cross formula's FLOPs exceed the standard one's, contrary to the
    /// claim that the factorisation is cheaper.
    pub cross_flops_exceed_standard: bool,
}

pub fn formula_comparison(w: u64, k: u64, c: u64, s: u64, p: u64) -> Result<FormulaComparison> {
    let standard = formula_standard(w, k, c, s, p)?;
    let cross = formula_cross(w, k, c, s, p)?;
    Ok(FormulaComparison {
        w,
        k,
        c,
        s,
        p,
        standard,
        cross,
        params_ratio: standard.params as f64 / cross.params as f64,
        flops_ratio: standard.flops as f64 / cross.flops as f64,
        cross_flops_exceed_standard: cross.flops > standard.flops,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_evaluated_cases() {
        assert_eq!(formula_standard(8, 3, 3, 1, 1).unwrap(), FormulaCost { flops: 1728, params: 27 });
        assert_eq!(formula_cross(8, 3, 3, 1, 1).unwrap(), FormulaCost { flops: 2160, params: 18 });
        assert_eq!(formula_standard(640, 3, 3, 1, 1).unwrap().params, 27);
        for w in [1, 7, 640] {
            assert_eq!(formula_standard(w, 1, 1, 1, 0).unwrap().params, 1);
        }
        assert_eq!(formula_cross(9, 1, 5, 1, 0).unwrap().params, 10);
    }

    #[test]
    fn params_ratio_is_half_k() {
        for k in 1..=9u64 {
            for c in 1..=8u64 {
                let cmp = formula_comparison(32, k, c, 1, k / 2).unwrap();
                assert_eq!(2 * cmp.standard.params, k * cmp.cross.params);
            }
        }
    }

    #[test]
    fn cross_flops_exceed_standard_at_k3() {
        let cmp = formula_comparison(640, 3, 3, 1, 1).unwrap();
        assert!(cmp.cross_flops_exceed_standard);
        assert_eq!(cmp.params_ratio, 1.5);
    }

    #[test]
    fn domain_errors() {
        assert!(matches!(formula_standard(2, 5, 1, 1, 0), Err(Error::Domain(_))));
        assert!(formula_cross(8, 3, 3, 0, 1).is_err());
        assert!(formula_standard(0, 3, 3, 1, 1).is_err());
    }
}
