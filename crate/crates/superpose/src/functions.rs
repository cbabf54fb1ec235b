//! Named test functions, bound by name plus numeric parameters.
//!
//! | name      | formula                                   | parameters (defaults)        |
//! |-----------|-------------------------------------------|------------------------------|
//! | `zero`    | `0`                                       | —                            |
//! | `const`   | `c`                                       | `c` (1)                      |
//! | `ramp`    | `a·x₁ + b` (unbounded)                    | `a` (1), `b` (0)             |
//! | `poly`    | `c0 + c1·t + c2·t² + c3·t³`, `t = Σ xⱼ`   | `c0` (0), `c1` (0), `c2` (1), `c3` (0) |
//! | `sin`     | `amp·sin(freq·Σ xⱼ + phase)`              | `amp` (1), `freq` (1), `phase` (0) |
//! | `exp`     | `exp(rate·Σ xⱼ)`                          | `rate` (0.5)                 |
//! | `hat`     | `max(0, 1 − ‖x‖∞/width)`                  | `width` (2)                  |
//! | `gauss`   | `exp(−‖x‖₂²/(2σ²))`                       | `sigma` (1)                  |
//! | `product` | `scale·Π xⱼ` (`n ≥ 2`)                    | `scale` (1)                  |

use crate::coordinate::Func;
use std::collections::BTreeMap;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FunctionError {
    #[error("unknown function {0:?}; known: zero, const, ramp, poly, sin, exp, hat, gauss, product")]
    UnknownFunction(String),
    #[error("function {name:?} does not take parameter {param:?}")]
    UnknownParameter { name: String, param: String },
    #[error("function {name:?}: parameter {param:?} must be {why}")]
    BadParameter { name: String, param: String, why: &'static str },
    #[error("function {name:?} needs n ≥ {min}, got {n}")]
    Dimension { name: String, min: usize, n: usize },
}

/// All registry names.
pub const NAMES: &[&str] = &["zero", "const", "ramp", "poly", "sin", "exp", "hat", "gauss", "product"];

fn defaults(name: &str) -> Option<&'static [(&'static str, f64)]> {
    Some(match name {
        "zero" => &[],
        "const" => &[("c", 1.0)],
        "ramp" => &[("a", 1.0), ("b", 0.0)],
        "poly" => &[("c0", 0.0), ("c1", 0.0), ("c2", 1.0), ("c3", 0.0)],
        "sin" => &[("amp", 1.0), ("freq", 1.0), ("phase", 0.0)],
        "exp" => &[("rate", 0.5)],
        "hat" => &[("width", 2.0)],
        "gauss" => &[("sigma", 1.0)],
        "product" => &[("scale", 1.0)],
        _ => return None,
    })
}

/// Resolve `name` with parameter overrides for dimension `n`.
pub fn lookup(name: &str, n: usize, params: &BTreeMap<String, f64>) -> Result<Func, FunctionError> {
    let table = defaults(name).ok_or_else(|| FunctionError::UnknownFunction(name.into()))?;
    for (k, v) in params {
        if !table.iter().any(|(d, _)| d == k) {
            return Err(FunctionError::UnknownParameter { name: name.into(), param: k.clone() });
        }
        if !v.is_finite() {
            return Err(FunctionError::BadParameter {
                name: name.into(),
                param: k.clone(),
                why: "finite",
            });
        }
    }
    let get = |key: &str| -> f64 {
        params
            .get(key)
            .copied()
            .unwrap_or_else(|| table.iter().find(|(d, _)| *d == key).map(|(_, v)| *v).unwrap_or(0.0))
    };
    let positive = |key: &'static str| -> Result<f64, FunctionError> {
        let v = get(key);
        if v > 0.0 {
            Ok(v)
        } else {
            Err(FunctionError::BadParameter { name: name.into(), param: key.into(), why: "positive" })
        }
    };
    let sum = |x: &[f64]| x.iter().sum::<f64>();
    let f: Func = match name {
        "zero" => Arc::new(|_: &[f64]| 0.0),
        "const" => {
            let c = get("c");
            Arc::new(move |_: &[f64]| c)
        }
        "ramp" => {
            let (a, b) = (get("a"), get("b"));
            Arc::new(move |x: &[f64]| a * x[0] + b)
        }
        "poly" => {
            let c = [get("c0"), get("c1"), get("c2"), get("c3")];
            Arc::new(move |x: &[f64]| {
                let t = sum(x);
                c[0] + t * (c[1] + t * (c[2] + t * c[3]))
            })
        }
        "sin" => {
            let (amp, freq, phase) = (get("amp"), get("freq"), get("phase"));
            Arc::new(move |x: &[f64]| amp * (freq * sum(x) + phase).sin())
        }
        "exp" => {
            let rate = get("rate");
            Arc::new(move |x: &[f64]| (rate * sum(x)).exp())
        }
        "hat" => {
            let width = positive("width")?;
            Arc::new(move |x: &[f64]| {
                let norm = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                (1.0 - norm / width).max(0.0)
            })
        }
        "gauss" => {
            let sigma = positive("sigma")?;
            Arc::new(move |x: &[f64]| {
                let r2: f64 = x.iter().map(|v| v * v).sum();
                (-r2 / (2.0 * sigma * sigma)).exp()
            })
        }
        "product" => {
            if n < 2 {
                return Err(FunctionError::Dimension { name: name.into(), min: 2, n });
            }
            let scale = get("scale");
            Arc::new(move |x: &[f64]| scale * x.iter().product::<f64>())
        }
        _ => unreachable!("checked above"),
    };
    Ok(f)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn none() -> BTreeMap<String, f64> {
        BTreeMap::new()
    }

    #[test]
    fn every_name_resolves() {
        for name in NAMES {
            let f = lookup(name, 2, &none()).unwrap();
            assert!(f(&[0.3, -0.4]).is_finite());
        }
    }

    #[test]
    fn formulas_match() {
        assert_eq!(lookup("ramp", 1, &none()).unwrap()(&[2.5]), 2.5);
        assert_eq!(lookup("hat", 1, &none()).unwrap()(&[0.0]), 1.0);
        assert_eq!(lookup("hat", 1, &none()).unwrap()(&[1.0]), 0.5);
        assert_eq!(lookup("hat", 1, &none()).unwrap()(&[3.0]), 0.0);
        assert_eq!(lookup("product", 2, &none()).unwrap()(&[1.5, -2.0]), -3.0);
        let p: BTreeMap<String, f64> = [("c".to_string(), 4.0)].into();
        assert_eq!(lookup("const", 1, &p).unwrap()(&[9.0]), 4.0);
    }

    #[test]
    fn bad_inputs_are_rejected() {
        assert!(matches!(lookup("cosh", 1, &none()), Err(FunctionError::UnknownFunction(_))));
        let p: BTreeMap<String, f64> = [("q".to_string(), 1.0)].into();
        assert!(lookup("sin", 1, &p).is_err());
        assert!(lookup("product", 1, &none()).is_err());
        let p: BTreeMap<String, f64> = [("sigma".to_string(), 0.0)].into();
        assert!(lookup("gauss", 1, &p).is_err());
    }
}
