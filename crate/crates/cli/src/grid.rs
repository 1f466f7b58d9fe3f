//! Hyperparameter grids for `sweep`.
//!
//! Each axis is `name=spec` with `name` one of `kmax`, `alpha`, `c` and
//! `spec` either an inclusive range `start:step:end` or a comma list. Values
//! are sums of terms; a term is a number, optionally followed by `kmax`
//! (alpha only) or `labeled` (the number of subject plus action classes):
//!
//! ```text
//! kmax=labeled:10:labeled+100
//! alpha=3kmax:10:4kmax
//! c=0:0.5:5
//! ```

use std::fmt;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Axis {
    KMax,
    Alpha,
    C,
}

impl Axis {
    fn parse(s: &str) -> Result<Self, String> {
        match s.trim() {
            "kmax" => Ok(Axis::KMax),
            "alpha" => Ok(Axis::Alpha),
            "c" => Ok(Axis::C),
            other => Err(format!(
                "unknown grid axis {other:?} (expected kmax, alpha or c)"
            )),
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::KMax => "kmax",
            Axis::Alpha => "alpha",
            Axis::C => "c",
        })
    }
}

/// `constant + kmax_coef * K_max + labeled_coef * labeled`.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Expr {
    constant: f64,
    kmax: f64,
    labeled: f64,
}

impl Expr {
    fn parse(s: &str) -> Result<Self, String> {
        let mut e = Expr {
            constant: 0.0,
            kmax: 0.0,
            labeled: 0.0,
        };
        let s: String = s.chars().filter(|c| !c.is_whitespace()).collect();
        if s.is_empty() {
            return Err("empty value".into());
        }
        let b = s.as_bytes();
        let (mut start, mut sign) = (0, 1.0);
        for i in 0..b.len() {
            if b[i] != b'+' && b[i] != b'-' {
                continue;
            }
            // the sign of an exponent such as 1e-3 belongs to its term
            let exponent = i >= 2
                && matches!(b[i - 1], b'e' | b'E')
                && (b[i - 2].is_ascii_digit() || b[i - 2] == b'.');
            if exponent {
                continue;
            }
            if i > 0 {
                e.add_term(&s[start..i], sign)
                    .map_err(|m| format!("{m} in {s:?}"))?;
            }
            sign = if b[i] == b'-' { -1.0 } else { 1.0 };
            start = i + 1;
        }
        e.add_term(&s[start..], sign)
            .map_err(|m| format!("{m} in {s:?}"))?;
        Ok(e)
    }

    fn add_term(&mut self, term: &str, sign: f64) -> Result<(), String> {
        let (num, slot) = if let Some(n) = term.strip_suffix("kmax") {
            (n.trim_end_matches('*'), &mut self.kmax)
        } else if let Some(n) = term.strip_suffix("labeled") {
            (n.trim_end_matches('*'), &mut self.labeled)
        } else {
            (term, &mut self.constant)
        };
        let v = if num.is_empty() {
            1.0
        } else {
            num.parse::<f64>()
                .map_err(|_| format!("bad number {num:?}"))?
        };
        if !v.is_finite() {
            return Err(format!("non-finite number {num:?}"));
        }
        *slot += sign * v;
        Ok(())
    }

    fn eval(&self, kmax: f64, labeled: f64) -> f64 {
        self.constant + self.kmax * kmax + self.labeled * labeled
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Spec {
    Range { start: Expr, step: Expr, end: Expr },
    List(Vec<Expr>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct AxisSpec {
    axis: Axis,
    spec: Spec,
}

impl AxisSpec {
    pub fn parse(s: &str) -> Result<Self, String> {
        let (name, body) = s
            .split_once('=')
            .ok_or_else(|| format!("grid axis {s:?} is not of the form name=spec"))?;
        let axis = Axis::parse(name)?;
        let body = body.trim();
        if body.is_empty() {
            return Err(format!("grid axis {axis} has no values"));
        }
        let parts: Vec<&str> = body.split(':').collect();
        let spec = match parts.as_slice() {
            [single] => Spec::List(
                single
                    .split(',')
                    .map(Expr::parse)
                    .collect::<Result<_, _>>()?,
            ),
            [start, step, end] => Spec::Range {
                start: Expr::parse(start)?,
                step: Expr::parse(step)?,
                end: Expr::parse(end)?,
            },
            _ => {
                return Err(format!(
                    "grid axis {axis}: expected start:step:end or a comma list, got {body:?}"
                ))
            }
        };
        let all: Vec<&Expr> = match &spec {
            Spec::List(v) => v.iter().collect(),
            Spec::Range { start, step, end } => vec![start, step, end],
        };
        if axis != Axis::Alpha && all.iter().any(|e| e.kmax != 0.0) {
            return Err(format!("grid axis {axis} cannot refer to kmax"));
        }
        Ok(AxisSpec { axis, spec })
    }

    fn values(&self, kmax: f64, labeled: f64) -> Result<Vec<f64>, String> {
        match &self.spec {
            Spec::List(v) => Ok(v.iter().map(|e| e.eval(kmax, labeled)).collect()),
            Spec::Range { start, step, end } => {
                let (a, h, b) = (
                    start.eval(kmax, labeled),
                    step.eval(kmax, labeled),
                    end.eval(kmax, labeled),
                );
                if !(h > 0.0) {
                    return Err(format!(
                        "grid axis {}: step must be > 0, got {h}",
                        self.axis
                    ));
                }
                if b < a {
                    return Ok(Vec::new());
                }
                let n = ((b - a) / h + 1e-9).floor() as usize + 1;
                Ok((0..n).map(|i| a + i as f64 * h).collect())
            }
        }
    }
}

/// One grid point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Point {
    pub k_max: usize,
    pub alpha: f64,
    pub c: f64,
}

/// The Cartesian product of the axes (kmax outermost, then alpha, then c).
/// Axes not given take the value from `base`.
pub fn expand(axes: &[AxisSpec], base: Point, labeled: usize) -> Result<Vec<Point>, String> {
    let find = |a: Axis| {
        let mut it = axes.iter().filter(|s| s.axis == a);
        let first = it.next();
        if it.next().is_some() {
            return Err(format!("grid axis {a} given more than once"));
        }
        Ok(first)
    };
    let (ks, als, cs) = (find(Axis::KMax)?, find(Axis::Alpha)?, find(Axis::C)?);
    let labeled = labeled as f64;
    let kmaxes: Vec<usize> = match ks {
        None => vec![base.k_max],
        Some(s) => s
            .values(0.0, labeled)?
            .into_iter()
            .map(|v| {
                if v >= 1.0 && v.fract() == 0.0 {
                    Ok(v as usize)
                } else {
                    Err(format!("grid axis kmax: {v} is not a positive integer"))
                }
            })
            .collect::<Result<_, _>>()?,
    };
    let mut out = Vec::new();
    for &k in &kmaxes {
        let alphas = match als {
            None => vec![base.alpha],
            Some(s) => s.values(k as f64, labeled)?,
        };
        let penalties = match cs {
            None => vec![base.c],
            Some(s) => s.values(k as f64, labeled)?,
        };
        for &alpha in &alphas {
            for &c in &penalties {
                out.push(Point { k_max: k, alpha, c });
            }
        }
    }
    if out.is_empty() {
        return Err("the grid is empty".into());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: Point = Point {
        k_max: 30,
        alpha: 100.0,
        c: 0.5,
    };

    fn grid(specs: &[&str], labeled: usize) -> Result<Vec<Point>, String> {
        let axes: Vec<AxisSpec> = specs
            .iter()
            .map(|s| AxisSpec::parse(s))
            .collect::<Result<_, _>>()?;
        expand(&axes, BASE, labeled)
    }

    #[test]
    fn penalty_range_has_eleven_values() {
        let g = grid(&["c=0:0.5:5"], 6).unwrap();
        let cs: Vec<f64> = g.iter().map(|p| p.c).collect();
        assert_eq!(cs.len(), 11);
        assert_eq!(cs[0], 0.0);
        assert_eq!(cs[10], 5.0);
        assert!(g.iter().all(|p| p.k_max == 30 && p.alpha == 100.0));
    }

    #[test]
    fn alpha_scales_with_kmax() {
        let g = grid(&["kmax=labeled:10:labeled+10", "alpha=3kmax:10:4kmax"], 6).unwrap();
        let pairs: Vec<(usize, f64)> = g.iter().map(|p| (p.k_max, p.alpha)).collect();
        assert_eq!(pairs, vec![(6, 18.0), (16, 48.0), (16, 58.0)]);
    }

    #[test]
    fn lists_and_exponents() {
        let g = grid(&["c=1e-3,2.5e+0", "alpha=2*kmax"], 0).unwrap();
        assert_eq!(g.iter().map(|p| p.c).collect::<Vec<_>>(), vec![1e-3, 2.5]);
        assert!(g.iter().all(|p| p.alpha == 60.0));
    }

    #[test]
    fn empty_or_malformed_grids_fail() {
        assert!(grid(&["c=5:1:0"], 6).unwrap_err().contains("empty"));
        assert!(grid(&["c="], 6).is_err());
        assert!(grid(&["c=0:0:1"], 6).is_err());
        assert!(grid(&["beta=1"], 6).is_err());
        assert!(grid(&["kmax=2kmax"], 6).is_err());
        assert!(grid(&["kmax=2.5"], 6).is_err());
        assert!(grid(&["c=1", "c=2"], 6).is_err());
        assert!(grid(&["c=1:2"], 6).is_err());
    }

    #[test]
    fn no_axes_is_the_base_point() {
        assert_eq!(grid(&[], 6).unwrap(), vec![BASE]);
    }
}
