use serde::{Deserialize, Serialize};

use crate::error::{EngageError, Result};

/// Tail widths reported in CVaR tables.
pub const CVAR_TAILS: [f64; 4] = [0.5, 0.25, 0.1, 0.05];

/// Pointwise ratio of a cumulative regret curve to a baseline curve.
///
/// Fails when the baseline's final value is not positive; intermediate points
/// with a nonpositive baseline are `NaN`.
pub fn normalize(cumulative: &[f64], baseline: &[f64]) -> Result<Vec<f64>> {
    if cumulative.len() != baseline.len() {
        return Err(EngageError::DimensionMismatch {
            expected: baseline.len(),
            got: cumulative.len(),
        });
    }
    let last = *baseline.last().ok_or(EngageError::EmptyInput("baseline"))?;
    if !(last > 0.0) {
        return Err(EngageError::UndefinedNormalizer(last));
    }
    Ok(cumulative
        .iter()
        .zip(baseline)
        .map(|(c, b)| if *b > 0.0 { c / b } else { f64::NAN })
        .collect())
}

/// Mean of the `⌈tail·n⌉` largest values.
pub fn empirical_cvar(values: &[f64], tail: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(EngageError::EmptyInput("cvar values"));
    }
    if !(tail > 0.0 && tail <= 1.0) {
        return Err(EngageError::param("tail", format!("{tail} outside (0, 1]")));
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| b.total_cmp(a));
    let raw = tail * v.len() as f64;
    // r·n within rounding of an integer counts as that integer
    let k = if (raw - raw.round()).abs() <= 1e-9 { raw.round() } else { raw.ceil() } as usize;
    let k = k.clamp(1, v.len());
    Ok(v[..k].iter().sum::<f64>() / k as f64)
}

/// Right-continuous empirical CDF as `(value, fraction ≤ value)` pairs.
pub fn ecdf(values: &[f64]) -> Result<Vec<(f64, f64)>> {
    if values.is_empty() {
        return Err(EngageError::EmptyInput("ecdf values"));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (i, x) in v.iter().enumerate() {
        let frac = (i + 1) as f64 / n;
        match out.last_mut() {
            Some(last) if last.0 == *x => last.1 = frac,
            _ => out.push((*x, frac)),
        }
    }
    Ok(out)
}

/// Linear-interpolation quantile of sorted data (`q ∈ [0, 1]`).
pub fn quantile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(EngageError::EmptyInput("quantile values"));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Ok(v[lo] + (pos - lo as f64) * (v[hi] - v[lo]))
}

pub fn median(values: &[f64]) -> Result<f64> {
    quantile(values, 0.5)
}

pub fn mean(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(EngageError::EmptyInput("mean values"));
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(EngageError::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(EngageError::EmptyInput("slope needs two points"));
    }
    if x.iter().chain(y).any(|v| !(*v > 0.0)) {
        return Err(EngageError::Numerical("log-log fit needs positive data".into()));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let mx = lx.iter().sum::<f64>() / lx.len() as f64;
    let my = ly.iter().sum::<f64>() / ly.len() as f64;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    if sxx == 0.0 {
        return Err(EngageError::Numerical("all x values coincide".into()));
    }
    Ok(sxy / sxx)
}

/// One row of a CVaR table: spread across ablation cells of one algorithm's
/// CVaR at one tail width.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvarRow {
    pub algorithm: String,
    pub tail: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CvarTable {
    pub rows: Vec<CvarRow>,
}

impl CvarTable {
    pub fn get(&self, algorithm: &str, tail: f64) -> Option<&CvarRow> {
        self.rows.iter().find(|r| r.algorithm == algorithm && r.tail == tail)
    }

    /// Whether every algorithm's median CVaR is nondecreasing as the tail narrows.
    pub fn is_monotone(&self) -> bool {
        let mut algs: Vec<&str> = self.rows.iter().map(|r| r.algorithm.as_str()).collect();
        algs.dedup();
        algs.iter().all(|a| {
            let mut rows: Vec<&CvarRow> = self.rows.iter().filter(|r| r.algorithm == *a).collect();
            rows.sort_by(|x, y| y.tail.total_cmp(&x.tail));
            rows.windows(2).all(|w| w[1].median >= w[0].median - 1e-12)
        })
    }
}

/// Builds the table from per-cell value lists: `cells[c]` holds, for each
/// algorithm in `algorithms` order, the per-patient outcomes of cell `c`.
pub fn cvar_table(algorithms: &[String], cells: &[Vec<Vec<f64>>]) -> Result<CvarTable> {
    let mut rows = Vec::new();
    for (a, name) in algorithms.iter().enumerate() {
        for tail in CVAR_TAILS {
            let per_cell: Vec<f64> = cells
                .iter()
                .filter(|c| !c[a].is_empty())
                .map(|c| empirical_cvar(&c[a], tail))
                .collect::<Result<_>>()?;
            if per_cell.is_empty() {
                continue;
            }
            rows.push(CvarRow {
                algorithm: name.clone(),
                tail,
                median: median(&per_cell)?,
                q1: quantile(&per_cell, 0.25)?,
                q3: quantile(&per_cell, 0.75)?,
            });
        }
    }
    Ok(CvarTable { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn cvar_examples() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(empirical_cvar(&v, 0.5).unwrap(), 3.5);
        assert_eq!(empirical_cvar(&v, 0.25).unwrap(), 4.0);
        assert_eq!(empirical_cvar(&v, 1.0).unwrap(), 2.5);
        assert_eq!(empirical_cvar(&v, 0.3).unwrap(), 3.5);
        assert_eq!(empirical_cvar(&v, 0.01).unwrap(), 4.0);
        assert!(empirical_cvar(&[], 0.5).is_err());
        assert!(empirical_cvar(&v, 0.0).is_err());
        // 0.1·20 is 2 even though the float product is slightly above
        let twenty: Vec<f64> = (1..=20).map(f64::from).collect();
        assert_eq!(empirical_cvar(&twenty, 0.1).unwrap(), 19.5);
    }

    #[test]
    fn ecdf_examples() {
        assert_eq!(ecdf(&[5.0]).unwrap(), vec![(5.0, 1.0)]);
        let e = ecdf(&[1.0, 2.0, 1.0]).unwrap();
        assert_eq!(e.len(), 2);
        assert_eq!(e[0].0, 1.0);
        assert_abs_diff_eq!(e[0].1, 2.0 / 3.0, epsilon = 1e-15);
        assert_eq!(e[1], (2.0, 1.0));
        assert!(ecdf(&[]).is_err());
    }

    #[test]
    fn normalize_examples() {
        let base = [1.0, 2.0, 4.0];
        assert_eq!(normalize(&[0.0; 3], &base).unwrap(), vec![0.0; 3]);
        assert_eq!(normalize(&base, &base).unwrap(), vec![1.0; 3]);
        let doubled: Vec<f64> = base.iter().map(|b| 2.0 * b).collect();
        let series = [0.5, 0.7, 1.1];
        let scaled: Vec<f64> = series.iter().map(|s| 2.0 * s).collect();
        assert_eq!(normalize(&series, &base).unwrap(), normalize(&scaled, &doubled).unwrap());
        assert!(matches!(
            normalize(&[1.0], &[0.0]),
            Err(EngageError::UndefinedNormalizer(_))
        ));
        assert!(normalize(&[1.0, 1.0], &[0.0, 1.0]).unwrap()[0].is_nan());
    }

    #[test]
    fn quantiles_and_slope() {
        let v = [4.0, 1.0, 3.0, 2.0];
        assert_eq!(median(&v).unwrap(), 2.5);
        assert_eq!(quantile(&v, 0.25).unwrap(), 1.75);
        assert_eq!(quantile(&v, 1.0).unwrap(), 4.0);
        let x = [1.0, 10.0, 100.0];
        let y: Vec<f64> = x.iter().map(|t: &f64| 3.0 * t.powf(-0.5)).collect();
        assert_abs_diff_eq!(loglog_slope(&x, &y).unwrap(), -0.5, epsilon = 1e-12);
    }

    #[test]
    fn cvar_table_is_monotone() {
        let algs = vec!["A".to_string(), "B".to_string()];
        let cells = vec![
            vec![vec![0.1, 0.5, 0.2, 0.9], vec![1.0, 1.1, 0.9, 1.3]],
            vec![vec![0.3, 0.2, 0.2, 0.4], vec![1.0, 0.8, 1.2, 1.05]],
            vec![vec![0.0, 0.1, 0.6, 0.2], vec![]],
        ];
        let t = cvar_table(&algs, &cells).unwrap();
        assert_eq!(t.rows.len(), 8);
        assert!(t.is_monotone());
        assert!(t.get("A", 0.5).unwrap().median <= t.get("A", 0.05).unwrap().median);
    }
}
