//! Stationarity transformations applied to raw indicator series before fitting.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transform {
    None,
    /// First difference.
    Diff,
    /// First difference of the natural log.
    LogDiff,
    /// Second difference of the natural log.
    LogDiff2,
}

impl Transform {
    /// Number of leading observations consumed.
    pub fn lag(self) -> usize {
        match self {
            Transform::None => 0,
            Transform::Diff | Transform::LogDiff => 1,
            Transform::LogDiff2 => 2,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "none" | "level" => Ok(Transform::None),
            "diff" | "d" => Ok(Transform::Diff),
            "logdiff" | "dln" => Ok(Transform::LogDiff),
            "logdiff2" | "d2ln" => Ok(Transform::LogDiff2),
            other => Err(Error::arg(format!("unknown transform `{other}`"))),
        }
    }

    pub fn apply(self, x: &[f64]) -> Result<Vec<f64>> {
        match self {
            Transform::None => Ok(x.to_vec()),
            Transform::Diff => Ok(diff(x)),
            Transform::LogDiff => log_diff(x),
            Transform::LogDiff2 => log_diff2(x),
        }
    }
}

pub fn diff(x: &[f64]) -> Vec<f64> {
    x.windows(2).map(|w| w[1] - w[0]).collect()
}

fn ln_all(x: &[f64]) -> Result<Vec<f64>> {
    x.iter()
        .enumerate()
        .map(|(k, &v)| {
            if v > 0.0 {
                Ok(v.ln())
            } else {
                Err(Error::arg(format!("log transform needs positive values, got {v} at position {k}")))
            }
        })
        .collect()
}

pub fn log_diff(x: &[f64]) -> Result<Vec<f64>> {
    Ok(diff(&ln_all(x)?))
}

pub fn log_diff2(x: &[f64]) -> Result<Vec<f64>> {
    Ok(diff(&diff(&ln_all(x)?)))
}

/// Applies one transform per series and trims every output to the shortest length,
/// dropping observations from the front so all series end at the same date.
pub fn transform_panel(series: &[Vec<f64>], transforms: &[Transform]) -> Result<Vec<Vec<f64>>> {
    if series.len() != transforms.len() {
        return Err(Error::dim(format!(
            "{} series but {} transforms",
            series.len(),
            transforms.len()
        )));
    }
    let out: Vec<Vec<f64>> = series
        .iter()
        .zip(transforms)
        .map(|(s, t)| t.apply(s))
        .collect::<Result<_>>()?;
    let n = out.iter().map(Vec::len).min().unwrap_or(0);
    Ok(out.into_iter().map(|v| v[v.len() - n..].to_vec()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn differences() {
        assert_eq!(diff(&[1.0, 4.0, 9.0, 16.0]), vec![3.0, 5.0, 7.0]);
        assert!(diff(&[2.0]).is_empty());
        assert_eq!(diff(&diff(&[1.0, 4.0, 9.0, 16.0])), vec![2.0, 2.0]);
    }

    #[test]
    fn log_differences_of_geometric_series() {
        let x: Vec<f64> = (0..6).map(|k| 100.0 * 1.05f64.powi(k)).collect();
        for v in log_diff(&x).unwrap() {
            assert!((v - 1.05f64.ln()).abs() < 1e-12);
        }
        for v in log_diff2(&x).unwrap() {
            assert!(v.abs() < 1e-12);
        }
        assert_eq!(log_diff2(&x).unwrap().len(), 4);
        assert!(log_diff(&[1.0, 0.0]).is_err());
    }

    #[test]
    fn panel_alignment() {
        let a = vec![1.0, 2.0, 3.0, 4.0];
        let b = vec![1.0, 2.0, 4.0, 8.0];
        let out = transform_panel(&[a, b], &[Transform::Diff, Transform::LogDiff2]).unwrap();
        assert_eq!(out[0], vec![1.0, 1.0]);
        assert_eq!(out[1].len(), 2);
        assert!(out[1].iter().all(|v| v.abs() < 1e-12));
        assert!(transform_panel(&[vec![1.0]], &[]).is_err());
        assert_eq!(Transform::parse("d2ln").unwrap().lag(), 2);
    }
}
