//! Performance matrix statistics and parameter accounting.
//!
//! `P[i][j]` is the test MSE on task `j` measured right after training task
//! `i`. Lower is better everywhere, so a negative backward transfer means
//! earlier tasks improved while later ones were learned.

use std::fmt::Write as _;

use crate::algorithm::Family;
use crate::error::{FclError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PerformanceMatrix {
    size: usize,
    values: Vec<f64>,
}

impl PerformanceMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let size = rows.len();
        if size == 0 {
            return Err(FclError::Matrix("empty matrix".into()));
        }
        let mut values = Vec::with_capacity(size * size);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != size {
                return Err(FclError::Matrix(format!("row {i} has {} entries, expected {size}", row.len())));
            }
            values.extend(row);
        }
        Self::check(size, values)
    }

    pub fn from_columns(columns: Vec<Vec<f64>>) -> Result<Self> {
        let rows = (0..columns.len())
            .map(|i| columns.iter().map(|c| c.get(i).copied().unwrap_or(f64::NAN)).collect())
            .collect();
        Self::from_rows(rows)
    }

    fn check(size: usize, values: Vec<f64>) -> Result<Self> {
        if let Some(k) = values.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(FclError::Matrix(format!(
                "entry ({}, {}) = {} is not a finite non-negative error",
                k / size,
                k % size,
                values[k]
            )));
        }
        Ok(Self { size, values })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.size + col]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.size..(i + 1) * self.size]
    }

    /// Unweighted elementwise mean of equally sized matrices.
    pub fn mean(parts: &[PerformanceMatrix]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| FclError::Matrix("no matrices to average".into()))?;
        if parts.iter().any(|p| p.size != first.size) {
            return Err(FclError::Matrix("cannot average matrices of different size".into()));
        }
        let mut values = first.values.clone();
        for p in &parts[1..] {
            for (v, x) in values.iter_mut().zip(&p.values) {
                *v += x;
            }
        }
        let n = parts.len() as f64;
        values.iter_mut().for_each(|v| *v /= n);
        Self::check(first.size, values)
    }

    /// Comma-separated rows, one per line, no header.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for i in 0..self.size {
            let row: Vec<String> = self.row(i).iter().map(|v| format!("{v:?}")).collect();
            let _ = writeln!(out, "{}", row.join(","));
        }
        out
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut rows = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let row = line
                .split(',')
                .map(|f| {
                    f.trim().parse::<f64>().map_err(|e| FclError::Parse {
                        line: n + 1,
                        message: format!("'{f}': {e}"),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        Self::from_rows(rows)
    }
}

/// Mean of the diagonal.
pub fn amse(p: &PerformanceMatrix) -> f64 {
    (0..p.size).map(|i| p.get(i, i)).sum::<f64>() / p.size as f64
}

fn pairs(n: usize) -> Result<f64> {
    if n < 2 {
        return Err(FclError::Matrix(format!("transfer metrics need at least 2 tasks, got {n}")));
    }
    Ok((n * (n - 1)) as f64 / 2.0)
}

/// Mean change of each earlier task's error between when it was learned and
/// every later row.
pub fn bwt(p: &PerformanceMatrix) -> Result<f64> {
    let denom = pairs(p.size)?;
    let mut sum = 0.0;
    for i in 1..p.size {
        for j in 0..i {
            sum += p.get(i, j) - p.get(j, j);
        }
    }
    Ok(sum / denom)
}

/// Mean error on tasks not yet trained (strict upper triangle).
pub fn fwt(p: &PerformanceMatrix) -> Result<f64> {
    let denom = pairs(p.size)?;
    let mut sum = 0.0;
    for i in 0..p.size {
        for j in i + 1..p.size {
            sum += p.get(i, j);
        }
    }
    Ok(sum / denom)
}

/// Stored regularization reals and optimized reals of one method.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamAccount {
    pub static_count: usize,
    pub trainable_count: usize,
}

/// Static/trainable counts for a family with model size `p`, `clients`
/// clients and `tasks` tasks. See [`static_formula`] for the expressions.
pub fn param_account(family: Family, p: usize, clients: usize, tasks: usize) -> ParamAccount {
    use Family::*;
    let peers = clients.saturating_sub(1);
    let static_count = match family {
        Centralized | Stl | LocalSgd | FedAvgSgd => 0,
        // reference parameters only; the curvature is implicit identity
        LocalL2T => tasks * p,
        LocalEwc | FedAvgEwc => 2 * tasks * p,
        LocalOnlineEwc => 2 * p,
        FedProxSgd => p,
        FedProxEwc => 2 * tasks * p + p,
        FedCurv => 2 * peers * p,
        ElasticTransfer => 2 * clients * p + 2 * peers * p,
    };
    let trainable_count = match family {
        Stl => tasks * p,
        _ => p,
    };
    ParamAccount {
        static_count,
        trainable_count,
    }
}

pub fn static_formula(family: Family) -> &'static str {
    use Family::*;
    match family {
        Centralized | Stl | LocalSgd | FedAvgSgd => "0",
        LocalL2T => "T*P",
        LocalEwc | FedAvgEwc => "2*T*P",
        LocalOnlineEwc => "2*P",
        FedProxSgd => "P",
        FedProxEwc => "2*T*P + P",
        FedCurv => "2*(C-1)*P",
        ElasticTransfer => "2*C*P + 2*(C-1)*P",
    }
}
