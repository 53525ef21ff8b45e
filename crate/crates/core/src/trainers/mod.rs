//! Offline policy learning from logged transitions: behaviour cloning and
//! implicit Q-learning.

pub mod bc;
pub mod bundle;
pub mod iql;

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub use bc::{train_bc, BcConfig};
pub use bundle::{AgentBundle, AgentKind};
pub use iql::{train_iql, train_iql_with, IqlConfig, IqlTrainer};

/// Asymmetric squared loss `|tau - 1(u < 0)| u^2`.
pub fn expectile_loss(u: f64, tau: f64) -> f64 {
    expectile_weight(u, tau) * u * u
}

/// Derivative of [`expectile_loss`] with respect to `u`.
pub fn expectile_grad(u: f64, tau: f64) -> f64 {
    2.0 * expectile_weight(u, tau) * u
}

fn expectile_weight(u: f64, tau: f64) -> f64 {
    if u < 0.0 {
        1.0 - tau
    } else {
        tau
    }
}

/// Per-epoch loss table.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl TrainHistory {
    pub fn new(columns: &[&str]) -> Self {
        Self { columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["epoch".to_string()];
        header.extend(self.columns.iter().cloned());
        w.write_record(&header)?;
        for (epoch, row) in self.rows.iter().enumerate() {
            let mut rec = vec![epoch.to_string()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(Path::new("<history>"), e))?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f))
    }
}

pub(crate) fn check_finite(epoch: usize, what: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Diverged { epoch, what: format!("{what} = {v}") })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expectile_examples() {
        assert!((expectile_loss(1.0, 0.9) - 0.9).abs() < 1e-15);
        assert!((expectile_loss(-1.0, 0.9) - 0.1).abs() < 1e-15);
        for u in [-3.0, -0.5, 0.0, 0.25, 2.0] {
            assert_eq!(expectile_loss(u, 0.5), 0.5 * u * u);
            assert!(expectile_loss(u, 0.9) >= 0.0);
        }
    }

    #[test]
    fn expectile_grad_matches_fd() {
        for u in [-2.0, -0.3, 0.4, 1.7] {
            let h = 1e-6;
            let fd = (expectile_loss(u + h, 0.8) - expectile_loss(u - h, 0.8)) / (2.0 * h);
            assert!((expectile_grad(u, 0.8) - fd).abs() < 1e-6);
        }
    }

    #[test]
    fn history_csv_layout() {
        let mut h = TrainHistory::new(&["a", "b"]);
        h.push(vec![1.0, 2.5]);
        h.push(vec![0.5, 2.0]);
        let mut buf = Vec::new();
        h.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "epoch,a,b\n0,1,2.5\n1,0.5,2\n");
        assert_eq!(h.column("b"), Some(vec![2.5, 2.0]));
    }
}

#[cfg(test)]
mod training_tests;
