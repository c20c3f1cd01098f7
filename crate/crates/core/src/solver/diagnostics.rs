use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Convergence measurements of one iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    /// One-based iteration number.
    pub iteration: usize,
    /// `||P_obs[L + S - Y]||_F / ||P_obs[Y]||_F`.
    pub feasibility: f64,
    /// `||L_new - L_old||_F / max(1, ||L_old||_F)`.
    pub low_rank_change: f64,
    /// `max_n ||Lx^n - L||_F / max(1, ||L||_F)`.
    pub nuclear_consensus: f64,
    /// `||S - W||_F / max(1, ||S||_F)`; zero when the smoothness term is off.
    pub sparse_consensus: f64,
    pub objective: Option<f64>,
    pub wall_ms: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub records: Vec<IterationRecord>,
    pub converged: bool,
}

impl Diagnostics {
    pub fn iterations(&self) -> usize {
        self.records.len()
    }

    pub fn last(&self) -> Option<&IterationRecord> {
        self.records.last()
    }

    pub fn total_ms(&self) -> f64 {
        self.records.iter().map(|r| r.wall_ms).sum()
    }

    /// CSV with one row per iteration.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "iteration",
            "feasibility",
            "low_rank_change",
            "nuclear_consensus",
            "sparse_consensus",
            "objective",
            "wall_ms",
        ])?;
        for r in &self.records {
            out.write_record([
                r.iteration.to_string(),
                format!("{:e}", r.feasibility),
                format!("{:e}", r.low_rank_change),
                format!("{:e}", r.nuclear_consensus),
                format!("{:e}", r.sparse_consensus),
                r.objective.map(|o| format!("{o:e}")).unwrap_or_default(),
                format!("{:.3}", r.wall_ms),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_has_header_and_rows() {
        let d = Diagnostics {
            records: vec![IterationRecord {
                iteration: 1,
                feasibility: 0.5,
                low_rank_change: 1.0,
                nuclear_consensus: 0.0,
                sparse_consensus: 0.0,
                objective: None,
                wall_ms: 1.25,
            }],
            converged: false,
        };
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[0].starts_with("iteration,feasibility"));
        assert_eq!(lines[1], "1,5e-1,1e0,0e0,0e0,,1.250");
    }
}
