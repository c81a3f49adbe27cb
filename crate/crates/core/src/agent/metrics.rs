//! Per-episode metrics CSV.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::AgentError;

pub const METRICS_HEADER: &str =
    "env_step,episode_return,J_O,J_R,KL,actor_objective,critic_loss,plan_time_ms,wall_clock_s";

/// One row per episode. Fields not yet available (model terms before the
/// first train iteration) are NaN.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsRow {
    pub env_step: u64,
    pub episode_return: f64,
    pub j_o: f64,
    pub j_r: f64,
    pub kl: f64,
    pub actor_objective: f64,
    pub critic_loss: f64,
    pub plan_time_ms: f64,
    pub wall_clock_s: f64,
}

impl MetricsRow {
    pub fn values(&self) -> [f64; 8] {
        [
            self.episode_return,
            self.j_o,
            self.j_r,
            self.kl,
            self.actor_objective,
            self.critic_loss,
            self.plan_time_ms,
            self.wall_clock_s,
        ]
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.env_step.to_string();
        for v in self.values() {
            s.push(',');
            s.push_str(&v.to_string());
        }
        s
    }

    pub fn from_csv(line: &str) -> Result<Self, AgentError> {
        let bad = || AgentError::Metrics(format!("malformed row {line:?}"));
        let cols: Vec<&str> = line.trim().split(',').collect();
        if cols.len() != 9 {
            return Err(bad());
        }
        let f: Vec<f64> = cols[1..].iter().map(|c| c.parse().map_err(|_| bad())).collect::<Result<_, _>>()?;
        Ok(Self {
            env_step: cols[0].parse().map_err(|_| bad())?,
            episode_return: f[0],
            j_o: f[1],
            j_r: f[2],
            kl: f[3],
            actor_objective: f[4],
            critic_loss: f[5],
            plan_time_ms: f[6],
            wall_clock_s: f[7],
        })
    }
}

/// Append-only writer; every row is flushed and `env_step` may not decrease.
pub struct MetricsWriter {
    out: BufWriter<File>,
    last_step: Option<u64>,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self, AgentError> {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "{METRICS_HEADER}")?;
        out.flush()?;
        Ok(Self { out, last_step: None })
    }

    pub fn append(&mut self, row: &MetricsRow) -> Result<(), AgentError> {
        if self.last_step.is_some_and(|s| row.env_step < s) {
            return Err(AgentError::Metrics(format!(
                "env_step {} after {}",
                row.env_step,
                self.last_step.unwrap_or_default()
            )));
        }
        writeln!(self.out, "{}", row.to_csv())?;
        self.out.flush()?;
        self.last_step = Some(row.env_step);
        Ok(())
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>, AgentError> {
    let mut lines = BufReader::new(File::open(path)?).lines();
    let header = lines.next().transpose()?;
    if header.as_deref().map(str::trim) != Some(METRICS_HEADER) {
        return Err(AgentError::Metrics(format!("{} lacks the metrics header", path.display())));
    }
    let mut rows = Vec::new();
    for line in lines {
        let line = line?;
        if !line.trim().is_empty() {
            rows.push(MetricsRow::from_csv(&line)?);
        }
    }
    Ok(rows)
}
