//! Finite-horizon estimators and the per-run metrics record.

use std::io::Write;

use serde::Serialize;
use thiserror::Error;

use crate::factorybot::GridError;
use crate::mdp::Edge;
use crate::shield::ShieldError;
use crate::sim::RunError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("empty trace")]
    EmptyTrace,
    #[error("enumeration too large ({0:.3e} histories)")]
    TooLarge(f64),
    #[error("precondition violated: {0}")]
    PreconditionViolation(String),
    #[error(transparent)]
    Run(#[from] RunError),
    #[error(transparent)]
    Shield(#[from] ShieldError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Share of trace positions whose state lies in `target`.
pub fn buchi_frequency(states: &[usize], target: &[bool]) -> Result<f64, EvalError> {
    if states.is_empty() {
        return Err(EvalError::EmptyTrace);
    }
    let hits = states.iter().filter(|&&q| target[q]).count();
    Ok(hits as f64 / states.len() as f64)
}

/// Mean of `reward[q][a]` over the trace.
pub fn average_reward(trace: &[Edge], reward: &[Vec<f64>]) -> Result<f64, EvalError> {
    if trace.is_empty() {
        return Err(EvalError::EmptyTrace);
    }
    let total: f64 = trace.iter().map(|e| reward[e.state][e.action]).sum();
    Ok(total / trace.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Stars,
    Naive,
}

/// One run of one instance. For baseline runs `gamma` holds the mixing
/// weight. Only the first eleven fields go to CSV.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRecord {
    pub instance_id: String,
    pub category: String,
    pub size: usize,
    pub gamma: f64,
    pub theta: f64,
    pub steps: u64,
    pub seed: u64,
    pub buchi_freq: f64,
    pub avg_reward: f64,
    pub max_avg_reward: f64,
    pub reward_gap: f64,
    #[serde(skip)]
    pub method: Method,
    #[serde(skip)]
    pub unsafe_samples: u64,
    #[serde(skip)]
    pub colive_violations: u64,
    #[serde(skip)]
    pub live_violations: u64,
}

pub const CSV_HEADER: &str =
    "instance_id,category,size,gamma,theta,steps,seed,buchi_freq,avg_reward,max_avg_reward,reward_gap";

pub fn write_csv<W: Write>(records: &[MetricsRecord], out: W) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if records.is_empty() {
        w.write_record(CSV_HEADER.split(','))?;
    }
    for r in records {
        w.serialize(r)?;
    }
    w.flush()
}

pub fn csv_string(records: &[MetricsRecord]) -> String {
    let mut buf = Vec::new();
    write_csv(records, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("csv is utf-8")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frequency_examples() {
        let t = [true, false];
        assert_eq!(buchi_frequency(&[0, 0, 0], &t).unwrap(), 1.0);
        assert_eq!(buchi_frequency(&[1, 1], &t).unwrap(), 0.0);
        assert_eq!(buchi_frequency(&[0, 1, 0, 1], &t).unwrap(), 0.5);
        assert_eq!(buchi_frequency(&[], &t), Err(EvalError::EmptyTrace));
    }

    #[test]
    fn reward_examples() {
        let r = vec![vec![1.0, 0.0]];
        let ones = [Edge::new(0, 0); 4];
        let zeros = [Edge::new(0, 1); 4];
        let half = [Edge::new(0, 0), Edge::new(0, 1)];
        assert_eq!(average_reward(&ones, &r).unwrap(), 1.0);
        assert_eq!(average_reward(&zeros, &r).unwrap(), 0.0);
        assert_eq!(average_reward(&half, &r).unwrap(), 0.5);
        assert_eq!(average_reward(&[], &r), Err(EvalError::EmptyTrace));
    }

    #[test]
    fn csv_header_and_rows() {
        assert_eq!(csv_string(&[]).trim_end(), CSV_HEADER);
        let rec = MetricsRecord {
            instance_id: "far-000".into(),
            category: "far".into(),
            size: 7,
            gamma: 0.5,
            theta: 0.005,
            steps: 10,
            seed: 1,
            buchi_freq: 0.25,
            avg_reward: 0.5,
            max_avg_reward: 1.0,
            reward_gap: 0.5,
            method: Method::Stars,
            unsafe_samples: 0,
            colive_violations: 0,
            live_violations: 0,
        };
        let s = csv_string(&[rec]);
        let mut lines = s.lines();
        assert_eq!(lines.next().unwrap(), CSV_HEADER);
        assert_eq!(lines.next().unwrap(), "far-000,far,7,0.5,0.005,10,1,0.25,0.5,1.0,0.5");
    }
}
