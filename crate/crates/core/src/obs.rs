//! Observation sets: `(algorithm, hyper-parameters, score)` triples.
//!
//! On disk an observation set is a CSV file with a header row
//! `algorithm,y,x0,x1,...`; rows are flexible-width because every algorithm
//! has its own dimension, and hyper-parameters are stored in raw (unscaled)
//! units so files stay readable.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::space::{HpVector, SearchSpace};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub x: HpVector,
    pub y: f64,
}

impl Observation {
    pub fn new(x: HpVector, y: f64) -> Self {
        Observation { x, y }
    }

    pub fn algo(&self) -> usize {
        self.x.algo
    }
}

pub fn best(obs: &[Observation]) -> Option<&Observation> {
    // First occurrence wins ties so the incumbent only changes on strict improvement.
    obs.iter().fold(None, |acc: Option<&Observation>, o| match acc {
        Some(b) if b.y >= o.y => Some(b),
        _ => Some(o),
    })
}

pub fn for_algo(obs: &[Observation], m: usize) -> Vec<Observation> {
    obs.iter().filter(|o| o.algo() == m).cloned().collect()
}

pub fn counts(obs: &[Observation], num_algorithms: usize) -> Vec<usize> {
    let mut c = vec![0; num_algorithms];
    for o in obs {
        c[o.algo()] += 1;
    }
    c
}

pub fn write_csv(path: &Path, space: &SearchSpace, obs: &[Observation]) -> Result<()> {
    let max_dim = space.dims().into_iter().max().unwrap_or(0);
    let mut w = csv::WriterBuilder::new()
        .flexible(true)
        .from_path(path)
        .map_err(|e| Error::Corrupt(format!("{}: {e}", path.display())))?;
    let mut header = vec!["algorithm".to_string(), "y".to_string()];
    header.extend((0..max_dim).map(|i| format!("x{i}")));
    let io = |e: csv::Error| Error::Corrupt(format!("{}: {e}", path.display()));
    w.write_record(&header).map_err(io)?;
    for o in obs {
        let mut rec = vec![space.algorithms[o.algo()].name.clone(), format!("{:?}", o.y)];
        rec.extend(space.to_raw(&o.x).iter().map(|v| format!("{v:?}")));
        w.write_record(&rec).map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_csv(path: &Path, space: &SearchSpace) -> Result<Vec<Observation>> {
    let mut r = csv::ReaderBuilder::new()
        .flexible(true)
        .from_path(path)
        .map_err(|e| Error::Corrupt(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::Corrupt(format!("{}: {e}", path.display())))?;
        let bad = |what: &str| Error::Corrupt(format!("{} row {}: {what}", path.display(), line + 1));
        let name = rec.get(0).ok_or_else(|| bad("missing algorithm"))?;
        let m = space
            .algorithms
            .iter()
            .position(|a| a.name == name)
            .ok_or_else(|| bad(&format!("unknown algorithm `{name}`")))?;
        let y: f64 = rec
            .get(1)
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| bad("bad score"))?;
        let raw = rec
            .iter()
            .skip(2)
            .filter(|s| !s.trim().is_empty())
            .map(|s| s.trim().parse::<f64>().map_err(|_| bad("bad hyper-parameter value")))
            .collect::<Result<Vec<_>>>()?;
        out.push(Observation::new(space.from_raw(m, &raw)?, y));
    }
    Ok(out)
}
