use std::str::FromStr;

use serde_json::json;

use super::cache::StageCache;
use super::config::{ExperimentConfig, RelabelStrategy};
use super::pipeline::clusterfit_run_cached;
use super::results::ResultsTable;
use crate::error::{Error, Result, StageExt};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    K,
    P,
    M,
    Capacity,
    Strategy,
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "k" => Ok(Self::K),
            "p" => Ok(Self::P),
            "m" => Ok(Self::M),
            "capacity" => Ok(Self::Capacity),
            "strategy" => Ok(Self::Strategy),
            _ => Err(Error::Config(format!(
                "unknown sweep axis {s:?} (K | p | m | capacity | strategy)"
            ))),
        }
    }
}

impl SweepAxis {
    /// Returns `cfg` with this axis set to `value`.
    pub fn apply(self, cfg: &ExperimentConfig, value: &str) -> Result<ExperimentConfig> {
        let bad = |what: &str| Error::Config(format!("sweep value {value:?} is not {what}"));
        let mut out = cfg.clone();
        match self {
            SweepAxis::K => out.clusterfit.kmeans.k = value.parse().map_err(|_| bad("a count"))?,
            SweepAxis::P => out.pretrain.noise_p = value.parse().map_err(|_| bad("a rate"))?,
            SweepAxis::M => out.pretrain.top_m = Some(value.parse().map_err(|_| bad("a count"))?),
            SweepAxis::Capacity => {
                out.pretrain.capacity = value.parse().map_err(|_| bad("a factor"))?
            }
            SweepAxis::Strategy => out.clusterfit.strategy = RelabelStrategy::from_str(value)?,
        }
        out.validate()?;
        Ok(out)
    }
}

/// Parses `"0..4"` (inclusive), `"3"` or `"1,5,9"`.
pub fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    let bad = || Error::Config(format!("cannot parse seed list {s:?}"));
    if let Some((a, b)) = s.split_once("..") {
        let b = b.strip_prefix('=').unwrap_or(b);
        let (a, b): (u64, u64) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
        if a > b {
            return Err(bad());
        }
        return Ok((a..=b).collect());
    }
    s.split(',').map(|v| v.trim().parse().map_err(|_| bad())).collect()
}

/// Runs the pipeline at every (value, seed) pair, sharing one stage cache.
///
/// Points run one after another; the stages inside each point use the
/// thread pool. Rows are ordered by value, then seed.
pub fn sweep(
    cfg: &ExperimentConfig,
    axis: SweepAxis,
    values: &[String],
    seeds: &[u64],
) -> Result<ResultsTable> {
    sweep_cached(cfg, axis, values, seeds, &StageCache::new())
}

pub fn sweep_cached(
    cfg: &ExperimentConfig,
    axis: SweepAxis,
    values: &[String],
    seeds: &[u64],
    cache: &StageCache,
) -> Result<ResultsTable> {
    if values.is_empty() || seeds.is_empty() {
        return Err(Error::Config("sweep needs at least one value and one seed".into()));
    }
    let points: Vec<ExperimentConfig> = values
        .iter()
        .map(|v| axis.apply(cfg, v))
        .collect::<Result<_>>()
        .stage("config")?;
    let mut table = ResultsTable {
        rows: vec![],
        config: Some(json!({
            "base": serde_json::to_value(cfg)?,
            "axis": axis,
            "values": values,
            "seeds": seeds,
        })),
    };
    let mut outcome = Ok(());
    'points: for point in &points {
        for &seed in seeds {
            let run_cfg = ExperimentConfig {
                seed,
                output: None,
                ..point.clone()
            };
            match clusterfit_run_cached(&run_cfg, cache) {
                Ok(t) => table.rows.extend(t.rows),
                Err(e) => {
                    outcome = Err(e);
                    break 'points;
                }
            }
        }
    }
    if let Some(path) = &cfg.output {
        table.write_csv(path).stage("output")?;
    }
    outcome.map(|()| table)
}
