use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::metrics::{metric, MetricKind};
use super::train::{series_predictions, train, History, Segment, SeriesSplits, TrainData};
use crate::cells::network::{parameter_count, HeadSpec, LayerSpec, NetworkParams, NetworkSpec};
use crate::error::{Error, Result};
use crate::parallel;

/// Validation losses closer than this count as a tie.
pub const TIE_TOLERANCE: f64 = 1e-6;

/// Search space expanded in the order layers → p → q → units. One layer
/// gives the shallow network, two the deep one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub layers: Vec<usize>,
    pub p: Vec<usize>,
    pub q: Vec<usize>,
    pub units: Vec<usize>,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            layers: vec![1, 2],
            p: (1..=4).collect(),
            q: (1..=4).collect(),
            units: (1..=5).collect(),
        }
    }
}

impl GridSpec {
    pub fn expand(&self, input_dim: usize) -> Result<Vec<NetworkSpec>> {
        if self.layers.is_empty() || self.p.is_empty() || self.q.is_empty() || self.units.is_empty()
        {
            return Err(Error::invalid("grid has an empty axis"));
        }
        let mut out = Vec::new();
        for &l in &self.layers {
            for &p in &self.p {
                for &q in &self.q {
                    for &u in &self.units {
                        let spec = match l {
                            1 => NetworkSpec::shallow(input_dim, p, q, u),
                            2 => NetworkSpec::deep(input_dim, p, q, u),
                            _ => {
                                return Err(Error::invalid(format!(
                                    "grid layers must be 1 or 2, got {l}"
                                )))
                            }
                        };
                        spec.validate()?;
                        out.push(spec);
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Short human-readable form, e.g. `arma(2,1)x3+dense`.
pub fn describe(spec: &NetworkSpec) -> String {
    let layers: Vec<String> = spec
        .layers
        .iter()
        .map(|l| match l {
            LayerSpec::Arma(s) => format!("arma({},{})x{}", s.p, s.q, s.units),
            LayerSpec::Conv(s) => format!("conv({},{})x{}", s.p, s.q, s.filters),
        })
        .collect();
    let head = match spec.head {
        HeadSpec::Identity => "",
        HeadSpec::Dense { .. } => "+dense",
        HeadSpec::Conv1x1 { .. } => "+conv1x1",
    };
    format!("{}{head}", layers.join("-"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeaderboardEntry {
    /// Position in the expanded grid.
    pub index: usize,
    pub model: String,
    pub parameters: usize,
    pub val_loss: Option<f64>,
    pub val_rmse: Option<f64>,
    pub test_rmse: Option<f64>,
    pub test_mae: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug)]
pub struct GridResult {
    pub best: usize,
    pub spec: NetworkSpec,
    pub params: NetworkParams,
    pub history: History,
    /// Sorted by validation loss, failed points last.
    pub leaderboard: Vec<LeaderboardEntry>,
}

struct PointResult {
    params: NetworkParams,
    history: History,
    val_rmse: f64,
    test_rmse: f64,
    test_mae: f64,
}

fn run_point(spec: &NetworkSpec, data: &SeriesSplits, cfg: &TrainConfig) -> Result<PointResult> {
    let trained = train(spec, &TrainData::Series(data), cfg)?;
    let (vp, vy) = series_predictions(spec, &trained.params, data, Segment::Val)?;
    let (tp, ty) = series_predictions(spec, &trained.params, data, Segment::Test)?;
    Ok(PointResult {
        val_rmse: metric(MetricKind::Rmse, &vp, &vy)?,
        test_rmse: metric(MetricKind::Rmse, &tp, &ty)?,
        test_mae: metric(MetricKind::Mae, &tp, &ty)?,
        params: trained.params,
        history: trained.history,
    })
}

/// Index of the winning point among those that trained (`Some` loss).
pub fn select_best(val_losses: &[Option<f64>], parameter_counts: &[usize]) -> Option<usize> {
    let best_loss = val_losses
        .iter()
        .flatten()
        .fold(f64::INFINITY, |a, &b| a.min(b));
    (0..val_losses.len())
        .filter(|&i| matches!(val_losses[i], Some(l) if l <= best_loss + TIE_TOLERANCE))
        .min_by_key(|&i| (parameter_counts[i], i))
}

/// Trains every point in parallel and keeps the lowest validation loss.
/// Losses within [`TIE_TOLERANCE`] of the minimum tie; ties go to fewer
/// parameters, then to the earlier grid position.
pub fn grid_search(
    points: &[NetworkSpec],
    data: &SeriesSplits,
    cfg: &TrainConfig,
) -> Result<GridResult> {
    if points.is_empty() {
        return Err(Error::invalid("empty grid"));
    }
    let counts = points
        .iter()
        .map(parameter_count)
        .collect::<Result<Vec<_>>>()?;
    let results = parallel::map(points, |spec| run_point(spec, data, cfg));
    let losses: Vec<Option<f64>> = results
        .iter()
        .map(|r| r.as_ref().ok().map(|p| p.history.best_val_loss))
        .collect();
    let best = select_best(&losses, &counts);
    let Some(best) = best else {
        let reasons: Vec<String> = results
            .iter()
            .enumerate()
            .filter_map(|(i, r)| {
                r.as_ref()
                    .err()
                    .map(|e| format!("{}: {e}", describe(&points[i])))
            })
            .collect();
        return Err(Error::AllFailed {
            attempts: points.len(),
            reasons: reasons.join("; "),
        });
    };
    let mut leaderboard: Vec<LeaderboardEntry> = results
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut e = LeaderboardEntry {
                index: i,
                model: describe(&points[i]),
                parameters: counts[i],
                val_loss: None,
                val_rmse: None,
                test_rmse: None,
                test_mae: None,
                error: None,
            };
            match r {
                Ok(p) => {
                    e.val_loss = Some(p.history.best_val_loss);
                    e.val_rmse = Some(p.val_rmse);
                    e.test_rmse = Some(p.test_rmse);
                    e.test_mae = Some(p.test_mae);
                }
                Err(err) => e.error = Some(err.to_string()),
            }
            e
        })
        .collect();
    leaderboard.sort_by(|a, b| {
        let key = |e: &LeaderboardEntry| e.val_loss.unwrap_or(f64::INFINITY);
        key(a)
            .total_cmp(&key(b))
            .then(a.parameters.cmp(&b.parameters))
            .then(a.index.cmp(&b.index))
    });
    let winner = results
        .into_iter()
        .nth(best)
        .expect("index in range")
        .expect("best succeeded");
    Ok(GridResult {
        best,
        spec: points[best].clone(),
        params: winner.params,
        history: winner.history,
        leaderboard,
    })
}
