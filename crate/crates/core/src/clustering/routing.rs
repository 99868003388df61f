use super::refit::RoutedModels;
use crate::error::{Error, Result};
use crate::losses::{self, LossKind};
use crate::metrics::mean_defined;
use crate::model::{forward, Forecast, Params, Workspace};
use crate::scalar::Real;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "model", content = "cluster")]
pub enum RoutedModel {
    Global,
    Prototype(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteDecision {
    pub model: RoutedModel,
    pub global_loss: f64,
    /// One-step loss per cluster; `None` for flagged clusters.
    pub prototype_losses: Vec<Option<f64>>,
}

fn segment_loss<T: Real>(params: &Params<T>, segment: &[T], kind: LossKind, delta: f64) -> Result<f64> {
    let p = params.shape().input;
    let w = params.shape().window;
    let len = segment.len() / p;
    let mut ws = Workspace::new(params, w);
    let levels: Vec<T> = params.shape().levels.iter().map(|&q| T::lit(q)).collect();
    let losses = (w - 1..len - 1).map(|t| -> Result<T> {
        let f = forward(params, &segment[(t + 1 - w) * p..(t + 1) * p], &mut ws)?;
        let y = &segment[(t + 1) * p..(t + 2) * p];
        Ok(match (kind, &f) {
            (LossKind::Pinball, Forecast::Quantiles(q)) => losses::pinball_multi(&q.values, y, &levels),
            (LossKind::Pinball, Forecast::Point(_)) => {
                return Err(Error::InvalidConfig("pinball routing needs quantile mode".into()))
            }
            (LossKind::Huber, _) => losses::huber(f.center(), y, T::lit(delta)),
            (LossKind::Mse, _) => losses::squared_error(f.center(), y),
        })
    });
    let v: Vec<T> = losses.collect::<Result<_>>()?;
    Ok(mean_defined(v.into_iter().map(Some)).expect("segment has windows").as_f64())
}

/// Routes a new series by its initial segment (row-major `len x P`, already
/// standardized): the unflagged prototype with the lowest one-step loss wins
/// only if it strictly beats GLOBAL.
pub fn assign_new_series<T: Real>(
    segment: &[T],
    models: &RoutedModels<T>,
    kind: LossKind,
    delta: f64,
) -> Result<RouteDecision> {
    let shape = models.global.shape();
    let p = shape.input;
    if !segment.len().is_multiple_of(p) {
        return Err(Error::DimensionMismatch(format!("segment length {} is not a multiple of P={p}", segment.len())));
    }
    let len = segment.len() / p;
    if len < shape.window + 1 {
        return Err(Error::InvalidData(format!(
            "segment has {len} steps, needs at least w + 1 = {}",
            shape.window + 1
        )));
    }
    if segment.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidData("segment contains missing or non-finite values".into()));
    }
    let global_loss = segment_loss(&models.global, segment, kind, delta)?;
    let prototype_losses = models
        .prototypes
        .iter()
        .enumerate()
        .map(|(c, m)| match m {
            Some(m) if !models.flags.flagged[c] => segment_loss(m, segment, kind, delta).map(Some),
            _ => Ok(None),
        })
        .collect::<Result<Vec<_>>>()?;
    let mut model = RoutedModel::Global;
    let mut best = global_loss;
    for (c, l) in prototype_losses.iter().enumerate() {
        if let Some(l) = *l {
            if l < best {
                best = l;
                model = RoutedModel::Prototype(c);
            }
        }
    }
    Ok(RouteDecision { model, global_loss, prototype_losses })
}
