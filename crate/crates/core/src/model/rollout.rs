//! Recursive multi-step forecasting.

use super::gru::{forward, Workspace};
use super::params::Params;
use super::Forecast;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Forecasts for steps `1..=steps`: each one-step forecast is appended to the
/// window (dropping the oldest row) and fed back. In quantile mode only the
/// median is fed back; the full fan at step `h` is the `h`-step forecast.
pub fn rollout_path<T: Real>(
    params: &Params<T>,
    window: &[T],
    steps: usize,
    ws: &mut Workspace<T>,
) -> Result<Vec<Forecast<T>>> {
    if steps < 1 {
        return Err(Error::InvalidConfig("rollout horizon must be at least 1".into()));
    }
    let p = params.shape().input;
    let mut buf = window.to_vec();
    let mut out = Vec::with_capacity(steps);
    for step in 0..steps {
        let f = forward(params, &buf, ws)?;
        if step + 1 < steps {
            buf.copy_within(p.., 0);
            let n = buf.len();
            buf[n - p..].copy_from_slice(f.center());
        }
        out.push(f);
    }
    Ok(out)
}

/// The `h`-step-ahead forecast.
pub fn rollout<T: Real>(params: &Params<T>, window: &[T], h: usize) -> Result<Forecast<T>> {
    let mut ws = Workspace::new(params, window.len() / params.shape().input.max(1));
    Ok(rollout_path(params, window, h, &mut ws)?.pop().expect("h >= 1"))
}
