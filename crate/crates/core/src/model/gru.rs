//! Forward pass and hand-written reverse-mode gradients (backpropagation
//! through time) for the mixture-GRU forecaster.

use super::params::{Layout, Mode, Params};
use super::{Forecast, QuantilePrediction};
use crate::error::{Error, Result};
use crate::losses;
use crate::scalar::Real;
use rayon::prelude::*;

/// Scratch buffers for one window; reused across calls to avoid allocation.
#[derive(Debug, Clone)]
pub struct Workspace<T> {
    w: usize,
    enc: Vec<T>,
    hs: Vec<T>,
    z: Vec<T>,
    rg: Vec<T>,
    n: Vec<T>,
    rh: Vec<T>,
    head: Vec<T>,
    latent: Vec<T>,
    out: Vec<T>,
    // backward scratch
    dh: Vec<T>,
    dh_prev: Vec<T>,
    da: Vec<T>,
    drh: Vec<T>,
    de: Vec<T>,
    dlatent: Vec<T>,
    dhead: Vec<T>,
    dout: Vec<T>,
}

impl<T: Real> Workspace<T> {
    pub fn new<U: Real>(params: &Params<U>, w: usize) -> Self {
        let s = params.shape();
        let (p, r, h) = (s.input, s.latent, s.hidden);
        let q = s.n_levels().max(1);
        let z = || vec![T::zero(); w * h];
        Self {
            w,
            enc: vec![T::zero(); w * r],
            hs: vec![T::zero(); (w + 1) * h],
            z: z(),
            rg: z(),
            n: z(),
            rh: z(),
            head: vec![T::zero(); r * q],
            latent: vec![T::zero(); r * q],
            out: vec![T::zero(); p * q],
            dh: vec![T::zero(); h],
            dh_prev: vec![T::zero(); h],
            da: vec![T::zero(); h],
            drh: vec![T::zero(); h],
            de: vec![T::zero(); r],
            dlatent: vec![T::zero(); r * q],
            dhead: vec![T::zero(); r * q],
            dout: vec![T::zero(); p * q],
        }
    }

    fn ensure(&mut self, params: &Params<T>, w: usize) {
        if self.w != w || self.out.len() != params.shape().input * params.shape().n_levels().max(1) {
            *self = Self::new(params, w);
        }
    }

    /// Decoded output of the last forward pass (`P`, or `Q x P` level-major).
    pub fn output(&self) -> &[T] {
        &self.out
    }

    pub fn latent(&self) -> &[T] {
        &self.latent
    }
}

#[inline]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |s, (&x, &y)| s + x * y)
}

/// `out += W x` for row-major `W` with `x.len()` columns.
#[inline]
fn matvec_acc<T: Real>(out: &mut [T], w: &[T], x: &[T]) {
    for (o, row) in out.iter_mut().zip(w.chunks_exact(x.len())) {
        *o += dot(row, x);
    }
}

/// `out += W^T v` for row-major `W` with `out.len()` columns.
#[inline]
fn matvec_t_acc<T: Real>(out: &mut [T], w: &[T], v: &[T]) {
    for (row, &vi) in w.chunks_exact(out.len()).zip(v) {
        for (o, &wij) in out.iter_mut().zip(row) {
            *o += wij * vi;
        }
    }
}

/// `W += v x^T`.
#[inline]
fn outer_acc<T: Real>(w: &mut [T], v: &[T], x: &[T]) {
    for (row, &vi) in w.chunks_exact_mut(x.len()).zip(v) {
        for (wij, &xj) in row.iter_mut().zip(x) {
            *wij += vi * xj;
        }
    }
}

/// Runs the network on a row-major `w x P` window, leaving caches in `ws`.
fn forward_into<T: Real>(params: &Params<T>, window: &[T], ws: &mut Workspace<T>) -> Result<()> {
    let s = params.shape();
    let (p, r, h) = (s.input, s.latent, s.hidden);
    if window.is_empty() || !window.len().is_multiple_of(p) {
        return Err(Error::DimensionMismatch(format!("window of length {} is not a multiple of P={p}", window.len())));
    }
    let w = window.len() / p;
    ws.ensure(params, w);
    let [mix, wz, uz, bz, wr, ur, br, wn, un, bn, hpw, hpb, hqw, hqb] = params.layout().split(params.as_slice());

    ws.hs[..h].fill(T::zero());
    for step in 0..w {
        let x = &window[step * p..(step + 1) * p];
        let e = &mut ws.enc[step * r..(step + 1) * r];
        for (ea, row) in e.iter_mut().zip(mix.chunks_exact(p)) {
            *ea = dot(row, x);
        }
        let e = &ws.enc[step * r..(step + 1) * r];
        let (prev_all, next_all) = ws.hs.split_at_mut((step + 1) * h);
        let hp = &prev_all[step * h..];
        let hn = &mut next_all[..h];
        let sl = step * h..(step + 1) * h;
        let (z, rg, n, rh) = (&mut ws.z[sl.clone()], &mut ws.rg[sl.clone()], &mut ws.n[sl.clone()], &mut ws.rh[sl]);

        z.copy_from_slice(bz);
        matvec_acc(z, wz, e);
        matvec_acc(z, uz, hp);
        rg.copy_from_slice(br);
        matvec_acc(rg, wr, e);
        matvec_acc(rg, ur, hp);
        for k in 0..h {
            z[k] = z[k].sigmoid();
            rg[k] = rg[k].sigmoid();
            rh[k] = rg[k] * hp[k];
        }
        n.copy_from_slice(bn);
        matvec_acc(n, wn, e);
        matvec_acc(n, un, rh);
        for k in 0..h {
            n[k] = n[k].tanh();
            hn[k] = (T::one() - z[k]) * n[k] + z[k] * hp[k];
        }
    }
    let hlast = &ws.hs[w * h..];

    match s.mode() {
        Mode::Point => {
            let head = &mut ws.head[..r];
            head.copy_from_slice(hpb);
            matvec_acc(head, hpw, hlast);
            ws.latent[..r].copy_from_slice(head);
            decode(mix, &ws.latent[..r], &mut ws.out[..p]);
        }
        Mode::Quantile => {
            let q = s.n_levels();
            ws.head.copy_from_slice(hqb);
            matvec_acc(&mut ws.head, hqw, hlast);
            ws.latent[..r].copy_from_slice(&ws.head[..r]);
            for j in 1..q {
                for a in 0..r {
                    ws.latent[j * r + a] = ws.latent[(j - 1) * r + a] + ws.head[j * r + a].softplus();
                }
            }
            for j in 0..q {
                decode(mix, &ws.latent[j * r..(j + 1) * r], &mut ws.out[j * p..(j + 1) * p]);
            }
        }
    }
    Ok(())
}

/// `out = B^T y`.
#[inline]
fn decode<T: Real>(mix: &[T], y: &[T], out: &mut [T]) {
    out.fill(T::zero());
    matvec_t_acc(out, mix, y);
}

fn collect<T: Real>(params: &Params<T>, ws: &Workspace<T>) -> Forecast<T> {
    let s = params.shape();
    match s.mode() {
        Mode::Point => Forecast::Point(ws.out[..s.input].to_vec()),
        Mode::Quantile => Forecast::Quantiles(QuantilePrediction {
            dim: s.input,
            latent_dim: s.latent,
            values: ws.out.clone(),
            latent: ws.latent.clone(),
            median: s.median_level(),
        }),
    }
}

/// One-step forecast from a row-major `w x P` window.
pub fn forward<T: Real>(params: &Params<T>, window: &[T], ws: &mut Workspace<T>) -> Result<Forecast<T>> {
    forward_into(params, window, ws)?;
    Ok(collect(params, ws))
}

/// Point forecast (the median in quantile mode).
pub fn forward_point<T: Real>(params: &Params<T>, window: &[T]) -> Result<Vec<T>> {
    let mut ws = Workspace::new(params, params.shape().window);
    Ok(forward(params, window, &mut ws)?.center().to_vec())
}

pub fn forward_quantiles<T: Real>(params: &Params<T>, window: &[T]) -> Result<QuantilePrediction<T>> {
    if params.shape().mode() != Mode::Quantile {
        return Err(Error::InvalidConfig("forward_quantiles needs a quantile-mode model".into()));
    }
    let mut ws = Workspace::new(params, params.shape().window);
    match forward(params, window, &mut ws)? {
        Forecast::Quantiles(q) => Ok(q),
        Forecast::Point(_) => unreachable!(),
    }
}

/// Accumulates into `grad` the gradient of the scalar whose derivative with
/// respect to the last forward's output is `ws.dout`.
fn backward<T: Real>(params: &Params<T>, window: &[T], ws: &mut Workspace<T>, grad: &mut [T]) {
    let s = params.shape();
    let (p, r, h) = (s.input, s.latent, s.hidden);
    let w = ws.w;
    let layout: &Layout = params.layout();
    let [mix, wz, uz, _bz, wr, ur, _br, wn, un, _bn, hpw, _hpb, hqw, _hqb] = layout.split(params.as_slice());
    let [gmix, gwz, guz, gbz, gwr, gur, gbr, gwn, gun, gbn, ghpw, ghpb, ghqw, ghqb] = layout.split_mut(grad);
    let hlast = &ws.hs[w * h..];

    ws.dh.fill(T::zero());
    match s.mode() {
        Mode::Point => {
            // x = B^T y  =>  dy = B dx, dB += y dx^T
            let dy = &mut ws.dlatent[..r];
            dy.fill(T::zero());
            matvec_acc(dy, mix, &ws.dout[..p]);
            outer_acc(gmix, &ws.latent[..r], &ws.dout[..p]);
            outer_acc(ghpw, dy, hlast);
            for (g, &d) in ghpb.iter_mut().zip(dy.iter()) {
                *g += d;
            }
            matvec_t_acc(&mut ws.dh, hpw, dy);
        }
        Mode::Quantile => {
            let q = s.n_levels();
            for j in 0..q {
                let dz = &mut ws.dlatent[j * r..(j + 1) * r];
                dz.fill(T::zero());
                matvec_acc(dz, mix, &ws.dout[j * p..(j + 1) * p]);
                outer_acc(gmix, &ws.latent[j * r..(j + 1) * r], &ws.dout[j * p..(j + 1) * p]);
            }
            // latent_j = base + sum_{m<=j} softplus(raw_m): suffix sums of dlatent
            for a in 0..r {
                let mut acc = T::zero();
                for j in (0..q).rev() {
                    acc += ws.dlatent[j * r + a];
                    ws.dhead[j * r + a] = if j == 0 { acc } else { acc * ws.head[j * r + a].sigmoid() };
                }
            }
            outer_acc(ghqw, &ws.dhead, hlast);
            for (g, &d) in ghqb.iter_mut().zip(ws.dhead.iter()) {
                *g += d;
            }
            matvec_t_acc(&mut ws.dh, hqw, &ws.dhead);
        }
    }

    for step in (0..w).rev() {
        let sl = step * h..(step + 1) * h;
        let hp = &ws.hs[sl.clone()];
        let (z, rg, n, rh) = (&ws.z[sl.clone()], &ws.rg[sl.clone()], &ws.n[sl.clone()], &ws.rh[sl]);
        let e = &ws.enc[step * r..(step + 1) * r];
        let x = &window[step * p..(step + 1) * p];
        let one = T::one();

        // candidate gate
        for k in 0..h {
            ws.dh_prev[k] = ws.dh[k] * z[k];
            ws.da[k] = ws.dh[k] * (one - z[k]) * (one - n[k] * n[k]);
        }
        outer_acc(gwn, &ws.da, e);
        outer_acc(gun, &ws.da, rh);
        for (g, &d) in gbn.iter_mut().zip(ws.da.iter()) {
            *g += d;
        }
        ws.drh.fill(T::zero());
        matvec_t_acc(&mut ws.drh, un, &ws.da);
        ws.de.fill(T::zero());
        matvec_t_acc(&mut ws.de, wn, &ws.da);
        for ((d, &g), &r) in ws.dh_prev.iter_mut().zip(&ws.drh).zip(rg) {
            *d += g * r;
        }

        // update gate
        for k in 0..h {
            ws.da[k] = ws.dh[k] * (hp[k] - n[k]) * z[k] * (one - z[k]);
        }
        outer_acc(gwz, &ws.da, e);
        outer_acc(guz, &ws.da, hp);
        for (g, &d) in gbz.iter_mut().zip(ws.da.iter()) {
            *g += d;
        }
        matvec_t_acc(&mut ws.dh_prev, uz, &ws.da);
        matvec_t_acc(&mut ws.de, wz, &ws.da);

        // reset gate
        for k in 0..h {
            ws.da[k] = ws.drh[k] * hp[k] * rg[k] * (one - rg[k]);
        }
        outer_acc(gwr, &ws.da, e);
        outer_acc(gur, &ws.da, hp);
        for (g, &d) in gbr.iter_mut().zip(ws.da.iter()) {
            *g += d;
        }
        matvec_t_acc(&mut ws.dh_prev, ur, &ws.da);
        matvec_t_acc(&mut ws.de, wr, &ws.da);

        // encoder e = B x
        outer_acc(gmix, &ws.de, x);

        std::mem::swap(&mut ws.dh, &mut ws.dh_prev);
    }
}

/// Training objective: the data loss plus an optional L2-SP pull toward an anchor.
#[derive(Debug, Clone, PartialEq)]
pub enum Objective {
    Huber { delta: f64 },
    Pinball { levels: Vec<f64> },
}

impl Objective {
    pub fn for_shape(shape: &super::ModelShape, delta: f64) -> Self {
        match shape.mode() {
            Mode::Point => Objective::Huber { delta },
            Mode::Quantile => Objective::Pinball { levels: shape.levels.clone() },
        }
    }
}

/// One `(window, target)` training pair; the window is row-major `w x P`.
#[derive(Debug, Clone, Copy)]
pub struct Sample<'a, T> {
    pub window: &'a [T],
    pub target: &'a [T],
}

const CHUNK: usize = 16;

/// Mean batch loss plus `eta * ||theta - anchor||^2` over the specialized
/// parameters, with its exact gradient.
///
/// The batch is processed in fixed chunks whose partial sums are reduced in
/// order, so the result does not depend on the number of worker threads.
pub fn loss_and_gradients<T: Real>(
    params: &Params<T>,
    anchor: Option<(&Params<T>, f64)>,
    batch: &[Sample<'_, T>],
    objective: &Objective,
) -> Result<(T, Vec<T>)> {
    if batch.is_empty() {
        return Err(Error::InvalidData("empty batch".into()));
    }
    let mode = params.shape().mode();
    match (objective, mode) {
        (Objective::Huber { .. }, Mode::Point) => {}
        (Objective::Pinball { levels }, Mode::Quantile) if levels.len() == params.shape().n_levels() => {}
        _ => return Err(Error::InvalidConfig("objective does not match model mode".into())),
    }
    let n_params = params.len();
    let partials: Vec<Result<(T, Vec<T>)>> = batch
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut ws = Workspace::new(params, params.shape().window);
            let mut grad = vec![T::zero(); n_params];
            let mut total = T::zero();
            let levels: Vec<T> = match objective {
                Objective::Pinball { levels } => levels.iter().map(|&q| T::lit(q)).collect(),
                Objective::Huber { .. } => Vec::new(),
            };
            for s in chunk {
                forward_into(params, s.window, &mut ws)?;
                ws.dout.fill(T::zero());
                let out_len = ws.out.len();
                match objective {
                    Objective::Huber { delta } => {
                        let d = T::lit(*delta);
                        let pdim = s.target.len();
                        total += losses::huber(&ws.out[..pdim], s.target, d);
                        losses::huber_grad(&ws.out[..pdim], s.target, d, T::one(), &mut ws.dout[..pdim]);
                    }
                    Objective::Pinball { .. } => {
                        total += losses::pinball_multi(&ws.out, s.target, &levels);
                        losses::pinball_multi_grad(&ws.out[..out_len], s.target, &levels, T::one(), &mut ws.dout);
                    }
                }
                backward(params, s.window, &mut ws, &mut grad);
            }
            Ok((total, grad))
        })
        .collect();

    let mut loss = T::zero();
    let mut grad = vec![T::zero(); n_params];
    for part in partials {
        let (l, g) = part?;
        loss += l;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += *b;
        }
    }
    let inv = T::one() / T::from_usize(batch.len()).unwrap();
    loss *= inv;
    for g in &mut grad {
        *g *= inv;
    }
    if let Some((a, eta)) = anchor {
        let eta = T::lit(eta);
        if eta > T::zero() {
            let range = params.layout().specialized();
            let two_eta = eta + eta;
            for k in range {
                let d = params.as_slice()[k] - a.as_slice()[k];
                loss += eta * d * d;
                grad[k] += two_eta * d;
            }
        }
    }
    if !loss.is_finite() {
        return Err(Error::Divergence { epoch: 0, last_finite_epoch: None, last_loss: None });
    }
    Ok((loss, grad))
}
