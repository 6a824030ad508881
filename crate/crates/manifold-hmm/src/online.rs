//! Fine-tuning phase: a constant-memory stochastic-approximation filter.
//!
//! The filter keeps a normalized forward vector α, a ring buffer of the
//! last Δ observations together with their α vectors, and cumulative γ
//! sums — O(Δ·N) memory regardless of stream length. Each new observation
//! triggers one forward step, a backward smoothing pass over the window
//! (β, γ, ζ and the μ/g intermediates), and the multiplicative transition
//! update plus the geodesic mean and δ stochastic-approximation updates.
//!
//! α is renormalized every step (scaled-forward technique): raw α
//! underflows over long streams, and every smoothing ratio below is
//! scale-invariant.

use std::collections::VecDeque;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::gaussian::{self, RiemannianGaussian};
use crate::manifold::{self, ManifoldPoint};
use crate::markov::HmmParams;

/// Floor applied when projecting transition rows back onto the simplex;
/// exact zeros would be absorbing under the multiplicative μ/g update.
pub const TRANSITION_FLOOR: f64 = 1e-6;

/// Default step-size exponent of the δ update (the manifold rule uses
/// 1/√k).
pub const DEFAULT_STEP_EXPONENT: f64 = 0.5;

/// The online algorithm's constant-size memory.
#[derive(Debug, Clone)]
pub struct FilterState {
    pub(crate) params: HmmParams,
    pub(crate) alpha: Vec<f64>,
    pub(crate) window: VecDeque<ManifoldPoint>,
    pub(crate) alpha_window: VecDeque<Vec<f64>>,
    pub(crate) alpha_pre_window: Vec<f64>,
    pub(crate) gamma_cumsum: Vec<f64>,
    pub(crate) k: usize,
    pub(crate) log_scale: f64,
    pub(crate) capacity: usize,
    pub(crate) peak_retained: usize,
    pub(crate) step_exponent: f64,
}

/// One backward smoothing pass over the current window.
///
/// `beta` and `gamma` have one row per window position; `zeta` is the
/// smoothed distribution of the most recent transition; `mu` and `g` are
/// the window-truncated Fisher-information and score intermediates of the
/// transition update.
#[derive(Debug, Clone)]
pub struct SmoothingSlice {
    pub beta: Vec<Vec<f64>>,
    pub gamma: Vec<Vec<f64>>,
    pub zeta: Vec<Vec<f64>>,
    pub mu: Vec<Vec<f64>>,
    pub g: Vec<Vec<f64>>,
}

impl FilterState {
    pub fn params(&self) -> &HmmParams {
        &self.params
    }

    /// Current normalized forward vector α_k (the filtered state
    /// posterior γ_{k|k}).
    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn iteration(&self) -> usize {
        self.k
    }

    /// Accumulated log normalization constant (the log-likelihood of the
    /// stream so far, for diagnostics).
    pub fn log_scale(&self) -> f64 {
        self.log_scale
    }

    pub fn window_len(&self) -> usize {
        self.window.len()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Largest number of observations ever held; the constant-memory claim
    /// is that this equals Δ for the whole run.
    pub fn peak_retained(&self) -> usize {
        self.peak_retained
    }

    pub fn gamma_cumsum(&self) -> &[f64] {
        &self.gamma_cumsum
    }

    pub fn step_exponent(&self) -> f64 {
        self.step_exponent
    }

    pub fn set_step_exponent(&mut self, exponent: f64) {
        self.step_exponent = exponent;
    }

    /// Filtered α vectors aligned with the retained window (used to decode
    /// the initialization prefix).
    pub fn window_alphas(&self) -> impl Iterator<Item = &[f64]> {
        self.alpha_window.iter().map(|a| a.as_slice())
    }

    fn densities(&self, y: &ManifoldPoint) -> Result<Vec<f64>> {
        self.params
            .components()
            .iter()
            .map(|c| c.density(y))
            .collect()
    }

    /// α ← normalized (αᵀ A ⊙ p(y)); the normalization constant is
    /// accumulated into `log_scale`.
    pub fn forward_step(&mut self, y: &ManifoldPoint) -> Result<&[f64]> {
        let n = self.params.n_states();
        let p = self.densities(y)?;
        let a = self.params.transition();
        let mut next = vec![0.0; n];
        for j in 0..n {
            let mut acc = 0.0;
            for i in 0..n {
                acc += self.alpha[i] * a[i][j];
            }
            next[j] = acc * p[j];
        }
        let norm: f64 = next.iter().sum();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::DegenerateEmission {
                step: self.k + 1,
                n_states: n,
            });
        }
        for v in &mut next {
            *v /= norm;
        }
        self.log_scale += norm.ln();
        self.alpha = next;
        Ok(&self.alpha)
    }

    /// Pushes the newest observation (and the α just computed for it) into
    /// the ring buffers, evicting the oldest pair once at capacity.
    pub fn slide_window(&mut self, y: ManifoldPoint) {
        if self.window.len() == self.capacity {
            self.window.pop_front();
            if let Some(old) = self.alpha_window.pop_front() {
                self.alpha_pre_window = old;
            }
        }
        self.window.push_back(y);
        self.alpha_window.push_back(self.alpha.clone());
        self.peak_retained = self.peak_retained.max(self.window.len());
    }

    /// Backward pass over the window: β by the right-to-left matrix
    /// product (rescaled per step), then γ, the latest ζ, and the
    /// window-truncated μ and g intermediates.
    pub fn backward_window(&self) -> Result<SmoothingSlice> {
        let n = self.params.n_states();
        let len = self.window.len();
        if len == 0 {
            return Err(Error::InvalidArgument(
                "backward_window on an empty window".into(),
            ));
        }
        let a = self.params.transition();

        // densities of every window observation under the current params
        let mut dens = Vec::with_capacity(len);
        for y in &self.window {
            dens.push(self.densities(y)?);
        }

        // beta, rescaled per row by its maximum (ratios are scale-free)
        let mut beta = vec![vec![1.0; n]; len];
        for t in (0..len.saturating_sub(1)).rev() {
            let mut row = vec![0.0; n];
            for i in 0..n {
                let mut acc = 0.0;
                for j in 0..n {
                    acc += a[i][j] * dens[t + 1][j] * beta[t + 1][j];
                }
                row[i] = acc;
            }
            let m = row.iter().cloned().fold(0.0f64, f64::max);
            if !(m > 0.0) || !m.is_finite() {
                return Err(Error::ZeroDenominator {
                    what: "beta",
                    position: t,
                });
            }
            for v in &mut row {
                *v /= m;
            }
            beta[t] = row;
        }

        // gamma rows, each normalized on its own
        let alphas: Vec<&Vec<f64>> = self.alpha_window.iter().collect();
        let mut gamma = vec![vec![0.0; n]; len];
        for t in 0..len {
            let mut denom = 0.0;
            for i in 0..n {
                gamma[t][i] = alphas[t][i] * beta[t][i];
                denom += gamma[t][i];
            }
            if !(denom > 0.0) || !denom.is_finite() {
                return Err(Error::ZeroDenominator {
                    what: "gamma",
                    position: t,
                });
            }
            for v in &mut gamma[t] {
                *v /= denom;
            }
        }

        // window-truncated mu: sum of the smoothed zeta of every in-window
        // transition, each normalized per step, divided by A_ij²
        let mut mu = vec![vec![0.0; n]; n];
        let zeta_at = |t: usize| -> Result<Vec<Vec<f64>>> {
            let alpha_t: &[f64] = if t == 0 && len == 1 {
                &self.alpha_pre_window
            } else {
                alphas[t]
            };
            let mut z = vec![vec![0.0; n]; n];
            let mut total = 0.0;
            for i in 0..n {
                for j in 0..n {
                    let v = alpha_t[i] * a[i][j] * dens[t + 1][j] * beta[t + 1][j];
                    z[i][j] = v;
                    total += v;
                }
            }
            if !(total > 0.0) || !total.is_finite() {
                return Err(Error::ZeroDenominator {
                    what: "zeta",
                    position: t,
                });
            }
            for row in &mut z {
                for v in row {
                    *v /= total;
                }
            }
            Ok(z)
        };
        for t in 0..len.saturating_sub(1) {
            let z = zeta_at(t)?;
            for i in 0..n {
                for j in 0..n {
                    mu[i][j] += z[i][j] / (a[i][j] * a[i][j]);
                }
            }
        }

        // latest transition: the t = len-2 slice (beta of the last
        // position is 1); for a single-observation window, fall back to
        // the pre-window alpha
        let zeta = if len >= 2 {
            let alpha_t = alphas[len - 2];
            let mut z = vec![vec![0.0; n]; n];
            let mut total = 0.0;
            for i in 0..n {
                for j in 0..n {
                    let v = alpha_t[i] * a[i][j] * dens[len - 1][j];
                    z[i][j] = v;
                    total += v;
                }
            }
            if !(total > 0.0) || !total.is_finite() {
                return Err(Error::ZeroDenominator {
                    what: "zeta",
                    position: len - 2,
                });
            }
            for row in &mut z {
                for v in row {
                    *v /= total;
                }
            }
            z
        } else {
            let mut z = vec![vec![0.0; n]; n];
            let mut total = 0.0;
            for i in 0..n {
                for j in 0..n {
                    let v = self.alpha_pre_window[i] * a[i][j] * dens[0][j];
                    z[i][j] = v;
                    total += v;
                }
            }
            if !(total > 0.0) || !total.is_finite() {
                return Err(Error::ZeroDenominator {
                    what: "zeta",
                    position: 0,
                });
            }
            for row in &mut z {
                for v in row {
                    *v /= total;
                }
            }
            z
        };

        let mut g = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                g[i][j] = zeta[i][j] / a[i][j];
            }
        }

        Ok(SmoothingSlice {
            beta,
            gamma,
            zeta,
            mu,
            g,
        })
    }

    /// Transition update
    /// A_ij ← A_ij + (1/μ_j)(g_j − Σ_h g_h/μ_h / Σ_h 1/μ_h),
    /// then each row is projected back to the simplex by clipping to
    /// [`TRANSITION_FLOOR`, 1] and renormalizing.
    pub fn update_transition(&mut self, slice: &SmoothingSlice) -> Result<()> {
        let n = self.params.n_states();
        let mut bad = Vec::new();
        for i in 0..n {
            for j in 0..n {
                if !(slice.mu[i][j] > 0.0) || !slice.mu[i][j].is_finite() {
                    bad.push((i, j));
                }
            }
        }
        if !bad.is_empty() {
            return Err(Error::NonFinite {
                what: "mu in the transition update",
                indices: bad,
            });
        }

        let a = self.params.transition();
        let mut next = vec![vec![0.0; n]; n];
        let mut bad = Vec::new();
        for i in 0..n {
            let inv_mu: Vec<f64> = (0..n).map(|j| 1.0 / slice.mu[i][j]).collect();
            let weighted: f64 = (0..n).map(|j| slice.g[i][j] * inv_mu[j]).sum();
            let weight_total: f64 = inv_mu.iter().sum();
            let centered_mean = weighted / weight_total;
            for j in 0..n {
                let v = a[i][j] + inv_mu[j] * (slice.g[i][j] - centered_mean);
                if !v.is_finite() {
                    bad.push((i, j));
                }
                next[i][j] = v;
            }
        }
        if !bad.is_empty() {
            return Err(Error::NonFinite {
                what: "transition update",
                indices: bad,
            });
        }
        for row in &mut next {
            for v in row.iter_mut() {
                *v = v.clamp(TRANSITION_FLOOR, 1.0);
            }
            let sum: f64 = row.iter().sum();
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        self.params.set_transition(next);
        Ok(())
    }

    /// δ_i ← δ_i + k^{-e} γ_{k+1|k+1}(i) (d²(y, c_i) − δ_i) with the
    /// current (pre-mean-update) centers, floored at δ(σ_min); σ_i is
    /// refreshed through the δ↔σ bridge.
    pub fn update_delta(&mut self, slice: &SmoothingSlice, y: &ManifoldPoint) -> Result<()> {
        if self.k < 1 {
            return Err(Error::InvalidArgument(
                "delta update requires iteration index k >= 1".into(),
            ));
        }
        let gamma_new = slice
            .gamma
            .last()
            .ok_or(Error::InvalidArgument("empty smoothing slice".into()))?;
        let step = 1.0 / (self.k as f64).powf(self.step_exponent);
        let floor = gaussian::delta_floor();
        let n = self.params.n_states();
        for i in 0..n {
            let c = &self.params.components()[i];
            let d2 = manifold::squared_distance(c.center(), y)?;
            let delta = (c.delta() + step * gamma_new[i] * (d2 - c.delta())).max(floor);
            let refreshed = RiemannianGaussian::from_delta(c.center().clone(), delta)?;
            self.params.set_component(i, refreshed);
        }
        Ok(())
    }

    /// c_i ← c_i #_τ y with τ = γ_{k+1|k+1}(i) / Σ_{t≤k+1} γ(i); the
    /// cumulative γ sums are extended by the newest filtered γ first, so
    /// the first effective observation gives τ = 1 (c jumps to y) and a
    /// zero γ gives τ = 0 (c unchanged).
    pub fn update_mean(&mut self, slice: &SmoothingSlice, y: &ManifoldPoint) -> Result<()> {
        let gamma_new = slice
            .gamma
            .last()
            .ok_or(Error::InvalidArgument("empty smoothing slice".into()))?
            .clone();
        let n = self.params.n_states();
        for i in 0..n {
            self.gamma_cumsum[i] += gamma_new[i];
            if gamma_new[i] == 0.0 {
                continue;
            }
            let tau = gamma_new[i] / self.gamma_cumsum[i];
            if !(0.0..=1.0).contains(&tau) {
                return Err(Error::InvalidArgument(format!(
                    "mean update tau = {tau} for state {} (inconsistent cumulative gamma)",
                    i + 1
                )));
            }
            let c = &self.params.components()[i];
            let center = manifold::geodesic_point(c.center(), y, tau)?;
            let moved = RiemannianGaussian::new(center, c.sigma())?;
            self.params.set_component(i, moved);
        }
        Ok(())
    }
}

/// One trace record of [`run_online`], emitted every `trace_every` steps.
#[derive(Debug, Clone, Serialize)]
pub struct TraceRecord {
    pub k: usize,
    pub transition: Vec<Vec<f64>>,
    pub centers: Vec<ManifoldPoint>,
    pub sigmas: Vec<f64>,
    pub deltas: Vec<f64>,
    pub gamma_filtered: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct OnlineOptions {
    /// Emit a [`TraceRecord`] every this many steps; 0 disables tracing.
    pub trace_every: usize,
}

impl Default for OnlineOptions {
    fn default() -> Self {
        Self { trace_every: 0 }
    }
}

/// Output of a fine-tuning run: the final filter (with its estimated
/// parameters), the filtered γ_{t|t} sequence for decoding, and the
/// periodic trace.
#[derive(Debug)]
pub struct OnlineRun {
    pub state: FilterState,
    pub gamma_filtered: Vec<Vec<f64>>,
    pub trace: Vec<TraceRecord>,
}

fn trace_of(state: &FilterState) -> TraceRecord {
    TraceRecord {
        k: state.k,
        transition: state.params.transition().to_vec(),
        centers: state
            .params
            .components()
            .iter()
            .map(|c| c.center().clone())
            .collect(),
        sigmas: state.params.components().iter().map(|c| c.sigma()).collect(),
        deltas: state.params.components().iter().map(|c| c.delta()).collect(),
        gamma_filtered: state.alpha.clone(),
    }
}

/// Streams every observation through the seeded filter: forward step,
/// window slide, backward smoothing, then the transition, δ and mean
/// updates (δ before the mean so the δ innovation uses the pre-update
/// center, as the update rules require).
pub fn run_online(
    mut state: FilterState,
    stream: &[ManifoldPoint],
    options: &OnlineOptions,
) -> Result<OnlineRun> {
    if state.window.len() < state.capacity {
        return Err(Error::InvalidArgument(format!(
            "filter not fully seeded: window holds {} of {} observations",
            state.window.len(),
            state.capacity
        )));
    }
    let mut gamma_filtered = Vec::with_capacity(stream.len());
    let mut trace = Vec::new();
    for y in stream {
        state.forward_step(y)?;
        state.slide_window(y.clone());
        let slice = state.backward_window()?;
        state.update_transition(&slice)?;
        state.update_delta(&slice, y)?;
        state.update_mean(&slice, y)?;
        state.k += 1;
        gamma_filtered.push(state.alpha.clone());
        if options.trace_every > 0 && state.k % options.trace_every == 0 {
            trace.push(trace_of(&state));
        }
    }
    Ok(OnlineRun {
        state,
        gamma_filtered,
        trace,
    })
}
