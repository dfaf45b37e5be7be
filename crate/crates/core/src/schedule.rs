//! Noise-schedule construction and deterministic DDIM step algebra.
//!
//! A schedule owns the beta/alpha/alpha-bar sequences over the training steps
//! plus an inference-step subsequence. Sampling and inversion share one step
//! formula parameterised by source and destination noise levels, so the two
//! directions are exact algebraic inverses under a shared noise prediction.
//!
//! The clean-data end of the axis is represented explicitly ([`Level::Clean`],
//! alpha-bar exactly 1), which is where an inference trajectory starts.

use alloc::format;
use alloc::vec::Vec;

use crate::array::Array;
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};

/// A position on the diffusion time axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Level {
    /// The clean-data level, alpha-bar = 1.
    Clean,
    /// A training step index in `[0, t_train)`.
    Step(usize),
}

/// One inference transition: the pair of adjacent levels it connects and the
/// training step at which the denoiser is evaluated for it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Transition {
    pub index: usize,
    pub hi: Level,
    pub lo: Level,
    pub t_eval: usize,
}

#[derive(Clone, Debug)]
pub struct NoiseSchedule {
    t_train: usize,
    beta_start: f64,
    beta_end: f64,
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
    infer_steps: Vec<usize>,
}

impl NoiseSchedule {
    /// Linear beta schedule over `t_train` steps, endpoints inclusive.
    /// The inference subsequence defaults to the identity.
    pub fn linear(t_train: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if t_train < 2 {
            return Err(Error::InvalidParam {
                name: "t_train",
                message: format!("need at least 2 training steps, got {t_train}"),
            });
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::InvalidParam {
                name: "beta bounds",
                message: format!("require 0 < beta_start <= beta_end < 1, got [{beta_start}, {beta_end}]"),
            });
        }
        let n = t_train as f64 - 1.0;
        let betas: Vec<f64> = (0..t_train)
            .map(|i| beta_start + (beta_end - beta_start) * (i as f64) / n)
            .collect();
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(t_train);
        let mut prod = 1.0;
        for a in &alphas {
            prod *= a;
            alpha_bars.push(prod);
        }
        // Construction-time invariant checks: alpha-bar strictly decreasing in (0, 1).
        for (i, w) in alpha_bars.windows(2).enumerate() {
            if !(w[1] < w[0]) {
                return Err(Error::InvalidParam {
                    name: "alpha_bars",
                    message: format!("not strictly decreasing at index {}", i + 1),
                });
            }
        }
        if alpha_bars[0] >= 1.0 || alpha_bars[t_train - 1] <= 0.0 {
            return Err(Error::InvalidParam {
                name: "alpha_bars",
                message: format!("outside (0,1): [{}, {}]", alpha_bars[t_train - 1], alpha_bars[0]),
            });
        }
        let infer_steps = (0..t_train).collect();
        Ok(NoiseSchedule {
            t_train,
            beta_start,
            beta_end,
            betas,
            alphas,
            alpha_bars,
            infer_steps,
        })
    }

    /// Same schedule restricted to `t_infer` uniformly spaced inference indices
    /// (always including index 0).
    pub fn infer_subsequence(&self, t_infer: usize) -> Result<Self> {
        if t_infer < 1 || t_infer > self.t_train {
            return Err(Error::InvalidParam {
                name: "t_infer",
                message: format!("must be in [1, {}], got {t_infer}", self.t_train),
            });
        }
        let steps: Vec<usize> = (0..t_infer)
            .map(|j| j * self.t_train / t_infer)
            .collect();
        let mut out = self.clone();
        out.infer_steps = steps;
        Ok(out)
    }

    pub fn t_train(&self) -> usize {
        self.t_train
    }

    pub fn t_infer(&self) -> usize {
        self.infer_steps.len()
    }

    pub fn beta_start(&self) -> f64 {
        self.beta_start
    }

    pub fn beta_end(&self) -> f64 {
        self.beta_end
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    pub fn infer_steps(&self) -> &[usize] {
        &self.infer_steps
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        self.alpha_bars.get(t).copied().ok_or(Error::InvalidParam {
            name: "step index",
            message: format!("t = {t} outside [0, {})", self.t_train),
        })
    }

    pub fn level_alpha_bar(&self, level: Level) -> Result<f64> {
        match level {
            Level::Clean => Ok(1.0),
            Level::Step(t) => self.alpha_bar(t),
        }
    }

    /// Number of inference transitions (equals `t_infer`).
    pub fn num_transitions(&self) -> usize {
        self.infer_steps.len()
    }

    /// Transition `i` connects the level below `infer_steps[i]` to
    /// `infer_steps[i]`; the lowest transition starts at the clean level.
    pub fn transition(&self, i: usize) -> Result<Transition> {
        if i >= self.infer_steps.len() {
            return Err(Error::InvalidParam {
                name: "transition index",
                message: format!("i = {i} outside [0, {})", self.infer_steps.len()),
            });
        }
        let hi = Level::Step(self.infer_steps[i]);
        let lo = if i == 0 {
            Level::Clean
        } else {
            Level::Step(self.infer_steps[i - 1])
        };
        Ok(Transition {
            index: i,
            hi,
            lo,
            t_eval: self.infer_steps[i],
        })
    }

    /// The single DDIM step formula between two noise levels, recorded on a
    /// graph: `x0 = (z - sqrt(1-abar_src) eps) / sqrt(abar_src)`, then
    /// `out = sqrt(abar_dst) x0 + sqrt(1-abar_dst) eps`.
    ///
    /// Both sampling (src > dst) and inversion (src < dst) go through this one
    /// code path, which keeps replayed reconstructions bit-identical.
    pub fn step_levels_on(
        &self,
        g: &mut Graph,
        z: NodeId,
        eps: NodeId,
        from: Level,
        to: Level,
    ) -> Result<NodeId> {
        if g.value(z).shape() != g.value(eps).shape() {
            return Err(Error::ShapeMismatch {
                op: "ddim_step",
                left: g.value(z).shape().to_vec(),
                right: g.value(eps).shape().to_vec(),
            });
        }
        let ab_src = self.level_alpha_bar(from)?;
        let ab_dst = self.level_alpha_bar(to)?;
        let recip_sqrt_src = 1.0 / libm::sqrt(ab_src);
        let noise_src = libm::sqrt(1.0 - ab_src);
        let sqrt_dst = libm::sqrt(ab_dst);
        let noise_dst = libm::sqrt(1.0 - ab_dst);
        let scaled_eps = g.scalar_mul(noise_src, eps)?;
        let centered = g.sub(z, scaled_eps)?;
        let x0 = g.scalar_mul(recip_sqrt_src, centered)?;
        let lhs = g.scalar_mul(sqrt_dst, x0)?;
        let rhs = g.scalar_mul(noise_dst, eps)?;
        g.add(lhs, rhs)
    }

    /// Array-level DDIM step between two levels (evaluated through the same
    /// graph path as [`Self::step_levels_on`]).
    pub fn step_levels(&self, z: &Array, eps: &Array, from: Level, to: Level) -> Result<Array> {
        let mut g = Graph::new();
        let zn = g.constant_array(z.clone());
        let en = g.constant_array(eps.clone());
        let out = self.step_levels_on(&mut g, zn, en, from, to)?;
        Ok(g.value(out).clone())
    }

    /// Deterministic DDIM sampling update from step `t` down to `t_prev`.
    pub fn ddim_sample_step(
        &self,
        z_t: &Array,
        eps_hat: &Array,
        t: usize,
        t_prev: usize,
    ) -> Result<Array> {
        if t_prev > t {
            return Err(Error::InvalidParam {
                name: "sample step order",
                message: format!("t_prev = {t_prev} must not exceed t = {t}"),
            });
        }
        self.step_levels(z_t, eps_hat, Level::Step(t), Level::Step(t_prev))
    }

    /// Inverse map from step `t` up to `t_next`; composing with
    /// [`Self::ddim_sample_step`] under identical `eps_hat` is the identity up
    /// to rounding.
    pub fn ddim_invert_step(
        &self,
        z_t: &Array,
        eps_hat: &Array,
        t: usize,
        t_next: usize,
    ) -> Result<Array> {
        if t_next < t {
            return Err(Error::InvalidParam {
                name: "invert step order",
                message: format!("t_next = {t_next} must not precede t = {t}"),
            });
        }
        self.step_levels(z_t, eps_hat, Level::Step(t), Level::Step(t_next))
    }

    /// Training-time corruption `z_t = sqrt(abar_t) z0 + sqrt(1-abar_t) noise`.
    pub fn forward_diffuse(&self, z0: &Array, t: usize, noise: &Array) -> Result<Array> {
        if z0.shape() != noise.shape() {
            return Err(Error::ShapeMismatch {
                op: "forward_diffuse",
                left: z0.shape().to_vec(),
                right: noise.shape().to_vec(),
            });
        }
        let ab = self.alpha_bar(t)?;
        let s = libm::sqrt(ab);
        let n = libm::sqrt(1.0 - ab);
        z0.scale(s).add(&noise.scale(n))
    }
}
