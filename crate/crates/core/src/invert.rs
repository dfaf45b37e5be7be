//! DDIM inversion with full trajectory recording, the plain reconstruction
//! baseline that exhibits displacement, and the replay mode that separates
//! discretization error from programming error.
//!
//! Conventions: a trajectory over `K = t_infer` transitions stores `K + 1`
//! latents. `latents[0]` is the encoded source at the clean level; for
//! `i >= 1`, `latents[i]` sits at training step `infer_steps[i-1]`, so the
//! last entry is `z_T`. The denoiser is always evaluated at the upper step of
//! a transition, whichever direction the walk goes; displacement comes from
//! the two legs seeing different latents there.

use alloc::vec::Vec;

use crate::array::Array;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::model::{Denoiser, GuidanceConfig};
use crate::schedule::NoiseSchedule;

/// Schedule identity carried by trajectories so later stages can verify they
/// run against the same algebra that produced the inversion.
#[derive(Clone, Debug, PartialEq)]
pub struct ScheduleMeta {
    pub t_train: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub infer_steps: Vec<usize>,
}

impl ScheduleMeta {
    pub fn of(s: &NoiseSchedule) -> Self {
        ScheduleMeta {
            t_train: s.t_train(),
            beta_start: s.beta_start(),
            beta_end: s.beta_end(),
            infer_steps: s.infer_steps().to_vec(),
        }
    }

    pub fn matches(&self, s: &NoiseSchedule) -> Result<()> {
        if self.t_train != s.t_train()
            || self.beta_start != s.beta_start()
            || self.beta_end != s.beta_end()
            || self.infer_steps != s.infer_steps()
        {
            return Err(Error::Misaligned {
                what: "trajectory schedule",
                expected: self.infer_steps.len(),
                got: s.infer_steps().len(),
            });
        }
        Ok(())
    }
}

/// The ordered latent sequence recorded during inversion, together with the
/// conditioning used, the guidance config of the inversion leg, and the noise
/// predictions cached per transition (which is what replay mode consumes).
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub latents: Vec<Array>,
    pub eps_cache: Vec<Array>,
    pub condition: Array,
    pub guidance: GuidanceConfig,
    pub schedule: ScheduleMeta,
}

impl Trajectory {
    pub fn z0(&self) -> &Array {
        &self.latents[0]
    }

    pub fn z_top(&self) -> &Array {
        self.latents.last().expect("non-empty by construction")
    }

    pub fn num_transitions(&self) -> usize {
        self.eps_cache.len()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.schedule.infer_steps.len();
        if self.latents.len() != k + 1 {
            return Err(Error::Misaligned {
                what: "trajectory latents",
                expected: k + 1,
                got: self.latents.len(),
            });
        }
        if self.eps_cache.len() != k {
            return Err(Error::Misaligned {
                what: "trajectory eps cache",
                expected: k,
                got: self.eps_cache.len(),
            });
        }
        for l in &self.latents {
            l.check_finite("trajectory latent")?;
        }
        Ok(())
    }
}

/// A reconstruction outcome: the final latent, per-transition deviations
/// `d = ||z'_t - z_t||` in processing order (highest step first), and the
/// relative displacement against the recorded source.
#[derive(Clone, Debug)]
pub struct Reconstruction {
    pub z0_rec: Array,
    pub deviations: Vec<f64>,
    pub rel_displacement: f64,
}

pub(crate) fn relative_displacement(z0: &Array, rec: &Array) -> Result<f64> {
    crate::metrics::rel_displacement(z0, rec)
}

/// Run DDIM inversion from `z0` upward, recording every intermediate latent
/// and noise prediction.
pub fn invert(
    m: &Denoiser,
    s: &NoiseSchedule,
    z0: &Array,
    c: &Array,
    guidance: &GuidanceConfig,
) -> Result<Trajectory> {
    z0.check_finite("inversion input")?;
    let k = s.num_transitions();
    let mut latents = Vec::with_capacity(k + 1);
    let mut eps_cache = Vec::with_capacity(k);
    latents.push(z0.clone());
    let mut z = z0.clone();
    for i in 0..k {
        let tr = s.transition(i)?;
        let mut g = Graph::new();
        let bound = m.bind(&mut g, false);
        let z_node = g.constant_array(z.clone());
        let c_node = g.constant_array(c.clone());
        let eps_node = m.guided_on(&mut g, &bound, guidance, z_node, tr.t_eval, c_node)?;
        let next = s.step_levels_on(&mut g, z_node, eps_node, tr.lo, tr.hi)?;
        z = g.value(next).clone();
        if !z.all_finite() {
            return Err(Error::NonFinite {
                context: "inversion latent",
                index: Some(i),
            });
        }
        eps_cache.push(g.value(eps_node).clone());
        latents.push(z.clone());
    }
    Ok(Trajectory {
        latents,
        eps_cache,
        condition: c.clone(),
        guidance: *guidance,
        schedule: ScheduleMeta::of(s),
    })
}

/// Sample back from the trajectory's top latent with the original fixed
/// condition: the baseline that accumulates displacement.
pub fn reconstruct_plain(
    m: &Denoiser,
    s: &NoiseSchedule,
    guidance: &GuidanceConfig,
    traj: &Trajectory,
) -> Result<Reconstruction> {
    traj.schedule.matches(s)?;
    traj.validate()?;
    let k = s.num_transitions();
    let mut z = traj.z_top().clone();
    let mut deviations = Vec::with_capacity(k);
    for i in (0..k).rev() {
        let tr = s.transition(i)?;
        let mut g = Graph::new();
        let bound = m.bind(&mut g, false);
        let z_node = g.constant_array(z.clone());
        let c_node = g.constant_array(traj.condition.clone());
        let eps_node = m.guided_on(&mut g, &bound, guidance, z_node, tr.t_eval, c_node)?;
        let next = s.step_levels_on(&mut g, z_node, eps_node, tr.hi, tr.lo)?;
        z = g.value(next).clone();
        if !z.all_finite() {
            return Err(Error::NonFinite {
                context: "reconstruction latent",
                index: Some(i),
            });
        }
        deviations.push(z.sub(&traj.latents[i])?.norm());
    }
    let rel_displacement = relative_displacement(traj.z0(), &z)?;
    Ok(Reconstruction {
        z0_rec: z,
        deviations,
        rel_displacement,
    })
}

/// Instrumented reconstruction that replays the cached inversion noise
/// predictions instead of re-evaluating the model. Because each DDIM step is
/// the exact algebraic inverse under a shared prediction, this isolates
/// discretization displacement from programming error.
pub fn reconstruct_replay(s: &NoiseSchedule, traj: &Trajectory) -> Result<Reconstruction> {
    traj.schedule.matches(s)?;
    traj.validate()?;
    let k = s.num_transitions();
    let mut z = traj.z_top().clone();
    let mut deviations = Vec::with_capacity(k);
    for i in (0..k).rev() {
        let tr = s.transition(i)?;
        z = s.step_levels(&z, &traj.eps_cache[i], tr.hi, tr.lo)?;
        deviations.push(z.sub(&traj.latents[i])?.norm());
    }
    let rel_displacement = relative_displacement(traj.z0(), &z)?;
    Ok(Reconstruction {
        z0_rec: z,
        deviations,
        rel_displacement,
    })
}
