//! Zero-shot translation: domain gaps from embedding populations, sampling
//! with shifted per-step embeddings, and decoding latents to images.
//!
//! The latent space is pixel space: encoding flattens an image and decoding
//! clamps to [0, 1] and reshapes, so displacement numbers read directly in
//! image units.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::array::Array;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::invert::Trajectory;
use crate::mirror::PromptTrack;
use crate::model::{Denoiser, GuidanceConfig};
use crate::schedule::NoiseSchedule;

/// Direction from a source domain to a target domain in embedding space.
#[derive(Clone, Debug)]
pub struct DomainGap {
    pub delta: Array,
    pub source_labels: Vec<String>,
    pub target_labels: Vec<String>,
}

fn mean_embedding(m: &Denoiser, labels: &[String]) -> Result<Array> {
    if labels.is_empty() {
        return Err(Error::InvalidParam {
            name: "domain label set",
            message: String::from("must not be empty"),
        });
    }
    let mut acc = Array::zeros(alloc::vec![m.config().cond_dim]);
    for label in labels {
        acc = acc.add(&m.embed_label(label)?)?;
    }
    Ok(acc.scale(1.0 / labels.len() as f64))
}

/// `delta = mean(target embeddings) - mean(source embeddings)`.
pub fn domain_gap(m: &Denoiser, source: &[String], target: &[String]) -> Result<DomainGap> {
    let src = mean_embedding(m, source)?;
    let tgt = mean_embedding(m, target)?;
    let delta = tgt.sub(&src)?;
    delta.check_finite("domain gap")?;
    Ok(DomainGap {
        delta,
        source_labels: source.to_vec(),
        target_labels: target.to_vec(),
    })
}

/// Sample from the trajectory's top latent using the per-step embedding
/// `track[j] + strength * delta`.
pub fn edit_sample(
    m: &Denoiser,
    s: &NoiseSchedule,
    guidance: &GuidanceConfig,
    traj: &Trajectory,
    track: &PromptTrack,
    gap: &DomainGap,
    strength: f64,
) -> Result<Array> {
    if !strength.is_finite() {
        return Err(Error::InvalidParam {
            name: "edit strength",
            message: format!("must be finite, got {strength}"),
        });
    }
    traj.schedule.matches(s)?;
    traj.validate()?;
    let k = s.num_transitions();
    track.validate(k)?;
    let shift = gap.delta.scale(strength);
    let mut z = traj.z_top().clone();
    for i in (0..k).rev() {
        let tr = s.transition(i)?;
        // track index 0 holds the highest transition
        let c_eff = track.embeddings[k - 1 - i].add(&shift)?;
        let mut g = Graph::new();
        let bound = m.bind(&mut g, false);
        let z_node = g.constant_array(z.clone());
        let c_node = g.constant_array(c_eff);
        let eps = m.guided_on(&mut g, &bound, guidance, z_node, tr.t_eval, c_node)?;
        let next = s.step_levels_on(&mut g, z_node, eps, tr.hi, tr.lo)?;
        z = g.value(next).clone();
        if !z.all_finite() {
            return Err(Error::NonFinite {
                context: "edit latent",
                index: Some(i),
            });
        }
    }
    Ok(z)
}

/// Flatten an image latent back to `[h, w]`, clamping values into [0, 1].
pub fn decode(z0: &Array, h: usize, w: usize) -> Result<Array> {
    if z0.len() != h * w {
        return Err(Error::ShapeMismatch {
            op: "decode",
            left: alloc::vec![h, w],
            right: z0.shape().to_vec(),
        });
    }
    let clamped = z0.map(|v| {
        if v < 0.0 {
            0.0
        } else if v > 1.0 {
            1.0
        } else {
            v
        }
    });
    clamped.reshape(alloc::vec![h, w])
}

/// The identity encoder: flatten an `[h, w]` image into a latent vector.
pub fn encode(img: &Array) -> Result<Array> {
    match img.shape() {
        &[h, w] => img.reshape(alloc::vec![h * w]),
        other => Err(Error::ShapeMismatch {
            op: "encode",
            left: alloc::vec![0, 0],
            right: other.to_vec(),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::invert::invert;
    use crate::mirror::{mirror_reconstruct, RewriteConfig};
    use crate::model::DenoiserConfig;
    use alloc::vec;

    fn model() -> Denoiser {
        let mut cfg = DenoiserConfig::new(4, 30);
        cfg.hidden_width = 8;
        cfg.time_feature_dim = 4;
        cfg.cond_dim = 3;
        Denoiser::init(
            cfg,
            &[String::from("circle"), String::from("square")],
            5,
        )
        .unwrap()
    }

    #[test]
    fn gap_is_antisymmetric_and_zero_on_identity() {
        let m = model();
        let c = vec![String::from("circle")];
        let sq = vec![String::from("square")];
        let fwd = domain_gap(&m, &c, &sq).unwrap();
        let bwd = domain_gap(&m, &sq, &c).unwrap();
        assert_eq!(fwd.delta.scale(-1.0), bwd.delta);
        let none = domain_gap(&m, &c, &c).unwrap();
        assert!(none.delta.max_abs() == 0.0);
        // singleton sets reduce to an embedding difference
        let direct = m
            .embed_label("square")
            .unwrap()
            .sub(&m.embed_label("circle").unwrap())
            .unwrap();
        assert_eq!(fwd.delta, direct);
    }

    #[test]
    fn gap_rejects_empty_and_unknown() {
        let m = model();
        assert!(domain_gap(&m, &[], &[String::from("square")]).is_err());
        assert!(domain_gap(&m, &[String::from("dog")], &[String::from("square")]).is_err());
    }

    #[test]
    fn strength_zero_is_bit_identical_to_mirror_output() {
        let m = model();
        let s = NoiseSchedule::linear(30, 1e-4, 0.02)
            .unwrap()
            .infer_subsequence(5)
            .unwrap();
        let g = GuidanceConfig::default();
        let z0 = Array::vector(vec![0.2, 0.8, 0.5, 0.4]);
        let c = m.embed_label("circle").unwrap();
        let traj = invert(&m, &s, &z0, &c, &g).unwrap();
        let mirror = mirror_reconstruct(&m, &s, &g, &traj, &RewriteConfig::default()).unwrap();
        let gap = domain_gap(
            &m,
            &[String::from("circle")],
            &[String::from("square")],
        )
        .unwrap();
        let edited = edit_sample(&m, &s, &g, &traj, &mirror.track, &gap, 0.0).unwrap();
        assert_eq!(edited.data(), mirror.z0_rec.data());
    }

    #[test]
    fn misaligned_track_is_rejected() {
        let m = model();
        let s = NoiseSchedule::linear(30, 1e-4, 0.02)
            .unwrap()
            .infer_subsequence(5)
            .unwrap();
        let g = GuidanceConfig::default();
        let z0 = Array::vector(vec![0.1, 0.2, 0.3, 0.4]);
        let c = m.embed_label("circle").unwrap();
        let traj = invert(&m, &s, &z0, &c, &g).unwrap();
        let track = PromptTrack::constant(&c, 4); // should be 5
        let gap = domain_gap(&m, &[String::from("circle")], &[String::from("square")]).unwrap();
        assert!(matches!(
            edit_sample(&m, &s, &g, &traj, &track, &gap, 1.0),
            Err(Error::Misaligned { .. })
        ));
    }

    #[test]
    fn decode_encode_identity_and_clamping() {
        let img = Array::from_vec(vec![2, 2], vec![0.0, 1.0, 0.25, 0.75]).unwrap();
        let z = encode(&img).unwrap();
        assert_eq!(z.shape(), &[4]);
        let back = decode(&z, 2, 2).unwrap();
        assert_eq!(back, img);
        // out-of-range values clamp
        let wild = Array::vector(vec![-0.5, 1.5, 0.5, f64::MIN_POSITIVE]);
        let dec = decode(&wild, 2, 2).unwrap();
        assert_eq!(dec.data()[0], 0.0);
        assert_eq!(dec.data()[1], 1.0);
        assert_eq!(dec.data()[2], 0.5);
        // shape mismatch rejected
        assert!(decode(&z, 3, 2).is_err());
        assert!(encode(&z).is_err());
    }
}
