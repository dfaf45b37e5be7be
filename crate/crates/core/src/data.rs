//! Procedural toy image domains: anti-aliased shapes on a dark background,
//! deterministic under a seed.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::array::Array;
use crate::error::{Error, Result};
use crate::rng::CounterRng;

/// Shape families available as domains.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShapeKind {
    Circle,
    Square,
    Cross,
    Ring,
}

impl ShapeKind {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "circle" => Ok(ShapeKind::Circle),
            "square" => Ok(ShapeKind::Square),
            "cross" => Ok(ShapeKind::Cross),
            "ring" => Ok(ShapeKind::Ring),
            other => Err(Error::UnknownLabel {
                label: String::from(other),
            }),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ShapeKind::Circle => "circle",
            ShapeKind::Square => "square",
            ShapeKind::Cross => "cross",
            ShapeKind::Ring => "ring",
        }
    }

    /// Signed membership test for a sample point relative to the shape center.
    fn contains(&self, dx: f64, dy: f64, size: f64) -> bool {
        match self {
            ShapeKind::Circle => dx * dx + dy * dy <= size * size,
            ShapeKind::Square => dx.max(-dx).max(dy.max(-dy)) <= size,
            ShapeKind::Cross => {
                let thick = size * 0.35;
                let ax = if dx < 0.0 { -dx } else { dx };
                let ay = if dy < 0.0 { -dy } else { dy };
                (ax <= thick && ay <= size) || (ay <= thick && ax <= size)
            }
            ShapeKind::Ring => {
                let r2 = dx * dx + dy * dy;
                let inner = size * 0.55;
                r2 >= inner * inner && r2 <= size * size
            }
        }
    }
}

/// A generated image with the parameters that produced it.
#[derive(Clone, Debug)]
pub struct ToyImage {
    pub pixels: Array, // [h, w] in [0, 1]
    pub label: String,
    pub seed: u64,
    pub center: (f64, f64),
    pub size: f64,
    pub intensity: f64,
}

/// Dataset description: which domains, how many images each, image size,
/// seed, and the parameter ranges for the shape draws.
#[derive(Clone, Debug)]
pub struct DatasetSpec {
    pub domains: Vec<String>,
    pub per_domain: usize,
    pub image_size: usize,
    pub seed: u64,
    pub center_jitter: f64,
    pub size_range: (f64, f64),
    pub intensity_range: (f64, f64),
}

impl DatasetSpec {
    pub fn new(domains: Vec<String>, per_domain: usize, image_size: usize, seed: u64) -> Self {
        DatasetSpec {
            domains,
            per_domain,
            image_size,
            seed,
            center_jitter: 1.5,
            size_range: (3.0, 5.5),
            intensity_range: (0.6, 1.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.domains.is_empty() {
            return Err(Error::InvalidParam {
                name: "dataset domains",
                message: String::from("must name at least one domain"),
            });
        }
        for d in &self.domains {
            ShapeKind::parse(d)?;
        }
        if self.per_domain == 0 {
            return Err(Error::InvalidParam {
                name: "per_domain",
                message: String::from("must be positive"),
            });
        }
        if self.image_size < 7 {
            return Err(Error::InvalidParam {
                name: "image_size",
                message: format!(
                    "must be at least 7 (the SSIM window), got {}",
                    self.image_size
                ),
            });
        }
        let (lo, hi) = self.size_range;
        if !(lo >= 0.0 && hi >= lo) {
            return Err(Error::InvalidParam {
                name: "size_range",
                message: format!("invalid range [{lo}, {hi}]"),
            });
        }
        let (ilo, ihi) = self.intensity_range;
        if !(ilo > 0.0 && ihi >= ilo && ihi <= 1.0) {
            return Err(Error::InvalidParam {
                name: "intensity_range",
                message: format!("invalid range [{ilo}, {ihi}]"),
            });
        }
        if !(self.center_jitter >= 0.0) {
            return Err(Error::InvalidParam {
                name: "center_jitter",
                message: format!("must be non-negative, got {}", self.center_jitter),
            });
        }
        Ok(())
    }
}

/// Rasterize one shape with 4x4 supersampling.
///
/// Degenerate rule: a circle of size 0 lights exactly the pixel containing
/// its center.
pub fn rasterize(
    kind: ShapeKind,
    image_size: usize,
    center: (f64, f64),
    size: f64,
    intensity: f64,
) -> Array {
    let n = image_size;
    let mut data = Vec::with_capacity(n * n);
    if kind == ShapeKind::Circle && size == 0.0 {
        for r in 0..n {
            for c in 0..n {
                let hit = (center.1 as usize).min(n - 1) == r && (center.0 as usize).min(n - 1) == c;
                data.push(if hit { intensity } else { 0.0 });
            }
        }
        return Array::from_vec(alloc::vec![n, n], data).expect("sized");
    }
    const SS: usize = 4;
    let inv = 1.0 / SS as f64;
    for r in 0..n {
        for c in 0..n {
            let mut hits = 0usize;
            for sr in 0..SS {
                for sc in 0..SS {
                    let y = r as f64 + (sr as f64 + 0.5) * inv;
                    let x = c as f64 + (sc as f64 + 0.5) * inv;
                    if kind.contains(x - center.0, y - center.1, size) {
                        hits += 1;
                    }
                }
            }
            data.push(intensity * hits as f64 / (SS * SS) as f64);
        }
    }
    Array::from_vec(alloc::vec![n, n], data).expect("sized")
}

/// Generate the dataset described by `spec`, deterministically under its seed.
pub fn generate(spec: &DatasetSpec) -> Result<Vec<ToyImage>> {
    spec.validate()?;
    let mut out = Vec::with_capacity(spec.domains.len() * spec.per_domain);
    let root = CounterRng::new(spec.seed, 0);
    for (d_idx, domain) in spec.domains.iter().enumerate() {
        let kind = ShapeKind::parse(domain)?;
        for i in 0..spec.per_domain {
            let image_seed = (d_idx as u64) << 32 | i as u64;
            let mut rng = root.substream(image_seed);
            let mid = spec.image_size as f64 / 2.0;
            let cx = mid + rng.next_range(-spec.center_jitter, spec.center_jitter);
            let cy = mid + rng.next_range(-spec.center_jitter, spec.center_jitter);
            let size = rng.next_range(spec.size_range.0, spec.size_range.1);
            let intensity = rng.next_range(spec.intensity_range.0, spec.intensity_range.1);
            let pixels = rasterize(kind, spec.image_size, (cx, cy), size, intensity);
            debug_assert!(pixels.data().iter().all(|v| (0.0..=1.0).contains(v)));
            out.push(ToyImage {
                pixels,
                label: domain.clone(),
                seed: image_seed,
                center: (cx, cy),
                size,
                intensity,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;

    fn spec() -> DatasetSpec {
        DatasetSpec::new(
            vec!["circle".to_string(), "square".to_string()],
            20,
            16,
            99,
        )
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate(&spec()).unwrap();
        let b = generate(&spec()).unwrap();
        assert_eq!(a.len(), 40);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.pixels, y.pixels);
            assert_eq!(x.label, y.label);
        }
    }

    #[test]
    fn pixels_stay_in_range_and_shapes_are_lit() {
        for img in generate(&spec()).unwrap() {
            assert!(img.pixels.data().iter().all(|v| (0.0..=1.0).contains(v)));
            let mass: f64 = img.pixels.data().iter().sum();
            assert!(mass > 1.0, "{} too faint: {mass}", img.label);
        }
    }

    #[test]
    fn degenerate_circle_lights_single_pixel() {
        let img = rasterize(ShapeKind::Circle, 16, (8.3, 7.6), 0.0, 0.9);
        let lit: Vec<usize> = img
            .data()
            .iter()
            .enumerate()
            .filter(|(_, v)| **v > 0.0)
            .map(|(i, _)| i)
            .collect();
        assert_eq!(lit.len(), 1);
        assert_eq!(lit[0], 7 * 16 + 8); // row 7 (center y), column 8 (center x)
        assert_eq!(img.data()[lit[0]], 0.9);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut s = spec();
        s.per_domain = 0;
        assert!(s.validate().is_err());
        let mut s = spec();
        s.image_size = 6;
        assert!(s.validate().is_err());
        let mut s = spec();
        s.domains = vec!["triangle".to_string()];
        assert!(s.validate().is_err());
        let mut s = spec();
        s.intensity_range = (0.0, 1.2);
        assert!(s.validate().is_err());
    }

    #[test]
    fn domains_look_different() {
        let imgs = generate(&spec()).unwrap();
        let circles: Vec<&ToyImage> = imgs.iter().filter(|i| i.label == "circle").collect();
        let squares: Vec<&ToyImage> = imgs.iter().filter(|i| i.label == "square").collect();
        // mean images differ measurably
        let mut diff = 0.0;
        let n = circles.len().min(squares.len());
        for i in 0..n {
            diff += circles[i]
                .pixels
                .sub(&squares[i].pixels)
                .unwrap()
                .max_abs();
        }
        assert!(diff / n as f64 > 0.1);
    }

    #[test]
    fn all_kinds_rasterize() {
        for kind in [
            ShapeKind::Circle,
            ShapeKind::Square,
            ShapeKind::Cross,
            ShapeKind::Ring,
        ] {
            let img = rasterize(kind, 16, (8.0, 8.0), 4.0, 1.0);
            let mass: f64 = img.data().iter().sum();
            assert!(mass > 2.0, "{:?} produced {mass}", kind);
        }
    }
}
