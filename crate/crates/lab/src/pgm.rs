//! Plain-text PGM (P2) image files, values scaled to 0-255.
//!
//! The writer emits one header comment, the dimensions, the maxval, then one
//! pixel per line, so files are diffable. Reading accepts any
//! whitespace-separated plain PGM with `#` comments and maxval up to 255.

use std::fs;
use std::path::Path;

use difflab_core::Array;

use crate::error::LabError;

/// Serialize an `[h, w]` image with values in [0, 1].
pub fn to_pgm_string(img: &Array) -> Result<String, LabError> {
    let (h, w) = match img.shape() {
        &[h, w] => (h, w),
        other => {
            return Err(LabError::Format(format!(
                "expected a rank-2 image, got shape {other:?}"
            )))
        }
    };
    let mut out = String::with_capacity(16 + 4 * h * w);
    out.push_str("P2\n");
    out.push_str("# difflab PGM\n");
    out.push_str(&format!("{w} {h}\n255\n"));
    for v in img.data() {
        if !(0.0..=1.0).contains(v) {
            return Err(LabError::Format(format!(
                "pixel value {v} outside [0, 1]; decode before writing"
            )));
        }
        let q = (v * 255.0).round() as u32;
        out.push_str(&format!("{q}\n"));
    }
    Ok(out)
}

pub fn write_pgm(path: &Path, img: &Array) -> Result<(), LabError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, to_pgm_string(img)?)?;
    Ok(())
}

/// Parse a plain PGM into an `[h, w]` image with values in [0, 1].
pub fn from_pgm_string(text: &str) -> Result<Array, LabError> {
    let mut tokens = Vec::new();
    for line in text.lines() {
        let body = match line.find('#') {
            Some(i) => &line[..i],
            None => line,
        };
        tokens.extend(body.split_whitespace().map(|s| s.to_string()));
    }
    let mut it = tokens.into_iter();
    let magic = it
        .next()
        .ok_or_else(|| LabError::Format("empty PGM file".into()))?;
    if magic != "P2" {
        return Err(LabError::Format(format!(
            "bad PGM magic '{magic}', expected 'P2'"
        )));
    }
    let mut next_usize = |what: &str| -> Result<usize, LabError> {
        it.next()
            .ok_or_else(|| LabError::Format(format!("PGM truncated before {what}")))?
            .parse::<usize>()
            .map_err(|_| LabError::Format(format!("PGM {what} is not an integer")))
    };
    let w = next_usize("width")?;
    let h = next_usize("height")?;
    let maxval = next_usize("maxval")?;
    if maxval == 0 || maxval > 255 {
        return Err(LabError::Format(format!(
            "PGM maxval {maxval} outside supported range 1..=255"
        )));
    }
    let mut data = Vec::with_capacity(w * h);
    for _ in 0..w * h {
        let v = next_usize("pixel")?;
        if v > maxval {
            return Err(LabError::Format(format!(
                "pixel value {v} exceeds maxval {maxval}"
            )));
        }
        data.push(v as f64 / maxval as f64);
    }
    if it.next().is_some() {
        return Err(LabError::Format("trailing data after pixels".into()));
    }
    Array::from_vec(vec![h, w], data).map_err(|e| LabError::Format(e.to_string()))
}

pub fn read_pgm(path: &Path) -> Result<Array, LabError> {
    let text = fs::read_to_string(path)
        .map_err(|e| LabError::MissingInput(format!("{}: {e}", path.display())))?;
    from_pgm_string(&text)
}

/// Concatenate equal-height panels side by side with a one-pixel white
/// separator column, for the comparison grids.
pub fn hstack_panels(panels: &[&Array]) -> Result<Array, LabError> {
    let first = panels
        .first()
        .ok_or_else(|| LabError::Format("no panels".into()))?;
    let (h, _) = match first.shape() {
        &[h, w] => (h, w),
        _ => return Err(LabError::Format("panels must be rank-2".into())),
    };
    let mut total_w = 0;
    for p in panels {
        match p.shape() {
            &[ph, pw] if ph == h => total_w += pw,
            other => {
                return Err(LabError::Format(format!(
                    "panel shape {other:?} does not match height {h}"
                )))
            }
        }
    }
    total_w += panels.len() - 1;
    let mut data = vec![1.0; h * total_w];
    let mut x0 = 0usize;
    for p in panels {
        let pw = p.shape()[1];
        for r in 0..h {
            let src = &p.data()[r * pw..(r + 1) * pw];
            data[r * total_w + x0..r * total_w + x0 + pw].copy_from_slice(src);
        }
        x0 += pw + 1;
    }
    Array::from_vec(vec![h, total_w], data).map_err(|e| LabError::Format(e.to_string()))
}
