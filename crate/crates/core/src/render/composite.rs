//! Mask-aware pasting of rendered avatars onto background frames.

use crate::error::{Error, Result};
use crate::image::Imagef;

/// Composite a rendered RGBA image over a background, keeping pixels under
/// the object mask untouched: where the mask is set the background wins
/// outright; elsewhere standard alpha blending applies.
pub fn composite_overlay(
    rendered: &Imagef,
    background: &Imagef,
    object_mask: &[bool],
) -> Result<Imagef> {
    if !rendered.same_dims(background) {
        return Err(Error::Dimension(format!(
            "render {}x{} vs background {}x{}",
            rendered.width, rendered.height, background.width, background.height
        )));
    }
    if object_mask.len() != rendered.width * rendered.height {
        return Err(Error::Dimension("mask size mismatch".into()));
    }
    let mut out = background.clone();
    for (i, p) in out.data.iter_mut().enumerate() {
        if object_mask[i] {
            continue;
        }
        let r = rendered.data[i];
        let a = r[3];
        for ch in 0..3 {
            p[ch] = a * r[ch] + (1.0 - a) * p[ch];
        }
        p[3] = 1.0;
    }
    Ok(out)
}
