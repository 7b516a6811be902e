//! Random image augmentation: flip, rotate, zoom, brightness, applied in
//! that order. Geometric steps use nearest-neighbour sampling with zero fill
//! and are shared with the mask; brightness touches the image only.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::tensor::{Prng, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentConfig {
    pub horizontal_flip: bool,
    pub rotation_range_deg: f64,
    pub zoom_range: f64,
    pub brightness_range: [f64; 2],
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self { horizontal_flip: true, rotation_range_deg: 15.0, zoom_range: 0.2, brightness_range: [0.8, 1.2] }
    }
}

impl AugmentConfig {
    /// A pipeline that leaves every image untouched.
    pub fn identity() -> Self {
        Self { horizontal_flip: false, rotation_range_deg: 0.0, zoom_range: 0.0, brightness_range: [1.0, 1.0] }
    }
}

/// Concrete draws for one image.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentParams {
    pub flip: bool,
    pub angle_deg: f64,
    pub zoom: f64,
    pub brightness: f64,
}

impl AugmentParams {
    pub fn sample(cfg: &AugmentConfig, rng: &mut Prng) -> Self {
        let flip = cfg.horizontal_flip && rng.bernoulli(0.5);
        let r = cfg.rotation_range_deg;
        let angle_deg = if r > 0.0 { rng.uniform(-r, r) } else { 0.0 };
        let z = cfg.zoom_range;
        let zoom = if z > 0.0 { rng.uniform(1.0 - z, 1.0 + z) } else { 1.0 };
        let [lo, hi] = cfg.brightness_range;
        let brightness = if hi > lo { rng.uniform(lo, hi) } else { lo };
        Self { flip, angle_deg, zoom, brightness }
    }

    /// Source pixel for output pixel `(i, j)` of an `h × w` grid, if inside.
    ///
    /// The forward transform is zoom ∘ rotate ∘ flip about the centre, so
    /// the inverse undoes zoom first, then rotation (counter-clockwise
    /// positive, as seen on screen), then the flip.
    pub fn source(&self, i: usize, j: usize, h: usize, w: usize) -> Option<(usize, usize)> {
        let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
        let (mut y, mut x) = ((i as f64 - cy) / self.zoom, (j as f64 - cx) / self.zoom);
        if self.angle_deg != 0.0 {
            let (s, c) = self.angle_deg.to_radians().sin_cos();
            // rows grow downward, so a visual CCW turn by a maps (x, y) -> (c x + s y, -s x + c y);
            // the inverse applies the transpose
            let (xr, yr) = (c * x - s * y, s * x + c * y);
            x = xr;
            y = yr;
        }
        let (sy, mut sx) = ((y + cy).round(), (x + cx).round());
        if self.flip {
            sx = w as f64 - 1.0 - sx;
        }
        (sy >= 0.0 && sx >= 0.0 && sy < h as f64 && sx < w as f64).then_some((sy as usize, sx as usize))
    }
}

/// Transforms one `[C, H, W]` image and, optionally, its `H·W` label map.
pub fn augment(image: &Tensor, mask: Option<&[usize]>, cfg: &AugmentConfig, rng: &mut Prng) -> Result<(Tensor, Option<Vec<usize>>)> {
    image.expect_rank("augment", "image", 3)?;
    let p = AugmentParams::sample(cfg, rng);
    Ok(apply(image, mask, &p))
}

pub fn apply(image: &Tensor, mask: Option<&[usize]>, p: &AugmentParams) -> (Tensor, Option<Vec<usize>>) {
    let (c, h, w) = (image.dim(0), image.dim(1), image.dim(2));
    let mut out = Tensor::zeros(image.shape());
    let mut out_mask = mask.map(|_| vec![0usize; h * w]);
    for i in 0..h {
        for j in 0..w {
            let Some((si, sj)) = p.source(i, j, h, w) else { continue };
            for ch in 0..c {
                let v = image.data()[(ch * h + si) * w + sj] * p.brightness;
                out.data_mut()[(ch * h + i) * w + j] = v.clamp(0.0, 1.0);
            }
            if let (Some(om), Some(m)) = (out_mask.as_mut(), mask) {
                om[i * w + j] = m[si * w + sj];
            }
        }
    }
    (out, out_mask)
}
