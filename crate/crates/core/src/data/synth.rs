//! Small synthetic datasets: oriented bars (classification), rectangles and
//! discs (segmentation) and class-dependent waveforms (time series).

use std::f64::consts::PI;

use super::{Samples, TimeSeriesDataset};
use crate::error::{invalid, Result};
use crate::tensor::{Prng, Tensor};

fn add_noise(data: &mut [f64], noise: f64, rng: &mut Prng) {
    if noise > 0.0 {
        for v in data.iter_mut() {
            *v = (*v + noise * rng.normal()).clamp(0.0, 1.0);
        }
    }
}

/// `size × size` grayscale images of one bright bar; class `c` is the bar at
/// angle `c·180°/n_orientations` (0 = horizontal, counter-clockwise on screen).
/// Samples are grouped class by class.
pub fn gen_oriented_bars(n_per_class: usize, size: usize, n_orientations: usize, noise: f64, rng: &mut Prng) -> Result<Samples> {
    if ![2, 4, 8].contains(&n_orientations) {
        return invalid(format!("n_orientations must be 2, 4 or 8, got {n_orientations}"));
    }
    if size < 8 {
        return invalid(format!("image size must be at least 8, got {size}"));
    }
    let n = n_per_class * n_orientations;
    let mut data = vec![0.0; n * size * size];
    let mut labels = Vec::with_capacity(n);
    let c = (size as f64 - 1.0) / 2.0;
    for class in 0..n_orientations {
        let theta = class as f64 * PI / n_orientations as f64;
        let (dx, dy) = (theta.cos(), -theta.sin());
        for _ in 0..n_per_class {
            let idx = labels.len();
            let jitter = size as f64 / 10.0;
            let (ox, oy) = (c + rng.uniform(-jitter, jitter), c + rng.uniform(-jitter, jitter));
            let half_len = size as f64 * rng.uniform(0.3, 0.42);
            let half_width = 0.75;
            let img = &mut data[idx * size * size..(idx + 1) * size * size];
            for i in 0..size {
                for j in 0..size {
                    let (px, py) = (j as f64 - ox, i as f64 - oy);
                    let along = px * dx + py * dy;
                    let across = (px * dy - py * dx).abs();
                    if along.abs() <= half_len && across <= half_width {
                        img[i * size + j] = 1.0;
                    }
                }
            }
            add_noise(img, noise, rng);
            labels.push(class);
        }
    }
    Samples::new(Tensor::new(vec![n, 1, size, size], data)?, labels, None, n_orientations)
}

/// Rotates every image 90° counter-clockwise and relabels each bar by the
/// orientation it now has.
pub fn rotate_bars_90(data: &Samples) -> Result<Samples> {
    let s = data.inputs.shape().to_vec();
    let (n, ch, h, w) = (s[0], s[1], s[2], s[3]);
    if h != w {
        return invalid("rotation needs square images");
    }
    let mut out = Tensor::zeros(&s);
    for b in 0..n {
        for c in 0..ch {
            let base = (b * ch + c) * h * w;
            for i in 0..h {
                for j in 0..w {
                    out.data_mut()[base + i * w + j] = data.inputs.data()[base + j * w + (w - 1 - i)];
                }
            }
        }
    }
    let k = data.num_classes;
    let labels = data.labels.iter().map(|&l| (l + k / 2) % k).collect();
    Samples::new(out, labels, None, k)
}

/// Images with 1–3 non-overlapping filled rectangles or discs. Mask labels
/// are 0 background, 1 rectangle, 2 disc; the per-image label is the number
/// of shapes minus one.
pub fn gen_shapes_seg(n: usize, size: usize, noise: f64, rng: &mut Prng) -> Result<Samples> {
    if size < 16 {
        return invalid(format!("image size must be at least 16, got {size}"));
    }
    let px = size * size;
    let mut data = vec![0.0; n * px];
    let mut masks = vec![0usize; n * px];
    let mut labels = Vec::with_capacity(n);
    for b in 0..n {
        let mask = &mut masks[b * px..(b + 1) * px];
        let img = &mut data[b * px..(b + 1) * px];
        let want = 1 + rng.below(3);
        let mut placed = 0;
        for _attempt in 0..50 {
            if placed == want {
                break;
            }
            let kind = 1 + rng.below(2);
            let extent = 3 + rng.below(size / 4);
            let cy = rng.below(size);
            let cx = rng.below(size);
            let covers = |i: usize, j: usize| {
                let (dy, dx) = (i as f64 - cy as f64, j as f64 - cx as f64);
                if kind == 1 {
                    dy.abs() <= extent as f64 / 2.0 && dx.abs() <= extent as f64 * 0.75
                } else {
                    dy * dy + dx * dx <= (extent as f64 / 2.0).powi(2)
                }
            };
            // reject shapes touching the border or within one pixel of another shape
            let mut ok = true;
            let mut cells = Vec::new();
            'scan: for i in 0..size {
                for j in 0..size {
                    if !covers(i, j) {
                        continue;
                    }
                    if i == 0 || j == 0 || i == size - 1 || j == size - 1 {
                        ok = false;
                        break 'scan;
                    }
                    for (ni, nj) in [(i - 1, j), (i + 1, j), (i, j - 1), (i, j + 1), (i, j)] {
                        if mask[ni * size + nj] != 0 {
                            ok = false;
                            break 'scan;
                        }
                    }
                    cells.push(i * size + j);
                }
            }
            if !ok || cells.is_empty() {
                continue;
            }
            let intensity = rng.uniform(0.5, 1.0);
            for k in cells {
                mask[k] = kind;
                img[k] = intensity;
            }
            placed += 1;
        }
        add_noise(img, noise, rng);
        labels.push(placed.max(1) - 1);
    }
    Samples::new(Tensor::new(vec![n, 1, size, size], data)?, labels, Some(masks), 3)
}

/// Noisy waveforms whose frequency and shape depend on the class; labels in
/// the table run `1..=n_classes` as in UCR files. Values are z-normalized.
pub fn gen_synth_timeseries(n_per_class: usize, length: usize, n_classes: usize, noise: f64, rng: &mut Prng) -> Result<TimeSeriesDataset> {
    if n_classes < 2 || length < 8 || n_per_class == 0 {
        return invalid("synthetic series need >= 2 classes, length >= 8 and at least one sample per class");
    }
    let n = n_per_class * n_classes;
    let mut data = Vec::with_capacity(n * length);
    let mut labels = Vec::with_capacity(n);
    for class in 0..n_classes {
        let freq = 1.0 + class as f64 * 0.75;
        for _ in 0..n_per_class {
            let phase = rng.uniform(0.0, 2.0 * PI);
            let amp = rng.uniform(0.8, 1.2);
            let mut row: Vec<f64> = (0..length)
                .map(|t| {
                    let x = 2.0 * PI * freq * t as f64 / length as f64 + phase;
                    let wave = if class % 2 == 0 { x.sin() } else { x.sin().signum() * 0.8 };
                    amp * wave + noise * rng.normal()
                })
                .collect();
            let mean = row.iter().sum::<f64>() / length as f64;
            let std = (row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / length as f64).sqrt().max(1e-12);
            row.iter_mut().for_each(|v| *v = (*v - mean) / std);
            data.extend(row);
            labels.push(class);
        }
    }
    Ok(TimeSeriesDataset {
        series: Tensor::new(vec![n, length], data)?,
        labels,
        label_table: (1..=n_classes as i64).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bar_counts_and_determinism() {
        let a = gen_oriented_bars(10, 16, 4, 0.05, &mut Prng::new(7)).unwrap();
        assert_eq!(a.len(), 40);
        for c in 0..4 {
            assert_eq!(a.labels.iter().filter(|&&l| l == c).count(), 10);
        }
        assert_eq!(a, gen_oriented_bars(10, 16, 4, 0.05, &mut Prng::new(7)).unwrap());
        assert!(a.inputs.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn two_orientations_separable_by_extent() {
        let d = gen_oriented_bars(20, 16, 2, 0.0, &mut Prng::new(1)).unwrap();
        for b in 0..d.len() {
            let img = &d.inputs.data()[b * 256..(b + 1) * 256];
            let rows = (0..16).filter(|i| (0..16).any(|j| img[i * 16 + j] > 0.5)).count();
            let cols = (0..16).filter(|j| (0..16).any(|i| img[i * 16 + j] > 0.5)).count();
            assert_eq!(usize::from(rows > cols), d.labels[b]);
        }
    }

    #[test]
    fn rotation_relabels() {
        let d = gen_oriented_bars(3, 16, 4, 0.0, &mut Prng::new(2)).unwrap();
        let r = rotate_bars_90(&d).unwrap();
        assert_eq!(r.labels[0], 2);
        let four = (0..3).try_fold(r.clone(), |acc, _| rotate_bars_90(&acc)).unwrap();
        assert_eq!(four.inputs, d.inputs);
    }

    #[test]
    fn shapes_masks_match_support() {
        let d = gen_shapes_seg(20, 24, 0.0, &mut Prng::new(4)).unwrap();
        let m = d.masks.as_ref().unwrap();
        assert!(m.iter().all(|&l| l <= 2));
        for (v, &l) in d.inputs.data().iter().zip(m) {
            assert_eq!(*v > 0.0, l != 0);
        }
        assert!(m.iter().any(|&l| l == 1) && m.iter().any(|&l| l == 2));
    }

    #[test]
    fn series_shape_and_labels() {
        let d = gen_synth_timeseries(5, 32, 3, 0.1, &mut Prng::new(0)).unwrap();
        assert_eq!(d.series.shape(), &[15, 32]);
        assert_eq!(d.label_table, vec![1, 2, 3]);
        assert_eq!(d.labels[14], 2);
    }
}
