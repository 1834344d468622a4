//! Binary morphology and Canny edge detection on depth buffers.

use std::collections::VecDeque;

use crate::error::{GeomError, Result};
use crate::image::{ImageBuffer, Semantic};

pub const CANNY_SIGMA: f64 = 1.0;
pub const CANNY_LOW: f64 = 0.05;
pub const CANNY_HIGH: f64 = 0.15;
const RANGE_FLOOR: f64 = 1e-6;

fn check_kernel(kernel: usize) -> Result<()> {
    if kernel == 0 || kernel.is_multiple_of(2) {
        return Err(GeomError::InvalidParameter(format!(
            "kernel size must be odd and >= 1, got {kernel}"
        )));
    }
    Ok(())
}

fn check_mask(mask: &ImageBuffer) -> Result<()> {
    if mask.semantic() != Semantic::Mask {
        return Err(GeomError::InvalidImage(format!(
            "expected a mask buffer, got {:?}",
            mask.semantic()
        )));
    }
    Ok(())
}

// Separable square max (dilate) or min (erode). Pixels outside the image do
// not take part.
fn morph(mask: &ImageBuffer, kernel: usize, dilate: bool) -> ImageBuffer {
    let (w, h) = (mask.width(), mask.height());
    let r = (kernel / 2) as isize;
    let pass = |src: &[bool], horizontal: bool| -> Vec<bool> {
        let mut out = vec![false; w * h];
        for y in 0..h {
            for x in 0..w {
                let mut acc = !dilate;
                for d in -r..=r {
                    let (xx, yy) = if horizontal {
                        (x as isize + d, y as isize)
                    } else {
                        (x as isize, y as isize + d)
                    };
                    if xx < 0 || yy < 0 || xx >= w as isize || yy >= h as isize {
                        continue;
                    }
                    let v = src[yy as usize * w + xx as usize];
                    if dilate {
                        acc |= v;
                    } else {
                        acc &= v;
                    }
                }
                out[y * w + x] = acc;
            }
        }
        out
    };
    let src: Vec<bool> = (0..w * h).map(|i| mask.at(i) != 0.0).collect();
    let out = pass(&pass(&src, true), false);
    ImageBuffer::mask_from_fn(w, h, |x, y| out[y * w + x])
}

/// Dilation with a `kernel × kernel` square.
pub fn dilate(mask: &ImageBuffer, kernel: usize) -> Result<ImageBuffer> {
    check_kernel(kernel)?;
    check_mask(mask)?;
    Ok(morph(mask, kernel, true))
}

/// Erosion with a `kernel × kernel` square.
pub fn erode(mask: &ImageBuffer, kernel: usize) -> Result<ImageBuffer> {
    check_kernel(kernel)?;
    check_mask(mask)?;
    Ok(morph(mask, kernel, false))
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as isize;
    let k: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

fn blur(src: &[f64], w: usize, h: usize, sigma: f64) -> Vec<f64> {
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = (-r..=r)
                .map(|d| k[(d + r) as usize] * src[y * w + clamp(x as isize + d, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = (-r..=r)
                .map(|d| k[(d + r) as usize] * tmp[clamp(y as isize + d, h) * w + x])
                .sum();
        }
    }
    out
}

/// Canny edges of a scalar grid. Gradients are Sobel responses scaled by 1/8,
/// so thresholds are in value units per pixel.
pub fn canny(values: &[f64], w: usize, h: usize, sigma: f64, low: f64, high: f64) -> Vec<bool> {
    assert_eq!(values.len(), w * h);
    let g = blur(values, w, h, sigma);
    let at = |x: isize, y: isize| {
        g[y.clamp(0, h as isize - 1) as usize * w + x.clamp(0, w as isize - 1) as usize]
    };
    let mut mag = vec![0.0; w * h];
    let mut dir = vec![0u8; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let gx = (at(x + 1, y - 1) + 2.0 * at(x + 1, y) + at(x + 1, y + 1)
                - at(x - 1, y - 1)
                - 2.0 * at(x - 1, y)
                - at(x - 1, y + 1))
                / 8.0;
            let gy = (at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1)
                - at(x - 1, y - 1)
                - 2.0 * at(x, y - 1)
                - at(x + 1, y - 1))
                / 8.0;
            let i = y as usize * w + x as usize;
            mag[i] = gx.hypot(gy);
            let mut a = gy.atan2(gx).to_degrees();
            if a < 0.0 {
                a += 180.0;
            }
            dir[i] = if !(22.5..157.5).contains(&a) {
                0
            } else if a < 67.5 {
                1
            } else if a < 112.5 {
                2
            } else {
                3
            };
        }
    }
    let m = |x: isize, y: isize| {
        if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
            0.0
        } else {
            mag[y as usize * w + x as usize]
        }
    };
    let mut thin = vec![0.0; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let i = y as usize * w + x as usize;
            let v = mag[i];
            if v <= 0.0 {
                continue;
            }
            let (dx, dy) = match dir[i] {
                0 => (1, 0),
                1 => (1, 1),
                2 => (0, 1),
                _ => (-1, 1),
            };
            // plateau pixels keep only their first occurrence along the gradient
            if v >= m(x - dx, y - dy) && v > m(x + dx, y + dy) {
                thin[i] = v;
            }
        }
    }
    let mut edge = vec![false; w * h];
    let mut queue = VecDeque::new();
    for i in 0..w * h {
        if thin[i] >= high {
            edge[i] = true;
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        let (x, y) = ((i % w) as isize, (i / w) as isize);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (xx, yy) = (x + dx, y + dy);
                if xx < 0 || yy < 0 || xx >= w as isize || yy >= h as isize {
                    continue;
                }
                let j = yy as usize * w + xx as usize;
                if !edge[j] && thin[j] >= low {
                    edge[j] = true;
                    queue.push_back(j);
                }
            }
        }
    }
    edge
}

/// Canny edges of a depth buffer inside `fg`. Depth is rescaled to [0, 1] over
/// the foreground and background pixels take the value of the nearest
/// foreground pixel, so only discontinuities within the foreground respond.
pub fn depth_edges(depth: &ImageBuffer, fg: &ImageBuffer) -> Result<ImageBuffer> {
    if !depth.same_size(fg) {
        return Err(GeomError::ShapeMismatch(format!(
            "depth {}x{} vs mask {}x{}",
            depth.width(),
            depth.height(),
            fg.width(),
            fg.height()
        )));
    }
    let (w, h) = (depth.width(), depth.height());
    let n = w * h;
    let inside: Vec<bool> = (0..n).map(|i| fg.at(i) != 0.0).collect();
    if !inside.iter().any(|&b| b) {
        return Ok(ImageBuffer::mask(w, h));
    }
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for i in 0..n {
        if inside[i] {
            lo = lo.min(depth.at(i));
            hi = hi.max(depth.at(i));
        }
    }
    // rounding noise on a flat surface must not be stretched to the full range
    let range = (hi - lo).max(RANGE_FLOOR * hi.abs().max(lo.abs()).max(1.0));
    let mut vals = vec![0.0; n];
    let mut seen = vec![false; n];
    let mut queue = VecDeque::new();
    for i in 0..n {
        if inside[i] {
            vals[i] = (depth.at(i) - lo) / range;
            seen[i] = true;
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        let (x, y) = (i % w, i / w);
        let nbrs = [
            (x > 0).then(|| i - 1),
            (x + 1 < w).then(|| i + 1),
            (y > 0).then(|| i - w),
            (y + 1 < h).then(|| i + w),
        ];
        for j in nbrs.into_iter().flatten() {
            if !seen[j] {
                seen[j] = true;
                vals[j] = vals[i];
                queue.push_back(j);
            }
        }
    }
    let e = canny(&vals, w, h, CANNY_SIGMA, CANNY_LOW, CANNY_HIGH);
    Ok(ImageBuffer::mask_from_fn(w, h, |x, y| {
        e[y * w + x] && inside[y * w + x]
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn single(w: usize, h: usize, px: usize, py: usize) -> ImageBuffer {
        ImageBuffer::mask_from_fn(w, h, |x, y| x == px && y == py)
    }

    #[test]
    fn kernel_one_is_identity() {
        let m = ImageBuffer::mask_from_fn(9, 7, |x, y| (x * y) % 3 == 1);
        assert_eq!(dilate(&m, 1).unwrap(), m);
        assert_eq!(erode(&m, 1).unwrap(), m);
    }

    #[test]
    fn single_pixel_becomes_block() {
        let d = dilate(&single(9, 9, 4, 4), 3).unwrap();
        assert_eq!(d.count_set(), 9);
        for y in 3..=5 {
            for x in 3..=5 {
                assert!(d.is_set(x, y));
            }
        }
    }

    #[test]
    fn even_kernel_rejected() {
        assert!(dilate(&single(4, 4, 0, 0), 4).is_err());
        assert!(erode(&single(4, 4, 0, 0), 0).is_err());
    }

    #[test]
    fn erosion_ignores_image_border() {
        let full = ImageBuffer::mask_from_fn(6, 6, |_, _| true);
        assert_eq!(erode(&full, 3).unwrap(), full);
    }

    #[test]
    fn constant_depth_has_no_edges() {
        let fg = ImageBuffer::mask_from_fn(32, 32, |x, y| (8..24).contains(&x) && (8..24).contains(&y));
        let mut depth = ImageBuffer::depth(32, 32);
        for y in 8..24 {
            for x in 8..24 {
                depth.set(x, y, 1.7);
            }
        }
        assert_eq!(depth_edges(&depth, &fg).unwrap().count_set(), 0);
    }

    #[test]
    fn step_gives_thin_seam() {
        let fg = ImageBuffer::mask_from_fn(40, 20, |_, _| true);
        let mut depth = ImageBuffer::depth(40, 20);
        for y in 0..20 {
            for x in 0..40 {
                depth.set(x, y, if x < 20 { 1.0 } else { 2.0 });
            }
        }
        let e = depth_edges(&depth, &fg).unwrap();
        for y in 0..20 {
            let cols: Vec<usize> = (0..40).filter(|&x| e.is_set(x, y)).collect();
            assert_eq!(cols, vec![20], "row {y}");
        }
    }

    proptest! {
        #[test]
        fn dilation_composes(bits in proptest::collection::vec(any::<bool>(), 12 * 10)) {
            let m = ImageBuffer::mask_from_fn(12, 10, |x, y| bits[y * 12 + x]);
            let twice = dilate(&dilate(&m, 3).unwrap(), 3).unwrap();
            prop_assert_eq!(twice, dilate(&m, 5).unwrap());
        }
    }
}
