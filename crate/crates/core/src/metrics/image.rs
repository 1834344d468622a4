use std::collections::BTreeMap;

use crate::error::{GeomError, Result};
use crate::image::ImageBuffer;

const L_MAX: f64 = 255.0;
const SSIM_RADIUS: usize = 5;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn check_pair(a: &ImageBuffer, b: &ImageBuffer, mask: Option<&ImageBuffer>) -> Result<()> {
    if !a.same_size(b) || a.channels() != b.channels() {
        return Err(GeomError::ShapeMismatch(format!(
            "{}x{}x{} vs {}x{}x{}",
            a.width(),
            a.height(),
            a.channels(),
            b.width(),
            b.height(),
            b.channels()
        )));
    }
    if let Some(m) = mask {
        if !m.same_size(a) {
            return Err(GeomError::ShapeMismatch("mask size differs from the images".into()));
        }
    }
    Ok(())
}

fn quantize(v: f64) -> f64 {
    (v.clamp(0.0, 1.0) * L_MAX).round()
}

fn selected(mask: Option<&ImageBuffer>, i: usize) -> bool {
    mask.is_none_or(|m| m.at(i) != 0.0)
}

/// Sum of squared 8-bit differences and the number of values compared.
pub(crate) fn squared_error(a: &ImageBuffer, b: &ImageBuffer, mask: Option<&ImageBuffer>) -> Result<(f64, usize)> {
    check_pair(a, b, mask)?;
    let c = a.channels();
    let (mut sum, mut count) = (0.0, 0);
    for i in 0..a.width() * a.height() {
        if !selected(mask, i) {
            continue;
        }
        for k in 0..c {
            let d = quantize(a.data()[i * c + k]) - quantize(b.data()[i * c + k]);
            sum += d * d;
            count += 1;
        }
    }
    Ok((sum, count))
}

pub(crate) fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (L_MAX * L_MAX / mse).log10()
    }
}

/// PSNR in dB of images with values in [0, 1], quantised to 8 bits first.
/// Identical images give `f64::INFINITY`.
pub fn psnr(a: &ImageBuffer, b: &ImageBuffer, mask: Option<&ImageBuffer>) -> Result<f64> {
    let (sum, count) = squared_error(a, b, mask)?;
    if count == 0 {
        return Err(GeomError::Empty("no pixels selected for PSNR".into()));
    }
    Ok(psnr_from_mse(sum / count as f64))
}

fn gaussian_kernel() -> Vec<f64> {
    let k: Vec<f64> = (0..=2 * SSIM_RADIUS)
        .map(|i| {
            let x = i as f64 - SSIM_RADIUS as f64;
            (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
        })
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable Gaussian blur with the kernel renormalised over in-image taps.
fn blur(src: &[f64], w: usize, h: usize, kernel: &[f64]) -> Vec<f64> {
    let r = SSIM_RADIUS as i64;
    let pass = |src: &[f64], horizontal: bool| {
        let mut out = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                let (mut acc, mut norm) = (0.0, 0.0);
                for (t, &kv) in kernel.iter().enumerate() {
                    let o = t as i64 - r;
                    let (sx, sy) = if horizontal { (x as i64 + o, y as i64) } else { (x as i64, y as i64 + o) };
                    if sx < 0 || sy < 0 || sx >= w as i64 || sy >= h as i64 {
                        continue;
                    }
                    acc += kv * src[sy as usize * w + sx as usize];
                    norm += kv;
                }
                out[y * w + x] = acc / norm;
            }
        }
        out
    };
    pass(&pass(src, true), false)
}

/// Windowed SSIM (11×11 Gaussian, σ = 1.5) on 8-bit-quantised values, averaged
/// over channels and over the masked pixels (all pixels without a mask).
pub fn ssim(a: &ImageBuffer, b: &ImageBuffer, mask: Option<&ImageBuffer>) -> Result<f64> {
    check_pair(a, b, mask)?;
    let (w, h, c) = (a.width(), a.height(), a.channels());
    let n = w * h;
    if (0..n).all(|i| !selected(mask, i)) {
        return Err(GeomError::Empty("no pixels selected for SSIM".into()));
    }
    let c1 = (SSIM_K1 * L_MAX).powi(2);
    let c2 = (SSIM_K2 * L_MAX).powi(2);
    let kernel = gaussian_kernel();
    let (mut total, mut count) = (0.0, 0usize);
    for k in 0..c {
        let xa: Vec<f64> = (0..n).map(|i| quantize(a.data()[i * c + k])).collect();
        let xb: Vec<f64> = (0..n).map(|i| quantize(b.data()[i * c + k])).collect();
        let prod = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(p, q)| p * q).collect::<Vec<_>>();
        let mu_a = blur(&xa, w, h, &kernel);
        let mu_b = blur(&xb, w, h, &kernel);
        let aa = blur(&prod(&xa, &xa), w, h, &kernel);
        let bb = blur(&prod(&xb, &xb), w, h, &kernel);
        let ab = blur(&prod(&xa, &xb), w, h, &kernel);
        for i in 0..n {
            if !selected(mask, i) {
                continue;
            }
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Sum of squared normal differences and pixel count over `mask`, or over
/// the union of both foregrounds (non-zero normal) without one. Background
/// normals are zero, so silhouette mismatch is penalised.
pub(crate) fn normal_error_sum(a: &ImageBuffer, b: &ImageBuffer, mask: Option<&ImageBuffer>) -> Result<(f64, usize)> {
    check_pair(a, b, mask)?;
    if a.channels() != 3 {
        return Err(GeomError::InvalidImage("normal maps need three channels".into()));
    }
    let (mut sum, mut count) = (0.0, 0);
    for i in 0..a.width() * a.height() {
        let (na, nb) = (a.at3(i), b.at3(i));
        let keep = match mask {
            Some(m) => m.at(i) != 0.0,
            None => na != crate::math::Vec3::zeros() || nb != crate::math::Vec3::zeros(),
        };
        if keep {
            sum += (na - nb).norm_squared();
            count += 1;
        }
    }
    Ok((sum, count))
}

/// Mean squared distance between two normal maps (see `normal_error_sum`).
pub fn normal_map_l2(a: &ImageBuffer, b: &ImageBuffer, mask: Option<&ImageBuffer>) -> Result<f64> {
    let (sum, count) = normal_error_sum(a, b, mask)?;
    if count == 0 {
        return Err(GeomError::Empty("no foreground pixels to compare".into()));
    }
    Ok(sum / count as f64)
}

/// Pixels where instance `i` (rendered alone) would be visible but another
/// instance owns the pixel in the joint render.
pub fn occlusion_masks(
    alone: &BTreeMap<u32, ImageBuffer>,
    instance_map: &ImageBuffer,
) -> Result<BTreeMap<u32, ImageBuffer>> {
    alone
        .iter()
        .map(|(&id, fg)| {
            if !fg.same_size(instance_map) {
                return Err(GeomError::ShapeMismatch(format!("silhouette of instance {id}")));
            }
            let mask = ImageBuffer::mask_from_fn(fg.width(), fg.height(), |x, y| {
                let owner = instance_map.get(x, y);
                fg.is_set(x, y) && owner != 0.0 && owner != id as f64
            });
            Ok((id, mask))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Semantic;
    use crate::math::Vec3;
    use proptest::prelude::*;

    fn rgb(w: usize, h: usize, f: impl Fn(usize, usize) -> f64) -> ImageBuffer {
        let mut img = ImageBuffer::new(w, h, Semantic::Rgb, 0.0);
        for y in 0..h {
            for x in 0..w {
                img.set3(x, y, Vec3::repeat(f(x, y)));
            }
        }
        img
    }

    #[test]
    fn psnr_examples() {
        let a = rgb(8, 8, |_, _| 0.0);
        assert_eq!(psnr(&a, &a, None).unwrap(), f64::INFINITY);
        assert!(psnr(&a, &rgb(8, 8, |_, _| 1.0), None).unwrap().abs() < 1e-12);
        let one = psnr(&a, &rgb(8, 8, |_, _| 1.0 / 255.0), None).unwrap();
        assert!((one - 20.0 * 255f64.log10()).abs() < 1e-12);
        assert!((one - 48.1308036).abs() < 1e-6);
    }

    #[test]
    fn psnr_respects_the_mask() {
        let a = rgb(4, 4, |_, _| 0.5);
        let b = rgb(4, 4, |x, _| if x == 0 { 0.0 } else { 0.5 });
        let right = ImageBuffer::mask_from_fn(4, 4, |x, _| x > 0);
        assert_eq!(psnr(&a, &b, Some(&right)).unwrap(), f64::INFINITY);
        assert!(psnr(&a, &b, None).unwrap().is_finite());
        assert!(psnr(&a, &b, Some(&ImageBuffer::mask(4, 4))).is_err());
    }

    #[test]
    fn ssim_examples() {
        let card = rgb(24, 24, |x, _| if x < 12 { 0.1 } else { 0.9 });
        assert_eq!(ssim(&card, &card, None).unwrap(), 1.0);
        let negative = rgb(24, 24, |x, _| if x < 12 { 0.9 } else { 0.1 });
        assert!(ssim(&card, &negative, None).unwrap() < 0.0);
    }

    #[test]
    fn normal_map_examples() {
        let mut a = ImageBuffer::new(4, 4, Semantic::Normal, 0.0);
        for y in 1..3 {
            for x in 0..4 {
                a.set3(x, y, Vec3::new(0.0, 0.0, -1.0));
            }
        }
        let mut flipped = a.clone();
        let mut half = a.clone();
        for y in 1..3 {
            for x in 0..4 {
                flipped.set3(x, y, Vec3::new(0.0, 0.0, 1.0));
                if x < 2 {
                    half.set3(x, y, Vec3::new(0.0, 0.0, 1.0));
                }
            }
        }
        assert_eq!(normal_map_l2(&a, &a, None).unwrap(), 0.0);
        assert_eq!(normal_map_l2(&a, &flipped, None).unwrap(), 4.0);
        assert_eq!(normal_map_l2(&a, &half, None).unwrap(), 2.0);
        let empty = ImageBuffer::new(4, 4, Semantic::Normal, 0.0);
        assert!(normal_map_l2(&empty, &empty, None).is_err());
        // a missing silhouette counts as a unit-norm error
        assert_eq!(normal_map_l2(&a, &empty, None).unwrap(), 1.0);
    }

    #[test]
    fn occlusion_mask_examples() {
        let quad = |x0: usize, x1: usize| ImageBuffer::mask_from_fn(16, 8, move |x, _| x >= x0 && x < x1);
        let apart = BTreeMap::from([(1, quad(0, 4)), (2, quad(8, 12))]);
        let map = ImageBuffer::from_data(16, 8, Semantic::Instance, (0..128).map(|i| match i % 16 {
            0..=3 => 1.0,
            8..=11 => 2.0,
            _ => 0.0,
        }).collect()).unwrap();
        let masks = occlusion_masks(&apart, &map).unwrap();
        assert!(masks.values().all(|m| m.count_set() == 0));

        // instance 2 spans x in [4, 12) and is in front over [4, 8): half of
        // instance 1's quad [0, 8) is hidden
        let overlap = BTreeMap::from([(1, quad(0, 8)), (2, quad(4, 12))]);
        let map = ImageBuffer::from_data(16, 8, Semantic::Instance, (0..128).map(|i| match i % 16 {
            0..=3 => 1.0,
            4..=11 => 2.0,
            _ => 0.0,
        }).collect()).unwrap();
        let masks = occlusion_masks(&overlap, &map).unwrap();
        assert_eq!(masks[&1].count_set(), 4 * 8);
        assert_eq!(masks[&1], quad(4, 8));
        assert_eq!(masks[&2].count_set(), 0);

        // fully hidden instance
        let hidden = BTreeMap::from([(1, quad(4, 8)), (2, quad(0, 12))]);
        let map = ImageBuffer::from_data(16, 8, Semantic::Instance, (0..128).map(|i| if i % 16 < 12 { 2.0 } else { 0.0 }).collect()).unwrap();
        assert_eq!(occlusion_masks(&hidden, &map).unwrap()[&1], quad(4, 8));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn image_metrics_are_symmetric(seed in prop::collection::vec(0.0..1.0f64, 144), other in prop::collection::vec(0.0..1.0f64, 144)) {
            let a = rgb(12, 12, |x, y| seed[y * 12 + x]);
            let b = rgb(12, 12, |x, y| other[y * 12 + x]);
            prop_assert_eq!(ssim(&a, &b, None).unwrap(), ssim(&b, &a, None).unwrap());
            prop_assert_eq!(psnr(&a, &b, None).unwrap(), psnr(&b, &a, None).unwrap());
            let s = ssim(&a, &b, None).unwrap();
            prop_assert!((-1.0..=1.0).contains(&s));
        }
    }
}
