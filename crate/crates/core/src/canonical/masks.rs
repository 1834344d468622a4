use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::image::ImageBuffer;
use crate::imgproc;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskKind {
    Silhouette,
    Freeform,
}

pub const MIN_SCALE: f64 = 0.4;
pub const MAX_SCALE: f64 = 1.0;
pub const CENTER_JITTER: f64 = 0.15;

const TEMPLATE_PNGS: [&[u8]; 6] = [
    include_bytes!("../../assets/silhouettes/bust.png"),
    include_bytes!("../../assets/silhouettes/arms_raised.png"),
    include_bytes!("../../assets/silhouettes/star.png"),
    include_bytes!("../../assets/silhouettes/pair.png"),
    include_bytes!("../../assets/silhouettes/crouch.png"),
    include_bytes!("../../assets/silhouettes/t_pose.png"),
];

/// Built-in occluder silhouettes (cropped to their bounding boxes).
pub fn silhouette_templates() -> &'static [ImageBuffer] {
    static TEMPLATES: OnceLock<Vec<ImageBuffer>> = OnceLock::new();
    TEMPLATES.get_or_init(|| {
        TEMPLATE_PNGS
            .iter()
            .map(|bytes| {
                let img = image::load_from_memory(bytes)
                    .expect("embedded silhouette template decodes")
                    .to_luma8();
                let (w, h) = (img.width() as usize, img.height() as usize);
                ImageBuffer::mask_from_fn(w, h, |x, y| img.get_pixel(x as u32, y as u32).0[0] > 127)
            })
            .collect()
    })
}

/// Silhouette placement with an explicit scale (fraction of image height,
/// clamped to `[0.4, 1.0]`) and centre offset (fractions of the image size).
pub fn place_silhouette(
    width: usize,
    height: usize,
    template: &ImageBuffer,
    scale: f64,
    offset: (f64, f64),
) -> ImageBuffer {
    let scale = if scale.is_nan() {
        MIN_SCALE
    } else {
        scale.clamp(MIN_SCALE, MAX_SCALE)
    };
    let th = (scale * height as f64).max(1.0);
    let tw = th * template.width() as f64 / template.height() as f64;
    let cx = width as f64 * (0.5 + offset.0);
    let cy = height as f64 * (0.5 + offset.1);
    let (x0, y0) = (cx - tw / 2.0, cy - th / 2.0);
    ImageBuffer::mask_from_fn(width, height, |x, y| {
        // nearest-neighbour lookup of the pixel centre in template space
        let u = (x as f64 + 0.5 - x0) / tw * template.width() as f64;
        let v = (y as f64 + 0.5 - y0) / th * template.height() as f64;
        u >= 0.0
            && v >= 0.0
            && (u as usize) < template.width()
            && (v as usize) < template.height()
            && template.is_set(u as usize, v as usize)
    })
}

fn stamp_disc(mask: &mut [bool], w: usize, h: usize, cx: f64, cy: f64, r: f64) {
    let (xa, xb) = ((cx - r).floor().max(0.0) as usize, (cx + r).ceil().min(w as f64 - 1.0));
    let (ya, yb) = ((cy - r).floor().max(0.0) as usize, (cy + r).ceil().min(h as f64 - 1.0));
    if xb < 0.0 || yb < 0.0 {
        return;
    }
    for y in ya..=yb as usize {
        for x in xa..=xb as usize {
            let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
            if dx * dx + dy * dy <= r * r {
                mask[y * w + x] = true;
            }
        }
    }
}

fn freeform(width: usize, height: usize, rng: &mut ChaCha8Rng) -> ImageBuffer {
    let (w, h) = (width, height);
    let side = w.min(h) as f64;
    let mut mask = vec![false; w * h];
    let strokes = rng.gen_range(2..=5);
    for _ in 0..strokes {
        let radius = side * rng.gen_range(0.03..0.08);
        let mut x = rng.gen_range(0.2..0.8) * w as f64;
        let mut y = rng.gen_range(0.2..0.8) * h as f64;
        let mut angle = rng.gen_range(0.0..std::f64::consts::TAU);
        for _ in 0..rng.gen_range(4..=10) {
            angle += rng.gen_range(-1.0..1.0);
            let len = side * rng.gen_range(0.05..0.2);
            let steps = (len / (radius * 0.5)).ceil().max(1.0) as usize;
            let (dx, dy) = (angle.cos() * len, angle.sin() * len);
            for s in 0..=steps {
                let t = s as f64 / steps as f64;
                stamp_disc(&mut mask, w, h, x + dx * t, y + dy * t, radius);
            }
            x = (x + dx).clamp(0.0, w as f64);
            y = (y + dy).clamp(0.0, h as f64);
        }
    }
    ImageBuffer::mask_from_fn(w, h, |x, y| mask[y * w + x])
}

/// Synthetic occlusion mask, deterministic for a given seed.
///
/// `Silhouette` picks one of the built-in templates, scales it to a uniform
/// fraction in `[0.4, 1.0]` of the image height and jitters its centre by up
/// to ±15% of the image size. `Freeform` draws random-walk brush strokes.
pub fn simulate_occlusion_mask(width: usize, height: usize, kind: MaskKind, seed: u64) -> ImageBuffer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match kind {
        MaskKind::Silhouette => {
            let templates = silhouette_templates();
            let t = &templates[rng.gen_range(0..templates.len())];
            let scale = rng.gen_range(MIN_SCALE..=MAX_SCALE);
            let ox = rng.gen_range(-CENTER_JITTER..=CENTER_JITTER);
            let oy = rng.gen_range(-CENTER_JITTER..=CENTER_JITTER);
            place_silhouette(width, height, t, scale, (ox, oy))
        }
        MaskKind::Freeform => freeform(width, height, &mut rng),
    }
}

/// Square-kernel dilation of a binary mask; `kernel` must be odd.
pub fn dilate_mask(mask: &ImageBuffer, kernel: usize) -> Result<ImageBuffer> {
    imgproc::dilate(mask, kernel)
}
