//! Regenerates the occluder silhouette templates under `assets/silhouettes`.
//!
//! Each template is drawn from capsules and discs on a canvas whose unit is
//! the figure height, then cropped to its bounding box.
//!
//! cargo run -p hug-geom --example gen_silhouettes

use std::path::Path;

type Capsule = (f64, f64, f64, f64, f64);

fn seg_dist(px: f64, py: f64, c: &Capsule) -> f64 {
    let (ax, ay, bx, by, _) = *c;
    let (dx, dy) = (bx - ax, by - ay);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((px - ax) * dx + (py - ay) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (qx, qy) = (ax + t * dx, ay + t * dy);
    ((px - qx).powi(2) + (py - qy).powi(2)).sqrt()
}

fn draw(parts: &[Capsule], size: u32) -> image::GrayImage {
    let mut canvas = vec![false; (size * size) as usize];
    for y in 0..size {
        for x in 0..size {
            // canvas spans [-0.25, 1.25]² in figure-height units
            let px = -0.25 + 1.5 * (x as f64 + 0.5) / size as f64;
            let py = -0.25 + 1.5 * (y as f64 + 0.5) / size as f64;
            canvas[(y * size + x) as usize] = parts.iter().any(|c| seg_dist(px, py, c) <= c.4);
        }
    }
    let (mut x0, mut y0, mut x1, mut y1) = (size, size, 0, 0);
    for y in 0..size {
        for x in 0..size {
            if canvas[(y * size + x) as usize] {
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x);
                y1 = y1.max(y);
            }
        }
    }
    image::GrayImage::from_fn(x1 - x0 + 1, y1 - y0 + 1, |x, y| {
        image::Luma([if canvas[((y + y0) * size + x + x0) as usize] { 255 } else { 0 }])
    })
}

fn templates() -> Vec<(&'static str, Vec<Capsule>)> {
    vec![
        (
            "bust",
            vec![
                (0.5, 0.22, 0.5, 0.30, 0.15),
                (0.5, 0.45, 0.5, 0.45, 0.10),
                (0.24, 0.74, 0.76, 0.74, 0.17),
                (0.28, 0.86, 0.72, 0.86, 0.12),
            ],
        ),
        (
            "arms_raised",
            vec![
                (0.5, 0.30, 0.5, 0.30, 0.11),
                (0.5, 0.45, 0.5, 0.93, 0.20),
                (0.40, 0.50, 0.18, 0.07, 0.08),
                (0.60, 0.50, 0.82, 0.07, 0.08),
            ],
        ),
        (
            "star",
            vec![
                (0.5, 0.09, 0.5, 0.09, 0.08),
                (0.5, 0.20, 0.5, 0.55, 0.13),
                (0.5, 0.24, 0.14, 0.07, 0.07),
                (0.5, 0.24, 0.86, 0.07, 0.07),
                (0.5, 0.55, 0.24, 0.95, 0.08),
                (0.5, 0.55, 0.76, 0.95, 0.08),
                (0.5, 0.62, 0.5, 0.62, 0.10),
            ],
        ),
        (
            "pair",
            vec![
                (0.30, 0.09, 0.30, 0.09, 0.08),
                (0.30, 0.20, 0.30, 0.56, 0.12),
                (0.27, 0.56, 0.22, 0.97, 0.07),
                (0.33, 0.56, 0.38, 0.97, 0.07),
                (0.30, 0.24, 0.12, 0.52, 0.05),
                (0.72, 0.11, 0.72, 0.11, 0.08),
                (0.72, 0.22, 0.72, 0.57, 0.12),
                (0.69, 0.57, 0.62, 0.97, 0.07),
                (0.75, 0.57, 0.82, 0.97, 0.07),
                (0.72, 0.26, 0.90, 0.52, 0.05),
                (0.30, 0.26, 0.72, 0.28, 0.05),
            ],
        ),
        (
            "crouch",
            vec![
                (0.42, 0.14, 0.42, 0.14, 0.13),
                (0.45, 0.35, 0.55, 0.65, 0.20),
                (0.55, 0.65, 0.25, 0.72, 0.12),
                (0.25, 0.72, 0.30, 0.95, 0.09),
                (0.60, 0.70, 0.80, 0.95, 0.10),
                (0.45, 0.35, 0.20, 0.55, 0.07),
            ],
        ),
        (
            "t_pose",
            vec![
                (0.5, 0.09, 0.5, 0.09, 0.09),
                (0.5, 0.20, 0.5, 0.58, 0.16),
                (0.5, 0.26, 0.06, 0.28, 0.07),
                (0.5, 0.26, 0.94, 0.28, 0.07),
                (0.45, 0.58, 0.36, 0.97, 0.09),
                (0.55, 0.58, 0.64, 0.97, 0.09),
            ],
        ),
    ]
}

fn main() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("assets/silhouettes");
    std::fs::create_dir_all(&dir).expect("create asset dir");
    for (name, parts) in templates() {
        let img = draw(&parts, 384);
        let fill = img.pixels().filter(|p| p.0[0] > 0).count() as f64
            / (img.width() * img.height()) as f64;
        let aspect = img.width() as f64 / img.height() as f64;
        println!(
            "{name}: {}x{} fill {:.3} aspect {:.3} aspect*fill {:.3}",
            img.width(),
            img.height(),
            fill,
            aspect,
            aspect * fill
        );
        img.save(dir.join(format!("{name}.png"))).expect("write template");
    }
}
