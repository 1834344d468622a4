use std::io::{BufRead, Cursor, Read};
use std::path::Path;

use byteorder::{ByteOrder, LittleEndian, ReadBytesExt, WriteBytesExt};
use image::{DynamicImage, GrayImage, ImageBuffer as PixelBuffer, ImageFormat, Luma, RgbImage};

use super::{read_bytes, write_atomic};
use crate::error::{GeomError, Result};
use crate::image::{ImageBuffer, Semantic};
use crate::render::RenderOutput;

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn encode(img: DynamicImage) -> Result<Vec<u8>> {
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)
        .map_err(|e| GeomError::Codec(e.to_string()))?;
    Ok(out.into_inner())
}

/// 8-bit PNG for RGB and mask buffers, 16-bit grayscale for instance maps.
/// Depth and normal buffers belong in PFM.
pub fn write_png(path: &Path, img: &ImageBuffer) -> Result<()> {
    let (w, h) = (img.width() as u32, img.height() as u32);
    let dynamic = match img.semantic() {
        Semantic::Rgb => {
            let bytes = img.data().iter().map(|&v| to_u8(v)).collect();
            DynamicImage::ImageRgb8(RgbImage::from_raw(w, h, bytes).expect("buffer size"))
        }
        Semantic::Mask => {
            let bytes = img.data().iter().map(|&v| if v != 0.0 { 255 } else { 0 }).collect();
            DynamicImage::ImageLuma8(GrayImage::from_raw(w, h, bytes).expect("buffer size"))
        }
        Semantic::Instance => {
            let mut vals = Vec::with_capacity(img.len());
            for &v in img.data() {
                if !(0.0..=65535.0).contains(&v) || v.fract() != 0.0 {
                    return Err(GeomError::InvalidImage(format!("instance id {v} does not fit in 16 bits")));
                }
                vals.push(v as u16);
            }
            DynamicImage::ImageLuma16(PixelBuffer::<Luma<u16>, _>::from_raw(w, h, vals).expect("buffer size"))
        }
        s => {
            return Err(GeomError::InvalidImage(format!("{s:?} buffers are stored as PFM, not PNG")));
        }
    };
    write_atomic(path, &encode(dynamic)?)
}

/// Instance maps are written as 16-bit PNG.
pub fn write_instance_png(path: &Path, img: &ImageBuffer) -> Result<()> {
    if img.semantic() != Semantic::Instance {
        return Err(GeomError::InvalidImage("expected an instance map".into()));
    }
    write_png(path, img)
}

/// Load a PNG as the requested semantic. Masks threshold at half intensity.
pub fn read_png(path: &Path, semantic: Semantic) -> Result<ImageBuffer> {
    let bytes = read_bytes(path)?;
    let img = image::load_from_memory_with_format(&bytes, ImageFormat::Png)
        .map_err(|e| GeomError::parse(path, e.to_string()))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<f64> = match semantic {
        Semantic::Rgb => img.to_rgb8().into_raw().into_iter().map(|v| v as f64 / 255.0).collect(),
        Semantic::Mask => img
            .to_luma8()
            .into_raw()
            .into_iter()
            .map(|v| if v >= 128 { 1.0 } else { 0.0 })
            .collect(),
        Semantic::Instance => img.to_luma16().into_raw().into_iter().map(|v| v as f64).collect(),
        s => {
            return Err(GeomError::parse(path, format!("{s:?} buffers cannot be read from PNG")));
        }
    };
    ImageBuffer::from_data(w, h, semantic, data)
}

/// Little-endian PFM ("Pf" for one channel, "PF" for three), rows stored
/// bottom to top.
pub fn encode_pfm(img: &ImageBuffer) -> Vec<u8> {
    let c = img.channels();
    let tag = if c == 3 { "PF" } else { "Pf" };
    let mut out = format!("{tag}\n{} {}\n-1.0\n", img.width(), img.height()).into_bytes();
    let row = img.width() * c;
    for y in (0..img.height()).rev() {
        for &v in &img.data()[y * row..(y + 1) * row] {
            out.write_f32::<LittleEndian>(v as f32).unwrap();
        }
    }
    out
}

fn header_line(r: &mut Cursor<&[u8]>, path: &Path) -> Result<String> {
    let mut line = String::new();
    r.read_line(&mut line).map_err(|e| GeomError::io(path, e))?;
    if line.is_empty() {
        return Err(GeomError::parse(path, "truncated PFM header"));
    }
    Ok(line.trim().to_string())
}

/// Decode a PFM of either byte order. The channel count must match `semantic`.
pub fn decode_pfm(bytes: &[u8], path: &Path, semantic: Semantic) -> Result<ImageBuffer> {
    let mut r = Cursor::new(bytes);
    let channels = match header_line(&mut r, path)?.as_str() {
        "PF" => 3,
        "Pf" => 1,
        other => return Err(GeomError::parse(path, format!("bad PFM magic {other:?}"))),
    };
    if channels != semantic.channels() {
        return Err(GeomError::parse(
            path,
            format!("PFM has {channels} channels, {semantic:?} needs {}", semantic.channels()),
        ));
    }
    let dims = header_line(&mut r, path)?;
    let mut it = dims.split_whitespace().map(str::parse::<usize>);
    let (w, h) = match (it.next(), it.next(), it.next()) {
        (Some(Ok(w)), Some(Ok(h)), None) => (w, h),
        _ => return Err(GeomError::parse(path, format!("bad PFM size line {dims:?}"))),
    };
    let scale: f64 = header_line(&mut r, path)?
        .parse()
        .map_err(|_| GeomError::parse(path, "bad PFM scale"))?;
    let mut raw = Vec::new();
    r.read_to_end(&mut raw).map_err(|e| GeomError::io(path, e))?;
    let row = w * channels;
    if raw.len() != row * h * 4 {
        return Err(GeomError::parse(path, format!("PFM data is {} bytes, expected {}", raw.len(), row * h * 4)));
    }
    let value = |i: usize| -> f64 {
        let b = &raw[i * 4..i * 4 + 4];
        if scale < 0.0 {
            LittleEndian::read_f32(b) as f64
        } else {
            byteorder::BigEndian::read_f32(b) as f64
        }
    };
    let mut data = vec![0.0; row * h];
    for y in 0..h {
        let src = (h - 1 - y) * row;
        for k in 0..row {
            data[y * row + k] = value(src + k);
        }
    }
    ImageBuffer::from_data(w, h, semantic, data)
}

pub fn write_pfm(path: &Path, img: &ImageBuffer) -> Result<()> {
    write_atomic(path, &encode_pfm(img))
}

pub fn read_pfm(path: &Path, semantic: Semantic) -> Result<ImageBuffer> {
    decode_pfm(&read_bytes(path)?, path, semantic)
}

/// Raw face-index grid: width and height as u32, then one i32 per pixel, all
/// little-endian.
pub fn write_face_map(path: &Path, width: usize, height: usize, faces: &[i32]) -> Result<()> {
    if faces.len() != width * height {
        return Err(GeomError::ShapeMismatch(format!(
            "{width}x{height} face map given {} values",
            faces.len()
        )));
    }
    let mut out = Vec::with_capacity(8 + faces.len() * 4);
    out.write_u32::<LittleEndian>(width as u32).unwrap();
    out.write_u32::<LittleEndian>(height as u32).unwrap();
    for &f in faces {
        out.write_i32::<LittleEndian>(f).unwrap();
    }
    write_atomic(path, &out)
}

pub fn read_face_map(path: &Path) -> Result<(usize, usize, Vec<i32>)> {
    let bytes = read_bytes(path)?;
    let mut r = Cursor::new(bytes.as_slice());
    let short = |_| GeomError::parse(path, "truncated face map");
    let w = r.read_u32::<LittleEndian>().map_err(short)? as usize;
    let h = r.read_u32::<LittleEndian>().map_err(short)? as usize;
    if bytes.len() != 8 + w * h * 4 {
        return Err(GeomError::parse(path, "face map size does not match its header"));
    }
    let mut faces = vec![0i32; w * h];
    r.read_i32_into::<LittleEndian>(&mut faces).map_err(short)?;
    Ok((w, h, faces))
}

/// Write one rendered view: `rgb.png` (when present), `mask.png`,
/// `depth.pfm`, `normal.pfm`, `instance.png` and `faces.bin`.
pub fn write_render(dir: &Path, render: &RenderOutput) -> Result<()> {
    if let Some(rgb) = &render.rgb {
        write_png(&dir.join("rgb.png"), rgb)?;
    }
    write_png(&dir.join("mask.png"), &render.foreground())?;
    write_pfm(&dir.join("depth.pfm"), &render.depth)?;
    write_pfm(&dir.join("normal.pfm"), &render.normal)?;
    write_png(&dir.join("instance.png"), &render.instance_map)?;
    write_face_map(&dir.join("faces.bin"), render.width(), render.height(), &render.face_index_map)
}
