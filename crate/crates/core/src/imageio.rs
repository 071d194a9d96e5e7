//! 8-bit RGB PNG output and image grids.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `round(127.5 · (x + 1))` clamped to `[0, 255]`.
pub fn quantize(x: f32) -> u8 {
    (127.5 * (f64::from(x) + 1.0)).round().clamp(0.0, 255.0) as u8
}

/// Converts a `3 × H × W` (or `1 × 3 × H × W`) image to interleaved RGB8.
pub fn to_rgb8(image: &Tensor) -> Result<(usize, usize, Vec<u8>)> {
    let (h, w) = match image.shape() {
        &[3, h, w] | &[1, 3, h, w] => (h, w),
        s => return Err(Error::shape("to_rgb8", format!("expected a 3 x H x W image, got {s:?}"))),
    };
    let plane = h * w;
    let d = image.data();
    let mut out = Vec::with_capacity(3 * plane);
    for i in 0..plane {
        for c in 0..3 {
            out.push(quantize(d[c * plane + i]));
        }
    }
    Ok((h, w, out))
}

/// Encodes interleaved RGB8 with fixed encoder settings so output bytes are
/// reproducible.
pub fn encode_png(width: usize, height: usize, rgb: &[u8], out: impl std::io::Write) -> Result<(), png::EncodingError> {
    let mut enc = png::Encoder::new(out, width as u32, height as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    enc.set_compression(png::Compression::Balanced);
    enc.set_filter(png::Filter::Sub);
    let mut writer = enc.write_header()?;
    writer.write_image_data(rgb)?;
    writer.finish()
}

pub fn write_png(path: &Path, width: usize, height: usize, rgb: &[u8]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    encode_png(width, height, rgb, BufWriter::new(file)).map_err(|e| Error::format("PNG", path, e.to_string()))
}

pub fn write_image_png(path: &Path, image: &Tensor) -> Result<()> {
    let (h, w, rgb) = to_rgb8(image)?;
    write_png(path, w, h, &rgb)
}

/// One grid row: the source image, its translation into every class, and
/// the source's own class (whose cell gets a border).
#[derive(Clone, Debug)]
pub struct GridRow {
    pub source: Tensor,
    pub translations: Vec<Tensor>,
    pub own_class: usize,
}

const GAP: usize = 2;
const BORDER: [u8; 3] = [255, 200, 0];

/// Lays rows out as `[source, class 0, …, class K−1]` cells separated by
/// white gaps; the in-class cell is framed.
pub fn render_grid(rows: &[GridRow]) -> Result<(usize, usize, Vec<u8>)> {
    const OP: &str = "render_grid";
    let first = rows.first().ok_or_else(|| Error::domain(OP, "no rows"))?;
    let size = first.source.shape().to_vec();
    let cols = 1 + first.translations.len();
    let (ih, iw) = match size.as_slice() {
        &[3, h, w] | &[1, 3, h, w] => (h, w),
        s => return Err(Error::shape(OP, format!("expected 3 x H x W images, got {s:?}"))),
    };
    for r in rows {
        let cells = std::iter::once(&r.source).chain(&r.translations);
        if r.translations.len() + 1 != cols || cells.clone().any(|t| t.shape() != size.as_slice()) {
            return Err(Error::shape(OP, "all rows need the same number of equally sized images"));
        }
        if r.own_class >= r.translations.len() {
            return Err(Error::domain(OP, format!("own class {} has no translation", r.own_class)));
        }
    }
    let cw = iw + 2 * GAP;
    let ch = ih + 2 * GAP;
    let (w, h) = (cols * cw, rows.len() * ch);
    let mut canvas = vec![255u8; w * h * 3];
    let mut put = |y: usize, x: usize, px: &[u8]| {
        let o = (y * w + x) * 3;
        canvas[o..o + 3].copy_from_slice(px);
    };
    for (ri, row) in rows.iter().enumerate() {
        for (ci, img) in std::iter::once(&row.source).chain(&row.translations).enumerate() {
            let (oy, ox) = (ri * ch, ci * cw);
            if ci == row.own_class + 1 {
                for y in 0..ch {
                    for x in 0..cw {
                        if y < GAP - 1 || y > ch - GAP || x < GAP - 1 || x > cw - GAP {
                            put(oy + y, ox + x, &BORDER);
                        }
                    }
                }
            }
            let (_, _, rgb) = to_rgb8(img)?;
            for y in 0..ih {
                for x in 0..iw {
                    let s = (y * iw + x) * 3;
                    put(oy + GAP + y, ox + GAP + x, &rgb[s..s + 3]);
                }
            }
        }
    }
    Ok((w, h, canvas))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantization_endpoints() {
        assert_eq!(quantize(-1.0), 0);
        assert_eq!(quantize(1.0), 255);
        assert_eq!(quantize(0.0), 128);
        assert_eq!(quantize(-7.0), 0);
        assert_eq!(quantize(3.0), 255);
    }

    #[test]
    fn grid_layout_and_border() {
        let img = Tensor::full([3, 4, 4], -1.0);
        let rows: Vec<GridRow> = (0..4)
            .map(|i| GridRow {
                source: img.clone(),
                translations: vec![img.clone(); 3],
                own_class: i % 3,
            })
            .collect();
        let (w, h, rgb) = render_grid(&rows).unwrap();
        assert_eq!((w, h), (4 * 8, 4 * 8));
        // Row 0's in-class cell is column 1; its top-left pixel is border.
        assert_eq!(&rgb[(8) * 3..(8) * 3 + 3], &BORDER);
        // Source cell corner stays white.
        assert_eq!(&rgb[0..3], &[255, 255, 255]);
        // Image pixel is black.
        let o = ((GAP) * w + GAP) * 3;
        assert_eq!(&rgb[o..o + 3], &[0, 0, 0]);
    }
}
