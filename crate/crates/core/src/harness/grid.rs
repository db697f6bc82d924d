use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Tiles the first `rows·cols` images (`[n, c, h, w]`, values in `[0, 255]`)
/// row-major into one 8-bit grayscale (c = 1) or RGB (c = 3) PNG.
pub fn emit_image_grid(images: &Tensor, rows: usize, cols: usize, path: &Path) -> Result<()> {
    let &[n, c, h, w] = images.shape() else {
        return Err(Error::shape("emit_image_grid", format!("expected [n,c,h,w], got {:?}", images.shape())));
    };
    if rows * cols > n || rows == 0 || cols == 0 {
        return Err(Error::shape("emit_image_grid", format!("{rows}x{cols} grid from {n} images")));
    }
    let color = match c {
        1 => png::ColorType::Grayscale,
        3 => png::ColorType::Rgb,
        _ => return Err(Error::shape("emit_image_grid", format!("{c} channels"))),
    };
    let (width, height) = (cols * w, rows * h);
    let mut pixels = vec![0u8; width * height * c];
    let src = images.data();
    for tile in 0..rows * cols {
        let (ty, tx) = (tile / cols, tile % cols);
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let v = src[((tile * c + ch) * h + y) * w + x];
                    let py = ty * h + y;
                    let px = tx * w + x;
                    pixels[(py * width + px) * c + ch] = v.round().clamp(0.0, 255.0) as u8;
                }
            }
        }
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    enc.set_color(color);
    enc.set_depth(png::BitDepth::Eight);
    let to_io = |e: png::EncodingError| Error::io(path, std::io::Error::other(e));
    let mut writer = enc.write_header().map_err(to_io)?;
    writer.write_image_data(&pixels).map_err(to_io)?;
    writer.finish().map_err(to_io)
}
