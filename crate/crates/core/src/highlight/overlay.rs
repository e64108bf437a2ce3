//! Three-panel PNG: original, normalized difference map, tinted highlight.

use std::io::Cursor;
use std::path::Path;

use image::{GrayImage, ImageFormat, Luma, Rgb, RgbImage};

use super::{DifferenceMap, HighlightMask, CONSTANT_RANGE};
use crate::data::tensor_to_rgb;
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::tensor::Tensor;

/// Pixels between panels.
pub const GUTTER: u32 = 4;
const GUTTER_COLOR: Rgb<u8> = Rgb([255, 255, 255]);
const TINT: [f32; 3] = [1.0, 0.0, 0.0];

/// Min-max normalized grey levels; a constant map is uniform 128.
fn grey_levels(diff: &DifferenceMap) -> Vec<u8> {
    let lo = diff.values.iter().copied().fold(f32::INFINITY, f32::min) as f64;
    let hi = diff.values.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    if hi - lo < CONSTANT_RANGE {
        return vec![128; diff.values.len()];
    }
    diff.values
        .iter()
        .map(|&v| ((v as f64 - lo) / (hi - lo) * 255.0).round() as u8)
        .collect()
}

pub fn overlay_image(image: &Tensor, diff: &DifferenceMap, mask: &HighlightMask) -> Result<RgbImage> {
    let [h, w, 3] = image.shape()[..] else {
        return Err(Error::ShapeMismatch {
            expected: vec![0, 0, 3],
            actual: image.shape().to_vec(),
        });
    };
    let original = tensor_to_rgb(image);
    let grey = grey_levels(diff);
    let region = mask.mask.resized(h, w);
    let (pw, ph) = (w as u32, h as u32);
    let mut out = RgbImage::from_pixel(3 * pw + 2 * GUTTER, ph, GUTTER_COLOR);
    for y in 0..ph {
        for x in 0..pw {
            let px = *original.get_pixel(x, y);
            out.put_pixel(x, y, px);

            let dy = y as usize * diff.height / h;
            let dx = x as usize * diff.width / w;
            let g = grey[dy * diff.width + dx];
            out.put_pixel(pw + GUTTER + x, y, Rgb([g, g, g]));

            let tinted = if region.get(y as usize, x as usize) {
                Rgb(std::array::from_fn(|c| {
                    (0.5 * px[c] as f32 + 0.5 * 255.0 * TINT[c]).round() as u8
                }))
            } else {
                px
            };
            out.put_pixel(2 * (pw + GUTTER) + x, y, tinted);
        }
    }
    Ok(out)
}

fn save_png<P, C>(img: &image::ImageBuffer<P, C>, path: &Path) -> Result<()>
where
    P: image::PixelWithColorType,
    [P::Subpixel]: image::EncodableLayout,
    C: std::ops::Deref<Target = [P::Subpixel]>,
{
    let mut bytes = Cursor::new(Vec::new());
    img.write_to(&mut bytes, ImageFormat::Png).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    write_atomic(path, bytes.get_ref())
}

pub fn render_overlay(image: &Tensor, diff: &DifferenceMap, mask: &HighlightMask, out_path: &Path) -> Result<()> {
    save_png(&overlay_image(image, diff, mask)?, out_path)
}

/// Grey PNG of the difference map at its native resolution.
pub fn save_difference_map(diff: &DifferenceMap, out_path: &Path) -> Result<()> {
    let grey = grey_levels(diff);
    let img = GrayImage::from_fn(diff.width as u32, diff.height as u32, |x, y| {
        Luma([grey[y as usize * diff.width + x as usize]])
    });
    save_png(&img, out_path)
}

/// `channel,correlation` CSV.
pub fn write_correlations(path: &Path, correlations: &[f64]) -> Result<()> {
    let mut text = String::from("channel,correlation\n");
    for (j, c) in correlations.iter().enumerate() {
        text.push_str(&format!("{j},{c}\n"));
    }
    write_atomic(path, text.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::BinaryMask;

    fn image() -> Tensor {
        let data = (0..8 * 6 * 3).map(|i| (i % 7) as f32 / 7.0).collect();
        Tensor::new(vec![6, 8, 3], data).unwrap()
    }

    fn diff(values: Vec<f32>) -> DifferenceMap {
        DifferenceMap {
            height: 3,
            width: 4,
            values,
            channel: 0,
            iterations: (2, 1),
        }
    }

    fn background() -> HighlightMask {
        HighlightMask {
            mask: BinaryMask::empty(3, 4),
            low: 0.0,
            high: 0.0,
        }
    }

    #[test]
    fn layout_and_constant_panels() {
        let img = image();
        let out = overlay_image(&img, &diff(vec![0.0; 12]), &background()).unwrap();
        assert_eq!((out.width(), out.height()), (3 * 8 + 2 * GUTTER, 6));
        let original = tensor_to_rgb(&img);
        for y in 0..6 {
            for x in 0..8 {
                assert_eq!(*out.get_pixel(8 + GUTTER + x, y), Rgb([128, 128, 128]));
                assert_eq!(out.get_pixel(2 * (8 + GUTTER) + x, y), original.get_pixel(x, y));
            }
        }
    }

    #[test]
    fn middle_panel_spans_full_range() {
        let values: Vec<f32> = (0..12).map(|v| v as f32).collect();
        let out = overlay_image(&image(), &diff(values), &background()).unwrap();
        assert_eq!(out.get_pixel(8 + GUTTER, 0)[0], 0);
        assert_eq!(out.get_pixel(8 + GUTTER + 7, 5)[0], 255);
    }

    #[test]
    fn writes_files() {
        let dir = tempfile::tempdir().unwrap();
        let d = diff((0..12).map(|v| v as f32).collect());
        render_overlay(&image(), &d, &background(), &dir.path().join("o.png")).unwrap();
        save_difference_map(&d, &dir.path().join("d.png")).unwrap();
        write_correlations(&dir.path().join("c.csv"), &[0.5, -1.0]).unwrap();
        let img = image::open(dir.path().join("o.png")).unwrap();
        assert_eq!(img.width(), 3 * 8 + 2 * GUTTER);
        let csv = std::fs::read_to_string(dir.path().join("c.csv")).unwrap();
        assert_eq!(csv, "channel,correlation\n0,0.5\n1,-1\n");
    }
}
