use std::path::Path;

use image::imageops::FilterType;
use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const RESIZE_SHORTER: u32 = 256;
pub const CROP: u32 = 224;
pub const MEAN: [f32; 3] = [0.485, 0.456, 0.406];
pub const STD: [f32; 3] = [0.229, 0.224, 0.225];

/// How a frame becomes a model input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CropSpec {
    pub resize_shorter: u32,
    pub crop: u32,
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl Default for CropSpec {
    fn default() -> Self {
        CropSpec {
            resize_shorter: RESIZE_SHORTER,
            crop: CROP,
            mean: MEAN,
            std: STD,
        }
    }
}

/// Resize the shorter side, center-crop, scale to [0, 1] and normalize per
/// channel. Returns a channel-major `[3, crop, crop]` tensor.
pub fn preprocess(img: &RgbImage, spec: &CropSpec) -> Result<Vec<f32>> {
    let (w, h) = img.dimensions();
    if w == 0 || h == 0 {
        return Err(Error::EmptyInput("image"));
    }
    let s = spec.resize_shorter as f64 / w.min(h) as f64;
    let nw = ((w as f64 * s).round() as u32).max(spec.crop);
    let nh = ((h as f64 * s).round() as u32).max(spec.crop);
    let resized = image::imageops::resize(img, nw, nh, FilterType::Triangle);
    let x0 = (nw - spec.crop) / 2;
    let y0 = (nh - spec.crop) / 2;
    let c = spec.crop as usize;
    let mut out = vec![0.0f32; 3 * c * c];
    for y in 0..c {
        for x in 0..c {
            let px = resized.get_pixel(x0 + x as u32, y0 + y as u32);
            for ch in 0..3 {
                out[(ch * c + y) * c + x] = (px[ch] as f32 / 255.0 - spec.mean[ch]) / spec.std[ch];
            }
        }
    }
    Ok(out)
}

pub fn load_and_preprocess(path: &Path, spec: &CropSpec) -> Result<Vec<f32>> {
    let img = image::open(path)
        .map_err(|e| Error::from(e).at(path))?
        .to_rgb8();
    preprocess(&img, spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_and_normalization() {
        let img = RgbImage::from_pixel(320, 240, image::Rgb([255, 0, 128]));
        let t = preprocess(&img, &CropSpec::default()).unwrap();
        assert_eq!(t.len(), 3 * 224 * 224);
        assert!((t[0] - (1.0 - 0.485) / 0.229).abs() < 1e-5);
        assert!((t[224 * 224] - (0.0 - 0.456) / 0.224).abs() < 1e-5);
    }

    #[test]
    fn center_crop_keeps_center() {
        // left half black, right half white, landscape: the crop straddles
        // the boundary symmetrically
        let img = RgbImage::from_fn(512, 256, |x, _| {
            if x < 256 {
                image::Rgb([0; 3])
            } else {
                image::Rgb([255; 3])
            }
        });
        let spec = CropSpec {
            mean: [0.0; 3],
            std: [1.0; 3],
            ..CropSpec::default()
        };
        let t = preprocess(&img, &spec).unwrap();
        assert!(t[100 * 224 + 5] < 0.01);
        assert!(t[100 * 224 + 218] > 0.99);
    }
}
