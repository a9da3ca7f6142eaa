//! Raster pages for the hosted backend: rotation onto an enlarged white
//! canvas, pixel-aligned crops, and PNG encoding.

use std::io::Cursor;
use std::path::Path;

use image::{ImageFormat, Rgb, RgbImage};
use thiserror::Error;

use super::{BackendError, ExtractionRequest, PageSource, RequestContent};
use crate::geometry::{back_project_point, rotated_canvas_dims, BBox, Dims, Point};

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("cannot decode image {path}: {message}")]
    Decode { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RasterPage {
    pub image: RgbImage,
}

impl RasterPage {
    pub fn open(path: &Path) -> Result<Self, RasterError> {
        let img = image::open(path).map_err(|e| RasterError::Decode {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Ok(Self { image: img.to_rgb8() })
    }

    /// Turns the page content by `−scan_angle_deg` about its center onto a
    /// canvas sized by [`rotated_canvas_dims`]. Nearest-neighbour sampling;
    /// uncovered pixels are white.
    pub fn rotated(&self, scan_angle_deg: f64) -> RgbImage {
        let dims = self.dims();
        let canvas = rotated_canvas_dims(dims, scan_angle_deg).expect("non-empty image");
        let (w, h) = (canvas.width.round().max(1.0) as u32, canvas.height.round().max(1.0) as u32);
        let canvas = Dims {
            width: w as f64,
            height: h as f64,
        };
        let (sw, sh) = self.image.dimensions();
        RgbImage::from_fn(w, h, |x, y| {
            let p = back_project_point(Point::new(x as f64 + 0.5, y as f64 + 0.5), scan_angle_deg, canvas, dims);
            let (sx, sy) = (p.x.floor(), p.y.floor());
            if sx >= 0.0 && sy >= 0.0 && (sx as u32) < sw && (sy as u32) < sh {
                *self.image.get_pixel(sx as u32, sy as u32)
            } else {
                Rgb([255, 255, 255])
            }
        })
    }

    pub fn encode_png(image: &RgbImage) -> Result<Vec<u8>, BackendError> {
        let mut out = Cursor::new(Vec::new());
        image
            .write_to(&mut out, ImageFormat::Png)
            .map_err(|e| BackendError::InvalidRequest(format!("png encoding failed: {e}")))?;
        Ok(out.into_inner())
    }
}

impl PageSource for RasterPage {
    fn dims(&self) -> Dims {
        let (w, h) = self.image.dimensions();
        Dims {
            width: w as f64,
            height: h as f64,
        }
    }

    fn request(&self, scan_angle_deg: f64) -> Result<ExtractionRequest, BackendError> {
        let rotated = self.rotated(scan_angle_deg);
        let frame_dims = Dims {
            width: rotated.width() as f64,
            height: rotated.height() as f64,
        };
        Ok(ExtractionRequest {
            content: RequestContent::Image(Self::encode_png(&rotated)?),
            frame_dims,
            scan_angle_deg,
        })
    }

    /// Crops to `tile` rounded to whole pixels.
    fn crop(&self, tile: &BBox) -> Result<(Self, Point), BackendError> {
        let (w, h) = self.image.dimensions();
        let x = (tile.left.round().max(0.0) as u32).min(w.saturating_sub(1));
        let y = (tile.top.round().max(0.0) as u32).min(h.saturating_sub(1));
        let cw = ((tile.right.round() as u32).min(w)).saturating_sub(x).max(1);
        let ch = ((tile.bottom.round() as u32).min(h)).saturating_sub(y).max(1);
        let sub = image::imageops::crop_imm(&self.image, x, y, cw, ch).to_image();
        Ok((Self { image: sub }, Point::new(x as f64, y as f64)))
    }
}
