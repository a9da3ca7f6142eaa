//! Coordinate math shared by every stage.
//!
//! Page coordinates have their origin at the top-left corner with `y` growing
//! downward. Rotations use the standard counter-clockwise matrix
//!
//! ```text
//! x' = cx + dx·cos θ − dy·sin θ
//! y' = cy + dx·sin θ + dy·cos θ
//! ```
//!
//! applied directly to page coordinates, so with `y` pointing down a positive
//! angle turns clockwise on screen. A *scan at angle θ* turns the page content
//! by `−θ` about the page center and re-centers it on an enlarged canvas, which
//! brings text whose baseline runs at `θ` back to horizontal. Detections are
//! mapped home by the inverse (`+θ`) turn; see [`back_project_bbox`].

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, GeometryError>;

fn finite(name: &str, values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(GeometryError::InvalidArgument(format!("{name} must be finite")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

/// Axis-aligned rectangle. Valid boxes have finite coordinates and strictly
/// positive area.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub left: f64,
    pub top: f64,
    pub right: f64,
    pub bottom: f64,
}

impl BBox {
    /// Checked constructor.
    pub fn new(left: f64, top: f64, right: f64, bottom: f64) -> Result<Self> {
        let b = Self { left, top, right, bottom };
        b.check()?;
        Ok(b)
    }

    pub fn check(&self) -> Result<()> {
        finite("bbox", &[self.left, self.top, self.right, self.bottom])?;
        if self.left < self.right && self.top < self.bottom {
            Ok(())
        } else {
            Err(GeometryError::InvalidArgument(format!(
                "bbox ({}, {}, {}, {}) has no area",
                self.left, self.top, self.right, self.bottom
            )))
        }
    }

    pub fn is_valid(&self) -> bool {
        self.check().is_ok()
    }

    pub fn width(&self) -> f64 {
        self.right - self.left
    }

    pub fn height(&self) -> f64 {
        self.bottom - self.top
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn center(&self) -> Point {
        Point::new((self.left + self.right) / 2.0, (self.top + self.bottom) / 2.0)
    }

    pub fn corners(&self) -> [Point; 4] {
        [
            Point::new(self.left, self.top),
            Point::new(self.right, self.top),
            Point::new(self.right, self.bottom),
            Point::new(self.left, self.bottom),
        ]
    }

    /// Smallest axis-aligned box containing all points. `None` for an empty
    /// iterator.
    pub fn hull<I: IntoIterator<Item = Point>>(points: I) -> Option<Self> {
        let mut it = points.into_iter();
        let first = it.next()?;
        let mut b = BBox {
            left: first.x,
            top: first.y,
            right: first.x,
            bottom: first.y,
        };
        for p in it {
            b.left = b.left.min(p.x);
            b.top = b.top.min(p.y);
            b.right = b.right.max(p.x);
            b.bottom = b.bottom.max(p.y);
        }
        Some(b)
    }

    pub fn union(&self, other: &BBox) -> BBox {
        BBox {
            left: self.left.min(other.left),
            top: self.top.min(other.top),
            right: self.right.max(other.right),
            bottom: self.bottom.max(other.bottom),
        }
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = self.right.min(other.right) - self.left.max(other.left);
        let h = self.bottom.min(other.bottom) - self.top.max(other.top);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    /// True when `other` lies inside `self`, allowing `tol` slack on every side.
    pub fn contains_box(&self, other: &BBox, tol: f64) -> bool {
        other.left >= self.left - tol
            && other.top >= self.top - tol
            && other.right <= self.right + tol
            && other.bottom <= self.bottom + tol
    }

    pub fn contains_point(&self, p: Point, tol: f64) -> bool {
        p.x >= self.left - tol
            && p.x <= self.right + tol
            && p.y >= self.top - tol
            && p.y <= self.bottom + tol
    }

    pub fn translate(&self, dx: f64, dy: f64) -> BBox {
        BBox {
            left: self.left + dx,
            top: self.top + dy,
            right: self.right + dx,
            bottom: self.bottom + dy,
        }
    }

    pub fn scale(&self, sx: f64, sy: f64) -> BBox {
        BBox {
            left: self.left * sx,
            top: self.top * sy,
            right: self.right * sx,
            bottom: self.bottom * sy,
        }
    }

    /// Intersect with `[0, w] × [0, h]`. Returns `None` when nothing with
    /// positive area remains.
    pub fn clamp_to(&self, width: f64, height: f64) -> Option<BBox> {
        let b = BBox {
            left: self.left.clamp(0.0, width),
            top: self.top.clamp(0.0, height),
            right: self.right.clamp(0.0, width),
            bottom: self.bottom.clamp(0.0, height),
        };
        b.is_valid().then_some(b)
    }
}

/// Page or canvas extent. One unit system per call.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dims {
    pub width: f64,
    pub height: f64,
}

impl Dims {
    pub fn new(width: f64, height: f64) -> Result<Self> {
        let d = Self { width, height };
        d.check()?;
        Ok(d)
    }

    pub fn check(&self) -> Result<()> {
        finite("dims", &[self.width, self.height])?;
        if self.width > 0.0 && self.height > 0.0 {
            Ok(())
        } else {
            Err(GeometryError::InvalidArgument(format!(
                "dims {}x{} must be positive",
                self.width, self.height
            )))
        }
    }

    pub fn center(&self) -> Point {
        Point::new(self.width / 2.0, self.height / 2.0)
    }

    pub fn as_bbox(&self) -> BBox {
        BBox {
            left: 0.0,
            top: 0.0,
            right: self.width,
            bottom: self.height,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TileRect {
    pub bbox: BBox,
    pub row: usize,
    pub col: usize,
}

/// Normalizes an angle in degrees to `[0, 360)`.
pub fn normalize_deg(theta: f64) -> f64 {
    let r = theta.rem_euclid(360.0);
    // rem_euclid can round up to exactly 360 for tiny negative inputs
    if r >= 360.0 {
        0.0
    } else {
        r
    }
}

/// Signed difference folded into `(−180, 180]`.
pub fn wrap180(delta: f64) -> f64 {
    let r = normalize_deg(delta);
    if r > 180.0 {
        r - 360.0
    } else {
        r
    }
}

/// `(sin, cos)` of an angle in degrees, exact at multiples of 90°.
pub fn sin_cos_deg(theta: f64) -> (f64, f64) {
    let t = normalize_deg(theta);
    if t == 0.0 {
        (0.0, 1.0)
    } else if t == 90.0 {
        (1.0, 0.0)
    } else if t == 180.0 {
        (0.0, -1.0)
    } else if t == 270.0 {
        (-1.0, 0.0)
    } else {
        t.to_radians().sin_cos()
    }
}

fn turn(p: Point, center: Point, sin: f64, cos: f64) -> Point {
    let dx = p.x - center.x;
    let dy = p.y - center.y;
    Point::new(
        center.x + dx * cos - dy * sin,
        center.y + dx * sin + dy * cos,
    )
}

/// Rotates `p` by `theta_deg` about `center` (counter-clockwise in math
/// orientation, see module docs).
pub fn rotate_point(p: Point, center: Point, theta_deg: f64) -> Result<Point> {
    finite("rotate_point input", &[p.x, p.y, center.x, center.y, theta_deg])?;
    let (s, c) = sin_cos_deg(theta_deg);
    Ok(turn(p, center, s, c))
}

/// Extent of the axis-aligned hull of the page rectangle rotated by `theta_deg`.
pub fn rotated_canvas_dims(dims: Dims, theta_deg: f64) -> Result<Dims> {
    dims.check()?;
    finite("theta", &[theta_deg])?;
    let (s, c) = sin_cos_deg(theta_deg);
    let (s, c) = (s.abs(), c.abs());
    Ok(Dims {
        width: dims.width * c + dims.height * s,
        height: dims.width * s + dims.height * c,
    })
}

/// Maps a point of the original page into the canvas of a scan at `theta_deg`.
pub fn forward_project_point(
    p: Point,
    theta_deg: f64,
    original_dims: Dims,
    rotated_dims: Dims,
) -> Point {
    let (s, c) = sin_cos_deg(-theta_deg);
    let q = turn(p, original_dims.center(), s, c);
    let oc = original_dims.center();
    let rc = rotated_dims.center();
    Point::new(q.x - oc.x + rc.x, q.y - oc.y + rc.y)
}

/// Maps a point of a scan canvas at `theta_deg` back into the original page.
pub fn back_project_point(
    p: Point,
    theta_deg: f64,
    rotated_dims: Dims,
    original_dims: Dims,
) -> Point {
    let (s, c) = sin_cos_deg(theta_deg);
    let rc = rotated_dims.center();
    let q = turn(p, rc, s, c);
    let oc = original_dims.center();
    Point::new(q.x - rc.x + oc.x, q.y - rc.y + oc.y)
}

/// Hull of `b` carried into the scan canvas at `theta_deg`, together with the
/// canvas extent.
pub fn forward_project_bbox(b: BBox, theta_deg: f64, original_dims: Dims) -> Result<(BBox, Dims)> {
    b.check()?;
    let rotated = rotated_canvas_dims(original_dims, theta_deg)?;
    let hull = BBox::hull(
        b.corners()
            .into_iter()
            .map(|p| forward_project_point(p, theta_deg, original_dims, rotated)),
    )
    .expect("four corners");
    Ok((hull, rotated))
}

/// Axis-aligned hull of `b` (given in the scan canvas at `theta_deg`) mapped
/// back into the original page.
pub fn back_project_bbox(
    b: BBox,
    theta_deg: f64,
    rotated_dims: Dims,
    original_dims: Dims,
) -> Result<BBox> {
    finite("bbox", &[b.left, b.top, b.right, b.bottom, theta_deg])?;
    rotated_dims.check()?;
    original_dims.check()?;
    Ok(BBox::hull(
        b.corners()
            .into_iter()
            .map(|p| back_project_point(p, theta_deg, rotated_dims, original_dims)),
    )
    .expect("four corners"))
}

/// Intersection over union; `0` when the union is empty.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

fn axis_origins(page: f64, tile: f64, stride: f64) -> Vec<f64> {
    if tile >= page {
        return vec![0.0];
    }
    let eps = page * 1e-12;
    let mut origins = vec![0.0];
    loop {
        let last = *origins.last().unwrap();
        if last + tile >= page - eps {
            break;
        }
        origins.push((last + stride).min(page - tile));
    }
    origins
}

/// Overlapping tile grid covering `page`. Tiles larger than the page are
/// clamped to it; the last row and column are shifted flush with the page
/// edge. Tiles are listed row by row.
pub fn compute_tile_grid(page: Dims, tile: Dims, overlap: f64) -> Result<Vec<TileRect>> {
    page.check()?;
    tile.check()?;
    finite("overlap", &[overlap])?;
    if overlap < 0.0 {
        return Err(GeometryError::InvalidArgument(format!(
            "overlap {overlap} is negative"
        )));
    }
    if overlap >= tile.width.min(tile.height) {
        return Err(GeometryError::InvalidArgument(format!(
            "overlap {overlap} must be smaller than tile {}x{}",
            tile.width, tile.height
        )));
    }
    let tw = tile.width.min(page.width);
    let th = tile.height.min(page.height);
    let xs = axis_origins(page.width, tw, tile.width - overlap);
    let ys = axis_origins(page.height, th, tile.height - overlap);
    let mut tiles = Vec::with_capacity(xs.len() * ys.len());
    for (row, &y) in ys.iter().enumerate() {
        for (col, &x) in xs.iter().enumerate() {
            tiles.push(TileRect {
                bbox: BBox {
                    left: x,
                    top: y,
                    right: x + tw,
                    bottom: y + th,
                },
                row,
                col,
            });
        }
    }
    Ok(tiles)
}
