//! Exact pixel-grid geometry over binary masks.
//!
//! All distances are measured center to center between integer pixel
//! coordinates. Squared distances are kept as integers throughout, so every
//! distance reported here is the square root of an exact integer and results
//! do not depend on evaluation order.
//!
//! Coordinates follow image convention: `x` grows rightward, `y` grows
//! downward, origin at the top-left pixel. Wherever several pixels qualify,
//! the one with the smallest `y`, then the smallest `x`, wins.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum GeometryError {
    #[error("mask is uniform: every pixel belongs to the same class")]
    UniformMask,
    #[error("mask has no set pixels")]
    EmptyMask,
    #[error("point ({x}, {y}) lies outside the {width}x{height} grid")]
    OutOfBounds {
        x: i64,
        y: i64,
        width: u32,
        height: u32,
    },
    #[error("dimension mismatch: expected {expected:?}, found {found:?}")]
    DimensionMismatch {
        expected: (u32, u32),
        found: (u32, u32),
    },
    #[error("mask list is empty")]
    EmptyList,
    #[error("invalid grid dimensions {width}x{height}")]
    InvalidDimensions { width: u32, height: u32 },
    #[error("grid data has {found} cells, expected {expected}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("malformed distance field: {0}")]
    MalformedField(String),
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = GeometryError> = std::result::Result<T, E>;

/// A pixel coordinate. Signed so that out-of-frame predictions can be
/// represented and scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "[i64; 2]", into = "[i64; 2]")]
pub struct Point2D {
    pub x: i64,
    pub y: i64,
}

impl Point2D {
    pub const fn new(x: i64, y: i64) -> Self {
        Self { x, y }
    }

    pub fn squared_distance(self, other: Point2D) -> u64 {
        let dx = self.x.abs_diff(other.x);
        let dy = self.y.abs_diff(other.y);
        dx * dx + dy * dy
    }

    pub fn distance(self, other: Point2D) -> f64 {
        (self.squared_distance(other) as f64).sqrt()
    }

    /// Row-major ordering key used for every tie-break in this module.
    fn scan_key(self) -> (i64, i64) {
        (self.y, self.x)
    }
}

impl From<[i64; 2]> for Point2D {
    fn from([x, y]: [i64; 2]) -> Self {
        Self { x, y }
    }
}

impl From<Point2D> for [i64; 2] {
    fn from(p: Point2D) -> Self {
        [p.x, p.y]
    }
}

impl std::fmt::Display for Point2D {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

fn check_dims(width: u32, height: u32) -> Result<usize> {
    if width == 0 || height == 0 {
        return Err(GeometryError::InvalidDimensions { width, height });
    }
    Ok(width as usize * height as usize)
}

/// Per-pixel validity grid: `true` inside the mask, `false` outside.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl BinaryMask {
    /// All-zero mask.
    pub fn new(width: u32, height: u32) -> Result<Self> {
        let len = check_dims(width, height)?;
        Ok(Self {
            width,
            height,
            bits: vec![false; len],
        })
    }

    pub fn filled(width: u32, height: u32) -> Result<Self> {
        let len = check_dims(width, height)?;
        Ok(Self {
            width,
            height,
            bits: vec![true; len],
        })
    }

    pub fn from_bits(width: u32, height: u32, bits: Vec<bool>) -> Result<Self> {
        let len = check_dims(width, height)?;
        if bits.len() != len {
            return Err(GeometryError::LengthMismatch {
                expected: len,
                found: bits.len(),
            });
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> bool) -> Result<Self> {
        let len = check_dims(width, height)?;
        let mut bits = Vec::with_capacity(len);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dimensions(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    /// Panics when out of bounds.
    pub fn get(&self, x: u32, y: u32) -> bool {
        assert!(x < self.width && y < self.height, "pixel ({x}, {y}) out of bounds");
        self.bits[y as usize * self.width as usize + x as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        assert!(x < self.width && y < self.height, "pixel ({x}, {y}) out of bounds");
        self.bits[y as usize * self.width as usize + x as usize] = value;
    }

    pub fn in_bounds(&self, p: Point2D) -> bool {
        p.x >= 0 && p.y >= 0 && p.x < self.width as i64 && p.y < self.height as i64
    }

    /// Bit at `p`, or `None` outside the grid.
    pub fn at(&self, p: Point2D) -> Option<bool> {
        self.in_bounds(p).then(|| self.get(p.x as u32, p.y as u32))
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.contains(&true)
    }

    pub fn is_uniform(&self) -> bool {
        let first = self.bits[0];
        self.bits.iter().all(|&b| b == first)
    }

    /// Fraction of set pixels.
    pub fn area_fraction(&self) -> f64 {
        self.count_ones() as f64 / self.bits.len() as f64
    }

    /// Set pixels in row-major order.
    pub fn set_points(&self) -> impl Iterator<Item = Point2D> + '_ {
        let w = self.width as usize;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| Point2D::new((i % w) as i64, (i / w) as i64))
    }

    pub fn union_with(&mut self, other: &BinaryMask) -> Result<()> {
        if other.dimensions() != self.dimensions() {
            return Err(GeometryError::DimensionMismatch {
                expected: self.dimensions(),
                found: other.dimensions(),
            });
        }
        for (a, &b) in self.bits.iter_mut().zip(&other.bits) {
            *a |= b;
        }
        Ok(())
    }

    /// Nearest-neighbour upsampling by an integer factor.
    pub fn upsample(&self, factor: u32) -> BinaryMask {
        assert!(factor > 0);
        BinaryMask::from_fn(self.width * factor, self.height * factor, |x, y| {
            self.get(x / factor, y / factor)
        })
        .expect("non-zero dimensions")
    }

    /// Encode as an 8-bit single-channel PNG with values 0 and 255.
    pub fn write_png<W: Write>(&self, writer: W) -> Result<()> {
        let raw: Vec<u8> = self.bits.iter().map(|&b| if b { 255 } else { 0 }).collect();
        let img = image::GrayImage::from_raw(self.width, self.height, raw)
            .expect("buffer length matches dimensions");
        let mut buf = std::io::Cursor::new(Vec::new());
        img.write_to(&mut buf, image::ImageFormat::Png)?;
        let mut writer = writer;
        writer.write_all(buf.get_ref())?;
        Ok(())
    }

    pub fn to_png_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_png(&mut out).expect("in-memory PNG encoding");
        out
    }

    /// Decode a single-channel PNG; any non-zero value counts as set.
    pub fn from_png_bytes(bytes: &[u8]) -> Result<Self> {
        let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)?.into_luma8();
        let (w, h) = img.dimensions();
        BinaryMask::from_bits(w, h, img.into_raw().into_iter().map(|v| v != 0).collect())
    }
}

/// Dense real-valued activation grid returned by text-query heatmap models.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    width: u32,
    height: u32,
    values: Vec<f32>,
}

impl Heatmap {
    pub fn new(width: u32, height: u32, values: Vec<f32>) -> Result<Self> {
        let len = check_dims(width, height)?;
        if values.len() != len {
            return Err(GeometryError::LengthMismatch {
                expected: len,
                found: values.len(),
            });
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dimensions(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn get(&self, x: u32, y: u32) -> f32 {
        self.values[y as usize * self.width as usize + x as usize]
    }

    /// Brightest activation; NaN entries are ignored.
    pub fn max_value(&self) -> f32 {
        self.values
            .iter()
            .copied()
            .filter(|v| !v.is_nan())
            .fold(f32::NEG_INFINITY, f32::max)
    }

    /// Little-endian `f32` bytes in row-major order.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.values.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    pub fn from_le_bytes(width: u32, height: u32, bytes: &[u8]) -> Result<Self> {
        if bytes.len() % 4 != 0 {
            return Err(GeometryError::LengthMismatch {
                expected: (bytes.len() / 4 + 1) * 4,
                found: bytes.len(),
            });
        }
        let values = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Heatmap::new(width, height, values)
    }
}

/// Exact Euclidean distance field. Stores squared distances as integers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DistanceField {
    width: u32,
    height: u32,
    squared: Vec<u64>,
}

impl DistanceField {
    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn squared(&self, x: u32, y: u32) -> u64 {
        self.squared[y as usize * self.width as usize + x as usize]
    }

    pub fn squared_values(&self) -> &[u64] {
        &self.squared
    }

    pub fn get(&self, x: u32, y: u32) -> f64 {
        (self.squared(x, y) as f64).sqrt()
    }

    pub fn values(&self) -> Vec<f64> {
        self.squared.iter().map(|&s| (s as f64).sqrt()).collect()
    }

    /// Binary layout: width and height as little-endian `u32`, followed by
    /// row-major little-endian `f32` distances.
    pub fn write_to<W: Write>(&self, mut writer: W) -> Result<()> {
        writer.write_all(&self.width.to_le_bytes())?;
        writer.write_all(&self.height.to_le_bytes())?;
        for &s in &self.squared {
            writer.write_all(&((s as f64).sqrt() as f32).to_le_bytes())?;
        }
        Ok(())
    }

    /// Reads the binary layout written by [`DistanceField::write_to`] as
    /// plain `f32` values.
    pub fn read_values<R: Read>(mut reader: R) -> Result<(u32, u32, Vec<f32>)> {
        let mut header = [0u8; 8];
        reader.read_exact(&mut header)?;
        let width = u32::from_le_bytes(header[..4].try_into().unwrap());
        let height = u32::from_le_bytes(header[4..].try_into().unwrap());
        let len = check_dims(width, height)?;
        let mut body = Vec::new();
        reader.read_to_end(&mut body)?;
        if body.len() != len * 4 {
            return Err(GeometryError::MalformedField(format!(
                "expected {} payload bytes, found {}",
                len * 4,
                body.len()
            )));
        }
        let values = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok((width, height, values))
    }
}

const INF: u64 = u64::MAX;

/// Rational number with positive denominator, used for exact parabola
/// intersections in the lower-envelope pass.
#[derive(Clone, Copy)]
struct Frac {
    num: i128,
    den: i128,
}

impl Frac {
    fn le(self, other: Frac) -> bool {
        self.num * other.den <= other.num * self.den
    }

    fn lt_int(self, q: i128) -> bool {
        self.num < q * self.den
    }
}

/// One-dimensional squared distance transform of a sampled function
/// (Felzenszwalb and Huttenlocher). Entries equal to `INF` are not sites.
fn squared_edt_1d(f: &[u64], out: &mut [u64], sites: &mut Vec<usize>, bounds: &mut Vec<Frac>) {
    sites.clear();
    bounds.clear();
    let intersect = |p: usize, q: usize| {
        let (pi, qi) = (p as i128, q as i128);
        Frac {
            num: (f[q] as i128 + qi * qi) - (f[p] as i128 + pi * pi),
            den: 2 * (qi - pi),
        }
    };
    for q in 0..f.len() {
        if f[q] == INF {
            continue;
        }
        while sites.len() >= 2 {
            let s = intersect(*sites.last().unwrap(), q);
            if s.le(*bounds.last().unwrap()) {
                sites.pop();
                bounds.pop();
            } else {
                break;
            }
        }
        if let Some(&p) = sites.last() {
            bounds.push(intersect(p, q));
        }
        sites.push(q);
    }
    if sites.is_empty() {
        out.fill(INF);
        return;
    }
    let mut k = 0;
    for (q, slot) in out.iter_mut().enumerate() {
        while k < bounds.len() && bounds[k].lt_int(q as i128) {
            k += 1;
        }
        let d = q.abs_diff(sites[k]) as u64;
        *slot = d * d + f[sites[k]];
    }
}

/// Squared distance from every cell to the nearest site, separable in
/// columns then rows. Cells with no reachable site hold `INF`.
fn squared_edt(width: usize, height: usize, is_site: impl Fn(usize) -> bool) -> Vec<u64> {
    let mut grid: Vec<u64> = (0..width * height)
        .map(|i| if is_site(i) { 0 } else { INF })
        .collect();
    let mut sites = Vec::new();
    let mut bounds = Vec::new();

    let mut column = vec![0u64; height];
    let mut column_out = vec![0u64; height];
    for x in 0..width {
        for y in 0..height {
            column[y] = grid[y * width + x];
        }
        squared_edt_1d(&column, &mut column_out, &mut sites, &mut bounds);
        for y in 0..height {
            grid[y * width + x] = column_out[y];
        }
    }

    let mut row_out = vec![0u64; width];
    for y in 0..height {
        let row = &mut grid[y * width..(y + 1) * width];
        squared_edt_1d(row, &mut row_out, &mut sites, &mut bounds);
        row.copy_from_slice(&row_out);
    }
    grid
}

/// Distance from every pixel of class `target` to the nearest pixel of the
/// opposite class. Pixels of the opposite class read zero.
pub fn euclidean_distance_transform(mask: &BinaryMask, target: bool) -> Result<DistanceField> {
    if mask.is_uniform() {
        return Err(GeometryError::UniformMask);
    }
    let bits = mask.bits();
    let squared = squared_edt(mask.width as usize, mask.height as usize, |i| bits[i] != target);
    Ok(DistanceField {
        width: mask.width,
        height: mask.height,
        squared,
    })
}

/// Distance from every set pixel to the nearest unset pixel, treating the
/// ring of pixels just outside the frame as unset.
pub fn interior_distance_field(mask: &BinaryMask) -> DistanceField {
    let (w, h) = (mask.width as usize, mask.height as usize);
    let (pw, ph) = (w + 2, h + 2);
    let padded = squared_edt(pw, ph, |i| {
        let (px, py) = (i % pw, i / pw);
        if px == 0 || py == 0 || px == pw - 1 || py == ph - 1 {
            return true;
        }
        !mask.bits[(py - 1) * w + (px - 1)]
    });
    let mut squared = Vec::with_capacity(w * h);
    for y in 0..h {
        let start = (y + 1) * pw + 1;
        squared.extend_from_slice(&padded[start..start + w]);
    }
    DistanceField {
        width: mask.width,
        height: mask.height,
        squared,
    }
}

/// Nearest pixel of class `class` to `p`, searched in growing square rings.
/// `p` may lie outside the grid. Returns the point and its squared distance.
pub(crate) fn nearest_of_class(mask: &BinaryMask, p: Point2D, class: bool) -> Option<(Point2D, u64)> {
    let (w, h) = (mask.width as i64, mask.height as i64);
    // Chebyshev distance to the farthest grid corner.
    let max_r = [p.x, w - 1 - p.x, p.y, h - 1 - p.y]
        .into_iter()
        .map(i64::abs)
        .max()
        .unwrap_or(0);
    let mut best: Option<(u64, (i64, i64), Point2D)> = None;

    let visit = |x: i64, y: i64, best: &mut Option<(u64, (i64, i64), Point2D)>| {
        if x < 0 || y < 0 || x >= w || y >= h {
            return;
        }
        if mask.bits[(y * w + x) as usize] != class {
            return;
        }
        let q = Point2D::new(x, y);
        let cand = (p.squared_distance(q), q.scan_key(), q);
        if best.as_ref().is_none_or(|b| (cand.0, cand.1) < (b.0, b.1)) {
            *best = Some(cand);
        }
    };

    for r in 0..=max_r {
        if let Some((sq, _, _)) = best {
            if (r as u64) * (r as u64) > sq {
                break;
            }
        }
        if r == 0 {
            visit(p.x, p.y, &mut best);
            continue;
        }
        let x_lo = (p.x - r).max(0);
        let x_hi = (p.x + r).min(w - 1);
        for y in [p.y - r, p.y + r] {
            if (0..h).contains(&y) {
                for x in x_lo..=x_hi {
                    visit(x, y, &mut best);
                }
            }
        }
        let y_lo = (p.y - r + 1).max(0);
        let y_hi = (p.y + r - 1).min(h - 1);
        for x in [p.x - r, p.x + r] {
            if (0..w).contains(&x) {
                for y in y_lo..=y_hi {
                    visit(x, y, &mut best);
                }
            }
        }
    }
    best.map(|(sq, _, q)| (q, sq))
}

fn check_query(mask: &BinaryMask, p: Point2D) -> Result<bool> {
    let bit = mask.at(p).ok_or(GeometryError::OutOfBounds {
        x: p.x,
        y: p.y,
        width: mask.width,
        height: mask.height,
    })?;
    if mask.is_uniform() {
        return Err(GeometryError::UniformMask);
    }
    Ok(bit)
}

/// Nearest pixel whose class differs from the class at `p`.
pub fn nearest_opposite_point(mask: &BinaryMask, p: Point2D) -> Result<Point2D> {
    let bit = check_query(mask, p)?;
    let (q, _) = nearest_of_class(mask, p, !bit).expect("non-uniform mask has an opposite pixel");
    Ok(q)
}

/// Positive depth inside the mask, negative distance outside; the magnitude
/// is the distance to the nearest pixel of the opposite class.
pub fn signed_distance(mask: &BinaryMask, p: Point2D) -> Result<f64> {
    let bit = check_query(mask, p)?;
    let (_, sq) = nearest_of_class(mask, p, !bit).expect("non-uniform mask has an opposite pixel");
    let d = (sq as f64).sqrt();
    Ok(if bit { d } else { -d })
}

/// The set pixel farthest from any unset pixel or the frame edge.
pub fn innermost_point(mask: &BinaryMask) -> Result<Point2D> {
    innermost_point_with_depth(mask).map(|(p, _)| p)
}

/// [`innermost_point`] together with its interior distance.
pub fn innermost_point_with_depth(mask: &BinaryMask) -> Result<(Point2D, f64)> {
    if mask.is_empty() {
        return Err(GeometryError::EmptyMask);
    }
    let field = interior_distance_field(mask);
    let w = mask.width as usize;
    let mut best: Option<(usize, u64)> = None;
    for (i, (&bit, &sq)) in mask.bits.iter().zip(&field.squared).enumerate() {
        if bit && best.is_none_or(|(_, b)| sq > b) {
            best = Some((i, sq));
        }
    }
    let (i, sq) = best.expect("mask is non-empty");
    Ok((Point2D::new((i % w) as i64, (i / w) as i64), (sq as f64).sqrt()))
}

/// Set pixel with the largest `y`; the leftmost one on that row.
pub fn bottommost_point(mask: &BinaryMask) -> Result<Point2D> {
    let w = mask.width as usize;
    for (y, row) in mask.bits.chunks_exact(w).enumerate().rev() {
        if let Some(x) = row.iter().position(|&b| b) {
            return Ok(Point2D::new(x as i64, y as i64));
        }
    }
    Err(GeometryError::EmptyMask)
}

/// Location of the maximum activation. NaN entries never win.
pub fn argmax_point(heatmap: &Heatmap) -> Point2D {
    let w = heatmap.width as usize;
    let mut best = (0usize, f32::NEG_INFINITY);
    for (i, &v) in heatmap.values.iter().enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    Point2D::new((best.0 % w) as i64, (best.0 / w) as i64)
}

/// Pixelwise OR of equally sized masks.
pub fn mask_union(masks: &[BinaryMask]) -> Result<BinaryMask> {
    let (first, rest) = masks.split_first().ok_or(GeometryError::EmptyList)?;
    let mut out = first.clone();
    for m in rest {
        out.union_with(m)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// 5x5 grid with the 3x3 block 1 <= x, y <= 3 set.
    fn m5() -> BinaryMask {
        BinaryMask::from_fn(5, 5, |x, y| (1..=3).contains(&x) && (1..=3).contains(&y)).unwrap()
    }

    fn brute_nearest(mask: &BinaryMask, p: Point2D, class: bool) -> Option<(Point2D, u64)> {
        let mut best: Option<(u64, i64, i64)> = None;
        for y in 0..mask.height() as i64 {
            for x in 0..mask.width() as i64 {
                if mask.get(x as u32, y as u32) == class {
                    let c = (p.squared_distance(Point2D::new(x, y)), y, x);
                    if best.is_none_or(|b| c < b) {
                        best = Some(c);
                    }
                }
            }
        }
        best.map(|(sq, y, x)| (Point2D::new(x, y), sq))
    }

    #[test]
    fn edt_center_of_m5() {
        let field = euclidean_distance_transform(&m5(), true).unwrap();
        assert_eq!(field.squared(2, 2), 4);
        assert_eq!(field.get(2, 2), 2.0);
        assert_eq!(field.squared(1, 1), 1);
    }

    #[test]
    fn edt_background_pixels_are_zero() {
        let mask = m5();
        let field = euclidean_distance_transform(&mask, true).unwrap();
        for y in 0..5 {
            for x in 0..5 {
                if !mask.get(x, y) {
                    assert_eq!(field.squared(x, y), 0);
                }
            }
        }
    }

    #[test]
    fn edt_rejects_uniform_masks() {
        let full = BinaryMask::filled(4, 3).unwrap();
        assert!(matches!(
            euclidean_distance_transform(&full, true),
            Err(GeometryError::UniformMask)
        ));
        let empty = BinaryMask::new(4, 3).unwrap();
        assert!(matches!(
            euclidean_distance_transform(&empty, false),
            Err(GeometryError::UniformMask)
        ));
    }

    #[test]
    fn edt_single_row_and_column() {
        let row = BinaryMask::from_bits(6, 1, vec![true, true, false, true, true, true]).unwrap();
        let field = euclidean_distance_transform(&row, true).unwrap();
        assert_eq!(field.squared_values(), &[4, 1, 0, 1, 4, 9]);
        let col = BinaryMask::from_bits(1, 4, vec![false, true, true, true]).unwrap();
        let field = euclidean_distance_transform(&col, true).unwrap();
        assert_eq!(field.squared_values(), &[0, 1, 4, 9]);
    }

    #[test]
    fn signed_distance_hand_cases() {
        let mask = m5();
        assert_eq!(signed_distance(&mask, Point2D::new(2, 2)).unwrap(), 2.0);
        let corner = signed_distance(&mask, Point2D::new(0, 0)).unwrap();
        assert!((corner + std::f64::consts::SQRT_2).abs() < 1e-12);
        assert_eq!(signed_distance(&mask, Point2D::new(1, 1)).unwrap(), 1.0);
    }

    #[test]
    fn signed_distance_errors() {
        let mask = m5();
        assert!(matches!(
            signed_distance(&mask, Point2D::new(5, 0)),
            Err(GeometryError::OutOfBounds { .. })
        ));
        assert!(matches!(
            signed_distance(&mask, Point2D::new(-1, 0)),
            Err(GeometryError::OutOfBounds { .. })
        ));
        let full = BinaryMask::filled(5, 5).unwrap();
        assert!(matches!(
            signed_distance(&full, Point2D::new(2, 2)),
            Err(GeometryError::UniformMask)
        ));
    }

    #[test]
    fn nearest_opposite_tie_breaks() {
        let mask = m5();
        assert_eq!(nearest_opposite_point(&mask, Point2D::new(2, 2)).unwrap(), Point2D::new(2, 0));
        assert_eq!(nearest_opposite_point(&mask, Point2D::new(0, 0)).unwrap(), Point2D::new(1, 1));
        assert_eq!(nearest_opposite_point(&mask, Point2D::new(4, 4)).unwrap(), Point2D::new(3, 3));
    }

    #[test]
    fn nearest_of_class_from_outside_the_frame() {
        let mask = m5();
        let (q, sq) = nearest_of_class(&mask, Point2D::new(-3, 2), true).unwrap();
        assert_eq!(q, Point2D::new(1, 2));
        assert_eq!(sq, 16);
        let (q, sq) = nearest_of_class(&mask, Point2D::new(10, 10), true).unwrap();
        assert_eq!((q, sq), brute_nearest(&mask, Point2D::new(10, 10), true).unwrap());
    }

    #[test]
    fn innermost_hand_cases() {
        assert_eq!(innermost_point_with_depth(&m5()).unwrap(), (Point2D::new(2, 2), 2.0));

        let mut single = BinaryMask::new(5, 3).unwrap();
        single.set(3, 1, true);
        assert_eq!(innermost_point(&single).unwrap(), Point2D::new(3, 1));

        let full = BinaryMask::filled(4, 4).unwrap();
        let (p, depth) = innermost_point_with_depth(&full).unwrap();
        assert_eq!(p, Point2D::new(1, 1));
        assert_eq!(depth, 2.0);

        assert!(matches!(
            innermost_point(&BinaryMask::new(3, 3).unwrap()),
            Err(GeometryError::EmptyMask)
        ));
    }

    #[test]
    fn full_mask_interior_matches_padded_brute_force() {
        // Four centre pixels of a full 4x4 mask tie at distance 2 to the
        // padding ring.
        let full = BinaryMask::filled(4, 4).unwrap();
        let field = interior_distance_field(&full);
        for y in 0..4i64 {
            for x in 0..4i64 {
                let mut best = u64::MAX;
                for py in -1..=4i64 {
                    for px in -1..=4i64 {
                        let on_ring = px == -1 || py == -1 || px == 4 || py == 4;
                        if on_ring {
                            best = best.min(Point2D::new(x, y).squared_distance(Point2D::new(px, py)));
                        }
                    }
                }
                assert_eq!(field.squared(x as u32, y as u32), best);
            }
        }
    }

    #[test]
    fn bottommost_hand_cases() {
        assert_eq!(bottommost_point(&m5()).unwrap(), Point2D::new(1, 3));
        let mut m = BinaryMask::new(6, 6).unwrap();
        m.set(0, 0, true);
        assert_eq!(bottommost_point(&m).unwrap(), Point2D::new(0, 0));
        m.set(4, 5, true);
        m.set(2, 5, true);
        assert_eq!(bottommost_point(&m).unwrap(), Point2D::new(2, 5));
        assert!(matches!(
            bottommost_point(&BinaryMask::new(2, 2).unwrap()),
            Err(GeometryError::EmptyMask)
        ));
    }

    #[test]
    fn argmax_hand_cases() {
        let mut values = vec![0.1f32; 16 * 8];
        values[4 * 16 + 10] = 0.93;
        let h = Heatmap::new(16, 8, values).unwrap();
        assert_eq!(argmax_point(&h), Point2D::new(10, 4));

        let flat = Heatmap::new(7, 3, vec![0.5; 21]).unwrap();
        assert_eq!(argmax_point(&flat), Point2D::new(0, 0));

        let mut values = vec![0.2f32; 4];
        values[0] = f32::NAN;
        values[2] = 0.7;
        values[3] = 0.7;
        assert_eq!(argmax_point(&Heatmap::new(2, 2, values).unwrap()), Point2D::new(0, 1));
    }

    #[test]
    fn union_cases() {
        let m = m5();
        let zero = BinaryMask::new(5, 5).unwrap();
        assert_eq!(mask_union(&[m.clone(), zero]).unwrap(), m);
        assert_eq!(mask_union(&[m.clone(), m.clone()]).unwrap(), m);

        let a = BinaryMask::from_fn(5, 5, |x, _| x == 0).unwrap();
        let b = BinaryMask::from_fn(5, 5, |x, y| x == 4 && y < 2).unwrap();
        let u = mask_union(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(u.count_ones(), a.count_ones() + b.count_ones());

        assert!(matches!(mask_union(&[]), Err(GeometryError::EmptyList)));
        assert!(matches!(
            mask_union(&[m, BinaryMask::new(4, 5).unwrap()]),
            Err(GeometryError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn mask_png_round_trip() {
        let m = m5();
        let bytes = m.to_png_bytes();
        assert_eq!(BinaryMask::from_png_bytes(&bytes).unwrap(), m);
        let img = image::load_from_memory(&bytes).unwrap().into_luma8();
        assert_eq!(img.get_pixel(2, 2).0[0], 255);
        assert_eq!(img.get_pixel(0, 0).0[0], 0);
    }

    #[test]
    fn distance_field_binary_layout() {
        let field = euclidean_distance_transform(&m5(), true).unwrap();
        let mut buf = Vec::new();
        field.write_to(&mut buf).unwrap();
        assert_eq!(buf.len(), 8 + 25 * 4);
        assert_eq!(&buf[..8], &[5, 0, 0, 0, 5, 0, 0, 0]);
        let (w, h, values) = DistanceField::read_values(&buf[..]).unwrap();
        assert_eq!((w, h), (5, 5));
        assert_eq!(values[2 * 5 + 2], 2.0);
        assert!(DistanceField::read_values(&buf[..20]).is_err());
    }

    #[test]
    fn invalid_dimensions() {
        assert!(matches!(
            BinaryMask::new(0, 3),
            Err(GeometryError::InvalidDimensions { .. })
        ));
        assert!(matches!(
            BinaryMask::from_bits(2, 2, vec![true; 3]),
            Err(GeometryError::LengthMismatch { .. })
        ));
    }
}
