use std::path::Path;

use image::GrayImage;

use crate::error::{Error, Result};

pub const NON_EAR: u8 = 0;
pub const EAR: u8 = 1;

/// Per-pixel two-class label image, stored row-major with values in {0, 1}.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct LabelMask {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl LabelMask {
    pub fn new(width: usize, height: usize) -> Self {
        LabelMask {
            width,
            height,
            data: vec![NON_EAR; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Dimensions(format!(
                "{width}×{height} mask needs {} values, got {}",
                width * height,
                data.len()
            )));
        }
        if let Some(&bad) = data.iter().find(|&&v| v > EAR) {
            return Err(Error::NonBinaryMask(bad));
        }
        Ok(LabelMask { width, height, data })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y) as u8);
            }
        }
        LabelMask { width, height, data }
    }

    /// Any nonzero gray level becomes ear.
    pub fn from_luma(img: &GrayImage) -> Self {
        LabelMask {
            width: img.width() as usize,
            height: img.height() as usize,
            data: img.as_raw().iter().map(|&v| (v != 0) as u8).collect(),
        }
    }

    /// 0 for non-ear, 255 for ear.
    pub fn to_luma(&self) -> GrayImage {
        GrayImage::from_raw(
            self.width as u32,
            self.height as u32,
            self.data.iter().map(|&v| v * 255).collect(),
        )
        .expect("buffer size matches")
    }

    pub fn read_png(path: impl AsRef<Path>) -> Result<Self> {
        Ok(Self::from_luma(&image::open(path)?.to_luma8()))
    }

    pub fn write_png(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_luma().save_with_format(path, image::ImageFormat::Png)?;
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn is_ear(&self, x: usize, y: usize) -> bool {
        self.get(x, y) == EAR
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, ear: bool) {
        self.data[y * self.width + x] = ear as u8;
    }

    pub fn ear_count(&self) -> usize {
        self.data.iter().filter(|&&v| v == EAR).count()
    }

    /// Sets every pixel of `rect` (clipped to the mask) to ear.
    pub fn fill_rect(&mut self, rect: &BoundingBox) {
        if let Some(r) = rect.clip(self.width, self.height) {
            for y in r.top..r.top + r.height {
                self.data[y * self.width + r.left..y * self.width + r.left + r.width].fill(EAR);
            }
        }
    }

    pub fn is_subset_of(&self, other: &LabelMask) -> bool {
        self.width == other.width
            && self.height == other.height
            && self.data.iter().zip(&other.data).all(|(&a, &b)| a <= b)
    }
}

/// Axis-aligned rectangle in pixel units.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct BoundingBox {
    pub left: usize,
    pub top: usize,
    pub width: usize,
    pub height: usize,
}

impl BoundingBox {
    pub fn new(left: usize, top: usize, width: usize, height: usize) -> Self {
        BoundingBox {
            left,
            top,
            width,
            height,
        }
    }

    /// Smallest box containing both inclusive corners.
    pub fn from_corners(x0: usize, y0: usize, x1: usize, y1: usize) -> Self {
        BoundingBox::new(x0, y0, x1 - x0 + 1, y1 - y0 + 1)
    }

    pub fn right(&self) -> usize {
        self.left + self.width
    }

    pub fn bottom(&self) -> usize {
        self.top + self.height
    }

    pub fn area(&self) -> usize {
        self.width * self.height
    }

    /// Intersection with the image, or `None` when nothing remains.
    pub fn clip(&self, width: usize, height: usize) -> Option<BoundingBox> {
        let right = self.right().min(width);
        let bottom = self.bottom().min(height);
        (self.left < right && self.top < bottom).then(|| BoundingBox::new(self.left, self.top, right - self.left, bottom - self.top))
    }

    pub fn extend(&mut self, x: usize, y: usize) {
        let (x0, y0) = (self.left.min(x), self.top.min(y));
        let (x1, y1) = ((self.right() - 1).max(x), (self.bottom() - 1).max(y));
        *self = BoundingBox::from_corners(x0, y0, x1, y1);
    }
}
