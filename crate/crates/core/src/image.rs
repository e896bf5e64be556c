//! Row-major 8-bit rasters: grayscale spectrograms and class masks.

use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(rows: usize, cols: usize, pixels: Vec<u8>) -> Result<Self> {
        if rows * cols != pixels.len() || rows == 0 || cols == 0 {
            bail!(Dimension, "{}x{} image with {} pixels", rows, cols, pixels.len());
        }
        Ok(Self { rows, cols, pixels })
    }

    pub fn filled(rows: usize, cols: usize, value: u8) -> Self {
        Self {
            rows,
            cols,
            pixels: vec![value; rows * cols],
        }
    }

    pub fn get(&self, r: usize, c: usize) -> u8 {
        self.pixels[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: u8) {
        self.pixels[r * self.cols + c] = v;
    }
}

/// Per-pixel flow class.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlowClass {
    Background = 0,
    Forward = 1,
    Reverse = 2,
}

impl FlowClass {
    pub const ALL: [FlowClass; 3] = [FlowClass::Background, FlowClass::Forward, FlowClass::Reverse];

    pub fn label(self) -> u8 {
        self as u8
    }
}

/// Class-label raster with values in {0 background, 1 forward, 2 reverse}.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SegMask {
    pub rows: usize,
    pub cols: usize,
    pub labels: Vec<u8>,
}

impl SegMask {
    pub const NUM_CLASSES: usize = 3;

    pub fn new(rows: usize, cols: usize, labels: Vec<u8>) -> Result<Self> {
        if rows * cols != labels.len() || rows == 0 || cols == 0 {
            bail!(Dimension, "{}x{} mask with {} labels", rows, cols, labels.len());
        }
        if let Some(bad) = labels.iter().find(|&&l| l as usize >= Self::NUM_CLASSES) {
            bail!(Data, "mask label {} outside the class set", bad);
        }
        Ok(Self { rows, cols, labels })
    }

    pub fn empty(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            labels: vec![0; rows * cols],
        }
    }

    pub fn get(&self, r: usize, c: usize) -> u8 {
        self.labels[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, class: FlowClass) {
        self.labels[r * self.cols + c] = class.label();
    }

    pub fn fill_rect(&mut self, rows: std::ops::Range<usize>, cols: std::ops::Range<usize>, class: FlowClass) {
        for r in rows {
            for c in cols.clone() {
                self.set(r, c, class);
            }
        }
    }

    pub fn count(&self, class: FlowClass) -> usize {
        self.labels.iter().filter(|&&l| l == class.label()).count()
    }
}
