//! Binary (P5) 8-bit PGM.

use std::fs;
use std::path::Path;

use crate::error::{bail, Error, Result};
use crate::image::{GrayImage, SegMask};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pgm {
    pub rows: usize,
    pub cols: usize,
    pub maxval: u8,
    pub pixels: Vec<u8>,
}

impl Pgm {
    pub fn from_image(img: &GrayImage) -> Self {
        Self {
            rows: img.rows,
            cols: img.cols,
            maxval: 255,
            pixels: img.pixels.clone(),
        }
    }

    /// Class indices as pixel values, maxval 2.
    pub fn from_mask(mask: &SegMask) -> Self {
        Self {
            rows: mask.rows,
            cols: mask.cols,
            maxval: 2,
            pixels: mask.labels.clone(),
        }
    }

    pub fn into_image(self) -> Result<GrayImage> {
        GrayImage::new(self.rows, self.cols, self.pixels)
    }

    pub fn into_mask(self) -> Result<SegMask> {
        SegMask::new(self.rows, self.cols, self.pixels).map_err(|e| Error::Format(format!("not a class mask: {e}")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n{}\n", self.cols, self.rows, self.maxval).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0;
        if bytes.get(..2) != Some(b"P5") {
            bail!(Format, "not a binary PGM (missing P5 magic)");
        }
        pos += 2;
        let mut fields = [0usize; 3];
        for (k, field) in fields.iter_mut().enumerate() {
            skip_space_and_comments(bytes, &mut pos);
            let start = pos;
            while pos < bytes.len() && bytes[pos].is_ascii_digit() {
                pos += 1;
            }
            if start == pos {
                bail!(Format, "PGM header field {} is not a number", k + 1);
            }
            *field = std::str::from_utf8(&bytes[start..pos])
                .expect("ascii digits")
                .parse()
                .map_err(|e| Error::Format(format!("PGM header field {}: {e}", k + 1)))?;
        }
        // Exactly one whitespace byte separates the header from the raster.
        if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
            bail!(Format, "PGM header not terminated by whitespace");
        }
        pos += 1;
        let [cols, rows, maxval] = fields;
        if cols == 0 || rows == 0 {
            bail!(Format, "PGM has an empty {}x{} raster", rows, cols);
        }
        if maxval == 0 || maxval > 255 {
            bail!(Format, "unsupported PGM maxval {}", maxval);
        }
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::Format("PGM dimensions overflow".into()))?;
        let pixels = &bytes[pos..];
        if pixels.len() != n {
            bail!(Format, "PGM raster holds {} bytes, expected {}", pixels.len(), n);
        }
        if let Some(&bad) = pixels.iter().find(|&&p| p as usize > maxval) {
            bail!(Format, "PGM pixel {} exceeds maxval {}", bad, maxval);
        }
        Ok(Self {
            rows,
            cols,
            maxval: maxval as u8,
            pixels: pixels.to_vec(),
        })
    }
}

fn skip_space_and_comments(bytes: &[u8], pos: &mut usize) {
    while *pos < bytes.len() {
        match bytes[*pos] {
            b'#' => {
                while *pos < bytes.len() && bytes[*pos] != b'\n' {
                    *pos += 1;
                }
            }
            b if b.is_ascii_whitespace() => *pos += 1,
            _ => return,
        }
    }
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<Pgm> {
    Pgm::from_bytes(&fs::read(path)?)
}

pub fn write_pgm(path: impl AsRef<Path>, pgm: &Pgm) -> Result<()> {
    fs::write(path, pgm.to_bytes())?;
    Ok(())
}
