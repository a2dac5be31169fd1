//! IDX file parsing (the MNIST/FashionMNIST distribution format).
//!
//! Big-endian layout: images carry magic `0x00000803` with dims (N, H, W),
//! labels carry `0x00000801` with dim (N). Pixel bytes are scaled by 1/255
//! into a single channel. Files ending in `.gz` are decompressed
//! transparently.

use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use flate2::bufread::GzDecoder;

use crate::diffcore::Tensor;
use crate::error::{HanfError, Result};

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

use super::dataset::Dataset;

struct Cursor<R> {
    reader: R,
    path: String,
    offset: u64,
}

impl<R: Read> Cursor<R> {
    fn err(&self, message: impl Into<String>) -> HanfError {
        HanfError::Idx { path: self.path.clone(), offset: self.offset, message: message.into() }
    }

    fn read_u32(&mut self) -> Result<u32> {
        let mut buf = [0u8; 4];
        self.reader
            .read_exact(&mut buf)
            .map_err(|e| self.err(format!("truncated while reading u32: {e}")))?;
        self.offset += 4;
        Ok(u32::from_be_bytes(buf))
    }

    fn read_bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.reader
            .read_exact(&mut buf)
            .map_err(|e| self.err(format!("truncated while reading {n} bytes: {e}")))?;
        self.offset += n as u64;
        Ok(buf)
    }
}

fn open(path: &Path) -> Result<Cursor<Box<dyn Read>>> {
    let display = path.display().to_string();
    let file = File::open(path).map_err(|e| HanfError::Idx {
        path: display.clone(),
        offset: 0,
        message: format!("cannot open: {e}"),
    })?;
    let reader: Box<dyn Read> = if path.extension().is_some_and(|ext| ext == "gz") {
        Box::new(GzDecoder::new(BufReader::new(file)))
    } else {
        Box::new(BufReader::new(file))
    };
    Ok(Cursor { reader, path: display, offset: 0 })
}

/// Parses an images/labels IDX pair into a [`Dataset`]. The sample counts
/// of the two files must agree.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let mut img = open(images_path)?;
    let magic = img.read_u32()?;
    if magic != IMAGES_MAGIC {
        return Err(img.err(format!("wrong magic {magic:#010x}, expected {IMAGES_MAGIC:#010x}")));
    }
    let n = img.read_u32()? as usize;
    let h = img.read_u32()? as usize;
    let w = img.read_u32()? as usize;
    if n == 0 || h == 0 || w == 0 {
        return Err(img.err(format!("degenerate dimensions ({n}, {h}, {w})")));
    }
    let pixels = img.read_bytes(n * h * w)?;

    let mut lbl = open(labels_path)?;
    let magic = lbl.read_u32()?;
    if magic != LABELS_MAGIC {
        return Err(lbl.err(format!("wrong magic {magic:#010x}, expected {LABELS_MAGIC:#010x}")));
    }
    let ln = lbl.read_u32()? as usize;
    if ln != n {
        return Err(lbl.err(format!("{ln} labels for {n} images")));
    }
    let raw_labels = lbl.read_bytes(n)?;

    let data: Vec<f64> = pixels.iter().map(|&b| b as f64 / 255.0).collect();
    let labels: Vec<usize> = raw_labels.iter().map(|&b| b as usize).collect();
    let classes = labels.iter().max().copied().unwrap_or(0) + 1;
    let images = Tensor::from_vec(vec![n, 1, h, w], data)?;
    Dataset::new(images, labels, classes)
}

/// Writes a dataset subset back out as an uncompressed IDX pair, mainly
/// for fixtures and round-trip tests.
pub fn write_idx(dataset: &Dataset, images_path: &Path, labels_path: &Path) -> Result<()> {
    use std::io::Write;
    let (h, w) = dataset.hw();
    let n = dataset.len();
    let mut img = Vec::with_capacity(16 + n * h * w);
    img.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    img.extend_from_slice(&(n as u32).to_be_bytes());
    img.extend_from_slice(&(h as u32).to_be_bytes());
    img.extend_from_slice(&(w as u32).to_be_bytes());
    for &v in dataset.images.data() {
        img.push((v * 255.0).round().clamp(0.0, 255.0) as u8);
    }
    File::create(images_path)?.write_all(&img)?;

    let mut lbl = Vec::with_capacity(8 + n);
    lbl.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    lbl.extend_from_slice(&(n as u32).to_be_bytes());
    for &l in &dataset.labels {
        lbl.push(l as u8);
    }
    File::create(labels_path)?.write_all(&lbl)?;
    Ok(())
}
