use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;

use crate::binio::{read_file, ByteReader};
use crate::data::{DataSplit, LabeledDataset, Split};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const IMAGE_MAGIC: u32 = 0x0803;
const LABEL_MAGIC: u32 = 0x0801;

/// Reads a file, transparently decompressing gzip content.
fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = read_file(path)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::Format {
                path: path.to_path_buf(),
                offset: 0,
                message: format!("gzip: {e}"),
            })?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

/// Parses IDX image bytes into `(count, rows, cols, pixels)`.
fn parse_images(path: &Path, bytes: &[u8]) -> Result<(usize, usize, usize, Vec<u8>)> {
    let mut r = ByteReader::new(path, bytes);
    let magic = r.u32_be()?;
    if magic != IMAGE_MAGIC {
        return Err(r.error_at(
            0,
            format!("image magic {magic:#x}, expected {IMAGE_MAGIC:#x}"),
        ));
    }
    let count = r.u32_be()? as usize;
    let rows = r.u32_be()? as usize;
    let cols = r.u32_be()? as usize;
    if rows == 0 || cols == 0 {
        return Err(r.error_at(8, "zero image dimension"));
    }
    let pixels = r.take(count * rows * cols)?.to_vec();
    r.finish()?;
    Ok((count, rows, cols, pixels))
}

fn parse_labels(path: &Path, bytes: &[u8]) -> Result<Vec<u8>> {
    let mut r = ByteReader::new(path, bytes);
    let magic = r.u32_be()?;
    if magic != LABEL_MAGIC {
        return Err(r.error_at(
            0,
            format!("label magic {magic:#x}, expected {LABEL_MAGIC:#x}"),
        ));
    }
    let count = r.u32_be()? as usize;
    let labels = r.take(count)?.to_vec();
    r.finish()?;
    if let Some(i) = labels.iter().position(|&l| l > 9) {
        return Err(r.error_at(8 + i, format!("label {} out of range", labels[i])));
    }
    Ok(labels)
}

/// IDX image file as `[1, rows, cols]` samples scaled to `[0, 1]`.
pub fn read_idx_images<T: Scalar>(path: &Path) -> Result<(Vec<usize>, Vec<T>)> {
    let bytes = read_maybe_gz(path)?;
    let (_, rows, cols, pixels) = parse_images(path, &bytes)?;
    let features = pixels
        .iter()
        .map(|&p| T::narrow(p as f64 / 255.0))
        .collect();
    Ok((vec![1, rows, cols], features))
}

pub fn read_idx_labels(path: &Path) -> Result<Vec<usize>> {
    let bytes = read_maybe_gz(path)?;
    Ok(parse_labels(path, &bytes)?
        .into_iter()
        .map(usize::from)
        .collect())
}

fn find(dir: &Path, stem: &str) -> Result<std::path::PathBuf> {
    for name in [stem.to_string(), format!("{stem}.gz")] {
        let p = dir.join(name);
        if p.exists() {
            return Ok(p);
        }
    }
    Err(Error::io(
        dir.join(stem),
        std::io::Error::new(
            std::io::ErrorKind::NotFound,
            "missing MNIST file (plain or .gz)",
        ),
    ))
}

fn load_split<T: Scalar>(dir: &Path, prefix: &str, split: Split) -> Result<LabeledDataset<T>> {
    let image_path = find(dir, &format!("{prefix}-images-idx3-ubyte"))?;
    let label_path = find(dir, &format!("{prefix}-labels-idx1-ubyte"))?;
    let (shape, features) = read_idx_images::<T>(&image_path)?;
    let labels = read_idx_labels(&label_path)?;
    let images = features.len() / shape.iter().product::<usize>();
    if images != labels.len() {
        return Err(Error::Format {
            path: label_path,
            offset: 4,
            message: format!("{} labels for {images} images", labels.len()),
        });
    }
    LabeledDataset::new(shape, features, labels, 10, split)
}

/// Loads the standard four IDX files (optionally gzipped) from `dir`.
pub fn load_mnist<T: Scalar>(dir: &Path) -> Result<DataSplit<T>> {
    Ok(DataSplit {
        train: load_split(dir, "train", Split::Train)?,
        test: load_split(dir, "t10k", Split::Test)?,
    })
}
