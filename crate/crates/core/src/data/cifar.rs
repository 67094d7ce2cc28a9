//! CIFAR-10 binary layout: each record is one label byte followed by 3072
//! pixel bytes (1024 red, 1024 green, 1024 blue, each plane row-major).

use std::path::Path;

use super::{Dataset, ImageShape, LabeledExample};
use crate::error::{Error, Result};

pub const CIFAR_SHAPE: ImageShape = ImageShape::new(3, 32, 32);
pub const CIFAR_CLASSES: usize = 10;
pub const CIFAR_RECORD_BYTES: usize = 1 + CIFAR_SHAPE.len();

/// Files of the binary distribution, in the order they are concatenated by
/// [`load_cifar10_dir`].
pub const CIFAR_BATCH_FILES: [&str; 6] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
    "test_batch.bin",
];

pub fn parse_cifar10_file(bytes: &[u8]) -> Result<Vec<LabeledExample>> {
    if bytes.is_empty() || !bytes.len().is_multiple_of(CIFAR_RECORD_BYTES) {
        return Err(Error::MalformedFile(format!(
            "length {} is not a positive multiple of {CIFAR_RECORD_BYTES}",
            bytes.len()
        )));
    }
    bytes
        .chunks_exact(CIFAR_RECORD_BYTES)
        .enumerate()
        .map(|(record, chunk)| {
            let label = chunk[0];
            if label as usize >= CIFAR_CLASSES {
                return Err(Error::InvalidLabel { record, label });
            }
            let pixels = chunk[1..].iter().map(|&b| b as f32 / 255.0).collect();
            Ok(LabeledExample::new(pixels, label as usize))
        })
        .collect()
}

/// Inverse of [`parse_cifar10_file`]: pixels are rescaled by 255 and rounded.
pub fn serialize_cifar10(examples: &[LabeledExample]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(examples.len() * CIFAR_RECORD_BYTES);
    for (i, ex) in examples.iter().enumerate() {
        ex.validate(CIFAR_SHAPE, CIFAR_CLASSES)
            .map_err(|e| Error::structural(format!("record {i}: {e}")))?;
        out.push(ex.label as u8);
        out.extend(
            ex.pixels
                .iter()
                .map(|&p| (p.clamp(0.0, 1.0) * 255.0).round() as u8),
        );
    }
    Ok(out)
}

/// Reads the five training batches and the test batch from `dir`.
pub fn load_cifar10_dir(dir: &Path) -> Result<Dataset> {
    let mut examples = Vec::with_capacity(60_000);
    for name in CIFAR_BATCH_FILES {
        let path = dir.join(name);
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let parsed = parse_cifar10_file(&bytes).map_err(|e| match e {
            Error::MalformedFile(msg) => Error::MalformedFile(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        examples.extend(parsed);
    }
    Ok(Dataset {
        shape: CIFAR_SHAPE,
        num_classes: CIFAR_CLASSES,
        examples,
    })
}
