//! `path,score` CSV manifests.

use std::path::Path;

use image::imageops::FilterType;
use rayon::prelude::*;

use super::Sample;
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::tensor::Tensor;

struct Row {
    line: u64,
    path: String,
    score: i32,
}

fn manifest_error(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Manifest {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn read_rows(manifest_path: &Path, class_scores: &[i32]) -> Result<Vec<Row>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(manifest_path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(manifest_path, io),
            other => manifest_error(manifest_path, 1, format!("{other:?}")),
        })?;
    let headers = reader.headers()?.clone();
    if headers.len() != 2 || &headers[0] != "path" || &headers[1] != "score" {
        return Err(manifest_error(manifest_path, 1, "header must be `path,score`"));
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != 2 {
            return Err(manifest_error(manifest_path, line, "expected two columns"));
        }
        let score: i32 = record[1]
            .parse()
            .map_err(|_| manifest_error(manifest_path, line, format!("score {:?} is not an integer", &record[1])))?;
        if !class_scores.contains(&score) {
            return Err(manifest_error(
                manifest_path,
                line,
                format!("score {score} is not one of the class scores {class_scores:?}"),
            ));
        }
        rows.push(Row {
            line,
            path: record[0].to_string(),
            score,
        });
    }
    Ok(rows)
}

/// Decodes an image file to an `size×size×3` tensor in `[0, 1]` (bilinear resize).
pub fn load_image(path: &Path, size: usize) -> Result<Tensor> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    let mut rgb = img.to_rgb8();
    if rgb.width() as usize != size || rgb.height() as usize != size {
        rgb = image::imageops::resize(&rgb, size as u32, size as u32, FilterType::Triangle);
    }
    let data = rgb.into_raw().into_iter().map(|v| v as f32 / 255.0).collect();
    Tensor::new(vec![size, size, 3], data)
}

/// Loads every manifest row as a sample; ids follow manifest order from 0.
pub fn load_manifest(manifest_path: &Path, image_root: &Path, class_scores: &[i32], size: usize) -> Result<Vec<Sample>> {
    let rows = read_rows(manifest_path, class_scores)?;
    rows.par_iter()
        .enumerate()
        .map(|(id, row)| {
            let image = load_image(&image_root.join(&row.path), size)
                .map_err(|e| manifest_error(manifest_path, row.line, format!("{}: {e}", row.path)))?;
            Ok(Sample {
                id,
                image,
                score: row.score,
                truth_mask: None,
            })
        })
        .collect()
}

pub fn write_manifest(path: &Path, rows: &[(String, i32)]) -> Result<()> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(["path", "score"])?;
    for (p, s) in rows {
        writer.write_record([p.as_str(), &s.to_string()])?;
    }
    let bytes = writer.into_inner().map_err(|e| Error::io(path, e.into_error()))?;
    write_atomic(path, &bytes)
}
