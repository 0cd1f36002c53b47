//! CSV manifests listing images, labels and optional saliency files.
//!
//! Columns: `image,label,saliency,annotators,correct`. Paths are relative to
//! the manifest's directory; `annotators` and `correct` hold `;`-separated
//! lists (`correct` entries are `0` or `1`).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::pgm::read_pgm;
use crate::nn::Tensor;
use crate::saliency::{AnnotationSet, SaliencyMap};
use crate::synth::map_to_image;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub image: String,
    pub label: u8,
    #[serde(default)]
    pub saliency: String,
    #[serde(default)]
    pub annotators: String,
    #[serde(default)]
    pub correct: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRecord {
    /// File stem of the image.
    pub id: String,
    pub image: Tensor,
    pub label: usize,
    pub saliency: Option<SaliencyMap>,
    pub annotations: Option<AnnotationSet>,
}

fn manifest_err(path: &Path, line: usize, msg: impl std::fmt::Display) -> Error {
    Error::Manifest(format!("{}:{line}: {msg}", path.display()))
}

fn split_list(s: &str) -> Vec<&str> {
    s.split(';').map(str::trim).filter(|p| !p.is_empty()).collect()
}

pub fn read_rows(path: &Path) -> Result<Vec<ManifestRow>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| manifest_err(path, 0, e))?;
    reader
        .deserialize()
        .enumerate()
        .map(|(i, r)| r.map_err(|e| manifest_err(path, i + 2, e)))
        .collect()
}

pub fn write_rows(path: &Path, rows: &[ManifestRow]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| manifest_err(path, 0, e))?;
    for row in rows {
        writer.serialize(row).map_err(|e| manifest_err(path, 0, e))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

fn resolve(row: &ManifestRow, base: &Path, path: &Path, line: usize) -> Result<ManifestRecord> {
    if row.label > 1 {
        return Err(manifest_err(path, line, format!("label {} is not 0 or 1", row.label)));
    }
    let image_map = read_pgm(&base.join(&row.image))?;
    let dims = image_map.dims();
    let check = |m: SaliencyMap| -> Result<SaliencyMap> {
        if m.dims() != dims {
            return Err(Error::dims(dims, m.dims()));
        }
        Ok(m)
    };
    let saliency = match row.saliency.trim() {
        "" => None,
        p => Some(check(read_pgm(&base.join(p))?)?),
    };
    let paths = split_list(&row.annotators);
    let flags = split_list(&row.correct);
    let annotations = if paths.is_empty() {
        if !flags.is_empty() {
            return Err(manifest_err(path, line, "correct flags without annotators"));
        }
        None
    } else {
        let maps = paths
            .iter()
            .map(|p| read_pgm(&base.join(p)).and_then(check))
            .collect::<Result<Vec<_>>>()?;
        let flags = if flags.is_empty() {
            vec![true; maps.len()]
        } else {
            flags
                .iter()
                .map(|f| match *f {
                    "1" => Ok(true),
                    "0" => Ok(false),
                    other => Err(manifest_err(path, line, format!("bad flag {other:?}"))),
                })
                .collect::<Result<Vec<_>>>()?
        };
        if flags.len() != maps.len() {
            return Err(manifest_err(path, line, "one correct flag per annotator expected"));
        }
        let id = stem(&row.image);
        Some(AnnotationSet::new(id, maps, flags)?)
    };
    Ok(ManifestRecord {
        id: stem(&row.image),
        image: map_to_image(&image_map),
        label: usize::from(row.label),
        saliency,
        annotations,
    })
}

fn stem(p: &str) -> String {
    Path::new(p)
        .file_stem()
        .map_or_else(|| p.to_string(), |s| s.to_string_lossy().into_owned())
}

/// Reads a manifest and every file it references.
pub fn load_manifest(path: &Path) -> Result<Vec<ManifestRecord>> {
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let rows = read_rows(path)?;
    if rows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    rows.iter()
        .enumerate()
        .map(|(i, r)| resolve(r, base, path, i + 2))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::pgm::write_pgm;

    fn fixture(dir: &Path) {
        let img = SaliencyMap::from_fn(4, 3, |x, y| (x * 60 + y) as u8);
        write_pgm(&img, &dir.join("a.pgm")).unwrap();
        write_pgm(&img, &dir.join("b.pgm")).unwrap();
        write_pgm(&SaliencyMap::filled(4, 3, 9), &dir.join("s.pgm")).unwrap();
        write_pgm(&SaliencyMap::filled(4, 3, 100), &dir.join("n1.pgm")).unwrap();
        write_pgm(&SaliencyMap::filled(4, 3, 50), &dir.join("n2.pgm")).unwrap();
    }

    #[test]
    fn rows_round_trip_and_load() {
        let dir = tempfile::tempdir().unwrap();
        fixture(dir.path());
        let rows = vec![
            ManifestRow {
                image: "a.pgm".into(),
                label: 0,
                ..Default::default()
            },
            ManifestRow {
                image: "b.pgm".into(),
                label: 1,
                saliency: "s.pgm".into(),
                annotators: "n1.pgm;n2.pgm".into(),
                correct: "1;0".into(),
            },
        ];
        let path = dir.path().join("m.csv");
        write_rows(&path, &rows).unwrap();
        assert_eq!(read_rows(&path).unwrap(), rows);
        let recs = load_manifest(&path).unwrap();
        assert_eq!(recs[0].id, "a");
        assert_eq!(recs[0].image.shape(), &[1, 3, 4]);
        assert!(recs[0].saliency.is_none() && recs[0].annotations.is_none());
        assert_eq!(recs[1].label, 1);
        assert_eq!(recs[1].saliency.as_ref().unwrap().get(0, 0), 9);
        assert_eq!(recs[1].annotations.as_ref().unwrap().annotator_correct, vec![true, false]);
    }

    #[test]
    fn bad_manifests() {
        let dir = tempfile::tempdir().unwrap();
        fixture(dir.path());
        let path = dir.path().join("m.csv");
        for body in [
            "image,label,saliency,annotators,correct\na.pgm,2,,,\n",
            "image,label,saliency,annotators,correct\nmissing.pgm,0,,,\n",
            "image,label,saliency,annotators,correct\nb.pgm,1,,n1.pgm,1;1\n",
            "image,label,saliency,annotators,correct\nb.pgm,x,,,\n",
            "image,label,saliency,annotators,correct\n",
        ] {
            std::fs::write(&path, body).unwrap();
            assert!(load_manifest(&path).is_err(), "{body}");
        }
        std::fs::write(dir.path().join("small.pgm"), b"P5\n1 1\n255\n\0").unwrap();
        std::fs::write(&path, "image,label,saliency\nb.pgm,1,small.pgm\n").unwrap();
        assert!(matches!(load_manifest(&path), Err(Error::DimensionMismatch { .. })));
    }
}
