//! CSV and class-table persistence for scenes and correspondences.

use std::path::Path;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::{Correspondence, ResidualSample, Result, SceneError, ScenePoint, SemanticClass};
use crate::fsutil::{fmt_f64, write_atomic};
use crate::geometry::Pixel;

const SCENE_HEADER: [&str; 5] = ["x", "y", "z", "class_id", "point_id"];
const CORR_HEADER: [&str; 6] = ["point_id", "class_id", "u", "v", "du", "dv"];

/// A correspondence as stored on disk; the LiDAR point itself is not part of the record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrespondenceRecord {
    pub point_id: u64,
    pub class_id: u32,
    pub u: Pixel,
    pub f: Vector2<f64>,
}

impl ResidualSample for CorrespondenceRecord {
    fn class_id(&self) -> u32 {
        self.class_id
    }
    fn pixel(&self) -> Pixel {
        self.u
    }
    fn residual(&self) -> Vector2<f64> {
        self.f
    }
}

impl From<&Correspondence> for CorrespondenceRecord {
    fn from(c: &Correspondence) -> Self {
        Self {
            point_id: c.point_id,
            class_id: c.class_id,
            u: c.u,
            f: c.f,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SceneError + '_ {
    move |source| SceneError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn format_err(path: &Path, reason: impl ToString) -> SceneError {
    SceneError::Format {
        path: path.display().to_string(),
        reason: reason.to_string(),
    }
}

fn csv_bytes<const N: usize>(
    header: [&str; N],
    rows: impl Iterator<Item = [String; N]>,
) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for row in rows {
        w.write_record(&row).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

fn read_rows<const N: usize>(path: &Path, header: [&str; N]) -> Result<Vec<csv::StringRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => SceneError::Io {
            path: path.display().to_string(),
            source: io,
        },
        other => format_err(path, format!("{other:?}")),
    })?;
    let found = r.headers().map_err(|e| format_err(path, e))?.clone();
    if found.iter().map(str::trim).ne(header.iter().copied()) {
        return Err(format_err(
            path,
            format!("expected header `{}`, found `{}`", header.join(","), found.iter().collect::<Vec<_>>().join(",")),
        ));
    }
    r.records()
        .map(|rec| rec.map_err(|e| format_err(path, e)))
        .collect()
}

fn field<T: std::str::FromStr>(path: &Path, rec: &csv::StringRecord, i: usize, line: usize) -> Result<T> {
    rec.get(i)
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| format_err(path, format!("row {line}: bad value in column {i}")))
}

pub fn write_scene_points(path: &Path, points: &[ScenePoint]) -> Result<()> {
    let rows = points.iter().map(|p| {
        [
            fmt_f64(p.position.x),
            fmt_f64(p.position.y),
            fmt_f64(p.position.z),
            p.class_id.to_string(),
            p.point_id.to_string(),
        ]
    });
    write_atomic(path, &csv_bytes(SCENE_HEADER, rows)).map_err(io_err(path))
}

pub fn read_scene_points(path: &Path) -> Result<Vec<ScenePoint>> {
    read_rows(path, SCENE_HEADER)?
        .iter()
        .enumerate()
        .map(|(i, rec)| {
            Ok(ScenePoint {
                position: Vector3::new(
                    field(path, rec, 0, i + 2)?,
                    field(path, rec, 1, i + 2)?,
                    field(path, rec, 2, i + 2)?,
                ),
                class_id: field(path, rec, 3, i + 2)?,
                point_id: field(path, rec, 4, i + 2)?,
            })
        })
        .collect()
}

pub fn write_correspondences(path: &Path, corrs: &[Correspondence]) -> Result<()> {
    let rows = corrs.iter().map(|c| {
        [
            c.point_id.to_string(),
            c.class_id.to_string(),
            fmt_f64(c.u.u),
            fmt_f64(c.u.v),
            fmt_f64(c.f.x),
            fmt_f64(c.f.y),
        ]
    });
    write_atomic(path, &csv_bytes(CORR_HEADER, rows)).map_err(io_err(path))
}

pub fn read_correspondences(path: &Path) -> Result<Vec<CorrespondenceRecord>> {
    read_rows(path, CORR_HEADER)?
        .iter()
        .enumerate()
        .map(|(i, rec)| {
            let line = i + 2;
            Ok(CorrespondenceRecord {
                point_id: field(path, rec, 0, line)?,
                class_id: field(path, rec, 1, line)?,
                u: Pixel::new(field(path, rec, 2, line)?, field(path, rec, 3, line)?),
                f: Vector2::new(field(path, rec, 4, line)?, field(path, rec, 5, line)?),
            })
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
struct ClassTable {
    classes: Vec<SemanticClass>,
}

pub fn write_class_table(path: &Path, classes: &[SemanticClass]) -> Result<()> {
    let text = toml::to_string(&ClassTable {
        classes: classes.to_vec(),
    })
    .map_err(|e| format_err(path, e))?;
    write_atomic(path, text.as_bytes()).map_err(io_err(path))
}

pub fn read_class_table(path: &Path) -> Result<Vec<SemanticClass>> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let table: ClassTable = toml::from_str(&text).map_err(|e| format_err(path, e))?;
    for c in &table.classes {
        c.validate()?;
    }
    Ok(table.classes)
}
