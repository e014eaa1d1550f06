//! Tab-separated patch manifest.
//!
//! One line per patch: `patch-id, source-scene, center-x, center-y,
//! rotation-deg, class, path`. A leading `#` line carries the column names and
//! is skipped on read. `center-x` is the column and `center-y` the row of the
//! sampling point in the source scene.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::{DataError, PatchClass};

pub const MANIFEST_HEADER: &str = "#patch_id\tsource_scene\tcenter_x\tcenter_y\trotation_deg\tclass\tpath";

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    pub patch_id: String,
    pub source_scene: String,
    pub center_x: i64,
    pub center_y: i64,
    pub rotation_deg: f64,
    pub class: PatchClass,
    /// Raster stem relative to the manifest's directory.
    pub path: PathBuf,
}

impl ManifestRow {
    fn to_line(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            self.patch_id,
            self.source_scene,
            self.center_x,
            self.center_y,
            self.rotation_deg,
            self.class.as_str(),
            self.path.display()
        )
    }

    fn parse(line: &str, path: &Path, lineno: usize) -> Result<Self, DataError> {
        let bad = |reason: String| DataError::Malformed { path: format!("{}:{lineno}", path.display()), reason };
        let cols: Vec<&str> = line.split('\t').collect();
        let &[id, scene, cx, cy, rot, class, file] = &cols[..] else {
            return Err(bad(format!("expected 7 tab-separated columns, found {}", cols.len())));
        };
        let int = |s: &str, name: &str| s.parse::<i64>().map_err(|e| bad(format!("{name}: {e}")));
        Ok(Self {
            patch_id: id.to_string(),
            source_scene: scene.to_string(),
            center_x: int(cx, "center_x")?,
            center_y: int(cy, "center_y")?,
            rotation_deg: rot.parse().map_err(|e| bad(format!("rotation_deg: {e}")))?,
            class: class.parse().map_err(bad)?,
            path: PathBuf::from(file),
        })
    }
}

pub fn write_manifest(path: &Path, rows: &[ManifestRow]) -> Result<(), DataError> {
    let mut text = String::with_capacity(64 * (rows.len() + 1));
    text.push_str(MANIFEST_HEADER);
    text.push('\n');
    for row in rows {
        writeln!(text, "{}", row.to_line()).expect("writing to a String");
    }
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>, DataError> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|(i, l)| ManifestRow::parse(l, path, i + 1))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let rows = vec![
            ManifestRow {
                patch_id: "p0".into(),
                source_scene: "scene_000".into(),
                center_x: 12,
                center_y: -3,
                rotation_deg: 0.0,
                class: PatchClass::Contour,
                path: "patches/p0".into(),
            },
            ManifestRow {
                patch_id: "p1".into(),
                source_scene: "scene_001".into(),
                center_x: 40,
                center_y: 33,
                rotation_deg: 17.5,
                class: PatchClass::Background,
                path: "patches/p1".into(),
            },
        ];
        let p = dir.path().join("m.tsv");
        write_manifest(&p, &rows).unwrap();
        assert_eq!(read_manifest(&p).unwrap(), rows);
    }

    #[test]
    fn empty_manifest_has_only_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.tsv");
        write_manifest(&p, &[]).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap().lines().count(), 1);
        assert!(read_manifest(&p).unwrap().is_empty());
    }

    #[test]
    fn short_line_is_malformed() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.tsv");
        std::fs::write(&p, "a\tb\t1\n").unwrap();
        assert!(matches!(read_manifest(&p), Err(DataError::Malformed { .. })));
    }
}
