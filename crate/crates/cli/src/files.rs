//! Output-file helpers. Every artifact is written atomically
//! (temp file in the target directory, then rename).

use std::fmt::Write as _;
use std::path::Path;

use anyhow::Context;
use pairkl_core::eval::Curve;

pub fn write_atomic(path: &Path, contents: &str) -> anyhow::Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let file_name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    let tmp = dir.join(format!(".{file_name}.tmp"));
    std::fs::write(&tmp, contents)
        .with_context(|| format!("cannot write {}", tmp.display()))?;
    std::fs::rename(&tmp, path)
        .with_context(|| format!("cannot move into place: {}", path.display()))?;
    Ok(())
}

/// Comma-separated curve file with a `x,y` header row.
pub fn curve_csv(curve: &Curve<f64>) -> String {
    let mut out = format!("{},{}\n", curve.x_label, curve.y_label);
    for (x, y) in &curve.points {
        let _ = writeln!(out, "{x},{y}");
    }
    out
}

/// Two-column label-mapping sidecar: `original,dense` per row.
pub fn label_map_text(mapping: &[(i64, usize)]) -> String {
    let mut out = String::from("original,dense\n");
    for (original, dense) in mapping {
        let _ = writeln!(out, "{original},{dense}");
    }
    out
}
