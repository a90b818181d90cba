use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};

use proctor_core::features::{FEATURE_NAMES, NUM_FEATURES};
use proctor_core::pipeline::SessionFeatures;

/// `path` itself when it is a file, otherwise every file below it with the
/// given extension, sorted.
pub fn collect(path: &Path, ext: &str) -> anyhow::Result<Vec<PathBuf>> {
    if !path.exists() {
        bail!("{} does not exist", path.display());
    }
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut out = Vec::new();
    let mut stack = vec![path.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).with_context(|| dir.display().to_string())? {
            let p = entry?.path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|e| e == ext) {
                out.push(p);
            }
        }
    }
    out.sort();
    if out.is_empty() {
        bail!("no .{ext} files under {}", path.display());
    }
    Ok(out)
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

pub fn write_features(path: &Path, f: &SessionFeatures) -> anyhow::Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut w = csv::Writer::from_path(path).with_context(|| path.display().to_string())?;
    let mut header = vec!["frame_index".to_string()];
    header.extend(FEATURE_NAMES.iter().map(|s| s.to_string()));
    header.push("label".into());
    w.write_record(&header)?;
    for ((idx, row), label) in f.frame_indices.iter().zip(&f.rows).zip(&f.labels) {
        let mut rec = vec![idx.to_string()];
        rec.extend(row.iter().map(|v| cell(*v)));
        rec.push(label.map_or_else(String::new, |l| u8::from(l).to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_features(path: &Path) -> anyhow::Result<SessionFeatures> {
    let ctx = || path.display().to_string();
    let mut r = csv::Reader::from_path(path).with_context(ctx)?;
    let header: Vec<String> = r.headers().with_context(ctx)?.iter().map(str::to_string).collect();
    let expected: Vec<&str> = std::iter::once("frame_index")
        .chain(FEATURE_NAMES)
        .chain(std::iter::once("label"))
        .collect();
    if header != expected {
        bail!("{}: header does not match the feature schema", path.display());
    }
    let session_id = path.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned());
    let mut out = SessionFeatures {
        session_id,
        frame_indices: Vec::new(),
        rows: Vec::new(),
        labels: Vec::new(),
        face_failures: 0,
    };
    for (line, rec) in r.records().enumerate() {
        let rec = rec.with_context(ctx)?;
        let bad = |what: &str| anyhow::anyhow!("{} row {}: bad {what}", path.display(), line + 1);
        out.frame_indices.push(rec[0].parse().map_err(|_| bad("frame_index"))?);
        let row = (1..=NUM_FEATURES)
            .map(|j| match &rec[j] {
                "" => Ok(None),
                s => s.parse::<f64>().map(Some).map_err(|_| bad(FEATURE_NAMES[j - 1])),
            })
            .collect::<anyhow::Result<Vec<_>>>()?;
        out.rows.push(row);
        out.labels.push(match &rec[NUM_FEATURES + 1] {
            "" => None,
            "0" => Some(false),
            "1" => Some(true),
            _ => return Err(bad("label")),
        });
    }
    Ok(out)
}

pub fn read_feature_sets(path: &Path) -> anyhow::Result<Vec<SessionFeatures>> {
    collect(path, "csv")?.iter().map(|p| read_features(p)).collect()
}
