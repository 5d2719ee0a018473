//! Mask export: ground-truth and predicted label maps as plain-text portable
//! graymaps (one integer label per pixel) plus a structured-text sidecar with
//! the retention mask, prototype indices and active count per scene.

use std::fmt::Write as _;
use std::path::Path;

use metaslot_core::Scene64;

use crate::error::{CliError, Result};

/// Writes a label map as an ASCII PGM (`P2`). The maxval is the largest
/// label present (at least 1), so the file re-imports losslessly.
pub fn write_pgm(path: &Path, labels: &[usize], width: usize, height: usize) -> Result<()> {
    if labels.len() != width * height {
        return Err(CliError::config(format!(
            "label map length {} does not match {}x{}",
            labels.len(),
            width,
            height
        )));
    }
    let maxval = labels.iter().copied().max().unwrap_or(0).max(1);
    let mut text = format!("P2\n{width} {height}\n{maxval}\n");
    for row in 0..height {
        let line: Vec<String> = (0..width)
            .map(|col| labels[row * width + col].to_string())
            .collect();
        let _ = writeln!(text, "{}", line.join(" "));
    }
    std::fs::write(path, text).map_err(|e| CliError::io(path.display().to_string(), e))
}

/// Reads an ASCII PGM written by [`write_pgm`] back into a label map.
pub fn read_pgm(path: &Path) -> Result<(Vec<usize>, usize, usize)> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::io(path.display().to_string(), e))?;
    let mut tokens = text
        .lines()
        .filter(|l| !l.starts_with('#'))
        .flat_map(|l| l.split_whitespace());
    let magic = tokens
        .next()
        .ok_or_else(|| CliError::config("empty pgm"))?;
    if magic != "P2" {
        return Err(CliError::config(format!("expected P2 pgm, got {magic}")));
    }
    let mut next_num = |what: &str| -> Result<usize> {
        tokens
            .next()
            .ok_or_else(|| CliError::config(format!("pgm missing {what}")))?
            .parse()
            .map_err(|_| CliError::config(format!("pgm bad {what}")))
    };
    let width = next_num("width")?;
    let height = next_num("height")?;
    let _maxval = next_num("maxval")?;
    let mut labels = Vec::with_capacity(width * height);
    for _ in 0..width * height {
        labels.push(next_num("pixel")?);
    }
    Ok((labels, width, height))
}

/// Per-scene sidecar: mask, indices and counts in a flat key=value record.
pub fn sidecar_text(
    scene_index: usize,
    scene: &Scene64,
    pred_labels: &[usize],
    smask: &[bool],
    idx: &[usize],
    active_count: usize,
) -> String {
    let mut distinct: Vec<usize> = pred_labels.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    let mut s = String::new();
    let _ = writeln!(s, "scene = {scene_index}");
    let _ = writeln!(s, "object_count = {}", scene.object_count);
    let _ = writeln!(s, "active_count = {active_count}");
    let _ = writeln!(s, "pred_distinct = {}", distinct.len());
    let _ = writeln!(
        s,
        "smask = {}",
        smask
            .iter()
            .map(|&f| if f { "1" } else { "0" })
            .collect::<Vec<_>>()
            .join(",")
    );
    let _ = writeln!(
        s,
        "idx = {}",
        idx.iter()
            .map(|i| i.to_string())
            .collect::<Vec<_>>()
            .join(",")
    );
    s
}

/// Optional feature dump: one line per position, channels space-separated
/// with full float round-trip precision.
pub fn features_text(scene: &Scene64) -> String {
    let mut s = String::new();
    for i in 0..scene.features.rows() {
        let line: Vec<String> = scene
            .features
            .row(i)
            .iter()
            .map(|v| format!("{v:?}"))
            .collect();
        let _ = writeln!(s, "{}", line.join(" "));
    }
    s
}
