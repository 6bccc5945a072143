//! Subprocess adapters for the off-the-shelf codecs (FLIF for label maps,
//! BPG for the coarse image). The adapters exist so results can be compared
//! against the classical tools where they are installed; nothing in the
//! pipeline requires them. Each call round-trips through a private temp
//! directory, so concurrent encodes do not collide.

use std::path::Path;
use std::process::Command;

use crate::error::{Result, SpicError};
use crate::io;
use crate::types::{CoarseImage, SegmentationMap};

fn tool_error(tool: &str, reason: impl Into<String>) -> SpicError {
    SpicError::ExternalTool {
        tool: tool.to_string(),
        reason: reason.into(),
    }
}

/// True when `name` resolves to an executable on PATH.
pub fn tool_available(name: &str) -> bool {
    Command::new(name)
        .arg("--help")
        .output()
        .map(|_| true)
        .unwrap_or(false)
}

fn run(tool: &str, args: &[&str]) -> Result<()> {
    let output = Command::new(tool)
        .args(args)
        .output()
        .map_err(|e| tool_error(tool, e.to_string()))?;
    if !output.status.success() {
        return Err(tool_error(
            tool,
            String::from_utf8_lossy(&output.stderr).into_owned(),
        ));
    }
    Ok(())
}

fn temp_dir() -> Result<tempfile::TempDir> {
    tempfile::tempdir().map_err(SpicError::Io)
}

pub fn flif_encode(s: &SegmentationMap) -> Result<Vec<u8>> {
    let dir = temp_dir()?;
    let png = dir.path().join("labels.png");
    let flif = dir.path().join("labels.flif");
    io::write_labels(&png, s)?;
    run(
        "flif",
        &["-e", "--overwrite", path_str(&png)?, path_str(&flif)?],
    )?;
    Ok(std::fs::read(&flif)?)
}

pub fn flif_decode(
    payload: &[u8],
    height: usize,
    width: usize,
    n_classes: u8,
) -> Result<SegmentationMap> {
    let dir = temp_dir()?;
    let flif = dir.path().join("labels.flif");
    let png = dir.path().join("labels.png");
    std::fs::write(&flif, payload)?;
    run(
        "flif",
        &["-d", "--overwrite", path_str(&flif)?, path_str(&png)?],
    )?;
    let s = io::read_labels(&png, Some(n_classes))?;
    if (s.height(), s.width()) != (height, width) {
        return Err(SpicError::DimensionMismatch {
            expected: format!("{height}x{width}"),
            got: format!("{}x{}", s.height(), s.width()),
        });
    }
    Ok(s)
}

pub fn bpg_encode(c: &CoarseImage, quality: u8) -> Result<Vec<u8>> {
    let dir = temp_dir()?;
    let png = dir.path().join("coarse.png");
    let bpg = dir.path().join("coarse.bpg");
    io::write_coarse(&png, c)?;
    // bpgenc uses the same 1..=51 quantizer scale as this crate's options.
    run(
        "bpgenc",
        &[
            "-q",
            &quality.to_string(),
            "-o",
            path_str(&bpg)?,
            path_str(&png)?,
        ],
    )?;
    Ok(std::fs::read(&bpg)?)
}

pub fn bpg_decode(payload: &[u8], height: usize, width: usize) -> Result<CoarseImage> {
    let dir = temp_dir()?;
    let bpg = dir.path().join("coarse.bpg");
    let png = dir.path().join("coarse.png");
    std::fs::write(&bpg, payload)?;
    run("bpgdec", &["-o", path_str(&png)?, path_str(&bpg)?])?;
    let c = io::read_coarse(&png)?;
    if (c.height(), c.width()) != (height, width) {
        return Err(SpicError::DimensionMismatch {
            expected: format!("{height}x{width}"),
            got: format!("{}x{}", c.height(), c.width()),
        });
    }
    Ok(c)
}

fn path_str(p: &Path) -> Result<&str> {
    p.to_str()
        .ok_or_else(|| tool_error("path", "non-utf8 temp path"))
}
