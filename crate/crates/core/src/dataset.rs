//! Frame records and manifests. Paths inside a record are relative to
//! the JSON file that holds it.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::Hypothesis;
use crate::geometry::Homography;
use crate::mask::GrassMask;
use crate::vp_estimation::{load_segments, LineSegment, SegmentLabel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub id: String,
    pub image_size: (usize, usize),
    pub grass_mask: PathBuf,
    pub segments: PathBuf,
    /// Image to model.
    #[serde(default)]
    pub gt_homography: Option<Homography>,
    #[serde(default)]
    pub gt_hypothesis: Option<Hypothesis>,
    /// Rays per fan of the grid `gt_hypothesis` indexes into.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_grid: Option<usize>,
}

/// A record with its mask and segments in memory.
#[derive(Debug, Clone)]
pub struct LoadedFrame {
    pub record: FrameRecord,
    pub mask: GrassMask,
    pub segments: Vec<LineSegment>,
    pub labels: Option<Vec<SegmentLabel>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub frames: Vec<FrameRecord>,
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.display().to_string(),
        source: e,
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("serializable value");
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })
}

fn base_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

impl FrameRecord {
    /// Copy with file paths joined onto `base`.
    pub fn resolved(&self, base: &Path) -> Self {
        let mut r = self.clone();
        r.grass_mask = base.join(&self.grass_mask);
        r.segments = base.join(&self.segments);
        r
    }

    /// Read the mask and segments, checking sizes and existence.
    pub fn load(&self) -> Result<LoadedFrame> {
        for p in [&self.grass_mask, &self.segments] {
            if !p.exists() {
                return Err(Error::Input(format!(
                    "frame {}: missing file {}",
                    self.id,
                    p.display()
                )));
            }
        }
        let mask = GrassMask::load(&self.grass_mask)?;
        if (mask.width(), mask.height()) != self.image_size {
            return Err(Error::Input(format!(
                "frame {}: mask is {}x{}, record says {}x{}",
                self.id,
                mask.width(),
                mask.height(),
                self.image_size.0,
                self.image_size.1
            )));
        }
        let (segments, labels) = load_segments(&self.segments)?;
        Ok(LoadedFrame {
            record: self.clone(),
            mask,
            segments,
            labels,
        })
    }
}

/// Load a single frame record file.
pub fn load_frame(path: &Path) -> Result<LoadedFrame> {
    let rec: FrameRecord = read_json(path)?;
    rec.resolved(&base_dir(path)).load()
}

/// Manifest records with paths resolved against the manifest's directory.
pub fn load_manifest(path: &Path) -> Result<Vec<FrameRecord>> {
    let m: Manifest = read_json(path)?;
    let base = base_dir(path);
    Ok(m.frames.iter().map(|r| r.resolved(&base)).collect())
}

pub fn load_manifest_frames(path: &Path) -> Result<Vec<LoadedFrame>> {
    load_manifest(path)?.iter().map(FrameRecord::load).collect()
}

pub fn save_manifest(path: &Path, frames: &[FrameRecord]) -> Result<()> {
    write_json(
        path,
        &Manifest {
            frames: frames.to_vec(),
        },
    )
}

pub fn load_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    read_json(path)
}
