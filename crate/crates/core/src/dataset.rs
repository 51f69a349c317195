//! On-disk RGB-D capture layout and timestamp association.
//!
//! ```text
//! <root>/calibration.json      {"rgb": {...}, "depth": {...}}
//! <root>/rgb/<timestamp_us>.png     8-bit RGB
//! <root>/depth/<timestamp_us>.png   16-bit millimeters, 0 = invalid
//! <root>/poses_rgb.csv, poses_depth.csv
//!     timestamp_us,r00,r01,r02,r10,r11,r12,r20,r21,r22,tx,ty,tz
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::camera::{CameraIntrinsics, Distortion, Pose};
use crate::error::{Error, Result};
use crate::imaging::{self, DepthImage, RgbImage};

pub const CALIBRATION_FILE: &str = "calibration.json";
pub const RGB_POSES_FILE: &str = "poses_rgb.csv";
pub const DEPTH_POSES_FILE: &str = "poses_depth.csv";
pub const RGB_DIR: &str = "rgb";
pub const DEPTH_DIR: &str = "depth";

pub const POSE_CSV_HEADER: [&str; 13] = [
    "timestamp_us", "r00", "r01", "r02", "r10", "r11", "r12", "r20", "r21", "r22", "tx", "ty", "tz",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FrameKind {
    Rgb,
    Depth,
}

impl FrameKind {
    pub fn dir(self) -> &'static str {
        match self {
            FrameKind::Rgb => RGB_DIR,
            FrameKind::Depth => DEPTH_DIR,
        }
    }

    pub fn poses_file(self) -> &'static str {
        match self {
            FrameKind::Rgb => RGB_POSES_FILE,
            FrameKind::Depth => DEPTH_POSES_FILE,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub timestamp_us: u64,
    pub kind: FrameKind,
    /// Relative to the dataset root.
    pub image_path: PathBuf,
    pub pose: Pose,
}

impl FrameRecord {
    pub fn new(timestamp_us: u64, kind: FrameKind, pose: Pose) -> Self {
        Self {
            timestamp_us,
            kind,
            image_path: PathBuf::from(kind.dir()).join(format!("{timestamp_us}.png")),
            pose,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorCalibration {
    pub intrinsics: CameraIntrinsics,
    pub distortion: Distortion,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct CalibrationBlock {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: u32,
    height: u32,
    k1: f64,
    k2: f64,
    k3: f64,
    p1: f64,
    p2: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct CalibrationFile {
    rgb: CalibrationBlock,
    depth: CalibrationBlock,
}

impl From<&SensorCalibration> for CalibrationBlock {
    fn from(c: &SensorCalibration) -> Self {
        let (i, d) = (&c.intrinsics, &c.distortion);
        Self {
            fx: i.fx,
            fy: i.fy,
            cx: i.cx,
            cy: i.cy,
            width: i.width,
            height: i.height,
            k1: d.k1,
            k2: d.k2,
            k3: d.k3,
            p1: d.p1,
            p2: d.p2,
        }
    }
}

impl CalibrationBlock {
    fn into_calibration(self) -> Result<SensorCalibration> {
        let intrinsics = CameraIntrinsics::new(self.fx, self.fy, self.cx, self.cy, self.width, self.height)?;
        let distortion = Distortion {
            k1: self.k1,
            k2: self.k2,
            k3: self.k3,
            p1: self.p1,
            p2: self.p2,
        };
        distortion.validate()?;
        Ok(SensorCalibration {
            intrinsics,
            distortion,
        })
    }
}

/// Reads both sensor blocks from a `calibration.json`.
pub fn read_calibration(path: &Path) -> Result<(SensorCalibration, SensorCalibration)> {
    let text = fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::format(path, "missing calibration file"),
        _ => Error::io(path, e),
    })?;
    let file: CalibrationFile = serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
    let rgb = file
        .rgb
        .into_calibration()
        .map_err(|e| Error::format(path, format!("rgb block: {e}")))?;
    let depth = file
        .depth
        .into_calibration()
        .map_err(|e| Error::format(path, format!("depth block: {e}")))?;
    Ok((rgb, depth))
}

pub fn write_calibration(path: &Path, rgb: &SensorCalibration, depth: &SensorCalibration) -> Result<()> {
    let file = CalibrationFile {
        rgb: rgb.into(),
        depth: depth.into(),
    };
    let text = serde_json::to_string_pretty(&file).expect("calibration serializes");
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Parses a pose CSV. Timestamps must be strictly increasing.
pub fn read_poses_csv(path: &Path, kind: FrameKind) -> Result<Vec<FrameRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let mut records: Vec<FrameRecord> = Vec::new();
    for (index, row) in reader.records().enumerate() {
        let row = row.map_err(|e| csv_error(path, e))?;
        if row.len() != POSE_CSV_HEADER.len() {
            return Err(Error::format(
                path,
                format!("row {index}: expected {} columns, found {}", POSE_CSV_HEADER.len(), row.len()),
            ));
        }
        let timestamp_us: u64 = row[0]
            .parse()
            .map_err(|_| Error::format(path, format!("row {index}: bad timestamp {:?}", &row[0])))?;
        let mut vals = [0f64; 12];
        for (j, v) in vals.iter_mut().enumerate() {
            *v = row[j + 1]
                .parse()
                .map_err(|_| Error::format(path, format!("row {index}: bad number {:?}", &row[j + 1])))?;
        }
        let rotation = Matrix3::new(
            vals[0], vals[1], vals[2], vals[3], vals[4], vals[5], vals[6], vals[7], vals[8],
        );
        let pose = Pose::new(rotation, Vector3::new(vals[9], vals[10], vals[11]))
            .map_err(|e| Error::format(path, format!("row {index}: {e}")))?;
        if let Some(prev) = records.last() {
            if timestamp_us <= prev.timestamp_us {
                return Err(Error::format(
                    path,
                    format!(
                        "timestamps not strictly increasing at row {index} ({} after {})",
                        timestamp_us, prev.timestamp_us
                    ),
                ));
            }
        }
        records.push(FrameRecord::new(timestamp_us, kind, pose));
    }
    Ok(records)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) if io.kind() == std::io::ErrorKind::NotFound => {
                Error::format(path, "missing pose file")
            }
            csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => unreachable!(),
        }
    } else {
        Error::format(path, e.to_string())
    }
}

pub fn write_poses_csv(path: &Path, records: &[FrameRecord]) -> Result<()> {
    let mut out = String::with_capacity(64 + records.len() * 160);
    out.push_str(&POSE_CSV_HEADER.join(","));
    out.push('\n');
    for r in records {
        out.push_str(&r.timestamp_us.to_string());
        let m = r.pose.to_row_major_3x4();
        // row-major 3x4 -> r00..r22 then t
        for idx in [0, 1, 2, 4, 5, 6, 8, 9, 10, 3, 7, 11] {
            out.push(',');
            out.push_str(&m[idx].to_string());
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions {
    /// Stat every referenced image at load time instead of on first access.
    pub check_images: bool,
}

#[derive(Debug, Clone)]
pub struct CaptureDataset {
    pub root: PathBuf,
    pub rgb_frames: Vec<FrameRecord>,
    pub depth_frames: Vec<FrameRecord>,
    pub rgb: SensorCalibration,
    pub depth: SensorCalibration,
}

pub fn load_dataset(root: &Path, options: LoadOptions) -> Result<CaptureDataset> {
    let (rgb, depth) = read_calibration(&root.join(CALIBRATION_FILE))?;
    for kind in [FrameKind::Rgb, FrameKind::Depth] {
        let dir = root.join(kind.dir());
        let has_png = fs::read_dir(&dir)
            .map(|entries| {
                entries
                    .filter_map(|e| e.ok())
                    .any(|e| e.path().extension().is_some_and(|x| x == "png"))
            })
            .unwrap_or(false);
        if !has_png {
            return Err(Error::format(&dir, "directory missing or contains no PNG frames"));
        }
    }
    let rgb_frames = read_poses_csv(&root.join(RGB_POSES_FILE), FrameKind::Rgb)?;
    let depth_frames = read_poses_csv(&root.join(DEPTH_POSES_FILE), FrameKind::Depth)?;
    if rgb_frames.is_empty() {
        return Err(Error::format(root.join(RGB_POSES_FILE), "no rgb frames"));
    }
    if depth_frames.is_empty() {
        return Err(Error::format(root.join(DEPTH_POSES_FILE), "no depth frames"));
    }
    let ds = CaptureDataset {
        root: root.to_path_buf(),
        rgb_frames,
        depth_frames,
        rgb,
        depth,
    };
    if options.check_images {
        for rec in ds.rgb_frames.iter().chain(&ds.depth_frames) {
            let p = ds.path_of(rec);
            if !p.is_file() {
                return Err(Error::io(
                    p,
                    std::io::Error::new(std::io::ErrorKind::NotFound, "frame image missing"),
                ));
            }
        }
    }
    Ok(ds)
}

impl CaptureDataset {
    pub fn path_of(&self, rec: &FrameRecord) -> PathBuf {
        self.root.join(&rec.image_path)
    }

    pub fn load_rgb(&self, rec: &FrameRecord) -> Result<RgbImage> {
        let path = self.path_of(rec);
        let img = imaging::load_rgb(&path)?;
        let i = &self.rgb.intrinsics;
        if (img.width(), img.height()) != (i.width, i.height) {
            return Err(Error::format(
                path,
                format!("image is {}x{}, calibration says {}x{}", img.width(), img.height(), i.width, i.height),
            ));
        }
        Ok(img)
    }

    pub fn load_depth(&self, rec: &FrameRecord) -> Result<DepthImage> {
        let path = self.path_of(rec);
        let img = DepthImage::load_png(&path)?;
        let i = &self.depth.intrinsics;
        if (img.width(), img.height()) != (i.width, i.height) {
            return Err(Error::format(
                path,
                format!("depth is {}x{}, calibration says {}x{}", img.width(), img.height(), i.width, i.height),
            ));
        }
        Ok(img)
    }

    /// Writes calibration and pose files. Images are not touched.
    pub fn write_metadata(&self, root: &Path) -> Result<()> {
        fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        write_calibration(&root.join(CALIBRATION_FILE), &self.rgb, &self.depth)?;
        write_poses_csv(&root.join(RGB_POSES_FILE), &self.rgb_frames)?;
        write_poses_csv(&root.join(DEPTH_POSES_FILE), &self.depth_frames)
    }
}

/// RGB frame whose timestamp is closest to `depth`'s; ties go to the earlier
/// frame. `rgb_frames` must be sorted by timestamp.
pub fn associate_frames<'a>(depth: &FrameRecord, rgb_frames: &'a [FrameRecord]) -> Option<&'a FrameRecord> {
    let t = depth.timestamp_us;
    let after = rgb_frames.partition_point(|r| r.timestamp_us < t);
    let candidates = [after.checked_sub(1), Some(after)];
    candidates
        .into_iter()
        .flatten()
        .filter_map(|i| rgb_frames.get(i))
        .min_by_key(|r| r.timestamp_us.abs_diff(t))
}

/// Like [`associate_frames`] but rejects matches further than `max_gap_us`.
pub fn associate_within<'a>(
    depth: &FrameRecord,
    rgb_frames: &'a [FrameRecord],
    max_gap_us: u64,
) -> Option<&'a FrameRecord> {
    associate_frames(depth, rgb_frames).filter(|r| r.timestamp_us.abs_diff(depth.timestamp_us) <= max_gap_us)
}
