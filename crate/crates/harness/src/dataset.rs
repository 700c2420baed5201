//! Sensor streams and their on-disk format.
//!
//! A dataset is a directory:
//!
//! ```text
//! calib.txt            key = value camera intrinsics and extrinsics
//! imu.csv              t,wx,wy,wz,ax,ay,az
//! groundtruth.csv      t,px,py,pz,qw,qx,qy,qz
//! scans/index.csv      id,start,end
//! scans/NNNNNN.csv     t,x,y,z        (LiDAR frame)
//! images/index.csv     id,t
//! images/NNNNNN.pgm    8-bit binary graymap
//! ```
//!
//! Images are synchronised with scan ends: image `k` is taken at the end of
//! scan `k`. Numbers are written in shortest round-trip form, so writing
//! and re-reading a stream is lossless.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder, ImageReader};
use livo_core::camera::{CameraModel, Image};
use livo_core::lidar::{LidarPoint, LidarScan};
use livo_core::{ImuSample, Pose};
use livo_sim::{Frame, Simulation};
use nalgebra::{Matrix3, Point3, Quaternion, Rotation3, UnitQuaternion, Vector3};

use crate::error::{HarnessError, Result};

/// Tolerance for matching an image timestamp to its scan end.
pub const SYNC_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    pub camera: CameraModel,
    pub imu_from_lidar: Pose,
}

/// A ground-truth world-from-IMU pose as stored on disk.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundTruthPose {
    pub timestamp: f64,
    pub position: Vector3<f64>,
    pub orientation: UnitQuaternion<f64>,
}

impl GroundTruthPose {
    pub fn pose(&self) -> Pose {
        Pose::from_quaternion(self.orientation, self.position)
    }
}

/// Time-ordered IMU, ground truth and frame streams.
pub trait SensorSource {
    fn name(&self) -> String;
    fn calibration(&self) -> Calibration;
    fn imu(&self) -> &[ImuSample];
    /// May be empty when no ground truth exists.
    fn groundtruth(&self) -> &[GroundTruthPose];
    fn frame_count(&self) -> usize;
    fn scan(&self, k: usize) -> Result<LidarScan>;
    /// Timestamp of image `k`, available without loading the image.
    fn image_timestamp(&self, k: usize) -> Result<f64>;
    fn image(&self, k: usize) -> Result<Image>;

    fn frame(&self, k: usize) -> Result<Frame> {
        Ok(Frame { scan: self.scan(k)?, image: self.image(k)? })
    }
}

fn missing(k: usize) -> HarnessError {
    HarnessError::Validation { record: format!("frame {k}"), message: "no such frame".into() }
}

/// A simulation with its ground truth converted to the stored form.
pub struct SimulatedSource {
    pub simulation: Simulation,
    groundtruth: Vec<GroundTruthPose>,
}

impl SimulatedSource {
    pub fn new(simulation: Simulation) -> Self {
        let groundtruth = simulation
            .groundtruth
            .iter()
            .map(|g| GroundTruthPose { timestamp: g.timestamp, position: g.pose.translation, orientation: g.pose.quaternion() })
            .collect();
        Self { simulation, groundtruth }
    }
}

impl SensorSource for SimulatedSource {
    fn name(&self) -> String {
        self.simulation.scenario.name.to_string()
    }

    fn calibration(&self) -> Calibration {
        let sc = &self.simulation.scenario;
        Calibration { camera: sc.camera, imu_from_lidar: sc.imu_from_lidar }
    }

    fn imu(&self) -> &[ImuSample] {
        &self.simulation.imu
    }

    fn groundtruth(&self) -> &[GroundTruthPose] {
        &self.groundtruth
    }

    fn frame_count(&self) -> usize {
        self.simulation.frame_count()
    }

    fn scan(&self, k: usize) -> Result<LidarScan> {
        if k >= self.frame_count() {
            return Err(missing(k));
        }
        Ok(self.simulation.scenario.scan(k, &self.simulation.noise))
    }

    fn image_timestamp(&self, k: usize) -> Result<f64> {
        if k >= self.frame_count() {
            return Err(missing(k));
        }
        Ok(self.simulation.scenario.scan_window(k).1)
    }

    fn image(&self, k: usize) -> Result<Image> {
        if k >= self.frame_count() {
            return Err(missing(k));
        }
        Ok(self.simulation.scenario.image(k, &self.simulation.noise))
    }
}

/// Fully materialised streams.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub name: String,
    pub calibration: Calibration,
    pub imu: Vec<ImuSample>,
    pub groundtruth: Vec<GroundTruthPose>,
    pub frames: Vec<Frame>,
}

impl Recording {
    pub fn capture(source: &dyn SensorSource) -> Result<Self> {
        Ok(Self {
            name: source.name(),
            calibration: source.calibration(),
            imu: source.imu().to_vec(),
            groundtruth: source.groundtruth().to_vec(),
            frames: (0..source.frame_count()).map(|k| source.frame(k)).collect::<Result<_>>()?,
        })
    }
}

impl SensorSource for Recording {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn calibration(&self) -> Calibration {
        self.calibration
    }

    fn imu(&self) -> &[ImuSample] {
        &self.imu
    }

    fn groundtruth(&self) -> &[GroundTruthPose] {
        &self.groundtruth
    }

    fn frame_count(&self) -> usize {
        self.frames.len()
    }

    fn scan(&self, k: usize) -> Result<LidarScan> {
        self.frames.get(k).map(|f| f.scan.clone()).ok_or_else(|| missing(k))
    }

    fn image_timestamp(&self, k: usize) -> Result<f64> {
        self.frames.get(k).map(|f| f.image.timestamp).ok_or_else(|| missing(k))
    }

    fn image(&self, k: usize) -> Result<Image> {
        self.frames.get(k).map(|f| f.image.clone()).ok_or_else(|| missing(k))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanEntry {
    pub id: u64,
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageEntry {
    pub id: u64,
    pub timestamp: f64,
}

/// A dataset directory with IMU and ground truth loaded; scans and images
/// are read on demand.
#[derive(Debug, Clone)]
pub struct DiskDataset {
    pub root: PathBuf,
    pub name: String,
    pub calibration: Calibration,
    pub imu: Vec<ImuSample>,
    pub groundtruth: Vec<GroundTruthPose>,
    pub scans: Vec<ScanEntry>,
    pub images: Vec<ImageEntry>,
}

impl SensorSource for DiskDataset {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn calibration(&self) -> Calibration {
        self.calibration
    }

    fn imu(&self) -> &[ImuSample] {
        &self.imu
    }

    fn groundtruth(&self) -> &[GroundTruthPose] {
        &self.groundtruth
    }

    fn frame_count(&self) -> usize {
        self.scans.len()
    }

    fn scan(&self, k: usize) -> Result<LidarScan> {
        let entry = *self.scans.get(k).ok_or_else(|| missing(k))?;
        read_scan(&self.root.join("scans").join(format!("{:06}.csv", entry.id)), &entry)
    }

    fn image_timestamp(&self, k: usize) -> Result<f64> {
        self.images.get(k).map(|e| e.timestamp).ok_or_else(|| missing(k))
    }

    fn image(&self, k: usize) -> Result<Image> {
        let entry = *self.images.get(k).ok_or_else(|| missing(k))?;
        read_image(&self.root.join("images").join(format!("{:06}.pgm", entry.id)), entry.timestamp)
    }
}

fn parse_err(path: &Path, line: u64, message: impl Into<String>) -> HarnessError {
    HarnessError::Parse { path: path.to_path_buf(), line, message: message.into() }
}

/// Reads a headed CSV file of numbers, checking the column count.
fn read_numeric_csv(path: &Path, columns: usize) -> Result<Vec<(u64, Vec<f64>)>> {
    let file = File::open(path).map_err(|e| HarnessError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(file);
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(path, line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != columns {
            return Err(parse_err(path, line, format!("expected {columns} fields, found {}", rec.len())));
        }
        let values = rec
            .iter()
            .map(|f| f.parse::<f64>().ok().filter(|v| v.is_finite()))
            .collect::<Option<Vec<f64>>>()
            .ok_or_else(|| parse_err(path, line, format!("malformed number in {:?}", rec.iter().collect::<Vec<_>>())))?;
        rows.push((line, values));
    }
    Ok(rows)
}

fn check_increasing(path: &Path, rows: &[(u64, Vec<f64>)], strict: bool) -> Result<()> {
    for w in rows.windows(2) {
        let (t0, t1) = (w[0].1[0], w[1].1[0]);
        if t1 < t0 || (strict && t1 == t0) {
            return Err(HarnessError::Validation {
                record: format!("{}:{} (t = {t1})", path.display(), w[1].0),
                message: format!("timestamp not after previous record (t = {t0})"),
            });
        }
    }
    Ok(())
}

fn as_id(path: &Path, line: u64, v: f64) -> Result<u64> {
    if v >= 0.0 && v.fract() == 0.0 {
        Ok(v as u64)
    } else {
        Err(parse_err(path, line, format!("invalid id {v}")))
    }
}

fn read_scan(path: &Path, entry: &ScanEntry) -> Result<LidarScan> {
    let rows = read_numeric_csv(path, 4)?;
    let scan = LidarScan {
        points: rows
            .iter()
            .map(|(_, r)| LidarPoint { timestamp: r[0], point: Point3::new(r[1], r[2], r[3]) })
            .collect(),
        scan_start: entry.start,
        scan_end: entry.end,
    };
    scan.validate().map_err(|e| HarnessError::Validation { record: path.display().to_string(), message: e.to_string() })?;
    Ok(scan)
}

fn read_image(path: &Path, timestamp: f64) -> Result<Image> {
    let reader = ImageReader::open(path).map_err(|e| HarnessError::io(path, e))?;
    let decoded = reader
        .decode()
        .map_err(|e| parse_err(path, 0, e.to_string()))?
        .into_luma8();
    let (w, h) = decoded.dimensions();
    let data = decoded.into_raw().into_iter().map(|b| b as f64 / 255.0).collect();
    Ok(Image { width: w as usize, height: h as usize, data, timestamp })
}

/// Row-major rotation followed by translation, so calibration survives a
/// round trip exactly.
fn pose_fields(p: &Pose) -> String {
    let r = p.rotation.matrix();
    let t = p.translation;
    let rows = (0..3).flat_map(|i| (0..3).map(move |j| r[(i, j)]));
    rows.chain(t.iter().copied()).map(|v| v.to_string()).collect::<Vec<_>>().join(" ")
}

fn parse_pose(path: &Path, line: u64, v: &str) -> Result<Pose> {
    let nums: Vec<f64> = v.split_whitespace().map(str::parse).collect::<std::result::Result<_, _>>()
        .map_err(|_| parse_err(path, line, format!("malformed pose {v:?}")))?;
    if nums.len() != 12 {
        return Err(parse_err(path, line, "pose needs r00 r01 .. r22 px py pz"));
    }
    let r = Matrix3::from_row_slice(&nums[..9]);
    if !(r.transpose() * r - Matrix3::identity()).iter().all(|e| e.abs() < 1e-9) || r.determinant() <= 0.0 {
        return Err(parse_err(path, line, "pose rotation is not orthonormal"));
    }
    Ok(Pose::new(Rotation3::from_matrix_unchecked(r), Vector3::new(nums[9], nums[10], nums[11])))
}

fn read_calibration(path: &Path) -> Result<(String, Calibration)> {
    let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    let mut camera = CameraModel::default();
    let mut imu_from_lidar = Pose::identity();
    let mut name = String::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i as u64 + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| parse_err(path, line_no, "expected `key = value`"))?;
        let (k, v) = (k.trim(), v.trim());
        let num = || v.parse::<f64>().map_err(|_| parse_err(path, line_no, format!("malformed value for {k}")));
        let int = || v.parse::<usize>().map_err(|_| parse_err(path, line_no, format!("malformed value for {k}")));
        match k {
            "name" => name = v.to_string(),
            "camera.fx" => camera.fx = num()?,
            "camera.fy" => camera.fy = num()?,
            "camera.cx" => camera.cx = num()?,
            "camera.cy" => camera.cy = num()?,
            "camera.width" => camera.width = int()?,
            "camera.height" => camera.height = int()?,
            "camera.cam_from_imu" => camera.cam_from_imu = parse_pose(path, line_no, v)?,
            "imu_from_lidar" => imu_from_lidar = parse_pose(path, line_no, v)?,
            _ => return Err(parse_err(path, line_no, format!("unknown key {k:?}"))),
        }
    }
    camera.validate().map_err(|e| HarnessError::Validation { record: path.display().to_string(), message: e.to_string() })?;
    Ok((name, Calibration { camera, imu_from_lidar }))
}

/// Reads a `groundtruth.csv` file.
pub fn read_groundtruth(path: &Path) -> Result<Vec<GroundTruthPose>> {
    let rows = read_numeric_csv(path, 8)?;
    check_increasing(path, &rows, true)?;
    rows.iter()
        .map(|(line, r)| {
            let q = Quaternion::new(r[4], r[5], r[6], r[7]);
            if (q.norm() - 1.0).abs() > 1e-6 {
                return Err(parse_err(path, *line, "orientation is not a unit quaternion"));
            }
            Ok(GroundTruthPose {
                timestamp: r[0],
                position: Vector3::new(r[1], r[2], r[3]),
                orientation: UnitQuaternion::new_unchecked(q),
            })
        })
        .collect()
}

/// Opens and validates a dataset directory.
pub fn read_dataset(root: &Path) -> Result<DiskDataset> {
    let (name, calibration) = read_calibration(&root.join("calib.txt"))?;

    let imu_path = root.join("imu.csv");
    let rows = read_numeric_csv(&imu_path, 7)?;
    check_increasing(&imu_path, &rows, true)?;
    let imu = rows
        .iter()
        .map(|(_, r)| ImuSample {
            timestamp: r[0],
            angular_velocity: Vector3::new(r[1], r[2], r[3]),
            linear_acceleration: Vector3::new(r[4], r[5], r[6]),
        })
        .collect();

    let gt_path = root.join("groundtruth.csv");
    let groundtruth = if gt_path.exists() { read_groundtruth(&gt_path)? } else { Vec::new() };

    let scan_index = root.join("scans").join("index.csv");
    let rows = read_numeric_csv(&scan_index, 3)?;
    let mut scans = Vec::with_capacity(rows.len());
    for (line, r) in &rows {
        let entry = ScanEntry { id: as_id(&scan_index, *line, r[0])?, start: r[1], end: r[2] };
        if entry.end < entry.start {
            return Err(HarnessError::Validation {
                record: format!("{}:{line} (t = {})", scan_index.display(), entry.start),
                message: "scan ends before it starts".into(),
            });
        }
        if let Some(prev) = scans.last().map(|s: &ScanEntry| s.end) {
            if entry.start < prev {
                return Err(HarnessError::Validation {
                    record: format!("{}:{line} (t = {})", scan_index.display(), entry.start),
                    message: format!("scan starts before the previous one ended (t = {prev})"),
                });
            }
        }
        scans.push(entry);
    }

    let image_index = root.join("images").join("index.csv");
    let rows = read_numeric_csv(&image_index, 2)?;
    check_increasing(&image_index, &rows.iter().map(|(l, r)| (*l, vec![r[1]])).collect::<Vec<_>>(), true)?;
    let mut images = Vec::with_capacity(rows.len());
    for (line, r) in &rows {
        images.push(ImageEntry { id: as_id(&image_index, *line, r[0])?, timestamp: r[1] });
    }
    if images.len() != scans.len() {
        return Err(HarnessError::Validation {
            record: image_index.display().to_string(),
            message: format!("{} images for {} scans", images.len(), scans.len()),
        });
    }
    for (k, (s, im)) in scans.iter().zip(&images).enumerate() {
        if (s.end - im.timestamp).abs() > SYNC_TOLERANCE {
            return Err(HarnessError::Validation {
                record: format!("{}:{} (t = {})", image_index.display(), k + 2, im.timestamp),
                message: format!("image not synchronised with scan end {}", s.end),
            });
        }
    }

    Ok(DiskDataset { root: root.to_path_buf(), name, calibration, imu, groundtruth, scans, images })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| HarnessError::io(path, e))
}

fn write_lines(path: &Path, header: &str, rows: impl Iterator<Item = String>) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| HarnessError::io(path, e);
    writeln!(w, "{header}").map_err(io)?;
    for r in rows {
        writeln!(w, "{r}").map_err(io)?;
    }
    w.flush().map_err(io)
}

fn write_image(path: &Path, image: &Image) -> Result<()> {
    let bytes: Vec<u8> = image.data.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    let w = create(path)?;
    PnmEncoder::new(w)
        .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
        .write_image(&bytes, image.width as u32, image.height as u32, ExtendedColorType::L8)
        .map_err(|e| HarnessError::Validation { record: path.display().to_string(), message: e.to_string() })
}

/// Writes `source` (up to `max_frames`, 0 for all) in the dataset layout.
pub fn write_dataset(root: &Path, source: &dyn SensorSource, max_frames: usize) -> Result<()> {
    for dir in [root.to_path_buf(), root.join("scans"), root.join("images")] {
        fs::create_dir_all(&dir).map_err(|e| HarnessError::io(&dir, e))?;
    }
    let cal = source.calibration();
    let c = &cal.camera;
    let calib = format!(
        "name = {}\ncamera.fx = {}\ncamera.fy = {}\ncamera.cx = {}\ncamera.cy = {}\ncamera.width = {}\ncamera.height = {}\ncamera.cam_from_imu = {}\nimu_from_lidar = {}\n",
        source.name(),
        c.fx,
        c.fy,
        c.cx,
        c.cy,
        c.width,
        c.height,
        pose_fields(&c.cam_from_imu),
        pose_fields(&cal.imu_from_lidar)
    );
    let calib_path = root.join("calib.txt");
    fs::write(&calib_path, calib).map_err(|e| HarnessError::io(&calib_path, e))?;

    write_lines(
        &root.join("imu.csv"),
        "t,wx,wy,wz,ax,ay,az",
        source.imu().iter().map(|s| {
            let (w, a) = (s.angular_velocity, s.linear_acceleration);
            format!("{},{},{},{},{},{},{}", s.timestamp, w.x, w.y, w.z, a.x, a.y, a.z)
        }),
    )?;
    write_lines(
        &root.join("groundtruth.csv"),
        "t,px,py,pz,qw,qx,qy,qz",
        source.groundtruth().iter().map(|g| {
            let (p, q) = (g.position, g.orientation);
            format!("{},{},{},{},{},{},{},{}", g.timestamp, p.x, p.y, p.z, q.w, q.i, q.j, q.k)
        }),
    )?;

    let count = match max_frames {
        0 => source.frame_count(),
        n => n.min(source.frame_count()),
    };
    let mut scan_rows = Vec::with_capacity(count);
    let mut image_rows = Vec::with_capacity(count);
    for k in 0..count {
        let frame = source.frame(k)?;
        let s = &frame.scan;
        write_lines(
            &root.join("scans").join(format!("{k:06}.csv")),
            "t,x,y,z",
            s.points.iter().map(|p| format!("{},{},{},{}", p.timestamp, p.point.x, p.point.y, p.point.z)),
        )?;
        write_image(&root.join("images").join(format!("{k:06}.pgm")), &frame.image)?;
        scan_rows.push(format!("{k},{},{}", s.scan_start, s.scan_end));
        image_rows.push(format!("{k},{}", frame.image.timestamp));
    }
    write_lines(&root.join("scans").join("index.csv"), "id,start,end", scan_rows.into_iter())?;
    write_lines(&root.join("images").join("index.csv"), "id,t", image_rows.into_iter())?;
    Ok(())
}

/// Builds a named simulated scenario with the given noise model.
pub fn simulated(name: &str, seed: u64, noise: crate::config::SimNoise) -> Result<SimulatedSource> {
    let sc = livo_sim::scenario(name).ok_or_else(|| {
        HarnessError::Config(format!("unknown scenario {name:?}; expected one of {}", livo_sim::SCENARIO_NAMES.join(", ")))
    })?;
    let spec = match noise {
        crate::config::SimNoise::Default => livo_sim::SensorNoiseSpec::default(),
        crate::config::SimNoise::Zero => livo_sim::SensorNoiseSpec::zero(),
    };
    Ok(SimulatedSource::new(Simulation::new(sc, spec.with_seed(seed))))
}
