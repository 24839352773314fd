//! The cached dataset container: a zip file holding `manifest.json` plus one
//! raw little-endian f32 tensor file per array, named `<key>.f32`, row-major.
//!
//! Writes are byte-deterministic: entries are stored uncompressed with fixed
//! timestamps and tensors are emitted in sorted key order, so identical
//! content produces identical bytes.

use crate::geometry::CameraIntrinsics;
use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{Read, Seek, Write};
use std::path::Path;
use thiserror::Error;
use zip::{write::SimpleFileOptions, CompressionMethod, ZipArchive, ZipWriter};

/// Current container format version.
pub const FORMAT_VERSION: u32 = 1;

/// Tensor key for uncentered camera-space joints, shape [N, J, 3], mm.
pub const TENSOR_JOINTS_3D_CAM: &str = "joints_3d_cam";
/// Tensor key for projected keypoints, shape [N, J, 2], px.
pub const TENSOR_KEYPOINTS_2D: &str = "keypoints_2d";
/// Tensor key for per-sample intrinsics (fx, fy, cx, cy, width, height),
/// shape [N, 6].
pub const TENSOR_CAMERA: &str = "camera";
/// Tensor key for prediction files, shape [N, J, 3], hip-centered mm.
pub const TENSOR_PRED_JOINTS_3D: &str = "joints_3d";

#[derive(Debug, Error)]
pub enum ArchiveError {
    #[error("archive io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("archive container error: {0}")]
    Zip(#[from] zip::result::ZipError),
    #[error("manifest parse error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported archive format version {found} (supported: {FORMAT_VERSION})")]
    VersionMismatch { found: u32 },
    #[error("archive corrupt: {0}")]
    Corrupt(String),
    #[error("tensor {0} not present in archive")]
    MissingTensor(String),
}

/// Contiguous index ranges of the two splits; train precedes test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitRanges {
    pub train: [usize; 2],
    pub test: [usize; 2],
}

impl SplitRanges {
    pub fn train_len(&self) -> usize {
        self.train[1] - self.train[0]
    }

    pub fn test_len(&self) -> usize {
        self.test[1] - self.test[0]
    }
}

/// Archive metadata. Tensor shapes live here; the tensor files hold bare
/// numbers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub dataset: String,
    pub joint_set: String,
    pub units: String,
    pub sample_count: usize,
    pub sample_ids: Vec<String>,
    pub split_ranges: SplitRanges,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stats: Option<String>,
    pub tensors: BTreeMap<String, Vec<usize>>,
}

impl Manifest {
    fn validate(&self) -> Result<(), ArchiveError> {
        if self.format_version != FORMAT_VERSION {
            return Err(ArchiveError::VersionMismatch {
                found: self.format_version,
            });
        }
        if self.sample_ids.len() != self.sample_count {
            return Err(ArchiveError::Corrupt(format!(
                "manifest declares {} samples but lists {} ids",
                self.sample_count,
                self.sample_ids.len()
            )));
        }
        let s = &self.split_ranges;
        if s.train[0] != 0 || s.train[1] != s.test[0] || s.test[1] != self.sample_count {
            return Err(ArchiveError::Corrupt(format!(
                "split ranges {s:?} do not tile 0..{}",
                self.sample_count
            )));
        }
        for (key, shape) in &self.tensors {
            if shape.is_empty() || shape.iter().product::<usize>() == 0 {
                return Err(ArchiveError::Corrupt(format!(
                    "tensor {key} has empty shape {shape:?}"
                )));
            }
            if shape[0] != self.sample_count {
                return Err(ArchiveError::Corrupt(format!(
                    "tensor {key} leading dimension {} != sample count {}",
                    shape[0], self.sample_count
                )));
            }
        }
        Ok(())
    }
}

/// A dense row-major f32 tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "shape/data mismatch"
        );
        Self { shape, data }
    }

    /// Elements per leading-dimension row.
    pub fn row_elems(&self) -> usize {
        self.shape[1..].iter().product()
    }
}

/// A dataset (or prediction) archive held fully in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetArchive {
    pub manifest: Manifest,
    pub tensors: BTreeMap<String, Tensor>,
}

impl DatasetArchive {
    pub fn tensor(&self, key: &str) -> Result<&Tensor, ArchiveError> {
        self.tensors
            .get(key)
            .ok_or_else(|| ArchiveError::MissingTensor(key.to_string()))
    }

    fn validate(&self) -> Result<(), ArchiveError> {
        self.manifest.validate()?;
        let declared: Vec<&String> = self.manifest.tensors.keys().collect();
        let held: Vec<&String> = self.tensors.keys().collect();
        if declared != held {
            return Err(ArchiveError::Corrupt(format!(
                "manifest tensors {declared:?} disagree with held tensors {held:?}"
            )));
        }
        for (key, tensor) in &self.tensors {
            if self.manifest.tensors[key] != tensor.shape {
                return Err(ArchiveError::Corrupt(format!(
                    "tensor {key} shape {:?} disagrees with manifest {:?}",
                    tensor.shape, self.manifest.tensors[key]
                )));
            }
        }
        Ok(())
    }
}

fn stored_options() -> SimpleFileOptions {
    SimpleFileOptions::default()
        .compression_method(CompressionMethod::Stored)
        .last_modified_time(zip::DateTime::default())
        .unix_permissions(0o644)
}

/// Write an archive. Identical content yields identical bytes.
pub fn write_archive<W: Write + Seek>(
    archive: &DatasetArchive,
    writer: W,
) -> Result<(), ArchiveError> {
    archive.validate()?;
    let mut zip = ZipWriter::new(writer);
    zip.start_file("manifest.json", stored_options())?;
    let manifest_json = serde_json::to_string_pretty(&archive.manifest)?;
    zip.write_all(manifest_json.as_bytes())?;
    for (key, tensor) in &archive.tensors {
        zip.start_file(format!("{key}.f32"), stored_options())?;
        let mut bytes = Vec::with_capacity(tensor.data.len() * 4);
        for v in &tensor.data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        zip.write_all(&bytes)?;
    }
    zip.finish()?;
    Ok(())
}

pub fn write_archive_file(archive: &DatasetArchive, path: &Path) -> Result<(), ArchiveError> {
    let file = std::fs::File::create(path)?;
    write_archive(archive, std::io::BufWriter::new(file))
}

/// Streaming reader: the manifest is loaded and cross-checked against entry
/// sizes up front; tensor payloads are read on demand.
pub struct ArchiveReader<R: Read + Seek> {
    zip: ZipArchive<R>,
    manifest: Manifest,
}

impl<R: Read + Seek> ArchiveReader<R> {
    pub fn open(reader: R) -> Result<Self, ArchiveError> {
        let mut zip = ZipArchive::new(reader)?;
        let manifest: Manifest = {
            let entry = zip
                .by_name("manifest.json")
                .map_err(|_| ArchiveError::Corrupt("archive has no manifest.json".into()))?;
            serde_json::from_reader(entry)?
        };
        manifest.validate()?;
        // cross-check every declared tensor against its entry size now, so
        // truncation surfaces as a corruption error before any data is used
        for (key, shape) in &manifest.tensors {
            let name = format!("{key}.f32");
            let entry = zip
                .by_name(&name)
                .map_err(|_| ArchiveError::MissingTensor(key.clone()))?;
            let expected = (shape.iter().product::<usize>() * 4) as u64;
            if entry.size() != expected {
                return Err(ArchiveError::Corrupt(format!(
                    "tensor {key} holds {} bytes, manifest shape {shape:?} needs {expected}",
                    entry.size()
                )));
            }
        }
        Ok(Self { zip, manifest })
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    /// Read one tensor fully.
    pub fn read_tensor(&mut self, key: &str) -> Result<Tensor, ArchiveError> {
        let shape = self
            .manifest
            .tensors
            .get(key)
            .ok_or_else(|| ArchiveError::MissingTensor(key.to_string()))?
            .clone();
        let elems: usize = shape.iter().product();
        let mut data = Vec::with_capacity(elems);
        self.stream_tensor(key, shape[0], |_, chunk| {
            data.extend_from_slice(chunk);
        })?;
        debug_assert_eq!(data.len(), elems);
        Ok(Tensor { shape, data })
    }

    /// Stream a tensor in chunks of at most `chunk_rows` leading-dimension
    /// rows. The callback receives (row_offset, values); the internal buffer
    /// is one chunk, so memory stays bounded regardless of tensor size.
    pub fn stream_tensor(
        &mut self,
        key: &str,
        chunk_rows: usize,
        mut f: impl FnMut(usize, &[f32]),
    ) -> Result<(), ArchiveError> {
        assert!(chunk_rows > 0);
        let shape = self
            .manifest
            .tensors
            .get(key)
            .ok_or_else(|| ArchiveError::MissingTensor(key.to_string()))?
            .clone();
        let rows = shape[0];
        let row_elems: usize = shape[1..].iter().product();
        let mut entry = self.zip.by_name(&format!("{key}.f32"))?;
        let mut byte_buf = vec![0u8; chunk_rows * row_elems * 4];
        let mut val_buf = vec![0f32; chunk_rows * row_elems];
        let mut row = 0;
        while row < rows {
            let take = chunk_rows.min(rows - row);
            let bytes = &mut byte_buf[..take * row_elems * 4];
            entry.read_exact(bytes).map_err(|e| {
                ArchiveError::Corrupt(format!("tensor {key} truncated at row {row}: {e}"))
            })?;
            for (v, b) in val_buf.iter_mut().zip(bytes.chunks_exact(4)) {
                *v = f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
            }
            f(row, &val_buf[..take * row_elems]);
            row += take;
        }
        Ok(())
    }

    /// Load everything into a [`DatasetArchive`].
    pub fn read_all(mut self) -> Result<DatasetArchive, ArchiveError> {
        let keys: Vec<String> = self.manifest.tensors.keys().cloned().collect();
        let mut tensors = BTreeMap::new();
        for key in keys {
            let t = self.read_tensor(&key)?;
            tensors.insert(key, t);
        }
        Ok(DatasetArchive {
            manifest: self.manifest,
            tensors,
        })
    }
}

pub fn read_archive_file(path: &Path) -> Result<DatasetArchive, ArchiveError> {
    let file = std::fs::File::open(path)?;
    ArchiveReader::open(std::io::BufReader::new(file))?.read_all()
}

/// [N, J, 3] tensor from f64 poses (cast to f32).
pub fn tensor_from_poses3(poses: &[Vec<Vector3<f64>>]) -> Tensor {
    let j = poses.first().map_or(0, Vec::len);
    let mut data = Vec::with_capacity(poses.len() * j * 3);
    for pose in poses {
        assert_eq!(pose.len(), j, "ragged pose batch");
        for p in pose {
            data.extend_from_slice(&[p.x as f32, p.y as f32, p.z as f32]);
        }
    }
    Tensor::new(vec![poses.len(), j, 3], data)
}

pub fn poses3_from_tensor(t: &Tensor) -> Result<Vec<Vec<Vector3<f64>>>, ArchiveError> {
    if t.shape.len() != 3 || t.shape[2] != 3 {
        return Err(ArchiveError::Corrupt(format!(
            "expected [N, J, 3] tensor, got {:?}",
            t.shape
        )));
    }
    let j = t.shape[1];
    Ok(t.data
        .chunks_exact(j * 3)
        .map(|row| {
            row.chunks_exact(3)
                .map(|p| Vector3::new(p[0] as f64, p[1] as f64, p[2] as f64))
                .collect()
        })
        .collect())
}

/// [N, J, 2] tensor from f64 keypoints (cast to f32).
pub fn tensor_from_points2(points: &[Vec<Vector2<f64>>]) -> Tensor {
    let j = points.first().map_or(0, Vec::len);
    let mut data = Vec::with_capacity(points.len() * j * 2);
    for row in points {
        assert_eq!(row.len(), j, "ragged keypoint batch");
        for p in row {
            data.extend_from_slice(&[p.x as f32, p.y as f32]);
        }
    }
    Tensor::new(vec![points.len(), j, 2], data)
}

pub fn points2_from_tensor(t: &Tensor) -> Result<Vec<Vec<Vector2<f64>>>, ArchiveError> {
    if t.shape.len() != 3 || t.shape[2] != 2 {
        return Err(ArchiveError::Corrupt(format!(
            "expected [N, J, 2] tensor, got {:?}",
            t.shape
        )));
    }
    let j = t.shape[1];
    Ok(t.data
        .chunks_exact(j * 2)
        .map(|row| {
            row.chunks_exact(2)
                .map(|p| Vector2::new(p[0] as f64, p[1] as f64))
                .collect()
        })
        .collect())
}

/// [N, 6] tensor of (fx, fy, cx, cy, width, height).
pub fn tensor_from_cameras(cams: &[CameraIntrinsics]) -> Tensor {
    let mut data = Vec::with_capacity(cams.len() * 6);
    for c in cams {
        data.extend_from_slice(&[
            c.fx as f32,
            c.fy as f32,
            c.cx as f32,
            c.cy as f32,
            c.width as f32,
            c.height as f32,
        ]);
    }
    Tensor::new(vec![cams.len(), 6], data)
}

pub fn cameras_from_tensor(t: &Tensor) -> Result<Vec<CameraIntrinsics>, ArchiveError> {
    if t.shape.len() != 2 || t.shape[1] != 6 {
        return Err(ArchiveError::Corrupt(format!(
            "expected [N, 6] camera tensor, got {:?}",
            t.shape
        )));
    }
    Ok(t.data
        .chunks_exact(6)
        .map(|c| CameraIntrinsics {
            fx: c[0] as f64,
            fy: c[1] as f64,
            cx: c[2] as f64,
            cy: c[3] as f64,
            width: c[4] as f64,
            height: c[5] as f64,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use std::io::Cursor;

    fn sample_archive(n: usize, seed: u64) -> DatasetArchive {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let poses: Vec<Vec<Vector3<f64>>> = (0..n)
            .map(|_| {
                (0..16)
                    .map(|_| {
                        Vector3::new(
                            rng.gen_range(-500.0..500.0),
                            rng.gen_range(-900.0..900.0),
                            rng.gen_range(2000.0..8000.0),
                        )
                    })
                    .collect()
            })
            .collect();
        let kps: Vec<Vec<Vector2<f64>>> = (0..n)
            .map(|_| {
                (0..16)
                    .map(|_| Vector2::new(rng.gen_range(0.0..1920.0), rng.gen_range(0.0..1080.0)))
                    .collect()
            })
            .collect();
        let cams = vec![
            CameraIntrinsics {
                fx: 1146.8,
                fy: 1146.8,
                cx: 500.0,
                cy: 501.0,
                width: 1000.0,
                height: 1002.0,
            };
            n
        ];
        let train = n * 7 / 10;
        let mut tensors = BTreeMap::new();
        tensors.insert(TENSOR_JOINTS_3D_CAM.to_string(), tensor_from_poses3(&poses));
        tensors.insert(TENSOR_KEYPOINTS_2D.to_string(), tensor_from_points2(&kps));
        tensors.insert(TENSOR_CAMERA.to_string(), tensor_from_cameras(&cams));
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            dataset: "synthtest".into(),
            joint_set: "canonical16".into(),
            units: "mm".into(),
            sample_count: n,
            sample_ids: (0..n).map(|i| format!("s/{i}")).collect(),
            split_ranges: SplitRanges {
                train: [0, train],
                test: [train, n],
            },
            stats: None,
            tensors: tensors
                .iter()
                .map(|(k, t)| (k.clone(), t.shape.clone()))
                .collect(),
        };
        DatasetArchive { manifest, tensors }
    }

    fn to_bytes(archive: &DatasetArchive) -> Vec<u8> {
        let mut buf = Cursor::new(Vec::new());
        write_archive(archive, &mut buf).unwrap();
        buf.into_inner()
    }

    #[test]
    fn write_read_round_trip_is_bit_identical() {
        let archive = sample_archive(40, 1);
        let bytes = to_bytes(&archive);
        let back = ArchiveReader::open(Cursor::new(bytes.clone()))
            .unwrap()
            .read_all()
            .unwrap();
        assert_eq!(back, archive);

        // rewriting the read-back archive reproduces the same bytes
        let bytes2 = to_bytes(&back);
        assert_eq!(bytes, bytes2);
    }

    #[test]
    fn identical_content_gives_identical_bytes() {
        let a = to_bytes(&sample_archive(25, 7));
        let b = to_bytes(&sample_archive(25, 7));
        assert_eq!(a, b);
        let c = to_bytes(&sample_archive(25, 8));
        assert_ne!(a, c);
    }

    #[test]
    fn truncated_file_is_a_corruption_error() {
        let bytes = to_bytes(&sample_archive(30, 2));
        for cut in [bytes.len() - 50, bytes.len() / 2, 10] {
            let err = match ArchiveReader::open(Cursor::new(bytes[..cut].to_vec())) {
                Err(e) => e,
                Ok(_) => panic!("truncation at {cut} must not open cleanly"),
            };
            assert!(
                matches!(err, ArchiveError::Zip(_) | ArchiveError::Corrupt(_)),
                "unexpected error class: {err:?}"
            );
        }
    }

    #[test]
    fn manifest_tensor_size_disagreement_is_detected() {
        // hand-build a zip whose tensor payload is shorter than the manifest
        // claims
        let mut archive = sample_archive(10, 3);
        archive
            .manifest
            .tensors
            .insert(TENSOR_JOINTS_3D_CAM.into(), vec![10, 16, 3]);
        let mut buf = Cursor::new(Vec::new());
        {
            let mut zip = ZipWriter::new(&mut buf);
            zip.start_file("manifest.json", stored_options()).unwrap();
            zip.write_all(serde_json::to_string(&archive.manifest).unwrap().as_bytes())
                .unwrap();
            for (key, tensor) in &archive.tensors {
                zip.start_file(format!("{key}.f32"), stored_options())
                    .unwrap();
                let mut bytes = Vec::new();
                for v in &tensor.data[..tensor.data.len() - 12] {
                    bytes.extend_from_slice(&v.to_le_bytes());
                }
                zip.write_all(&bytes).unwrap();
            }
            zip.finish().unwrap();
        }
        let err = expect_open_err(Cursor::new(buf.into_inner()));
        assert!(matches!(err, ArchiveError::Corrupt(_)), "{err:?}");
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let mut archive = sample_archive(5, 4);
        archive.manifest.format_version = 99;
        let mut buf = Cursor::new(Vec::new());
        let err = write_archive(&archive, &mut buf).unwrap_err();
        assert!(matches!(err, ArchiveError::VersionMismatch { found: 99 }));

        // and a hand-written file with a bad version fails on open
        let mut raw = Cursor::new(Vec::new());
        {
            let mut zip = ZipWriter::new(&mut raw);
            zip.start_file("manifest.json", stored_options()).unwrap();
            zip.write_all(serde_json::to_string(&archive.manifest).unwrap().as_bytes())
                .unwrap();
            zip.finish().unwrap();
        }
        let err = expect_open_err(Cursor::new(raw.into_inner()));
        assert!(matches!(err, ArchiveError::VersionMismatch { found: 99 }));
    }

    fn expect_open_err(buf: Cursor<Vec<u8>>) -> ArchiveError {
        match ArchiveReader::open(buf) {
            Ok(_) => panic!("open unexpectedly succeeded"),
            Err(e) => e,
        }
    }

    /// Read+Seek wrapper that counts bytes handed to the consumer.
    struct CountingReader<R> {
        inner: R,
        read: std::rc::Rc<std::cell::Cell<u64>>,
    }

    impl<R: Read> Read for CountingReader<R> {
        fn read(&mut self, buf: &mut [u8]) -> std::io::Result<usize> {
            let n = self.inner.read(buf)?;
            self.read.set(self.read.get() + n as u64);
            Ok(n)
        }
    }

    impl<R: Seek> Seek for CountingReader<R> {
        fn seek(&mut self, pos: std::io::SeekFrom) -> std::io::Result<u64> {
            self.inner.seek(pos)
        }
    }

    #[test]
    fn streaming_read_is_chunked_and_single_pass() {
        let archive = sample_archive(5000, 5);
        let bytes = to_bytes(&archive);
        let total_len = bytes.len() as u64;
        let counter = std::rc::Rc::new(std::cell::Cell::new(0u64));
        let reader = CountingReader {
            inner: Cursor::new(bytes),
            read: counter.clone(),
        };
        let mut ar = ArchiveReader::open(reader).unwrap();

        let tensor = archive.tensor(TENSOR_JOINTS_3D_CAM).unwrap();
        let row_elems = tensor.row_elems();
        let chunk_rows = 128;
        let mut sum = 0f64;
        let mut max_chunk = 0usize;
        let mut rows_seen = 0usize;
        ar.stream_tensor(TENSOR_JOINTS_3D_CAM, chunk_rows, |off, vals| {
            assert_eq!(off, rows_seen);
            assert!(vals.len() <= chunk_rows * row_elems);
            max_chunk = max_chunk.max(vals.len());
            rows_seen += vals.len() / row_elems;
            sum += vals.iter().map(|&v| v as f64).sum::<f64>();
        })
        .unwrap();
        assert_eq!(rows_seen, 5000);
        assert_eq!(max_chunk, chunk_rows * row_elems);

        let full_sum: f64 = tensor.data.iter().map(|&v| v as f64).sum();
        assert!((sum - full_sum).abs() < 1e-3);

        // uncompressed single-pass read: cumulative bytes stay within a
        // small factor of the file size (directory + manifest re-reads)
        assert!(counter.get() <= 2 * total_len);
    }

    #[test]
    fn missing_tensor_is_reported_by_name() {
        let archive = sample_archive(5, 6);
        let mut ar = ArchiveReader::open(Cursor::new(to_bytes(&archive))).unwrap();
        let err = ar.read_tensor("nope").unwrap_err();
        assert!(matches!(err, ArchiveError::MissingTensor(name) if name == "nope"));
    }

    #[test]
    fn tensor_conversions_roundtrip() {
        let archive = sample_archive(12, 9);
        let poses = poses3_from_tensor(archive.tensor(TENSOR_JOINTS_3D_CAM).unwrap()).unwrap();
        let again = tensor_from_poses3(&poses);
        assert_eq!(&again, archive.tensor(TENSOR_JOINTS_3D_CAM).unwrap());

        let kps = points2_from_tensor(archive.tensor(TENSOR_KEYPOINTS_2D).unwrap()).unwrap();
        let again = tensor_from_points2(&kps);
        assert_eq!(&again, archive.tensor(TENSOR_KEYPOINTS_2D).unwrap());

        let cams = cameras_from_tensor(archive.tensor(TENSOR_CAMERA).unwrap()).unwrap();
        let again = tensor_from_cameras(&cams);
        assert_eq!(&again, archive.tensor(TENSOR_CAMERA).unwrap());
    }
}
