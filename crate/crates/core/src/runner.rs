//! Prediction sources. Three kinds feed the evaluation harness: precomputed
//! prediction files (archive container), a noisy-oracle baseline for
//! calibration, and external model processes speaking a line-based JSON
//! protocol over stdin/stdout.

use crate::datasets::archive::{
    poses3_from_tensor, read_archive_file, tensor_from_poses3, write_archive_file, ArchiveError,
    DatasetArchive, Manifest, SplitRanges, FORMAT_VERSION, TENSOR_PRED_JOINTS_3D,
};
use crate::metrics::CENTERING_TOL_MM;
use crate::skeleton::JointSet;
use nalgebra::{Vector2, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread::JoinHandle;
use std::time::Duration;
use thiserror::Error;

pub const WIRE_PROTOCOL_VERSION: u32 = 1;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error(transparent)]
    Archive(#[from] ArchiveError),
    #[error("prediction file is missing {} evaluation id(s), first: {:?}", missing.len(), missing.first())]
    MissingIds { missing: Vec<String> },
    #[error("prediction file has {} id(s) not in the evaluation set, first: {:?}", unknown.len(), unknown.first())]
    UnknownIds { unknown: Vec<String> },
    #[error("prediction joint count {got} does not match the configured {expected}")]
    JointMismatch { expected: usize, got: usize },
    #[error("prediction for {id} is not hip-centered: root offset {offset_mm:.3e} mm")]
    NotCentered { id: String, offset_mm: f64 },
    #[error("cannot spawn model process {command:?}: {source}")]
    Spawn {
        command: String,
        source: std::io::Error,
    },
    #[error("model handshake mismatch on {field}: declared {declared}, expected {expected}")]
    HandshakeMismatch {
        field: &'static str,
        declared: String,
        expected: String,
    },
    #[error("malformed protocol frame (request id {id:?}): {reason}")]
    MalformedFrame { id: Option<u64>, reason: String },
    #[error(
        "model response timeout after {waited_s:.1} s (oldest pending request id {pending_id})"
    )]
    Timeout { pending_id: u64, waited_s: f64 },
    #[error("model process exited ({status}) with request id {pending_id:?} pending")]
    ChildExit {
        pending_id: Option<u64>,
        status: String,
    },
}

// -------------------------------------------------------------------------
// Prediction files
// -------------------------------------------------------------------------

/// Read a prediction archive and align its rows to `expected_ids` order.
/// Row order in the file does not matter; missing or extra ids are errors,
/// as are wrong joint cardinality and non-centered poses.
pub fn load_prediction_file(
    path: &Path,
    expected_ids: &[String],
    joint_set: &JointSet,
) -> Result<Vec<Vec<Vector3<f64>>>, RunnerError> {
    let archive = read_archive_file(path)?;
    let by_id: BTreeMap<&str, usize> = archive
        .manifest
        .sample_ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    let expected: BTreeSet<&str> = expected_ids.iter().map(|s| s.as_str()).collect();
    let missing: Vec<String> = expected_ids
        .iter()
        .filter(|id| !by_id.contains_key(id.as_str()))
        .cloned()
        .collect();
    if !missing.is_empty() {
        return Err(RunnerError::MissingIds { missing });
    }
    let unknown: Vec<String> = archive
        .manifest
        .sample_ids
        .iter()
        .filter(|id| !expected.contains(id.as_str()))
        .cloned()
        .collect();
    if !unknown.is_empty() {
        return Err(RunnerError::UnknownIds { unknown });
    }

    let tensor = archive.tensor(TENSOR_PRED_JOINTS_3D)?;
    if tensor.shape.len() != 3 || tensor.shape[1] != joint_set.len() {
        return Err(RunnerError::JointMismatch {
            expected: joint_set.len(),
            got: tensor.shape.get(1).copied().unwrap_or(0),
        });
    }
    let rows = poses3_from_tensor(tensor)?;
    let root = joint_set.root_index();
    let mut out = Vec::with_capacity(expected_ids.len());
    for id in expected_ids {
        let pose = rows[by_id[id.as_str()]].clone();
        let offset = pose[root].norm();
        if offset > CENTERING_TOL_MM {
            return Err(RunnerError::NotCentered {
                id: id.clone(),
                offset_mm: offset,
            });
        }
        out.push(pose);
    }
    Ok(out)
}

/// Write predictions in the archive container (tensor key "joints_3d").
pub fn write_prediction_file(
    path: &Path,
    model: &str,
    joint_set: &JointSet,
    sample_ids: &[String],
    poses: &[Vec<Vector3<f64>>],
) -> Result<(), RunnerError> {
    assert_eq!(sample_ids.len(), poses.len(), "ids/poses length mismatch");
    let n = poses.len();
    let tensor = tensor_from_poses3(poses);
    let mut tensors_meta = BTreeMap::new();
    tensors_meta.insert(TENSOR_PRED_JOINTS_3D.to_string(), tensor.shape.clone());
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        dataset: model.to_string(),
        joint_set: joint_set.name().to_string(),
        units: "mm".to_string(),
        sample_count: n,
        sample_ids: sample_ids.to_vec(),
        split_ranges: SplitRanges {
            train: [0, 0],
            test: [0, n],
        },
        stats: None,
        tensors: tensors_meta,
    };
    let mut tensors = BTreeMap::new();
    tensors.insert(TENSOR_PRED_JOINTS_3D.to_string(), tensor);
    write_archive_file(&DatasetArchive { manifest, tensors }, path)?;
    Ok(())
}

// -------------------------------------------------------------------------
// Noisy oracle
// -------------------------------------------------------------------------

/// Ground truth plus i.i.d. Gaussian noise (std `sigma_mm` per coordinate)
/// on every non-root joint. Each sample draws from its own counter-mode
/// stream, so results do not depend on iteration order or worker count.
pub fn oracle_with_noise(
    gt_centered: &[Vec<Vector3<f64>>],
    sigma_mm: f64,
    seed: u64,
    root_index: usize,
) -> Vec<Vec<Vector3<f64>>> {
    if sigma_mm <= 0.0 {
        return gt_centered.to_vec();
    }
    let normal = Normal::new(0.0, sigma_mm).expect("sigma validated nonnegative");
    gt_centered
        .par_iter()
        .enumerate()
        .map(|(i, pose)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            pose.iter()
                .enumerate()
                .map(|(j, p)| {
                    if j == root_index {
                        *p
                    } else {
                        p + Vector3::new(
                            normal.sample(&mut rng),
                            normal.sample(&mut rng),
                            normal.sample(&mut rng),
                        )
                    }
                })
                .collect()
        })
        .collect()
}

// -------------------------------------------------------------------------
// External model protocol
// -------------------------------------------------------------------------
// Newline-delimited JSON. The harness writes one handshake line, the child
// answers with its own handshake line, then any number of requests follow.
// Responses correlate by id and may arrive in any order (pipelining).

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireHandshake {
    pub protocol: u32,
    pub num_joints: usize,
    pub video_mode: bool,
    pub num_frames: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WireRequest {
    pub id: u64,
    /// [num_frames][num_joints][2], normalized 2D keypoints.
    pub keypoints: Vec<Vec<[f64; 2]>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WireResponse {
    pub id: u64,
    /// [num_joints][3], millimetres, camera space.
    pub joints: Vec<[f64; 3]>,
}

/// A live external model process. One session serves one worker; requests
/// within the session are pipelined up to a caller-chosen window.
pub struct ModelSession {
    child: Child,
    stdin: Option<BufWriter<ChildStdin>>,
    rx: Receiver<Option<String>>,
    timeout: Duration,
    declared: WireHandshake,
    _reader: JoinHandle<()>,
}

impl ModelSession {
    /// Spawn `command`, exchange handshakes, and reject any declaration that
    /// does not match `expected`.
    pub fn spawn(
        command: &[String],
        expected: WireHandshake,
        timeout: Duration,
    ) -> Result<Self, RunnerError> {
        let (head, tail) = command.split_first().ok_or_else(|| RunnerError::Spawn {
            command: String::new(),
            source: std::io::Error::new(std::io::ErrorKind::InvalidInput, "empty command"),
        })?;
        let mut child = Command::new(head)
            .args(tail)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|source| RunnerError::Spawn {
                command: command.join(" "),
                source,
            })?;
        let stdout = child.stdout.take().expect("stdout piped");
        let stdin = child.stdin.take().expect("stdin piped");
        let (tx, rx) = mpsc::channel();
        let reader = std::thread::spawn(move || {
            let mut lines = BufReader::new(stdout).lines();
            loop {
                match lines.next() {
                    Some(Ok(line)) => {
                        if tx.send(Some(line)).is_err() {
                            return;
                        }
                    }
                    _ => {
                        let _ = tx.send(None);
                        return;
                    }
                }
            }
        });
        let mut session = ModelSession {
            child,
            stdin: Some(BufWriter::new(stdin)),
            rx,
            timeout,
            declared: expected,
            _reader: reader,
        };
        session.write_line(&serde_json::to_string(&expected).expect("handshake json"))?;
        let line = session.recv_line(None)?;
        let declared: WireHandshake =
            serde_json::from_str(&line).map_err(|e| RunnerError::MalformedFrame {
                id: None,
                reason: format!("handshake: {e}"),
            })?;
        let checks: [(&'static str, String, String); 4] = [
            (
                "protocol",
                declared.protocol.to_string(),
                expected.protocol.to_string(),
            ),
            (
                "num_joints",
                declared.num_joints.to_string(),
                expected.num_joints.to_string(),
            ),
            (
                "video_mode",
                declared.video_mode.to_string(),
                expected.video_mode.to_string(),
            ),
            (
                "num_frames",
                declared.num_frames.to_string(),
                expected.num_frames.to_string(),
            ),
        ];
        for (field, got, want) in checks {
            if got != want {
                return Err(RunnerError::HandshakeMismatch {
                    field,
                    declared: got,
                    expected: want,
                });
            }
        }
        session.declared = declared;
        Ok(session)
    }

    fn write_line(&mut self, line: &str) -> Result<(), RunnerError> {
        let stdin = self.stdin.as_mut().expect("stdin open");
        let io = stdin
            .write_all(line.as_bytes())
            .and_then(|_| stdin.write_all(b"\n"))
            .and_then(|_| stdin.flush());
        io.map_err(|_| self.child_exit(None))
    }

    fn recv_line(&mut self, oldest_pending: Option<u64>) -> Result<String, RunnerError> {
        match self.rx.recv_timeout(self.timeout) {
            Ok(Some(line)) => Ok(line),
            Ok(None) => Err(self.child_exit(oldest_pending)),
            Err(RecvTimeoutError::Timeout) => Err(RunnerError::Timeout {
                pending_id: oldest_pending.unwrap_or(0),
                waited_s: self.timeout.as_secs_f64(),
            }),
            Err(RecvTimeoutError::Disconnected) => Err(self.child_exit(oldest_pending)),
        }
    }

    fn child_exit(&mut self, pending_id: Option<u64>) -> RunnerError {
        let status = match self.child.try_wait() {
            Ok(Some(status)) => status.to_string(),
            Ok(None) => "still running, stream closed".to_string(),
            Err(e) => format!("unknown: {e}"),
        };
        RunnerError::ChildExit { pending_id, status }
    }

    /// Send every request, keeping up to `max_in_flight` outstanding, and
    /// collect responses by id. Ids must be unique. Out-of-order replies are
    /// fine; the result map is id-keyed so ordering cannot leak into metrics.
    pub fn infer_all(
        &mut self,
        requests: &[(u64, Vec<Vec<Vector2<f64>>>)],
        max_in_flight: usize,
    ) -> Result<BTreeMap<u64, Vec<Vector3<f64>>>, RunnerError> {
        let max_in_flight = max_in_flight.max(1);
        let mut results = BTreeMap::new();
        let mut pending: BTreeSet<u64> = BTreeSet::new();
        let mut next = 0usize;
        while results.len() < requests.len() {
            while pending.len() < max_in_flight && next < requests.len() {
                let (id, window) = &requests[next];
                assert!(
                    !pending.contains(id) && !results.contains_key(id),
                    "duplicate request id {id}"
                );
                let req = WireRequest {
                    id: *id,
                    keypoints: window
                        .iter()
                        .map(|f| f.iter().map(|p| [p.x, p.y]).collect())
                        .collect(),
                };
                self.write_line(&serde_json::to_string(&req).expect("request json"))?;
                pending.insert(*id);
                next += 1;
            }
            let oldest = pending.iter().next().copied();
            let line = self.recv_line(oldest)?;
            let resp: WireResponse =
                serde_json::from_str(&line).map_err(|e| RunnerError::MalformedFrame {
                    id: None,
                    reason: format!("{e} in {:?}", truncate(&line, 120)),
                })?;
            if !pending.remove(&resp.id) {
                return Err(RunnerError::MalformedFrame {
                    id: Some(resp.id),
                    reason: "response id was never requested or already answered".into(),
                });
            }
            if resp.joints.len() != self.declared.num_joints {
                return Err(RunnerError::MalformedFrame {
                    id: Some(resp.id),
                    reason: format!(
                        "expected {} joints, got {}",
                        self.declared.num_joints,
                        resp.joints.len()
                    ),
                });
            }
            if resp.joints.iter().any(|r| r.iter().any(|c| !c.is_finite())) {
                return Err(RunnerError::MalformedFrame {
                    id: Some(resp.id),
                    reason: "non-finite joint coordinate".into(),
                });
            }
            results.insert(
                resp.id,
                resp.joints
                    .iter()
                    .map(|r| Vector3::new(r[0], r[1], r[2]))
                    .collect(),
            );
        }
        Ok(results)
    }

    /// Close the child's stdin and wait for it to exit.
    pub fn shutdown(mut self) -> Result<(), RunnerError> {
        self.stdin = None;
        match self.child.wait() {
            Ok(status) if status.success() => Ok(()),
            Ok(status) => Err(RunnerError::ChildExit {
                pending_id: None,
                status: status.to_string(),
            }),
            Err(e) => Err(RunnerError::ChildExit {
                pending_id: None,
                status: format!("wait failed: {e}"),
            }),
        }
    }
}

impl Drop for ModelSession {
    fn drop(&mut self) {
        self.stdin = None;
        if matches!(self.child.try_wait(), Ok(None)) {
            let _ = self.child.kill();
        }
        let _ = self.child.wait();
    }
}

fn truncate(s: &str, max: usize) -> &str {
    match s.char_indices().nth(max) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}
