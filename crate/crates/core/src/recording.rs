//! JSONL step recordings.
//!
//! A file starts with one header object (`"type": "header"`) followed by one
//! object per control step. Which keys a step line carries is controlled by
//! an allowlist of [`RecordField`]s; the header lists them. Poses are stored
//! as a row-major rotation plus translation so that a file reproduces the
//! recorded values bit for bit.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::leader::{LeaderCommand, LimbCommand, LimbPayload};
use crate::robot_model::JointVector;
use crate::se3::Pose;

pub const SCHEMA_VERSION: u64 = 1;

/// Records are flushed after this many lines (and on every state change).
pub const FLUSH_EVERY: usize = 50;

#[derive(Debug, Error)]
pub enum RecordingError {
    #[error("recording line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("unsupported recording schema version {0}")]
    SchemaVersion(u64),
    #[error("recording has no samples")]
    Empty,
    #[error("timestamps must increase strictly; first offending sample is {index}")]
    NonMonotonic { index: usize },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordField {
    Timestamp,
    Command,
    QCmd,
    QActual,
    TCmd,
    TActual,
    Gripper,
    Flags,
    Feedback,
}

impl RecordField {
    pub const ALL: [RecordField; 9] = [
        RecordField::Timestamp,
        RecordField::Command,
        RecordField::QCmd,
        RecordField::QActual,
        RecordField::TCmd,
        RecordField::TActual,
        RecordField::Gripper,
        RecordField::Flags,
        RecordField::Feedback,
    ];

    pub fn key(self) -> &'static str {
        match self {
            RecordField::Timestamp => "timestamp",
            RecordField::Command => "command",
            RecordField::QCmd => "q_cmd",
            RecordField::QActual => "q_actual",
            RecordField::TCmd => "T_cmd",
            RecordField::TActual => "T_actual",
            RecordField::Gripper => "gripper",
            RecordField::Flags => "flags",
            RecordField::Feedback => "feedback",
        }
    }
}

/// Pose on disk: `R` row-major, `t` translation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StoredPose {
    #[serde(rename = "R")]
    pub r: [f64; 9],
    pub t: [f64; 3],
}

impl From<&Pose> for StoredPose {
    fn from(p: &Pose) -> Self {
        let m = p.rotation();
        let t = p.translation();
        Self {
            r: [
                m[(0, 0)],
                m[(0, 1)],
                m[(0, 2)],
                m[(1, 0)],
                m[(1, 1)],
                m[(1, 2)],
                m[(2, 0)],
                m[(2, 1)],
                m[(2, 2)],
            ],
            t: [t.x, t.y, t.z],
        }
    }
}

impl StoredPose {
    /// Rebuilds the pose exactly; fails if the stored rotation is not rigid.
    pub fn to_pose(&self) -> Result<Pose, String> {
        let p = Pose::new(
            Matrix3::from_row_slice(&self.r),
            Vector3::from_column_slice(&self.t),
        );
        if !p.is_finite() || !p.is_rigid(1e-6) {
            return Err("stored rotation is not a rotation matrix".into());
        }
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredLimbCommand {
    pub limb: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub joints: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<StoredPose>,
    pub gripper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredCommand {
    pub start: bool,
    pub end: bool,
    pub limbs: Vec<StoredLimbCommand>,
}

impl From<&LeaderCommand> for StoredCommand {
    fn from(c: &LeaderCommand) -> Self {
        Self {
            start: c.start_requested,
            end: c.end_requested,
            limbs: c
                .limbs
                .iter()
                .map(|l| {
                    let (joints, delta) = match &l.payload {
                        LimbPayload::JointPositions(q) => (Some(q.iter().copied().collect()), None),
                        LimbPayload::EefDelta(d) => (None, Some(StoredPose::from(d))),
                    };
                    StoredLimbCommand {
                        limb: l.limb.clone(),
                        joints,
                        delta,
                        gripper: l.gripper,
                    }
                })
                .collect(),
        }
    }
}

impl StoredCommand {
    pub fn to_command(&self, timestamp: f64) -> Result<LeaderCommand, String> {
        let limbs = self
            .limbs
            .iter()
            .map(|l| {
                let payload = match (&l.joints, &l.delta) {
                    (Some(q), None) => {
                        LimbPayload::JointPositions(JointVector::from_column_slice(q))
                    }
                    (None, Some(d)) => LimbPayload::EefDelta(d.to_pose()?),
                    _ => {
                        return Err(format!(
                            "limb '{}' needs exactly one of joints/delta",
                            l.limb
                        ))
                    }
                };
                Ok(LimbCommand {
                    limb: l.limb.clone(),
                    payload,
                    gripper: l.gripper,
                })
            })
            .collect::<Result<_, String>>()?;
        Ok(LeaderCommand {
            limbs,
            start_requested: self.start,
            end_requested: self.end,
            timestamp,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordHeader {
    #[serde(rename = "type")]
    pub kind: String,
    pub schema_version: u64,
    pub limbs: Vec<String>,
    pub joint_names: Vec<Vec<String>>,
    /// "joint" or "eef" per limb.
    pub payload: Vec<String>,
    pub fields: Vec<RecordField>,
    pub loop_period: f64,
}

impl RecordHeader {
    pub fn new(
        limbs: Vec<String>,
        joint_names: Vec<Vec<String>>,
        payload: Vec<String>,
        fields: Vec<RecordField>,
        loop_period: f64,
    ) -> Self {
        Self {
            kind: "header".into(),
            schema_version: SCHEMA_VERSION,
            limbs,
            joint_names,
            payload,
            fields,
            loop_period,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StoredFlags {
    pub limit: bool,
    pub velocity: bool,
    pub collision: bool,
    pub ik_converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredFeedback {
    pub limb: String,
    pub bias: Vec<f64>,
    pub tracking: Vec<f64>,
    pub gripper: f64,
}

/// Everything a step line can hold; [`Recorder`] keeps only allowlisted keys.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub timestamp: f64,
    pub command: StoredCommand,
    pub q_cmd: Vec<Vec<f64>>,
    pub q_actual: Vec<Vec<f64>>,
    #[serde(rename = "T_cmd")]
    pub t_cmd: Vec<StoredPose>,
    #[serde(rename = "T_actual")]
    pub t_actual: Vec<StoredPose>,
    /// Follower gripper positions.
    pub gripper: Vec<f64>,
    pub flags: Vec<StoredFlags>,
    pub feedback: Option<Vec<StoredFeedback>>,
}

/// One parsed step line. Only the fields needed for replay are typed.
#[derive(Debug, Clone, Deserialize)]
pub struct StoredStep {
    pub timestamp: Option<f64>,
    pub command: Option<StoredCommand>,
    #[serde(default)]
    pub q_cmd: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone)]
pub struct Recording {
    pub header: RecordHeader,
    pub steps: Vec<StoredStep>,
}

impl Recording {
    pub fn parse(text: &str) -> Result<Self, RecordingError> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines.next().ok_or(RecordingError::Empty)?;
        let raw: serde_json::Value =
            serde_json::from_str(first).map_err(|e| RecordingError::Format {
                line: 1,
                message: e.to_string(),
            })?;
        if raw.get("type").and_then(|v| v.as_str()) != Some("header") {
            return Err(RecordingError::Format {
                line: 1,
                message: "first line must be the header".into(),
            });
        }
        if let Some(v) = raw.get("schema_version").and_then(|v| v.as_u64()) {
            if v != SCHEMA_VERSION {
                return Err(RecordingError::SchemaVersion(v));
            }
        }
        let header: RecordHeader =
            serde_json::from_value(raw).map_err(|e| RecordingError::Format {
                line: 1,
                message: e.to_string(),
            })?;
        let mut steps = Vec::new();
        for (i, line) in lines {
            let step: StoredStep =
                serde_json::from_str(line).map_err(|e| RecordingError::Format {
                    line: i + 1,
                    message: e.to_string(),
                })?;
            steps.push(step);
        }
        if steps.is_empty() {
            return Err(RecordingError::Empty);
        }
        let mut prev = f64::NEG_INFINITY;
        for (i, s) in steps.iter().enumerate() {
            let ts = s.timestamp.ok_or_else(|| RecordingError::Format {
                line: i + 2,
                message: "missing timestamp".into(),
            })?;
            if !(ts > prev) {
                return Err(RecordingError::NonMonotonic { index: i });
            }
            prev = ts;
        }
        Ok(Self { header, steps })
    }

    pub fn load(path: &Path) -> Result<Self, RecordingError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

type Opener = Box<dyn FnMut(&Path) -> io::Result<Box<dyn Write + Send>> + Send>;

/// Writes one JSONL file per Running interval: `out.jsonl`, `out-1.jsonl`, ...
///
/// IO failures never propagate: the recorder logs a warning, disables itself
/// and the session carries on.
pub struct Recorder {
    base: PathBuf,
    fields: Vec<RecordField>,
    open: Opener,
    writer: Option<BufWriter<Box<dyn Write + Send>>>,
    unflushed: usize,
    sessions: usize,
    disabled: bool,
    written: Vec<(PathBuf, usize)>,
    warnings: Vec<String>,
}

impl std::fmt::Debug for Recorder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Recorder")
            .field("base", &self.base)
            .field("fields", &self.fields)
            .field("disabled", &self.disabled)
            .finish()
    }
}

impl Recorder {
    pub fn new(base: impl Into<PathBuf>, fields: Vec<RecordField>) -> Self {
        Self::with_opener(
            base,
            fields,
            Box::new(|p: &Path| File::create(p).map(|f| Box::new(f) as Box<dyn Write + Send>)),
        )
    }

    /// Recorder that obtains its sinks from `open` (tests use failing writers).
    pub fn with_opener(base: impl Into<PathBuf>, fields: Vec<RecordField>, open: Opener) -> Self {
        Self {
            base: base.into(),
            fields,
            open,
            writer: None,
            unflushed: 0,
            sessions: 0,
            disabled: false,
            written: Vec::new(),
            warnings: Vec::new(),
        }
    }

    pub fn path_for(base: &Path, index: usize) -> PathBuf {
        if index == 0 {
            return base.to_path_buf();
        }
        let stem = base
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("record");
        let name = match base.extension().and_then(|e| e.to_str()) {
            Some(ext) => format!("{stem}-{index}.{ext}"),
            None => format!("{stem}-{index}"),
        };
        base.with_file_name(name)
    }

    pub fn fields(&self) -> &[RecordField] {
        &self.fields
    }

    pub fn is_disabled(&self) -> bool {
        self.disabled
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// Files written so far with their step counts.
    pub fn files(&self) -> &[(PathBuf, usize)] {
        &self.written
    }

    fn fail(&mut self, what: &str, e: io::Error) {
        let msg = format!("recording disabled: {what}: {e}");
        log::warn!("{msg}");
        self.warnings.push(msg);
        self.disabled = true;
        self.writer = None;
    }

    pub fn begin_session(&mut self, header: &RecordHeader) {
        self.end_session();
        if self.disabled {
            return;
        }
        let path = Self::path_for(&self.base, self.sessions);
        self.sessions += 1;
        let sink = match (self.open)(&path) {
            Ok(s) => s,
            Err(e) => return self.fail(&format!("cannot create {}", path.display()), e),
        };
        let mut w = BufWriter::new(sink);
        let mut header = header.clone();
        header.fields = self.fields.clone();
        let line = serde_json::to_string(&header).expect("header serializes");
        if let Err(e) = writeln!(w, "{line}").and_then(|_| w.flush()) {
            return self.fail("write failed", e);
        }
        self.writer = Some(w);
        self.written.push((path, 0));
    }

    pub fn record(&mut self, step: &StepRecord) {
        let Some(w) = self.writer.as_mut() else {
            return;
        };
        let full = serde_json::to_value(step).expect("step serializes");
        let mut obj = serde_json::Map::new();
        if let serde_json::Value::Object(map) = full {
            for f in &self.fields {
                if let Some(v) = map.get(f.key()) {
                    obj.insert(f.key().to_string(), v.clone());
                }
            }
        }
        let line = serde_json::to_string(&obj).expect("json serializes");
        if let Err(e) = writeln!(w, "{line}") {
            return self.fail("write failed", e);
        }
        if let Some(last) = self.written.last_mut() {
            last.1 += 1;
        }
        self.unflushed += 1;
        if self.unflushed >= FLUSH_EVERY {
            self.flush();
        }
    }

    pub fn flush(&mut self) {
        self.unflushed = 0;
        if let Some(w) = self.writer.as_mut() {
            if let Err(e) = w.flush() {
                self.fail("flush failed", e);
            }
        }
    }

    pub fn end_session(&mut self) {
        self.flush();
        self.writer = None;
    }
}

impl Drop for Recorder {
    fn drop(&mut self) {
        self.end_session();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::{Arc, Mutex};

    fn header() -> RecordHeader {
        RecordHeader::new(
            vec!["arm".into()],
            vec![vec!["j1".into()]],
            vec!["joint".into()],
            vec![],
            0.02,
        )
    }

    fn step(ts: f64) -> StepRecord {
        let cmd = LeaderCommand {
            limbs: vec![LimbCommand {
                limb: "arm".into(),
                payload: LimbPayload::JointPositions(JointVector::from_column_slice(&[ts * 0.1])),
                gripper: 0.25,
            }],
            start_requested: false,
            end_requested: false,
            timestamp: ts,
        };
        StepRecord {
            timestamp: ts,
            command: StoredCommand::from(&cmd),
            q_cmd: vec![vec![ts]],
            q_actual: vec![vec![ts]],
            t_cmd: vec![StoredPose::from(&Pose::identity())],
            t_actual: vec![StoredPose::from(&Pose::identity())],
            gripper: vec![0.0],
            flags: vec![StoredFlags::default()],
            feedback: None,
        }
    }

    #[derive(Clone, Default)]
    struct Shared(Arc<Mutex<Vec<u8>>>);

    impl Write for Shared {
        fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
            self.0.lock().unwrap().extend_from_slice(buf);
            Ok(buf.len())
        }
        fn flush(&mut self) -> io::Result<()> {
            Ok(())
        }
    }

    fn memory_recorder(fields: Vec<RecordField>) -> (Recorder, Shared) {
        let buf = Shared::default();
        let sink = buf.clone();
        let rec = Recorder::with_opener(
            "mem.jsonl",
            fields,
            Box::new(move |_| Ok(Box::new(sink.clone()))),
        );
        (rec, buf)
    }

    #[test]
    fn allowlist_limits_keys() {
        let (mut rec, buf) = memory_recorder(vec![RecordField::Timestamp, RecordField::QCmd]);
        rec.begin_session(&header());
        rec.record(&step(0.02));
        rec.end_session();
        let text = String::from_utf8(buf.0.lock().unwrap().clone()).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        let v: serde_json::Value = serde_json::from_str(lines[1]).unwrap();
        let keys: Vec<&String> = v.as_object().unwrap().keys().collect();
        assert_eq!(keys, vec!["q_cmd", "timestamp"]);
    }

    #[test]
    fn roundtrip_through_parser() {
        let (mut rec, buf) = memory_recorder(RecordField::ALL.to_vec());
        rec.begin_session(&header());
        for i in 1..=120 {
            rec.record(&step(i as f64 * 0.02));
        }
        rec.end_session();
        let text = String::from_utf8(buf.0.lock().unwrap().clone()).unwrap();
        let r = Recording::parse(&text).unwrap();
        assert_eq!(r.steps.len(), 120);
        let c = r.steps[3]
            .command
            .as_ref()
            .unwrap()
            .to_command(0.0)
            .unwrap();
        assert_eq!(
            c.limbs[0].payload,
            LimbPayload::JointPositions(JointVector::from_column_slice(&[0.08 * 0.1]))
        );
    }

    #[test]
    fn parse_errors() {
        assert!(matches!(Recording::parse(""), Err(RecordingError::Empty)));
        let h = serde_json::to_string(&header()).unwrap();
        assert!(matches!(Recording::parse(&h), Err(RecordingError::Empty)));
        let bad = h.replace("\"schema_version\":1", "\"schema_version\":7");
        assert!(matches!(
            Recording::parse(&bad),
            Err(RecordingError::SchemaVersion(7))
        ));
        let text =
            format!("{h}\n{{\"timestamp\":0.1}}\n{{\"timestamp\":0.2}}\n{{\"timestamp\":0.2}}\n");
        assert!(matches!(
            Recording::parse(&text),
            Err(RecordingError::NonMonotonic { index: 2 })
        ));
    }

    struct Broken;

    impl Write for Broken {
        fn write(&mut self, _: &[u8]) -> io::Result<usize> {
            Err(io::Error::other("disk full"))
        }
        fn flush(&mut self) -> io::Result<()> {
            Err(io::Error::other("disk full"))
        }
    }

    #[test]
    fn io_error_disables_recording() {
        let mut rec = Recorder::with_opener(
            "x.jsonl",
            RecordField::ALL.to_vec(),
            Box::new(|_| Ok(Box::new(Broken))),
        );
        rec.begin_session(&header());
        rec.record(&step(0.1));
        assert!(rec.is_disabled());
        assert!(rec.warnings()[0].contains("disk full"));
        rec.begin_session(&header());
        rec.record(&step(0.2));
    }

    #[test]
    fn file_per_session_names() {
        assert_eq!(
            Recorder::path_for(Path::new("/tmp/out.jsonl"), 0),
            PathBuf::from("/tmp/out.jsonl")
        );
        assert_eq!(
            Recorder::path_for(Path::new("/tmp/out.jsonl"), 2),
            PathBuf::from("/tmp/out-2.jsonl")
        );
    }
}
