//! Patients, assessment sessions and their on-disk store.
//!
//! Layout under the root directory:
//!
//! ```text
//! patients/<pid>/patient.json
//! patients/<pid>/sessions/<sid>/manifest.v<N>.json
//! patients/<pid>/sessions/<sid>/<artifact files>
//! ```
//!
//! Every file is written to a temporary sibling and renamed into place.
//! Manifests are never overwritten; each persist adds the next version.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::clinical::{IntakeRecord, RecommendationSet};
use crate::longitudinal::{days_between, AlignmentRecord, SeriesEntry};
use crate::metrics::BurnMetrics;
use crate::quality::{ConfidenceIndicators, QcVerdict};
use crate::reconstruction::{ScaleCalibration, ScaleReference};
use crate::units::Units;

pub const SCHEMA_VERSION: u32 = 1;
pub const SUPPORTED_SCHEMA_VERSIONS: &[u32] = &[1];

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{kind} '{id}' not found")]
    NotFound { kind: &'static str, id: String },
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("unsupported schema_version {found} in {path}; supported: {supported:?}")]
    Version {
        found: u64,
        supported: &'static [u32],
        path: PathBuf,
    },
    #[error("cannot parse {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid record: {0}")]
    Invalid(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FixedClock(pub DateTime<Utc>);

impl Clock for FixedClock {
    fn now(&self) -> DateTime<Utc> {
        self.0
    }
}

/// 32 lowercase hex digits.
pub fn is_valid_id(id: &str) -> bool {
    id.len() == 32 && id.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sex {
    Female,
    Male,
    Other,
    Unknown,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Demographics {
    pub age_years: Option<f64>,
    pub weight_kg: Option<f64>,
    pub height_cm: Option<f64>,
    pub sex: Option<Sex>,
}

impl Demographics {
    pub fn validate(&self) -> Result<(), StoreError> {
        let mut bad = Vec::new();
        if self.age_years.is_some_and(|a| !(a >= 0.0 && a.is_finite())) {
            bad.push("age_years");
        }
        if self.weight_kg.is_some_and(|w| !(w > 0.0 && w.is_finite())) {
            bad.push("weight_kg");
        }
        if self.height_cm.is_some_and(|h| !(h > 0.0 && h.is_finite())) {
            bad.push("height_cm");
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(StoreError::Invalid(format!("invalid fields: {}", bad.join(", "))))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub patient_id: String,
    pub demographics: Demographics,
    pub created_at: DateTime<Utc>,
}

/// A file in the session directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactRef {
    /// File name relative to the session directory.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub artifact: ArtifactRef,
    pub original_name: String,
    pub verdict: QcVerdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskRecord {
    /// Index into the session's images.
    pub view: usize,
    pub artifact: ArtifactRef,
}

/// A mesh and camera set supplied directly instead of reconstructed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshInput {
    pub mesh: ArtifactRef,
    pub cameras: ArtifactRef,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionRecord {
    /// Labeled mesh with per-face burn probability; absent for a sparse-only run.
    pub mesh: Option<ArtifactRef>,
    pub cameras: ArtifactRef,
    pub sparse_cloud: Option<ArtifactRef>,
    pub depth_field: Option<ArtifactRef>,
    pub units: Units,
    pub scale: Option<ScaleCalibration>,
    pub registered_views: usize,
    pub sparse_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceRecord {
    pub indicators: ConfidenceIndicators,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRecord {
    pub version: u32,
    pub structured: ArtifactRef,
    pub html: ArtifactRef,
    pub content_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssessmentSession {
    pub schema_version: u32,
    pub session_id: String,
    pub patient_id: String,
    pub captured_at: DateTime<Utc>,
    pub intake: IntakeRecord,
    #[serde(default)]
    pub images: Vec<ImageRecord>,
    #[serde(default)]
    pub masks: Vec<MaskRecord>,
    #[serde(default)]
    pub scale_reference: Option<ScaleReference>,
    #[serde(default)]
    pub mesh_input: Option<MeshInput>,
    #[serde(default)]
    pub reconstruction: Option<ReconstructionRecord>,
    #[serde(default)]
    pub metrics: Option<BurnMetrics>,
    #[serde(default)]
    pub confidence: Option<ConfidenceRecord>,
    #[serde(default)]
    pub alignment: Option<AlignmentRecord>,
    #[serde(default)]
    pub recommendations: Option<RecommendationSet>,
    #[serde(default)]
    pub reports: Vec<ReportRecord>,
}

impl AssessmentSession {
    /// Every artifact the session references.
    pub fn artifacts(&self) -> Vec<&ArtifactRef> {
        let mut out: Vec<&ArtifactRef> = Vec::new();
        out.extend(self.images.iter().map(|i| &i.artifact));
        out.extend(self.masks.iter().map(|m| &m.artifact));
        if let Some(m) = &self.mesh_input {
            out.push(&m.mesh);
            out.push(&m.cameras);
        }
        if let Some(r) = &self.reconstruction {
            out.extend(r.mesh.iter());
            out.push(&r.cameras);
            out.extend(r.sparse_cloud.iter());
            out.extend(r.depth_field.iter());
        }
        for r in &self.reports {
            out.push(&r.structured);
            out.push(&r.html);
        }
        out
    }

    pub fn accepted_image_count(&self) -> usize {
        self.images.iter().filter(|i| i.verdict.accepted).count()
    }
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    schema_version: u32,
    manifest_version: u32,
    artifacts: Vec<String>,
    session: AssessmentSession,
}

/// Artifact file names: ASCII letters, digits, `.`, `-`, `_`; no leading dot.
pub fn is_valid_artifact_name(name: &str) -> bool {
    !name.is_empty()
        && name.len() <= 128
        && !name.starts_with('.')
        && name
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || b == b'.' || b == b'-' || b == b'_')
        && !name.starts_with("manifest.")
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let dir = path.parent().expect("store paths have a parent");
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut tmp = tempfile::Builder::new()
        .prefix(".tmp-")
        .tempfile_in(dir)
        .map_err(io_err(dir))?;
    tmp.write_all(bytes).map_err(io_err(path))?;
    tmp.as_file().sync_all().map_err(io_err(path))?;
    tmp.persist(path).map_err(|e| StoreError::Io {
        path: path.to_path_buf(),
        source: e.error,
    })?;
    Ok(())
}

fn manifest_version(name: &str) -> Option<u32> {
    name.strip_prefix("manifest.v")?.strip_suffix(".json")?.parse().ok()
}

pub struct Store {
    root: PathBuf,
    rng: Mutex<ChaCha8Rng>,
}

impl Store {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        Self::with_rng(root.into(), ChaCha8Rng::from_rng(&mut rand::rng()))
    }

    /// Store whose generated ids follow from `seed`.
    pub fn open_seeded(root: impl Into<PathBuf>, seed: u64) -> Result<Self, StoreError> {
        Self::with_rng(root.into(), ChaCha8Rng::seed_from_u64(seed))
    }

    fn with_rng(root: PathBuf, rng: ChaCha8Rng) -> Result<Self, StoreError> {
        let patients = root.join("patients");
        fs::create_dir_all(&patients).map_err(io_err(&patients))?;
        Ok(Self {
            root,
            rng: Mutex::new(rng),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn new_id(&self) -> String {
        let v: u128 = self.rng.lock().expect("id generator").random();
        format!("{v:032x}")
    }

    fn patient_dir(&self, patient_id: &str) -> PathBuf {
        self.root.join("patients").join(patient_id)
    }

    pub fn session_dir(&self, patient_id: &str, session_id: &str) -> PathBuf {
        self.patient_dir(patient_id).join("sessions").join(session_id)
    }

    pub fn create_patient(&self, demographics: Demographics, clock: &dyn Clock) -> Result<PatientRecord, StoreError> {
        demographics.validate()?;
        let patient = PatientRecord {
            patient_id: self.new_id(),
            demographics,
            created_at: clock.now(),
        };
        let path = self.patient_dir(&patient.patient_id).join("patient.json");
        let text = serde_json::to_vec_pretty(&patient).expect("patient serializes");
        write_atomic(&path, &text)?;
        Ok(patient)
    }

    pub fn load_patient(&self, patient_id: &str) -> Result<PatientRecord, StoreError> {
        let not_found = || StoreError::NotFound {
            kind: "patient",
            id: patient_id.to_string(),
        };
        if !is_valid_id(patient_id) {
            return Err(not_found());
        }
        let path = self.patient_dir(patient_id).join("patient.json");
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(not_found()),
            Err(e) => return Err(io_err(&path)(e)),
        };
        serde_json::from_slice(&bytes).map_err(|e| StoreError::Parse {
            path,
            message: e.to_string(),
        })
    }

    pub fn list_patients(&self) -> Result<Vec<String>, StoreError> {
        let dir = self.root.join("patients");
        let mut ids = Vec::new();
        for entry in fs::read_dir(&dir).map_err(io_err(&dir))? {
            let entry = entry.map_err(io_err(&dir))?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if is_valid_id(&name) {
                ids.push(name);
            }
        }
        ids.sort();
        Ok(ids)
    }

    /// New, unpersisted session for an existing patient.
    pub fn create_session(
        &self,
        patient_id: &str,
        intake: IntakeRecord,
        clock: &dyn Clock,
    ) -> Result<AssessmentSession, StoreError> {
        self.load_patient(patient_id)?;
        intake.validate().map_err(|e| StoreError::Invalid(e.to_string()))?;
        Ok(AssessmentSession {
            schema_version: SCHEMA_VERSION,
            session_id: self.new_id(),
            patient_id: patient_id.to_string(),
            captured_at: clock.now(),
            intake,
            images: Vec::new(),
            masks: Vec::new(),
            scale_reference: None,
            mesh_input: None,
            reconstruction: None,
            metrics: None,
            confidence: None,
            alignment: None,
            recommendations: None,
            reports: Vec::new(),
        })
    }

    /// Writes `bytes` into the session directory under `name`.
    pub fn write_artifact(
        &self,
        session: &AssessmentSession,
        name: &str,
        bytes: &[u8],
    ) -> Result<ArtifactRef, StoreError> {
        if !is_valid_artifact_name(name) {
            return Err(StoreError::Invalid(format!("artifact name '{name}' is not allowed")));
        }
        let path = self.session_dir(&session.patient_id, &session.session_id).join(name);
        write_atomic(&path, bytes)?;
        Ok(ArtifactRef {
            path: name.to_string(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len() as u64,
        })
    }

    /// Reads an artifact and checks its recorded hash.
    pub fn read_artifact(&self, session: &AssessmentSession, artifact: &ArtifactRef) -> Result<Vec<u8>, StoreError> {
        if !is_valid_artifact_name(&artifact.path) {
            return Err(StoreError::Integrity(format!(
                "artifact path '{}' is not allowed",
                artifact.path
            )));
        }
        let path = self
            .session_dir(&session.patient_id, &session.session_id)
            .join(&artifact.path);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(StoreError::Integrity(format!(
                    "artifact '{}' is missing",
                    artifact.path
                )))
            }
            Err(e) => return Err(io_err(&path)(e)),
        };
        let digest = sha256_hex(&bytes);
        if digest != artifact.sha256 {
            return Err(StoreError::Integrity(format!(
                "artifact '{}' hash {digest} does not match recorded {}",
                artifact.path, artifact.sha256
            )));
        }
        Ok(bytes)
    }

    fn manifest_versions(&self, dir: &Path) -> Result<Vec<u32>, StoreError> {
        let mut versions = Vec::new();
        let entries = match fs::read_dir(dir) {
            Ok(e) => e,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(versions),
            Err(e) => return Err(io_err(dir)(e)),
        };
        for entry in entries {
            let entry = entry.map_err(io_err(dir))?;
            if let Some(v) = manifest_version(&entry.file_name().to_string_lossy()) {
                versions.push(v);
            }
        }
        versions.sort_unstable();
        Ok(versions)
    }

    /// Writes the next manifest version and returns its path.
    pub fn persist_session(&self, session: &AssessmentSession) -> Result<PathBuf, StoreError> {
        if !is_valid_id(&session.session_id) {
            return Err(StoreError::Invalid(format!(
                "session id '{}' is malformed",
                session.session_id
            )));
        }
        if !SUPPORTED_SCHEMA_VERSIONS.contains(&session.schema_version) {
            return Err(StoreError::Version {
                found: session.schema_version as u64,
                supported: SUPPORTED_SCHEMA_VERSIONS,
                path: PathBuf::new(),
            });
        }
        self.load_patient(&session.patient_id)?;
        for a in session.artifacts() {
            self.read_artifact(session, a)?;
        }
        let dir = self.session_dir(&session.patient_id, &session.session_id);
        let next = self.manifest_versions(&dir)?.last().map_or(1, |v| v + 1);
        let manifest = Manifest {
            schema_version: session.schema_version,
            manifest_version: next,
            artifacts: session.artifacts().iter().map(|a| a.path.clone()).collect(),
            session: session.clone(),
        };
        let path = dir.join(format!("manifest.v{next}.json"));
        let text = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
        write_atomic(&path, &text)?;
        Ok(path)
    }

    fn find_session_dir(&self, session_id: &str) -> Result<(String, PathBuf), StoreError> {
        let not_found = || StoreError::NotFound {
            kind: "session",
            id: session_id.to_string(),
        };
        if !is_valid_id(session_id) {
            return Err(not_found());
        }
        for pid in self.list_patients()? {
            let dir = self.session_dir(&pid, session_id);
            if dir.is_dir() {
                return Ok((pid, dir));
            }
        }
        Err(not_found())
    }

    pub fn patient_of_session(&self, session_id: &str) -> Result<String, StoreError> {
        Ok(self.find_session_dir(session_id)?.0)
    }

    /// Paths of all manifest versions of a session, oldest first.
    pub fn manifest_paths(&self, session_id: &str) -> Result<Vec<PathBuf>, StoreError> {
        let (_, dir) = self.find_session_dir(session_id)?;
        Ok(self
            .manifest_versions(&dir)?
            .into_iter()
            .map(|v| dir.join(format!("manifest.v{v}.json")))
            .collect())
    }

    /// Latest persisted version of a session.
    pub fn load_session(&self, session_id: &str) -> Result<AssessmentSession, StoreError> {
        let paths = self.manifest_paths(session_id)?;
        let path = paths.last().ok_or_else(|| StoreError::NotFound {
            kind: "session",
            id: session_id.to_string(),
        })?;
        let bytes = fs::read(path).map_err(io_err(path))?;
        let session = parse_manifest(&bytes).map_err(|e| match e {
            ManifestError::Version(found) => StoreError::Version {
                found,
                supported: SUPPORTED_SCHEMA_VERSIONS,
                path: path.clone(),
            },
            ManifestError::Parse(message) => StoreError::Parse {
                path: path.clone(),
                message,
            },
        })?;
        if session.session_id != session_id {
            return Err(StoreError::Integrity(format!(
                "{} holds session '{}'",
                path.display(),
                session.session_id
            )));
        }
        Ok(session)
    }

    /// Latest versions of a patient's sessions, by capture time.
    pub fn list_sessions(&self, patient_id: &str) -> Result<Vec<AssessmentSession>, StoreError> {
        self.load_patient(patient_id)?;
        let dir = self.patient_dir(patient_id).join("sessions");
        let mut sessions = Vec::new();
        let entries = match fs::read_dir(&dir) {
            Ok(e) => e,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(sessions),
            Err(e) => return Err(io_err(&dir)(e)),
        };
        for entry in entries {
            let entry = entry.map_err(io_err(&dir))?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if is_valid_id(&name) && !self.manifest_versions(&entry.path())?.is_empty() {
                sessions.push(self.load_session(&name)?);
            }
        }
        sessions.sort_by(|a, b| {
            a.captured_at
                .cmp(&b.captured_at)
                .then_with(|| a.session_id.cmp(&b.session_id))
        });
        Ok(sessions)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ManifestError {
    #[error("unsupported manifest schema version {0}")]
    Version(u64),
    #[error("malformed manifest: {0}")]
    Parse(String),
}

/// Decodes a manifest document, checking its schema version before the body.
pub fn parse_manifest(bytes: &[u8]) -> Result<AssessmentSession, ManifestError> {
    let value: serde_json::Value = serde_json::from_slice(bytes).map_err(|e| ManifestError::Parse(e.to_string()))?;
    let found = value
        .get("schema_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| ManifestError::Parse("missing integer schema_version".into()))?;
    if !SUPPORTED_SCHEMA_VERSIONS.iter().any(|&v| v as u64 == found) {
        return Err(ManifestError::Version(found));
    }
    let manifest: Manifest = serde_json::from_value(value).map_err(|e| ManifestError::Parse(e.to_string()))?;
    if manifest.session.schema_version != manifest.schema_version {
        return Err(ManifestError::Parse(
            "session schema_version differs from manifest".into(),
        ));
    }
    let listed: Vec<&str> = manifest.artifacts.iter().map(String::as_str).collect();
    let owned: Vec<&str> = manifest.session.artifacts().iter().map(|a| a.path.as_str()).collect();
    if listed != owned {
        return Err(ManifestError::Parse(
            "artifact list does not match session references".into(),
        ));
    }
    Ok(manifest.session)
}

/// Series input for a patient: sessions with metrics, days counted from the
/// first of them.
pub fn timeline_entries(sessions: &[AssessmentSession]) -> Vec<SeriesEntry> {
    let with_metrics: Vec<&AssessmentSession> = sessions.iter().filter(|s| s.metrics.is_some()).collect();
    let Some(first) = with_metrics.first() else {
        return Vec::new();
    };
    let baseline = first.captured_at;
    with_metrics
        .iter()
        .map(|s| SeriesEntry {
            day: days_between(baseline, s.captured_at),
            metrics: s.metrics.clone().expect("filtered"),
            alignment: s.alignment.clone(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clock() -> FixedClock {
        FixedClock(DateTime::parse_from_rfc3339("2026-03-01T10:00:00Z").unwrap().to_utc())
    }

    #[test]
    fn session_lifecycle() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open_seeded(dir.path(), 7).unwrap();
        let p = store.create_patient(Demographics::default(), &clock()).unwrap();
        let s1 = store
            .create_session(&p.patient_id, IntakeRecord::consultation(), &clock())
            .unwrap();
        let s2 = store
            .create_session(&p.patient_id, IntakeRecord::consultation(), &clock())
            .unwrap();
        assert_ne!(s1.session_id, s2.session_id);
        assert!(s1.images.is_empty());
        assert!(matches!(
            store.create_session(&"0".repeat(32), IntakeRecord::consultation(), &clock()),
            Err(StoreError::NotFound { kind: "patient", .. })
        ));

        store.persist_session(&s1).unwrap();
        let mut modified = s1.clone();
        let art = store
            .write_artifact(&modified, "mask_0.png", b"not really a png")
            .unwrap();
        modified.masks.push(MaskRecord { view: 0, artifact: art });
        let path = store.persist_session(&modified).unwrap();
        assert!(path.ends_with("manifest.v2.json"));
        assert_eq!(store.manifest_paths(&s1.session_id).unwrap().len(), 2);
        assert_eq!(store.load_session(&s1.session_id).unwrap(), modified);
    }

    #[test]
    fn dangling_artifact_is_integrity_error() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open_seeded(dir.path(), 1).unwrap();
        let p = store.create_patient(Demographics::default(), &clock()).unwrap();
        let mut s = store
            .create_session(&p.patient_id, IntakeRecord::consultation(), &clock())
            .unwrap();
        s.masks.push(MaskRecord {
            view: 0,
            artifact: ArtifactRef {
                path: "missing.png".into(),
                sha256: sha256_hex(b""),
                bytes: 0,
            },
        });
        assert!(matches!(store.persist_session(&s), Err(StoreError::Integrity(_))));
    }

    #[test]
    fn version_and_truncation_errors() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open_seeded(dir.path(), 2).unwrap();
        let p = store.create_patient(Demographics::default(), &clock()).unwrap();
        let s = store
            .create_session(&p.patient_id, IntakeRecord::consultation(), &clock())
            .unwrap();
        let path = store.persist_session(&s).unwrap();
        let text = fs::read_to_string(&path).unwrap();

        fs::write(
            &path,
            text.replacen("\"schema_version\": 1", "\"schema_version\": 999", 1),
        )
        .unwrap();
        assert!(matches!(
            store.load_session(&s.session_id),
            Err(StoreError::Version { found: 999, .. })
        ));

        fs::write(&path, &text[..text.len() / 2]).unwrap();
        match store.load_session(&s.session_id) {
            Err(StoreError::Parse { path: p, .. }) => assert_eq!(p, path),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn artifact_names_are_restricted() {
        for bad in ["", "../x", "a/b", ".hidden", "manifest.v3.json", "x y"] {
            assert!(!is_valid_artifact_name(bad), "{bad}");
        }
        assert!(is_valid_artifact_name("image_03.png"));
    }
}
