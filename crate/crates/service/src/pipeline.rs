//! The analysis pipeline: qc, features, sfm, scale, paint, metrics, align,
//! report. The session is persisted after every stage that changes it, and
//! artifacts written by a run carry a run prefix so earlier manifest
//! versions keep pointing at intact files.

use std::fmt;

use burnscope::camera::{Camera, CameraIntrinsics, CameraView};
use burnscope::clinical::{estimate_bsa, recommend, Ruleset};
use burnscope::features::{extract_features, ImageFeatures};
use burnscope::image::ImageBuffer;
use burnscope::longitudinal::{alignment_points, compute_deltas, icp_align, AlignmentRecord};
use burnscope::mapping::{paint_mesh, BurnMask, LabeledMesh};
use burnscope::mesh::{parse_ply, write_ply, TriMesh};
use burnscope::metrics::compute_burn_metrics;
use burnscope::quality::{confidence_score, summarize_verdicts, validate_image, ConfidenceIndicators};
use burnscope::reconstruction::export::{parse_camera_set, sparse_cloud_to_ply, write_camera_set};
use burnscope::reconstruction::{apply_metric_scale, reconstruct, ScaleCalibration, ScaleReference, SfmResult};
use burnscope::report::{generate_report, store_report};
use burnscope::store::{
    timeline_entries, AssessmentSession, Clock, ConfidenceRecord, PatientRecord, ReconstructionRecord, Store,
    StoreError,
};
use burnscope::units::Units;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{fallback_intrinsics, IntrinsicsConfig, ServiceConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Qc,
    Features,
    Sfm,
    Scale,
    Paint,
    Metrics,
    Align,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Qc,
        Stage::Features,
        Stage::Sfm,
        Stage::Scale,
        Stage::Paint,
        Stage::Metrics,
        Stage::Align,
        Stage::Report,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Qc => "qc",
            Stage::Features => "features",
            Stage::Sfm => "sfm",
            Stage::Scale => "scale",
            Stage::Paint => "paint",
            Stage::Metrics => "metrics",
            Stage::Align => "align",
            Stage::Report => "report",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Pending,
    Running,
    Done,
    Skipped,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[error("{stage} stage failed: {detail}")]
pub struct StageFailure {
    pub stage: Stage,
    pub detail: String,
}

/// Receives stage transitions as a run progresses.
pub trait ProgressSink: Sync {
    fn update(&self, stage: Stage, status: StageStatus, detail: Option<&str>);
}

pub struct NoProgress;

impl ProgressSink for NoProgress {
    fn update(&self, _: Stage, _: StageStatus, _: Option<&str>) {}
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalyzeOptions {
    /// Intrinsics for every image of this session, overriding the config.
    pub intrinsics: Option<IntrinsicsConfig>,
}

pub struct Context<'a> {
    pub store: &'a Store,
    pub config: &'a ServiceConfig,
    pub ruleset: &'a Ruleset,
    pub clock: &'a dyn Clock,
}

enum Outcome {
    Done(String),
    Skipped(String),
}

/// Version number the next persist of `session_id` will receive. Used to tag
/// artifact names so that no file referenced by an older manifest is
/// overwritten.
pub fn next_manifest_version(store: &Store, session_id: &str) -> Result<usize, StoreError> {
    Ok(store.manifest_paths(session_id)?.len() + 1)
}

/// Runs every stage in order, stopping at the first failure.
pub fn run_analysis(
    ctx: &Context<'_>,
    session_id: &str,
    options: &AnalyzeOptions,
    progress: &dyn ProgressSink,
) -> Result<AssessmentSession, StageFailure> {
    let mut run = Run::load(ctx, session_id, options).map_err(|e| StageFailure {
        stage: Stage::Qc,
        detail: e.to_string(),
    })?;
    for stage in Stage::ALL {
        progress.update(stage, StageStatus::Running, None);
        match run.execute(stage) {
            Ok(Outcome::Done(d)) => progress.update(stage, StageStatus::Done, Some(&d)),
            Ok(Outcome::Skipped(d)) => progress.update(stage, StageStatus::Skipped, Some(&d)),
            Err(detail) => {
                progress.update(stage, StageStatus::Failed, Some(&detail));
                return Err(StageFailure { stage, detail });
            }
        }
    }
    Ok(run.session)
}

struct Supplied {
    mesh: TriMesh,
    views: Vec<CameraView>,
}

struct Run<'a> {
    ctx: &'a Context<'a>,
    options: &'a AnalyzeOptions,
    tag: String,
    patient: PatientRecord,
    session: AssessmentSession,
    /// Indices into `session.images` of the images that passed QC.
    accepted: Vec<usize>,
    images: Vec<ImageBuffer>,
    features: Vec<ImageFeatures>,
    /// Cameras are indexed like `accepted`.
    sfm: Option<SfmResult>,
    indicators: Option<ConfidenceIndicators>,
    supplied: Option<Supplied>,
    scale: Option<ScaleCalibration>,
    labeled: Option<LabeledMesh>,
}

fn text(e: impl fmt::Display) -> String {
    e.to_string()
}

impl<'a> Run<'a> {
    fn load(ctx: &'a Context<'a>, session_id: &str, options: &'a AnalyzeOptions) -> Result<Self, StoreError> {
        let mut session = ctx.store.load_session(session_id)?;
        let patient = ctx.store.load_patient(&session.patient_id)?;
        let tag = format!("r{}", next_manifest_version(ctx.store, session_id)?);
        session.reconstruction = None;
        session.metrics = None;
        session.confidence = None;
        session.alignment = None;
        session.recommendations = None;
        Ok(Self {
            ctx,
            options,
            tag,
            patient,
            session,
            accepted: Vec::new(),
            images: Vec::new(),
            features: Vec::new(),
            sfm: None,
            indicators: None,
            supplied: None,
            scale: None,
            labeled: None,
        })
    }

    fn execute(&mut self, stage: Stage) -> Result<Outcome, String> {
        match stage {
            Stage::Qc => self.qc(),
            Stage::Features => self.extract(),
            Stage::Sfm => self.structure_from_motion(),
            Stage::Scale => self.scale(),
            Stage::Paint => self.paint(),
            Stage::Metrics => self.metrics(),
            Stage::Align => self.align(),
            Stage::Report => self.report(),
        }
    }

    fn persist(&self) -> Result<(), String> {
        self.ctx.store.persist_session(&self.session).map(|_| ()).map_err(text)
    }

    fn write(&self, name: &str, bytes: &[u8]) -> Result<burnscope::store::ArtifactRef, String> {
        let name = format!("{}_{name}", self.tag);
        self.ctx.store.write_artifact(&self.session, &name, bytes).map_err(text)
    }

    fn qc(&mut self) -> Result<Outcome, String> {
        let policy = &self.ctx.config.qc;
        let decoded: Vec<ImageBuffer> = self
            .session
            .images
            .iter()
            .map(|rec| {
                let bytes = self
                    .ctx
                    .store
                    .read_artifact(&self.session, &rec.artifact)
                    .map_err(text)?;
                ImageBuffer::decode(&bytes).map_err(|e| format!("{}: {e}", rec.original_name))
            })
            .collect::<Result<_, String>>()?;
        let verdicts: Vec<_> = decoded.par_iter().map(|img| validate_image(img, policy)).collect();
        for (rec, v) in self.session.images.iter_mut().zip(&verdicts) {
            rec.verdict = v.clone();
        }
        let set = summarize_verdicts(&verdicts, policy);
        if !set.passed && self.session.mesh_input.is_none() {
            return Err(set.reasons.join("; "));
        }
        if let Some(input) = &self.session.mesh_input {
            let mesh_bytes = self.ctx.store.read_artifact(&self.session, &input.mesh).map_err(text)?;
            let camera_bytes = self
                .ctx
                .store
                .read_artifact(&self.session, &input.cameras)
                .map_err(text)?;
            let ply = parse_ply(&String::from_utf8_lossy(&mesh_bytes)).map_err(text)?;
            let views = parse_camera_set(&String::from_utf8_lossy(&camera_bytes)).map_err(text)?;
            if !self.session.images.is_empty() && views.len() != self.session.images.len() {
                return Err(format!(
                    "camera set has {} views for {} images",
                    views.len(),
                    self.session.images.len()
                ));
            }
            self.supplied = Some(Supplied { mesh: ply.mesh, views });
        }
        self.accepted = verdicts
            .iter()
            .enumerate()
            .filter(|(_, v)| v.accepted)
            .map(|(i, _)| i)
            .collect();
        self.images = decoded
            .into_iter()
            .enumerate()
            .filter(|(i, _)| verdicts[*i].accepted)
            .map(|(_, img)| img)
            .collect();
        self.persist()?;
        Ok(Outcome::Done(format!(
            "{} of {} images accepted",
            set.accepted_count,
            verdicts.len()
        )))
    }

    fn extract(&mut self) -> Result<Outcome, String> {
        if self.images.len() < 2 {
            return Ok(Outcome::Skipped("fewer than two accepted images".into()));
        }
        let params = &self.ctx.config.sift;
        self.features = self
            .images
            .par_iter()
            .map(|img| extract_features(img, params))
            .collect::<Result<_, _>>()
            .map_err(text)?;
        let total: usize = self.features.iter().map(|f| f.len()).sum();
        Ok(Outcome::Done(format!(
            "{total} keypoints in {} images",
            self.features.len()
        )))
    }

    fn intrinsics_for(&self, image: usize) -> Result<CameraIntrinsics, String> {
        if let Some(s) = &self.supplied {
            return Ok(s.views[image].camera.intrinsics);
        }
        if let Some(k) = self.options.intrinsics.or(self.ctx.config.intrinsics) {
            return k.to_intrinsics().map_err(text);
        }
        let img = &self.images[self.accepted.iter().position(|&i| i == image).expect("accepted image")];
        Ok(fallback_intrinsics(
            img.width(),
            img.height(),
            self.ctx.config.fallback_focal_factor,
        ))
    }

    fn write_sfm_outputs(&mut self) -> Result<(), String> {
        let sfm = self.sfm.as_ref().expect("sfm ran");
        let mut cams = format!(
            "# image indices {}\n",
            sfm.registered_views()
                .iter()
                .map(|&v| self.accepted[v].to_string())
                .collect::<Vec<_>>()
                .join(" ")
        );
        let views: Vec<CameraView> = sfm
            .cameras
            .iter()
            .enumerate()
            .filter_map(|(v, c)| {
                c.map(|camera| {
                    let img = &self.images[v];
                    CameraView {
                        width: img.width() as u32,
                        height: img.height() as u32,
                        camera,
                    }
                })
            })
            .collect();
        cams.push_str(&write_camera_set(&views));
        let suffix = if sfm.cloud.units == Units::Cm { "_cm" } else { "" };
        let cloud = self.write(
            &format!("sparse{suffix}.ply"),
            sparse_cloud_to_ply(&sfm.cloud).as_bytes(),
        )?;
        let cameras = self.write(&format!("sfm_cameras{suffix}.txt"), cams.as_bytes())?;
        let registered = sfm.registered_views().len();
        let points = sfm.cloud.len();
        let units = sfm.cloud.units;
        let scale = self.scale;
        match &mut self.session.reconstruction {
            Some(r) => {
                r.sparse_cloud = Some(cloud);
                r.registered_views = registered;
                r.sparse_points = points;
            }
            None => {
                self.session.reconstruction = Some(ReconstructionRecord {
                    mesh: None,
                    cameras,
                    sparse_cloud: Some(cloud),
                    depth_field: None,
                    units,
                    scale,
                    registered_views: registered,
                    sparse_points: points,
                })
            }
        }
        Ok(())
    }

    fn store_confidence(&mut self) {
        if let Some(ind) = &self.indicators {
            self.session.confidence = Some(ConfidenceRecord {
                indicators: ind.clone(),
                score: confidence_score(ind),
            });
        }
    }

    fn structure_from_motion(&mut self) -> Result<Outcome, String> {
        if self.features.is_empty() {
            return Ok(Outcome::Skipped("no features extracted".into()));
        }
        let intrinsics = self
            .accepted
            .iter()
            .map(|&i| self.intrinsics_for(i))
            .collect::<Result<Vec<_>, _>>()?;
        let result = reconstruct(&self.features, &intrinsics, &self.ctx.config.sfm_options()).map_err(text)?;
        let registered = result.registered_views().len();
        if registered < 2 {
            return Err(format!("only {registered} views registered"));
        }
        self.indicators = Some(ConfidenceIndicators {
            n_images: self.images.len(),
            matched_features: result.matched_features,
            inlier_ratio: result.inlier_ratio,
            mean_reprojection_error_px: result.report.final_mean_reprojection,
            median_reprojection_error_px: result.report.final_median_reprojection,
            coverage: 0.0,
            weights: self.ctx.config.confidence.clone(),
        });
        let detail = format!(
            "{registered} of {} views registered, {} points, mean reprojection {:.3} px",
            self.images.len(),
            result.cloud.len(),
            result.report.final_mean_reprojection
        );
        self.sfm = Some(result);
        self.write_sfm_outputs()?;
        self.store_confidence();
        self.persist()?;
        Ok(Outcome::Done(detail))
    }

    fn scale(&mut self) -> Result<Outcome, String> {
        let Some(reference) = self.session.scale_reference else {
            if let Some(s) = &self.supplied {
                if s.mesh.units == Units::Cm {
                    return Ok(Outcome::Skipped("supplied mesh is already in centimetres".into()));
                }
            }
            return Ok(Outcome::Skipped("no scale reference".into()));
        };
        if let Some(s) = &mut self.supplied {
            if s.mesh.units == Units::Cm {
                return Ok(Outcome::Skipped("supplied mesh is already in centimetres".into()));
            }
            let cams: Vec<Camera> = s.views.iter().map(|v| v.camera).collect();
            check_reference_views(&reference, cams.len())?;
            let cal = reference.calibrate(&cams).map_err(text)?;
            let scaled = apply_metric_scale(&cams, &cal);
            for (v, c) in s.views.iter_mut().zip(scaled) {
                v.camera = c;
            }
            s.mesh = apply_metric_scale(&s.mesh, &cal);
            let detail = format!("{} cm per model unit", cal.scale);
            self.scale = Some(cal);
            return Ok(Outcome::Done(detail));
        }
        let Some(sfm) = &mut self.sfm else {
            return Ok(Outcome::Skipped("no geometry to scale".into()));
        };
        let locate = |image: usize| {
            self.accepted
                .iter()
                .position(|&i| i == image)
                .and_then(|v| sfm.cameras[v])
                .ok_or_else(|| format!("scale reference view {image} is not registered"))
        };
        let pair = [locate(reference.view_a)?, locate(reference.view_b)?];
        let local = ScaleReference {
            view_a: 0,
            view_b: 1,
            ..reference
        };
        let cal = local.calibrate(&pair).map_err(text)?;
        sfm.cloud = apply_metric_scale(&sfm.cloud, &cal);
        let cams: Vec<Camera> = sfm.cameras.iter().flatten().copied().collect();
        let mut scaled = apply_metric_scale(&cams, &cal).into_iter();
        for c in sfm.cameras.iter_mut().flatten() {
            *c = scaled.next().expect("one scaled camera per registered view");
        }
        let detail = format!("{} cm per model unit", cal.scale);
        self.scale = Some(cal);
        self.session.reconstruction = None;
        self.write_sfm_outputs()?;
        if let Some(r) = &mut self.session.reconstruction {
            r.units = Units::Cm;
            r.scale = Some(cal);
        }
        self.persist()?;
        Ok(Outcome::Done(detail))
    }

    fn paint(&mut self) -> Result<Outcome, String> {
        let Some(supplied) = &self.supplied else {
            return Ok(Outcome::Skipped("no surface mesh supplied".into()));
        };
        if self.session.masks.is_empty() {
            return Ok(Outcome::Skipped("no burn masks".into()));
        }
        let mut views = Vec::new();
        let mut masks = Vec::new();
        for m in &self.session.masks {
            let view = supplied.views.get(m.view).ok_or_else(|| {
                format!(
                    "mask for view {} but the camera set has {}",
                    m.view,
                    supplied.views.len()
                )
            })?;
            let bytes = self.ctx.store.read_artifact(&self.session, &m.artifact).map_err(text)?;
            views.push(*view);
            masks.push(BurnMask::decode(&bytes).map_err(|e| format!("mask {}: {e}", m.view))?);
        }
        let labeled = paint_mesh(&supplied.mesh, &views, &masks, &self.ctx.config.fusion).map_err(text)?;
        let mesh = self.write(
            "mesh.ply",
            write_ply(&labeled.mesh, Some(&labeled.face_probability), None).as_bytes(),
        )?;
        let cameras = self.write("cameras.txt", write_camera_set(&supplied.views).as_bytes())?;
        let burned = labeled.burned.iter().filter(|b| **b).count();
        let detail = format!("{burned} of {} faces labeled burned", labeled.burned.len());
        let units = labeled.mesh.units;
        let n_views = supplied.views.len();
        let (sparse_cloud, registered_views, sparse_points) = match &self.session.reconstruction {
            Some(r) => (r.sparse_cloud.clone(), r.registered_views, r.sparse_points),
            None => (None, n_views, 0),
        };
        self.session.reconstruction = Some(ReconstructionRecord {
            mesh: Some(mesh),
            cameras,
            sparse_cloud,
            depth_field: None,
            units,
            scale: self.scale,
            registered_views,
            sparse_points,
        });
        if let Some(ind) = &mut self.indicators {
            ind.coverage = labeled.coverage(self.ctx.config.fusion.coverage_min_views);
        }
        self.store_confidence();
        self.labeled = Some(labeled);
        self.persist()?;
        Ok(Outcome::Done(detail))
    }

    fn metrics(&mut self) -> Result<Outcome, String> {
        let Some(labeled) = &self.labeled else {
            return Ok(Outcome::Skipped("no labeled mesh".into()));
        };
        let d = &self.patient.demographics;
        let bsa = match (d.height_cm, d.weight_kg) {
            (Some(h), Some(w)) => estimate_bsa(h, w).ok().map(|b| b.cm2),
            _ => None,
        };
        let report =
            compute_burn_metrics(labeled, &self.ctx.config.metrics, bsa, self.ctx.clock.now()).map_err(text)?;
        if let Some(depths) = &report.depths {
            let ply = write_ply(
                &labeled.mesh,
                Some(&labeled.face_probability),
                Some(&depths.per_vertex_cm),
            );
            let art = self.write("depth_field.ply", ply.as_bytes())?;
            if let Some(r) = &mut self.session.reconstruction {
                r.depth_field = Some(art);
            }
        }
        let m = &report.metrics;
        let detail = format!(
            "area {} cm2, d_max {} mm, volume {} cm3",
            m.area_cm2, m.d_max_mm, m.volume_proxy_cm3
        );
        self.session.metrics = Some(report.metrics);
        self.persist()?;
        Ok(Outcome::Done(detail))
    }

    fn align(&mut self) -> Result<Outcome, String> {
        let Some(current) = &self.labeled else {
            return Ok(Outcome::Skipped("no labeled mesh".into()));
        };
        let sessions = self.ctx.store.list_sessions(&self.patient.patient_id).map_err(text)?;
        let previous = sessions.iter().rev().find(|s| {
            s.session_id != self.session.session_id
                && s.captured_at < self.session.captured_at
                && s.reconstruction.as_ref().is_some_and(|r| r.mesh.is_some())
        });
        let Some(previous) = previous else {
            return Ok(Outcome::Skipped("no earlier session with a labeled mesh".into()));
        };
        let art = previous
            .reconstruction
            .as_ref()
            .and_then(|r| r.mesh.as_ref())
            .expect("filtered");
        let bytes = self.ctx.store.read_artifact(previous, art).map_err(text)?;
        let ply = parse_ply(&String::from_utf8_lossy(&bytes)).map_err(text)?;
        if ply.mesh.units != current.mesh.units {
            return Ok(Outcome::Skipped(format!(
                "earlier mesh is in {} units, this one in {}",
                ply.mesh.units.as_str(),
                current.mesh.units.as_str()
            )));
        }
        let probs = ply
            .face_probability
            .ok_or_else(|| "earlier mesh has no burn probabilities".to_string())?;
        let before =
            LabeledMesh::from_probabilities(ply.mesh, probs, self.ctx.config.fusion.label_threshold).map_err(text)?;
        let result = icp_align(
            &alignment_points(current),
            &alignment_points(&before),
            &self.ctx.config.icp,
        )
        .map_err(text)?;
        let detail = format!(
            "rms {} after {} iterations against session {}",
            result.rms, result.iterations, previous.session_id
        );
        self.session.alignment = Some(AlignmentRecord::from(&result));
        self.persist()?;
        Ok(Outcome::Done(detail))
    }

    fn report(&mut self) -> Result<Outcome, String> {
        if self.session.metrics.is_some() {
            let recs = recommend(&self.patient, &self.session, self.ctx.ruleset).map_err(text)?;
            self.session.recommendations = Some(recs);
        }
        let mut sessions = self.ctx.store.list_sessions(&self.patient.patient_id).map_err(text)?;
        for s in &mut sessions {
            if s.session_id == self.session.session_id {
                *s = self.session.clone();
            }
        }
        sessions.sort_by(|a, b| {
            a.captured_at
                .cmp(&b.captured_at)
                .then_with(|| a.session_id.cmp(&b.session_id))
        });
        let entries = timeline_entries(&sessions);
        let mut notes = Vec::new();
        let series = if entries.is_empty() {
            None
        } else {
            match compute_deltas(&entries) {
                Ok(s) => Some(s),
                Err(e) => {
                    notes.push(format!("trend omitted: {e}"));
                    None
                }
            }
        };
        let doc = generate_report(&self.patient, &self.session, series.as_ref(), self.ctx.clock.now()).map_err(text)?;
        let record = store_report(self.ctx.store, &mut self.session, &doc).map_err(text)?;
        self.persist()?;
        notes.insert(0, format!("report v{} {}", record.version, record.content_hash));
        Ok(Outcome::Done(notes.join("; ")))
    }
}

fn check_reference_views(reference: &ScaleReference, views: usize) -> Result<(), String> {
    for v in [reference.view_a, reference.view_b] {
        if v >= views {
            return Err(format!("scale reference view {v} does not exist ({views} views)"));
        }
    }
    Ok(())
}
