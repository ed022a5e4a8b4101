use std::io::Write;
use std::path::{Path, PathBuf};

use burnscope::clinical::estimate_bsa;
use burnscope::features::extract_features;
use burnscope::image::ImageBuffer;
use burnscope::longitudinal::{alignment_points, compute_deltas, icp_align, SeriesEntry};
use burnscope::mapping::{paint_mesh, BurnMask, LabeledMesh};
use burnscope::mesh::{parse_ply, write_ply};
use burnscope::metrics::compute_burn_metrics;
use burnscope::quality::{summarize_verdicts, validate_image};
use burnscope::reconstruction::export::{parse_camera_set, sparse_cloud_to_ply, write_camera_set};
use burnscope::reconstruction::{apply_metric_scale, reconstruct, ScaleReference};
use burnscope::report::{generate_report, store_report};
use burnscope::store::{timeline_entries, Clock, Store, SystemClock};
use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::config::{fallback_intrinsics, IntrinsicsConfig, ServiceConfig};
use crate::jobs::Engine;
use crate::pipeline::{run_analysis, AnalyzeOptions, ProgressSink, Stage, StageStatus};

#[derive(Debug, Error)]
#[error("{0}")]
pub struct CliError(String);

fn fail(e: impl std::fmt::Display) -> CliError {
    CliError(e.to_string())
}

#[derive(Debug, Parser)]
#[command(
    name = "burnscope",
    version,
    about = "Burn wound reconstruction, measurement and tracking"
)]
pub struct Cli {
    /// Directory holding patients and sessions.
    #[arg(long, global = true, default_value = "burnscope-store")]
    pub store: PathBuf,
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every stochastic stage; overrides the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Quality-check images and print per-image and set verdicts.
    Qc { images: Vec<PathBuf> },
    /// Extract keypoints and descriptors from one image.
    Features {
        image: PathBuf,
        /// Write the full feature set as JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sparse reconstruction from an ordered image set.
    Reconstruct {
        images: Vec<PathBuf>,
        /// Shared intrinsics as `fx,fy,cx,cy`.
        #[arg(long)]
        intrinsics: Option<String>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Scale a mesh and camera set to centimetres with a reference length.
    Scale {
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long)]
        cameras: PathBuf,
        /// JSON scale reference.
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        out_mesh: PathBuf,
        #[arg(long)]
        out_cameras: PathBuf,
    },
    /// Project burn masks onto a mesh.
    Paint {
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long)]
        cameras: PathBuf,
        /// `VIEW=PATH`, once per mask.
        #[arg(long = "mask", required = true)]
        masks: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Burn metrics of a labeled mesh in centimetres.
    Metrics {
        mesh: PathBuf,
        #[arg(long)]
        height_cm: Option<f64>,
        #[arg(long)]
        weight_kg: Option<f64>,
    },
    /// Rigidly register the healthy skin of one labeled mesh onto another.
    Align { source: PathBuf, target: PathBuf },
    /// Healing deltas for a stored patient or a JSON series file.
    Deltas {
        #[arg(long, conflicts_with = "series")]
        patient: Option<String>,
        #[arg(long)]
        series: Option<PathBuf>,
        /// Print a CSV table instead of JSON.
        #[arg(long)]
        table: bool,
    },
    /// Generate and store a report for a session.
    Report {
        session: String,
        #[arg(long, default_value = "structured", value_parser = ["structured", "html"])]
        format: String,
    },
    /// Run the full analysis for a stored session in the foreground.
    Analyze { session: String },
    /// Serve the HTTP API.
    Serve {
        /// Address to bind; the configured address when absent.
        #[arg(long)]
        listen: Option<String>,
    },
}

fn load_config(cli: &Cli) -> Result<ServiceConfig, CliError> {
    let mut config = match &cli.config {
        Some(p) => ServiceConfig::load(p).map_err(fail)?,
        None => ServiceConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| fail(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(|e| fail(format!("{}: {e}", path.display())))
}

fn open_image(path: &Path) -> Result<ImageBuffer, CliError> {
    ImageBuffer::open(path).map_err(|e| fail(format!("{}: {e}", path.display())))
}

fn read_labeled(path: &Path, threshold: f64) -> Result<LabeledMesh, CliError> {
    let ply = parse_ply(&read_text(path)?).map_err(|e| fail(format!("{}: {e}", path.display())))?;
    let probs = ply
        .face_probability
        .ok_or_else(|| fail(format!("{} has no face probabilities", path.display())))?;
    LabeledMesh::from_probabilities(ply.mesh, probs, threshold).map_err(fail)
}

fn emit(out: &mut dyn Write, value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(fail)?;
    writeln!(out, "{text}").map_err(fail)
}

fn parse_intrinsics(text: &str) -> Result<IntrinsicsConfig, CliError> {
    let v: Vec<f64> = text
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| fail("intrinsics must be four numbers fx,fy,cx,cy"))?;
    match v[..] {
        [fx, fy, cx, cy] => Ok(IntrinsicsConfig { fx, fy, cx, cy }),
        _ => Err(fail("intrinsics must be four numbers fx,fy,cx,cy")),
    }
}

struct PrintProgress;

impl ProgressSink for PrintProgress {
    fn update(&self, stage: Stage, status: StageStatus, detail: Option<&str>) {
        if status != StageStatus::Running {
            eprintln!("{stage}: {status:?} {}", detail.unwrap_or(""));
        }
    }
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    let config = load_config(&cli)?;
    match &cli.command {
        Command::Qc { images } => {
            let verdicts = images
                .iter()
                .map(|p| open_image(p).map(|img| validate_image(&img, &config.qc)))
                .collect::<Result<Vec<_>, _>>()?;
            let set = summarize_verdicts(&verdicts, &config.qc);
            emit(out, &serde_json::json!({ "images": verdicts, "set_verdict": set }))
        }
        Command::Features { image, out: path } => {
            let img = open_image(image)?;
            let f = extract_features(&img, &config.sift).map_err(fail)?;
            if let Some(p) = path {
                write_file(p, &serde_json::to_vec(&f).map_err(fail)?)?;
            }
            emit(out, &serde_json::json!({ "keypoints": f.len() }))
        }
        Command::Reconstruct {
            images,
            intrinsics,
            out_dir,
        } => {
            let imgs = images.iter().map(|p| open_image(p)).collect::<Result<Vec<_>, _>>()?;
            let feats = imgs
                .par_iter()
                .map(|i| extract_features(i, &config.sift))
                .collect::<Result<Vec<_>, _>>()
                .map_err(fail)?;
            let shared = match intrinsics {
                Some(t) => Some(parse_intrinsics(t)?),
                None => config.intrinsics,
            };
            let ks = imgs
                .iter()
                .map(|i| match shared {
                    Some(k) => k.to_intrinsics().map_err(fail),
                    None => Ok(fallback_intrinsics(i.width(), i.height(), config.fallback_focal_factor)),
                })
                .collect::<Result<Vec<_>, _>>()?;
            let result = reconstruct(&feats, &ks, &config.sfm_options()).map_err(fail)?;
            std::fs::create_dir_all(out_dir).map_err(fail)?;
            let views: Vec<_> = result
                .cameras
                .iter()
                .zip(&imgs)
                .filter_map(|(c, i)| {
                    c.map(|camera| burnscope::camera::CameraView {
                        width: i.width() as u32,
                        height: i.height() as u32,
                        camera,
                    })
                })
                .collect();
            write_file(
                &out_dir.join("sparse.ply"),
                sparse_cloud_to_ply(&result.cloud).as_bytes(),
            )?;
            write_file(&out_dir.join("cameras.txt"), write_camera_set(&views).as_bytes())?;
            emit(
                out,
                &serde_json::json!({
                    "registered_views": result.registered_views(),
                    "points": result.cloud.len(),
                    "bundle": result.report,
                    "matched_features": result.matched_features,
                    "inlier_ratio": result.inlier_ratio,
                }),
            )
        }
        Command::Scale {
            mesh,
            cameras,
            reference,
            out_mesh,
            out_cameras,
        } => {
            let ply = parse_ply(&read_text(mesh)?).map_err(fail)?;
            let mut views = parse_camera_set(&read_text(cameras)?).map_err(fail)?;
            let reference: ScaleReference = serde_json::from_str(&read_text(reference)?).map_err(fail)?;
            let cams: Vec<_> = views.iter().map(|v| v.camera).collect();
            if reference.view_a.max(reference.view_b) >= cams.len() {
                return Err(fail("scale reference names a view missing from the camera set"));
            }
            let cal = reference.calibrate(&cams).map_err(fail)?;
            for (v, c) in views.iter_mut().zip(apply_metric_scale(&cams, &cal)) {
                v.camera = c;
            }
            let scaled = apply_metric_scale(&ply.mesh, &cal);
            write_file(
                out_mesh,
                write_ply(&scaled, ply.face_probability.as_deref(), ply.vertex_depth.as_deref()).as_bytes(),
            )?;
            write_file(out_cameras, write_camera_set(&views).as_bytes())?;
            emit(out, &cal)
        }
        Command::Paint {
            mesh,
            cameras,
            masks,
            out: path,
        } => {
            let ply = parse_ply(&read_text(mesh)?).map_err(fail)?;
            let all = parse_camera_set(&read_text(cameras)?).map_err(fail)?;
            let mut views = Vec::new();
            let mut ms = Vec::new();
            for spec in masks {
                let (v, p) = spec
                    .split_once('=')
                    .ok_or_else(|| fail(format!("mask '{spec}' is not VIEW=PATH")))?;
                let v: usize = v
                    .parse()
                    .map_err(|_| fail(format!("mask view '{v}' is not an index")))?;
                views.push(
                    *all.get(v)
                        .ok_or_else(|| fail(format!("view {v} is not in the camera set")))?,
                );
                let bytes = std::fs::read(p).map_err(|e| fail(format!("{p}: {e}")))?;
                ms.push(BurnMask::decode(&bytes).map_err(fail)?);
            }
            let labeled = paint_mesh(&ply.mesh, &views, &ms, &config.fusion).map_err(fail)?;
            write_file(
                path,
                write_ply(&labeled.mesh, Some(&labeled.face_probability), None).as_bytes(),
            )?;
            let burned = labeled.burned.iter().filter(|b| **b).count();
            emit(
                out,
                &serde_json::json!({ "faces": labeled.burned.len(), "burned_faces": burned }),
            )
        }
        Command::Metrics {
            mesh,
            height_cm,
            weight_kg,
        } => {
            let labeled = read_labeled(mesh, config.fusion.label_threshold)?;
            let bsa = match (height_cm, weight_kg) {
                (Some(h), Some(w)) => Some(estimate_bsa(*h, *w).map_err(fail)?.cm2),
                _ => None,
            };
            let report = compute_burn_metrics(&labeled, &config.metrics, bsa, SystemClock.now()).map_err(fail)?;
            emit(out, &report.metrics)
        }
        Command::Align { source, target } => {
            let src = read_labeled(source, config.fusion.label_threshold)?;
            let tgt = read_labeled(target, config.fusion.label_threshold)?;
            if src.mesh.units != tgt.mesh.units {
                return Err(fail("meshes are in different units"));
            }
            let r = icp_align(&alignment_points(&src), &alignment_points(&tgt), &config.icp).map_err(fail)?;
            emit(out, &r)
        }
        Command::Deltas { patient, series, table } => {
            let entries: Vec<SeriesEntry> = match (patient, series) {
                (Some(pid), _) => {
                    let store = Store::open(&cli.store).map_err(fail)?;
                    timeline_entries(&store.list_sessions(pid).map_err(fail)?)
                }
                (None, Some(p)) => serde_json::from_str(&read_text(p)?).map_err(fail)?,
                (None, None) => return Err(fail("give --patient or --series")),
            };
            let s = compute_deltas(&entries).map_err(fail)?;
            if *table {
                write!(out, "{}", s.to_table(',')).map_err(fail)
            } else {
                emit(out, &s)
            }
        }
        Command::Report { session, format } => {
            let store = Store::open(&cli.store).map_err(fail)?;
            let mut s = store.load_session(session).map_err(fail)?;
            let patient = store.load_patient(&s.patient_id).map_err(fail)?;
            let entries = timeline_entries(&store.list_sessions(&s.patient_id).map_err(fail)?);
            let series = if entries.is_empty() {
                None
            } else {
                compute_deltas(&entries).ok()
            };
            let doc = generate_report(&patient, &s, series.as_ref(), SystemClock.now()).map_err(fail)?;
            store_report(&store, &mut s, &doc).map_err(fail)?;
            store.persist_session(&s).map_err(fail)?;
            if format == "html" {
                write!(out, "{}", doc.to_html()).map_err(fail)
            } else {
                out.write_all(&doc.to_json()).map_err(fail)?;
                writeln!(out).map_err(fail)
            }
        }
        Command::Analyze { session } => {
            let store = Store::open(&cli.store).map_err(fail)?;
            let ruleset = config.load_ruleset().map_err(fail)?;
            let ctx = crate::pipeline::Context {
                store: &store,
                config: &config,
                ruleset: &ruleset,
                clock: &SystemClock,
            };
            let s = run_analysis(&ctx, session, &AnalyzeOptions::default(), &PrintProgress).map_err(fail)?;
            emit(
                out,
                &serde_json::json!({ "session_id": s.session_id, "metrics": s.metrics, "confidence": s.confidence }),
            )
        }
        Command::Serve { listen } => {
            let addr = listen.clone().unwrap_or_else(|| config.listen.clone());
            let ruleset = config.load_ruleset().map_err(fail)?;
            let store = Store::open(&cli.store).map_err(fail)?;
            let runtime = tokio::runtime::Runtime::new().map_err(fail)?;
            runtime.block_on(async move {
                let listener = tokio::net::TcpListener::bind(&addr).await.map_err(fail)?;
                eprintln!("listening on {}", listener.local_addr().map_err(fail)?);
                let engine = Engine::start(store, config, ruleset, Box::new(SystemClock));
                axum::serve(listener, crate::api::router(engine)).await.map_err(fail)
            })
        }
    }
}
