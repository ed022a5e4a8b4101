#![allow(dead_code)]

use std::sync::Arc;
use std::time::{Duration, Instant};

use burnscope::camera::CameraView;
use burnscope::clinical::Ruleset;
use burnscope::mesh::write_ply;
use burnscope::reconstruction::export::write_camera_set;
use burnscope::reconstruction::ScaleReference;
use burnscope::store::{Store, SystemClock};
use burnscope::synthetic::{Crater, LimbScene, LimbSceneParams};
use burnscope::units::Units;
use burnscope_service::api::router;
use burnscope_service::config::ServiceConfig;
use burnscope_service::jobs::Engine;
use reqwest::multipart::{Form, Part};
use serde_json::Value;

pub struct Server {
    pub base: String,
    pub engine: Arc<Engine>,
    pub client: reqwest::Client,
    _dir: tempfile::TempDir,
}

pub async fn start_server(config: ServiceConfig) -> Server {
    let dir = tempfile::tempdir().unwrap();
    let store = Store::open(dir.path()).unwrap();
    let engine = Engine::start(store, config, Ruleset::default_rules(), Box::new(SystemClock));
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let app = router(Arc::clone(&engine));
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    Server {
        base: format!("http://{addr}"),
        engine,
        client: reqwest::Client::new(),
        _dir: dir,
    }
}

impl Server {
    pub fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    pub async fn post_json(&self, path: &str, body: &Value) -> (u16, Value) {
        let r = self.client.post(self.url(path)).json(body).send().await.unwrap();
        let status = r.status().as_u16();
        (status, r.json().await.unwrap_or(Value::Null))
    }

    pub async fn post_form(&self, path: &str, form: Form) -> (u16, Value) {
        let r = self.client.post(self.url(path)).multipart(form).send().await.unwrap();
        let status = r.status().as_u16();
        (status, r.json().await.unwrap_or(Value::Null))
    }

    pub async fn get(&self, path: &str) -> (u16, Value) {
        let r = self.client.get(self.url(path)).send().await.unwrap();
        let status = r.status().as_u16();
        (status, r.json().await.unwrap_or(Value::Null))
    }

    pub async fn get_text(&self, path: &str) -> (u16, String) {
        let r = self.client.get(self.url(path)).send().await.unwrap();
        (r.status().as_u16(), r.text().await.unwrap())
    }

    pub async fn new_patient(&self) -> String {
        let (s, p) = self
            .post_json(
                "/patients",
                &serde_json::json!({ "height_cm": 175.0, "weight_kg": 70.0 }),
            )
            .await;
        assert_eq!(s, 201, "{p}");
        p["patient_id"].as_str().unwrap().to_string()
    }

    pub async fn new_session(&self, patient: &str, captured_at: Option<&str>) -> String {
        let mut body = serde_json::json!({ "intake": { "mode": "consultation" } });
        if let Some(t) = captured_at {
            body["captured_at"] = Value::from(t);
        }
        let (s, v) = self.post_json(&format!("/patients/{patient}/sessions"), &body).await;
        assert_eq!(s, 201, "{v}");
        v["session_id"].as_str().unwrap().to_string()
    }

    /// Polls until the job is terminal.
    pub async fn wait_for_job(&self, job_id: &str, limit: Duration) -> Value {
        let start = Instant::now();
        loop {
            let (s, job) = self.get(&format!("/jobs/{job_id}")).await;
            assert_eq!(s, 200, "{job}");
            if job["state"] == "done" || job["state"] == "failed" {
                return job;
            }
            assert!(
                start.elapsed() < limit,
                "job still {} after {limit:?}: {job}",
                job["state"]
            );
            tokio::time::sleep(Duration::from_millis(100)).await;
        }
    }
}

pub fn file_part(name: &str, bytes: Vec<u8>, mime: &str) -> Part {
    Part::bytes(bytes).file_name(name.to_string()).mime_str(mime).unwrap()
}

pub fn png_form(named: Vec<(String, Vec<u8>)>) -> Form {
    named.into_iter().fold(Form::new(), |f, (name, bytes)| {
        let file = format!("{name}.png");
        f.part(name, file_part(&file, bytes, "image/png"))
    })
}

/// The synthetic limb as a client would upload it: images, masks, and a
/// mesh plus cameras expressed in arbitrary units (`unit` cm per unit).
pub struct LimbFixture {
    pub scene: LimbScene,
    pub images: Vec<Vec<u8>>,
    pub masks: Vec<Vec<u8>>,
    pub mesh_ply: String,
    pub cameras: String,
    pub reference: ScaleReference,
    pub unit: f64,
}

pub fn limb_fixture(crater_radius: f64, with_images: bool, unit: f64) -> LimbFixture {
    let params = LimbSceneParams {
        crater: Crater {
            radius: crater_radius,
            depth: 0.3,
        },
        ..LimbSceneParams::default()
    };
    let scene = LimbScene::build(&params);
    let images = if with_images {
        let tex = LimbScene::default_texture(11);
        scene.render_images(&tex, 2).iter().map(|i| i.encode_png()).collect()
    } else {
        Vec::new()
    };
    let masks = scene
        .render_masks(1)
        .iter()
        .map(|m| m.to_image().encode_png())
        .collect();
    let mut mesh = scene.textured.mesh.transformed(|v| v / unit);
    mesh.units = if unit == 1.0 { Units::Cm } else { Units::Arbitrary };
    let views: Vec<CameraView> = scene
        .views
        .iter()
        .map(|v| {
            let mut v = *v;
            v.camera.pose.translation /= unit;
            v
        })
        .collect();
    LimbFixture {
        mesh_ply: write_ply(&mesh, None, None),
        cameras: write_camera_set(&views),
        reference: scene.scale_reference,
        images,
        masks,
        scene,
        unit,
    }
}

impl LimbFixture {
    pub fn image_form(&self) -> Form {
        png_form(
            self.images
                .iter()
                .enumerate()
                .map(|(i, b)| (format!("view{i}"), b.clone()))
                .collect(),
        )
    }

    pub fn mask_form(&self) -> Form {
        png_form(
            self.masks
                .iter()
                .enumerate()
                .map(|(i, b)| (i.to_string(), b.clone()))
                .collect(),
        )
    }

    pub fn mesh_form(&self) -> Form {
        Form::new()
            .part(
                "mesh",
                file_part("mesh.ply", self.mesh_ply.clone().into_bytes(), "text/plain"),
            )
            .part(
                "cameras",
                file_part("cameras.txt", self.cameras.clone().into_bytes(), "text/plain"),
            )
    }

    /// Uploads everything except the images.
    pub async fn upload_geometry(&self, server: &Server, session: &str) {
        let (s, v) = server
            .post_form(&format!("/sessions/{session}/mesh"), self.mesh_form())
            .await;
        assert_eq!(s, 200, "{v}");
        let (s, v) = server
            .post_form(&format!("/sessions/{session}/masks"), self.mask_form())
            .await;
        assert_eq!(s, 200, "{v}");
        if self.unit != 1.0 {
            let body = serde_json::to_value(self.reference).unwrap();
            let (s, v) = server.post_json(&format!("/sessions/{session}/scale"), &body).await;
            assert_eq!(s, 200, "{v}");
        }
    }
}
