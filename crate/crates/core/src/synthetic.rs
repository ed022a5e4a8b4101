//! Synthetic geometry, textures and rendered views with known ground truth.
//! Used by the test suites, the acceptance harness and the demo fixture.

use std::collections::HashMap;

use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::camera::{Camera, CameraIntrinsics, CameraPose, CameraView};
use crate::image::ImageBuffer;
use crate::mapping::{cast_pixel_ray, BurnMask, Bvh, LabeledMesh};
use crate::mesh::TriMesh;
use crate::reconstruction::ScaleReference;
use crate::units::Units;

/// Icosahedron subdivided `subdivisions` times and projected to a sphere.
pub fn icosphere(subdivisions: usize, radius: f64, units: Units) -> TriMesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut v: Vec<Vector3<f64>> = [
        (-1.0, t, 0.0),
        (1.0, t, 0.0),
        (-1.0, -t, 0.0),
        (1.0, -t, 0.0),
        (0.0, -1.0, t),
        (0.0, 1.0, t),
        (0.0, -1.0, -t),
        (0.0, 1.0, -t),
        (t, 0.0, -1.0),
        (t, 0.0, 1.0),
        (-t, 0.0, -1.0),
        (-t, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| Vector3::new(x, y, z).normalize())
    .collect();
    let mut f: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut midpoint: HashMap<(usize, usize), usize> = HashMap::new();
        let mut mid = |a: usize, b: usize, v: &mut Vec<Vector3<f64>>| {
            *midpoint.entry((a.min(b), a.max(b))).or_insert_with(|| {
                v.push(((v[a] + v[b]) / 2.0).normalize());
                v.len() - 1
            })
        };
        let mut next = Vec::with_capacity(f.len() * 4);
        for [a, b, c] in f {
            let ab = mid(a, b, &mut v);
            let bc = mid(b, c, &mut v);
            let ca = mid(c, a, &mut v);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        f = next;
    }
    let vertices = v.into_iter().map(|p| p * radius).collect();
    TriMesh::new(vertices, f, units).expect("icosphere is valid")
}

/// Regular grid over `[-half, half]^2` with `n x n` cells, lifted by
/// `height(x, y)`. Faces wind counter-clockwise seen from `+z`.
pub fn grid_surface(n: usize, half: f64, units: Units, height: impl Fn(f64, f64) -> f64) -> TriMesh {
    let mut v = Vec::with_capacity((n + 1) * (n + 1));
    for j in 0..=n {
        for i in 0..=n {
            let x = -half + 2.0 * half * i as f64 / n as f64;
            let y = -half + 2.0 * half * j as f64 / n as f64;
            v.push(Vector3::new(x, y, height(x, y)));
        }
    }
    let mut f = Vec::with_capacity(2 * n * n);
    for j in 0..n {
        for i in 0..n {
            let a = j * (n + 1) + i;
            f.push([a, a + 1, a + n + 2]);
            f.push([a, a + n + 2, a + n + 1]);
        }
    }
    TriMesh::new(v, f, units).expect("grid is valid")
}

/// Flat patch with a paraboloid pit of `depth` and `radius` at the origin;
/// faces whose centroid lies inside the rim are burned.
#[derive(Debug, Clone)]
pub struct Crater {
    pub radius: f64,
    pub depth: f64,
}

impl Crater {
    pub fn depth_at(&self, x: f64, y: f64) -> f64 {
        let r2 = x * x + y * y;
        let rr = self.radius * self.radius;
        if r2 < rr {
            self.depth * (1.0 - r2 / rr)
        } else {
            0.0
        }
    }

    pub fn volume(&self) -> f64 {
        std::f64::consts::PI * self.depth * self.radius * self.radius / 2.0
    }

    pub fn mesh(&self, n: usize, half: f64) -> LabeledMesh {
        let mesh = grid_surface(n, half, Units::Cm, |x, y| -self.depth_at(x, y));
        let probs: Vec<f64> = (0..mesh.faces.len())
            .map(|f| {
                let c = mesh.centroid(f);
                if c.x * c.x + c.y * c.y < self.radius * self.radius {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        LabeledMesh::from_probabilities(mesh, probs, 0.5).expect("labels are valid")
    }
}

/// Grayscale texture of random Gaussian blobs on a bright-ish background.
#[derive(Debug, Clone)]
pub struct BlobTexture {
    pub size: usize,
    pub data: Vec<f32>,
}

impl BlobTexture {
    pub fn generate(size: usize, blobs: usize, sigma_range: (f64, f64), seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data = vec![0.5f32; size * size];
        for _ in 0..blobs {
            let cx = rng.random_range(0.0..size as f64);
            let cy = rng.random_range(0.0..size as f64);
            let s = rng.random_range(sigma_range.0..sigma_range.1);
            let a = rng.random_range(-0.45..0.45);
            let reach = (3.0 * s).ceil() as i64;
            for y in (cy as i64 - reach).max(0)..=(cy as i64 + reach).min(size as i64 - 1) {
                for x in (cx as i64 - reach).max(0)..=(cx as i64 + reach).min(size as i64 - 1) {
                    let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                    data[y as usize * size + x as usize] += (a * (-d2 / (2.0 * s * s)).exp()) as f32;
                }
            }
        }
        for d in &mut data {
            *d = d.clamp(0.02, 0.98);
        }
        Self { size, data }
    }

    /// Bilinear lookup at `(u, v)` in `[0, 1]^2`.
    pub fn sample(&self, u: f64, v: f64) -> f64 {
        let n = self.size;
        let x = (u * (n - 1) as f64).clamp(0.0, (n - 1) as f64);
        let y = (v * (n - 1) as f64).clamp(0.0, (n - 1) as f64);
        let (x0, y0) = (x.floor() as usize, y.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(n - 1), (y0 + 1).min(n - 1));
        let (fx, fy) = (x - x0 as f64, y - y0 as f64);
        let at = |x: usize, y: usize| self.data[y * n + x] as f64;
        (at(x0, y0) * (1.0 - fx) + at(x1, y0) * fx) * (1.0 - fy) + (at(x0, y1) * (1.0 - fx) + at(x1, y1) * fx) * fy
    }
}

/// Mesh with per-vertex texture coordinates.
#[derive(Debug, Clone)]
pub struct TexturedMesh {
    pub mesh: TriMesh,
    pub uv: Vec<Vector2<f64>>,
}

fn barycentric(tri: &[Vector3<f64>; 3], p: &Vector3<f64>) -> [f64; 3] {
    let (e0, e1, ep) = (tri[1] - tri[0], tri[2] - tri[0], p - tri[0]);
    let (d00, d01, d11) = (e0.dot(&e0), e0.dot(&e1), e1.dot(&e1));
    let (d20, d21) = (ep.dot(&e0), ep.dot(&e1));
    let den = d00 * d11 - d01 * d01;
    let v = (d11 * d20 - d01 * d21) / den;
    let w = (d00 * d21 - d01 * d20) / den;
    [1.0 - v - w, v, w]
}

const BACKGROUND: f64 = 0.35;

/// Renders a view with `ss x ss` supersampling per pixel. Misses take a
/// flat background value.
pub fn render_view(scene: &TexturedMesh, texture: &BlobTexture, view: &CameraView, ss: usize) -> ImageBuffer {
    let bvh = Bvh::new(&scene.mesh);
    let (w, h) = (view.width as usize, view.height as usize);
    let rows: Vec<Vec<u8>> = (0..h)
        .into_par_iter()
        .map(|y| {
            (0..w)
                .map(|x| {
                    let mut acc = 0.0;
                    for sy in 0..ss {
                        for sx in 0..ss {
                            let px = Vector2::new(
                                x as f64 + (sx as f64 + 0.5) / ss as f64 - 0.5,
                                y as f64 + (sy as f64 + 0.5) / ss as f64 - 0.5,
                            );
                            let ray = cast_pixel_ray(&view.camera, &px);
                            acc += match bvh.intersect(&ray) {
                                Some(hit) => {
                                    let [a, b, c] = scene.mesh.faces[hit.face];
                                    let bc = barycentric(&scene.mesh.triangle(hit.face), &hit.point);
                                    let uv = scene.uv[a] * bc[0] + scene.uv[b] * bc[1] + scene.uv[c] * bc[2];
                                    texture.sample(uv.x, uv.y)
                                }
                                None => BACKGROUND,
                            };
                        }
                    }
                    (acc / (ss * ss) as f64 * 255.0).round().clamp(0.0, 255.0) as u8
                })
                .collect()
        })
        .collect();
    ImageBuffer::new(w, h, rows.concat()).expect("rendered buffer has the view size")
}

/// Fraction of each pixel's samples that land on a burned face.
pub fn render_mask(mesh: &LabeledMesh, view: &CameraView, ss: usize) -> BurnMask {
    let bvh = Bvh::new(&mesh.mesh);
    let (w, h) = (view.width as usize, view.height as usize);
    let rows: Vec<Vec<f64>> = (0..h)
        .into_par_iter()
        .map(|y| {
            (0..w)
                .map(|x| {
                    let mut hits = 0usize;
                    for sy in 0..ss {
                        for sx in 0..ss {
                            let px = Vector2::new(
                                x as f64 + (sx as f64 + 0.5) / ss as f64 - 0.5,
                                y as f64 + (sy as f64 + 0.5) / ss as f64 - 0.5,
                            );
                            if let Some(hit) = bvh.intersect(&cast_pixel_ray(&view.camera, &px)) {
                                hits += mesh.burned[hit.face] as usize;
                            }
                        }
                    }
                    hits as f64 / (ss * ss) as f64
                })
                .collect()
        })
        .collect();
    BurnMask::new(w, h, rows.concat()).expect("fractions lie in [0, 1]")
}

/// Partial cylinder (a limb-like patch) along `x` with a paraboloid pit on
/// its crest, seen by a ring of cameras. All lengths are in cm.
#[derive(Debug, Clone)]
pub struct LimbScene {
    pub textured: TexturedMesh,
    pub labeled: LabeledMesh,
    pub views: Vec<CameraView>,
    pub scale_reference: ScaleReference,
    /// World positions of the two reference marks.
    pub reference_points: [Vector3<f64>; 2],
    pub crater: Crater,
    pub radius: f64,
}

#[derive(Debug, Clone)]
pub struct LimbSceneParams {
    pub radius: f64,
    pub length: f64,
    pub half_angle: f64,
    pub crater: Crater,
    pub segments_along: usize,
    pub segments_around: usize,
    pub cameras: usize,
    pub camera_distance: f64,
    pub camera_tilt_deg: f64,
    pub width: u32,
    pub height: u32,
    pub focal: f64,
}

impl Default for LimbSceneParams {
    fn default() -> Self {
        Self {
            radius: 5.0,
            length: 14.0,
            half_angle: 70f64.to_radians(),
            crater: Crater {
                radius: 2.0,
                depth: 0.3,
            },
            segments_along: 112,
            segments_around: 96,
            cameras: 8,
            camera_distance: 28.0,
            camera_tilt_deg: 14.0,
            width: 800,
            height: 600,
            focal: 900.0,
        }
    }
}

impl LimbScene {
    pub fn build(p: &LimbSceneParams) -> Self {
        let (na, nr) = (p.segments_along, p.segments_around);
        let mut vertices = Vec::with_capacity((na + 1) * (nr + 1));
        let mut uv = Vec::with_capacity(vertices.capacity());
        for j in 0..=nr {
            let theta = -p.half_angle + 2.0 * p.half_angle * j as f64 / nr as f64;
            for i in 0..=na {
                let x = -p.length / 2.0 + p.length * i as f64 / na as f64;
                let arc = p.radius * theta;
                let r = p.radius - p.crater.depth_at(x, arc);
                vertices.push(Vector3::new(x, r * theta.sin(), r * theta.cos()));
                uv.push(Vector2::new(i as f64 / na as f64, j as f64 / nr as f64));
            }
        }
        let mut faces = Vec::with_capacity(2 * na * nr);
        for j in 0..nr {
            for i in 0..na {
                let a = j * (na + 1) + i;
                faces.push([a, a + 1, a + na + 2]);
                faces.push([a, a + na + 2, a + na + 1]);
            }
        }
        let mesh = TriMesh::new(vertices, faces, Units::Cm).expect("cylinder patch is valid");
        let probs: Vec<f64> = (0..mesh.faces.len())
            .map(|f| {
                let c = mesh.centroid(f);
                let arc = p.radius * c.y.atan2(c.z);
                if c.x * c.x + arc * arc < p.crater.radius * p.crater.radius {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        let labeled = LabeledMesh::from_probabilities(mesh.clone(), probs, 0.5).expect("labels are valid");

        let target = Vector3::new(0.0, 0.0, p.radius * 0.8);
        let k = CameraIntrinsics::new(
            p.focal,
            p.focal,
            (p.width as f64 - 1.0) / 2.0,
            (p.height as f64 - 1.0) / 2.0,
        )
        .expect("positive focal length");
        let tilt = p.camera_tilt_deg.to_radians();
        let views: Vec<CameraView> = (0..p.cameras)
            .map(|i| {
                let phi = i as f64 * std::f64::consts::TAU / p.cameras as f64;
                let dir = Vector3::new(tilt.sin() * phi.cos(), tilt.sin() * phi.sin(), tilt.cos());
                let pose = CameraPose::look_at(target + dir * p.camera_distance, target, Vector3::y());
                CameraView {
                    width: p.width,
                    height: p.height,
                    camera: Camera::new(k, pose),
                }
            })
            .collect();

        let mark_theta = -35f64.to_radians();
        let mark = |x: f64| Vector3::new(x, p.radius * mark_theta.sin(), p.radius * mark_theta.cos());
        let reference_points = [mark(-4.5), mark(4.5)];
        let project = |v: usize, x: &Vector3<f64>| views[v].camera.project(x).expect("marks are in front");
        let scale_reference = ScaleReference {
            view_a: 0,
            view_b: 1,
            endpoints_a: [project(0, &reference_points[0]), project(0, &reference_points[1])],
            endpoints_b: [project(1, &reference_points[0]), project(1, &reference_points[1])],
            known_distance_cm: (reference_points[1] - reference_points[0]).norm(),
        };
        Self {
            textured: TexturedMesh { mesh, uv },
            labeled,
            views,
            scale_reference,
            reference_points,
            crater: p.crater.clone(),
            radius: p.radius,
        }
    }

    pub fn render_images(&self, texture: &BlobTexture, ss: usize) -> Vec<ImageBuffer> {
        self.views
            .iter()
            .map(|v| render_view(&self.textured, texture, v, ss))
            .collect()
    }

    pub fn render_masks(&self, ss: usize) -> Vec<BurnMask> {
        self.views.iter().map(|v| render_mask(&self.labeled, v, ss)).collect()
    }

    /// The default texture for this scene.
    pub fn default_texture(seed: u64) -> BlobTexture {
        BlobTexture::generate(1536, 6000, (5.0, 16.0), seed)
    }
}

/// Random points from a smooth, asymmetric surface patch; convenient for
/// registration tests.
pub fn bumpy_patch(n: usize, seed: u64) -> Vec<Vector3<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let x: f64 = rng.random_range(-3.0..3.0);
            let y: f64 = rng.random_range(-2.0..2.0);
            let z = 0.4 * (1.3 * x).sin() + 0.3 * (0.9 * y + 0.4).cos() + 0.05 * x * y + 0.02 * x * x * x;
            Vector3::new(x, y, z)
        })
        .collect()
}

fn random_text(rng: &mut ChaCha8Rng, max: usize) -> String {
    const CHARS: &[char] = &['a', 'b', 'z', ' ', '<', '&', '"', '\'', 'é', '°', '\n', '√', '1', '-'];
    let n = rng.random_range(0..=max);
    (0..n).map(|_| CHARS[rng.random_range(0..CHARS.len())]).collect()
}

fn random_float(rng: &mut ChaCha8Rng) -> f64 {
    match rng.random_range(0..4) {
        0 => 0.0,
        1 => rng.random_range(0.0..1.0),
        2 => rng.random_range(-1e6..1e6),
        _ => f64::from_bits(rng.random_range(0x3c00_0000_0000_0000u64..0x4300_0000_0000_0000)),
    }
}

/// Session with every optional record filled at random, for round-trip
/// testing. Artifacts are written through `store` so the session persists.
pub fn random_session(
    store: &crate::store::Store,
    patient_id: &str,
    seed: u64,
) -> Result<crate::store::AssessmentSession, crate::store::StoreError> {
    use crate::clinical::{
        BurnDescriptor, CareMode, Category, DepthCategory, History, IntakeRecord, Mechanism, PrimarySurvey,
        RecommendationItem, RecommendationSet, Severity, SurveyItem, TbsaSource,
    };
    use crate::longitudinal::{AlignmentRecord, RigidTransform};
    use crate::metrics::BurnMetrics;
    use crate::quality::{ConfidenceIndicators, ConfidenceWeights, ExposureStatus, QcVerdict};
    use crate::reconstruction::ScaleCalibration;
    use crate::store::{
        ConfidenceRecord, FixedClock, ImageRecord, MaskRecord, MeshInput, ReconstructionRecord, ReportRecord,
    };
    use chrono::DateTime;
    use nalgebra::Rotation3;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rng = &mut rng;
    let survey_item = |rng: &mut ChaCha8Rng| SurveyItem {
        assessed: true,
        notes: random_text(rng, 8),
    };
    let mode = if rng.random_bool(0.5) {
        CareMode::Emergency
    } else {
        CareMode::Consultation
    };
    let primary_survey = if mode == CareMode::Emergency || rng.random_bool(0.3) {
        Some(PrimarySurvey {
            airway: Some(survey_item(rng)),
            breathing: Some(survey_item(rng)),
            circulation: Some(survey_item(rng)),
            disability: Some(survey_item(rng)),
            exposure: Some(survey_item(rng)),
        })
    } else {
        None
    };
    let depths = [
        DepthCategory::Superficial,
        DepthCategory::SuperficialPartial,
        DepthCategory::DeepPartial,
        DepthCategory::FullThickness,
        DepthCategory::Unknown,
    ];
    let intake = IntakeRecord {
        mode,
        mechanism_text: random_text(rng, 20),
        mechanism: Mechanism::ALL[rng.random_range(0..Mechanism::ALL.len())],
        primary_survey,
        secondary_findings: (0..rng.random_range(0..3)).map(|_| random_text(rng, 10)).collect(),
        burns: (0..rng.random_range(0..3))
            .map(|_| BurnDescriptor {
                site: format!("site {}", random_text(rng, 6)),
                suspected_depth: depths[rng.random_range(0..depths.len())],
                circumferential: rng.random_bool(0.2),
            })
            .collect(),
        history: History {
            present_illness: random_text(rng, 12),
            past_medical: random_text(rng, 12),
            medications: random_text(rng, 12),
            allergies: random_text(rng, 12),
            tetanus_up_to_date: [None, Some(true), Some(false)][rng.random_range(0..3)],
        },
        manual_tbsa_percent: rng.random_bool(0.5).then(|| rng.random_range(0.0..100.0)),
    };
    let secs = rng.random_range(0..4_000_000_000i64);
    let nanos = rng.random_range(0..1_000_000_000u32);
    let t = DateTime::from_timestamp(secs, nanos).expect("timestamp in range");
    let mut s = store.create_session(patient_id, intake, &FixedClock(t))?;

    let artifact = |s: &crate::store::AssessmentSession, rng: &mut ChaCha8Rng, name: String| {
        let bytes: Vec<u8> = (0..rng.random_range(0..64)).map(|_| rng.random()).collect();
        store.write_artifact(s, &name, &bytes)
    };
    let n_images = rng.random_range(0..5);
    for i in 0..n_images {
        let art = artifact(&s, rng, format!("image_{i:02}.png"))?;
        let accepted = rng.random_bool(0.7);
        s.images.push(ImageRecord {
            artifact: art,
            original_name: random_text(rng, 10),
            verdict: QcVerdict {
                width: rng.random_range(1..5000),
                height: rng.random_range(1..5000),
                resolution_ok: rng.random_bool(0.5),
                laplacian_variance: random_float(rng).abs(),
                sharpness_ok: rng.random_bool(0.5),
                mean_intensity: rng.random_range(0.0..255.0),
                exposure_status: [ExposureStatus::Under, ExposureStatus::Ok, ExposureStatus::Over]
                    [rng.random_range(0..3)],
                accepted,
                reasons: if accepted { vec![] } else { vec![random_text(rng, 15)] },
            },
        });
    }
    for i in 0..n_images {
        if rng.random_bool(0.5) {
            let art = artifact(&s, rng, format!("mask_{i:02}.png"))?;
            s.masks.push(MaskRecord { view: i, artifact: art });
        }
    }
    if rng.random_bool(0.5) {
        s.scale_reference = Some(ScaleReference {
            view_a: 0,
            view_b: 1,
            endpoints_a: [
                Vector2::new(random_float(rng), random_float(rng)),
                Vector2::new(random_float(rng), random_float(rng)),
            ],
            endpoints_b: [
                Vector2::new(random_float(rng), random_float(rng)),
                Vector2::new(random_float(rng), random_float(rng)),
            ],
            known_distance_cm: rng.random_range(0.1..50.0),
        });
    }
    if rng.random_bool(0.3) {
        s.mesh_input = Some(MeshInput {
            mesh: artifact(&s, rng, "input_mesh.ply".into())?,
            cameras: artifact(&s, rng, "input_cameras.json".into())?,
        });
    }
    if rng.random_bool(0.6) {
        let sparse_cloud = if rng.random_bool(0.5) {
            Some(artifact(&s, rng, "sparse.ply".into())?)
        } else {
            None
        };
        let depth_field = if rng.random_bool(0.5) {
            Some(artifact(&s, rng, "depth.json".into())?)
        } else {
            None
        };
        let scale = rng.random_bool(0.5).then(|| {
            let p1 = Vector3::new(random_float(rng), random_float(rng), random_float(rng));
            let p2 = p1 + Vector3::new(1.0 + rng.random_range(0.0..5.0), 0.0, 0.0);
            ScaleCalibration::from_points(p1, p2, rng.random_range(0.5..20.0)).expect("distinct points")
        });
        s.reconstruction = Some(ReconstructionRecord {
            mesh: if rng.random_bool(0.8) {
                Some(artifact(&s, rng, "mesh.ply".into())?)
            } else {
                None
            },
            cameras: artifact(&s, rng, "cameras.json".into())?,
            sparse_cloud,
            depth_field,
            units: if rng.random_bool(0.5) {
                Units::Cm
            } else {
                Units::Arbitrary
            },
            scale,
            registered_views: rng.random_range(0..20),
            sparse_points: rng.random_range(0..100_000),
        });
        s.metrics = Some(BurnMetrics {
            area_cm2: random_float(rng).abs(),
            perimeter_cm: random_float(rng).abs(),
            d_max_mm: random_float(rng),
            d_avg_mm: random_float(rng),
            volume_proxy_cm3: random_float(rng).abs(),
            tbsa_percent: rng.random_bool(0.5).then(|| rng.random_range(0.0..100.0)),
            computed_at: t,
        });
        let indicators = ConfidenceIndicators {
            n_images: rng.random_range(0..30),
            matched_features: rng.random_range(0..100_000),
            inlier_ratio: rng.random_range(0.0..1.0),
            mean_reprojection_error_px: random_float(rng).abs(),
            median_reprojection_error_px: random_float(rng).abs(),
            coverage: rng.random_range(0.0..1.0),
            weights: ConfidenceWeights::default(),
        };
        s.confidence = Some(ConfidenceRecord {
            score: crate::quality::confidence_score(&indicators),
            indicators,
        });
    }
    if rng.random_bool(0.4) {
        let axis = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 1.0);
        let rot = Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), rng.random_range(-3.0..3.0));
        s.alignment = Some(AlignmentRecord {
            transform: RigidTransform {
                rotation: *rot.matrix(),
                translation: Vector3::new(random_float(rng), random_float(rng), random_float(rng)),
            },
            rms: random_float(rng).abs(),
            iterations: rng.random_range(0..100),
        });
    }
    if rng.random_bool(0.4) {
        let w = rng.random_range(1.0..150.0);
        let a = rng.random_range(1.0..100.0);
        let fluid_plan = rng
            .random_bool(0.5)
            .then(|| crate::clinical::parkland_plan(w, a, 4.0).expect("valid inputs"));
        s.recommendations = Some(RecommendationSet {
            ruleset: random_text(rng, 10),
            notice: random_text(rng, 30),
            tbsa_percent: Some(a),
            tbsa_source: Some(if rng.random_bool(0.5) {
                TbsaSource::Measured
            } else {
                TbsaSource::Manual
            }),
            items: vec![RecommendationItem {
                rule_id: "fluids-resuscitation".into(),
                category: Category::Fluids,
                severity: Severity::Urgent,
                text: random_text(rng, 40),
                fluid_plan,
            }],
        });
    }
    for v in 1..=rng.random_range(0..3u32) {
        s.reports.push(ReportRecord {
            version: v,
            structured: artifact(&s, rng, format!("report.v{v}.json"))?,
            html: artifact(&s, rng, format!("report.v{v}.html"))?,
            content_hash: format!("{:064x}", rng.random::<u128>()),
        });
    }
    Ok(s)
}
