mod common;

use std::fs;
use std::path::Path;

use burnscope::image::ImageBuffer;
use burnscope_service::cli::{run, Cli};
use clap::Parser;
use common::limb_fixture;
use serde_json::{json, Value};

fn invoke(args: &[&str]) -> Result<String, String> {
    let cli =
        Cli::try_parse_from(std::iter::once("burnscope").chain(args.iter().copied())).map_err(|e| e.to_string())?;
    let mut out = Vec::new();
    run(cli, &mut out).map_err(|e| e.to_string())?;
    Ok(String::from_utf8(out).unwrap())
}

fn invoke_json(args: &[&str]) -> Value {
    let text = invoke(args).unwrap_or_else(|e| panic!("{args:?}: {e}"));
    serde_json::from_str(&text).unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn qc_reports_each_image_and_the_set() {
    let dir = tempfile::tempdir().unwrap();
    let checker = |w, h| ImageBuffer::from_fn(w, h, |x, y| if (x / 4 + y / 4) % 2 == 0 { 30 } else { 220 }).unwrap();
    let good = dir.path().join("good.png");
    let small = dir.path().join("small.png");
    fs::write(&good, checker(800, 600).encode_png()).unwrap();
    fs::write(&small, checker(640, 480).encode_png()).unwrap();
    let v = invoke_json(&["qc", path(&good), path(&small)]);
    assert_eq!(v["images"][0]["accepted"], true);
    assert_eq!(v["images"][1]["resolution_ok"], false);
    assert_eq!(v["set_verdict"]["accepted_count"], 1);
    assert_eq!(v["set_verdict"]["passed"], false);

    let err = invoke(&["qc", path(&dir.path().join("missing.png"))]).unwrap_err();
    assert!(err.contains("missing.png"), "{err}");
}

#[test]
fn scale_paint_metrics_and_align_on_the_synthetic_limb() {
    let dir = tempfile::tempdir().unwrap();
    let d = |name: &str| dir.path().join(name);
    let fixture = limb_fixture(2.0, false, 2.5);
    fs::write(d("mesh.ply"), &fixture.mesh_ply).unwrap();
    fs::write(d("cameras.txt"), &fixture.cameras).unwrap();
    fs::write(d("reference.json"), serde_json::to_vec(&fixture.reference).unwrap()).unwrap();
    let mut mask_args = Vec::new();
    for (i, m) in fixture.masks.iter().enumerate() {
        let p = d(&format!("mask{i}.png"));
        fs::write(&p, m).unwrap();
        mask_args.push(format!("{i}={}", p.display()));
    }

    let cal = invoke_json(&[
        "scale",
        "--mesh",
        path(&d("mesh.ply")),
        "--cameras",
        path(&d("cameras.txt")),
        "--reference",
        path(&d("reference.json")),
        "--out-mesh",
        path(&d("mesh_cm.ply")),
        "--out-cameras",
        path(&d("cameras_cm.txt")),
    ]);
    let s = cal["scale"].as_f64().unwrap();
    assert!((s - 2.5).abs() < 0.01, "scale {s}");

    let mut args = vec![
        "paint".to_string(),
        "--mesh".into(),
        d("mesh_cm.ply").display().to_string(),
        "--cameras".into(),
        d("cameras_cm.txt").display().to_string(),
        "--out".into(),
        d("labeled.ply").display().to_string(),
    ];
    for m in &mask_args {
        args.push("--mask".into());
        args.push(m.clone());
    }
    let painted = invoke_json(&args.iter().map(String::as_str).collect::<Vec<_>>());
    assert!(painted["burned_faces"].as_u64().unwrap() > 0);

    let m = invoke_json(&[
        "metrics",
        path(&d("labeled.ply")),
        "--height-cm",
        "175",
        "--weight-kg",
        "70",
    ]);
    let area = m["area_cm2"].as_f64().unwrap();
    assert!((area / (std::f64::consts::PI * 4.0) - 1.0).abs() < 0.1, "area {area}");
    assert!(m["tbsa_percent"].as_f64().unwrap() > 0.0);

    let a = invoke_json(&["align", path(&d("labeled.ply")), path(&d("labeled.ply"))]);
    assert!(a["rms"].as_f64().unwrap() < 1e-9);

    // The unscaled mesh is in arbitrary units and cannot be measured.
    let err = invoke(&["metrics", path(&d("mesh.ply"))]).unwrap_err();
    assert!(!err.is_empty());
}

#[test]
fn deltas_from_a_series_file() {
    let dir = tempfile::tempdir().unwrap();
    let entry = |day: f64, area: f64| {
        json!({
            "day": day,
            "metrics": {
                "area_cm2": area, "perimeter_cm": 10.0, "d_max_mm": 2.0, "d_avg_mm": 1.0,
                "volume_proxy_cm3": 0.5, "tbsa_percent": null, "computed_at": "2026-01-01T00:00:00Z"
            }
        })
    };
    let series = dir.path().join("series.json");
    fs::write(
        &series,
        serde_json::to_vec(&json!([entry(0.0, 100.0), entry(7.0, 80.0), entry(14.0, 60.0)])).unwrap(),
    )
    .unwrap();

    let v = invoke_json(&["deltas", "--series", path(&series)]);
    assert_eq!(v["projected_recovery_day"], 35.0);
    assert_eq!(v["timepoints"][2]["delta_area_cm2"], -40.0);

    let table = invoke(&["deltas", "--series", path(&series), "--table"]).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[0].starts_with("day,area_cm2"));
    assert_eq!(lines[3], "14,60,2,0.5,-40,-40");

    assert!(invoke(&["deltas"]).is_err());
}
