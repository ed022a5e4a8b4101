//! Clinical report compilation. A report is a list of sections of labelled
//! fields, rendered both as canonical JSON and as standalone HTML.

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::longitudinal::HealingSeries;
use crate::store::{sha256_hex, AssessmentSession, PatientRecord, ReportRecord, Store, StoreError};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("session integrity: {0}")]
    Integrity(String),
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportField {
    /// Stable dotted key, e.g. `metrics.area_cm2`.
    pub key: String,
    pub label: String,
    pub value: String,
    pub unit: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportSection {
    pub key: String,
    pub title: String,
    pub performed: bool,
    pub fields: Vec<ReportField>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportBody {
    pub patient_id: String,
    pub session_id: String,
    pub sections: Vec<ReportSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub generated_at: DateTime<Utc>,
    /// SHA-256 of the canonical body.
    pub content_hash: String,
    pub body: ReportBody,
}

pub const NOT_PERFORMED: &str = "not performed";

const DISCLAIMER: &str = "This report is generated by decision-support software. Measurements are geometric \
estimates from photographs and do not assess tissue viability. All findings and recommendations must be \
reviewed by the treating clinician, who remains responsible for diagnosis and treatment.";

/// Shortest decimal that parses back to the same `f64`.
pub fn format_number(x: f64) -> String {
    format!("{x}")
}

struct SectionBuilder {
    section: ReportSection,
}

impl SectionBuilder {
    fn new(key: &str, title: &str) -> Self {
        Self {
            section: ReportSection {
                key: key.into(),
                title: title.into(),
                performed: true,
                fields: Vec::new(),
                notes: Vec::new(),
            },
        }
    }

    fn text(mut self, key: &str, label: &str, value: impl Into<String>) -> Self {
        self.section.fields.push(ReportField {
            key: format!("{}.{key}", self.section.key),
            label: label.into(),
            value: value.into(),
            unit: None,
        });
        self
    }

    fn num(mut self, key: &str, label: &str, value: f64, unit: &str) -> Self {
        self.section.fields.push(ReportField {
            key: format!("{}.{key}", self.section.key),
            label: label.into(),
            value: format_number(value),
            unit: (!unit.is_empty()).then(|| unit.to_string()),
        });
        self
    }

    fn opt_num(self, key: &str, label: &str, value: Option<f64>, unit: &str) -> Self {
        match value {
            Some(v) => self.num(key, label, v, unit),
            None => self.text(key, label, "not recorded"),
        }
    }

    fn note(mut self, note: impl Into<String>) -> Self {
        self.section.notes.push(note.into());
        self
    }

    fn not_performed(key: &str, title: &str) -> ReportSection {
        ReportSection {
            key: key.into(),
            title: title.into(),
            performed: false,
            fields: Vec::new(),
            notes: vec![format!("{title}: {NOT_PERFORMED}")],
        }
    }

    fn build(self) -> ReportSection {
        self.section
    }
}

fn json_str<T: Serialize>(v: &T) -> String {
    match serde_json::to_value(v).expect("serializable") {
        serde_json::Value::String(s) => s,
        other => other.to_string(),
    }
}

fn patient_section(patient: &PatientRecord) -> ReportSection {
    let d = &patient.demographics;
    SectionBuilder::new("patient", "Patient")
        .text("patient_id", "Patient ID", &patient.patient_id)
        .opt_num("age_years", "Age", d.age_years, "years")
        .opt_num("weight_kg", "Weight", d.weight_kg, "kg")
        .opt_num("height_cm", "Height", d.height_cm, "cm")
        .text(
            "sex",
            "Sex",
            d.sex.map(|s| json_str(&s)).unwrap_or_else(|| "not recorded".into()),
        )
        .build()
}

fn intake_section(session: &AssessmentSession) -> ReportSection {
    let i = &session.intake;
    let mut b = SectionBuilder::new("intake", "Intake")
        .text("captured_at", "Captured at", session.captured_at.to_rfc3339())
        .text("mode", "Mode", json_str(&i.mode))
        .text("mechanism", "Mechanism", json_str(&i.mechanism));
    if !i.mechanism_text.is_empty() {
        b = b.text("mechanism_text", "Mechanism details", &i.mechanism_text);
    }
    if let Some(t) = i.manual_tbsa_percent {
        b = b.num("manual_tbsa_percent", "Clinician TBSA estimate", t, "%");
    }
    if let Some(s) = &i.primary_survey {
        let missing = s.missing();
        b = b.text(
            "primary_survey",
            "Primary survey",
            if missing.is_empty() {
                "complete".to_string()
            } else {
                format!("incomplete: {}", missing.join(", "))
            },
        );
    }
    for (n, burn) in i.burns.iter().enumerate() {
        b = b.text(
            &format!("burns.{n}"),
            &format!("Burn {}", n + 1),
            format!(
                "{}; suspected depth {}; {}",
                burn.site,
                json_str(&burn.suspected_depth),
                if burn.circumferential {
                    "circumferential"
                } else {
                    "not circumferential"
                }
            ),
        );
    }
    for (n, f) in i.secondary_findings.iter().enumerate() {
        b = b.text(&format!("secondary_findings.{n}"), "Secondary survey finding", f);
    }
    b = b.text(
        "tetanus",
        "Tetanus immunisation current",
        match i.history.tetanus_up_to_date {
            Some(true) => "yes",
            Some(false) => "no",
            None => "unknown",
        },
    );
    b.build()
}

fn qc_section(session: &AssessmentSession) -> ReportSection {
    if session.images.is_empty() {
        return SectionBuilder::not_performed("acquisition", "Acquisition quality control");
    }
    let mut b = SectionBuilder::new("acquisition", "Acquisition quality control")
        .num("images", "Images uploaded", session.images.len() as f64, "")
        .num("accepted", "Images accepted", session.accepted_image_count() as f64, "");
    for (n, img) in session.images.iter().enumerate() {
        let v = &img.verdict;
        let status = if v.accepted {
            "accepted".to_string()
        } else {
            format!("rejected: {}", v.reasons.join("; "))
        };
        b = b.text(
            &format!("image.{n}"),
            &format!("Image {} ({})", n + 1, img.original_name),
            status,
        );
    }
    b.build()
}

fn reconstruction_section(session: &AssessmentSession) -> ReportSection {
    let Some(r) = &session.reconstruction else {
        return SectionBuilder::not_performed("reconstruction", "Reconstruction");
    };
    let mut b = SectionBuilder::new("reconstruction", "Reconstruction")
        .text("units", "Units", r.units.as_str())
        .num("registered_views", "Registered views", r.registered_views as f64, "")
        .num("sparse_points", "Sparse points", r.sparse_points as f64, "")
        .text(
            "mesh_sha256",
            "Mesh SHA-256",
            r.mesh.as_ref().map_or(NOT_PERFORMED, |m| m.sha256.as_str()),
        );
    match &r.scale {
        Some(s) => {
            b = b.num("scale_factor", "Scale factor", s.scale, "cm per model unit").num(
                "reference_cm",
                "Reference length",
                s.known_distance_cm,
                "cm",
            );
        }
        None => b = b.text("scale_factor", "Scale factor", NOT_PERFORMED),
    }
    if session.mesh_input.is_some() {
        b = b.note("Surface supplied directly; structure-from-motion was not run.");
    }
    b.build()
}

fn metrics_section(session: &AssessmentSession) -> ReportSection {
    let Some(m) = &session.metrics else {
        return SectionBuilder::not_performed("metrics", "Wound metrics");
    };
    SectionBuilder::new("metrics", "Wound metrics")
        .num("area_cm2", "Burn surface area", m.area_cm2, "cm²")
        .num("perimeter_cm", "Perimeter", m.perimeter_cm, "cm")
        .num("d_max_mm", "Maximum depth proxy", m.d_max_mm, "mm")
        .num("d_avg_mm", "Mean depth proxy", m.d_avg_mm, "mm")
        .num("volume_proxy_cm3", "Volume proxy", m.volume_proxy_cm3, "cm³")
        .opt_num("tbsa_percent", "TBSA", m.tbsa_percent, "%")
        .text("computed_at", "Computed at", m.computed_at.to_rfc3339())
        .build()
}

fn trends_section(series: Option<&HealingSeries>) -> ReportSection {
    let Some(s) = series.filter(|s| s.timepoints.len() >= 2) else {
        return SectionBuilder::not_performed("trends", "Longitudinal trends");
    };
    let mut b = SectionBuilder::new("trends", "Longitudinal trends");
    for (n, t) in s.timepoints.iter().enumerate() {
        b = b
            .num(&format!("{n}.day"), "Day", t.day, "days")
            .num(&format!("{n}.area_cm2"), "Area", t.metrics.area_cm2, "cm²")
            .num(&format!("{n}.delta_area_cm2"), "Area change", t.delta_area_cm2, "cm²")
            .opt_num(
                &format!("{n}.percent_area_change"),
                "Area change",
                t.percent_area_change,
                "%",
            );
    }
    b = b
        .opt_num("healing_rate", "Healing rate", s.healing_rate_cm2_per_day, "cm²/day")
        .opt_num(
            "projected_recovery_day",
            "Projected closure",
            s.projected_recovery_day,
            "day",
        );
    for w in &s.warnings {
        b = b.note(w.clone());
    }
    b.build()
}

fn recommendations_section(session: &AssessmentSession) -> ReportSection {
    let Some(r) = &session.recommendations else {
        return SectionBuilder::not_performed("recommendations", "Recommendations");
    };
    let mut b = SectionBuilder::new("recommendations", "Recommendations").note(r.notice.clone());
    if let (Some(t), Some(src)) = (r.tbsa_percent, r.tbsa_source) {
        b = b
            .num("tbsa_percent", "TBSA used", t, "%")
            .text("tbsa_source", "TBSA source", json_str(&src));
    }
    for (n, item) in r.items.iter().enumerate() {
        b = b.text(
            &format!("{n}"),
            &format!("{} ({})", json_str(&item.category), json_str(&item.severity)),
            format!("{} [rule {}]", item.text, item.rule_id),
        );
        if let Some(p) = &item.fluid_plan {
            b = b
                .num(&format!("{n}.fluid_total_ml"), "24 h fluid volume", p.total_ml, "mL")
                .num(
                    &format!("{n}.rate_first8h"),
                    "Rate, first 8 h",
                    p.rate_first8h_ml_per_h,
                    "mL/h",
                )
                .num(
                    &format!("{n}.rate_next16h"),
                    "Rate, next 16 h",
                    p.rate_next16h_ml_per_h,
                    "mL/h",
                );
        }
    }
    b.build()
}

fn confidence_section(session: &AssessmentSession) -> ReportSection {
    let Some(c) = &session.confidence else {
        return SectionBuilder::not_performed("confidence", "Confidence");
    };
    let i = &c.indicators;
    SectionBuilder::new("confidence", "Confidence")
        .num("score", "Confidence score", c.score, "")
        .num("n_images", "Images used", i.n_images as f64, "")
        .num("inlier_ratio", "Match inlier ratio", i.inlier_ratio, "")
        .num(
            "mean_reprojection_error_px",
            "Mean reprojection error",
            i.mean_reprojection_error_px,
            "px",
        )
        .num("coverage", "Burn coverage", i.coverage, "")
        .build()
}

/// Compiles the report. The session is only read.
pub fn generate_report(
    patient: &PatientRecord,
    session: &AssessmentSession,
    series: Option<&HealingSeries>,
    generated_at: DateTime<Utc>,
) -> Result<ReportDocument, ReportError> {
    if session.patient_id != patient.patient_id {
        return Err(ReportError::Integrity(format!(
            "session belongs to patient '{}', not '{}'",
            session.patient_id, patient.patient_id
        )));
    }
    if session.metrics.is_some() && session.reconstruction.is_none() {
        return Err(ReportError::Integrity(
            "metrics present without a reconstruction".into(),
        ));
    }
    if session.mesh_input.is_none() && session.masks.iter().any(|m| m.view >= session.images.len()) {
        return Err(ReportError::Integrity("mask refers to a missing view".into()));
    }
    let sections = vec![
        patient_section(patient),
        intake_section(session),
        qc_section(session),
        reconstruction_section(session),
        metrics_section(session),
        trends_section(series),
        recommendations_section(session),
        confidence_section(session),
        SectionBuilder::new("disclaimers", "Disclaimers")
            .note(DISCLAIMER)
            .build(),
    ];
    let body = ReportBody {
        patient_id: patient.patient_id.clone(),
        session_id: session.session_id.clone(),
        sections,
    };
    Ok(ReportDocument {
        generated_at,
        content_hash: body_hash(&body),
        body,
    })
}

pub fn body_hash(body: &ReportBody) -> String {
    sha256_hex(&canonical_json(body))
}

/// Compact JSON with object keys sorted.
pub fn canonical_json<T: Serialize>(value: &T) -> Vec<u8> {
    let v = serde_json::to_value(value).expect("serializable");
    serde_json::to_vec(&v).expect("serializable")
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            c => out.push(c),
        }
    }
    out
}

impl ReportDocument {
    pub fn to_json(&self) -> Vec<u8> {
        serde_json::to_vec_pretty(self).expect("serializable")
    }

    pub fn to_html(&self) -> String {
        let mut h = String::new();
        h.push_str("<!DOCTYPE html>\n<html lang=\"en\">\n<head>\n<meta charset=\"utf-8\">\n");
        h.push_str(&format!(
            "<title>Burn assessment report {}</title>\n",
            escape(&self.body.session_id)
        ));
        h.push_str(
            "<style>body{font-family:sans-serif;max-width:50em;margin:2em auto}table{border-collapse:collapse;width:100%}\
th,td{border-bottom:1px solid #ccc;padding:.3em;text-align:left}.np{color:#777}</style>\n",
        );
        h.push_str("</head>\n<body>\n<h1>Burn assessment report</h1>\n");
        h.push_str(&format!(
            "<p>Session {} &middot; generated {} &middot; content hash <code>{}</code></p>\n",
            escape(&self.body.session_id),
            escape(&self.generated_at.to_rfc3339()),
            escape(&self.content_hash)
        ));
        for s in &self.body.sections {
            h.push_str(&format!(
                "<section data-section=\"{}\">\n<h2>{}</h2>\n",
                escape(&s.key),
                escape(&s.title)
            ));
            if !s.fields.is_empty() {
                h.push_str("<table>\n");
                for f in &s.fields {
                    h.push_str(&format!(
                        "<tr data-field=\"{}\"><th>{}</th><td data-value=\"{}\">{}</td><td>{}</td></tr>\n",
                        escape(&f.key),
                        escape(&f.label),
                        escape(&f.value),
                        escape(&f.value),
                        escape(f.unit.as_deref().unwrap_or(""))
                    ));
                }
                h.push_str("</table>\n");
            }
            for n in &s.notes {
                let class = if s.performed { "" } else { " class=\"np\"" };
                h.push_str(&format!("<p{class}>{}</p>\n", escape(n)));
            }
            h.push_str("</section>\n");
        }
        h.push_str("</body>\n</html>\n");
        h
    }

    /// All `(key, value)` pairs of the body.
    pub fn field_pairs(&self) -> Vec<(String, String)> {
        self.body
            .sections
            .iter()
            .flat_map(|s| s.fields.iter().map(|f| (f.key.clone(), f.value.clone())))
            .collect()
    }
}

fn unescape(s: &str) -> String {
    s.replace("&lt;", "<")
        .replace("&gt;", ">")
        .replace("&quot;", "\"")
        .replace("&#39;", "'")
        .replace("&amp;", "&")
}

/// `(key, value)` pairs read back from rendered HTML.
pub fn extract_html_fields(html: &str) -> Vec<(String, String)> {
    const ROW: &str = "<tr data-field=\"";
    const VALUE: &str = "data-value=\"";
    let mut out = Vec::new();
    let mut rest = html;
    while let Some(i) = rest.find(ROW) {
        rest = &rest[i + ROW.len()..];
        let Some((key, after)) = rest.split_once('"') else {
            break;
        };
        let Some(start) = after.find(VALUE) else {
            break;
        };
        let Some((value, after)) = after[start + VALUE.len()..].split_once('"') else {
            break;
        };
        out.push((unescape(key), unescape(value)));
        rest = after;
    }
    out
}

/// Writes `report.v<N>.json` and `report.v<N>.html` and appends the record
/// to the session, which the caller then persists.
pub fn store_report(
    store: &Store,
    session: &mut AssessmentSession,
    doc: &ReportDocument,
) -> Result<ReportRecord, ReportError> {
    let version = session.reports.last().map_or(1, |r| r.version + 1);
    let structured = store.write_artifact(session, &format!("report.v{version}.json"), &doc.to_json())?;
    let html = store.write_artifact(session, &format!("report.v{version}.html"), doc.to_html().as_bytes())?;
    let record = ReportRecord {
        version,
        structured,
        html,
        content_hash: doc.content_hash.clone(),
    };
    session.reports.push(record.clone());
    Ok(record)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clinical::IntakeRecord;
    use crate::store::{Demographics, SCHEMA_VERSION};

    fn fixtures() -> (PatientRecord, AssessmentSession) {
        let t = DateTime::parse_from_rfc3339("2026-01-02T03:04:05Z").unwrap().to_utc();
        let patient = PatientRecord {
            patient_id: "a".repeat(32),
            demographics: Demographics::default(),
            created_at: t,
        };
        let session = AssessmentSession {
            schema_version: SCHEMA_VERSION,
            session_id: "b".repeat(32),
            patient_id: patient.patient_id.clone(),
            captured_at: t,
            intake: IntakeRecord::consultation(),
            images: vec![],
            masks: vec![],
            scale_reference: None,
            mesh_input: None,
            reconstruction: None,
            metrics: None,
            confidence: None,
            alignment: None,
            recommendations: None,
            reports: vec![],
        };
        (patient, session)
    }

    #[test]
    fn intake_only_session_reports_missing_analyses() {
        let (p, s) = fixtures();
        let t = Utc::now();
        let doc = generate_report(&p, &s, None, t).unwrap();
        let not_done: Vec<_> = doc
            .body
            .sections
            .iter()
            .filter(|s| !s.performed)
            .map(|s| s.key.as_str())
            .collect();
        assert_eq!(
            not_done,
            [
                "acquisition",
                "reconstruction",
                "metrics",
                "trends",
                "recommendations",
                "confidence"
            ]
        );
        let html = doc.to_html();
        assert!(html.contains("Wound metrics: not performed"));
        assert_eq!(extract_html_fields(&html), doc.field_pairs());
    }

    #[test]
    fn hash_ignores_generation_time() {
        let (p, s) = fixtures();
        let a = generate_report(&p, &s, None, Utc::now()).unwrap();
        let b = generate_report(&p, &s, None, DateTime::from_timestamp(0, 0).unwrap()).unwrap();
        assert_eq!(a.content_hash, b.content_hash);
    }

    #[test]
    fn escaping_round_trips() {
        let s = "<a href=\"x\">'&'</a>";
        assert_eq!(unescape(&escape(s)), s);
    }
}
