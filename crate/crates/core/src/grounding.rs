//! Embodied grounding QA generation from segmentation-mask corpora.
//!
//! Each kept mask yields one sample of one of three kinds: a box answer for
//! a description, a point answer for a description, or a description for a
//! coordinate region. All geometry is emitted on the `[0, 1000]` grid using
//! `<point>[[x, y]]</point>` and `<box>[[x1, y1, x2, y2]]</box>` markup.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    self, mask_to_bbox, normalize_bbox, normalize_point, sample_point_in_mask, BBox, GeometryError,
    NormBox, NormCoord, PixelMask, NORM_MAX,
};
use crate::io::seed::{SeedScheme, StreamRng};
use crate::par;

pub const GROUNDING_SCHEMA: &str = "grounding/1";
pub const DEFAULT_QUALITY_THRESHOLD: f64 = 0.9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GroundingError {
    #[error("malformed markup: {0}")]
    MalformedMarkup(String),
    #[error("invalid mix: {0}")]
    InvalidMix(String),
    #[error("quality score {0} outside [0, 1]")]
    InvalidQuality(f64),
    #[error("no input records")]
    NoRecords,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskRecord {
    pub image_id: String,
    pub mask: PixelMask,
    pub quality_score: f64,
    pub caption: Option<String>,
    pub category: Option<String>,
}

impl MaskRecord {
    pub fn width(&self) -> u32 {
        self.mask.width()
    }

    pub fn height(&self) -> u32 {
        self.mask.height()
    }
}

/// On-disk form of a [`MaskRecord`]: the RLE interchange record plus
/// optional caption and category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskRecordLine {
    pub image_id: String,
    pub width: u32,
    pub height: u32,
    pub counts: Vec<u32>,
    pub quality_score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caption: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
}

impl TryFrom<MaskRecordLine> for MaskRecord {
    type Error = GroundingError;

    fn try_from(l: MaskRecordLine) -> Result<Self, Self::Error> {
        if !(0.0..=1.0).contains(&l.quality_score) {
            return Err(GroundingError::InvalidQuality(l.quality_score));
        }
        Ok(MaskRecord {
            mask: PixelMask::from_rle(l.width, l.height, &l.counts)?,
            image_id: l.image_id,
            quality_score: l.quality_score,
            caption: l.caption,
            category: l.category,
        })
    }
}

impl From<&MaskRecord> for MaskRecordLine {
    fn from(r: &MaskRecord) -> Self {
        MaskRecordLine {
            image_id: r.image_id.clone(),
            width: r.width(),
            height: r.height(),
            counts: r.mask.to_rle(),
            quality_score: r.quality_score,
            caption: r.caption.clone(),
            category: r.category.clone(),
        }
    }
}

/// Produces a referring description for a mask region.
pub trait CaptionProvider: Sync {
    fn describe(&self, record: &MaskRecord, bbox: &BBox) -> String;
}

/// Deterministic fallback: `"the {category} region"`.
#[derive(Debug, Clone, Copy, Default)]
pub struct TemplateCaptionProvider;

impl CaptionProvider for TemplateCaptionProvider {
    fn describe(&self, record: &MaskRecord, _bbox: &BBox) -> String {
        format!("the {} region", record.category.as_deref().unwrap_or("object"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    BoxFromText,
    PointFromText,
    TextFromCoords,
}

impl TaskKind {
    pub const ALL: [TaskKind; 3] = [TaskKind::BoxFromText, TaskKind::PointFromText, TaskKind::TextFromCoords];

    pub fn as_str(&self) -> &'static str {
        match self {
            TaskKind::BoxFromText => "box_from_text",
            TaskKind::PointFromText => "point_from_text",
            TaskKind::TextFromCoords => "text_from_coords",
        }
    }

    fn templates(&self) -> &'static [&'static str] {
        match self {
            TaskKind::BoxFromText => &[
                "Please provide the bounding box of {desc}.",
                "Locate {desc} and output its bounding box.",
                "Where is {desc}? Answer with a box.",
                "Give the box coordinates for {desc}.",
                "Output the bounding box that encloses {desc}.",
                "Detect {desc} in the image and return its box.",
            ],
            TaskKind::PointFromText => &[
                "Point to {desc}.",
                "Where is {desc}? Answer with a point.",
                "Click on {desc}.",
                "Give a point located on {desc}.",
                "Mark a pixel that belongs to {desc}.",
                "Show me where {desc} is with a point.",
            ],
            TaskKind::TextFromCoords => &[
                "What object is in the region {geom}?",
                "Describe the object inside {geom}.",
                "Which object occupies {geom}?",
                "Name the object located at {geom}.",
                "What is shown within {geom}?",
            ],
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Normalized geometry carried by a sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Geometry {
    Point(NormCoord),
    Box(NormBox),
}

impl Geometry {
    pub fn values(&self) -> Vec<u32> {
        match self {
            Geometry::Point(p) => vec![p.x, p.y],
            Geometry::Box(b) => vec![b.x1, b.y1, b.x2, b.y2],
        }
    }
}

pub fn render_markup(g: &Geometry) -> String {
    match g {
        Geometry::Point(p) => format!("<point>[[{}, {}]]</point>", p.x, p.y),
        Geometry::Box(b) => format!("<box>[[{}, {}, {}, {}]]</box>", b.x1, b.y1, b.x2, b.y2),
    }
}

/// Parse a complete markup string (surrounding whitespace and one trailing
/// period tolerated).
pub fn parse_markup(s: &str) -> Result<Geometry, GroundingError> {
    let t = s.trim();
    let t = t.strip_suffix('.').unwrap_or(t);
    let malformed = || GroundingError::MalformedMarkup(s.to_string());
    let (tag, body) = if let Some(rest) = t.strip_prefix("<point>") {
        ("point", rest.strip_suffix("</point>").ok_or_else(malformed)?)
    } else if let Some(rest) = t.strip_prefix("<box>") {
        ("box", rest.strip_suffix("</box>").ok_or_else(malformed)?)
    } else {
        return Err(malformed());
    };
    let inner = body
        .trim()
        .strip_prefix("[[")
        .and_then(|b| b.strip_suffix("]]"))
        .ok_or_else(malformed)?;
    let nums = inner
        .split(',')
        .map(|v| v.trim().parse::<u32>().map_err(|_| malformed()))
        .collect::<Result<Vec<_>, _>>()?;
    if nums.iter().any(|&v| v > NORM_MAX) {
        return Err(GroundingError::MalformedMarkup(format!("coordinate out of [0, 1000] in {s}")));
    }
    match (tag, nums.as_slice()) {
        ("point", &[x, y]) => Ok(Geometry::Point(NormCoord { x, y })),
        ("box", &[x1, y1, x2, y2]) if x1 <= x2 && y1 <= y2 => {
            Ok(Geometry::Box(NormBox { x1, y1, x2, y2 }))
        }
        _ => Err(malformed()),
    }
}

/// Locate and parse the first markup span embedded in free text.
pub fn find_markup(text: &str) -> Result<Geometry, GroundingError> {
    for (open, close) in [("<point>", "</point>"), ("<box>", "</box>")] {
        if let Some(start) = text.find(open) {
            let end = text[start..]
                .find(close)
                .ok_or_else(|| GroundingError::MalformedMarkup(text.to_string()))?;
            return parse_markup(&text[start..start + end + close.len()]);
        }
    }
    Err(GroundingError::MalformedMarkup(text.to_string()))
}

/// Per-kind sampling weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Mix {
    weights: Vec<(TaskKind, f64)>,
}

impl Mix {
    pub fn new(weights: Vec<(TaskKind, f64)>) -> Result<Self, GroundingError> {
        if weights.is_empty() {
            return Err(GroundingError::InvalidMix("empty".into()));
        }
        if weights.iter().any(|(_, w)| !w.is_finite() || *w < 0.0) {
            return Err(GroundingError::InvalidMix("negative or non-finite weight".into()));
        }
        let total: f64 = weights.iter().map(|(_, w)| w).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(GroundingError::InvalidMix(format!("weights sum to {total}, expected 1")));
        }
        Ok(Self { weights })
    }

    pub fn weight(&self, kind: TaskKind) -> f64 {
        self.weights.iter().filter(|(k, _)| *k == kind).map(|(_, w)| w).sum()
    }

    fn pick(&self, u: f64) -> TaskKind {
        let mut acc = 0.0;
        for (k, w) in &self.weights {
            acc += w;
            if u < acc {
                return *k;
            }
        }
        self.weights.iter().rev().find(|(_, w)| *w > 0.0).map(|(k, _)| *k).unwrap_or(self.weights[0].0)
    }
}

impl Default for Mix {
    fn default() -> Self {
        Mix::new(vec![
            (TaskKind::BoxFromText, 0.4),
            (TaskKind::PointFromText, 0.4),
            (TaskKind::TextFromCoords, 0.2),
        ])
        .expect("default mix is valid")
    }
}

impl FromStr for Mix {
    type Err = GroundingError;

    /// `box:0.4,point:0.4,text:0.2`
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut weights = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, w) = part
                .split_once(':')
                .ok_or_else(|| GroundingError::InvalidMix(format!("expected kind:weight, got {part}")))?;
            let kind = match k.trim() {
                "box" | "box_from_text" => TaskKind::BoxFromText,
                "point" | "point_from_text" => TaskKind::PointFromText,
                "text" | "text_from_coords" => TaskKind::TextFromCoords,
                other => return Err(GroundingError::InvalidMix(format!("unknown kind {other}"))),
            };
            let w: f64 = w
                .trim()
                .parse()
                .map_err(|_| GroundingError::InvalidMix(format!("bad weight {w}")))?;
            weights.push((kind, w));
        }
        Mix::new(weights)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PointMode {
    #[default]
    Uniform,
    Centroid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundingSample {
    pub schema: String,
    pub image_id: String,
    pub record_index: usize,
    pub task_kind: TaskKind,
    pub question: String,
    pub answer: String,
    pub norm_geometry: Vec<u32>,
}

impl GroundingSample {
    /// The text field that carries this sample's markup.
    pub fn markup_field(&self) -> &str {
        match self.task_kind {
            TaskKind::TextFromCoords => &self.question,
            _ => &self.answer,
        }
    }
}

/// Keep exactly the records with `quality_score >= threshold`, in order.
pub fn filter_by_quality(records: Vec<MaskRecord>, threshold: f64) -> Vec<MaskRecord> {
    records.into_iter().filter(|r| r.quality_score >= threshold).collect()
}

#[derive(Debug, Clone)]
pub struct GroundingConfig {
    pub seed: u64,
    pub mix: Mix,
    pub point_mode: PointMode,
    pub limit: Option<usize>,
    pub jobs: usize,
}

impl Default for GroundingConfig {
    fn default() -> Self {
        Self { seed: 0, mix: Mix::default(), point_mode: PointMode::Uniform, limit: None, jobs: 1 }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroundingOutput {
    pub samples: Vec<GroundingSample>,
    pub skipped_empty: usize,
}

/// One sample from one record, seeded by `(seed, record_index)` only.
pub fn generate_one(
    record: &MaskRecord,
    record_index: usize,
    provider: &dyn CaptionProvider,
    cfg: &GroundingConfig,
) -> Result<GroundingSample, GroundingError> {
    let mut rng = SeedScheme::new(cfg.seed).rng("grounding", record_index as u64);
    let (w, h) = (record.width(), record.height());
    let bbox = mask_to_bbox(&record.mask)?;
    let kind = cfg.mix.pick(rng.random::<f64>());
    let desc = record.caption.clone().unwrap_or_else(|| provider.describe(record, &bbox));
    let templates = kind.templates();
    let template = templates[rng.random_range(0..templates.len())];
    let (question, answer, geom) = match kind {
        TaskKind::BoxFromText => {
            let g = Geometry::Box(normalize_bbox(&bbox, w, h)?);
            (template.replace("{desc}", &desc), render_markup(&g), g)
        }
        TaskKind::PointFromText => {
            let p = pick_point(&record.mask, cfg.point_mode, &mut rng)?;
            let g = Geometry::Point(normalize_point(p, w, h)?);
            (template.replace("{desc}", &desc), render_markup(&g), g)
        }
        TaskKind::TextFromCoords => {
            let g = Geometry::Box(normalize_bbox(&bbox, w, h)?);
            (template.replace("{geom}", &render_markup(&g)), capitalize(&desc), g)
        }
    };
    Ok(GroundingSample {
        schema: GROUNDING_SCHEMA.to_string(),
        image_id: record.image_id.clone(),
        record_index,
        task_kind: kind,
        question,
        answer,
        norm_geometry: geom.values(),
    })
}

fn pick_point(
    mask: &PixelMask,
    mode: PointMode,
    rng: &mut StreamRng,
) -> Result<geometry::Point2D, GeometryError> {
    match mode {
        PointMode::Uniform => sample_point_in_mask(mask, rng),
        PointMode::Centroid => geometry::centroid_point(mask),
    }
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

/// Generate samples for `records` (indices are positions in `records`).
/// Records with empty masks are skipped and counted.
pub fn generate_grounding_samples(
    records: &[MaskRecord],
    provider: &dyn CaptionProvider,
    cfg: &GroundingConfig,
) -> Result<GroundingOutput, GroundingError> {
    let indexed: Vec<(usize, &MaskRecord)> = records.iter().enumerate().collect();
    generate_indexed(&indexed, provider, cfg)
}

/// Like [`generate_grounding_samples`] but with caller-supplied record
/// indices, so that filtering upstream does not shift the seeding.
pub fn generate_indexed(
    records: &[(usize, &MaskRecord)],
    provider: &dyn CaptionProvider,
    cfg: &GroundingConfig,
) -> Result<GroundingOutput, GroundingError> {
    if records.is_empty() {
        return Err(GroundingError::NoRecords);
    }
    let mut out = GroundingOutput::default();
    let limit = cfg.limit.unwrap_or(usize::MAX);
    for chunk in records.chunks(4096) {
        if out.samples.len() >= limit {
            break;
        }
        let results = par::map_ordered(chunk, cfg.jobs, |_, (idx, rec)| {
            generate_one(rec, *idx, provider, cfg)
        });
        for r in results {
            match r {
                Ok(s) if out.samples.len() < limit => out.samples.push(s),
                Ok(_) => {}
                Err(GroundingError::Geometry(GeometryError::EmptyMask)) => out.skipped_empty += 1,
                Err(e) => return Err(e),
            }
        }
    }
    Ok(out)
}

/// Synthetic mask corpus: filled ellipses and rectangles on random canvases.
pub fn synthetic_mask_records(seed: u64, n: usize) -> Vec<MaskRecord> {
    const CATEGORIES: [&str; 8] = ["cup", "bottle", "book", "chair", "lamp", "plant", "bowl", "phone"];
    let scheme = SeedScheme::new(seed);
    (0..n)
        .map(|i| {
            let mut rng = scheme.rng("synthetic-masks", i as u64);
            let w = rng.random_range(8..=96u32);
            let h = rng.random_range(8..=96u32);
            let cx = rng.random_range(0.0..w as f64);
            let cy = rng.random_range(0.0..h as f64);
            let rx = rng.random_range(0.5..(w as f64 / 2.0).max(1.0));
            let ry = rng.random_range(0.5..(h as f64 / 2.0).max(1.0));
            let ellipse = rng.random_bool(0.5);
            let (px, py) = (cx as u32, cy as u32);
            let mask = PixelMask::from_fn(w, h, |x, y| {
                if (x, y) == (px, py) {
                    return true;
                }
                let dx = (x as f64 - cx) / rx;
                let dy = (y as f64 - cy) / ry;
                if ellipse {
                    dx * dx + dy * dy <= 1.0
                } else {
                    dx.abs() <= 1.0 && dy.abs() <= 1.0
                }
            })
            .expect("dims are positive");
            // Scores are multiples of 1/100 so threshold tests are exact.
            let quality_score = rng.random_range(70..=100u32) as f64 / 100.0;
            MaskRecord {
                image_id: format!("syn_{i:06}"),
                mask,
                quality_score,
                caption: None,
                category: Some(CATEGORIES[rng.random_range(0..CATEGORIES.len())].to_string()),
            }
        })
        .collect()
}
