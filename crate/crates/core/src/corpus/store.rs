//! Manifest ingestion, JSON-lines persistence and the shared store.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use image::imageops::FilterType;
use serde::{Deserialize, Serialize};

use super::{
    validate_id, AnnotationResponse, CategorySource, Corpus, CorpusError, ImageLabels, ImageRecord,
    KeywordRules, TextCategory, MANIFEST_VERSION, SCHEMA_VERSION,
};
use crate::human::ClickPoint;

const IMAGES_FILE: &str = "images.jsonl";
const RESPONSES_FILE: &str = "responses.jsonl";
const IMAGES_FORMAT: &str = "xalign-images";
const RESPONSES_FORMAT: &str = "xalign-responses";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    #[serde(default)]
    pub images: Vec<ManifestImage>,
    #[serde(default)]
    pub responses: Vec<ManifestResponse>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestImage {
    pub image_id: String,
    /// Relative to the manifest's directory, or absolute.
    pub path: String,
    #[serde(default)]
    pub width: Option<u32>,
    #[serde(default)]
    pub height: Option<u32>,
    pub generator: String,
    pub labels: ImageLabels,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestResponse {
    pub response_id: String,
    pub participant_id: String,
    pub image_id: String,
    pub clicks: Vec<ClickPoint>,
    #[serde(default)]
    pub click_item_tags: Option<Vec<String>>,
    #[serde(default)]
    pub text: String,
    /// Hand-assigned categories; when absent the rule engine decides.
    #[serde(default)]
    pub text_categories: Option<BTreeSet<TextCategory>>,
    #[serde(default)]
    pub timestamp: String,
}

#[derive(Debug, Clone)]
pub struct IngestOptions {
    pub rules: KeywordRules,
    /// Downscale images whose longer side exceeds this; clicks are scaled
    /// along so they stay in stored-image pixels.
    pub max_side: Option<u32>,
}

impl Default for IngestOptions {
    fn default() -> Self {
        IngestOptions {
            rules: KeywordRules::default_rules(),
            max_side: None,
        }
    }
}

/// Validates `manifest_path`, copies images into `<corpus_dir>/images/` and
/// writes the corpus files.
pub fn ingest_manifest(
    manifest_path: &Path,
    corpus_dir: &Path,
    options: &IngestOptions,
) -> Result<Corpus, CorpusError> {
    let text = fs::read_to_string(manifest_path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            CorpusError::MissingFile(manifest_path.to_path_buf())
        } else {
            CorpusError::io(manifest_path, e)
        }
    })?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| CorpusError::schema(Some(e.line()), e.to_string()))?;
    if manifest.version != MANIFEST_VERSION {
        return Err(CorpusError::VersionMismatch {
            file: manifest_path.to_path_buf(),
            found: manifest.version,
            supported: MANIFEST_VERSION,
        });
    }
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let images_dir = corpus_dir.join("images");
    fs::create_dir_all(&images_dir).map_err(|e| CorpusError::io(&images_dir, e))?;

    let mut corpus = Corpus::empty(corpus_dir);
    // Per-image (original, stored) sizes for click rescaling.
    let mut scales = std::collections::HashMap::new();
    for m in &manifest.images {
        validate_id("image_id", &m.image_id).map_err(|msg| CorpusError::schema(None, msg))?;
        if corpus.image(&m.image_id).is_some() {
            return Err(CorpusError::DuplicateId {
                kind: "image",
                id: m.image_id.clone(),
            });
        }
        let src = base.join(&m.path);
        if !src.is_file() {
            return Err(CorpusError::MissingFile(src));
        }
        let img = image::open(&src)
            .map_err(|source| CorpusError::Image {
                path: src.clone(),
                source,
            })?
            .to_rgb8();
        let (w0, h0) = img.dimensions();
        if m.width.is_some_and(|w| w != w0) || m.height.is_some_and(|h| h != h0) {
            return Err(CorpusError::schema(
                None,
                format!(
                    "image {}: manifest says {}x{} but the file is {w0}x{h0}",
                    m.image_id,
                    m.width.map_or("?".into(), |v| v.to_string()),
                    m.height.map_or("?".into(), |v| v.to_string()),
                ),
            ));
        }
        let img = match options.max_side {
            Some(side) if w0.max(h0) > side => {
                let f = side as f64 / w0.max(h0) as f64;
                let w = ((w0 as f64 * f).round() as u32).max(1);
                let h = ((h0 as f64 * f).round() as u32).max(1);
                image::imageops::resize(&img, w, h, FilterType::Triangle)
            }
            _ => img,
        };
        let rel = format!("images/{}.png", m.image_id);
        let dst = corpus_dir.join(&rel);
        img.save(&dst).map_err(|source| CorpusError::Image {
            path: dst.clone(),
            source,
        })?;
        scales.insert(m.image_id.clone(), ((w0, h0), img.dimensions()));
        corpus.add_image(ImageRecord {
            image_id: m.image_id.clone(),
            path: rel,
            width: img.width(),
            height: img.height(),
            generator: m.generator.clone(),
            labels: m.labels,
        })?;
    }

    for m in manifest.responses {
        let Some(&((w0, h0), (w1, h1))) = scales.get(&m.image_id) else {
            return Err(CorpusError::schema(
                None,
                format!("response {}: unknown image {:?}", m.response_id, m.image_id),
            ));
        };
        // Bounds are checked in original coordinates before rescaling.
        let original = ImageRecord {
            image_id: m.image_id.clone(),
            path: String::new(),
            width: w0,
            height: h0,
            generator: String::new(),
            labels: ImageLabels::default(),
        };
        let mut r = AnnotationResponse {
            response_id: m.response_id,
            participant_id: m.participant_id,
            image_id: m.image_id,
            clicks: m.clicks,
            click_item_tags: m.click_item_tags,
            text: m.text,
            text_categories: BTreeSet::new(),
            category_source: CategorySource::Rules,
            needs_review: false,
            timestamp: m.timestamp,
        };
        let errors = r.validate(&original);
        if !errors.is_empty() {
            let detail = errors
                .iter()
                .map(|e| format!("{}: {}", e.field, e.reason))
                .collect::<Vec<_>>()
                .join("; ");
            return Err(CorpusError::schema(
                None,
                format!("response {}: {detail}", r.response_id),
            ));
        }
        if (w0, h0) != (w1, h1) {
            for c in &mut r.clicks {
                c.x = ((c.x as u64 * w1 as u64) / w0 as u64).min(w1 as u64 - 1) as u32;
                c.y = ((c.y as u64 * h1 as u64) / h0 as u64).min(h1 as u64 - 1) as u32;
            }
        }
        match m.text_categories {
            Some(cats) => {
                r.text_categories = cats;
                r.category_source = CategorySource::Manual;
            }
            None => r.apply_rules(&options.rules),
        }
        corpus.add_response(r)?;
    }
    corpus.save()?;
    log::info!(
        "ingested {} images and {} responses into {}",
        corpus.images().len(),
        corpus.responses().len(),
        corpus_dir.display()
    );
    Ok(corpus)
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
}

fn encode_jsonl<T: Serialize>(format: &str, records: &[T]) -> String {
    let header = Header {
        format: format.to_string(),
        version: SCHEMA_VERSION,
    };
    let mut out = serde_json::to_string(&header).expect("header serializes");
    out.push('\n');
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}

fn decode_jsonl<T: for<'de> Deserialize<'de>>(
    path: &Path,
    format: &str,
) -> Result<Vec<T>, CorpusError> {
    let text = fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            CorpusError::MissingFile(path.to_path_buf())
        } else {
            CorpusError::io(path, e)
        }
    })?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, first) = lines
        .next()
        .ok_or_else(|| CorpusError::schema(Some(1), format!("{}: missing header", path.display())))?;
    let header: Header = serde_json::from_str(first)
        .map_err(|e| CorpusError::schema(Some(1), format!("{}: bad header: {e}", path.display())))?;
    if header.format != format {
        return Err(CorpusError::schema(
            Some(1),
            format!("{}: expected format {format:?}, found {:?}", path.display(), header.format),
        ));
    }
    if header.version > SCHEMA_VERSION {
        return Err(CorpusError::VersionMismatch {
            file: path.to_path_buf(),
            found: header.version,
            supported: SCHEMA_VERSION,
        });
    }
    lines
        .map(|(i, line)| {
            serde_json::from_str(line)
                .map_err(|e| CorpusError::schema(Some(i + 1), format!("{}: {e}", path.display())))
        })
        .collect()
}

/// Writes through a temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CorpusError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| CorpusError::io(parent, e))?;
    }
    let mut tmp = path.as_os_str().to_os_string();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let mut f = fs::File::create(&tmp).map_err(|e| CorpusError::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| CorpusError::io(&tmp, e))?;
    f.sync_all().map_err(|e| CorpusError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| CorpusError::io(path, e))
}

pub(super) fn save_corpus(corpus: &Corpus) -> Result<(), CorpusError> {
    write_atomic(
        &corpus.root().join(IMAGES_FILE),
        encode_jsonl(IMAGES_FORMAT, corpus.images()).as_bytes(),
    )?;
    save_responses(corpus)
}

fn save_responses(corpus: &Corpus) -> Result<(), CorpusError> {
    write_atomic(
        &corpus.root().join(RESPONSES_FILE),
        encode_jsonl(RESPONSES_FORMAT, corpus.responses()).as_bytes(),
    )
}

pub(super) fn load_corpus(root: &Path) -> Result<Corpus, CorpusError> {
    let images: Vec<ImageRecord> = decode_jsonl(&root.join(IMAGES_FILE), IMAGES_FORMAT)?;
    let responses: Vec<AnnotationResponse> =
        decode_jsonl(&root.join(RESPONSES_FILE), RESPONSES_FORMAT)?;
    let mut corpus = Corpus::empty(root);
    for rec in images {
        corpus.add_image(rec)?;
    }
    for r in responses {
        corpus.add_response(r)?;
    }
    Ok(corpus)
}

/// Shared access to one corpus directory: a single writer and any number of
/// readers holding immutable snapshots.
#[derive(Debug)]
pub struct CorpusStore {
    current: RwLock<Arc<Corpus>>,
    writer: Mutex<()>,
    rules: KeywordRules,
}

impl CorpusStore {
    pub fn new(corpus: Corpus, rules: KeywordRules) -> Self {
        CorpusStore {
            current: RwLock::new(Arc::new(corpus)),
            writer: Mutex::new(()),
            rules,
        }
    }

    pub fn open(root: impl AsRef<Path>) -> Result<Self, CorpusError> {
        Ok(Self::new(Corpus::load(root)?, KeywordRules::default_rules()))
    }

    pub fn snapshot(&self) -> Arc<Corpus> {
        self.current.read().expect("corpus lock poisoned").clone()
    }

    pub fn rules(&self) -> &KeywordRules {
        &self.rules
    }

    /// Categorizes (unless manual), validates and persists one response.
    /// Either the response is on disk and visible to new snapshots, or
    /// nothing changed.
    pub fn submit(&self, mut response: AnnotationResponse) -> Result<AnnotationResponse, CorpusError> {
        let _guard = self.writer.lock().expect("writer lock poisoned");
        response.apply_rules(&self.rules);
        let mut next = (*self.snapshot()).clone();
        next.add_response(response.clone())?;
        save_responses(&next)?;
        *self.current.write().expect("corpus lock poisoned") = Arc::new(next);
        Ok(response)
    }

    pub fn set_manual_categories(
        &self,
        response_id: &str,
        categories: BTreeSet<TextCategory>,
    ) -> Result<(), CorpusError> {
        let _guard = self.writer.lock().expect("writer lock poisoned");
        let mut next = (*self.snapshot()).clone();
        next.set_manual_categories(response_id, categories)?;
        save_responses(&next)?;
        *self.current.write().expect("corpus lock poisoned") = Arc::new(next);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{Rgb, RgbImage};

    fn write_image(dir: &Path, name: &str, w: u32, h: u32) {
        RgbImage::from_fn(w, h, |x, y| Rgb([(x * 10) as u8, (y * 10) as u8, 7]))
            .save(dir.join(name))
            .unwrap();
    }

    fn manifest_json(responses: &str) -> String {
        format!(
            r#"{{
  "version": 1,
  "images": [
    {{"image_id": "a", "path": "a.png", "generator": "Flux.1",
      "labels": {{"CONTEXT": true, "ENV": false, "ANIMAL": false, "HUMAN": true,
                  "HANDS": true, "VIP": false, "SOLO": true, "PORTRAIT": false}}}}
  ],
  "responses": [{responses}]
}}"#
        )
    }

    const GOOD: &str = r#"
    {"response_id": "r1", "participant_id": "p1", "image_id": "a",
     "clicks": [{"x": 1, "y": 2}, {"x": 19, "y": 9}], "text": "the hands have six fingers",
     "timestamp": "2024-05-01T10:00:00Z"},
    {"response_id": "r2", "participant_id": "p2", "image_id": "a",
     "clicks": [{"x": 3, "y": 3}], "text": "",
     "timestamp": "2024-05-01T10:01:00Z"},
    {"response_id": "r3", "participant_id": "p3", "image_id": "a",
     "clicks": [{"x": 3, "y": 3}], "text": "the hands have six fingers", "text_categories": ["ii"]}"#;

    fn setup(responses: &str) -> (tempfile::TempDir, PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        write_image(dir.path(), "a.png", 20, 10);
        let manifest = dir.path().join("manifest.json");
        fs::write(&manifest, manifest_json(responses)).unwrap();
        (dir, manifest)
    }

    #[test]
    fn ingest_and_round_trip() {
        let (dir, manifest) = setup(GOOD);
        let out = dir.path().join("corpus");
        let c = ingest_manifest(&manifest, &out, &IngestOptions::default()).unwrap();
        assert_eq!(c.images().len(), 1);
        assert_eq!(c.images()[0].width, 20);
        assert!(out.join("images/a.png").is_file());
        let r1 = c.response("r1").unwrap();
        assert_eq!(r1.text_categories, [TextCategory::Vi].into());
        assert_eq!(r1.category_source, CategorySource::Rules);
        assert!(c.response("r2").unwrap().needs_review);
        let r3 = c.response("r3").unwrap();
        assert_eq!(r3.text_categories, [TextCategory::Ii].into());
        assert_eq!(r3.category_source, CategorySource::Manual);

        let images_before = fs::read(out.join(IMAGES_FILE)).unwrap();
        let responses_before = fs::read(out.join(RESPONSES_FILE)).unwrap();
        let loaded = Corpus::load(&out).unwrap();
        assert_eq!(loaded.images(), c.images());
        assert_eq!(loaded.responses(), c.responses());
        loaded.save().unwrap();
        assert_eq!(fs::read(out.join(IMAGES_FILE)).unwrap(), images_before);
        assert_eq!(fs::read(out.join(RESPONSES_FILE)).unwrap(), responses_before);
        assert_eq!(loaded.load_image("a").unwrap().dimensions(), (20, 10));
    }

    #[test]
    fn empty_manifest_is_valid() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = dir.path().join("m.json");
        fs::write(&manifest, r#"{"version": 1, "images": [], "responses": []}"#).unwrap();
        let c = ingest_manifest(&manifest, &dir.path().join("c"), &IngestOptions::default()).unwrap();
        assert!(c.images().is_empty());
        assert!(Corpus::load(dir.path().join("c")).unwrap().responses().is_empty());
    }

    #[test]
    fn out_of_bounds_click_names_the_response() {
        let (dir, manifest) = setup(
            r#"{"response_id": "bad-7", "participant_id": "p", "image_id": "a", "clicks": [{"x": 20, "y": 0}]}"#,
        );
        match ingest_manifest(&manifest, &dir.path().join("c"), &IngestOptions::default()) {
            Err(CorpusError::Schema { message, .. }) => assert!(message.contains("bad-7"), "{message}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn malformed_manifest_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = dir.path().join("m.json");
        fs::write(&manifest, "{\n\"version\": 1,\n\"images\": [ nope ]\n}").unwrap();
        match ingest_manifest(&manifest, &dir.path().join("c"), &IngestOptions::default()) {
            Err(CorpusError::Schema { line, .. }) => assert_eq!(line, Some(3)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_and_duplicate_images() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = dir.path().join("m.json");
        let img = r#"{"image_id": "a", "path": "a.png", "generator": "g", "labels": {"CONTEXT": true, "ENV": false, "ANIMAL": false, "HUMAN": true, "HANDS": true, "VIP": false, "SOLO": true, "PORTRAIT": false}}"#;
        fs::write(&manifest, format!(r#"{{"version": 1, "images": [{img}]}}"#)).unwrap();
        assert!(matches!(
            ingest_manifest(&manifest, &dir.path().join("c"), &IngestOptions::default()),
            Err(CorpusError::MissingFile(_))
        ));
        write_image(dir.path(), "a.png", 4, 4);
        fs::write(&manifest, format!(r#"{{"version": 1, "images": [{img}, {img}]}}"#)).unwrap();
        assert!(matches!(
            ingest_manifest(&manifest, &dir.path().join("c"), &IngestOptions::default()),
            Err(CorpusError::DuplicateId { .. })
        ));
    }

    #[test]
    fn downscaling_rescales_clicks() {
        let (dir, manifest) = setup(GOOD);
        let opts = IngestOptions {
            max_side: Some(10),
            ..IngestOptions::default()
        };
        let c = ingest_manifest(&manifest, &dir.path().join("c"), &opts).unwrap();
        assert_eq!((c.images()[0].width, c.images()[0].height), (10, 5));
        let clicks = &c.response("r1").unwrap().clicks;
        assert_eq!(clicks[0], ClickPoint { x: 0, y: 1 });
        assert_eq!(clicks[1], ClickPoint { x: 9, y: 4 });
    }

    #[test]
    fn future_version_rejected() {
        let (dir, manifest) = setup(GOOD);
        let out = dir.path().join("c");
        ingest_manifest(&manifest, &out, &IngestOptions::default()).unwrap();
        let path = out.join(RESPONSES_FILE);
        let text = fs::read_to_string(&path).unwrap().replacen("\"version\":1", "\"version\":2", 1);
        fs::write(&path, text).unwrap();
        assert!(matches!(Corpus::load(&out), Err(CorpusError::VersionMismatch { found: 2, .. })));
    }

    #[test]
    fn hand_edited_file_loads() {
        let (dir, manifest) = setup(GOOD);
        let out = dir.path().join("c");
        ingest_manifest(&manifest, &out, &IngestOptions::default()).unwrap();
        let path = out.join(RESPONSES_FILE);
        let mut text = fs::read_to_string(&path).unwrap();
        text.push_str("\n{\"response_id\":\"r9\",\"participant_id\":\"p9\",\"image_id\":\"a\",\"clicks\":[{\"x\":0,\"y\":0}]}\n");
        fs::write(&path, text).unwrap();
        let c = Corpus::load(&out).unwrap();
        assert_eq!(c.responses().len(), 4);
        assert_eq!(c.response("r9").unwrap().text, "");
    }

    #[test]
    fn store_submits_atomically_and_concurrently() {
        let (dir, manifest) = setup(GOOD);
        let out = dir.path().join("c");
        ingest_manifest(&manifest, &out, &IngestOptions::default()).unwrap();
        let store = Arc::new(CorpusStore::open(&out).unwrap());
        let before = store.snapshot();
        let handles: Vec<_> = (0..8)
            .map(|i| {
                let store = store.clone();
                std::thread::spawn(move || {
                    store.submit(AnnotationResponse {
                        response_id: format!("new-{i}"),
                        participant_id: "same".into(),
                        image_id: "a".into(),
                        clicks: vec![ClickPoint { x: 1, y: 1 }],
                        click_item_tags: None,
                        text: "blurry background".into(),
                        text_categories: BTreeSet::new(),
                        category_source: CategorySource::Rules,
                        needs_review: false,
                        timestamp: String::new(),
                    })
                })
            })
            .collect();
        let ok = handles
            .into_iter()
            .map(|h| h.join().unwrap())
            .filter(|r| r.is_ok())
            .count();
        assert_eq!(ok, 1);
        assert_eq!(before.responses().len(), 3);
        let now = store.snapshot();
        assert_eq!(now.responses().len(), 4);
        let added = now.responses().last().unwrap();
        assert_eq!(added.text_categories, [TextCategory::Iv].into());
        assert_eq!(Corpus::load(&out).unwrap().responses(), now.responses());
    }
}
