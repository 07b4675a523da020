//! Seeded synthetic corpus: images, labels, survey responses and simulated
//! external saliency maps, for smoke runs and end-to-end tests.

use std::fs;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{ImageLabels, Manifest, ManifestImage, ManifestResponse, TextCategory, MANIFEST_VERSION};
use crate::human::ClickPoint;
use crate::mask::io::{write_csv, MaskIoError, MaskMeta, META_VERSION};
use crate::mask::{Mask, MaskError};

pub const GENERATORS: [&str; 4] = ["DALL-E 2", "SDXL 1.0", "Midjourney 5&6", "Flux.1"];
/// Detector id used for every synthetic mask.
pub const SYNTHETIC_DETECTOR: &str = "toy";
/// Methods whose masks are simulated as external files.
pub const EXTERNAL_METHODS: [&str; 2] = ["gradcam", "integrated_gradients"];

#[derive(Debug, Error)]
pub enum SyntheticError {
    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot write image {}: {source}", path.display())]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error(transparent)]
    MaskIo(#[from] MaskIoError),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error("invalid configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub seed: u64,
    pub images: usize,
    pub participants: usize,
    /// Side length of the square images.
    pub size: u32,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            seed: 7,
            images: 24,
            participants: 12,
            size: 64,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticOutput {
    pub manifest: PathBuf,
    /// Directory of simulated external masks, laid out as
    /// `<detector>/<method>/<image>.csv` with sidecars.
    pub external_masks: PathBuf,
    pub images: usize,
    pub responses: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Kind {
    Human,
    Animal,
    Object,
}

#[derive(Debug, Clone, Copy)]
struct Subject {
    kind: Kind,
    cx: f64,
    cy: f64,
    rx: f64,
    ry: f64,
    color: [u8; 3],
}

impl Subject {
    fn face(&self) -> (f64, f64) {
        (self.cx, self.cy - self.ry * 0.75)
    }

    fn hands(&self) -> [(f64, f64); 2] {
        [
            (self.cx - self.rx * 1.1, self.cy + self.ry * 0.1),
            (self.cx + self.rx * 1.1, self.cy + self.ry * 0.1),
        ]
    }
}

struct Scene {
    subjects: Vec<Subject>,
    labels: ImageLabels,
}

fn inside(x: f64, y: f64, cx: f64, cy: f64, rx: f64, ry: f64) -> bool {
    ((x - cx) / rx).powi(2) + ((y - cy) / ry).powi(2) <= 1.0
}

fn make_scene(rng: &mut ChaCha8Rng, size: f64) -> Scene {
    let n = rng.random_range(1..=3);
    let mut subjects = Vec::with_capacity(n);
    for _ in 0..n {
        let kind = match rng.random_range(0..10) {
            0..=4 => Kind::Human,
            5..=6 => Kind::Animal,
            _ => Kind::Object,
        };
        let rx = size * rng.random_range(0.08..0.16);
        let ry = rx * rng.random_range(1.0..1.6);
        let margin = rx.max(ry) * 1.3;
        subjects.push(Subject {
            kind,
            cx: rng.random_range(margin..size - margin),
            cy: rng.random_range(margin..size - margin),
            rx,
            ry,
            color: match kind {
                Kind::Human => [rng.random_range(180..240), rng.random_range(130..180), 110],
                Kind::Animal => [120, rng.random_range(70..110), 40],
                Kind::Object => [rng.random_range(20..80), 90, rng.random_range(160..240)],
            },
        });
    }
    let humans = subjects.iter().filter(|s| s.kind == Kind::Human).count();
    let labels = ImageLabels {
        context: rng.random_bool(0.5),
        env: rng.random_bool(0.4),
        animal: subjects.iter().any(|s| s.kind == Kind::Animal),
        human: humans > 0,
        hands: humans > 0 && rng.random_bool(0.6),
        vip: humans > 0 && rng.random_bool(0.25),
        solo: n == 1,
        portrait: humans == 1 && n == 1,
    };
    Scene { subjects, labels }
}

fn render(scene: &Scene, generator: usize, size: u32, rng: &mut ChaCha8Rng) -> RgbImage {
    let base: [[u8; 3]; 4] = [[200, 190, 170], [90, 120, 160], [60, 70, 60], [150, 150, 190]];
    let b = base[generator % base.len()];
    let s = size as f64;
    let noise: Vec<i16> = (0..size * size).map(|_| rng.random_range(-6..=6)).collect();
    RgbImage::from_fn(size, size, |x, y| {
        let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
        let shade = (fy / s * 40.0) as i16;
        let mut px = [b[0] as i16 - shade, b[1] as i16 - shade / 2, b[2] as i16];
        for sub in &scene.subjects {
            if inside(fx, fy, sub.cx, sub.cy, sub.rx, sub.ry) {
                px = sub.color.map(|c| c as i16);
            }
            if sub.kind == Kind::Human {
                let (hx, hy) = sub.face();
                if inside(fx, fy, hx, hy, sub.rx * 0.55, sub.rx * 0.55) {
                    px = [235, 200, 170];
                }
                for (hx, hy) in sub.hands() {
                    if inside(fx, fy, hx, hy, sub.rx * 0.3, sub.rx * 0.3) {
                        px = [225, 185, 150];
                    }
                }
            }
        }
        let n = noise[(y * size + x) as usize];
        Rgb(px.map(|c| (c + n).clamp(0, 255) as u8))
    })
}

const PHRASES: [(&str, &[&str]); 7] = [
    ("face", &["his face is deformed", "the eyes have strange teeth around them", "everything is too perfect"]),
    ("hands", &["the hands have six fingers", "the fingers are merged together"]),
    ("human", &["the skin texture looks plastic", "everything is too perfect", "the pope would never wear that"]),
    ("animal", &["the cat is merged with the sofa", "a horse on the moon is unusual"]),
    ("other_object", &["the letters are illegible", "the car has an impossible design", "the water defies gravity"]),
    ("background", &["blurry background and weird text on the sign", "the reflection in the window is wrong"]),
    ("none", &["", "looks fake to me"]),
];

fn phrase(rng: &mut ChaCha8Rng, tag: &str) -> &'static str {
    let list = PHRASES.iter().find(|(t, _)| *t == tag).map(|(_, l)| *l).unwrap_or(&[""]);
    list[rng.random_range(0..list.len())]
}

fn pick_click(rng: &mut ChaCha8Rng, scene: &Scene, size: u32) -> (ClickPoint, &'static str) {
    let jitter = |rng: &mut ChaCha8Rng, v: f64| {
        (v + rng.random_range(-3.0..=3.0)).round().clamp(0.0, size as f64 - 1.0) as u32
    };
    if rng.random_bool(0.15) {
        let p = ClickPoint {
            x: rng.random_range(0..size),
            y: rng.random_range(0..size / 4),
        };
        return (p, "background");
    }
    let sub = scene.subjects[rng.random_range(0..scene.subjects.len())];
    let ((x, y), tag) = match sub.kind {
        Kind::Human => match rng.random_range(0..20) {
            0..=8 => (sub.face(), "face"),
            9..=13 => (sub.hands()[rng.random_range(0..2)], "hands"),
            _ => ((sub.cx, sub.cy), "human"),
        },
        Kind::Animal => ((sub.cx, sub.cy), "animal"),
        Kind::Object => ((sub.cx, sub.cy), "other_object"),
    };
    (
        ClickPoint {
            x: jitter(rng, x),
            y: jitter(rng, y),
        },
        tag,
    )
}

fn gaussian_blobs(scene: &Scene, size: u32, rng: &mut ChaCha8Rng, sharp: bool) -> Vec<f64> {
    let s = size as usize;
    let mut out = vec![0.0; s * s];
    for sub in &scene.subjects {
        let mut centers = vec![(sub.cx, sub.cy, sub.rx.max(sub.ry))];
        if sub.kind == Kind::Human {
            let (fx, fy) = sub.face();
            centers.push((fx, fy, sub.rx * 0.6));
        }
        for (cx, cy, r) in centers {
            let sigma = if sharp { r * 0.5 } else { r * 1.2 };
            for y in 0..s {
                for x in 0..s {
                    let d2 = (x as f64 + 0.5 - cx).powi(2) + (y as f64 + 0.5 - cy).powi(2);
                    out[y * s + x] += (-d2 / (2.0 * sigma * sigma)).exp();
                }
            }
        }
    }
    for v in &mut out {
        *v = (*v + rng.random_range(0.0..0.05)).max(0.0);
    }
    out
}

/// Writes images, `manifest.json` and simulated external masks under `dir`.
pub fn generate(dir: &Path, cfg: &SyntheticConfig) -> Result<SyntheticOutput, SyntheticError> {
    if cfg.images == 0 || cfg.participants == 0 || cfg.size < 16 {
        return Err(SyntheticError::Config(
            "need at least one image and participant and a size of at least 16".into(),
        ));
    }
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| SyntheticError::Io { path, source }
    };
    let img_dir = dir.join("raw_images");
    fs::create_dir_all(&img_dir).map_err(io(&img_dir))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut images = Vec::new();
    let mut scenes = Vec::new();
    for i in 0..cfg.images {
        let generator = i % GENERATORS.len();
        let scene = make_scene(&mut rng, cfg.size as f64);
        let img = render(&scene, generator, cfg.size, &mut rng);
        let image_id = format!("syn-{i:03}");
        let path = img_dir.join(format!("{image_id}.png"));
        img.save(&path).map_err(|source| SyntheticError::Image {
            path: path.clone(),
            source,
        })?;
        images.push(ManifestImage {
            image_id,
            path: format!("raw_images/{}", path.file_name().unwrap().to_string_lossy()),
            width: Some(cfg.size),
            height: Some(cfg.size),
            generator: GENERATORS[generator].to_string(),
            labels: scene.labels,
        });
        scenes.push(scene);
    }

    let mut responses = Vec::new();
    for p in 0..cfg.participants {
        for (i, scene) in scenes.iter().enumerate() {
            let n_clicks = if rng.random_bool(0.7) { 2 } else { 1 };
            let mut clicks = Vec::new();
            let mut tags = Vec::new();
            for _ in 0..n_clicks {
                let (c, t) = pick_click(&mut rng, scene, cfg.size);
                clicks.push(c);
                tags.push(t.to_string());
            }
            let text = if rng.random_bool(0.05) {
                phrase(&mut rng, "none")
            } else {
                phrase(&mut rng, &tags[0])
            };
            let manual = rng.random_bool(0.05).then(|| {
                [TextCategory::ALL[rng.random_range(0..TextCategory::ALL.len())]].into()
            });
            responses.push(ManifestResponse {
                response_id: format!("r-{p:02}-{i:03}"),
                participant_id: format!("participant-{p:02}"),
                image_id: images[i].image_id.clone(),
                clicks,
                click_item_tags: Some(tags),
                text: text.to_string(),
                text_categories: manual,
                timestamp: format!("2024-06-{:02}T{:02}:{:02}:00Z", 1 + p % 28, (i / 60) % 24, i % 60),
            });
        }
    }

    let external = dir.join("external_masks");
    for (method, sharp) in [(EXTERNAL_METHODS[0], false), (EXTERNAL_METHODS[1], true)] {
        for (img, scene) in images.iter().zip(&scenes) {
            let values = gaussian_blobs(scene, cfg.size, &mut rng, sharp);
            let path = external
                .join(SYNTHETIC_DETECTOR)
                .join(method)
                .join(format!("{}.csv", img.image_id));
            write_csv(&path, &Mask::new(cfg.size as usize, cfg.size as usize, values)?)?;
            MaskMeta {
                version: META_VERSION,
                image_id: img.image_id.clone(),
                method_id: method.to_string(),
                detector_id: SYNTHETIC_DETECTOR.to_string(),
                width: cfg.size as usize,
                height: cfg.size as usize,
                pipeline: Vec::new(),
            }
            .write(&MaskMeta::sidecar_path(&path))?;
        }
    }

    let manifest = Manifest {
        version: MANIFEST_VERSION,
        images,
        responses,
    };
    let manifest_path = dir.join("manifest.json");
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    fs::write(&manifest_path, text).map_err(io(&manifest_path))?;
    Ok(SyntheticOutput {
        manifest: manifest_path,
        external_masks: external,
        images: manifest.images.len(),
        responses: manifest.responses.len(),
    })
}
