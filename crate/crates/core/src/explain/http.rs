//! Adapter for a detector served over HTTP.
//!
//! Wire format: `POST <url>` with a JSON array of base64-encoded PNG images;
//! the service answers with a JSON array of fake-class probabilities in the
//! same order.

use std::io::Cursor;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use image::{ImageFormat, RgbImage};
use serde::{Deserialize, Serialize};

use super::{Classifier, ClassifierError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpClassifierConfig {
    /// Full endpoint URL, e.g. `http://localhost:8000/predict`.
    pub url: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    /// Extra attempts after a transport error or 5xx response.
    #[serde(default = "default_retries")]
    pub retries: u32,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    /// Set to false for services that cannot take parallel requests.
    #[serde(default = "default_concurrent")]
    pub concurrent: bool,
}

fn default_timeout() -> f64 {
    30.0
}
fn default_retries() -> u32 {
    2
}
fn default_batch() -> usize {
    16
}
fn default_concurrent() -> bool {
    true
}

impl HttpClassifierConfig {
    pub fn new(url: impl Into<String>) -> Self {
        HttpClassifierConfig {
            url: url.into(),
            timeout_secs: default_timeout(),
            retries: default_retries(),
            batch_size: default_batch(),
            concurrent: default_concurrent(),
        }
    }
}

pub struct HttpClassifier {
    config: HttpClassifierConfig,
    client: reqwest::blocking::Client,
}

impl HttpClassifier {
    pub fn new(config: HttpClassifierConfig) -> Result<Self, ClassifierError> {
        if !(config.timeout_secs > 0.0) {
            return Err(ClassifierError::new("timeout_secs must be > 0"));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(config.timeout_secs))
            .build()
            .map_err(|e| ClassifierError::new(format!("http client: {e}")))?;
        Ok(HttpClassifier { config, client })
    }

    pub fn config(&self) -> &HttpClassifierConfig {
        &self.config
    }

    fn attempt(&self, body: &[String]) -> Result<Vec<f64>, (bool, ClassifierError)> {
        let resp = self
            .client
            .post(&self.config.url)
            .json(body)
            .send()
            .map_err(|e| (true, ClassifierError::new(format!("request failed: {e}"))))?;
        let status = resp.status();
        if !status.is_success() {
            let retryable = status.is_server_error();
            return Err((
                retryable,
                ClassifierError::new(format!("detector returned HTTP {status}")),
            ));
        }
        resp.json::<Vec<f64>>()
            .map_err(|e| (false, ClassifierError::new(format!("bad response body: {e}"))))
    }
}

pub fn encode_png_base64(img: &RgbImage) -> Result<String, ClassifierError> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)
        .map_err(|e| ClassifierError::new(format!("png encode: {e}")))?;
    Ok(STANDARD.encode(buf.into_inner()))
}

impl Classifier for HttpClassifier {
    fn predict(&self, batch: &[RgbImage]) -> Result<Vec<f64>, ClassifierError> {
        let body = batch
            .iter()
            .map(encode_png_base64)
            .collect::<Result<Vec<_>, _>>()?;
        let mut last_err = None;
        for attempt in 0..=self.config.retries {
            match self.attempt(&body) {
                Ok(probs) => {
                    if probs.len() != batch.len() {
                        return Err(ClassifierError::new(format!(
                            "detector returned {} probabilities for {} images",
                            probs.len(),
                            batch.len()
                        )));
                    }
                    if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
                        return Err(ClassifierError::new(format!(
                            "detector returned probability {p} outside [0, 1]"
                        )));
                    }
                    return Ok(probs);
                }
                Err((retryable, err)) => {
                    log::warn!("detector call attempt {} failed: {err}", attempt + 1);
                    last_err = Some(err);
                    if !retryable {
                        break;
                    }
                }
            }
        }
        Err(last_err.expect("at least one attempt"))
    }

    fn supports_concurrency(&self) -> bool {
        self.config.concurrent
    }

    fn max_batch(&self) -> usize {
        self.config.batch_size.max(1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    /// Minimal HTTP/1.1 detector: answers with mean red / 255 per image.
    /// The first `fail_first` requests get a 500.
    fn spawn_detector(fail_first: usize) -> (String, Arc<AtomicUsize>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let hits = Arc::new(AtomicUsize::new(0));
        let counter = hits.clone();
        std::thread::spawn(move || {
            for stream in listener.incoming() {
                let mut stream = stream.unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0usize;
                loop {
                    let mut line = String::new();
                    if reader.read_line(&mut line).unwrap() == 0 {
                        break;
                    }
                    let lower = line.to_ascii_lowercase();
                    if let Some(v) = lower.strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                    if line == "\r\n" {
                        break;
                    }
                }
                let mut body = vec![0u8; len];
                reader.read_exact(&mut body).unwrap();
                let n = counter.fetch_add(1, Ordering::SeqCst);
                let (status, payload) = if n < fail_first {
                    ("500 Internal Server Error", "oops".to_string())
                } else {
                    let imgs: Vec<String> = serde_json::from_slice(&body).unwrap();
                    let probs: Vec<f64> = imgs
                        .iter()
                        .map(|b64| {
                            let bytes = STANDARD.decode(b64).unwrap();
                            let img = image::load_from_memory(&bytes).unwrap().to_rgb8();
                            let sum: f64 = img.pixels().map(|p| p[0] as f64).sum();
                            sum / (img.width() * img.height()) as f64 / 255.0
                        })
                        .collect();
                    ("200 OK", serde_json::to_string(&probs).unwrap())
                };
                let resp = format!(
                    "HTTP/1.1 {status}\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{payload}",
                    payload.len()
                );
                stream.write_all(resp.as_bytes()).unwrap();
            }
        });
        (format!("http://{addr}/predict"), hits)
    }

    #[test]
    fn round_trips_predictions() {
        let (url, _) = spawn_detector(0);
        let c = HttpClassifier::new(HttpClassifierConfig::new(url)).unwrap();
        let a = RgbImage::from_pixel(4, 3, Rgb([255, 0, 0]));
        let b = RgbImage::from_pixel(4, 3, Rgb([51, 9, 9]));
        let p = c.predict(&[a, b]).unwrap();
        assert_eq!(p.len(), 2);
        assert!((p[0] - 1.0).abs() < 1e-12);
        assert!((p[1] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn retries_server_errors() {
        let (url, hits) = spawn_detector(2);
        let mut cfg = HttpClassifierConfig::new(url);
        cfg.retries = 2;
        let c = HttpClassifier::new(cfg).unwrap();
        let p = c.predict(&[RgbImage::from_pixel(2, 2, Rgb([0, 0, 0]))]).unwrap();
        assert_eq!(p, vec![0.0]);
        assert_eq!(hits.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn gives_up_after_retries() {
        let (url, hits) = spawn_detector(usize::MAX);
        let mut cfg = HttpClassifierConfig::new(url);
        cfg.retries = 1;
        let c = HttpClassifier::new(cfg).unwrap();
        assert!(c.predict(&[RgbImage::new(1, 1)]).is_err());
        assert_eq!(hits.load(Ordering::SeqCst), 2);
    }
}
