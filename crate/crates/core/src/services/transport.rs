//! How service requests reach a backend: a live HTTP gateway, an
//! in-process mock, and a record/replay cassette.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use base64::Engine;
use base64::engine::general_purpose::STANDARD as B64;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::ServiceError;
use crate::glb;
use crate::scene::AssetDims;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobKind {
    ReferenceImage,
    SceneParse,
    ObjectImage,
    Prune,
    Background,
    Asset3d,
    Constraints,
}

impl JobKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            JobKind::ReferenceImage => "reference_image",
            JobKind::SceneParse => "scene_parse",
            JobKind::ObjectImage => "object_image",
            JobKind::Prune => "prune",
            JobKind::Background => "background",
            JobKind::Asset3d => "asset3d",
            JobKind::Constraints => "constraints",
        }
    }
}

fn ser_b64<S: Serializer>(data: &[u8], s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&B64.encode(data))
}

fn de_b64<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
    let text = String::deserialize(d)?;
    B64.decode(text).map_err(serde::de::Error::custom)
}

fn ser_b64_opt<S: Serializer>(data: &Option<Vec<u8>>, s: S) -> Result<S::Ok, S::Error> {
    match data {
        Some(d) => s.serialize_some(&B64.encode(d)),
        None => s.serialize_none(),
    }
}

fn de_b64_opt<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Vec<u8>>, D::Error> {
    let text = Option::<String>::deserialize(d)?;
    text.map(|t| B64.decode(t).map_err(serde::de::Error::custom)).transpose()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Attachment {
    pub name: String,
    #[serde(serialize_with = "ser_b64", deserialize_with = "de_b64")]
    pub data: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ServiceRequest {
    pub kind: JobKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system: Option<String>,
    pub prompt: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub attachments: Vec<Attachment>,
    /// Structured hints for the backend, e.g. the target object size.
    #[serde(default, skip_serializing_if = "Value::is_null")]
    pub meta: Value,
}

impl ServiceRequest {
    pub fn new(kind: JobKind, prompt: impl Into<String>) -> Self {
        ServiceRequest {
            kind,
            system: None,
            prompt: prompt.into(),
            attachments: Vec::new(),
            meta: Value::Null,
        }
    }

    /// Hex SHA-256 of the request's JSON encoding.
    pub fn fingerprint(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("request serializes");
        let digest = Sha256::digest(&bytes);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ServiceResponse {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(
        default,
        skip_serializing_if = "Option::is_none",
        serialize_with = "ser_b64_opt",
        deserialize_with = "de_b64_opt"
    )]
    pub data: Option<Vec<u8>>,
}

impl ServiceResponse {
    pub fn text(text: impl Into<String>) -> Self {
        ServiceResponse {
            text: Some(text.into()),
            data: None,
        }
    }

    pub fn data(data: Vec<u8>) -> Self {
        ServiceResponse {
            text: None,
            data: Some(data),
        }
    }
}

pub trait Transport: Send + Sync {
    fn send(&self, request: &ServiceRequest) -> Result<ServiceResponse, ServiceError>;
}

pub const ENV_URL: &str = "SCENEFORGE_SERVICE_URL";
pub const ENV_KEY: &str = "SCENEFORGE_API_KEY";

/// JSON-over-HTTP gateway. Each request is POSTed to `{base}/{kind}` with a
/// bearer token; the body and reply are [`ServiceRequest`] and
/// [`ServiceResponse`] as JSON.
pub struct HttpTransport {
    base: String,
    key: String,
    agent: ureq::Agent,
}

impl HttpTransport {
    pub fn new(base: impl Into<String>, key: impl Into<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder().timeout_global(Some(timeout)).build().into();
        HttpTransport {
            base: base.into().trim_end_matches('/').to_string(),
            key: key.into(),
            agent,
        }
    }

    pub fn from_env() -> Result<Self, ServiceError> {
        let base = std::env::var(ENV_URL).map_err(|_| ServiceError::Config(format!("{ENV_URL} is not set")))?;
        let key = std::env::var(ENV_KEY).map_err(|_| ServiceError::Config(format!("{ENV_KEY} is not set")))?;
        Ok(HttpTransport::new(base, key, Duration::from_secs(600)))
    }
}

impl Transport for HttpTransport {
    fn send(&self, request: &ServiceRequest) -> Result<ServiceResponse, ServiceError> {
        let url = format!("{}/{}", self.base, request.kind.as_str());
        let reply = self
            .agent
            .post(&url)
            .header("Authorization", &format!("Bearer {}", self.key))
            .send_json(request);
        match reply {
            Ok(mut resp) => resp
                .body_mut()
                .with_config()
                .limit(512 * 1024 * 1024)
                .read_json::<ServiceResponse>()
                .map_err(|e| ServiceError::Transport(format!("reading reply from {url}: {e}"))),
            Err(ureq::Error::StatusCode(code)) if code == 429 || code >= 500 => {
                Err(ServiceError::Transport(format!("{url} answered {code}")))
            }
            Err(ureq::Error::StatusCode(code)) => Err(ServiceError::Rejected(format!("{url} answered {code}"))),
            Err(e) => Err(ServiceError::Transport(format!("{url}: {e}"))),
        }
    }
}

/// 1x1 transparent PNG.
pub const PLACEHOLDER_PNG: [u8; 67] = [
    0x89, 0x50, 0x4E, 0x47, 0x0D, 0x0A, 0x1A, 0x0A, 0x00, 0x00, 0x00, 0x0D, 0x49, 0x48, 0x44, 0x52, 0x00, 0x00, 0x00,
    0x01, 0x00, 0x00, 0x00, 0x01, 0x08, 0x06, 0x00, 0x00, 0x00, 0x1F, 0x15, 0xC4, 0x89, 0x00, 0x00, 0x00, 0x0D, 0x49,
    0x44, 0x41, 0x54, 0x78, 0x9C, 0x63, 0x00, 0x01, 0x00, 0x00, 0x05, 0x00, 0x01, 0x0D, 0x0A, 0x2D, 0xB4, 0x00, 0x00,
    0x00, 0x00, 0x49, 0x45, 0x4E, 0x44, 0xAE, 0x42, 0x60, 0x82,
];

#[derive(Clone, Debug)]
pub enum MockReply {
    Text(String),
    Data(Vec<u8>),
    /// Retriable transport failure.
    Fail(String),
    /// Permanent rejection.
    Reject(String),
}

struct Rule {
    kind: JobKind,
    needle: String,
    replies: Vec<MockReply>,
    used: AtomicUsize,
}

/// Deterministic offline backend.
///
/// Rules are matched in insertion order by kind and a substring of the
/// prompt or meta. A rule with several replies hands them out in turn and
/// then repeats the last one. Unmatched requests get defaults: a
/// placeholder PNG for images, the configured scene document for parsing,
/// an empty prune list, and a box GLB sized from `meta.size` times
/// `asset_scale` for assets.
pub struct MockTransport {
    rules: Vec<Rule>,
    scene_json: String,
    constraints_json: String,
    pub asset_scale: f64,
    pub delay: Duration,
    log: Mutex<Vec<ServiceRequest>>,
    inflight: AtomicUsize,
    peak: AtomicUsize,
}

impl Default for MockTransport {
    fn default() -> Self {
        MockTransport::new(crate::fixtures::BEDROOM_SCENE, crate::fixtures::BEDROOM_CONSTRAINTS)
    }
}

impl MockTransport {
    pub fn new(scene_json: impl Into<String>, constraints_json: impl Into<String>) -> Self {
        MockTransport {
            rules: Vec::new(),
            scene_json: scene_json.into(),
            constraints_json: constraints_json.into(),
            asset_scale: 1.0,
            delay: Duration::ZERO,
            log: Mutex::new(Vec::new()),
            inflight: AtomicUsize::new(0),
            peak: AtomicUsize::new(0),
        }
    }

    pub fn on(mut self, kind: JobKind, needle: impl Into<String>, replies: Vec<MockReply>) -> Self {
        self.rules.push(Rule {
            kind,
            needle: needle.into(),
            replies,
            used: AtomicUsize::new(0),
        });
        self
    }

    pub fn requests(&self) -> Vec<ServiceRequest> {
        self.log.lock().expect("log lock").clone()
    }

    /// Highest number of simultaneous `send` calls observed.
    pub fn peak_inflight(&self) -> usize {
        self.peak.load(Ordering::SeqCst)
    }

    fn default_reply(&self, request: &ServiceRequest) -> MockReply {
        match request.kind {
            JobKind::ReferenceImage | JobKind::ObjectImage | JobKind::Background => {
                MockReply::Data(PLACEHOLDER_PNG.to_vec())
            }
            JobKind::SceneParse => MockReply::Text(self.scene_json.clone()),
            JobKind::Constraints => MockReply::Text(self.constraints_json.clone()),
            JobKind::Prune => MockReply::Text(r#"{"filenames": []}"#.into()),
            JobKind::Asset3d => {
                let size: Option<[f64; 3]> = serde_json::from_value(request.meta["size"].clone()).ok();
                let [x, y, z] = size.unwrap_or([1.0, 1.0, 1.0]);
                let s = self.asset_scale;
                MockReply::Data(glb::box_asset(AssetDims {
                    x: x * s,
                    y: y * s,
                    z: z * s,
                }))
            }
        }
    }
}

impl Transport for MockTransport {
    fn send(&self, request: &ServiceRequest) -> Result<ServiceResponse, ServiceError> {
        let now = self.inflight.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak.fetch_max(now, Ordering::SeqCst);
        self.log.lock().expect("log lock").push(request.clone());
        if !self.delay.is_zero() {
            std::thread::sleep(self.delay);
        }
        let meta = request.meta.to_string();
        let rule = self
            .rules
            .iter()
            .find(|r| r.kind == request.kind && (request.prompt.contains(&r.needle) || meta.contains(&r.needle)));
        let reply = match rule {
            Some(r) if !r.replies.is_empty() => {
                let i = r.used.fetch_add(1, Ordering::SeqCst).min(r.replies.len() - 1);
                r.replies[i].clone()
            }
            _ => self.default_reply(request),
        };
        self.inflight.fetch_sub(1, Ordering::SeqCst);
        match reply {
            MockReply::Text(t) => Ok(ServiceResponse::text(t)),
            MockReply::Data(d) => Ok(ServiceResponse::data(d)),
            MockReply::Fail(m) => Err(ServiceError::Transport(m)),
            MockReply::Reject(m) => Err(ServiceError::Rejected(m)),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Recording {
    request: ServiceRequest,
    response: ServiceResponse,
}

/// Record/replay wrapper keyed by request fingerprint. With an inner
/// transport every live reply is written to `<dir>/<fingerprint>.json`;
/// without one, only recorded requests can be answered.
pub struct Cassette {
    dir: PathBuf,
    inner: Option<Arc<dyn Transport>>,
    hits: Mutex<HashMap<String, usize>>,
}

impl Cassette {
    pub fn record(dir: impl Into<PathBuf>, inner: Arc<dyn Transport>) -> Self {
        Cassette {
            dir: dir.into(),
            inner: Some(inner),
            hits: Mutex::new(HashMap::new()),
        }
    }

    pub fn replay(dir: impl Into<PathBuf>) -> Self {
        Cassette {
            dir: dir.into(),
            inner: None,
            hits: Mutex::new(HashMap::new()),
        }
    }

    fn path(&self, fingerprint: &str) -> PathBuf {
        self.dir.join(format!("{fingerprint}.json"))
    }

    /// Number of requests answered from disk, by fingerprint.
    pub fn replayed(&self) -> HashMap<String, usize> {
        self.hits.lock().expect("hits lock").clone()
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), ServiceError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| ServiceError::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| ServiceError::io(path, e))
}

impl Transport for Cassette {
    fn send(&self, request: &ServiceRequest) -> Result<ServiceResponse, ServiceError> {
        let fp = request.fingerprint();
        let path = self.path(&fp);
        if let Ok(text) = fs::read_to_string(&path) {
            let rec: Recording = serde_json::from_str(&text)
                .map_err(|e| ServiceError::Config(format!("corrupt recording {}: {e}", path.display())))?;
            *self.hits.lock().expect("hits lock").entry(fp).or_default() += 1;
            return Ok(rec.response);
        }
        let Some(inner) = &self.inner else {
            return Err(ServiceError::Config(format!(
                "no recording for {} request {fp}",
                request.kind.as_str()
            )));
        };
        let response = inner.send(request)?;
        let rec = Recording {
            request: request.clone(),
            response,
        };
        let bytes = serde_json::to_vec_pretty(&rec).expect("recording serializes");
        write_file(&path, &bytes)?;
        Ok(rec.response)
    }
}

pub(crate) fn write_output(path: &Path, bytes: &[u8]) -> Result<(), ServiceError> {
    write_file(path, bytes)
}
