//! Clients for the generation stages: reference image, scene parsing,
//! per-object images, redundancy pruning, background texture and 3D assets.
//!
//! Every call goes through a [`Transport`]. Jobs are recorded in a JSON
//! ledger under the scene directory so an interrupted run can resume:
//! a job whose request fingerprint matches a finished entry (and whose
//! output is still on disk) is not sent again.

pub mod transport;

use std::collections::{BTreeMap, VecDeque};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use log::{info, warn};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::ServiceError;
use crate::glb;
use crate::prompts;
use crate::scene::{parse_scene, rescale_spec_dims, validate_scene, AssetDims, DiagnosticKind, ObjectSpec, Scene};

pub use transport::{
    Attachment, Cassette, HttpTransport, JobKind, MockReply, MockTransport, ServiceRequest, ServiceResponse,
    Transport, PLACEHOLDER_PNG,
};

pub const LEDGER_FILE: &str = "ledger.json";
pub const IMAGES_DIR: &str = "images";
pub const ASSETS_DIR: &str = "assets";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Pending,
    Running,
    Done,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationJob {
    pub key: String,
    pub kind: JobKind,
    pub inputs: Vec<String>,
    pub fingerprint: String,
    /// Output file relative to the scene directory, for file-producing jobs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
    /// Raw reply, for text-producing jobs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<String>,
    pub status: JobStatus,
    pub attempts: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct JobLedger {
    pub jobs: BTreeMap<String, GenerationJob>,
}

impl JobLedger {
    pub fn load(path: &Path) -> Result<Self, ServiceError> {
        match fs::read_to_string(path) {
            Ok(text) => serde_json::from_str(&text)
                .map_err(|e| ServiceError::Config(format!("corrupt ledger {}: {e}", path.display()))),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(JobLedger::default()),
            Err(e) => Err(ServiceError::io(path, e)),
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), ServiceError> {
        let text = serde_json::to_string_pretty(self).expect("ledger serializes");
        let tmp = path.with_extension("json.tmp");
        transport::write_output(&tmp, text.as_bytes())?;
        fs::rename(&tmp, path).map_err(|e| ServiceError::io(path, e))
    }

    pub fn done(&self) -> impl Iterator<Item = &GenerationJob> {
        self.jobs.values().filter(|j| j.status == JobStatus::Done)
    }
}

#[derive(Clone, Debug)]
pub struct ServiceConfig {
    /// Upper bound on simultaneous generation jobs.
    pub max_inflight: usize,
    /// Attempts per request for retriable transport failures.
    pub attempts: u32,
    /// First backoff delay; doubled after each failed attempt.
    pub backoff: Duration,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            max_inflight: 4,
            attempts: 3,
            backoff: Duration::from_millis(250),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ObjectImages {
    pub images: BTreeMap<String, PathBuf>,
    pub failed: BTreeMap<String, String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedAsset {
    /// Path relative to the scene directory.
    pub asset_ref: String,
    pub measured: AssetDims,
    /// The input spec rescaled to the asset's proportions, with `asset_ref` set.
    pub spec: ObjectSpec,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GeneratedAssets {
    pub assets: BTreeMap<String, GeneratedAsset>,
    pub failed: BTreeMap<String, String>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PruneOutcome {
    pub delete: Vec<String>,
    /// Names the service returned that were not among the inputs.
    pub dropped: Vec<String>,
}

/// File-system safe form of an object id.
pub fn file_stem(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '-' || c == '.' { c } else { '_' })
        .collect()
}

/// Strips a Markdown code fence around a JSON reply, if present.
pub fn strip_fence(text: &str) -> &str {
    let t = text.trim();
    let Some(rest) = t.strip_prefix("```") else {
        return t;
    };
    let rest = rest.trim_start_matches(|c: char| c.is_ascii_alphabetic());
    rest.strip_suffix("```").unwrap_or(rest).trim()
}

fn read(path: &Path) -> Result<Vec<u8>, ServiceError> {
    fs::read(path).map_err(|e| ServiceError::io(path, e))
}

fn attachment(path: &Path) -> Result<Attachment, ServiceError> {
    Ok(Attachment {
        name: path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
        data: read(path)?,
    })
}

fn short(fingerprint: &str) -> &str {
    &fingerprint[..8.min(fingerprint.len())]
}

pub struct Services {
    transport: Arc<dyn Transport>,
    config: ServiceConfig,
    root: PathBuf,
    ledger: Mutex<JobLedger>,
    skipped: AtomicUsize,
}

impl Services {
    /// Opens (or starts) the job ledger in `root`.
    pub fn new(root: impl Into<PathBuf>, transport: Arc<dyn Transport>, config: ServiceConfig) -> Result<Self, ServiceError> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| ServiceError::io(&root, e))?;
        let ledger = JobLedger::load(&root.join(LEDGER_FILE))?;
        Ok(Services {
            transport,
            config,
            root,
            ledger: Mutex::new(ledger),
            skipped: AtomicUsize::new(0),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn transport(&self) -> Arc<dyn Transport> {
        self.transport.clone()
    }

    pub fn ledger(&self) -> JobLedger {
        self.ledger.lock().expect("ledger lock").clone()
    }

    /// Jobs answered from the ledger instead of the transport.
    pub fn skipped(&self) -> usize {
        self.skipped.load(Ordering::SeqCst)
    }

    fn record(&self, job: GenerationJob) -> Result<(), ServiceError> {
        let mut ledger = self.ledger.lock().expect("ledger lock");
        ledger.jobs.insert(job.key.clone(), job);
        ledger.save(&self.root.join(LEDGER_FILE))
    }

    fn finished(&self, key: &str, fingerprint: &str) -> Option<GenerationJob> {
        let ledger = self.ledger.lock().expect("ledger lock");
        let job = ledger.jobs.get(key)?;
        let output_ok = job.output.as_ref().is_none_or(|o| self.root.join(o).exists());
        (job.status == JobStatus::Done && job.fingerprint == fingerprint && output_ok).then(|| job.clone())
    }

    /// Sends with retries and exponential backoff for retriable failures.
    pub fn send(&self, request: &ServiceRequest) -> Result<(ServiceResponse, u32), ServiceError> {
        let attempts = self.config.attempts.max(1);
        let mut delay = self.config.backoff;
        for attempt in 1..=attempts {
            match self.transport.send(request) {
                Ok(r) => return Ok((r, attempt)),
                Err(e) if e.is_retriable() && attempt < attempts => {
                    warn!("{} attempt {attempt} failed: {e}", request.kind.as_str());
                    std::thread::sleep(delay);
                    delay *= 2;
                }
                Err(e) => return Err(e),
            }
        }
        unreachable!("loop returns on the last attempt")
    }

    fn job(&self, key: &str, kind: JobKind, inputs: Vec<String>, fingerprint: &str) -> GenerationJob {
        GenerationJob {
            key: key.to_string(),
            kind,
            inputs,
            fingerprint: fingerprint.to_string(),
            output: None,
            response: None,
            status: JobStatus::Running,
            attempts: 0,
            error: None,
        }
    }

    fn fail(&self, mut job: GenerationJob, error: ServiceError) -> ServiceError {
        job.status = JobStatus::Failed;
        job.error = Some(error.to_string());
        if let Err(e) = self.record(job) {
            warn!("could not update ledger: {e}");
        }
        error
    }

    /// Runs a job whose reply carries file data written to `output`.
    fn file_job(
        &self,
        key: &str,
        inputs: Vec<String>,
        request: &ServiceRequest,
        output: &str,
        check: &dyn Fn(&[u8]) -> Result<(), String>,
    ) -> Result<PathBuf, ServiceError> {
        let fp = request.fingerprint();
        let path = self.root.join(output);
        if self.finished(key, &fp).is_some() {
            self.skipped.fetch_add(1, Ordering::SeqCst);
            return Ok(path);
        }
        let mut job = self.job(key, request.kind, inputs, &fp);
        job.output = Some(output.to_string());
        self.record(job.clone())?;
        let (reply, attempts) = match self.send(request) {
            Ok(r) => r,
            Err(e) => return Err(self.fail(job, e)),
        };
        job.attempts = attempts;
        let Some(data) = reply.data else {
            return Err(self.fail(job, ServiceError::InvalidResponse {
                message: "reply carries no data".into(),
                raw: reply.text.unwrap_or_default(),
            }));
        };
        if let Err(message) = check(&data) {
            return Err(self.fail(job, ServiceError::Asset(message)));
        }
        if let Err(e) = transport::write_output(&path, &data) {
            return Err(self.fail(job, e));
        }
        job.status = JobStatus::Done;
        self.record(job)?;
        Ok(path)
    }

    /// Runs a job whose text reply must pass `validate`. An invalid reply
    /// gets exactly one corrective re-request carrying the diagnostic.
    fn text_job<T>(
        &self,
        key: &str,
        inputs: Vec<String>,
        request: &ServiceRequest,
        validate: &dyn Fn(&str) -> Result<T, String>,
    ) -> Result<T, ServiceError> {
        let fp = request.fingerprint();
        if let Some(done) = self.finished(key, &fp) {
            if let Ok(v) = validate(done.response.as_deref().unwrap_or_default()) {
                self.skipped.fetch_add(1, Ordering::SeqCst);
                return Ok(v);
            }
        }
        let mut job = self.job(key, request.kind, inputs, &fp);
        self.record(job.clone())?;
        let mut current = request.clone();
        let mut last_error = String::new();
        for round in 0..2 {
            let (reply, attempts) = match self.send(&current) {
                Ok(r) => r,
                Err(e) => return Err(self.fail(job, e)),
            };
            job.attempts += attempts;
            let raw = reply.text.unwrap_or_default();
            match validate(&raw) {
                Ok(v) => {
                    job.status = JobStatus::Done;
                    job.response = Some(raw);
                    self.record(job)?;
                    return Ok(v);
                }
                Err(diagnostic) if round == 0 => {
                    warn!("{key}: invalid reply, asking again: {diagnostic}");
                    current.prompt = format!(
                        "{}\n\nYour previous reply could not be used: {diagnostic}\nReply again with only the corrected JSON.",
                        request.prompt
                    );
                    last_error = diagnostic;
                }
                Err(diagnostic) => {
                    let err = ServiceError::InvalidResponse {
                        message: format!("{diagnostic} (first reply: {last_error})"),
                        raw,
                    };
                    return Err(self.fail(job, err));
                }
            }
        }
        unreachable!("second round always returns")
    }

    /// Bounded worker pool; results come back in input order.
    pub fn run_parallel<T: Send, R: Send>(&self, items: Vec<T>, work: impl Fn(T) -> R + Sync) -> Vec<R> {
        let n = items.len();
        let queue: Mutex<VecDeque<(usize, T)>> = Mutex::new(items.into_iter().enumerate().collect());
        let results: Mutex<Vec<Option<R>>> = Mutex::new((0..n).map(|_| None).collect());
        let workers = self.config.max_inflight.max(1).min(n.max(1));
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let next = queue.lock().expect("queue lock").pop_front();
                    let Some((i, item)) = next else { break };
                    let r = work(item);
                    results.lock().expect("results lock")[i] = Some(r);
                });
            }
        });
        results
            .into_inner()
            .expect("results lock")
            .into_iter()
            .map(|r| r.expect("every item processed"))
            .collect()
    }

    pub fn generate_reference_image(&self, description: &str, style: &str) -> Result<PathBuf, ServiceError> {
        if description.trim().is_empty() {
            return Err(ServiceError::Precondition("scene description is empty".into()));
        }
        let request = ServiceRequest::new(JobKind::ReferenceImage, prompts::reference_image(description, style));
        self.file_job(
            "reference_image",
            vec![description.to_string(), style.to_string()],
            &request,
            &format!("{IMAGES_DIR}/reference.png"),
            &|_| Ok(()),
        )
    }

    /// Asks for the object list of the scene and validates it as a scene
    /// document. Size warnings pass; structural problems and empty
    /// descriptions trigger the corrective re-request.
    pub fn parse_scene_from_inputs(&self, description: &str, style: &str, reference: &Path) -> Result<Scene, ServiceError> {
        if !reference.is_file() {
            return Err(ServiceError::Precondition(format!(
                "reference image {} is not available",
                reference.display()
            )));
        }
        let mut request = ServiceRequest::new(
            JobKind::SceneParse,
            format!("Scene description: {description}\nStyle: {style}"),
        );
        request.system = Some(prompts::scene_parse());
        request.attachments.push(attachment(reference)?);
        let validate = |raw: &str| -> Result<Scene, String> {
            let mut scene = parse_scene(strip_fence(raw)).map_err(|e| e.to_string())?;
            let fatal: Vec<String> = validate_scene(&scene)
                .into_iter()
                .filter(|d| d.kind != DiagnosticKind::SizeOutOfRange)
                .map(|d| d.to_string())
                .collect();
            if !fatal.is_empty() {
                return Err(fatal.join("; "));
            }
            if scene.description.is_empty() {
                scene.description = description.to_string();
            }
            if scene.style.is_empty() {
                scene.style = style.to_string();
            }
            Ok(scene)
        };
        let scene = self.text_job("scene_parse", vec![description.to_string(), style.to_string()], &request, &validate)?;
        for d in validate_scene(&scene) {
            warn!("{d}");
        }
        Ok(scene)
    }

    /// One object image; `variant` distinguishes regenerated images.
    pub fn generate_object_image(
        &self,
        spec: &ObjectSpec,
        reference: Option<&Path>,
        style: &str,
        variant: Option<&str>,
    ) -> Result<PathBuf, ServiceError> {
        let obj_name = match variant {
            Some(v) => format!("{} ({v})", spec.name),
            None => spec.name.clone(),
        };
        let mut request = ServiceRequest::new(JobKind::ObjectImage, prompts::object_image(&obj_name, style));
        if let Some(r) = reference {
            request.attachments.push(attachment(r)?);
        }
        let stem = file_stem(&spec.id);
        let (key, output) = match variant {
            Some(_) => {
                let fp = request.fingerprint();
                (
                    format!("object_image:{}:{}", spec.id, short(&fp)),
                    format!("{IMAGES_DIR}/{stem}-{}.png", short(&fp)),
                )
            }
            None => (format!("object_image:{}", spec.id), format!("{IMAGES_DIR}/{stem}.png")),
        };
        self.file_job(&key, vec![spec.id.clone(), obj_name], &request, &output, &|_| Ok(()))
    }

    /// Images for every item, at most `max_inflight` at a time. A failed
    /// item is reported and does not stop the others.
    pub fn generate_object_images(&self, scene: &Scene, reference: Option<&Path>, style: &str) -> ObjectImages {
        let results = self.run_parallel(scene.items.iter().collect(), |spec| {
            (spec.id.clone(), self.generate_object_image(spec, reference, style, None))
        });
        let mut out = ObjectImages::default();
        for (id, r) in results {
            match r {
                Ok(path) => {
                    out.images.insert(id, path);
                }
                Err(e) => {
                    warn!("object image for {id} failed: {e}");
                    out.failed.insert(id, e.to_string());
                }
            }
        }
        out
    }

    /// Names among `filenames` that duplicate parts of other images. The
    /// reply is checked against the image-list schema and filtered to the
    /// input set.
    pub fn prune_redundant_images(&self, filenames: &[String]) -> Result<PruneOutcome, ServiceError> {
        if filenames.is_empty() {
            return Err(ServiceError::Precondition("no images to prune".into()));
        }
        let mut request = ServiceRequest::new(JobKind::Prune, prompts::prune(filenames));
        request.system = Some(prompts::PRUNE_SYSTEM.to_string());
        for name in filenames {
            let path = self.root.join(IMAGES_DIR).join(name);
            if path.is_file() {
                request.attachments.push(attachment(&path)?);
            }
        }
        let validate = |raw: &str| -> Result<Vec<String>, String> {
            let value: serde_json::Value = serde_json::from_str(strip_fence(raw)).map_err(|e| e.to_string())?;
            let list = match &value {
                serde_json::Value::Object(map) => map.get("filenames").ok_or("missing \"filenames\"")?,
                serde_json::Value::Array(_) => &value,
                _ => return Err("expected an object with \"filenames\"".into()),
            };
            serde_json::from_value::<Vec<String>>(list.clone()).map_err(|e| format!("\"filenames\": {e}"))
        };
        let names = self.text_job("prune", filenames.to_vec(), &request, &validate)?;
        let mut out = PruneOutcome::default();
        for name in names {
            if filenames.contains(&name) {
                if !out.delete.contains(&name) {
                    out.delete.push(name);
                }
            } else {
                warn!("prune reply names unknown image {name:?}; ignored");
                out.dropped.push(name);
            }
        }
        Ok(out)
    }

    /// Floor texture derived from the reference image; recorded as the
    /// scene's background.
    pub fn generate_background(&self, reference: &Path, scene: &mut Scene) -> Result<PathBuf, ServiceError> {
        if !reference.is_file() {
            return Err(ServiceError::Precondition(format!(
                "reference image {} is not available",
                reference.display()
            )));
        }
        let mut request = ServiceRequest::new(JobKind::Background, prompts::background());
        request.attachments.push(attachment(reference)?);
        let output = format!("{IMAGES_DIR}/background.png");
        let path = self.file_job("background", vec![reference.display().to_string()], &request, &output, &|_| Ok(()))?;
        scene.background_ref = Some(output);
        Ok(path)
    }

    /// Generates a GLB from the object image, measures it, and rescales the
    /// spec with its height as the reference.
    pub fn generate_asset(&self, image: &Path, spec: &ObjectSpec, variant: Option<&str>) -> Result<GeneratedAsset, ServiceError> {
        if !image.is_file() {
            return Err(ServiceError::Precondition(format!(
                "object image {} is not available",
                image.display()
            )));
        }
        let mut request = ServiceRequest::new(JobKind::Asset3d, "");
        request.attachments.push(attachment(image)?);
        request.meta = json!({"id": spec.id, "size": [spec.size.x, spec.size.y, spec.size.z]});
        let stem = file_stem(&spec.id);
        let (key, output) = match variant {
            Some(_) => {
                let fp = request.fingerprint();
                (
                    format!("asset3d:{}:{}", spec.id, short(&fp)),
                    format!("{ASSETS_DIR}/{stem}-{}.glb", short(&fp)),
                )
            }
            None => (format!("asset3d:{}", spec.id), format!("{ASSETS_DIR}/{stem}.glb")),
        };
        let path = self.file_job(&key, vec![spec.id.clone()], &request, &output, &|data| {
            glb::measure_glb(data).map(|_| ())
        })?;
        let measured = glb::measure_glb(&read(&path)?).map_err(ServiceError::Asset)?;
        let mut rescaled = rescale_spec_dims(spec, measured)?;
        rescaled.asset_ref = Some(output.clone());
        info!(
            "{}: asset measured {:.3} x {:.3} x {:.3}",
            spec.id, measured.x, measured.y, measured.z
        );
        Ok(GeneratedAsset {
            asset_ref: output,
            measured,
            spec: rescaled,
        })
    }

    /// Assets for every item with an image, at most `max_inflight` at a time.
    pub fn generate_assets(&self, scene: &Scene, images: &BTreeMap<String, PathBuf>) -> GeneratedAssets {
        let work: Vec<(&ObjectSpec, &PathBuf)> = scene
            .items
            .iter()
            .filter_map(|s| images.get(&s.id).map(|p| (s, p)))
            .collect();
        let results = self.run_parallel(work, |(spec, image)| (spec.id.clone(), self.generate_asset(image, spec, None)));
        let mut out = GeneratedAssets::default();
        for (id, r) in results {
            match r {
                Ok(a) => {
                    out.assets.insert(id, a);
                }
                Err(e) => {
                    warn!("asset for {id} failed: {e}");
                    out.failed.insert(id, e.to_string());
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests;
