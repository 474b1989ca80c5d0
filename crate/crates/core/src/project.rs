//! Scene directories and the end-to-end generation pipeline.
//!
//! A scene directory holds:
//!
//! ```text
//! scene.json        scene document (object specs, asset and image refs)
//! constraints.json  constraint list
//! layout.json       placements keyed by id
//! report.json       last solver report
//! trace.json        refinement trace of the pipeline run
//! ledger.json       generation job ledger
//! images/           reference, object and background images
//! assets/           GLB assets
//! export.json       scene document with final poses
//! scene.glb         assembled scene
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::constraints::{constraints_to_json, parse_constraints, Constraint, Thresholds};
use crate::edit::EditState;
use crate::error::{PipelineError, ProjectError, ServiceError};
use crate::export::{export_glb, export_json, GlbExport};
use crate::layout::Layout;
use crate::refine::{refine_until_solved, Proposer, RefinementTrace};
use crate::scene::{parse_scene, Scene};
use crate::services::{file_stem, Services, IMAGES_DIR};
use crate::solver::{SolverConfig, SolverReport};

pub const SCENE_FILE: &str = "scene.json";
pub const CONSTRAINTS_FILE: &str = "constraints.json";
pub const LAYOUT_FILE: &str = "layout.json";
pub const REPORT_FILE: &str = "report.json";
pub const TRACE_FILE: &str = "trace.json";
pub const EXPORT_JSON_FILE: &str = "export.json";
pub const EXPORT_GLB_FILE: &str = "scene.glb";

#[derive(Clone, Debug)]
pub struct SceneDir {
    root: PathBuf,
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> ProjectError + '_ {
    move |source| ProjectError::Io {
        path: path.to_path_buf(),
        source,
    }
}

impl SceneDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        SceneDir { root: root.into() }
    }

    pub fn create(root: impl Into<PathBuf>) -> Result<Self, ProjectError> {
        let dir = SceneDir::new(root);
        fs::create_dir_all(&dir.root).map_err(io(&dir.root))?;
        Ok(dir)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, file: &str) -> PathBuf {
        self.root.join(file)
    }

    pub fn read(&self, file: &str) -> Result<String, ProjectError> {
        let path = self.path(file);
        fs::read_to_string(&path).map_err(io(&path))
    }

    pub fn write(&self, file: &str, contents: impl AsRef<[u8]>) -> Result<(), ProjectError> {
        let path = self.path(file);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(io(parent))?;
        }
        fs::write(&path, contents).map_err(io(&path))
    }

    fn read_json<T: DeserializeOwned>(&self, file: &str) -> Result<Option<T>, ProjectError> {
        let path = self.path(file);
        match fs::read_to_string(&path) {
            Ok(text) => serde_json::from_str(&text)
                .map(Some)
                .map_err(|source| ProjectError::Json { path, source }),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(io(&path)(e)),
        }
    }

    fn write_json<T: Serialize>(&self, file: &str, value: &T) -> Result<(), ProjectError> {
        let text = serde_json::to_string_pretty(value).map_err(|source| ProjectError::Json {
            path: self.path(file),
            source,
        })?;
        self.write(file, text)
    }

    pub fn load_scene(&self) -> Result<Scene, ProjectError> {
        let path = self.path(SCENE_FILE);
        parse_scene(&self.read(SCENE_FILE)?).map_err(|source| ProjectError::Scene { path, source })
    }

    pub fn save_scene(&self, scene: &Scene) -> Result<(), ProjectError> {
        self.write(SCENE_FILE, scene.to_json())
    }

    /// An absent constraint file reads as an empty list.
    pub fn load_constraints(&self) -> Result<Vec<Constraint>, ProjectError> {
        let path = self.path(CONSTRAINTS_FILE);
        if !path.exists() {
            return Ok(Vec::new());
        }
        parse_constraints(&self.read(CONSTRAINTS_FILE)?).map_err(|source| ProjectError::Constraint { path, source })
    }

    pub fn save_constraints(&self, constraints: &[Constraint]) -> Result<(), ProjectError> {
        self.write(CONSTRAINTS_FILE, constraints_to_json(constraints))
    }

    pub fn load_layout(&self) -> Result<Option<Layout>, ProjectError> {
        self.read_json(LAYOUT_FILE)
    }

    pub fn save_layout(&self, layout: &Layout) -> Result<(), ProjectError> {
        self.write_json(LAYOUT_FILE, layout)
    }

    pub fn load_report(&self) -> Result<Option<SolverReport>, ProjectError> {
        self.read_json(REPORT_FILE)
    }

    pub fn save_report(&self, report: &SolverReport) -> Result<(), ProjectError> {
        self.write(REPORT_FILE, report.to_json())
    }

    pub fn save_trace(&self, trace: &RefinementTrace) -> Result<(), ProjectError> {
        self.write_json(TRACE_FILE, trace)
    }

    /// Scene, constraints and layout; a missing layout reads as empty.
    pub fn load_state(&self) -> Result<EditState, ProjectError> {
        Ok(EditState {
            scene: self.load_scene()?,
            constraints: self.load_constraints()?,
            layout: self.load_layout()?.unwrap_or_default(),
        })
    }

    pub fn save_state(&self, state: &EditState) -> Result<(), ProjectError> {
        self.save_scene(&state.scene)?;
        self.save_constraints(&state.constraints)?;
        self.save_layout(&state.layout)
    }

    /// Resolves an asset or image reference recorded in the scene.
    pub fn resolve(&self, reference: &str) -> PathBuf {
        self.root.join(reference)
    }
}

#[derive(Clone, Debug)]
pub struct PipelineOptions {
    pub solver: SolverConfig,
    pub thresholds: Thresholds,
    pub max_iterations: usize,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        PipelineOptions {
            solver: SolverConfig::default(),
            thresholds: Thresholds::default(),
            max_iterations: crate::refine::DEFAULT_MAX_ITERATIONS,
        }
    }
}

#[derive(Debug)]
pub struct PipelineOutcome {
    pub state: EditState,
    pub trace: RefinementTrace,
    pub failed_objects: BTreeMap<String, String>,
    pub pruned: Vec<String>,
    pub glb: GlbExport,
}

fn stage(stage: &'static str) -> impl FnOnce(ServiceError) -> PipelineError {
    move |source| PipelineError::Service { stage, source }
}

/// Scene analysis, object generation, constraint refinement and export,
/// writing everything into `dir`. Finished generation jobs recorded in the
/// directory's ledger are not repeated.
pub fn run_pipeline(
    dir: &SceneDir,
    description: &str,
    style: &str,
    services: &Services,
    proposer: &dyn Proposer,
    options: &PipelineOptions,
) -> Result<PipelineOutcome, PipelineError> {
    let reference = services
        .generate_reference_image(description, style)
        .map_err(stage("reference image"))?;
    let mut scene = services
        .parse_scene_from_inputs(description, style, &reference)
        .map_err(stage("scene parse"))?;
    scene.reference_image = Some(format!("{IMAGES_DIR}/reference.png"));
    info!("scene parsed: {} objects", scene.items.len());

    let images = services.generate_object_images(&scene, Some(&reference), style);
    let mut failed = images.failed.clone();
    if images.images.is_empty() {
        return Err(PipelineError::NothingGenerated);
    }

    let by_file: BTreeMap<String, String> = images
        .images
        .iter()
        .filter_map(|(id, p)| p.file_name().map(|f| (f.to_string_lossy().into_owned(), id.clone())))
        .collect();
    let names: Vec<String> = by_file.keys().cloned().collect();
    let pruned = match services.prune_redundant_images(&names) {
        Ok(outcome) => outcome.delete.iter().filter_map(|f| by_file.get(f).cloned()).collect(),
        Err(e) => {
            warn!("prune skipped: {e}");
            Vec::new()
        }
    };
    scene.items.retain(|s| !pruned.contains(&s.id));
    if !pruned.is_empty() {
        info!("pruned redundant objects: {}", pruned.join(", "));
    }

    if let Err(e) = services.generate_background(&reference, &mut scene) {
        warn!("background skipped: {e}");
    }

    let kept: BTreeMap<String, PathBuf> = images
        .images
        .into_iter()
        .filter(|(id, _)| !pruned.contains(id))
        .collect();
    let assets = services.generate_assets(&scene, &kept);
    for (id, asset) in &assets.assets {
        if let Some(spec) = scene.get_mut(id) {
            *spec = asset.spec.clone();
        }
    }
    failed.extend(assets.failed);
    dir.save_scene(&scene)?;

    let (layout, trace) = refine_until_solved(&scene, proposer, &options.solver, &options.thresholds, options.max_iterations)?;
    let constraints = trace.best_constraints().map(<[Constraint]>::to_vec).unwrap_or_default();
    dir.save_constraints(&constraints)?;
    dir.save_layout(&layout)?;
    if let Some(report) = trace.best_report() {
        dir.save_report(report)?;
    }
    dir.save_trace(&trace)?;
    if layout.is_empty() {
        return Err(PipelineError::NoLayout(trace.len()));
    }

    dir.write(EXPORT_JSON_FILE, export_json(&scene, &layout)?)?;
    let glb = export_glb(&scene, &layout, dir.root())?;
    dir.write(EXPORT_GLB_FILE, &glb.bytes)?;
    Ok(PipelineOutcome {
        state: EditState {
            scene,
            layout,
            constraints,
        },
        trace,
        failed_objects: failed,
        pruned,
        glb,
    })
}

/// Asset path for `id` under the scene directory convention.
pub fn asset_file(id: &str) -> String {
    format!("{}/{}.glb", crate::services::ASSETS_DIR, file_stem(id))
}
