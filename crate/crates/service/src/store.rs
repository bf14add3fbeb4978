//! Directory-backed project storage.
//!
//! ```text
//! <root>/projects/<id>/
//!     source.png      decoded upload, re-encoded as PNG
//!     project.json    {id, revision, created, modified, annotation}
//!     previews/       r<revision>_<method>_s<step>_m<max_side>.png
//! ```
//!
//! `project.json` is replaced by write-then-rename, so a crash leaves either the
//! old or the new revision on disk. Readers clone an `Arc` snapshot; mutations
//! of one project are serialized by its own lock.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, OnceLock, RwLock};

use chrono::{DateTime, Utc};
use cpdewarp_core::{
    backward_map, build_reference_grid, common_valid_steps, dewarp, rescale_points, AnnotationRecord, ControlGrid,
    DewarpOptions, ImageBuffer, Method, Point2, ReferenceSpec,
};
use serde::{Deserialize, Serialize};

use crate::error::StoreError;

pub type Result<T, E = StoreError> = std::result::Result<T, E>;

const PROJECT_FILE: &str = "project.json";
const SOURCE_FILE: &str = "source.png";
const PREVIEW_DIR: &str = "previews";
/// Margin of the uniform initial lattice, as a fraction of each image side.
pub const UNIFORM_MARGIN: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Project {
    pub id: String,
    pub revision: u64,
    pub created: DateTime<Utc>,
    pub modified: DateTime<Utc>,
    pub annotation: AnnotationRecord,
}

#[derive(Debug, Clone)]
pub enum Init {
    Uniform { rows: usize, cols: usize },
    FromAnnotation(AnnotationRecord),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PreviewKey {
    pub method: Method,
    pub step: usize,
    pub max_side: u32,
}

#[derive(Debug, Clone, Serialize)]
pub struct Export {
    pub id: String,
    pub revision: u64,
    pub annotation: AnnotationRecord,
    #[serde(skip)]
    pub map_cpbm: Option<Vec<u8>>,
}

struct Entry {
    dir: PathBuf,
    snapshot: RwLock<Arc<Project>>,
    write: Mutex<()>,
    image: OnceLock<Arc<ImageBuffer>>,
}

impl Entry {
    fn current(&self) -> Arc<Project> {
        self.snapshot.read().unwrap_or_else(|e| e.into_inner()).clone()
    }
}

pub struct Store {
    root: PathBuf,
    projects: RwLock<BTreeMap<String, Arc<Entry>>>,
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `bytes` to a sibling temp file and renames it over `path`.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!("tmp-{}", uuid::Uuid::new_v4().simple()));
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

/// Control points evenly spread over the image with a 2% margin, and the matching
/// reference lattice (identical points, so the initial rectification is a crop).
pub fn uniform_annotation(image_name: &str, size: (u32, u32), rows: usize, cols: usize) -> Result<AnnotationRecord> {
    if rows < 2 || cols < 2 {
        return Err(StoreError::BadRequest(format!("grid {rows}x{cols} is smaller than 2x2")));
    }
    let (w, h) = (size.0 as f64, size.1 as f64);
    let (mx, my) = (UNIFORM_MARGIN * w, UNIFORM_MARGIN * h);
    let spec = ReferenceSpec::new(
        (h - 2.0 * my) / (rows - 1) as f64,
        (w - 2.0 * mx) / (cols - 1) as f64,
        Point2::new(mx, my),
        rows,
        cols,
    )?;
    let grid = build_reference_grid(&spec)?;
    Ok(AnnotationRecord::new(image_name, size, &grid, &spec, None)?)
}

impl Store {
    /// Opens (creating if needed) the store under `root` and loads every project.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        let dir = root.join("projects");
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let mut projects = BTreeMap::new();
        for entry in fs::read_dir(&dir).map_err(io_err(&dir))? {
            let path = entry.map_err(io_err(&dir))?.path();
            let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            if !path.is_dir() || name.starts_with('.') {
                continue;
            }
            match load_project(&path) {
                Ok(p) if p.id == name => {
                    projects.insert(name, Arc::new(new_entry(path, p)));
                }
                Ok(p) => tracing::warn!(dir = %path.display(), id = %p.id, "project id does not match its directory; skipped"),
                Err(e) => tracing::warn!(dir = %path.display(), error = %e, "unreadable project; skipped"),
            }
        }
        Ok(Self {
            root,
            projects: RwLock::new(projects),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn entry(&self, id: &str) -> Result<Arc<Entry>> {
        self.projects
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .get(id)
            .cloned()
            .ok_or_else(|| StoreError::NotFound(id.to_string()))
    }

    pub fn create(&self, image_bytes: &[u8], image_name: Option<&str>, init: Init) -> Result<Arc<Project>> {
        let image = ImageBuffer::decode(image_bytes).map_err(|e| StoreError::BadRequest(format!("image: {e}")))?;
        let size = image.dimensions();
        let annotation = match init {
            Init::Uniform { rows, cols } => uniform_annotation(image_name.unwrap_or(SOURCE_FILE), size, rows, cols)?,
            Init::FromAnnotation(record) => {
                record.validate()?;
                if record.image_size() != size {
                    return Err(StoreError::BadRequest(format!(
                        "annotation is for a {}x{} image, upload is {}x{}",
                        record.image_size[0], record.image_size[1], size.0, size.1
                    )));
                }
                record
            }
        };
        let id = uuid::Uuid::new_v4().simple().to_string();
        let now = Utc::now();
        let project = Project {
            id: id.clone(),
            revision: 0,
            created: now,
            modified: now,
            annotation,
        };

        let projects_dir = self.root.join("projects");
        let staging = projects_dir.join(format!(".new-{id}"));
        fs::create_dir_all(staging.join(PREVIEW_DIR)).map_err(io_err(&staging))?;
        let png = image.encode_png()?;
        fs::write(staging.join(SOURCE_FILE), &png).map_err(io_err(&staging))?;
        fs::write(staging.join(PROJECT_FILE), serde_json::to_vec_pretty(&project)?).map_err(io_err(&staging))?;
        let dir = projects_dir.join(&id);
        fs::rename(&staging, &dir).map_err(io_err(&dir))?;

        let entry = new_entry(dir, project);
        let _ = entry.image.set(Arc::new(image));
        let snapshot = entry.current();
        self.projects
            .write()
            .unwrap_or_else(|e| e.into_inner())
            .insert(id, Arc::new(entry));
        Ok(snapshot)
    }

    /// All projects, oldest first.
    pub fn list(&self) -> Vec<Arc<Project>> {
        let entries: Vec<Arc<Entry>> = self
            .projects
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .values()
            .cloned()
            .collect();
        let mut out: Vec<Arc<Project>> = entries.iter().map(|e| e.current()).collect();
        out.sort_by(|a, b| a.created.cmp(&b.created).then_with(|| a.id.cmp(&b.id)));
        out
    }

    pub fn get(&self, id: &str) -> Result<Arc<Project>> {
        Ok(self.entry(id)?.current())
    }

    /// Replaces the control points if `expected_revision` is current.
    pub fn update_points(&self, id: &str, points: Vec<[f64; 2]>, expected_revision: u64) -> Result<Arc<Project>> {
        let entry = self.entry(id)?;
        let _guard = entry.write.lock().unwrap_or_else(|e| e.into_inner());
        let current = entry.current();
        if current.revision != expected_revision {
            return Err(StoreError::Conflict {
                current: current.revision,
            });
        }
        let grid = ControlGrid::new(
            current.annotation.grid.rows,
            current.annotation.grid.cols,
            points.into_iter().map(Point2::from).collect(),
        )
        .map_err(|e| StoreError::BadRequest(e.to_string()))?;
        let next = Project {
            revision: current.revision + 1,
            modified: Utc::now(),
            annotation: current.annotation.with_control(&grid)?,
            ..(*current).clone()
        };
        write_atomic(&entry.dir.join(PROJECT_FILE), &serde_json::to_vec_pretty(&next)?)?;
        let next = Arc::new(next);
        *entry.snapshot.write().unwrap_or_else(|e| e.into_inner()) = next.clone();
        purge_previews(&entry.dir.join(PREVIEW_DIR));
        Ok(next)
    }

    pub fn image_png(&self, id: &str) -> Result<Vec<u8>> {
        let path = self.entry(id)?.dir.join(SOURCE_FILE);
        fs::read(&path).map_err(io_err(&path))
    }

    fn image(&self, entry: &Entry) -> Result<Arc<ImageBuffer>> {
        if let Some(img) = entry.image.get() {
            return Ok(img.clone());
        }
        let img = Arc::new(ImageBuffer::load(entry.dir.join(SOURCE_FILE))?);
        Ok(entry.image.get_or_init(|| img).clone())
    }

    /// Rectified preview of the current state as PNG, longest side at most `max_side`.
    ///
    /// The image, control points and reference lattice are scaled down together
    /// before rectifying, so small previews cost proportionally less.
    pub fn preview(&self, id: &str, key: PreviewKey) -> Result<Vec<u8>> {
        let entry = self.entry(id)?;
        let project = entry.current();
        let rows = project.annotation.grid.rows;
        let cols = project.annotation.grid.cols;
        let valid = common_valid_steps(rows, cols);
        if !valid.contains(&key.step) {
            return Err(StoreError::InvalidStep { step: key.step, valid });
        }
        if key.max_side == 0 {
            return Err(StoreError::BadRequest("max_side must be positive".into()));
        }
        let cache = entry
            .dir
            .join(PREVIEW_DIR)
            .join(format!("r{}_{}_s{}_m{}.png", project.revision, key.method, key.step, key.max_side));
        if let Ok(bytes) = fs::read(&cache) {
            return Ok(bytes);
        }

        let image = self.image(&entry)?;
        let control = project.annotation.control_grid()?;
        let reference = project.annotation.reference_spec()?;
        let (w, h) = image.dimensions();
        let (span_w, span_h) = reference.span();
        let longest = (w as f64).max(h as f64).max(span_w).max(span_h);
        let factor = (key.max_side as f64 / longest).min(1.0);
        let (image, control, reference) = if factor < 1.0 {
            let nw = ((w as f64 * factor).round() as u32).max(1);
            let nh = ((h as f64 * factor).round() as u32).max(1);
            let (fx, fy) = (nw as f64 / w as f64, nh as f64 / h as f64);
            let small = image.resized(nw, nh)?;
            let control = rescale_points(&control, (w, h), (nw, nh))?;
            (Arc::new(small), control, reference.scaled(fx, fy))
        } else {
            (image, control, reference)
        };
        let mut opts = DewarpOptions::new(key.method, key.step);
        let (ow, oh) = reference.output_size();
        if ow.max(oh) > key.max_side {
            let s = key.max_side as f64 / ow.max(oh) as f64;
            opts.out_size = Some((((ow as f64 * s).round() as u32).max(1), ((oh as f64 * s).round() as u32).max(1)));
        }
        let out = dewarp(&image, &control, &reference, &opts)?;
        let png = out.image.encode_png()?;
        if let Some(parent) = cache.parent() {
            if fs::create_dir_all(parent).is_ok() {
                // a failed cache write only costs a recomputation later
                let _ = write_atomic(&cache, &png);
            }
        }
        Ok(png)
    }

    pub fn export(&self, id: &str, include_map: bool) -> Result<Export> {
        let project = self.get(id)?;
        let map_cpbm = if include_map {
            let control = project.annotation.control_grid()?;
            let reference = project.annotation.reference_spec()?;
            let (map, _) = backward_map(&control, &reference, &DewarpOptions::default())?;
            Some(map.to_cpbm_bytes())
        } else {
            None
        };
        Ok(Export {
            id: project.id.clone(),
            revision: project.revision,
            annotation: project.annotation.clone(),
            map_cpbm,
        })
    }
}

fn new_entry(dir: PathBuf, project: Project) -> Entry {
    Entry {
        dir,
        snapshot: RwLock::new(Arc::new(project)),
        write: Mutex::new(()),
        image: OnceLock::new(),
    }
}

fn load_project(dir: &Path) -> Result<Project> {
    let path = dir.join(PROJECT_FILE);
    let bytes = fs::read(&path).map_err(io_err(&path))?;
    let project: Project = serde_json::from_slice(&bytes)?;
    project.annotation.validate()?;
    Ok(project)
}

fn purge_previews(dir: &Path) {
    if let Ok(entries) = fs::read_dir(dir) {
        for entry in entries.flatten() {
            let _ = fs::remove_file(entry.path());
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn png(w: u32, h: u32) -> Vec<u8> {
        let data = (0..w * h * 3).map(|v| (v % 251) as u8).collect();
        ImageBuffer::new(w, h, 3, data).unwrap().encode_png().unwrap()
    }

    #[test]
    fn uniform_margin_arithmetic() {
        let a = uniform_annotation("x.png", (992, 992), 31, 31).unwrap();
        let first = a.control_points[0];
        assert!((first[0] - 19.84).abs() < 1e-9 && (first[1] - 19.84).abs() < 1e-9);
        let last = a.control_points[31 * 31 - 1];
        assert!((last[0] - 972.16).abs() < 1e-9);
        assert_eq!(a.reference.origin, [19.84, 19.84]);
        assert!(uniform_annotation("x.png", (992, 992), 1, 31).is_err());
    }

    #[test]
    fn create_update_reload() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        let p = store.create(&png(40, 30), None, Init::Uniform { rows: 3, cols: 4 }).unwrap();
        assert_eq!(p.revision, 0);
        let mut pts = p.annotation.control_points.clone();
        pts[0][0] += 1.5;
        let q = store.update_points(&p.id, pts.clone(), 0).unwrap();
        assert_eq!(q.revision, 1);
        assert!(matches!(store.update_points(&p.id, pts.clone(), 0), Err(StoreError::Conflict { current: 1 })));
        assert!(matches!(store.update_points(&p.id, pts[1..].to_vec(), 1), Err(StoreError::BadRequest(_))));
        let mut bad = pts.clone();
        bad[3][1] = f64::NAN;
        assert!(matches!(store.update_points(&p.id, bad, 1), Err(StoreError::BadRequest(_))));
        assert_eq!(store.get(&p.id).unwrap().revision, 1);

        drop(store);
        let store = Store::open(dir.path()).unwrap();
        let r = store.get(&p.id).unwrap();
        assert_eq!(*r, *q);
        assert_eq!(store.list().len(), 1);
        assert!(matches!(store.get("nope"), Err(StoreError::NotFound(_))));
    }

    #[test]
    fn rejects_bad_uploads() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        assert!(matches!(
            store.create(b"not an image", None, Init::Uniform { rows: 3, cols: 3 }),
            Err(StoreError::BadRequest(_))
        ));
        let other = uniform_annotation("x.png", (50, 50), 3, 3).unwrap();
        assert!(matches!(
            store.create(&png(40, 30), None, Init::FromAnnotation(other)),
            Err(StoreError::BadRequest(_))
        ));
        assert!(store.list().is_empty());
    }
}
