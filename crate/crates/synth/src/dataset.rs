use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use cpdewarp_core::{AnnotationRecord, BackwardMap, ControlGrid, ImageBuffer, Provenance, ReferenceSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::SynthConfig;
use crate::render::render_distorted;
use crate::scan::procedural_background;
use crate::warp::Warp;
use crate::{Result, SynthError};

pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Debug, Clone)]
pub struct SynthSample {
    pub image: ImageBuffer,
    /// The distorted image before photometric augmentation.
    pub clean: ImageBuffer,
    pub control: ControlGrid,
    pub reference: ReferenceSpec,
    /// Ground-truth backward map at the reference output size.
    pub map: BackwardMap,
    /// The flat scan at the reference output size.
    pub flat: ImageBuffer,
    pub warp: Warp,
    pub provenance: Provenance,
    pub attempts: u32,
}

impl SynthSample {
    pub fn annotation(&self, image_name: &str) -> Result<AnnotationRecord> {
        Ok(AnnotationRecord::new(
            image_name,
            self.image.dimensions(),
            &self.control,
            &self.reference,
            Some(self.provenance.clone()),
        )?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub index: u64,
    pub seed: u64,
    pub attempts: u32,
    pub source: String,
    pub image: String,
    pub annotation: String,
    pub map: String,
    pub flat: String,
    pub warp: Warp,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of sample `index` under master seed `master`.
pub fn sample_seed(master: u64, index: u64) -> u64 {
    splitmix64(master ^ splitmix64(index))
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Draws sample `index`, retrying degenerate warps on fresh streams.
///
/// Stream 0 of the sample seed is reserved for choosing the scan; attempt `k`
/// uses stream `k + 1`.
pub fn generate_sample(
    scan: &ImageBuffer,
    source: &str,
    config: &SynthConfig,
    index: u64,
    backgrounds: &[PathBuf],
) -> Result<SynthSample> {
    config.validate()?;
    let seed = sample_seed(config.seed, index);
    let mut last = String::new();
    for attempt in 0..config.max_attempts {
        let mut rng = stream(seed, attempt as u64 + 1);
        let warp = Warp::sample(
            scan.dimensions(),
            config.canvas,
            config.rows,
            config.cols,
            &config.distortion,
            &mut rng,
        )?;
        let background = if backgrounds.is_empty() {
            procedural_background(config.canvas.0, config.canvas.1, &mut rng)
        } else {
            let path = &backgrounds[rng.random_range(0..backgrounds.len())];
            ImageBuffer::load(path)?.to_rgb().resized(config.canvas.0, config.canvas.1)?
        };
        match render_distorted(scan, &warp, config.rows, config.cols, &background, &config.photometric, &mut rng) {
            Ok(r) => {
                return Ok(SynthSample {
                    image: r.image,
                    clean: r.clean,
                    control: r.control,
                    reference: r.reference,
                    map: r.map,
                    flat: r.flat,
                    warp,
                    provenance: Provenance {
                        seed,
                        source: source.to_string(),
                    },
                    attempts: attempt + 1,
                })
            }
            Err(SynthError::Degenerate(msg)) => last = msg,
            Err(e) => return Err(e),
        }
    }
    Err(SynthError::Exhausted {
        index,
        attempts: config.max_attempts,
        last,
    })
}

/// PNG and JPEG files in `dir`, sorted by name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| SynthError::io(dir, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| SynthError::io(dir, e))?.path();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase());
        if path.is_file() && matches!(ext.as_deref(), Some("png" | "jpg" | "jpeg")) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Writes `count` samples drawn from the scans in `scans` to `out`, plus a
/// JSON-lines manifest, and returns the manifest entries in index order.
///
/// Per sample: `sample_NNNNN.png` (distorted image), `.json` (annotation),
/// `.cpbm` (ground-truth backward map) and `_flat.png` (rectified ground truth).
pub fn synthesize_dataset(scans: &Path, config: &SynthConfig, count: usize, out: &Path) -> Result<Vec<ManifestEntry>> {
    config.validate()?;
    let scan_paths = list_images(scans)?;
    if scan_paths.is_empty() {
        return Err(SynthError::NoScans(scans.to_path_buf()));
    }
    let backgrounds = match &config.background_dir {
        Some(dir) => {
            let list = list_images(dir)?;
            if list.is_empty() {
                return Err(SynthError::Config(format!("no background images in {}", dir.display())));
            }
            list
        }
        None => Vec::new(),
    };
    fs::create_dir_all(out).map_err(|e| SynthError::io(out, e))?;

    let entries = (0..count as u64)
        .into_par_iter()
        .map(|index| -> Result<ManifestEntry> {
            let seed = sample_seed(config.seed, index);
            let scan_path = &scan_paths[stream(seed, 0).random_range(0..scan_paths.len())];
            let scan = ImageBuffer::load(scan_path)?;
            let source = stem(scan_path);
            let sample = generate_sample(&scan, &source, config, index, &backgrounds)?;

            let name = format!("sample_{index:05}");
            let entry = ManifestEntry {
                index,
                seed,
                attempts: sample.attempts,
                source,
                image: format!("{name}.png"),
                annotation: format!("{name}.json"),
                map: format!("{name}.cpbm"),
                flat: format!("{name}_flat.png"),
                warp: sample.warp.clone(),
            };
            sample.image.save_png(out.join(&entry.image))?;
            sample.flat.save_png(out.join(&entry.flat))?;
            sample.map.save(out.join(&entry.map))?;
            sample.annotation(&entry.image)?.save(out.join(&entry.annotation))?;
            Ok(entry)
        })
        .collect::<Result<Vec<_>>>()?;

    let manifest_path = out.join(MANIFEST_FILE);
    let mut text = Vec::new();
    for entry in &entries {
        serde_json::to_writer(&mut text, entry)?;
        text.push(b'\n');
    }
    let mut file = fs::File::create(&manifest_path).map_err(|e| SynthError::io(&manifest_path, e))?;
    file.write_all(&text).map_err(|e| SynthError::io(&manifest_path, e))?;
    Ok(entries)
}
