//! Dataset ingestion and train-time augmentation.
//!
//! A dataset directory either contains image files directly (unlabeled) or
//! one subdirectory per class (labeled). Files are ordered by name, so the
//! traversal is deterministic; unreadable files are skipped with a warning.

use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::config::AugmentationConfig;
use crate::error::{Error, Result};
use crate::ImageTensor;

pub struct Dataset {
    sources: Vec<ImageTensor>,
    labels: Option<Vec<usize>>,
    class_names: Option<Vec<String>>,
    image_size: usize,
    augmentation: AugmentationConfig,
    warnings: Vec<String>,
}

fn is_image_file(path: &Path) -> bool {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
    path.is_file() && matches!(ext.as_str(), "png" | "jpg" | "jpeg")
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::ingestion(format!("cannot read {dir:?}: {e}")))?
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .map(|e| e.path())
        .collect();
    out.sort();
    Ok(out)
}

impl Dataset {
    /// Load every readable image under `path`. Subdirectories, when present
    /// and containing images, become class labels in sorted-name order.
    pub fn load(path: impl AsRef<Path>, image_size: usize, augmentation: AugmentationConfig) -> Result<Self> {
        let path = path.as_ref();
        if !path.is_dir() {
            return Err(Error::ingestion(format!("{path:?} is not a directory")));
        }
        let entries = sorted_entries(path)?;
        let files: Vec<&PathBuf> = entries.iter().filter(|p| is_image_file(p)).collect();
        let dirs: Vec<&PathBuf> = entries.iter().filter(|p| p.is_dir()).collect();

        let mut sources = Vec::new();
        let mut warnings = Vec::new();
        let mut labels = None;
        let mut class_names = None;

        if !files.is_empty() {
            for file in files {
                match ImageTensor::load(file) {
                    Ok(img) => sources.push(img),
                    Err(e) => warnings.push(format!("skipping {file:?}: {e}")),
                }
            }
        } else if !dirs.is_empty() {
            let mut lab = Vec::new();
            let mut names = Vec::new();
            for (class, dir) in dirs.iter().enumerate() {
                names.push(dir.file_name().and_then(|n| n.to_str()).unwrap_or("class").to_string());
                for file in sorted_entries(dir)? {
                    if !is_image_file(&file) {
                        continue;
                    }
                    match ImageTensor::load(&file) {
                        Ok(img) => {
                            sources.push(img);
                            lab.push(class);
                        }
                        Err(e) => warnings.push(format!("skipping {file:?}: {e}")),
                    }
                }
            }
            labels = Some(lab);
            class_names = Some(names);
        }

        if sources.is_empty() {
            return Err(Error::ingestion(format!(
                "no readable images under {path:?} ({} skipped)",
                warnings.len()
            )));
        }
        Ok(Self { sources, labels, class_names, image_size, augmentation, warnings })
    }

    /// Wrap an in-memory image list (synthetic corpora, tests).
    pub fn from_images(images: Vec<ImageTensor>, image_size: usize, augmentation: AugmentationConfig) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::ingestion("empty dataset"));
        }
        Ok(Self {
            sources: images,
            labels: None,
            class_names: None,
            image_size,
            augmentation,
            warnings: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.sources.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sources.is_empty()
    }

    pub fn image_size(&self) -> usize {
        self.image_size
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn class_names(&self) -> Option<&[String]> {
        self.class_names.as_deref()
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// Item `idx` with train-time augmentation, consuming draws from `rng`.
    pub fn sample(&self, idx: usize, rng: &mut ChaCha8Rng) -> Result<ImageTensor> {
        let src = &self.sources[idx];
        let t = self.image_size;
        let mut img = if self.augmentation.random_crop && src.height() >= t && src.width() >= t {
            let y0 = rng.random_range(0..=(src.height() - t));
            let x0 = rng.random_range(0..=(src.width() - t));
            src.crop(y0, x0, t, t)?
        } else {
            self.fixed(idx)?
        };
        if self.augmentation.random_flip && rng.random_bool(0.5) {
            img = img.flip_horizontal();
        }
        Ok(img)
    }

    /// Item `idx` without augmentation: center crop when larger, resize
    /// otherwise.
    pub fn fixed(&self, idx: usize) -> Result<ImageTensor> {
        let src = &self.sources[idx];
        let t = self.image_size;
        if src.height() == t && src.width() == t {
            Ok(src.clone())
        } else if src.height() >= t && src.width() >= t {
            let y0 = (src.height() - t) / 2;
            let x0 = (src.width() - t) / 2;
            src.crop(y0, x0, t, t)
        } else {
            src.resize(t, t)
        }
    }

    /// All items without augmentation.
    pub fn fixed_all(&self) -> Result<Vec<ImageTensor>> {
        (0..self.len()).map(|i| self.fixed(i)).collect()
    }
}
