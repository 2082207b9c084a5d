//! Image access for the compositor.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use image::RgbImage;

use crate::dataset::Dataset;
use crate::error::{Error, Result};

/// Decoded RGB images by id. Implementations must tolerate concurrent
/// readers.
pub trait ImageSource: Send + Sync {
    fn load(&self, image_id: u64) -> Result<Arc<RgbImage>>;

    /// Path of the original encoded file, when there is one. Pass-through
    /// samples copy these bytes verbatim.
    fn original_file(&self, _image_id: u64) -> Option<PathBuf> {
        None
    }
}

/// Reads images from disk and keeps up to `capacity` decoded images.
pub struct DiskImages {
    paths: HashMap<u64, PathBuf>,
    cache: RwLock<HashMap<u64, Arc<RgbImage>>>,
    capacity: usize,
}

impl DiskImages {
    pub fn new(dataset: &Dataset, capacity: usize) -> Self {
        Self {
            paths: dataset
                .images
                .iter()
                .map(|r| (r.image_id, r.path.clone()))
                .collect(),
            cache: RwLock::new(HashMap::new()),
            capacity,
        }
    }
}

impl ImageSource for DiskImages {
    fn load(&self, image_id: u64) -> Result<Arc<RgbImage>> {
        if let Some(img) = self
            .cache
            .read()
            .expect("image cache poisoned")
            .get(&image_id)
        {
            return Ok(Arc::clone(img));
        }
        let path = self.paths.get(&image_id).ok_or_else(|| Error::Image {
            image_id,
            message: "not in dataset".into(),
        })?;
        let img = image::open(path)
            .map_err(|e| Error::Image {
                image_id,
                message: format!("{}: {e}", path.display()),
            })?
            .into_rgb8();
        let img = Arc::new(img);
        let mut cache = self.cache.write().expect("image cache poisoned");
        if cache.len() < self.capacity {
            cache.insert(image_id, Arc::clone(&img));
        }
        Ok(img)
    }

    fn original_file(&self, image_id: u64) -> Option<PathBuf> {
        self.paths.get(&image_id).cloned()
    }
}

/// In-memory images, mainly for tests and synthetic runs.
#[derive(Default, Clone)]
pub struct MemoryImages {
    images: HashMap<u64, Arc<RgbImage>>,
}

impl MemoryImages {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, image_id: u64, image: RgbImage) {
        self.images.insert(image_id, Arc::new(image));
    }
}

impl ImageSource for MemoryImages {
    fn load(&self, image_id: u64) -> Result<Arc<RgbImage>> {
        self.images.get(&image_id).cloned().ok_or(Error::Image {
            image_id,
            message: "not in memory source".into(),
        })
    }
}
