//! In-memory landmark dataset shared by the generator, loaders and trainer.

use crate::error::{Error, Result};
use crate::gaussmath::{GridShape, HeatmapGrid, Point};

/// One image with its (single-annotator) landmark coordinates in pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    /// Grayscale intensities, nominally in `[0, 1]`.
    pub image: HeatmapGrid,
    pub landmarks: Vec<Point>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub landmark_count: usize,
    pub samples: Vec<Sample>,
}

impl Dataset {
    /// Geometry of the first image; all images share it after [`Dataset::validate`].
    pub fn shape(&self) -> Option<GridShape> {
        self.samples.first().map(|s| s.image.shape())
    }

    /// Non-empty, one geometry, `landmark_count` in-extent landmarks per image.
    pub fn validate(&self) -> Result<()> {
        let shape = self.shape().ok_or_else(|| Error::UndefinedInput("dataset has no images".into()))?;
        for s in &self.samples {
            let sh = s.image.shape();
            if sh.width != shape.width || sh.height != shape.height {
                return Err(Error::ShapeMismatch(format!(
                    "image {} is {}x{}, expected {}x{}",
                    s.id, sh.width, sh.height, shape.width, shape.height
                )));
            }
            if s.landmarks.len() != self.landmark_count {
                return Err(Error::ShapeMismatch(format!(
                    "image {} has {} landmarks, expected {}",
                    s.id,
                    s.landmarks.len(),
                    self.landmark_count
                )));
            }
            for (i, p) in s.landmarks.iter().enumerate() {
                if !p.is_finite() || !sh.contains(*p) {
                    return Err(Error::OutOfBounds {
                        image_id: s.id.clone(),
                        landmark_id: i,
                        x: p.x,
                        y: p.y,
                        width: sh.width,
                        height: sh.height,
                    });
                }
            }
        }
        Ok(())
    }
}
