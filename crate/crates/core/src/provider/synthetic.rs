//! Frame extractor that renders scripted screen recordings instead of
//! decoding video. A scene is a solid background plus rectangles that
//! appear at given frames and stay; it stands in for a decoded tutorial in
//! offline runs and tests.

use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use super::{FrameExtractor, MediaRef, ProviderError};
use crate::perception::{write_frame_index, FrameRef, ImageRef};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneEvent {
    pub frame: usize,
    /// x, y, width, height in pixels.
    pub rect: [u32; 4],
    pub color: [u8; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub width: u32,
    pub height: u32,
    pub fps: f64,
    pub frames: usize,
    pub background: [u8; 3],
    pub events: Vec<SceneEvent>,
}

impl Scene {
    /// Renders every frame in order.
    pub fn render(&self) -> Vec<RgbImage> {
        let mut events: Vec<&SceneEvent> = self.events.iter().collect();
        events.sort_by_key(|e| e.frame);
        let mut canvas = RgbImage::from_pixel(self.width, self.height, Rgb(self.background));
        let mut next = 0;
        let mut out = Vec::with_capacity(self.frames);
        for i in 0..self.frames {
            while next < events.len() && events[next].frame <= i {
                paint(&mut canvas, events[next]);
                next += 1;
            }
            out.push(canvas.clone());
        }
        out
    }

    pub fn timestamp_ms(&self, i: usize) -> u64 {
        (i as f64 * 1000.0 / self.fps).round() as u64
    }
}

fn paint(canvas: &mut RgbImage, e: &SceneEvent) {
    let [x, y, w, h] = e.rect;
    let x1 = x.saturating_add(w).min(canvas.width());
    let y1 = y.saturating_add(h).min(canvas.height());
    for yy in y.min(y1)..y1 {
        for xx in x.min(x1)..x1 {
            canvas.put_pixel(xx, yy, Rgb(e.color));
        }
    }
}

/// Reads `<dir>/<video_id>.json` scenes and writes the rendered frames as
/// numbered PNG files. The scene's own frame rate wins over the requested
/// one, since the script is authored against it.
pub struct SceneFrames(pub PathBuf);

impl SceneFrames {
    pub fn load(&self, video_id: &str) -> Result<Scene, ProviderError> {
        let path = self.0.join(format!("{video_id}.json"));
        let raw = std::fs::read(&path).map_err(|e| ProviderError::DecodeFailure(format!("{}: {e}", path.display())))?;
        serde_json::from_slice(&raw).map_err(|e| ProviderError::DecodeFailure(format!("{}: {e}", path.display())))
    }
}

impl FrameExtractor for SceneFrames {
    fn extract(&self, media: &MediaRef, _fps: f64, out_dir: &Path) -> Result<Vec<FrameRef>, ProviderError> {
        let scene = self.load(&media.video_id)?;
        std::fs::create_dir_all(out_dir)?;
        let mut frames = Vec::with_capacity(scene.frames);
        for (i, img) in scene.render().into_iter().enumerate() {
            let path = out_dir.join(format!("{:06}.png", i + 1));
            img.save(&path).map_err(|e| ProviderError::Io(format!("{}: {e}", path.display())))?;
            frames.push(FrameRef {
                frame_index: i,
                timestamp_ms: scene.timestamp_ms(i),
                image: ImageRef { path, width: scene.width, height: scene.height },
            });
        }
        write_frame_index(out_dir, &frames)?;
        Ok(frames)
    }
}
