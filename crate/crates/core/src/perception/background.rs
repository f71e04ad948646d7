//! Per-pixel adaptive Gaussian-mixture background model in the style of
//! Zivkovic's MOG2, operating on RGB frames with one isotropic variance per
//! component.

use image::RgbImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

const K: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackgroundModelParams {
    pub history: u32,
    /// Squared Mahalanobis distance under which a pixel counts as background.
    pub var_threshold: f32,
    /// Squared Mahalanobis distance under which a pixel updates a component.
    pub var_threshold_gen: f32,
    pub var_init: f32,
    pub var_min: f32,
    pub var_max: f32,
    pub complexity_reduction: f32,
    /// Cumulative weight of the components that make up the background.
    pub background_ratio: f32,
    /// Foreground pixel count above which a frame is "changing", quoted at
    /// the 1920x1080 reference resolution.
    pub fg_threshold: u64,
}

impl Default for BackgroundModelParams {
    fn default() -> Self {
        Self {
            history: 500,
            var_threshold: 16.0,
            var_threshold_gen: 9.0,
            var_init: 15.0,
            var_min: 4.0,
            var_max: 75.0,
            complexity_reduction: 0.05,
            // every component that has absorbed the pixel at least once is
            // background, so a persistent change is foreground for exactly
            // the frame on which it appears
            background_ratio: 1.0,
            fg_threshold: 10_000,
        }
    }
}

impl BackgroundModelParams {
    /// Foreground-pixel threshold scaled by pixel area relative to 1920x1080.
    pub fn scaled_threshold(&self, width: u32, height: u32) -> f64 {
        self.fg_threshold as f64 * (f64::from(width) * f64::from(height)) / (1920.0 * 1080.0)
    }

    pub fn is_changing(&self, foreground: u64, width: u32, height: u32) -> bool {
        foreground as f64 > self.scaled_threshold(width, height)
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Pixel {
    n: u8,
    weight: [f32; K],
    mean: [[f32; 3]; K],
    var: [f32; K],
}

impl Pixel {
    fn swap(&mut self, a: usize, b: usize) {
        self.weight.swap(a, b);
        self.mean.swap(a, b);
        self.var.swap(a, b);
    }

    /// Folds one observation into the mixture; returns true when it is
    /// foreground.
    fn update(&mut self, px: [f32; 3], alpha: f32, p: &BackgroundModelParams) -> bool {
        let alpha1 = 1.0 - alpha;
        let prune = -alpha * p.complexity_reduction;
        let mut fits = false;
        let mut background = false;
        let mut total = 0.0f32;
        let mut n = self.n as usize;

        let mut mode = 0;
        while mode < n {
            let mut weight = alpha1 * self.weight[mode] + prune;
            let mut slot = mode;
            if !fits {
                let var = self.var[mode];
                let d = [self.mean[mode][0] - px[0], self.mean[mode][1] - px[1], self.mean[mode][2] - px[2]];
                let dist2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
                if total < p.background_ratio && dist2 < p.var_threshold * var {
                    background = true;
                }
                if dist2 < p.var_threshold_gen * var {
                    fits = true;
                    weight += alpha;
                    let k = alpha / weight;
                    for (m, dc) in self.mean[mode].iter_mut().zip(d) {
                        *m -= k * dc;
                    }
                    self.var[mode] = (var + k * (dist2 - var)).clamp(p.var_min, p.var_max);
                    while slot > 0 && weight >= self.weight[slot - 1] {
                        self.swap(slot, slot - 1);
                        slot -= 1;
                    }
                }
            }
            if weight < -prune {
                weight = 0.0;
                n -= 1;
            }
            self.weight[slot] = weight;
            total += weight;
            mode += 1;
        }
        if total > 0.0 {
            for w in &mut self.weight[..n] {
                *w /= total;
            }
        }

        if !fits {
            let slot = if n == K {
                K - 1
            } else {
                n += 1;
                n - 1
            };
            if n == 1 {
                self.weight[slot] = 1.0;
            } else {
                self.weight[slot] = alpha;
                for w in &mut self.weight[..n - 1] {
                    *w *= alpha1;
                }
            }
            self.mean[slot] = px;
            self.var[slot] = p.var_init;
            let mut i = slot;
            while i > 0 && alpha >= self.weight[i - 1] {
                self.swap(i, i - 1);
                i -= 1;
            }
        }
        self.n = n as u8;
        !background
    }
}

/// Background model for one run of same-sized frames. The first frame only
/// initializes the model.
pub struct BackgroundModel {
    params: BackgroundModelParams,
    width: u32,
    height: u32,
    pixels: Vec<Pixel>,
    frames_seen: u32,
}

impl BackgroundModel {
    pub fn new(params: BackgroundModelParams, width: u32, height: u32) -> Self {
        Self { params, width, height, pixels: vec![Pixel::default(); width as usize * height as usize], frames_seen: 0 }
    }

    pub fn params(&self) -> &BackgroundModelParams {
        &self.params
    }

    /// Applies one frame and returns its foreground pixel count (zero for
    /// the initializing frame).
    pub fn apply(&mut self, frame: &RgbImage) -> u64 {
        assert_eq!(frame.dimensions(), (self.width, self.height), "frame size changed mid-sequence");
        self.frames_seen += 1;
        let alpha = 1.0 / (2 * self.frames_seen).min(self.params.history.max(1)) as f32;
        let params = self.params;
        let raw = frame.as_raw();
        let width = self.width as usize;
        let foreground: u64 = self
            .pixels
            .par_chunks_mut(width)
            .zip(raw.par_chunks(width * 3))
            .map(|(row, rgb)| {
                let mut count = 0u64;
                for (px, c) in row.iter_mut().zip(rgb.chunks_exact(3)) {
                    let obs = [f32::from(c[0]), f32::from(c[1]), f32::from(c[2])];
                    count += u64::from(px.update(obs, alpha, &params));
                }
                count
            })
            .sum();
        if self.frames_seen == 1 {
            0
        } else {
            foreground
        }
    }

    pub fn is_changing(&self, foreground: u64) -> bool {
        self.params.is_changing(foreground, self.width, self.height)
    }
}

#[cfg(test)]
mod tests {
    use image::Rgb;

    use super::*;

    fn solid(w: u32, h: u32, c: [u8; 3]) -> RgbImage {
        RgbImage::from_pixel(w, h, Rgb(c))
    }

    #[test]
    fn static_frames_have_no_foreground() {
        let mut m = BackgroundModel::new(BackgroundModelParams::default(), 16, 8);
        for _ in 0..20 {
            assert_eq!(m.apply(&solid(16, 8, [30, 30, 30])), 0);
        }
    }

    #[test]
    fn persistent_change_is_foreground_once() {
        let mut m = BackgroundModel::new(BackgroundModelParams::default(), 16, 8);
        let mut counts = Vec::new();
        for i in 0..30 {
            let mut f = solid(16, 8, [30, 30, 30]);
            if i >= 12 {
                for y in 0..4 {
                    for x in 0..5 {
                        f.put_pixel(x, y, Rgb([200, 40, 90]));
                    }
                }
            }
            counts.push(m.apply(&f));
        }
        assert_eq!(counts[12], 20);
        assert!(counts.iter().enumerate().all(|(i, &c)| i == 12 || c == 0), "{counts:?}");
    }

    #[test]
    fn threshold_scales_with_area() {
        let p = BackgroundModelParams::default();
        assert_eq!(p.scaled_threshold(1920, 1080), 10_000.0);
        assert_eq!(p.scaled_threshold(960, 540), 2_500.0);
        assert_eq!(p.scaled_threshold(3840, 2160), 40_000.0);
        assert!(!p.is_changing(10_000, 1920, 1080));
        assert!(p.is_changing(10_001, 1920, 1080));
    }
}
