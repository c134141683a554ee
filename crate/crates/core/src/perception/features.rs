use serde::{Deserialize, Serialize};

/// Fixed, non-learned transform from pixels to regressor inputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FeatureMap {
    /// Pixel intensities as they are.
    Raw,
    /// Two channels: pixels brighter and darker than the image median by
    /// more than `threshold`, each scaled to unit mass per pixel. Scaling
    /// makes glyph centroids linear in the features regardless of the
    /// background level or glyph size.
    ContrastChannels { threshold: f64 },
}

impl Default for FeatureMap {
    fn default() -> Self {
        FeatureMap::ContrastChannels { threshold: 0.05 }
    }
}

impl FeatureMap {
    pub fn dim(&self, resolution: u32) -> usize {
        let n = resolution as usize * resolution as usize;
        match self {
            FeatureMap::Raw => n,
            FeatureMap::ContrastChannels { .. } => 2 * n,
        }
    }

    pub fn apply(&self, pixels: &[f32]) -> Vec<f64> {
        match *self {
            FeatureMap::Raw => pixels.iter().map(|&p| p as f64).collect(),
            FeatureMap::ContrastChannels { threshold } => contrast_channels(pixels, threshold),
        }
    }
}

fn median(pixels: &[f32]) -> f64 {
    if pixels.is_empty() {
        return 0.0;
    }
    let mut v = pixels.to_vec();
    let mid = v.len() / 2;
    let (_, m, _) = v.select_nth_unstable_by(mid, f32::total_cmp);
    *m as f64
}

fn contrast_channels(pixels: &[f32], threshold: f64) -> Vec<f64> {
    let n = pixels.len();
    let med = median(pixels);
    let mut out = vec![0.0; 2 * n];
    let (bright, dark) = out.split_at_mut(n);
    for (i, &p) in pixels.iter().enumerate() {
        let p = p as f64;
        bright[i] = (p - med - threshold).max(0.0);
        dark[i] = (med - p - threshold).max(0.0);
    }
    for ch in [bright, dark] {
        let mass: f64 = ch.iter().sum();
        if mass > 0.0 {
            let s = n as f64 / mass;
            ch.iter_mut().for_each(|v| *v *= s);
        }
    }
    out
}

/// Input description stored with a model: resolution, feature transform and
/// standardization statistics fitted on the training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputSpec {
    pub resolution: u32,
    pub feature_map: FeatureMap,
    /// Per-feature mean. Empty for models that do not read pixels.
    pub mean: Vec<f64>,
    /// Global feature scale (root mean feature variance).
    pub scale: f64,
}

impl InputSpec {
    pub fn bare(resolution: u32) -> Self {
        InputSpec { resolution, feature_map: FeatureMap::Raw, mean: Vec::new(), scale: 1.0 }
    }

    pub fn fit(resolution: u32, feature_map: FeatureMap, rows: &[Vec<f64>]) -> Self {
        let d = feature_map.dim(resolution);
        let n = rows.len().max(1) as f64;
        let mut mean = vec![0.0; d];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = 0.0;
        for r in rows {
            for (m, v) in mean.iter().zip(r) {
                var += (v - m) * (v - m);
            }
        }
        let scale = (var / (n * d.max(1) as f64)).sqrt();
        let scale = if scale > 1e-12 { scale } else { 1.0 };
        InputSpec { resolution, feature_map, mean, scale }
    }

    pub fn dim(&self) -> usize {
        self.feature_map.dim(self.resolution)
    }

    /// Feature transform followed by standardization.
    pub fn encode(&self, pixels: &[f32]) -> Vec<f64> {
        let mut f = self.feature_map.apply(pixels);
        if !self.mean.is_empty() {
            for (v, m) in f.iter_mut().zip(&self.mean) {
                *v = (*v - m) / self.scale;
            }
        }
        f
    }
}
