//! Physically coupled test scenes: a frozen-shape internal wave and a moving
//! source observed on the array at regular snapshot times.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataset::{array_fields, image_axes, image_pair, ArraySpec, DatasetError, ImagePair};
use crate::modes::Band;
use crate::nliw::{CoupledBand, NliwError, SceneTimeline};
use crate::rng::sample_stream;
use crate::scalar::Real;

/// Array, band and imaging settings shared by every snapshot.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub array: ArraySpec,
    pub band: Band,
    pub source_depth: f64,
    pub image_size: usize,
    #[serde(default)]
    pub snr_db: Option<f64>,
    pub seed: u64,
}

/// Distorted snapshot and its clean label at time `t`.
///
/// The wave's coupling matrices in `scene` do not depend on where the wave
/// sits, so one [`CoupledBand`] serves the whole timeline. Noise for snapshot
/// `k` comes from `sample_stream(spec.seed, k)`.
pub fn scene_snapshot<T: Real>(
    scene: &CoupledBand<T>,
    timeline: &SceneTimeline,
    spec: &SceneSpec,
    snapshot: u64,
) -> Result<ImagePair<T>, DatasetError> {
    let t = snapshot as f64 * timeline.interval;
    if t > timeline.duration + 1e-9 {
        return Err(DatasetError::InvalidSpec(NliwError::InvalidTimeline(format!("t = {t} s past the window")).to_string()));
    }
    let r_s = timeline.source_range(t);
    let r_l = timeline.nliw_range(t);
    if scene.modes.len() != spec.band.len() {
        return Err(DatasetError::InvalidSpec(format!(
            "scene has {} frequencies, band has {}",
            scene.modes.len(),
            spec.band.len()
        )));
    }
    let geometry = spec.array.geometry::<T>(r_s)?;
    let (clean, coupled) =
        array_fields(&scene.modes, &scene.couplings, &geometry, T::lit(spec.source_depth), T::lit(r_s - r_l))?;
    let axes = image_axes(&spec.array, &spec.band, r_s);
    let mut rng = sample_stream(spec.seed, snapshot);
    let mut pair = image_pair(&clean, &coupled, axes, spec.snr_db, spec.image_size, &mut rng)?;
    let mut meta = BTreeMap::new();
    meta.insert("kind".to_string(), format!("{:?}", scene.shape.kind).to_lowercase());
    meta.insert("snapshot".to_string(), snapshot.to_string());
    meta.insert("t".to_string(), format!("{t}"));
    meta.insert("r_s".to_string(), format!("{r_s}"));
    meta.insert("r_l".to_string(), format!("{r_l}"));
    meta.insert("amplitude".to_string(), format!("{}", scene.shape.amplitude));
    meta.insert("width".to_string(), format!("{}", scene.shape.width));
    meta.insert("snr_db".to_string(), spec.snr_db.map_or("inf".into(), |s| format!("{s}")));
    pair.distorted.meta = meta.clone();
    pair.clean.meta = meta;
    Ok(pair)
}

/// Every snapshot of the timeline, in time order.
pub fn scene_series<T: Real>(
    scene: &CoupledBand<T>,
    timeline: &SceneTimeline,
    spec: &SceneSpec,
) -> Result<Vec<ImagePair<T>>, DatasetError> {
    use rayon::prelude::*;
    timeline.validate().map_err(|e| DatasetError::InvalidSpec(e.to_string()))?;
    let n = timeline.times().len() as u64;
    (0..n).into_par_iter().map(|k| scene_snapshot(scene, timeline, spec, k)).collect()
}
