//! Window dataset and its `.kdpw` file format.
//!
//! Layout (little-endian): magic `KDPW`, version u32, H u32, d_s u32, d_a u32,
//! N u64, flags u32 (bit 0 = rewards present), norm mean D×f32, norm std D×f32,
//! windows N×H×D f32, rewards N×H f32 when flagged, CRC32 of all preceding
//! bytes. A JSON manifest sits next to the file at `<path>.json`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::norm::NormStats;
use super::window::{TrajectoryWindow, WindowShape};
use crate::binio::{Reader, Writer};
use crate::error::{ensure_shape, Error, FormatError, Result};
use crate::numkit::Matrix;

pub const DATASET_MAGIC: [u8; 4] = *b"KDPW";
pub const DATASET_VERSION: u32 = 1;
const FLAG_REWARDS: u32 = 1;

/// Provenance written alongside a dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub env: String,
    pub env_config_version: u32,
    pub seed: u64,
    pub policy_id: String,
    pub episodes: usize,
    pub has_rewards: bool,
    /// Fraction of episodes per behaviour class (e.g. pass_left / pass_right).
    pub class_proportions: BTreeMap<String, f64>,
    /// Fraction of scripted episodes that satisfied the env's success test.
    pub scripted_success_rate: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WindowDataset {
    shape: WindowShape,
    windows: Vec<f32>,
    rewards: Option<Vec<f32>>,
    norm: NormStats,
    manifest: DatasetManifest,
}

impl WindowDataset {
    /// Builds a dataset from raw windows (N×H×D) and computes its norm stats.
    pub fn new(
        shape: WindowShape,
        windows: Vec<f32>,
        rewards: Option<Vec<f32>>,
        mut manifest: DatasetManifest,
    ) -> Result<Self> {
        ensure_shape!(
            !windows.is_empty() && windows.len().is_multiple_of(shape.numel()),
            "{} values do not form whole {}x{} windows",
            windows.len(),
            shape.horizon(),
            shape.width()
        );
        let norm = NormStats::compute(&windows, shape.width())?;
        manifest.has_rewards = rewards.is_some();
        Self::with_norm(shape, windows, rewards, norm, manifest)
    }

    fn with_norm(
        shape: WindowShape,
        windows: Vec<f32>,
        rewards: Option<Vec<f32>>,
        norm: NormStats,
        manifest: DatasetManifest,
    ) -> Result<Self> {
        let n = windows.len() / shape.numel();
        if let Some(r) = &rewards {
            ensure_shape!(r.len() == n * shape.horizon(), "{} rewards for {n} windows", r.len());
            if r.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("dataset rewards".into()));
            }
        }
        if windows.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dataset windows".into()));
        }
        ensure_shape!(norm.width() == shape.width(), "norm stats width {}", norm.width());
        if manifest.has_rewards != rewards.is_some() {
            return Err(Error::State("manifest reward flag disagrees with dataset".into()));
        }
        Ok(WindowDataset { shape, windows, rewards, norm, manifest })
    }

    pub fn shape(&self) -> WindowShape {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.windows.len() / self.shape.numel()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn norm(&self) -> &NormStats {
        &self.norm
    }

    pub fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }

    pub fn raw_values(&self) -> &[f32] {
        &self.windows
    }

    /// Raw values of window `i`.
    pub fn window_values(&self, i: usize) -> &[f32] {
        let n = self.shape.numel();
        &self.windows[i * n..(i + 1) * n]
    }

    pub fn window(&self, i: usize) -> TrajectoryWindow {
        TrajectoryWindow::from_values(self.shape, self.window_values(i).to_vec()).expect("validated on construction")
    }

    pub fn rewards(&self) -> Option<&[f32]> {
        self.rewards.as_deref()
    }

    pub fn window_rewards(&self, i: usize) -> Option<&[f32]> {
        let h = self.shape.horizon();
        self.rewards.as_ref().map(|r| &r[i * h..(i + 1) * h])
    }

    /// All windows, normalized, one flattened window per row.
    pub fn normalized_matrix(&self) -> Matrix {
        let mut v = self.windows.clone();
        self.norm.normalize(&mut v);
        Matrix::from_vec(self.len(), self.shape.numel(), v).expect("whole windows")
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new(&DATASET_MAGIC, DATASET_VERSION);
        w.u32(self.shape.horizon() as u32);
        w.u32(self.shape.state_dim() as u32);
        w.u32(self.shape.action_dim() as u32);
        w.u64(self.len() as u64);
        w.u32(if self.rewards.is_some() { FLAG_REWARDS } else { 0 });
        w.f32s(&self.norm.mean);
        w.f32s(&self.norm.std);
        w.f32s(&self.windows);
        if let Some(r) = &self.rewards {
            w.f32s(r);
        }
        w.finish()
    }

    pub fn decode(bytes: &[u8], manifest: DatasetManifest) -> Result<Self> {
        let mut r = Reader::open(bytes, &DATASET_MAGIC, DATASET_VERSION)?;
        let (h, ds, da) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
        let shape = WindowShape::new(h, ds, da).map_err(|e| FormatError::Header(e.to_string()))?;
        let n = usize::try_from(r.u64()?).map_err(|_| FormatError::Header("window count overflow".into()))?;
        let flags = r.u32()?;
        if flags & !FLAG_REWARDS != 0 {
            return Err(FormatError::Header(format!("unknown flags {flags:#x}")).into());
        }
        let has_rewards = flags & FLAG_REWARDS != 0;
        let d = shape.width();
        let payload = n
            .checked_mul(shape.numel())
            .and_then(|p| p.checked_add(if has_rewards { n * h } else { 0 }))
            .and_then(|p| p.checked_add(2 * d))
            .ok_or_else(|| FormatError::Header("payload size overflow".into()))?;
        r.expect_body(payload * 4)?;
        let mean = r.f32s(d)?;
        let std = r.f32s(d)?;
        if std.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(FormatError::Header("non-positive norm std".into()).into());
        }
        let windows = r.f32s(n * shape.numel())?;
        let rewards = if has_rewards { Some(r.f32s(n * h)?) } else { None };
        if manifest.has_rewards != has_rewards {
            return Err(FormatError::Header("reward flag disagrees with manifest".into()).into());
        }
        Self::with_norm(shape, windows, rewards, NormStats { mean, std }, manifest)
    }

    pub fn manifest_path(path: &Path) -> PathBuf {
        let mut p = path.as_os_str().to_owned();
        p.push(".json");
        PathBuf::from(p)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode()).map_err(|e| Error::io(path, e))?;
        let mpath = Self::manifest_path(path);
        let json = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        fs::write(&mpath, json + "\n").map_err(|e| Error::io(&mpath, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let mpath = Self::manifest_path(path);
        let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
        let manifest: DatasetManifest =
            serde_json::from_str(&text).map_err(|e| FormatError::Header(format!("manifest: {e}")))?;
        Self::decode(&bytes, manifest)
    }
}

/// Stride-1 windows over one episode. Returns `(windows, rewards)` flat
/// buffers; an episode shorter than `H` yields nothing.
pub fn sliding_windows(
    shape: WindowShape,
    states: &[Vec<f32>],
    actions: &[Vec<f32>],
    rewards: &[f32],
) -> Result<(Vec<f32>, Vec<f32>)> {
    let t = states.len();
    ensure_shape!(
        actions.len() == t && rewards.len() == t,
        "episode has {t} states, {} actions, {} rewards",
        actions.len(),
        rewards.len()
    );
    let h = shape.horizon();
    let mut windows = Vec::new();
    let mut rs = Vec::new();
    if t < h {
        return Ok((windows, rs));
    }
    for (s, a) in states.iter().zip(actions) {
        ensure_shape!(
            s.len() == shape.state_dim() && a.len() == shape.action_dim(),
            "step with {} state / {} action dims",
            s.len(),
            a.len()
        );
    }
    for start in 0..=t - h {
        for k in start..start + h {
            windows.extend_from_slice(&states[k]);
            windows.extend_from_slice(&actions[k]);
        }
        rs.extend_from_slice(&rewards[start..start + h]);
    }
    Ok((windows, rs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    pub(crate) fn manifest() -> DatasetManifest {
        DatasetManifest {
            env: "test".into(),
            env_config_version: 1,
            seed: 0,
            policy_id: "none".into(),
            episodes: 1,
            has_rewards: true,
            class_proportions: BTreeMap::new(),
            scripted_success_rate: 1.0,
        }
    }

    fn dataset(n: usize, rewards: bool) -> WindowDataset {
        let shape = WindowShape::new(3, 2, 1).unwrap();
        let mut r = rng::seeded(4);
        let mut w = vec![0.0; n * shape.numel()];
        rng::fill_normal(&mut r, &mut w);
        let rw = rewards.then(|| (0..n * 3).map(|i| -(i as f32)).collect());
        WindowDataset::new(shape, w, rw, manifest()).unwrap()
    }

    #[test]
    fn round_trip_bit_exact() {
        for rewards in [true, false] {
            let ds = dataset(10, rewards);
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("d.kdpw");
            ds.save(&p).unwrap();
            let back = WindowDataset::load(&p).unwrap();
            let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(back.raw_values()), bits(ds.raw_values()));
            assert_eq!(back, ds);
            assert_eq!(back.encode(), ds.encode());
        }
    }

    #[test]
    fn truncation_and_corruption() {
        let ds = dataset(10, true);
        let bytes = ds.encode();
        let m = ds.manifest().clone();
        let mid = bytes.len() / 2;
        assert!(matches!(
            WindowDataset::decode(&bytes[..mid], m.clone()),
            Err(Error::Format(FormatError::Truncated { .. }))
        ));
        let mut flipped = bytes.clone();
        flipped[mid] ^= 0x40;
        assert!(matches!(WindowDataset::decode(&flipped, m.clone()), Err(Error::Format(FormatError::Crc { .. }))));
        let mut magic = bytes.clone();
        magic[1] = 0;
        assert!(matches!(
            WindowDataset::decode(&magic, m.clone()),
            Err(Error::Format(FormatError::BadMagic { .. }))
        ));
        let mut ver = bytes;
        ver[4] = 2;
        assert!(matches!(
            WindowDataset::decode(&ver, m),
            Err(Error::Format(FormatError::VersionMismatch { .. }))
        ));
    }

    #[test]
    fn normalized_statistics() {
        let shape = WindowShape::new(2, 2, 1).unwrap();
        let mut r = rng::seeded(8);
        let mut w = vec![0.0; 1000 * shape.numel()];
        rng::fill_normal(&mut r, &mut w);
        w.iter_mut().enumerate().for_each(|(i, x)| *x = *x * (0.5 + (i % 3) as f32) - 4.0 + (i % 3) as f32);
        let ds = WindowDataset::new(shape, w, None, manifest()).unwrap();
        let norm = NormStats::compute(ds.normalized_matrix().as_slice(), 3).unwrap();
        for k in 0..3 {
            assert!(norm.mean[k].abs() < 1e-5, "mean {}", norm.mean[k]);
            assert!((norm.std[k] - 1.0).abs() < 1e-4, "std {}", norm.std[k]);
        }
    }

    #[test]
    fn sliding_window_extraction() {
        let shape = WindowShape::new(3, 1, 1).unwrap();
        let states: Vec<Vec<f32>> = (0..5).map(|i| vec![i as f32]).collect();
        let actions: Vec<Vec<f32>> = (0..5).map(|i| vec![10.0 + i as f32]).collect();
        let rewards: Vec<f32> = (0..5).map(|i| -(i as f32)).collect();
        let (w, r) = sliding_windows(shape, &states, &actions, &rewards).unwrap();
        assert_eq!(w.len(), 3 * shape.numel());
        assert_eq!(&w[6..12], &[1.0, 11.0, 2.0, 12.0, 3.0, 13.0]);
        assert_eq!(&r[6..9], &[-2.0, -3.0, -4.0]);
        let (w, _) = sliding_windows(shape, &states[..2], &actions[..2], &rewards[..2]).unwrap();
        assert!(w.is_empty());
    }
}
