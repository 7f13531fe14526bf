//! Keyed attraction/repulsion drift field over a minibatch of generated
//! windows, in normalized window space.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_shape, Error, Result};
use crate::numkit::{gemm, Matrix};
use crate::trajkit::{ConstraintMask, WindowShape};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftConfig {
    pub temperatures: Vec<f32>,
    pub epsilon: f32,
    pub use_keying: bool,
    pub mask_self_negatives: bool,
    pub repulsion_enabled: bool,
    pub normalize_drift: bool,
}

impl Default for DriftConfig {
    fn default() -> Self {
        DriftConfig {
            temperatures: vec![0.02, 0.05, 0.1, 0.2],
            epsilon: 1e-6,
            use_keying: true,
            mask_self_negatives: true,
            repulsion_enabled: true,
            normalize_drift: true,
        }
    }
}

impl DriftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.temperatures.is_empty() {
            return Err(Error::Config("drift needs at least one temperature".into()));
        }
        if self.temperatures.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
            return Err(Error::Config(format!("temperatures must be > 0, got {:?}", self.temperatures)));
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::Config(format!("epsilon must be > 0, got {}", self.epsilon)));
        }
        Ok(())
    }
}

/// Training-objective ablations; each flips exactly one [`DriftConfig`] setting.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    Full,
    NoKeying,
    IncludeSelfNegatives,
    AttractionOnly,
    NoDriftNorm,
    SingleTau,
}

pub const SINGLE_TAU: f32 = 0.05;

impl Ablation {
    pub const ALL: [Ablation; 6] = [
        Ablation::Full,
        Ablation::NoKeying,
        Ablation::IncludeSelfNegatives,
        Ablation::AttractionOnly,
        Ablation::NoDriftNorm,
        Ablation::SingleTau,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoKeying => "no_keying",
            Ablation::IncludeSelfNegatives => "include_self_negatives",
            Ablation::AttractionOnly => "attraction_only",
            Ablation::NoDriftNorm => "no_drift_norm",
            Ablation::SingleTau => "single_tau",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|a| a.name() == s).ok_or_else(|| {
            let names: Vec<_> = Self::ALL.iter().map(|a| a.name()).collect();
            Error::Config(format!("unknown ablation {s:?} (expected one of {})", names.join(", ")))
        })
    }

    pub fn apply(self, cfg: &mut DriftConfig) {
        match self {
            Ablation::Full => {}
            Ablation::NoKeying => cfg.use_keying = false,
            Ablation::IncludeSelfNegatives => cfg.mask_self_negatives = false,
            Ablation::AttractionOnly => cfg.repulsion_enabled = false,
            Ablation::NoDriftNorm => cfg.normalize_drift = false,
            Ablation::SingleTau => cfg.temperatures = vec![SINGLE_TAU],
        }
    }
}

/// Drift vectors plus every intermediate, kept for inspection.
#[derive(Clone, Debug)]
pub struct DriftBatch {
    /// B × (H·D) drift, masked and (if enabled) normalized.
    pub v: Matrix,
    /// Gen-vs-data distances, B × B.
    pub d_plus: Matrix,
    /// Gen-vs-gen distances, B × B, diagonal unmasked.
    pub d_minus: Matrix,
    /// Per-temperature attraction weights.
    pub w_plus: Vec<Matrix>,
    /// Per-temperature repulsion weights (empty when repulsion is disabled).
    pub w_minus: Vec<Matrix>,
    /// Per-sample RMS after masking, before normalization.
    pub raw_rms: Vec<f32>,
    /// Set when self-masking left no negatives (B = 1).
    pub degenerate_repulsion: bool,
}

impl DriftBatch {
    pub fn mean_raw_rms(&self) -> f32 {
        (self.raw_rms.iter().map(|&r| r as f64).sum::<f64>() / self.raw_rms.len().max(1) as f64) as f32
    }

    /// Mean Shannon entropy (nats) of the attraction weight rows, over rows and temperatures.
    pub fn wplus_entropy(&self) -> f32 {
        let mut total = 0.0f64;
        let mut rows = 0usize;
        for w in &self.w_plus {
            for r in 0..w.rows() {
                total -= w.row(r).iter().filter(|&&p| p > 0.0).map(|&p| p as f64 * (p as f64).ln()).sum::<f64>();
                rows += 1;
            }
        }
        (total / rows.max(1) as f64) as f32
    }

    /// One CSV row per `(i, j, tau)` weight.
    pub fn write_csv<W: std::io::Write>(&self, temperatures: &[f32], out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let err = |e: csv::Error| Error::State(format!("writing drift dump: {e}"));
        w.write_record(["tau", "i", "j", "d_plus", "d_minus", "w_plus", "w_minus"]).map_err(err)?;
        for (m, tau) in temperatures.iter().enumerate() {
            let wp = &self.w_plus[m];
            for i in 0..wp.rows() {
                for j in 0..wp.cols() {
                    let wm = self.w_minus.get(m).map(|x| x.get(i, j)).unwrap_or(0.0);
                    w.write_record([
                        tau.to_string(),
                        i.to_string(),
                        j.to_string(),
                        self.d_plus.get(i, j).to_string(),
                        self.d_minus.get(i, j).to_string(),
                        wp.get(i, j).to_string(),
                        wm.to_string(),
                    ])
                    .map_err(err)?;
                }
            }
        }
        w.flush().map_err(|e| Error::State(format!("writing drift dump: {e}")))
    }
}

fn dist64(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// Pairwise distances between the rows of `a` and `b` over columns `0..cols`.
fn pairwise(a: &Matrix, b: &Matrix, cols: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(a.rows() * b.rows());
    for i in 0..a.rows() {
        for j in 0..b.rows() {
            out.push(dist64(&a.row(i)[..cols], &b.row(j)[..cols]));
        }
    }
    out
}

fn check_batch(gen: &Matrix, data: &Matrix, shape: WindowShape) -> Result<()> {
    ensure_shape!(
        gen.cols() == shape.numel() && data.cols() == shape.numel(),
        "batches have {} and {} columns, windows have {}",
        gen.cols(),
        data.cols(),
        shape.numel()
    );
    ensure_shape!(
        gen.rows() == data.rows() && gen.rows() > 0,
        "generated batch of {} vs data batch of {}",
        gen.rows(),
        data.rows()
    );
    Ok(())
}

fn distances64(gen: &Matrix, data: &Matrix, shape: WindowShape, cfg: &DriftConfig) -> (Vec<f64>, Vec<f64>) {
    let cols = if cfg.use_keying { shape.state_dim() } else { shape.numel() };
    (pairwise(gen, data, cols), pairwise(gen, gen, cols))
}

fn to_matrix(b: usize, d: &[f64]) -> Matrix {
    Matrix::from_vec(b, b, d.iter().map(|&v| v as f32).collect()).expect("square")
}

/// `(D⁺, D⁻)`: gen-vs-data and gen-vs-gen distances on keys (or whole windows
/// with keying off). Batches hold one flattened window per row.
pub fn distance_matrices(gen: &Matrix, data: &Matrix, shape: WindowShape, cfg: &DriftConfig) -> Result<(Matrix, Matrix)> {
    check_batch(gen, data, shape)?;
    let (dp, dm) = distances64(gen, data, shape, cfg);
    Ok((to_matrix(gen.rows(), &dp), to_matrix(gen.rows(), &dm)))
}

/// Row softmax of `-d/τ` with max subtraction. With `mask_diagonal` the
/// diagonal is excluded and set to exactly 0; a 1×1 masked row is all zero.
fn softmax64(d: &[f64], n_rows: usize, tau: f64, mask_diagonal: bool) -> Matrix {
    let n_cols = d.len() / n_rows;
    let mut out = Matrix::zeros(n_rows, n_cols);
    let mut logits = vec![0.0f64; n_cols];
    for i in 0..n_rows {
        let row = &d[i * n_cols..(i + 1) * n_cols];
        let mut max = f64::NEG_INFINITY;
        for (j, (l, &dij)) in logits.iter_mut().zip(row).enumerate() {
            *l = if mask_diagonal && i == j { f64::NEG_INFINITY } else { -dij / tau };
            max = max.max(*l);
        }
        if max == f64::NEG_INFINITY {
            continue;
        }
        let mut sum = 0.0;
        for l in logits.iter_mut() {
            *l = (*l - max).exp();
            sum += *l;
        }
        for (o, l) in out.row_mut(i).iter_mut().zip(&logits) {
            *o = (l / sum) as f32;
        }
    }
    out
}

pub fn softmax_weights(d: &Matrix, tau: f32, mask_diagonal: bool) -> Result<Matrix> {
    if !(tau.is_finite() && tau > 0.0) {
        return Err(Error::Config(format!("temperature must be > 0, got {tau}")));
    }
    if mask_diagonal {
        ensure_shape!(d.rows() == d.cols(), "diagonal mask on a {}x{} matrix", d.rows(), d.cols());
    }
    let d64: Vec<f64> = d.as_slice().iter().map(|&v| v as f64).collect();
    Ok(softmax64(&d64, d.rows(), tau as f64, mask_diagonal))
}

/// Zeroes clamped coordinates of one flattened window's drift.
pub fn mask_drift(v: &mut [f32], mask: &ConstraintMask) {
    mask.apply(v);
}

/// `v / (rms(v) + ε)` for one window's drift; returns the pre-normalization RMS.
pub fn normalize_drift(v: &mut [f32], eps: f32) -> f32 {
    let rms = rms(v);
    let scale = 1.0 / (rms as f64 + eps as f64);
    v.iter_mut().for_each(|x| *x = (*x as f64 * scale) as f32);
    rms
}

fn rms(v: &[f32]) -> f32 {
    (v.iter().map(|&x| x as f64 * x as f64).sum::<f64>() / v.len() as f64).sqrt() as f32
}

/// Keyed drift for a batch of generated windows `gen` (already clamped)
/// against data windows `data`. `masks` holds one mask per sample, or a
/// single mask shared by all.
pub fn drift_field(
    gen: &Matrix,
    data: &Matrix,
    shape: WindowShape,
    masks: &[ConstraintMask],
    cfg: &DriftConfig,
) -> Result<DriftBatch> {
    cfg.validate()?;
    check_batch(gen, data, shape)?;
    let b = gen.rows();
    ensure_shape!(masks.len() == 1 || masks.len() == b, "{} masks for a batch of {b}", masks.len());
    ensure_shape!(masks.iter().all(|m| m.shape() == shape), "mask shape differs from window shape");
    let (dp, dm) = distances64(gen, data, shape, cfg);
    let degenerate = cfg.repulsion_enabled && cfg.mask_self_negatives && b == 1;
    if degenerate {
        log::warn!("batch of one with self-masking has no negatives; repulsion is zero");
    }
    let m = cfg.temperatures.len() as f32;
    let mut v = Matrix::zeros(b, shape.numel());
    let mut w_plus = Vec::with_capacity(cfg.temperatures.len());
    let mut w_minus = Vec::new();
    for &tau in &cfg.temperatures {
        let wp = softmax64(&dp, b, tau as f64, false);
        gemm(1.0 / m, &wp, false, data, false, 1.0, &mut v)?;
        w_plus.push(wp);
        if cfg.repulsion_enabled {
            let wm = softmax64(&dm, b, tau as f64, cfg.mask_self_negatives);
            gemm(-1.0 / m, &wm, false, gen, false, 1.0, &mut v)?;
            w_minus.push(wm);
        }
    }
    if !cfg.repulsion_enabled {
        for (o, x) in v.as_mut_slice().iter_mut().zip(gen.as_slice()) {
            *o -= x;
        }
    }
    let mut raw_rms = Vec::with_capacity(b);
    for i in 0..b {
        let row = v.row_mut(i);
        mask_drift(row, &masks[if masks.len() == 1 { 0 } else { i }]);
        raw_rms.push(if cfg.normalize_drift { normalize_drift(row, cfg.epsilon) } else { rms(row) });
    }
    if !v.is_finite() {
        return Err(Error::NonFinite(format!("drift field (mean raw rms {:?})", raw_rms.iter().sum::<f32>() / b as f32)));
    }
    Ok(DriftBatch {
        v,
        d_plus: to_matrix(b, &dp),
        d_minus: to_matrix(b, &dm),
        w_plus,
        w_minus,
        raw_rms,
        degenerate_repulsion: degenerate,
    })
}
