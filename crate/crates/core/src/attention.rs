//! Attention kernels: the exact quadratic softmax oracle with explicit
//! positional matrices, kernelized linear attention, and the assembly that
//! folds per-dimension positional features into the query/key matrices so
//! the whole pipeline runs in linear time.

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{
    rff_features, sample_gaussian, sff_features, sub_seed, FeatureKind, FourierParams,
    PositionalFeatures, Side,
};
use crate::grid::StructuralGrid;

/// Smallest value a positive feature-map output may take; also the floor
/// added to linear-attention normalizers. Oracle comparisons add the same
/// floor so the two routes agree to rounding.
pub const NORMALIZER_FLOOR: f64 = 1e-9;

const POSITIVE_FLOOR: f64 = 1e-300;

/// Kernel feature map applied to assembled queries and keys.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureMapKind {
    /// `x + 1` for `x >= 0`, `exp(x)` below; deterministic and positive.
    EluPlusOne,
    /// `exp(x.w - |x|^2/2) / sqrt(D_phi)` with seeded Gaussian rows `w`.
    PositiveRandomFeatures,
}

/// Positional-encoding flavor used by the linear path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PeKind {
    None,
    Sff,
    Rff,
}

#[derive(Debug, Clone)]
pub struct AttentionConfig {
    pub heads: usize,
    pub head_dim: usize,
    pub causal: bool,
    pub feature_map: FeatureMapKind,
    pub pe_kind: PeKind,
    pub n_f: usize,
    pub realizations: usize,
}

impl AttentionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.head_dim == 0 {
            return Err(Error::invalid_argument("heads and head_dim must be at least 1"));
        }
        if self.pe_kind != PeKind::None && self.n_f == 0 {
            return Err(Error::invalid_argument("positional encoding needs n_f >= 1"));
        }
        if self.pe_kind == PeKind::Sff && self.realizations == 0 {
            return Err(Error::invalid_argument("stochastic features need realizations >= 1"));
        }
        Ok(())
    }
}

/// Per-head query/key/value matrices, optionally with positional grids
/// attached for the structure-aware path.
#[derive(Debug, Clone)]
pub struct AttentionInputs {
    pub q: Array2<f64>,
    pub k: Array2<f64>,
    pub v: Array2<f64>,
    pub grid_q: Option<StructuralGrid>,
    pub grid_k: Option<StructuralGrid>,
}

impl AttentionInputs {
    pub fn new(q: Array2<f64>, k: Array2<f64>, v: Array2<f64>) -> Result<Self> {
        if q.ncols() != k.ncols() {
            return Err(Error::invalid_argument(format!(
                "query width {} differs from key width {}",
                q.ncols(),
                k.ncols()
            )));
        }
        if k.nrows() != v.nrows() {
            return Err(Error::invalid_argument(format!(
                "key rows {} differ from value rows {}",
                k.nrows(),
                v.nrows()
            )));
        }
        for (name, m) in [("q", &q), ("k", &k), ("v", &v)] {
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid_argument(format!("{name} contains non-finite entries")));
            }
        }
        Ok(AttentionInputs { q, k, v, grid_q: None, grid_k: None })
    }

    pub fn with_grids(mut self, grid_q: StructuralGrid, grid_k: StructuralGrid) -> Result<Self> {
        if grid_q.len() != self.q.nrows() {
            return Err(Error::invalid_argument(format!(
                "query grid covers {} steps, query has {}",
                grid_q.len(),
                self.q.nrows()
            )));
        }
        if grid_k.len() != self.k.nrows() {
            return Err(Error::invalid_argument(format!(
                "key grid covers {} steps, key has {}",
                grid_k.len(),
                self.k.nrows()
            )));
        }
        self.grid_q = Some(grid_q);
        self.grid_k = Some(grid_k);
        Ok(self)
    }
}

/// Exact softmax attention with an optional additive positional matrix.
///
/// Logits are `q_m . k_n + P[m, n]`, tempered by `1/sqrt(D)`; the causal
/// flag masks `n > m` before normalization. Rows with every key masked
/// produce a zero output row.
pub fn softmax_attention(
    inputs: &AttentionInputs,
    positional: Option<&Array2<f64>>,
    causal: bool,
) -> Result<Array2<f64>> {
    let (t_q, t_k) = (inputs.q.nrows(), inputs.k.nrows());
    if let Some(p) = positional {
        if p.nrows() != t_q || p.ncols() != t_k {
            return Err(Error::invalid_argument(format!(
                "positional matrix is {}x{}, expected {}x{}",
                p.nrows(),
                p.ncols(),
                t_q,
                t_k
            )));
        }
    }
    if causal && t_q != t_k {
        return Err(Error::invalid_argument("causal attention requires square shapes"));
    }
    let mut logits = inputs.q.dot(&inputs.k.t());
    if let Some(p) = positional {
        logits += p;
    }
    softmax_attend(&logits, &inputs.v, inputs.q.ncols(), causal)
}

/// Row-softmax over pre-built logits followed by the weighted value sum.
/// Shared by the oracle path and the benchmark's quadratic method.
pub fn softmax_attend(
    logits: &Array2<f64>,
    values: &Array2<f64>,
    head_dim: usize,
    causal: bool,
) -> Result<Array2<f64>> {
    if logits.ncols() != values.nrows() {
        return Err(Error::invalid_argument(format!(
            "{} logit columns for {} value rows",
            logits.ncols(),
            values.nrows()
        )));
    }
    let temperature = (head_dim as f64).sqrt();
    let (t_q, t_k) = (logits.nrows(), logits.ncols());
    let mut out = Array2::zeros((t_q, values.ncols()));
    for m in 0..t_q {
        let visible = if causal { (m + 1).min(t_k) } else { t_k };
        if visible == 0 {
            continue; // all keys masked: zero row
        }
        let row = logits.row(m);
        let max = row.iter().take(visible).cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut normalizer = 0.0;
        let mut acc = Array1::zeros(values.ncols());
        for n in 0..visible {
            let w = ((row[n] - max) / temperature).exp();
            normalizer += w;
            acc.scaled_add(w, &values.row(n));
        }
        out.row_mut(m).assign(&(acc / normalizer));
    }
    Ok(out)
}

/// Exact relative-position logits: `a_mn = sum_d q[m,d] * P_d[m,n] * k[n,d]`.
///
/// This is the quantity the linear decomposition reproduces; it stands in
/// for the quadratic structure-aware baseline.
pub fn exact_rpe_logits(
    q: &Array2<f64>,
    k: &Array2<f64>,
    pd_stack: &[Array2<f64>],
) -> Result<Array2<f64>> {
    if q.ncols() != k.ncols() {
        return Err(Error::invalid_argument("query/key widths differ"));
    }
    if pd_stack.len() != q.ncols() {
        return Err(Error::invalid_argument(format!(
            "{} positional matrices for width {}",
            pd_stack.len(),
            q.ncols()
        )));
    }
    let (t_q, t_k) = (q.nrows(), k.nrows());
    let mut out = Array2::zeros((t_q, t_k));
    for (d, pd) in pd_stack.iter().enumerate() {
        if pd.nrows() != t_q || pd.ncols() != t_k {
            return Err(Error::invalid_argument(format!(
                "positional matrix {d} is {}x{}, expected {t_q}x{t_k}",
                pd.nrows(),
                pd.ncols()
            )));
        }
        for m in 0..t_q {
            let qmd = q[[m, d]];
            for n in 0..t_k {
                out[[m, n]] += qmd * pd[[m, n]] * k[[n, d]];
            }
        }
    }
    Ok(out)
}

/// Folds per-dimension positional features into the content matrices.
///
/// Block `d` of the output is `diag(Q[:, d]) * features_q[d] * c`, blocks
/// concatenated along the feature axis. The deterministic kind uses
/// `c = 1`; the stochastic kind uses `c = sqrt(2 / R)` so that the plain
/// product of the two sides equals `exact_rpe_logits` over the per-`d`
/// `positional_product` estimates, for either kind.
pub fn assemble_pe_qk(
    q: &Array2<f64>,
    k: &Array2<f64>,
    features_q: &[PositionalFeatures],
    features_k: &[PositionalFeatures],
) -> Result<(Array2<f64>, Array2<f64>)> {
    if q.ncols() != k.ncols() {
        return Err(Error::invalid_argument("query/key widths differ"));
    }
    let dim = q.ncols();
    if features_q.len() != dim || features_k.len() != dim {
        return Err(Error::invalid_argument(format!(
            "{} query and {} key feature matrices for width {dim}",
            features_q.len(),
            features_k.len()
        )));
    }
    if dim == 0 {
        return Err(Error::invalid_argument("head dimension must be at least 1"));
    }
    let kind = features_q[0].kind();
    let width = features_q[0].width();
    for f in features_q.iter().chain(features_k.iter()) {
        if f.kind() != kind {
            return Err(Error::invalid_argument("mixed feature kinds in assembly"));
        }
        if f.width() != width {
            return Err(Error::invalid_argument(format!(
                "feature width {} differs from {width}",
                f.width()
            )));
        }
    }
    let scale = match kind {
        FeatureKind::Rff => 1.0,
        FeatureKind::Sff => (2.0 / width as f64).sqrt(),
    };
    let assembled_q = assemble_side(q, features_q, scale)?;
    let assembled_k = assemble_side(k, features_k, scale)?;
    Ok((assembled_q, assembled_k))
}

fn assemble_side(
    content: &Array2<f64>,
    features: &[PositionalFeatures],
    scale: f64,
) -> Result<Array2<f64>> {
    let rows = content.nrows();
    let width = features[0].width();
    let mut out = Array2::zeros((rows, features.len() * width));
    for (d, f) in features.iter().enumerate() {
        if f.len() != rows {
            return Err(Error::invalid_argument(format!(
                "feature matrix {d} covers {} rows, content has {rows}",
                f.len()
            )));
        }
        for i in 0..rows {
            let c = content[[i, d]] * scale;
            for j in 0..width {
                out[[i, d * width + j]] = c * f.matrix()[[i, j]];
            }
        }
    }
    Ok(out)
}

/// Entrywise positive feature map. Both kinds return strictly positive
/// matrices for finite input.
pub fn feature_map(x: &Array2<f64>, kind: FeatureMapKind, seed: u64) -> Result<Array2<f64>> {
    if x.ncols() == 0 {
        return Err(Error::invalid_argument("feature map input needs at least one column"));
    }
    match kind {
        FeatureMapKind::EluPlusOne => Ok(x.mapv(elu_plus_one)),
        FeatureMapKind::PositiveRandomFeatures => {
            let dim = x.ncols();
            let omega = sample_gaussian(seed, dim, dim)?;
            Ok(positive_random_features(x, &omega))
        }
    }
}

pub(crate) fn elu_plus_one(v: f64) -> f64 {
    if v >= 0.0 {
        v + 1.0
    } else {
        v.exp().max(POSITIVE_FLOOR)
    }
}

pub(crate) fn positive_random_features(x: &Array2<f64>, omega: &Array2<f64>) -> Array2<f64> {
    let scale = 1.0 / (omega.ncols() as f64).sqrt();
    let projected = x.dot(omega);
    let mut out = projected;
    for (i, row) in x.axis_iter(Axis(0)).enumerate() {
        let half_sq = 0.5 * row.iter().map(|v| v * v).sum::<f64>();
        for v in out.row_mut(i).iter_mut() {
            *v = ((*v - half_sq).exp() * scale).max(POSITIVE_FLOOR);
        }
    }
    out
}

/// Kernelized attention over already-mapped queries and keys.
///
/// Non-causal output is `phiQ (phiKt V) / (phiQ (phiKt 1))` rowwise; the
/// causal path accumulates running prefix sums of `phi(k_n)t v_n` and
/// `phi(k_n)`, never materializing a `T x T` matrix. Extra memory is
/// `O(D_phi * D_v)`.
pub fn linear_attention(
    phi_q: &Array2<f64>,
    phi_k: &Array2<f64>,
    values: &Array2<f64>,
    causal: bool,
) -> Result<Array2<f64>> {
    if phi_q.ncols() != phi_k.ncols() {
        return Err(Error::invalid_argument("mapped query/key widths differ"));
    }
    if phi_k.nrows() != values.nrows() {
        return Err(Error::invalid_argument(format!(
            "{} mapped keys for {} value rows",
            phi_k.nrows(),
            values.nrows()
        )));
    }
    if causal && phi_q.nrows() != phi_k.nrows() {
        return Err(Error::invalid_argument("causal attention requires square shapes"));
    }
    for (name, m) in [("mapped queries", phi_q), ("mapped keys", phi_k)] {
        if m.iter().any(|&v| v <= 0.0 || !v.is_finite()) {
            return Err(Error::invalid_argument(format!(
                "{name} must be strictly positive and finite"
            )));
        }
    }
    let (t_q, d_v) = (phi_q.nrows(), values.ncols());
    let mut out = Array2::zeros((t_q, d_v));
    if causal {
        let d_phi = phi_q.ncols();
        let mut state = Array2::zeros((d_phi, d_v));
        let mut mass = Array1::zeros(d_phi);
        for n in 0..t_q {
            let key = phi_k.row(n);
            for (j, &kj) in key.iter().enumerate() {
                mass[j] += kj;
                let value = values.row(n);
                for (c, &vc) in value.iter().enumerate() {
                    state[[j, c]] += kj * vc;
                }
            }
            let query = phi_q.row(n);
            let normalizer = query.dot(&mass) + NORMALIZER_FLOOR;
            check_normalizer(normalizer, n)?;
            let numerator = query.dot(&state);
            out.row_mut(n).assign(&(numerator / normalizer));
        }
    } else {
        let summary = phi_k.t().dot(values); // D_phi x D_v
        let mass = phi_k.sum_axis(Axis(0)); // D_phi
        for m in 0..t_q {
            let query = phi_q.row(m);
            let normalizer = query.dot(&mass) + NORMALIZER_FLOOR;
            check_normalizer(normalizer, m)?;
            let numerator = query.dot(&summary);
            out.row_mut(m).assign(&(numerator / normalizer));
        }
    }
    Ok(out)
}

fn check_normalizer(normalizer: f64, row: usize) -> Result<()> {
    if !(normalizer > 0.0) || !normalizer.is_finite() {
        return Err(Error::Numeric(format!("attention normalizer {normalizer} at row {row}")));
    }
    Ok(())
}

/// Structure-informed linear attention end to end: per-dimension positional
/// features are built on the attached grids, folded into the content,
/// passed through the feature map, and attended in linear time.
///
/// `params` holds one parameter set per head dimension; the stochastic
/// kind draws its mixing matrix from each set's seed.
pub fn fstripe_attention(
    inputs: &AttentionInputs,
    params: &[FourierParams],
    config: &AttentionConfig,
) -> Result<Array2<f64>> {
    config.validate()?;
    let kind = match config.pe_kind {
        PeKind::Rff => FeatureKind::Rff,
        PeKind::Sff => FeatureKind::Sff,
        PeKind::None => {
            return Err(Error::invalid_argument(
                "structure-informed attention needs a positional kind; use linear_attention for none",
            ))
        }
    };
    let grid_q = inputs
        .grid_q
        .as_ref()
        .ok_or_else(|| Error::invalid_argument("inputs carry no query grid"))?;
    let grid_k = inputs
        .grid_k
        .as_ref()
        .ok_or_else(|| Error::invalid_argument("inputs carry no key grid"))?;
    let dim = inputs.q.ncols();
    if params.len() != dim {
        return Err(Error::invalid_argument(format!(
            "{} parameter sets for head dimension {dim}",
            params.len()
        )));
    }

    let mut features_q = Vec::with_capacity(dim);
    let mut features_k = Vec::with_capacity(dim);
    for p in params {
        match kind {
            FeatureKind::Rff => {
                features_q.push(rff_features(grid_q, p, Side::Query)?);
                features_k.push(rff_features(grid_k, p, Side::Key)?);
            }
            FeatureKind::Sff => {
                let z = sample_gaussian(p.seed(), 2 * p.n_f(), p.realizations())?;
                features_q.push(sff_features(grid_q, p, Side::Query, &z)?);
                features_k.push(sff_features(grid_k, p, Side::Key, &z)?);
            }
        }
    }
    let (assembled_q, assembled_k) = assemble_pe_qk(&inputs.q, &inputs.k, &features_q, &features_k)?;
    let map_seed = sub_seed(params[0].seed(), 0x00fe_a7fe);
    let phi_q = feature_map(&assembled_q, config.feature_map, map_seed)?;
    let phi_k = feature_map(&assembled_k, config.feature_map, map_seed)?;
    linear_attention(&phi_q, &phi_k, &inputs.v, config.causal)
}

/// Per-dimension parameter sets with sub-seeds derived from one base seed.
pub fn per_dimension_params(
    head_dim: usize,
    n_f: usize,
    levels: usize,
    realizations: usize,
    seed: u64,
) -> Result<Vec<FourierParams>> {
    (0..head_dim)
        .map(|d| FourierParams::init(n_f, levels, realizations, sub_seed(seed, d as u64)))
        .collect()
}
