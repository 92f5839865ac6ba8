//! Wall-clock and allocation scaling harness: exact quadratic softmax
//! attention with relative positional matrices against the linear
//! structure-informed path, on identical random inputs.
//!
//! Runs are single-threaded unless a thread count is requested, in which
//! case only the embarrassingly parallel per-dimension feature
//! construction fans out; results are bit-identical either way.

use std::time::Instant;

use ndarray::{Array2, Axis};

use crate::alloc_track;
use crate::attention::{assemble_pe_qk, feature_map, linear_attention, softmax_attend, FeatureMapKind};
use crate::error::{Error, Result};
use crate::features::{rff_features, sub_seed, FourierParams, PositionalFeatures, Side};
use crate::grid::{linear_grid, StructuralGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenchMethod {
    /// Materializes the full `T x T` relative-position logits, then row
    /// softmax: quadratic time and memory.
    ExactSoftmaxRpe,
    /// Positional feature assembly plus kernelized attention: linear.
    FStripe,
}

impl BenchMethod {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "exact" => Ok(BenchMethod::ExactSoftmaxRpe),
            "fstripe" => Ok(BenchMethod::FStripe),
            other => Err(Error::invalid_argument(format!(
                "unknown method \"{other}\" (expected exact or fstripe)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            BenchMethod::ExactSoftmaxRpe => "exact",
            BenchMethod::FStripe => "fstripe",
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub head_dim: usize,
    pub n_f: usize,
    pub value_dim: usize,
    /// Timed repetitions per point; the report carries the median.
    pub reps: usize,
    pub seed: u64,
    pub threads: usize,
    /// Estimated-allocation cap for the exact method; larger runs are
    /// reported as skipped rows instead of attempted.
    pub max_exact_bytes: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            head_dim: 4,
            n_f: 4,
            value_dim: 8,
            reps: 5,
            seed: 0,
            threads: 1,
            max_exact_bytes: 4 << 30,
        }
    }
}

/// One measured point.
#[derive(Debug, Clone)]
pub struct BenchRow {
    pub method: &'static str,
    pub len: usize,
    pub wall_ns: u128,
    pub peak_extra_bytes: usize,
    pub status: String,
}

/// Runs every requested method over every length. Lengths must be at
/// least two strictly increasing values so ratios are meaningful.
pub fn run_bench(
    methods: &[BenchMethod],
    lengths: &[usize],
    config: &BenchConfig,
) -> Result<Vec<BenchRow>> {
    if methods.is_empty() {
        return Err(Error::invalid_argument("no methods requested"));
    }
    if lengths.len() < 2 {
        return Err(Error::invalid_argument("need at least two lengths to compare scaling"));
    }
    if !lengths.windows(2).all(|w| w[0] < w[1]) {
        return Err(Error::invalid_argument("lengths must be strictly increasing"));
    }
    if lengths[0] == 0 {
        return Err(Error::invalid_argument("lengths must be positive"));
    }
    if config.reps < 5 {
        return Err(Error::invalid_argument("medians need at least 5 repetitions"));
    }
    if config.threads == 0 {
        return Err(Error::invalid_argument("thread count must be at least 1"));
    }
    let params: Vec<FourierParams> = (0..config.head_dim)
        .map(|d| FourierParams::init(config.n_f, 1, 1, sub_seed(config.seed, d as u64)))
        .collect::<Result<_>>()?;

    let mut rows = Vec::new();
    for &method in methods {
        for &len in lengths {
            rows.push(run_point(method, len, &params, config)?);
        }
    }
    Ok(rows)
}

fn run_point(
    method: BenchMethod,
    len: usize,
    params: &[FourierParams],
    config: &BenchConfig,
) -> Result<BenchRow> {
    if method == BenchMethod::ExactSoftmaxRpe {
        let estimate = exact_bytes_estimate(len, config);
        if estimate > config.max_exact_bytes {
            return Ok(BenchRow {
                method: method.name(),
                len,
                wall_ns: 0,
                peak_extra_bytes: estimate,
                status: "skipped-oom".into(),
            });
        }
    }
    let grid = linear_grid(len)?;
    let point_seed = sub_seed(config.seed, len as u64);
    let q = random_matrix(len, config.head_dim, sub_seed(point_seed, 1));
    let k = random_matrix(len, config.head_dim, sub_seed(point_seed, 2));
    let v = random_matrix(len, config.value_dim, sub_seed(point_seed, 3));

    let run = || -> Result<Array2<f64>> {
        match method {
            BenchMethod::ExactSoftmaxRpe => exact_softmax_rpe(&q, &k, &v, &grid, params),
            BenchMethod::FStripe => fstripe_linear(&q, &k, &v, &grid, params, config.threads),
        }
    };

    run()?; // warmup
    let mut samples = Vec::with_capacity(config.reps);
    for _ in 0..config.reps {
        let start = Instant::now();
        std::hint::black_box(run()?);
        samples.push(start.elapsed().as_nanos());
    }
    samples.sort_unstable();
    let wall_ns = samples[samples.len() / 2];

    alloc_track::reset_window();
    std::hint::black_box(run()?);
    let peak_extra_bytes = alloc_track::peak_extra_bytes();

    Ok(BenchRow { method: method.name(), len, wall_ns, peak_extra_bytes, status: "ok".into() })
}

fn exact_bytes_estimate(len: usize, config: &BenchConfig) -> usize {
    let logits = len * len * 8;
    let tables = 2 * len * 2 * config.n_f * config.head_dim * 8;
    let output = len * config.value_dim * 8;
    logits + tables + output
}

fn random_matrix(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    use rand::Rng;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
}

/// Quadratic baseline: accumulates the exact relative-position logits
/// `sum_d diag(q_d) P_d diag(k_d)` into one `T x T` matrix (each `P_d`
/// enters through its exact feature factorization), then performs the
/// full softmax-weighted sum.
fn exact_softmax_rpe(
    q: &Array2<f64>,
    k: &Array2<f64>,
    v: &Array2<f64>,
    grid: &StructuralGrid,
    params: &[FourierParams],
) -> Result<Array2<f64>> {
    let len = grid.len();
    let mut logits = Array2::zeros((len, len));
    for (d, p) in params.iter().enumerate() {
        let mut fq = rff_features(grid, p, Side::Query)?.matrix().clone();
        let mut fk = rff_features(grid, p, Side::Key)?.matrix().clone();
        for (i, mut row) in fq.axis_iter_mut(Axis(0)).enumerate() {
            row *= q[[i, d]];
        }
        for (i, mut row) in fk.axis_iter_mut(Axis(0)).enumerate() {
            row *= k[[i, d]];
        }
        ndarray::linalg::general_mat_mul(1.0, &fq, &fk.t(), 1.0, &mut logits);
    }
    softmax_attend(&logits, v, q.ncols(), false)
}

/// Linear path: per-dimension features, assembly, positive map, kernelized
/// attention.
fn fstripe_linear(
    q: &Array2<f64>,
    k: &Array2<f64>,
    v: &Array2<f64>,
    grid: &StructuralGrid,
    params: &[FourierParams],
    threads: usize,
) -> Result<Array2<f64>> {
    let features_q = build_features(grid, params, Side::Query, threads)?;
    let features_k = build_features(grid, params, Side::Key, threads)?;
    let (aq, ak) = assemble_pe_qk(q, k, &features_q, &features_k)?;
    let phi_q = feature_map(&aq, FeatureMapKind::EluPlusOne, 0)?;
    let phi_k = feature_map(&ak, FeatureMapKind::EluPlusOne, 0)?;
    linear_attention(&phi_q, &phi_k, v, false)
}

fn build_features(
    grid: &StructuralGrid,
    params: &[FourierParams],
    side: Side,
    threads: usize,
) -> Result<Vec<PositionalFeatures>> {
    if threads <= 1 || params.len() <= 1 {
        return params.iter().map(|p| rff_features(grid, p, side)).collect();
    }
    let chunk = params.len().div_ceil(threads);
    let mut slots: Vec<Option<Result<PositionalFeatures>>> = Vec::new();
    slots.resize_with(params.len(), || None);
    std::thread::scope(|scope| {
        for (chunk_index, (params_chunk, slots_chunk)) in
            params.chunks(chunk).zip(slots.chunks_mut(chunk)).enumerate()
        {
            let _ = chunk_index;
            scope.spawn(move || {
                for (p, slot) in params_chunk.iter().zip(slots_chunk.iter_mut()) {
                    *slot = Some(rff_features(grid, p, side));
                }
            });
        }
    });
    slots
        .into_iter()
        .map(|s| s.expect("every slot filled by its worker"))
        .collect()
}
