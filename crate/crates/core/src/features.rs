//! Sinusoidal positional features and the cosine kernel they realize.
//!
//! Two constructions of per-dimension positional feature matrices are
//! provided. The deterministic one pairs each of `N_f` frequencies with a
//! cos/sin column, scaled by gains and `1/sqrt(N_f)`; products of a query-
//! and key-side matrix reproduce a shift-structured cosine kernel exactly
//! (`closed_form_pd`). The stochastic one additionally mixes the sinusoids
//! through a seeded Gaussian matrix `Z` with `R` columns, giving a noisy
//! rank-`R` estimate of the same kernel whose error decays like `1/sqrt(R)`.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::grid::StructuralGrid;

/// Per-dimension sinusoid parameters: frequencies, query/key phases, gains,
/// plus the realization count and seed used by the stochastic construction.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierParams {
    frequencies: Array2<f64>, // N_f x L, cycles per label unit
    phases_q: Array1<f64>,    // N_f, radians
    phases_k: Array1<f64>,    // N_f, radians
    gains: Array1<f64>,       // N_f, non-negative
    realizations: usize,
    seed: u64,
}

impl FourierParams {
    pub fn new(
        frequencies: Array2<f64>,
        phases_q: Array1<f64>,
        phases_k: Array1<f64>,
        gains: Array1<f64>,
        realizations: usize,
        seed: u64,
    ) -> Result<Self> {
        let n_f = frequencies.nrows();
        if n_f == 0 {
            return Err(Error::invalid_argument("frequency count must be at least 1"));
        }
        if frequencies.ncols() == 0 {
            return Err(Error::invalid_argument("frequencies need at least one level"));
        }
        for (name, v) in [("phases_q", &phases_q), ("phases_k", &phases_k), ("gains", &gains)] {
            if v.len() != n_f {
                return Err(Error::invalid_argument(format!(
                    "{name} has {} entries, expected {n_f}",
                    v.len()
                )));
            }
        }
        if gains.iter().any(|&g| !(g >= 0.0) || !g.is_finite()) {
            return Err(Error::invalid_argument("gains must be finite and non-negative"));
        }
        if frequencies.iter().any(|v| !v.is_finite())
            || phases_q.iter().any(|v| !v.is_finite())
            || phases_k.iter().any(|v| !v.is_finite())
        {
            return Err(Error::invalid_argument("parameters must be finite"));
        }
        if realizations == 0 {
            return Err(Error::invalid_argument("realization count must be at least 1"));
        }
        Ok(FourierParams { frequencies, phases_q, phases_k, gains, realizations, seed })
    }

    /// Random initialization: frequencies uniform over `(0, 0.5]` cycles per
    /// unit (the Nyquist limit of integer grids), phases uniform over
    /// `[0, 2pi)`, gains 1.
    pub fn init(n_f: usize, levels: usize, realizations: usize, seed: u64) -> Result<Self> {
        if n_f == 0 || levels == 0 {
            return Err(Error::invalid_argument("n_f and levels must be at least 1"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let frequencies =
            Array2::from_shape_fn((n_f, levels), |_| 0.5 - rng.random_range(0.0..0.5));
        let phases_q =
            Array1::from_shape_fn(n_f, |_| rng.random_range(0.0..std::f64::consts::TAU));
        let phases_k =
            Array1::from_shape_fn(n_f, |_| rng.random_range(0.0..std::f64::consts::TAU));
        let gains = Array1::ones(n_f);
        FourierParams::new(frequencies, phases_q, phases_k, gains, realizations, seed)
    }

    pub fn n_f(&self) -> usize {
        self.frequencies.nrows()
    }

    pub fn levels(&self) -> usize {
        self.frequencies.ncols()
    }

    pub fn frequencies(&self) -> &Array2<f64> {
        &self.frequencies
    }

    pub fn phases(&self, side: Side) -> &Array1<f64> {
        match side {
            Side::Query => &self.phases_q,
            Side::Key => &self.phases_k,
        }
    }

    pub fn gains(&self) -> &Array1<f64> {
        &self.gains
    }

    pub fn realizations(&self) -> usize {
        self.realizations
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Gains duplicated per cos/sin pair: length `2 * N_f`.
    pub fn expanded_gains(&self) -> Array1<f64> {
        let mut out = Array1::zeros(2 * self.n_f());
        for (w, &g) in self.gains.iter().enumerate() {
            out[2 * w] = g;
            out[2 * w + 1] = g;
        }
        out
    }
}

/// Which phase vector a feature matrix belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Query,
    Key,
}

/// Construction behind a positional feature matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureKind {
    /// Deterministic sinusoid features, `F = 2 * N_f` columns.
    Rff,
    /// Gaussian-mixed sinusoid features, `F = R` columns.
    Sff,
}

/// A `T x F` positional feature matrix together with its construction kind.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionalFeatures {
    matrix: Array2<f64>,
    kind: FeatureKind,
}

impl PositionalFeatures {
    pub fn new(matrix: Array2<f64>, kind: FeatureKind) -> Result<Self> {
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("positional features must be finite".into()));
        }
        Ok(PositionalFeatures { matrix, kind })
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.matrix
    }

    pub fn kind(&self) -> FeatureKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.matrix.nrows() == 0
    }

    pub fn width(&self) -> usize {
        self.matrix.ncols()
    }
}

/// Sinusoid matrix: column `2w` holds `cos(2pi f[w,:] . p_i + theta[w])`,
/// column `2w+1` the matching sine. `T x 2N_f`.
pub fn sinusoid_matrix(
    grid: &StructuralGrid,
    frequencies: &Array2<f64>,
    phases: &Array1<f64>,
) -> Result<Array2<f64>> {
    if frequencies.ncols() != grid.levels() {
        return Err(Error::invalid_argument(format!(
            "frequencies have {} levels, grid has {}",
            frequencies.ncols(),
            grid.levels()
        )));
    }
    if phases.len() != frequencies.nrows() {
        return Err(Error::invalid_argument(format!(
            "{} phases for {} frequencies",
            phases.len(),
            frequencies.nrows()
        )));
    }
    let n_f = frequencies.nrows();
    // angles[i, w] = 2pi f[w,:].p_i + theta[w]
    let mut angles = grid.indices().dot(&frequencies.t());
    angles.mapv_inplace(|a| a * std::f64::consts::TAU);
    angles += &phases.view().insert_axis(ndarray::Axis(0));

    let mut out = Array2::zeros((grid.len(), 2 * n_f));
    for i in 0..grid.len() {
        for w in 0..n_f {
            let a = angles[[i, w]];
            out[[i, 2 * w]] = a.cos();
            out[[i, 2 * w + 1]] = a.sin();
        }
    }
    Ok(out)
}

/// Deterministic positional features: sinusoids scaled by the expanded
/// gains and `1/sqrt(N_f)`.
pub fn rff_features(
    grid: &StructuralGrid,
    params: &FourierParams,
    side: Side,
) -> Result<PositionalFeatures> {
    let mut matrix = sinusoid_matrix(grid, params.frequencies(), params.phases(side))?;
    scale_columns(&mut matrix, &params.expanded_gains());
    matrix /= (params.n_f() as f64).sqrt();
    PositionalFeatures::new(matrix, FeatureKind::Rff)
}

/// Seeded standard-normal matrix; identical output for identical seeds.
pub fn sample_gaussian(seed: u64, rows: usize, cols: usize) -> Result<Array2<f64>> {
    if rows == 0 || cols == 0 {
        return Err(Error::invalid_argument("gaussian matrix needs rows >= 1 and cols >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(Array2::from_shape_fn((rows, cols), |_| rng.sample(StandardNormal)))
}

/// Stochastic positional features: gain-scaled sinusoids mixed through `Z`
/// (shape `2N_f x R`) and normalized by `1/sqrt(2 N_f)`. Columns are
/// independent realizations.
pub fn sff_features(
    grid: &StructuralGrid,
    params: &FourierParams,
    side: Side,
    z: &Array2<f64>,
) -> Result<PositionalFeatures> {
    if z.nrows() != 2 * params.n_f() || z.ncols() != params.realizations() {
        return Err(Error::invalid_argument(format!(
            "mixing matrix is {}x{}, expected {}x{}",
            z.nrows(),
            z.ncols(),
            2 * params.n_f(),
            params.realizations()
        )));
    }
    let mut sinusoids = sinusoid_matrix(grid, params.frequencies(), params.phases(side))?;
    scale_columns(&mut sinusoids, &params.expanded_gains());
    let mut matrix = sinusoids.dot(z);
    matrix /= (2.0 * params.n_f() as f64).sqrt();
    PositionalFeatures::new(matrix, FeatureKind::Sff)
}

/// Closed-form positional matrix: entry `(m, n)` is
/// `(1/N_f) * sum_w gain[w]^2 * cos(2pi f[w,:].(p_m - p_n) + theta_q[w] - theta_k[w])`.
///
/// This is the exact limit of the stochastic construction and the exact
/// value of the deterministic one's pairwise products.
pub fn closed_form_pd(
    grid_q: &StructuralGrid,
    grid_k: &StructuralGrid,
    params: &FourierParams,
) -> Result<Array2<f64>> {
    if grid_q.levels() != grid_k.levels() {
        return Err(Error::invalid_argument(format!(
            "query grid has {} levels, key grid has {}",
            grid_q.levels(),
            grid_k.levels()
        )));
    }
    if params.levels() != grid_q.levels() {
        return Err(Error::invalid_argument(format!(
            "params cover {} levels, grids have {}",
            params.levels(),
            grid_q.levels()
        )));
    }
    let n_f = params.n_f();
    // angle tables: 2pi f[w,:].p + theta, per side
    let tau = std::f64::consts::TAU;
    let angles_q = grid_q.indices().dot(&params.frequencies().t()) * tau
        + &params.phases(Side::Query).view().insert_axis(ndarray::Axis(0));
    let angles_k = grid_k.indices().dot(&params.frequencies().t()) * tau
        + &params.phases(Side::Key).view().insert_axis(ndarray::Axis(0));
    let squared_gains: Vec<f64> = params.gains().iter().map(|&g| g * g).collect();

    let mut out = Array2::zeros((grid_q.len(), grid_k.len()));
    for m in 0..grid_q.len() {
        for n in 0..grid_k.len() {
            let mut acc = 0.0;
            for (w, &gain2) in squared_gains.iter().enumerate() {
                acc += gain2 * (angles_q[[m, w]] - angles_k[[n, w]]).cos();
            }
            out[[m, n]] = acc / n_f as f64;
        }
    }
    Ok(out)
}

/// Pairwise products of query- and key-side positional features, as an
/// estimate of the positional matrix.
///
/// For the deterministic kind this is the plain product and equals
/// `closed_form_pd` exactly. For the stochastic kind the product carries
/// the empirical covariance `Z Zt`, so it is divided by `R` and rescaled
/// from the `sqrt(2 N_f)` feature normalization to the kernel's
/// `sqrt(N_f)` one, i.e. multiplied by `2 / R`; the estimate then converges
/// to `closed_form_pd` as `R` grows.
pub fn positional_product(
    features_q: &PositionalFeatures,
    features_k: &PositionalFeatures,
) -> Result<Array2<f64>> {
    if features_q.kind() != features_k.kind() {
        return Err(Error::invalid_argument("feature kinds differ between sides"));
    }
    if features_q.width() != features_k.width() {
        return Err(Error::invalid_argument(format!(
            "feature widths differ: {} vs {}",
            features_q.width(),
            features_k.width()
        )));
    }
    let mut product = features_q.matrix().dot(&features_k.matrix().t());
    if features_q.kind() == FeatureKind::Sff {
        product *= 2.0 / features_q.width() as f64;
    }
    Ok(product)
}

/// Deterministic per-index sub-seed (splitmix64 over the pair).
pub fn sub_seed(seed: u64, index: u64) -> u64 {
    let mut x = seed ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

fn scale_columns(matrix: &mut Array2<f64>, scales: &Array1<f64>) {
    for (mut col, &s) in matrix.columns_mut().into_iter().zip(scales.iter()) {
        col *= s;
    }
}
