//! Minimal reverse-mode gradient tape over `f64` matrices.
//!
//! Nodes are appended in forward order, so walking the tape backwards is a
//! reverse topological traversal that visits every node exactly once. Each
//! recorded operation captures what it needs for its backward rule; the
//! causal attention primitive recomputes its prefix sums instead of storing
//! per-step state.

use ndarray::{Array1, Array2, Axis};

use crate::attention::elu_plus_one;
use crate::error::{Error, Result};
use crate::grid::StructuralGrid;

pub type NodeId = usize;

const BCE_CLAMP: f64 = 1e-12;
const ATTENTION_FLOOR: f64 = crate::attention::NORMALIZER_FLOOR;

type BackwardFn = Box<dyn Fn(&Array2<f64>) -> Vec<(NodeId, Array2<f64>)>>;

struct Node {
    value: Array2<f64>,
    backward: Option<BackwardFn>,
}

/// Gradients per node id, produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Array2<f64>> {
        self.grads.get(id).and_then(|g| g.as_ref())
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Array2<f64> {
        &self.nodes[id].value
    }

    fn push(&mut self, value: Array2<f64>, backward: Option<BackwardFn>) -> NodeId {
        self.nodes.push(Node { value, backward });
        self.nodes.len() - 1
    }

    /// Input node; it still receives a gradient, callers may ignore it.
    pub fn leaf(&mut self, value: Array2<f64>) -> NodeId {
        self.push(value, None)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let lhs = self.nodes[a].value.clone();
        let rhs = self.nodes[b].value.clone();
        let value = lhs.dot(&rhs);
        self.push(
            value,
            Some(Box::new(move |g| {
                vec![(a, g.dot(&rhs.t())), (b, lhs.t().dot(g))]
            })),
        )
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = &self.nodes[a].value + &self.nodes[b].value;
        self.push(
            value,
            Some(Box::new(move |g| vec![(a, g.clone()), (b, g.clone())])),
        )
    }

    /// Adds a `1 x C` bias row to every row of `a`.
    pub fn add_row(&mut self, a: NodeId, bias: NodeId) -> NodeId {
        let value = &self.nodes[a].value + &self.nodes[bias].value;
        self.push(
            value,
            Some(Box::new(move |g| {
                let row_sum = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                vec![(a, g.clone()), (bias, row_sum)]
            })),
        )
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let lhs = self.nodes[a].value.clone();
        let rhs = self.nodes[b].value.clone();
        let value = &lhs * &rhs;
        self.push(
            value,
            Some(Box::new(move |g| vec![(a, g * &rhs), (b, g * &lhs)])),
        )
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        let value = &self.nodes[a].value * factor;
        self.push(value, Some(Box::new(move |g| vec![(a, g * factor)])))
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> NodeId {
        let source = &self.nodes[a].value;
        let shape = source.raw_dim();
        let value = source.slice(ndarray::s![.., start..start + len]).to_owned();
        self.push(
            value,
            Some(Box::new(move |g| {
                let mut full = Array2::zeros(shape);
                full.slice_mut(ndarray::s![.., start..start + len]).assign(g);
                vec![(a, full)]
            })),
        )
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty(), "concat of zero parts");
        let rows = self.nodes[parts[0]].value.nrows();
        let widths: Vec<usize> = parts.iter().map(|&p| self.nodes[p].value.ncols()).collect();
        let total: usize = widths.iter().sum();
        let mut value = Array2::zeros((rows, total));
        let mut offset = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            value
                .slice_mut(ndarray::s![.., offset..offset + w])
                .assign(&self.nodes[p].value);
            offset += w;
        }
        let parts = parts.to_vec();
        self.push(
            value,
            Some(Box::new(move |g| {
                let mut out = Vec::with_capacity(parts.len());
                let mut offset = 0;
                for (&p, &w) in parts.iter().zip(&widths) {
                    out.push((p, g.slice(ndarray::s![.., offset..offset + w]).to_owned()));
                    offset += w;
                }
                out
            })),
        )
    }

    /// Block-wise broadcast product: with `mat` of width `D * block` and
    /// `content` of width `D`, scales block `d` of every row by
    /// `content[i, d]`. This is `diag(content[:, d]) * mat_block_d` for all
    /// `d` at once.
    pub fn mul_col_blocks(&mut self, mat: NodeId, content: NodeId, block: usize) -> NodeId {
        let m = self.nodes[mat].value.clone();
        let c = self.nodes[content].value.clone();
        assert_eq!(m.ncols(), c.ncols() * block, "one block per content column");
        let mut value = m.clone();
        for (mut row, content_row) in value.axis_iter_mut(Axis(0)).zip(c.axis_iter(Axis(0))) {
            for (d, &factor) in content_row.iter().enumerate() {
                for v in row.slice_mut(ndarray::s![d * block..(d + 1) * block]) {
                    *v *= factor;
                }
            }
        }
        self.push(
            value,
            Some(Box::new(move |g| {
                let mut d_mat = g.clone();
                let mut d_content = Array2::zeros(c.raw_dim());
                for i in 0..m.nrows() {
                    for d in 0..c.ncols() {
                        let factor = c[[i, d]];
                        let mut dot = 0.0;
                        for j in d * block..(d + 1) * block {
                            dot += g[[i, j]] * m[[i, j]];
                            d_mat[[i, j]] *= factor;
                        }
                        d_content[[i, d]] = dot;
                    }
                }
                vec![(mat, d_mat), (content, d_content)]
            })),
        )
    }

    /// Row-wise broadcast product: `out[i, j] = mat[i, j] * col[i, 0]`.
    pub fn mul_col(&mut self, mat: NodeId, col: NodeId) -> NodeId {
        let m = self.nodes[mat].value.clone();
        let c = self.nodes[col].value.clone();
        assert_eq!(c.ncols(), 1, "mul_col expects a column vector");
        let mut value = m.clone();
        for (i, mut row) in value.axis_iter_mut(Axis(0)).enumerate() {
            row *= c[[i, 0]];
        }
        self.push(
            value,
            Some(Box::new(move |g| {
                let mut d_mat = g.clone();
                for (i, mut row) in d_mat.axis_iter_mut(Axis(0)).enumerate() {
                    row *= c[[i, 0]];
                }
                let mut d_col = Array2::zeros((m.nrows(), 1));
                for i in 0..m.nrows() {
                    d_col[[i, 0]] = g.row(i).dot(&m.row(i));
                }
                vec![(mat, d_mat), (col, d_col)]
            })),
        )
    }

    /// Sinusoid features of a fixed grid with trainable frequencies
    /// (`N_f x L`) and phases (`N_f x 1`): column `2w` is
    /// `cos(2pi f[w,:].p_i + theta[w])`, column `2w+1` the sine.
    pub fn sinusoid(&mut self, grid: &StructuralGrid, freqs: NodeId, phases: NodeId) -> NodeId {
        let points = grid.indices().clone();
        let f = self.nodes[freqs].value.clone();
        let theta = self.nodes[phases].value.clone();
        assert_eq!(f.ncols(), points.ncols(), "frequency levels must match grid");
        assert_eq!(theta.ncols(), 1, "phases must be a column vector");
        assert_eq!(theta.nrows(), f.nrows(), "one phase per frequency");
        let tau = std::f64::consts::TAU;
        let n_f = f.nrows();
        let steps = points.nrows();
        let mut angles = points.dot(&f.t());
        angles.mapv_inplace(|a| a * tau);
        for w in 0..n_f {
            let shift = theta[[w, 0]];
            angles.column_mut(w).mapv_inplace(|a| a + shift);
        }
        let mut value = Array2::zeros((steps, 2 * n_f));
        for i in 0..steps {
            for w in 0..n_f {
                value[[i, 2 * w]] = angles[[i, w]].cos();
                value[[i, 2 * w + 1]] = angles[[i, w]].sin();
            }
        }
        let out = value.clone();
        self.push(
            value,
            Some(Box::new(move |g| {
                // d angle[i, w] = -sin * g_cos + cos * g_sin
                let mut d_angle = Array2::zeros((steps, n_f));
                for i in 0..steps {
                    for w in 0..n_f {
                        d_angle[[i, w]] = -out[[i, 2 * w + 1]] * g[[i, 2 * w]]
                            + out[[i, 2 * w]] * g[[i, 2 * w + 1]];
                    }
                }
                let d_freqs = d_angle.t().dot(&points) * tau;
                let d_phases = d_angle.sum_axis(Axis(0)).insert_axis(Axis(1));
                vec![(freqs, d_freqs), (phases, d_phases)]
            })),
        )
    }

    /// Scales cos/sin column pairs by per-frequency gains (`N_f x 1`).
    pub fn gain_pairs(&mut self, mat: NodeId, gains: NodeId) -> NodeId {
        let m = self.nodes[mat].value.clone();
        let g_vec = self.nodes[gains].value.clone();
        assert_eq!(g_vec.ncols(), 1, "gains must be a column vector");
        assert_eq!(m.ncols(), 2 * g_vec.nrows(), "two columns per gain");
        let n_f = g_vec.nrows();
        let mut value = m.clone();
        for w in 0..n_f {
            let s = g_vec[[w, 0]];
            value.column_mut(2 * w).mapv_inplace(|v| v * s);
            value.column_mut(2 * w + 1).mapv_inplace(|v| v * s);
        }
        self.push(
            value,
            Some(Box::new(move |g| {
                let mut d_mat = g.clone();
                let mut d_gains = Array2::zeros((n_f, 1));
                for w in 0..n_f {
                    let s = g_vec[[w, 0]];
                    d_mat.column_mut(2 * w).mapv_inplace(|v| v * s);
                    d_mat.column_mut(2 * w + 1).mapv_inplace(|v| v * s);
                    d_gains[[w, 0]] = g.column(2 * w).dot(&m.column(2 * w))
                        + g.column(2 * w + 1).dot(&m.column(2 * w + 1));
                }
                vec![(mat, d_mat), (gains, d_gains)]
            })),
        )
    }

    pub fn elu_plus_one(&mut self, a: NodeId) -> NodeId {
        let x = self.nodes[a].value.clone();
        let value = x.mapv(elu_plus_one);
        self.push(
            value,
            Some(Box::new(move |g| {
                let slope = x.mapv(|v| if v >= 0.0 { 1.0 } else { v.exp() });
                vec![(a, g * &slope)]
            })),
        )
    }

    /// Positive random feature map with a fixed projection matrix:
    /// `out[i, j] = exp(x_i . w_j - |x_i|^2 / 2) / sqrt(D_phi)`.
    pub fn positive_random_features(&mut self, a: NodeId, omega: Array2<f64>) -> NodeId {
        let x = self.nodes[a].value.clone();
        assert_eq!(x.ncols(), omega.nrows(), "projection width must match input");
        let value = crate::attention::positive_random_features(&x, &omega);
        let out = value.clone();
        self.push(
            value,
            Some(Box::new(move |g| {
                let weighted = g * &out; // dL/d(projection)
                let mut d_x = weighted.dot(&omega.t());
                for i in 0..x.nrows() {
                    let total: f64 = weighted.row(i).sum();
                    let row = x.row(i).to_owned();
                    d_x.row_mut(i).scaled_add(-total, &row);
                }
                vec![(a, d_x)]
            })),
        )
    }

    /// Causal kernelized attention via running prefix sums of
    /// `phi(k_n)^T v_n` and `phi(k_n)`; never materializes a `T x T`
    /// matrix. Normalizers carry the shared epsilon floor. Inner loops
    /// run over flat buffers: this op dominates training time.
    pub fn linear_attention_causal(&mut self, phi_q: NodeId, phi_k: NodeId, values: NodeId) -> NodeId {
        let q = self.nodes[phi_q].value.clone();
        let k = self.nodes[phi_k].value.clone();
        let v = self.nodes[values].value.clone();
        let steps = q.nrows();
        assert_eq!(k.nrows(), steps, "causal attention requires square shapes");
        assert_eq!(v.nrows(), steps, "one value row per key row");
        assert_eq!(q.ncols(), k.ncols(), "mapped query/key widths must match");
        let (d_phi, d_v) = (q.ncols(), v.ncols());

        let q_flat = q.as_slice().expect("standard layout").to_vec();
        let k_flat = k.as_slice().expect("standard layout").to_vec();
        let v_flat = v.as_slice().expect("standard layout").to_vec();

        let mut state = vec![0.0f64; d_phi * d_v];
        let mut mass = vec![0.0f64; d_phi];
        let mut out = Array2::zeros((steps, d_v));
        let mut denominators = vec![0.0f64; steps];
        for n in 0..steps {
            let k_row = &k_flat[n * d_phi..(n + 1) * d_phi];
            let v_row = &v_flat[n * d_v..(n + 1) * d_v];
            let q_row = &q_flat[n * d_phi..(n + 1) * d_phi];
            let mut den = ATTENTION_FLOOR;
            let out_row = out.row_mut(n).into_slice().expect("standard layout");
            for j in 0..d_phi {
                let kj = k_row[j];
                mass[j] += kj;
                let qj = q_row[j];
                den += qj * mass[j];
                let s = &mut state[j * d_v..(j + 1) * d_v];
                for (c, &vc) in v_row.iter().enumerate() {
                    s[c] += kj * vc;
                }
                for (c, &sc) in s.iter().enumerate() {
                    out_row[c] += qj * sc;
                }
            }
            denominators[n] = den;
            for o in out_row.iter_mut() {
                *o /= den;
            }
        }
        let saved_out: Vec<f64> = out.iter().cloned().collect();
        self.push(
            out,
            Some(Box::new(move |g| {
                // dnum_n = g_n / den_n ; dden_n = -(g_n . out_n) / den_n
                // query grads need the prefix state, key/value grads the
                // suffix accumulation of q^T dnum and dden * q.
                let g_flat: Vec<f64> = g.iter().cloned().collect();
                let mut d_num = vec![0.0f64; steps * d_v];
                let mut d_den = vec![0.0f64; steps];
                for n in 0..steps {
                    let den = denominators[n];
                    let mut dot = 0.0;
                    for c in 0..d_v {
                        d_num[n * d_v + c] = g_flat[n * d_v + c] / den;
                        dot += g_flat[n * d_v + c] * saved_out[n * d_v + c];
                    }
                    d_den[n] = -dot / den;
                }

                let mut d_q = Array2::zeros((steps, d_phi));
                let mut state = vec![0.0f64; d_phi * d_v];
                let mut mass = vec![0.0f64; d_phi];
                for n in 0..steps {
                    let k_row = &k_flat[n * d_phi..(n + 1) * d_phi];
                    let v_row = &v_flat[n * d_v..(n + 1) * d_v];
                    let dn = &d_num[n * d_v..(n + 1) * d_v];
                    let dq_row = d_q.row_mut(n).into_slice().expect("standard layout");
                    for j in 0..d_phi {
                        let kj = k_row[j];
                        mass[j] += kj;
                        let s = &mut state[j * d_v..(j + 1) * d_v];
                        let mut acc = 0.0;
                        for c in 0..d_v {
                            s[c] += kj * v_row[c];
                            acc += s[c] * dn[c];
                        }
                        dq_row[j] = acc + d_den[n] * mass[j];
                    }
                }

                let mut d_keys = Array2::zeros((steps, d_phi));
                let mut d_values = Array2::zeros((steps, d_v));
                let mut suffix = vec![0.0f64; d_phi * d_v]; // sum of q_m^T dnum_m, m >= n
                let mut suffix_mass = vec![0.0f64; d_phi]; // sum of dden_m q_m, m >= n
                for n in (0..steps).rev() {
                    let q_row = &q_flat[n * d_phi..(n + 1) * d_phi];
                    let k_row = &k_flat[n * d_phi..(n + 1) * d_phi];
                    let v_row = &v_flat[n * d_v..(n + 1) * d_v];
                    let dn = &d_num[n * d_v..(n + 1) * d_v];
                    let dk_row = d_keys.row_mut(n).into_slice().expect("standard layout");
                    let dv_row = d_values.row_mut(n).into_slice().expect("standard layout");
                    for j in 0..d_phi {
                        let qj = q_row[j];
                        suffix_mass[j] += d_den[n] * qj;
                        let s = &mut suffix[j * d_v..(j + 1) * d_v];
                        let kj = k_row[j];
                        let mut key_acc = 0.0;
                        for c in 0..d_v {
                            s[c] += qj * dn[c];
                            key_acc += s[c] * v_row[c];
                            dv_row[c] += kj * s[c];
                        }
                        dk_row[j] = key_acc + suffix_mass[j];
                    }
                }
                vec![(phi_q, d_q), (phi_k, d_keys), (values, d_values)]
            })),
        )
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let value = self.nodes[a].value.mapv(|v| 1.0 / (1.0 + (-v).exp()));
        let out = value.clone();
        self.push(
            value,
            Some(Box::new(move |g| {
                let slope = out.mapv(|s| s * (1.0 - s));
                vec![(a, g * &slope)]
            })),
        )
    }

    /// Mean binary cross-entropy against fixed binary targets; `1 x 1`.
    pub fn bce_loss(&mut self, probs: NodeId, targets: &Array2<f64>) -> NodeId {
        let p = self.nodes[probs].value.clone();
        assert_eq!(p.raw_dim(), targets.raw_dim(), "loss shapes must match");
        let y = targets.clone();
        let count = p.len() as f64;
        let total: f64 = p
            .iter()
            .zip(y.iter())
            .map(|(&p, &y)| {
                let p = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
                -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
            })
            .sum();
        let value = Array2::from_elem((1, 1), total / count);
        self.push(
            value,
            Some(Box::new(move |g| {
                let scale = g[[0, 0]] / count;
                let mut d_p = Array2::zeros(p.raw_dim());
                for ((d, &pv), &yv) in d_p.iter_mut().zip(p.iter()).zip(y.iter()) {
                    let pc = pv.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
                    *d = scale * (pc - yv) / (pc * (1.0 - pc));
                }
                vec![(probs, d_p)]
            })),
        )
    }

    /// Sum of all entries; handy for scalar test objectives.
    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let shape = self.nodes[a].value.raw_dim();
        let value = Array2::from_elem((1, 1), self.nodes[a].value.sum());
        self.push(
            value,
            Some(Box::new(move |g| {
                vec![(a, Array2::from_elem(shape, g[[0, 0]]))]
            })),
        )
    }

    /// Reverse pass from a scalar output node. Visits nodes in reverse
    /// insertion order, which is a reverse topological order of the DAG.
    pub fn backward(&self, output: NodeId) -> Result<Gradients> {
        let out_value = &self.nodes[output].value;
        if out_value.len() != 1 {
            return Err(Error::invalid_argument("backward needs a scalar output node"));
        }
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        grads[output] = Some(Array2::ones((1, 1)));
        for id in (0..=output).rev() {
            let Some(grad) = grads[id].take() else { continue };
            if let Some(backward) = &self.nodes[id].backward {
                for (parent, contribution) in backward(&grad) {
                    match &mut grads[parent] {
                        Some(existing) => *existing += &contribution,
                        slot => *slot = Some(contribution),
                    }
                }
            }
            grads[id] = Some(grad);
        }
        Ok(Gradients { grads })
    }
}
