//! Gradient-trained router networks over a flat parameter vector.
//!
//! Every network maps a query embedding to a fixed set of outputs. Utility
//! heads emit `2 * n_models` values (scores first, then costs); selection
//! heads emit `n_models` logits.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::linalg::dot;

/// Half-width of the uniform initialization range for weights.
pub const INIT_SCALE: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    Utility,
    Selection,
}

/// Fully connected ReLU stack; the last layer is linear.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpShape {
    pub sizes: Vec<usize>,
}

impl MlpShape {
    pub fn new(input: usize, hidden_width: usize, hidden_layers: usize, output: usize) -> Self {
        let mut sizes = vec![input];
        sizes.extend(core::iter::repeat_n(hidden_width, hidden_layers));
        sizes.push(output);
        Self { sizes }
    }

    pub fn n_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn n_params(&self) -> usize {
        self.sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    fn init(&self, rng: &mut ChaCha8Rng, out: &mut Vec<f64>) {
        for w in self.sizes.windows(2) {
            out.extend((0..w[0] * w[1]).map(|_| rng.random_range(-INIT_SCALE..=INIT_SCALE)));
            out.extend(core::iter::repeat_n(0.0, w[1]));
        }
    }

    /// Fills `acts[0..=n_layers]`; `acts[0]` is the input.
    fn forward(&self, p: &[f64], input: &[f64], acts: &mut Vec<Vec<f64>>) {
        acts.resize(self.sizes.len(), Vec::new());
        acts[0].clear();
        acts[0].extend_from_slice(input);
        let mut off = 0;
        let last = self.n_layers() - 1;
        for l in 0..self.n_layers() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let (w, rest) = p[off..].split_at(n_in * n_out);
            let b = &rest[..n_out];
            off += n_in * n_out + n_out;
            let (prev, next) = acts.split_at_mut(l + 1);
            let a = &prev[l];
            let z = &mut next[0];
            z.clear();
            for o in 0..n_out {
                let v = dot(&w[o * n_in..(o + 1) * n_in], a) + b[o];
                z.push(if l < last { v.max(0.0) } else { v });
            }
        }
    }

    /// Accumulates parameter gradients into `grad`; if `d_input` is given,
    /// writes the gradient with respect to the input there.
    fn backward(&self, p: &[f64], acts: &[Vec<f64>], d_out: &[f64], grad: &mut [f64], d_input: Option<&mut [f64]>, scratch: &mut [Vec<f64>; 2]) {
        let n_layers = self.n_layers();
        let mut offsets = Vec::with_capacity(n_layers);
        let mut off = 0;
        for w in self.sizes.windows(2) {
            offsets.push(off);
            off += w[0] * w[1] + w[1];
        }
        let [delta, prev_delta] = scratch;
        delta.clear();
        delta.extend_from_slice(d_out);
        let mut d_input = d_input;
        for l in (0..n_layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let off = offsets[l];
            let a = &acts[l];
            {
                let (gw, gb) = grad[off..off + n_in * n_out + n_out].split_at_mut(n_in * n_out);
                for o in 0..n_out {
                    let d = delta[o];
                    if d == 0.0 {
                        continue;
                    }
                    gb[o] += d;
                    for (g, x) in gw[o * n_in..(o + 1) * n_in].iter_mut().zip(a) {
                        *g += d * x;
                    }
                }
            }
            let need_prev = l > 0 || d_input.is_some();
            if !need_prev {
                break;
            }
            let w = &p[off..off + n_in * n_out];
            prev_delta.clear();
            prev_delta.resize(n_in, 0.0);
            for o in 0..n_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                for (pd, wv) in prev_delta.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                    *pd += d * wv;
                }
            }
            if l > 0 {
                for (pd, av) in prev_delta.iter_mut().zip(a) {
                    if *av <= 0.0 {
                        *pd = 0.0;
                    }
                }
                core::mem::swap(delta, prev_delta);
            } else if let Some(di) = d_input.as_deref_mut() {
                di.copy_from_slice(prev_delta);
            }
        }
    }

    fn relu_pattern(&self, acts: &[Vec<f64>], out: &mut Vec<bool>) {
        for a in &acts[1..acts.len() - 1] {
            out.extend(a.iter().map(|v| *v > 0.0));
        }
    }
}

/// Architecture of a gradient-trained router.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NetSpec {
    /// Multinomial logistic regression `softmax(W x + b)` (selection only).
    Softmax { dim: usize, n_models: usize },
    /// Bilinear `x^T W emb(m) + b` with learned model embeddings.
    LinearMf { dim: usize, model_dim: usize, n_models: usize, head: Head },
    /// ReLU MLP over the query embedding, one output unit per model and target.
    Mlp { dim: usize, shape: MlpShape, n_models: usize, head: Head },
    /// Shared ReLU MLP over `[x; emb(m)]` with learned model embeddings.
    MlpMf { dim: usize, model_dim: usize, shape: MlpShape, n_models: usize, head: Head },
}

/// Per-forward scratch state reused across samples.
#[derive(Clone, Debug, Default)]
pub struct Workspace {
    /// Layer activations, one stack per network pass.
    acts: Vec<Vec<Vec<f64>>>,
    /// Projections `W^T x` for the bilinear models.
    proj: Vec<Vec<f64>>,
    input: Vec<f64>,
    d_input: Vec<f64>,
    scratch: [Vec<f64>; 2],
}

impl NetSpec {
    pub fn linear_mf(dim: usize, model_dim: usize, n_models: usize, head: Head) -> Self {
        NetSpec::LinearMf { dim, model_dim, n_models, head }
    }

    pub fn mlp(dim: usize, hidden_width: usize, hidden_layers: usize, n_models: usize, head: Head) -> Self {
        let out = match head {
            Head::Utility => 2 * n_models,
            Head::Selection => n_models,
        };
        NetSpec::Mlp { dim, shape: MlpShape::new(dim, hidden_width, hidden_layers, out), n_models, head }
    }

    pub fn mlp_mf(dim: usize, model_dim: usize, hidden_width: usize, hidden_layers: usize, n_models: usize, head: Head) -> Self {
        let out = match head {
            Head::Utility => 2,
            Head::Selection => 1,
        };
        NetSpec::MlpMf {
            dim,
            model_dim,
            shape: MlpShape::new(dim + model_dim, hidden_width, hidden_layers, out),
            n_models,
            head,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            NetSpec::Softmax { dim, .. } | NetSpec::LinearMf { dim, .. } | NetSpec::Mlp { dim, .. } | NetSpec::MlpMf { dim, .. } => *dim,
        }
    }

    pub fn n_models(&self) -> usize {
        match self {
            NetSpec::Softmax { n_models, .. }
            | NetSpec::LinearMf { n_models, .. }
            | NetSpec::Mlp { n_models, .. }
            | NetSpec::MlpMf { n_models, .. } => *n_models,
        }
    }

    pub fn head(&self) -> Head {
        match self {
            NetSpec::Softmax { .. } => Head::Selection,
            NetSpec::LinearMf { head, .. } | NetSpec::Mlp { head, .. } | NetSpec::MlpMf { head, .. } => *head,
        }
    }

    pub fn n_outputs(&self) -> usize {
        match self.head() {
            Head::Utility => 2 * self.n_models(),
            Head::Selection => self.n_models(),
        }
    }

    pub fn n_params(&self) -> usize {
        match self {
            NetSpec::Softmax { dim, n_models } => n_models * dim + n_models,
            NetSpec::LinearMf { dim, model_dim, n_models, head } => match head {
                Head::Utility => 2 * dim * model_dim + n_models * model_dim + 2,
                Head::Selection => dim * model_dim + n_models * model_dim + n_models,
            },
            NetSpec::Mlp { shape, .. } => shape.n_params(),
            NetSpec::MlpMf { model_dim, shape, n_models, .. } => shape.n_params() + n_models * model_dim,
        }
    }

    /// Seeded initialization: weights and embeddings uniform in
    /// `[-INIT_SCALE, INIT_SCALE]`, biases zero.
    pub fn init_params(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.n_params());
        let mut uniform = |p: &mut Vec<f64>, n: usize| p.extend((0..n).map(|_| rng.random_range(-INIT_SCALE..=INIT_SCALE)));
        match self {
            NetSpec::Softmax { dim, n_models } => {
                uniform(&mut p, n_models * dim);
                p.extend(core::iter::repeat_n(0.0, *n_models));
            }
            NetSpec::LinearMf { dim, model_dim, n_models, head } => {
                let n_maps = if *head == Head::Utility { 2 } else { 1 };
                uniform(&mut p, n_maps * dim * model_dim + n_models * model_dim);
                let n_bias = if *head == Head::Utility { 2 } else { *n_models };
                p.extend(core::iter::repeat_n(0.0, n_bias));
            }
            NetSpec::Mlp { shape, .. } => shape.init(rng, &mut p),
            NetSpec::MlpMf { model_dim, shape, n_models, .. } => {
                shape.init(rng, &mut p);
                p.extend((0..n_models * model_dim).map(|_| rng.random_range(-INIT_SCALE..=INIT_SCALE)));
            }
        }
        debug_assert_eq!(p.len(), self.n_params());
        p
    }

    /// Forward pass for one query; `out` must have `n_outputs()` slots.
    pub fn forward(&self, p: &[f64], x: &[f64], ws: &mut Workspace, out: &mut [f64]) {
        match self {
            NetSpec::Softmax { dim, n_models } => {
                let (w, b) = p.split_at(n_models * dim);
                for m in 0..*n_models {
                    out[m] = dot(&w[m * dim..(m + 1) * dim], x) + b[m];
                }
            }
            NetSpec::LinearMf { dim, model_dim, n_models, head } => {
                let (dim, dm, nm) = (*dim, *model_dim, *n_models);
                let n_maps = if *head == Head::Utility { 2 } else { 1 };
                ws.proj.resize(n_maps, Vec::new());
                for k in 0..n_maps {
                    let w = &p[k * dim * dm..(k + 1) * dim * dm];
                    let v = &mut ws.proj[k];
                    v.clear();
                    v.resize(dm, 0.0);
                    for (i, xi) in x.iter().enumerate() {
                        for (vj, wij) in v.iter_mut().zip(&w[i * dm..(i + 1) * dm]) {
                            *vj += xi * wij;
                        }
                    }
                }
                let e_off = n_maps * dim * dm;
                let b_off = e_off + nm * dm;
                for m in 0..nm {
                    let e = &p[e_off + m * dm..e_off + (m + 1) * dm];
                    match head {
                        Head::Utility => {
                            out[m] = dot(&ws.proj[0], e) + p[b_off];
                            out[nm + m] = dot(&ws.proj[1], e) + p[b_off + 1];
                        }
                        Head::Selection => out[m] = dot(&ws.proj[0], e) + p[b_off + m],
                    }
                }
            }
            NetSpec::Mlp { shape, .. } => {
                ws.acts.resize(1, Vec::new());
                shape.forward(p, x, &mut ws.acts[0]);
                out.copy_from_slice(ws.acts[0].last().unwrap());
            }
            NetSpec::MlpMf { dim, model_dim, shape, n_models, head } => {
                let (dim, dm, nm) = (*dim, *model_dim, *n_models);
                let e_off = shape.n_params();
                ws.acts.resize(nm, Vec::new());
                for m in 0..nm {
                    ws.input.clear();
                    ws.input.extend_from_slice(x);
                    ws.input.extend_from_slice(&p[e_off + m * dm..e_off + (m + 1) * dm]);
                    debug_assert_eq!(ws.input.len(), dim + dm);
                    shape.forward(p, &ws.input, &mut ws.acts[m]);
                    let y = ws.acts[m].last().unwrap();
                    match head {
                        Head::Utility => {
                            out[m] = y[0];
                            out[nm + m] = y[1];
                        }
                        Head::Selection => out[m] = y[0],
                    }
                }
            }
        }
    }

    /// Accumulates `d loss / d params` given `d loss / d outputs`. Must follow
    /// a `forward` on the same `x` with the same workspace.
    pub fn backward(&self, p: &[f64], x: &[f64], ws: &mut Workspace, d_out: &[f64], grad: &mut [f64]) {
        match self {
            NetSpec::Softmax { dim, n_models } => {
                let (gw, gb) = grad.split_at_mut(n_models * dim);
                for m in 0..*n_models {
                    let d = d_out[m];
                    gb[m] += d;
                    for (g, xi) in gw[m * dim..(m + 1) * dim].iter_mut().zip(x) {
                        *g += d * xi;
                    }
                }
            }
            NetSpec::LinearMf { dim, model_dim, n_models, head } => {
                let (dim, dm, nm) = (*dim, *model_dim, *n_models);
                let n_maps = if *head == Head::Utility { 2 } else { 1 };
                let e_off = n_maps * dim * dm;
                let b_off = e_off + nm * dm;
                for k in 0..n_maps {
                    // u = sum_m g_m emb(m); dW[i][j] += x_i u_j
                    let mut u = vec![0.0; dm];
                    for m in 0..nm {
                        let g = d_out[k * nm + m];
                        if g == 0.0 {
                            continue;
                        }
                        for (uj, ej) in u.iter_mut().zip(&p[e_off + m * dm..e_off + (m + 1) * dm]) {
                            *uj += g * ej;
                        }
                    }
                    let gw = &mut grad[k * dim * dm..(k + 1) * dim * dm];
                    for (i, xi) in x.iter().enumerate() {
                        for (g, uj) in gw[i * dm..(i + 1) * dm].iter_mut().zip(&u) {
                            *g += xi * uj;
                        }
                    }
                }
                for m in 0..nm {
                    let ge = &mut grad[e_off + m * dm..e_off + (m + 1) * dm];
                    for k in 0..n_maps {
                        let g = d_out[k * nm + m];
                        for (gej, vj) in ge.iter_mut().zip(&ws.proj[k]) {
                            *gej += g * vj;
                        }
                    }
                }
                match head {
                    Head::Utility => {
                        grad[b_off] += d_out[..nm].iter().sum::<f64>();
                        grad[b_off + 1] += d_out[nm..2 * nm].iter().sum::<f64>();
                    }
                    Head::Selection => {
                        for m in 0..nm {
                            grad[b_off + m] += d_out[m];
                        }
                    }
                }
            }
            NetSpec::Mlp { shape, .. } => {
                shape.backward(p, &ws.acts[0], d_out, grad, None, &mut ws.scratch);
            }
            NetSpec::MlpMf { dim, model_dim, shape, n_models, head } => {
                let (dim, dm, nm) = (*dim, *model_dim, *n_models);
                let e_off = shape.n_params();
                ws.d_input.resize(dim + dm, 0.0);
                let mut d = [0.0; 2];
                for m in 0..nm {
                    let dy: &[f64] = match head {
                        Head::Utility => {
                            d = [d_out[m], d_out[nm + m]];
                            &d
                        }
                        Head::Selection => {
                            d[0] = d_out[m];
                            &d[..1]
                        }
                    };
                    if dy.iter().all(|v| *v == 0.0) {
                        continue;
                    }
                    let (gnet, gemb) = grad.split_at_mut(e_off);
                    shape.backward(p, &ws.acts[m], dy, gnet, Some(&mut ws.d_input), &mut ws.scratch);
                    for (g, di) in gemb[m * dm..(m + 1) * dm].iter_mut().zip(&ws.d_input[dim..]) {
                        *g += di;
                    }
                }
            }
        }
    }

    /// ReLU on/off pattern of the last forward pass (empty for linear models).
    pub fn relu_pattern(&self, ws: &Workspace, out: &mut Vec<bool>) {
        match self {
            NetSpec::Mlp { shape, .. } => shape.relu_pattern(&ws.acts[0], out),
            NetSpec::MlpMf { shape, n_models, .. } => {
                for m in 0..*n_models {
                    shape.relu_pattern(&ws.acts[m], out);
                }
            }
            _ => {}
        }
    }

    pub fn has_relu(&self) -> bool {
        matches!(self, NetSpec::Mlp { .. } | NetSpec::MlpMf { .. })
    }

    /// Range of parameters belonging to the final linear layer's cost units
    /// (utility MLPs only).
    pub fn cost_head_params(&self) -> Option<Vec<usize>> {
        match self {
            NetSpec::Mlp { shape, n_models, head: Head::Utility, .. } => {
                let l = shape.n_layers() - 1;
                let off: usize = shape.sizes.windows(2).take(l).map(|w| w[0] * w[1] + w[1]).sum();
                let (n_in, n_out) = (shape.sizes[l], shape.sizes[l + 1]);
                let mut idx = Vec::new();
                for o in *n_models..n_out {
                    idx.extend(off + o * n_in..off + (o + 1) * n_in);
                    idx.push(off + n_in * n_out + o);
                }
                Some(idx)
            }
            NetSpec::MlpMf { shape, head: Head::Utility, .. } => {
                let l = shape.n_layers() - 1;
                let off: usize = shape.sizes.windows(2).take(l).map(|w| w[0] * w[1] + w[1]).sum();
                let n_in = shape.sizes[l];
                let mut idx: Vec<usize> = (off + n_in..off + 2 * n_in).collect();
                idx.push(off + 2 * n_in + 1);
                Some(idx)
            }
            _ => None,
        }
    }
}
