//! Small dense numerical kernel: a single-layer LSTM with backpropagation
//! through time, a softmax action head, AdaDelta and finite-difference
//! gradient checking.
//!
//! Everything is `f64` and single-threaded. Gate blocks are stacked in the
//! order input, forget, cell candidate, output.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    /// `out += self * x`
    fn matvec_acc(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        for (r, o) in out.iter_mut().enumerate() {
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            *o += row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
    }

    /// `out += self^T * y`
    fn matvec_t_acc(&self, y: &[f64], out: &mut [f64]) {
        debug_assert_eq!(y.len(), self.rows);
        for (r, &yr) in y.iter().enumerate() {
            if yr == 0.0 {
                continue;
            }
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            for (o, w) in out.iter_mut().zip(row) {
                *o += w * yr;
            }
        }
    }

    /// Appends `extra` zero columns on the right.
    pub fn widen(&self, extra: usize) -> Matrix {
        Matrix::from_fn(self.rows, self.cols + extra, |r, c| {
            if c < self.cols {
                self.get(r, c)
            } else {
                0.0
            }
        })
    }
}

/// `grad += y x^T` for a row-major `grad` of shape `y.len() x x.len()`.
fn outer_acc(grad: &mut [f64], y: &[f64], x: &[f64]) {
    let cols = x.len();
    for (r, &yr) in y.iter().enumerate() {
        if yr == 0.0 {
            continue;
        }
        let row = &mut grad[r * cols..(r + 1) * cols];
        for (g, &xc) in row.iter_mut().zip(x) {
            *g += yr * xc;
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable softmax (max subtraction).
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= sum);
    out
}

/// Softmax restricted to `allowed` entries; disallowed entries are exactly 0.
pub fn masked_softmax(z: &[f64], allowed: &[bool]) -> Vec<f64> {
    let max = z
        .iter()
        .zip(allowed)
        .filter(|(_, &a)| a)
        .map(|(v, _)| *v)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = z
        .iter()
        .zip(allowed)
        .map(|(v, &a)| if a { (v - max).exp() } else { 0.0 })
        .collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= sum);
    out
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn check_len(what: &str, got: usize, want: usize) -> Result<()> {
    if got == want {
        Ok(())
    } else {
        Err(Error::Shape(format!("{what}: expected length {want}, got {got}")))
    }
}

fn check_finite(what: &str, v: &[f64]) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmCell {
    input_size: usize,
    hidden_size: usize,
    /// `4H x D`
    w_input: Matrix,
    /// `4H x H`
    w_hidden: Matrix,
    /// `4H`
    bias: Vec<f64>,
}

/// Gate activations and states cached by one forward step.
#[derive(Debug, Clone)]
pub struct StepCache {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub c_prev: Vec<f64>,
    pub i: Vec<f64>,
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub o: Vec<f64>,
    pub c: Vec<f64>,
    pub h: Vec<f64>,
}

impl LstmCell {
    pub fn zeros(input_size: usize, hidden_size: usize) -> Self {
        LstmCell {
            input_size,
            hidden_size,
            w_input: Matrix::zeros(4 * hidden_size, input_size),
            w_hidden: Matrix::zeros(4 * hidden_size, hidden_size),
            bias: vec![0.0; 4 * hidden_size],
        }
    }

    /// Weights uniform in `(-1/sqrt(H), 1/sqrt(H))`, forget-gate bias 1, other biases 0.
    pub fn random(input_size: usize, hidden_size: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (hidden_size as f64).sqrt();
        let h4 = 4 * hidden_size;
        let w_input = Matrix::from_fn(h4, input_size, |_, _| rng.gen_range(-bound..bound));
        let w_hidden = Matrix::from_fn(h4, hidden_size, |_, _| rng.gen_range(-bound..bound));
        let mut bias = vec![0.0; h4];
        bias[hidden_size..2 * hidden_size].fill(1.0);
        LstmCell {
            input_size,
            hidden_size,
            w_input,
            w_hidden,
            bias,
        }
    }

    pub fn input_size(&self) -> usize {
        self.input_size
    }

    pub fn hidden_size(&self) -> usize {
        self.hidden_size
    }

    pub fn w_input(&self) -> &Matrix {
        &self.w_input
    }

    pub fn w_input_mut(&mut self) -> &mut Matrix {
        &mut self.w_input
    }

    pub fn w_hidden(&self) -> &Matrix {
        &self.w_hidden
    }

    pub fn w_hidden_mut(&mut self) -> &mut Matrix {
        &mut self.w_hidden
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    /// Same cell with `extra` zero-weight input columns appended.
    pub fn widen_input(&self, extra: usize) -> LstmCell {
        LstmCell {
            input_size: self.input_size + extra,
            hidden_size: self.hidden_size,
            w_input: self.w_input.widen(extra),
            w_hidden: self.w_hidden.clone(),
            bias: self.bias.clone(),
        }
    }

    fn check_step(&self, h_prev: &[f64], c_prev: &[f64], x: &[f64]) -> Result<()> {
        check_len("lstm input", x.len(), self.input_size)?;
        check_len("lstm hidden state", h_prev.len(), self.hidden_size)?;
        check_len("lstm cell state", c_prev.len(), self.hidden_size)?;
        check_finite("lstm input", x)?;
        check_finite("lstm hidden state", h_prev)?;
        check_finite("lstm cell state", c_prev)
    }

    /// One recurrence step, returning `(h, c)`.
    pub fn step(&self, h_prev: &[f64], c_prev: &[f64], x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_step(h_prev, c_prev, x)?;
        let cache = self.step_unchecked(h_prev, c_prev, x);
        Ok((cache.h, cache.c))
    }

    pub fn step_cached(&self, h_prev: &[f64], c_prev: &[f64], x: &[f64]) -> Result<StepCache> {
        self.check_step(h_prev, c_prev, x)?;
        Ok(self.step_unchecked(h_prev, c_prev, x))
    }

    fn step_unchecked(&self, h_prev: &[f64], c_prev: &[f64], x: &[f64]) -> StepCache {
        let hs = self.hidden_size;
        let mut z = self.bias.clone();
        self.w_input.matvec_acc(x, &mut z);
        self.w_hidden.matvec_acc(h_prev, &mut z);
        let i: Vec<f64> = z[..hs].iter().map(|&v| sigmoid(v)).collect();
        let f: Vec<f64> = z[hs..2 * hs].iter().map(|&v| sigmoid(v)).collect();
        let g: Vec<f64> = z[2 * hs..3 * hs].iter().map(|&v| v.tanh()).collect();
        let o: Vec<f64> = z[3 * hs..].iter().map(|&v| sigmoid(v)).collect();
        let c: Vec<f64> = (0..hs).map(|k| f[k] * c_prev[k] + i[k] * g[k]).collect();
        let h: Vec<f64> = (0..hs).map(|k| o[k] * c[k].tanh()).collect();
        StepCache {
            x: x.to_vec(),
            h_prev: h_prev.to_vec(),
            c_prev: c_prev.to_vec(),
            i,
            f,
            g,
            o,
            c,
            h,
        }
    }
}

/// Dense layer producing action logits from the hidden state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxHead {
    /// `A x H`
    weight: Matrix,
    bias: Vec<f64>,
}

impl SoftmaxHead {
    pub fn zeros(hidden_size: usize, actions: usize) -> Self {
        SoftmaxHead {
            weight: Matrix::zeros(actions, hidden_size),
            bias: vec![0.0; actions],
        }
    }

    pub fn random(hidden_size: usize, actions: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (hidden_size as f64).sqrt();
        SoftmaxHead {
            weight: Matrix::from_fn(actions, hidden_size, |_, _| rng.gen_range(-bound..bound)),
            bias: vec![0.0; actions],
        }
    }

    pub fn actions(&self) -> usize {
        self.bias.len()
    }

    pub fn weight(&self) -> &Matrix {
        &self.weight
    }

    pub fn weight_mut(&mut self) -> &mut Matrix {
        &mut self.weight
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    pub fn logits(&self, h: &[f64]) -> Vec<f64> {
        let mut z = self.bias.clone();
        self.weight.matvec_acc(h, &mut z);
        z
    }
}

/// Recurrent state carried between steps.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden_size: usize) -> Self {
        LstmState {
            h: vec![0.0; hidden_size],
            c: vec![0.0; hidden_size],
        }
    }
}

/// Everything a backward pass needs from the forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub steps: Vec<StepCache>,
    pub logits: Vec<Vec<f64>>,
    pub probs: Vec<Vec<f64>>,
}

/// Gradients laid out like [`Network::tensors`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub tensors: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &Network) -> Self {
        Gradients {
            tensors: net.tensors().iter().map(|t| vec![0.0; t.len()]).collect(),
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors.iter().flatten().copied().collect()
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors
            .iter()
            .flatten()
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales so the global L2 norm is at most `max_norm`; returns the norm before clipping.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm && norm > 0.0 {
            let scale = max_norm / norm;
            self.tensors
                .iter_mut()
                .flatten()
                .for_each(|g| *g *= scale);
        }
        norm
    }

    pub fn is_zero(&self) -> bool {
        self.tensors.iter().flatten().all(|&g| g == 0.0)
    }
}

/// LSTM followed by a softmax head: the shared policy network shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub cell: LstmCell,
    pub head: SoftmaxHead,
}

impl Network {
    pub fn random(input_size: usize, hidden_size: usize, actions: usize, rng: &mut impl Rng) -> Self {
        Network {
            cell: LstmCell::random(input_size, hidden_size, rng),
            head: SoftmaxHead::random(hidden_size, actions, rng),
        }
    }

    pub fn zeros(input_size: usize, hidden_size: usize, actions: usize) -> Self {
        Network {
            cell: LstmCell::zeros(input_size, hidden_size),
            head: SoftmaxHead::zeros(hidden_size, actions),
        }
    }

    pub fn input_size(&self) -> usize {
        self.cell.input_size
    }

    pub fn hidden_size(&self) -> usize {
        self.cell.hidden_size
    }

    pub fn actions(&self) -> usize {
        self.head.actions()
    }

    pub fn initial_state(&self) -> LstmState {
        LstmState::zeros(self.cell.hidden_size)
    }

    /// Parameter tensors: input weights, recurrent weights, gate biases, head weights, head bias.
    pub fn tensors(&self) -> [&[f64]; 5] {
        [
            self.cell.w_input.as_slice(),
            self.cell.w_hidden.as_slice(),
            &self.cell.bias,
            self.head.weight.as_slice(),
            &self.head.bias,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 5] {
        [
            self.cell.w_input.as_mut_slice(),
            self.cell.w_hidden.as_mut_slice(),
            &mut self.cell.bias,
            self.head.weight.as_mut_slice(),
            &mut self.head.bias,
        ]
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors().iter().flat_map(|t| t.iter().copied()).collect()
    }

    /// Overwrites all parameters from a flat vector in [`Network::tensors`] order.
    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        check_len("flat parameters", flat.len(), self.param_count())?;
        let mut offset = 0;
        for t in self.tensors_mut() {
            let n = t.len();
            t.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// FNV-1a hash over the bit patterns of every parameter.
    pub fn fingerprint(&self) -> u64 {
        let mut hash = 0xcbf2_9ce4_8422_2325u64;
        for v in self.tensors().iter().flat_map(|t| t.iter()) {
            for b in v.to_bits().to_le_bytes() {
                hash ^= b as u64;
                hash = hash.wrapping_mul(0x0100_0000_01b3);
            }
        }
        hash
    }

    /// Advances the recurrent state by one input and returns the logits.
    pub fn step(&self, state: &mut LstmState, x: &[f64]) -> Result<Vec<f64>> {
        let (h, c) = self.cell.step(&state.h, &state.c, x)?;
        let logits = self.head.logits(&h);
        state.h = h;
        state.c = c;
        Ok(logits)
    }

    /// Runs the whole sequence from a zero state, caching every step.
    pub fn forward_sequence(&self, inputs: &[Vec<f64>]) -> Result<ForwardCache> {
        if inputs.is_empty() {
            return Err(Error::Shape("empty input sequence".into()));
        }
        let mut state = self.initial_state();
        let mut steps = Vec::with_capacity(inputs.len());
        let mut logits = Vec::with_capacity(inputs.len());
        let mut probs = Vec::with_capacity(inputs.len());
        for x in inputs {
            let cache = self.cell.step_cached(&state.h, &state.c, x)?;
            let z = self.head.logits(&cache.h);
            probs.push(softmax(&z));
            logits.push(z);
            state.h.clone_from(&cache.h);
            state.c.clone_from(&cache.c);
            steps.push(cache);
        }
        Ok(ForwardCache {
            steps,
            logits,
            probs,
        })
    }

    /// Backpropagation through time. `upstream[t]` is the loss gradient with
    /// respect to the logits at step `t`.
    pub fn backward_sequence(&self, cache: &ForwardCache, upstream: &[Vec<f64>]) -> Result<Gradients> {
        check_len("upstream gradients", upstream.len(), cache.steps.len())?;
        let hs = self.cell.hidden_size;
        let actions = self.actions();
        let mut grads = Gradients::zeros_like(self);
        let mut dh_next = vec![0.0; hs];
        let mut dc_next = vec![0.0; hs];
        let mut dz = vec![0.0; 4 * hs];

        for (t, step) in cache.steps.iter().enumerate().rev() {
            let dlogits = &upstream[t];
            check_len("upstream gradient", dlogits.len(), actions)?;
            check_finite("upstream gradient", dlogits)?;

            outer_acc(&mut grads.tensors[3], dlogits, &step.h);
            for (b, d) in grads.tensors[4].iter_mut().zip(dlogits) {
                *b += d;
            }
            let mut dh = dh_next.clone();
            self.head.weight.matvec_t_acc(dlogits, &mut dh);

            for k in 0..hs {
                let tanh_c = step.c[k].tanh();
                let d_o = dh[k] * tanh_c;
                let dc = dc_next[k] + dh[k] * step.o[k] * (1.0 - tanh_c * tanh_c);
                let d_i = dc * step.g[k];
                let d_g = dc * step.i[k];
                let d_f = dc * step.c_prev[k];
                dz[k] = d_i * step.i[k] * (1.0 - step.i[k]);
                dz[hs + k] = d_f * step.f[k] * (1.0 - step.f[k]);
                dz[2 * hs + k] = d_g * (1.0 - step.g[k] * step.g[k]);
                dz[3 * hs + k] = d_o * step.o[k] * (1.0 - step.o[k]);
                dc_next[k] = dc * step.f[k];
            }
            outer_acc(&mut grads.tensors[0], &dz, &step.x);
            outer_acc(&mut grads.tensors[1], &dz, &step.h_prev);
            for (b, d) in grads.tensors[2].iter_mut().zip(&dz) {
                *b += d;
            }
            dh_next.fill(0.0);
            self.cell.w_hidden.matvec_t_acc(&dz, &mut dh_next);
        }
        Ok(grads)
    }
}

/// Summed cross-entropy of per-step targets and its logit gradients.
pub fn cross_entropy(cache: &ForwardCache, targets: &[usize]) -> Result<(f64, Vec<Vec<f64>>)> {
    check_len("targets", targets.len(), cache.probs.len())?;
    let mut loss = 0.0;
    let mut upstream = Vec::with_capacity(targets.len());
    for (p, &y) in cache.probs.iter().zip(targets) {
        if y >= p.len() {
            return Err(Error::OutOfRange {
                index: y,
                len: p.len(),
            });
        }
        loss -= p[y].max(f64::MIN_POSITIVE).ln();
        let mut d = p.clone();
        d[y] -= 1.0;
        upstream.push(d);
    }
    Ok((loss, upstream))
}

/// AdaDelta running averages for a list of parameter tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaDelta {
    pub rho: f64,
    pub eps: f64,
    /// E[g^2]
    pub sq_grad: Vec<Vec<f64>>,
    /// E[dx^2]
    pub sq_update: Vec<Vec<f64>>,
}

impl AdaDelta {
    pub const DEFAULT_RHO: f64 = 0.95;
    pub const DEFAULT_EPS: f64 = 1e-6;

    pub fn new(shapes: &[usize], rho: f64, eps: f64) -> Self {
        AdaDelta {
            rho,
            eps,
            sq_grad: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            sq_update: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn for_network(net: &Network) -> Self {
        let shapes: Vec<usize> = net.tensors().iter().map(|t| t.len()).collect();
        Self::new(&shapes, Self::DEFAULT_RHO, Self::DEFAULT_EPS)
    }

    /// One descent step: `params += dx` with
    /// `dx = -sqrt(E[dx^2] + eps) / sqrt(E[g^2] + eps) * g`.
    pub fn update(&mut self, params: &mut [&mut [f64]], grads: &[Vec<f64>]) -> Result<()> {
        check_len("gradient tensors", grads.len(), self.sq_grad.len())?;
        check_len("parameter tensors", params.len(), self.sq_grad.len())?;
        for (k, g) in grads.iter().enumerate() {
            check_len("gradient", g.len(), self.sq_grad[k].len())?;
            check_len("parameters", params[k].len(), self.sq_grad[k].len())?;
            check_finite("gradient", g)?;
        }
        let (rho, eps) = (self.rho, self.eps);
        for (k, g) in grads.iter().enumerate() {
            let sq_g = &mut self.sq_grad[k];
            let sq_dx = &mut self.sq_update[k];
            for (j, &gj) in g.iter().enumerate() {
                sq_g[j] = rho * sq_g[j] + (1.0 - rho) * gj * gj;
                let dx = -((sq_dx[j] + eps).sqrt() / (sq_g[j] + eps).sqrt()) * gj;
                sq_dx[j] = rho * sq_dx[j] + (1.0 - rho) * dx * dx;
                params[k][j] += dx;
            }
        }
        Ok(())
    }

    pub fn step_network(&mut self, net: &mut Network, grads: &Gradients) -> Result<()> {
        let mut params = net.tensors_mut();
        self.update(&mut params, &grads.tensors)
    }
}

/// Outcome of comparing analytic gradients with central differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub checked: usize,
    pub passed: bool,
}

/// Denominator floor for relative errors, so that near-zero gradients are
/// compared absolutely.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

/// Relative error `|a - n| / max(|a|, |n|, REL_ERROR_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Central-difference check of `analytic` against `f` around `params`.
pub fn grad_check<F>(mut f: F, params: &[f64], analytic: &[f64], step: f64, tol: f64) -> GradCheckReport
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(params.len(), analytic.len(), "gradient length");
    let mut probe = params.to_vec();
    let mut worst = (0.0, 0);
    for j in 0..params.len() {
        probe[j] = params[j] + step;
        let up = f(&probe);
        probe[j] = params[j] - step;
        let down = f(&probe);
        probe[j] = params[j];
        let numeric = (up - down) / (2.0 * step);
        let err = relative_error(analytic[j], numeric);
        if err > worst.0 || err.is_nan() {
            worst = (err, j);
        }
    }
    GradCheckReport {
        max_rel_error: worst.0,
        worst_index: worst.1,
        checked: params.len(),
        passed: worst.0 <= tol,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::rng_from;

    /// Independent per-unit scalar evaluation of one LSTM step.
    fn scalar_step(cell: &LstmCell, h: &[f64], c: &[f64], x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let hs = cell.hidden_size();
        let pre = |row: usize| {
            let mut s = cell.bias()[row];
            for (d, xv) in x.iter().enumerate() {
                s += cell.w_input().get(row, d) * xv;
            }
            for (k, hv) in h.iter().enumerate() {
                s += cell.w_hidden().get(row, k) * hv;
            }
            s
        };
        let logistic = |v: f64| 1.0 / (1.0 + (-v).exp());
        let mut h_out = vec![0.0; hs];
        let mut c_out = vec![0.0; hs];
        for k in 0..hs {
            let i = logistic(pre(k));
            let f = logistic(pre(hs + k));
            let g = pre(2 * hs + k).tanh();
            let o = logistic(pre(3 * hs + k));
            c_out[k] = f * c[k] + i * g;
            h_out[k] = o * c_out[k].tanh();
        }
        (h_out, c_out)
    }

    #[test]
    fn zero_cell_stays_zero() {
        let cell = LstmCell::zeros(3, 2);
        let (h, c) = cell.step(&[0.0; 2], &[0.0; 2], &[1.0, -2.0, 0.5]).unwrap();
        assert_eq!(h, vec![0.0; 2]);
        assert_eq!(c, vec![0.0; 2]);
    }

    #[test]
    fn large_forget_bias_carries_memory() {
        let mut cell = LstmCell::zeros(2, 2);
        // forget bias 50, input gate bias -50 so nothing new is written.
        cell.bias_mut()[2..4].fill(50.0);
        cell.bias_mut()[0..2].fill(-50.0);
        let c_prev = [0.7, -0.3];
        let (_, c) = cell.step(&[0.0; 2], &c_prev, &[1.0, 1.0]).unwrap();
        for (a, b) in c.iter().zip(c_prev) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn step_matches_scalar_oracle() {
        let mut rng = rng_from(11, 0, 0);
        let cell = LstmCell::random(4, 3, &mut rng);
        let h = [0.1, -0.2, 0.3];
        let c = [0.5, 0.0, -0.4];
        let x = [1.0, 0.0, -1.0, 0.25];
        let (h1, c1) = cell.step(&h, &c, &x).unwrap();
        let (h2, c2) = scalar_step(&cell, &h, &c, &x);
        for k in 0..3 {
            assert!((h1[k] - h2[k]).abs() < 1e-14);
            assert!((c1[k] - c2[k]).abs() < 1e-14);
        }
    }

    #[test]
    fn step_rejects_bad_shapes_and_nan() {
        let cell = LstmCell::zeros(2, 2);
        assert!(matches!(cell.step(&[0.0; 2], &[0.0; 2], &[1.0]), Err(Error::Shape(_))));
        assert!(matches!(
            cell.step(&[0.0; 2], &[0.0; 2], &[f64::NAN, 0.0]),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn softmax_basics() {
        assert_eq!(softmax(&[0.0, 0.0]), vec![0.5, 0.5]);
        let a = softmax(&[1.0, 2.0, -3.0]);
        let b = softmax(&[1001.0, 1002.0, 997.0]);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
        let m = masked_softmax(&[5.0, 1.0, 1.0], &[false, true, true]);
        assert_eq!(m, vec![0.0, 0.5, 0.5]);
    }

    #[test]
    fn zero_head_is_uniform() {
        let mut rng = rng_from(3, 0, 0);
        let net = Network {
            cell: LstmCell::random(2, 3, &mut rng),
            head: SoftmaxHead::zeros(3, 4),
        };
        let cache = net.forward_sequence(&[vec![1.0, 2.0], vec![-1.0, 0.5]]).unwrap();
        for p in &cache.probs {
            for v in p {
                assert!((v - 0.25).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = rng_from(5, 0, 0);
        let net = Network::random(3, 4, 2, &mut rng);
        let cache = net.forward_sequence(&vec![vec![1.0, 0.0, 1.0]; 3]).unwrap();
        let grads = net.backward_sequence(&cache, &vec![vec![0.0; 2]; 3]).unwrap();
        assert!(grads.is_zero());
    }

    #[test]
    fn scalar_chain_rule_single_step() {
        // H = D = 1, one action with weight v and bias 0, loss = logit = v * h.
        // z_k = w_k x + u_k h0 + b_k with h0 = c0 = 0, so
        // c = i g, h = o tanh(c), dL/dh = v,
        // dL/dz_o = v tanh(c) o (1 - o)
        // dL/dz_i = v o (1 - tanh^2 c) g i (1 - i)
        // dL/dz_g = v o (1 - tanh^2 c) i (1 - g^2)
        // dL/dz_f = 0 (c0 = 0)
        let mut cell = LstmCell::zeros(1, 1);
        let w = [0.3, -0.2, 0.7, 0.5];
        let b = [0.1, 1.0, -0.1, 0.2];
        for k in 0..4 {
            cell.w_input_mut().set(k, 0, w[k]);
            cell.bias_mut()[k] = b[k];
        }
        let mut head = SoftmaxHead::zeros(1, 1);
        let v = 1.5;
        head.weight_mut().set(0, 0, v);
        let net = Network { cell, head };
        let x = 2.0;
        let cache = net.forward_sequence(&[vec![x]]).unwrap();
        let grads = net.backward_sequence(&cache, &[vec![1.0]]).unwrap();

        let s = |t: f64| 1.0 / (1.0 + (-t).exp());
        let i = s(w[0] * x + b[0]);
        let g = (w[2] * x + b[2]).tanh();
        let o = s(w[3] * x + b[3]);
        let c = i * g;
        let tc = c.tanh();
        let dz_i = v * o * (1.0 - tc * tc) * g * i * (1.0 - i);
        let dz_g = v * o * (1.0 - tc * tc) * i * (1.0 - g * g);
        let dz_o = v * tc * o * (1.0 - o);
        let expected_bias = [dz_i, 0.0, dz_g, dz_o];
        for k in 0..4 {
            assert!((grads.tensors[2][k] - expected_bias[k]).abs() < 1e-14);
            assert!((grads.tensors[0][k] - expected_bias[k] * x).abs() < 1e-14);
        }
        assert!((grads.tensors[3][0] - o * tc).abs() < 1e-14);
        assert!((grads.tensors[4][0] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn grad_check_quadratic_and_linear() {
        let r = grad_check(|p| p[0] * p[0], &[3.0], &[6.0], 1e-5, 1e-8);
        assert!(r.passed, "{r:?}");
        let r = grad_check(|p| 2.0 * p[0] - 3.0 * p[1], &[0.4, 1.0], &[2.0, -3.0], 1e-5, 1e-9);
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn bptt_matches_finite_differences_on_toy_sequence() {
        let mut rng = rng_from(99, 0, 0);
        let net = Network::random(3, 4, 3, &mut rng);
        let inputs = vec![vec![1.0, 0.0, -0.5], vec![0.0, 1.0, 0.3], vec![0.2, -1.0, 1.0]];
        let targets = [2, 0, 1];
        let cache = net.forward_sequence(&inputs).unwrap();
        let (_, up) = cross_entropy(&cache, &targets).unwrap();
        let grads = net.backward_sequence(&cache, &up).unwrap();
        let params = net.flatten();
        let mut probe = net.clone();
        let report = grad_check(
            |p| {
                probe.assign_flat(p).unwrap();
                let c = probe.forward_sequence(&inputs).unwrap();
                cross_entropy(&c, &targets).unwrap().0
            },
            &params,
            &grads.flatten(),
            1e-5,
            1e-4,
        );
        assert!(report.passed, "{report:?}");
    }

    #[test]
    fn adadelta_first_step_hand_value() {
        let mut opt = AdaDelta::new(&[1], 0.95, 1e-6);
        let mut p = [0.0];
        opt.update(&mut [&mut p[..]], &[vec![1.0]]).unwrap();
        assert!((opt.sq_grad[0][0] - 0.05).abs() < 1e-15);
        let expected = -(1e-6f64).sqrt() / (0.05f64 + 1e-6).sqrt();
        assert!((p[0] - expected).abs() < 1e-15);
        assert!((p[0] - (-0.004472)).abs() < 1e-6);
    }

    #[test]
    fn adadelta_zero_gradient_decays_only() {
        let mut opt = AdaDelta::new(&[2], 0.95, 1e-6);
        opt.sq_grad[0] = vec![1.0, 2.0];
        opt.sq_update[0] = vec![0.5, 0.5];
        let mut p = [1.0, -1.0];
        opt.update(&mut [&mut p[..]], &[vec![0.0, 0.0]]).unwrap();
        assert_eq!(p, [1.0, -1.0]);
        assert!((opt.sq_grad[0][0] - 0.95).abs() < 1e-15);
        assert!((opt.sq_update[0][1] - 0.475).abs() < 1e-15);
    }

    #[test]
    fn adadelta_rejects_nan() {
        let mut opt = AdaDelta::new(&[1], 0.95, 1e-6);
        let mut p = [0.0];
        assert!(opt.update(&mut [&mut p[..]], &[vec![f64::NAN]]).is_err());
        assert_eq!(p[0], 0.0);
    }

    #[test]
    fn clip_global_norm_rescales() {
        let mut g = Gradients {
            tensors: vec![vec![3.0], vec![4.0]],
        };
        let before = g.clip_global_norm(1.0);
        assert_eq!(before, 5.0);
        assert!((g.global_norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn widening_with_zero_columns_keeps_outputs() {
        let mut rng = rng_from(1, 2, 3);
        let net = Network::random(3, 4, 2, &mut rng);
        let wide = Network {
            cell: net.cell.widen_input(2),
            head: net.head.clone(),
        };
        let a = net.forward_sequence(&[vec![1.0, 2.0, 3.0]]).unwrap();
        let b = wide
            .forward_sequence(&[vec![1.0, 2.0, 3.0, 0.0, 0.0]])
            .unwrap();
        assert_eq!(a.probs, b.probs);
    }
}
