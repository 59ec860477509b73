//! Affine layers and a GRU cell with explicit reverse-mode gradients.
//!
//! GRU equations (gate order `r, z, n` in the stacked weights):
//!
//! ```text
//! r  = σ(W_ir x + b_ir + W_hr h + b_hr)
//! z  = σ(W_iz x + b_iz + W_hz h + b_hz)
//! n  = tanh(W_in x + b_in + r ⊙ (W_hn h + b_hn))
//! h' = (1 − z) ⊙ n + z ⊙ h
//! ```

use serde::{Deserialize, Serialize};

use crate::matrix::Matrix;
use crate::rng::SeededRng;

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn init_uniform(m: &mut [f64], bound: f64, rng: &mut SeededRng) {
    for v in m {
        *v = rng.uniform_in(-bound, bound);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Matrix::zeros(output, input),
            bias: vec![0.0; output],
        }
    }

    pub fn random(input: usize, output: usize, rng: &mut SeededRng) -> Self {
        let mut l = Self::zeros(input, output);
        let bound = 1.0 / (input.max(1) as f64).sqrt();
        init_uniform(l.weight.as_mut_slice(), bound, rng);
        init_uniform(&mut l.bias, bound, rng);
        l
    }

    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.output_dim()];
        self.weight.mul_vec_into(x, &mut out);
        out.iter_mut().zip(&self.bias).for_each(|(o, b)| *o += b);
        out
    }

    /// Accumulates parameter gradients for `dout` and adds `∂/∂x` into `dx`.
    pub fn backward(&self, x: &[f64], dout: &[f64], grad: &mut Linear, dx: Option<&mut [f64]>) {
        grad.weight.add_outer(dout, x);
        grad.bias.iter_mut().zip(dout).for_each(|(g, d)| *g += d);
        if let Some(dx) = dx {
            self.weight.mul_vec_t_acc(dout, dx);
        }
    }

    pub(crate) fn tensors(&self) -> [&[f64]; 2] {
        [self.weight.as_slice(), &self.bias]
    }

    pub(crate) fn tensors_mut(&mut self) -> [&mut [f64]; 2] {
        [self.weight.as_mut_slice(), &mut self.bias]
    }
}

pub fn relu(mut v: Vec<f64>) -> Vec<f64> {
    v.iter_mut().for_each(|x| *x = x.max(0.0));
    v
}

/// Zeroes gradient entries whose rectifier output was clamped.
pub fn relu_backward(out: &[f64], dout: &mut [f64]) {
    for (d, o) in dout.iter_mut().zip(out) {
        if *o <= 0.0 {
            *d = 0.0;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gru {
    pub w_ih: Matrix,
    pub w_hh: Matrix,
    pub b_ih: Vec<f64>,
    pub b_hh: Vec<f64>,
}

/// Activations of one GRU step, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct GruStep {
    pub h_prev: Vec<f64>,
    r: Vec<f64>,
    z: Vec<f64>,
    n: Vec<f64>,
    /// `W_hn h + b_hn`
    hn: Vec<f64>,
    pub h: Vec<f64>,
}

impl Gru {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            w_ih: Matrix::zeros(3 * hidden, input),
            w_hh: Matrix::zeros(3 * hidden, hidden),
            b_ih: vec![0.0; 3 * hidden],
            b_hh: vec![0.0; 3 * hidden],
        }
    }

    pub fn random(input: usize, hidden: usize, rng: &mut SeededRng) -> Self {
        let mut g = Self::zeros(input, hidden);
        let bound = 1.0 / (hidden.max(1) as f64).sqrt();
        init_uniform(g.w_ih.as_mut_slice(), bound, rng);
        init_uniform(g.w_hh.as_mut_slice(), bound, rng);
        init_uniform(&mut g.b_ih, bound, rng);
        init_uniform(&mut g.b_hh, bound, rng);
        g
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_hh.cols()
    }

    pub fn input_dim(&self) -> usize {
        self.w_ih.cols()
    }

    /// Input-side pre-activations `W_i x + b_i`; reusable when `x` is constant across steps.
    pub fn input_projection(&self, x: &[f64]) -> Vec<f64> {
        let mut gi = vec![0.0; self.w_ih.rows()];
        self.w_ih.mul_vec_into(x, &mut gi);
        gi.iter_mut().zip(&self.b_ih).for_each(|(g, b)| *g += b);
        gi
    }

    pub fn step(&self, x: &[f64], h: &[f64]) -> GruStep {
        self.step_projected(&self.input_projection(x), h)
    }

    pub fn step_projected(&self, gi: &[f64], h: &[f64]) -> GruStep {
        let hd = self.hidden_dim();
        let mut gh = vec![0.0; 3 * hd];
        self.w_hh.mul_vec_into(h, &mut gh);
        gh.iter_mut().zip(&self.b_hh).for_each(|(g, b)| *g += b);

        let mut r = vec![0.0; hd];
        let mut z = vec![0.0; hd];
        let mut n = vec![0.0; hd];
        let mut out = vec![0.0; hd];
        for k in 0..hd {
            r[k] = sigmoid(gi[k] + gh[k]);
            z[k] = sigmoid(gi[hd + k] + gh[hd + k]);
            n[k] = (gi[2 * hd + k] + r[k] * gh[2 * hd + k]).tanh();
            out[k] = (1.0 - z[k]) * n[k] + z[k] * h[k];
        }
        GruStep {
            h_prev: h.to_vec(),
            r,
            z,
            n,
            hn: gh[2 * hd..].to_vec(),
            h: out,
        }
    }

    /// Backward through one step.
    ///
    /// Accumulates weight-side gradients into `grad`, returns `∂/∂h_prev`,
    /// and adds the input-side pre-activation gradient (`∂/∂(W_i x + b_i)`)
    /// into `dgi`. The caller turns `dgi` into `W_ih`/`x` gradients, which
    /// lets constant inputs share a single outer product.
    pub fn step_backward(&self, s: &GruStep, dh: &[f64], grad: &mut Gru, dgi: &mut [f64]) -> Vec<f64> {
        let hd = self.hidden_dim();
        let mut dgh = vec![0.0; 3 * hd];
        let mut dh_prev = vec![0.0; hd];
        for k in 0..hd {
            let dn = dh[k] * (1.0 - s.z[k]);
            let dz = dh[k] * (s.h_prev[k] - s.n[k]);
            dh_prev[k] = dh[k] * s.z[k];
            let dn_pre = dn * (1.0 - s.n[k] * s.n[k]);
            let dr = dn_pre * s.hn[k];
            let dz_pre = dz * s.z[k] * (1.0 - s.z[k]);
            let dr_pre = dr * s.r[k] * (1.0 - s.r[k]);
            dgi[k] += dr_pre;
            dgi[hd + k] += dz_pre;
            dgi[2 * hd + k] += dn_pre;
            dgh[k] = dr_pre;
            dgh[hd + k] = dz_pre;
            dgh[2 * hd + k] = dn_pre * s.r[k];
        }
        grad.w_hh.add_outer(&dgh, &s.h_prev);
        grad.b_hh.iter_mut().zip(&dgh).for_each(|(g, d)| *g += d);
        self.w_hh.mul_vec_t_acc(&dgh, &mut dh_prev);
        dh_prev
    }

    /// Applies an accumulated input pre-activation gradient for input `x`.
    pub fn input_backward(&self, x: &[f64], dgi: &[f64], grad: &mut Gru, dx: Option<&mut [f64]>) {
        grad.w_ih.add_outer(dgi, x);
        grad.b_ih.iter_mut().zip(dgi).for_each(|(g, d)| *g += d);
        if let Some(dx) = dx {
            self.w_ih.mul_vec_t_acc(dgi, dx);
        }
    }

    pub(crate) fn tensors(&self) -> [&[f64]; 4] {
        [
            self.w_ih.as_slice(),
            self.w_hh.as_slice(),
            &self.b_ih,
            &self.b_hh,
        ]
    }

    pub(crate) fn tensors_mut(&mut self) -> [&mut [f64]; 4] {
        [
            self.w_ih.as_mut_slice(),
            self.w_hh.as_mut_slice(),
            &mut self.b_ih,
            &mut self.b_hh,
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn loss_of(h: &[f64], target: &[f64]) -> f64 {
        h.iter().zip(target).map(|(a, b)| 0.5 * (a - b) * (a - b)).sum()
    }

    #[test]
    fn gru_step_gradient_matches_finite_differences() {
        let mut rng = SeededRng::new(11);
        let gru = Gru::random(3, 4, &mut rng);
        let x: Vec<f64> = (0..3).map(|_| rng.normal()).collect();
        let h0: Vec<f64> = (0..4).map(|_| rng.normal() * 0.5).collect();
        let target: Vec<f64> = (0..4).map(|_| rng.normal()).collect();

        let s = gru.step(&x, &h0);
        let dh: Vec<f64> = s.h.iter().zip(&target).map(|(a, b)| a - b).collect();
        let mut grad = Gru::zeros(3, 4);
        let mut dgi = vec![0.0; 12];
        let dh0 = gru.step_backward(&s, &dh, &mut grad, &mut dgi);
        let mut dx = vec![0.0; 3];
        gru.input_backward(&x, &dgi, &mut grad, Some(&mut dx));

        let eps = 1e-6;
        let f = |g: &Gru, x: &[f64], h: &[f64]| loss_of(&g.step(x, h).h, &target);
        for k in 0..4 {
            let mut hp = h0.clone();
            hp[k] += eps;
            let mut hm = h0.clone();
            hm[k] -= eps;
            let num = (f(&gru, &x, &hp) - f(&gru, &x, &hm)) / (2.0 * eps);
            assert!((num - dh0[k]).abs() < 1e-8, "dh0[{k}] {num} vs {}", dh0[k]);
        }
        for k in 0..3 {
            let mut xp = x.clone();
            xp[k] += eps;
            let mut xm = x.clone();
            xm[k] -= eps;
            let num = (f(&gru, &xp, &h0) - f(&gru, &xm, &h0)) / (2.0 * eps);
            assert!((num - dx[k]).abs() < 1e-8);
        }
        for t in 0..4 {
            let n = gru.tensors()[t].len();
            for i in 0..n {
                let mut gp = gru.clone();
                gp.tensors_mut()[t][i] += eps;
                let mut gm = gru.clone();
                gm.tensors_mut()[t][i] -= eps;
                let num = (f(&gp, &x, &h0) - f(&gm, &x, &h0)) / (2.0 * eps);
                let ana = grad.tensors()[t][i];
                assert!((num - ana).abs() < 1e-8, "tensor {t}[{i}] {num} vs {ana}");
            }
        }
    }

    #[test]
    fn zero_gru_keeps_zero_state() {
        let gru = Gru::zeros(2, 3);
        // z = σ(0) = ½, n = tanh(0) = 0 → h' = ½ h
        let s = gru.step(&[1.0, -1.0], &[0.0; 3]);
        assert_eq!(s.h, vec![0.0; 3]);
    }

    #[test]
    fn linear_backward() {
        let l = Linear {
            weight: Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]),
            bias: vec![0.5, -0.5],
        };
        assert_eq!(l.forward(&[1.0, 1.0]), vec![3.5, 6.5]);
        let mut g = Linear::zeros(2, 2);
        let mut dx = vec![0.0; 2];
        l.backward(&[1.0, 2.0], &[1.0, 0.0], &mut g, Some(&mut dx));
        assert_eq!(g.weight.row(0), &[1.0, 2.0]);
        assert_eq!(g.bias, vec![1.0, 0.0]);
        assert_eq!(dx, vec![1.0, 2.0]);
    }
}
