//! Gated recurrent cell, one direction, with backpropagation through time.
//!
//! Gate rows are stacked `[reset, update, candidate]`:
//! `r = s(Wi_r x + bi_r + Wh_r h + bh_r)`, `z = s(...)`,
//! `n = tanh(Wi_n x + bi_n + r * (Wh_n h + bh_n))`, `h' = (1 - z) n + z h`.

use alloc::vec;
use alloc::vec::Vec;

use crate::math::{sigmoid, tanh};

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct GruSpec {
    pub input: usize,
    pub hidden: usize,
    pub wi: usize,
    pub wh: usize,
    pub bi: usize,
    pub bh: usize,
    pub reverse: bool,
}

#[derive(Debug, Clone)]
pub(crate) struct GruCache {
    /// `h` before each processed step, in processing order.
    h_prev: Vec<Vec<f64>>,
    r: Vec<Vec<f64>>,
    z: Vec<Vec<f64>>,
    n: Vec<Vec<f64>>,
    hn: Vec<Vec<f64>>,
}

impl GruSpec {
    fn order(&self, len: usize) -> impl Iterator<Item = usize> {
        let rev = self.reverse;
        (0..len).map(move |i| if rev { len - 1 - i } else { i })
    }

    /// Runs over `xs` (`len x input`, time-major). Output row `t` is the state after consuming `xs[t]`.
    pub fn forward(&self, params: &[f64], xs: &[f64], len: usize) -> (Vec<f64>, GruCache) {
        let (d, h) = (self.input, self.hidden);
        let wi = &params[self.wi..self.wi + 3 * h * d];
        let wh = &params[self.wh..self.wh + 3 * h * h];
        let bi = &params[self.bi..self.bi + 3 * h];
        let bh = &params[self.bh..self.bh + 3 * h];
        let mut out = vec![0.0; len * h];
        let mut state = vec![0.0; h];
        let mut cache = GruCache {
            h_prev: Vec::with_capacity(len),
            r: Vec::with_capacity(len),
            z: Vec::with_capacity(len),
            n: Vec::with_capacity(len),
            hn: Vec::with_capacity(len),
        };
        let mut gi = vec![0.0; 3 * h];
        let mut gh = vec![0.0; 3 * h];
        for t in self.order(len) {
            let x = &xs[t * d..(t + 1) * d];
            for (row, g) in gi.iter_mut().enumerate() {
                let w = &wi[row * d..(row + 1) * d];
                *g = bi[row] + w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
            }
            for (row, g) in gh.iter_mut().enumerate() {
                let w = &wh[row * h..(row + 1) * h];
                *g = bh[row] + w.iter().zip(&state).map(|(a, b)| a * b).sum::<f64>();
            }
            let mut r = vec![0.0; h];
            let mut z = vec![0.0; h];
            let mut n = vec![0.0; h];
            let hn = gh[2 * h..3 * h].to_vec();
            for k in 0..h {
                r[k] = sigmoid(gi[k] + gh[k]);
                z[k] = sigmoid(gi[h + k] + gh[h + k]);
                n[k] = tanh(gi[2 * h + k] + r[k] * hn[k]);
            }
            let prev = state.clone();
            for k in 0..h {
                state[k] = (1.0 - z[k]) * n[k] + z[k] * prev[k];
            }
            out[t * h..(t + 1) * h].copy_from_slice(&state);
            cache.h_prev.push(prev);
            cache.r.push(r);
            cache.z.push(z);
            cache.n.push(n);
            cache.hn.push(hn);
        }
        (out, cache)
    }

    /// `dout` is the gradient w.r.t. the output rows; returns the input gradient.
    pub fn backward(&self, params: &[f64], xs: &[f64], len: usize, cache: &GruCache, dout: &[f64], grad: &mut [f64]) -> Vec<f64> {
        let (d, h) = (self.input, self.hidden);
        let wi = &params[self.wi..self.wi + 3 * h * d];
        let wh = &params[self.wh..self.wh + 3 * h * h];
        let mut dxs = vec![0.0; len * d];
        let mut carry = vec![0.0; h];
        let mut dgi = vec![0.0; 3 * h];
        let mut dgh = vec![0.0; 3 * h];
        let steps: Vec<usize> = self.order(len).collect();
        for (s, &t) in steps.iter().enumerate().rev() {
            let (hp, r, z, n, hn) = (&cache.h_prev[s], &cache.r[s], &cache.z[s], &cache.n[s], &cache.hn[s]);
            let mut dh_prev = vec![0.0; h];
            for k in 0..h {
                let dh = dout[t * h + k] + carry[k];
                let dn = dh * (1.0 - z[k]);
                let dz = dh * (hp[k] - n[k]);
                dh_prev[k] = dh * z[k];
                let dan = dn * (1.0 - n[k] * n[k]);
                let dr = dan * hn[k];
                let dar = dr * r[k] * (1.0 - r[k]);
                let daz = dz * z[k] * (1.0 - z[k]);
                dgi[k] = dar;
                dgi[h + k] = daz;
                dgi[2 * h + k] = dan;
                dgh[k] = dar;
                dgh[h + k] = daz;
                dgh[2 * h + k] = dan * r[k];
            }
            let x = &xs[t * d..(t + 1) * d];
            for row in 0..3 * h {
                let gi = dgi[row];
                let gh = dgh[row];
                grad[self.bi + row] += gi;
                grad[self.bh + row] += gh;
                let gw = &mut grad[self.wi + row * d..self.wi + (row + 1) * d];
                gw.iter_mut().zip(x).for_each(|(g, xv)| *g += gi * xv);
                let wrow = &wi[row * d..(row + 1) * d];
                let dx = &mut dxs[t * d..(t + 1) * d];
                dx.iter_mut().zip(wrow).for_each(|(g, w)| *g += gi * w);
                let gw = &mut grad[self.wh + row * h..self.wh + (row + 1) * h];
                gw.iter_mut().zip(hp).for_each(|(g, hv)| *g += gh * hv);
                let wrow = &wh[row * h..(row + 1) * h];
                dh_prev.iter_mut().zip(wrow).for_each(|(g, w)| *g += gh * w);
            }
            carry = dh_prev;
        }
        dxs
    }
}
