use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Module, Param};
use crate::error::{arg_err, shape_err, Result};
use crate::math::{exp, tanh};

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + exp(-x))
}

/// One LSTM direction. Gates are packed `[input, forget, cell, output]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmCell {
    pub w_x: Param,
    pub w_h: Param,
    pub b: Param,
    pub in_dim: usize,
    pub hidden: usize,
}

#[derive(Debug, Clone)]
struct StepCache {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    /// Post-activation gates.
    gates: Vec<f64>,
    c: Vec<f64>,
    tanh_c: Vec<f64>,
}

impl LstmCell {
    pub fn new(name: &str, in_dim: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let fan = in_dim + hidden;
        Self {
            w_x: Param::uniform(format!("{name}.w_x"), &[4 * hidden, in_dim], fan, rng),
            w_h: Param::uniform(format!("{name}.w_h"), &[4 * hidden, hidden], fan, rng),
            b: Param::uniform(format!("{name}.b"), &[4 * hidden], fan, rng),
            in_dim,
            hidden,
        }
    }

    fn step(&self, x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> StepCache {
        let h = self.hidden;
        let mut z = self.b.value.clone();
        for (r, zr) in z.iter_mut().enumerate() {
            let wx = &self.w_x.value[r * self.in_dim..(r + 1) * self.in_dim];
            let wh = &self.w_h.value[r * h..(r + 1) * h];
            *zr += wx.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
                + wh.iter().zip(h_prev).map(|(a, b)| a * b).sum::<f64>();
        }
        let mut gates = z;
        for (r, g) in gates.iter_mut().enumerate() {
            *g = if (2 * h..3 * h).contains(&r) { tanh(*g) } else { sigmoid(*g) };
        }
        let mut c = vec![0.0; h];
        let mut tanh_c = vec![0.0; h];
        for k in 0..h {
            c[k] = gates[h + k] * c_prev[k] + gates[k] * gates[2 * h + k];
            tanh_c[k] = tanh(c[k]);
        }
        StepCache { x: x.to_vec(), h_prev: h_prev.to_vec(), c_prev: c_prev.to_vec(), gates, c, tanh_c }
    }

    fn hidden_of(&self, s: &StepCache) -> Vec<f64> {
        let h = self.hidden;
        (0..h).map(|k| s.gates[3 * h + k] * s.tanh_c[k]).collect()
    }

    /// Backward through one step given `dh` and `dc` flowing into it.
    /// Returns `(dx, dh_prev, dc_prev)`.
    fn step_back(&mut self, s: &StepCache, dh: &[f64], dc_in: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let h = self.hidden;
        let mut dz = vec![0.0; 4 * h];
        let mut dc_prev = vec![0.0; h];
        for k in 0..h {
            let (i, f, g, o) = (s.gates[k], s.gates[h + k], s.gates[2 * h + k], s.gates[3 * h + k]);
            let dc = dc_in[k] + dh[k] * o * (1.0 - s.tanh_c[k] * s.tanh_c[k]);
            let d_o = dh[k] * s.tanh_c[k];
            let d_i = dc * g;
            let d_f = dc * s.c_prev[k];
            let d_g = dc * i;
            dc_prev[k] = dc * f;
            dz[k] = d_i * i * (1.0 - i);
            dz[h + k] = d_f * f * (1.0 - f);
            dz[2 * h + k] = d_g * (1.0 - g * g);
            dz[3 * h + k] = d_o * o * (1.0 - o);
        }
        let mut dx = vec![0.0; self.in_dim];
        let mut dh_prev = vec![0.0; h];
        for (r, &g) in dz.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            self.b.grad[r] += g;
            let xo = r * self.in_dim;
            for j in 0..self.in_dim {
                self.w_x.grad[xo + j] += g * s.x[j];
                dx[j] += g * self.w_x.value[xo + j];
            }
            let ho = r * h;
            for j in 0..h {
                self.w_h.grad[ho + j] += g * s.h_prev[j];
                dh_prev[j] += g * self.w_h.value[ho + j];
            }
        }
        (dx, dh_prev, dc_prev)
    }
}

impl Module for LstmCell {
    fn params(&self) -> Vec<&Param> {
        vec![&self.w_x, &self.w_h, &self.b]
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.w_x, &mut self.w_h, &mut self.b]
    }
}

/// Bidirectional LSTM over a whole sequence with zero initial states. The
/// output at step `i` is `[h_forward(i), h_backward(i)]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiLstm {
    pub fwd: LstmCell,
    pub bwd: LstmCell,
}

#[derive(Debug, Clone)]
pub struct BiLstmCache {
    fwd: Vec<StepCache>,
    /// Indexed by sequence position, not processing order.
    bwd: Vec<StepCache>,
}

/// Minimum number of steps: start, end and at least one step in between.
pub const MIN_SEQUENCE_STEPS: usize = 3;

impl BiLstm {
    pub fn new(name: &str, in_dim: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            fwd: LstmCell::new(&format!("{name}.fwd"), in_dim, hidden, rng),
            bwd: LstmCell::new(&format!("{name}.bwd"), in_dim, hidden, rng),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.fwd.in_dim
    }

    pub fn out_dim(&self) -> usize {
        2 * self.fwd.hidden
    }

    pub fn forward(&self, xs: &[Vec<f64>]) -> Result<(Vec<Vec<f64>>, BiLstmCache)> {
        if xs.len() < MIN_SEQUENCE_STEPS {
            return Err(arg_err(format!(
                "sequence of {} steps is shorter than {MIN_SEQUENCE_STEPS}",
                xs.len()
            )));
        }
        if let Some(x) = xs.iter().find(|x| x.len() != self.in_dim()) {
            return Err(shape_err(format!("step width {} != {}", x.len(), self.in_dim())));
        }
        let h = self.fwd.hidden;
        let n = xs.len();
        let mut fwd = Vec::with_capacity(n);
        let (mut hp, mut cp) = (vec![0.0; h], vec![0.0; h]);
        for x in xs {
            let s = self.fwd.step(x, &hp, &cp);
            hp = self.fwd.hidden_of(&s);
            cp = s.c.clone();
            fwd.push(s);
        }
        let mut bwd: Vec<Option<StepCache>> = (0..n).map(|_| None).collect();
        let (mut hp, mut cp) = (vec![0.0; h], vec![0.0; h]);
        for i in (0..n).rev() {
            let s = self.bwd.step(&xs[i], &hp, &cp);
            hp = self.bwd.hidden_of(&s);
            cp = s.c.clone();
            bwd[i] = Some(s);
        }
        let bwd: Vec<StepCache> = bwd.into_iter().map(|s| s.expect("filled")).collect();
        let outputs = (0..n)
            .map(|i| {
                let mut o = self.fwd.hidden_of(&fwd[i]);
                o.extend(self.bwd.hidden_of(&bwd[i]));
                o
            })
            .collect();
        Ok((outputs, BiLstmCache { fwd, bwd }))
    }

    /// Accumulates gradients for output cotangents `d_out` (one per step,
    /// width `2·hidden`) and returns per-step input gradients.
    pub fn backward(&mut self, cache: &BiLstmCache, d_out: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let n = cache.fwd.len();
        let h = self.fwd.hidden;
        if d_out.len() != n || d_out.iter().any(|d| d.len() != 2 * h) {
            return Err(shape_err("output cotangents do not match the cached sequence"));
        }
        let mut dxs = vec![vec![0.0; self.in_dim()]; n];
        let (mut dh, mut dc) = (vec![0.0; h], vec![0.0; h]);
        for i in (0..n).rev() {
            for k in 0..h {
                dh[k] += d_out[i][k];
            }
            let (dx, dhp, dcp) = self.fwd.step_back(&cache.fwd[i], &dh, &dc);
            dxs[i] = dx;
            dh = dhp;
            dc = dcp;
        }
        let (mut dh, mut dc) = (vec![0.0; h], vec![0.0; h]);
        for i in 0..n {
            for k in 0..h {
                dh[k] += d_out[i][h + k];
            }
            let (dx, dhp, dcp) = self.bwd.step_back(&cache.bwd[i], &dh, &dc);
            for (a, b) in dxs[i].iter_mut().zip(dx) {
                *a += b;
            }
            dh = dhp;
            dc = dcp;
        }
        Ok(dxs)
    }
}

impl Module for BiLstm {
    fn params(&self) -> Vec<&Param> {
        let mut v = self.fwd.params();
        v.extend(self.bwd.params());
        v
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.fwd.params_mut();
        v.extend(self.bwd.params_mut());
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck;
    use rand::{Rng, SeedableRng};

    fn random_seq(rng: &mut ChaCha8Rng, n: usize, w: usize) -> Vec<Vec<f64>> {
        (0..n).map(|_| (0..w).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
    }

    #[test]
    fn zero_weights_give_closed_form_constants() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut l = BiLstm::new("l", 4, 3, &mut rng);
        l.set_all(0.0);
        let xs = random_seq(&mut rng, 6, 4);
        let (out, _) = l.forward(&xs).unwrap();
        assert!(out.iter().flatten().all(|v| *v == 0.0));

        // Biases only: c_t = σ(b_f) c_{t−1} + σ(b_i) tanh(b_g), h_t = σ(b_o) tanh(c_t).
        let (bi, bf, bg, bo) = (0.3, -0.2, 0.7, 0.1);
        for cell in [&mut l.fwd, &mut l.bwd] {
            for k in 0..3 {
                cell.b.value[k] = bi;
                cell.b.value[3 + k] = bf;
                cell.b.value[6 + k] = bg;
                cell.b.value[9 + k] = bo;
            }
        }
        let (out, _) = l.forward(&xs).unwrap();
        let mut c = 0.0;
        let mut expect = Vec::new();
        for _ in 0..6 {
            c = sigmoid(bf) * c + sigmoid(bi) * tanh(bg);
            expect.push(sigmoid(bo) * tanh(c));
        }
        for i in 0..6 {
            assert!((out[i][0] - expect[i]).abs() < 1e-15);
            assert!((out[i][3] - expect[5 - i]).abs() < 1e-15);
        }
    }

    #[test]
    fn reversal_swaps_directions() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut l = BiLstm::new("l", 3, 4, &mut rng);
        // Same weights in both directions make the symmetry exact.
        l.bwd.w_x.value = l.fwd.w_x.value.clone();
        l.bwd.w_h.value = l.fwd.w_h.value.clone();
        l.bwd.b.value = l.fwd.b.value.clone();
        let xs = random_seq(&mut rng, 7, 3);
        let rev: Vec<Vec<f64>> = xs.iter().rev().cloned().collect();
        let (a, _) = l.forward(&xs).unwrap();
        let (b, _) = l.forward(&rev).unwrap();
        for i in 0..7 {
            assert_eq!(a[i][..4], b[6 - i][4..]);
            assert_eq!(a[i][4..], b[6 - i][..4]);
        }
    }

    #[test]
    fn rejects_short_sequences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let l = BiLstm::new("l", 2, 2, &mut rng);
        assert!(l.forward(&random_seq(&mut rng, 2, 2)).is_err());
        assert!(l.forward(&random_seq(&mut rng, 3, 3)).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut l = BiLstm::new("l", 3, 4, &mut rng);
        let xs = random_seq(&mut rng, 5, 3);
        let weights = random_seq(&mut rng, 5, 8);
        let (xs2, w2) = (xs.clone(), weights.clone());
        gradcheck::check_module(
            &mut l,
            &mut |m| {
                let (out, _) = m.forward(&xs).unwrap();
                out.iter().zip(&weights).map(|(o, w)| o.iter().zip(w).map(|(a, b)| a * b).sum::<f64>()).sum()
            },
            &mut |m| {
                let (_, cache) = m.forward(&xs2).unwrap();
                m.backward(&cache, &w2).unwrap();
            },
            40,
            1e-3,
        );
        // Input gradients.
        let (_, cache) = l.forward(&xs).unwrap();
        l.zero_grad();
        let dxs = l.backward(&cache, &weights).unwrap();
        for i in 0..5 {
            for j in 0..3 {
                let h = 1e-5;
                let f = |xs: &[Vec<f64>]| -> f64 {
                    let (out, _) = l.forward(xs).unwrap();
                    out.iter().zip(&weights).map(|(o, w)| o.iter().zip(w).map(|(a, b)| a * b).sum::<f64>()).sum()
                };
                let mut xp = xs.clone();
                xp[i][j] += h;
                let mut xm = xs.clone();
                xm[i][j] -= h;
                let fd = (f(&xp) - f(&xm)) / (2.0 * h);
                assert!(gradcheck::rel_err(dxs[i][j], fd) < 1e-4);
            }
        }
    }
}
