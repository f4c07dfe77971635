//! LSTM layer with full backpropagation through time.
//!
//! Gate order in the stacked parameter tensors is (input, forget, cell,
//! output). Initial hidden and cell state are zero.

use super::layers::dims3;
use super::tensor::Tensor;
use crate::{Error, Result};

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[derive(Debug, Clone)]
pub struct Lstm {
    pub input_dim: usize,
    pub hidden: usize,
    /// Emit the full `[N × T × H]` sequence; otherwise only the last step `[N × H]`.
    pub return_sequences: bool,
    /// `[4H × D]`
    pub w_ih: Tensor,
    /// `[4H × H]`
    pub w_hh: Tensor,
    /// `[4H]`
    pub bias: Tensor,
    pub grad_w_ih: Tensor,
    pub grad_w_hh: Tensor,
    pub grad_bias: Tensor,
    cache: Option<LstmCache>,
}

#[derive(Debug, Clone)]
struct LstmCache {
    input: Tensor,
    /// per timestep, each `[N × H]`
    gates_i: Vec<Vec<f64>>,
    gates_f: Vec<Vec<f64>>,
    gates_g: Vec<Vec<f64>>,
    gates_o: Vec<Vec<f64>>,
    cells: Vec<Vec<f64>>,
    tanh_cells: Vec<Vec<f64>>,
    hiddens: Vec<Vec<f64>>,
}

impl Lstm {
    pub fn new(input_dim: usize, hidden: usize, return_sequences: bool) -> Self {
        Lstm {
            input_dim,
            hidden,
            return_sequences,
            w_ih: Tensor::zeros(&[4 * hidden, input_dim]),
            w_hh: Tensor::zeros(&[4 * hidden, hidden]),
            bias: Tensor::zeros(&[4 * hidden]),
            grad_w_ih: Tensor::zeros(&[4 * hidden, input_dim]),
            grad_w_hh: Tensor::zeros(&[4 * hidden, hidden]),
            grad_bias: Tensor::zeros(&[4 * hidden]),
            cache: None,
        }
    }

    /// Forward over `[N × T × D]`; output `[N × T × H]` or `[N × H]`.
    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let [n, t_len, d] = dims3(x)?;
        if d != self.input_dim {
            return Err(Error::ShapeMismatch(format!(
                "lstm input dim {d}, weights expect {}",
                self.input_dim
            )));
        }
        if t_len == 0 {
            return Err(Error::invalid("lstm", "zero-length sequence"));
        }
        let h_dim = self.hidden;

        let mut cache = LstmCache {
            input: x.clone(),
            gates_i: Vec::with_capacity(t_len),
            gates_f: Vec::with_capacity(t_len),
            gates_g: Vec::with_capacity(t_len),
            gates_o: Vec::with_capacity(t_len),
            cells: Vec::with_capacity(t_len),
            tanh_cells: Vec::with_capacity(t_len),
            hiddens: Vec::with_capacity(t_len),
        };

        let mut h_prev = vec![0.0; n * h_dim];
        let mut c_prev = vec![0.0; n * h_dim];
        let mut seq_out = if self.return_sequences {
            Some(vec![0.0; n * t_len * h_dim])
        } else {
            None
        };

        for t in 0..t_len {
            let mut gi = vec![0.0; n * h_dim];
            let mut gf = vec![0.0; n * h_dim];
            let mut gg = vec![0.0; n * h_dim];
            let mut go = vec![0.0; n * h_dim];
            let mut c_t = vec![0.0; n * h_dim];
            let mut tanh_c = vec![0.0; n * h_dim];
            let mut h_t = vec![0.0; n * h_dim];

            for b in 0..n {
                let x_t = &x.data[(b * t_len + t) * d..(b * t_len + t + 1) * d];
                let h_row = &h_prev[b * h_dim..(b + 1) * h_dim];
                for j in 0..h_dim {
                    // pre-activations for the 4 gates of unit j
                    let mut z = [0.0f64; 4];
                    for (gate, zv) in z.iter_mut().enumerate() {
                        let row = gate * h_dim + j;
                        let mut acc = self.bias.data[row];
                        let wi = &self.w_ih.data[row * d..(row + 1) * d];
                        for (xv, wv) in x_t.iter().zip(wi) {
                            acc += xv * wv;
                        }
                        let wh = &self.w_hh.data[row * h_dim..(row + 1) * h_dim];
                        for (hv, wv) in h_row.iter().zip(wh) {
                            acc += hv * wv;
                        }
                        *zv = acc;
                    }
                    let idx = b * h_dim + j;
                    let i_g = sigmoid(z[0]);
                    let f_g = sigmoid(z[1]);
                    let g_g = z[2].tanh();
                    let o_g = sigmoid(z[3]);
                    let c = f_g * c_prev[idx] + i_g * g_g;
                    let tc = c.tanh();
                    gi[idx] = i_g;
                    gf[idx] = f_g;
                    gg[idx] = g_g;
                    go[idx] = o_g;
                    c_t[idx] = c;
                    tanh_c[idx] = tc;
                    h_t[idx] = o_g * tc;
                }
            }

            if let Some(out) = seq_out.as_mut() {
                for b in 0..n {
                    let dst = (b * t_len + t) * h_dim;
                    out[dst..dst + h_dim].copy_from_slice(&h_t[b * h_dim..(b + 1) * h_dim]);
                }
            }
            cache.gates_i.push(gi);
            cache.gates_f.push(gf);
            cache.gates_g.push(gg);
            cache.gates_o.push(go);
            cache.cells.push(c_t.clone());
            cache.tanh_cells.push(tanh_c);
            cache.hiddens.push(h_t.clone());
            h_prev = h_t;
            c_prev = c_t;
        }

        let out = match seq_out {
            Some(data) => Tensor { shape: vec![n, t_len, h_dim], data },
            None => Tensor { shape: vec![n, h_dim], data: h_prev.clone() },
        };
        self.cache = Some(cache);
        Ok(out)
    }

    /// BPTT; `grad` is `[N × T × H]` (sequence mode) or `[N × H]` (last step).
    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::invalid("backward", "no cached forward activations"))?;
        let [n, t_len, d] = dims3(&cache.input)?;
        let h_dim = self.hidden;

        self.grad_w_ih.data.fill(0.0);
        self.grad_w_hh.data.fill(0.0);
        self.grad_bias.data.fill(0.0);
        let mut gx = Tensor::zeros(&[n, t_len, d]);

        let mut dh_next = vec![0.0; n * h_dim];
        let mut dc_next = vec![0.0; n * h_dim];

        for t in (0..t_len).rev() {
            let mut dh = dh_next.clone();
            if self.return_sequences {
                for b in 0..n {
                    let src = (b * t_len + t) * h_dim;
                    for j in 0..h_dim {
                        dh[b * h_dim + j] += grad.data[src + j];
                    }
                }
            } else if t == t_len - 1 {
                for (dv, &gv) in dh.iter_mut().zip(&grad.data) {
                    *dv += gv;
                }
            }

            let gi = &cache.gates_i[t];
            let gf = &cache.gates_f[t];
            let gg = &cache.gates_g[t];
            let go = &cache.gates_o[t];
            let tc = &cache.tanh_cells[t];
            let c_prev: &[f64] = if t > 0 { &cache.cells[t - 1] } else { &[] };
            let h_prev: &[f64] = if t > 0 { &cache.hiddens[t - 1] } else { &[] };

            let mut dh_prev = vec![0.0; n * h_dim];
            let mut dc_prev = vec![0.0; n * h_dim];

            for b in 0..n {
                let x_t = &cache.input.data[(b * t_len + t) * d..(b * t_len + t + 1) * d];
                for j in 0..h_dim {
                    let idx = b * h_dim + j;
                    let dc = dc_next[idx] + dh[idx] * go[idx] * (1.0 - tc[idx] * tc[idx]);
                    let c_pv = if t > 0 { c_prev[idx] } else { 0.0 };
                    let dz = [
                        dc * gg[idx] * gi[idx] * (1.0 - gi[idx]),
                        dc * c_pv * gf[idx] * (1.0 - gf[idx]),
                        dc * gi[idx] * (1.0 - gg[idx] * gg[idx]),
                        dh[idx] * tc[idx] * go[idx] * (1.0 - go[idx]),
                    ];
                    dc_prev[idx] = dc * gf[idx];

                    for (gate, &dzv) in dz.iter().enumerate() {
                        if dzv == 0.0 {
                            continue;
                        }
                        let row = gate * h_dim + j;
                        self.grad_bias.data[row] += dzv;
                        let gw_ih = &mut self.grad_w_ih.data[row * d..(row + 1) * d];
                        let gx_t = &mut gx.data[(b * t_len + t) * d..(b * t_len + t + 1) * d];
                        let w_ih = &self.w_ih.data[row * d..(row + 1) * d];
                        for i in 0..d {
                            gw_ih[i] += dzv * x_t[i];
                            gx_t[i] += dzv * w_ih[i];
                        }
                        let w_hh = &self.w_hh.data[row * h_dim..(row + 1) * h_dim];
                        let gw_hh = &mut self.grad_w_hh.data[row * h_dim..(row + 1) * h_dim];
                        if t > 0 {
                            let h_row = &h_prev[b * h_dim..(b + 1) * h_dim];
                            for k in 0..h_dim {
                                gw_hh[k] += dzv * h_row[k];
                                dh_prev[b * h_dim + k] += dzv * w_hh[k];
                            }
                        }
                    }
                }
            }
            dh_next = dh_prev;
            dc_next = dc_prev;
        }
        Ok(gx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn zero_weights_give_zero_output_and_input_grad() {
        let mut lstm = Lstm::new(3, 2, true);
        let x = Tensor::from_vec(&[1, 4, 3], (0..12).map(|i| i as f64 * 0.1).collect()).unwrap();
        let y = lstm.forward(&x).unwrap();
        assert!(y.data.iter().all(|&v| v == 0.0));
        let g = lstm.backward(&Tensor::from_vec(&[1, 4, 2], vec![1.0; 8]).unwrap()).unwrap();
        assert!(g.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_step_matches_closed_form() {
        // N=1, T=1, D=1, H=1 with hand-set gate weights
        let mut lstm = Lstm::new(1, 1, false);
        // rows: input, forget, cell, output
        lstm.w_ih.data = vec![0.5, -0.3, 0.8, 0.2];
        lstm.bias.data = vec![0.1, 0.2, -0.1, 0.05];
        let x_val = 0.7;
        let x = Tensor::from_vec(&[1, 1, 1], vec![x_val]).unwrap();
        let y = lstm.forward(&x).unwrap();

        let i = sigmoid(0.5 * x_val + 0.1);
        let f_ = sigmoid(-0.3 * x_val + 0.2);
        let g = (0.8f64 * x_val - 0.1).tanh();
        let o = sigmoid(0.2 * x_val + 0.05);
        let c = f_ * 0.0 + i * g;
        let expected = o * c.tanh();
        assert_abs_diff_eq!(y.data[0], expected, epsilon = 1e-12);
    }

    #[test]
    fn sequence_output_shape_for_grid_input() {
        let mut lstm = Lstm::new(8, 16, true);
        let x = Tensor::zeros(&[2, 5, 8]);
        let y = lstm.forward(&x).unwrap();
        assert_eq!(y.shape, vec![2, 5, 16]);
    }

    #[test]
    fn empty_sequence_rejected() {
        let mut lstm = Lstm::new(2, 2, true);
        assert!(lstm.forward(&Tensor::zeros(&[1, 0, 2])).is_err());
    }
}
