//! Fused LSTM tape op with hand-derived backpropagation through time.
//!
//! Running a whole direction as one node keeps the tape small; gate caches
//! from the forward pass are moved into the backward closure. Gate order in
//! the stacked weight matrices is `[input, forget, cell, output]`.

use crate::error::{Error, Result};
use crate::nn::graph::{Graph, Var};
use crate::nn::tensor::{axpy, dot, Scalar, Tensor};

/// Parameter handles for one LSTM direction.
#[derive(Debug, Clone, Copy)]
pub struct LstmVars {
    pub w_ih: Var,
    pub w_hh: Var,
    pub b_ih: Var,
    pub b_hh: Var,
}

impl<S: Scalar> Graph<S> {
    /// Single-direction LSTM over `x: T x D_in` producing `T x H`.
    /// Output row `t` always holds the state computed at frame `t`, also when
    /// `reverse` runs the recurrence from the last frame to the first.
    pub fn lstm(&mut self, x: Var, vars: LstmVars, reverse: bool) -> Result<Var> {
        let xv = self.value(x);
        if xv.shape().len() != 2 {
            return Err(Error::shape("lstm: input must be 2-D"));
        }
        let (t_len, d_in) = (xv.rows(), xv.cols());
        if t_len == 0 {
            return Err(Error::shape("lstm: empty sequence"));
        }
        let w_ih = self.value(vars.w_ih);
        if w_ih.shape().len() != 2 || w_ih.rows() % 4 != 0 || w_ih.cols() != d_in {
            return Err(Error::shape(format!(
                "lstm: w_ih {:?} incompatible with input dim {d_in}",
                w_ih.shape()
            )));
        }
        let h = w_ih.rows() / 4;
        if self.value(vars.w_hh).shape() != [4 * h, h]
            || self.value(vars.b_ih).shape() != [4 * h]
            || self.value(vars.b_hh).shape() != [4 * h]
        {
            return Err(Error::shape("lstm: recurrent weight or bias shape mismatch"));
        }

        let order: Vec<usize> = if reverse {
            (0..t_len).rev().collect()
        } else {
            (0..t_len).collect()
        };

        // Forward pass with gate caches (flat T x H arrays indexed by frame).
        let mut out = Tensor::<S>::zeros(&[t_len, h]);
        let mut cache_i = vec![S::zero(); t_len * h];
        let mut cache_f = vec![S::zero(); t_len * h];
        let mut cache_g = vec![S::zero(); t_len * h];
        let mut cache_o = vec![S::zero(); t_len * h];
        let mut cache_c = vec![S::zero(); t_len * h];
        let mut cache_tc = vec![S::zero(); t_len * h];
        {
            let xv = self.value(x).clone();
            let w_ih = self.value(vars.w_ih).clone();
            let w_hh = self.value(vars.w_hh).clone();
            let b_ih = self.value(vars.b_ih).clone();
            let b_hh = self.value(vars.b_hh).clone();

            let mut h_prev = vec![S::zero(); h];
            let mut c_prev = vec![S::zero(); h];
            let mut gates = vec![S::zero(); 4 * h];
            for (step, &t) in order.iter().enumerate() {
                if step == 0 {
                    h_prev.iter_mut().for_each(|v| *v = S::zero());
                    c_prev.iter_mut().for_each(|v| *v = S::zero());
                }
                let xrow = xv.row(t);
                for j in 0..4 * h {
                    gates[j] = dot(w_ih.row(j), xrow)
                        + b_ih.data()[j]
                        + dot(w_hh.row(j), &h_prev)
                        + b_hh.data()[j];
                }
                let base = t * h;
                for j in 0..h {
                    let ig = sigmoid(gates[j]);
                    let fg = sigmoid(gates[h + j]);
                    let gg = gates[2 * h + j].tanh();
                    let og = sigmoid(gates[3 * h + j]);
                    let c = fg * c_prev[j] + ig * gg;
                    let tc = c.tanh();
                    cache_i[base + j] = ig;
                    cache_f[base + j] = fg;
                    cache_g[base + j] = gg;
                    cache_o[base + j] = og;
                    cache_c[base + j] = c;
                    cache_tc[base + j] = tc;
                    out.row_mut(t)[j] = og * tc;
                }
                for j in 0..h {
                    h_prev[j] = out.row(t)[j];
                    c_prev[j] = cache_c[base + j];
                }
            }
        }

        let order_back = order.clone();
        let parents = vec![x, vars.w_ih, vars.w_hh, vars.b_ih, vars.b_hh];
        Ok(self.push_custom(
            out,
            parents,
            Box::new(move |grad: &Tensor<S>, pv: &[&Tensor<S>], value: &Tensor<S>| {
                let (xv, w_ih, w_hh) = (pv[0], pv[1], pv[2]);
                let (t_len, d_in) = (xv.rows(), xv.cols());
                let h = w_ih.rows() / 4;

                let mut dx = Tensor::zeros(&[t_len, d_in]);
                let mut dw_ih = Tensor::zeros(w_ih.shape());
                let mut dw_hh = Tensor::zeros(w_hh.shape());
                let mut db_ih = Tensor::zeros(&[4 * h]);
                let mut db_hh = Tensor::zeros(&[4 * h]);

                let mut dh_rec = vec![S::zero(); h];
                let mut dc = vec![S::zero(); h];
                let mut da = vec![S::zero(); 4 * h];
                let zeros = vec![S::zero(); h];

                for (step, &t) in order_back.iter().enumerate().rev() {
                    let base = t * h;
                    // State entering frame t in forward order.
                    let (h_prev, c_prev): (&[S], &[S]) = if step == 0 {
                        (&zeros, &zeros)
                    } else {
                        let pt = order_back[step - 1];
                        (value.row(pt), &cache_c[pt * h..(pt + 1) * h])
                    };

                    for j in 0..h {
                        let dh = grad.row(t)[j] + dh_rec[j];
                        let ig = cache_i[base + j];
                        let fg = cache_f[base + j];
                        let gg = cache_g[base + j];
                        let og = cache_o[base + j];
                        let tc = cache_tc[base + j];

                        let do_ = dh * tc;
                        dc[j] += dh * og * (S::one() - tc * tc);
                        let di = dc[j] * gg;
                        let df = dc[j] * c_prev[j];
                        let dg = dc[j] * ig;

                        da[j] = di * ig * (S::one() - ig);
                        da[h + j] = df * fg * (S::one() - fg);
                        da[2 * h + j] = dg * (S::one() - gg * gg);
                        da[3 * h + j] = do_ * og * (S::one() - og);

                        dc[j] *= fg;
                    }

                    let xrow = xv.row(t);
                    dh_rec.iter_mut().for_each(|v| *v = S::zero());
                    for j in 0..4 * h {
                        let dav = da[j];
                        if dav == S::zero() {
                            continue;
                        }
                        axpy(dav, w_ih.row(j), dx.row_mut(t));
                        axpy(dav, w_hh.row(j), &mut dh_rec);
                        axpy(dav, xrow, dw_ih.row_mut(j));
                        axpy(dav, h_prev, dw_hh.row_mut(j));
                        db_ih.data_mut()[j] += dav;
                        db_hh.data_mut()[j] += dav;
                    }
                }
                vec![dx, dw_ih, dw_hh, db_ih, db_hh]
            }),
        ))
    }

    /// Bidirectional LSTM: forward and reverse passes concatenated per frame,
    /// producing `T x 2H`.
    pub fn bilstm(&mut self, x: Var, forward: LstmVars, backward: LstmVars) -> Result<Var> {
        let fwd = self.lstm(x, forward, false)?;
        let rev = self.lstm(x, backward, true)?;
        self.concat_cols(&[fwd, rev])
    }
}

fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}
