//! The autodiff tape and the operation set.
//!
//! A [`Graph`] records one forward pass. Operations append nodes holding the
//! computed value plus a closure that maps the upstream gradient to parent
//! gradients. [`Graph::backward`] walks the tape in reverse creation order,
//! which is always a valid reverse topological order because parents are
//! created before children.

use crate::error::{Error, Result};
use crate::nn::tensor::{axpy, dot, Scalar, Tensor};

/// Epsilon used by layer normalization.
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

struct BackwardArgs<'a, S> {
    grad: &'a Tensor<S>,
    parents: &'a [&'a Tensor<S>],
    value: &'a Tensor<S>,
}

type BackFn<S> = Box<dyn Fn(&BackwardArgs<'_, S>) -> Vec<Tensor<S>>>;

struct Node<S> {
    value: Tensor<S>,
    parents: Vec<Var>,
    needs_grad: bool,
    backward: Option<BackFn<S>>,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
pub struct Gradients<S> {
    grads: Vec<Option<Tensor<S>>>,
}

impl<S: Scalar> Gradients<S> {
    pub fn get(&self, v: Var) -> Option<&Tensor<S>> {
        self.grads[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<S>> {
        self.grads[v.0].take()
    }
}

/// A recorded forward pass.
pub struct Graph<S: Scalar> {
    nodes: Vec<Node<S>>,
}

impl<S: Scalar> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    /// Inserts a constant leaf (no gradient is tracked through it).
    pub fn input(&mut self, value: Tensor<S>) -> Var {
        self.push(value, vec![], false, None)
    }

    /// Inserts a trainable leaf.
    pub fn param(&mut self, value: Tensor<S>) -> Var {
        self.push(value, vec![], true, None)
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Appends a node with an externally supplied backward function. Used by
    /// fused ops (LSTM) defined in sibling modules.
    pub(crate) fn push_custom(
        &mut self,
        value: Tensor<S>,
        parents: Vec<Var>,
        back: Box<dyn Fn(&Tensor<S>, &[&Tensor<S>], &Tensor<S>) -> Vec<Tensor<S>>>,
    ) -> Var {
        self.push(
            value,
            parents,
            false,
            Some(Box::new(move |args: &BackwardArgs<'_, S>| {
                back(args.grad, args.parents, args.value)
            })),
        )
    }

    fn push(
        &mut self,
        value: Tensor<S>,
        parents: Vec<Var>,
        leaf_needs_grad: bool,
        backward: Option<BackFn<S>>,
    ) -> Var {
        let needs_grad =
            leaf_needs_grad || parents.iter().any(|p| self.nodes[p.0].needs_grad);
        self.nodes.push(Node {
            value,
            parents,
            needs_grad,
            backward,
        });
        Var(self.nodes.len() - 1)
    }

    /// Reverse pass from a scalar loss. Returns per-node gradients; only
    /// nodes on a path from a trainable leaf to the loss receive one.
    pub fn backward(&self, loss: Var) -> Result<Gradients<S>> {
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(Error::shape("backward requires a scalar loss"));
        }
        let mut grads: Vec<Option<Tensor<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(S::one()));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad || grads[i].is_none() {
                continue;
            }
            let Some(back) = node.backward.as_ref() else {
                continue; // leaf: keep its accumulated gradient
            };
            let grad = grads[i].take().expect("gradient present");
            let parent_vals: Vec<&Tensor<S>> =
                node.parents.iter().map(|p| &self.nodes[p.0].value).collect();
            let args = BackwardArgs {
                grad: &grad,
                parents: &parent_vals,
                value: &node.value,
            };
            let parent_grads = back(&args);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for (p, pg) in node.parents.iter().zip(parent_grads) {
                if !self.nodes[p.0].needs_grad {
                    continue;
                }
                match grads[p.0].as_mut() {
                    Some(acc) => acc.add_assign(&pg),
                    None => grads[p.0] = Some(pg),
                }
            }
            grads[i] = Some(grad); // keep for callers inspecting intermediates
        }
        Ok(Gradients { grads })
    }

    // ---- elementwise ----

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if va.shape() != vb.shape() {
            return Err(Error::shape(format!(
                "add: {:?} vs {:?}",
                va.shape(),
                vb.shape()
            )));
        }
        let mut out = va.clone();
        out.add_assign(vb);
        Ok(self.push(
            out,
            vec![a, b],
            false,
            Some(Box::new(|args: &BackwardArgs<'_, S>| {
                vec![args.grad.clone(), args.grad.clone()]
            })),
        ))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let cs = S::from_f64(c);
        let out = self.nodes[x.0].value.map(|v| v * cs);
        self.push(
            out,
            vec![x],
            false,
            Some(Box::new(move |args: &BackwardArgs<'_, S>| {
                vec![args.grad.map(|g| g * cs)]
            })),
        )
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.nodes[x.0].value.map(|v| if v > S::zero() { v } else { S::zero() });
        self.push(
            out,
            vec![x],
            false,
            Some(Box::new(|args: &BackwardArgs<'_, S>| {
                let xv = args.parents[0];
                let mut dx = args.grad.clone();
                for (d, x) in dx.data_mut().iter_mut().zip(xv.data().iter()) {
                    if *x <= S::zero() {
                        *d = S::zero();
                    }
                }
                vec![dx]
            })),
        )
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.nodes[x.0].value.map(stable_sigmoid);
        self.push(
            out,
            vec![x],
            false,
            Some(Box::new(|args: &BackwardArgs<'_, S>| {
                let mut dx = args.grad.clone();
                for (d, y) in dx.data_mut().iter_mut().zip(args.value.data().iter()) {
                    *d *= *y * (S::one() - *y);
                }
                vec![dx]
            })),
        )
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.nodes[x.0].value.map(|v| v.tanh());
        self.push(
            out,
            vec![x],
            false,
            Some(Box::new(|args: &BackwardArgs<'_, S>| {
                let mut dx = args.grad.clone();
                for (d, y) in dx.data_mut().iter_mut().zip(args.value.data().iter()) {
                    *d *= S::one() - *y * *y;
                }
                vec![dx]
            })),
        )
    }

    /// Sum of all elements, as a scalar node.
    pub fn sum_all(&mut self, x: Var) -> Var {
        let total: S = self.nodes[x.0].value.data().iter().copied().sum();
        self.push(
            Tensor::scalar(total),
            vec![x],
            false,
            Some(Box::new(|args: &BackwardArgs<'_, S>| {
                let g = args.grad.item();
                let mut dx = Tensor::zeros(args.parents[0].shape());
                for d in dx.data_mut() {
                    *d = g;
                }
                vec![dx]
            })),
        )
    }

    // ---- linear algebra ----

    /// `y = x @ w^T + b` with `x: T x D_in`, `w: D_out x D_in`, `b: D_out`.
    pub fn affine(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xv = &self.nodes[x.0].value;
        let wv = &self.nodes[w.0].value;
        if xv.shape().len() != 2 || wv.shape().len() != 2 || xv.cols() != wv.cols() {
            return Err(Error::shape(format!(
                "affine: x {:?} vs w {:?}",
                xv.shape(),
                wv.shape()
            )));
        }
        let (t, d_out) = (xv.rows(), wv.rows());
        if let Some(bv) = b {
            let bt = &self.nodes[bv.0].value;
            if bt.shape() != [d_out] {
                return Err(Error::shape(format!(
                    "affine: bias {:?}, expected [{d_out}]",
                    bt.shape()
                )));
            }
        }

        let mut out = Tensor::zeros(&[t, d_out]);
        for i in 0..t {
            let xrow = xv.row(i);
            let orow = out.row_mut(i);
            for (o, oval) in orow.iter_mut().enumerate() {
                *oval = dot(xrow, wv.row(o));
            }
        }
        if let Some(bv) = b {
            let bt = self.nodes[bv.0].value.data().to_vec();
            for i in 0..t {
                for (o, oval) in out.row_mut(i).iter_mut().enumerate() {
                    *oval += bt[o];
                }
            }
        }

        let has_bias = b.is_some();
        let mut parents = vec![x, w];
        if let Some(bv) = b {
            parents.push(bv);
        }
        Ok(self.push(
            out,
            parents,
            false,
            Some(Box::new(move |args: &BackwardArgs<'_, S>| {
                let (xv, wv) = (args.parents[0], args.parents[1]);
                let g = args.grad;
                let (t, d_out) = (xv.rows(), wv.rows());

                // dx = g @ w
                let mut dx = Tensor::zeros(xv.shape());
                for i in 0..t {
                    let grow = g.row(i);
                    let dxrow = dx.row_mut(i);
                    for o in 0..d_out {
                        axpy(grow[o], wv.row(o), dxrow);
                    }
                }
                // dw = g^T @ x
                let mut dw = Tensor::zeros(wv.shape());
                for i in 0..t {
                    let grow = g.row(i);
                    let xrow = xv.row(i);
                    for o in 0..d_out {
                        axpy(grow[o], xrow, dw.row_mut(o));
                    }
                }
                let mut grads = vec![dx, dw];
                if has_bias {
                    let mut db = Tensor::zeros(&[d_out]);
                    for i in 0..t {
                        for (o, g) in g.row(i).iter().enumerate() {
                            db.data_mut()[o] += *g;
                        }
                    }
                    grads.push(db);
                }
                grads
            })),
        ))
    }

    /// 1-D convolution over the time axis with cross-correlation semantics.
    /// `x: T x C_in`, `w: C_out x C_in x K`, output `T' x C_out` with
    /// `T' = (T + 2*padding - K) / stride + 1`.
    pub fn conv1d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        padding: usize,
        stride: usize,
    ) -> Result<Var> {
        if stride == 0 {
            return Err(Error::argument("conv1d: stride must be >= 1"));
        }
        let xv = &self.nodes[x.0].value;
        let wv = &self.nodes[w.0].value;
        if xv.shape().len() != 2 || wv.shape().len() != 3 {
            return Err(Error::shape(format!(
                "conv1d: x {:?} must be 2-D, w {:?} must be 3-D",
                xv.shape(),
                wv.shape()
            )));
        }
        let (t, c_in) = (xv.rows(), xv.cols());
        let (c_out, w_cin, k) = (wv.shape()[0], wv.shape()[1], wv.shape()[2]);
        if w_cin != c_in {
            return Err(Error::shape(format!(
                "conv1d: input has {c_in} channels, weight expects {w_cin}"
            )));
        }
        if t + 2 * padding < k {
            return Err(Error::shape(format!(
                "conv1d: input length {t} too short for kernel {k} with padding {padding}"
            )));
        }
        if let Some(bv) = b {
            if self.nodes[bv.0].value.shape() != [c_out] {
                return Err(Error::shape("conv1d: bias shape mismatch"));
            }
        }
        let t_out = (t + 2 * padding - k) / stride + 1;

        // Repack the weight as K contiguous (C_out x C_in) matrices so the
        // inner reduction runs over contiguous rows.
        let wk = repack_conv_weight(wv, c_out, c_in, k);
        let mut out = Tensor::zeros(&[t_out, c_out]);
        for tp in 0..t_out {
            let base = (tp * stride) as isize - padding as isize;
            for (kk, wmat) in wk.iter().enumerate() {
                let ti = base + kk as isize;
                if ti < 0 || ti >= t as isize {
                    continue;
                }
                let xrow = xv.row(ti as usize);
                let orow = out.row_mut(tp);
                for (co, oval) in orow.iter_mut().enumerate() {
                    *oval += dot(xrow, wmat.row(co));
                }
            }
        }
        if let Some(bv) = b {
            let bt = self.nodes[bv.0].value.data().to_vec();
            for tp in 0..t_out {
                for (co, oval) in out.row_mut(tp).iter_mut().enumerate() {
                    *oval += bt[co];
                }
            }
        }

        let has_bias = b.is_some();
        let mut parents = vec![x, w];
        if let Some(bv) = b {
            parents.push(bv);
        }
        Ok(self.push(
            out,
            parents,
            false,
            Some(Box::new(move |args: &BackwardArgs<'_, S>| {
                let (xv, wv) = (args.parents[0], args.parents[1]);
                let g = args.grad;
                let (t, c_in) = (xv.rows(), xv.cols());
                let (c_out, _, k) = (wv.shape()[0], wv.shape()[1], wv.shape()[2]);
                let t_out = g.rows();
                let wk = repack_conv_weight(wv, c_out, c_in, k);

                let mut dx = Tensor::zeros(xv.shape());
                let mut dwk: Vec<Tensor<S>> =
                    (0..k).map(|_| Tensor::zeros(&[c_out, c_in])).collect();
                for tp in 0..t_out {
                    let base = (tp * stride) as isize - padding as isize;
                    let grow = g.row(tp);
                    for kk in 0..k {
                        let ti = base + kk as isize;
                        if ti < 0 || ti >= t as isize {
                            continue;
                        }
                        let ti = ti as usize;
                        for co in 0..c_out {
                            let gv = grow[co];
                            axpy(gv, wk[kk].row(co), dx.row_mut(ti));
                            axpy(gv, xv.row(ti), dwk[kk].row_mut(co));
                        }
                    }
                }
                let mut dw = Tensor::zeros(wv.shape());
                for co in 0..c_out {
                    for ci in 0..c_in {
                        for (kk, dwk_k) in dwk.iter().enumerate() {
                            dw.data_mut()[(co * c_in + ci) * k + kk] =
                                dwk_k.data()[co * c_in + ci];
                        }
                    }
                }
                let mut grads = vec![dx, dw];
                if has_bias {
                    let mut db = Tensor::zeros(&[c_out]);
                    for tp in 0..t_out {
                        for (co, gv) in g.row(tp).iter().enumerate() {
                            db.data_mut()[co] += *gv;
                        }
                    }
                    grads.push(db);
                }
                grads
            })),
        ))
    }

    /// `c = a @ b` with `a: M x K`, `b: K x N`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let av = &self.nodes[a.0].value;
        let bv = &self.nodes[b.0].value;
        if av.shape().len() != 2 || bv.shape().len() != 2 || av.cols() != bv.rows() {
            return Err(Error::shape(format!(
                "matmul: {:?} @ {:?}",
                av.shape(),
                bv.shape()
            )));
        }
        let (m, kk, n) = (av.rows(), av.cols(), bv.cols());
        let mut out = Tensor::zeros(&[m, n]);
        for i in 0..m {
            let arow = av.row(i);
            let orow = out.row_mut(i);
            for (k, &aik) in arow.iter().enumerate().take(kk) {
                axpy(aik, bv.row(k), orow);
            }
        }
        Ok(self.push(
            out,
            vec![a, b],
            false,
            Some(Box::new(|args: &BackwardArgs<'_, S>| {
                let (av, bv) = (args.parents[0], args.parents[1]);
                let g = args.grad;
                let (m, kk) = (av.rows(), av.cols());
                // da = g @ b^T
                let mut da = Tensor::zeros(av.shape());
                for i in 0..m {
                    let grow = g.row(i);
                    let darow = da.row_mut(i);
                    for (k, dval) in darow.iter_mut().enumerate() {
                        *dval = dot(grow, bv.row(k));
                    }
                }
                // db = a^T @ g
                let mut db = Tensor::zeros(bv.shape());
                for i in 0..m {
                    let arow = av.row(i);
                    let grow = g.row(i);
                    for k in 0..kk {
                        axpy(arow[k], grow, db.row_mut(k));
                    }
                }
                vec![da, db]
            })),
        ))
    }

    /// `c = a @ b^T` with `a: M x K`, `b: N x K`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let av = &self.nodes[a.0].value;
        let bv = &self.nodes[b.0].value;
        if av.shape().len() != 2 || bv.shape().len() != 2 || av.cols() != bv.cols() {
            return Err(Error::shape(format!(
                "matmul_bt: {:?} @ {:?}^T",
                av.shape(),
                bv.shape()
            )));
        }
        let (m, n) = (av.rows(), bv.rows());
        let mut out = Tensor::zeros(&[m, n]);
        for i in 0..m {
            let arow = av.row(i);
            let orow = out.row_mut(i);
            for (j, oval) in orow.iter_mut().enumerate().take(n) {
                *oval = dot(arow, bv.row(j));
            }
        }
        Ok(self.push(
            out,
            vec![a, b],
            false,
            Some(Box::new(|args: &BackwardArgs<'_, S>| {
                let (av, bv) = (args.parents[0], args.parents[1]);
                let g = args.grad;
                let (m, n) = (av.rows(), bv.rows());
                // da = g @ b
                let mut da = Tensor::zeros(av.shape());
                for i in 0..m {
                    let grow = g.row(i);
                    let darow = da.row_mut(i);
                    for j in 0..n {
                        axpy(grow[j], bv.row(j), darow);
                    }
                }
                // db = g^T @ a
                let mut db = Tensor::zeros(bv.shape());
                for i in 0..m {
                    let grow = g.row(i);
                    let arow = av.row(i);
                    for j in 0..n {
                        axpy(grow[j], arow, db.row_mut(j));
                    }
                }
                vec![da, db]
            })),
        ))
    }

    // ---- normalization and attention pieces ----

    /// Layer normalization over the feature (last) dimension.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let xv = &self.nodes[x.0].value;
        if xv.shape().len() != 2 {
            return Err(Error::shape("layer_norm: input must be 2-D"));
        }
        let d = xv.cols();
        if self.nodes[gain.0].value.shape() != [d] || self.nodes[bias.0].value.shape() != [d] {
            return Err(Error::shape("layer_norm: gain/bias must match feature dim"));
        }
        let eps = S::from_f64(LAYER_NORM_EPS);
        let t = xv.rows();
        let gv = self.nodes[gain.0].value.data().to_vec();
        let bv = self.nodes[bias.0].value.data().to_vec();
        let mut out = Tensor::zeros(&[t, d]);
        let dn = S::from_f64(d as f64);
        for i in 0..t {
            let row = xv.row(i);
            let mean = row.iter().copied().sum::<S>() / dn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() / dn;
            let inv = S::one() / (var + eps).sqrt();
            for (j, o) in out.row_mut(i).iter_mut().enumerate() {
                *o = gv[j] * (row[j] - mean) * inv + bv[j];
            }
        }
        Ok(self.push(
            out,
            vec![x, gain, bias],
            false,
            Some(Box::new(move |args: &BackwardArgs<'_, S>| {
                let xv = args.parents[0];
                let gainv = args.parents[1];
                let g = args.grad;
                let (t, d) = (xv.rows(), xv.cols());
                let dn = S::from_f64(d as f64);
                let eps = S::from_f64(LAYER_NORM_EPS);
                let mut dx = Tensor::zeros(xv.shape());
                let mut dgain = Tensor::zeros(&[d]);
                let mut dbias = Tensor::zeros(&[d]);
                let mut xhat = vec![S::zero(); d];
                let mut h = vec![S::zero(); d];
                for i in 0..t {
                    let row = xv.row(i);
                    let grow = g.row(i);
                    let mean = row.iter().copied().sum::<S>() / dn;
                    let var =
                        row.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() / dn;
                    let inv = S::one() / (var + eps).sqrt();
                    for j in 0..d {
                        xhat[j] = (row[j] - mean) * inv;
                        h[j] = grow[j] * gainv.data()[j];
                    }
                    let mean_h = h.iter().copied().sum::<S>() / dn;
                    let mean_hx =
                        h.iter().zip(xhat.iter()).map(|(&a, &b)| a * b).sum::<S>() / dn;
                    for (j, dxv) in dx.row_mut(i).iter_mut().enumerate() {
                        *dxv = inv * (h[j] - mean_h - xhat[j] * mean_hx);
                        dgain.data_mut()[j] += grow[j] * xhat[j];
                        dbias.data_mut()[j] += grow[j];
                    }
                }
                vec![dx, dgain, dbias]
            })),
        ))
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let xv = &self.nodes[x.0].value;
        if xv.shape().len() != 2 {
            return Err(Error::shape("softmax_rows: input must be 2-D"));
        }
        let (t, d) = (xv.rows(), xv.cols());
        let mut out = Tensor::zeros(&[t, d]);
        for i in 0..t {
            let row = xv.row(i);
            let max = row.iter().copied().fold(S::neg_infinity(), S::max);
            let orow = out.row_mut(i);
            let mut sum = S::zero();
            for (o, &v) in orow.iter_mut().zip(row.iter()) {
                *o = (v - max).exp();
                sum += *o;
            }
            for o in orow.iter_mut() {
                *o /= sum;
            }
        }
        Ok(self.push(
            out,
            vec![x],
            false,
            Some(Box::new(|args: &BackwardArgs<'_, S>| {
                let y = args.value;
                let g = args.grad;
                let (t, _d) = (y.rows(), y.cols());
                let mut dx = Tensor::zeros(y.shape());
                for i in 0..t {
                    let yrow = y.row(i);
                    let grow = g.row(i);
                    let inner = dot(grow, yrow);
                    for (j, dxv) in dx.row_mut(i).iter_mut().enumerate() {
                        *dxv = yrow[j] * (grow[j] - inner);
                    }
                }
                vec![dx]
            })),
        ))
    }

    // ---- reshaping ----

    /// Column slice `x[:, start .. start+len]`.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = &self.nodes[x.0].value;
        if xv.shape().len() != 2 || start + len > xv.cols() {
            return Err(Error::shape(format!(
                "slice_cols: [{start}, {}) out of {:?}",
                start + len,
                xv.shape()
            )));
        }
        let t = xv.rows();
        let mut out = Tensor::zeros(&[t, len]);
        for i in 0..t {
            out.row_mut(i).copy_from_slice(&xv.row(i)[start..start + len]);
        }
        Ok(self.push(
            out,
            vec![x],
            false,
            Some(Box::new(move |args: &BackwardArgs<'_, S>| {
                let xv = args.parents[0];
                let g = args.grad;
                let mut dx = Tensor::zeros(xv.shape());
                for i in 0..xv.rows() {
                    dx.row_mut(i)[start..start + len].copy_from_slice(g.row(i));
                }
                vec![dx]
            })),
        ))
    }

    /// Concatenates 2-D tensors along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::argument("concat_cols: no inputs"));
        }
        let t = self.nodes[parts[0].0].value.rows();
        let widths: Vec<usize> = parts
            .iter()
            .map(|p| {
                let v = &self.nodes[p.0].value;
                assert_eq!(v.shape().len(), 2);
                v.cols()
            })
            .collect();
        for p in parts {
            if self.nodes[p.0].value.rows() != t {
                return Err(Error::shape("concat_cols: row count mismatch"));
            }
        }
        let total: usize = widths.iter().sum();
        let mut out = Tensor::zeros(&[t, total]);
        for i in 0..t {
            let orow = out.row_mut(i);
            let mut off = 0;
            for (p, w) in parts.iter().zip(widths.iter()) {
                orow[off..off + w].copy_from_slice(self.nodes[p.0].value.row(i));
                off += w;
            }
        }
        let widths_back = widths.clone();
        Ok(self.push(
            out,
            parts.to_vec(),
            false,
            Some(Box::new(move |args: &BackwardArgs<'_, S>| {
                let g = args.grad;
                let t = g.rows();
                let mut grads: Vec<Tensor<S>> = widths_back
                    .iter()
                    .map(|&w| Tensor::zeros(&[t, w]))
                    .collect();
                for i in 0..t {
                    let grow = g.row(i);
                    let mut off = 0;
                    for (gt, &w) in grads.iter_mut().zip(widths_back.iter()) {
                        gt.row_mut(i).copy_from_slice(&grow[off..off + w]);
                        off += w;
                    }
                }
                grads
            })),
        ))
    }

    // ---- loss ----

    /// Mean binary cross entropy on logits, numerically stable:
    /// `max(z, 0) - z*y + ln(1 + exp(-|z|))`.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &Tensor<S>) -> Result<Var> {
        let zv = &self.nodes[logits.0].value;
        if zv.shape() != targets.shape() {
            return Err(Error::shape(format!(
                "bce_with_logits: logits {:?} vs targets {:?}",
                zv.shape(),
                targets.shape()
            )));
        }
        if targets
            .data()
            .iter()
            .any(|&y| y != S::zero() && y != S::one())
        {
            return Err(Error::argument(
                "bce_with_logits: targets must be exactly 0 or 1",
            ));
        }
        let n = zv.numel();
        if n == 0 {
            return Err(Error::argument("bce_with_logits: empty input"));
        }
        let nn = S::from_f64(n as f64);
        let mut total = S::zero();
        for (&z, &y) in zv.data().iter().zip(targets.data().iter()) {
            let pos = if z > S::zero() { z } else { S::zero() };
            total += pos - z * y + (S::one() + (-z.abs()).exp()).ln();
        }
        let loss = total / nn;
        let targets_back = targets.clone();
        Ok(self.push(
            Tensor::scalar(loss),
            vec![logits],
            false,
            Some(Box::new(move |args: &BackwardArgs<'_, S>| {
                let zv = args.parents[0];
                let g = args.grad.item();
                let nn = S::from_f64(zv.numel() as f64);
                let mut dz = Tensor::zeros(zv.shape());
                for ((d, &z), &y) in dz
                    .data_mut()
                    .iter_mut()
                    .zip(zv.data().iter())
                    .zip(targets_back.data().iter())
                {
                    *d = g * (stable_sigmoid(z) - y) / nn;
                }
                vec![dz]
            })),
        ))
    }

    // ---- composites ----

    /// Multi-head self-attention without masking. `x: T x d`, `d % heads == 0`.
    /// Weights follow the affine convention (`w: d x d`, `b: d`).
    #[allow(clippy::too_many_arguments)]
    pub fn multi_head_self_attention(
        &mut self,
        x: Var,
        wq: Var,
        bq: Var,
        wk: Var,
        bk: Var,
        wv: Var,
        bv: Var,
        wo: Var,
        bo: Var,
        heads: usize,
    ) -> Result<Var> {
        let d = self.nodes[x.0].value.cols();
        if heads == 0 || d % heads != 0 {
            return Err(Error::config(format!(
                "attention: model dim {d} not divisible by {heads} heads"
            )));
        }
        let dh = d / heads;
        let q = self.affine(x, wq, Some(bq))?;
        let k = self.affine(x, wk, Some(bk))?;
        let v = self.affine(x, wv, Some(bv))?;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut head_outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = self.slice_cols(q, h * dh, dh)?;
            let kh = self.slice_cols(k, h * dh, dh)?;
            let vh = self.slice_cols(v, h * dh, dh)?;
            let scores = self.matmul_bt(qh, kh)?;
            let scaled = self.scale(scores, scale);
            let attn = self.softmax_rows(scaled)?;
            head_outs.push(self.matmul(attn, vh)?);
        }
        let merged = self.concat_cols(&head_outs)?;
        self.affine(merged, wo, Some(bo))
    }
}

fn stable_sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

fn repack_conv_weight<S: Scalar>(
    w: &Tensor<S>,
    c_out: usize,
    c_in: usize,
    k: usize,
) -> Vec<Tensor<S>> {
    let mut wk: Vec<Tensor<S>> = (0..k).map(|_| Tensor::zeros(&[c_out, c_in])).collect();
    let data = w.data();
    for co in 0..c_out {
        for ci in 0..c_in {
            for (kk, wk_k) in wk.iter_mut().enumerate() {
                wk_k.data_mut()[co * c_in + ci] = data[(co * c_in + ci) * k + kk];
            }
        }
    }
    wk
}
