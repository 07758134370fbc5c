use std::borrow::Cow;
use std::collections::BTreeMap;

use super::kernels as k;
use super::{check_affine, check_conv1d, check_conv2d, mismatch, ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    Conv1d { x: NodeId, k: NodeId },
    Conv2d { x: NodeId, k: NodeId },
    ChannelMix { x: NodeId, w: NodeId, b: Option<NodeId> },
    Affine { x: NodeId, w: NodeId, b: NodeId },
    Relu(NodeId),
    MaxPool1d { x: NodeId, arg: Vec<usize> },
    AvgPool2d(NodeId),
    Add(NodeId, NodeId),
    Concat(NodeId, NodeId),
    Reshape(NodeId),
    Sum(NodeId),
    DotConst(NodeId, Tensor),
}

#[derive(Debug)]
struct Node<'p> {
    value: Cow<'p, Tensor>,
    op: Op,
    /// Whether any parameter is upstream of this node.
    needs_grad: bool,
}

/// Per-parameter gradients produced by one backward pass.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradients {
    grads: BTreeMap<ParamId, Tensor>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.grads.get(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.grads.iter().map(|(id, t)| (*id, t))
    }

    fn add(&mut self, id: ParamId, shape: &[usize], g: Vec<f64>) {
        match self.grads.get_mut(&id) {
            Some(t) => t.data_mut().iter_mut().zip(g).for_each(|(a, b)| *a += b),
            None => {
                self.grads
                    .insert(id, Tensor::new(shape.to_vec(), g).expect("gradient shape"));
            }
        }
    }

    /// Adds `other` into `self` parameter by parameter.
    pub fn merge(&mut self, other: &Gradients) {
        for (id, t) in other.iter() {
            self.add(id, t.shape(), t.data().to_vec());
        }
    }
}

/// A forward computation recorded op by op. Parameter values are borrowed
/// from the store; every intermediate value is kept for the backward pass,
/// which walks the record in exact reverse order and then clears it.
#[derive(Debug)]
pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node<'p>>,
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Graph {
            params,
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Cow<'p, Tensor>, op: Op, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    /// A constant input; receives no gradient.
    pub fn input(&mut self, t: Tensor) -> NodeId {
        self.push(Cow::Owned(t), Op::Input, false)
    }

    pub fn param(&mut self, id: ParamId) -> NodeId {
        let params = self.params;
        self.push(Cow::Borrowed(params.value(id)), Op::Param(id), true)
    }

    pub fn conv1d(&mut self, x: NodeId, kernels: NodeId) -> Result<NodeId> {
        let (xv, kv) = (self.value(x), self.value(kernels));
        let (cin, len, cout) = check_conv1d(xv.shape(), kv.shape())?;
        let out = k::conv1d_forward(xv.data(), cin, len, kv.data(), cout);
        let ng = self.needs(x) || self.needs(kernels);
        Ok(self.push(
            Cow::Owned(Tensor::new(vec![cout, len], out)?),
            Op::Conv1d { x, k: kernels },
            ng,
        ))
    }

    pub fn conv2d(&mut self, x: NodeId, kernels: NodeId) -> Result<NodeId> {
        let (xv, kv) = (self.value(x), self.value(kernels));
        let (cin, h, w, cout) = check_conv2d(xv.shape(), kv.shape())?;
        let out = k::conv2d_forward(xv.data(), cin, h, w, kv.data(), cout);
        let ng = self.needs(x) || self.needs(kernels);
        Ok(self.push(
            Cow::Owned(Tensor::new(vec![cout, h, w], out)?),
            Op::Conv2d { x, k: kernels },
            ng,
        ))
    }

    /// Per-position channel projection: `[cin, ...] -> [cout, ...]` with
    /// weight `[cout x cin]` and optional bias `[cout]`.
    pub fn channel_mix(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>) -> Result<NodeId> {
        let (xv, wv) = (self.value(x), self.value(w));
        let (cout, cin) = match (xv.shape().first(), wv.shape()) {
            (Some(&c), [o, i]) if c == *i => (*o, *i),
            _ => return Err(mismatch("channel_mix", xv.shape(), wv.shape())),
        };
        if let Some(b) = b {
            if self.value(b).shape() != [cout] {
                return Err(mismatch("channel_mix bias", self.value(b).shape(), &[cout]));
            }
        }
        let s = xv.numel() / cin;
        let out = k::channel_mix_forward(
            xv.data(),
            cin,
            s,
            wv.data(),
            cout,
            b.map(|b| self.value(b).data()),
        );
        let mut shape = xv.shape().to_vec();
        shape[0] = cout;
        let ng = self.needs(x) || self.needs(w) || b.is_some_and(|b| self.needs(b));
        Ok(self.push(
            Cow::Owned(Tensor::new(shape, out)?),
            Op::ChannelMix { x, w, b },
            ng,
        ))
    }

    /// `x * W^T + b` for `x` of shape `[in]` or `[n x in]`.
    pub fn affine(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let (n, din, dout) = check_affine(xv.shape(), wv.shape(), bv.shape())?;
        let out = k::affine_forward(xv.data(), n, din, wv.data(), dout, bv.data());
        let shape = if xv.shape().len() == 1 { vec![dout] } else { vec![n, dout] };
        let ng = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(
            Cow::Owned(Tensor::new(shape, out)?),
            Op::Affine { x, w, b },
            ng,
        ))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let out = super::relu(self.value(x));
        let ng = self.needs(x);
        self.push(Cow::Owned(out), Op::Relu(x), ng)
    }

    pub fn maxpool1d(&mut self, x: NodeId) -> Result<NodeId> {
        let xv = self.value(x);
        let (c, len) = match xv.shape() {
            [c, len] if *len >= 1 => (*c, *len),
            s => return Err(mismatch("maxpool1d", s, &[])),
        };
        let (out, arg) = k::maxpool1d_forward(xv.data(), c, len);
        let ng = self.needs(x);
        Ok(self.push(
            Cow::Owned(Tensor::new(vec![c, k::pooled_len(len)], out)?),
            Op::MaxPool1d { x, arg },
            ng,
        ))
    }

    pub fn avgpool2d(&mut self, x: NodeId) -> Result<NodeId> {
        let out = super::avgpool2d(self.value(x))?;
        let ng = self.needs(x);
        Ok(self.push(Cow::Owned(out), Op::AvgPool2d(x), ng))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(mismatch("add", av.shape(), bv.shape()));
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect();
        let out = Tensor::new(av.shape().to_vec(), data)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Cow::Owned(out), Op::Add(a, b), ng))
    }

    /// Concatenates the flattened contents of `a` and `b` into a vector.
    pub fn concat(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let out = super::concat(self.value(a), self.value(b));
        let ng = self.needs(a) || self.needs(b);
        self.push(Cow::Owned(out), Op::Concat(a, b), ng)
    }

    pub fn flatten(&mut self, x: NodeId) -> NodeId {
        let out = super::flatten(self.value(x));
        let ng = self.needs(x);
        self.push(Cow::Owned(out), Op::Reshape(x), ng)
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let s = self.value(x).data().iter().sum();
        let ng = self.needs(x);
        self.push(Cow::Owned(Tensor::scalar(s)), Op::Sum(x), ng)
    }

    /// Scalar `sum_i x_i * c_i` against a constant tensor.
    pub fn dot_const(&mut self, x: NodeId, c: Tensor) -> Result<NodeId> {
        let xv = self.value(x);
        if xv.numel() != c.numel() {
            return Err(mismatch("dot_const", xv.shape(), c.shape()));
        }
        let s = xv.data().iter().zip(c.data()).map(|(a, b)| a * b).sum();
        let ng = self.needs(x);
        Ok(self.push(Cow::Owned(Tensor::scalar(s)), Op::DotConst(x, c), ng))
    }

    /// Backpropagates from a scalar node.
    pub fn backward(&mut self, loss: NodeId) -> Result<Gradients> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::NoRecord);
        }
        let v = self.value(loss);
        if v.numel() != 1 {
            return Err(mismatch("backward (loss must be scalar)", v.shape(), &[1]));
        }
        self.backward_with_seed(loss, &Tensor::scalar(1.0))
    }

    /// Backpropagates an upstream gradient `seed` (shaped like `node`). The
    /// record is cleared afterwards.
    pub fn backward_with_seed(&mut self, node: NodeId, seed: &Tensor) -> Result<Gradients> {
        if self.nodes.is_empty() || node.0 >= self.nodes.len() {
            return Err(Error::NoRecord);
        }
        let expected = self.value(node).numel();
        if seed.numel() != expected {
            return Err(mismatch("backward seed", seed.shape(), self.value(node).shape()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; node.0 + 1];
        grads[node.0] = Some(seed.data().to_vec());
        let mut out = Gradients::default();

        fn acc(grads: &mut [Option<Vec<f64>>], id: NodeId, g: Vec<f64>) {
            match &mut grads[id.0] {
                Some(existing) => existing.iter_mut().zip(g).for_each(|(a, b)| *a += b),
                slot => *slot = Some(g),
            }
        }

        for i in (0..=node.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let n = &self.nodes[i];
            if !n.needs_grad {
                continue;
            }
            match &n.op {
                Op::Input => {}
                Op::Param(id) => out.add(*id, n.value.shape(), g),
                Op::Conv1d { x, k: kern } => {
                    let (xv, kv) = (self.value(*x), self.value(*kern));
                    let (cin, len) = (xv.shape()[0], xv.shape()[1]);
                    let cout = kv.shape()[0];
                    let need_dx = self.needs(*x);
                    let (dx, dk) =
                        k::conv1d_backward(xv.data(), cin, len, kv.data(), cout, &g, need_dx);
                    if need_dx {
                        acc(&mut grads, *x, dx);
                    }
                    if self.needs(*kern) {
                        acc(&mut grads, *kern, dk);
                    }
                }
                Op::Conv2d { x, k: kern } => {
                    let (xv, kv) = (self.value(*x), self.value(*kern));
                    let (cin, h, w) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
                    let cout = kv.shape()[0];
                    let need_dx = self.needs(*x);
                    let (dx, dk) =
                        k::conv2d_backward(xv.data(), cin, h, w, kv.data(), cout, &g, need_dx);
                    if need_dx {
                        acc(&mut grads, *x, dx);
                    }
                    if self.needs(*kern) {
                        acc(&mut grads, *kern, dk);
                    }
                }
                Op::ChannelMix { x, w, b } => {
                    let (xv, wv) = (self.value(*x), self.value(*w));
                    let (cout, cin) = (wv.shape()[0], wv.shape()[1]);
                    let s = xv.numel() / cin;
                    let (dx, dw, db) = k::channel_mix_backward(xv.data(), cin, s, wv.data(), cout, &g);
                    if self.needs(*x) {
                        acc(&mut grads, *x, dx);
                    }
                    if self.needs(*w) {
                        acc(&mut grads, *w, dw);
                    }
                    if let Some(b) = b {
                        if self.needs(*b) {
                            acc(&mut grads, *b, db);
                        }
                    }
                }
                Op::Affine { x, w, b } => {
                    let (xv, wv) = (self.value(*x), self.value(*w));
                    let (dout_dim, din) = (wv.shape()[0], wv.shape()[1]);
                    let rows = xv.numel() / din;
                    let (dx, dw, db) = k::affine_backward(xv.data(), rows, din, wv.data(), dout_dim, &g);
                    if self.needs(*x) {
                        acc(&mut grads, *x, dx);
                    }
                    if self.needs(*w) {
                        acc(&mut grads, *w, dw);
                    }
                    if self.needs(*b) {
                        acc(&mut grads, *b, db);
                    }
                }
                Op::Relu(x) => {
                    let y = n.value.data();
                    let dx = g
                        .iter()
                        .zip(y)
                        .map(|(gv, yv)| if *yv > 0.0 { *gv } else { 0.0 })
                        .collect();
                    acc(&mut grads, *x, dx);
                }
                Op::MaxPool1d { x, arg } => {
                    let mut dx = vec![0.0; self.value(*x).numel()];
                    for (gv, &a) in g.iter().zip(arg) {
                        dx[a] += gv;
                    }
                    acc(&mut grads, *x, dx);
                }
                Op::AvgPool2d(x) => {
                    let s = self.value(*x).shape();
                    let dx = k::avgpool2d_backward(&g, s[0], s[1], s[2]);
                    acc(&mut grads, *x, dx);
                }
                Op::Add(a, b) => {
                    if self.needs(*a) {
                        acc(&mut grads, *a, g.clone());
                    }
                    if self.needs(*b) {
                        acc(&mut grads, *b, g);
                    }
                }
                Op::Concat(a, b) => {
                    let na = self.value(*a).numel();
                    let (ga, gb) = g.split_at(na);
                    if self.needs(*a) {
                        acc(&mut grads, *a, ga.to_vec());
                    }
                    if self.needs(*b) {
                        acc(&mut grads, *b, gb.to_vec());
                    }
                }
                Op::Reshape(x) => acc(&mut grads, *x, g),
                Op::Sum(x) => {
                    let dx = vec![g[0]; self.value(*x).numel()];
                    acc(&mut grads, *x, dx);
                }
                Op::DotConst(x, c) => {
                    let dx = c.data().iter().map(|cv| cv * g[0]).collect();
                    acc(&mut grads, *x, dx);
                }
            }
        }
        self.nodes.clear();
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Norm-wise relative error between the analytic gradient and central
    /// differences (h = 1e-5) of `f` for every parameter in `store`.
    fn fd_check(store: &ParamStore, f: &dyn Fn(&mut Graph) -> NodeId) -> f64 {
        let mut g = Graph::new(store);
        let loss = f(&mut g);
        let grads = g.backward(loss).unwrap();
        let h = 1e-5;
        let mut worst = 0.0f64;
        for p in store.iter() {
            let analytic = grads
                .get(p.id)
                .map(|t| t.data().to_vec())
                .unwrap_or_else(|| vec![0.0; p.value.numel()]);
            let mut numeric = vec![0.0; p.value.numel()];
            for (i, slot) in numeric.iter_mut().enumerate() {
                let mut s = store.clone();
                s.value_mut(p.id).data_mut()[i] += h;
                let mut gp = Graph::new(&s);
                let lp = f(&mut gp);
                let up = gp.value(lp).data()[0];
                let mut s = store.clone();
                s.value_mut(p.id).data_mut()[i] -= h;
                let mut gm = Graph::new(&s);
                let lm = f(&mut gm);
                let dn = gm.value(lm).data()[0];
                *slot = (up - dn) / (2.0 * h);
            }
            let diff: f64 = analytic.iter().zip(&numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let scale = analytic.iter().map(|a| a * a).sum::<f64>().sqrt()
                .max(numeric.iter().map(|a| a * a).sum::<f64>().sqrt())
                .max(1e-12);
            worst = worst.max(diff / scale);
        }
        worst
    }

    #[test]
    fn relu_sum_gradient() {
        let mut s = ParamStore::new();
        let x = s.add("x", Tensor::vector(vec![1.0, -1.0]));
        let mut g = Graph::new(&s);
        let xn = g.param(x);
        let r = g.relu(xn);
        let l = g.sum(r);
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[1.0, 0.0]);
    }

    #[test]
    fn relu_subgradient_at_zero() {
        let mut s = ParamStore::new();
        let x = s.add("x", Tensor::vector(vec![0.0]));
        let mut g = Graph::new(&s);
        let xn = g.param(x);
        let r = g.relu(xn);
        let l = g.sum(r);
        assert_eq!(g.backward(l).unwrap().get(x).unwrap().data(), &[0.0]);
    }

    #[test]
    fn maxpool_tie_routes_to_first() {
        let mut s = ParamStore::new();
        let x = s.add("x", Tensor::new(vec![1, 2], vec![2.0, 2.0]).unwrap());
        let mut g = Graph::new(&s);
        let xn = g.param(x);
        let p = g.maxpool1d(xn).unwrap();
        let l = g.sum(p);
        assert_eq!(g.backward(l).unwrap().get(x).unwrap().data(), &[1.0, 0.0]);
    }

    #[test]
    fn backward_requires_record() {
        let s = ParamStore::new();
        let mut g = Graph::new(&s);
        let x = g.input(Tensor::scalar(1.0));
        let l = g.sum(x);
        g.backward(l).unwrap();
        assert!(matches!(g.backward(l), Err(Error::NoRecord)));
        assert!(g.is_empty());
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut s = ParamStore::new();
        let x = s.add("x", Tensor::vector(vec![1.0, 2.0]));
        let mut g = Graph::new(&s);
        let xn = g.param(x);
        assert!(g.backward(xn).is_err());
    }

    #[test]
    fn layer_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for trial in 0..20 {
            let cin = rng.gen_range(1..4);
            let cout = rng.gen_range(1..4);
            let len = rng.gen_range(1..9);
            let (h, w) = (rng.gen_range(1..6), rng.gen_range(1..6));
            let mut s = ParamStore::new();
            let x1 = s.add("x1", rand_tensor(&mut rng, vec![cin, len]));
            let k1 = s.add("k1", rand_tensor(&mut rng, vec![cout, cin, 3]));
            let x2 = s.add("x2", rand_tensor(&mut rng, vec![cin, h, w]));
            let k2 = s.add("k2", rand_tensor(&mut rng, vec![cout, cin, 3, 3]));
            let wm = s.add("wm", rand_tensor(&mut rng, vec![cout, cin]));
            let bm = s.add("bm", rand_tensor(&mut rng, vec![cout]));
            let din = rng.gen_range(1..6);
            let dout = rng.gen_range(1..6);
            let xa = s.add("xa", rand_tensor(&mut rng, vec![din]));
            let wa = s.add("wa", rand_tensor(&mut rng, vec![dout, din]));
            let ba = s.add("ba", rand_tensor(&mut rng, vec![dout]));

            let c1 = rand_tensor(&mut rng, vec![cout * kernel_len(len)]);
            let c2 = rand_tensor(&mut rng, vec![cout * kernel_len(h) * kernel_len(w)]);
            let c3 = rand_tensor(&mut rng, vec![cout * len]);
            let c4 = rand_tensor(&mut rng, vec![dout + cout * h * w]);

            let conv1d_chain = |g: &mut Graph| {
                let (x, k) = (g.param(x1), g.param(k1));
                let c = g.conv1d(x, k).unwrap();
                let r = g.relu(c);
                let p = g.maxpool1d(r).unwrap();
                g.dot_const(p, c1.clone()).unwrap()
            };
            let conv2d_chain = |g: &mut Graph| {
                let (x, k) = (g.param(x2), g.param(k2));
                let c = g.conv2d(x, k).unwrap();
                let p = g.avgpool2d(c).unwrap();
                let f = g.flatten(p);
                g.dot_const(f, c2.clone()).unwrap()
            };
            let mix_chain = |g: &mut Graph| {
                let (x, k, w, b) = (g.param(x1), g.param(k1), g.param(wm), g.param(bm));
                let c = g.conv1d(x, k).unwrap();
                let m = g.channel_mix(x, w, Some(b)).unwrap();
                let a = g.add(c, m).unwrap();
                g.dot_const(a, c3.clone()).unwrap()
            };
            let affine_chain = |g: &mut Graph| {
                let (x, w, b) = (g.param(xa), g.param(wa), g.param(ba));
                let a = g.affine(x, w, b).unwrap();
                let (x2n, k2n) = (g.param(x2), g.param(k2));
                let c = g.conv2d(x2n, k2n).unwrap();
                let cat = g.concat(a, c);
                g.dot_const(cat, c4.clone()).unwrap()
            };
            for (name, f) in [
                ("conv1d+relu+maxpool", &conv1d_chain as &dyn Fn(&mut Graph) -> NodeId),
                ("conv2d+avgpool+flatten", &conv2d_chain),
                ("conv1d+channel_mix+add", &mix_chain),
                ("affine+concat", &affine_chain),
            ] {
                let err = fd_check(&s, f);
                assert!(err < 1e-4, "trial {trial} {name}: rel err {err}");
            }
        }
    }

    fn kernel_len(n: usize) -> usize {
        super::k::pooled_len(n)
    }

    #[test]
    fn seeded_backward_accumulates_shared_params() {
        let mut s = ParamStore::new();
        let w = s.add("w", Tensor::new(vec![1, 2], vec![2.0, -1.0]).unwrap());
        let b = s.add("b", Tensor::vector(vec![0.5]));
        let mut g = Graph::new(&s);
        let x1 = g.input(Tensor::vector(vec![1.0, 1.0]));
        let x2 = g.input(Tensor::vector(vec![3.0, 0.0]));
        let (wn, bn) = (g.param(w), g.param(b));
        let a1 = g.affine(x1, wn, bn).unwrap();
        let a2 = g.affine(x2, wn, bn).unwrap();
        let cat = g.concat(a1, a2);
        let grads = g.backward_with_seed(cat, &Tensor::vector(vec![1.0, 1.0])).unwrap();
        assert_eq!(grads.get(w).unwrap().data(), &[4.0, 1.0]);
        assert_eq!(grads.get(b).unwrap().data(), &[2.0]);
    }
}
