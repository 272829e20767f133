//! Reverse-mode automatic differentiation on a flat tape.
//!
//! A [`Graph`] records one forward pass; node ids are indices into the tape,
//! and parents always precede children, so a single reverse sweep computes
//! all gradients. Parameters are pulled in by name from a [`ParamStore`] and
//! their gradients written back after the sweep.

use std::collections::HashMap;

use super::params::ParamStore;
use super::tensor::{Scalar, Tensor};

pub type NodeId = usize;

type BackFn<F> = Box<dyn Fn(&Tensor<F>, &[&Tensor<F>], &Tensor<F>) -> Vec<Tensor<F>>>;

struct Node<F: Scalar> {
    value: Tensor<F>,
    parents: Vec<NodeId>,
    back: Option<BackFn<F>>,
}

pub struct Graph<F: Scalar> {
    nodes: Vec<Node<F>>,
    params: HashMap<String, NodeId>,
    param_names: Vec<Option<String>>,
}

impl<F: Scalar> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> Graph<F> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: HashMap::new(),
            param_names: Vec::new(),
        }
    }

    pub fn value(&self, id: NodeId) -> &Tensor<F> {
        &self.nodes[id].value
    }

    fn push(&mut self, value: Tensor<F>, parents: Vec<NodeId>, back: Option<BackFn<F>>) -> NodeId {
        debug_assert!(value.all_finite(), "non-finite value produced at node {}", self.nodes.len());
        self.nodes.push(Node { value, parents, back });
        self.param_names.push(None);
        self.nodes.len() - 1
    }

    /// Leaf that receives no gradient bookkeeping of its own.
    pub fn constant(&mut self, t: Tensor<F>) -> NodeId {
        self.push(t, vec![], None)
    }

    /// Named parameter leaf; repeated calls with the same name share one node.
    pub fn param(&mut self, name: &str, store: &ParamStore<F>) -> NodeId {
        if let Some(&id) = self.params.get(name) {
            return id;
        }
        let id = self.push(store.value(name).clone(), vec![], None);
        self.params.insert(name.to_string(), id);
        self.param_names[id] = Some(name.to_string());
        id
    }

    // ---- elementwise ----

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.nodes[a].value.add(&self.nodes[b].value);
        self.push(
            v,
            vec![a, b],
            Some(Box::new(|g, _, _| vec![g.clone(), g.clone()])),
        )
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.nodes[a].value.sub(&self.nodes[b].value);
        self.push(
            v,
            vec![a, b],
            Some(Box::new(|g, _, _| vec![g.clone(), g.scale(F::from_f64(-1.0))])),
        )
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.nodes[a].value.mul(&self.nodes[b].value);
        self.push(
            v,
            vec![a, b],
            Some(Box::new(|g, p, _| vec![g.mul(p[1]), g.mul(p[0])])),
        )
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.nodes[a].value.zip_map(&self.nodes[b].value, |x, y| x / y);
        self.push(
            v,
            vec![a, b],
            Some(Box::new(|g, p, out| {
                let da = g.zip_map(p[1], |gi, bi| gi / bi);
                // d/db (a/b) = -a/b^2 = -out/b
                let db = g
                    .zip_map(out, |gi, oi| gi * oi)
                    .zip_map(p[1], |x, bi| -(x / bi));
                vec![da, db]
            })),
        )
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        self.scale(a, F::from_f64(-1.0))
    }

    pub fn scale(&mut self, a: NodeId, c: F) -> NodeId {
        let v = self.nodes[a].value.scale(c);
        self.push(v, vec![a], Some(Box::new(move |g, _, _| vec![g.scale(c)])))
    }

    pub fn add_scalar(&mut self, a: NodeId, c: F) -> NodeId {
        let v = self.nodes[a].value.map(|x| x + c);
        self.push(v, vec![a], Some(Box::new(|g, _, _| vec![g.clone()])))
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a].value.map(|x| x * x);
        self.push(
            v,
            vec![a],
            Some(Box::new(|g, p, _| {
                vec![g.zip_map(p[0], |gi, x| gi * (x + x))]
            })),
        )
    }

    pub fn ln(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a].value.map(|x| x.ln());
        self.push(
            v,
            vec![a],
            Some(Box::new(|g, p, _| vec![g.zip_map(p[0], |gi, x| gi / x)])),
        )
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a].value.map(|x| x.exp());
        self.push(
            v,
            vec![a],
            Some(Box::new(|g, _, out| vec![g.mul(out)])),
        )
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a].value.map(|x| x.tanh());
        self.push(
            v,
            vec![a],
            Some(Box::new(|g, _, out| {
                vec![g.zip_map(out, |gi, t| gi * (F::one() - t * t))]
            })),
        )
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a].value.map(|x| F::one() / (F::one() + (-x).exp()));
        self.push(
            v,
            vec![a],
            Some(Box::new(|g, _, out| {
                vec![g.zip_map(out, |gi, s| gi * s * (F::one() - s))]
            })),
        )
    }

    /// ELU with alpha = 1.
    pub fn elu(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a].value.map(|x| {
            if x > F::zero() {
                x
            } else {
                x.exp() - F::one()
            }
        });
        self.push(
            v,
            vec![a],
            Some(Box::new(|g, p, _| {
                vec![g.zip_map(p[0], |gi, x| {
                    if x > F::zero() {
                        gi
                    } else {
                        gi * x.exp()
                    }
                })]
            })),
        )
    }

    /// Numerically stable softplus ln(1 + e^x).
    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a].value.map(softplus_val);
        self.push(
            v,
            vec![a],
            Some(Box::new(|g, p, _| {
                vec![g.zip_map(p[0], |gi, x| gi * (F::one() / (F::one() + (-x).exp())))]
            })),
        )
    }

    /// Elementwise min; ties route the gradient to `b`.
    pub fn minimum(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.nodes[a].value.zip_map(&self.nodes[b].value, |x, y| x.min(y));
        self.push(
            v,
            vec![a, b],
            Some(Box::new(|g, p, _| {
                let mut da = g.clone();
                let mut db = g.clone();
                for i in 0..g.numel() {
                    let take_a = p[0].data()[i] < p[1].data()[i];
                    if take_a {
                        db.data_mut()[i] = F::zero();
                    } else {
                        da.data_mut()[i] = F::zero();
                    }
                }
                vec![da, db]
            })),
        )
    }

    /// Value copy with no gradient path.
    pub fn stop_gradient(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a].value.clone();
        self.push(v, vec![], None)
    }

    // ---- linear algebra ----

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.nodes[a].value.matmul(&self.nodes[b].value);
        self.push(
            v,
            vec![a, b],
            Some(Box::new(|g, p, _| {
                vec![g.matmul_bt(p[1]), p[0].matmul_at(g)]
            })),
        )
    }

    /// `[m,n] + [n]` row-broadcast bias add.
    pub fn add_row(&mut self, a: NodeId, bias: NodeId) -> NodeId {
        let av = &self.nodes[a].value;
        let bv = &self.nodes[bias].value;
        let (m, n) = (av.rows(), av.cols());
        assert_eq!(bv.numel(), n, "bias length {} vs {} cols", bv.numel(), n);
        let mut out = av.clone();
        for i in 0..m {
            for j in 0..n {
                out.data_mut()[i * n + j] += bv.data()[j];
            }
        }
        self.push(
            out,
            vec![a, bias],
            Some(Box::new(move |g, _, _| {
                let mut db = Tensor::zeros(&[n]);
                for i in 0..m {
                    for j in 0..n {
                        db.data_mut()[j] += g.data()[i * n + j];
                    }
                }
                vec![g.clone(), db]
            })),
        )
    }

    // ---- reductions / shape ----

    /// Sum of all elements to a scalar.
    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s = self.nodes[a].value.sum();
        self.push(
            Tensor::scalar(s),
            vec![a],
            Some(Box::new(|g, p, _| {
                vec![Tensor::full(p[0].shape(), g.item())]
            })),
        )
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let n = self.nodes[a].value.numel();
        let s = self.sum(a);
        self.scale(s, F::from_f64(1.0 / n as f64))
    }

    /// Concatenate rank-2 tensors along the column axis.
    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        let m = self.nodes[parts[0]].value.rows();
        let widths: Vec<usize> = parts.iter().map(|&p| self.nodes[p].value.cols()).collect();
        let total: usize = widths.iter().sum();
        let mut out = Tensor::zeros(&[m, total]);
        let mut off = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let v = &self.nodes[p].value;
            assert_eq!(v.rows(), m);
            for i in 0..m {
                out.data_mut()[i * total + off..i * total + off + w].copy_from_slice(v.row(i));
            }
            off += w;
        }
        let widths_c = widths.clone();
        self.push(
            out,
            parts.to_vec(),
            Some(Box::new(move |g, _, _| {
                let mut grads = Vec::with_capacity(widths_c.len());
                let mut off = 0;
                for &w in &widths_c {
                    let mut part = Tensor::zeros(&[m, w]);
                    for i in 0..m {
                        part.data_mut()[i * w..(i + 1) * w]
                            .copy_from_slice(&g.row(i)[off..off + w]);
                    }
                    grads.push(part);
                    off += w;
                }
                grads
            })),
        )
    }

    /// Columns `[start, start+len)` of a rank-2 tensor.
    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> NodeId {
        let v = &self.nodes[a].value;
        let (m, n) = (v.rows(), v.cols());
        assert!(start + len <= n);
        let mut out = Tensor::zeros(&[m, len]);
        for i in 0..m {
            out.data_mut()[i * len..(i + 1) * len].copy_from_slice(&v.row(i)[start..start + len]);
        }
        self.push(
            out,
            vec![a],
            Some(Box::new(move |g, _, _| {
                let mut da = Tensor::zeros(&[m, n]);
                for i in 0..m {
                    da.data_mut()[i * n + start..i * n + start + len]
                        .copy_from_slice(&g.row(i)[..len]);
                }
                vec![da]
            })),
        )
    }

    /// Gather rows of a `[K, d]` table into `[B, d]`; the backward pass
    /// scatter-adds, so unselected rows receive exactly zero gradient.
    pub fn select_rows(&mut self, table: NodeId, idx: &[usize]) -> NodeId {
        let t = &self.nodes[table].value;
        let (k, d) = (t.rows(), t.cols());
        let b = idx.len();
        let mut out = Tensor::zeros(&[b, d]);
        for (i, &r) in idx.iter().enumerate() {
            assert!(r < k, "row index {} out of {}", r, k);
            out.data_mut()[i * d..(i + 1) * d].copy_from_slice(t.row(r));
        }
        let idx_c = idx.to_vec();
        self.push(
            out,
            vec![table],
            Some(Box::new(move |g, _, _| {
                let mut dt = Tensor::zeros(&[k, d]);
                for (i, &r) in idx_c.iter().enumerate() {
                    for j in 0..d {
                        dt.data_mut()[r * d + j] += g.data()[i * d + j];
                    }
                }
                vec![dt]
            })),
        )
    }

    // ---- backward ----

    /// Reverse sweep from a scalar loss; returns one gradient slot per node.
    pub fn backward(&self, loss: NodeId) -> Vec<Option<Tensor<F>>> {
        assert_eq!(self.nodes[loss].value.numel(), 1, "backward from non-scalar");
        let mut grads: Vec<Option<Tensor<F>>> = vec![None; self.nodes.len()];
        grads[loss] = Some(Tensor::scalar(F::one()));
        for id in (0..=loss).rev() {
            let g = match &grads[id] {
                Some(g) => g.clone(),
                None => continue,
            };
            let node = &self.nodes[id];
            let Some(back) = &node.back else { continue };
            let parent_vals: Vec<&Tensor<F>> =
                node.parents.iter().map(|&p| &self.nodes[p].value).collect();
            let pgrads = back(&g, &parent_vals, &node.value);
            assert_eq!(pgrads.len(), node.parents.len());
            for (&p, pg) in node.parents.iter().zip(pgrads) {
                debug_assert_eq!(pg.shape(), self.nodes[p].value.shape());
                match &mut grads[p] {
                    Some(acc) => acc.add_inplace(&pg),
                    slot @ None => *slot = Some(pg),
                }
            }
        }
        grads
    }

    /// Accumulate parameter gradients into the store. `filter` restricts the
    /// update to names it accepts (used to step one component of a joint loss).
    pub fn accumulate_param_grads(
        &self,
        grads: &[Option<Tensor<F>>],
        store: &mut ParamStore<F>,
        filter: impl Fn(&str) -> bool,
    ) {
        for (name, &id) in &self.params {
            if !filter(name) {
                continue;
            }
            if let Some(g) = &grads[id] {
                store.accumulate_grad(name, g);
            }
        }
    }

    /// Backward + accumulate in one call.
    pub fn backprop(&self, loss: NodeId, store: &mut ParamStore<F>) {
        let grads = self.backward(loss);
        self.accumulate_param_grads(&grads, store, |_| true);
    }

    /// Gradient of `loss` w.r.t. a named parameter, if any path exists.
    pub fn param_grad<'a>(
        &self,
        grads: &'a [Option<Tensor<F>>],
        name: &str,
    ) -> Option<&'a Tensor<F>> {
        self.params.get(name).and_then(|&id| grads[id].as_ref())
    }
}

fn softplus_val<F: Scalar>(x: F) -> F {
    // ln(1+e^x) = max(x,0) + ln(1+e^-|x|)
    let m = x.max(F::zero());
    m + (F::one() + (-x.abs()).exp()).ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(name: &str, t: Tensor<f64>) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.insert(name, t);
        s
    }

    #[test]
    fn quadratic_gradient() {
        let store = store_with("w", Tensor::from_vec(vec![3], vec![1.0, -2.0, 0.5]));
        let mut g = Graph::new();
        let w = g.param("w", &store);
        let sq = g.square(w);
        let loss = g.sum(sq);
        let grads = g.backward(loss);
        let gw = g.param_grad(&grads, "w").unwrap();
        assert_eq!(gw.data(), &[2.0, -4.0, 1.0]);
    }

    #[test]
    fn matmul_chain_gradient() {
        // loss = sum((x W)^2), checked against hand-derived 2 x^T (xW)
        let store = store_with("w", Tensor::from_vec(vec![2, 2], vec![1.0, 2.0, 3.0, -1.0]));
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_vec(vec![1, 2], vec![0.5, -1.5]));
        let w = g.param("w", &store);
        let y = g.matmul(x, w);
        let sq = g.square(y);
        let loss = g.sum(sq);
        let grads = g.backward(loss);
        let gw = g.param_grad(&grads, "w").unwrap();
        let y0 = 0.5 * 1.0 + (-1.5) * 3.0; // -4.0
        let y1 = 0.5 * 2.0 + (-1.5) * (-1.0); // 2.5
        let expect = [2.0 * 0.5 * y0, 2.0 * 0.5 * y1, 2.0 * -1.5 * y0, 2.0 * -1.5 * y1];
        for (a, e) in gw.data().iter().zip(expect) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn stop_gradient_blocks_flow() {
        let store = store_with("w", Tensor::from_vec(vec![2], vec![1.0, 2.0]));
        let mut g = Graph::new();
        let w = g.param("w", &store);
        let sgw = g.stop_gradient(w);
        let sq = g.square(sgw);
        let loss = g.sum(sq);
        let grads = g.backward(loss);
        assert!(g.param_grad(&grads, "w").is_none());
    }

    #[test]
    fn minimum_tie_routes_to_second_arg() {
        let store = store_with("a", Tensor::from_vec(vec![3], vec![1.0, 5.0, 2.0]));
        let mut sb = ParamStore::new();
        sb.insert("b", Tensor::from_vec(vec![3], vec![2.0, 5.0, 1.0]));
        let mut g = Graph::new();
        let a = g.param("a", &store);
        let b = g.param("b", &sb);
        let m = g.minimum(a, b);
        let loss = g.sum(m);
        assert_eq!(g.value(m).data(), &[1.0, 5.0, 1.0]);
        let grads = g.backward(loss);
        let ga = g.param_grad(&grads, "a").unwrap();
        let gb = g.param_grad(&grads, "b").unwrap();
        assert_eq!(ga.data(), &[1.0, 0.0, 0.0]); // tie at index 1 goes to b
        assert_eq!(gb.data(), &[0.0, 1.0, 1.0]);
    }

    #[test]
    fn select_rows_isolates_unselected() {
        let store = store_with(
            "table",
            Tensor::from_vec(vec![3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]),
        );
        let mut g = Graph::new();
        let t = g.param("table", &store);
        let rows = g.select_rows(t, &[1, 1]);
        let sq = g.square(rows);
        let loss = g.sum(sq);
        let grads = g.backward(loss);
        let gt = g.param_grad(&grads, "table").unwrap();
        assert_eq!(gt.data(), &[0.0, 0.0, 2.0 * 3.0 * 2.0, 2.0 * 4.0 * 2.0, 0.0, 0.0]);
    }

    #[test]
    fn shared_param_node_accumulates() {
        // w used twice: loss = sum(w*w) + sum(w) -> grad 2w + 1
        let store = store_with("w", Tensor::from_vec(vec![2], vec![3.0, -1.0]));
        let mut g = Graph::new();
        let w1 = g.param("w", &store);
        let w2 = g.param("w", &store);
        assert_eq!(w1, w2);
        let p = g.mul(w1, w2);
        let s1 = g.sum(p);
        let s2 = g.sum(w1);
        let loss = g.add(s1, s2);
        let grads = g.backward(loss);
        let gw = g.param_grad(&grads, "w").unwrap();
        assert_eq!(gw.data(), &[7.0, -1.0]);
    }
}
