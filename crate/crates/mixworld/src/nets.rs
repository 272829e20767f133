//! Small dense-network building blocks shared by the model components.

use crate::substrate::{Graph, NodeId, ParamStore, RngStream, Scalar, Tensor};

/// Register a dense layer `name/w` + `name/b` with fan-in scaled init.
pub fn init_dense<F: Scalar>(
    store: &mut ParamStore<F>,
    name: &str,
    fan_in: usize,
    fan_out: usize,
    rng: &RngStream,
) {
    let mut r = rng.derive(name);
    let scale = 1.0 / (fan_in as f64).sqrt();
    let w: Tensor<F> = r.normal_tensor::<F>(&[fan_in, fan_out]).scale(F::from_f64(scale));
    store.insert(&format!("{}/w", name), w);
    store.insert(&format!("{}/b", name), Tensor::zeros(&[fan_out]));
}

/// `x W + b` for a layer registered with [`init_dense`].
pub fn dense<F: Scalar>(
    g: &mut Graph<F>,
    store: &ParamStore<F>,
    name: &str,
    x: NodeId,
) -> NodeId {
    let w = g.param(&format!("{}/w", name), store);
    let b = g.param(&format!("{}/b", name), store);
    let y = g.matmul(x, w);
    g.add_row(y, b)
}

pub fn dense_elu<F: Scalar>(
    g: &mut Graph<F>,
    store: &ParamStore<F>,
    name: &str,
    x: NodeId,
) -> NodeId {
    let y = dense(g, store, name, x);
    g.elu(y)
}

/// GRU cell parameters: reset, update, and candidate gates.
pub fn init_gru<F: Scalar>(
    store: &mut ParamStore<F>,
    name: &str,
    input_dim: usize,
    h_dim: usize,
    rng: &RngStream,
) {
    for gate in ["reset", "update", "cand"] {
        init_dense(store, &format!("{}/{}_x", name, gate), input_dim, h_dim, rng);
        init_dense(store, &format!("{}/{}_h", name, gate), h_dim, h_dim, rng);
    }
}

/// One GRU step: `h' = u * h + (1 - u) * tanh(Wc x + Uc (r * h))`.
pub fn gru_step<F: Scalar>(
    g: &mut Graph<F>,
    store: &ParamStore<F>,
    name: &str,
    x: NodeId,
    h: NodeId,
) -> NodeId {
    let gate = |g: &mut Graph<F>, which: &str, input: NodeId, hidden: NodeId| {
        let a = dense(g, store, &format!("{}/{}_x", name, which), input);
        let b = dense(g, store, &format!("{}/{}_h", name, which), hidden);
        g.add(a, b)
    };
    let r_pre = gate(g, "reset", x, h);
    let r = g.sigmoid(r_pre);
    let u_pre = gate(g, "update", x, h);
    let u = g.sigmoid(u_pre);
    let rh = g.mul(r, h);
    let c_pre = gate(g, "cand", x, rh);
    let c = g.tanh(c_pre);
    let uh = g.mul(u, h);
    let one_minus_u = {
        let neg = g.neg(u);
        g.add_scalar(neg, F::one())
    };
    let uc = g.mul(one_minus_u, c);
    g.add(uh, uc)
}

/// Split a `[B, 2d]` head output into a Gaussian with softplus-floored std.
pub fn split_gaussian<F: Scalar>(
    g: &mut Graph<F>,
    out: NodeId,
    dim: usize,
    std_floor: f64,
) -> crate::substrate::GaussNode {
    let mean = g.slice_cols(out, 0, dim);
    let raw = g.slice_cols(out, dim, dim);
    let sp = g.softplus(raw);
    let std = g.add_scalar(sp, F::from_f64(std_floor));
    crate::substrate::GaussNode { mean, std }
}
