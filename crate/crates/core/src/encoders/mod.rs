//! User/item encoders: direct embedding lookup (MF) and LightGCN propagation
//! over the normalised bipartite graph.

mod adjacency;
mod state;

use std::borrow::Cow;
use std::sync::Arc;

use crate::error::Result;
use crate::tensor::{Grad, Tensor};

pub use adjacency::NormalizedAdjacency;
pub use state::{pop_bucket, ModelState, CHECKPOINT_VERSION};

/// Final user and item representations fed to the losses.
#[derive(Clone, Debug)]
pub struct Embeddings<'a> {
    pub users: Cow<'a, Tensor>,
    pub items: Cow<'a, Tensor>,
}

impl<'a> Embeddings<'a> {
    pub fn borrowed(users: &'a Tensor, items: &'a Tensor) -> Self {
        Embeddings { users: Cow::Borrowed(users), items: Cow::Borrowed(items) }
    }

    pub fn dim(&self) -> usize {
        self.users.cols()
    }
}

#[derive(Clone, Debug)]
pub enum Encoder {
    Mf,
    LightGcn { layers: usize, adj: Arc<NormalizedAdjacency> },
}

impl Encoder {
    pub fn lightgcn(adj: NormalizedAdjacency, layers: usize) -> Self {
        Encoder::LightGcn { layers, adj: Arc::new(adj) }
    }

    pub fn forward<'s>(&self, state: &'s ModelState) -> Embeddings<'s> {
        match self {
            Encoder::Mf => Embeddings::borrowed(&state.user_emb, &state.item_emb),
            Encoder::LightGcn { layers, adj } => {
                let (users, items) = lightgcn_forward(state, adj, *layers);
                Embeddings { users: Cow::Owned(users), items: Cow::Owned(items) }
            }
        }
    }

    /// Maps gradients w.r.t. the final embeddings onto the embedding tables.
    pub fn backward(&self, user_grad: Grad, item_grad: Grad) -> (Grad, Grad) {
        match self {
            Encoder::Mf => (user_grad, item_grad),
            Encoder::LightGcn { layers, adj } => {
                let stacked = stack(user_grad.values(), item_grad.values());
                let back = adj.layer_mean(&stacked, *layers);
                let (u, i) = unstack(&back, adj.num_users());
                (Grad::dense(u), Grad::dense(i))
            }
        }
    }
}

/// Raw embedding rows for the given ids, in query order.
pub fn mf_forward(state: &ModelState, users: &[usize], items: &[usize]) -> Result<(Tensor, Tensor)> {
    let d = state.dim();
    let mut uv = Vec::with_capacity(users.len() * d);
    for &u in users {
        state.check_user(u)?;
        uv.extend_from_slice(state.user_emb.row(u));
    }
    let mut iv = Vec::with_capacity(items.len() * d);
    for &i in items {
        state.check_item(i)?;
        iv.extend_from_slice(state.item_emb.row(i));
    }
    Ok((Tensor::from_vec(users.len(), d, uv), Tensor::from_vec(items.len(), d, iv)))
}

/// `E⁰` = stacked tables, `Eˡ = Ã·Eˡ⁻¹`, output = mean of `E⁰..E^L`.
pub fn lightgcn_forward(state: &ModelState, adj: &NormalizedAdjacency, layers: usize) -> (Tensor, Tensor) {
    assert_eq!(adj.num_users(), state.num_users());
    assert_eq!(adj.num_items(), state.num_items());
    let e0 = stack(&state.user_emb, &state.item_emb);
    let out = adj.layer_mean(&e0, layers);
    unstack(&out, state.num_users())
}

fn stack(users: &Tensor, items: &Tensor) -> Tensor {
    let mut data = Vec::with_capacity(users.data().len() + items.data().len());
    data.extend_from_slice(users.data());
    data.extend_from_slice(items.data());
    Tensor::from_vec(users.rows() + items.rows(), users.cols(), data)
}

fn unstack(t: &Tensor, num_users: usize) -> (Tensor, Tensor) {
    let d = t.cols();
    let (a, b) = t.data().split_at(num_users * d);
    (
        Tensor::from_vec(num_users, d, a.to_vec()),
        Tensor::from_vec(t.rows() - num_users, d, b.to_vec()),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_state(nu: usize, ni: usize, d: usize) -> ModelState {
        let mut s = ModelState::new(nu, ni, d, vec![1; nu], vec![1; ni]);
        for (k, x) in s.user_emb.data_mut().iter_mut().enumerate() {
            *x = (k as f64 * 0.37).sin();
        }
        for (k, x) in s.item_emb.data_mut().iter_mut().enumerate() {
            *x = (k as f64 * 0.91 + 0.2).cos();
        }
        s
    }

    fn dense_matmul(a: &[Vec<f64>], x: &[Vec<f64>]) -> Vec<Vec<f64>> {
        a.iter()
            .map(|row| {
                (0..x[0].len())
                    .map(|c| row.iter().zip(x).map(|(w, xr)| w * xr[c]).sum())
                    .collect()
            })
            .collect()
    }

    #[test]
    fn mf_lookup_and_order() {
        let s = toy_state(3, 2, 4);
        let (u, i) = mf_forward(&s, &[2, 0], &[1]).unwrap();
        assert_eq!(u.row(0), s.user_emb.row(2));
        assert_eq!(u.row(1), s.user_emb.row(0));
        assert_eq!(i.row(0), s.item_emb.row(1));
        assert!(mf_forward(&s, &[3], &[]).is_err());
        assert!(mf_forward(&s, &[], &[2]).is_err());
    }

    #[test]
    fn zero_layers_is_identity() {
        let s = toy_state(3, 3, 4);
        let adj = NormalizedAdjacency::from_pairs(3, 3, &[(0, 0), (1, 1), (2, 2), (0, 1)]);
        let (u, i) = lightgcn_forward(&s, &adj, 0);
        assert_eq!(u, s.user_emb);
        assert_eq!(i, s.item_emb);
    }

    #[test]
    fn single_edge_one_layer_swaps() {
        let s = toy_state(1, 1, 3);
        let adj = NormalizedAdjacency::from_pairs(1, 1, &[(0, 0)]);
        assert_eq!(adj.get(0, 1), 1.0);
        let (u, i) = lightgcn_forward(&s, &adj, 1);
        for c in 0..3 {
            let expect = (s.user_emb.row(0)[c] + s.item_emb.row(0)[c]) / 2.0;
            assert!((u.row(0)[c] - expect).abs() < 1e-15);
            assert!((i.row(0)[c] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn two_layers_match_dense_oracle() {
        let s = toy_state(3, 3, 2);
        let pairs = [(0, 0), (0, 1), (1, 1), (2, 2), (2, 0)];
        let adj = NormalizedAdjacency::from_pairs(3, 3, &pairs);
        let a = adj.to_dense();
        let mut e0: Vec<Vec<f64>> = (0..3).map(|r| s.user_emb.row(r).to_vec()).collect();
        e0.extend((0..3).map(|r| s.item_emb.row(r).to_vec()));
        let e1 = dense_matmul(&a, &e0);
        let e2 = dense_matmul(&a, &e1);
        let (u, i) = lightgcn_forward(&s, &adj, 2);
        for r in 0..6 {
            for c in 0..2 {
                let expect = (e0[r][c] + e1[r][c] + e2[r][c]) / 3.0;
                let got = if r < 3 { u.row(r)[c] } else { i.row(r - 3)[c] };
                assert!((got - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn adjacency_symmetry_and_weights() {
        let pairs = [(0, 0), (0, 1), (1, 1), (2, 1), (0, 1)];
        let adj = NormalizedAdjacency::from_pairs(3, 2, &pairs);
        let a = adj.to_dense();
        for r in 0..5 {
            for c in 0..5 {
                assert_eq!(a[r][c], a[c][r]);
                if r < 3 && c < 3 || r >= 3 && c >= 3 {
                    assert_eq!(a[r][c], 0.0);
                }
            }
        }
        // deg(user 0) = 2, deg(item 1) = 3
        assert_eq!(adj.get(0, 4), 1.0 / 6f64.sqrt());
    }

    #[test]
    fn isolated_node_passes_through_layer_zero() {
        let s = toy_state(2, 2, 2);
        let adj = NormalizedAdjacency::from_pairs(2, 2, &[(0, 0)]);
        let (u, _) = lightgcn_forward(&s, &adj, 2);
        for c in 0..2 {
            assert!((u.row(1)[c] - s.user_emb.row(1)[c] / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn linear_in_tables() {
        let s = toy_state(3, 4, 3);
        let adj = NormalizedAdjacency::from_pairs(3, 4, &[(0, 0), (1, 2), (2, 3), (0, 3), (1, 1)]);
        let mut scaled = s.clone();
        scaled.user_emb.scale(-2.5);
        scaled.item_emb.scale(-2.5);
        let (u, i) = lightgcn_forward(&s, &adj, 2);
        let (u2, i2) = lightgcn_forward(&scaled, &adj, 2);
        for (a, b) in u.data().iter().chain(i.data()).zip(u2.data().iter().chain(i2.data())) {
            assert!((a * -2.5 - b).abs() < 1e-12);
        }
    }
}
