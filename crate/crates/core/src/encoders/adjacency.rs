use crate::tensor::Tensor;

/// Symmetrically normalised bipartite adjacency `D^{-1/2} A D^{-1/2}` over
/// `|U| + |I|` nodes (users first), stored as CSR. No self loops; degree-0
/// nodes have empty rows.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedAdjacency {
    num_users: usize,
    num_items: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl NormalizedAdjacency {
    /// Duplicate pairs are counted once.
    pub fn from_pairs(num_users: usize, num_items: usize, pairs: &[(usize, usize)]) -> Self {
        let n = num_users + num_items;
        let mut edges: Vec<(usize, usize)> = pairs.to_vec();
        edges.sort_unstable();
        edges.dedup();
        let mut deg = vec![0usize; n];
        for &(u, i) in &edges {
            deg[u] += 1;
            deg[num_users + i] += 1;
        }
        let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for &(u, i) in &edges {
            let a = u;
            let b = num_users + i;
            let w = 1.0 / ((deg[a] as f64) * (deg[b] as f64)).sqrt();
            adj[a].push((b, w));
            adj[b].push((a, w));
        }
        let mut indptr = Vec::with_capacity(n + 1);
        let mut indices = Vec::with_capacity(2 * edges.len());
        let mut values = Vec::with_capacity(2 * edges.len());
        indptr.push(0);
        for mut row in adj {
            row.sort_unstable_by_key(|e| e.0);
            for (c, w) in row {
                indices.push(c);
                values.push(w);
            }
            indptr.push(indices.len());
        }
        NormalizedAdjacency { num_users, num_items, indptr, indices, values }
    }

    pub fn num_nodes(&self) -> usize {
        self.num_users + self.num_items
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Entry lookup (zero when absent).
    pub fn get(&self, row: usize, col: usize) -> f64 {
        let span = self.indptr[row]..self.indptr[row + 1];
        match self.indices[span.clone()].binary_search(&col) {
            Ok(k) => self.values[span.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let n = self.num_nodes();
        let mut m = vec![vec![0.0; n]; n];
        for (r, row) in m.iter_mut().enumerate() {
            for k in self.indptr[r]..self.indptr[r + 1] {
                row[self.indices[k]] = self.values[k];
            }
        }
        m
    }

    /// `out = Ã · x` for an `n × d` matrix.
    pub fn matmul(&self, x: &Tensor, out: &mut Tensor) {
        assert_eq!(x.rows(), self.num_nodes());
        assert_eq!(out.shape(), x.shape());
        for r in 0..self.num_nodes() {
            let dst = out.row_mut(r);
            dst.iter_mut().for_each(|v| *v = 0.0);
            for k in self.indptr[r]..self.indptr[r + 1] {
                let w = self.values[k];
                for (d, s) in dst.iter_mut().zip(x.row(self.indices[k])) {
                    *d += w * s;
                }
            }
        }
    }

    /// `(1/(L+1)) Σ_{l=0..L} Ã^l x`. Because Ã is symmetric this is also the
    /// adjoint of itself, so the same routine serves forward and backward.
    pub fn layer_mean(&self, x: &Tensor, layers: usize) -> Tensor {
        let mut acc = x.clone();
        let mut cur = x.clone();
        let mut next = Tensor::zeros(x.rows(), x.cols());
        for _ in 0..layers {
            self.matmul(&cur, &mut next);
            std::mem::swap(&mut cur, &mut next);
            for (a, c) in acc.data_mut().iter_mut().zip(cur.data()) {
                *a += c;
            }
        }
        acc.scale(1.0 / (layers as f64 + 1.0));
        acc
    }
}
