//! Per-call scratch space: unit-normalised rows of an embedding table with
//! gradient accumulators, and the sink collecting per-parameter gradients.

use std::collections::BTreeMap;

use crate::encoders::{Embeddings, ModelState};
use crate::tensor::{dot, Grad, ParamKind, Tensor};

const NORM_EPS: f64 = 1e-12;
const NO_SLOT: u32 = u32::MAX;

/// Rows of `table` referenced by a batch, normalised to unit length.
/// Gradients are accumulated w.r.t. the unit vectors and projected back
/// through the normalisation by [`NormSet::backprop`].
pub(crate) struct NormSet<'t> {
    table: &'t Tensor,
    dim: usize,
    slot_of: Vec<u32>,
    ids: Vec<usize>,
    unit: Vec<f64>,
    norm: Vec<f64>,
    grad: Vec<f64>,
}

impl<'t> NormSet<'t> {
    pub fn new(table: &'t Tensor) -> Self {
        NormSet {
            table,
            dim: table.cols(),
            slot_of: vec![NO_SLOT; table.rows()],
            ids: Vec::new(),
            unit: Vec::new(),
            norm: Vec::new(),
            grad: Vec::new(),
        }
    }

    pub fn slot(&mut self, id: usize) -> usize {
        let s = self.slot_of[id];
        if s != NO_SLOT {
            return s as usize;
        }
        let slot = self.ids.len();
        self.slot_of[id] = slot as u32;
        self.ids.push(id);
        let row = self.table.row(id);
        let n = dot(row, row).sqrt().max(NORM_EPS);
        self.norm.push(n);
        self.unit.extend(row.iter().map(|x| x / n));
        self.grad.extend(std::iter::repeat(0.0).take(self.dim));
        slot
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    #[inline]
    pub fn unit(&self, slot: usize) -> &[f64] {
        &self.unit[slot * self.dim..(slot + 1) * self.dim]
    }

    /// `grad[slot] += coef * v`
    #[inline]
    pub fn add(&mut self, slot: usize, coef: f64, v: &[f64]) {
        let g = &mut self.grad[slot * self.dim..(slot + 1) * self.dim];
        for (a, b) in g.iter_mut().zip(v) {
            *a += coef * b;
        }
    }

    /// `grad[dst] += coef * unit[src]` within the same set.
    #[inline]
    pub fn add_unit_of(&mut self, dst: usize, coef: f64, src: usize) {
        let d = self.dim;
        let (g, u) = (&mut self.grad[dst * d..(dst + 1) * d], &self.unit[src * d..(src + 1) * d]);
        for (a, b) in g.iter_mut().zip(u) {
            *a += coef * b;
        }
    }

    /// `∂L/∂v = (g − ṽ(ṽ·g)) / ‖v‖`, accumulated into `out`.
    pub fn backprop(&self, out: &mut Grad) {
        let d = self.dim;
        let mut tmp = vec![0.0; d];
        for (slot, &id) in self.ids.iter().enumerate() {
            let u = &self.unit[slot * d..(slot + 1) * d];
            let g = &self.grad[slot * d..(slot + 1) * d];
            let n = self.norm[slot];
            if n <= NORM_EPS {
                tmp.iter_mut().zip(g).for_each(|(t, gv)| *t = gv / NORM_EPS);
            } else {
                let proj = dot(u, g);
                tmp.iter_mut()
                    .zip(g.iter().zip(u))
                    .for_each(|(t, (gv, uv))| *t = (gv - uv * proj) / n);
            }
            out.axpy(id, 1.0, &tmp);
        }
    }
}

/// Lazily allocated gradient buffers keyed by parameter. `UserEmb`/`ItemEmb`
/// refer to the final (post-encoder) embeddings.
pub(crate) struct GradSink<'a, 'b> {
    state: &'a ModelState,
    emb: &'a Embeddings<'b>,
    pub grads: BTreeMap<ParamKind, Grad>,
}

impl<'a, 'b> GradSink<'a, 'b> {
    pub fn new(state: &'a ModelState, emb: &'a Embeddings<'b>) -> Self {
        GradSink { state, emb, grads: BTreeMap::new() }
    }

    pub fn grad(&mut self, kind: ParamKind) -> &mut Grad {
        let (rows, cols) = match kind {
            ParamKind::UserEmb => self.emb.users.shape(),
            ParamKind::ItemEmb => self.emb.items.shape(),
            k => self.state.param(k).shape(),
        };
        self.grads.entry(kind).or_insert_with(|| Grad::zeros(rows, cols))
    }

    pub fn finish(mut self, users: &NormSet, items: &NormSet) -> BTreeMap<ParamKind, Grad> {
        users.backprop(self.grad(ParamKind::UserEmb));
        items.backprop(self.grad(ParamKind::ItemEmb));
        self.grads
    }
}
