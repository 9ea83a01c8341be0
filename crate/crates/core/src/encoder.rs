//! Linear graph encoder with mean-of-layers combination and its adjoint.
//!
//! With `S` the normalized adjacency (plus a unit self-loop on isolated
//! nodes, so they keep their own embedding) the encoder computes
//!
//! ```text
//! E = (X + S X + S^2 X + ... + S^L X) / (L + 1)
//! ```
//!
//! `S` is symmetric, so the adjoint used for backpropagation is the same
//! operator applied to the output gradient. Rows are computed independently
//! in a fixed neighbour order, which keeps results bitwise identical for any
//! thread count.

use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::{NodeSpace, NodeType, PropagationMatrix};
use crate::linalg::{dot, norm, Matrix};

pub const DEFAULT_EMBEDDING_DIM: usize = 64;
pub const DEFAULT_LAYERS: usize = 2;
pub const DEFAULT_INIT_STD: f64 = 0.1;

/// Trainable node embeddings, one row per global node index.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    space: NodeSpace,
    values: Matrix,
}

impl EmbeddingTable {
    pub fn new(space: NodeSpace, values: Matrix) -> Result<Self> {
        if values.rows() != space.total() {
            return Err(Error::DimensionMismatch {
                what: "embedding table rows",
                expected: space.total(),
                found: values.rows(),
            });
        }
        if values.cols() == 0 {
            return Err(Error::DimensionMismatch {
                what: "embedding dimension",
                expected: 1,
                found: 0,
            });
        }
        Ok(EmbeddingTable { space, values })
    }

    /// Gaussian initialization with mean 0 and the given standard deviation.
    pub fn gaussian<R: Rng + ?Sized>(
        space: NodeSpace,
        dim: usize,
        std: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let normal = Normal::new(0.0, std).map_err(|e| Error::config("init_std", e.to_string()))?;
        let data = (0..space.total() * dim)
            .map(|_| normal.sample(rng))
            .collect();
        Self::new(space, Matrix::from_vec(space.total(), dim, data)?)
    }

    pub fn space(&self) -> NodeSpace {
        self.space
    }

    pub fn dim(&self) -> usize {
        self.values.cols()
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut Matrix {
        &mut self.values
    }

    pub fn row(&self, ty: NodeType, local: usize) -> &[f64] {
        self.values.row(self.space.global(ty, local))
    }

    /// Order-sensitive fingerprint of the exact bit patterns.
    pub fn checksum(&self) -> u64 {
        self.values
            .as_slice()
            .iter()
            .fold(0xcbf2_9ce4_8422_2325u64, |h, x| {
                (h ^ x.to_bits()).wrapping_mul(0x0000_0100_0000_01b3)
            })
    }
}

/// Encoder output split into user, item and bundle blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct PropagatedEmbeddings {
    space: NodeSpace,
    layers: usize,
    values: Matrix,
}

impl PropagatedEmbeddings {
    pub fn from_matrix(space: NodeSpace, layers: usize, values: Matrix) -> Result<Self> {
        if values.rows() != space.total() {
            return Err(Error::DimensionMismatch {
                what: "propagated embedding rows",
                expected: space.total(),
                found: values.rows(),
            });
        }
        Ok(PropagatedEmbeddings {
            space,
            layers,
            values,
        })
    }

    pub fn space(&self) -> NodeSpace {
        self.space
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn dim(&self) -> usize {
        self.values.cols()
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn user(&self, u: usize) -> &[f64] {
        self.values.row(self.space.global(NodeType::User, u))
    }

    pub fn item(&self, i: usize) -> &[f64] {
        self.values.row(self.space.global(NodeType::Item, i))
    }

    pub fn bundle(&self, b: usize) -> &[f64] {
        self.values.row(self.space.global(NodeType::Bundle, b))
    }

    pub fn node(&self, ty: NodeType, local: usize) -> &[f64] {
        self.values.row(self.space.global(ty, local))
    }

    /// Contiguous block of one node type, row-major.
    pub fn block(&self, ty: NodeType) -> &[f64] {
        let start = self.space.offset(ty);
        self.values.row_range(start, start + self.space.count(ty))
    }
}

fn check_operator(op: &PropagationMatrix, table: &Matrix, what: &'static str) -> Result<()> {
    if table.rows() != op.dim() {
        return Err(Error::DimensionMismatch {
            what,
            expected: op.dim(),
            found: table.rows(),
        });
    }
    Ok(())
}

/// One application of the propagation operator. Isolated rows copy their input.
fn step(op: &PropagationMatrix, input: &Matrix, output: &mut Matrix) {
    let dim = input.cols();
    output
        .as_mut_slice()
        .par_chunks_mut(dim)
        .enumerate()
        .for_each(|(i, out)| {
            let (cols, vals) = op.row(i);
            if cols.is_empty() {
                out.copy_from_slice(input.row(i));
                return;
            }
            out.fill(0.0);
            for (&j, &w) in cols.iter().zip(vals) {
                for (o, x) in out.iter_mut().zip(input.row(j)) {
                    *o += w * x;
                }
            }
        });
}

fn mean_of_powers(op: &PropagationMatrix, input: &Matrix, layers: usize) -> Matrix {
    let mut acc = input.clone();
    if layers == 0 {
        return acc;
    }
    let mut current = input.clone();
    let mut next = Matrix::zeros(input.rows(), input.cols());
    for _ in 0..layers {
        step(op, &current, &mut next);
        acc.add_assign(&next).expect("same shape");
        std::mem::swap(&mut current, &mut next);
    }
    acc.scale(1.0 / (layers as f64 + 1.0));
    acc
}

pub fn propagate(
    params: &EmbeddingTable,
    op: &PropagationMatrix,
    layers: usize,
) -> Result<PropagatedEmbeddings> {
    check_operator(op, params.values(), "propagate input")?;
    if params.space() != op.space() {
        return Err(Error::DimensionMismatch {
            what: "node space of propagation operator",
            expected: params.space().total(),
            found: op.space().total(),
        });
    }
    let values = mean_of_powers(op, params.values(), layers);
    PropagatedEmbeddings::from_matrix(params.space(), layers, values)
}

/// Maps dLoss/d(encoder output) to dLoss/d(parameters).
pub fn backpropagate(grad_out: &Matrix, op: &PropagationMatrix, layers: usize) -> Result<Matrix> {
    check_operator(op, grad_out, "backpropagate gradient")?;
    Ok(mean_of_powers(op, grad_out, layers))
}

/// Inner-product predictor.
#[inline]
pub fn predict_score(user: &[f64], bundle: &[f64]) -> f64 {
    dot(user, bundle)
}

/// Scales every nonzero row to unit L2 norm; zero rows stay zero.
pub fn row_normalize(block: &Matrix) -> Matrix {
    let mut out = block.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let n = norm(row);
        if n > 0.0 {
            row.iter_mut().for_each(|x| *x /= n);
        }
    }
    out
}

/// Writes one `<node_type>\t<local_id>\t<d_0>...\t<d_{D-1}>` line per node.
pub fn write_embedding_tsv<W: Write>(
    mut w: W,
    space: NodeSpace,
    values: &Matrix,
) -> std::io::Result<()> {
    for global in 0..space.total() {
        let (ty, local) = space.locate(global);
        write!(w, "{}\t{}", ty.name(), local)?;
        for x in values.row(global) {
            write!(w, "\t{x}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_graph, normalized_adjacency};
    use crate::seed::rng_for;

    fn two_node() -> (EmbeddingTable, PropagationMatrix) {
        // one user and one bundle joined by a single edge; the item is isolated
        let space = NodeSpace::new(1, 1, 1).unwrap();
        let g = build_graph(space, &[(0, 0)], &[], &[]).unwrap();
        let values = Matrix::from_rows(&[vec![1.0, 0.0], vec![5.0, 5.0], vec![0.0, 1.0]]).unwrap();
        (
            EmbeddingTable::new(space, values).unwrap(),
            normalized_adjacency(&g),
        )
    }

    #[test]
    fn zero_layers_is_identity() {
        let (x, op) = two_node();
        let out = propagate(&x, &op, 0).unwrap();
        assert_eq!(out.values(), x.values());
    }

    #[test]
    fn one_step_over_single_edge() {
        let (x, op) = two_node();
        let out = propagate(&x, &op, 1).unwrap();
        assert_eq!(out.user(0), &[0.5, 0.5]);
        assert_eq!(out.bundle(0), &[0.5, 0.5]);
        // isolated item keeps its embedding
        assert_eq!(out.item(0), &[5.0, 5.0]);
    }

    #[test]
    fn edgeless_graph_keeps_input() {
        let space = NodeSpace::new(2, 2, 2).unwrap();
        let g = build_graph(space, &[], &[], &[]).unwrap();
        let op = normalized_adjacency(&g);
        let x = EmbeddingTable::gaussian(space, 3, 0.1, &mut rng_for(1, "t")).unwrap();
        let out = propagate(&x, &op, 3).unwrap();
        for (a, b) in out.values().as_slice().iter().zip(x.values().as_slice()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let (_, op) = two_node();
        let other = NodeSpace::new(2, 1, 1).unwrap();
        let x = EmbeddingTable::gaussian(other, 2, 0.1, &mut rng_for(1, "t")).unwrap();
        assert!(propagate(&x, &op, 1).is_err());
        assert!(backpropagate(&Matrix::zeros(4, 2), &op, 1).is_err());
    }

    #[test]
    fn backpropagate_identity_and_zero() {
        let (x, op) = two_node();
        assert_eq!(&backpropagate(x.values(), &op, 0).unwrap(), x.values());
        let zero = Matrix::zeros(3, 2);
        assert_eq!(backpropagate(&zero, &op, 2).unwrap(), zero);
    }

    #[test]
    fn predictor_is_inner_product() {
        assert_eq!(predict_score(&[1.0, 0.0], &[0.0, 1.0]), 0.0);
        assert_eq!(predict_score(&[1.0, 2.0], &[3.0, 4.0]), 11.0);
        let u = [0.6, 0.8];
        assert!((predict_score(&u, &u) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn row_normalization() {
        let m = Matrix::from_rows(&[vec![3.0, 4.0], vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap();
        let n = row_normalize(&m);
        assert!((n.row(0)[0] - 0.6).abs() < 1e-15 && (n.row(0)[1] - 0.8).abs() < 1e-15);
        assert_eq!(n.row(1), &[1.0, 0.0]);
        assert_eq!(n.row(2), &[0.0, 0.0]);
    }

    #[test]
    fn tsv_export_layout() {
        let (x, _) = two_node();
        let mut buf = Vec::new();
        write_embedding_tsv(&mut buf, x.space(), x.values()).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines, ["user\t0\t1\t0", "item\t0\t5\t5", "bundle\t0\t0\t1"]);
    }
}
