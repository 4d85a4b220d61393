//! Composite-function derivative propagation.
//!
//! A [`DerivStack`] holds the unmixed derivatives `∂ᵏy/∂zᵢᵏ` of the scalar
//! output with respect to one module's output `z`. Moving one module towards
//! the input multiplies the stack by a block lower-triangular
//! [`UnmixedTransform`] whose blocks are Faà di Bruno sums with Hadamard
//! products of the module's local derivative blocks. Across a linear module
//! adjacent to the input, a block-diagonal [`MixedTransform`] yields every
//! mixed partial instead.

use crate::error::{Error, Result};
use crate::faa_di_bruno::FaaDiBrunoCoeffs;
use crate::tensor::{hadamard_power, hadamard_product, kronecker, Matrix};

/// Upper bound on entries of a materialized mixed transform (`Σ_k p^k · s`).
pub const MAX_MIXED_ENTRIES: usize = 1 << 25;

/// Stacked unmixed derivatives: `blocks[k-1][i] = ∂ᵏy/∂zᵢᵏ`.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivStack {
    blocks: Vec<Vec<f64>>,
}

impl DerivStack {
    pub fn new(blocks: Vec<Vec<f64>>) -> Result<Self> {
        let Some(first) = blocks.first() else {
            return Err(Error::InvalidOrder(
                0,
                "a derivative stack needs n >= 1".into(),
            ));
        };
        let width = first.len();
        if blocks.iter().any(|b| b.len() != width) {
            return Err(Error::shape("derivative stack blocks differ in width"));
        }
        let stack = Self { blocks };
        stack.check_finite()?;
        Ok(stack)
    }

    pub(crate) fn from_raw(blocks: Vec<Vec<f64>>) -> Self {
        debug_assert!(!blocks.is_empty());
        Self { blocks }
    }

    /// Returns an error naming the lowest order that holds a non-finite entry.
    pub fn check_finite(&self) -> Result<()> {
        for (k, b) in self.blocks.iter().enumerate() {
            if let Some(v) = b.iter().find(|v| !v.is_finite()) {
                return Err(Error::Divergent {
                    order: k + 1,
                    detail: format!("derivative block holds {v}"),
                });
            }
        }
        Ok(())
    }

    pub fn order(&self) -> usize {
        self.blocks.len()
    }

    pub fn width(&self) -> usize {
        self.blocks[0].len()
    }

    /// Block `k` (1-based).
    pub fn block(&self, k: usize) -> &[f64] {
        &self.blocks[k - 1]
    }

    pub fn blocks(&self) -> &[Vec<f64>] {
        &self.blocks
    }

    pub fn into_blocks(self) -> Vec<Vec<f64>> {
        self.blocks
    }

    /// `∂ᵏy/∂zᵢᵏ`, `k` 1-based and `i` 0-based.
    pub fn get(&self, k: usize, i: usize) -> f64 {
        self.blocks[k - 1][i]
    }
}

/// Mixed partials with respect to the network input:
/// block `k` has `pᵏ` entries in Kronecker order, entry
/// `Σ_j i_j · p^{k-1-j}` holding `∂ᵏy/∂x_{i_0}…∂x_{i_{k-1}}` (0-based).
#[derive(Debug, Clone, PartialEq)]
pub struct MixedDerivStack {
    input_dim: usize,
    blocks: Vec<Vec<f64>>,
}

/// Offset of a multi-index inside a Kronecker-ordered block.
pub fn multi_index_offset(indices: &[usize], p: usize) -> usize {
    indices.iter().fold(0, |acc, &i| acc * p + i)
}

/// Inverse of [`multi_index_offset`] for a block of order `k`.
pub fn multi_index_from_offset(mut offset: usize, p: usize, k: usize) -> Vec<usize> {
    let mut out = vec![0; k];
    for slot in out.iter_mut().rev() {
        *slot = offset % p;
        offset /= p;
    }
    out
}

impl MixedDerivStack {
    pub fn new(input_dim: usize, blocks: Vec<Vec<f64>>) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::InvalidOrder(0, "a mixed stack needs n >= 1".into()));
        }
        for (k, b) in blocks.iter().enumerate() {
            if b.len() != input_dim.pow(k as u32 + 1) {
                return Err(Error::shape(format!(
                    "mixed block {} has {} entries, expected {}",
                    k + 1,
                    b.len(),
                    input_dim.pow(k as u32 + 1)
                )));
            }
        }
        let stack = Self { input_dim, blocks };
        stack.check_finite()?;
        Ok(stack)
    }

    pub fn check_finite(&self) -> Result<()> {
        for (k, b) in self.blocks.iter().enumerate() {
            if let Some(v) = b.iter().find(|v| !v.is_finite()) {
                return Err(Error::Divergent {
                    order: k + 1,
                    detail: format!("mixed derivative block holds {v}"),
                });
            }
        }
        Ok(())
    }

    pub fn order(&self) -> usize {
        self.blocks.len()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    /// Block `k` (1-based), `pᵏ` entries.
    pub fn block(&self, k: usize) -> &[f64] {
        &self.blocks[k - 1]
    }

    /// Mixed partial for a 0-based multi-index; its length is the order.
    pub fn get(&self, indices: &[usize]) -> f64 {
        self.blocks[indices.len() - 1][multi_index_offset(indices, self.input_dim)]
    }

    /// The unmixed part: `∂ᵏy/∂xᵢᵏ` read from the repeated index `(i, …, i)`.
    pub fn diagonal(&self) -> DerivStack {
        let blocks = (1..=self.order())
            .map(|k| (0..self.input_dim).map(|i| self.get(&vec![i; k])).collect())
            .collect();
        DerivStack::from_raw(blocks)
    }
}

/// Local derivatives of one module `z = g(x)`.
#[derive(Debug, Clone, PartialEq)]
pub enum LocalJet {
    /// `zᵢ` depends only on `xᵢ`; `derivs[k-1][i] = ∂ᵏzᵢ/∂xᵢᵏ`.
    Elementwise { derivs: Vec<Vec<f64>> },
    /// `blocks[k-1] = βᵏzᵀ/βxᵏ`, a `p × s` matrix with entry `(i, j)`
    /// equal to `∂ᵏz_j/∂xᵢᵏ`.
    General { blocks: Vec<Matrix> },
}

impl LocalJet {
    pub fn order(&self) -> usize {
        match self {
            LocalJet::Elementwise { derivs } => derivs.len(),
            LocalJet::General { blocks } => blocks.len(),
        }
    }

    /// Jet of a linear map `z = W x`: first block `Wᵀ`, every higher block zero.
    pub fn linear(w: &Matrix, n: usize) -> Self {
        let first = w.transpose();
        let (p, s) = first.shape();
        let mut blocks = vec![first];
        blocks.extend((1..n).map(|_| Matrix::zeros(p, s)));
        LocalJet::General { blocks }
    }
}

/// Block lower-triangular map from a module-output stack to a module-input
/// stack.
#[derive(Debug, Clone, PartialEq)]
pub enum UnmixedTransform {
    /// `blocks[i-1][j-1][node]`, one scalar Faà di Bruno matrix per node.
    Elementwise {
        width: usize,
        blocks: Vec<Vec<Vec<f64>>>,
    },
    /// `blocks[i-1][j-1]` is `p × s`, `None` where the block vanishes.
    General {
        rows: usize,
        cols: usize,
        blocks: Vec<Vec<Option<Matrix>>>,
    },
}

impl UnmixedTransform {
    pub fn order(&self) -> usize {
        match self {
            UnmixedTransform::Elementwise { blocks, .. } => blocks.len(),
            UnmixedTransform::General { blocks, .. } => blocks.len(),
        }
    }

    /// Width of the stacks the transform consumes.
    pub fn input_width(&self) -> usize {
        match self {
            UnmixedTransform::Elementwise { width, .. } => *width,
            UnmixedTransform::General { cols, .. } => *cols,
        }
    }

    /// Width of the stacks the transform produces.
    pub fn output_width(&self) -> usize {
        match self {
            UnmixedTransform::Elementwise { width, .. } => *width,
            UnmixedTransform::General { rows, .. } => *rows,
        }
    }

    /// Block `(i, j)` as a dense `p × s` matrix (1-based indices).
    pub fn block(&self, i: usize, j: usize) -> Matrix {
        match self {
            UnmixedTransform::Elementwise { width, blocks } => {
                let mut m = Matrix::zeros(*width, *width);
                if j <= i {
                    for (node, &v) in blocks[i - 1][j - 1].iter().enumerate() {
                        m.set(node, node, v);
                    }
                }
                m
            }
            UnmixedTransform::General { rows, cols, blocks } => {
                match blocks
                    .get(i - 1)
                    .and_then(|r| r.get(j - 1))
                    .and_then(|b| b.as_ref())
                {
                    Some(b) => b.clone(),
                    None => Matrix::zeros(*rows, *cols),
                }
            }
        }
    }
}

/// Evaluates the Faà di Bruno table on a module's local jet.
pub fn build_unmixed_transform(
    jet: &LocalJet,
    coeffs: &FaaDiBrunoCoeffs,
) -> Result<UnmixedTransform> {
    let n = coeffs.order();
    if jet.order() < n {
        return Err(Error::OrderMismatch {
            expected: n,
            actual: jet.order(),
        });
    }
    match jet {
        LocalJet::Elementwise { derivs } => {
            let width = derivs[0].len();
            if derivs.iter().any(|d| d.len() != width) {
                return Err(Error::shape("elementwise jet blocks differ in width"));
            }
            let mut blocks: Vec<Vec<Vec<f64>>> =
                (1..=n).map(|i| vec![vec![0.0; width]; i]).collect();
            let mut local = vec![0.0; n];
            for node in 0..width {
                for (l, slot) in local.iter_mut().enumerate() {
                    *slot = derivs[l][node];
                }
                for (i, row) in blocks.iter_mut().enumerate() {
                    for (j, cell) in row.iter_mut().enumerate() {
                        cell[node] = coeffs.eval(i + 1, j + 1, &local);
                    }
                }
            }
            Ok(UnmixedTransform::Elementwise { width, blocks })
        }
        LocalJet::General { blocks: jets } => {
            let (rows, cols) = jets[0].shape();
            if jets.iter().any(|b| b.shape() != (rows, cols)) {
                return Err(Error::shape("general jet blocks differ in shape"));
            }
            let zero: Vec<bool> = jets
                .iter()
                .map(|b| b.data().iter().all(|&v| v == 0.0))
                .collect();
            let mut blocks = Vec::with_capacity(n);
            for i in 1..=n {
                let mut row = Vec::with_capacity(i);
                for j in 1..=i {
                    let mut acc: Option<Matrix> = None;
                    for mono in coeffs.entries(i, j) {
                        let vanishes = mono
                            .exponents
                            .iter()
                            .enumerate()
                            .any(|(l, &m)| m > 0 && zero[l]);
                        if vanishes {
                            continue;
                        }
                        let mut term: Option<Matrix> = None;
                        for (l, &m) in mono.exponents.iter().enumerate() {
                            if m == 0 {
                                continue;
                            }
                            let factor = hadamard_power(&jets[l], m)?;
                            term = Some(match term {
                                Some(t) => hadamard_product(&t, &factor)?,
                                None => factor,
                            });
                        }
                        let term = term.expect("monomials have at least one factor");
                        let term = if mono.coeff == 1 {
                            term
                        } else {
                            term.scale(mono.coeff as f64)
                        };
                        acc = Some(match acc {
                            Some(a) => a.add(&term)?,
                            None => term,
                        });
                    }
                    row.push(acc);
                }
                blocks.push(row);
            }
            Ok(UnmixedTransform::General { rows, cols, blocks })
        }
    }
}

/// `result.block(i) = Σ_{j ≤ i} T[i][j] · v_next.block(j)`.
pub fn propagate_unmixed(v_next: &DerivStack, transform: &UnmixedTransform) -> Result<DerivStack> {
    let n = v_next.order();
    if transform.order() != n {
        return Err(Error::OrderMismatch {
            expected: transform.order(),
            actual: n,
        });
    }
    if transform.input_width() != v_next.width() {
        return Err(Error::shape(format!(
            "transform consumes width {}, stack has width {}",
            transform.input_width(),
            v_next.width()
        )));
    }
    let out = match transform {
        UnmixedTransform::Elementwise { width, blocks } => (0..n)
            .map(|i| {
                (0..*width)
                    .map(|node| {
                        (0..=i)
                            .map(|j| blocks[i][j][node] * v_next.blocks[j][node])
                            .sum()
                    })
                    .collect()
            })
            .collect(),
        UnmixedTransform::General { rows, blocks, .. } => {
            let mut out = Vec::with_capacity(n);
            for (i, row) in blocks.iter().enumerate() {
                let mut acc = vec![0.0; *rows];
                for (j, block) in row.iter().enumerate() {
                    if let Some(b) = block {
                        for (a, v) in acc.iter_mut().zip(b.matvec(&v_next.blocks[j])?) {
                            *a += v;
                        }
                    }
                }
                debug_assert_eq!(i + 1, out.len() + 1);
                out.push(acc);
            }
            out
        }
    };
    Ok(DerivStack::from_raw(out))
}

/// Block-diagonal transform `diag(Q_1, …, Q_n)` of a linear module.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedTransform {
    input_dim: usize,
    q: Vec<Matrix>,
}

impl MixedTransform {
    pub fn order(&self) -> usize {
        self.q.len()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    /// Width of the module output the transform consumes.
    pub fn output_width(&self) -> usize {
        self.q[0].cols()
    }

    /// `Q_k` (1-based), `pᵏ × s`.
    pub fn q(&self, k: usize) -> &Matrix {
        &self.q[k - 1]
    }

    /// Mixed transform of a module given its local jet. Only modules whose
    /// higher-order local derivatives all vanish qualify.
    pub fn from_jet(jet: &LocalJet, n: usize) -> Result<Self> {
        let w_eff = match jet {
            LocalJet::General { blocks } => {
                if blocks
                    .iter()
                    .skip(1)
                    .any(|b| b.data().iter().any(|&v| v != 0.0))
                {
                    return Err(Error::MixedUnsupported(
                        "module has non-zero local derivatives above first order".into(),
                    ));
                }
                blocks[0].transpose()
            }
            LocalJet::Elementwise { derivs } => {
                if derivs.iter().skip(1).any(|d| d.iter().any(|&v| v != 0.0)) {
                    return Err(Error::MixedUnsupported(
                        "elementwise module is nonlinear at the expansion point".into(),
                    ));
                }
                let w = derivs[0].len();
                let mut m = Matrix::zeros(w, w);
                for (i, &d) in derivs[0].iter().enumerate() {
                    m.set(i, i, d);
                }
                m
            }
        };
        build_mixed_transform(&w_eff, n)
    }
}

/// Builds `Q_1 = W_effᵀ` and `Q_k = (Q_1 ⊗ 1^{p^{k-1}}) ⊙ (1^p ⊗ Q_{k-1})`
/// for a linear module `z = W_eff · x` with `W_eff` of shape `s × p`.
pub fn build_mixed_transform(w_eff: &Matrix, n: usize) -> Result<MixedTransform> {
    if n == 0 {
        return Err(Error::InvalidOrder(
            0,
            "mixed transform needs n >= 1".into(),
        ));
    }
    let (s, p) = w_eff.shape();
    let mut total = 0usize;
    for k in 1..=n {
        let rows = p.checked_pow(k as u32).unwrap_or(usize::MAX);
        total = total.saturating_add(rows.saturating_mul(s));
    }
    if total > MAX_MIXED_ENTRIES {
        return Err(Error::Unsupported(format!(
            "mixed transform for {p} inputs at order {n} needs {total} entries (limit {MAX_MIXED_ENTRIES})"
        )));
    }
    let q1 = w_eff.transpose();
    let ones_p = Matrix::filled(p, 1, 1.0);
    let mut q = vec![q1.clone()];
    for k in 2..=n {
        let ones = Matrix::filled(p.pow(k as u32 - 1), 1, 1.0);
        let left = kronecker(&q1, &ones);
        let right = kronecker(&ones_p, &q[k - 2]);
        q.push(hadamard_product(&left, &right)?);
    }
    Ok(MixedTransform { input_dim: p, q })
}

/// `block k = Q_k · v_next.block(k)`.
///
/// Each multi-index is evaluated once at its sorted representative and copied
/// to every permutation, so mixed partials are symmetric bit for bit.
pub fn propagate_mixed(v_next: &DerivStack, transform: &MixedTransform) -> Result<MixedDerivStack> {
    let n = v_next.order();
    if transform.order() != n {
        return Err(Error::OrderMismatch {
            expected: transform.order(),
            actual: n,
        });
    }
    if transform.output_width() != v_next.width() {
        return Err(Error::shape(format!(
            "mixed transform consumes width {}, stack has width {}",
            transform.output_width(),
            v_next.width()
        )));
    }
    let p = transform.input_dim;
    let mut blocks = Vec::with_capacity(n);
    for k in 1..=n {
        let q = transform.q(k);
        let v = v_next.block(k);
        let len = q.rows();
        let mut out = vec![0.0; len];
        for offset in 0..len {
            let mut idx = multi_index_from_offset(offset, p, k);
            if idx.windows(2).all(|w| w[0] <= w[1]) {
                out[offset] = q.row(offset).iter().zip(v).map(|(a, b)| a * b).sum();
            } else {
                idx.sort_unstable();
                out[offset] = out[multi_index_offset(&idx, p)];
            }
        }
        blocks.push(out);
    }
    let stack = MixedDerivStack {
        input_dim: p,
        blocks,
    };
    stack.check_finite()?;
    Ok(stack)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::faa_di_bruno::faa_di_bruno_table;

    fn unit_stack(n: usize, width: usize) -> DerivStack {
        let mut blocks = vec![vec![0.0; width]; n];
        blocks[0][0] = 1.0;
        DerivStack::new(blocks).unwrap()
    }

    #[test]
    fn stack_validation() {
        assert!(DerivStack::new(vec![]).is_err());
        assert!(DerivStack::new(vec![vec![1.0], vec![1.0, 2.0]]).is_err());
        assert!(matches!(
            DerivStack::new(vec![vec![1.0], vec![f64::NAN]]),
            Err(Error::Divergent { order: 2, .. })
        ));
    }

    #[test]
    fn linear_elementwise_jet_gives_powers() {
        let coeffs = faa_di_bruno_table(3).unwrap();
        let jet = LocalJet::Elementwise {
            derivs: vec![vec![2.0, 2.0], vec![0.0, 0.0], vec![0.0, 0.0]],
        };
        let t = build_unmixed_transform(&jet, &coeffs).unwrap();
        for i in 1..=3 {
            for j in 1..=3 {
                let b = t.block(i, j);
                let expect = if i == j { 2f64.powi(i as i32) } else { 0.0 };
                assert_eq!(b.get(0, 0), expect);
                assert_eq!(b.get(1, 1), expect);
                assert_eq!(b.get(0, 1), 0.0);
            }
        }
    }

    #[test]
    fn unit_jet_reproduces_chain_rule_coefficients() {
        let coeffs = faa_di_bruno_table(3).unwrap();
        let jet = LocalJet::Elementwise {
            derivs: vec![vec![1.0], vec![1.0], vec![1.0]],
        };
        let t = build_unmixed_transform(&jet, &coeffs).unwrap();
        let rows: Vec<Vec<f64>> = (1..=3)
            .map(|i| (1..=3).map(|j| t.block(i, j).get(0, 0)).collect())
            .collect();
        assert_eq!(
            rows,
            vec![
                vec![1.0, 0.0, 0.0],
                vec![1.0, 1.0, 0.0],
                vec![1.0, 3.0, 1.0]
            ]
        );
    }

    #[test]
    fn square_jet_at_one() {
        // z = x² at x = 1: z' = 2, z'' = 2; y(z) derivatives map through [[2,0],[2,4]]
        let coeffs = faa_di_bruno_table(2).unwrap();
        let jet = LocalJet::Elementwise {
            derivs: vec![vec![2.0], vec![2.0]],
        };
        let t = build_unmixed_transform(&jet, &coeffs).unwrap();
        assert_eq!(t.block(1, 1).get(0, 0), 2.0);
        assert_eq!(t.block(2, 1).get(0, 0), 2.0);
        assert_eq!(t.block(2, 2).get(0, 0), 4.0);
        // general-path agreement on the same jet
        let general = LocalJet::General {
            blocks: vec![Matrix::filled(1, 1, 2.0), Matrix::filled(1, 1, 2.0)],
        };
        let g = build_unmixed_transform(&general, &coeffs).unwrap();
        for (i, j) in [(1, 1), (2, 1), (2, 2)] {
            assert_eq!(g.block(i, j), t.block(i, j));
        }
    }

    #[test]
    fn first_column_and_diagonal_structure() {
        let coeffs = faa_di_bruno_table(4).unwrap();
        let blocks: Vec<Matrix> = (1..=4)
            .map(|k| Matrix::new(2, 3, (0..6).map(|v| 0.1 * (v + k) as f64).collect()).unwrap())
            .collect();
        let jet = LocalJet::General {
            blocks: blocks.clone(),
        };
        let t = build_unmixed_transform(&jet, &coeffs).unwrap();
        for i in 1..=4 {
            assert_eq!(t.block(i, 1), blocks[i - 1]);
            let diag = hadamard_power(&blocks[0], i as u32).unwrap();
            for (a, b) in t.block(i, i).data().iter().zip(diag.data()) {
                assert!((a - b).abs() <= 1e-15);
            }
        }
    }

    #[test]
    fn order_mismatch_is_rejected() {
        let coeffs = faa_di_bruno_table(3).unwrap();
        let jet = LocalJet::Elementwise {
            derivs: vec![vec![1.0]],
        };
        assert!(matches!(
            build_unmixed_transform(&jet, &coeffs),
            Err(Error::OrderMismatch { .. })
        ));
    }

    #[test]
    fn unit_propagation_returns_first_column() {
        let coeffs = faa_di_bruno_table(3).unwrap();
        let blocks: Vec<Matrix> = (1..=3)
            .map(|k| Matrix::new(2, 1, vec![k as f64, -(k as f64) / 2.0]).unwrap())
            .collect();
        let t = build_unmixed_transform(
            &LocalJet::General {
                blocks: blocks.clone(),
            },
            &coeffs,
        )
        .unwrap();
        let v = propagate_unmixed(&unit_stack(3, 1), &t).unwrap();
        for k in 1..=3 {
            assert_eq!(v.block(k), blocks[k - 1].data());
        }
    }

    #[test]
    fn identity_module_is_transparent() {
        let coeffs = faa_di_bruno_table(4).unwrap();
        let jet = LocalJet::linear(&Matrix::identity(3), 4);
        let t = build_unmixed_transform(&jet, &coeffs).unwrap();
        let v = DerivStack::new((1..=4).map(|k| vec![k as f64, 0.5, -1.0]).collect()).unwrap();
        assert_eq!(propagate_unmixed(&v, &t).unwrap(), v);
    }

    #[test]
    fn propagate_rejects_width_mismatch() {
        let coeffs = faa_di_bruno_table(2).unwrap();
        let t =
            build_unmixed_transform(&LocalJet::linear(&Matrix::identity(3), 2), &coeffs).unwrap();
        assert!(propagate_unmixed(&unit_stack(2, 2), &t).is_err());
    }

    #[test]
    fn mixed_identity_weights() {
        let t = build_mixed_transform(&Matrix::identity(2), 2).unwrap();
        let q2 = t.q(2);
        assert_eq!(q2.shape(), (4, 2));
        assert_eq!(q2.row(0), &[1.0, 0.0]);
        assert_eq!(q2.row(1), &[0.0, 0.0]);
        assert_eq!(q2.row(2), &[0.0, 0.0]);
        assert_eq!(q2.row(3), &[0.0, 1.0]);
    }

    #[test]
    fn mixed_row_vector_weights() {
        let (a, b) = (1.5, -0.75);
        let t = build_mixed_transform(&Matrix::new(1, 2, vec![a, b]).unwrap(), 3).unwrap();
        assert_eq!(t.q(1), &Matrix::new(2, 1, vec![a, b]).unwrap());
        assert_eq!(t.q(2).data(), &[a * a, a * b, b * a, b * b]);
        // rows equal products of the selected W^T rows
        for off in 0..8 {
            let idx = multi_index_from_offset(off, 2, 3);
            let expect: f64 = idx.iter().map(|&i| [a, b][i]).product();
            assert!((t.q(3).get(off, 0) - expect).abs() <= 1e-15);
        }
    }

    #[test]
    fn mixed_hessian_of_squared_linear_form() {
        // y = (a x1 + b x2)²: v at z is (2z, 2); Hessian entries 2a², 2ab, 2ab, 2b²
        let (a, b) = (0.8, -1.3);
        let t = build_mixed_transform(&Matrix::new(1, 2, vec![a, b]).unwrap(), 2).unwrap();
        let z = 0.0;
        let v = DerivStack::new(vec![vec![2.0 * z], vec![2.0]]).unwrap();
        let mixed = propagate_mixed(&v, &t).unwrap();
        assert_eq!(mixed.block(1), &[0.0, 0.0]);
        let h = mixed.block(2);
        assert!((h[0] - 2.0 * a * a).abs() < 1e-15);
        assert!((h[1] - 2.0 * a * b).abs() < 1e-15);
        assert_eq!(h[1], h[2]);
        assert!((h[3] - 2.0 * b * b).abs() < 1e-15);
        assert_eq!(mixed.get(&[0, 1]), mixed.get(&[1, 0]));
    }

    #[test]
    fn first_order_mixed_is_gradient() {
        let w = Matrix::new(2, 3, vec![1.0, 2.0, 3.0, -1.0, 0.5, 0.25]).unwrap();
        let t = build_mixed_transform(&w, 1).unwrap();
        let v = DerivStack::new(vec![vec![0.3, -0.7]]).unwrap();
        let g = propagate_mixed(&v, &t).unwrap();
        assert_eq!(
            g.block(1),
            w.matvec_transposed(&[0.3, -0.7]).unwrap().as_slice()
        );
    }

    #[test]
    fn mixed_transform_from_nonlinear_jet_is_rejected() {
        let jet = LocalJet::Elementwise {
            derivs: vec![vec![1.0], vec![0.5]],
        };
        assert!(matches!(
            MixedTransform::from_jet(&jet, 2),
            Err(Error::MixedUnsupported(_))
        ));
        let linear = LocalJet::linear(&Matrix::identity(2), 3);
        assert!(MixedTransform::from_jet(&linear, 3).is_ok());
    }

    #[test]
    fn oversized_mixed_transform_is_rejected() {
        let w = Matrix::zeros(16, 784);
        assert!(matches!(
            build_mixed_transform(&w, 3),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn offsets_round_trip() {
        for off in 0..27 {
            let idx = multi_index_from_offset(off, 3, 3);
            assert_eq!(multi_index_offset(&idx, 3), off);
        }
        assert_eq!(multi_index_offset(&[1, 0], 2), 2);
    }
}
