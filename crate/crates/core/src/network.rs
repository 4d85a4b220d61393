//! Whole-network forward pass and derivative-stack propagation.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::activation::Activation;
use crate::chain::{DerivStack, MixedDerivStack};
use crate::error::{Error, Result};
use crate::layers::{
    fc_mixed_backward, output_init, BackwardContext, Conv, Dense, ForwardTrace, ModuleSpec, Pool,
    Shape,
};
use crate::tensor::Matrix;

/// Ordered list of modules applied to an input of `input_shape`.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    input_shape: Shape,
    modules: Vec<ModuleSpec>,
    metadata: BTreeMap<String, String>,
    shapes: Vec<Shape>,
}

/// Which modules make the unmixed propagation approximate.
///
/// The per-coordinate rule through a module that mixes coordinates drops
/// cross derivatives of everything downstream of it. The drop is harmless
/// when that downstream part is additively separable in the module's
/// outputs or affine.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Exactness {
    /// Module indices where cross terms are dropped, from the output inward.
    pub inexact_modules: Vec<usize>,
    /// Whether the downstream part of the first linear module is separable,
    /// the condition under which mixed partials are exact. `None` when the
    /// network has no leading linear module.
    pub mixed_separable: Option<bool>,
}

impl Exactness {
    pub fn unmixed_exact(&self) -> bool {
        self.inexact_modules.is_empty()
    }

    pub fn mixed_exact(&self, first_linear: usize) -> bool {
        self.mixed_separable == Some(true) && self.inexact_modules.iter().all(|&m| m < first_linear)
    }
}

impl NetworkSpec {
    pub fn new(input_shape: Shape, modules: Vec<ModuleSpec>) -> Result<Self> {
        let mut shapes = vec![input_shape];
        for (i, m) in modules.iter().enumerate() {
            let next = m
                .output_shape(*shapes.last().expect("non-empty"))
                .map_err(|e| Error::module(i, e))?;
            shapes.push(next);
        }
        Ok(Self {
            input_shape,
            modules,
            metadata: BTreeMap::new(),
            shapes,
        })
    }

    pub fn with_metadata(mut self, metadata: BTreeMap<String, String>) -> Self {
        self.metadata = metadata;
        self
    }

    pub fn builder(input_shape: Shape) -> NetworkBuilder {
        NetworkBuilder {
            input_shape,
            modules: Vec::new(),
        }
    }

    pub fn input_shape(&self) -> Shape {
        self.input_shape
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.len()
    }

    pub fn output_shape(&self) -> Shape {
        *self.shapes.last().expect("non-empty")
    }

    pub fn modules(&self) -> &[ModuleSpec] {
        &self.modules
    }

    pub fn metadata(&self) -> &BTreeMap<String, String> {
        &self.metadata
    }

    /// Shape entering each module, followed by the output shape.
    pub fn shapes(&self) -> &[Shape] {
        &self.shapes
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_len() {
            return Err(Error::Dimension(format!(
                "input has {} values, network expects {} ({:?})",
                x.len(),
                self.input_len(),
                self.input_shape.dims()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("network input".into()));
        }
        Ok(())
    }

    pub fn trace(&self, x: &[f64]) -> Result<ForwardTrace> {
        self.check_input(x)?;
        let mut values = vec![x.to_vec()];
        let mut argmax = Vec::with_capacity(self.modules.len());
        for (i, m) in self.modules.iter().enumerate() {
            let (y, idx) = m
                .forward(values.last().expect("non-empty"), self.shapes[i])
                .map_err(|e| Error::module(i, e))?;
            values.push(y);
            argmax.push(idx);
        }
        Ok(ForwardTrace {
            values,
            shapes: self.shapes.clone(),
            argmax,
        })
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut v = x.to_vec();
        for (i, m) in self.modules.iter().enumerate() {
            v = m
                .forward(&v, self.shapes[i])
                .map_err(|e| Error::module(i, e))?
                .0;
        }
        Ok(v)
    }

    /// Forward pass of a single-output network.
    pub fn forward_scalar(&self, x: &[f64]) -> Result<f64> {
        self.require_scalar()?;
        Ok(self.forward(x)?[0])
    }

    pub fn forward_batch(&self, xs: &[Vec<f64>]) -> Result<Vec<f64>> {
        self.require_scalar()?;
        xs.par_iter().map(|x| Ok(self.forward(x)?[0])).collect()
    }

    fn require_scalar(&self) -> Result<()> {
        let out = self.output_shape().len();
        if out != 1 {
            return Err(Error::Unsupported(format!(
                "network has {out} outputs; split it into single-output networks first"
            )));
        }
        Ok(())
    }

    /// One single-output network per output component.
    pub fn split_outputs(&self) -> Result<Vec<NetworkSpec>> {
        if self.output_shape().len() == 1 {
            return Ok(vec![self.clone()]);
        }
        let Some(ModuleSpec::FullyConnected(last)) = self.modules.last() else {
            return Err(Error::Unsupported(
                "only networks ending in a fully connected layer can be split per output".into(),
            ));
        };
        let head = &self.modules[..self.modules.len() - 1];
        (0..last.out_features())
            .map(|o| {
                let w = Matrix::new(1, last.in_features(), last.weight.row(o).to_vec())?;
                let dense = Dense::new(w, vec![last.bias[o]])?;
                let mut modules = head.to_vec();
                modules.push(ModuleSpec::FullyConnected(dense));
                let mut metadata = self.metadata.clone();
                metadata.insert("output_index".into(), o.to_string());
                Ok(NetworkSpec::new(self.input_shape, modules)?.with_metadata(metadata))
            })
            .collect()
    }

    /// Output value and the order-`n` unmixed stack at the network input.
    pub fn unmixed_stack(&self, x0: &[f64], n: usize) -> Result<(f64, DerivStack)> {
        self.require_scalar()?;
        let ctx = BackwardContext::new(n)?;
        let trace = self.trace(x0)?;
        let v = self.backward_from(&trace, self.modules.len(), 0, output_init(n)?, &ctx)?;
        Ok((trace.output()[0], v))
    }

    /// First-order derivatives through the same kernels as [`Self::unmixed_stack`].
    pub fn gradient(&self, x0: &[f64]) -> Result<Vec<f64>> {
        Ok(self.unmixed_stack(x0, 1)?.1.into_blocks().swap_remove(0))
    }

    /// Unmixed stacks of every output component, computed in parallel.
    pub fn unmixed_stacks_per_output(
        &self,
        x0: &[f64],
        n: usize,
    ) -> Result<Vec<(f64, DerivStack)>> {
        self.split_outputs()?
            .par_iter()
            .map(|net| net.unmixed_stack(x0, n))
            .collect()
    }

    /// Moves `v` (the stack at the output of module `from - 1`) back to the
    /// input of module `to`.
    fn backward_from(
        &self,
        trace: &ForwardTrace,
        from: usize,
        to: usize,
        mut v: DerivStack,
        ctx: &BackwardContext,
    ) -> Result<DerivStack> {
        for i in (to..from).rev() {
            v = self.modules[i]
                .backward_unmixed(
                    &v,
                    &trace.values[i],
                    self.shapes[i],
                    trace.argmax[i].as_deref(),
                    ctx,
                )
                .map_err(|e| Error::module(i, e))?;
            v.check_finite().map_err(|e| Error::module(i, e))?;
        }
        Ok(v)
    }

    /// Index of the linear module the mixed expansion goes through: the
    /// first module after any leading flatten/unflatten.
    pub fn first_linear_module(&self) -> Result<usize> {
        for (i, m) in self.modules.iter().enumerate() {
            match m {
                ModuleSpec::Flatten | ModuleSpec::Unflatten(_) => continue,
                ModuleSpec::FullyConnected(_) | ModuleSpec::Conv2d(_) | ModuleSpec::AvgPool(_) => {
                    return Ok(i)
                }
                other => {
                    return Err(Error::MixedUnsupported(format!(
                        "module {i} ({}) is the first non-reshape module and is not linear",
                        other.kind()
                    )))
                }
            }
        }
        Err(Error::MixedUnsupported(
            "network has no linear module".into(),
        ))
    }

    /// Output value, all mixed partials up to order `n` at the input, and
    /// the unmixed stack for reference.
    pub fn mixed_stack(&self, x0: &[f64], n: usize) -> Result<(f64, MixedDerivStack)> {
        self.require_scalar()?;
        let m = self.first_linear_module()?;
        let ctx = BackwardContext::new(n)?;
        let trace = self.trace(x0)?;
        let v = self.backward_from(&trace, self.modules.len(), m + 1, output_init(n)?, &ctx)?;
        let w = self.modules[m]
            .effective_weight(self.shapes[m])?
            .expect("first_linear_module returns a linear module");
        let mixed = fc_mixed_backward(&v, &w, self.input_len()).map_err(|e| Error::module(m, e))?;
        Ok((trace.output()[0], mixed))
    }

    /// True when every nonlinearity is piecewise linear, so all stacks
    /// vanish beyond first order.
    pub fn is_piecewise_linear(&self) -> bool {
        self.modules.iter().all(|m| match m {
            ModuleSpec::Activation(a) => a.is_piecewise_linear(),
            _ => true,
        })
    }

    /// Walks from the output inward tracking whether the downstream part is
    /// additively separable in the current module's outputs and whether it
    /// is affine.
    pub fn exactness(&self) -> Exactness {
        let first_linear = self.first_linear_module().ok();
        let mut separable = true;
        let mut affine = true;
        let mut inexact_modules = Vec::new();
        let mut mixed_separable = None;
        for (i, m) in self.modules.iter().enumerate().rev() {
            if Some(i) == first_linear {
                mixed_separable = Some(separable);
            }
            match m {
                ModuleSpec::Activation(a) => affine &= a.is_piecewise_linear(),
                ModuleSpec::Flatten | ModuleSpec::Unflatten(_) => {}
                ModuleSpec::MaxPool(p) => {
                    if p.overlaps() && !separable {
                        inexact_modules.push(i);
                    }
                }
                ModuleSpec::FullyConnected(d) => {
                    let w = &d.weight;
                    let col_single = (0..w.cols())
                        .all(|c| (0..w.rows()).filter(|&r| w.get(r, c) != 0.0).count() <= 1);
                    let row_single =
                        (0..w.rows()).all(|r| w.row(r).iter().filter(|&&v| v != 0.0).count() <= 1);
                    if !separable && !col_single {
                        inexact_modules.push(i);
                    }
                    separable = affine || (separable && row_single);
                }
                ModuleSpec::Conv2d(_) | ModuleSpec::AvgPool(_) => {
                    if !separable {
                        inexact_modules.push(i);
                    }
                    separable = affine;
                }
            }
        }
        Exactness {
            inexact_modules,
            mixed_separable,
        }
    }
}

/// Incremental construction of a [`NetworkSpec`].
#[derive(Debug, Clone)]
pub struct NetworkBuilder {
    input_shape: Shape,
    modules: Vec<ModuleSpec>,
}

impl NetworkBuilder {
    pub fn module(mut self, m: ModuleSpec) -> Self {
        self.modules.push(m);
        self
    }

    pub fn dense(self, weight: Matrix, bias: Vec<f64>) -> Result<Self> {
        Ok(self.module(ModuleSpec::FullyConnected(Dense::new(weight, bias)?)))
    }

    pub fn activation(self, a: Activation) -> Self {
        self.module(ModuleSpec::Activation(a))
    }

    pub fn conv(self, conv: Conv) -> Self {
        self.module(ModuleSpec::Conv2d(conv))
    }

    pub fn max_pool(self, pool: Pool) -> Self {
        self.module(ModuleSpec::MaxPool(pool))
    }

    pub fn avg_pool(self, pool: Pool) -> Self {
        self.module(ModuleSpec::AvgPool(pool))
    }

    pub fn flatten(self) -> Self {
        self.module(ModuleSpec::Flatten)
    }

    pub fn unflatten(self, shape: Shape) -> Self {
        self.module(ModuleSpec::Unflatten(shape))
    }

    pub fn build(self) -> Result<NetworkSpec> {
        NetworkSpec::new(self.input_shape, self.modules)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn random_dense(rng: &mut ChaCha8Rng, out: usize, inp: usize) -> (Matrix, Vec<f64>) {
        let w = Matrix::new(
            out,
            inp,
            (0..out * inp).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        (w, (0..out).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    #[test]
    fn affine_forward_and_stack() {
        let net = NetworkSpec::builder(Shape::Flat(1))
            .dense(m(&[&[2.0]]), vec![1.0])
            .unwrap()
            .build()
            .unwrap();
        assert_eq!(net.forward_scalar(&[0.0]).unwrap(), 1.0);
        let (f0, v) = net.unmixed_stack(&[3.0], 3).unwrap();
        assert_eq!(f0, 7.0);
        assert_eq!(v.blocks(), &[vec![2.0], vec![0.0], vec![0.0]]);
    }

    #[test]
    fn shape_chain_errors_name_module() {
        let err = NetworkSpec::builder(Shape::Flat(3))
            .dense(m(&[&[1.0, 2.0, 3.0]]), vec![0.0])
            .unwrap()
            .activation(Activation::Tanh)
            .dense(m(&[&[1.0, 2.0]]), vec![0.0])
            .unwrap()
            .build()
            .unwrap_err();
        assert!(matches!(err, Error::Module { index: 2, .. }), "{err}");
    }

    #[test]
    fn split_outputs_matches_components() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (w1, b1) = random_dense(&mut rng, 5, 4);
        let (w2, b2) = random_dense(&mut rng, 3, 5);
        let net = NetworkSpec::builder(Shape::Flat(4))
            .dense(w1, b1)
            .unwrap()
            .activation(Activation::Sigmoid)
            .dense(w2, b2)
            .unwrap()
            .build()
            .unwrap();
        let parts = net.split_outputs().unwrap();
        assert_eq!(parts.len(), 3);
        for _ in 0..10 {
            let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let full = net.forward(&x).unwrap();
            for (o, part) in parts.iter().enumerate() {
                assert!((part.forward_scalar(&x).unwrap() - full[o]).abs() <= 1e-15);
            }
        }
        let single = parts[0].split_outputs().unwrap();
        assert_eq!(single, vec![parts[0].clone()]);
    }

    #[test]
    fn split_requires_dense_head() {
        let net = NetworkSpec::builder(Shape::Flat(2))
            .activation(Activation::Tanh)
            .build()
            .unwrap();
        assert!(matches!(net.split_outputs(), Err(Error::Unsupported(_))));
        assert!(matches!(
            net.unmixed_stack(&[0.0, 0.0], 2),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn mixed_requires_linear_first_module() {
        let net = NetworkSpec::builder(Shape::Flat(1))
            .activation(Activation::Sine)
            .dense(m(&[&[1.0]]), vec![0.0])
            .unwrap()
            .build()
            .unwrap();
        let err = net.mixed_stack(&[0.1], 2).unwrap_err();
        assert!(matches!(err, Error::MixedUnsupported(_)));
        assert_eq!(err.category(), crate::ErrorCategory::Capability);
    }

    #[test]
    fn mixed_hessian_of_square() {
        // y = (a x1 + b x2)²
        let (a, b) = (0.7, -1.3);
        let net = NetworkSpec::builder(Shape::Flat(2))
            .dense(m(&[&[a, b]]), vec![0.0])
            .unwrap()
            .activation(Activation::Square)
            .dense(m(&[&[1.0]]), vec![0.0])
            .unwrap()
            .build()
            .unwrap();
        let (_, mixed) = net.mixed_stack(&[0.4, 0.2], 3).unwrap();
        let h = mixed.block(2);
        let expect = [2.0 * a * a, 2.0 * a * b, 2.0 * a * b, 2.0 * b * b];
        for (x, y) in h.iter().zip(expect) {
            assert!((x - y).abs() < 1e-14);
        }
        assert!(mixed.block(3).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradient_is_first_block() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let (w1, b1) = random_dense(&mut rng, 6, 3);
        let (w2, b2) = random_dense(&mut rng, 1, 6);
        let net = NetworkSpec::builder(Shape::Flat(3))
            .dense(w1, b1)
            .unwrap()
            .activation(Activation::Tanh)
            .dense(w2, b2)
            .unwrap()
            .build()
            .unwrap();
        let x = [0.1, -0.2, 0.3];
        let g = net.gradient(&x).unwrap();
        let (_, v) = net.unmixed_stack(&x, 5).unwrap();
        assert_eq!(g.as_slice(), v.block(1));
    }

    #[test]
    fn exactness_classes() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let (w1, b1) = random_dense(&mut rng, 4, 2);
        let (w2, b2) = random_dense(&mut rng, 4, 4);
        let (w3, b3) = random_dense(&mut rng, 1, 4);
        let one_hidden = NetworkSpec::builder(Shape::Flat(2))
            .dense(w1.clone(), b1.clone())
            .unwrap()
            .activation(Activation::Tanh)
            .dense(w3.clone(), b3.clone())
            .unwrap()
            .build()
            .unwrap();
        let e = one_hidden.exactness();
        assert!(e.unmixed_exact());
        assert!(e.mixed_exact(0));

        let two_hidden = NetworkSpec::builder(Shape::Flat(2))
            .dense(w1, b1)
            .unwrap()
            .activation(Activation::Tanh)
            .dense(w2.clone(), b2.clone())
            .unwrap()
            .activation(Activation::Tanh)
            .dense(w3.clone(), b3.clone())
            .unwrap()
            .build()
            .unwrap();
        let e = two_hidden.exactness();
        assert_eq!(e.inexact_modules, vec![0]);
        assert!(!e.mixed_exact(0));

        let relu = NetworkSpec::builder(Shape::Flat(4))
            .dense(w2.clone(), b2.clone())
            .unwrap()
            .activation(Activation::Relu)
            .dense(w2, b2)
            .unwrap()
            .activation(Activation::Relu)
            .dense(w3, b3)
            .unwrap()
            .build()
            .unwrap();
        assert!(relu.exactness().unmixed_exact());
        assert!(relu.is_piecewise_linear());
    }

    #[test]
    fn input_validation() {
        let net = NetworkSpec::builder(Shape::Flat(2))
            .dense(m(&[&[1.0, 1.0]]), vec![0.0])
            .unwrap()
            .build()
            .unwrap();
        assert!(matches!(net.forward(&[1.0]), Err(Error::Dimension(_))));
        assert!(matches!(
            net.forward(&[1.0, f64::NAN]),
            Err(Error::NonFinite(_))
        ));
    }
}
