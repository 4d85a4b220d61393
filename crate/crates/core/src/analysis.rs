//! Error envelopes for 1-D networks, convergence ratios and heat maps.

use rayon::prelude::*;

use crate::chain::DerivStack;
use crate::error::{Error, Result};
use crate::layers::Shape;
use crate::network::NetworkSpec;
use crate::taylor::{expand, Mode, MultiIndex};

pub const MIN_GRID: usize = 101;
pub const DEFAULT_GRID: usize = 2001;

/// One grid point of a [`BoundsReport`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundsSample {
    pub x: f64,
    pub f: f64,
    pub poly: f64,
    pub f1: f64,
    pub f2: f64,
    pub f_u: f64,
    pub f_d: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundsReport {
    pub interval: (f64, f64),
    pub x0: f64,
    pub order: usize,
    /// Extremes of `f^{(n)}` over the grid and `x0`.
    pub dmax: f64,
    pub dmin: f64,
    /// Largest grid deviation between network and order-`n` polynomial.
    pub e1: f64,
    /// `(dmax − dmin)/n! · max(|a − x0|, |b − x0|)ⁿ`.
    pub e2: f64,
    pub samples: Vec<BoundsSample>,
}

impl BoundsReport {
    pub fn e1_within_e2(&self) -> bool {
        self.e1 <= self.e2
    }
}

/// Upper and lower envelopes of a 1-D network on `[a, b]`: the order
/// `n − 1` polynomial plus an `n`-th term driven by the extreme values of
/// `f^{(n)}` on a uniform grid.
pub fn bounds_1d(
    net: &NetworkSpec,
    x0: f64,
    n: usize,
    interval: (f64, f64),
    grid_size: usize,
) -> Result<BoundsReport> {
    if net.input_len() != 1 {
        return Err(Error::Dimension(format!(
            "bounds need a 1-D input, network has {}",
            net.input_len()
        )));
    }
    let (a, b) = interval;
    if !(a < x0 && x0 < b) {
        return Err(Error::Dimension(format!(
            "x0 = {x0} must lie strictly inside ({a}, {b})"
        )));
    }
    if grid_size < MIN_GRID {
        return Err(Error::Dimension(format!(
            "grid needs at least {MIN_GRID} points"
        )));
    }
    let poly = expand(net, &[x0], n, Mode::Unmixed)?;
    let grid: Vec<f64> = (0..grid_size)
        .map(|i| a + (b - a) * i as f64 / (grid_size - 1) as f64)
        .collect();
    let nth = |x: f64| -> Result<f64> { Ok(net.unmixed_stack(&[x], n)?.1.block(n)[0]) };
    let mut dmax = nth(x0)?;
    let mut dmin = dmax;
    for d in grid
        .par_iter()
        .map(|&x| nth(x))
        .collect::<Result<Vec<_>>>()?
    {
        dmax = dmax.max(d);
        dmin = dmin.min(d);
    }
    let n_fact: f64 = (1..=n).map(|k| k as f64).product();
    let cn = poly.coefficient(&MultiIndex::power(0, n as u32));
    let mut samples = Vec::with_capacity(grid_size);
    let mut e1 = 0.0f64;
    for &x in &grid {
        let f = net.forward_scalar(&[x])?;
        let p = poly.evaluate(&[x])?;
        let h = (x - x0).powi(n as i32);
        let lower_part = p - cn * h;
        let f1 = lower_part + dmax / n_fact * h;
        let f2 = lower_part + dmin / n_fact * h;
        e1 = e1.max((f - p).abs());
        samples.push(BoundsSample {
            x,
            f,
            poly: p,
            f1,
            f2,
            f_u: f1.max(f2),
            f_d: f1.min(f2),
        });
    }
    let r = (a - x0).abs().max((b - x0).abs());
    let e2 = (dmax - dmin) / n_fact * r.powi(n as i32);
    Ok(BoundsReport {
        interval,
        x0,
        order: n,
        dmax,
        dmin,
        e1,
        e2,
        samples,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    /// `ratios[k-1] = max_i |∂ᵏf/∂x_iᵏ| / max_i |∂f/∂x_i|`.
    pub ratios: Vec<f64>,
    /// Ratios strictly increase over the last three orders.
    pub divergent: bool,
}

pub fn convergence_ratios(stack: &DerivStack) -> Result<ConvergenceReport> {
    let max_abs = |k: usize| stack.block(k).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let first = max_abs(1);
    if first == 0.0 {
        return Err(Error::UndefinedRatio);
    }
    let ratios: Vec<f64> = (1..=stack.order()).map(|k| max_abs(k) / first).collect();
    let divergent = ratios.len() >= 3 && {
        let t = &ratios[ratios.len() - 3..];
        t[0] < t[1] && t[1] < t[2]
    };
    Ok(ConvergenceReport { ratios, divergent })
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeatMap {
    pub shape: Shape,
    pub order: usize,
    pub dx: Vec<f64>,
    /// `Σ_k per_order[k-1]`.
    pub values: Vec<f64>,
    /// `block_k / k! ⊙ Δxᵏ` for each order.
    pub per_order: Vec<Vec<f64>>,
}

/// Truncated-Taylor estimate of the output change when each input element
/// moves by its own `dx`.
pub fn heatmap(stack: &DerivStack, shape: Shape, dx: &[f64]) -> Result<HeatMap> {
    if stack.width() != shape.len() || dx.len() != shape.len() {
        return Err(Error::shape(format!(
            "stack width {} and dx length {} must both equal the input size {}",
            stack.width(),
            dx.len(),
            shape.len()
        )));
    }
    let mut per_order = Vec::with_capacity(stack.order());
    let mut fact = 1.0;
    for k in 1..=stack.order() {
        fact *= k as f64;
        per_order.push(
            stack
                .block(k)
                .iter()
                .zip(dx)
                .map(|(d, x)| d / fact * x.powi(k as i32))
                .collect::<Vec<f64>>(),
        );
    }
    let mut values = per_order[0].clone();
    for term in &per_order[1..] {
        for (v, t) in values.iter_mut().zip(term) {
            *v += t;
        }
    }
    Ok(HeatMap {
        shape,
        order: stack.order(),
        dx: dx.to_vec(),
        values,
        per_order,
    })
}

/// Heat map of a single-output network at `x0` with uniform `dx`.
pub fn network_heatmap(net: &NetworkSpec, x0: &[f64], n: usize, dx: f64) -> Result<HeatMap> {
    let (_, stack) = net.unmixed_stack(x0, n)?;
    heatmap(&stack, net.input_shape(), &vec![dx; x0.len()])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activation::Activation;
    use crate::tensor::Matrix;

    fn scalar(w: f64) -> Matrix {
        Matrix::new(1, 1, vec![w]).unwrap()
    }

    #[test]
    fn linear_network_bounds_collapse() {
        let net = NetworkSpec::builder(Shape::Flat(1))
            .dense(scalar(1.5), vec![-0.5])
            .unwrap()
            .build()
            .unwrap();
        for n in 2..=4 {
            let r = bounds_1d(&net, 0.0, n, (-1.0, 1.0), 101).unwrap();
            assert_eq!((r.dmax, r.dmin, r.e2), (0.0, 0.0, 0.0));
            for s in &r.samples {
                assert_eq!(s.f1, s.f2);
                assert!((s.f1 - (1.5 * s.x - 0.5)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn constant_network_bounds() {
        let net = NetworkSpec::builder(Shape::Flat(1))
            .dense(scalar(0.0), vec![2.0])
            .unwrap()
            .build()
            .unwrap();
        let r = bounds_1d(&net, 0.5, 1, (0.0, 1.0), 101).unwrap();
        assert_eq!(r.e1, 0.0);
        assert_eq!(r.e2, 0.0);
        assert!(r.samples.iter().all(|s| s.f_u == 2.0 && s.f_d == 2.0));
    }

    #[test]
    fn bounds_preconditions() {
        let net = NetworkSpec::builder(Shape::Flat(2))
            .dense(Matrix::new(1, 2, vec![1.0, 1.0]).unwrap(), vec![0.0])
            .unwrap()
            .build()
            .unwrap();
        assert!(bounds_1d(&net, 0.0, 2, (-1.0, 1.0), 101).is_err());
        let one = NetworkSpec::builder(Shape::Flat(1))
            .dense(scalar(1.0), vec![0.0])
            .unwrap()
            .build()
            .unwrap();
        assert!(bounds_1d(&one, 1.0, 2, (-1.0, 1.0), 101).is_err());
        assert!(bounds_1d(&one, 0.0, 2, (-1.0, 1.0), 100).is_err());
    }

    #[test]
    fn sine_unit_envelope_contains_network() {
        let net = NetworkSpec::builder(Shape::Flat(1))
            .dense(scalar(1.0), vec![0.0])
            .unwrap()
            .activation(Activation::Sine)
            .dense(scalar(1.0), vec![0.0])
            .unwrap()
            .build()
            .unwrap();
        for n in 1..=8 {
            let r = bounds_1d(&net, 0.0, n, (-2.0, 2.0), 401).unwrap();
            assert!(r.e1 <= r.e2, "n={n}: {} > {}", r.e1, r.e2);
            for s in &r.samples {
                assert!(s.f_d <= s.f_u);
                assert!(
                    s.f_d - 1e-12 <= s.f && s.f <= s.f_u + 1e-12,
                    "n={n} x={}",
                    s.x
                );
            }
        }
    }

    #[test]
    fn ratios() {
        let lin = DerivStack::new(vec![vec![2.0, -4.0], vec![0.0, 0.0], vec![0.0, 0.0]]).unwrap();
        let r = convergence_ratios(&lin).unwrap();
        assert_eq!(r.ratios, vec![1.0, 0.0, 0.0]);
        assert!(!r.divergent);
        let grow = DerivStack::new(vec![vec![1.0], vec![2.0], vec![-5.0], vec![9.0]]).unwrap();
        let r = convergence_ratios(&grow).unwrap();
        assert_eq!(r.ratios, vec![1.0, 2.0, 5.0, 9.0]);
        assert!(r.divergent);
        let flat = DerivStack::new(vec![vec![0.0], vec![1.0]]).unwrap();
        assert!(matches!(
            convergence_ratios(&flat),
            Err(Error::UndefinedRatio)
        ));
    }

    #[test]
    fn heatmap_basics() {
        let stack = DerivStack::new(vec![vec![1.0, -2.0], vec![4.0, 6.0]]).unwrap();
        let zero = heatmap(&stack, Shape::Flat(2), &[0.0, 0.0]).unwrap();
        assert!(zero.values.iter().all(|&v| v == 0.0));
        let h = heatmap(&stack, Shape::Flat(2), &[1.0, 0.5]).unwrap();
        assert_eq!(h.per_order, vec![vec![1.0, -1.0], vec![2.0, 0.75]]);
        assert_eq!(h.values, vec![3.0, -0.25]);
        let first = DerivStack::new(vec![vec![0.1, 0.2, 0.3]]).unwrap();
        let g = heatmap(&first, Shape::Flat(3), &[1.0; 3]).unwrap();
        assert_eq!(g.values, first.block(1));
        assert!(heatmap(&stack, Shape::Flat(3), &[1.0; 3]).is_err());
    }
}
