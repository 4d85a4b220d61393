//! Reference derivatives computed without the backward stack machinery:
//! truncated power series pushed forward along a ray, finite differences,
//! and closed forms for single affine-activation units.

use std::ops::{Add, Mul, Sub};

use rayon::prelude::*;

use crate::activation::{sigmoid, Activation};
use crate::error::{Error, Result};
use crate::layers::ModuleSpec;
use crate::network::NetworkSpec;

/// Truncated power series `c_0 + c_1 t + … + c_n tⁿ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Jet1D {
    coeffs: Vec<f64>,
}

impl Jet1D {
    pub fn new(coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.is_empty() {
            return Err(Error::InvalidOrder(0, "a jet needs at least c_0".into()));
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("jet coefficient".into()));
        }
        Ok(Self { coeffs })
    }

    pub fn constant(c: f64, n: usize) -> Self {
        let mut coeffs = vec![0.0; n + 1];
        coeffs[0] = c;
        Self { coeffs }
    }

    /// `c + slope·t`.
    pub fn line(c: f64, slope: f64, n: usize) -> Self {
        let mut j = Self::constant(c, n);
        if n >= 1 {
            j.coeffs[1] = slope;
        }
        j
    }

    pub fn order(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn value(&self) -> f64 {
        self.coeffs[0]
    }

    /// `k!·c_k` for `k = 1..=n`.
    pub fn derivatives(&self) -> Vec<f64> {
        let mut fact = 1.0;
        (1..=self.order())
            .map(|k| {
                fact *= k as f64;
                fact * self.coeffs[k]
            })
            .collect()
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            coeffs: self.coeffs.iter().map(|c| c * s).collect(),
        }
    }

    fn zip(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        assert_eq!(self.order(), other.order(), "jet orders differ");
        Self {
            coeffs: self
                .coeffs
                .iter()
                .zip(&other.coeffs)
                .map(|(a, b)| f(*a, *b))
                .collect(),
        }
    }

    /// `h(g(t))` where `self` holds the series of `h` around `g(0)`.
    pub fn compose(&self, inner: &Jet1D) -> Jet1D {
        let n = inner.order();
        let mut delta = inner.clone();
        delta.coeffs[0] = 0.0;
        let mut acc = Jet1D::constant(*self.coeffs.last().expect("non-empty"), n);
        for &c in self.coeffs.iter().rev().skip(1) {
            acc = &(&acc * &delta) + &Jet1D::constant(c, n);
        }
        acc
    }

    /// `(sin u, cos u)` from the coupled recurrences of `y' = z u'`, `z' = -y u'`.
    pub fn sin_cos(&self) -> (Jet1D, Jet1D) {
        let n = self.order();
        let u = &self.coeffs;
        let mut s = vec![0.0; n + 1];
        let mut c = vec![0.0; n + 1];
        s[0] = u[0].sin();
        c[0] = u[0].cos();
        for k in 1..=n {
            let mut ds = 0.0;
            let mut dc = 0.0;
            for j in 1..=k {
                ds += j as f64 * u[j] * c[k - j];
                dc -= j as f64 * u[j] * s[k - j];
            }
            s[k] = ds / k as f64;
            c[k] = dc / k as f64;
        }
        (Jet1D { coeffs: s }, Jet1D { coeffs: c })
    }

    /// Solves `y' = w(y)·u'` coefficient by coefficient, where `w(y)` is a
    /// polynomial in `y` given through its series `w_of`.
    fn ode(&self, y0: f64, w_of: impl Fn(&[f64], usize) -> f64) -> Jet1D {
        let n = self.order();
        let u = &self.coeffs;
        let mut y = vec![0.0; n + 1];
        let mut w = vec![0.0; n + 1];
        y[0] = y0;
        w[0] = w_of(&y, 0);
        for k in 1..=n {
            let mut acc = 0.0;
            for j in 1..=k {
                acc += j as f64 * u[j] * w[k - j];
            }
            y[k] = acc / k as f64;
            w[k] = w_of(&y, k);
        }
        Jet1D { coeffs: y }
    }

    pub fn sigmoid(&self) -> Jet1D {
        // w = y − y²
        self.ode(sigmoid(self.coeffs[0]), |y, k| y[k] - cauchy(y, y, k))
    }

    pub fn tanh(&self) -> Jet1D {
        // w = 1 − y²
        self.ode(self.coeffs[0].tanh(), |y, k| {
            let sq = cauchy(y, y, k);
            if k == 0 {
                1.0 - sq
            } else {
                -sq
            }
        })
    }

    pub fn square(&self) -> Jet1D {
        self * self
    }

    /// ReLU frozen to the side of zero the series starts on.
    pub fn relu(&self) -> Result<Jet1D> {
        let n = self.order();
        if self.coeffs[0] > 0.0 {
            Ok(self.clone())
        } else if self.coeffs[0] < 0.0 || self.coeffs.iter().all(|&c| c == 0.0) {
            Ok(Jet1D::constant(0.0, n))
        } else {
            Err(Error::RegionBoundary(format!(
                "relu input is exactly 0 with non-zero series {:?}",
                &self.coeffs[1..]
            )))
        }
    }

    pub fn activate(&self, a: Activation) -> Result<Jet1D> {
        Ok(match a {
            Activation::Sine => self.sin_cos().0,
            Activation::Relu => self.relu()?,
            Activation::Sigmoid => self.sigmoid(),
            Activation::Tanh => self.tanh(),
            Activation::Square => self.square(),
        })
    }
}

fn cauchy(a: &[f64], b: &[f64], k: usize) -> f64 {
    (0..=k).map(|j| a[j] * b[k - j]).sum()
}

impl Add for &Jet1D {
    type Output = Jet1D;
    fn add(self, rhs: &Jet1D) -> Jet1D {
        self.zip(rhs, |a, b| a + b)
    }
}

impl Sub for &Jet1D {
    type Output = Jet1D;
    fn sub(self, rhs: &Jet1D) -> Jet1D {
        self.zip(rhs, |a, b| a - b)
    }
}

impl Mul for &Jet1D {
    type Output = Jet1D;
    fn mul(self, rhs: &Jet1D) -> Jet1D {
        assert_eq!(self.order(), rhs.order(), "jet orders differ");
        Jet1D {
            coeffs: (0..=self.order())
                .map(|k| cauchy(&self.coeffs, &rhs.coeffs, k))
                .collect(),
        }
    }
}

/// Pushes `x(t) = x0 + t·direction` through the network as truncated series
/// of order `n` and returns the output series.
pub fn jet_forward(net: &NetworkSpec, x0: &[f64], direction: &[f64], n: usize) -> Result<Jet1D> {
    if direction.len() != x0.len() {
        return Err(Error::Dimension(format!(
            "direction has {} values, input has {}",
            direction.len(),
            x0.len()
        )));
    }
    if direction.iter().all(|&d| d == 0.0) {
        return Err(Error::Dimension("direction must be non-zero".into()));
    }
    if net.output_shape().len() != 1 {
        return Err(Error::Unsupported(
            "jet oracle needs a single-output network".into(),
        ));
    }
    net.forward(x0)?;
    // coefficient-major: series[k][i] is the t^k coefficient of element i
    let mut series: Vec<Vec<f64>> = vec![x0.to_vec(), direction.to_vec()];
    series.resize(n + 1, vec![0.0; x0.len()]);
    series.truncate(n + 1);
    for (i, module) in net.modules().iter().enumerate() {
        let shape = net.shapes()[i];
        series = step(module, &series, shape).map_err(|e| Error::module(i, e))?;
    }
    Jet1D::new(series.into_iter().map(|c| c[0]).collect())
}

fn element_jets(series: &[Vec<f64>]) -> Vec<Jet1D> {
    (0..series[0].len())
        .map(|i| Jet1D {
            coeffs: series.iter().map(|c| c[i]).collect(),
        })
        .collect()
}

fn from_element_jets(jets: &[Jet1D], n: usize) -> Vec<Vec<f64>> {
    (0..=n)
        .map(|k| jets.iter().map(|j| j.coeffs[k]).collect())
        .collect()
}

fn step(
    module: &ModuleSpec,
    series: &[Vec<f64>],
    shape: crate::layers::Shape,
) -> Result<Vec<Vec<f64>>> {
    let n = series.len() - 1;
    match module {
        ModuleSpec::Activation(a) => {
            let jets = element_jets(series)
                .iter()
                .map(|j| j.activate(*a))
                .collect::<Result<Vec<_>>>()?;
            Ok(from_element_jets(&jets, n))
        }
        ModuleSpec::MaxPool(pool) => {
            let jets = element_jets(series);
            let mut out = Vec::new();
            for win in pool.windows(shape)? {
                let best = win.iter().copied().fold(win[0], |b, i| {
                    if jets[i].value() > jets[b].value() {
                        i
                    } else {
                        b
                    }
                });
                let tied: Vec<usize> = win
                    .iter()
                    .copied()
                    .filter(|&i| jets[i].value() == jets[best].value())
                    .collect();
                if tied.iter().any(|&i| jets[i] != jets[best]) {
                    return Err(Error::RegionBoundary(format!(
                        "max-pool window tie between inputs {tied:?} with different series"
                    )));
                }
                out.push(jets[best].clone());
            }
            Ok(from_element_jets(&out, n))
        }
        linear => {
            let mut out = Vec::with_capacity(n + 1);
            out.push(linear.forward(&series[0], shape)?.0);
            for c in &series[1..] {
                out.push(
                    linear
                        .linear_part(c, shape)?
                        .expect("non-activation, non-max-pool modules are linear"),
                );
            }
            Ok(out)
        }
    }
}

/// `k`-th directional derivatives of the network along `direction`, `k = 1..=n`.
pub fn jet_derivatives(
    net: &NetworkSpec,
    x0: &[f64],
    direction: &[f64],
    n: usize,
) -> Result<Vec<f64>> {
    Ok(jet_forward(net, x0, direction, n)?.derivatives())
}

/// Unmixed derivatives along every input coordinate: `out[k-1][i]`.
pub fn jet_unmixed(net: &NetworkSpec, x0: &[f64], n: usize) -> Result<Vec<Vec<f64>>> {
    let per_coord = (0..x0.len())
        .into_par_iter()
        .map(|i| {
            let mut e = vec![0.0; x0.len()];
            e[i] = 1.0;
            jet_derivatives(net, x0, &e, n)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((0..n)
        .map(|k| per_coord.iter().map(|d| d[k]).collect())
        .collect())
}

pub const MAX_FD_ORDER: usize = 4;

/// Central difference of order `k ≤ 4` along `direction` with step `h`,
/// improved by one Richardson step.
pub fn finite_diff_directional(
    net: &NetworkSpec,
    x0: &[f64],
    direction: &[f64],
    k: usize,
    h: f64,
) -> Result<f64> {
    if k == 0 || k > MAX_FD_ORDER {
        return Err(Error::InvalidOrder(
            k,
            format!("finite differences support orders 1..={MAX_FD_ORDER}"),
        ));
    }
    let f = |s: f64| -> Result<f64> {
        let x: Vec<f64> = x0.iter().zip(direction).map(|(a, d)| a + s * d).collect();
        net.forward_scalar(&x)
    };
    let stencil = |h: f64| -> Result<f64> {
        Ok(match k {
            1 => (f(h)? - f(-h)?) / (2.0 * h),
            2 => (f(h)? - 2.0 * f(0.0)? + f(-h)?) / (h * h),
            3 => (f(2.0 * h)? - 2.0 * f(h)? + 2.0 * f(-h)? - f(-2.0 * h)?) / (2.0 * h.powi(3)),
            _ => {
                (f(2.0 * h)? - 4.0 * f(h)? + 6.0 * f(0.0)? - 4.0 * f(-h)? + f(-2.0 * h)?)
                    / h.powi(4)
            }
        })
    };
    let coarse = stencil(h)?;
    let fine = stencil(h / 2.0)?;
    Ok((4.0 * fine - coarse) / 3.0)
}

/// Default step for a `k`-th difference around a coordinate of size `scale`.
pub fn default_step(k: usize, scale: f64) -> f64 {
    f64::EPSILON.powf(1.0 / (k as f64 + 4.0)) * scale.abs().max(1.0)
}

/// Bound on the rounding error of [`finite_diff`] at order `k` where the
/// network output has magnitude about `f_scale` and the coordinate about
/// `x_scale`.
pub fn finite_diff_noise(k: usize, f_scale: f64, x_scale: f64) -> f64 {
    let h = default_step(k, x_scale);
    2.0 * f64::EPSILON * f_scale.abs() * (4.0 / h).powi(k as i32)
}

/// `∂ᵏf/∂x_iᵏ` by finite differences.
pub fn finite_diff(net: &NetworkSpec, x0: &[f64], i: usize, k: usize) -> Result<f64> {
    if i >= x0.len() {
        return Err(Error::Dimension(format!(
            "coordinate {i} outside input of {}",
            x0.len()
        )));
    }
    let mut e = vec![0.0; x0.len()];
    e[i] = 1.0;
    finite_diff_directional(net, x0, &e, k, default_step(k, x0[i]))
}

/// Exact derivatives `f^{(1)}..f^{(n)}` at `x0` of `act(w·x + b)`.
/// `name` is one of `sin_affine`, `sigmoid_affine`, `tanh_affine`;
/// `params` is `[w, b]`.
pub fn closed_form_reference(name: &str, params: &[f64], x0: f64, n: usize) -> Result<Vec<f64>> {
    let &[w, b] = params else {
        return Err(Error::Dimension(format!(
            "closed forms take [w, b], got {} parameters",
            params.len()
        )));
    };
    let u = w * x0 + b;
    let inner: Vec<f64> = match name {
        "sin_affine" => (1..=n)
            .map(|k| (u + k as f64 * std::f64::consts::FRAC_PI_2).sin())
            .collect(),
        "sigmoid_affine" => (1..=n).map(|k| sigmoid_derivative_stirling(k, u)).collect(),
        "tanh_affine" => (1..=n)
            .map(|k| 2f64.powi(k as i32 + 1) * sigmoid_derivative_stirling(k, 2.0 * u))
            .collect(),
        other => {
            return Err(Error::Unsupported(format!(
                "no closed form named `{other}`"
            )))
        }
    };
    Ok(inner
        .into_iter()
        .enumerate()
        .map(|(k, d)| w.powi(k as i32 + 1) * d)
        .collect())
}

/// `σ^{(k)}(u) = Σ_{j=1}^{k+1} (−1)^{j−1} (j−1)! S(k+1, j) σ(u)^j` with
/// Stirling numbers of the second kind.
fn sigmoid_derivative_stirling(k: usize, u: f64) -> f64 {
    let m = k + 1;
    let mut s = vec![vec![0.0f64; m + 1]; m + 1];
    s[0][0] = 1.0;
    for i in 1..=m {
        for j in 1..=i {
            s[i][j] = j as f64 * s[i - 1][j] + s[i - 1][j - 1];
        }
    }
    let sig = sigmoid(u);
    let mut fact = 1.0;
    let mut total = 0.0;
    for (j, stirling) in s[m].iter().enumerate().skip(1) {
        if j > 1 {
            fact *= (j - 1) as f64;
        }
        let sign = if j % 2 == 1 { 1.0 } else { -1.0 };
        total += sign * fact * stirling * sig.powi(j as i32);
    }
    total
}

/// `f(x0 + dx·e_i) − f(x0)` for every input coordinate `i`.
pub fn perturbation_map(net: &NetworkSpec, x0: &[f64], dx: f64) -> Result<Vec<f64>> {
    let base = net.forward_scalar(x0)?;
    (0..x0.len())
        .into_par_iter()
        .map(|i| {
            let mut x = x0.to_vec();
            x[i] += dx;
            Ok(net.forward_scalar(&x)? - base)
        })
        .collect()
}

/// `|a − b| / max(|a|, |b|, 1e-30)`.
pub fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-30)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::Shape;
    use crate::tensor::Matrix;
    use proptest::prelude::*;

    fn scalar_chain(acts: &[Activation], w: f64, b: f64) -> NetworkSpec {
        let mut builder = NetworkSpec::builder(Shape::Flat(1));
        for &a in acts {
            builder = builder
                .dense(Matrix::new(1, 1, vec![w]).unwrap(), vec![b])
                .unwrap()
                .activation(a);
        }
        builder
            .dense(Matrix::new(1, 1, vec![1.0]).unwrap(), vec![0.0])
            .unwrap()
            .build()
            .unwrap()
    }

    #[test]
    fn sin_jet_of_line() {
        // sin(2t): 2t − (8/6)t³ + (32/120)t⁵
        let j = Jet1D::line(0.0, 2.0, 5).sin_cos().0;
        let expect = [0.0, 2.0, 0.0, -8.0 / 6.0, 0.0, 32.0 / 120.0];
        for (a, b) in j.coeffs().iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(j.derivatives()[..3], [2.0, 0.0, -8.0]);
    }

    #[test]
    fn sigmoid_and_tanh_jets_at_zero() {
        let s = Jet1D::line(0.0, 1.0, 3).sigmoid();
        assert_eq!(s.coeffs(), &[0.5, 0.25, 0.0, -1.0 / 48.0]);
        let t = Jet1D::line(0.0, 1.0, 5).tanh();
        let expect = [0.0, 1.0, 0.0, -1.0 / 3.0, 0.0, 2.0 / 15.0];
        for (a, b) in t.coeffs().iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn relu_regions() {
        assert_eq!(
            Jet1D::line(1.0, 2.0, 2).relu().unwrap(),
            Jet1D::line(1.0, 2.0, 2)
        );
        assert_eq!(
            Jet1D::line(-1.0, 2.0, 2).relu().unwrap(),
            Jet1D::constant(0.0, 2)
        );
        assert_eq!(
            Jet1D::constant(0.0, 2).relu().unwrap(),
            Jet1D::constant(0.0, 2)
        );
        assert!(matches!(
            Jet1D::line(0.0, 1.0, 2).relu(),
            Err(Error::RegionBoundary(_))
        ));
    }

    #[test]
    fn closed_forms() {
        let d = closed_form_reference("sin_affine", &[2.0, 0.0], 0.0, 5).unwrap();
        let expect = [2.0, 0.0, -8.0, 0.0, 32.0];
        for (a, b) in d.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
        for name in ["sin_affine", "sigmoid_affine", "tanh_affine"] {
            let d = closed_form_reference(name, &[0.0, 0.4], 0.3, 4).unwrap();
            assert!(d.iter().all(|&v| v == 0.0));
        }
        assert!(closed_form_reference("cosh_affine", &[1.0, 0.0], 0.0, 2).is_err());
        assert!(closed_form_reference("sin_affine", &[1.0], 0.0, 2).is_err());
    }

    #[test]
    fn sigmoid_closed_form_matches_jet() {
        let net = scalar_chain(&[Activation::Sigmoid], 3.0, 1.0);
        let jet = jet_derivatives(&net, &[0.2], &[1.0], 6).unwrap();
        let cf = closed_form_reference("sigmoid_affine", &[3.0, 1.0], 0.2, 6).unwrap();
        for (a, b) in jet.iter().zip(&cf) {
            assert!(rel_error(*a, *b) <= 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn tanh_closed_form_matches_jet() {
        let net = scalar_chain(&[Activation::Tanh], -1.5, 0.3);
        let jet = jet_derivatives(&net, &[0.4], &[1.0], 8).unwrap();
        let cf = closed_form_reference("tanh_affine", &[-1.5, 0.3], 0.4, 8).unwrap();
        for (a, b) in jet.iter().zip(&cf) {
            assert!(rel_error(*a, *b) <= 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn identity_and_affine_jets() {
        let id = NetworkSpec::builder(Shape::Flat(2))
            .dense(Matrix::new(1, 2, vec![1.0, 0.0]).unwrap(), vec![0.0])
            .unwrap()
            .build()
            .unwrap();
        let j = jet_forward(&id, &[0.7, 0.1], &[0.25, 3.0], 3).unwrap();
        assert_eq!(j.coeffs(), &[0.7, 0.25, 0.0, 0.0]);
    }

    #[test]
    fn finite_differences() {
        let lin = NetworkSpec::builder(Shape::Flat(1))
            .dense(Matrix::new(1, 1, vec![3.0]).unwrap(), vec![1.0])
            .unwrap()
            .dense(Matrix::new(1, 1, vec![-2.0]).unwrap(), vec![0.5])
            .unwrap()
            .build()
            .unwrap();
        assert!((finite_diff(&lin, &[0.4], 0, 1).unwrap() + 6.0).abs() <= 1e-9);
        let sig = scalar_chain(&[Activation::Sigmoid], 1.0, 0.0);
        assert!(finite_diff(&sig, &[0.0], 0, 2).unwrap().abs() <= 1e-6);
        let sine = scalar_chain(&[Activation::Sine], 1.3, 0.2);
        for k in 1..=4 {
            let fd = finite_diff(&sine, &[0.5], 0, k).unwrap();
            let jet = jet_derivatives(&sine, &[0.5], &[1.0], k).unwrap()[k - 1];
            assert!(rel_error(fd, jet) <= 1e-6, "order {k}: {fd} vs {jet}");
        }
        assert!(matches!(
            finite_diff(&sine, &[0.5], 0, 5),
            Err(Error::InvalidOrder(5, _))
        ));
    }

    #[test]
    fn perturbation_of_linear_net() {
        let net = NetworkSpec::builder(Shape::Flat(3))
            .dense(Matrix::new(1, 3, vec![1.0, -2.0, 0.5]).unwrap(), vec![0.0])
            .unwrap()
            .build()
            .unwrap();
        let p = perturbation_map(&net, &[0.0; 3], 0.5).unwrap();
        assert_eq!(p, vec![0.5, -1.0, 0.25]);
    }

    fn series(n: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-1.0f64..1.0, n + 1)
    }

    proptest! {
        #[test]
        fn composition_is_associative(h in series(6), g in series(6), f in series(6)) {
            let (h, g, f) = (Jet1D::new(h).unwrap(), Jet1D::new(g).unwrap(), Jet1D::new(f).unwrap());
            let left = h.compose(&g).compose(&f);
            let right = h.compose(&g.compose(&f));
            for (a, b) in left.coeffs().iter().zip(right.coeffs()) {
                prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
            }
        }

        #[test]
        fn sine_series_matches_composition(u in series(8)) {
            // series of sin around u0, composed with u
            let u = Jet1D::new(u).unwrap();
            let u0 = u.value();
            let mut fact = 1.0;
            let outer: Vec<f64> = (0..=8)
                .map(|k| {
                    if k > 0 {
                        fact *= k as f64;
                    }
                    (u0 + k as f64 * std::f64::consts::FRAC_PI_2).sin() / fact
                })
                .collect();
            let via_compose = Jet1D::new(outer).unwrap().compose(&u);
            for (a, b) in via_compose.coeffs().iter().zip(u.sin_cos().0.coeffs()) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }
    }
}
