//! Elementwise activations and their derivatives of every order.
//!
//! Sigmoid and tanh derivatives are polynomials in the activation value
//! itself; the integer coefficients live in lower-triangular tables built by
//! row recurrences (`SigmoidCoeffTable`, `TanhCoeffTable`).

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Sine,
    Relu,
    Sigmoid,
    Tanh,
    /// `x²`, a polynomial activation for exact-recovery checks.
    Square,
}

impl Activation {
    pub const ALL: [Activation; 5] = [
        Activation::Sine,
        Activation::Relu,
        Activation::Sigmoid,
        Activation::Tanh,
        Activation::Square,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Activation::Sine => "sine",
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
            Activation::Tanh => "tanh",
            Activation::Square => "square",
        }
    }

    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Sine => x.sin(),
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
            Activation::Square => x * x,
        }
    }

    /// True when all derivatives above the first vanish almost everywhere.
    pub fn is_piecewise_linear(self) -> bool {
        matches!(self, Activation::Relu)
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sine" | "sin" => Ok(Activation::Sine),
            "relu" => Ok(Activation::Relu),
            "sigmoid" => Ok(Activation::Sigmoid),
            "tanh" => Ok(Activation::Tanh),
            "square" => Ok(Activation::Square),
            other => Err(Error::UnknownActivation(other.to_string())),
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Lower-triangular `B ∈ Z^{(n+1)×(n+1)}` with
/// `σ^{(k)} = Σ_{i=1}^{k+1} B[k+1][i] · σⁱ` (1-based).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SigmoidCoeffTable {
    order: usize,
    rows: Vec<Vec<i128>>,
}

impl SigmoidCoeffTable {
    /// `B[1][1] = 1`, `B[i][j] = j·B[i-1][j] − (j−1)·B[i-1][j-1]`.
    pub fn new(n: usize) -> Result<Self> {
        let overflow = || Error::Overflow {
            table: "sigmoid coefficients",
            order: n,
        };
        let size = n + 1;
        let mut rows = vec![vec![0i128; size + 1]; size + 1];
        rows[1][1] = 1;
        for i in 2..=size {
            for j in 1..=i {
                let a = (j as i128)
                    .checked_mul(rows[i - 1][j])
                    .ok_or_else(overflow)?;
                let b = (j as i128 - 1)
                    .checked_mul(rows[i - 1][j - 1])
                    .ok_or_else(overflow)?;
                rows[i][j] = a.checked_sub(b).ok_or_else(overflow)?;
            }
        }
        Ok(Self { order: n, rows })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Row `i` (1-based), entries `1..=i`.
    pub fn row(&self, i: usize) -> &[i128] {
        &self.rows[i][1..=i]
    }

    /// `σ^{(k)}` given `s = σ(x)`, for `0 ≤ k ≤ n`.
    pub fn derivative(&self, k: usize, s: f64) -> f64 {
        let mut acc = 0.0;
        let mut pow = s;
        for &c in self.row(k + 1) {
            acc += c as f64 * pow;
            pow *= s;
        }
        acc
    }
}

/// Lower-triangular `C ∈ Z^{(n+2)×(n+2)}` with
/// `tanh^{(k)} = Σ_{i=1}^{k+2} C[k+2][i] · tanh^{i−1}` (1-based).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TanhCoeffTable {
    order: usize,
    rows: Vec<Vec<i128>>,
}

impl TanhCoeffTable {
    /// `C[1][1] = 1`, `C[2][2] = 1`,
    /// `C[i][j] = j·C[i-1][j+1] − (j−2)·C[i-1][j-1]` for `i ≥ 3`.
    pub fn new(n: usize) -> Result<Self> {
        let overflow = || Error::Overflow {
            table: "tanh coefficients",
            order: n,
        };
        let size = n + 2;
        // one spare column so C[i-1][j+1] is always addressable
        let mut rows = vec![vec![0i128; size + 2]; size + 1];
        rows[1][1] = 1;
        rows[2][2] = 1;
        for i in 3..=size {
            for j in 1..=i {
                let a = (j as i128)
                    .checked_mul(rows[i - 1][j + 1])
                    .ok_or_else(overflow)?;
                let b = (j as i128 - 2)
                    .checked_mul(rows[i - 1][j - 1])
                    .ok_or_else(overflow)?;
                rows[i][j] = a.checked_sub(b).ok_or_else(overflow)?;
            }
        }
        Ok(Self { order: n, rows })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Row `i` (1-based), entries `1..=i`.
    pub fn row(&self, i: usize) -> &[i128] {
        &self.rows[i][1..=i]
    }

    /// `tanh^{(k)}` given `t = tanh(x)`, for `0 ≤ k ≤ n`.
    pub fn derivative(&self, k: usize, t: f64) -> f64 {
        let mut acc = 0.0;
        let mut pow = 1.0;
        for &c in self.row(k + 2) {
            acc += c as f64 * pow;
            pow *= t;
        }
        acc
    }
}

/// Coefficient tables for one expansion order, shared by every activation
/// module of a network.
#[derive(Debug, Clone)]
pub struct ActivationTables {
    order: usize,
    sigmoid: SigmoidCoeffTable,
    tanh: TanhCoeffTable,
}

impl ActivationTables {
    pub fn new(n: usize) -> Result<Self> {
        Ok(Self {
            order: n,
            sigmoid: SigmoidCoeffTable::new(n)?,
            tanh: TanhCoeffTable::new(n)?,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// `[σ'(x), σ''(x), …, σ^{(n)}(x)]`.
    pub fn derivs(&self, act: Activation, x: f64) -> Vec<f64> {
        let n = self.order;
        match act {
            Activation::Sine => {
                let (s, c) = x.sin_cos();
                (1..=n)
                    .map(|k| match k % 4 {
                        1 => c,
                        2 => -s,
                        3 => -c,
                        _ => s,
                    })
                    .collect()
            }
            Activation::Relu => {
                let mut d = vec![0.0; n];
                // right-closed convention: the derivative at exactly 0 is 0
                if x > 0.0 {
                    d[0] = 1.0;
                }
                d
            }
            Activation::Sigmoid => {
                let s = sigmoid(x);
                (1..=n).map(|k| self.sigmoid.derivative(k, s)).collect()
            }
            Activation::Tanh => {
                let t = x.tanh();
                (1..=n).map(|k| self.tanh.derivative(k, t)).collect()
            }
            Activation::Square => {
                let mut d = vec![0.0; n];
                d[0] = 2.0 * x;
                if n >= 2 {
                    d[1] = 2.0;
                }
                d
            }
        }
    }
}

/// `[σ'(x), …, σ^{(n)}(x)]` for one activation.
pub fn activation_derivs(act: Activation, x: f64, n: usize) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::InvalidOrder(
            0,
            "activation derivatives need n >= 1".into(),
        ));
    }
    Ok(ActivationTables::new(n)?.derivs(act, x))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_rows() {
        let b = SigmoidCoeffTable::new(3).unwrap();
        assert_eq!(b.row(1), &[1]);
        assert_eq!(b.row(2), &[1, -1]);
        assert_eq!(b.row(3), &[1, -3, 2]);
        assert_eq!(b.row(4), &[1, -7, 12, -6]);
    }

    #[test]
    fn tanh_rows() {
        let c = TanhCoeffTable::new(2).unwrap();
        assert_eq!(c.row(1), &[1]);
        assert_eq!(c.row(2), &[0, 1]);
        assert_eq!(c.row(3), &[1, 0, -1]);
        assert_eq!(c.row(4), &[0, -2, 0, 2]);
    }

    #[test]
    fn row_recurrences_hold() {
        let b = SigmoidCoeffTable::new(12).unwrap();
        for i in 2..=13 {
            for j in 1..=i {
                let prev = |jj: usize| {
                    if jj >= 1 && jj < i {
                        b.row(i - 1)[jj - 1]
                    } else {
                        0
                    }
                };
                assert_eq!(
                    b.row(i)[j - 1],
                    j as i128 * prev(j) - (j as i128 - 1) * prev(j - 1)
                );
            }
        }
        let c = TanhCoeffTable::new(12).unwrap();
        for i in 3..=14 {
            for j in 1..=i {
                let prev = |jj: usize| {
                    if jj >= 1 && jj < i {
                        c.row(i - 1)[jj - 1]
                    } else {
                        0
                    }
                };
                assert_eq!(
                    c.row(i)[j - 1],
                    j as i128 * prev(j + 1) - (j as i128 - 2) * prev(j - 1)
                );
            }
        }
    }

    #[test]
    fn sigmoid_at_zero() {
        let d = activation_derivs(Activation::Sigmoid, 0.0, 3).unwrap();
        assert_eq!(d, vec![0.25, 0.0, -0.125]);
    }

    #[test]
    fn tanh_at_zero() {
        let d = activation_derivs(Activation::Tanh, 0.0, 3).unwrap();
        assert_eq!(d, vec![1.0, 0.0, -2.0]);
    }

    #[test]
    fn sine_cycle_at_zero() {
        let d = activation_derivs(Activation::Sine, 0.0, 4).unwrap();
        assert_eq!(d, vec![1.0, -0.0, -1.0, 0.0]);
    }

    #[test]
    fn relu_and_square() {
        assert_eq!(
            activation_derivs(Activation::Relu, 0.5, 3).unwrap(),
            vec![1.0, 0.0, 0.0]
        );
        assert_eq!(
            activation_derivs(Activation::Relu, -0.5, 3).unwrap(),
            vec![0.0; 3]
        );
        assert_eq!(
            activation_derivs(Activation::Relu, 0.0, 2).unwrap(),
            vec![0.0; 2]
        );
        assert_eq!(
            activation_derivs(Activation::Square, 1.5, 4).unwrap(),
            vec![3.0, 2.0, 0.0, 0.0]
        );
        assert_eq!(
            activation_derivs(Activation::Square, 1.5, 1).unwrap(),
            vec![3.0]
        );
    }

    fn central(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
        let d = |h: f64| (f(x + h) - f(x - h)) / (2.0 * h);
        (4.0 * d(h / 2.0) - d(h)) / 3.0
    }

    #[test]
    fn tables_match_finite_differences() {
        let tables = ActivationTables::new(6).unwrap();
        for act in [Activation::Sigmoid, Activation::Tanh] {
            for p in 0..20 {
                let x = -3.0 + 6.0 * p as f64 / 19.0;
                let d = tables.derivs(act, x);
                for k in 1..=6 {
                    let lower = |t: f64| {
                        if k == 1 {
                            act.apply(t)
                        } else {
                            tables.derivs(act, t)[k - 2]
                        }
                    };
                    let fd = central(lower, x, 1e-3);
                    let rel = (fd - d[k - 1]).abs() / fd.abs().max(d[k - 1].abs()).max(1e-30);
                    assert!(rel <= 1e-5, "{act} k={k} x={x}: {fd} vs {}", d[k - 1]);
                }
            }
        }
    }

    #[test]
    fn names_round_trip() {
        for act in Activation::ALL {
            assert_eq!(act.name().parse::<Activation>().unwrap(), act);
        }
        assert!(matches!(
            "gelu".parse::<Activation>(),
            Err(Error::UnknownActivation(_))
        ));
    }

    #[test]
    fn large_order_overflow_is_reported() {
        assert!(SigmoidCoeffTable::new(20).is_ok());
        assert!(matches!(
            SigmoidCoeffTable::new(40),
            Err(Error::Overflow { .. })
        ));
    }
}
