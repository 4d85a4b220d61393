//! Symbolic Faà di Bruno coefficients.
//!
//! For a composition `y(z(x))`,
//! `∂ⁱy/∂xⁱ = Σ_j M[i][j] · ∂ʲy/∂zʲ`, where every `M[i][j]` is an integer
//! combination of monomials in the derivatives `z', z'', …`. The table stores
//! those monomials once per order; numeric modules only evaluate them.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Highest order the tables support. `30!` still fits in a `u128`.
pub const MAX_ORDER: usize = 30;

/// One term `coeff · ∏_l (z^{(l)})^{exponents[l-1]}`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Monomial {
    pub coeff: u128,
    /// Multiplicity of each derivative order, index `l - 1` for `z^{(l)}`.
    pub exponents: Vec<u32>,
}

impl Monomial {
    /// Number of factors, i.e. the column `j` the monomial belongs to.
    pub fn parts(&self) -> u32 {
        self.exponents.iter().sum()
    }

    /// Total derivative order carried, i.e. the row `i`.
    pub fn weight(&self) -> u32 {
        self.exponents
            .iter()
            .enumerate()
            .map(|(l, &m)| (l as u32 + 1) * m)
            .sum()
    }

    /// Evaluates the monomial given `derivs[l-1] = z^{(l)}`.
    pub fn eval(&self, derivs: &[f64]) -> f64 {
        let mut acc = self.coeff as f64;
        for (l, &m) in self.exponents.iter().enumerate() {
            if m > 0 {
                acc *= derivs[l].powi(m as i32);
            }
        }
        acc
    }
}

/// Lower-triangular table of Faà di Bruno monomials up to a fixed order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FaaDiBrunoCoeffs {
    order: usize,
    // rows[i-1][j-1], sorted by exponent vector
    rows: Vec<Vec<Vec<Monomial>>>,
}

fn check_order(n: usize) -> Result<()> {
    if n == 0 || n > MAX_ORDER {
        return Err(Error::InvalidOrder(
            n,
            format!("Faà di Bruno tables support orders 1..={MAX_ORDER}"),
        ));
    }
    Ok(())
}

fn factorial(n: usize, order: usize) -> Result<u128> {
    (1..=n as u128).try_fold(1u128, |acc, v| {
        acc.checked_mul(v).ok_or(Error::Overflow {
            table: "Faà di Bruno",
            order,
        })
    })
}

/// Calls `visit` with the multiplicities of every partition of `total` into
/// exactly `parts` positive parts (largest part first).
fn for_each_partition(total: usize, parts: usize, visit: &mut dyn FnMut(&[u32])) {
    fn go(
        remaining: usize,
        parts_left: usize,
        max_part: usize,
        mult: &mut Vec<u32>,
        visit: &mut dyn FnMut(&[u32]),
    ) {
        if parts_left == 0 {
            if remaining == 0 {
                visit(mult);
            }
            return;
        }
        // each remaining part is at least 1 and at most max_part
        if remaining < parts_left || remaining > parts_left * max_part {
            return;
        }
        let hi = max_part.min(remaining - (parts_left - 1));
        for part in (1..=hi).rev() {
            mult[part - 1] += 1;
            go(remaining - part, parts_left - 1, part, mult, visit);
            mult[part - 1] -= 1;
        }
    }
    let mut mult = vec![0u32; total.max(1)];
    go(total, parts, total, &mut mult, visit);
}

impl FaaDiBrunoCoeffs {
    /// Builds the table from the partition closed form
    /// `i! / ∏_l (m_l! · (l!)^{m_l})`.
    pub fn new(n: usize) -> Result<Self> {
        check_order(n)?;
        let fact: Vec<u128> = (0..=n).map(|k| factorial(k, n)).collect::<Result<_>>()?;
        let mut rows = Vec::with_capacity(n);
        for i in 1..=n {
            let mut row = Vec::with_capacity(i);
            for j in 1..=i {
                let mut cell = Vec::new();
                let mut failed = false;
                for_each_partition(i, j, &mut |mult| {
                    let mut denom: u128 = 1;
                    for (l, &m) in mult.iter().enumerate() {
                        for _ in 0..m {
                            denom = match denom.checked_mul(fact[l + 1]) {
                                Some(d) => d,
                                None => {
                                    failed = true;
                                    return;
                                }
                            };
                        }
                        denom *= fact[m as usize];
                    }
                    let mut exponents = mult.to_vec();
                    exponents.resize(n, 0);
                    cell.push(Monomial {
                        coeff: fact[i] / denom,
                        exponents,
                    });
                });
                if failed {
                    return Err(Error::Overflow {
                        table: "Faà di Bruno",
                        order: n,
                    });
                }
                cell.sort();
                row.push(cell);
            }
            rows.push(row);
        }
        Ok(Self { order: n, rows })
    }

    /// Builds the table from the recurrence
    /// `M[i][j] = d/dx M[i-1][j] + z' · M[i-1][j-1]`, differentiating the
    /// monomials symbolically (`d/dx z^{(l)} = z^{(l+1)}`).
    pub fn from_recurrence(n: usize) -> Result<Self> {
        check_order(n)?;
        type Poly = BTreeMap<Vec<u32>, u128>;
        let overflow = || Error::Overflow {
            table: "Faà di Bruno",
            order: n,
        };
        let add = |p: &mut Poly, key: Vec<u32>, c: u128| -> Result<()> {
            let slot = p.entry(key).or_insert(0);
            *slot = slot.checked_add(c).ok_or_else(overflow)?;
            Ok(())
        };

        let mut z1 = vec![0u32; n];
        z1[0] = 1;
        let mut prev: Vec<Poly> = vec![Poly::from([(z1, 1u128)])];
        let mut rows = vec![Self::poly_row(&prev)];
        for i in 2..=n {
            let mut cur: Vec<Poly> = vec![Poly::new(); i];
            for (jdx, poly) in prev.iter().enumerate() {
                // derivative term stays in column j
                for (exps, &c) in poly {
                    for l in 0..n {
                        let m = exps[l];
                        if m == 0 {
                            continue;
                        }
                        if l + 1 >= n {
                            return Err(overflow());
                        }
                        let mut e = exps.clone();
                        e[l] -= 1;
                        e[l + 1] += 1;
                        let coeff = c.checked_mul(m as u128).ok_or_else(overflow)?;
                        add(&mut cur[jdx], e, coeff)?;
                    }
                    // z' times the entry shifts to column j + 1
                    let mut e = exps.clone();
                    e[0] += 1;
                    add(&mut cur[jdx + 1], e, c)?;
                }
            }
            rows.push(Self::poly_row(&cur));
            prev = cur;
        }
        Ok(Self { order: n, rows })
    }

    fn poly_row(polys: &[BTreeMap<Vec<u32>, u128>]) -> Vec<Vec<Monomial>> {
        polys
            .iter()
            .map(|p| {
                let mut cell: Vec<Monomial> = p
                    .iter()
                    .filter(|(_, &c)| c != 0)
                    .map(|(e, &c)| Monomial {
                        coeff: c,
                        exponents: e.clone(),
                    })
                    .collect();
                cell.sort();
                cell
            })
            .collect()
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Monomials of entry `(i, j)`, both 1-based. Empty when `j > i`.
    pub fn entries(&self, i: usize, j: usize) -> &[Monomial] {
        if j == 0 || j > i || i > self.order {
            return &[];
        }
        &self.rows[i - 1][j - 1]
    }

    /// Evaluates entry `(i, j)` for scalar derivatives `derivs[l-1] = z^{(l)}`.
    pub fn eval(&self, i: usize, j: usize, derivs: &[f64]) -> f64 {
        self.entries(i, j).iter().map(|m| m.eval(derivs)).sum()
    }
}

/// Convenience wrapper for [`FaaDiBrunoCoeffs::new`].
pub fn faa_di_bruno_table(n: usize) -> Result<FaaDiBrunoCoeffs> {
    FaaDiBrunoCoeffs::new(n)
}
