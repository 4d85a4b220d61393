//! Taylor polynomials assembled from derivative stacks.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::chain::{multi_index_offset, DerivStack, MixedDerivStack};
use crate::error::{Error, Result};
use crate::network::NetworkSpec;

/// Sorted sparse multi-index: `(coordinate, multiplicity)` pairs with
/// strictly increasing 0-based coordinates.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct MultiIndex {
    pairs: Vec<(usize, u32)>,
}

impl MultiIndex {
    pub fn constant() -> Self {
        Self::default()
    }

    pub fn new(mut pairs: Vec<(usize, u32)>) -> Result<Self> {
        pairs.sort_by_key(|&(c, _)| c);
        if pairs.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::shape(format!(
                "multi-index {pairs:?} repeats a coordinate"
            )));
        }
        if pairs.iter().any(|&(_, m)| m == 0) {
            return Err(Error::shape(format!(
                "multi-index {pairs:?} has a zero multiplicity"
            )));
        }
        Ok(Self { pairs })
    }

    /// From a coordinate tuple such as `(0, 0, 3)`, in any order.
    pub fn from_coords(coords: &[usize]) -> Self {
        let mut pairs: Vec<(usize, u32)> = Vec::new();
        let mut sorted = coords.to_vec();
        sorted.sort_unstable();
        for c in sorted {
            match pairs.last_mut() {
                Some((last, m)) if *last == c => *m += 1,
                _ => pairs.push((c, 1)),
            }
        }
        Self { pairs }
    }

    /// `x_coord^power`.
    pub fn power(coord: usize, power: u32) -> Self {
        if power == 0 {
            return Self::constant();
        }
        Self {
            pairs: vec![(coord, power)],
        }
    }

    pub fn pairs(&self) -> &[(usize, u32)] {
        &self.pairs
    }

    pub fn degree(&self) -> usize {
        self.pairs.iter().map(|&(_, m)| m as usize).sum()
    }

    pub fn max_coord(&self) -> Option<usize> {
        self.pairs.last().map(|&(c, _)| c)
    }

    /// Expanded sorted coordinate tuple.
    pub fn coords(&self) -> impl Iterator<Item = usize> + '_ {
        self.pairs
            .iter()
            .flat_map(|&(c, m)| std::iter::repeat_n(c, m as usize))
    }

    /// `∏ α_j!`.
    pub fn factorial(&self) -> f64 {
        self.pairs
            .iter()
            .map(|&(_, m)| (1..=m).map(f64::from).product::<f64>())
            .product()
    }

    /// `∏ (x_j − x0_j)^{α_j}`.
    pub fn monomial(&self, delta: &[f64]) -> f64 {
        self.pairs
            .iter()
            .map(|&(c, m)| delta[c].powi(m as i32))
            .product()
    }
}

/// Graded lexicographic: lower degree first, then the sorted coordinate
/// tuples compared lexicographically.
impl Ord for MultiIndex {
    fn cmp(&self, other: &Self) -> Ordering {
        self.degree()
            .cmp(&other.degree())
            .then_with(|| self.coords().cmp(other.coords()))
    }
}

impl PartialOrd for MultiIndex {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.pairs.is_empty() {
            return f.write_str("1");
        }
        for (i, &(c, m)) in self.pairs.iter().enumerate() {
            if i > 0 {
                f.write_str("*")?;
            }
            write!(f, "x{c}")?;
            if m > 1 {
                write!(f, "^{m}")?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// All mixed partials up to the order.
    Mixed,
    /// Pure powers of single coordinates only.
    Unmixed,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Mixed => "mixed",
            Mode::Unmixed => "unmixed",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mixed" => Ok(Mode::Mixed),
            "unmixed" => Ok(Mode::Unmixed),
            other => Err(Error::Unsupported(format!(
                "unknown expansion mode `{other}` (expected mixed or unmixed)"
            ))),
        }
    }
}

/// `f0 + Σ_α c_α ∏ (x_j − x0_j)^{α_j}` with `c_α = ∂^α f / ∏ α_j!`.
///
/// The constant term is stored under the empty multi-index and always
/// equals `f0`.
#[derive(Debug, Clone, PartialEq)]
pub struct TaylorPolynomial {
    x0: Vec<f64>,
    f0: f64,
    order: usize,
    mode: Mode,
    terms: BTreeMap<MultiIndex, f64>,
}

impl TaylorPolynomial {
    /// Validates and builds a polynomial from explicit terms. A missing
    /// constant term is filled in with `f0`.
    pub fn from_terms(
        x0: Vec<f64>,
        f0: f64,
        order: usize,
        mode: Mode,
        terms: impl IntoIterator<Item = (MultiIndex, f64)>,
    ) -> Result<Self> {
        if x0.iter().any(|v| !v.is_finite()) || !f0.is_finite() {
            return Err(Error::NonFinite("polynomial center or value".into()));
        }
        let mut map = BTreeMap::new();
        for (alpha, c) in terms {
            if !c.is_finite() {
                return Err(Error::NonFinite(format!("coefficient of {alpha}")));
            }
            if alpha.degree() > order {
                return Err(Error::TermOrder {
                    term: alpha.to_string(),
                    degree: alpha.degree(),
                    order,
                });
            }
            if alpha.max_coord().is_some_and(|c| c >= x0.len()) {
                return Err(Error::Dimension(format!(
                    "term {alpha} refers past the {} input coordinates",
                    x0.len()
                )));
            }
            if mode == Mode::Unmixed && alpha.pairs().len() > 1 {
                return Err(Error::shape(format!(
                    "unmixed polynomial holds mixed term {alpha}"
                )));
            }
            if alpha.degree() == 0 && c != f0 {
                return Err(Error::shape(format!(
                    "constant term {c} differs from f0 = {f0}"
                )));
            }
            if map.insert(alpha.clone(), c).is_some() {
                return Err(Error::DuplicateTerm(alpha.to_string()));
            }
        }
        map.entry(MultiIndex::constant()).or_insert(f0);
        Ok(Self {
            x0,
            f0,
            order,
            mode,
            terms: map,
        })
    }

    pub fn from_unmixed(x0: &[f64], f0: f64, stack: &DerivStack) -> Result<Self> {
        if stack.width() != x0.len() {
            return Err(Error::Dimension(format!(
                "stack width {} does not match input of {}",
                stack.width(),
                x0.len()
            )));
        }
        let mut terms = Vec::with_capacity(stack.order() * x0.len());
        let mut fact = 1.0;
        for k in 1..=stack.order() {
            fact *= k as f64;
            for (i, &d) in stack.block(k).iter().enumerate() {
                terms.push((MultiIndex::power(i, k as u32), d / fact));
            }
        }
        Self::from_terms(x0.to_vec(), f0, stack.order(), Mode::Unmixed, terms)
    }

    pub fn from_mixed(x0: &[f64], f0: f64, stack: &MixedDerivStack) -> Result<Self> {
        let p = stack.input_dim();
        if p != x0.len() {
            return Err(Error::Dimension(format!(
                "mixed stack has {p} inputs, x0 has {}",
                x0.len()
            )));
        }
        let mut terms = Vec::new();
        for k in 1..=stack.order() {
            let block = stack.block(k);
            for_each_sorted_tuple(p, k, |idx| {
                let alpha = MultiIndex::from_coords(idx);
                let c = block[multi_index_offset(idx, p)] / alpha.factorial();
                terms.push((alpha, c));
            });
        }
        Self::from_terms(x0.to_vec(), f0, stack.order(), Mode::Mixed, terms)
    }

    pub fn x0(&self) -> &[f64] {
        &self.x0
    }

    pub fn f0(&self) -> f64 {
        self.f0
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn input_dim(&self) -> usize {
        self.x0.len()
    }

    /// Terms in graded-lex order, constant first.
    pub fn terms(&self) -> impl Iterator<Item = (&MultiIndex, f64)> {
        self.terms.iter().map(|(a, &c)| (a, c))
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn coefficient(&self, alpha: &MultiIndex) -> f64 {
        self.terms.get(alpha).copied().unwrap_or(0.0)
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.x0.len() {
            return Err(Error::Dimension(format!(
                "point has {} values, polynomial has {} inputs",
                x.len(),
                self.x0.len()
            )));
        }
        let delta: Vec<f64> = x.iter().zip(&self.x0).map(|(a, b)| a - b).collect();
        let mut sum = self.f0;
        for (alpha, &c) in self.terms.iter().skip(1) {
            sum += c * alpha.monomial(&delta);
        }
        Ok(sum)
    }

    pub fn evaluate_batch(&self, xs: &[Vec<f64>]) -> Result<Vec<f64>> {
        xs.par_iter().map(|x| self.evaluate(x)).collect()
    }

    /// The same polynomial re-expanded around `center`.
    pub fn recentered(&self, center: &[f64]) -> Result<Self> {
        if center.len() != self.x0.len() {
            return Err(Error::Dimension(format!(
                "center has {} values, polynomial has {} inputs",
                center.len(),
                self.x0.len()
            )));
        }
        let d: Vec<f64> = center.iter().zip(&self.x0).map(|(a, b)| a - b).collect();
        let mut acc: BTreeMap<MultiIndex, f64> = BTreeMap::new();
        for (alpha, &c) in &self.terms {
            // (y_j + d_j)^a = Σ_b C(a, b) d_j^{a−b} y_j^b over every sub-index
            let mut partial: Vec<(Vec<(usize, u32)>, f64)> = vec![(Vec::new(), c)];
            for &(coord, a) in alpha.pairs() {
                let mut next = Vec::with_capacity(partial.len() * (a as usize + 1));
                for (pairs, w) in &partial {
                    let mut binom = 1.0;
                    for b in 0..=a {
                        if b > 0 {
                            binom = binom * f64::from(a - b + 1) / f64::from(b);
                        }
                        let mut pairs = pairs.clone();
                        if b > 0 {
                            pairs.push((coord, b));
                        }
                        next.push((pairs, w * binom * d[coord].powi((a - b) as i32)));
                    }
                }
                partial = next;
            }
            for (pairs, w) in partial {
                *acc.entry(MultiIndex { pairs }).or_insert(0.0) += w;
            }
        }
        let f0 = acc.get(&MultiIndex::constant()).copied().unwrap_or(0.0);
        Self::from_terms(center.to_vec(), f0, self.order, self.mode, acc)
    }
}

/// Calls `f` with every non-decreasing `k`-tuple over `0..p`.
pub fn for_each_sorted_tuple(p: usize, k: usize, mut f: impl FnMut(&[usize])) {
    if p == 0 {
        return;
    }
    let mut idx = vec![0usize; k];
    loop {
        f(&idx);
        let Some(pos) = (0..k).rev().find(|&j| idx[j] + 1 < p) else {
            return;
        };
        let v = idx[pos] + 1;
        for slot in &mut idx[pos..] {
            *slot = v;
        }
    }
}

/// Expands a single-output network at `x0` to order `n`.
pub fn expand(net: &NetworkSpec, x0: &[f64], n: usize, mode: Mode) -> Result<TaylorPolynomial> {
    match mode {
        Mode::Unmixed => {
            let (f0, stack) = net.unmixed_stack(x0, n)?;
            TaylorPolynomial::from_unmixed(x0, f0, &stack)
        }
        Mode::Mixed => {
            let (f0, stack) = net.mixed_stack(x0, n)?;
            TaylorPolynomial::from_mixed(x0, f0, &stack)
        }
    }
}

/// Assembles a polynomial from whichever stack the mode needs.
pub fn assemble(
    x0: &[f64],
    f0: f64,
    n: usize,
    mode: Mode,
    unmixed: Option<&DerivStack>,
    mixed: Option<&MixedDerivStack>,
) -> Result<TaylorPolynomial> {
    let check = |order: usize| {
        if order != n {
            Err(Error::OrderMismatch {
                expected: n,
                actual: order,
            })
        } else {
            Ok(())
        }
    };
    match (mode, unmixed, mixed) {
        (Mode::Mixed, _, Some(m)) => {
            check(m.order())?;
            TaylorPolynomial::from_mixed(x0, f0, m)
        }
        (Mode::Mixed, _, None) => Err(Error::MixedUnsupported(
            "mixed assembly needs a mixed derivative stack".into(),
        )),
        (Mode::Unmixed, Some(u), _) => {
            check(u.order())?;
            TaylorPolynomial::from_unmixed(x0, f0, u)
        }
        (Mode::Unmixed, None, Some(m)) => {
            check(m.order())?;
            TaylorPolynomial::from_unmixed(x0, f0, &m.diagonal())
        }
        (Mode::Unmixed, None, None) => Err(Error::MissingTrace("no derivative stack given".into())),
    }
}
