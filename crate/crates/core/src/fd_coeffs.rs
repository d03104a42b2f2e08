//! Exact finite-difference coefficient engine.
//!
//! Every stencil family here is generated twice: from a closed-form expression
//! (binomial / elementary-symmetric formulas) and from the moment-condition
//! linear system solved by exact Gaussian elimination over the rationals
//! ([`oracle_weights`]). The two routes are held equal — as rational equality,
//! not within a tolerance — by the test suite.
//!
//! A stencil for the p-th derivative with accuracy order q is a weight vector
//! `w` on offsets `a_i` (in units of the grid spacing h) satisfying the moment
//! conditions
//!
//! ```text
//! Σ_i w_i · a_i^m = p! · [m == p]     for m = 0, 1, ..., p + q - 1,
//! ```
//!
//! with the convention 0^0 = 1. Applying `(1/h^p) Σ_i w_i f(x + a_i h)` then
//! reproduces f^(p)(x) exactly on polynomials of degree ≤ p + q - 1.

use std::collections::HashMap;

use num::{One, Zero};

use crate::rational::{binomial, binomial_int, factorial, harmonic, powi, rat, to_f64, Rational};
use crate::{Error, Result};

/// A derivative-approximation rule: distinct rational node offsets (in units
/// of the grid spacing) with exact rational weights.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stencil {
    pub offsets: Vec<Rational>,
    pub weights: Vec<Rational>,
    /// Order p of the derivative being approximated.
    pub derivative_order: usize,
    /// Formal accuracy order q.
    pub accuracy_order: usize,
}

impl Stencil {
    /// Builds a stencil and certifies the moment conditions exactly.
    ///
    /// Panics if the offsets are not pairwise distinct or a moment condition
    /// fails: every constructor in this module is supposed to produce a
    /// certified rule, so a violation is an internal bug, not an input error.
    pub fn new(
        offsets: Vec<Rational>,
        weights: Vec<Rational>,
        derivative_order: usize,
        accuracy_order: usize,
    ) -> Self {
        assert_eq!(offsets.len(), weights.len());
        for i in 0..offsets.len() {
            for j in i + 1..offsets.len() {
                assert!(offsets[i] != offsets[j], "duplicate stencil offset");
            }
        }
        let s = Stencil {
            offsets,
            weights,
            derivative_order,
            accuracy_order,
        };
        let p = s.derivative_order;
        for m in 0..=(p + s.accuracy_order - 1) {
            let expect = if m == p {
                factorial(p)
            } else {
                Rational::zero()
            };
            assert!(
                s.moment(m) == expect,
                "moment condition m={} failed for p={} stencil",
                m,
                p
            );
        }
        s
    }

    /// `Σ_i w_i · offset_i^m` (with 0^0 = 1).
    pub fn moment(&self, m: usize) -> Rational {
        let mut acc = Rational::zero();
        for (off, w) in self.offsets.iter().zip(&self.weights) {
            acc += w * powi(off, m as i32);
        }
        acc
    }

    /// Offset/weight pairs sorted by offset, for order-insensitive comparison.
    pub fn sorted_pairs(&self) -> Vec<(Rational, Rational)> {
        let mut pairs: Vec<_> = self
            .offsets
            .iter()
            .cloned()
            .zip(self.weights.iter().cloned())
            .collect();
        pairs.sort_by(|a, b| a.0.cmp(&b.0));
        pairs
    }

    /// Applies the rule to sampled values: `(1/h^p) Σ_i w_i samples[offset_i]`.
    ///
    /// Weights are converted to floating point here, at application time.
    pub fn apply(&self, samples: &HashMap<Rational, f64>, h: f64) -> Result<f64> {
        let mut acc = 0.0;
        for (off, w) in self.offsets.iter().zip(&self.weights) {
            let v = samples
                .get(off)
                .ok_or_else(|| Error::invalid(format!("missing sample at offset {}", off)))?;
            acc += to_f64(w) * v;
        }
        Ok(acc / h.powi(self.derivative_order as i32))
    }

    /// Applies the rule to a function: `(1/h^p) Σ_i w_i f(x + offset_i h)`.
    pub fn apply_fn(&self, x: f64, h: f64, f: impl Fn(f64) -> f64) -> f64 {
        let mut acc = 0.0;
        for (off, w) in self.offsets.iter().zip(&self.weights) {
            acc += to_f64(w) * f(x + to_f64(off) * h);
        }
        acc / h.powi(self.derivative_order as i32)
    }

    /// Weights converted to `f64`, aligned with `offsets`.
    pub fn weights_f64(&self) -> Vec<f64> {
        self.weights.iter().map(to_f64).collect()
    }
}

/// Node layout for the general first/higher-derivative families.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NodeSpec {
    /// Arithmetic progression `start + step·(i-1)`, `i = 1..=count`,
    /// none of which may be zero.
    Arithmetic {
        start: Rational,
        step: Rational,
        count: usize,
    },
    /// Two-sided layout `{-left·step, ..., -step, step, ..., right·step}`
    /// (zero excluded).
    Offset {
        left: usize,
        right: usize,
        step: Rational,
    },
}

impl NodeSpec {
    pub fn arithmetic(start: Rational, step: Rational, count: usize) -> Self {
        NodeSpec::Arithmetic { start, step, count }
    }

    pub fn offset(left: usize, right: usize, step: Rational) -> Self {
        NodeSpec::Offset { left, right, step }
    }

    pub fn count(&self) -> usize {
        match self {
            NodeSpec::Arithmetic { count, .. } => *count,
            NodeSpec::Offset { left, right, .. } => left + right,
        }
    }

    /// The node list, in the layout's native order.
    pub fn nodes(&self) -> Vec<Rational> {
        match self {
            NodeSpec::Arithmetic { start, step, count } => {
                (0..*count).map(|i| start + step * rat(i as i64)).collect()
            }
            NodeSpec::Offset { left, right, step } => {
                let mut out = Vec::with_capacity(left + right);
                for i in (1..=*left).rev() {
                    out.push(step * rat(-(i as i64)));
                }
                for i in 1..=*right {
                    out.push(step * rat(i as i64));
                }
                out
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            NodeSpec::Arithmetic { step, count, .. } => {
                if *count == 0 {
                    return Err(Error::invalid("arithmetic node count must be positive"));
                }
                if step.is_zero() {
                    return Err(Error::invalid("arithmetic step must be nonzero"));
                }
                if self.nodes().iter().any(|a| a.is_zero()) {
                    return Err(Error::invalid("zero is not an admissible node"));
                }
                Ok(())
            }
            NodeSpec::Offset { left, right, step } => {
                if *left == 0 || *right == 0 {
                    return Err(Error::invalid("offset layout needs nodes on both sides"));
                }
                if step.is_zero() {
                    return Err(Error::invalid("offset step must be nonzero"));
                }
                Ok(())
            }
        }
    }
}

/// Matrix with exact rational entries, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RationalMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<Rational>,
}

impl RationalMatrix {
    pub fn new(rows: usize, cols: usize, entries: Vec<Rational>) -> Self {
        assert_eq!(entries.len(), rows * cols);
        RationalMatrix {
            rows,
            cols,
            entries,
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        RationalMatrix {
            rows,
            cols,
            entries: vec![Rational::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            *m.entry_mut(i, i) = Rational::one();
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Zero-based access.
    pub fn entry(&self, r: usize, c: usize) -> &Rational {
        &self.entries[r * self.cols + c]
    }

    pub fn entry_mut(&mut self, r: usize, c: usize) -> &mut Rational {
        &mut self.entries[r * self.cols + c]
    }

    /// Column `c` (zero-based) as a vector.
    pub fn column(&self, c: usize) -> Vec<Rational> {
        (0..self.rows).map(|r| self.entry(r, c).clone()).collect()
    }

    pub fn multiply(&self, other: &RationalMatrix) -> RationalMatrix {
        assert_eq!(self.cols, other.rows);
        let mut out = RationalMatrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.entry(i, k);
                if a.is_zero() {
                    continue;
                }
                for j in 0..other.cols {
                    let add = a * other.entry(k, j);
                    *out.entry_mut(i, j) += add;
                }
            }
        }
        out
    }
}

/// Sum over all k-element subsets of `set` of the product of their entries;
/// `σ_0 = 1` by convention.
pub fn elementary_symmetric(set: &[Rational], k: usize) -> Result<Rational> {
    if k > set.len() {
        return Err(Error::invalid(format!(
            "elementary symmetric degree {} exceeds set size {}",
            k,
            set.len()
        )));
    }
    // DP over elements: es[j] accumulates σ_j of the prefix scanned so far.
    let mut es = vec![Rational::zero(); k + 1];
    es[0] = Rational::one();
    for s in set {
        for j in (1..=k).rev() {
            let add = &es[j - 1] * s;
            es[j] += add;
        }
    }
    Ok(es.pop().expect("nonempty accumulator"))
}

/// Moment-condition oracle: solves `Σ_i w_i node_i^m = p!·[m == p]` for
/// `m = 1..=len(nodes)` by exact Gaussian elimination and returns the stencil
/// with the zero offset appended (weight `-Σ w_i`, enforcing the m = 0
/// moment). Independent of every closed form in this module.
pub fn oracle_weights(nodes: &[Rational], p: usize) -> Result<Stencil> {
    let n = nodes.len();
    if p == 0 || p > n {
        return Err(Error::invalid(format!(
            "derivative order {} out of range for {} nodes",
            p, n
        )));
    }
    // Augmented system, rows = moments m=1..n.
    let mut a = vec![vec![Rational::zero(); n + 1]; n];
    for (m, row) in a.iter_mut().enumerate() {
        for (i, node) in nodes.iter().enumerate() {
            row[i] = powi(node, (m + 1) as i32);
        }
        row[n] = if m + 1 == p {
            factorial(p)
        } else {
            Rational::zero()
        };
    }
    // Forward elimination with pivot search.
    for col in 0..n {
        let pivot_row = (col..n)
            .find(|&r| !a[r][col].is_zero())
            .ok_or_else(|| Error::invalid("singular moment system (duplicate or zero nodes)"))?;
        a.swap(col, pivot_row);
        let pivot: Vec<Rational> = a[col][col..=n].to_vec();
        for row in a.iter_mut().skip(col + 1) {
            if row[col].is_zero() {
                continue;
            }
            let factor = &row[col] / &pivot[0];
            for (entry, pv) in row[col..=n].iter_mut().zip(&pivot) {
                *entry -= &factor * pv;
            }
        }
    }
    // Back substitution.
    let mut w = vec![Rational::zero(); n];
    for r in (0..n).rev() {
        let mut acc = a[r][n].clone();
        for c in r + 1..n {
            acc -= &a[r][c] * &w[c];
        }
        w[r] = acc / &a[r][r];
    }
    let zero_weight = -w.iter().fold(Rational::zero(), |s, x| s + x);
    let mut offsets = nodes.to_vec();
    offsets.push(Rational::zero());
    let mut weights = w;
    weights.push(zero_weight);
    Ok(Stencil::new(offsets, weights, p, n - p + 1))
}

/// k-th order backward difference rule for the first derivative, on offsets
/// `(0, -1, ..., -k)`: weight `Σ_{i=1..k} 1/i` at the center and
/// `(-1)^i C(k,i) / i` at offset `-i`.
pub fn backward_weights(k: usize) -> Result<Stencil> {
    if k == 0 {
        return Err(Error::invalid("difference order must be positive"));
    }
    let mut offsets = Vec::with_capacity(k + 1);
    let mut weights = Vec::with_capacity(k + 1);
    offsets.push(Rational::zero());
    weights.push(harmonic(k));
    for i in 1..=k {
        offsets.push(rat(-(i as i64)));
        weights.push(sign(i as i64) * binomial_int(k, i) / rat(i as i64));
    }
    Ok(Stencil::new(offsets, weights, 1, k))
}

/// k-th order forward difference rule on offsets `(0, 1, ..., k)`; the
/// weights are the entrywise negations of the backward rule.
pub fn forward_weights(k: usize) -> Result<Stencil> {
    if k == 0 {
        return Err(Error::invalid("difference order must be positive"));
    }
    let mut offsets = Vec::with_capacity(k + 1);
    let mut weights = Vec::with_capacity(k + 1);
    offsets.push(Rational::zero());
    weights.push(-harmonic(k));
    for i in 1..=k {
        offsets.push(rat(i as i64));
        weights.push(sign(i as i64 - 1) * binomial_int(k, i) / rat(i as i64));
    }
    Ok(Stencil::new(offsets, weights, 1, k))
}

/// Generalized centered difference for the first derivative on offsets
/// `(-m, ..., -1, 0, 1, ..., n)`, accuracy order `n + m`. The off-center
/// weight at offset `i ≠ 0` is `(-1)^(i-1) C(n+m, i+m) / (i C(n+m, m))`.
pub fn centered_weights(m: usize, n: usize) -> Result<Stencil> {
    if m == 0 || n == 0 {
        return Err(Error::invalid("centered rule needs nodes on both sides"));
    }
    let denom = binomial_int(n + m, m);
    let mut offsets = Vec::with_capacity(n + m + 1);
    let mut weights = Vec::with_capacity(n + m + 1);
    let mut center = Rational::zero();
    for i in -(m as i64)..=(n as i64) {
        offsets.push(rat(i));
        if i == 0 {
            weights.push(Rational::zero()); // placeholder, fixed below
            continue;
        }
        let w = sign(i - 1) * binomial_int(n + m, (i + m as i64) as usize) / (rat(i) * &denom);
        center -= &w;
        weights.push(w);
    }
    weights[m] = center;
    Ok(Stencil::new(offsets, weights, 1, n + m))
}

/// First-derivative rule on an arithmetic progression of nodes
/// `a_i = start + step·(i-1)`, via the generalized-binomial closed form
/// `c_i = C(-a_1/step, i-1) · C(a_k/step, k-i) / a_i`. The zero offset
/// carries `-Σ c_i`; accuracy order equals the node count.
pub fn arithmetic_weights(spec: &NodeSpec) -> Result<Stencil> {
    let NodeSpec::Arithmetic { step, .. } = spec else {
        return Err(Error::invalid(
            "arithmetic_weights needs an arithmetic node spec",
        ));
    };
    spec.validate()?;
    let nodes = spec.nodes();
    let k = nodes.len();
    let r_first = -(&nodes[0] / step);
    let r_last = &nodes[k - 1] / step;
    let mut offsets = Vec::with_capacity(k + 1);
    let mut weights = Vec::with_capacity(k + 1);
    offsets.push(Rational::zero());
    weights.push(Rational::zero()); // placeholder
    let mut center = Rational::zero();
    for (i, node) in nodes.iter().enumerate() {
        let c = binomial(&r_first, i) * binomial(&r_last, k - 1 - i) / node;
        center -= &c;
        offsets.push(node.clone());
        weights.push(c);
    }
    weights[0] = center;
    Ok(Stencil::new(offsets, weights, 1, k))
}

/// Node-power matrix `A[i][j] = node_j^i` with powers `i = 1..=count`
/// (one-based in the math; storage is zero-based).
pub fn vandermonde_matrix(spec: &NodeSpec) -> Result<RationalMatrix> {
    spec.validate()?;
    let nodes = spec.nodes();
    let n = nodes.len();
    let mut m = RationalMatrix::zeros(n, n);
    for i in 1..=n {
        for (j, node) in nodes.iter().enumerate() {
            *m.entry_mut(i - 1, j) = powi(node, i as i32);
        }
    }
    Ok(m)
}

/// Closed-form inverse of [`vandermonde_matrix`], built entrywise from
/// elementary symmetric polynomials, then certified by checking
/// `A·B = B·A = I` exactly. A failed check is reported as
/// [`Error::ClosedFormMismatch`] rather than silently repaired; the
/// off-center layout with non-unit step is a known case (the printed
/// formula's step scaling only holds for step = 1).
pub fn closed_form_inverse(spec: &NodeSpec) -> Result<RationalMatrix> {
    spec.validate()?;
    let nodes = spec.nodes();
    let size = nodes.len();
    let mut b = RationalMatrix::zeros(size, size);
    match spec {
        NodeSpec::Arithmetic { step, .. } => {
            // B[i][j] = (-1)^(i+j) σ_{n-j}(T \ {a_i}) / (a_i d^(n-1) (i-1)! (n-i)!)
            let dpow = powi(step, size as i32 - 1);
            for i in 1..=size {
                let others = exclude(&nodes, i - 1);
                let denom = &nodes[i - 1] * &dpow * factorial(i - 1) * factorial(size - i);
                for j in 1..=size {
                    let s = elementary_symmetric(&others, size - j)?;
                    *b.entry_mut(i - 1, j - 1) = sign((i + j) as i64) * s / &denom;
                }
            }
        }
        NodeSpec::Offset { left, right, step } => {
            // Upper block, rows i = 1..=left (nodes (i-left-1)·step):
            //   (-1)^(i+j+1) σ_{s-j}(T \ node) / (step^j (i-1)! (s-i+1)!)
            // Lower block, rows t = 1..=right (nodes t·step):
            //   (-1)^(left+t+j) σ_{s-j}(T \ node) / (step^j (left+t)! (right-t)!)
            let (m_cnt, n_cnt) = (*left, *right);
            for i in 1..=size {
                let others = exclude(&nodes, i - 1);
                for j in 1..=size {
                    let s = elementary_symmetric(&others, size - j)?;
                    let val = if i <= m_cnt {
                        sign((i + j + 1) as i64) * s
                            / (powi(step, j as i32) * factorial(i - 1) * factorial(size - i + 1))
                    } else {
                        let t = i - m_cnt;
                        sign((m_cnt + t + j) as i64) * s
                            / (powi(step, j as i32) * factorial(m_cnt + t) * factorial(n_cnt - t))
                    };
                    *b.entry_mut(i - 1, j - 1) = val;
                }
            }
        }
    }
    let a = vandermonde_matrix(spec)?;
    let ident = RationalMatrix::identity(size);
    for (lhs, rhs) in [(&a, &b), (&b, &a)] {
        let prod = lhs.multiply(rhs);
        for r in 0..size {
            for c in 0..size {
                if prod.entry(r, c) != ident.entry(r, c) {
                    return Err(Error::ClosedFormMismatch {
                        row: r + 1,
                        col: c + 1,
                        got: Box::new(prod.entry(r, c).clone()),
                        expected: Box::new(ident.entry(r, c).clone()),
                    });
                }
            }
        }
    }
    Ok(b)
}

/// Stencil for the p-th derivative on the spec's nodes: column p of the
/// closed-form inverse scaled by p!, with the zero offset appended (weight
/// `-Σ w_i`). Accuracy order is `count - p + 1`.
///
/// The p! factor is what makes the moment conditions hold; the raw inverse
/// columns (see [`last_column_closed_form`]) miss it for p ≥ 2. For the
/// off-center layout the inverse is taken at unit step and the weights
/// rescaled by `step^(-p)`, which is exact because only the m = p moment is
/// nonzero.
pub fn derivative_weights(spec: &NodeSpec, p: usize) -> Result<Stencil> {
    spec.validate()?;
    let count = spec.count();
    if p == 0 || p > count {
        return Err(Error::invalid(format!(
            "derivative order {} out of range for {} nodes",
            p, count
        )));
    }
    let (inverse_spec, rescale) = match spec {
        NodeSpec::Arithmetic { .. } => (spec.clone(), Rational::one()),
        NodeSpec::Offset { left, right, step } => (
            NodeSpec::offset(*left, *right, Rational::one()),
            powi(step, -(p as i32)),
        ),
    };
    let b = closed_form_inverse(&inverse_spec)?;
    let pf = factorial(p);
    let mut weights: Vec<Rational> = b
        .column(p - 1)
        .into_iter()
        .map(|v| v * &pf * &rescale)
        .collect();
    let mut offsets = spec.nodes();
    let zero_weight = -weights.iter().fold(Rational::zero(), |s, x| s + x);
    offsets.push(Rational::zero());
    weights.push(zero_weight);
    Ok(Stencil::new(offsets, weights, p, count - p + 1))
}

/// Last column of the inverse node-power matrix, evaluated from its direct
/// closed form (not via [`closed_form_inverse`]). These are the raw inverse
/// entries: as a rule for the count-th derivative they are short by the
/// factor count! (compare [`derivative_weights`]); tests pin that gap.
pub fn last_column_closed_form(spec: &NodeSpec) -> Result<Vec<Rational>> {
    spec.validate()?;
    let nodes = spec.nodes();
    match spec {
        NodeSpec::Arithmetic { step, .. } => {
            let n = nodes.len();
            let dpow = powi(step, n as i32 - 1);
            Ok((1..=n)
                .map(|i| {
                    sign((n + i) as i64)
                        / (&nodes[i - 1] * &dpow * factorial(i - 1) * factorial(n - i))
                })
                .collect())
        }
        NodeSpec::Offset { left, right, step } => {
            let (m, n) = (*left, *right);
            let dpow = powi(step, (n + m) as i32);
            Ok(signed_positions(m, n)
                .map(|i| {
                    sign(n as i64 + i)
                        / (&dpow
                            * factorial((m as i64 + i) as usize)
                            * factorial((n as i64 - i) as usize))
                })
                .collect())
        }
    }
}

/// Second-last column of the inverse node-power matrix from its direct closed
/// form. For the arithmetic layout the numerator is the node-sum residue
/// `count/2·(a_1 + a_count) - a_i` and the formula is exact for any start and
/// step. The off-center printed form `(right² - left²)/2 - i` is exact only
/// for `left == right` and unit step; tests document the divergence.
pub fn second_last_column_closed_form(spec: &NodeSpec) -> Result<Vec<Rational>> {
    spec.validate()?;
    if spec.count() < 2 {
        return Err(Error::invalid(
            "second-last column needs at least two nodes",
        ));
    }
    let nodes = spec.nodes();
    match spec {
        NodeSpec::Arithmetic { step, .. } => {
            let n = nodes.len();
            let dpow = powi(step, n as i32 - 1);
            let halfsum = rat(n as i64) / rat(2) * (&nodes[0] + &nodes[n - 1]);
            Ok((1..=n)
                .map(|i| {
                    let numer = &halfsum - &nodes[i - 1];
                    sign((n + i - 1) as i64) * numer
                        / (&nodes[i - 1] * &dpow * factorial(i - 1) * factorial(n - i))
                })
                .collect())
        }
        NodeSpec::Offset { left, right, step } => {
            let (m, n) = (*left, *right);
            let dpow = powi(step, (n + m) as i32 - 2);
            let halfdiff = (rat(n as i64 * n as i64) - rat(m as i64 * m as i64)) / rat(2);
            Ok(signed_positions(m, n)
                .map(|i| {
                    let numer = &halfdiff - rat(i);
                    sign(n as i64 + i - 1) * numer
                        / (&dpow
                            * factorial((m as i64 + i) as usize)
                            * factorial((n as i64 - i) as usize))
                })
                .collect())
        }
    }
}

/// Free-function form of [`Stencil::apply`].
pub fn apply_stencil(s: &Stencil, samples: &HashMap<Rational, f64>, h: f64) -> Result<f64> {
    s.apply(samples, h)
}

fn sign(e: i64) -> Rational {
    if e.rem_euclid(2) == 0 {
        rat(1)
    } else {
        rat(-1)
    }
}

fn exclude(nodes: &[Rational], idx: usize) -> Vec<Rational> {
    nodes
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != idx)
        .map(|(_, v)| v.clone())
        .collect()
}

/// Signed positions `-m..=-1, 1..=n` of the off-center layout.
fn signed_positions(m: usize, n: usize) -> impl Iterator<Item = i64> {
    (-(m as i64)..=(n as i64)).filter(|&i| i != 0)
}

/// Combinatorial identity evaluators backing the coefficient formulas. Each
/// returns the left-hand sum exactly; tests assert the identity's value over
/// parameter boxes.
pub mod identities {
    use super::*;

    /// `Σ_{i=0..n} (i+m)^k C(n,i) (-1)^i`; zero for `1 ≤ k ≤ n-1`, `n ≥ 2`.
    pub fn alternating_power_sum(m: i64, n: usize, k: usize) -> Rational {
        let mut acc = Rational::zero();
        for i in 0..=n {
            acc += powi(&rat(i as i64 + m), k as i32) * binomial_int(n, i) * sign(i as i64);
        }
        acc
    }

    /// `Σ_{i=0..p} C(-r,i) C(r+p, p-i)`; equals one for every real r, p ≥ 1.
    pub fn unit_convolution_sum(r: &Rational, p: usize) -> Rational {
        let mut acc = Rational::zero();
        for i in 0..=p {
            acc += binomial(&-r.clone(), i) * binomial(&(r + rat(p as i64)), p - i);
        }
        acc
    }

    /// `Σ_{i=0..p} (r+i)^k C(-r,i) C(r+p, p-i)`; zero for `1 ≤ k ≤ p`.
    pub fn annihilated_power_sum(r: &Rational, p: usize, k: usize) -> Rational {
        let mut acc = Rational::zero();
        for i in 0..=p {
            acc += powi(&(r + rat(i as i64)), k as i32)
                * binomial(&-r.clone(), i)
                * binomial(&(r + rat(p as i64)), p - i);
        }
        acc
    }

    /// `Σ_{i=0..p} (r+i)^k C(-r+λ, i) C(r+p-λ, p-i)`; equals `λ^k` for
    /// `1 ≤ k ≤ p`.
    pub fn interpolated_power_sum(r: &Rational, p: usize, k: usize, lambda: &Rational) -> Rational {
        let mut acc = Rational::zero();
        for i in 0..=p {
            acc += powi(&(r + rat(i as i64)), k as i32)
                * binomial(&(lambda - r), i)
                * binomial(&(r + rat(p as i64) - lambda), p - i);
        }
        acc
    }
}

#[cfg(test)]
mod tests {
    use super::identities::*;
    use super::*;
    use crate::rational::ratio;
    use proptest::prelude::*;

    fn pairs(s: &Stencil) -> Vec<(Rational, Rational)> {
        s.sorted_pairs()
    }

    #[test]
    fn backward_small_orders() {
        let s = backward_weights(1).unwrap();
        assert_eq!(s.offsets, vec![rat(0), rat(-1)]);
        assert_eq!(s.weights, vec![rat(1), rat(-1)]);

        let s = backward_weights(2).unwrap();
        assert_eq!(s.weights, vec![ratio(3, 2), rat(-2), ratio(1, 2)]);

        let s = backward_weights(3).unwrap();
        assert_eq!(
            s.weights,
            vec![ratio(11, 6), rat(-3), ratio(3, 2), ratio(-1, 3)]
        );
        assert_eq!(s.moment(0), rat(0));
    }

    #[test]
    fn backward_rejects_zero_order() {
        assert!(backward_weights(0).is_err());
    }

    #[test]
    fn forward_small_orders_and_mirror() {
        let s = forward_weights(1).unwrap();
        assert_eq!(s.weights, vec![rat(-1), rat(1)]);
        let s = forward_weights(2).unwrap();
        assert_eq!(s.weights, vec![ratio(-3, 2), rat(2), ratio(-1, 2)]);

        // Mirroring offsets and negating weights maps forward onto backward.
        for k in 1..=13 {
            let f = forward_weights(k).unwrap();
            let b = backward_weights(k).unwrap();
            let mirrored: Vec<(Rational, Rational)> = f
                .offsets
                .iter()
                .zip(&f.weights)
                .map(|(o, w)| (-o.clone(), -w.clone()))
                .collect();
            let mut mirrored = mirrored;
            mirrored.sort_by(|a, b| a.0.cmp(&b.0));
            assert_eq!(mirrored, pairs(&b), "k = {}", k);
        }
    }

    #[test]
    fn centered_small_layouts() {
        let s = centered_weights(1, 1).unwrap();
        assert_eq!(s.offsets, vec![rat(-1), rat(0), rat(1)]);
        assert_eq!(s.weights, vec![ratio(-1, 2), rat(0), ratio(1, 2)]);

        let s = centered_weights(1, 2).unwrap();
        assert_eq!(s.offsets, vec![rat(-1), rat(0), rat(1), rat(2)]);
        assert_eq!(
            s.weights,
            vec![ratio(-1, 3), ratio(-1, 2), rat(1), ratio(-1, 6)]
        );
        assert_eq!(s.accuracy_order, 3);
    }

    #[test]
    fn centered_matches_oracle_up_to_four() {
        for m in 1..=4usize {
            for n in 1..=4usize {
                let s = centered_weights(m, n).unwrap();
                let nodes: Vec<Rational> = (-(m as i64)..=(n as i64))
                    .filter(|&i| i != 0)
                    .map(rat)
                    .collect();
                let o = oracle_weights(&nodes, 1).unwrap();
                assert_eq!(pairs(&s), pairs(&o), "m={} n={}", m, n);
            }
        }
    }

    #[test]
    fn arithmetic_reproduces_backward_and_forward() {
        // start -1, step -1 walks the backward nodes.
        let spec = NodeSpec::arithmetic(rat(-1), rat(-1), 2);
        let s = arithmetic_weights(&spec).unwrap();
        assert_eq!(pairs(&s), pairs(&backward_weights(2).unwrap()));

        // start 1, step 1 gives the one-sided second-order forward rule.
        let spec = NodeSpec::arithmetic(rat(1), rat(1), 2);
        let s = arithmetic_weights(&spec).unwrap();
        assert_eq!(pairs(&s), pairs(&forward_weights(2).unwrap()));
        assert_eq!(s.weights, vec![ratio(-3, 2), rat(2), ratio(-1, 2)]);
    }

    #[test]
    fn arithmetic_single_fractional_node() {
        // One node at 1/2: the single moment condition forces weight 2.
        let spec = NodeSpec::arithmetic(ratio(1, 2), rat(1), 1);
        let s = arithmetic_weights(&spec).unwrap();
        assert_eq!(s.offsets, vec![rat(0), ratio(1, 2)]);
        assert_eq!(s.weights, vec![rat(-2), rat(2)]);
    }

    #[test]
    fn arithmetic_rejects_zero_node() {
        let spec = NodeSpec::arithmetic(rat(-1), rat(1), 3); // hits zero at i=2
        assert!(arithmetic_weights(&spec).is_err());
    }

    #[test]
    fn elementary_symmetric_values() {
        let s = [rat(1), rat(2), rat(3)];
        assert_eq!(elementary_symmetric(&s, 0).unwrap(), rat(1));
        assert_eq!(elementary_symmetric(&s, 1).unwrap(), rat(6));
        assert_eq!(elementary_symmetric(&s, 2).unwrap(), rat(11));
        assert_eq!(elementary_symmetric(&s, 3).unwrap(), rat(6));
        assert!(elementary_symmetric(&s, 4).is_err());
    }

    #[test]
    fn vandermonde_examples() {
        let a = vandermonde_matrix(&NodeSpec::arithmetic(rat(1), rat(1), 2)).unwrap();
        assert_eq!(a.entry(0, 0), &rat(1));
        assert_eq!(a.entry(0, 1), &rat(2));
        assert_eq!(a.entry(1, 0), &rat(1));
        assert_eq!(a.entry(1, 1), &rat(4));

        let a = vandermonde_matrix(&NodeSpec::offset(1, 1, rat(1))).unwrap();
        assert_eq!(a.entry(0, 0), &rat(-1));
        assert_eq!(a.entry(0, 1), &rat(1));
        assert_eq!(a.entry(1, 0), &rat(1));
        assert_eq!(a.entry(1, 1), &rat(1));
    }

    #[test]
    fn closed_form_inverse_examples() {
        let b = closed_form_inverse(&NodeSpec::arithmetic(rat(1), rat(1), 2)).unwrap();
        assert_eq!(b.entry(0, 0), &rat(2));
        assert_eq!(b.entry(0, 1), &rat(-1));
        assert_eq!(b.entry(1, 0), &ratio(-1, 2));
        assert_eq!(b.entry(1, 1), &ratio(1, 2));

        let b = closed_form_inverse(&NodeSpec::offset(1, 1, rat(1))).unwrap();
        assert_eq!(b.entry(0, 0), &ratio(-1, 2));
        assert_eq!(b.entry(0, 1), &ratio(1, 2));
        assert_eq!(b.entry(1, 0), &ratio(1, 2));
        assert_eq!(b.entry(1, 1), &ratio(1, 2));
    }

    #[test]
    fn closed_form_inverse_identity_box() {
        // The inverse certification (A·B = B·A = I) is run inside
        // closed_form_inverse; this exercises the full parameter box.
        for (a, d) in [
            (rat(1), rat(1)),
            (rat(-1), rat(-1)),
            (ratio(1, 2), ratio(1, 3)),
        ] {
            for n in 1..=8usize {
                let spec = NodeSpec::arithmetic(a.clone(), d.clone(), n);
                closed_form_inverse(&spec).unwrap_or_else(|e| {
                    panic!("arithmetic ({}, {}, {}): {}", a, d, n, e);
                });
            }
        }
        for m in 1..=4usize {
            for n in 1..=4usize {
                closed_form_inverse(&NodeSpec::offset(m, n, rat(1)))
                    .unwrap_or_else(|e| panic!("offset ({}, {}): {}", m, n, e));
            }
        }
    }

    #[test]
    fn closed_form_inverse_offset_nonunit_step_mismatch() {
        // The printed off-center closed form scales incorrectly with the
        // step; the certification catches it and reports the entry.
        let err = closed_form_inverse(&NodeSpec::offset(1, 1, rat(2))).unwrap_err();
        match err {
            Error::ClosedFormMismatch { .. } => {}
            other => panic!("expected mismatch error, got {other}"),
        }
    }

    #[test]
    fn derivative_weights_examples() {
        // Second derivative on nodes {1,2}: the classical (1, -2, 1).
        let spec = NodeSpec::arithmetic(rat(1), rat(1), 2);
        let s = derivative_weights(&spec, 2).unwrap();
        assert_eq!(
            pairs(&s),
            vec![(rat(0), rat(1)), (rat(1), rat(-2)), (rat(2), rat(1))]
        );

        // First derivative on the same nodes: no factorial correction visible.
        let s = derivative_weights(&spec, 1).unwrap();
        assert_eq!(
            pairs(&s),
            vec![
                (rat(0), ratio(-3, 2)),
                (rat(1), rat(2)),
                (rat(2), ratio(-1, 2))
            ]
        );

        // Second derivative on {1,2,3}: one-sided second-order rule.
        let spec = NodeSpec::arithmetic(rat(1), rat(1), 3);
        let s = derivative_weights(&spec, 2).unwrap();
        assert_eq!(
            pairs(&s),
            vec![
                (rat(0), rat(2)),
                (rat(1), rat(-5)),
                (rat(2), rat(4)),
                (rat(3), rat(-1))
            ]
        );
    }

    #[test]
    fn derivative_weights_offset_rescales_step() {
        // Centered second derivative with step 1/2 must satisfy the moment
        // conditions even though the closed-form inverse is taken at unit
        // step (Stencil::new certifies them).
        let spec = NodeSpec::offset(1, 1, ratio(1, 2));
        let s = derivative_weights(&spec, 2).unwrap();
        let o = oracle_weights(&spec.nodes(), 2).unwrap();
        assert_eq!(pairs(&s), pairs(&o));
    }

    #[test]
    fn oracle_examples() {
        let s = oracle_weights(&[rat(-1)], 1).unwrap();
        assert_eq!(pairs(&s), vec![(rat(-1), rat(-1)), (rat(0), rat(1))]);

        let s = oracle_weights(&[rat(-1), rat(-2)], 1).unwrap();
        assert_eq!(pairs(&s), pairs(&backward_weights(2).unwrap()));

        let s = oracle_weights(&[rat(1), rat(2), rat(3)], 3).unwrap();
        assert_eq!(s.moment(3), rat(6));
        assert_eq!(s.moment(1), rat(0));
        assert_eq!(s.moment(2), rat(0));
        let spec = NodeSpec::arithmetic(rat(1), rat(1), 3);
        assert_eq!(pairs(&s), pairs(&derivative_weights(&spec, 3).unwrap()));
    }

    #[test]
    fn oracle_rejects_degenerate_input() {
        assert!(oracle_weights(&[rat(1), rat(1)], 1).is_err());
        assert!(oracle_weights(&[rat(0), rat(1)], 1).is_err());
        assert!(oracle_weights(&[rat(1), rat(2)], 3).is_err());
    }

    #[test]
    fn derivative_weights_rejects_out_of_range_order() {
        let spec = NodeSpec::arithmetic(rat(1), rat(1), 3);
        assert!(derivative_weights(&spec, 0).is_err());
        assert!(derivative_weights(&spec, 4).is_err());
    }

    #[test]
    fn backward_matches_oracle_all_orders() {
        for k in 1..=13usize {
            let nodes: Vec<Rational> = (1..=k).map(|i| rat(-(i as i64))).collect();
            let b = backward_weights(k).unwrap();
            let o = oracle_weights(&nodes, 1).unwrap();
            assert_eq!(pairs(&b), pairs(&o), "k = {}", k);
        }
    }

    #[test]
    fn apply_stencil_examples() {
        let s = backward_weights(1).unwrap();
        let mut samples = HashMap::new();
        samples.insert(rat(0), 3.0);
        samples.insert(rat(-1), 1.0);
        assert_eq!(s.apply(&samples, 0.5).unwrap(), 4.0);

        // d/dx x^2 at x = 1 is exact for every k >= 2.
        for k in 2..=13 {
            let s = backward_weights(k).unwrap();
            let got = s.apply_fn(1.0, 0.1, |x| x * x);
            assert!((got - 2.0).abs() < 1e-9, "k = {}: {}", k, got);
        }

        let s = centered_weights(1, 1).unwrap();
        let got = s.apply_fn(0.0, 1e-3, f64::sin);
        assert!((got - 1.0).abs() < 1e-6);
    }

    #[test]
    fn apply_stencil_missing_sample() {
        let s = backward_weights(1).unwrap();
        let mut samples = HashMap::new();
        samples.insert(rat(0), 3.0);
        assert!(s.apply(&samples, 0.5).is_err());
    }

    #[test]
    fn float_application_reproduces_polynomial_derivatives() {
        // Small layouts keep the cancellation noise below 1e-10 relative;
        // exactness for every order is already certified in rationals by
        // Stencil::new.
        let coeffs = [0.7, -1.3, 0.45, 2.0, -0.8, 0.31, -0.12];
        let poly = |deg: usize, x: f64| -> f64 {
            (0..=deg)
                .map(|i| coeffs[i % coeffs.len()] * x.powi(i as i32))
                .sum()
        };
        let dpoly = |deg: usize, p: usize, x: f64| -> f64 {
            (p..=deg)
                .map(|i| {
                    let mut c = coeffs[i % coeffs.len()];
                    for j in 0..p {
                        c *= (i - j) as f64;
                    }
                    c * x.powi((i - p) as i32)
                })
                .sum()
        };
        let mut cases: Vec<Stencil> = Vec::new();
        for k in 1..=6 {
            cases.push(backward_weights(k).unwrap());
        }
        cases.push(centered_weights(3, 3).unwrap());
        cases.push(derivative_weights(&NodeSpec::arithmetic(rat(1), rat(1), 5), 3).unwrap());
        for s in cases {
            let deg = s.derivative_order + s.accuracy_order - 1;
            let p = s.derivative_order;
            let got = s.apply_fn(0.3, 0.5, |x| poly(deg, x));
            let want = dpoly(deg, p, 0.3);
            let rel = (got - want).abs() / want.abs().max(1.0);
            assert!(
                rel < 1e-10,
                "p={} q={}: rel err {}",
                p,
                s.accuracy_order,
                rel
            );
        }
    }

    #[test]
    fn alternating_power_sum_vanishes() {
        for n in 2..=10usize {
            for m in -5..=5i64 {
                for k in 1..n {
                    assert_eq!(
                        alternating_power_sum(m, n, k),
                        rat(0),
                        "n={} m={} k={}",
                        n,
                        m,
                        k
                    );
                }
            }
        }
    }

    #[test]
    fn convolution_identities() {
        let rs = [ratio(1, 2), ratio(-1, 2), ratio(3, 2), ratio(-3, 2), rat(2)];
        for r in &rs {
            for p in 1..=8usize {
                assert_eq!(unit_convolution_sum(r, p), rat(1), "r={} p={}", r, p);
                for k in 1..=p {
                    assert_eq!(
                        annihilated_power_sum(r, p, k),
                        rat(0),
                        "r={} p={} k={}",
                        r,
                        p,
                        k
                    );
                }
            }
        }
    }

    #[test]
    fn interpolated_power_sum_reproduces_powers() {
        let lambdas = [rat(0), rat(1), rat(3), ratio(2, 3), ratio(-5, 2)];
        for r in [ratio(1, 2), ratio(-3, 2), rat(2)] {
            for p in 1..=6usize {
                for k in 1..=p {
                    for l in &lambdas {
                        assert_eq!(
                            interpolated_power_sum(&r, p, k, l),
                            powi(l, k as i32),
                            "r={} p={} k={} λ={}",
                            r,
                            p,
                            k,
                            l
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn raw_last_column_misses_factorial() {
        // Raw inverse column vs moment-condition oracle on nodes {1, 2}:
        // the printed second-derivative coefficients are exactly half.
        let spec = NodeSpec::arithmetic(rat(1), rat(1), 2);
        let raw = last_column_closed_form(&spec).unwrap();
        assert_eq!(raw, vec![rat(-1), ratio(1, 2)]);
        let oracle = oracle_weights(&spec.nodes(), 2).unwrap();
        assert_eq!(oracle.weights[..2], [rat(-2), rat(1)]);
        for (r, o) in raw.iter().zip(&oracle.weights) {
            assert_eq!(&(r * rat(2)), o);
        }
    }

    #[test]
    fn raw_columns_match_certified_inverse() {
        for (a, d, n) in [
            (rat(1), rat(1), 5usize),
            (rat(-1), rat(-1), 6),
            (ratio(1, 2), ratio(1, 3), 4),
        ] {
            let spec = NodeSpec::arithmetic(a, d, n);
            let b = closed_form_inverse(&spec).unwrap();
            assert_eq!(last_column_closed_form(&spec).unwrap(), b.column(n - 1));
            assert_eq!(
                second_last_column_closed_form(&spec).unwrap(),
                b.column(n - 2)
            );
        }
        // Off-center: exact for the symmetric unit-step layout...
        let spec = NodeSpec::offset(2, 2, rat(1));
        let b = closed_form_inverse(&spec).unwrap();
        assert_eq!(last_column_closed_form(&spec).unwrap(), b.column(3));
        assert_eq!(second_last_column_closed_form(&spec).unwrap(), b.column(2));
        // ...and for asymmetric layouts the last column still holds while the
        // printed second-last column diverges (its numerator drops the
        // (right-left)/2 shift of the node sum).
        let spec = NodeSpec::offset(1, 2, rat(1));
        let b = closed_form_inverse(&spec).unwrap();
        assert_eq!(last_column_closed_form(&spec).unwrap(), b.column(2));
        assert_ne!(second_last_column_closed_form(&spec).unwrap(), b.column(1));
    }

    #[test]
    fn stencil_weight_sum_is_zero() {
        let mut all: Vec<Stencil> = Vec::new();
        for k in 1..=13 {
            all.push(backward_weights(k).unwrap());
            all.push(forward_weights(k).unwrap());
        }
        for m in 1..=4 {
            for n in 1..=4 {
                all.push(centered_weights(m, n).unwrap());
            }
        }
        for s in all {
            assert_eq!(s.moment(0), rat(0));
        }
    }

    proptest! {
        #[test]
        fn arithmetic_weights_match_oracle(
            a in -6i64..=6,
            d in prop::sample::select(vec![-2i64, -1, 1, 2, 3]),
            k in 1usize..=6,
        ) {
            let start = rat(a);
            let step = rat(d);
            let spec = NodeSpec::arithmetic(start, step, k);
            prop_assume!(spec.validate().is_ok());
            let s = arithmetic_weights(&spec).unwrap();
            let o = oracle_weights(&spec.nodes(), 1).unwrap();
            prop_assert_eq!(pairs(&s), pairs(&o));
        }

        #[test]
        fn derivative_weights_match_oracle(
            m in 1usize..=3,
            n in 1usize..=3,
            p in 1usize..=6,
        ) {
            prop_assume!(p <= m + n);
            let spec = NodeSpec::offset(m, n, rat(1));
            let s = derivative_weights(&spec, p).unwrap();
            let o = oracle_weights(&spec.nodes(), p).unwrap();
            prop_assert_eq!(pairs(&s), pairs(&o));
        }
    }
}
