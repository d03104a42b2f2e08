//! Single-pass upwind solvers for the factored Hamilton-Jacobi equation
//!
//! ```text
//! Π_{i=1..n} ( w + n x_i w_{x_i} ) = f    on (0,1]^n.
//! ```
//!
//! Discretizing `w_{x_i}` with the k-th order backward difference turns the
//! left side at each node into a product of linear factors
//! `A_i w + B_i` in the unknown node value `w`, with `A_i ≥ 1` and `B_i`
//! depending only on already-swept neighbors. One lexicographic pass therefore
//! solves the whole grid, committing at each node the largest real root of a
//! degree-n polynomial.
//!
//! Scheme selection per node:
//!
//! * first order (`k = 1`): monotone and stable;
//! * unfiltered order k: the order-k factor wherever its stencil fits inside
//!   the cube (`x ∈ [kh,1]^n`), first order elsewhere;
//! * filtered order k: additionally falls back to first order unless the
//!   order-k candidate satisfies the first-order equation within `√h`,
//!   which is what makes the scheme stable at any order.
//!
//! Internally each node is solved for the deviation from an already-committed
//! neighbor value, with the difference-quotient tails accumulated as
//! differences against that reference. Constant fields are then fixed points
//! of the sweep bit-exactly: the unstable high-order recurrences would
//! otherwise amplify the rounding residue of the coefficient sums
//! (`Σ_j d_j ≠ 0` in floats) into visible noise.

use crate::fd_coeffs::backward_weights;
use crate::grid::{sweep_order, GridFunction, MultiIndex};
use crate::{Error, Result};

/// Tolerance below which a first-order factor evaluated at a committed root
/// is considered nonnegative. Roots are exact only to rounding, so a factor
/// that is mathematically zero can evaluate to a tiny negative number; a
/// genuine sign violation is on the scale of √h, many orders larger.
const FACTOR_SIGN_TOL: f64 = 1e-9;

/// Float slack for the stability bound check.
const STABILITY_SLACK: f64 = 1e-10;

/// Scheme order, filtering, and root-solver knobs.
#[derive(Debug, Clone, PartialEq)]
pub struct SchemeConfig {
    /// Backward-difference order k.
    pub order: usize,
    /// Blend with the monotone scheme under the `h^threshold_exponent` test.
    pub filtered: bool,
    /// Exponent of the filter threshold; 1/2 gives the standard `√h`.
    pub threshold_exponent: f64,
    /// Residual tolerance of the per-node root solve, relative to `1 + f`.
    pub root_tol: f64,
    /// Iteration cap of the safeguarded Newton solve (dimension ≥ 3).
    pub max_newton_iters: usize,
}

impl SchemeConfig {
    /// First-order monotone baseline.
    pub fn monotone() -> Self {
        SchemeConfig {
            order: 1,
            filtered: false,
            threshold_exponent: 0.5,
            root_tol: 1e-12,
            max_newton_iters: 100,
        }
    }

    pub fn filtered(order: usize) -> Self {
        SchemeConfig {
            order,
            filtered: true,
            ..Self::monotone()
        }
    }

    pub fn unfiltered(order: usize) -> Self {
        SchemeConfig {
            order,
            filtered: false,
            ..Self::monotone()
        }
    }

    /// Runtime filter threshold `h^threshold_exponent`.
    pub fn threshold(&self, h: f64) -> f64 {
        h.powf(self.threshold_exponent)
    }
}

/// One linear factor `slope·w + intercept` of the discrete product.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeFactor {
    pub slope: f64,
    pub intercept: f64,
}

impl NodeFactor {
    pub fn value(&self, w: f64) -> f64 {
        self.slope * w + self.intercept
    }

    /// The factor's own root `-intercept/slope`.
    pub fn root(&self) -> f64 {
        -self.intercept / self.slope
    }
}

/// Solution of one sweep: the factored solution `w`, the back-transformed
/// `u`, and filter diagnostics.
#[derive(Debug, Clone)]
pub struct SolveReport {
    pub w: GridFunction,
    pub u: GridFunction,
    /// Per node, whether the order-k branch was committed.
    pub high_order_used: Vec<bool>,
    pub usage_fraction: f64,
    /// `max |F_1(x, w_h) - f(x)|` over the grid.
    pub max_filter_residual: f64,
}

/// The axis factor `w + n x_i ∇_i^{k,-} w` at node `j` as a linear function
/// of the unknown node value. Out-of-cube reads are zero; at `x_i = 0` the
/// factor reduces to `w` exactly.
pub fn factor(w: &GridFunction, j: &MultiIndex, axis: usize, k: usize) -> NodeFactor {
    let spec = w.spec();
    let ji = j.components()[axis];
    if ji == 0 {
        return NodeFactor {
            slope: 1.0,
            intercept: 0.0,
        };
    }
    // n·x_i/h with x_i = j_i·h is the integer n·j_i, exactly.
    let coeff = spec.dim() as f64 * ji as f64;
    let d = backward_weights(k)
        .expect("positive difference order")
        .weights_f64();
    let mut tail = 0.0;
    let mut neighbor: Vec<i64> = j.components().iter().map(|&c| c as i64).collect();
    for (step, dj) in d.iter().enumerate().skip(1) {
        neighbor[axis] = ji as i64 - step as i64;
        tail += dj * w.read_extended(&neighbor);
    }
    NodeFactor {
        slope: 1.0 + coeff * d[0],
        intercept: coeff * tail,
    }
}

/// First-order upwind operator `F_1(x, w)`: the product of the first-order
/// factors when all are nonnegative, `-∞` otherwise.
pub fn eval_f1(w: &GridFunction, j: &MultiIndex) -> f64 {
    let wx = w.get(j);
    let mut prod = 1.0;
    for axis in 0..w.spec().dim() {
        let v = factor(w, j, axis, 1).value(wx);
        if v < 0.0 {
            return f64::NEG_INFINITY;
        }
        prod *= v;
    }
    prod
}

/// Order-k upwind operator `F_k(x, w)`: the plain product of the order-k
/// factors, no sign clamp (the scheme is not monotone).
pub fn eval_fk(w: &GridFunction, j: &MultiIndex, k: usize) -> f64 {
    let wx = w.get(j);
    let mut prod = 1.0;
    for axis in 0..w.spec().dim() {
        prod *= factor(w, j, axis, k).value(wx);
    }
    prod
}

/// Largest real root of `Π_i (A_i w + B_i) = f_val` for slopes ≥ 1 and
/// `f_val ≥ 0`.
///
/// The root exists and lies in `[r, r + (f/ΠA)^{1/n}]` where `r` is the
/// largest factor root: the product vanishes at `r` and dominates
/// `ΠA·(w-r)^n` beyond it. Dimensions 1 and 2 use closed forms; higher
/// dimensions use Newton safeguarded by bisection on that bracket.
///
/// Non-finite factors (from an already-diverged unfiltered sweep) propagate
/// as NaN rather than an error.
pub fn solve_node(factors: &[NodeFactor], f_val: f64, cfg: &SchemeConfig) -> Result<f64> {
    solve_node_inner(factors, f_val, cfg).map_err(|residual| Error::SolverFailure {
        node: Vec::new(),
        residual,
        iterations: cfg.max_newton_iters,
    })
}

/// Err carries the final residual.
fn solve_node_inner(
    factors: &[NodeFactor],
    f_val: f64,
    cfg: &SchemeConfig,
) -> std::result::Result<f64, f64> {
    if !f_val.is_finite()
        || factors
            .iter()
            .any(|f| !f.slope.is_finite() || !f.intercept.is_finite())
    {
        return Ok(f64::NAN);
    }
    match factors.len() {
        1 => Ok((f_val - factors[0].intercept) / factors[0].slope),
        2 => {
            let (a1, b1) = (factors[0].slope, factors[0].intercept);
            let (a2, b2) = (factors[1].slope, factors[1].intercept);
            let a = a1 * a2;
            let b = a1 * b2 + a2 * b1;
            let c = b1 * b2 - f_val;
            // b^2 - 4ac rewritten without cancellation; nonnegative for f ≥ 0.
            let disc = (a1 * b2 - a2 * b1).powi(2) + 4.0 * a * f_val;
            let sq = disc.max(0.0).sqrt();
            if b <= 0.0 {
                Ok((-b + sq) / (2.0 * a))
            } else {
                Ok(2.0 * c / (-b - sq))
            }
        }
        n => {
            let r_max = factors
                .iter()
                .map(NodeFactor::root)
                .fold(f64::NEG_INFINITY, f64::max);
            if f_val == 0.0 {
                return Ok(r_max);
            }
            let prod_a: f64 = factors.iter().map(|f| f.slope).product();
            let g = |w: f64| -> f64 { factors.iter().map(|f| f.value(w)).product::<f64>() - f_val };
            let dg = |w: f64| -> f64 {
                let mut acc = 0.0;
                for i in 0..n {
                    let mut term = factors[i].slope;
                    for (j, f) in factors.iter().enumerate() {
                        if j != i {
                            term *= f.value(w);
                        }
                    }
                    acc += term;
                }
                acc
            };
            let mut lo = r_max;
            let mut hi = r_max + (f_val / prod_a).powf(1.0 / n as f64);
            let mut expansions = 0;
            while g(hi) < 0.0 && expansions < 64 {
                hi = lo + 2.0 * (hi - lo).max(f64::MIN_POSITIVE);
                expansions += 1;
            }
            let tol = cfg.root_tol * (1.0 + f_val);
            let mut x = hi;
            let mut gx = g(x);
            for _ in 0..cfg.max_newton_iters {
                if gx.abs() <= tol {
                    return Ok(x);
                }
                if gx > 0.0 {
                    hi = x;
                } else {
                    lo = x;
                }
                let step = gx / dg(x);
                let mut next = x - step;
                if !next.is_finite() || next <= lo || next >= hi {
                    next = 0.5 * (lo + hi);
                }
                x = next;
                gx = g(x);
            }
            if gx.abs() <= tol {
                Ok(x)
            } else {
                Err(gx.abs())
            }
        }
    }
}

/// Product of linear factors at candidate value `wx` (in whatever variable
/// the factors are expressed in), or `None` for the `-∞` branch. Tolerates
/// factor values within rounding of zero.
fn guarded_f1(factors: &[NodeFactor], wx: f64) -> Option<f64> {
    let mut prod = 1.0;
    for f in factors {
        let v = f.value(wx);
        if v < -FACTOR_SIGN_TOL {
            return None;
        }
        prod *= v;
    }
    Some(prod)
}

/// One lexicographic pass over the grid solving the configured scheme,
/// followed by the back-transform to `u`.
///
/// `f` must be finite and nonnegative on every node. The pass is strictly
/// sequential, so two sweeps with identical inputs are bitwise identical.
pub fn sweep_solve(f: &GridFunction, cfg: &SchemeConfig) -> Result<SolveReport> {
    let spec = *f.spec();
    if cfg.order == 0 {
        return Err(Error::invalid("scheme order must be positive"));
    }
    for (flat, &v) in f.values().iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::invalid(format!(
                "density is not finite at flat node {}",
                flat
            )));
        }
        if v < 0.0 {
            return Err(Error::invalid(format!(
                "density is negative at flat node {}",
                flat
            )));
        }
    }

    let n = spec.dim();
    let nf = n as f64;
    let h = spec.h();
    let k = cfg.order;
    let d = backward_weights(k)?.weights_f64();
    let strides = spec.strides();
    let side = spec.intervals() + 1;
    let threshold = cfg.threshold(h);

    let mut wv = vec![0.0f64; spec.node_count()];
    let mut mask = vec![false; spec.node_count()];
    let mut idx = vec![0usize; n];
    let mut f1 = vec![
        NodeFactor {
            slope: 1.0,
            intercept: 0.0
        };
        n
    ];
    let mut fk = vec![
        NodeFactor {
            slope: 1.0,
            intercept: 0.0
        };
        n
    ];

    for flat in 0..spec.node_count() {
        let f_val = f.values()[flat];
        // Reference value the node is solved relative to: the committed
        // neighbor along the first axis that has one, zero at the origin.
        // Factors below are linear in the deviation δ = w - reference, with
        // intercepts equal to the factor value at the reference; stencil
        // tails are sums of (neighbor - reference) differences, so a locally
        // constant field keeps every intercept at the reference exactly.
        let reference = match (0..n).find(|&axis| idx[axis] > 0) {
            Some(axis) => wv[flat - strides[axis]],
            None => 0.0,
        };
        let mut band = true;
        for axis in 0..n {
            let ji = idx[axis];
            band &= ji >= k;
            if ji == 0 {
                f1[axis] = NodeFactor {
                    slope: 1.0,
                    intercept: reference,
                };
            } else {
                let coeff = nf * ji as f64; // n·x_i/h with x_i = j_i·h
                f1[axis] = NodeFactor {
                    slope: 1.0 + coeff,
                    intercept: reference - coeff * (wv[flat - strides[axis]] - reference),
                };
            }
        }

        let d1 = solve_node_inner(&f1, f_val, cfg).map_err(|residual| Error::SolverFailure {
            node: idx.clone(),
            residual,
            iterations: cfg.max_newton_iters,
        })?;
        let w1 = reference + d1;

        let (committed, high) = if k == 1 {
            // F_k coincides with F_1; only the band gates the usage mask.
            (w1, band)
        } else if band {
            for axis in 0..n {
                let ji = idx[axis];
                let coeff = nf * ji as f64;
                let mut tail = 0.0;
                for (step, dj) in d.iter().enumerate().skip(1) {
                    tail += dj * (wv[flat - step * strides[axis]] - reference);
                }
                fk[axis] = NodeFactor {
                    slope: 1.0 + coeff * d[0],
                    intercept: reference + coeff * tail,
                };
            }
            let dk =
                solve_node_inner(&fk, f_val, cfg).map_err(|residual| Error::SolverFailure {
                    node: idx.clone(),
                    residual,
                    iterations: cfg.max_newton_iters,
                })?;
            let wk = reference + dk;
            if cfg.filtered {
                match guarded_f1(&f1, dk) {
                    Some(v) if (v - f_val).abs() <= threshold => (wk, true),
                    _ => (w1, false),
                }
            } else {
                (wk, true)
            }
        } else {
            (w1, false)
        };

        wv[flat] = committed;
        mask[flat] = high;

        for axis in (0..n).rev() {
            if idx[axis] + 1 < side {
                idx[axis] += 1;
                break;
            }
            idx[axis] = 0;
        }
    }

    let mut w = GridFunction::zeros(spec);
    w.values_mut().copy_from_slice(&wv);
    let u = back_transform(&w);
    let used = mask.iter().filter(|&&b| b).count();
    let usage_fraction = used as f64 / spec.node_count() as f64;
    let (max_filter_residual, _) = filter_residual_max(&w, f);
    Ok(SolveReport {
        w,
        u,
        high_order_used: mask,
        usage_fraction,
        max_filter_residual,
    })
}

/// Undoes the singularity factorization: `u = n (x_1 ⋯ x_n)^{1/n} w`,
/// with `u = 0` wherever a coordinate vanishes.
pub fn back_transform(w: &GridFunction) -> GridFunction {
    let spec = *w.spec();
    let n = spec.dim();
    let h = spec.h();
    let mut u = GridFunction::zeros(spec);
    for (flat, j) in sweep_order(&spec).enumerate() {
        if j.components().contains(&0) {
            continue; // u is pinned to zero on the lower faces
        }
        let mut prod = 1.0;
        for &c in j.components() {
            prod *= c as f64 * h;
        }
        let root = match n {
            1 => prod,
            2 => prod.sqrt(),
            _ => prod.powf(1.0 / n as f64),
        };
        u.values_mut()[flat] = n as f64 * root * w.values()[flat];
    }
    u
}

/// `max_x |F_1(x, w) - f(x)|` with the `-∞` branch counted as an infinite
/// violation; also returns the attaining node.
fn filter_residual_max(w: &GridFunction, f: &GridFunction) -> (f64, Option<Vec<usize>>) {
    let spec = w.spec();
    let n = spec.dim();
    let mut worst = 0.0f64;
    let mut worst_node = None;
    let mut factors = vec![
        NodeFactor {
            slope: 1.0,
            intercept: 0.0
        };
        n
    ];
    let strides = spec.strides();
    let nf = n as f64;
    for (flat, j) in sweep_order(spec).enumerate() {
        for axis in 0..n {
            let ji = j.components()[axis];
            factors[axis] = if ji == 0 {
                NodeFactor {
                    slope: 1.0,
                    intercept: 0.0,
                }
            } else {
                let coeff = nf * ji as f64;
                NodeFactor {
                    slope: 1.0 + coeff,
                    intercept: -coeff * w.values()[flat - strides[axis]],
                }
            };
        }
        let r = match guarded_f1(&factors, w.values()[flat]) {
            Some(v) => {
                let r = (v - f.values()[flat]).abs();
                if r.is_nan() {
                    f64::INFINITY
                } else {
                    r
                }
            }
            None => f64::INFINITY,
        };
        if r > worst {
            worst = r;
            worst_node = Some(j.components().to_vec());
        }
    }
    (worst, worst_node)
}

/// Re-derives the filter property `|F_1(x, w_h) - f(x)| ≤ h^σ` over the whole
/// grid and returns the maximum residual, or an invariant error naming the
/// first offending node.
pub fn filter_residual_check(
    report: &SolveReport,
    f: &GridFunction,
    cfg: &SchemeConfig,
) -> Result<f64> {
    let (max, node) = filter_residual_max(&report.w, f);
    let threshold = cfg.threshold(report.w.spec().h());
    if max > threshold {
        return Err(Error::InvariantViolation {
            node: node.unwrap_or_default(),
            detail: format!(
                "filter residual {:.3e} exceeds threshold {:.3e}",
                max, threshold
            ),
        });
    }
    Ok(max)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityViolation {
    pub node: Vec<usize>,
    pub value: f64,
    pub bound: f64,
}

/// First node violating `0 ≤ w_h ≤ (max f + √h)^{1/n}`, if any.
pub fn stability_violation(report: &SolveReport, f: &GridFunction) -> Option<StabilityViolation> {
    let spec = report.w.spec();
    let max_f = f.values().iter().cloned().fold(0.0f64, f64::max);
    let bound = (max_f + spec.h().sqrt()).powf(1.0 / spec.dim() as f64);
    let hi = bound + STABILITY_SLACK * (1.0 + bound);
    for (flat, j) in sweep_order(spec).enumerate() {
        let v = report.w.values()[flat];
        if !(v >= -STABILITY_SLACK && v <= hi) {
            return Some(StabilityViolation {
                node: j.components().to_vec(),
                value: v,
                bound,
            });
        }
    }
    None
}

/// True iff the solution satisfies the stability bound everywhere.
pub fn stability_check(report: &SolveReport, f: &GridFunction) -> bool {
    stability_violation(report, f).is_none()
}
