//! Convergence-study harness: run scheme × mesh ladders against problems
//! with known solutions, record error norms, observed orders, and high-order
//! usage fractions, and emit plot-ready data.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::grid::{sweep_order, GridFunction, GridSpec};
use crate::hj_solver::{filter_residual_check, stability_check, sweep_solve, SchemeConfig};
use crate::test_problems::TestProblem;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Norm {
    L1,
    Linf,
}

/// Discrete error of a grid function against a closure evaluated at the
/// nodes: `h^n Σ |u_h - exact|` for L¹, the max for L∞.
pub fn discrete_error(u_h: &GridFunction, exact: impl Fn(&[f64]) -> f64, norm: Norm) -> f64 {
    let spec = u_h.spec();
    let h = spec.h();
    let mut x = vec![0.0; spec.dim()];
    let mut acc = 0.0f64;
    for (flat, j) in sweep_order(spec).enumerate() {
        for (xi, &c) in x.iter_mut().zip(j.components()) {
            *xi = c as f64 * h;
        }
        let d = (u_h.values()[flat] - exact(&x)).abs();
        match norm {
            Norm::L1 => acc += d,
            Norm::Linf => acc = acc.max(d),
        }
    }
    match norm {
        Norm::L1 => acc * h.powi(spec.dim() as i32),
        Norm::Linf => acc,
    }
}

/// One solve of one scheme on one mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorRecord {
    pub problem: String,
    pub h: f64,
    pub intervals: usize,
    pub order: usize,
    pub filtered: bool,
    pub err_l1_u: f64,
    pub err_linf_u: f64,
    pub err_l1_w: f64,
    pub err_linf_w: f64,
    pub usage_fraction: f64,
    pub wall_time: f64,
}

impl ErrorRecord {
    pub fn diverged(&self) -> bool {
        !self.err_linf_u.is_finite()
    }
}

/// Least-squares slopes of log(err) against log(h) for one scheme; `None`
/// when fewer than three meshes produced finite nonzero errors.
#[derive(Debug, Clone, PartialEq)]
pub struct SchemeSlopes {
    pub order: usize,
    pub filtered: bool,
    pub l1_u: Option<f64>,
    pub linf_u: Option<f64>,
    pub l1_w: Option<f64>,
    pub linf_w: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct ConvergenceReport {
    pub problem: String,
    /// Scheme-major, mesh ladder inner (so per scheme, h is decreasing).
    pub records: Vec<ErrorRecord>,
    pub observed_orders: Vec<SchemeSlopes>,
    /// Human-readable descriptions of structural-invariant violations
    /// (stability bound, filter residual) found during the study.
    pub violations: Vec<String>,
}

impl ConvergenceReport {
    pub fn records_for(&self, order: usize, filtered: bool) -> Vec<&ErrorRecord> {
        self.records
            .iter()
            .filter(|r| r.order == order && r.filtered == filtered)
            .collect()
    }

    pub fn slopes_for(&self, order: usize, filtered: bool) -> Option<&SchemeSlopes> {
        self.observed_orders
            .iter()
            .find(|s| s.order == order && s.filtered == filtered)
    }
}

/// Least-squares slope of `log err` vs `log h`. Requires at least three
/// samples with distinct mesh sizes and finite positive errors.
pub fn observed_order(samples: &[(f64, f64)]) -> Result<f64> {
    if samples.len() < 3 {
        return Err(Error::invalid(
            "order estimation needs at least three mesh levels",
        ));
    }
    let usable: Vec<(f64, f64)> = samples
        .iter()
        .filter(|(h, e)| *h > 0.0 && e.is_finite() && *e > 0.0)
        .map(|&(h, e)| (h.ln(), e.ln()))
        .collect();
    if usable.len() < 3 {
        return Err(Error::invalid(
            "order estimation needs at least three finite nonzero errors",
        ));
    }
    let n = usable.len() as f64;
    let sx: f64 = usable.iter().map(|(x, _)| x).sum();
    let sy: f64 = usable.iter().map(|(_, y)| y).sum();
    let sxx: f64 = usable.iter().map(|(x, _)| x * x).sum();
    let sxy: f64 = usable.iter().map(|(x, y)| x * y).sum();
    let denom = n * sxx - sx * sx;
    if denom == 0.0 {
        return Err(Error::invalid("mesh sizes are not distinct"));
    }
    Ok((n * sxy - sx * sy) / denom)
}

/// Which filter variants a study runs for each requested order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterSelection {
    FilteredOnly,
    UnfilteredOnly,
    Both,
}

impl FilterSelection {
    fn flags(&self) -> &'static [bool] {
        match self {
            FilterSelection::FilteredOnly => &[true],
            FilterSelection::UnfilteredOnly => &[false],
            FilterSelection::Both => &[false, true],
        }
    }
}

#[derive(Debug, Clone)]
pub struct StudyOptions {
    pub orders: Vec<usize>,
    pub filter: FilterSelection,
    /// Interval counts, strictly increasing.
    pub meshes: Vec<usize>,
    pub dim: usize,
    pub threshold_exponent: f64,
    pub root_tol: f64,
    pub max_newton_iters: usize,
}

impl StudyOptions {
    pub fn new(orders: Vec<usize>, filter: FilterSelection, meshes: Vec<usize>) -> Self {
        StudyOptions {
            orders,
            filter,
            meshes,
            dim: 2,
            threshold_exponent: 0.5,
            root_tol: 1e-12,
            max_newton_iters: 100,
        }
    }

    /// The ladder used throughout the default experiments.
    pub fn default_meshes() -> Vec<usize> {
        vec![32, 64, 128, 256, 512, 1024]
    }

    fn scheme(&self, order: usize, filtered: bool) -> SchemeConfig {
        SchemeConfig {
            order,
            filtered,
            threshold_exponent: self.threshold_exponent,
            root_tol: self.root_tol,
            max_newton_iters: self.max_newton_iters,
        }
    }
}

/// Full cross product of schemes × meshes. Diverging unfiltered high-order
/// runs are recorded with infinite errors instead of aborting the study;
/// every filtered or first-order run is re-checked against the stability
/// bound and the filter property, with violations collected in the report.
pub fn run_study(problem: &TestProblem, opts: &StudyOptions) -> Result<ConvergenceReport> {
    if opts.orders.is_empty() || opts.meshes.is_empty() {
        return Err(Error::invalid(
            "study needs at least one order and one mesh",
        ));
    }
    if !opts.meshes.windows(2).all(|w| w[0] < w[1]) {
        return Err(Error::invalid("mesh ladder must be strictly increasing"));
    }
    if !problem.has_exact() {
        return Err(Error::invalid(
            "convergence study needs a problem with an exact solution",
        ));
    }

    let mut records = Vec::new();
    let mut violations = Vec::new();
    for &order in &opts.orders {
        for &filtered in opts.filter.flags() {
            for &n in &opts.meshes {
                let spec = GridSpec::new(opts.dim, n)?;
                let f = GridFunction::from_fn(spec, |x| problem.density_at(x));
                let cfg = opts.scheme(order, filtered);
                let start = Instant::now();
                let solved = sweep_solve(&f, &cfg);
                let wall = start.elapsed().as_secs_f64();
                let record = match solved {
                    Ok(report) => {
                        let structural = filtered || order == 1;
                        if structural {
                            if !stability_check(&report, &f) {
                                violations.push(format!(
                                    "{} k={} filtered={} N={}: stability bound violated",
                                    problem.name, order, filtered, n
                                ));
                            }
                            if let Err(e) = filter_residual_check(&report, &f, &cfg) {
                                violations.push(format!(
                                    "{} k={} filtered={} N={}: {}",
                                    problem.name, order, filtered, n, e
                                ));
                            }
                        }
                        make_record(problem, &report, order, filtered, n, spec, wall)
                    }
                    Err(e) => {
                        if filtered || order == 1 {
                            return Err(e);
                        }
                        // Unfiltered high-order blow-up: keep the ladder going.
                        ErrorRecord {
                            problem: problem.name.clone(),
                            h: spec.h(),
                            intervals: n,
                            order,
                            filtered,
                            err_l1_u: f64::INFINITY,
                            err_linf_u: f64::INFINITY,
                            err_l1_w: f64::INFINITY,
                            err_linf_w: f64::INFINITY,
                            usage_fraction: f64::NAN,
                            wall_time: wall,
                        }
                    }
                };
                records.push(record);
            }
        }
    }

    let mut observed_orders = Vec::new();
    for &order in &opts.orders {
        for &filtered in opts.filter.flags() {
            let scheme_records: Vec<&ErrorRecord> = records
                .iter()
                .filter(|r| r.order == order && r.filtered == filtered)
                .collect();
            let slope = |pick: fn(&ErrorRecord) -> f64| -> Option<f64> {
                let samples: Vec<(f64, f64)> =
                    scheme_records.iter().map(|r| (r.h, pick(r))).collect();
                observed_order(&samples).ok()
            };
            observed_orders.push(SchemeSlopes {
                order,
                filtered,
                l1_u: slope(|r| r.err_l1_u),
                linf_u: slope(|r| r.err_linf_u),
                l1_w: slope(|r| r.err_l1_w),
                linf_w: slope(|r| r.err_linf_w),
            });
        }
    }

    Ok(ConvergenceReport {
        problem: problem.name.clone(),
        records,
        observed_orders,
        violations,
    })
}

fn make_record(
    problem: &TestProblem,
    report: &crate::hj_solver::SolveReport,
    order: usize,
    filtered: bool,
    n: usize,
    spec: GridSpec,
    wall: f64,
) -> ErrorRecord {
    let finite = report.w.values().iter().all(|v| v.is_finite());
    let (err_l1_u, err_linf_u, err_l1_w, err_linf_w) = if finite {
        let l1_u = discrete_error(&report.u, |x| problem.exact_u_at(x).unwrap(), Norm::L1);
        let linf_u = discrete_error(&report.u, |x| problem.exact_u_at(x).unwrap(), Norm::Linf);
        let (l1_w, linf_w) = w_errors(&report.w, problem);
        (l1_u, linf_u, l1_w, linf_w)
    } else {
        (f64::INFINITY, f64::INFINITY, f64::INFINITY, f64::INFINITY)
    };
    ErrorRecord {
        problem: problem.name.clone(),
        h: spec.h(),
        intervals: n,
        order,
        filtered,
        err_l1_u,
        err_linf_u,
        err_l1_w,
        err_linf_w,
        usage_fraction: report.usage_fraction,
        wall_time: wall,
    }
}

/// Errors of the factored solution, excluding nodes on the `x_i = 0` faces
/// where the exact quotient is a 0/0 limit.
fn w_errors(w_h: &GridFunction, problem: &TestProblem) -> (f64, f64) {
    let spec = w_h.spec();
    let h = spec.h();
    let mut x = vec![0.0; spec.dim()];
    let mut l1 = 0.0f64;
    let mut linf = 0.0f64;
    for (flat, j) in sweep_order(spec).enumerate() {
        if j.components().contains(&0) {
            continue;
        }
        for (xi, &c) in x.iter_mut().zip(j.components()) {
            *xi = c as f64 * h;
        }
        let exact = problem.exact_w_at(&x).expect("interior node");
        let d = (w_h.values()[flat] - exact).abs();
        l1 += d;
        linf = linf.max(d);
    }
    (l1 * h.powi(spec.dim() as i32), linf)
}

pub const CSV_HEADER: &str =
    "problem,h,N,order,filtered,err_L1_u,err_Linf_u,err_L1_w,err_Linf_w,usage_fraction,wall_time";

/// Writes the report as CSV, one row per record in record order. Diverged
/// entries carry the literal `inf`. Emission is deterministic: re-emitting
/// the same report is byte-identical.
pub fn emit_csv(report: &ConvergenceReport, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{}", CSV_HEADER)?;
    for r in &report.records {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{:.6}",
            r.problem,
            r.h,
            r.intervals,
            r.order,
            r.filtered,
            r.err_l1_u,
            r.err_linf_u,
            r.err_l1_w,
            r.err_linf_w,
            r.usage_fraction,
            r.wall_time,
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Writes one whitespace-separated `h error` file per (norm, scheme) pair —
/// errors on `u`, the primary metric — plus an `index.txt` listing the series
/// in the same order as the CSV. Diverged rows keep their `inf` values;
/// log-log plot tools skip them.
pub fn emit_plot_data(report: &ConvergenceReport, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut schemes: Vec<(usize, bool)> = Vec::new();
    for r in &report.records {
        if !schemes.contains(&(r.order, r.filtered)) {
            schemes.push((r.order, r.filtered));
        }
    }
    let mut index = BufWriter::new(File::create(dir.join("index.txt"))?);
    let mut written = Vec::new();
    for (order, filtered) in schemes {
        for (norm, pick) in [
            (
                "l1",
                (|r: &ErrorRecord| r.err_l1_u) as fn(&ErrorRecord) -> f64,
            ),
            ("linf", |r: &ErrorRecord| r.err_linf_u),
        ] {
            let series = format!(
                "{}_k{}_{}_{}",
                report.problem,
                order,
                if filtered { "filtered" } else { "unfiltered" },
                norm
            );
            let file = dir.join(format!("{}.dat", series));
            let mut out = BufWriter::new(File::create(&file)?);
            for r in report
                .records
                .iter()
                .filter(|r| r.order == order && r.filtered == filtered)
            {
                writeln!(out, "{} {}", r.h, pick(r))?;
            }
            out.flush()?;
            writeln!(index, "{}\t{}.dat", series, series)?;
            written.push(file);
        }
    }
    index.flush()?;
    Ok(written)
}
