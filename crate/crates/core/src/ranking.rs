//! PDE-based ranking of a two-dimensional point cloud.
//!
//! The layer index assigned to a point by nondominated sorting (repeatedly
//! peeling minimal elements) has a continuum limit: the solution `u` of the
//! Hamilton-Jacobi equation with the data density as right-hand side. The
//! pipeline here estimates the density on a grid with a cell histogram,
//! solves the filtered scheme, and reads each point's rank off the solution
//! by bilinear interpolation. Exact Pareto peeling is kept alongside as the
//! ground truth the continuum ranks are validated against.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::grid::{GridFunction, GridSpec};
use crate::hj_solver::{sweep_solve, SchemeConfig};
use crate::{Error, Result};

/// A point cloud with its affine normalization to the unit square retained.
#[derive(Debug, Clone)]
pub struct PointCloud {
    pub original: Vec<[f64; 2]>,
    pub normalized: Vec<[f64; 2]>,
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl PointCloud {
    /// Normalizes each axis by its min/max range. Rejects clouds with fewer
    /// than two points or a degenerate axis.
    pub fn from_points(points: Vec<[f64; 2]>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::invalid("point cloud needs at least two points"));
        }
        let mut min = [f64::INFINITY; 2];
        let mut max = [f64::NEG_INFINITY; 2];
        for p in &points {
            for a in 0..2 {
                if !p[a].is_finite() {
                    return Err(Error::invalid("point cloud contains non-finite values"));
                }
                min[a] = min[a].min(p[a]);
                max[a] = max[a].max(p[a]);
            }
        }
        for a in 0..2 {
            if max[a] <= min[a] {
                return Err(Error::invalid(format!(
                    "axis {} has zero range; cloud is degenerate",
                    a + 1
                )));
            }
        }
        let normalized = points
            .iter()
            .map(|p| {
                [
                    (p[0] - min[0]) / (max[0] - min[0]),
                    (p[1] - min[1]) / (max[1] - min[1]),
                ]
            })
            .collect();
        Ok(PointCloud {
            original: points,
            normalized,
            min,
            max,
        })
    }

    pub fn len(&self) -> usize {
        self.original.len()
    }

    pub fn is_empty(&self) -> bool {
        self.original.is_empty()
    }
}

/// Reads `x1,x2` rows (an optional `x1,x2` header is tolerated) and
/// normalizes. Malformed rows are rejected with their line number.
pub fn load_points(path: impl AsRef<Path>) -> Result<PointCloud> {
    let file = File::open(path)?;
    let mut points = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        let row = lineno + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if row == 1 && trimmed.to_ascii_lowercase().replace(' ', "") == "x1,x2" {
            continue;
        }
        let mut cells = trimmed.split(',');
        let (Some(a), Some(b), None) = (cells.next(), cells.next(), cells.next()) else {
            return Err(Error::invalid(format!("row {}: expected two columns", row)));
        };
        let parse = |s: &str| -> Result<f64> {
            let v: f64 = s
                .trim()
                .parse()
                .map_err(|_| Error::invalid(format!("row {}: non-numeric cell '{}'", row, s)))?;
            if !v.is_finite() {
                return Err(Error::invalid(format!("row {}: non-finite value", row)));
            }
            Ok(v)
        };
        points.push([parse(a)?, parse(b)?]);
    }
    PointCloud::from_points(points)
}

/// Cell-histogram density estimate on the grid's nodes.
///
/// The unit square is split into N×N cells; a cell's density is
/// `count / (M h²)`. Node `j` carries the density of cell `min(j, N-1)`
/// (the lower-corner cell, clamped at the top faces), so the cellwise mass
/// `h² Σ` over the N² lower-corner nodes is exactly one — see [`cell_mass`].
/// Each smoothing pass replaces every node by the mean of its in-range 3×3
/// neighborhood.
pub fn estimate_density(
    cloud: &PointCloud,
    spec: GridSpec,
    smoothing_passes: usize,
) -> Result<GridFunction> {
    if spec.dim() != 2 {
        return Err(Error::invalid("density estimation is two-dimensional"));
    }
    let n = spec.intervals();
    let m = cloud.len() as f64;
    let h = spec.h();
    let mut counts = vec![0u64; n * n];
    for p in &cloud.normalized {
        let cx = ((p[0] * n as f64).floor() as usize).min(n - 1);
        let cy = ((p[1] * n as f64).floor() as usize).min(n - 1);
        counts[cx * n + cy] += 1;
    }
    let scale = 1.0 / (m * h * h);
    let side = n + 1;
    let mut g = GridFunction::zeros(spec);
    for jx in 0..side {
        for jy in 0..side {
            let cx = jx.min(n - 1);
            let cy = jy.min(n - 1);
            g.values_mut()[jx * side + jy] = counts[cx * n + cy] as f64 * scale;
        }
    }
    for _ in 0..smoothing_passes {
        g = smooth_once(&g);
    }
    Ok(g)
}

fn smooth_once(g: &GridFunction) -> GridFunction {
    let spec = *g.spec();
    let side = spec.intervals() + 1;
    let mut out = GridFunction::zeros(spec);
    for jx in 0..side {
        for jy in 0..side {
            let mut acc = 0.0;
            let mut cnt = 0usize;
            for dx in -1i64..=1 {
                for dy in -1i64..=1 {
                    let (ax, ay) = (jx as i64 + dx, jy as i64 + dy);
                    if ax < 0 || ay < 0 || ax >= side as i64 || ay >= side as i64 {
                        continue;
                    }
                    acc += g.values()[ax as usize * side + ay as usize];
                    cnt += 1;
                }
            }
            out.values_mut()[jx * side + jy] = acc / cnt as f64;
        }
    }
    out
}

/// `h² Σ` of the density over the N² lower-corner nodes (each histogram cell
/// counted once); exactly one for an unsmoothed estimate.
pub fn cell_mass(g: &GridFunction) -> f64 {
    let spec = g.spec();
    let n = spec.intervals();
    let side = n + 1;
    let h = spec.h();
    let mut acc = 0.0;
    for jx in 0..n {
        for jy in 0..n {
            acc += g.values()[jx * side + jy];
        }
    }
    acc * h * h
}

/// Bilinear interpolation of a grid function at a point of the unit square.
pub fn bilinear(g: &GridFunction, p: [f64; 2]) -> f64 {
    let spec = g.spec();
    debug_assert_eq!(spec.dim(), 2);
    let n = spec.intervals();
    let side = n + 1;
    let cell = |c: f64| -> (usize, f64) {
        let scaled = (c * n as f64).clamp(0.0, n as f64);
        let idx = (scaled.floor() as usize).min(n - 1);
        (idx, scaled - idx as f64)
    };
    let (ix, tx) = cell(p[0]);
    let (iy, ty) = cell(p[1]);
    let at = |a: usize, b: usize| g.values()[a * side + b];
    (1.0 - tx) * (1.0 - ty) * at(ix, iy)
        + tx * (1.0 - ty) * at(ix + 1, iy)
        + (1.0 - tx) * ty * at(ix, iy + 1)
        + tx * ty * at(ix + 1, iy + 1)
}

/// Continuum rank of every cloud point: solve the scheme on the estimated
/// density, back-transform, and interpolate the solution at the points.
pub fn pde_rank(
    cloud: &PointCloud,
    density: &GridFunction,
    cfg: &SchemeConfig,
) -> Result<Vec<f64>> {
    let report = sweep_solve(density, cfg)?;
    Ok(cloud
        .normalized
        .iter()
        .map(|&p| bilinear(&report.u, p))
        .collect())
}

fn dominates(a: [f64; 2], b: [f64; 2]) -> bool {
    a[0] <= b[0] && a[1] <= b[1] && (a[0] < b[0] || a[1] < b[1])
}

/// Exact nondominated sorting by repeated peeling of minimal elements;
/// returns the 1-based layer of every point. Equal points share a layer.
///
/// One sort, then one linear scan per peel: within the points still active,
/// a point is minimal iff no strictly-left point has smaller-or-equal second
/// coordinate and it attains the minimum second coordinate of its equal-x
/// block.
pub fn pareto_peel(points: &[[f64; 2]]) -> Vec<usize> {
    let m = points.len();
    let mut layer = vec![0usize; m];
    let mut active: Vec<usize> = (0..m).collect();
    active.sort_by(|&a, &b| {
        points[a]
            .partial_cmp(&points[b])
            .expect("finite coordinates")
    });
    let mut current = 1usize;
    while !active.is_empty() {
        let mut survivors = Vec::new();
        let mut min_left = f64::INFINITY;
        let mut i = 0;
        while i < active.len() {
            let x1 = points[active[i]][0];
            let mut j = i;
            while j < active.len() && points[active[j]][0] == x1 {
                j += 1;
            }
            // Sorted by x2 within the block, so the block minimum is first.
            let block_min = points[active[i]][1];
            for &idx in &active[i..j] {
                let x2 = points[idx][1];
                if min_left <= x2 || x2 > block_min {
                    survivors.push(idx);
                } else {
                    layer[idx] = current;
                }
            }
            min_left = min_left.min(block_min);
            i = j;
        }
        active = survivors;
        current += 1;
    }
    layer
}

/// Quadratic-time reference peeling, kept for cross-checking the fast path.
pub fn pareto_peel_naive(points: &[[f64; 2]]) -> Vec<usize> {
    let m = points.len();
    let mut layer = vec![0usize; m];
    let mut active: Vec<usize> = (0..m).collect();
    let mut current = 1usize;
    while !active.is_empty() {
        let minimal: Vec<usize> = active
            .iter()
            .copied()
            .filter(|&p| {
                !active
                    .iter()
                    .any(|&q| q != p && dominates(points[q], points[p]))
            })
            .collect();
        for &p in &minimal {
            layer[p] = current;
        }
        active.retain(|p| !minimal.contains(p));
        current += 1;
    }
    layer
}

/// Spearman rank correlation with average ranks for ties.
pub fn compare_rankings(pde_rank: &[f64], exact_layer: &[usize]) -> Result<f64> {
    if pde_rank.len() != exact_layer.len() {
        return Err(Error::invalid("rank sequences differ in length"));
    }
    if pde_rank.len() < 2 {
        return Err(Error::invalid("rank correlation needs at least two points"));
    }
    let ra = average_ranks(pde_rank);
    let rb = average_ranks(&exact_layer.iter().map(|&l| l as f64).collect::<Vec<_>>());
    pearson(&ra, &rb)
}

fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("finite ranks"));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j < idx.len() && values[idx[j]] == values[idx[i]] {
            j += 1;
        }
        // 1-based ranks, ties share the group average.
        let avg = (i + 1 + j) as f64 / 2.0;
        for &k in &idx[i..j] {
            ranks[k] = avg;
        }
        i = j;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma).powi(2);
        vb += (y - mb).powi(2);
    }
    if va == 0.0 || vb == 0.0 {
        return Err(Error::invalid(
            "rank correlation undefined for constant ranks",
        ));
    }
    Ok(cov / (va * vb).sqrt())
}

/// Full pipeline result.
#[derive(Debug, Clone)]
pub struct RankResult {
    pub pde_rank: Vec<f64>,
    pub exact_layer: Vec<usize>,
    /// Spearman correlation between the two rankings.
    pub agreement: f64,
}

/// Estimate the density, solve, interpolate the ranks, peel exactly, and
/// compare.
pub fn rank_cloud(
    cloud: &PointCloud,
    intervals: usize,
    cfg: &SchemeConfig,
    smoothing_passes: usize,
) -> Result<RankResult> {
    let spec = GridSpec::new(2, intervals)?;
    let density = estimate_density(cloud, spec, smoothing_passes)?;
    let pde = pde_rank(cloud, &density, cfg)?;
    let layers = pareto_peel(&cloud.normalized);
    let agreement = compare_rankings(&pde, &layers)?;
    Ok(RankResult {
        pde_rank: pde,
        exact_layer: layers,
        agreement,
    })
}

/// Uniform random cloud in the unit square, reproducible from the seed.
pub fn synthetic_uniform_cloud(seed: u64, count: usize) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = (0..count)
        .map(|_| [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)])
        .collect();
    PointCloud::from_points(points).expect("random cloud is nondegenerate")
}
