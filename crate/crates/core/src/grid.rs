//! Uniform lattice on the unit cube `[0,1]^n` with spacing `h = 1/N`.
//!
//! Node coordinates are `x_i = j_i h`, `j_i = 0..=N`; reads outside the index
//! box return zero (the extension convention of the upwind schemes). Storage
//! is dense row-major with the last axis contiguous, and the single-pass
//! sweep order is plain lexicographic order, which visits every node after
//! all nodes reachable by decrementing one coordinate.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::{Error, Result};

/// Shape of the lattice: dimension `n` and interval count `N` per axis.
/// The spacing `h = 1/N` is computed once here and read everywhere else.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    dim: usize,
    intervals: usize,
    h: f64,
}

impl GridSpec {
    pub fn new(dim: usize, intervals: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("grid dimension must be positive"));
        }
        if intervals == 0 {
            return Err(Error::invalid("grid must have at least one interval"));
        }
        Ok(GridSpec {
            dim,
            intervals,
            h: 1.0 / intervals as f64,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn intervals(&self) -> usize {
        self.intervals
    }

    /// Grid spacing `1/N`.
    pub fn h(&self) -> f64 {
        self.h
    }

    /// `(N+1)^n`.
    pub fn node_count(&self) -> usize {
        (self.intervals + 1).pow(self.dim as u32)
    }

    /// Row-major strides, last axis contiguous.
    pub fn strides(&self) -> Vec<usize> {
        let side = self.intervals + 1;
        let mut s = vec![1usize; self.dim];
        for i in (0..self.dim.saturating_sub(1)).rev() {
            s[i] = s[i + 1] * side;
        }
        s
    }

    pub fn flat_index(&self, j: &MultiIndex) -> usize {
        debug_assert_eq!(j.components().len(), self.dim);
        let strides = self.strides();
        j.components()
            .iter()
            .zip(&strides)
            .map(|(c, s)| c * s)
            .sum()
    }

    /// Node coordinates `(j_1 h, ..., j_n h)`.
    pub fn coordinates(&self, j: &MultiIndex) -> Result<Vec<f64>> {
        if !self.contains(j) {
            return Err(Error::invalid(format!(
                "index {:?} out of range for N = {}",
                j.components(),
                self.intervals
            )));
        }
        let h = self.h();
        Ok(j.components().iter().map(|&c| c as f64 * h).collect())
    }

    /// Nearest lattice index to a point, clamped to the cube.
    pub fn nearest_index(&self, x: &[f64]) -> MultiIndex {
        debug_assert_eq!(x.len(), self.dim);
        let n = self.intervals as f64;
        MultiIndex::new(
            x.iter()
                .map(|&c| ((c * n).round().max(0.0) as usize).min(self.intervals))
                .collect(),
        )
    }

    pub fn contains(&self, j: &MultiIndex) -> bool {
        j.components().len() == self.dim && j.components().iter().all(|&c| c <= self.intervals)
    }
}

/// Lattice node index.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MultiIndex(Vec<usize>);

impl MultiIndex {
    pub fn new(components: Vec<usize>) -> Self {
        MultiIndex(components)
    }

    pub fn components(&self) -> &[usize] {
        &self.0
    }
}

impl From<Vec<usize>> for MultiIndex {
    fn from(v: Vec<usize>) -> Self {
        MultiIndex(v)
    }
}

/// Lexicographic single-pass order: every yielded node appears after all
/// nodes obtained by decrementing any single coordinate.
pub fn sweep_order(spec: &GridSpec) -> impl Iterator<Item = MultiIndex> + '_ {
    let mut odometer = vec![0usize; spec.dim];
    let mut done = false;
    std::iter::from_fn(move || {
        if done {
            return None;
        }
        let out = MultiIndex::new(odometer.clone());
        // Increment with carry, last axis fastest.
        let mut axis = spec.dim;
        loop {
            if axis == 0 {
                done = true;
                break;
            }
            axis -= 1;
            if odometer[axis] < spec.intervals {
                odometer[axis] += 1;
                break;
            }
            odometer[axis] = 0;
        }
        Some(out)
    })
}

/// True iff `j_i >= k` on every axis, i.e. the node lies in `[kh, 1]^n` where
/// a k-step backward stencil stays inside the cube.
pub fn in_filter_band(spec: &GridSpec, j: &MultiIndex, k: usize) -> bool {
    debug_assert!(spec.contains(j));
    j.components().iter().all(|&c| c >= k)
}

/// Scalar field sampled on the lattice, zero-extended outside it.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    spec: GridSpec,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn zeros(spec: GridSpec) -> Self {
        GridFunction {
            values: vec![0.0; spec.node_count()],
            spec,
        }
    }

    /// Samples `f` at every node.
    pub fn from_fn(spec: GridSpec, f: impl Fn(&[f64]) -> f64) -> Self {
        let mut g = GridFunction::zeros(spec);
        let h = spec.h();
        let mut x = vec![0.0; spec.dim()];
        for (flat, j) in sweep_order(&spec).enumerate() {
            for (xi, &c) in x.iter_mut().zip(j.components()) {
                *xi = c as f64 * h;
            }
            g.values[flat] = f(&x);
        }
        g
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn get(&self, j: &MultiIndex) -> f64 {
        self.values[self.spec.flat_index(j)]
    }

    pub fn set(&mut self, j: &MultiIndex, v: f64) {
        let i = self.spec.flat_index(j);
        self.values[i] = v;
    }

    /// Total function on signed indices: stored value in range, zero outside.
    pub fn read_extended(&self, j: &[i64]) -> f64 {
        debug_assert_eq!(j.len(), self.spec.dim());
        let n = self.spec.intervals() as i64;
        let mut flat = 0usize;
        for (&c, s) in j.iter().zip(self.spec.strides()) {
            if c < 0 || c > n {
                return 0.0;
            }
            flat += c as usize * s;
        }
        self.values[flat]
    }

    /// Binary layout: two little-endian u64 (dimension, intervals) followed
    /// by the node values as little-endian f64 in row-major order.
    pub fn write_binary(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(&(self.spec.dim() as u64).to_le_bytes())?;
        w.write_all(&(self.spec.intervals() as u64).to_le_bytes())?;
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_binary(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut r = BufReader::new(File::open(path)?);
        let mut buf8 = [0u8; 8];
        r.read_exact(&mut buf8)?;
        let dim = u64::from_le_bytes(buf8);
        r.read_exact(&mut buf8)?;
        let intervals = u64::from_le_bytes(buf8);
        // Validate the header against the file size before sizing anything;
        // a corrupt header must not drive the allocation.
        if dim == 0 || dim > 32 || intervals == 0 {
            return Err(Error::invalid("grid header is implausible"));
        }
        let side = intervals + 1;
        let count = (0..dim)
            .try_fold(1u64, |acc, _| acc.checked_mul(side))
            .filter(|&c| c < (1 << 40))
            .ok_or_else(|| Error::invalid("grid header is implausible"))?;
        let expected_len = 16 + 8 * count;
        if std::fs::metadata(path)?.len() != expected_len {
            return Err(Error::invalid(format!(
                "grid file should be {} bytes for a {}-dimensional grid with {} intervals",
                expected_len, dim, intervals
            )));
        }
        let spec = GridSpec::new(dim as usize, intervals as usize)?;
        let mut values = Vec::with_capacity(spec.node_count());
        for _ in 0..spec.node_count() {
            r.read_exact(&mut buf8)?;
            values.push(f64::from_le_bytes(buf8));
        }
        Ok(GridFunction { spec, values })
    }

    /// Debug CSV `j1,...,jn,value`, one node per row in sweep order.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        let labels: Vec<String> = (1..=self.spec.dim()).map(|i| format!("j{}", i)).collect();
        writeln!(w, "{},value", labels.join(","))?;
        for (flat, j) in sweep_order(&self.spec).enumerate() {
            let idx: Vec<String> = j.components().iter().map(|c| c.to_string()).collect();
            writeln!(w, "{},{}", idx.join(","), self.values[flat])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn sweep_order_small_grids() {
        let spec = GridSpec::new(1, 2).unwrap();
        let order: Vec<Vec<usize>> = sweep_order(&spec)
            .map(|j| j.components().to_vec())
            .collect();
        assert_eq!(order, vec![vec![0], vec![1], vec![2]]);

        let spec = GridSpec::new(2, 1).unwrap();
        let order: Vec<Vec<usize>> = sweep_order(&spec)
            .map(|j| j.components().to_vec())
            .collect();
        assert_eq!(order, vec![vec![0, 0], vec![0, 1], vec![1, 0], vec![1, 1]]);
    }

    #[test]
    fn sweep_order_respects_dependencies() {
        let spec = GridSpec::new(3, 3).unwrap();
        let mut seen = std::collections::HashSet::new();
        let mut count = 0;
        for j in sweep_order(&spec) {
            for axis in 0..3 {
                if j.components()[axis] > 0 {
                    let mut dep = j.components().to_vec();
                    dep[axis] -= 1;
                    assert!(seen.contains(&dep), "{:?} before {:?}", j, dep);
                }
            }
            seen.insert(j.components().to_vec());
            count += 1;
        }
        assert_eq!(count, spec.node_count());
    }

    #[test]
    fn read_extended_conventions() {
        let spec = GridSpec::new(2, 2).unwrap();
        let g = GridFunction::from_fn(spec, |x| 1.0 + x[0] + 10.0 * x[1]);
        assert_eq!(g.read_extended(&[1, 2]), 1.0 + 0.5 + 10.0);
        assert_eq!(g.read_extended(&[-1, 0]), 0.0);
        assert_eq!(g.read_extended(&[0, 3]), 0.0);
        // No fault anywhere within ±2N of range.
        for a in -4i64..=4 {
            for b in -4i64..=4 {
                let _ = g.read_extended(&[a, b]);
            }
        }
    }

    #[test]
    fn coordinates_examples() {
        let spec = GridSpec::new(2, 4).unwrap();
        let c = spec.coordinates(&MultiIndex::new(vec![0, 0])).unwrap();
        assert_eq!(c, vec![0.0, 0.0]);
        let c = spec.coordinates(&MultiIndex::new(vec![4, 4])).unwrap();
        assert_eq!(c, vec![1.0, 1.0]);
        let c = spec.coordinates(&MultiIndex::new(vec![1, 3])).unwrap();
        assert_eq!(c, vec![0.25, 0.75]);
        assert!(spec.coordinates(&MultiIndex::new(vec![5, 0])).is_err());
    }

    #[test]
    fn coordinate_roundtrip_all_nodes() {
        let spec = GridSpec::new(2, 7).unwrap();
        for j in sweep_order(&spec) {
            let x = spec.coordinates(&j).unwrap();
            assert_eq!(spec.nearest_index(&x), j);
        }
    }

    #[test]
    fn filter_band_membership() {
        let spec = GridSpec::new(2, 8).unwrap();
        assert!(in_filter_band(&spec, &MultiIndex::new(vec![2, 2]), 2));
        assert!(!in_filter_band(&spec, &MultiIndex::new(vec![1, 5]), 2));
        assert!(!in_filter_band(&spec, &MultiIndex::new(vec![0, 0]), 1));
    }

    #[test]
    fn binary_roundtrip() {
        let spec = GridSpec::new(2, 5).unwrap();
        let g = GridFunction::from_fn(spec, |x| (x[0] - 0.3) * (x[1] + 0.7));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.grid");
        g.write_binary(&path).unwrap();
        let back = GridFunction::read_binary(&path).unwrap();
        assert_eq!(g, back);
        // Header is 16 bytes, payload 8 bytes per node.
        let len = std::fs::metadata(&path).unwrap().len();
        assert_eq!(len, 16 + 8 * spec.node_count() as u64);
    }

    #[test]
    fn binary_rejects_corrupt_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.grid");
        let spec = GridSpec::new(2, 3).unwrap();
        GridFunction::zeros(spec).write_binary(&path).unwrap();

        // Truncated payload.
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 4]).unwrap();
        assert!(GridFunction::read_binary(&path).is_err());

        // Trailing junk.
        let mut longer = bytes.clone();
        longer.extend_from_slice(&[0u8; 8]);
        std::fs::write(&path, &longer).unwrap();
        assert!(GridFunction::read_binary(&path).is_err());

        // Absurd header must not drive an allocation.
        let mut huge = Vec::new();
        huge.extend_from_slice(&u64::MAX.to_le_bytes());
        huge.extend_from_slice(&u64::MAX.to_le_bytes());
        std::fs::write(&path, &huge).unwrap();
        assert!(GridFunction::read_binary(&path).is_err());
    }

    #[test]
    fn csv_export_shape() {
        let spec = GridSpec::new(2, 1).unwrap();
        let g = GridFunction::from_fn(spec, |x| x[0] + x[1]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.csv");
        g.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "j1,j2,value");
        assert_eq!(lines.len(), 1 + spec.node_count());
        assert_eq!(lines[1], "0,0,0");
        assert_eq!(lines[4], "1,1,2");
    }

    proptest! {
        #[test]
        fn roundtrip_random_points(dim in 1usize..=3, n in 1usize..=16, seed in 0u64..1000) {
            let spec = GridSpec::new(dim, n).unwrap();
            // Index from a hashed seed, then coordinates, then back.
            let mut j = Vec::with_capacity(dim);
            let mut s = seed;
            for _ in 0..dim {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                j.push((s >> 33) as usize % (n + 1));
            }
            let j = MultiIndex::new(j);
            let x = spec.coordinates(&j).unwrap();
            prop_assert_eq!(spec.nearest_index(&x), j);
        }
    }
}
