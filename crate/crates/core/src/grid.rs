//! Nodal fields on axis-aligned boxes.

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{ensure_finite, Error, Result};

const FIELD_MAGIC: &[u8; 4] = b"SSGF";
const FIELD_VERSION: u32 = 1;

/// A map `Omega -> R^M` sampled at the nodes of a uniform grid on a box.
///
/// Node values are stored row-major (last spatial axis fastest), `M` values per
/// node. Off-grid values come from multilinear interpolation; cells are the
/// boxes spanned by neighbouring nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    lo: Vec<f64>,
    hi: Vec<f64>,
    counts: Vec<usize>,
    phase_dim: usize,
    values: Vec<f64>,
}

impl GridField {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, counts: Vec<usize>, phase_dim: usize, values: Vec<f64>) -> Result<Self> {
        if lo.is_empty() || lo.len() != hi.len() || lo.len() != counts.len() {
            return Err(Error::InvalidArgument("box bounds and counts must share the spatial dimension".into()));
        }
        if counts.iter().any(|&c| c < 2) {
            return Err(Error::InvalidArgument("every axis needs at least 2 nodes".into()));
        }
        ensure_finite(&lo, "box")?;
        ensure_finite(&hi, "box")?;
        if lo.iter().zip(&hi).any(|(l, h)| !(h > l)) {
            return Err(Error::InvalidArgument("box must satisfy lo < hi on every axis".into()));
        }
        if phase_dim == 0 {
            return Err(Error::InvalidArgument("phase dimension must be positive".into()));
        }
        let nodes: usize = counts.iter().product();
        if values.len() != nodes * phase_dim {
            return Err(Error::InvalidArgument(format!("expected {} values, got {}", nodes * phase_dim, values.len())));
        }
        ensure_finite(&values, "field values")?;
        Ok(Self { lo, hi, counts, phase_dim, values })
    }

    pub fn constant(lo: Vec<f64>, hi: Vec<f64>, counts: Vec<usize>, value: &[f64]) -> Result<Self> {
        let nodes: usize = counts.iter().product();
        let values = value.iter().copied().cycle().take(nodes * value.len()).collect();
        Self::new(lo, hi, counts, value.len(), values)
    }

    /// Fill from `f(x, out)` evaluated at every node.
    pub fn from_fn(
        lo: Vec<f64>,
        hi: Vec<f64>,
        counts: Vec<usize>,
        phase_dim: usize,
        mut f: impl FnMut(&[f64], &mut [f64]),
    ) -> Result<Self> {
        let template = Self::constant(lo, hi, counts, &vec![0.0; phase_dim])?;
        let mut values = vec![0.0; template.values.len()];
        let mut x = vec![0.0; template.spatial_dim()];
        for node in 0..template.node_count() {
            template.node_coords(node, &mut x);
            f(&x, &mut values[node * phase_dim..(node + 1) * phase_dim]);
        }
        Self::new(template.lo, template.hi, template.counts, phase_dim, values)
    }

    /// Same grid, new values.
    pub fn with_values(&self, phase_dim: usize, values: Vec<f64>) -> Result<Self> {
        Self::new(self.lo.clone(), self.hi.clone(), self.counts.clone(), phase_dim, values)
    }

    pub fn spatial_dim(&self) -> usize {
        self.counts.len()
    }

    pub fn phase_dim(&self) -> usize {
        self.phase_dim
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn spacing(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).zip(&self.counts).map(|((l, h), c)| (h - l) / (*c - 1) as f64).collect()
    }

    pub fn max_spacing(&self) -> f64 {
        self.spacing().into_iter().fold(0.0, f64::max)
    }

    pub fn node_count(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn volume(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(l, h)| h - l).product()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn value(&self, node: usize) -> &[f64] {
        &self.values[node * self.phase_dim..(node + 1) * self.phase_dim]
    }

    pub fn multi_index(&self, mut node: usize, out: &mut [usize]) {
        for d in (0..self.counts.len()).rev() {
            out[d] = node % self.counts[d];
            node /= self.counts[d];
        }
    }

    pub fn linear_index(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.counts).fold(0, |acc, (i, n)| acc * n + i)
    }

    pub fn node_coords(&self, node: usize, out: &mut [f64]) {
        let mut rem = node;
        for d in (0..self.counts.len()).rev() {
            let i = rem % self.counts[d];
            rem /= self.counts[d];
            let h = (self.hi[d] - self.lo[d]) / (self.counts[d] - 1) as f64;
            out[d] = if i + 1 == self.counts[d] { self.hi[d] } else { self.lo[d] + i as f64 * h };
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().zip(self.lo.iter().zip(&self.hi)).all(|(x, (l, h))| *x >= *l && *x <= *h)
    }

    /// Multilinear interpolation; points outside the box are clamped onto it.
    pub fn interpolate(&self, x: &[f64], out: &mut [f64]) {
        let n = self.counts.len();
        let mut base = [0usize; 8];
        let mut frac = [0.0f64; 8];
        assert!(n <= 8, "interpolation supports up to 8 spatial dimensions");
        for d in 0..n {
            let h = (self.hi[d] - self.lo[d]) / (self.counts[d] - 1) as f64;
            let s = ((x[d] - self.lo[d]) / h).clamp(0.0, (self.counts[d] - 1) as f64);
            let i = (s.floor() as usize).min(self.counts[d] - 2);
            base[d] = i;
            frac[d] = s - i as f64;
        }
        out.iter_mut().for_each(|o| *o = 0.0);
        let mut idx = [0usize; 8];
        for corner in 0..(1usize << n) {
            let mut w = 1.0;
            for d in 0..n {
                let upper = corner >> d & 1 == 1;
                idx[d] = base[d] + upper as usize;
                w *= if upper { frac[d] } else { 1.0 - frac[d] };
            }
            if w == 0.0 {
                continue;
            }
            let node = self.linear_index(&idx[..n]);
            for (o, v) in out.iter_mut().zip(self.value(node)) {
                *o += w * v;
            }
        }
    }

    /// Nodal weights of the tensor trapezoid rule (they sum to the box volume).
    pub fn trapezoid_weights(&self) -> Vec<f64> {
        let h = self.spacing();
        let mut idx = vec![0usize; self.spatial_dim()];
        (0..self.node_count())
            .map(|node| {
                self.multi_index(node, &mut idx);
                idx.iter()
                    .zip(&self.counts)
                    .zip(&h)
                    .map(|((i, c), h)| if *i == 0 || *i + 1 == *c { 0.5 * h } else { *h })
                    .product()
            })
            .collect()
    }

    /// Largest pointwise norm `max_x |u(x)|`.
    pub fn sup_norm(&self) -> f64 {
        self.values
            .chunks_exact(self.phase_dim)
            .map(|v| v.iter().map(|c| c * c).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    /// Discrete `||grad u||_{L^2}^2` with the per-cell edge-difference stencil.
    pub fn dirichlet_energy(&self) -> f64 {
        let stencil = CellStencil::new(&self.counts, &self.spacing());
        let m = self.phase_dim;
        let mut total = 0.0;
        stencil.for_each_cell(|base, _| {
            total += stencil.volume * stencil.grad_sq(&self.values, m, base);
        });
        total
    }

    /// `L^2(Omega)` distance to another field on the same grid (trapezoid rule).
    pub fn l2_distance(&self, other: &GridField) -> Result<f64> {
        if self.counts != other.counts || self.phase_dim != other.phase_dim {
            return Err(Error::InvalidArgument("fields live on different grids".into()));
        }
        let m = self.phase_dim;
        let w = self.trapezoid_weights();
        let s: f64 = w
            .iter()
            .enumerate()
            .map(|(i, w)| w * (0..m).map(|k| (self.values[i * m + k] - other.values[i * m + k]).powi(2)).sum::<f64>())
            .sum();
        Ok(s.sqrt())
    }

    pub fn write_binary(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(FIELD_MAGIC)?;
        w.write_u32::<LittleEndian>(FIELD_VERSION)?;
        w.write_u32::<LittleEndian>(self.spatial_dim() as u32)?;
        w.write_u32::<LittleEndian>(self.phase_dim as u32)?;
        for &c in &self.counts {
            w.write_u64::<LittleEndian>(c as u64)?;
        }
        for (l, h) in self.lo.iter().zip(&self.hi) {
            w.write_f64::<LittleEndian>(*l)?;
            w.write_f64::<LittleEndian>(*h)?;
        }
        for v in &self.values {
            w.write_f64::<LittleEndian>(*v)?;
        }
        Ok(())
    }

    pub fn read_binary(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != FIELD_MAGIC {
            return Err(Error::Format("not a grid field file".into()));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != FIELD_VERSION {
            return Err(Error::Format(format!("unsupported grid field version {version}")));
        }
        let n = r.read_u32::<LittleEndian>()? as usize;
        let m = r.read_u32::<LittleEndian>()? as usize;
        if n == 0 || n > 8 || m == 0 {
            return Err(Error::Format(format!("bad dimensions N={n} M={m}")));
        }
        let counts =
            (0..n).map(|_| r.read_u64::<LittleEndian>().map(|c| c as usize)).collect::<std::io::Result<Vec<_>>>()?;
        let mut lo = Vec::with_capacity(n);
        let mut hi = Vec::with_capacity(n);
        for _ in 0..n {
            lo.push(r.read_f64::<LittleEndian>()?);
            hi.push(r.read_f64::<LittleEndian>()?);
        }
        let total = counts.iter().product::<usize>() * m;
        let mut values = vec![0.0; total];
        r.read_f64_into::<LittleEndian>(&mut values)?;
        Self::new(lo, hi, counts, m, values)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_binary(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_binary(&mut std::io::BufReader::new(std::fs::File::open(path)?))
    }

    /// One row per node: coordinates `x1..xN` then components `u1..uM`.
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        if self.spatial_dim() > 2 {
            return Err(Error::UnsupportedDimension(self.spatial_dim()));
        }
        let mut out = csv::Writer::from_writer(w);
        let mut header: Vec<String> = (1..=self.spatial_dim()).map(|d| format!("x{d}")).collect();
        header.extend((1..=self.phase_dim).map(|k| format!("u{k}")));
        out.write_record(&header)?;
        let mut x = vec![0.0; self.spatial_dim()];
        for node in 0..self.node_count() {
            self.node_coords(node, &mut x);
            let row: Vec<String> = x.iter().chain(self.value(node)).map(|v| v.to_string()).collect();
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Cell geometry shared by every per-cell quadrature: corner offsets, and for
/// each axis the corner pairs forming the edges parallel to it.
#[derive(Debug, Clone)]
pub(crate) struct CellStencil {
    pub counts: Vec<usize>,
    pub spacing: Vec<f64>,
    pub volume: f64,
    pub corners: Vec<usize>,
    pub edges: Vec<Vec<(usize, usize)>>,
}

impl CellStencil {
    pub fn new(counts: &[usize], spacing: &[f64]) -> Self {
        let n = counts.len();
        let mut strides = vec![1usize; n];
        for d in (0..n.saturating_sub(1)).rev() {
            strides[d] = strides[d + 1] * counts[d + 1];
        }
        let corners: Vec<usize> =
            (0..(1usize << n)).map(|c| (0..n).filter(|d| c >> d & 1 == 1).map(|d| strides[d]).sum()).collect();
        let edges = (0..n)
            .map(|d| {
                (0..(1usize << n)).filter(|c| c >> d & 1 == 0).map(|c| (corners[c], corners[c | 1 << d])).collect()
            })
            .collect();
        Self { counts: counts.to_vec(), spacing: spacing.to_vec(), volume: spacing.iter().product(), corners, edges }
    }

    /// Calls `f(base_node, cell_multi_index)` for every cell.
    pub fn for_each_cell(&self, mut f: impl FnMut(usize, &[usize])) {
        let n = self.counts.len();
        let mut idx = vec![0usize; n];
        let cells: usize = self.counts.iter().map(|c| c - 1).product();
        let mut strides = vec![1usize; n];
        for d in (0..n.saturating_sub(1)).rev() {
            strides[d] = strides[d + 1] * self.counts[d + 1];
        }
        for _ in 0..cells {
            let base: usize = idx.iter().zip(&strides).map(|(i, s)| i * s).sum();
            f(base, &idx);
            for d in (0..n).rev() {
                idx[d] += 1;
                if idx[d] + 1 < self.counts[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
    }

    /// Cell average of the nodal values (the multilinear interpolant at the centre).
    pub fn center_value(&self, values: &[f64], m: usize, base: usize, out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        let w = 1.0 / self.corners.len() as f64;
        for &c in &self.corners {
            for k in 0..m {
                out[k] += w * values[(base + c) * m + k];
            }
        }
    }

    /// `|grad u|^2` on a cell: per axis, the mean over parallel edges of the squared difference quotient.
    pub fn grad_sq(&self, values: &[f64], m: usize, base: usize) -> f64 {
        let mut total = 0.0;
        for (d, edges) in self.edges.iter().enumerate() {
            let inv_h2 = 1.0 / (self.spacing[d] * self.spacing[d]);
            let w = 1.0 / edges.len() as f64;
            for &(p, q) in edges {
                for k in 0..m {
                    let diff = values[(base + q) * m + k] - values[(base + p) * m + k];
                    total += w * diff * diff * inv_h2;
                }
            }
        }
        total
    }

    /// Adds `scale * d(grad_sq)/d(values)` for this cell into `grad`.
    pub fn add_grad_sq_gradient(&self, values: &[f64], m: usize, base: usize, scale: f64, grad: &mut [f64]) {
        for (d, edges) in self.edges.iter().enumerate() {
            let c = scale * 2.0 / (self.spacing[d] * self.spacing[d] * edges.len() as f64);
            for &(p, q) in edges {
                for k in 0..m {
                    let diff = values[(base + q) * m + k] - values[(base + p) * m + k];
                    grad[(base + q) * m + k] += c * diff;
                    grad[(base + p) * m + k] -= c * diff;
                }
            }
        }
    }
}
