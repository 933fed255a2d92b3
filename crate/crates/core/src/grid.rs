//! Interior lattices, grid fields and the discrete Dirichlet calculus.
//!
//! Nodes are lattice points strictly inside the domain. Stencil arms that
//! leave the domain are cut where they cross the boundary; the cut fraction
//! θ ∈ (0, 1] enters both the Laplacian and the Dirichlet form as a 1/θ
//! weight, so that ⟨u, v⟩ = h^n Σ v (−Δ_h u) holds exactly.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;

use crate::domain::Domain;
use crate::error::{Error, Result};
use crate::reduce::{chunked_sum, dot, CHUNK};

pub const DIM: usize = 3;
const NONE: u32 = u32::MAX;
const MAGIC: &[u8; 4] = b"CHQF";
const FORMAT_VERSION: u32 = 1;

/// Unit step of arm `d`: +x, −x, +y, −y, +z, −z.
pub const ARMS: [([i64; 3], usize, f64); 6] = [
    ([1, 0, 0], 0, 1.0),
    ([-1, 0, 0], 0, -1.0),
    ([0, 1, 0], 1, 1.0),
    ([0, -1, 0], 1, -1.0),
    ([0, 0, 1], 2, 1.0),
    ([0, 0, -1], 2, -1.0),
];

#[derive(Debug)]
pub struct Grid {
    domain: Domain,
    h: f64,
    anchor: [f64; 3],
    kmin: [i64; 3],
    dims: [usize; 3],
    nodes: Vec<[i64; 3]>,
    lookup: Vec<u32>,
    nbr: Vec<[u32; 6]>,
    theta: Vec<[f64; 6]>,
    diag: Vec<f64>,
}

/// Lattice of interior nodes at mesh width `h`, ordered lexicographically
/// in (k_x, k_y, k_z).
pub fn make_grid(domain: &Domain, h: f64) -> Result<Arc<Grid>> {
    if domain.dim() != DIM {
        return Err(Error::Unsupported(format!(
            "grids are three-dimensional, domain has dimension {}",
            domain.dim()
        )));
    }
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::domain("mesh width must be positive"));
    }
    if h > 2.0 * domain.inradius() {
        return Err(Error::EmptyGrid { h });
    }
    let a = domain.anchor();
    let anchor = [a[0], a[1], a[2]];
    let (lo, hi) = domain.bounding_box();
    let mut kmin = [0i64; 3];
    let mut dims = [0usize; 3];
    for i in 0..DIM {
        let k0 = ((lo[i] - anchor[i]) / h).floor() as i64;
        let k1 = ((hi[i] - anchor[i]) / h).ceil() as i64;
        kmin[i] = k0;
        dims[i] = (k1 - k0 + 1) as usize;
    }
    let total = dims[0] * dims[1] * dims[2];
    let mut lookup = vec![NONE; total];
    let mut nodes = Vec::new();
    // Nodes within 1e-9·h of the boundary are dropped so that θ stays bounded below.
    let guard = 1e-9 * h;
    for i in 0..dims[0] {
        for j in 0..dims[1] {
            for k in 0..dims[2] {
                let key = [kmin[0] + i as i64, kmin[1] + j as i64, kmin[2] + k as i64];
                let x = position(&anchor, h, &key);
                if domain.boundary_distance(&x) > guard {
                    lookup[(i * dims[1] + j) * dims[2] + k] = nodes.len() as u32;
                    nodes.push(key);
                }
            }
        }
    }
    if nodes.is_empty() {
        return Err(Error::EmptyGrid { h });
    }
    let mut grid = Grid {
        domain: domain.clone(),
        h,
        anchor,
        kmin,
        dims,
        nodes,
        lookup,
        nbr: Vec::new(),
        theta: Vec::new(),
        diag: Vec::new(),
    };
    let (nbr, theta): (Vec<_>, Vec<_>) = (0..grid.nodes.len())
        .into_par_iter()
        .map(|idx| {
            let key = grid.nodes[idx];
            let x = position(&anchor, h, &key);
            let mut nb = [NONE; 6];
            let mut th = [1.0; 6];
            for (d, (step, axis, sign)) in ARMS.iter().enumerate() {
                let other = [key[0] + step[0], key[1] + step[1], key[2] + step[2]];
                match grid.index_of(&other) {
                    Some(j) => nb[d] = j as u32,
                    None => {
                        let t = grid.domain.axis_crossing(&x, *axis, *sign);
                        th[d] = (t / h).clamp(1e-12, 1.0);
                    }
                }
            }
            (nb, th)
        })
        .unzip();
    grid.diag = nbr
        .iter()
        .zip(&theta)
        .map(|(nb, th): (&[u32; 6], &[f64; 6])| {
            (0..6).map(|d| if nb[d] == NONE { 1.0 / th[d] } else { 1.0 }).sum()
        })
        .collect();
    grid.nbr = nbr;
    grid.theta = theta;
    Ok(Arc::new(grid))
}

fn position(anchor: &[f64; 3], h: f64, key: &[i64; 3]) -> [f64; 3] {
    [
        anchor[0] + h * key[0] as f64,
        anchor[1] + h * key[1] as f64,
        anchor[2] + h * key[2] as f64,
    ]
}

/// One stencil arm that leaves the domain.
#[derive(Debug, Clone, Copy)]
pub struct CutArm {
    pub node: usize,
    pub theta: f64,
    pub point: [f64; 3],
}

impl Grid {
    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Quadrature weight per node.
    pub fn weight(&self) -> f64 {
        self.h.powi(DIM as i32)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn lattice_key(&self, i: usize) -> [i64; 3] {
        self.nodes[i]
    }

    /// Offset of node `i` inside the bounding lattice box.
    pub fn box_offset(&self, i: usize) -> [usize; 3] {
        let k = self.nodes[i];
        [
            (k[0] - self.kmin[0]) as usize,
            (k[1] - self.kmin[1]) as usize,
            (k[2] - self.kmin[2]) as usize,
        ]
    }

    pub fn position(&self, i: usize) -> [f64; 3] {
        position(&self.anchor, self.h, &self.nodes[i])
    }

    pub fn positions(&self) -> impl Iterator<Item = [f64; 3]> + '_ {
        (0..self.len()).map(|i| self.position(i))
    }

    pub fn index_of(&self, key: &[i64; 3]) -> Option<usize> {
        let mut off = [0usize; 3];
        for a in 0..DIM {
            let o = key[a] - self.kmin[a];
            if o < 0 || o as usize >= self.dims[a] {
                return None;
            }
            off[a] = o as usize;
        }
        let v = self.lookup[(off[0] * self.dims[1] + off[1]) * self.dims[2] + off[2]];
        (v != NONE).then_some(v as usize)
    }

    /// Node nearest to `x`, if that lattice point is interior.
    pub fn nearest_node(&self, x: &[f64]) -> Option<usize> {
        let key = [
            ((x[0] - self.anchor[0]) / self.h).round() as i64,
            ((x[1] - self.anchor[1]) / self.h).round() as i64,
            ((x[2] - self.anchor[2]) / self.h).round() as i64,
        ];
        self.index_of(&key)
    }

    pub fn neighbor(&self, i: usize, arm: usize) -> Option<usize> {
        let j = self.nbr[i][arm];
        (j != NONE).then_some(j as usize)
    }

    pub fn arm_theta(&self, i: usize, arm: usize) -> f64 {
        self.theta[i][arm]
    }

    /// Stencil diagonal of h²(−Δ_h).
    pub fn diagonal(&self) -> &[f64] {
        &self.diag
    }

    pub fn cut_arms(&self) -> Vec<CutArm> {
        let mut out = Vec::new();
        for i in 0..self.len() {
            let x = self.position(i);
            for (d, (_, axis, sign)) in ARMS.iter().enumerate() {
                if self.nbr[i][d] == NONE {
                    let th = self.theta[i][d];
                    let mut p = x;
                    p[*axis] += sign * th * self.h;
                    out.push(CutArm {
                        node: i,
                        theta: th,
                        point: p,
                    });
                }
            }
        }
        out
    }

    /// out = h²(−Δ_h u) with homogeneous Dirichlet data.
    pub fn apply_scaled_laplacian(&self, u: &[f64], out: &mut [f64]) {
        out.par_chunks_mut(CHUNK).enumerate().for_each(|(c, chunk)| {
            let base = c * CHUNK;
            for (o, slot) in chunk.iter_mut().enumerate() {
                let i = base + o;
                let nb = &self.nbr[i];
                let mut s = self.diag[i] * u[i];
                for &j in nb {
                    if j != NONE {
                        s -= u[j as usize];
                    }
                }
                *slot = s;
            }
        });
    }

    /// Right-hand side contribution of Dirichlet data `g`: h⁻² Σ_cut g(x_b)/θ.
    pub fn boundary_load<F>(&self, g: F) -> Vec<f64>
    where
        F: Fn(&[f64; 3]) -> f64 + Sync,
    {
        let inv_h2 = 1.0 / (self.h * self.h);
        (0..self.len())
            .into_par_iter()
            .map(|i| {
                let mut s = 0.0;
                for d in 0..6 {
                    if self.nbr[i][d] == NONE {
                        let th = self.theta[i][d];
                        let (_, axis, sign) = ARMS[d];
                        let mut p = self.position(i);
                        p[axis] += sign * th * self.h;
                        s += g(&p) / th;
                    }
                }
                s * inv_h2
            })
            .collect()
    }

    /// h^{n−2}[Σ_edges (u_i−u_j)(v_i−v_j) + Σ_cut u_i v_i/θ].
    fn dirichlet_form(&self, u: &[f64], v: &[f64]) -> f64 {
        let s = chunked_sum(self.len(), |i| {
            let nb = &self.nbr[i];
            let th = &self.theta[i];
            let mut s = 0.0;
            for d in 0..6 {
                let j = nb[d];
                if j == NONE {
                    s += u[i] * v[i] / th[d];
                } else if d % 2 == 0 {
                    let j = j as usize;
                    s += (u[i] - u[j]) * (v[i] - v[j]);
                }
            }
            s
        });
        s * self.h.powi(DIM as i32 - 2)
    }

    /// Discrete ∫|∇u|² for a field whose trace on ∂Ω is `g`.
    pub fn dirichlet_energy_with_trace<F>(&self, u: &[f64], g: F) -> f64
    where
        F: Fn(&[f64; 3]) -> f64 + Sync,
    {
        let s = chunked_sum(self.len(), |i| {
            let mut s = 0.0;
            for d in 0..6 {
                let j = self.nbr[i][d];
                if j == NONE {
                    let th = self.theta[i][d];
                    let (_, axis, sign) = ARMS[d];
                    let mut p = self.position(i);
                    p[axis] += sign * th * self.h;
                    let e = u[i] - g(&p);
                    s += e * e / th;
                } else if d % 2 == 0 {
                    let e = u[i] - u[j as usize];
                    s += e * e;
                }
            }
            s
        });
        s * self.h.powi(DIM as i32 - 2)
    }

    pub fn same_as(&self, other: &Grid) -> bool {
        std::ptr::eq(self, other)
            || (self.h == other.h && self.domain == other.domain && self.len() == other.len())
    }
}

#[derive(Debug, Clone)]
pub struct ScalarField {
    grid: Arc<Grid>,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: &Arc<Grid>) -> Self {
        ScalarField {
            grid: grid.clone(),
            values: vec![0.0; grid.len()],
        }
    }

    pub fn from_values(grid: &Arc<Grid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("field values must be finite"));
        }
        Ok(ScalarField {
            grid: grid.clone(),
            values,
        })
    }

    pub fn from_fn<F>(grid: &Arc<Grid>, f: F) -> Self
    where
        F: Fn(&[f64; 3]) -> f64 + Sync,
    {
        let values = (0..grid.len())
            .into_par_iter()
            .map(|i| f(&grid.position(i)))
            .collect();
        ScalarField {
            grid: grid.clone(),
            values,
        }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
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

    pub fn check_same_grid(&self, other: &ScalarField) -> Result<()> {
        if self.grid.same_as(&other.grid) {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }

    pub fn map<F: Fn(f64) -> f64 + Sync>(&self, f: F) -> Self {
        ScalarField {
            grid: self.grid.clone(),
            values: self.values.par_iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        self.map(|v| c * v)
    }

    /// self + c·other
    pub fn axpy(&self, c: f64, other: &ScalarField) -> Result<Self> {
        self.check_same_grid(other)?;
        Ok(ScalarField {
            grid: self.grid.clone(),
            values: self.values.iter().zip(&other.values).map(|(a, b)| a + c * b).collect(),
        })
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, v) in self.values.iter().enumerate() {
            if *v > self.values[best] {
                best = i;
            }
        }
        best
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == 0.0)
    }

    /// Σ u v h^n
    pub fn l2_inner(&self, other: &ScalarField) -> Result<f64> {
        self.check_same_grid(other)?;
        Ok(dot(&self.values, &other.values) * self.grid.weight())
    }

    pub fn dirichlet_norm(&self) -> f64 {
        self.grid.dirichlet_form(&self.values, &self.values).max(0.0).sqrt()
    }

    /// −Δ_h u with the zero extension outside the domain.
    pub fn neg_laplacian(&self) -> Self {
        let mut out = vec![0.0; self.values.len()];
        self.grid.apply_scaled_laplacian(&self.values, &mut out);
        let inv_h2 = 1.0 / (self.grid.h * self.grid.h);
        out.iter_mut().for_each(|v| *v *= inv_h2);
        ScalarField {
            grid: self.grid.clone(),
            values: out,
        }
    }

    /// Trilinear interpolation of the zero extension.
    pub fn interpolate(&self, x: &[f64]) -> f64 {
        let g = &self.grid;
        let mut base = [0i64; 3];
        let mut frac = [0.0; 3];
        for a in 0..DIM {
            let s = (x[a] - g.anchor[a]) / g.h;
            base[a] = s.floor() as i64;
            frac[a] = s - base[a] as f64;
        }
        let mut acc = 0.0;
        for corner in 0..8 {
            let mut key = base;
            let mut w = 1.0;
            for a in 0..DIM {
                if corner >> a & 1 == 1 {
                    key[a] += 1;
                    w *= frac[a];
                } else {
                    w *= 1.0 - frac[a];
                }
            }
            if w != 0.0 {
                if let Some(i) = g.index_of(&key) {
                    acc += w * self.values[i];
                }
            }
        }
        acc
    }

    pub fn write_binary(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let (lo, hi) = self.grid.domain.bounding_box();
        let mut buf = Vec::with_capacity(64 + 32 * self.values.len());
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(DIM as u32).to_le_bytes());
        buf.extend_from_slice(&self.grid.h.to_le_bytes());
        for v in lo.iter().chain(&hi) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf.extend_from_slice(&(self.values.len() as u64).to_le_bytes());
        for i in 0..self.grid.len() {
            for c in self.grid.position(i) {
                buf.extend_from_slice(&c.to_le_bytes());
            }
        }
        for v in &self.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Reads a field written by [`ScalarField::write_binary`] and checks it
    /// against the lattice of `grid`.
    pub fn read_binary(path: &Path, grid: &Arc<Grid>) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut bytes = Vec::new();
        BufReader::new(file)
            .read_to_end(&mut bytes)
            .map_err(|e| Error::io(path, e))?;
        let mut cur = Cursor { bytes: &bytes, pos: 0 };
        if cur.take(4)? != MAGIC {
            return Err(Error::Format("not a field file".into()));
        }
        let version = cur.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported field format version {version}")));
        }
        let n = cur.u32()? as usize;
        if n != DIM {
            return Err(Error::Format(format!("field dimension {n}, expected {DIM}")));
        }
        let h = cur.f64()?;
        let mut bbox = [0.0; 6];
        for b in bbox.iter_mut() {
            *b = cur.f64()?;
        }
        let count = cur.u64()? as usize;
        let (lo, hi) = grid.domain.bounding_box();
        let rel = |a: f64, b: f64| (a - b).abs() <= 1e-12 * (1.0 + b.abs());
        if !rel(h, grid.h)
            || lo.iter().chain(&hi).zip(&bbox).any(|(a, b)| !rel(*b, *a))
            || count != grid.len()
        {
            return Err(Error::GridMismatch);
        }
        for i in 0..count {
            let p = grid.position(i);
            for c in p {
                if !rel(cur.f64()?, c) {
                    return Err(Error::GridMismatch);
                }
            }
        }
        let mut values = Vec::with_capacity(count);
        for _ in 0..count {
            values.push(cur.f64()?);
        }
        if cur.pos != bytes.len() {
            return Err(Error::Format("trailing bytes after field values".into()));
        }
        ScalarField::from_values(grid, values)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let mut out = String::from("x,y,z,value\n");
        for (i, v) in self.values.iter().enumerate() {
            let p = self.grid.position(i);
            out.push_str(&format!("{:.16e},{:.16e},{:.16e},{:.16e}\n", p[0], p[1], p[2], v));
        }
        w.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Discrete ∫∇u·∇v against the zero extension.
pub fn dirichlet_inner_product(u: &ScalarField, v: &ScalarField) -> Result<f64> {
    u.check_same_grid(v)?;
    Ok(u.grid.dirichlet_form(&u.values, &v.values))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, k: usize) -> Result<&'a [u8]> {
        if self.pos + k > self.bytes.len() {
            return Err(Error::Format("field file truncated".into()));
        }
        let s = &self.bytes[self.pos..self.pos + k];
        self.pos += k;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Lattice points k with lo² < |k|² < hi² in units of h, counted exactly.
    fn integer_shell_count(lo2: i64, hi2: i64) -> usize {
        let reach = (hi2 as f64).sqrt() as i64 + 1;
        let mut c = 0;
        for i in -reach..=reach {
            for j in -reach..=reach {
                for k in -reach..=reach {
                    let r2 = i * i + j * j + k * k;
                    if r2 > lo2 && r2 < hi2 {
                        c += 1;
                    }
                }
            }
        }
        c
    }

    #[test]
    fn node_counts_match_enumeration() {
        let cube = Domain::cuboid(vec![0.0; 3], vec![1.0; 3]).unwrap();
        assert_eq!(make_grid(&cube, 0.25).unwrap().len(), 27);
        let ball = Domain::unit_ball(3);
        // (±0.5, ±0.5, ±0.5) has norm 0.866 < 1, so the full 3³ block is interior.
        assert_eq!(make_grid(&ball, 0.5).unwrap().len(), 27);
        assert_eq!(make_grid(&ball, 0.5).unwrap().len(), integer_shell_count(-1, 4));
        assert_eq!(make_grid(&ball, 0.1).unwrap().len(), integer_shell_count(-1, 100));
        let ann = Domain::annulus(vec![0.0; 3], 0.3, 1.0).unwrap();
        assert_eq!(make_grid(&ann, 0.1).unwrap().len(), integer_shell_count(9, 100));
    }

    #[test]
    fn coarse_mesh_is_empty() {
        let cube = Domain::cuboid(vec![0.0; 3], vec![1.0; 3]).unwrap();
        assert!(matches!(make_grid(&cube, 1.5), Err(Error::EmptyGrid { .. })));
        assert!(make_grid(&Domain::unit_ball(3), 2.5).is_err());
    }

    #[test]
    fn ordering_is_lexicographic() {
        let g = make_grid(&Domain::unit_ball(3), 0.2).unwrap();
        for i in 1..g.len() {
            assert!(g.lattice_key(i - 1) < g.lattice_key(i));
        }
    }

    #[test]
    fn form_matches_laplacian() {
        let g = make_grid(&Domain::annulus(vec![0.0; 3], 0.3, 1.0).unwrap(), 0.1).unwrap();
        let u = ScalarField::from_fn(&g, |x| (x[0] + 2.0 * x[1]).sin() + x[2]);
        let v = ScalarField::from_fn(&g, |x| (x[0] * x[2]).cos());
        let uv = dirichlet_inner_product(&u, &v).unwrap();
        let vu = dirichlet_inner_product(&v, &u).unwrap();
        assert_eq!(uv, vu);
        let green = u.neg_laplacian().l2_inner(&v).unwrap();
        assert!((uv - green).abs() < 1e-11 * uv.abs().max(1.0));
    }

    #[test]
    fn binary_round_trip() {
        let g = make_grid(&Domain::unit_ball(3), 0.25).unwrap();
        let u = ScalarField::from_fn(&g, |x| x[0] - x[1] * x[2]);
        let dir = tempdir();
        let path = dir.join("u.bin");
        u.write_binary(&path).unwrap();
        let back = ScalarField::read_binary(&path, &g).unwrap();
        assert_eq!(back.values(), u.values());
        let other = make_grid(&Domain::unit_ball(3), 0.2).unwrap();
        assert!(matches!(ScalarField::read_binary(&path, &other), Err(Error::GridMismatch)));
        std::fs::remove_dir_all(dir).ok();
    }

    fn tempdir() -> std::path::PathBuf {
        let p = std::env::temp_dir().join(format!("chq-grid-{}", std::process::id()));
        std::fs::create_dir_all(&p).unwrap();
        p
    }

    #[test]
    fn interpolation_reproduces_nodes() {
        let g = make_grid(&Domain::unit_ball(3), 0.1).unwrap();
        let u = ScalarField::from_fn(&g, |x| 1.0 + x[0] + 3.0 * x[1] * x[2]);
        for i in (0..g.len()).step_by(37) {
            assert!((u.interpolate(&g.position(i)) - u.values()[i]).abs() < 1e-12);
        }
    }
}
