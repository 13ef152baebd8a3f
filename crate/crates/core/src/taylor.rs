//! Taylor polynomials and the piecewise Taylor approximant.
//!
//! A [`PiecewiseTaylor`] splits `[-A, A)^d` into `K^d` cubes with lower-left
//! corners `u_k`. Piece `P_k` is the Taylor polynomial at `u_k` of `f` minus all
//! pieces with strictly smaller corners, so that summing the pieces whose
//! corner lies below `x` recovers the Taylor polynomial of `f` at the corner of
//! `x`'s cube. [`PiecewiseTaylor::eval_pbar`] replaces each indicator by a
//! product of steep sigmoids.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sigmoid::sigmoid;

/// A function together with its partial derivatives up to some order.
pub trait TargetFn: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;

    /// Highest total derivative order that [`TargetFn::partial`] supports.
    fn max_order(&self) -> usize;

    /// `∂^α f(x)`; `None` when `|α|` exceeds [`TargetFn::max_order`].
    fn partial(&self, alpha: &[usize], x: &[f64]) -> Option<f64>;

    fn eval(&self, x: &[f64]) -> f64 {
        self.partial(&vec![0; self.dim()], x)
            .expect("order-zero partial is always available")
    }
}

/// `Σ_t c_t · x^{e_t}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polynomial {
    pub dim: usize,
    /// `(exponents, coefficient)` pairs.
    pub terms: Vec<(Vec<usize>, f64)>,
}

impl Polynomial {
    pub fn constant(dim: usize, c: f64) -> Self {
        Self {
            dim,
            terms: vec![(vec![0; dim], c)],
        }
    }

    pub fn degree(&self) -> usize {
        self.terms
            .iter()
            .map(|(e, _)| e.iter().sum::<usize>())
            .max()
            .unwrap_or(0)
    }
}

fn falling(n: usize, k: usize) -> f64 {
    (0..k).map(|i| (n - i) as f64).product()
}

impl TargetFn for Polynomial {
    fn dim(&self) -> usize {
        self.dim
    }

    fn max_order(&self) -> usize {
        usize::MAX
    }

    fn partial(&self, alpha: &[usize], x: &[f64]) -> Option<f64> {
        let mut total = 0.0;
        for (e, c) in &self.terms {
            if e.iter().zip(alpha).any(|(ej, aj)| aj > ej) {
                continue;
            }
            let mut term = *c;
            for j in 0..self.dim {
                term *= falling(e[j], alpha[j]) * x[j].powi((e[j] - alpha[j]) as i32);
            }
            total += term;
        }
        Some(total)
    }
}

/// `sin(ω·x + φ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SineRidge {
    pub omega: Vec<f64>,
    pub phase: f64,
}

impl TargetFn for SineRidge {
    fn dim(&self) -> usize {
        self.omega.len()
    }

    fn max_order(&self) -> usize {
        usize::MAX
    }

    fn partial(&self, alpha: &[usize], x: &[f64]) -> Option<f64> {
        let order: usize = alpha.iter().sum();
        let arg: f64 = self.omega.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.phase;
        let scale: f64 = self
            .omega
            .iter()
            .zip(alpha)
            .map(|(w, &a)| w.powi(a as i32))
            .product();
        Some(scale * (arg + order as f64 * std::f64::consts::FRAC_PI_2).sin())
    }
}

/// `Π_j sin(ω_j x_j + φ_j)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SineProduct {
    pub omega: Vec<f64>,
    pub phase: Vec<f64>,
}

impl TargetFn for SineProduct {
    fn dim(&self) -> usize {
        self.omega.len()
    }

    fn max_order(&self) -> usize {
        usize::MAX
    }

    fn partial(&self, alpha: &[usize], x: &[f64]) -> Option<f64> {
        let mut v = 1.0;
        for j in 0..self.omega.len() {
            let w = self.omega[j];
            v *= w.powi(alpha[j] as i32)
                * (w * x[j] + self.phase[j] + alpha[j] as f64 * std::f64::consts::FRAC_PI_2).sin();
        }
        Some(v)
    }
}

/// `Σ_j |x_j|`: Lipschitz, with no derivatives beyond order zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbsSum {
    pub dim: usize,
}

impl TargetFn for AbsSum {
    fn dim(&self) -> usize {
        self.dim
    }

    fn max_order(&self) -> usize {
        0
    }

    fn partial(&self, alpha: &[usize], x: &[f64]) -> Option<f64> {
        if alpha.iter().any(|&a| a > 0) {
            return None;
        }
        Some(x.iter().map(|v| v.abs()).sum())
    }
}

/// Serializable description of a built-in target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TargetSpec {
    Polynomial(Polynomial),
    SineRidge(SineRidge),
    SineProduct(SineProduct),
    AbsSum(AbsSum),
}

impl TargetSpec {
    pub fn into_fn(self) -> Arc<dyn TargetFn> {
        match self {
            TargetSpec::Polynomial(f) => Arc::new(f),
            TargetSpec::SineRidge(f) => Arc::new(f),
            TargetSpec::SineProduct(f) => Arc::new(f),
            TargetSpec::AbsSum(f) => Arc::new(f),
        }
    }
}

/// A `(p, C)`-smooth function on `[-A, A]^d`.
///
/// `p = q + β` with `q = ⌈p⌉ − 1` and `β ∈ (0, 1]`.
#[derive(Debug, Clone)]
pub struct SmoothTarget {
    func: Arc<dyn TargetFn>,
    p: f64,
    c: f64,
    a: f64,
}

impl SmoothTarget {
    pub fn new(func: Arc<dyn TargetFn>, p: f64, c: f64, a: f64) -> Result<Self> {
        if !(p > 0.0 && p.is_finite()) {
            return Err(Error::Config(format!("smoothness must be positive, got {p}")));
        }
        if !(c > 0.0) {
            return Err(Error::Config(format!("smoothness constant must be positive, got {c}")));
        }
        if !(a >= 1.0) {
            return Err(Error::Config(format!("domain half-width must be at least 1, got {a}")));
        }
        if func.dim() == 0 {
            return Err(Error::Config("target dimension must be at least 1".into()));
        }
        let t = Self { func, p, c, a };
        if t.q() > t.func.max_order() {
            return Err(Error::DerivativeOrder {
                order: t.q(),
                max: t.func.max_order(),
            });
        }
        Ok(t)
    }

    pub fn from_spec(spec: TargetSpec, p: f64, c: f64, a: f64) -> Result<Self> {
        Self::new(spec.into_fn(), p, c, a)
    }

    pub fn dim(&self) -> usize {
        self.func.dim()
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn q(&self) -> usize {
        smoothness_split(self.p).0
    }

    pub fn beta(&self) -> f64 {
        smoothness_split(self.p).1
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.func.eval(x)
    }

    pub fn partial(&self, alpha: &[usize], x: &[f64]) -> Result<f64> {
        let order: usize = alpha.iter().sum();
        self.func.partial(alpha, x).ok_or(Error::DerivativeOrder {
            order,
            max: self.func.max_order(),
        })
    }
}

/// `(q, β)` with `p = q + β`, `q = ⌈p⌉ − 1`, `β ∈ (0, 1]`.
pub fn smoothness_split(p: f64) -> (usize, f64) {
    let q = (p.ceil() as usize).saturating_sub(1);
    (q, p - q as f64)
}

/// All multi-indices in `N_0^d` of total degree `≤ q`, graded by degree and
/// lexicographically descending within a degree.
pub fn multi_indices(d: usize, q: usize) -> Vec<Vec<usize>> {
    fn fill(rest: usize, slot: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if slot + 1 == cur.len() {
            cur[slot] = rest;
            out.push(cur.clone());
            return;
        }
        for v in (0..=rest).rev() {
            cur[slot] = v;
            fill(rest - v, slot + 1, cur, out);
        }
    }
    let mut out = Vec::new();
    let mut cur = vec![0; d];
    for deg in 0..=q {
        fill(deg, 0, &mut cur, &mut out);
    }
    out
}

/// Monomial layout shared by all polynomials of a given `(d, q)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MonomialBasis {
    dim: usize,
    degree: usize,
    indices: Vec<Vec<usize>>,
    lookup: HashMap<Vec<usize>, usize>,
}

impl MonomialBasis {
    pub fn new(dim: usize, degree: usize) -> Self {
        let indices = multi_indices(dim, degree);
        let lookup = indices
            .iter()
            .enumerate()
            .map(|(i, a)| (a.clone(), i))
            .collect();
        Self {
            dim,
            degree,
            indices,
            lookup,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[Vec<usize>] {
        &self.indices
    }

    pub fn position(&self, alpha: &[usize]) -> Option<usize> {
        self.lookup.get(alpha).copied()
    }
}

/// `Σ_α c_α (x − u)^α` over a [`MonomialBasis`].
#[derive(Debug, Clone, PartialEq)]
pub struct LocalPoly {
    pub center: Vec<f64>,
    pub coeffs: Vec<f64>,
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

impl LocalPoly {
    pub fn zero(basis: &MonomialBasis, center: Vec<f64>) -> Self {
        Self {
            center,
            coeffs: vec![0.0; basis.len()],
        }
    }

    pub fn eval(&self, basis: &MonomialBasis, x: &[f64]) -> f64 {
        let q = basis.degree;
        // powers[j][e] = (x_j − u_j)^e
        let powers: Vec<Vec<f64>> = (0..basis.dim)
            .map(|j| {
                let h = x[j] - self.center[j];
                let mut p = Vec::with_capacity(q + 1);
                let mut v = 1.0;
                for _ in 0..=q {
                    p.push(v);
                    v *= h;
                }
                p
            })
            .collect();
        basis
            .indices
            .iter()
            .zip(&self.coeffs)
            .map(|(a, c)| {
                if *c == 0.0 {
                    return 0.0;
                }
                c * a.iter().enumerate().map(|(j, &e)| powers[j][e]).product::<f64>()
            })
            .sum()
    }

    /// The same polynomial expanded around `center` by the binomial theorem.
    pub fn recenter(&self, basis: &MonomialBasis, center: &[f64]) -> LocalPoly {
        let shift: Vec<f64> = center.iter().zip(&self.center).map(|(v, u)| v - u).collect();
        let mut out = LocalPoly::zero(basis, center.to_vec());
        let mut target = vec![0; basis.dim];
        for (alpha, &c) in basis.indices.iter().zip(&self.coeffs) {
            if c == 0.0 {
                continue;
            }
            // (x−u)^α = Π_j Σ_{b ≤ α_j} C(α_j, b) shift_j^{α_j−b} (x−v)_j^b
            let count: usize = alpha.iter().map(|a| a + 1).product();
            for flat in 0..count {
                let mut rem = flat;
                let mut w = c;
                for j in 0..basis.dim {
                    let b = rem % (alpha[j] + 1);
                    rem /= alpha[j] + 1;
                    target[j] = b;
                    w *= binomial(alpha[j], b) * shift[j].powi((alpha[j] - b) as i32);
                }
                let pos = basis.position(&target).expect("sub-index of a basis index");
                out.coeffs[pos] += w;
            }
        }
        out
    }

    fn sub_assign(&mut self, other: &LocalPoly) {
        debug_assert_eq!(self.center, other.center);
        for (a, b) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *a -= b;
        }
    }
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|i| i as f64).product()
}

/// Degree-`q` Taylor polynomial of `f` around `u`, with coefficients
/// `∂^α f(u) / α!`.
pub fn taylor_poly(f: &SmoothTarget, basis: &MonomialBasis, u: &[f64]) -> Result<LocalPoly> {
    let coeffs = basis
        .indices
        .iter()
        .map(|alpha| {
            let denom: f64 = alpha.iter().map(|&a| factorial(a)).product();
            Ok(f.partial(alpha, u)? / denom)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(LocalPoly {
        center: u.to_vec(),
        coeffs,
    })
}

/// `(Tf)_{q,u}(x)`.
pub fn taylor_at(f: &SmoothTarget, u: &[f64], x: &[f64]) -> Result<f64> {
    let basis = MonomialBasis::new(f.dim(), f.q());
    Ok(taylor_poly(f, &basis, u)?.eval(&basis, x))
}

/// Uniform subdivision of `[-A, A]^d` into `K^d` cubes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaylorGrid {
    pub a: f64,
    pub k: usize,
    pub dim: usize,
}

impl TaylorGrid {
    pub fn new(a: f64, k: usize, dim: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::Config("grid needs at least one cell per axis".into()));
        }
        if !(a > 0.0) || dim == 0 {
            return Err(Error::Config("grid half-width and dimension must be positive".into()));
        }
        Ok(Self { a, k, dim })
    }

    /// Cube side length `δ = 2A/K`.
    pub fn delta(&self) -> f64 {
        2.0 * self.a / self.k as f64
    }

    /// `u_i = −A + i·2A/K`.
    pub fn corner(&self, i: usize) -> f64 {
        -self.a + i as f64 * self.delta()
    }

    pub fn cells(&self) -> usize {
        self.k.pow(self.dim as u32)
    }

    /// Multi-index of flat cell number `flat` (axis 0 varies fastest).
    pub fn unflatten(&self, mut flat: usize) -> Vec<usize> {
        (0..self.dim)
            .map(|_| {
                let i = flat % self.k;
                flat /= self.k;
                i
            })
            .collect()
    }

    pub fn flatten(&self, idx: &[usize]) -> usize {
        idx.iter().rev().fold(0, |acc, &i| acc * self.k + i)
    }

    pub fn corner_point(&self, idx: &[usize]) -> Vec<f64> {
        idx.iter().map(|&i| self.corner(i)).collect()
    }

    /// Multi-index of the cube containing `x`; the closed upper face `x_j = A`
    /// belongs to the last cube.
    ///
    /// Panics if `x` lies outside `[-A, A]^d`.
    pub fn cell_of(&self, x: &[f64]) -> Vec<usize> {
        assert_eq!(x.len(), self.dim, "point dimension mismatch");
        x.iter()
            .map(|&v| {
                assert!(
                    (-self.a..=self.a).contains(&v),
                    "point coordinate {v} outside [-{a}, {a}]",
                    a = self.a
                );
                (((v + self.a) / self.delta()).floor() as usize).min(self.k - 1)
            })
            .collect()
    }
}

/// `M = K·(ln K)²`, at least 1.
pub fn default_smoothing(k: usize) -> f64 {
    let kf = k as f64;
    (kf * kf.ln().powi(2)).max(1.0)
}

/// The pieces `P_k` on a [`TaylorGrid`], each stored around its own corner.
#[derive(Debug, Clone)]
pub struct PiecewiseTaylor {
    grid: TaylorGrid,
    basis: MonomialBasis,
    pieces: Vec<LocalPoly>,
    smoothing: f64,
}

/// Builds all pieces by the recursion
/// `P_k = T(f − Σ_{u_l < u_k} P_l)_{q,u_k}`.
///
/// The earlier pieces are polynomials of degree `≤ q`, so their Taylor
/// polynomial is themselves, re-expanded around `u_k`.
pub fn build_pieces(f: &SmoothTarget, grid: TaylorGrid) -> Result<PiecewiseTaylor> {
    if grid.dim != f.dim() {
        return Err(Error::Config(format!(
            "grid dimension {} does not match target dimension {}",
            grid.dim,
            f.dim()
        )));
    }
    let basis = MonomialBasis::new(f.dim(), f.q());
    let cells = grid.cells();
    let mut idx: Vec<Vec<usize>> = Vec::with_capacity(cells);
    let mut pieces: Vec<LocalPoly> = Vec::with_capacity(cells);
    // flat order is compatible with the coordinatewise partial order
    for flat in 0..cells {
        let k = grid.unflatten(flat);
        let u = grid.corner_point(&k);
        let mut piece = taylor_poly(f, &basis, &u)?;
        for (l, pl) in idx.iter().zip(&pieces) {
            if l.iter().zip(&k).all(|(a, b)| a <= b) {
                piece.sub_assign(&pl.recenter(&basis, &u));
            }
        }
        idx.push(k);
        pieces.push(piece);
    }
    Ok(PiecewiseTaylor {
        grid,
        basis,
        pieces,
        smoothing: default_smoothing(grid.k),
    })
}

impl PiecewiseTaylor {
    pub fn grid(&self) -> &TaylorGrid {
        &self.grid
    }

    pub fn basis(&self) -> &MonomialBasis {
        &self.basis
    }

    pub fn pieces(&self) -> &[LocalPoly] {
        &self.pieces
    }

    pub fn piece(&self, idx: &[usize]) -> &LocalPoly {
        &self.pieces[self.grid.flatten(idx)]
    }

    pub fn smoothing(&self) -> f64 {
        self.smoothing
    }

    pub fn with_smoothing(mut self, m: f64) -> Self {
        assert!(m > 0.0, "smoothing must be positive");
        self.smoothing = m;
        self
    }

    /// `P(x) = Σ_k P_k(x)·1[x ≥ u_k]`.
    pub fn eval_p(&self, x: &[f64]) -> f64 {
        let cell = self.grid.cell_of(x);
        let mut total = 0.0;
        for (flat, piece) in self.pieces.iter().enumerate() {
            let k = self.grid.unflatten(flat);
            if k.iter().zip(&cell).all(|(a, b)| a <= b) {
                total += piece.eval(&self.basis, x);
            }
        }
        total
    }

    /// `P̄(x) = P_0(x) + Σ_{k≠0} P_k(x)·Π_{j: k_j>0} σ(M(x_j − u_k^{(j)}))`.
    ///
    /// On axes where the corner sits on the lower face `−A` the indicator is
    /// identically one over the domain and is kept exact; smoothing it would
    /// put a factor `σ(0) = 1/2` on whole slabs of pieces along that face.
    pub fn eval_pbar(&self, x: &[f64]) -> f64 {
        self.pbar(x, false)
    }

    /// `P̄` with every factor smoothed, including those on the lower faces.
    /// For `d ≥ 2` its error does not vanish near `x_j = −A`.
    pub fn eval_pbar_all_gated(&self, x: &[f64]) -> f64 {
        self.pbar(x, true)
    }

    fn pbar(&self, x: &[f64], gate_lower_faces: bool) -> f64 {
        assert_eq!(x.len(), self.grid.dim, "point dimension mismatch");
        let lower = -self.grid.a;
        let mut total = self.pieces[0].eval(&self.basis, x);
        for piece in &self.pieces[1..] {
            let gate: f64 = piece
                .center
                .iter()
                .zip(x)
                .filter(|(u, _)| gate_lower_faces || **u != lower)
                .map(|(u, v)| sigmoid(self.smoothing * (v - u)))
                .product();
            if gate == 0.0 {
                continue;
            }
            total += gate * piece.eval(&self.basis, x);
        }
        total
    }

    /// `Σ P_k(x)` over `k ≤ r` with `k_j = r_j`.
    ///
    /// For `r_j ≥ 1` this is `(Tf)_{q,u_r}(x) − (Tf)_{q,u_r−δe_j}(x)`; for
    /// `r_j = 0` there is no cell below and the sum is `(Tf)_{q,u_r}(x)` itself.
    pub fn slab_sum(&self, r: &[usize], j: usize, x: &[f64]) -> f64 {
        assert!(j < self.grid.dim, "axis {j} out of range");
        let mut total = 0.0;
        for (flat, piece) in self.pieces.iter().enumerate() {
            let k = self.grid.unflatten(flat);
            if k[j] == r[j] && k.iter().zip(r).all(|(a, b)| a <= b) {
                total += piece.eval(&self.basis, x);
            }
        }
        total
    }
}
