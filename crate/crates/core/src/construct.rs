//! Explicit sigmoid networks that approximate monomials, products and
//! piecewise Taylor polynomials.
//!
//! Everything is built on a small [`Circuit`]: layered sigmoid neurons whose
//! values are read out through [`Affine`] combinations. A block (monomial,
//! identity or product) consumes affine values at one level and produces an
//! affine value one level up, so block composition maps directly onto the
//! layers of a subnet.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{forward, Topology, WeightIndex, WeightVector};
use crate::sigmoid::{sigma_deriv, MAX_SIGMA_ORDER};
use crate::taylor::{build_pieces, default_smoothing, PiecewiseTaylor, SmoothTarget, TaylorGrid};

/// Largest residual accepted from the moment system.
pub const MOMENT_TOLERANCE: f64 = 1e-9;

/// Smallest accepted gap between interpolation nodes.
pub const MIN_NODE_GAP: f64 = 1e-6;

/// Upper cap on block neuron counts in the assembly.
pub const MAX_ASSEMBLY_NEURONS: usize = 8;

/// Solves `Σ_j α_j β_j^l = [l = k]` for `l = 0..N`.
///
/// `α_j` is the `x^k` coefficient of the Lagrange basis polynomial through
/// the nodes that is one at `β_j`.
pub fn solve_moment_system(k: usize, n: usize, betas: &[f64]) -> Result<Vec<f64>> {
    if n <= k {
        return Err(Error::MomentSystem(format!("need more nodes than the degree ({n} ≤ {k})")));
    }
    if betas.len() != n {
        return Err(Error::MomentSystem(format!("expected {n} nodes, got {}", betas.len())));
    }
    if betas.iter().any(|b| !b.is_finite()) {
        return Err(Error::MomentSystem("nodes must be finite".into()));
    }
    let mut min_gap = f64::INFINITY;
    for i in 0..n {
        for j in i + 1..n {
            min_gap = min_gap.min((betas[i] - betas[j]).abs());
        }
    }
    if min_gap < MIN_NODE_GAP {
        return Err(Error::MomentSystem(format!(
            "nodes are not pairwise distinct (smallest gap {min_gap:e})"
        )));
    }
    let alphas: Vec<f64> = (0..n)
        .map(|j| {
            // ℓ_j(x) = Π_{i≠j} (x − β_i)/(β_j − β_i), expanded in powers of x
            let mut poly = vec![1.0];
            for (i, &b) in betas.iter().enumerate() {
                if i == j {
                    continue;
                }
                let denom = betas[j] - b;
                let mut next = vec![0.0; poly.len() + 1];
                for (m, c) in poly.iter().enumerate() {
                    next[m + 1] += c / denom;
                    next[m] -= c * b / denom;
                }
                poly = next;
            }
            poly[k]
        })
        .collect();
    let residual = moment_residual(k, betas, &alphas);
    if !(residual <= MOMENT_TOLERANCE) {
        let cond: f64 = alphas.iter().map(|a| a.abs()).sum();
        return Err(Error::MomentSystem(format!(
            "residual {residual:e} exceeds {MOMENT_TOLERANCE:e} (Σ|α| = {cond:e}, smallest node gap {min_gap:e})"
        )));
    }
    Ok(alphas)
}

/// `max_l |Σ_j α_j β_j^l − [l = k]|` over `l < N`.
pub fn moment_residual(k: usize, betas: &[f64], alphas: &[f64]) -> f64 {
    (0..betas.len())
        .map(|l| {
            let s: f64 = alphas.iter().zip(betas).map(|(a, b)| a * b.powi(l as i32)).sum();
            (s - if l == k { 1.0 } else { 0.0 }).abs()
        })
        .fold(0.0, f64::max)
}

/// Grid point in `[−4, 4]` (step 0.01) where `|σ^(k)|` is largest; the first
/// maximiser wins ties.
pub fn choose_t_sigma(k: usize) -> f64 {
    assert!(k >= 1, "derivative order must be at least 1");
    let mut best_t = 0.0;
    let mut best = -1.0;
    for i in 0..=800 {
        let t = (i as f64 - 400.0) / 100.0;
        let v = sigma_deriv(k, t).abs();
        if v > best {
            best = v;
            best_t = t;
        }
    }
    best_t
}

/// `sup_t |σ^(m)(t)|`, sampled finely on `[−12, 12]`.
pub fn sigma_deriv_sup(m: usize) -> f64 {
    (0..=24_000)
        .map(|i| sigma_deriv(m, -12.0 + i as f64 * 1e-3).abs())
        .fold(0.0, f64::max)
}

/// Coefficients of `x ↦ scale · Σ_j α_j σ(β_j x + t_σ)`, which reproduces
/// `x^k` up to `O(|x|^N)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonomialNetSpec {
    pub k: usize,
    pub n: usize,
    pub t_sigma: f64,
    pub betas: Vec<f64>,
    pub alphas: Vec<f64>,
    /// `k! / σ^(k)(t_σ)`.
    pub scale: f64,
}

impl MonomialNetSpec {
    /// Nodes `β_j = (j+1)/N`.
    pub fn new(k: usize, n: usize) -> Result<Self> {
        let betas: Vec<f64> = (0..n).map(|j| (j + 1) as f64 / n as f64).collect();
        Self::with_betas(k, n, betas)
    }

    pub fn with_betas(k: usize, n: usize, betas: Vec<f64>) -> Result<Self> {
        if k == 0 {
            return Err(Error::Config("monomial degree must be at least 1".into()));
        }
        if n > MAX_SIGMA_ORDER {
            return Err(Error::Config(format!(
                "at most {MAX_SIGMA_ORDER} neurons are supported, got {n}"
            )));
        }
        let alphas = solve_moment_system(k, n, &betas)?;
        let t_sigma = choose_t_sigma(k);
        let fact: f64 = (1..=k).map(|i| i as f64).product();
        Ok(Self {
            k,
            n,
            t_sigma,
            betas,
            alphas,
            scale: fact / sigma_deriv(k, t_sigma),
        })
    }

    /// The same construction with nodes `s·β_j`, which solves the moment
    /// system for the scaled nodes exactly: `α_j ↦ α_j / s^k`.
    pub fn rescaled(&self, s: f64) -> Self {
        assert!(s > 0.0, "scale must be positive");
        let div = s.powi(self.k as i32);
        Self {
            betas: self.betas.iter().map(|b| b * s).collect(),
            alphas: self.alphas.iter().map(|a| a / div).collect(),
            ..self.clone()
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let sum: f64 = self
            .alphas
            .iter()
            .zip(&self.betas)
            .map(|(a, b)| a * crate::sigmoid::sigmoid(b * x + self.t_sigma))
            .sum();
        self.scale * sum
    }

    /// Lagrange-remainder constant `c` with `|f(x) − x^k| ≤ c·|x|^N`:
    /// `|scale| · Σ|α_j||β_j|^N · sup|σ^(N)| / N!`.
    pub fn remainder_constant(&self) -> f64 {
        let fact: f64 = (1..=self.n).map(|i| i as f64).product();
        let moment: f64 = self
            .alphas
            .iter()
            .zip(&self.betas)
            .map(|(a, b)| a.abs() * b.abs().powi(self.n as i32))
            .sum();
        self.scale.abs() * moment * sigma_deriv_sup(self.n) / fact
    }

    /// Largest argument bound `a ≤ 1` with relative remainder
    /// `c·a^(N−k) ≤ tol`.
    pub fn argument_for_tolerance(&self, tol: f64) -> f64 {
        let c = self.remainder_constant();
        (tol / c).powf(1.0 / (self.n - self.k) as f64).min(1.0)
    }
}

/// A sigmoid neuron `σ(Σ w_j h_j + b)` reading the level below.
#[derive(Debug, Clone, PartialEq)]
pub struct Neuron {
    pub inputs: Vec<(usize, f64)>,
    pub bias: f64,
}

/// `Σ c_i h_i + c_0` over the neurons `h` of one level; level 0 is the input.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    pub level: usize,
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
}

impl Affine {
    pub fn input(j: usize) -> Self {
        Self {
            level: 0,
            terms: vec![(j, 1.0)],
            constant: 0.0,
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            level: self.level,
            terms: self.terms.iter().map(|&(i, c)| (i, c * s)).collect(),
            constant: self.constant * s,
        }
    }

    pub fn shifted(&self, c: f64) -> Self {
        Self {
            constant: self.constant + c,
            ..self.clone()
        }
    }

    /// `self + w·other`; both must live on the same level.
    pub fn plus(&self, other: &Affine, w: f64) -> Self {
        assert_eq!(self.level, other.level, "affine values on different levels");
        let mut terms = self.terms.clone();
        for &(i, c) in &other.terms {
            match terms.iter_mut().find(|(j, _)| *j == i) {
                Some(t) => t.1 += w * c,
                None => terms.push((i, w * c)),
            }
        }
        Self {
            level: self.level,
            terms,
            constant: self.constant + w * other.constant,
        }
    }

    fn read(&self, vals: &[f64]) -> f64 {
        self.terms.iter().map(|&(i, c)| c * vals[i]).sum::<f64>() + self.constant
    }
}

/// Layered sigmoid neurons over `R^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct Circuit {
    input_dim: usize,
    /// `levels[l]` holds the neurons of level `l + 1`.
    levels: Vec<Vec<Neuron>>,
}

impl Circuit {
    pub fn new(input_dim: usize) -> Self {
        Self {
            input_dim,
            levels: Vec::new(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    /// Neuron count per level, starting at level 1.
    pub fn widths(&self) -> Vec<usize> {
        self.levels.iter().map(Vec::len).collect()
    }

    pub fn neurons(&self, level: usize) -> &[Neuron] {
        &self.levels[level - 1]
    }

    /// Adds `σ(slope·v + bias)` one level above `v` and returns its index.
    pub fn push_neuron(&mut self, v: &Affine, slope: f64, bias: f64) -> usize {
        let level = v.level + 1;
        while self.levels.len() < level {
            self.levels.push(Vec::new());
        }
        let layer = &mut self.levels[level - 1];
        layer.push(Neuron {
            inputs: v.terms.iter().map(|&(i, c)| (i, slope * c)).collect(),
            bias: slope * v.constant + bias,
        });
        layer.len() - 1
    }

    /// `spec` applied to `v`.
    pub fn monomial(&mut self, v: &Affine, spec: &MonomialNetSpec) -> Affine {
        let terms = spec
            .alphas
            .iter()
            .zip(&spec.betas)
            .map(|(a, b)| (self.push_neuron(v, *b, spec.t_sigma), spec.scale * a))
            .collect();
        Affine {
            level: v.level + 1,
            terms,
            constant: 0.0,
        }
    }

    /// `(f_{x²}(u+v) − f_{x²}(u−v)) / 4`.
    pub fn mult2(&mut self, u: &Affine, v: &Affine, square: &MonomialNetSpec) -> Affine {
        assert_eq!(square.k, 2, "multiplier needs a squaring network");
        let plus = self.monomial(&u.plus(v, 1.0), square);
        let minus = self.monomial(&u.plus(v, -1.0), square);
        plus.plus(&minus, -1.0).scaled(0.25)
    }

    pub fn eval_levels(&self, x: &[f64]) -> Vec<Vec<f64>> {
        assert_eq!(x.len(), self.input_dim, "input dimension mismatch");
        let mut out = vec![x.to_vec()];
        for layer in &self.levels {
            let prev = out.last().expect("non-empty");
            let vals = layer
                .iter()
                .map(|n| {
                    let z: f64 = n.inputs.iter().map(|&(i, w)| w * prev[i]).sum::<f64>() + n.bias;
                    crate::sigmoid::sigmoid(z)
                })
                .collect();
            out.push(vals);
        }
        out
    }

    pub fn eval(&self, out: &Affine, x: &[f64]) -> f64 {
        let levels = self.eval_levels(x);
        out.read(&levels[out.level])
    }
}

/// One-hidden-layer network for `x ↦ x^k` on `[−A, A]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MonomialNet {
    pub spec: MonomialNetSpec,
    pub a: f64,
    circuit: Circuit,
    out: Affine,
}

impl MonomialNet {
    pub fn eval(&self, x: f64) -> f64 {
        self.circuit.eval(&self.out, &[x])
    }

    pub fn neurons(&self) -> usize {
        self.circuit.widths().iter().sum()
    }

    pub fn circuit(&self) -> &Circuit {
        &self.circuit
    }

    /// `c·A^N` with the Lagrange-remainder constant.
    pub fn error_bound(&self) -> f64 {
        self.spec.remainder_constant() * self.a.powi(self.spec.n as i32)
    }
}

fn check_half_width(a: f64) -> Result<()> {
    if !(a > 0.0 && a <= 1.0) {
        return Err(Error::Precondition(format!("input half-width must lie in (0, 1], got {a}")));
    }
    Ok(())
}

pub fn build_monomial_net(k: usize, n: usize, a: f64) -> Result<MonomialNet> {
    check_half_width(a)?;
    let spec = MonomialNetSpec::new(k, n)?;
    let mut circuit = Circuit::new(1);
    let out = circuit.monomial(&Affine::input(0), &spec);
    Ok(MonomialNet { spec, a, circuit, out })
}

/// Two-input multiplier by polarization.
#[derive(Debug, Clone, PartialEq)]
pub struct Mult2Net {
    pub square: MonomialNetSpec,
    pub a: f64,
    circuit: Circuit,
    out: Affine,
}

impl Mult2Net {
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        self.circuit.eval(&self.out, &[x, y])
    }

    pub fn neurons(&self) -> usize {
        self.circuit.widths().iter().sum()
    }

    /// `c_56 = c_54·2^(N−1)`: both squares see arguments up to `2A`.
    pub fn constant(&self) -> f64 {
        self.square.remainder_constant() * 2f64.powi(self.square.n as i32 - 1)
    }

    pub fn error_bound(&self) -> f64 {
        self.constant() * self.a.powi(self.square.n as i32)
    }
}

pub fn build_mult2(n: usize, a: f64) -> Result<Mult2Net> {
    if n <= 2 {
        return Err(Error::Config(format!("multiplier needs more than 2 neurons, got {n}")));
    }
    check_half_width(a)?;
    let square = MonomialNetSpec::new(2, n)?;
    let mut circuit = Circuit::new(2);
    let out = circuit.mult2(&Affine::input(0), &Affine::input(1), &square);
    Ok(Mult2Net { square, a, circuit, out })
}

/// What [`build_mult_d`] does when the product-tree precondition fails.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PreconditionPolicy {
    Enforce,
    Report,
}

/// Binary tree of multipliers over `d_in` inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct MultDNet {
    pub d_in: usize,
    pub a: f64,
    pub square: MonomialNetSpec,
    /// `c_56·4^(d·N)·A^(N−1)`.
    pub precondition_value: f64,
    mult_layers: usize,
    circuit: Circuit,
    out: Affine,
}

impl MultDNet {
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.circuit.eval(&self.out, x)
    }

    pub fn precondition_holds(&self) -> bool {
        self.precondition_value <= 1.0
    }

    /// Layers containing at least one multiplier.
    pub fn mult_layers(&self) -> usize {
        self.mult_layers
    }

    pub fn layer_widths(&self) -> Vec<usize> {
        self.circuit.widths()
    }
}

/// Multiplies `d_in` inputs pairwise, level by level. A left-over input at
/// odd levels is carried up by an identity network rather than paired with a
/// constant 1, so every block sees arguments of size `O(A)`. `d_in = 1`
/// reduces to one identity network.
pub fn build_mult_d(d_in: usize, n: usize, a: f64, policy: PreconditionPolicy) -> Result<MultDNet> {
    if d_in == 0 {
        return Err(Error::Config("product of zero inputs".into()));
    }
    if n <= 2 {
        return Err(Error::Config(format!("multiplier needs more than 2 neurons, got {n}")));
    }
    check_half_width(a)?;
    let square = MonomialNetSpec::new(2, n)?;
    let ident = MonomialNetSpec::new(1, n)?;
    let c56 = square.remainder_constant() * 2f64.powi(n as i32 - 1);
    let precondition_value = c56 * 4f64.powi((d_in * n) as i32) * a.powi(n as i32 - 1);
    if policy == PreconditionPolicy::Enforce && precondition_value > 1.0 {
        return Err(Error::Precondition(format!(
            "c·4^(dN)·A^(N−1) = {precondition_value:e} exceeds 1 (c = {c56:e}, d = {d_in}, N = {n}, A = {a})"
        )));
    }
    let mut circuit = Circuit::new(d_in);
    let mut nodes: Vec<Affine> = (0..d_in).map(Affine::input).collect();
    let mut mult_layers = 0;
    if d_in == 1 {
        nodes[0] = circuit.monomial(&nodes[0], &ident);
    }
    while nodes.len() > 1 {
        let mut next = Vec::with_capacity(nodes.len().div_ceil(2));
        for pair in nodes.chunks(2) {
            next.push(match pair {
                [u, v] => circuit.mult2(u, v, &square),
                [u] => circuit.monomial(u, &ident),
                _ => unreachable!(),
            });
        }
        nodes = next;
        mult_layers += 1;
    }
    Ok(MultDNet {
        d_in,
        a,
        square,
        precondition_value,
        mult_layers,
        circuit,
        out: nodes.pop().expect("one node left"),
    })
}

/// One subnet of a constructed network together with its output weight.
#[derive(Debug, Clone, PartialEq)]
pub struct SubnetBlueprint {
    /// Weights in `Topology(d, 1, L, r)`; the single output weight is the
    /// blueprint's coefficient.
    pub weights: WeightVector,
}

impl SubnetBlueprint {
    pub fn coefficient(&self) -> f64 {
        self.weights.output_weights()[0]
    }

    pub fn topology(&self) -> &Topology {
        self.weights.topology()
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        forward(&self.weights, x)
    }
}

/// Assembly parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssemblyConfig {
    /// Cells per axis `K`.
    pub cells: usize,
    pub depth: usize,
    pub width: usize,
    /// Neurons per identity/squaring block; defaults to `⌈2p+2d⌉` capped at
    /// [`MAX_ASSEMBLY_NEURONS`] (and at least 3).
    pub neurons: Option<usize>,
    /// Sigmoid steepness `M`; defaults to [`default_smoothing`].
    pub smoothing: Option<f64>,
    pub min_cells: usize,
    /// Relative truncation error allowed per identity/squaring block; sets
    /// how far block arguments are scaled down.
    pub block_tolerance: f64,
}

impl AssemblyConfig {
    pub fn new(cells: usize, depth: usize, width: usize) -> Self {
        Self {
            cells,
            depth,
            width,
            neurons: None,
            smoothing: None,
            min_cells: 1,
            block_tolerance: 1e-6,
        }
    }
}

/// `⌈2p+2d⌉`, clamped to `[3, MAX_ASSEMBLY_NEURONS]`.
pub fn default_block_neurons(p: f64, d: usize) -> usize {
    ((2.0 * p + 2.0 * d as f64).ceil() as usize).clamp(3, MAX_ASSEMBLY_NEURONS)
}

/// `⌈log₂ m⌉` for `m ≥ 1`.
pub fn ceil_log2(m: usize) -> usize {
    assert!(m >= 1);
    (usize::BITS - (m - 1).leading_zeros()) as usize
}

/// A network of the estimator's class approximating `P̄`.
#[derive(Debug, Clone)]
pub struct TaylorNet {
    pub blueprints: Vec<SubnetBlueprint>,
    /// Number of summands (`ℱ`-elements) the blueprints group into.
    pub summands: usize,
    /// Depth and width the construction needs.
    pub required_depth: usize,
    pub required_width: usize,
    /// Neurons over all summand circuits, before replication into subnets.
    pub neurons: usize,
    pub pieces: PiecewiseTaylor,
}

impl TaylorNet {
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.blueprints.iter().map(|b| b.eval(x)).sum()
    }
}

struct Node {
    value: Affine,
    bound: f64,
}

struct Blocks {
    ident: MonomialNetSpec,
    square: MonomialNetSpec,
    ident_arg: f64,
    square_arg: f64,
}

impl Blocks {
    fn identity(&self, c: &mut Circuit, node: &Node) -> Node {
        let spec = self.ident.rescaled(self.ident_arg / node.bound.max(f64::MIN_POSITIVE));
        Node {
            value: c.monomial(&node.value, &spec),
            bound: node.bound,
        }
    }

    fn product(&self, c: &mut Circuit, u: &Node, v: &Node) -> Node {
        let spec = self
            .square
            .rescaled(self.square_arg / (u.bound + v.bound).max(f64::MIN_POSITIVE));
        Node {
            value: c.mult2(&u.value, &v.value, &spec),
            bound: u.bound * v.bound,
        }
    }
}

/// Compiles `P̄` on a `K^d` grid into subnets of depth `L` and width `r`.
///
/// Every monomial `c·Π_s z_{i_s}` of a piece, `z = x − u_k`, together with
/// that piece's sigmoid gates becomes one product circuit: the inputs `z/K`
/// and `σ(M(x_j − u_j))/K` are multiplied by a tree of multipliers and the
/// result is carried to level `L` by identity networks, then scaled by
/// `K^{#inputs}·c`. Each top-level neuron of that circuit becomes its own
/// subnet; constant parts are collected in one subnet whose weights are all
/// zero (top neuron `σ(0) = 1/2`).
pub fn assemble_taylor_net(f: &SmoothTarget, cfg: &AssemblyConfig) -> Result<TaylorNet> {
    let d = f.dim();
    let k = cfg.cells;
    if k < cfg.min_cells.max(1) {
        return Err(Error::Config(format!(
            "need at least {} cells per axis, got {k}",
            cfg.min_cells.max(1)
        )));
    }
    if cfg.depth == 0 || cfg.width == 0 {
        return Err(Error::Config("depth and width must be at least 1".into()));
    }
    let n = cfg.neurons.unwrap_or_else(|| default_block_neurons(f.p(), d));
    let grid = TaylorGrid::new(f.a(), k, d)?;
    let m = cfg.smoothing.unwrap_or_else(|| default_smoothing(k));
    let pieces = build_pieces(f, grid)?.with_smoothing(m);
    let ident = MonomialNetSpec::new(1, n)?;
    let square = MonomialNetSpec::new(2, n)?;
    if !(cfg.block_tolerance > 0.0) {
        return Err(Error::Config("block tolerance must be positive".into()));
    }
    let blocks = Blocks {
        ident_arg: ident.argument_for_tolerance(cfg.block_tolerance),
        square_arg: square.argument_for_tolerance(cfg.block_tolerance),
        ident,
        square,
    };
    let kf = k as f64;
    let lower = -f.a();

    let scale_max = pieces
        .pieces()
        .iter()
        .flat_map(|p| p.coeffs.iter())
        .fold(0.0f64, |a, c| a.max(c.abs()));
    let drop_below = 1e-13 * (1.0 + scale_max);

    struct Compiled {
        circuit: Circuit,
        out: Affine,
        factor: f64,
    }
    let mut compiled: Vec<Compiled> = Vec::new();
    let mut constant = 0.0;
    let mut required_depth = 1;
    let mut required_width = 1;

    for (flat, piece) in pieces.pieces().iter().enumerate() {
        let gates: Vec<(usize, f64, f64)> = (0..d)
            .filter(|&j| flat != 0 && piece.center[j] != lower)
            .map(|j| (j, m, piece.center[j]))
            .collect();
        for (alpha, &coef) in pieces.basis().indices().iter().zip(&piece.coeffs) {
            if coef.abs() <= drop_below {
                continue;
            }
            let mut c = Circuit::new(d);
            let mut nodes: Vec<Node> = Vec::new();
            for (j, &e) in alpha.iter().enumerate() {
                let u = piece.center[j];
                for _ in 0..e {
                    nodes.push(Node {
                        value: Affine::input(j).scaled(1.0 / kf).shifted(-u / kf),
                        bound: (f.a() + u.abs()) / kf,
                    });
                }
            }
            for &(j, mm, u) in &gates {
                let idx = c.push_neuron(&Affine::input(j), mm, -mm * u);
                nodes.push(Node {
                    value: Affine {
                        level: 1,
                        terms: vec![(idx, 1.0 / kf)],
                        constant: 0.0,
                    },
                    bound: 1.0 / kf,
                });
            }
            let inputs = nodes.len();
            if inputs == 0 {
                constant += coef;
                continue;
            }
            // align every input to the highest level present
            let top = nodes.iter().map(|v| v.value.level).max().unwrap_or(0);
            for node in nodes.iter_mut() {
                while node.value.level < top {
                    *node = blocks.identity(&mut c, node);
                }
            }
            while nodes.len() > 1 {
                let mut next = Vec::with_capacity(nodes.len().div_ceil(2));
                for pair in nodes.chunks(2) {
                    next.push(match pair {
                        [u, v] => blocks.product(&mut c, u, v),
                        [u] => blocks.identity(&mut c, u),
                        _ => unreachable!(),
                    });
                }
                nodes = next;
            }
            let mut node = nodes.pop().expect("one node left");
            required_depth = required_depth.max(node.value.level.max(1));
            while node.value.level < cfg.depth {
                node = blocks.identity(&mut c, &node);
            }
            let widths = c.widths();
            if let Some(&w) = widths[..widths.len().saturating_sub(1)].iter().max() {
                required_width = required_width.max(w);
            }
            compiled.push(Compiled {
                circuit: c,
                out: node.value,
                factor: coef * kf.powi(inputs as i32),
            });
        }
    }

    if required_depth > cfg.depth || required_width > cfg.width {
        return Err(Error::Capacity {
            required_depth,
            required_width,
            depth: cfg.depth,
            width: cfg.width,
        });
    }

    let topo = Topology::new(d, 1, cfg.depth, cfg.width)?;
    let mut blueprints = Vec::new();
    let mut neurons = 0;
    for comp in &compiled {
        let base = lower_layers(&comp.circuit, topo);
        neurons += comp.circuit.widths().iter().sum::<usize>();
        let top_level = comp.circuit.neurons(cfg.depth);
        for &(i, c) in &comp.out.terms {
            let mut w = base.clone();
            let neuron = &top_level[i];
            write_row(&mut w, cfg.depth - 1, 0, neuron);
            w.output_weights_mut()[0] = comp.factor * c;
            blueprints.push(SubnetBlueprint { weights: w });
        }
        constant += comp.factor * comp.out.constant;
    }
    if constant != 0.0 {
        let mut w = WeightVector::zeros(topo);
        w.output_weights_mut()[0] = 2.0 * constant;
        blueprints.push(SubnetBlueprint { weights: w });
    }
    Ok(TaylorNet {
        blueprints,
        summands: compiled.len() + usize::from(constant != 0.0),
        required_depth,
        required_width,
        neurons,
        pieces,
    })
}

fn write_row(w: &mut WeightVector, layer: usize, row: usize, neuron: &Neuron) {
    w.set(
        WeightIndex::Inner {
            subnet: 0,
            layer,
            row,
            col: 0,
        },
        neuron.bias,
    );
    for &(j, v) in &neuron.inputs {
        let idx = WeightIndex::Inner {
            subnet: 0,
            layer,
            row,
            col: j + 1,
        };
        w.set(idx, w.get(idx) + v);
    }
}

/// All levels below the top written into a single-subnet weight vector.
fn lower_layers(c: &Circuit, topo: Topology) -> WeightVector {
    let mut w = WeightVector::zeros(topo);
    for layer in 0..topo.depth - 1 {
        for (row, neuron) in c.neurons(layer + 1).iter().enumerate() {
            write_row(&mut w, layer, row, neuron);
        }
    }
    w
}

/// Writes blueprints into distinct subnet slots of a zero weight vector and
/// sets the matching output weights; all other output weights stay zero.
///
/// Blueprints narrower than the topology are padded with dead neurons.
pub fn embed_blueprints(
    blueprints: &[SubnetBlueprint],
    topology: Topology,
    slots: &[usize],
) -> Result<WeightVector> {
    if blueprints.len() != slots.len() {
        return Err(Error::Slots(format!(
            "{} blueprints but {} slots",
            blueprints.len(),
            slots.len()
        )));
    }
    let mut seen = vec![false; topology.subnets];
    for &s in slots {
        if s >= topology.subnets {
            return Err(Error::Slots(format!(
                "slot {s} out of range for {} subnets",
                topology.subnets
            )));
        }
        if std::mem::replace(&mut seen[s], true) {
            return Err(Error::Slots(format!("slot {s} used twice")));
        }
    }
    let mut w = WeightVector::zeros(topology);
    for (bp, &slot) in blueprints.iter().zip(slots) {
        let bt = bp.topology();
        if bt.input_dim != topology.input_dim || bt.depth != topology.depth || bt.width > topology.width {
            return Err(Error::Slots(format!(
                "blueprint (d={}, L={}, r={}) does not fit topology (d={}, L={}, r={})",
                bt.input_dim, bt.depth, bt.width, topology.input_dim, topology.depth, topology.width
            )));
        }
        let rows_at = |layer: usize| if layer + 1 == bt.depth { 1 } else { bt.width };
        for layer in 0..bt.depth {
            for row in 0..rows_at(layer) {
                for col in 0..bt.layer_cols(layer) {
                    let v = bp.weights.get(WeightIndex::Inner {
                        subnet: 0,
                        layer,
                        row,
                        col,
                    });
                    if v != 0.0 {
                        w.set(
                            WeightIndex::Inner {
                                subnet: slot,
                                layer,
                                row,
                                col,
                            },
                            v,
                        );
                    }
                }
            }
        }
        w.set(WeightIndex::Output { subnet: slot }, bp.coefficient());
    }
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taylor::{Polynomial, SineRidge};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn sup_on_interval(a: f64, f: impl Fn(f64) -> f64) -> f64 {
        (0..=2000)
            .map(|i| f(-a + 2.0 * a * i as f64 / 2000.0).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn moment_system_small_cases() {
        let a = solve_moment_system(1, 2, &[1.0, 2.0]).unwrap();
        assert!((a[0] + 1.0).abs() < 1e-14 && (a[1] - 1.0).abs() < 1e-14);
        let a = solve_moment_system(2, 3, &[0.0, 1.0, 2.0]).unwrap();
        for (x, y) in a.iter().zip([0.5, -1.0, 0.5]) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    proptest! {
        #[test]
        fn moment_system_matches_lu(k in 1usize..4, extra in 1usize..5, seed in 0u64..1000) {
            let n = k + extra;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let betas: Vec<f64> = (0..n).map(|j| (j as f64 + rng.gen_range(0.1..0.9)) / n as f64).collect();
            let vander = nalgebra::DMatrix::from_fn(n, n, |l, j| betas[j].powi(l as i32));
            let rhs = nalgebra::DVector::from_fn(n, |l, _| if l == k { 1.0 } else { 0.0 });
            let lu = vander.lu().solve(&rhs).unwrap();
            let alphas = solve_moment_system(k, n, &betas).unwrap();
            let scale = lu.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            for (a, b) in alphas.iter().zip(lu.iter()) {
                prop_assert!((a - b).abs() <= 1e-8 * scale, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn moment_system_rejections() {
        assert!(matches!(
            solve_moment_system(1, 2, &[0.5, 0.5]),
            Err(Error::MomentSystem(_))
        ));
        assert!(matches!(solve_moment_system(2, 2, &[0.1, 0.2]), Err(Error::MomentSystem(_))));
        let clustered: Vec<f64> = (0..24).map(|j| 1.0 + j as f64 * 2e-6).collect();
        let err = solve_moment_system(3, 24, &clustered).unwrap_err();
        assert!(err.to_string().contains("residual"), "{err}");
    }

    proptest! {
        #[test]
        fn moment_identities_hold(k in 1usize..4, extra in 1usize..4, seed in 0u64..1000) {
            let n = k + extra;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut betas: Vec<f64> = (0..n).map(|j| (j as f64 + rng.gen_range(0.1..0.9)) / n as f64).collect();
            betas.reverse();
            let alphas = solve_moment_system(k, n, &betas).unwrap();
            prop_assert!(moment_residual(k, &betas, &alphas) <= MOMENT_TOLERANCE);
        }
    }

    #[test]
    fn t_sigma_choices() {
        assert_eq!(choose_t_sigma(1), 0.0);
        let t2 = choose_t_sigma(2);
        assert!(t2 != 0.0 && sigma_deriv(2, t2).abs() > 0.0);
        for k in 1..=6 {
            assert!(sigma_deriv(k, choose_t_sigma(k)).abs() >= 1e-3, "k={k}");
        }
    }

    #[test]
    fn rescaling_keeps_moment_identities() {
        let spec = MonomialNetSpec::new(2, 5).unwrap().rescaled(0.03);
        assert!(moment_residual(2, &spec.betas, &spec.alphas) < 1e-9 * 0.03f64.powi(-2));
        let direct = MonomialNetSpec::with_betas(2, 5, spec.betas.clone()).unwrap();
        for (a, b) in spec.alphas.iter().zip(&direct.alphas) {
            assert!((a - b).abs() <= 1e-9 * b.abs());
        }
    }

    #[test]
    fn identity_net() {
        let net = build_monomial_net(1, 4, 0.1).unwrap();
        assert_eq!(net.neurons(), 4);
        assert_eq!(net.circuit().depth(), 1);
        let err = sup_on_interval(0.1, |x| net.eval(x) - x);
        assert!(err <= net.error_bound(), "{err} > {}", net.error_bound());
        assert!(net.eval(0.0).abs() <= 1e-3);
        assert!((net.eval(0.05) - net.spec.eval(0.05)).abs() < 1e-15);
    }

    #[test]
    fn monomial_error_within_remainder_bound() {
        for k in 1..=3 {
            for n in [4, 6] {
                for a in [0.1, 0.2, 0.5] {
                    let net = build_monomial_net(k, n, a).unwrap();
                    let err = sup_on_interval(a, |x| net.eval(x) - x.powi(k as i32));
                    assert!(err <= net.error_bound() + 1e-13, "k={k} N={n} A={a}");
                }
            }
        }
    }

    #[test]
    fn monomial_builder_rejects_wide_inputs() {
        assert!(matches!(build_monomial_net(1, 4, 1.5), Err(Error::Precondition(_))));
        assert!(build_monomial_net(3, 3, 0.1).is_err());
    }

    #[test]
    fn multiplier_properties() {
        let a = 0.1;
        let m = build_mult2(4, a).unwrap();
        assert_eq!(m.neurons(), 8);
        assert!(m.eval(0.0, 0.0).abs() <= 1e-3);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let x = rng.gen_range(-a..a);
            let y = rng.gen_range(-a..a);
            assert!((m.eval(x, y) - x * y).abs() <= m.error_bound());
            assert!((m.eval(x, -y) + m.eval(x, y)).abs() <= 2.0 * m.error_bound());
        }
        assert!(build_mult2(2, a).is_err());
    }

    #[test]
    fn product_tree_structure() {
        for d in 1..=6 {
            let m = build_mult_d(d, 4, 0.1, PreconditionPolicy::Report).unwrap();
            let widths = m.layer_widths();
            assert!(widths.iter().all(|&w| w <= 2 * 4 * d));
            assert_eq!(m.mult_layers(), ceil_log2(d));
            assert_eq!(widths.len(), ceil_log2(d).max(1));
        }
    }

    #[test]
    fn single_input_tree_is_identity_net() {
        let tree = build_mult_d(1, 5, 0.1, PreconditionPolicy::Report).unwrap();
        let id = build_monomial_net(1, 5, 0.1).unwrap();
        for i in 0..=20 {
            let x = -0.1 + i as f64 * 0.01;
            assert!((tree.eval(&[x]) - id.eval(x)).abs() < 1e-15);
        }
    }

    #[test]
    fn product_tree_accuracy() {
        // calibrated on d=3, N=5 (measured c' ≈ 0.05) and frozen
        let c_prime = 0.1;
        let (a, n) = (0.05, 5);
        let m = build_mult_d(3, n, a, PreconditionPolicy::Report).unwrap();
        assert!((m.eval(&[a; 3]) - a.powi(3)).abs() <= c_prime * a.powi(n as i32));
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let mut x: Vec<f64> = (0..3).map(|_| rng.gen_range(-a..a)).collect();
            x[rng.gen_range(0..3)] = 0.0;
            assert!(m.eval(&x).abs() <= c_prime * a.powi(n as i32));
        }
    }

    #[test]
    fn product_tree_precondition_enforced() {
        let err = build_mult_d(3, 5, 0.05, PreconditionPolicy::Enforce).unwrap_err();
        let Error::Precondition(msg) = err else { panic!("wrong error") };
        assert!(msg.contains("exceeds 1"));
        let m = build_mult_d(3, 5, 0.05, PreconditionPolicy::Report).unwrap();
        assert!(!m.precondition_holds());
        assert!(msg.contains(&format!("{:e}", m.precondition_value)));
    }

    fn sine_target() -> SmoothTarget {
        SmoothTarget::new(Arc::new(SineRidge { omega: vec![2.0], phase: 0.0 }), 2.0, 4.0, 1.0).unwrap()
    }

    #[test]
    fn ceil_log2_values() {
        assert_eq!(
            (1..=9).map(ceil_log2).collect::<Vec<_>>(),
            vec![0, 1, 2, 2, 3, 3, 3, 3, 4]
        );
    }

    #[test]
    fn assembly_tracks_smoothed_polynomial() {
        let f = sine_target();
        let net = assemble_taylor_net(&f, &AssemblyConfig::new(4, 2, 50)).unwrap();
        assert_eq!(net.required_depth, 2);
        for i in 0..400 {
            let x = [-1.0 + i as f64 / 200.0];
            assert!((net.eval(&x) - net.pieces.eval_pbar(&x)).abs() < 1e-4);
        }
        let monomials = net.pieces.basis().len();
        assert!(net.summands <= monomials * 4);
        assert!(net.blueprints.iter().all(|b| *b.topology() == Topology::new(1, 1, 2, 50).unwrap()));
    }

    #[test]
    fn assembly_of_constant() {
        let c = 0.7;
        let f = SmoothTarget::new(Arc::new(Polynomial::constant(2, c)), 1.5, 1.0, 1.0).unwrap();
        let net = assemble_taylor_net(&f, &AssemblyConfig::new(3, 3, 40)).unwrap();
        assert_eq!(net.blueprints.len(), 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let x = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            assert!((net.eval(&x) - c).abs() < 1e-6);
        }
    }

    #[test]
    fn assembly_in_two_dimensions() {
        let f = SmoothTarget::new(
            Arc::new(crate::taylor::SineProduct { omega: vec![1.0, 1.5], phase: vec![0.3, 0.1] }),
            2.0,
            3.0,
            1.0,
        )
        .unwrap();
        // q = 1, d = 2: ⌈log₂ 3⌉ + 1 = 3 layers
        let net = assemble_taylor_net(&f, &AssemblyConfig::new(3, 3, 60)).unwrap();
        assert_eq!(net.required_depth, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let x = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            assert!((net.eval(&x) - net.pieces.eval_pbar(&x)).abs() < 1e-4);
        }
    }

    #[test]
    fn assembly_capacity_errors() {
        let f = sine_target();
        let err = assemble_taylor_net(&f, &AssemblyConfig::new(4, 1, 50)).unwrap_err();
        assert!(matches!(err, Error::Capacity { required_depth: 2, .. }), "{err}");
        let err = assemble_taylor_net(&f, &AssemblyConfig::new(4, 2, 3)).unwrap_err();
        assert!(matches!(err, Error::Capacity { required_width: 7, .. }), "{err}");
        let mut cfg = AssemblyConfig::new(2, 2, 50);
        cfg.min_cells = 4;
        assert!(matches!(assemble_taylor_net(&f, &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn deeper_networks_carry_by_identity() {
        let f = sine_target();
        let shallow = assemble_taylor_net(&f, &AssemblyConfig::new(4, 2, 50)).unwrap();
        let deep = assemble_taylor_net(&f, &AssemblyConfig::new(4, 4, 50)).unwrap();
        for i in 0..100 {
            let x = [-1.0 + i as f64 / 50.0];
            assert!((shallow.eval(&x) - deep.eval(&x)).abs() < 1e-4);
        }
    }

    fn some_blueprints() -> (Vec<SubnetBlueprint>, Topology) {
        let f = SmoothTarget::new(Arc::new(SineRidge { omega: vec![2.0], phase: 0.0 }), 1.0, 2.0, 1.0).unwrap();
        let net = assemble_taylor_net(&f, &AssemblyConfig::new(3, 2, 10)).unwrap();
        let n = net.blueprints.len();
        (net.blueprints, Topology::new(1, n + 5, 2, 12).unwrap())
    }

    #[test]
    fn embedding_is_linear() {
        let (bps, topo) = some_blueprints();
        let slots: Vec<usize> = (0..bps.len()).collect();
        let w = embed_blueprints(&bps, topo, &slots).unwrap();
        let mut shuffled = slots.clone();
        shuffled.reverse();
        shuffled.iter_mut().for_each(|s| *s += 5);
        let w2 = embed_blueprints(&bps, topo, &shuffled).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let x = [rng.gen_range(-1.0..1.0)];
            let direct: f64 = bps.iter().map(|b| b.eval(&x)).sum();
            assert!((forward(&w, &x) - direct).abs() < 1e-9);
            assert!((forward(&w2, &x) - direct).abs() < 1e-9);
        }
    }

    #[test]
    fn embedding_edge_cases() {
        let (bps, topo) = some_blueprints();
        let empty = embed_blueprints(&[], topo, &[]).unwrap();
        assert_eq!(forward(&empty, &[0.3]), 0.0);
        assert!(matches!(embed_blueprints(&bps[..2], topo, &[1, 1]), Err(Error::Slots(_))));
        assert!(matches!(embed_blueprints(&bps[..2], topo, &[0]), Err(Error::Slots(_))));
        assert!(matches!(embed_blueprints(&bps[..1], topo, &[topo.subnets]), Err(Error::Slots(_))));
        let narrow = Topology::new(1, 4, 2, 5).unwrap();
        assert!(matches!(embed_blueprints(&bps[..1], narrow, &[0]), Err(Error::Slots(_))));
    }
}
