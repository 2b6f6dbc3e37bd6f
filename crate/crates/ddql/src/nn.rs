//! Small fully-connected Q-networks on plain `f64`, with reverse-mode
//! gradients and Adam.
//!
//! Three head layouts cover every agent in the crate: a single output head,
//! a shared trunk with two linear heads (the weight-sharing double
//! estimator), and two fully independent networks (the decoupled double
//! estimator). Gradients are exact reverse-mode accumulation and are checked
//! against central finite differences in the test suites, so the rest of the
//! crate can treat [`NetworkParams::backward`] as ground truth.
//!
//! Numerics notes that the tests rely on:
//! - ReLU's derivative at exactly 0 is defined as 0.
//! - Targets never flow through `backward`; callers differentiate the loss
//!   with respect to predictions only.
//! - All parameters live in one flat, documented order (trunk first, then
//!   each head stack; weights row-major before their bias), which is what
//!   Adam, the finite-difference checker, and the checkpoint format share.

use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("invalid architecture: {0}")]
    InvalidSpec(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite value in {context}")]
    NonFinite { context: &'static str },
    #[error("checkpoint parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative as a function of the pre-activation. ReLU at the kink
    /// (pre = 0) uses 0.
    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = pre.tanh();
                1.0 - t * t
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        }
    }

    pub fn parse(s: &str) -> Result<Self, NnError> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(NnError::InvalidSpec(format!("unknown activation {other:?}"))),
        }
    }
}

/// How the network exposes its one or two Q-heads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadMode {
    /// One trunk, one output head. DQN and Double DQN.
    Single,
    /// One shared trunk, two linear output heads.
    DualHead,
    /// Two fully independent stacks; nothing is shared.
    DualNetwork,
}

impl HeadMode {
    pub fn head_count(self) -> usize {
        match self {
            HeadMode::Single => 1,
            HeadMode::DualHead | HeadMode::DualNetwork => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            HeadMode::Single => "single",
            HeadMode::DualHead => "dual_head",
            HeadMode::DualNetwork => "dual_network",
        }
    }

    pub fn parse(s: &str) -> Result<Self, NnError> {
        match s {
            "single" => Ok(HeadMode::Single),
            "dual_head" => Ok(HeadMode::DualHead),
            "dual_network" => Ok(HeadMode::DualNetwork),
            other => Err(NnError::InvalidSpec(format!("unknown head mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArchitectureSpec {
    pub input_dim: usize,
    pub hidden_sizes: Vec<usize>,
    pub activation: Activation,
    pub n_actions: usize,
    pub head_mode: HeadMode,
    /// One shared bias scalar on each output layer instead of one per
    /// action.
    pub shared_output_bias: bool,
}

impl ArchitectureSpec {
    pub fn validate(&self) -> Result<(), NnError> {
        if self.input_dim == 0 {
            return Err(NnError::InvalidSpec("input_dim must be positive".into()));
        }
        if self.n_actions == 0 {
            return Err(NnError::InvalidSpec("n_actions must be positive".into()));
        }
        if self.hidden_sizes.iter().any(|&h| h == 0) {
            return Err(NnError::InvalidSpec("hidden layer sizes must be positive".into()));
        }
        Ok(())
    }
}

/// Dense row-major matrix, just big enough for this crate.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, NnError> {
        if rows.is_empty() {
            return Err(NnError::ShapeMismatch("matrix needs at least one row".into()));
        }
        let cols = rows[0].len();
        if rows.iter().any(|r| r.len() != cols) {
            return Err(NnError::ShapeMismatch("ragged rows".into()));
        }
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            data.extend_from_slice(r);
        }
        Ok(Matrix { rows: rows.len(), cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }
}

/// One affine layer: `pre = x W^T + b`, weights `out x in` row-major. With a
/// shared bias, `b` holds a single scalar added to every output.
#[derive(Debug, Clone, PartialEq)]
struct Layer {
    w: Matrix,
    b: Vec<f64>,
}

impl Layer {
    fn out_dim(&self) -> usize {
        self.w.rows
    }

    fn in_dim(&self) -> usize {
        self.w.cols
    }

    fn zeros_like(&self) -> Layer {
        Layer { w: Matrix::zeros(self.w.rows, self.w.cols), b: vec![0.0; self.b.len()] }
    }

    fn affine(&self, x: &Matrix, out: &mut Matrix) {
        debug_assert_eq!(x.cols, self.in_dim());
        debug_assert_eq!(out.rows, x.rows);
        debug_assert_eq!(out.cols, self.out_dim());
        for r in 0..x.rows {
            let xr = x.row(r);
            let or = out.row_mut(r);
            for (o, slot) in or.iter_mut().enumerate() {
                let wr = self.w.row(o);
                let mut acc = if self.b.len() == 1 { self.b[0] } else { self.b[o] };
                for (wi, xi) in wr.iter().zip(xr) {
                    acc += wi * xi;
                }
                *slot = acc;
            }
        }
    }
}

fn init_layer<R: Rng + ?Sized>(out_dim: usize, in_dim: usize, shared_bias: bool, rng: &mut R) -> Layer {
    // Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) for weights and biases.
    let bound = 1.0 / (in_dim as f64).sqrt();
    let mut w = Matrix::zeros(out_dim, in_dim);
    for v in &mut w.data {
        *v = rng.random_range(-bound..bound);
    }
    let b_len = if shared_bias { 1 } else { out_dim };
    let b = (0..b_len).map(|_| rng.random_range(-bound..bound)).collect();
    Layer { w, b }
}

/// The full parameter set for one architecture: shared trunk layers (empty in
/// dual-network mode) followed by one stack per head. Within a head stack
/// every layer is activated except the last, which is the linear Q output.
///
/// The same struct doubles as a gradient and Adam-moment container because
/// all three share the exact parameter layout.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    spec: ArchitectureSpec,
    trunk: Vec<Layer>,
    heads: Vec<Vec<Layer>>,
}

impl NetworkParams {
    /// Fresh parameters. Draw order is fixed (trunk, then head 0, then head
    /// 1; per layer: weights row-major, then bias), so one seed pins the
    /// whole initialization. With `identical_init` the second head or
    /// network is a bitwise copy of the first instead of consuming fresh
    /// draws.
    pub fn init<R: Rng + ?Sized>(
        spec: &ArchitectureSpec,
        rng: &mut R,
        identical_init: bool,
    ) -> Result<NetworkParams, NnError> {
        spec.validate()?;
        let full_stack = |rng: &mut R| -> Vec<Layer> {
            let mut dims = vec![spec.input_dim];
            dims.extend_from_slice(&spec.hidden_sizes);
            dims.push(spec.n_actions);
            let mut layers = Vec::new();
            for i in 1..dims.len() {
                let is_output = i == dims.len() - 1;
                layers.push(init_layer(dims[i], dims[i - 1], is_output && spec.shared_output_bias, rng));
            }
            layers
        };
        let (trunk, heads) = match spec.head_mode {
            HeadMode::Single => {
                let mut stack = full_stack(rng);
                let output = stack.pop().expect("stack always has an output layer");
                (stack, vec![vec![output]])
            }
            HeadMode::DualHead => {
                let mut stack = full_stack(rng);
                let head1 = vec![stack.pop().expect("stack always has an output layer")];
                let head2 = if identical_init {
                    head1.clone()
                } else {
                    let fan_in = spec.hidden_sizes.last().copied().unwrap_or(spec.input_dim);
                    vec![init_layer(spec.n_actions, fan_in, spec.shared_output_bias, rng)]
                };
                (stack, vec![head1, head2])
            }
            HeadMode::DualNetwork => {
                let net1 = full_stack(rng);
                let net2 = if identical_init { net1.clone() } else { full_stack(rng) };
                (Vec::new(), vec![net1, net2])
            }
        };
        Ok(NetworkParams { spec: spec.clone(), trunk, heads })
    }

    pub fn spec(&self) -> &ArchitectureSpec {
        &self.spec
    }

    pub fn head_count(&self) -> usize {
        self.heads.len()
    }

    /// Same structure, every value zero. Gradient and moment containers.
    pub fn zeros_like(&self) -> NetworkParams {
        NetworkParams {
            spec: self.spec.clone(),
            trunk: self.trunk.iter().map(Layer::zeros_like).collect(),
            heads: self.heads.iter().map(|h| h.iter().map(Layer::zeros_like).collect()).collect(),
        }
    }

    pub fn n_params(&self) -> usize {
        let layer_count = |l: &Layer| l.w.data.len() + l.b.len();
        self.trunk.iter().map(layer_count).sum::<usize>()
            + self.heads.iter().flatten().map(layer_count).sum::<usize>()
    }

    fn for_each_slice<'a>(&'a self, mut f: impl FnMut(&'a [f64])) {
        for l in self.trunk.iter().chain(self.heads.iter().flatten()) {
            f(&l.w.data);
            f(&l.b);
        }
    }

    fn for_each_slice_mut(&mut self, mut f: impl FnMut(&mut [f64])) {
        for l in self.trunk.iter_mut().chain(self.heads.iter_mut().flatten()) {
            f(&mut l.w.data);
            f(&mut l.b);
        }
    }

    /// All parameters in the documented flat order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        self.copy_flat_into(&mut out);
        out
    }

    pub fn copy_flat_into(&self, out: &mut Vec<f64>) {
        out.clear();
        self.for_each_slice(|s| out.extend_from_slice(s));
    }

    /// Inverse of [`NetworkParams::flatten`].
    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<(), NnError> {
        if flat.len() != self.n_params() {
            return Err(NnError::ShapeMismatch(format!(
                "flat vector has {} values, network has {}",
                flat.len(),
                self.n_params()
            )));
        }
        let mut offset = 0;
        self.for_each_slice_mut(|s| {
            let len = s.len();
            s.copy_from_slice(&flat[offset..offset + len]);
            offset += len;
        });
        Ok(())
    }

    pub fn max_abs_param(&self) -> f64 {
        let mut max = 0.0f64;
        self.for_each_slice(|s| {
            for v in s {
                max = max.max(v.abs());
            }
        });
        max
    }

    fn head_stack_with_trace(
        &self,
        head: usize,
        input: &Matrix,
        trace: Option<&mut Vec<LayerTrace>>,
    ) -> Matrix {
        run_stack(&self.heads[head], self.spec.activation, true, input, trace)
    }

    /// Q-values for a batch of states, one `batch x n_actions` matrix per
    /// head.
    pub fn forward(&self, states: &Matrix) -> Result<Vec<Matrix>, NnError> {
        if states.cols != self.spec.input_dim {
            return Err(NnError::ShapeMismatch(format!(
                "states have {} columns, network expects {}",
                states.cols, self.spec.input_dim
            )));
        }
        let trunk_out = run_stack(&self.trunk, self.spec.activation, false, states, None);
        Ok((0..self.heads.len()).map(|h| self.head_stack_with_trace(h, &trunk_out, None)).collect())
    }

    /// Q-values for one state, one row per head. Allocation-light path for
    /// action selection.
    pub fn forward_single(&self, state: &[f64]) -> Result<Vec<Vec<f64>>, NnError> {
        let m = Matrix::from_rows(std::slice::from_ref(&state.to_vec()))?;
        Ok(self.forward(&m)?.into_iter().map(|out| out.row(0).to_vec()).collect())
    }

    /// Forward pass that records everything `backward` needs.
    pub fn forward_cached(&self, states: &Matrix) -> Result<(Vec<Matrix>, ForwardCache), NnError> {
        if states.cols != self.spec.input_dim {
            return Err(NnError::ShapeMismatch(format!(
                "states have {} columns, network expects {}",
                states.cols, self.spec.input_dim
            )));
        }
        let mut trunk_trace = Vec::new();
        let trunk_out = run_stack(&self.trunk, self.spec.activation, false, states, Some(&mut trunk_trace));
        let mut outputs = Vec::with_capacity(self.heads.len());
        let mut head_traces = Vec::with_capacity(self.heads.len());
        for h in 0..self.heads.len() {
            let mut trace = Vec::new();
            outputs.push(self.head_stack_with_trace(h, &trunk_out, Some(&mut trace)));
            head_traces.push(trace);
        }
        Ok((outputs, ForwardCache { trunk: trunk_trace, heads: head_traces, trunk_out }))
    }

    /// Reverse-mode gradients of a scalar loss given `d loss / d output` for
    /// every head (zero rows for samples a head does not own). The returned
    /// container has this network's shape; trunk gradients accumulate
    /// contributions from both heads.
    pub fn backward(&self, cache: &ForwardCache, output_grads: &[Matrix]) -> Result<NetworkParams, NnError> {
        if output_grads.len() != self.heads.len() {
            return Err(NnError::ShapeMismatch(format!(
                "{} output gradients for {} heads",
                output_grads.len(),
                self.heads.len()
            )));
        }
        let mut grads = self.zeros_like();
        let mut d_trunk_out = Matrix::zeros(cache.trunk_out.rows, cache.trunk_out.cols);
        for h in 0..self.heads.len() {
            let g = &output_grads[h];
            let last = self.heads[h].last().expect("head stacks are non-empty");
            if g.rows != cache.trunk_out.rows || g.cols != last.out_dim() {
                return Err(NnError::ShapeMismatch(format!(
                    "head {h} gradient is {}x{}, expected {}x{}",
                    g.rows,
                    g.cols,
                    cache.trunk_out.rows,
                    last.out_dim()
                )));
            }
            let d_input = backprop_stack(
                &self.heads[h],
                self.spec.activation,
                true,
                &cache.heads[h],
                g,
                &mut grads.heads[h],
            );
            for r in 0..d_trunk_out.rows {
                let acc = d_trunk_out.row_mut(r);
                for (slot, v) in acc.iter_mut().zip(d_input.row(r)) {
                    *slot += v;
                }
            }
        }
        if !self.trunk.is_empty() {
            backprop_stack(
                &self.trunk,
                self.spec.activation,
                false,
                &cache.trunk,
                &d_trunk_out,
                &mut grads.trunk,
            );
        }
        Ok(grads)
    }

    /// `self += scale * other`, entry-wise over the shared layout.
    pub fn add_scaled(&mut self, other: &NetworkParams, scale: f64) {
        let flat = other.flatten();
        let mut offset = 0;
        self.for_each_slice_mut(|s| {
            let len = s.len();
            for (v, o) in s.iter_mut().zip(&flat[offset..offset + len]) {
                *v += scale * o;
            }
            offset += len;
        });
    }

    /// Text checkpoint: a header describing the architecture followed by all
    /// parameters in flat order, one per line, printed so they parse back
    /// bit-exactly.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str("network v1\n");
        out.push_str(&format!("input_dim {}\n", self.spec.input_dim));
        out.push_str("hidden");
        for h in &self.spec.hidden_sizes {
            out.push_str(&format!(" {h}"));
        }
        out.push('\n');
        out.push_str(&format!("activation {}\n", self.spec.activation.name()));
        out.push_str(&format!("n_actions {}\n", self.spec.n_actions));
        out.push_str(&format!("head_mode {}\n", self.spec.head_mode.name()));
        out.push_str(&format!("shared_output_bias {}\n", self.spec.shared_output_bias));
        let flat = self.flatten();
        out.push_str(&format!("params {}\n", flat.len()));
        for v in flat {
            out.push_str(&format!("{v}\n"));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<NetworkParams, NnError> {
        let mut lines = text.lines().enumerate();
        let mut next_line = |expect: &str| -> Result<(usize, String), NnError> {
            lines
                .next()
                .map(|(i, l)| (i + 1, l.to_string()))
                .ok_or_else(|| NnError::Parse { line: 0, msg: format!("missing {expect} line") })
        };
        let (line, magic) = next_line("header")?;
        if magic.trim() != "network v1" {
            return Err(NnError::Parse { line, msg: format!("bad header {magic:?}") });
        }
        let field = |want: &str, got: (usize, String)| -> Result<Vec<String>, NnError> {
            let (line, l) = got;
            let mut parts = l.split_whitespace();
            match parts.next() {
                Some(k) if k == want => Ok(parts.map(str::to_string).collect()),
                other => Err(NnError::Parse { line, msg: format!("expected {want}, got {other:?}") }),
            }
        };
        let one = |want: &str, vals: Vec<String>, line_hint: usize| -> Result<String, NnError> {
            if vals.len() == 1 {
                Ok(vals.into_iter().next().unwrap())
            } else {
                Err(NnError::Parse { line: line_hint, msg: format!("{want} takes one value") })
            }
        };
        let input_dim = one("input_dim", field("input_dim", next_line("input_dim")?)?, 2)?
            .parse::<usize>()
            .map_err(|e| NnError::Parse { line: 2, msg: e.to_string() })?;
        let hidden_sizes = field("hidden", next_line("hidden")?)?
            .iter()
            .map(|t| t.parse::<usize>().map_err(|e| NnError::Parse { line: 3, msg: e.to_string() }))
            .collect::<Result<Vec<_>, _>>()?;
        let activation = Activation::parse(&one("activation", field("activation", next_line("activation")?)?, 4)?)?;
        let n_actions = one("n_actions", field("n_actions", next_line("n_actions")?)?, 5)?
            .parse::<usize>()
            .map_err(|e| NnError::Parse { line: 5, msg: e.to_string() })?;
        let head_mode = HeadMode::parse(&one("head_mode", field("head_mode", next_line("head_mode")?)?, 6)?)?;
        let shared = one("shared_output_bias", field("shared_output_bias", next_line("shared_output_bias")?)?, 7)?
            .parse::<bool>()
            .map_err(|e| NnError::Parse { line: 7, msg: e.to_string() })?;
        let count = one("params", field("params", next_line("params")?)?, 8)?
            .parse::<usize>()
            .map_err(|e| NnError::Parse { line: 8, msg: e.to_string() })?;
        let spec = ArchitectureSpec {
            input_dim,
            hidden_sizes,
            activation,
            n_actions,
            head_mode,
            shared_output_bias: shared,
        };
        // Initialize a correctly shaped container, then overwrite each value.
        let mut zero_rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut params = NetworkParams::init(&spec, &mut zero_rng, true)?;
        let mut flat = Vec::with_capacity(count);
        for (i, l) in lines {
            let line = i + 1;
            let t = l.trim();
            if t.is_empty() {
                continue;
            }
            let v = t.parse::<f64>().map_err(|e| NnError::Parse { line, msg: e.to_string() })?;
            flat.push(v);
        }
        if flat.len() != count {
            return Err(NnError::Parse {
                line: 0,
                msg: format!("expected {count} parameters, found {}", flat.len()),
            });
        }
        params.assign_flat(&flat)?;
        Ok(params)
    }
}

use rand::SeedableRng;

/// Per-layer records from a cached forward pass. `trunk_out` equals the
/// input batch when the trunk is empty.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    trunk: Vec<LayerTrace>,
    heads: Vec<Vec<LayerTrace>>,
    trunk_out: Matrix,
}

#[derive(Debug, Clone)]
struct LayerTrace {
    input: Matrix,
    pre: Matrix,
}

/// Runs `layers` over `input`. When `linear_last` is set the final layer
/// skips the activation (output layers are linear). Records traces when
/// asked.
fn run_stack(
    layers: &[Layer],
    activation: Activation,
    linear_last: bool,
    input: &Matrix,
    mut trace: Option<&mut Vec<LayerTrace>>,
) -> Matrix {
    let mut x = input.clone();
    for (i, layer) in layers.iter().enumerate() {
        let mut pre = Matrix::zeros(x.rows, layer.out_dim());
        layer.affine(&x, &mut pre);
        let is_linear = linear_last && i == layers.len() - 1;
        let post = if is_linear {
            pre.clone()
        } else {
            let mut post = pre.clone();
            for v in &mut post.data {
                *v = activation.apply(*v);
            }
            post
        };
        if let Some(t) = trace.as_deref_mut() {
            t.push(LayerTrace { input: x, pre });
        }
        x = post;
    }
    x
}

/// Walks a stack backward. `d_out` is the gradient at the stack output;
/// returns the gradient at the stack input and accumulates per-layer
/// gradients into `grads`.
fn backprop_stack(
    layers: &[Layer],
    activation: Activation,
    linear_last: bool,
    traces: &[LayerTrace],
    d_out: &Matrix,
    grads: &mut [Layer],
) -> Matrix {
    let mut d_post = d_out.clone();
    for (i, layer) in layers.iter().enumerate().rev() {
        let trace = &traces[i];
        let is_linear = linear_last && i == layers.len() - 1;
        // d pre = d post * act'(pre), except through the linear output.
        let mut d_pre = d_post;
        if !is_linear {
            for (g, p) in d_pre.data.iter_mut().zip(&trace.pre.data) {
                *g *= activation.derivative(*p);
            }
        }
        let g = &mut grads[i];
        let shared_bias = g.b.len() == 1;
        let mut d_input = Matrix::zeros(trace.input.rows, layer.in_dim());
        for r in 0..d_pre.rows {
            let dr = d_pre.row(r);
            let xr = trace.input.row(r);
            let di = d_input.row_mut(r);
            for (o, &d) in dr.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                if shared_bias {
                    g.b[0] += d;
                } else {
                    g.b[o] += d;
                }
                let gw = g.w.row_mut(o);
                for (slot, x) in gw.iter_mut().zip(xr) {
                    *slot += d * x;
                }
                let wr = layer.w.row(o);
                for (slot, w) in di.iter_mut().zip(wr) {
                    *slot += d * w;
                }
            }
        }
        d_post = d_input;
    }
    d_post
}

/// Mean-squared error and its gradient with respect to the predictions:
/// `loss = (1/N) sum (y - p)^2`, `d loss / d p_i = (2/N) (p_i - y_i)`.
/// Targets are constants here; nothing differentiates through them.
pub fn mse_loss(predictions: &[f64], targets: &[f64]) -> Result<(f64, Vec<f64>), NnError> {
    if predictions.is_empty() {
        return Err(NnError::ShapeMismatch("empty prediction batch".into()));
    }
    if predictions.len() != targets.len() {
        return Err(NnError::ShapeMismatch(format!(
            "{} predictions vs {} targets",
            predictions.len(),
            targets.len()
        )));
    }
    if predictions.iter().chain(targets).any(|v| !v.is_finite()) {
        return Err(NnError::NonFinite { context: "mse inputs" });
    }
    let n = predictions.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(predictions.len());
    for (&p, &y) in predictions.iter().zip(targets) {
        let d = p - y;
        loss += d * d / n;
        grad.push(2.0 * d / n);
    }
    Ok((loss, grad))
}

/// Adam hyperparameters. `Default` carries the published full-scale
/// constants; desk presets override the step size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub step_size: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { step_size: 6.25e-5, beta1: 0.9, beta2: 0.999, epsilon: 1.5e-4 }
    }
}

/// Bias-corrected Adam over a [`NetworkParams`] container. Moments live in
/// flat vectors matching the documented parameter order.
#[derive(Debug, Clone)]
pub struct AdamState {
    config: AdamConfig,
    t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
    scratch_p: Vec<f64>,
    scratch_g: Vec<f64>,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &NetworkParams) -> Self {
        let n = params.n_params();
        AdamState { config, t: 0, m: vec![0.0; n], v: vec![0.0; n], scratch_p: Vec::new(), scratch_g: Vec::new() }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One update: `m = b1 m + (1-b1) g`, `v = b2 v + (1-b2) g^2`, bias
    /// correction by `1 - b^t`, then `p -= a * m_hat / (sqrt(v_hat) + eps)`.
    pub fn step(&mut self, params: &mut NetworkParams, grads: &NetworkParams) -> Result<(), NnError> {
        params.copy_flat_into(&mut self.scratch_p);
        grads.copy_flat_into(&mut self.scratch_g);
        if self.scratch_p.len() != self.m.len() || self.scratch_g.len() != self.m.len() {
            return Err(NnError::ShapeMismatch("adam state sized for a different network".into()));
        }
        if self.scratch_g.iter().any(|g| !g.is_finite()) {
            return Err(NnError::NonFinite { context: "adam gradients" });
        }
        self.t += 1;
        let AdamConfig { step_size, beta1, beta2, epsilon } = self.config;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for i in 0..self.m.len() {
            let g = self.scratch_g[i];
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            self.scratch_p[i] -= step_size * m_hat / (v_hat.sqrt() + epsilon);
        }
        params.assign_flat(&self.scratch_p)
    }

    /// Moments and step count, for checkpointing. Order matches
    /// [`NetworkParams::flatten`].
    pub fn snapshot(&self) -> (u64, &[f64], &[f64]) {
        (self.t, &self.m, &self.v)
    }

    pub fn restore(&mut self, t: u64, m: &[f64], v: &[f64]) -> Result<(), NnError> {
        if m.len() != self.m.len() || v.len() != self.v.len() {
            return Err(NnError::ShapeMismatch("adam snapshot sized for a different network".into()));
        }
        self.t = t;
        self.m.copy_from_slice(m);
        self.v.copy_from_slice(v);
        Ok(())
    }
}

/// Central-difference gradient of `loss` with respect to every parameter:
/// `(loss(p + h e_i) - loss(p - h e_i)) / (2h)`. Slow and exactness-checked
/// against nothing; it exists to audit [`NetworkParams::backward`].
pub fn finite_difference_gradients<F>(params: &NetworkParams, mut loss: F, h: f64) -> NetworkParams
where
    F: FnMut(&NetworkParams) -> f64,
{
    let mut work = params.clone();
    let mut flat = params.flatten();
    let mut grad_flat = vec![0.0; flat.len()];
    for i in 0..flat.len() {
        let original = flat[i];
        flat[i] = original + h;
        work.assign_flat(&flat).expect("same shape");
        let up = loss(&work);
        flat[i] = original - h;
        work.assign_flat(&flat).expect("same shape");
        let down = loss(&work);
        flat[i] = original;
        grad_flat[i] = (up - down) / (2.0 * h);
    }
    let mut out = params.zeros_like();
    out.assign_flat(&grad_flat).expect("same shape");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::ChaCha8Rng;

    fn spec(head_mode: HeadMode) -> ArchitectureSpec {
        ArchitectureSpec {
            input_dim: 3,
            hidden_sizes: vec![5, 4],
            activation: Activation::Relu,
            n_actions: 2,
            head_mode,
            shared_output_bias: false,
        }
    }

    fn random_states(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
        let data: Vec<Vec<f64>> = (0..rows).map(|_| (0..cols).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        Matrix::from_rows(&data).unwrap()
    }

    /// Largest relative disagreement between two gradient containers.
    fn max_rel_err(a: &NetworkParams, b: &NetworkParams) -> f64 {
        a.flatten()
            .iter()
            .zip(b.flatten())
            .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-8))
            .fold(0.0, f64::max)
    }

    #[test]
    fn init_respects_fan_in_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = NetworkParams::init(&spec(HeadMode::Single), &mut rng, true).unwrap();
        // First layer fan-in 3; nothing anywhere can exceed 1/sqrt(min fan_in).
        assert!(p.max_abs_param() <= 1.0 / 3f64.sqrt());
        let flat = p.flatten();
        assert_eq!(flat.len(), p.n_params());
        assert_eq!(p.n_params(), 3 * 5 + 5 + 5 * 4 + 4 + 4 * 2 + 2);
    }

    #[test]
    fn init_is_seed_deterministic() {
        let a = NetworkParams::init(&spec(HeadMode::DualNetwork), &mut ChaCha8Rng::seed_from_u64(9), false).unwrap();
        let b = NetworkParams::init(&spec(HeadMode::DualNetwork), &mut ChaCha8Rng::seed_from_u64(9), false).unwrap();
        assert_eq!(a.flatten(), b.flatten());
    }

    #[test]
    fn identical_init_copies_the_second_estimator_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = NetworkParams::init(&spec(HeadMode::DualHead), &mut rng, true).unwrap();
        assert_eq!(p.heads[0], p.heads[1]);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = NetworkParams::init(&spec(HeadMode::DualNetwork), &mut rng, true).unwrap();
        assert_eq!(p.heads[0], p.heads[1]);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = NetworkParams::init(&spec(HeadMode::DualHead), &mut rng, false).unwrap();
        assert_ne!(p.heads[0], p.heads[1]);
    }

    #[test]
    fn identical_heads_produce_identical_outputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let p = NetworkParams::init(&spec(HeadMode::DualNetwork), &mut rng, true).unwrap();
        let states = random_states(&mut rng, 6, 3);
        let out = p.forward(&states).unwrap();
        assert_eq!(out[0], out[1]);
    }

    #[test]
    fn linear_network_forward_matches_hand_computation() {
        // No hidden layers: Q = W s + b exactly.
        let spec = ArchitectureSpec {
            input_dim: 2,
            hidden_sizes: vec![],
            activation: Activation::Relu,
            n_actions: 2,
            head_mode: HeadMode::Single,
            shared_output_bias: false,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = NetworkParams::init(&spec, &mut rng, true).unwrap();
        p.assign_flat(&[1.0, 2.0, 3.0, 4.0, 0.5, -0.5]).unwrap();
        let out = p.forward(&Matrix::from_rows(&[vec![1.0, 1.0]]).unwrap()).unwrap();
        // Row 0: [1*1 + 2*1 + 0.5, 3*1 + 4*1 - 0.5] = [3.5, 6.5].
        assert_eq!(out[0].row(0), &[3.5, 6.5]);
        let single = p.forward_single(&[1.0, 1.0]).unwrap();
        assert_eq!(single[0], vec![3.5, 6.5]);
    }

    #[test]
    fn shared_output_bias_is_one_scalar_per_head() {
        let spec = ArchitectureSpec {
            input_dim: 2,
            hidden_sizes: vec![],
            activation: Activation::Relu,
            n_actions: 3,
            head_mode: HeadMode::Single,
            shared_output_bias: true,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = NetworkParams::init(&spec, &mut rng, true).unwrap();
        assert_eq!(p.n_params(), 2 * 3 + 1);
        // Zero weights: every action shows exactly the shared bias.
        p.assign_flat(&[0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.7]).unwrap();
        let out = p.forward(&Matrix::from_rows(&[vec![0.3, -0.2]]).unwrap()).unwrap();
        assert_eq!(out[0].row(0), &[0.7, 0.7, 0.7]);
    }

    #[test]
    fn relu_derivative_at_the_kink_is_zero() {
        // One hidden unit stuck at pre = 0: no gradient may flow through it.
        let spec = ArchitectureSpec {
            input_dim: 1,
            hidden_sizes: vec![1],
            activation: Activation::Relu,
            n_actions: 1,
            head_mode: HeadMode::Single,
            shared_output_bias: false,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut p = NetworkParams::init(&spec, &mut rng, true).unwrap();
        p.assign_flat(&[0.0, 0.0, 1.0, 0.5]).unwrap(); // w1 = 0, b1 = 0, w2 = 1, b2 = 0.5
        let states = Matrix::from_rows(&[vec![1.0]]).unwrap();
        let (out, cache) = p.forward_cached(&states).unwrap();
        assert_eq!(out[0].get(0, 0), 0.5);
        let mut g = Matrix::zeros(1, 1);
        g.set(0, 0, 1.0);
        let grads = p.backward(&cache, &[g]).unwrap();
        let flat = grads.flatten();
        // d/dw1 and d/db1 are blocked at the kink; d/dw2 = post(0) = 0,
        // d/db2 = 1.
        assert_eq!(flat, vec![0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn mse_matches_hand_computation_and_rejects_bad_input() {
        let (loss, grad) = mse_loss(&[1.0, 2.0], &[0.0, 0.0]).unwrap();
        assert!((loss - 2.5).abs() < 1e-15);
        assert_eq!(grad, vec![1.0, 2.0]);
        assert!(mse_loss(&[], &[]).is_err());
        assert!(mse_loss(&[1.0], &[1.0, 2.0]).is_err());
        assert!(mse_loss(&[f64::NAN], &[0.0]).is_err());
    }

    #[test]
    fn backward_matches_finite_differences_across_modes() {
        for head_mode in [HeadMode::Single, HeadMode::DualHead, HeadMode::DualNetwork] {
            for activation in [Activation::Relu, Activation::Tanh] {
                for shared in [false, true] {
                    let spec = ArchitectureSpec {
                        input_dim: 3,
                        hidden_sizes: vec![4],
                        activation,
                        n_actions: 2,
                        head_mode,
                        shared_output_bias: shared,
                    };
                    let mut rng = ChaCha8Rng::seed_from_u64(31);
                    let p = NetworkParams::init(&spec, &mut rng, false).unwrap();
                    let states = random_states(&mut rng, 5, 3);
                    let heads = head_mode.head_count();
                    let targets: Vec<Vec<f64>> = (0..heads)
                        .map(|_| (0..5).map(|_| rng.random_range(-1.0..1.0)).collect())
                        .collect();
                    // Loss: sum over heads of MSE between Q(s, a=0) and the
                    // head's targets.
                    let loss_of = |params: &NetworkParams| {
                        let outs = params.forward(&states).unwrap();
                        let mut total = 0.0;
                        for h in 0..heads {
                            let preds: Vec<f64> = (0..5).map(|r| outs[h].get(r, 0)).collect();
                            total += mse_loss(&preds, &targets[h]).unwrap().0;
                        }
                        total
                    };
                    let (outs, cache) = p.forward_cached(&states).unwrap();
                    let mut output_grads = Vec::new();
                    for h in 0..heads {
                        let preds: Vec<f64> = (0..5).map(|r| outs[h].get(r, 0)).collect();
                        let (_, g) = mse_loss(&preds, &targets[h]).unwrap();
                        let mut gm = Matrix::zeros(5, 2);
                        for (r, gv) in g.iter().enumerate() {
                            gm.set(r, 0, *gv);
                        }
                        output_grads.push(gm);
                    }
                    let analytic = p.backward(&cache, &output_grads).unwrap();
                    let numeric = finite_difference_gradients(&p, loss_of, 1e-5);
                    let err = max_rel_err(&analytic, &numeric);
                    assert!(err < 1e-6, "{head_mode:?}/{activation:?}/shared={shared}: rel err {err}");
                }
            }
        }
    }

    #[test]
    fn backward_rejects_mismatched_gradient_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = NetworkParams::init(&spec(HeadMode::DualHead), &mut rng, true).unwrap();
        let states = random_states(&mut rng, 2, 3);
        let (_, cache) = p.forward_cached(&states).unwrap();
        assert!(p.backward(&cache, &[Matrix::zeros(2, 2)]).is_err()); // one grad for two heads
        assert!(p.backward(&cache, &[Matrix::zeros(2, 2), Matrix::zeros(3, 2)]).is_err());
    }

    #[test]
    fn adam_first_step_is_a_full_step_against_the_sign() {
        // alpha = 0.1, w = 0, g = 2: bias correction makes the first update
        // approximately -alpha * sign(g).
        let spec = ArchitectureSpec {
            input_dim: 1,
            hidden_sizes: vec![],
            activation: Activation::Relu,
            n_actions: 1,
            head_mode: HeadMode::Single,
            shared_output_bias: false,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = NetworkParams::init(&spec, &mut rng, true).unwrap();
        p.assign_flat(&[0.0, 0.0]).unwrap();
        let mut g = p.zeros_like();
        g.assign_flat(&[2.0, 2.0]).unwrap();
        let cfg = AdamConfig { step_size: 0.1, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 };
        let mut adam = AdamState::new(cfg, &p);
        adam.step(&mut p, &g).unwrap();
        let flat = p.flatten();
        assert!((flat[0] + 0.1).abs() < 1e-6, "got {}", flat[0]);
        // Same constant gradient again: still a roughly full step.
        adam.step(&mut p, &g).unwrap();
        let flat = p.flatten();
        assert!((flat[0] + 0.2).abs() < 1e-4, "got {}", flat[0]);
        assert_eq!(adam.step_count(), 2);
    }

    #[test]
    fn adam_rejects_non_finite_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = NetworkParams::init(&spec(HeadMode::Single), &mut rng, true).unwrap();
        let mut g = p.zeros_like();
        let mut flat = g.flatten();
        flat[0] = f64::NAN;
        g.assign_flat(&flat).unwrap();
        let mut adam = AdamState::new(AdamConfig::default(), &p);
        assert!(adam.step(&mut p, &g).is_err());
    }

    #[test]
    fn adam_drives_a_small_regression_loss_down() {
        let spec = ArchitectureSpec {
            input_dim: 2,
            hidden_sizes: vec![8],
            activation: Activation::Tanh,
            n_actions: 1,
            head_mode: HeadMode::Single,
            shared_output_bias: false,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut p = NetworkParams::init(&spec, &mut rng, true).unwrap();
        let states = random_states(&mut rng, 16, 2);
        let targets: Vec<f64> = (0..16).map(|r| states.get(r, 0) - 0.5 * states.get(r, 1)).collect();
        let cfg = AdamConfig { step_size: 0.02, ..AdamConfig::default() };
        let mut adam = AdamState::new(cfg, &p);
        let mut losses = Vec::new();
        for _ in 0..300 {
            let (outs, cache) = p.forward_cached(&states).unwrap();
            let preds: Vec<f64> = (0..16).map(|r| outs[0].get(r, 0)).collect();
            let (loss, grad) = mse_loss(&preds, &targets).unwrap();
            losses.push(loss);
            let mut gm = Matrix::zeros(16, 1);
            for (r, gv) in grad.iter().enumerate() {
                gm.set(r, 0, *gv);
            }
            let grads = p.backward(&cache, &[gm]).unwrap();
            adam.step(&mut p, &grads).unwrap();
        }
        assert!(losses.last().unwrap() < &(losses[0] * 0.01), "{} -> {}", losses[0], losses.last().unwrap());
    }

    #[test]
    fn checkpoint_round_trip_is_bitwise() {
        for head_mode in [HeadMode::Single, HeadMode::DualHead, HeadMode::DualNetwork] {
            let mut rng = ChaCha8Rng::seed_from_u64(23);
            let p = NetworkParams::init(&spec(head_mode), &mut rng, false).unwrap();
            let text = p.to_text();
            let back = NetworkParams::from_text(&text).unwrap();
            assert_eq!(p.spec(), back.spec());
            assert_eq!(p.flatten(), back.flatten());
        }
    }

    #[test]
    fn checkpoint_parser_rejects_corruption() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let p = NetworkParams::init(&spec(HeadMode::Single), &mut rng, true).unwrap();
        let text = p.to_text();
        assert!(NetworkParams::from_text(&text.replace("network v1", "network v9")).is_err());
        let truncated: String = text.lines().take(10).map(|l| format!("{l}\n")).collect();
        assert!(NetworkParams::from_text(&truncated).is_err());
        assert!(NetworkParams::from_text(&text.replacen("activation relu", "activation selu", 1)).is_err());
    }

    #[test]
    fn spec_validation_rejects_degenerate_shapes() {
        let mut s = spec(HeadMode::Single);
        s.input_dim = 0;
        assert!(s.validate().is_err());
        let mut s = spec(HeadMode::Single);
        s.n_actions = 0;
        assert!(s.validate().is_err());
        let mut s = spec(HeadMode::Single);
        s.hidden_sizes = vec![3, 0];
        assert!(s.validate().is_err());
    }

    #[test]
    fn forward_rejects_wrong_input_width() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = NetworkParams::init(&spec(HeadMode::Single), &mut rng, true).unwrap();
        let states = random_states(&mut rng, 2, 4);
        assert!(p.forward(&states).is_err());
    }

    #[test]
    fn add_scaled_accumulates_entrywise() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut a = NetworkParams::init(&spec(HeadMode::Single), &mut rng, true).unwrap();
        let b = NetworkParams::init(&spec(HeadMode::Single), &mut rng, true).unwrap();
        let before = a.flatten();
        a.add_scaled(&b, -2.0);
        let after = a.flatten();
        for ((x, y), z) in before.iter().zip(b.flatten()).zip(after) {
            assert!((x - 2.0 * y - z).abs() < 1e-15);
        }
    }
}
