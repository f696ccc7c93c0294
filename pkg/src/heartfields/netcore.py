"""Differentiable residual-MLP engine.

A deliberately small reverse-mode core: flat parameter vectors, explicit
forward/backward passes, and a bias-corrected Adam update. Gradients are
exact with respect to both parameters and inputs; the input gradients are
what drive latent-code optimization at reconstruction time. Everything is
a pure function of (parameters, inputs), so repeated calls are bit-identical
and independent optimizations can run concurrently without shared state.
"""

from dataclasses import dataclass, field

import numpy as np


def param_count(input_dim, output_dim, hidden_dim, num_blocks):
    """Number of parameters in the flat layout (input/output projections
    plus ``num_blocks`` residual blocks of two affine maps each)."""
    return (
        input_dim * hidden_dim
        + hidden_dim
        + num_blocks * (2 * hidden_dim * hidden_dim + 2 * hidden_dim)
        + hidden_dim * output_dim
        + output_dim
    )


def _views(flat, input_dim, output_dim, hidden_dim, num_blocks):
    """Reshape a flat parameter (or gradient) vector into named views.

    Layout order: input projection (W, b), then per block (W1, b1, W2, b2),
    then output projection (W, b). Views alias ``flat``.
    """
    h = hidden_dim
    off = 0

    def take(*shape):
        nonlocal off
        n = int(np.prod(shape))
        v = flat[off : off + n].reshape(shape)
        off += n
        return v

    w_in, b_in = take(input_dim, h), take(h)
    blocks = [(take(h, h), take(h), take(h, h), take(h)) for _ in range(num_blocks)]
    w_out, b_out = take(h, output_dim), take(output_dim)
    if off != flat.size:
        raise ValueError(f"flat vector has {flat.size} entries, layout needs {off}")
    return w_in, b_in, blocks, w_out, b_out


@dataclass
class ResidualMlp:
    """Residual MLP: x -> W_in x + b_in -> blocks -> W_out h + b_out.

    Each block computes h + W2 relu(W1 h + b1) + b2, so zeroed block weights
    reduce it to the identity. Outputs are raw (any sigmoid lives in the
    loss layer). ``parameters`` is one flat array in the layout of
    :func:`_views`; if omitted it is allocated zero-filled.
    """

    input_dim: int
    output_dim: int
    hidden_dim: int = 128
    num_blocks: int = 8
    parameters: np.ndarray = None
    activation: str = "relu"

    def __post_init__(self):
        n = param_count(self.input_dim, self.output_dim, self.hidden_dim, self.num_blocks)
        if self.parameters is None:
            self.parameters = np.zeros(n)
        self.parameters = np.ascontiguousarray(self.parameters)
        if self.parameters.shape != (n,):
            raise ValueError(
                f"parameter vector has shape {self.parameters.shape}, expected ({n},)"
            )
        if not np.all(np.isfinite(self.parameters)):
            raise ValueError("parameters contain non-finite values")
        if self.activation != "relu":
            raise ValueError(f"unsupported activation {self.activation!r}")

    @property
    def n_params(self):
        return self.parameters.size

    def views(self):
        return _views(
            self.parameters, self.input_dim, self.output_dim, self.hidden_dim, self.num_blocks
        )

    def astype(self, dtype):
        """Copy of this net with parameters cast to ``dtype``."""
        return ResidualMlp(
            self.input_dim,
            self.output_dim,
            self.hidden_dim,
            self.num_blocks,
            self.parameters.astype(dtype),
        )


def init_params(net, seed):
    """Kaiming fan-in initialization (weights ~ N(0, 2/fan_in), zero biases),
    written into ``net.parameters`` in place. Deterministic for a fixed seed."""
    rng = np.random.default_rng(seed)
    w_in, b_in, blocks, w_out, b_out = net.views()
    for w in [w_in] + [m for blk in blocks for m in (blk[0], blk[2])] + [w_out]:
        fan_in = w.shape[0]
        w[:] = rng.standard_normal(w.shape) * np.sqrt(2.0 / fan_in)
    for b in [b_in] + [m for blk in blocks for m in (blk[1], blk[3])] + [b_out]:
        b[:] = 0.0
    return net


def _check_inputs(net, inputs):
    x = np.asarray(inputs)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != net.input_dim:
        raise ValueError(f"inputs have shape {np.shape(inputs)}, expected (n, {net.input_dim})")
    if not np.all(np.isfinite(x)):
        raise ValueError("inputs contain non-finite values")
    return x.astype(net.parameters.dtype, copy=False)


def forward(net, inputs):
    """Evaluate the network on a batch of input vectors.

    Returns an (n, output_dim) array of raw outputs.
    """
    y, _ = forward_cached(net, inputs, keep=False)
    return y


def forward_cached(net, inputs, keep=True):
    """Forward pass that optionally keeps per-block activations for backward."""
    x = _check_inputs(net, inputs)
    w_in, b_in, blocks, w_out, b_out = net.views()
    h = x @ w_in + b_in
    hin, pre, act = [], [], []
    for w1, b1, w2, b2 in blocks:
        a = h @ w1 + b1
        z = np.maximum(a, 0.0)
        if keep:
            hin.append(h)
            pre.append(a)
            act.append(z)
        h = h + z @ w2 + b2
    y = h @ w_out + b_out
    cache = (x, hin, pre, act, h) if keep else None
    return y, cache


@dataclass
class GradientBuffer:
    """Exact reverse-mode derivatives of (upstream . outputs).

    ``param_grads`` matches the flat parameter layout; ``input_grads`` is
    per-sample with ``input_dim`` columns.
    """

    param_grads: np.ndarray
    input_grads: np.ndarray


def backward(net, inputs, upstream_grads, cache=None):
    """Reverse-mode pass: gradients of sum(upstream_grads * forward(inputs)).

    Recomputes the forward pass unless a cache from :func:`forward_cached`
    for the same inputs is supplied. relu'(0) is taken as 0.
    """
    if cache is None:
        _, cache = forward_cached(net, inputs)
    x, hin, pre, act, hlast = cache
    up = np.asarray(upstream_grads, dtype=net.parameters.dtype)
    if up.ndim == 1:
        up = up[None, :]
    if up.shape != (x.shape[0], net.output_dim):
        raise ValueError(
            f"upstream grads have shape {up.shape}, expected {(x.shape[0], net.output_dim)}"
        )
    if not np.all(np.isfinite(up)):
        raise ValueError("upstream grads contain non-finite values")

    w_in, b_in, blocks, w_out, b_out = net.views()
    grads = np.zeros_like(net.parameters)
    gw_in, gb_in, gblocks, gw_out, gb_out = _views(
        grads, net.input_dim, net.output_dim, net.hidden_dim, net.num_blocks
    )

    gw_out[:] = hlast.T @ up
    gb_out[:] = up.sum(axis=0)
    gh = up @ w_out.T
    for k in range(net.num_blocks - 1, -1, -1):
        w1, _, w2, _ = blocks[k]
        gw1, gb1, gw2, gb2 = gblocks[k]
        ga = (gh @ w2.T) * (pre[k] > 0)
        gw2[:] = act[k].T @ gh
        gb2[:] = gh.sum(axis=0)
        gw1[:] = hin[k].T @ ga
        gb1[:] = ga.sum(axis=0)
        gh = gh + ga @ w1.T
    gw_in[:] = x.T @ gh
    gb_in[:] = gh.sum(axis=0)
    return GradientBuffer(grads, gh @ w_in.T)


@dataclass
class OptimizerState:
    """Adam moment buffers for one flat parameter vector."""

    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        z = np.zeros_like(params)
        return cls(z, z.copy(), 0, lr, beta1, beta2, eps)


def adam_step(params, grads, state):
    """One bias-corrected Adam update, in place. Returns (params, state)."""
    g = np.asarray(grads)
    if g.shape != params.shape or state.first_moment.shape != params.shape:
        raise ValueError("parameter/gradient/moment layouts do not match")
    finite = np.isfinite(g)
    if not finite.all():
        idx = int(np.flatnonzero(~finite)[0])
        raise ValueError(f"non-finite gradient at index {idx}")
    state.step_count += 1
    t = state.step_count
    m, v = state.first_moment, state.second_moment
    m *= state.beta1
    m += (1.0 - state.beta1) * g
    v *= state.beta2
    v += (1.0 - state.beta2) * g * g
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    params -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params, state


def finite_diff_check(net, inputs, step=1e-5, seed=0):
    """Max relative error of backward() against central finite differences.

    The scalar being differentiated is sum(U * forward(x)) for a fixed
    seeded upstream U, checked over every parameter and every input entry.
    Entries where both derivatives vanish count as zero error. Intended for
    small nets (<= 2 blocks); cost is two forward passes per scalar.
    """
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    net = net.astype(np.float64)
    rng = np.random.default_rng(seed)
    upstream = rng.standard_normal((x.shape[0], net.output_dim))

    g = backward(net, x, upstream)
    analytic = np.concatenate([g.param_grads, g.input_grads.ravel()])

    def objective(params, xx):
        probe = ResidualMlp(
            net.input_dim, net.output_dim, net.hidden_dim, net.num_blocks, params
        )
        return float(np.sum(upstream * forward(probe, xx)))

    numeric = np.empty_like(analytic)
    p = net.parameters
    for i in range(p.size):
        pp = p.copy()
        pp[i] = p[i] + step
        hi = objective(pp, x)
        pp[i] = p[i] - step
        lo = objective(pp, x)
        numeric[i] = (hi - lo) / (2.0 * step)
    flat_x = x.ravel()
    for j in range(flat_x.size):
        xx = x.copy().ravel()
        xx[j] = flat_x[j] + step
        hi = objective(p, xx.reshape(x.shape))
        xx[j] = flat_x[j] - step
        lo = objective(p, xx.reshape(x.shape))
        numeric[p.size + j] = (hi - lo) / (2.0 * step)

    # Entries below the floor are finite-difference noise (~|f| * 1e-16 / step),
    # not disagreement; a genuine sign flip on any meaningful gradient still
    # registers as O(1).
    return relative_grad_error(analytic, numeric, floor=1e-7)


def relative_grad_error(analytic, numeric, floor=1e-7):
    """Elementwise max relative error between two gradient vectors, treating
    entries where both magnitudes are below ``floor`` as exact agreement."""
    analytic = np.asarray(analytic, dtype=np.float64).ravel()
    numeric = np.asarray(numeric, dtype=np.float64).ravel()
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    rel = np.where(scale > floor, np.abs(analytic - numeric) / np.maximum(scale, floor), 0.0)
    return float(rel.max()) if rel.size else 0.0
