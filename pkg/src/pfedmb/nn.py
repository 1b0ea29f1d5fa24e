"""Dense multi-branch network kernel.

A multi-branch dense layer keeps B parallel (weight, bias) pairs.  Given a
mixing vector alpha on the probability simplex, the effective layer is the
convex combination W = sum_b alpha_b * W_b (same for the bias), and the layer
output x @ W.T + b equals the alpha-weighted sum of the per-branch outputs.
Combining the branches first is simply the cheaper evaluation order; the
equivalence of the two orders is a tested invariant.

Mixing vectors are parameterized as softmax(logits), so unconstrained SGD on
the logits keeps alpha on the simplex and strictly positive.  Gradients for
the mixing weights are therefore reported with respect to the logits (softmax
Jacobian applied to the raw alpha gradient), and finite-difference checks
perturb logits, not alpha.

Everything is float64.  No operation mutates its inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, NumericError, UsageError

SIMPLEX_ATOL = 1e-9

WRT_W = "w"
WRT_ALPHA = "alpha"
WRT_BOTH = "both"


def as_matrix(x) -> np.ndarray:
    """Coerce to a 2-D float64 array, rejecting anything else."""
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise ConfigurationError(f"expected a 2-D matrix, got ndim={arr.ndim}")
    return arr


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise stable softmax."""
    z = np.asarray(logits, dtype=np.float64)
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class MultiBranchDense:
    """One layer's B branches: weights (B, out_dim, in_dim), biases (B, out_dim)."""

    weights: np.ndarray
    biases: np.ndarray

    def __post_init__(self):
        self.weights = np.ascontiguousarray(self.weights, dtype=np.float64)
        self.biases = np.ascontiguousarray(self.biases, dtype=np.float64)
        if self.weights.ndim != 3:
            raise ConfigurationError("branch weights must have shape (B, out_dim, in_dim)")
        if self.biases.ndim != 2:
            raise ConfigurationError("branch biases must have shape (B, out_dim)")
        if self.biases.shape != self.weights.shape[:2]:
            raise ConfigurationError(
                f"bias shape {self.biases.shape} does not match weights {self.weights.shape}"
            )
        if self.num_branches < 1:
            raise ConfigurationError("a layer needs at least one branch")

    @property
    def num_branches(self) -> int:
        return self.weights.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def in_dim(self) -> int:
        return self.weights.shape[2]

    def copy(self) -> "MultiBranchDense":
        return MultiBranchDense(self.weights.copy(), self.biases.copy())


@dataclass
class AlphaParams:
    """Branch-mixing logits: one row per layer, or a single row shared by all layers.

    The simplex-valued mixing weights are always derived as softmax of the
    logits; only the logits are ever updated.
    """

    logits: np.ndarray
    num_layers: int
    shared: bool = False

    def __post_init__(self):
        self.logits = np.ascontiguousarray(self.logits, dtype=np.float64)
        if self.logits.ndim != 2:
            raise ConfigurationError("alpha logits must have shape (rows, B)")
        rows = 1 if self.shared else self.num_layers
        if self.logits.shape[0] != rows:
            raise ConfigurationError(
                f"expected {rows} logit rows for {self.num_layers} layers "
                f"(shared={self.shared}), got {self.logits.shape[0]}"
            )

    @property
    def num_branches(self) -> int:
        return self.logits.shape[1]

    def values(self) -> np.ndarray:
        """Simplex mixing weights, one row per layer, shape (num_layers, B)."""
        v = softmax(self.logits)
        if self.shared and self.num_layers > 1:
            v = np.repeat(v, self.num_layers, axis=0)
        return v

    def copy(self) -> "AlphaParams":
        return AlphaParams(self.logits.copy(), self.num_layers, self.shared)


def uniform_alpha(num_layers: int, num_branches: int, shared: bool = False) -> AlphaParams:
    """All-zero logits, i.e. every branch weighted 1/B."""
    rows = 1 if shared else num_layers
    return AlphaParams(np.zeros((rows, num_branches)), num_layers, shared)


@dataclass
class Network:
    """A chain of multi-branch dense layers with ReLU between them.

    The last layer emits class logits; the loss is softmax cross entropy.
    """

    layers: list

    def __post_init__(self):
        if len(self.layers) < 1:
            raise ConfigurationError("a network needs at least one layer")
        b = self.layers[0].num_branches
        for i, layer in enumerate(self.layers):
            if layer.num_branches != b:
                raise ConfigurationError("all layers must share the same branch count")
            if i > 0 and layer.in_dim != self.layers[i - 1].out_dim:
                raise ConfigurationError(
                    f"layer {i} expects in_dim={layer.in_dim} but layer {i - 1} "
                    f"emits {self.layers[i - 1].out_dim}"
                )

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    @property
    def num_branches(self) -> int:
        return self.layers[0].num_branches

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def num_classes(self) -> int:
        return self.layers[-1].out_dim

    def copy(self) -> "Network":
        return Network([layer.copy() for layer in self.layers])


def init_network(layer_dims, num_branches: int, seed) -> Network:
    """Fresh network with per-branch uniform(+-1/sqrt(in_dim)) weights, zero biases.

    Branches are initialized independently; identical branches would stay
    redundant under the symmetric gradients they receive.
    """
    dims = [int(d) for d in layer_dims]
    if len(dims) < 2 or any(d < 1 for d in dims):
        raise ConfigurationError(f"layer_dims must be >=2 positive sizes, got {layer_dims}")
    if num_branches < 1:
        raise ConfigurationError("num_branches must be >= 1")
    rng = np.random.default_rng(seed)
    layers = []
    for in_dim, out_dim in zip(dims[:-1], dims[1:]):
        bound = 1.0 / math.sqrt(in_dim)
        w = rng.uniform(-bound, bound, size=(num_branches, out_dim, in_dim))
        layers.append(MultiBranchDense(w, np.zeros((num_branches, out_dim))))
    return Network(layers)


@dataclass
class GradientBundle:
    """Gradients shaped like the parameters they differentiate.

    d_weights / d_biases: one array per layer, same shapes as the layer's
    branch parameters.  d_alpha_logits: same shape as AlphaParams.logits
    (already summed over layers when the logits are shared).
    """

    d_weights: list
    d_biases: list
    d_alpha_logits: np.ndarray


@dataclass
class ForwardCache:
    """Intermediate values from forward needed by the backward pass."""

    inputs: list        # input to each layer, (n, in_dim)
    preacts: list       # pre-activation of each layer, (n, out_dim)
    combined_weights: list
    combined_biases: list
    alpha_values: np.ndarray  # (num_layers, B)


def combine_branches(layer: MultiBranchDense, alpha_l) -> tuple:
    """Collapse a layer to a single (weights, bias) pair via convex combination."""
    a = np.asarray(alpha_l, dtype=np.float64).reshape(-1)
    if a.shape[0] != layer.num_branches:
        raise ConfigurationError(
            f"mixing vector has {a.shape[0]} entries for {layer.num_branches} branches"
        )
    if a.min() < -SIMPLEX_ATOL or abs(a.sum() - 1.0) > SIMPLEX_ATOL:
        raise ConfigurationError("mixing vector is not on the probability simplex")
    w = np.einsum("b,boi->oi", a, layer.weights)
    b = a @ layer.biases
    return w, b


def _check_compatible(net: Network, alpha: AlphaParams) -> None:
    if alpha.num_layers != net.num_layers or alpha.num_branches != net.num_branches:
        raise ConfigurationError(
            f"alpha for {alpha.num_layers} layers x {alpha.num_branches} branches "
            f"does not fit a network with {net.num_layers} layers x "
            f"{net.num_branches} branches"
        )


def forward(net: Network, alpha: AlphaParams, x) -> tuple:
    """Class logits for a batch, plus the cache consumed by loss_and_grads.

    Evaluates each layer through its combined weights; ReLU between layers,
    identity after the last.
    """
    x = as_matrix(x)
    if x.shape[1] != net.in_dim:
        raise ConfigurationError(
            f"input has {x.shape[1]} features, network expects {net.in_dim}"
        )
    _check_compatible(net, alpha)
    avals = alpha.values()
    inputs, preacts, ws, bs = [], [], [], []
    act = x
    for l, layer in enumerate(net.layers):
        w, b = combine_branches(layer, avals[l])
        z = act @ w.T + b
        if not np.isfinite(z).all():
            raise NumericError(f"non-finite activations in layer {l}")
        inputs.append(act)
        preacts.append(z)
        ws.append(w)
        bs.append(b)
        act = np.maximum(z, 0.0) if l < net.num_layers - 1 else z
    return act, ForwardCache(inputs, preacts, ws, bs, avals)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _validate_batch(net: Network, batch) -> tuple:
    x, labels = batch
    x = as_matrix(x)
    labels = np.asarray(labels)
    if x.shape[0] == 0:
        raise UsageError("empty batch")
    if labels.shape != (x.shape[0],):
        raise UsageError(
            f"labels shape {labels.shape} does not match batch of {x.shape[0]}"
        )
    labels = labels.astype(np.int64)
    if labels.min() < 0 or labels.max() >= net.num_classes:
        raise UsageError(
            f"labels must lie in [0, {net.num_classes}); "
            f"got range [{labels.min()}, {labels.max()}]"
        )
    return x, labels


def batch_loss(net: Network, alpha: AlphaParams, x, labels) -> float:
    """Mean softmax cross entropy of the batch, no gradients."""
    x, labels = _validate_batch(net, (x, labels))
    logits, _ = forward(net, alpha, x)
    logp = _log_softmax(logits)
    return float(-logp[np.arange(x.shape[0]), labels].mean())


def loss_and_grads(net: Network, alpha: AlphaParams, batch, wrt: str = WRT_BOTH):
    """Mean cross entropy plus exact reverse-mode gradients.

    wrt selects the parameter group(s): "w" (branch weights and biases),
    "alpha" (mixing logits), or "both".  The non-requested group comes back
    zero-filled so the bundle shape never depends on wrt.
    """
    if wrt not in (WRT_W, WRT_ALPHA, WRT_BOTH):
        raise UsageError(f"wrt must be one of 'w', 'alpha', 'both'; got {wrt!r}")
    x, labels = _validate_batch(net, batch)
    logits, cache = forward(net, alpha, x)
    n = x.shape[0]
    logp = _log_softmax(logits)
    loss = float(-logp[np.arange(n), labels].mean())
    if not math.isfinite(loss):
        raise NumericError("non-finite loss")

    want_w = wrt in (WRT_W, WRT_BOTH)
    want_alpha = wrt in (WRT_ALPHA, WRT_BOTH)
    d_weights = [np.zeros_like(layer.weights) for layer in net.layers]
    d_biases = [np.zeros_like(layer.biases) for layer in net.layers]
    d_alpha_values = np.zeros((net.num_layers, net.num_branches))

    # dL/dz at the output: (softmax - onehot) / n
    dz = np.exp(logp)
    dz[np.arange(n), labels] -= 1.0
    dz /= n

    avals = cache.alpha_values
    for l in reversed(range(net.num_layers)):
        layer = net.layers[l]
        dw_combined = dz.T @ cache.inputs[l]
        db_combined = dz.sum(axis=0)
        if want_w:
            # z depends on branch b only through alpha_b * (W_b, b_b)
            d_weights[l] = avals[l][:, None, None] * dw_combined[None, :, :]
            d_biases[l] = avals[l][:, None] * db_combined[None, :]
        if want_alpha:
            # dL/dalpha_b = <dW_combined, W_b> + <db_combined, b_b>
            d_alpha_values[l] = (
                np.einsum("oi,boi->b", dw_combined, layer.weights)
                + layer.biases @ db_combined
            )
        if l > 0:
            da = dz @ cache.combined_weights[l]
            dz = da * (cache.preacts[l - 1] > 0.0)

    if want_alpha:
        d_alpha_logits = _alpha_values_grad_to_logits(alpha, d_alpha_values)
    else:
        d_alpha_logits = np.zeros_like(alpha.logits)
    return loss, GradientBundle(d_weights, d_biases, d_alpha_logits)


def _alpha_values_grad_to_logits(alpha: AlphaParams, d_values: np.ndarray) -> np.ndarray:
    """Chain a gradient w.r.t. the simplex values through the softmax to the logits."""
    if alpha.shared:
        d_values = d_values.sum(axis=0, keepdims=True)
    v = softmax(alpha.logits)
    inner = (v * d_values).sum(axis=1, keepdims=True)
    return v * (d_values - inner)


def sgd_step(params, grads, learning_rate: float):
    """Plain SGD update p - lr*g over an array or nested lists of arrays."""
    if learning_rate < 0:
        raise ConfigurationError(f"learning rate must be >= 0, got {learning_rate}")
    if isinstance(params, np.ndarray):
        g = np.asarray(grads, dtype=np.float64)
        if g.shape != params.shape:
            raise ConfigurationError(
                f"gradient shape {g.shape} does not match parameter shape {params.shape}"
            )
        return params - learning_rate * g
    if isinstance(params, (list, tuple)):
        if len(grads) != len(params):
            raise ConfigurationError("gradient structure does not match parameters")
        return type(params)(sgd_step(p, g, learning_rate) for p, g in zip(params, grads))
    raise ConfigurationError(f"cannot apply SGD to {type(params).__name__}")


def step_network(net: Network, grads: GradientBundle, learning_rate: float) -> Network:
    """New network with every branch weight and bias stepped by plain SGD."""
    layers = [
        MultiBranchDense(
            sgd_step(layer.weights, grads.d_weights[i], learning_rate),
            sgd_step(layer.biases, grads.d_biases[i], learning_rate),
        )
        for i, layer in enumerate(net.layers)
    ]
    return Network(layers)


def step_alpha(alpha: AlphaParams, grads: GradientBundle, learning_rate: float) -> AlphaParams:
    """New mixing logits stepped by plain SGD."""
    logits = sgd_step(alpha.logits, grads.d_alpha_logits, learning_rate)
    return AlphaParams(logits, alpha.num_layers, alpha.shared)


@dataclass
class GradCheckReport:
    """Max relative error of analytic vs central-difference gradients per group."""

    w_error: float
    alpha_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.w_error <= self.tolerance and self.alpha_error <= self.tolerance


def _rel_err(a: float, n: float) -> float:
    return abs(a - n) / max(abs(a), abs(n), 1e-8)


def gradient_check(
    net: Network,
    alpha: AlphaParams,
    batch,
    h: float = 1e-5,
    tolerance: float = 1e-4,
    grads: GradientBundle = None,
) -> GradCheckReport:
    """Compare analytic gradients against central finite differences.

    Perturbs every branch weight, bias, and mixing logit by +-h and reports
    the max relative error |a - n| / max(|a|, |n|, 1e-8) per parameter group.
    `grads` overrides the analytic bundle; tests use it to inject faults.
    """
    if not 0.0 < h <= 1e-2:
        raise ConfigurationError(f"h must be in (0, 1e-2], got {h}")
    x, labels = _validate_batch(net, batch)
    if grads is None:
        _, grads = loss_and_grads(net, alpha, (x, labels), wrt=WRT_BOTH)

    net = net.copy()
    alpha = alpha.copy()

    def central(arr, idx):
        orig = arr[idx]
        arr[idx] = orig + h
        hi = batch_loss(net, alpha, x, labels)
        arr[idx] = orig - h
        lo = batch_loss(net, alpha, x, labels)
        arr[idx] = orig
        return (hi - lo) / (2.0 * h)

    w_err = 0.0
    for l, layer in enumerate(net.layers):
        for arr, darr in ((layer.weights, grads.d_weights[l]),
                          (layer.biases, grads.d_biases[l])):
            for idx in np.ndindex(arr.shape):
                w_err = max(w_err, _rel_err(darr[idx], central(arr, idx)))

    a_err = 0.0
    for idx in np.ndindex(alpha.logits.shape):
        a_err = max(a_err, _rel_err(grads.d_alpha_logits[idx], central(alpha.logits, idx)))

    return GradCheckReport(w_error=w_err, alpha_error=a_err, tolerance=tolerance)
