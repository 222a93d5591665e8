"""General feed-forward network over a totally ordered neuron set.

Neurons are globally ordered: inputs first, hidden next, outputs last. Any
earlier neuron may feed any later one, so the wiring (a strictly
upper-triangular binary mask) determines the depth of the network rather than
a fixed layer structure. Pruned weights are exactly zero, which lets the
forward pass ignore the mask entirely and work off the weight matrix alone.

The evaluation engine processes neurons in fixed-size index blocks: one GEMM
per block for contributions from all earlier neurons, plus a sequential walk
only inside blocks that contain intra-block connections. All array shapes in
the forward pass depend only on the neuron count, never on the mask pattern,
so activating a connection with weight zero cannot perturb any float result.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .numerics import Matrix

DEFAULT_BLOCK = 128


class UnreachableOutputError(Exception):
    """No active path connects any input to any output."""


def _relu(u: np.ndarray) -> np.ndarray:
    return np.maximum(u, 0.0)


def _relu_grad(u: np.ndarray) -> np.ndarray:
    return (u > 0.0).astype(np.float64)


ACTIVATIONS = {"relu": (_relu, _relu_grad)}


class Network:
    """Masked-weight DAG over n_in + n_hidden + n_out ordered neurons.

    mask[i, j] = 1 iff the connection i -> j is active. Invariants: the mask
    is strictly upper triangular, nothing terminates at an input, nothing
    originates at an output, and weights are exactly zero wherever the mask
    is zero. `layers` optionally records a layer id per neuron for networks
    with MLP structure (used to restrict growth to adjacent layers).
    """

    def __init__(
        self,
        n_in: int,
        n_hidden: int,
        n_out: int,
        mask: Matrix | None = None,
        weights: Matrix | None = None,
        bias: np.ndarray | None = None,
        activation: str = "relu",
        layers: np.ndarray | None = None,
    ):
        if n_in < 1 or n_out < 1 or n_hidden < 0:
            raise ValueError(f"bad neuron counts: {n_in}/{n_hidden}/{n_out}")
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation: {activation}")
        n = n_in + n_hidden + n_out
        self.n_in = n_in
        self.n_hidden = n_hidden
        self.n_out = n_out
        self.mask = np.zeros((n, n)) if mask is None else np.asarray(mask, dtype=np.float64)
        self.weights = np.zeros((n, n)) if weights is None else np.asarray(weights, dtype=np.float64)
        self.bias = np.zeros(n_hidden + n_out) if bias is None else np.asarray(bias, dtype=np.float64)
        self.activation = activation
        self.layers = None if layers is None else np.asarray(layers, dtype=np.int64)

    @property
    def n(self) -> int:
        return self.n_in + self.n_hidden + self.n_out

    @property
    def hidden_end(self) -> int:
        return self.n_in + self.n_hidden

    def clone(self) -> "Network":
        return Network(
            self.n_in,
            self.n_hidden,
            self.n_out,
            self.mask.copy(),
            self.weights.copy(),
            self.bias.copy(),
            self.activation,
            None if self.layers is None else self.layers.copy(),
        )

    def validate(self) -> None:
        """Check the structural invariants; raises ValueError on violation."""
        n = self.n
        if self.mask.shape != (n, n) or self.weights.shape != (n, n):
            raise ValueError("mask/weights shape does not match neuron count")
        if self.bias.shape != (self.n_hidden + self.n_out,):
            raise ValueError("bias length must be n_hidden + n_out")
        if np.any(np.tril(self.mask) != 0):
            raise ValueError("mask must be strictly upper triangular")
        if np.any(self.mask[:, : self.n_in] != 0):
            raise ValueError("connections must not terminate at input neurons")
        if np.any(self.mask[self.hidden_end :, :] != 0):
            raise ValueError("connections must not originate at output neurons")
        if np.any((self.weights != 0) & (self.mask == 0)):
            raise ValueError("nonzero weight on an inactive connection")
        if not (np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.bias))):
            raise ValueError("non-finite weights or biases")


@dataclass
class ForwardTrace:
    """Per-sample preactivities and activities for every neuron.

    For input neurons u = x = the input value; hidden neurons apply the
    activation, output neurons carry their preactivity (identity pre-softmax).
    """

    u: np.ndarray  # (batch, N)
    x: np.ndarray  # (batch, N)

    def logits(self, n_out: int) -> np.ndarray:
        return self.x[:, self.x.shape[1] - n_out :]


def _block_starts(n_in: int, n: int, block: int) -> list[int]:
    return list(range(n_in, n, block))


def forward(net: Network, batch: Matrix, block: int = DEFAULT_BLOCK) -> ForwardTrace:
    """Evaluate the network on a (batch x n_in) matrix of inputs.

    Neurons are evaluated in global order: u_j = bias_j + sum_{i<j} w_ij x_i.
    The computational path depends only on the nonzero pattern of the weight
    matrix, so growing zero-weight connections leaves every float untouched.
    """
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2 or batch.shape[1] != net.n_in:
        raise ValueError(
            f"batch width mismatch: expected {net.n_in} inputs, got shape {batch.shape}"
        )
    n, b = net.n, batch.shape[0]
    act, _ = ACTIVATIONS[net.activation]
    w = net.weights
    u = np.empty((b, n))
    x = np.empty((b, n))
    u[:, : net.n_in] = batch
    x[:, : net.n_in] = batch
    he = net.hidden_end
    for s in _block_starts(net.n_in, n, block):
        e = min(s + block, n)
        ub = net.bias[s - net.n_in : e - net.n_in] + x[:, :s] @ w[:s, s:e]
        wb = w[s:e, s:e]
        if e - s > 1 and np.any(wb):
            # intra-block connections: walk columns sequentially
            for j in range(s, e):
                c = j - s
                if c > 0 and np.any(wb[:c, c]):
                    ub[:, c] += x[:, s:j] @ wb[:c, c]
                col = ub[:, c] if j >= he else act(ub[:, c])
                x[:, j] = col
        else:
            if e <= he:
                x[:, s:e] = act(ub)
            elif s >= he:
                x[:, s:e] = ub
            else:
                x[:, s:he] = act(ub[:, : he - s])
                x[:, he:e] = ub[:, he - s :]
        u[:, s:e] = ub
    return ForwardTrace(u=u, x=x)


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _check_labels(net: Network, labels: np.ndarray) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.ndim != 1:
        raise ValueError("labels must be a 1-D integer vector")
    if labels.size and (labels.min() < 0 or labels.max() >= net.n_out):
        raise ValueError(
            f"label out of range [0, {net.n_out}): min={labels.min()}, max={labels.max()}"
        )
    return labels.astype(np.int64)


def loss_value(net: Network, batch: Matrix, labels: np.ndarray, weight_decay: float = 0.0) -> float:
    """Mean softmax cross-entropy plus the L2 weight-decay term."""
    labels = _check_labels(net, labels)
    trace = forward(net, batch)
    logits = trace.logits(net.n_out)
    z = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    nll = lse - z[np.arange(len(labels)), labels]
    loss = float(nll.mean())
    if weight_decay:
        loss += 0.5 * weight_decay * float((net.weights**2).sum())
    return loss


def loss_and_gradients(
    net: Network,
    batch: Matrix,
    labels: np.ndarray,
    weight_decay: float = 0.0,
    block: int = DEFAULT_BLOCK,
    _trace_out: list | None = None,
    _dw_buf: np.ndarray | None = None,
):
    """Loss plus gradients: (loss, dW, dBias, dU).

    dW is masked (exactly zero wherever the mask is zero) and includes the
    weight-decay term on active weights. dU holds dLoss/du for every neuron
    and sample, which gradient-based connection growth consumes.
    """
    labels = _check_labels(net, labels)
    trace = forward(net, batch, block=block)
    if _trace_out is not None:
        _trace_out.append(trace)
    n, b = net.n, trace.x.shape[0]
    he = net.hidden_end
    w = net.weights
    _, dact = ACTIVATIONS[net.activation]

    logits = trace.logits(net.n_out)
    p = _softmax(logits)
    z = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    loss = float((lse - z[np.arange(b), labels]).mean())
    if weight_decay:
        loss += 0.5 * weight_decay * float((w**2).sum())

    dlogits = p.copy()
    dlogits[np.arange(b), labels] -= 1.0
    dlogits /= b

    du = np.zeros((b, n))
    dx = np.zeros((b, n))
    du[:, he:] = dlogits
    dw = np.zeros((n, n)) if _dw_buf is None else _dw_buf
    starts = _block_starts(net.n_in, n, block)
    for s in reversed(starts):
        e = min(s + block, n)
        mb = net.mask[s:e, s:e]
        if e - s > 1 and np.any(mb):
            # intra-block active pairs: finalize columns in reverse order
            for j in range(e - 1, s - 1, -1):
                c = j - s
                if j < he:
                    du[:, j] = dx[:, j] * dact(trace.u[:, j])
                if c > 0:
                    if np.any(mb[:c, c]):
                        dx[:, s:j] += du[:, j : j + 1] * w[s:j, j][None, :]
                    dw[s:j, j] = trace.x[:, s:j].T @ du[:, j]
        else:
            if s < he:
                lim = min(e, he)
                du[:, s:lim] = dx[:, s:lim] * dact(trace.u[:, s:lim])
        if s > 0:
            dx[:, :s] += du[:, s:e] @ w[:s, s:e].T
            dw[:s, s:e] = trace.x[:, :s].T @ du[:, s:e]
    du[:, : net.n_in] = dx[:, : net.n_in]

    dw *= net.mask
    if weight_decay:
        dw += weight_decay * w
    dbias = du[:, net.n_in :].sum(axis=0)
    return loss, dw, dbias, du


def predict(net: Network, batch: Matrix, batch_size: int = 512) -> np.ndarray:
    """Argmax class per row, evaluated in chunks."""
    batch = np.asarray(batch, dtype=np.float64)
    out = np.empty(batch.shape[0], dtype=np.int64)
    for s in range(0, batch.shape[0], batch_size):
        chunk = batch[s : s + batch_size]
        out[s : s + len(chunk)] = np.argmax(forward(net, chunk).logits(net.n_out), axis=1)
    return out


def accuracy(net: Network, batch: Matrix, labels: np.ndarray) -> float:
    labels = np.asarray(labels)
    if labels.size == 0:
        return 0.0
    return float(np.mean(predict(net, batch) == labels))


def depth(net: Network) -> int:
    """Edge length of the longest active input-to-output path.

    Raises UnreachableOutputError when no output is reachable from any input.
    """
    n = net.n
    dist = np.full(n, -1, dtype=np.int64)
    dist[: net.n_in] = 0
    for j in range(net.n_in, n):
        src = np.flatnonzero(net.mask[:j, j])
        if src.size:
            reached = dist[src]
            reached = reached[reached >= 0]
            if reached.size:
                dist[j] = int(reached.max()) + 1
    out = dist[net.hidden_end :]
    if np.all(out < 0):
        raise UnreachableOutputError("no active path from any input to any output")
    return int(out.max())


def _path_flags(net: Network) -> np.ndarray:
    """True for neurons on some active input-to-output path.

    Inputs count as path members when they reach an output; outputs when they
    are reached from an input.
    """
    n = net.n
    active = net.mask != 0
    fwd = np.zeros(n, dtype=bool)
    fwd[: net.n_in] = True
    for j in range(net.n_in, n):
        if np.any(active[:j, j] & fwd[:j]):
            fwd[j] = True
    bwd = np.zeros(n, dtype=bool)
    bwd[net.hidden_end :] = True
    for i in range(net.hidden_end - 1, -1, -1):
        if np.any(active[i, i + 1 :] & bwd[i + 1 :]):
            bwd[i] = True
    return fwd & bwd


def connection_count(net: Network) -> int:
    """Active connections plus biases of neurons on an input-output path."""
    edges = int(np.count_nonzero(net.mask))
    on_path = _path_flags(net)
    biases = int(np.count_nonzero(on_path[net.n_in :]))
    return edges + biases


def from_mlp(layer_sizes: list[int], rng: np.random.Generator, activation: str = "relu") -> Network:
    """Fully connected layered network over the global ordering.

    Weights are zero-mean Gaussian with std sqrt(2 / fan_in) per receiving
    neuron; biases start at zero. Records a per-neuron layer id.
    """
    sizes = [int(s) for s in layer_sizes]
    if len(sizes) < 2:
        raise ValueError("need at least an input and an output layer")
    if any(s < 1 for s in sizes):
        raise ValueError(f"empty layer in {sizes}")
    n_in, n_out = sizes[0], sizes[-1]
    n_hidden = sum(sizes[1:-1])
    net = Network(n_in, n_hidden, n_out, activation=activation)
    bounds = np.cumsum([0] + sizes)
    layers = np.empty(net.n, dtype=np.int64)
    for li in range(len(sizes)):
        layers[bounds[li] : bounds[li + 1]] = li
    net.layers = layers
    for li in range(len(sizes) - 1):
        r0, r1 = bounds[li], bounds[li + 1]
        c0, c1 = bounds[li + 1], bounds[li + 2]
        fan_in = sizes[li]
        net.mask[r0:r1, c0:c1] = 1.0
        net.weights[r0:r1, c0:c1] = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(r1 - r0, c1 - c0))
    return net


def prune_isolated_neurons(net: Network) -> Network:
    """Remove hidden neurons lacking active in-edges or out-edges, to a fixed point.

    Removal deletes the neuron's remaining edges, which can isolate further
    neurons; indices are compacted and the ordering of survivors preserved.
    Input and output neurons are never removed.
    """
    n = net.n
    alive = np.ones(n, dtype=bool)
    active = net.mask != 0
    while True:
        sub = active & alive[:, None] & alive[None, :]
        in_deg = sub.sum(axis=0)
        out_deg = sub.sum(axis=1)
        hidden = np.zeros(n, dtype=bool)
        hidden[net.n_in : net.hidden_end] = True
        drop = hidden & alive & ((in_deg == 0) | (out_deg == 0))
        if not np.any(drop):
            break
        alive[drop] = False
    keep = np.flatnonzero(alive)
    dead_cols = ~alive
    net.mask[dead_cols, :] = 0.0
    net.mask[:, dead_cols] = 0.0
    net.weights[dead_cols, :] = 0.0
    net.weights[:, dead_cols] = 0.0
    net.mask = net.mask[np.ix_(keep, keep)]
    net.weights = net.weights[np.ix_(keep, keep)]
    keep_bias = keep[keep >= net.n_in] - net.n_in
    net.bias = net.bias[keep_bias]
    if net.layers is not None:
        net.layers = net.layers[keep]
    net.n_hidden = int(alive[net.n_in : net.hidden_end].sum())
    return net


def _mask_to_rle(mask: Matrix) -> list[list[list[int]]]:
    """Per-row runs of active entries as [start, length] pairs."""
    rows = []
    for r in range(mask.shape[0]):
        nz = np.flatnonzero(mask[r])
        runs = []
        if nz.size:
            start = prev = int(nz[0])
            for c in nz[1:]:
                c = int(c)
                if c == prev + 1:
                    prev = c
                else:
                    runs.append([start, prev - start + 1])
                    start = prev = c
            runs.append([start, prev - start + 1])
        rows.append(runs)
    return rows


def _rle_to_mask(rows: list, n: int) -> Matrix:
    mask = np.zeros((n, n))
    for r, runs in enumerate(rows):
        for start, length in runs:
            mask[r, start : start + length] = 1.0
    return mask


def checkpoint_dict(net: Network, seed: int | None = None) -> dict:
    ii, jj = np.nonzero(net.weights)
    triples = [[int(i), int(j), float(net.weights[i, j])] for i, j in zip(ii, jj)]
    return {
        "format": "growprune-checkpoint",
        "version": 1,
        "n_in": net.n_in,
        "n_hidden": net.n_hidden,
        "n_out": net.n_out,
        "activation": net.activation,
        "seed": seed,
        "mask_rle": _mask_to_rle(net.mask),
        "weights": triples,
        "bias": [float(v) for v in net.bias],
        "layers": None if net.layers is None else [int(v) for v in net.layers],
    }


def network_from_dict(d: dict) -> Network:
    n = d["n_in"] + d["n_hidden"] + d["n_out"]
    net = Network(
        d["n_in"],
        d["n_hidden"],
        d["n_out"],
        mask=_rle_to_mask(d["mask_rle"], n),
        activation=d["activation"],
        layers=None if d.get("layers") is None else np.asarray(d["layers"]),
    )
    for i, j, v in d["weights"]:
        net.weights[i, j] = v
    net.bias = np.asarray(d["bias"], dtype=np.float64)
    return net


def save_checkpoint(net: Network, path, seed: int | None = None) -> None:
    """Write the self-describing checkpoint; write + read round-trips bit-exactly."""
    with open(path, "w") as f:
        json.dump(checkpoint_dict(net, seed=seed), f)


def load_checkpoint(path) -> tuple[Network, dict]:
    with open(path) as f:
        d = json.load(f)
    if d.get("format") != "growprune-checkpoint":
        raise ValueError(f"not a checkpoint file: {path}")
    return network_from_dict(d), d
