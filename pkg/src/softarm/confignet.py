"""Learned per-segment mapping from configuration space to pressures.

Two flavors share one architecture (2-or-4 inputs, 25 tanh hidden units,
2 linear outputs): the plain net maps a target (k, l) to (p_l, p_r); the
memory-aware variant additionally receives the previous target (k', l')
to compensate viscoelastic carry-over.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import plant as pl

HIDDEN = 25
MODEL_FORMAT_VERSION = 1


class TrainingError(RuntimeError):
    pass


@dataclass
class Mlp:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    in_lo: np.ndarray
    in_hi: np.ndarray
    out_lo: np.ndarray
    out_hi: np.ndarray
    final_loss: float = np.inf

    @property
    def n_inputs(self) -> int:
        return self.W1.shape[1]

    def _normalize_in(self, x: np.ndarray) -> np.ndarray:
        span = np.where(self.in_hi > self.in_lo, self.in_hi - self.in_lo, 1.0)
        return 2.0 * (x - self.in_lo) / span - 1.0

    def _normalize_out(self, y: np.ndarray) -> np.ndarray:
        span = np.where(self.out_hi > self.out_lo, self.out_hi - self.out_lo, 1.0)
        return 2.0 * (y - self.out_lo) / span - 1.0

    def _denormalize_out(self, y: np.ndarray) -> np.ndarray:
        span = np.where(self.out_hi > self.out_lo, self.out_hi - self.out_lo, 1.0)
        return (y + 1.0) * span / 2.0 + self.out_lo

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Raw forward pass on already-normalized inputs (batch, in)."""
        h = np.tanh(x @ self.W1.T + self.b1)
        return h @ self.W2.T + self.b2


def init_mlp(n_inputs: int, rng: np.random.Generator) -> Mlp:
    s1 = 1.0 / np.sqrt(n_inputs)
    s2 = 1.0 / np.sqrt(HIDDEN)
    return Mlp(
        W1=rng.normal(0.0, s1, (HIDDEN, n_inputs)),
        b1=np.zeros(HIDDEN),
        W2=rng.normal(0.0, s2, (2, HIDDEN)),
        b2=np.zeros(2),
        in_lo=np.zeros(n_inputs), in_hi=np.ones(n_inputs),
        out_lo=np.zeros(2), out_hi=np.ones(2),
    )


def generate_data(spec: pl.SegmentSpec, n: int, seed: int = 0) -> dict:
    """Random-pressure rollouts on a single-segment plant.

    Returns realized poses, pressure labels and the previous commanded
    target (k', l') so both net flavors can train from one dataset.
    """
    if n < 1:
        raise ValueError("need at least one sample")
    rng = np.random.default_rng(seed)
    state = pl.PlantState.at_rest([spec])
    inputs = np.empty((n, 2))
    prev_targets = np.empty((n, 2))
    labels = np.empty((n, 2))
    prev_target = np.array([0.0, spec.rest_length])
    for i in range(n):
        p = rng.uniform(0.0, spec.pressure_max, 2)
        state = pl.step(state, pl.PressureCommand(p[None, :]))
        inputs[i] = state.pose[0]
        prev_targets[i] = prev_target
        labels[i] = p
        prev_target = np.array(pl.response_2d(spec, p[0], p[1]))
    return {"inputs": inputs, "prev_targets": prev_targets, "labels": labels}


def train(inputs: np.ndarray, labels: np.ndarray, epochs: int = 500,
          lr: float = 1e-2, seed: int = 0, batch_size: int = 32,
          lr_decay: float = 0.99) -> Mlp:
    """Mini-batch gradient descent on mean-squared error."""
    inputs = np.asarray(inputs, dtype=float)
    labels = np.asarray(labels, dtype=float)
    if len(inputs) < 10:
        raise TrainingError("need at least 10 samples")
    rng = np.random.default_rng(seed)
    net = init_mlp(inputs.shape[1], rng)
    net.in_lo, net.in_hi = inputs.min(axis=0), inputs.max(axis=0)
    net.out_lo, net.out_hi = labels.min(axis=0), labels.max(axis=0)
    X = net._normalize_in(inputs)
    Y = net._normalize_out(labels)
    n = len(X)
    net.final_loss = float(np.mean((net.forward(X) - Y) ** 2))
    for epoch in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            xb, yb = X[idx], Y[idx]
            h = np.tanh(xb @ net.W1.T + net.b1)
            out = h @ net.W2.T + net.b2
            err = out - yb
            m = len(idx)
            gW2 = 2.0 * err.T @ h / m
            gb2 = 2.0 * err.mean(axis=0)
            dh = (err @ net.W2) * (1.0 - h * h)
            gW1 = 2.0 * dh.T @ xb / m
            gb1 = 2.0 * dh.mean(axis=0)
            net.W2 -= lr * gW2
            net.b2 -= lr * gb2
            net.W1 -= lr * gW1
            net.b1 -= lr * gb1
        lr *= lr_decay
        loss = float(np.mean((net.forward(X) - Y) ** 2))
        if not np.isfinite(loss):
            raise TrainingError(f"training diverged at epoch {epoch}: loss={loss}")
        net.final_loss = loss
    return net


def mse_loss(net: Mlp, inputs: np.ndarray, labels: np.ndarray) -> float:
    X = net._normalize_in(np.asarray(inputs, dtype=float))
    Y = net._normalize_out(np.asarray(labels, dtype=float))
    return float(np.mean((net.forward(X) - Y) ** 2))


def predict(net: Mlp, x, pressure_max: float = 0.3) -> np.ndarray:
    """Pressures for one configuration input, clipped to actuator bounds."""
    x = np.asarray(x, dtype=float)
    if x.shape != (net.n_inputs,):
        raise ValueError(f"expected input of shape ({net.n_inputs},), got {x.shape}")
    raw = net._denormalize_out(net.forward(net._normalize_in(x[None, :]))[0])
    return np.clip(raw, 0.0, pressure_max)


def save_model(net: Mlp, path) -> None:
    payload = {
        "format_version": MODEL_FORMAT_VERSION,
        "sizes": [net.n_inputs, HIDDEN, 2],
        "W1": net.W1.tolist(), "b1": net.b1.tolist(),
        "W2": net.W2.tolist(), "b2": net.b2.tolist(),
        "in_lo": net.in_lo.tolist(), "in_hi": net.in_hi.tolist(),
        "out_lo": net.out_lo.tolist(), "out_hi": net.out_hi.tolist(),
        "final_loss": net.final_loss,
    }
    with open(path, "w") as fh:
        json.dump(payload, fh)


def load_model(path) -> Mlp:
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("format_version") != MODEL_FORMAT_VERSION:
        raise ValueError("unsupported model format version")
    net = Mlp(
        W1=np.array(payload["W1"]), b1=np.array(payload["b1"]),
        W2=np.array(payload["W2"]), b2=np.array(payload["b2"]),
        in_lo=np.array(payload["in_lo"]), in_hi=np.array(payload["in_hi"]),
        out_lo=np.array(payload["out_lo"]), out_hi=np.array(payload["out_hi"]),
        final_loss=payload["final_loss"],
    )
    n_in, hidden, n_out = payload["sizes"]
    if net.W1.shape != (hidden, n_in) or net.W2.shape != (n_out, hidden):
        raise ValueError("model dimensions inconsistent with header")
    return net


def train_segment_nets(spec: pl.SegmentSpec, n_samples: int = 2000,
                       seed: int = 0, epochs: int = 500) -> tuple[Mlp, Mlp]:
    """Train the plain and the memory-aware net for one segment."""
    data = generate_data(spec, n_samples, seed=seed)
    net = train(data["inputs"], data["labels"], epochs=epochs, seed=seed)
    star_inputs = np.hstack([data["inputs"], data["prev_targets"]])
    net_star = train(star_inputs, data["labels"], epochs=epochs, seed=seed + 1)
    return net, net_star
