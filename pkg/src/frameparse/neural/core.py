"""Minimal reverse-mode differentiation on numpy arrays.

A ``Tape`` records one backward closure per operation in execution order;
calling ``backward`` seeds the output gradient and replays the closures in
reverse.  Operations work on ``Var`` wrappers around 1-d (or 0-d) float
arrays, which is all the parser needs.  Passing ``tape=None`` runs any
operation forward-only, which is how inference avoids bookkeeping.
"""

from __future__ import annotations

import numpy as np


class DimensionMismatch(ValueError):
    pass


class EmptySequence(ValueError):
    pass


class GoldMasked(ValueError):
    pass


class Var:
    """A value in the computation; ``grad`` is allocated on first use."""

    __slots__ = ("value", "grad")

    def __init__(self, value):
        self.value = np.asarray(value)
        self.grad = None

    def add_grad(self, g) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=self.value.dtype, copy=True)
        else:
            self.grad += g

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self) -> str:
        return f"Var(shape={self.value.shape}, dtype={self.value.dtype})"


class Tape:
    __slots__ = ("_steps",)

    def __init__(self):
        self._steps = []

    def record(self, backward_fn) -> None:
        self._steps.append(backward_fn)

    def backward(self, output: Var, seed=1.0) -> None:
        output.add_grad(np.asarray(seed, dtype=output.value.dtype))
        for fn in reversed(self._steps):
            fn()

    def __len__(self) -> int:
        return len(self._steps)


def _sigmoid(z):
    # Clipped for stability; saturation beyond +-60 is exact in float64 anyway.
    return 1.0 / (1.0 + np.exp(-np.clip(z, -60.0, 60.0)))


def linear(tape, weight: Var, bias, x: Var) -> Var:
    """y = W x + b (bias optional)."""
    if weight.value.shape[1] != x.value.shape[0]:
        raise DimensionMismatch(
            f"linear: weight {weight.value.shape} does not accept input {x.value.shape}"
        )
    y = weight.value @ x.value
    if bias is not None:
        y = y + bias.value
    out = Var(y)
    if tape is not None:

        def backward():
            g = out.grad
            if g is None:
                return
            weight.add_grad(np.outer(g, x.value))
            if bias is not None:
                bias.add_grad(g)
            x.add_grad(weight.value.T @ g)

        tape.record(backward)
    return out


def relu(tape, x: Var) -> Var:
    out = Var(np.maximum(x.value, 0))
    if tape is not None:

        def backward():
            if out.grad is not None:
                x.add_grad(out.grad * (x.value > 0))

        tape.record(backward)
    return out


def concat(tape, parts) -> Var:
    parts = list(parts)
    if not parts:
        raise EmptySequence("concat of zero vectors")
    if len(parts) == 1:
        return parts[0]
    out = Var(np.concatenate([p.value for p in parts]))
    if tape is not None:
        sizes = [p.value.shape[0] for p in parts]

        def backward():
            g = out.grad
            if g is None:
                return
            offset = 0
            for part, size in zip(parts, sizes):
                part.add_grad(g[offset : offset + size])
                offset += size

        tape.record(backward)
    return out


def add_n(tape, terms) -> Var:
    """Sum of same-shape Vars (used to total per-step losses)."""
    terms = list(terms)
    if not terms:
        raise EmptySequence("sum of zero terms")
    total = terms[0].value
    for t in terms[1:]:
        total = total + t.value
    out = Var(total)
    if tape is not None:

        def backward():
            if out.grad is None:
                return
            for t in terms:
                t.add_grad(out.grad)

        tape.record(backward)
    return out


def dropout(tape, x: Var, rate: float, rng) -> Var:
    """Inverted dropout: zero with probability ``rate``, scale survivors by
    1/(1-rate) so the expectation is preserved.  Callers skip this entirely
    in evaluation mode."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return x
    keep = (rng.random(x.value.shape) >= rate).astype(x.value.dtype)
    scale = np.asarray(1.0 / (1.0 - rate), dtype=x.value.dtype)
    mask = keep * scale
    out = Var(x.value * mask)
    if tape is not None:

        def backward():
            if out.grad is not None:
                x.add_grad(out.grad * mask)

        tape.record(backward)
    return out


def lstm_cell(tape, weight: Var, bias: Var, x: Var, h: Var, c: Var):
    """One LSTM step.  Gate layout along the 4H axis is [input, forget,
    candidate, output]; returns (h', c')."""
    hidden = c.value.shape[0]
    xh = np.concatenate([x.value, h.value])
    if weight.value.shape[1] != xh.shape[0]:
        raise DimensionMismatch(
            f"lstm_cell: weight {weight.value.shape} does not accept input+state "
            f"of size {xh.shape[0]}"
        )
    z = weight.value @ xh + bias.value
    gi = _sigmoid(z[:hidden])
    gf = _sigmoid(z[hidden : 2 * hidden])
    gg = np.tanh(z[2 * hidden : 3 * hidden])
    go = _sigmoid(z[3 * hidden :])
    c_new = gf * c.value + gi * gg
    tanh_c = np.tanh(c_new)
    h_new = go * tanh_c
    h_out = Var(h_new)
    c_out = Var(c_new)
    if tape is not None:
        x_size = x.value.shape[0]

        def backward():
            dh = h_out.grad
            dc = c_out.grad
            if dh is None and dc is None:
                return
            if dc is not None:
                dc_total = dc.copy()
            else:
                dc_total = np.zeros_like(c_new)
            if dh is not None:
                d_go = dh * tanh_c
                dc_total += dh * go * (1.0 - tanh_c * tanh_c)
            else:
                d_go = np.zeros_like(go)
            d_gf = dc_total * c.value
            d_gi = dc_total * gg
            d_gg = dc_total * gi
            dz = np.concatenate(
                [
                    d_gi * gi * (1.0 - gi),
                    d_gf * gf * (1.0 - gf),
                    d_gg * (1.0 - gg * gg),
                    d_go * go * (1.0 - go),
                ]
            )
            weight.add_grad(np.outer(dz, xh))
            bias.add_grad(dz)
            dxh = weight.value.T @ dz
            x.add_grad(dxh[:x_size])
            h.add_grad(dxh[x_size:])
            c.add_grad(dc_total * gf)

        tape.record(backward)
    return h_out, c_out


def masked_log_probs(logits: np.ndarray, valid_indices) -> np.ndarray:
    """Log-probabilities over the valid entries only (forward-only helper
    for decoding); positions outside the mask have probability exactly 0."""
    vals = logits[valid_indices]
    m = vals.max()
    shifted = vals - m
    log_z = m + np.log(np.exp(shifted).sum())
    return vals - log_z


def masked_nll(tape, logits: Var, gold_index: int, valid_indices) -> Var:
    """Negative log-likelihood of ``gold_index`` under a softmax restricted
    to ``valid_indices``; masked-out actions get probability exactly 0."""
    vi = np.asarray(valid_indices, dtype=np.intp)
    positions = np.nonzero(vi == gold_index)[0]
    if positions.size == 0:
        raise GoldMasked(f"gold index {gold_index} is not in the valid set")
    vals = logits.value[vi]
    m = vals.max()
    exps = np.exp(vals - m)
    z = exps.sum()
    loss = (m + np.log(z)) - logits.value[gold_index]
    out = Var(np.asarray(loss, dtype=logits.value.dtype))
    if tape is not None:
        probs = exps / z

        def backward():
            g = out.grad
            if g is None:
                return
            dlogits = np.zeros_like(logits.value)
            dlogits[vi] = probs * g
            dlogits[gold_index] -= g
            logits.add_grad(dlogits)

        tape.record(backward)
    return out
