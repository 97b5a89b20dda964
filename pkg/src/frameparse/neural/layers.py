"""Layers composed from the core ops: embeddings, multi-layer LSTMs with
learned initial states, and the bidirectional sequence encoder."""

from __future__ import annotations

import numpy as np

from . import core
from .core import EmptySequence, Var


def embedding_lookup(tape, table: Var, index: int) -> Var:
    out = Var(table.value[index].copy())
    if tape is not None:

        def backward():
            g = out.grad
            if g is None:
                return
            if table.grad is None:
                table.grad = np.zeros_like(table.value)
            table.grad[index] += g

        tape.record(backward)
    return out


class Lstm:
    """A stack of LSTM layers driven one step at a time.

    States are immutable tuples of per-layer (h, c) Vars, so a state can be
    kept, branched, or popped back to at any time; that is what makes the
    persistent stack encoder work.  ``forget_bias`` pre-loads the forget
    gate, a standard stabilizer.
    """

    def __init__(self, store, prefix: str, input_dim: int, hidden_dim: int,
                 num_layers: int, forget_bias: float = 1.0):
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        self.num_layers = num_layers
        self.layers = []
        for layer in range(num_layers):
            in_dim = input_dim if layer == 0 else hidden_dim
            weight = store.add(f"{prefix}.l{layer}.weight", (4 * hidden_dim, in_dim + hidden_dim))
            bias = store.add(f"{prefix}.l{layer}.bias", (4 * hidden_dim,))
            bias.value[hidden_dim : 2 * hidden_dim] = forget_bias
            h0 = store.add(f"{prefix}.l{layer}.h0", (hidden_dim,))
            c0 = store.add(f"{prefix}.l{layer}.c0", (hidden_dim,))
            self.layers.append((weight, bias, h0, c0))

    def initial(self) -> tuple:
        """The learned empty-sequence state."""
        return tuple((h0, c0) for (_, _, h0, c0) in self.layers)

    def step(self, tape, x: Var, state: tuple, dropout: float = 0.0, rng=None) -> tuple:
        inp = x
        new_state = []
        for layer, (weight, bias, _, _) in enumerate(self.layers):
            if layer > 0 and dropout > 0.0:
                inp = core.dropout(tape, inp, dropout, rng)
            h, c = core.lstm_cell(tape, weight, bias, inp, state[layer][0], state[layer][1])
            new_state.append((h, c))
            inp = h
        return tuple(new_state)

    def output(self, state: tuple) -> Var:
        return state[-1][0]

    def run(self, tape, inputs, dropout: float = 0.0, rng=None) -> list:
        """Feed a whole sequence; returns the state after every element."""
        state = self.initial()
        states = []
        for x in inputs:
            state = self.step(tape, x, state, dropout, rng)
            states.append(state)
        return states


def lstm_sequence(lstm: Lstm, inputs, tape=None, dropout: float = 0.0, rng=None) -> list:
    """Top-layer hidden state for every input position."""
    return [lstm.output(s) for s in lstm.run(tape, inputs, dropout, rng)]


class BiLstmEncoder:
    """Reads a sequence both ways and projects the two final hidden states
    to a fixed-width summary."""

    def __init__(self, store, prefix: str, input_dim: int, hidden_dim: int,
                 output_dim: int, num_layers: int = 1):
        self.fwd = Lstm(store, f"{prefix}.fwd", input_dim, hidden_dim, num_layers)
        self.bwd = Lstm(store, f"{prefix}.bwd", input_dim, hidden_dim, num_layers)
        self.proj_weight = store.add(f"{prefix}.proj.weight", (output_dim, 2 * hidden_dim))
        self.proj_bias = store.add(f"{prefix}.proj.bias", (output_dim,))
        self.output_dim = output_dim

    def final_pair(self, tape, inputs):
        inputs = list(inputs)
        if not inputs:
            raise EmptySequence("cannot encode an empty sequence")
        f_states = self.fwd.run(tape, inputs)
        b_states = self.bwd.run(tape, reversed(inputs))
        return self.fwd.output(f_states[-1]), self.bwd.output(b_states[-1])

    def encode(self, tape, inputs) -> Var:
        h_fwd, h_bwd = self.final_pair(tape, inputs)
        return core.linear(tape, self.proj_weight, self.proj_bias, core.concat(tape, [h_fwd, h_bwd]))


def bilstm_encode(encoder: BiLstmEncoder, inputs, tape=None) -> Var:
    return encoder.encode(tape, inputs)
