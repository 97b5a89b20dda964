"""Discriminative neural transition parser.

The parser state is summarized by up to three sequence encoders: a
persistent stack LSTM over the stack symbols (open non-terminal markers,
shifted words, and composed subtrees), a buffer LSTM read right-to-left so
its top state always reflects the next token to shift, and an LSTM over the
action history.  On REDUCE, the closed subtree is collapsed to a single
vector by a bidirectional-LSTM composition over its label and children.
The concatenated encoder outputs pass through one rectified feed-forward
layer into a scorer over the full action inventory; actions outside the
transition mask get probability exactly zero, so any decode produces a
well-formed tree.

Training is teacher-forced on oracle action sequences with per-example
Adam updates.  Inference is greedy or beam search over action prefixes.
"""

from __future__ import annotations

import threading
from dataclasses import asdict, dataclass, replace
from queue import Empty, Queue
from typing import Optional

import numpy as np

from .dataset import Corpus, Vocab
from .neural import core, layers
from .neural.params import CheckpointError, ParamStore, load_checkpoint, save_checkpoint
from .preprocess import TokenNormalizer, UNK_TOKEN
from .transitions import (
    DEFAULT_MAX_OPEN_NTS,
    Action,
    ActionKind,
    EmptyUtterance,
    REDUCE,
    SHIFT,
    apply,
    initial_state,
    nt,
    oracle,
    valid_actions,
)
from .trees import Label, Tree

MODEL_FORMAT = "frameparse-rnng"
MODEL_VERSION = 1

ENCODERS = ("stack", "buffer", "actions")


class AllEncodersDisabled(ValueError):
    pass


class EmptyChildren(ValueError):
    pass


@dataclass(frozen=True)
class RnngConfig:
    """Model and training configuration.

    ``precision`` selects float32 (training default) or float64 (gradient
    checking).  ``use_*`` flags ablate individual state encoders; at least
    one must stay enabled.
    """

    word_dim: int = 64
    label_dim: int = 32
    action_dim: int = 32
    lstm_units: int = 164
    lstm_layers: int = 2
    dropout: float = 0.34
    lr: float = 0.0004
    weight_decay: float = 0.00004
    epochs: int = 1
    use_stack: bool = True
    use_buffer: bool = True
    use_actions: bool = True
    beam_size: int = 1
    seed: int = 1
    max_open_nts: int = DEFAULT_MAX_OPEN_NTS
    precision: str = "f32"
    finetune_embeddings: bool = False

    def __post_init__(self):
        for name in ("word_dim", "label_dim", "action_dim", "lstm_units", "lstm_layers"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not (self.use_stack or self.use_buffer or self.use_actions):
            raise AllEncodersDisabled("at least one state encoder must be enabled")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if self.epochs < 0 or self.beam_size < 1 or self.max_open_nts < 1:
            raise ValueError("bad epochs/beam_size/max_open_nts")
        if self.precision not in ("f32", "f64"):
            raise ValueError("precision must be 'f32' or 'f64'")

    @property
    def dtype(self):
        return np.float32 if self.precision == "f32" else np.float64

    @property
    def enabled_encoders(self) -> tuple:
        return tuple(
            name
            for name, on in zip(ENCODERS, (self.use_stack, self.use_buffer, self.use_actions))
            if on
        )


def ablate(config: RnngConfig, component: str) -> RnngConfig:
    """Return a config with the named encoder (stack/buffer/actions) off."""
    if component not in ENCODERS:
        raise ValueError(f"unknown encoder {component!r}; expected one of {ENCODERS}")
    flags = {
        "stack": "use_stack",
        "buffer": "use_buffer",
        "actions": "use_actions",
    }
    new = replace(config, **{flags[component]: False})
    if not (new.use_stack or new.use_buffer or new.use_actions):
        raise AllEncodersDisabled("cannot disable the last remaining encoder")
    return new


class Model:
    """Configuration, vocabularies, and all learned parameters."""

    def __init__(self, config: RnngConfig, token_vocab: Vocab, intent_labels, slot_labels,
                 normalizer: TokenNormalizer, embeddings=None):
        self.config = config
        self.token_vocab = token_vocab
        self.intent_labels = tuple(sorted(intent_labels, key=str))
        self.slot_labels = tuple(sorted(slot_labels, key=str))
        self.labels = self.intent_labels + self.slot_labels
        self.label_index = {label: i for i, label in enumerate(self.labels)}
        # Fixed action inventory; its order is also the decode tie-break order.
        self.actions = (SHIFT, REDUCE) + tuple(nt(label) for label in self.labels)
        self.action_index = {action: i for i, action in enumerate(self.actions)}
        self.normalizer = normalizer

        n_intents = len(self.intent_labels)
        n_slots = len(self.slot_labels)
        self._kind_indices = {
            ActionKind.SHIFT: [0],
            ActionKind.REDUCE: [1],
            ActionKind.NT_INTENT: list(range(2, 2 + n_intents)),
            ActionKind.NT_SLOT: list(range(2 + n_intents, 2 + n_intents + n_slots)),
        }

        cfg = config
        store = ParamStore(seed=[cfg.seed, 0], dtype=cfg.dtype)
        self.store = store
        elem = cfg.word_dim  # shared width of stack symbols
        self.word_emb = store.add("word_emb", (len(token_vocab), cfg.word_dim))
        self.label_emb = store.add("label_emb", (max(len(self.labels), 1), cfg.label_dim))
        self.action_emb = store.add("action_emb", (len(self.actions), cfg.action_dim))
        self.label_proj_w = store.add("label_proj.weight", (elem, cfg.label_dim))
        self.label_proj_b = store.add("label_proj.bias", (elem,))
        self.compose = layers.BiLstmEncoder(store, "compose", elem, cfg.lstm_units, elem)
        self.stack_lstm = (
            layers.Lstm(store, "stack", elem, cfg.lstm_units, cfg.lstm_layers)
            if cfg.use_stack
            else None
        )
        self.buffer_lstm = (
            layers.Lstm(store, "buffer", elem, cfg.lstm_units, cfg.lstm_layers)
            if cfg.use_buffer
            else None
        )
        self.action_lstm = (
            layers.Lstm(store, "actions", cfg.action_dim, cfg.lstm_units, cfg.lstm_layers)
            if cfg.use_actions
            else None
        )
        summary_dim = cfg.lstm_units * len(cfg.enabled_encoders)
        self.ff_w = store.add("ff.weight", (cfg.lstm_units, summary_dim))
        self.ff_b = store.add("ff.bias", (cfg.lstm_units,))
        self.out_w = store.add("scorer.weight", (len(self.actions), cfg.lstm_units))
        self.out_b = store.add("scorer.bias", (len(self.actions),))

        if embeddings is not None:
            self._load_pretrained(embeddings)

    def _load_pretrained(self, table) -> None:
        if table.dim != self.config.word_dim:
            raise core.DimensionMismatch(
                f"pretrained embeddings have dim {table.dim}, model word_dim is "
                f"{self.config.word_dim}"
            )
        missing = set(table.missing)
        frozen = np.zeros(len(self.token_vocab), dtype=bool)
        for i, word in enumerate(self.token_vocab):
            if word in table:
                self.word_emb.value[i] = np.asarray(table[word], dtype=self.config.dtype)
                frozen[i] = word not in missing
        if not self.config.finetune_embeddings:
            self.word_emb.frozen_rows = frozen

    def action_indices(self, kinds) -> np.ndarray:
        """Ascending action indices permitted by a set of ActionKinds."""
        out = []
        for kind in (ActionKind.SHIFT, ActionKind.REDUCE, ActionKind.NT_INTENT, ActionKind.NT_SLOT):
            if kind in kinds:
                out.extend(self._kind_indices[kind])
        return np.asarray(out, dtype=np.intp)

    def token_ids(self, tokens) -> list:
        unk = self.token_vocab.index(UNK_TOKEN) if UNK_TOKEN in self.token_vocab else 0
        return [
            self.token_vocab.get(sym, unk)
            for sym in self.normalizer.normalize_sequence(tokens)
        ]


class Hypothesis:
    """A derivation in progress plus the encoder states that summarize it.

    ``stack_states[i]`` is the stack LSTM state after the first ``i``
    symbols, so popping is jumping back to an earlier entry; cloning
    shallow-copies the lists and shares the per-example word vectors and
    precomputed buffer states.
    """

    __slots__ = (
        "state",
        "score",
        "stack_states",
        "stack_elems",
        "open_elem_pos",
        "action_state",
        "word_vecs",
        "buffer_outputs",
    )

    def __init__(self, state, score, stack_states, stack_elems, open_elem_pos,
                 action_state, word_vecs, buffer_outputs):
        self.state = state
        self.score = score
        self.stack_states = stack_states
        self.stack_elems = stack_elems
        self.open_elem_pos = open_elem_pos
        self.action_state = action_state
        self.word_vecs = word_vecs
        self.buffer_outputs = buffer_outputs

    def clone(self) -> "Hypothesis":
        return Hypothesis(
            self.state,
            self.score,
            list(self.stack_states) if self.stack_states is not None else None,
            list(self.stack_elems) if self.stack_elems is not None else None,
            list(self.open_elem_pos) if self.open_elem_pos is not None else None,
            self.action_state,
            self.word_vecs,
            self.buffer_outputs,
        )


def start_hypothesis(model: Model, tokens, tape=None, train: bool = False, rng=None) -> Hypothesis:
    tokens = tuple(tokens)
    state = initial_state(tokens)
    cfg = model.config
    dropout = cfg.dropout if train else 0.0
    needs_words = cfg.use_stack or cfg.use_buffer
    word_vecs = None
    if needs_words:
        ids = model.token_ids(tokens)
        word_vecs = [layers.embedding_lookup(tape, model.word_emb, i) for i in ids]
    buffer_outputs = None
    if cfg.use_buffer:
        # Encoded right to left: entry [pos] reflects the next token to
        # shift; entry [n] is the learned empty-buffer state.
        states = model.buffer_lstm.run(tape, reversed(word_vecs), dropout, rng)
        outputs = [model.buffer_lstm.output(s) for s in states]
        outputs.reverse()
        outputs.append(model.buffer_lstm.output(model.buffer_lstm.initial()))
        buffer_outputs = outputs
    stack_states = [model.stack_lstm.initial()] if cfg.use_stack else None
    stack_elems = [] if cfg.use_stack else None
    open_elem_pos = [] if cfg.use_stack else None
    action_state = model.action_lstm.initial() if cfg.use_actions else None
    return Hypothesis(
        state, 0.0, stack_states, stack_elems, open_elem_pos, action_state, word_vecs,
        buffer_outputs,
    )


def encode_state(model: Model, hyp: Hypothesis, tape=None, train: bool = False, rng=None):
    """Action logits for the current state (over the full inventory)."""
    cfg = model.config
    parts = []
    if cfg.use_stack:
        parts.append(model.stack_lstm.output(hyp.stack_states[-1]))
    if cfg.use_buffer:
        parts.append(hyp.buffer_outputs[hyp.state.pos])
    if cfg.use_actions:
        parts.append(model.action_lstm.output(hyp.action_state))
    summary = core.concat(tape, parts)
    if train and cfg.dropout > 0.0:
        summary = core.dropout(tape, summary, cfg.dropout, rng)
    hidden = core.relu(tape, core.linear(tape, model.ff_w, model.ff_b, summary))
    return core.linear(tape, model.out_w, model.out_b, hidden)


def _label_vector(model: Model, label: Label, tape, train, rng):
    emb = layers.embedding_lookup(tape, model.label_emb, model.label_index[label])
    return core.linear(tape, model.label_proj_w, model.label_proj_b, emb)


def compose(model: Model, label: Label, child_vectors, tape=None):
    """Collapse a closed subtree (label plus ordered child vectors) into a
    single stack-symbol vector."""
    children = list(child_vectors)
    if not children:
        raise EmptyChildren(f"cannot compose {label} with no children")
    label_vec = _label_vector(model, label, tape, False, None)
    return model.compose.encode(tape, [label_vec] + children)


def advance(model: Model, hyp: Hypothesis, action: Action, step_logp: float,
            tape=None, train: bool = False, rng=None) -> None:
    """Apply one action to the hypothesis, updating encoders in place."""
    cfg = model.config
    dropout = cfg.dropout if train else 0.0
    new_state = apply(hyp.state, action, cfg.max_open_nts)
    if cfg.use_stack:
        if action.op == "SHIFT":
            vec = hyp.word_vecs[hyp.state.pos]
            _push(model, hyp, vec, tape, dropout, rng)
        elif action.op == "NT":
            vec = _label_vector(model, action.label, tape, train, rng)
            _push(model, hyp, vec, tape, dropout, rng)
            hyp.open_elem_pos.append(len(hyp.stack_elems) - 1)
        else:  # REDUCE
            opened = hyp.open_elem_pos.pop()
            children = hyp.stack_elems[opened + 1 :]
            label_vec = hyp.stack_elems[opened]
            subtree = model.compose.encode(tape, [label_vec] + children)
            del hyp.stack_elems[opened:]
            del hyp.stack_states[opened + 1 :]
            _push(model, hyp, subtree, tape, dropout, rng)
    if cfg.use_actions:
        emb = layers.embedding_lookup(tape, model.action_emb, model.action_index[action])
        hyp.action_state = model.action_lstm.step(tape, emb, hyp.action_state, dropout, rng)
    hyp.state = new_state
    hyp.score = hyp.score + step_logp


def _push(model: Model, hyp: Hypothesis, vec, tape, dropout, rng) -> None:
    hyp.stack_states.append(
        model.stack_lstm.step(tape, vec, hyp.stack_states[-1], dropout, rng)
    )
    hyp.stack_elems.append(vec)


def example_loss(model: Model, tokens, gold_actions, tape=None, train: bool = False, rng=None):
    """Teacher-forced loss: the sum over steps of masked softmax NLL."""
    hyp = start_hypothesis(model, tokens, tape, train, rng)
    losses = []
    for action in gold_actions:
        kinds = valid_actions(hyp.state, model.config.max_open_nts)
        indices = model.action_indices(kinds)
        logits = encode_state(model, hyp, tape, train, rng)
        losses.append(core.masked_nll(tape, logits, model.action_index[action], indices))
        advance(model, hyp, action, 0.0, tape, train, rng)
    return core.add_n(tape, losses)


def train_example(model: Model, example, rng) -> float:
    """One forward/backward/update step on a single example."""
    gold_actions = oracle(example.tree)
    tape = core.Tape()
    loss = example_loss(model, example.tokens, gold_actions, tape, train=True, rng=rng)
    model.store.zero_grad()
    tape.backward(loss)
    model.store.adam_step(model.config.lr, model.config.weight_decay)
    return float(loss.value)


def train(model: Model, corpus: Corpus, epochs: Optional[int] = None, workers: int = 1,
          rng=None, epoch_callback=None) -> list:
    """Teacher-force the oracle sequences with per-example Adam updates.

    Examples are reshuffled every epoch from the model seed (pass ``rng``
    to continue an existing stream).  Returns the per-epoch mean example
    loss.  ``workers > 1`` trains with lock-free shared updates across
    threads; that mode tolerates lost writes and is not deterministic.
    """
    if epochs is None:
        epochs = model.config.epochs
    if rng is None:
        rng = np.random.default_rng([model.config.seed, 1])
    order = np.arange(len(corpus.examples))
    trace = []
    for epoch in range(epochs):
        rng.shuffle(order)
        if workers <= 1:
            total = 0.0
            for idx in order:
                total += train_example(model, corpus.examples[idx], rng)
        else:
            total = _train_epoch_hogwild(model, corpus, order, workers)
        trace.append(total / len(corpus.examples))
        if epoch_callback is not None:
            epoch_callback(epoch, trace[-1])
    return trace


def _train_epoch_hogwild(model: Model, corpus: Corpus, order, workers: int) -> float:
    """One epoch of lock-free multi-threaded updates over shared parameters.

    Workers race on the shared gradient buffers and values; lost updates
    are tolerated by design, so this path is explicitly non-deterministic.
    """
    queue: Queue = Queue()
    for idx in order:
        queue.put(int(idx))
    totals = [0.0] * workers

    def run(worker_id: int) -> None:
        worker_rng = np.random.default_rng([model.config.seed, 2, worker_id])
        while True:
            try:
                idx = queue.get_nowait()
            except Empty:
                return
            totals[worker_id] += train_example(model, corpus.examples[idx], worker_rng)

    threads = [threading.Thread(target=run, args=(w,)) for w in range(workers)]
    for thread in threads:
        thread.start()
    for thread in threads:
        thread.join()
    return sum(totals)


def _decode_guard(n_tokens: int, max_open: int) -> int:
    return (n_tokens + 2) * (2 * max_open + 2) + 16


def parse_greedy(model: Model, tokens) -> tuple:
    """Highest-scoring action at every step; returns (tree, log-probability).

    Ties break toward the lowest action index (SHIFT < REDUCE < NT in
    inventory order).  The mask plus the open-non-terminal cap guarantee
    termination with a well-formed tree for any parameter values.
    """
    tokens = tuple(tokens)
    if not tokens:
        raise EmptyUtterance("cannot parse an empty utterance")
    hyp = start_hypothesis(model, tokens)
    for _ in range(_decode_guard(len(tokens), model.config.max_open_nts)):
        if hyp.state.is_terminal:
            break
        kinds = valid_actions(hyp.state, model.config.max_open_nts)
        indices = model.action_indices(kinds)
        logits = encode_state(model, hyp)
        logps = core.masked_log_probs(logits.value, indices)
        best = int(np.argmax(logps))
        advance(model, hyp, model.actions[int(indices[best])], float(logps[best]))
    else:
        raise RuntimeError("greedy decode failed to terminate")
    return Tree(hyp.state.root, tokens), hyp.score


def parse_beam(model: Model, tokens, k: int) -> list:
    """Beam search over action prefixes; returns up to ``k`` (tree, score)
    pairs sorted by descending cumulative log-probability.

    Hypotheses completing early are set aside and compete for the final
    ranking; the search stops once no live hypothesis can beat the k-th
    completed score.  With ``k=1`` this reproduces greedy decoding exactly.
    """
    tokens = tuple(tokens)
    if not tokens:
        raise EmptyUtterance("cannot parse an empty utterance")
    if k < 1:
        raise ValueError("beam size must be at least 1")
    live = [start_hypothesis(model, tokens)]
    completed: list = []
    for _ in range(_decode_guard(len(tokens), model.config.max_open_nts)):
        if not live:
            break
        expansions = []
        for src, hyp in enumerate(live):
            kinds = valid_actions(hyp.state, model.config.max_open_nts)
            indices = model.action_indices(kinds)
            logits = encode_state(model, hyp)
            logps = core.masked_log_probs(logits.value, indices)
            for j, action_idx in enumerate(indices):
                expansions.append(
                    (hyp.score + float(logps[j]), src, int(action_idx), float(logps[j]))
                )
        expansions.sort(key=lambda e: (-e[0], e[1], e[2]))
        next_live = []
        for score, src, action_idx, step_logp in expansions[:k]:
            branch = live[src].clone()
            advance(model, branch, model.actions[action_idx], step_logp)
            if branch.state.is_terminal:
                completed.append(branch)
            else:
                next_live.append(branch)
        completed.sort(key=lambda h: -h.score)
        del completed[k:]
        live = next_live
        if len(completed) >= k and live:
            best_live = max(h.score for h in live)
            if best_live <= completed[k - 1].score:
                break
    else:
        raise RuntimeError("beam decode failed to terminate")
    return [(Tree(h.state.root, tokens), h.score) for h in completed[:k]]


def score_actions(model: Model, tokens, actions) -> float:
    """Recompute the cumulative masked log-probability of an action
    sequence under the model (evaluation mode)."""
    hyp = start_hypothesis(model, tuple(tokens))
    total = 0.0
    for action in actions:
        kinds = valid_actions(hyp.state, model.config.max_open_nts)
        indices = model.action_indices(kinds)
        logits = encode_state(model, hyp)
        logps = core.masked_log_probs(logits.value, indices)
        position = np.nonzero(indices == model.action_index[action])[0]
        if position.size == 0:
            raise ValueError(f"action {action} is masked out at this step")
        total = total + float(logps[int(position[0])])
        advance(model, hyp, action, 0.0)
    return total


def exact_match_rate(model: Model, examples) -> float:
    """Fraction of examples whose greedy parse equals the gold tree."""
    hits = 0
    for example in examples:
        predicted, _ = parse_greedy(model, example.tokens)
        hits += predicted == example.tree
    return hits / len(examples) if examples else 0.0


def save_model(model: Model, path) -> None:
    arrays = dict(model.store.value_arrays())
    if model.word_emb.frozen_rows is not None:
        arrays["word_emb.frozen_rows"] = model.word_emb.frozen_rows.astype(np.uint8)
    meta = {
        "format": MODEL_FORMAT,
        "model_version": MODEL_VERSION,
        "config": asdict(model.config),
        "token_vocab": list(model.token_vocab.symbols),
        "intent_labels": [str(label) for label in model.intent_labels],
        "slot_labels": [str(label) for label in model.slot_labels],
        "normalizer": model.normalizer.to_config(),
    }
    save_checkpoint(path, arrays, meta)


def load_model(path) -> Model:
    arrays, meta = load_checkpoint(path)
    if meta.get("format") != MODEL_FORMAT:
        raise CheckpointError(f"{path}: not a parser checkpoint")
    if meta.get("model_version") != MODEL_VERSION:
        raise CheckpointError(
            f"{path}: model version {meta.get('model_version')} unsupported"
        )
    config = RnngConfig(**meta["config"])
    token_vocab = Vocab(meta["token_vocab"])
    intents = tuple(Label.parse(s) for s in meta["intent_labels"])
    slots = tuple(Label.parse(s) for s in meta["slot_labels"])
    normalizer = TokenNormalizer.from_config(meta["normalizer"])
    model = Model(config, token_vocab, intents, slots, normalizer)
    frozen = arrays.pop("word_emb.frozen_rows", None)
    model.store.load_values(arrays)
    if frozen is not None:
        model.word_emb.frozen_rows = frozen.astype(bool)
    return model
