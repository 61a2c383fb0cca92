"""The shared structured layer: score lattices, decoding, and margin loss.

Every model variant reduces to the same lattice shape: an (n, L) emission
matrix plus an (L+1, L) transition matrix whose last row holds the scores
out of the distinguished start state.  Scores are unnormalized log-scores
throughout; training needs only argmax decoding, so the partition function
exists as a diagnostic and as a test oracle, never on the training path.

Modes
-----
discrete
    emission[i][y] = theta_out . f_out(x, i, y); transitions from the
    label-bigram edge features under theta_edge.
neural
    emission[i][y] = theta_dense[y] . h_i; transitions are the learned
    matrix tau.
joint
    emission[i][y] = theta_dense[y] . h_i + theta_out . f_out(x, i, y);
    transition = tau_weight * tau[y'][y] + theta_edge . f_edge(y', y), i.e.
    tau enters the edge clique as one real-valued feature with its own
    learned weight.

Decoding breaks ties toward the lowest label index at every backpointer
decision, so results are deterministic.  ``sequence_score`` fixes the
summation order (start transition, emission 0, then transition/emission per
position); the brute-force oracles score sequences with the same order, so
agreement checks can be exact rather than approximate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .corpus import LabelAlphabet, Sentence
from .embeddings import InputComposer
from .encoder import BiLSTMGrads, BiLSTMParams, backward as encoder_backward, encode
from .features import (
    START_LABEL,
    FeatureAlphabet,
    TemplateSet,
    edge_feature_string,
)

MODES = ("discrete", "neural", "joint")

BRUTE_FORCE_LIMIT = 1_000_000


@dataclass
class ScoreLattice:
    """Emission (n, L) and transition (L+1, L) log-scores; row L is START."""

    emission: np.ndarray
    transition: np.ndarray

    def __post_init__(self):
        self.emission = np.ascontiguousarray(self.emission, dtype=np.float64)
        self.transition = np.ascontiguousarray(self.transition, dtype=np.float64)
        n, L = self.emission.shape
        if self.transition.shape != (L + 1, L):
            raise ValueError(
                f"transition shape {self.transition.shape} does not match {L} labels"
            )
        if not (np.all(np.isfinite(self.emission)) and np.all(np.isfinite(self.transition))):
            raise ValueError("lattice scores must be finite")

    @property
    def n(self):
        return self.emission.shape[0]

    @property
    def num_labels(self):
        return self.emission.shape[1]


@dataclass
class DecodeResult:
    labels: np.ndarray
    score: float


def sequence_score(lattice: ScoreLattice, labels) -> float:
    """Total log-score of one label sequence, in the pinned summation order."""
    labels = np.asarray(labels, dtype=np.int64)
    n, L = lattice.emission.shape
    if labels.shape != (n,):
        raise ValueError(f"expected {n} labels, got shape {labels.shape}")
    if labels.min() < 0 or labels.max() >= L:
        raise ValueError("label index out of range")
    score = lattice.transition[L, labels[0]] + lattice.emission[0, labels[0]]
    for i in range(1, n):
        score = score + lattice.transition[labels[i - 1], labels[i]]
        score = score + lattice.emission[i, labels[i]]
    return float(score)


def viterbi(lattice: ScoreLattice) -> DecodeResult:
    """Exact argmax decoding; ties resolve to the lowest label index."""
    labels = _kernels.viterbi_path(lattice.emission, lattice.transition)
    return DecodeResult(labels=labels, score=sequence_score(lattice, labels))


def _augment(lattice: ScoreLattice, gold) -> ScoreLattice:
    """Add 1.0 to every emission whose label disagrees with gold."""
    gold = np.asarray(gold, dtype=np.int64)
    n, L = lattice.emission.shape
    if gold.shape != (n,):
        raise ValueError(f"expected {n} gold labels, got shape {gold.shape}")
    cost = np.ones((n, L))
    cost[np.arange(n), gold] = 0.0
    return ScoreLattice(emission=lattice.emission + cost, transition=lattice.transition)


def cost_augmented_viterbi(lattice: ScoreLattice, gold) -> DecodeResult:
    """Argmax of sequence score plus hamming distance to ``gold``.

    The returned score includes the cost term.
    """
    aug = _augment(lattice, gold)
    labels = _kernels.viterbi_path(aug.emission, aug.transition)
    return DecodeResult(labels=labels, score=sequence_score(aug, labels))


def margin_loss(lattice: ScoreLattice, gold) -> tuple[float, DecodeResult]:
    """Structured hinge: max over y of (score + hamming) minus the gold score.

    Non-negative by construction; zero exactly when gold attains the
    cost-augmented maximum.
    """
    result = cost_augmented_viterbi(lattice, gold)
    loss = result.score - sequence_score(lattice, gold)
    return loss, result


def log_partition(lattice: ScoreLattice) -> float:
    """Forward-algorithm log of the summed exponentiated sequence scores."""
    return float(_kernels.log_partition(lattice.emission, lattice.transition))


# ---------------------------------------------------------------------------
# brute-force oracles
# ---------------------------------------------------------------------------


def enumerate_sequence_scores(lattice: ScoreLattice) -> tuple[np.ndarray, np.ndarray]:
    """All L^n label sequences in lexicographic order with their scores.

    Scores are accumulated per position exactly as ``sequence_score`` does,
    so each entry is bitwise equal to scoring that sequence directly.
    """
    n, L = lattice.emission.shape
    if L**n > BRUTE_FORCE_LIMIT:
        raise ValueError(f"{L}^{n} sequences exceed the enumeration limit")
    grids = np.meshgrid(*([np.arange(L)] * n), indexing="ij")
    seqs = np.stack(grids, axis=-1).reshape(-1, n)
    scores = lattice.transition[L, seqs[:, 0]] + lattice.emission[0, seqs[:, 0]]
    for i in range(1, n):
        scores = scores + lattice.transition[seqs[:, i - 1], seqs[:, i]]
        scores = scores + lattice.emission[i, seqs[:, i]]
    return seqs, scores


def brute_force_best(lattice: ScoreLattice) -> DecodeResult:
    seqs, scores = enumerate_sequence_scores(lattice)
    best = int(np.argmax(scores))
    return DecodeResult(labels=seqs[best].astype(np.int64), score=float(scores[best]))


def brute_force_log_partition(lattice: ScoreLattice) -> float:
    _, scores = enumerate_sequence_scores(lattice)
    shift = scores.max()
    return float(shift + np.log(np.exp(scores - shift).sum()))


# ---------------------------------------------------------------------------
# model parameters and lattice construction
# ---------------------------------------------------------------------------


@dataclass
class ModelParams:
    """Everything trainable, plus the alphabets that give the weights meaning."""

    mode: str
    labels: LabelAlphabet
    dropout_p: float = 0.25
    templates: TemplateSet | None = None
    out_alphabet: FeatureAlphabet | None = None
    edge_alphabet: FeatureAlphabet | None = None
    theta_out: np.ndarray | None = None
    theta_edge: np.ndarray | None = None
    composer: InputComposer | None = None
    lstm: BiLSTMParams | None = None
    theta_dense: np.ndarray | None = None
    tau: np.ndarray | None = None
    tau_weight: np.ndarray | None = None

    @property
    def uses_discrete(self):
        return self.mode in ("discrete", "joint")

    @property
    def uses_neural(self):
        return self.mode in ("neural", "joint")

    def validate(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        L = len(self.labels)
        if L == 0:
            raise ValueError("empty label alphabet")
        if self.uses_discrete:
            for name in ("templates", "out_alphabet", "edge_alphabet", "theta_out", "theta_edge"):
                if getattr(self, name) is None:
                    raise ValueError(f"{self.mode} mode requires {name}")
            if self.theta_out.shape != (self.out_alphabet.size,):
                raise ValueError("theta_out does not match the output feature alphabet")
            if self.theta_edge.shape != (self.edge_alphabet.size,):
                raise ValueError("theta_edge does not match the edge feature alphabet")
        if self.uses_neural:
            for name in ("composer", "lstm", "theta_dense", "tau"):
                if getattr(self, name) is None:
                    raise ValueError(f"{self.mode} mode requires {name}")
            two_h = 2 * self.lstm.hidden
            if self.theta_dense.shape != (L, two_h):
                raise ValueError(f"theta_dense must be ({L}, {two_h})")
            if self.tau.shape != (L + 1, L):
                raise ValueError(f"tau must be ({L + 1}, {L})")
        if self.mode == "joint" and (self.tau_weight is None or self.tau_weight.shape != (1,)):
            raise ValueError("joint mode requires a (1,) tau_weight")

    @classmethod
    def create(
        cls,
        mode: str,
        labels: LabelAlphabet,
        *,
        templates: TemplateSet | None = None,
        out_alphabet: FeatureAlphabet | None = None,
        composer: InputComposer | None = None,
        hidden: int = 50,
        rng=None,
        dropout_p: float = 0.25,
    ) -> "ModelParams":
        """Zero-initialized model of the given mode.

        The joint tau-slot weight starts at 1.0 so that tau receives
        gradient from the first update on (at 0.0 both tau and its weight
        would sit at a dead saddle).
        """
        L = len(labels)
        params = cls(mode=mode, labels=labels, dropout_p=dropout_p)
        if mode not in MODES:
            raise ValueError(f"unknown mode {mode!r}")
        if mode in ("discrete", "joint"):
            if templates is None or out_alphabet is None:
                raise ValueError(f"{mode} mode needs templates and an output alphabet")
            params.templates = templates
            params.out_alphabet = out_alphabet
            params.edge_alphabet = build_edge_alphabet(labels)
            params.theta_out = np.zeros(out_alphabet.size)
            params.theta_edge = np.zeros(params.edge_alphabet.size)
        if mode in ("neural", "joint"):
            if composer is None:
                raise ValueError(f"{mode} mode needs an input composer")
            if rng is None:
                raise ValueError(f"{mode} mode needs an rng for parameter init")
            params.composer = composer
            params.lstm = BiLSTMParams.init(composer.dim, hidden, rng)
            params.theta_dense = np.zeros((L, 2 * hidden))
            params.tau = np.zeros((L + 1, L))
        if mode == "joint":
            params.tau_weight = np.ones(1)
        params.validate()
        return params

    def dense_arrays(self) -> dict[str, np.ndarray]:
        """Named dense parameter arrays (regularized on every update step)."""
        out = {}
        if self.uses_neural:
            for name, arr in self.lstm.arrays().items():
                out[f"lstm.{name}"] = arr
            out["theta_dense"] = self.theta_dense
            out["tau"] = self.tau
        if self.mode == "joint":
            out["tau_weight"] = self.tau_weight
        return out


def build_edge_alphabet(labels: LabelAlphabet) -> FeatureAlphabet:
    """Every label bigram, including the start label, registered and frozen."""
    alpha = FeatureAlphabet()
    for prev in (START_LABEL, *labels.labels):
        for cur in labels.labels:
            alpha.add(edge_feature_string(prev, cur))
    alpha.freeze()
    return alpha


@dataclass
class ForwardPass:
    """Per-sentence artifacts needed to route gradients after decoding."""

    sentence: Sentence
    lattice: ScoreLattice
    instantiations: list[list[str]] | None = None
    composed: np.ndarray | None = None
    encoder_output: object | None = None


def build_forward(
    params: ModelParams, sent: Sentence, *, train: bool = False, rng=None, masks=None
) -> ForwardPass:
    """Score lattice plus the caches needed for gradient routing."""
    params.validate()
    n = len(sent)
    L = len(params.labels)
    emission = np.zeros((n, L))
    transition = np.zeros((L + 1, L))
    fp = ForwardPass(sentence=sent, lattice=None)  # type: ignore[arg-type]

    if params.uses_discrete:
        inst = [params.templates.instantiate(sent, i) for i in range(n)]
        fp.instantiations = inst
        for i in range(n):
            for y, label in enumerate(params.labels.labels):
                total = 0.0
                for s in inst[i]:
                    idx = params.out_alphabet.lookup(f"{s}|{label}")
                    if idx is not None:
                        total += params.theta_out[idx]
                emission[i, y] += total
        names = (*params.labels.labels, START_LABEL)
        for row in range(L + 1):
            for col, cur in enumerate(params.labels.labels):
                idx = params.edge_alphabet.lookup(edge_feature_string(names[row], cur))
                if idx is not None:
                    transition[row, col] += params.theta_edge[idx]

    if params.uses_neural:
        composed = params.composer.compose_all(sent)
        enc = encode(
            params.lstm, composed, train=train, rng=rng, masks=masks, dropout_p=params.dropout_p
        )
        fp.composed = composed
        fp.encoder_output = enc
        emission += enc.h @ params.theta_dense.T
        if params.mode == "neural":
            transition += params.tau
        else:
            transition += params.tau_weight[0] * params.tau

    fp.lattice = ScoreLattice(emission=emission, transition=transition)
    return fp


def build_lattice(
    params: ModelParams, sent: Sentence, *, train: bool = False, rng=None, masks=None
) -> ScoreLattice:
    return build_forward(params, sent, train=train, rng=rng, masks=masks).lattice


# ---------------------------------------------------------------------------
# subgradients
# ---------------------------------------------------------------------------


@dataclass
class GradientBundle:
    """Sparse and dense pieces of d(loss)/d(parameters) for one sentence."""

    out_ids: dict[int, float] = field(default_factory=dict)
    edge_ids: dict[int, float] = field(default_factory=dict)
    theta_dense: np.ndarray | None = None
    tau: np.ndarray | None = None
    tau_weight: float | None = None
    lstm: BiLSTMGrads | None = None
    emb_rows: dict[tuple[str, int], np.ndarray] = field(default_factory=dict)

    def is_zero(self) -> bool:
        if self.out_ids or self.edge_ids or self.emb_rows:
            return False
        for arr in (self.theta_dense, self.tau):
            if arr is not None and np.any(arr):
                return False
        if self.tau_weight:
            return False
        if self.lstm is not None and any(np.any(a) for a in self.lstm.arrays().values()):
            return False
        return True


def _count_into(counter: dict[int, float], idx, delta):
    if idx is None:
        return
    new = counter.get(idx, 0.0) + delta
    if new == 0.0:
        counter.pop(idx, None)
    else:
        counter[idx] = new


def loss_gradients(
    params: ModelParams, fp: ForwardPass, predicted, gold
) -> GradientBundle:
    """Subgradient of the margin loss: d score(predicted) - d score(gold).

    ``predicted`` is the cost-augmented decode; the cost term is constant in
    the parameters so it contributes nothing.  Returns an all-zero bundle
    when the two sequences coincide.
    """
    predicted = np.asarray(predicted, dtype=np.int64)
    gold = np.asarray(gold, dtype=np.int64)
    bundle = GradientBundle()
    if np.array_equal(predicted, gold):
        return bundle
    n = len(fp.sentence)
    label_names = params.labels.labels

    if params.uses_discrete:
        for i in range(n):
            if predicted[i] == gold[i]:
                continue
            for s in fp.instantiations[i]:
                _count_into(bundle.out_ids, params.out_alphabet.lookup(f"{s}|{label_names[predicted[i]]}"), +1.0)
                _count_into(bundle.out_ids, params.out_alphabet.lookup(f"{s}|{label_names[gold[i]]}"), -1.0)
        for seq, delta in ((predicted, +1.0), (gold, -1.0)):
            prev = START_LABEL
            for i in range(n):
                cur = label_names[seq[i]]
                _count_into(
                    bundle.edge_ids,
                    params.edge_alphabet.lookup(edge_feature_string(prev, cur)),
                    delta,
                )
                prev = cur

    if params.uses_neural:
        enc = fp.encoder_output
        h = enc.h
        L = len(label_names)
        d_dense = np.zeros_like(params.theta_dense)
        d_h = np.zeros_like(h)
        for i in range(n):
            if predicted[i] == gold[i]:
                continue
            d_dense[predicted[i]] += h[i]
            d_dense[gold[i]] -= h[i]
            d_h[i] = params.theta_dense[predicted[i]] - params.theta_dense[gold[i]]
        d_tau = np.zeros_like(params.tau)
        tau_scale = params.tau_weight[0] if params.mode == "joint" else 1.0
        d_tau_weight = 0.0
        for seq, delta in ((predicted, +1.0), (gold, -1.0)):
            prev = L  # start row
            for i in range(n):
                d_tau[prev, seq[i]] += delta * tau_scale
                d_tau_weight += delta * params.tau[prev, seq[i]]
                prev = seq[i]
        bundle.theta_dense = d_dense
        bundle.tau = d_tau
        if params.mode == "joint":
            bundle.tau_weight = d_tau_weight
        lstm_grads, d_inputs = encoder_backward(params.lstm, enc, d_h)
        bundle.lstm = lstm_grads
        params.composer.backward(fp.sentence, d_inputs, bundle.emb_rows)

    return bundle
