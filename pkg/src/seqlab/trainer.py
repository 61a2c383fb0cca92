"""Online max-margin training: cost-augmented decoding plus AdaGrad.

One update per sentence, in shuffled order, with the L2 term folded into
the gradient: ``g' = g + l2 * w``, ``G += g'^2``,
``w -= eta * g' / (sqrt(G) + 1e-8)``.  Sparse parameters (indicator feature
weights, embedding rows) touch only the coordinates with gradient in the
current sentence, so regularization reaches them lazily; dense parameters
regularize on every update step.  Sentences whose margin loss is zero
change nothing, not even the AdaGrad accumulators.

All randomness descends from one run seed through fixed sub-streams
(parameter init, shuffling, dropout), which makes a full training run a
deterministic function of (data, hyperparameters, seed).
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import crf, evaluator
from .corpus import LabelAlphabet, Sentence
from .embeddings import EmbeddingTable, InputComposer, init_random_table
from .encoder import BiLSTMParams
from .features import EOS, TemplateSet

log = logging.getLogger(__name__)

ADAGRAD_EPS = 1e-8

# sub-seed tags so components can be re-seeded independently
SEED_INIT = 3
SEED_SHUFFLE = 1
SEED_DROPOUT = 2
SEED_TABLE_BASE = 10


@dataclass
class HyperParams:
    dropout_p: float = 0.25
    word_hidden: int = 100
    char_hidden: int = 60  # recorded for config fidelity; the mean-pooling composer has no use for it
    char_emb: int = 30
    word_emb: int = 50
    pos_emb: int = 20
    fine_tune_words: bool = True
    fine_tune_chars: bool = True
    eta: float = 0.01
    l2: float = 1e-8
    epochs: int = 30
    seed: int = 1
    shuffle: bool = True

    def __post_init__(self):
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError("dropout_p must lie in [0, 1)")
        for name in ("word_hidden", "char_emb", "word_emb", "pos_emb", "epochs"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.eta <= 0 or self.l2 < 0:
            raise ValueError("eta must be positive and l2 non-negative")
        if self.word_hidden % 2:
            raise ValueError("word_hidden must be even (split across two directions)")


class AdaGradState:
    """Accumulated squared gradients, one array per named parameter."""

    def __init__(self):
        self._accum: dict[str, np.ndarray] = {}

    def for_param(self, name: str, param: np.ndarray) -> np.ndarray:
        acc = self._accum.get(name)
        if acc is None:
            acc = np.zeros_like(param)
            self._accum[name] = acc
        return acc


def _check_finite(name, values):
    if not np.all(np.isfinite(values)):
        raise FloatingPointError(f"non-finite gradient for {name}")


def adagrad_step_dense(param, grad, accum, eta, l2):
    _check_finite("dense update", grad)
    g = grad + l2 * param
    accum += g * g
    param -= eta * g / (np.sqrt(accum) + ADAGRAD_EPS)


def adagrad_step_sparse(param, accum, ids, values, eta, l2):
    ids = np.asarray(ids, dtype=np.int64)
    values = np.asarray(values, dtype=np.float64)
    _check_finite("sparse update", values)
    g = values + l2 * param[ids]
    accum[ids] += g * g
    param[ids] -= eta * g / (np.sqrt(accum[ids]) + ADAGRAD_EPS)


def apply_sparse_embedding_gradient(table: EmbeddingTable, row_grads, accum, eta, l2):
    """Update only the touched rows of a fine-tuned table."""
    if not table.fine_tune:
        raise ValueError(f"table {table.name!r} is not marked for fine-tuning")
    for row, vec in row_grads.items():
        _check_finite(f"embedding row {table.name}[{row}]", vec)
        g = vec + l2 * table.matrix[row]
        accum[row] += g * g
        table.matrix[row] -= eta * g / (np.sqrt(accum[row]) + ADAGRAD_EPS)


def apply_bundle(model: crf.ModelParams, bundle: crf.GradientBundle, state: AdaGradState, eta, l2):
    if model.uses_discrete:
        if bundle.out_ids:
            adagrad_step_sparse(
                model.theta_out,
                state.for_param("theta_out", model.theta_out),
                list(bundle.out_ids),
                list(bundle.out_ids.values()),
                eta,
                l2,
            )
        if bundle.edge_ids:
            adagrad_step_sparse(
                model.theta_edge,
                state.for_param("theta_edge", model.theta_edge),
                list(bundle.edge_ids),
                list(bundle.edge_ids.values()),
                eta,
                l2,
            )
    if model.uses_neural:
        dense_grads = {
            "theta_dense": bundle.theta_dense,
            "tau": bundle.tau,
        }
        for name, arr in bundle.lstm.arrays().items():
            dense_grads[f"lstm.{name}"] = arr
        if model.mode == "joint":
            dense_grads["tau_weight"] = np.array([bundle.tau_weight])
        params = model.dense_arrays()
        for name, grad in dense_grads.items():
            adagrad_step_dense(params[name], grad, state.for_param(name, params[name]), eta, l2)
        by_table: dict[str, dict[int, np.ndarray]] = {}
        for (key, row), vec in bundle.emb_rows.items():
            by_table.setdefault(key, {})[row] = vec
        for key, rows in by_table.items():
            table = model.composer.tables[key]
            if not table.fine_tune:
                continue
            apply_sparse_embedding_gradient(
                table, rows, state.for_param(f"emb.{key}", table.matrix), eta, l2
            )


# ---------------------------------------------------------------------------
# model assembly
# ---------------------------------------------------------------------------


def collect_embedding_vocab(task: str, sentences) -> dict[str, list[str]]:
    """First-appearance symbol lists per table key for random-init tables."""
    if task == "SEG":
        chars: dict[str, None] = {}
        bigrams: dict[str, None] = {}
        for sent in sentences:
            toks = sent.tokens
            for i, tok in enumerate(toks):
                chars.setdefault(tok)
                nxt = toks[i + 1] if i + 1 < len(toks) else EOS
                bigrams.setdefault(tok + nxt)
        return {"char": list(chars), "bigram": list(bigrams)}
    words: dict[str, None] = {}
    chars = {}
    tags: dict[str, None] = {}
    for sent in sentences:
        for tok in sent.tokens:
            words.setdefault(tok)
            for c in tok:
                chars.setdefault(c)
        if task == "NER" and sent.aux_tags is not None:
            for tag in sent.aux_tags:
                tags.setdefault(tag)
    vocab = {"word": list(words), "char": list(chars)}
    if task == "NER":
        vocab["pos"] = list(tags)
    return vocab


def default_tables(task, sentences, hypers: HyperParams, overrides=None) -> dict[str, EmbeddingTable]:
    """Embedding tables for a task: supplied ones win, the rest random-init."""
    overrides = dict(overrides or {})
    dims = {
        "char": hypers.char_emb,
        "bigram": hypers.char_emb,
        "word": hypers.word_emb,
        "pos": hypers.pos_emb,
    }
    fine = {
        "char": hypers.fine_tune_chars,
        "bigram": hypers.fine_tune_chars,
        "word": hypers.fine_tune_words,
        "pos": True,
    }
    vocab = collect_embedding_vocab(task, sentences)
    tables = {}
    for k, key in enumerate(InputComposer.REQUIRED[task]):
        if key in overrides:
            tables[key] = overrides[key]
        else:
            tables[key] = init_random_table(
                vocab[key],
                dims[key],
                seed=[hypers.seed, SEED_TABLE_BASE + k],
                name=key,
                fine_tune=fine[key],
            )
    return tables


def build_output_alphabet(templates: TemplateSet, labels: LabelAlphabet, sentences):
    """First-pass alphabet growth over the training corpus, then freeze.

    Every instantiation is registered with every label so that lattice
    scoring sees a complete feature space for seen contexts.
    """
    from .features import FeatureAlphabet

    alpha = FeatureAlphabet()
    for sent in sentences:
        for i in range(len(sent)):
            for s in templates.instantiate(sent, i):
                for label in labels.labels:
                    alpha.add(f"{s}|{label}")
    alpha.freeze()
    return alpha


def build_model(
    mode: str,
    task: str,
    language: str,
    train_sentences,
    hypers: HyperParams,
    *,
    tables=None,
    cluster_lexicon=None,
    radical_lexicon=None,
) -> crf.ModelParams:
    """Assemble a zero-initialized model with alphabets built from the corpus."""
    if not train_sentences:
        raise ValueError("training corpus is empty")
    labels = LabelAlphabet.from_sentences(train_sentences)
    if len(labels) == 0:
        raise ValueError("empty label alphabet")
    templates = None
    out_alpha = None
    if mode in ("discrete", "joint"):
        templates = TemplateSet(
            task,
            language,
            cluster_lexicon=dict(cluster_lexicon or {}),
            radical_lexicon=dict(radical_lexicon or {}),
        )
        out_alpha = build_output_alphabet(templates, labels, train_sentences)
    composer = None
    if mode in ("neural", "joint"):
        composer = InputComposer(task, default_tables(task, train_sentences, hypers, tables))
    return crf.ModelParams.create(
        mode,
        labels,
        templates=templates,
        out_alphabet=out_alpha,
        composer=composer,
        hidden=hypers.word_hidden // 2,
        rng=np.random.default_rng([hypers.seed, SEED_INIT]),
        dropout_p=hypers.dropout_p,
    )


def clone_model(model: crf.ModelParams) -> crf.ModelParams:
    """Deep copy of all trainable state; alphabets and templates are shared."""
    composer = None
    if model.composer is not None:
        composer = InputComposer(
            model.composer.task,
            {
                key: EmbeddingTable(
                    t.name, t.dim, list(t.symbols), t.matrix.copy(),
                    fine_tune=t.fine_tune, lowercase=t.lowercase,
                )
                for key, t in model.composer.tables.items()
            },
        )
    lstm = None
    if model.lstm is not None:
        lstm = BiLSTMParams(
            input_dim=model.lstm.input_dim,
            hidden=model.lstm.hidden,
            **{k: v.copy() for k, v in model.lstm.arrays().items()},
        )

    def cp(arr):
        return None if arr is None else arr.copy()

    return crf.ModelParams(
        mode=model.mode,
        labels=model.labels,
        dropout_p=model.dropout_p,
        templates=model.templates,
        out_alphabet=model.out_alphabet,
        edge_alphabet=model.edge_alphabet,
        theta_out=cp(model.theta_out),
        theta_edge=cp(model.theta_edge),
        composer=composer,
        lstm=lstm,
        theta_dense=cp(model.theta_dense),
        tau=cp(model.tau),
        tau_weight=cp(model.tau_weight),
    )


def parameter_norm(model: crf.ModelParams) -> float:
    total = 0.0
    if model.uses_discrete:
        total += float(model.theta_out @ model.theta_out)
        total += float(model.theta_edge @ model.theta_edge)
    for arr in model.dense_arrays().values():
        total += float(np.sum(arr * arr))
    if model.composer is not None:
        for table in model.composer.tables.values():
            if table.fine_tune:
                total += float(np.sum(table.matrix * table.matrix))
    return float(np.sqrt(total))


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------


@dataclass
class EpochRecord:
    epoch: int
    mean_loss: float
    dev_metric: float
    param_norm: float


@dataclass
class TrainReport:
    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = -1
    wall_clock_sec: float = 0.0

    def write_summary(self, path):
        """Machine-readable epoch records: ``epoch<TAB>mean_loss<TAB>dev_metric``."""
        with open(path, "w", encoding="utf-8") as fh:
            for rec in self.records:
                fh.write(f"{rec.epoch}\t{rec.mean_loss!r}\t{rec.dev_metric!r}\n")

    def write_log(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for rec in self.records:
                fh.write(
                    f"epoch {rec.epoch}: mean_loss={rec.mean_loss:.6f} "
                    f"dev_metric={rec.dev_metric:.6f} param_norm={rec.param_norm:.6f}\n"
                )
            fh.write(f"best epoch: {self.best_epoch}\n")
            fh.write(f"wall clock: {self.wall_clock_sec:.2f}s\n")


def predict_labels(model: crf.ModelParams, sentences) -> list[list[str]]:
    """Viterbi decode each sentence in inference mode (no dropout)."""
    out = []
    for sent in sentences:
        lattice = crf.build_lattice(model, sent, train=False)
        result = crf.viterbi(lattice)
        out.append([model.labels.from_index(int(y)) for y in result.labels])
    return out


def dev_metric(model: crf.ModelParams, sentences, task: str, scheme: str) -> float:
    predictions = predict_labels(model, sentences)
    return evaluator.corpus_metric(task, scheme, sentences, predictions)


def train(
    model: crf.ModelParams,
    train_sentences,
    dev_sentences,
    hypers: HyperParams,
    task: str,
    scheme: str = "BIO",
) -> tuple[crf.ModelParams, TrainReport]:
    """Run the online margin trainer; returns the best-dev snapshot."""
    if not train_sentences or not dev_sentences:
        raise ValueError("train and dev corpora must be non-empty")
    model.validate()
    gold_indices = []
    for sent in train_sentences:
        if sent.gold_labels is None:
            raise ValueError("training sentences must carry gold labels")
        gold_indices.append(np.array([model.labels.to_index(l) for l in sent.gold_labels]))

    shuffle_rng = np.random.default_rng([hypers.seed, SEED_SHUFFLE])
    dropout_rng = np.random.default_rng([hypers.seed, SEED_DROPOUT])
    state = AdaGradState()
    report = TrainReport()
    best_model = clone_model(model)
    best_metric = -np.inf
    started = time.perf_counter()

    for epoch in range(hypers.epochs):
        if hypers.shuffle:
            order = shuffle_rng.permutation(len(train_sentences))
        else:
            order = np.arange(len(train_sentences))
        total_loss = 0.0
        for k in order:
            sent = train_sentences[k]
            gold = gold_indices[k]
            fp = crf.build_forward(model, sent, train=True, rng=dropout_rng)
            loss, result = crf.margin_loss(fp.lattice, gold)
            if not np.isfinite(loss):
                raise FloatingPointError(f"non-finite loss at epoch {epoch}")
            total_loss += loss
            if loss > 0.0:
                bundle = crf.loss_gradients(model, fp, result.labels, gold)
                apply_bundle(model, bundle, state, hypers.eta, hypers.l2)
        metric = dev_metric(model, dev_sentences, task, scheme)
        record = EpochRecord(
            epoch=epoch,
            mean_loss=total_loss / len(train_sentences),
            dev_metric=metric,
            param_norm=parameter_norm(model),
        )
        report.records.append(record)
        log.info(
            "epoch %d: mean_loss=%.4f dev=%.4f norm=%.2f",
            epoch, record.mean_loss, record.dev_metric, record.param_norm,
        )
        if metric > best_metric:
            best_metric = metric
            report.best_epoch = epoch
            best_model = clone_model(model)
    report.wall_clock_sec = time.perf_counter() - started
    return best_model, report


def make_gradcheck_instance(mode: str = "joint", seed: int = 1) -> tuple[crf.ModelParams, Sentence]:
    """A small randomized model plus a 3-token sentence for gradient checks.

    Parameters are perturbed away from zero so gradient flows through every
    class, and the sub-seed is advanced until the check sentence has a
    positive margin loss with a comfortable argmax gap.
    """
    sents = [
        Sentence(tokens=("alpha", "beta", "gamma"), gold_labels=("A", "B", "C")),
        Sentence(tokens=("beta", "gamma", "delta"), gold_labels=("B", "C", "A")),
    ]
    hypers = HyperParams(word_hidden=8, char_emb=3, word_emb=5, pos_emb=2, seed=seed)
    for attempt in range(16):
        rng = np.random.default_rng([seed, 7, attempt])
        model = build_model(mode, "POS", "EN", sents, hypers)
        if model.uses_discrete:
            model.theta_out[:] = rng.uniform(-0.5, 0.5, model.theta_out.shape)
            model.theta_edge[:] = rng.uniform(-0.5, 0.5, model.theta_edge.shape)
        if model.uses_neural:
            model.theta_dense[:] = rng.uniform(-0.5, 0.5, model.theta_dense.shape)
            model.tau[:] = rng.uniform(-0.5, 0.5, model.tau.shape)
        gold = np.array([model.labels.to_index(l) for l in sents[0].gold_labels])
        # evaluate under the same fixed dropout masks the gradient check uses
        masks = None
        if model.uses_neural:
            mask_rng = np.random.default_rng([0, SEED_DROPOUT])
            composed = model.composer.compose_all(sents[0])
            masks = (mask_rng.random(composed.shape) >= model.dropout_p).astype(np.float64)
        lattice = crf.build_lattice(model, sents[0], train=True, masks=masks)
        loss, _ = crf.margin_loss(lattice, gold)
        _, scores = crf.enumerate_sequence_scores(crf._augment(lattice, gold))
        top2 = np.sort(scores)[-2:]
        if loss > 0.05 and top2[1] - top2[0] > 1e-3:
            return model, sents[0]
    raise RuntimeError("could not construct a non-degenerate gradcheck instance")


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------


@dataclass
class GradientCheckReport:
    tolerance: float
    max_rel_err: dict[str, float] = field(default_factory=dict)
    skipped: bool = False
    score_gap: float = float("inf")

    @property
    def passed(self) -> bool:
        return self.skipped or all(v < self.tolerance for v in self.max_rel_err.values())


class _ClassError:
    """Pools one parameter class into an L2 norm-ratio relative error.

    Per-coordinate ratios are meaningless for coordinates whose true
    gradient sits at the finite-difference noise floor, so classes are
    scored as ||analytic - numeric|| / max(||analytic||, ||numeric||).
    """

    def __init__(self):
        self.diff_sq = 0.0
        self.analytic_sq = 0.0
        self.numeric_sq = 0.0

    def add(self, analytic, numeric):
        self.diff_sq += (analytic - numeric) ** 2
        self.analytic_sq += analytic * analytic
        self.numeric_sq += numeric * numeric

    def value(self) -> float:
        scale = max(np.sqrt(self.analytic_sq), np.sqrt(self.numeric_sq), 1e-8)
        return float(np.sqrt(self.diff_sq) / scale)


def gradient_check(
    model: crf.ModelParams,
    sentence: Sentence,
    *,
    tolerance: float = 1e-4,
    eps: float = 1e-4,
    tie_gap: float = 1e-6,
    mask_seed: int = 0,
) -> GradientCheckReport:
    """Compare analytic subgradients with central finite differences.

    Runs with a fixed dropout mask so the loss is a deterministic function
    of the parameters.  Points where the cost-augmented argmax is not unique
    (best-vs-second score gap below ``tie_gap``) are reported as skipped:
    the loss is non-differentiable there.
    """
    model.validate()
    if sentence.gold_labels is None:
        raise ValueError("gradient check needs a labeled sentence")
    if len(sentence) > 5:
        raise ValueError("gradient check instances must have n <= 5")
    gold = np.array([model.labels.to_index(l) for l in sentence.gold_labels])

    masks = None
    if model.uses_neural:
        rng = np.random.default_rng([mask_seed, SEED_DROPOUT])
        composed = model.composer.compose_all(sentence)
        masks = (rng.random(composed.shape) >= model.dropout_p).astype(np.float64)

    def forward():
        fp = crf.build_forward(model, sentence, train=True, masks=masks)
        loss, result = crf.margin_loss(fp.lattice, gold)
        return loss, fp, result

    loss0, fp0, result0 = forward()
    report = GradientCheckReport(tolerance=tolerance)

    _, scores = crf.enumerate_sequence_scores(crf._augment(fp0.lattice, gold))
    top2 = np.sort(scores)[-2:]
    report.score_gap = float(top2[1] - top2[0]) if len(scores) > 1 else float("inf")
    if report.score_gap < tie_gap:
        report.skipped = True
        return report

    analytic = crf.loss_gradients(model, fp0, result0.labels, gold)

    def fd_for(array, index):
        orig = array[index]
        array[index] = orig + eps
        lp, _, _ = forward()
        array[index] = orig - eps
        lm, _, _ = forward()
        array[index] = orig
        return (lp - lm) / (2 * eps)

    pooled: dict[str, _ClassError] = {}

    def check_array(cls, array, grad):
        err = pooled.setdefault(cls, _ClassError())
        it = np.nditer(array, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            err.add(float(grad[idx]), fd_for(array, idx))

    if model.uses_discrete:
        out_grad = np.zeros_like(model.theta_out)
        for i, v in analytic.out_ids.items():
            out_grad[i] = v
        check_array("theta_out", model.theta_out, out_grad)
        edge_grad = np.zeros_like(model.theta_edge)
        for i, v in analytic.edge_ids.items():
            edge_grad[i] = v
        check_array("theta_edge", model.theta_edge, edge_grad)

    if model.uses_neural:
        check_array("theta_dense", model.theta_dense, analytic.theta_dense)
        check_array("tau", model.tau, analytic.tau)
        if model.mode == "joint":
            check_array("tau_weight", model.tau_weight, np.array([analytic.tau_weight]))
        lstm_arrays = model.lstm.arrays()
        lstm_grads = analytic.lstm.arrays()
        for name in ("w_fwd", "u_fwd", "w_bwd", "u_bwd"):
            check_array("lstm_weights", lstm_arrays[name], lstm_grads[name])
        for name in ("b_fwd", "b_bwd"):
            check_array("lstm_biases", lstm_arrays[name], lstm_grads[name])
        emb_err = pooled.setdefault("embeddings", _ClassError())
        touched_rows: dict[str, set[int]] = {}
        for (key, row) in analytic.emb_rows:
            touched_rows.setdefault(key, set()).add(row)
        for key, rows in sorted(touched_rows.items()):
            table = model.composer.tables[key]
            for row in sorted(rows):
                grad_vec = analytic.emb_rows[(key, row)]
                for col in range(table.dim):
                    emb_err.add(float(grad_vec[col]), fd_for(table.matrix, (row, col)))

    report.max_rel_err = {cls: err.value() for cls, err in pooled.items()}
    return report
