"""Influence functions over a bag-of-words domain classifier.

The classifier separates target-domain utterances (label 0) from
source-domain ones (label 1) by L2-regularized logistic regression.  Its
objective is ``(1/n) * sum_i w_i * loss_i + (lam/2) * |theta|^2`` with
``w_i = 1``, so the Hessian is available in closed form and the stochastic
inverse-HVP can be checked against a dense solve.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import TrainConfig
from .data import Corpus, Pair
from .numcore import SeededRng, _sigmoid

log = logging.getLogger(__name__)

MAX_EXACT_DIM = 2000


class SingularHessianError(np.linalg.LinAlgError):
    pass


class HvpDivergenceError(RuntimeError):
    pass


# ---------------------------------------------------------------- classifier


def _logistic_loss(margin: np.ndarray, y: np.ndarray) -> np.ndarray:
    # log(1 + e^m) - y*m, stable for large |m|
    return np.logaddexp(0.0, margin) - y * margin


@dataclass
class BowClassifier:
    """Logistic regression over token counts plus a (regularized) bias column."""

    vocab: dict[str, int]
    theta: np.ndarray
    lam: float
    X: np.ndarray
    y: np.ndarray
    ids: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("regularization strength must be positive")

    @property
    def dim(self) -> int:
        return self.theta.size

    @property
    def n(self) -> int:
        return self.y.size

    def featurize(self, sentences: Sequence[Sequence[str]]) -> np.ndarray:
        return featurize(sentences, self.vocab)

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return _sigmoid(X @ self.theta)

    def losses(self, X: np.ndarray, y: np.ndarray, theta: np.ndarray | None = None) -> np.ndarray:
        theta = self.theta if theta is None else theta
        return _logistic_loss(X @ theta, y)

    def example_grads(self, X: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Row i is the gradient of the unregularized loss of example i."""
        return (self.predict_proba(X) - y)[:, None] * X

    def objective_grad(self) -> np.ndarray:
        return self.example_grads(self.X, self.y).sum(axis=0) / self.n + self.lam * self.theta

    def curvature(self) -> np.ndarray:
        p = self.predict_proba(self.X)
        return p * (1.0 - p)

    def hessian(self) -> np.ndarray:
        w = self.curvature()
        return (self.X.T * w) @ self.X / self.n + self.lam * np.eye(self.dim)

    def hvp(self, v: np.ndarray) -> np.ndarray:
        """``H v``; a 2-D ``v`` is treated as a block of column vectors."""
        w = self.curvature()
        if v.ndim == 2:
            w = w[:, None]
        return self.X.T @ (w * (self.X @ v)) / self.n + self.lam * v


def featurize(sentences: Sequence[Sequence[str]], vocab: dict[str, int]) -> np.ndarray:
    X = np.zeros((len(sentences), len(vocab) + 1))
    for r, toks in enumerate(sentences):
        for t in toks:
            col = vocab.get(t)
            if col is not None:
                X[r, col] += 1.0
    X[:, -1] = 1.0
    return X


def fit_logistic(X: np.ndarray, y: np.ndarray, lam: float, weights: np.ndarray | None = None,
                 tol: float = 1e-8, max_iter: int = 100, theta0: np.ndarray | None = None) -> np.ndarray:
    """Damped Newton on the weighted, regularized objective; stops at gradient norm <= tol."""
    n, p = X.shape
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    theta = np.zeros(p) if theta0 is None else theta0.copy()

    def objective(th):
        return float(w @ _logistic_loss(X @ th, y)) / n + 0.5 * lam * float(th @ th)

    for _ in range(max_iter):
        prob = _sigmoid(X @ theta)
        grad = X.T @ (w * (prob - y)) / n + lam * theta
        if np.linalg.norm(grad) <= tol:
            return theta
        H = (X.T * (w * prob * (1.0 - prob))) @ X / n + lam * np.eye(p)
        step = np.linalg.solve(H, grad)
        f0, t = objective(theta), 1.0
        while objective(theta - t * step) > f0 - 0.25 * t * float(grad @ step) and t > 1e-10:
            t *= 0.5
        theta = theta - t * step
    prob = _sigmoid(X @ theta)
    grad = X.T @ (w * (prob - y)) / n + lam * theta
    if np.linalg.norm(grad) > tol:
        raise RuntimeError(f"Newton solve stalled at gradient norm {np.linalg.norm(grad):.3e}")
    return theta


def train_classifier(domain_a: Corpus | Sequence[Pair], domain_b: Corpus | Sequence[Pair],
                     lam: float = 1e-2) -> BowClassifier:
    """Fit the target (A, label 0) vs source (B, label 1) domain classifier."""
    pairs_a = domain_a.pairs if isinstance(domain_a, Corpus) else list(domain_a)
    pairs_b = domain_b.pairs if isinstance(domain_b, Corpus) else list(domain_b)
    if not pairs_a or not pairs_b:
        raise ValueError("both domains need at least one example")
    sentences = [s for s, _ in pairs_a] + [s for s, _ in pairs_b]
    vocab = {t: i for i, t in enumerate(sorted({t for s in sentences for t in s}))}
    X = featurize(sentences, vocab)
    y = np.r_[np.zeros(len(pairs_a)), np.ones(len(pairs_b))]
    ids = [f"a{i}" for i in range(len(pairs_a))] + [f"b{i}" for i in range(len(pairs_b))]
    return BowClassifier(vocab, fit_logistic(X, y, lam), lam, X, y, ids)


def from_arrays(X: np.ndarray, y: np.ndarray, lam: float, weights=None) -> BowClassifier:
    """Classifier over an explicit design matrix (the last column is taken as the bias)."""
    theta = fit_logistic(X, y, lam, weights)
    return BowClassifier({}, theta, lam, X, np.asarray(y, dtype=float), [str(i) for i in range(len(y))])


# ------------------------------------------------------- inverse-HVP routines


def exact_inverse_hvp(clf: BowClassifier, v: np.ndarray) -> np.ndarray:
    """Dense solve of ``H x = v``; columns of a 2-D ``v`` are solved together."""
    if clf.dim > MAX_EXACT_DIM:
        raise ValueError(f"{clf.dim} features exceed the exact-solve limit of {MAX_EXACT_DIM}")
    H = clf.hessian()
    eig = np.linalg.eigvalsh(H)
    if eig[0] <= eig[-1] * 1e-14:
        raise SingularHessianError(f"Hessian numerically singular (eigenvalues {eig[0]:.3e}..{eig[-1]:.3e})")
    x = np.linalg.solve(H, v)
    x = x + np.linalg.solve(H, v - H @ x)
    return x


@dataclass
class HvpConfig:
    repetitions: int = 1000
    depth: int = 1000
    damping: float = 0.0
    # None picks a bound on the largest single-example curvature
    scale: float | None = None
    # independent chains averaged per estimate
    chains: int = 1
    sample_size: int = 100
    top_k: int = 100
    hvp: str = "stochastic"
    # degenerate mode: use the full Hessian at every step
    exact_sample: bool = False

    def __post_init__(self):
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        if self.damping < 0:
            raise ValueError("damping must be >= 0")
        if self.hvp not in ("exact", "stochastic"):
            raise ValueError(f"hvp must be exact|stochastic, got {self.hvp!r}")


def default_scale(clf: BowClassifier, damping: float = 0.0) -> float:
    sq = np.einsum("ij,ij->i", clf.X, clf.X)
    return float(0.25 * sq.max() + clf.lam + damping) * 1.05


def _lissa(clf: BowClassifier, V: np.ndarray, idx: np.ndarray | None, depth: int,
           scale: float, damping: float) -> np.ndarray:
    """Run the recursion for every column of ``V`` at once.

    ``idx[t, r]`` is the example sampled at step t by column r; ``None`` means
    the full Hessian is used instead.
    """
    H = V.copy()
    vnorm = np.linalg.norm(V, axis=0)
    limit = 1e6 * np.maximum(vnorm, np.finfo(float).tiny)
    X, lam = clf.X, clf.lam
    w = clf.curvature()
    for t in range(depth):
        if idx is None:
            hv = clf.hvp(H)
        else:
            rows = X[idx[t]]  # (R, p)
            proj = np.einsum("rp,pr->r", rows, H)
            hv = (rows * (w[idx[t]] * proj)[:, None]).T + lam * H
        H = V + H - (hv + damping * H) / scale
        if t % 64 == 0 or t == depth - 1:
            norms = np.linalg.norm(H, axis=0)
            if np.any(norms > limit):
                raise HvpDivergenceError(
                    f"inverse-HVP recursion diverged at step {t}; increase the scale (now {scale:g})")
    return H / scale


def stochastic_hvp(clf: BowClassifier, v: np.ndarray, config: HvpConfig, rng: SeededRng) -> np.ndarray:
    """LiSSA estimate of ``(H + damping I)^{-1} v`` averaged over ``config.chains`` chains."""
    v = np.asarray(v, dtype=float)
    if not np.any(v):
        return np.zeros_like(v)
    scale = config.scale or default_scale(clf, config.damping)
    V = np.repeat(v[:, None], config.chains, axis=1)
    idx = None
    if not config.exact_sample:
        idx = np.stack([rng.child(c).generator().integers(0, clf.n, size=config.depth)
                        for c in range(config.chains)], axis=1)
    return _lissa(clf, V, idx, config.depth, scale, config.damping).mean(axis=1)


# ---------------------------------------------------------------- influence


@dataclass
class InfluenceScore:
    example_id: str
    score: float
    count: int = 0


def test_gradient(clf: BowClassifier, X_test: np.ndarray, y_test: np.ndarray) -> np.ndarray:
    return clf.example_grads(X_test, y_test).sum(axis=0)


def influence_scores(clf: BowClassifier, train_rows: np.ndarray, X_test: np.ndarray, y_test: np.ndarray,
                     hvp: str = "exact", config: HvpConfig | None = None,
                     rng: SeededRng | None = None) -> np.ndarray:
    """Up-weighting influence ``-grad L_test^T H^{-1} grad loss(z)`` for each training row.

    Positive means up-weighting that example raises the test loss.
    """
    g_test = test_gradient(clf, X_test, y_test)
    if hvp == "exact":
        s_test = exact_inverse_hvp(clf, g_test)
    else:
        s_test = stochastic_hvp(clf, g_test, config or HvpConfig(), rng or SeededRng(0))
    G = clf.example_grads(clf.X[train_rows], clf.y[train_rows])
    return -G @ s_test


def influence_score(clf: BowClassifier, z_index: int, X_test: np.ndarray, y_test: np.ndarray,
                    hvp: str = "exact", config: HvpConfig | None = None,
                    rng: SeededRng | None = None) -> InfluenceScore:
    score = influence_scores(clf, np.array([z_index]), X_test, y_test, hvp, config, rng)[0]
    return InfluenceScore(clf.ids[z_index] if clf.ids else str(z_index), float(score))


def leave_one_out_effects(clf: BowClassifier, X_test: np.ndarray, y_test: np.ndarray,
                          rows: Sequence[int] | None = None) -> np.ndarray:
    """Exact retraining: test loss with all data minus test loss without example i.

    The 1/n normalization is held fixed, so each entry is the finite
    counterpart of ``influence / n``.
    """
    base = clf.losses(X_test, y_test).sum()
    rows = range(clf.n) if rows is None else rows
    out = []
    for i in rows:
        w = np.ones(clf.n)
        w[i] = 0.0
        theta = fit_logistic(clf.X, clf.y, clf.lam, w, theta0=clf.theta)
        out.append(base - clf.losses(X_test, y_test, theta).sum())
    return np.array(out)


# ----------------------------------------------------------------- selection


@dataclass
class Selection:
    sampled: list[int]
    scores: list[InfluenceScore]
    counts: np.ndarray


def sample_by_counts(counts: np.ndarray, size: int, rng: np.random.Generator) -> list[int]:
    """Draw ``size`` distinct indices proportional to ``counts``; fill up uniformly if short."""
    counts = np.asarray(counts, dtype=float)
    nonzero = np.flatnonzero(counts > 0)
    if size > counts.size:
        raise ValueError(f"cannot sample {size} of {counts.size} examples")
    if nonzero.size <= size:
        picked = list(nonzero)
        rest = np.setdiff1d(np.arange(counts.size), nonzero)
        if size > len(picked):
            log.info("only %d examples have nonzero counts; filling %d uniformly",
                     len(picked), size - len(picked))
            picked += list(rng.choice(rest, size=size - len(picked), replace=False))
        return [int(i) for i in rng.permutation(picked)]
    p = counts / counts.sum()
    return [int(i) for i in rng.choice(counts.size, size=size, replace=False, p=p)]


def select_influential(source: Corpus | Sequence[Pair], target: Corpus | Sequence[Pair],
                       config: HvpConfig, rng: SeededRng, target_test: Corpus | Sequence[Pair] | None = None,
                       lam: float = 1e-2, chunk: int = 100) -> Selection:
    """Count top-k membership over repeated inverse-HVP estimates, then sample by count.

    Scores are for source-domain examples against the classifier loss on the
    target test set (the target set itself when none is given).
    """
    src_pairs = source.pairs if isinstance(source, Corpus) else list(source)
    tgt_pairs = target.pairs if isinstance(target, Corpus) else list(target)
    test_pairs = tgt_pairs if target_test is None else (
        target_test.pairs if isinstance(target_test, Corpus) else list(target_test))
    clf = train_classifier(tgt_pairs, src_pairs, lam)
    X_test = clf.featurize([s for s, _ in test_pairs])
    y_test = np.zeros(len(test_pairs))
    src_rows = np.arange(len(tgt_pairs), clf.n)
    G_src = clf.example_grads(clf.X[src_rows], clf.y[src_rows])
    g_test = test_gradient(clf, X_test, y_test)
    k = min(config.top_k, len(src_rows))

    counts = np.zeros(len(src_rows), dtype=np.int64)
    total = np.zeros(len(src_rows))
    if config.hvp == "exact":
        reps = [-G_src @ exact_inverse_hvp(clf, g_test)] * config.repetitions
    else:
        reps = []
        scale = config.scale or default_scale(clf, config.damping)
        for lo in range(0, config.repetitions, chunk):
            ids = range(lo, min(lo + chunk, config.repetitions))
            S = np.zeros((clf.dim, len(ids)))
            for c in range(config.chains):
                idx = np.stack([rng.child(r).child(c).generator().integers(0, clf.n, size=config.depth)
                                for r in ids], axis=1)
                V = np.repeat(g_test[:, None], len(ids), axis=1)
                S += _lissa(clf, V, idx, config.depth, scale, config.damping)
            S /= config.chains
            reps.extend((-G_src @ S).T)
    for scores in reps:
        top = np.argsort(-scores, kind="stable")[:k]
        counts[top] += 1
        total += scores
    mean = total / config.repetitions
    sampled = sample_by_counts(counts, min(config.sample_size, len(src_rows)),
                               rng.child("sample").generator())
    scores = [InfluenceScore(f"b{i}", float(mean[i]), int(counts[i])) for i in range(len(src_rows))]
    return Selection(sampled, scores, counts)


def random_selection(n_source: int, size: int, rng: SeededRng) -> list[int]:
    return [int(i) for i in rng.generator().choice(n_source, size=min(size, n_source), replace=False)]


# ------------------------------------------------------- parser experiments


def train_and_score(train_pairs: Sequence[Pair], test_pairs: Sequence[Pair], config: TrainConfig,
                    tag: str = "target", seeds: Sequence[int] | None = None) -> tuple[float, float]:
    """Train from scratch and score on ``test_pairs``; metrics are averaged over ``seeds``."""
    from .evaluate import evaluate
    from .training import train

    train_corpus = Corpus.from_pairs(list(train_pairs), tag)
    test_corpus = Corpus.from_pairs(list(test_pairs), tag, (train_corpus.src_vocab, train_corpus.tgt_vocab))
    seq = tok = 0.0
    seeds = [config.seed] if seeds is None else list(seeds)
    for seed in seeds:
        parser, _ = train(train_corpus, config.replace(seed=seed))
        report = evaluate(parser, test_corpus)
        seq += report.seq_accuracy
        tok += report.tok_accuracy
    return seq / len(seeds), tok / len(seeds)


def domain_affinity(target_train: Sequence[Pair], target_test: Sequence[Pair],
                    candidates: dict[str, Sequence[Pair]], config: TrainConfig,
                    metric: str = "seq", seeds: Sequence[int] | None = None) -> list[tuple[str, float]]:
    """Rank candidate domains by the metric gain of training on target + candidate."""
    col = {"seq": 0, "tok": 1}[metric]
    baseline = train_and_score(target_train, target_test, config, seeds=seeds)[col]
    gains = []
    for name, pairs in candidates.items():
        score = train_and_score(list(target_train) + list(pairs), target_test, config, seeds=seeds)[col]
        gains.append((name, score - baseline))
        log.info("domain %s: %s gain %+.4f", name, metric, score - baseline)
    return sorted(gains, key=lambda kv: -kv[1])


def augment_and_sweep(target_train: Sequence[Pair], target_test: Sequence[Pair],
                      selected: Sequence[Pair], steps: Sequence[int], config: TrainConfig,
                      csv_path=None, seeds: Sequence[int] | None = None) -> list[tuple[int, float, float]]:
    """Train on target + the first n selected pairs for each n; return (n, seq, tok) rows."""
    curve = []
    for n in steps:
        if n > len(selected):
            raise ValueError(f"step {n} exceeds the {len(selected)} selected examples")
        seq, tok = train_and_score(list(target_train) + list(selected[:n]), target_test, config, seeds=seeds)
        curve.append((int(n), seq, tok))
        log.info("n=%d seq=%.4f tok=%.4f", n, seq, tok)
    if csv_path is not None:
        write_curve(curve, csv_path)
    return curve


def write_curve(curve, path) -> None:
    with open(Path(path), "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["n", "seq", "tok"])
        writer.writerows(curve)
