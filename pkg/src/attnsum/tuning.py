"""Log-linear re-ranking layer: a 5-feature score over (next token, input,
context) and a minimum-error-rate tuner that fits the feature weights to a
corpus recall metric.

Feature vector f(y_next, x, y_c):
  0  log p(y_next | x, y_c) under the neural model
  1  unigram match: y_next occurs in x
  2  bigram match: some j has x[j] = y_next and x[j-1] = previous output
  3  trigram match: same with the previous two outputs
  4  reorder: some k > j has x[k] = previous output and x[j] = y_next

Indicator features use the model's context window for the previous outputs;
history the window cannot see (start padding, or positions beyond a short
window) never matches, so those indicators are 0. The total candidate score
is sum_i alpha . f(y[i], x, y_c_i); alpha = (1, 0, 0, 0, 0) reproduces the
plain decoder score exactly.

Because each candidate's score is linear in alpha, tuning does Och-style
line search: along a direction, every K-best entry is a line alpha_c +
gamma * b_c, the per-sentence argmax is piecewise constant in gamma, and the
corpus metric (a mean of per-sentence scores) can be evaluated exactly on
every linear region. Moves are only accepted when a full re-decode of the
dev set strictly improves the true metric, so the tuner never returns
weights worse than its initialization.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from . import model
from .decoding import beam_search
from .rouge import EvalInstance, instance_score

FEATURE_NAMES = ("log_prob", "unigram", "bigram", "trigram", "reorder")
N_FEATURES = len(FEATURE_NAMES)


@dataclass
class FeatureWeights:
    alpha: np.ndarray = field(
        default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0, 0.0]))

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=np.float64)
        if self.alpha.shape != (N_FEATURES,):
            raise ValueError(f"alpha must have {N_FEATURES} components")
        if not np.all(np.isfinite(self.alpha)):
            raise ValueError("alpha must be finite")

    @classmethod
    def identity(cls):
        return cls()

    def to_dict(self):
        return {name: float(v) for name, v in zip(FEATURE_NAMES, self.alpha)}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array([d[name] for name in FEATURE_NAMES]))

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def features(y_next, x, y_c, logp):
    """The 5-vector for one step; y_c is the model's context window (most
    recent output last) and logp the model's log-probability of y_next."""
    x = list(map(int, x))
    y_c = tuple(map(int, y_c))
    y_next = int(y_next)
    prev1 = y_c[-1] if len(y_c) >= 1 else model.START_ID
    prev2 = y_c[-2] if len(y_c) >= 2 else model.START_ID
    uni = float(any(t == y_next for t in x))
    big = float(any(x[j] == y_next and x[j - 1] == prev1
                    for j in range(1, len(x))))
    tri = float(any(x[j] == y_next and x[j - 1] == prev1
                    and x[j - 2] == prev2 for j in range(2, len(x))))
    reorder = float(any(x[k] == prev1 and x[j] == y_next
                        for j in range(len(x)) for k in range(j + 1, len(x))))
    return np.array([logp, uni, big, tri, reorder])


def sequence_features(y, x, params, hyper):
    """Position-summed feature vector for a complete candidate y."""
    y = np.asarray(y, dtype=np.int64)
    if y.size == 0:
        raise ValueError("candidate must be nonempty")
    scorer = model.Scorer(params, hyper, x)
    contexts = model.context_windows(y, hyper.context_size)
    rows = scorer.step_scores(contexts)
    total = np.zeros(N_FEATURES)
    for i, token in enumerate(y):
        total += features(token, x, contexts[i], rows[i, token])
    return total


def tuned_score(y, x, weights, params, hyper):
    """alpha . (summed features); equals the decoder log-probability of y
    exactly when alpha is the identity configuration."""
    return float(weights.alpha @ sequence_features(y, x, params, hyper))


class TunedScorer:
    """Drop-in per-step scorer for the decoders: returns alpha-weighted
    feature scores instead of log-probabilities, with the indicator
    structure of the input precomputed once per sentence."""

    def __init__(self, base, weights):
        self._base = base
        self.weights = weights
        self.x = np.asarray(base.x, dtype=np.int64)
        v = base.vocab_size
        x = [int(t) for t in self.x]
        self._uni = np.zeros(v)
        self._uni[self.x] = 1.0
        follow = {}
        for j in range(1, len(x)):
            follow.setdefault(x[j - 1], set()).add(x[j])
        self._follow = {w: np.fromiter(sorted(ids), dtype=np.int64)
                        for w, ids in follow.items()}
        follow2 = {}
        for j in range(2, len(x)):
            follow2.setdefault((x[j - 2], x[j - 1]), set()).add(x[j])
        self._follow2 = {pair: np.fromiter(sorted(ids), dtype=np.int64)
                         for pair, ids in follow2.items()}
        # reorder(prev, next) = first occurrence of next precedes some
        # occurrence of prev, i.e. minpos[next] < maxpos[prev]
        self._minpos = np.full(v, len(x), dtype=np.int64)
        self._maxpos = np.full(v, -1, dtype=np.int64)
        for j in reversed(range(len(x))):
            self._minpos[x[j]] = j
        for j in range(len(x)):
            self._maxpos[x[j]] = j

    @property
    def vocab_size(self):
        return self._base.vocab_size

    @property
    def context_size(self):
        return self._base.context_size

    def step_scores(self, contexts):
        contexts = np.asarray(contexts, dtype=np.int64)
        logp = self._base.step_scores(contexts)
        k, v = logp.shape
        big = np.zeros((k, v))
        tri = np.zeros((k, v))
        reorder = np.zeros((k, v))
        for r in range(k):
            prev1 = int(contexts[r, -1])
            ids = self._follow.get(prev1)
            if ids is not None:
                big[r, ids] = 1.0
            if contexts.shape[1] >= 2:
                ids = self._follow2.get((int(contexts[r, -2]), prev1))
                if ids is not None:
                    tri[r, ids] = 1.0
            reorder[r] = self._minpos < self._maxpos[prev1]
        a = self.weights.alpha
        return (a[0] * logp + a[1] * self._uni[None, :]
                + a[2] * big + a[3] * tri + a[4] * reorder)


def _decode_best(params, hyper, x, weights, config):
    scorer = TunedScorer(model.Scorer(params, hyper, x), weights)
    return beam_search(scorer, config)[0].tokens


def dev_score(params, hyper, vocab, dev, weights, config, metric):
    """True corpus metric of the tuned decoder on (input ids, references)
    dev pairs; this is the quantity mert_tune maximizes."""
    scores = []
    for x, refs in dev:
        tokens = vocab.decode(_decode_best(params, hyper, x, weights, config))
        inst = EvalInstance(candidate=tokens, references=refs)
        scores.append(instance_score(inst, metric, byte_cap=config.byte_cap))
    return sum(scores) / len(scores)


def _kbest_lists(params, hyper, vocab, dev, weights, config, metric):
    """Per dev pair: list of (feature sums, instance metric) for the final
    beam under the current weights. Scores are linear in alpha, so line
    search over these lists is exact on the lists."""
    lists = []
    for x, refs in dev:
        scorer = TunedScorer(model.Scorer(params, hyper, x), weights)
        entries = []
        for hyp in beam_search(scorer, config):
            feats = sequence_features(hyp.tokens, x, params, hyper)
            inst = EvalInstance(candidate=vocab.decode(hyp.tokens),
                                references=refs)
            entries.append(
                (feats, instance_score(inst, metric,
                                       byte_cap=config.byte_cap)))
        lists.append(entries)
    return lists


def _list_objective(lists, alpha):
    """Mean metric of each sentence's best-scoring K-best entry (first entry
    wins ties, so the result is deterministic)."""
    total = 0.0
    for entries in lists:
        scores = np.array([alpha @ feats for feats, _ in entries])
        total += entries[int(np.argmax(scores))][1]
    return total / len(lists)


def _line_search(lists, alpha, direction):
    """Best step size along one direction, exact over the K-best lists: the
    per-sentence winner is piecewise constant in the step, with region
    boundaries at pairwise line intersections."""
    breakpoints = set()
    for entries in lists:
        offsets = np.array([alpha @ feats for feats, _ in entries])
        slopes = np.array([direction @ feats for feats, _ in entries])
        for i in range(len(entries)):
            diff = slopes - slopes[i]
            mask = diff != 0
            gammas = (offsets[i] - offsets[mask]) / diff[mask]
            breakpoints.update(float(g) for g in gammas if np.isfinite(g))
    grid = sorted(breakpoints)
    probes = [0.0]
    if grid:
        probes.append(grid[0] - 1.0)
        probes.append(grid[-1] + 1.0)
        probes.extend((a + b) / 2 for a, b in zip(grid, grid[1:]))
    best_gamma, best_obj = 0.0, _list_objective(lists, alpha)
    for gamma in probes:
        obj = _list_objective(lists, alpha + gamma * direction)
        if obj > best_obj + 1e-12:
            best_gamma, best_obj = gamma, obj
    return best_gamma, best_obj


def mert_tune(params, hyper, vocab, dev, config, metric="rouge1",
              init=None, seed=0, random_directions=8, max_rounds=4):
    """Minimum-error-rate tuning of the feature weights against the dev
    corpus metric. Each round line-searches the 5 coordinate axes plus
    seeded random directions over fresh K-best lists; a move is kept only if
    re-decoding the dev set strictly improves the true metric. Returns
    weights whose dev metric is never below the initialization's."""
    dev = list(dev)
    if not dev:
        raise ValueError("dev set is empty")
    weights = FeatureWeights(np.array(init.alpha if init is not None
                                      else FeatureWeights().alpha))
    current = dev_score(params, hyper, vocab, dev, weights, config, metric)
    rng = np.random.default_rng(seed)
    axes = [np.eye(N_FEATURES)[i] for i in range(N_FEATURES)]
    for _ in range(max_rounds):
        improved = False
        directions = axes + [rng.standard_normal(N_FEATURES)
                             for _ in range(random_directions)]
        for direction in directions:
            lists = _kbest_lists(params, hyper, vocab, dev, weights,
                                 config, metric)
            gamma, _ = _line_search(lists, weights.alpha, direction)
            if gamma == 0.0:
                continue
            trial = FeatureWeights(weights.alpha + gamma * direction)
            score = dev_score(params, hyper, vocab, dev, trial, config,
                              metric)
            if score > current + 1e-12:
                weights, current = trial, score
                improved = True
        if not improved:
            break
    return weights
