"""Summary generation: beam search with hypothesis recombination, a greedy
decoder, and an exact dynamic-programming decoder for toy vocabularies.

All decoders consume a scorer bound to one input sentence. A scorer exposes
`x` (the input ids), `vocab_size`, `context_size`, and
`step_scores(contexts)` mapping a (K, C) block of contexts to (K, V)
per-candidate scores; the model's log-probability scorer and the tuned
log-linear scorer both fit this shape, so every decoder works with either.

Scores are compared as exact floats. Ties are broken toward the
lexicographically smallest token sequence, which for a single hypothesis
set means the lowest next-token id.
"""

from dataclasses import dataclass

import numpy as np

from .corpus import PAD_ID, START_ID, UNK_ID, detokenize, truncate_bytes

# viterbi_exact refuses state spaces larger than this
VITERBI_STATE_CAP = 10 ** 6

MODES = ("abstractive", "extractive")


@dataclass(frozen=True)
class Hypothesis:
    """A complete or partial summary: its tokens, accumulated score, and the
    last C tokens (start-padded) that determine every future score."""
    tokens: tuple
    score: float
    context: tuple


@dataclass
class DecodeConfig:
    length: int
    beam: int = 8
    mode: str = "abstractive"
    byte_cap: int = None
    forbid_unk: bool = True

    def validate(self):
        if self.length < 1:
            raise ValueError("output length must be at least 1")
        if self.beam < 1:
            raise ValueError("beam size must be at least 1")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.byte_cap is not None and self.byte_cap < 1:
            raise ValueError("byte_cap must be positive")
        return self


def candidate_ids(scorer, config):
    """The candidate set S: the whole vocabulary, or the input's token types
    in extractive mode. The synthetic start and pad symbols are never
    generation candidates; UNK is excluded unless forbid_unk is off."""
    if config.mode == "extractive":
        pool = sorted({int(t) for t in scorer.x})
    else:
        pool = range(scorer.vocab_size)
    banned = {START_ID, PAD_ID}
    if config.forbid_unk:
        banned.add(UNK_ID)
    ids = np.array([i for i in pool if i not in banned], dtype=np.int64)
    if ids.size == 0:
        raise ValueError("empty candidate set")
    return ids


def _initial(context_size):
    return Hypothesis(tokens=(), score=0.0,
                      context=(START_ID,) * context_size)


def _ranked(flat, beam, cands):
    """Indices into the flattened (hypothesis, candidate) score matrix,
    ordered by descending score with exact ties in lexicographic token-
    sequence order. The stable sort already yields (parent rank, candidate)
    order, so only genuine float ties need the tuple comparison."""
    order = np.argsort(-flat, kind="stable")
    n_c = len(cands)
    ranked = []
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and flat[order[j + 1]] == flat[order[i]]:
            j += 1
        run = order[i:j + 1]
        if len(run) > 1:
            run = sorted(run, key=lambda idx: beam[idx // n_c].tokens
                         + (int(cands[idx % n_c]),))
        ranked.extend(int(r) for r in run)
        i = j + 1
    return ranked


def beam_search(scorer, config, step_hook=None):
    """Approximate K-best decoding. Each step expands every surviving
    hypothesis with every candidate, recombines hypotheses that share an
    identical context window (keeping the best-scoring one), and retains the
    K best survivors; the K expansions are scored as one batch. Returns the
    final hypotheses ranked best-first (fewer than K when the context space
    is exhausted). step_hook(step, beam) observes each step's survivors."""
    config.validate()
    cands = candidate_ids(scorer, config)
    beam = [_initial(scorer.context_size)]
    for step in range(config.length):
        ctx = np.array([h.context for h in beam], dtype=np.int64)
        scores = scorer.step_scores(ctx)[:, cands]
        flat = (np.array([h.score for h in beam])[:, None] + scores).ravel()
        seen = set()
        next_beam = []
        for idx in _ranked(flat, beam, cands):
            k, ci = divmod(idx, len(cands))
            parent = beam[k]
            token = int(cands[ci])
            context = parent.context[1:] + (token,)
            if context in seen:
                continue
            seen.add(context)
            next_beam.append(Hypothesis(tokens=parent.tokens + (token,),
                                        score=float(flat[idx]),
                                        context=context))
            if len(next_beam) == config.beam:
                break
        beam = next_beam
        if step_hook is not None:
            step_hook(step, beam)
    return beam


def greedy(scorer, config):
    """Strictly greedy decoding: at each step take the single best candidate,
    lowest id on ties. Identical to beam_search with beam size 1."""
    config.validate()
    cands = candidate_ids(scorer, config)
    hyp = _initial(scorer.context_size)
    for _ in range(config.length):
        ctx = np.array([hyp.context], dtype=np.int64)
        row = scorer.step_scores(ctx)[0, cands]
        token = int(cands[int(np.argmax(row))])
        hyp = Hypothesis(tokens=hyp.tokens + (token,),
                         score=hyp.score + float(row.max()),
                         context=hyp.context[1:] + (token,))
    return hyp


def viterbi_exact(scorer, config):
    """Exact argmax over all candidate sequences of the configured length by
    dynamic programming over C-token context states; toy scale only."""
    config.validate()
    states_bound = scorer.vocab_size ** scorer.context_size
    if states_bound > VITERBI_STATE_CAP:
        raise ValueError(
            f"V^C = {states_bound} exceeds the exact-decoding cap "
            f"{VITERBI_STATE_CAP}; use beam search")
    cands = candidate_ids(scorer, config)
    c = scorer.context_size
    states = {(START_ID,) * c: (0.0, ())}
    for _ in range(config.length):
        keys = sorted(states)
        scores = scorer.step_scores(np.array(keys, dtype=np.int64))[:, cands]
        new = {}
        for row, key in enumerate(keys):
            base_score, base_tokens = states[key]
            for ci, token in enumerate(cands):
                token = int(token)
                entry = (base_score + float(scores[row, ci]),
                         base_tokens + (token,))
                nkey = key[1:] + (token,)
                cur = new.get(nkey)
                if cur is None or entry[0] > cur[0] or \
                        (entry[0] == cur[0] and entry[1] < cur[1]):
                    new[nkey] = entry
        states = new
    best = None
    for key in sorted(states):
        entry = states[key]
        if best is None or entry[0] > best[0] or \
                (entry[0] == best[0] and entry[1] < best[1]):
            best = entry
    score, tokens = best
    context = ((START_ID,) * c + tokens)[-c:]
    return Hypothesis(tokens=tokens, score=score, context=context)


def finalize(hyp, config, vocab):
    """Detokenize a hypothesis and apply the byte cap, never splitting a
    multi-byte character."""
    text = detokenize(vocab.decode(list(hyp.tokens)))
    if config.byte_cap is not None:
        text = truncate_bytes(text, config.byte_cap)
    return text
