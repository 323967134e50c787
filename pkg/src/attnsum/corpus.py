"""Corpus pipeline: tokenization, vocabulary, pair filtering, file formats.

Tokenizer rules (fixed, golden-file tested; exact PTB parity is a non-goal):
  1. lowercase the text and replace every decimal digit with '#'
  2. split on whitespace
  3. a chunk made entirely of peelable punctuation is kept as one token
  4. otherwise peel leading and trailing peelable punctuation characters off
     the chunk one at a time, each becoming its own token; '#' (masked
     digits), apostrophes, and hyphens are not peelable, so hyphens,
     apostrophes, and abbreviation dots inside words survive ("u.s.-led",
     "don't", "--")

Pair files are UTF-8, one pair per line, "headline<TAB>article". Vocabulary
files are one "token<TAB>count" per line with the reserved symbols first.

A pair is discarded when (checked in this order):
  1. headline and article share no non-stop-word (tokens containing a letter
     and not in the embedded stop-word list)
  2. the headline carries a byline or edit mark: any marker token from
     EDIT_MARKERS, a leading all-dash token, or any bracket token
  3. the headline contains a question mark or colon
"""

import collections
import unicodedata

UNK_ID = 0
START_ID = 1
PAD_ID = 2
UNK, START, PAD = "<unk>", "<s>", "<pad>"
RESERVED = (UNK, START, PAD)

# peelable punctuation: excludes '#' (masked digits), apostrophe, hyphen
_PUNCT = set("!\"$%&()*+,./:;<=>?@[\\]^_`{|}~") | set("‘’“”–—…«»")

STOPWORDS = frozenset("""
a about above after again against all am an and any are aren't as at be
because been before being below between both but by can cannot could
couldn't did didn't do does doesn't doing don't down during each few for
from further had hadn't has hasn't have haven't having he he'd he'll he's
her here here's hers herself him himself his how how's i i'd i'll i'm i've
if in into is isn't it it's its itself let's me more most mustn't my myself
no nor not of off on once only or other ought our ours ourselves out over
own same shan't she she'd she'll she's should shouldn't so some such than
that that's the their theirs them themselves then there there's these they
they'd they'll they're they've this those through to too under until up
very was wasn't we we'd we'll we're we've were weren't what what's when
when's where where's which while who who's whom why why's will with won't
would wouldn't you you'd you'll you're you've your yours yourself yourselves
""".split())

EDIT_MARKERS = frozenset([
    "by", "byline", "urgent", "advisory", "embargoed", "update", "updates",
    "recasts", "corrects", "correction", "writethru", "ld-writethru",
    "adds", "rpt", "repeating", "dateline", "grafs", "undated",
])

_BRACKETS = {"(", ")", "[", "]", "{", "}"}


def _is_punct_char(ch):
    return ch in _PUNCT


def preprocess(text):
    """Raw string -> token list per the module tokenizer rules."""
    masked = []
    for ch in text.lower():
        masked.append("#" if unicodedata.category(ch) == "Nd" else ch)
    tokens = []
    for chunk in "".join(masked).split():
        if all(_is_punct_char(c) for c in chunk):
            tokens.append(chunk)
            continue
        lead = []
        while chunk and _is_punct_char(chunk[0]):
            lead.append(chunk[0])
            chunk = chunk[1:]
        trail = []
        while chunk and _is_punct_char(chunk[-1]):
            trail.append(chunk[-1])
            chunk = chunk[:-1]
        tokens.extend(lead)
        if chunk:
            tokens.append(chunk)
        tokens.extend(reversed(trail))
    return tokens


def detokenize(tokens):
    return " ".join(tokens)


def truncate_bytes(text, cap):
    """First <= cap bytes of text's UTF-8 form, never splitting a character."""
    if cap is None:
        return text
    raw = text.encode("utf-8")
    if len(raw) <= cap:
        return text
    cut = raw[:cap]
    # back off over a split multi-byte sequence (continuation bytes 0b10xxxxxx)
    while cut and (cut[-1] & 0xC0) == 0x80:
        cut = cut[:-1]
    if cut and cut[-1] >= 0xC0:
        cut = cut[:-1]
    return cut.decode("utf-8")


def _is_word(token):
    return any(ch.isalpha() for ch in token)


def content_words(tokens):
    """Tokens that carry a letter and are not stop words."""
    return {t for t in tokens if _is_word(t) and t not in STOPWORDS}


def has_edit_mark(headline_tokens):
    if not headline_tokens:
        return False
    first = headline_tokens[0]
    if first and all(c == "-" for c in first):
        return True
    for tok in headline_tokens:
        if tok in EDIT_MARKERS or tok in _BRACKETS:
            return True
    return False


def filter_pair(article_tokens, headline_tokens, stopwords=STOPWORDS):
    """True to keep the pair, False to discard. Pure function of the tokens."""
    return which_filter(article_tokens, headline_tokens, stopwords) is None


def which_filter(article_tokens, headline_tokens, stopwords=STOPWORDS):
    """None if the pair passes, else the 1-based index of the first failing filter."""
    art = {t for t in article_tokens if _is_word(t) and t not in stopwords}
    head = {t for t in headline_tokens if _is_word(t) and t not in stopwords}
    if not (art & head):
        return 1
    if has_edit_mark(headline_tokens):
        return 2
    if any("?" in t or ":" in t for t in headline_tokens):
        return 3
    return None


class Vocab:
    """Bidirectional token<->id map with reserved UNK / start / padding symbols.

    Ids 0..2 are <unk>, <s>, <pad>; remaining ids are assigned by descending
    frequency, ties broken lexicographically, so construction is deterministic.
    """

    def __init__(self, tokens, counts):
        self.id_to_token = list(tokens)
        self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}
        self.counts = dict(counts)
        if self.id_to_token[:3] != list(RESERVED):
            raise ValueError("reserved symbols must occupy ids 0..2")
        if len(self.token_to_id) != len(self.id_to_token):
            raise ValueError("duplicate tokens in vocabulary")

    @classmethod
    def from_counts(cls, counter, min_count=5):
        if min_count < 1:
            raise ValueError("min_count must be >= 1")
        kept = [(t, c) for t, c in counter.items()
                if c >= min_count and t not in RESERVED]
        kept.sort(key=lambda tc: (-tc[1], tc[0]))
        unk_total = sum(c for t, c in counter.items()
                        if c < min_count and t not in RESERVED)
        tokens = list(RESERVED) + [t for t, _ in kept]
        counts = {UNK: unk_total, START: 0, PAD: 0}
        counts.update(dict(kept))
        return cls(tokens, counts)

    @classmethod
    def build(cls, token_seqs, min_count=5):
        counter = collections.Counter()
        for seq in token_seqs:
            counter.update(seq)
        return cls.from_counts(counter, min_count)

    def __len__(self):
        return len(self.id_to_token)

    def __contains__(self, token):
        return token in self.token_to_id

    def encode(self, tokens):
        return [self.token_to_id.get(t, UNK_ID) for t in tokens]

    def decode(self, ids):
        return [self.id_to_token[i] for i in ids]

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for token in self.id_to_token:
                fh.write(f"{token}\t{self.counts.get(token, 0)}\n")

    @classmethod
    def load(cls, path):
        tokens, counts = [], {}
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.rstrip("\n")
                if not line:
                    continue
                parts = line.split("\t")
                if len(parts) != 2:
                    raise ValueError(f"{path}:{lineno}: expected 'token<TAB>count'")
                tokens.append(parts[0])
                counts[parts[0]] = int(parts[1])
        return cls(tokens, counts)


def read_pairs(path):
    """Read 'headline<TAB>article' lines -> list of (headline, article) strings."""
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ValueError(
                    f"{path}:{lineno}: expected 'headline<TAB>article', got {len(parts)} fields")
            pairs.append((parts[0], parts[1]))
    return pairs


def write_pairs(path, pairs):
    with open(path, "w", encoding="utf-8") as fh:
        for headline_tokens, article_tokens in pairs:
            fh.write(f"{detokenize(headline_tokens)}\t{detokenize(article_tokens)}\n")


def preprocess_pairs(raw_pairs):
    """Tokenize and filter raw (headline, article) pairs.

    Returns (kept, counts) where kept is a list of (headline_tokens,
    article_tokens) and counts tallies 'kept', 'empty', and per-filter
    discards under 'filter1'..'filter3'.
    """
    counts = {"kept": 0, "empty": 0, "filter1": 0, "filter2": 0, "filter3": 0}
    kept = []
    for headline, article in raw_pairs:
        head_tokens = preprocess(headline)
        art_tokens = preprocess(article)
        if not head_tokens or not art_tokens:
            counts["empty"] += 1
            continue
        failed = which_filter(art_tokens, head_tokens)
        if failed is not None:
            counts[f"filter{failed}"] += 1
            continue
        counts["kept"] += 1
        kept.append((head_tokens, art_tokens))
    return kept, counts


def encode_pairs(token_pairs, vocab):
    """(headline_tokens, article_tokens) pairs -> (article_ids, headline_ids) pairs.

    Order flips to (input, output) to match the model's (x, y) convention.
    """
    out = []
    for head_tokens, art_tokens in token_pairs:
        x = vocab.encode(art_tokens)
        y = vocab.encode(head_tokens)
        if not x or not y:
            raise ValueError("empty side in encoded pair")
        out.append((x, y))
    return out
