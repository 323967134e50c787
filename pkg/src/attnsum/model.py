"""Conditional next-word model: a feed-forward language model over the last C
output tokens, optionally conditioned on the input sentence by one of three
encoders (bag-of-words, time-delay convolution, attention).

Shape conventions used throughout:
  V vocab size, D embedding size, H hidden size, C context length,
  M input sentence length, P distinct input sentences in a batch,
  T prediction steps in a batch, K contexts scored in one decode step.

Parameter tensors (names as stored): E (D,V) context embedding, U (H,C*D),
b_U (H,), V (V,H), b_V (V,), and per encoder kind: W (V,H), b_W (V,),
F (H,V) input embedding, G (D,V) attention-side context embedding,
P (H,C*D) attention bilinear map, Q1..QL (H,H*(2Q+1)) conv filters.
A conv filter column index packs (window offset q, channel c) as q*H + c.
"""

import struct
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import MODEL_FORMAT_VERSION
from .corpus import START_ID
from .numerics import ParamStore, log_softmax_rows, softmax, softmax_rows

ENCODERS = ("none", "bow", "conv", "attention")

_MAGIC = b"ASUM"


@dataclass(frozen=True)
class Hyperparams:
    vocab_size: int
    embed_dim: int
    hidden_dim: int
    context_size: int
    encoder: str = "attention"
    conv_layers: int = 3
    window: int = 2

    def validate(self):
        if self.encoder not in ENCODERS:
            raise ValueError(f"unknown encoder kind {self.encoder!r}")
        for field in ("vocab_size", "embed_dim", "hidden_dim", "context_size"):
            if getattr(self, field) < 1:
                raise ValueError(f"{field} must be positive")
        if self.conv_layers < 1:
            raise ValueError("conv_layers must be positive")
        if self.window < 0:
            raise ValueError("window must be nonnegative")
        return self


def param_shapes(hyper):
    """Parameter name -> shape for a model, in canonical (init) order."""
    v, d, h, c = (hyper.vocab_size, hyper.embed_dim, hyper.hidden_dim,
                  hyper.context_size)
    shapes = {"E": (d, v), "U": (h, c * d), "b_U": (h,),
              "V": (v, h), "b_V": (v,)}
    if hyper.encoder != "none":
        shapes["W"] = (v, h)
        shapes["b_W"] = (v,)
        shapes["F"] = (h, v)
    if hyper.encoder == "conv":
        span = 2 * hyper.window + 1
        for l in range(1, hyper.conv_layers + 1):
            shapes[f"Q{l}"] = (h, h * span)
    if hyper.encoder == "attention":
        shapes["G"] = (d, v)
        shapes["P"] = (h, c * d)
    return shapes


def init_params(hyper, seed):
    """Fresh ParamStore with all values uniform in [-0.05, 0.05].

    Tensors are drawn in canonical order from one PCG64 stream, so a given
    (hyper, seed) always yields bit-identical parameters.
    """
    hyper.validate()
    rng = np.random.Generator(np.random.PCG64(seed))
    params = ParamStore()
    for name, shape in param_shapes(hyper).items():
        params.register(name, rng.uniform(-0.05, 0.05, size=shape))
    return params


def _check_ids(ids, vocab_size, what="token ids"):
    arr = np.asarray(ids, dtype=np.int64)
    if arr.size and (arr.min() < 0 or arr.max() >= vocab_size):
        raise ValueError(f"{what} out of range [0, {vocab_size})")
    return arr


def context_windows(y, context_size, start_id=START_ID):
    """(len(y), C) context rows for predicting each token of y in turn.

    Row i holds the C tokens preceding y[i], left-padded with the start
    symbol: row 0 is all start ids.
    """
    y = np.asarray(y, dtype=np.int64)
    padded = np.concatenate([np.full(context_size, start_id, dtype=np.int64), y])
    idx = np.arange(len(y))[:, None] + np.arange(context_size)[None, :]
    return padded[idx]


@dataclass
class StepBatch:
    """All prediction steps of a group of pairs sharing one input length M.

    x (P,M) input sentences; pair_of (T,) maps each step to its row of x;
    ctx (T,C) contexts; target (T,) gold next tokens.
    """
    x: np.ndarray
    pair_of: np.ndarray
    ctx: np.ndarray
    target: np.ndarray


def make_batch(pairs, hyper):
    """Build a StepBatch from (input_ids, output_ids) pairs of equal input length."""
    if not pairs:
        raise ValueError("empty batch")
    lengths = {len(x) for x, _ in pairs}
    if len(lengths) != 1:
        raise ValueError(f"batch mixes input lengths {sorted(lengths)}")
    if lengths == {0} or any(len(y) == 0 for _, y in pairs):
        raise ValueError("empty sequence in pair")
    x_rows = _check_ids([x for x, _ in pairs], hyper.vocab_size, "input ids")
    ctx, target, pair_of = [], [], []
    for p, (_, y) in enumerate(pairs):
        y = _check_ids(y, hyper.vocab_size, "output ids")
        ctx.append(context_windows(y, hyper.context_size))
        target.append(y)
        pair_of.append(np.full(len(y), p, dtype=np.int64))
    return StepBatch(x=x_rows, pair_of=np.concatenate(pair_of),
                     ctx=np.concatenate(ctx), target=np.concatenate(target))


def _box_mean(xe, q):
    """Windowed mean over time: out[i] = sum_{|j-i|<=q} xe[j] / (2q+1).

    xe has time on axis -2 (shapes (..., M, H)); positions outside [0, M) are
    zero. The operator matrix is symmetric, so it is its own adjoint.
    """
    if q == 0:
        return xe.copy()
    pad = [(0, 0)] * xe.ndim
    pad[-2] = (q, q)
    padded = np.pad(xe, pad)
    win = sliding_window_view(padded, 2 * q + 1, axis=xe.ndim - 2)
    return win.sum(axis=-1) / (2 * q + 1)


def _bow_rows(params, x_rows):
    """Bag-of-words encodings, one per row of x_rows: (P, H)."""
    return params["F"][:, x_rows].mean(axis=2).T


def _conv_rows(params, hyper, x_rows, activation=np.tanh):
    """TDNN encodings for x_rows (P, M): (enc (P,H), cache for backward).

    Each layer: width-preserving 1-D convolution over zero-padded windows of
    half-width Q, pairwise max pool over time (odd tail kept as a singleton),
    then the activation. Finally max over remaining positions per channel.
    The activation hook exists for algebraic reduction tests; the backward
    pass assumes tanh.
    """
    q, h = hyper.window, hyper.hidden_dim
    span = 2 * q + 1
    cur = params["F"][:, x_rows].transpose(1, 0, 2)  # (P, H, M)
    layers = []
    for l in range(1, hyper.conv_layers + 1):
        n_p, _, m = cur.shape
        padded = np.pad(cur, ((0, 0), (0, 0), (q, q)))
        win = sliding_window_view(padded, span, axis=2)  # (P, H, m, span)
        winflat = win.transpose(0, 2, 3, 1).reshape(n_p, m, span * h)
        z = (winflat @ params[f"Q{l}"].T).transpose(0, 2, 1)  # (P, H, m)
        n_pair = m // 2
        pair = z[:, :, :2 * n_pair].reshape(n_p, h, n_pair, 2)
        amax = pair.argmax(axis=3)
        pooled = np.take_along_axis(pair, amax[..., None], axis=3)[..., 0]
        if m % 2:
            pooled = np.concatenate([pooled, z[:, :, -1:]], axis=2)
        out = activation(pooled)
        layers.append({"winflat": winflat, "amax": amax, "width": m, "out": out})
        cur = out
    tmax = cur.argmax(axis=2)
    enc = np.take_along_axis(cur, tmax[:, :, None], axis=2)[:, :, 0]
    return enc, {"layers": layers, "tmax": tmax}


def _conv_rows_backward(params, hyper, x_rows, cache, denc_rows, grad):
    q, h = hyper.window, hyper.hidden_dim
    span = 2 * q + 1
    layers = cache["layers"]
    dcur = np.zeros_like(layers[-1]["out"])
    np.put_along_axis(dcur, cache["tmax"][:, :, None],
                      denc_rows[:, :, None], axis=2)
    for l in range(hyper.conv_layers, 0, -1):
        layer = layers[l - 1]
        out, m = layer["out"], layer["width"]
        n_p = out.shape[0]
        dpooled = dcur * (1.0 - out * out)
        n_pair = m // 2
        dz = np.zeros((n_p, h, m))
        if n_pair:
            dpair = np.zeros((n_p, h, n_pair, 2))
            np.put_along_axis(dpair, layer["amax"][..., None],
                              dpooled[:, :, :n_pair, None], axis=3)
            dz[:, :, :2 * n_pair] = dpair.reshape(n_p, h, 2 * n_pair)
        if m % 2:
            dz[:, :, -1] = dpooled[:, :, -1]
        dzt = dz.transpose(0, 2, 1)  # (P, m, H)
        grad(f"Q{l}")[...] += np.einsum("pmh,pmk->hk", dzt, layer["winflat"])
        dwin = (dzt @ params[f"Q{l}"]).reshape(n_p, m, span, h)
        dpadded = np.zeros((n_p, h, m + 2 * q))
        for off in range(span):
            dpadded[:, :, off:off + m] += dwin[:, :, off, :].transpose(0, 2, 1)
        dcur = dpadded[:, :, q:q + m]
    np.add.at(grad("F"), (slice(None), x_rows), dcur.transpose(1, 0, 2))


def _context_embed(table, ctx):
    """Stack embedding columns of a (T,C) context block into (T, C*D) rows."""
    t, c = ctx.shape
    return table[:, ctx].transpose(1, 2, 0).reshape(t, c * table.shape[0])


def _attention_parts(params, hyper, x_rows):
    """Input-side tensors of the attention encoder: xe, xbar of shape (P, M, H)."""
    xe = params["F"][:, x_rows].transpose(1, 2, 0)
    return xe, _box_mean(xe, hyper.window)


def _encode_batch(params, hyper, batch):
    """Encoder vectors for every step: (encvec (T,H), cache)."""
    if hyper.encoder == "bow":
        rows = _bow_rows(params, batch.x)
        return rows[batch.pair_of], {}
    if hyper.encoder == "conv":
        rows, cache = _conv_rows(params, hyper, batch.x)
        return rows[batch.pair_of], cache
    xe, xbar = _attention_parts(params, hyper, batch.x)
    ctx_g = _context_embed(params["G"], batch.ctx)
    query = ctx_g @ params["P"].T  # (T, H)
    xe_t = xe[batch.pair_of]
    scores = np.einsum("tmh,th->tm", xe_t, query)
    p = softmax_rows(scores)
    encvec = np.einsum("tm,tmh->th", p, xbar[batch.pair_of])
    return encvec, {"xe": xe, "xbar": xbar, "ctx_g": ctx_g,
                    "query": query, "p": p}


def forward(params, hyper, batch):
    """Full forward pass; returns a cache holding the per-step log-probs."""
    ytilde = _context_embed(params["E"], batch.ctx)
    h = np.tanh(ytilde @ params["U"].T + params["b_U"])
    logits = h @ params["V"].T + params["b_V"]
    encvec, enc_cache = None, None
    if hyper.encoder != "none":
        encvec, enc_cache = _encode_batch(params, hyper, batch)
        logits = logits + encvec @ params["W"].T + params["b_W"]
    return {"ytilde": ytilde, "h": h, "logits": logits,
            "logp": log_softmax_rows(logits), "encvec": encvec,
            "enc": enc_cache}


def loss(params, hyper, batch):
    """Summed negative log-likelihood of the batch targets."""
    cache = forward(params, hyper, batch)
    steps = np.arange(len(batch.target))
    return float(-cache["logp"][steps, batch.target].sum())


def backward(params, hyper, batch):
    """Accumulate d(summed NLL)/dtheta into params' gradients; returns the NLL."""
    cache = forward(params, hyper, batch)
    t = len(batch.target)
    steps = np.arange(t)
    nll = float(-cache["logp"][steps, batch.target].sum())
    grad = params.grad

    dlogits = np.exp(cache["logp"])  # softmax probabilities
    dlogits[steps, batch.target] -= 1.0
    h = cache["h"]
    grad("V")[...] += dlogits.T @ h
    grad("b_V")[...] += dlogits.sum(axis=0)
    dh = dlogits @ params["V"]
    if hyper.encoder != "none":
        grad("W")[...] += dlogits.T @ cache["encvec"]
        grad("b_W")[...] += dlogits.sum(axis=0)
        _encoder_backward(params, hyper, batch, cache,
                          dlogits @ params["W"])

    dpre = dh * (1.0 - h * h)
    grad("U")[...] += dpre.T @ cache["ytilde"]
    grad("b_U")[...] += dpre.sum(axis=0)
    dytilde = dpre @ params["U"]
    d = hyper.embed_dim
    dctx = dytilde.reshape(t, hyper.context_size, d).transpose(2, 0, 1)
    np.add.at(grad("E"), (slice(None), batch.ctx), dctx)
    return nll


def _encoder_backward(params, hyper, batch, cache, denc):
    """Route d(loss)/d(encvec) = denc (T,H) into encoder parameter gradients."""
    grad = params.grad
    n_p, m = batch.x.shape
    if hyper.encoder == "bow":
        drows = np.zeros((n_p, params["F"].shape[0]))
        np.add.at(drows, batch.pair_of, denc)
        np.add.at(grad("F"), (slice(None), batch.x), (drows.T / m)[:, :, None])
        return
    if hyper.encoder == "conv":
        drows = np.zeros((n_p, hyper.hidden_dim))
        np.add.at(drows, batch.pair_of, denc)
        _conv_rows_backward(params, hyper, batch.x, cache["enc"], drows, grad)
        return
    ec = cache["enc"]
    p, query = ec["p"], ec["query"]
    xe_t = ec["xe"][batch.pair_of]
    xbar_t = ec["xbar"][batch.pair_of]
    dp = np.einsum("th,tmh->tm", denc, xbar_t)
    dxbar_t = p[:, :, None] * denc[:, None, :]
    # softmax backward over input positions
    dscores = p * (dp - (p * dp).sum(axis=1, keepdims=True))
    dquery = np.einsum("tm,tmh->th", dscores, xe_t)
    dxe_t = dscores[:, :, None] * query[:, None, :]
    grad("P")[...] += dquery.T @ ec["ctx_g"]
    dctx_g = dquery @ params["P"]
    t, d = len(batch.target), hyper.embed_dim
    np.add.at(grad("G"), (slice(None), batch.ctx),
              dctx_g.reshape(t, hyper.context_size, d).transpose(2, 0, 1))
    dxbar = np.zeros_like(ec["xbar"])
    np.add.at(dxbar, batch.pair_of, dxbar_t)
    dxe = np.zeros_like(ec["xe"])
    np.add.at(dxe, batch.pair_of, dxe_t)
    dxe += _box_mean(dxbar, hyper.window)  # box mean is self-adjoint
    np.add.at(grad("F"), (slice(None), batch.x), dxe.transpose(2, 0, 1))


def cond_dist(params, hyper, x, y_c):
    """p(next token | input x, context y_c): a proper distribution over V."""
    x = _check_ids(x, hyper.vocab_size, "input ids")
    y_c = _check_ids(y_c, hyper.vocab_size, "context ids")
    if x.ndim != 1 or x.size == 0:
        raise ValueError("input must be a nonempty id sequence")
    if y_c.shape != (hyper.context_size,):
        raise ValueError(f"context must hold exactly {hyper.context_size} ids")
    batch = StepBatch(x=x[None, :], pair_of=np.zeros(1, dtype=np.int64),
                      ctx=y_c[None, :], target=np.zeros(1, dtype=np.int64))
    return np.exp(forward(params, hyper, batch)["logp"][0])


def enc_bow(params, x):
    """Order-independent input encoding: the mean of the columns F[:, x_i]."""
    x = _check_ids(x, params["F"].shape[1], "input ids")
    if x.size == 0:
        raise ValueError("empty input")
    return _bow_rows(params, x[None, :])[0]


def enc_conv(params, hyper, x, activation=np.tanh):
    """TDNN input encoding; see _conv_rows for the layer recipe."""
    x = _check_ids(x, hyper.vocab_size, "input ids")
    if x.size == 0:
        raise ValueError("empty input")
    return _conv_rows(params, hyper, x[None, :], activation)[0][0]


def enc_attention(params, hyper, x, y_c):
    """Context-dependent encoding (p^T xbar, p): p is softmax over positions
    of the bilinear scores xe_i . (P ytilde'_c); xbar is the windowed mean of xe."""
    x = _check_ids(x, hyper.vocab_size, "input ids")
    y_c = _check_ids(y_c, hyper.vocab_size, "context ids")
    if x.size == 0:
        raise ValueError("empty input")
    xe, xbar = _attention_parts(params, hyper, x[None, :])
    query = (_context_embed(params["G"], y_c[None, :]) @ params["P"].T)[0]
    p = softmax(xe[0] @ query)
    return p @ xbar[0], p


class Scorer:
    """Next-token log-probabilities for one input sentence.

    Precomputes everything independent of the output context so a decode step
    can score K candidate contexts with one mini-batch of matrix products.
    """

    def __init__(self, params, hyper, x):
        hyper.validate()
        self.params = params
        self.hyper = hyper
        self.x = _check_ids(x, hyper.vocab_size, "input ids")
        if self.x.ndim != 1 or self.x.size == 0:
            raise ValueError("input must be a nonempty id sequence")
        self._xe = self._xbar = None
        self._enc_logit = None
        if hyper.encoder == "bow":
            enc = _bow_rows(params, self.x[None, :])[0]
        elif hyper.encoder == "conv":
            enc = _conv_rows(params, hyper, self.x[None, :])[0][0]
        elif hyper.encoder == "attention":
            xe, xbar = _attention_parts(params, hyper, self.x[None, :])
            self._xe, self._xbar = xe[0], xbar[0]
            enc = None
        else:
            enc = None
        if enc is not None:
            self._enc_logit = params["W"] @ enc + params["b_W"]

    @property
    def vocab_size(self):
        return self.hyper.vocab_size

    @property
    def context_size(self):
        return self.hyper.context_size

    def _logits(self, contexts):
        contexts = _check_ids(contexts, self.hyper.vocab_size, "context ids")
        if contexts.ndim != 2 or contexts.shape[1] != self.hyper.context_size:
            raise ValueError("contexts must have shape (K, C)")
        params = self.params
        ytilde = _context_embed(params["E"], contexts)
        h = np.tanh(ytilde @ params["U"].T + params["b_U"])
        logits = h @ params["V"].T + params["b_V"]
        if self._enc_logit is not None:
            logits = logits + self._enc_logit
        elif self._xe is not None:
            encvec = self.attention(contexts) @ self._xbar
            logits = logits + encvec @ params["W"].T + params["b_W"]
        return logits

    def step_scores(self, contexts):
        """Log p(next | context, x) for contexts (K, C): shape (K, V)."""
        return log_softmax_rows(self._logits(contexts))

    def attention(self, contexts):
        """Attention rows p (K, M) for contexts (K, C); attention encoder only."""
        if self._xe is None:
            raise ValueError("attention weights require the attention encoder")
        contexts = _check_ids(contexts, self.hyper.vocab_size, "context ids")
        query = _context_embed(self.params["G"], contexts) @ self.params["P"].T
        return softmax_rows(query @ self._xe.T)


def attention_trace(params, hyper, x, y):
    """Replay the attention distributions used while producing y: (N, M) rows."""
    scorer = Scorer(params, hyper, x)
    return scorer.attention(context_windows(np.asarray(y, dtype=np.int64),
                                            hyper.context_size))


def _write_u32(fh, *values):
    fh.write(struct.pack(f"<{len(values)}I", *values))


def _read_exact(fh, n):
    data = fh.read(n)
    if len(data) != n:
        raise ValueError("truncated model file")
    return data


def _read_u32(fh, count=1):
    vals = struct.unpack(f"<{count}I", _read_exact(fh, 4 * count))
    return vals[0] if count == 1 else vals


def save_model(path, params, hyper):
    """Versioned little-endian binary: magic, version, hyperparams, then
    name-sorted tensors as (name, shape, row-major float64 payload)."""
    names = sorted(params.names())
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        _write_u32(fh, MODEL_FORMAT_VERSION)
        enc = hyper.encoder.encode("utf-8")
        _write_u32(fh, len(enc))
        fh.write(enc)
        _write_u32(fh, hyper.vocab_size, hyper.embed_dim, hyper.hidden_dim,
                   hyper.context_size, hyper.conv_layers, hyper.window)
        _write_u32(fh, len(names))
        for name in names:
            raw = name.encode("utf-8")
            _write_u32(fh, len(raw))
            fh.write(raw)
            arr = params[name]
            _write_u32(fh, arr.ndim, *arr.shape)
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _read_header(fh):
    if _read_exact(fh, 4) != _MAGIC:
        raise ValueError("not a model file (bad magic)")
    version = _read_u32(fh)
    if version != MODEL_FORMAT_VERSION:
        raise ValueError(f"unsupported model format version {version}")
    enc = _read_exact(fh, _read_u32(fh)).decode("utf-8")
    v, d, h, c, layers, window = _read_u32(fh, 6)
    hyper = Hyperparams(vocab_size=v, embed_dim=d, hidden_dim=h,
                        context_size=c, encoder=enc, conv_layers=layers,
                        window=window)
    return version, hyper.validate()


def load_model(path):
    """Read a saved model back: (ParamStore, Hyperparams)."""
    with open(path, "rb") as fh:
        _, hyper = _read_header(fh)
        tensors = {}
        for _ in range(_read_u32(fh)):
            name = _read_exact(fh, _read_u32(fh)).decode("utf-8")
            ndim = _read_u32(fh)
            shape = tuple(np.atleast_1d(_read_u32(fh, ndim)).tolist()) \
                if ndim else ()
            count = int(np.prod(shape, dtype=np.int64)) if shape else 1
            payload = _read_exact(fh, 8 * count)
            tensors[name] = np.frombuffer(payload, dtype="<f8").reshape(shape)
    expected = param_shapes(hyper)
    if set(tensors) != set(expected):
        raise ValueError("model file tensors do not match its hyperparams")
    params = ParamStore()
    for name, shape in expected.items():
        if tensors[name].shape != shape:
            raise ValueError(f"tensor {name} has shape {tensors[name].shape}, "
                             f"expected {shape}")
        params.register(name, tensors[name].astype(np.float64))
    return params, hyper


def read_model_header(path):
    """Header summary without loading payloads: hyperparams plus tensor shapes."""
    with open(path, "rb") as fh:
        version, hyper = _read_header(fh)
        shapes = {}
        for _ in range(_read_u32(fh)):
            name = _read_exact(fh, _read_u32(fh)).decode("utf-8")
            ndim = _read_u32(fh)
            dims = _read_u32(fh, ndim) if ndim else ()
            shape = tuple(np.atleast_1d(dims).tolist()) if ndim else ()
            fh.seek(8 * int(np.prod(shape, dtype=np.int64) if shape else 1), 1)
            shapes[name] = shape
    return {"format_version": version, "hyperparams": hyper, "tensors": shapes}
