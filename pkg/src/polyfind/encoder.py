"""Dual encoder mapping n-gram feature sets into a shared vector space.

Context and reply towers share one pair of embedding tables (unigram and
bigram). Each side embeds its features, optionally runs a single
scaled-dot-product self-attention block over each n-gram stream, mean-pools
the streams, averages the two pooled vectors, and pushes the result through
a stack of ReLU hidden layers plus a final linear projection. Outputs are
unit-normalized, so similarity is a dot product scaled by a learned
constant kept in (0, sqrt(out_dim)].

Parameters are stored float32 (the on-disk format) and all math runs in
float64, which keeps save/load round trips bit-identical and makes the
finite-difference gradient tests sharp. Training is plain SGD over
in-batch softmax with the positives on the diagonal.
"""

from __future__ import annotations

import hashlib
import struct
import zlib
from dataclasses import dataclass, replace

import numpy as np

from .errors import (
    BatchTooSmall,
    CorruptFile,
    DimensionMismatch,
    EmptyCorpus,
    FormatVersionMismatch,
    NotNormalized,
)
from .featurizer import FeatureSet, Vocab, featurize

MODEL_MAGIC = b"PFND"
MODEL_VERSION = 1

SCALE_MIN = 1e-6
GRAD_CLIP_NORM = 10.0
NORM_EPS = 1e-12

CONTEXT_SIDE = "ctx"
REPLY_SIDE = "rep"


@dataclass(frozen=True)
class EncoderConfig:
    """Encoder hyperparameters. Defaults are desk-scale; see paper_config."""

    embed_dim: int = 64
    hidden_dim: int = 128
    hidden_layers: int = 3
    out_dim: int = 64
    attention_enabled: bool = False
    attention_heads: int = 1
    learn_rate: float = 0.5
    batch_size: int = 50
    epochs: int = 10
    seed: int = 0

    def validate(self) -> None:
        if self.embed_dim <= 0 or self.out_dim <= 0:
            raise ValueError("embed_dim and out_dim must be positive")
        if self.hidden_dim <= 0 or self.hidden_layers < 1:
            raise ValueError("hidden_dim must be positive, hidden_layers >= 1")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if self.attention_enabled:
            if self.attention_heads < 1:
                raise ValueError("attention_heads must be >= 1")
            if self.embed_dim % self.attention_heads != 0:
                raise ValueError("attention_heads must divide embed_dim")


def paper_config(**overrides) -> EncoderConfig:
    """Full-scale configuration matching the published system."""
    cfg = EncoderConfig(
        embed_dim=320,
        hidden_dim=1024,
        hidden_layers=3,
        out_dim=512,
        batch_size=500,
    )
    return replace(cfg, **overrides) if overrides else cfg


@dataclass
class Encoding:
    """A unit-norm vector produced by one of the encoder towers."""

    vector: np.ndarray
    normalized: bool = True

    @property
    def dim(self) -> int:
        return int(self.vector.shape[0])


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(np.float32)


class EncoderModel:
    """Shared embeddings plus per-side towers and the similarity scale."""

    def __init__(self, cfg: EncoderConfig, uni_rows: int, bi_rows: int,
                 vocab_checksum: int = 0):
        cfg.validate()
        self.cfg = cfg
        self.uni_rows = uni_rows
        self.bi_rows = bi_rows
        self.vocab_checksum = vocab_checksum
        self.params: dict[str, np.ndarray] = {}

    # -- construction ------------------------------------------------------

    @classmethod
    def initialize(cls, cfg: EncoderConfig, uni_rows: int, bi_rows: int,
                   vocab_checksum: int = 0) -> "EncoderModel":
        model = cls(cfg, uni_rows, bi_rows, vocab_checksum)
        rng = np.random.default_rng(cfg.seed)
        d, h, l = cfg.embed_dim, cfg.hidden_dim, cfg.out_dim
        p = model.params
        scale = 1.0 / np.sqrt(d)
        p["emb_u"] = (rng.standard_normal((uni_rows, d)) * scale).astype(np.float32)
        p["emb_b"] = (rng.standard_normal((bi_rows, d)) * scale).astype(np.float32)
        for side in (CONTEXT_SIDE, REPLY_SIDE):
            if cfg.attention_enabled:
                for name in ("wq", "wk", "wv", "wo"):
                    p[f"{side}.attn.{name}"] = _glorot(rng, d, d)
            fan_in = d
            for i in range(cfg.hidden_layers):
                p[f"{side}.h{i}.w"] = _glorot(rng, fan_in, h)
                p[f"{side}.h{i}.b"] = np.zeros(h, dtype=np.float32)
                fan_in = h
            p[f"{side}.out.w"] = _glorot(rng, fan_in, l)
            p[f"{side}.out.b"] = np.zeros(l, dtype=np.float32)
        # Similarity scale starts in [0.5, 1.0] and is clamped to
        # (0, sqrt(out_dim)] after every update.
        p["scale"] = rng.uniform(0.5, 1.0, size=1).astype(np.float32)
        return model

    @classmethod
    def from_vocab(cls, cfg: EncoderConfig, vocab: Vocab) -> "EncoderModel":
        return cls.initialize(cfg, vocab.unigram_rows(), vocab.bigram_rows(),
                              vocab.checksum())

    # -- basic accessors ---------------------------------------------------

    @property
    def scale(self) -> float:
        return float(self.params["scale"][0])

    @property
    def scale_max(self) -> float:
        return float(np.sqrt(self.cfg.out_dim))

    def param_names(self) -> list[str]:
        """Serialization order of parameter tensors."""
        cfg = self.cfg
        names = ["emb_u", "emb_b"]
        for side in (CONTEXT_SIDE, REPLY_SIDE):
            if cfg.attention_enabled:
                names += [f"{side}.attn.{n}" for n in ("wq", "wk", "wv", "wo")]
            for i in range(cfg.hidden_layers):
                names += [f"{side}.h{i}.w", f"{side}.h{i}.b"]
            names += [f"{side}.out.w", f"{side}.out.b"]
        names.append("scale")
        return names

    def checksum(self) -> str:
        """SHA-256 over every parameter tensor, for freeze verification."""
        digest = hashlib.sha256()
        for name in self.param_names():
            digest.update(name.encode())
            digest.update(self.params[name].tobytes())
        return digest.hexdigest()

    # -- forward pass ------------------------------------------------------

    def _check_ids(self, feats: list[FeatureSet]) -> None:
        for fs in feats:
            if fs.unigrams and max(fs.unigrams) >= self.uni_rows:
                raise DimensionMismatch(
                    f"unigram id {max(fs.unigrams)} >= table rows {self.uni_rows}")
            if fs.bigrams and max(fs.bigrams) >= self.bi_rows:
                raise DimensionMismatch(
                    f"bigram id {max(fs.bigrams)} >= table rows {self.bi_rows}")

    def _attend(self, x: np.ndarray, side: str, cache: list | None) -> np.ndarray:
        """Single-layer multi-head self-attention over one n-gram stream."""
        p = self.params
        heads = self.cfg.attention_heads
        dh = self.cfg.embed_dim // heads
        wq = p[f"{side}.attn.wq"].astype(np.float64)
        wk = p[f"{side}.attn.wk"].astype(np.float64)
        wv = p[f"{side}.attn.wv"].astype(np.float64)
        wo = p[f"{side}.attn.wo"].astype(np.float64)
        q, k, v = x @ wq, x @ wk, x @ wv
        n = x.shape[0]
        attended = np.empty_like(x)
        probs = []
        for h in range(heads):
            sl = slice(h * dh, (h + 1) * dh)
            s = q[:, sl] @ k[:, sl].T / np.sqrt(dh)
            s -= s.max(axis=1, keepdims=True)
            e = np.exp(s)
            prob = e / e.sum(axis=1, keepdims=True)
            attended[:, sl] = prob @ v[:, sl]
            probs.append(prob)
        out = attended @ wo
        if cache is not None:
            cache.append({"x": x, "q": q, "k": k, "v": v,
                          "probs": probs, "attended": attended})
        return out

    def _attend_backward(self, d_out: np.ndarray, side: str, entry: dict,
                         grads: dict[str, np.ndarray]) -> np.ndarray:
        p = self.params
        heads = self.cfg.attention_heads
        dh = self.cfg.embed_dim // heads
        wq = p[f"{side}.attn.wq"].astype(np.float64)
        wk = p[f"{side}.attn.wk"].astype(np.float64)
        wv = p[f"{side}.attn.wv"].astype(np.float64)
        wo = p[f"{side}.attn.wo"].astype(np.float64)
        x, q, k, v = entry["x"], entry["q"], entry["k"], entry["v"]
        grads[f"{side}.attn.wo"] += entry["attended"].T @ d_out
        d_att = d_out @ wo.T
        dq = np.zeros_like(q)
        dk = np.zeros_like(k)
        dv = np.zeros_like(v)
        for h in range(heads):
            sl = slice(h * dh, (h + 1) * dh)
            prob = entry["probs"][h]
            dp = d_att[:, sl] @ v[:, sl].T
            dv[:, sl] = prob.T @ d_att[:, sl]
            ds = prob * (dp - (dp * prob).sum(axis=1, keepdims=True))
            ds /= np.sqrt(dh)
            dq[:, sl] = ds @ k[:, sl]
            dk[:, sl] = ds.T @ q[:, sl]
        grads[f"{side}.attn.wq"] += x.T @ dq
        grads[f"{side}.attn.wk"] += x.T @ dk
        grads[f"{side}.attn.wv"] += x.T @ dv
        return dq @ wq.T + dk @ wk.T + dv @ wv.T

    def _forward_batch(self, feats: list[FeatureSet], side: str,
                       want_cache: bool = False):
        """Encode a list of feature sets; returns (encodings, cache)."""
        self._check_ids(feats)
        cfg = self.cfg
        n = len(feats)
        d = cfg.embed_dim
        emb_u = self.params["emb_u"].astype(np.float64)
        emb_b = self.params["emb_b"].astype(np.float64)
        pools = np.zeros((n, d))
        attn_caches: dict[tuple[int, str], dict] | None = {} if want_cache else None

        if cfg.attention_enabled:
            for i, fs in enumerate(feats):
                total = np.zeros(d)
                for stream, table in (("u", emb_u), ("b", emb_b)):
                    ids = fs.unigrams if stream == "u" else fs.bigrams
                    if not ids:
                        continue
                    x = table[np.asarray(ids, dtype=np.int64)]
                    holder: list = []
                    attended = self._attend(x, side, holder if want_cache else None)
                    if want_cache:
                        attn_caches[(i, stream)] = holder[0]
                    total += attended.mean(axis=0)
                pools[i] = total / 2.0
        else:
            pools = (_pool_mean(emb_u, [fs.unigrams for fs in feats])
                     + _pool_mean(emb_b, [fs.bigrams for fs in feats])) / 2.0

        acts = [pools]
        h = pools
        for i in range(cfg.hidden_layers):
            w = self.params[f"{side}.h{i}.w"].astype(np.float64)
            b = self.params[f"{side}.h{i}.b"].astype(np.float64)
            h = np.maximum(h @ w + b, 0.0)
            acts.append(h)
        w = self.params[f"{side}.out.w"].astype(np.float64)
        b = self.params[f"{side}.out.b"].astype(np.float64)
        y = h @ w + b
        norms = np.linalg.norm(y, axis=1)
        enc = np.zeros_like(y)
        live = norms > NORM_EPS
        enc[live] = y[live] / norms[live, None]
        # Degenerate direction (possible only for empty inputs with zero
        # biases): pin to a fixed axis so the norm contract always holds.
        enc[~live, 0] = 1.0
        cache = None
        if want_cache:
            cache = {"feats": feats, "side": side, "acts": acts, "y": y,
                     "norms": norms, "enc": enc, "live": live,
                     "attn": attn_caches}
        return enc, cache

    def _backward_batch(self, cache, d_enc: np.ndarray,
                        grads: dict[str, np.ndarray]) -> None:
        cfg = self.cfg
        side = cache["side"]
        feats = cache["feats"]
        enc, y, norms, live = cache["enc"], cache["y"], cache["norms"], cache["live"]

        dy = np.zeros_like(y)
        dots = (enc[live] * d_enc[live]).sum(axis=1, keepdims=True)
        dy[live] = (d_enc[live] - enc[live] * dots) / norms[live, None]

        w = self.params[f"{side}.out.w"].astype(np.float64)
        grads[f"{side}.out.w"] += cache["acts"][-1].T @ dy
        grads[f"{side}.out.b"] += dy.sum(axis=0)
        dh = dy @ w.T
        for i in range(cfg.hidden_layers - 1, -1, -1):
            dh = dh * (cache["acts"][i + 1] > 0)
            w = self.params[f"{side}.h{i}.w"].astype(np.float64)
            grads[f"{side}.h{i}.w"] += cache["acts"][i].T @ dh
            grads[f"{side}.h{i}.b"] += dh.sum(axis=0)
            dh = dh @ w.T
        d_pools = dh  # (n, d)

        emb_u = self.params["emb_u"].astype(np.float64)
        emb_b = self.params["emb_b"].astype(np.float64)
        for stream, table, key in (("u", emb_u, "emb_u"), ("b", emb_b, "emb_b")):
            all_ids: list[np.ndarray] = []
            all_rows: list[np.ndarray] = []
            for i, fs in enumerate(feats):
                ids = fs.unigrams if stream == "u" else fs.bigrams
                if not ids:
                    continue
                ids_arr = np.asarray(ids, dtype=np.int64)
                d_pool_stream = d_pools[i] / 2.0
                d_rows = np.broadcast_to(d_pool_stream / len(ids),
                                         (len(ids), cfg.embed_dim))
                if cfg.attention_enabled:
                    entry = cache["attn"][(i, stream)]
                    d_rows = self._attend_backward(
                        np.ascontiguousarray(d_rows), side, entry, grads)
                all_ids.append(ids_arr)
                all_rows.append(np.ascontiguousarray(d_rows))
            if all_ids:
                np.add.at(grads[key], np.concatenate(all_ids),
                          np.concatenate(all_rows))

    # -- public encoding API -----------------------------------------------

    def encode_batch(self, feats: list[FeatureSet], side: str) -> np.ndarray:
        enc, _ = self._forward_batch(feats, side)
        return enc

    def encode_context(self, fs: FeatureSet) -> Encoding:
        return Encoding(self.encode_batch([fs], CONTEXT_SIDE)[0])

    def encode_reply(self, fs: FeatureSet) -> Encoding:
        return Encoding(self.encode_batch([fs], REPLY_SIDE)[0])

    # -- training ----------------------------------------------------------

    def zero_grads(self) -> dict[str, np.ndarray]:
        return {name: np.zeros(self.params[name].shape)
                for name in self.param_names()}

    def batch_loss(self, batch: list[tuple[FeatureSet, FeatureSet]]) -> float:
        loss, _ = self._loss_and_grads(batch, want_grads=False)
        return loss

    def _loss_and_grads(self, batch, want_grads: bool = True):
        if len(batch) < 2:
            raise BatchTooSmall(f"need >= 2 pairs, got {len(batch)}")
        ctx_feats = [c for c, _ in batch]
        rep_feats = [r for _, r in batch]
        enc_c, cache_c = self._forward_batch(ctx_feats, CONTEXT_SIDE,
                                             want_cache=want_grads)
        enc_r, cache_r = self._forward_batch(rep_feats, REPLY_SIDE,
                                             want_cache=want_grads)
        b = len(batch)
        c_val = float(self.params["scale"][0])
        cos = enc_c @ enc_r.T
        scores = c_val * cos
        shifted = scores - scores.max(axis=1, keepdims=True)
        exp = np.exp(shifted)
        probs = exp / exp.sum(axis=1, keepdims=True)
        row_losses = shifted.diagonal() - np.log(exp.sum(axis=1))
        loss = float(-row_losses.mean())
        if not want_grads:
            return loss, None
        d_scores = (probs - np.eye(b)) / b
        grads = self.zero_grads()
        grads["scale"][0] = (d_scores * cos).sum()
        d_enc_c = c_val * (d_scores @ enc_r)
        d_enc_r = c_val * (d_scores.T @ enc_c)
        self._backward_batch(cache_c, d_enc_c, grads)
        self._backward_batch(cache_r, d_enc_r, grads)
        return loss, grads

    def apply_grads(self, grads: dict[str, np.ndarray], learn_rate: float) -> None:
        total = 0.0
        for g in grads.values():
            total += float((g * g).sum())
        norm = np.sqrt(total)
        factor = learn_rate
        if norm > GRAD_CLIP_NORM:
            factor *= GRAD_CLIP_NORM / norm
        for name, g in grads.items():
            p64 = self.params[name].astype(np.float64) - factor * g
            self.params[name] = p64.astype(np.float32)
        # Keep the similarity scale inside its allowed interval.
        self.params["scale"][0] = np.float32(
            min(max(self.scale, SCALE_MIN), self.scale_max))

    def train_step(self, batch: list[tuple[FeatureSet, FeatureSet]]) -> float:
        loss, grads = self._loss_and_grads(batch)
        self.apply_grads(grads, self.cfg.learn_rate)
        return loss


def _pool_mean(table: np.ndarray, id_lists: list) -> np.ndarray:
    """Mean of embedding rows per id list; empty lists pool to zero."""
    n = len(id_lists)
    out = np.zeros((n, table.shape[1]))
    lens = np.fromiter((len(ids) for ids in id_lists), count=n, dtype=np.int64)
    nonempty = np.nonzero(lens)[0]
    if nonempty.size == 0:
        return out
    concat = np.concatenate(
        [np.asarray(id_lists[i], dtype=np.int64) for i in nonempty])
    rows = table[concat]
    seg_lens = lens[nonempty]
    offsets = np.zeros(nonempty.size, dtype=np.int64)
    np.cumsum(seg_lens[:-1], out=offsets[1:])
    sums = np.add.reduceat(rows, offsets, axis=0)
    out[nonempty] = sums / seg_lens[:, None]
    return out


def score(a: Encoding, b: Encoding, scale: float) -> float:
    """Scaled cosine similarity of two unit-norm encodings."""
    if a.dim != b.dim:
        raise DimensionMismatch(f"encoding dims {a.dim} != {b.dim}")
    for enc in (a, b):
        norm = float(np.linalg.norm(enc.vector))
        if abs(norm - 1.0) > 1e-4:
            raise NotNormalized(f"encoding norm {norm:.6f} deviates from 1")
    return float(scale * np.dot(a.vector, b.vector))


def train(corpus, cfg: EncoderConfig, vocab: Vocab,
          loss_log: list | None = None) -> EncoderModel:
    """Train a fresh dual encoder on (context, reply) text pairs.

    Shuffling is seeded from the config, so identical corpus and config
    yield a bit-identical model. Pass a list as ``loss_log`` to collect
    per-batch training losses.
    """
    pairs = list(corpus)
    if not pairs:
        raise EmptyCorpus("training corpus is empty")
    feats = [(featurize(c, vocab), featurize(r, vocab)) for c, r in pairs]
    model = EncoderModel.from_vocab(cfg, vocab)
    rng = np.random.default_rng(cfg.seed + 1)
    for _ in range(cfg.epochs):
        order = rng.permutation(len(feats))
        for start in range(0, len(feats), cfg.batch_size):
            batch = [feats[i] for i in order[start:start + cfg.batch_size]]
            if len(batch) >= 2:
                loss = model.train_step(batch)
                if loss_log is not None:
                    loss_log.append(loss)
    return model


# -- persistence -------------------------------------------------------------

def save_model(model: EncoderModel, path) -> None:
    cfg = model.cfg
    header = MODEL_MAGIC + struct.pack(
        "<10I",
        MODEL_VERSION,
        cfg.embed_dim,
        cfg.hidden_dim,
        cfg.hidden_layers,
        cfg.out_dim,
        1 if cfg.attention_enabled else 0,
        cfg.attention_heads,
        model.uni_rows,
        model.bi_rows,
        model.vocab_checksum & 0xFFFFFFFF,
    )
    chunks = [header]
    for name in model.param_names():
        arr = np.ascontiguousarray(model.params[name], dtype="<f4")
        chunks.append(arr.tobytes())
    body = b"".join(chunks)
    with open(path, "wb") as fh:
        fh.write(body)
        fh.write(struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF))


def load_model(path) -> EncoderModel:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 4 or blob[:4] != MODEL_MAGIC:
        raise FormatVersionMismatch("bad magic bytes: not an encoder model file")
    header_len = 4 + struct.calcsize("<10I")
    if len(blob) < header_len + 4:
        raise CorruptFile("model file truncated")
    body, crc_bytes = blob[:-4], blob[-4:]
    (crc_stored,) = struct.unpack("<I", crc_bytes)
    if zlib.crc32(body) & 0xFFFFFFFF != crc_stored:
        raise CorruptFile("model file checksum mismatch")
    (version, d, hidden, layers, l, attn, heads,
     uni_rows, bi_rows, vocab_ck) = struct.unpack("<10I", body[4:header_len])
    if version != MODEL_VERSION:
        raise FormatVersionMismatch(f"unsupported model format version {version}")
    cfg = EncoderConfig(
        embed_dim=d, hidden_dim=hidden, hidden_layers=layers, out_dim=l,
        attention_enabled=bool(attn), attention_heads=max(heads, 1),
    )
    model = EncoderModel(cfg, uni_rows, bi_rows, vocab_ck)
    offset = header_len
    shapes = _tensor_shapes(cfg, uni_rows, bi_rows)
    for name in model.param_names():
        shape = shapes[name]
        count = int(np.prod(shape))
        end = offset + count * 4
        if end > len(body):
            raise CorruptFile("model file truncated inside tensor data")
        arr = np.frombuffer(body[offset:end], dtype="<f4").reshape(shape).copy()
        model.params[name] = arr
        offset = end
    if offset != len(body):
        raise CorruptFile("model file has trailing bytes")
    return model


def _tensor_shapes(cfg: EncoderConfig, uni_rows: int, bi_rows: int) -> dict:
    d, h, l = cfg.embed_dim, cfg.hidden_dim, cfg.out_dim
    shapes = {"emb_u": (uni_rows, d), "emb_b": (bi_rows, d), "scale": (1,)}
    for side in (CONTEXT_SIDE, REPLY_SIDE):
        if cfg.attention_enabled:
            for n in ("wq", "wk", "wv", "wo"):
                shapes[f"{side}.attn.{n}"] = (d, d)
        fan_in = d
        for i in range(cfg.hidden_layers):
            shapes[f"{side}.h{i}.w"] = (fan_in, h)
            shapes[f"{side}.h{i}.b"] = (h,)
            fan_in = h
        shapes[f"{side}.out.w"] = (fan_in, l)
        shapes[f"{side}.out.b"] = (l,)
    return shapes
