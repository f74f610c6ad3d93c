"""Photo response head: projects CNN feature vectors into the reply space.

Feature vectors arrive from files (the upstream CNN is not part of this
package). A small two-layer head maps them to the same l-dimensional space
as text replies. When a photo has a caption, its score against a context
averages the caption's reply encoding with the photo encoding before the
cosine, which is the rule used at inference time.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, EmptyCorpus, ParseError
from .encoder import NORM_EPS, EncoderModel, Encoding, score
from .featurizer import Vocab, featurize

DEFAULT_FEATURE_DIM = 1792
DEFAULT_HIDDEN_DIM = 1024
DEGENERATE_NORM = 1e-9


@dataclass
class PhotoFeatures:
    """One photo's externally computed feature vector plus metadata."""

    photo_id: str
    features: np.ndarray
    caption: str | None = None
    entity_id: str | None = None


@dataclass(frozen=True)
class PhotoTrainConfig:
    hidden_dim: int = DEFAULT_HIDDEN_DIM
    learn_rate: float = 0.1
    batch_size: int = 50
    epochs: int = 10
    seed: int = 0


class PhotoHead:
    """ReLU hidden layer over photo features, then a linear map to l dims."""

    def __init__(self, in_dim: int, hidden_dim: int, out_dim: int):
        self.in_dim = in_dim
        self.hidden_dim = hidden_dim
        self.out_dim = out_dim
        self.params: dict[str, np.ndarray] = {}

    @classmethod
    def initialize(cls, in_dim: int, out_dim: int,
                   hidden_dim: int = DEFAULT_HIDDEN_DIM,
                   seed: int = 0) -> "PhotoHead":
        head = cls(in_dim, hidden_dim, out_dim)
        rng = np.random.default_rng(seed)

        def glorot(fan_in, fan_out):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            return rng.uniform(-limit, limit, (fan_in, fan_out)).astype(np.float32)

        head.params["h.w"] = glorot(in_dim, hidden_dim)
        head.params["h.b"] = np.zeros(hidden_dim, dtype=np.float32)
        head.params["out.w"] = glorot(hidden_dim, out_dim)
        head.params["out.b"] = np.zeros(out_dim, dtype=np.float32)
        return head

    def param_names(self) -> list[str]:
        return ["h.w", "h.b", "out.w", "out.b"]

    def _forward(self, x: np.ndarray, want_cache: bool = False):
        if x.shape[1] != self.in_dim:
            raise DimensionMismatch(
                f"photo features have dim {x.shape[1]}, head expects {self.in_dim}")
        w1 = self.params["h.w"].astype(np.float64)
        b1 = self.params["h.b"].astype(np.float64)
        w2 = self.params["out.w"].astype(np.float64)
        b2 = self.params["out.b"].astype(np.float64)
        hidden = np.maximum(x @ w1 + b1, 0.0)
        y = hidden @ w2 + b2
        norms = np.linalg.norm(y, axis=1)
        enc = np.zeros_like(y)
        live = norms > NORM_EPS
        enc[live] = y[live] / norms[live, None]
        enc[~live, 0] = 1.0
        cache = {"x": x, "hidden": hidden, "y": y, "norms": norms,
                 "enc": enc, "live": live} if want_cache else None
        return enc, cache

    def encode_batch(self, features: np.ndarray) -> np.ndarray:
        enc, _ = self._forward(np.asarray(features, dtype=np.float64))
        return enc

    def zero_grads(self) -> dict[str, np.ndarray]:
        return {n: np.zeros(self.params[n].shape) for n in self.param_names()}

    def _backward(self, cache, d_enc: np.ndarray, grads: dict) -> None:
        enc, y, norms, live = cache["enc"], cache["y"], cache["norms"], cache["live"]
        dy = np.zeros_like(y)
        dots = (enc[live] * d_enc[live]).sum(axis=1, keepdims=True)
        dy[live] = (d_enc[live] - enc[live] * dots) / norms[live, None]
        grads["out.w"] += cache["hidden"].T @ dy
        grads["out.b"] += dy.sum(axis=0)
        dh = dy @ self.params["out.w"].astype(np.float64).T
        dh = dh * (cache["hidden"] > 0)
        grads["h.w"] += cache["x"].T @ dh
        grads["h.b"] += dh.sum(axis=0)

    def batch_loss(self, features: np.ndarray, caption_encs: np.ndarray,
                   scale: float) -> float:
        loss, _ = self._loss_and_grads(features, caption_encs, scale,
                                       want_grads=False)
        return loss

    def _loss_and_grads(self, features, caption_encs, scale,
                        want_grads: bool = True):
        enc_p, cache = self._forward(np.asarray(features, dtype=np.float64),
                                     want_cache=want_grads)
        b = enc_p.shape[0]
        cos = enc_p @ caption_encs.T
        scores = scale * cos
        shifted = scores - scores.max(axis=1, keepdims=True)
        exp = np.exp(shifted)
        loss = float(-(shifted.diagonal() - np.log(exp.sum(axis=1))).mean())
        if not want_grads:
            return loss, None
        probs = exp / exp.sum(axis=1, keepdims=True)
        d_scores = (probs - np.eye(b)) / b
        d_enc_p = scale * (d_scores @ caption_encs)
        grads = self.zero_grads()
        self._backward(cache, d_enc_p, grads)
        return loss, grads

    def apply_grads(self, grads: dict, learn_rate: float) -> None:
        total = sum(float((g * g).sum()) for g in grads.values())
        norm = np.sqrt(total)
        factor = learn_rate
        if norm > 10.0:
            factor *= 10.0 / norm
        for name, g in grads.items():
            p64 = self.params[name].astype(np.float64) - factor * g
            self.params[name] = p64.astype(np.float32)


def encode_photo(head: PhotoHead, pf: PhotoFeatures) -> Encoding:
    """Encode one photo's feature vector into the shared reply space."""
    feats = np.asarray(pf.features, dtype=np.float64)
    if feats.ndim != 1 or feats.shape[0] != head.in_dim:
        raise DimensionMismatch(
            f"photo {pf.photo_id}: feature length {feats.shape} "
            f"does not match head input dim {head.in_dim}")
    return Encoding(head.encode_batch(feats[None, :])[0])


def photo_score(h_c: Encoding, h_p: Encoding,
                h_caption: Encoding | None, scale: float) -> float:
    """Score a photo against a context, caption-averaged when available.

    With a caption, the caption and photo encodings are averaged and
    re-normalized before the scaled cosine. A degenerate average (the two
    vectors cancel) scores 0.
    """
    if h_caption is None:
        return score(h_c, h_p, scale)
    avg = (h_caption.vector + h_p.vector) / 2.0
    norm = float(np.linalg.norm(avg))
    if norm < DEGENERATE_NORM:
        return 0.0
    return score(h_c, Encoding(avg / norm), scale)


def averaged_photo_vector(h_p: np.ndarray, h_caption: np.ndarray | None) -> np.ndarray:
    """The effective search vector for a photo candidate.

    Precomputing this at index build time makes photo search a plain dot
    product while scoring identically to photo_score.
    """
    if h_caption is None:
        return h_p
    avg = (h_caption + h_p) / 2.0
    norm = float(np.linalg.norm(avg))
    if norm < DEGENERATE_NORM:
        return np.zeros_like(h_p)
    return avg / norm


def train_photo_head(pairs, frozen_encoder: EncoderModel, vocab: Vocab,
                     cfg: PhotoTrainConfig = PhotoTrainConfig()) -> PhotoHead:
    """Fit a photo head against a frozen text encoder.

    Each batch treats every other caption as a negative for a given photo.
    Only head weights move; the text encoder (including its similarity
    scale) stays untouched, which callers can verify via its checksum.
    """
    pairs = list(pairs)
    if not pairs:
        raise EmptyCorpus("no (photo, caption) pairs to train on")
    features = np.stack([np.asarray(pf.features, dtype=np.float64)
                         for pf, _ in pairs])
    captions = [featurize(text, vocab) for _, text in pairs]
    caption_encs = frozen_encoder.encode_batch(captions, "rep")
    head = PhotoHead.initialize(features.shape[1], frozen_encoder.cfg.out_dim,
                                hidden_dim=cfg.hidden_dim, seed=cfg.seed)
    scale = frozen_encoder.scale
    rng = np.random.default_rng(cfg.seed + 1)
    n = len(pairs)
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            if idx.size < 2:
                continue
            _, grads = head._loss_and_grads(features[idx], caption_encs[idx], scale)
            head.apply_grads(grads, cfg.learn_rate)
    return head


# -- photo feature files -----------------------------------------------------

def load_photo_features(path, expect_dim: int | None = None) -> list[PhotoFeatures]:
    """Read a JSONL photo feature file.

    Each line: {"photo_id": str, "entity_id": str, "caption": str|null,
    "features": [float, ...]}. All feature vectors must share one length.
    """
    photos: list[PhotoFeatures] = []
    dim = expect_dim
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", line=lineno) from None
            for key in ("photo_id", "entity_id", "features"):
                if key not in obj:
                    raise ParseError(f"missing key {key!r}", line=lineno)
            feats = np.asarray(obj["features"], dtype=np.float32)
            if feats.ndim != 1:
                raise ParseError("features must be a flat array", line=lineno)
            if dim is None:
                dim = feats.shape[0]
            elif feats.shape[0] != dim:
                raise ParseError(
                    f"feature length {feats.shape[0]} != expected {dim}",
                    line=lineno)
            photos.append(PhotoFeatures(
                photo_id=str(obj["photo_id"]),
                features=feats,
                caption=obj.get("caption"),
                entity_id=str(obj["entity_id"]),
            ))
    return photos


def save_photo_head(head: PhotoHead, path) -> None:
    """Persist a photo head (small npz with explicit dims)."""
    np.savez(path, in_dim=head.in_dim, hidden_dim=head.hidden_dim,
             out_dim=head.out_dim,
             **{n.replace(".", "_"): head.params[n] for n in head.param_names()})


def load_photo_head(path) -> PhotoHead:
    data = np.load(path)
    head = PhotoHead(int(data["in_dim"]), int(data["hidden_dim"]),
                     int(data["out_dim"]))
    for name in head.param_names():
        head.params[name] = data[name.replace(".", "_")].astype(np.float32)
    return head
