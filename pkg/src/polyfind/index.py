"""Per-city pool of pre-encoded candidate responses.

Every candidate (templated fact sentence, review sentence, menu item, or
photo) belongs to exactly one restaurant entity and carries a unit-norm
vector in the reply space. Search is an exact scaled dot product over the
filtered pool with deterministic tie-breaking; an optional inverted-file
structure accelerates large pools at a bounded recall cost.

Photo candidates store their caption-averaged vector, so one dot product
scores them identically to the caption-averaging rule.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    CorruptFile,
    DimensionMismatch,
    EmptyPool,
    FormatVersionMismatch,
    NotBuilt,
    ParseError,
)
from .encoder import EncoderModel, Encoding
from .featurizer import featurize
from .photos import PhotoHead, averaged_photo_vector, load_photo_features

INDEX_MAGIC = b"PFIX"
INDEX_VERSION = 1

KIND_FACT = "fact"
KIND_REVIEW = "review"
KIND_MENU = "menu"
KIND_PHOTO = "photo"
ALL_KINDS = (KIND_FACT, KIND_REVIEW, KIND_MENU, KIND_PHOTO)
TEXT_KINDS = frozenset({KIND_FACT, KIND_REVIEW, KIND_MENU})
_KIND_CODE = {k: i for i, k in enumerate(ALL_KINDS)}

# Attribute templates, positive/negative variants where the value is a flag.
_BOOL_TEMPLATES = {
    "accepts_credit_cards": ("Restaurant {name} accepts credit cards.",
                             "Restaurant {name} does not accept credit cards."),
    "accepts_reservations": ("Restaurant {name} accepts reservations.",
                             "Restaurant {name} does not accept reservations."),
    "delivery": ("Restaurant {name} offers delivery.",
                 "Restaurant {name} does not offer delivery."),
}
_VALUE_TEMPLATES = {
    "price_range": "Restaurant {name} is in the {value} price range.",
    "cuisine": "Restaurant {name} serves {value} cuisine.",
    "address": "Restaurant {name} is located at {value}.",
    "opening_hours": "Restaurant {name} is open {value}.",
}
ATTRIBUTE_ORDER = (
    "accepts_credit_cards", "price_range", "cuisine", "address",
    "opening_hours", "accepts_reservations", "delivery",
)


@dataclass
class Entity:
    entity_id: str
    name: str
    city: str
    attributes: dict = field(default_factory=dict)
    reviews: list[str] = field(default_factory=list)
    menu_items: list[str] = field(default_factory=list)
    photo_ids: list[str] = field(default_factory=list)


@dataclass
class Candidate:
    candidate_id: str
    entity_id: str
    kind: str
    text: str
    vector: np.ndarray
    english: str | None = None
    photo_ref: str | None = None
    has_caption: bool = False


@dataclass(frozen=True)
class IndexStats:
    n_entities: int = 0
    n_photos: int = 0
    n_fact_sentences: int = 0
    n_review_sentences: int = 0


def generate_fact_sentences(entity: Entity) -> list[str]:
    """Render one sentence per populated attribute from the template table."""
    sentences = []
    for attr in ATTRIBUTE_ORDER:
        if attr not in entity.attributes:
            continue
        value = entity.attributes[attr]
        if attr in _BOOL_TEMPLATES:
            pos, neg = _BOOL_TEMPLATES[attr]
            sentences.append((pos if value else neg).format(name=entity.name))
        else:
            sentences.append(_VALUE_TEMPLATES[attr].format(
                name=entity.name, value=value))
    return sentences


def load_entities(path) -> list[Entity]:
    """Parse an entity catalog (JSON array) and check id uniqueness."""
    with open(path, encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON: {exc.msg}", line=exc.lineno) from None
    if not isinstance(raw, list):
        raise ParseError("entity catalog must be a JSON array")
    entities: list[Entity] = []
    seen: set[str] = set()
    for i, obj in enumerate(raw):
        where = f"entity #{i}"
        for key in ("entity_id", "name", "city"):
            if key not in obj:
                raise ParseError(f"{where}: missing key {key!r}")
        eid = str(obj["entity_id"])
        if eid in seen:
            raise ParseError(f"{where}: duplicate entity_id {eid!r}")
        seen.add(eid)
        entities.append(Entity(
            entity_id=eid,
            name=str(obj["name"]),
            city=str(obj["city"]),
            attributes=dict(obj.get("attributes", {})),
            reviews=[str(r) for r in obj.get("reviews", [])],
            menu_items=[str(m) for m in obj.get("menu_items", [])],
            photo_ids=[str(p) for p in obj.get("photo_ids", [])],
        ))
    return entities


class ResponseIndex:
    """Immutable pool of scored candidates for one city."""

    def __init__(self, city: str, out_dim: int, scale: float,
                 entity_names: dict[str, str], candidates: list[Candidate],
                 stats: IndexStats, language: str = "en"):
        self.city = city
        self.out_dim = out_dim
        self.scale = scale
        self.language = language
        self.entity_names = dict(entity_names)
        self.candidates = list(candidates)
        self.stats = stats
        self._finalize()
        self._ivf = None

    def _finalize(self) -> None:
        n = len(self.candidates)
        self.vectors = np.zeros((n, self.out_dim), dtype=np.float32)
        self._kind_codes = np.zeros(n, dtype=np.int8)
        eids = sorted(self.entity_names)
        self._entity_ord = {eid: i for i, eid in enumerate(eids)}
        self._cand_entity = np.zeros(n, dtype=np.int32)
        for i, cand in enumerate(self.candidates):
            if cand.vector.shape != (self.out_dim,):
                raise DimensionMismatch(
                    f"candidate {cand.candidate_id}: vector shape "
                    f"{cand.vector.shape} != ({self.out_dim},)")
            self.vectors[i] = cand.vector
            self._kind_codes[i] = _KIND_CODE[cand.kind]
            self._cand_entity[i] = self._entity_ord[cand.entity_id]
        order = sorted(range(n), key=lambda i: self.candidates[i].candidate_id)
        self._cid_rank = np.zeros(n, dtype=np.int64)
        for rank, i in enumerate(order):
            self._cid_rank[i] = rank

    @property
    def entity_ids(self) -> list[str]:
        return sorted(self.entity_names)

    @property
    def approx_built(self) -> bool:
        return self._ivf is not None

    def __len__(self) -> int:
        return len(self.candidates)

    # -- search --------------------------------------------------------------

    def _filter_mask(self, allowed, kinds) -> np.ndarray:
        if not allowed:
            raise EmptyPool("allowed entity set is empty")
        ords = [self._entity_ord[e] for e in allowed if e in self._entity_ord]
        mask = np.isin(self._cand_entity, np.asarray(ords, dtype=np.int32))
        if kinds is not None:
            codes = [_KIND_CODE[k] for k in kinds]
            mask &= np.isin(self._kind_codes, np.asarray(codes, dtype=np.int8))
        return mask

    def _rank(self, pool: np.ndarray, h_c: np.ndarray, k: int):
        scores = self.scale * (self.vectors[pool].astype(np.float64) @ h_c)
        order = np.lexsort((self._cid_rank[pool], -scores))[:k]
        return [(self.candidates[pool[i]], float(scores[i])) for i in order]

    def search(self, h_c: Encoding, allowed, kinds=None, k: int = 20):
        """Exact top-k candidates among the allowed entities and kinds.

        Results sort by descending score with ties broken by ascending
        candidate_id. Raises EmptyPool when nothing matches the filter.
        """
        if k < 1:
            raise ValueError("k must be >= 1")
        pool = np.nonzero(self._filter_mask(allowed, kinds))[0]
        if pool.size == 0:
            raise EmptyPool("no candidate matches the entity/kind filter")
        return self._rank(pool, np.asarray(h_c.vector, dtype=np.float64), k)

    # -- approximate search ----------------------------------------------------

    def build_approx(self, n_clusters: int | None = None,
                     n_probe: int | None = None, seed: int = 0,
                     iterations: int = 20) -> None:
        """Cluster candidate vectors into an inverted-file structure.

        Small pools collapse to a single cluster, which makes approximate
        search exact on them.
        """
        n = len(self.candidates)
        if n == 0:
            raise EmptyPool("cannot build approximate search over empty index")
        if n_clusters is None:
            n_clusters = 1 if n <= 100 else int(round(np.sqrt(n)))
        n_clusters = max(1, min(n_clusters, n))
        x = self.vectors.astype(np.float64)
        rng = np.random.default_rng(seed)
        centroids = x[rng.choice(n, size=n_clusters, replace=False)].copy()
        assign = np.zeros(n, dtype=np.int64)
        for _ in range(iterations):
            sims = x @ centroids.T
            assign = sims.argmax(axis=1)
            for c in range(n_clusters):
                members = np.nonzero(assign == c)[0]
                if members.size:
                    centroid = x[members].mean(axis=0)
                    norm = np.linalg.norm(centroid)
                    if norm > 0:
                        centroids[c] = centroid / norm
        members = [np.nonzero(assign == c)[0] for c in range(n_clusters)]
        if n_probe is None:
            n_probe = max(1, int(np.ceil(0.3 * n_clusters)))
        self._ivf = {"centroids": centroids, "members": members,
                     "n_probe": min(n_probe, n_clusters)}

    def search_approx(self, h_c: Encoding, allowed, kinds=None, k: int = 20,
                      n_probe: int | None = None):
        """Approximate top-k via cluster probing; same tie-breaking as search.

        Probes widen automatically until at least one filtered candidate is
        found, so a non-empty filter never returns an empty result.
        """
        if self._ivf is None:
            raise NotBuilt("call build_approx before search_approx")
        if k < 1:
            raise ValueError("k must be >= 1")
        mask = self._filter_mask(allowed, kinds)
        if not mask.any():
            raise EmptyPool("no candidate matches the entity/kind filter")
        query = np.asarray(h_c.vector, dtype=np.float64)
        ivf = self._ivf
        n_clusters = len(ivf["members"])
        probe = min(n_probe or ivf["n_probe"], n_clusters)
        cluster_order = np.argsort(-(ivf["centroids"] @ query))
        while True:
            probed = np.concatenate([ivf["members"][c]
                                     for c in cluster_order[:probe]])
            pool = probed[mask[probed]]
            if pool.size or probe >= n_clusters:
                break
            probe = min(probe * 2, n_clusters)
        if pool.size == 0:
            raise EmptyPool("no candidate matches the entity/kind filter")
        return self._rank(np.sort(pool), query, k)


def build_index(entities_path, photos_path, model: EncoderModel,
                head: PhotoHead, vocab, provider=None,
                language: str = "en") -> ResponseIndex:
    """Encode a city's entity catalog and photo features into an index.

    With a translation provider and a non-English language, candidate text
    is translated to English before encoding while the original stays as
    the display text; any provider failure aborts the whole build.
    """
    entities = load_entities(entities_path)
    if not entities:
        raise ParseError("entity catalog is empty")
    cities = {e.city for e in entities}
    if len(cities) != 1:
        raise ParseError(f"catalog mixes cities: {sorted(cities)}")
    city = cities.pop()
    by_id = {e.entity_id: e for e in entities}

    photos = load_photo_features(photos_path, expect_dim=head.in_dim)
    seen_photos = set()
    for i, pf in enumerate(photos):
        if pf.entity_id not in by_id:
            raise ParseError(
                f"photo {pf.photo_id!r} references unknown entity "
                f"{pf.entity_id!r}", line=i + 1)
        if pf.photo_id in seen_photos:
            raise ParseError(f"duplicate photo_id {pf.photo_id!r}", line=i + 1)
        seen_photos.add(pf.photo_id)

    texts: list[tuple[str, str, str, str]] = []  # (cid, eid, kind, text)
    n_facts = 0
    n_reviews = 0
    for entity in entities:
        for i, sent in enumerate(generate_fact_sentences(entity)):
            texts.append((f"{entity.entity_id}/fact/{i:05d}",
                          entity.entity_id, KIND_FACT, sent))
            n_facts += 1
        for i, sent in enumerate(entity.reviews):
            texts.append((f"{entity.entity_id}/review/{i:06d}",
                          entity.entity_id, KIND_REVIEW, sent))
            n_reviews += 1
        for i, item in enumerate(entity.menu_items):
            texts.append((f"{entity.entity_id}/menu/{i:05d}",
                          entity.entity_id, KIND_MENU, item))

    from .multilingual import translate_pool_texts  # local import, no cycle at import time

    english = translate_pool_texts(
        [(cid, text) for cid, _, _, text in texts], provider, language)
    caption_texts = {pf.photo_id: pf.caption for pf in photos if pf.caption}
    english_captions = dict(zip(
        caption_texts,
        translate_pool_texts(
            [(f"photo:{pid}", cap) for pid, cap in caption_texts.items()],
            provider, language),
    ))

    feats = [featurize(text, vocab) for text in english]
    text_vecs = model.encode_batch(feats, "rep").astype(np.float32)

    candidates: list[Candidate] = []
    for (cid, eid, kind, text), eng, vec in zip(texts, english, text_vecs):
        candidates.append(Candidate(
            candidate_id=cid, entity_id=eid, kind=kind, text=text,
            english=eng if eng != text else None, vector=vec))

    if photos:
        photo_mat = np.stack([pf.features for pf in photos]).astype(np.float64)
        photo_vecs = head.encode_batch(photo_mat)
        captioned = [pf for pf in photos if pf.caption]
        caption_vecs = {}
        if captioned:
            cap_feats = [featurize(english_captions[pf.photo_id], vocab)
                         for pf in captioned]
            cap_mat = model.encode_batch(cap_feats, "rep")
            caption_vecs = {pf.photo_id: cap_mat[i]
                            for i, pf in enumerate(captioned)}
        for pf, pvec in zip(photos, photo_vecs):
            cvec = caption_vecs.get(pf.photo_id)
            effective = averaged_photo_vector(pvec, cvec).astype(np.float32)
            eng_cap = english_captions.get(pf.photo_id)
            candidates.append(Candidate(
                candidate_id=f"{pf.entity_id}/photo/{pf.photo_id}",
                entity_id=pf.entity_id, kind=KIND_PHOTO,
                text=pf.caption or "",
                english=eng_cap if eng_cap and eng_cap != pf.caption else None,
                vector=effective, photo_ref=pf.photo_id,
                has_caption=pf.caption is not None))

    stats = IndexStats(
        n_entities=len(entities),
        n_photos=len(photos),
        n_fact_sentences=n_facts,
        n_review_sentences=n_reviews,
    )
    return ResponseIndex(
        city=city, out_dim=model.cfg.out_dim, scale=model.scale,
        entity_names={e.entity_id: e.name for e in entities},
        candidates=candidates, stats=stats, language=language)


# -- persistence ---------------------------------------------------------------

def _pool_add(pool: bytearray, text: str | None) -> int:
    if text is None:
        return 0xFFFFFFFF
    offset = len(pool)
    data = text.encode("utf-8")
    pool += struct.pack("<I", len(data)) + data
    return offset


def _pool_get(pool: bytes, offset: int) -> str | None:
    if offset == 0xFFFFFFFF:
        return None
    (length,) = struct.unpack_from("<I", pool, offset)
    return pool[offset + 4:offset + 4 + length].decode("utf-8")


def save_index(index: ResponseIndex, path) -> None:
    pool = bytearray()
    city_off = _pool_add(pool, index.city)
    lang_off = _pool_add(pool, index.language)
    eids = index.entity_ids
    entity_rows = b"".join(
        struct.pack("<II", _pool_add(pool, eid),
                    _pool_add(pool, index.entity_names[eid]))
        for eid in eids)
    cand_rows = []
    for cand in index.candidates:
        cand_rows.append(struct.pack(
            "<IIBIIIB",
            _pool_add(pool, cand.candidate_id),
            index._entity_ord[cand.entity_id],
            _KIND_CODE[cand.kind],
            _pool_add(pool, cand.text),
            _pool_add(pool, cand.english),
            _pool_add(pool, cand.photo_ref),
            1 if cand.has_caption else 0))
    stats = index.stats
    header = INDEX_MAGIC + struct.pack(
        "<IIfIIIIIIIII",
        INDEX_VERSION,
        index.out_dim,
        index.scale,
        stats.n_entities,
        stats.n_photos,
        stats.n_fact_sentences,
        stats.n_review_sentences,
        len(eids),
        len(index.candidates),
        city_off,
        lang_off,
        len(pool))
    vec_block = np.ascontiguousarray(index.vectors, dtype="<f4").tobytes()
    body = header + bytes(pool) + entity_rows + b"".join(cand_rows) + vec_block
    with open(path, "wb") as fh:
        fh.write(body)
        fh.write(struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF))


def load_index(path) -> ResponseIndex:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 4 or blob[:4] != INDEX_MAGIC:
        raise FormatVersionMismatch("bad magic bytes: not an index file")
    head_fmt = "<IIfIIIIIIIII"
    head_len = 4 + struct.calcsize(head_fmt)
    if len(blob) < head_len + 4:
        raise CorruptFile("index file truncated")
    body, crc_bytes = blob[:-4], blob[-4:]
    if zlib.crc32(body) & 0xFFFFFFFF != struct.unpack("<I", crc_bytes)[0]:
        raise CorruptFile("index file checksum mismatch")
    (version, out_dim, scale, n_ent_stat, n_photos, n_facts, n_reviews,
     n_entities, n_candidates, city_off, lang_off, pool_len) = struct.unpack_from(
        head_fmt, body, 4)
    if version != INDEX_VERSION:
        raise FormatVersionMismatch(f"unsupported index format version {version}")
    pos = head_len
    pool = body[pos:pos + pool_len]
    pos += pool_len
    city = _pool_get(pool, city_off)
    language = _pool_get(pool, lang_off)

    eids = []
    entity_names = {}
    for _ in range(n_entities):
        id_off, name_off = struct.unpack_from("<II", body, pos)
        pos += 8
        eid = _pool_get(pool, id_off)
        eids.append(eid)
        entity_names[eid] = _pool_get(pool, name_off)

    cand_fmt = "<IIBIIIB"
    cand_size = struct.calcsize(cand_fmt)
    rows = []
    for _ in range(n_candidates):
        rows.append(struct.unpack_from(cand_fmt, body, pos))
        pos += cand_size
    vec_bytes = n_candidates * out_dim * 4
    if pos + vec_bytes != len(body):
        raise CorruptFile("index file has wrong vector block size")
    vectors = np.frombuffer(body, dtype="<f4", count=n_candidates * out_dim,
                            offset=pos).reshape(n_candidates, out_dim)

    candidates = []
    for i, (cid_off, ent_ord, kind_code, text_off, eng_off,
            photo_off, has_cap) in enumerate(rows):
        candidates.append(Candidate(
            candidate_id=_pool_get(pool, cid_off),
            entity_id=eids[ent_ord],
            kind=ALL_KINDS[kind_code],
            text=_pool_get(pool, text_off),
            english=_pool_get(pool, eng_off),
            photo_ref=_pool_get(pool, photo_off),
            has_caption=bool(has_cap),
            vector=vectors[i].copy()))

    stats = IndexStats(n_entities=n_ent_stat, n_photos=n_photos,
                       n_fact_sentences=n_facts, n_review_sentences=n_reviews)
    return ResponseIndex(city=city, out_dim=out_dim, scale=scale,
                         entity_names=entity_names, candidates=candidates,
                         stats=stats, language=language)
