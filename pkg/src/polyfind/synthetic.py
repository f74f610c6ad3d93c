"""Deterministic synthetic data for tests, demos and benchmarks.

Everything here is seeded: the same arguments always produce the same
corpus, catalog, or feature file, so tests that freeze expected values
stay stable across runs and platforms.
"""

from __future__ import annotations

import json

import numpy as np

_CUISINES = ("italian", "indian", "thai", "french", "mexican", "japanese",
             "greek", "turkish", "korean", "spanish", "ethiopian", "polish")
_PRICES = ("cheap", "moderate", "expensive")
_STREETS = ("High Street", "Castle Road", "Harbor Lane", "Market Square",
            "Station Way", "Garden Walk", "Bridge Street", "Mill Lane")
_HOURS = ("from 9am to 5pm", "from noon to midnight", "on weekdays",
          "every day", "from 11am to 10pm")
_DISH_HEADS = ("spicy", "grilled", "roasted", "fresh", "smoked", "creamy",
               "crispy", "stuffed", "braised", "marinated")
_DISH_BODIES = ("noodles", "dumplings", "salmon", "lamb", "paneer", "tacos",
                "risotto", "soup", "flatbread", "salad", "curry", "gnocchi")
_REVIEW_OPENERS = ("the", "really", "such", "honestly", "absolutely")
_REVIEW_SUBJECTS = ("service", "atmosphere", "food", "staff", "dessert",
                    "wine list", "portions", "seating", "music", "menu")
_REVIEW_VERBS = ("was", "felt", "seemed", "stayed")
_REVIEW_ADJECTIVES = ("wonderful", "friendly", "slow", "charming", "noisy",
                      "generous", "cozy", "bland", "excellent", "lovely")
_CAPTION_SUBJECTS = ("plate of", "bowl of", "close-up of", "table with",
                     "chef preparing")


def make_pair_corpus(n_pairs: int, n_clusters: int = 20, seed: int = 0,
                     words_per_side: int = 12,
                     words_per_text: tuple[int, int] = (4, 9)):
    """Clustered (context, reply) pairs with disjoint cluster vocabularies.

    Context words and reply words never overlap across clusters, so a
    ranking model only has to learn the cluster mapping; recall against a
    mixed candidate set then measures whether training worked at all.
    """
    rng = np.random.default_rng(seed)
    ctx_banks = [[f"topic{c}ctx{w}" for w in range(words_per_side)]
                 for c in range(n_clusters)]
    rep_banks = [[f"topic{c}rep{w}" for w in range(words_per_side)]
                 for c in range(n_clusters)]
    lo, hi = words_per_text
    pairs = []
    for i in range(n_pairs):
        c = i % n_clusters
        n_ctx = int(rng.integers(lo, hi))
        n_rep = int(rng.integers(lo, hi))
        ctx = " ".join(rng.choice(ctx_banks[c], size=n_ctx))
        rep = " ".join(rng.choice(rep_banks[c], size=n_rep))
        pairs.append((ctx, rep))
    return pairs


def save_pair_corpus(pairs, path) -> None:
    """Write context<TAB>reply lines."""
    with open(path, "w", encoding="utf-8") as fh:
        for ctx, rep in pairs:
            fh.write(f"{ctx}\t{rep}\n")


def load_pair_corpus(path):
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            ctx, _, rep = line.partition("\t")
            pairs.append((ctx, rep))
    return pairs


def _spread(total: int, n_bins: int, rng) -> list[int]:
    """Split ``total`` into ``n_bins`` non-negative counts, exactly."""
    if n_bins == 0:
        return []
    weights = rng.random(n_bins) + 0.1
    raw = np.floor(weights / weights.sum() * total).astype(int)
    short = total - int(raw.sum())
    for i in rng.permutation(n_bins)[:short]:
        raw[i] += 1
    return [int(x) for x in raw]


def _review_sentence(rng) -> str:
    return (f"{rng.choice(_REVIEW_OPENERS)} {rng.choice(_REVIEW_SUBJECTS)} "
            f"{rng.choice(_REVIEW_VERBS)} {rng.choice(_REVIEW_ADJECTIVES)}.")


def _menu_item(rng) -> str:
    return f"{rng.choice(_DISH_HEADS)} {rng.choice(_DISH_BODIES)}"


def make_city(city: str, n_entities: int, n_photos: int, n_reviews: int,
              feature_dim: int = 32, seed: int = 0,
              menu_items_per_entity: int = 3, caption_rate: float = 0.6):
    """Entity catalog + photo feature rows with exact aggregate counts.

    Returns (entities, photos) as plain JSON-ready structures. Photo and
    review totals are distributed across entities pseudo-randomly but sum
    exactly to the requested numbers.
    """
    rng = np.random.default_rng(seed)
    photo_counts = _spread(n_photos, n_entities, rng)
    review_counts = _spread(n_reviews, n_entities, rng)
    entities = []
    photos = []
    for i in range(n_entities):
        eid = f"{city}/e{i:04d}"
        name = f"{_CUISINES[i % len(_CUISINES)].title()} House {i:04d}"
        attributes = {
            "cuisine": str(rng.choice(_CUISINES)),
            "price_range": str(rng.choice(_PRICES)),
            "address": f"{int(rng.integers(1, 200))} {rng.choice(_STREETS)}",
            "opening_hours": str(rng.choice(_HOURS)),
            "accepts_credit_cards": bool(rng.random() < 0.8),
            "accepts_reservations": bool(rng.random() < 0.7),
            "delivery": bool(rng.random() < 0.4),
        }
        reviews = [_review_sentence(rng) for _ in range(review_counts[i])]
        menu = [_menu_item(rng) for _ in range(menu_items_per_entity)]
        entity_photos = []
        for j in range(photo_counts[i]):
            pid = f"{city}/p{i:04d}_{j:03d}"
            entity_photos.append(pid)
            caption = None
            if rng.random() < caption_rate:
                caption = f"{rng.choice(_CAPTION_SUBJECTS)} {_menu_item(rng)}"
            vec = rng.standard_normal(feature_dim)
            photos.append({
                "photo_id": pid,
                "entity_id": eid,
                "caption": caption,
                "features": [round(float(x), 5) for x in vec],
            })
        entities.append({
            "entity_id": eid,
            "name": name,
            "city": city,
            "attributes": attributes,
            "reviews": reviews,
            "menu_items": menu,
            "photo_ids": entity_photos,
        })
    return entities, photos


def write_city(entities, photos, entities_path, photos_path) -> None:
    with open(entities_path, "w", encoding="utf-8") as fh:
        json.dump(entities, fh, indent=1)
    with open(photos_path, "w", encoding="utf-8") as fh:
        for row in photos:
            fh.write(json.dumps(row) + "\n")


def city_corpus(entities) -> list[str]:
    """All raw text of a catalog, for vocabulary building."""
    out = []
    for e in entities:
        out.append(e["name"])
        out.extend(e["reviews"])
        out.extend(e["menu_items"])
        for value in e["attributes"].values():
            if isinstance(value, str):
                out.append(value)
    return out
