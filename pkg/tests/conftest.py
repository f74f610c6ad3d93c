"""Shared fixtures: tiny models, a hand-built 3-restaurant city, corpora."""

import numpy as np
import pytest

from polyfind import encoder as enc
from polyfind import featurizer as feat
from polyfind import photos as ph
from polyfind import synthetic
from polyfind.dialogue import Engine, FlowParams
from polyfind.index import build_index

PROBE_UTTERANCES = (
    "sourdough pizza heaven",
    "crispy vegan ramen bowls",
    "perfectly aged ribeye steak",
    "quiet candlelit dining room",
    "do they take credit cards",
)

CITY3_ENTITIES = [
    {
        "entity_id": "t3/alpha",
        "name": "Alpha Trattoria",
        "city": "testville",
        "attributes": {"cuisine": "italian", "price_range": "moderate",
                       "accepts_credit_cards": True},
        "reviews": ["sourdough pizza heaven",
                    "truly sourdough pizza heaven",
                    "the sourdough pizza crust amazed us"],
        "menu_items": ["sourdough pizza"],
        "photo_ids": ["t3/alpha_p0", "t3/alpha_p1"],
    },
    {
        "entity_id": "t3/bravo",
        "name": "Bravo Noodle Bar",
        "city": "testville",
        "attributes": {"cuisine": "japanese", "price_range": "cheap",
                       "accepts_credit_cards": False},
        "reviews": ["crispy vegan ramen bowls",
                    "silky broth with crispy vegan ramen"],
        "menu_items": ["vegan ramen"],
        "photo_ids": ["t3/bravo_p0"],
    },
    {
        "entity_id": "t3/charlie",
        "name": "Charlie Grill",
        "city": "testville",
        "attributes": {"cuisine": "french", "price_range": "expensive",
                       "delivery": True},
        "reviews": ["perfectly aged ribeye steak",
                    "charred ribeye steak worth every penny"],
        "menu_items": ["ribeye steak"],
        "photo_ids": [],
    },
]

CITY3_PHOTO_DIM = 12


def city3_photo_rows():
    rng = np.random.default_rng(77)
    rows = []
    captions = {"t3/alpha_p0": "wood fired sourdough pizza",
                "t3/alpha_p1": None,
                "t3/bravo_p0": "vegan ramen with scallions"}
    for entity in CITY3_ENTITIES:
        for pid in entity["photo_ids"]:
            rows.append({
                "photo_id": pid,
                "entity_id": entity["entity_id"],
                "caption": captions[pid],
                "features": [float(x) for x in
                             rng.standard_normal(CITY3_PHOTO_DIM)],
            })
    return rows


def city3_texts():
    texts = list(PROBE_UTTERANCES)
    for entity in CITY3_ENTITIES:
        texts.append(entity["name"])
        texts.extend(entity["reviews"])
        texts.extend(entity["menu_items"])
        for value in entity["attributes"].values():
            if isinstance(value, str):
                texts.append(value)
        texts.extend(["Start again", "book a table", "tell me about the pasta"])
    for row in city3_photo_rows():
        if row["caption"]:
            texts.append(row["caption"])
    return texts


@pytest.fixture(scope="session")
def city3_vocab():
    return feat.build_vocab(city3_texts(), min_count=1)


@pytest.fixture(scope="session")
def city3_model(city3_vocab):
    # Trained on self-pairs so the context tower agrees with the reply
    # tower on the fixture texts; engine tests rely on that alignment.
    cfg = enc.EncoderConfig(embed_dim=24, hidden_dim=32, hidden_layers=2,
                            out_dim=24, batch_size=8, seed=11,
                            learn_rate=0.5, epochs=150)
    pairs = [(t, t) for t in dict.fromkeys(city3_texts())]
    return enc.train(pairs, cfg, city3_vocab)


@pytest.fixture(scope="session")
def city3_head():
    return ph.PhotoHead.initialize(CITY3_PHOTO_DIM, 24, hidden_dim=16, seed=5)


@pytest.fixture(scope="session")
def city3_paths(tmp_path_factory):
    root = tmp_path_factory.mktemp("city3")
    entities_path = root / "entities.json"
    photos_path = root / "photos.jsonl"
    synthetic.write_city(CITY3_ENTITIES, city3_photo_rows(),
                         entities_path, photos_path)
    return entities_path, photos_path


@pytest.fixture(scope="session")
def city3_index(city3_paths, city3_model, city3_head, city3_vocab):
    entities_path, photos_path = city3_paths
    return build_index(entities_path, photos_path, city3_model, city3_head,
                       city3_vocab)


@pytest.fixture()
def city3_engine(city3_model, city3_vocab, city3_index):
    return Engine(city3_model, city3_vocab, {"testville": city3_index},
                  params=FlowParams(top_n=20, sharpness=5.0, threshold=0.5,
                                    max_display=5))


@pytest.fixture(scope="session")
def tiny_cfg():
    return enc.EncoderConfig(embed_dim=8, hidden_dim=10, hidden_layers=2,
                             out_dim=8, batch_size=4, learn_rate=0.2, seed=3)


@pytest.fixture(scope="session")
def words_vocab():
    corpus = [" ".join(p) for p in synthetic.make_pair_corpus(
        120, n_clusters=4, seed=9)]
    return feat.build_vocab(corpus, min_count=1)
