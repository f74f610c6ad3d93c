"""Operator command line: data prep, training, indexing, serving, eval.

Every command exits nonzero with a single diagnostic line on failure, so
the tool chains cleanly in scripts and CI.
"""

from __future__ import annotations

import configparser
import functools
import importlib.resources
import os
import sys

import click

from . import encoder as enc
from . import featurizer as feat
from . import intent_booking as intents
from . import photos as photomod
from . import reporting
from . import synthetic
from .errors import PolyfindError
from .index import build_index as _build_index
from .index import load_index, save_index
from .multilingual import make_provider


def _fail_cleanly(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (PolyfindError, OSError, ValueError) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(1)
    return wrapper


def _read_corpus_lines(path) -> list[str]:
    """Raw text lines for vocabulary building; TSV fields count separately."""
    texts = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            texts.extend(part for part in line.split("\t") if part)
    return texts


def _encoder_config(config_path, **overrides) -> enc.EncoderConfig:
    values = {}
    if config_path:
        parser = configparser.ConfigParser()
        if not parser.read(config_path):
            raise OSError(f"config file not found: {config_path}")
        if parser.has_section("encoder"):
            section = parser["encoder"]
            for fld in ("embed_dim", "hidden_dim", "hidden_layers", "out_dim",
                        "attention_heads", "batch_size", "epochs", "seed"):
                if fld in section:
                    values[fld] = int(section[fld])
            if "learn_rate" in section:
                values["learn_rate"] = float(section["learn_rate"])
            if "attention_enabled" in section:
                values["attention_enabled"] = section.getboolean(
                    "attention_enabled")
    values.update({k: v for k, v in overrides.items() if v is not None})
    cfg = enc.EncoderConfig(**values)
    cfg.validate()
    return cfg


def _fixture_text(name: str) -> list[str]:
    ref = importlib.resources.files("polyfind") / "fixtures" / name
    return [line for line in ref.read_text(encoding="utf-8").splitlines()
            if line.strip()]


@click.group()
@click.version_option(package_name="polyfind")
def main():
    """Retrieval-based restaurant search and booking engine."""


@main.command("build-vocab")
@click.argument("corpus", type=click.Path(exists=True))
@click.option("-o", "--output", required=True, type=click.Path())
@click.option("--min-count", default=10, show_default=True)
@click.option("--max-bigrams", default=200_000, show_default=True)
@_fail_cleanly
def build_vocab_cmd(corpus, output, min_count, max_bigrams):
    """Count n-grams in CORPUS and freeze a vocabulary file."""
    vocab = feat.build_vocab(_read_corpus_lines(corpus),
                             min_count=min_count, max_bigrams=max_bigrams)
    feat.save_vocab(vocab, output)
    click.echo(f"wrote {output}: {vocab.n_unigrams} unigrams, "
               f"{vocab.n_bigrams} bigrams")


@main.command("train")
@click.argument("corpus", type=click.Path(exists=True))
@click.option("--vocab", "vocab_path", required=True,
              type=click.Path(exists=True))
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("-o", "--output", required=True, type=click.Path())
@click.option("--epochs", type=int)
@click.option("--batch-size", type=int)
@click.option("--learn-rate", type=float)
@click.option("--seed", type=int)
@_fail_cleanly
def train_cmd(corpus, vocab_path, config_path, output, epochs, batch_size,
              learn_rate, seed):
    """Train the dual encoder on tab-separated (context, reply) pairs."""
    vocab = feat.load_vocab(vocab_path)
    cfg = _encoder_config(config_path, epochs=epochs, batch_size=batch_size,
                          learn_rate=learn_rate, seed=seed)
    pairs = synthetic.load_pair_corpus(corpus)
    model = enc.train(pairs, cfg, vocab)
    enc.save_model(model, output)
    click.echo(f"wrote {output}: scale={model.scale:.4f} "
               f"(max {model.scale_max:.4f})")


@main.command("train-photos")
@click.argument("features", type=click.Path(exists=True))
@click.option("--model", "model_path", required=True,
              type=click.Path(exists=True))
@click.option("--vocab", "vocab_path", required=True,
              type=click.Path(exists=True))
@click.option("-o", "--output", required=True, type=click.Path())
@click.option("--epochs", type=int, default=10, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@_fail_cleanly
def train_photos_cmd(features, model_path, vocab_path, output, epochs, seed):
    """Train the photo head against captions, encoder frozen."""
    vocab = feat.load_vocab(vocab_path)
    model = enc.load_model(model_path)
    rows = photomod.load_photo_features(features)
    pairs = [(pf, pf.caption) for pf in rows if pf.caption]
    cfg = photomod.PhotoTrainConfig(epochs=epochs, seed=seed)
    head = photomod.train_photo_head(pairs, model, vocab, cfg)
    photomod.save_photo_head(head, output)
    click.echo(f"wrote {output}: trained on {len(pairs)} captioned photos")


@main.command("train-intents")
@click.option("--fixtures", "fixtures_dir", type=click.Path(exists=True),
              help="Directory with reset_<lang>.txt / booking_<lang>.txt / "
                   "negatives_<lang>.txt; defaults to the shipped fixtures.")
@click.option("--language", default="en", show_default=True)
@click.option("--model", "model_path", required=True,
              type=click.Path(exists=True))
@click.option("--vocab", "vocab_path", required=True,
              type=click.Path(exists=True))
@click.option("-o", "--output-dir", required=True, type=click.Path())
@click.option("--seed", type=int, default=0, show_default=True)
@_fail_cleanly
def train_intents_cmd(fixtures_dir, language, model_path, vocab_path,
                      output_dir, seed):
    """Train reset and booking intent classifiers from paraphrase files."""
    def read(name):
        if fixtures_dir:
            with open(os.path.join(fixtures_dir, name), encoding="utf-8") as fh:
                return [line for line in fh.read().splitlines() if line.strip()]
        return _fixture_text(name)

    resets = read(f"reset_{language}.txt")
    bookings = read(f"booking_{language}.txt")
    negatives = read(f"negatives_{language}.txt")
    vocab = feat.load_vocab(vocab_path)
    model = enc.load_model(model_path)
    cfg = intents.IntentTrainConfig(seed=seed)
    os.makedirs(output_dir, exist_ok=True)
    for name, pos, neg in (("reset", resets, negatives + bookings),
                           ("booking", bookings, negatives + resets)):
        accuracy = intents.cross_validate(name, pos, neg, model, vocab, cfg)
        clf = intents.train_intent(name, pos, neg, model, vocab, cfg)
        path = os.path.join(output_dir, f"{name}.npz")
        intents.save_classifier(clf, path)
        click.echo(f"wrote {path}: leave-4-out accuracy {accuracy:.3f}")


@main.command("build-index")
@click.argument("entities", type=click.Path(exists=True))
@click.argument("photos", type=click.Path(exists=True))
@click.option("--model", "model_path", required=True,
              type=click.Path(exists=True))
@click.option("--head", "head_path", required=True,
              type=click.Path(exists=True))
@click.option("--vocab", "vocab_path", required=True,
              type=click.Path(exists=True))
@click.option("-o", "--output", required=True, type=click.Path())
@click.option("--language", default="en", show_default=True)
@click.option("--provider", "provider_spec", default="identity",
              show_default=True)
@click.option("--approx/--no-approx", default=False, show_default=True,
              help="Also build the approximate-search structure.")
@_fail_cleanly
def build_index_cmd(entities, photos, model_path, head_path, vocab_path,
                    output, language, provider_spec, approx):
    """Encode an entity catalog + photo features into a city index."""
    vocab = feat.load_vocab(vocab_path)
    model = enc.load_model(model_path)
    head = photomod.load_photo_head(head_path)
    provider = make_provider(provider_spec)
    index = _build_index(entities, photos, model, head, vocab,
                         provider=provider, language=language)
    if approx:
        index.build_approx()
    save_index(index, output)
    s = index.stats
    click.echo(f"wrote {output}: {s.n_entities} entities, {s.n_photos} photos, "
               f"{s.n_fact_sentences} facts, {s.n_review_sentences} reviews")


@main.command("serve")
@click.option("--config", "config_path", type=click.Path(exists=True))
@_fail_cleanly
def serve_cmd(config_path):
    """Run the HTTP session service."""
    import uvicorn

    from .service import app_from_config, load_config

    config = load_config(config_path)
    app = app_from_config(config_path)
    uvicorn.run(app, host=config.listen_host, port=config.listen_port)


@main.command("chat")
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--city", "city_arg")
@_fail_cleanly
def chat_cmd(config_path, city_arg):
    """Interactive terminal chat against a configured city."""
    from .service import build_engine, load_config

    config = load_config(config_path)
    engine = build_engine(config)
    city = city_arg or next(iter(engine.cities), None)
    if city is None:
        raise ValueError("no cities configured")
    state = engine.new_session(city, "chat-local")
    click.echo(f"chatting about {city} ({len(state.relevant)} restaurants); "
               f"/quit to exit")
    while True:
        try:
            line = input("> ")
        except EOFError:
            break
        line = line.strip()
        if not line:
            continue
        if line in ("/quit", "/exit"):
            break
        result = engine.step(state, line)
        index = engine.city_index(city)
        for eid, cand, score in result.displayed:
            click.echo(f"  [{index.entity_names[eid]}] ({cand.kind}, "
                       f"{score:.3f}) {cand.text}")
        for cand, score in result.photos:
            click.echo(f"  [photo {cand.photo_ref}] ({score:.3f}) {cand.text}")
        click.echo(f"spoken: {result.spoken}")
        click.echo(f"[{len(result.relevant_after)} remaining, "
                   f"mode={result.mode_after}]")
    click.echo("bye")


@main.command("eval")
@click.option("--corpus", "corpus_path", required=True,
              type=click.Path(exists=True))
@click.option("--vocab", "vocab_path", required=True,
              type=click.Path(exists=True))
@click.option("--model", "model_path", required=True,
              type=click.Path(exists=True))
@click.option("--report-dir", type=click.Path())
@_fail_cleanly
def eval_cmd(corpus_path, vocab_path, model_path, report_dir):
    """Rank held-out pairs and print recall@k as JSON."""
    vocab = feat.load_vocab(vocab_path)
    model = enc.load_model(model_path)
    pairs = synthetic.load_pair_corpus(corpus_path)
    ks = tuple(k for k in reporting.DEFAULT_KS if k <= len(pairs))
    metrics = reporting.recall_at_k(model, vocab, pairs, ks=ks)
    click.echo(reporting.metrics_json(metrics))
    if report_dir:
        written = reporting.write_report(metrics, report_dir)
        for path in written:
            click.echo(f"wrote {path}", err=True)


@main.command("demo-data")
@click.argument("outdir", type=click.Path())
@click.option("--entities", "n_entities", default=12, show_default=True)
@click.option("--photos", "n_photos", default=40, show_default=True)
@click.option("--reviews", "n_reviews", default=120, show_default=True)
@click.option("--pairs", "n_pairs", default=400, show_default=True)
@click.option("--feature-dim", default=64, show_default=True)
@click.option("--seed", default=0, show_default=True)
@_fail_cleanly
def demo_data_cmd(outdir, n_entities, n_photos, n_reviews, n_pairs,
                  feature_dim, seed):
    """Generate a synthetic corpus and city catalog for a local demo."""
    os.makedirs(outdir, exist_ok=True)
    pairs = synthetic.make_pair_corpus(n_pairs, seed=seed)
    synthetic.save_pair_corpus(pairs, os.path.join(outdir, "corpus.tsv"))
    entities, photos = synthetic.make_city(
        "demo", n_entities, n_photos, n_reviews,
        feature_dim=feature_dim, seed=seed)
    synthetic.write_city(entities, photos,
                         os.path.join(outdir, "entities.json"),
                         os.path.join(outdir, "photos.jsonl"))
    click.echo(f"wrote corpus.tsv, entities.json, photos.jsonl under {outdir}")


@main.command("make-chat-corpus")
@click.argument("entities", type=click.Path(exists=True))
@click.argument("photos", type=click.Path(exists=True), required=False)
@click.option("-o", "--output", required=True, type=click.Path())
@click.option("--language", default="en", show_default=True)
@_fail_cleanly
def make_chat_corpus_cmd(entities, photos, output, language):
    """Build the encoder training corpus for a catalog's chat deployment.

    Catalog texts (names, reviews, menu items, attribute values, photo
    captions) become self-pairs so the context tower agrees with the
    reply tower on every searchable text; intent paraphrases pair with
    the system line that answers them, clustering each intent class;
    the negative paraphrases stay self-paired.
    """
    import json

    from .index import load_entities
    from .multilingual import get_templates

    texts: list[str] = []
    for entity in load_entities(entities):
        texts.append(entity.name)
        texts.extend(entity.reviews)
        texts.extend(entity.menu_items)
        texts.extend(v for v in entity.attributes.values()
                     if isinstance(v, str))
    if photos:
        with open(photos, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    caption = json.loads(line).get("caption")
                    if caption:
                        texts.append(caption)

    templates = get_templates(language)
    pairs = [(t, t) for t in dict.fromkeys(texts)]
    pairs += [(t, templates["reset_ack"])
              for t in _fixture_text(f"reset_{language}.txt")]
    pairs += [(t, templates["ask_date"])
              for t in _fixture_text(f"booking_{language}.txt")]
    pairs += [(t, t) for t in _fixture_text(f"negatives_{language}.txt")]
    synthetic.save_pair_corpus(pairs, output)
    click.echo(f"wrote {output}: {len(pairs)} pairs "
               f"({len(dict.fromkeys(texts))} catalog texts)")


@main.command("inspect-index")
@click.argument("index_path", type=click.Path(exists=True))
@_fail_cleanly
def inspect_index_cmd(index_path):
    """Print an index's stats as one JSON line."""
    import json

    index = load_index(index_path)
    s = index.stats
    click.echo(json.dumps({
        "city": index.city, "language": index.language,
        "candidates": len(index), "n_entities": s.n_entities,
        "n_photos": s.n_photos, "n_fact_sentences": s.n_fact_sentences,
        "n_review_sentences": s.n_review_sentences,
    }))


if __name__ == "__main__":
    main()
