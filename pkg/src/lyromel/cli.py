"""Command-line pipeline: build-dataset, train-embeddings, train, generate, evaluate, baseline.

Every option can also come from an INI file passed with ``--config``. Keys
live in a section named after the subcommand (``[train]``) or in
``[DEFAULT]``; command-line flags win. All outputs are written atomically and
depend only on inputs, options and ``--seed``.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import io
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import data
from .checkpoint import CheckpointError, atomic_write_bytes
from .data import NoteTriplet, SEQ_LEN

log = logging.getLogger("lyromel")

THREADS_ENV = "LYROMEL_THREADS"
GENERATE_RNG_STREAM = 3


class CliError(Exception):
    """A user-facing failure; the message is printed and the exit status is 2."""


# ----------------------------------------------------------------------------
# small helpers


def _json_bytes(obj) -> bytes:
    return (json.dumps(obj, indent=1, sort_keys=True) + "\n").encode("utf-8")


def _csv_bytes(header: list[str], rows) -> bytes:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue().encode("utf-8")


def _existing(path, what: str) -> Path:
    path = Path(path)
    if not path.exists():
        raise CliError(f"{what} not found: {path}")
    return path


def _triplet_list(notes) -> list[list[float]]:
    return [[int(n[0]), float(n[1]), float(n[2])] for n in notes]


def _load_split(dataset_dir: Path):
    dataset = data.load_dataset(_existing(dataset_dir / "dataset.jsonl", "dataset"))
    manifest = json.loads(_existing(dataset_dir / "split.json", "split manifest").read_text())
    return dataset, data.split_from_manifest(dataset, manifest)


def _model_path(path) -> Path:
    path = Path(path)
    if path.is_dir():
        path = path / "best.ckpt"
    return _existing(path, "model checkpoint")


def _load_model(path):
    from .gan import load_model

    try:
        return load_model(_model_path(path))
    except CheckpointError as exc:
        raise CliError(f"cannot read checkpoint {path}: {exc}") from exc


def parse_syllable_text(text: str) -> list[tuple[str, str]]:
    """Pre-tokenised syllables, e.g. ``"twin- kle lit- tle star"``.

    A trailing hyphen joins a syllable to the next one of the same word.
    """
    pairs, pending = [], []
    for raw in text.split():
        syl = data.clean_syllable(raw.rstrip("-"))
        if not syl:
            continue
        pending.append(syl)
        if not raw.endswith("-"):
            word = "".join(pending)
            pairs.extend((word, s) for s in pending)
            pending = []
    if pending:
        word = "".join(pending)
        pairs.extend((word, s) for s in pending)
    return pairs


def fit_syllables(pairs: list[tuple[str, str]], length: int = SEQ_LEN):
    """Pad by repeating the last syllable or truncate to ``length``.

    Returns ``(pairs, policy)`` with policy one of "exact", "padded",
    "truncated".
    """
    if not pairs:
        raise CliError("lyrics contain no syllables")
    if len(pairs) == length:
        return list(pairs), "exact"
    if len(pairs) > length:
        log.warning("lyrics have %d syllables; keeping the first %d", len(pairs), length)
        return list(pairs[:length]), "truncated"
    log.warning("lyrics have %d syllables; repeating the last one to reach %d", len(pairs), length)
    return list(pairs) + [pairs[-1]] * (length - len(pairs)), "padded"


def finalize_melody(raw) -> tuple[list[NoteTriplet], list[NoteTriplet], str]:
    """Tuned and quantize-only versions of one raw melody, plus the scale name.

    The first note's rest is set to 0: a song's opening rest is not
    measured in the data, so a file starting with silence would not
    round-trip.
    """
    from .tuning import quantize_sequence, tune

    tuned, scale = tune(raw)
    quantized = quantize_sequence(raw)
    tuned[0] = tuned[0]._replace(rest=0.0)
    quantized[0] = quantized[0]._replace(rest=0.0)
    return tuned, quantized, str(scale)


# ----------------------------------------------------------------------------
# commands


def cmd_build_dataset(args) -> int:
    in_dir = _existing(args.input, "input directory")
    out = Path(args.out)
    songs, failures = data.scan_midi_dir(in_dir)
    if not songs:
        lines = [f"no parseable lyric MIDI files in {in_dir} (parsed 0, failed {len(failures)})"]
        lines += [f"  {path}: {reason}" for path, reason in failures]
        raise CliError("\n".join(lines))
    sequences = []
    corpus = []
    for rel, song in songs:
        sequences.extend(data.extract_sequences(song, rel))
        corpus.append({"source": rel, "sentences": [[list(p) for p in s] for s in data.lyric_sentences(song)]})
    if not sequences:
        raise CliError(f"parsed {len(songs)} files but none has {SEQ_LEN} or more lyric notes")
    if len(sequences) >= 10:
        split = data.split_dataset(sequences, args.seed)
    else:
        log.warning("only %d sequences; all go to the training split", len(sequences))
        split = data.DatasetSplit(list(sequences), [], [])
    hist = data.compute_histograms(sequences)

    data.save_dataset(out / "dataset.jsonl", sequences)
    atomic_write_bytes(out / "split.json", _json_bytes({"seed": args.seed, **data.split_manifest(split)}))
    atomic_write_bytes(out / "histograms.json", _json_bytes(hist.to_json()))
    atomic_write_bytes(out / "lyrics.jsonl", data.dumps_jsonl(corpus))
    atomic_write_bytes(out / "failures.json", _json_bytes([{"path": p, "reason": r} for p, r in failures]))
    print(f"{len(sequences)} sequences from {len(songs)} files "
          f"({len(failures)} skipped); split {len(split.train)}/{len(split.validation)}/{len(split.test)}")
    return 0


def cmd_train_embeddings(args) -> int:
    from .embedding import lexicon_from_pairs, save_tables, train_skipgram

    path = _existing(Path(args.dataset) / "lyrics.jsonl", "lyrics corpus")
    sentences = []
    for line in path.read_text(encoding="utf-8").splitlines():
        if line.strip():
            sentences.extend([tuple(p) for p in s] for s in json.loads(line)["sentences"])
    if not sentences:
        raise CliError(f"{path} has no lyrics")
    opts = dict(dim=args.dim, window=args.window, negative=args.negative, neg_alpha=args.neg_alpha,
                lr0=args.lr0, lr_min=args.lr_min, lr_decay=args.lr_decay, epochs=args.epochs)
    words = train_skipgram([[w for w, _ in s] for s in sentences], seed=args.seed, **opts)
    sylls = train_skipgram([[x for _, x in s] for s in sentences], seed=args.seed + 1, **opts)
    lexicon = lexicon_from_pairs(p for s in sentences for p in s)
    save_tables(args.out, words, sylls, lexicon)
    print(f"{len(words)} words, {len(sylls)} syllables, {len(lexicon)} lexicon entries")
    return 0


def cmd_train(args) -> int:
    from .embedding import load_tables
    from .gan import TrainConfig, train

    _, split = _load_split(Path(args.dataset))
    word_table, syll_table, _ = load_tables(_existing(args.embeddings, "embedding directory"))
    config = TrainConfig(epochs=args.epochs, batch=args.batch, hidden=args.hidden, lr0=args.lr0,
                         lr_decay=args.lr_decay, keep_checkpoints=args.keep_checkpoints,
                         scale_attributes=not args.no_attribute_scaling, mmd_on_tuned=not args.mmd_raw)

    def report(r):
        log.info("epoch %d lr %.5f loss_d %.4f loss_g %.4f mmd2 %.5f",
                 r.epoch, r.lr, r.loss_d, r.loss_g, r.mmd2)

    try:
        result = train(split, word_table, syll_table, config, seed=args.seed,
                       out_dir=args.out, log=report)
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    print(f"best epoch {result.best_epoch} (mmd2 {result.best.mmd2:.5f})")
    return 0


def _lyric_pairs(args, syllabifier) -> list[tuple[str, str]]:
    from .embedding import tokenize

    given = [x for x in (args.lyrics, args.lyrics_file, args.syllables) if x is not None]
    if len(given) != 1:
        raise CliError("give exactly one of --lyrics, --lyrics-file, --syllables")
    if args.syllables is not None:
        return parse_syllable_text(args.syllables)
    text = args.lyrics if args.lyrics is not None else _existing(args.lyrics_file, "lyrics file").read_text()
    return [(w.text, s.text) for w, s in tokenize(text, syllabifier)]


def cmd_generate(args) -> int:
    from .embedding import embed_sequence, load_tables
    from .gan import generate

    g, _, meta = _load_model(args.model)
    word_table, syll_table, syllabifier = load_tables(_existing(args.embeddings, "embedding directory"))
    pairs, policy = fit_syllables(_lyric_pairs(args, syllabifier))
    if args.count < 1:
        raise CliError("--count must be at least 1")
    embeds = np.repeat(embed_sequence(pairs, word_table, syll_table)[None], args.count, axis=0)
    rng = np.random.default_rng([args.seed, GENERATE_RNG_STREAM])
    raw = generate(g, embeds, rng, np.asarray(meta["attribute_scale"]))

    out = Path(args.out)
    for i in range(args.count):
        tuned, quantized, scale = finalize_melody(raw[i])
        stem = f"melody_{i:03d}"
        atomic_write_bytes(out / f"{stem}.mid", data.melody_to_midi(tuned, pairs))
        if args.emit_raw:
            atomic_write_bytes(out / f"{stem}.quantized.mid", data.melody_to_midi(quantized, pairs))
        dump = {
            "syllables": [list(p) for p in pairs],
            "lyrics_policy": policy,
            "scale": scale,
            "bpm": data.WRITE_BPM,
            "raw": [[float(v) for v in row] for row in raw[i]],
            "quantized": _triplet_list(quantized),
            "tuned": _triplet_list(tuned),
        }
        atomic_write_bytes(out / f"{stem}.json", _json_bytes(dump))
    print(f"wrote {args.count} melodies to {out}")
    return 0


def cmd_evaluate(args) -> int:
    from .embedding import embed_sequence, load_tables
    from .evaluation import (
        METRIC_NAMES,
        conditioning_distance,
        mmd2_unbiased,
        music_metrics,
        sample_baseline,
        summarize,
        transition_distribution,
    )
    from .gan import generate

    g, _, meta = _load_model(args.model)
    dataset_dir = Path(args.dataset)
    _, split = _load_split(dataset_dir)
    if not split.test:
        raise CliError("test split is empty")
    hist = data.AttributeHistograms.from_json(
        json.loads(_existing(dataset_dir / "histograms.json", "histograms").read_text()))
    word_table, syll_table, _ = load_tables(_existing(args.embeddings, "embedding directory"))

    scale = np.asarray(meta["attribute_scale"])
    embeds = np.stack([embed_sequence(s.syllables, word_table, syll_table) for s in split.test])
    raw = generate(g, embeds, np.random.default_rng([args.seed, GENERATE_RNG_STREAM]), scale)
    finals = [finalize_melody(r) for r in raw]
    truth = [list(s.notes) for s in split.test]
    sets = {
        "ground_truth": truth,
        "model": [f[0] for f in finals],
        "model_quantized": [f[1] for f in finals],
        "baseline": sample_baseline(hist, len(truth), args.seed),
    }

    metrics = {name: music_metrics(seqs).as_dict() for name, seqs in sets.items()}
    transitions = {name: transition_distribution(seqs) for name, seqs in sets.items()}
    conditioning = {}
    cond_rows = []
    for column, attr in ((1, "duration"), (2, "rest")):
        d = np.array([[n[column] for n in s] for s in truth])
        gm = np.array([[n[column] for n in s] for s in sets["model"]])
        res = conditioning_distance(d, gm, samples=args.samples, seed=args.seed)
        conditioning[attr] = {"d": res["d"], **{k: summarize(res[k]) for k in ("rs", "rn", "rns")}}
        cond_rows.extend((attr, k, i, repr(float(v)))
                         for k in ("rs", "rn", "rns") for i, v in enumerate(res[k]))

    mmd = None
    if len(truth) >= 2:
        mmd = {name: mmd2_unbiased(np.array(seqs, dtype=float) / scale, np.array(truth, dtype=float) / scale,
                                   sigma=args.mmd_sigma)
               for name, seqs in sets.items() if name != "ground_truth"}

    out = Path(args.out)
    report = {
        "test_size": len(truth),
        "seed": args.seed,
        "metrics": metrics,
        "transitions": {k: {str(d): p for d, p in v.items()} for k, v in transitions.items()},
        "conditioning": conditioning,
        "mmd2": mmd,
    }
    atomic_write_bytes(out / "report.json", _json_bytes(report))
    atomic_write_bytes(out / "metrics.csv", _csv_bytes(
        ["set", *METRIC_NAMES], [[name, *(repr(m[k]) for k in METRIC_NAMES)] for name, m in metrics.items()]))
    atomic_write_bytes(out / "transitions.csv", _csv_bytes(
        ["set", "interval", "probability"],
        [[name, d, repr(p)] for name, dist in transitions.items() for d, p in dist.items()]))
    atomic_write_bytes(out / "conditioning.csv", _csv_bytes(["attribute", "shuffle", "sample", "distance"], cond_rows))
    atomic_write_bytes(out / "generated.jsonl", data.dumps_jsonl(
        {"source_id": s.source_id, "tuned": _triplet_list(f[0]), "quantized": _triplet_list(f[1]), "scale": f[2]}
        for s, f in zip(split.test, finals)))
    print(f"evaluated {len(truth)} test lyrics; report in {out / 'report.json'}")
    return 0


def cmd_baseline(args) -> int:
    from .evaluation import histogram_expectations, music_metrics, sample_baseline

    path = _existing(Path(args.dataset) / "histograms.json", "histograms")
    hist = data.AttributeHistograms.from_json(json.loads(path.read_text()))
    if args.count < 1:
        raise CliError("--count must be at least 1")
    seqs = sample_baseline(hist, args.count, args.seed)
    out = Path(args.out)
    atomic_write_bytes(out / "baseline.jsonl", data.dumps_jsonl({"notes": _triplet_list(s)} for s in seqs))
    atomic_write_bytes(out / "baseline_metrics.json", _json_bytes({
        "count": args.count,
        "seed": args.seed,
        "metrics": music_metrics(seqs).as_dict(),
        "expected": histogram_expectations(hist),
    }))
    print(f"wrote {args.count} baseline melodies to {out}")
    return 0


# ----------------------------------------------------------------------------
# argument parsing


def _add(p, *flags, **kw):
    p.add_argument(*flags, **kw)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lyromel", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="INI file with per-command option defaults")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-dataset", help="parse a MIDI directory into aligned sequences")
    _add(p, "--in", dest="input", help="directory of lyric MIDI files")
    _add(p, "--out", help="output directory")
    _add(p, "--seed", type=int)
    p.set_defaults(func=cmd_build_dataset, required_opts=("input", "out", "seed"))

    p = sub.add_parser("train-embeddings", help="skip-gram tables for words and syllables")
    _add(p, "--dataset", help="build-dataset output directory")
    _add(p, "--out")
    _add(p, "--seed", type=int)
    _add(p, "--dim", type=int, default=10)
    _add(p, "--window", type=int, default=7)
    _add(p, "--negative", type=int, default=5)
    _add(p, "--neg-alpha", type=float, default=0.75)
    _add(p, "--lr0", type=float, default=0.03)
    _add(p, "--lr-min", type=float, default=0.0007)
    _add(p, "--lr-decay", type=float, default=0.8)
    _add(p, "--epochs", type=int, default=None, help="default: until the rate reaches --lr-min")
    p.set_defaults(func=cmd_train_embeddings, required_opts=("dataset", "out", "seed"))

    p = sub.add_parser("train", help="adversarial training with MMD epoch selection")
    _add(p, "--dataset")
    _add(p, "--embeddings", help="train-embeddings output directory")
    _add(p, "--out", help="run directory for checkpoints")
    _add(p, "--seed", type=int)
    _add(p, "--epochs", type=int, default=400)
    _add(p, "--batch", type=int, default=32)
    _add(p, "--hidden", type=int, default=400)
    _add(p, "--lr0", type=float, default=0.1)
    _add(p, "--lr-decay", type=float, default=0.995)
    _add(p, "--keep-checkpoints", choices=("all", "best"), default="all")
    _add(p, "--mmd-raw", action="store_true", help="select epochs by MMD on untuned output")
    _add(p, "--no-attribute-scaling", action="store_true",
         help="feed raw MIDI/beat values to the networks instead of dividing by (127, 32, 32)")
    p.set_defaults(func=cmd_train, required_opts=("dataset", "embeddings", "out", "seed"))

    p = sub.add_parser("generate", help="melodies for one lyric as MIDI + JSON")
    _add(p, "--model", help="checkpoint file or run directory")
    _add(p, "--embeddings")
    _add(p, "--lyrics", help="lyrics text")
    _add(p, "--lyrics-file")
    _add(p, "--syllables", help="pre-split syllables; trailing '-' continues a word")
    _add(p, "--count", type=int, default=1)
    _add(p, "--out")
    _add(p, "--seed", type=int)
    _add(p, "--emit-raw", action="store_true",
         help="also write the quantized-only (not scale-constrained) melody as MIDI")
    p.set_defaults(func=cmd_generate, required_opts=("model", "embeddings", "out", "seed"))

    p = sub.add_parser("evaluate", help="metrics, transitions, conditioning and MMD on the test split")
    _add(p, "--model")
    _add(p, "--embeddings")
    _add(p, "--dataset")
    _add(p, "--out")
    _add(p, "--seed", type=int)
    _add(p, "--samples", type=int, default=10_000, help="shuffles per conditioning distribution")
    _add(p, "--mmd-sigma", type=float, default=None, help="fixed kernel width (default: from the data)")
    p.set_defaults(func=cmd_evaluate, required_opts=("model", "embeddings", "dataset", "out", "seed"))

    p = sub.add_parser("baseline", help="histogram-sampled baseline melodies")
    _add(p, "--dataset")
    _add(p, "--count", type=int, default=1394)
    _add(p, "--out")
    _add(p, "--seed", type=int)
    p.set_defaults(func=cmd_baseline, required_opts=("dataset", "out", "seed"))
    return parser


def _config_defaults(path: str, command: str, subparser: argparse.ArgumentParser) -> dict:
    cfg = configparser.ConfigParser()
    if not cfg.read(_existing(path, "config file")):
        raise CliError(f"cannot read config file {path}")
    section = cfg[command] if cfg.has_section(command) else cfg.defaults()
    # keys may name the flag ("in", "lr-min") or its destination ("lr_min")
    actions = {}
    for a in subparser._actions:
        if a.dest == "help":
            continue
        actions[a.dest] = a
        for flag in a.option_strings:
            actions[flag.lstrip("-").replace("-", "_")] = a
    out = {}
    for key, value in section.items():
        action = actions.get(key.replace("-", "_"))
        if action is None:
            raise CliError(f"{path}: unknown option {key!r} for {command}")
        dest = action.dest
        if isinstance(action, argparse._StoreTrueAction):
            out[dest] = value.strip().lower() in ("1", "true", "yes", "on")
        else:
            try:
                out[dest] = action.type(value) if action.type else value
            except ValueError as exc:
                raise CliError(f"{path}: bad value for {key}: {value!r}") from exc
    return out


def _subparser(parser: argparse.ArgumentParser, command: str) -> argparse.ArgumentParser:
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices[command]
    raise AssertionError("parser has no subcommands")


def _limit_threads():
    value = os.environ.get(THREADS_ENV)
    if not value:
        return None
    try:
        n = int(value)
    except ValueError:
        raise CliError(f"{THREADS_ENV} must be an integer, got {value!r}") from None
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=max(n, 1))


def main(argv=None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parser.parse_args(argv)
        if args.config:
            sub = _subparser(parser, args.command)
            sub.set_defaults(**_config_defaults(args.config, args.command, sub))
            args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(message)s", stream=sys.stderr)
        missing = [o for o in args.required_opts if getattr(args, o) is None]
        if missing:
            flags = ["--in" if m == "input" else "--" + m.replace("_", "-") for m in missing]
            raise CliError("missing required option(s): " + ", ".join(flags))
        limiter = _limit_threads()
        try:
            return args.func(args)
        finally:
            if limiter is not None:
                limiter.restore_original_limits()
    except CliError as exc:
        print(f"lyromel: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
