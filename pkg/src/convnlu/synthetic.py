"""Small ATIS-flavoured corpus generator for smoke tests and demos.

Writes the same three-file split layout as the real benchmark preparation so
every loader and CLI path can be exercised without the licensed data::

    python -m convnlu.synthetic OUT_DIR [--train 2000 --dev 300 --test 400]
"""

from __future__ import annotations

import argparse
from pathlib import Path

import numpy as np

from .data import RawExample

CITIES = ["boston", "denver", "dallas", "atlanta", "pittsburgh", "baltimore", "oakland", "philadelphia",
          "san francisco", "new york", "salt lake city", "fort worth", "los angeles", "st. louis",
          "washington", "miami", "seattle", "charlotte", "las vegas", "kansas city"]
AIRLINES = ["united", "delta", "american airlines", "continental", "us air", "northwest", "twa",
            "america west", "alaska airlines", "lufthansa"]
DAYS = ["monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday"]
PERIODS = ["morning", "afternoon", "evening", "night"]
CLASSES = ["first class", "coach", "business class", "economy"]
TIMES = ["8 am", "noon", "5 pm", "10 pm", "7 am", "3 pm", "midnight", "6 pm"]
FILLER = ["please", "i", "would", "like", "to", "know", "can", "you", "tell", "me", "show", "list",
          "what", "are", "is", "the", "all", "a", "give", "need", "want", "find"]
CODES = ["ap", "ff", "ea", "qx", "yn", "h", "m", "y"]


def _span(words: str, slot: str) -> list[tuple[str, str]]:
    toks = words.split()
    return [(t, ("B-" if i == 0 else "I-") + slot) for i, t in enumerate(toks)]


def _o(words: str) -> list[tuple[str, str]]:
    return [(t, "O") for t in words.split()]


def _route(rng):
    a, b = rng.choice(len(CITIES), size=2, replace=False)
    parts = _o("from") + _span(CITIES[a], "fromloc.city_name") + _o("to") + _span(CITIES[b], "toloc.city_name")
    if rng.random() < 0.25:  # reversed order: roles must come from context, not position
        parts = _o("to") + _span(CITIES[b], "toloc.city_name") + _o("from") + _span(CITIES[a], "fromloc.city_name")
    return parts


def _when(rng):
    r = rng.random()
    if r < 0.3:
        return _o("on") + _span(DAYS[rng.integers(len(DAYS))], "depart_date.day_name")
    if r < 0.5:
        return (_o("on") + _span(DAYS[rng.integers(len(DAYS))], "depart_date.day_name")
                + _o("in the") + _span(PERIODS[rng.integers(len(PERIODS))], "depart_time.period_of_day"))
    if r < 0.65:
        return _o("arriving") + _o(rng.choice(["before", "after", "at"])) + _span(
            TIMES[rng.integers(len(TIMES))], "arrive_time.time")
    if r < 0.75:
        return _o(rng.choice(["leaving", "departing"])) + _o(rng.choice(["before", "after", "at"])) + _span(
            TIMES[rng.integers(len(TIMES))], "depart_time.time")
    return []


def _lead(rng, k_max=3):
    return _o(" ".join(rng.choice(FILLER, size=rng.integers(0, k_max + 1))))


def _airline(rng):
    return _span(AIRLINES[rng.integers(len(AIRLINES))], "airline_name")


def _flight(rng):
    parts = _lead(rng) + _o(rng.choice(["flights", "flight", "a flight", "the flights"])) + _route(rng) + _when(rng)
    if rng.random() < 0.2:
        parts += _o("on") + _airline(rng)
    if rng.random() < 0.1:
        parts += _o("in") + _span(CLASSES[rng.integers(len(CLASSES))], "class_type")
    if rng.random() < 0.1:
        parts = _span("round trip", "round_trip") + parts
    return "atis_flight", parts


def _airfare(rng):
    head = rng.choice(["how much is", "what is the fare for", "cheapest fare", "the cost of", "fares for"])
    parts = _o(head) + _o(rng.choice(["a flight", "flights", "a ticket", ""])) + _route(rng)
    if rng.random() < 0.3:
        parts = _span("cheapest", "cost_relative") + parts
    if rng.random() < 0.3:
        parts += _o("in") + _span(CLASSES[rng.integers(len(CLASSES))], "class_type")
    return "atis_airfare", parts


def _ground(rng):
    head = rng.choice(["ground transportation", "what ground transportation is available", "limousine service",
                       "car rental", "how do i get downtown"])
    return "atis_ground_service", _lead(rng, 2) + _o(head) + _o("in") + _span(CITIES[rng.integers(len(CITIES))],
                                                                               "city_name")


def _airline_q(rng):
    head = rng.choice(["which airlines fly", "what airlines have flights", "airlines that fly", "list airlines"])
    return "atis_airline", _o(head) + _route(rng)


def _abbrev(rng):
    head = rng.choice(["what does", "what is", "explain"])
    code = CODES[rng.integers(len(CODES))]
    tail = rng.choice(["mean", "stand for", ""])
    return "atis_abbreviation", _o(head) + _span(code, rng.choice(["fare_basis_code", "airline_code"])) + _o(tail)


def _flight_time(rng):
    head = rng.choice(["what time does the", "when does the", "schedule of the", "departure times for the"])
    parts = _o(head) + _airline(rng) + _o("flight") + _route(rng) + _o(rng.choice(["leave", "arrive", ""]))
    return "atis_flight_time", parts


def _quantity(rng):
    head = rng.choice(["how many flights does", "how many", "number of flights on"])
    return "atis_quantity", _o(head) + _airline(rng) + _o(rng.choice(["have", "fly", ""])) + _route(rng)


GENERATORS = [(_flight, 0.62), (_airfare, 0.1), (_ground, 0.07), (_airline_q, 0.06), (_abbrev, 0.05),
              (_flight_time, 0.06), (_quantity, 0.04)]


def make_example(rng: np.random.Generator, intent_noise: float = 0.02) -> RawExample:
    weights = np.array([w for _, w in GENERATORS])
    gen = GENERATORS[rng.choice(len(GENERATORS), p=weights / weights.sum())][0]
    intent, parts = gen(rng)
    if rng.random() < intent_noise:
        intent = GENERATORS[rng.integers(len(GENERATORS))][0](rng)[0]
    tokens = [t for t, _ in parts]
    tags = [g for _, g in parts]
    return RawExample(tokens, tags, intent)


def make_corpus(n_train: int = 2000, n_dev: int = 300, n_test: int = 400, seed: int = 0,
                intent_noise: float = 0.02) -> dict[str, list[RawExample]]:
    rng = np.random.default_rng(seed)
    return {name: [make_example(rng, intent_noise) for _ in range(n)]
            for name, n in (("train", n_train), ("dev", n_dev), ("test", n_test))}


def write_split(directory, examples) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / "seq.in", "w", encoding="utf-8") as fin, \
            open(directory / "seq.out", "w", encoding="utf-8") as fout, \
            open(directory / "label", "w", encoding="utf-8") as flab:
        for ex in examples:
            fin.write(" ".join(ex.tokens) + "\n")
            fout.write(" ".join(ex.slot_tags) + "\n")
            flab.write(ex.intent + "\n")


def write_corpus(root, splits) -> Path:
    root = Path(root)
    for name, examples in splits.items():
        write_split(root / name, examples)
    return root


def write_vectors(path, tokens, dim: int, seed: int = 0) -> None:
    """Random text-format word vectors for ``tokens`` (stand-in for a pre-trained file)."""
    rng = np.random.default_rng(seed)
    with open(path, "w", encoding="utf-8") as fh:
        for tok in tokens:
            fh.write(tok + " " + " ".join(f"{v:.6f}" for v in rng.normal(0, 0.5, size=dim)) + "\n")


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description="write a synthetic ATIS-style corpus")
    ap.add_argument("out")
    ap.add_argument("--train", type=int, default=2000)
    ap.add_argument("--dev", type=int, default=300)
    ap.add_argument("--test", type=int, default=400)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--vectors", metavar="FILE", help="also write random word vectors for the corpus tokens")
    ap.add_argument("--dim", type=int, default=100)
    args = ap.parse_args(argv)
    splits = make_corpus(args.train, args.dev, args.test, args.seed)
    write_corpus(args.out, splits)
    if args.vectors:
        tokens = dict.fromkeys(t for ex in splits["train"] for t in ex.tokens)
        write_vectors(args.vectors, tokens, args.dim, args.seed)


if __name__ == "__main__":
    main()
