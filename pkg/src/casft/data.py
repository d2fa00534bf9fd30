"""Cascade records: parsing, observation prefixes, graphs, labels and splits."""
from __future__ import annotations

import io
import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence, TextIO

import numpy as np

logger = logging.getLogger(__name__)


class CascadeParseError(ValueError):
    """Raised for a malformed line; carries the 1-based line number."""

    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


class EmptyObservationError(ValueError):
    pass


@dataclass(frozen=True)
class RetweetEvent:
    source_user: str
    target_user: str
    time: float

    @property
    def is_root(self) -> bool:
        return self.source_user == self.target_user


@dataclass(frozen=True)
class Cascade:
    """One item's full resharing record.

    ``events[0]`` is always the root self-event ``(root, root, 0.0)``; every
    later event is a retweet edge ``source -> target``.
    """

    cascade_id: str
    root_user: str
    events: tuple[RetweetEvent, ...]

    def __post_init__(self):
        if not self.events or not self.events[0].is_root or self.events[0].time != 0.0:
            raise ValueError(f"cascade {self.cascade_id}: first event must be the root at t=0")
        times = [e.time for e in self.events]
        if any(b < a for a, b in zip(times, times[1:])):
            raise ValueError(f"cascade {self.cascade_id}: events not sorted by time")

    @classmethod
    def from_edges(cls, cascade_id: str, root: str, edges: Iterable[tuple[str, str, float]]) -> "Cascade":
        """Build from retweet triplets already relative to the root post (stable sort by time)."""
        evs = sorted((RetweetEvent(str(s), str(d), float(t)) for s, d, t in edges), key=lambda e: e.time)
        return cls(str(cascade_id), str(root), (RetweetEvent(str(root), str(root), 0.0), *evs))

    @property
    def times(self) -> np.ndarray:
        return np.array([e.time for e in self.events], dtype=float)

    def observed(self, t_o: float) -> tuple[RetweetEvent, ...]:
        """The prefix C(t_o): events with time <= t_o (root included)."""
        return tuple(e for e in self.events if e.time <= t_o)


@dataclass(frozen=True)
class CascadeGraph:
    nodes: tuple[str, ...]
    edges: tuple[tuple[str, str], ...]


@dataclass
class GlobalGraph:
    nodes: tuple[str, ...]
    # (source, target) -> multiplicity across cascades
    edges: dict[tuple[str, str], int]


@dataclass(frozen=True)
class CascadeSequence:
    users: tuple[str, ...]
    times: tuple[float, ...]

    def __len__(self):
        return len(self.users)


@dataclass(frozen=True)
class LabeledSample:
    cascade_id: str
    observation_time: float
    prediction_time: float
    incremental_popularity: int
    segment_targets: tuple[int, ...]
    n_observed: int = 0  # distinct participants in S(t_o), root included


@dataclass
class DatasetSplit:
    train: list = field(default_factory=list)
    val: list = field(default_factory=list)
    test: list = field(default_factory=list)
    seed: int = 0
    min_observed: int = 10
    ratios: tuple[float, float, float] = (0.70, 0.15, 0.15)

    def manifest(self) -> dict:
        return {
            "seed": self.seed,
            "min_observed": self.min_observed,
            "ratios": list(self.ratios),
            "train": [s.cascade_id for s in self.train],
            "val": [s.cascade_id for s in self.val],
            "test": [s.cascade_id for s in self.test],
        }

    def write_manifest(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.manifest(), fh, indent=1)


# ---------------------------------------------------------------------------
# parsing / serialization


def _rebased(cid, root, raw_events) -> tuple[Cascade, int]:
    """Sort (stable), rebase to the root time, and make sure a root self-event leads."""
    order = sorted(range(len(raw_events)), key=lambda i: raw_events[i][2])
    n_repaired = int(order != list(range(len(raw_events))))
    evs = [raw_events[i] for i in order]
    root_idx = next((i for i, (s, d, _) in enumerate(evs) if s == d == root), None)
    if root_idx is not None:
        t0 = evs[root_idx][2]
        evs.pop(root_idx)
    else:
        t0 = evs[0][2] if evs else 0.0
    edges = [(s, d, t - t0) for s, d, t in evs]
    if any(t < 0 for _, _, t in edges):
        raise ValueError("event precedes the root post")
    return Cascade.from_edges(cid, root, edges), n_repaired


def _parse_jsonl_line(line: str):
    obj = json.loads(line)
    root = str(obj["root_user"])
    raw = [(str(s), str(d), float(t)) for s, d, t in obj["events"]]
    return str(obj["cascade_id"]), root, raw


def _parse_tsv_line(line: str):
    parts = line.rstrip("\n").split("\t")
    if len(parts) < 5:
        raise ValueError(f"expected 5 tab-separated fields, got {len(parts)}")
    cid, root = parts[0], parts[1]
    raw = []
    for token in parts[4].split():
        path, _, t = token.rpartition(":")
        if not path:
            raise ValueError(f"bad path token {token!r}")
        users = path.split("/")
        if len(users) == 1:
            src = dst = users[0]
        else:
            src, dst = users[-2], users[-1]
        raw.append((src, dst, float(t)))
    if not any(s == d == root for s, d, _ in raw):
        # TSV times are offsets from the post; the root event sits at 0
        raw.insert(0, (root, root, 0.0))
    return cid, root, raw


class ParseStats:
    def __init__(self):
        self.repaired = 0


def parse_cascades(source: TextIO | str, format: str = "jsonl", stats: ParseStats | None = None) -> list[Cascade]:
    """Read cascades from ``source`` (a text stream or a string).

    ``format`` is ``"jsonl"`` or ``"deephawkes_tsv"`` (alias ``"deephawkes"``).
    Out-of-order events are sorted and counted in ``stats.repaired``.
    """
    if isinstance(source, str):
        source = io.StringIO(source)
    if format == "jsonl":
        parse_line = _parse_jsonl_line
    elif format in ("deephawkes_tsv", "deephawkes", "tsv"):
        parse_line = _parse_tsv_line
    else:
        raise ValueError(f"unknown cascade format {format!r}")
    stats = stats if stats is not None else ParseStats()
    out = []
    for lineno, line in enumerate(source, start=1):
        if not line.strip():
            continue
        try:
            cid, root, raw = parse_line(line)
            cascade, repaired = _rebased(cid, root, raw)
        except (ValueError, KeyError, TypeError) as exc:
            raise CascadeParseError(lineno, str(exc)) from exc
        stats.repaired += repaired
        out.append(cascade)
    if stats.repaired:
        logger.warning("sorted %d cascades with non-monotone timestamps", stats.repaired)
    return out


def load_cascades(path, format: str = "jsonl") -> list[Cascade]:
    with open(path, encoding="utf-8") as fh:
        return parse_cascades(fh, format)


def cascade_to_json(c: Cascade) -> str:
    events = [[e.source_user, e.target_user, e.time] for e in c.events]
    return json.dumps({"cascade_id": c.cascade_id, "root_user": c.root_user, "events": events})


def write_cascades(cascades: Iterable[Cascade], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for c in cascades:
            fh.write(cascade_to_json(c) + "\n")


# ---------------------------------------------------------------------------
# observation-time views


def _observed_or_raise(c: Cascade, t_o: float):
    if t_o <= 0:
        raise ValueError("observation time must be positive")
    obs = c.observed(t_o)
    if len(obs) <= 1:
        raise EmptyObservationError(f"empty observation: cascade {c.cascade_id} has no events within t_o={t_o}")
    return obs


def build_cascade_graph(c: Cascade, t_o: float) -> CascadeGraph:
    obs = _observed_or_raise(c, t_o)
    nodes = list(dict.fromkeys(u for e in obs for u in (e.source_user, e.target_user)))
    edges = tuple((e.source_user, e.target_user) for e in obs if not e.is_root)
    return CascadeGraph(tuple(nodes), edges)


def build_cascade_sequence(c: Cascade, t_o: float) -> CascadeSequence:
    obs = _observed_or_raise(c, t_o)
    return CascadeSequence(tuple(e.target_user for e in obs), tuple(e.time for e in obs))


def build_global_graph(cascades: Sequence[Cascade], t_o: float) -> GlobalGraph:
    if not cascades:
        raise ValueError("global graph needs at least one cascade")
    nodes: dict[str, None] = {}
    edges: Counter = Counter()
    for c in cascades:
        obs = c.observed(t_o)
        for e in obs:
            nodes.setdefault(e.source_user)
            nodes.setdefault(e.target_user)
            if not e.is_root:
                edges[(e.source_user, e.target_user)] += 1
    return GlobalGraph(tuple(nodes), dict(edges))


def segment_bounds(t_o: float, t_p: float, l: int) -> np.ndarray:
    """The l+1 uniform boundaries t_o = t_s0 < ... < t_sl = t_p."""
    b = t_o + (t_p - t_o) * np.arange(l + 1) / l
    b[-1] = t_p
    return b


def label_sample(c: Cascade, t_o: float, t_p: float, l: int) -> LabeledSample:
    """Incremental popularity over (t_o, t_p] and its l-segment breakdown.

    Segments are left-open, right-closed.
    """
    if not 0 < t_o < t_p:
        raise ValueError("need 0 < t_o < t_p")
    if l < 1:
        raise ValueError("need l >= 1")
    times = c.times
    future = times[(times > t_o) & (times <= t_p)]
    bounds = segment_bounds(t_o, t_p, l)
    idx = np.searchsorted(bounds, future, side="left") - 1
    y = np.bincount(idx, minlength=l)[:l]
    n_obs = len({e.target_user for e in c.observed(t_o)})
    return LabeledSample(c.cascade_id, float(t_o), float(t_p), int(len(future)), tuple(int(v) for v in y), n_obs)


def filter_and_split(samples: Sequence[LabeledSample], min_observed: int = 10,
                     ratios: Sequence[float] = (0.70, 0.15, 0.15), seed: int = 0) -> DatasetSplit:
    """Drop samples with fewer than ``min_observed`` participants, then shuffle and cut."""
    if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9 or min(ratios) < 0:
        raise ValueError(f"split ratios must be three non-negative numbers summing to 1, got {ratios}")
    kept = [s for s in samples if s.n_observed >= min_observed]
    if len(kept) < 3:
        raise ValueError(f"only {len(kept)} samples survive the >= {min_observed} participant filter")
    perm = np.random.default_rng(seed).permutation(len(kept))
    n = len(kept)
    n_train = int(np.ceil(n * ratios[0] - 1e-9))
    n_val = int(np.ceil(n * (ratios[0] + ratios[1]) - 1e-9)) - n_train
    shuffled = [kept[i] for i in perm]
    return DatasetSplit(shuffled[:n_train], shuffled[n_train:n_train + n_val], shuffled[n_train + n_val:],
                        seed=seed, min_observed=min_observed, ratios=tuple(float(r) for r in ratios))


def apply_manifest(samples: Sequence[LabeledSample], manifest: dict) -> DatasetSplit:
    """Rebuild a split from a manifest written by :meth:`DatasetSplit.write_manifest`."""
    by_id = {s.cascade_id: s for s in samples}
    parts = {k: [by_id[i] for i in manifest[k]] for k in ("train", "val", "test")}
    return DatasetSplit(**parts, seed=manifest["seed"], min_observed=manifest["min_observed"],
                        ratios=tuple(manifest["ratios"]))
