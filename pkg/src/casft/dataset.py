"""From cascades to padded tensor batches."""
from __future__ import annotations

import logging
import zlib
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch

from .config import ExperimentConfig, resolve_data_path
from .data import (Cascade, DatasetSplit, LabeledSample, build_cascade_graph, build_cascade_sequence,
                   build_global_graph, filter_and_split, label_sample, load_cascades, segment_bounds)
from .embed import EmbeddingCache, global_embed, graph_hash, graphwave_embed, lookup
from .simulate import simulate_hawkes_cascades

logger = logging.getLogger(__name__)

BASELINE_FEATURES = ("observed_size", "mean_gap", "max_gap", "tree_depth", "root_out_degree", "last_event_time")


@dataclass
class Example:
    """Model-ready view of one labeled cascade."""

    cascade_id: str
    times: np.ndarray     # (n,) observed event times, root first
    e_local: np.ndarray   # (n, B)
    e_global: np.ndarray  # (n, d_g)
    y: np.ndarray         # (l,) segment counts
    p: int
    t_obs: float
    t_pred: float
    features: np.ndarray  # hand-built baseline features


def cascade_features(c: Cascade, t_o: float) -> np.ndarray:
    """Observed size, mean/max inter-event gap, tree depth, root out-degree, last event time."""
    obs = c.observed(t_o)
    times = np.array([e.time for e in obs])
    gaps = np.diff(times) if len(times) > 1 else np.zeros(1)
    depth = {c.root_user: 0}
    root_deg = 0
    for e in obs[1:]:
        depth[e.target_user] = depth.get(e.source_user, 0) + 1
        root_deg += e.source_user == c.root_user
    return np.array([len({e.target_user for e in obs}), gaps.mean(), gaps.max(), max(depth.values()),
                     root_deg, times[-1]], dtype=float)


def load_corpus(cfg: ExperimentConfig) -> list[Cascade]:
    d = cfg.data
    if d.source == "synthetic":
        return simulate_hawkes_cascades(seed=d.seed, **d.synthetic)
    return load_cascades(resolve_data_path(d.source), d.format)


def truncate(c: Cascade, max_len: int | None) -> Cascade:
    if max_len is None or len(c.events) <= max_len:
        return c
    return Cascade(c.cascade_id, c.root_user, c.events[:max_len])


def make_split(cascades: Sequence[Cascade], cfg: ExperimentConfig) -> DatasetSplit:
    d = cfg.data
    samples = [label_sample(c, d.t_obs, d.t_pred, d.intervals) for c in cascades]
    return filter_and_split(samples, d.min_observed, d.split, d.seed)


@dataclass
class PreparedData:
    split: DatasetSplit
    train: list[Example]
    val: list[Example]
    test: list[Example]
    global_table: dict

    def examples(self, name: str) -> list[Example]:
        return getattr(self, name)


def _global_table(cascades, cfg: ExperimentConfig) -> dict:
    e = cfg.embed
    g = build_global_graph(cascades, cfg.data.t_obs)
    params = dict(dim=e.d_g, window=e.window, negative=e.negative, rank=e.rank, seed=cfg.data.seed,
                  dense_limit=e.dense_limit)
    cache = EmbeddingCache(cfg.run.cache_dir) if cfg.run.cache_dir else None
    key = EmbeddingCache.key(graph_hash(g.nodes, g.edges), params) if cache else None
    if cache is not None:
        hit = cache.get(key)
        if hit is not None:
            return hit
    table = global_embed(g, **params)
    if cache is not None:
        cache.put(key, table, params)
    return table


def build_example(c: Cascade, s: LabeledSample, cfg: ExperimentConfig, global_table: dict) -> Example:
    t_o = cfg.data.t_obs
    c = truncate(c, cfg.data.max_seq_len)
    graph = build_cascade_graph(c, t_o)
    seq = build_cascade_sequence(c, t_o)
    points = np.linspace(0.0, cfg.embed.max_point, cfg.embed.n_points)
    local = graphwave_embed(graph, sample_points=points, n_scales=cfg.embed.n_scales)
    return Example(
        cascade_id=c.cascade_id,
        times=np.asarray(seq.times, dtype=float),
        e_local=lookup(local, seq.users, cfg.B),
        e_global=lookup(global_table, seq.users, cfg.embed.d_g),
        y=np.asarray(s.segment_targets, dtype=float),
        p=s.incremental_popularity,
        t_obs=s.observation_time,
        t_pred=s.prediction_time,
        features=cascade_features(c, t_o),
    )


def prepare(cfg: ExperimentConfig, cascades: Sequence[Cascade] | None = None,
            manifest: dict | None = None, global_table: dict | None = None) -> PreparedData:
    """Label, filter and split the corpus, then embed every kept cascade.

    The global graph is built from training cascades only; users unseen
    there get zero global vectors.  Pass ``global_table`` (e.g. from a
    checkpoint) to skip recomputing it.
    """
    cascades = list(cascades) if cascades is not None else load_corpus(cfg)
    by_id = {c.cascade_id: c for c in cascades}
    if manifest is not None:
        from .data import apply_manifest
        d = cfg.data
        split = apply_manifest([label_sample(c, d.t_obs, d.t_pred, d.intervals) for c in cascades], manifest)
    else:
        split = make_split(cascades, cfg)
    train_cascades = [truncate(by_id[s.cascade_id], cfg.data.max_seq_len) for s in split.train]
    table = global_table if global_table is not None else _global_table(train_cascades, cfg)
    parts = {name: [build_example(by_id[s.cascade_id], s, cfg, table) for s in getattr(split, name)]
             for name in ("train", "val", "test")}
    logger.info("prepared %d/%d/%d examples", len(parts["train"]), len(parts["val"]), len(parts["test"]))
    return PreparedData(split, parts["train"], parts["val"], parts["test"], table)


def noise_seed(cascade_id: str, seed: int) -> int:
    return (zlib.crc32(cascade_id.encode()) ^ (seed * 0x9E3779B1)) & 0x7FFFFFFF


def collate(examples: Sequence[Example], time_scale: float, dtype=torch.float32) -> dict:
    """Right-pad to the longest sequence; padded times repeat the last valid time."""
    b = len(examples)
    n = max(len(e.times) for e in examples)
    l = len(examples[0].y)
    B = examples[0].e_local.shape[1]
    d_g = examples[0].e_global.shape[1]
    times = np.zeros((b, n))
    e_local = np.zeros((b, n, B))
    e_global = np.zeros((b, n, d_g))
    bounds = np.zeros((b, l))
    for i, e in enumerate(examples):
        k = len(e.times)
        times[i, :k] = e.times
        times[i, k:] = e.times[-1]
        e_local[i, :k] = e.e_local
        e_global[i, :k] = e.e_global
        bounds[i] = segment_bounds(e.t_obs, e.t_pred, l)[1:]
    t = lambda a: torch.as_tensor(a, dtype=dtype)
    return {
        "ids": [e.cascade_id for e in examples],
        "times": t(times),
        "ode_times": t(times / time_scale),
        "lengths": torch.as_tensor([len(e.times) for e in examples]),
        "e_local": t(e_local),
        "e_global": t(e_global),
        "t_obs": t(np.array([e.t_obs for e in examples]) / time_scale),
        "bounds": t(bounds / time_scale),
        "y": t(np.stack([e.y for e in examples])),
        "p": t(np.array([e.p for e in examples], dtype=float)),
        "features": t(np.stack([e.features for e in examples])),
    }


def batches(examples: Sequence[Example], batch_size: int, time_scale: float, rng: np.random.Generator | None = None,
            dtype=torch.float32):
    """Mini-batches; with ``rng`` the order is shuffled, otherwise sequential."""
    order = rng.permutation(len(examples)) if rng is not None else np.arange(len(examples))
    for start in range(0, len(order), batch_size):
        yield collate([examples[i] for i in order[start:start + batch_size]], time_scale, dtype)
