"""Training, checkpointing, evaluation, ablations, sweeps and the feature baseline."""
from __future__ import annotations

import copy
import csv
import hashlib
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch
from torch import nn

from .config import VARIANTS, ExperimentConfig
from .dataset import BASELINE_FEATURES, Example, PreparedData, batches, prepare
from .diffusion import NoiseSchedule, Normalizer, make_schedule
from .model import CasFT
from .predictor import mape, msle, regression_loss, total_loss
from .solvers import SOLVERS

logger = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")


class TrainingDiverged(RuntimeError):
    def __init__(self, batch_id: str, value: float):
        super().__init__(f"non-finite loss ({value}) at batch {batch_id}")
        self.batch_id = batch_id


class ConfigMismatch(ValueError):
    pass


# ---------------------------------------------------------------------------
# checkpoints


@dataclass
class Checkpoint:
    state_dict: dict
    normalizer: dict
    schedule: dict
    config: dict
    config_hash: str
    epoch: int
    val_metrics: dict
    global_users: list = field(default_factory=list)
    global_matrix: torch.Tensor | None = None
    manifest: dict | None = None

    def save(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        torch.save(self.__dict__, path)

    @classmethod
    def load(cls, path) -> "Checkpoint":
        return cls(**torch.load(path, weights_only=True))

    @property
    def cfg(self) -> ExperimentConfig:
        return ExperimentConfig.from_dict(self.config)

    def global_table(self) -> dict:
        if self.global_matrix is None:
            return {}
        m = self.global_matrix.numpy()
        return {u: m[i] for i, u in enumerate(self.global_users)}

    def model(self) -> CasFT:
        m = CasFT(self.cfg, Normalizer.from_dict(self.normalizer), NoiseSchedule.from_dict(self.schedule))
        m.load_state_dict(self.state_dict)
        m.eval()
        return m


def _table_tensor(table: dict) -> tuple[list, torch.Tensor | None]:
    users = sorted(table)
    if not users:
        return [], None
    return users, torch.as_tensor(np.stack([table[u] for u in users]))


def state_hash(state: nn.Module | dict, prefix: str = "") -> str:
    """Digest of a module's (or state dict's) tensors whose names start with ``prefix``."""
    items = state.state_dict().items() if isinstance(state, nn.Module) else state.items()
    h = hashlib.sha256()
    for name, t in sorted(items):
        if not name.startswith(prefix):
            continue
        h.update(name.encode())
        h.update(t.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    log: list[dict]
    model: CasFT
    data: PreparedData
    ddim_calls: int = 0
    seconds: float = 0.0
    final_state: dict | None = None  # weights after the last step, before restoring the best epoch


def build_model(cfg: ExperimentConfig, train: Sequence[Example]) -> CasFT:
    torch.manual_seed(cfg.train.seed)
    normalizer = Normalizer.fit(np.stack([e.y for e in train]))
    schedule = make_schedule(cfg.diff.K, cfg.diff.schedule, cfg.diff.beta_min, cfg.diff.beta_max)
    model = CasFT(cfg, normalizer, schedule)
    model.init_output_bias([e.p for e in train])
    return model


@torch.no_grad()
def predict_examples(model: CasFT, examples: Sequence[Example], cfg: ExperimentConfig,
                     batch_size: int | None = None) -> np.ndarray:
    """Deterministic inference in a fixed order."""
    was_training = model.training
    model.eval()
    preds = [model(b)["p_hat"].double().numpy()
             for b in batches(examples, batch_size or cfg.train.batch_size, cfg.time_scale)]
    model.train(was_training)
    return np.concatenate(preds)


def split_metrics(model: CasFT, examples: Sequence[Example], cfg: ExperimentConfig) -> tuple[dict, np.ndarray]:
    if not examples:
        raise ValueError("split is empty")
    p = np.array([e.p for e in examples], dtype=float)
    p_hat = predict_examples(model, examples, cfg)
    return {"msle": msle(p, p_hat), "mape": mape(p, p_hat), "count": len(examples)}, p_hat


def train(cfg: ExperimentConfig, data: PreparedData | None = None, out_dir=None, detach_l2: bool = False,
          on_epoch: Callable[[dict], None] | None = None) -> TrainResult:
    """Minimize L1 + gamma * L2 with Adam, early-stopping on validation MSLE.

    Epoch 0 in the log is the untrained model.  ``detach_l2`` keeps the L2
    value in the log but blocks its gradient.  Writes ``checkpoint.pt`` and
    ``train_log.jsonl`` under ``out_dir`` when given.
    """
    cfg.validate()
    started = time.perf_counter()
    data = data if data is not None else prepare(cfg)
    if not data.train:
        raise ValueError("no training examples")
    tc = cfg.train
    model = build_model(cfg, data.train)
    opt = torch.optim.Adam(model.parameters(), lr=tc.lr)
    rng = np.random.default_rng(tc.seed)
    gen = torch.Generator().manual_seed(tc.seed)
    val = data.val or data.train

    log: list[dict] = []
    best = (math.inf, 0, copy.deepcopy(model.state_dict()), {})
    stale = 0

    def record(entry):
        log.append(entry)
        logger.info("epoch %d %s", entry["epoch"], {k: v for k, v in entry.items() if k != "epoch"})
        if on_epoch:
            on_epoch(entry)

    train_m, _ = split_metrics(model, data.train, cfg)
    val_m, _ = split_metrics(model, val, cfg)
    record({"epoch": 0, "loss": None, "l1": None, "l2": None, "train_msle": train_m["msle"],
            "val_msle": val_m["msle"], "val_mape": val_m["mape"]})
    best = (val_m["msle"], 0, copy.deepcopy(model.state_dict()), val_m)

    for epoch in range(1, tc.epochs + 1):
        model.train()
        sums = np.zeros(3)
        n_seen = 0
        for i, batch in enumerate(batches(data.train, tc.batch_size, cfg.time_scale, rng)):
            out = model(batch, gen)
            l1 = regression_loss(batch["p"], out["p_hat"])
            l2 = out["l2"].detach() if detach_l2 else out["l2"]
            loss = total_loss(l1, l2, tc.gamma)
            if not torch.isfinite(loss):
                raise TrainingDiverged(f"epoch {epoch} batch {i} (first ids: {','.join(batch['ids'][:4])})",
                                       float(loss.detach()))
            opt.zero_grad()
            loss.backward()
            if tc.grad_clip:
                nn.utils.clip_grad_norm_(model.parameters(), tc.grad_clip)
            opt.step()
            b = len(batch["ids"])
            sums += b * np.array([float(loss.detach()), float(l1.detach()), float(out["l2"].detach())])
            n_seen += b
        entry = {"epoch": epoch, "loss": sums[0] / n_seen, "l1": sums[1] / n_seen, "l2": sums[2] / n_seen}
        if epoch % tc.eval_every == 0 or epoch == tc.epochs:
            val_m, _ = split_metrics(model, val, cfg)
            entry.update(val_msle=val_m["msle"], val_mape=val_m["mape"])
            if val_m["msle"] < best[0]:
                best = (val_m["msle"], epoch, copy.deepcopy(model.state_dict()), val_m)
                stale = 0
            else:
                stale += 1
        record(entry)
        if stale >= tc.patience:
            logger.info("early stop after epoch %d (best %d)", epoch, best[1])
            break

    final_state = copy.deepcopy(model.state_dict())
    model.load_state_dict(best[2])
    model.eval()
    users, matrix = _table_tensor(data.global_table)
    ckpt = Checkpoint(
        state_dict=best[2], normalizer=model.normalizer.to_dict(), schedule=model.schedule.to_dict(),
        config=cfg.to_dict(), config_hash=cfg.hash(), epoch=best[1], val_metrics=best[3],
        global_users=users, global_matrix=matrix, manifest=data.split.manifest(),
    )
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        ckpt.save(out / "checkpoint.pt")
        with open(out / "train_log.jsonl", "w", encoding="utf-8") as fh:
            for entry in log:
                fh.write(json.dumps(entry) + "\n")
    return TrainResult(ckpt, log, model, data, model.ddim_calls, time.perf_counter() - started, final_state)


# ---------------------------------------------------------------------------
# evaluation


def evaluate(checkpoint: Checkpoint | str | Path, split: str = "test", data: PreparedData | None = None,
             out_dir=None, config: ExperimentConfig | None = None) -> dict:
    """Full inference on one split; emits ``metrics_<split>.json`` and ``predictions_<split>.csv``.

    ``config``, when given, must hash to the checkpoint's recorded hash.
    """
    if split not in SPLITS:
        raise ValueError(f"unknown split {split!r}; choose one of {SPLITS}")
    ckpt = checkpoint if isinstance(checkpoint, Checkpoint) else Checkpoint.load(checkpoint)
    cfg = ckpt.cfg
    if cfg.hash() != ckpt.config_hash:
        raise ConfigMismatch(f"stored config hashes to {cfg.hash()}, checkpoint says {ckpt.config_hash}")
    if config is not None and config.hash() != ckpt.config_hash:
        raise ConfigMismatch(f"config hash {config.hash()} does not match checkpoint {ckpt.config_hash}")
    if data is None:
        data = prepare(cfg, manifest=ckpt.manifest, global_table=ckpt.global_table())
    examples = data.examples(split)
    if not examples:
        raise ValueError(f"split {split!r} is empty")
    model = ckpt.model()
    metrics, p_hat = split_metrics(model, examples, cfg)
    report = {**metrics, "split": split, "config_hash": ckpt.config_hash, "epoch": ckpt.epoch,
              "ddim_calls": model.ddim_calls}
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"metrics_{split}.json").write_text(json.dumps(report, indent=2))
        with open(out / f"predictions_{split}.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["cascade_id", "P", "P_hat", "P_hat_rounded"])
            for e, ph in zip(examples, p_hat):
                w.writerow([e.cascade_id, e.p, repr(float(ph)), int(round(float(ph)))])
    return report


# ---------------------------------------------------------------------------
# ablation


def _write_rows(rows: list[dict], path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)


def ablate(cfg: ExperimentConfig, variants: Sequence[str] = VARIANTS, seeds: Sequence[int] | None = None,
           data: PreparedData | None = None, out_dir=None) -> dict:
    """Train and test every variant on shared data, once per training seed.

    Returns ``{"rows": [...], "wins": {variant: k}, "runs": n}`` where
    ``wins[v]`` counts seeds on which ``full`` had test MSLE <= variant v.
    """
    unknown = [v for v in variants if v not in VARIANTS]
    if unknown:
        raise ValueError(f"unknown variants {unknown}; choose from {VARIANTS}")
    seeds = list(seeds) if seeds is not None else [cfg.train.seed]
    data = data if data is not None else prepare(cfg)
    rows = []
    for seed in seeds:
        for variant in variants:
            run_cfg = cfg.with_overrides(**{"model.variant": variant, "train.seed": seed})
            res = train(run_cfg, data)
            report = evaluate(res.checkpoint, "test", data)
            rows.append({"variant": variant, "seed": seed, "msle": report["msle"], "mape": report["mape"],
                         "count": report["count"], "epoch": res.checkpoint.epoch,
                         "ddim_calls": res.ddim_calls + report["ddim_calls"], "seconds": round(res.seconds, 2)})
            logger.info("ablate %s seed %d: msle %.4f", variant, seed, report["msle"])
    by = {(r["variant"], r["seed"]): r["msle"] for r in rows}
    wins = {}
    if "full" in variants:
        wins = {v: sum(by[("full", s)] <= by[(v, s)] for s in seeds) for v in variants if v != "full"}
    result = {"rows": rows, "wins": wins, "runs": len(seeds)}
    if out_dir is not None:
        out = Path(out_dir)
        _write_rows(rows, out / "ablation.csv")
        (out / "ablation.json").write_text(json.dumps(result, indent=2))
    return result


# ---------------------------------------------------------------------------
# sweeps

SWEEP_AXES = {
    "diffusion_steps": ("diff.K", int),
    "hidden_dim": ("model.d_h", int),
    "intervals": ("data.intervals", int),
    "solver": ("ode.method", str),
}


def _check_sweep_value(axis: str, value) -> None:
    if axis == "solver" and value not in SOLVERS:
        raise ValueError(f"unknown ODE solver {value!r}; choose one of {', '.join(SOLVERS)}")
    if axis != "solver" and value < 1:
        raise ValueError(f"{axis} must be positive, got {value}")


def sweep(cfg: ExperimentConfig, axis: str, values: Sequence, out_dir=None) -> list[dict]:
    """One train + test evaluation per value, all under the config's seed.

    Writes ``sweep_<axis>.csv`` and ``sweep_<axis>.png`` under ``out_dir``.
    """
    if axis not in SWEEP_AXES:
        raise ValueError(f"unknown sweep axis {axis!r}; choose one of {', '.join(SWEEP_AXES)}")
    key, cast = SWEEP_AXES[axis]
    values = [cast(v) for v in values]
    for v in values:
        _check_sweep_value(axis, v)
    shared = None
    rows = []
    for v in values:
        run_cfg = cfg.with_overrides(**{key: v})
        if axis == "diffusion_steps" and run_cfg.diff.ddim_steps > v:
            run_cfg = run_cfg.with_overrides(**{"diff.ddim_steps": v})
        # the data only depends on the interval count among the swept axes
        if axis == "intervals" or shared is None:
            data = prepare(run_cfg)
            shared = data if axis != "intervals" else None
        else:
            data = shared
        res = train(run_cfg, data)
        report = evaluate(res.checkpoint, "test", data)
        rows.append({"axis": axis, "value": v, "msle": report["msle"], "mape": report["mape"],
                     "count": report["count"], "seconds": round(res.seconds, 2)})
    if out_dir is not None:
        out = Path(out_dir)
        _write_rows(rows, out / f"sweep_{axis}.csv")
        plot_sweep(rows, axis, out / f"sweep_{axis}.png")
    return rows


def plot_sweep(rows: list[dict], axis: str, path) -> None:
    import matplotlib
    matplotlib.use("Agg")
    from matplotlib import pyplot as plt

    labels = [str(r["value"]) for r in rows]
    x = np.arange(len(rows))
    fig, ax1 = plt.subplots(figsize=(6, 3.5))
    ax1.plot(x, [r["msle"] for r in rows], "o-", color="tab:blue", label="MSLE")
    ax1.set_ylabel("MSLE", color="tab:blue")
    ax2 = ax1.twinx()
    ax2.plot(x, [r["mape"] for r in rows], "s--", color="tab:red", label="MAPE")
    ax2.set_ylabel("MAPE", color="tab:red")
    ax1.set_xticks(x, labels, rotation=30 if axis == "solver" else 0)
    ax1.set_xlabel(axis)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


# ---------------------------------------------------------------------------
# feature baseline


class FeatureMLP(nn.Module):
    def __init__(self, n_features: int, width: int = 64):
        super().__init__()
        self.net = nn.Sequential(nn.Linear(n_features, width), nn.ReLU(), nn.Linear(width, width), nn.ReLU(),
                                 nn.Linear(width, 1))

    def forward(self, x):
        return nn.functional.softplus(self.net(x)).squeeze(-1)


def baseline_feature_mlp(cfg: ExperimentConfig, data: PreparedData | None = None, epochs: int = 300,
                         lr: float = 1e-2) -> dict:
    """Full-batch MLP on the hand-built features, trained with the MSLE loss.

    Features are log1p-compressed and standardized with training statistics.
    The returned report has test metrics and the feature names.
    """
    data = data if data is not None else prepare(cfg)
    torch.manual_seed(cfg.train.seed)

    def xy(examples):
        x = np.log1p(np.stack([e.features for e in examples]))
        return x, np.array([e.p for e in examples], dtype=float)

    x_tr, p_tr = xy(data.train)
    mean, std = x_tr.mean(0), x_tr.std(0)
    std = np.where(std > 1e-8, std, 1.0)
    as_t = lambda x: torch.as_tensor((x - mean) / std, dtype=torch.float32)
    model = FeatureMLP(x_tr.shape[1])
    target = float(np.exp2(np.mean(np.log2(p_tr + 1.0))) - 1.0)
    target = max(target, 1e-3)
    with torch.no_grad():
        model.net[-1].bias.fill_(target + math.log(-math.expm1(-target)))
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    xt, pt = as_t(x_tr), torch.as_tensor(p_tr)
    val = data.val or data.train
    x_va, p_va = xy(val)
    best = (math.inf, copy.deepcopy(model.state_dict()))
    for _ in range(epochs):
        loss = regression_loss(pt, model(xt))
        opt.zero_grad()
        loss.backward()
        opt.step()
        with torch.no_grad():
            v = msle(p_va, model(as_t(x_va)))
        if v < best[0]:
            best = (v, copy.deepcopy(model.state_dict()))
    model.load_state_dict(best[1])
    x_te, p_te = xy(data.test)
    with torch.no_grad():
        p_hat = model(as_t(x_te)).double().numpy()
    return {"msle": msle(p_te, p_hat), "mape": mape(p_te, p_hat), "count": len(p_te), "split": "test",
            "features": list(BASELINE_FEATURES), "val_msle": best[0]}
