"""Teacher-forced training with truncated backpropagation through time.

A training *step* is one pass over one batch of clips: the batch is walked in
fixed-length chunks, each chunk gets its own tape, backward pass, and Adam
update, and hidden states carry across chunks as plain arrays (so gradients
cannot cross chunk boundaries).  Loss accounting is nats per predicted
sample, every position weighted equally; warm-up positions at clip starts are
excluded.

Checkpoints serialize the full generator config, every named parameter, the
optimizer moments, and the global step counter; training resumes exactly at a
step boundary because the data order of step n is a pure function of
(seed, epoch).
"""

from __future__ import annotations

import json
import os
import struct
import time
from dataclasses import dataclass, field

import numpy as np

from .data import Manifest, load_clip
from .errors import CheckpointError, ConfigError, ContractError
from .generator import GeneratorConfig, GeneratorModel, forward_teacher_forced
from .numerics import Adam, Tape, tmean

LOSS_UNIT = "nats/sample"


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    batch_size: int = 8
    chunk_len: int = 512
    epochs: int = 1
    max_steps: int | None = None
    seed: int = 0
    categories: tuple[str, ...] | None = None  # None trains on all categories
    eval_every: int | None = None  # steps between test-split evaluations

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("batch size must be >= 1")
        if self.chunk_len < 1:
            raise ConfigError("chunk length must be >= 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.learning_rate <= 0:
            raise ConfigError("learning rate must be positive")

    def to_dict(self) -> dict:
        return {
            "learning_rate": self.learning_rate,
            "batch_size": self.batch_size,
            "chunk_len": self.chunk_len,
            "epochs": self.epochs,
            "max_steps": self.max_steps,
            "seed": self.seed,
            "categories": list(self.categories) if self.categories else None,
            "eval_every": self.eval_every,
            "loss_unit": LOSS_UNIT,
        }


@dataclass
class StepRecord:
    step: int
    split: str
    loss: float  # nats per predicted sample
    positions: int
    timestamp: float


@dataclass
class TrainReport:
    """Loss curve plus configuration echo; loss unit is nats per sample."""

    config: dict
    steps: list[StepRecord] = field(default_factory=list)
    epoch_means: list[tuple[int, float]] = field(default_factory=list)
    wall_clock_s: float = 0.0

    def train_losses(self) -> list[float]:
        return [r.loss for r in self.steps if r.split == "train"]

    def final_train_loss(self) -> float:
        losses = self.train_losses()
        if not losses:
            raise ContractError("report contains no training steps")
        return losses[-1]

    def deterministic_content(self) -> dict:
        """Everything except wall-clock timing, for reproducibility checks."""
        return {
            "config": self.config,
            "steps": [(r.step, r.split, r.loss, r.positions) for r in self.steps],
            "epoch_means": self.epoch_means,
        }

    def to_jsonl(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(json.dumps({"record": "config", **self.config}) + "\n")
            for r in self.steps:
                fh.write(
                    json.dumps(
                        {
                            "record": "step",
                            "step": r.step,
                            "split": r.split,
                            "loss": r.loss,
                            "unit": LOSS_UNIT,
                            "positions": r.positions,
                            "timestamp": r.timestamp,
                        }
                    )
                    + "\n"
                )
            fh.write(
                json.dumps(
                    {
                        "record": "summary",
                        "wall_clock_s": self.wall_clock_s,
                        "epoch_means": self.epoch_means,
                    }
                )
                + "\n"
            )

    def summary(self) -> str:
        lines = [f"steps: {len([r for r in self.steps if r.split == 'train'])}"]
        for epoch, loss in self.epoch_means:
            lines.append(f"epoch {epoch}: train {loss:.4f} {LOSS_UNIT}")
        if self.steps:
            lines.append(f"final train loss: {self.final_train_loss():.4f} {LOSS_UNIT}")
        lines.append(f"wall clock: {self.wall_clock_s:.1f}s")
        return "\n".join(lines)


def _select_records(manifest: Manifest, split: str, categories) -> list:
    records = [r for r in manifest.split(split)]
    if categories is not None:
        wanted = set(categories)
        unknown = wanted - set(manifest.categories)
        if unknown:
            raise ConfigError(f"unknown categories requested: {sorted(unknown)}")
        records = [r for r in records if r.category in wanted]
    return sorted(records, key=lambda r: r.id)


class _ClipCache:
    """Loads each referenced clip once; manifests are immutable."""

    def __init__(self, manifest: Manifest):
        self.manifest = manifest
        self._cache: dict[str, tuple[np.ndarray, object]] = {}

    def get(self, record) -> tuple[np.ndarray, object]:
        if record.id not in self._cache:
            clip, track = load_clip(self.manifest, record)
            self._cache[record.id] = (clip.codes, track)
        return self._cache[record.id]


def _audit_model_against_data(model: GeneratorModel, cache: _ClipCache, records) -> None:
    model.shape_audit()
    if not records:
        raise ContractError("no clips selected for this split/category filter")
    codes, track = cache.get(records[0])
    model.validate_features(track)
    if codes.size % model.config.coarse_size:
        raise ConfigError(
            f"clip length {codes.size} is not a multiple of the coarse frame size"
        )


def _chunk_losses(model, codes, tracks, chunk_len):
    """Yield (loss_tensor, n_positions, tape) per chunk across one batch."""
    t = codes.shape[1]
    state = None
    for start in range(0, t, chunk_len):
        chunk = codes[:, start : start + chunk_len]
        with Tape() as tape:
            out = forward_teacher_forced(model, chunk, tracks, state)
            state = out.state
            if out.n_pred == 0:
                continue
            loss = tmean(out.losses())
        yield loss, out.n_pred * out.batch, tape


def train(
    model: GeneratorModel,
    manifest: Manifest,
    cfg: TrainConfig,
    optimizer: Adam | None = None,
    start_step: int = 0,
) -> TrainReport:
    """Run the training loop; returns the loss curve report.

    ``optimizer``/``start_step`` come from a loaded checkpoint when resuming;
    the data order is replayed deterministically so a resumed run continues
    the uninterrupted run's curve exactly.
    """
    t0 = time.monotonic()
    records = _select_records(manifest, "train", cfg.categories)
    cache = _ClipCache(manifest)
    _audit_model_against_data(model, cache, records)
    chunk_len = cfg.chunk_len - cfg.chunk_len % model.config.coarse_size
    if chunk_len < model.config.coarse_size:
        raise ConfigError(
            f"chunk length {cfg.chunk_len} is below the coarse frame size"
        )
    if optimizer is None:
        optimizer = Adam(model.parameters(), learning_rate=cfg.learning_rate)
    report = TrainReport(config={**cfg.to_dict(), "model": model.config.to_dict()})

    n = len(records)
    batches_per_epoch = -(-n // cfg.batch_size)
    global_step = 0
    for epoch in range(cfg.epochs):
        order = np.random.default_rng(
            np.random.SeedSequence([cfg.seed, epoch, 0x0D0E])
        ).permutation(n)
        epoch_losses: list[tuple[float, int]] = []
        for bi in range(batches_per_epoch):
            if cfg.max_steps is not None and global_step >= cfg.max_steps:
                break
            global_step += 1
            if global_step <= start_step:
                continue  # data order is seed-derived, so skipping is exact
            chosen = [records[i] for i in order[bi * cfg.batch_size : (bi + 1) * cfg.batch_size]]
            loaded = [cache.get(r) for r in chosen]
            codes = np.stack([c for c, _ in loaded], axis=0)
            tracks = [tr for _, tr in loaded]
            total_loss = 0.0
            total_pos = 0
            for loss, n_pos, tape in _chunk_losses(model, codes, tracks, chunk_len):
                tape.backward(loss)
                # parameters outside this chunk's graph (e.g. the encoder on
                # warm chunks) contribute zero gradient to the update
                for p in optimizer.params.values():
                    if p.grad is None:
                        p.grad = np.zeros_like(p.data)
                optimizer.step()
                total_loss += loss.item() * n_pos
                total_pos += n_pos
            step_loss = total_loss / total_pos
            report.steps.append(
                StepRecord(global_step, "train", step_loss, total_pos, time.time())
            )
            epoch_losses.append((step_loss, total_pos))
            if cfg.eval_every and global_step % cfg.eval_every == 0:
                test_loss = evaluate_loss(model, manifest, "test", categories=cfg.categories)
                report.steps.append(
                    StepRecord(global_step, "test", test_loss, 0, time.time())
                )
        if epoch_losses:
            weighted = sum(l * p for l, p in epoch_losses) / sum(p for _, p in epoch_losses)
            report.epoch_means.append((epoch, weighted))
        if cfg.max_steps is not None and global_step >= cfg.max_steps:
            break
    report.wall_clock_s = time.monotonic() - t0
    report.config["final_step"] = global_step
    return report


def evaluate_loss(
    model: GeneratorModel,
    manifest: Manifest,
    split: str,
    categories=None,
    batch_size: int = 16,
    chunk_len: int = 4096,
) -> float:
    """Mean cross-entropy (nats/sample) over all predicted positions of a
    split.  Mutates nothing."""
    records = _select_records(manifest, split, categories)
    if not records:
        raise ContractError(f"split {split!r} selects no clips")
    cache = _ClipCache(manifest)
    chunk_len = max(
        model.config.coarse_size, chunk_len - chunk_len % model.config.coarse_size
    )
    total = 0.0
    count = 0
    for start in range(0, len(records), batch_size):
        group = records[start : start + batch_size]
        loaded = [cache.get(r) for r in group]
        codes = np.stack([c for c, _ in loaded], axis=0)
        tracks = [tr for _, tr in loaded]
        state = None
        for cstart in range(0, codes.shape[1], chunk_len):
            out = forward_teacher_forced(model, codes[:, cstart : cstart + chunk_len], tracks, state)
            state = out.state
            if out.n_pred:
                ce = out.losses().data
                total += float(ce.sum())
                count += ce.size
    if count == 0:
        raise ContractError("split contains no predictable positions")
    return total / count


_CKPT_MAGIC = b"VSCK"
_CKPT_VERSION = 1


def _write_array(fh, arr: np.ndarray) -> None:
    data = np.ascontiguousarray(arr, dtype="<f8")
    fh.write(struct.pack("<B", data.ndim))
    for d in data.shape:
        fh.write(struct.pack("<I", d))
    fh.write(data.tobytes())


def _read_exact(fh, n: int, what: str) -> bytes:
    blob = fh.read(n)
    if len(blob) != n:
        raise CheckpointError(f"checkpoint truncated while reading {what}")
    return blob


def _read_array(fh, what: str) -> np.ndarray:
    (ndim,) = struct.unpack("<B", _read_exact(fh, 1, f"{what} ndim"))
    shape = tuple(
        struct.unpack("<I", _read_exact(fh, 4, f"{what} dim"))[0] for _ in range(ndim)
    )
    count = int(np.prod(shape)) if shape else 1
    blob = _read_exact(fh, count * 8, f"{what} data")
    return np.frombuffer(blob, dtype="<f8").reshape(shape).copy()


def save_checkpoint(path, model: GeneratorModel, optimizer: Adam | None = None, global_step: int = 0) -> None:
    """Atomically write config, parameters, optimizer moments, step counter."""
    params = model.parameters()
    tmp = str(path) + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<H", _CKPT_VERSION))
        cfg_blob = json.dumps(model.config.to_dict()).encode("utf-8")
        fh.write(struct.pack("<I", len(cfg_blob)))
        fh.write(cfg_blob)
        fh.write(struct.pack("<Q", global_step))
        fh.write(struct.pack("<I", len(params)))
        for name, p in params.items():
            nb = name.encode("utf-8")
            fh.write(struct.pack("<H", len(nb)))
            fh.write(nb)
            _write_array(fh, p.data)
        if optimizer is None:
            fh.write(struct.pack("<B", 0))
        else:
            fh.write(struct.pack("<B", 1))
            fh.write(
                struct.pack(
                    "<dddd Q",
                    optimizer.learning_rate,
                    optimizer.beta1,
                    optimizer.beta2,
                    optimizer.epsilon,
                    optimizer.step_count,
                )
            )
            for name in params:
                _write_array(fh, optimizer.m[name])
                _write_array(fh, optimizer.v[name])
    os.replace(tmp, path)


def load_checkpoint(path) -> tuple[GeneratorModel, Adam | None, int]:
    """Load a checkpoint; shapes are validated against the embedded config."""
    with open(path, "rb") as fh:
        if _read_exact(fh, 4, "magic") != _CKPT_MAGIC:
            raise CheckpointError(f"{path}: bad magic, not a checkpoint")
        (version,) = struct.unpack("<H", _read_exact(fh, 2, "version"))
        if version != _CKPT_VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
        (cfg_len,) = struct.unpack("<I", _read_exact(fh, 4, "config length"))
        try:
            config = GeneratorConfig.from_dict(
                json.loads(_read_exact(fh, cfg_len, "config").decode("utf-8"))
            )
        except (ValueError, KeyError, TypeError) as exc:
            raise CheckpointError(f"{path}: undecodable config: {exc}") from exc
        (global_step,) = struct.unpack("<Q", _read_exact(fh, 8, "step counter"))
        (n_params,) = struct.unpack("<I", _read_exact(fh, 4, "parameter count"))
        expected = GeneratorModel.initialize(config, seed=0)
        params = expected.parameters()
        if n_params != len(params):
            raise CheckpointError(
                f"{path}: {n_params} parameters stored, config implies {len(params)}"
            )
        seen = set()
        for _ in range(n_params):
            (name_len,) = struct.unpack("<H", _read_exact(fh, 2, "parameter name length"))
            name = _read_exact(fh, name_len, "parameter name").decode("utf-8")
            arr = _read_array(fh, f"parameter {name}")
            if name not in params:
                raise CheckpointError(f"{path}: unexpected parameter {name!r}")
            want = params[name].data.shape
            if arr.shape != want:
                raise CheckpointError(
                    f"{path}: parameter {name} has shape {arr.shape}, config implies {want}"
                )
            params[name].data = arr.astype(config.np_dtype)
            seen.add(name)
        if seen != set(params):
            raise CheckpointError(f"{path}: missing parameters {sorted(set(params) - seen)}")
        (has_opt,) = struct.unpack("<B", _read_exact(fh, 1, "optimizer flag"))
        optimizer = None
        if has_opt:
            lr, b1, b2, eps, steps = struct.unpack(
                "<dddd Q", _read_exact(fh, 40, "optimizer header")
            )
            optimizer = Adam(params, learning_rate=lr, beta1=b1, beta2=b2, epsilon=eps)
            optimizer.step_count = steps
            for name in params:
                m = _read_array(fh, f"moment m[{name}]")
                v = _read_array(fh, f"moment v[{name}]")
                if m.shape != params[name].data.shape or v.shape != params[name].data.shape:
                    raise CheckpointError(f"{path}: optimizer moments for {name} have wrong shape")
                optimizer.m[name] = m.astype(config.np_dtype)
                optimizer.v[name] = v.astype(config.np_dtype)
        trailing = fh.read(1)
        if trailing:
            raise CheckpointError(f"{path}: trailing bytes after checkpoint payload")
    return expected, optimizer, int(global_step)
