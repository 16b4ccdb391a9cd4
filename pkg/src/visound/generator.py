"""Three-tier hierarchical sample-level generator with visual conditioning.

The coarse tier is a GRU stepping over frames of several waveform samples,
the mid tier a GRU stepping over smaller frames, and the fine tier an MLP
emitting 256-way logits for one sample.  Each tier conditions the next finer
one through a learned upsampling projection (one conditioning vector per
finer-tier step, rather than replication).

Visual features enter in one of three modes:

* ``frame``: every coarse step concatenates its aligned per-frame feature
  with a learned expansion of the previous samples.
* ``seq``: a one-layer GRU encodes the feature rows; its last hidden state
  initializes the coarse tier.
* ``flow``: identical to ``seq`` but the features are the concatenation of
  appearance and motion descriptors (double width).

Positions are indexed so that the coarse step consuming samples
[w, w + coarse) conditions the prediction of samples [w + coarse, w + 2*coarse),
and in frame mode is conditioned on the video frame covering sample w.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .audio import N_CODES, SILENCE_CODE, QuantizedClip, dequantize_codes
from .data import KIND_APPEARANCE_FLOW, FeatureTrack, frame_index_for_sample
from .errors import ConfigError, ContractError, DimensionError
from .numerics import (
    Embedding,
    GRUCell,
    Linear,
    Tensor,
    concat,
    reshape,
    softmax_cross_entropy,
    split,
    tanh,
)

MODES = ("frame", "seq", "flow")


@dataclass(frozen=True)
class GeneratorConfig:
    """Sizes and conditioning mode; parameter shapes follow from this alone."""

    mode: str
    feature_dim: int
    step_size: int
    frame_sizes: tuple[int, int, int] = (8, 2, 1)
    context_k: int = 4
    hidden_size: int = 1024
    embed_dim: int = 256
    n_classes: int = N_CODES
    dtype: str = "float64"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        c, m, f = self.frame_sizes
        if not (c > m > f >= 1):
            raise ConfigError(f"tier frame sizes must strictly decrease, got {self.frame_sizes}")
        if c % m or m % f:
            raise ConfigError(f"each tier frame size must divide the coarser one, got {self.frame_sizes}")
        if f != 1:
            raise ConfigError("the fine tier predicts one sample per step; fine frame size must be 1")
        if self.step_size < 1 or self.step_size % c:
            raise ConfigError(
                f"step size {self.step_size} must be a positive multiple of the "
                f"coarse frame size {c}"
            )
        if self.context_k < 1:
            raise ConfigError(f"fine context k must be >= 1, got {self.context_k}")
        for name in ("feature_dim", "hidden_size", "embed_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.n_classes < 2:
            raise ConfigError("need at least 2 sample classes")
        if self.dtype not in ("float64", "float32"):
            raise ConfigError(f"dtype must be float64 or float32, got {self.dtype!r}")

    @property
    def coarse_size(self) -> int:
        return self.frame_sizes[0]

    @property
    def mid_size(self) -> int:
        return self.frame_sizes[1]

    @property
    def ratio_coarse_mid(self) -> int:
        return self.frame_sizes[0] // self.frame_sizes[1]

    @property
    def ratio_mid_fine(self) -> int:
        return self.frame_sizes[1] // self.frame_sizes[2]

    @property
    def coarse_input_dim(self) -> int:
        # frame mode concatenates the expanded samples with the feature row
        return 2 * self.feature_dim if self.mode == "frame" else self.hidden_size

    @property
    def history_len(self) -> int:
        return max(self.coarse_size, self.context_k)

    @property
    def np_dtype(self):
        return np.float64 if self.dtype == "float64" else np.float32

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "feature_dim": self.feature_dim,
            "step_size": self.step_size,
            "frame_sizes": list(self.frame_sizes),
            "context_k": self.context_k,
            "hidden_size": self.hidden_size,
            "embed_dim": self.embed_dim,
            "n_classes": self.n_classes,
            "dtype": self.dtype,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorConfig":
        d = dict(d)
        d["frame_sizes"] = tuple(d["frame_sizes"])
        return cls(**d)


def expected_param_shapes(config: GeneratorConfig) -> dict[str, tuple[int, ...]]:
    """Every parameter name and shape implied by a config."""
    h = config.hidden_size
    shapes: dict[str, tuple[int, ...]] = {}
    shapes["embed.table"] = (config.n_classes, config.embed_dim)
    if config.mode == "frame":
        shapes["coarse_expand.w"] = (config.coarse_size, config.feature_dim)
        shapes["coarse_expand.b"] = (config.feature_dim,)
    else:
        shapes["coarse_in.w"] = (config.coarse_size, h)
        shapes["coarse_in.b"] = (h,)
        for g in ("wz", "wr", "wh"):
            shapes[f"encoder_gru.{g}"] = (config.feature_dim, h)
        for g in ("uz", "ur", "uh"):
            shapes[f"encoder_gru.{g}"] = (h, h)
        for g in ("bz", "br", "bh"):
            shapes[f"encoder_gru.{g}"] = (h,)
    for g in ("wz", "wr", "wh"):
        shapes[f"coarse_gru.{g}"] = (config.coarse_input_dim, h)
    for g in ("uz", "ur", "uh"):
        shapes[f"coarse_gru.{g}"] = (h, h)
    for g in ("bz", "br", "bh"):
        shapes[f"coarse_gru.{g}"] = (h,)
    shapes["coarse_up.w"] = (h, config.ratio_coarse_mid * h)
    shapes["coarse_up.b"] = (config.ratio_coarse_mid * h,)
    shapes["mid_in.w"] = (config.mid_size, h)
    shapes["mid_in.b"] = (h,)
    for g in ("wz", "wr", "wh"):
        shapes[f"mid_gru.{g}"] = (h, h)
    for g in ("uz", "ur", "uh"):
        shapes[f"mid_gru.{g}"] = (h, h)
    for g in ("bz", "br", "bh"):
        shapes[f"mid_gru.{g}"] = (h,)
    shapes["mid_up.w"] = (h, config.ratio_mid_fine * h)
    shapes["mid_up.b"] = (config.ratio_mid_fine * h,)
    fine_in = config.context_k * config.embed_dim + h
    shapes["fine_h1.w"] = (fine_in, h)
    shapes["fine_h1.b"] = (h,)
    shapes["fine_h2.w"] = (h, h)
    shapes["fine_h2.b"] = (h,)
    shapes["fine_out.w"] = (h, config.n_classes)
    shapes["fine_out.b"] = (config.n_classes,)
    return shapes


class GeneratorModel:
    """Parameters plus configuration for the 3-tier generator."""

    def __init__(self, config: GeneratorConfig, rng: np.random.Generator):
        self.config = config
        dt = config.np_dtype
        h = config.hidden_size
        self.embed = Embedding(rng, config.n_classes, config.embed_dim, dt)
        if config.mode == "frame":
            self.coarse_expand = Linear(rng, config.coarse_size, config.feature_dim, dt)
            self.coarse_in = None
            self.encoder_gru = None
        else:
            self.coarse_expand = None
            self.coarse_in = Linear(rng, config.coarse_size, h, dt)
            self.encoder_gru = GRUCell(rng, config.feature_dim, h, dt)
        self.coarse_gru = GRUCell(rng, config.coarse_input_dim, h, dt)
        self.coarse_up = Linear(rng, h, config.ratio_coarse_mid * h, dt)
        self.mid_in = Linear(rng, config.mid_size, h, dt)
        self.mid_gru = GRUCell(rng, h, h, dt)
        self.mid_up = Linear(rng, h, config.ratio_mid_fine * h, dt)
        fine_in = config.context_k * config.embed_dim + h
        self.fine_h1 = Linear(rng, fine_in, h, dt)
        self.fine_h2 = Linear(rng, h, h, dt)
        self.fine_out = Linear(rng, h, config.n_classes, dt)

    @classmethod
    def initialize(cls, config: GeneratorConfig, seed: int = 0) -> "GeneratorModel":
        return cls(config, np.random.default_rng(np.random.SeedSequence([seed, 0xC0DE])))

    def parameters(self) -> dict[str, Tensor]:
        params: dict[str, Tensor] = {}
        params.update(self.embed.parameters("embed"))
        if self.config.mode == "frame":
            params.update(self.coarse_expand.parameters("coarse_expand"))
        else:
            params.update(self.coarse_in.parameters("coarse_in"))
            params.update(self.encoder_gru.parameters("encoder_gru"))
        params.update(self.coarse_gru.parameters("coarse_gru"))
        params.update(self.coarse_up.parameters("coarse_up"))
        params.update(self.mid_in.parameters("mid_in"))
        params.update(self.mid_gru.parameters("mid_gru"))
        params.update(self.mid_up.parameters("mid_up"))
        params.update(self.fine_h1.parameters("fine_h1"))
        params.update(self.fine_h2.parameters("fine_h2"))
        params.update(self.fine_out.parameters("fine_out"))
        return params

    def parameter_groups(self) -> dict[str, list[str]]:
        """Named tiers for gradient-flow checks."""
        groups: dict[str, list[str]] = {"coarse": [], "mid": [], "fine": []}
        if self.config.mode == "frame":
            groups["expand"] = []
        else:
            groups["encoder"] = []
        for name in self.parameters():
            if name.startswith("encoder"):
                groups["encoder"].append(name)
            elif name.startswith("coarse_expand"):
                groups["expand"].append(name)
            elif name.startswith("coarse"):
                groups["coarse"].append(name)
            elif name.startswith("mid"):
                groups["mid"].append(name)
            else:
                groups["fine"].append(name)
        return groups

    def shape_audit(self) -> None:
        """Verify every parameter matches the shape the config dictates."""
        expected = expected_param_shapes(self.config)
        actual = self.parameters()
        missing = sorted(set(expected) - set(actual))
        extra = sorted(set(actual) - set(expected))
        if missing or extra:
            raise ConfigError(f"parameter set mismatch: missing {missing}, extra {extra}")
        for name, shape in expected.items():
            got = actual[name].shape
            if got != shape:
                raise ConfigError(f"parameter {name} has shape {got}, config implies {shape}")

    def zero_grads(self) -> None:
        for p in self.parameters().values():
            p.grad = None

    def validate_features(self, track: FeatureTrack) -> None:
        cfg = self.config
        if track.dim != cfg.feature_dim:
            raise ConfigError(
                f"{cfg.mode} mode expects feature dim {cfg.feature_dim}, "
                f"got track of dim {track.dim}"
            )
        if cfg.mode == "flow" and track.kind != KIND_APPEARANCE_FLOW:
            raise ConfigError(
                f"flow mode expects {KIND_APPEARANCE_FLOW!r} features, got {track.kind!r}"
            )


@dataclass
class GenerationState:
    """Carried recurrence state: per-tier hiddens, recent codes, position."""

    coarse_h: np.ndarray  # (batch, hidden)
    mid_h: np.ndarray  # (batch, hidden)
    history: np.ndarray  # (batch, history_len) int codes
    pos: int  # absolute index of the next sample

    @property
    def batch(self) -> int:
        return self.history.shape[0]


def _as_feature_batch(model: GeneratorModel, feats) -> np.ndarray:
    """Normalize features to a (batch, frames, dim) array, validating dims."""
    if isinstance(feats, FeatureTrack):
        model.validate_features(feats)
        return feats.values[None, :, :]
    if isinstance(feats, (list, tuple)):
        for tr in feats:
            model.validate_features(tr)
        frames = {tr.frames for tr in feats}
        if len(frames) != 1:
            raise ContractError(f"batched tracks must share a frame count, got {sorted(frames)}")
        return np.stack([tr.values for tr in feats], axis=0)
    arr = np.asarray(feats, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None, :, :]
    if arr.ndim != 3:
        raise DimensionError(f"features must be (frames, dim) or (batch, frames, dim), got {arr.shape}")
    if arr.shape[2] != model.config.feature_dim:
        raise ConfigError(
            f"{model.config.mode} mode expects feature dim {model.config.feature_dim}, "
            f"got {arr.shape[2]}"
        )
    return arr


def encode_video(model: GeneratorModel, feats) -> Tensor:
    """Run the encoder GRU over feature rows; returns the last hidden state.

    Accepts a FeatureTrack / (frames, dim) array (returns a vector) or a
    batch (batch, frames, dim) (returns a matrix).
    """
    if model.config.mode not in ("seq", "flow"):
        raise ConfigError(f"encode_video requires seq or flow mode, model is {model.config.mode!r}")
    single = isinstance(feats, FeatureTrack) or (
        not isinstance(feats, (list, tuple)) and np.asarray(feats).ndim == 2
    )
    values = _as_feature_batch(model, feats)
    b, frames, _ = values.shape
    h = Tensor(np.zeros((b, model.config.hidden_size), dtype=model.config.np_dtype))
    for f in range(frames):
        h = model.encoder_gru.step(Tensor(values[:, f, :].astype(model.config.np_dtype)), h)
    return reshape(h, (model.config.hidden_size,)) if single else h


def _codes_2d(codes, coarse_size: int, what: str) -> np.ndarray:
    arr = np.asarray(codes)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise ContractError(f"{what} must be 1-D or 2-D, got shape {arr.shape}")
    if arr.dtype.kind not in "iu":
        raise ContractError(f"{what} must be integer codes")
    return arr.astype(np.int64)


def coarse_step(model: GeneratorModel, prev_frame_codes, cond, h) -> tuple[list[Tensor], Tensor]:
    """One coarse-tier step.

    ``prev_frame_codes`` are the coarse-frame-size codes preceding the
    predicted window; ``cond`` is the aligned feature row in frame mode and
    must be None otherwise (the encoder state enters through ``h``).  Returns
    the mid-tier conditioning vectors (one per mid step under this window)
    and the new hidden state.
    """
    cfg = model.config
    arr = _codes_2d(prev_frame_codes, cfg.coarse_size, "prev_frame_codes")
    if arr.shape[1] != cfg.coarse_size:
        raise ContractError(f"expected {cfg.coarse_size} codes per coarse step, got {arr.shape[1]}")
    real = Tensor(dequantize_codes(arr).astype(cfg.np_dtype))
    if cfg.mode == "frame":
        if cond is None:
            raise ContractError("frame mode requires a feature row per coarse step")
        feat = cond if isinstance(cond, Tensor) else Tensor(np.asarray(cond, dtype=cfg.np_dtype))
        if feat.ndim == 1:
            feat = reshape(feat, (1, feat.shape[0]))
        x = concat([model.coarse_expand(real), feat], axis=1)
    else:
        if cond is not None:
            raise ContractError(f"{cfg.mode} mode conditions through the initial state, not per step")
        x = model.coarse_in(real)
    if not isinstance(h, Tensor):
        h = Tensor(np.asarray(h, dtype=cfg.np_dtype))
    if h.ndim == 1:
        h = reshape(h, (1, h.shape[0]))
    h_new = model.coarse_gru.step(x, h)
    vecs = split(model.coarse_up(h_new), cfg.ratio_coarse_mid, axis=1)
    return vecs, h_new


def mid_step(model: GeneratorModel, prev_codes, cond: Tensor, h) -> tuple[list[Tensor], Tensor]:
    """One mid-tier step: consumes ``mid_size`` codes plus the coarse
    conditioning vector, returns fine-tier conditioning vectors and the new
    hidden state."""
    cfg = model.config
    arr = _codes_2d(prev_codes, cfg.mid_size, "prev_codes")
    if arr.shape[1] != cfg.mid_size:
        raise ContractError(f"expected {cfg.mid_size} codes per mid step, got {arr.shape[1]}")
    real = Tensor(dequantize_codes(arr).astype(cfg.np_dtype))
    x = model.mid_in(real) + cond
    if not isinstance(h, Tensor):
        h = Tensor(np.asarray(h, dtype=cfg.np_dtype))
    h_new = model.mid_gru.step(x, h)
    vecs = split(model.mid_up(h_new), cfg.ratio_mid_fine, axis=1)
    return vecs, h_new


def fine_step(model: GeneratorModel, prev_k_codes, cond) -> Tensor:
    """Fine-tier MLP: embeds the last k codes, concatenates the mid-tier
    conditioning vector, and returns unnormalized logits over sample codes."""
    cfg = model.config
    arr = _codes_2d(prev_k_codes, cfg.context_k, "prev_k_codes")
    single = np.asarray(prev_k_codes).ndim == 1
    if arr.shape[1] != cfg.context_k:
        raise ContractError(f"expected {cfg.context_k} context codes, got {arr.shape[1]}")
    emb = model.embed(arr)  # (b, k, embed_dim)
    emb = reshape(emb, (arr.shape[0], cfg.context_k * cfg.embed_dim))
    if not isinstance(cond, Tensor):
        cond = Tensor(np.asarray(cond, dtype=cfg.np_dtype))
    if cond.ndim == 1:
        cond = reshape(cond, (1, cond.shape[0]))
    x = concat([emb, cond], axis=1)
    # tanh keeps the whole network smooth, so finite-difference gradient
    # verification converges at tight tolerances
    h1 = tanh(model.fine_h1(x))
    h2 = tanh(model.fine_h2(h1))
    logits = model.fine_out(h2)
    return reshape(logits, (cfg.n_classes,)) if single else logits


@dataclass
class TeacherForced:
    """Result of one teacher-forced chunk: position-major logits and targets."""

    logits: Tensor  # (n_pred * batch, n_classes)
    targets: np.ndarray  # (n_pred * batch,)
    n_pred: int
    batch: int
    first_abs: int  # absolute sample index of the first predicted position
    state: GenerationState

    def logits_array(self) -> np.ndarray:
        return self.logits.data.reshape(self.n_pred, self.batch, -1)

    def losses(self) -> Tensor:
        """Per-position cross-entropies, shape (n_pred * batch,)."""
        return softmax_cross_entropy(self.logits, self.targets)


def _initial_state(model: GeneratorModel, feat_batch: np.ndarray) -> GenerationState:
    cfg = model.config
    b = feat_batch.shape[0]
    if cfg.mode == "frame":
        coarse_h = np.zeros((b, cfg.hidden_size), dtype=cfg.np_dtype)
    else:
        coarse_h = encode_video(model, feat_batch).data
        if coarse_h.ndim == 1:
            coarse_h = coarse_h[None, :]
    return GenerationState(
        coarse_h=coarse_h,
        mid_h=np.zeros((b, cfg.hidden_size), dtype=cfg.np_dtype),
        history=np.full((b, cfg.history_len), SILENCE_CODE, dtype=np.int64),
        pos=0,
    )


def forward_teacher_forced(
    model: GeneratorModel,
    clip,
    feats,
    state: GenerationState | None = None,
) -> TeacherForced:
    """Teacher-forced logits for one chunk, optionally continuing a state.

    With ``state=None`` the chunk is a clip start: the first coarse-frame of
    codes is warm-up context and positions from there on are predicted.  With
    a carried state every chunk position is predicted.  Chunk length must be
    a multiple of the coarse frame size.
    """
    cfg = model.config
    if isinstance(clip, QuantizedClip):
        clip = clip.codes
    codes = _codes_2d(clip, cfg.coarse_size, "clip codes")
    b, t = codes.shape
    if t % cfg.coarse_size:
        raise ContractError(
            f"chunk length {t} must be a multiple of the coarse frame size {cfg.coarse_size}"
        )
    feat_batch = _as_feature_batch(model, feats)
    if feat_batch.shape[0] == 1 and b > 1:
        feat_batch = np.broadcast_to(feat_batch, (b,) + feat_batch.shape[1:])
    if feat_batch.shape[0] != b:
        raise ContractError(
            f"feature batch {feat_batch.shape[0]} does not match code batch {b}"
        )

    cold = state is None
    if cold:
        # a clip start is a silence-primed state, exactly as in generation:
        # the tiers consume the silence windows (so recurrent trajectories
        # match the autoregressive path), but the first coarse frame of real
        # samples stays warm-up and gets no logits
        if cfg.mode == "frame":
            coarse_h = Tensor(np.zeros((b, cfg.hidden_size), dtype=cfg.np_dtype))
        else:
            # the encoder output stays in the graph so chunk 1 trains it
            coarse_h = encode_video(model, feat_batch)
        mid_h = Tensor(np.zeros((b, cfg.hidden_size), dtype=cfg.np_dtype))
        history = np.full((b, cfg.history_len), SILENCE_CODE, dtype=np.int64)
        chunk_abs = 0
        emit_from = cfg.coarse_size
    else:
        if state.batch != b:
            raise ContractError(f"state batch {state.batch} does not match codes batch {b}")
        coarse_h = Tensor(state.coarse_h)
        mid_h = Tensor(state.mid_h)
        history = state.history
        chunk_abs = state.pos
        emit_from = 0

    hl = cfg.history_len
    fs_c, fs_m = cfg.coarse_size, cfg.mid_size
    work = np.concatenate([history, codes], axis=1)
    pred_start = hl  # work-coordinate of the chunk's first sample
    n_pred = t - emit_from
    n_frames = feat_batch.shape[1]

    cond_per_pos: list[Tensor] = []
    mid_conds: list[Tensor] = []
    for j in range(t // fs_c):
        w = pred_start - fs_c + j * fs_c
        window = work[:, w : w + fs_c]
        if cfg.mode == "frame":
            abs_w = chunk_abs + j * fs_c - fs_c  # silence prelude maps to frame 0
            fi = min(max(frame_index_for_sample(max(abs_w, 0), cfg.step_size), 0), n_frames - 1)
            feat_row = Tensor(feat_batch[:, fi, :].astype(cfg.np_dtype))
            vecs, coarse_h = coarse_step(model, window, feat_row, coarse_h)
        else:
            vecs, coarse_h = coarse_step(model, window, None, coarse_h)
        mid_conds.extend(vecs)
    for i in range(t // fs_m):
        w = pred_start - fs_m + i * fs_m
        vecs, mid_h = mid_step(model, work[:, w : w + fs_m], mid_conds[i], mid_h)
        cond_per_pos.extend(vecs)

    if n_pred:
        ctxsrc = np.concatenate(
            [np.full((b, cfg.context_k), SILENCE_CODE, dtype=np.int64), work], axis=1
        )
        start = pred_start + emit_from
        cols = (start + np.arange(n_pred))[:, None] + np.arange(cfg.context_k)[None, :]
        ctx = ctxsrc[:, cols]  # (b, n_pred, k)
        ctx_flat = np.ascontiguousarray(ctx.transpose(1, 0, 2)).reshape(n_pred * b, cfg.context_k)
        emitted = cond_per_pos[emit_from:]
        cond_flat = concat(emitted, axis=0) if len(emitted) > 1 else emitted[0]
        logits = fine_step(model, ctx_flat, cond_flat)
        targets = work[:, start : start + n_pred].T.reshape(-1)
    else:
        logits = Tensor(np.zeros((0, cfg.n_classes), dtype=cfg.np_dtype))
        targets = np.zeros(0, dtype=np.int64)

    new_state = GenerationState(
        coarse_h=coarse_h.data if coarse_h.ndim == 2 else coarse_h.data[None, :],
        mid_h=mid_h.data if mid_h.ndim == 2 else mid_h.data[None, :],
        history=work[:, -hl:].copy(),
        pos=chunk_abs + t,
    )
    return TeacherForced(
        logits=logits,
        targets=targets,
        n_pred=n_pred,
        batch=b,
        first_abs=chunk_abs + emit_from,
        state=new_state,
    )


def log_likelihood_batch(model: GeneratorModel, codes, feats, chunk_len: int = 4096) -> np.ndarray:
    """Sum of log p(sample | history, visual) in nats, per batch row."""
    cfg = model.config
    arr = _codes_2d(codes, cfg.coarse_size, "clip codes")
    b, t = arr.shape
    if t % cfg.coarse_size:
        raise ContractError(
            f"clip length {t} must be a multiple of the coarse frame size {cfg.coarse_size}"
        )
    if t <= cfg.coarse_size:
        raise ContractError(f"clip of {t} samples has no predictable positions")
    chunk_len = max(cfg.coarse_size, chunk_len - chunk_len % cfg.coarse_size)
    total = np.zeros(b, dtype=np.float64)
    state = None
    for start in range(0, t, chunk_len):
        chunk = arr[:, start : start + chunk_len]
        out = forward_teacher_forced(model, chunk, feats, state)
        state = out.state
        if out.n_pred:
            ce = out.losses().data.reshape(out.n_pred, b)
            total -= ce.sum(axis=0)
    return total


def log_likelihood(model: GeneratorModel, clip, feats) -> float:
    """Conditional log-likelihood of one clip given its visual features."""
    codes = clip.codes if isinstance(clip, QuantizedClip) else np.asarray(clip)
    return float(log_likelihood_batch(model, codes[None, :], feats)[0])


def predicted_positions(config: GeneratorConfig, n_samples: int) -> int:
    """Number of positions a cold-start pass over ``n_samples`` predicts."""
    return max(0, n_samples - config.coarse_size)


def sample_autoregressive(
    model: GeneratorModel,
    feats,
    n_samples: int,
    temperature: float = 1.0,
    seed: int = 0,
    sample_rate: float = 1.0,
) -> QuantizedClip:
    """Generate codes autoregressively, conditioned per the model's mode.

    Context before the first sample is silence (code 128).  ``temperature``
    scales the logits before sampling; 0 selects the argmax code (the
    zero-temperature limit).  Deterministic per (model, feats, seed,
    temperature).
    """
    cfg = model.config
    if n_samples < 1 or n_samples % cfg.coarse_size:
        raise ContractError(
            f"n_samples must be a positive multiple of the coarse frame size "
            f"{cfg.coarse_size}, got {n_samples}"
        )
    if temperature < 0:
        raise ContractError(f"temperature must be >= 0, got {temperature}")
    feat_batch = _as_feature_batch(model, feats)
    if feat_batch.shape[0] != 1:
        raise ContractError("sampling conditions on a single feature track")
    n_frames = feat_batch.shape[1]
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5A0D]))

    state = _initial_state(model, feat_batch)
    coarse_h: Tensor | np.ndarray = state.coarse_h
    mid_h: Tensor | np.ndarray = state.mid_h
    hl = cfg.history_len
    fs_c, fs_m, k = cfg.coarse_size, cfg.mid_size, cfg.context_k
    buf = np.full(hl + n_samples, SILENCE_CODE, dtype=np.int64)

    coarse_vecs: list[Tensor] = []
    mid_vecs: list[Tensor] = []
    for t in range(n_samples):
        p = hl + t
        if t % fs_c == 0:
            window = buf[p - fs_c : p][None, :]
            if cfg.mode == "frame":
                fi = min(max((t - fs_c) // cfg.step_size, 0), n_frames - 1)
                feat_row = feat_batch[:, fi, :].astype(cfg.np_dtype)
                coarse_vecs, coarse_h = coarse_step(model, window, feat_row, coarse_h)
            else:
                coarse_vecs, coarse_h = coarse_step(model, window, None, coarse_h)
        if t % fs_m == 0:
            cond = coarse_vecs[(t % fs_c) // fs_m]
            mid_vecs, mid_h = mid_step(model, buf[p - fs_m : p][None, :], cond, mid_h)
        logits = fine_step(model, buf[p - k : p][None, :], mid_vecs[t % fs_m]).data[0]
        if temperature == 0.0:
            code = int(np.argmax(logits))
        else:
            scaled = logits / temperature
            scaled = scaled - scaled.max()
            probs = np.exp(scaled)
            probs /= probs.sum()
            code = int(np.searchsorted(np.cumsum(probs), rng.random(), side="right"))
            code = min(code, cfg.n_classes - 1)
        buf[p] = code
    return QuantizedClip(buf[hl:], sample_rate)
