"""Patch-based training loop for the restoration network.

Plain epoch loop: shuffle pairs without replacement, cut into ceil(n/batch)
chunks, crop one random patch per pair, step Adam on the summed-square patch
loss. Validation runs on whole images each epoch; the parameters that scored
the best validation loss are what the caller gets back.
"""

import copy
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .datafiles import coerce_bool, read_config, write_config
from .engine import AdamHyper, AdamState, adam_step
from .errors import ConfigError, DataError, NumericalError, TrainingDivergedError
from .network import (
    Network,
    backward,
    forward,
    gradient_arrays,
    save_checkpoint,
    with_parameters,
)


@dataclass
class TrainConfig:
    batch_size: int = 8
    learning_rate: float = 1e-4
    weight_decay: float = 1e-5
    patch_size: int = 256
    max_epochs: int = 50
    plateau_patience: int = 3
    lr_decay: float = 10.0
    lr_floor: float = 1e-7
    seed: int = 0
    per_pixel_loss: bool = False

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be at least 1")
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must not be negative")
        if self.patch_size < 1:
            raise ConfigError("patch_size must be at least 1")
        if self.plateau_patience < 1:
            raise ConfigError("plateau_patience must be at least 1")
        if self.lr_decay <= 1.0:
            raise ConfigError("lr_decay must exceed 1")

    def to_file(self, path) -> None:
        write_config(path, {f.name: getattr(self, f.name) for f in fields(self)})

    @classmethod
    def from_file(cls, path) -> "TrainConfig":
        raw = read_config(path)
        kwargs = {}
        for f in fields(cls):
            if f.name not in raw:
                continue
            text = raw.pop(f.name)
            kind = f.type if isinstance(f.type, str) else f.type.__name__
            try:
                if kind == "bool":
                    kwargs[f.name] = coerce_bool(text)
                elif kind == "int":
                    kwargs[f.name] = int(text)
                else:
                    kwargs[f.name] = float(text)
            except ValueError as exc:
                raise ConfigError(f"bad value for {f.name}: {text!r}") from exc
        if raw:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(raw))}")
        return cls(**kwargs)


def l2_patch_loss(output: np.ndarray, target: np.ndarray, per_pixel: bool = False):
    """Summed squared error averaged over the batch axis only.

    Returns (loss, grad). With per_pixel the mean also runs over channels and
    pixels, which changes the gradient scale but not its direction.
    """
    output = np.asarray(output)
    target = np.asarray(target)
    if output.shape != target.shape or output.ndim != 4:
        raise ConfigError(
            f"loss needs matching (n, c, h, w) arrays, got {output.shape} vs {target.shape}"
        )
    n = output.shape[0]
    denom = float(n)
    if per_pixel:
        denom *= output[0].size
    diff = output - target
    loss = float((diff * diff).sum() / denom)
    grad = (2.0 / denom) * diff
    return loss, grad


def crop_batch(pairs, indices, patch: int, rng: np.random.Generator):
    """Stack identically positioned random crops into (n, c, patch, patch)."""
    xs, ys = [], []
    for i in indices:
        moire, ref = pairs[i]
        h, w = moire.shape[:2]
        top = int(rng.integers(0, h - patch + 1))
        left = int(rng.integers(0, w - patch + 1))
        xs.append(moire[top : top + patch, left : left + patch].transpose(2, 0, 1))
        ys.append(ref[top : top + patch, left : left + patch].transpose(2, 0, 1))
    return np.stack(xs), np.stack(ys)


def _as_pair_arrays(pairs, channels: int):
    out = []
    for moire, ref in pairs:
        m = np.asarray(moire, dtype=np.float64)
        r = np.asarray(ref, dtype=np.float64)
        if m.ndim == 2:
            m = m[:, :, None]
        if r.ndim == 2:
            r = r[:, :, None]
        if m.shape != r.shape:
            raise DataError(f"pair shapes differ: {m.shape} vs {r.shape}")
        if m.shape[2] != channels:
            raise DataError(f"pair has {m.shape[2]} channels, network expects {channels}")
        out.append((m, r))
    return out


def _crop_to_divisor(img: np.ndarray, d: int) -> np.ndarray:
    h, w = img.shape[:2]
    return img[: h - h % d or h, : w - w % d or w]


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_loss: float
    learning_rate: float


@dataclass
class TrainResult:
    network: Network  # parameters of the best validation epoch
    history: list[EpochStats] = field(repr=False)
    best_val_loss: float = float("nan")
    stopped: str = "max_epochs"


def validation_loss(net: Network, pairs, per_pixel: bool = False) -> float:
    """Whole-image loss, one pair per batch; dims trimmed to the network's
    divisor."""
    d = net.config.divisor
    total = 0.0
    for moire, ref in pairs:
        x = _crop_to_divisor(moire, d).transpose(2, 0, 1)[None]
        t = _crop_to_divisor(ref, d).transpose(2, 0, 1)[None]
        out = forward(net, x)
        loss, _ = l2_patch_loss(out.fused, t, per_pixel=per_pixel)
        total += loss
    return total / len(pairs)


def train(
    net: Network,
    train_pairs,
    val_pairs,
    config: TrainConfig = TrainConfig(),
    log=None,
    dump_path=None,
) -> TrainResult:
    """Run the loop until max_epochs or the learning rate decays through the
    floor. Returns the best-validation parameters.

    A non-finite loss or gradient aborts with TrainingDivergedError after
    writing the most recent finite parameters to dump_path (when given).
    """
    emit = log if log is not None else (lambda line: None)
    channels = net.config.input_channels
    train_pairs = _as_pair_arrays(train_pairs, channels)
    val_pairs = _as_pair_arrays(val_pairs, channels)
    if not val_pairs:
        raise DataError("validation set is empty")

    patch = config.patch_size
    usable = []
    for i, (moire, _) in enumerate(train_pairs):
        h, w = moire.shape[:2]
        if h < patch or w < patch:
            emit(f"skip pair {i}: {h}x{w} smaller than patch {patch}")
            continue
        usable.append(i)
    if not usable:
        raise DataError(f"no training pair is at least {patch}x{patch}")

    rng = np.random.default_rng(config.seed)
    params = {k: v.copy() for k, v in net.parameter_arrays().items()}
    net = with_parameters(net, params)
    state = AdamState.initial(params)
    lr = config.learning_rate

    best_val = float("inf")
    best_params = copy.deepcopy(params)
    stale = 0
    history: list[EpochStats] = []
    stopped = "max_epochs"

    def diverged(what: str) -> TrainingDivergedError:
        if dump_path is not None:
            save_checkpoint(with_parameters(net, best_params), dump_path)
            where = f"; last good parameters dumped to {dump_path}"
        else:
            where = ""
        return TrainingDivergedError(f"{what}{where}")

    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(len(usable))
        chunk_losses = []
        for start in range(0, len(order), config.batch_size):
            chunk = [usable[j] for j in order[start : start + config.batch_size]]
            x, t = crop_batch(train_pairs, chunk, patch, rng)
            try:
                out = forward(net, x, want_tape=True)
                loss, grad = l2_patch_loss(out.fused, t, per_pixel=config.per_pixel_loss)
                if not np.isfinite(loss):
                    raise diverged(f"non-finite training loss in epoch {epoch}")
                grads = gradient_arrays(backward(net, out, grad))
                hyper = AdamHyper(learning_rate=lr, weight_decay=config.weight_decay)
                params, state = adam_step(params, grads, state, hyper)
            except NumericalError as exc:
                raise diverged(f"epoch {epoch}: {exc}") from exc
            net = with_parameters(net, params)
            chunk_losses.append(loss)

        train_loss = float(np.mean(chunk_losses))
        try:
            val_loss = validation_loss(net, val_pairs, per_pixel=config.per_pixel_loss)
        except NumericalError as exc:
            raise diverged(f"epoch {epoch}: {exc}") from exc
        if not np.isfinite(val_loss):
            raise diverged(f"non-finite validation loss in epoch {epoch}")
        history.append(EpochStats(epoch, train_loss, val_loss, lr))
        emit(
            f"epoch {epoch}/{config.max_epochs} train {train_loss:.6f} "
            f"val {val_loss:.6f} lr {lr:.2e}"
        )

        if val_loss < best_val:
            best_val = val_loss
            best_params = copy.deepcopy(params)
            stale = 0
        else:
            stale += 1
            if stale >= config.plateau_patience:
                lr /= config.lr_decay
                stale = 0
                emit(f"plateau: learning rate dropped to {lr:.2e}")
                if lr < config.lr_floor:
                    stopped = "lr_floor"
                    break

    return TrainResult(
        network=with_parameters(net, best_params),
        history=history,
        best_val_loss=best_val,
        stopped=stopped,
    )


def train_from_manifests(net, train_manifest, val_manifest, config, log=None, dump_path=None):
    from .synth import load_pairs

    return train(
        net,
        load_pairs(Path(train_manifest)),
        load_pairs(Path(val_manifest)),
        config,
        log=log,
        dump_path=dump_path,
    )
