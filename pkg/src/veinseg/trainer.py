"""Training orchestration: epoch loop, heldout metrics, checkpoints, history.

Checkpoint file layout (version 1): magic ``VSEG``, little-endian u32
version, then a payload of (u32 length + UTF-8 JSON header) followed by
tensor records, and a little-endian u32 CRC32 of the payload as footer.
Each tensor record is u32 name length, name bytes, u8 dtype code (1 =
float32, 2 = float64), u32 rank, u32 dims, then raw little-endian data.
Tensors are stored in their native precision so that resuming reproduces
an uninterrupted run bit for bit.
"""

from __future__ import annotations

import json
import math
import struct
import time
import zlib
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .data import HELDOUT, TRAIN, Dataset
from .losses import ConfusionCounts, confusion, dice_loss, dice_loss_grad, metrics
from .model import ModelGraph, build, model_backward, model_forward
from .optim import AdamState, adam_step, init_adam, make_schedule
from .tensor import Tensor4, dtype_for
from .threads import thread_limit

MAGIC = b"VSEG"
VERSION = 1
_DTYPE_CODES = {np.dtype(np.float32): 1, np.dtype(np.float64): 2}
_CODE_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}


class CheckpointError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    kind: str = "proposed"
    widths: list[int] = field(default_factory=lambda: [64, 128, 256, 512])
    bridge_dilation: int = 2
    epochs: int = 100
    batch_size: int = 16
    lr: float = 1e-4
    smooth: float = 1.0
    threshold: float = 0.5
    seed: int = 0
    precision: int = 64
    target_h: int = 512
    target_w: int = 256
    dice_per_sample: bool = False
    post_add_relu: bool = False
    early_stop_train_loss: Optional[float] = None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown TrainConfig fields: {sorted(unknown)}")
        return cls(**d)

    def validate(self) -> None:
        if self.kind not in ("proposed", "resunet", "unet"):
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.lr <= 0 or self.smooth <= 0:
            raise ValueError("lr and smooth must be > 0")
        if not 0.0 < self.threshold < 1.0:
            raise ValueError(f"threshold must be in (0, 1), got {self.threshold}")
        dtype_for(self.precision)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_acc: float
    val_tpr: float
    val_tnr: float
    seconds: float


@dataclass
class EvalReport:
    acc: float
    tpr: float
    tnr: float
    dice: float
    n_pixels: int


@dataclass
class Checkpoint:
    version: int
    config: TrainConfig
    params: dict[str, np.ndarray]
    bn_state: dict[str, np.ndarray]
    adam_m: dict[str, np.ndarray]
    adam_v: dict[str, np.ndarray]
    adam_t: int
    adam_beta1: float
    adam_beta2: float
    adam_eps: float
    epoch: int
    bn_eps: float = 1e-5
    bn_momentum: float = 0.9


def build_from_config(cfg: TrainConfig) -> ModelGraph:
    return build(cfg.kind, 1, cfg.widths, cfg.bridge_dilation, seed=cfg.seed,
                 precision=cfg.precision, post_add_relu=cfg.post_add_relu)


def model_from_checkpoint(ckpt: Checkpoint) -> ModelGraph:
    g = build_from_config(ckpt.config)
    g.bn_eps = ckpt.bn_eps
    g.bn_momentum = ckpt.bn_momentum
    for store, loaded, label in ((g.params, ckpt.params, "params"), (g.bn_state, ckpt.bn_state, "bn state")):
        if set(store) != set(loaded):
            raise CheckpointError(f"checkpoint {label} names do not match the configured model")
        for name in store:
            if store[name].shape != loaded[name].shape:
                raise CheckpointError(f"checkpoint tensor {name} has shape {loaded[name].shape}, expected {store[name].shape}")
            store[name] = loaded[name].copy()
    return g


def _batch_arrays(dataset: Dataset, idxs: list[int], dtype: np.dtype) -> tuple[Tensor4, Tensor4]:
    imgs = np.concatenate([dataset.samples[i].image.array for i in idxs]).astype(dtype, copy=False)
    masks = np.concatenate([dataset.samples[i].mask.array for i in idxs]).astype(dtype, copy=False)
    return Tensor4(imgs), Tensor4(masks)


def _pooled_eval(g: ModelGraph, dataset: Dataset, idxs: list[int], cfg: TrainConfig):
    """Pooled dice and confusion over a sample subset, in fixed batch order."""
    dtype = dtype_for(cfg.precision)
    inter = 0.0
    pred_sum = 0.0
    target_sum = 0.0
    counts = ConfusionCounts(0, 0, 0, 0)
    for start in range(0, len(idxs), cfg.batch_size):
        chunk = idxs[start:start + cfg.batch_size]
        x, t = _batch_arrays(dataset, chunk, dtype)
        probs, _ = model_forward(g, x, mode="eval")
        inter += float((probs.array * t.array).sum())
        pred_sum += float(probs.array.sum())
        target_sum += float(t.array.sum())
        c = confusion(probs, t, cfg.threshold)
        counts = ConfusionCounts(counts.tp + c.tp, counts.fp + c.fp, counts.tn + c.tn, counts.fn + c.fn)
    dice = (2.0 * inter + cfg.smooth) / (pred_sum + target_sum + cfg.smooth)
    return 1.0 - dice, counts


def train(cfg: TrainConfig, dataset: Dataset, out_dir: str | Path | None = None,
          resume: Checkpoint | None = None,
          clock: Callable[[], float] = time.perf_counter) -> tuple[list[EpochRecord], Checkpoint]:
    """Run the full protocol; returns per-epoch history and the final checkpoint.

    ``clock`` exists so deterministic tests can pin the one wall-clock field;
    everything else in the history is a pure function of (cfg, dataset).
    """
    cfg.validate()
    train_idx = dataset.indices(TRAIN)
    held_idx = dataset.indices(HELDOUT)
    if not train_idx or not held_idx:
        raise ValueError(f"train: dataset must contain both splits, got {len(train_idx)} train / {len(held_idx)} heldout")
    if cfg.batch_size > len(train_idx):
        raise ValueError(f"train: batch_size {cfg.batch_size} exceeds train-set size {len(train_idx)}")
    for s in dataset.samples:
        if (s.image.h, s.image.w) != (cfg.target_h, cfg.target_w):
            raise ValueError(f"train: sample {s.id} is {s.image.h}x{s.image.w}, config expects {cfg.target_h}x{cfg.target_w}")

    dtype = dtype_for(cfg.precision)
    if resume is not None:
        g = model_from_checkpoint(resume)
        adam = AdamState(m={k: v.copy() for k, v in resume.adam_m.items()},
                         v={k: v.copy() for k, v in resume.adam_v.items()},
                         t=resume.adam_t, beta1=resume.adam_beta1,
                         beta2=resume.adam_beta2, eps=resume.adam_eps)
        start_epoch = resume.epoch
    else:
        g = build_from_config(cfg)
        adam = init_adam(g.params)
        start_epoch = 0

    schedule = make_schedule(cfg.seed, len(train_idx), cfg.batch_size, cfg.epochs)
    history: list[EpochRecord] = []
    with thread_limit():
        for epoch in range(start_epoch, cfg.epochs):
            t0 = clock()
            losses = []
            for bi, batch in enumerate(schedule.epoch_batches(epoch)):
                idxs = [train_idx[j] for j in batch]
                x, t = _batch_arrays(dataset, idxs, dtype)
                probs, ctx = model_forward(g, x, mode="train")
                loss = dice_loss(probs, t, cfg.smooth, cfg.dice_per_sample)
                if not math.isfinite(loss):
                    raise RuntimeError(f"non-finite training loss {loss!r} at epoch {epoch + 1}, batch {bi}")
                grad = dice_loss_grad(probs, t, cfg.smooth, cfg.dice_per_sample)
                grads = model_backward(g, grad, ctx)
                adam_step(g.params, grads, adam, cfg.lr)
                losses.append(loss)
            train_loss = float(np.mean(losses))
            val_loss, counts = _pooled_eval(g, dataset, held_idx, cfg)
            acc, tpr, tnr = metrics(counts)
            record = EpochRecord(epoch=epoch + 1, train_loss=train_loss, val_loss=val_loss,
                                 val_acc=acc, val_tpr=tpr, val_tnr=tnr, seconds=clock() - t0)
            for value in (record.train_loss, record.val_loss, record.val_acc, record.val_tpr, record.val_tnr):
                if not math.isfinite(value):
                    raise RuntimeError(f"non-finite epoch record value at epoch {epoch + 1}")
            history.append(record)
            if cfg.early_stop_train_loss is not None and train_loss <= cfg.early_stop_train_loss:
                break

    ckpt = Checkpoint(version=VERSION, config=cfg, params=g.params, bn_state=g.bn_state,
                      adam_m=adam.m, adam_v=adam.v, adam_t=adam.t, adam_beta1=adam.beta1,
                      adam_beta2=adam.beta2, adam_eps=adam.eps,
                      epoch=history[-1].epoch if history else start_epoch,
                      bn_eps=g.bn_eps, bn_momentum=g.bn_momentum)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        save_checkpoint(ckpt, out_dir / "checkpoint.vseg")
        export_history(history, out_dir / "history.csv")
        render_curves(history, out_dir / "curves.svg")
    return history, ckpt


def evaluate(ckpt: Checkpoint, dataset: Dataset, split: str) -> EvalReport:
    """Pooled-pixel metrics for one split at the checkpoint's threshold."""
    idxs = dataset.indices(split)
    if not idxs:
        raise ValueError(f"evaluate: no samples tagged {split!r}")
    cfg = ckpt.config
    for i in idxs:
        s = dataset.samples[i]
        if (s.image.h, s.image.w) != (cfg.target_h, cfg.target_w):
            raise ValueError(f"evaluate: sample {s.id} is {s.image.h}x{s.image.w}, checkpoint expects {cfg.target_h}x{cfg.target_w}")
    g = model_from_checkpoint(ckpt)
    with thread_limit():
        val_loss, counts = _pooled_eval(g, dataset, idxs, cfg)
    acc, tpr, tnr = metrics(counts)
    report = EvalReport(acc=acc, tpr=tpr, tnr=tnr, dice=1.0 - val_loss, n_pixels=counts.total)
    print(f"eval[{split}] acc={report.acc:.6f} tpr={report.tpr:.6f} tnr={report.tnr:.6f} "
          f"dice={report.dice:.6f} n_pixels={report.n_pixels}")
    return report


# ---------------------------------------------------------------------------
# Checkpoint serialization
# ---------------------------------------------------------------------------

def _pack_tensor(name: str, arr: np.ndarray) -> bytes:
    code = _DTYPE_CODES.get(arr.dtype)
    if code is None:
        raise CheckpointError(f"cannot serialize tensor {name} of dtype {arr.dtype}")
    nb = name.encode("utf-8")
    out = [struct.pack("<I", len(nb)), nb, struct.pack("<B", code),
           struct.pack("<I", arr.ndim)]
    out += [struct.pack("<I", d) for d in arr.shape]
    out.append(arr.astype(_CODE_DTYPES[code], copy=False).tobytes())
    return b"".join(out)


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    header = {
        "config": ckpt.config.to_dict(),
        "epoch": ckpt.epoch,
        "adam": {"beta1": ckpt.adam_beta1, "beta2": ckpt.adam_beta2,
                 "eps": ckpt.adam_eps, "t": ckpt.adam_t},
        "norm": {"eps": ckpt.bn_eps, "momentum": ckpt.bn_momentum},
    }
    hb = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    chunks = [struct.pack("<I", len(hb)), hb]
    for section, tensors in (("param", ckpt.params), ("bn", ckpt.bn_state),
                             ("adam_m", ckpt.adam_m), ("adam_v", ckpt.adam_v)):
        for name, arr in tensors.items():
            chunks.append(_pack_tensor(f"{section}/{name}", arr))
    payload = b"".join(chunks)
    blob = MAGIC + struct.pack("<I", VERSION) + payload + struct.pack("<I", zlib.crc32(payload))
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(blob)


def load_checkpoint(path: str | Path) -> Checkpoint:
    blob = Path(path).read_bytes()
    if len(blob) < 12:
        raise CheckpointError(f"{path}: truncated checkpoint ({len(blob)} bytes)")
    if blob[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {blob[:4]!r}, not a checkpoint")
    (version,) = struct.unpack("<I", blob[4:8])
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}, expected {VERSION}")
    payload = blob[8:-4]
    (crc,) = struct.unpack("<I", blob[-4:])
    if zlib.crc32(payload) != crc:
        raise CheckpointError(f"{path}: checksum failure, file is corrupt")
    try:
        off = 0
        (hlen,) = struct.unpack_from("<I", payload, off)
        off += 4
        header = json.loads(payload[off:off + hlen].decode("utf-8"))
        off += hlen
        sections: dict[str, dict[str, np.ndarray]] = {"param": {}, "bn": {}, "adam_m": {}, "adam_v": {}}
        while off < len(payload):
            (nlen,) = struct.unpack_from("<I", payload, off)
            off += 4
            full_name = payload[off:off + nlen].decode("utf-8")
            off += nlen
            (code,) = struct.unpack_from("<B", payload, off)
            off += 1
            (rank,) = struct.unpack_from("<I", payload, off)
            off += 4
            dims = struct.unpack_from(f"<{rank}I", payload, off)
            off += 4 * rank
            dtype = _CODE_DTYPES[code]
            nbytes = int(np.prod(dims)) * dtype.itemsize
            if off + nbytes > len(payload):
                raise CheckpointError(f"{path}: truncated tensor record {full_name}")
            arr = np.frombuffer(payload, dtype=dtype, count=int(np.prod(dims)), offset=off).reshape(dims).copy()
            off += nbytes
            section, name = full_name.split("/", 1)
            sections[section][name] = arr
    except (struct.error, KeyError, ValueError, UnicodeDecodeError) as e:
        if isinstance(e, CheckpointError):
            raise
        raise CheckpointError(f"{path}: malformed checkpoint: {e}") from e
    cfg = TrainConfig.from_dict(header["config"])
    adam = header["adam"]
    norm = header.get("norm", {"eps": 1e-5, "momentum": 0.9})
    return Checkpoint(version=version, config=cfg, params=sections["param"],
                      bn_state=sections["bn"], adam_m=sections["adam_m"],
                      adam_v=sections["adam_v"], adam_t=adam["t"], adam_beta1=adam["beta1"],
                      adam_beta2=adam["beta2"], adam_eps=adam["eps"], epoch=header["epoch"],
                      bn_eps=norm["eps"], bn_momentum=norm["momentum"])


# ---------------------------------------------------------------------------
# History export and plotting
# ---------------------------------------------------------------------------

HISTORY_HEADER = "epoch,train_loss,val_loss,val_acc,val_tpr,val_tnr,seconds"


def export_history(history: list[EpochRecord], path: str | Path) -> None:
    lines = [HISTORY_HEADER]
    for r in history:
        lines.append(",".join([str(r.epoch), repr(r.train_loss), repr(r.val_loss),
                               repr(r.val_acc), repr(r.val_tpr), repr(r.val_tnr), repr(r.seconds)]))
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text("\n".join(lines) + "\n")


def load_history(path: str | Path) -> list[EpochRecord]:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != HISTORY_HEADER:
        raise ValueError(f"{path}: not a history CSV (bad header)")
    out = []
    for ln in lines[1:]:
        parts = ln.split(",")
        if len(parts) != 7:
            raise ValueError(f"{path}: malformed history row {ln!r}")
        out.append(EpochRecord(epoch=int(parts[0]), train_loss=float(parts[1]),
                               val_loss=float(parts[2]), val_acc=float(parts[3]),
                               val_tpr=float(parts[4]), val_tnr=float(parts[5]),
                               seconds=float(parts[6])))
    return out


def _polyline(xs: list[float], ys: list[float], color: str) -> str:
    pts = " ".join(f"{x:.3f},{y:.3f}" for x, y in zip(xs, ys))
    return f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>'


def _panel(x0: float, y0: float, w: float, h: float, title: str, ylabel: str,
           epochs: list[int], values: list[float], ymin: float, ymax: float, color: str) -> str:
    span = max(ymax - ymin, 1e-12)
    emax = max(epochs)
    exspan = max(emax - 1, 1)
    xs = [x0 + (e - 1) / exspan * w for e in epochs]
    ys = [y0 + h - (v - ymin) / span * h for v in values]
    parts = [
        f'<line x1="{x0}" y1="{y0 + h}" x2="{x0 + w}" y2="{y0 + h}" stroke="black"/>',
        f'<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y0 + h}" stroke="black"/>',
        f'<text x="{x0 + w / 2}" y="{y0 - 12}" text-anchor="middle" font-size="14">{title}</text>',
        f'<text x="{x0 + w / 2}" y="{y0 + h + 34}" text-anchor="middle" font-size="12">epoch</text>',
        f'<text x="{x0 - 46}" y="{y0 + h / 2}" font-size="12" transform="rotate(-90 {x0 - 46} {y0 + h / 2})" text-anchor="middle">{ylabel}</text>',
        f'<text x="{x0 - 6}" y="{y0 + h + 4}" text-anchor="end" font-size="10">{ymin:.4g}</text>',
        f'<text x="{x0 - 6}" y="{y0 + 10}" text-anchor="end" font-size="10">{ymax:.4g}</text>',
        f'<text x="{x0}" y="{y0 + h + 16}" text-anchor="middle" font-size="10">1</text>',
        f'<text x="{x0 + w}" y="{y0 + h + 16}" text-anchor="middle" font-size="10">{emax}</text>',
        _polyline(xs, ys, color),
    ]
    return "\n".join(parts)


def render_curves(history: list[EpochRecord], path: str | Path) -> None:
    """Loss-vs-epoch and accuracy-vs-epoch line charts in one deterministic SVG."""
    if not history:
        raise ValueError("render_curves: history is empty")
    epochs = [r.epoch for r in history]
    train_loss = [r.train_loss for r in history]
    val_acc = [r.val_acc for r in history]
    loss_max = max(max(train_loss), 1e-9)
    body = "\n".join([
        '<svg xmlns="http://www.w3.org/2000/svg" width="900" height="380" viewBox="0 0 900 380">',
        '<rect width="900" height="380" fill="white"/>',
        _panel(70, 50, 330, 260, "training loss", "dice loss", epochs, train_loss, 0.0, loss_max, "#c42020"),
        _panel(520, 50, 330, 260, "heldout accuracy", "accuracy", epochs, val_acc, 0.0, 1.0, "#2040c4"),
        "</svg>",
    ])
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(body + "\n")
