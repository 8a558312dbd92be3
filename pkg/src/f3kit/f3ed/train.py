"""Teacher-forced training with AdamW and a warmup-cosine schedule.

The classifier and refiner consume ground-truth event locations throughout
training; the localizer is trained densely on every frame.  Augmentation
(feature noise) applies to training batches only.  The checkpoint with the
best validation loss is retained.
"""

from __future__ import annotations

import json
import struct
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from ..dataset_io import load_clip_payload, read_manifest, windowize
from ..taxonomy import load_taxonomy
from ..neural import AdamW, ParamStore, warmup_cosine
from .model import F3EDConfig, F3EDModel


def prepare_windows(clips, root, config: F3EDConfig, model: F3EDModel):
    """Slice every clip into strided windows with attached frame data."""
    tax = model.taxonomy
    dt = config.np_dtype()
    items = []
    for clip in clips:
        payload = load_clip_payload(clip, root)
        for w in windowize(clip, tax.K, config.clip_length, config.stride,
                           config.window_overlap):
            frames = w.frames
            x_shape = (config.clip_length,) + payload.shape[1:]
            x = np.zeros(x_shape, dtype=dt)
            n_valid = int(w.valid.sum())
            x[:n_valid] = payload[frames[:n_valid]]
            item = {
                "clip_id": clip.clip_id,
                "x": x,
                "valid": w.valid.astype(dt),
                "length": n_valid,
                "fg": w.foreground.astype(dt),
                "el": w.elements.astype(dt),
                "events": [(int(p), vec) for p, _, vec in w.events],
            }
            if model.class_list is not None:
                cls = np.zeros(config.clip_length, dtype=np.int64)
                for p, _, vec in w.events:
                    name = tax.decode(tax.project(vec, model.g), model.g)
                    cls[p] = model.class_index.get(name, 0)
                item["cls"] = cls
            items.append(item)
    return items


def collate(items, config: F3EDConfig, multiclass=False):
    """Stack window items into one batch dict for the model."""
    dt = config.np_dtype()
    B = len(items)
    x = np.stack([it["x"] for it in items]).astype(dt)
    batch = {
        "x": x,
        "valid": np.stack([it["valid"] for it in items]),
        "lengths": np.array([it["length"] for it in items]),
        "fg": np.stack([it["fg"] for it in items]),
        "el": np.stack([it["el"] for it in items]),
    }
    win_idx, positions, order, seq_lengths = [], [], [], []
    for b, it in enumerate(items):
        evs = sorted(it["events"], key=lambda pv: pv[0])
        for slot, (p, _) in enumerate(evs):
            win_idx.append(b)
            positions.append(p)
            order.append((b, slot))
        seq_lengths.append(len(evs))
    batch["events"] = (np.array(win_idx, dtype=int),
                       np.array(positions, dtype=int),
                       order, seq_lengths)
    if multiclass:
        batch["cls"] = np.stack([it["cls"] for it in items])
    return batch


@dataclass
class TrainResult:
    params: ParamStore
    config: F3EDConfig
    log: list = field(default_factory=list)
    best_epoch: int = -1
    best_val: float = float("inf")


def _label_statistics(items, K):
    """Foreground rate, per-element event rates and window sample weights.

    Windows holding rare elements are drawn more often (up to 8x, by
    inverse square-root frequency), which counters the long-tail without
    touching the loss definition."""
    fg_total, valid_total = 0.0, 0.0
    counts = np.zeros(K)
    n_events = 0
    for it in items:
        fg_total += float(it["fg"].sum())
        valid_total += float(it["valid"].sum())
        for _p, vec in it["events"]:
            counts += np.asarray(vec)
            n_events += 1
    rates = counts / max(n_events, 1)
    weights = np.ones(len(items))
    floor = 0.05
    for i, it in enumerate(items):
        present = [rates[np.asarray(vec) > 0.5].min()
                   for _p, vec in it["events"] if np.asarray(vec).any()]
        if present:
            rarest = max(min(present), 1e-4)
            weights[i] = float(np.clip(np.sqrt(floor / rarest), 1.0, 8.0))
    return fg_total / max(valid_total, 1.0), rates, weights


def train(config: F3EDConfig, dataset_dir, checkpoint_path=None,
          stop_when=None, quiet=True):
    """Train on a dataset directory's train/val splits.

    `stop_when(entry)` may end training early based on the per-epoch log
    entry.  Returns a TrainResult whose params are the best-validation
    snapshot; optionally writes it as a checkpoint file.
    """
    root = Path(dataset_dir)
    clips, tax = read_manifest(root / "manifest.f3")
    model = F3EDModel(config, tax)
    train_clips = [c for c in clips if c.split == "train"]
    val_clips = [c for c in clips if c.split == "val"]
    if not train_clips:
        raise ValueError("dataset has no training split")

    multiclass = config.head_mode == "multi-class"
    train_items = prepare_windows(train_clips, root, config, model)
    val_items = prepare_windows(val_clips, root, config, model)
    fg_rate, element_rates, sample_weights = _label_statistics(
        train_items, tax.K)
    if not multiclass:
        model.calibrate_biases(fg_rate, element_rates)
    sample_p = sample_weights / sample_weights.sum()

    opt = AdamW(model.params, lr=config.base_lr,
                weight_decay=config.weight_decay)
    warmup = min(config.warmup_epochs, config.epochs - 1)
    schedule = warmup_cosine(config.base_lr, warmup, config.epochs)
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0x7EA1]))

    result = TrainResult(model.params, config)
    best_params = None
    for epoch in range(1, config.epochs + 1):
        t0 = time.time()
        lr = schedule(epoch)
        order = rng.choice(len(train_items), size=len(train_items), p=sample_p)
        total = 0.0
        nb = 0
        for i in range(0, len(order), config.batch_size):
            items = [train_items[j] for j in order[i:i + config.batch_size]]
            batch = collate(items, config, multiclass)
            if config.noise_augment > 0 and config.render_mode == "features":
                batch["x"] = batch["x"] + rng.normal(
                    0.0, config.noise_augment, batch["x"].shape
                ).astype(batch["x"].dtype)
            model.params.zero_grads()
            losses = model.forward_backward(batch)
            opt.step(lr=lr)
            total += losses["total"]
            nb += 1

        val_loss = evaluate_loss(model, val_items, config, multiclass) \
            if val_items else float("nan")
        entry = {
            "epoch": epoch,
            "lr": lr,
            "train_loss": total / max(nb, 1),
            "val_loss": val_loss,
            "seconds": time.time() - t0,
            "teacher_forcing": True,
        }
        result.log.append(entry)
        if not quiet:
            print(f"epoch {epoch:3d} lr {lr:.2e} "
                  f"train {entry['train_loss']:.4f} val {val_loss:.4f} "
                  f"({entry['seconds']:.1f}s)")
        if val_items and val_loss < result.best_val:
            result.best_val = val_loss
            result.best_epoch = epoch
            best_params = _copy_params(model.params)
        if stop_when is not None and stop_when(entry):
            break

    if best_params is not None:
        result.params = best_params
    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, result.params, config)
    return result


def evaluate_loss(model, items, config, multiclass=False):
    """Teacher-forced loss over a window list, without gradients."""
    total, nb = 0.0, 0
    for i in range(0, len(items), config.batch_size):
        batch = collate(items[i:i + config.batch_size], config, multiclass)
        losses = model.forward_backward(batch, accumulate=False)
        total += losses["total"]
        nb += 1
    return total / max(nb, 1)


def _copy_params(params):
    out = ParamStore({k: np.array(v, copy=True) for k, v in params.items()})
    return out


# ----------------------------------------------------------------------
# checkpoints: versioned header + named float32 blobs

_CKPT_MAGIC = b"F3CK"


def save_checkpoint(path, params, config: F3EDConfig):
    names = sorted(params)
    header = {
        "version": 1,
        "config": asdict(config),
        "params": [{"name": n, "shape": list(params[n].shape)} for n in names],
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for n in names:
            fh.write(np.ascontiguousarray(params[n], dtype="<f4").tobytes())


def load_checkpoint(path):
    """Returns (model, config) with parameters restored."""
    with open(path, "rb") as fh:
        if fh.read(4) != _CKPT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode())
        if header["version"] != 1:
            raise ValueError(f"unsupported checkpoint version {header['version']}")
        cfg_dict = dict(header["config"])
        for key in ("conv_channels", "post_event_offsets"):
            if key in cfg_dict and isinstance(cfg_dict[key], list):
                cfg_dict[key] = tuple(cfg_dict[key])
        config = F3EDConfig(**cfg_dict)
        model = F3EDModel(config)
        dt = config.np_dtype()
        for meta in header["params"]:
            shape = tuple(meta["shape"])
            count = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(fh.read(count * 4), dtype="<f4")
            model.params[meta["name"]] = data.reshape(shape).astype(dt)
    return model, config
