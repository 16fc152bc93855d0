"""Two-stage training, plateau scheduling, augmentation and evaluation loops."""
from __future__ import annotations

import copy
import csv
import dataclasses
import logging
import random
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .checkpoint import save_checkpoint
from .errors import ConfigError
from .grids import GridGeometry, GridSample, crop_scene, rotate_sample
from .metrics import OBSTACLE, CSAccumulator, cs_accumulate, made, metrics_report, mfde, obstacle_free_rate
from .models.gridgen import GridGenerator, grid_loss, occupancy
from .models.sampler import TrajectorySampler, to_world, variety_loss

log = logging.getLogger(__name__)

STAGES = ("gridgen", "sampler")


@dataclass
class TrainConfig:
    stage: str = "gridgen"
    learning_rate: float = 2e-4
    batch_size: int = 16
    max_epochs: int = 20
    max_iterations: int | None = None
    scheduler_patience: int = 4
    scheduler_factor: float = 0.5
    augment_rotation: bool = True
    seed: int = 0
    betas: tuple[float, float] = (0.5, 0.999)
    variety_relax: float = 0.0  # sampler stage: weight shared by the non-winning candidates

    def __post_init__(self):
        self.betas = tuple(self.betas)
        self.validate()

    def validate(self):
        if self.stage not in STAGES:
            raise ConfigError(f"stage must be one of {STAGES}, got {self.stage!r}")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        if self.scheduler_patience < 1:
            raise ConfigError("scheduler_patience must be >= 1")
        if not 0 < self.scheduler_factor < 1:
            raise ConfigError("scheduler_factor must lie in (0, 1)")
        if not 0.0 <= self.variety_relax < 1.0:
            raise ConfigError("variety_relax must lie in [0, 1)")
        if self.batch_size < 1 or self.max_epochs < 0:
            raise ConfigError("batch_size must be >= 1 and max_epochs >= 0")

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


class PlateauScheduler:
    """Multiply the learning rate by ``factor`` after ``patience`` epochs without improvement.

    An epoch improves when its loss is strictly below the best seen so far.
    The counter restarts after every reduction.
    """

    def __init__(self, optimizer=None, lr: float | None = None, patience: int = 4,
                 factor: float = 0.5, min_lr: float = 0.0):
        if patience < 1:
            raise ConfigError("patience must be >= 1")
        self.optimizer = optimizer
        self.lr = lr if lr is not None else optimizer.param_groups[0]["lr"]
        self.patience = patience
        self.factor = factor
        self.min_lr = min_lr
        self.best = float("inf")
        self.bad_epochs = 0
        self.reductions = 0

    def step(self, loss: float) -> bool:
        if loss < self.best:
            self.best = loss
            self.bad_epochs = 0
            return False
        self.bad_epochs += 1
        if self.bad_epochs < self.patience:
            return False
        self.bad_epochs = 0
        new_lr = max(self.lr * self.factor, self.min_lr)
        if new_lr >= self.lr:
            return False
        self.lr = new_lr
        self.reductions += 1
        if self.optimizer is not None:
            for group in self.optimizer.param_groups:
                group["lr"] = new_lr
        return True


def seed_everything(seed: int):
    random.seed(seed)
    np.random.seed(seed % 2 ** 32)
    torch.manual_seed(seed)


def collate(samples: list[GridSample], dtype=torch.float32) -> dict:
    return {
        "past": torch.as_tensor(np.stack([s.past_grid for s in samples]), dtype=dtype),
        "scene": torch.as_tensor(np.stack([s.scene_grid for s in samples]), dtype=dtype),
        "target": torch.as_tensor(np.stack([s.target_grids for s in samples]), dtype=dtype),
        "future": torch.as_tensor(np.stack([s.future_xy / s.scale for s in samples]), dtype=dtype),
    }


def _batches(samples, batch_size, rng, augment, shuffle=True):
    order = rng.permutation(len(samples)) if shuffle else np.arange(len(samples))
    for start in range(0, len(order), batch_size):
        chunk = [samples[i] for i in order[start:start + batch_size]]
        if augment:
            chunk = [rotate_sample(s, float(rng.uniform(0.0, 360.0))) for s in chunk]
        yield chunk


def _dtype(model):
    return next(model.parameters()).dtype


@dataclass
class TrainResult:
    model: torch.nn.Module
    curve: list[dict] = field(default_factory=list)
    best_val: float = float("inf")
    checkpoint: Path | None = None
    iterations: int = 0


def _stage_loss(stage, model, batch, gridgen=None, positive_class_weight=1.0, relax=0.0):
    if stage == "gridgen":
        return grid_loss(model(batch["past"], batch["scene"]), batch["target"], positive_class_weight)
    with torch.no_grad():
        probs = occupancy(gridgen(batch["past"], batch["scene"]))
    return variety_loss(model(probs), batch["future"], relax)


def _mean_loss(stage, model, samples, batch_size, gridgen=None, weight=1.0):
    # validation always reports the plain best-of-K loss
    if not samples:
        return float("nan")
    model.eval()
    total = 0.0
    with torch.no_grad():
        for start in range(0, len(samples), batch_size):
            chunk = samples[start:start + batch_size]
            batch = collate(chunk, _dtype(model))
            total += _stage_loss(stage, model, batch, gridgen, weight).item() * len(chunk)
    return total / len(samples)


def train_stage(cfg: TrainConfig, train_samples, model, val_samples=None, gridgen=None,
                run_dir=None) -> TrainResult:
    """Adam + plateau scheduler epoch loop for either stage.

    The sampler stage needs a trained, frozen ``gridgen``. Validation loss
    (training loss when no validation set is given) drives the scheduler and
    picks the retained weights. With ``run_dir`` the best checkpoint and a
    ``loss_curve.csv`` are written there.
    """
    cfg.validate()
    if cfg.stage == "sampler":
        if gridgen is None:
            raise ConfigError("sampler training needs a frozen grid-generation checkpoint")
        gridgen.eval()
        for p in gridgen.parameters():
            p.requires_grad_(False)
    seed_everything(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    train_samples = list(train_samples)
    val_samples = list(val_samples or [])
    weight = getattr(getattr(model, "cfg", None), "positive_class_weight", 1.0)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate, betas=cfg.betas)
    sched = PlateauScheduler(opt, patience=cfg.scheduler_patience, factor=cfg.scheduler_factor)
    result = TrainResult(model=model)
    best_state = copy.deepcopy(model.state_dict())
    run_dir = Path(run_dir) if run_dir else None
    dtype = _dtype(model)

    for epoch in range(1, cfg.max_epochs + 1):
        if cfg.max_iterations is not None and result.iterations >= cfg.max_iterations:
            break
        model.train()
        total, seen = 0.0, 0
        for chunk in _batches(train_samples, cfg.batch_size, rng, cfg.augment_rotation):
            if cfg.max_iterations is not None and result.iterations >= cfg.max_iterations:
                break
            loss = _stage_loss(cfg.stage, model, collate(chunk, dtype), gridgen, weight, cfg.variety_relax)
            opt.zero_grad()
            loss.backward()
            opt.step()
            result.iterations += 1
            total += loss.item() * len(chunk)
            seen += len(chunk)
        train_loss = total / max(seen, 1)
        val_loss = _mean_loss(cfg.stage, model, val_samples, cfg.batch_size, gridgen, weight)
        monitor = val_loss if val_samples else train_loss
        lr = opt.param_groups[0]["lr"]
        result.curve.append({"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss, "lr": lr})
        log.info("%s epoch %d train %.5f val %.5f lr %.2e", cfg.stage, epoch, train_loss, val_loss, lr)
        if monitor < result.best_val:
            result.best_val = monitor
            best_state = copy.deepcopy(model.state_dict())
        sched.step(monitor)

    model.load_state_dict(best_state)
    model.eval()
    if run_dir is not None:
        run_dir.mkdir(parents=True, exist_ok=True)
        result.checkpoint = save_checkpoint(
            run_dir / f"{cfg.stage}.pt", model,
            extra={"train": dataclasses.asdict(cfg), "best_val": result.best_val})
        write_loss_curve(run_dir / f"{cfg.stage}_loss_curve.csv", result.curve)
    return result


def write_loss_curve(path, curve):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["epoch", "train_loss", "val_loss", "lr"])
        writer.writeheader()
        writer.writerows(curve)


def read_loss_curve(path) -> list[dict]:
    with open(path) as fh:
        return [{k: float(v) if k != "epoch" else int(v) for k, v in row.items()}
                for row in csv.DictReader(fh)]


# --- inference and evaluation -------------------------------------------------

def predict(gridgen: GridGenerator, sampler: TrajectorySampler, samples, batch_size: int = 32,
            return_probs: bool = False):
    """Agent-frame trajectory sets (B, K, t_f, 2) in grid cells for ``samples``."""
    gridgen.eval()
    sampler.eval()
    dtype = _dtype(gridgen)
    preds, probs_out = [], []
    with torch.no_grad():
        for start in range(0, len(samples), batch_size):
            batch = collate(samples[start:start + batch_size], dtype)
            probs = occupancy(gridgen(batch["past"], batch["scene"]))
            preds.append(sampler(probs.to(_dtype(sampler))).cpu().numpy())
            if return_probs:
                probs_out.append(probs.cpu().numpy())
    k = sampler.cfg.k
    t_f = sampler.cfg.t_f
    preds = np.concatenate(preds) if preds else np.zeros((0, k, t_f, 2))
    if return_probs:
        return preds, (np.concatenate(probs_out) if probs_out else None)
    return preds


def world_predictions(preds_cells, samples) -> list[np.ndarray]:
    return [to_world(p, s.scale, s.anchor_world) for p, s in zip(preds_cells, samples)]


def world_ground_truth(sample: GridSample) -> np.ndarray:
    return np.asarray(sample.future_xy) + np.asarray(sample.anchor_world)


def evaluate_predictions(samples, world_preds, label_maps: dict | None = None):
    """Metrics report and per-sample rows for world-pixel predictions.

    ``label_maps`` maps scene id -> label array; scenes without a map are
    left out of the Correspondence-to-Scene and obstacle statistics.
    """
    label_maps = label_maps or {}
    made_v, mfde_v, rows = [], [], []
    acc = CSAccumulator()
    seq_preds, seq_labels = [], []
    k = 0
    for s, pred in zip(samples, world_preds):
        gt = world_ground_truth(s)
        k = pred.shape[0]
        m, f = made(gt, pred), mfde(gt, pred)
        made_v.append(m)
        mfde_v.append(f)
        scene_id = s.metadata.get("scene_id", "")
        rows.append({"scene_id": scene_id, "agent_id": s.metadata.get("agent_id", ""),
                     "frame": s.metadata.get("frame", -1), "made_px": m, "mfde_px": f})
        labels = label_maps.get(scene_id)
        if labels is not None:
            acc = cs_accumulate(pred, labels, acc)
            seq_preds.append(pred)
            seq_labels.append(labels)
    free = obstacle_free_rate(seq_preds, seq_labels) if seq_preds else float("nan")
    return metrics_report(made_v, mfde_v, acc, free, k), rows


def evaluate_models(gridgen, sampler, samples, label_maps=None, batch_size=32):
    preds = predict(gridgen, sampler, samples, batch_size)
    return evaluate_predictions(samples, world_predictions(preds, samples), label_maps)


def overfit_probe(gridgen: GridGenerator, sampler: TrajectorySampler, samples, budget: int = 500,
                  learning_rate: float = 3e-3, seed: int = 0) -> float:
    """Train both stages on a tiny fixed set; return training-set mADE in pixels.

    ``budget`` is the number of optimizer iterations per stage, each on the
    whole set (at most 8 samples) as one batch, without augmentation.
    """
    samples = list(samples)
    if not 1 <= len(samples) <= 8:
        raise ConfigError("the overfit probe takes between 1 and 8 samples")
    if budget > 0:
        common = dict(learning_rate=learning_rate, batch_size=len(samples), max_epochs=budget,
                      max_iterations=budget, augment_rotation=False, seed=seed,
                      scheduler_patience=budget + 1)
        train_stage(TrainConfig(stage="gridgen", **common), samples, gridgen)
        train_stage(TrainConfig(stage="sampler", **common), samples, sampler, gridgen=gridgen)
    report, _ = evaluate_models(gridgen, sampler, samples)
    return report["made_px"]


# --- segmentation pretraining data ---------------------------------------------

def segmentation_crops(image, labels, geom: GridGeometry, count: int, seed: int = 0):
    """Random (scene crop, label crop) pairs at grid resolution.

    Label cells take the class at the world pixel under each cell centre;
    cells beyond the image border are labelled obstacle.
    """
    rng = np.random.default_rng(seed)
    h, w = labels.shape
    row_c, col_c = geom.center_cell
    offs = (np.arange(geom.n) - row_c + 0.5) * geom.scale
    pairs = []
    for _ in range(count):
        ax, ay = rng.uniform(0, w), rng.uniform(0, h)
        crop = crop_scene(image, (ax, ay), geom)
        xs = np.floor(ax + offs).astype(int)
        ys = np.floor(ay + offs).astype(int)
        inside = (ys[:, None] >= 0) & (ys[:, None] < h) & (xs[None] >= 0) & (xs[None] < w)
        lab = labels[np.clip(ys, 0, h - 1)[:, None], np.clip(xs, 0, w - 1)[None]].astype(np.int64)
        lab[~inside] = OBSTACLE  # black fill outside the image is not walkable
        pairs.append((crop, lab))
    return pairs
