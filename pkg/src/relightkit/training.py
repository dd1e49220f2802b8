"""Training loop, evaluation loop, and their reports.

Pair order is reshuffled every epoch from a stream derived from
(seed, epoch), so a run is a pure function of the dataset, the configs,
and the seed; resuming from a checkpoint replays the identical
trajectory because optimizer moments and the step counter are stored in
the checkpoint.
"""

from __future__ import annotations

import csv
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .datasynth import TrainingPair, load_manifest, load_pair
from .envmap import solid_angle_map
from .layers import rotate_longitude
from .losses import compose_total, loss_image, loss_light
from .metrics import image_metrics, light_rmse_s
from .optim import AdamState, adam_step
from .prnet import (
    PRNetConfig,
    PRNetParams,
    decode,
    embed_light,
    encode,
    forward,
    init_params,
    predict_light,
    save_checkpoint,
    self_reconstruct,
)
from .tensor import Tape, Tensor

LOG_COLUMNS = ["step", "epoch", "loss_total", "loss_target", "loss_light", "loss_self", "wall_ms"]


def worker_count(n_items: int | None = None) -> int:
    """Worker count from the RELIGHT_THREADS environment variable.

    Unset or "1" means serial; "0" means one worker per CPU; any other
    positive integer is used as given (capped at the item count).
    """
    raw = os.environ.get("RELIGHT_THREADS")
    if raw is None:
        n = 1
    else:
        try:
            n = int(raw)
        except ValueError:
            raise ValueError(f"RELIGHT_THREADS must be an integer, got {raw!r}") from None
        if n < 0:
            raise ValueError(f"RELIGHT_THREADS must be >= 0, got {n}")
        if n == 0:
            n = os.cpu_count() or 1
    if n_items is not None:
        n = max(1, min(n, n_items))
    return n


@dataclass
class TrainConfig:
    steps: int = 500
    learning_rate: float = 1e-3
    lambda_light: float = 0.8
    lambda_self: float = 1.0
    batch_size: int = 1
    seed: int = 0
    checkpoint_every: int = 0  # 0: only the final checkpoint

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be positive")
        if self.learning_rate <= 0.0:
            raise ValueError("learning_rate must be positive")
        if self.lambda_light < 0.0 or self.lambda_self < 0.0:
            raise ValueError("loss weights must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")


@dataclass
class StepStats:
    step: int
    epoch: int
    loss_total: float
    loss_target: float
    loss_light: float
    loss_self: float
    wall_ms: float

    def row(self) -> list:
        return [self.step, self.epoch, self.loss_total, self.loss_target,
                self.loss_light, self.loss_self, self.wall_ms]


def _check_pair(pair: TrainingPair, config: PRNetConfig) -> None:
    d = config.resolution
    if pair.image_src.shape != (d, d, 3):
        raise ValueError(
            f"pair image shape {pair.image_src.shape} does not match network resolution {d}"
        )
    if pair.light_src.shape != (*config.light_shape, 3):
        raise ValueError(
            f"pair light shape {pair.light_src.shape} does not match network {config.light_shape}"
        )


def train_step(
    batch: list[TrainingPair],
    params: PRNetParams,
    config: PRNetConfig,
    tcfg: TrainConfig,
    adam: AdamState,
    omega: np.ndarray,
    step: int = 0,
    epoch: int = 0,
) -> StepStats:
    """One optimizer update from the mean loss over ``batch``.

    The self branch decodes from the rotated predicted source light, so
    its image gradient reaches the light head; with lambda_self zero that
    decode never runs.
    """
    t0 = time.perf_counter()
    need_light = tcfg.lambda_light > 0.0 or tcfg.lambda_self > 0.0
    sums = {"target": 0.0, "light": 0.0, "self": 0.0}
    trainable = params.tensors()
    with Tape() as tape:
        total = None
        for pair in batch:
            enc = encode(params, config, Tensor(pair.image_src))
            light_pred = None
            if need_light:
                light_pred, _ = predict_light(params, config, enc.bottleneck)
            pred_t = decode(params, config, enc, embed_light(params, config, Tensor(pair.light_tgt)))
            l_target = loss_image(pred_t, pair.image_tgt, pair.mask)
            l_light = None
            if tcfg.lambda_light > 0.0:
                l_light = loss_light(light_pred, pair.light_src, omega)
                sums["light"] += l_light.item()
            l_self = None
            if tcfg.lambda_self > 0.0:
                rotated = rotate_longitude(light_pred, pair.theta_jitter_deg)
                pred_s = decode(params, config, enc, embed_light(params, config, rotated))
                l_self = loss_image(pred_s, pair.image_src_jit, pair.mask)
                sums["self"] += l_self.item()
            sums["target"] += l_target.item()
            pair_total = compose_total(l_target, l_light, l_self, tcfg.lambda_light, tcfg.lambda_self)
            total = pair_total if total is None else total + pair_total
        loss = total * (1.0 / len(batch))
    grads = tape.backward(loss)
    adam_step(trainable, grads.of(trainable), adam)
    b = len(batch)
    return StepStats(
        step=step,
        epoch=epoch,
        loss_total=loss.item(),
        loss_target=sums["target"] / b,
        loss_light=sums["light"] / b,
        loss_self=sums["self"] / b,
        wall_ms=(time.perf_counter() - t0) * 1000.0,
    )


def load_pairs(dataset) -> list[TrainingPair]:
    """Accept a manifest path, a loaded manifest, or pairs themselves."""
    if isinstance(dataset, (list, tuple)):
        return list(dataset)
    manifest = dataset if isinstance(dataset, dict) else load_manifest(dataset)
    root = manifest["_root"]
    return [load_pair(root, rec) for rec in manifest["records"]]


def fit(
    dataset,
    config: PRNetConfig | None = None,
    tcfg: TrainConfig | None = None,
    out_dir: str | os.PathLike | None = None,
    resume_from: str | os.PathLike | None = None,
) -> tuple[PRNetParams, list[StepStats]]:
    """Train from scratch or resume; returns final params and the log.

    When ``out_dir`` is given, writes training_log.csv plus a final
    checkpoint (and periodic ones at ``checkpoint_every``).
    """
    config = config or PRNetConfig()
    tcfg = tcfg or TrainConfig()
    pairs = load_pairs(dataset)
    if not pairs:
        raise ValueError("dataset holds no pairs")
    for p in pairs:
        _check_pair(p, config)

    start_step = 0
    if resume_from is not None:
        from .prnet import load_checkpoint

        params, ckpt_config, meta, adam = load_checkpoint(resume_from)
        if asdict(ckpt_config) != asdict(config):
            raise ValueError("checkpoint architecture differs from the requested one")
        if adam is None:
            raise ValueError("checkpoint has no optimizer state; cannot resume")
        start_step = int(meta.get("step", 0))
        adam.lr = tcfg.learning_rate
    else:
        params = init_params(config, seed=tcfg.seed)
        adam = AdamState(lr=tcfg.learning_rate)

    omega = solid_angle_map(*config.light_shape).astype(np.float32)
    history: list[StepStats] = []
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
    log_f = None
    writer = None
    if out_dir is not None:
        log_f = open(os.path.join(out_dir, "training_log.csv"), "w", newline="")
        writer = csv.writer(log_f)
        writer.writerow(LOG_COLUMNS)

    try:
        step = 0
        epoch = 0
        while step < tcfg.steps:
            order = np.random.default_rng([tcfg.seed, epoch]).permutation(len(pairs))
            for start in range(0, len(order), tcfg.batch_size):
                if step >= tcfg.steps:
                    break
                if step < start_step:  # resume: replay the schedule without training
                    step += 1
                    continue
                batch = [pairs[i] for i in order[start : start + tcfg.batch_size]]
                stats = train_step(batch, params, config, tcfg, adam, omega, step=step, epoch=epoch)
                step += 1
                stats.step = step
                history.append(stats)
                if writer is not None:
                    writer.writerow(stats.row())
                if (
                    out_dir is not None
                    and tcfg.checkpoint_every
                    and step % tcfg.checkpoint_every == 0
                ):
                    save_checkpoint(
                        os.path.join(out_dir, f"ckpt_{step:06d}"),
                        params,
                        config,
                        meta={"step": step, "epoch": epoch},
                        optimizer=adam,
                    )
            epoch += 1
    finally:
        if log_f is not None:
            log_f.close()

    if out_dir is not None:
        save_checkpoint(
            os.path.join(out_dir, "ckpt_final"),
            params,
            config,
            meta={"step": step, "epoch": epoch},
            optimizer=adam,
        )
    return params, history


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


@dataclass
class ExampleMetrics:
    index: int
    target: dict[str, float]
    source: dict[str, float]
    light_rmse_s: float
    forward_ms: float


@dataclass
class MetricsReport:
    examples: list[ExampleMetrics]
    mean: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if not self.mean and self.examples:
            keys = {
                "target_rmse": lambda e: e.target["rmse"],
                "target_rmse_s": lambda e: e.target["rmse_s"],
                "target_dssim": lambda e: e.target["dssim"],
                "source_rmse": lambda e: e.source["rmse"],
                "source_rmse_s": lambda e: e.source["rmse_s"],
                "source_dssim": lambda e: e.source["dssim"],
                "light_rmse_s": lambda e: e.light_rmse_s,
                "forward_ms": lambda e: e.forward_ms,
            }
            self.mean = {k: float(np.mean([f(e) for e in self.examples])) for k, f in keys.items()}

    def to_json(self) -> str:
        payload = {
            "examples": [
                {
                    "index": e.index,
                    "target": e.target,
                    "source": e.source,
                    "light_rmse_s": e.light_rmse_s,
                    "forward_ms": e.forward_ms,
                }
                for e in self.examples
            ],
            "mean": self.mean,
        }
        return json.dumps(payload, indent=1)

    def to_table(self) -> str:
        header = (
            f"{'example':>8} {'t_rmse':>8} {'t_rmse_s':>9} {'t_dssim':>8} "
            f"{'s_rmse':>8} {'s_rmse_s':>9} {'s_dssim':>8} {'light_s':>8} {'ms':>7}"
        )
        lines = [header, "-" * len(header)]

        def fmt(label, t, s, light, ms):
            return (
                f"{label:>8} {t['rmse']:>8.4f} {t['rmse_s']:>9.4f} {t['dssim']:>8.4f} "
                f"{s['rmse']:>8.4f} {s['rmse_s']:>9.4f} {s['dssim']:>8.4f} "
                f"{light:>8.4f} {ms:>7.1f}"
            )

        for e in self.examples:
            lines.append(fmt(str(e.index), e.target, e.source, e.light_rmse_s, e.forward_ms))
        m = self.mean
        lines.append(
            fmt(
                "mean",
                {"rmse": m["target_rmse"], "rmse_s": m["target_rmse_s"], "dssim": m["target_dssim"]},
                {"rmse": m["source_rmse"], "rmse_s": m["source_rmse_s"], "dssim": m["source_dssim"]},
                m["light_rmse_s"],
                m["forward_ms"],
            )
        )
        return "\n".join(lines)


def evaluate(
    dataset,
    params: PRNetParams | None = None,
    config: PRNetConfig | None = None,
    predict_fn=None,
) -> MetricsReport:
    """Score a model on every pair of a dataset.

    Target metrics compare the relit render against the target; source
    metrics compare the theta-0 self-reconstruction against the source;
    the light error is scale-invariant against the true source light.
    ``predict_fn(pair) -> (target_img, source_img, light)`` may replace
    the network (used to sanity-check the metrics themselves).
    """
    pairs = load_pairs(dataset)
    if not pairs:
        raise ValueError("dataset holds no pairs")
    if predict_fn is None:
        if params is None or config is None:
            raise ValueError("evaluate needs params and config (or a predict_fn)")
        for p in pairs:
            _check_pair(p, config)

    hl, wl = pairs[0].light_src.shape[:2]
    omega = solid_angle_map(hl, wl)

    def score(item):
        index, pair = item
        if predict_fn is None:
            t0 = time.perf_counter()
            out_t = forward(params, config, pair.image_src, pair.light_tgt)
            ms = (time.perf_counter() - t0) * 1000.0
            out_s = self_reconstruct(params, config, pair.image_src, 0.0)
            pred_target, pred_source, pred_light = out_t.image, out_s.image, out_t.light
        else:
            t0 = time.perf_counter()
            pred_target, pred_source, pred_light = predict_fn(pair)
            ms = (time.perf_counter() - t0) * 1000.0
        return ExampleMetrics(
            index=index,
            target=image_metrics(pred_target, pair.image_tgt, pair.mask),
            source=image_metrics(pred_source, pair.image_src, pair.mask),
            light_rmse_s=light_rmse_s(pred_light, pair.light_src, omega),
            forward_ms=ms,
        )

    items = list(enumerate(pairs))
    n_workers = worker_count(len(items))
    if n_workers > 1:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            examples = list(pool.map(score, items))
    else:
        examples = [score(item) for item in items]
    return MetricsReport(examples)
