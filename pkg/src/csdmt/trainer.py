"""Unsupervised training loop: unpaired sampling, the forward transfer
pipeline, alternating LSGAN discriminator / generator updates, checkpointing
and JSON-lines metrics."""

from dataclasses import dataclass, field, asdict
import json
import logging
import time
from pathlib import Path

import numpy as np
import torch

from . import correspondence, losses, networks, pyramid
from .errors import ConfigError, DataError, TrainingError
from .facedata import FaceSample, load_dataset, synthetic_dataset
from .losses import ConvStackExtractor, LossWeights, load_extractor
from .networks import ArchConfig

log = logging.getLogger(__name__)

METRIC_TERMS = ("total", "makeup", "content", "cycle", "adv_g", "adv_d", "aug", "cts")


@dataclass
class TrainConfig:
    size: int = 64
    d: int = 2
    tau: float = 100.0
    weights: LossWeights = field(default_factory=LossWeights)
    n_neg: int = 4
    beta1: float = 0.5
    beta2: float = 0.999
    lr: float = 2e-4
    batch_size: int = 1
    max_iterations: int = 2000
    seed: int = 0
    checkpoint_interval: int = 500
    log_interval: int = 1
    n_source: int = 200
    n_reference: int = 200
    dataset_root: str | None = None   # external MT-format dataset; synthetic if None
    extractor_path: str | None = None  # perceptual weights file; seeded stack if None
    feat_channels: int = 64
    out_dir: str = "runs/desk"

    def to_dict(self):
        d = asdict(self)
        d["weights"] = asdict(self.weights)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "weights" in d and isinstance(d["weights"], dict):
            d["weights"] = LossWeights(**d["weights"])
        return cls(**d)

    @classmethod
    def from_json(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))

    def save_json(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    def arch(self):
        return ArchConfig(size=self.size, d=self.d,
                          feat_channels=self.feat_channels, seed=self.seed)


@dataclass
class TransferBundle:
    dec_x: pyramid.Decomposition
    dec_y: pyramid.Decomposition
    fx: torch.Tensor
    fy: torch.Tensor
    corr: correspondence.CorrMatrix
    yhat_l: torch.Tensor
    xhat: torch.Tensor
    dec_xhat: pyramid.Decomposition
    xbar_l: torch.Tensor
    ybar: torch.Tensor


def _check_finite(t, stage):
    if not torch.isfinite(t).all():
        raise TrainingError(f"non-finite values produced at stage {stage!r}")


class MakeupPipeline:
    """The generator: encoder + correlation + deformation + renderer."""

    def __init__(self, esc, gmr, d, tau=100.0):
        self.esc = esc
        self.gmr = gmr
        self.d = d
        self.tau = tau

    def deformed_lf(self, x_img, x_parsing, y_img, y_parsing):
        """Correlation matrix and source-aligned reference LF."""
        dec_x = pyramid.decompose(x_img, x_parsing, self.d)
        dec_y = pyramid.decompose(y_img, y_parsing, self.d)
        fx = self.esc(pyramid.as_tensor(x_img), x_parsing)
        fy = self.esc(pyramid.as_tensor(y_img), y_parsing)
        corr = correspondence.correlation_matrix(fx, fy, tau=self.tau)
        yhat_l = correspondence.deform(corr, dec_y.lf)
        return dec_x, dec_y, fx, fy, corr, yhat_l

    def render(self, dec_x, cond_lf):
        return self.gmr(dec_x.bg, dec_x.hf, cond_lf)

    def transfer(self, x_img, x_parsing, y_img, y_parsing):
        dec_x, _, _, _, _, yhat_l = self.deformed_lf(x_img, x_parsing, y_img, y_parsing)
        return self.render(dec_x, yhat_l)

    def forward_transfer(self, x: FaceSample, y: FaceSample):
        """All intermediates needed for the loss suite, in one bundle."""
        dec_x, dec_y, fx, fy, corr, yhat_l = self.deformed_lf(
            x.image, x.parsing, y.image, y.parsing)
        _check_finite(fx, "encode_source")
        _check_finite(fy, "encode_reference")
        _check_finite(yhat_l, "deform")
        xhat = self.render(dec_x, yhat_l)
        _check_finite(xhat, "render")
        dec_xhat = pyramid.decompose(xhat, x.parsing, self.d)
        xbar_l = correspondence.deform_transpose(corr, dec_xhat.lf)
        _check_finite(xbar_l, "deform_transpose")
        ybar = self.render(dec_y, xbar_l)
        _check_finite(ybar, "cycle_render")
        return TransferBundle(dec_x=dec_x, dec_y=dec_y, fx=fx, fy=fy, corr=corr,
                              yhat_l=yhat_l, xhat=xhat, dec_xhat=dec_xhat,
                              xbar_l=xbar_l, ybar=ybar)


@dataclass
class TrainState:
    models: dict
    pipeline: MakeupPipeline
    extractor: ConvStackExtractor
    opt_g: torch.optim.Adam
    opt_d: torch.optim.Adam
    config: TrainConfig
    iteration: int = 0


def build_state(config: TrainConfig):
    models = networks.build_models(config.arch())
    pipeline = MakeupPipeline(models["esc"], models["gmr"], config.d, config.tau)
    if config.extractor_path:
        extractor = load_extractor(config.extractor_path)
    else:
        extractor = ConvStackExtractor(seed=config.seed)
    g_params = list(models["esc"].parameters()) + list(models["gmr"].parameters())
    opt_g = torch.optim.Adam(g_params, lr=config.lr, betas=(config.beta1, config.beta2))
    opt_d = torch.optim.Adam(models["disc"].parameters(), lr=config.lr,
                             betas=(config.beta1, config.beta2))
    return TrainState(models=models, pipeline=pipeline, extractor=extractor,
                      opt_g=opt_g, opt_d=opt_d, config=config)


def save_state(state: TrainState, path):
    networks.save_checkpoint(
        path, state.models, state.config.arch(),
        optimizers={"g": state.opt_g, "d": state.opt_d},
        extra={"iteration": state.iteration, "train_config": state.config.to_dict()},
    )
    return path


def load_state(path):
    payload = networks.load_checkpoint(path)
    config = TrainConfig.from_dict(payload["extra"]["train_config"])
    state = build_state(config)
    for name, model in state.models.items():
        model.load_state_dict(payload["params"][name])
    if payload.get("optim"):
        state.opt_g.load_state_dict(payload["optim"]["g"])
        state.opt_d.load_state_dict(payload["optim"]["d"])
    state.iteration = payload["extra"]["iteration"]
    return state


def train_step(state: TrainState, batch, rng):
    """One discriminator update followed by one generator update.

    batch: (x source sample, y reference sample, aug reference sample).
    """
    x, y, aug = batch
    cfg = state.config
    disc = state.models["disc"]
    bundle = state.pipeline.forward_transfer(x, y)
    y_img = pyramid.as_tensor(y.image)

    # discriminator step on real reference vs detached fake
    fake_detached = bundle.xhat.detach()
    d_loss = losses.loss_adv_d(disc(y_img), disc(fake_detached))
    state.opt_d.zero_grad()
    d_loss.backward()
    state.opt_d.step()

    # generator step
    parts = {
        "makeup": losses.loss_makeup(bundle.xbar_l, bundle.dec_y.lf),
        "content": losses.loss_content(bundle.dec_xhat.hf, bundle.dec_x.hf),
        "cycle": losses.loss_cycle(bundle.ybar, y_img),
        "adv_g": losses.loss_adv_g(disc(bundle.xhat)),
        "aug": losses.loss_aug(state.pipeline, aug.image, aug.parsing, rng),
        "cts": losses.loss_cts(
            bundle.xhat * bundle.dec_x.fg_mask,
            y_img * bundle.dec_y.fg_mask,
            rng, state.extractor, n_neg=cfg.n_neg),
    }
    total = losses.total_generator_loss(parts, cfg.weights)
    state.opt_g.zero_grad()
    total.backward()
    for group in state.opt_g.param_groups:
        for p in group["params"]:
            if p.grad is not None and not torch.isfinite(p.grad).all():
                raise TrainingError("non-finite generator gradient")
    state.opt_g.step()

    metrics = {name: float(v.detach()) for name, v in parts.items()}
    metrics["total"] = float(total.detach())
    metrics["adv_d"] = float(d_loss.detach())
    return metrics


def _load_training_sets(config: TrainConfig):
    if config.dataset_root:
        sources, references = [], []
        for sample in load_dataset(config.dataset_root, size=config.size):
            (references if sample.domain == "reference" else sources).append(sample)
        if not sources or not references:
            raise DataError("external dataset must contain both domains")
        return sources, references
    return synthetic_dataset(config.seed, config.n_source, config.n_reference,
                             config.size)


def iteration_rng(seed, iteration):
    """Per-iteration stream; regenerating it makes resume bit-identical."""
    return np.random.default_rng([seed, iteration])


def train(config: TrainConfig, resume=None):
    """Run the training loop; returns (final checkpoint path, metrics path)."""
    out_dir = Path(config.out_dir)
    probe = out_dir / ".write_probe"
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        probe.write_text("ok")
        probe.unlink()
    except OSError as exc:
        raise ConfigError(f"output directory {out_dir} is not writable: {exc}")

    if resume is not None:
        state = load_state(resume)
        # run length and output location may change between runs; everything
        # that shaped the models or the data stream must match
        ignore = ("max_iterations", "out_dir", "checkpoint_interval", "log_interval")
        stored, wanted = state.config.to_dict(), config.to_dict()
        for key in ignore:
            stored.pop(key), wanted.pop(key)
        if stored != wanted:
            raise ConfigError("resume checkpoint was produced with a different config")
        state.config = config
        metrics_path = out_dir / f"metrics_resume_{state.iteration}.jsonl"
    else:
        state = build_state(config)
        metrics_path = out_dir / "metrics.jsonl"
        save_state(state, out_dir / "ckpt_initial.pt")

    sources, references = _load_training_sets(config)
    torch.manual_seed(config.seed)

    with metrics_path.open("w") as metrics_file:
        for it in range(state.iteration + 1, config.max_iterations + 1):
            rng = iteration_rng(config.seed, it)
            x = sources[int(rng.integers(len(sources)))]
            y = references[int(rng.integers(len(references)))]
            start = time.perf_counter()
            try:
                metrics = train_step(state, (x, y, y), rng)
            except TrainingError:
                save_state(state, out_dir / f"ckpt_failed_{it}.pt")
                raise
            state.iteration = it
            if it % config.log_interval == 0 or it == config.max_iterations:
                row = {"iteration": it}
                row.update({f"loss_{k}": metrics[k] for k in METRIC_TERMS})
                row["wall_time"] = time.perf_counter() - start
                metrics_file.write(json.dumps(row) + "\n")
            if config.checkpoint_interval and it % config.checkpoint_interval == 0:
                save_state(state, out_dir / f"ckpt_{it}.pt")

    final_path = save_state(state, out_dir / "ckpt_final.pt")
    return final_path, metrics_path
