"""Training loop: decoupled-weight-decay Adam, linear warmup + cosine decay,
global-norm gradient clipping, seeded runs, checkpointing, metrics logging,
and a finite-difference gradient auditor.

Every source of randomness is a stateless function of (seed, epoch, step),
so a run resumed from a checkpoint emits exactly the loss trace the
uninterrupted run would have produced.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from .checkpoint import CheckpointError, CheckpointState, load_checkpoint, save_checkpoint
from .data import ImageStore, epoch_batches, sample_seed
from .model import NovaModel, PredictorConfig, ViTConfig
from .multicrop import AugmentConfig, make_views
from .objectives import alignment_mse, infonce_loss, nova_loss, siglip_loss
from .sigreg import SigregConfig, sigreg_loss
from .synthdata import Manifest
from .zeroshot import evaluate

OBJECTIVES = ("nova", "infonce", "siglip")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 256
    lr_max: float = 1e-4
    lr_min: float = 1e-5
    warmup_epochs: int = 1
    clip_norm: float = 1.0
    lam: float = 0.02
    seed: int = 0
    objective: str = "nova"
    weight_decay: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    eval_every: int = 1  # epochs between zero-shot evals; 0 disables

    def __post_init__(self):
        if not (self.lr_max >= self.lr_min > 0):
            raise ValueError("need lr_max >= lr_min > 0")
        if self.clip_norm <= 0:
            raise ValueError("clip_norm must be positive")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lambda must lie in [0, 1]")
        if self.objective not in OBJECTIVES:
            raise ValueError(f"unknown objective {self.objective!r}")
        if self.epochs < 0 or self.batch_size < 2 or self.warmup_epochs < 0:
            raise ValueError("epochs >= 0, batch_size >= 2, warmup_epochs >= 0 required")


@dataclass(frozen=True)
class ModelSpec:
    """Everything needed to rebuild the model architecture for a run."""

    vit: ViTConfig
    predictor_hidden: int = 2048
    out_dim: int = 64
    text_dim: int = 128
    text_seed: int = 0
    temperature: float = 1.0
    bias: float = 0.0


def build_model(spec: ModelSpec, seed: int) -> NovaModel:
    torch.manual_seed(int(seed) & 0x7FFFFFFF)
    return NovaModel(
        vit_cfg=spec.vit,
        predictor_cfg=PredictorConfig(in_dim=spec.vit.width, hidden=spec.predictor_hidden, out_dim=spec.out_dim),
        text_dim=spec.text_dim,
        text_seed=spec.text_seed,
        temperature=spec.temperature,
        bias=spec.bias,
    )


def cosine_lr(step: int, cfg: TrainConfig, steps_per_epoch: int) -> float:
    """Linear ramp 0 -> lr_max over the warmup epochs, then cosine decay to
    lr_min so the final step lands exactly on lr_min."""
    if step < 0:
        raise ValueError("step must be >= 0")
    warmup = cfg.warmup_epochs * steps_per_epoch
    total = cfg.epochs * steps_per_epoch
    if warmup > 0 and step < warmup:
        return cfg.lr_max * step / warmup
    span = max(1, total - 1 - warmup)
    progress = min(1.0, (step - warmup) / span)
    return cfg.lr_min + (cfg.lr_max - cfg.lr_min) * 0.5 * (1.0 + math.cos(math.pi * progress))


class NumericalAbort(RuntimeError):
    """A loss term became non-finite; identifies the offending term."""

    def __init__(self, term: str, step: int):
        super().__init__(f"non-finite value in loss term {term!r} at step {step}")
        self.term = term
        self.step = step


class AdamW:
    """Adam with decoupled weight decay.

    The decay enters only as a multiplicative shrink of the parameter before
    the Adam update, so with weight_decay=0 the update is bit-identical to
    plain Adam. Update arithmetic, in order (mirrored by the test oracle):

        m <- beta1*m + grad*(1-beta1)
        v <- beta2*v + grad*grad*(1-beta2)
        p <- p - lr * (m/(1-beta1^t)) / (sqrt(v/(1-beta2^t)) + eps)
    """

    def __init__(self, named_params, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.05):
        self.params = dict(named_params)
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        # biases, norm gains, and scalar heads are excluded from decay
        self.no_decay = {name for name, p in self.params.items() if p.ndim <= 1}
        self.m = {name: torch.zeros_like(p) for name, p in self.params.items()}
        self.v = {name: torch.zeros_like(p) for name, p in self.params.items()}
        self.t = 0

    @torch.no_grad()
    def step(self, lr: float) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for name, p in self.params.items():
            grad = p.grad
            if grad is None:
                continue
            if self.weight_decay and name not in self.no_decay:
                p.mul_(1.0 - lr * self.weight_decay)
            m, v = self.m[name], self.v[name]
            m.mul_(self.beta1).add_(grad * (1.0 - self.beta1))
            v.mul_(self.beta2).add_(grad * grad * (1.0 - self.beta2))
            p.sub_(lr * ((m / bc1) / ((v / bc2).sqrt() + self.eps)))

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None


def clip_global_norm(params, max_norm: float) -> float:
    """Scale all gradients so their global l2 norm is at most max_norm;
    gradients already below the bound pass through untouched. Returns the
    pre-clip norm."""
    grads = [p.grad for p in params if p.grad is not None]
    if not grads:
        return 0.0
    total = torch.sqrt(sum((g.double() ** 2).sum() for g in grads))
    norm = float(total)
    if norm > max_norm:
        scale = max_norm / norm
        with torch.no_grad():
            for g in grads:
                g.mul_(scale)
    return norm


@dataclass
class StepRecord:
    step: int
    epoch: int
    lr: float
    loss_total: float
    loss_mse: float | None = None
    loss_sigreg: float | None = None


@dataclass
class EvalRecord:
    epoch: int
    per_class: dict
    macro_auc: float


@dataclass
class MetricsLog:
    objective: str
    steps: list = field(default_factory=list)
    evals: list = field(default_factory=list)

    def append(self, rec: StepRecord) -> None:
        if self.steps and rec.step <= self.steps[-1].step:
            raise ValueError("step indices must be strictly increasing")
        self.steps.append(rec)

    def write_csv(self, path) -> None:
        with_sigreg = self.objective == "nova"
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            header = ["step", "epoch", "lr", "loss_total"]
            if with_sigreg:
                header += ["loss_mse", "loss_sigreg"]
            writer.writerow(header)
            for rec in self.steps:
                row = [rec.step, rec.epoch, repr(rec.lr), repr(rec.loss_total)]
                if with_sigreg:
                    row += [repr(rec.loss_mse), repr(rec.loss_sigreg)]
                writer.writerow(row)

    def write_eval_csv(self, path, classes) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch"] + [f"auc_{c}" for c in classes] + ["macro_auc"])
            for rec in self.evals:
                row = [rec.epoch]
                row += [repr(rec.per_class[c]) if c in rec.per_class else "" for c in classes]
                row.append(repr(rec.macro_auc))
                writer.writerow(row)


def _single_view_config(aug_cfg: AugmentConfig) -> AugmentConfig:
    # contrastive baselines train on one global view per image
    return replace(
        aug_cfg,
        global_crop=replace(aug_cfg.global_crop, count=1),
        local_crop=replace(aug_cfg.local_crop, count=0),
    )


class Trainer:
    def __init__(
        self,
        model: NovaModel,
        train_cfg: TrainConfig,
        aug_cfg: AugmentConfig,
        sigreg_cfg: SigregConfig,
    ):
        self.model = model
        self.cfg = train_cfg
        self.aug_cfg = aug_cfg if train_cfg.objective == "nova" else _single_view_config(aug_cfg)
        self.sigreg_cfg = sigreg_cfg
        self.opt = AdamW(
            dict(model.named_parameters()),
            betas=(train_cfg.beta1, train_cfg.beta2),
            eps=train_cfg.eps,
            weight_decay=train_cfg.weight_decay,
        )
        self.dtype = next(model.parameters()).dtype

    def _view_stacks(self, store: ImageStore, indices, epoch: int):
        """Sample-major stacks of global and local views for a batch."""
        g_views, l_views = [], []
        n_global = self.aug_cfg.global_crop.count
        for idx in indices:
            batch = make_views(store.image(int(idx)), self.aug_cfg, sample_seed(epoch, int(idx)))
            g_views.extend(batch.views[:n_global])
            l_views.extend(batch.views[n_global:])
        g_stack = torch.as_tensor(np.stack(g_views), dtype=self.dtype)
        l_stack = torch.as_tensor(np.stack(l_views), dtype=self.dtype) if l_views else None
        return g_stack, l_stack

    def _check_finite(self, value: torch.Tensor, term: str, step: int) -> None:
        if not bool(torch.isfinite(value.detach()).all()):
            raise NumericalAbort(term, step)

    def _nova_losses(self, g_stack, l_stack, texts, step: int):
        b = len(texts)
        model = self.model
        # one predictor pass over every view: batch statistics estimated on
        # the full view set rather than per resolution
        feats = model.vision(g_stack)
        n_global = feats.shape[0]
        if l_stack is not None:
            feats = torch.cat([feats, model.vision(l_stack)], dim=0)
        emb = model.predictor(feats)
        views = emb[:n_global].reshape(b, -1, model.out_dim).permute(1, 0, 2)
        if l_stack is not None:
            views = torch.cat(
                [views, emb[n_global:].reshape(b, -1, model.out_dim).permute(1, 0, 2)], dim=0
            )
        anchors = model.text(list(texts))
        lam = self.cfg.lam
        mse = alignment_mse(views, anchors)
        self._check_finite(mse, "mse", step)
        joint = torch.cat([views.reshape(-1, model.out_dim), anchors], dim=0)
        if lam == 0.0:
            with torch.no_grad():  # still logged, but excluded from the update
                sig = sigreg_loss(joint, self.sigreg_cfg, step=step)
            total = nova_loss(mse, sig.detach(), lam)
        elif lam == 1.0:
            sig = sigreg_loss(joint, self.sigreg_cfg, step=step)
            total = nova_loss(mse.detach(), sig, lam)
        else:
            sig = sigreg_loss(joint, self.sigreg_cfg, step=step)
            total = nova_loss(mse, sig, lam)
        self._check_finite(sig, "sigreg", step)
        return total, float(mse.detach()), float(sig.detach())

    def _contrastive_loss(self, g_stack, texts, step: int):
        model = self.model
        v = model.predictor(model.vision(g_stack))
        t = model.text(list(texts))
        v = torch.nn.functional.normalize(v, dim=1)
        t = torch.nn.functional.normalize(t, dim=1)
        tau = model.contrastive.tau
        if self.cfg.objective == "infonce":
            return infonce_loss(v, t, tau)
        return siglip_loss(v, t, tau, model.contrastive.bias)

    def train_step(self, store: ImageStore, indices, step: int, steps_per_epoch: int) -> StepRecord:
        if len(indices) < 2:
            raise ValueError("batch size must be >= 2")
        epoch = step // steps_per_epoch
        self.model.train()
        self.opt.zero_grad()
        g_stack, l_stack = self._view_stacks(store, indices, epoch)
        texts = [store.text(int(i)) for i in indices]
        mse_val = sig_val = None
        if self.cfg.objective == "nova":
            total, mse_val, sig_val = self._nova_losses(g_stack, l_stack, texts, step)
        else:
            total = self._contrastive_loss(g_stack, texts, step)
        self._check_finite(total, "total", step)
        total.backward()
        clip_global_norm(list(self.opt.params.values()), self.cfg.clip_norm)
        lr = cosine_lr(step, self.cfg, steps_per_epoch)
        self.opt.step(lr)
        return StepRecord(
            step=step,
            epoch=epoch,
            lr=lr,
            loss_total=float(total.detach()),
            loss_mse=mse_val,
            loss_sigreg=sig_val,
        )

    # -- checkpoint plumbing ------------------------------------------------

    def state(self, step: int, config_hash: int = 0) -> CheckpointState:
        tensors = {}
        for name, p in self.model.named_parameters():
            tensors[f"model.{name}"] = p.detach().cpu().to(torch.float32).numpy()
        for name, buf in self.model.named_buffers():
            tensors[f"buf.{name}"] = buf.detach().cpu().to(torch.float32).numpy()
        for name, m in self.opt.m.items():
            tensors[f"opt.m.{name}"] = m.cpu().to(torch.float32).numpy()
        for name, v in self.opt.v.items():
            tensors[f"opt.v.{name}"] = v.cpu().to(torch.float32).numpy()
        return CheckpointState(step=step, config_hash=config_hash, tensors=tensors)

    def load_state(self, state: CheckpointState) -> None:
        expected = set(self.state(0).tensors)
        if set(state.tensors) != expected:
            missing = expected - set(state.tensors)
            extra = set(state.tensors) - expected
            raise CheckpointError(f"checkpoint keys do not match model (missing {missing}, extra {extra})")
        params = dict(self.model.named_parameters())
        buffers = dict(self.model.named_buffers())
        with torch.no_grad():
            for key, arr in state.tensors.items():
                kind, _, name = key.partition(".")
                if kind == "model":
                    params[name].copy_(torch.as_tensor(arr, dtype=params[name].dtype))
                elif kind == "buf":
                    buffers[name].copy_(torch.as_tensor(arr).to(buffers[name].dtype))
                elif kind == "opt":
                    which, _, pname = name.partition(".")
                    target = (self.opt.m if which == "m" else self.opt.v)[pname]
                    target.copy_(torch.as_tensor(arr, dtype=target.dtype))
        self.opt.t = state.step


def apply_checkpoint_to_model(model: NovaModel, state: CheckpointState) -> None:
    """Load model parameters/buffers from a checkpoint, ignoring optimizer
    records (evaluation path)."""
    params = dict(model.named_parameters())
    buffers = dict(model.named_buffers())
    with torch.no_grad():
        for key, arr in state.tensors.items():
            kind, _, name = key.partition(".")
            if kind == "model":
                if name not in params:
                    raise CheckpointError(f"checkpoint parameter {name!r} not in model")
                if tuple(params[name].shape) != arr.shape:
                    raise CheckpointError(f"checkpoint parameter {name!r} has shape {arr.shape}")
                params[name].copy_(torch.as_tensor(arr, dtype=params[name].dtype))
            elif kind == "buf":
                if name not in buffers:
                    raise CheckpointError(f"checkpoint buffer {name!r} not in model")
                buffers[name].copy_(torch.as_tensor(arr).to(buffers[name].dtype))


def run_training(
    model_spec: ModelSpec,
    train_cfg: TrainConfig,
    aug_cfg: AugmentConfig,
    sigreg_cfg: SigregConfig,
    train_data: Manifest,
    eval_data: Manifest | None,
    out_dir,
    config_hash: int = 0,
    resume_from=None,
    stop_after_step: int | None = None,
):
    """Run (or resume) a full training job.

    Writes metrics.csv, eval_metrics.csv (when evaluating) and final.ckpt
    into out_dir; returns (MetricsLog, checkpoint path). Deterministic given
    the seed: identical configs reproduce identical logs.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if len(train_data) == 0:
        raise ValueError("training dataset is empty")
    model = build_model(model_spec, train_cfg.seed)
    aug_cfg = replace(aug_cfg, seed=train_cfg.seed)
    trainer = Trainer(model, train_cfg, aug_cfg, sigreg_cfg)
    store = ImageStore(train_data)

    steps_per_epoch = len(train_data) // train_cfg.batch_size
    if train_cfg.epochs > 0 and steps_per_epoch == 0:
        raise ValueError(
            f"dataset of {len(train_data)} samples is smaller than one batch of {train_cfg.batch_size}"
        )
    total_steps = train_cfg.epochs * steps_per_epoch

    start_step = 0
    if resume_from is not None:
        state = load_checkpoint(resume_from)
        trainer.load_state(state)
        start_step = state.step

    log = MetricsLog(objective=train_cfg.objective)
    end_step = total_steps if stop_after_step is None else min(total_steps, stop_after_step)
    for step in range(start_step, end_step):
        epoch = step // steps_per_epoch
        batches = epoch_batches(len(train_data), train_cfg.batch_size, train_cfg.seed, epoch)
        indices = batches[step % steps_per_epoch]
        rec = trainer.train_step(store, indices, step, steps_per_epoch)
        log.append(rec)
        end_of_epoch = step % steps_per_epoch == steps_per_epoch - 1
        if (
            end_of_epoch
            and eval_data is not None
            and train_cfg.eval_every > 0
            and (epoch + 1) % train_cfg.eval_every == 0
        ):
            report = evaluate(model, eval_data)
            log.evals.append(EvalRecord(epoch=epoch, per_class=report.per_class, macro_auc=report.macro_auc))
            model.train()

    ckpt_path = out_dir / "final.ckpt"
    save_checkpoint(trainer.state(end_step, config_hash), ckpt_path)
    log.write_csv(out_dir / "metrics.csv")
    if eval_data is not None and train_cfg.eval_every > 0:
        log.write_eval_csv(out_dir / "eval_metrics.csv", train_data.classes)
    return log, ckpt_path


# -- gradient auditing -------------------------------------------------------


@dataclass
class FDReport:
    max_rel_error: float
    per_group: dict
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def finite_difference_check(
    loss_fn,
    params: dict,
    tolerance: float = 1e-4,
    n_coords: int = 200,
    h: float = 1e-5,
    seed: int = 0,
    groups: dict | None = None,
    grad_transform=None,
) -> FDReport:
    """Compare autograd gradients against central finite differences.

    ``params`` maps names to leaf tensors that ``loss_fn`` reads. At least
    ``n_coords`` random coordinates are probed per parameter group (default:
    one group per tensor). Relative error per coordinate is
    |g_a - g_fd| / max(|g_a|, |g_fd|, 1e-8). Coordinates where both
    gradients lie below the finite-difference resolution (rounding of the
    loss divided by the step, ~eps*|loss|/h) carry no measurable signal and
    are counted as agreeing. Report-only: never raises on mismatch. Run
    everything in double precision.
    """
    names = list(params)
    loss = loss_fn()
    resolution = 50.0 * 2.220446049250313e-16 * max(abs(float(loss)), 1e-3) / h
    grads = torch.autograd.grad(loss, [params[n] for n in names], allow_unused=True)
    analytic = {
        n: (g if g is not None else torch.zeros_like(params[n])) for n, g in zip(names, grads)
    }
    if grad_transform is not None:
        analytic = grad_transform(analytic)
    if groups is None:
        groups = {n: [n] for n in names}
    rng = np.random.default_rng(seed)
    per_group = {}
    for group_name, members in groups.items():
        sizes = [params[n].numel() for n in members]
        total = sum(sizes)
        take = min(n_coords, total)
        flat_choice = rng.choice(total, size=take, replace=False)
        worst = 0.0
        offsets = np.cumsum([0] + sizes)
        for flat in sorted(int(c) for c in flat_choice):
            which = int(np.searchsorted(offsets, flat, side="right") - 1)
            name = members[which]
            local = flat - offsets[which]
            p = params[name]
            with torch.no_grad():
                flat_p = p.reshape(-1)
                orig = flat_p[local].item()
                flat_p[local] = orig + h
                f_plus = float(loss_fn())
                flat_p[local] = orig - h
                f_minus = float(loss_fn())
                flat_p[local] = orig
            g_fd = (f_plus - f_minus) / (2.0 * h)
            g_a = float(analytic[name].reshape(-1)[local])
            if abs(g_a) < resolution and abs(g_fd) < resolution:
                continue  # both are zero at measurement resolution
            rel = abs(g_a - g_fd) / max(abs(g_a), abs(g_fd), 1e-8)
            worst = max(worst, rel)
        per_group[group_name] = worst
    max_err = max(per_group.values()) if per_group else 0.0
    return FDReport(max_rel_error=max_err, per_group=per_group, tolerance=tolerance)


AUDIT_LOSSES = ("mse", "nova", "infonce", "siglip", "sigreg")


def _audit_fault_transform(fault: str | None, loss_name: str):
    if fault != loss_name:
        return None

    def corrupt(grads: dict) -> dict:
        first = next(iter(grads))
        grads = dict(grads)
        grads[first] = grads[first] * 1.01
        return grads

    return corrupt


def audit_all_losses(seed: int = 0, tolerance: float = 1e-4, fault: str | None = None, n_coords: int = 200) -> dict:
    """Finite-difference audit of every objective plus the regularizer, in
    double precision on small random instances. Returns loss -> max relative
    error. ``fault`` deliberately corrupts one analytic gradient of the named
    loss (negative control)."""
    if fault is not None and fault not in AUDIT_LOSSES:
        raise ValueError(f"unknown fault target {fault!r}")
    gen = torch.Generator().manual_seed(seed)
    results = {}

    def randn(*shape):
        return torch.randn(*shape, generator=gen, dtype=torch.float64)

    # element-mean alignment loss
    preds = randn(2, 3, 5).requires_grad_(True)
    anchors = randn(3, 5).requires_grad_(True)
    params = {"preds": preds, "anchors": anchors}
    rep = finite_difference_check(
        lambda: alignment_mse(preds, anchors),
        params,
        tolerance,
        n_coords=n_coords,
        seed=seed,
        grad_transform=_audit_fault_transform(fault, "mse"),
    )
    results["mse"] = rep.max_rel_error

    # contrastive baselines (normalization inside the audited graph)
    for name in ("infonce", "siglip"):
        v_raw = randn(5, 8).requires_grad_(True)
        t_raw = randn(5, 8).requires_grad_(True)
        log_tau = torch.zeros((), dtype=torch.float64, requires_grad=True)
        bias = torch.zeros((), dtype=torch.float64, requires_grad=True)

        def loss_fn(name=name, v_raw=v_raw, t_raw=t_raw, log_tau=log_tau, bias=bias):
            v = torch.nn.functional.normalize(v_raw, dim=1)
            t = torch.nn.functional.normalize(t_raw, dim=1)
            if name == "infonce":
                return infonce_loss(v, t, log_tau.exp())
            return siglip_loss(v, t, log_tau.exp(), bias)

        params = {"v": v_raw, "t": t_raw, "log_tau": log_tau}
        if name == "siglip":
            params["bias"] = bias
        rep = finite_difference_check(
            loss_fn, params, tolerance, n_coords=n_coords, seed=seed,
            grad_transform=_audit_fault_transform(fault, name),
        )
        results[name] = rep.max_rel_error

    # sketched regularizer, both paths
    emb = randn(10, 6).requires_grad_(True)
    cfg_closed = SigregConfig(m=8, mode="closed_form", resample_each_step=False, seed=seed)
    rep = finite_difference_check(
        lambda: sigreg_loss(emb, cfg_closed),
        {"emb": emb},
        tolerance,
        n_coords=n_coords,
        seed=seed,
        grad_transform=_audit_fault_transform(fault, "sigreg"),
    )
    results["sigreg"] = rep.max_rel_error

    # full combined objective through a micro model
    vit = ViTConfig(width=32, depth=1, heads=2, patch_size=32)
    spec = ModelSpec(vit=vit, predictor_hidden=32, out_dim=16, text_dim=32, text_seed=seed)
    model = build_model(spec, seed).double()
    model.train()
    images = randn(6, 3, 96, 96)
    texts = ["findings consistent with blob", "findings consistent with ring", "clear lungs noted"]
    sig_cfg = SigregConfig(m=8, mode="closed_form", resample_each_step=False, seed=seed)

    def nova_fn():
        emb_v = model.predictor(model.vision(images))
        views = emb_v.reshape(3, 2, 16).permute(1, 0, 2)
        anchors = model.text(texts)
        mse = alignment_mse(views, anchors)
        joint = torch.cat([views.reshape(-1, 16), anchors], dim=0)
        return nova_loss(mse, sigreg_loss(joint, sig_cfg), 0.02)

    params = dict(model.named_parameters())
    decay = [n for n, p in params.items() if p.ndim > 1]
    no_decay = [n for n, p in params.items() if p.ndim <= 1 and n.startswith(("vision", "predictor", "text"))]
    rep = finite_difference_check(
        nova_fn,
        params,
        tolerance,
        n_coords=n_coords,
        seed=seed,
        groups={"decay": decay, "no_decay": no_decay},
        grad_transform=_audit_fault_transform(fault, "nova"),
    )
    results["nova"] = rep.max_rel_error
    return results
