"""Cross-modal GAN inversion: candidate initialisation, Adam descent, boosting."""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import torch

from .backends.base import Backends
from .errors import NonFiniteLoss, InversionRunError
from .styleloss import LossConfig, StyleLoss, get_style_loss
from .types import (BoostConfig, InversionConfig, LatentCode, PatchConfig, StyleRepresentation, StyleSpec,
                    spec_digest)

log = logging.getLogger(__name__)

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


def derive_seed(*keys: int) -> int:
    """Deterministic 63-bit seed from a tuple of non-negative integers."""
    # the length prefix keeps (a, b) and (a, b, 0) apart; SeedSequence ignores trailing zeros
    words = [len(keys)] + [int(k) & 0xFFFFFFFFFFFFFFFF for k in keys]
    state = np.random.SeedSequence(words).generate_state(2, dtype=np.uint32)
    return int(state[0]) << 31 | int(state[1]) >> 1


def eval_patch_seed(cfg: InversionConfig) -> int:
    """Patch seed shared by all initialisation candidates and the final evaluation."""
    return derive_seed(cfg.rng_seed, 1)


def step_patch_seed(cfg: InversionConfig, step: int) -> int:
    if cfg.fixed_patches:
        return eval_patch_seed(cfg)
    return derive_seed(cfg.rng_seed, 2, step)


@dataclass
class InversionTrace:
    per_step: list[tuple[int, float]] = field(default_factory=list)
    init_loss: float = math.nan
    wallclock: float = 0.0
    candidate_losses: list[float] = field(default_factory=list)

    def to_lines(self) -> list[str]:
        lines = [f"event=init L_sty={self.init_loss:.9g}"]
        lines += [f"step={s} L_sty={v:.9g}" for s, v in self.per_step]
        lines.append(f"event=done steps={len(self.per_step)} wallclock={self.wallclock:.3f}")
        return lines

    @classmethod
    def from_lines(cls, lines) -> "InversionTrace":
        trace = cls()
        for line in lines:
            kv = dict(tok.split("=", 1) for tok in line.split())
            if kv.get("event") == "init":
                trace.init_loss = float(kv["L_sty"])
            elif kv.get("event") == "done":
                trace.wallclock = float(kv["wallclock"])
            elif "step" in kv:
                trace.per_step.append((int(kv["step"]), float(kv["L_sty"])))
        return trace


def _loss_fn(spec, loss_cfg, patch_cfg, backends) -> StyleLoss:
    return get_style_loss(spec, loss_cfg, patch_cfg, backends.embedder)


def sample_candidates(cfg: InversionConfig, backends: Backends, rng=None) -> list[LatentCode]:
    """``cfg.init_candidates`` mapped latents from i.i.d. normal z's."""
    gen = np.random.default_rng(derive_seed(cfg.rng_seed, 0) if rng is None else rng)
    g = backends.generator
    return [g.map(g.sample_z(gen)) for _ in range(cfg.init_candidates)]


def score_candidates(candidates, spec: StyleSpec, cfg: InversionConfig, patch_cfg: PatchConfig,
                     loss_cfg: LossConfig, backends: Backends) -> list[float]:
    loss = _loss_fn(spec, loss_cfg, patch_cfg, backends)
    seed = eval_patch_seed(cfg)
    with torch.no_grad():
        return [loss(backends.generator.synthesize(c), seed).total for c in candidates]


def initialize_latent(spec: StyleSpec, cfg: InversionConfig, backends: Backends, patch_cfg: PatchConfig,
                      loss_cfg: LossConfig, rng=None, return_losses: bool = False):
    """Best of ``cfg.init_candidates`` mapped samples under one shared patch draw.

    Ties go to the lowest candidate index.
    """
    candidates = sample_candidates(cfg, backends, rng)
    losses = score_candidates(candidates, spec, cfg, patch_cfg, loss_cfg, backends)
    best = int(np.argmin(losses))
    if return_losses:
        return candidates[best], losses
    return candidates[best]


def invert(spec: StyleSpec, cfg: InversionConfig, patch_cfg: PatchConfig, loss_cfg: LossConfig,
           backends: Backends, rng=None, digest: str | None = None):
    """Run one inversion; returns ``(StyleRepresentation, InversionTrace)``."""
    t0 = time.perf_counter()
    gen = backends.generator
    loss = _loss_fn(spec, loss_cfg, patch_cfg, backends)
    init, cand_losses = initialize_latent(spec, cfg, backends, patch_cfg, loss_cfg, rng, return_losses=True)
    trace = InversionTrace(init_loss=min(cand_losses), candidate_losses=cand_losses)

    w = init.layers.detach().clone().requires_grad_(True)
    opt = torch.optim.Adam([w], lr=cfg.learning_rate, betas=ADAM_BETAS, eps=ADAM_EPS)
    for step in range(cfg.iterations):
        breakdown = loss(gen.synthesize(w), step_patch_seed(cfg, step))
        if not math.isfinite(breakdown.total):
            trace.wallclock = time.perf_counter() - t0
            raise NonFiniteLoss(f"non-finite L_sty at step {step}", trace)
        opt.zero_grad()
        breakdown.total_tensor.backward()
        if not torch.isfinite(w.grad).all():
            trace.wallclock = time.perf_counter() - t0
            raise NonFiniteLoss(f"non-finite gradient at step {step}", trace)
        opt.step()
        trace.per_step.append((step, breakdown.total))
        log.info("seed=%d step=%d %s", cfg.rng_seed, step, breakdown.log_fields())
        if cfg.early_stop_tol > 0 and len(trace.per_step) > 3:
            before, now = trace.per_step[-4][1], trace.per_step[-1][1]
            if before > 0 and (before - now) / before < cfg.early_stop_tol:
                break

    final = LatentCode(w.detach().clone())
    with torch.no_grad():
        image = gen.synthesize(final)
        final_loss = loss(image, eval_patch_seed(cfg)).total
    if not math.isfinite(final_loss):
        raise NonFiniteLoss("non-finite final L_sty", trace)
    trace.wallclock = time.perf_counter() - t0
    if digest is None:
        digest = spec_digest(spec, backends.identities)
    return StyleRepresentation(image.detach(), final, final_loss, digest), trace


def run_seed(base_seed: int, index: int) -> int:
    return derive_seed(base_seed, 3, index)


def invert_many(spec: StyleSpec, boost: BoostConfig, cfg: InversionConfig, patch_cfg: PatchConfig,
                loss_cfg: LossConfig, backends: Backends, jobs: int = 1, digest: str | None = None,
                return_traces: bool = False):
    """``boost.n_styles`` independent inversions, ordered by run index."""
    cfgs = [cfg.replace(rng_seed=run_seed(cfg.rng_seed, i)) for i in range(boost.n_styles)]

    def one(i):
        try:
            return invert(spec, cfgs[i], patch_cfg, loss_cfg, backends, digest=digest)
        except Exception as exc:
            raise InversionRunError(i, exc) from exc

    if jobs > 1 and boost.n_styles > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(one, range(boost.n_styles)))
    else:
        results = [one(i) for i in range(boost.n_styles)]
    reps = [r for r, _ in results]
    if return_traces:
        return reps, [t for _, t in results]
    return reps
