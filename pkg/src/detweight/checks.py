"""Gradient validation battery: every analytic gradient in the library
compared against central finite differences.

Pure-math derivatives must agree to 1e-6 relative; full network pipelines
(which stack many float operations) to 1e-4. The battery is what the
`gradcheck` CLI command runs and what the acceptance suite asserts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .losses import RegularizerConfig, SampleRecord, uncertainty_loss, uncertainty_loss_grad
from .nn import MlpParams, gradcheck, init_mlp, mlp_backward, mlp_forward, rng_from_seed
from .swn import SwnBatch, SwnConfig, init_swn_params, swn_loss_and_grads

__all__ = ["CheckResult", "run_gradient_battery"]

FD_STEP = 1e-5
TOL_PURE = 1e-6
TOL_PIPELINE = 1e-4


@dataclass(frozen=True)
class CheckResult:
    name: str
    max_rel_err: float
    n_checked: int
    n_excluded: int
    tol: float

    @property
    def passed(self) -> bool:
        return self.n_checked > 0 and self.max_rel_err <= self.tol


def _rel(a: float, b: float) -> float:
    if abs(a) < 1e-10 and abs(b) < 1e-10:
        return 0.0
    return abs(a - b) / max(abs(a), abs(b))


def _check_uncertainty(n_points: int, seed: int) -> CheckResult:
    """Partials of the per-sample weighted loss w.r.t. losses and m values."""
    rng = rng_from_seed(seed, 1)
    worst = 0.0
    for _ in range(n_points):
        rec = SampleRecord(0, bool(rng.random() < 0.7),
                           l_cls=float(rng.uniform(0.0, 5.0)),
                           l_reg=float(rng.uniform(0.0, 5.0)),
                           iou=0.0, prob=0.0,
                           m_cls=float(rng.uniform(-1.5, 1.5)),
                           m_reg=float(rng.uniform(-1.5, 1.5)))
        if not rec.positive:
            rec.l_reg = 0.0
        reg = RegularizerConfig(float(rng.uniform(0.0, 1.0)), float(rng.uniform(0.0, 1.0)))
        g = uncertainty_loss_grad(rec, reg)
        for attr, an in (("l_cls", g.d_l_cls), ("l_reg", g.d_l_reg),
                         ("m_cls", g.d_m_cls), ("m_reg", g.d_m_reg)):
            if attr in ("l_reg", "m_reg") and not rec.positive:
                continue
            orig = getattr(rec, attr)
            setattr(rec, attr, orig + FD_STEP)
            hi = uncertainty_loss(rec, reg)
            setattr(rec, attr, orig - FD_STEP)
            lo = uncertainty_loss(rec, reg)
            setattr(rec, attr, orig)
            worst = max(worst, _rel(an, (hi - lo) / (2 * FD_STEP)))
    return CheckResult("uncertainty_loss_grad", worst, n_points * 4, 0, TOL_PURE)


def _check_mlp(seed: int) -> CheckResult:
    """Dense-net backprop on random nets against finite differences."""
    rng = rng_from_seed(seed, 2)
    worst, checked, excluded = 0.0, 0, 0
    for dims in ([5, 8, 3], [4, 6, 6, 2], [3, 1]):
        p = init_mlp(dims, 0.0, 0.5, rng)
        x = rng.standard_normal((7, dims[0]))
        v = rng.standard_normal((7, dims[-1]))

        def f(params, _p=p, _x=x, _v=v):
            y, tape = mlp_forward(_p, _x)
            val = float((y * _v).sum())
            _, grads = mlp_backward(_p, tape, _v)
            flat = []
            for g in grads:
                flat.append(g.dw)
                flat.append(g.db)
            return val, flat

        report = gradcheck(f, p.parameters(), h=FD_STEP)
        worst = max(worst, report.max_rel_err)
        checked += report.n_checked
        excluded += len(report.excluded)
    return CheckResult("mlp_backward", worst, checked, excluded, TOL_PURE)


def _check_swn_pipeline(seed: int, n_coords: int) -> CheckResult:
    """Full weighting-network objective (embeddings, heads, clipping,
    smoothing, batch reduction) against finite differences."""
    rng = rng_from_seed(seed, 3)
    cfg = SwnConfig(embed_dim=8, head_hidden=(16,), init_std=0.05)
    params = init_swn_params(cfg, rng)
    n = 24
    pos = rng.random(n) < 0.5
    pos[0] = True
    batch = SwnBatch(rng.uniform(0.0, 3.0, n),
                     np.where(pos, rng.uniform(0.0, 3.0, n), 0.0),
                     np.where(pos, rng.uniform(0.0, 1.0, n), 0.0),
                     np.where(pos, rng.uniform(0.0, 1.0, n), 0.0),
                     pos)
    reg = RegularizerConfig(0.5, 0.5)

    def f(_params):
        r = swn_loss_and_grads(params, batch, reg)
        return r.loss, r.grads

    report = gradcheck(f, params.parameters(), h=FD_STEP, n_coords=n_coords,
                       rng=rng_from_seed(seed, 4))
    return CheckResult("swn_pipeline", report.max_rel_err, report.n_checked,
                       len(report.excluded), TOL_PIPELINE)


def _check_detector_pipeline(seed: int, n_coords: int) -> CheckResult:
    """Weighted two-task detector loss through both heads under fixed
    per-sample weights, as the trainer computes it."""
    rng = rng_from_seed(seed, 5)
    n, d, c = 20, 7, 3
    feats = rng.standard_normal((n, d))
    target_cls = rng.integers(0, c + 1, n)
    target_off = rng.standard_normal((n, 4))
    pos = rng.random(n) < 0.5
    pos[0] = True
    s_cls = rng.uniform(0.1, 2.0, n)
    s_reg = np.where(pos, rng.uniform(0.1, 2.0, n), 0.0)
    n1, n2 = n, int(pos.sum())
    cls_head = init_mlp([d, 10, c + 1], 0.0, 0.4, rng)
    reg_head = init_mlp([d, 10, 4], 0.0, 0.4, rng)
    params = cls_head.parameters() + reg_head.parameters()

    def f(_params):
        logits, cls_tape = mlp_forward(cls_head, feats)
        offs, reg_tape = mlp_forward(reg_head, feats)
        z = logits - logits.max(axis=1, keepdims=True)
        lse = np.log(np.exp(z).sum(axis=1))
        l_cls = lse - z[np.arange(n), target_cls]
        diff = offs - target_off
        l_reg = np.where(pos, (diff * diff).sum(axis=1), 0.0)
        loss = float((s_cls * l_cls).sum() / n1 + (s_reg * l_reg).sum() / n2)

        probs = np.exp(z) / np.exp(z).sum(axis=1, keepdims=True)
        dlogits = probs.copy()
        dlogits[np.arange(n), target_cls] -= 1.0
        dlogits *= (s_cls / n1)[:, None]
        doff = 2.0 * diff * (s_reg / n2)[:, None]
        _, cls_grads = mlp_backward(cls_head, cls_tape, dlogits)
        _, reg_grads = mlp_backward(reg_head, reg_tape, doff)
        flat = []
        for g in cls_grads + reg_grads:
            flat.append(g.dw)
            flat.append(g.db)
        return loss, flat

    report = gradcheck(f, params, h=FD_STEP, n_coords=n_coords,
                       rng=rng_from_seed(seed, 6))
    return CheckResult("detector_pipeline", report.max_rel_err, report.n_checked,
                       len(report.excluded), TOL_PIPELINE)


def run_gradient_battery(seed: int = 0, n_points: int = 120,
                         n_coords: int = 120) -> list[CheckResult]:
    """All gradient checks; each probes at least `n_points`/`n_coords`
    random points or coordinates."""
    return [
        _check_uncertainty(n_points, seed),
        _check_mlp(seed),
        _check_swn_pipeline(seed, n_coords),
        _check_detector_pipeline(seed, n_coords),
    ]
