"""Central finite-difference verification of the star network's gradients."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..ensemble import SUPERVISORS
from .layers import softmax_xent
from .star import StarNetwork


def relative_error(analytic, numeric, floor=1e-5):
    """Elementwise ``|a - n| / max(|a|, |n|, floor)``."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def numeric_grad(f, x: np.ndarray, h=1e-5) -> np.ndarray:
    """Central differences of scalar ``f()`` w.r.t. every entry of ``x`` (mutated in place, restored)."""
    g = np.zeros_like(x, dtype=np.float64)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


@dataclass
class GradCheckReport:
    max_rel_error: float = 0.0
    checked: int = 0
    skipped_kinks: int = 0
    worst: str = ""
    per_tensor: dict = field(default_factory=dict)


def _same(sig_a, sig_b) -> bool:
    return all(np.array_equal(a, b) for a, b in zip(sig_a, sig_b))


def check_network(
    net: StarNetwork,
    batch: dict,
    targets: dict,
    train=True,
    branches=SUPERVISORS,
    h=1e-5,
    floor=1e-5,
    max_per_tensor=None,
    seed=0,
) -> GradCheckReport:
    """Compare analytic and central-difference gradients for every parameter.

    The numeric side differentiates the loss with the cross-branch FC2 copies
    frozen at their unperturbed values, i.e. the function whose gradient the
    one-way sharing defines.

    Perturbations that flip a ReLU mask or a pooling argmax relative to the
    unperturbed pass sit on a non-differentiable kink and are skipped (and
    counted). ``max_per_tensor`` subsamples large tensors.
    """

    net.zero_grad()
    net.loss_and_backward(batch, targets, train, branches)
    frozen = {k: v.copy() for k, v in net.last_shared.items()}

    def loss():
        logits = net.forward(batch, train, frozen_shared=frozen)
        return sum(softmax_xent(logits[s], targets[s])[0] for s in branches)

    base_sig = [s.copy() for s in net.kink_signature()]
    analytic = {k: v.copy() for k, v in net.grads().items()}
    params = net.params()
    rng = np.random.default_rng(seed)
    report = GradCheckReport()
    for name, p in params.items():
        flat_idx = np.arange(p.size)
        if max_per_tensor is not None and p.size > max_per_tensor:
            flat_idx = rng.choice(p.size, size=max_per_tensor, replace=False)
        worst_here = 0.0
        for fi in flat_idx:
            i = np.unravel_index(fi, p.shape)
            old = p[i]
            p[i] = old + h
            fp = loss()
            kink = not _same(base_sig, net.kink_signature())
            p[i] = old - h
            fm = loss()
            kink = kink or not _same(base_sig, net.kink_signature())
            p[i] = old
            if kink:
                report.skipped_kinks += 1
                continue
            num = (fp - fm) / (2 * h)
            err = float(relative_error(analytic[name][i], num, floor))
            report.checked += 1
            worst_here = max(worst_here, err)
            if err > report.max_rel_error:
                report.max_rel_error = err
                report.worst = f"{name}{tuple(int(j) for j in i)}"
        report.per_tensor[name] = worst_here
    return report


def cross_branch_leak(net: StarNetwork, batch: dict, targets: dict, train=True) -> dict:
    """For each supervisor, the largest |gradient| reaching any *other* head's
    parameters when only that supervisor's loss is backpropagated."""
    leaks = {}
    for s in SUPERVISORS:
        net.zero_grad()
        net.loss_and_backward(batch, targets, train, branches=(s,))
        worst = 0.0
        for k, g in net.grads().items():
            if k.startswith("out.") and not k.startswith(f"out.{s}."):
                worst = max(worst, float(np.abs(g).max()))
        leaks[s] = worst
    return leaks
