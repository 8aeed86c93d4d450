"""Finite-difference check of the full model under each training objective."""

from __future__ import annotations

import numpy as np

from .autodiff import GradCheckReport, RngStream, grad_check
from .classification import ClassifierHead, ce_loss, mce_terms
from .contrastive import rml_loss
from .fusion import FusionConfig, forward, init_model
from .perturbation import PerturbationConfig
from .training import perturbed_pair

OBJECTIVES = ("rml", "ce+rml", "mce+rml")


def run_suite(seed: int = 0, dims=(5, 7, 4), d_e: int = 8, d: int = 8, n: int = 4,
              n_classes: int = 3, lam: float = 0.7, step: float = 1e-5,
              tol: float = 1e-3) -> dict[str, GradCheckReport]:
    """Random double-precision model; perturbation and dropout draws frozen per objective."""
    root = RngStream(seed, ("gradcheck",))
    cfg = FusionConfig(list(dims), d_e=d_e, d=d, dtype="float64")
    model = init_model(cfg, root.fork("init"))
    head = ClassifierHead.init(d, n_classes, root.fork("head"), "float64")
    data_rng = root.fork("data").generator
    batch = [data_rng.normal(size=(n, dm)) for dm in dims]
    y = data_rng.integers(0, n_classes, n)
    pcfg = PerturbationConfig(p=0.5, sigma=0.4, r=0.5)

    def rml_only():
        r = root.fork("draws")
        z_n, z_m = perturbed_pair(model, batch, pcfg, r, r.fork("dropout"))
        return rml_loss(z_n, z_m)

    def ce_plus():
        r = root.fork("draws")
        drop = r.fork("dropout")
        task = ce_loss(head(forward(model, batch, True, drop)), y)
        z_n, z_m = perturbed_pair(model, batch, pcfg, r, drop)
        return task + rml_loss(z_n, z_m) * lam

    def mce_plus():
        r = root.fork("draws")
        task, z_n, z_m = mce_terms(model, head, batch, y, pcfg, r, True, r.fork("dropout"))
        return task + rml_loss(z_n, z_m) * lam

    with_head = {**model.params, **head.params}
    return {
        "rml": grad_check(rml_only, model.params, step, tol),
        "ce+rml": grad_check(ce_plus, with_head, step, tol),
        "mce+rml": grad_check(mce_plus, with_head, step, tol),
    }


def all_passed(reports: dict) -> bool:
    return all(r.passed for r in reports.values())


def max_error(reports: dict) -> float:
    return float(np.max([r.max_rel_err for r in reports.values()]))
