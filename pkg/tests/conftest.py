"""Shared fixtures, the finite-difference gradient oracle, and the
acceptance-criteria summary printed at the end of the run."""

from __future__ import annotations

import functools
from pathlib import Path

import pytest
import torch

from shuffle_histo.data import synth_dataset
from shuffle_histo.model import ModelConfig

ACCEPTANCE_RESULTS: dict[int, tuple[str, str]] = {}


def record_acceptance(n: int, status: str, detail: str = "") -> None:
    ACCEPTANCE_RESULTS[n] = (status, detail)


def acceptance(n: int, title: str):
    """Wrap a test so its outcome lands in the end-of-run acceptance summary.
    The wrapped test may return a short measured-detail string."""

    def deco(fn):
        @functools.wraps(fn)
        def wrapper(*args, **kwargs):
            try:
                detail = fn(*args, **kwargs)
            except pytest.skip.Exception as exc:
                record_acceptance(n, "SKIP", f"{title}: {exc}")
                raise
            except BaseException as exc:
                record_acceptance(
                    n, "FAIL", f"{title}: {type(exc).__name__}: {exc}"
                )
                raise
            record_acceptance(
                n, "PASS", title + (f" [{detail}]" if detail else "")
            )

        return wrapper

    return deco


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for n in sorted(ACCEPTANCE_RESULTS):
        status, detail = ACCEPTANCE_RESULTS[n]
        terminalreporter.write_line(f"criterion {n:2d}: {status} - {detail}")


def fd_gradient(fn, x: torch.Tensor, step: float) -> torch.Tensor:
    """Central-difference gradient of a scalar-valued fn at x, element by
    element. Independent of autograd by construction."""
    grad = torch.zeros_like(x)
    flat = x.reshape(-1)
    grad_flat = grad.reshape(-1)
    with torch.no_grad():
        for i in range(flat.numel()):
            orig = flat[i].item()
            flat[i] = orig + step
            plus = float(fn(x))
            flat[i] = orig - step
            minus = float(fn(x))
            flat[i] = orig
            grad_flat[i] = (plus - minus) / (2.0 * step)
    return grad


def relative_error(a: torch.Tensor, b: torch.Tensor) -> float:
    denom = max(float(a.norm()), float(b.norm()), 1e-30)
    return float((a - b).norm()) / denom


def autograd_gradient(module: torch.nn.Module, x: torch.Tensor) -> torch.Tensor:
    x = x.clone().requires_grad_(True)
    module(x).sum().backward()
    return x.grad.detach().clone()


def tiny_model_config(**overrides) -> ModelConfig:
    base = dict(
        backbone_name="mobilenet_v1_025",
        truncate_at_stride=16,
        freeze_backbone_epochs=0,
        stem_channels=16,
        num_rdab_stages=1,
        head_channels=8,
    )
    base.update(overrides)
    return ModelConfig(**base)


@pytest.fixture(scope="session")
def tiny_cfg() -> ModelConfig:
    return tiny_model_config()


@pytest.fixture(scope="session")
def synth_root(tmp_path_factory) -> Path:
    """48 images: 6 per class at each of the four magnifications."""
    root = tmp_path_factory.mktemp("synth") / "data"
    synth_dataset(root, n_per_class=6, seed=3)
    return root


@pytest.fixture(scope="session")
def mono_root(tmp_path_factory) -> Path:
    """24 single-magnification images for fast training tests."""
    root = tmp_path_factory.mktemp("mono") / "data"
    synth_dataset(root, n_per_class=12, magnifications=(40,), seed=7)
    return root
