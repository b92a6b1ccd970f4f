"""Host-model delta scoring.

A host model is exposed as a logits function: it maps a sequence to an
L x V_model grid of per-position token logits in a single unmasked forward
pass. The score served to the sampler is the difference in summed
per-position log-probabilities between a variant and the wild type, so the
wild type always scores 0 and the normalizing constants of the host model
cancel.

Gradients are taken with respect to a relaxed one-hot input at the discrete
point, holding the selected indices fixed: only the dependence of the logits
on the input contributes, not the selection itself. A constant logits
function therefore has a zero gradient everywhere. Differentiable hosts must
accept an (L, V_model) relaxed one-hot torch tensor and return an
(L, V_model) logits tensor; hosts that only map token lists are rejected
with UnsupportedModel.
"""

from __future__ import annotations

import numpy as np


class UnsupportedModel(Exception):
    """The host cannot differentiate its logits w.r.t. a relaxed input."""


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def _logit_grid(logits_fn, x, length: int, vocab_size: int | None) -> np.ndarray:
    grid = np.asarray(logits_fn(list(x)), dtype=np.float64)
    if grid.ndim != 2 or grid.shape[0] != length:
        raise ValueError(f"logits grid {grid.shape} for sequence of length {length}")
    if vocab_size is not None and grid.shape[1] != vocab_size:
        raise ValueError(f"logits grid {grid.shape} vs vocab_size {vocab_size}")
    return grid


def mlm_delta_score(x, wt, logits_fn) -> float:
    """Sum of per-position log-probabilities of x minus the same for wt.

    Both sequences are scored with one unmasked forward pass each; no
    per-position masking is involved.
    """
    x = list(x)
    wt = list(wt)
    if len(x) != len(wt):
        raise ValueError(f"variant length {len(x)} vs wild type {len(wt)}")
    grid_x = _logit_grid(logits_fn, x, len(x), None)
    grid_wt = _logit_grid(logits_fn, wt, len(wt), grid_x.shape[1])
    rows = np.arange(len(x))
    term_x = _log_softmax(grid_x)[rows, x].sum()
    term_wt = _log_softmax(grid_wt)[rows, wt].sum()
    return float(term_x - term_wt)


def reference_gradient(logits_fn, x, vocab_size: int) -> np.ndarray:
    """Gradient of the delta score at the one-hot point of x.

    The wild-type term is constant, so this is the gradient of
    sum_i log_softmax(logits(X)_i)[x_i] at X = one_hot(x). Returns an
    (L, vocab_size) float64 grid.
    """
    try:
        import torch
    except ImportError:
        raise UnsupportedModel(
            "automatic differentiation requires the torch extra") from None

    x = list(x)
    one_hot = torch.zeros((len(x), vocab_size), dtype=torch.float64)
    one_hot[torch.arange(len(x)), torch.as_tensor(x)] = 1.0
    one_hot.requires_grad_(True)
    try:
        logits = logits_fn(one_hot)
    except Exception as exc:
        raise UnsupportedModel(
            f"host rejected a relaxed one-hot input: {exc}") from exc
    if not isinstance(logits, torch.Tensor):
        raise UnsupportedModel("host returned a non-tensor for a relaxed input")
    if logits.shape != one_hot.shape:
        raise ValueError(f"logits grid {tuple(logits.shape)} vs input "
                         f"{tuple(one_hot.shape)}")
    selected = torch.log_softmax(logits, dim=-1)[
        torch.arange(len(x)), torch.as_tensor(x)].sum()
    if not selected.requires_grad:
        # logits do not depend on the input at all
        return np.zeros((len(x), vocab_size), dtype=np.float64)
    grad, = torch.autograd.grad(selected, one_hot, allow_unused=True)
    if grad is None:
        return np.zeros((len(x), vocab_size), dtype=np.float64)
    return grad.detach().numpy().astype(np.float64, copy=False)
