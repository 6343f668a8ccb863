"""Combined soft-Dice and cross-entropy loss with its analytic gradient."""

from typing import NamedTuple, Tuple

import numpy as np

from cine_selftrain.grid import NUM_CLASSES

PROBABILITY_CLAMP = 1e-7
DICE_SMOOTHING = 1e-5


class LossWeights(NamedTuple):
    dice_weight: float = 1.0
    ce_weight: float = 1.0


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax, shifted by the row maximum for stability."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=1, keepdims=True)


def _check_inputs(probs: np.ndarray, target: np.ndarray) -> None:
    if probs.ndim != 2:
        raise ValueError(
            f"Expected (voxels, classes) probabilities, got {probs.shape}"
        )
    if target.shape != (probs.shape[0],):
        raise ValueError(
            f"Target shape {target.shape} does not match "
            f"{probs.shape[0]} voxels"
        )
    if probs.shape[0] == 0:
        raise ValueError("Cannot compute a loss over zero voxels")
    if target.min() < 0 or target.max() >= probs.shape[1]:
        raise ValueError("Target codes out of the class range")
    if np.max(np.abs(probs.sum(axis=1) - 1.0)) > 1e-6:
        raise ValueError("Probability rows must sum to 1")


def combined_loss(
    probs: np.ndarray,
    target: np.ndarray,
    weights: LossWeights = LossWeights(),
) -> Tuple[float, np.ndarray]:
    """Weighted cross-entropy plus one minus the mean soft Dice.

    The soft Dice of class ``c`` is
    ``(2 sum(p_c y_c) + eps) / (sum(p_c) + sum(y_c) + eps)``, averaged over
    the classes present in `target`. Cross-entropy is the mean of
    ``-log p[target]`` with probabilities clamped to ``[1e-7, 1 - 1e-7]``.

    :param probs: ``(voxels, classes)`` softmax output.
    :param target: ``(voxels,)`` integer class codes.
    :param weights: Dice and cross-entropy weights.
    :return: The loss and its gradient with respect to the logits that
        produced `probs`.
    :raises ValueError: On mismatched shapes or unnormalised rows.
    """
    probs = np.asarray(probs, dtype=np.float64)
    target = np.asarray(target).ravel().astype(np.intp)
    _check_inputs(probs, target)
    n, classes = probs.shape
    rows = np.arange(n)
    onehot = np.zeros_like(probs)
    onehot[rows, target] = 1.0

    p_true = probs[rows, target]
    clamped = np.clip(p_true, PROBABILITY_CLAMP, 1.0 - PROBABILITY_CLAMP)
    ce = float(-np.log(clamped).mean())
    grad_p = np.zeros_like(probs)
    inside = (p_true > PROBABILITY_CLAMP) & (p_true < 1.0 - PROBABILITY_CLAMP)
    grad_p[rows[inside], target[inside]] = (
        weights.ce_weight * -1.0 / (n * p_true[inside])
    )

    intersection = (probs * onehot).sum(axis=0)
    numerator = 2.0 * intersection + DICE_SMOOTHING
    denominator = probs.sum(axis=0) + onehot.sum(axis=0) + DICE_SMOOTHING
    present = onehot.sum(axis=0) > 0
    dice = numerator / denominator
    mean_dice = float(dice[present].mean())
    dice_grad = -(
        2.0 * onehot * denominator - numerator
    ) / denominator**2 / present.sum()
    grad_p[:, present] += weights.dice_weight * dice_grad[:, present]

    loss = weights.ce_weight * ce + weights.dice_weight * (1.0 - mean_dice)
    # Softmax Jacobian: dz_k = p_k (g_k - sum_j g_j p_j)
    grad_logits = probs * (grad_p - (grad_p * probs).sum(axis=1, keepdims=True))
    return float(loss), grad_logits


def uniform_probabilities(
    voxels: int, classes: int = NUM_CLASSES
) -> np.ndarray:
    return np.full((voxels, classes), 1.0 / classes)
