"""White-box evasion attacks: FGSM and PGD under an L-infinity budget.

Both attacks use the exact input gradient of the mean cross-entropy
(no gradient masking, no approximation) and are untargeted: they push
the input away from its true label.  Perturbed images always stay inside
the intersection of the epsilon-ball around the original and the valid
pixel box [0, 1].
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .network import backward, classification_loss, forward

DEFAULT_EPSILONS = (0.05, 0.10, 0.15, 0.20, 0.25, 0.30)
ATTACK_KINDS = ("fgsm", "pgd")


@dataclass
class AttackConfig:
    """Attack parameters; ``step_size`` defaults to 2.5 * epsilon / steps."""

    kind: str = "fgsm"
    epsilon: float = 0.1
    steps: int = 40
    step_size: float = None

    def __post_init__(self):
        if self.kind not in ATTACK_KINDS:
            raise ValueError(f"kind must be one of {ATTACK_KINDS}, got {self.kind!r}")
        if self.epsilon < 0.0:
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if self.step_size is not None and self.step_size <= 0.0:
            raise ValueError(f"step_size must be > 0, got {self.step_size}")

    def resolved_step_size(self):
        if self.step_size is not None:
            return self.step_size
        return 2.5 * self.epsilon / self.steps


def input_gradient(params, images, labels):
    """d mean-CE / d input pixels for a batch."""
    trace = forward(params, images)
    _, out_grad = classification_loss(trace, labels)
    return backward(params, trace, out_grad).input_grad


def _as_batch(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        return x[None, :], True
    return x, False


def _project_linf(adv, x, epsilon):
    """Clamp ``adv`` into the closed L-inf ball of radius epsilon around x.

    Clipping against x + epsilon alone is not enough in floating point:
    the bound itself rounds, so (x + epsilon) - x can exceed epsilon by
    one ulp.  Any such pixel is nudged one representable value toward x,
    which lands inside the ball (the rounding error is at most half an
    ulp).  Clipping to the [0, 1] box afterwards only ever moves values
    toward x, so the budget survives it.
    """
    adv = np.clip(adv, x - epsilon, x + epsilon)
    over = np.abs(adv - x) > epsilon
    while over.any():
        adv[over] = np.nextafter(adv[over], x[over])
        over = np.abs(adv - x) > epsilon
    return adv


def fgsm(params, images, labels, epsilon):
    """Fast gradient sign: x + epsilon * sign(d CE / d x), clipped to [0, 1].

    Zero-gradient pixels are left untouched (sign(0) = 0).  Accepts a
    single image (1-D) or a batch; the output matches the input's shape.
    """
    if epsilon < 0.0:
        raise ValueError(f"epsilon must be >= 0, got {epsilon}")
    x, single = _as_batch(images)
    labels = np.atleast_1d(np.asarray(labels))
    g = input_gradient(params, x, labels)
    adv = _project_linf(x + epsilon * np.sign(g), x, epsilon)
    adv = np.clip(adv, 0.0, 1.0)
    return adv[0] if single else adv


def pgd(params, images, labels, config):
    """Projected gradient descent in the L-infinity ball around the input.

    Starts at the clean input (no random start) and takes ``steps``
    signed-gradient steps of ``step_size``, projecting after each step
    onto the epsilon-ball and the pixel box.  With steps=1 and
    step_size=epsilon this reproduces fgsm exactly.
    """
    if config.kind != "pgd":
        raise ValueError(f"config.kind is {config.kind!r}, expected 'pgd'")
    x0, single = _as_batch(images)
    labels = np.atleast_1d(np.asarray(labels))
    eps = config.epsilon
    alpha = config.resolved_step_size()
    adv = x0.copy()
    for _ in range(config.steps):
        g = input_gradient(params, adv, labels)
        adv = _project_linf(adv + alpha * np.sign(g), x0, eps)
        adv = np.clip(adv, 0.0, 1.0)
    return adv[0] if single else adv


def attack_batch(params, images, labels, config):
    """Dispatch one batch through the configured attack."""
    if config.kind == "fgsm":
        return fgsm(params, images, labels, config.epsilon)
    return pgd(params, images, labels, config)


@dataclass
class SweepRow:
    attack: str
    epsilon: float
    n_examples: int
    n_correct: int

    @property
    def accuracy(self):
        return self.n_correct / self.n_examples


@dataclass
class FlipRecord:
    """A clean-correct example that the attack pushed to a wrong class."""

    attack: str
    epsilon: float
    index: int
    true_label: int
    adversarial_label: int
    adversarial_image: np.ndarray


@dataclass
class RobustnessReport:
    rows: list = field(default_factory=list)
    flips: list = field(default_factory=list)

    def accuracy_at(self, epsilon, attack=None):
        for row in self.rows:
            if row.epsilon == epsilon and (attack is None or row.attack == attack):
                return row.accuracy
        raise KeyError(f"no row for attack={attack!r} epsilon={epsilon}")

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            fh.write("# andnet robustness-report v1\n")
            writer = csv.writer(fh)
            writer.writerow(["attack", "epsilon", "n_examples", "n_correct", "accuracy"])
            for row in self.rows:
                writer.writerow(
                    [
                        row.attack,
                        f"{row.epsilon:.9g}",
                        row.n_examples,
                        row.n_correct,
                        f"{row.accuracy:.9g}",
                    ]
                )


def attack_sweep(
    params,
    dataset,
    kind,
    epsilons,
    *,
    steps=40,
    step_size=None,
    chunk_size=500,
    max_flips=0,
):
    """Accuracy under attack across an epsilon grid.

    Epsilon 0 reports clean accuracy (no gradient computation).  The set
    is processed in chunks to bound memory.  When ``max_flips`` > 0, up
    to that many flipped examples (clean-correct, adversarially wrong)
    are collected per epsilon for later export.
    """
    if kind not in ATTACK_KINDS:
        raise ValueError(f"kind must be one of {ATTACK_KINDS}, got {kind!r}")
    eps_list = [float(e) for e in epsilons]
    if any(e < 0 for e in eps_list):
        raise ValueError("epsilons must be >= 0")
    report = RobustnessReport()
    n = dataset.n
    for eps in eps_list:
        correct = 0
        flips_left = max_flips
        for start in range(0, n, chunk_size):
            images = dataset.images[start : start + chunk_size]
            labels = dataset.labels[start : start + chunk_size]
            if eps == 0.0:
                adv = images
            else:
                config = AttackConfig(
                    kind=kind, epsilon=eps, steps=steps, step_size=step_size
                )
                adv = attack_batch(params, images, labels, config)
            pred = np.argmax(forward(params, adv).outputs[-1], axis=1)
            correct += int((pred == labels).sum())
            if flips_left > 0 and eps > 0.0:
                clean_pred = np.argmax(forward(params, images).outputs[-1], axis=1)
                flipped = np.nonzero((clean_pred == labels) & (pred != labels))[0]
                for i in flipped[:flips_left]:
                    report.flips.append(
                        FlipRecord(
                            attack=kind,
                            epsilon=eps,
                            index=start + int(i),
                            true_label=int(labels[i]),
                            adversarial_label=int(pred[i]),
                            adversarial_image=adv[i].copy(),
                        )
                    )
                flips_left = max_flips - sum(
                    1 for f in report.flips if f.epsilon == eps
                )
        report.rows.append(SweepRow(kind, eps, n, correct))
    return report
