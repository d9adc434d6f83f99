"""Simulate how class templates evolve under cross-entropy on a single input.

Templates are stand-alone vectors here (no network). The unregularized step
can only move them along the input direction; with a total squared-norm
budget they converge to scaled copies of the input, positive for the true
class and negative for the rest.
"""

import csv
from dataclasses import dataclass, replace

import numpy as np

from .errors import DomainError
from .layers import softmax
from .tensor import as_array

UNIT_TOL = 1e-6


@dataclass
class TemplateState:
    templates: np.ndarray  # (C, D)
    biases: np.ndarray  # (C,)
    t: int = 0
    lr: float = 0.1
    budget: float | None = None

    @property
    def n_classes(self):
        return self.templates.shape[0]

    def scores(self, x):
        return self.templates @ x + self.biases

    def total_sq_norm(self):
        return float(np.sum(self.templates**2))

    def copy(self):
        return replace(self, templates=self.templates.copy(), biases=self.biases.copy())


def random_state(C, D, seed=0, lr=0.1, scale=1.0, budget=None):
    rng = np.random.default_rng(seed)
    return TemplateState(rng.standard_normal((C, D)) * scale, np.zeros(C), lr=lr, budget=budget)


def _unit(x):
    x = as_array(x).reshape(-1)
    n = np.linalg.norm(x)
    if abs(n - 1.0) > UNIT_TOL:
        raise DomainError(f"input must have unit norm, got {n}")
    return x


def _check_class(state, y):
    if not 0 <= y < state.n_classes:
        raise IndexError(f"class {y} out of range for {state.n_classes} classes")


def ce_loss(state, x, y):
    z = state.scores(as_array(x).reshape(-1))
    m = z.max()
    return float(m + np.log(np.exp(z - m).sum()) - z[y])


def ce_template_gradient(state, x, y):
    """Per-class gradient of the cross-entropy in the templates: ``x (p_c - [c == y])``.

    Returns ``(template_grads (C, D), bias_grads (C,))``. Both sum to zero over classes.
    """
    x = _unit(x)
    _check_class(state, y)
    p = softmax(state.scores(x))
    p[y] -= 1.0
    return np.outer(p, x), p


def step_unregularized(state, x, y):
    gA, gb = ce_template_gradient(state, x, y)
    return replace(
        state,
        templates=state.templates - state.lr * gA,
        biases=state.biases - state.lr * gb,
        t=state.t + 1,
    )


def _project(templates, K):
    total = np.sum(templates**2)
    if total > K:
        templates = templates * np.sqrt(K / total)
    return templates


def step_constrained(state, x, y, K=None):
    """Gradient step on the templates (biases fixed), then radial projection onto the budget."""
    K = state.budget if K is None else K
    if K is None or not K > 0:
        raise DomainError(f"budget must be > 0, got {K}")
    gA, _ = ce_template_gradient(state, x, y)
    A = _project(state.templates - state.lr * gA, K)
    return replace(state, templates=A, t=state.t + 1, budget=K)


def projected_gradient(state, x, y, K):
    """Template gradient with the component normal to the budget sphere removed (when on it)."""
    gA, _ = ce_template_gradient(state, x, y)
    A = state.templates
    if abs(np.sum(A**2) - K) <= 1e-9 * K:
        normal = A / np.linalg.norm(A)
        gA = gA - np.sum(gA * normal) * normal
    return gA


def optimal_coefficients(C, K):
    if C < 2:
        raise DomainError(f"need at least 2 classes, got {C}")
    if not K > 0:
        raise DomainError(f"budget must be > 0, got {K}")
    return np.sqrt((C - 1) * K / C), -np.sqrt(K / (C * (C - 1)))


def optimal_templates(x, C, K, y=0, lr=0.1):
    x = _unit(x)
    pos, neg = optimal_coefficients(C, K)
    if not 0 <= y < C:
        raise IndexError(f"class {y} out of range for {C} classes")
    coef = np.full(C, neg)
    coef[y] = pos
    return TemplateState(np.outer(coef, x), np.zeros(C), lr=lr, budget=K)


def reconstruction_identity_check(state, x):
    """``|| sum_c <A_c, x> A_c - x ||``."""
    x = as_array(x).reshape(-1)
    A = state.templates
    return float(np.linalg.norm(A.T @ (A @ x) - x))


def run_dynamics(state, x, y, steps, regularized=False, K=None, record_every=0):
    """Iterate single-sample steps; returns the final state and trajectory rows."""
    rows = []
    x = _unit(x)
    for _ in range(steps):
        if record_every and state.t % record_every == 0:
            rows += trajectory_rows(state, x)
        state = step_constrained(state, x, y, K) if regularized else step_unregularized(state, x, y)
    if record_every:
        rows += trajectory_rows(state, x)
    return state, rows


def trajectory_rows(state, x):
    rows = []
    for c, a in enumerate(state.templates):
        n = float(np.linalg.norm(a))
        cos = float(a @ x / n) if n > 0 else 0.0
        rows.append({"t": state.t, "class": c, "cos_to_x": cos, "norm": n})
    return rows


TRAJECTORY_COLUMNS = ["t", "class", "cos_to_x", "norm"]


def write_trajectory(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=TRAJECTORY_COLUMNS)
        w.writeheader()
        w.writerows(rows)
