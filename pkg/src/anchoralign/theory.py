"""Exact and Monte Carlo information quantities, and randomized bound checks.

Two claims are checked numerically:

* for mutually independent modality variables ``Z_1..Z_J`` and an anchor
  variable ``A`` generated from them, ``sum_j I(A; Z_j) <= I(A; Z_1..Z_J)``;
* with per-modality Gaussian posteriors, summing one ELBO per modality gives a
  value no larger than the ELBO of the stacked variable.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

EXACT_SLACK = 1e-9
MC_SIGMAS = 3.0


def kl_gaussian(mu1, sigma1, mu2, sigma2):
    """KL(N(mu1, sigma1^2) || N(mu2, sigma2^2)); sigmas are standard deviations."""
    sigma1 = np.asarray(sigma1, dtype=np.float64)
    sigma2 = np.asarray(sigma2, dtype=np.float64)
    if np.any(sigma1 <= 0) or np.any(sigma2 <= 0):
        raise ValueError("standard deviations must be positive")
    mu1 = np.asarray(mu1, dtype=np.float64)
    mu2 = np.asarray(mu2, dtype=np.float64)
    out = np.log(sigma2 / sigma1) + (sigma1**2 + (mu1 - mu2) ** 2) / (2 * sigma2**2) - 0.5
    return float(out) if out.ndim == 0 else out


def gaussian_logpdf(x, mu, sigma):
    x = np.asarray(x, dtype=np.float64)
    return -0.5 * ((x - mu) / sigma) ** 2 - np.log(sigma) - 0.5 * math.log(2 * math.pi)


def mc_kl_estimate(
    sample_p: Callable[[np.random.Generator, int], np.ndarray],
    log_p: Callable[[np.ndarray], np.ndarray],
    log_q: Callable[[np.ndarray], np.ndarray],
    n: int,
    rng: Optional[np.random.Generator] = None,
) -> tuple[float, float]:
    """Monte Carlo KL(P || Q) and the standard error of the mean."""
    if n < 1000:
        raise ValueError("use at least 1000 samples")
    rng = np.random.default_rng() if rng is None else rng
    x = sample_p(rng, n)
    lq = np.asarray(log_q(x), dtype=np.float64)
    if not np.all(np.isfinite(lq)):
        raise FloatingPointError("Q has zero density at a sample drawn from P; KL diverges")
    diff = np.asarray(log_p(x), dtype=np.float64) - lq
    return float(diff.mean()), float(diff.std(ddof=1) / math.sqrt(n))


def gaussian_mixture_logpdf(x, weights, mus, sigmas):
    x = np.asarray(x, dtype=np.float64)[..., None]
    comp = gaussian_logpdf(x, np.asarray(mus), np.asarray(sigmas)) + np.log(np.asarray(weights))
    m = comp.max(axis=-1, keepdims=True)
    return (m + np.log(np.exp(comp - m).sum(axis=-1, keepdims=True)))[..., 0]


# --- discrete joints ----------------------------------------------------------


@dataclass
class DiscreteJoint:
    pmf: np.ndarray
    axes: tuple[str, ...]

    def __post_init__(self):
        self.pmf = np.asarray(self.pmf, dtype=np.float64)
        self.axes = tuple(self.axes)
        if self.pmf.ndim != len(self.axes):
            raise ValueError(f"pmf has {self.pmf.ndim} dims but {len(self.axes)} axis names")
        if len(set(self.axes)) != len(self.axes):
            raise ValueError("axis names must be unique")
        if np.any(self.pmf < 0):
            raise ValueError("negative probability")
        if abs(self.pmf.sum() - 1.0) > 1e-12:
            raise ValueError(f"pmf sums to {self.pmf.sum()!r}, not 1")

    def index(self, names) -> tuple[int, ...]:
        if isinstance(names, str):
            names = (names,)
        try:
            return tuple(self.axes.index(n) if isinstance(n, str) else int(n) for n in names)
        except ValueError as exc:
            raise ValueError(f"unknown axis in {names}: {exc}") from None


def mi_discrete(joint: DiscreteJoint, axes_a, axes_b) -> float:
    """I(A; B) in nats between two disjoint axis groups; other axes are summed out."""
    ia, ib = joint.index(axes_a), joint.index(axes_b)
    if not ia or not ib:
        raise ValueError("both axis groups must be non-empty")
    if set(ia) & set(ib):
        raise ValueError(f"axis groups overlap: {ia} and {ib}")
    if any(not 0 <= i < joint.pmf.ndim for i in ia + ib):
        raise ValueError("axis index out of range")
    rest = tuple(i for i in range(joint.pmf.ndim) if i not in ia + ib)
    p = joint.pmf.sum(axis=rest) if rest else joint.pmf
    # reorder so that A-axes come first
    kept = [i for i in range(joint.pmf.ndim) if i not in rest]
    order = [kept.index(i) for i in ia + ib]
    p = np.transpose(p, order)
    pa_shape = p.shape[: len(ia)]
    p2 = p.reshape(int(np.prod(pa_shape)), -1)
    pa = p2.sum(axis=1, keepdims=True)
    pb = p2.sum(axis=0, keepdims=True)
    nz = p2 > 0
    return float(np.sum(p2[nz] * np.log(p2[nz] / (pa * pb)[nz])))


def independent_anchor_joint(rng: np.random.Generator, sizes: Sequence[int], anchor_size: int) -> DiscreteJoint:
    """Random joint of ``(A, Z_1..Z_J)`` with independent ``Z_j`` and a random channel ``P(A | Z)``."""
    marginals = [rng.dirichlet(np.ones(s)) for s in sizes]
    pz = marginals[0]
    for m in marginals[1:]:
        pz = np.multiply.outer(pz, m)
    concentration = rng.choice([0.2, 1.0, 5.0])
    channel = rng.dirichlet(np.full(anchor_size, concentration), size=pz.shape)
    pmf = np.moveaxis(pz[..., None] * channel, -1, 0)
    pmf = pmf / pmf.sum()
    return DiscreteJoint(pmf, ("A",) + tuple(f"Z{j + 1}" for j in range(len(sizes))))


def single_letter_sides(joint: DiscreteJoint, anchor_axis: str = "A") -> tuple[float, float]:
    zs = [a for a in joint.axes if a != anchor_axis]
    lhs = sum(mi_discrete(joint, anchor_axis, z) for z in zs)
    rhs = mi_discrete(joint, anchor_axis, zs)
    return lhs, rhs


@dataclass
class VerificationRecord:
    name: str
    trials: int
    violations: list[int] = field(default_factory=list)
    max_slack: float = 0.0
    rows: list[dict] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.violations

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (
            f"{self.name}: {status} trials={self.trials} violations={len(self.violations)} "
            f"max_slack={self.max_slack:.3e}"
        )

    def write_csv(self, path) -> None:
        cols = ["trial", "lhs", "rhs", "gap", "se"]
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=cols, extrasaction="ignore", lineterminator="\n")
            w.writeheader()
            for r in self.rows:
                w.writerow({k: (f"{r[k]:.12g}" if isinstance(r.get(k), float) else r.get(k)) for k in cols})


def trial_rng(seed: int, trial: int) -> np.random.Generator:
    return np.random.default_rng([seed, trial])


def check_single_letterization(
    trials: int = 1000,
    n_modalities: Sequence[int] | int = (2, 3, 4),
    max_alphabet: int = 4,
    seed: int = 0,
) -> VerificationRecord:
    """Randomized check of ``sum_j I(A;Z_j) <= I(A;Z)`` under independent ``Z_j``.

    ``max_slack`` is the largest ``lhs - rhs`` seen (negative when the bound
    is strict everywhere).
    """
    js = [n_modalities] if isinstance(n_modalities, int) else list(n_modalities)
    if min(js) < 2 or max_alphabet < 2 or max_alphabet > 4:
        raise ValueError("need J >= 2 and alphabet sizes in [2, 4]")
    rec = VerificationRecord("single_letterization", trials, max_slack=-math.inf)
    for t in range(trials):
        rng = trial_rng(seed, t)
        J = int(js[t % len(js)])
        sizes = rng.integers(2, max_alphabet + 1, size=J)
        joint = independent_anchor_joint(rng, sizes, int(rng.integers(2, max_alphabet + 1)))
        lhs, rhs = single_letter_sides(joint)
        slack = lhs - rhs
        rec.max_slack = max(rec.max_slack, slack)
        if slack > EXACT_SLACK:
            rec.violations.append(t)
        rec.rows.append({"trial": t, "lhs": lhs, "rhs": rhs, "gap": rhs - lhs, "se": 0.0})
    return rec


# --- Gaussian ELBO comparison -------------------------------------------------


@dataclass
class GaussianModel:
    """Per-modality diagonal posteriors ``q_j`` over ``dim``-vectors and one anchor.

    The stacked posterior is the product of the ``q_j`` (independent
    modalities); the stacked anchor is the anchor repeated for every block.
    ``target`` parameterizes the quadratic log-likelihood surrogate
    ``-0.5 * ||z - target||^2`` per modality and ``-0.5 * ||mean_j z_j - target||^2``
    for the stacked variable.
    """

    means: np.ndarray  # (J, dim)
    sigmas: np.ndarray  # (J, dim)
    anchor_mean: np.ndarray  # (dim,)
    anchor_sigma: np.ndarray  # (dim,)
    target: np.ndarray  # (dim,)
    mixture_weights: Optional[np.ndarray] = None

    def __post_init__(self):
        self.means = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        self.sigmas = np.atleast_2d(np.asarray(self.sigmas, dtype=np.float64))
        if np.any(self.sigmas <= 0) or np.any(np.asarray(self.anchor_sigma) <= 0):
            raise ValueError("variances must be positive")
        if self.mixture_weights is not None:
            w = np.asarray(self.mixture_weights, dtype=np.float64)
            if np.any(w < 0) or abs(w.sum() - 1) > 1e-9:
                raise ValueError("mixture weights must be nonnegative and sum to 1")

    @property
    def n_modalities(self) -> int:
        return self.means.shape[0]


def _loglik(z, target):
    return -0.5 * np.sum((z - target) ** 2, axis=-1)


def _elbo_integrand(z, means, sigmas, anchor_mean, anchor_sigma, target, joint: bool):
    # z: (n, J, dim) for joint, (n, dim) otherwise
    log_q = gaussian_logpdf(z, means, sigmas).sum(axis=tuple(range(1, z.ndim)))
    log_p = gaussian_logpdf(z, anchor_mean, anchor_sigma).sum(axis=tuple(range(1, z.ndim)))
    ll = _loglik(z.mean(axis=1), target) if joint else _loglik(z, target)
    return ll + log_p - log_q


def elbo_sides(model: GaussianModel, n: int, rng: np.random.Generator) -> dict:
    """Monte Carlo estimates of the summed per-modality ELBO (lhs) and stacked ELBO (rhs)."""
    J, dim = model.means.shape
    lhs, lhs_var = 0.0, 0.0
    for j in range(J):
        z = model.means[j] + model.sigmas[j] * rng.standard_normal((n, dim))
        f = _elbo_integrand(z, model.means[j], model.sigmas[j], model.anchor_mean, model.anchor_sigma, model.target, False)
        lhs += f.mean()
        lhs_var += f.var(ddof=1) / n
    z = model.means + model.sigmas * rng.standard_normal((n, J, dim))
    f = _elbo_integrand(z, model.means, model.sigmas, model.anchor_mean, model.anchor_sigma, model.target, True)
    rhs, rhs_var = f.mean(), f.var(ddof=1) / n
    return {
        "lhs": float(lhs),
        "rhs": float(rhs),
        "gap": float(rhs - lhs),
        "se": float(math.sqrt(lhs_var + rhs_var)),
    }


def elbo_sides_exact(model: GaussianModel) -> tuple[float, float]:
    """Closed-form counterpart of :func:`elbo_sides`."""
    m, s, t = model.means, model.sigmas, model.target
    kl = kl_gaussian(m, s, model.anchor_mean, model.anchor_sigma).sum()
    ll_each = -0.5 * (np.sum((m - t) ** 2) + np.sum(s**2))
    J = model.n_modalities
    ll_joint = -0.5 * (np.sum((m.mean(axis=0) - t) ** 2) + np.sum(s**2) / J**2)
    return float(ll_each - kl), float(ll_joint - kl)


def random_gaussian_model(rng: np.random.Generator, n_modalities: int, dim: int = 2) -> GaussianModel:
    return GaussianModel(
        means=rng.normal(0, 1.5, size=(n_modalities, dim)),
        sigmas=np.exp(rng.uniform(-1.0, 0.7, size=(n_modalities, dim))),
        anchor_mean=rng.normal(0, 1.0, size=dim),
        anchor_sigma=np.exp(rng.uniform(-0.5, 0.5, size=dim)),
        target=rng.normal(0, 1.0, size=dim),
    )


def check_elbo_tightness(
    trials: int = 200, n_modalities: int = 4, seed: int = 0, n: int = 10_000, dim: int = 2
) -> VerificationRecord:
    """Check ``lhs <= rhs + 3 * se`` on random Gaussian models."""
    if n_modalities < 1:
        raise ValueError("need at least one modality")
    rec = VerificationRecord("elbo_tightness", trials, max_slack=-math.inf)
    for t in range(trials):
        rng = trial_rng(seed, t)
        model = random_gaussian_model(rng, n_modalities, dim)
        r = elbo_sides(model, n, rng)
        slack = (r["lhs"] - r["rhs"]) / r["se"] if r["se"] > 0 else r["lhs"] - r["rhs"]
        rec.max_slack = max(rec.max_slack, slack)
        if r["lhs"] > r["rhs"] + MC_SIGMAS * r["se"]:
            rec.violations.append(t)
        rec.rows.append({"trial": t, **r})
    return rec


def theory_report(seed: int = 0, discrete_trials: int = 1000, gaussian_trials: int = 200) -> tuple[str, list[VerificationRecord]]:
    records = [
        check_single_letterization(discrete_trials, seed=seed),
        check_elbo_tightness(gaussian_trials, seed=seed),
    ]
    lines = [r.summary() for r in records]
    lines.append(f"kl_gaussian N(1,1)||N(0,1) = {kl_gaussian(1, 1, 0, 1):.6f}")
    lines.append(f"kl_gaussian N(0,4)||N(0,1) = {kl_gaussian(0, 2, 0, 1):.6f}")
    return "\n".join(lines) + "\n", records
