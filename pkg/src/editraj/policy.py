"""Group-relative policy-optimization quantities over logged log-probabilities.

Nothing here differentiates anything. Each objective returns its scalar value
plus the detached per-token coefficients a training stack needs to rebuild
the loss with its own autodiff. Reductions use ``math.fsum`` so results do
not depend on summation order.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from typing import Mapping, Sequence

import numpy as np

from .errors import DegenerateGroup, InputError, LengthMismatch, NonFiniteRatio

# exp(50) ~ 5e21: beyond this a log-ratio is a logging bug, not a policy update.
LOG_RATIO_CAP = 50.0


class Algorithm(str, Enum):
    GRPO = "grpo"
    GSPO = "gspo"
    CISPO = "cispo"


@dataclass(frozen=True)
class SurrogateConfig:
    algorithm: Algorithm = Algorithm.GRPO
    eps_low: float = 0.2
    eps_high: float = 0.2
    beta_kl: float = 0.0
    adv_epsilon: float = 1e-8
    num_generations: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "algorithm", Algorithm(self.algorithm))
        if self.eps_low <= 0 or self.eps_high <= 0:
            raise ValueError("clip epsilons must be positive")
        if self.beta_kl < 0:
            raise ValueError("beta_kl must be >= 0")
        if self.adv_epsilon <= 0:
            raise ValueError("adv_epsilon must be positive")

    @classmethod
    def from_dict(cls, d: Mapping) -> "SurrogateConfig":
        return cls(
            algorithm=d["algorithm"],
            eps_low=float(d["eps_low"]),
            eps_high=float(d["eps_high"]),
            beta_kl=float(d.get("beta_kl", 0.0)),
            adv_epsilon=float(d.get("adv_epsilon", 1e-8)),
            num_generations=d.get("num_generations"),
        )


def load_config(name_or_path: str) -> SurrogateConfig:
    """Bundled presets: ``grpo-paper``, ``gspo-paper``, ``cispo-paper``."""
    if name_or_path.endswith(".json"):
        with open(name_or_path, encoding="utf-8") as fh:
            return SurrogateConfig.from_dict(json.load(fh))
    text = resources.files("editraj").joinpath("presets", f"{name_or_path}.json").read_text()
    return SurrogateConfig.from_dict(json.loads(text))


@dataclass
class RolloutGroup:
    """G rollouts for one prompt; log-prob arrays are ragged across rollouts."""

    rewards: list[float]
    logp: list[np.ndarray]
    logp_old: list[np.ndarray]
    logp_ref: list[np.ndarray]

    def __post_init__(self):
        self.rewards = [float(r) for r in self.rewards]
        self.logp = [np.asarray(x, dtype=np.float64) for x in self.logp]
        self.logp_old = [np.asarray(x, dtype=np.float64) for x in self.logp_old]
        self.logp_ref = [np.asarray(x, dtype=np.float64) for x in self.logp_ref]
        g = len(self.rewards)
        if not (len(self.logp) == len(self.logp_old) == len(self.logp_ref) == g):
            raise InputError("every rollout needs a reward and three log-prob arrays")
        for i, (a, b, c) in enumerate(zip(self.logp, self.logp_old, self.logp_ref)):
            if not (a.shape == b.shape == c.shape) or a.ndim != 1:
                raise LengthMismatch(len(a), len(b), f"log-prob arrays of rollout {i}")
            if a.size == 0:
                raise InputError(f"rollout {i} has no tokens")
            for arr in (a, b, c):
                if not np.all(np.isfinite(arr)):
                    raise NonFiniteRatio(f"non-finite log-prob in rollout {i}")
                if np.any(arr > 0):
                    raise InputError(f"log-probabilities must be <= 0 (rollout {i})")

    @property
    def size(self) -> int:
        return len(self.rewards)

    @classmethod
    def from_dict(cls, d: Mapping) -> "RolloutGroup":
        rollouts = d["rollouts"]
        return cls(
            [r["reward"] for r in rollouts],
            [r["logp"] for r in rollouts],
            [r.get("logp_old", r["logp"]) for r in rollouts],
            [r.get("logp_ref", r["logp"]) for r in rollouts],
        )


@dataclass
class ObjectiveReport:
    algorithm: str
    surrogate: float
    kl: float
    objective: float
    advantages: list[float]
    per_rollout: list[dict] = field(default_factory=list)
    coefficients: list[list[float]] = field(default_factory=list)
    clipped_fraction: float = 0.0
    flags: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "algorithm": self.algorithm,
            "surrogate": self.surrogate,
            "kl": self.kl,
            "objective": self.objective,
            "loss": -self.objective,
            "advantages": self.advantages,
            "per_rollout": self.per_rollout,
            "coefficients": self.coefficients,
            "clipped_fraction": self.clipped_fraction,
            "flags": self.flags,
        }


def group_advantages(rewards: Sequence[float], adv_epsilon: float = 1e-8) -> list[float]:
    """(r - mean) / (population std + eps); every token of a rollout shares it."""
    if len(rewards) < 2:
        raise DegenerateGroup("advantages need at least two rollouts")
    r = [float(x) for x in rewards]
    if not all(math.isfinite(x) for x in r):
        raise InputError("rewards must be finite")
    mu = math.fsum(r) / len(r)
    sigma = math.sqrt(math.fsum((x - mu) ** 2 for x in r) / len(r))
    return [(x - mu) / (sigma + adv_epsilon) for x in r]


def kl_to_reference(logp: Sequence[float], logp_ref: Sequence[float]) -> float:
    """Mean over tokens of exp(d) - d - 1 with d = logp_ref - logp (always >= 0)."""
    lp = np.asarray(logp, dtype=np.float64)
    ref = np.asarray(logp_ref, dtype=np.float64)
    if lp.shape != ref.shape:
        raise LengthMismatch(lp.size, ref.size, "log-prob arrays")
    if lp.size == 0:
        return 0.0
    delta = ref - lp
    per_token = np.expm1(delta) - delta
    return math.fsum(np.maximum(per_token, 0.0)) / lp.size


def _log_ratio(lp: np.ndarray, lp_old: np.ndarray, flags: list[str]) -> np.ndarray:
    diff = lp - lp_old
    if np.any(np.abs(diff) > LOG_RATIO_CAP):
        flags.append("ratio_clamped")
        diff = np.clip(diff, -LOG_RATIO_CAP, LOG_RATIO_CAP)
    return diff


def _kl_terms(group: RolloutGroup, cfg: SurrogateConfig) -> tuple[float, list[float]]:
    per = [kl_to_reference(lp, ref) for lp, ref in zip(group.logp, group.logp_ref)]
    return math.fsum(per) / group.size, per


def _check(group: RolloutGroup, cfg: SurrogateConfig, expected: Algorithm) -> list[float]:
    if cfg.algorithm is not expected:
        raise InputError(f"config is for {cfg.algorithm.value}, not {expected.value}")
    return group_advantages(group.rewards, cfg.adv_epsilon)


def grpo_objective(group: RolloutGroup, cfg: SurrogateConfig) -> ObjectiveReport:
    adv = _check(group, cfg, Algorithm.GRPO)
    flags: list[str] = []
    terms, per_rollout, coeffs = [], [], []
    clipped = total_tokens = 0
    for i, (lp, lp_old) in enumerate(zip(group.logp, group.logp_old)):
        ratio = np.exp(_log_ratio(lp, lp_old, flags))
        a = adv[i]
        unclipped = ratio * a
        clipped_vals = np.clip(ratio, 1.0 - cfg.eps_low, 1.0 + cfg.eps_high) * a
        chosen = np.minimum(unclipped, clipped_vals)
        # gradient flows only where the unclipped branch is the active minimum
        active = unclipped <= clipped_vals
        clipped += int(np.sum(~active))
        total_tokens += ratio.size
        term = math.fsum(chosen) / ratio.size
        terms.append(term)
        coeffs.append([float(c) for c in np.where(active, ratio * a, 0.0) / ratio.size / group.size])
        per_rollout.append({"advantage": a, "term": term, "tokens": int(ratio.size)})
    surrogate = math.fsum(terms) / group.size
    kl, kl_per = _kl_terms(group, cfg)
    for row, k in zip(per_rollout, kl_per):
        row["kl"] = k
    return ObjectiveReport("grpo", surrogate, kl, surrogate - cfg.beta_kl * kl, adv,
                           per_rollout, coeffs, clipped / total_tokens, sorted(set(flags)))


def gspo_objective(group: RolloutGroup, cfg: SurrogateConfig) -> ObjectiveReport:
    """Sequence-level ratio exp(mean token log-ratio), clipped to [1-eps_low, 1+eps_high]."""
    adv = _check(group, cfg, Algorithm.GSPO)
    flags: list[str] = []
    terms, per_rollout, coeffs = [], [], []
    clipped = 0
    for i, (lp, lp_old) in enumerate(zip(group.logp, group.logp_old)):
        diff = _log_ratio(lp, lp_old, flags)
        s = math.exp(math.fsum(diff) / diff.size)
        a = adv[i]
        s_clip = min(max(s, 1.0 - cfg.eps_low), 1.0 + cfg.eps_high)
        unclipped, clipped_val = s * a, s_clip * a
        active = unclipped <= clipped_val
        clipped += int(not active)
        term = min(unclipped, clipped_val)
        terms.append(term)
        # d s / d logp_t = s / |o|, so each token carries s * A / |o|
        coeff = (s * a / diff.size / group.size) if active else 0.0
        coeffs.append([coeff] * diff.size)
        per_rollout.append({"advantage": a, "term": term, "seq_ratio": s,
                            "seq_ratio_clipped": s_clip, "tokens": int(diff.size)})
    surrogate = math.fsum(terms) / group.size
    kl, kl_per = _kl_terms(group, cfg)
    for row, k in zip(per_rollout, kl_per):
        row["kl"] = k
    return ObjectiveReport("gspo", surrogate, kl, surrogate - cfg.beta_kl * kl, adv,
                           per_rollout, coeffs, clipped / group.size, sorted(set(flags)))


def cispo_objective(group: RolloutGroup, cfg: SurrogateConfig) -> ObjectiveReport:
    """Per-token weights w = min(ratio, eps_high), detached.

    ``surrogate`` is the weighted advantage (1/G) sum_i (1/|o_i|) sum_t w A_i,
    the value the loss takes at the sampling policy's logits. The gradient
    carrier w * A * logp is reported as ``coefficients`` (w * A, normalized)
    and its value as ``per_rollout[i]["logp_weighted"]``.
    """
    adv = _check(group, cfg, Algorithm.CISPO)
    flags: list[str] = []
    terms, per_rollout, coeffs = [], [], []
    clipped = total_tokens = 0
    for i, (lp, lp_old) in enumerate(zip(group.logp, group.logp_old)):
        ratio = np.exp(_log_ratio(lp, lp_old, flags))
        w = np.minimum(ratio, cfg.eps_high)
        clipped += int(np.sum(ratio > cfg.eps_high))
        total_tokens += ratio.size
        a = adv[i]
        term = math.fsum(w * a) / ratio.size
        terms.append(term)
        coeffs.append([float(c) for c in w * a / ratio.size / group.size])
        per_rollout.append({"advantage": a, "term": term, "tokens": int(ratio.size),
                            "weights": [float(x) for x in w],
                            "logp_weighted": math.fsum(w * a * lp) / ratio.size})
    surrogate = math.fsum(terms) / group.size
    kl, kl_per = _kl_terms(group, cfg)
    for row, k in zip(per_rollout, kl_per):
        row["kl"] = k
    return ObjectiveReport("cispo", surrogate, kl, surrogate - cfg.beta_kl * kl, adv,
                           per_rollout, coeffs, clipped / total_tokens, sorted(set(flags)))


_OBJECTIVES = {
    Algorithm.GRPO: grpo_objective,
    Algorithm.GSPO: gspo_objective,
    Algorithm.CISPO: cispo_objective,
}


def policy_objective(group: RolloutGroup, cfg: SurrogateConfig) -> ObjectiveReport:
    return _OBJECTIVES[cfg.algorithm](group, cfg)
