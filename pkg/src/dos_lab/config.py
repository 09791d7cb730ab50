"""System parameters and the constants derived from them.

All durations are expressed as fractions of the transmission time ``T``,
which is fixed to 1.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Mapping, Sequence, Union

from scipy.optimize import brentq

from .errors import ParameterError


def compute_ps(link_probs: Sequence[float]) -> float:
    """Probability that exactly one of the links contends in a slot."""
    probs = [float(p) for p in link_probs]
    if not probs:
        raise ParameterError("link_probs must contain at least one probability")
    for p in probs:
        if not 0.0 <= p <= 1.0:
            raise ParameterError(f"link probability {p} outside [0, 1]")
    total = 0.0
    for ell, p in enumerate(probs):
        others = 1.0
        for i, q in enumerate(probs):
            if i != ell:
                others *= 1.0 - q
        total += p * others
    return total


@dataclass(frozen=True)
class SystemParams:
    rho: float
    M: int
    W: float
    tau: float
    tau_t: float = 0.1
    p_s: float | None = None
    link_probs: tuple[float, ...] | None = None
    T: float = 1.0

    def __post_init__(self):
        if self.link_probs is not None:
            probs = tuple(float(p) for p in self.link_probs)
            object.__setattr__(self, "link_probs", probs)
            ps = compute_ps(probs)
            if self.p_s is not None and not math.isclose(self.p_s, ps, rel_tol=1e-9, abs_tol=1e-12):
                raise ParameterError(f"p_s={self.p_s} disagrees with link_probs (which give {ps})")
            object.__setattr__(self, "p_s", ps)
        if self.p_s is None:
            raise ParameterError("either p_s or link_probs must be given")
        if isinstance(self.M, float) and self.M.is_integer():
            object.__setattr__(self, "M", int(self.M))
        self.validate()

    def validate(self) -> None:
        if not (isinstance(self.M, int) and self.M >= 1):
            raise ParameterError(f"M must be a positive integer, got {self.M!r}")
        if not (self.rho > 0 and math.isfinite(self.rho)):
            raise ParameterError(f"rho must be positive and finite, got {self.rho}")
        if not (self.W > 0 and math.isfinite(self.W)):
            raise ParameterError(f"W must be positive and finite, got {self.W}")
        if not 0.0 < self.tau < 1.0:
            raise ParameterError(f"tau must lie in (0, 1), got {self.tau}")
        if not self.tau_t >= 0.0:
            raise ParameterError(f"tau_t must be nonnegative, got {self.tau_t}")
        if not 0.0 < self.p_s <= 1.0:
            raise ParameterError(f"p_s must lie in (0, 1], got {self.p_s}")
        if self.T != 1.0:
            raise ParameterError("durations are normalized: T must equal 1")

    @property
    def alpha(self) -> float:
        """Pilot energy per probing level, rho * M."""
        return self.rho * self.M

    @property
    def contention_time(self) -> float:
        """Expected duration of one probing round, tau / p_s."""
        return self.tau / self.p_s

    def with_alpha(self, alpha: float) -> "SystemParams":
        return replace(self, rho=alpha / self.M)


@dataclass(frozen=True)
class Optimized:
    """Pick each back-off factor to maximize expected goodput."""


@dataclass(frozen=True)
class Fixed:
    sigma_M: float
    sigma_2M: float

    def __post_init__(self):
        for name in ("sigma_M", "sigma_2M"):
            s = getattr(self, name)
            if not 0.0 < s < 1.0:
                raise ParameterError(f"{name} must lie in (0, 1), got {s}")


BackoffPolicy = Union[Optimized, Fixed]


def parse_backoff(text: str) -> BackoffPolicy:
    """Parse ``opt`` or ``fixed:s1,s2``."""
    text = text.strip()
    if text in ("opt", "optimized"):
        return Optimized()
    if text.startswith("fixed:"):
        parts = text[len("fixed:"):].split(",")
        if len(parts) != 2:
            raise ParameterError(f"expected fixed:sigma_M,sigma_2M, got {text!r}")
        try:
            return Fixed(float(parts[0]), float(parts[1]))
        except ValueError as exc:
            raise ParameterError(f"bad back-off factor in {text!r}") from exc
    raise ParameterError(f"unknown back-off policy {text!r}")


def goodput_coefficient(sigma, k):
    """Delivery probability times back-off factor, for error level k = alpha * rho_eff."""
    return -math.expm1(-(1.0 / sigma - 1.0) / k) * sigma


def optimize_backoff(alpha: float, rho_eff: float) -> float:
    """Back-off factor maximizing ``goodput_coefficient``.

    Only the product ``k = alpha * rho_eff`` matters. Writing ``eps = 1/sigma - 1``
    the first-order condition is ``log(1 + eps + k) - log(k) - eps/k = 0``, whose
    left side is strictly decreasing in ``eps``, so the maximizer is unique.
    """
    k = alpha * rho_eff
    if not k > 0:
        raise ParameterError(f"alpha * rho_eff must be positive, got {k}")

    def stationarity(eps):
        return math.log1p(eps + k) - math.log(k) - eps / k

    hi = k * (2.0 + math.log1p(1.0 / k))
    while stationarity(hi) > 0:
        hi *= 2.0
    eps = brentq(stationarity, 0.0, hi, xtol=1e-300, rtol=1e-15, maxiter=500)
    sigma = 1.0 / (1.0 + eps)
    # keep the factor strictly inside (0, 1) even when eps underflows
    return min(sigma, math.nextafter(1.0, 0.0))


@dataclass(frozen=True)
class DerivedConstants:
    params: SystemParams
    var_h1_hat: float
    var_h1_err: float
    var_h2_hat: float
    var_h2_err: float
    sigma_e_sq: float
    sigma_M: float
    sigma_2M: float
    c_r: float
    R_e: float
    mean_R1: float
    mean_R2: float
    rho_eff_1: float
    alpha_1: float
    rho_eff_2: float
    alpha_2: float
    backoff: BackoffPolicy = field(default_factory=Optimized)

    @property
    def tau(self) -> float:
        return self.params.tau

    @property
    def p_s(self) -> float:
        return self.params.p_s

    def delivery_probability(self, level: int) -> float:
        """Probability that a backed-off transmission is not in outage."""
        sigma, k = self._level(level)
        return -math.expm1(-(1.0 / sigma - 1.0) / k)

    def error_level(self, level: int) -> float:
        return self._level(level)[1]

    def _level(self, level):
        if level == 1:
            return self.sigma_M, self.params.rho * self.var_h1_err
        if level == 2:
            return self.sigma_2M, self.params.rho * self.var_h2_err
        raise ValueError(f"level must be 1 or 2, got {level}")

    def to_dict(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self) if f.name not in ("params", "backoff")}
        out["params"] = asdict(self.params)
        out["backoff"] = _backoff_label(self.backoff)
        return out


def _backoff_label(policy: BackoffPolicy) -> str:
    if isinstance(policy, Fixed):
        return f"fixed:{policy.sigma_M},{policy.sigma_2M}"
    return "opt"


def derive(params: SystemParams, backoff: BackoffPolicy | None = None) -> DerivedConstants:
    backoff = Optimized() if backoff is None else backoff
    params.validate()
    a = params.alpha
    rho = params.rho
    var_h1_err = 1.0 / (a + 1.0)
    var_h1_hat = a / (a + 1.0)
    var_h2_err = 1.0 / (2.0 * a + 1.0)
    var_h2_hat = 2.0 * a / (2.0 * a + 1.0)
    sigma_e_sq = a / ((a + 1.0) * (2.0 * a + 1.0))

    # effective SNR (1 - beta) * rho and normalized error variance beta / (1 - beta)
    rho_eff_1 = var_h1_hat * rho
    alpha_1 = 1.0 / a
    rho_eff_2 = var_h2_hat * rho
    alpha_2 = 1.0 / (2.0 * a)

    if isinstance(backoff, Fixed):
        sigma_M, sigma_2M = backoff.sigma_M, backoff.sigma_2M
    elif isinstance(backoff, Optimized):
        sigma_M = optimize_backoff(alpha_1, rho_eff_1)
        sigma_2M = optimize_backoff(alpha_2, rho_eff_2)
    else:
        raise ParameterError(f"unknown back-off policy {backoff!r}")

    scale = rho * params.W
    return DerivedConstants(
        params=params,
        var_h1_hat=var_h1_hat,
        var_h1_err=var_h1_err,
        var_h2_hat=var_h2_hat,
        var_h2_err=var_h2_err,
        sigma_e_sq=sigma_e_sq,
        sigma_M=sigma_M,
        sigma_2M=sigma_2M,
        c_r=sigma_2M / sigma_M,
        R_e=sigma_2M * scale * sigma_e_sq,
        mean_R1=scale * sigma_M * var_h1_hat,
        mean_R2=scale * sigma_2M * var_h2_hat,
        rho_eff_1=rho_eff_1,
        alpha_1=alpha_1,
        rho_eff_2=rho_eff_2,
        alpha_2=alpha_2,
        backoff=backoff,
    )


PARAM_KEYS = ("rho", "M", "W", "tau", "tau_t", "p_s", "link_probs")


def params_from_mapping(data: Mapping, overrides: Mapping | None = None) -> SystemParams:
    """Build params from a mapping; ``overrides`` entries that are not None win."""
    merged = {k: data[k] for k in PARAM_KEYS if k in data}
    unknown = set(data) - set(PARAM_KEYS) - {"alpha", "backoff"}
    if unknown:
        raise ParameterError(f"unknown config keys: {sorted(unknown)}")
    for k, v in (overrides or {}).items():
        if v is not None and k in PARAM_KEYS:
            merged[k] = v
    alpha = (overrides or {}).get("alpha")
    if alpha is None and "rho" not in merged:
        alpha = data.get("alpha")
    if alpha is not None:
        if "M" not in merged:
            raise ParameterError("alpha requires M")
        if not isinstance(merged["M"], int) or merged["M"] < 1:
            raise ParameterError(f"M must be a positive integer, got {merged['M']!r}")
        merged["rho"] = float(alpha) / merged["M"]
    if "link_probs" in merged and merged["link_probs"] is not None:
        merged["link_probs"] = tuple(merged["link_probs"])
        if "p_s" in merged and (overrides or {}).get("p_s") is None and "p_s" not in data:
            merged.pop("p_s")
    missing = [k for k in ("rho", "M", "W", "tau") if k not in merged]
    if missing:
        raise ParameterError(f"missing parameters: {missing}")
    try:
        return SystemParams(**merged)
    except TypeError as exc:
        raise ParameterError(str(exc)) from exc


def load_params(path: str | Path, overrides: Mapping | None = None) -> SystemParams:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ParameterError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ParameterError(f"config {path} must hold a JSON object")
    return params_from_mapping(data, overrides)
