"""Inner-budget schedules and closed-form rate quantities for NMC and ONMC."""

from dataclasses import dataclass
import math

import numpy as np
from scipy import special

from .errors import ConfigError, ParameterError

EULER_GAMMA = 0.5772156649015329

_KINDS = ("constant", "sqrt_floor", "sqrt_cap", "poly")


def _ceil_sqrt(n):
    # Exact integer ceil(sqrt(n)) for positive int64 arrays.
    r = np.floor(np.sqrt(n.astype(float))).astype(np.int64)
    r -= r * r > n
    r += r * r < n
    return r


@dataclass(frozen=True)
class Schedule:
    """Inner budget as a function of the outer index ``n0`` (1-based).

    ``constant``    N
    ``sqrt_floor``  max(F, ceil(sqrt(n0)))
    ``sqrt_cap``    min(C, ceil(sqrt(n0)))
    ``poly``        max(B, ceil(A * n0**alpha))
    """

    kind: str
    value: int = 1
    scale: float = 1.0
    alpha: float = 0.5

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ConfigError(f"unknown schedule kind {self.kind!r}")
        if self.value < 1:
            raise ConfigError("schedule budgets must be >= 1")
        if self.kind == "poly" and (self.scale <= 0 or self.alpha <= 0):
            raise ConfigError("poly schedule needs A > 0 and alpha > 0")

    @classmethod
    def constant(cls, n):
        return cls("constant", int(n))

    @classmethod
    def sqrt_floor(cls, floor):
        return cls("sqrt_floor", int(floor))

    @classmethod
    def sqrt_cap(cls, cap):
        return cls("sqrt_cap", int(cap))

    @classmethod
    def poly(cls, scale, alpha, floor=1):
        return cls("poly", int(floor), float(scale), float(alpha))

    @classmethod
    def recommended(cls, t_min):
        """``max(ceil(T_min**(1/3)), ceil(sqrt(n0)))``, the default ONMC setting."""
        return cls.sqrt_floor(max(1, math.ceil(round(t_min ** (1.0 / 3.0), 9))))

    @classmethod
    def parse(cls, text):
        """Parse ``const:N``, ``sqrt-floor:F``, ``sqrt-cap:C`` or ``poly:A,alpha[,B]``."""
        kind, _, arg = text.partition(":")
        try:
            if kind in ("const", "constant"):
                return cls.constant(int(float(arg)))
            if kind == "sqrt-floor":
                return cls.sqrt_floor(int(float(arg)))
            if kind == "sqrt-cap":
                return cls.sqrt_cap(int(float(arg)))
            if kind == "poly":
                parts = [float(p) for p in arg.split(",")]
                if len(parts) not in (2, 3):
                    raise ValueError
                return cls.poly(parts[0], parts[1], int(parts[2]) if len(parts) == 3 else 1)
        except ValueError:
            pass
        raise ConfigError(f"cannot parse schedule {text!r}")

    def __str__(self):
        if self.kind == "constant":
            return f"const:{self.value}"
        if self.kind == "poly":
            return f"poly:{self.scale:g},{self.alpha:g},{self.value}"
        return f"{self.kind.replace('_', '-')}:{self.value}"

    def __call__(self, n0):
        n = np.asarray(n0, dtype=np.int64)
        if (n < 1).any():
            raise ValueError("n0 must be >= 1")
        if self.kind == "constant":
            out = np.full(n.shape, self.value, dtype=np.int64)
        elif self.kind == "sqrt_floor":
            out = np.maximum(self.value, _ceil_sqrt(n))
        elif self.kind == "sqrt_cap":
            out = np.minimum(self.value, _ceil_sqrt(n))
        else:
            out = np.maximum(self.value, np.ceil(self.scale * n.astype(float) ** self.alpha).astype(np.int64))
        return out if out.ndim else int(out)


def tau_eval(schedule, n0):
    """Inner budget ``tau(n0)`` for a single outer index."""
    return int(schedule(int(n0)))


@dataclass(frozen=True)
class BudgetPolicy:
    """Inner budgets for depths ``1..D``: one Schedule per depth.

    A fixed policy (plain NMC) is one where every schedule is constant.
    """

    schedules: tuple

    @classmethod
    def fixed(cls, *budgets):
        if any(int(b) < 1 for b in budgets):
            raise ConfigError("inner budgets must be >= 1")
        return cls(tuple(Schedule.constant(int(b)) for b in budgets))

    @classmethod
    def scheduled(cls, *schedules):
        return cls(tuple(schedules))

    @classmethod
    def coerce(cls, budget, depth=1):
        """Accept an int, a Schedule, a sequence of either, or a BudgetPolicy."""
        if isinstance(budget, BudgetPolicy):
            policy = budget
        elif isinstance(budget, (int, np.integer)):
            policy = cls.fixed(*([int(budget)] * depth))
        elif isinstance(budget, Schedule):
            policy = cls((budget,) * depth)
        else:
            items = tuple(budget)
            policy = cls(tuple(Schedule.constant(int(b)) if not isinstance(b, Schedule) else b for b in items))
        if len(policy.schedules) != depth:
            raise ConfigError(f"budget policy has {len(policy.schedules)} levels, problem depth is {depth}")
        return policy

    @property
    def depth(self):
        return len(self.schedules)

    @property
    def is_fixed(self):
        return all(s.kind == "constant" for s in self.schedules)

    def budgets(self, n0):
        """Integer array of shape ``(len(n0), D)`` for 1-based outer indices."""
        n0 = np.asarray(n0, dtype=np.int64)
        if not self.schedules:
            return np.ones((n0.size, 0), dtype=np.int64)
        return np.stack([np.asarray(s(n0)).reshape(-1) for s in self.schedules], axis=1)

    def cost(self, n0):
        """Total inner evaluations used by the first ``n0`` outer samples."""
        b = self.budgets(np.arange(1, int(n0) + 1))
        return int(np.prod(b, axis=1).sum())

    def outer_count(self, total):
        """Largest ``N0 >= 1`` whose cumulative cost does not exceed ``total``."""
        total = int(total)
        if self.is_fixed:
            per = int(np.prod([s.value for s in self.schedules]))
            return max(1, total // per)
        n0, spent, start, step = 0, 0, 1, 1 << 16
        while True:
            idx = np.arange(start, start + step)
            cum = spent + np.cumsum(np.prod(self.budgets(idx), axis=1))
            k = int(np.searchsorted(cum, total, side="right"))
            if k < step:
                return max(1, n0 + k)
            n0 += step
            spent = int(cum[-1])
            start += step

    def __str__(self):
        return "|".join(str(s) for s in self.schedules)


def g_factor(alpha, n0):
    """Bias inflation term of the ONMC bound for ``tau ~ A n0**alpha``."""
    if alpha <= 0:
        raise ParameterError("alpha must be > 0")
    if n0 < 1:
        raise ParameterError("N0 must be >= 1")
    if alpha < 1:
        return 1.0 / (1.0 - alpha)
    if alpha == 1:
        return math.log(n0) + EULER_GAMMA
    return float(special.zeta(alpha)) * n0 ** (alpha - 1.0)


def cost_ratio_c(alpha, depth):
    """Asymptotic cost of ONMC relative to NMC, ``(1 + alpha D)**(-1/(1 + alpha D))``.

    ``depth=math.inf`` gives the limit 1.
    """
    if alpha <= 0:
        raise ParameterError("alpha must be > 0")
    if depth < 1:
        raise ParameterError("depth must be >= 1")
    if math.isinf(depth):
        return 1.0
    x = 1.0 + alpha * depth
    return x ** (-1.0 / x)


def bias_inflation(alpha, depth, n0):
    """``c**alpha * g(alpha, N0)``: ONMC bias relative to budget-matched NMC."""
    return cost_ratio_c(alpha, depth) ** alpha * g_factor(alpha, n0)


def generalized_harmonic(alpha, n):
    """``H_alpha[N] = sum_{k=1}^N k**(-alpha)``, summed smallest terms first."""
    n = int(n)
    if n < 1:
        return 0.0
    k = np.arange(n, 0, -1, dtype=float)
    return float(np.sum(k ** (-float(alpha))))


@dataclass(frozen=True)
class RateConstants:
    """Per-level variance constants and derivative bounds of the NMC bound.

    ``varsigma`` has ``D + 1`` entries; ``C`` and ``K`` have ``D`` each
    (bounds on the second and first derivatives of ``f_0 .. f_{D-1}``).
    """

    varsigma: tuple
    C: tuple = ()
    K: tuple = ()

    def __post_init__(self):
        d = len(self.varsigma) - 1
        if d < 0:
            raise ParameterError("need at least one variance constant")
        if len(self.C) != d or len(self.K) != d:
            raise ParameterError("C and K need one entry per nesting level")
        if not all(math.isfinite(v) and v >= 0 for v in (*self.varsigma, *self.C, *self.K)):
            raise ParameterError("rate constants must be finite and >= 0")

    @property
    def depth(self):
        return len(self.varsigma) - 1


def _bias_term(consts, inv_budgets):
    # inv_budgets[k] multiplies the level-k contribution (k = 1..D).
    d = consts.depth
    if d == 0:
        return 0.0
    s = consts.varsigma
    total = consts.C[0] * s[1] ** 2 / 2.0 * inv_budgets[1]
    for k in range(d - 1):
        total += math.prod(consts.K[: k + 1]) * consts.C[k + 1] * s[k + 2] ** 2 / 2.0 * inv_budgets[k + 2]
    return total


def nmc_mse_bound(consts, budgets):
    """Leading-order NMC MSE bound for budgets ``(N0, N1, ..., ND)``."""
    budgets = [int(b) for b in budgets]
    if len(budgets) != consts.depth + 1:
        raise ParameterError("need one budget per level")
    if min(budgets) < 1:
        raise ParameterError("budgets must be >= 1")
    inv = [1.0 / b for b in budgets]
    return consts.varsigma[0] ** 2 / budgets[0] + _bias_term(consts, inv) ** 2


def beta_constant(consts):
    """The bound's bias numerator with every ``1/N_k`` set to one."""
    return _bias_term(consts, [1.0] * (consts.depth + 1))


def onmc_mse_bound(consts, n0, scale, alpha):
    """ONMC bound for ``tau_k(n0) >= scale * n0**alpha``."""
    b = beta_constant(consts) * g_factor(alpha, n0) / (scale * n0 ** alpha)
    return consts.varsigma[0] ** 2 / n0 + b ** 2
