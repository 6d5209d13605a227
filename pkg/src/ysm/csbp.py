"""The branching process Z with generator  -b x f'(x) + x (f(x+1) - f(x)).

Z starts from 1, decays as z e^{-b t} between jumps and jumps by +1 at rate
Z.  Everything here is exact and event driven: from state (t0, z) the
integrated jump rate over the next s time units is z (1 - e^{-b s}) / b, so
an Exp(1) variate E is inverted in closed form, and when b E >= z the path
never jumps again.

Three constructions are provided and checked against each other:

* ``simulate_z``        direct event-driven simulation of Z;
* ``simulate_lamperti`` the Levy path xi_t = eta_t - b t (eta Poisson from 1)
                        with the Lamperti time change;
* ``simulate_cmj``      a Crump-Mode-Jagers population whose individuals
                        beget children at age a with intensity e^{-b a}.

The scalar simulators and ``simulate_lamperti`` consume one standard
exponential per inter-event gap in the same order, so with equal seeds the
direct and Lamperti paths coincide (the matched coupling used in tests).
"""

from __future__ import annotations

import csv
import heapq
import json
import math
from dataclasses import dataclass, field

import numpy as np

DEFAULT_EVENT_CAP = 10**8


def _segment_integral(z, d, b):
    """Integral of z e^{-b s} over s in [0, d]; d may be infinite when b > 0."""
    if b == 0:
        return z * d
    return z * -np.expm1(-b * np.asarray(d, dtype=float)) / b


def _next_gap(z: float, b: float, e: float) -> float:
    """Time to the next jump from level z, or inf if the path never jumps again."""
    if b == 0:
        return e / z
    x = b * e / z
    if x >= 1.0:
        return math.inf
    return -math.log1p(-x) / b


@dataclass
class CsbpPath:
    """Piecewise-deterministic path of Z.

    ``jump_times[0] == 0`` is the first birth event by convention and
    ``values_after_jump[0] == 1``.  ``horizon`` is the simulated range; it is
    infinite for paths run until the last jump (b > 1).
    """

    b: float
    jump_times: np.ndarray
    values_after_jump: np.ndarray
    horizon: float
    truncated: bool = False
    _cum: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        gaps = np.diff(self.jump_times)
        pieces = _segment_integral(self.values_after_jump[:-1], gaps, self.b)
        self._cum = np.concatenate([[0.0], np.cumsum(pieces)])

    @property
    def n_jumps(self) -> int:
        return len(self.jump_times) - 1

    def _check_t(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if np.any(t < 0) or np.any(t > self.horizon):
            raise ValueError(f"t must lie in [0, {self.horizon}]")
        return t

    def _segment(self, t: np.ndarray) -> np.ndarray:
        return np.searchsorted(self.jump_times, t, side="right") - 1

    def z_at(self, t):
        t = self._check_t(t)
        i = self._segment(t)
        with np.errstate(invalid="ignore"):
            out = self.values_after_jump[i] * np.exp(-self.b * (t - self.jump_times[i]))
        out = np.where(np.isinf(t), 0.0 if self.b > 0 else np.inf, out)
        return out[()] if out.ndim == 0 else out

    def count_births(self, t):
        """B(t) = 1 + number of jumps in (0, t]."""
        t = self._check_t(t)
        out = self._segment(t) + 1
        return int(out) if out.ndim == 0 else out

    def integrated_z(self, t):
        """Integral of Z over [0, t], in closed form segment by segment."""
        t = self._check_t(t)
        i = self._segment(t)
        out = self._cum[i] + _segment_integral(self.values_after_jump[i], t - self.jump_times[i], self.b)
        return float(out) if np.ndim(out) == 0 else out

    def martingale_value(self, t):
        """W_t = e^{-(1-b) t} Z(t)."""
        t = self._check_t(t)
        out = np.exp(-(1.0 - self.b) * t) * self.z_at(t)
        return float(out) if np.ndim(out) == 0 else out

    def birth_identity_error(self, t) -> np.ndarray:
        """|B(t) - Z(t) - b * int_0^t Z| on the given times."""
        return np.abs(self.count_births(t) - self.z_at(t) - self.b * self.integrated_z(t))


def simulate_z(b: float, t_max: float, rng: np.random.Generator,
               event_cap: int = DEFAULT_EVENT_CAP) -> CsbpPath:
    if b < 0:
        raise ValueError("b must be nonnegative")
    if not t_max > 0:
        raise ValueError("t_max must be positive")
    if math.isinf(t_max) and b <= 1:
        raise ValueError("an infinite horizon needs b > 1; the path would not terminate")
    t, z = 0.0, 1.0
    times, values = [0.0], [1.0]
    truncated = False
    while True:
        d = _next_gap(z, b, rng.standard_exponential())
        if math.isinf(d) or t + d > t_max:
            break
        if len(times) > event_cap:
            truncated = True
            t_max = t
            break
        t += d
        z = z * math.exp(-b * d) + 1.0
        times.append(t)
        values.append(z)
    return CsbpPath(b, np.array(times), np.array(values), t_max, truncated)


def count_births(path: CsbpPath, t):
    return path.count_births(t)


def integrated_z(path: CsbpPath, t):
    return path.integrated_z(t)


def martingale_value(path: CsbpPath, t):
    return path.martingale_value(t)


@dataclass
class LampertiPath:
    """Levy path xi_t = eta_t - b t with eta Poisson of rate 1 from eta_0 = 1.

    ``arrivals`` are the jump times of eta in xi-time.  ``zeta`` is the first
    hitting time of 0 (inf if not reached within ``xi_horizon``).  The time
    change T is the inverse of s -> int_0^s dr / xi_r, realized in closed
    form on each linear piece.
    """

    b: float
    arrivals: np.ndarray
    zeta: float
    xi_horizon: float
    _starts: np.ndarray = field(init=False, repr=False)
    _levels: np.ndarray = field(init=False, repr=False)
    _tau: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self._starts = np.concatenate([[0.0], self.arrivals])
        eta = np.arange(1, len(self._starts) + 1, dtype=float)
        self._levels = eta - self.b * self._starts
        ends = np.concatenate([self.arrivals, [min(self.zeta, self.xi_horizon)]])
        x_end = eta - self.b * ends
        if self.b == 0:
            pieces = (ends - self._starts) / self._levels
        else:
            with np.errstate(divide="ignore"):
                pieces = np.log(self._levels / x_end) / self.b
        self._tau = np.concatenate([[0.0], np.cumsum(pieces)])

    def eta(self, s):
        return 1 + np.searchsorted(self.arrivals, s, side="right")

    def xi(self, s):
        return self.eta(s) - self.b * np.asarray(s, dtype=float)

    @property
    def z_range(self) -> float:
        """Largest Z-time t for which T(t) is resolved by the simulated piece."""
        return float(self._tau[-1])

    def time_change(self, t: float) -> tuple[float, float]:
        """(T(t), xi_{T(t)}) for Z-time t."""
        if not 0 <= t <= self.z_range:
            raise ValueError(f"Z-time {t} outside the simulated range [0, {self.z_range}]")
        i = int(np.searchsorted(self._tau, t, side="right")) - 1
        i = min(i, len(self._starts) - 1)
        x0, s0, dt = self._levels[i], self._starts[i], t - self._tau[i]
        if self.b == 0:
            return s0 + x0 * dt, x0
        x = x0 * math.exp(-self.b * dt)
        return s0 + (x0 - x) / self.b, x

    def z_at(self, t: float) -> float:
        return self.time_change(t)[1]


def simulate_lamperti(b: float, rng: np.random.Generator, xi_horizon: float | None = None,
                      z_horizon: float | None = None, event_cap: int = DEFAULT_EVENT_CAP) -> LampertiPath:
    """Poisson arrivals of eta until xi hits 0 or a horizon is reached.

    ``xi_horizon`` bounds xi-time; ``z_horizon`` stops as soon as the
    time change is resolved up to that Z-time.  For b <= 1 one of them is
    required since zeta may be infinite.
    """
    if b < 0:
        raise ValueError("b must be nonnegative")
    if b <= 1 and xi_horizon is None and z_horizon is None:
        raise ValueError("b <= 1 needs xi_horizon or z_horizon")
    sigma, eta, tau = 0.0, 1, 0.0
    arrivals: list[float] = []
    limit = math.inf if xi_horizon is None else xi_horizon
    while True:
        x = eta - b * sigma
        e = rng.standard_exponential()
        if b > 0 and b * e >= x:
            zeta = sigma + x / b
            if zeta > limit:
                return LampertiPath(b, np.array(arrivals), math.inf, limit)
            return LampertiPath(b, np.array(arrivals), zeta, zeta)
        end = sigma + e
        if end > limit:
            return LampertiPath(b, np.array(arrivals), math.inf, limit)
        tau += e / x if b == 0 else -math.log1p(-b * e / x) / b
        if z_horizon is not None and tau >= z_horizon:
            return LampertiPath(b, np.array(arrivals), math.inf, end)
        if len(arrivals) >= event_cap:
            return LampertiPath(b, np.array(arrivals), math.inf, end)
        sigma = end
        eta += 1
        arrivals.append(sigma)


@dataclass
class CmjTrajectory:
    """Birth times (sorted, ancestor at 0) of a CMJ population up to t_max."""

    birth_times: np.ndarray
    t_max: float
    truncated: bool = False

    def births_at(self, t):
        if np.any(np.asarray(t) > self.t_max):
            raise ValueError("t beyond the simulated horizon")
        out = np.searchsorted(self.birth_times, t, side="right")
        return int(out) if np.ndim(out) == 0 else out


def simulate_cmj(b: float, t_max: float, rng: np.random.Generator,
                 event_cap: int = DEFAULT_EVENT_CAP) -> CmjTrajectory:
    """Event-queue simulation: an individual born at s has children at ages
    drawn from a Poisson process of intensity e^{-b a} da, 0 < a <= t_max - s.
    """
    if b < 0 or not math.isfinite(t_max) or t_max < 0:
        raise ValueError("need b >= 0 and a finite t_max >= 0")
    queue = [0.0]
    births: list[float] = []
    truncated = False
    while queue:
        s = heapq.heappop(queue)
        births.append(s)
        if len(births) >= event_cap:
            truncated = True
            break
        r = t_max - s
        mass = r if b == 0 else -math.expm1(-b * r) / b
        m = rng.poisson(mass)
        if m == 0:
            continue
        u = rng.random(m)
        ages = u * r if b == 0 else -np.log1p(u * math.expm1(-b * r)) / b
        for a in ages:
            heapq.heappush(queue, s + float(a))
    return CmjTrajectory(np.array(births), t_max, truncated)


@dataclass
class BatchSample:
    """State of many independent paths, each read at its own horizon."""

    z: np.ndarray
    births: np.ndarray
    integral: np.ndarray
    truncated: np.ndarray

    @property
    def n_truncated(self) -> int:
        return int(np.count_nonzero(self.truncated))


def sample_at_horizons(b: float, horizons, rng: np.random.Generator,
                       event_cap: int = DEFAULT_EVENT_CAP) -> BatchSample:
    """Z(h), B(h) and int_0^h Z for independent paths, h taken per path.

    All paths advance in lockstep, one event per sweep, so the cost is the
    total number of events plus one array pass per event of the longest
    path.  Infinite horizons are allowed when b > 1.
    """
    h = np.asarray(horizons, dtype=float)
    if np.any(h < 0):
        raise ValueError("horizons must be nonnegative")
    if b <= 1 and np.any(np.isinf(h)):
        raise ValueError("infinite horizons need b > 1")
    m = h.size
    t = np.zeros(m)
    z = np.ones(m)
    births = np.ones(m, dtype=np.int64)
    integral = np.zeros(m)
    z_end = np.zeros(m)
    truncated = np.zeros(m, dtype=bool)
    active = np.arange(m)
    while active.size:
        e = rng.standard_exponential(active.size)
        za, ta, ha = z[active], t[active], h[active]
        if b == 0:
            d = e / za
        else:
            x = b * e / za
            d = np.full(active.size, np.inf)
            ok = x < 1.0
            d[ok] = -np.log1p(-x[ok]) / b
        stop = np.isinf(d) | (ta + d > ha)
        capped = ~stop & (births[active] > event_cap)
        done = stop | capped
        idx = active[done]
        rest = np.where(capped[done], 0.0, ha[done] - ta[done])
        integral[idx] += _segment_integral(za[done], rest, b)
        z_end[idx] = za[done] * np.exp(-b * rest) if b > 0 else za[done]
        truncated[active[capped]] = True
        go = ~done
        ia, dg = active[go], d[go]
        integral[ia] += _segment_integral(za[go], dg, b)
        z[ia] = za[go] * np.exp(-b * dg) + 1.0
        t[ia] = ta[go] + dg
        births[ia] += 1
        active = ia
    return BatchSample(z_end, births, integral, truncated)


def martingale_variance(b: float, r: float) -> float:
    """Var(e^{-(1-b) r} Z(r)) for Z started from 1: (1 - e^{-(1-b) r}) / (1 - b)."""
    a = 1.0 - b
    if a == 0:
        return r
    return -math.expm1(-a * r) / a


@dataclass
class MartingaleSample:
    w: np.ndarray
    horizon: float
    switch_level: float
    n_continued: int


def sample_martingale(b: float, horizon: float, n_paths: int, rng: np.random.Generator,
                      switch_level: float = 100.0) -> MartingaleSample:
    """W_T = e^{-(1-b) T} Z(T) for ``n_paths`` independent paths.

    Paths are simulated exactly until Z first reaches ``switch_level``.
    From state z at time s the remaining factor e^{-(1-b)(T-s)} Z(T) has
    mean z and variance z v(T - s) (cumulants of Z are linear in the start
    value); it is drawn from the Gamma law with those two moments.  At
    b = 0 and T -> inf this is the exact conditional law of W.
    """
    if not math.isfinite(horizon) or horizon < 0:
        raise ValueError("horizon must be finite and nonnegative")
    a = 1.0 - b
    w = np.empty(n_paths)
    t = np.zeros(n_paths)
    z = np.ones(n_paths)
    active = np.arange(n_paths)
    n_continued = 0
    while active.size:
        e = rng.standard_exponential(active.size)
        za, ta = z[active], t[active]
        if b == 0:
            d = e / za
        else:
            x = b * e / za
            d = np.full(active.size, np.inf)
            ok = x < 1.0
            d[ok] = -np.log1p(-x[ok]) / b
        stop = np.isinf(d) | (ta + d > horizon)
        idx = active[stop]
        w[idx] = np.exp(-a * horizon) * za[stop] * np.exp(-b * (horizon - ta[stop]))
        go = ~stop
        ia, dg = active[go], d[go]
        z[ia] = za[go] * np.exp(-b * dg) + 1.0
        t[ia] = ta[go] + dg
        big = z[ia] >= switch_level
        if np.any(big):
            ib = ia[big]
            v = np.array([martingale_variance(b, horizon - s) for s in t[ib]])
            shape = z[ib] / np.where(v > 0, v, 1.0)
            g = np.where(v > 0, rng.gamma(shape, np.where(v > 0, v, 1.0)), z[ib])
            w[ib] = np.exp(-a * t[ib]) * g
            n_continued += ib.size
            ia = ia[~big]
        active = ia
    return MartingaleSample(w, horizon, switch_level, n_continued)


def moment_matrix(b: float, ell_max: int) -> np.ndarray:
    """Generator of the linear system  m_l' = l(1-b) m_l + sum_{j<=l-2} C(l,j) m_{j+1}."""
    A = np.zeros((ell_max, ell_max))
    for ell in range(1, ell_max + 1):
        A[ell - 1, ell - 1] = ell * (1.0 - b)
        for j in range(ell - 1):
            A[ell - 1, j] = math.comb(ell, j)
    return A


def _rk4(A: np.ndarray, t: float, steps: int) -> np.ndarray:
    h = t / steps
    m = np.ones(A.shape[0])
    for _ in range(steps):
        k1 = A @ m
        k2 = A @ (m + 0.5 * h * k1)
        k3 = A @ (m + 0.5 * h * k2)
        k4 = A @ (m + h * k3)
        m = m + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return m


def moment_ode(b: float, ell_max: int, t: float, rtol: float = 1e-9,
               max_steps: int = 2**22) -> np.ndarray:
    """E[Z(t)^l] for l = 1..ell_max by fixed-step RK4.

    The step count doubles until a further halving of the step changes no
    moment by more than ``rtol`` relatively.
    """
    if ell_max < 1 or t < 0:
        raise ValueError("need ell_max >= 1 and t >= 0")
    if t == 0:
        return np.ones(ell_max)
    A = moment_matrix(b, ell_max)
    steps = max(16, math.ceil(4 * t * ell_max))
    prev = _rk4(A, t, steps)
    while steps < max_steps:
        steps *= 2
        cur = _rk4(A, t, steps)
        if np.all(np.abs(cur - prev) <= rtol * np.abs(cur)):
            return cur
        prev = cur
    raise RuntimeError("moment_ode did not reach the requested tolerance")


@dataclass
class ExtinctionStats:
    zeta: float
    births: int
    path: CsbpPath


def extinction_stats(b: float, rng: np.random.Generator, tol: float = 1e-9) -> ExtinctionStats:
    """Run Z to its last jump (b > 1); zeta is int_0^inf Z and B(inf) = 1 + jumps.

    Raises AssertionError if B(inf) and b * zeta differ by more than ``tol``.
    """
    if b <= 1:
        raise ValueError("extinction statistics need b > 1")
    path = simulate_z(b, math.inf, rng)
    zeta = path.integrated_z(math.inf)
    births = path.count_births(math.inf)
    if abs(births - b * zeta) > tol:
        raise AssertionError(f"B(inf) = {births} but b * zeta = {b * zeta}")
    return ExtinctionStats(zeta, births, path)


def write_path_csv(path: CsbpPath, out, meta: dict) -> None:
    with open(out, "w", newline="") as f:
        f.write("# " + json.dumps(meta, sort_keys=True) + "\n")
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["t_jump", "z_after"])
        for t, z in zip(path.jump_times, path.values_after_jump):
            writer.writerow([repr(float(t)), repr(float(z))])
