"""Run summaries, convergence diagnostics, confidence intervals and stability checks."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy import stats as sps

from .simcore import RunStats
from .topology import Mesh

SUMMARY_COLUMNS = ("scheduler", "mesh", "lambda", "seed", "avg_peak_K", "avg_service_s",
                   "total_dyn_energy_J", "mean_queue_len")


@dataclass
class RunSummary:
    scheduler: str
    mesh: str
    lam: float
    seed: int
    avg_peak_K: float
    avg_service_s: float | None  # None when no task completed in the window
    total_dyn_energy_J: float
    mean_queue_len: float
    decisions: int = 0
    max_peak_K: float = float("nan")
    tile_dyn_energy_J: np.ndarray = field(default_factory=lambda: np.zeros(0))
    tile_dyn_power_W: np.ndarray = field(default_factory=lambda: np.zeros(0))
    mean_exec_s: float | None = None
    tag: str = ""  # sweep cell label

    def row(self) -> dict[str, object]:
        svc = "" if self.avg_service_s is None else f"{self.avg_service_s:.6f}"
        return {"scheduler": self.scheduler, "mesh": self.mesh, "lambda": f"{self.lam:g}",
                "seed": self.seed, "avg_peak_K": f"{self.avg_peak_K:.6f}", "avg_service_s": svc,
                "total_dyn_energy_J": f"{self.total_dyn_energy_J:.6f}",
                "mean_queue_len": f"{self.mean_queue_len:.6f}"}

    def to_dict(self) -> dict[str, object]:
        d = asdict(self)
        d["tile_dyn_energy_J"] = self.tile_dyn_energy_J.tolist()
        d["tile_dyn_power_W"] = self.tile_dyn_power_W.tolist()
        return d


def time_average(times: Sequence[float], values: Sequence[float]) -> float:
    """Trapezoidal time-average of a sampled signal."""
    t = np.asarray(times, dtype=float)
    v = np.asarray(values, dtype=float)
    if len(t) < 2 or t[-1] <= t[0]:
        raise ValueError("need at least two samples spanning a positive interval")
    return float(np.trapezoid(v, t) / (t[-1] - t[0]))


def service_times(arrivals: Sequence[float], departures: Sequence[float]) -> np.ndarray:
    a = np.asarray(arrivals, dtype=float)
    d = np.asarray(departures, dtype=float)
    if np.any(d < a):
        raise ValueError("departure before arrival")
    return d - a


def summarize(st: RunStats, scheduler: str = "", mesh: Mesh | str = "", lam: float = float("nan"),
              seed: int = 0) -> RunSummary:
    """Fold the post-warm-up accumulators of a finished run into a summary.

    Dynamic energy counts the busy-core component only: static leakage and
    router traffic are excluded.
    """
    if st.window <= 0:
        raise ValueError("run ended before the warm-up window closed")
    mesh_name = mesh if isinstance(mesh, str) else f"{mesh.rows}x{mesh.cols}"
    svc = float(np.mean(st.service_times)) if st.service_times else None
    exe = float(np.mean(st.exec_times)) if st.exec_times else None
    energy = np.asarray(st.core_dyn_energy, dtype=float)
    return RunSummary(
        scheduler=scheduler, mesh=mesh_name, lam=float(lam), seed=int(seed),
        avg_peak_K=st.peak_integral / st.window, avg_service_s=svc,
        total_dyn_energy_J=float(energy.sum()), mean_queue_len=st.queue_integral / st.window,
        decisions=st.decisions, max_peak_K=st.max_peak, tile_dyn_energy_J=energy.copy(),
        tile_dyn_power_W=energy / st.window, mean_exec_s=exe)


# -- convergence ------------------------------------------------------------

def windowed_variance(history, window: int) -> np.ndarray:
    """Sample variance of each tracked scalar over consecutive windows.

    ``history`` is (n_steps,) or (n_steps, n_scalars); a trailing partial
    window is dropped. Returns (n_windows, n_scalars).
    """
    h = np.asarray(history, dtype=float)
    if h.ndim == 1:
        h = h[:, None]
    if window < 2:
        raise ValueError("window must hold at least two samples")
    n = len(h) // window
    if n < 2:
        raise ValueError(f"history of {len(h)} gives fewer than two windows of {window}")
    blocks = h[:n * window].reshape(n, window, -1)
    return blocks.var(axis=1, ddof=1)


def convergence_stats(theta_history, q_history, n_windows: int = 4) -> dict[str, np.ndarray]:
    """Windowed variances of tracked weights and Q-values, ``n_windows`` equal windows each."""
    out = {}
    for name, h in (("theta", theta_history), ("q", q_history)):
        h = np.asarray(h, dtype=float)
        out[name] = windowed_variance(h, max(len(h) // n_windows, 2))
    return out


def variance_decays(var: np.ndarray) -> bool:
    """True if every tracked scalar's last-window variance is below its first."""
    var = np.atleast_2d(np.asarray(var, dtype=float))
    if var.shape[0] == 1:
        var = var.T
    return bool(np.all(var[-1] < var[0]))


# -- confidence intervals -----------------------------------------------------

def mean_ci(x, conf: float = 0.95) -> tuple[float, float]:
    """Mean and Student-t half-width; a single sample has an infinite half-width."""
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        raise ValueError("no samples")
    m = float(x.mean())
    if x.size == 1:
        return m, math.inf
    half = float(sps.t.ppf(0.5 + conf / 2, x.size - 1) * x.std(ddof=1) / math.sqrt(x.size))
    return m, half


def paired_diff_ci(a, b, conf: float = 0.95) -> tuple[float, float]:
    """CI of mean(a - b) over paired samples (same seeds)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError("paired samples must have equal length")
    return mean_ci(a - b, conf)


def significantly_less(a, b, conf: float = 0.95) -> bool:
    """Paired test: the CI of mean(a - b) lies wholly below zero."""
    m, h = paired_diff_ci(a, b, conf)
    return m + h < 0


@dataclass
class Aggregate:
    keys: tuple
    n: int
    means: dict[str, float]
    halfwidths: dict[str, float]


AGG_METRICS = ("avg_peak_K", "avg_service_s", "total_dyn_energy_J", "mean_queue_len")


def aggregate(summaries: Iterable[RunSummary], by: Sequence[str] = ("scheduler", "mesh", "lam"),
              metrics: Sequence[str] = AGG_METRICS, conf: float = 0.95) -> list[Aggregate]:
    """Group by ``by`` and report mean +- CI per metric over seeds.

    Groups and the samples inside them are sorted, so the result does not
    depend on the order the runs finished in.
    """
    groups: dict[tuple, list[RunSummary]] = {}
    for s in summaries:
        groups.setdefault(tuple(getattr(s, k) for k in by), []).append(s)
    out = []
    for key in sorted(groups, key=lambda k: tuple(str(v) for v in k)):
        runs = sorted(groups[key], key=lambda s: s.seed)
        means, halves = {}, {}
        for m in metrics:
            vals = [getattr(r, m) for r in runs if getattr(r, m) is not None]
            if vals:
                means[m], halves[m] = mean_ci(vals, conf)
            else:
                means[m], halves[m] = math.nan, math.nan
        out.append(Aggregate(key, len(runs), means, halves))
    return out


# -- spatial power -------------------------------------------------------------

def tile_classes(mesh: Mesh) -> dict[str, np.ndarray]:
    """Tile indices of corners, non-corner edges and interior tiles."""
    cls = {"corner": [], "edge": [], "interior": []}
    for m in range(mesh.size):
        c, r = mesh.coords(m)
        on_c = c in (0, mesh.cols - 1)
        on_r = r in (0, mesh.rows - 1)
        cls["corner" if on_c and on_r else "edge" if on_c or on_r else "interior"].append(m)
    return {k: np.asarray(v, dtype=np.intp) for k, v in cls.items()}


# -- queue stability ------------------------------------------------------------

def quarter_means(queue_bins: np.ndarray, bin_width: float = 1.0) -> np.ndarray:
    """Time-averaged queue length in each quarter of the run."""
    b = np.asarray(queue_bins, dtype=float) / bin_width
    n = len(b) // 4
    if n == 0:
        raise ValueError("need at least four queue bins")
    return b[:4 * n].reshape(4, n).mean(axis=1)


def queue_plateaus(queue_bins: np.ndarray, bin_width: float = 1.0, rel_tol: float = 0.10) -> bool:
    q = quarter_means(queue_bins, bin_width)
    return abs(q[3] - q[2]) <= rel_tol * max(q[2], 1e-12)


def queue_grows(queue_bins: np.ndarray, bin_width: float = 1.0) -> bool:
    q = quarter_means(queue_bins, bin_width)
    return bool(np.all(np.diff(q) > 0))
