"""Time-domain receptor traces and their separation into per-fish components.

A wave-type superposition ``u1 e^{i w1 t} + u2 e^{i w2 t}`` is separated by
least-squares projection onto the two exponentials (or onto cos/sin when
only the real part is recorded).  Pulse-type traces are separated by
reading the trace at each pulse's peak inside its own support.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .geometry import EodSignal

__all__ = [
    "JammingError",
    "PulseJammingError",
    "ReceptorTrace",
    "common_period",
    "read_trace_csv",
    "separate_pulse",
    "separate_wave",
    "synthesize_pulse",
    "synthesize_wave",
    "write_trace_csv",
]


class JammingError(ValueError):
    """Two wave-type signals share a frequency and cannot be separated."""


class PulseJammingError(ValueError):
    """Two pulse supports overlap; shorten the pulses (increase eta)."""


@dataclass(frozen=True)
class ReceptorTrace:
    """Samples ``values[l, n]`` of receptor ``l`` at ``times[n]``."""

    times: np.ndarray
    values: np.ndarray
    points: np.ndarray | None = None

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        v = np.atleast_2d(np.asarray(self.values))
        if v.shape[1] != len(t):
            raise ValueError("values must have one column per time sample")
        if len(t) > 2 and not np.allclose(np.diff(t), t[1] - t[0], rtol=1e-9, atol=0):
            raise ValueError("time samples must be uniform")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)

    @property
    def is_real(self) -> bool:
        return not np.iscomplexobj(self.values)

    @property
    def n_receptors(self) -> int:
        return self.values.shape[0]


def common_period(omega1: float, omega2: float, max_den: int = 1000) -> float:
    """Shortest window over which both exponentials and their beat are periodic.

    For rational frequency ratios ``w1/w2 = p/q`` this is ``2*pi*q/w2``;
    otherwise the ratio is rounded to a fraction with denominator at most
    ``max_den`` and the window is a good approximate common period.
    """
    if omega1 == 0 or omega2 == 0:
        raise ValueError("frequencies must be nonzero")
    ratio = Fraction(abs(omega1) / abs(omega2)).limit_denominator(max_den)
    return 2.0 * np.pi * ratio.denominator / abs(omega2)


def synthesize_wave(u1_skin, u2_skin, omega1: float, omega2: float, duration: float,
                    n_samples: int, real: bool = False, points=None) -> ReceptorTrace:
    """Sample ``u1 e^{i w1 t} + u2 e^{i w2 t}`` on ``[0, duration)``.

    ``real=True`` records the real part, which is what a physical receptor measures.
    """
    if omega1 == 0 or omega2 == 0:
        raise ValueError("wave-type signals need nonzero frequencies")
    t = duration * np.arange(n_samples) / n_samples
    u1 = np.atleast_1d(np.asarray(u1_skin, dtype=complex))
    u2 = np.atleast_1d(np.asarray(u2_skin, dtype=complex))
    vals = u1[:, None] * np.exp(1j * omega1 * t) + u2[:, None] * np.exp(1j * omega2 * t)
    return ReceptorTrace(t, vals.real if real else vals, points)


def separate_wave(trace: ReceptorTrace, omega1: float, omega2: float):
    """Recover the complex skin amplitudes of the two wave-type components.

    On a window that is a common period the two exponentials are
    orthogonal and least squares reduces to ``(1/T) int u e^{-i w_k t} dt``;
    on other windows the least-squares fit removes the leakage.

    Raises
    ------
    JammingError
        If ``omega1 == omega2``.
    """
    if omega1 == omega2:
        raise JammingError("equal EOD frequencies: the two signals are jammed and cannot be separated")
    t = trace.times
    if trace.is_real:
        basis = np.column_stack([np.cos(omega1 * t), -np.sin(omega1 * t),
                                 np.cos(omega2 * t), -np.sin(omega2 * t)])
    else:
        basis = np.column_stack([np.exp(1j * omega1 * t), np.exp(1j * omega2 * t)])
    coef, *_ = np.linalg.lstsq(basis, trace.values.T, rcond=None)
    if trace.is_real:
        # Re(u e^{iwt}) = Re u cos wt - Im u sin wt
        return coef[0] + 1j * coef[1], coef[2] + 1j * coef[3]
    return coef[0], coef[1]


def _check_disjoint(pulse1: EodSignal, pulse2: EodSignal) -> None:
    for p in (pulse1, pulse2):
        if p.kind != "pulse":
            raise ValueError("pulse separation needs two pulse-type signals")
    a1, b1 = pulse1.support()
    a2, b2 = pulse2.support()
    if a1 < b2 and a2 < b1:
        raise PulseJammingError(
            f"pulse supports [{a1:.4g}, {b1:.4g}] and [{a2:.4g}, {b2:.4g}] overlap; "
            "increase eta to shorten the pulses"
        )


def synthesize_pulse(u1_skin, u2_skin, pulse1: EodSignal, pulse2: EodSignal,
                     times, points=None) -> ReceptorTrace:
    """Sample ``u1 h1(t) + u2 h2(t)`` at ``times``."""
    t = np.asarray(times, dtype=float)
    u1 = np.atleast_1d(np.asarray(u1_skin))
    u2 = np.atleast_1d(np.asarray(u2_skin))
    vals = u1[:, None] * pulse1(t) + u2[:, None] * pulse2(t)
    return ReceptorTrace(t, vals, points)


def _peak_sample(trace: ReceptorTrace, pulse: EodSignal) -> int:
    lo, hi = pulse.support()
    inside = np.flatnonzero((trace.times > lo) & (trace.times < hi))
    if inside.size == 0:
        raise ValueError("no time sample falls inside the pulse support")
    return int(inside[np.argmax(np.abs(pulse(trace.times[inside])))])


def separate_pulse(trace: ReceptorTrace, pulse1: EodSignal, pulse2: EodSignal):
    """Recover ``(u1, u2)`` from a trace of two pulses with disjoint supports.

    Each component is the trace at the sample where its own pulse peaks,
    divided by the pulse value there.

    Raises
    ------
    PulseJammingError
        If the supports overlap.
    """
    _check_disjoint(pulse1, pulse2)
    out = []
    for p in (pulse1, pulse2):
        n = _peak_sample(trace, p)
        out.append(trace.values[:, n] / p(trace.times[n]))
    return tuple(out)


def write_trace_csv(path, trace: ReceptorTrace) -> None:
    """Write a trace as CSV: a time column, then one column per receptor.

    Complex traces get ``re_l``/``im_l`` column pairs.
    """
    cplx = not trace.is_real
    header = ["t"]
    for l in range(trace.n_receptors):
        header += [f"re_{l}", f"im_{l}"] if cplx else [f"u_{l}"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for n, t in enumerate(trace.times):
            row = [repr(float(t))]
            for v in trace.values[:, n]:
                row += [repr(float(v.real)), repr(float(v.imag))] if cplx else [repr(float(v))]
            w.writerow(row)


def read_trace_csv(path) -> ReceptorTrace:
    """Inverse of :func:`write_trace_csv`."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, data = rows[0], np.array(rows[1:], dtype=float)
    t = data[:, 0]
    if len(header) > 1 and header[1].startswith("re_"):
        vals = (data[:, 1::2] + 1j * data[:, 2::2]).T
    else:
        vals = data[:, 1:].T
    return ReceptorTrace(t, vals)
