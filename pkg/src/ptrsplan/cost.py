"""Global Wiener cost J = sum_n E|alpha_n - alpha_hat_n|^2 for uniform pilots.

Three evaluations are provided and cross-check each other:

``cost_numeric``
    N - sum_n w_n^T gamma_n with w_n from the dense solve.
``cost_boxed``
    the one-variable closed form J(lam), lam = exp(-a*delta).
``cost_quasipoly``
    the same closed form rearranged as N - J_num(lam) / ((1+c) J_den(lam)),
    a sum of lam^k monomials plus a (log lam / a) block.

The closed forms come in two variants.  ``"corrected"`` (the default) agrees
with the dense solve to rounding.  ``"printed"`` keeps two slips of the
published derivation for comparison: the sum of v_n^T gamma0_n over positions
before the first pilot carries a spurious factor (1 - (1-lam) lam^(2(N_P-1)))
(which also feeds the lam^(2N_P-2 .. 2N_P+2) monomials), and the log-lam block
has the opposite sign.  See docs/closed_form_findings.md.

All lam^k and exp(a k) products are formed by adding exponents first, so
symbols of several thousand samples neither overflow nor underflow.
"""
from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError
from .expmodel import ExpModel
from .wiener import (PilotPattern, beta, coefficients_numeric, correlation_vector, kp,
                     rho_lambda)

METHODS = ("numeric", "boxed", "quasipoly")
VARIANTS = ("corrected", "printed")

__all__ = [
    "CostReport", "SweepRow", "beta", "kp", "cost_terms", "cost_numeric", "cost_boxed",
    "cost_quasipoly", "quasipoly_monomials", "quasipoly_denominator", "evaluate",
    "local_costs", "first_pilot", "cost_vs_spacing", "write_sweep_csv", "read_sweep_csv",
]


@dataclass(frozen=True)
class CostReport:
    j_abs: float
    n_total: int
    method: str
    terms: dict | None = None
    note: str = ""
    j_pct: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "j_pct", 100.0 * self.j_abs / self.n_total)

    def to_dict(self) -> dict:
        d = {"j_abs": self.j_abs, "j_pct": self.j_pct, "n_total": self.n_total, "method": self.method}
        if self.terms is not None:
            d["terms"] = self.terms
        if self.note:
            d["note"] = self.note
        return d


def _report(j: float, pattern: PilotPattern, method: str, terms=None, note="") -> CostReport:
    n = pattern.n_total
    # rounding can leave a perfectly tracked symbol a hair below zero
    if -1e-9 * n < j < 0.0:
        j = 0.0
    return CostReport(float(j), n, method, terms, note)


class _Consts:
    """Exponential constants of the closed forms, built from expm1 where they cancel."""

    def __init__(self, model: ExpModel, pattern: PilotPattern):
        a, d = model.a, pattern.delta
        if not a > 0:
            raise DomainError("closed forms need a > 0: the factor 1 - e^a vanishes")
        self.log_lam = -a * d
        self.lam = math.exp(self.log_lam)
        if not self.lam < 1.0:
            raise DomainError("closed forms need lambda < 1: the factor 1 - lambda^2 vanishes")
        n, p1, n_p = pattern.n_total, pattern.p1, pattern.n_pilots
        self.a, self.d, self.n, self.p1, self.n_p = a, d, n, p1, n_p
        self.c = model.c
        self.E = math.exp(a)
        self.one_m_E = -math.expm1(a)               # 1 - e^a
        self.one_m_E2 = -math.expm1(2 * a)          # 1 - e^2a
        self.one_m_Ei = -math.expm1(-a)             # 1 - e^-a
        self.one_m_E2i = -math.expm1(-2 * a)        # 1 - e^-2a
        self.one_m_lam = -math.expm1(self.log_lam)
        self.one_m_lam2 = -math.expm1(2 * self.log_lam)
        # ((1 - e^a)^2 + 6 e^a) / (1 - e^2a)
        self.k_e = (self.one_m_E ** 2 + 6 * self.E) / self.one_m_E2
        # exp(-a(p1-1)) and exp(-a(N-p1)) lam^(1-N_P) = exp(-a(N - p_NP))
        self.A = math.exp(-a * (p1 - 1))
        self.B = math.exp(-a * (n - p1) + (1 - n_p) * self.log_lam)
        self.rho = rho_lambda(self.lam, self.c, n_p)

    def lam_pow(self, k: float, extra: float = 0.0) -> float:
        return math.exp(k * self.log_lam + extra)


def cost_terms(model: ExpModel, pattern: PilotPattern, variant: str = "corrected") -> dict:
    """Closed-form sums over n = 1..N of beta_n, beta_n^2 and v_n^T gamma0_n.

    Each sum is also reported split over n < p1, p1 <= n < p_NP and n >= p_NP.
    """
    _check_variant(variant)
    if pattern.n_pilots < 3:
        raise DomainError("closed-form sums need N_P >= 3")
    k = _Consts(model, pattern)
    lam, n_p, d = k.lam, k.n_p, k.d
    A, B = k.A, k.B
    tail = B * math.exp(-k.a)                 # lam^(1-N_P) exp(-a(N+1-p1))

    beta_first = (1 + lam) * (A - 1) / k.one_m_E
    beta_mid = (n_p - 1) * k.one_m_lam * (1 / k.one_m_Ei - 1 / k.one_m_E)
    beta_last = (1 + lam) * (1 - tail) / k.one_m_Ei

    coth = (k.E * k.E + 1) / (-k.one_m_E2)    # (e^2a + 1) / (e^2a - 1)
    sq_first = (1 + lam) ** 2 * (A * A - 1) / k.one_m_E2
    sq_mid = 2 * lam * d * (n_p - 1) + k.one_m_lam2 * (n_p - 1) * coth
    sq_last = (1 + lam) ** 2 * (1 - tail * tail) / k.one_m_E2i

    j_beta = ((1 + lam) * (lam * (n_p - 2) - n_p) * k.k_e
              + (1 + lam) ** 2 / k.one_m_E * (2 * A + 2 * B - (A * A + B * B) / (1 + k.E))
              - 2 * lam * d * (n_p - 1))

    v_first = k.one_m_lam2 * (A * A - 1) / k.one_m_E2
    if variant == "printed":
        v_first *= 1 - k.one_m_lam * k.lam_pow(2 * (n_p - 1))
    v_mid = k.one_m_lam2 * (n_p - 1) * coth - 2 * lam * lam * d * (n_p - 1)
    v_last = k.one_m_lam2 * (1 - tail * tail) / k.one_m_E2i

    return {
        "rho_lambda": k.rho,
        "lambda": lam,
        "sum_beta": beta_first + beta_mid + beta_last,
        "sum_beta_parts": [beta_first, beta_mid, beta_last],
        "sum_beta_sq": sq_first + sq_mid + sq_last,
        "sum_beta_sq_parts": [sq_first, sq_mid, sq_last],
        "j_beta": j_beta,
        "sum_v_gamma": v_first + v_mid + v_last,
        "sum_v_gamma_parts": [v_first, v_mid, v_last],
    }


def cost_numeric(model: ExpModel, pattern: PilotPattern) -> CostReport:
    """Reference J from the dense-solve coefficients."""
    w = coefficients_numeric(model, pattern).weights
    g = correlation_vector(model, pattern, np.arange(1, pattern.n_total + 1))
    j = float(np.sum(1.0 - np.einsum("ij,ij->i", w, g)))
    return _report(j, pattern, "numeric")


def local_costs(model: ExpModel, pattern: PilotPattern) -> np.ndarray:
    """Per-position J_n = 1 - w_n^T gamma_n (debug view of the aggregate)."""
    w = coefficients_numeric(model, pattern).weights
    g = correlation_vector(model, pattern, np.arange(1, pattern.n_total + 1))
    return 1.0 - np.einsum("ij,ij->i", w, g)


def cost_boxed(model: ExpModel, pattern: PilotPattern, variant: str = "corrected",
               with_terms: bool = False) -> CostReport:
    """J(lam) from the one-variable closed form, evaluated term by term."""
    _check_variant(variant)
    if pattern.n_pilots < 3:
        raise DomainError("the closed form needs N_P >= 3")
    k = _Consts(model, pattern)
    lam, c, rho, n, n_p, d = k.lam, k.c, k.rho, k.n, k.n_p, k.d
    A, B = k.A, k.B
    share = c / (1 + lam + rho)
    # rho (N - K/c) expanded so that c = 0 stays finite
    first = share * (rho * n - (lam * (2 - n_p) + n_p) * k.k_e
                     + (1 + lam) / k.one_m_E * (2 * A + 2 * B - (A * A + B * B) / (1 + k.E)))
    inner = A * A - n_p * (k.E * k.E + 1) + B * B
    if variant == "printed":
        inner -= k.one_m_lam * k.lam_pow(2 * (n_p - 1)) * (A * A - 1)
    second = inner / k.one_m_E2
    third = -lam / (1 + lam) * 2 * d * (n_p - 1) * (share + lam / k.one_m_lam)
    j = n - (first + second + third) / (1 + c)
    terms = cost_terms(model, pattern, variant) if with_terms else None
    return _report(j, pattern, "boxed", terms, "" if variant == "corrected" else "printed")


@dataclass(frozen=True)
class Monomial:
    label: str          # exponent of lambda, e.g. "4-NP"; "L*3" marks the log block
    power: float
    value: float        # coefficient times lambda^power, exponents merged


def quasipoly_monomials(model: ExpModel, pattern: PilotPattern,
                        variant: str = "corrected") -> list[Monomial]:
    """Every monomial of the numerator J_num(lam), evaluated at the model's lam.

    The log block enters with (log lam) / a taken as exactly -delta.
    """
    _check_variant(variant)
    k = _Consts(model, pattern)
    c, n, n_p, E = k.c, k.n, k.n_p, k.E
    A2 = k.A * k.A
    bn_log = -k.a * (n - k.p1)                # log of exp(-a(N-p1))
    out: list[Monomial] = []

    def add(label, power, coef, extra=0.0):
        out.append(Monomial(label, power, coef * k.lam_pow(power, extra)))

    if variant == "printed":
        g = (A2 - 1) / -k.one_m_E2           # (e^-2a(p1-1) - 1) / (e^2a - 1)
        j_hi2 = g * (1 + c * (2 - n_p))
        j_hi1 = 2 * c * (A2 - 1) / k.one_m_E2 * (1 - n_p)
        add("2NP+2", 2 * n_p + 2, j_hi2)
        add("2NP+1", 2 * n_p + 1, j_hi1)
        add("2NP", 2 * n_p, 2 * (1 + c) * (A2 - 1) / k.one_m_E2)
        add("2NP-1", 2 * n_p - 1, -j_hi1)
        add("2NP-2", 2 * n_p - 2, g * (1 + c * n_p))

    base = n_p * (E * E + 1) - A2
    j3 = ((1 + c * (2 - n_p)) * base
          + c * c * (n_p - 2) * n * k.one_m_E2
          - c * (n_p - 2) * (k.one_m_E ** 2 + 6 * E)
          - 2 * c * k.A * (E + 1) + c * A2) / k.one_m_E2
    j2 = (c * n_p * k.k_e - c * c * n_p * n
          + c / k.one_m_E * (A2 / (E + 1) - 2 * k.A)
          + (1 + c * n_p) / k.one_m_E2 * base)
    add("3", 3, j3)
    add("2", 2, j2)
    add("1", 1, -j3)
    add("0", 0, -j2)

    j4 = 2 * c / math.expm1(k.a)              # times exp(-a(N-p1))
    add("4-NP", 4 - n_p, j4, bn_log)
    add("3-NP", 3 - n_p, j4, bn_log)
    add("2-NP", 2 - n_p, -j4, bn_log)
    add("1-NP", 1 - n_p, -j4, bn_log)
    j5 = (1 + c * (1 - n_p)) / math.expm1(2 * k.a)     # times exp(-2a(N-p1))
    j42 = (1 + c * (n_p - 1)) / math.expm1(2 * k.a)
    add("5-2NP", 5 - 2 * n_p, j5, 2 * bn_log)
    add("4-2NP", 4 - 2 * n_p, j42, 2 * bn_log)
    add("3-2NP", 3 - 2 * n_p, -j5, 2 * bn_log)
    add("2-2NP", 2 - 2 * n_p, -j42, 2 * bn_log)

    sign = 1.0 if variant == "corrected" else -1.0
    log_over_a = -float(k.d)
    jj3 = sign * 2 * (n_p - 1) * (1 + c * (2 - n_p))
    jj2 = sign * 2 * (n_p - 1) * (1 + c * (n_p - 1))
    jj1 = sign * 2 * (n_p - 1) * c
    add("L*3", 3, log_over_a * jj3)
    add("L*2", 2, log_over_a * jj2)
    add("L*1", 1, log_over_a * jj1)
    return out


def quasipoly_denominator(lam, c: float, n_pilots: int):
    """J_den(lam) = (c(N_P-2) - 1)(lam^3 - lam) - (1 + c N_P)(lam^2 - 1)."""
    lam = np.asarray(lam, dtype=float)
    j3 = c * (n_pilots - 2) - 1
    j2 = -(1 + c * n_pilots)
    return j3 * lam ** 3 + j2 * lam ** 2 - j3 * lam - j2


def cost_quasipoly(model: ExpModel, pattern: PilotPattern, variant: str = "corrected") -> CostReport:
    """J = N - J_num(lam) / ((1 + c) J_den(lam))."""
    if pattern.n_pilots < 3:
        raise DomainError("the closed form needs N_P >= 3")
    mono = quasipoly_monomials(model, pattern, variant)
    lam = math.exp(-model.a * pattern.delta)
    num = math.fsum(m.value for m in mono)
    den = float(quasipoly_denominator(lam, model.c, pattern.n_pilots))
    if den == 0.0:
        raise DomainError("quasi-polynomial denominator vanishes")
    j = pattern.n_total - num / den / (1 + model.c)
    return _report(j, pattern, "quasipoly", None, "" if variant == "corrected" else "printed")


def evaluate(model: ExpModel, pattern: PilotPattern, method: str = "boxed",
             variant: str = "corrected") -> CostReport:
    """Dispatch on ``method``; closed forms fall back to the dense solve when N_P < 3."""
    if method not in METHODS:
        raise DomainError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")
    if method == "numeric":
        return cost_numeric(model, pattern)
    if pattern.n_pilots < 3:
        r = cost_numeric(model, pattern)
        return CostReport(r.j_abs, r.n_total, "numeric", None, f"fallback from {method}: N_P < 3")
    if method == "boxed":
        return cost_boxed(model, pattern, variant)
    return cost_quasipoly(model, pattern, variant)


@dataclass(frozen=True)
class SweepRow:
    delta: int
    n_pilots: int
    j_pct: float
    method: str
    error: str = ""


def first_pilot(p1, delta: int) -> int:
    """Resolve ``p1``; the string ``"center"`` puts the first pilot at max(1, delta // 2)."""
    if p1 == "center":
        return max(1, int(delta) // 2)
    return int(p1)


def _sweep_one(model, n_total, p1, delta, method) -> SweepRow:
    delta = int(delta)
    try:
        pattern = PilotPattern.for_spacing(n_total, delta, first_pilot(p1, delta))
        r = evaluate(model, pattern, method)
        return SweepRow(delta, pattern.n_pilots, r.j_pct, r.method)
    except DomainError as exc:
        n_p = (n_total - first_pilot(p1, delta)) // delta + 1 if delta > 0 else 0
        return SweepRow(delta, max(0, n_p), math.nan, "error", str(exc))


def cost_vs_spacing(model: ExpModel, n_total: int, p1, deltas, method: str = "boxed",
                    workers: int = 1) -> list[SweepRow]:
    """J (in % of N) for each spacing, rows in input order; failures are annotated, not raised.

    ``p1`` is a fixed first-pilot position or ``"center"`` (see :func:`first_pilot`).
    """
    deltas = list(deltas)
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(lambda d: _sweep_one(model, n_total, p1, d, method), deltas))
    return [_sweep_one(model, n_total, p1, d, method) for d in deltas]


def write_sweep_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["delta", "n_pilots", "j_pct", "method"])
        for r in rows:
            w.writerow([r.delta, r.n_pilots, "%.9g" % r.j_pct,
                        r.method if not r.error else f"error: {r.error}"])


def read_sweep_csv(path) -> list[SweepRow]:
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            method = rec["method"]
            err = method[len("error: "):] if method.startswith("error") else ""
            rows.append(SweepRow(int(rec["delta"]), int(rec["n_pilots"]), float(rec["j_pct"]),
                                 "error" if err else method, err))
    return rows


def _check_variant(variant: str) -> None:
    if variant not in VARIANTS:
        raise DomainError(f"unknown variant {variant!r}; choose from {', '.join(VARIANTS)}")
