"""Experiment layer: entropy rates, invariance columns, stabilization witnesses.

Each experiment returns a report object that serializes to a JSON document
(stable key order) and companion CSV tables.  All Monte Carlo content is a
pure function of the seed.  Reports about the Liouville property carry an
explicit disclaimer: finite computation yields consistency evidence, never a
certificate about a boundary.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .constructions import (
    AlphaSpec,
    CouplingSpec,
    PrescribedImage,
    alpha_moment,
    mu_alpha,
    mu_entropy_partial,
    mu_tilde,
    omega_image_closed,
)
from .errors import BudgetExceededError, TruncatedMeasureError
from .groups import Configuration, LampElement, format_element
from .measures import (
    SparseMeasure,
    convolve,
    dirac,
    entropy,
    mixture,
    pushforward,
    translated_tv,
    tv,
    tv_uncertainty,
)
from .walks import (
    BaseWalk,
    ProjectedWalk,
    ReflectedWalk,
    SemiDiagWalk,
    WalkModel,
    simulate_window,
    tau_survival_counts,
)

__all__ = [
    "EntropyRateReport",
    "InvarianceReport",
    "TauSurvivalReport",
    "StabilizationReport",
    "Theorem2Report",
    "Theorem3Report",
    "entropy_rate",
    "invariance_test",
    "tau_survival",
    "stabilization",
    "theorem2_report",
    "theorem3_report",
    "wilson_interval",
    "report_to_json",
    "write_report",
]

DISCLAIMER = (
    "Numerical consistency evidence only: survival decay, coupling bounds and "
    "stabilization witnesses cannot certify (non-)triviality of a boundary."
)

_WILSON_Z95 = 1.959963984540054


def wilson_interval(k: int, n: int, z: float = _WILSON_Z95) -> Tuple[float, float]:
    """Wilson score interval for a binomial proportion; well-behaved near 0."""
    if n <= 0:
        return (0.0, 1.0)
    p = k / n
    z2 = z * z
    denom = 1.0 + z2 / n
    center = (p + z2 / (2 * n)) / denom
    half = z * math.sqrt(p * (1.0 - p) / n + z2 / (4 * n * n)) / denom
    return (max(0.0, center - half), min(1.0, center + half))


# --- entropy rate ------------------------------------------------------------


@dataclass
class EntropyRateReport:
    rows: List[Dict]  # t, support, entropy_nats, rate
    subadditivity_ok: bool
    budget_note: Optional[str] = None

    def to_dict(self) -> Dict:
        return {
            "kind": "entropy_rate",
            "rows": self.rows,
            "subadditivity_ok": self.subadditivity_ok,
            "budget_note": self.budget_note,
        }

    def csv_tables(self) -> Dict[str, Tuple[List[str], List[List]]]:
        header = ["t", "support", "entropy_nats", "rate"]
        data = [[r["t"], r["support"], r["entropy_nats"], r["rate"]] for r in self.rows]
        return {"rows": (header, data)}


def entropy_rate(mu: SparseMeasure, t_max: int, budget: Optional[int] = None) -> EntropyRateReport:
    """Exact H(mu^{*t}) for t <= t_max; partial report if the budget runs out."""
    if mu.defect != 0.0:
        raise TruncatedMeasureError("entropy_rate needs a defect-free measure")
    rows = []
    h_by_t = {}
    note = None
    acc = mu
    for t in range(1, t_max + 1):
        if t > 1:
            try:
                acc = convolve(acc, mu, budget=budget)
            except BudgetExceededError as exc:
                note = f"stopped at t={t}: {exc}"
                break
        h = entropy(acc)
        h_by_t[t] = h
        rows.append(
            {"t": t, "support": acc.support_size, "entropy_nats": h, "rate": h / t}
        )
    ok = True
    for s in h_by_t:
        for t in h_by_t:
            if s + t in h_by_t and h_by_t[s + t] > h_by_t[s] + h_by_t[t] + 1e-9:
                ok = False
    return EntropyRateReport(rows, ok, note)


# --- invariance (Lemma mechanism) --------------------------------------------


@dataclass
class InvarianceReport:
    phi: str
    alpha: str
    truncate_at: Optional[int]
    paths: int
    rows: List[Dict]  # t, tv, tv_err, bound, bound_lo, bound_hi, within_bound
    all_within_bound: bool
    disclaimer: str = DISCLAIMER

    def to_dict(self) -> Dict:
        return {
            "kind": "invariance",
            "phi": self.phi,
            "alpha": self.alpha,
            "truncate_at": self.truncate_at,
            "paths": self.paths,
            "rows": self.rows,
            "all_within_bound": self.all_within_bound,
            "disclaimer": self.disclaimer,
        }

    def csv_tables(self):
        header = ["t", "tv", "tv_err", "bound", "bound_lo", "bound_hi", "within_bound"]
        data = [[r[k] for k in header] for r in self.rows]
        return {"rows": (header, data)}


def invariance_test(
    alpha: AlphaSpec,
    phi: Configuration,
    t_max: int,
    paths: int,
    seed: int,
    truncate_at: Optional[int] = None,
    budget: Optional[int] = None,
) -> InvarianceReport:
    """Exact ||phi lambda_t - lambda_t|| columns against the 2 P{tau > t} bound.

    The exact side uses the truncated model (error bars = compounded defect);
    the stopping-time survival is estimated on the untruncated family, whose
    walk the bound actually describes.
    """
    mu = mu_alpha(alpha, truncate_at=truncate_at, budget=budget)
    r = phi.range
    counts = tau_survival_counts(alpha, r, list(range(1, t_max + 1)), paths, seed)
    g = LampElement(0, phi)

    rows = []
    all_ok = True
    acc = mu
    for t in range(1, t_max + 1):
        if t > 1:
            acc = convolve(acc, mu, budget=budget)
        exact = translated_tv(g, acc)
        err = 2.0 * acc.defect
        k = counts[t]
        p_hat = k / paths
        lo, hi = wilson_interval(k, paths)
        ci_half = (hi - lo) / 2.0
        ok = exact <= 2.0 * p_hat + err + 3.0 * ci_half + 1e-12
        all_ok &= ok
        rows.append(
            {
                "t": t,
                "tv": exact,
                "tv_err": err,
                "bound": 2.0 * p_hat,
                "bound_lo": 2.0 * lo,
                "bound_hi": 2.0 * hi,
                "within_bound": bool(ok),
            }
        )
    return InvarianceReport(
        format_element(phi), str(alpha), truncate_at, paths, rows, bool(all_ok)
    )


# --- stopping-time survival ---------------------------------------------------


@dataclass
class TauSurvivalReport:
    alpha: str
    phi_range: int
    paths: int
    rows: List[Dict]  # t0, survivors, p_hat, ci_lo, ci_hi
    disclaimer: str = DISCLAIMER

    def to_dict(self) -> Dict:
        return {
            "kind": "tau_survival",
            "alpha": self.alpha,
            "phi_range": self.phi_range,
            "paths": self.paths,
            "rows": self.rows,
            "disclaimer": self.disclaimer,
        }

    def csv_tables(self):
        header = ["t0", "survivors", "p_hat", "ci_lo", "ci_hi"]
        data = [[r[k] for k in header] for r in self.rows]
        return {"rows": (header, data)}


def tau_survival(
    alpha: AlphaSpec,
    phi_range: int,
    t0_list: Sequence[int],
    paths: int,
    seed: int,
) -> TauSurvivalReport:
    """Monte Carlo estimates of P{tau > t0} with Wilson 95% intervals."""
    counts = tau_survival_counts(alpha, phi_range, list(t0_list), paths, seed)
    rows = []
    for t0 in t0_list:
        k = counts[int(t0)]
        lo, hi = wilson_interval(k, paths)
        rows.append(
            {"t0": int(t0), "survivors": k, "p_hat": k / paths, "ci_lo": lo, "ci_hi": hi}
        )
    return TauSurvivalReport(str(alpha), phi_range, paths, rows)


# --- stabilization -------------------------------------------------------------


@dataclass
class StabilizationReport:
    model: str
    window: Tuple[int, int]
    horizon: int
    cutoff: int
    paths: int
    guarantee: Optional[str]
    warning: Optional[str]
    positions: List[Dict]  # position, one_freq, flips_after_cutoff, last_change quantiles
    joint_entropy_plugin: float
    joint_distinct: int
    miller_madow_bias: float
    marginal_entropy_sum: float
    marginal_entropy_mm: float
    histogram: Optional[List] = None  # [mask, count] when small enough
    disclaimer: str = DISCLAIMER

    @property
    def total_flips_after_cutoff(self) -> int:
        return int(sum(p["flips_after_cutoff"] for p in self.positions))

    def to_dict(self) -> Dict:
        return {
            "kind": "stabilization",
            "model": self.model,
            "window": list(self.window),
            "horizon": self.horizon,
            "cutoff": self.cutoff,
            "paths": self.paths,
            "guarantee": self.guarantee,
            "warning": self.warning,
            "positions": self.positions,
            "total_flips_after_cutoff": self.total_flips_after_cutoff,
            "joint_entropy_plugin": self.joint_entropy_plugin,
            "joint_distinct": self.joint_distinct,
            "miller_madow_bias": self.miller_madow_bias,
            "marginal_entropy_sum": self.marginal_entropy_sum,
            "marginal_entropy_mm": self.marginal_entropy_mm,
            "histogram": self.histogram,
            "disclaimer": self.disclaimer,
        }

    def csv_tables(self):
        header = [
            "position",
            "one_freq",
            "flips_after_cutoff",
            "last_change_p50",
            "last_change_p90",
            "last_change_p99",
            "last_change_max",
        ]
        data = [[r[k] for k in header] for r in self.positions]
        return {"positions": (header, data)}


def _model_label(model: WalkModel) -> str:
    if isinstance(model, BaseWalk):
        return f"base({model.alpha})"
    if isinstance(model, ReflectedWalk):
        return f"reflected({model.alpha})"
    if isinstance(model, SemiDiagWalk):
        return f"semidiag({model.alpha}; {model.coupling})"
    return f"{model.hom}({_model_label(model.inner)})"


def _omega_reach(coupling: CouplingSpec) -> Optional[int]:
    """Max lamp position the difference walk's step can touch; None if unbounded."""
    if coupling.default == "product":
        return None
    reach = 0
    for n, kind in coupling.overrides:
        if kind == "product":
            reach = max(reach, n - 1)
        elif kind == "transposition":
            reach = max(reach, 0)
        elif isinstance(kind, PrescribedImage):
            for el in kind.rho.entries:
                if el.lit:
                    reach = max(reach, el.lit[-1])
    return reach


def _stabilization_guarantee(model: WalkModel, window: Tuple[int, int], cutoff: int):
    """(guarantee text, warning text): when is 'zero flips after cutoff' a theorem."""
    a, b = window
    if isinstance(model, ReflectedWalk):
        needed = b
        if cutoff >= needed:
            return (f"reflected walk: step t only touches positions >= t; cutoff {cutoff} >= {needed}", None)
        return (None, f"cutoff {cutoff} below the deterministic reach bound {needed}")
    if isinstance(model, BaseWalk) or (isinstance(model, ProjectedWalk) and model.hom in ("pi", "pi_prime")):
        alpha = model.alpha if isinstance(model, BaseWalk) else model.inner.alpha
        if not alpha.is_finite:
            return (None, "base-type walk with unbounded increments: no stabilization guarantee")
        needed = alpha.max_index - a + 1
        if cutoff >= needed:
            return (f"finite alpha, max index {alpha.max_index}: window flips stop by t = {needed}", None)
        return (None, f"cutoff {cutoff} below the deterministic reach bound {needed}")
    if isinstance(model, ProjectedWalk):  # pibar
        reach = _omega_reach(model.inner.coupling)
        if reach is None:
            return (None, "difference walk with product default: unbounded steps, no guarantee")
        needed = reach - a + 1
        if cutoff >= needed:
            return (f"difference walk reach {reach}: window flips stop by t = {needed}", None)
        return (None, f"cutoff {cutoff} below the deterministic reach bound {needed}")
    return (None, "no stabilization guarantee for this model; running anyway")


def stabilization(
    model: WalkModel,
    window: Tuple[int, int],
    horizon: int,
    paths: int,
    cutoff: int,
    seed: int,
) -> StabilizationReport:
    """Window flip tracking and the empirical law of the window limit."""
    guarantee, warning = _stabilization_guarantee(model, window, cutoff)
    stats = simulate_window(model, window, horizon, paths, seed, cutoff)
    a, b = window
    width = b - a + 1

    lf = stats.last_flip.clip(0)
    q50, q90, q99 = np.quantile(lf, [0.5, 0.9, 0.99], axis=0)
    positions = []
    for j in range(width):
        positions.append(
            {
                "position": a + j,
                "one_freq": float(stats.final_bits[:, j].mean()),
                "flips_after_cutoff": int(stats.flips_after_cutoff[j]),
                "last_change_p50": float(q50[j]),
                "last_change_p90": float(q90[j]),
                "last_change_p99": float(q99[j]),
                "last_change_max": int(lf[:, j].max()),
            }
        )

    masks = np.zeros(paths, dtype=np.uint64)
    for j in range(width):
        masks |= stats.final_bits[:, j].astype(np.uint64) << np.uint64(j)
    values, counts = np.unique(masks, return_counts=True)
    freqs = counts / paths
    joint_plugin = float(-(freqs * np.log(freqs)).sum())
    mm_bias = (len(values) - 1) / (2.0 * paths)

    marg = 0.0
    for j in range(width):
        p = float(stats.final_bits[:, j].mean())
        if 0.0 < p < 1.0:
            marg += -(p * math.log(p) + (1 - p) * math.log(1 - p))
    marg_mm = marg + width / (2.0 * paths)

    histogram = None
    if len(values) <= 4096:
        histogram = [[int(v), int(c)] for v, c in zip(values, counts)]

    return StabilizationReport(
        _model_label(model),
        window,
        horizon,
        cutoff,
        paths,
        guarantee,
        warning,
        positions,
        joint_plugin,
        int(len(values)),
        mm_bias,
        marg,
        marg_mm,
        histogram,
    )


# --- theorem pipelines ----------------------------------------------------------


@dataclass
class Theorem2Report:
    alpha: str
    moment_note: str
    survival: TauSurvivalReport
    reflected_stabilization: StabilizationReport
    entropy_partials: List[Dict]  # upto, entropy_nats
    disclaimer: str = DISCLAIMER

    def to_dict(self) -> Dict:
        return {
            "kind": "theorem2",
            "alpha": self.alpha,
            "moment_note": self.moment_note,
            "survival": self.survival.to_dict(),
            "reflected_stabilization": self.reflected_stabilization.to_dict(),
            "entropy_partials": self.entropy_partials,
            "disclaimer": self.disclaimer,
        }

    def csv_tables(self):
        out = {}
        for name, tab in self.survival.csv_tables().items():
            out[f"survival_{name}"] = tab
        for name, tab in self.reflected_stabilization.csv_tables().items():
            out[f"stabilization_{name}"] = tab
        out["entropy_partials"] = (
            ["upto", "entropy_nats"],
            [[r["upto"], r["entropy_nats"]] for r in self.entropy_partials],
        )
        return out


def _require_divergent_moment(alpha: AlphaSpec):
    if alpha.is_finite:
        raise ValueError(
            "alpha has finite support, so the walk stabilizes and the step measure "
            "is non-Liouville; the one-sided phenomenon needs infinite first moment"
        )
    m = alpha_moment(alpha)
    if math.isfinite(m):
        raise ValueError(
            f"alpha has finite first moment = {m:g}, hence finite entropy; "
            "the one-sided phenomenon needs infinite first moment"
        )


def theorem2_report(
    alpha: AlphaSpec,
    paths: int = 100_000,
    seed: int = 0xC0FFEE,
    phi_range: int = 1,
    t0_list: Sequence[int] = (100, 1_000, 10_000),
    window: Tuple[int, int] = (0, 20),
    horizon: int = 200,
    cutoff: int = 40,
    stab_paths: int = 10_000,
    entropy_upto: Sequence[int] = (1, 2, 4, 8, 16, 32, 64, 128, 256, 512, 1024, 2048, 4096),
) -> Theorem2Report:
    """One-sided Liouville evidence: survival decay for the walk, a stabilization
    witness for its reflection, and diverging step entropy."""
    _require_divergent_moment(alpha)
    surv = tau_survival(alpha, phi_range, t0_list, paths, seed)
    stab = stabilization(ReflectedWalk(alpha), window, horizon, stab_paths, cutoff, seed)
    partials = [
        {"upto": int(n), "entropy_nats": mu_entropy_partial(alpha, int(n))} for n in entropy_upto
    ]
    return Theorem2Report(str(alpha), "first moment diverges", surv, stab, partials)


@dataclass
class Theorem3Report:
    alpha: str
    coupling: str
    truncate_at: int
    hypothesis_note: str
    marginal_tv: Dict
    pibar_image: Dict
    pibar_stabilization: StabilizationReport
    marginal_survival: TauSurvivalReport
    disclaimer: str = DISCLAIMER

    def to_dict(self) -> Dict:
        return {
            "kind": "theorem3",
            "alpha": self.alpha,
            "coupling": self.coupling,
            "truncate_at": self.truncate_at,
            "hypothesis_note": self.hypothesis_note,
            "marginal_tv": self.marginal_tv,
            "pibar_image": self.pibar_image,
            "pibar_stabilization": self.pibar_stabilization.to_dict(),
            "marginal_survival": self.marginal_survival.to_dict(),
            "disclaimer": self.disclaimer,
        }

    def csv_tables(self):
        out = {}
        out["marginal_tv"] = (
            ["projection", "tv", "bound"],
            [
                ["pi", self.marginal_tv["pi"], self.marginal_tv["bound"]],
                ["pi_prime", self.marginal_tv["pi_prime"], self.marginal_tv["bound"]],
            ],
        )
        for name, tab in self.pibar_stabilization.csv_tables().items():
            out[f"stabilization_{name}"] = tab
        for name, tab in self.marginal_survival.csv_tables().items():
            out[f"survival_{name}"] = tab
        return out


def _check_theorem3_coupling(coupling: CouplingSpec) -> str:
    """The corrected hypothesis: a non-empty finite set of non-diagonal indices."""
    nd = coupling.non_diagonal_overrides()
    if coupling.default == "product":
        raise ValueError(
            "coupling deviates from the diagonal at every unlisted index "
            "(independent-product default): the difference walk's step measure has "
            "infinite support and the finite-set hypothesis fails; use the diagonal "
            "default with finitely many overrides (e.g. transposition@1+diagonal)"
        )
    if not nd:
        raise ValueError(
            "the set of non-diagonal indices is empty: every coupling is diagonal, "
            "the difference walk is deterministic and witnesses nothing"
        )
    return f"non-diagonal indices {nd} (finite, non-empty); diagonal elsewhere"


def theorem3_report(
    alpha: AlphaSpec,
    coupling: CouplingSpec,
    truncate_at: int = 12,
    paths: int = 100_000,
    seed: int = 0xC0FFEE,
    window: Tuple[int, int] = (-20, 0),
    horizon: int = 200,
    cutoff: int = 40,
    stab_paths: int = 10_000,
    budget: Optional[int] = None,
) -> Theorem3Report:
    """Non-Liouville joint measure with Liouville marginals: exact marginal
    identities, the closed-form difference image, and walk witnesses."""
    _require_divergent_moment(alpha)
    note = _check_theorem3_coupling(coupling)

    mt = mu_tilde(alpha, coupling, truncate_at=truncate_at, budget=budget)
    mu = mu_alpha(alpha, truncate_at=truncate_at, budget=budget)
    tv_pi = tv(pushforward("pi", mt), mu)
    tv_pip = tv(pushforward("pi_prime", mt), mu)
    bound = 1e-12 + 2.0 * mu.defect
    marginal_tv = {
        "pi": tv_pi,
        "pi_prime": tv_pip,
        "bound": bound,
        "within": bool(tv_pi <= bound and tv_pip <= bound),
    }

    image = pushforward("pibar", mt)
    closed_terms = []
    for n in range(1, truncate_at + 1):
        w = alpha.weight(n)
        omega = omega_image_closed(n, coupling, budget=budget)
        lifted = SparseMeasure(
            {LampElement(-1, phi): v for phi, v in omega.entries.items()}, validate=False
        )
        closed_terms.append((w, lifted))
    closed = mixture(closed_terms, extra_defect=float(alpha.tail(truncate_at)))
    tv_closed = tv(image, closed)
    pibar_image = {
        "tv_against_closed_form": tv_closed,
        "atoms": [
            [format_element(el), v]
            for el, v in sorted(closed.entries.items(), key=lambda kv: format_element(kv[0]))
        ][:64],
        "defect": closed.defect,
        "within": bool(tv_closed <= 1e-12),
    }

    model = ProjectedWalk(SemiDiagWalk(alpha, coupling), "pibar")
    stab = stabilization(model, window, horizon, stab_paths, cutoff, seed)
    surv = tau_survival(alpha, 1, (100, 1_000, 10_000), paths, seed)

    return Theorem3Report(
        str(alpha),
        str(coupling),
        truncate_at,
        note,
        marginal_tv,
        pibar_image,
        stab,
        surv,
    )


# --- serialization ---------------------------------------------------------------


def report_to_json(report) -> str:
    return json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n"


def _format_cell(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_report(report, out_dir, name: str, fmt: str = "csv") -> List[str]:
    """Write ``name.json`` (always) and, for fmt='csv', the companion tables.

    Returns the list of paths written; output bytes depend only on the report.
    """
    import os

    os.makedirs(out_dir, exist_ok=True)
    written = []
    jpath = os.path.join(out_dir, f"{name}.json")
    with open(jpath, "w", encoding="utf-8", newline="") as fh:
        fh.write(report_to_json(report))
    written.append(jpath)
    if fmt == "csv":
        for tname, (header, rows) in report.csv_tables().items():
            cpath = os.path.join(out_dir, f"{name}.{tname}.csv")
            with open(cpath, "w", encoding="utf-8", newline="") as fh:
                fh.write(",".join(header) + "\n")
                for row in rows:
                    fh.write(",".join(_format_cell(c) for c in row) + "\n")
            written.append(cpath)
    return written
