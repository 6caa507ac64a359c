"""Configuration-driven entry point.

A run is described by flat ``key = value`` lines, optionally grouped under
``[section]`` headers (``run``, ``grid``, ``higgs``, ``solver``,
``donaldson``, ``uniqueness``, ``output``).  ``#`` starts a comment.  Every
key has a default except ``mode``; unknown keys, duplicates and values out
of range are rejected with the key and line number.

Exit codes: 0 when every check of the mode passes, 1 when a check fails,
2 for configuration errors, 3 for solver or BVP failures, 4 for inputs
outside an operation's domain.
"""

import argparse
from concurrent.futures import ThreadPoolExecutor
import csv
from dataclasses import dataclass, fields, replace
import json
import logging
import math
from pathlib import Path
import sys
import time

import numpy as np

from . import __version__
from .errors import ConfigError, DomainError, SolverError

log = logging.getLogger(__name__)

REPORT_SCHEMA = "ebelab-report/1"
MODES = ("verify-lie", "verify-toda", "verify-models", "hitchin2d", "solve",
         "knot-solve", "donaldson", "uniqueness")
SECTIONS = ("run", "grid", "higgs", "solver", "donaldson", "uniqueness", "output")
MAX_Q_TERMS = 16


# --------------------------------------------------------------------------
# value parsers and formatters
# --------------------------------------------------------------------------

def _int(lo, hi):
    def parse(text):
        try:
            v = int(text)
        except ValueError:
            raise ValueError(f"expected an integer, got {text!r}") from None
        if not lo <= v <= hi:
            raise ValueError(f"must satisfy {lo} <= value <= {hi}, got {v}")
        return v
    return parse, str


def _float(lo, hi, lo_open=False):
    def parse(text):
        try:
            v = float(text)
        except ValueError:
            raise ValueError(f"expected a number, got {text!r}") from None
        if not math.isfinite(v):
            raise ValueError("must be finite")
        if v < lo or (lo_open and v == lo) or v > hi:
            op = "<" if lo_open else "<="
            raise ValueError(f"must satisfy {lo} {op} value <= {hi}, got {v}")
        return v
    return parse, repr


def _bool():
    def parse(text):
        t = text.lower()
        if t in ("true", "yes", "1", "on"):
            return True
        if t in ("false", "no", "0", "off"):
            return False
        raise ValueError(f"expected true or false, got {text!r}")
    return parse, lambda v: "true" if v else "false"


def _choice(options):
    def parse(text):
        if text not in options:
            raise ValueError(f"must be one of {', '.join(options)}, got {text!r}")
        return text
    return parse, str


def _text():
    def parse(text):
        if not text or any(c in text for c in "\n="):
            raise ValueError("expected a non-empty name")
        return text
    return parse, str


def _ranks():
    """``3``, ``1..4`` or ``1,2,4``; every rank in ``1..8``."""
    def parse(text):
        try:
            if ".." in text:
                a, b = (int(p) for p in text.split(".."))
                vals = tuple(range(a, b + 1))
            else:
                vals = tuple(int(p) for p in text.split(","))
        except ValueError:
            raise ValueError(f"expected a rank, a range a..b or a list, got {text!r}") from None
        if not vals:
            raise ValueError("empty rank range")
        if min(vals) < 1 or max(vals) > 8:
            raise ValueError(f"rank must satisfy 1 <= n <= 8, got {text!r}")
        return vals

    def fmt(v):
        if len(v) > 1 and v == tuple(range(v[0], v[-1] + 1)):
            return f"{v[0]}..{v[-1]}"
        return ",".join(str(x) for x in v)
    return parse, fmt


def _float_list(lo, hi, min_len=1):
    def parse(text):
        try:
            vals = tuple(float(p) for p in text.split(","))
        except ValueError:
            raise ValueError(f"expected comma-separated numbers, got {text!r}") from None
        if len(vals) < min_len:
            raise ValueError(f"need at least {min_len} values")
        if any(not lo <= v <= hi for v in vals):
            raise ValueError(f"values must lie in [{lo}, {hi}]")
        return vals
    return parse, lambda v: ",".join(repr(x) for x in v)


def _weights_list():
    """Knot weight tuples separated by ``;``, entries by ``,``: ``0;1;2`` or ``1,1;1,2``."""
    def parse(text):
        if text == "default":
            return ()
        try:
            vals = tuple(tuple(int(p) for p in grp.split(",")) for grp in text.split(";"))
        except ValueError:
            raise ValueError(f"expected weights like '0;1' or '1,1;1,2', got {text!r}") from None
        if any(min(w) < 0 or max(w) > 20 for w in vals):
            raise ValueError("weights must lie in 0..20")
        return vals
    return parse, lambda v: "default" if not v else ";".join(",".join(map(str, w)) for w in v)


def _weights():
    def parse(text):
        try:
            vals = tuple(int(p) for p in text.split(","))
        except ValueError:
            raise ValueError(f"expected comma-separated integers, got {text!r}") from None
        if min(vals) < 0 or max(vals) > 20:
            raise ValueError("weights must lie in 0..20")
        return vals
    return parse, lambda v: ",".join(map(str, v))


def _position():
    """``cell-center`` or ``x2,x3`` in ``[0, 1)``."""
    def parse(text):
        if text == "cell-center":
            return ()
        try:
            vals = tuple(float(p) for p in text.split(","))
        except ValueError:
            raise ValueError(f"expected 'cell-center' or 'x2,x3', got {text!r}") from None
        if len(vals) != 2 or any(not 0.0 <= v < 1.0 for v in vals):
            raise ValueError("position needs two coordinates in [0, 1)")
        return vals
    return parse, lambda v: "cell-center" if not v else ",".join(repr(x) for x in v)


def _trig_poly():
    """Constant (``0.5``, ``0.5+0.1j``) or ``;``-separated terms ``a:b:re:im``.

    A term ``a:b:re:im`` is ``(re + i im) exp(2 pi i (a x2 + b x3))``.
    Stored as a tuple of ``(a, b, re, im)``.
    """
    def parse(text):
        terms = []
        if ":" not in text:
            try:
                c = complex(text.replace(" ", ""))
            except ValueError:
                raise ValueError(f"expected a complex constant or a:b:re:im terms, got {text!r}") from None
            terms.append((0, 0, c.real, c.imag))
        else:
            for part in text.split(";"):
                bits = part.split(":")
                if len(bits) != 4:
                    raise ValueError(f"term {part!r} is not a:b:re:im")
                try:
                    terms.append((int(bits[0]), int(bits[1]), float(bits[2]), float(bits[3])))
                except ValueError:
                    raise ValueError(f"term {part!r} is not a:b:re:im") from None
        if len(terms) > MAX_Q_TERMS:
            raise ValueError(f"at most {MAX_Q_TERMS} terms")
        for a, b, re, im in terms:
            if max(abs(a), abs(b)) > 8:
                raise ValueError("frequencies must satisfy |a|, |b| <= 8")
            if not (math.isfinite(re) and math.isfinite(im)) or abs(complex(re, im)) > 100:
                raise ValueError("coefficients must have modulus <= 100")
        return tuple(terms)

    def fmt(v):
        return ";".join(f"{a}:{b}:{re!r}:{im!r}" for a, b, re, im in v)
    return parse, fmt


# key -> (section, (parser, formatter), default)
KEYS = {
    "mode": ("run", _choice(MODES), None),
    "n": ("run", _ranks(), (1,)),
    "seed": ("run", _int(0, 2 ** 31 - 1), 0),
    "workers": ("run", _int(1, 64), 1),
    "nx": ("grid", _int(5, 256), 16),
    "nz": ("grid", _int(5, 256), 16),
    "ny": ("grid", _int(0, 1024), 48),
    "y_min": ("grid", _float(0.0, 1000.0), 0.0),
    "y_max": ("grid", _float(0.0, 1000.0, lo_open=True), 8.0),
    "nodes_per_decade": ("grid", _int(8, 200), 12),
    "kind": ("higgs", _choice(("hitchin-section", "knot")), "hitchin-section"),
    "q2": ("higgs", _trig_poly(), ((0, 0, 0.5, 0.0),)),
    "q3": ("higgs", _trig_poly(), ((0, 0, 0.0, 0.0),)),
    "q4": ("higgs", _trig_poly(), ((0, 0, 0.0, 0.0),)),
    "q5": ("higgs", _trig_poly(), ((0, 0, 0.0, 0.0),)),
    "q6": ("higgs", _trig_poly(), ((0, 0, 0.0, 0.0),)),
    "q7": ("higgs", _trig_poly(), ((0, 0, 0.0, 0.0),)),
    "q8": ("higgs", _trig_poly(), ((0, 0, 0.0, 0.0),)),
    "q9": ("higgs", _trig_poly(), ((0, 0, 0.0, 0.0),)),
    "knot_weights": ("higgs", _weights(), (1,)),
    "knot_position": ("higgs", _position(), ()),
    "toda_weights": ("higgs", _weights_list(), ()),
    "tol": ("solver", _float(0.0, 1.0, lo_open=True), 1e-6),
    "hitchin_tol": ("solver", _float(0.0, 1e-2, lo_open=True), 1e-10),
    "order": ("solver", _int(0, 1), 0),
    "y_c": ("solver", _float(0.0, 100.0, lo_open=True), 0.5),
    "start_cap": ("solver", _float(0.0, 1e3, lo_open=True), 1.0),
    "t_ratio": ("solver", _float(0.0, 0.99, lo_open=True), 0.25),
    "t_floor": ("solver", _float(0.0, 1.0, lo_open=True), 1e-3),
    "min_step": ("solver", _float(0.0, 1.0, lo_open=True), 1e-6),
    "max_newton": ("solver", _int(1, 500), 30),
    "max_halvings": ("solver", _int(0, 60), 12),
    "gmres_rtol": ("solver", _float(0.0, 1e-1, lo_open=True), 1e-8),
    "alpha_min": ("solver", _float(-10.0, 10.0), 0.5),
    "check_y_doubling": ("solver", _bool(), False),
    "doubling_tol": ("solver", _float(0.0, 1.0, lo_open=True), 1e-3),
    "directions": ("donaldson", _int(1, 10000), 100),
    "amplitude": ("donaldson", _float(0.0, 10.0, lo_open=True), 0.5),
    "t_samples": ("donaldson", _float_list(0.0, 1.0), (0.0, 0.5, 1.0)),
    "gl_nodes": ("donaldson", _int(2, 64), 8),
    "fd_eps": ("donaldson", _float(0.0, 0.1, lo_open=True), 1e-3),
    "fd_rel_tol": ("donaldson", _float(0.0, 1.0, lo_open=True), 1e-4),
    "perturbation": ("uniqueness", _float(0.0, 5.0, lo_open=True), 0.3),
    "solve_tol": ("uniqueness", _float(0.0, 1e-3, lo_open=True), 1e-9),
    "distance_tol": ("uniqueness", _float(0.0, 1.0, lo_open=True), 1e-5),
    "check_unitary": ("uniqueness", _bool(), True),
    "unitary_tol": ("uniqueness", _float(0.0, 1.0, lo_open=True), 1e-7),
    "report": ("output", _text(), "report.json"),
    "csv": ("output", _text(), "fields.csv"),
    "csv_x3_index": ("output", _int(0, 255), 0),
}


@dataclass(frozen=True)
class RunConfig:
    """Validated run configuration; see :data:`KEYS` for bounds and defaults."""

    mode: str
    n: tuple = (1,)
    seed: int = 0
    workers: int = 1
    nx: int = 16
    nz: int = 16
    ny: int = 48
    y_min: float = 0.0
    y_max: float = 8.0
    nodes_per_decade: int = 12
    kind: str = "hitchin-section"
    q2: tuple = ((0, 0, 0.5, 0.0),)
    q3: tuple = ((0, 0, 0.0, 0.0),)
    q4: tuple = ((0, 0, 0.0, 0.0),)
    q5: tuple = ((0, 0, 0.0, 0.0),)
    q6: tuple = ((0, 0, 0.0, 0.0),)
    q7: tuple = ((0, 0, 0.0, 0.0),)
    q8: tuple = ((0, 0, 0.0, 0.0),)
    q9: tuple = ((0, 0, 0.0, 0.0),)
    knot_weights: tuple = (1,)
    knot_position: tuple = ()
    toda_weights: tuple = ()
    tol: float = 1e-6
    hitchin_tol: float = 1e-10
    order: int = 0
    y_c: float = 0.5
    start_cap: float = 1.0
    t_ratio: float = 0.25
    t_floor: float = 1e-3
    min_step: float = 1e-6
    max_newton: int = 30
    max_halvings: int = 12
    gmres_rtol: float = 1e-8
    alpha_min: float = 0.5
    check_y_doubling: bool = False
    doubling_tol: float = 1e-3
    directions: int = 100
    amplitude: float = 0.5
    t_samples: tuple = (0.0, 0.5, 1.0)
    gl_nodes: int = 8
    fd_eps: float = 1e-3
    fd_rel_tol: float = 1e-4
    perturbation: float = 0.3
    solve_tol: float = 1e-9
    distance_tol: float = 1e-5
    check_unitary: bool = True
    unitary_tol: float = 1e-7
    report: str = "report.json"
    csv: str = "fields.csv"
    csv_x3_index: int = 0

    @property
    def rank(self):
        return self.n[0]

    def to_dict(self):
        """Every key in canonical text form."""
        return {f.name: KEYS[f.name][1][1](getattr(self, f.name)) for f in fields(self)}

    def to_text(self):
        """Serialize with section headers; :func:`parse_config` inverts it."""
        out = [f"# ebelab {__version__} run configuration"]
        vals = self.to_dict()
        for sec in SECTIONS:
            out.append(f"[{sec}]")
            out.extend(f"{k} = {v}" for k, v in vals.items() if KEYS[k][0] == sec)
        return "\n".join(out) + "\n"

    def q_coeffs(self):
        """``q_2 .. q_{n+1}`` as :class:`TrigPoly` objects."""
        from .holo import TrigPoly
        return [TrigPoly(tuple((a, b, complex(re, im)) for a, b, re, im in getattr(self, f"q{j}")))
                for j in range(2, self.rank + 2)]


def parse_config(text):
    """Parse and validate a configuration.

    Parameters
    ----------
    text : str
        Lines ``key = value``; optional ``[section]`` headers; ``#`` comments.

    Returns
    -------
    RunConfig

    Raises
    ------
    ConfigError
        For unknown keys or sections, duplicates, malformed lines, values out
        of range, a missing ``mode``, or keys inconsistent with the mode.
    """
    values, lines = {}, {}
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]") or line[1:-1].strip() not in SECTIONS:
                raise ConfigError(f"unknown section {line!r}", line=lineno)
            section = line[1:-1].strip()
            continue
        if "=" not in line:
            raise ConfigError("expected 'key = value'", line=lineno)
        key, value = (p.strip() for p in line.split("=", 1))
        if key not in KEYS:
            raise ConfigError("unknown key", key=key, line=lineno)
        if section is not None and KEYS[key][0] != section:
            raise ConfigError(f"belongs to section [{KEYS[key][0]}], not [{section}]",
                              key=key, line=lineno)
        if key in values:
            raise ConfigError(f"duplicate (first set on line {lines[key]})", key=key, line=lineno)
        try:
            values[key] = KEYS[key][1][0](value)
        except ValueError as exc:
            raise ConfigError(str(exc), key=key, line=lineno) from None
        lines[key] = lineno
    if "mode" not in values:
        raise ConfigError("missing required key", key="mode")
    cfg = RunConfig(**values)
    _check_consistency(cfg, lines)
    return cfg


def _check_consistency(cfg, lines):
    if not cfg.mode.startswith("verify") and len(cfg.n) != 1:
        raise ConfigError(f"mode {cfg.mode} needs a single rank", key="n", line=lines.get("n"))
    for j in range(cfg.rank + 2, 10):
        nonzero = any(re or im for _, _, re, im in getattr(cfg, f"q{j}"))
        if f"q{j}" in lines and len(cfg.n) == 1 and nonzero:
            raise ConfigError(f"rank {cfg.rank} has coefficients q2..q{cfg.rank + 1} only",
                              key=f"q{j}", line=lines[f"q{j}"])
    if cfg.kind == "knot" and len(cfg.knot_weights) != cfg.rank:
        raise ConfigError(f"need {cfg.rank} knot weights", key="knot_weights",
                          line=lines.get("knot_weights"))
    if cfg.y_min and cfg.y_min >= cfg.y_max:
        raise ConfigError("must be below y_max", key="y_min", line=lines.get("y_min"))
    for w in cfg.toda_weights:
        if any(len(w) != n for n in cfg.n):
            raise ConfigError("each weight tuple needs one entry per simple root",
                              key="toda_weights", line=lines.get("toda_weights"))


# --------------------------------------------------------------------------
# mode runners
# --------------------------------------------------------------------------

class _Artifacts:
    """Field slices and an optional plain table destined for the CSV file."""

    def __init__(self):
        self.fields = []
        self.table = None

    def append(self, item):
        self.fields.append(item)


class _Checks:
    """Named pass/fail records."""

    def __init__(self):
        self.items = []

    def add(self, name, passed, value=None, limit=None):
        self.items.append({"name": name, "passed": bool(passed),
                           "value": value, "limit": limit})
        log.info("%s %s (value=%s, limit=%s)", "PASS" if passed else "FAIL", name, value, limit)

    @property
    def all_passed(self):
        return all(c["passed"] for c in self.items)


def _grid(cfg):
    from .field import Grid3
    y_min = cfg.y_min if cfg.y_min > 0 else None
    ny = cfg.ny if cfg.ny > 0 else None
    return Grid3.graded(cfg.nx, cfg.nz, cfg.y_max, ny=ny,
                        nodes_per_decade=cfg.nodes_per_decade, y_min=y_min)


def _schedule(cfg):
    from .solver import ContinuitySchedule
    return ContinuitySchedule(start_cap=cfg.start_cap, ratio=cfg.t_ratio, t_floor=cfg.t_floor,
                              min_step=cfg.min_step, max_newton=cfg.max_newton,
                              max_halvings=cfg.max_halvings, gmres_rtol=cfg.gmres_rtol)


def _knot_position(cfg):
    if cfg.knot_position:
        return complex(*cfg.knot_position)
    return complex(0.5 + 0.5 / cfg.nx, 0.5 + 0.5 / cfg.nz)


def _run_verify_lie(cfg, checks, diag, fields_out):
    from .liealg import (build_lie_context, casimir_spectrum, cartan_matrix, cartan_inverse,
                         commutator, indicial_roots)
    for n in cfg.n:
        ctx = build_lie_context(n)
        a, a_inv = cartan_matrix(n), cartan_inverse(n)
        exact = all(sum(int(a[i, k]) * a_inv[k][j] for k in range(n)) == (i == j)
                    for i in range(n) for j in range(n))
        checks.add(f"n={n} cartan inverse exact", exact)
        ep, em, hb = ctx.e_plus, ctx.e_minus, ctx.h_basis
        bad = 0
        for i in range(n):
            for j in range(n):
                want = hb[i] if i == j else 0 * hb[i]
                bad += int(np.any(commutator(ep[i], em[j]) != want))
                bad += int(np.any(commutator(hb[i], ep[j]) != a[i, j] * ep[j]))
                bad += int(np.any(commutator(hb[i], em[j]) != -a[i, j] * em[j]))
        checks.add(f"n={n} Chevalley commutators exact", bad == 0, bad, 0)
        triple = max(np.abs(commutator(ctx.sl2_plus, ctx.sl2_minus) - ctx.sl2_zero).max(),
                     np.abs(commutator(ctx.sl2_zero, ctx.sl2_plus) - 2 * ctx.sl2_plus).max())
        checks.add(f"n={n} principal sl2 triple", triple < 1e-12, float(triple), 1e-12)
        evals, _ = casimir_spectrum(ctx)
        expect = np.sort(np.concatenate([[j * (j + 1)] * (2 * j + 1) for j in range(1, n + 1)]))
        err = float(np.max(np.abs(np.sort(evals) - expect)))
        checks.add(f"n={n} Casimir spectrum j(j+1), multiplicity 2j+1", err < 1e-8, err, 1e-8)
        roots = indicial_roots(ctx)
        checks.add(f"n={n} indicial roots", roots == list(range(-n, 0)) + list(range(2, n + 2)),
                   roots)
        diag[f"n={n}"] = ctx.to_dict()


def _default_toda_weights(n):
    if n == 1:
        return [(r,) for r in range(4)]
    if n == 2:
        return [(0, 0), (1, 1), (1, 2)]
    return [tuple([0] * n)]


def _run_verify_toda(cfg, checks, diag, fields_out):
    from .liealg import build_lie_context
    from .models import (boundary_asymptote_error, closed_form_profile, collocation_residual,
                         toda_bvp_solve, toda_residual)
    sig = np.geomspace(0.1, 10.0, 25)
    rows = []
    for n in cfg.n:
        ctx = build_lie_context(n)
        for w in cfg.toda_weights or _default_toda_weights(n):
            tag = f"n={n} r={list(w)}"
            num = toda_bvp_solve(ctx, w)
            entry = {"bvp_residual": num.residual}
            cf = closed_form_profile(w) if n <= 2 else None
            asym = float(np.max(np.abs(boundary_asymptote_error(cf or num, ctx.weights))))
            checks.add(f"{tag} boundary asymptote at sigma=1e-3", asym < 5e-2, asym, 5e-2)
            if cf is not None:
                res = float(np.max(np.abs(toda_residual(cf, sig))))
                checks.add(f"{tag} closed form Toda residual", res < 1e-8, res, 1e-8)
                grid = num.sigma_grid
                err = float(np.max(np.abs(num.chi(grid) - cf.chi(grid))))
                checks.add(f"{tag} BVP vs closed form", err < 1e-4, err, 1e-4)
                entry.update(closed_form_residual=res, bvp_error=err)
            entry["asymptote_error"] = asym
            diag[tag] = entry
            grid, res = collocation_residual(num)
            q = num.q(grid)
            for k in range(n):
                rows.extend([",".join(map(str, w)), repr(float(a)), k + 1, repr(float(b)),
                             repr(float(c))] for a, b, c in zip(grid, q[:, k], res[:, k]))
    fields_out.table = (["weights", "sigma", "i", "q", "residual"], rows)


def _run_verify_models(cfg, checks, diag, fields_out):
    from .ebe import nahm_residual_convergence
    from .liealg import build_lie_context
    from .models import closed_form_profile, lambda_ratio_limits, toda_bvp_solve
    for n in cfg.n:
        ctx = build_lie_context(n)
        conv = nahm_residual_convergence(ctx)
        checks.add(f"n={n} Nahm model residual order", abs(conv.order - 2.0) <= 0.3,
                   conv.order, "2.0 +- 0.3")
        w = cfg.toda_weights[0] if cfg.toda_weights else tuple([0] * n)
        prof = closed_form_profile(w) if n <= 2 else toda_bvp_solve(ctx, w)
        _, r_lim = lambda_ratio_limits(ctx, prof, psi=1.0)
        _, p_lim = lambda_ratio_limits(ctx, prof, R=1.0)
        checks.add(f"n={n} lambda ratio as R -> 0", r_lim[-1] < 1e-3, float(r_lim[-1]), 1e-3)
        checks.add(f"n={n} lambda ratio as psi -> 0", p_lim[-1] < 1e-3, float(p_lim[-1]), 1e-3)
        diag[f"n={n}"] = {"nahm_convergence": conv.to_dict(), "weights": list(w),
                          "ratio_R": r_lim.tolist(), "ratio_psi": p_lim.tolist()}


def _higgs(cfg, ctx):
    from .holo import hitchin_section_higgs, periodic_knot_higgs
    if cfg.kind == "knot":
        return periodic_knot_higgs(ctx, cfg.knot_weights, _knot_position(cfg), cfg.q_coeffs())
    return hitchin_section_higgs(ctx, cfg.q_coeffs())


def _run_hitchin2d(cfg, checks, diag, fields_out):
    from .field import Grid2
    from .liealg import build_lie_context
    from .solver import hitchin2d_solve, scalar_balance_oracle
    ctx = build_lie_context(cfg.rank)
    grid = Grid2(cfg.nx, cfg.nz)
    phi = _higgs(cfg, ctx)
    sol = hitchin2d_solve(ctx, phi, grid, tol=cfg.hitchin_tol)
    checks.add("Hitchin residual", sol.residual <= max(cfg.hitchin_tol, 1e-8), sol.residual,
               max(cfg.hitchin_tol, 1e-8))
    diag["residual"] = sol.residual
    diag["newton_steps"] = len(sol.history) - 1
    q = cfg.q2
    if cfg.rank == 1 and cfg.kind == "hitchin-section" and len(q) == 1 and q[0][:2] == (0, 0):
        c = complex(q[0][2], q[0][3])
        if c != 0:
            h = scalar_balance_oracle(c)
            err = float(np.max(np.abs(sol.H - np.diag([h, 1 / h]))))
            checks.add("constant solution vs bisection oracle", err <= 1e-8, err, 1e-8)
            diag["oracle_h"] = h
    fields_out.append(("H", sol.H, grid))


def _solve_core(cfg, ctx, grid, phi):
    from .solver import build_background, continuity_solve, hitchin2d_solve
    far = hitchin2d_solve(ctx, phi, grid.slice2d, tol=cfg.hitchin_tol)
    bg = build_background(ctx, phi, far.H, grid, k=cfg.order, y_c=cfg.y_c)
    st = continuity_solve(ctx, phi, bg, grid, _schedule(cfg), tol=cfg.tol)
    return far, bg, st


def _run_solve(cfg, checks, diag, fields_out):
    from .liealg import build_lie_context
    from .solver import metric_distance
    ctx = build_lie_context(cfg.rank)
    grid = _grid(cfg)
    phi = _higgs(cfg, ctx)
    far, bg, st = _solve_core(cfg, ctx, grid, phi)
    checks.add("weighted residual", st.residual_norm <= cfg.tol, st.residual_norm, cfg.tol)
    alpha = st.monitors["alpha"]
    checks.add("near-boundary decay exponent", alpha is not None and alpha > cfg.alpha_min,
               alpha, cfg.alpha_min)
    diag.update(solver=st.report(), hitchin_residual=far.residual,
                background={"order": bg.order, "y_c": bg.y_c, "correction": bg.correction})
    if cfg.check_y_doubling:
        big = grid.extend_to(2.0 * cfg.y_max)
        _, _, st2 = _solve_core(cfg, ctx, big, phi)
        keep = grid.y <= 0.5 * cfg.y_max
        d = metric_distance(st.metric()[:, :, keep], st2.metric()[:, :, :grid.ny][:, :, keep])
        checks.add("Y doubling change on y <= Y/2", d <= cfg.doubling_tol, d, cfg.doubling_tol)
        diag["y_doubling"] = {"distance": d, "y_max": 2.0 * cfg.y_max,
                              "residual": st2.residual_norm}
    fields_out.append(("H", st.metric(), grid))
    fields_out.append(("s", st.s, grid))


def _run_knot_solve(cfg, checks, diag, fields_out):
    from .liealg import build_lie_context
    from .solver import knot_solve
    ctx = build_lie_context(cfg.rank)
    grid = _grid(cfg)
    st, phi, bg = knot_solve(ctx, cfg.knot_weights, _knot_position(cfg), cfg.q_coeffs(), grid,
                             _schedule(cfg), tol=cfg.tol, y_c=cfg.y_c,
                             hitchin_tol=cfg.hitchin_tol)
    checks.add("knot-weighted residual", st.residual_norm <= cfg.tol, st.residual_norm, cfg.tol)
    pos = _knot_position(cfg)
    diag.update(solver=st.report(), position=[pos.real, pos.imag],
                weights=list(cfg.knot_weights))
    fields_out.append(("H", st.metric(), grid))
    fields_out.append(("s", st.s, grid))


def _run_donaldson(cfg, checks, diag, fields_out):
    from .liealg import build_lie_context
    from .solver import build_background, hitchin2d_solve
    from .variational import (Geodesic, donaldson_value, first_variation, functional_value,
                              second_variation, smooth_direction)
    ctx = build_lie_context(cfg.rank)
    grid = _grid(cfg)
    phi = _higgs(cfg, ctx)
    far = hitchin2d_solve(ctx, phi, grid.slice2d, tol=cfg.hitchin_tol)
    bg = build_background(ctx, phi, far.H, grid, k=cfg.order, y_c=cfg.y_c)
    K, gauge = bg.H, bg.gauge
    rng = np.random.default_rng(cfg.seed)
    y_range = (grid.y[1], grid.y[-2])
    dirs = [smooth_direction(grid, ctx.dim, rng, cfg.amplitude, y_range=y_range)
            for _ in range(cfg.directions)]

    def sample(s_hat):
        geo = Geodesic(K, s_hat)
        return [second_variation(geo, t, phi, grid, gauge) for t in cfg.t_samples]

    with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
        second = list(pool.map(sample, dirs))
    geo = Geodesic(K, dirs[0])
    rep = donaldson_value(geo.metric(1.0), K, phi, grid, cfg.t_samples, cfg.gl_nodes, gauge)
    eps_q = rep.epsilon_quad
    worst = min(v[0] for row in second for v in row)
    gaps = max(abs(v[0] - v[1]) for row in second for v in row)
    checks.add("m'' >= -eps_quad along all directions", worst >= -eps_q, worst, -eps_q)
    fd_err = 0.0
    for t in cfg.t_samples:
        e = cfg.fd_eps
        lo, hi = max(t - e, 0.0), t + e
        fd = (functional_value(geo, phi, grid, cfg.gl_nodes, gauge, t=hi)
              - functional_value(geo, phi, grid, cfg.gl_nodes, gauge, t=lo)) / (hi - lo)
        exact = first_variation(geo, t, phi, grid, gauge)
        if lo == t:
            exact = first_variation(geo, t + 0.5 * e, phi, grid, gauge)
        fd_err = max(fd_err, abs(fd - exact) / max(abs(exact), 1e-300))
    checks.add("m' vs finite differences of M (relative)", fd_err <= cfg.fd_rel_tol, fd_err,
               cfg.fd_rel_tol)
    diag.update(report=rep.to_dict(), min_second_variation=worst,
                max_route_gap=gaps, directions=cfg.directions)
    fields_out.append(("K", K, grid))


def _run_uniqueness(cfg, checks, diag, fields_out):
    from .liealg import build_lie_context
    from .solver import build_background, continuity_solve, hitchin2d_solve, metric_distance
    from .variational import (conjugate_problem, perturb_background, smooth_direction,
                              uniqueness_test)
    from scipy.stats import unitary_group
    ctx = build_lie_context(cfg.rank)
    grid = _grid(cfg)
    phi = _higgs(cfg, ctx)
    far = hitchin2d_solve(ctx, phi, grid.slice2d, tol=cfg.hitchin_tol)
    bg = build_background(ctx, phi, far.H, grid, k=cfg.order, y_c=cfg.y_c)
    rng = np.random.default_rng(cfg.seed)
    s0 = smooth_direction(grid, ctx.dim, rng, cfg.perturbation,
                          y_range=(grid.y[1], 0.5 * grid.y_max))
    sch = _schedule(cfg)
    rep = uniqueness_test(ctx, phi, [bg, perturb_background(bg, s0)], grid, sch,
                          tol=cfg.solve_tol)
    checks.add("distance between solutions from two backgrounds", rep.distance <= cfg.distance_tol,
               rep.distance, cfg.distance_tol)
    diag["perturbed"] = rep.to_dict()
    if cfg.check_unitary:
        u = unitary_group.rvs(ctx.dim, random_state=cfg.seed)
        bgu, phiu = conjugate_problem(bg, phi, u)
        st1 = continuity_solve(ctx, phi, bg, grid, sch, tol=cfg.solve_tol)
        st2 = continuity_solve(ctx, phiu, bgu, grid, sch, tol=cfg.solve_tol)
        back = np.conj(u).T @ st2.metric() @ u
        d = metric_distance(st1.metric(), back)
        checks.add("unitary equivariance of the solve", d <= cfg.unitary_tol, d, cfg.unitary_tol)
        diag["unitary"] = {"distance": d, "residuals": [st1.residual_norm, st2.residual_norm]}


RUNNERS = {
    "verify-lie": _run_verify_lie,
    "verify-toda": _run_verify_toda,
    "verify-models": _run_verify_models,
    "hitchin2d": _run_hitchin2d,
    "solve": _run_solve,
    "knot-solve": _run_knot_solve,
    "donaldson": _run_donaldson,
    "uniqueness": _run_uniqueness,
}


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    if isinstance(obj, (set, tuple)):
        return list(obj)
    raise TypeError(f"not serializable: {type(obj).__name__}")


def write_csv(path, items, x3_index=0):
    """Write field slices at ``x3 = x3_index * hz``.

    Columns: ``field, x2, x3, y, i, j, re, im``.
    """
    from .field import field_to_rows
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["field", "x2", "x3", "y", "i", "j", "re", "im"])
        for name, f, grid in items:
            rows = field_to_rows(f, grid)
            x3 = (x3_index % grid.nz) * grid.hz
            rows = rows[np.isclose(rows[:, 1], x3)]
            for r in rows:
                w.writerow([name, *(repr(float(v)) for v in r[:3]), int(r[3]), int(r[4]),
                            repr(float(r[5])), repr(float(r[6]))])


def run(config, outdir="."):
    """Execute a configuration and write its artifacts.

    Parameters
    ----------
    config : RunConfig
    outdir : str or Path

    Returns
    -------
    int
        Exit status (see module docstring).
    """
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    checks, diag, fields_out = _Checks(), {}, _Artifacts()
    start = time.perf_counter()
    failure = None
    try:
        RUNNERS[config.mode](config, checks, diag, fields_out)
        status = 0 if checks.all_passed else 1
    except SolverError as exc:
        failure = {"type": "SolverError", "message": str(exc), "residual": exc.residual,
                   "history_length": len(exc.history)}
        status = 3
    except DomainError as exc:
        failure = {"type": "DomainError", "message": str(exc)}
        status = 4
    report = {
        "schema": REPORT_SCHEMA,
        "version": __version__,
        "mode": config.mode,
        "config": config.to_dict(),
        "status": {0: "pass", 1: "check-failed", 3: "solver-failure",
                   4: "domain-error"}[status],
        "exit_code": status,
        "checks": checks.items,
        "diagnostics": diag,
        "failure": failure,
        "timing": {"seconds": time.perf_counter() - start},
    }
    with open(outdir / config.report, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True, default=_jsonable)
        fh.write("\n")
    if fields_out.fields:
        write_csv(outdir / config.csv, fields_out.fields, config.csv_x3_index)
    elif fields_out.table is not None:
        with open(outdir / config.csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(fields_out.table[0])
            w.writerows(fields_out.table[1])
    return status


def main(argv=None):
    """Command-line entry: ``ebelab CONFIG [--outdir DIR] [--workers N] [-v | -q]``."""
    ap = argparse.ArgumentParser(prog="ebelab", description=__doc__.splitlines()[0])
    ap.add_argument("config", help="configuration file")
    ap.add_argument("--outdir", default=".", help="directory for the report and CSV")
    ap.add_argument("--workers", type=int, help="worker threads (overrides the config)")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    ap.add_argument("-q", "--quiet", action="store_true")
    args = ap.parse_args(argv)
    level = logging.ERROR if args.quiet else [logging.WARNING, logging.INFO,
                                               logging.DEBUG][min(args.verbose, 2)]
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = parse_config(Path(args.config).read_text(encoding="utf-8"))
        if args.workers is not None:
            try:
                cfg = replace(cfg, workers=KEYS["workers"][1][0](str(args.workers)))
            except ValueError as exc:
                raise ConfigError(str(exc), key="workers") from None
    except (OSError, ConfigError) as exc:
        record = {"schema": REPORT_SCHEMA, "version": __version__, "status": "config-error",
                  "exit_code": 2, "checks": [],
                  "failure": {"type": type(exc).__name__, "message": str(exc),
                              "key": getattr(exc, "key", None),
                              "line": getattr(exc, "line", None)}}
        out = Path(args.outdir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "report.json", "w") as fh:
            json.dump(record, fh, indent=2, sort_keys=True)
            fh.write("\n")
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    status = run(cfg, args.outdir)
    print(f"{cfg.mode}: {'pass' if status == 0 else 'fail'} (exit {status})")
    return status
