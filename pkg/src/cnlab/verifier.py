"""Identity suites, convergence studies, adjudications and the JSON report."""

from __future__ import annotations

import copy
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Optional, Sequence

import numpy as np

from . import tensor as ta
from .errors import ConfigurationError, PreconditionError
from .gauge import coupling_residual, cn_residual, synthesize_cn_torus
from .geometry import (
    ManifoldContext,
    convention_pin,
    convergence_slope,
    curvature,
    make_model,
    second_kind_apply,
)
from .operators import (
    divergence,
    exterior_d,
    hodge_1form,
    lichnerowicz,
    lichnerowicz_connection,
    linearized_ricci_formula,
    linearized_ricci_gateaux,
    rough_laplacian,
    scalar_laplacian,
    trace,
)
from .random_fields import band_limited_scalar, band_limited_sym2
from .spectral import assemble, bochner_koiso_report, eigensolve

SCHEMA_VERSION = 1
FLOOR = 1e-9  # absolute residual treated as "exact to roundoff"
FD_LADDER_STEP = 4

PREDICATES = {
    "any": lambda ctx: True,
    "torus_required": lambda ctx: ctx.is_torus,
    "einstein_required": lambda ctx: ctx.is_einstein,
    "flat_required": lambda ctx: ctx.is_flat,
    "ricci_flat_required": lambda ctx: ctx.model_name == "flat_torus",
}


@dataclass(frozen=True)
class ModelConfig:
    model: str
    dim: int
    resolutions: tuple
    stencil_order: int = 6
    interior_margin: Optional[float] = None
    params: dict = field(default_factory=dict)
    derivative: Optional[str] = None

    def build(self, res: int) -> ManifoldContext:
        return make_model(
            self.model,
            self.dim,
            res,
            self.params,
            stencil_order=self.stencil_order,
            interior_margin=self.interior_margin,
            derivative=self.derivative,
        )

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "dim": self.dim,
            "resolutions": list(self.resolutions),
            "stencil_order": self.stencil_order,
            "interior_margin": self.interior_margin,
            "params": {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in sorted(self.params.items())},
            "derivative": self.derivative,
        }


def expand_resolutions(model: str, resolutions: Sequence[int], derivative: Optional[str] = None) -> tuple:
    """A single resolution on a finite-difference backend becomes the ladder [r, r+4, r+8]."""
    res = tuple(int(r) for r in resolutions)
    spectral = derivative == "fourier" or (derivative is None and model == "flat_torus")
    if len(res) == 1 and not spectral:
        r = res[0]
        return (r, r + FD_LADDER_STEP, r + 2 * FD_LADDER_STEP)
    return res


# ---------------------------------------------------------------------------
# identity catalogue


def _unit(ctx, f):
    s = ctx.sup(f)
    return f * (1.0 / s) if s > 0 else f


def _i1(ctx, rng):
    f = band_limited_scalar(ctx, rng)
    fg = ctx.sym2(f.components * ctx.g)
    return divergence(ctx, fg) + exterior_d(ctx, f)


def _i2(ctx, rng):
    h = band_limited_sym2(ctx, rng)
    return coupling_residual(ctx, h) - cn_residual(ctx, h)


def _i3(ctx, rng):
    b = curvature(ctx)
    return divergence(ctx, b.ricci) + 0.5 * exterior_d(ctx, b.scalar)


def _i4(ctx, rng):
    f = band_limited_scalar(ctx, rng)
    return hodge_1form(ctx, exterior_d(ctx, f)) - exterior_d(ctx, scalar_laplacian(ctx, f))


def _i5(ctx, rng):
    h = band_limited_sym2(ctx, rng)
    lam = curvature(ctx).lambda_hat
    weitz = rough_laplacian(ctx, h) - 2.0 * second_kind_apply(ctx, h) + (2.0 * lam) * h
    return lichnerowicz_connection(ctx, h) - weitz


def _i6(ctx, rng):
    h = band_limited_sym2(ctx, rng)
    return trace(ctx, lichnerowicz(ctx, h)) - scalar_laplacian(ctx, trace(ctx, h))


def _i7(ctx, rng):
    u = band_limited_scalar(ctx, rng)
    h = synthesize_cn_torus(ctx, u, seed=int(rng.integers(2**31)))
    return linearized_ricci_formula(ctx, h) - 0.5 * lichnerowicz(ctx, h)


def gateaux_richardson(ctx, h, eps: float = 3.2e-2):
    """Central differences at eps, eps/2, eps/4 combined to cancel the eps^2 and eps^4 terms."""
    g1, g2, g4 = (linearized_ricci_gateaux(ctx, h, eps / k) for k in (1, 2, 4))
    return (64.0 / 45.0) * g4 - (20.0 / 45.0) * g2 + (1.0 / 45.0) * g1


def _i8(ctx, rng):
    h = _unit(ctx, band_limited_sym2(ctx, rng))
    return linearized_ricci_formula(ctx, h) - gateaux_richardson(ctx, h)


def _i9(ctx, rng):
    b = curvature(ctx)
    ric = b.ricci
    return ctx.sup(divergence(ctx, ric)) + ctx.sup(trace(ctx, ric))


@dataclass(frozen=True)
class IdentityCase:
    id: str
    statement: str
    anchor: str
    applicability: frozenset
    residual: Callable
    norm: str = "sup_pointwise"
    kind: str = "asserted"

    def applies(self, ctx: ManifoldContext) -> bool:
        return all(PREDICATES[p](ctx) for p in self.applicability)


CATALOG = {
    c.id: c
    for c in [
        IdentityCase("I1", "delta(f g) = -df", '"for every smooth function"', frozenset({"any"}), _i1),
        IdentityCase(
            "I2",
            "delta h0 + (n-2)/(2n) d tr h = delta h + d tr h / 2",
            '"its trace-free and pure-trace parts"',
            frozenset({"any"}),
            _i2,
        ),
        IdentityCase(
            "I3", "delta Ric = -ds/2", '"the contracted second Bianchi identity implies"', frozenset({"any"}), _i3
        ),
        IdentityCase(
            "I4", "Delta_H d f = d Delta f", '"commutes with the exterior derivative"', frozenset({"any"}), _i4
        ),
        IdentityCase(
            "I5",
            "Delta_L h = rough h - 2 R(h) + 2 lambda h",
            '"the Lichnerowicz Laplacian reduces to"',
            frozenset({"einstein_required"}),
            _i5,
        ),
        IdentityCase(
            "I6",
            "tr Delta_L h = Delta tr h",
            "trace of the Einstein-reduced Lichnerowicz formula",
            frozenset({"einstein_required"}),
            _i6,
        ),
        IdentityCase(
            "I7",
            "Ric'(h) = Delta_L h / 2 for Chen-Nagano h",
            '"the gauge contribution vanishes identically"',
            frozenset({"einstein_required", "flat_required"}),
            _i7,
        ),
        IdentityCase(
            "I8",
            "Ric'(h) formula = Gateaux derivative of Ric",
            '"the linearization of the Ricci tensor is given by"',
            frozenset({"any"}),
            _i8,
        ),
        IdentityCase(
            "I9",
            "Ric is transverse-traceless on a Ricci-flat model",
            '"becomes a genuine transverse-traceless tensor"',
            frozenset({"ricci_flat_required"}),
            _i9,
        ),
    ]
}


def case_residual(case: IdentityCase, ctx: ManifoldContext, seed: int) -> float:
    rng = np.random.default_rng([seed, int(case.id[1:])])
    out = case.residual(ctx, rng)
    return float(out) if np.isscalar(out) else ctx.sup(out)


def _verdict(residuals, spacings, order, floor) -> dict:
    floor_limited = all(r <= floor for r in residuals)
    slope = convergence_slope(spacings, residuals) if len(residuals) >= 2 and not floor_limited else None
    if floor_limited:
        ok = True
    elif slope is not None and len(residuals) >= 3:
        ok = slope >= order - 0.5 or residuals[-1] <= floor
    else:
        ok = residuals[-1] <= floor
    return {"slope": slope, "floor_limited": floor_limited, "verdict": "pass" if ok else "fail"}


@dataclass
class ResidualReport:
    suite_id: str
    config: dict
    convention_pin: dict
    cases: list
    adjudications: list = field(default_factory=list)
    spectra: Optional[dict] = None
    flow: Optional[dict] = None
    timings: Optional[dict] = None
    timestamp: Optional[str] = None

    @property
    def passed(self) -> bool:
        return all(c["verdict"] == "pass" for c in self.cases if c["kind"] == "asserted" and c["applicable"])

    def to_dict(self) -> dict:
        out = {
            "schema_version": SCHEMA_VERSION,
            "suite_id": self.suite_id,
            "config": self.config,
            "convention_pin": self.convention_pin,
            "cases": self.cases,
            "adjudications": self.adjudications,
        }
        if self.spectra is not None:
            out["spectra"] = self.spectra
        if self.flow is not None:
            out["flow"] = self.flow
        if self.timings is not None:
            out["timings"] = self.timings
        if self.timestamp is not None:
            out["timestamp"] = self.timestamp
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, data: dict) -> "ResidualReport":
        if data.get("schema_version") != SCHEMA_VERSION:
            raise ConfigurationError(f"unsupported schema_version {data.get('schema_version')!r}")
        return cls(
            suite_id=data["suite_id"],
            config=data["config"],
            convention_pin=data["convention_pin"],
            cases=data["cases"],
            adjudications=data.get("adjudications", []),
            spectra=data.get("spectra"),
            flow=data.get("flow"),
            timings=data.get("timings"),
            timestamp=data.get("timestamp"),
        )

    @classmethod
    def from_json(cls, text: str) -> "ResidualReport":
        return cls.from_dict(json.loads(text))


def pin_record() -> dict:
    return copy.deepcopy(convention_pin())


def run_identity_suite(
    cfg: ModelConfig,
    suite: Optional[Sequence[str]] = None,
    *,
    seed: int = 0,
    threads: int = 1,
    floor: float = FLOOR,
    timestamp: bool = True,
) -> ResidualReport:
    """Evaluate catalogue cases at every resolution of ``cfg``.

    With ``suite=None`` every case is listed and inapplicable ones are marked;
    naming an inapplicable case explicitly is a configuration error.
    """
    t0 = time.perf_counter()
    ids = list(CATALOG) if suite is None else list(suite)
    for cid in ids:
        if cid not in CATALOG:
            raise ConfigurationError(f"unknown identity case {cid!r}; known: {', '.join(CATALOG)}")
    ctxs = [cfg.build(r) for r in cfg.resolutions]
    probe = ctxs[0]
    if suite is not None:
        bad = [cid for cid in ids if not CATALOG[cid].applies(probe)]
        if bad:
            preds = {cid: sorted(CATALOG[cid].applicability) for cid in bad}
            raise ConfigurationError(f"cases not applicable to {cfg.model}: {preds}")
    pin = pin_record()
    for ctx in ctxs:
        curvature(ctx)  # warm caches before threads share the contexts
    active = [cid for cid in ids if CATALOG[cid].applies(probe)]
    tasks = [(cid, i) for cid in active for i in range(len(ctxs))]

    def work(task):
        cid, i = task
        t = time.perf_counter()
        r = case_residual(CATALOG[cid], ctxs[i], seed)
        return r, time.perf_counter() - t

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, tasks))
    else:
        results = [work(t) for t in tasks]
    by_task = dict(zip(tasks, results))
    spacings = [ctx.spacing for ctx in ctxs]
    cases, timings = [], {}
    for cid in ids:
        case = CATALOG[cid]
        entry = {
            "id": cid,
            "statement": case.statement,
            "anchor": case.anchor,
            "applicability": sorted(case.applicability),
            "norm": case.norm,
            "kind": case.kind,
            "applicable": cid in active,
        }
        if cid in active:
            res = [by_task[(cid, i)][0] for i in range(len(ctxs))]
            entry["resolutions"] = list(cfg.resolutions)
            entry["residuals"] = res
            entry.update(_verdict(res, spacings, cfg.stencil_order if probe.engine.kind != "fourier" else np.inf, floor))
            timings[cid] = sum(by_task[(cid, i)][1] for i in range(len(ctxs)))
        else:
            entry["verdict"] = "not_applicable"
        cases.append(entry)
    einstein = {}
    if probe.is_einstein:
        einstein = {str(r): curvature(c).lambda_hat for r, c in zip(cfg.resolutions, ctxs)}
    config = cfg.to_dict() | {"seed": seed, "floor": floor, "lambda_hat": einstein}
    timings["total"] = time.perf_counter() - t0
    return ResidualReport(
        suite_id="identities",
        config=config,
        convention_pin=pin,
        cases=cases,
        timings=timings if timestamp else None,
        timestamp=time.strftime("%Y-%m-%dT%H:%M:%S%z") if timestamp else None,
    )


# ---------------------------------------------------------------------------
# convergence study


def convergence_study(
    case_id: str, cfg: ModelConfig, resolutions: Sequence[int], *, seed: int = 0, floor: float = FLOOR
) -> dict:
    res = [int(r) for r in resolutions]
    if len(res) < 3:
        raise ConfigurationError("a convergence study needs at least 3 resolutions")
    if any(b <= a for a, b in zip(res, res[1:])):
        raise ConfigurationError("resolutions must be strictly increasing")
    if case_id not in CATALOG:
        raise ConfigurationError(f"unknown identity case {case_id!r}")
    case = CATALOG[case_id]
    ctxs = [ModelConfig(**{**cfg.__dict__, "resolutions": tuple(res)}).build(r) for r in res]
    if not case.applies(ctxs[0]):
        raise ConfigurationError(f"{case_id} not applicable to {cfg.model}: needs {sorted(case.applicability)}")
    residuals = [case_residual(case, c, seed) for c in ctxs]
    spacings = [c.spacing for c in ctxs]
    floor_limited = all(r <= floor for r in residuals)
    return {
        "case": case_id,
        "model": cfg.model,
        "dim": cfg.dim,
        "stencil_order": cfg.stencil_order,
        "resolutions": res,
        "spacings": spacings,
        "residuals": residuals,
        "slope": None if floor_limited else convergence_slope(spacings, residuals),
        "floor_limited": floor_limited,
    }


# ---------------------------------------------------------------------------
# adjudications


def _commutation_residuals(ctx, h, sign):
    lam = curvature(ctx).lambda_hat
    dh = divergence(ctx, h)
    a = divergence(ctx, lichnerowicz(ctx, h, sign=sign)) - hodge_1form(ctx, dh)
    b = a + (2.0 * lam) * dh
    return ctx.sup(a), ctx.sup(b), ctx.sup(dh), lam


def adjudicate_commutation(
    cfg: ModelConfig,
    *,
    samples: int = 10,
    seed: int = 0,
    sign: Optional[int] = None,
    floor: float = FLOOR,
    threads: int = 1,
) -> dict:
    """Which of delta Delta_L h - Delta_H delta h (A) or A + 2 lambda delta h (B) vanishes.

    ``sign`` overrides the pinned second-kind sign (negative control).  The
    verdict is read off the data: a candidate converges if every sample has
    slope >= p - 0.5 (or sits at the floor); it stalls if its finest residual
    stays >= 0.5 |2 lambda| |delta h|.
    """
    if len(cfg.resolutions) < 3:
        raise ConfigurationError("commutation adjudication needs at least 3 resolutions")
    ctxs = [cfg.build(r) for r in cfg.resolutions]
    if not ctxs[0].is_einstein:
        raise PreconditionError(f"{cfg.model} is not an Einstein model")
    for c in ctxs:
        curvature(c)
    spacings = [c.spacing for c in ctxs]
    order = cfg.stencil_order

    def one(s):
        rows = [_commutation_residuals(c, band_limited_sym2(c, np.random.default_rng([seed, s])), sign) for c in ctxs]
        return rows

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            all_rows = list(pool.map(one, range(samples)))
    else:
        all_rows = [one(s) for s in range(samples)]
    lam = float(np.mean([r[3] for r in all_rows[0]]))
    data, conv, stall = [], {"A": [], "B": []}, {"A": [], "B": []}
    for s, rows in enumerate(all_rows):
        rec = {"sample": s}
        for key, col in (("A", 0), ("B", 1)):
            res = [r[col] for r in rows]
            at_floor = res[-1] <= floor
            slope = None if at_floor and all(x <= floor for x in res) else convergence_slope(spacings, res)
            stall_level = 0.5 * abs(2 * rows[-1][3]) * rows[-1][2]
            conv[key].append(at_floor or (slope is not None and slope >= order - 0.5))
            stall[key].append(stall_level > 0 and res[-1] >= stall_level)
            rec[key] = {"residuals": res, "slope": slope, "stall_level": stall_level}
        rec["delta_h_sup"] = rows[-1][2]
        data.append(rec)
    converges = {k: all(v) for k, v in conv.items()}
    stalls = {k: all(v) for k, v in stall.items()}
    if abs(lam) < 1e-8:
        verdict = "indistinguishable at lambda = 0"
        winner = None
    elif converges["A"] and stalls["B"] and not converges["B"]:
        verdict, winner = "A", "A"
    elif converges["B"] and stalls["A"] and not converges["A"]:
        verdict, winner = "B", "B"
    else:
        verdict, winner = "inconclusive", None
    return {
        "id": "commutation",
        "anchor": '"Recall the classical commutation relation" vs "Applying the commutation relation"',
        "candidates": {
            "A": "delta(Delta_L h) - Delta_H(delta h)",
            "B": "delta(Delta_L h) - Delta_H(delta h) + 2 lambda delta h",
        },
        "model": cfg.to_dict(),
        "lambda_hat": lam,
        "sign_override": sign,
        "second_kind_sign": sign if sign is not None else convention_pin()["second_kind_sign"],
        "samples": data,
        "converges": converges,
        "stalls": stalls,
        "verdict": verdict,
        "winner": winner,
    }


def counterexample_field(ctx: ManifoldContext):
    """sin(2 pi x^1)(e^1 e^1 - e^2 e^2), made g-trace-free."""
    n = ctx.dim
    full = np.zeros((n, n) + ctx.grid_shape)
    s = np.sin(2 * np.pi * ctx.coords[0])
    full[0, 0] = s
    full[1, 1] = -s
    tr = np.einsum("ij...,ij...->...", ctx.g_inv, full)
    return ctx.sym2(full - (tr / n) * ctx.g)


def _tracefree(ctx, h):
    tr = trace(ctx, h).components
    return ctx.sym2(h.full() - (tr / ctx.dim) * ctx.g)


def _stats(values) -> dict:
    v = np.asarray(values, dtype=float)
    return {"count": int(v.size), "min": float(v.min()), "max": float(v.max()), "mean": float(v.mean())}


def adjudicate_bochner_koiso(ctx: ManifoldContext, samples: int = 20, *, seed: int = 0, eigen: int = 6) -> dict:
    """Residuals of the quoted Bochner-Koiso identity; data only, nothing asserted."""
    if not ctx.is_torus:
        raise PreconditionError("Bochner-Koiso adjudication needs a torus model")
    named = bochner_koiso_report(ctx, counterexample_field(ctx))
    rng = np.random.default_rng(seed)
    random_rows = []
    for _ in range(samples):
        h0 = _tracefree(ctx, band_limited_sym2(ctx, rng, 2))
        led = bochner_koiso_report(ctx, h0)
        random_rows.append(led.stated_identity_residual / max(led.l2_norm_sq, 1e-300))
    eigen_rows = []
    if ctx.is_flat:
        dec = eigensolve(assemble(ctx, "lichnerowicz:general", backend="fourier_block"), 3 * eigen + 3, target=1.0)
        for p in dec.eigenpairs:
            h0 = _tracefree(ctx, p.eigenvector)
            if ctx.l2_norm(h0) < 1e-6:
                continue
            h0 = h0 * (1.0 / ctx.l2_norm(h0))
            led = bochner_koiso_report(ctx, h0, mu=p.eigenvalue)
            eigen_rows.append(led.to_dict() | {"label": list(p.label)})
            if len(eigen_rows) >= eigen:
                break
    gap = named.stated_identity_residual
    return {
        "id": "bochner_koiso",
        "anchor": '"classical Bochner-Koiso identity for trace-free"',
        "model": ctx.descriptor(),
        "counterexample": named.to_dict(),
        "random_relative_residuals": _stats(random_rows),
        "eigentensors": eigen_rows,
        "verdict": "stated identity violated" if abs(gap) > 1e-8 * max(1.0, named.grad_energy) else "consistent",
        "ibp_check": abs(named.grad_energy - named.grad_energy_ibp),
    }
