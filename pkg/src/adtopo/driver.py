"""Run configuration, the optimization loop, gradient audits, timing and export."""
from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import asdict, dataclass, field, fields, is_dataclass, replace
from pathlib import Path

import numpy as np

from . import adgraph as ad
from . import problems as P
from .constraints import LengthScaleParams, global_volume_constraint, max_length_scale_constraint
from .mesh import build_grid, preset_problem
from .mma import MMAParams, MMAState, mma_update
from .models import DesignPipeline, MaterialParams, ProjectionParams, build_filter

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

log = logging.getLogger(__name__)

PROBLEMS = ("cantilever", "thermal_plate", "inverter", "bulk", "shear", "npr")
_PRESET = {"cantilever": "cantilever", "thermal_plate": "thermal_plate", "inverter": "inverter",
           "bulk": "unit_cell", "shear": "unit_cell", "npr": "unit_cell"}


@dataclass
class FilterConfig:
    on: bool = True
    rmin: float = 1.5


@dataclass
class LengthScaleConfig:
    on: bool = False
    r: float = 30.0
    void_fraction: float = 0.75
    n: float = 1.0
    p_agg: float = 16.0


@dataclass
class BCConfig:
    load: str = "mid"
    heat: float = 0.01
    sink_fraction: float = 0.4
    k_in: float = 0.1
    k_out: float = 0.1
    f_in: float = 1.0
    symmetric: bool = True


@dataclass
class CMConfig:
    kind: str = "output_displacement"
    omega: float = 0.9


@dataclass
class MicroConfig:
    beta_npr: float = 0.8


@dataclass
class RunConfig:
    problem: str = "cantilever"
    nelx: int = 60
    nely: int = 30
    vf: float = 0.5
    max_iter: int = 200
    tol: float = 0.01
    init: str = "auto"
    nu: float = 0.3
    material: MaterialParams = field(default_factory=MaterialParams)
    filter: FilterConfig = field(default_factory=FilterConfig)
    projection: ProjectionParams = field(default_factory=ProjectionParams)
    length_scale: LengthScaleConfig = field(default_factory=LengthScaleConfig)
    bc: BCConfig = field(default_factory=BCConfig)
    cm: CMConfig = field(default_factory=CMConfig)
    micro: MicroConfig = field(default_factory=MicroConfig)
    mma: MMAParams = field(default_factory=MMAParams)

    def __post_init__(self):
        if self.problem not in PROBLEMS:
            raise ValueError(f"unknown problem {self.problem!r}; expected one of {PROBLEMS}")
        if not 0.0 < self.vf <= 1.0:
            raise ValueError(f"volume fraction must lie in (0, 1], got {self.vf}")
        if self.max_iter < 0:
            raise ValueError("max_iter must be >= 0")
        if self.init not in ("auto", "uniform", "central_void"):
            raise ValueError(f"unknown initial design {self.init!r}")
        if self.problem == "inverter" and self.cm.kind not in P.CM_KINDS:
            raise ValueError(f"unknown compliant-mechanism objective {self.cm.kind!r}")

    @property
    def kind(self) -> str:
        return "thermal" if self.problem == "thermal_plate" else "elastic"

    @classmethod
    def from_mapping(cls, data: dict) -> "RunConfig":
        """Build from nested or dotted keys, e.g. ``{"material.penal": 3}``."""
        flat = _flatten(data)
        top = {f.name: f for f in fields(cls)}
        scalars, sections = {}, {}
        for key, value in flat.items():
            head, _, rest = key.partition(".")
            if head not in top:
                raise KeyError(f"unknown config key {key!r}")
            if rest:
                sections.setdefault(head, {})[rest] = value
            else:
                scalars[key] = value
        problem = scalars.get("problem", "cantilever")
        if problem == "thermal_plate":
            sections.setdefault("material", {}).setdefault("Emin", 1e-3)
        built = {}
        for name, values in sections.items():
            section_type = type(top[name].default_factory())
            if name == "projection" and "on" in values:
                values["isOn"] = values.pop("on")
            allowed = {f.name for f in fields(section_type)}
            for k in values:
                if k not in allowed:
                    raise KeyError(f"unknown config key {name}.{k}")
            built[name] = section_type(**values)
        return cls(**scalars, **built)

    def to_mapping(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = asdict(v) if is_dataclass(v) else v
        return out


def _flatten(data, prefix=""):
    flat = {}
    for k, v in data.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            flat.update(_flatten(v, key + "."))
        else:
            flat[key] = v
    return flat


def load_config(path) -> RunConfig:
    with open(path, "rb") as fh:
        return RunConfig.from_mapping(tomllib.load(fh))


# ---------------------------------------------------------------------------
# problem assembly


@dataclass
class Problem:
    config: RunConfig
    setup: P.Setup
    length_scale: LengthScaleParams | None

    @property
    def mesh(self):
        return self.setup.mesh

    def objective(self, rho, iteration: int = 0):
        cfg = self.config
        if cfg.problem in ("cantilever", "thermal_plate"):
            return P.compute_compliance(rho, self.setup)
        if cfg.problem == "inverter":
            return P.cm_objective(rho, self.setup, cfg.cm.kind, cfg.cm.omega)
        CH = P.homogenize(rho, self.setup)
        return P.micro_objective(CH, cfg.problem, iteration, cfg.micro.beta_npr)

    def constraint_functions(self):
        pipe = self.setup.pipeline
        vf = self.config.vf
        fns = [("volume", lambda r: global_volume_constraint(pipe.physical(r), vf))]
        if self.length_scale is not None:
            ls = self.length_scale
            fns.append(("length_scale", lambda r: max_length_scale_constraint(pipe.physical(r), ls)))
        return fns

    def initial_design(self) -> np.ndarray:
        cfg = self.config
        mode = cfg.init
        if mode == "auto":
            mode = "central_void" if _PRESET[cfg.problem] == "unit_cell" else "uniform"
        rho = np.full(self.mesh.n_elem, cfg.vf)
        if mode == "central_void":
            c = self.mesh.centroids
            centre = np.array([self.mesh.nelx, self.mesh.nely]) / 2.0
            dist = np.linalg.norm(c - centre, axis=1)
            rho[dist < min(self.mesh.nelx, self.mesh.nely) / 3.0] = cfg.vf / 2.0
        return rho


def build_problem(config: RunConfig) -> Problem:
    mesh = build_grid(config.nelx, config.nely, config.kind)
    preset = _PRESET[config.problem]
    b = config.bc
    params = {
        "cantilever": {"load": b.load},
        "thermal_plate": {"heat": b.heat, "sink_fraction": b.sink_fraction},
        "inverter": {"k_in": b.k_in, "k_out": b.k_out, "f_in": b.f_in, "symmetric": b.symmetric},
        "unit_cell": {},
    }[preset]
    bc = preset_problem(preset, mesh, **params)
    H = build_filter(mesh, config.filter.rmin) if config.filter.on else None
    pipeline = DesignPipeline(config.material, H, config.projection)
    setup = P.Setup(mesh, bc, pipeline, config.nu)
    ls = None
    if config.length_scale.on:
        c = config.length_scale
        ls = LengthScaleParams.build(mesh, c.r, c.void_fraction, c.n, c.p_agg)
    return Problem(config, setup, ls)


# ---------------------------------------------------------------------------
# optimization loop


class RunError(RuntimeError):
    pass


@dataclass
class RunHistory:
    records: list[dict] = field(default_factory=list)
    termination: str = "not_started"
    constraint_names: list[str] = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def to_csv(self, path=None) -> str:
        m = len(self.constraint_names)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iter", "J"] + [f"g{i}" for i in range(m)] + ["delta", "grad_ms"])
        for r in self.records:
            w.writerow([r["iter"], repr(r["J"])] + [repr(g) for g in r["g"]]
                       + [repr(r["delta"]), f"{r['grad_ms']:.3f}"])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text


def _stage(it, name, fn, *args):
    try:
        return fn(*args)
    except Exception as exc:
        raise RunError(f"iteration {it}, stage {name}: {exc}") from exc


def run_optimization(config: RunConfig, callback=None):
    """Optimize from ``rho = vf``; returns ``(rho_final, history)``."""
    problem = build_problem(config)
    rho = problem.initial_design()
    cons = problem.constraint_functions()
    history = RunHistory(constraint_names=[name for name, _ in cons])
    state = MMAState()
    history.termination = "max_iter"
    for it in range(1, config.max_iter + 1):
        t0 = time.perf_counter()
        J, dJ = _stage(it, "objective", ad.value_and_grad,
                       lambda r: problem.objective(r, it), rho)
        gs, dgs = [], []
        for name, fn in cons:
            g, dg = _stage(it, f"constraint:{name}", ad.value_and_grad, fn, rho)
            gs.append(g)
            dgs.append(dg)
        grad_ms = 1e3 * (time.perf_counter() - t0)
        rho_new, state = _stage(it, "mma", mma_update, rho, J, dJ, np.array(gs),
                                np.array(dgs), state, config.mma)
        delta = float(np.max(np.abs(rho_new - rho)))
        history.records.append({"iter": it, "J": J, "g": gs, "delta": delta,
                                "grad_ms": grad_ms, "kkt": state.kkt})
        log.info("it %3d  J %.6g  g %s  delta %.4f", it, J, np.round(gs, 5), delta)
        rho = rho_new
        if callback is not None:
            callback(it, rho, history)
        if delta <= config.tol:
            history.termination = "converged"
            break
    if config.max_iter == 0:
        history.termination = "max_iter"
    return rho, history


def final_diagnostics(config: RunConfig, rho) -> dict:
    """Objective and constraint values at a design, plus its volume fraction."""
    problem = build_problem(config)
    phys = problem.setup.pipeline.physical_values(rho)
    out = {"volume_fraction": float(phys.mean()), "objective": float(problem.objective(rho, config.max_iter))}
    for name, fn in problem.constraint_functions():
        out[name] = float(fn(rho))
    return out


# ---------------------------------------------------------------------------
# gradient audit


@dataclass
class CheckEntry:
    name: str
    method: str
    error: float
    threshold: float

    @property
    def passed(self) -> bool:
        return bool(self.error < self.threshold)

    def line(self) -> str:
        flag = "PASS" if self.passed else "FAIL"
        return f"{flag}  {self.name:<28} {self.method:<12} rel.err {self.error:.3e} < {self.threshold:.0e}"


@dataclass
class GradCheckReport:
    entries: list[CheckEntry] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.entries)

    def lines(self) -> list[str]:
        return [e.line() for e in self.entries]


def rel_linf(a, b) -> float:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    scale = np.max(np.abs(b))
    return float(np.max(np.abs(a - b)) / (scale if scale > 0 else 1.0))


def central_differences(f, x, indices, h=1e-6) -> np.ndarray:
    """Central-difference partial derivatives of plain ``f`` at ``indices``."""
    x = np.asarray(x, dtype=float)
    out = np.empty(len(indices))
    for k, i in enumerate(indices):
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        out[k] = (float(f(xp)) - float(f(xm))) / (2.0 * h)
    return out


def gradient_check(config: RunConfig, n_probes: int = 20, seed: int = 0, h: float = 1e-6,
                   iteration: int = 1) -> GradCheckReport:
    if config.nelx * config.nely > 16 * 8 or max(config.nelx, config.nely) > 16:
        raise ValueError(f"gradient_check needs a small mesh (<= 16x8), got {config.nelx}x{config.nely}")
    problem = build_problem(config)
    rng = np.random.default_rng(seed)
    n = problem.mesh.n_elem
    rho = rng.uniform(0.1, 1.0, n)
    probes = rng.choice(n, size=min(n_probes, n), replace=False)
    report = GradCheckReport()

    def audit(name, fn):
        _, g = ad.value_and_grad(fn, rho)
        fd = central_differences(fn, rho, probes, h)
        report.entries.append(CheckEntry(name, "vs FD", rel_linf(g[probes], fd), 1e-5))
        return g

    g = audit(f"objective:{config.problem}", lambda r: problem.objective(r, iteration))
    if config.problem in ("cantilever", "thermal_plate"):
        u = P.solve_state(rho, problem.setup)
        ga = P.analytical_compliance_sensitivity(rho, u, problem.setup)
        report.entries.append(CheckEntry("objective:compliance", "vs analytic", rel_linf(g, ga), 1e-8))
    if config.problem == "inverter":
        _, gu = ad.value_and_grad(P.output_displacement, rho, problem.setup)
        _, gl, _ = P.adjoint_output_sensitivity(rho, problem.setup)
        report.entries.append(CheckEntry("output_displacement", "vs adjoint", rel_linf(gu, gl), 1e-8))
    for name, fn in problem.constraint_functions():
        audit(f"constraint:{name}", fn)
    return report


# ---------------------------------------------------------------------------
# timing harness


TIMING_COLUMNS = ["iter", "ad_ms", "manual_ms", "ad_factorizations", "ad_solves",
                  "manual_factorizations", "manual_solves"]


def timing_harness(config: RunConfig, path=None) -> tuple[str, list[dict]]:
    """Per-iteration wall clock of the AD gradient and the hand-derived one.

    Compliance problems time the analytical formula; the inverter times the
    output-displacement objective against the explicit adjoint solve. The
    design is updated with the AD gradient.
    """
    if config.problem in ("cantilever", "thermal_plate"):
        manual = "compliance"
    elif config.problem == "inverter":
        manual = "adjoint"
        config = replace(config, cm=replace(config.cm, kind="output_displacement"))
    else:
        raise ValueError("timing harness supports compliance and compliant-mechanism problems")
    problem = build_problem(config)
    setup = problem.setup
    rho = problem.initial_design()
    cons = problem.constraint_functions()
    state = MMAState()
    rows = []
    for it in range(1, config.max_iter + 1):
        with ad.count_solves() as ad_counts:
            t0 = time.perf_counter()
            J, dJ = ad.value_and_grad(lambda r: problem.objective(r, it), rho)
            ad_ms = 1e3 * (time.perf_counter() - t0)
        with ad.count_solves() as man_counts:
            t0 = time.perf_counter()
            if manual == "compliance":
                u = P.solve_state(rho, setup)
                P.analytical_compliance_sensitivity(rho, u, setup)
            else:
                P.adjoint_output_sensitivity(rho, setup)
            manual_ms = 1e3 * (time.perf_counter() - t0)
        gs, dgs = zip(*[ad.value_and_grad(fn, rho) for _, fn in cons])
        rho_new, state = mma_update(rho, J, dJ, np.array(gs), np.array(dgs), state, config.mma)
        delta = float(np.max(np.abs(rho_new - rho)))
        rho = rho_new
        rows.append({"iter": it, "ad_ms": ad_ms, "manual_ms": manual_ms,
                     "ad_factorizations": ad_counts["factorizations"],
                     "ad_solves": ad_counts["solves"],
                     "manual_factorizations": man_counts["factorizations"],
                     "manual_solves": man_counts["solves"]})
        if delta <= config.tol:
            break
    buf = io.StringIO()
    w = csv.DictWriter(buf, TIMING_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (f"{v:.3f}" if k.endswith("_ms") else v) for k, v in r.items()})
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text, rows


# ---------------------------------------------------------------------------
# export


def density_pixels(rho, mesh) -> np.ndarray:
    rho = np.asarray(rho, dtype=float)
    if rho.shape != (mesh.n_elem,):
        raise ValueError(f"expected {mesh.n_elem} densities, got shape {rho.shape}")
    if np.any(rho < -1e-9) or np.any(rho > 1.0 + 1e-9):
        raise ValueError("densities must lie in [0, 1]")
    return np.rint(255.0 * (1.0 - np.clip(mesh.to_image(rho), 0.0, 1.0))).astype(int)


def export_density(rho, mesh, path, history: RunHistory | None = None, history_path=None):
    """ASCII PGM of the design (solid dark); optionally the history CSV too."""
    px = density_pixels(rho, mesh)
    lines = ["P2", f"{mesh.nelx} {mesh.nely}", "255"]
    lines += [" ".join(str(v) for v in row) for row in px]
    Path(path).write_text("\n".join(lines) + "\n")
    if history is not None:
        history.to_csv(history_path or Path(path).with_suffix(".csv"))
    return Path(path)


def read_pgm(path) -> np.ndarray:
    tokens = []
    for line in Path(path).read_text().splitlines():
        tokens += line.split("#", 1)[0].split()
    if tokens[0] != "P2":
        raise ValueError(f"{path}: not an ASCII PGM file")
    w, h, _ = (int(t) for t in tokens[1:4])
    return np.array(tokens[4:4 + w * h], dtype=int).reshape(h, w)


def save_state(path, config: RunConfig, rho, history: RunHistory | None = None):
    problem = build_problem(config)
    phys = problem.setup.pipeline.physical_values(rho)
    np.savez(path, rho=rho, physical=phys, nelx=config.nelx, nely=config.nely,
             kind=config.kind, termination=(history.termination if history else ""))


def load_state(path) -> dict:
    with np.load(path) as data:
        return {k: data[k] for k in data.files}
