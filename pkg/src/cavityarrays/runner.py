"""Experiment orchestration: configs, sweeps, convergence and rescaling checks.

An experiment is a JSON document (schema in ``data/config.schema.json``)
describing one cavity array, a sweep over one or more of its parameters, the
solver(s) to use and the witnesses to evaluate. :func:`run_experiment`
produces one :class:`SweepRow` per sweep point and writes them as CSV plus a
JSON metadata sidecar.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import itertools
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import master, wfmc
from .hilbert import basis_dimension
from .model import Qubit, SystemSpec, build_basis, build_channels, build_hamiltonian, chain_couplings, ring_couplings
from .witness import bipartite_S_optimized, jackknife_error, quadripartite_optimized

__all__ = [
    "ConfigError",
    "SweepAxis",
    "QuadripartiteRequest",
    "ExperimentConfig",
    "SolverResult",
    "SweepRow",
    "ConvergenceReport",
    "RescalingReport",
    "load_config",
    "parse_config",
    "recipe_names",
    "recipe_path",
    "config_schema",
    "solve_point",
    "run_experiment",
    "write_csv",
    "check_convergence",
    "check_config_convergence",
    "rescaling_check",
    "AUTO_MASTER_LIMIT",
]

logger = logging.getLogger(__name__)

#: ``solver="auto"`` uses the master equation up to this basis dimension.
AUTO_MASTER_LIMIT = 1500

#: Sweep parameters that carry units of energy (rescaled by ``rescaling_check``).
ENERGY_PARAMETERS = frozenset({
    "drive_amplitude", "loss", "dephasing", "nonlinearity", "hopping", "energy",
    "qubit_energy", "qubit_coupling", "qubit_loss", "qubit_dephasing",
})


class ConfigError(ValueError):
    """The experiment description is invalid."""


# --- configuration -----------------------------------------------------------------


def config_schema():
    """The JSON schema every experiment config is validated against."""
    return json.loads(resources.files("cavityarrays").joinpath("data/config.schema.json").read_text())


def recipe_names():
    """Names of the bundled experiment recipes."""
    folder = resources.files("cavityarrays").joinpath("recipes")
    return sorted(p.name[:-5] for p in folder.iterdir() if p.name.endswith(".json"))


def recipe_path(name):
    """Path of a bundled recipe (``"fig1"`` or ``"fig1.json"``)."""
    stem = name[:-5] if name.endswith(".json") else name
    if stem not in recipe_names():
        raise ConfigError(f"no bundled recipe named {name!r}; available: {', '.join(recipe_names())}")
    return Path(str(resources.files("cavityarrays").joinpath(f"recipes/{stem}.json")))


@dataclass(frozen=True)
class SweepAxis:
    """One swept parameter. ``mode``/``qubit`` pick the target where relevant."""

    parameter: str
    values: tuple
    mode: int | None = None
    qubit: int | None = None

    @property
    def column(self):
        if self.mode is not None:
            return f"{self.parameter}_{self.mode}"
        if self.qubit is not None:
            return f"{self.parameter}_q{self.qubit}"
        return self.parameter


@dataclass(frozen=True)
class QuadripartiteRequest:
    """Four modes mapped to witness slots 0..3 plus the ``g`` closed form to use."""

    slots: tuple
    topology: str = "ring"
    label: str = ""

    @property
    def name(self):
        return self.label or "_".join(str(s) for s in self.slots)

    @property
    def optimizer_topology(self):
        return None if self.topology == "numeric" else self.topology


def _complex(value):
    if isinstance(value, (list, tuple)):
        return complex(value[0], value[1])
    return complex(value)


@dataclass(frozen=True)
class ExperimentConfig:
    """A validated experiment.

    ``system`` holds the base parameters as parsed from JSON; :meth:`spec_at`
    applies a sweep point and returns the :class:`SystemSpec`.
    """

    system: dict
    sweep: tuple = ()
    solver: str = "auto"
    n_max: int = 8
    truncation: str = "capped-total"
    rel_tol: float = 1e-3
    bipartite: tuple = ()
    quadripartite: tuple = ()
    trajectories: wfmc.TrajectoryConfig = field(default_factory=wfmc.TrajectoryConfig)
    output: str | None = None
    workers: int = 1
    memory_ceiling_mb: float = 4096.0
    name: str = ""
    source: dict = field(default_factory=dict, repr=False, compare=False)

    # -- sweep geometry --

    def points(self):
        """All sweep points as dicts ``{axis.column: value}``, last axis fastest."""
        if not self.sweep:
            return [{}]
        grids = itertools.product(*(axis.values for axis in self.sweep))
        return [{axis.column: v for axis, v in zip(self.sweep, combo)} for combo in grids]

    @property
    def num_modes(self):
        return len(self.system["energies"])

    @property
    def num_qubits(self):
        return len(self.system.get("qubits", ()))

    def dimension(self, n_max=None):
        n = self.n_max if n_max is None else n_max
        return basis_dimension(self.num_modes, self.num_qubits, n, self.truncation)

    def solvers(self, n_max=None):
        """Concrete solver list after resolving ``"auto"``."""
        if self.solver == "both":
            return ("master", "wfmc")
        if self.solver == "auto":
            return ("master",) if self.dimension(n_max) <= AUTO_MASTER_LIMIT else ("wfmc",)
        return (self.solver,)

    @property
    def witness_modes(self):
        modes = {m for pair in self.bipartite for m in pair}
        modes |= {m for req in self.quadripartite for m in req.slots}
        return tuple(sorted(modes))

    # -- system construction --

    def _parameters(self, point):
        s = self.system
        m = self.num_modes
        pattern = [_complex(f) for f in s.get("drive_pattern", [0.0] * m)]
        params = dict(
            energies=list(s["energies"]),
            nonlinearity=s.get("nonlinearity", 0.0),
            hopping=s.get("hopping", 0.0),
            loss=s["loss"],
            dephasing=s.get("dephasing", 0.0),
            amplitude=s.get("drive_amplitude", 1.0),
            pattern=pattern,
            qubits=[{"loss": 0.0, "dephasing": 0.0, **q} for q in s.get("qubits", ())],
        )
        for axis in self.sweep:
            if axis.column not in point:
                continue
            value = point[axis.column]
            p = axis.parameter
            if p == "drive_amplitude":
                params["amplitude"] = value
            elif p == "drive_phase":
                params["pattern"][axis.mode] *= np.exp(1j * value)
            elif p == "drive_scale":
                params["pattern"][axis.mode] *= value
            elif p == "energy":
                params["energies"][axis.mode] = value
            elif p.startswith("qubit_"):
                key = p[len("qubit_"):]
                targets = range(len(params["qubits"])) if axis.qubit is None else [axis.qubit]
                for t in targets:
                    params["qubits"][t][key] = value
            else:
                params[p] = value
        return params

    def spec_at(self, point=None):
        """:class:`SystemSpec` at one sweep point (``None``: the base system)."""
        params = self._parameters(point or {})
        s = self.system
        m = self.num_modes
        if "couplings" in s:
            couplings = tuple((int(j), int(k), float(h)) for j, k, h in s["couplings"])
            if any(a.parameter == "hopping" for a in self.sweep):
                couplings = tuple((j, k, params["hopping"]) for j, k, _ in couplings)
        elif s.get("topology", "chain") == "ring":
            couplings = ring_couplings(m, params["hopping"])
        else:
            couplings = chain_couplings(m, params["hopping"])
        return SystemSpec(
            energies=params["energies"],
            nonlinearity=params["nonlinearity"],
            couplings=couplings,
            drives=tuple(params["amplitude"] * f for f in params["pattern"]),
            loss=params["loss"],
            dephasing=params["dephasing"],
            qubits=tuple(Qubit(**q) for q in params["qubits"]),
            kind=s.get("kind", "KH"),
        )

    def scaled(self, factor):
        """Copy with every energy multiplied by ``factor`` and every time divided by it."""
        s = json.loads(json.dumps(self.system))
        for key in ("energies",):
            s[key] = [factor * e for e in s[key]]
        for key in ("nonlinearity", "hopping", "loss", "dephasing", "drive_amplitude"):
            if key in s:
                s[key] = factor * s[key]
        if "couplings" in s:
            s["couplings"] = [[j, k, factor * h] for j, k, h in s["couplings"]]
        for q in s.get("qubits", ()):
            for key in ("energy", "coupling", "loss", "dephasing"):
                if key in q:
                    q[key] = factor * q[key]
        if "drive_amplitude" not in s:
            s["drive_amplitude"] = factor
        sweep = tuple(
            replace(a, values=tuple(factor * v for v in a.values)) if a.parameter in ENERGY_PARAMETERS else a
            for a in self.sweep
        )
        return replace(self, system=s, sweep=sweep, trajectories=self.trajectories.scaled_time(factor))

    def with_overrides(self, *, solver=None, n_max=None, seed=None, workers=None, output=None):
        """Copy with command-line overrides applied (``None`` keeps the value)."""
        cfg = self
        if solver is not None:
            cfg = replace(cfg, solver=solver)
        if n_max is not None:
            cfg = replace(cfg, n_max=int(n_max))
        if seed is not None:
            cfg = replace(cfg, trajectories=replace(cfg.trajectories, seed=int(seed)))
        if workers is not None:
            cfg = replace(cfg, workers=int(workers))
        if output is not None:
            cfg = replace(cfg, output=str(output))
        cfg.validate()
        return cfg

    def validate(self):
        """Semantic checks beyond the JSON schema.

        Raises
        ------
        ConfigError
            Bad mode references, non-finite sweep values, or a master-equation
            solve predicted to exceed ``memory_ceiling_mb``.
        """
        m = self.num_modes
        s = self.system
        if "drive_pattern" in s and len(s["drive_pattern"]) != m:
            raise ConfigError(f"system.drive_pattern: expected {m} entries, got {len(s['drive_pattern'])}")
        for i, axis in enumerate(self.sweep):
            where = f"sweep[{i}]"
            if not all(math.isfinite(v) for v in axis.values):
                raise ConfigError(f"{where}.values: sweep values must be finite")
            if axis.parameter in ("drive_phase", "drive_scale", "energy"):
                if axis.mode is None:
                    raise ConfigError(f"{where}: parameter {axis.parameter!r} requires 'mode'")
                if not 0 <= axis.mode < m:
                    raise ConfigError(f"{where}.mode: mode {axis.mode} does not exist (system has {m})")
            if axis.parameter.startswith("qubit_"):
                if self.num_qubits == 0:
                    raise ConfigError(f"{where}: parameter {axis.parameter!r} needs qubits in the system")
                if axis.qubit is not None and not 0 <= axis.qubit < self.num_qubits:
                    raise ConfigError(f"{where}.qubit: qubit {axis.qubit} does not exist")
        columns = [a.column for a in self.sweep]
        if len(set(columns)) != len(columns):
            raise ConfigError("sweep: the same parameter is swept twice")
        for i, (a, b) in enumerate(self.bipartite):
            if a == b or not (0 <= a < m and 0 <= b < m):
                raise ConfigError(f"witnesses.bipartite[{i}]: need two distinct existing modes, got {[a, b]}")
        for i, req in enumerate(self.quadripartite):
            if len(set(req.slots)) != 4 or not all(0 <= x < m for x in req.slots):
                raise ConfigError(f"witnesses.quadripartite[{i}].slots: need four distinct existing modes")
        names = [r.name for r in self.quadripartite]
        if len(set(names)) != len(names):
            raise ConfigError("witnesses.quadripartite: labels must be unique")
        if self.solver not in ("master", "wfmc", "both", "auto"):
            raise ConfigError(f"solver: unknown solver {self.solver!r}")
        if self.n_max < 1:
            raise ConfigError("n_max: must be >= 1")
        if "master" in self.solvers():
            need = master.memory_estimate(self.dimension()) / 2**20
            if need > self.memory_ceiling_mb:
                raise ConfigError(
                    f"solver: master equation needs ~{need:.0f} MB at dimension {self.dimension()}, "
                    f"above memory_ceiling_mb={self.memory_ceiling_mb:g}; use solver 'wfmc' or lower n_max"
                )
        try:
            self.spec_at(self.points()[0])
        except (ValueError, TypeError, IndexError) as exc:
            raise ConfigError(f"system: {exc}") from exc
        return self

    def to_dict(self):
        """JSON-serialisable description of the resolved configuration."""
        return dict(
            name=self.name,
            system=self.system,
            sweep=[dict(parameter=a.parameter, values=list(a.values),
                        **({"mode": a.mode} if a.mode is not None else {}),
                        **({"qubit": a.qubit} if a.qubit is not None else {})) for a in self.sweep],
            solver=self.solver,
            n_max=self.n_max,
            truncation=self.truncation,
            convergence=dict(rel_tol=self.rel_tol),
            witnesses=dict(bipartite=[list(p) for p in self.bipartite],
                           quadripartite=[dict(label=r.name, slots=list(r.slots), topology=r.topology)
                                          for r in self.quadripartite]),
            wfmc={k: v for k, v in dataclasses.asdict(self.trajectories).items() if v is not None},
            workers=self.workers,
            memory_ceiling_mb=self.memory_ceiling_mb,
            **({"output": self.output} if self.output else {}),
        )


def _error_path(error):
    path = "".join(f"[{p}]" if isinstance(p, int) else f".{p}" for p in error.absolute_path)
    return path.lstrip(".") or "<root>"


def parse_config(document):
    """Validate a parsed JSON document and build an :class:`ExperimentConfig`.

    Raises
    ------
    ConfigError
        Schema violations (message names the offending path) or semantic errors.
    """
    validator = jsonschema.Draft202012Validator(config_schema())
    error = jsonschema.exceptions.best_match(validator.iter_errors(document))
    if error is not None:
        # descend into anyOf/oneOf alternatives to the most specific failure
        while error.context:
            error = jsonschema.exceptions.best_match(error.context)
        raise ConfigError(f"{_error_path(error)}: {error.message}")

    axes = document.get("sweep", [])
    if isinstance(axes, dict):
        axes = [axes]
    sweep = tuple(SweepAxis(a["parameter"], tuple(float(v) for v in a["values"]), a.get("mode"), a.get("qubit"))
                  for a in axes)
    witnesses = document.get("witnesses", {})
    quads = tuple(QuadripartiteRequest(tuple(q["slots"]), q.get("topology", "ring"), q.get("label", ""))
                  for q in witnesses.get("quadripartite", ()))
    traj = wfmc.TrajectoryConfig(**document.get("wfmc", {}))
    cfg = ExperimentConfig(
        system=json.loads(json.dumps(document["system"])),
        sweep=sweep,
        solver=document.get("solver", "auto"),
        n_max=document.get("n_max", 8),
        truncation=document.get("truncation", "capped-total"),
        rel_tol=document.get("convergence", {}).get("rel_tol", 1e-3),
        bipartite=tuple(tuple(p) for p in witnesses.get("bipartite", ())),
        quadripartite=quads,
        trajectories=traj,
        output=document.get("output"),
        workers=document.get("workers", 1),
        memory_ceiling_mb=document.get("memory_ceiling_mb", 4096.0),
        name=document.get("name", ""),
        source=document,
    )
    return cfg.validate()


def load_config(path):
    """Read and validate a JSON experiment file (or a bundled recipe name).

    Raises
    ------
    ConfigError
        Unreadable file, malformed JSON, or schema/semantic violations.
    """
    p = Path(path)
    if not p.exists():
        if str(path).removesuffix(".json") not in recipe_names():
            raise ConfigError(f"config file {path!r} not found")
        p = recipe_path(str(path))
    try:
        document = json.loads(p.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read {p}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: malformed JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    return parse_config(document)


# --- solving one point ---------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SolverResult:
    """Observables from one solver at one sweep point.

    Standard errors are zero for the master equation.
    """

    solver: str
    n_max: int
    dim: int
    occupations: np.ndarray
    occupation_se: np.ndarray
    bipartite: dict
    bipartite_se: dict
    quadripartite: dict
    quadripartite_se: dict
    seed: int | None = None
    info: dict = field(default_factory=dict)

    def observables(self):
        """Flat ``{name: (value, standard error)}`` used by the checks."""
        out = {f"n{j}": (float(v), float(e)) for j, (v, e) in enumerate(zip(self.occupations, self.occupation_se))}
        for (a, b), res in self.bipartite.items():
            out[f"S_{a}_{b}"] = (res.value, self.bipartite_se[(a, b)])
        for name, res in self.quadripartite.items():
            out[f"I_{name}"] = (res.value, self.quadripartite_se[name])
        return out


@dataclass(frozen=True, eq=False)
class SweepRow:
    """Result of one sweep point."""

    index: int
    point: dict
    drives: tuple
    status: str
    results: dict = field(default_factory=dict)
    error: str = ""

    @property
    def ok(self):
        return self.status == "ok"


def _row_seed(config, index):
    return int(config.trajectories.seed) + int(index)


def _evaluate(table, config, solver):
    stochastic = table.replicas is not None
    occupation_se = table.occupation_errors()
    bip, bip_se = {}, {}
    for a, b in config.bipartite:
        bip[(a, b)] = bipartite_S_optimized(table, a, b)
        bip_se[(a, b)] = jackknife_error(
            table, lambda t, a=a, b=b: bipartite_S_optimized(t, a, b, cross_check=False).value) if stochastic else 0.0
    quad, quad_se = {}, {}
    for req in config.quadripartite:
        res = quadripartite_optimized(table, req.slots, req.optimizer_topology)
        quad[req.name] = res
        if stochastic:
            pos = [table.position(s) for s in req.slots]
            ph = res.phases[pos]
            quad_se[req.name] = jackknife_error(
                table, lambda t, r=req, ph=ph: quadripartite_optimized(t, r.slots, r.optimizer_topology,
                                                                      phases=ph).value)
        else:
            quad_se[req.name] = 0.0
    return bip, bip_se, quad, quad_se, occupation_se


def solve_spec(spec, config, solver, n_max=None, seed=None):
    """Run one solver on ``spec`` and evaluate the configured witnesses."""
    n_max = config.n_max if n_max is None else n_max
    modes = config.witness_modes
    if solver == "master":
        basis = build_basis(spec, n_max, config.truncation)
        rho = master.steady_state(build_hamiltonian(spec, basis), build_channels(spec, basis))
        table = master.density_moments(rho, basis, modes)
        info = dict(method=rho.info["method"], residual=rho.info["residual"])
        dim = basis.dim
    elif solver == "wfmc":
        ops = wfmc.prepare(spec, n_max, modes, config.truncation)
        traj = config.trajectories if seed is None else replace(config.trajectories, seed=seed)
        traj = traj.resolve(spec, n_max)
        table = wfmc.run_ensemble(ops, traj)
        info = dict(dt=traj.dt, burn_in=traj.burn_in, average_window=traj.average_window,
                    num_trajectories=traj.num_trajectories, sample_every=traj.sample_every)
        dim = ops.dim
    else:
        raise ValueError(f"unknown solver {solver!r}")
    bip, bip_se, quad, quad_se, occ_se = _evaluate(table, config, solver)
    return SolverResult(solver, n_max, dim, np.asarray(table.occupations, dtype=float), np.asarray(occ_se, dtype=float),
                        bip, bip_se, quad, quad_se, seed if solver == "wfmc" else None, info)


def solve_point(config, index, point):
    """Solve one sweep point with every configured solver.

    Solver failures are caught and reported in the returned row (status
    ``"failed"``) so that a sweep never aborts half-way.
    """
    try:
        spec = config.spec_at(point)
    except (ValueError, TypeError) as exc:
        return SweepRow(index, dict(point), (), "failed", error=f"{type(exc).__name__}: {exc}")
    results = {}
    try:
        for solver in config.solvers():
            results[solver] = solve_spec(spec, config, solver, seed=_row_seed(config, index))
    except Exception as exc:  # noqa: BLE001 - any solver failure marks the row
        logger.warning("sweep point %d failed: %s", index, exc)
        return SweepRow(index, dict(point), spec.drives, "failed", error=f"{type(exc).__name__}: {exc}")
    return SweepRow(index, dict(point), spec.drives, "ok", results)


def _solve_args(args):
    return solve_point(*args)


# --- CSV -------------------------------------------------------------------------------


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def csv_columns(config):
    """Header of the CSV written by :func:`run_experiment`."""
    cols = ["index"] + [a.column for a in config.sweep] + ["status", "error", "n_max"]
    for j in range(config.num_modes):
        cols += [f"drive{j}_re", f"drive{j}_im"]
    solvers = config.solvers()
    for s in solvers:
        cols += [f"{s}_dim", f"{s}_seed"]
        for j in range(config.num_modes):
            cols += [f"{s}_n{j}", f"{s}_n{j}_se"]
        for a, b in config.bipartite:
            cols += [f"{s}_S_{a}_{b}", f"{s}_S_{a}_{b}_se", f"{s}_S_{a}_{b}_phase"]
        for req in config.quadripartite:
            p = f"{s}_I_{req.name}"
            cols += [p, f"{p}_se", f"{p}_Ia", f"{p}_Ib", f"{p}_Ic"]
            cols += [f"{p}_g{i}" for i in range(4)] + [f"{p}_phi{i}" for i in range(4)]
            cols += [f"{p}_closed_form", f"{p}_numeric"]
    if len(solvers) == 2:
        for j in range(config.num_modes):
            cols.append(f"diff_n{j}")
        cols += [f"diff_S_{a}_{b}" for a, b in config.bipartite]
        cols += [f"diff_I_{req.name}" for req in config.quadripartite]
    return cols


def _row_values(config, row):
    out = {"index": row.index, "status": row.status, "error": row.error,
           "n_max": config.n_max}
    for a in config.sweep:
        out[a.column] = row.point.get(a.column)
    for j, f in enumerate(row.drives):
        out[f"drive{j}_re"], out[f"drive{j}_im"] = f.real, f.imag
    for s, res in row.results.items():
        out[f"{s}_dim"] = res.dim
        out[f"{s}_seed"] = res.seed
        for j, (v, e) in enumerate(zip(res.occupations, res.occupation_se)):
            out[f"{s}_n{j}"], out[f"{s}_n{j}_se"] = v, e
        for (a, b), w in res.bipartite.items():
            i = config.witness_modes.index(a)
            out[f"{s}_S_{a}_{b}"] = w.value
            out[f"{s}_S_{a}_{b}_se"] = res.bipartite_se[(a, b)]
            out[f"{s}_S_{a}_{b}_phase"] = float(w.phases[i])
        for name, w in res.quadripartite.items():
            p = f"{s}_I_{name}"
            req = next(r for r in config.quadripartite if r.name == name)
            pos = [config.witness_modes.index(m) for m in req.slots]
            out[p], out[f"{p}_se"] = w.value, res.quadripartite_se[name]
            out[f"{p}_Ia"], out[f"{p}_Ib"], out[f"{p}_Ic"] = (w.components[k] for k in ("I_a", "I_b", "I_c"))
            for i in range(4):
                out[f"{p}_g{i}"] = w.g[i]
                out[f"{p}_phi{i}"] = w.phases[pos[i]]
            out[f"{p}_closed_form"] = w.info["closed_form_value"]
            out[f"{p}_numeric"] = w.info["numeric_value"]
    if row.ok and len(row.results) == 2:
        m, w = row.results["master"], row.results["wfmc"]
        for j in range(config.num_modes):
            out[f"diff_n{j}"] = m.occupations[j] - w.occupations[j]
        for pair in config.bipartite:
            out[f"diff_S_{pair[0]}_{pair[1]}"] = m.bipartite[pair].value - w.bipartite[pair].value
        for req in config.quadripartite:
            out[f"diff_I_{req.name}"] = m.quadripartite[req.name].value - w.quadripartite[req.name].value
    return out


def write_csv(config, rows, path):
    """Write ``rows`` as UTF-8 CSV with LF line endings."""
    cols = csv_columns(config)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(cols)
    for row in rows:
        values = _row_values(config, row)
        writer.writerow([values[c] if isinstance(values.get(c), str) else _fmt(values.get(c)) for c in cols])
    Path(path).write_bytes(buf.getvalue().encode("utf-8"))


def _sidecar(config, rows):
    from . import __version__

    return dict(
        package="cavityarrays",
        version=__version__,
        config=config.to_dict(),
        solvers=list(config.solvers()),
        dimension=config.dimension(),
        witness_modes=list(config.witness_modes),
        seed_rule="wfmc seed of row i = wfmc.seed + i",
        columns=csv_columns(config),
        rows=[
            dict(index=r.index, point=r.point, status=r.status, error=r.error,
                 seeds={s: res.seed for s, res in r.results.items() if res.seed is not None},
                 solver_info={s: {k: (float(v) if isinstance(v, (float, np.floating)) else v)
                                  for k, v in res.info.items()} for s, res in r.results.items()})
            for r in rows
        ],
    )


def run_experiment(config, out=None, *, progress=None):
    """Solve every sweep point; write CSV and ``<csv>.meta.json`` when a path is given.

    Points run concurrently on ``config.workers`` processes; rows always come
    back (and are written) in sweep order.
    """
    points = config.points()
    jobs = [(config, i, p) for i, p in enumerate(points)]
    if config.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            rows = []
            for row in pool.map(_solve_args, jobs):
                rows.append(row)
                if progress is not None:
                    progress(row)
    else:
        rows = []
        for job in jobs:
            row = _solve_args(job)
            rows.append(row)
            if progress is not None:
                progress(row)
    out = out if out is not None else config.output
    if out:
        write_csv(config, rows, out)
        meta = json.dumps(_sidecar(config, rows), indent=2, sort_keys=True, default=str) + "\n"
        Path(str(out) + ".meta.json").write_bytes(meta.encode("utf-8"))
    return rows


# --- checks --------------------------------------------------------------------------


@dataclass(frozen=True)
class ConvergenceReport:
    """Observables at ``n_max`` and ``n_max + 1``.

    ``entries`` maps observable name to ``(value_n, value_n1, relative change,
    passed)``.
    """

    n_max: int
    solver: str
    rel_tol: float
    entries: dict
    passed: bool
    point: dict = field(default_factory=dict)

    def summary(self):
        worst = max((e[2] for e in self.entries.values()), default=0.0)
        verdict = "converged" if self.passed else "NOT converged"
        return f"n_max={self.n_max} ({self.solver}): {verdict}, largest relative change {worst:.3e}"


def _relative(a, b, atol=1e-12):
    return abs(a - b) / max(abs(b), atol)


def check_convergence(spec, n_max, *, bipartite=(), quadripartite=(), rel_tol=1e-3, solver="auto",
                      trajectories=None, truncation="capped-total"):
    """Compare occupations and witnesses at ``n_max`` and ``n_max + 1``.

    The check passes iff every observable changes by less than ``rel_tol``
    relative to its ``n_max + 1`` value. With Monte Carlo results the change
    also passes when it lies within four combined standard errors, since
    sampling noise then dominates the truncation error.
    """
    if n_max < 2:
        raise ValueError("n_max must be >= 2")
    cfg = ExperimentConfig(
        system={"energies": list(spec.energies), "loss": spec.loss}, bipartite=tuple(bipartite),
        quadripartite=tuple(quadripartite), truncation=truncation, n_max=n_max,
        trajectories=trajectories or wfmc.TrajectoryConfig(),
    )
    if solver == "auto":
        dim = basis_dimension(spec.num_modes, spec.num_qubits, n_max + 1, truncation)
        solver = "master" if dim <= AUTO_MASTER_LIMIT else "wfmc"
    low = solve_spec(spec, cfg, solver, n_max, seed=cfg.trajectories.seed).observables()
    high = solve_spec(spec, cfg, solver, n_max + 1, seed=cfg.trajectories.seed).observables()
    entries = {}
    for name, (v0, e0) in low.items():
        v1, e1 = high[name]
        rel = _relative(v0, v1)
        ok = rel < rel_tol or (solver == "wfmc" and abs(v0 - v1) <= 4 * math.hypot(e0, e1))
        entries[name] = (v0, v1, rel, bool(ok))
    return ConvergenceReport(n_max, solver, rel_tol, entries, all(e[3] for e in entries.values()))


def check_config_convergence(config):
    """:func:`check_convergence` at every sweep point of ``config``."""
    reports = []
    for point in config.points():
        rep = check_convergence(config.spec_at(point), config.n_max, bipartite=config.bipartite,
                                quadripartite=config.quadripartite, rel_tol=config.rel_tol,
                                solver="master" if config.solver == "both" else config.solver,
                                trajectories=config.trajectories, truncation=config.truncation)
        reports.append(replace(rep, point=point))
    return reports


@dataclass(frozen=True)
class RescalingReport:
    """Comparison of an experiment with its energy-rescaled copy."""

    factor: float
    passed: bool
    max_deviation: float
    entries: list

    def summary(self):
        verdict = "invariant" if self.passed else "NOT invariant"
        return f"lambda={self.factor:g}: {verdict}, largest deviation {self.max_deviation:.3e}"


def rescaling_check(config, factor, *, tol=1e-6, rows=None):
    """Run ``config`` and its copy with energies x ``factor`` (times / ``factor``).

    Dimensionless outputs (occupations, witnesses) must agree within ``tol``
    (absolute, master equation) or four combined standard errors (WFMC).
    ``rows`` may pass precomputed unscaled rows.
    """
    if not factor > 0:
        raise ValueError("factor must be > 0")
    base = rows if rows is not None else run_experiment(replace(config, output=None))
    scaled = run_experiment(replace(config.scaled(factor), output=None))
    entries = []
    passed = True
    worst = 0.0
    for r0, r1 in zip(base, scaled):
        if not (r0.ok and r1.ok):
            passed = False
            entries.append((r0.index, "status", r0.status, r1.status, math.inf, False))
            continue
        for solver, res0 in r0.results.items():
            obs1 = r1.results[solver].observables()
            for name, (v0, e0) in res0.observables().items():
                v1, e1 = obs1[name]
                dev = abs(v0 - v1)
                bound = tol if solver == "master" else max(tol, 4 * math.hypot(e0, e1))
                ok = dev <= bound
                worst = max(worst, dev)
                passed &= ok
                entries.append((r0.index, f"{solver}:{name}", v0, v1, dev, ok))
    return RescalingReport(float(factor), bool(passed), worst, entries)
