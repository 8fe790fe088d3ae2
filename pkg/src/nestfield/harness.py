"""Command-line entry point that runs the nestfield experiments.

Usage::

    nestfield <experiment> --config <path> [--out DIR] [--seed N] [--advective]
                           [--physics-placement fine|coarse]

Exit status is 0 on success, 1 when a property or run-time audit fails and 2
for configuration errors (including CFL rejection).
"""

from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Callable

import numpy as np

from .fields import Field, Space, dump_field, total_mass
from .mesh import HorizontalMesh, NestedMeshPair, Orography, VerticalGrid, build_nested_pair
from .physics import (
    SCHEMES as PHYSICS_SCHEMES,
    MappingLog,
    MoistState,
    PhysicsParams,
    apply_physics_coarse,
    apply_physics_fine,
    column_moist_mass,
    saturation,
)
from .remap import Remapper, build_weights
from .transport import (
    SCHEMES as FLUX_SCHEMES,
    CFLError,
    FluxOperatorConfig,
    TransportState,
    advance,
    advective_tracer_mass,
    tracer_mass,
)

EXPERIMENTS = ("transport", "transport-advective", "physics-fine", "physics-coarse", "properties")

MASS_TOL = 1e-12
NEG_TOL = 1e-13


class ConfigError(ValueError):
    """Invalid experiment configuration."""


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str = "transport"
    nx: int = 64
    ny: int = 64
    r: int = 2
    Nk: int = 1
    Lx: float = 64000.0
    Ly: float = 64000.0
    z_top: float = 10000.0
    dt: float = 4.0
    tau: float = 2000.0
    scheme: str = "upwind1"
    substeps: int = 1
    courant: float = 0.5
    wind: str = "deformational"
    advective: bool = False
    physics_placement: str = "fine"
    physics: str = "condensation"
    initial: str = "blob"
    calls: int = 100
    orography: str = "flat"
    trials: int = 20
    fault: str = "none"
    out: str = "out"
    seed: int = 0

    @property
    def steps(self) -> int:
        return int(round(self.tau / self.dt))

    def validate(self) -> "ExperimentConfig":
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        need(self.experiment in EXPERIMENTS, f"experiment must be one of {EXPERIMENTS}")
        need(self.nx >= 1 and self.ny >= 1 and self.Nk >= 1, "cell counts must be positive")
        need(self.r >= 2, "refinement factor r must be at least 2")
        need(self.nx % self.r == 0 and self.ny % self.r == 0, f"r={self.r} must divide nx and ny")
        need(self.Lx > 0 and self.Ly > 0 and self.z_top > 0, "domain extents must be positive")
        need(self.dt > 0, "dt must be positive")
        need(self.tau >= 0 and abs(self.tau / self.dt - self.steps) < 1e-9, "tau must be a multiple of dt")
        need(self.scheme in FLUX_SCHEMES, f"scheme must be one of {FLUX_SCHEMES}")
        need(self.substeps >= 1, "substeps must be positive")
        need(self.courant >= 0, "courant must be non-negative")
        need(self.wind in ("deformational", "zero"), "wind must be deformational or zero")
        need(self.physics_placement in ("fine", "coarse"), "physics_placement must be fine or coarse")
        need(self.physics in PHYSICS_SCHEMES, f"physics must be one of {tuple(PHYSICS_SCHEMES)}")
        need(self.initial in ("blob", "holes"), "initial must be blob or holes")
        need(self.calls >= 0 and self.trials >= 1, "calls and trials must be non-negative / positive")
        need(self.orography in ("flat", "bump", "hills"), "orography must be flat, bump or hills")
        need(self.fault in ("none", "restrict-density"), "fault must be none or restrict-density")
        if self.experiment.startswith("physics"):
            need(self.Nk >= 4, "physics demos need Nk >= 4")
        if self.experiment == "properties":
            need(self.Nk >= 2, "the property suite needs Nk >= 2")
        return self


EXPERIMENT_DEFAULTS = {
    "physics-fine": dict(nx=16, ny=16, Nk=6, Lx=16000.0, Ly=16000.0, z_top=6000.0),
    "physics-coarse": dict(nx=16, ny=16, Nk=6, Lx=16000.0, Ly=16000.0, z_top=6000.0),
    "properties": dict(nx=8, ny=8, Nk=3, Lx=8000.0, Ly=8000.0, z_top=3000.0),
}


def _convert(name: str, raw: str):
    kind = {f.name: f.type for f in fields(ExperimentConfig)}.get(name)
    if kind is None:
        raise ConfigError(f"unknown config key {name!r}")
    try:
        if kind == "bool":
            low = raw.strip().lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError:
        raise ConfigError(f"bad value for {name}: {raw!r}") from None
    return raw.strip()


def parse_config_text(text: str) -> dict:
    """Parse flat ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value")
        key, raw = (s.strip() for s in line.split("=", 1))
        values[key] = _convert(key, raw)
    return values


def load_config(experiment: str, path: str | None = None, **overrides) -> ExperimentConfig:
    """Defaults, then per-experiment defaults, then the file, then explicit overrides."""
    if experiment not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {experiment!r}; choose from {EXPERIMENTS}")
    values = dict(EXPERIMENT_DEFAULTS.get(experiment, {}))
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        values.update(parse_config_text(text))
    values.update({k: v for k, v in overrides.items() if v is not None})
    values["experiment"] = experiment
    if experiment == "transport-advective":
        values["advective"] = True
    if experiment.startswith("physics"):
        placement = overrides.get("physics_placement") or experiment.split("-", 1)[1]
        values["physics_placement"] = placement
        values["experiment"] = f"physics-{placement}"
    return ExperimentConfig(**values).validate()


# ---------------------------------------------------------------------------
# setup helpers

def build_pair(cfg: ExperimentConfig) -> NestedMeshPair:
    h = HorizontalMesh(cfg.nx, cfg.ny, cfg.Lx, cfg.Ly)
    v = VerticalGrid.uniform(cfg.Nk, cfg.z_top)
    if cfg.orography == "bump":
        oro = Orography.bump(h, (cfg.nx // 2 + 1, cfg.ny // 2 + 1), 0.3 * cfg.z_top / cfg.Nk)
    elif cfg.orography == "hills":
        oro = Orography.from_function(
            h, lambda x, y: 0.1 * cfg.z_top * np.sin(np.pi * x / cfg.Lx) ** 2 * np.sin(np.pi * y / cfg.Ly) ** 2)
    else:
        oro = None
    return build_nested_pair(h, v, cfg.r, oro)


def build_remapper(cfg: ExperimentConfig, pair: NestedMeshPair | None = None) -> Remapper:
    pair = pair if pair is not None else build_pair(cfg)
    weights = build_weights(pair)
    if cfg.fault == "restrict-density":
        weights = corrupt_density_weights(weights)
    return Remapper(pair, weights)


def corrupt_density_weights(weights):
    """Test hook: perturb the volume weights of the density restriction."""
    bad = {space: w * (1.0 + 1e-3 * np.cos(np.arange(w.size)).reshape(w.shape))
           for space, w in weights.density_restrict.items()}
    return replace(weights, density_restrict=bad)


def deformational_wind(mesh, amplitude: float, tau: float) -> Callable[[float], Field]:
    """Reversing deformational flow on the doubly-periodic plane; discretely non-divergent."""
    h = mesh.horizontal
    xv, yv = h.vertices()
    xc, yc = h.cell_centres()
    xe, ye = xv + h.dx, yc  # east faces
    xn, yn = xc, yv + h.dy  # north faces
    ux = np.sin(np.pi * xe / h.Lx) ** 2 * np.sin(2 * np.pi * ye / h.Ly)
    vy = -np.sin(np.pi * yn / h.Ly) ** 2 * np.sin(2 * np.pi * xn / h.Lx)
    shape = (mesh.nx, mesh.ny, mesh.Nk)

    def wind(t: float) -> Field:
        s = amplitude * np.cos(np.pi * t / tau) if tau > 0 else amplitude
        return Field.from_faces(mesh, np.broadcast_to((s * ux)[:, :, None], shape),
                                np.broadcast_to((s * vy)[:, :, None], shape), 0.0)

    return wind


def periodic_distance(x, y, xc, yc, Lx, Ly):
    dx = np.abs(x - xc)
    dy = np.abs(y - yc)
    return np.hypot(np.minimum(dx, Lx - dx), np.minimum(dy, Ly - dy))


def gaussian_hills(mesh, a0=0.5, at=1.0, radius=None) -> Field:
    h = mesh.horizontal
    radius = radius if radius is not None else h.Lx / 8
    x, y = h.cell_centres()
    a = np.full(x.shape, a0)
    for xc in (3 * h.Lx / 8, 5 * h.Lx / 8):
        a = a + at * np.exp(-(periodic_distance(x, y, xc, h.Ly / 2, h.Lx, h.Ly) / radius) ** 2)
    return Field(Space.VRHO, mesh, np.repeat(a[:, :, None], mesh.Nk, axis=2))


def banded_density(mesh, rho0=0.5, rhot=1.0) -> Field:
    h = mesh.horizontal
    _, y = h.cell_centres()
    rho = rho0 + (rhot - rho0) * np.sin(np.pi * y / h.Ly) ** 2
    return Field(Space.VRHO, mesh, np.repeat(rho[:, :, None], mesh.Nk, axis=2))


def _fmt(x) -> str:
    return x if isinstance(x, str) else f"{x:.17e}" if isinstance(x, float) else str(x)


def write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


# ---------------------------------------------------------------------------
# experiments

@dataclass
class RunResult:
    header: list[str]
    rows: list[list]
    audits: dict[str, bool]
    summary: dict[str, float]

    @property
    def passed(self) -> bool:
        return all(self.audits.values())


def run_transport(cfg: ExperimentConfig, out: Path | None = None) -> RunResult:
    """Gaussian hills carried by the reversing deformational flow, fine density driving coarse tracers."""
    pair = build_pair(cfg)
    remap = build_remapper(cfg, pair)
    fine = pair.fine
    amplitude = cfg.courant * min(fine.horizontal.dx, fine.horizontal.dy) / cfg.dt
    if cfg.wind == "zero":
        amplitude = 0.0
    wind = deformational_wind(fine, amplitude, cfg.tau)
    flux_cfg = FluxOperatorConfig(cfg.scheme, cfg.substeps)

    hills = gaussian_hills(pair.coarse)
    tracers = {"aY": hills, "const": Field.constant(Space.VRHO, pair.coarse, 0.5)}
    state = TransportState.initial(remap, banded_density(fine), tracers, cfg.dt,
                                   advective={"aY": hills} if cfg.advective else None)

    header = ["step", "t", "dry_mass", "mass_aY", "drift_aY", "min_aY", "max_aY", "const_err"]
    if cfg.advective:
        header += ["adv_mass_aY", "adv_drift_aY", "adv_min_aY", "adv_max_aY"]
    dry0 = total_mass(state.rho_d)
    m0 = tracer_mass(state)["aY"]
    adv0 = advective_tracer_mass(state, remap).get("aY")

    def row(step, s):
        a = s.tracers["aY"].values
        m = tracer_mass(s)["aY"]
        vals = [step, float(s.t), total_mass(s.rho_d), m, (m - m0) / m0, float(a.min()), float(a.max()),
                float(np.abs(s.tracers["const"].values - 0.5).max())]
        if cfg.advective:
            adv = s.advective["aY"].values
            ma = advective_tracer_mass(s, remap)["aY"]
            vals += [ma, (ma - adv0) / adv0, float(adv.min()), float(adv.max())]
        return vals

    dumps = {0: state}
    rows = [row(0, state)]
    for n in range(1, cfg.steps + 1):
        state = advance(state, remap, wind, flux_cfg)
        rows.append(row(n, state))
        if n in (cfg.steps // 2, cfg.steps):
            dumps[n] = state

    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        write_csv(out / f"{cfg.experiment}.csv", header, rows)
        for s in dumps.values():
            dump_field(s.tracers["aY"], out / f"{cfg.experiment}_{s.t:g}.txt")

    drift = np.array([r[4] for r in rows])
    dry = np.array([r[2] for r in rows])
    summary = {
        "max_tracer_drift": float(np.abs(drift).max()),
        "max_dry_drift": float(np.abs(dry - dry0).max() / dry0),
        "const_err": float(max(r[7] for r in rows)),
    }
    audits = {
        "tracer mass conserved": summary["max_tracer_drift"] <= MASS_TOL,
        "dry mass conserved": summary["max_dry_drift"] <= MASS_TOL,
        "constant preserved": summary["const_err"] <= MASS_TOL,
    }
    if cfg.advective:
        summary["final_advective_drift"] = float(abs(rows[-1][9]))
    return RunResult(header, rows, audits, summary)


def _physics_initial(cfg: ExperimentConfig, mesh, params: PhysicsParams, rng) -> MoistState:
    h = mesh.horizontal
    x, y = h.cell_centres()
    z = mesh.theta_heights()
    zc = 0.5 * (z[:, :, 1:] + z[:, :, :-1])
    rho = np.exp(-zc / 8000.0)
    theta = 300.0 + 0.003 * z
    msat = saturation(theta, z, params)
    if cfg.initial == "blob":
        blob = np.exp(-periodic_distance(x, y, h.Lx / 2, h.Ly / 2, h.Lx, h.Ly)[:, :, None] ** 2 / (0.2 * h.Lx) ** 2
                      - ((z - 0.3 * mesh.vertical.z_top) / (0.2 * mesh.vertical.z_top)) ** 2)
        mv, mcl = msat * (0.9 + 0.3 * blob), np.zeros_like(z)
    else:
        # subsaturated vapour and patchy cloud with holes inside every coarse cell
        mv = 0.5 * msat
        holes = rng.random(z.shape) < 0.5
        mcl = np.where(holes, 0.0, 2e-4 * rng.random(z.shape))
    return MoistState(Field(Space.VTHETA, mesh, theta),
                      {"m_v": Field(Space.VTHETA, mesh, mv), "m_cl": Field(Space.VTHETA, mesh, mcl)},
                      Field(Space.VRHO, mesh, rho))


def run_physics_demo(cfg: ExperimentConfig, out: Path | None = None) -> RunResult:
    """Repeated physics calls (no transport) with the physics on the fine or coarse mesh."""
    pair = build_pair(cfg)
    remap = build_remapper(cfg, pair)
    params = PhysicsParams(relax=0.5)
    rng = np.random.default_rng(cfg.seed)
    fine_placement = cfg.physics_placement == "fine"
    mesh = pair.coarse if fine_placement else pair.fine
    apply = apply_physics_fine if fine_placement else apply_physics_coarse
    scheme = PHYSICS_SCHEMES[cfg.physics]
    state = initial = _physics_initial(cfg, mesh, params, rng)
    log = MappingLog()

    header = ["call", "moist_mass", "min_m_v", "min_m_cl", "theta_mean", "theta_max",
              "lambda_triggers", "floored", "clipped"]

    def row(n, s):
        return [n, float(column_moist_mass(s).sum()), float(s.moisture["m_v"].values.min()),
                float(s.moisture["m_cl"].values.min()), float(s.theta.values.mean()),
                float(s.theta.values.max()), log.lambda_triggers, log.floored, log.clipped]

    rows = [row(0, state)]
    for n in range(1, cfg.calls + 1):
        state = apply(state, remap, scheme, params, log)
        rows.append(row(n, state))

    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        write_csv(out / f"{cfg.experiment}.csv", header, rows)
        for tag, s in (("0", initial), (str(cfg.calls), state)):
            dump_field(s.moisture["m_cl"], out / f"{cfg.experiment}_{tag}.txt")

    mass = np.array([r[1] for r in rows])
    change = max(float(np.abs(state.theta.values - initial.theta.values).max()),
                 *(float(np.abs(state.moisture[k].values - initial.moisture[k].values).max())
                   for k in state.moisture))
    summary = {
        "moist_mass_drift": float(np.abs(mass - mass[0]).max() / mass[0]),
        "min_moisture": float(min(min(r[2], r[3]) for r in rows)),
        "lambda_triggers": float(log.lambda_triggers),
        "floored": float(log.floored),
        "clipped": float(log.clipped),
        "max_change": change,
    }
    audits = {
        "moist mass conserved": summary["moist_mass_drift"] <= MASS_TOL,
        "no negative moisture": summary["min_moisture"] >= -NEG_TOL,
        "fields mapped out, increments back": log.respects_increment_rule(),
    }
    if cfg.physics == "identity":
        audits["steady state preserved"] = change <= 1e-13
    return RunResult(header, rows, audits, summary)


# ---------------------------------------------------------------------------
# CLI

def _print_result(result: RunResult) -> None:
    for key, value in result.summary.items():
        print(f"{key}: {value:.3e}")
    for name, ok in result.audits.items():
        print(f"{'PASS' if ok else 'FAIL'}  {name}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nestfield", description=__doc__.split("\n\n")[0])
    p.add_argument("experiment", choices=EXPERIMENTS)
    p.add_argument("--config", required=True, help="flat key=value configuration file")
    p.add_argument("--out", help="output directory (default from config)")
    p.add_argument("--seed", type=int)
    p.add_argument("--advective", action="store_true", default=None,
                   help="also step the advective-form baseline tracer")
    p.add_argument("--physics-placement", choices=("fine", "coarse"))
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.experiment, args.config, out=args.out, seed=args.seed,
                          advective=args.advective, physics_placement=args.physics_placement)
    except (ConfigError, TypeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    out = Path(cfg.out)
    try:
        if cfg.experiment == "properties":
            from .properties import run_properties

            report = run_properties(cfg, out)
            print(report.format())
            return 0 if report.passed else 1
        if cfg.experiment.startswith("transport"):
            result = run_transport(cfg, out)
        else:
            result = run_physics_demo(cfg, out)
    except CFLError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    _print_result(result)
    return 0 if result.passed else 1


if __name__ == "__main__":
    sys.exit(main())
