"""Run configuration: INI-style text files parsed into a validated RunConfig.

Format: `[section]` headers, `key = value` lines, `#` comments.  Values are
whitespace-separated tokens.  `gauge`, `region`, and `times` may repeat /
hold lists.  Unknown sections or keys are rejected with their line number.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import equations as eqs
from .adjoint import FunctionalSpec, TimeWindow
from .amr import RefinementRegion
from .solver import LIMITERS, BoundarySpec


class ConfigError(ValueError):
    """Malformed or invalid configuration; message names the line."""


EQUATION_NAMES = ("acoustics-1d", "acoustics-2d", "swe-linear-2d")
STRATEGY_NAMES = ("adjoint", "difference", "surface", "everywhere")

_KNOWN_KEYS = {
    "problem": {"equation", "xlim", "ylim", "nx", "ny", "t0", "t_final"},
    "material": {"bulk", "density", "bathymetry", "sea_level", "gravity"},
    "initial": {"profile"},
    "boundary": {"left", "right", "bottom", "top"},
    "solver": {"courant", "limiter", "dt_fixed", "dt_max"},
    "amr": {"max_levels", "ratios", "strategy", "tolerance",
            "tolerance_adjoint", "tolerance_difference", "tolerance_surface",
            "regrid_interval", "buffer_cells", "efficiency", "max_patch_edge",
            "region"},
    "functional": {"shape", "component", "weight", "t_start", "adjoint_nx",
                   "adjoint_ny", "snapshot_dt"},
    "output": {"num_frames", "times", "gauge"},
}


@dataclass
class GaugeSpec:
    gauge_id: int
    location: tuple[float, ...]


@dataclass
class RunConfig:
    equation: str
    xlim: tuple[float, float]
    ylim: tuple[float, float] | None
    nx: int
    ny: int | None
    t0: float
    t_final: float
    material: dict
    initial: tuple                      # (profile name, params...)
    boundary: BoundarySpec
    courant: float = 0.9
    limiter: str = "MC"
    dt_fixed: float | None = None
    dt_max: float = np.inf
    max_levels: int = 1
    ratios: tuple[int, ...] = ()
    strategy: str = "difference"
    tolerance: float = 0.1
    tolerances: dict = field(default_factory=dict)   # per-strategy overrides
    regrid_interval: int = 1
    buffer_cells: int = 3
    efficiency: float = 0.7
    max_patch_edge: int = 60
    regions: tuple[RefinementRegion, ...] = ()
    functional: FunctionalSpec | None = None
    t_start: float | None = None
    adjoint_shape: tuple[int, ...] | None = None
    snapshot_dt: float | None = None
    output_times: tuple[float, ...] = ()
    gauges: tuple[GaugeSpec, ...] = ()

    @property
    def ndim(self) -> int:
        return 1 if self.equation == "acoustics-1d" else 2

    @property
    def num_components(self) -> int:
        return 2 if self.equation == "acoustics-1d" else 3

    @property
    def base_shape(self) -> tuple[int, ...]:
        return (self.nx,) if self.ndim == 1 else (self.nx, self.ny)

    def window(self) -> TimeWindow:
        ts = self.t_final if self.t_start is None else self.t_start
        return TimeWindow(t_start=ts, t_final=self.t_final)


def _tokenize(text: str):
    """Yield (lineno, section, key, tokens) for every key = value line."""
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip().lower()
            if section not in _KNOWN_KEYS:
                raise ConfigError(f"line {lineno}: unknown section [{section}]")
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {raw!r}")
        if section is None:
            raise ConfigError(f"line {lineno}: key outside any section")
        key, val = line.split("=", 1)
        key = key.strip().lower()
        if key not in _KNOWN_KEYS[section]:
            raise ConfigError(f"line {lineno}: unknown key {key!r} in [{section}]")
        yield lineno, section, key, val.split()


def _num(tok: str, lineno: int) -> float:
    try:
        return float(tok)
    except ValueError:
        raise ConfigError(f"line {lineno}: malformed number {tok!r}") from None


def _int(tok: str, lineno: int) -> int:
    try:
        return int(tok)
    except ValueError:
        raise ConfigError(f"line {lineno}: malformed integer {tok!r}") from None


def parse_config(text: str) -> RunConfig:
    """Parse and fully validate a configuration; raises ConfigError."""
    vals: dict[tuple[str, str], tuple[int, list[str]]] = {}
    regions = []
    gauges = []
    for lineno, section, key, toks in _tokenize(text):
        if (section, key) == ("amr", "region"):
            regions.append((lineno, toks))
        elif (section, key) == ("output", "gauge"):
            gauges.append((lineno, toks))
        else:
            vals[(section, key)] = (lineno, toks)

    def get(section, key, default=None, required=False):
        if (section, key) in vals:
            return vals[(section, key)]
        if required:
            raise ConfigError(f"missing required key {key!r} in [{section}]")
        return None, default

    ln, toks = get("problem", "equation", required=True)
    equation = toks[0]
    if equation not in EQUATION_NAMES:
        raise ConfigError(f"line {ln}: unknown equation {equation!r}")
    ndim = 1 if equation == "acoustics-1d" else 2

    ln, toks = get("problem", "xlim", required=True)
    xlim = (_num(toks[0], ln), _num(toks[1], ln))
    if xlim[1] <= xlim[0]:
        raise ConfigError(f"line {ln}: xlim must be increasing")
    ylim = None
    ny = None
    if ndim == 2:
        ln, toks = get("problem", "ylim", required=True)
        ylim = (_num(toks[0], ln), _num(toks[1], ln))
        if ylim[1] <= ylim[0]:
            raise ConfigError(f"line {ln}: ylim must be increasing")
        ln, toks = get("problem", "ny", required=True)
        ny = _int(toks[0], ln)
    ln, toks = get("problem", "nx", required=True)
    nx = _int(toks[0], ln)
    ln, toks = get("problem", "t0", default=["0"])
    t0 = _num(toks[0], ln or 0)
    ln, toks = get("problem", "t_final", required=True)
    t_final = _num(toks[0], ln)
    if t_final <= t0:
        raise ConfigError(f"line {ln}: t_final must exceed t0")

    material = _parse_material(equation, vals)
    initial = _parse_initial(vals)
    boundary = _parse_boundary(ndim, vals)

    ln, toks = get("solver", "courant", default=["0.9"])
    courant = _num(toks[0], ln or 0)
    if not (0 < courant <= 1):
        raise ConfigError(f"line {ln}: courant must be in (0, 1]")
    ln, toks = get("solver", "limiter", default=["MC"])
    limiter = toks[0]
    if limiter not in LIMITERS:
        raise ConfigError(f"line {ln}: unknown limiter {limiter!r}")
    ln, toks = get("solver", "dt_fixed", default=None)
    dt_fixed = None if toks is None else _num(toks[0], ln)
    ln, toks = get("solver", "dt_max", default=None)
    dt_max = np.inf if toks is None else _num(toks[0], ln)

    ln, toks = get("amr", "max_levels", default=["1"])
    max_levels = _int(toks[0], ln or 0)
    ln, toks = get("amr", "ratios", default=[])
    ratios = tuple(_int(t, ln) for t in toks)
    if max_levels > 1:
        if len(ratios) < max_levels - 1:
            raise ConfigError("ratios must list one entry per refined level")
        ratios = ratios[:max_levels - 1]
        if any(r < 2 for r in ratios):
            raise ConfigError(f"line {ln}: refinement ratios must be >= 2")
    else:
        ratios = ()
    ln, toks = get("amr", "strategy", default=["difference"])
    strategy = toks[0]
    if strategy not in STRATEGY_NAMES:
        raise ConfigError(f"line {ln}: unknown strategy {strategy!r}")
    ln, toks = get("amr", "tolerance", default=["0.1"])
    tolerance = _num(toks[0], ln or 0)
    if tolerance <= 0:
        raise ConfigError(f"line {ln}: tolerance must be positive")
    tolerances = {}
    for sname in ("adjoint", "difference", "surface"):
        ln2, toks = get("amr", f"tolerance_{sname}", default=None)
        if toks is not None:
            tolerances[sname] = _num(toks[0], ln2)
            if tolerances[sname] <= 0:
                raise ConfigError(f"line {ln2}: tolerance must be positive")
    ln, toks = get("amr", "regrid_interval", default=["1"])
    regrid_interval = _int(toks[0], ln or 0)
    ln, toks = get("amr", "buffer_cells", default=["3"])
    buffer_cells = _int(toks[0], ln or 0)
    ln, toks = get("amr", "efficiency", default=["0.7"])
    efficiency = _num(toks[0], ln or 0)
    ln, toks = get("amr", "max_patch_edge", default=["60"])
    max_patch_edge = _int(toks[0], ln or 0)

    region_objs = []
    for lineno, toks in regions:
        want = 6 + 2 * (ndim - 1)
        if len(toks) != want:
            raise ConfigError(f"line {lineno}: region needs {want} values")
        nums = [_num(t, lineno) for t in toks[2:]]
        region_objs.append(RefinementRegion(
            min_level=_int(toks[0], lineno), max_level=_int(toks[1], lineno),
            t1=nums[0], t2=nums[1], rect=tuple(nums[2:])))

    functional = None
    t_start = None
    adjoint_shape = None
    snapshot_dt = None
    if ("functional", "shape") in vals:
        ln, toks = vals[("functional", "shape")]
        kind = toks[0]
        nums = [_num(t, ln) for t in toks[1:]]
        if kind == "box":
            want = 2 * ndim
            if len(nums) != want:
                raise ConfigError(f"line {ln}: box needs {want} bounds")
        elif kind == "disk":
            if ndim == 1:
                raise ConfigError(f"line {ln}: disk functional needs a 2D problem")
            if len(nums) != 3:
                raise ConfigError(f"line {ln}: disk needs xc yc r")
        else:
            raise ConfigError(f"line {ln}: unknown functional shape {kind!r}")
        ln2, toks = get("functional", "component", default=["0"])
        comp = _int(toks[0], ln2 or 0)
        m = 2 if ndim == 1 else 3
        if not (0 <= comp < m):
            raise ConfigError(f"line {ln2}: component out of range")
        ln3, toks = get("functional", "weight", default=["1.0"])
        weight = _num(toks[0], ln3 or 0)
        weights = tuple(weight if k == comp else 0.0 for k in range(m))
        functional = FunctionalSpec(kind=kind, bounds=tuple(nums), weights=weights)
        ln4, toks = get("functional", "t_start", default=None)
        t_start = t_final if toks is None else _num(toks[0], ln4)
        if not (t0 <= t_start <= t_final):
            raise ConfigError(f"t_start must lie in [{t0}, {t_final}]")
        ln5, toks = get("functional", "adjoint_nx", default=None)
        anx = nx if toks is None else _int(toks[0], ln5)
        if ndim == 2:
            ln6, toks = get("functional", "adjoint_ny", default=None)
            any_ = ny if toks is None else _int(toks[0], ln6)
            adjoint_shape = (anx, any_)
        else:
            adjoint_shape = (anx,)
        ln7, toks = get("functional", "snapshot_dt", default=None)
        snapshot_dt = None if toks is None else _num(toks[0], ln7)
    elif strategy == "adjoint":
        raise ConfigError("adjoint strategy requires a [functional] section")

    ln, toks = get("output", "times", default=None)
    if toks is not None:
        output_times = tuple(_num(t, ln) for t in toks)
    else:
        ln, toks = get("output", "num_frames", default=None)
        if toks is None:
            output_times = (t0, t_final)
        else:
            nf = _int(toks[0], ln)
            output_times = tuple(np.linspace(t0, t_final, nf + 1))
    for t in output_times:
        if not (t0 - 1e-12 <= t <= t_final + 1e-12):
            raise ConfigError(f"output time {t} outside [{t0}, {t_final}]")

    gauge_objs = []
    for lineno, toks in gauges:
        want = 1 + ndim
        if len(toks) != want:
            raise ConfigError(f"line {lineno}: gauge needs id and {ndim} coordinates")
        gid = _int(toks[0], lineno)
        loc = tuple(_num(t, lineno) for t in toks[1:])
        if not (xlim[0] <= loc[0] <= xlim[1]):
            raise ConfigError(f"line {lineno}: gauge x={loc[0]} outside domain")
        if ndim == 2 and not (ylim[0] <= loc[1] <= ylim[1]):
            raise ConfigError(f"line {lineno}: gauge y={loc[1]} outside domain")
        gauge_objs.append(GaugeSpec(gauge_id=gid, location=loc))

    return RunConfig(
        equation=equation, xlim=xlim, ylim=ylim, nx=nx, ny=ny, t0=t0,
        t_final=t_final, material=material, initial=initial, boundary=boundary,
        courant=courant, limiter=limiter, dt_fixed=dt_fixed, dt_max=dt_max,
        max_levels=max_levels, ratios=ratios, strategy=strategy,
        tolerance=tolerance, tolerances=tolerances,
        regrid_interval=regrid_interval,
        buffer_cells=buffer_cells, efficiency=efficiency,
        max_patch_edge=max_patch_edge, regions=tuple(region_objs),
        functional=functional, t_start=t_start, adjoint_shape=adjoint_shape,
        snapshot_dt=snapshot_dt, output_times=output_times,
        gauges=tuple(gauge_objs),
    )


def _parse_material(equation: str, vals) -> dict:
    mat = {}
    if equation.startswith("acoustics"):
        for key, default in (("bulk", ["constant", "1.0"]),
                             ("density", ["constant", "1.0"])):
            ln, toks = vals.get(("material", key), (0, default))
            mat[key] = _piecewise_descriptor(toks, ln)
        for bad in ("bathymetry", "sea_level", "gravity"):
            if ("material", bad) in vals:
                ln, _ = vals[("material", bad)]
                raise ConfigError(f"line {ln}: {bad} is a shallow-water key")
    else:
        ln, toks = vals.get(("material", "bathymetry"), (0, None))
        if toks is None:
            raise ConfigError("shallow water needs a bathymetry definition")
        mat["bathymetry"] = _bathymetry_descriptor(toks, ln)
        ln, toks = vals.get(("material", "sea_level"), (0, ["0.0"]))
        mat["sea_level"] = _num(toks[0], ln)
        ln, toks = vals.get(("material", "gravity"), (0, ["9.81"]))
        mat["gravity"] = _num(toks[0], ln)
        if mat["gravity"] <= 0:
            raise ConfigError(f"line {ln}: gravity must be positive")
        for bad in ("bulk", "density"):
            if ("material", bad) in vals:
                ln, _ = vals[("material", bad)]
                raise ConfigError(f"line {ln}: {bad} is an acoustics key")
    return mat


def _piecewise_descriptor(toks, ln):
    kind = toks[0]
    if kind == "constant":
        v = _num(toks[1], ln)
        if v <= 0:
            raise ConfigError(f"line {ln}: material values must be positive")
        return ("constant", v)
    if kind in ("piecewise_x", "piecewise_y"):
        x0, a, b = (_num(t, ln) for t in toks[1:4])
        if a <= 0 or b <= 0:
            raise ConfigError(f"line {ln}: material values must be positive")
        return (kind, x0, a, b)
    raise ConfigError(f"line {ln}: unknown material primitive {kind!r}")


def _bathymetry_descriptor(toks, ln):
    kind = toks[0]
    nums = [_num(t, ln) for t in toks[1:]]
    if kind == "flat" and len(nums) == 1:
        return ("flat", *nums)
    if kind == "gaussian_island" and len(nums) == 5:
        return ("gaussian_island", *nums)     # base height xc yc radius
    if kind == "linear_ramp_x" and len(nums) == 4:
        return ("linear_ramp_x", *nums)       # x0 x1 B0 B1
    raise ConfigError(f"line {ln}: bad bathymetry primitive {' '.join(toks)!r}")


def _parse_initial(vals) -> tuple:
    ln, toks = vals.get(("initial", "profile"), (0, None))
    if toks is None:
        raise ConfigError("missing required key 'profile' in [initial]")
    kind = toks[0]
    if kind == "gaussian":
        return ("gaussian", *(_num(t, ln) for t in toks[1:]))
    if kind == "cosine_hump":
        if len(toks) != 6:
            raise ConfigError(f"line {ln}: cosine_hump needs amp x0 y0 r0 width")
        return ("cosine_hump", *(_num(t, ln) for t in toks[1:]))
    if kind == "standing_mode":
        return ("standing_mode", *(_int(t, ln) for t in toks[1:]))
    if kind == "table":
        if len(toks) != 2:
            raise ConfigError(f"line {ln}: table needs a path")
        return ("table", toks[1])
    raise ConfigError(f"line {ln}: unknown initial profile {kind!r}")


def _parse_boundary(ndim: int, vals) -> BoundarySpec:
    out = {}
    for side in ("left", "right", "bottom", "top"):
        ln, toks = vals.get(("boundary", side), (0, None))
        if toks is None:
            out[side] = "wall"
            continue
        if ndim == 1 and side in ("bottom", "top"):
            raise ConfigError(f"line {ln}: {side} boundary in a 1D problem")
        if toks[0] not in ("wall", "outflow"):
            raise ConfigError(f"line {ln}: unknown boundary condition {toks[0]!r}")
        out[side] = toks[0]
    return BoundarySpec(**out)


# ---------------------------------------------------------------------------
# Builders from the parsed descriptors


def _eval_piecewise(desc, x, y):
    kind = desc[0]
    x = np.asarray(x, dtype=float)
    if kind == "constant":
        return np.full_like(x, desc[1])
    if kind == "piecewise_x":
        return np.where(x < desc[1], desc[2], desc[3])
    coord = np.asarray(y, dtype=float)
    return np.where(coord < desc[1], desc[2], desc[3])


def build_equation(cfg: RunConfig) -> eqs.EquationSet:
    if cfg.equation == "acoustics-1d":
        model = eqs.AcousticsMaterialModel(
            lambda x: _eval_piecewise(cfg.material["bulk"], x, None),
            lambda x: _eval_piecewise(cfg.material["density"], x, None))
        return eqs.Acoustics1D(model)
    if cfg.equation == "acoustics-2d":
        model = eqs.AcousticsMaterialModel(
            lambda x, y: _eval_piecewise(cfg.material["bulk"], x, y),
            lambda x, y: _eval_piecewise(cfg.material["density"], x, y))
        return eqs.Acoustics2D(model)
    desc = cfg.material["bathymetry"]

    def bathy(x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if desc[0] == "flat":
            return np.full_like(x, desc[1])
        if desc[0] == "gaussian_island":
            _, base, height, xc, yc, radius = desc
            r2 = (x - xc) ** 2 + (y - yc) ** 2
            return base + height * np.exp(-r2 / radius ** 2)
        _, x0, x1, b0, b1 = desc
        w = np.clip((x - x0) / (x1 - x0), 0.0, 1.0)
        return b0 + w * (b1 - b0)

    model = eqs.SweMaterialModel(bathy, sea_level=cfg.material["sea_level"],
                                 gravity=cfg.material["gravity"])
    return eqs.SweLinear2D(model)


def build_initial(cfg: RunConfig):
    """State-initializer callable: ic(X[, Y]) -> (m, ...) array."""
    kind = cfg.initial[0]
    m = cfg.num_components

    if kind == "gaussian":
        if cfg.ndim == 1:
            amp, x0, beta = cfg.initial[1:]

            def ic(x, y=None):
                out = np.zeros((m, *np.shape(x)))
                out[0] = amp * np.exp(-beta * (np.asarray(x) - x0) ** 2)
                return out
        else:
            amp, x0, y0, beta = cfg.initial[1:]

            def ic(x, y):
                out = np.zeros((m, *np.shape(x)))
                r2 = (np.asarray(x) - x0) ** 2 + (np.asarray(y) - y0) ** 2
                out[0] = amp * np.exp(-beta * r2)
                return out
        return ic

    if kind == "cosine_hump":
        amp, x0, y0, r0, width = cfg.initial[1:]

        def ic(x, y):
            out = np.zeros((m, *np.shape(x)))
            r = np.sqrt((np.asarray(x) - x0) ** 2 + (np.asarray(y) - y0) ** 2)
            ring = np.abs(r - r0) <= width
            out[0] = np.where(ring, amp * (1.0 + np.cos(np.pi * (r - r0) / width)), 0.0)
            return out
        return ic

    if kind == "standing_mode":
        modes = cfg.initial[1:]
        Lx = cfg.xlim[1] - cfg.xlim[0]
        kx = modes[0] * np.pi / Lx
        if cfg.ndim == 1:
            def ic(x, y=None):
                out = np.zeros((m, *np.shape(x)))
                out[0] = np.cos(kx * (np.asarray(x) - cfg.xlim[0]))
                return out
        else:
            Ly = cfg.ylim[1] - cfg.ylim[0]
            ky = (modes[1] if len(modes) > 1 else modes[0]) * np.pi / Ly

            def ic(x, y):
                out = np.zeros((m, *np.shape(x)))
                out[0] = (np.cos(kx * (np.asarray(x) - cfg.xlim[0]))
                          * np.cos(ky * (np.asarray(y) - cfg.ylim[0])))
                return out
        return ic

    if kind == "table":
        from .runio import read_uniform_field
        table = read_uniform_field(cfg.initial[1])

        def ic(x, y=None):
            from .geometry import interpolate_uniform
            if y is None:
                return interpolate_uniform(table, np.asarray(x, float))
            return interpolate_uniform(table, np.asarray(x, float),
                                       np.asarray(y, float))
        return ic

    raise ConfigError(f"unknown initial profile {kind!r}")


def standing_mode_solution(cfg: RunConfig):
    """Exact solution of the wall-bounded standing mode, or None.

    Only available for constant-coefficient acoustics with the
    standing_mode initial profile; used by the convergence study.
    """
    if cfg.initial[0] != "standing_mode":
        return None
    if not cfg.equation.startswith("acoustics"):
        return None
    if cfg.material["bulk"][0] != "constant" or cfg.material["density"][0] != "constant":
        return None
    K = cfg.material["bulk"][1]
    rho = cfg.material["density"][1]
    c = np.sqrt(K / rho)
    modes = cfg.initial[1:]
    Lx = cfg.xlim[1] - cfg.xlim[0]
    kx = modes[0] * np.pi / Lx
    if cfg.ndim == 1:
        Z = rho * c

        def exact(x, t, y=None):
            out = np.zeros((2, *np.shape(x)))
            xs = np.asarray(x) - cfg.xlim[0]
            out[0] = np.cos(kx * xs) * np.cos(c * kx * t)
            out[1] = np.sin(kx * xs) * np.sin(c * kx * t) / Z
            return out
        return exact

    Ly = cfg.ylim[1] - cfg.ylim[0]
    ky = (modes[1] if len(modes) > 1 else modes[0]) * np.pi / Ly
    om = c * np.sqrt(kx ** 2 + ky ** 2)

    def exact(x, t, y=None):
        xs = np.asarray(x) - cfg.xlim[0]
        ys = np.asarray(y) - cfg.ylim[0]
        out = np.zeros((3, *np.shape(x)))
        out[0] = np.cos(kx * xs) * np.cos(ky * ys) * np.cos(om * t)
        out[1] = kx / (rho * om) * np.sin(kx * xs) * np.cos(ky * ys) * np.sin(om * t)
        out[2] = ky / (rho * om) * np.cos(kx * xs) * np.sin(ky * ys) * np.sin(om * t)
        return out
    return exact
