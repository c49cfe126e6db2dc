"""Width/seed/architecture grids of training runs.

Configs are flat text files of ``section.key = value`` lines; ``#`` starts a
comment. Widths may be integers or the symbols ``nL`` and ``n2L`` (resolved
against the dataset size and depth). Example::

    data.n = 16
    data.d = 8
    model.depth = 3
    grid.widths = nL, n2L
    grid.seeds = 0, 1, 2
    grid.arches = grelu
    train.lr = 1e-3
    train.iters = 5000
    train.target_loss = 1e-3
"""
from __future__ import annotations

import io
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields

from .data import gen_ackley
from .errors import DivergenceError, InputError
from .model import NetworkShape, ReluNetwork, init_network
from .train import TrainConfig, fmt, train

SWEEP_COLUMNS = ("arch", "m", "seed", "status", "iter", "loss", "grad_norm", "grad_tdiff",
                 "tau", "eta", "wall_ms", "hamming")
SYMBOLIC_WIDTHS = ("nL", "n2L")


def _split(value):
    return [v.strip() for v in value.split(",") if v.strip()]


def _bool(value):
    v = value.lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {value!r}")


def _lr(value):
    return "theoretical" if value == "theoretical" else float(value)


def _width(value):
    return value if value in SYMBOLIC_WIDTHS else int(value)


@dataclass
class SweepConfig:
    data_n: int = 16
    data_d: int = 8
    data_seed: int | None = None  # None: one dataset per grid seed
    model_depth: int = 3
    grid_widths: list = field(default_factory=list)
    grid_seeds: list = field(default_factory=list)
    grid_arches: list = field(default_factory=lambda: ["grelu"])
    train_lr: float | str = "theoretical"
    train_iters: int = 1000
    train_target_loss: float = 0.0
    train_log_every: int = 1
    train_deterministic: bool = True
    output_csv: str | None = None
    output_svg: str | None = None
    output_log_y: bool = True

    _PARSERS = {
        "data_n": int, "data_d": int, "data_seed": int, "model_depth": int,
        "grid_widths": lambda v: [_width(w) for w in _split(v)],
        "grid_seeds": lambda v: [int(s) for s in _split(v)],
        "grid_arches": _split,
        "train_lr": _lr, "train_iters": int, "train_target_loss": float,
        "train_log_every": int, "train_deterministic": _bool,
        "output_csv": str, "output_svg": str, "output_log_y": _bool,
    }

    def __post_init__(self):
        for a in self.grid_arches:
            if a not in ("grelu", "relu"):
                raise InputError(f"unknown architecture {a!r}")
        if self.data_n < 1 or self.data_d < 1 or self.model_depth < 1:
            raise InputError("data.n, data.d and model.depth must be >= 1")

    @classmethod
    def parse(cls, text: str) -> "SweepConfig":
        kwargs = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise InputError(f"config line {lineno}: expected 'section.key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            if key.count(".") != 1:
                raise InputError(f"config line {lineno}: key must look like section.key")
            name = key.replace(".", "_")
            if name not in cls._PARSERS:
                raise InputError(f"config line {lineno}: unknown key {key!r}")
            try:
                kwargs[name] = cls._PARSERS[name](value)
            except ValueError as exc:
                raise InputError(f"config line {lineno}: {exc}") from None
        return cls(**kwargs)

    def dump(self) -> str:
        lines = []
        for f in fields(self):
            val = getattr(self, f.name)
            if val is None:
                continue
            key = f.name.replace("_", ".", 1)
            if isinstance(val, list):
                text = ", ".join(str(v) for v in val)
            elif isinstance(val, bool):
                text = "true" if val else "false"
            elif isinstance(val, float):
                text = repr(val)
            else:
                text = str(val)
            lines.append(f"{key} = {text}")
        return "\n".join(lines) + "\n"

    def __eq__(self, other):
        return isinstance(other, SweepConfig) and all(
            getattr(self, f.name) == getattr(other, f.name) for f in fields(self))

    def resolve_width(self, w) -> int:
        n, L = self.data_n, self.model_depth
        if w == "nL":
            return n * L
        if w == "n2L":
            return n * n * L
        return int(w)

    def points(self) -> list:
        """Grid points ``(arch, m, seed)`` in output order."""
        pts = {(a, self.resolve_width(w), s)
               for a in self.grid_arches for w in self.grid_widths for s in self.grid_seeds}
        return sorted(pts)


def run_point(cfg: SweepConfig, arch: str, m: int, seed: int):
    """Train one grid point; returns ``(status, TrainLog)``."""
    ds = gen_ackley(cfg.data_n, cfg.data_d, seed if cfg.data_seed is None else cfg.data_seed)
    shape = NetworkShape(ds.d_x, ds.d_y, m, cfg.model_depth)
    net = init_network(shape, seed)
    if arch == "relu":
        net = ReluNetwork.from_grelu(net)
    tc = TrainConfig(eta=cfg.train_lr, max_iters=cfg.train_iters,
                     target_loss=cfg.train_target_loss, arch=arch, seed=seed,
                     log_every=cfg.train_log_every,
                     deterministic_reduction=cfg.train_deterministic)
    try:
        _, log = train(net, ds, tc)
    except DivergenceError as exc:
        return "diverged", exc.log
    return log.status, log


def _run(args):
    return run_point(*args)


def run_sweep(cfg: SweepConfig, jobs: int = 1):
    """Run every grid point; returns ``{(arch, m, seed): (status, log)}``."""
    pts = cfg.points()
    tasks = [(cfg, *p) for p in pts]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run, tasks))
    else:
        results = [_run(t) for t in tasks]
    return dict(zip(pts, results))


def sweep_csv(cfg: SweepConfig, results: dict) -> str:
    buf = io.StringIO()
    buf.write(",".join(SWEEP_COLUMNS) + "\n")
    for (arch, m, seed) in sorted(results):
        status, log = results[(arch, m, seed)]
        for r in log.rows:
            wall = 0.0 if cfg.train_deterministic else r.wall_ms
            ham = "" if r.hamming is None else fmt(r.hamming)
            buf.write(",".join([arch, str(m), str(seed), status, str(r.iter), fmt(r.loss),
                                fmt(r.grad_norm), fmt(r.grad_tdiff), fmt(r.tau), fmt(r.eta),
                                fmt(wall), ham]) + "\n")
    return buf.getvalue()


def sweep_svg(cfg: SweepConfig, results: dict) -> str:
    from .svg import line_chart

    series = {}
    for (arch, m, seed) in sorted(results):
        _, log = results[(arch, m, seed)]
        series[f"{arch} m={m} s={seed}"] = (log.column("iter"), log.losses)
    return line_chart(series, title="training loss", log_y=cfg.output_log_y)
