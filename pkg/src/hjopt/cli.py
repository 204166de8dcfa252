"""Command-line surface: configuration files, image/CSV/JSON I/O, verification.

Configuration is a single JSON file per run; every report embeds a hash of
the fully-resolved configuration so runs are reproducible.  Images are
binary portable graymaps (8- or 16-bit) mapped linearly to [0, 1].  Exit
codes: 0 success, 1 failed verification, 2 usage/configuration, 3 I/O,
4 solver.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .core import (
    ConvexPiece,
    DualTVBallIndicator,
    GridGraph,
    L1,
    Quadratic,
    Signal,
    WeightedTV,
    as_signal,
)
from .decompose import DECOMPOSE_MAX_ITER, DECOMPOSE_TOL, decompose
from .errors import (
    ConfigError,
    DimensionMismatchError,
    HJOptError,
    ParameterError,
)
from .minplus import ENUMERATION_CAP, minplus_solve, truncated_tv_enumerate
from .prox import TV_MAX_ITER, TV_TOL
from .verify import run_suite
from .viscous import MixturePrior, mixture_s_epsilon, s_epsilon

EXIT_OK = 0
EXIT_VERIFY_FAIL = 1
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_SOLVER = 4

MODELS = ("denoise", "truncated-tv", "gmm", "decompose", "posterior")


class ImageFormatError(HJOptError):
    """The image file is not a readable binary graymap."""


# ---------------------------------------------------------------------------
# configuration


@dataclass
class ModelConfig:
    """Typed view of one run configuration (resolved CLI overrides included)."""

    model: str
    raw: dict
    t: Optional[float] = None
    t1: Optional[float] = None
    t2: Optional[float] = None
    epsilon: Optional[float] = None
    f_base: str = "abs"
    threads: Optional[int] = None
    x: Optional[list] = None
    x_grid: Optional[np.ndarray] = None
    graph_spec: Optional[dict] = None
    pieces_spec: list = field(default_factory=list)
    solver: dict = field(default_factory=dict)

    def hash(self) -> str:
        canonical = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).hexdigest()


def _expect(mapping, key, types, path, required=False, default=None):
    if key not in mapping:
        if required:
            raise ConfigError(f"{path}.{key}", "required field is missing")
        return default
    value = mapping[key]
    if types is not None and not isinstance(value, types):
        raise ConfigError(f"{path}.{key}",
                          f"expected {types}, got {type(value).__name__}")
    return value


def _number(mapping, key, path, required=False, default=None):
    v = _expect(mapping, key, (int, float), path, required, default)
    if isinstance(v, bool):
        raise ConfigError(f"{path}.{key}", "expected a number, got a boolean")
    return None if v is None else float(v)


def parse_config(data: dict, path: str = "config") -> ModelConfig:
    """Validate a configuration mapping; errors carry the offending field."""
    if not isinstance(data, dict):
        raise ConfigError(path, "top level must be a JSON object")
    model = _expect(data, "model", str, path, required=True)
    if model not in MODELS:
        raise ConfigError(f"{path}.model",
                          f"unknown model {model!r}; choose from {MODELS}")
    cfg = ModelConfig(model=model, raw=data)
    cfg.t = _number(data, "t", path)
    cfg.t1 = _number(data, "t1", path)
    cfg.t2 = _number(data, "t2", path)
    cfg.epsilon = _number(data, "epsilon", path)
    cfg.f_base = _expect(data, "f_base", str, path, default="abs")
    if cfg.f_base not in ("abs", "square"):
        raise ConfigError(f"{path}.f_base", f"must be 'abs' or 'square', got {cfg.f_base!r}")
    threads = _expect(data, "threads", int, path)
    cfg.threads = threads
    x = _expect(data, "x", (list, int, float), path)
    if x is not None:
        cfg.x = [float(v) for v in (x if isinstance(x, list) else [x])]
    grid = _expect(data, "x_grid", dict, path)
    if grid is not None:
        start = _number(grid, "start", f"{path}.x_grid", required=True)
        stop = _number(grid, "stop", f"{path}.x_grid", required=True)
        count = _expect(grid, "count", int, f"{path}.x_grid", required=True)
        if count < 1:
            raise ConfigError(f"{path}.x_grid.count", "must be >= 1")
        cfg.x_grid = np.linspace(start, stop, count)
    cfg.graph_spec = _expect(data, "graph", dict, path)
    cfg.solver = _expect(data, "solver", dict, path, default={})

    pieces = _expect(data, "pieces", list, path, default=[])
    means = _expect(data, "means", list, path)
    sigmas = _expect(data, "sigmas", list, path)
    if (means is None) != (sigmas is None):
        raise ConfigError(f"{path}.means", "means and sigmas must come together")
    if means is not None:
        if len(means) != len(sigmas):
            raise ConfigError(f"{path}.sigmas",
                              f"{len(sigmas)} sigmas for {len(means)} means")
        pieces = pieces + [{"kind": "quadratic", "center": m, "scale": s}
                           for m, s in zip(means, sigmas)]
    cfg.pieces_spec = pieces
    return cfg


def load_config(path: str) -> ModelConfig:
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}", exc.msg)
    return parse_config(data, path)


def build_graph(cfg: ModelConfig, n: int, shape) -> GridGraph:
    spec = cfg.graph_spec
    if spec is None:
        if len(shape) == 2:
            return GridGraph.grid(shape[0], shape[1])
        return GridGraph.chain(n)
    path = "config.graph"
    if "edges" in spec:
        size = _expect(spec, "n", int, path, required=True)
        edges = _expect(spec, "edges", list, path, required=True)
        try:
            return GridGraph(size, tuple((int(e[0]), int(e[1]), float(e[2]))
                                         for e in edges))
        except (TypeError, IndexError):
            raise ConfigError(f"{path}.edges", "entries must be [i, j, weight]")
    rows = _expect(spec, "rows", int, path, required=True)
    cols = _expect(spec, "cols", int, path, required=True)
    weight = _number(spec, "weight", path, default=1.0)
    g = GridGraph.grid(rows, cols, weight)
    if g.n != n:
        raise ConfigError(f"{path}", f"graph has {g.n} nodes, signal has {n}")
    return g


def build_pieces(cfg: ModelConfig, n: int, shape) -> list[ConvexPiece]:
    pieces = []
    for k, spec in enumerate(cfg.pieces_spec):
        path = f"config.pieces[{k}]"
        if not isinstance(spec, dict):
            raise ConfigError(path, "each piece must be an object")
        kind = _expect(spec, "kind", str, path, required=True)
        if kind == "quadratic":
            center = _expect(spec, "center", (int, float, list), path, required=True)
            centers = np.broadcast_to(np.asarray(center, dtype=float), (n,))
            scale = _number(spec, "scale", path, default=1.0)
            pieces.append(Quadratic(Signal(centers, (n,)), scale))
        elif kind == "l1":
            pieces.append(L1(_number(spec, "weight", path, default=1.0)))
        elif kind == "weighted_tv":
            graph = build_graph(cfg, n, shape)
            truncated = _expect(spec, "truncated_edges", list, path, default=[])
            f_base = _expect(spec, "f_base", str, path, default=cfg.f_base)
            pieces.append(WeightedTV(graph, frozenset(int(i) for i in truncated),
                                     f_base))
        elif kind == "dual_tv_ball":
            graph = build_graph(cfg, n, shape)
            radius = _number(spec, "radius", path, default=1.0)
            pieces.append(DualTVBallIndicator(graph, radius))
        else:
            raise ConfigError(f"{path}.kind", f"unknown piece kind {kind!r}")
    if not pieces:
        raise ConfigError("config.pieces", "no pieces defined "
                          "(use pieces or means/sigmas)")
    return pieces


# ---------------------------------------------------------------------------
# image / table I/O


def read_pgm(path: str) -> Signal:
    """Read a binary (P5) graymap into a [0, 1]-valued signal."""
    with open(path, "rb") as fh:
        data = fh.read()

    tokens = []
    i = 0
    while len(tokens) < 4 and i < len(data):
        if data[i:i + 1].isspace():
            i += 1
        elif data[i:i + 1] == b"#":
            while i < len(data) and data[i:i + 1] != b"\n":
                i += 1
        else:
            j = i
            while j < len(data) and not data[j:j + 1].isspace():
                j += 1
            tokens.append(data[i:j])
            i = j
    if len(tokens) != 4 or tokens[0] != b"P5":
        raise ImageFormatError(f"{path}: not a binary graymap (P5)")
    try:
        cols, rows, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    except ValueError:
        raise ImageFormatError(f"{path}: malformed graymap header")
    if not (0 < maxval < 65536):
        raise ImageFormatError(f"{path}: maxval {maxval} out of range")
    i += 1  # single whitespace byte after maxval
    dtype = np.dtype(">u2") if maxval > 255 else np.uint8
    count = rows * cols
    raster = np.frombuffer(data, dtype=dtype, count=count, offset=i)
    if raster.size != count:
        raise ImageFormatError(f"{path}: truncated raster")
    values = raster.astype(float) / maxval
    return Signal(values, (rows, cols))


def write_pgm(path: str, image: np.ndarray, maxval: int = 255):
    """Write a [0, 1]-valued 2D array as a binary graymap (values clipped)."""
    image = np.atleast_2d(np.asarray(image, dtype=float))
    rows, cols = image.shape
    raster = np.rint(np.clip(image, 0.0, 1.0) * maxval)
    dtype = np.dtype(">u2") if maxval > 255 else np.uint8
    with open(path, "wb") as fh:
        fh.write(f"P5\n{cols} {rows}\n{maxval}\n".encode())
        fh.write(raster.astype(dtype).tobytes())


def write_csv(path: str, header: list[str], rows):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def write_report(path: str, payload: dict, cfg: ModelConfig):
    payload = dict(payload)
    payload["config_hash"] = cfg.hash()
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return payload


def _out(args, name):
    os.makedirs(args.output, exist_ok=True)
    return os.path.join(args.output, name)


# ---------------------------------------------------------------------------
# subcommands


def _load_or_default(args, model):
    if getattr(args, "config", None):
        cfg = load_config(args.config)
    else:
        cfg = ModelConfig(model=model, raw={"model": model})
    for name in ("t", "t1", "t2"):
        override = getattr(args, name, None)
        if override is not None:
            setattr(cfg, name, float(override))
            cfg.raw[name] = float(override)
    if getattr(args, "eps", None) is not None:
        cfg.epsilon = float(args.eps)
        cfg.raw["epsilon"] = float(args.eps)
    if getattr(args, "threads", None) is not None:
        cfg.threads = args.threads
        cfg.raw["threads"] = args.threads
    return cfg


def _input_signal(args, cfg: ModelConfig) -> tuple[Signal, bool]:
    if getattr(args, "input", None):
        return read_pgm(args.input), True
    if cfg.x is not None:
        return as_signal(cfg.x), False
    raise ConfigError("config.x", "no input image and no inline x vector")


def _solve_minplus(cfg: ModelConfig, x: Signal):
    if cfg.t is None:
        raise ConfigError("config.t", "required field is missing")
    solver = cfg.solver
    if cfg.model == "truncated-tv":
        graph = build_graph(cfg, x.n, x.shape)
        cap = int(solver.get("enumeration_cap", ENUMERATION_CAP))
        return truncated_tv_enumerate(graph, cfg.f_base, x, cfg.t, cap=cap,
                                      threads=cfg.threads)
    pieces = build_pieces(cfg, x.n, x.shape)
    return minplus_solve(pieces, x, cfg.t, threads=cfg.threads)


def _minplus_payload(cfg: ModelConfig, x: Signal, sol) -> dict:
    payload = {
        "model": cfg.model,
        "t": cfg.t,
        "value": sol.value,
        "active_set": list(sol.active_set),
        "iterations": int(sum(ev.iterations for ev in sol.per_piece)),
        "pieces": len(sol.per_piece),
    }
    if sol.labels is not None:
        payload["active_labels"] = [sorted(lab) for lab in sol.active_labels]
    if x.n <= 64:
        payload["minimizers"] = [list(m.values) for m in sol.minimizers]
        payload["per_piece_values"] = [ev.value for ev in sol.per_piece]
    return payload


def cmd_denoise(args) -> int:
    cfg = _load_or_default(args, "denoise")
    x, from_image = _input_signal(args, cfg)
    sol = _solve_minplus(cfg, x)
    payload = _minplus_payload(cfg, x, sol)
    if from_image:
        write_pgm(_out(args, "denoised.pgm"),
                  sol.minimizers[0].values.reshape(x.shape))
        payload["output_image"] = "denoised.pgm"
    write_report(_out(args, "report.json"), payload, cfg)
    return EXIT_OK


def cmd_minplus(args) -> int:
    cfg = _load_or_default(args, "denoise")
    x, _ = _input_signal(args, cfg)
    sol = _solve_minplus(cfg, x)
    payload = _minplus_payload(cfg, x, sol)
    if args.format == "csv":
        rows = [(i, ev.value) for i, ev in enumerate(sol.per_piece)]
        write_csv(_out(args, "minplus.csv"), ["piece", "value"], rows)
    write_report(_out(args, "report.json"), payload, cfg)
    print(json.dumps({"value": payload["value"],
                      "active_set": payload["active_set"]}))
    return EXIT_OK


def cmd_decompose(args) -> int:
    cfg = _load_or_default(args, "decompose")
    if cfg.t1 is None or cfg.t2 is None:
        raise ConfigError("config.t1/t2", "decomposition needs t1 and t2")
    x = read_pgm(args.input)
    graph = build_graph(cfg, x.n, x.shape)
    solver = cfg.solver
    res = decompose(x, graph, cfg.t1, cfg.t2,
                    tol=float(solver.get("decompose_tol", DECOMPOSE_TOL)),
                    max_iter=int(solver.get("decompose_max_iter", DECOMPOSE_MAX_ITER)),
                    inner_tol=float(solver.get("tv_tol", TV_TOL)),
                    inner_max_iter=int(solver.get("tv_max_iter", TV_MAX_ITER)))
    shape = x.shape
    write_pgm(_out(args, "geometry.pgm"), res.geometry.values.reshape(shape))
    # texture and noise are signed; rendered with a +0.5 offset, clipped
    write_pgm(_out(args, "texture.pgm"), res.texture.values.reshape(shape) + 0.5)
    write_pgm(_out(args, "noise.pgm"), res.noise.values.reshape(shape) + 0.5)
    payload = {
        "s1": res.s1,
        "s2": res.s2,
        "winner": res.winner,
        "solver_report": {k: asdict(v) for k, v in res.solver_report.items()},
    }
    write_report(_out(args, "report.json"), payload, cfg)
    return EXIT_OK


def cmd_posterior(args) -> int:
    cfg = _load_or_default(args, "posterior")
    if cfg.x_grid is None:
        raise ConfigError("config.x_grid", "posterior scan needs an x grid")
    if cfg.t is None or cfg.epsilon is None:
        raise ConfigError("config.t/epsilon", "posterior scan needs t and epsilon")
    pieces = build_pieces(cfg, 1, (1,))
    t, eps = cfg.t, cfg.epsilon
    rows = []
    for xv in cfg.x_grid:
        x = as_signal(float(xv))
        if len(pieces) == 1:
            st = s_epsilon(pieces[0], x, t, eps)
        else:
            st = mixture_s_epsilon(MixturePrior(tuple(pieces), eps), x, t,
                                   threads=cfg.threads)
        sharp = minplus_solve(pieces, x, t, threads=cfg.threads)
        rows.append((float(xv), st.value, float(st.gradient.values[0]),
                     float(st.posterior_mean.values[0]), st.mmse,
                     float(sharp.minimizers[0].values[0]), x.n * t * eps))
    header = ["x", "s_eps", "grad", "u_pm", "mmse", "u_map", "bound"]
    if args.format == "json":
        payload = {"rows": [dict(zip(header, row)) for row in rows]}
        write_report(_out(args, "posterior.json"), payload, cfg)
    else:
        write_csv(_out(args, "posterior.csv"), header, rows)
        write_report(_out(args, "report.json"),
                     {"rows": len(rows), "output": "posterior.csv"}, cfg)
    return EXIT_OK


def cmd_verify(args) -> int:
    results = run_suite(args.suite, seed=args.seed)
    failed = 0
    for res in results:
        status = "PASS" if res.passed else "FAIL"
        line = f"{status}  {res.name}"
        if res.detail:
            line += f"  [{res.detail}]"
        print(line)
        failed += 0 if res.passed else 1
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return EXIT_OK if failed == 0 else EXIT_VERIFY_FAIL


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hjopt",
        description="Variational denoising, decomposition, and posterior-mean "
                    "estimation through evolution-equation representation formulas.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_input=False):
        p.add_argument("--config", help="JSON configuration file")
        p.add_argument("--input", required=needs_input,
                       help="input image (binary graymap)")
        p.add_argument("--output", default=".", help="output directory")
        p.add_argument("--t", type=float, help="override evolution time")
        p.add_argument("--t1", type=float, help="override first time")
        p.add_argument("--t2", type=float, help="override second time")
        p.add_argument("--eps", type=float, help="override epsilon")
        p.add_argument("--threads", type=int,
                       help="worker threads (default: HJ_MINPLUS_THREADS or cpu count)")
        p.add_argument("--format", choices=("pgm", "csv", "json"), default="pgm")

    p = sub.add_parser("denoise", help="solve a denoising model")
    common(p)
    p.set_defaults(func=cmd_denoise)

    p = sub.add_parser("minplus", help="report a min-plus solve without image output")
    common(p)
    p.set_defaults(func=cmd_minplus)

    p = sub.add_parser("decompose", help="three-component image decomposition")
    common(p, needs_input=True)
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("posterior", help="posterior statistics over an x grid")
    common(p)
    p.set_defaults(func=cmd_posterior)

    p = sub.add_parser("verify", help="run invariant suites")
    p.add_argument("suite", nargs="?", default="all",
                   help="core|prox|hj|minplus|decompose|viscous|all")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ParameterError, DimensionMismatchError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ImageFormatError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except HJOptError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
