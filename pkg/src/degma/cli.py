"""Command-line entry point: ``degma <subcommand> [flags]``.

Every run writes its outputs atomically into ``--out-dir`` together with a
``manifest.json`` holding the config digest, timings, worker count and a
result summary.  On failure a machine-readable ``error.json`` is written, the
same document goes to stderr and the process exits with the error's status:

====  ==========================================
2     usage (unknown subcommand, unparsable flag)
3     configuration (invalid flag value or combination)
4     missing input
5     precondition violated
6     numerical failure
====  ==========================================
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from degma import __version__
from degma import diagnostics as dg
from degma import grushin as gr
from degma import io
from degma import monge_ampere as ma
from degma import radial, transforms
from degma.errors import ConfigurationError, DegmaError, MissingInputError, PreconditionError
from degma.grid import Domain2D, GridFunction, StripField
from degma.transforms import PatchField

SUBCOMMANDS = ("solve", "eigen", "flow", "verify-linear", "transform", "diagnose", "oracle")
THREADS_ENV = "DEGMA_THREADS"


class UsageError(DegmaError):
    code = "usage"
    exit_status = 2


@dataclass
class RunConfig:
    """All run parameters; serialises to canonical JSON (sorted keys)."""

    subcommand: str
    out_dir: str = "degma-out"
    threads: int | None = None
    seed: int = 0
    # Monge-Ampere
    q: int = 1
    lam: float = 1.0
    domain: tuple[float, float] = (1.0, 1.0)
    nr: int = 64
    ntheta: int = 32
    tol: float = 1e-10
    max_iter: int = 60
    dt: float = 1e-4
    steps: int = 10000
    residual_stop: float = 1e-6
    # linear model
    m: int = 1
    k: int = 0
    modes: int = 64
    vertical: int = 64
    samples: int = 100
    # transforms and diagnostics
    input: str | None = None
    point: float = 0.0
    delta: float = 0.2
    what: str = "exponent"
    qmax: int = 3
    Nmax: int = 8
    pmax: int = 40
    bmax: int = 5
    d: int | None = None
    r: float = 0.25
    mode: str = "dirichlet"
    radius: float = 1.0

    def __post_init__(self):
        self.domain = tuple(float(v) for v in self.domain)

    def validate(self) -> RunConfig:
        if self.subcommand not in SUBCOMMANDS:
            raise UsageError(f"unknown subcommand {self.subcommand!r}")
        for name in ("tol", "dt", "residual_stop", "lam", "delta", "r", "radius"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"--{name} must be positive")
        if len(self.domain) != 2 or min(self.domain) <= 0:
            raise ConfigurationError("--domain needs two positive semi-axes a,b")
        if self.nr < 8 or self.ntheta < 8 or self.ntheta % 2:
            raise ConfigurationError("--nr and --ntheta must be >= 8, --ntheta even")
        if self.q < 0 or self.m < 1 or self.k < 0 or self.samples < 1:
            raise ConfigurationError("need q >= 0, m >= 1, k >= 0, samples >= 1")
        if self.threads is not None and self.threads < 1:
            raise ConfigurationError("--threads must be >= 1")
        if self.subcommand == "flow" and self.q == 0:
            raise ConfigurationError("the flow needs q >= 1 (ln(-u) term)")
        if self.subcommand == "transform" and self.input is None:
            raise ConfigurationError("transform needs --input")
        if self.subcommand == "diagnose":
            if self.what not in ("exponent", "radius", "induction", "cl1"):
                raise ConfigurationError(f"unknown --what {self.what!r}")
            if self.what in ("radius", "induction") and self.input is None:
                raise ConfigurationError(f"diagnose --what {self.what} needs --input")
        if self.subcommand == "oracle" and self.mode not in ("dirichlet", "eigen"):
            raise ConfigurationError("--mode must be dirichlet or eigen")
        if self.input is not None and not Path(self.input).exists():
            raise MissingInputError(f"input {self.input} does not exist")
        return self

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["domain"] = list(self.domain)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> RunConfig:
        d = json.loads(text)
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigurationError(f"unknown config keys {sorted(unknown)}")
        return cls(**d)

    def digest(self) -> str:
        """Content hash of the result-determining fields (output location excluded)."""
        d = self.to_dict()
        d.pop("out_dir")
        return hashlib.sha256(json.dumps(d, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


@dataclass
class RunManifest:
    config: dict
    digest: str
    version: str
    timings: dict = field(default_factory=dict)
    results: dict = field(default_factory=dict)
    environment: dict = field(default_factory=dict)
    outputs: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def worker_count(cfg: RunConfig) -> int:
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ConfigurationError(f"{THREADS_ENV}={env!r} is not an integer") from None
        if n < 1:
            raise ConfigurationError(f"{THREADS_ENV} must be >= 1")
        return n
    return cfg.threads or os.cpu_count() or 1


class _Run:
    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.out = Path(cfg.out_dir)
        self.timings: dict[str, float] = {}
        self.outputs: list[str] = []
        self.workers = worker_count(cfg)

    def phase(self, name):
        run = self

        class _Timer:
            def __enter__(self):
                self.t = time.perf_counter()

            def __exit__(self, *exc):
                run.timings[name] = time.perf_counter() - self.t

        return _Timer()

    def path(self, name: str) -> Path:
        self.outputs.append(name)
        return self.out / name

    def field(self, name, f, meta=None):
        io.write_field(self.path(name), f, meta)
        self.outputs.append(name + ".json")

    def csv(self, name, header, rows):
        io.write_csv(self.path(name), header, rows)

    def json(self, name, obj):
        io.write_json(self.path(name), obj)


def _domain(cfg: RunConfig) -> Domain2D:
    a, b = cfg.domain
    return Domain2D.ellipse(a, b)


def _newton_cfg(cfg: RunConfig) -> ma.NewtonConfig:
    return ma.NewtonConfig(tol=cfg.tol, max_iter=cfg.max_iter)


def _cmd_solve(run: _Run) -> dict:
    cfg = run.cfg
    with run.phase("solve"):
        sol = ma.newton_solve(_domain(cfg), cfg.q, cfg.lam, _newton_cfg(cfg), n_r=cfg.nr, n_theta=cfg.ntheta)
    meta = sol.metadata()
    run.field("solution.dgma", sol.u, meta)
    run.json("solution_meta.json", meta)
    return {**meta, "center": sol.u.center_value()}


def _cmd_eigen(run: _Run) -> dict:
    cfg = run.cfg
    with run.phase("eigen"):
        sol = ma.eigen_solve(_domain(cfg), 2, _newton_cfg(cfg), n_r=cfg.nr, n_theta=cfg.ntheta)
        ray = ma.rayleigh_lambda(sol.u, 2)
    meta = sol.metadata()
    run.field("solution.dgma", sol.u, meta)
    run.json("solution_meta.json", {**meta, "rayleigh": ray})
    return {**meta, "rayleigh": ray}


def _cmd_flow(run: _Run) -> dict:
    cfg = run.cfg
    u0 = ma.default_initializer(_domain(cfg), cfg.q, cfg.nr, cfg.ntheta)
    fcfg = ma.FlowConfig(dt=cfg.dt, steps=cfg.steps, residual_stop=cfg.residual_stop)
    with run.phase("flow"):
        res = ma.run_flow(u0, cfg.q, fcfg)
    meta = {"domain": res.u.domain.to_dict(), "q": cfg.q, "lambda": 1.0, "residual": res.residual,
            "iterations": res.steps, "converged": res.converged, "time": res.time}
    run.field("solution.dgma", res.u, meta)
    run.csv("flow_trace.csv", ("step", "residual", "J", "dt"), res.trace)
    return meta


_COMPONENTS = ("second_vertical", "weighted_top", "first_vertical", "weighted_horizontal", "trace", "base")


def _linear_case(args):
    data, m, k, modes, vertical = args
    p = gr.problem_at(data, m, modes, vertical)
    denom = gr._data_norm(p, k)
    rep = gr.weighted_norm(gr.solve_grushin(p), k, m)
    return rep.total / denom, rep, denom


def _cmd_verify_linear(run: _Run) -> dict:
    cfg = run.cfg
    fields = gr.random_problems(cfg.m, cfg.samples, cfg.seed)
    jobs = [(d, cfg.m, cfg.k, cfg.modes, cfg.vertical) for d in fields]
    with run.phase("ensemble"):
        # map() preserves input order, so the table is independent of scheduling
        with ThreadPoolExecutor(max_workers=run.workers) as ex:
            results = list(ex.map(_linear_case, jobs))
    h = 1.0 / cfg.vertical
    rows = [(i, ratio, h, *rep.components(), denom) for i, (ratio, rep, denom) in enumerate(results)]
    run.csv("ratios.csv", ("case", "ratio", "h", *_COMPONENTS, "data_norm"), rows)
    ratios = np.array([r[0] for r in results])
    summary = {"m": cfg.m, "k": cfg.k, "modes": cfg.modes, "vertical": cfg.vertical, "samples": cfg.samples,
               "seed": cfg.seed, "max_ratio": float(ratios.max()), "mean_ratio": float(ratios.mean()),
               "norm": "spectral horizontal, finite-difference vertical"}
    run.json("summary.json", summary)
    return summary


def _input_meta(path) -> dict:
    side = io.sidecar_path(path)
    if side.exists():
        return json.loads(side.read_text()).get("meta", {})
    return {}


def _cmd_transform(run: _Run) -> dict:
    cfg = run.cfg
    u = io.read_field(cfg.input)
    if not isinstance(u, GridFunction):
        raise PreconditionError("transform needs a GridFunction dump")
    lam = float(_input_meta(cfg.input).get("lambda", cfg.lam))
    with run.phase("transform"):
        frame = transforms.BoundaryFrame.at(u, cfg.point, cfg.m, lam)
        delta = transforms.auto_delta(u, frame, cfg.delta)
        n = max(9, u.n_r // 4 + 1)
        v = transforms.hodograph_forward(u, frame, delta, n, n)
        vs = transforms.partial_legendre(v)
        ident = transforms.hodograph_identity_error(u, frame, v)
        res = transforms.pl_residual(vs, cfg.m, lam)
    run.field("v.dgma", v)
    run.field("vstar.dgma", vs)
    report = {"point": cfg.point, "delta": delta, "m": cfg.m, "lambda": lam, "c0": frame.c0,
              "u_n": frame.u_n, "u_tt": frame.u_tt, "identity_error": ident, "pl_residual": res,
              "scales": list(frame.scales)}
    run.json("transform_report.json", report)
    return report


def _solution_for(q: int, cfg: RunConfig) -> tuple[GridFunction, float]:
    """Disc solution used by the exponent diagnostic; ``q = 2`` is the eigenfunction."""
    dom = _domain(cfg)
    if q == 2:
        sol = ma.eigen_solve(dom, 2, _newton_cfg(cfg), n_r=cfg.nr, n_theta=cfg.ntheta)
    else:
        sol = ma.newton_solve(dom, q, cfg.lam, _newton_cfg(cfg), n_r=cfg.nr, n_theta=cfg.ntheta)
    return sol.u, sol.lam


def _cmd_diagnose(run: _Run) -> dict:
    cfg = run.cfg
    what = cfg.what
    if what == "cl1":
        with run.phase("cl1"):
            d = cfg.d if cfg.d is not None else cfg.bmax
            rep = dg.verify_cl1(cfg.pmax, cfg.bmax, d)
            # same C2 with the base 8 pi^2 (d+1) replaced by 1 must fail
            control = dg.verify_cl1(cfg.pmax, cfg.bmax, d, K=1, C2=rep.C2)
        rows = [(r.p, r.b, f"{r.S.numerator}/{r.S.denominator}", r.bound, int(r.passed)) for r in rep.rows]
        run.csv("cl1.csv", ("p", "b", "S", "bound", "pass"), rows)
        return {"passed": rep.passed, "C2": rep.C2, "K": rep.K, "argmax": list(rep.argmax),
                "failures": len(rep.failures()), "control_failures": len(control.failures())}
    if what == "exponent":
        rows = []
        with run.phase("exponent"):
            if cfg.input is not None:
                u = io.read_field(cfg.input)
                meta = _input_meta(cfg.input)
                cases = [(int(meta.get("q", cfg.q)), (u, float(meta.get("lambda", cfg.lam))))]
            else:
                cases = [(q, _solution_for(q, cfg)) for q in range(1, cfg.qmax + 1)]
            for q, (u, lam) in cases:
                frame = transforms.BoundaryFrame.at(u, cfg.point)
                fit = dg.boundary_exponent_report(u, frame, q, 0.4, lam=lam)
                rows.append((q, fit.gamma, fit.prefactor, fit.normalized_prefactor, fit.expected_prefactor))
        run.csv("exponent.csv", ("q", "gamma", "prefactor", "normalized_prefactor", "expected_prefactor"), rows)
        return {"gamma": {str(r[0]): r[1] for r in rows}}
    u = io.read_field(cfg.input)
    if what == "radius":
        if not isinstance(u, GridFunction):
            raise PreconditionError("radius diagnostics need a GridFunction dump")
        with run.phase("radius"):
            s, vals = dg.grid_normal_profile(u)
            keep = s <= 1.0 + 1e-12
            tc = dg.taylor_coefficients(vals[keep], x=s[keep])
            fit = dg.analyticity_fit(tc, min_terms=3, zero_tol=1e-3)
        rows = [(n, a, e) for n, (a, e) in enumerate(zip(tc.a, tc.err))]
        run.csv("taylor.csv", ("N", "a_N", "err_N"), rows)
        return {"radius": fit.radius, "diverging": fit.diverging, "terms": fit.terms.tolist()}
    # induction
    if not isinstance(u, (StripField, PatchField)):
        raise PreconditionError("induction constants need a strip or patch dump")
    r = cfg.r if isinstance(u, StripField) else (u.x1[-1] - u.x1[0]) / 4.0
    with run.phase("induction"):
        fit = dg.induction_constants(u, cfg.k, cfg.Nmax, dg.CutoffProfile(r), cfg.m)
    run.csv("induction.csv", ("N", "s_N", "bound_N"), fit.rows())
    return {"A0": fit.A0, "A1": fit.A1, "residual": fit.residual, "satisfied": fit.satisfied()}


def _cmd_oracle(run: _Run) -> dict:
    cfg = run.cfg
    with run.phase("oracle"):
        prof = radial.radial_oracle(cfg.q, cfg.mode, cfg.radius, cfg.lam, samples=257)
    run.csv("profile.csv", ("r", "u", "du"), zip(prof.r, prof.values, prof.derivative))
    out = {"q": prof.q, "lambda": prof.lam, "radius": prof.radius, "center": prof.center}
    run.json("oracle.json", out)
    return out


_DISPATCH = {
    "solve": _cmd_solve,
    "eigen": _cmd_eigen,
    "flow": _cmd_flow,
    "verify-linear": _cmd_verify_linear,
    "transform": _cmd_transform,
    "diagnose": _cmd_diagnose,
    "oracle": _cmd_oracle,
}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def run(config: RunConfig) -> RunManifest:
    """Validate ``config``, dispatch it and write the manifest."""
    config.validate()
    r = _Run(config)
    t0 = time.perf_counter()
    results = _DISPATCH[config.subcommand](r)
    r.timings["total"] = time.perf_counter() - t0
    manifest = RunManifest(
        config=config.to_dict(),
        digest=config.digest(),
        version=__version__,
        timings=r.timings,
        results=_jsonable(results),
        environment={"workers": r.workers, "numpy": np.__version__},
        outputs=sorted(r.outputs),
    )
    io.write_json(r.out / "manifest.json", manifest.to_dict())
    return manifest


# ---------------------------------------------------------------------------
# argparse front end
# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def __init__(self, *args, **kwargs):
        kwargs.setdefault("allow_abbrev", False)
        super().__init__(*args, **kwargs)

    def error(self, message):
        raise UsageError(message)


def _pair(text: str) -> tuple[float, float]:
    try:
        a, b = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError("expected two numbers a,b") from None
    return a, b


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--out-dir", dest="out_dir", default=None)
    common.add_argument("--threads", type=int, default=None)
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--config", default=None, help="JSON RunConfig; explicit flags override it")

    p = _Parser(prog="degma", description="Degenerate Monge-Ampere toolkit")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="subcommand", parser_class=_Parser)

    def ma_flags(sp):
        sp.add_argument("--q", type=int)
        sp.add_argument("--lambda", dest="lam", type=float)
        sp.add_argument("--domain", type=_pair)
        sp.add_argument("--nr", type=int)
        sp.add_argument("--ntheta", type=int)
        sp.add_argument("--tol", type=float)
        sp.add_argument("--max-iter", dest="max_iter", type=int)

    sp = sub.add_parser("solve", parents=[common], help="Newton solve of the Dirichlet problem")
    ma_flags(sp)
    sp = sub.add_parser("eigen", parents=[common], help="eigenvalue problem q = n = 2")
    ma_flags(sp)
    sp = sub.add_parser("flow", parents=[common], help="logarithmic gradient flow")
    ma_flags(sp)
    sp.add_argument("--dt", type=float)
    sp.add_argument("--steps", type=int)
    sp.add_argument("--residual-stop", dest="residual_stop", type=float)

    sp = sub.add_parser("verify-linear", parents=[common], help="estimate ratios of the linear model")
    for name in ("m", "k", "modes", "vertical", "samples"):
        sp.add_argument(f"--{name}", type=int)

    sp = sub.add_parser("transform", parents=[common], help="hodograph and partial Legendre transforms")
    sp.add_argument("--input")
    sp.add_argument("--point", type=float)
    sp.add_argument("--delta", type=float)
    sp.add_argument("--m", type=int)
    sp.add_argument("--lambda", dest="lam", type=float)

    sp = sub.add_parser("diagnose", parents=[common], help="exponent, radius, induction and cl1 diagnostics")
    sp.add_argument("--input")
    sp.add_argument("--what", choices=("exponent", "radius", "induction", "cl1"))
    sp.add_argument("--qmax", type=int)
    sp.add_argument("--Nmax", type=int)
    sp.add_argument("--pmax", type=int)
    sp.add_argument("--bmax", type=int)
    sp.add_argument("--d", type=int)
    sp.add_argument("--q", type=int)
    sp.add_argument("--k", type=int)
    sp.add_argument("--m", type=int)
    sp.add_argument("--r", type=float)
    sp.add_argument("--nr", type=int)
    sp.add_argument("--ntheta", type=int)
    sp.add_argument("--point", type=float)

    sp = sub.add_parser("oracle", parents=[common], help="radial shooting oracle")
    sp.add_argument("--q", type=int)
    sp.add_argument("--lambda", dest="lam", type=float)
    sp.add_argument("--mode", choices=("dirichlet", "eigen"))
    sp.add_argument("--radius", type=float)
    return p


def config_from_args(argv) -> RunConfig:
    ns = build_parser().parse_args(argv)
    if ns.subcommand is None:
        raise UsageError("a subcommand is required: " + ", ".join(SUBCOMMANDS))
    base = {"subcommand": ns.subcommand}
    if ns.config:
        path = Path(ns.config)
        if not path.exists():
            raise MissingInputError(f"config {path} does not exist")
        base = RunConfig.from_json(path.read_text()).to_dict()
        if base["subcommand"] != ns.subcommand:
            raise ConfigurationError("config file is for a different subcommand")
    given = {k: v for k, v in vars(ns).items() if v is not None and k not in ("config", "subcommand")}
    try:
        return RunConfig(**{**base, **given})
    except TypeError as exc:
        raise ConfigurationError(str(exc)) from None


def _error_document(exc: DegmaError) -> dict:
    return {"error": exc.code, "exit_status": exc.exit_status, "type": type(exc).__name__, "message": str(exc)}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    out_dir = None
    try:
        cfg = config_from_args(argv)
        out_dir = cfg.out_dir
        manifest = run(cfg)
    except DegmaError as exc:
        doc = _error_document(exc)
        print(json.dumps(doc, sort_keys=True), file=sys.stderr)
        if out_dir is not None:
            try:
                io.write_json(Path(out_dir) / "error.json", doc)
            except OSError:
                pass
        return exc.exit_status
    print(json.dumps({"digest": manifest.digest, "results": manifest.results}, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
