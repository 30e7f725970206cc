"""Command-line front end.

Each subcommand reads an optional JSON run config (``--config``), applies
flag overrides, writes its outputs and echoes the fully resolved config next
to the main output as ``<out>.config.json``. Passing that file back with
``--config`` reruns the command identically.

Exit codes: 0 ok, 2 config error, 3 IO error, 4 numeric abort, 5 capability
mismatch. Failures print one JSON line on stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from . import __version__
from .datasets import DatasetSpec, SampleSet, generate, load_csv, save_csv
from .errors import CapabilityError, ConfigError, DataIOError, DivergenceError, MMGibbsError, NumericAbort
from .evaluation import DEFAULT_BANDWIDTHS, GridOracle, mmd, write_mmd_csv
from .identities import run_all
from .models import (
    MixtureModel,
    MlpEnergy,
    PosteriorNet,
    ScoreMlp,
    load_checkpoint,
    corner_mog,
    save_checkpoint,
    true_posterior_logpdf,
)
from .posterior import PosteriorKind, iso_variance, learned_posterior, moment_matched, write_posterior_grid
from .sampler import ChainConfig, NoiseSchedule, multilevel_gibbs, run_chain
from .training import TrainConfig, init_params, train

log = logging.getLogger("mmgibbs")

ANALYTIC_MOG = "analytic:mog"
ISO_SAMPLES = 100_000


@dataclass
class MultilevelConfig:
    schedule: str = "geometric:1.0,0.05,10"
    gibbs_steps: int = 3
    rademacher: int = 3
    chains: int = 1000
    seed: int = 0
    posterior: str = "diag"


@dataclass
class EvalConfig:
    bandwidths: list = field(default_factory=lambda: list(DEFAULT_BANDWIDTHS))
    seed: int = 0


@dataclass
class GridConfig:
    sigma: float = 0.2
    xtilde: list = field(default_factory=lambda: [0.8, 0.9])
    posterior: str = "full"
    lo: float = -2.0
    hi: float = 2.0
    nodes: int = 401
    seed: int = 0


@dataclass
class IdentityConfig:
    iso_samples: int = ISO_SAMPLES


SECTIONS = {
    "dataset": DatasetSpec,
    "train": TrainConfig,
    "chain": ChainConfig,
    "multilevel": MultilevelConfig,
    "eval": EvalConfig,
    "grid": GridConfig,
    "identities": IdentityConfig,
}

# command -> (config sections used, io keys)
COMMANDS = {
    "generate-data": (("dataset",), ("out",)),
    "train": (("train",), ("data", "out")),
    "sample": (("chain",), ("model", "out")),
    "sample-multilevel": (("multilevel",), ("model", "out")),
    "eval-mmd": (("eval",), ("a", "b", "out")),
    "posterior-grid": (("grid",), ("model", "out")),
    "verify-identities": (("identities",), ("out",)),
    "plot": ((), ("samples", "out")),
}


# ---------------------------------------------------------------- config plumbing

def _load_config_file(path):
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise DataIOError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    return raw


def _build_section(name, values):
    cls = SECTIONS[name]
    if not isinstance(values, dict):
        raise ConfigError(f"config section {name!r} must be an object")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) in section {name!r}: {', '.join(unknown)}")
    try:
        return cls(**values)
    except TypeError as exc:
        raise ConfigError(f"bad section {name!r}: {exc}") from exc


def resolve(command, args):
    """Merge config file and flags into ``(sections, io)``."""
    sections_used, io_keys = COMMANDS[command]
    raw = _load_config_file(args.config) if args.config else {}
    allowed = set(sections_used) | {"io", "command"}
    unknown = sorted(set(raw) - allowed)
    if unknown:
        raise ConfigError(f"unknown config section(s) for {command}: {', '.join(unknown)}")
    if raw.get("command", command) != command:
        raise ConfigError(f"config was written for {raw['command']!r}, not {command!r}")
    values = {s: dict(raw.get(s, {})) for s in sections_used}
    io = dict(raw.get("io", {}))
    bad_io = sorted(set(io) - set(io_keys))
    if bad_io:
        raise ConfigError(f"unknown io key(s): {', '.join(bad_io)}")
    for key, val in vars(args).items():
        if val is None or "." not in key:
            continue
        sect, name = key.split(".", 1)
        if sect == "io":
            io[name] = val
        else:
            values[sect][name] = val
    missing = [k for k in io_keys if not io.get(k)]
    if missing:
        raise ConfigError(f"missing required option(s): {', '.join('--' + k for k in missing)}")
    sections = {s: _build_section(s, values[s]) for s in sections_used}
    return sections, io


def echo_config(command, sections, io):
    out = {"command": command, "io": io}
    out.update({name: dataclasses.asdict(obj) for name, obj in sections.items()})
    path = Path(io["out"]).with_name(Path(io["out"]).name + ".config.json")
    _write_text(path, json.dumps(out, indent=2, sort_keys=True) + "\n")
    return path


def _write_text(path, text):
    try:
        Path(path).write_text(text)
    except OSError as exc:
        raise DataIOError(f"cannot write {path}: {exc}") from exc


def _floats(text):
    try:
        return [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"expected comma-separated numbers, got {text!r}") from exc


def _ints(text):
    try:
        return [int(v) for v in str(text).split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"expected comma-separated integers, got {text!r}") from exc


def _schedule_levels(text):
    return list(NoiseSchedule.parse(text).levels)


# ---------------------------------------------------------------- model loading

@dataclass
class LoadedModel:
    model: object
    meta: dict
    analytic: bool = False


def load_model(spec) -> LoadedModel:
    if spec == ANALYTIC_MOG:
        return LoadedModel(MixtureModel(corner_mog(0.2)), {}, analytic=True)
    if str(spec).startswith("analytic:"):
        raise ConfigError(f"unknown analytic model {spec!r}; only {ANALYTIC_MOG!r} is available")
    ckpt = load_checkpoint(spec)
    return LoadedModel(ckpt.model, ckpt.meta)


def _analytic_iso(model, sigma, seed, model_sigma=None):
    rng = np.random.default_rng([seed, 2])
    pts = model.mog.noisy(model_sigma or sigma).sample(ISO_SAMPLES, rng)
    return iso_variance(model, pts, sigma, model_sigma=model_sigma)


# ---------------------------------------------------------------- commands

def cmd_generate_data(sections, io):
    spec = sections["dataset"]
    save_csv(generate(spec), io["out"])


def cmd_train(sections, io):
    cfg: TrainConfig = sections["train"]
    cfg.validate()
    data = load_csv(io["data"]).points
    if len(data) == 0:
        raise ConfigError(f"{io['data']} holds no points")
    params = init_params(cfg, data.shape[1])

    def progress(epoch, trace):
        n = len(trace) // (epoch + 1)
        log.info("epoch %d/%d loss %.6g", epoch + 1, cfg.epochs, float(np.mean(trace.loss[-n:])))

    meta = {"train": cfg.to_dict(), "data": str(io["data"]), "dim": int(data.shape[1])}
    try:
        params, trace = train(params, data, cfg, progress)
    except DivergenceError as exc:
        # keep the last parameters for inspection, then fail
        meta.update(diverged=True, iteration=exc.index)
        save_checkpoint(io["out"], PosteriorNet(exc.params), meta)
        exc.trace.write_csv(str(io["out"]) + ".loss.csv")
        raise
    if cfg.objective == "kl":
        model = PosteriorNet(params)
    else:
        cls = MlpEnergy if cfg.parameterization == "energy" else ScoreMlp
        model = cls(params, cfg.sigma_conditioned)
        rng = np.random.default_rng([cfg.seed, 2])
        if cfg.sigma_conditioned:
            meta["iso_variance"] = {
                repr(s): iso_variance(model, data + s * rng.standard_normal(data.shape), s) for s in cfg.schedule
            }
        else:
            meta["iso_variance"] = iso_variance(model, data + cfg.sigma * rng.standard_normal(data.shape), cfg.sigma)
    save_checkpoint(io["out"], model, meta)
    trace.write_csv(str(io["out"]) + ".loss.csv")


def cmd_sample(sections, io):
    cfg: ChainConfig = sections["chain"]
    cfg.validate()
    kind = cfg.kind
    loaded = load_model(io["model"])
    model, meta = loaded.model, loaded.meta
    net = None
    iso = None
    if kind.name == "learned":
        if not isinstance(model, PosteriorNet):
            raise CapabilityError("learned posterior needs a checkpoint trained with --objective kl")
        net, model = model, None
    else:
        if isinstance(model, PosteriorNet):
            raise CapabilityError(f"{kind} posterior needs an energy or score model, got a posterior network")
        trained = meta.get("train", {})
        if not loaded.analytic and not model.sigma_conditioned and "sigma" in trained:
            if abs(trained["sigma"] - cfg.sigma) > 1e-12:
                raise ConfigError(f"model was trained at sigma={trained['sigma']:g}, chain asks for {cfg.sigma:g}")
        if kind.name == "full" and not model.has_exact_hessian:
            raise CapabilityError(
                "full covariance needs an energy-parameterized model; use --posterior diag:S with a score model")
        if kind.name == "iso":
            if loaded.analytic:
                iso = _analytic_iso(model, cfg.sigma, cfg.seed)
            else:
                stored = meta.get("iso_variance")
                if isinstance(stored, dict):
                    stored = stored.get(repr(float(cfg.sigma)))
                if stored is None:
                    raise ConfigError("checkpoint has no isotropic variance for this sigma")
                iso = float(stored)
    samples = run_chain(model, cfg, net=net, iso_var=iso)
    save_csv(samples, io["out"])


def cmd_sample_multilevel(sections, io):
    cfg: MultilevelConfig = sections["multilevel"]
    schedule = NoiseSchedule.parse(cfg.schedule, gibbs_steps=cfg.gibbs_steps, rademacher_samples=cfg.rademacher)
    loaded = load_model(io["model"])
    model = loaded.model
    if isinstance(model, PosteriorNet):
        raise CapabilityError("multi-level sampling needs an energy or score model")
    if not model.sigma_conditioned:
        raise CapabilityError("multi-level sampling needs a noise-conditioned model (train with --schedule)")
    trained = loaded.meta.get("train", {}).get("schedule")
    if trained:
        missing = [s for s in schedule.levels if not np.any(np.isclose(s, trained, rtol=1e-9, atol=0.0))]
        if missing:
            raise ConfigError(f"model was not trained at noise level(s) {', '.join(f'{s:g}' for s in missing)}")
    kind = PosteriorKind.parse(cfg.posterior)
    if kind.name == "full" and not model.has_exact_hessian:
        raise CapabilityError("full covariance needs an energy-parameterized model")
    iso_vars = None
    if kind.name == "iso":
        rel = schedule.relative_noise()
        if not loaded.analytic:
            raise ConfigError("isotropic multi-level sampling is only available for the analytic model")
        iso_vars = [_analytic_iso(model, w, cfg.seed, s) for s, w in zip(schedule.levels, rel)]
    res = multilevel_gibbs(model, schedule, cfg.chains, cfg.seed, str(kind), iso_vars=iso_vars)
    save_csv(res, io["out"])


def cmd_eval_mmd(sections, io):
    cfg: EvalConfig = sections["eval"]
    a = load_csv(io["a"])
    b = load_csv(io["b"])
    rep = mmd(a, b, cfg.bandwidths)
    write_mmd_csv(io["out"], [rep], [cfg.seed])
    print(f"mmd2={rep.mmd2!r} mmd={rep.mmd!r} n_a={rep.n_a} n_b={rep.n_b}")


def cmd_posterior_grid(sections, io):
    cfg: GridConfig = sections["grid"]
    kind = PosteriorKind.parse(cfg.posterior)
    loaded = load_model(io["model"])
    model = loaded.model
    xt = np.asarray(cfg.xtilde, dtype=np.float64)
    grid = GridOracle((cfg.lo,) * len(xt), (cfg.hi,) * len(xt), cfg.nodes)
    pts = grid.points()
    truth = true_posterior_logpdf(corner_mog(0.2), cfg.sigma, xt, pts)
    if kind.name == "learned":
        if not isinstance(model, PosteriorNet):
            raise CapabilityError("learned posterior needs a checkpoint trained with --objective kl")
        approx = learned_posterior(model, xt)
    else:
        if isinstance(model, PosteriorNet):
            raise CapabilityError(f"{kind} posterior needs an energy or score model")
        iso = _analytic_iso(model, cfg.sigma, cfg.seed) if kind.name == "iso" and loaded.analytic else None
        if kind.name == "iso" and iso is None:
            iso = loaded.meta.get("iso_variance")
            if not isinstance(iso, float):
                raise ConfigError("checkpoint has no single-level isotropic variance")
        approx = moment_matched(model, xt, cfg.sigma, kind, iso_var=iso, rng=np.random.default_rng(cfg.seed))
    write_posterior_grid(io["out"], pts, truth, approx.logpdf(pts))


def cmd_verify_identities(sections, io):
    checks = run_all(iso_samples=sections["identities"].iso_samples)
    lines = [c.line() for c in checks]
    for line in lines:
        print(line)
    _write_text(io["out"], "\n".join(lines) + "\n")
    failed = [c.name for c in checks if not c.passed]
    if failed:
        raise NumericAbort(f"{len(failed)} identity check(s) failed: {'; '.join(failed)}")


PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf")
SVG_SIZE = 600
SVG_MARGIN = 0.05


def render_svg(samples: SampleSet):
    """Scatter plot over the data bounding box plus a 5% margin; one circle per row."""
    P = samples.points
    if P.shape[1] < 2:
        raise ConfigError("plot needs at least two columns")
    P = P[:, :2]
    if len(P):
        lo, hi = P.min(axis=0), P.max(axis=0)
    else:
        lo, hi = np.array([-1.0, -1.0]), np.array([1.0, 1.0])
    span = np.where(hi > lo, hi - lo, 1.0)
    lo, hi = lo - SVG_MARGIN * span, hi + SVG_MARGIN * span
    scale = SVG_SIZE / (hi - lo)
    xs = (P[:, 0] - lo[0]) * scale[0]
    ys = SVG_SIZE - (P[:, 1] - lo[1]) * scale[1]
    ids = samples.chain_id if samples.chain_id is not None else np.zeros(len(P), dtype=np.int64)
    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_SIZE}" height="{SVG_SIZE}" '
        f'viewBox="0 0 {SVG_SIZE} {SVG_SIZE}">',
        f'<rect x="0" y="0" width="{SVG_SIZE}" height="{SVG_SIZE}" fill="white" stroke="black"/>',
        f"<title>{escape(f'{len(P)} points, x in [{lo[0]:.3g}, {hi[0]:.3g}], y in [{lo[1]:.3g}, {hi[1]:.3g}]')}</title>",
    ]
    for x, y, c in zip(xs, ys, ids):
        out.append(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="1.5" fill="{PALETTE[int(c) % len(PALETTE)]}" '
                   'fill-opacity="0.5"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def cmd_plot(sections, io):
    _write_text(io["out"], render_svg(load_csv(io["samples"])))


HANDLERS = {
    "generate-data": cmd_generate_data,
    "train": cmd_train,
    "sample": cmd_sample,
    "sample-multilevel": cmd_sample_multilevel,
    "eval-mmd": cmd_eval_mmd,
    "posterior-grid": cmd_posterior_grid,
    "verify-identities": cmd_verify_identities,
    "plot": cmd_plot,
}


# ---------------------------------------------------------------- argument parser

class _Parser(argparse.ArgumentParser):
    """Usage errors become the same one-line JSON as every other failure."""

    def error(self, message):
        self.exit(ConfigError.exit_code, json.dumps({"error": "usage", "code": ConfigError.exit_code,
                                                     "message": message}) + "\n")


def _opt(p, flag, dest, type=str, help=None, **kw):
    p.add_argument(flag, dest=dest, type=type, default=None, help=help, **kw)


def build_parser():
    parser = _Parser(prog="mmgibbs", description="Moment-matched pseudo-Gibbs sampling toolkit.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", default="WARNING", help="logging level (default WARNING)")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, help):
        p = sub.add_parser(name, help=help)
        p.add_argument("--config", help="JSON run config; flags override its values")
        return p

    p = command("generate-data", "draw a toy dataset")
    p.add_argument("--spec", dest="config", help="alias of --config")
    _opt(p, "--out", "io.out", help="output CSV")
    _opt(p, "--kind", "dataset.kind", help="mog4, rings or roll")
    _opt(p, "--n", "dataset.n", int)
    _opt(p, "--seed", "dataset.seed", int)
    _opt(p, "--sigma-g", "dataset.sigma_g", float)
    _opt(p, "--r1", "dataset.r1", float)
    _opt(p, "--r2", "dataset.r2", float)
    _opt(p, "--ring-jitter", "dataset.ring_jitter", float)
    _opt(p, "--roll-scale", "dataset.roll_scale", float)
    _opt(p, "--roll-jitter", "dataset.roll_jitter", float)

    p = command("train", "fit an energy, score or posterior network")
    _opt(p, "--data", "io.data", help="training CSV")
    _opt(p, "--out", "io.out", help="checkpoint path")
    _opt(p, "--objective", "train.objective", help="dsm or kl")
    _opt(p, "--parameterization", "train.parameterization", help="energy or score (dsm only)")
    _opt(p, "--sigma", "train.sigma", float)
    _opt(p, "--schedule", "train.schedule", _schedule_levels, help="geometric:smax,smin,K or list:s1,s2,...")
    _opt(p, "--epochs", "train.epochs", int)
    _opt(p, "--batch-size", "train.batch_size", int)
    _opt(p, "--lr", "train.learning_rate", float)
    _opt(p, "--seed", "train.seed", int)
    _opt(p, "--hidden", "train.hidden", _ints, help="comma-separated layer widths")
    _opt(p, "--kl-floor", "train.kl_floor", float, help="divergence guard for the joint-KL loss")

    p = command("sample", "run single-level pseudo-Gibbs chains")
    _opt(p, "--model", "io.model", help=f"checkpoint or {ANALYTIC_MOG}")
    _opt(p, "--out", "io.out", help="output CSV")
    _opt(p, "--posterior", "chain.posterior", help="full, diag:S, iso or learned")
    _opt(p, "--steps", "chain.steps", int)
    _opt(p, "--chains", "chain.chains", int)
    _opt(p, "--sigma", "chain.sigma", float)
    _opt(p, "--seed", "chain.seed", int)
    _opt(p, "--thinning", "chain.thinning", int)
    _opt(p, "--burn-in", "chain.burn_in", int)
    _opt(p, "--init-std", "chain.init_std", float)

    p = command("sample-multilevel", "annealed Gibbs over a noise schedule")
    _opt(p, "--model", "io.model", help=f"noise-conditioned checkpoint or {ANALYTIC_MOG}")
    _opt(p, "--out", "io.out")
    _opt(p, "--schedule", "multilevel.schedule")
    _opt(p, "--gibbs-steps", "multilevel.gibbs_steps", int)
    _opt(p, "--rademacher", "multilevel.rademacher", int)
    _opt(p, "--chains", "multilevel.chains", int)
    _opt(p, "--seed", "multilevel.seed", int)
    _opt(p, "--posterior", "multilevel.posterior")

    p = command("eval-mmd", "unbiased MMD^2 between two sample files")
    _opt(p, "--a", "io.a")
    _opt(p, "--b", "io.b")
    _opt(p, "--out", "io.out")
    _opt(p, "--bandwidths", "eval.bandwidths", _floats)
    _opt(p, "--seed", "eval.seed", int, help="label written in the seed column")

    p = command("posterior-grid", "dump true and approximate posterior log densities on a grid")
    _opt(p, "--model", "io.model")
    _opt(p, "--out", "io.out")
    _opt(p, "--sigma", "grid.sigma", float)
    _opt(p, "--xtilde", "grid.xtilde", _floats)
    _opt(p, "--posterior", "grid.posterior")
    _opt(p, "--lo", "grid.lo", float)
    _opt(p, "--hi", "grid.hi", float)
    _opt(p, "--nodes", "grid.nodes", int)
    _opt(p, "--seed", "grid.seed", int)

    p = command("verify-identities", "check the posterior identities and derivatives against oracles")
    _opt(p, "--out", "io.out", help="report file")
    _opt(p, "--iso-samples", "identities.iso_samples", int)

    p = command("plot", "scatter plot of a sample CSV as SVG")
    _opt(p, "--samples", "io.samples")
    _opt(p, "--out", "io.out")
    return parser


def _fail(exc, code, kind):
    msg = {"error": kind, "code": code, "message": str(exc)}
    print(json.dumps(msg), file=sys.stderr)
    return code


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        sections, io = resolve(args.command, args)
        echo_config(args.command, sections, io)
        HANDLERS[args.command](sections, io)
    except MMGibbsError as exc:
        return _fail(exc, exc.exit_code, exc.kind)
    except (RuntimeError, FloatingPointError) as exc:
        return _fail(exc, NumericAbort.exit_code, "numeric")
    except OSError as exc:
        return _fail(exc, DataIOError.exit_code, "io")
    return 0


if __name__ == "__main__":
    sys.exit(main())
