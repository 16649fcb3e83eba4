"""Command-line front end: experiment orchestration over pre-computed or
synthetic logits, multi-seed trials, parameter sweeps, and report emission.

Reports are deterministic: identical configuration (including seeds) gives
byte-identical files, regardless of the thread count. ``ECP_THREADS`` caps
the trial pool; results are assembled in submission order.
"""

from __future__ import annotations

import json
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields, replace
from typing import Optional, Sequence

import click
import numpy as np

from . import __version__
from .conformal import calibrate, load_predictor, predict_batch, save_predictor
from .data import (
    LogitDataset,
    SplitSpec,
    deserialize_dataset,
    empirical_priors,
    load_logits_csv,
    save_logits_csv,
    serialize_dataset,
    split_dataset,
)
from .errors import DomainError
from .metrics import (
    EvalReport,
    average_set_size,
    evaluate_sets,
    ood_desiderata_report,
    welch_one_tailed_p,
)
from .scores import ScoreParams
from .synth import (
    SynthConfig,
    generate_ood,
    generate_synthetic,
    landscape_grid,
    make_rings,
    save_landscape_csv,
    save_points_csv,
    train_mlp,
    ToyMLP,
)

# OOD streams drawn alongside a trial reuse the generator with this seed
# offset, so they never replay the trial's own in-distribution draws.
_OOD_SEED_OFFSET = 50

_CSV_COLUMNS = [
    "seed", "alpha", "variant", "coverage", "avg_size", "macro_cov",
    "cov_gap_percent", "sscv", "wsc", "qhat",
]


@dataclass(frozen=True)
class ExperimentConfig:
    """Fully resolved description of one evaluate/ttest run."""

    synth: Optional[SynthConfig]
    logits_path: Optional[str]
    ood_logits_path: Optional[str]
    ood_shrink: Optional[float]
    params: ScoreParams
    alphas: tuple[float, ...]
    seeds: tuple[int, ...]
    split_frac: float
    wsc_delta: Optional[float]
    paired_base: bool

    def __post_init__(self):
        if (self.synth is None) == (self.logits_path is None):
            raise DomainError("exactly one of synth / logits_path must be set")
        if not self.alphas:
            raise DomainError("at least one alpha is required")
        if not self.seeds:
            raise DomainError("at least one seed is required")


@dataclass(frozen=True)
class TrialResult:
    """One (seed, alpha, variant) evaluation. ``wall_time`` is diagnostic
    only and never serialized."""

    seed: int
    alpha: float
    variant: str
    qhat: float
    report: EvalReport
    wall_time: float


def variant_name(params: ScoreParams) -> str:
    parts = []
    if params.modulation is not None:
        parts.append(params.modulation)
    if params.priors is not None:
        parts.append("pa")
    parts.append(params.base_kind)
    return "-".join(parts)


# ----------------------------------------------------------------------
# Flag parsing helpers
# ----------------------------------------------------------------------

def parse_seed_spec(text: str) -> tuple[int, ...]:
    """Seed lists come as ``0..9`` (inclusive range) or ``0,2,5``."""
    text = text.strip()
    if ".." in text:
        lo_txt, _, hi_txt = text.partition("..")
        try:
            lo, hi = int(lo_txt), int(hi_txt)
        except ValueError:
            raise click.UsageError(f"bad seed range {text!r}")
        if hi < lo:
            raise click.UsageError(f"empty seed range {text!r}")
        return tuple(range(lo, hi + 1))
    try:
        seeds = tuple(int(part) for part in text.split(","))
    except ValueError:
        raise click.UsageError(f"bad seed list {text!r}")
    if not seeds:
        raise click.UsageError("at least one seed is required")
    return seeds


def parse_float_list(text: str, flag: str) -> tuple[float, ...]:
    try:
        values = tuple(float(part) for part in text.split(","))
    except ValueError:
        raise click.UsageError(f"bad {flag} list {text!r}")
    if not values:
        raise click.UsageError(f"{flag} needs at least one value")
    return values


def parse_alphas(text: str) -> tuple[float, ...]:
    alphas = parse_float_list(text, "--alpha")
    for a in alphas:
        if not 0.0 < a < 1.0:
            raise click.UsageError(f"alpha must lie in (0, 1), got {a}")
    return alphas


def _effective(ctx: click.Context, file_cfg: dict, name: str):
    """Flag beats config file beats declared default."""
    source = ctx.get_parameter_source(name)
    if source is not None and source.name == "COMMANDLINE":
        return ctx.params[name]
    if name in file_cfg:
        return file_cfg[name]
    return ctx.params[name]


def _load_file_config(path: Optional[str]) -> dict:
    if path is None:
        return {}
    if not os.path.exists(path):
        raise click.UsageError(f"config file not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise click.UsageError(f"config file is not valid JSON: {exc}")
    if not isinstance(doc, dict):
        raise click.UsageError("config file must hold a JSON object")
    return {str(key).replace("-", "_"): value for key, value in doc.items()}


def _load_dataset(path: str) -> LogitDataset:
    if path.endswith(".csv"):
        return load_logits_csv(path)
    return deserialize_dataset(path)


def _save_dataset(ds: LogitDataset, path: str, fmt: str) -> None:
    if fmt == "csv":
        save_logits_csv(ds, path)
    else:
        serialize_dataset(ds, path)


# Options shared by every command that builds a score function.
def score_options(command):
    decorators = [
        click.option("--score", type=click.Choice(["lac", "aps", "raps", "saps"]),
                     default="lac", show_default=True, help="Base score family."),
        click.option("--energy", is_flag=True, help="Modulate by the softplus energy scale."),
        click.option("--entropy", is_flag=True, help="Modulate by predictive entropy."),
        click.option("--prevalence", is_flag=True,
                     help="Prevalence-adjust using calibration class frequencies."),
        click.option("--T", "temp", type=float, default=1.0, show_default=True,
                     help="Softmax temperature."),
        click.option("--tau", type=float, default=1.0, show_default=True,
                     help="Free-energy temperature."),
        click.option("--beta", type=float, default=1.0, show_default=True,
                     help="Softplus sharpness."),
        click.option("--raps-lambda", type=float, default=0.2, show_default=True),
        click.option("--kreg", type=int, default=2, show_default=True),
        click.option("--saps-lambda", type=float, default=0.2, show_default=True),
    ]
    for dec in reversed(decorators):
        command = dec(command)
    return command


def synth_options(command):
    decorators = [
        click.option("--synth-n", type=int, default=None,
                     help="Generate this many synthetic samples instead of reading --logits."),
        click.option("--synth-k", type=int, default=10, show_default=True),
        click.option("--synth-margin", type=float, default=3.0, show_default=True),
        click.option("--synth-noise-sigma", type=float, default=1.0, show_default=True),
        click.option("--synth-scale-log-mu", type=float, default=1.0, show_default=True),
        click.option("--synth-scale-log-sigma", type=float, default=0.5, show_default=True),
        click.option("--synth-flip-temperature", type=float, default=0.0, show_default=True),
        click.option("--synth-imbalance-lambda", type=float, default=0.0, show_default=True),
        click.option("--synth-balanced-sampling", is_flag=True),
        click.option("--synth-ood-shrink", type=float, default=None,
                     help="Also draw an OOD stream with logits scaled by this factor."),
    ]
    for dec in reversed(decorators):
        command = dec(command)
    return command


def _build_params(eff) -> ScoreParams:
    if eff("energy") and eff("entropy"):
        raise click.UsageError("--energy and --entropy are mutually exclusive")
    modulation = "energy" if eff("energy") else ("entropy" if eff("entropy") else None)
    return ScoreParams(
        base_kind=eff("score"),
        T=eff("temp"),
        tau=eff("tau"),
        beta=eff("beta"),
        raps_lambda=eff("raps_lambda"),
        raps_kreg=eff("kreg"),
        saps_lambda=eff("saps_lambda"),
        modulation=modulation,
    )


def _build_synth(eff, seed: int = 0) -> Optional[SynthConfig]:
    if eff("synth_n") is None:
        return None
    return SynthConfig(
        class_count=eff("synth_k"),
        sample_count=eff("synth_n"),
        imbalance_lambda=eff("synth_imbalance_lambda"),
        margin=eff("synth_margin"),
        noise_sigma=eff("synth_noise_sigma"),
        scale_log_mu=eff("synth_scale_log_mu"),
        scale_log_sigma=eff("synth_scale_log_sigma"),
        flip_temperature=eff("synth_flip_temperature"),
        balanced_sampling=eff("synth_balanced_sampling"),
        seed=seed,
    )


def build_experiment_config(ctx: click.Context, config_file: Optional[str],
                            want_pairing: bool) -> ExperimentConfig:
    file_cfg = _load_file_config(config_file)
    eff = lambda name: _effective(ctx, file_cfg, name)
    try:
        logits_path = eff("logits")
        synth = _build_synth(eff)
        if (logits_path is None) == (synth is None):
            raise click.UsageError("give exactly one input: --logits or --synth-n")
        if logits_path is not None and not os.path.exists(logits_path):
            raise click.UsageError(f"logits file not found: {logits_path}")
        ood_path = eff("ood_logits")
        if ood_path is not None and not os.path.exists(ood_path):
            raise click.UsageError(f"OOD logits file not found: {ood_path}")
        if ood_path is not None and synth is not None:
            raise click.UsageError("--ood-logits requires --logits input")

        split_frac = eff("split_frac")
        if not 0.0 < split_frac < 1.0:
            raise click.UsageError(
                f"split fraction must lie in (0, 1), got {split_frac}")
        wsc_delta = eff("wsc_delta")
        if wsc_delta is not None and not 0.0 < wsc_delta <= 1.0:
            raise click.UsageError(f"wsc delta must lie in (0, 1], got {wsc_delta}")
        shrink = eff("synth_ood_shrink")
        if shrink is not None and synth is None:
            raise click.UsageError("--synth-ood-shrink requires synthetic input")

        params = _build_params(eff)
        return ExperimentConfig(
            synth=synth,
            logits_path=logits_path,
            ood_logits_path=ood_path,
            ood_shrink=shrink,
            params=params,
            alphas=parse_alphas(eff("alpha")),
            seeds=parse_seed_spec(eff("seeds")),
            split_frac=split_frac,
            wsc_delta=wsc_delta,
            paired_base=want_pairing and (params.modulation is not None
                                          or eff("prevalence")),
        )
    except DomainError as exc:
        raise click.UsageError(str(exc))


# The --prevalence flag is resolved per trial (empirical priors of that
# trial's calibration part), so ExperimentConfig does not carry priors.
def _wants_prevalence(ctx: click.Context, config_file: Optional[str]) -> bool:
    file_cfg = _load_file_config(config_file)
    return bool(_effective(ctx, file_cfg, "prevalence"))


def _modulated_name(params: ScoreParams, prevalence: bool) -> str:
    parts = []
    if params.modulation is not None:
        parts.append(params.modulation)
    if prevalence:
        parts.append("pa")
    parts.append(params.base_kind)
    return "-".join(parts)


# ----------------------------------------------------------------------
# Experiment runner
# ----------------------------------------------------------------------

def _thread_count() -> int:
    raw = os.environ.get("ECP_THREADS", "")
    if raw:
        try:
            n = int(raw)
        except ValueError:
            raise DomainError(f"ECP_THREADS must be an integer, got {raw!r}")
        if n < 1:
            raise DomainError("ECP_THREADS must be >= 1")
        return n
    return min(8, os.cpu_count() or 1)


def _trial_datasets(cfg: ExperimentConfig, seed: int):
    if cfg.synth is not None:
        ds = generate_synthetic(replace(cfg.synth, seed=seed))
    else:
        ds = _load_dataset(cfg.logits_path)
    cal, test = split_dataset(ds, SplitSpec(cfg.split_frac, seed))
    ood = None
    if cfg.ood_logits_path is not None:
        ood = _load_dataset(cfg.ood_logits_path)
    elif cfg.ood_shrink is not None:
        ood = generate_ood(replace(cfg.synth, seed=seed + _OOD_SEED_OFFSET),
                           cfg.ood_shrink)
    return cal, test, ood


def _run_single(cfg: ExperimentConfig, seed: int, alpha: float,
                params: ScoreParams, use_prevalence: bool) -> TrialResult:
    start = time.perf_counter()
    cal, test, ood = _trial_datasets(cfg, seed)
    if use_prevalence:
        params = replace(params, priors=empirical_priors(cal))
    pred = calibrate(cal, params, alpha, seed)
    sets = predict_batch(test, pred)
    report = evaluate_sets(test, sets, params, alpha, wsc_delta=cfg.wsc_delta)
    if ood is not None:
        sets_ood = predict_batch(ood, pred)
        report.config["ood"] = ood_desiderata_report(sets, sets_ood, small_k=2)
    return TrialResult(
        seed=seed,
        alpha=alpha,
        variant=variant_name(params),
        qhat=pred.qhat,
        report=report,
        wall_time=time.perf_counter() - start,
    )


def run_experiment(cfg: ExperimentConfig,
                   use_prevalence: bool = False) -> list[TrialResult]:
    """One trial per (seed, alpha, variant); the base variant is paired in
    when the configured score is modulated or prevalence-adjusted. Trials
    run on a thread pool but results keep submission order, so reports do
    not depend on the thread count."""
    jobs = []
    for alpha in cfg.alphas:
        for seed in cfg.seeds:
            jobs.append((seed, alpha, cfg.params, use_prevalence))
            if cfg.paired_base:
                base = replace(cfg.params, modulation=None, priors=None)
                jobs.append((seed, alpha, base, False))

    def run_one(job):
        seed, alpha, params, prev = job
        try:
            return _run_single(cfg, seed, alpha, params, prev)
        except Exception as exc:
            raise RuntimeError(
                f"trial seed={seed} alpha={alpha} failed: {exc}") from exc

    with ThreadPoolExecutor(max_workers=_thread_count()) as pool:
        return list(pool.map(run_one, jobs))


def _aggregate(trials: Sequence[TrialResult]) -> dict:
    """Mean and sample standard deviation per (variant, alpha) across
    seeds, recomputed from the per-trial rows."""
    keys = ["coverage", "avg_size", "macro_cov", "cov_gap_percent", "sscv", "wsc"]
    groups: dict[str, list[TrialResult]] = {}
    for tr in trials:
        groups.setdefault(f"{tr.variant}@{tr.alpha!r}", []).append(tr)
    out = {}
    for name in sorted(groups):
        block = {}
        rows = groups[name]
        for key in keys:
            values = [getattr(tr.report, key) for tr in rows]
            if any(v is None for v in values):
                continue
            mean = sum(values) / len(values)
            if len(values) > 1:
                var = sum((v - mean) ** 2 for v in values) / (len(values) - 1)
                sd = math.sqrt(var)
            else:
                sd = 0.0
            block[key] = {"mean": mean, "sd": sd}
        block["trials"] = len(rows)
        out[name] = block
    return out


def _paired_welch(trials: Sequence[TrialResult], cfg: ExperimentConfig,
                  modulated_variant: str) -> dict:
    """One-tailed Welch test per alpha: are the modulated per-trial average
    sizes smaller than the paired base ones?"""
    out = {}
    base_variant = variant_name(replace(cfg.params, modulation=None, priors=None))
    for alpha in cfg.alphas:
        mod = [tr.report.avg_size for tr in trials
               if tr.alpha == alpha and tr.variant == modulated_variant]
        base = [tr.report.avg_size for tr in trials
                if tr.alpha == alpha and tr.variant == base_variant]
        if len(mod) < 2 or len(base) < 2:
            continue
        out[repr(alpha)] = {
            "variant": modulated_variant,
            "base": base_variant,
            "variant_mean_size": sum(mod) / len(mod),
            "base_mean_size": sum(base) / len(base),
            "p_variant_smaller": welch_one_tailed_p(mod, base),
        }
    return out


# ----------------------------------------------------------------------
# Report emission
# ----------------------------------------------------------------------

def _config_document(cfg: ExperimentConfig) -> dict:
    synth_doc = None
    if cfg.synth is not None:
        synth_doc = {f.name: getattr(cfg.synth, f.name) for f in fields(cfg.synth)
                     if f.name not in ("priors", "seed")}
    params_doc = {f.name: getattr(cfg.params, f.name) for f in fields(cfg.params)
                  if f.name not in ("priors", "fixed_u")}
    return {
        "version": __version__,
        "synth": synth_doc,
        "logits": cfg.logits_path,
        "ood_logits": cfg.ood_logits_path,
        "ood_shrink": cfg.ood_shrink,
        "params": params_doc,
        "alphas": list(cfg.alphas),
        "seeds": list(cfg.seeds),
        "split_frac": cfg.split_frac,
        "wsc_delta": cfg.wsc_delta,
    }


def report_document(cfg: ExperimentConfig, trials: Sequence[TrialResult],
                    welch: Optional[dict] = None) -> dict:
    doc = {
        "config": _config_document(cfg),
        "trials": [
            {
                "seed": tr.seed,
                "alpha": tr.alpha,
                "variant": tr.variant,
                "qhat": tr.qhat.hex(),
                "report": tr.report.to_dict(),
            }
            for tr in trials
        ],
        "aggregate": _aggregate(trials),
    }
    if welch:
        doc["paired_welch"] = welch
    return doc


def write_report(doc: dict, path: str, fmt: str) -> None:
    """JSON keeps the full nested schema; CSV flattens to one row per
    (seed, alpha, variant) with the fixed column order in --help."""
    if fmt == "json":
        text = json.dumps(doc, sort_keys=True, indent=2) + "\n"
    else:
        lines = [",".join(_CSV_COLUMNS)]
        for tr in doc["trials"]:
            rep = tr["report"]
            row = [
                repr(tr["seed"]), repr(tr["alpha"]), tr["variant"],
                repr(rep["coverage"]), repr(rep["avg_size"]),
                repr(rep["macro_cov"]), repr(rep["cov_gap_percent"]),
                repr(rep["sscv"]),
                "" if rep["wsc"] is None else repr(rep["wsc"]),
                tr["qhat"],
            ]
            lines.append(",".join(row))
        text = "\n".join(lines) + "\n"
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


# ----------------------------------------------------------------------
# Commands
# ----------------------------------------------------------------------

@click.group()
@click.version_option(version=__version__, prog_name="ecp")
def cli():
    """Conformal classification over pre-computed logits, with optional
    energy, entropy, and prevalence adjustments."""


@cli.command()
@synth_options
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", required=True, type=str)
@click.option("--format", "fmt", type=click.Choice(["ecpl", "csv"]),
              default="ecpl", show_default=True)
def generate(seed, out, fmt, **kw):
    """Draw a synthetic logit dataset (or its OOD-shrunk variant)."""
    try:
        cfg = _build_synth(lambda name: kw[name], seed=seed)
        if cfg is None:
            raise click.UsageError("--synth-n is required")
        shrink = kw["synth_ood_shrink"]
        ds = (generate_ood(cfg, shrink) if shrink is not None
              else generate_synthetic(cfg))
    except DomainError as exc:
        raise click.UsageError(str(exc))
    _save_dataset(ds, out, fmt)
    click.echo(f"wrote {ds.sample_count} x {ds.class_count} logits to {out}")


@cli.command("train-toy")
@click.option("--rings-n", type=int, default=1000, show_default=True)
@click.option("--rings-inner", type=float, default=1.0, show_default=True)
@click.option("--rings-outer", type=float, default=2.5, show_default=True)
@click.option("--rings-noise", type=float, default=0.12, show_default=True)
@click.option("--hidden", type=int, default=64, show_default=True)
@click.option("--epochs", type=int, default=2000, show_default=True)
@click.option("--lr", type=float, default=0.05, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", required=True, type=str, help="Model JSON path.")
@click.option("--points-out", type=str, default=None,
              help="Optional CSV dump of the training points.")
def train_toy(rings_n, rings_inner, rings_outer, rings_noise, hidden, epochs,
              lr, seed, out, points_out):
    """Train the two-ring MLP and save its weights as JSON."""
    points, labels = make_rings(rings_n, rings_inner, rings_outer, rings_noise, seed)
    mlp, trace = train_mlp((points, labels), [2, hidden, hidden, 2], epochs, lr, seed)
    doc = {
        "widths": [2, hidden, hidden, 2],
        "weights": [w.tolist() for w in mlp.weights],
        "biases": [b.tolist() for b in mlp.biases],
    }
    with open(out, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, sort_keys=True)
        fh.write("\n")
    if points_out is not None:
        save_points_csv(points, labels, points_out)
    click.echo(f"final accuracy {trace['accuracy'][-1]:.4f}, "
               f"loss {trace['loss'][-1]:.6f}, model at {out}")


def _load_mlp(path: str) -> ToyMLP:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    return ToyMLP(weights=[np.asarray(w, dtype=float) for w in doc["weights"]],
                  biases=[np.asarray(b, dtype=float) for b in doc["biases"]])


@cli.command()
@click.option("--model", required=True, type=str, help="Model JSON from train-toy.")
@click.option("--bounds", default="-4,4,-4,4", show_default=True,
              help="x0,x1,y0,y1 rectangle.")
@click.option("--resolution", type=int, default=121, show_default=True)
@click.option("--tau", type=float, default=1.0, show_default=True)
@click.option("--out", required=True, type=str)
def landscape(model, bounds, resolution, tau, out):
    """Confidence / entropy / negative-free-energy surfaces on a grid."""
    parts = parse_float_list(bounds, "--bounds")
    if len(parts) != 4:
        raise click.UsageError("--bounds needs x0,x1,y0,y1")
    mlp = _load_mlp(model)
    try:
        grid = landscape_grid(mlp, (parts[0], parts[1], parts[2], parts[3]),
                              resolution, tau)
    except DomainError as exc:
        raise click.UsageError(str(exc))
    save_landscape_csv(grid, out)
    click.echo(f"wrote {resolution}x{resolution} landscape to {out}")


@cli.command("calibrate")
@score_options
@click.option("--logits", required=True, type=str, help="Calibration logits file.")
@click.option("--alpha", default="0.1", show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", required=True, type=str, help="Predictor JSON path.")
def calibrate_cmd(logits, alpha, seed, out, prevalence, **kw):
    """Calibrate a conformal predictor on a logits file."""
    alphas = parse_alphas(alpha)
    if len(alphas) != 1:
        raise click.UsageError("calibrate takes a single alpha")
    if not os.path.exists(logits):
        raise click.UsageError(f"logits file not found: {logits}")
    try:
        params = _build_params(lambda name: kw[name])
    except DomainError as exc:
        raise click.UsageError(str(exc))
    cal = _load_dataset(logits)
    if prevalence:
        params = replace(params, priors=empirical_priors(cal))
    pred = calibrate(cal, params, alphas[0], seed)
    save_predictor(pred, out)
    click.echo(f"qhat {pred.qhat!r} from {cal.sample_count} samples, saved to {out}")


@cli.command()
@click.option("--predictor", required=True, type=str)
@click.option("--logits", required=True, type=str)
@click.option("--out", required=True, type=str,
              help="CSV with columns index,size,labels; labels are |-joined.")
def predict(predictor, logits, out):
    """Emit prediction sets for a logits file."""
    if not os.path.exists(predictor):
        raise click.UsageError(f"predictor file not found: {predictor}")
    if not os.path.exists(logits):
        raise click.UsageError(f"logits file not found: {logits}")
    pred = load_predictor(predictor)
    test = _load_dataset(logits)
    sets = predict_batch(test, pred)
    with open(out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("index,size,labels\n")
        for i, s in enumerate(sets):
            fh.write(f"{i},{len(s)},{'|'.join(str(y) for y in s.labels)}\n")
    click.echo(f"wrote {len(sets)} prediction sets to {out}, "
               f"average size {average_set_size(sets):.4f}")


@cli.command()
@score_options
@synth_options
@click.option("--logits", type=str, default=None, help="Pre-computed logits file.")
@click.option("--ood-logits", type=str, default=None)
@click.option("--alpha", default="0.1", show_default=True,
              help="Comma-separated miscoverage levels.")
@click.option("--seeds", default="0", show_default=True,
              help="Trial seeds, e.g. 0..9 or 0,2,5.")
@click.option("--split-frac", type=float, default=0.5, show_default=True,
              help="Calibration fraction of each split.")
@click.option("--wsc-delta", type=float, default=None,
              help="Enable worst-slab coverage at this mass fraction.")
@click.option("--config", "config_file", type=str, default=None,
              help="JSON config file; explicit flags override its values.")
@click.option("--out", required=True, type=str)
@click.option("--format", "fmt", type=click.Choice(["json", "csv"]),
              default="json", show_default=True)
@click.pass_context
def evaluate(ctx, config_file, out, fmt, **_kw):
    """Run multi-seed conformal trials and write a metrics report.

    CSV column order: seed,alpha,variant,coverage,avg_size,macro_cov,
    cov_gap_percent,sscv,wsc,qhat (qhat is a C99 float hex literal).
    """
    cfg = build_experiment_config(ctx, config_file, want_pairing=True)
    prevalence = _wants_prevalence(ctx, config_file)
    trials = run_experiment(cfg, use_prevalence=prevalence)
    welch = None
    if cfg.paired_base:
        welch = _paired_welch(trials, cfg, _modulated_name(cfg.params, prevalence))
    write_report(report_document(cfg, trials, welch), out, fmt)
    click.echo(f"wrote {len(trials)} trials to {out}")


@cli.command()
@score_options
@synth_options
@click.option("--logits", type=str, default=None)
@click.option("--ood-logits", type=str, default=None)
@click.option("--alpha", default="0.1", show_default=True)
@click.option("--T-grid", "t_grid", default="1.0", show_default=True,
              help="Comma-separated softmax temperatures.")
@click.option("--tau-grid", default="1.0", show_default=True)
@click.option("--beta-grid", default="1.0", show_default=True)
@click.option("--seeds", default="0", show_default=True)
@click.option("--split-frac", type=float, default=0.5, show_default=True)
@click.option("--wsc-delta", type=float, default=None)
@click.option("--config", "config_file", type=str, default=None)
@click.option("--select", "selector",
              type=click.Choice(["min-size-subject-to-coverage"]), default=None,
              help="Print the best grid cell under the chosen rule.")
@click.option("--out", required=True, type=str,
              help="Long-form CSV: T,tau,alpha,beta,variant,avg_size,coverage.")
@click.pass_context
def sweep(ctx, config_file, t_grid, tau_grid, beta_grid, selector, out, **_kw):
    """Cross-product sweep over alpha x T x tau x beta."""
    file_cfg = _load_file_config(config_file)
    ts = parse_float_list(str(_effective(ctx, file_cfg, "t_grid")), "--T-grid")
    taus = parse_float_list(str(_effective(ctx, file_cfg, "tau_grid")), "--tau-grid")
    betas = parse_float_list(str(_effective(ctx, file_cfg, "beta_grid")),
                             "--beta-grid")
    base_cfg = build_experiment_config(ctx, config_file, want_pairing=False)
    prevalence = _wants_prevalence(ctx, config_file)

    cells = [(t, tau, beta) for t in ts for tau in taus for beta in betas]
    rows = []
    for t, tau, beta in cells:
        cfg = replace(base_cfg, params=replace(base_cfg.params, T=t, tau=tau,
                                               beta=beta))
        trials = run_experiment(cfg, use_prevalence=prevalence)
        for alpha in cfg.alphas:
            sub = [tr for tr in trials if tr.alpha == alpha]
            cov = sum(tr.report.coverage for tr in sub) / len(sub)
            size = sum(tr.report.avg_size for tr in sub) / len(sub)
            rows.append({"T": t, "tau": tau, "alpha": alpha, "beta": beta,
                         "variant": sub[0].variant, "avg_size": size,
                         "coverage": cov})

    lines = ["T,tau,alpha,beta,variant,avg_size,coverage"]
    for r in rows:
        lines.append(f"{r['T']!r},{r['tau']!r},{r['alpha']!r},{r['beta']!r},"
                     f"{r['variant']},{r['avg_size']!r},{r['coverage']!r}")
    with open(out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    click.echo(f"wrote {len(rows)} sweep rows to {out}")

    if selector is not None:
        for alpha in base_cfg.alphas:
            ok = [r for r in rows
                  if r["alpha"] == alpha and r["coverage"] >= 1.0 - alpha]
            if not ok:
                click.echo(f"alpha={alpha}: no cell meets coverage {1.0 - alpha}")
                continue
            best = min(ok, key=lambda r: (r["avg_size"], r["T"], r["tau"], r["beta"]))
            click.echo(f"alpha={alpha}: best T={best['T']} tau={best['tau']} "
                       f"beta={best['beta']} avg_size={best['avg_size']:.4f} "
                       f"coverage={best['coverage']:.4f}")


@cli.command()
@score_options
@synth_options
@click.option("--logits", type=str, default=None)
@click.option("--ood-logits", type=str, default=None)
@click.option("--alpha", default="0.1", show_default=True)
@click.option("--seeds", default="0..9", show_default=True)
@click.option("--split-frac", type=float, default=0.5, show_default=True)
@click.option("--wsc-delta", type=float, default=None)
@click.option("--config", "config_file", type=str, default=None)
@click.option("--out", type=str, default=None, help="Optional JSON report path.")
@click.pass_context
def ttest(ctx, config_file, out, **_kw):
    """Paired one-tailed Welch test: modulated vs base average set size."""
    cfg = build_experiment_config(ctx, config_file, want_pairing=True)
    prevalence = _wants_prevalence(ctx, config_file)
    if not cfg.paired_base:
        raise click.UsageError(
            "ttest needs a modulated or prevalence-adjusted variant "
            "(--energy, --entropy, or --prevalence)")
    if len(cfg.seeds) < 2:
        raise click.UsageError("ttest needs at least two seeds")
    trials = run_experiment(cfg, use_prevalence=prevalence)
    welch = _paired_welch(trials, cfg, _modulated_name(cfg.params, prevalence))
    for alpha_key in sorted(welch):
        block = welch[alpha_key]
        click.echo(f"alpha={alpha_key}: {block['variant']} mean size "
                   f"{block['variant_mean_size']:.4f} vs {block['base']} "
                   f"{block['base_mean_size']:.4f}, one-tailed p = "
                   f"{block['p_variant_smaller']:.6g}")
    if out is not None:
        write_report(report_document(cfg, trials, welch), out, "json")
        click.echo(f"wrote report to {out}")


def main(argv=None) -> int:
    """Console entry point with the documented exit codes: 0 success,
    1 runtime or I/O failure, 2 usage error."""
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.UsageError as exc:
        exc.show()
        return 2
    except click.ClickException as exc:
        exc.show()
        return exc.exit_code
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return 1
    except (ValueError, OSError, RuntimeError) as exc:
        click.echo(f"error: {exc}", err=True)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
