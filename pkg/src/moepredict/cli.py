"""Command-line entry point.

Subcommands: gen, train, eval, compare-losses, simulate, report. Every
command accepts --config / --seed / --out plus its own overrides, and
prints one deterministic summary line so runs can be golden-file
tested. Exit codes: 0 success, 2 configuration error, 3 data error,
4 I/O error.
"""

from __future__ import annotations

import functools
import os
import sys
from pathlib import Path

import click

from . import __version__
from .config import build_teacher, build_train_config, load_config
from .core import activation_entropy
from .exceptions import ConfigurationError, DataError
from .metrics import EvalResult, evaluate
from .pipesim import get_profile, savings_report, savings_to_csv
from .predictor import load_model, save_model
from .synthgen import (
    TraceFile,
    expert_activation_counts,
    generate_dataset,
    read_trace,
    write_trace,
)
from .trainer import compare_losses, comparison_to_csv, train

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_IO = 4

PROFILE_DIR_ENV = "MOEPREDICT_PROFILES"


def _handle_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (ConfigurationError, ValueError) as err:
            click.echo(f"configuration error: {err}", err=True)
            sys.exit(EXIT_CONFIG)
        except DataError as err:
            click.echo(f"data error: {err}", err=True)
            sys.exit(EXIT_DATA)
        except OSError as err:
            click.echo(f"i/o error: {err}", err=True)
            sys.exit(EXIT_IO)

    return wrapper


def _load(ctx) -> dict:
    overrides = {}
    if ctx.obj["seed"] is not None:
        overrides["seed"] = ctx.obj["seed"]
    if ctx.obj["out"] is not None:
        overrides["out_dir"] = ctx.obj["out"]
    return load_config(ctx.obj["config"], overrides)


def _out_dir(cfg) -> Path:
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


@click.group()
@click.version_option(__version__)
@click.option("--config", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--seed", type=int, default=None, help="Override the config seed.")
@click.option("--out", type=click.Path(file_okay=False), default=None)
@click.pass_context
def main(ctx, config, seed, out):
    """Expert prediction lab: data generation, training, evaluation,
    and prefetch latency simulation."""
    ctx.ensure_object(dict)
    ctx.obj.update(config=config, seed=seed, out=out)


@main.command()
@click.option("--n-train", type=int, default=None)
@click.option("--n-eval", type=int, default=None)
@click.pass_context
@_handle_errors
def gen(ctx, n_train, n_eval):
    """Generate train/eval trace files from the configured teacher."""
    cfg = _load(ctx)
    if n_train is not None:
        cfg["data"]["n_train"] = n_train
    if n_eval is not None:
        cfg["data"]["n_eval"] = n_eval
    teacher = build_teacher(cfg)
    total = int(cfg["data"]["n_train"]) + int(cfg["data"]["n_eval"])
    full = generate_dataset(teacher, total)
    n_tr = int(cfg["data"]["n_train"])
    train_part = TraceFile(
        full.hidden_dim,
        full.n_experts,
        full.k,
        full.activations[:n_tr],
        full.true_scores[:n_tr],
        full.true_topk[:n_tr],
    )
    eval_part = TraceFile(
        full.hidden_dim,
        full.n_experts,
        full.k,
        full.activations[n_tr:],
        full.true_scores[n_tr:],
        full.true_topk[n_tr:],
    )
    out = _out_dir(cfg)
    train_path, eval_path = out / "train.moepa", out / "eval.moepa"
    write_trace(train_path, train_part)
    write_trace(eval_path, eval_part)
    entropy = activation_entropy(expert_activation_counts(train_part))
    click.echo(
        f"gen: d={full.hidden_dim} E={full.n_experts} k={full.k} "
        f"n_train={len(train_part)} n_eval={len(eval_part)} "
        f"entropy={entropy:.4f} out={out}"
    )


@main.command(name="train")
@click.option("--trace", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--epochs", type=int, default=None)
@click.option("--arch", type=click.Choice(["arch1", "arch2"]), default=None)
@click.option(
    "--loss",
    type=click.Choice(["mse", "wbce", "focal", "ranking"]),
    default=None,
)
@click.option("--ranking-lambda", type=float, default=None)
@click.option("--margin", type=float, default=None)
@click.pass_context
@_handle_errors
def train_cmd(ctx, trace, epochs, arch, loss, ranking_lambda, margin):
    """Train a predictor on a trace file; writes checkpoint + report CSV."""
    cfg = _load(ctx)
    if epochs is not None:
        cfg["train"]["epochs"] = epochs
    if arch is not None:
        cfg["train"]["arch"] = arch
    if loss is not None:
        cfg["train"]["loss"]["family"] = loss
    if ranking_lambda is not None:
        cfg["train"]["loss"]["ranking_lambda"] = ranking_lambda
    if margin is not None:
        cfg["train"]["loss"]["margin"] = margin
    out = _out_dir(cfg)
    trace_path = Path(trace) if trace else out / "train.moepa"
    data = read_trace(trace_path)
    model, report = train(build_train_config(cfg), data)
    ckpt = out / "model.ckpt"
    save_model(model, ckpt)
    report.to_csv(out / "train_report.csv")
    final = report.final
    click.echo(
        f"train: arch={model.arch} loss={cfg['train']['loss']['family']} "
        f"epochs={final.epoch} train_loss={final.train_loss:.6f} "
        f"exact_match={final.exact_match:.4f} top1={final.top1:.4f} "
        f"overprov[{report.overprov_m}]={final.overprov:.4f}"
    )


@main.command(name="eval")
@click.option("--checkpoint", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--trace", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--m", "m_list", type=int, multiple=True)
@click.pass_context
@_handle_errors
def eval_cmd(ctx, checkpoint, trace, m_list):
    """Evaluate a checkpoint on a trace; writes eval CSV + JSON."""
    cfg = _load(ctx)
    out = _out_dir(cfg)
    ckpt_path = Path(checkpoint) if checkpoint else out / "model.ckpt"
    trace_path = Path(trace) if trace else out / "eval.moepa"
    model = load_model(ckpt_path)
    data = read_trace(trace_path)
    chosen = list(m_list) or cfg["eval"]["m_list"]
    result = evaluate(model, data, m_list=chosen)
    result.to_csv(out / "eval.csv")
    result.to_json(out / "eval.json")
    over = " ".join(
        f"overprov[{m}]={result.overprov[m]:.4f}" for m in sorted(result.overprov)
    )
    click.echo(
        f"eval: n={result.n_samples} exact_match={result.exact_match:.4f} "
        f"top1={result.top1:.4f} {over}"
    )


@main.command(name="compare-losses")
@click.option("--trace", type=click.Path(exists=True, dir_okay=False), default=None)
@click.pass_context
@_handle_errors
def compare_losses_cmd(ctx, trace):
    """Single-epoch loss/architecture grid; writes an 8-row CSV."""
    cfg = _load(ctx)
    out = _out_dir(cfg)
    trace_path = Path(trace) if trace else out / "train.moepa"
    data = read_trace(trace_path)
    rows = compare_losses(build_train_config(cfg), data)
    comparison_to_csv(rows, out / "compare_losses.csv")
    best = max(rows, key=lambda r: r["exact_match"])
    click.echo(
        f"compare-losses: cells={len(rows)} "
        f"best={best['loss']}/{best['arch']} exact_match={best['exact_match']:.4f}"
    )


@main.command()
@click.option("--accuracy", type=float, default=None)
@click.option(
    "--eval-json",
    type=click.Path(exists=True, dir_okay=False),
    default=None,
    help="Read the accuracy from an eval result instead of --accuracy.",
)
@click.option("--baseline", type=float, default=None)
@click.option("--tokens", type=int, default=None)
@click.option("--profile", "profiles", multiple=True)
@click.option("--source", type=click.Choice(["memory", "disk"]), default=None)
@click.option("--k-experts", type=int, default=None)
@click.pass_context
@_handle_errors
def simulate(ctx, accuracy, eval_json, baseline, tokens, profiles, source, k_experts):
    """Convert prediction accuracy into expected loading-time savings."""
    cfg = _load(ctx)
    sim = cfg["sim"]
    if accuracy is None and eval_json is None:
        raise ConfigurationError("provide --accuracy or --eval-json")
    if eval_json is not None:
        acc = EvalResult.from_json(eval_json).exact_match
    else:
        acc = accuracy
    base = baseline if baseline is not None else float(sim["baseline_accuracy"])
    n_tokens = tokens if tokens is not None else int(sim["n_tokens"])
    src = source or sim["source"]
    k = k_experts if k_experts is not None else int(sim["k"])
    names = list(profiles) or list(sim["profiles"])
    profile_dir = os.environ.get(PROFILE_DIR_ENV)
    resolved = [get_profile(name, profile_dir) for name in names]
    report = savings_report(acc, base, resolved, n_tokens, source=src, k=k)
    out = _out_dir(cfg)
    savings_to_csv(report, out / "savings.csv")
    header = (
        f"{'profile':<12} {'source':<7} {'full_ms':>8} {'ours_ms/tok':>12} "
        f"{'base_ms/tok':>12} {'delta/tok':>10} {'total_ms':>10}"
    )
    click.echo(header)
    for r in report["rows"]:
        click.echo(
            f"{r['profile']:<12} {r['source']:<7} {r['full_load_ms']:>8.4f} "
            f"{r['ms_per_token_ours']:>12.4f} {r['ms_per_token_baseline']:>12.4f} "
            f"{r['delta_ms_per_token']:>10.4f} {r['total_delta_ms']:>10.1f}"
        )
    lo, hi = report["span_ms_per_token"]
    totals = " ".join(
        f"total_saved_ms[{r['profile']}]={r['total_delta_ms']:.1f}"
        for r in report["rows"]
    )
    click.echo(
        f"simulate: acc={acc:.4f} baseline={base:.4f} source={src} k={k} "
        f"tokens={n_tokens} ms_per_token_span={lo:.4f}-{hi:.4f} {totals}"
    )


@main.command()
@click.option(
    "--eval-json", type=click.Path(exists=True, dir_okay=False), required=True
)
@click.pass_context
@_handle_errors
def report(ctx, eval_json):
    """Human-readable view of an eval result, tier profile included."""
    result = EvalResult.from_json(eval_json)
    click.echo(f"samples:        {result.n_samples}")
    click.echo(f"experts:        {result.n_experts} (k={result.k})")
    click.echo(f"exact match:    {result.exact_match:.4f}")
    click.echo(f"top-1 hit:      {result.top1:.4f}")
    for m in sorted(result.overprov):
        click.echo(
            f"overprov m={m:<3d} hit={result.overprov[m]:.4f} "
            f"recall={result.overprov_recall[m]:.4f}"
        )
    if result.tier_profile is not None:
        profile = result.tier_profile
        head = " ".join(f"{v:.4f}" for v in profile[: min(8, len(profile))])
        click.echo(f"tier profile:   {head}{' ...' if len(profile) > 8 else ''}")
    hits = result.per_expert_hits
    truth = result.per_expert_truth
    worst = min(
        range(len(hits)),
        key=lambda j: (hits[j] / truth[j]) if truth[j] else 1.0,
    )
    ratio = hits[worst] / truth[worst] if truth[worst] else 1.0
    click.echo(f"weakest expert: {worst} (hit {hits[worst]}/{truth[worst]} = {ratio:.4f})")


if __name__ == "__main__":
    main()
