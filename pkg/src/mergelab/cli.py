"""mergelab command line.

Exit status: 0 on success, 1 on usage errors (bad flags, alpha out of
range), 2 on data errors (malformed or incompatible checkpoints).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import __version__
from .evaluation import INTENSITY_ALPHAS, content_error_rate, intensity_rank_eval, secs_curve
from .exceptions import DataError, IncompatibleCheckpoints, MergeLabError
from .experiment import (
    Recipe,
    derive_seed,
    read_config_file,
    run_experiment,
    threads_from_env,
    train_base_models,
    write_reports,
)
from .merge import IntTensorPolicy, KeyMismatch, MergePolicy, SweepSpec, check_compatibility, merge_pair, merge_soup, sweep
from .tensor_store import Checkpoint, load_checkpoint, save_checkpoint
from .toy.data import AttributeProfile, ContentSpec, generate_dataset, generate_sentences, midpoint_profile
from .toy.model import ToyModelConfig

logger = logging.getLogger("mergelab")


class UsageError(MergeLabError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _merge_flags(p, alpha=False):
    if alpha:
        p.add_argument("--alpha", type=float, required=True, help="merging coefficient (0 = first model, 1 = second)")
        p.add_argument("--extrapolate", action="store_true", help="allow alpha outside [0, 1]")
    p.add_argument("--policy", choices=[k.value for k in KeyMismatch], default="strict", help="key mismatch handling")
    _int_flag(p)


def _int_flag(p):
    p.add_argument("--int-tensor", choices=[k.value for k in IntTensorPolicy], default="require-equal")


def _grid_flags(p, default_step):
    g = p.add_mutually_exclusive_group()
    g.add_argument("--steps", type=float, default=None, help=f"alpha step size (default {default_step})")
    g.add_argument("--alphas", default=None, help="comma-separated alphas, from 0 to 1")


def _eval_flags(p):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sentences", type=int, default=16, help="number of evaluation sentences")
    p.add_argument("--sentence-length", type=int, default=32)
    p.add_argument("--csv", default=None, help="write CSV here instead of stdout")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mergelab", description="Checkpoint merging and interpolation evaluation.", allow_abbrev=False)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("inspect", help="list tensors and metadata of a checkpoint", allow_abbrev=False)
    p.add_argument("path")

    p = sub.add_parser("merge", help="interpolate two checkpoints", allow_abbrev=False)
    p.add_argument("a")
    p.add_argument("b")
    _merge_flags(p, alpha=True)
    p.add_argument("-o", "--output", required=True)

    p = sub.add_parser("soup", help="uniform average of k checkpoints", allow_abbrev=False)
    p.add_argument("models", nargs="+")
    _int_flag(p)
    p.add_argument("-o", "--output", required=True)

    p = sub.add_parser("sweep", help="write one merged checkpoint per alpha", allow_abbrev=False)
    p.add_argument("a")
    p.add_argument("b")
    _grid_flags(p, 0.1)
    _merge_flags(p)
    p.add_argument("-o", "--output", required=True, help="output directory")

    p = sub.add_parser("train-toy", help="pretrain and fine-tune the two toy base models", allow_abbrev=False)
    p.add_argument("--config", default=None, help="key=value recipe file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", required=True, help="output directory")

    p = sub.add_parser("eval-secs", help="embedding similarity curve over a sweep", allow_abbrev=False)
    p.add_argument("a")
    p.add_argument("b")
    _grid_flags(p, 0.1)
    _merge_flags(p)
    _eval_flags(p)

    p = sub.add_parser("eval-wer", help="content error rate over a sweep", allow_abbrev=False)
    p.add_argument("a")
    p.add_argument("b")
    _grid_flags(p, 0.1)
    _merge_flags(p)
    _eval_flags(p)
    p.add_argument("--config", default=None, help="recipe file supplying profiles when checkpoints lack them")

    p = sub.add_parser("eval-intensity", help="simulated-rater intensity ranking", allow_abbrev=False)
    p.add_argument("neutral")
    p.add_argument("emotive")
    _merge_flags(p)
    _eval_flags(p)
    p.add_argument("--trials", type=int, default=50)
    p.add_argument("--sigma-frac", type=float, default=0.25, help="rater noise as a fraction of the endpoint gap")

    p = sub.add_parser("demo", help="run the full interpolation experiment", allow_abbrev=False)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", default=None)
    p.add_argument("--trials", type=int, default=50)
    p.add_argument("--sigma-frac", type=float, default=0.25)
    p.add_argument("--save-models", action="store_true", help="also write the trained base checkpoints")
    p.add_argument("-o", "--output", default="mergelab-demo", help="output directory")
    return parser


def _policy(args, alpha=0.0) -> MergePolicy:
    return MergePolicy(alpha, args.policy, args.int_tensor, getattr(args, "extrapolate", False))


def _grid(args, default_step) -> SweepSpec:
    if args.alphas is not None:
        try:
            values = [float(x) for x in args.alphas.split(",") if x.strip()]
        except ValueError:
            raise UsageError(f"--alphas must be a comma-separated list of numbers, got {args.alphas!r}") from None
        return SweepSpec.explicit(values)
    return SweepSpec.by_step(args.steps if args.steps is not None else default_step)


def _load_pair(args, first="a", second="b") -> tuple[Checkpoint, Checkpoint]:
    a, b = load_checkpoint(getattr(args, first)), load_checkpoint(getattr(args, second))
    if args.policy == "strict":
        report = check_compatibility(a, b)
        if not report.compatible:
            raise IncompatibleCheckpoints(f"{getattr(args, first)} vs {getattr(args, second)}: {report.describe()}", report)
    return a, b


def _emit_csv(text: str, path) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)
        print(f"wrote {path}")


def _eval_tokens(args, model: Checkpoint):
    vocab = ToyModelConfig.from_checkpoint(model).vocab_size
    spec = ContentSpec(vocab, args.sentence_length, args.sentences, derive_seed(args.seed, "eval"), 1)
    return generate_sentences(spec)


def _alpha_name(alpha: float) -> str:
    return f"alpha_{alpha:.6f}.ckpt"


def cmd_inspect(args) -> None:
    cp = load_checkpoint(args.path)
    print(f"file: {args.path}")
    print(f"tensors: {len(cp)} ({cp.nbytes} bytes)")
    print(f"arch_fingerprint: {cp.fingerprint}")
    print("metadata:")
    for key, value in cp.metadata.items():
        print(f"  {key} = {value}")
    print("tensors:")
    width = max((len(n) for n in cp), default=0)
    for name in cp:
        meta = cp.meta(name)
        print(f"  {name:<{width}}  {meta.dtype.value}  {list(meta.shape)}  [{meta.data_offsets[0]}, {meta.data_offsets[1]})")


def cmd_merge(args) -> None:
    policy = _policy(args, args.alpha)  # validates alpha before touching files
    a, b = _load_pair(args)
    merged = merge_pair(a, b, policy)
    save_checkpoint(merged, args.output)
    print(f"wrote {args.output} (alpha={policy.alpha!r}, {len(merged)} tensors, dropped {merged.metadata['merge.dropped_keys']})")


def cmd_soup(args) -> None:
    models = [load_checkpoint(p) for p in args.models]
    soup = merge_soup(models, args.int_tensor)
    save_checkpoint(soup, args.output)
    print(f"wrote {args.output} (k={len(models)}, {len(soup)} tensors)")


def cmd_sweep(args) -> None:
    spec = _grid(args, 0.1)
    policy = _policy(args)
    a, b = _load_pair(args)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    for alpha, merged in sweep(a, b, spec, policy, threads=threads_from_env()):
        path = out / _alpha_name(alpha)
        save_checkpoint(merged, path)
        print(f"wrote {path}")


def _recipe(args) -> Recipe:
    return Recipe.from_mapping(read_config_file(args.config)) if args.config else Recipe()


def cmd_train_toy(args) -> None:
    recipe = _recipe(args)
    bases = train_base_models(recipe, args.seed)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    for name in ("pretrained", "base_a", "base_b"):
        cp = getattr(bases, name)
        save_checkpoint(cp, out / f"{name}.ckpt")
        print(f"wrote {out / f'{name}.ckpt'} (profile {cp.metadata['train.profile_id']}, mse {float(cp.metadata['train.final_mse']):.6f})")


def cmd_eval_secs(args) -> None:
    spec = _grid(args, 0.1)
    policy = _policy(args)
    a, b = _load_pair(args)
    curve = secs_curve(a, b, spec, _eval_tokens(args, a), policy, threads=threads_from_env())
    _emit_csv(curve.to_csv(), args.csv)
    print(f"max_violation={curve.max_violation:.6f} max_jump={curve.max_jump:.6f}", file=sys.stderr)


def _profile_of(cp: Checkpoint, path, fallback: AttributeProfile | None) -> AttributeProfile:
    text = cp.metadata.get("train.profile")
    if text is not None:
        return AttributeProfile.from_string(text)
    if fallback is not None:
        return fallback
    raise DataError(f"{path}: no train.profile metadata; pass --config to supply the profiles")


def cmd_eval_wer(args) -> None:
    spec = _grid(args, 0.1)
    policy = _policy(args)
    a, b = _load_pair(args)
    recipe = _recipe(args) if args.config else None
    pa = _profile_of(a, args.a, recipe.profile_a if recipe else None)
    pb = _profile_of(b, args.b, recipe.profile_b if recipe else None)
    config = ToyModelConfig.from_checkpoint(a)
    templates = midpoint_profile(pa, pb)
    content = ContentSpec(config.vocab_size, args.sentence_length, args.sentences, derive_seed(args.seed, "eval"), config.feature_dim)
    held_out = generate_dataset(templates, content)
    lines = ["alpha,error_rate"]
    for alpha, merged in sweep(a, b, spec, policy, threads=threads_from_env()):
        lines.append(f"{alpha:.6f},{content_error_rate(merged, held_out, templates):.6f}")
    _emit_csv("\n".join(lines) + "\n", args.csv)


def cmd_eval_intensity(args) -> None:
    policy = _policy(args)
    neutral, emotive = _load_pair(args, "neutral", "emotive")
    tokens = _eval_tokens(args, neutral)
    models = [m for _, m in sweep(neutral, emotive, SweepSpec.explicit(INTENSITY_ALPHAS), policy)]
    noiseless = intensity_rank_eval(models, tokens, 1, 0.0, 0)
    gap = noiseless.estimates[-1] - noiseless.estimates[0]
    table = intensity_rank_eval(models, tokens, args.trials, args.sigma_frac * gap, derive_seed(args.seed, "raters"))
    _emit_csv(table.to_csv(), args.csv)


def cmd_demo(args) -> None:
    recipe = _recipe(args)
    result = run_experiment(recipe, args.seed, trials=args.trials, sigma_frac=args.sigma_frac, threads=threads_from_env())
    paths = write_reports(result, args.output, save_models=args.save_models)
    gate = result.separation
    rates = [r for _, r in result.error_rates]
    print(f"seed {args.seed}: separation gate {'PASS' if gate.passed else 'FAIL'} (pitch gap {gate.gap:.4f}, need {gate.required:.4f})")
    print(f"similarity curve: max_violation={result.curve.max_violation:.6f} max_jump={result.curve.max_jump:.6f}")
    print(f"content error: base A {rates[0]:.4f}, base B {rates[-1]:.4f}, worst merge {max(rates):.4f}")
    print("intensity estimates: " + ", ".join(f"{e:.4f}" for e in result.intensity_estimates))
    print(f"average ranks (sigma={result.noise_sigma:.4f}, {result.ranks.trials} trials): " + ", ".join(f"{r:.2f}" for r in result.ranks.avg_rank))
    for name, path in paths.items():
        print(f"wrote {path}")


COMMANDS = {
    "inspect": cmd_inspect,
    "merge": cmd_merge,
    "soup": cmd_soup,
    "sweep": cmd_sweep,
    "train-toy": cmd_train_toy,
    "eval-secs": cmd_eval_secs,
    "eval-wer": cmd_eval_wer,
    "eval-intensity": cmd_eval_intensity,
    "demo": cmd_demo,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except IncompatibleCheckpoints as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (DataError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except MergeLabError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
