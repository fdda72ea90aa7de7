"""``nmc`` command-line entry point.

Exit codes: 0 on success, 1 on a runtime failure (divergence, empty training
set), 2 on a usage, configuration or input-file error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from threadpoolctl import threadpool_limits

from . import errors
from .baselines import bias_baseline, mean_baseline, mf_train
from .checks import run_gradchecks
from .data import (
    AREAS,
    SplitSpec,
    load_ratings,
    load_split,
    make_split,
    save_id_map,
    save_ratings_csv,
    save_split,
    synthetic_low_rank,
)
from .evaluate import evaluate
from .model import BranchConfig, build_model, load_model, ml1m_config, netflix_config, save_model
from .train import TrainConfig, train

log = logging.getLogger("nmc")


class UsageError(Exception):
    """Bad flags or config; maps to exit code 2."""


USAGE_ERRORS = (
    UsageError,
    FileNotFoundError,
    IsADirectoryError,
    errors.ParseError,
    errors.DuplicateEntryError,
    errors.RangeError,
    errors.EmptyMatrixError,
    errors.SplitError,
    errors.ShapeError,
    errors.InputTooShortError,
    errors.ConfigError,
    errors.FormatError,
    errors.CorruptionError,
)

# -- run configuration ---------------------------------------------------------


def _ints(text):
    return tuple(int(t) for t in text.replace(" ", "").split(",") if t)


def _stages(text):
    # "32:8:4;16:4:2" -> ((32, 8, 4), (16, 4, 2)); empty or "none" -> no stages
    text = text.replace(" ", "")
    if text in ("", "none"):
        return ()
    return tuple(tuple(int(t) for t in st.split(":")) for st in text.split(";") if st)


def _bool(text):
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


_BRANCH_KEYS = {"fc_sizes": _ints, "summarization": _stages, "dropout_p": float}

CONFIG_KEYS = {
    # data
    "data": str, "format": str, "alpha": float, "beta": float, "split": str,
    # model
    "preset": str, "model_seed": int, "norm_floor": float, "bn_momentum": float, "bn_eps": float,
    **_BRANCH_KEYS,
    **{f"{side}.{k}": f for side in ("row", "col") for k, f in _BRANCH_KEYS.items()},
    # training
    "batch_size": int, "max_epochs": int, "lr": float, "beta1": float, "beta2": float,
    "eps": float, "val_frac": float, "patience": int, "seed": int, "checkpoint_path": str,
    "mask_target": _bool, "input_dropout": float,
    # outputs
    "out_model": str, "out_history": str,
}

# desk-scale default architecture; "preset = ml1m" or "netflix" selects the published ones
DEFAULT_MODEL = {
    "fc_sizes": (256, 128, 128),
    "summarization": ((32, 8, 4),),
    "dropout_p": 0.6,
}


def parse_config_text(text, source="config") -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment, unknown keys are rejected."""
    out = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise UsageError(f"{source} line {n}: expected key = value")
        out[key] = _convert(key, value, f"{source} line {n}")
    return out


def _convert(key, value, where):
    if key not in CONFIG_KEYS:
        raise UsageError(f"{where}: unknown config key {key!r}")
    try:
        return CONFIG_KEYS[key](value)
    except ValueError as exc:
        raise UsageError(f"{where}: bad value for {key!r}: {exc}") from None


def load_run_config(path, overrides=()) -> dict:
    cfg = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise UsageError(f"config file not found: {path}")
        cfg = parse_config_text(p.read_text(encoding="utf-8"), str(path))
    for item in overrides:
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--set expects key=value, got {item!r}")
        cfg[key.strip()] = _convert(key.strip(), value.strip(), "--set")
    return cfg


def branch_configs(cfg: dict, m_I: int, n_I: int) -> tuple[BranchConfig, BranchConfig]:
    preset = cfg.get("preset", "none")
    if preset == "ml1m":
        base = {"row": ml1m_config(m_I), "col": ml1m_config(n_I, column=True)}
    elif preset == "netflix":
        base = {"row": netflix_config(m_I), "col": netflix_config(n_I, column=True)}
    elif preset == "none":
        base = None
    else:
        raise UsageError(f"unknown preset {preset!r} (expected none, ml1m or netflix)")
    out = []
    for side, length in (("row", m_I), ("col", n_I)):
        fields = {}
        for key in _BRANCH_KEYS:
            if f"{side}.{key}" in cfg:
                fields[key] = cfg[f"{side}.{key}"]
            elif key in cfg:
                fields[key] = cfg[key]
            elif base is not None:
                fields[key] = getattr(base[side], key)
            else:
                fields[key] = DEFAULT_MODEL[key]
        out.append(BranchConfig(length, fields["fc_sizes"], fields["summarization"], fields["dropout_p"]))
    return out[0], out[1]


def train_config(cfg: dict) -> TrainConfig:
    keys = ("batch_size", "max_epochs", "lr", "beta1", "beta2", "eps", "val_frac", "patience",
            "seed", "checkpoint_path", "mask_target", "input_dropout")
    try:
        return TrainConfig(**{k: cfg[k] for k in keys if k in cfg})
    except ValueError as exc:
        raise UsageError(str(exc)) from None


# -- shared helpers ----------------------------------------------------------


def _require(value, flag):
    if value is None:
        raise UsageError(f"missing {flag}")
    return value


def _existing(path, what):
    if not Path(path).is_file():
        raise UsageError(f"{what} not found: {path}")
    return path


def _load_data(path, fmt, alpha=1.0, beta=5.0):
    if fmt not in ("movielens-dat", "csv"):
        raise UsageError(f"unknown format {fmt!r} (expected movielens-dat or csv)")
    return load_ratings(_existing(path, "input file"), fmt, alpha, beta)


def _load_data_and_split(data_path, fmt, split_path, alpha=1.0, beta=5.0):
    data = _load_data(data_path, fmt, alpha, beta)
    split = load_split(_existing(split_path, "split file"))
    split.check_compatible(data)
    return data, split


def _check_model_matches(model, split):
    digest = model.metadata.get("split_digest")
    if digest is not None and digest != split.digest():
        raise UsageError("model was trained on a different split")
    if (model.row_cfg.input_len, model.col_cfg.input_len) != (split.m_I, split.n_I):
        raise UsageError(
            f"model expects inputs of length ({model.row_cfg.input_len}, {model.col_cfg.input_len}),"
            f" split gives ({split.m_I}, {split.n_I})"
        )


def _report_metrics(metrics, out):
    print(metrics.table())
    if out:
        metrics.write_csv(out)


# -- subcommands ---------------------------------------------------------------


def cmd_synth(args):
    data = synthetic_low_rank(args.rows, args.cols, args.rank, args.density, args.noise, args.seed,
                              args.alpha, args.beta)
    save_ratings_csv(data, args.out)
    print(f"wrote {data.nnz} ratings ({data.n_rows} x {data.n_cols}, rank {args.rank}) to {args.out}")


def cmd_split(args):
    data = _load_data(args.input, args.format, args.alpha, args.beta)
    try:
        spec = SplitSpec(args.row_frac, args.col_frac, args.observe_frac, args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    split = make_split(data, spec)
    save_split(split, args.out)
    save_id_map(data, str(args.out) + ".idmap")
    print(f"n_I={split.n_I} m_I={split.m_I} seed={split.seed}")
    print("area  total  observed  heldout")
    for label, (total, observed, heldout) in split.counts().items():
        print(f"{label:<4} {total:>6} {observed:>9} {heldout:>8}")


def cmd_train(args):
    cfg = load_run_config(args.config, args.set or ())
    for key, flag in (("data", "data"), ("split", "split"), ("format", "format"),
                      ("out_model", "out_model"), ("out_history", "out_history")):
        if getattr(args, flag) is not None:
            cfg[key] = getattr(args, flag)
    if args.seed is not None:
        cfg["seed"] = args.seed
    data, split = _load_data_and_split(
        _require(cfg.get("data"), "--data"), cfg.get("format", "movielens-dat"),
        _require(cfg.get("split"), "--split"), cfg.get("alpha", 1.0), cfg.get("beta", 5.0))
    out_model = _require(cfg.get("out_model"), "--out-model")
    row_cfg, col_cfg = branch_configs(cfg, split.m_I, split.n_I)
    kw = {k: cfg[k] for k in ("norm_floor", "bn_momentum", "bn_eps") if k in cfg}
    model = build_model(row_cfg, col_cfg, seed=cfg.get("model_seed", 0),
                        alpha=data.alpha, beta=data.beta, **kw)
    model.metadata["split_digest"] = split.digest()
    tcfg = train_config(cfg)
    model, history = train(model, data, split, tcfg)
    save_model(model, out_model)
    if cfg.get("out_history"):
        history.write_csv(cfg["out_history"])
    best = history.records[history.best_epoch - 1]
    print(f"epochs run: {len(history)}; best epoch: {history.best_epoch}")
    print(f"final validation RMSE: {best.val_rmse:.6f}")


def _load_for_model(args):
    model = load_model(_existing(args.model, "model file"))
    data, split = _load_data_and_split(args.data, args.format, args.split, model.alpha, model.beta)
    _check_model_matches(model, split)
    return model, data, split


def cmd_eval(args):
    model, data, split = _load_for_model(args)
    _report_metrics(evaluate(model, data, split), args.out)


def cmd_predict(args):
    model, data, split = _load_for_model(args)
    if not 0 <= args.row < data.n_rows:
        raise UsageError(f"--row {args.row} outside [0, {data.n_rows})")
    if not 0 <= args.col < data.n_cols:
        raise UsageError(f"--col {args.col} outside [0, {data.n_cols})")
    value = model.predict(data, split, args.row, args.col, exclude=split.heldout)
    print(f"{value:.6f} area {AREAS[split.area_of(args.row, args.col)]}")


def cmd_baseline(args):
    data, split = _load_data_and_split(args.data, args.format, args.split)
    train_idx = split.train_mask
    if args.method == "mean":
        predictor = mean_baseline(data, train_idx)
    elif args.method == "bias":
        predictor = bias_baseline(data, train_idx, reg=args.reg if args.reg is not None else 10.0)
    else:
        predictor = mf_train(data, train_idx, r=args.rank, reg=args.reg or 0.0, lr=args.lr,
                             epochs=args.epochs, seed=args.seed)
    _report_metrics(evaluate(predictor, data, split), args.out)


def cmd_gradcheck(args):
    results = run_gradchecks(args.seed)
    for r in results:
        print(r.line())
    ok = all(r.passed for r in results)
    print("all gradient checks passed" if ok else "gradient check FAILED")
    return 0 if ok else 1


# -- parser ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nmc", description="Extendable neural matrix completion.")
    p.add_argument("--threads", type=int, default=1, help="BLAS threads (default 1, deterministic)")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def data_flags(sp, data_flag="--data"):
        sp.add_argument(data_flag, required=True)
        sp.add_argument("--format", default="movielens-dat", help="movielens-dat or csv")

    s = sub.add_parser("synth", help="write a seeded low-rank ratings CSV")
    s.add_argument("--rows", type=int, default=100)
    s.add_argument("--cols", type=int, default=120)
    s.add_argument("--rank", type=int, default=3)
    s.add_argument("--density", type=float, default=0.4)
    s.add_argument("--noise", type=float, default=0.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--alpha", type=float, default=1.0)
    s.add_argument("--beta", type=float, default=5.0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("split", help="assign entries to areas I-IV and write a split file")
    data_flags(s, "--input")
    s.add_argument("--alpha", type=float, default=1.0)
    s.add_argument("--beta", type=float, default=5.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--row-frac", type=float, default=0.8)
    s.add_argument("--col-frac", type=float, default=0.8)
    s.add_argument("--observe-frac", type=float, default=0.9)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_split)

    s = sub.add_parser("train", help="train a model on the observed area-I entries")
    s.add_argument("--data")
    s.add_argument("--format")
    s.add_argument("--split")
    s.add_argument("--config", help="key = value file; flags override it")
    s.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
    s.add_argument("--seed", type=int, help="training seed")
    s.add_argument("--out-model")
    s.add_argument("--out-history")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="per-area RMSE/MAE on held-out entries")
    s.add_argument("--model", required=True)
    data_flags(s)
    s.add_argument("--split", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("predict", help="predict one entry")
    s.add_argument("--model", required=True)
    data_flags(s)
    s.add_argument("--split", required=True)
    s.add_argument("--row", type=int, required=True)
    s.add_argument("--col", type=int, required=True)
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("baseline", help="evaluate a mean, bias or MF baseline")
    s.add_argument("--method", choices=("mean", "bias", "mf"), required=True)
    data_flags(s)
    s.add_argument("--split", required=True)
    s.add_argument("--rank", type=int, default=3)
    s.add_argument("--reg", type=float)
    s.add_argument("--lr", type=float, default=0.01)
    s.add_argument("--epochs", type=int, default=300)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_baseline)

    s = sub.add_parser("gradcheck", help="check every layer's gradients numerically")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        parser.error("--threads must be >= 1")
    try:
        with threadpool_limits(limits=args.threads):
            code = args.func(args)
    except USAGE_ERRORS as exc:
        print(f"nmc: error: {exc}", file=sys.stderr)
        return 2
    except (errors.NmcError, ArithmeticError, OSError) as exc:
        print(f"nmc: error: {exc}", file=sys.stderr)
        return 1
    return code or 0


if __name__ == "__main__":
    sys.exit(main())
