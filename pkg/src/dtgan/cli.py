"""Command line entry point.

    dtgan schema  --data D.csv --target y --out schema.json
    dtgan account --variant dp_discriminator --sigma 1.1 --batch-size 64 --rows 39000 --steps 3000
    dtgan train   --data D.csv --target y --config run.cfg --set epsilon=1 --out model.ckpt
    dtgan sample  --model model.ckpt --n 1000 --out synth.csv
    dtgan eval    --real D.csv --synth synth.csv --schema schema.json --out eval.json
    dtgan attack  --kind membership --data R.csv --targets T.csv --target y --out attack.json

Config files are flat ``key = value`` lines (``#`` comments). Precedence:
``--set`` > file > defaults. Unknown keys are rejected.

Exit codes: 0 ok, 1 configuration, 2 data, 3 budget exhausted, 4 internal.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
import tempfile
from dataclasses import fields
from pathlib import Path

import numpy as np
import pandas as pd

from . import attacks, evaluation, gan, plotting
from .accountant import (BudgetUnreachable, MechanismSpec, OrderGrid, PrivacyLedger)
from .tabular import Schema, SchemaError, infer_schema, read_csv, to_csv_text

EXIT_CONFIG, EXIT_DATA, EXIT_BUDGET, EXIT_INTERNAL = 1, 2, 3, 4


class ConfigError(ValueError):
    pass


# -- config ----------------------------------------------------------------

def _parse_bool(s):
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _optional(conv):
    return lambda s: None if str(s).strip().lower() in ("none", "") else conv(s)


def _int_tuple(s):
    return tuple(int(v) for v in str(s).split(",") if v.strip())


def _str_tuple(s):
    return tuple(v.strip() for v in str(s).split(",") if v.strip())


GAN_TYPES = {
    "variant": str, "sigma": _optional(float), "clip": float, "penalty": float, "batch_size": int,
    "n_critic": int, "epsilon": _optional(float), "delta": float, "max_epochs": _optional(int),
    "shards": int, "info_loss": _parse_bool, "classification_loss": _parse_bool,
    "condition_loss": _parse_bool, "strict_dp": _parse_bool, "seed": int, "noise_dim": int,
    "generator_dims": _int_tuple, "discriminator_dims": _int_tuple, "classifier_dims": _int_tuple,
    "architecture": str, "lr": float, "beta1": float, "beta2": float, "adam_eps": float,
    "gumbel_tau": float, "condition_mode": str,
}
assert set(GAN_TYPES) == {f.name for f in fields(gan.DtganConfig)}

DATA_TYPES = {"target": str, "threshold": int}
MEMBERSHIP_TYPES = {"reference_size": int, "batch_rows": int, "batches": int, "train_size": int,
                    "test_size": int, "modes": _str_tuple, "repetitions": int, "targets": int}
ATTACK_TYPES = {**GAN_TYPES, **DATA_TYPES, **MEMBERSHIP_TYPES, "generator": str, "sensitive": str}


def read_config(path) -> dict:
    out = {}
    for i, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{i}: expected key = value")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def resolve(types: dict, args) -> dict:
    """Merge config file and --set overrides, converting to typed values."""
    raw = read_config(args.config) if getattr(args, "config", None) else {}
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        raw[k.strip()] = v.strip()
    unknown = sorted(set(raw) - set(types))
    if unknown:
        raise ConfigError(f"unknown config keys: {unknown}")
    out = {}
    for k, v in raw.items():
        try:
            out[k] = types[k](v)
        except ValueError as exc:
            raise ConfigError(f"bad value for {k}: {exc}") from None
    if getattr(args, "seed", None) is not None:
        out["seed"] = args.seed
    return out


def gan_config(values: dict) -> gan.DtganConfig:
    try:
        return gan.DtganConfig(**{k: v for k, v in values.items() if k in GAN_TYPES})
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


# -- output ------------------------------------------------------------------

def write_atomic(path, data: bytes | str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, str):
        data = data.encode()
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.remove(tmp)


def _clean(obj):
    """JSON-safe copy: non-finite floats become strings, numpy scalars become Python ones."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return "inf" if obj > 0 else ("-inf" if obj < 0 else "nan")
    return obj


def dump_json(obj) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n"


def _figure_path(out, suffix):
    out = Path(out)
    return out.with_name(out.stem + suffix + ".png")


def _load_table(path, target=None, schema_path=None, threshold=20):
    df = read_csv(path)
    if schema_path:
        schema = Schema.from_json(Path(schema_path).read_text())
    elif target:
        schema = infer_schema(df, target, threshold)
    else:
        raise ConfigError("need --schema or --target")
    return df, schema


# -- commands ----------------------------------------------------------------

def cmd_schema(args):
    df = read_csv(args.data)
    schema = infer_schema(df, args.target, args.threshold)
    text = schema.to_json() + "\n"
    if args.out:
        write_atomic(args.out, text)
    else:
        sys.stdout.write(text)
    kinds = [c.kind for c in schema.columns]
    print(f"columns={len(kinds)} continuous={kinds.count('continuous')} "
          f"categorical={kinds.count('categorical')}", file=sys.stderr)


def account_spec(args) -> MechanismSpec:
    if args.sigma <= 0:
        raise ConfigError("sigma must be positive")
    if args.variant == "dp_discriminator":
        if not args.rows:
            raise ConfigError("dp_discriminator needs --rows")
        b = min(args.batch_size, args.rows)
        return MechanismSpec(args.sigma, b, b / args.rows)
    if args.variant == "dp_generator":
        if not args.shards or args.shards < 2:
            raise ConfigError("dp_generator needs --shards >= 2")
        return MechanismSpec(args.sigma, args.batch_size * args.losses, 1.0 / args.shards)
    raise ConfigError(f"unknown variant {args.variant!r}")


def cmd_account(args):
    if args.steps < 0:
        raise ConfigError("steps must be >= 0")
    spec = account_spec(args)
    ledger = PrivacyLedger(spec, args.delta, OrderGrid())
    ledger.spend(args.steps)
    report = ledger.transcript(variant=args.variant)
    if args.out:
        write_atomic(args.out, dump_json(report))
        if args.steps > 0:
            grid = np.unique(np.linspace(0, args.steps, min(args.steps, 200) + 1).astype(int))
            plotting.epsilon_curve(grid, [ledger.epsilon_after(int(t))[0] for t in grid], None,
                                   _figure_path(args.out, "_epsilon"))
    eps, order = ledger.epsilon_after(ledger.steps)
    print(f"epsilon={eps!r} delta={args.delta!r} order={order}")


def cmd_train(args):
    values = resolve({**GAN_TYPES, **DATA_TYPES}, args)
    target = values.pop("target", args.target)
    threshold = values.pop("threshold", 20)
    cfg = gan_config(values)
    df, schema = _load_table(args.data, target, args.schema, threshold)
    history = []
    report_path = Path(args.out).with_suffix(".json")
    try:
        model = gan.train(cfg, df, schema, on_step=history.append)
    except gan.BudgetExhausted as exc:
        write_atomic(report_path, dump_json({"config": cfg.to_dict(), "transcript": exc.transcript,
                                             "status": "budget_exhausted"}))
        raise
    write_atomic(args.out, gan.dumps_model(model))
    write_atomic(Path(args.out).with_suffix(".history.jsonl"),
                 "".join(json.dumps(_clean(r), sort_keys=True) + "\n" for r in history))
    write_atomic(report_path, dump_json({"config": model.config.to_dict(), "schema": json.loads(schema.to_json()),
                                         "transcript": model.transcript, "status": "ok"}))
    plotting.history(history, _figure_path(args.out, "_history"))
    eps = model.transcript.get("epsilon")
    print(f"steps={model.transcript['generator_steps']} epsilon={eps}")


def cmd_sample(args):
    model = gan.loads_model(Path(args.model).read_bytes())
    seed = args.seed if args.seed is not None else 0
    rows = gan.sample(model, args.n, seed)
    write_atomic(args.out, to_csv_text(rows, model.schema))


def cmd_eval(args):
    real, schema = _load_table(args.real, args.target, args.schema, args.threshold)
    synth = read_csv(args.synth)
    seed = args.seed if args.seed is not None else 0
    report = {"similarity": evaluation.similarity(real, synth, schema).to_dict(),
              "inputs": {"real_rows": len(real), "synth_rows": len(synth)}, "seed": seed}
    if args.test:
        test = read_csv(args.test)
        report["utility"] = evaluation.ml_utility(real, test, synth, schema, seed=seed).to_dict()
        report["inputs"]["test_rows"] = len(test)
    write_atomic(args.out, dump_json(report))
    plotting.marginals(real, synth, schema, _figure_path(args.out, "_marginals"))
    sim = report["similarity"]
    print(f"avg_jsd={sim['avg_jsd']} avg_wd={sim['avg_wd']} diff_corr={sim['diff_corr']}")


def cmd_attack(args):
    values = resolve(ATTACK_TYPES, args)
    target = values.pop("target", args.target)
    threshold = values.pop("threshold", 20)
    generator = values.pop("generator", "dtgan")
    sensitive = values.pop("sensitive", None)
    member = {k: values.pop(k) for k in list(values) if k in MEMBERSHIP_TYPES}
    seed = values.get("seed", 0)
    reference = read_csv(args.data)
    targets = read_csv(args.targets) if args.targets else reference.iloc[:0]
    # the schema is public: inferred once on every row the attacker may use
    schema = (Schema.from_json(Path(args.schema).read_text()) if args.schema
              else infer_schema(pd.concat([reference, targets], ignore_index=True), target, threshold))
    if generator == "verbatim":
        trainer = attacks.verbatim
    elif generator == "dtgan":
        trainer = attacks.gan_trainer(gan_config(values), schema)
    else:
        raise ConfigError(f"unknown generator {generator!r}")
    if args.kind == "membership":
        try:
            params = attacks.MembershipParams(**member)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None
        report = attacks.membership_attack(trainer, reference, targets, schema, params, seed)
    else:
        if not sensitive:
            raise ConfigError("attribute attack needs sensitive=<continuous column>")
        extra = {k: member[k] for k in ("train_size", "test_size", "repetitions") if k in member}
        report = attacks.attribute_attack(trainer, reference, sensitive, schema, seed=seed, **extra)
    out = report.to_dict()
    out["config"] = {"generator": generator, **(gan_config(values).to_dict() if generator == "dtgan" else {})}
    write_atomic(args.out, dump_json(out))
    print(" ".join(f"{k}={v!r}" for k, v in sorted(report.privacy_gain.items())))


# -- parser ------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="dtgan", description="Differentially private tabular GAN toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("schema", help="infer a schema from a CSV file")
    s.add_argument("--data", required=True)
    s.add_argument("--target", required=True)
    s.add_argument("--threshold", type=int, default=20)
    s.add_argument("--out")
    s.set_defaults(func=cmd_schema)

    s = sub.add_parser("account", help="privacy spend of a training schedule")
    s.add_argument("--variant", default="dp_discriminator")
    s.add_argument("--sigma", type=float, required=True)
    s.add_argument("--batch-size", type=int, default=64)
    s.add_argument("--rows", type=int, help="training rows (dp_discriminator)")
    s.add_argument("--shards", type=int, help="number of shards (dp_generator)")
    s.add_argument("--losses", type=int, default=3, help="sanitized losses per step (dp_generator)")
    s.add_argument("--steps", type=int, required=True, help="charged updates")
    s.add_argument("--delta", type=float, default=1e-5)
    s.add_argument("--out")
    s.set_defaults(func=cmd_account)

    s = sub.add_parser("train", help="train a generator")
    s.add_argument("--data", required=True)
    s.add_argument("--target")
    s.add_argument("--schema")
    s.add_argument("--config")
    s.add_argument("--set", action="append", metavar="KEY=VALUE")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("sample", help="draw synthetic rows from a checkpoint")
    s.add_argument("--model", required=True)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sample)

    s = sub.add_parser("eval", help="similarity and utility of synthetic rows")
    s.add_argument("--real", required=True)
    s.add_argument("--synth", required=True)
    s.add_argument("--test", help="held-out real rows for the utility protocol")
    s.add_argument("--target")
    s.add_argument("--schema")
    s.add_argument("--threshold", type=int, default=20)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("attack", help="membership or attribute inference")
    s.add_argument("--kind", choices=("membership", "attribute"), default="membership")
    s.add_argument("--data", required=True, help="reference rows")
    s.add_argument("--targets", help="target rows (membership)")
    s.add_argument("--target")
    s.add_argument("--schema")
    s.add_argument("--config")
    s.add_argument("--set", action="append", metavar="KEY=VALUE")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_attack)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (ConfigError, BudgetUnreachable) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_BUDGET if isinstance(exc, BudgetUnreachable) else EXIT_CONFIG
    except (SchemaError, FileNotFoundError, UnicodeDecodeError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except gan.BudgetExhausted as exc:
        print(f"budget exhausted: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except ValueError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    return 0


if __name__ == "__main__":
    sys.exit(main())
