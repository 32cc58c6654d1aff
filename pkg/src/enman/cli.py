"""Command-line entry point: train, eval, compare, export, infer, gen-profile.

Configuration is a key = value text file with [device], [training] and [run]
sections; any command-line flag overrides the file. Every artifact written
by a command embeds the effective config hash and root seed, so re-running
with the same pair reproduces outputs byte for byte.
"""

from __future__ import annotations

import argparse
import hashlib
import sys
from configparser import ConfigParser
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from enman import evalharness, policyio, ppo
from enman.envsim import (DeviceConfig, cluster_profile, load_profile,
                          load_trace_csv, save_profile, save_trace_csv,
                          sample_profile)


class ConfigError(ValueError):
    pass


_DEVICE_FIELDS = {f.name: f.type for f in fields(DeviceConfig)}
_TRAINING_FIELDS = {f.name: f.type for f in fields(ppo.HyperParams)}
_TRAINING_EXTRAS = ("hidden", "terminal_mode")
_RUN_FIELDS = ("seed", "out_dir", "profiles")


@dataclass
class RunConfig:
    device: DeviceConfig
    hp: ppo.HyperParams
    hidden: int = 64
    terminal_mode: str = "combined"
    seed: int = 0
    out_dir: str = "runs/out"
    profile_paths: list = None

    def items(self) -> list[tuple[str, str]]:
        out = [(f"device.{k}", repr(getattr(self.device, k))) for k in _DEVICE_FIELDS]
        out += [(f"training.{k}", repr(getattr(self.hp, k))) for k in _TRAINING_FIELDS]
        out += [("training.hidden", repr(self.hidden)),
                ("training.terminal_mode", self.terminal_mode),
                ("run.seed", repr(self.seed)),
                ("run.profiles", ",".join(self.profile_paths or []))]
        return sorted(out)

    def hash(self) -> str:
        joined = "\n".join(f"{k}={v}" for k, v in self.items())
        return hashlib.sha256(joined.encode()).hexdigest()[:12]


def _find_line(path, key: str) -> str:
    try:
        for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
            if line.strip().startswith(key):
                return f"{path}:{lineno}"
    except OSError:
        pass
    return str(path)


def _parse_value(path, section: str, key: str, raw: str, typ: str):
    where = _find_line(path, key)
    try:
        if typ == "bool":
            if raw.lower() in ("true", "1", "yes", "on"):
                return True
            if raw.lower() in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        return {"int": int, "float": float}.get(typ, str)(raw)
    except ValueError:
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r} as {typ} ({where})")


def load_run_config(path) -> RunConfig:
    cp = ConfigParser()
    if not cp.read(path):
        raise ConfigError(f"config file not found: {path}")
    known = {"device": _DEVICE_FIELDS,
             "training": {**_TRAINING_FIELDS,
                          "hidden": "int", "terminal_mode": "str"},
             "run": {"seed": "int", "out_dir": "str", "profiles": "str"}}
    values: dict[str, dict] = {"device": {}, "training": {}, "run": {}}
    for section in cp.sections():
        if section not in known:
            raise ConfigError(f"unknown section [{section}] in {path}")
        for key, raw in cp[section].items():
            if key not in known[section]:
                raise ConfigError(
                    f"[{section}] unknown field {key!r} ({_find_line(path, key)})")
            values[section][key] = _parse_value(path, section, key, raw,
                                                str(known[section][key]))
    hidden = values["training"].pop("hidden", 64)
    terminal_mode = values["training"].pop("terminal_mode", "combined")
    run = values["run"]
    profile_paths = [p.strip() for p in run.get("profiles", "").split(",") if p.strip()]
    base = Path(path).parent
    profile_paths = [str((base / p)) if not Path(p).is_absolute() else p
                     for p in profile_paths]
    try:
        device = DeviceConfig(**values["device"])
        hp = ppo.HyperParams(**values["training"])
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}")
    return RunConfig(device, hp, hidden, terminal_mode,
                     run.get("seed", 0), run.get("out_dir", "runs/out"),
                     profile_paths)


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "episodes", None) is not None:
        cfg.hp.episodes = args.episodes
    if getattr(args, "neurons", None) is not None:
        cfg.hidden = args.neurons
    if getattr(args, "out", None) is not None:
        cfg.out_dir = args.out
    if getattr(args, "profile", None):
        cfg.profile_paths = list(args.profile)
    return cfg


def cmd_train(args) -> int:
    cfg = _apply_overrides(load_run_config(args.config), args)
    if not cfg.profile_paths:
        raise ConfigError("no harvest profiles configured (run.profiles or --profile)")
    missing = [p for p in cfg.profile_paths if not Path(p).exists()]
    if missing:
        raise ConfigError(f"profile file not found: {missing[0]}")
    profiles = [load_profile(p) for p in cfg.profile_paths]

    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stamp = f"seed={cfg.seed} config_hash={cfg.hash()}"

    def progress(row: ppo.UpdateLog):
        if row.update_idx % 25 == 0:
            print(f"update {row.update_idx}: mean_return={row.mean_return:.3f} "
                  f"terminal_dev={row.mean_terminal_deviation_j:.2f}J",
                  file=sys.stderr)

    result = ppo.train(cfg.device, profiles, cfg.hp, cfg.seed,
                       hidden=cfg.hidden, terminal_mode=cfg.terminal_mode,
                       on_update=progress)
    ppo.write_training_log(out_dir / "training_log.csv", result.log, comment=stamp)
    policyio.save_checkpoint(out_dir / "checkpoint.tmck", result.policy, result.value)
    policyio.export(result.policy, cfg.device, out_dir / "policy.tman")
    print(f"final mean return {result.log[-1].mean_return:.4f} "
          f"({result.episodes} episodes, artifacts in {out_dir})")
    return 0


def _load_trace_dirs(dirs) -> dict[str, list[np.ndarray]]:
    trace_map = {}
    for d in dirs:
        files = sorted(Path(d).glob("*.csv"))
        if not files:
            raise ConfigError(f"no trace CSVs found in {d}")
        trace_map[Path(d).name] = [load_trace_csv(f) for f in files]
    return trace_map


def _device_from(args, bundle: policyio.PolicyBundle) -> DeviceConfig:
    if getattr(args, "config", None):
        return load_run_config(args.config).device
    return DeviceConfig(capacity_j=bundle.capacity_j,
                        reservoir_j=bundle.reservoir_j,
                        min_alloc_j=bundle.min_alloc_j,
                        horizon_steps=bundle.horizon_steps)


def _parse_inits(arg: str):
    return tuple(float(v) for v in arg.split(","))


def cmd_eval(args) -> int:
    trace_map = _load_trace_dirs(args.traces)
    inits = _parse_inits(args.inits)
    for path in args.model:
        bundle = policyio.load(path)
        config = _device_from(args, bundle)
        report = evalharness.evaluate(bundle, config, trace_map, inits,
                                      method=Path(path).stem)
        out = Path(args.out) if args.out and len(args.model) == 1 \
            else Path(path).with_suffix(".eval.csv")
        evalharness.report_to_csv(report, out)
        print(f"wrote {out}")
    return 0


def cmd_compare(args) -> int:
    trace_map = _load_trace_dirs(args.traces)
    inits = _parse_inits(args.inits)
    reports = []
    config = None
    for path in args.model:
        bundle = policyio.load(path)
        config = _device_from(args, bundle)
        reports.append(evalharness.evaluate(bundle, config, trace_map, inits,
                                            method=Path(path).stem))
    if config is None:
        raise ConfigError("compare needs at least one --model")
    reports.append(evalharness.evaluate_oracle(config, trace_map, inits))
    if args.profile:
        expected = {Path(d).name: load_profile(p).hourly_mean_j
                    for d, p in zip(args.traces, args.profile)}
    else:
        expected = {label: np.mean(np.stack(ts), axis=0)
                    for label, ts in trace_map.items()}
    uniform_eps = []
    for label, ts in trace_map.items():
        rep = evalharness.evaluate_uniform(config, expected[label],
                                           {label: ts}, inits)
        uniform_eps.extend(rep.episodes)
    fp = evalharness.trace_fingerprint(
        {k: [np.asarray(t) for t in v] for k, v in trace_map.items()}, inits)
    reports.append(evalharness.aggregate_report("uniform_predicted", uniform_eps, fp))

    table = evalharness.compare(*reports)
    print(table.render_text())
    if args.out:
        table.to_csv(args.out)
        print(f"wrote {args.out}")
    return 0


def cmd_export(args) -> int:
    policy, _ = policyio.load_checkpoint(args.checkpoint)
    device = load_run_config(args.config).device if args.config else DeviceConfig()
    policyio.export(policy, device, args.out)
    print(f"wrote {args.out}")
    return 0


def cmd_infer(args) -> int:
    bundle = policyio.load(args.model)
    cap = bundle.capacity_j
    initial = args.initial if args.initial is not None else args.battery
    obs = (args.battery / cap, args.prev_harvest / cap, initial / cap,
           args.hour / bundle.horizon_steps, args.cum_harvest / cap)
    alloc = policyio.infer(bundle, obs)
    print(f"{alloc:.6f}")
    return 0


def cmd_gen_profile(args) -> int:
    profile = cluster_profile(args.cluster, args.scale)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    profile_path = out_dir / f"cluster{args.cluster}.ini"
    save_profile(profile_path, profile)
    written = [profile_path]
    for i in range(args.traces):
        rng = np.random.default_rng(np.random.SeedSequence(args.seed, spawn_key=(4, i)))
        trace = sample_profile(profile, rng)
        path = out_dir / f"cluster{args.cluster}_trace_{i:03d}.csv"
        save_trace_csv(path, trace)
        written.append(path)
    print(f"wrote {len(written)} files to {out_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="enman",
        description="Train, evaluate and deploy an energy-allocation policy.",
        epilog="Flags override config-file values.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a policy and write artifacts")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--episodes", type=int)
    p.add_argument("--neurons", type=int)
    p.add_argument("--out")
    p.add_argument("--profile", action="append")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate bundles on a trace directory")
    p.add_argument("--model", action="append", required=True)
    p.add_argument("--traces", action="append", required=True)
    p.add_argument("--inits", default="16,48,112,144")
    p.add_argument("--config")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare", help="compare bundles vs oracle and uniform")
    p.add_argument("--model", action="append", required=True)
    p.add_argument("--traces", action="append", required=True)
    p.add_argument("--inits", default="16,48,112,144")
    p.add_argument("--profile", action="append",
                   help="expected-profile file per trace dir (for the uniform baseline)")
    p.add_argument("--config")
    p.add_argument("--out")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("export", help="convert a checkpoint to a deployment bundle")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("infer", help="one allocation from a bundle")
    p.add_argument("--model", required=True)
    p.add_argument("--battery", type=float, required=True)
    p.add_argument("--prev-harvest", type=float, default=0.0)
    p.add_argument("--initial", type=float)
    p.add_argument("--hour", type=int, default=0)
    p.add_argument("--cum-harvest", type=float, default=0.0)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("gen-profile", help="write a cluster profile and traces")
    p.add_argument("--cluster", type=int, required=True)
    p.add_argument("--scale", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--traces", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_profile)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValueError, RuntimeError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
