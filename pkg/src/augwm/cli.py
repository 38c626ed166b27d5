"""Command-line pipeline: gen-data -> train -> eval, all plain files.

Configuration is a flat key=value namespace (dotted sections) merged from
defaults, an optional config file, a checkpoint's saved snapshot (eval), and
command-line overrides, in increasing precedence. Every artifact is written
deterministically: rerunning a command with the same config and seed
produces byte-identical CSVs.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import model as wm
from . import sac, trainer
from .adapter import AdaptConfig, adapt_rollout
from .augment import AugKind, AugRange
from .core import DatasetIOError, Rng, ValidationError, load_dataset, save_dataset
from .envs import DynamicsParams, EnvKind, ToyEnv, env_dims, generate_offline_dataset
from .evaluation import (EvalGridResult, SwitchSpec, aggregate, grid_csv_rows,
                         grid_eval, switch_csv_rows, switch_eval, welch_ttest)

# key: (default, help)
CONFIG_KEYS: dict[str, tuple] = {
    "seed": (0, "master seed for the command"),
    "jobs": (1, "max parallel workers for grid evaluation"),
    "env.kind": ("msd", "environment: msd | pointmass | pendulum"),
    "env.mass_scale": (1.0, "mass multiplier of the data-collection env"),
    "env.damping_scale": (1.0, "damping multiplier of the data-collection env"),
    "env.actuator_mask": ("", "comma list of 0/1 per actuator; empty = all on"),
    "env.dim_scale": ("", "comma list of per-dim observation scales; empty = ones"),
    "env.horizon": (200, "episode length"),
    "data.n": (20000, "transitions to collect"),
    "data.random_frac": (0.5, "fraction of episodes with uniform random actions"),
    "data.mediocre_frac": (0.5, "fraction of episodes with the scripted controller"),
    "model.n": (5, "ensemble size"),
    "model.epochs": (50, "ensemble training epochs"),
    "model.batch": (256, "ensemble minibatch size"),
    "model.lr": (1e-3, "ensemble Adam learning rate"),
    "model.hidden": ("64,64", "ensemble hidden layer sizes"),
    "train.epochs": (100, "policy training epochs"),
    "train.h": (5, "model rollout horizon"),
    "train.lambda": (1.0, "uncertainty penalty coefficient"),
    "train.b": (256, "parallel model rollouts per epoch"),
    "train.grad_steps": (10, "SAC updates per epoch"),
    "train.real_frac": (0.05, "share of each SAC batch drawn from the real dataset"),
    "train.batch": (256, "SAC minibatch size"),
    "train.gamma": (0.99, "discount factor"),
    "train.tau": (0.005, "target network polyak rate"),
    "train.alpha": (0.2, "SAC entropy temperature"),
    "train.actor_lr": (3e-4, "actor learning rate"),
    "train.critic_lr": (3e-4, "critic learning rate"),
    "train.hidden": ("64,64", "policy/critic hidden layer sizes"),
    "train.buffer_capacity": (200000, "model replay buffer capacity"),
    "train.ckpt_every": (50, "write a policy checkpoint every K epochs"),
    "aug.kind": ("none", "augmentation: none | rad | rans | das"),
    "aug.train_lo": (0.5, "training context range lower bound"),
    "aug.train_hi": (1.5, "training context range upper bound"),
    "ctx.use": (False, "condition policy and critics on the context vector"),
    "adapt.k": (50, "warmup steps before the learned context is used"),
    "adapt.clip_lo": (0.93, "test-time context lower clip"),
    "adapt.clip_hi": (1.07, "test-time context upper clip"),
    "adapt.delta_floor": (1e-3, "minimum |model delta| for the context ratio"),
    "adapt.ema": (0.0, "context smoothing coefficient, 0 = off"),
    "adapt.window": (100, "sliding window of (s, delta) pairs for the linear model"),
    "adapt.ridge": (1e-6, "ridge coefficient of the online linear model"),
    "eval.mass_grid": ("0.5,0.75,1.0,1.25,1.5", "mass multipliers to sweep"),
    "eval.damping_grid": ("0.5,0.75,1.0,1.25,1.5", "damping multipliers to sweep"),
    "eval.rollouts": (5, "evaluation rollouts per grid cell"),
    "eval.seeds": ("0,1,2,3,4", "evaluation seeds"),
    "eval.horizon": (200, "evaluation episode length"),
    "eval.deterministic": (True, "use the policy mode action at test time"),
}

PRESETS: dict[str, dict] = {
    "mopo-baseline": {"aug.kind": "none", "ctx.use": False, "train.epochs": 100},
    "augwm-rad": {"aug.kind": "rad", "ctx.use": False, "train.epochs": 225},
    "augwm-rans": {"aug.kind": "rans", "ctx.use": False, "train.epochs": 225},
    "augwm-das": {"aug.kind": "das", "ctx.use": False, "train.epochs": 225},
    "augwm-das-context": {"aug.kind": "das", "ctx.use": True, "train.epochs": 225},
}

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2


class _Divergence(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Config handling
# ---------------------------------------------------------------------------


def _coerce(key: str, value) -> object:
    default = CONFIG_KEYS[key][0]
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
        if str(value).lower() in ("true", "1", "yes", "on"):
            return True
        if str(value).lower() in ("false", "0", "no", "off"):
            return False
        raise ValidationError(f"{key}: expected a boolean, got {value!r}")
    if isinstance(default, int):
        return int(value)
    if isinstance(default, float):
        return float(value)
    return str(value)


def parse_config_file(path: str | Path) -> dict:
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        out[key] = value
    return out


def resolve_config(*layers: dict) -> dict:
    """Merge config layers (later wins) over the defaults; unknown keys rejected."""
    cfg = {k: v for k, (v, _) in CONFIG_KEYS.items()}
    for layer in layers:
        for key, value in layer.items():
            if key not in CONFIG_KEYS:
                raise ValidationError(f"unknown config key: {key}")
            cfg[key] = _coerce(key, value)
    return cfg


def _parse_sets(pairs: list[str] | None) -> dict:
    out = {}
    for item in pairs or []:
        if "=" not in item:
            raise ValidationError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _floats(csv: str) -> tuple[float, ...]:
    return tuple(float(x) for x in csv.split(",") if x.strip())


def _ints(csv: str) -> tuple[int, ...]:
    return tuple(int(x) for x in csv.split(",") if x.strip())


def _env_params(cfg: dict) -> DynamicsParams:
    kind = EnvKind(cfg["env.kind"])
    s_dim, a_dim = env_dims(kind)
    mask = None
    if cfg["env.actuator_mask"]:
        mask = np.array([bool(int(x)) for x in cfg["env.actuator_mask"].split(",")])
        if mask.size != a_dim:
            raise ValidationError(f"env.actuator_mask needs {a_dim} entries")
    scale = None
    if cfg["env.dim_scale"]:
        scale = np.array(_floats(cfg["env.dim_scale"]))
        if scale.size != s_dim:
            raise ValidationError(f"env.dim_scale needs {s_dim} entries")
    return DynamicsParams(mass_scale=cfg["env.mass_scale"],
                          damping_scale=cfg["env.damping_scale"],
                          actuator_mask=mask, dim_scale=scale)


def _train_config(cfg: dict) -> trainer.TrainConfig:
    return trainer.TrainConfig(
        h=cfg["train.h"], lam=cfg["train.lambda"], b=cfg["train.b"],
        epochs=cfg["train.epochs"], real_data_frac=cfg["train.real_frac"],
        aug_kind=AugKind(cfg["aug.kind"]),
        aug_range=AugRange(cfg["aug.train_lo"], cfg["aug.train_hi"]),
        use_context=cfg["ctx.use"], grad_steps=cfg["train.grad_steps"],
        sac_batch=cfg["train.batch"], gamma=cfg["train.gamma"],
        tau=cfg["train.tau"], alpha=cfg["train.alpha"],
        actor_lr=cfg["train.actor_lr"], critic_lr=cfg["train.critic_lr"],
        policy_hidden=_ints(cfg["train.hidden"]),
        buffer_capacity=cfg["train.buffer_capacity"],
        model_n=cfg["model.n"], model_epochs=cfg["model.epochs"],
        model_batch=cfg["model.batch"], model_lr=cfg["model.lr"],
        model_hidden=_ints(cfg["model.hidden"]))


def _adapt_config(cfg: dict) -> AdaptConfig:
    return AdaptConfig(k=cfg["adapt.k"], clip_lo=cfg["adapt.clip_lo"],
                       clip_hi=cfg["adapt.clip_hi"],
                       delta_floor=cfg["adapt.delta_floor"], ema=cfg["adapt.ema"],
                       window=cfg["adapt.window"], ridge=cfg["adapt.ridge"])


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    def fmt(v):
        if isinstance(v, float):
            return repr(v)  # shortest exact round-trip
        return str(v)
    lines = [",".join(header)]
    lines += [",".join(fmt(v) for v in row) for row in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _write_config(path: Path, cfg: dict) -> None:
    path.write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    cfg = resolve_config(
        parse_config_file(args.config) if args.config else {},
        _parse_sets(args.set),
        {k: v for k, v in {
            "env.kind": args.env, "data.n": args.n, "seed": args.seed,
            "data.random_frac": args.random_frac,
            "data.mediocre_frac": args.mediocre_frac,
        }.items() if v is not None})
    params = _env_params(cfg)
    mix = {"random_frac": cfg["data.random_frac"],
           "mediocre_frac": cfg["data.mediocre_frac"]}
    d = generate_offline_dataset(EnvKind(cfg["env.kind"]), params, mix,
                                 cfg["data.n"], Rng(cfg["seed"]),
                                 horizon=cfg["env.horizon"])
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(d, out)
    meta = {"env_kind": cfg["env.kind"], "mass_scale": cfg["env.mass_scale"],
            "damping_scale": cfg["env.damping_scale"],
            "actuator_mask": cfg["env.actuator_mask"],
            "dim_scale": cfg["env.dim_scale"], "policy_mix": mix,
            "seed": cfg["seed"], "n_transitions": len(d)}
    out.with_suffix(out.suffix + ".meta.json").write_text(
        json.dumps(meta, indent=2, sort_keys=True) + "\n")
    print(f"wrote {len(d)} transitions to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    layers = [parse_config_file(args.config) if args.config else {}]
    if args.preset:
        if args.preset not in PRESETS:
            raise ValidationError(f"unknown preset {args.preset!r}; "
                                  f"choose from {sorted(PRESETS)}")
        layers.insert(0, PRESETS[args.preset])
    layers.append(_parse_sets(args.set))
    layers.append({k: v for k, v in {
        "train.epochs": args.epochs, "seed": args.seed}.items() if v is not None})
    cfg = resolve_config(*layers)

    data_path = Path(args.data)
    if not data_path.exists():
        raise DatasetIOError(f"dataset not found: {data_path}")
    d_env = load_dataset(data_path)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_config(out / "config.json", cfg)

    tcfg = _train_config(cfg)
    ckpt_every = max(1, cfg["train.ckpt_every"])

    def callback(epoch, actor, critics, ens, row):
        if not (np.isfinite(row["critic_loss"]) and np.isfinite(row["actor_loss"])):
            raise _Divergence(f"non-finite loss at epoch {epoch}: {row}")
        if (epoch + 1) % ckpt_every == 0:
            sac.save_policy(actor, critics, out / f"policy_ep{epoch + 1:05d}.json")

    try:
        actor, critics, ens, metrics = trainer.train(d_env, tcfg, Rng(cfg["seed"]),
                                                     epoch_callback=callback)
    except _Divergence as e:
        (out / "divergence.txt").write_text(str(e) + "\n")
        print(f"training diverged: {e}", file=sys.stderr)
        print("last periodic checkpoint (if any) retained in", out, file=sys.stderr)
        return EXIT_RUNTIME

    wm.save_ensemble(ens, out / "model.json")
    sac.save_policy(actor, critics, out / "policy.json")
    header = ["epoch", "mean_model_return", "critic_loss", "actor_loss", "buffer_size"]
    _write_csv(out / "metrics.csv", header,
               [[m["epoch"], m["mean_model_return"], m["critic_loss"],
                 m["actor_loss"], m["buffer_size"]] for m in metrics])
    print(f"trained {len(metrics)} epochs; checkpoints in {out}")
    return EXIT_OK


def _parse_switch(text: str) -> dict:
    out = {}
    for part in text.split(","):
        if "=" not in part:
            raise ValidationError(f"bad --switch entry {part!r}")
        k, v = part.split("=", 1)
        out[k.strip()] = float(v)
    unknown = set(out) - {"t", "after_mass", "after_damping"}
    if unknown or "t" not in out:
        raise ValidationError("--switch needs t=<step>[,after_mass=..][,after_damping=..]")
    return out


def cmd_eval(args) -> int:
    ckpt = Path(args.ckpt)
    if not (ckpt / "policy.json").exists() or not (ckpt / "model.json").exists():
        raise DatasetIOError(f"missing checkpoints in {ckpt}")
    snapshot = json.loads((ckpt / "config.json").read_text()) \
        if (ckpt / "config.json").exists() else {}
    overrides = {k: v for k, v in {"jobs": args.jobs, "seed": args.seed}.items()
                 if v is not None}
    if args.grid:
        overrides["eval.mass_grid"] = args.grid
        overrides["eval.damping_grid"] = args.grid
    if args.seeds:
        overrides["eval.seeds"] = args.seeds
    cfg = resolve_config(snapshot,
                         parse_config_file(args.config) if args.config else {},
                         _parse_sets(args.set), overrides)

    actor, critics = sac.load_policy(ckpt / "policy.json")
    ens = wm.load_ensemble(ckpt / "model.json")
    acfg = _adapt_config(cfg)
    kind = EnvKind(cfg["env.kind"])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    modes = [m.strip() for m in args.mode.split(",") if m.strip()]
    seeds = _ints(cfg["eval.seeds"])
    summaries = {}
    for mode in modes:
        result = grid_eval(actor, ens, kind,
                           mass_grid=_floats(cfg["eval.mass_grid"]),
                           damping_grid=_floats(cfg["eval.damping_grid"]),
                           mode=mode, rollouts_per_cell=cfg["eval.rollouts"],
                           seeds=seeds, cfg=acfg, horizon=cfg["eval.horizon"],
                           jobs=cfg["jobs"],
                           deterministic=cfg["eval.deterministic"])
        summaries[mode] = aggregate(result)
        _write_csv(out / f"grid_{mode}.csv",
                   ["mass_scale", "damping_scale", "seed", "mean_return"],
                   grid_csv_rows(result))
        if args.plot:
            _plot_grid(result, out / f"grid_{mode}.png", mode)

        env = ToyEnv(kind, DynamicsParams(), cfg["eval.horizon"])
        _, log = adapt_rollout(actor, ens, env, cfg["eval.horizon"], acfg, mode,
                               Rng(cfg["seed"]).split(99),
                               deterministic=cfg["eval.deterministic"])
        s_dim = ens.s_dim
        _write_csv(out / f"rollout_{mode}.csv",
                   ["t", "reward", *(f"ctx_{i}" for i in range(s_dim)), "r2", "mode"],
                   log.csv_rows())

    rows = []
    base_mode = modes[0]
    for mode in modes:
        summ = summaries[mode]
        if mode == base_mode:
            p = ""
        else:
            try:
                _, _, p = welch_ttest(summaries[mode].per_seed_means,
                                      summaries[base_mode].per_seed_means)
            except ValidationError:
                p = float("nan")
        rows.append([mode, summ.overall_mean, summ.overall_std, p])
    _write_csv(out / "summary.csv", ["config_name", "mean", "std", "p_vs_baseline"],
               rows)

    if args.switch:
        sw = _parse_switch(args.switch)
        spec = SwitchSpec(
            t_switch=int(sw["t"]),
            params_before=DynamicsParams(),
            params_after=DynamicsParams(mass_scale=sw.get("after_mass", 1.0),
                                        damping_scale=sw.get("after_damping", 1.0)))
        for mode in modes:
            tr = switch_eval(actor, ens, spec, cfg["eval.horizon"], mode, acfg,
                             Rng(cfg["seed"]).split(101), kind=kind,
                             deterministic=cfg["eval.deterministic"])
            s_dim = ens.s_dim
            _write_csv(out / f"switch_{mode}.csv",
                       ["t", "reward", "rolling_reward", "cumulative",
                        *(f"ctx_{i}" for i in range(s_dim)), "mode"],
                       switch_csv_rows(tr))
            if args.plot:
                _plot_switch(tr, out / f"switch_{mode}.png", mode)

    print(f"evaluation artifacts in {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Optional plots (matplotlib only imported when --plot is passed)
# ---------------------------------------------------------------------------


def _plot_grid(result: EvalGridResult, path: Path, mode: str) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, (ax0, ax1) = plt.subplots(1, 2, figsize=(10, 4))
    means = result.cell_means
    im = ax0.imshow(means, origin="lower", aspect="auto")
    ax0.set_xticks(range(len(result.damping_grid)), result.damping_grid)
    ax0.set_yticks(range(len(result.mass_grid)), result.mass_grid)
    ax0.set_xlabel("damping scale")
    ax0.set_ylabel("mass scale")
    ax0.set_title(f"mean return ({mode})")
    fig.colorbar(im, ax=ax0)
    ax1.bar(np.arange(len(result.mass_grid)) - 0.2, means.mean(axis=1), 0.4,
            label="mass marginal")
    ax1.bar(np.arange(len(result.damping_grid)) + 0.2, means.mean(axis=0), 0.4,
            label="damping marginal")
    ax1.legend()
    ax1.set_title("marginal mean returns")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def _plot_switch(tr, path: Path, mode: str) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, (ax0, ax1) = plt.subplots(2, 1, figsize=(8, 6), sharex=True)
    ax0.plot(tr.t, tr.cumulative)
    ax0.set_ylabel("cumulative return")
    ax0.set_title(f"mid-episode dynamics switch ({mode})")
    ax1.plot(tr.t, tr.rolling_reward)
    ax1.set_ylabel("rolling reward (25)")
    ax1.set_xlabel("step")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def _config_epilog() -> str:
    lines = ["config keys (override with --set key=value or a config file):"]
    for key, (default, help_text) in CONFIG_KEYS.items():
        lines.append(f"  {key:<22} default={default!r:<24} {help_text}")
    lines.append("presets: " + ", ".join(sorted(PRESETS)))
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="augwm",
        description=__doc__,
        epilog=_config_epilog(),
        formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="collect an offline dataset",
                       epilog=_config_epilog(),
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--out", required=True, help="dataset output path (.jsonl)")
    p.add_argument("--env", choices=[k.value for k in EnvKind], default=None)
    p.add_argument("--n", type=int, default=None, help="transitions to collect")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--random-frac", type=float, default=None)
    p.add_argument("--mediocre-frac", type=float, default=None)
    p.add_argument("--config", default=None, help="key = value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train model and policy offline",
                       epilog=_config_epilog(),
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--data", required=True, help="dataset file from gen-data")
    p.add_argument("--out", required=True, help="checkpoint directory")
    p.add_argument("--preset", choices=sorted(PRESETS), default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint over a dynamics grid",
                       epilog=_config_epilog(),
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--ckpt", required=True, help="checkpoint directory from train")
    p.add_argument("--out", required=True, help="results directory")
    p.add_argument("--mode", default="default",
                   help="comma list from {default,learned,oracle}")
    p.add_argument("--grid", default=None,
                   help="comma list of multipliers for both mass and damping")
    p.add_argument("--seeds", default=None, help="comma list of evaluation seeds")
    p.add_argument("--switch", default=None,
                   metavar="t=STEP[,after_mass=M][,after_damping=D]",
                   help="also run a mid-episode dynamics switch trace")
    p.add_argument("--plot", action="store_true", help="emit png plots")
    p.add_argument("--jobs", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValidationError, DatasetIOError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as e:  # noqa: BLE001 - runtime failures map to exit code 2
        print(f"runtime failure: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
