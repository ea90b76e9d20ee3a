"""Command-line front end: synthesis runs, parameter sweeps, simulations.

Configuration values resolve with the precedence flags > config file >
defaults; the fully resolved configuration is always written next to the
results so every run is reproducible from its own output directory.

Exit codes: 0 success, 2 infeasible synthesis, 3 diverging simulation,
4 configuration error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import protocol
from .model import (
    LargeScaleSystem,
    SynthesisParams,
    example2_system,
    example4_system,
    load_system,
    validate_system,
)
from .sdp import SynthesisError, SynthesisResult, minimize_gamma, solve_at_gamma
from .simulate import (
    DisturbanceSpec,
    DivergenceError,
    decay_estimate,
    default_horizon,
    disturbance_family,
    empirical_l2_gain,
    integrate_closed_loop,
    write_metrics_json,
    write_schedule_audit_csv,
    write_trajectory_csv,
)

EXIT_OK = 0
EXIT_INFEASIBLE = 2
EXIT_DIVERGED = 3
EXIT_CONFIG = 4


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    """Resolved settings for one command invocation."""

    command: str
    system: str = "example2"
    a: float = 0.0
    N: int = 10
    delta: float = 0.0005
    alpha: float = 0.4
    h: float = 0.1
    epsilon: float = 1e-6
    gamma: float | None = None          # None: minimize
    multiplier_structure: str = "decoupled"
    relevel: float = 0.02
    horizon: float | None = None
    substeps: int = 10
    disturbance: str = "none"           # none | family
    seed: int = 0
    a_grid: list = field(default_factory=lambda: [round(-0.4 + 0.05 * k, 10) for k in range(17)])
    N_list: list = field(default_factory=lambda: [4, 6, 8, 10, 12])
    gains: str | None = None            # path to a prior gains.json
    out: str = "."

    def build_system(self) -> LargeScaleSystem:
        if self.system == "example2":
            return example2_system(a=self.a, N=self.N, delta=self.delta)
        if self.system == "example4":
            return example4_system(N=self.N if self.N != 10 else 100, delta=self.delta)
        path = Path(self.system)
        if not path.exists():
            raise ConfigError(f"unknown system {self.system!r}: not a builtin and not a file")
        return load_system(path)

    def params(self) -> SynthesisParams:
        return SynthesisParams(
            gamma=self.gamma,
            alpha=self.alpha,
            h=self.h,
            epsilon=self.epsilon,
            multiplier_structure=self.multiplier_structure,
        )


def _resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    data: dict = {}
    if args.config:
        try:
            with open(args.config) as f:
                data = json.load(f)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
    cfg = ExperimentConfig(command=args.command)
    for key, value in data.items():
        if not hasattr(cfg, key):
            raise ConfigError(f"unknown config key {key!r}")
        setattr(cfg, key, value)
    for key in (
        "system", "a", "N", "delta", "alpha", "h", "epsilon", "gamma", "horizon",
        "substeps", "seed", "out", "gains", "multiplier_structure", "relevel",
        "disturbance",
    ):
        value = getattr(args, key.replace("-", "_"), None)
        if value is not None:
            setattr(cfg, key, value)
    if cfg.command in ("synthesize", "simulate", "sweep-a", "sweep-N"):
        sys_err = cfg_system_errors(cfg)
        if sys_err:
            raise ConfigError("; ".join(sys_err))
    return cfg


def cfg_system_errors(cfg: ExperimentConfig) -> list[str]:
    try:
        sys_ = cfg.build_system()
    except ConfigError as exc:
        return [str(exc)]
    problems = validate_system(sys_)
    problems += cfg.params().validate(sys_)
    return problems


def _write_json(path: Path, payload) -> None:
    with open(path, "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)


def _gains_payload(result: SynthesisResult) -> dict:
    return {
        "gamma": result.gamma,
        "gamma_infimum": result.gamma_infimum,
        "subsystems": [
            {
                "i": g.index,
                "K_self": g.K_self.tolist(),
                "neighbors": [
                    {"j": j, "K": K.tolist()} for j, K in g.K_neighbors.items()
                ],
            }
            for g in result.gains
        ],
    }


def _load_gains(sys_: LargeScaleSystem, path: str):
    from .lmi import ControllerGains

    with open(path) as f:
        data = json.load(f)
    gains = []
    for entry in data["subsystems"]:
        gains.append(
            ControllerGains(
                index=entry["i"],
                K_self=np.array(entry["K_self"]),
                K_neighbors={
                    item["j"]: np.array(item["K"]) for item in entry["neighbors"]
                },
            )
        )
    return float(data["gamma"]), gains


def _certificate_payload(result: SynthesisResult) -> dict:
    payload = {"gamma_sq": result.certificate["gamma_sq"]}
    for (i, name), mat in sorted(
        ((k, v) for k, v in result.certificate.items() if isinstance(k, tuple))
    ):
        payload.setdefault(str(i), {})[name] = np.asarray(mat).tolist()
    payload["max_violation"] = result.outcome.max_violation
    return payload


def run_synthesize(cfg: ExperimentConfig) -> int:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    sys_ = cfg.build_system()
    started = time.perf_counter()
    try:
        if cfg.gamma is None:
            result = minimize_gamma(sys_, cfg.params(), relevel=cfg.relevel)
        else:
            feasible, result = solve_at_gamma(sys_, cfg.params(), cfg.gamma)
            if not feasible:
                raise SynthesisError(f"infeasible at the requested level {cfg.gamma}")
    except SynthesisError as exc:
        _write_json(out / "summary.json", {"config": asdict(cfg), "status": "infeasible",
                                           "detail": str(exc)})
        print(f"synthesis failed: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    elapsed = time.perf_counter() - started
    _write_json(out / "gains.json", _gains_payload(result))
    _write_json(out / "certificate.json", _certificate_payload(result))
    _write_json(
        out / "summary.json",
        {
            "config": asdict(cfg),
            "status": "ok",
            "gamma_min": result.gamma,
            "gamma_infimum": result.gamma_infimum,
            "solver_status": result.outcome.status.value,
            "solver_iterations": result.outcome.iterations,
            "max_violation": result.outcome.max_violation,
            "seconds": elapsed,
        },
    )
    print(f"gamma = {result.gamma:.6f} (infimum {result.gamma_infimum:.6f}) "
          f"written to {out}")
    return EXIT_OK


def _sweep_point(payload: tuple) -> tuple:
    kind, value, cfg_dict = payload
    cfg = ExperimentConfig(**cfg_dict)
    if kind == "a":
        cfg.a = value
    else:
        cfg.N = value
    sys_ = cfg.build_system()
    try:
        result = minimize_gamma(sys_, cfg.params(), relevel=cfg.relevel)
        return value, result.gamma, "ok"
    except (SynthesisError, ValueError) as exc:
        return value, float("nan"), f"infeasible: {exc}"


def _run_sweep(cfg: ExperimentConfig, kind: str, grid) -> int:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    workers = int(os.environ.get("RRLMI_THREADS", "0")) or None
    payloads = [(kind, value, asdict(cfg)) for value in grid]
    if workers == 1 or len(payloads) == 1:
        rows = [_sweep_point(p) for p in payloads]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_sweep_point, payloads))
    name = "sweep_a.csv" if kind == "a" else "sweep_N.csv"
    with open(out / name, "w", newline="") as f:
        f.write(f"{kind},gamma_min,status\n")
        for value, gamma, status in rows:
            f.write(f"{value!r},{gamma!r},{status.split(':')[0]}\n")
    _write_json(out / "summary.json", {"config": asdict(cfg), "rows": len(rows),
                                       "statuses": [r[2].split(":")[0] for r in rows]})
    bad = [r for r in rows if r[2] != "ok"]
    print(f"{len(rows) - len(bad)}/{len(rows)} sweep points feasible; CSV in {out / name}")
    return EXIT_OK


def run_simulate(cfg: ExperimentConfig) -> int:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    sys_ = cfg.build_system()
    if cfg.gains:
        gamma, gains = _load_gains(sys_, cfg.gains)
    else:
        result = minimize_gamma(sys_, cfg.params(), relevel=cfg.relevel)
        gamma, gains = result.gamma, list(result.gains)
    x0 = np.concatenate(
        [np.array([1.0 - 2 * i, 2.0 * i])[: sys_.subsystem(i).n] for i in range(1, sys_.N + 1)]
    )
    horizon = cfg.horizon if cfg.horizon is not None else default_horizon(cfg.alpha)
    try:
        record = integrate_closed_loop(
            sys_, gains, x0, None, t_end=horizon, substeps=cfg.substeps, audit=sys_.N <= 40
        )
    except DivergenceError as exc:
        _write_json(out / "metrics.json", {"config": asdict(cfg), "status": "diverged",
                                           "time": exc.time, "norm": exc.norm})
        print(f"simulation diverged at t={exc.time}", file=sys.stderr)
        return EXIT_DIVERGED
    rho = decay_estimate(record)
    metrics = {
        "config": asdict(cfg),
        "status": "ok",
        "gamma_certified": gamma,
        "rho": rho,
        "final_over_initial_norm": record.final_norm / record.initial_norm,
        "bandwidth": protocol.bandwidth_summary(sys_),
    }
    if cfg.disturbance == "family":
        fam = disturbance_family(seed=cfg.seed)
        records = [
            integrate_closed_loop(sys_, gains, np.zeros(sys_.total_state_dim), spec,
                                  t_end=default_horizon(cfg.alpha, spec), substeps=cfg.substeps)
            for spec in fam
        ]
        metrics["gamma_empirical"] = empirical_l2_gain(records)
    write_trajectory_csv(record, out / "trajectories.csv")
    if record.held_audit is not None:
        write_schedule_audit_csv(sys_, record, out / "schedule_audit.csv")
    write_metrics_json(metrics, out / "metrics.json")
    print(f"rho = {rho:.4f}, final/initial = {metrics['final_over_initial_norm']:.3e}; "
          f"outputs in {out}")
    return EXIT_OK


def run_oracle_suite(cfg: ExperimentConfig) -> int:
    from .oracles import (
        SampledFunction,
        check_wirtinger_inequality,
        check_extended_jensen_inequality,
        check_reciprocally_convex_inequality,
        random_psd,
        random_rc_pair,
    )

    rng = np.random.default_rng(cfg.seed)
    worst = {"wirtinger": np.inf, "extended_jensen": np.inf, "reciprocally_convex": np.inf}
    for _ in range(500):
        n = int(rng.integers(1, 3))
        a = float(rng.uniform(-1, 1))
        b = a + float(rng.uniform(0.2, 2.0))
        z = SampledFunction.random_polynomial(rng, n, a, b, vanish_at_a=True)
        worst["wirtinger"] = min(worst["wirtinger"], check_wirtinger_inequality(z, random_psd(n, rng)))
        x = SampledFunction.random_polynomial(rng, n, a, b, degree=3)
        worst["extended_jensen"] = min(worst["extended_jensen"], check_extended_jensen_inequality(x, random_psd(n, rng)))
        d = int(rng.integers(1, 4))
        R, rhat, G = random_rc_pair(n, rng)
        deltas = [rng.standard_normal(2 * n) for _ in range(d + 1)]
        raw = rng.uniform(0.1, 1.0, size=d + 1)
        worst["reciprocally_convex"] = min(
            worst["reciprocally_convex"], check_reciprocally_convex_inequality(deltas, rhat, G, raw / raw.sum())
        )
    ok = all(v >= -1e-9 for v in worst.values())
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "oracle_suite.json",
                {"config": asdict(cfg), "worst_margins": worst, "ok": ok})
    for name, margin in worst.items():
        print(f"{name}: worst margin {margin:.3e}")
    return EXIT_OK if ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rrlmi",
        description="Distributed gain synthesis and closed-loop validation for "
                    "round-robin coupled subsystems",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("synthesize", "simulate", "sweep-a", "sweep-N", "oracle-suite"):
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int, help="seed for randomized pieces")
        p.add_argument("--system", help="example2 | example4 | path to a system JSON")
        p.add_argument("--a", type=float, help="chain parameter for example2")
        p.add_argument("--N", type=int, help="number of subsystems")
        p.add_argument("--delta", type=float, help="sampling period")
        p.add_argument("--alpha", type=float, help="decay weight")
        p.add_argument("--h", type=float, help="neighbor exchange weight")
        p.add_argument("--epsilon", type=float, help="strictness margin")
        p.add_argument("--gamma", type=float, help="fixed attenuation level (default: minimize)")
        p.add_argument("--multiplier-structure", dest="multiplier_structure",
                       choices=("decoupled", "shared_corner"))
        p.add_argument("--relevel", type=float, help="relative back-off from the raw optimum")
        p.add_argument("--horizon", type=float, help="simulation horizon")
        p.add_argument("--substeps", type=int, help="integrator substeps per sampling interval")
        p.add_argument("--gains", help="gains.json from a prior synthesis")
        p.add_argument("--disturbance", choices=("none", "family"),
                       help="disturbance setting for simulate")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _resolve_config(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if cfg.command == "synthesize":
            return run_synthesize(cfg)
        if cfg.command == "simulate":
            return run_simulate(cfg)
        if cfg.command == "sweep-a":
            return _run_sweep(cfg, "a", cfg.a_grid)
        if cfg.command == "sweep-N":
            return _run_sweep(cfg, "N", cfg.N_list)
        if cfg.command == "oracle-suite":
            return run_oracle_suite(cfg)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    raise AssertionError(f"unhandled command {cfg.command}")


if __name__ == "__main__":
    sys.exit(main())
