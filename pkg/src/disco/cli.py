"""Command-line drivers: solve, sweep-tau, sweep-hessian.

Exit codes: 0 success, 2 configuration error, 3 I/O or parse error,
4 divergence or inner-solver failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from contextlib import contextmanager
from dataclasses import asdict, dataclass, fields

from .data import LibsvmError, load_libsvm
from .losses import LossModel
from .solver import (
    CERTIFIED,
    RESIDUAL,
    DiscoConfig,
    DivergenceError,
    PcgBreakdown,
    PcgNotConverged,
    solve,
    write_trace_csv,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_DIVERGED = 4


class ConfigError(ValueError):
    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


@dataclass
class RunConfig:
    data: str = None
    loss: str = "logistic"
    lam: float = 1e-4
    mu: float = 1e-2
    tau: int = 100
    mode: str = "f"
    nodes: int = 4
    eps_beta: float = 0.05
    hessian_fraction: float = 1.0
    max_outer: int = 100
    grad_tol: float = 1e-10
    seed: int = 0
    out: str = None
    scheduler: str = "threads"
    stop_rule: str = CERTIFIED
    timing: bool = True
    ledger_out: str = None

    def validate(self):
        if not self.data:
            raise ConfigError("data", "a dataset path is required")
        try:
            LossModel.parse(self.loss)
        except ValueError:
            raise ConfigError("loss", f"unknown loss {self.loss!r}") from None
        if not self.lam > 0:
            raise ConfigError("lambda", f"must be positive, got {self.lam}")
        if not self.mu >= 0:
            raise ConfigError("mu", f"must be nonnegative, got {self.mu}")
        if self.tau < 1:
            raise ConfigError("tau", f"must be at least 1, got {self.tau}")
        if str(self.mode).lower() not in ("s", "f"):
            raise ConfigError("mode", f"must be 's' or 'f', got {self.mode!r}")
        if self.nodes < 1:
            raise ConfigError("nodes", f"must be at least 1, got {self.nodes}")
        if not self.eps_beta > 0:
            raise ConfigError("eps-beta", f"must be positive, got {self.eps_beta}")
        if not 0 < self.hessian_fraction <= 1:
            raise ConfigError("hessian-fraction", f"must lie in (0, 1], got {self.hessian_fraction}")
        if self.max_outer < 0:
            raise ConfigError("max-outer", f"must be nonnegative, got {self.max_outer}")
        if not self.grad_tol >= 0:
            raise ConfigError("grad-tol", f"must be nonnegative, got {self.grad_tol}")
        if self.scheduler not in ("threads", "round-robin"):
            raise ConfigError("scheduler", f"unknown scheduler {self.scheduler!r}")
        if self.stop_rule not in (CERTIFIED, RESIDUAL):
            raise ConfigError("stop-rule", f"unknown stop rule {self.stop_rule!r}")
        return self

    def solver_config(self, **overrides):
        cfg = DiscoConfig(
            tau=self.tau,
            mu=self.mu,
            eps_beta=self.eps_beta,
            max_outer=self.max_outer,
            grad_tol=self.grad_tol,
            hessian_fraction=self.hessian_fraction,
            seed=self.seed,
            stop_rule=self.stop_rule,
        )
        for key, val in overrides.items():
            setattr(cfg, key, val)
        return cfg


def _common_parser():
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="JSON file with defaults; flags override it")
    p.add_argument("--data", help="libsvm dataset (.gz and .bz2 accepted)")
    p.add_argument("--loss", choices=[m.value for m in LossModel])
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--mu", type=float)
    p.add_argument("--tau", type=int)
    p.add_argument("--mode", type=str.lower, choices=["s", "f"])
    p.add_argument("--nodes", type=int)
    p.add_argument("--eps-beta", type=float)
    p.add_argument("--hessian-fraction", type=float)
    p.add_argument("--max-outer", type=int)
    p.add_argument("--grad-tol", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output CSV (default: stdout)")
    p.add_argument("--scheduler", choices=["threads", "round-robin"])
    p.add_argument("--stop-rule", choices=[CERTIFIED, RESIDUAL])
    p.add_argument("--ledger-out", help="write the per-phase traffic ledger as CSV")
    p.add_argument("--no-timing", dest="timing", action="store_const", const=False,
                   help="write 0 for wall-clock columns so repeat runs are byte-identical")
    return p


def build_parser():
    common = _common_parser()
    parser = argparse.ArgumentParser(prog="disco", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("solve", parents=[common], help="run one solve and write its trace")
    sp_tau = sub.add_parser("sweep-tau", parents=[common], help="one solve per preconditioner sample count")
    sp_tau.add_argument("--taus", required=True, help="comma separated, e.g. 1,10,100")
    sp_h = sub.add_parser("sweep-hessian", parents=[common], help="one solve per Hessian sample fraction")
    sp_h.add_argument("--fractions", required=True, help="comma separated, e.g. 1,0.5,0.0625")
    return parser


_FIELD_ALIASES = {"lambda": "lam"}


def _load_config_file(path):
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError("config", f"{path} is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config", "top level must be an object")
    known = {f.name for f in fields(RunConfig)}
    out = {}
    for key, val in raw.items():
        name = _FIELD_ALIASES.get(key, key.replace("-", "_"))
        if name not in known:
            raise ConfigError("config", f"unknown key {key!r}")
        out[name] = val
    return out


def resolve_config(args):
    values = asdict(RunConfig())
    if args.config:
        values.update(_load_config_file(args.config))
    for f in fields(RunConfig):
        flag = getattr(args, f.name, None)
        if flag is not None:
            values[f.name] = flag
    return RunConfig(**values).validate()


def _parse_list(text, kind, field):
    try:
        items = [kind(tok) for tok in text.split(",") if tok.strip()]
    except ValueError:
        raise ConfigError(field, f"cannot parse {text!r}") from None
    if not items:
        raise ConfigError(field, "list is empty")
    return items


@contextmanager
def _output(path):
    if path is None:
        yield sys.stdout
    else:
        with open(path, "w", newline="") as fh:
            yield fh


def _run(cfg, dataset, **overrides):
    return solve(dataset, cfg.loss, cfg.lam, mode=cfg.mode, nodes=cfg.nodes,
                 config=cfg.solver_config(**overrides), scheduler=cfg.scheduler)


def _wall(result, cfg):
    return result.trace[-1].wall_seconds if cfg.timing else 0.0


def cmd_solve(cfg, dataset, log=None):
    log = log or sys.stderr
    result = _run(cfg, dataset)
    with _output(cfg.out) as fh:
        write_trace_csv(result.trace, fh, timing=cfg.timing)
    if cfg.ledger_out:
        with open(cfg.ledger_out, "w", newline="") as fh:
            result.ledger.to_csv(fh)
    last = result.trace[-1]
    tot = result.ledger.total()
    print(
        f"mode={result.mode} m={result.m} outer={result.outer_iters} inner={result.total_inner} "
        f"f={last.f_value:.12g} grad_norm={last.grad_norm:.3e} rounds={tot.rounds} "
        f"vector_rounds={tot.vector_rounds} elements={tot.elements} "
        f"wall={_wall(result, cfg):.3f}s converged={result.converged}",
        file=log,
    )
    return result


def cmd_sweep_tau(cfg, dataset, taus, log=None):
    log = log or sys.stderr
    if not taus:
        raise ConfigError("taus", "list is empty")
    rows = []
    for tau in taus:
        if tau < 1:
            raise ConfigError("taus", f"tau must be at least 1, got {tau}")
        result = _run(cfg, dataset, tau=tau)
        tot = result.ledger.total()
        rows.append([tau, result.outer_iters, result.total_inner, tot.rounds, tot.vector_rounds,
                     repr(float(_wall(result, cfg)))])
        print(f"tau={tau} outer={result.outer_iters} inner={result.total_inner}", file=log)
    with _output(cfg.out) as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["tau", "outer_iters", "total_inner_iters", "rounds", "vector_rounds", "wall_seconds"])
        writer.writerows(rows)
    return rows


def cmd_sweep_hessian(cfg, dataset, fractions, log=None):
    log = log or sys.stderr
    if not fractions:
        raise ConfigError("fractions", "list is empty")
    for frac in fractions:
        if not 0 < frac <= 1:
            raise ConfigError("fractions", f"fraction must lie in (0, 1], got {frac}")
    rows = []
    for frac in fractions:
        result = _run(cfg, dataset, hessian_fraction=frac)
        tot = result.ledger.total()
        last = result.trace[-1]
        rows.append([repr(float(frac)), result.outer_iters, result.total_inner, tot.rounds,
                     tot.vector_rounds, repr(float(last.grad_norm)), int(result.converged),
                     repr(float(_wall(result, cfg)))])
        print(f"fraction={frac} outer={result.outer_iters} grad_norm={last.grad_norm:.3e}", file=log)
    with _output(cfg.out) as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["fraction", "outer_iters", "total_inner_iters", "rounds", "vector_rounds",
                         "final_grad_norm", "converged", "wall_seconds"])
        writer.writerows(rows)
    return rows


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse usage errors exit with 2, the config-error code
        return exc.code
    try:
        cfg = resolve_config(args)
        taus = _parse_list(args.taus, int, "taus") if args.command == "sweep-tau" else None
        fractions = _parse_list(args.fractions, float, "fractions") if args.command == "sweep-hessian" else None
        dataset = load_libsvm(cfg.data)
        if args.command == "solve":
            cmd_solve(cfg, dataset)
        elif args.command == "sweep-tau":
            cmd_sweep_tau(cfg, dataset, taus)
        else:
            cmd_sweep_hessian(cfg, dataset, fractions)
    except ConfigError as exc:
        print(f"ConfigError: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, LibsvmError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (DivergenceError, PcgBreakdown, PcgNotConverged) as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except ValueError as exc:
        # solver-side argument checks, e.g. tau larger than the local sample count
        print(f"ConfigError: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
