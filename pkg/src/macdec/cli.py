"""Command-line entry point: ``macdec gen|solve|eval|sim|export``.

Exit codes: 0 success, 1 invalid input (parse or validation failure),
2 a solver cap was exceeded.  All randomness comes from ``--seed`` through
named sub-streams so that reruns with the same manifest reproduce outputs
byte for byte.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .dp import Caps, CapExceeded, solve_odp
from .executor import batch_stats, export_controller
from .mbdp import HEURISTICS, RetentionConfig, solve_ombdp
from .model import ModelError, ModelSpec, emit_model, parse_model, validate
from .options import OptionError, OptionSet, emit_options, parse_options, validate_options
from .policy import JointPolicy, PolicyError, check_joint, evaluate_exact, evaluate_mc
from .domains import SCENARIOS, TOY_NAMES, WarehouseError, build_warehouse, gen_toy, parse_config
from .domains.warehouse import emit_config

EXIT_OK, EXIT_INVALID, EXIT_CAP = 0, 1, 2


class InputError(Exception):
    """Bad input file or argument; reported with file context and exit code 1."""


def named_seed(seed: int, stream: str) -> int:
    """Independent 63-bit seed for a named sub-stream of the run seed."""
    ss = np.random.SeedSequence([int(seed), zlib.crc32(stream.encode())])
    return int(ss.generate_state(2, dtype=np.uint64)[0] >> np.uint64(1))


def sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


@dataclass
class RunManifest:
    command: str
    argv: list[str]
    version: str = __version__
    inputs: dict[str, str] = field(default_factory=dict)
    seed: int | None = None
    streams: dict[str, int] = field(default_factory=dict)
    parameters: dict = field(default_factory=dict)
    outputs: list[str] = field(default_factory=list)
    wall_clock_s: float = 0.0
    candidate_counts: list = field(default_factory=list)

    def write(self, path: Path) -> None:
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# loading


def _read(path: str) -> tuple[Path, str]:
    p = Path(path)
    try:
        return p, p.read_text()
    except OSError as e:
        raise InputError(f"{path}: {e.strerror}") from None


def load_model(path: str) -> ModelSpec:
    p, text = _read(path)
    try:
        model = parse_model(text)
    except ModelError as e:
        raise InputError(f"{p}: {e}") from None
    problems = validate(model)
    if problems:
        raise InputError(f"{p}: " + "; ".join(problems))
    return model


def load_options(path: str, model: ModelSpec) -> OptionSet:
    p, text = _read(path)
    try:
        options = parse_options(text, model)
    except (OptionError, ModelError) as e:
        raise InputError(f"{p}: {e}") from None
    problems = validate_options(model, options)
    if problems:
        raise InputError(f"{p}: " + "; ".join(problems))
    return options


def load_policy(path: str, options: OptionSet | None = None) -> JointPolicy:
    p, text = _read(path)
    try:
        jp = JointPolicy.loads(text)
    except (ValueError, KeyError, TypeError) as e:
        raise InputError(f"{p}: not a policy file ({e})") from None
    if options is not None:
        problems = check_joint(options, jp)
        if problems:
            raise InputError(f"{p}: " + "; ".join(problems))
    return jp


def _emit(args, payload: dict, text: str) -> None:
    print(json.dumps(payload, sort_keys=True) if args.json else text)


# ---------------------------------------------------------------------------
# commands


def cmd_gen(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest("gen", sys.argv[1:] if args.argv is None else args.argv)
    t0 = time.perf_counter()
    if args.source in TOY_NAMES:
        model, options = gen_toy(args.source)
        manifest.parameters = {"toy": args.source}
    else:
        p, text = _read(args.source)
        manifest.inputs[str(p)] = sha256(p)
        try:
            cfg = parse_config(text)
            if args.scenario is not None:
                from dataclasses import replace

                cfg = replace(cfg, scenario=SCENARIOS[args.scenario - 1])
            w = build_warehouse(cfg)
        except (WarehouseError, ValueError) as e:
            raise InputError(f"{p}: {e}") from None
        model, options = w.model, w.options
        (out / "config.txt").write_text(emit_config(cfg))
        manifest.outputs.append(str(out / "config.txt"))
        manifest.parameters = {"scenario": cfg.scenario, "states": len(w.states)}
    (out / "model.txt").write_text(emit_model(model))
    (out / "options.txt").write_text(emit_options(options))
    manifest.outputs += [str(out / "model.txt"), str(out / "options.txt")]
    manifest.wall_clock_s = time.perf_counter() - t0
    manifest.write(out / "manifest.json")
    _emit(args, {"states": model.n_states, "agents": model.n_agents, "out": str(out)},
          f"wrote {model.n_states}-state, {model.n_agents}-agent model to {out}")
    return EXIT_OK


def cmd_solve(args) -> int:
    model = load_model(args.model)
    options = load_options(args.options, model)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    caps = Caps(trees=args.cap, joint=args.joint_cap)
    h = args.horizon
    manifest = RunManifest("solve", sys.argv[1:] if args.argv is None else args.argv, seed=args.seed)
    manifest.inputs = {args.model: sha256(Path(args.model)), args.options: sha256(Path(args.options))}
    manifest.parameters = {"algo": args.algo, "horizon": h, "caps": asdict(caps)}
    t0 = time.perf_counter()
    if args.algo == "odp":
        jp, report, stats = solve_odp(model, options, h, caps=caps)
    else:
        sampling = named_seed(args.seed, "sampling")
        manifest.streams["sampling"] = sampling
        max_trees = None if args.max_trees <= 0 else args.max_trees
        cfg = RetentionConfig(max_trees=max_trees, seed=sampling, heuristic=args.heuristic)
        manifest.parameters.update(max_trees=max_trees, heuristic=args.heuristic)
        jp, report, stats = solve_ombdp(model, options, h, cfg=cfg, caps=caps)
    manifest.wall_clock_s = time.perf_counter() - t0
    manifest.candidate_counts = [it.get("candidates", it.get("trees")) for it in stats.iterations]
    (out / "policy.json").write_text(jp.dumps())
    result = {"report": report.to_json(), "stats": stats.to_json()}
    (out / "report.json").write_text(json.dumps(result, indent=2, sort_keys=True, default=str) + "\n")
    manifest.outputs = [str(out / "policy.json"), str(out / "report.json")]
    manifest.write(out / "manifest.json")
    roots = [t.option for t in jp.trees]
    _emit(args, {"value": report.value, "roots": roots, "out": str(out)},
          f"value {report.value:.10g}  roots {' '.join(roots)}  -> {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    model = load_model(args.model)
    options = load_options(args.options, model)
    jp = load_policy(args.policy, options)
    payload: dict = {}
    lines = []
    if args.exact or not args.mc:
        rep = evaluate_exact(model, options, jp, args.horizon)
        payload["exact"] = rep.to_json()
        lines.append(f"exact {rep.value:.10g}  fall-off {rep.fall_off:.3g}")
    if args.mc:
        mc_seed = named_seed(args.seed, "mc")
        mean, se = evaluate_mc(model, options, jp, args.horizon, args.mc, mc_seed)
        payload["mc"] = {"mean": mean, "stderr": se, "samples": args.mc, "seed": mc_seed}
        lines.append(f"mc    {mean:.10g}  stderr {se:.3g}  (n={args.mc})")
    _emit(args, payload, "\n".join(lines))
    return EXIT_OK


def _looks_like_warehouse(model: ModelSpec) -> bool:
    from .domains.warehouse import parse_state_name

    try:
        parse_state_name(model.states[0])
    except (ValueError, IndexError):
        return False
    return True


def cmd_sim(args) -> int:
    model = load_model(args.model)
    options = load_options(args.options, model)
    jp = load_policy(args.policy, options)
    ep_seed = named_seed(args.seed, "episodes")
    fh = open(args.trace, "w") if args.trace else None
    per_trace = None
    if _looks_like_warehouse(model):
        per_trace = _warehouse_deliveries
    try:
        summary = batch_stats(model, options, jp, args.episodes, ep_seed, args.horizon, per_trace=per_trace,
                              on_trace=(lambda tr: fh.write(tr.to_jsonl())) if fh else None)
    finally:
        if fh:
            fh.close()
    payload = summary.to_json()
    payload["seed"] = ep_seed
    text = f"mean {summary.mean:.10g}  stderr {summary.stderr:.3g}  episodes {summary.n}  fell-off {summary.fell_off}"
    if summary.extra:
        text += "  " + "  ".join(f"{k} {v}" for k, v in sorted(summary.extra.items()))
    _emit(args, payload, text)
    return EXIT_OK


def _warehouse_deliveries(trace) -> dict[str, int]:
    from .domains.warehouse import DELIVERED, parse_state_name

    final = parse_state_name(trace.final_state)
    return {"delivered": sum(loc == DELIVERED for loc in final[1])}


def cmd_export(args) -> int:
    jp = load_policy(args.policy)
    agents = range(len(jp)) if args.agent is None else [args.agent]
    if args.agent is not None and not 0 <= args.agent < len(jp):
        raise InputError(f"{args.policy}: no agent {args.agent}")
    suffix = "dot" if args.format == "dot" else "json"
    written = []
    for i in agents:
        text = export_controller(jp.trees[i], args.format, name=f"agent{i}")
        if args.out == "-":
            sys.stdout.write(text)
            continue
        path = Path(args.out)
        if len(agents) > 1 or path.is_dir() or not path.suffix:
            path.mkdir(parents=True, exist_ok=True)
            path = path / f"agent{i}.{suffix}"
        path.write_text(text)
        written.append(str(path))
    if args.out != "-":
        _emit(args, {"written": written}, "\n".join(f"wrote {p}" for p in written))
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="macdec", description="Option-based planning for decentralized teams.")
    p.add_argument("--version", action="version", version=f"macdec {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--json", action="store_true", help="machine-readable stdout")

    g = sub.add_parser("gen", help="write model/options files for a toy or a warehouse config")
    g.add_argument("source", help=f"warehouse config file or toy name ({', '.join(TOY_NAMES)})")
    g.add_argument("--out", required=True)
    g.add_argument("--scenario", type=int, choices=(1, 2, 3))
    common(g)
    g.set_defaults(func=cmd_gen)

    s = sub.add_parser("solve", help="solve for a joint option policy")
    s.add_argument("model")
    s.add_argument("options")
    s.add_argument("--algo", choices=("odp", "ombdp"), default="ombdp")
    s.add_argument("--horizon", type=int)
    s.add_argument("--max-trees", type=int, default=3, help="retained trees per agent; 0 disables retention")
    s.add_argument("--heuristic", default="random-options", choices=sorted(HEURISTICS))
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--cap", type=int, default=Caps.trees, help="per-agent backup candidate cap")
    s.add_argument("--joint-cap", type=int, default=Caps.joint, help="joint evaluation cap")
    s.add_argument("--out", required=True)
    common(s)
    s.set_defaults(func=cmd_solve)

    e = sub.add_parser("eval", help="evaluate a policy exactly and/or by sampling")
    e.add_argument("model")
    e.add_argument("options")
    e.add_argument("policy")
    e.add_argument("--horizon", type=int)
    e.add_argument("--exact", action="store_true")
    e.add_argument("--mc", type=int, metavar="N")
    e.add_argument("--seed", type=int, default=0)
    common(e)
    e.set_defaults(func=cmd_eval)

    m = sub.add_parser("sim", help="simulate decentralized episodes")
    m.add_argument("model")
    m.add_argument("options")
    m.add_argument("policy")
    m.add_argument("--episodes", type=int, default=100)
    m.add_argument("--horizon", type=int)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--trace", help="JSONL trace output path")
    common(m)
    m.set_defaults(func=cmd_sim)

    x = sub.add_parser("export", help="export per-agent controllers")
    x.add_argument("policy")
    x.add_argument("--format", choices=("dot", "json"), default="dot")
    x.add_argument("--agent", type=int)
    x.add_argument("--out", default="-", help="file, directory, or - for stdout")
    common(x)
    x.set_defaults(func=cmd_export)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    args.argv = argv
    try:
        return args.func(args)
    except CapExceeded as e:
        print(f"macdec: cap exceeded: {e}", file=sys.stderr)
        return EXIT_CAP
    except (InputError, ModelError, OptionError, PolicyError, WarehouseError, ValueError) as e:
        print(f"macdec: {e}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
