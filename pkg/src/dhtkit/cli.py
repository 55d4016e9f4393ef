"""Command-line front end.

Every command is a pure function of its flags and input files: outputs are
sorted JSON / CSV with no timestamps, each carrying a manifest (tool
version, resolved config, SHA-256 of every input).  Exit codes: 0 success,
2 bad input, 3 internal invariant violation.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import os
import sys
import tempfile
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .causal import classify_ensemble, future_cone, growth_transitions, theta_descriptor
from .cluster import ClusterError, LinkageSpec, agglomerate, load_events
from .emergence import (
    CONTINUITY_FORMS,
    PHASE_MODES,
    POTENTIAL_MODES,
    EmergenceConfig,
    EmergenceError,
    GridField,
    emerge,
    growth_trajectory,
)
from .ensemble import (
    EnsembleError,
    WorldLedger,
    chained_measure,
    init_ensemble,
    make_observer,
    theta_classes,
    unique_world_lines,
    world_lines,
)
from .padic import Dendrogram, PadicError, canonicalize

log = logging.getLogger("dhtkit")

EXIT_INPUT = 2
EXIT_INTERNAL = 3


class InputError(Exception):
    pass


class InvariantViolation(Exception):
    pass


# ---------------------------------------------------------------------------
# I/O helpers
# ---------------------------------------------------------------------------


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _manifest(command: str, config: dict, inputs: Sequence[Path]) -> dict:
    return {
        "tool": "dhtkit",
        "version": __version__,
        "command": command,
        "config": config,
        "inputs": [{"name": p.name, "sha256": _sha256(p)} for p in inputs],
    }


def _dumps(payload) -> str:
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def _write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _emit(outputs: dict[str, str], out_dir: Path | None, stdout_key: str | None = None) -> None:
    """Write every rendered output; nothing is written unless all rendered fine."""
    if out_dir is None:
        if stdout_key is not None:
            sys.stdout.write(outputs[stdout_key])
        return
    for name, text in outputs.items():
        _write_atomic(out_dir / name, text)


def _read_json(path: Path):
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise InputError(f"{path}: no such file") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON ({exc})") from None


def _load_dendrogram(path: Path) -> Dendrogram:
    data = _read_json(path)
    if isinstance(data, str):
        return Dendrogram.from_text(data)
    if isinstance(data, dict) and "leaves" not in data and "text" in data:
        return Dendrogram.from_text(data["text"])
    return Dendrogram.from_json(data)


def _field_csv(field: GridField) -> str:
    buf = io.StringIO()
    buf.write("cell_center,value_real,value_imag\n")
    vals = np.asarray(field.values)
    for x, v in zip(field.centers, vals):
        v = complex(v)
        buf.write(f"{x:.17g},{v.real:.17g},{v.imag:.17g}\n")
    return buf.getvalue()


def _columns_csv(centers: np.ndarray, columns: dict[str, np.ndarray]) -> str:
    buf = io.StringIO()
    buf.write(",".join(["cell_center", *columns]) + "\n")
    for idx, x in enumerate(centers):
        row = [f"{x:.17g}"] + [f"{float(col[idx]):.17g}" for col in columns.values()]
        buf.write(",".join(row) + "\n")
    return buf.getvalue()


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def _linkage(args, suffix: str = "") -> LinkageSpec:
    return LinkageSpec(getattr(args, "metric" + suffix), getattr(args, "linkage" + suffix))


def _cluster_payload(path: Path, spec: LinkageSpec, args) -> tuple[Dendrogram, dict]:
    try:
        with path.open(encoding="utf-8", newline="") as fh:
            events = load_events(fh, header=args.header, on_duplicate=args.on_duplicate)
    except FileNotFoundError:
        raise InputError(f"{path}: no such file") from None
    d = agglomerate(events, spec)
    return d, {
        **d.to_json(),
        "text": d.to_text(),
        "canonical_form": canonicalize(d),
        "theta": theta_descriptor(d).to_json(),
    }


def cmd_cluster(args) -> int:
    spec = _linkage(args)
    config = {
        "metric": spec.metric,
        "linkage": spec.linkage,
        "tie_break": spec.tie_break,
        "header": args.header,
        "on_duplicate": args.on_duplicate,
    }
    _, payload = _cluster_payload(args.input, spec, args)
    payload["manifest"] = _manifest("cluster", config, [args.input])
    text = _dumps(payload)
    if args.output:
        _write_atomic(args.output, text)
    else:
        sys.stdout.write(text)
    return 0


def _emergence_config(args) -> EmergenceConfig:
    form = args.continuity_form
    return EmergenceConfig(
        grid_depth=args.grid_depth,
        z_v=args.z_v,
        potential_mode=args.potential_mode,
        phase_mode=args.phase_mode,
        continuity_form="standard_flux" if form == "both" else form,
        pair_convention=args.pair_convention,
    )


def _trajectory(path: Path) -> list[list[Fraction]]:
    data = _read_json(path)
    if isinstance(data, dict) and "events" in data:
        try:
            events = [Fraction(str(e)) for e in data["events"]]
        except (ValueError, ZeroDivisionError) as exc:
            raise InputError(f"{path}: bad event value ({exc})") from None
        if len(events) < 2:
            raise InputError(f"{path}: at least two events are needed")
        return [events[:k] for k in range(2, len(events) + 1)]
    return growth_trajectory(_load_dendrogram(path))


def cmd_emerge(args) -> int:
    cfg = _emergence_config(args)
    forms = list(CONTINUITY_FORMS) if args.continuity_form == "both" else [cfg.continuity_form]
    res = emerge(_trajectory(args.input), cfg, forms, uniform_rho=args.uniform_rho)
    config = {
        "grid_depth": res.depth,
        "z_v": cfg.z_v,
        "potential_mode": cfg.potential_mode,
        "phase_mode": cfg.phase_mode,
        "continuity_form": args.continuity_form,
        "pair_convention": cfg.pair_convention,
        "uniform_rho": args.uniform_rho,
    }
    summary = {**res.summary(), "manifest": _manifest("emerge", config, [args.input])}
    outputs = {
        "summary.json": _dumps(summary),
        "rho.csv": _field_csv(res.state.rho),
        "S.csv": _field_csv(res.state.S),
        "UQ.csv": _field_csv(res.UQ),
        "v.csv": _field_csv(res.v),
        "U.csv": _field_csv(res.U),
        "psi.csv": _field_csv(res.psi),
    }
    if res.hj is not None:
        outputs["hj_residual.csv"] = _field_csv(res.hj)
        cols = {"hj": res.hj.values}
        for form, f in res.continuity.items():
            outputs[f"continuity_{form}.csv"] = _field_csv(f)
            cols[f"continuity_{form}"] = f.values
        outputs["residuals.csv"] = _columns_csv(res.hj.centers, cols)
    _emit(outputs, args.out_dir, "summary.json")
    return 0


def cmd_cone(args) -> int:
    d = _load_dendrogram(args.input)
    cone = future_cone(d, args.steps, args.cap)
    payload = {
        **cone.to_json(),
        "manifest": _manifest("cone", {"steps": args.steps, "cap": args.cap}, [args.input]),
    }
    text = _dumps(payload)
    dot = cone.to_dot() if args.dot else None
    if args.output:
        _write_atomic(args.output, text)
    else:
        sys.stdout.write(text)
    if dot is not None:
        _write_atomic(args.dot, dot)
    return 0


def cmd_classify(args) -> int:
    if len(args.inputs) < 2:
        raise InputError("classify needs at least two dendrogram files")
    dendros = [_load_dendrogram(p) for p in args.inputs]
    result = classify_ensemble(dendros)
    payload = {
        **result.to_json(),
        "files": [p.name for p in args.inputs],
        "manifest": _manifest("classify", {}, list(args.inputs)),
    }
    text = _dumps(payload)
    if args.output:
        _write_atomic(args.output, text)
    else:
        sys.stdout.write(text)
    return 0


def _load_schedule(path: Path | None) -> list[tuple[object, list[int]]]:
    if path is None:
        return []
    data = _read_json(path)
    if isinstance(data, dict):
        data = data.get("rounds")
    if not isinstance(data, list):
        raise InputError(f"{path}: schedule must be a JSON list of rounds")
    rounds = []
    for idx, item in enumerate(data):
        if not isinstance(item, dict) or "targets" not in item:
            raise InputError(f"{path}: round {idx} needs a 'targets' list")
        targets = item["targets"]
        if not isinstance(targets, list) or not all(isinstance(t, int) for t in targets):
            raise InputError(f"{path}: round {idx} targets must be integers")
        rounds.append((item.get("theta", "all"), targets))
    return rounds


def _load_ensemble(path: Path):
    data = _read_json(path)
    items = data.get("observers") if isinstance(data, dict) else data
    if not isinstance(items, list):
        raise InputError(f"{path}: expected an 'observers' list")
    try:
        return tuple(
            make_observer(int(o["id"]), [Fraction(str(e)) for e in o["events"]], o["objective"], o.get("dendrogram"))
            for o in items
        )
    except (KeyError, TypeError) as exc:
        raise InputError(f"{path}: malformed observer entry ({exc})") from None


def cmd_simulate(args) -> int:
    schedule = _load_schedule(args.schedule)
    inputs = [p for p in (args.schedule, args.ensemble) if p is not None]
    if args.ensemble is not None:
        ensemble = _load_ensemble(args.ensemble)
    else:
        ensemble = init_ensemble(args.n, args.seed)
    classes = theta_classes(ensemble)
    if len(classes) != 1 and args.ensemble is None:
        raise InvariantViolation("a fresh ensemble must start in a single theta class")
    start = classes[0].canonical_form
    final, ledger, rounds = chained_measure(ensemble, schedule, WorldLedger.fresh(start))
    for rnd in rounds:
        if rnd.ledger.total_weight() != 1:
            raise InvariantViolation("ledger weights no longer sum to one")
    if not unique_world_lines(final):
        raise InvariantViolation("two observers share a world line")

    config = {
        "n": len(ensemble),
        "seed": args.seed if args.ensemble is None else None,
        "schedule": [{"theta": s, "targets": t} for s, t in schedule],
        "start_theta": start,
    }
    manifest = _manifest("simulate", config, inputs)
    history = {
        "initial": [c.to_json() for c in classes],
        "rounds": [r.to_json() for r in rounds],
    }
    buf = io.StringIO()
    # canonical forms contain commas, so let csv quote them
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["world", "record", "theta", "probability", "probability_exact"])
    for idx, (record, prob, theta) in enumerate(world_lines(ledger)):
        rec = ";".join(f"{'+'.join(map(str, t))}:{i}" for t, i in record)
        writer.writerow([idx, rec, theta, f"{float(prob):.17g}", str(prob)])
    outputs = {
        "ledger.json": _dumps({**ledger.to_json(), "manifest": manifest}),
        "world_lines.csv": buf.getvalue(),
        "theta_history.json": _dumps({**history, "manifest": manifest}),
        "manifest.json": _dumps(manifest),
    }
    _emit(outputs, args.out_dir, "ledger.json")
    return 0


def cmd_compare_linkage(args) -> int:
    spec_a, spec_b = _linkage(args, "_a"), _linkage(args, "_b")
    cfg = _emergence_config(args)
    reports = {}
    for name, spec in (("a", spec_a), ("b", spec_b)):
        d, payload = _cluster_payload(args.input, spec, args)
        res = emerge(growth_trajectory(d), cfg)
        reports[name] = {
            "linkage": {"metric": spec.metric, "linkage": spec.linkage},
            "canonical_form": payload["canonical_form"],
            "text": payload["text"],
            "summary": res.summary(),
        }
    diffs = {}
    for key, va in reports["a"]["summary"].items():
        vb = reports["b"]["summary"][key]
        if isinstance(va, (int, float)) and isinstance(vb, (int, float)):
            diffs[key] = vb - va
    config = {
        "a": reports["a"]["linkage"],
        "b": reports["b"]["linkage"],
        "grid_depth": cfg.grid_depth,
        "potential_mode": cfg.potential_mode,
        "phase_mode": cfg.phase_mode,
    }
    payload = {
        **reports,
        "same_shape": reports["a"]["canonical_form"] == reports["b"]["canonical_form"],
        "differences": diffs,
        "manifest": _manifest("compare-linkage", config, [args.input]),
    }
    text = _dumps(payload)
    if args.output:
        _write_atomic(args.output, text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_transitions(args) -> int:
    spec = _linkage(args)
    try:
        with args.input.open(encoding="utf-8", newline="") as fh:
            events = load_events(fh, header=args.header, on_duplicate=args.on_duplicate)
    except FileNotFoundError:
        raise InputError(f"{args.input}: no such file") from None
    # re-cluster every prefix of the event list from scratch
    sequence = [agglomerate(events[:k], spec) for k in range(2, len(events) + 1)]
    steps = growth_transitions(sequence)
    config = {"metric": spec.metric, "linkage": spec.linkage, "header": args.header, "on_duplicate": args.on_duplicate}
    payload = {
        "steps": [{"events": k + 3, **t.to_json()} for k, t in enumerate(steps)],
        "disagreements": [k + 3 for k, t in enumerate(steps) if not t.consistent],
        "manifest": _manifest("transitions", config, [args.input]),
    }
    text = _dumps(payload)
    if args.output:
        _write_atomic(args.output, text)
    else:
        sys.stdout.write(text)
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _add_cluster_flags(p: argparse.ArgumentParser, suffixes=("",)) -> None:
    p.add_argument("--header", action="store_true", help="first CSV row is a header")
    p.add_argument(
        "--on-duplicate", choices=("reject", "jitter"), default="reject",
        help="what to do with repeated event rows (default: reject)",
    )
    for s in suffixes:
        flag = s.replace("_", "-")
        p.add_argument(f"--metric{flag}", dest=f"metric{s}", choices=("euclidean", "manhattan", "chebyshev"), default="euclidean")
        p.add_argument(f"--linkage{flag}", dest=f"linkage{s}", choices=("single", "complete", "average"), default="average")


def _add_emergence_flags(p: argparse.ArgumentParser, allow_both: bool = True) -> None:
    p.add_argument("--grid-depth", type=int, default=None, help="grid depth d (2^d cells); default deepest code + 2")
    p.add_argument("--z-v", type=float, default=1.0, help="constant Z_V of the v potential (default 1)")
    p.add_argument("--potential-mode", choices=POTENTIAL_MODES, default="cdf")
    p.add_argument("--phase-mode", choices=PHASE_MODES, default="integrate_momentum")
    forms = (*CONTINUITY_FORMS, "both") if allow_both else CONTINUITY_FORMS
    p.add_argument("--continuity-form", choices=forms, default="standard_flux")
    p.add_argument("--pair-convention", choices=("ordered", "unordered"), default="ordered")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dhtkit", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"dhtkit {__version__}")
    parser.add_argument("--config", type=Path, help="JSON file of flag defaults (flag names with underscores)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("cluster", help="cluster CSV events into a 2-adic dendrogram")
    p.add_argument("input", type=Path)
    p.add_argument("-o", "--output", type=Path)
    _add_cluster_flags(p)
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("emerge", help="emergent fields and residuals of a dendrogram")
    p.add_argument("input", type=Path, help='dendrogram JSON, or {"events": [...]}')
    p.add_argument("--out-dir", type=Path, help="write summary and field CSVs here (default: summary to stdout)")
    p.add_argument("--uniform-rho", action="store_true", help="replace the density by a flat one")
    _add_emergence_flags(p)
    p.set_defaults(func=cmd_emerge)

    p = sub.add_parser("cone", help="future light cone of a dendrogram")
    p.add_argument("input", type=Path)
    p.add_argument("--steps", type=int, default=1)
    p.add_argument("--cap", type=int, default=None, help="stop after this many shapes")
    p.add_argument("-o", "--output", type=Path)
    p.add_argument("--dot", type=Path, help="also write the cone as a DOT graph")
    p.set_defaults(func=cmd_cone)

    p = sub.add_parser("classify", help="pairwise timelike/spacelike matrix")
    p.add_argument("inputs", type=Path, nargs="+")
    p.add_argument("-o", "--output", type=Path)
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("simulate", help="observers measuring each other")
    p.add_argument("--n", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--schedule", type=Path, help="JSON list of rounds {theta, targets}")
    p.add_argument("--ensemble", type=Path, help="explicit observers instead of a seeded ensemble")
    p.add_argument("--out-dir", type=Path)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("compare-linkage", help="emergent summaries under two linkage specs")
    p.add_argument("input", type=Path)
    p.add_argument("-o", "--output", type=Path)
    _add_cluster_flags(p, suffixes=("_a", "_b"))
    _add_emergence_flags(p, allow_both=False)
    p.set_defaults(func=cmd_compare_linkage)

    p = sub.add_parser("transitions", help="re-cluster growing event prefixes and check each step is an insertion")
    p.add_argument("input", type=Path)
    p.add_argument("-o", "--output", type=Path)
    _add_cluster_flags(p)
    p.set_defaults(func=cmd_transitions)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.config is not None:
            defaults = _read_json(args.config)
            if not isinstance(defaults, dict):
                raise InputError(f"{args.config}: config must be a JSON object")
            sub = parser._subparsers._group_actions[0].choices[args.command]
            sub.set_defaults(**{k.replace("-", "_"): v for k, v in defaults.items()})
            args = parser.parse_args(argv)
            for key in ("input", "output", "out_dir", "schedule", "ensemble", "dot"):
                if isinstance(getattr(args, key, None), str):
                    setattr(args, key, Path(getattr(args, key)))
        return args.func(args)
    except (InputError, ClusterError, PadicError, EmergenceError, EnsembleError) as exc:
        print(f"dhtkit {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ValueError as exc:
        print(f"dhtkit {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (InvariantViolation, AssertionError) as exc:
        print(f"dhtkit {args.command}: internal invariant violated: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
