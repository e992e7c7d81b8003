"""Command-line surface emitting plot-ready CSV/JSON reports.

Every command is deterministic given its arguments (seeds included),
emits rows in lexicographic layer order, and versions its column schema
in a leading comment line. Exit codes: 0 success, 2 usage or format
problems, 3 data mismatches.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import diagnostics, interventions, srf
from .errors import ConvergenceError, FormatError, ShapeMismatchError, TrainingDivergedError
from .linalg import WeightMatrix, svd
from .stats import bh_fdr, pearson
from .tensor_store import (
    CheckpointManifest,
    TensorRecord,
    match_layers,
    read_checkpoint,
    write_checkpoint,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_MISMATCH = 3


# ---------------------------------------------------------------------------
# report plumbing


def _fmt_value(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if x == 0.0:
            x = 0.0  # normalize -0.0
        return f"{x:.12g}"
    return str(x)


def _json_value(x):
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if not np.isfinite(x) else float(f"{x:.12g}")
    if isinstance(x, (int, np.integer)):
        return int(x)
    return x


@dataclass
class Report:
    """Rows of metric values, emitted in deterministic build order."""

    schema: str
    fields: list[str]
    rows: list[dict] = field(default_factory=list)

    def add(self, **values) -> None:
        self.rows.append(values)

    def render_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# spectra {self.schema}\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.fields)
        for row in self.rows:
            writer.writerow([_fmt_value(row[f]) for f in self.fields])
        return buf.getvalue()

    def render_json(self) -> str:
        payload = {
            "schema": f"spectra {self.schema}",
            "rows": [{f: _json_value(row[f]) for f in self.fields} for row in self.rows],
        }
        return json.dumps(payload, indent=2) + "\n"

    def write(self, out: str | None, fmt: str) -> None:
        text = self.render_json() if fmt == "json" else self.render_csv()
        if out is None:
            sys.stdout.write(text)
        else:
            with open(out, "w", newline="", encoding="utf-8") as fh:
                fh.write(text)


def _thread_count() -> int:
    try:
        return max(1, int(os.environ.get("SPECTRA_THREADS", "1")))
    except ValueError:
        return 1


def _map_layers(fn, items):
    workers = _thread_count()
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=min(workers, len(items))) as ex:
        return list(ex.map(fn, items))


# ---------------------------------------------------------------------------
# argument helpers


class RankSpec:
    """Rank selection: 'all', 'none', or comma-separated N / A..B items
    (half-open intervals). Resolved against each layer's rank count."""

    def __init__(self, text: str):
        self.text = text.strip()
        self._all = False
        self._indices: set[int] = set()
        if self.text == "all":
            self._all = True
            return
        if self.text == "none":
            return
        for token in self.text.split(","):
            token = token.strip()
            try:
                if ".." in token:
                    lo_s, hi_s = token.split("..")
                    lo, hi = int(lo_s), int(hi_s)
                    if lo < 0 or hi < lo:
                        raise ValueError
                    self._indices.update(range(lo, hi))
                else:
                    value = int(token)
                    if value < 0:
                        raise ValueError
                    self._indices.add(value)
            except ValueError:
                raise argparse.ArgumentTypeError(f"bad rank spec {token!r}") from None

    def resolve(self, p: int) -> list[int]:
        if self._all:
            return list(range(p))
        return sorted(i for i in self._indices if i < p)

    def __str__(self) -> str:
        return self.text


def _count_arg(text: str):
    if text == "all":
        return "all"
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad count {text!r}") from None
    if value < 0:
        raise argparse.ArgumentTypeError("count must be non-negative")
    return value


def svd_weight(values: np.ndarray, name: str):
    return svd(WeightMatrix(values, name=name))


def _load_pairs(args) -> list:
    pre = read_checkpoint(args.pre)
    post = read_checkpoint(args.post)
    pairs = match_layers(pre, post, args.layers, args.min_dim)
    if not pairs:
        raise FormatError(f"no rank-2 layers match pattern {args.layers!r} in both checkpoints")
    return pairs


def _matrix_layers(manifest: CheckpointManifest, pattern: str, min_dim: int):
    from fnmatch import fnmatchcase

    out = []
    for name in sorted(manifest.entries):
        rec = manifest.entries[name]
        if not fnmatchcase(name, pattern) or len(rec.shape) != 2 or min(rec.shape) < min_dim:
            continue
        out.append((name, rec))
    return out


# ---------------------------------------------------------------------------
# commands


def cmd_align(args) -> int:
    pairs = _load_pairs(args)

    def one(pair):
        series = diagnostics.align_factorizations(
            svd(pair.pre), svd(pair.post), args.ranks.resolve(min(pair.pre.values.shape))
        )
        return pair.name, series

    report = Report("align v1", ["layer", "rank", "left", "right", "degenerate"])
    for name, series in _map_layers(one, pairs):
        for i, rank in enumerate(series.ranks):
            report.add(
                layer=name,
                rank=int(rank),
                left=series.left[i],
                right=series.right[i],
                degenerate=bool(series.degenerate[i]),
            )
    report.write(args.out, args.format)
    return EXIT_OK


def cmd_delta(args) -> int:
    pairs = _load_pairs(args)

    def one(pair):
        p = min(pair.pre.values.shape)
        ranks = args.ranks.resolve(p)
        f_pre, f_post = svd(pair.pre), svd(pair.post)
        ds = diagnostics.delta_spectrum(pair, ranks)
        series = diagnostics.align_factorizations(f_pre, f_post, ranks)
        return pair.name, ds, series

    report = Report(
        "delta v1",
        ["layer", "rank", "ratio", "update_left", "update_right", "left", "right", "pre_sigma_zero"],
    )
    for name, ds, series in _map_layers(one, pairs):
        for i, rank in enumerate(ds.ranks):
            report.add(
                layer=name,
                rank=int(rank),
                ratio=ds.ratios[i],
                update_left=ds.align_u[i],
                update_right=ds.align_v[i],
                left=series.left[i],
                right=series.right[i],
                pre_sigma_zero=bool(ds.pre_sigma_zero[i]),
            )
    report.write(args.out, args.format)
    return EXIT_OK


def cmd_spectrum(args) -> int:
    pairs = _load_pairs(args)

    def one(pair):
        stats = diagnostics.spectrum_change(svd(pair.pre).S, svd(pair.post).S, args.tail_frac)
        return pair.name, stats

    report = Report(
        "spectrum v1",
        ["layer", "n_sv", "rsd", "mrc", "maxrc", "t1rc", "tailrc", "er_pre", "er_post", "d_er"],
    )
    for name, st in _map_layers(one, pairs):
        report.add(
            layer=name, n_sv=st.n_sv, rsd=st.rsd, mrc=st.mrc, maxrc=st.maxrc,
            t1rc=st.t1rc, tailrc=st.tailrc, er_pre=st.er_pre, er_post=st.er_post, d_er=st.d_er,
        )
    report.write(args.out, args.format)
    return EXIT_OK


def cmd_variance(args) -> int:
    manifest = read_checkpoint(args.checkpoint)
    layers = _matrix_layers(manifest, args.layers, args.min_dim)
    if not layers:
        raise FormatError(f"no rank-2 layers match pattern {args.layers!r} in {args.checkpoint}")

    def one(item):
        name, rec = item
        f = svd_weight(rec.data, name)
        curve = diagnostics.explained_variance_curve(f.S)
        k90 = diagnostics.min_rank_for_energy(f.S, 0.90)
        return name, curve, k90

    report = Report("variance v1", ["layer", "k", "explained_variance", "k90"])
    for name, curve, k90 in _map_layers(one, layers):
        for k, ev in enumerate(curve, start=1):
            report.add(layer=name, k=k, explained_variance=ev, k90=k90)
    report.write(args.out, args.format)
    return EXIT_OK


def cmd_trajectory(args) -> int:
    manifests = [read_checkpoint(p) for p in args.checkpoints]
    per = [dict(_matrix_layers(man, args.layers, args.min_dim)) for man in manifests]
    names = sorted(set(per[0]).intersection(*per[1:])) if per else []
    if not names:
        raise FormatError(f"no rank-2 layers match pattern {args.layers!r} in all checkpoints")
    for name in names:
        shapes = {per_ckpt[name].shape for per_ckpt in per}
        if len(shapes) > 1:
            raise ShapeMismatchError(f"layer {name!r} has inconsistent shapes across checkpoints: {sorted(shapes)}")

    def one(name):
        facts = [svd_weight(per_ckpt[name].data, name) for per_ckpt in per]
        topk = min(args.topk, facts[0].p)
        return name, diagnostics.trajectory_alignment(facts, topk)

    report = Report("trajectory v1", ["layer", "i", "j", "alignment"])
    for name, matrix in _map_layers(one, names):
        for i in range(matrix.shape[0]):
            for j in range(matrix.shape[1]):
                report.add(layer=name, i=i, j=j, alignment=matrix[i, j])
    report.write(args.out, args.format)
    return EXIT_OK


def _record_like(record: TensorRecord, new_data: np.ndarray) -> TensorRecord:
    return TensorRecord(dtype=record.dtype, shape=record.shape, data=new_data)


def _intervene_metadata(args) -> dict:
    meta = {"spectra.intervention": args.mode, "spectra.ranks": str(args.ranks)}
    if args.mode == "randomize":
        meta["spectra.seed"] = str(args.seed)
        meta["spectra.note"] = "random replacement destroys basis orthogonality"
    if args.mode == "mask":
        meta["spectra.direction"] = args.direction
        meta["spectra.count"] = str(args.count)
    if args.mode == "replace":
        meta["spectra.sides"] = args.sides
    return meta


def cmd_intervene(args) -> int:
    mode = args.mode
    two_inputs = mode in ("replace", "swap")
    expected_inputs = 2 if two_inputs else 1
    if len(args.inputs) != expected_inputs:
        raise FormatError(f"mode {mode} takes {expected_inputs} input checkpoint(s), got {len(args.inputs)}")
    expected_outputs = 2 if mode == "swap" else 1
    if len(args.out_ckpt) != expected_outputs:
        raise FormatError(f"mode {mode} writes {expected_outputs} output checkpoint(s), got {len(args.out_ckpt)}")
    if mode == "mask" and args.count is None:
        raise FormatError("mode mask requires --count")

    changes = Report("intervene v1", ["layer", "frobenius_change"])
    outputs: list[CheckpointManifest] = []

    if two_inputs:
        first = read_checkpoint(args.inputs[0])
        second = read_checkpoint(args.inputs[1])
        pairs = match_layers(first, second, args.layers, args.min_dim)
        if not pairs:
            raise FormatError(f"no rank-2 layers match pattern {args.layers!r} in both checkpoints")
        out_a = CheckpointManifest(entries=dict(first.entries), metadata=dict(first.metadata))
        out_b = CheckpointManifest(entries=dict(second.entries), metadata=dict(second.metadata))

        def one(pair):
            fa, fb = svd(pair.pre), svd(pair.post)
            ranks = args.ranks.resolve(fa.p)
            if mode == "replace":
                new = interventions.replace_vectors(fa, fb, ranks, sides=args.sides)
                return pair.name, (new.values,), np.linalg.norm(new.values - pair.pre.values)
            new_a, new_b = interventions.swap_vectors(fa, fb, ranks)
            change = np.linalg.norm(new_a.values - pair.pre.values)
            return pair.name, (new_a.values, new_b.values), change

        for name, arrays, change in _map_layers(one, pairs):
            out_a.entries[name] = _record_like(out_a.entries[name], arrays[0])
            if mode == "swap":
                out_b.entries[name] = _record_like(out_b.entries[name], arrays[1])
            changes.add(layer=name, frobenius_change=float(change))
        outputs = [out_a, out_b] if mode == "swap" else [out_a]
    else:
        manifest = read_checkpoint(args.inputs[0])
        layers = _matrix_layers(manifest, args.layers, args.min_dim)
        if not layers:
            raise FormatError(f"no rank-2 layers match pattern {args.layers!r} in {args.inputs[0]}")
        out = CheckpointManifest(entries=dict(manifest.entries), metadata=dict(manifest.metadata))

        def one(item):
            name, rec = item
            f = svd_weight(rec.data, name)
            if mode == "zero":
                new = interventions.zero_vectors(f, args.ranks.resolve(f.p))
            elif mode == "randomize":
                new = interventions.randomize_vectors(f, args.ranks.resolve(f.p), args.seed)
            else:  # mask
                count = f.p if args.count == "all" else min(args.count, f.p)
                new = interventions.mask_by_order(f, count, args.direction)
            return name, (new.values,), np.linalg.norm(new.values - rec.data)

        for name, arrays, change in _map_layers(one, layers):
            out.entries[name] = _record_like(out.entries[name], arrays[0])
            changes.add(layer=name, frobenius_change=float(change))
        outputs = [out]

    meta = _intervene_metadata(args)
    for manifest_out, path in zip(outputs, args.out_ckpt):
        manifest_out.metadata.update(meta)
        write_checkpoint(manifest_out, path, dtype=args.dtype)
    changes.write(None, "csv")
    return EXIT_OK


def cmd_srf_train(args) -> int:
    manifest = read_checkpoint(args.base)
    if args.layer not in manifest:
        raise FormatError(f"layer {args.layer!r} not found in {args.base}")
    rec = manifest.entries[args.layer]
    if len(rec.shape) != 2:
        raise FormatError(f"layer {args.layer!r} is rank {len(rec.shape)}, need rank 2")
    base = svd_weight(rec.data, args.layer)
    adapter = srf.SpectralAdapter(base, start=args.k, width=args.width)

    if args.task == "synth-recover":
        task = srf.make_recovery_task(
            base, args.k, args.width, args.batch_size, data_seed=args.seed, target_seed=args.seed + 1
        )
    else:  # synth-outside: displace along the first rank past the block
        outside = args.k + args.width
        if outside >= base.p:
            raise FormatError(f"no rank outside block [{args.k}, {args.k + args.width}) of {base.p} ranks")
        task = srf.make_outside_task(base, args.batch_size, data_seed=args.seed, outside_rank=outside)

    cfg = srf.TrainConfig(
        steps=args.steps,
        learning_rate=args.lr,
        batch_size=args.batch_size,
        seed=args.seed,
        optimizer=args.optimizer,
    )
    log = srf.train_srf(adapter, task.source, cfg)
    srf.write_train_log(log, args.out)
    if args.out_block:
        out = CheckpointManifest()
        out.add(f"{args.layer}.spectral_block", log.final_block)
        out.metadata = {
            "spectra.task": args.task,
            "spectra.k": str(args.k),
            "spectra.width": str(args.width),
            "spectra.seed": str(args.seed),
        }
        write_checkpoint(out, args.out_block, dtype="F64")
    print(f"final loss {_fmt_value(log.final_loss)}")
    return EXIT_OK


def cmd_correlate(args) -> int:
    with open(args.table, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(row for row in fh if not row.startswith("#"))
        if reader.fieldnames is None or not {"x", "y"}.issubset(reader.fieldnames):
            raise FormatError(f"{args.table}: need columns x,y (optional group)")
        groups: dict[str, list[tuple[float, float]]] = {}
        for row in reader:
            key = row.get("group") or "all"
            try:
                groups.setdefault(key, []).append((float(row["x"]), float(row["y"])))
            except (TypeError, ValueError):
                raise FormatError(f"{args.table}: non-numeric x/y value in group {key!r}") from None
    if not groups:
        raise FormatError(f"{args.table}: no data rows")

    names = sorted(groups)
    results = []
    for name in names:
        xs, ys = zip(*groups[name])
        try:
            results.append(pearson(xs, ys))
        except ValueError as exc:
            raise FormatError(f"group {name!r}: {exc}") from None
    rejected = bh_fdr([res.p_value for res in results], args.fdr)

    report = Report("correlate v1", ["group", "n", "r", "p", "rejected"])
    for i, (name, res) in enumerate(zip(names, results)):
        report.add(group=name, n=res.n, r=res.r, p=res.p_value, rejected=i in rejected)
    report.write(args.out, args.format)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def _add_common(p: argparse.ArgumentParser, ranks: bool = False) -> None:
    p.add_argument("--layers", default="*", help="glob pattern of layer names (default: all)")
    p.add_argument("--min-dim", type=int, default=2, help="skip rank-2 tensors smaller than this")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--out", default=None, help="output path (default: stdout)")
    if ranks:
        p.add_argument("--ranks", type=RankSpec, default=RankSpec("0..30"),
                       help="rank selection: N, A..B (half-open), comma list, all, none")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spectra", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("align", help="singular-vector alignment between two checkpoints")
    p.add_argument("pre")
    p.add_argument("post")
    _add_common(p, ranks=True)
    p.set_defaults(func=cmd_align)

    p = sub.add_parser("delta", help="update-magnitude ratios and update alignment")
    p.add_argument("pre")
    p.add_argument("post")
    _add_common(p, ranks=True)
    p.set_defaults(func=cmd_delta)

    p = sub.add_parser("spectrum", help="singular-value change statistics per layer")
    p.add_argument("pre")
    p.add_argument("post")
    p.add_argument("--tail-frac", type=float, default=0.1)
    _add_common(p)
    p.set_defaults(func=cmd_spectrum)

    p = sub.add_parser("variance", help="cumulative explained variance per layer")
    p.add_argument("checkpoint")
    _add_common(p)
    p.set_defaults(func=cmd_variance)

    p = sub.add_parser("trajectory", help="pairwise top-k alignment across checkpoints")
    p.add_argument("checkpoints", nargs="+")
    p.add_argument("--topk", type=int, default=30)
    _add_common(p)
    p.set_defaults(func=cmd_trajectory)

    p = sub.add_parser("intervene", help="write a counterfactual checkpoint")
    p.add_argument("mode", choices=("replace", "swap", "zero", "randomize", "mask"))
    p.add_argument("inputs", nargs="+")
    p.add_argument("--out-ckpt", nargs="+", required=True, help="one path (two for swap)")
    p.add_argument("--sides", choices=("left", "right", "both"), default="both")
    p.add_argument("--direction", choices=("top_down", "bottom_up"), default="top_down")
    p.add_argument("--count", type=_count_arg, default=None, help="mask depth (int or 'all')")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dtype", choices=("F32", "F64"), default="F64")
    _add_common(p, ranks=True)
    p.set_defaults(func=cmd_intervene)

    p = sub.add_parser("srf-train", help="train a spectral block on a synthetic task")
    p.add_argument("--base", required=True)
    p.add_argument("--layer", required=True)
    p.add_argument("--k", type=int, required=True, help="block start rank")
    p.add_argument("--width", type=int, required=True)
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--optimizer", choices=("sgd", "adam"), default="sgd")
    p.add_argument("--task", choices=("synth-recover", "synth-outside"), required=True)
    p.add_argument("--out", required=True, help="training log CSV path")
    p.add_argument("--out-block", default=None, help="optional checkpoint for the trained block")
    p.set_defaults(func=cmd_srf_train)

    p = sub.add_parser("correlate", help="grouped Pearson correlations with BH-FDR flags")
    p.add_argument("--table", required=True, help="CSV with columns x,y and optional group")
    p.add_argument("--fdr", type=float, default=0.05)
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_correlate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else EXIT_OK
    try:
        return args.func(args)
    except (FormatError, FileNotFoundError, ValueError, TrainingDivergedError) as exc:
        print(f"spectra: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ShapeMismatchError, ConvergenceError, IndexError) as exc:
        print(f"spectra: error: {exc}", file=sys.stderr)
        return EXIT_MISMATCH


if __name__ == "__main__":
    sys.exit(main())
