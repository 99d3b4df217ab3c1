"""Command-line entry point: ``idsp {fit,ablate,synth,probe}``.

Exit codes: 0 success, 1 input error, 2 numerical error, 3 internal
invariant violation.
"""

import argparse
import csv
import io
import os
import sys
from dataclasses import replace

import numpy as np

from . import _backend
from .data import SynthTaskSpec, generate_synth, load_dataset, save_dataset, save_predictions, split_counts
from .data import _atomic_write
from .diagnostics import accuracy, gd_oracle, smoothness_curve
from .errors import IDSPError, InputError
from .graph import GraphMode
from .kernels import KernelSpec, build_kernel_matrix, cross_kernel
from .solver import JDA_PDA_DEFAULTS, JDA_UDA_DEFAULTS, SolverConfig, fit, mmd_matrix

MODES = [m.value for m in GraphMode]


# ---------------------------------------------------------------------------
# argument parsing


def _add_synth_flags(p):
    g = p.add_argument_group("synthetic task")
    g.add_argument("--classes", type=int, default=4)
    g.add_argument("--private", type=int, default=2, help="source-only classes")
    g.add_argument("--per-class", type=int, default=60, help="samples per class per domain")
    g.add_argument("--dim", type=int, default=10)
    g.add_argument("--separation", type=float, default=4.0, help="distance between class means")
    g.add_argument("--shift", type=float, default=1.5, help="length of the target mean shift")
    g.add_argument("--noise", type=float, default=1.0)
    g.add_argument("--seed", type=int, default=0)


def _add_input_flags(p):
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--data", help="dataset CSV (id,domain,label,f0,...)")
    src.add_argument("--synth", action="store_true", help="generate a synthetic task instead")
    p.add_argument("--seeds", type=int, default=1, help="with --synth: run seeds seed..seed+k-1")
    p.add_argument("--class-count", type=int, default=None, help="override inferred class count")
    _add_synth_flags(p)


def _add_solver_flags(p):
    g = p.add_argument_group("solver")
    g.add_argument("--lambda", dest="lam", type=float, default=0.1)
    g.add_argument("--gamma", type=float, default=None,
                   help="default 5 for PDA, 1 for UDA; with JDA 10 (PDA) or 2 (UDA)")
    g.add_argument("--eta", type=float, default=None, help="JDA weight; > 0 enables JDA")
    g.add_argument("--jda", action="store_true", help="enable JDA with default eta")
    g.add_argument("--p", type=int, default=10, help="nearest neighbours per sample")
    g.add_argument("--mode", choices=MODES, default="t")
    g.add_argument("--kernel", default="linear", help="linear | cosine | rbf | rbf:<sigma>")
    g.add_argument("--max-iter", type=int, default=10)
    setting = g.add_mutually_exclusive_group()
    setting.add_argument("--pda", dest="setting", action="store_const", const="pda")
    setting.add_argument("--uda", dest="setting", action="store_const", const="uda")
    p.add_argument("--out", required=True, help="output directory")


def build_parser():
    parser = argparse.ArgumentParser(prog="idsp", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit and predict target labels")
    _add_input_flags(p)
    _add_solver_flags(p)
    p.add_argument("--oracle-check", action="store_true",
                   help="compare the closed form with gradient descent (n+m <= 50)")

    p = sub.add_parser("ablate", help="compare graph modes np/t/st/cst on shared kernels")
    _add_input_flags(p)
    _add_solver_flags(p)

    p = sub.add_parser("synth", help="write a synthetic dataset CSV")
    _add_synth_flags(p)
    p.add_argument("--out", required=True, help="output CSV path")

    p = sub.add_parser("probe", help="fit, then estimate smoothness on target points")
    _add_input_flags(p)
    _add_solver_flags(p)
    p.add_argument("--radii", default="0,0.1,0.5,1.0")
    p.add_argument("--samples", type=int, default=64, help="perturbations per point")
    return parser


# ---------------------------------------------------------------------------
# helpers


def _synth_spec(args, seed):
    return SynthTaskSpec(args.classes, args.private, args.per_class, args.dim,
                         args.separation, args.shift, args.noise, seed)


def _datasets(args):
    if args.data:
        if args.seeds != 1:
            raise InputError("--seeds applies to --synth only")
        return [(None, load_dataset(args.data, class_count=args.class_count))]
    if args.seeds < 1:
        raise InputError("--seeds must be >= 1")
    out = []
    for s in range(args.seed, args.seed + args.seeds):
        ds = generate_synth(_synth_spec(args, s))
        if args.class_count is not None:
            ds = replace(ds, class_count=args.class_count)
        out.append((s, ds))
    return out


def _is_pda(args, ds):
    if args.setting is not None:
        return args.setting == "pda"
    return ds.is_pda


def resolve_config(args, ds, mode=None):
    """Turn flags plus dataset into a fully resolved SolverConfig."""
    jda = args.jda or (args.eta is not None and args.eta > 0)
    pda = _is_pda(args, ds)
    gamma, eta = args.gamma, args.eta
    if gamma is None or (jda and eta is None):
        if pda is None:
            raise InputError("cannot choose the gamma/eta defaults: pass --pda or --uda, "
                             "or give --gamma (and --eta) explicitly")
        jd = JDA_PDA_DEFAULTS if pda else JDA_UDA_DEFAULTS
        if gamma is None:
            gamma = jd["gamma"] if jda else (5.0 if pda else 1.0)
        if jda and eta is None:
            eta = jd["eta"]
    return SolverConfig(lam=args.lam, gamma=gamma, eta=eta or 0.0, p=args.p,
                        mode=mode or args.mode, kernel=KernelSpec.parse(args.kernel),
                        max_iter=args.max_iter)


def _fmt(x):
    if isinstance(x, float):
        return f"{x:.6g}"
    return str(x)


def _table(header, rows):
    cells = [[_fmt(c) for c in header]] + [[_fmt(c) for c in r] for r in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


def _csv_text(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(c) for c in r])
    return buf.getvalue()


def _summary_section(ds, pda):
    s = split_counts(ds)
    rows = [("n", s.n), ("m", s.m), ("C", s.class_count), ("d", ds.d),
            ("pda", "unknown" if pda is None else str(bool(pda)).lower()),
            ("source_counts", " ".join(map(str, s.source_counts)))]
    if s.target_counts is not None:
        rows.append(("target_counts", " ".join(map(str, s.target_counts))))
    return rows


def _config_rows(cfg, extra=()):
    return list(cfg.echo().items()) + list(extra)


class _Output:
    """Collects files and writes them only after all computation succeeded."""

    def __init__(self, folder):
        self.folder = folder
        self.files = {}
        self.predictions = None

    def add(self, name, text):
        self.files[name] = text

    def commit(self):
        os.makedirs(self.folder, exist_ok=True)
        for name, text in self.files.items():
            _atomic_write(os.path.join(self.folder, name), text)
        if self.predictions is not None:
            ids, preds = self.predictions
            save_predictions(os.path.join(self.folder, "predictions.csv"), ids, preds)


def _seed_dir(args, seed, multi):
    return os.path.join(args.out, f"seed_{seed}") if multi else args.out


def _config_section(cfg, args, seed):
    extra = [("setting", args.setting or "auto"), ("backend", _backend.BACKEND)]
    if args.data:
        extra.append(("data", args.data))
    else:
        extra += [("synth", "yes"), ("seed", seed), ("classes", args.classes), ("private", args.private),
                  ("per_class", args.per_class), ("dim", args.dim), ("separation", args.separation),
                  ("shift", args.shift), ("noise", args.noise)]
    return _config_rows(cfg, extra)


# ---------------------------------------------------------------------------
# commands


def cmd_fit(args):
    runs = _datasets(args)
    multi = len(runs) > 1
    outputs, batch_rows = [], []
    for seed, ds in runs:
        cfg = resolve_config(args, ds)
        res = fit(ds.X, ds.is_target, ds.source_labels, ds.class_count, cfg)
        cfg = res.config
        out = _Output(_seed_dir(args, seed, multi))
        config_rows = _config_section(cfg, args, seed)
        report = ["# config", _table(["key", "value"], config_rows), "",
                  "# dataset", _table(["key", "value"], _summary_section(ds, _is_pda(args, ds)))]
        acc = None
        if ds.target_truth is not None:
            acc = accuracy(res.target_labels, ds.target_truth)
            report += ["", "# accuracy", _table(["mode", "accuracy"], [(cfg.mode.value, acc)])]
            out.add("accuracy.csv", _csv_text(["mode", "accuracy"], [(cfg.mode.value, acc)]))
        if res.jda is not None:
            hist = [(k, int(np.sum(res.jda.history[k] != res.jda.history[k - 1])) if k else "",
                     res.jda.objectives[k - 1] if k else "")
                    for k in range(len(res.jda.history))]
            report += ["", f"# jda history (converged={str(res.jda.converged).lower()})",
                       _table(["iteration", "labels_changed", "objective"], hist)]
            out.add("jda_history.csv", _csv_text(["iteration", "labels_changed", "objective"], hist))
        if args.oracle_check:
            report += ["", "# oracle check", _oracle_check(res)]
        out.add("config.csv", _csv_text(["key", "value"], config_rows))
        out.add("report.txt", "\n".join(report) + "\n")
        out.add("timings.txt", "".join(f"{k} {v:.6f}\n" for k, v in res.timings.items()))
        out.predictions = (ds.ids[ds.n:], res.target_labels)
        outputs.append(out)
        batch_rows.append((seed if seed is not None else "-", "" if acc is None else acc))
        sys.stdout.write(out.files["report.txt"] if not multi else "")
    if multi:
        accs = [a for _, a in batch_rows if a != ""]
        rows = batch_rows + ([("mean", float(np.mean(accs)))] if accs else [])
        text = _table(["seed", "accuracy"], rows)
        summary = _Output(args.out)
        summary.add("batch.csv", _csv_text(["seed", "accuracy"], rows))
        summary.add("batch.txt", text + "\n")
        outputs.append(summary)
        print(text)
    for out in outputs:
        out.commit()
    return 0


def _oracle_check(res):
    N = res.kernel.order
    if N > 50:
        return f"skipped: n+m = {N} exceeds 50"
    cfg = res.config
    enc = res.encoding
    M = None
    if res.jda is not None:
        M = mmd_matrix(enc.v == 0, enc.source_labels, res.jda.history[-2], enc.class_count)
    o = gd_oracle(res.kernel, res.laplacian, enc, cfg.lam, cfg.gamma, cfg.eta, M)
    diff = float(np.max(np.abs(o.alpha - res.coefficients.alpha)))
    status = "pass" if diff <= 1e-5 else "FAIL"
    return _table(["quantity", "value"], [
        ("max_abs_alpha_diff", diff), ("oracle_grad_inf", o.grad_inf),
        ("oracle_iterations", o.iterations), ("oracle_converged", str(o.converged).lower()),
        ("tolerance", 1e-5), ("status", status)])


def cmd_ablate(args):
    runs = _datasets(args)
    table_rows = []
    for seed, ds in runs:
        if ds.target_truth is None:
            raise InputError("ablation needs target ground truth to score modes")
        cfg0 = resolve_config(args, ds)
        K = build_kernel_matrix(ds.X, cfg0.kernel)
        row = []
        for mode in MODES:
            cfg = replace(cfg0, mode=GraphMode(mode))
            res = fit(ds.X, ds.is_target, ds.source_labels, ds.class_count, cfg, K=K)
            row.append(accuracy(res.target_labels, ds.target_truth))
        table_rows.append((seed if seed is not None else "-", *row))
    header = ["seed"] + MODES
    rows = list(table_rows)
    if len(rows) > 1:
        rows.append(("mean", *[float(np.mean([r[k + 1] for r in table_rows])) for k in range(len(MODES))]))
    cfg_echo = _config_section(replace(cfg0, kernel=K.spec), args, runs[0][0])
    cfg_echo = [(k, v) for k, v in cfg_echo if k not in ("mode", "seed")]
    if not args.data:
        cfg_echo.append(("seeds", " ".join(str(s) for s, _ in runs)))
    report = ["# config", _table(["key", "value"], cfg_echo), "",
              "# accuracy by graph mode", _table(header, rows)]
    out = _Output(args.out)
    out.add("config.csv", _csv_text(["key", "value"], cfg_echo))
    out.add("ablation.csv", _csv_text(header, rows))
    out.add("report.txt", "\n".join(report) + "\n")
    out.commit()
    print(out.files["report.txt"], end="")
    return 0


def cmd_synth(args):
    ds = generate_synth(_synth_spec(args, args.seed))
    save_dataset(ds, args.out)
    s = split_counts(ds)
    print(f"wrote {args.out}: n={s.n} m={s.m} C={s.class_count} d={ds.d} pda={str(s.pda).lower()}")
    return 0


def _parse_radii(text):
    try:
        radii = [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise InputError(f"bad --radii {text!r}") from None
    if not radii:
        raise InputError("--radii is empty")
    return radii


def cmd_probe(args):
    radii = _parse_radii(args.radii)
    runs = _datasets(args)
    multi = len(runs) > 1
    outputs = []
    for seed, ds in runs:
        cfg = resolve_config(args, ds)
        res = fit(ds.X, ds.is_target, ds.source_labels, ds.class_count, cfg)
        cfg = res.config
        alpha = res.coefficients.alpha
        X = ds.X

        def score_fn(Q):
            return cross_kernel(X, Q, cfg.kernel).T @ alpha

        reports = smoothness_curve(score_fn, X[ds.n:], radii, args.samples, seed=seed or 0)
        header = ["r", "epsilon_hat"]
        rows = [(rep.r, rep.epsilon_hat) for rep in reports]
        if cfg.kernel.kind == "linear":
            # linear scores are w_c^T x; the inf-ball sup of the change is r * max_c ||w_c||_1
            w1 = float(np.max(np.abs(X.T @ alpha).sum(axis=0)))
            header.append("linear_exact")
            rows = [(r, e, r * w1) for r, e in rows]
        config_rows = _config_section(cfg, args, seed) + [
            ("radii", args.radii), ("samples_per_point", args.samples),
            ("corners_enumerated", str(reports[0].corners_included).lower()),
            ("points", reports[0].points_used)]
        out = _Output(_seed_dir(args, seed, multi))
        out.add("config.csv", _csv_text(["key", "value"], config_rows))
        out.add("smoothness.csv", _csv_text(header, rows))
        out.add("report.txt", "\n".join(["# config", _table(["key", "value"], config_rows), "",
                                         "# smoothness", _table(header, rows)]) + "\n")
        outputs.append(out)
        print(out.files["report.txt"], end="")
    for out in outputs:
        out.commit()
    return 0


COMMANDS = {"fit": cmd_fit, "ablate": cmd_ablate, "synth": cmd_synth, "probe": cmd_probe}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except IDSPError as exc:
        print(f"idsp {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"idsp {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
