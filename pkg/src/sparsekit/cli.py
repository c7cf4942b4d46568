"""Command-line front end.

Every command reads its inputs and validates the configuration before any
output file is written.  Exit codes: 0 success, 2 bad usage or input,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import classify, convex, dictlearn, greedy, imaging, io, reweight
from .core import NumericalError, SparseKitError

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3


class UsageError(SparseKitError):
    pass


# ---------------------------------------------------------------------------
# Config handling
# ---------------------------------------------------------------------------


def read_config(path) -> dict:
    """Parse a ``key = value`` file; ``#`` starts a comment, blank lines are skipped."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    cfg = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected key = value")
        key, val = (s.strip() for s in line.split("=", 1))
        if len(val) >= 2 and val[0] == val[-1] and val[0] in "'\"":
            val = val[1:-1]
        cfg[key.replace("-", "_")] = val
    return cfg


def _apply_config(sub: argparse.ArgumentParser, cfg: dict) -> None:
    actions = {a.dest: a for a in sub._actions if a.dest != "help"}
    defaults = {}
    for key, raw in cfg.items():
        act = actions.get(key)
        if act is None:
            raise UsageError(f"unknown config key {key!r}")
        if isinstance(act, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise UsageError(f"config key {key!r} expects a boolean")
            defaults[key] = low in ("true", "1", "yes")
            continue
        try:
            val = act.type(raw) if act.type else raw
        except (TypeError, ValueError) as exc:
            raise UsageError(f"config key {key!r}: {exc}") from exc
        if act.choices is not None and val not in act.choices:
            raise UsageError(f"config key {key!r} must be one of {sorted(act.choices)}")
        defaults[key] = val
    sub.set_defaults(**defaults)


def _default_threads() -> int:
    env = os.environ.get("SPARSEKIT_THREADS")
    if env is None:
        return 1
    try:
        n = int(env)
    except ValueError:
        raise UsageError("SPARSEKIT_THREADS must be an integer") from None
    return n


def _csv(kind):
    def parse(s):
        return [kind(t) for t in s.split(",") if t.strip()]
    return parse


# ---------------------------------------------------------------------------
# Validation helpers
# ---------------------------------------------------------------------------


def _require(args, *names):
    for n in names:
        if getattr(args, n, None) is None:
            raise UsageError(f"--{n.replace('_', '-')} is required")


def _out_ok(*paths):
    for p in paths:
        if p is None:
            continue
        parent = Path(p).resolve().parent
        if not parent.is_dir():
            raise UsageError(f"output directory {parent} does not exist")


def _one_of(args, names, what="stopping rule"):
    given = [n for n in names if getattr(args, n, None) is not None]
    if not given:
        raise UsageError(f"{what}: give one of " + ", ".join("--" + n for n in names))
    return given


def _positive(args, *names, strict=True):
    for n in names:
        v = getattr(args, n, None)
        if v is None:
            continue
        if (strict and not v > 0) or (not strict and not v >= 0):
            raise UsageError(f"--{n.replace('_', '-')} must be {'> 0' if strict else '>= 0'}")


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


LEARN_ALGOS = ("online", "alt_l1", "bcd", "sgd", "mod", "ksvd", "kmeans")


def cmd_learn(args) -> int:
    _require(args, "input", "output", "p")
    _out_ok(args.output, args.trace)
    _positive(args, "p", "lam", "k", "epochs", "batch", "iters")
    _positive(args, "eps", "mu", strict=False)
    X = io.read_spmx(args.input)
    if args.p > X.shape[1]:
        raise UsageError(f"--p {args.p} exceeds the number of training signals {X.shape[1]}")
    algo = args.algo
    iters = args.iters
    kw = dict(seed=args.seed)
    extra = []
    if algo in ("online", "bcd", "sgd"):
        _require(args, "lam")
    if algo == "online":
        D, _, tr = dictlearn.dl_online(X, args.p, args.lam, n_epochs=args.epochs, batch=args.batch,
                                       rho=args.rho, n_threads=args.threads, **kw)
    elif algo == "alt_l1":
        _one_of(args, ["lam", "mu", "eps"])
        D, _, tr = dictlearn.dl_alt_l1(X, args.p, lam=args.lam, mu=args.mu, eps=args.eps,
                                       n_iter=iters or 20, n_threads=args.threads, **kw)
    elif algo == "bcd":
        D, _, tr = dictlearn.dl_bcd(X, args.p, args.lam, n_iter=iters or 20, **kw)
    elif algo == "sgd":
        D, tr = dictlearn.dl_sgd(X, args.p, args.lam, n_steps=iters or 1000, **kw)
    elif algo == "mod":
        _require(args, "k")
        D, _, tr = dictlearn.dl_mod(X, args.p, args.k, n_iter=iters or 20,
                                    n_threads=args.threads, **kw)
    elif algo == "ksvd":
        _one_of(args, ["k", "eps"])
        D, _, tr = dictlearn.dl_ksvd(X, args.p, k=args.k, eps=args.eps, n_iter=iters or 10,
                                     n_threads=args.threads, **kw)
    else:
        objs = []
        D, labels = dictlearn.kmeans(X, args.p, n_iter=iters or 100, trace=objs, **kw)
        tr = dictlearn.LearnTrace(objs)
        extra = [f"cluster sizes {np.bincount(labels, minlength=args.p).tolist()}"]
    io.write_spmx(args.output, D)
    if args.trace:
        io.write_trace(args.trace, tr.objectives, list(tr.events) + extra)
    return EXIT_OK


ENCODE_SOLVERS = ("omp", "mp", "iht", "homotopy", "cd", "ista", "fista", "irls", "reweighted")


def _encode_one(solver, x, D, args):
    if solver == "mp":
        return np.asarray(greedy.mp(x, D, _greedy_stop(args)))
    if solver == "iht":
        return np.asarray(greedy.iht(x, D, k=args.k, lam=args.lam, n_iter=args.iters or 100))
    if solver == "cd":
        return np.asarray(convex.cd_lasso(x, D, args.lam, opts=_opts(args)))
    if solver in ("ista", "fista"):
        opts = convex.SolverOptions(max_iter=args.iters or 10000, tol=args.tol,
                                    accelerate=solver == "fista")
        return np.asarray(convex.prox_grad(x, D, lam=args.lam, mu=args.mu, opts=opts))
    if solver == "irls":
        return np.asarray(reweight.irls_l1(x, D, args.lam))
    return np.asarray(reweight.reweighted_l1(x, D, args.lam))


def _opts(args):
    return convex.SolverOptions(max_iter=args.iters or 10000, tol=args.tol)


def _greedy_stop(args):
    if args.k is not None and args.eps is not None:
        return greedy.Both(args.k, args.eps)
    if args.k is not None:
        return greedy.MaxNonzeros(args.k)
    return greedy.ResidualSq(args.eps)


def cmd_encode(args) -> int:
    _require(args, "input", "dict", "output")
    _out_ok(args.output)
    _positive(args, "lam", "k", "iters")
    _positive(args, "eps", "mu", strict=False)
    s = args.solver
    if s in ("omp", "mp"):
        _one_of(args, ["k", "eps"])
    elif s == "iht":
        if (args.k is None) == (args.lam is None):
            raise UsageError("iht needs exactly one of --k or --lam")
    elif s == "homotopy":
        if len(_one_of(args, ["lam", "eps", "mu"])) != 1:
            raise UsageError("homotopy needs exactly one of --lam, --eps, --mu")
    elif s in ("ista", "fista"):
        if len(_one_of(args, ["lam", "mu"])) != 1:
            raise UsageError(f"{s} needs exactly one of --lam or --mu")
    else:
        _require(args, "lam")
    X = io.read_spmx(args.input)
    D = io.read_spmx(args.dict)
    if D.shape[0] != X.shape[0]:
        raise UsageError(f"dictionary has {D.shape[0]} rows, signals have {X.shape[0]}")
    if s == "omp":
        A = greedy.omp_batch(X, D, _greedy_stop(args), n_threads=args.threads)
    elif s == "homotopy":
        stop = (convex.AtLambda(args.lam) if args.lam is not None else
                convex.AtResidual(args.eps) if args.eps is not None else convex.AtNorm(args.mu))
        A = convex.lasso_batch(X, D, stop, n_threads=args.threads)
    else:
        A = np.column_stack([_encode_one(s, X[:, i], D, args) for i in range(X.shape[1])])
    io.write_spmx(args.output, A)
    return EXIT_OK


def cmd_path(args) -> int:
    _require(args, "input", "dict", "output")
    _out_ok(args.output)
    X = io.read_spmx(args.input)
    D = io.read_spmx(args.dict)
    if D.shape[0] != X.shape[0]:
        raise UsageError(f"dictionary has {D.shape[0]} rows, signals have {X.shape[0]}")
    if not 0 <= args.column < X.shape[1]:
        raise UsageError(f"--column must lie in [0, {X.shape[1]})")
    _positive(args, "ridge", strict=False)
    path = convex.homotopy(X[:, args.column], D, convex.FullPath(), ridge=args.ridge)
    header = ["lambda"] + [f"a{j}" for j in range(D.shape[1])]
    rows = [[f"{lam:.17g}"] + [f"{v:.17g}" for v in path.codes[:, i]]
            for i, lam in enumerate(path.lambdas)]
    io.write_tsv(args.output, header, rows)
    return EXIT_OK


SCENARIOS = ("dct", "global", "adaptive-l0", "adaptive-l1")


def _scenario(name, Dg):
    if name == "dct":
        return imaging.DCT()
    if name == "global":
        if Dg is None:
            raise UsageError("scenario 'global' needs --dict")
        return imaging.GlobalDict(Dg)
    if name == "adaptive-l0":
        return imaging.AdaptiveL0(Dg)
    return imaging.AdaptiveL1(Dg)


def _noise(args):
    _require(args, "sigma")
    if not args.sigma > 0:
        raise UsageError("--sigma must be > 0")
    if not 0 < args.tau < 1:
        raise UsageError("--tau must lie in (0, 1)")
    return imaging.NoiseModel(args.sigma, args.eps_rule, args.tau)


def _denoise_params(args, reference):
    _positive(args, "patch", "stride", "p", "iters", "max_train", "final_lambda")
    return imaging.DenoiseParams(patch_side=args.patch, p=args.p, n_iter=args.iters or 10,
                                 max_train=args.max_train, seed=args.seed, stride=args.stride,
                                 reference=reference, n_threads=args.threads,
                                 final_lambda=args.final_lambda)


def _check_patch_dims(img, args, Dg):
    e = args.patch or imaging.default_patch_side(args.sigma)
    if e > min(img.shape[:2]):
        raise UsageError(f"patch side {e} exceeds the image size")
    ch = 1 if img.ndim == 2 else 3
    if Dg is not None and Dg.shape[0] != e * e * ch:
        raise UsageError(f"dictionary has {Dg.shape[0]} rows, patches have {e * e * ch}")


def cmd_denoise(args) -> int:
    _require(args, "input", "output")
    _out_ok(args.output, args.report)
    noise = _noise(args)
    img = io.read_image(args.input)
    ref = io.read_image(args.reference) if args.reference else None
    if ref is not None and ref.shape != img.shape:
        raise UsageError("reference image shape differs from the input")
    Dg = io.read_spmx(args.dict) if args.dict else None
    _check_patch_dims(img, args, Dg)
    params = _denoise_params(args, ref)
    out, rep = imaging.denoise(img, noise, _scenario(args.scenario, Dg), params)
    io.write_image(args.output, out)
    if args.report:
        keys = [k for k in ("scenario", "patch_side", "eps", "mean_atoms", "psnr", "psnr_noisy")
                if k in rep]
        io.write_tsv(args.report, keys, [[rep[k] for k in keys]])
    return EXIT_OK


def cmd_inpaint(args) -> int:
    _require(args, "input", "mask", "output")
    _out_ok(args.output, args.report)
    _positive(args, "patch", "stride", "iters", "k", "p")
    _positive(args, "sigma_hat", strict=False)
    img = io.read_image(args.input)
    mask = io.read_image(args.mask)
    if img.ndim != 2:
        raise UsageError("inpainting supports grayscale images")
    if mask.shape != img.shape:
        raise UsageError("mask shape differs from the image")
    e = args.patch or 8
    if e > min(img.shape):
        raise UsageError(f"patch side {e} exceeds the image size")
    D0 = io.read_spmx(args.dict) if args.dict else imaging.build_dct_dictionary(e, args.p)
    if D0.shape[0] != e * e:
        raise UsageError(f"dictionary has {D0.shape[0]} rows, patches have {e * e}")
    params = imaging.InpaintParams(patch_side=e, stride=args.stride, sigma_hat=args.sigma_hat,
                                   k=args.k, n_iter=args.iters or 5,
                                   keep_observed=not args.no_keep_observed, seed=args.seed)
    out, rep = imaging.inpaint(img, mask > 0, D0, params)
    io.write_image(args.output, out)
    if args.report:
        io.write_tsv(args.report, list(rep), [list(rep.values())])
    return EXIT_OK


def cmd_classify(args) -> int:
    _require(args, "train", "train_labels", "test", "output")
    _out_ok(args.output, args.report)
    _positive(args, "lam", "p", "iters")
    Xtr = io.read_spmx(args.train)
    ytr = io.read_labels(args.train_labels)
    Xte = io.read_spmx(args.test)
    yte = io.read_labels(args.test_labels) if args.test_labels else None
    if ytr.size != Xtr.shape[1]:
        raise UsageError("training labels do not match the training columns")
    if Xte.shape[0] != Xtr.shape[0]:
        raise UsageError("test and training signals differ in dimension")
    if yte is not None and yte.size != Xte.shape[1]:
        raise UsageError("test labels do not match the test columns")
    if np.unique(ytr).size < 2:
        raise UsageError("training data must contain at least two classes")
    if args.rule == "residual":
        _require(args, "lam")
        if args.p is not None:
            counts = np.bincount(ytr - ytr.min())
            if args.p > counts[counts > 0].min():
                raise UsageError("--p exceeds the size of the smallest class")
            train = classify.learn_class_dictionaries(Xtr, ytr, args.p, args.lam,
                                                      n_iter=args.iters or 20, seed=args.seed,
                                                      n_threads=args.threads)
        else:
            train = classify.ClassDictSet.from_samples(Xtr, ytr)
    else:
        train = classify.ClassDictSet.from_samples(Xtr, ytr)
    pred = classify.classify_batch(Xte, train, args.lam, args.rule, n_threads=args.threads)
    io.write_labels(args.output, pred)
    if args.report and yte is not None:
        err = float(np.mean(np.asarray(pred) != yte))
        io.write_tsv(args.report, ["rule", "n_test", "error_rate"], [[args.rule, yte.size, err]])
    return EXIT_OK


def cmd_bench(args) -> int:
    _require(args, "images", "output")
    _out_ok(args.output)
    if not args.images or not args.sigmas or not args.scenarios:
        raise UsageError("--images, --sigmas and --scenarios must be non-empty")
    for s in args.scenarios:
        if s not in SCENARIOS:
            raise UsageError(f"unknown scenario {s!r}")
    for s in args.sigmas:
        if not s > 0:
            raise UsageError("every sigma must be > 0")
    imgs = [io.read_image(p) for p in args.images]
    Dg = io.read_spmx(args.dict) if args.dict else None
    if "global" in args.scenarios and Dg is None:
        raise UsageError("scenario 'global' needs --dict")
    for img in imgs:
        for s in args.sigmas:
            args.sigma = s
            _check_patch_dims(img, args, Dg)
    header = ["image", "sigma", "noisy"] + list(args.scenarios)
    rows = []
    for path, img in zip(args.images, imgs):
        for si, sigma in enumerate(args.sigmas):
            noisy = imaging.add_noise(img, sigma, seed=args.seed + si)
            row = [Path(path).stem, f"{sigma:g}"]
            noise = imaging.NoiseModel(sigma, args.eps_rule, args.tau)
            args.sigma = sigma
            params = _denoise_params(args, img)
            psnr_noisy = None
            for sc in args.scenarios:
                _, rep = imaging.denoise(noisy, noise, _scenario(sc, Dg), params)
                psnr_noisy = rep["psnr_noisy"]
                row.append(rep["psnr"])
            rows.append(row[:2] + [psnr_noisy] + row[2:])
    for si, sigma in enumerate(args.sigmas):
        sel = [r for r in rows if r[1] == f"{sigma:g}"]
        rows.append(["mean", f"{sigma:g}"] + [float(np.mean([r[c] for r in sel]))
                                              for c in range(2, len(header))])
    io.write_tsv(args.output, header, rows)
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> tuple[argparse.ArgumentParser, dict]:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int, default=None,
                        help="worker threads (default: $SPARSEKIT_THREADS or 1)")
    common.add_argument("--config", default=None, help="key = value file; flags override it")

    parser = argparse.ArgumentParser(prog="sparsekit", description="Sparse coding toolkit")
    subs = parser.add_subparsers(dest="command", required=True)
    cmds = {}

    def add(name, fn, help_):
        sp = subs.add_parser(name, parents=[common], help=help_)
        sp.set_defaults(func=fn)
        cmds[name] = sp
        return sp

    sp = add("learn", cmd_learn, "learn a dictionary from an SPMX signal matrix")
    sp.add_argument("--input")
    sp.add_argument("--output")
    sp.add_argument("--trace")
    sp.add_argument("--algo", choices=LEARN_ALGOS, default="online")
    sp.add_argument("--p", type=int)
    sp.add_argument("--lambda", dest="lam", type=float)
    sp.add_argument("--mu", type=float)
    sp.add_argument("--eps", type=float)
    sp.add_argument("--k", type=int)
    sp.add_argument("--iters", type=int)
    sp.add_argument("--epochs", type=int, default=1)
    sp.add_argument("--batch", type=int, default=1)
    sp.add_argument("--rho", type=float)

    sp = add("encode", cmd_encode, "sparse-code every column of an SPMX matrix")
    sp.add_argument("--input")
    sp.add_argument("--dict")
    sp.add_argument("--output")
    sp.add_argument("--solver", choices=ENCODE_SOLVERS, default="omp")
    sp.add_argument("--lambda", dest="lam", type=float)
    sp.add_argument("--eps", type=float)
    sp.add_argument("--mu", type=float)
    sp.add_argument("--k", type=int)
    sp.add_argument("--iters", type=int)
    sp.add_argument("--tol", type=float, default=1e-6)

    sp = add("path", cmd_path, "trace the Lasso regularization path of one signal")
    sp.add_argument("--input")
    sp.add_argument("--dict")
    sp.add_argument("--output")
    sp.add_argument("--column", type=int, default=0)
    sp.add_argument("--ridge", type=float, default=0.0)

    def image_opts(sp):
        sp.add_argument("--sigma", type=float)
        sp.add_argument("--eps-rule", choices=("fixed", "chi2"), default="fixed")
        sp.add_argument("--tau", type=float, default=0.9)
        sp.add_argument("--dict")
        sp.add_argument("--patch", type=int)
        sp.add_argument("--stride", type=int, default=1)
        sp.add_argument("--p", type=int, default=256)
        sp.add_argument("--iters", type=int)
        sp.add_argument("--max-train", type=int, default=200_000)
        sp.add_argument("--final-lambda", type=float)

    sp = add("denoise", cmd_denoise, "denoise a PGM/PPM image")
    sp.add_argument("--input")
    sp.add_argument("--output")
    sp.add_argument("--reference")
    sp.add_argument("--report")
    sp.add_argument("--scenario", choices=SCENARIOS, default="dct")
    image_opts(sp)

    sp = add("inpaint", cmd_inpaint, "fill missing pixels of a PGM image")
    sp.add_argument("--input")
    sp.add_argument("--mask", help="PGM mask, nonzero = observed")
    sp.add_argument("--output")
    sp.add_argument("--report")
    sp.add_argument("--dict")
    sp.add_argument("--patch", type=int)
    sp.add_argument("--stride", type=int, default=1)
    sp.add_argument("--p", type=int, default=256)
    sp.add_argument("--k", type=int)
    sp.add_argument("--sigma-hat", type=float, default=1.0)
    sp.add_argument("--iters", type=int)
    sp.add_argument("--no-keep-observed", action="store_true")

    sp = add("classify", cmd_classify, "classify signals with SRC or per-class dictionaries")
    sp.add_argument("--train")
    sp.add_argument("--train-labels")
    sp.add_argument("--test")
    sp.add_argument("--test-labels")
    sp.add_argument("--output")
    sp.add_argument("--report")
    sp.add_argument("--rule", choices=("src", "residual"), default="src")
    sp.add_argument("--lambda", dest="lam", type=float)
    sp.add_argument("--p", type=int, help="learn p atoms per class (residual rule)")
    sp.add_argument("--iters", type=int)

    sp = add("bench", cmd_bench, "PSNR table over images, noise levels and scenarios")
    sp.add_argument("--images", type=_csv(str))
    sp.add_argument("--sigmas", type=_csv(float), default=[25.0])
    sp.add_argument("--scenarios", type=_csv(str), default=list(SCENARIOS[:1]))
    sp.add_argument("--output")
    image_opts(sp)
    return parser, cmds


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser, cmds = build_parser()
    try:
        # the config file becomes the subcommand's defaults, so flags override it
        pre = argparse.ArgumentParser(add_help=False)
        pre.add_argument("--config")
        known, _ = pre.parse_known_args(argv)
        cmd = next((a for a in argv if a in cmds), None)
        if known.config and cmd is not None:
            _apply_config(cmds[cmd], read_config(known.config))
    except SparseKitError as exc:
        print(f"sparsekit: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        if args.threads is None:
            args.threads = _default_threads()
        if args.threads < 1:
            raise UsageError("--threads must be >= 1")
        return args.func(args)
    except (NumericalError, np.linalg.LinAlgError) as exc:
        print(f"sparsekit: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except SparseKitError as exc:
        print(f"sparsekit: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
