"""``rollnet`` command line: train, certify, attack, gradcheck.

Exit codes: 0 success, 1 tolerance / assertion failure, 2 usage error.
Configuration precedence is flags > ``--config`` JSON file > defaults.
"""

import argparse
import contextlib
import csv
import hashlib
import json
import logging
import os
import platform
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from rollnet import __version__
from rollnet import attack as attack_mod
from rollnet import certify as cert
from rollnet import data as data_mod
from rollnet import linearization as linmod
from rollnet.network import ShapeError, load_model, predict, random_network, save_model
from rollnet.roll import MAX_ONLY, RollConfig
from rollnet.train import mnist_recipe, toy_recipe, train_model, write_history

log = logging.getLogger("rollnet")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
DESK_TRAIN_SUBSET = 5000


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# helpers


def _threads(n):
    # numba kernels run serially; only the BLAS pool needs a cap
    n = n or os.environ.get("ROLL_THREADS")
    if not n:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=int(n))


def _gamma(s):
    if str(s).lower() == MAX_ONLY:
        return MAX_ONLY
    try:
        return float(s)
    except ValueError:
        raise argparse.ArgumentTypeError("gamma must be a number in (0, 100] or 'max'")


def _positive_float(s):
    v = float(s)
    if not v > 0:
        raise argparse.ArgumentTypeError("must be positive")
    return v


def _ints(s):
    return tuple(int(t) for t in str(s).replace("x", ",").split(",") if t)


def load_dataset(spec, n_val=None, train_subset=None):
    """Resolve ``--dataset`` into ``(train, val, test)`` splits."""
    kind, _, rest = spec.partition(":")
    if kind == "toy2d":
        ds = data_mod.gen_toy_2d(int(rest) if rest else 0)
        return ds, ds, ds
    if kind == "idx":
        paths = [p for p in rest.split(",") if p]
        if len(paths) not in (2, 4):
            raise UsageError("idx dataset needs images,labels[,test_images,test_labels]")
        for p in paths:
            if not Path(p).is_file():
                raise UsageError(f"dataset file not found: {p}")
        train = data_mod.load_idx(paths[0], paths[1])
        test = data_mod.load_idx(paths[2], paths[3]) if len(paths) == 4 else None
        if train_subset:
            train = train.subset(np.arange(min(train_subset, len(train))))
        if n_val is None:
            n_val = 5000 if len(train) > 50000 else max(1, len(train) // 10)
        if n_val >= len(train):
            raise UsageError("validation split larger than the training set")
        tr, va = train.split(len(train) - n_val)
        return tr, va, (test if test is not None else va)
    if kind == "csv":
        if not Path(rest).is_file():
            raise UsageError(f"dataset file not found: {rest}")
        arr = np.genfromtxt(rest, delimiter=",", names=True)
        names = arr.dtype.names
        feats = [n for n in names if n != "label"]
        X = np.stack([arr[n] for n in feats], axis=1).reshape(arr.shape[0] if arr.ndim else 1, -1)
        y = (np.asarray(arr["label"]).reshape(-1).astype(np.int64)
             if "label" in names else np.zeros(X.shape[0], dtype=np.int64))
        ds = data_mod.normalize(X, y, 0.0, 1.0)
        return ds, ds, ds
    raise UsageError(f"unknown dataset spec {spec!r} (toy2d | idx:<paths> | csv:<path>)")


def _versions():
    out = {"rollnet": __version__, "numpy": np.__version__, "python": platform.python_version()}
    try:
        import numba
        out["numba"] = numba.__version__
    except ImportError:  # pragma: no cover
        pass
    return out


def _config_hash(config):
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()


def write_manifest(out_dir, command, config, seed, outputs, started):
    manifest = {
        "command": command,
        "config": config,
        "config_hash": _config_hash(config),
        "seed": seed,
        "versions": _versions(),
        "started": started,
        "finished": _now(),
        "outputs": [str(p) for p in outputs],
    }
    path = Path(out_dir) / "manifest.json"
    manifest["outputs"].append(str(path))
    path.write_text(json.dumps(manifest, indent=2, default=str))
    return path


def load_schema(name):
    """Shipped JSON schema for ``model``, ``certify_summary``, ``attack_report`` or ``manifest``."""
    from importlib.resources import files
    return json.loads(files("rollnet").joinpath("schemas", f"{name}.schema.json").read_text())


def _now():
    return datetime.now(timezone.utc).isoformat()


def _load_config(path):
    if not path:
        return {}
    with open(path) as fh:
        return json.load(fh)


def _resolve(args, cfg_file, key, default):
    """flags > config file > default."""
    v = getattr(args, key, None)
    if v is not None:
        return v
    return cfg_file.get(key, default)


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(type(o))


def _finite(v):
    return None if v is None or not np.isfinite(v) else float(v)


# ---------------------------------------------------------------------------
# commands


def cmd_train(args):
    started = _now()
    cfg_file = _load_config(args.config)
    spec = _resolve(args, cfg_file, "dataset", None)
    if not spec:
        raise UsageError("--dataset is required")
    full = bool(_resolve(args, cfg_file, "full_recipe", False))
    is_toy = spec.startswith("toy2d")
    subset = None if (full or is_toy) else DESK_TRAIN_SUBSET
    train, val, _ = load_dataset(spec, train_subset=subset)
    base = toy_recipe() if is_toy else mnist_recipe(epochs=20 if full else 5)
    gamma = _resolve(args, cfg_file, "gamma", base.roll.gamma)
    roll = RollConfig(
        lam=float(_resolve(args, cfg_file, "lambda", 0.0)),
        c=float(_resolve(args, cfg_file, "c", 0.0)),
        gamma=_gamma(gamma),
        subsample_axes=_resolve(args, cfg_file, "subsample_axes", None),
        seed=int(_resolve(args, cfg_file, "seed", 0)),
    )
    recipe = type(base)(
        epochs=int(_resolve(args, cfg_file, "epochs", base.epochs)),
        batch_size=int(_resolve(args, cfg_file, "batch_size", base.batch_size)),
        optimizer=_resolve(args, cfg_file, "optimizer", base.optimizer),
        lr=float(_resolve(args, cfg_file, "lr", base.lr)),
        momentum=float(_resolve(args, cfg_file, "momentum", base.momentum)),
        roll=roll,
        seed=int(_resolve(args, cfg_file, "seed", 0)),
        dtype=_resolve(args, cfg_file, "dtype", base.dtype),
        probe_size=int(_resolve(args, cfg_file, "probe_size", base.probe_size)),
        probe_every=int(_resolve(args, cfg_file, "probe_every", base.probe_every)),
    )
    hidden = _ints(_resolve(args, cfg_file, "hidden", "100,100,100,100" if is_toy else "300,300,300,300"))
    activation = _resolve(args, cfg_file, "activation", "relu")
    alpha = float(_resolve(args, cfg_file, "alpha", 0.01))
    n_out = 1 if is_toy else None

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    net, history, best_epoch = train_model(train, val, hidden, recipe, activation, alpha, n_out)
    model_path, hist_path = out / "model.json", out / "history.csv"
    save_model(net.astype(np.float64), model_path)
    write_history(history, hist_path)
    config = {"dataset": spec, "hidden": list(hidden), "activation": activation, "alpha": alpha,
              "recipe": {k: v for k, v in recipe.__dict__.items() if k != "roll"},
              "roll": roll.to_json(), "best_epoch": best_epoch, "full_recipe": full}
    write_manifest(out, "train", config, recipe.seed, [model_path, hist_path], started)
    print(f"best epoch {best_epoch}: val_loss={history[best_epoch - 1]['val_loss']:.6g} "
          f"val_acc={history[best_epoch - 1]['val_acc']:.4f}")
    return EXIT_OK


def _split(args, spec):
    train, val, test = load_dataset(spec)
    ds = {"train": train, "val": val, "test": test}[args.split]
    if args.limit:
        ds = ds.subset(np.arange(min(args.limit, len(ds))))
    return ds


def cmd_certify(args):
    started = _now()
    net = load_model(args.model)
    ds = _split(args, args.dataset)
    if ds.dim != net.input_dim:
        raise UsageError(f"model expects {net.input_dim} features, dataset has {ds.dim}")
    sigma = args.sigma if args.sigma is not None else ds.scale
    want_l1 = args.norm in ("l1", "both")
    rows = cert.certify_points(net, ds.features, l1=want_l1)
    preds = predict(net, ds.features)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cols = ["index", "label", "pred", "eps_l2", "eps_l2_scaled", "witness_layer",
            "witness_neuron", "capped_l2"]
    if want_l1:
        cols += ["eps_l1", "eps_l1_scaled", "gap_l1", "capped_l1"]
    csv_path = out / "certify.csv"
    e2, e1 = [], []
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for r in rows:
            c2 = r["l2"]
            layer, neuron = c2.witness if c2.witness else ("", "")
            line = [r["index"], int(ds.labels[r["index"]]), int(preds[r["index"]]),
                    repr(c2.margin), repr(sigma * c2.margin), layer, neuron, int(c2.capped)]
            e2.append(c2.margin)
            if want_l1:
                c1 = r["l1"]
                line += [repr(c1.margin), repr(sigma * c1.margin), repr(c1.gap), int(c1.capped)]
                e1.append(c1.margin)
            w.writerow(line)

    clr = cert.count_clr(net, ds.features)
    margins = {"l2": cert.percentiles(e2), "l2_scaled": cert.percentiles(np.multiply(e2, sigma))}
    summary = {
        "n_points": len(ds),
        "accuracy": float(np.mean(preds == ds.labels)),
        "scale": sigma,
        "clr": {"upper": clr.upper, "lower": clr.lower, "boundary_points": clr.boundary_points},
        "margins": margins,
    }
    if want_l1:
        margins["l1"] = cert.percentiles(e1)
        margins["l1_scaled"] = cert.percentiles(np.multiply(e1, sigma))
        summary["spearman_l1_l2"] = _finite(_spearman(e1, e2))
    sum_path = out / "summary.json"
    sum_path.write_text(json.dumps(summary, indent=2, default=_json_default))
    config = {"model": args.model, "dataset": args.dataset, "split": args.split,
              "limit": args.limit, "norm": args.norm, "sigma": sigma}
    write_manifest(out, "certify", config, None, [csv_path, sum_path], started)
    print(json.dumps(summary["margins"]["l2"]))
    return EXIT_OK


def _spearman(a, b):
    if len(a) < 2 or np.ptp(a) == 0 or np.ptp(b) == 0:
        return None
    from scipy.stats import spearmanr
    return float(spearmanr(a, b).statistic)


def cmd_attack(args):
    started = _now()
    net = load_model(args.model)
    spec = args.dataset
    ds = _split(args, spec)
    if ds.dim != net.input_dim:
        raise UsageError(f"model expects {net.input_dim} features, dataset has {ds.dim}")
    sigma = ds.scale
    if args.domain:
        lo_raw, hi_raw = (float(t) for t in args.domain.split(","))
    elif spec.startswith("idx"):
        lo_raw, hi_raw = 0.0, 1.0
    else:
        lo_raw, hi_raw = -np.inf, np.inf
    mu = float(ds.mean[0])
    base = attack_mod.AttackConfig(radius=args.eps_inf / sigma, lo=(lo_raw - mu) / sigma,
                                   hi=(hi_raw - mu) / sigma, seed=args.seed)
    if args.desk:
        base = base.desk()
    cfg = attack_mod.AttackConfig(
        radius=base.radius, lo=base.lo, hi=base.hi, seed=args.seed,
        population=args.population or base.population,
        epochs=args.ga_epochs if args.ga_epochs is not None else base.epochs)
    n = min(args.n_points, len(ds))
    reports = []
    for i in range(n):
        rep = attack_mod.attack_point(net, ds.features[i], ds.labels[i], cfg, args.samples)
        reports.append(rep.to_json(cfg, index=i))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    payload = {"eps_inf": args.eps_inf, "samples": args.samples, "epochs": cfg.epochs,
               "population": cfg.population, "seed": cfg.seed, "reports": reports}
    rep_path = out / "attack.json"
    rep_path.write_text(json.dumps(payload, indent=2, default=_json_default))
    config = {"model": args.model, "dataset": spec, "eps_inf": args.eps_inf,
              "population": cfg.population, "ga_epochs": cfg.epochs, "samples": args.samples,
              "n_points": n, "domain": [lo_raw, hi_raw], "desk": bool(args.desk)}
    write_manifest(out, "attack", config, args.seed, [rep_path], started)
    for r in reports:
        print(f"point {r['index']}: expected={r['expected_l1']:.6g} max={r['max_l1']:.6g}")
    return EXIT_OK


def _rel_err(a, b):
    scale = max(float(np.max(np.abs(b))) if b.size else 0.0, 1e-300)
    return float(np.max(np.abs(a - b))) / scale if a.size else 0.0


def cmd_gradcheck(args):
    rng = np.random.default_rng(args.seed)
    if args.model:
        net = load_model(args.model)
    else:
        sizes = _ints(args.random_net)
        if len(sizes) < 2:
            raise UsageError("--random-net needs at least input and output sizes")
        net = random_network(sizes, rng, activation=args.activation, alpha=args.alpha)
    X = rng.standard_normal((args.points, net.input_dim))
    worst = 0.0
    for x in X:
        trace_lin = linmod.linearize(net, x, "perturbation")
        g_dp = linmod.dp_gradients(net, trace_lin.pattern)
        g_bp = linmod.backprop_neuron_gradients(net, x)[0]
        worst = max(worst, _rel_err(trace_lin.grads, g_bp), _rel_err(g_dp, g_bp),
                    _rel_err(trace_lin.grads, g_dp))
    ok = worst <= args.tol
    print(f"max relative error {worst:.3e} (tol {args.tol:.1e}) {'PASS' if ok else 'FAIL'}")
    if args.timing:
        t = time_engines(net, rng.standard_normal((args.batch, net.input_dim)))
        print(f"timing batch={args.batch}: perturbation={t['perturbation']:.4f}s "
              f"dp={t['dp']:.4f}s backprop={t['backprop']:.4f}s "
              f"backprop/perturbation={t['backprop'] / t['perturbation']:.2f}x")
    return EXIT_OK if ok else EXIT_FAIL


def time_engines(net, X):
    """Wall-clock of computing every hidden neuron's input gradient for a batch."""
    from rollnet.network import activation_slopes, forward_batch
    out = {}
    t = time.perf_counter()
    slopes = [activation_slopes(z, net.alpha) for z in forward_batch(net, X)[:-1]]
    linmod.perturbation_layer_grads(net, slopes)
    out["perturbation"] = time.perf_counter() - t
    t = time.perf_counter()
    slopes = [activation_slopes(z, net.alpha) for z in forward_batch(net, X)[:-1]]
    linmod.dp_layer_grads(net, slopes)
    out["dp"] = time.perf_counter() - t
    t = time.perf_counter()
    linmod.backprop_neuron_gradients(net, X)
    out["backprop"] = time.perf_counter() - t
    return out


# ---------------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="rollnet", description=__doc__.splitlines()[0])
    p.add_argument("--threads", type=int, default=None, help="cap worker threads (env ROLL_THREADS)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a vanilla or regularized model")
    t.add_argument("--dataset", help="toy2d | idx:<images>,<labels>[,<test images>,<test labels>]")
    t.add_argument("--config", help="JSON file with defaults for any flag")
    t.add_argument("--lambda", dest="lambda", type=float)
    t.add_argument("--c", type=float)
    t.add_argument("--gamma", type=_gamma)
    t.add_argument("--subsample-axes", dest="subsample_axes", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--momentum", type=float)
    t.add_argument("--batch-size", dest="batch_size", type=int)
    t.add_argument("--optimizer", choices=("sgd", "adam"))
    t.add_argument("--hidden", help="comma separated hidden widths")
    t.add_argument("--activation", choices=("relu", "leaky_relu"))
    t.add_argument("--alpha", type=float)
    t.add_argument("--dtype", choices=("float32", "float64"))
    t.add_argument("--probe-size", dest="probe_size", type=int)
    t.add_argument("--probe-every", dest="probe_every", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--full-recipe", dest="full_recipe", action="store_true", default=None,
                   help="20 epochs on the full training file instead of the desk-scale subset")
    t.add_argument("--out", default="runs/train")
    t.set_defaults(func=cmd_train)

    for name, fn, helptext in (("certify", cmd_certify, "certify margins of a dataset"),
                               ("attack", cmd_attack, "gradient distortion attack")):
        c = sub.add_parser(name, help=helptext)
        c.add_argument("--model", required=True)
        c.add_argument("--dataset", required=True)
        c.add_argument("--split", choices=("train", "val", "test"), default="test")
        c.add_argument("--limit", type=int)
        c.add_argument("--out", default=f"runs/{name}")
        c.set_defaults(func=fn)
        if name == "certify":
            c.add_argument("--norm", choices=("l2", "l1", "both"), default="both")
            c.add_argument("--sigma", type=float, help="scale for the data-space margin columns")
        else:
            c.add_argument("--eps-inf", dest="eps_inf", type=_positive_float, default=8 / 256)
            c.add_argument("--population", type=int)
            c.add_argument("--ga-epochs", dest="ga_epochs", type=int)
            c.add_argument("--samples", type=int, default=8000)
            c.add_argument("--n-points", dest="n_points", type=int, default=10)
            c.add_argument("--domain", help="raw data domain lo,hi (idx default 0,1)")
            c.add_argument("--desk", action="store_true", help="480 members / 15 epochs")
            c.add_argument("--seed", type=int, default=0)

    g = sub.add_parser("gradcheck", help="compare gradient engines and time them")
    src = g.add_mutually_exclusive_group(required=True)
    src.add_argument("--model")
    src.add_argument("--random-net", dest="random_net", help="layer sizes, e.g. 784,300,300,300,300,10")
    g.add_argument("--activation", choices=("relu", "leaky_relu"), default="relu")
    g.add_argument("--alpha", type=float, default=0.01)
    g.add_argument("--points", type=int, default=2)
    g.add_argument("--batch", type=int, default=64)
    g.add_argument("--tol", type=float, default=1e-10)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--no-timing", dest="timing", action="store_false")
    g.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with _threads(args.threads):
            return args.func(args)
    except (UsageError, ShapeError, FileNotFoundError, ValueError) as exc:
        print(f"rollnet {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
