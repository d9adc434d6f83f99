"""Command line entry point: ``splinet <command> [flags]``.

Every command writes machine-readable CSV/JSON into ``--out`` and prints a
short summary. Exit codes: 0 success, 2 bad configuration or usage, 3 a
verification check failed.
"""

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import adversarial, analysis, dynamics, inversion, modelio, trainer
from .data import gen_square_edges, gen_two_gaussians, load_mnist_dir, split_labeled
from .errors import SplinetError
from .splinex import boundary_margin, compose_affine, enumerate_regions_bruteforce, extract_affine, gram, per_layer_forms, region_bound
from .layers import network_forward
from .zoo import build_network, mlp, random_network, small_cnn

EXIT_OK, EXIT_CONFIG, EXIT_VERIFY = 0, 2, 3


class UsageError(SplinetError, ValueError):
    pass


def worker_count():
    raw = os.environ.get("SPLINET_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"SPLINET_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise UsageError(f"SPLINET_THREADS must be a positive integer, got {raw!r}")
    return n


# ---------------------------------------------------------------- shared helpers


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=float)
        fh.write("\n")


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])


def _outdir(args):
    os.makedirs(args.out, exist_ok=True)
    return lambda name: os.path.join(args.out, name)


def _load_data(args):
    if args.data == "gaussians":
        return gen_two_gaussians(args.n_per_class, args.separation, seed=args.data_seed)
    if args.data == "squares":
        return gen_square_edges(args.n_per_class, seed=args.data_seed)
    if args.data == "mnist":
        return load_mnist_dir(args.data_dir, args.n_train, args.n_test)
    raise UsageError(f"unknown dataset {args.data!r}")


def _default_net(bundle, seed, arch="auto"):
    shape = bundle.input_shape
    if arch == "auto":
        arch = "mlp" if len(shape) == 1 else "cnn"
    if arch == "mlp":
        return mlp(int(np.prod(shape)), [16], bundle.n_classes, "leaky_relu", seed=seed)
    if arch == "linear":
        return build_network(shape, [{"kind": "dense", "out": bundle.n_classes}], seed=seed)
    if arch == "cnn":
        if len(shape) != 3:
            raise UsageError("cnn architecture needs image inputs")
        if shape[1] >= 20:
            return small_cnn(tuple(shape), bundle.n_classes, seed=seed)
        descs = [
            {"kind": "conv2d", "channels": 4, "kernel": [3, 3], "padding": "valid"},
            {"kind": "leaky_relu"},
            {"kind": "maxpool", "size": [2, 2]},
            {"kind": "dense", "out": bundle.n_classes},
        ]
        return build_network(shape, descs, seed=seed)
    raise UsageError(f"unknown architecture {arch!r}")


def _net_and_data(args):
    bundle = _load_data(args)
    if args.model:
        net, _ = modelio.load_model(args.model)
        if tuple(net.input_shape) != tuple(bundle.input_shape):
            raise UsageError(f"model expects inputs of shape {net.input_shape}, data has {bundle.input_shape}")
    else:
        net = _default_net(bundle, args.seed, getattr(args, "arch", "auto"))
    return net, bundle


def _parse_gamma(text):
    if not text:
        return {}
    out = {}
    for part in text.split(","):
        try:
            k, v = part.split(":")
            out[int(k)] = float(v)
        except ValueError:
            raise UsageError(f"--gamma entries look like LAYER:WEIGHT, got {part!r}") from None
    return out


def _parse_floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from None


# ---------------------------------------------------------------- commands


def cmd_train(args):
    path = _outdir(args)
    net, bundle = _net_and_data(args)
    w = trainer.LossWeights(args.alpha, args.beta, _parse_gamma(args.gamma))
    opt = trainer.OptimizerConfig(args.optimizer, args.lr, weight_decay=args.weight_decay)
    n = len(bundle.train_y)
    if args.labeled is None or args.labeled >= n:
        lab, rest = np.arange(n), np.zeros(0, dtype=int)
    else:
        lab, rest = split_labeled(bundle.train_y, args.labeled, args.seed)
    labeled = trainer.Batch(bundle.train_x[lab], bundle.train_y[lab])
    unlabeled = trainer.Batch(bundle.train_x[rest]) if rest.size else None
    test = trainer.Batch(bundle.test_x, bundle.test_y)
    net, history = trainer.train(
        net, labeled, unlabeled, w, opt, args.epochs, args.seed, batch_size=args.batch_size, test=test
    )
    trainer.write_history(path("history.csv"), history)
    modelio.save_model(net, path("model.json"), rng_seed=args.seed)
    last = history[-1]
    summary = {
        "train_acc": last["train_acc"],
        "test_acc": last["test_acc"],
        "generalization_gap": trainer.generalization_gap(last["train_acc"], last["test_acc"]),
        "n_labeled": int(lab.size),
        "n_unlabeled": int(rest.size),
        "alpha": args.alpha,
        "beta": args.beta,
    }
    _write_json(path("summary.json"), summary)
    print(f"trained {args.epochs} epochs on {lab.size} labeled + {rest.size} unlabeled samples")
    print(f"train accuracy {last['train_acc']:.4f}  test accuracy {last['test_acc']:.4f}")
    return EXIT_OK


def _samples(bundle, n):
    return bundle.test_x[:n].reshape(min(n, len(bundle.test_x)), -1)


def cmd_extract(args):
    path = _outdir(args)
    net, bundle = _net_and_data(args)
    X = _samples(bundle, args.n)
    t_rows, g_rows, s_rows = [], [], []
    for i, x in enumerate(X):
        form, sig = extract_affine(net, x)
        for c, row in enumerate(form.A):
            t_rows.append([i, c, float(form.b[c])] + [float(v) for v in row])
        G = gram(form.A)
        for a in range(G.shape[0]):
            for b in range(G.shape[1]):
                g_rows.append([i, a, b, float(G[a, b])])
        s_rows.append([i, sig.hex()])
    D = X.shape[1]
    _write_csv(path("templates.csv"), ["sample_id", "class", "bias"] + [f"w{j}" for j in range(D)], t_rows)
    _write_csv(path("gram.csv"), ["sample_id", "row", "col", "value"], g_rows)
    _write_csv(path("signatures.csv"), ["sample_id", "signature"], s_rows)
    print(f"extracted templates for {len(X)} inputs ({net.n_classes} classes, {D} input dims)")
    print(f"distinct regions among them: {len({s for _, s in s_rows})}")
    return EXIT_OK


def cmd_lipschitz(args):
    path = _outdir(args)
    net, _ = _net_and_data(args)
    rep = analysis.lipschitz_upper(net, n_pairs=args.pairs, seed=args.seed)
    _write_json(path("lipschitz.json"), rep.to_dict())
    _write_csv(
        path("lipschitz_layers.csv"),
        ["index", "kind", "spectral_bound", "frobenius_bound"],
        [[b.index, b.kind, b.spectral_bound, b.frobenius_bound] for b in rep.layers],
    )
    print(f"composed spectral bound {rep.composed_spectral:.6g}")
    print(f"composed Frobenius bound {rep.composed_frobenius:.6g}")
    if args.pairs:
        print(f"largest sampled ratio {rep.empirical_max_ratio:.6g} over {args.pairs} pairs")
    return EXIT_OK


def cmd_invert(args):
    path = _outdir(args)
    net, bundle = _net_and_data(args)
    layers = [int(v) for v in _parse_floats(args.layers)] if args.layers else []
    reports = inversion.reconstruction_report(net, _samples(bundle, args.n), layers, with_bias_leak=True)
    inversion.write_reconstruction_csv(path("reconstruction.csv"), reports)
    errs = np.array([r.sq_error for r in reports])
    leak = np.array([r.bias_leak for r in reports])
    _write_json(
        path("reconstruction_summary.json"),
        {"mean_sq_error": float(errs.mean()), "max_sq_error": float(errs.max()), "mean_bias_leak": float(leak.mean())},
    )
    print(f"reconstructed {len(reports)} inputs: mean squared error {errs.mean():.6g}, mean ||A^T b|| {leak.mean():.6g}")
    return EXIT_OK


def cmd_adversarial(args):
    path = _outdir(args)
    net, bundle = _net_and_data(args)
    rows = adversarial.attack_sweep(net, _samples(bundle, args.n), _parse_floats(args.alpha_grid), args.target, args.mode)
    adversarial.write_sweep(path("sweep.csv"), rows)
    for r in rows:
        print(f"alpha {r['alpha']:<10g} flip rate {r['flip_rate']:.3f}  mean perturbation {r['mean_pert_norm']:.4g}")
    return EXIT_OK


def cmd_simulate(args):
    path = _outdir(args)
    if args.classes < 2:
        raise UsageError("--classes must be at least 2")
    rng = np.random.default_rng(args.seed)
    x = rng.standard_normal(args.dim)
    x /= np.linalg.norm(x)
    state = dynamics.random_state(args.classes, args.dim, seed=args.seed + 1, lr=args.lr, scale=args.init_scale)
    if args.regularized:
        state.budget = args.budget
    state, rows = dynamics.run_dynamics(
        state, x, 0, args.steps, regularized=args.regularized, K=args.budget if args.regularized else None,
        record_every=args.record_every,
    )
    dynamics.write_trajectory(path("trajectory.csv"), rows)
    coef = (state.templates @ x).tolist()
    summary = {
        "final_coefficients": coef,
        "final_norms": np.linalg.norm(state.templates, axis=1).tolist(),
        "reconstruction_residual": dynamics.reconstruction_identity_check(state, x),
        "total_sq_norm": state.total_sq_norm(),
    }
    if args.regularized:
        pos, neg = dynamics.optimal_coefficients(args.classes, args.budget)
        summary["optimal_coefficients"] = [pos] + [neg] * (args.classes - 1)
    _write_json(path("simulation.json"), summary)
    print(f"{args.steps} steps, {'budget ' + str(args.budget) if args.regularized else 'unregularized'}")
    print("coefficients <A_c, x>: " + " ".join(f"{c:+.5f}" for c in coef))
    if args.regularized:
        print(f"optimum: {pos:+.5f} (true class), {neg:+.5f} (others)")
    return EXIT_OK


def cmd_regions(args):
    path = _outdir(args)
    if not 1 <= args.dim <= 3:
        raise UsageError("--dim must be 1, 2 or 3")
    descs = [{"kind": "dense", "out": args.hidden}, {"kind": args.nonlinearity}, {"kind": "dense", "out": args.classes}]
    net = build_network((args.dim,), descs, seed=args.seed)
    groups = enumerate_regions_bruteforce(net, -args.extent, args.extent, density=args.density)
    rows = []
    for sig, g in sorted(groups.items(), key=lambda kv: kv[0].data):
        rows.append([sig.hex(), len(g.points)] + [float(v) for v in g.form.A.ravel()] + [float(v) for v in g.form.b])
    C, D = net.n_classes, net.in_dim
    header = ["signature", "n_points"] + [f"A{c}_{d}" for c in range(C) for d in range(D)] + [f"b{c}" for c in range(C)]
    _write_csv(path("regions.csv"), header, rows)
    bound = region_bound(net)
    _write_json(path("regions.json"), {"n_regions": len(groups), "bound": bound, "grid_points": args.density**args.dim})
    print(f"{len(groups)} regions found on a {args.density}^{args.dim} grid (bound {bound})")
    return EXIT_OK


def _verify_one(seed, n_inputs):
    net = random_network(seed, (1, 5, 5), 3)
    rng = np.random.default_rng(seed + 1000)
    worst_id = worst_comp = 0.0
    for _ in range(n_inputs):
        x = rng.standard_normal(net.in_dim)
        logits, trace = network_forward(net, x)
        form, _ = extract_affine(net, x)
        worst_id = max(worst_id, float(np.max(np.abs(logits - form(x)))))
        comp = compose_affine(per_layer_forms(net, trace))
        worst_comp = max(worst_comp, float(np.max(np.abs(comp.A - form.A))), float(np.max(np.abs(comp.b - form.b))))
    # gradient check on a small batch kept clear of region boundaries
    X = []
    while len(X) < 4:
        x = rng.standard_normal(net.in_dim)
        x /= np.linalg.norm(x)
        if boundary_margin(net, x) > 1e-3:
            X.append(x)
    batch = trainer.Batch(np.stack(X), np.array([0, 1, -1, -1]))
    worst_grad = trainer.finite_difference_check(net, batch, trainer.LossWeights(0.5, 0.5), rng)
    return {"seed": seed, "identity_residual": worst_id, "composition_residual": worst_comp, "gradient_rel_error": worst_grad}


def cmd_verify(args):
    path = _outdir(args)
    seeds = range(args.seed, args.seed + args.nets)
    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        results = list(pool.map(lambda s: _verify_one(s, args.inputs), seeds))
    worst = {k: max(r[k] for r in results) for k in ("identity_residual", "composition_residual", "gradient_rel_error")}
    ok = worst["identity_residual"] <= args.tol and worst["composition_residual"] <= args.tol and worst["gradient_rel_error"] <= args.grad_tol
    _write_csv(
        path("verify.csv"),
        ["seed", "identity_residual", "composition_residual", "gradient_rel_error"],
        [[r["seed"], r["identity_residual"], r["composition_residual"], r["gradient_rel_error"]] for r in results],
    )
    _write_json(path("verify.json"), {"passed": ok, **worst})
    print(f"identity residual {worst['identity_residual']:.3g} (limit {args.tol:g})")
    print(f"composition residual {worst['composition_residual']:.3g} (limit {args.tol:g})")
    print(f"gradient relative error {worst['gradient_rel_error']:.3g} (limit {args.grad_tol:g})")
    print("PASS" if ok else "FAIL")
    return EXIT_OK if ok else EXIT_VERIFY


# ---------------------------------------------------------------- parser


def _data_flags(p):
    p.add_argument("--data", default="gaussians", choices=["gaussians", "squares", "mnist"])
    p.add_argument("--data-dir", default="data/mnist")
    p.add_argument("--n-per-class", type=int, default=100)
    p.add_argument("--separation", type=float, default=8.0)
    p.add_argument("--data-seed", type=int, default=0)
    p.add_argument("--n-train", type=int, default=None)
    p.add_argument("--n-test", type=int, default=None)
    p.add_argument("--model", default=None, help="model JSON; a fresh network is built when omitted")
    p.add_argument("--arch", default="auto", choices=["auto", "mlp", "linear", "cnn"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="out")


def build_parser():
    ap = argparse.ArgumentParser(prog="splinet", description="Spline-view analysis and training of small networks.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train with the combined supervised/unsupervised loss")
    _data_flags(p)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--beta", type=float, default=0.5)
    p.add_argument("--gamma", default="", help="per-layer reconstruction weights, e.g. 2:0.1,4:0.05")
    p.add_argument("--labeled", type=int, default=None, help="number of labeled training samples (default: all)")
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--lr", type=float, default=0.005)
    p.add_argument("--optimizer", default="adam", choices=["adam", "sgd"])
    p.add_argument("--weight-decay", type=float, default=0.0)
    p.add_argument("--batch-size", type=int, default=32)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("extract", help="templates, Gram matrices and region signatures")
    _data_flags(p)
    p.add_argument("--n", type=int, default=10)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("lipschitz", help="per-layer and composed Lipschitz bounds")
    _data_flags(p)
    p.add_argument("--pairs", type=int, default=10_000)
    p.set_defaults(func=cmd_lipschitz)

    p = sub.add_parser("invert", help="reconstruction through the transposed templates")
    _data_flags(p)
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--layers", default="", help="comma-separated layer indices for per-layer errors")
    p.set_defaults(func=cmd_invert)

    p = sub.add_parser("adversarial", help="flip rates along the class-probability gradient")
    _data_flags(p)
    p.add_argument("--n", type=int, default=50)
    p.add_argument("--alpha-grid", default="0,0.01,0.1,1")
    p.add_argument("--target", type=int, default=None)
    p.add_argument("--mode", default="softmax", choices=["softmax", "logit"])
    p.set_defaults(func=cmd_adversarial)

    p = sub.add_parser("simulate-templates", help="single-input template dynamics")
    p.add_argument("--classes", type=int, default=2)
    p.add_argument("--budget", type=float, default=1.0)
    p.add_argument("--lambda", dest="lr", type=float, default=0.1)
    p.add_argument("--steps", type=int, default=5000)
    p.add_argument("--dim", type=int, default=5)
    p.add_argument("--init-scale", type=float, default=0.5)
    p.add_argument("--record-every", type=int, default=100)
    p.add_argument("--regularized", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="out")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("regions", help="brute-force region enumeration on a tiny network")
    p.add_argument("--dim", type=int, default=2)
    p.add_argument("--hidden", type=int, default=4)
    p.add_argument("--classes", type=int, default=2)
    p.add_argument("--nonlinearity", default="relu", choices=["relu", "leaky_relu", "abs"])
    p.add_argument("--density", type=int, default=41)
    p.add_argument("--extent", type=float, default=2.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="out")
    p.set_defaults(func=cmd_regions)

    p = sub.add_parser("verify", help="affine-identity and gradient checks on random networks")
    p.add_argument("--nets", type=int, default=10)
    p.add_argument("--inputs", type=int, default=10)
    p.add_argument("--tol", type=float, default=1e-9)
    p.add_argument("--grad-tol", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="out")
    p.set_defaults(func=cmd_verify)
    return ap


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_CONFIG
    try:
        return args.func(args)
    except (SplinetError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
