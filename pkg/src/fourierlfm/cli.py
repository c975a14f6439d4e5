"""Batch command line: fit, predict, verify, and feature-curve dumps.

Config files are flat UTF-8 ``section.key = value`` lines with ``#``
comments; unspecified keys take the documented defaults and the resolved
config is echoed into the saved model file.
"""

from __future__ import annotations

import argparse
import csv
import sys

import numpy as np

from .data import (Dataset, Transforms, fit_transforms, load_csv, load_matrix,
                   metrics, save_predictions)
from .deep import PredictiveDist, build_model, load_model, save_model
from .errors import DomainError, NumericalError, ParseError
from .features import FeatureSet, VfrfContext, vff_eval, vfrf_eval
from .kernels import KernelSpec, OdeSpec
from .train import InitConfig, TrainConfig, fit
from .verify import run_suite

VFF_PINNED_BETA = 1e-6

CONFIG_DEFAULTS = {
    "model.order": "3/2",
    "model.layers": "1",
    "model.hidden_dims": "",
    "model.M": "20",
    "model.interval_a": "-1.0",
    "model.interval_b": "4.0",
    "model.feature_kind": "vfrf",
    "train.learning_rate": "0.01",
    "train.epochs": "500",
    "train.batch_size": "10000",
    "train.seed": "0",
    "train.beta_freeze_epochs": "0",
    "init.lengthscale": "1.0",
    "init.alpha": "1.0",
    "init.beta": "0.01",
    "init.kernel_variance": "0.1",
    "init.noise_variance": "0.01",
    "data.test_fraction": "0.1",
    "data.seed": "0",
}


def parse_config_lines(path: str) -> dict:
    entries = {}
    with open(path, encoding="utf-8") as fh:
        for ln, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ParseError(f"{path}:{ln}: expected 'section.key = value'")
            key, _, value = line.partition("=")
            entries[key.strip()] = value.strip()
    return entries


def resolve_config(path: str) -> dict:
    entries = parse_config_lines(path)
    unknown = set(entries) - set(CONFIG_DEFAULTS)
    if unknown:
        raise ParseError(f"{path}: unknown config keys {sorted(unknown)}")
    cfg = dict(CONFIG_DEFAULTS)
    cfg.update(entries)
    _validate_config(path, cfg)
    return cfg


def _validate_config(path: str, cfg: dict):
    try:
        layers = int(cfg["model.layers"])
        hidden = _hidden_dims(cfg)
        float(cfg["train.learning_rate"])
        int(cfg["train.epochs"])
        int(cfg["model.M"])
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}")
    if layers < 1:
        raise ParseError(f"{path}: model.layers must be >= 1")
    if len(hidden) != layers - 1:
        raise ParseError(
            f"{path}: model.hidden_dims needs {layers - 1} entries, got {len(hidden)}")
    if cfg["model.feature_kind"] not in ("vfrf", "vff", "rff"):
        raise ParseError(f"{path}: unknown feature_kind {cfg['model.feature_kind']!r}")
    if cfg["model.order"] not in ("1/2", "3/2", "5/2"):
        raise ParseError(f"{path}: unknown order {cfg['model.order']!r}")


def _hidden_dims(cfg: dict):
    text = cfg["model.hidden_dims"].replace(",", " ")
    return [int(tok) for tok in text.split()]


def _build_from_config(cfg: dict, train_inputs, input_dim: int, seed: int):
    dims = [input_dim] + _hidden_dims(cfg) + [1]
    kind = cfg["model.feature_kind"]
    family = kind
    alpha = float(cfg["init.alpha"])
    beta = float(cfg["init.beta"])
    freeze = False
    if kind == "vff":
        family, alpha, beta, freeze = "vfrf", 1.0, VFF_PINNED_BETA, True
    model = build_model(
        dims, order=cfg["model.order"], m_features=int(cfg["model.M"]),
        interval=(float(cfg["model.interval_a"]), float(cfg["model.interval_b"])),
        feature_family=family, lengthscale=float(cfg["init.lengthscale"]),
        alpha=alpha, beta=beta,
        kernel_variance=float(cfg["init.kernel_variance"]),
        noise_variance=float(cfg["init.noise_variance"]),
        train_inputs=train_inputs, rff_seed=seed)
    model.freeze_ode = freeze
    return model


def _transforms_to_config(tr: Transforms) -> dict:
    fmt = lambda arr: " ".join(repr(float(v)) for v in np.ravel(arr))
    return {
        "transform.input_shift": fmt(tr.input_shift),
        "transform.input_scale": fmt(tr.input_scale),
        "transform.target_shift": repr(tr.target_shift),
        "transform.target_scale": repr(tr.target_scale),
    }


def _transforms_from_entries(entries: dict) -> Transforms:
    def arr(name):
        return np.array([float(t) for t in entries[name].split()])

    return Transforms(arr("config.transform.input_shift"),
                      arr("config.transform.input_scale"),
                      float(entries["config.transform.target_shift"]),
                      float(entries["config.transform.target_scale"]))


def cmd_fit(config_path: str, data_path: str, out_model_path: str,
            test_data_path=None, seed=None, sink=print) -> int:
    try:
        cfg = resolve_config(config_path)
        data = load_csv(data_path)
    except (ParseError, OSError) as exc:
        sink(f"error: {exc}")
        return 2
    if seed is not None:
        cfg["train.seed"] = str(int(seed))
    train_seed = int(cfg["train.seed"])

    test = None
    if test_data_path is not None:
        try:
            test = load_csv(test_data_path)
        except (ParseError, OSError) as exc:
            sink(f"error: {exc}")
            return 2
        train = data
    else:
        frac = float(cfg["data.test_fraction"])
        n_test = int(round(frac * data.n))
        if n_test > 0:
            rng = np.random.default_rng(int(cfg["data.seed"]))
            perm = rng.permutation(data.n)
            test_idx, train_idx = perm[:n_test], perm[n_test:]
            test = Dataset(data.inputs[test_idx], data.targets[test_idx],
                           column_names=data.column_names)
            train = Dataset(data.inputs[train_idx], data.targets[train_idx],
                            column_names=data.column_names)
        else:
            train = data

    try:
        transforms = fit_transforms(train)
        train_t = transforms.apply(train)
        test_pair = None
        if test is not None:
            test_t = transforms.apply(test)
            test_pair = (test_t.inputs, test.targets)  # metrics in original units
        model = _build_from_config(cfg, train_t.inputs, train_t.dim, train_seed)
    except DomainError as exc:
        sink(f"error: {exc}")
        return 2
    train_cfg = TrainConfig(
        learning_rate=float(cfg["train.learning_rate"]),
        epochs=int(cfg["train.epochs"]),
        batch_size=int(cfg["train.batch_size"]),
        seed=train_seed,
        beta_freeze_epochs=int(cfg["train.beta_freeze_epochs"]),
        init=InitConfig(float(cfg["init.lengthscale"]), float(cfg["init.alpha"]),
                        float(cfg["init.beta"]), float(cfg["init.kernel_variance"]),
                        float(cfg["init.noise_variance"]),
                        (float(cfg["model.interval_a"]), float(cfg["model.interval_b"]))))
    try:
        model, _ = fit(model, (train_t.inputs, train_t.targets), train_cfg,
                       progress_sink=sink, test_data=test_pair,
                       target_transform=(transforms.target_scale,
                                         transforms.target_shift))
    except NumericalError as exc:
        sink(f"error: training aborted: {exc}")
        return 3
    extra = dict(cfg)
    extra.update(_transforms_to_config(transforms))
    extra["data.input_dim"] = str(train_t.dim)
    extra["data.columns"] = " ".join(train.column_names or
                                     [f"x{j}" for j in range(train.dim)] )
    save_model(model, out_model_path, extra_config=extra)
    return 0


def _read_model_entries(path: str) -> dict:
    entries = {}
    with open(path, encoding="utf-8") as fh:
        for raw in fh:
            line = raw.strip()
            if not line or "=" not in line:
                continue
            key, _, value = line.partition("=")
            entries[key.strip()] = value.strip()
    return entries


def cmd_predict(model_path: str, data_path: str, out_csv: str,
                seed: int = 0, sink=print) -> int:
    try:
        model = load_model(model_path)
        entries = _read_model_entries(model_path)
        transforms = _transforms_from_entries(entries)
        names, mat = load_matrix(data_path)
    except (ParseError, OSError, KeyError) as exc:
        sink(f"error: {exc}")
        return 2
    dim = int(entries["config.data.input_dim"])
    if mat.shape[1] == dim:
        x, y = mat, None
    elif mat.shape[1] == dim + 1:
        x, y = mat[:, :-1], mat[:, -1]
    else:
        sink(f"error: data has {mat.shape[1]} columns; model expects "
             f"{dim} features (+ optional target)")
        return 4
    x_t = transforms.apply_inputs(x)
    pred = model.predict_mixture(x_t, rng=seed)
    pred = PredictiveDist(pred.means, pred.variances, pred.noise_variance,
                          y_scale=transforms.target_scale,
                          y_shift=transforms.target_shift)
    mean = pred.mixture_mean()
    std = np.sqrt(pred.mixture_variance())
    nmll_point = None if y is None else -pred.log_density(y)
    save_predictions(out_csv, x, names[:dim], mean, std, nmll_point)
    if y is not None:
        rmse, nmll = metrics(pred, y)
        sink(f"rmse={rmse!r} nmll={nmll!r}")
    return 0


def cmd_verify(suite: str, sink=print) -> int:
    if suite not in ("kernels", "vfrf", "gradients", "all"):
        sink(f"error: unknown suite {suite!r}")
        return 2
    rows = run_suite(suite)
    ok = True
    for name, err, tol, passed in rows:
        ok &= passed
        sink(f"formula={name} max_rel_err={err:.3g} pass={passed}")
    return 0 if ok else 1


def cmd_features(config_path: str, basis_index: int, t_min: float,
                 t_max: float, n: int, out_csv: str, sink=print) -> int:
    try:
        cfg = resolve_config(config_path)
    except (ParseError, OSError) as exc:
        sink(f"error: {exc}")
        return 2
    fs = FeatureSet(float(cfg["model.interval_a"]), float(cfg["model.interval_b"]),
                    int(cfg["model.M"]))
    if not (0 <= basis_index <= 2 * fs.count_m) or n < 1 or not t_min < t_max:
        sink(f"error: invalid basis index {basis_index} or grid")
        return 2
    kind = cfg["model.feature_kind"]
    alpha = 1.0 if kind == "vff" else float(cfg["init.alpha"])
    beta = VFF_PINNED_BETA if kind == "vff" else float(cfg["init.beta"])
    kernel = KernelSpec(cfg["model.order"], float(cfg["init.kernel_variance"]),
                        float(cfg["init.lengthscale"]))
    ctx = VfrfContext(kernel, OdeSpec(alpha, beta), fs)
    ts = np.linspace(t_min, t_max, n)
    vff = np.asarray(vff_eval(kernel, fs, basis_index, ts))
    vfrf = np.asarray(vfrf_eval(ctx, basis_index, ts))
    with open(out_csv, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "vff", "vfrf"])
        for row in zip(ts, vff, vfrf):
            writer.writerow([repr(float(v)) for v in row])
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="fourierlfm",
        description="Latent force models with variational Fourier response features")
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="train a model from a config and CSV data")
    p_fit.add_argument("--config", required=True)
    p_fit.add_argument("--data", required=True)
    p_fit.add_argument("--out", required=True)
    p_fit.add_argument("--test-data", default=None)
    p_fit.add_argument("--seed", type=int, default=None)

    p_pred = sub.add_parser("predict", help="predict with a saved model")
    p_pred.add_argument("--config", required=True, help="saved model file")
    p_pred.add_argument("--data", required=True)
    p_pred.add_argument("--out", required=True)
    p_pred.add_argument("--seed", type=int, default=0)

    p_ver = sub.add_parser("verify", help="run oracle-equivalence suites")
    p_ver.add_argument("--suite", default="all",
                       help="kernels | vfrf | gradients | all")

    p_feat = sub.add_parser("features", help="dump feature curves as CSV")
    p_feat.add_argument("--config", required=True)
    p_feat.add_argument("--basis", type=int, required=True)
    p_feat.add_argument("--range", default="-2.0:5.0",
                        help="t_min:t_max evaluation range")
    p_feat.add_argument("--n", type=int, default=200)
    p_feat.add_argument("--out", required=True)

    args = parser.parse_args(argv)
    if args.command == "fit":
        return cmd_fit(args.config, args.data, args.out,
                       test_data_path=args.test_data, seed=args.seed)
    if args.command == "predict":
        return cmd_predict(args.config, args.data, args.out, seed=args.seed)
    if args.command == "verify":
        return cmd_verify(args.suite)
    if args.command == "features":
        try:
            t_min, t_max = (float(tok) for tok in args.range.split(":"))
        except ValueError:
            print(f"error: bad --range {args.range!r}")
            return 2
        return cmd_features(args.config, args.basis, t_min, t_max, args.n, args.out)
    return 2


if __name__ == "__main__":
    sys.exit(main())
